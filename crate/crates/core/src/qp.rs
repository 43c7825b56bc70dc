//! Dense convex QP solver: operator splitting (ADMM) with Ruiz equilibration, adaptive
//! penalty, infeasibility certificates and an active-set polishing step.
//!
//! Solves `min 0.5 x'Px + q'x` subject to `A_eq x = b_eq` and `lo <= A_in x <= hi`
//! (bounds may be infinite).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl QpProblem {
    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            p,
            q,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            lo: DVector::zeros(0),
            hi: DVector::zeros(0),
        }
    }

    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_ineq(mut self, a: DMatrix<f64>, lo: DVector<f64>, hi: DVector<f64>) -> Self {
        self.a_in = a;
        self.lo = lo;
        self.hi = hi;
        self
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        let bad = |what: &str| Err(Error::Domain(format!("qp: {what}")));
        if self.p.shape() != (n, n) {
            return Err(Error::shape("qp P", &[self.p.nrows(), self.p.ncols()], &[n, n]));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(Error::shape("qp A_eq", &[self.a_eq.nrows(), self.a_eq.ncols()], &[self.b_eq.len(), n]));
        }
        let m = self.a_in.nrows();
        if self.a_in.ncols() != n || self.lo.len() != m || self.hi.len() != m {
            return Err(Error::shape("qp A_in", &[m, self.a_in.ncols()], &[self.lo.len(), n]));
        }
        if (&self.p - self.p.transpose()).amax() > 1e-10 {
            return bad("P is not symmetric");
        }
        if self.p.iter().chain(self.q.iter()).chain(self.a_eq.iter()).chain(self.b_eq.iter()).chain(self.a_in.iter()).any(|v| !v.is_finite()) {
            return bad("non-finite problem data");
        }
        if self.lo.iter().chain(self.hi.iter()).any(|v| v.is_nan()) || self.lo.iter().zip(self.hi.iter()).any(|(l, h)| l > h) {
            return bad("inconsistent inequality bounds");
        }
        // PSD check by factorization, retried with a small diagonal shift for
        // semidefinite matrices.
        if n > 0 && Cholesky::new(self.p.clone()).is_none() {
            let shift = 1e-9 * (1.0 + self.p.amax());
            let shifted = &self.p + DMatrix::identity(n, n) * shift;
            if Cholesky::new(shifted).is_none() {
                return bad("P is not positive semidefinite");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
    /// Dual infeasible: the objective is unbounded below on the feasible set.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of the equality rows.
    pub y_eq: DVector<f64>,
    /// Multipliers of the inequality rows (negative on active lower bounds).
    pub y_in: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub complementarity: f64,
    pub iterations: usize,
    pub polished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub scaling_passes: usize,
    pub check_every: usize,
    pub infeasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_passes: 10,
            check_every: 25,
            infeasibility_tol: 1e-6,
        }
    }
}

/// Optional starting point.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub x: Option<DVector<f64>>,
    /// Multipliers for the stacked `[A_eq; A_in]` rows.
    pub y: Option<DVector<f64>>,
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const EQ_RHO_FACTOR: f64 = 1e3;

/// Stacked form `l <= A x <= u` of a validated problem.
struct Stacked {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    n_eq: usize,
}

impl Stacked {
    fn from(prob: &QpProblem) -> Self {
        let n = prob.dim();
        let (me, mi) = (prob.a_eq.nrows(), prob.a_in.nrows());
        let mut a = DMatrix::zeros(me + mi, n);
        a.rows_mut(0, me).copy_from(&prob.a_eq);
        a.rows_mut(me, mi).copy_from(&prob.a_in);
        let l = DVector::from_iterator(me + mi, prob.b_eq.iter().chain(prob.lo.iter()).copied());
        let u = DVector::from_iterator(me + mi, prob.b_eq.iter().chain(prob.hi.iter()).copied());
        Self {
            p: prob.p.clone(),
            q: prob.q.clone(),
            a,
            l,
            u,
            n_eq: me,
        }
    }

    fn is_eq(&self, i: usize) -> bool {
        i < self.n_eq || self.l[i] == self.u[i]
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn project(v: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().zip(l.iter().zip(u.iter())).map(|(x, (lo, hi))| x.clamp(*lo, *hi)))
}

/// Ruiz equilibration of the KKT matrix plus a cost scale.
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn ruiz(s: &mut Stacked, passes: usize) -> Scaling {
    let n = s.q.len();
    let m = s.l.len();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let clamp = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..passes {
        let mut dn = DVector::zeros(n);
        for j in 0..n {
            let pcol = s.p.column(j).amax();
            let acol = if m > 0 { s.a.column(j).amax() } else { 0.0 };
            dn[j] = 1.0 / clamp(pcol.max(acol)).sqrt();
        }
        let mut en = DVector::zeros(m);
        for i in 0..m {
            en[i] = 1.0 / clamp(s.a.row(i).amax()).sqrt();
        }
        for j in 0..n {
            for i in 0..n {
                s.p[(i, j)] *= dn[i] * dn[j];
            }
            for i in 0..m {
                s.a[(i, j)] *= en[i] * dn[j];
            }
        }
        s.q.component_mul_assign(&dn);
        d.component_mul_assign(&dn);
        e.component_mul_assign(&en);
    }
    let mean_col = if n > 0 {
        (0..n).map(|j| s.p.column(j).amax()).sum::<f64>() / n as f64
    } else {
        0.0
    };
    let c = 1.0 / clamp(mean_col.max(inf_norm(&s.q)));
    s.p *= c;
    s.q *= c;
    s.l.component_mul_assign(&e);
    s.u.component_mul_assign(&e);
    Scaling { d, e, c }
}

/// KKT residuals of `(x, y)` for the unscaled stacked problem.
fn residuals(s: &Stacked, x: &DVector<f64>, y: &DVector<f64>) -> (f64, f64, f64) {
    let ax = &s.a * x;
    let prim = inf_norm(&(&ax - project(&ax, &s.l, &s.u)));
    let dual = inf_norm(&(&s.p * x + &s.q + s.a.transpose() * y));
    let mut comp: f64 = 0.0;
    for i in 0..y.len() {
        if s.is_eq(i) {
            continue;
        }
        // A multiplier pressing on an infinite bound must vanish.
        let gap = if y[i] > 0.0 {
            (s.u[i] - ax[i]).abs()
        } else {
            (ax[i] - s.l[i]).abs()
        };
        comp = comp.max(if gap.is_finite() { y[i].abs() * gap } else { y[i].abs() });
    }
    (prim, dual, comp)
}

fn factor(p: &DMatrix<f64>, a: &DMatrix<f64>, rho: &DVector<f64>, sigma: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = p.nrows();
    let mut k = p + DMatrix::identity(n, n) * sigma;
    if a.nrows() > 0 {
        let mut ra = a.clone();
        for (i, mut row) in ra.row_iter_mut().enumerate() {
            row *= rho[i];
        }
        k += a.transpose() * ra;
    }
    Cholesky::new(k).ok_or_else(|| Error::Domain("qp: reduced KKT matrix is not positive definite".into()))
}

fn rho_vector(s: &Stacked, rho: f64) -> DVector<f64> {
    DVector::from_iterator(s.l.len(), (0..s.l.len()).map(|i| {
        if s.is_eq(i) {
            rho * EQ_RHO_FACTOR
        } else if s.l[i].is_infinite() && s.u[i].is_infinite() {
            RHO_MIN
        } else {
            rho
        }
    }))
}

/// Solves the equality-constrained problem on the active set guessed from `(z, y)`.
fn polish(s: &Stacked, z: &DVector<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = s.q.len();
    let m = s.l.len();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..m {
        if s.is_eq(i) {
            rows.push(i);
            rhs.push(s.l[i]);
        } else if z[i] - s.l[i] < -y[i] {
            rows.push(i);
            rhs.push(s.l[i]);
        } else if s.u[i] - z[i] < y[i] {
            rows.push(i);
            rhs.push(s.u[i]);
        }
    }
    let k = rows.len();
    let delta = 1e-10;
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&s.p);
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = s.a[(i, j)];
            kkt[(j, n + r)] = s.a[(i, j)];
        }
    }
    let mut reg = kkt.clone();
    for j in 0..n {
        reg[(j, j)] += delta;
    }
    for r in 0..k {
        reg[(n + r, n + r)] -= delta;
    }
    let lu = reg.lu();
    let b = DVector::from_iterator(n + k, (-&s.q).iter().copied().chain(rhs));
    let mut sol = lu.solve(&b)?;
    for _ in 0..5 {
        let r = &b - &kkt * &sol;
        sol += lu.solve(&r)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut y_full = DVector::zeros(m);
    for (r, &i) in rows.iter().enumerate() {
        y_full[i] = sol[n + r];
    }
    Some((x, y_full))
}

/// Sign-consistent multipliers: an active lower bound needs `y <= 0`, an upper `y >= 0`.
fn multipliers_valid(s: &Stacked, x: &DVector<f64>, y: &DVector<f64>, tol: f64) -> bool {
    let ax = &s.a * x;
    (0..y.len()).all(|i| {
        if s.is_eq(i) {
            return true;
        }
        let at_lo = (ax[i] - s.l[i]).abs() <= tol;
        let at_hi = (s.u[i] - ax[i]).abs() <= tol;
        (y[i] >= -tol || at_lo) && (y[i] <= tol || at_hi)
    })
}

pub fn solve(prob: &QpProblem, settings: &QpSettings, warm: Option<&WarmStart>) -> Result<QpSolution> {
    prob.validate()?;
    let orig = Stacked::from(prob);
    let n = prob.dim();
    let m = orig.l.len();
    let tol = settings.tol;

    let mut s = Stacked::from(prob);
    let sc = ruiz(&mut s, settings.scaling_passes);

    // Iterates in scaled space.
    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(m);
    if let Some(w) = warm {
        if let Some(wx) = w.x.as_ref().filter(|v| v.len() == n) {
            x = wx.component_div(&sc.d);
        }
        if let Some(wy) = w.y.as_ref().filter(|v| v.len() == m) {
            y = wy.component_div(&sc.e) * sc.c;
        }
    }
    let mut z = project(&(&s.a * &x), &s.l, &s.u);

    let mut rho_scalar = settings.rho;
    let mut rho = rho_vector(&s, rho_scalar);
    let mut chol = factor(&s.p, &s.a, &rho, settings.sigma)?;

    let unscale_x = |xs: &DVector<f64>| xs.component_mul(&sc.d);
    let unscale_y = |ys: &DVector<f64>| ys.component_mul(&sc.e) / sc.c;

    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    let mut next_polish = 1e-2;
    let at = s.a.transpose();

    let finish = |x: DVector<f64>, y: DVector<f64>, status: QpStatus, iterations: usize, polished: bool| -> QpSolution {
        let (pr, du, co) = residuals(&orig, &x, &y);
        QpSolution {
            objective: prob.objective(&x),
            y_eq: y.rows(0, orig.n_eq).into_owned(),
            y_in: y.rows(orig.n_eq, m - orig.n_eq).into_owned(),
            x,
            status,
            primal_residual: pr,
            dual_residual: du,
            complementarity: co,
            iterations,
            polished,
        }
    };

    for iter in 1..=settings.max_iter {
        let x_prev = x.clone();
        let y_prev = y.clone();
        let rhs = &x * settings.sigma - &s.q + &at * (rho.component_mul(&z) - &y);
        let x_tilde = chol.solve(&rhs);
        let z_tilde = &s.a * &x_tilde;
        x = &x_tilde * settings.alpha + &x_prev * (1.0 - settings.alpha);
        let z_relaxed = &z_tilde * settings.alpha + &z * (1.0 - settings.alpha);
        let z_new = project(&(&z_relaxed + y.component_div(&rho)), &s.l, &s.u);
        y += rho.component_mul(&(&z_relaxed - &z_new));
        z = z_new;

        if iter % settings.check_every != 0 && iter != settings.max_iter {
            continue;
        }
        let xu = unscale_x(&x);
        let yu = unscale_y(&y);
        let (pr, du, co) = residuals(&orig, &xu, &yu);
        let score = pr.max(du).max(co);
        if !score.is_finite() {
            return Err(Error::Domain("qp: iterates diverged".into()));
        }
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, xu.clone(), yu.clone()));
        }
        if score < tol {
            return Ok(finish(xu, yu, QpStatus::Optimal, iter, false));
        }
        if score < next_polish || iter == settings.max_iter {
            next_polish = score * 0.1;
            let zu = z.component_div(&sc.e);
            if let Some((px, py)) = polish(&orig, &zu, &yu) {
                let (ppr, pdu, pco) = residuals(&orig, &px, &py);
                if ppr.max(pdu).max(pco) < tol && multipliers_valid(&orig, &px, &py, tol) {
                    return Ok(finish(px, py, QpStatus::Optimal, iter, true));
                }
            }
        }

        // Infeasibility certificates from successive differences.
        let eps = settings.infeasibility_tol;
        let mut dy = unscale_y(&(&y - &y_prev));
        for i in 0..m {
            if orig.u[i] == f64::INFINITY && dy[i] > 0.0 {
                dy[i] = 0.0;
            }
            if orig.l[i] == f64::NEG_INFINITY && dy[i] < 0.0 {
                dy[i] = 0.0;
            }
        }
        let ndy = inf_norm(&dy);
        if ndy > 1e-12 {
            let support: f64 = (0..m)
                .map(|i| {
                    if dy[i] > 0.0 {
                        orig.u[i] * dy[i]
                    } else if dy[i] < 0.0 {
                        orig.l[i] * dy[i]
                    } else {
                        0.0
                    }
                })
                .sum();
            if inf_norm(&(orig.a.transpose() * &dy)) <= eps * ndy && support < -eps * ndy {
                return Ok(finish(xu, yu, QpStatus::Infeasible, iter, false));
            }
        }
        let dx = unscale_x(&(&x - &x_prev));
        let ndx = inf_norm(&dx);
        if ndx > 1e-12 {
            let adx = &orig.a * &dx;
            let cone_ok = (0..m).all(|i| {
                let (lo_inf, hi_inf) = (orig.l[i].is_infinite(), orig.u[i].is_infinite());
                match (lo_inf, hi_inf) {
                    (true, true) => true,
                    (false, true) => adx[i] >= -eps * ndx,
                    (true, false) => adx[i] <= eps * ndx,
                    (false, false) => adx[i].abs() <= eps * ndx,
                }
            });
            if cone_ok && inf_norm(&(&orig.p * &dx)) <= eps * ndx && orig.q.dot(&dx) < -eps * ndx {
                return Ok(finish(xu, yu, QpStatus::Unbounded, iter, false));
            }
        }

        // Penalty adaptation balancing scaled primal and dual residuals.
        let ax = &s.a * &x;
        let px = &s.p * &x;
        let aty = &at * &y;
        let prim_s = inf_norm(&(&ax - &z)) / inf_norm(&ax).max(inf_norm(&z)).max(1e-12);
        let dual_s = inf_norm(&(&px + &s.q + &aty)) / inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&s.q)).max(1e-12);
        if m > 0 && prim_s > 0.0 && dual_s > 0.0 {
            let new_rho = (rho_scalar * (prim_s / dual_s).sqrt()).clamp(RHO_MIN, RHO_MAX);
            if new_rho > 5.0 * rho_scalar || new_rho < 0.2 * rho_scalar {
                rho_scalar = new_rho;
                rho = rho_vector(&s, rho_scalar);
                chol = factor(&s.p, &s.a, &rho, settings.sigma)?;
            }
        }
    }
    let (_, bx, by) = best.expect("at least one residual check");
    Ok(finish(bx, by, QpStatus::MaxIter, settings.max_iter, false))
}

#[cfg(test)]
mod tests;
