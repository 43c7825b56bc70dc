//! Socially-aware MPC: tracking cost, the joint interaction dynamics as an equality
//! constraint, Big-M separation rows with pre-assigned binaries, and box limits.
//!
//! The QP is solved in condensed form: the dynamics fix `X = G u + h`, so the cost and
//! every row over `[X; u]` are rewritten over `u` alone and `X` is recovered by forward
//! substitution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dynamics::{assemble_step, stack_ego_controls, stack_horizon, stack_surr_controls, unstack_ego_controls, AffineStates, LearnedBlocks, StackedDynamics};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::model::Model;
use crate::qp::{self, QpProblem, QpSettings, QpStatus, WarmStart};
use crate::types::{ControlInput, SystemState, CONTROL_DIM, STATE_DIM};

const S: usize = 0;
const V: usize = 1;
const Y: usize = 2;
const PSI: usize = 3;

/// Largest `vehicles x steps` binary count the enumeration fallback will attempt.
pub const ENUMERATION_LIMIT: usize = 12;

/// Ego-only tracking weights; every surrounding block is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Over (s, v, y, psi).
    pub q: [f64; STATE_DIM],
    /// Over (a, delta_f).
    pub r: [f64; CONTROL_DIM],
    /// Desired (s, v, y, psi).
    pub x_des: [f64; STATE_DIM],
}

impl CostWeights {
    pub fn from_config(cfg: &Config, x_des: [f64; STATE_DIM]) -> Self {
        Self {
            q: [cfg.theta_1, cfg.theta_2, cfg.theta_4, cfg.theta_5],
            r: [cfg.theta_3, cfg.theta_6],
            x_des,
        }
    }
}

/// `(P, q)` over `[X; u_ego]` with `X` the `(N+1)` stacked system states: `Q` on blocks
/// `0..N`, no terminal weight, `R` on every control step.
pub fn build_cost(w: &CostWeights, horizon: usize, n_vehicles: usize) -> (DMatrix<f64>, DVector<f64>) {
    let sd = STATE_DIM * n_vehicles;
    let nx = sd * (horizon + 1);
    let n = nx + CONTROL_DIM * horizon;
    let mut p = DMatrix::zeros(n, n);
    let mut q = DVector::zeros(n);
    for k in 0..horizon {
        for i in 0..STATE_DIM {
            p[(k * sd + i, k * sd + i)] = w.q[i];
            q[k * sd + i] = -w.q[i] * w.x_des[i];
        }
        for j in 0..CONTROL_DIM {
            p[(nx + CONTROL_DIM * k + j, nx + CONTROL_DIM * k + j)] = w.r[j];
        }
    }
    (p, q)
}

/// Constant that turns `0.5 z'Pz + q'z` into the full tracking cost.
pub fn cost_offset(w: &CostWeights, horizon: usize) -> f64 {
    0.5 * horizon as f64 * (0..STATE_DIM).map(|i| w.q[i] * w.x_des[i] * w.x_des[i]).sum::<f64>()
}

/// `Aeq [X; u] = beq` with `Aeq = [A_bar + C_bar - I, B_ego_bar]` and
/// `beq = -(B_surr_bar u_surr + D_bar)`.
pub fn build_social_constraint(sd: &StackedDynamics, u_surr: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let nx = sd.x_len();
    let nu = sd.u_ego_len();
    let mut a = DMatrix::zeros(nx, nx + nu);
    let mut ac = sd.a_bar.to_dense() + sd.c_bar.to_dense();
    for i in 0..nx {
        ac[(i, i)] -= 1.0;
    }
    a.columns_mut(0, nx).copy_from(&ac);
    a.columns_mut(nx, nu).copy_from(&sd.b_ego_bar.to_dense());
    let b = -(sd.b_surr_bar.mul_vec(u_surr) + &sd.d_bar);
    (a, b)
}

/// One linear row `lo <= sum x_coef * X[i] + sum u_coef * u[j] <= hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub x: Vec<(usize, f64)>,
    pub u: Vec<(usize, f64)>,
    pub lo: f64,
    pub hi: f64,
}

impl LinearRow {
    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.x.iter().map(|(i, c)| c * x[*i]).sum::<f64>() + self.u.iter().map(|(j, c)| c * u[*j]).sum::<f64>()
    }
}

/// Big-M separation requirement `sign * (z_sv - z_ego) >= bound` on `z = s` or `z = y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub vehicle: usize,
    pub step: usize,
    pub longitudinal: bool,
    pub sign: f64,
    pub bound: f64,
    /// False when the Big-M slack deactivates the row.
    pub active: bool,
}

impl SeparationRow {
    pub fn margin(&self, states: &[SystemState]) -> f64 {
        let x = &states[self.step];
        let (ego, sv) = (x.ego, x.vehicle(self.vehicle).expect("present vehicle"));
        let d = if self.longitudinal { sv.s - ego.s } else { sv.y - ego.y };
        self.sign * d - self.bound
    }

    fn row(&self, n_vehicles: usize) -> LinearRow {
        let sd = STATE_DIM * n_vehicles;
        let off = if self.longitudinal { S } else { Y };
        let base = self.step * sd;
        LinearRow {
            x: vec![(base + STATE_DIM * self.vehicle + off, self.sign), (base + off, -self.sign)],
            u: vec![],
            lo: self.bound,
            hi: f64::INFINITY,
        }
    }
}

/// Binary per surrounding slot and step `1..=N`: `false` enforces longitudinal
/// separation, `true` lateral. Absent slots get an empty list.
pub type Binaries = Vec<Vec<bool>>;

/// Picks the separation mode whose nominal margin ratio is larger.
pub fn fix_collision_binaries(nominal: &[SystemState], s_ref: f64, y_ref: f64) -> Binaries {
    let n = nominal.len() - 1;
    let nv = nominal[0].n_vehicles();
    (1..nv)
        .map(|i| {
            if nominal[0].vehicle(i).is_none() {
                return vec![];
            }
            (1..=n)
                .map(|j| {
                    let (e, v) = (nominal[j].ego, nominal[j].vehicle(i).unwrap());
                    (v.s - e.s).abs() / s_ref < (v.y - e.y).abs() / y_ref
                })
                .collect()
        })
        .collect()
}

fn sign_or(d: f64, fallback: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else if fallback < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Both Table-style rows for every present pair and step, signs from the nominal
/// relative position (falling back to the current one when the nominal is exactly zero).
pub fn build_collision_constraints(binaries: &Binaries, nominal: &[SystemState], cfg: &Config) -> Vec<SeparationRow> {
    let mut rows = Vec::new();
    for (slot, bins) in binaries.iter().enumerate() {
        let i = slot + 1;
        for (k, &c) in bins.iter().enumerate() {
            let j = k + 1;
            let (e, v) = (nominal[j].ego, nominal[j].vehicle(i).expect("present vehicle"));
            let (e0, v0) = (nominal[0].ego, nominal[0].vehicle(i).unwrap());
            let c = if c { 1.0 } else { 0.0 };
            rows.push(SeparationRow {
                vehicle: i,
                step: j,
                longitudinal: true,
                sign: sign_or(v.s - e.s, v0.s - e0.s),
                bound: cfg.s_ref - cfg.big_m * c,
                active: c == 0.0,
            });
            rows.push(SeparationRow {
                vehicle: i,
                step: j,
                longitudinal: false,
                sign: sign_or(v.y - e.y, v0.y - e0.y),
                bound: cfg.y_ref - cfg.big_m * (1.0 - c),
                active: c == 1.0,
            });
        }
    }
    rows
}

/// Ego speed and heading on steps `1..=N`, acceleration and steering on every step.
pub fn build_box_constraints(cfg: &Config, horizon: usize, n_vehicles: usize) -> Vec<LinearRow> {
    let sd = STATE_DIM * n_vehicles;
    let mut rows = Vec::new();
    for k in 1..=horizon {
        rows.push(LinearRow {
            x: vec![(k * sd + V, 1.0)],
            u: vec![],
            lo: cfg.v_min,
            hi: cfg.v_max,
        });
        rows.push(LinearRow {
            x: vec![(k * sd + PSI, 1.0)],
            u: vec![],
            lo: -cfg.psi_max,
            hi: cfg.psi_max,
        });
    }
    for k in 0..horizon {
        rows.push(LinearRow {
            x: vec![],
            u: vec![(CONTROL_DIM * k, 1.0)],
            lo: cfg.a_min,
            hi: cfg.a_max,
        });
        rows.push(LinearRow {
            x: vec![],
            u: vec![(CONTROL_DIM * k + 1, 1.0)],
            lo: -cfg.steer_max,
            hi: cfg.steer_max,
        });
    }
    rows
}

/// Source of interaction blocks and surrounding reactions for a given ego plan.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    /// No learned coupling; surrounding vehicles hold speed and heading.
    Physics,
    Learned(&'a Model),
}

type Reactions = Vec<Vec<Option<ControlInput>>>;

impl Predictor<'_> {
    pub fn predict(&self, obs: &Frame, plan: &[ControlInput]) -> Result<(Vec<LearnedBlocks>, Reactions)> {
        match self {
            Predictor::Physics => Ok((vec![LearnedBlocks::zero(); plan.len()], vec![vec![None; obs.n_surr()]; plan.len()])),
            Predictor::Learned(m) => {
                let p = m.predict(obs, plan)?;
                Ok((p.blocks, p.u_surr))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Optimal,
    /// The QP had no acceptable solution; the plan is full braking with zero steering.
    Degraded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub u_ego: Vec<ControlInput>,
    /// Joint prediction, element 0 is the measured current state.
    pub x_pred: Vec<SystemState>,
    pub u_surr: Reactions,
    /// Ego plan the reactions and interaction blocks were queried with.
    pub nominal_u: Vec<ControlInput>,
    /// Full tracking cost of the returned plan.
    pub objective: f64,
    pub status: PlanStatus,
    pub qp_status: QpStatus,
    pub binaries: Binaries,
    /// Active separation rows the plan was solved against.
    pub separation: Vec<SeparationRow>,
    /// Max-norm residual of the stacked dynamics at `(X_pred, u_ego, u_surr)`.
    pub dynamics_residual: f64,
    pub qp_iterations: usize,
    pub used_enumeration: bool,
}

impl PlanResult {
    pub fn first_control(&self) -> ControlInput {
        self.u_ego[0]
    }

    /// Smallest margin over the active separation rows (`+inf` when there are none).
    pub fn min_separation_margin(&self) -> f64 {
        self.separation.iter().map(|r| r.margin(&self.x_pred)).fold(f64::INFINITY, f64::min)
    }

    pub fn to_record(&self) -> PlanRecord {
        PlanRecord {
            u_ego: self.u_ego.iter().map(|u| u.to_array()).collect(),
            x_pred: self.x_pred.iter().map(|x| x.flatten()).collect(),
            objective: self.objective,
            status: self.status,
            qp_status: self.qp_status,
            binaries: self.binaries.iter().map(|b| b.iter().map(|&c| c as u8).collect()).collect(),
        }
    }
}

/// JSON form of one planning cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub u_ego: Vec<[f64; 2]>,
    pub x_pred: Vec<Vec<f64>>,
    pub objective: f64,
    pub status: PlanStatus,
    pub qp_status: QpStatus,
    pub binaries: Vec<Vec<u8>>,
}

/// Condensed QP over `u` for fixed dynamics, reactions and rows.
pub struct CondensedProblem {
    pub affine: AffineStates,
    pub qp: QpProblem,
    /// Cost constant so that `qp.objective(u) + offset` is the full cost.
    pub offset: f64,
}

pub fn condense(w: &CostWeights, affine: AffineStates, rows: &[LinearRow], horizon: usize, n_vehicles: usize) -> CondensedProblem {
    let sd = STATE_DIM * n_vehicles;
    let nu = CONTROL_DIM * horizon;
    let g = &affine.g;
    let h = &affine.h;
    let mut p = DMatrix::zeros(nu, nu);
    let mut q = DVector::zeros(nu);
    let mut offset = 0.0;
    for k in 0..horizon {
        for (i, &qi) in w.q.iter().enumerate() {
            if qi == 0.0 {
                continue;
            }
            let idx = k * sd + i;
            let gr = g.row(idx);
            let e = h[idx] - w.x_des[i];
            p.ger(qi, &gr.transpose(), &gr.transpose(), 1.0);
            q.axpy(qi * e, &gr.transpose(), 1.0);
            offset += 0.5 * qi * e * e;
        }
        for (j, &rj) in w.r.iter().enumerate() {
            p[(CONTROL_DIM * k + j, CONTROL_DIM * k + j)] += rj;
        }
    }
    let p = (&p + p.transpose()) * 0.5;
    let mut a = DMatrix::zeros(rows.len(), nu);
    let mut lo = DVector::zeros(rows.len());
    let mut hi = DVector::zeros(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let mut shift = 0.0;
        for &(i, c) in &row.x {
            let mut ar = a.row_mut(r);
            ar += g.row(i) * c;
            shift += c * h[i];
        }
        for &(j, c) in &row.u {
            a[(r, j)] += c;
        }
        lo[r] = row.lo - shift;
        hi[r] = row.hi - shift;
    }
    CondensedProblem {
        affine,
        qp: QpProblem::unconstrained(p, q).with_ineq(a, lo, hi),
        offset,
    }
}

/// Everything that stays fixed while the binaries vary.
struct Stage {
    nominal_u: Vec<ControlInput>,
    sd: StackedDynamics,
    u_surr: Reactions,
    u_surr_vec: DVector<f64>,
    affine: AffineStates,
}

fn stage(obs: &Frame, predictor: &Predictor, cfg: &Config, nominal_u: &[ControlInput]) -> Result<Stage> {
    let (blocks, u_surr) = predictor.predict(obs, nominal_u)?;
    let x_t = obs.current_state();
    let params = obs.params();
    let seq = blocks.iter().map(|b| assemble_step(&x_t, &params, b)).collect::<Result<Vec<_>>>()?;
    let sd = stack_horizon(&seq, &x_t, &obs.previous_state(), cfg.dt);
    let u_surr_vec = stack_surr_controls(&u_surr);
    let affine = sd.affine_states(&u_surr_vec);
    Ok(Stage {
        nominal_u: nominal_u.to_vec(),
        sd,
        u_surr,
        u_surr_vec,
        affine,
    })
}

struct Solved {
    u: DVector<f64>,
    objective: f64,
    status: QpStatus,
    iterations: usize,
}

fn solve_with(st: &Stage, w: &CostWeights, cfg: &Config, rows: &[LinearRow], warm: Option<&DVector<f64>>) -> Result<Solved> {
    let nv = st.sd.mask.len();
    let cp = condense(w, st.affine.clone(), rows, st.sd.horizon, nv);
    let settings = QpSettings {
        tol: cfg.qp_tol,
        max_iter: cfg.qp_max_iter,
        ..QpSettings::default()
    };
    let ws = warm.map(|x| WarmStart { x: Some(x.clone()), y: None });
    let sol = qp::solve(&cp.qp, &settings, ws.as_ref())?;
    Ok(Solved {
        objective: sol.objective + cp.offset,
        u: sol.x,
        status: sol.status,
        iterations: sol.iterations,
    })
}

fn rows_for(binaries: &Binaries, nominal: &[SystemState], cfg: &Config, boxes: &[LinearRow]) -> (Vec<SeparationRow>, Vec<LinearRow>) {
    let nv = nominal[0].n_vehicles();
    let sep: Vec<SeparationRow> = build_collision_constraints(binaries, nominal, cfg).into_iter().filter(|r| r.active).collect();
    let mut rows: Vec<LinearRow> = sep.iter().map(|r| r.row(nv)).collect();
    rows.extend_from_slice(boxes);
    (sep, rows)
}

fn all_assignments(template: &Binaries) -> Vec<Binaries> {
    let count: usize = template.iter().map(Vec::len).sum();
    (0..1usize << count)
        .map(|bits| {
            let mut k = 0;
            template
                .iter()
                .map(|b| {
                    b.iter()
                        .map(|_| {
                            let v = bits >> k & 1 == 1;
                            k += 1;
                            v
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Result of solving one fixed binary assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentOutcome {
    pub binaries: Binaries,
    pub status: QpStatus,
    pub objective: f64,
}

/// Solves every binary assignment for the staged problem. Used by the fallback and as a
/// test oracle; refuses instances above [`ENUMERATION_LIMIT`].
pub fn enumerate_assignments(obs: &Frame, predictor: &Predictor, cfg: &Config, w: &CostWeights, nominal_u: &[ControlInput]) -> Result<Vec<AssignmentOutcome>> {
    let st = stage(obs, predictor, cfg, nominal_u)?;
    let nominal = st.sd.unstack(&(&st.affine.g * stack_ego_controls(nominal_u) + &st.affine.h));
    let template = fix_collision_binaries(&nominal, cfg.s_ref, cfg.y_ref);
    enumerate_staged(&st, &template, &nominal, cfg, w)
}

fn enumerate_staged(st: &Stage, template: &Binaries, nominal: &[SystemState], cfg: &Config, w: &CostWeights) -> Result<Vec<AssignmentOutcome>> {
    let count: usize = template.iter().map(Vec::len).sum();
    if count > ENUMERATION_LIMIT {
        return Err(Error::Domain(format!("{count} binaries exceed the enumeration limit {ENUMERATION_LIMIT}")));
    }
    let boxes = build_box_constraints(cfg, st.sd.horizon, st.sd.mask.len());
    all_assignments(template)
        .into_iter()
        .map(|b| {
            let (_, rows) = rows_for(&b, nominal, cfg, &boxes);
            let s = solve_with(st, w, cfg, &rows, None)?;
            Ok(AssignmentOutcome {
                binaries: b,
                status: s.status,
                objective: s.objective,
            })
        })
        .collect()
}

fn shifted(prev: &[ControlInput], n: usize) -> Vec<ControlInput> {
    let mut u: Vec<ControlInput> = prev.iter().skip(1).copied().collect();
    let last = u.last().copied().unwrap_or(ControlInput::ZERO);
    u.resize(n, last);
    u
}

/// One planning call. `warm` is the previous cycle's result, shifted by one step to
/// seed the nominal plan; without it the nominal is zero control.
pub fn plan(obs: &Frame, predictor: &Predictor, cfg: &Config, w: &CostWeights, warm: Option<&PlanResult>) -> Result<PlanResult> {
    let n = cfg.horizon;
    if let Predictor::Learned(m) = predictor {
        if m.config().horizon != n {
            return Err(Error::Config(format!("model horizon {} differs from planner horizon {n}", m.config().horizon)));
        }
    }
    let nv = obs.vehicles.len();
    let boxes = build_box_constraints(cfg, n, nv);
    let mut nominal_u = match warm {
        Some(prev) => shifted(&prev.u_ego, n),
        None => vec![ControlInput::ZERO; n],
    };
    let mut warm_x = warm.map(|_| stack_ego_controls(&nominal_u));

    let cold = vec![ControlInput::ZERO; n];
    let passes = 1 + cfg.relinearize_passes;
    let mut last: Option<PassResult> = None;
    for pass in 0..passes {
        let mut attempt = solve_pass(obs, predictor, cfg, w, &boxes, &nominal_u, warm_x.as_ref())?;
        // A stale warm start can pin binaries that no control satisfies; retry from the
        // zero-control nominal before giving up on this cycle.
        if attempt.1.status != QpStatus::Optimal && pass == 0 && warm.is_some() {
            attempt = solve_pass(obs, predictor, cfg, w, &boxes, &cold, None)?;
        }
        let (st, solved, chosen, used_enumeration) = attempt;
        if solved.status != QpStatus::Optimal {
            // Later passes only refine; keep the last optimal one.
            if last.is_some() {
                break;
            }
            log::warn!("planner degraded: qp status {:?}", solved.status);
            return degraded(obs, cfg, w, &st, chosen.0, solved.status, solved.iterations);
        }
        nominal_u = unstack_ego_controls(&solved.u);
        warm_x = Some(solved.u.clone());
        last = Some((st, solved, chosen, used_enumeration));
    }
    let (st, solved, (binaries, separation), used_enumeration) = last.expect("at least one optimal pass");
    Ok(finish(&st, w, solved.u, PlanStatus::Optimal, solved.status, binaries, separation, solved.iterations, used_enumeration, obs))
}

type PassResult = (Stage, Solved, (Binaries, Vec<SeparationRow>), bool);

/// Stage at `nominal_u`, fix binaries on the nominal prediction, solve, and fall back to
/// enumeration for small infeasible instances.
fn solve_pass(
    obs: &Frame,
    predictor: &Predictor,
    cfg: &Config,
    w: &CostWeights,
    boxes: &[LinearRow],
    nominal_u: &[ControlInput],
    warm_x: Option<&DVector<f64>>,
) -> Result<PassResult> {
    let st = stage(obs, predictor, cfg, nominal_u)?;
    let nominal = st.sd.unstack(&(&st.affine.g * stack_ego_controls(nominal_u) + &st.affine.h));
    let binaries = fix_collision_binaries(&nominal, cfg.s_ref, cfg.y_ref);
    let (sep, rows) = rows_for(&binaries, &nominal, cfg, boxes);
    let mut solved = solve_with(&st, w, cfg, &rows, warm_x)?;
    let mut chosen = (binaries.clone(), sep);
    let mut used_enumeration = false;
    if solved.status != QpStatus::Optimal && binaries.iter().map(Vec::len).sum::<usize>() <= ENUMERATION_LIMIT {
        let outcomes = enumerate_staged(&st, &binaries, &nominal, cfg, w)?;
        let best = outcomes
            .into_iter()
            .filter(|o| o.status == QpStatus::Optimal)
            .min_by(|a, b| a.objective.total_cmp(&b.objective));
        if let Some(best) = best {
            let (sep, rows) = rows_for(&best.binaries, &nominal, cfg, boxes);
            solved = solve_with(&st, w, cfg, &rows, None)?;
            chosen = (best.binaries, sep);
            used_enumeration = true;
        }
    }
    Ok((st, solved, chosen, used_enumeration))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    st: &Stage,
    w: &CostWeights,
    u: DVector<f64>,
    status: PlanStatus,
    qp_status: QpStatus,
    binaries: Binaries,
    separation: Vec<SeparationRow>,
    qp_iterations: usize,
    used_enumeration: bool,
    obs: &Frame,
) -> PlanResult {
    let x = st.sd.solve(&u, &st.u_surr_vec);
    let dynamics_residual = st.sd.residual(&x, &u, &st.u_surr_vec).amax();
    let x_pred = st.sd.unstack(&x);
    debug_assert_eq!(x_pred[0], obs.current_state());
    let objective = plan_cost(w, &x_pred, &unstack_ego_controls(&u));
    PlanResult {
        u_ego: unstack_ego_controls(&u),
        x_pred,
        u_surr: st.u_surr.clone(),
        nominal_u: st.nominal_u.clone(),
        objective,
        status,
        qp_status,
        binaries,
        separation,
        dynamics_residual,
        qp_iterations,
        used_enumeration,
    }
}

fn degraded(obs: &Frame, cfg: &Config, w: &CostWeights, st: &Stage, binaries: Binaries, qp_status: QpStatus, iters: usize) -> Result<PlanResult> {
    let u = stack_ego_controls(&vec![ControlInput::new(cfg.a_min, 0.0); cfg.horizon]);
    Ok(finish(st, w, u, PlanStatus::Degraded, qp_status, binaries, vec![], iters, false, obs))
}

/// Tracking cost `0.5 sum_k (x_k - x_des)'Q(x_k - x_des) + 0.5 sum_k u_k'R u_k` over
/// state blocks `0..N`.
pub fn plan_cost(w: &CostWeights, x: &[SystemState], u: &[ControlInput]) -> f64 {
    let mut c = 0.0;
    for xs in &x[..u.len()] {
        let e = xs.ego.to_array();
        for i in 0..STATE_DIM {
            c += 0.5 * w.q[i] * (e[i] - w.x_des[i]).powi(2);
        }
    }
    for uk in u {
        let a = uk.to_array();
        for j in 0..CONTROL_DIM {
            c += 0.5 * w.r[j] * a[j] * a[j];
        }
    }
    c
}

#[cfg(test)]
mod tests;
