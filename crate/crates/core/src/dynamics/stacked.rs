//! Horizon-stacked form of the coupled dynamics,
//! `X = (A_bar + C_bar) X + B_ego_bar u_ego + B_surr_bar u_surr + D_bar`.
//!
//! `X` stacks `N + 1` system states starting at the measured state. `u_ego` stacks only the
//! ego's `(a, delta_f)` per step and `u_surr` stacks the `2n` surrounding controls per step;
//! the structurally zero blocks of the system control vectors are dropped.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{masked_flat, InteractionMatrices};
use crate::types::{ControlInput, SystemState, CONTROL_DIM, STATE_DIM};

/// Sparse collection of equally sized dense blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    pub block_rows: usize,
    pub block_cols: usize,
    pub row_size: usize,
    pub col_size: usize,
    blocks: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl BlockMatrix {
    pub fn new(block_rows: usize, block_cols: usize, row_size: usize, col_size: usize) -> Self {
        Self {
            block_rows,
            block_cols,
            row_size,
            col_size,
            blocks: BTreeMap::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.block_rows * self.row_size
    }

    pub fn ncols(&self) -> usize {
        self.block_cols * self.col_size
    }

    pub fn insert(&mut self, r: usize, c: usize, blk: DMatrix<f64>) {
        assert!(r < self.block_rows && c < self.block_cols, "block index out of range");
        assert_eq!(blk.shape(), (self.row_size, self.col_size), "block shape");
        self.blocks.insert((r, c), blk);
    }

    pub fn get(&self, r: usize, c: usize) -> Option<&DMatrix<f64>> {
        self.blocks.get(&(r, c))
    }

    /// Blocks stored in block-row `r`, ordered by column.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        self.blocks.range((r, 0)..(r + 1, 0)).map(|((_, c), b)| (*c, b))
    }

    pub fn stored_blocks(&self) -> impl Iterator<Item = ((usize, usize), &DMatrix<f64>)> {
        self.blocks.iter().map(|(k, b)| (*k, b))
    }

    /// Number of stored blocks holding at least one nonzero entry.
    pub fn nonzero_blocks(&self) -> usize {
        self.blocks.values().filter(|b| b.iter().any(|x| *x != 0.0)).count()
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols());
        let mut out = DVector::zeros(self.nrows());
        for (&(r, c), b) in &self.blocks {
            let xs = x.rows(c * self.col_size, self.col_size);
            let mut dst = out.rows_mut(r * self.row_size, self.row_size);
            dst.gemv(1.0, b, &xs, 1.0);
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols());
        for (&(r, c), b) in &self.blocks {
            m.view_mut((r * self.row_size, c * self.col_size), (self.row_size, self.col_size))
                .copy_from(b);
        }
        m
    }
}

/// States as an affine function of the stacked ego controls: `X = G u_ego + h`.
#[derive(Debug, Clone)]
pub struct AffineStates {
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct StackedDynamics {
    pub horizon: usize,
    pub mask: Vec<bool>,
    pub a_bar: BlockMatrix,
    pub b_ego_bar: BlockMatrix,
    pub b_surr_bar: BlockMatrix,
    pub c_bar: BlockMatrix,
    pub d_bar: DVector<f64>,
}

/// Stacks `N` per-step matrices.
///
/// Sub-diagonal blocks of `A_bar` hold `A dt + I`; `C_bar` holds `C_{t+k} dt` on the
/// sub-diagonal and `-C_{t+k} dt` on the sub-sub-diagonal. The known first-step history
/// term `-C_t dt X_{t-1}` lives in the second block of `D_bar`.
pub fn stack_horizon(seq: &[InteractionMatrices], x_t: &SystemState, x_prev: &SystemState, dt: f64) -> StackedDynamics {
    assert!(!seq.is_empty(), "horizon must be positive");
    let mask = x_t.mask();
    let nv = mask.len();
    let sd = STATE_DIM * nv;
    let n = seq.len();
    let n_surr_ctrl = CONTROL_DIM * (nv - 1);

    let mut a_bar = BlockMatrix::new(n + 1, n + 1, sd, sd);
    let mut c_bar = BlockMatrix::new(n + 1, n + 1, sd, sd);
    let mut b_ego_bar = BlockMatrix::new(n + 1, n, sd, CONTROL_DIM);
    let mut b_surr_bar = BlockMatrix::new(n + 1, n, sd, n_surr_ctrl.max(1));

    for (k, m) in seq.iter().enumerate() {
        assert_eq!(m.state_dim(), sd, "step {k} has inconsistent dimension");
        let mut ad = &m.a * dt;
        for i in 0..sd {
            ad[(i, i)] += 1.0;
        }
        a_bar.insert(k + 1, k, ad);
        let cd = &m.c * dt;
        if k > 0 {
            c_bar.insert(k + 1, k - 1, -&cd);
        }
        c_bar.insert(k + 1, k, cd);
        b_ego_bar.insert(k + 1, k, m.b_ego.columns(0, CONTROL_DIM) * dt);
        if n_surr_ctrl > 0 {
            b_surr_bar.insert(k + 1, k, m.b_surr.columns(CONTROL_DIM, n_surr_ctrl) * dt);
        }
    }

    let xt = masked_flat(x_t, &mask);
    let xp = masked_flat(x_prev, &mask);
    let mut d_bar = DVector::zeros((n + 1) * sd);
    d_bar.rows_mut(0, sd).copy_from(&xt);
    let correction = -(&seq[0].c * dt) * xp;
    d_bar.rows_mut(sd, sd).copy_from(&correction);

    StackedDynamics {
        horizon: n,
        mask,
        a_bar,
        b_ego_bar,
        b_surr_bar,
        c_bar,
        d_bar,
    }
}

impl StackedDynamics {
    pub fn state_dim(&self) -> usize {
        STATE_DIM * self.mask.len()
    }

    /// Length of the stacked state vector `(N + 1) * 4(n + 1)`.
    pub fn x_len(&self) -> usize {
        (self.horizon + 1) * self.state_dim()
    }

    pub fn u_ego_len(&self) -> usize {
        CONTROL_DIM * self.horizon
    }

    pub fn u_surr_len(&self) -> usize {
        self.b_surr_bar.col_size * self.horizon
    }

    /// `(A_bar + C_bar - I) X + B_ego_bar u_ego + B_surr_bar u_surr + D_bar`.
    pub fn residual(&self, x: &DVector<f64>, u_ego: &DVector<f64>, u_surr: &DVector<f64>) -> DVector<f64> {
        self.a_bar.mul_vec(x) + self.c_bar.mul_vec(x) - x
            + self.b_ego_bar.mul_vec(u_ego)
            + self.b_surr_bar.mul_vec(u_surr)
            + &self.d_bar
    }

    /// Solves the stacked fixed-point equation by block forward substitution.
    pub fn solve(&self, u_ego: &DVector<f64>, u_surr: &DVector<f64>) -> DVector<f64> {
        let sd = self.state_dim();
        let mut rhs = self.b_ego_bar.mul_vec(u_ego) + self.b_surr_bar.mul_vec(u_surr) + &self.d_bar;
        for r in 0..=self.horizon {
            let mut acc = rhs.rows(r * sd, sd).into_owned();
            for m in [&self.a_bar, &self.c_bar] {
                for (c, blk) in m.row(r) {
                    assert!(c < r, "stacked dynamics must be strictly block lower triangular");
                    acc.gemv(1.0, blk, &rhs.rows(c * sd, sd).into_owned(), 1.0);
                }
            }
            rhs.rows_mut(r * sd, sd).copy_from(&acc);
        }
        rhs
    }

    /// `X = G u_ego + h` for fixed surrounding reactions.
    pub fn affine_states(&self, u_surr: &DVector<f64>) -> AffineStates {
        let sd = self.state_dim();
        let nu = self.u_ego_len();
        let h = self.solve(&DVector::zeros(nu), u_surr);
        let mut g = DMatrix::<f64>::zeros(self.x_len(), nu);
        for r in 1..=self.horizon {
            let mut acc = DMatrix::<f64>::zeros(sd, nu);
            if let Some(b) = self.b_ego_bar.get(r, r - 1) {
                acc.columns_mut(CONTROL_DIM * (r - 1), CONTROL_DIM).copy_from(b);
            }
            for m in [&self.a_bar, &self.c_bar] {
                for (c, blk) in m.row(r) {
                    let prev = g.rows(c * sd, sd);
                    acc.gemm(1.0, blk, &prev, 1.0);
                }
            }
            g.rows_mut(r * sd, sd).copy_from(&acc);
        }
        AffineStates { g, h }
    }

    /// Splits a stacked state vector back into per-step system states.
    pub fn unstack(&self, x: &DVector<f64>) -> Vec<SystemState> {
        let sd = self.state_dim();
        (0..=self.horizon)
            .map(|k| SystemState::from_flat(x.rows(k * sd, sd).as_slice(), &self.mask))
            .collect()
    }
}

pub fn stack_ego_controls(u: &[ControlInput]) -> DVector<f64> {
    DVector::from_iterator(CONTROL_DIM * u.len(), u.iter().flat_map(|c| c.to_array()))
}

pub fn unstack_ego_controls(u: &DVector<f64>) -> Vec<ControlInput> {
    u.as_slice()
        .chunks(CONTROL_DIM)
        .map(|c| ControlInput::new(c[0], c[1]))
        .collect()
}

/// Stacks per-step surrounding controls (`n` slots each, absent slots as zeros).
pub fn stack_surr_controls(u: &[Vec<Option<ControlInput>>]) -> DVector<f64> {
    let values: Vec<f64> = u
        .iter()
        .flat_map(|step| step.iter().flat_map(|c| c.unwrap_or(ControlInput::ZERO).to_array()))
        .collect();
    DVector::from_vec(values)
}

pub fn stack_states(xs: &[SystemState]) -> DVector<f64> {
    let mask = xs[0].mask();
    let mut out = Vec::new();
    for x in xs {
        out.extend_from_slice(masked_flat(x, &mask).as_slice());
    }
    DVector::from_vec(out)
}
