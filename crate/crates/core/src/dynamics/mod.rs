//! Coupled multi-vehicle dynamics: physics-informed diagonal blocks from the linearized
//! bicycle model plus learned off-diagonal interaction blocks.
//!
//! Vehicles are stacked ego first. Block `(r, c)` with `r != c` describes the effect of
//! vehicle `c` on vehicle `r`.

mod stacked;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kinematics::linearize;
use crate::types::{SystemControl, SystemState, VehicleParams, CONTROL_DIM, STATE_DIM};

pub use stacked::{
    stack_ego_controls, stack_horizon, stack_states, stack_surr_controls, unstack_ego_controls, AffineStates,
    BlockMatrix, StackedDynamics,
};

/// Ordered vehicle pair: `source` influences `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    pub target: usize,
    pub source: usize,
}

impl Pair {
    pub const fn new(target: usize, source: usize) -> Self {
        Self { target, source }
    }
}

/// All ordered pairs among present vehicles, sorted by (target, source).
pub fn present_pairs(mask: &[bool]) -> Vec<Pair> {
    let mut out = Vec::new();
    for target in 0..mask.len() {
        for source in 0..mask.len() {
            if target != source && mask[target] && mask[source] {
                out.push(Pair::new(target, source));
            }
        }
    }
    out
}

/// Learned blocks for one time step. Missing pairs are zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearnedBlocks {
    /// 4x4 state-difference coupling per pair.
    pub c: BTreeMap<Pair, DMatrix<f64>>,
    /// 4x2 control coupling per pair.
    pub b: BTreeMap<Pair, DMatrix<f64>>,
}

impl LearnedBlocks {
    pub fn zero() -> Self {
        Self::default()
    }
}

/// Per-step matrices of the coupled system.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrices {
    /// Block-diagonal physics state matrix, `4(n+1)` square.
    pub a: DMatrix<f64>,
    /// `4(n+1) x 2(n+1)`: ego physics block plus learned first-column blocks.
    pub b_ego: DMatrix<f64>,
    /// `4(n+1) x 2(n+1)`: surrounding physics blocks plus learned off-diagonals; zero ego column.
    pub b_surr: DMatrix<f64>,
    /// `4(n+1)` square, zero diagonal blocks.
    pub c: DMatrix<f64>,
    pub mask: Vec<bool>,
}

impl InteractionMatrices {
    pub fn n_vehicles(&self) -> usize {
        self.mask.len()
    }

    pub fn state_dim(&self) -> usize {
        STATE_DIM * self.mask.len()
    }
}

fn copy_block(dst: &mut DMatrix<f64>, row: usize, col: usize, src: &DMatrix<f64>) {
    dst.view_mut((row, col), (src.nrows(), src.ncols())).copy_from(src);
}

/// Builds the matrices of one step from the current states and the learned blocks.
pub fn assemble_step(
    states: &SystemState,
    params: &[VehicleParams],
    learned: &LearnedBlocks,
) -> Result<InteractionMatrices> {
    let mask = states.mask();
    let nv = mask.len();
    if params.len() != nv {
        return Err(Error::Domain(format!("{} vehicle params for {nv} vehicles", params.len())));
    }
    let sd = STATE_DIM * nv;
    let cd = CONTROL_DIM * nv;
    let mut a = DMatrix::zeros(sd, sd);
    let mut b_ego = DMatrix::zeros(sd, cd);
    let mut b_surr = DMatrix::zeros(sd, cd);
    let mut c = DMatrix::zeros(sd, sd);

    for i in 0..nv {
        let Some(x) = states.vehicle(i) else { continue };
        let lin = linearize(x.v, &params[i]);
        let ablk = DMatrix::from_fn(STATE_DIM, STATE_DIM, |r, k| lin.a[r][k]);
        let bblk = DMatrix::from_fn(STATE_DIM, CONTROL_DIM, |r, k| lin.b[r][k]);
        copy_block(&mut a, STATE_DIM * i, STATE_DIM * i, &ablk);
        let b = if i == 0 { &mut b_ego } else { &mut b_surr };
        copy_block(b, STATE_DIM * i, CONTROL_DIM * i, &bblk);
    }

    for (pair, blk) in &learned.c {
        check_pair(pair, &mask, blk, STATE_DIM, STATE_DIM)?;
        if mask[pair.target] && mask[pair.source] {
            copy_block(&mut c, STATE_DIM * pair.target, STATE_DIM * pair.source, blk);
        }
    }
    for (pair, blk) in &learned.b {
        check_pair(pair, &mask, blk, STATE_DIM, CONTROL_DIM)?;
        if mask[pair.target] && mask[pair.source] {
            let dst = if pair.source == 0 { &mut b_ego } else { &mut b_surr };
            copy_block(dst, STATE_DIM * pair.target, CONTROL_DIM * pair.source, blk);
        }
    }
    Ok(InteractionMatrices {
        a,
        b_ego,
        b_surr,
        c,
        mask,
    })
}

fn check_pair(pair: &Pair, mask: &[bool], blk: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    let fail = |message: String| Error::Assembly {
        from: pair.source,
        to: pair.target,
        message,
    };
    if pair.target == pair.source {
        return Err(fail("diagonal blocks are physics-only".into()));
    }
    if pair.target >= mask.len() || pair.source >= mask.len() {
        return Err(fail(format!("vehicle index out of range for {} vehicles", mask.len())));
    }
    if blk.shape() != (rows, cols) {
        return Err(fail(format!("block is {:?}, expected ({rows}, {cols})", blk.shape())));
    }
    Ok(())
}

/// Advances flat stacked states one step:
/// `X' = (A dt + I) X + B_ego dt U_ego + B_surr dt U_surr + C dt (X - X_prev)`.
pub fn step_flat(
    m: &InteractionMatrices,
    x: &DVector<f64>,
    x_prev: &DVector<f64>,
    u_ego: &DVector<f64>,
    u_surr: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    let mut next = x.clone();
    next += (&m.a * x) * dt;
    next += (&m.b_ego * u_ego) * dt;
    next += (&m.b_surr * u_surr) * dt;
    next += (&m.c * (x - x_prev)) * dt;
    next
}

pub fn step(
    x_t: &SystemState,
    x_prev: &SystemState,
    m: &InteractionMatrices,
    u_ego: &SystemControl,
    u_surr: &SystemControl,
    dt: f64,
) -> SystemState {
    debug_assert!(u_ego.is_ego_only() && u_surr.is_surr_only());
    let mask = x_t.mask();
    let next = step_flat(
        m,
        &masked_flat(x_t, &mask),
        &masked_flat(x_prev, &mask),
        &DVector::from_column_slice(u_ego.as_slice()),
        &masked_controls(u_surr.as_slice(), &mask),
        dt,
    );
    SystemState::from_flat(next.as_slice(), &mask)
}

/// Flat state with every slot absent from `mask` zeroed.
pub fn masked_flat(x: &SystemState, mask: &[bool]) -> DVector<f64> {
    let mut flat = x.flatten();
    for (i, present) in mask.iter().enumerate() {
        let shown = *present && x.vehicle(i).is_some();
        if !shown {
            flat[STATE_DIM * i..STATE_DIM * (i + 1)].fill(0.0);
        }
    }
    DVector::from_vec(flat)
}

fn masked_controls(u: &[f64], mask: &[bool]) -> DVector<f64> {
    let mut v = u.to_vec();
    for (i, present) in mask.iter().enumerate() {
        if !present {
            v[CONTROL_DIM * i..CONTROL_DIM * (i + 1)].fill(0.0);
        }
    }
    DVector::from_vec(v)
}

/// Sequential application of [`step`]; element 0 is `x_t`.
pub fn rollout(
    x_t: &SystemState,
    x_prev: &SystemState,
    seq: &[InteractionMatrices],
    u_ego_seq: &[SystemControl],
    u_surr_seq: &[SystemControl],
    dt: f64,
) -> Vec<SystemState> {
    assert_eq!(seq.len(), u_ego_seq.len(), "control sequence length must equal horizon");
    assert_eq!(seq.len(), u_surr_seq.len(), "reaction sequence length must equal horizon");
    let mut out = Vec::with_capacity(seq.len() + 1);
    out.push(x_t.clone());
    let mut prev = x_prev.clone();
    for k in 0..seq.len() {
        let next = step(&out[k], &prev, &seq[k], &u_ego_seq[k], &u_surr_seq[k], dt);
        prev = out[k].clone();
        out.push(next);
    }
    out
}
