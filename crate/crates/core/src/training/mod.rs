//! Losses, differentiable rollout through the coupled dynamics, and the training loop.

mod eval;

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::frame::{Frame, TrackPoint};
use crate::kinematics::linearize;
use crate::model::{GmmTensors, Model, ModelConfig, ModelOutput, CONTROL_SCALE};
use crate::seed::stream_rng;
use crate::tensor::{Adam, BlockRef, Tensor};
use crate::types::{ControlInput, VehicleParams, CONTROL_DIM, STATE_DIM};

pub use eval::{constant_velocity_trajectories, evaluate_predictions, ground_truth_trajectories, predicted_trajectories, PredictionScores};

/// Controls that reproduce a track's future under the linearized model: `a` from the
/// speed difference, `delta_f = psi_dot * L / v` from the heading difference.
/// Returns the controls and whether any speed was clamped to `v_floor`.
pub fn infer_controls(current: &TrackPoint, future: &[TrackPoint], p: &VehicleParams, dt: f64, v_floor: f64) -> (Vec<ControlInput>, bool) {
    let mut out = Vec::with_capacity(future.len());
    let mut clamped = false;
    let mut prev = current;
    for next in future {
        let (v, psi) = (prev[2], prev[4]);
        let accel = (next[2] - v) / dt;
        let psi_dot = (next[4] - psi) / dt;
        let v_eff = if v < v_floor {
            clamped = true;
            v_floor
        } else {
            v
        };
        out.push(ControlInput::new(accel, psi_dot * p.wheelbase() / v_eff));
        prev = next;
    }
    (out, clamped)
}

/// Ego controls recovered from the frame's ground-truth future.
pub fn infer_ego_controls(frame: &Frame, v_floor: f64) -> Vec<ControlInput> {
    let ego = &frame.vehicles[0];
    let (u, clamped) = infer_controls(ego.history.last().unwrap(), &ego.future, &ego.params, frame.dt, v_floor);
    if clamped {
        log::warn!("frame {}: ego speed below {v_floor} m/s, steering inversion clamped", frame.frame_id);
    }
    u
}

/// Normalized `N x 2` ground-truth controls for every present surrounding vehicle.
pub fn surr_control_targets(frame: &Frame, v_floor: f64) -> Vec<Option<Tensor>> {
    frame.vehicles[1..]
        .iter()
        .map(|t| {
            t.present.then(|| {
                let (u, _) = infer_controls(t.history.last().unwrap(), &t.future, &t.params, frame.dt, v_floor);
                let data = u
                    .iter()
                    .flat_map(|c| [c.accel / CONTROL_SCALE[0], c.steer / CONTROL_SCALE[1]])
                    .collect();
                Tensor::constant(&[u.len(), 2], data)
            })
        })
        .collect()
}

/// Mean smooth-L1 over the entries where `weights` is 1.
pub fn vehicle_loss(pred: &Tensor, gt: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let count = weights.data().iter().filter(|w| **w != 0.0).count().max(1);
    Ok(pred.sub(gt)?.mul(weights)?.smooth_l1().sum().scale(1.0 / count as f64))
}

/// Best-of-K modality by squared distance of the means to the targets (lowest index on ties).
pub fn select_modality(g: &GmmTensors, targets: &[Option<Tensor>]) -> usize {
    let k = g.log_p.numel();
    let mut best = (0, f64::INFINITY);
    for m in 0..k {
        let mut d = 0.0;
        for (mu, t) in g.mu.iter().zip(targets) {
            if let (Some(mu), Some(t)) = (mu, t) {
                for r in 0..t.rows() {
                    for c in 0..CONTROL_DIM {
                        d += (mu.at(r, 2 * m + c) - t.at(r, c)).powi(2);
                    }
                }
            }
        }
        if d < best.1 {
            best = (m, d);
        }
    }
    best.0
}

/// Mixture loss of modality `k`: mean log sigma minus log p, plus (optionally) the mean
/// Gaussian data term `(u - mu)^2 / (2 sigma^2)`. All quantities in normalized units.
pub fn gmm_loss(g: &GmmTensors, targets: &[Option<Tensor>], k: usize, data_term: bool) -> Result<Tensor> {
    let mut log_sig = Vec::new();
    let mut data = Vec::new();
    for ((mu, ls), t) in g.mu.iter().zip(&g.log_sigma).zip(targets) {
        let (Some(mu), Some(ls), Some(t)) = (mu, ls, t) else { continue };
        let mu_k = mu.slice_cols(2 * k, 2)?;
        let ls_k = ls.slice_cols(2 * k, 2)?;
        if data_term {
            let z = t.sub(&mu_k)?.mul(&ls_k.neg().exp())?;
            data.push(z.square().scale(0.5));
        }
        log_sig.push(ls_k);
    }
    let neg_log_p = g.log_p.slice_cols(k, 1)?.sum().neg();
    if log_sig.is_empty() {
        return Ok(neg_log_p);
    }
    let mut loss = Tensor::concat_rows(&log_sig)?.mean().add(&neg_log_p)?;
    if data_term {
        loss = loss.add(&Tensor::concat_rows(&data)?.mean())?;
    }
    Ok(loss)
}

pub fn total_loss(lv: &Tensor, lg: &Tensor, lambda_1: f64, lambda_2: f64) -> Result<Tensor> {
    lv.scale(lambda_1).add(&lg.scale(lambda_2))
}

/// Rolls the coupled dynamics forward inside the graph.
///
/// Physics blocks are linearized at each vehicle's current speed; learned blocks and the
/// reaction controls come from `out` (reactions of modality `k`). Returns the predicted
/// stacked states for steps `1..=N`, each `4(n+1) x 1`.
pub fn rollout_tensor(frame: &Frame, out: &ModelOutput, u_ego: &[ControlInput], k: usize) -> Result<Vec<Tensor>> {
    let mask = frame.mask();
    let nv = mask.len();
    let sd = STATE_DIM * nv;
    let cd = CONTROL_DIM * nv;
    let n = u_ego.len();
    let dt = frame.dt;
    let x_t = frame.current_state();
    let params = frame.params();

    let mut a = vec![0.0; sd * sd];
    let mut b_phys = vec![0.0; sd * cd];
    for i in (0..nv).filter(|&i| mask[i]) {
        let lin = linearize(x_t.vehicle(i).unwrap().v, &params[i]);
        for r in 0..STATE_DIM {
            for c in 0..STATE_DIM {
                a[(STATE_DIM * i + r) * sd + STATE_DIM * i + c] = lin.a[r][c];
            }
            for c in 0..CONTROL_DIM {
                b_phys[(STATE_DIM * i + r) * cd + CONTROL_DIM * i + c] = lin.b[r][c];
            }
        }
    }
    let a = Tensor::constant(&[sd, sd], a);
    let b_phys = Tensor::constant(&[sd, cd], b_phys);

    let c_src: Vec<Tensor> = out.c.values().cloned().collect();
    let b_src: Vec<Tensor> = out.b.values().cloned().collect();
    let pairs: Vec<_> = out.c.keys().copied().collect();

    let ego_u = Tensor::constant(&[n, 2], u_ego.iter().flat_map(|u| u.to_array()).collect());
    let scale = Tensor::constant(&[2], CONTROL_SCALE.to_vec());
    let mut u_src = vec![ego_u];
    let mut u_slot = vec![0];
    for (slot, mu) in out.gmm.mu.iter().enumerate() {
        if let Some(mu) = mu {
            u_src.push(mu.slice_cols(2 * k, 2)?.mul_row(&scale)?);
            u_slot.push(slot + 1);
        }
    }

    let flat = |s: &crate::types::SystemState| -> Tensor {
        Tensor::constant(&[sd, 1], crate::dynamics::masked_flat(s, &mask).as_slice().to_vec())
    };
    let mut x = flat(&x_t);
    let mut x_prev = flat(&frame.previous_state());
    let mut states = Vec::with_capacity(n);
    for step in 0..n {
        let u_blocks: Vec<BlockRef> = u_slot
            .iter()
            .enumerate()
            .map(|(src, &veh)| BlockRef {
                source: src,
                offset: 2 * step,
                rows: 2,
                cols: 1,
                at: (CONTROL_DIM * veh, 0),
            })
            .collect();
        let u = Tensor::assemble(cd, 1, &u_src, &u_blocks)?;
        let mut dx = a.matmul(&x)?;
        let mut b_k = b_phys.clone();
        if !pairs.is_empty() {
            let cb: Vec<BlockRef> = pairs
                .iter()
                .enumerate()
                .map(|(src, p)| BlockRef {
                    source: src,
                    offset: 16 * step,
                    rows: 4,
                    cols: 4,
                    at: (STATE_DIM * p.target, STATE_DIM * p.source),
                })
                .collect();
            let bb: Vec<BlockRef> = pairs
                .iter()
                .enumerate()
                .map(|(src, p)| BlockRef {
                    source: src,
                    offset: 8 * step,
                    rows: 4,
                    cols: 2,
                    at: (STATE_DIM * p.target, CONTROL_DIM * p.source),
                })
                .collect();
            let c_k = Tensor::assemble(sd, sd, &c_src, &cb)?;
            b_k = b_k.add(&Tensor::assemble(sd, cd, &b_src, &bb)?)?;
            dx = dx.add(&c_k.matmul(&x.sub(&x_prev)?)?)?;
        }
        dx = dx.add(&b_k.matmul(&u)?)?;
        let next = x.add(&dx.scale(dt))?;
        x_prev = x;
        x = next;
        states.push(x.clone());
    }
    Ok(states)
}

/// Ground truth `4(n+1) x N` (one column per future step) and the presence weights.
fn ground_truth(frame: &Frame, n: usize) -> (Tensor, Tensor) {
    let mask = frame.mask();
    let sd = STATE_DIM * mask.len();
    let mut gt = vec![0.0; sd * n];
    let mut w = vec![0.0; sd * n];
    for k in 0..n {
        let flat = crate::dynamics::masked_flat(&frame.future_state(k), &mask);
        for r in 0..sd {
            gt[r * n + k] = flat[r];
            w[r * n + k] = if mask[r / STATE_DIM] { 1.0 } else { 0.0 };
        }
    }
    (Tensor::constant(&[sd, n], gt), Tensor::constant(&[sd, n], w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLoss {
    pub total: f64,
    pub vehicle: f64,
    pub gmm: f64,
}

/// Builds the per-frame loss graph. Returns the total-loss tensor and its parts.
pub fn frame_loss(model: &Model, p: &crate::tensor::Bound, frame: &Frame, cfg: &Config) -> Result<(Tensor, FrameLoss)> {
    let n = model.config().horizon;
    let u_ego = infer_ego_controls(frame, cfg.v_floor);
    let out = model.forward(p, frame, &u_ego)?;
    let targets = surr_control_targets(frame, cfg.v_floor);
    let k = select_modality(&out.gmm, &targets);
    let states = rollout_tensor(frame, &out, &u_ego, k)?;
    let pred = Tensor::concat_cols(&states)?;
    let (gt, w) = ground_truth(frame, n);
    let lv = vehicle_loss(&pred, &gt, &w)?;
    let lg = gmm_loss(&out.gmm, &targets, k, cfg.gmm_data_term)?;
    let total = total_loss(&lv, &lg, cfg.lambda_1, cfg.lambda_2)?;
    let parts = FrameLoss {
        total: total.item(),
        vehicle: lv.item(),
        gmm: lg.item(),
    };
    Ok((total, parts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_vehicle: f64,
    pub loss_gmm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_ade: f64,
    pub val_fde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Wall-clock seconds; excluded from the CSV so reports stay reproducible.
    pub wall_clock_s: f64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,epoch,loss_total,loss_vehicle,loss_gmm\n");
        for r in &self.steps {
            s.push_str(&format!("{},{},{},{},{}\n", r.step, r.epoch, r.loss_total, r.loss_vehicle, r.loss_gmm));
        }
        s
    }
}

/// 70/20/10 split of frame indices, shuffled by the `split` seed stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_dataset(len: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut stream_rng(seed, "split"));
    let n_train = (len * 7).div_ceil(10);
    let n_val = (len * 2) / 10;
    let val = idx[n_train..(n_train + n_val).min(len)].to_vec();
    let test = idx[(n_train + n_val).min(len)..].to_vec();
    idx.truncate(n_train);
    Split { train: idx, val, test }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for per-epoch checkpoints (`epoch_<k>.bin` + sidecar).
    pub checkpoint_dir: Option<PathBuf>,
    /// Cap on validation frames scored per epoch (0 = all).
    pub max_val_frames: usize,
    /// Start from this model instead of a fresh initialization.
    pub init: Option<Model>,
}

/// Trains on the 70% split of `dataset`. The optimizer-step count is `cfg.train_steps`
/// when set, otherwise `cfg.epochs` passes over the training split.
pub fn train(dataset: &[Frame], cfg: &Config, opts: TrainOptions) -> Result<(Model, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::Domain("training dataset is empty".into()));
    }
    let started = Instant::now();
    let split = split_dataset(dataset.len(), cfg.seed);
    let mut model = match opts.init {
        Some(m) => m,
        None => Model::new(ModelConfig::from_config(cfg), cfg.seed)?,
    };
    let batch = cfg.batch_size.min(split.train.len()).max(1);
    let per_epoch = split.train.len().div_ceil(batch);
    let total_steps = if cfg.train_steps > 0 { cfg.train_steps } else { cfg.epochs * per_epoch };
    let mut opt = Adam::new(&model.params, cfg.lr);
    let mut rng = stream_rng(cfg.seed, "batch-shuffle");
    let mut order = split.train.clone();
    let mut cursor = order.len();
    let mut report = TrainReport {
        seed: cfg.seed,
        steps: Vec::with_capacity(total_steps),
        epochs: Vec::new(),
        wall_clock_s: 0.0,
    };

    for step in 0..total_steps {
        let epoch = step / per_epoch;
        let mut items = Vec::with_capacity(batch);
        while items.len() < batch {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            items.push(order[cursor]);
            cursor += 1;
        }
        let p = model.params.bind(true);
        let mut sums = FrameLoss { total: 0.0, vehicle: 0.0, gmm: 0.0 };
        for &i in &items {
            let (loss, parts) = frame_loss(&model, &p, &dataset[i], cfg)?;
            if !parts.total.is_finite() {
                let frames = items.iter().map(|&j| dataset[j].frame_id.as_str()).collect::<Vec<_>>().join(",");
                return Err(Error::NonFinite { step, frames });
            }
            loss.scale(1.0 / batch as f64).backward()?;
            sums.total += parts.total;
            sums.vehicle += parts.vehicle;
            sums.gmm += parts.gmm;
        }
        let grads = p.grads();
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            let frames = items.iter().map(|&j| dataset[j].frame_id.as_str()).collect::<Vec<_>>().join(",");
            return Err(Error::NonFinite { step, frames });
        }
        opt.update(&mut model.params, &grads);
        let b = batch as f64;
        report.steps.push(StepRecord {
            step,
            epoch,
            loss_total: sums.total / b,
            loss_vehicle: sums.vehicle / b,
            loss_gmm: sums.gmm / b,
        });
        log::debug!("step {step}: loss {:.6}", sums.total / b);

        let epoch_done = (step + 1) % per_epoch == 0 || step + 1 == total_steps;
        if epoch_done {
            let mut val: Vec<&Frame> = split.val.iter().map(|&i| &dataset[i]).collect();
            if opts.max_val_frames > 0 {
                val.truncate(opts.max_val_frames);
            }
            let (val_ade, val_fde) = if val.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let s = evaluate_predictions(&model, &val, cfg.v_floor)?;
                (s.model_ade[s.model_ade.len() - 1], s.model_fde)
            };
            report.epochs.push(EpochRecord { epoch, val_ade, val_fde });
            if let Some(dir) = &opts.checkpoint_dir {
                std::fs::create_dir_all(dir)?;
                model.save(&dir.join(format!("epoch_{epoch}.bin")))?;
            }
        }
    }
    report.wall_clock_s = started.elapsed().as_secs_f64();
    Ok((model, report))
}
