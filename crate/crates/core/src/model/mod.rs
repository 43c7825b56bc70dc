//! Socially-aware encoder-decoder.
//!
//! Encoder: per-vehicle trajectory self-attention, directed vehicle-to-vehicle cross
//! attention, and vehicle-to-map cross attention over lane polylines. The feature of the
//! ordered pair `veh1 -> veh2` drives the interaction blocks describing the effect of
//! `veh1` on `veh2`.
//!
//! Decoders: one-shot transformer decoders emitting `N` coupling blocks per pair, and a
//! reaction decoder whose queries embed the planned ego controls and whose heads emit a
//! Gaussian mixture over every surrounding vehicle's control sequence.

mod features;
mod layers;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dynamics::{present_pairs, LearnedBlocks, Pair};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::seed::stream_rng;
use crate::tensor::{Bound, ParamId, ParamStore, Tensor};
use crate::types::ControlInput;

use features::{map_features, plan_features, track_features, MAP_IN, TRACK_IN};
pub use features::CONTROL_SCALE;
use layers::{AttnBlock, Linear, Mlp};

/// Entries per emitted coupling block.
const C_ENTRIES: usize = 16;
const B_ENTRIES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub modalities: usize,
    pub interaction_bound: f64,
    pub history: usize,
    pub horizon: usize,
    pub waypoints: usize,
}

impl ModelConfig {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            embed_dim: cfg.embed_dim,
            heads: cfg.heads,
            encoder_layers: cfg.encoder_layers,
            decoder_layers: cfg.decoder_layers,
            modalities: cfg.modalities,
            interaction_bound: cfg.interaction_bound,
            history: cfg.history,
            horizon: cfg.horizon,
            waypoints: cfg.map_waypoints,
        }
    }
}

#[derive(Debug, Clone)]
struct Ids {
    traj_embed: Mlp,
    traj_pos: ParamId,
    traj_blocks: Vec<AttnBlock>,
    v2v_blocks: Vec<AttnBlock>,
    map_embed: Mlp,
    map_pos: ParamId,
    v2m_blocks: Vec<AttnBlock>,
    dec_queries: ParamId,
    dec_layers: Vec<(AttnBlock, AttnBlock)>,
    dec_head: Linear,
    rx_embed: Mlp,
    rx_pos: ParamId,
    rx_layers: Vec<(AttnBlock, AttnBlock)>,
    mu_head: Linear,
    sigma_head: Linear,
    p_head: Linear,
}

/// Aggregated feature per ordered pair of present vehicles, keyed as
/// `Pair { target: veh2, source: veh1 }`: `2 T_h x d`, the V2V rows then the V2M rows.
#[derive(Debug, Clone)]
pub struct Latent {
    pub mask: Vec<bool>,
    pub pairs: BTreeMap<Pair, Tensor>,
}

/// Mixture heads in normalized control units, per surrounding slot.
#[derive(Debug, Clone)]
pub struct GmmTensors {
    /// `N x 2K`; modality `k` occupies columns `2k, 2k + 1` (accel, steer).
    pub mu: Vec<Option<Tensor>>,
    pub log_sigma: Vec<Option<Tensor>>,
    /// `1 x K` log mixture weights.
    pub log_p: Tensor,
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// `N x 16` row-major 4x4 state-coupling blocks per pair.
    pub c: BTreeMap<Pair, Tensor>,
    /// `N x 8` row-major 4x2 control-coupling blocks per pair.
    pub b: BTreeMap<Pair, Tensor>,
    pub gmm: GmmTensors,
}

/// Mixture over surrounding-vehicle control sequences in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmOutput {
    pub modalities: usize,
    pub horizon: usize,
    /// Per slot `N x 2K` row-major means.
    pub mu: Vec<Option<Vec<f64>>>,
    pub sigma: Vec<Option<Vec<f64>>>,
    pub p: Vec<f64>,
}

impl GmmOutput {
    /// Modality with the highest probability (lowest index on ties).
    pub fn most_likely(&self) -> usize {
        let mut best = 0;
        for k in 1..self.p.len() {
            if self.p[k] > self.p[best] {
                best = k;
            }
        }
        best
    }

    /// Mean sequence of modality `k` as `N` steps of per-slot controls.
    pub fn mean_sequence(&self, k: usize) -> Vec<Vec<Option<ControlInput>>> {
        let w = 2 * self.modalities;
        (0..self.horizon)
            .map(|t| {
                self.mu
                    .iter()
                    .map(|m| m.as_ref().map(|m| ControlInput::new(m[t * w + 2 * k], m[t * w + 2 * k + 1])))
                    .collect()
            })
            .collect()
    }
}

/// Inference result for one frame and ego plan.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Learned blocks per horizon step.
    pub blocks: Vec<LearnedBlocks>,
    pub gmm: GmmOutput,
    /// Most likely reaction sequence: `N` steps of per-slot controls.
    pub u_surr: Vec<Vec<Option<ControlInput>>>,
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    pub params: ParamStore,
    ids: Ids,
}

fn decoder_stack<R: rand::Rng>(ps: &mut ParamStore, name: &str, n: usize, d: usize, rng: &mut R) -> Vec<(AttnBlock, AttnBlock)> {
    (0..n)
        .map(|l| {
            (
                AttnBlock::new(ps, &format!("{name}.{l}.self"), d, false, rng),
                AttnBlock::new(ps, &format!("{name}.{l}.cross"), d, true, rng),
            )
        })
        .collect()
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        if cfg.embed_dim == 0 || cfg.heads == 0 || cfg.embed_dim % cfg.heads != 0 {
            return Err(Error::Config("embed_dim must be a positive multiple of heads".into()));
        }
        if cfg.modalities == 0 || cfg.encoder_layers == 0 || cfg.decoder_layers == 0 {
            return Err(Error::Config("modalities and layer counts must be positive".into()));
        }
        let mut rng = stream_rng(seed, "model-init");
        let rng = &mut rng;
        let d = cfg.embed_dim;
        let k = cfg.modalities;
        let mut ps = ParamStore::new();
        let enc = cfg.encoder_layers;
        let ids = Ids {
            traj_embed: Mlp::new(&mut ps, "traj.embed", TRACK_IN, d, d, rng),
            traj_pos: ps.normal("traj.pos", &[cfg.history, d], 0.1, rng),
            traj_blocks: (0..enc).map(|l| AttnBlock::new(&mut ps, &format!("traj.{l}"), d, false, rng)).collect(),
            v2v_blocks: (0..enc).map(|l| AttnBlock::new(&mut ps, &format!("v2v.{l}"), d, true, rng)).collect(),
            map_embed: Mlp::new(&mut ps, "map.embed", MAP_IN, d, d, rng),
            map_pos: ps.normal("map.pos", &[3 * cfg.waypoints, d], 0.1, rng),
            v2m_blocks: (0..enc).map(|l| AttnBlock::new(&mut ps, &format!("v2m.{l}"), d, true, rng)).collect(),
            dec_queries: ps.normal("dec.queries", &[cfg.horizon, d], 0.5, rng),
            dec_layers: decoder_stack(&mut ps, "dec", cfg.decoder_layers, d, rng),
            dec_head: Linear::new(&mut ps, "dec.head", d, C_ENTRIES + B_ENTRIES, 0.01, rng),
            rx_embed: Mlp::new(&mut ps, "rx.embed", 2, d, d, rng),
            rx_pos: ps.normal("rx.pos", &[cfg.horizon, d], 0.1, rng),
            rx_layers: decoder_stack(&mut ps, "rx", cfg.decoder_layers, d, rng),
            mu_head: Linear::new(&mut ps, "rx.mu", d, 2 * k, 0.01, rng),
            sigma_head: Linear::new(&mut ps, "rx.log_sigma", d, 2 * k, 0.01, rng),
            p_head: Linear::new(&mut ps, "rx.p", d, k, 0.01, rng),
        };
        Ok(Self { cfg, params: ps, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Zeroes every output head so the model emits no interaction and zero reactions.
    pub fn zero_heads(&mut self) {
        let heads = [&self.ids.dec_head, &self.ids.mu_head, &self.ids.sigma_head, &self.ids.p_head];
        let ids: Vec<ParamId> = heads.iter().flat_map(|h| h.ids()).collect();
        for id in ids {
            self.params.values_mut(id).fill(0.0);
        }
    }

    /// Writes `<stem>.bin` (parameters) and `<stem>.toml` (hyperparameters).
    pub fn save(&self, bin_path: &Path) -> Result<()> {
        self.params.save(bin_path)?;
        let text = toml::to_string(&self.cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(bin_path.with_extension("toml"), text)?;
        Ok(())
    }

    pub fn load(bin_path: &Path) -> Result<Self> {
        let side = bin_path.with_extension("toml");
        let text = std::fs::read_to_string(&side)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", side.display())))?;
        let cfg: ModelConfig = toml::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut model = Model::new(cfg, 0)?;
        let stored = ParamStore::load(bin_path)?;
        model.params.load_values_from(&stored)?;
        Ok(model)
    }

    fn check_frame(&self, frame: &Frame) -> Result<()> {
        for (i, t) in frame.vehicles.iter().enumerate() {
            if (t.present || i == 0) && t.history.len() != self.cfg.history {
                return Err(Error::Schema {
                    frame_id: frame.frame_id.clone(),
                    message: format!("{} history has {} steps, model expects {}", t.slot, t.history.len(), self.cfg.history),
                });
            }
        }
        Ok(())
    }

    /// `T_h x d` temporal feature of one vehicle from its `T_h x 5` history features.
    pub fn trajectory_former(&self, p: &Bound, traj: &Tensor) -> Result<Tensor> {
        let mut h = self.ids.traj_embed.fwd(p, traj)?.add(p.get(self.ids.traj_pos))?;
        for blk in &self.ids.traj_blocks {
            h = blk.fwd(p, &h, None, None, self.cfg.heads)?;
        }
        Ok(h)
    }

    /// Queries from `feat1`, keys and values from `feat2`.
    pub fn v2v_encode(&self, p: &Bound, feat1: &Tensor, feat2: &Tensor) -> Result<Tensor> {
        let mut h = feat1.clone();
        for blk in &self.ids.v2v_blocks {
            h = blk.fwd(p, &h, Some((feat2, feat2)), None, self.cfg.heads)?;
        }
        Ok(h)
    }

    /// `3W x d` lane embedding from `3W x 7` map tokens.
    pub fn map_former(&self, p: &Bound, map: &Tensor) -> Result<Tensor> {
        self.ids.map_embed.fwd(p, map)?.add(p.get(self.ids.map_pos))
    }

    /// V2V feature as queries; keys from `map1` (veh1), values from `map2` (veh2).
    pub fn v2m_encode(&self, p: &Bound, v2v: &Tensor, map1: &Tensor, map2: &Tensor, key_mask: &[bool]) -> Result<Tensor> {
        let mut h = v2v.clone();
        for blk in &self.ids.v2m_blocks {
            h = blk.fwd(p, &h, Some((map1, map2)), Some(key_mask), self.cfg.heads)?;
        }
        Ok(h)
    }

    pub fn encode(&self, p: &Bound, frame: &Frame) -> Result<Latent> {
        self.check_frame(frame)?;
        let mask = frame.mask();
        let nv = mask.len();
        let mut temporal: Vec<Option<Tensor>> = vec![None; nv];
        let mut maps: Vec<Option<(Tensor, Vec<bool>)>> = vec![None; nv];
        for i in (0..nv).filter(|&i| mask[i]) {
            temporal[i] = Some(self.trajectory_former(p, &track_features(frame, i))?);
            let (m, exists) = map_features(frame, i, self.cfg.waypoints);
            maps[i] = Some((self.map_former(p, &m)?, exists));
        }
        let mut pairs = BTreeMap::new();
        for pair in present_pairs(&mask) {
            let (veh1, veh2) = (pair.source, pair.target);
            let (f1, f2) = (temporal[veh1].as_ref().unwrap(), temporal[veh2].as_ref().unwrap());
            let v2v = self.v2v_encode(p, f1, f2)?;
            let (m1, e1) = maps[veh1].as_ref().unwrap();
            let (m2, e2) = maps[veh2].as_ref().unwrap();
            let key_mask: Vec<bool> = e1.iter().zip(e2).map(|(a, b)| *a && *b).collect();
            let v2m = self.v2m_encode(p, &v2v, m1, m2, &key_mask)?;
            pairs.insert(pair, Tensor::concat_rows(&[v2v, v2m])?);
        }
        Ok(Latent { mask, pairs })
    }

    /// `N x 16` C entries and `N x 8` B entries per present pair, saturated at the bound.
    pub fn decode_interaction_blocks(
        &self,
        p: &Bound,
        latent: &Latent,
    ) -> Result<(BTreeMap<Pair, Tensor>, BTreeMap<Pair, Tensor>)> {
        let mut c = BTreeMap::new();
        let mut b = BTreeMap::new();
        if latent.pairs.is_empty() {
            return Ok((c, b));
        }
        let heads = self.cfg.heads;
        // The first self-attention sees only the learned queries, so it is shared by all pairs.
        let (first_self, first_cross) = &self.ids.dec_layers[0];
        let q0 = first_self.fwd(p, p.get(self.ids.dec_queries), None, None, heads)?;
        for (pair, mem) in &latent.pairs {
            let mut h = first_cross.fwd(p, &q0, Some((mem, mem)), None, heads)?;
            for (sa, ca) in &self.ids.dec_layers[1..] {
                h = sa.fwd(p, &h, None, None, heads)?;
                h = ca.fwd(p, &h, Some((mem, mem)), None, heads)?;
            }
            let out = self.ids.dec_head.fwd(p, &h)?.tanh().scale(self.cfg.interaction_bound);
            c.insert(*pair, out.slice_cols(0, C_ENTRIES)?);
            b.insert(*pair, out.slice_cols(C_ENTRIES, B_ENTRIES)?);
        }
        Ok((c, b))
    }

    /// Mixture heads for every present surrounding vehicle given the planned ego controls.
    pub fn decode_reactions(&self, p: &Bound, latent: &Latent, planned_ego: &[ControlInput]) -> Result<GmmTensors> {
        if planned_ego.len() != self.cfg.horizon {
            return Err(Error::shape("decode_reactions", &[planned_ego.len(), 2], &[self.cfg.horizon, 2]));
        }
        let heads = self.cfg.heads;
        let nv = latent.mask.len();
        let queries = self
            .ids
            .rx_embed
            .fwd(p, &plan_features(planned_ego))?
            .add(p.get(self.ids.rx_pos))?;
        let (first_self, first_cross) = &self.ids.rx_layers[0];
        let q0 = first_self.fwd(p, &queries, None, None, heads)?;
        let mut mu = vec![None; nv - 1];
        let mut log_sigma = vec![None; nv - 1];
        let mut pooled: Vec<Tensor> = Vec::new();
        for target in (1..nv).filter(|&t| latent.mask[t]) {
            let parts: Vec<Tensor> = latent
                .pairs
                .iter()
                .filter(|(pair, _)| pair.target == target)
                .map(|(_, f)| f.clone())
                .collect();
            if parts.is_empty() {
                continue;
            }
            let mem = Tensor::concat_rows(&parts)?;
            let mut h = first_cross.fwd(p, &q0, Some((&mem, &mem)), None, heads)?;
            for (sa, ca) in &self.ids.rx_layers[1..] {
                h = sa.fwd(p, &h, None, None, heads)?;
                h = ca.fwd(p, &h, Some((&mem, &mem)), None, heads)?;
            }
            mu[target - 1] = Some(self.ids.mu_head.fwd(p, &h)?);
            log_sigma[target - 1] = Some(self.ids.sigma_head.fwd(p, &h)?);
            pooled.push(h.mean_rows()?);
        }
        let pool = if pooled.is_empty() {
            Tensor::zeros(&[1, self.cfg.embed_dim])
        } else {
            Tensor::concat_rows(&pooled)?.mean_rows()?
        };
        let log_p = self.ids.p_head.fwd(p, &pool)?.log_softmax()?;
        Ok(GmmTensors { mu, log_sigma, log_p })
    }

    pub fn forward(&self, p: &Bound, frame: &Frame, planned_ego: &[ControlInput]) -> Result<ModelOutput> {
        let latent = self.encode(p, frame)?;
        let (c, b) = self.decode_interaction_blocks(p, &latent)?;
        let gmm = self.decode_reactions(p, &latent, planned_ego)?;
        Ok(ModelOutput { c, b, gmm })
    }

    /// Graph-free forward pass converted to plain matrices.
    pub fn predict(&self, frame: &Frame, planned_ego: &[ControlInput]) -> Result<Prediction> {
        let p = self.params.bind(false);
        let out = self.forward(&p, frame, planned_ego)?;
        Ok(self.to_prediction(&out))
    }

    pub fn to_prediction(&self, out: &ModelOutput) -> Prediction {
        let n = self.cfg.horizon;
        let mut blocks = vec![LearnedBlocks::zero(); n];
        for (pair, t) in &out.c {
            for (k, blk) in blocks.iter_mut().enumerate() {
                blk.c.insert(*pair, DMatrix::from_row_slice(4, 4, &t.data()[k * C_ENTRIES..(k + 1) * C_ENTRIES]));
            }
        }
        for (pair, t) in &out.b {
            for (k, blk) in blocks.iter_mut().enumerate() {
                blk.b.insert(*pair, DMatrix::from_row_slice(4, 2, &t.data()[k * B_ENTRIES..(k + 1) * B_ENTRIES]));
            }
        }
        let gmm = self.gmm_output(&out.gmm);
        let u_surr = gmm.mean_sequence(gmm.most_likely());
        Prediction { blocks, gmm, u_surr }
    }

    fn gmm_output(&self, g: &GmmTensors) -> GmmOutput {
        let unscale = |t: &Tensor, f: fn(f64) -> f64| -> Vec<f64> {
            t.data()
                .iter()
                .enumerate()
                .map(|(i, v)| f(*v) * CONTROL_SCALE[i % 2])
                .collect()
        };
        GmmOutput {
            modalities: self.cfg.modalities,
            horizon: self.cfg.horizon,
            mu: g.mu.iter().map(|m| m.as_ref().map(|t| unscale(t, |v| v))).collect(),
            sigma: g.log_sigma.iter().map(|m| m.as_ref().map(|t| unscale(t, f64::exp))).collect(),
            p: g.log_p.data().iter().map(|v| v.exp()).collect(),
        }
    }
}

#[cfg(test)]
mod tests;
