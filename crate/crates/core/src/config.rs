//! Run configuration. Loaded from flat TOML; every key is optional and falls back to
//! the documented default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Step length, s.
    pub dt: f64,
    /// Prediction / planning horizon in steps.
    pub horizon: usize,
    /// History length in steps.
    pub history: usize,
    /// Number of surrounding slots.
    pub n_surr: usize,

    // Cost weights: theta_1 s, theta_2 v, theta_3 a, theta_4 y, theta_5 psi, theta_6 steer.
    pub theta_1: f64,
    pub theta_2: f64,
    pub theta_3: f64,
    pub theta_4: f64,
    pub theta_5: f64,
    pub theta_6: f64,

    pub lambda_1: f64,
    pub lambda_2: f64,
    /// Adds the Gaussian data term to the mixture loss so the means receive gradient.
    pub gmm_data_term: bool,

    pub big_m: f64,
    pub s_ref: f64,
    pub y_ref: f64,

    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub psi_max: f64,
    pub steer_max: f64,

    pub embed_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub modalities: usize,
    pub interaction_bound: f64,
    pub map_waypoints: usize,
    pub map_spacing: f64,

    pub qp_tol: f64,
    pub qp_max_iter: usize,
    pub relinearize_passes: usize,

    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides `epochs` when non-zero.
    pub train_steps: usize,
    pub v_floor: f64,

    pub headway_threshold: f64,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            dt: 0.1,
            horizon: 50,
            history: 40,
            n_surr: 6,
            theta_1: 0.0,
            theta_2: 1.0,
            theta_3: 1.0,
            theta_4: 0.5,
            theta_5: 500.0,
            theta_6: 20000.0,
            lambda_1: 1.0,
            lambda_2: 0.1,
            gmm_data_term: true,
            big_m: 1e4,
            s_ref: 10.0,
            y_ref: 2.0,
            v_min: 0.0,
            v_max: 35.0,
            a_min: -6.0,
            a_max: 4.0,
            psi_max: 0.3,
            steer_max: 0.1,
            embed_dim: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            modalities: 6,
            interaction_bound: 2.0,
            map_waypoints: 20,
            map_spacing: 2.0,
            qp_tol: 1e-6,
            qp_max_iter: 20_000,
            relinearize_passes: 1,
            lr: 1e-3,
            batch_size: 32,
            epochs: 25,
            train_steps: 0,
            v_floor: 0.5,
            headway_threshold: 1.0,
            seed: 0,
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        validate_config(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn cost_weights(&self) -> [f64; 6] {
        [
            self.theta_1,
            self.theta_2,
            self.theta_3,
            self.theta_4,
            self.theta_5,
            self.theta_6,
        ]
    }
}

/// Checks ranges and returns the config unchanged when valid.
pub fn validate_config(cfg: Config) -> Result<Config> {
    let fail = |m: &str| Err(Error::Config(m.to_string()));
    if !(cfg.dt > 0.0) {
        return fail("dt must be positive");
    }
    if cfg.horizon == 0 {
        return fail("horizon must be positive");
    }
    if cfg.history < 2 {
        return fail("history must hold at least two steps");
    }
    let weights = [
        cfg.theta_1,
        cfg.theta_2,
        cfg.theta_3,
        cfg.theta_4,
        cfg.theta_5,
        cfg.theta_6,
        cfg.lambda_1,
        cfg.lambda_2,
    ];
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return fail("cost and loss weights must be non-negative");
    }
    if !(cfg.s_ref > 0.0 && cfg.y_ref > 0.0) {
        return fail("s_ref and y_ref must be positive");
    }
    if !(cfg.big_m > cfg.s_ref && cfg.big_m > cfg.y_ref) {
        return fail("big_m must exceed s_ref and y_ref");
    }
    if !(cfg.v_min < cfg.v_max && cfg.a_min < cfg.a_max) {
        return fail("speed and acceleration bounds must be ordered");
    }
    if !(cfg.psi_max > 0.0 && cfg.steer_max > 0.0 && cfg.steer_max < std::f64::consts::FRAC_PI_2) {
        return fail("heading and steering bounds must be positive (steering below pi/2)");
    }
    if cfg.embed_dim == 0 || cfg.heads == 0 || cfg.embed_dim % cfg.heads != 0 {
        return fail("embed_dim must be a positive multiple of heads");
    }
    if cfg.modalities == 0 || cfg.encoder_layers == 0 || cfg.decoder_layers == 0 {
        return fail("modalities and layer counts must be positive");
    }
    if !(cfg.interaction_bound > 0.0) {
        return fail("interaction_bound must be positive");
    }
    if cfg.map_waypoints == 0 || !(cfg.map_spacing > 0.0) {
        return fail("map geometry must be positive");
    }
    if !(cfg.qp_tol > 0.0) || cfg.qp_max_iter == 0 {
        return fail("solver tolerance and iteration cap must be positive");
    }
    if !(cfg.lr >= 0.0) || cfg.batch_size == 0 {
        return fail("lr must be non-negative and batch_size positive");
    }
    if !(cfg.v_floor > 0.0) {
        return fail("v_floor must be positive");
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = validate_config(Config::default()).unwrap();
        assert_eq!(cfg.dt, 0.1);
        assert_eq!(cfg.horizon, 50);
        assert_eq!(cfg.history, 40);
        assert_eq!(cfg.n_surr, 6);
    }

    #[test]
    fn zero_dt_rejected() {
        let err = validate_config(Config { dt: 0.0, ..Config::default() }).unwrap_err();
        assert!(err.to_string().contains("dt must be positive"));
    }

    #[test]
    fn big_m_below_s_ref_rejected() {
        let cfg = Config {
            big_m: 5.0,
            s_ref: 10.0,
            ..Config::default()
        };
        assert!(validate_config(cfg).is_err());
    }

    #[test]
    fn toml_fills_defaults() {
        let cfg = Config::from_toml_str("dt = 0.05\nseed = 7\n").unwrap();
        assert_eq!(cfg.dt, 0.05);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.horizon, 50);
        assert!(Config::from_toml_str("bogus_key = 1").is_err());
        let back = Config::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }
}
