//! Episode-level measures over a batch of closed-loop logs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::headway_spectrum;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::sim::{EpisodeLog, Outcome};

/// Speed histogram bin width, m/s.
pub const SPEED_BIN: f64 = 0.5;
/// Width of the frequency bands the headway spectra are pooled into, Hz.
pub const SPECTRUM_BAND: f64 = 0.25;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub success: usize,
    pub failure: usize,
    pub collision: usize,
}

impl OutcomeCounts {
    pub fn total(&self) -> usize {
        self.success + self.failure + self.collision
    }

    /// Success, failure and collision percentages.
    pub fn percentages(&self) -> [f64; 3] {
        let n = self.total().max(1) as f64;
        [self.success, self.failure, self.collision].map(|c| 100.0 * c as f64 / n)
    }

    pub fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Success => self.success += 1,
            Outcome::Failure => self.failure += 1,
            Outcome::Collision => self.collision += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Summary> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Summary {
            count: xs.len(),
            mean,
            std: var.sqrt(),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Lower edge.
    pub lo: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub f_lo: f64,
    pub f_hi: f64,
    /// Mean over episodes of the per-sample power falling in the band.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub outcomes: OutcomeCounts,
    pub success_pct: f64,
    pub failure_pct: f64,
    pub collision_pct: f64,
    /// Episode start to success, s.
    pub offramp_duration: Option<Summary>,
    /// Mean ego speed over all logged steps, m/s.
    pub average_speed: f64,
    pub headway_threshold: f64,
    /// Mean of the headway samples below `headway_threshold`.
    pub mean_subthreshold_headway: Option<f64>,
    pub headway_bands: Vec<Band>,
    /// Episodes that contributed a headway spectrum.
    pub spectrum_episodes: usize,
    pub speed_histogram: Vec<HistogramBin>,
    /// Longitudinal distance of every lane change, m.
    pub lane_change_distances: Vec<f64>,
    pub lane_change_distance: Option<Summary>,
    /// ADE at 1, 2, ... s and FDE over the full horizon when prediction was evaluated.
    pub ade_by_second: Option<Vec<f64>>,
    pub fde: Option<f64>,
}

/// Longest run of consecutive defined headway samples of an episode.
pub fn headway_series(log: &EpisodeLog) -> Vec<f64> {
    let mut best: Vec<f64> = Vec::new();
    let mut cur = Vec::new();
    for st in &log.steps {
        match st.headway {
            Some(h) => cur.push(h),
            None => {
                if cur.len() > best.len() {
                    best = std::mem::take(&mut cur);
                }
                cur.clear();
            }
        }
    }
    if cur.len() > best.len() {
        best = cur;
    }
    best
}

/// Aggregates outcome rates, efficiency, safety and lane-change measures.
pub fn episode_moes(logs: &[EpisodeLog], cfg: &Config) -> Result<EvalReport> {
    if logs.is_empty() {
        return Err(Error::Domain("no episodes to evaluate".into()));
    }
    let mut outcomes = OutcomeCounts::default();
    let mut durations = Vec::new();
    let (mut speed_sum, mut speed_n) = (0.0, 0usize);
    let mut low_headways = Vec::new();
    let mut hist: BTreeMap<i64, usize> = BTreeMap::new();
    let mut distances = Vec::new();
    let mut bands: BTreeMap<usize, f64> = BTreeMap::new();
    let mut spectra = 0;
    for log in logs {
        outcomes.add(log.summary.outcome);
        if log.summary.outcome == Outcome::Success {
            durations.push(log.summary.end_time);
        }
        for st in &log.steps {
            let v = st.ego().v;
            speed_sum += v;
            speed_n += 1;
            *hist.entry((v / SPEED_BIN).floor() as i64).or_default() += 1;
            if let Some(h) = st.headway.filter(|h| *h < cfg.headway_threshold) {
                low_headways.push(h);
            }
        }
        distances.extend(log.summary.lane_changes.iter().map(|e| e.distance()));
        let series = headway_series(log);
        let dt = match log.steps.as_slice() {
            [a, b, ..] => b.t - a.t,
            _ => continue,
        };
        if let Ok(spec) = headway_spectrum(&series, dt) {
            spectra += 1;
            for (f, p) in spec.freqs.iter().zip(&spec.power) {
                *bands.entry((f / SPECTRUM_BAND).floor() as usize).or_default() += p / series.len() as f64;
            }
        }
    }
    let [success_pct, failure_pct, collision_pct] = outcomes.percentages();
    Ok(EvalReport {
        episodes: logs.len(),
        outcomes,
        success_pct,
        failure_pct,
        collision_pct,
        offramp_duration: Summary::of(&durations),
        average_speed: speed_sum / speed_n.max(1) as f64,
        headway_threshold: cfg.headway_threshold,
        mean_subthreshold_headway: (!low_headways.is_empty()).then(|| low_headways.iter().sum::<f64>() / low_headways.len() as f64),
        headway_bands: bands
            .into_iter()
            .map(|(k, p)| Band {
                f_lo: k as f64 * SPECTRUM_BAND,
                f_hi: (k + 1) as f64 * SPECTRUM_BAND,
                power: p / spectra as f64,
            })
            .collect(),
        spectrum_episodes: spectra,
        speed_histogram: hist.into_iter().map(|(k, count)| HistogramBin { lo: k as f64 * SPEED_BIN, count }).collect(),
        lane_change_distance: Summary::of(&distances),
        lane_change_distances: distances,
        ade_by_second: None,
        fde: None,
    })
}
