//! Prediction errors, interaction strength, headway spectra and episode-level measures.

mod report;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{LearnedBlocks, Pair};
use crate::error::{Error, Result};

pub use report::{episode_moes, headway_series, Band, EvalReport, HistogramBin, OutcomeCounts, Summary, SPECTRUM_BAND, SPEED_BIN};

/// A 2-D trajectory `(s, y)` per step, starting one step after the current time.
pub type Trajectory = Vec<[f64; 2]>;

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Mean pointwise L2 error over all vehicles and the first `upto` steps.
pub fn ade(pred: &[Trajectory], gt: &[Trajectory], upto: usize) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() || upto == 0 {
        return Err(Error::shape("ade", &[pred.len(), upto], &[gt.len(), upto]));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        if p.len() < upto || g.len() < upto {
            return Err(Error::shape("ade", &[p.len()], &[g.len(), upto]));
        }
        total += p[..upto].iter().zip(&g[..upto]).map(|(a, b)| dist(a, b)).sum::<f64>();
    }
    Ok(total / (pred.len() * upto) as f64)
}

/// Mean final-point L2 error.
pub fn fde(pred: &[Trajectory], gt: &[Trajectory]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::shape("fde", &[pred.len()], &[gt.len()]));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        match (p.last(), g.last()) {
            (Some(a), Some(b)) if p.len() == g.len() => total += dist(a, b),
            _ => return Err(Error::shape("fde", &[p.len()], &[g.len()])),
        }
    }
    Ok(total / pred.len() as f64)
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStrength {
    pub c_per_step: Vec<f64>,
    pub b_per_step: Vec<f64>,
    pub c_mean: f64,
    pub b_mean: f64,
}

/// Per-step and time-averaged Frobenius norms of every pair's learned blocks.
pub fn interaction_strength(blocks: &[LearnedBlocks]) -> BTreeMap<Pair, PairStrength> {
    let mut out: BTreeMap<Pair, PairStrength> = BTreeMap::new();
    let n = blocks.len();
    for (k, step) in blocks.iter().enumerate() {
        let pairs = step.c.keys().chain(step.b.keys());
        for pair in pairs {
            out.entry(*pair).or_insert_with(|| PairStrength {
                c_per_step: vec![0.0; n],
                b_per_step: vec![0.0; n],
                c_mean: 0.0,
                b_mean: 0.0,
            });
        }
        for (pair, m) in &step.c {
            out.get_mut(pair).unwrap().c_per_step[k] = frobenius(m);
        }
        for (pair, m) in &step.b {
            out.get_mut(pair).unwrap().b_per_step[k] = frobenius(m);
        }
    }
    for s in out.values_mut() {
        s.c_mean = s.c_per_step.iter().sum::<f64>() / n as f64;
        s.b_mean = s.b_per_step.iter().sum::<f64>() / n as f64;
    }
    out
}

/// Forward DFT of a real sequence (no padding, no window).
pub fn fft_real(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    if !buf.is_empty() {
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    }
    buf
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Bin frequencies in Hz, `0 ..= fs / 2`.
    pub freqs: Vec<f64>,
    /// One-sided power; sums to the energy of the windowed, detrended series.
    pub power: Vec<f64>,
    /// Energy of the windowed, detrended, zero-padded series.
    pub energy: f64,
}

/// Hann-windowed one-sided power spectrum of a mean-removed series, zero-padded to the
/// next power of two.
pub fn headway_spectrum(series: &[f64], dt: f64) -> Result<Spectrum> {
    if series.len() < 8 {
        return Err(Error::Domain(format!("spectrum needs at least 8 samples, got {}", series.len())));
    }
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let size = n.next_power_of_two();
    let mut x = vec![0.0; size];
    for (i, v) in series.iter().enumerate() {
        let w = if n > 1 {
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()
        } else {
            1.0
        };
        x[i] = (v - mean) * w;
    }
    let energy = x.iter().map(|v| v * v).sum();
    let spec = fft_real(&x);
    let half = size / 2;
    let power = (0..=half)
        .map(|k| {
            let p = spec[k].norm_sqr() / size as f64;
            if k == 0 || k == half {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    let freqs = (0..=half).map(|k| k as f64 / (size as f64 * dt)).collect();
    Ok(Spectrum { freqs, power, energy })
}
