//! Error tables, episode reports and their CSV/JSON files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use socialmpc::metrics::{episode_moes, EvalReport};
use socialmpc::sim::{read_episode, EpisodeLog};
use socialmpc::training::PredictionScores;
use socialmpc::Config;

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRow {
    pub predictor: String,
    /// ADE at 1 s, 2 s, ...
    pub ade: Vec<f64>,
    pub fde: f64,
}

/// Per-second ADE columns and FDE for the model and the constant-velocity baseline.
pub fn error_table(s: &PredictionScores, dt: f64) -> Vec<ErrorRow> {
    let per_s = (1.0 / dt).round().max(1.0) as usize;
    let at_seconds = |ade: &[f64]| -> Vec<f64> { (1..=ade.len() / per_s).map(|k| ade[k * per_s - 1]).collect() };
    vec![
        ErrorRow {
            predictor: "model".into(),
            ade: at_seconds(&s.model_ade),
            fde: s.model_fde,
        },
        ErrorRow {
            predictor: "constant_velocity".into(),
            ade: at_seconds(&s.cv_ade),
            fde: s.cv_fde,
        },
    ]
}

fn error_header(rows: &[ErrorRow]) -> Vec<String> {
    let secs = rows.first().map_or(0, |r| r.ade.len());
    let mut h = vec!["predictor".to_string()];
    h.extend((1..=secs).map(|k| format!("ADE@{k}s")));
    h.push("FDE".into());
    h
}

pub fn write_csv(path: &Path, rows: &[ErrorRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(error_header(rows))?;
    for r in rows {
        let mut rec = vec![r.predictor.clone()];
        rec.extend(r.ade.iter().map(|v| format!("{v:.6}")));
        rec.push(format!("{:.6}", r.fde));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn print_error_table(rows: &[ErrorRow]) {
    println!("{}", error_header(rows).join("\t"));
    for r in rows {
        let cols: Vec<String> = r.ade.iter().map(|v| format!("{v:.3}")).collect();
        println!("{}\t{}\t{:.3}", r.predictor, cols.join("\t"), r.fde);
    }
}

pub fn read_logs(dir: &Path) -> Result<Vec<EpisodeLog>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".summary.json")).map(str::to_string))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(super::invalid(format!("no episode logs in {}", dir.display())));
    }
    names.iter().map(|n| Ok(read_episode(dir, n)?)).collect()
}

fn label(dir: &Path, i: usize) -> String {
    dir.file_name().and_then(|n| n.to_str()).map_or_else(|| format!("run{i}"), str::to_string)
}

#[derive(Serialize)]
struct OutcomeRow<'a> {
    run: &'a str,
    planner: &'a str,
    episodes: usize,
    success: usize,
    failure: usize,
    collision: usize,
    success_pct: f64,
    failure_pct: f64,
    collision_pct: f64,
    offramp_duration_mean: Option<f64>,
    average_speed: f64,
    mean_subthreshold_headway: Option<f64>,
    lane_change_distance_mean: Option<f64>,
}

#[derive(Serialize)]
struct PairedRow {
    seed: u64,
    outcome_a: String,
    outcome_b: String,
    end_time_a: f64,
    end_time_b: f64,
}

fn write_rows<T: Serialize>(path: PathBuf, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reports every log directory; with two directories, also pairs episodes by scenario seed.
pub fn evaluate(dirs: &[PathBuf], out: &Path, cfg: &Config, json: bool, csv: bool) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut runs: Vec<(String, String, Vec<EpisodeLog>, EvalReport)> = Vec::new();
    for (i, d) in dirs.iter().enumerate() {
        let logs = read_logs(d)?;
        let report = episode_moes(&logs, cfg)?;
        let planner = logs[0].summary.planner.clone();
        runs.push((label(d, i), planner, logs, report));
    }
    if json {
        let all: BTreeMap<&str, &EvalReport> = runs.iter().map(|(l, _, _, r)| (l.as_str(), r)).collect();
        std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&all)? + "\n")?;
    }
    if csv {
        write_rows(
            out.join("outcomes.csv"),
            runs.iter().map(|(l, p, _, r)| OutcomeRow {
                run: l,
                planner: p,
                episodes: r.episodes,
                success: r.outcomes.success,
                failure: r.outcomes.failure,
                collision: r.outcomes.collision,
                success_pct: r.success_pct,
                failure_pct: r.failure_pct,
                collision_pct: r.collision_pct,
                offramp_duration_mean: r.offramp_duration.map(|s| s.mean),
                average_speed: r.average_speed,
                mean_subthreshold_headway: r.mean_subthreshold_headway,
                lane_change_distance_mean: r.lane_change_distance.map(|s| s.mean),
            }),
        )?;
        write_rows(
            out.join("speed_histogram.csv"),
            runs.iter().flat_map(|(l, _, _, r)| r.speed_histogram.iter().map(move |b| (l.as_str(), b.lo, b.count))),
        )?;
        write_rows(
            out.join("lane_changes.csv"),
            runs.iter().flat_map(|(l, _, _, r)| r.lane_change_distances.iter().map(move |d| (l.as_str(), *d))),
        )?;
        write_rows(
            out.join("headway_spectrum.csv"),
            runs.iter().flat_map(|(l, _, _, r)| r.headway_bands.iter().map(move |b| (l.as_str(), b.f_lo, b.f_hi, b.power))),
        )?;
    }
    if let [a, b] = runs.as_slice() {
        let by_seed = |logs: &[EpisodeLog]| -> BTreeMap<u64, (String, f64)> {
            logs.iter()
                .map(|l| (l.summary.scenario.seed, (format!("{:?}", l.summary.outcome).to_lowercase(), l.summary.end_time)))
                .collect()
        };
        let (ma, mb) = (by_seed(&a.2), by_seed(&b.2));
        let rows: Vec<PairedRow> = ma
            .iter()
            .filter_map(|(seed, (oa, ta))| {
                mb.get(seed).map(|(ob, tb)| PairedRow {
                    seed: *seed,
                    outcome_a: oa.clone(),
                    outcome_b: ob.clone(),
                    end_time_a: *ta,
                    end_time_b: *tb,
                })
            })
            .collect();
        println!("paired {} episodes ({} vs {})", rows.len(), a.0, b.0);
        write_rows(out.join("paired.csv"), rows)?;
    }
    println!("run\tplanner\tepisodes\tsuccess%\tfailure%\tcollision%\tavg speed");
    for (l, p, _, r) in &runs {
        println!(
            "{l}\t{p}\t{}\t{:.1}\t{:.1}\t{:.1}\t{:.2}",
            r.episodes, r.success_pct, r.failure_pct, r.collision_pct, r.average_speed
        );
    }
    Ok(())
}
