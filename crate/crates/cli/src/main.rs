use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use socialmpc::model::Model;
use socialmpc::planner::{plan, CostWeights, Predictor};
use socialmpc::sim::{episode_scenario, generate_dataset, run_episode, write_episode, DatasetOptions, EgoPlanner, Scenario};
use socialmpc::training::{evaluate_predictions, predicted_trajectories, train, TrainOptions};
use socialmpc::{load_frames, validate_config, write_frames, Config, FrameDims};

mod report;

#[derive(Parser, Debug)]
#[command(name = "socialmpc", version, about = "Interaction-aware MPC: data, training, prediction and closed-loop evaluation")]
struct Cli {
    /// Run configuration (TOML). Defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config and scenario seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate IDM/MOBIL traffic and slice it into training frames.
    GenData {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        /// Designated vehicles per episode.
        #[arg(long, default_value_t = 4)]
        egos: usize,
        /// Steps between windows of one vehicle.
        #[arg(long, default_value_t = 10)]
        stride: usize,
        /// Frame file to write (JSON Lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the interaction model.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optimizer steps (overrides epochs).
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Continue from a checkpoint's weights.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Validation frames scored per epoch (0 = all).
        #[arg(long, default_value_t = 0)]
        max_val_frames: usize,
    },
    /// Predict surrounding-vehicle trajectories and score them.
    Predict {
        #[arg(long)]
        data: PathBuf,
        /// Without a checkpoint the interaction heads are zero.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Print the error table as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Plan once for one frame of a frame file.
    Plan {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        /// Learned predictor; the physics predictor is used without one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Desired speed, m/s (default: current speed).
        #[arg(long)]
        v_des: Option<f64>,
        /// Desired lateral position, m (default: current).
        #[arg(long)]
        y_des: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run closed-loop off-ramp episodes.
    Simulate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PlannerArg::Pas)]
        planner: PlannerArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Run the MPC planner with the physics-only predictor.
        #[arg(long)]
        physics: bool,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measures of effectiveness over simulated episodes.
    Evaluate {
        /// Episode directories; two directories also give a paired table.
        #[arg(long, required = true, num_args = 1..)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PlannerArg {
    Mpcformer,
    Pas,
}

/// Input the user can fix: bad paths, bad values, bad files.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Invalid>().is_some() {
        return 2;
    }
    match err.downcast_ref::<socialmpc::Error>() {
        Some(socialmpc::Error::Config(_) | socialmpc::Error::Schema { .. } | socialmpc::Error::Parse { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(invalid(format!("{what} not found: {}", path.display())));
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => {
            require_file(p, "config file")?;
            Config::load(p)?
        }
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(validate_config(cfg)?)
}

fn load_scenario(path: Option<&Path>, seed: Option<u64>) -> Result<Scenario> {
    let mut scn = match path {
        Some(p) => {
            require_file(p, "scenario file")?;
            Scenario::load(p)?
        }
        None => Scenario::default(),
    };
    if let Some(seed) = seed {
        scn.seed = seed;
    }
    scn.validate()?;
    Ok(scn)
}

fn print_resolved(cfg: &Config, scn: Option<&Scenario>) {
    eprintln!("# seed = {}", cfg.seed);
    eprintln!("# resolved config\n{}", cfg.to_toml_string().trim_end());
    if let Some(scn) = scn {
        eprintln!("# resolved scenario (seed {})\n{}", scn.seed, scn.to_toml_string().trim_end());
    }
}

fn load_model(path: &Path) -> Result<Model> {
    require_file(path, "checkpoint")?;
    Model::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let dims = FrameDims::from(&cfg);
    match &cli.cmd {
        Command::GenData {
            scenario,
            episodes,
            egos,
            stride,
            out,
        } => {
            let scn = load_scenario(scenario.as_deref(), cli.seed)?;
            print_resolved(&cfg, Some(&scn));
            let opts = DatasetOptions {
                episodes: *episodes,
                egos_per_episode: *egos,
                stride_steps: *stride,
            };
            let frames = generate_dataset(&scn, &cfg, &opts)?;
            let n = write_frames(out, &frames)?;
            println!("wrote {n} frames from {episodes} episodes to {}", out.display());
        }
        Command::Train {
            data,
            out,
            steps,
            lr,
            resume,
            max_val_frames,
        } => {
            let mut cfg = cfg.clone();
            if let Some(s) = steps {
                cfg.train_steps = *s;
            }
            if let Some(lr) = lr {
                cfg.lr = *lr;
            }
            let cfg = validate_config(cfg)?;
            print_resolved(&cfg, None);
            require_file(data, "frame file")?;
            let frames = load_frames(data, dims)?;
            let init = resume.as_deref().map(load_model).transpose()?;
            std::fs::create_dir_all(out)?;
            let opts = TrainOptions {
                checkpoint_dir: Some(out.join("checkpoints")),
                max_val_frames: *max_val_frames,
                init,
            };
            let (model, report) = train(&frames, &cfg, opts)?;
            model.save(&out.join("model.bin"))?;
            std::fs::write(out.join("train_report.csv"), report.to_csv())?;
            let meta = serde_json::json!({ "wall_clock_s": report.wall_clock_s, "frames": frames.len() });
            std::fs::write(out.join("train_meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
            std::fs::write(out.join("epochs.json"), serde_json::to_string_pretty(&report.epochs)? + "\n")?;
            let first = report.steps.first().map_or(f64::NAN, |s| s.loss_total);
            let last = report.steps.last().map_or(f64::NAN, |s| s.loss_total);
            println!("trained {} steps: loss {first:.4} -> {last:.4}; model at {}", report.steps.len(), out.join("model.bin").display());
        }
        Command::Predict { data, checkpoint, out, json } => {
            print_resolved(&cfg, None);
            require_file(data, "frame file")?;
            let frames = load_frames(data, dims)?;
            let model = match checkpoint {
                Some(p) => load_model(p)?,
                None => {
                    let mut m = Model::new(socialmpc::model::ModelConfig::from_config(&cfg), cfg.seed)?;
                    m.zero_heads();
                    m
                }
            };
            std::fs::create_dir_all(out)?;
            let mut lines = String::new();
            for f in &frames {
                let paths = predicted_trajectories(&model, f, cfg.v_floor)?;
                lines.push_str(&serde_json::to_string(&serde_json::json!({ "frame_id": f.frame_id, "trajectories": paths }))?);
                lines.push('\n');
            }
            std::fs::write(out.join("predictions.jsonl"), lines)?;
            let refs: Vec<_> = frames.iter().collect();
            let scores = evaluate_predictions(&model, &refs, cfg.v_floor)?;
            let table = report::error_table(&scores, cfg.dt);
            report::write_csv(&out.join("errors.csv"), &table)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&table)?);
            } else {
                report::print_error_table(&table);
            }
        }
        Command::Plan {
            data,
            frame,
            checkpoint,
            v_des,
            y_des,
            out,
        } => {
            print_resolved(&cfg, None);
            require_file(data, "frame file")?;
            let frames = load_frames(data, dims)?;
            let Some(f) = frames.get(*frame) else {
                return Err(invalid(format!("frame index {frame} out of range ({} frames)", frames.len())));
            };
            let model = checkpoint.as_deref().map(load_model).transpose()?;
            let predictor = match &model {
                Some(m) => Predictor::Learned(m),
                None => Predictor::Physics,
            };
            let now = f.current_state().ego;
            let w = CostWeights::from_config(&cfg, [0.0, v_des.unwrap_or(now.v), y_des.unwrap_or(now.y), 0.0]);
            let r = plan(f, &predictor, &cfg, &w, None)?;
            let text = serde_json::to_string_pretty(&r.to_record())? + "\n";
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
            eprintln!("plan {:?} (qp {:?}), objective {:.4}", r.status, r.qp_status, r.objective);
        }
        Command::Simulate {
            scenario,
            planner,
            checkpoint,
            physics,
            episodes,
            out,
        } => {
            let scn = load_scenario(scenario.as_deref(), cli.seed)?;
            print_resolved(&cfg, Some(&scn));
            let model = match (planner, checkpoint, physics) {
                (PlannerArg::Mpcformer, Some(p), false) => Some(load_model(p)?),
                (PlannerArg::Mpcformer, None, false) => bail!(invalid("the mpcformer planner needs --checkpoint or --physics")),
                (PlannerArg::Mpcformer, Some(_), true) => bail!(invalid("--checkpoint and --physics are exclusive")),
                _ => None,
            };
            let ego = match (planner, &model) {
                (PlannerArg::Pas, _) => EgoPlanner::Pas,
                (PlannerArg::Mpcformer, Some(m)) => EgoPlanner::MpcFormer(Predictor::Learned(m)),
                (PlannerArg::Mpcformer, None) => EgoPlanner::MpcFormer(Predictor::Physics),
            };
            std::fs::create_dir_all(out)?;
            let summaries = simulate_all(&scn, &ego, &cfg, *episodes, out)?;
            for (i, s) in summaries.iter().enumerate() {
                println!("episode {i:04} seed {:>20} {:<9} t={:.1}s lane changes {}", s.0, s.1, s.2, s.3);
            }
        }
        Command::Evaluate { logs, out, json, csv } => {
            print_resolved(&cfg, None);
            for d in logs {
                if !d.is_dir() {
                    return Err(invalid(format!("log directory not found: {}", d.display())));
                }
            }
            let (json, csv) = if !json && !csv { (true, true) } else { (*json, *csv) };
            report::evaluate(logs, out, &cfg, json, csv)?;
        }
    }
    Ok(())
}

type EpisodeLine = (u64, String, f64, usize);

/// Runs episodes on worker threads; files and the returned lines are in episode order.
fn simulate_all(scn: &Scenario, ego: &EgoPlanner, cfg: &Config, episodes: usize, out: &Path) -> Result<Vec<EpisodeLine>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(episodes.max(1));
    let mut results: Vec<Option<Result<EpisodeLine>>> = (0..episodes).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..episodes)
                        .step_by(workers)
                        .map(|i| {
                            let e = episode_scenario(scn, i);
                            let log = run_episode(&e, ego, cfg)?;
                            write_episode(out, &format!("ep_{i:04}"), &log)?;
                            let sm = &log.summary;
                            Ok((i, (e.seed, format!("{:?}", sm.outcome).to_lowercase(), sm.end_time, sm.lane_changes.len())))
                        })
                        .collect::<Vec<Result<(usize, EpisodeLine)>>>()
                })
            })
            .collect();
        for h in handles {
            for r in h.join().expect("episode worker panicked") {
                match r {
                    Ok((i, line)) => results[i] = Some(Ok(line)),
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(())
    })?;
    results.into_iter().map(|r| r.expect("every episode ran")).collect()
}
