//! Closed-loop episodes: ego planners, outcome detection and episode logs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::frames::observation_frame;
use super::idm::LaneDecision;
use super::world::{LaneChange, VehicleSnapshot, World, DECISION_STEPS, LANE_CHANGE_S};
use super::Scenario;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::planner::{plan, CostWeights, PlanResult, PlanStatus, Predictor};
use crate::qp::QpStatus;
use crate::types::ControlInput;

/// Extra MOBIL incentive toward the ramp lane far from the exit, m/s^2. It grows as
/// `1 + lanes_left * ROUTE_URGENCY / distance_to_exit`.
pub const ROUTE_BIAS: f64 = 1.0;
/// m.
pub const ROUTE_URGENCY: f64 = 100.0;
/// Lateral tracking gains of the rule-based driver, 1/s.
const K_Y: f64 = 1.0;
const K_PSI: f64 = 2.0;
/// Distance to a lane center within which the ego counts as settled in that lane, m.
const SETTLED: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    Collision,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub status: PlanStatus,
    pub qp_status: QpStatus,
    pub objective: f64,
    pub dynamics_residual: f64,
    /// Smallest active separation margin; `None` without active rows.
    pub min_active_margin: Option<f64>,
    pub qp_iterations: usize,
    pub used_enumeration: bool,
}

impl PlanStats {
    fn of(r: &PlanResult) -> Self {
        let m = r.min_separation_margin();
        Self {
            status: r.status,
            qp_status: r.qp_status,
            objective: r.objective,
            dynamics_residual: r.dynamics_residual,
            min_active_margin: m.is_finite().then_some(m),
            qp_iterations: r.qp_iterations,
            used_enumeration: r.used_enumeration,
        }
    }
}

/// World state at one step and the ego control applied from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub t: f64,
    /// Ego first.
    pub vehicles: Vec<VehicleSnapshot>,
    pub ego_control: [f64; 2],
    /// Bumper gap to the leader in the ego's lane over ego speed, s.
    pub headway: Option<f64>,
    pub plan: Option<PlanStats>,
}

impl StepLog {
    pub fn ego(&self) -> &VehicleSnapshot {
        &self.vehicles[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChangeEvent {
    pub from_lane: usize,
    pub to_lane: usize,
    pub start_step: usize,
    pub end_step: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl LaneChangeEvent {
    pub fn distance(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub scenario: Scenario,
    pub planner: String,
    pub outcome: Outcome,
    pub end_step: usize,
    pub end_time: f64,
    pub spawned: usize,
    pub collision_pair: Option<(u32, u32)>,
    pub lane_changes: Vec<LaneChangeEvent>,
    pub plan_calls: usize,
    pub degraded_plans: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub summary: EpisodeSummary,
    pub steps: Vec<StepLog>,
}

/// How the ego is driven once the warmup ends.
#[derive(Debug, Clone, Copy)]
pub enum EgoPlanner<'a> {
    /// IDM with MOBIL lane changes biased toward the ramp lane.
    Pas,
    /// Socially-aware MPC with the given interaction predictor.
    MpcFormer(Predictor<'a>),
}

impl EgoPlanner<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            EgoPlanner::Pas => "pas",
            EgoPlanner::MpcFormer(_) => "mpcformer",
        }
    }
}

/// Rule-based ego: IDM speed control, MOBIL lane choice with a route incentive, and a
/// quintic lateral path tracked by proportional steering.
#[derive(Debug, Clone, PartialEq)]
pub struct PasDriver {
    pub target_lane: usize,
    /// Position the target lane must be reached by.
    pub exit_s: f64,
    pub allow_changes: bool,
    pub change: Option<LaneChange>,
}

impl PasDriver {
    pub fn new(target_lane: usize, exit_s: f64) -> Self {
        Self {
            target_lane,
            exit_s,
            allow_changes: true,
            change: None,
        }
    }

    pub fn lane_keeping(lane: usize) -> Self {
        Self {
            target_lane: lane,
            exit_s: f64::INFINITY,
            allow_changes: false,
            change: None,
        }
    }

    /// Control for the world's ego at the current step.
    pub fn step(&mut self, world: &World, cfg: &Config) -> ControlInput {
        let ego = world.ego().expect("world has an ego");
        let road = &world.road;
        let lane = road.lane_of(ego.state.y);
        if self.allow_changes && self.change.is_none() && lane != self.target_lane && world.step % DECISION_STEPS == 0 {
            let left = lane.abs_diff(self.target_lane) as f64;
            let b = ROUTE_BIAS * (1.0 + left * ROUTE_URGENCY / (self.exit_s - ego.state.s).max(10.0));
            let (toward, bias) = if self.target_lane < lane {
                (LaneDecision::Right, [f64::NEG_INFINITY, b])
            } else {
                (LaneDecision::Left, [b, f64::NEG_INFINITY])
            };
            if world.lane_decision(0, lane, bias) == toward {
                let to = if toward == LaneDecision::Right { lane - 1 } else { lane + 1 };
                self.change = Some(LaneChange::new(lane, to, ego.state.y, road.center(to), LANE_CHANGE_S));
            }
        }
        let mut mask = world.lane_mask(ego);
        if let Some(c) = &self.change {
            mask |= 1 << c.to;
        }
        let accel = world.idm_accel_in(0, mask).clamp(cfg.a_min, cfg.a_max);
        let (y_ref, y_rate) = match &mut self.change {
            Some(c) => {
                c.elapsed += world.dt;
                let r = c.lateral(c.elapsed);
                if c.done() {
                    self.change = None;
                }
                r
            }
            None => (road.center(lane), 0.0),
        };
        let v = ego.state.v.max(1.0);
        let psi_cmd = ((y_rate + K_Y * (y_ref - ego.state.y)) / v).atan().clamp(-cfg.psi_max, cfg.psi_max);
        let steer = (ego.params.wheelbase() * K_PSI * (psi_cmd - ego.state.psi) / v).clamp(-cfg.steer_max, cfg.steer_max);
        ControlInput::new(accel, steer)
    }
}

/// One rolling-horizon cycle: plan from the current observation and return the first
/// control together with the plan.
pub fn mpc_cycle(world: &World, predictor: &Predictor, cfg: &Config, scn: &Scenario, warm: Option<&PlanResult>) -> Result<PlanResult> {
    let ego = world.ego().expect("world has an ego");
    let lane = world.road.lane_of(ego.state.y);
    let next = match lane.cmp(&scn.target_lane) {
        std::cmp::Ordering::Greater => lane - 1,
        std::cmp::Ordering::Less => lane + 1,
        std::cmp::Ordering::Equal => lane,
    };
    let obs = observation_frame(world, cfg.history, cfg.map_waypoints, cfg.map_spacing);
    let w = CostWeights::from_config(cfg, [0.0, scn.ego_v_des, world.road.center(next), 0.0]);
    plan(&obs, predictor, cfg, &w, warm)
}

fn headway(world: &World) -> Option<f64> {
    let ego = world.ego()?;
    if ego.state.v < 0.5 {
        return None;
    }
    let mask = 1 << world.road.lane_of(ego.state.y);
    let j = world.nearest(0, mask, true)?;
    let l = &world.vehicles[j];
    let gap = l.state.s - ego.state.s - 0.5 * (l.params.length + ego.params.length);
    Some(gap / ego.state.v)
}

fn outcome(world: &World, scn: &Scenario) -> Option<(Outcome, Option<(u32, u32)>)> {
    if let Some(pair) = world.collision() {
        return Some((Outcome::Collision, Some(pair)));
    }
    let ego = world.ego().expect("world has an ego");
    let (s, y) = (ego.state.s, ego.state.y);
    let slack = 0.5 * (world.road.lane_width - ego.params.width);
    let in_target = (y - world.road.center(scn.target_lane)).abs() <= slack;
    if in_target && s >= scn.ramp_start && s < scn.ramp_end {
        return Some((Outcome::Success, None));
    }
    if s >= scn.ramp_end || !world.road.on_road(y) {
        return Some((Outcome::Failure, None));
    }
    None
}

/// Ego lane changes from the logged lateral positions: each move from being settled in
/// one lane to being settled in another.
pub fn lane_change_events(steps: &[StepLog], scn: &Scenario) -> Vec<LaneChangeEvent> {
    let road = scn.road();
    let settled = |y: f64| {
        let l = road.lane_of(y);
        ((y - road.center(l)).abs() <= SETTLED).then_some(l)
    };
    let mut events = Vec::new();
    let mut last: Option<(usize, usize)> = None;
    for (k, st) in steps.iter().enumerate() {
        let Some(l) = settled(st.ego().y) else { continue };
        if let Some((lane, at)) = last {
            if l != lane {
                events.push(LaneChangeEvent {
                    from_lane: lane,
                    to_lane: l,
                    start_step: steps[at].step,
                    end_step: st.step,
                    start_s: steps[at].ego().s,
                    end_s: st.ego().s,
                });
            }
        }
        last = Some((l, k));
    }
    events
}

/// Runs one closed-loop episode. The ego keeps its lane with IDM for the warmup, then
/// the chosen planner drives until success, failure, collision or the horizon.
pub fn run_episode(scn: &Scenario, planner: &EgoPlanner, cfg: &Config) -> Result<EpisodeLog> {
    scn.validate()?;
    let mut world = World::new(scn, cfg.dt, true)?;
    let warmup = (scn.warmup_s / cfg.dt).round() as usize;
    let horizon = (scn.horizon_s / cfg.dt).round() as usize;
    let mut keeper = PasDriver::lane_keeping(scn.ego_lane);
    let mut pas = PasDriver::new(scn.target_lane, scn.ramp_end);
    let mut warm: Option<PlanResult> = None;
    let mut steps = Vec::new();
    let (mut plan_calls, mut degraded) = (0, 0);
    let (result, pair) = loop {
        if let Some(o) = outcome(&world, scn) {
            break o;
        }
        if world.step >= horizon {
            break (Outcome::Failure, None);
        }
        let mut stats = None;
        let u = if world.step < warmup {
            keeper.step(&world, cfg)
        } else {
            match planner {
                EgoPlanner::Pas => pas.step(&world, cfg),
                EgoPlanner::MpcFormer(pred) => {
                    let r = mpc_cycle(&world, pred, cfg, scn, warm.as_ref())?;
                    plan_calls += 1;
                    if r.status == PlanStatus::Degraded {
                        degraded += 1;
                    }
                    stats = Some(PlanStats::of(&r));
                    let u = r.first_control();
                    warm = Some(r);
                    u
                }
            }
        };
        steps.push(StepLog {
            step: world.step,
            t: world.time(),
            vehicles: world.snapshot(),
            ego_control: u.to_array(),
            headway: headway(&world),
            plan: stats,
        });
        world.advance(Some(u))?;
    };
    steps.push(StepLog {
        step: world.step,
        t: world.time(),
        vehicles: world.snapshot(),
        ego_control: [0.0, 0.0],
        headway: headway(&world),
        plan: None,
    });
    let lane_changes = lane_change_events(&steps, scn);
    Ok(EpisodeLog {
        summary: EpisodeSummary {
            scenario: scn.clone(),
            planner: planner.name().to_string(),
            outcome: result,
            end_step: world.step,
            end_time: world.time(),
            spawned: world.spawned,
            collision_pair: pair,
            lane_changes,
            plan_calls,
            degraded_plans: degraded,
        },
        steps,
    })
}

fn episode_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.jsonl")), dir.join(format!("{name}.summary.json")))
}

/// Writes `<name>.jsonl` (one step per line) and `<name>.summary.json` into `dir`.
pub fn write_episode(dir: &Path, name: &str, log: &EpisodeLog) -> Result<()> {
    let (steps_path, summary_path) = episode_paths(dir, name);
    let mut w = BufWriter::new(File::create(steps_path)?);
    for st in &log.steps {
        serde_json::to_writer(&mut w, st)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let mut s = serde_json::to_string_pretty(&log.summary)?;
    s.push('\n');
    std::fs::write(summary_path, s)?;
    Ok(())
}

pub fn read_episode(dir: &Path, name: &str) -> Result<EpisodeLog> {
    let (steps_path, summary_path) = episode_paths(dir, name);
    let summary: EpisodeSummary = serde_json::from_str(&std::fs::read_to_string(&summary_path)?)?;
    let reader = BufReader::new(File::open(&steps_path)?);
    let mut steps = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: steps_path.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(EpisodeLog { summary, steps })
}
