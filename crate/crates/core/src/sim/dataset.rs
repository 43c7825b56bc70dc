//! Synthetic training frames from IDM/MOBIL-only traffic.

use rand::seq::index::sample;

use super::frames::window_frame;
use super::world::World;
use super::Scenario;
use crate::config::Config;
use crate::error::Result;
use crate::frame::Frame;
use crate::seed::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetOptions {
    pub episodes: usize,
    /// Vehicles per episode whose windows become frames.
    pub egos_per_episode: usize,
    /// Steps between consecutive windows of one vehicle.
    pub stride_steps: usize,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            episodes: 10,
            egos_per_episode: 4,
            stride_steps: 10,
        }
    }
}

/// Scenario of episode `index` under a root scenario seed.
pub fn episode_scenario(scn: &Scenario, index: usize) -> Scenario {
    Scenario {
        seed: derive_seed(scn.seed, &format!("episode-{index}")),
        ..scn.clone()
    }
}

/// Runs surrounding traffic only, without an ego, for the scenario horizon.
pub fn simulate_traffic(scn: &Scenario, dt: f64) -> Result<World> {
    scn.validate()?;
    let mut world = World::new(scn, dt, false)?;
    let steps = (scn.horizon_s / dt).round() as usize;
    for _ in 0..steps {
        world.advance(None)?;
    }
    Ok(world)
}

/// Frames of the designated vehicles of one simulated episode.
pub fn episode_frames(world: &World, cfg: &Config, opts: &DatasetOptions, root_seed: u64, index: usize) -> Vec<Frame> {
    let (h, n) = (cfg.history, cfg.horizon);
    let candidates: Vec<u32> = world
        .tracks
        .iter()
        .filter(|(_, t)| t.points.len() >= h + n)
        .map(|(&id, _)| id)
        .collect();
    let mut rng = stream_rng(root_seed, &format!("designate-{index}"));
    let k = opts.egos_per_episode.min(candidates.len());
    let mut chosen: Vec<u32> = sample(&mut rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect();
    chosen.sort_unstable();
    let mut frames = Vec::new();
    for id in chosen {
        let t = &world.tracks[&id];
        let last = t.first_step + t.points.len() - 1;
        let mut c = t.first_step + h - 1;
        while c + n <= last {
            let frame_id = format!("e{index}-v{id}-t{c}");
            if let Some(f) = window_frame(&world.road, &world.tracks, id, c, h, n, cfg.map_waypoints, cfg.map_spacing, world.dt, frame_id) {
                frames.push(f);
            }
            c += opts.stride_steps.max(1);
        }
    }
    frames
}

/// Simulates `opts.episodes` traffic episodes and slices them into frames.
pub fn generate_dataset(scn: &Scenario, cfg: &Config, opts: &DatasetOptions) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    for e in 0..opts.episodes {
        let world = simulate_traffic(&episode_scenario(scn, e), cfg.dt)?;
        frames.extend(episode_frames(&world, cfg, opts, scn.seed, e));
    }
    log::info!("generated {} frames from {} episodes", frames.len(), opts.episodes);
    Ok(frames)
}
