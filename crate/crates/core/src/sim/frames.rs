//! Frames cut from simulated tracks: neighbor slots, lane maps, history and future.

use std::collections::BTreeMap;

use super::world::{Road, Track, World};
use crate::frame::{Frame, LaneMap, TrackPoint, VehicleTrack, Waypoint};
use crate::types::{Slot, VehicleParams};

/// Longitudinal sensing range for neighbor slots, m.
pub const SENSING_RANGE: f64 = 80.0;

/// Ids in `Slot::SURROUNDING` order around `subject` at `step`. Lanes come from the
/// vehicles' center positions; same-`s` vehicles count as in front.
pub fn neighbor_slots(road: &Road, tracks: &BTreeMap<u32, Track>, subject: u32, step: usize) -> [Option<u32>; 6] {
    let mut out: [Option<(f64, u32)>; 6] = [None; 6];
    let Some(me) = tracks.get(&subject).and_then(|t| t.at(step)) else {
        return [None; 6];
    };
    let lane = road.lane_of(me[1]) as isize;
    for (&id, t) in tracks {
        if id == subject {
            continue;
        }
        let Some(p) = t.at(step) else { continue };
        let ds = p[0] - me[0];
        if ds.abs() > SENSING_RANGE {
            continue;
        }
        let base = match road.lane_of(p[1]) as isize - lane {
            0 => 0,
            1 => 2,
            -1 => 4,
            _ => continue,
        };
        let slot = if ds >= 0.0 { base } else { base + 1 };
        if out[slot].is_none_or(|(d, _)| ds.abs() < d) {
            out[slot] = Some((ds.abs(), id));
        }
    }
    out.map(|o| o.map(|(_, id)| id))
}

/// Current, left and right lane centerlines ahead of a vehicle at lateral position `y`.
pub fn lane_map(road: &Road, y: f64, waypoints: usize, spacing: f64) -> LaneMap {
    let lane = road.lane_of(y) as isize;
    let line = |l: isize| -> Vec<Waypoint> {
        let exists = l >= 0 && (l as usize) < road.lanes;
        (0..waypoints)
            .map(|k| {
                if exists {
                    [k as f64 * spacing, road.center(l as usize) - y, 0.0, 1.0]
                } else {
                    [0.0; 4]
                }
            })
            .collect()
    };
    LaneMap {
        current: line(lane),
        left: line(lane + 1),
        right: line(lane - 1),
    }
}

fn vehicle_track(slot: Slot, history: Vec<TrackPoint>, future: Vec<TrackPoint>, road: &Road, waypoints: usize, spacing: f64) -> VehicleTrack {
    let y = history.last().expect("non-empty history")[1];
    VehicleTrack {
        slot,
        present: true,
        params: VehicleParams::default(),
        history,
        future,
        map: lane_map(road, y, waypoints, spacing),
    }
}

/// `history` points ending at `step`; steps before the track starts are extrapolated
/// backwards at the first recorded speed.
fn padded_history(t: &Track, step: usize, history: usize, dt: f64) -> Vec<TrackPoint> {
    let first = t.points[0];
    (0..history)
        .map(|k| {
            let back = history - 1 - k;
            match step.checked_sub(back).and_then(|j| t.at(j)) {
                Some(p) => *p,
                None => {
                    let missing = (t.first_step + back) as f64 - step as f64;
                    [first[0] - first[2] * dt * missing, first[1], first[2], 0.0, first[4]]
                }
            }
        })
        .collect()
}

/// Planning observation for the world's ego at the current step (no future).
pub fn observation_frame(world: &World, history: usize, waypoints: usize, spacing: f64) -> Frame {
    let step = world.step;
    let ego = world.ego().expect("world has an ego").id;
    let slots = neighbor_slots(&world.road, &world.tracks, ego, step);
    let track = |slot: Slot, id: u32| {
        let t = &world.tracks[&id];
        vehicle_track(slot, padded_history(t, step, history, world.dt), vec![], &world.road, waypoints, spacing)
    };
    let mut vehicles = vec![track(Slot::Ego, ego)];
    for (slot, id) in Slot::SURROUNDING.iter().zip(slots) {
        vehicles.push(match id {
            Some(id) => track(*slot, id),
            None => VehicleTrack::absent(*slot),
        });
    }
    Frame {
        frame_id: format!("obs-{step}"),
        dt: world.dt,
        vehicles,
    }
}

/// Training frame for `subject` whose current time is `step`: `history` points ending at
/// `step` and `horizon` points after it. `None` when the subject's track does not cover
/// the window; neighbors that do not cover it are left absent.
#[allow(clippy::too_many_arguments)]
pub fn window_frame(
    road: &Road,
    tracks: &BTreeMap<u32, Track>,
    subject: u32,
    step: usize,
    history: usize,
    horizon: usize,
    waypoints: usize,
    spacing: f64,
    dt: f64,
    frame_id: String,
) -> Option<Frame> {
    let from = (step + 1).checked_sub(history)?;
    let to = step + horizon;
    let cut = |id: u32| -> Option<(Vec<TrackPoint>, Vec<TrackPoint>)> {
        let t = tracks.get(&id)?;
        t.covers(from, to).then(|| {
            let pts = &t.points[from - t.first_step..=to - t.first_step];
            (pts[..history].to_vec(), pts[history..].to_vec())
        })
    };
    let (h, f) = cut(subject)?;
    let mut vehicles = vec![vehicle_track(Slot::Ego, h, f, road, waypoints, spacing)];
    let slots = neighbor_slots(road, tracks, subject, step);
    for (slot, id) in Slot::SURROUNDING.iter().zip(slots) {
        vehicles.push(match id.and_then(cut) {
            Some((h, f)) => vehicle_track(*slot, h, f, road, waypoints, spacing),
            None => VehicleTrack::absent(*slot),
        });
    }
    Some(Frame { frame_id, dt, vehicles })
}
