//! User movement: static users, random waypoint, and playback of GPS-style
//! traces already projected into local meters.
//!
//! Trace files are CSV with header `user_id,timestamp,x,y`; lines starting
//! with `#` are ignored. Timestamps must strictly increase per user.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{Bounds, Position3, UserState};

pub const TRACE_HEADER: [&str; 4] = ["user_id", "timestamp", "x", "y"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub user_id: usize,
    pub timestamp: f64,
    pub x: f64,
    pub y: f64,
}

/// Per-user trajectories, each sorted by timestamp.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceSet {
    pub trajectories: BTreeMap<usize, Vec<TraceRecord>>,
}

impl TraceSet {
    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn user_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.trajectories.keys().copied()
    }

    /// Builds a trace set, enforcing strictly increasing timestamps per user.
    pub fn from_records(records: impl IntoIterator<Item = TraceRecord>) -> Result<Self> {
        let mut trajectories: BTreeMap<usize, Vec<TraceRecord>> = BTreeMap::new();
        for r in records {
            let traj = trajectories.entry(r.user_id).or_default();
            if let Some(last) = traj.last() {
                if r.timestamp <= last.timestamp {
                    let what = if r.timestamp == last.timestamp {
                        "duplicate"
                    } else {
                        "non-monotone"
                    };
                    return Err(Error::Validation(format!(
                        "user {}: {what} timestamp {} after {}",
                        r.user_id, r.timestamp, last.timestamp
                    )));
                }
            }
            traj.push(r);
        }
        Ok(Self { trajectories })
    }
}

pub fn parse_trace<R: Read>(reader: R) -> Result<TraceSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut records = Vec::new();
    let mut seen_header = false;
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if !seen_header {
            if row.iter().ne(TRACE_HEADER) {
                return Err(Error::Parse {
                    line,
                    message: format!("expected header `{}`", TRACE_HEADER.join(",")),
                });
            }
            seen_header = true;
            continue;
        }
        if row.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 fields, found {}", row.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = row[i].parse().map_err(|_| Error::Parse {
                line,
                message: format!("field `{}` is not a number: {:?}", TRACE_HEADER[i], &row[i]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("field `{}` is not finite", TRACE_HEADER[i]),
                });
            }
            Ok(v)
        };
        let user_id = row[0].parse().map_err(|_| Error::Parse {
            line,
            message: format!("user_id is not a non-negative integer: {:?}", &row[0]),
        })?;
        records.push(TraceRecord {
            user_id,
            timestamp: num(1)?,
            x: num(2)?,
            y: num(3)?,
        });
    }
    TraceSet::from_records(records)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<TraceSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(std::io::BufReader::new(file))
}

fn interpolate(traj: &[TraceRecord], t: f64) -> Position3 {
    let first = &traj[0];
    let last = &traj[traj.len() - 1];
    if t <= first.timestamp {
        return Position3::ground(first.x, first.y);
    }
    if t >= last.timestamp {
        return Position3::ground(last.x, last.y);
    }
    // First record strictly after t; exists because t < last.timestamp.
    let hi = traj.partition_point(|r| r.timestamp <= t);
    let (a, b) = (&traj[hi - 1], &traj[hi]);
    let w = (t - a.timestamp) / (b.timestamp - a.timestamp);
    Position3::ground(a.x + w * (b.x - a.x), a.y + w * (b.y - a.y))
}

/// Piecewise-linear position of every traced user at time `t`, clamped to
/// each user's first/last record outside their time span.
pub fn positions_at(traces: &TraceSet, t: f64) -> BTreeMap<usize, Position3> {
    traces
        .trajectories
        .iter()
        .map(|(&id, traj)| (id, interpolate(traj, t)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaypointParams {
    /// m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Seconds spent at each waypoint; `f64::INFINITY` freezes users.
    pub pause: f64,
}

/// Per-user random-waypoint state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointAgent {
    pub waypoint: (f64, f64),
    pub speed: f64,
    pub pause_remaining: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomWaypoint {
    pub params: WaypointParams,
    pub bounds: Bounds,
    pub agents: Vec<WaypointAgent>,
}

impl RandomWaypoint {
    /// Every user starts paused at its current position.
    pub fn new<R: Rng + ?Sized>(params: WaypointParams, bounds: Bounds, n_users: usize, rng: &mut R) -> Self {
        let agents = (0..n_users)
            .map(|_| WaypointAgent {
                waypoint: draw_waypoint(&bounds, rng),
                speed: draw_speed(&params, rng),
                pause_remaining: params.pause,
            })
            .collect();
        Self { params, bounds, agents }
    }
}

fn draw_waypoint<R: Rng + ?Sized>(b: &Bounds, rng: &mut R) -> (f64, f64) {
    (rng.random::<f64>() * b.x_max, rng.random::<f64>() * b.y_max)
}

fn draw_speed<R: Rng + ?Sized>(p: &WaypointParams, rng: &mut R) -> f64 {
    p.speed_min + rng.random::<f64>() * (p.speed_max - p.speed_min)
}

/// Advances every user by `dt` seconds of random-waypoint motion.
pub fn step_random_waypoint<R: Rng + ?Sized>(
    state: &mut RandomWaypoint,
    positions: &mut [Position3],
    dt: f64,
    rng: &mut R,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    if positions.len() != state.agents.len() {
        return Err(Error::Contract(format!(
            "{} positions for {} waypoint agents",
            positions.len(),
            state.agents.len()
        )));
    }
    let RandomWaypoint { params, bounds, agents } = state;
    for (agent, pos) in agents.iter_mut().zip(positions.iter_mut()) {
        let mut remaining = dt;
        while remaining > 0.0 {
            if agent.pause_remaining > 0.0 {
                if agent.pause_remaining >= remaining {
                    agent.pause_remaining -= remaining;
                    break;
                }
                remaining -= agent.pause_remaining;
                agent.pause_remaining = 0.0;
                agent.waypoint = draw_waypoint(bounds, rng);
                agent.speed = draw_speed(params, rng);
            }
            let (dx, dy) = (agent.waypoint.0 - pos.x, agent.waypoint.1 - pos.y);
            let dist = dx.hypot(dy);
            let reach = agent.speed * remaining;
            if reach < dist {
                pos.x += dx / dist * reach;
                pos.y += dy / dist * reach;
                break;
            }
            pos.x = agent.waypoint.0;
            pos.y = agent.waypoint.1;
            remaining -= if agent.speed > 0.0 { dist / agent.speed } else { remaining };
            agent.pause_remaining = params.pause;
            if agent.pause_remaining == 0.0 {
                agent.waypoint = draw_waypoint(bounds, rng);
                agent.speed = draw_speed(params, rng);
                if dist == 0.0 && agent.speed == 0.0 {
                    break;
                }
            }
        }
        let (x, y) = bounds.clamp_ground(pos.x, pos.y);
        pos.x = x;
        pos.y = y;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum MobilityModel {
    Static,
    RandomWaypoint(WaypointParams),
    /// The i-th user (by position in the scenario) follows the i-th trace id.
    TracePlayback(TraceSet),
}

impl MobilityModel {
    pub fn violations(&self, n_users: usize) -> Vec<String> {
        match self {
            MobilityModel::Static => vec![],
            MobilityModel::RandomWaypoint(p) => {
                let mut v = vec![];
                if !(p.speed_min > 0.0 && p.speed_max >= p.speed_min && p.speed_max.is_finite()) {
                    v.push("speed range must be positive with speed_max >= speed_min".into());
                }
                if !(p.pause >= 0.0) {
                    v.push("pause must be non-negative".into());
                }
                v
            }
            MobilityModel::TracePlayback(t) => {
                let mut v = vec![];
                if t.len() < n_users {
                    v.push(format!("trace has {} users, scenario needs {n_users}", t.len()));
                }
                for (id, traj) in &t.trajectories {
                    if traj.len() < 2 {
                        v.push(format!("trace user {id} has fewer than 2 records"));
                    }
                }
                v
            }
        }
    }
}

/// Running mobility process owned by a simulation loop.
#[derive(Debug, Clone)]
pub enum MobilityState {
    Static,
    Waypoint(RandomWaypoint),
    Trace { traces: TraceSet, bounds: Bounds },
}

impl MobilityState {
    pub fn new<R: Rng + ?Sized>(model: &MobilityModel, bounds: Bounds, n_users: usize, rng: &mut R) -> Self {
        match model {
            MobilityModel::Static => MobilityState::Static,
            MobilityModel::RandomWaypoint(p) => MobilityState::Waypoint(RandomWaypoint::new(*p, bounds, n_users, rng)),
            MobilityModel::TracePlayback(t) => MobilityState::Trace {
                traces: t.clone(),
                bounds,
            },
        }
    }

    /// Moves `users` to their positions at time `t` (trace) or by `dt` (waypoint).
    pub fn advance<R: Rng + ?Sized>(&mut self, users: &mut [UserState], t: f64, dt: f64, rng: &mut R) -> Result<()> {
        match self {
            MobilityState::Static => Ok(()),
            MobilityState::Waypoint(rwp) => {
                let mut pos: Vec<Position3> = users.iter().map(|u| u.position).collect();
                step_random_waypoint(rwp, &mut pos, dt, rng)?;
                for (u, p) in users.iter_mut().zip(pos) {
                    u.position = p;
                }
                Ok(())
            }
            MobilityState::Trace { traces, bounds } => {
                place_from_trace(traces, bounds, users, t);
                Ok(())
            }
        }
    }
}

/// Sets user positions from a trace at time `t`, clamped into `bounds`.
pub fn place_from_trace(traces: &TraceSet, bounds: &Bounds, users: &mut [UserState], t: f64) {
    for (user, traj) in users.iter_mut().zip(traces.trajectories.values()) {
        let p = interpolate(traj, t);
        let (x, y) = bounds.clamp_ground(p.x, p.y);
        user.position = Position3::ground(x, y);
    }
}
