//! Multi-agent Q-learning over joint 3D movement and transmit power.
//!
//! Every UAV is an agent with its own [`QTable`] over [`LocalState`]s. All
//! agents receive the normalized instantaneous sum rate as a shared reward,
//! minus a local penalty when they try to leave the flight volume. The global
//! value is the unit-weight sum of the local values, so per-agent greedy
//! choices maximize it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, Association, ChannelParams, LossMode};
use crate::error::{Error, Result};
use crate::mobility::{MobilityModel, MobilityState};
use crate::qtable::{self, QTable};
use crate::reservoir::PositionForecaster;
use crate::seed::rng_for;
use crate::world::{validate_scenario, Cell2, CellIndex, Grid, Position3, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Move {
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+y")]
    PosY,
    #[serde(rename = "-y")]
    NegY,
    #[serde(rename = "+z")]
    PosZ,
    #[serde(rename = "-z")]
    NegZ,
    #[serde(rename = "hover")]
    Hover,
}

impl Move {
    pub const ALL: [Move; 7] = [Move::PosX, Move::NegX, Move::PosY, Move::NegY, Move::PosZ, Move::NegZ, Move::Hover];

    /// Unit displacement in cells.
    pub fn delta(self) -> (f64, f64, f64) {
        match self {
            Move::PosX => (1.0, 0.0, 0.0),
            Move::NegX => (-1.0, 0.0, 0.0),
            Move::PosY => (0.0, 1.0, 0.0),
            Move::NegY => (0.0, -1.0, 0.0),
            Move::PosZ => (0.0, 0.0, 1.0),
            Move::NegZ => (0.0, 0.0, -1.0),
            Move::Hover => (0.0, 0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionSpec {
    #[serde(rename = "move")]
    pub mv: Move,
    pub power_level_index: usize,
}

/// All actions, moves outer and power levels inner:
/// `(+x,0), (+x,1), …, (hover, L-1)`.
pub fn enumerate_actions(params: &ChannelParams) -> Vec<ActionSpec> {
    Move::ALL
        .iter()
        .flat_map(|&mv| (0..params.power_ladder.len()).map(move |p| ActionSpec { mv, power_level_index: p }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocalState {
    pub uav_cell: CellIndex,
    pub power_level_index: usize,
    /// Ground cell of the (predicted) centroid of the UAV's associated users.
    pub user_summary_cell: Cell2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Per-episode multiplicative decay of ε.
    pub epsilon_decay: f64,
    pub episodes: usize,
    pub slots_per_episode: usize,
    /// Reward penalty per attempted boundary crossing.
    pub boundary_penalty: f64,
    /// Sum-rate normalization (bit/s); `None` uses the static centroid
    /// baseline's slot-0 sum rate.
    pub rate_norm: Option<f64>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.95,
            episodes: 100,
            slots_per_episode: 200,
            boundary_penalty: 0.5,
            rate_norm: None,
        }
    }
}

impl HyperParams {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            v.push(format!("{prefix}.alpha: must lie in (0, 1]"));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            v.push(format!("{prefix}.gamma: must lie in [0, 1)"));
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                v.push(format!("{prefix}.{name}: must lie in [0, 1]"));
            }
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            v.push(format!("{prefix}.epsilon_decay: must lie in (0, 1]"));
        }
        if self.slots_per_episode == 0 {
            v.push(format!("{prefix}.slots_per_episode: must be at least 1"));
        }
        if !(self.boundary_penalty >= 0.0 && self.boundary_penalty.is_finite()) {
            v.push(format!("{prefix}.boundary_penalty: must be non-negative"));
        }
        if let Some(r) = self.rate_norm {
            if !(r > 0.0 && r.is_finite()) {
                v.push(format!("{prefix}.rate_norm: must be positive"));
            }
        }
        v
    }

    /// Exploration rate used throughout `episode`.
    pub fn epsilon(&self, episode: usize) -> f64 {
        (self.epsilon_start * self.epsilon_decay.powi(episode as i32)).max(self.epsilon_end)
    }
}

/// One simulated slot, sufficient to recompute its rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub episode: usize,
    pub slot: usize,
    pub actions: Vec<ActionSpec>,
    pub uav_positions: Vec<Position3>,
    pub power_levels: Vec<usize>,
    pub user_positions: Vec<Position3>,
    /// Serving UAV id per user, in user order.
    pub association: Vec<usize>,
    pub per_user_rates: Vec<f64>,
    pub sum_rate: f64,
    pub rate_norm: f64,
    pub violations: Vec<usize>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub epsilon: f64,
    pub rows: Vec<SlotRecord>,
    pub mean_sum_rate: f64,
    /// Sum over slots of the agents' mean reward.
    pub cumulative_reward: f64,
}

impl EpisodeLog {
    fn from_rows(episode: usize, epsilon: f64, rows: Vec<SlotRecord>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_sum_rate = rows.iter().map(|r| r.sum_rate).sum::<f64>() / n;
        let cumulative_reward = rows
            .iter()
            .map(|r| r.rewards.iter().sum::<f64>() / r.rewards.len().max(1) as f64)
            .sum();
        Self {
            episode,
            epsilon,
            rows,
            mean_sum_rate,
            cumulative_reward,
        }
    }
}

/// Mean of the per-episode mean sum rates over the final `fraction` of
/// `logs` (at least one episode).
pub fn tail_mean_sum_rate(logs: &[EpisodeLog], fraction: f64) -> f64 {
    if logs.is_empty() {
        return 0.0;
    }
    let k = ((logs.len() as f64 * fraction).ceil() as usize).clamp(1, logs.len());
    logs[logs.len() - k..].iter().map(|l| l.mean_sum_rate).sum::<f64>() / k as f64
}

/// Mean of the per-episode mean sum rates over the first `fraction` of `logs`.
pub fn head_mean_sum_rate(logs: &[EpisodeLog], fraction: f64) -> f64 {
    if logs.is_empty() {
        return 0.0;
    }
    let k = ((logs.len() as f64 * fraction).ceil() as usize).clamp(1, logs.len());
    logs[..k].iter().map(|l| l.mean_sum_rate).sum::<f64>() / k as f64
}

fn centroid<'a>(points: impl Iterator<Item = &'a Position3>) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        sx += p.x;
        sy += p.y;
        n += 1;
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

/// Local state of `uav`: its cell, its power level, and the ground cell of
/// the centroid of its associated users' predicted positions (all users'
/// centroid when it serves nobody).
pub fn encode_local_state(
    uav: &crate::world::UavState,
    predicted_positions: &[Position3],
    association: &Association,
    s: &Scenario,
    grid: &Grid,
) -> Result<LocalState> {
    let served = s
        .users
        .iter()
        .zip(predicted_positions)
        .filter(|(u, _)| association.get(&u.id) == Some(&uav.id))
        .map(|(_, p)| p);
    let (cx, cy) = match centroid(served) {
        Some(c) => c,
        None => centroid(predicted_positions.iter()).unwrap_or((0.0, 0.0)),
    };
    Ok(LocalState {
        uav_cell: grid.snap(&uav.position)?,
        power_level_index: uav.power_level_index,
        user_summary_cell: grid.snap_2d(cx, cy),
    })
}

/// Association and rates for the scenario's current geometry.
fn evaluate(s: &Scenario, rng: &mut ChaCha8Rng) -> Result<(Association, channel::RateReport)> {
    let expected = channel::expected_gain_matrix(s)?;
    let assoc = channel::associate_from_gains(s, &expected, &[]);
    let report = match s.channel.mode {
        LossMode::Expected => channel::sum_rate_from_gains(s, &assoc, &expected)?,
        LossMode::Sampled => channel::sum_rate(s, &assoc, Some(rng))?,
    };
    Ok((assoc, report))
}

fn set_serving(s: &mut Scenario, assoc: &Association) {
    for u in &mut s.users {
        u.serving_uav = assoc.get(&u.id).copied();
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: Scenario,
    pub association: Association,
    pub rewards: Vec<f64>,
    pub row: SlotRecord,
}

/// Runtime randomness for one episode.
pub struct EpisodeRngs {
    pub mobility: ChaCha8Rng,
    pub channel: ChaCha8Rng,
}

impl EpisodeRngs {
    pub fn new(seed: u64, episode: usize) -> Self {
        let ep = episode.to_string();
        Self {
            mobility: rng_for(seed, &["mobility", &ep]),
            channel: rng_for(seed, &["channel", &ep]),
        }
    }
}

/// Moves every UAV one cell (or hovers), sets its power, advances users and
/// the clock, re-associates, and scores the slot.
///
/// Moves that would leave the flight volume keep the UAV in place and cost
/// that agent `boundary_penalty`. All agents share `sum_rate / rate_norm`.
#[allow(clippy::too_many_arguments)]
pub fn apply_joint_action(
    s: &Scenario,
    joint: &[ActionSpec],
    mobility: &mut MobilityState,
    rngs: &mut EpisodeRngs,
    rate_norm: f64,
    boundary_penalty: f64,
    episode: usize,
) -> Result<StepOutcome> {
    if joint.len() != s.uavs.len() {
        return Err(Error::Contract(format!(
            "{} actions for {} UAVs",
            joint.len(),
            s.uavs.len()
        )));
    }
    let mut next = s.clone();
    let mut violations = vec![0usize; s.uavs.len()];
    for ((uav, action), viol) in next.uavs.iter_mut().zip(joint).zip(violations.iter_mut()) {
        if action.power_level_index >= s.channel.power_ladder.len() {
            return Err(Error::Contract(format!("power level {} not in ladder", action.power_level_index)));
        }
        let (dx, dy, dz) = action.mv.delta();
        let h = s.cell_size;
        let target = Position3::new(uav.position.x + dx * h, uav.position.y + dy * h, uav.position.z + dz * h);
        if s.bounds.contains_air(&target) {
            uav.position = target;
        } else {
            *viol = 1;
        }
        uav.power_level_index = action.power_level_index;
    }
    next.clock.slot += 1;
    mobility.advance(&mut next.users, next.clock.time(), s.clock.slot_duration, &mut rngs.mobility)?;
    let (association, report) = evaluate(&next, &mut rngs.channel)?;
    set_serving(&mut next, &association);
    let shared = report.sum_rate / rate_norm;
    let rewards: Vec<f64> = violations.iter().map(|&v| shared - boundary_penalty * v as f64).collect();
    let row = SlotRecord {
        episode,
        slot: s.clock.slot as usize,
        actions: joint.to_vec(),
        uav_positions: next.uavs.iter().map(|u| u.position).collect(),
        power_levels: next.uavs.iter().map(|u| u.power_level_index).collect(),
        user_positions: next.user_positions(),
        association: next.users.iter().map(|u| u.serving_uav.unwrap_or(usize::MAX)).collect(),
        per_user_rates: report.per_user,
        sum_rate: report.sum_rate,
        rate_norm,
        violations,
        rewards: rewards.clone(),
    };
    Ok(StepOutcome {
        next,
        association,
        rewards,
        row,
    })
}

/// Static UAV placement for the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// k-means split of the initial user positions, one cluster per UAV.
    Centroid,
    Fixed(Vec<Position3>),
}

fn nearest(p: &(f64, f64), centers: &[(f64, f64)]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Deterministic k-means on ground points: farthest-point seeding from the
/// overall centroid (ties by lowest index), then Lloyd iterations.
pub fn kmeans_centers(points: &[(f64, f64)], k: usize) -> Vec<(f64, f64)> {
    if points.is_empty() || k == 0 {
        return vec![(0.0, 0.0); k];
    }
    let n = points.len() as f64;
    let mean = (
        points.iter().map(|p| p.0).sum::<f64>() / n,
        points.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(k);
    while centers.len() < k {
        let refs: Vec<(f64, f64)> = if centers.is_empty() { vec![mean] } else { centers.clone() };
        let mut best = 0;
        let mut best_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let d = refs
                .iter()
                .map(|c| (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        if best_d <= 0.0 && !centers.is_empty() {
            // Fewer distinct points than clusters.
            centers.push(centers[centers.len() - 1]);
        } else {
            centers.push(points[best]);
        }
    }
    if k == 1 {
        return vec![mean];
    }
    for _ in 0..100 {
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for p in points {
            let c = nearest(p, &centers);
            sums[c].0 += p.0;
            sums[c].1 += p.1;
            sums[c].2 += 1;
        }
        let updated: Vec<(f64, f64)> = sums
            .iter()
            .zip(&centers)
            .map(|(s, c)| if s.2 == 0 { *c } else { (s.0 / s.2 as f64, s.1 / s.2 as f64) })
            .collect();
        if updated == centers {
            break;
        }
        centers = updated;
    }
    centers
}

/// UAV positions for `placement`, keeping each UAV's altitude.
pub fn place_uavs(s: &Scenario, placement: &Placement) -> Result<Vec<Position3>> {
    match placement {
        Placement::Fixed(p) => {
            if p.len() != s.uavs.len() {
                return Err(Error::Contract(format!("{} fixed positions for {} UAVs", p.len(), s.uavs.len())));
            }
            Ok(p.clone())
        }
        Placement::Centroid => {
            let pts: Vec<(f64, f64)> = s.users.iter().map(|u| (u.position.x, u.position.y)).collect();
            let mut order: Vec<usize> = (0..s.uavs.len()).collect();
            order.sort_by_key(|&j| s.uavs[j].id);
            let centers = kmeans_centers(&pts, s.uavs.len());
            let mut out = vec![Position3::default(); s.uavs.len()];
            for (c, &j) in centers.iter().zip(&order) {
                out[j] = Position3::new(c.0, c.1, s.uavs[j].position.z);
            }
            Ok(out)
        }
    }
}

/// Scenario with UAVs at `placement` and at maximum power.
pub fn static_scenario(s: &Scenario, placement: &Placement) -> Result<Scenario> {
    let mut st = s.clone();
    for (uav, p) in st.uavs.iter_mut().zip(place_uavs(s, placement)?) {
        uav.position = p;
        uav.power_level_index = 0;
    }
    Ok(st)
}

/// Default reward normalization: the static centroid layout's initial sum rate.
pub fn default_rate_norm(s: &Scenario) -> Result<f64> {
    let st = static_scenario(s, &Placement::Centroid)?;
    let gains = channel::expected_gain_matrix(&st)?;
    let assoc = channel::associate_from_gains(&st, &gains, &[]);
    let r = channel::sum_rate_from_gains(&st, &assoc, &gains)?.sum_rate;
    if !(r > 0.0) {
        return Err(Error::Numerical("static baseline sum rate is zero; set rate_norm explicitly".into()));
    }
    Ok(r)
}

/// Runs one episode with UAVs held at `placement` at maximum power while
/// users move. Uses the same per-episode randomness as [`train`], so the
/// result pairs with training episode `episode` under the same `seed`.
pub fn static_baseline(
    s: &Scenario,
    placement: &Placement,
    mobility: &MobilityModel,
    slots: usize,
    rate_norm: f64,
    seed: u64,
    episode: usize,
) -> Result<EpisodeLog> {
    check_scenario(s)?;
    let mut cur = static_scenario(s, placement)?;
    let mut rngs = EpisodeRngs::new(seed, episode);
    let mut mob = MobilityState::new(mobility, s.bounds, s.users.len(), &mut rngs.mobility);
    let hover: Vec<ActionSpec> = cur
        .uavs
        .iter()
        .map(|_| ActionSpec {
            mv: Move::Hover,
            power_level_index: 0,
        })
        .collect();
    let mut rows = Vec::with_capacity(slots);
    for _ in 0..slots {
        let out = apply_joint_action(&cur, &hover, &mut mob, &mut rngs, rate_norm, 0.0, episode)?;
        rows.push(out.row);
        cur = out.next;
    }
    Ok(EpisodeLog::from_rows(episode, 0.0, rows))
}

fn check_scenario(s: &Scenario) -> Result<()> {
    let v = validate_scenario(s);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(v.iter().map(ToString::to_string).collect()))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub tables: Vec<QTable<LocalState>>,
    pub logs: Vec<EpisodeLog>,
    pub actions: Vec<ActionSpec>,
    pub rate_norm: f64,
}

/// Trains one Q-table per UAV for `hp.episodes` episodes.
///
/// Each slot: forecast user positions, encode local states, choose actions
/// ε-greedily, apply them jointly, and update each agent's table. Every
/// episode restarts from `s`. Deterministic in `seed`.
pub fn train(
    s: &Scenario,
    hp: &HyperParams,
    mobility: &MobilityModel,
    mut forecaster: Option<&mut PositionForecaster>,
    seed: u64,
) -> Result<TrainOutput> {
    check_scenario(s)?;
    if let Some(v) = hp.violations("rl").into_iter().next() {
        return Err(Error::Domain(v));
    }
    let grid = s.grid()?;
    let actions = enumerate_actions(&s.channel);
    let rate_norm = match hp.rate_norm {
        Some(r) => r,
        None => default_rate_norm(s)?,
    };
    let mut tables: Vec<QTable<LocalState>> = s.uavs.iter().map(|_| QTable::new(actions.len())).collect();
    let mut explore = rng_for(seed, &["explore"]);
    let mut logs = Vec::with_capacity(hp.episodes);

    for episode in 0..hp.episodes {
        let eps = hp.epsilon(episode);
        let mut rngs = EpisodeRngs::new(seed, episode);
        let mut mob = MobilityState::new(mobility, s.bounds, s.users.len(), &mut rngs.mobility);
        let mut cur = s.clone();
        let (mut assoc, _) = evaluate(&cur, &mut rngs.channel)?;
        set_serving(&mut cur, &assoc);
        if let Some(f) = forecaster.as_deref_mut() {
            f.reset();
        }
        let mut predicted = predict(&mut forecaster, &cur)?;
        let mut states = encode_all(&cur, &predicted, &assoc, &grid)?;
        let mut rows = Vec::with_capacity(hp.slots_per_episode);

        for _ in 0..hp.slots_per_episode {
            let chosen: Vec<usize> = tables
                .iter()
                .zip(&states)
                .map(|(q, st)| qtable::select_action(q, st, eps, &mut explore))
                .collect();
            let joint: Vec<ActionSpec> = chosen.iter().map(|&a| actions[a]).collect();
            let out = apply_joint_action(&cur, &joint, &mut mob, &mut rngs, rate_norm, hp.boundary_penalty, episode)?;
            cur = out.next;
            assoc = out.association;
            predicted = predict(&mut forecaster, &cur)?;
            let next_states = encode_all(&cur, &predicted, &assoc, &grid)?;
            for (i, q) in tables.iter_mut().enumerate() {
                qtable::update_q(q, &states[i], chosen[i], out.rewards[i], &next_states[i], hp.alpha, hp.gamma);
            }
            states = next_states;
            rows.push(out.row);
        }
        logs.push(EpisodeLog::from_rows(episode, eps, rows));
    }
    Ok(TrainOutput {
        tables,
        logs,
        actions,
        rate_norm,
    })
}

fn predict(forecaster: &mut Option<&mut PositionForecaster>, s: &Scenario) -> Result<Vec<Position3>> {
    let current = s.user_positions();
    match forecaster {
        Some(f) => f.observe(&current),
        None => Ok(current),
    }
}

fn encode_all(s: &Scenario, predicted: &[Position3], assoc: &Association, grid: &Grid) -> Result<Vec<LocalState>> {
    s.uavs
        .iter()
        .map(|u| encode_local_state(u, predicted, assoc, s, grid))
        .collect()
}

/// Position sequences from the mobility model, for fitting a forecaster.
/// Uses its own seed labels, disjoint from training episodes.
pub fn mobility_sequences(
    s: &Scenario,
    mobility: &MobilityModel,
    sequences: usize,
    slots: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<Position3>>>> {
    (0..sequences)
        .map(|i| {
            let mut rng = rng_for(seed, &["forecaster-data", &i.to_string()]);
            let mut mob = MobilityState::new(mobility, s.bounds, s.users.len(), &mut rng);
            let mut users = s.users.clone();
            let mut seq = Vec::with_capacity(slots + 1);
            seq.push(users.iter().map(|u| u.position).collect());
            for t in 1..=slots {
                mob.advance(&mut users, t as f64 * s.clock.slot_duration, s.clock.slot_duration, &mut rng)?;
                seq.push(users.iter().map(|u| u.position).collect());
            }
            Ok(seq)
        })
        .collect()
}

/// Recomputes a logged slot's sum rate and rewards from its logged
/// geometry and power levels (expected-loss mode).
pub fn recompute_slot(template: &Scenario, row: &SlotRecord, boundary_penalty: f64) -> Result<(f64, Vec<f64>)> {
    let mut s = template.clone();
    for ((uav, p), lvl) in s.uavs.iter_mut().zip(&row.uav_positions).zip(&row.power_levels) {
        uav.position = *p;
        uav.power_level_index = *lvl;
    }
    for (user, p) in s.users.iter_mut().zip(&row.user_positions) {
        user.position = *p;
    }
    let gains = channel::expected_gain_matrix(&s)?;
    let assoc = channel::associate_from_gains(&s, &gains, &[]);
    let sum = channel::sum_rate_from_gains(&s, &assoc, &gains)?.sum_rate;
    let rewards = row
        .violations
        .iter()
        .map(|&v| sum / row.rate_norm - boundary_penalty * v as f64)
        .collect();
    Ok((sum, rewards))
}

/// Greedy joint action for the given local states.
pub fn greedy_joint(tables: &[QTable<LocalState>], states: &[LocalState]) -> Vec<usize> {
    tables.iter().zip(states).map(|(q, s)| q.argmax(s)).collect()
}

/// Uniform draw helper used by tests and benches to build random tables.
pub fn random_table<R: Rng + ?Sized>(states: &[LocalState], n_actions: usize, rng: &mut R) -> QTable<LocalState> {
    let mut q = QTable::new(n_actions);
    for s in states {
        for a in 0..n_actions {
            q.set(s, a, rng.random_range(-1.0..1.0));
        }
    }
    q
}
