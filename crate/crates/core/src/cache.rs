//! Cache-enabled downlink with per-user queues.
//!
//! Users issue Zipf-distributed content requests that join a per-user FIFO
//! queue. UAVs hover at fixed positions and serve their associated users over
//! a licensed band and an unlicensed band that is only usable in some slots.
//! Content missing from the serving UAV's cache is fetched over the backhaul,
//! which scales the delivery rate by a penalty factor.
//!
//! Three policies share one Q-learning allocation layer (band split and
//! association bias per UAV) and differ only in what they cache: the
//! reservoir-predicted request distribution, recent request frequencies, or
//! nothing.

use std::collections::{BTreeSet, VecDeque};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, Association};
use crate::error::{Error, Result};
use crate::qtable::{self, QTable};
use crate::reservoir::{ReservoirConfig, RequestPredictor};
use crate::seed::rng_for;
use crate::trajectory::kmeans_centers;
use crate::world::{Position3, Scenario, UavState};

/// Discretized unlicensed-band fractions available to the allocation agents.
pub const BAND_SPLITS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct ContentCatalog {
    /// Bits per content; the catalog size is its length.
    pub sizes: Vec<f64>,
    pub zipf_exponent: f64,
    /// Per-user, per-slot request probability.
    pub request_probability: f64,
}

impl ContentCatalog {
    pub fn uniform(size: usize, bits: f64, zipf_exponent: f64, request_probability: f64) -> Result<Self> {
        let c = Self {
            sizes: vec![bits; size],
            zipf_exponent,
            request_probability,
        };
        if let Some(v) = c.violations().into_iter().next() {
            return Err(Error::Domain(v));
        }
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.sizes.is_empty() {
            v.push("catalog must hold at least one content".to_string());
        }
        if self.sizes.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            v.push("content sizes must be positive".to_string());
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            v.push("zipf exponent must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.request_probability) {
            v.push("request probability must lie in [0, 1]".to_string());
        }
        v
    }

    /// Zipf popularity of each content; content `k` has weight `(k+1)^-s`.
    pub fn popularity(&self) -> Vec<f64> {
        let w: Vec<f64> = (1..=self.len()).map(|k| (k as f64).powf(-self.zipf_exponent)).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestEvent {
    pub user: usize,
    pub content: usize,
}

/// One slot of requests: each of `n_users` requests with the catalog's
/// request probability, picking content from the Zipf popularity.
pub fn sample_requests<R: Rng + ?Sized>(catalog: &ContentCatalog, n_users: usize, rng: &mut R) -> Vec<RequestEvent> {
    if catalog.request_probability <= 0.0 {
        return Vec::new();
    }
    let zipf = WeightedIndex::new(catalog.popularity()).expect("Zipf weights are positive");
    let mut out = Vec::new();
    for user in 0..n_users {
        if rng.random::<f64>() < catalog.request_probability {
            out.push(RequestEvent {
                user,
                content: zipf.sample(rng),
            });
        }
    }
    out
}

/// Cached content ids per UAV, in `Scenario::uavs` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheState {
    pub capacity: usize,
    pub sets: Vec<BTreeSet<usize>>,
}

impl CacheState {
    pub fn empty(n_uavs: usize, capacity: usize) -> Self {
        Self {
            capacity,
            sets: vec![BTreeSet::new(); n_uavs],
        }
    }

    pub fn holds(&self, uav: usize, content: usize) -> bool {
        self.sets.get(uav).is_some_and(|s| s.contains(&content))
    }

    pub fn within_capacity(&self) -> bool {
        self.sets.iter().all(|s| s.len() <= self.capacity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandModel {
    /// Hz per UAV.
    pub licensed_bandwidth: f64,
    /// Hz per UAV.
    pub unlicensed_bandwidth: f64,
    /// Probability that the unlicensed band is usable in a slot.
    pub unlicensed_availability: f64,
    /// Rate factor for deliveries of uncached content.
    pub backhaul_penalty: f64,
}

impl BandModel {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        for (name, b) in [
            ("licensed_bandwidth", self.licensed_bandwidth),
            ("unlicensed_bandwidth", self.unlicensed_bandwidth),
        ] {
            if !(b >= 0.0 && b.is_finite()) {
                v.push(format!("{prefix}.{name}: must be non-negative"));
            }
        }
        if !(self.licensed_bandwidth > 0.0 || self.unlicensed_bandwidth > 0.0) {
            v.push(format!("{prefix}: at least one band needs positive bandwidth"));
        }
        if !(0.0..=1.0).contains(&self.unlicensed_availability) {
            v.push(format!("{prefix}.unlicensed_availability: must lie in [0, 1]"));
        }
        if !(self.backhaul_penalty > 0.0 && self.backhaul_penalty <= 1.0) {
            v.push(format!("{prefix}.backhaul_penalty: must lie in (0, 1]"));
        }
        v
    }

    /// Draws whether the unlicensed band is usable this slot.
    pub fn draw_availability<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        rng.random::<f64>() < self.unlicensed_availability
    }
}

/// Per-user backlog with windowed arrival, service and backlog histories.
///
/// Service is the offered capacity of the slot in bits, whether or not the
/// queue had enough bits to use all of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub backlog: Vec<f64>,
    pub arrivals: Vec<VecDeque<f64>>,
    pub services: Vec<VecDeque<f64>>,
    /// Backlog after each step, preceded by the initial backlog.
    pub backlogs: Vec<VecDeque<f64>>,
    /// Maximum number of slots kept in each history.
    pub history: usize,
}

impl QueueState {
    pub fn new(n_users: usize, history: usize) -> Self {
        Self {
            backlog: vec![0.0; n_users],
            arrivals: vec![VecDeque::new(); n_users],
            services: vec![VecDeque::new(); n_users],
            backlogs: vec![VecDeque::from([0.0]); n_users],
            history: history.max(1),
        }
    }

    pub fn n_users(&self) -> usize {
        self.backlog.len()
    }

    /// Number of slots recorded, capped at `history`.
    pub fn len(&self) -> usize {
        self.services.first().map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn push_capped(h: &mut VecDeque<f64>, v: f64, cap: usize) {
    h.push_back(v);
    while h.len() > cap {
        h.pop_front();
    }
}

/// `backlog ← max(0, backlog + arrivals − services)` per user, appending to
/// every history.
pub fn step_queues(q: &QueueState, arrivals: &[f64], services: &[f64]) -> Result<QueueState> {
    let n = q.n_users();
    if arrivals.len() != n || services.len() != n {
        return Err(Error::Contract(format!(
            "{} arrivals and {} services for {n} users",
            arrivals.len(),
            services.len()
        )));
    }
    if arrivals.iter().chain(services).any(|x| !(*x >= 0.0 && x.is_finite())) {
        return Err(Error::Contract("arrivals and services must be finite and non-negative".into()));
    }
    let mut next = q.clone();
    for k in 0..n {
        let b = (q.backlog[k] + arrivals[k] - services[k]).max(0.0);
        next.backlog[k] = b;
        push_capped(&mut next.arrivals[k], arrivals[k], q.history);
        push_capped(&mut next.services[k], services[k], q.history);
        push_capped(&mut next.backlogs[k], b, q.history + 1);
    }
    Ok(next)
}

/// Users whose mean service over the last `window` slots covers their mean
/// arrivals and whose backlog did not grow over the window.
pub fn count_stable_users(q: &QueueState, window: usize) -> Result<usize> {
    if window == 0 {
        return Err(Error::Contract("stability window must be at least 1".into()));
    }
    if q.len() < window {
        return Err(Error::Contract(format!(
            "stability window {window} exceeds {} recorded slots",
            q.len()
        )));
    }
    let tail_sum = |h: &VecDeque<f64>| h.iter().rev().take(window).sum::<f64>();
    Ok((0..q.n_users())
        .filter(|&k| {
            let then = q.backlogs[k][q.backlogs[k].len() - 1 - window];
            tail_sum(&q.services[k]) >= tail_sum(&q.arrivals[k]) && q.backlog[k] <= then
        })
        .count())
}

/// One slot's allocation decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationAction {
    pub caches: CacheState,
    /// Fraction of the slot each UAV spends on the unlicensed band.
    pub band_split: Vec<f64>,
    /// Association bias per UAV in dB.
    pub association_bias_db: Vec<f64>,
    /// Association override; max received power when `None`.
    pub association: Option<Association>,
}

impl AllocationAction {
    pub fn is_valid(&self) -> bool {
        self.caches.within_capacity() && self.band_split.iter().all(|f| (0.0..=1.0).contains(f))
    }
}

/// Offered service in bits for each user this slot.
///
/// Rates are evaluated on each band with the full co-channel interference
/// of every UAV and mixed by the serving UAV's band split. `cached[k]` tells
/// whether user `k`'s current delivery is served from the UAV cache; other
/// deliveries come over the backhaul at the penalized rate.
pub fn service_rates(
    s: &Scenario,
    gains: &[Vec<f64>],
    action: &AllocationAction,
    band: &BandModel,
    unlicensed_available: bool,
    cached: &[bool],
) -> Result<Vec<f64>> {
    let assoc = match &action.association {
        Some(a) => a.clone(),
        None => channel::associate_from_gains(s, gains, &action.association_bias_db),
    };
    let serving = channel::association_indices(s, &assoc)?;
    if cached.len() != s.users.len() || action.band_split.len() != s.uavs.len() {
        return Err(Error::Contract("service_rates inputs do not match the scenario".into()));
    }
    let powers: Vec<f64> = s.uavs.iter().map(|u| s.transmit_power(u)).collect();
    let noise = s.channel.noise_power_density;
    let band_rates = |bw: f64| {
        if bw > 0.0 {
            channel::rates_from_gains(&powers, &vec![bw; s.uavs.len()], gains, &serving, noise).0
        } else {
            vec![0.0; serving.len()]
        }
    };
    let licensed = band_rates(band.licensed_bandwidth);
    let unlicensed = if unlicensed_available {
        band_rates(band.unlicensed_bandwidth)
    } else {
        vec![0.0; serving.len()]
    };
    let dt = s.clock.slot_duration;
    Ok(serving
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            let split = action.band_split[j];
            let rate = (1.0 - split) * licensed[k] + split * unlicensed[k];
            rate * dt * if cached[k] { 1.0 } else { band.backhaul_penalty }
        })
        .collect())
}

/// Whether each user's head-of-line content is in its serving UAV's cache.
/// Users with nothing queued count as cached.
pub fn head_cached(caches: &CacheState, serving: &[usize], heads: &[Option<usize>]) -> Vec<bool> {
    serving
        .iter()
        .zip(heads)
        .map(|(&j, h)| h.is_none_or(|c| caches.holds(j, c)))
        .collect()
}

/// Local state of one allocation agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AllocationState {
    /// 0 when the UAV's users have nothing queued, then 1..=3 for a mean
    /// backlog below one content, below four contents, and above.
    pub backlog_level: u8,
    pub unlicensed_available: bool,
}

/// Quantizes a mean per-user backlog measured in contents.
pub fn backlog_level(mean_backlog_contents: f64) -> u8 {
    if mean_backlog_contents <= 0.0 {
        0
    } else if mean_backlog_contents < 1.0 {
        1
    } else if mean_backlog_contents < 4.0 {
        2
    } else {
        3
    }
}

/// Allocation agent action `a`: band split `BAND_SPLITS[a / 2]`, bias
/// `0` dB for even `a` and `bias_db` for odd `a`.
pub fn allocation_choice(a: usize, bias_db: f64) -> (f64, f64) {
    (BAND_SPLITS[a / 2], if a.is_multiple_of(2) { 0.0 } else { bias_db })
}

pub const N_ALLOCATION_ACTIONS: usize = 2 * BAND_SPLITS.len();

/// The Q-learning layer shared by every caching policy: one table per UAV.
#[derive(Debug, Clone)]
pub struct AllocationLearner {
    pub tables: Vec<QTable<AllocationState>>,
    pub alpha: f64,
    pub gamma: f64,
    pub bias_db: f64,
}

impl AllocationLearner {
    pub fn new(n_uavs: usize, alpha: f64, gamma: f64, bias_db: f64) -> Self {
        Self {
            tables: vec![QTable::new(N_ALLOCATION_ACTIONS); n_uavs],
            alpha,
            gamma,
            bias_db,
        }
    }

    fn choose<R: Rng + ?Sized>(&self, states: &[AllocationState], epsilon: f64, rng: &mut R) -> Vec<usize> {
        self.tables
            .iter()
            .zip(states)
            .map(|(q, st)| qtable::select_action(q, st, epsilon, rng))
            .collect()
    }

    pub fn update(&mut self, states: &[AllocationState], actions: &[usize], reward: f64, next: &[AllocationState]) {
        for (j, q) in self.tables.iter_mut().enumerate() {
            qtable::update_q(q, &states[j], actions[j], reward, &next[j], self.alpha, self.gamma);
        }
    }
}

/// What a policy sees at the start of a slot.
#[derive(Debug, Clone, Copy)]
pub struct SlotContext<'a> {
    pub scenario: &'a Scenario,
    pub gains: &'a [Vec<f64>],
    pub states: &'a [AllocationState],
    pub capacity: usize,
    pub catalog_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    pub action: AllocationAction,
    /// Allocation action index chosen by each agent.
    pub choices: Vec<usize>,
}

fn rl_layer<R: Rng + ?Sized>(
    ctx: &SlotContext,
    learner: &AllocationLearner,
    epsilon: f64,
    rng: &mut R,
) -> (Vec<usize>, Vec<f64>, Vec<f64>, Association) {
    let choices = learner.choose(ctx.states, epsilon, rng);
    let (splits, biases): (Vec<f64>, Vec<f64>) =
        choices.iter().map(|&a| allocation_choice(a, learner.bias_db)).unzip();
    let assoc = channel::associate_from_gains(ctx.scenario, ctx.gains, &biases);
    (choices, splits, biases, assoc)
}

/// The `capacity` highest-scoring contents, ties to the lower id.
pub fn top_contents(scores: &[f64], capacity: usize) -> BTreeSet<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.into_iter().take(capacity).collect()
}

fn caches_from_scores(
    ctx: &SlotContext,
    assoc: &Association,
    user_scores: impl Fn(usize) -> Vec<f64>,
) -> Result<CacheState> {
    let serving = channel::association_indices(ctx.scenario, assoc)?;
    let mut per_uav = vec![vec![0.0; ctx.catalog_size]; ctx.scenario.uavs.len()];
    for (k, &j) in serving.iter().enumerate() {
        for (acc, v) in per_uav[j].iter_mut().zip(user_scores(k)) {
            *acc += v;
        }
    }
    Ok(CacheState {
        capacity: ctx.capacity,
        sets: per_uav.iter().map(|s| top_contents(s, ctx.capacity)).collect(),
    })
}

fn finish(caches: CacheState, splits: Vec<f64>, biases: Vec<f64>, assoc: Association, choices: Vec<usize>) -> PolicyStep {
    PolicyStep {
        action: AllocationAction {
            caches,
            band_split: splits,
            association_bias_db: biases,
            association: Some(assoc),
        },
        choices,
    }
}

/// Caches the top contents of the predicted request distribution summed over
/// each UAV's associated users; band split and association come from the
/// Q-learning layer.
pub fn lsm_policy_step<R: Rng + ?Sized>(
    lsm: &RequestPredictor,
    ctx: &SlotContext,
    learner: &AllocationLearner,
    epsilon: f64,
    rng: &mut R,
) -> Result<PolicyStep> {
    let (choices, splits, biases, assoc) = rl_layer(ctx, learner, epsilon, rng);
    let caches = caches_from_scores(ctx, &assoc, |k| lsm.distribution(k))?;
    Ok(finish(caches, splits, biases, assoc, choices))
}

/// Requests seen over the last `window` slots.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RequestWindow {
    pub window: usize,
    pub slots: VecDeque<Vec<RequestEvent>>,
}

impl RequestWindow {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            slots: VecDeque::new(),
        }
    }

    pub fn push(&mut self, requests: Vec<RequestEvent>) {
        self.slots.push_back(requests);
        while self.slots.len() > self.window {
            self.slots.pop_front();
        }
    }

    /// Request counts per content for `user`.
    pub fn counts(&self, user: usize, catalog_size: usize) -> Vec<f64> {
        let mut c = vec![0.0; catalog_size];
        for r in self.slots.iter().flatten().filter(|r| r.user == user) {
            c[r.content] += 1.0;
        }
        c
    }
}

/// Caches the most requested contents among each UAV's associated users over
/// the recent window; same Q-learning layer as [`lsm_policy_step`].
pub fn baseline_q_with_cache<R: Rng + ?Sized>(
    recent: &RequestWindow,
    ctx: &SlotContext,
    learner: &AllocationLearner,
    epsilon: f64,
    rng: &mut R,
) -> Result<PolicyStep> {
    let (choices, splits, biases, assoc) = rl_layer(ctx, learner, epsilon, rng);
    let caches = caches_from_scores(ctx, &assoc, |k| recent.counts(k, ctx.catalog_size))?;
    Ok(finish(caches, splits, biases, assoc, choices))
}

/// Empty caches, so every delivery uses the backhaul; same Q-learning layer.
pub fn baseline_q_without_cache<R: Rng + ?Sized>(
    ctx: &SlotContext,
    learner: &AllocationLearner,
    epsilon: f64,
    rng: &mut R,
) -> Result<PolicyStep> {
    let (choices, splits, biases, assoc) = rl_layer(ctx, learner, epsilon, rng);
    let caches = CacheState::empty(ctx.scenario.uavs.len(), ctx.capacity);
    Ok(finish(caches, splits, biases, assoc, choices))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CachePolicy {
    Lsm,
    QWithCache,
    QWithoutCache,
}

impl CachePolicy {
    pub const ALL: [CachePolicy; 3] = [CachePolicy::Lsm, CachePolicy::QWithCache, CachePolicy::QWithoutCache];

    pub fn name(self) -> &'static str {
        match self {
            CachePolicy::Lsm => "lsm",
            CachePolicy::QWithCache => "q-with-cache",
            CachePolicy::QWithoutCache => "q-without-cache",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CachingConfig {
    pub n_uavs: Vec<usize>,
    pub policies: Vec<CachePolicy>,
    pub uav_altitude: f64,
    pub catalog_size: usize,
    pub content_bits: f64,
    pub zipf_exponent: f64,
    pub request_probability: f64,
    pub cache_capacity: usize,
    pub licensed_bandwidth: f64,
    pub unlicensed_bandwidth: f64,
    pub unlicensed_availability: f64,
    pub backhaul_penalty: f64,
    pub slots: usize,
    pub stability_window: usize,
    pub frequency_window: usize,
    pub tail_fraction: f64,
    pub refit_interval: usize,
    pub association_bias_db: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Multiplicative decay per slot.
    pub epsilon_decay: f64,
}

impl Default for CachingConfig {
    fn default() -> Self {
        Self {
            n_uavs: vec![1, 2, 3, 4, 5],
            policies: CachePolicy::ALL.to_vec(),
            uav_altitude: 50.0,
            catalog_size: 100,
            content_bits: 4e6,
            zipf_exponent: 0.8,
            request_probability: 0.2,
            cache_capacity: 10,
            licensed_bandwidth: 10e6,
            unlicensed_bandwidth: 20e6,
            unlicensed_availability: 0.5,
            backhaul_penalty: 0.2,
            slots: 1000,
            stability_window: 50,
            frequency_window: 5,
            tail_fraction: 0.2,
            refit_interval: 25,
            association_bias_db: 6.0,
            alpha: 0.1,
            gamma: 0.5,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.99,
        }
    }
}

impl CachingConfig {
    pub fn band(&self) -> BandModel {
        BandModel {
            licensed_bandwidth: self.licensed_bandwidth,
            unlicensed_bandwidth: self.unlicensed_bandwidth,
            unlicensed_availability: self.unlicensed_availability,
            backhaul_penalty: self.backhaul_penalty,
        }
    }

    pub fn catalog(&self) -> ContentCatalog {
        ContentCatalog {
            sizes: vec![self.content_bits; self.catalog_size],
            zipf_exponent: self.zipf_exponent,
            request_probability: self.request_probability,
        }
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_uavs.is_empty() || self.n_uavs.contains(&0) {
            v.push(format!("{prefix}.n_uavs: needs at least one entry, each at least 1"));
        }
        if self.policies.is_empty() {
            v.push(format!("{prefix}.policies: needs at least one policy"));
        }
        if !(self.uav_altitude > 0.0 && self.uav_altitude.is_finite()) {
            v.push(format!("{prefix}.uav_altitude: must be positive"));
        }
        v.extend(self.catalog().violations().into_iter().map(|m| format!("{prefix}.catalog: {m}")));
        v.extend(self.band().violations(prefix));
        if self.slots == 0 {
            v.push(format!("{prefix}.slots: must be at least 1"));
        }
        if self.stability_window == 0 || self.stability_window > self.slots {
            v.push(format!("{prefix}.stability_window: must lie in [1, slots]"));
        }
        if self.frequency_window == 0 {
            v.push(format!("{prefix}.frequency_window: must be at least 1"));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            v.push(format!("{prefix}.tail_fraction: must lie in (0, 1]"));
        }
        if self.refit_interval == 0 {
            v.push(format!("{prefix}.refit_interval: must be at least 1"));
        }
        if !self.association_bias_db.is_finite() {
            v.push(format!("{prefix}.association_bias_db: must be finite"));
        }
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
        v
    }

    pub fn epsilon(&self, slot: usize) -> f64 {
        (self.epsilon_start * self.epsilon_decay.powi(slot.min(i32::MAX as usize) as i32)).max(self.epsilon_end)
    }
}

/// Per-slot metrics of a caching run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachingSlot {
    pub slot: usize,
    pub requests: usize,
    pub cache_hits: usize,
    pub unlicensed_available: bool,
    pub band_split: Vec<f64>,
    pub association_bias_db: Vec<f64>,
    pub mean_backlog_bits: f64,
    /// `None` until the stability window is filled.
    pub stable_users: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachingRun {
    pub policy: CachePolicy,
    pub n_uavs: usize,
    pub seed: u64,
    pub slots: Vec<CachingSlot>,
    pub tail_mean_stable_users: f64,
}

/// Mean stable-user count over the last `fraction` of slots that have one.
pub fn tail_mean_stable(slots: &[CachingSlot], fraction: f64) -> f64 {
    let counted: Vec<f64> = slots.iter().filter_map(|s| s.stable_users.map(|c| c as f64)).collect();
    if counted.is_empty() {
        return 0.0;
    }
    let take = ((counted.len() as f64 * fraction).ceil() as usize).clamp(1, counted.len());
    counted[counted.len() - take..].iter().sum::<f64>() / take as f64
}

/// `n` UAVs at the k-means centers of the users, ids `0..n`.
pub fn caching_scenario(base: &Scenario, n: usize, altitude: f64) -> Scenario {
    let pts: Vec<(f64, f64)> = base.users.iter().map(|u| (u.position.x, u.position.y)).collect();
    let mut s = base.clone();
    s.uavs = kmeans_centers(&pts, n)
        .into_iter()
        .enumerate()
        .map(|(id, (x, y))| UavState {
            id,
            position: Position3::new(x, y, altitude),
            power_level_index: 0,
            bandwidth: 0.0,
        })
        .collect();
    s
}

/// A queued delivery; `cached` records whether the content was in the
/// serving UAV's cache when the request arrived.
#[derive(Debug, Clone, Copy)]
struct Delivery {
    cached: bool,
    remaining: f64,
}

fn drain(pending: &mut VecDeque<Delivery>, mut bits: f64) {
    while bits > 0.0 {
        let Some(front) = pending.front_mut() else { break };
        if front.remaining > bits {
            front.remaining -= bits;
            break;
        }
        bits -= front.remaining;
        pending.pop_front();
    }
}

fn allocation_states(
    serving: &[usize],
    n_uavs: usize,
    queues: &QueueState,
    content_bits: f64,
    available: bool,
) -> Vec<AllocationState> {
    let mut sum = vec![0.0; n_uavs];
    let mut count = vec![0usize; n_uavs];
    for (k, &j) in serving.iter().enumerate() {
        sum[j] += queues.backlog[k];
        count[j] += 1;
    }
    (0..n_uavs)
        .map(|j| AllocationState {
            backlog_level: backlog_level(if count[j] == 0 { 0.0 } else { sum[j] / count[j] as f64 / content_bits }),
            unlicensed_available: available,
        })
        .collect()
}

/// Full slot loop for one `(n_uavs, policy, seed)`: availability draw,
/// allocation decision, requests, service, queue update, stability count and
/// Q update. UAVs hover at the k-means centers of the users in `base`.
///
/// The request and availability streams depend only on `seed`, so every
/// policy and UAV count sees the same traffic.
pub fn run_caching_experiment(
    base: &Scenario,
    cfg: &CachingConfig,
    esn: &ReservoirConfig,
    n_uavs: usize,
    policy: CachePolicy,
    seed: u64,
) -> Result<CachingRun> {
    if let Some(v) = cfg.violations("caching").into_iter().next() {
        return Err(Error::Domain(v));
    }
    if n_uavs == 0 {
        return Err(Error::Domain("caching run needs at least one UAV".into()));
    }
    let s = caching_scenario(base, n_uavs, cfg.uav_altitude);
    let n_users = s.users.len();
    let catalog = cfg.catalog();
    let band = cfg.band();
    let gains = channel::expected_gain_matrix(&s)?;
    let default_assoc = channel::associate_from_gains(&s, &gains, &[]);
    let default_serving = channel::association_indices(&s, &default_assoc)?;

    let mut req_rng = rng_for(seed, &["caching", "requests"]);
    let mut band_rng = rng_for(seed, &["caching", "unlicensed"]);
    let mut explore_rng = rng_for(seed, &["caching", "explore", &n_uavs.to_string()]);

    let mut lsm = match policy {
        CachePolicy::Lsm => {
            let lsm_cfg = ReservoirConfig {
                seed: crate::seed::seed_stream(seed, &["caching", "lsm", &esn.seed.to_string()]),
                ..esn.clone()
            };
            Some(RequestPredictor::new(&lsm_cfg, catalog.len(), n_users)?)
        }
        _ => None,
    };
    let mut recent = RequestWindow::new(cfg.frequency_window);
    let mut learner = AllocationLearner::new(n_uavs, cfg.alpha, cfg.gamma, cfg.association_bias_db);
    let mut queues = QueueState::new(n_users, cfg.stability_window);
    let mut pending: Vec<VecDeque<Delivery>> = vec![VecDeque::new(); n_users];
    let mut previous: Option<(Vec<AllocationState>, Vec<usize>, f64)> = None;
    let mut rows = Vec::with_capacity(cfg.slots);

    for t in 0..cfg.slots {
        let available = band.draw_availability(&mut band_rng);
        let states = allocation_states(&default_serving, n_uavs, &queues, cfg.content_bits, available);
        if let Some((prev_states, prev_actions, reward)) = previous.take() {
            learner.update(&prev_states, &prev_actions, reward, &states);
        }
        let ctx = SlotContext {
            scenario: &s,
            gains: &gains,
            states: &states,
            capacity: cfg.cache_capacity,
            catalog_size: catalog.len(),
        };
        let epsilon = cfg.epsilon(t);
        let step = match policy {
            CachePolicy::Lsm => lsm_policy_step(lsm.as_ref().expect("lsm policy has a predictor"), &ctx, &learner, epsilon, &mut explore_rng)?,
            CachePolicy::QWithCache => baseline_q_with_cache(&recent, &ctx, &learner, epsilon, &mut explore_rng)?,
            CachePolicy::QWithoutCache => baseline_q_without_cache(&ctx, &learner, epsilon, &mut explore_rng)?,
        };
        let serving = channel::association_indices(&s, step.action.association.as_ref().expect("policies set the association"))?;

        let requests = sample_requests(&catalog, n_users, &mut req_rng);
        let mut arrivals = vec![0.0; n_users];
        let mut hits = 0;
        for r in &requests {
            let bits = catalog.sizes[r.content];
            arrivals[r.user] += bits;
            let cached = step.action.caches.holds(serving[r.user], r.content);
            pending[r.user].push_back(Delivery { cached, remaining: bits });
            hits += usize::from(cached);
        }
        let cached: Vec<bool> = pending.iter().map(|p| p.front().is_none_or(|d| d.cached)).collect();
        let services = service_rates(&s, &gains, &step.action, &band, available, &cached)?;
        queues = step_queues(&queues, &arrivals, &services)?;
        for (p, &bits) in pending.iter_mut().zip(&services) {
            drain(p, bits);
        }
        let stable = if queues.len() >= cfg.stability_window {
            Some(count_stable_users(&queues, cfg.stability_window)?)
        } else {
            None
        };
        if let Some(c) = stable {
            previous = Some((states.clone(), step.choices.clone(), c as f64));
        }

        if let Some(p) = lsm.as_mut() {
            let mut per_user: Vec<Option<usize>> = vec![None; n_users];
            for r in &requests {
                per_user[r.user] = Some(r.content);
            }
            for (u, req) in per_user.into_iter().enumerate() {
                p.observe(u, req)?;
            }
            if (t + 1) % cfg.refit_interval == 0 {
                p.refit()?;
            }
        }
        let n_requests = requests.len();
        recent.push(requests);

        rows.push(CachingSlot {
            slot: t,
            requests: n_requests,
            cache_hits: hits,
            unlicensed_available: available,
            band_split: step.action.band_split.clone(),
            association_bias_db: step.action.association_bias_db.clone(),
            mean_backlog_bits: queues.backlog.iter().sum::<f64>() / n_users.max(1) as f64,
            stable_users: stable,
        });
    }
    let tail = tail_mean_stable(&rows, cfg.tail_fraction);
    Ok(CachingRun {
        policy,
        n_uavs,
        seed,
        slots: rows,
        tail_mean_stable_users: tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::world::{Bounds, Clock, UserState};
    use crate::ChannelParams;

    fn catalog(c: usize, s: f64, q: f64) -> ContentCatalog {
        ContentCatalog::uniform(c, 1e6, s, q).unwrap()
    }

    fn empirical(cat: &ContentCatalog, draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0.0; cat.len()];
        let mut n = 0.0;
        while n < draws as f64 {
            for r in sample_requests(cat, 100, &mut rng) {
                counts[r.content] += 1.0;
                n += 1.0;
            }
        }
        counts.iter().map(|c| c / n).collect()
    }

    #[test]
    fn zipf_three_items() {
        let cat = catalog(3, 1.0, 1.0);
        let p = cat.popularity();
        // Harmonic weights 1, 1/2, 1/3 normalized by 11/6.
        for (got, want) in p.iter().zip([6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        let e = empirical(&cat, 200_000, 1);
        for (got, want) in e.iter().zip(&p) {
            assert_abs_diff_eq!(*got, *want, epsilon = 5e-3);
        }
    }

    #[test]
    fn steep_zipf_concentrates() {
        let cat = catalog(3, 50.0, 1.0);
        assert!(cat.popularity()[0] > 0.999);
    }

    #[test]
    fn zero_request_probability_is_silent() {
        let cat = catalog(5, 1.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| sample_requests(&cat, 20, &mut rng).is_empty()));
    }

    #[test]
    fn requests_deterministic_in_rng() {
        let cat = catalog(10, 0.8, 0.4);
        let draw = |s| sample_requests(&cat, 30, &mut ChaCha8Rng::seed_from_u64(s));
        assert_eq!(draw(7), draw(7));
    }

    #[test]
    fn queue_examples() {
        let q = QueueState {
            backlog: vec![10.0, 10.0, 10.0],
            ..QueueState::new(3, 4)
        };
        let n = step_queues(&q, &[5.0, 5.0, 5.0], &[20.0, 0.0, 5.0]).unwrap();
        assert_eq!(n.backlog, vec![0.0, 15.0, 10.0]);
        assert!(step_queues(&q, &[-1.0, 0.0, 0.0], &[0.0; 3]).is_err());
        assert!(step_queues(&q, &[0.0; 2], &[0.0; 3]).is_err());
    }

    fn run_queue(arrival: f64, service: f64, slots: usize) -> QueueState {
        let mut q = QueueState::new(1, 10);
        for _ in 0..slots {
            q = step_queues(&q, &[arrival], &[service]).unwrap();
        }
        q
    }

    #[test]
    fn stability_examples() {
        assert_eq!(count_stable_users(&run_queue(1.0, 2.0, 20), 10).unwrap(), 1);
        assert_eq!(count_stable_users(&run_queue(2.0, 1.0, 20), 10).unwrap(), 0);
        assert_eq!(count_stable_users(&run_queue(0.0, 0.0, 20), 10).unwrap(), 1);
        assert!(matches!(count_stable_users(&run_queue(1.0, 1.0, 5), 10), Err(Error::Contract(_))));
    }

    #[test]
    fn histories_stay_windowed() {
        let q = run_queue(1.0, 1.0, 50);
        assert_eq!(q.len(), 10);
        assert_eq!(q.backlogs[0].len(), 11);
    }

    fn scenario(n_users: usize, seed: u64) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Scenario {
            bounds: Bounds::default(),
            cell_size: 100.0,
            uavs: vec![],
            users: (0..n_users)
                .map(|id| UserState {
                    id,
                    position: Position3::ground(rng.random::<f64>() * 1000.0, rng.random::<f64>() * 1000.0),
                    serving_uav: None,
                })
                .collect(),
            channel: ChannelParams::default(),
            clock: Clock::default(),
        };
        caching_scenario(&base, 2, 100.0)
    }

    fn action(s: &Scenario, split: f64, caches: CacheState) -> AllocationAction {
        AllocationAction {
            caches,
            band_split: vec![split; s.uavs.len()],
            association_bias_db: vec![0.0; s.uavs.len()],
            association: None,
        }
    }

    fn band(lic: f64, unl: f64, p: f64, beta: f64) -> BandModel {
        BandModel {
            licensed_bandwidth: lic,
            unlicensed_bandwidth: unl,
            unlicensed_availability: p,
            backhaul_penalty: beta,
        }
    }

    #[test]
    fn half_split_on_equal_bands_matches_licensed_only() {
        let s = scenario(12, 3);
        let g = channel::expected_gain_matrix(&s).unwrap();
        let heads = vec![true; 12];
        let empty = CacheState::empty(2, 3);
        let half = service_rates(&s, &g, &action(&s, 0.5, empty.clone()), &band(1e6, 1e6, 1.0, 1.0), true, &heads).unwrap();
        let lic = service_rates(&s, &g, &action(&s, 0.0, empty), &band(1e6, 1e6, 1.0, 1.0), true, &heads).unwrap();
        for (a, b) in half.iter().zip(&lic) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-9 * b.abs());
        }
    }

    #[test]
    fn unavailable_band_contributes_nothing() {
        let s = scenario(8, 4);
        let g = channel::expected_gain_matrix(&s).unwrap();
        let heads = vec![true; 8];
        let a = action(&s, 1.0, CacheState::empty(2, 1));
        let r = service_rates(&s, &g, &a, &band(1e6, 5e6, 0.0, 1.0), false, &heads).unwrap();
        assert!(r.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn backhaul_penalty_scales_misses() {
        let s = scenario(10, 5);
        let g = channel::expected_gain_matrix(&s).unwrap();
        let heads: Vec<Option<usize>> = (0..10).map(|k| Some(k % 3)).collect();
        let full = CacheState {
            capacity: 3,
            sets: vec![(0..3).collect(), (0..3).collect()],
        };
        let b = band(1e6, 2e6, 1.0, 0.5);
        let a_full = action(&s, 0.25, full.clone());
        let a_empty = action(&s, 0.25, CacheState::empty(2, 3));
        let serving = channel::association_indices(&s, &channel::associate_from_gains(&s, &g, &[])).unwrap();
        let hit = service_rates(&s, &g, &a_full, &b, true, &head_cached(&full, &serving, &heads)).unwrap();
        let none = CacheState::empty(2, 3);
        let miss = service_rates(&s, &g, &a_empty, &b, true, &head_cached(&none, &serving, &heads)).unwrap();
        for (h, m) in hit.iter().zip(&miss) {
            assert_abs_diff_eq!(*m, 0.5 * h, epsilon = 1e-9 * h);
        }
        let b1 = BandModel {
            backhaul_penalty: 1.0,
            ..b
        };
        assert_eq!(
            service_rates(&s, &g, &a_full, &b1, true, &head_cached(&full, &serving, &heads)).unwrap(),
            service_rates(&s, &g, &a_empty, &b1, true, &head_cached(&none, &serving, &heads)).unwrap()
        );
    }

    #[test]
    fn top_contents_ties_to_lower_id() {
        assert_eq!(top_contents(&[1.0, 3.0, 3.0, 0.0], 2), BTreeSet::from([1, 2]));
        assert_eq!(top_contents(&[0.0; 4], 2), BTreeSet::from([0, 1]));
        assert_eq!(top_contents(&[0.5; 3], 10).len(), 3);
    }

    fn ctx_parts(s: &Scenario) -> (Vec<Vec<f64>>, Vec<AllocationState>) {
        let g = channel::expected_gain_matrix(s).unwrap();
        let st = vec![
            AllocationState {
                backlog_level: 0,
                unlicensed_available: true
            };
            s.uavs.len()
        ];
        (g, st)
    }

    #[test]
    fn greedy_zero_table_picks_first_split() {
        let s = scenario(6, 6);
        let (g, st) = ctx_parts(&s);
        let ctx = SlotContext {
            scenario: &s,
            gains: &g,
            states: &st,
            capacity: 2,
            catalog_size: 5,
        };
        let learner = AllocationLearner::new(2, 0.1, 0.5, 6.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let step = baseline_q_without_cache(&ctx, &learner, 0.0, &mut rng).unwrap();
        assert_eq!(step.action.band_split, vec![0.0, 0.0]);
        assert_eq!(step.choices, vec![0, 0]);
        assert!(step.action.caches.sets.iter().all(BTreeSet::is_empty));
    }

    #[test]
    fn frequency_window_of_one_tracks_last_slot() {
        let s = scenario(4, 7);
        let (g, st) = ctx_parts(&s);
        let ctx = SlotContext {
            scenario: &s,
            gains: &g,
            states: &st,
            capacity: 1,
            catalog_size: 6,
        };
        let mut w = RequestWindow::new(1);
        w.push((0..4).map(|user| RequestEvent { user, content: 2 }).collect());
        w.push((0..4).map(|user| RequestEvent { user, content: 5 }).collect());
        let learner = AllocationLearner::new(2, 0.1, 0.5, 6.0);
        let step = baseline_q_with_cache(&w, &ctx, &learner, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for set in step.action.caches.sets.iter().filter(|s| !s.is_empty()) {
            assert_eq!(set, &BTreeSet::from([5]));
        }
    }

    #[test]
    fn dominant_content_cached_everywhere() {
        let s = scenario(10, 8);
        let (g, st) = ctx_parts(&s);
        let cfg = ReservoirConfig {
            reservoir_size: 30,
            ..ReservoirConfig::default()
        };
        let mut lsm = RequestPredictor::new(&cfg, 6, 10).unwrap();
        for _ in 0..100 {
            for u in 0..10 {
                lsm.observe(u, Some(4)).unwrap();
            }
        }
        lsm.refit().unwrap();
        let ctx = SlotContext {
            scenario: &s,
            gains: &g,
            states: &st,
            capacity: 1,
            catalog_size: 6,
        };
        let learner = AllocationLearner::new(2, 0.1, 0.5, 6.0);
        let step = lsm_policy_step(&lsm, &ctx, &learner, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(step.action.caches.sets.iter().all(|set| set == &BTreeSet::from([4])));
    }

    fn small_cfg() -> CachingConfig {
        CachingConfig {
            slots: 120,
            stability_window: 20,
            catalog_size: 10,
            cache_capacity: 3,
            ..CachingConfig::default()
        }
    }

    fn small_esn() -> ReservoirConfig {
        ReservoirConfig {
            reservoir_size: 20,
            ..ReservoirConfig::default()
        }
    }

    #[test]
    fn silent_users_are_all_stable() {
        let cfg = CachingConfig {
            request_probability: 0.0,
            ..small_cfg()
        };
        let s = scenario(15, 9);
        for policy in CachePolicy::ALL {
            let run = run_caching_experiment(&s, &cfg, &small_esn(), 3, policy, 1).unwrap();
            assert_eq!(run.tail_mean_stable_users, 15.0);
        }
    }

    #[test]
    fn runs_are_deterministic_and_paired() {
        let s = scenario(15, 10);
        let a = run_caching_experiment(&s, &small_cfg(), &small_esn(), 2, CachePolicy::Lsm, 4).unwrap();
        let b = run_caching_experiment(&s, &small_cfg(), &small_esn(), 2, CachePolicy::Lsm, 4).unwrap();
        assert_eq!(a, b);
        let c = run_caching_experiment(&s, &small_cfg(), &small_esn(), 2, CachePolicy::QWithoutCache, 4).unwrap();
        let reqs = |r: &CachingRun| r.slots.iter().map(|x| x.requests).collect::<Vec<_>>();
        assert_eq!(reqs(&a), reqs(&c));
        assert!(c.slots.iter().all(|x| x.cache_hits == 0));
    }

    #[test]
    fn full_capacity_caches_everything() {
        let cfg = CachingConfig {
            cache_capacity: 10,
            ..small_cfg()
        };
        let s = scenario(12, 11);
        let run = run_caching_experiment(&s, &cfg, &small_esn(), 2, CachePolicy::QWithCache, 2).unwrap();
        let requests: usize = run.slots.iter().map(|x| x.requests).sum();
        let hits: usize = run.slots.iter().map(|x| x.cache_hits).sum();
        assert!(requests > 0);
        assert_eq!(hits, requests);
    }
}
