//! Air-to-ground propagation with an elevation-dependent line-of-sight
//! probability, SINR with co-channel interference, and Shannon rates.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{Position3, Scenario, Violation};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// User id -> serving UAV id.
pub type Association = BTreeMap<usize, usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Excess loss is the LoS-probability-weighted mean of the two excess losses.
    #[default]
    Expected,
    /// LoS or NLoS is drawn per link with probability `p_los`.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Hz.
    pub carrier_frequency: f64,
    pub los_a: f64,
    pub los_b: f64,
    /// Excess loss under line of sight, dB.
    pub eta_los: f64,
    /// Excess loss without line of sight, dB.
    pub eta_nlos: f64,
    /// W/Hz.
    pub noise_power_density: f64,
    /// Selectable transmit powers in W, strictly decreasing.
    pub power_ladder: Vec<f64>,
    pub mode: LossMode,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_frequency: 2e9,
            los_a: 9.61,
            los_b: 0.16,
            eta_los: 1.0,
            eta_nlos: 20.0,
            // -174 dBm/Hz
            noise_power_density: 10f64.powf(-17.4) * 1e-3,
            power_ladder: vec![1.0, 0.5, 0.25],
            mode: LossMode::Expected,
        }
    }
}

impl ChannelParams {
    /// Invariant violations, with field names prefixed by `prefix`.
    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut out = Vec::new();
        let field = |name: &str| format!("{prefix}.{name}");
        if !(self.carrier_frequency > 0.0 && self.carrier_frequency.is_finite()) {
            out.push(Violation::new(field("carrier_frequency"), "must be positive"));
        }
        if !(self.los_a.is_finite() && self.los_a > 0.0) {
            out.push(Violation::new(field("los_a"), "must be positive"));
        }
        if !(self.los_b > 0.0 && self.los_b.is_finite()) {
            out.push(Violation::new(field("los_b"), "must be positive"));
        }
        if !(self.eta_los >= 0.0 && self.eta_nlos >= self.eta_los && self.eta_nlos.is_finite()) {
            out.push(Violation::new(field("eta_nlos"), "require eta_nlos >= eta_los >= 0"));
        }
        if !(self.noise_power_density >= 0.0 && self.noise_power_density.is_finite()) {
            out.push(Violation::new(field("noise_power_density"), "must be non-negative"));
        }
        if self.power_ladder.is_empty() {
            out.push(Violation::new(field("power_ladder"), "needs at least one level"));
        } else if !self.power_ladder.iter().all(|p| *p > 0.0 && p.is_finite())
            || self.power_ladder.windows(2).any(|w| w[1] >= w[0])
        {
            out.push(Violation::new(
                field("power_ladder"),
                "levels must be positive and strictly decreasing",
            ));
        }
        out
    }

    pub fn max_power(&self) -> f64 {
        self.power_ladder[0]
    }
}

/// Per-link quantities for one UAV-user pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub elevation_deg: f64,
    pub p_los: f64,
    pub path_loss_db: f64,
    /// W.
    pub received_power: f64,
    pub sinr: f64,
    /// bit/s.
    pub rate: f64,
}

/// Elevation of `uav` as seen from `user`, in degrees.
pub fn elevation_angle(uav: &Position3, user: &Position3) -> Result<f64> {
    let dz = uav.z - user.z;
    if !(dz > 0.0) {
        return Err(Error::Domain(format!(
            "UAV altitude {} must exceed user altitude {}",
            uav.z, user.z
        )));
    }
    let h = uav.horizontal_distance(user);
    if h == 0.0 {
        return Ok(90.0);
    }
    Ok(dz.atan2(h).to_degrees())
}

/// Sigmoid line-of-sight probability `1 / (1 + a·exp(-b(θ - a)))`.
pub fn los_probability(theta_deg: f64, params: &ChannelParams) -> Result<f64> {
    if !(theta_deg > 0.0 && theta_deg <= 90.0) {
        return Err(Error::Domain(format!("elevation {theta_deg} outside (0, 90]")));
    }
    let a = params.los_a;
    Ok(1.0 / (1.0 + a * (-params.los_b * (theta_deg - a)).exp()))
}

/// Free-space path loss in dB.
pub fn fspl_db(distance: f64, frequency: f64) -> f64 {
    20.0 * (4.0 * PI * frequency * distance / SPEED_OF_LIGHT).log10()
}

fn geometry(uav: &Position3, user: &Position3, params: &ChannelParams) -> Result<(f64, f64, f64)> {
    let d = uav.distance(user);
    if !(d > 0.0) {
        return Err(Error::Domain("zero UAV-user distance".into()));
    }
    let theta = elevation_angle(uav, user)?;
    let p_los = los_probability(theta, params)?;
    Ok((d, theta, p_los))
}

fn excess_loss(p_los: f64, params: &ChannelParams, rng: Option<&mut dyn RngCore>) -> Result<f64> {
    match params.mode {
        LossMode::Expected => Ok(p_los * params.eta_los + (1.0 - p_los) * params.eta_nlos),
        LossMode::Sampled => {
            let rng = rng.ok_or_else(|| Error::Contract("sampled-loss mode requires an rng".into()))?;
            Ok(if rng.random::<f64>() < p_los {
                params.eta_los
            } else {
                params.eta_nlos
            })
        }
    }
}

/// Path loss in dB: free-space loss plus the LoS/NLoS excess loss.
pub fn path_loss_db(
    uav: &Position3,
    user: &Position3,
    params: &ChannelParams,
    rng: Option<&mut dyn RngCore>,
) -> Result<f64> {
    let (d, _, p_los) = geometry(uav, user, params)?;
    Ok(fspl_db(d, params.carrier_frequency) + excess_loss(p_los, params, rng)?)
}

fn gains_for(s: &Scenario, params: &ChannelParams, mut rng: Option<&mut dyn RngCore>) -> Result<Vec<Vec<f64>>> {
    s.uavs
        .iter()
        .map(|uav| {
            s.users
                .iter()
                .map(|user| {
                    let r = rng.as_mut().map(|r| &mut **r as &mut dyn RngCore);
                    let pl = path_loss_db(&uav.position, &user.position, params, r)?;
                    Ok(10f64.powf(-pl / 10.0))
                })
                .collect()
        })
        .collect()
}

/// Linear channel gain for every (UAV, user) pair, indexed `[uav][user]`.
pub fn gain_matrix(s: &Scenario, rng: Option<&mut dyn RngCore>) -> Result<Vec<Vec<f64>>> {
    gains_for(s, &s.channel, rng)
}

/// Gains in expected-loss mode regardless of the configured mode.
pub fn expected_gain_matrix(s: &Scenario) -> Result<Vec<Vec<f64>>> {
    if s.channel.mode == LossMode::Expected {
        return gains_for(s, &s.channel, None);
    }
    let params = ChannelParams {
        mode: LossMode::Expected,
        ..s.channel.clone()
    };
    gains_for(s, &params, None)
}

/// Max-received-power association from precomputed gains, with optional
/// per-UAV bias in dB. Ties go to the lowest UAV id.
pub fn associate_from_gains(s: &Scenario, gains: &[Vec<f64>], bias_db: &[f64]) -> Association {
    let mut order: Vec<usize> = (0..s.uavs.len()).collect();
    order.sort_by_key(|&j| s.uavs[j].id);
    let mut assoc = Association::new();
    for (k, user) in s.users.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for &j in &order {
            let bias = bias_db.get(j).copied().unwrap_or(0.0);
            let rx = s.transmit_power(&s.uavs[j]) * gains[j][k] * 10f64.powf(bias / 10.0);
            if best.is_none_or(|(_, b)| rx > b) {
                best = Some((j, rx));
            }
        }
        if let Some((j, _)) = best {
            assoc.insert(user.id, s.uavs[j].id);
        }
    }
    assoc
}

/// Association by maximum received power, optionally biased per UAV (dB).
///
/// Gains are evaluated in expected-loss mode whatever the configured mode.
pub fn associate_users_biased(s: &Scenario, bias_db: &[f64]) -> Result<Association> {
    Ok(associate_from_gains(s, &expected_gain_matrix(s)?, bias_db))
}

pub fn associate_users(s: &Scenario) -> Result<Association> {
    associate_users_biased(s, &[])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// bit/s.
    pub sum_rate: f64,
    /// bit/s, in `Scenario::users` order.
    pub per_user: Vec<f64>,
    /// Serving link of each user, in `Scenario::users` order.
    pub links: Vec<LinkBudget>,
}

/// Resolves an id-keyed association into `users[k] -> uavs[j]` indices.
pub fn association_indices(s: &Scenario, association: &Association) -> Result<Vec<usize>> {
    s.users
        .iter()
        .map(|user| {
            let uav_id = association
                .get(&user.id)
                .ok_or_else(|| Error::Contract(format!("user {} has no serving UAV", user.id)))?;
            s.uavs
                .iter()
                .position(|u| u.id == *uav_id)
                .ok_or_else(|| Error::Contract(format!("user {} mapped to unknown UAV {uav_id}", user.id)))
        })
        .collect()
}

/// SINR-based rates from precomputed gains.
///
/// `powers[j]` and `bandwidths[j]` belong to UAV `j`, `gains[j][k]` is the
/// linear gain from UAV `j` to user `k`, and `serving[k]` is the UAV index
/// serving user `k`. Each UAV splits its bandwidth equally among its users.
pub fn rates_from_gains(
    powers: &[f64],
    bandwidths: &[f64],
    gains: &[Vec<f64>],
    serving: &[usize],
    noise_density: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut load = vec![0usize; powers.len()];
    for &j in serving {
        load[j] += 1;
    }
    let mut rates = Vec::with_capacity(serving.len());
    let mut sinrs = Vec::with_capacity(serving.len());
    for (k, &j) in serving.iter().enumerate() {
        let share = bandwidths[j] / load[j] as f64;
        let signal = powers[j] * gains[j][k];
        let interference: f64 = (0..powers.len())
            .filter(|&i| i != j)
            .map(|i| powers[i] * gains[i][k])
            .sum();
        let denom = interference + noise_density * share;
        let sinr = if signal == 0.0 { 0.0 } else { signal / denom };
        sinrs.push(sinr);
        rates.push(share * (1.0 + sinr).log2());
    }
    (rates, sinrs)
}

fn link_details(s: &Scenario, serving: &[usize], gains: &[Vec<f64>], sinrs: &[f64], rates: &[f64]) -> Result<Vec<LinkBudget>> {
    s.users
        .iter()
        .enumerate()
        .map(|(k, user)| {
            let uav = &s.uavs[serving[k]];
            let (_, theta, p_los) = geometry(&uav.position, &user.position, &s.channel)?;
            let g = gains[serving[k]][k];
            Ok(LinkBudget {
                elevation_deg: theta,
                p_los,
                path_loss_db: -10.0 * g.log10(),
                received_power: s.transmit_power(uav) * g,
                sinr: sinrs[k],
                rate: rates[k],
            })
        })
        .collect()
}

/// Per-user and total downlink rate for the given association.
///
/// Sampled-loss mode draws one LoS state per link from `rng`.
pub fn sum_rate(s: &Scenario, association: &Association, rng: Option<&mut dyn RngCore>) -> Result<RateReport> {
    let gains = gain_matrix(s, rng)?;
    sum_rate_from_gains(s, association, &gains)
}

/// [`sum_rate`] with gains already evaluated.
pub fn sum_rate_from_gains(s: &Scenario, association: &Association, gains: &[Vec<f64>]) -> Result<RateReport> {
    let serving = association_indices(s, association)?;
    let powers: Vec<f64> = s.uavs.iter().map(|u| s.transmit_power(u)).collect();
    let bandwidths: Vec<f64> = s.uavs.iter().map(|u| u.bandwidth).collect();
    let (rates, sinrs) = rates_from_gains(&powers, &bandwidths, gains, &serving, s.channel.noise_power_density);
    let links = link_details(s, &serving, gains, &sinrs, &rates)?;
    Ok(RateReport {
        sum_rate: rates.iter().sum(),
        per_user: rates,
        links,
    })
}
