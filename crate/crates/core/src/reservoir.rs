//! Leaky-integrator reservoirs with a ridge-regression readout.
//!
//! One [`ReservoirModel`] type backs both predictors in the crate: the
//! [`PositionForecaster`] (an echo state network over the concatenated user
//! position vector) and the [`RequestPredictor`] (a rate-based liquid state
//! machine over one-hot content requests).
//!
//! The readout acts on the extended feature vector `[1, u, x]`: a bias, the
//! current input, and the reservoir state.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::world::Position3;

const MAX_INIT_ATTEMPTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReservoirConfig {
    pub reservoir_size: usize,
    pub spectral_radius: f64,
    pub input_scale: f64,
    pub leak_rate: f64,
    pub connectivity: f64,
    pub regularization: f64,
    pub washout: usize,
    pub seed: u64,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        Self {
            reservoir_size: 100,
            spectral_radius: 0.9,
            input_scale: 1.0,
            leak_rate: 0.3,
            connectivity: 0.1,
            regularization: 1e-4,
            washout: 20,
            seed: 0,
        }
    }
}

impl ReservoirConfig {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        if self.reservoir_size == 0 {
            v.push(format!("{prefix}.reservoir_size: must be at least 1"));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius < 1.0) {
            v.push(format!("{prefix}.spectral_radius: must lie in (0, 1)"));
        }
        if !(self.input_scale >= 0.0 && self.input_scale.is_finite()) {
            v.push(format!("{prefix}.input_scale: must be non-negative"));
        }
        if !(self.leak_rate > 0.0 && self.leak_rate <= 1.0) {
            v.push(format!("{prefix}.leak_rate: must lie in (0, 1]"));
        }
        if !(self.connectivity > 0.0 && self.connectivity <= 1.0) {
            v.push(format!("{prefix}.connectivity: must lie in (0, 1]"));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            v.push(format!("{prefix}.regularization: must be non-negative"));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirModel {
    pub config: ReservoirConfig,
    /// `reservoir_size × input_dim`.
    pub input_weights: DMatrix<f64>,
    /// `reservoir_size × reservoir_size`, rescaled to the configured spectral radius.
    pub recurrent_weights: DMatrix<f64>,
    pub state: DVector<f64>,
    /// `output_dim × feature_dim`; `None` until trained.
    pub readout: Option<DMatrix<f64>>,
    pub output_dim: usize,
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

fn draw_recurrent<R: Rng>(n: usize, connectivity: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| {
        if rng.random::<f64>() < connectivity {
            rng.random_range(-1.0..1.0)
        } else {
            0.0
        }
    })
}

/// Builds a reservoir with a sparse random recurrent matrix scaled to
/// `config.spectral_radius`. Deterministic in `config.seed`.
pub fn init_reservoir(config: &ReservoirConfig, input_dim: usize, output_dim: usize) -> Result<ReservoirModel> {
    if input_dim == 0 || output_dim == 0 {
        return Err(Error::Contract("reservoir input and output dims must be >= 1".into()));
    }
    if let Some(v) = config.violations("reservoir").into_iter().next() {
        return Err(Error::Domain(v));
    }
    let n = config.reservoir_size;
    for attempt in 0..MAX_INIT_ATTEMPTS {
        let mut rng = rng_for(config.seed, &["reservoir", &attempt.to_string()]);
        let input_weights = DMatrix::from_fn(n, input_dim, |_, _| rng.random_range(-1.0..1.0) * config.input_scale);
        let raw = draw_recurrent(n, config.connectivity, &mut rng);
        let rho = spectral_radius(&raw);
        if !(rho > 1e-12) || !rho.is_finite() {
            continue;
        }
        return Ok(ReservoirModel {
            config: config.clone(),
            input_weights,
            recurrent_weights: raw * (config.spectral_radius / rho),
            state: DVector::zeros(n),
            readout: None,
            output_dim,
        });
    }
    Err(Error::Numerical(format!(
        "recurrent matrix had zero spectral radius in {MAX_INIT_ATTEMPTS} draws; raise connectivity or reservoir size"
    )))
}

impl ReservoirModel {
    pub fn input_dim(&self) -> usize {
        self.input_weights.ncols()
    }

    pub fn size(&self) -> usize {
        self.config.reservoir_size
    }

    pub fn feature_dim(&self) -> usize {
        1 + self.input_dim() + self.size()
    }

    pub fn reset_state(&mut self) {
        self.state.fill(0.0);
    }

    /// Next state for `state` under `input`, without mutating the model.
    pub fn next_state(&self, state: &DVector<f64>, input: &DVector<f64>) -> Result<DVector<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Contract(format!(
                "input has {} entries, reservoir expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let a = self.config.leak_rate;
        let pre = &self.input_weights * input + &self.recurrent_weights * state;
        Ok(state * (1.0 - a) + pre.map(f64::tanh) * a)
    }

    /// Leaky-integrator update `x ← (1−a)x + a·tanh(W_in·u + W·x)`.
    pub fn update_state(&mut self, input: &DVector<f64>) -> Result<&DVector<f64>> {
        self.state = self.next_state(&self.state, input)?;
        Ok(&self.state)
    }

    /// The readout feature vector `[1, u, x]`.
    pub fn features(&self, input: &DVector<f64>, state: &DVector<f64>) -> DVector<f64> {
        let mut f = DVector::zeros(self.feature_dim());
        f[0] = 1.0;
        f.rows_mut(1, input.len()).copy_from(input);
        f.rows_mut(1 + input.len(), state.len()).copy_from(state);
        f
    }

    pub fn readout(&self) -> Result<&DMatrix<f64>> {
        self.readout
            .as_ref()
            .ok_or_else(|| Error::Contract("reservoir readout is not trained".into()))
    }

    pub fn output(&self, features: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.readout()? * features)
    }

    /// Fits and installs the readout from feature rows `features` (T × F)
    /// and targets (T × output_dim).
    pub fn fit_readout(&mut self, features: &DMatrix<f64>, targets: &DMatrix<f64>, lambda: f64) -> Result<&DMatrix<f64>> {
        if targets.ncols() != self.output_dim || features.ncols() != self.feature_dim() {
            return Err(Error::Contract(format!(
                "readout fit expects {} feature and {} target columns",
                self.feature_dim(),
                self.output_dim
            )));
        }
        self.readout = Some(fit_readout(features, targets, lambda)?);
        self.readout()
    }

    /// Textual form: a header line, then each matrix as `name rows cols`
    /// followed by its rows as whitespace-separated decimals.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "uavnet-reservoir 1");
        let _ = writeln!(
            out,
            "config {} {} {} {} {} {} {} {}",
            c.reservoir_size, c.spectral_radius, c.input_scale, c.leak_rate, c.connectivity, c.regularization, c.washout, c.seed
        );
        let _ = writeln!(out, "output_dim {}", self.output_dim);
        write_matrix(&mut out, "input", &self.input_weights);
        write_matrix(&mut out, "recurrent", &self.recurrent_weights);
        write_matrix(&mut out, "state", &DMatrix::from_column_slice(1, self.state.len(), self.state.as_slice()));
        match &self.readout {
            Some(r) => write_matrix(&mut out, "readout", r),
            None => out.push_str("readout none\n"),
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse { line: 0, message: format!("missing {what}") });
        let (line, header) = next("header")?;
        if header != "uavnet-reservoir 1" {
            return Err(Error::Parse { line, message: "unknown model header".into() });
        }
        let (line, cfg) = next("config")?;
        let f: Vec<&str> = cfg.split_whitespace().collect();
        if f.len() != 9 || f[0] != "config" {
            return Err(Error::Parse { line, message: "malformed config line".into() });
        }
        fn bad<E>(line: usize) -> impl Fn(E) -> Error {
            move |_| Error::Parse { line, message: "malformed config value".into() }
        }
        let config = ReservoirConfig {
            reservoir_size: f[1].parse().map_err(bad(line))?,
            spectral_radius: f[2].parse().map_err(bad(line))?,
            input_scale: f[3].parse().map_err(bad(line))?,
            leak_rate: f[4].parse().map_err(bad(line))?,
            connectivity: f[5].parse().map_err(bad(line))?,
            regularization: f[6].parse().map_err(bad(line))?,
            washout: f[7].parse().map_err(bad(line))?,
            seed: f[8].parse().map_err(bad(line))?,
        };
        let (line, od) = next("output_dim")?;
        let output_dim = od
            .strip_prefix("output_dim ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or(Error::Parse { line, message: "malformed output_dim".into() })?;
        let input_weights = read_matrix(&mut next, "input")?.ok_or(Error::Parse { line, message: "missing input".into() })?;
        let recurrent_weights =
            read_matrix(&mut next, "recurrent")?.ok_or(Error::Parse { line, message: "missing recurrent".into() })?;
        let state = read_matrix(&mut next, "state")?.ok_or(Error::Parse { line, message: "missing state".into() })?;
        let readout = read_matrix(&mut next, "readout")?;
        Ok(Self {
            config,
            input_weights,
            recurrent_weights,
            state: DVector::from_column_slice(state.as_slice()),
            readout,
            output_dim,
        })
    }
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{name} {} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

fn read_matrix<'a>(
    next: &mut impl FnMut(&str) -> Result<(usize, &'a str)>,
    name: &str,
) -> Result<Option<DMatrix<f64>>> {
    let (line, head) = next(name)?;
    let f: Vec<&str> = head.split_whitespace().collect();
    if f.first() != Some(&name) {
        return Err(Error::Parse { line, message: format!("expected `{name}` block") });
    }
    if f.get(1) == Some(&"none") {
        return Ok(None);
    }
    let dims = || Error::Parse { line, message: format!("malformed `{name}` dimensions") };
    let rows: usize = f.get(1).and_then(|v| v.parse().ok()).ok_or_else(dims)?;
    let cols: usize = f.get(2).and_then(|v| v.parse().ok()).ok_or_else(dims)?;
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        let (line, text) = next(name)?;
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse { line, message: "non-numeric weight".into() })?;
        if vals.len() != cols {
            return Err(Error::Parse { line, message: format!("expected {cols} values, found {}", vals.len()) });
        }
        for (c, v) in vals.into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    Ok(Some(m))
}

/// Ridge regression from sufficient statistics: returns `W` (outputs × F)
/// solving `(G + λI) Wᵀ = C`, where `G = SᵀS` and `C = SᵀY`.
pub fn ridge_from_gram(gram: &DMatrix<f64>, cross: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let f = gram.nrows();
    if lambda == 0.0 {
        let eig = gram.clone().symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > max * 1e-12) {
            return Err(Error::Numerical(
                "normal matrix is singular or ill-conditioned with λ = 0; use a positive regularization".into(),
            ));
        }
    }
    let normal = gram + DMatrix::identity(f, f) * lambda;
    let chol = normal.cholesky().ok_or_else(|| {
        Error::Numerical("normal matrix is not positive definite; use a positive regularization".into())
    })?;
    Ok(chol.solve(cross).transpose())
}

/// Ridge solution minimizing `‖S·Wᵀ − Y‖² + λ‖W‖²` for feature rows `S`
/// (T × F) and targets `Y` (T × outputs).
pub fn fit_readout(features: &DMatrix<f64>, targets: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if features.nrows() == 0 {
        return Err(Error::Contract("readout fit needs at least one sample".into()));
    }
    if features.nrows() != targets.nrows() {
        return Err(Error::Contract(format!(
            "{} feature rows vs {} target rows",
            features.nrows(),
            targets.nrows()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Domain("ridge λ must be non-negative".into()));
    }
    let st = features.transpose();
    ridge_from_gram(&(&st * features), &(&st * targets), lambda)
}

/// Maps positions in `[0, x_max] × [0, y_max]` to `[-1, 1]²` and back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionScaler {
    pub x_max: f64,
    pub y_max: f64,
}

impl PositionScaler {
    pub fn encode(&self, positions: &[Position3]) -> DVector<f64> {
        DVector::from_iterator(
            positions.len() * 2,
            positions
                .iter()
                .flat_map(|p| [2.0 * p.x / self.x_max - 1.0, 2.0 * p.y / self.y_max - 1.0]),
        )
    }

    pub fn decode(&self, v: &DVector<f64>) -> Vec<Position3> {
        v.as_slice()
            .chunks(2)
            .map(|c| Position3::ground((c[0] + 1.0) * 0.5 * self.x_max, (c[1] + 1.0) * 0.5 * self.y_max))
            .collect()
    }
}

/// Echo state network forecasting the next user position vector from the
/// current one. Input and output are the `2K` concatenated coordinates.
#[derive(Debug, Clone)]
pub struct PositionForecaster {
    pub model: ReservoirModel,
    pub scaler: PositionScaler,
    pub n_users: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    /// `horizon` predicted position vectors.
    pub predictions: Vec<Vec<Position3>>,
    /// One-step mean squared error (m²) over the held-out suffix, if given.
    pub holdout_mse: Option<f64>,
}

impl PositionForecaster {
    pub fn new(config: &ReservoirConfig, n_users: usize, scaler: PositionScaler) -> Result<Self> {
        let dim = 2 * n_users;
        Ok(Self {
            model: init_reservoir(config, dim, dim)?,
            scaler,
            n_users,
        })
    }

    fn check_frame(&self, frame: &[Position3]) -> Result<()> {
        if frame.len() != self.n_users {
            return Err(Error::Contract(format!(
                "frame has {} users, forecaster expects {}",
                frame.len(),
                self.n_users
            )));
        }
        Ok(())
    }

    /// Trains the readout on one or more position sequences; the first
    /// `washout` steps of each are discarded.
    pub fn train(&mut self, sequences: &[Vec<Vec<Position3>>]) -> Result<()> {
        let f = self.model.feature_dim();
        let out = self.model.output_dim;
        let mut gram = DMatrix::zeros(f, f);
        let mut cross = DMatrix::zeros(f, out);
        let mut samples = 0usize;
        for seq in sequences {
            let mut state = DVector::zeros(self.model.size());
            for (t, pair) in seq.windows(2).enumerate() {
                self.check_frame(&pair[0])?;
                self.check_frame(&pair[1])?;
                let u = self.scaler.encode(&pair[0]);
                state = self.model.next_state(&state, &u)?;
                if t < self.model.config.washout {
                    continue;
                }
                let feat = self.model.features(&u, &state);
                let y = self.scaler.encode(&pair[1]);
                gram.ger(1.0, &feat, &feat, 1.0);
                cross.ger(1.0, &feat, &y, 1.0);
                samples += 1;
            }
        }
        if samples == 0 {
            return Err(Error::Contract("no post-washout training samples".into()));
        }
        self.model.readout = Some(ridge_from_gram(&gram, &cross, self.model.config.regularization)?);
        Ok(())
    }

    fn step(&self, state: &DVector<f64>, frame: &[Position3]) -> Result<(DVector<f64>, Vec<Position3>)> {
        let u = self.scaler.encode(frame);
        let next = self.model.next_state(state, &u)?;
        let y = self.model.output(&self.model.features(&u, &next))?;
        Ok((next, self.scaler.decode(&y)))
    }

    /// Feeds the latest observation into the running state and returns the
    /// one-step-ahead forecast.
    pub fn observe(&mut self, frame: &[Position3]) -> Result<Vec<Position3>> {
        self.check_frame(frame)?;
        let (next, pred) = self.step(&self.model.state, frame)?;
        self.model.state = next;
        Ok(pred)
    }

    pub fn reset(&mut self) {
        self.model.reset_state();
    }

    /// Drives a fresh copy of the state through `window`, then forecasts
    /// `horizon` steps by feeding predictions back as inputs. The model's own
    /// state is untouched.
    pub fn predict_next_positions(
        &self,
        window: &[Vec<Position3>],
        horizon: usize,
        holdout: Option<&[Vec<Position3>]>,
    ) -> Result<Forecast> {
        self.model.readout()?;
        let mut state = DVector::zeros(self.model.size());
        let mut last = None;
        for frame in window {
            self.check_frame(frame)?;
            let (s, p) = self.step(&state, frame)?;
            state = s;
            last = Some(p);
        }
        let holdout_mse = match holdout {
            Some(h) if !h.is_empty() => {
                let mut st = state.clone();
                let mut pred = last.clone().ok_or_else(|| Error::Contract("holdout needs a non-empty window".into()))?;
                let mut se = 0.0;
                let mut n = 0usize;
                for frame in h {
                    self.check_frame(frame)?;
                    for (p, a) in pred.iter().zip(frame) {
                        se += (p.x - a.x).powi(2) + (p.y - a.y).powi(2);
                        n += 2;
                    }
                    let (s, p) = self.step(&st, frame)?;
                    st = s;
                    pred = p;
                }
                Some(se / n as f64)
            }
            _ => None,
        };
        let mut predictions = Vec::with_capacity(horizon);
        if horizon > 0 {
            let mut pred = last.ok_or_else(|| Error::Contract("forecast needs a non-empty window".into()))?;
            predictions.push(pred.clone());
            for _ in 1..horizon {
                let (s, p) = self.step(&state, &pred)?;
                state = s;
                pred = p;
                predictions.push(pred.clone());
            }
        }
        Ok(Forecast {
            predictions,
            holdout_mse,
        })
    }
}

/// Shifts negative entries up by the minimum, clips at zero, and normalizes.
/// An all-zero vector becomes uniform.
pub fn normalize_distribution(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = if min < 0.0 { -min } else { 0.0 };
    let mut v: Vec<f64> = raw
        .iter()
        .map(|x| if x.is_finite() { (x + shift).max(0.0) } else { 0.0 })
        .collect();
    let sum: f64 = v.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return vec![1.0 / raw.len() as f64; raw.len()];
    }
    v.iter_mut().for_each(|x| *x /= sum);
    v
}

/// Rate-based liquid state machine predicting each user's next content
/// request distribution from their one-hot request history.
///
/// Each user drives a private copy of the reservoir state; the readout is
/// shared and refit from accumulated sufficient statistics.
#[derive(Debug, Clone)]
pub struct RequestPredictor {
    pub model: ReservoirModel,
    pub catalog: usize,
    states: Vec<DVector<f64>>,
    last_features: Vec<Option<DVector<f64>>>,
    steps: Vec<usize>,
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    samples: usize,
}

impl RequestPredictor {
    pub fn new(config: &ReservoirConfig, catalog: usize, n_users: usize) -> Result<Self> {
        if catalog == 0 {
            return Err(Error::Contract("content catalog is empty".into()));
        }
        let model = init_reservoir(config, catalog, catalog)?;
        let f = model.feature_dim();
        Ok(Self {
            states: vec![DVector::zeros(model.size()); n_users],
            last_features: vec![None; n_users],
            steps: vec![0; n_users],
            gram: DMatrix::zeros(f, f),
            cross: DMatrix::zeros(f, catalog),
            samples: 0,
            model,
            catalog,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn is_trained(&self) -> bool {
        self.model.readout.is_some()
    }

    fn encode(&self, request: Option<usize>) -> DVector<f64> {
        let mut u = DVector::zeros(self.catalog);
        if let Some(c) = request {
            u[c] = 1.0;
        }
        u
    }

    /// Records one slot for `user`. A request becomes a training target for
    /// the features seen after the previous slot; the state then advances.
    pub fn observe(&mut self, user: usize, request: Option<usize>) -> Result<()> {
        if let Some(c) = request {
            if c >= self.catalog {
                return Err(Error::Contract(format!("content {c} outside catalog of {}", self.catalog)));
            }
            if let Some(feat) = &self.last_features[user] {
                let y = self.encode(Some(c));
                self.gram.ger(1.0, feat, feat, 1.0);
                self.cross.ger(1.0, feat, &y, 1.0);
                self.samples += 1;
            }
        }
        let u = self.encode(request);
        let next = self.model.next_state(&self.states[user], &u)?;
        self.steps[user] += 1;
        self.last_features[user] = (self.steps[user] > self.model.config.washout).then(|| self.model.features(&u, &next));
        self.states[user] = next;
        Ok(())
    }

    /// Refits the shared readout from every sample seen so far.
    pub fn refit(&mut self) -> Result<()> {
        if self.samples == 0 {
            return Ok(());
        }
        self.model.readout = Some(ridge_from_gram(&self.gram, &self.cross, self.model.config.regularization)?);
        Ok(())
    }

    /// Current predicted next-request distribution for `user`; uniform
    /// before the readout is trained.
    pub fn distribution(&self, user: usize) -> Vec<f64> {
        match (&self.model.readout, &self.last_features[user]) {
            (Some(w), Some(f)) => normalize_distribution((w * f).as_slice()),
            _ => vec![1.0 / self.catalog as f64; self.catalog],
        }
    }

    /// Distribution after driving a fresh state through `history`.
    pub fn predict_request_distribution(&self, history: &[Option<usize>]) -> Result<Vec<f64>> {
        let uniform = vec![1.0 / self.catalog as f64; self.catalog];
        let Some(w) = &self.model.readout else {
            return Ok(uniform);
        };
        let mut state = DVector::zeros(self.model.size());
        let mut feat = None;
        for &req in history {
            if req.is_some_and(|c| c >= self.catalog) {
                return Err(Error::Contract("request outside catalog".into()));
            }
            let u = self.encode(req);
            state = self.model.next_state(&state, &u)?;
            feat = Some(self.model.features(&u, &state));
        }
        Ok(match feat {
            Some(f) => normalize_distribution((w * f).as_slice()),
            None => uniform,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(seed: u64) -> ReservoirConfig {
        ReservoirConfig {
            reservoir_size: 40,
            seed,
            ..ReservoirConfig::default()
        }
    }

    #[test]
    fn spectral_radius_matches_config() {
        let m = init_reservoir(&ReservoirConfig::default(), 3, 2).unwrap();
        assert_abs_diff_eq!(spectral_radius(&m.recurrent_weights), 0.9, epsilon = 1e-6);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = init_reservoir(&small_config(3), 2, 2).unwrap();
        let b = init_reservoir(&small_config(3), 2, 2).unwrap();
        assert_eq!(a, b);
        let c = init_reservoir(&small_config(4), 2, 2).unwrap();
        assert_ne!(a.recurrent_weights, c.recurrent_weights);
    }

    #[test]
    fn dense_connectivity_has_no_structural_zeros() {
        let cfg = ReservoirConfig {
            connectivity: 1.0,
            ..small_config(1)
        };
        let m = init_reservoir(&cfg, 1, 1).unwrap();
        assert!(m.recurrent_weights.iter().all(|w| *w != 0.0));
    }

    #[test]
    fn degenerate_draw_errors_after_retries() {
        let cfg = ReservoirConfig {
            reservoir_size: 1,
            connectivity: 1e-12,
            ..ReservoirConfig::default()
        };
        assert!(matches!(init_reservoir(&cfg, 1, 1), Err(Error::Numerical(_))));
    }

    #[test]
    fn zero_input_keeps_zero_state() {
        let mut m = init_reservoir(&small_config(0), 2, 1).unwrap();
        m.update_state(&DVector::zeros(2)).unwrap();
        assert!(m.state.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn full_leak_is_plain_tanh_update() {
        let cfg = ReservoirConfig {
            leak_rate: 1.0,
            ..small_config(2)
        };
        let mut m = init_reservoir(&cfg, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let u = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
            let expected = (&m.input_weights * &u + &m.recurrent_weights * &m.state).map(f64::tanh);
            m.update_state(&u).unwrap();
            assert_eq!(m.state, expected);
            assert!(m.state.iter().all(|x| x.abs() < 1.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let mut m = init_reservoir(&small_config(0), 2, 1).unwrap();
        assert!(matches!(m.update_state(&DVector::zeros(3)), Err(Error::Contract(_))));
    }

    #[test]
    fn exact_linear_targets_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let w_true = DMatrix::from_row_slice(2, 4, &[1.0, -2.0, 0.5, 3.0, 0.0, 1.0, 1.0, -1.0]);
        let y = &s * w_true.transpose();
        let w = fit_readout(&s, &y, 0.0).unwrap();
        let resid = &s * w.transpose() - &y;
        assert!(resid.norm_squared() / (resid.len() as f64) < 1e-9);
    }

    #[test]
    fn huge_lambda_shrinks_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = DMatrix::from_fn(20, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(20, 1, |_, _| rng.random_range(-1.0..1.0));
        let w = fit_readout(&s, &y, 1e12).unwrap();
        assert!(w.norm() < 1e-9);
    }

    #[test]
    fn singular_system_without_lambda_errors() {
        let s = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(matches!(fit_readout(&s, &y, 0.0), Err(Error::Numerical(_))));
        assert!(fit_readout(&s, &y, 1e-3).is_ok());
    }

    #[test]
    fn normalization_contract() {
        assert_eq!(normalize_distribution(&[0.0, 0.0, 0.0, 0.0]), vec![0.25; 4]);
        let d = normalize_distribution(&[-1.0, 1.0, 3.0]);
        assert_abs_diff_eq!(d.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(d[0], 0.0);
        assert!(d[2] > d[1]);
    }

    #[test]
    fn untrained_request_predictor_is_uniform() {
        let p = RequestPredictor::new(&small_config(0), 5, 2).unwrap();
        assert_eq!(p.distribution(0), vec![0.2; 5]);
        assert_eq!(p.predict_request_distribution(&[Some(1), None]).unwrap(), vec![0.2; 5]);
        assert!(matches!(RequestPredictor::new(&small_config(0), 0, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn constant_stream_predicts_its_content() {
        let mut p = RequestPredictor::new(&small_config(5), 6, 1).unwrap();
        for _ in 0..200 {
            p.observe(0, Some(3)).unwrap();
        }
        p.refit().unwrap();
        let d = p.distribution(0);
        let mode = (0..6).max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
        assert_eq!(mode, 3);
        let d2 = p.predict_request_distribution(&[Some(3); 50]).unwrap();
        assert_abs_diff_eq!(d2.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert_eq!((0..6).max_by(|&a, &b| d2[a].total_cmp(&d2[b])).unwrap(), 3);
    }

    #[test]
    fn text_round_trip() {
        let mut f = PositionForecaster::new(&small_config(9), 1, PositionScaler { x_max: 100.0, y_max: 100.0 }).unwrap();
        let seq: Vec<Vec<Position3>> = (0..60)
            .map(|t| vec![Position3::ground(50.0 + 40.0 * (t as f64 * 0.3).sin(), 50.0)])
            .collect();
        f.train(&[seq]).unwrap();
        f.model.update_state(&DVector::from_element(2, 0.1)).unwrap();
        let text = f.model.to_text();
        let back = ReservoirModel::from_text(&text).unwrap();
        assert_eq!(back, f.model);
        let untrained = init_reservoir(&small_config(1), 2, 2).unwrap();
        assert_eq!(ReservoirModel::from_text(&untrained.to_text()).unwrap(), untrained);
        assert!(ReservoirModel::from_text("garbage").is_err());
    }

    #[test]
    fn untrained_forecaster_is_contract_error() {
        let f = PositionForecaster::new(&small_config(0), 1, PositionScaler { x_max: 1.0, y_max: 1.0 }).unwrap();
        let w = vec![vec![Position3::ground(0.5, 0.5)]];
        assert!(matches!(f.predict_next_positions(&w, 1, None), Err(Error::Contract(_))));
    }

    /// Gauss-Jordan elimination with partial pivoting, written out by hand.
    #[allow(clippy::needless_range_loop)]
    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let n = a.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in 0..n {
                if row == col {
                    continue;
                }
                let f = a[row][col] / a[col][col];
                for k in 0..n {
                    a[row][k] -= f * a[col][k];
                }
                for k in 0..b[row].len() {
                    b[row][k] -= f * b[col][k];
                }
            }
        }
        (0..n).map(|i| b[i].iter().map(|v| v / a[i][i]).collect()).collect()
    }

    #[test]
    fn ridge_matches_normal_equation_oracle() {
        for (seed, lambda) in [(1u64, 0.0), (2, 1e-3), (3, 0.5)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, f, o) = (50, 6, 3);
            let s = DMatrix::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0));
            let y = DMatrix::from_fn(n, o, |_, _| rng.random_range(-2.0..2.0));
            let a: Vec<Vec<f64>> = (0..f)
                .map(|i| {
                    (0..f)
                        .map(|j| (0..n).map(|t| s[(t, i)] * s[(t, j)]).sum::<f64>() + if i == j { lambda } else { 0.0 })
                        .collect()
                })
                .collect();
            let b: Vec<Vec<f64>> = (0..f)
                .map(|i| (0..o).map(|k| (0..n).map(|t| s[(t, i)] * y[(t, k)]).sum()).collect())
                .collect();
            let oracle = solve_dense(a, b);
            let w = fit_readout(&s, &y, lambda).unwrap();
            for i in 0..f {
                for k in 0..o {
                    assert_abs_diff_eq!(w[(k, i)], oracle[i][k], epsilon = 1e-6);
                }
            }
        }
    }

    fn scaler() -> PositionScaler {
        PositionScaler { x_max: 1000.0, y_max: 1000.0 }
    }

    #[test]
    fn static_users_are_a_fixed_point() {
        let mut f = PositionForecaster::new(&ReservoirConfig::default(), 2, scaler()).unwrap();
        let frame = vec![Position3::ground(120.0, 830.0), Position3::ground(640.0, 310.0)];
        f.train(&[vec![frame.clone(); 300]]).unwrap();
        let out = f.predict_next_positions(&vec![frame.clone(); 60], 3, None).unwrap();
        assert_eq!(out.predictions.len(), 3);
        for pred in &out.predictions {
            for (p, q) in pred.iter().zip(&frame) {
                assert!(p.horizontal_distance(q) < 1e-3, "{p:?} vs {q:?}");
            }
        }
    }

    #[test]
    fn zero_horizon_is_empty() {
        let mut f = PositionForecaster::new(&small_config(0), 1, scaler()).unwrap();
        let frame = vec![Position3::ground(10.0, 10.0)];
        f.train(&[vec![frame.clone(); 40]]).unwrap();
        let before = f.model.state.clone();
        assert!(f.predict_next_positions(&[frame], 0, None).unwrap().predictions.is_empty());
        assert_eq!(f.model.state, before);
    }

    fn circling(t: usize) -> Vec<Position3> {
        let t = t as f64;
        vec![
            Position3::ground(500.0 + 300.0 * (0.2 * t).sin(), 500.0 + 300.0 * (0.2 * t).cos()),
            Position3::ground(400.0 + 200.0 * (0.13 * t + 1.0).cos(), 600.0 + 150.0 * (0.13 * t).sin()),
        ]
    }

    #[test]
    fn sinusoid_beats_persistence() {
        let mut f = PositionForecaster::new(&ReservoirConfig::default(), 2, scaler()).unwrap();
        let train: Vec<_> = (0..1500).map(circling).collect();
        f.train(&[train]).unwrap();
        let window: Vec<_> = (1500..1600).map(circling).collect();
        let holdout: Vec<_> = (1600..1800).map(circling).collect();
        let mse = f.predict_next_positions(&window, 1, Some(&holdout)).unwrap().holdout_mse.unwrap();
        let mut persist = 0.0;
        for t in 1599..1799 {
            for (a, b) in circling(t).iter().zip(circling(t + 1).iter()) {
                persist += (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
            }
        }
        persist /= (200 * 4) as f64;
        assert!(mse <= 0.5 * persist, "esn {mse} persistence {persist}");
    }

    #[test]
    fn echo_states_forget_initial_conditions() {
        let m = init_reservoir(&ReservoirConfig::default(), 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut a = DVector::from_fn(m.size(), |_, _| rng.random_range(-1.0..1.0));
        let mut b = DVector::from_fn(m.size(), |_, _| rng.random_range(-1.0..1.0));
        let d0 = (&a - &b).norm();
        for _ in 0..500 {
            let u = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            a = m.next_state(&a, &u).unwrap();
            b = m.next_state(&b, &u).unwrap();
        }
        assert!((&a - &b).norm() < 1e-6 * d0);
    }
}
