//! Arrival forecasts for the spout lookahead windows.
//!
//! A forecast for slot `s` is requested once, when `s` enters a window.
//! Windows of size `W` hold forecasts for `t+1..=t+W`; the cell of the
//! current slot only ever holds tuples whose arrival has been revealed, or
//! predicted tuples awaiting reconciliation. Level predictors (moving
//! average, EWMA, Kalman, empirical distribution) give the same forecast for
//! every horizon.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::WorkloadError;
use crate::workload::ArrivalStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictionScheme {
    Perfect,
    AllTrueNegative,
    FalsePositive {
        x: f64,
    },
    MovingAverage {
        #[serde(default = "default_ma")]
        n: usize,
    },
    Ewma {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Kalman {
        #[serde(default = "default_q")]
        q: f64,
        #[serde(default = "default_r")]
        r: f64,
    },
    Distr,
    Replay {
        path: String,
    },
}

fn default_ma() -> usize {
    5
}
fn default_alpha() -> f64 {
    0.3
}
fn default_q() -> f64 {
    1.0
}
fn default_r() -> f64 {
    4.0
}

impl PredictionScheme {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            PredictionScheme::FalsePositive { x } if !(x.is_finite() && *x >= 0.0) => {
                Err(format!("false_positive x must be non-negative, got {x}"))
            }
            PredictionScheme::MovingAverage { n: 0 } => Err("moving_average n must be positive".into()),
            PredictionScheme::Ewma { alpha } if !(*alpha > 0.0 && *alpha <= 1.0) => {
                Err(format!("ewma alpha must lie in (0, 1], got {alpha}"))
            }
            PredictionScheme::Kalman { q, r } if !(*q >= 0.0 && *r >= 0.0 && q.is_finite() && r.is_finite()) => {
                Err(format!("kalman variances must be non-negative, got q={q} r={r}"))
            }
            _ => Ok(()),
        }
    }
}

/// How per-application window sizes are chosen from `W_mean`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Uniform on `0..=2 W_mean` per application.
    #[default]
    Sampled,
    /// Every application uses `W_mean`.
    Fixed,
}

/// One window size per application.
pub fn assign_window_sizes(num_apps: usize, w_mean: usize, mode: WindowMode, seed: u64) -> Vec<usize> {
    match mode {
        WindowMode::Fixed => vec![w_mean; num_apps],
        WindowMode::Sampled => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..num_apps).map(|_| rng.random_range(0..=2 * w_mean)).collect()
        }
    }
}

/// Outcome of matching a slot's predicted tuples against its arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub predicted: u32,
    pub actual: u32,
    pub matched: u32,
    pub phantom: u32,
    pub unpredicted: u32,
}

pub fn reconcile(predicted: u32, actual: u32) -> Reconciliation {
    let matched = predicted.min(actual);
    Reconciliation {
        predicted,
        actual,
        matched,
        phantom: predicted - matched,
        unpredicted: actual - matched,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictorStats {
    pub sum_sq: f64,
    pub count: u64,
}

impl PredictorStats {
    pub fn record(&mut self, forecast: u32, actual: u32) {
        let e = forecast as f64 - actual as f64;
        self.sum_sq += e * e;
        self.count += 1;
    }

    pub fn mse(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_sq / self.count as f64)
    }

    pub fn merge(&mut self, other: &PredictorStats) {
        self.sum_sq += other.sum_sq;
        self.count += other.count;
    }
}

fn clamp_round(x: f64, lambda_max: u32) -> u32 {
    if x.is_nan() || x <= 0.0 {
        0
    } else {
        (x.round() as u64).min(lambda_max as u64) as u32
    }
}

/// Rounded mean of the last `n` observations.
pub fn moving_average(history: &[u32], n: usize, lambda_max: u32) -> u32 {
    let tail = &history[history.len().saturating_sub(n)..];
    if tail.is_empty() {
        return 0;
    }
    clamp_round(tail.iter().map(|&x| x as f64).sum::<f64>() / tail.len() as f64, lambda_max)
}

/// Exponential smoothing started at the first observation.
pub fn ewma(history: &[u32], alpha: f64, lambda_max: u32) -> u32 {
    let Some((&first, rest)) = history.split_first() else {
        return 0;
    };
    let s = rest.iter().fold(first as f64, |s, &x| alpha * x as f64 + (1.0 - alpha) * s);
    clamp_round(s, lambda_max)
}

/// Scalar random-walk filter; returns `(state, variance)` after `history`.
fn kalman_fold(history: &[u32], q: f64, r: f64) -> Option<(f64, f64)> {
    let (&first, rest) = history.split_first()?;
    let mut x = first as f64;
    let mut p = r;
    for &z in rest {
        p += q;
        let denom = p + r;
        let k = if denom > 0.0 { p / denom } else { 1.0 };
        x += k * (z as f64 - x);
        p *= 1.0 - k;
    }
    Some((x, p))
}

pub fn kalman_1d(history: &[u32], q: f64, r: f64, lambda_max: u32) -> u32 {
    kalman_fold(history, q, r).map_or(0, |(x, _)| clamp_round(x, lambda_max))
}

/// One draw from the empirical distribution of `history`.
pub fn empirical_distr(history: &[u32], rng: &mut impl Rng, lambda_max: u32) -> u32 {
    if history.is_empty() {
        return 0;
    }
    history[rng.random_range(0..history.len())].min(lambda_max)
}

/// Stateful forecaster for one arrival stream.
pub trait Predictor: Send {
    /// Forecast for `slot`, requested when it enters the window.
    fn forecast(&mut self, slot: u64) -> u32;
    /// Reveals the actual arrivals of the current slot.
    fn observe(&mut self, actual: u32);
}

pub struct Perfect {
    stream: ArrivalStream,
}

impl Predictor for Perfect {
    fn forecast(&mut self, slot: u64) -> u32 {
        self.stream.at(slot)
    }
    fn observe(&mut self, _actual: u32) {}
}

pub struct AllTrueNegative;

impl Predictor for AllTrueNegative {
    fn forecast(&mut self, _slot: u64) -> u32 {
        0
    }
    fn observe(&mut self, _actual: u32) {}
}

/// Perfect forecasts plus Poisson(`x / W`) spurious tuples per cell.
pub struct FalsePositive {
    stream: ArrivalStream,
    extra: Option<Poisson<f64>>,
    rng: ChaCha8Rng,
    lambda_max: u32,
}

impl FalsePositive {
    pub fn new(stream: ArrivalStream, x: f64, window: usize, lambda_max: u32, seed: u64) -> Self {
        let mean = if window == 0 { 0.0 } else { x / window as f64 };
        FalsePositive {
            stream,
            extra: (mean > 0.0).then(|| Poisson::new(mean).expect("positive mean")),
            rng: ChaCha8Rng::seed_from_u64(seed),
            lambda_max,
        }
    }

    pub fn draw_extra(&mut self) -> u32 {
        match &self.extra {
            Some(d) => d.sample(&mut self.rng) as u32,
            None => 0,
        }
    }
}

impl Predictor for FalsePositive {
    fn forecast(&mut self, slot: u64) -> u32 {
        let extra = self.draw_extra();
        (self.stream.at(slot) + extra).min(self.lambda_max)
    }
    fn observe(&mut self, _actual: u32) {}
}

pub struct MovingAverage {
    n: usize,
    recent: VecDeque<u32>,
    sum: u64,
    lambda_max: u32,
}

impl MovingAverage {
    pub fn new(n: usize, lambda_max: u32) -> Self {
        MovingAverage {
            n,
            recent: VecDeque::with_capacity(n),
            sum: 0,
            lambda_max,
        }
    }
}

impl Predictor for MovingAverage {
    fn forecast(&mut self, _slot: u64) -> u32 {
        if self.recent.is_empty() {
            return 0;
        }
        clamp_round(self.sum as f64 / self.recent.len() as f64, self.lambda_max)
    }
    fn observe(&mut self, actual: u32) {
        if self.recent.len() == self.n {
            self.sum -= self.recent.pop_front().unwrap() as u64;
        }
        self.recent.push_back(actual);
        self.sum += actual as u64;
    }
}

pub struct Ewma {
    alpha: f64,
    level: Option<f64>,
    lambda_max: u32,
}

impl Ewma {
    pub fn new(alpha: f64, lambda_max: u32) -> Self {
        Ewma {
            alpha,
            level: None,
            lambda_max,
        }
    }
}

impl Predictor for Ewma {
    fn forecast(&mut self, _slot: u64) -> u32 {
        self.level.map_or(0, |s| clamp_round(s, self.lambda_max))
    }
    fn observe(&mut self, actual: u32) {
        let z = actual as f64;
        self.level = Some(match self.level {
            None => z,
            Some(s) => self.alpha * z + (1.0 - self.alpha) * s,
        });
    }
}

pub struct Kalman {
    q: f64,
    r: f64,
    state: Option<(f64, f64)>,
    lambda_max: u32,
}

impl Kalman {
    pub fn new(q: f64, r: f64, lambda_max: u32) -> Self {
        Kalman {
            q,
            r,
            state: None,
            lambda_max,
        }
    }
}

impl Predictor for Kalman {
    fn forecast(&mut self, _slot: u64) -> u32 {
        self.state.map_or(0, |(x, _)| clamp_round(x, self.lambda_max))
    }
    fn observe(&mut self, actual: u32) {
        let z = actual as f64;
        self.state = Some(match self.state {
            None => (z, self.r),
            Some((x, p)) => {
                let p = p + self.q;
                let denom = p + self.r;
                let k = if denom > 0.0 { p / denom } else { 1.0 };
                (x + k * (z - x), p * (1.0 - k))
            }
        });
    }
}

/// Independent draws from the histogram of past per-slot counts.
pub struct Distr {
    counts: BTreeMap<u32, u64>,
    total: u64,
    rng: ChaCha8Rng,
    lambda_max: u32,
}

impl Distr {
    pub fn new(seed: u64, lambda_max: u32) -> Self {
        Distr {
            counts: BTreeMap::new(),
            total: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            lambda_max,
        }
    }
}

impl Predictor for Distr {
    fn forecast(&mut self, _slot: u64) -> u32 {
        if self.total == 0 {
            return 0;
        }
        let mut k = self.rng.random_range(0..self.total);
        for (&v, &n) in &self.counts {
            if k < n {
                return v.min(self.lambda_max);
            }
            k -= n;
        }
        unreachable!("draw below histogram total")
    }
    fn observe(&mut self, actual: u32) {
        *self.counts.entry(actual).or_insert(0) += 1;
        self.total += 1;
    }
}

/// Externally produced forecasts keyed by `(slot, spout, component)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForecastTable {
    pub entries: BTreeMap<(u64, usize, usize), u32>,
}

impl ForecastTable {
    pub fn parse(text: &str, path: &str) -> Result<Self, WorkloadError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("slot")) {
                continue;
            }
            let parse_err = |reason: &str| WorkloadError::Parse {
                path: path.to_string(),
                line: n + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(parse_err("expected slot,spout_id,component_id,forecast"));
            }
            let slot = fields[0].parse().map_err(|_| parse_err("bad slot"))?;
            let spout = fields[1].parse().map_err(|_| parse_err("bad spout_id"))?;
            let comp = fields[2].parse().map_err(|_| parse_err("bad component_id"))?;
            let value: f64 = fields[3].parse().map_err(|_| parse_err("bad forecast"))?;
            if !(value.is_finite() && value >= 0.0) {
                return Err(parse_err("bad forecast"));
            }
            entries.insert((slot, spout, comp), value.round() as u32);
        }
        Ok(ForecastTable { entries })
    }

    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::Io {
            path: shown.clone(),
            source,
        })?;
        Self::parse(&text, &shown)
    }
}

pub struct Replay {
    table: Arc<ForecastTable>,
    spout: usize,
    component: usize,
    lambda_max: u32,
}

impl Predictor for Replay {
    fn forecast(&mut self, slot: u64) -> u32 {
        self.table
            .entries
            .get(&(slot, self.spout, self.component))
            .copied()
            .unwrap_or(0)
            .min(self.lambda_max)
    }
    fn observe(&mut self, _actual: u32) {}
}

/// Builds the predictor of one stream.
pub fn make_predictor(
    scheme: &PredictionScheme,
    stream: &ArrivalStream,
    window: usize,
    lambda_max: u32,
    seed: u64,
    replay: Option<&Arc<ForecastTable>>,
) -> Box<dyn Predictor> {
    match scheme {
        PredictionScheme::Perfect => Box::new(Perfect { stream: stream.clone() }),
        PredictionScheme::AllTrueNegative => Box::new(AllTrueNegative),
        PredictionScheme::FalsePositive { x } => {
            Box::new(FalsePositive::new(stream.clone(), *x, window, lambda_max, seed))
        }
        PredictionScheme::MovingAverage { n } => Box::new(MovingAverage::new(*n, lambda_max)),
        PredictionScheme::Ewma { alpha } => Box::new(Ewma::new(*alpha, lambda_max)),
        PredictionScheme::Kalman { q, r } => Box::new(Kalman::new(*q, *r, lambda_max)),
        PredictionScheme::Distr => Box::new(Distr::new(seed, lambda_max)),
        PredictionScheme::Replay { .. } => Box::new(Replay {
            table: replay.cloned().unwrap_or_default(),
            spout: stream.spout.index(),
            component: stream.target.index(),
            lambda_max,
        }),
    }
}
