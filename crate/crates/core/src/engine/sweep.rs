//! Parameter sweeps with replications, run in parallel.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use super::output::{provenance, write_run};
use super::{run, RunOptions, RunResult};
use crate::config::{build_scenario, ConfigError, ScenarioConfig};
use crate::error::EngineError;
use crate::prediction::PredictionScheme;
use crate::scheduler::SchedulerKind;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("unknown sweep axis `{0}` (expected V, W, x, scheduler or predictor)")]
    UnknownAxis(String),
    #[error("bad value `{value}` for axis {axis}: {reason}")]
    BadValue { axis: String, value: String, reason: String },
    #[error("no sweep values given")]
    NoValues,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    V,
    W,
    /// False-positive injection mean.
    X,
    Scheduler,
    Predictor,
}

impl FromStr for SweepAxis {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "V" | "v" => SweepAxis::V,
            "W" | "w" => SweepAxis::W,
            "x" => SweepAxis::X,
            "scheduler" => SweepAxis::Scheduler,
            "predictor" => SweepAxis::Predictor,
            other => return Err(SweepError::UnknownAxis(other.to_string())),
        })
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::V => "V",
            SweepAxis::W => "W",
            SweepAxis::X => "x",
            SweepAxis::Scheduler => "scheduler",
            SweepAxis::Predictor => "predictor",
        })
    }
}

/// Splits a comma list; `a..b` expands to the integers `a..=b`.
pub fn parse_values(s: &str) -> Result<Vec<String>, SweepError> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let range = a.trim().parse::<i64>().and_then(|a| Ok((a, b.trim().parse::<i64>()?)));
            match range {
                Ok((a, b)) if a <= b => out.extend((a..=b).map(|v| v.to_string())),
                _ => {
                    return Err(SweepError::BadValue {
                        axis: "?".into(),
                        value: part.into(),
                        reason: "ranges are written lo..hi with integers lo <= hi".into(),
                    })
                }
            }
        } else {
            out.push(part.to_string());
        }
    }
    if out.is_empty() {
        return Err(SweepError::NoValues);
    }
    Ok(out)
}

/// Returns `base` with one axis set to `value`.
pub fn apply(base: &ScenarioConfig, axis: SweepAxis, value: &str) -> Result<ScenarioConfig, SweepError> {
    let bad = |reason: &str| SweepError::BadValue {
        axis: axis.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    };
    let mut cfg = base.clone();
    match axis {
        SweepAxis::V => {
            cfg.scheduler.v = value.parse().map_err(|_| bad("not a number"))?;
        }
        SweepAxis::W => {
            cfg.prediction.w_mean = value.parse().map_err(|_| bad("not a non-negative integer"))?;
        }
        SweepAxis::X => {
            let x: f64 = value.parse().map_err(|_| bad("not a number"))?;
            cfg.prediction.scheme = PredictionScheme::FalsePositive { x };
        }
        SweepAxis::Scheduler => {
            cfg.scheduler.kind = value.parse::<SchedulerKind>().map_err(|e| bad(&e.to_string()))?;
        }
        SweepAxis::Predictor => {
            cfg.prediction.scheme = match value {
                "perfect" => PredictionScheme::Perfect,
                "all_true_negative" => PredictionScheme::AllTrueNegative,
                "moving_average" => PredictionScheme::MovingAverage { n: 5 },
                "ewma" => PredictionScheme::Ewma { alpha: 0.3 },
                "kalman" => PredictionScheme::Kalman { q: 1.0, r: 4.0 },
                "distr" => PredictionScheme::Distr,
                _ => return Err(bad("unknown predictor")),
            };
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub replication: usize,
    pub result: RunResult,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<String>,
    pub reps: usize,
    pub seed_offset: u64,
}

/// Thread count from `STREAMSIM_THREADS`, or all cores.
pub fn thread_cap() -> usize {
    std::env::var("STREAMSIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0)
}

/// Runs every (value, replication) pair. Replication `r` shifts the varying
/// seeds by `seed_offset + r`, identically for every value. With `out`, the
/// per-run artifacts land in `out/<axis>=<value>/rep<r>/`.
pub fn run_sweep(base: &ScenarioConfig, spec: &SweepSpec, out: Option<&Path>) -> Result<Vec<SweepRow>, SweepError> {
    if spec.values.is_empty() {
        return Err(SweepError::NoValues);
    }
    let mut jobs = Vec::new();
    for v in &spec.values {
        let cfg = apply(base, spec.axis, v)?;
        for r in 0..spec.reps.max(1) {
            let mut c = cfg.clone();
            c.offset_seeds(spec.seed_offset.wrapping_add(r as u64));
            jobs.push((v.clone(), r, c));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap())
        .build()
        .expect("thread pool");
    let results: Vec<Result<SweepRow, SweepError>> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(value, replication, cfg)| {
                let sc = build_scenario(&cfg)?;
                let result = run(&sc, &RunOptions::default())?;
                if let Some(dir) = out {
                    let d = dir.join(format!("{}={}", spec.axis, value)).join(format!("rep{replication}"));
                    write_run(&d, &result).map_err(|source| SweepError::Io { path: d.clone(), source })?;
                }
                Ok(SweepRow {
                    value,
                    replication,
                    result,
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

pub fn sweep_csv(base: &ScenarioConfig, spec: &SweepSpec, rows: &[SweepRow]) -> String {
    let mut out = provenance(&base.hash(), &base.seeds());
    out.push_str("axis,value,replication,avg_theta,avg_h,mean_resp,p99_resp\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            spec.axis,
            r.value,
            r.replication,
            r.result.avg_theta,
            r.result.avg_h,
            opt(r.result.mean_resp),
            opt(r.result.p99_resp)
        )
        .unwrap();
    }
    out
}

/// Sample mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Per-value mean and standard error of the three headline metrics.
pub fn summary_csv(base: &ScenarioConfig, spec: &SweepSpec, rows: &[SweepRow]) -> String {
    let mut out = provenance(&base.hash(), &base.seeds());
    out.push_str("axis,value,reps,avg_theta_mean,avg_theta_se,avg_h_mean,avg_h_se,mean_resp_mean,mean_resp_se\n");
    for v in &spec.values {
        let mine: Vec<&RunResult> = rows.iter().filter(|r| &r.value == v).map(|r| &r.result).collect();
        let (tm, ts) = mean_se(&mine.iter().map(|r| r.avg_theta).collect::<Vec<_>>());
        let (hm, hs) = mean_se(&mine.iter().map(|r| r.avg_h).collect::<Vec<_>>());
        let resp: Vec<f64> = mine.iter().filter_map(|r| r.mean_resp).collect();
        let (rm, rs) = if resp.is_empty() {
            (String::new(), String::new())
        } else {
            let (a, b) = mean_se(&resp);
            (a.to_string(), b.to_string())
        };
        writeln!(out, "{},{},{},{},{},{},{},{},{}", spec.axis, v, mine.len(), tm, ts, hm, hs, rm, rs).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_and_ranges() {
        assert_eq!(parse_values("1,5, 10").unwrap(), ["1", "5", "10"]);
        assert_eq!(parse_values("0..3").unwrap(), ["0", "1", "2", "3"]);
        assert!(matches!(parse_values(" , "), Err(SweepError::NoValues)));
        assert!(parse_values("4..2").is_err());
    }

    #[test]
    fn axis_names() {
        assert_eq!("V".parse::<SweepAxis>().unwrap(), SweepAxis::V);
        assert!(matches!("colour".parse::<SweepAxis>(), Err(SweepError::UnknownAxis(_))));
    }

    #[test]
    fn apply_sets_field() {
        let base = ScenarioConfig::example(0);
        assert_eq!(apply(&base, SweepAxis::V, "12").unwrap().scheduler.v, 12.0);
        assert_eq!(apply(&base, SweepAxis::W, "4").unwrap().prediction.w_mean, 4);
        assert_eq!(
            apply(&base, SweepAxis::X, "10").unwrap().prediction.scheme,
            PredictionScheme::FalsePositive { x: 10.0 }
        );
        assert_eq!(
            apply(&base, SweepAxis::Scheduler, "shuffle").unwrap().scheduler.kind,
            SchedulerKind::Shuffle
        );
        assert!(apply(&base, SweepAxis::V, "-1").is_err());
        assert!(apply(&base, SweepAxis::Predictor, "oracle").is_err());
    }

    #[test]
    fn standard_error() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn small_sweep_rows() {
        let mut base = ScenarioConfig::example(3);
        base.horizon = 200;
        let spec = SweepSpec {
            axis: SweepAxis::V,
            values: parse_values("1,5").unwrap(),
            reps: 2,
            seed_offset: 0,
        };
        let rows = run_sweep(&base, &spec, None).unwrap();
        assert_eq!(rows.len(), 4);
        let csv = sweep_csv(&base, &spec, &rows);
        assert_eq!(csv.lines().count(), 2 + 4);
        // common random numbers: replication 0 sees the same arrivals at every V
        let r0: Vec<_> = rows.iter().filter(|r| r.replication == 0).collect();
        assert_eq!(r0[0].result.seeds, r0[1].result.seeds);
    }
}
