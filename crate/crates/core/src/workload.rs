//! Per-slot arrivals `lambda_{i,c'}(t)` and expected-rate propagation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::WorkloadError;
use crate::ids::{ComponentId, InstanceId};
use crate::topology::StreamSystem;

pub const DEFAULT_LAMBDA_MAX: u32 = 20;
pub const DEFAULT_UTILIZATION: f64 = 0.7;

/// i.i.d. Poisson(rate) counts clamped at `lambda_max`.
pub fn poisson_stream(rate: f64, lambda_max: u32, seed: u64, len: usize) -> Vec<u32> {
    if rate <= 0.0 {
        return vec![0; len];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Poisson::new(rate).expect("positive finite rate");
    (0..len)
        .map(|_| {
            let x: f64 = dist.sample(&mut rng);
            (x as u64).min(lambda_max as u64) as u32
        })
        .collect()
}

/// Bins a trace into slots. Lines are either `timestamp,count` or a bare
/// timestamp (one event). A non-numeric first line is taken as a header.
pub fn parse_trace(text: &str, path: &str, bin_width: f64, scale: f64, lambda_max: u32) -> Result<Vec<u32>, WorkloadError> {
    let mut events: Vec<(f64, f64)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let ts = fields.next().unwrap_or("");
        let count = fields.next();
        let parse_err = |reason: String| WorkloadError::Parse {
            path: path.to_string(),
            line: n + 1,
            reason,
        };
        let ts: f64 = match ts.parse() {
            Ok(v) => v,
            Err(_) if n == 0 && events.is_empty() => continue,
            Err(_) => return Err(parse_err(format!("bad timestamp '{ts}'"))),
        };
        if !ts.is_finite() {
            return Err(parse_err(format!("bad timestamp '{ts}'")));
        }
        let count: f64 = match count {
            None => 1.0,
            Some(c) => c
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| parse_err(format!("bad count '{c}'")))?,
        };
        if let Some(&(prev, _)) = events.last() {
            if ts < prev {
                return Err(WorkloadError::Unsorted {
                    path: path.to_string(),
                    line: n + 1,
                });
            }
        }
        events.push((ts, count));
    }
    let Some(&(first, _)) = events.first() else {
        return Ok(Vec::new());
    };
    let origin = (first / bin_width).floor();
    let mut bins: Vec<f64> = Vec::new();
    for (ts, count) in events {
        let b = ((ts / bin_width).floor() - origin) as usize;
        if bins.len() <= b {
            bins.resize(b + 1, 0.0);
        }
        bins[b] += count;
    }
    Ok(bins
        .into_iter()
        .map(|c| ((c * scale).round() as u64).min(lambda_max as u64) as u32)
        .collect())
}

pub fn trace_stream(path: &Path, bin_width: f64, scale: f64, lambda_max: u32) -> Result<Vec<u32>, WorkloadError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::Io {
        path: shown.clone(),
        source,
    })?;
    parse_trace(&text, &shown, bin_width, scale, lambda_max)
}

/// Arrivals of one `(spout instance, successor component)` pair. Traces
/// shorter than the horizon replay cyclically from `offset`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalStream {
    pub spout: InstanceId,
    pub target: ComponentId,
    pub values: Vec<u32>,
    pub offset: usize,
}

impl ArrivalStream {
    pub fn new(spout: InstanceId, target: ComponentId, values: Vec<u32>, offset: usize) -> Result<Self, WorkloadError> {
        if values.is_empty() {
            return Err(WorkloadError::NoWorkload);
        }
        Ok(ArrivalStream {
            spout,
            target,
            values,
            offset,
        })
    }

    #[inline]
    pub fn at(&self, t: u64) -> u32 {
        self.values[(self.offset + t as usize) % self.values.len()]
    }
}

/// All arrival streams of a scenario, ordered by spout instance then target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub streams: Vec<ArrivalStream>,
}

impl Workload {
    pub fn stream(&self, spout: InstanceId, target: ComponentId) -> Option<&ArrivalStream> {
        self.streams.iter().find(|s| s.spout == spout && s.target == target)
    }

    /// `slot,spout,component,lambda` for slots `0..horizon`.
    pub fn dump_csv(&self, horizon: u64) -> String {
        let mut out = String::from("slot,spout,component,lambda\n");
        for t in 0..horizon {
            for s in &self.streams {
                writeln!(out, "{},{},{},{}", t, s.spout.index(), s.target.index(), s.at(t)).unwrap();
            }
        }
        out
    }

    /// Sample mean of each stream over one replay period or `horizon` slots.
    pub fn mean_rates(&self, horizon: u64) -> Vec<f64> {
        self.streams
            .iter()
            .map(|s| {
                let n = horizon.max(1);
                (0..n).map(|t| s.at(t) as f64).sum::<f64>() / n as f64
            })
            .collect()
    }
}

/// Steady-state mean rates with every bolt keeping up with its arrivals and
/// work split evenly over the receiving instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// Tuples per slot from each instance towards each successor component.
    pub out: Vec<BTreeMap<ComponentId, f64>>,
    /// Tuples per slot into each instance's input queue.
    pub arrival: Vec<f64>,
}

impl RateEstimate {
    pub fn pair_rate(&self, system: &StreamSystem, from: InstanceId, to: InstanceId) -> f64 {
        let c = system.instance(to).component_id;
        self.out[from.index()].get(&c).copied().unwrap_or(0.0) / system.component(c).parallelism as f64
    }

    pub fn in_rate(&self, i: InstanceId) -> f64 {
        self.arrival[i.index()]
    }

    pub fn out_rate(&self, i: InstanceId) -> f64 {
        self.out[i.index()].values().sum()
    }
}

/// Propagates per-spout-instance rates (one rate per successor stream, in
/// [`StreamSystem::spout_instances`] order) through every DAG.
pub fn expected_rates(system: &StreamSystem, spout_rates: &[f64]) -> RateEstimate {
    let n = system.num_instances();
    let mut out = vec![BTreeMap::new(); n];
    let mut arrival = vec![0.0; n];
    for (i, &r) in system.spout_instances().zip(spout_rates) {
        for &c in system.successors(i) {
            out[i.index()].insert(c, r);
        }
    }
    for app in &system.apps {
        for &c in &app.order {
            let comp = system.component(c);
            if system.component_predecessors(c).is_empty() {
                continue;
            }
            let inflow: f64 = system
                .component_predecessors(c)
                .iter()
                .flat_map(|&p| system.instances_of(p))
                .map(|j| out[j.index()].get(&c).copied().unwrap_or(0.0))
                .sum::<f64>()
                / comp.parallelism as f64;
            for &i in &comp.instance_ids {
                arrival[i.index()] = inflow;
                for (&s, &g) in &system.instance(i).gen_ratio {
                    out[i.index()].insert(s, inflow * g);
                }
            }
        }
    }
    RateEstimate { out, arrival }
}

/// Spout rate per application such that the busiest bolt instance runs at
/// utilisation `rho`.
pub fn calibrate_rates(system: &StreamSystem, rho: f64) -> Vec<f64> {
    let spouts: Vec<InstanceId> = system.spout_instances().collect();
    system
        .apps
        .iter()
        .map(|app| {
            let unit: Vec<f64> = spouts
                .iter()
                .map(|&i| if system.app_of(i) == app.app_id { 1.0 } else { 0.0 })
                .collect();
            let est = expected_rates(system, &unit);
            let headroom = app
                .components
                .iter()
                .flat_map(|&c| system.instances_of(c))
                .filter(|&&i| est.arrival[i.index()] > 0.0)
                .map(|&i| system.instance(i).proc_capacity as f64 / est.arrival[i.index()])
                .fold(f64::INFINITY, f64::min);
            if headroom.is_finite() {
                rho * headroom
            } else {
                0.0
            }
        })
        .collect()
}

/// Bolt instances whose expected arrival rate reaches their service rate.
pub fn stability_violations(system: &StreamSystem, rates: &RateEstimate) -> Vec<InstanceId> {
    let bad: Vec<InstanceId> = system
        .instances
        .iter()
        .filter(|inst| !system.is_spout(inst.id) && rates.arrival[inst.id.index()] >= inst.proc_capacity as f64)
        .map(|inst| inst.id)
        .collect();
    for i in &bad {
        log::warn!(
            "instance {} expects {:.3} tuples/slot against service rate {}; queues will grow",
            i,
            rates.arrival[i.index()],
            system.instance(*i).proc_capacity
        );
    }
    bad
}

/// Spout rates in [`StreamSystem::spout_instances`] order from per-app rates.
pub fn spout_rates_from_apps(system: &StreamSystem, per_app: &[f64]) -> Vec<f64> {
    system
        .spout_instances()
        .map(|i| per_app[system.app_of(i).index()])
        .collect()
}

/// Mean-rate slack `min_i (mu_i - arrival_i)` over bolt instances.
pub fn service_slack(system: &StreamSystem, rates: &RateEstimate) -> f64 {
    system
        .instances
        .iter()
        .filter(|inst| !system.is_spout(inst.id))
        .map(|inst| inst.proc_capacity as f64 - rates.arrival[inst.id.index()])
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::tests::{bolt, spout};
    use crate::topology::{AppSpec, CapacityDefaults};

    fn moments(xs: &[u32]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
        let v = xs.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn poisson_examples() {
        assert!(poisson_stream(0.0, 20, 1, 50).iter().all(|&x| x == 0));
        let (m, v) = moments(&poisson_stream(3.0, 1000, 42, 100_000));
        assert!((m - 3.0).abs() < 0.05, "mean {m}");
        assert!((v - 3.0).abs() < 0.15, "var {v}");
        assert!(poisson_stream(10.0, 2, 3, 1000).iter().all(|&x| x <= 2));
        assert_eq!(poisson_stream(4.0, 20, 9, 100), poisson_stream(4.0, 20, 9, 100));
    }

    #[test]
    fn trace_examples() {
        assert_eq!(parse_trace("0.1\n0.2\n1.5\n", "t", 1.0, 1.0, 20).unwrap(), vec![2, 1]);
        assert_eq!(parse_trace("", "t", 1.0, 1.0, 20).unwrap(), Vec::<u32>::new());
        assert_eq!(parse_trace("0,1\n1,3\n", "t", 1.0, 2.0, 20).unwrap(), vec![2, 6]);
        assert_eq!(parse_trace("timestamp,count\n5,1\n7,2\n", "t", 1.0, 1.0, 20).unwrap(), vec![1, 0, 2]);
        assert_eq!(parse_trace("0,50\n", "t", 1.0, 1.0, 20).unwrap(), vec![20]);
    }

    #[test]
    fn trace_errors_carry_line_numbers() {
        match parse_trace("0.1\n0.2\nabc\n", "f.csv", 1.0, 1.0, 20) {
            Err(WorkloadError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_trace("1\n0.5\n", "f.csv", 1.0, 1.0, 20) {
            Err(WorkloadError::Unsorted { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ArrivalStream::new(InstanceId(0), ComponentId(1), vec![], 0),
            Err(WorkloadError::NoWorkload)
        ));
    }

    #[test]
    fn streams_replay_cyclically() {
        let s = ArrivalStream::new(InstanceId(0), ComponentId(1), vec![1, 2, 3], 1).unwrap();
        assert_eq!((0..5).map(|t| s.at(t)).collect::<Vec<_>>(), vec![2, 3, 1, 2, 3]);
    }

    fn diamond() -> StreamSystem {
        StreamSystem::from_specs(
            &[AppSpec {
                name: "d".into(),
                components: vec![
                    spout("s", 2, &[1, 2]),
                    bolt("a", 2, 4, &[3]),
                    bolt("b", 1, 4, &[3]),
                    bolt("c", 4, 6, &[]),
                ],
            }],
            CapacityDefaults::default(),
        )
        .unwrap()
    }

    #[test]
    fn rates_propagate_through_diamond() {
        let sys = diamond();
        let est = expected_rates(&sys, &[2.0, 2.0]);
        // a: 4 tuples over 2 instances; b: 4 tuples on one; c: 8 over 4
        assert_eq!(est.arrival[2], 2.0);
        assert_eq!(est.arrival[4], 4.0);
        assert_eq!(est.arrival[5], 2.0);
        assert_eq!(est.pair_rate(&sys, InstanceId(0), InstanceId(2)), 1.0);
        assert_eq!(service_slack(&sys, &est), 0.0);
        assert_eq!(stability_violations(&sys, &est), vec![InstanceId(4)]);
    }

    #[test]
    fn calibration_hits_target_utilisation() {
        let sys = diamond();
        let r = calibrate_rates(&sys, 0.7);
        let est = expected_rates(&sys, &spout_rates_from_apps(&sys, &r));
        let peak = sys
            .instances
            .iter()
            .filter(|i| !sys.is_spout(i.id))
            .map(|i| est.arrival[i.id.index()] / i.proc_capacity as f64)
            .fold(0.0, f64::max);
        assert!((peak - 0.7).abs() < 1e-12);
        assert!(stability_violations(&sys, &est).is_empty());
    }

    #[test]
    fn dump_has_header_and_rows() {
        let w = Workload {
            streams: vec![ArrivalStream::new(InstanceId(0), ComponentId(1), vec![4, 5], 0).unwrap()],
        };
        assert_eq!(w.dump_csv(2), "slot,spout,component,lambda\n0,0,1,4\n1,0,1,5\n");
    }
}
