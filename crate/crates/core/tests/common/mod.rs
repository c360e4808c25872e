#![allow(dead_code)]

pub mod mini;

use std::path::PathBuf;

use streamsim::config::{
    build_scenario, AppsConfig, ClusterConfig, PlacementConfig, PredictionConfig, ScenarioConfig, WorkloadConfig,
};
use streamsim::engine::{RunResult, Scenario, SlotTrace};
use streamsim::ids::{ComponentId, InstanceId};
use streamsim::prediction::{PredictionScheme, WindowMode};
use streamsim::queueing::SpoutQueue;
use streamsim::scheduler::SchedulerConfig;
use streamsim::topology::{AppSpec, ComponentKind, ComponentSpec};
use streamsim::workload::ArrivalStream;

pub fn comp(name: &str, kind: ComponentKind, par: usize, mu: u32, succ: &[usize]) -> ComponentSpec {
    ComponentSpec {
        name: name.into(),
        kind,
        parallelism: par,
        successors: succ.to_vec(),
        proc_capacity: mu,
        tx_capacity: None,
        gen_ratio: None,
    }
}

/// One spout feeding `bolt_par` bolts of capacity `mu`.
pub fn pipe_config(bolt_par: usize, mu: u32, rate: f64, w: usize, horizon: u64) -> ScenarioConfig {
    ScenarioConfig {
        cluster: ClusterConfig::FatTree {
            k: 4,
            servers: 4,
            containers_per_server: 2,
            seed: 1,
        },
        apps: AppsConfig::Explicit {
            apps: vec![AppSpec {
                name: "pipe".into(),
                components: vec![
                    comp("src", ComponentKind::Spout, 1, 0, &[1]),
                    comp("work", ComponentKind::Bolt, bolt_par, mu, &[]),
                ],
            }],
        },
        placement: PlacementConfig::THeron { capacity: 10 },
        workload: WorkloadConfig::Poisson {
            rate: Some(rate),
            utilization: None,
            lambda_max: 20,
            seed: 11,
        },
        scheduler: SchedulerConfig::potus(1.0, 1.0),
        prediction: PredictionConfig {
            enabled: true,
            scheme: PredictionScheme::Perfect,
            w_mean: w,
            window_mode: WindowMode::Fixed,
            seed: 3,
        },
        horizon,
        warmup_fraction: 0.1,
        metrics_staleness: 0,
        bolt_tx_factor: 2,
        output_dir: None,
    }
}

/// Replaces every arrival stream with the given counts.
pub fn with_arrivals(mut sc: Scenario, values: &[u32]) -> Scenario {
    for s in &mut sc.workload.streams {
        *s = ArrivalStream::new(s.spout, s.target, values.to_vec(), 0).unwrap();
    }
    sc
}

pub fn build(cfg: &ScenarioConfig) -> Scenario {
    build_scenario(cfg).unwrap()
}

/// A randomized multi-application scenario of the default shape.
pub fn multi_app(seed: u64, horizon: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::example(seed);
    cfg.horizon = horizon;
    cfg
}

pub const GOLDEN_ARRIVALS: [u32; 14] = [3, 1, 4, 1, 5, 0, 2, 6, 5, 3, 5, 8, 9, 7];
pub const GOLDEN_SLOTS: u64 = 10;

/// 1 spout, 1 bolt (mu 3) on different servers, W = 2, V = 1, beta = 1.
pub fn golden_scenario() -> (Scenario, mini::MiniParams) {
    let mut cfg = pipe_config(1, 3, 1.0, 2, GOLDEN_SLOTS);
    cfg.placement = PlacementConfig::Explicit {
        container_of: vec![0, 3],
        capacity: 10,
    };
    let sc = with_arrivals(build(&cfg), &GOLDEN_ARRIVALS);
    let (s, b) = (streamsim::ids::InstanceId(0), streamsim::ids::InstanceId(1));
    let params = mini::MiniParams {
        window: 2,
        gamma: sc.system.instance(s).tx_capacity as u64,
        mu: sc.system.instance(b).proc_capacity as u64,
        v: 1.0,
        beta: 1.0,
        u: sc.deployment.cost(&sc.costs, s, b) as u64,
    };
    (sc, params)
}

pub fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_trace.csv")
}

/// Engine trace rendered in the mini-simulator's row format.
pub fn engine_rows(r: &RunResult) -> Vec<mini::MiniRow> {
    let trace: &[SlotTrace] = r.trace.as_ref().unwrap();
    let (s, b, c) = (InstanceId(0), InstanceId(1), ComponentId(1));
    trace
        .iter()
        .zip(&r.series)
        .map(|(tr, m)| {
            let Some(SpoutQueue::Windowed(q)) = tr.state.spout_queue(s, c) else {
                panic!("windowed spout queue expected")
            };
            let bq = tr.state.bolt(b).unwrap();
            mini::MiniRow {
                slot: tr.state.slot,
                rem: q.rem.iter().map(|&x| x as u64).collect(),
                q_out: q.total,
                q_in: bq.input_backlog,
                in_flight: bq.in_flight,
                x: tr.decision.get(s, b),
                processed: tr.processed[b.index()],
                theta: m.theta,
                h: m.h,
            }
        })
        .collect()
}
