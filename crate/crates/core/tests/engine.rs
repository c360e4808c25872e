mod common;

use proptest::prelude::*;
use streamsim::config::build_scenario;
use streamsim::engine::{run, RunOptions, RunResult};
use streamsim::prediction::{PredictionScheme, WindowMode};
use streamsim::scheduler::{FlushMode, SchedulerKind};

use common::mini;
use common::*;

fn traced(sc: &streamsim::engine::Scenario) -> RunResult {
    run(sc, &RunOptions { record_trace: true }).unwrap()
}

#[test]
fn golden_trace_matches_recursion_and_file() {
    let (sc, p) = golden_scenario();
    let lambda: Vec<u64> = GOLDEN_ARRIVALS.iter().map(|&x| x as u64).collect();
    let expected = mini::simulate(&p, &lambda, GOLDEN_SLOTS);
    let csv = mini::to_csv(&expected);
    if std::env::var_os("STREAMSIM_UPDATE_GOLDEN").is_some() {
        std::fs::write(golden_path(), &csv).unwrap();
    }
    assert_eq!(std::fs::read_to_string(golden_path()).unwrap(), csv);
    let got = engine_rows(&traced(&sc));
    for (g, e) in got.iter().zip(&expected) {
        assert_eq!(g, e, "slot {}", e.slot);
    }
    assert_eq!(got.len(), expected.len());
}

#[test]
fn zero_arrivals_cost_nothing() {
    let sc = with_arrivals(build(&pipe_config(2, 3, 1.0, 2, 200)), &[0]);
    let r = run(&sc, &RunOptions::default()).unwrap();
    assert_eq!(r.avg_theta, 0.0);
    assert_eq!(r.avg_h, 0.0);
    assert!(r.responses.is_empty());
    assert_eq!(r.mean_resp, None);
}

#[test]
fn light_pipe_keeps_up() {
    let sc = build(&pipe_config(2, 4, 2.0, 0, 3000));
    let r = run(&sc, &RunOptions::default()).unwrap();
    let arrivals: u64 = (0..3000).map(|t| sc.workload.streams[0].at(t) as u64).sum();
    // everything but the last few slots' arrivals is finished
    assert!(r.responses.len() as u64 + 50 > arrivals);
    assert!(r.mean_resp.unwrap() < 5.0);
    assert!(r.avg_h < 20.0);
}

#[test]
fn lookahead_shortens_response() {
    let r0 = run(&build(&pipe_config(2, 3, 4.0, 0, 4000)), &RunOptions::default()).unwrap();
    let r3 = run(&build(&pipe_config(2, 3, 4.0, 3, 4000)), &RunOptions::default()).unwrap();
    assert!(r3.mean_resp.unwrap() < r0.mean_resp.unwrap());
    assert_eq!(r3.phantom, 0);
}

#[test]
fn processed_tuples_balance_arrivals() {
    let sc = build(&pipe_config(3, 3, 5.0, 0, 500));
    let r = traced(&sc);
    let arrivals: u64 = (0..500).map(|t| sc.workload.streams[0].at(t) as u64).sum();
    let processed: u64 = r.trace.as_ref().unwrap().iter().map(|t| t.processed.iter().sum::<u64>()).sum();
    let last = &r.trace.as_ref().unwrap().last().unwrap().state;
    // what is still queued at the last snapshot plus its own slot's sends
    assert!(processed <= arrivals);
    assert!(arrivals - processed <= last.total_input() + last.total_output() + last.total_in_flight() + 20);
}

#[test]
fn same_inputs_same_run() {
    let cfg = multi_app(5, 600);
    let a = run(&build_scenario(&cfg).unwrap(), &RunOptions::default()).unwrap();
    let b = run(&build_scenario(&cfg).unwrap(), &RunOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn all_true_negative_is_window_free() {
    let mut cfg = multi_app(2, 800);
    cfg.prediction.w_mean = 0;
    let base = run(&build_scenario(&cfg).unwrap(), &RunOptions::default()).unwrap();
    cfg.prediction.w_mean = 4;
    cfg.prediction.scheme = PredictionScheme::AllTrueNegative;
    let atn = run(&build_scenario(&cfg).unwrap(), &RunOptions::default()).unwrap();
    assert_eq!(base.series, atn.series);
    assert_eq!(base.decision_digest, atn.decision_digest);
}

#[test]
fn false_positives_are_reported() {
    let mut cfg = pipe_config(2, 4, 2.0, 2, 1000);
    cfg.prediction.scheme = PredictionScheme::FalsePositive { x: 2.0 };
    let sc = build(&cfg);
    let r = run(&sc, &RunOptions::default()).unwrap();
    assert!(r.phantom > 0);
    assert!(r.phantom_purged <= r.phantom);
    // slot 0 is never forecast
    assert_eq!(r.unpredicted, sc.workload.streams[0].at(0) as u64);
}

fn scheme(k: u8) -> PredictionScheme {
    match k {
        0 => PredictionScheme::Perfect,
        1 => PredictionScheme::AllTrueNegative,
        2 => PredictionScheme::FalsePositive { x: 3.0 },
        3 => PredictionScheme::MovingAverage { n: 5 },
        4 => PredictionScheme::Ewma { alpha: 0.3 },
        5 => PredictionScheme::Kalman { q: 1.0, r: 4.0 },
        _ => PredictionScheme::Distr,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // The engine cross-checks its token ledger against the queue counts
    // every slot and aborts on any mismatch, so completing is the property.
    #[test]
    fn random_scenarios_hold_invariants(
        seed in 0u64..1000,
        k in 0u8..7,
        w in 0usize..4,
        shuffle in any::<bool>(),
        literal in any::<bool>(),
        disabled in any::<bool>(),
        stale in 0usize..3,
        v in 0.0f64..20.0,
    ) {
        let mut cfg = multi_app(seed, 150);
        cfg.prediction.scheme = scheme(k);
        cfg.prediction.w_mean = w;
        cfg.prediction.window_mode = WindowMode::Sampled;
        cfg.prediction.enabled = !disabled;
        cfg.scheduler.v = v;
        cfg.metrics_staleness = stale;
        if shuffle {
            cfg.scheduler.kind = SchedulerKind::Shuffle;
        }
        if literal {
            cfg.scheduler.flush_mode = FlushMode::EmptyCandidateOnly;
        }
        let sc = build_scenario(&cfg).unwrap();
        let r = run(&sc, &RunOptions::default());
        prop_assert!(r.is_ok(), "{:?}", r.err());
        let r = r.unwrap();
        prop_assert!(r.responses.iter().all(|x| x.resp == x.completion_slot.saturating_sub(x.arrival_slot)));
        if matches!(cfg.prediction.scheme, PredictionScheme::Perfect) {
            prop_assert_eq!(r.phantom, 0);
        }
    }
}
