//! Drift-plus-penalty constants and a numeric check of the cost/backlog bounds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::{RunResult, Scenario};
use crate::workload::{expected_rates, service_slack};

/// Constants entering `B`, plus the slack `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub num_instances: f64,
    pub d_max: f64,
    pub i_max: f64,
    pub gamma_max: f64,
    pub mu_max: f64,
    pub lambda_max: f64,
    pub nu_max: f64,
    pub w_max: f64,
    pub beta: f64,
    pub v: f64,
    pub epsilon: f64,
}

impl BoundInputs {
    /// Reads the constants off a built scenario. `epsilon` comes from mean
    /// rates propagated through the DAGs, using the sample mean of each stream.
    pub fn from_scenario(sc: &Scenario) -> Self {
        let sys = &sc.system;
        let gamma_max = sys.instances.iter().map(|i| i.tx_capacity).max().unwrap_or(0);
        let mu_max = sys.instances.iter().map(|i| i.proc_capacity).max().unwrap_or(0);
        // generation is accumulated, so one slot emits at most floor(mu g) + 1
        let nu_max = sys
            .instances
            .iter()
            .flat_map(|i| i.gen_ratio.values().map(move |g| (i.proc_capacity as f64 * g).floor() + 1.0))
            .fold(0.0, f64::max);
        let w_max = if sc.prediction.enabled {
            sc.windows.iter().copied().max().unwrap_or(0)
        } else {
            0
        };

        let means = sc.workload.mean_rates(sc.horizon);
        let spout_rates: Vec<f64> = sys
            .spout_instances()
            .map(|i| {
                let mine: Vec<f64> = sc
                    .workload
                    .streams
                    .iter()
                    .zip(&means)
                    .filter(|(s, _)| s.spout == i)
                    .map(|(_, &m)| m)
                    .collect();
                mine.iter().sum::<f64>() / mine.len().max(1) as f64
            })
            .collect();
        let rates = expected_rates(sys, &spout_rates);
        BoundInputs {
            num_instances: sys.num_instances() as f64,
            d_max: sys.max_degree() as f64,
            i_max: sys.max_parallelism() as f64,
            gamma_max: gamma_max as f64,
            mu_max: mu_max as f64,
            lambda_max: sc.lambda_max as f64,
            nu_max,
            w_max: w_max as f64,
            beta: sc.scheduler.beta,
            v: sc.scheduler.v,
            epsilon: service_slack(sys, &rates),
        }
    }
}

#[allow(non_snake_case)]
pub fn compute_B(b: &BoundInputs) -> f64 {
    let n = b.num_instances;
    let first = 0.5 * n * ((b.d_max * b.i_max * b.gamma_max).powi(2) + b.mu_max.powi(2));
    let second = 0.5 * b.beta * n * b.d_max * ((b.w_max + 1.0).powi(2) * b.lambda_max.powi(2) + b.lambda_max.powi(2));
    let third = 0.5 * b.beta * n * b.d_max * (b.nu_max.powi(2) + b.gamma_max.powi(2));
    first + second + third
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    #[serde(rename = "V")]
    pub v: f64,
    pub avg_theta: f64,
    pub theta_bound: f64,
    pub ok_theta: bool,
    pub avg_h: f64,
    /// `None` when the slack is not positive.
    pub h_bound: Option<f64>,
    pub ok_h: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Smallest average cost over the grid, standing in for the optimum.
    pub theta_star: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub epsilon: f64,
    pub rows: Vec<BoundRow>,
}

impl BoundReport {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.ok_theta && r.ok_h != Some(false))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("V,avg_theta,theta_bound,ok_theta,avg_h,h_bound,ok_h\n");
        for r in &self.rows {
            let hb = r.h_bound.map_or("NA".to_string(), |x| x.to_string());
            let ok = r.ok_h.map_or("NA".to_string(), |x| x.to_string());
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.v, r.avg_theta, r.theta_bound, r.ok_theta, r.avg_h, hb, ok
            )
            .unwrap();
        }
        out
    }
}

/// Checks both time-average bounds for every run of a V grid. `inputs.v` is
/// ignored; each row uses its run's V, and `B` is taken from `inputs`.
pub fn verify_bounds(runs: &[RunResult], inputs: &BoundInputs) -> BoundReport {
    let theta_star = runs.iter().map(|r| r.avg_theta).fold(f64::INFINITY, f64::min);
    let theta_star = if theta_star.is_finite() { theta_star } else { 0.0 };
    let b = compute_B(inputs);
    let eps = inputs.epsilon;
    let usable = eps > 0.0 && eps.is_finite();
    let rows = runs
        .iter()
        .map(|r| {
            let theta_bound = if r.v > 0.0 { theta_star + b / r.v } else { f64::INFINITY };
            let h_bound = usable.then(|| r.v * theta_star / eps + b / eps);
            BoundRow {
                v: r.v,
                avg_theta: r.avg_theta,
                theta_bound,
                ok_theta: r.avg_theta <= theta_bound,
                avg_h: r.avg_h,
                h_bound,
                ok_h: h_bound.map(|hb| r.avg_h <= hb),
            }
        })
        .collect();
    BoundReport {
        theta_star,
        b,
        epsilon: eps,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> BoundInputs {
        BoundInputs {
            num_instances: 1.0,
            d_max: 1.0,
            i_max: 1.0,
            gamma_max: 1.0,
            mu_max: 1.0,
            lambda_max: 1.0,
            nu_max: 1.0,
            w_max: 0.0,
            beta: 1.0,
            v: 1.0,
            epsilon: 1.0,
        }
    }

    #[test]
    fn unit_inputs() {
        // 1/2 (1 + 1) + 1/2 ((W+1)^2 + 1) + 1/2 (1 + 1)
        assert_eq!(compute_B(&unit()), 3.0);
        assert_eq!(compute_B(&BoundInputs { w_max: 1.0, ..unit() }), 4.5);
    }

    #[test]
    fn beta_zero_leaves_first_term() {
        let b = BoundInputs {
            beta: 0.0,
            num_instances: 3.0,
            d_max: 2.0,
            gamma_max: 5.0,
            mu_max: 4.0,
            ..unit()
        };
        assert_eq!(compute_B(&b), 0.5 * 3.0 * (100.0 + 16.0));
    }

    #[test]
    fn gamma_terms_quadratic() {
        // only the gamma terms move: (D I g)^2 in the first, g^2 in the third
        let base = BoundInputs { gamma_max: 3.0, ..unit() };
        let doubled = BoundInputs { gamma_max: 6.0, ..unit() };
        let zero = BoundInputs { gamma_max: 0.0, ..unit() };
        let g_part = compute_B(&base) - compute_B(&zero);
        assert!((compute_B(&doubled) - compute_B(&zero) - 4.0 * g_part).abs() < 1e-9);
    }

    fn fake_run(v: f64, theta: f64, h: f64) -> RunResult {
        RunResult {
            horizon: 1,
            warmup_slots: 0,
            avg_theta: theta,
            avg_h: h,
            mean_resp: None,
            p99_resp: None,
            completed: 0,
            censored: 0,
            matched: 0,
            phantom: 0,
            phantom_purged: 0,
            unpredicted: 0,
            predictor_mse: None,
            windows: vec![],
            scheduler: "potus".into(),
            v,
            beta: 1.0,
            decision_digest: String::new(),
            config_hash: String::new(),
            seeds: Default::default(),
            series: vec![],
            responses: vec![],
            trace: None,
        }
    }

    #[test]
    fn nonpositive_slack_is_not_applicable() {
        let runs = [fake_run(1.0, 5.0, 2.0), fake_run(10.0, 3.0, 9.0)];
        let rep = verify_bounds(&runs, &BoundInputs { epsilon: -0.5, ..unit() });
        assert!(rep.rows.iter().all(|r| r.h_bound.is_none()));
        assert!(rep.to_csv().contains(",NA,NA"));
        assert_eq!(rep.theta_star, 3.0);
        assert!(rep.all_ok());
    }

    #[test]
    fn violated_row_flagged() {
        let runs = [fake_run(1.0, 5.0, 1e9)];
        let rep = verify_bounds(&runs, &unit());
        assert_eq!(rep.rows[0].ok_h, Some(false));
        assert!(!rep.all_ok());
    }

    fn inputs() -> impl Strategy<Value = [f64; 10]> {
        prop::array::uniform10(0.0f64..50.0)
    }

    fn from(a: [f64; 10]) -> BoundInputs {
        BoundInputs {
            num_instances: a[0],
            d_max: a[1],
            i_max: a[2],
            gamma_max: a[3],
            mu_max: a[4],
            lambda_max: a[5],
            nu_max: a[6],
            w_max: a[7],
            beta: a[8],
            v: a[9],
            epsilon: 1.0,
        }
    }

    proptest! {
        #[test]
        fn b_monotone(a in inputs(), k in 0usize..10, bump in 0.0f64..20.0) {
            let mut hi = a;
            hi[k] += bump;
            prop_assert!(compute_B(&from(hi)) >= compute_B(&from(a)));
        }
    }
}
