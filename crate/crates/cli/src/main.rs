use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use streamsim::analysis::{verify_bounds, BoundInputs};
use streamsim::config::{build_scenario, ConfigError, ScenarioConfig};
use streamsim::engine::output::write_run;
use streamsim::engine::sweep::{parse_values, run_sweep, summary_csv, sweep_csv, SweepAxis, SweepError, SweepSpec};
use streamsim::engine::{run, RunOptions};
use streamsim::error::EngineError;
use streamsim::scheduler::{oracle_sender, potus_sender, FlushMode, SenderProblem};

#[derive(Parser)]
#[command(name = "streamsim", version, about = "Slotted stream-processing scheduler simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write run.json, series.csv, responses.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one parameter with replications.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// V, W, x, scheduler or predictor.
        #[arg(long)]
        axis: String,
        /// Comma list; `a..b` expands to integers.
        #[arg(long)]
        values: String,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Check the cost and backlog bounds over a V grid, and greedy against exhaustive search.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "1,10,100")]
        values: String,
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Write a randomized multi-application scenario.
    GenScenario {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

enum Failure {
    Config(String),
    Invariant(String),
    Other(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Invariant { .. } => Failure::Invariant(e.to_string()),
            EngineError::Scenario(m) => Failure::Config(m),
        }
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Engine(e) => e.into(),
            SweepError::Io { .. } => Failure::Other(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Other(format!("cannot write {}: {e}", path.display()))
}

fn out_dir(flag: Option<PathBuf>, cfg: &ScenarioConfig) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_run(config: &Path, out: Option<PathBuf>) -> Result<bool, Failure> {
    let cfg = ScenarioConfig::load(config)?;
    let sc = build_scenario(&cfg)?;
    let r = run(&sc, &RunOptions::default())?;
    let dir = out_dir(out, &cfg);
    write_run(&dir, &r).map_err(io_err(&dir))?;
    println!(
        "avg_theta={} avg_h={} mean_resp={} p99_resp={} -> {}",
        r.avg_theta,
        r.avg_h,
        r.mean_resp.map_or("NA".into(), |x| x.to_string()),
        r.p99_resp.map_or("NA".into(), |x| x.to_string()),
        dir.display()
    );
    Ok(true)
}

fn cmd_sweep(config: &Path, out: Option<PathBuf>, spec: SweepSpec) -> Result<bool, Failure> {
    let cfg = ScenarioConfig::load(config)?;
    let dir = out_dir(out, &cfg);
    let rows = run_sweep(&cfg, &spec, Some(&dir))?;
    let path = dir.join("sweep.csv");
    std::fs::write(&path, sweep_csv(&cfg, &spec, &rows)).map_err(io_err(&path))?;
    let path = dir.join("sweep_summary.csv");
    std::fs::write(&path, summary_csv(&cfg, &spec, &rows)).map_err(io_err(&path))?;
    println!("{} runs -> {}", rows.len(), dir.display());
    Ok(true)
}

fn oracle_check(instances: usize, seed: u64) -> (usize, usize) {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use streamsim::ids::{ComponentId, InstanceId};
    use streamsim::scheduler::{Receiver, TargetGroup};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0;
    for _ in 0..instances {
        let mut next = 1;
        let groups = (0..rng.random_range(1..=3))
            .map(|c| {
                let receivers = (0..rng.random_range(1..=4))
                    .map(|_| {
                        next += 1;
                        Receiver {
                            id: InstanceId(next),
                            l: rng.random_range(-20..=20) as f64,
                        }
                    })
                    .collect();
                let q_out = rng.random_range(0..=10);
                TargetGroup {
                    component: ComponentId(c + 1),
                    q_out,
                    rem0: rng.random_range(0..=q_out),
                    receivers,
                }
            })
            .collect();
        let p = SenderProblem {
            sender: InstanceId(0),
            gamma: rng.random_range(0..=8),
            groups,
        };
        let greedy = p.objective(&potus_sender(&p, FlushMode::Always));
        if let Ok((_, best)) = oracle_sender(&p, FlushMode::Always, 10_000_000) {
            if greedy == best {
                agree += 1;
            }
        }
    }
    (agree, instances)
}

fn cmd_verify(config: &Path, out: Option<PathBuf>, values: &str, seed_offset: u64) -> Result<bool, Failure> {
    let cfg = ScenarioConfig::load(config)?;
    let spec = SweepSpec {
        axis: SweepAxis::V,
        values: parse_values(values)?,
        reps: 1,
        seed_offset,
    };
    let rows = run_sweep(&cfg, &spec, None)?;
    let mut at = cfg.clone();
    at.offset_seeds(seed_offset);
    let inputs = BoundInputs::from_scenario(&build_scenario(&at)?);
    let runs: Vec<_> = rows.into_iter().map(|r| r.result).collect();
    let report = verify_bounds(&runs, &inputs);

    let dir = out_dir(out, &cfg);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join("bounds.csv");
    std::fs::write(&path, report.to_csv()).map_err(io_err(&path))?;

    println!("B={} theta_star={} epsilon={} (theta_star is the grid minimum, an upper estimate of the optimum)", report.b, report.theta_star, report.epsilon);
    for r in &report.rows {
        let h = match (r.h_bound, r.ok_h) {
            (Some(b), Some(ok)) => format!("avg_h={} <= {} {}", r.avg_h, b, if ok { "pass" } else { "FAIL" }),
            _ => format!("avg_h={} bound N/A (no positive slack)", r.avg_h),
        };
        println!(
            "V={} avg_theta={} <= {} {} | {}",
            r.v,
            r.avg_theta,
            r.theta_bound,
            if r.ok_theta { "pass" } else { "FAIL" },
            h
        );
    }
    let (agree, n) = oracle_check(1000, 7);
    let oracle_ok = agree == n;
    println!("greedy vs exhaustive: {agree}/{n} {}", if oracle_ok { "pass" } else { "FAIL" });
    Ok(report.all_ok() && oracle_ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { config, out } => cmd_run(&config, out),
        Cmd::Sweep {
            config,
            out,
            axis,
            values,
            reps,
            seed_offset,
        } => (|| {
            let axis: SweepAxis = axis.parse()?;
            let spec = SweepSpec {
                axis,
                values: parse_values(&values)?,
                reps,
                seed_offset,
            };
            cmd_sweep(&config, out, spec)
        })(),
        Cmd::Verify {
            config,
            out,
            values,
            seed_offset,
        } => cmd_verify(&config, out, &values, seed_offset),
        Cmd::GenScenario { out, seed } => {
            let cfg = ScenarioConfig::example(seed);
            info!("scenario hash {}", cfg.hash());
            std::fs::write(&out, cfg.to_json() + "\n")
                .map(|_| true)
                .map_err(io_err(&out))
        }
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("invariant violated: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
