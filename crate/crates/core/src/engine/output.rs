//! Run artifacts. Every file starts with a provenance comment line.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use super::{RunResult, Seeds};

pub fn provenance(config_hash: &str, seeds: &Seeds) -> String {
    format!(
        "# config_hash={} seeds=cluster:{},apps:{},placement:{},workload:{},prediction:{},scheduler:{}\n",
        config_hash, seeds.cluster, seeds.apps, seeds.placement, seeds.workload, seeds.prediction, seeds.scheduler
    )
}

pub fn series_csv(r: &RunResult) -> String {
    let mut out = provenance(&r.config_hash, &r.seeds);
    out.push_str("slot,theta,h,completions,resp_mean\n");
    for m in &r.series {
        let resp = m.resp_mean().map_or(String::new(), |x| x.to_string());
        writeln!(out, "{},{},{},{},{}", m.slot, m.theta, m.h, m.completions, resp).unwrap();
    }
    out
}

pub fn responses_csv(r: &RunResult) -> String {
    let mut out = provenance(&r.config_hash, &r.seeds);
    out.push_str("tuple_id,arrival_slot,completion_slot,resp\n");
    for x in &r.responses {
        writeln!(out, "{},{},{},{}", x.tuple_id, x.arrival_slot, x.completion_slot, x.resp).unwrap();
    }
    out
}

pub fn run_json(r: &RunResult) -> String {
    let mut s = serde_json::to_string_pretty(r).expect("run result serializes");
    s.push('\n');
    s
}

/// Writes `run.json`, `series.csv` and `responses.csv` into `dir`.
pub fn write_run(dir: &Path, r: &RunResult) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("run.json"), run_json(r))?;
    fs::write(dir.join("series.csv"), series_csv(r))?;
    fs::write(dir.join("responses.csv"), responses_csv(r))?;
    Ok(())
}
