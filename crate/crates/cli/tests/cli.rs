use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_streamsim"))
}

fn minimal() -> Value {
    json!({
        "cluster": {"kind": "fat_tree", "k": 4, "servers": 4, "seed": 1},
        "apps": {"source": "explicit", "apps": [{
            "name": "pipe",
            "components": [
                {"name": "src", "kind": "spout", "parallelism": 1, "successors": [1]},
                {"name": "work", "kind": "bolt", "parallelism": 2, "proc_capacity": 4}
            ]
        }]},
        "placement": {"strategy": "t_heron"},
        "workload": {"source": "poisson", "rate": 3.0, "seed": 5},
        "scheduler": {"kind": "potus", "V": 2.0, "beta": 1.0, "rng_seed": 0},
        "prediction": {"scheme": {"kind": "perfect"}, "W_mean": 1, "window_mode": "fixed", "seed": 9},
        "horizon": 300
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &minimal());
    let out = dir.path().join("out");
    let o = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["run.json", "series.csv", "responses.csv"] {
        let text = std::fs::read_to_string(out.join(f)).unwrap();
        assert!(!text.contains('\r'));
        if f.ends_with(".csv") {
            assert!(text.starts_with("# config_hash="), "{f}");
        }
    }
    let series = std::fs::read_to_string(out.join("series.csv")).unwrap();
    assert_eq!(series.lines().count(), 2 + 300);
}

#[test]
fn missing_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = minimal();
    v.as_object_mut().unwrap().remove("horizon");
    let cfg = write(dir.path(), "c.json", &v);
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizon"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = minimal();
    v["scheduler"]["colour"] = json!("red");
    let cfg = write(dir.path(), "c.json", &v);
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invariant_violation_exits_3_with_slot() {
    // a spout that cannot transmit its own arrivals breaks the forced departure
    let dir = tempfile::tempdir().unwrap();
    let mut v = minimal();
    v["apps"]["apps"][0]["components"][0]["tx_capacity"] = json!(1);
    v["workload"]["rate"] = json!(6.0);
    let cfg = write(dir.path(), "c.json", &v);
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("slot "), "{}", stderr(&o));
}

#[test]
fn sweep_rows_and_bad_axis() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = minimal();
    v["horizon"] = json!(100);
    let cfg = write(dir.path(), "c.json", &v);
    let out = dir.path().join("sw");
    let o = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--axis", "V", "--values", "1,5,10,20,50", "--reps", "3"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    // provenance, header, 15 rows
    assert_eq!(csv.lines().count(), 17);
    assert!(out.join("V=20").join("rep2").join("series.csv").exists());

    let o = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--axis", "colour", "--values", "1"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &minimal());
    let mut bodies = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("o{k}"));
        let o = bin()
            .args(["sweep", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--axis", "scheduler", "--values", "potus,shuffle", "--reps", "2"])
            .output()
            .unwrap();
        assert!(o.status.success());
        bodies.push(std::fs::read(out.join("sweep.csv")).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn verify_passes_on_toy_and_rejects_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &minimal());
    let o = bin()
        .args(["verify", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("v"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = std::fs::read_to_string(dir.path().join("v").join("bounds.csv")).unwrap();
    assert!(csv.starts_with("V,avg_theta,theta_bound,ok_theta,avg_h,h_bound,ok_h\n"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let o = bin().args(["verify", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_reports_na_when_overloaded() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = minimal();
    v["workload"]["rate"] = json!(12.0);
    v["horizon"] = json!(200);
    let cfg = write(dir.path(), "c.json", &v);
    let o = bin()
        .args(["verify", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("v"))
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("bound N/A"), "{stdout}");
    assert!(stdout.contains("greedy vs exhaustive: 1000/1000 pass"), "{stdout}");
}

#[test]
fn gen_scenario_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.json");
    let o = bin().args(["gen-scenario", "--out"]).arg(&p).output().unwrap();
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(v["apps"]["count"], 5);
    assert_eq!(v["cluster"]["kind"], "fat_tree");
}
