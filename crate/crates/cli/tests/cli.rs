use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const FLAT: &str = "datagen.mix.flat.weight=1";

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skillsel"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = run(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn labels(csv: &str) -> Vec<f64> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            f[f.len() - 3].parse().unwrap()
        })
        .collect()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["collect", "--kind", "viability", "--skill", "walk", "--size", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = run(dir.path(), &["eval", "--experiment", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(dir.path(), &["terrain", "--kind", "lava"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(dir.path(), &["collect", "--kind", "cot", "--skill", "moonwalk", "--size", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(dir.path(), &["--set", "no_equals_sign", "terrain", "--kind", "flat"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["train", "--dataset", "missing.csv"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(dir.path(), &["eval", "--experiment", "transition"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("viability_walk.model"));
}

#[test]
fn terrain_export_writes_raster_and_views() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["terrain", "--kind", "stairs_up", "--difficulty", "0.15", "--seed", "3", "--pose", "4,2,0"]);
    let raster = fs::read_to_string(dir.path().join("terrain_stairs_up.csv")).unwrap();
    assert!(raster.lines().count() > 10);
    let hf = fs::read_to_string(dir.path().join("heightfield_stairs_up.csv")).unwrap();
    assert_eq!(hf.lines().count(), 31);
    assert!(hf.lines().all(|l| l.split(',').count() == 11));
    assert!(dir.path().join("observation_stairs_up.csv").exists());
    let o = run(dir.path(), &["terrain", "--kind", "flat", "--pose", "1,2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flat_pipeline_is_deterministic_and_recorded() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [a.path(), b.path()] {
        let common = ["--set", FLAT, "--set", "train.epochs=2"];
        for kind in ["viability", "cot"] {
            let mut args: Vec<&str> = common.to_vec();
            args.extend(["collect", "--kind", kind, "--skill", "walk", "--size", "24", "--seed", "9"]);
            ok(dir, &args);
            let ds = dir.join(format!("{kind}_walk_s9.csv"));
            let mut args: Vec<&str> = common.to_vec();
            args.extend(["train", "--dataset", ds.to_str().unwrap()]);
            ok(dir, &args);
        }
        let mut args: Vec<&str> = common.to_vec();
        args.extend(["demo", "--course", "flat", "--skills", "walk", "--seed", "4"]);
        ok(dir, &args);
    }
    let v = fs::read_to_string(a.path().join("viability_walk_s9.csv")).unwrap();
    let l = labels(&v);
    assert_eq!(l.len(), 24);
    assert!(l.iter().all(|&x| x == 1.0));

    for name in [
        "viability_walk_s9.csv",
        "cot_walk_s9.csv",
        "viability_walk.model",
        "cot_walk.model",
        "viability_walk_loss.csv",
        "demo_flat_s4.csv",
        "manifest.txt",
    ] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between identical runs");
    }

    let manifest = fs::read_to_string(a.path().join("manifest.txt")).unwrap();
    for key in [
        "collect_viability_walk.seed = 9",
        "collect_cot_walk.seed = 9",
        "train_viability_walk.model_format_version",
        "train_cot_walk.output.cot_walk.model",
        "demo_flat.seed = 4",
        "config_sha256",
    ] {
        assert!(manifest.contains(key), "manifest lacks `{key}`:\n{manifest}");
    }
}

#[test]
fn empty_skill_list_always_stops() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["demo", "--course", "flat", "--skills", "", "--seed", "1"]);
    assert!(out.starts_with("stop_activated"));
    let log = fs::read_to_string(dir.path().join("demo_flat_s1.csv")).unwrap();
    assert!(log.lines().skip(1).all(|l| l.contains("stop")));
}

#[test]
fn config_file_and_overrides_layer() {
    let dir = TempDir::new().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "datagen.mix.flat.weight = 1\nseed.master = 77\n").unwrap();
    ok(dir.path(), &["--config", conf.to_str().unwrap(), "collect", "--kind", "viability", "--skill", "walk", "--size", "4"]);
    assert!(dir.path().join("viability_walk_s77.csv").exists());
    ok(
        dir.path(),
        &["--config", conf.to_str().unwrap(), "--set", "seed.master=78", "collect", "--kind", "viability", "--skill", "walk", "--size", "4"],
    );
    assert!(dir.path().join("viability_walk_s78.csv").exists());
}
