use std::path::Path;
use std::process::{Command, Output};

use twincal::cli::io;
use twincal::distcal::{discrepancy_clamped, predict_distribution, Discrepancy, EnsembleWeights, TwinPanel};

fn twincal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twincal"))
        .args(args)
        .env_remove("SYNDIGITS_SEED")
        .output()
        .unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn missing_input_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "human = \"absent.csv\"\ntwin = \"absent.csv\"\n").unwrap();
    let out = twincal(&["calibrate", "--config", &s(&cfg), "--out", &s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "missing_input");
    assert_eq!(err["path"], s(&dir.path().join("absent.csv")));
}

#[test]
fn invalid_parameters_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = twincal(&["synth", "--orientation", "sideways", "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[synth.latent]\nn = 0\n").unwrap();
    let out = twincal(&["synth", "--config", &s(&cfg), "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(serde_json::from_slice::<serde_json::Value>(&out.stderr).unwrap()["kind"], "invalid_parameter");
}

#[test]
fn env_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_twincal"))
        .args(["synth", "--out", &s(dir.path())])
        .env("SYNDIGITS_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(std::fs::read_to_string(dir.path().join("run.toml")).unwrap().contains("seed = 11"));
}

#[test]
fn synth_then_calibrate_identical_world() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.toml");
    std::fs::write(&cfg, "[synth.latent]\nn = 80\nm = 20\nd = 3\nalignment = \"identical\"\nnoise_sigma = 0.0\n").unwrap();
    let world = dir.path().join("world");
    assert!(twincal(&["synth", "--config", &s(&cfg), "--out", &s(&world)]).status.success());
    // the shipped ridge penalty is sized for much wider response matrices
    let run_cfg = dir.path().join("run.toml");
    std::fs::write(&run_cfg, "human = \"world/human.csv\"\ntwin = \"world/twin.csv\"\n[methods.ridge]\nlambda = 1e-8\n").unwrap();
    let out = dir.path().join("cal");
    let run = twincal(&["calibrate", "--config", &s(&run_cfg), "--out", &s(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report = json(&out.join("report.json"));
    assert!(report["mean"].as_f64().unwrap() > 0.999);
    let preds = io::read_matrix(&out.join("predictions.csv")).unwrap();
    assert_eq!(preds.matrix.shape(), (80, 21));
    let human = io::read_matrix(&world.join("human.csv")).unwrap();
    assert_eq!(preds.row_labels, human.row_labels);
}

#[test]
fn diagnose_self_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world");
    assert!(twincal(&["synth", "--out", &s(&world)]).status.success());
    let cfg = dir.path().join("self.toml");
    std::fs::write(&cfg, format!("human = \"{0}\"\ntwin = \"{0}\"\n", s(&world.join("human.csv")))).unwrap();
    let out = dir.path().join("diag");
    let run = twincal(&["diagnose", "--config", &s(&cfg), "--out", &s(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let a = json(&out.join("alignment.json"));
    let r = a["alignment"]["r"].as_u64().unwrap();
    assert_eq!(a["alignment"]["r_max"].as_u64().unwrap(), r + 2);
    for d in a["alignment"]["twin"]["proj_frobenius"].as_array().unwrap() {
        assert!(d.as_f64().unwrap() < 1e-10);
    }
    let csv = std::fs::read_to_string(out.join("cosines.csv")).unwrap();
    assert_eq!(csv.lines().count() as u64, r + 3);
}

#[test]
fn distcal_baseline_matches_direct_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.toml");
    std::fs::write(&cfg, "[synth]\nkind = \"discrete\"\n[synth.discrete]\nn = 150\n").unwrap();
    let world = dir.path().join("world");
    assert!(twincal(&["synth", "--config", &s(&cfg), "--out", &s(&world)]).status.success());
    let out = dir.path().join("dc");
    let run = twincal(&["distcal", "--config", &s(&world.join("run.toml")), "--out", &s(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let table = json(&out.join("cross_table.json"));
    let (_, codes) = io::read_codes(&world.join("codes.csv")).unwrap();
    let truths = io::read_marginals(&world.join("human_marginals.csv")).unwrap();
    let panel = TwinPanel::from_codes(&codes, 5).unwrap();
    let test: Vec<usize> = table["test"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    assert_eq!(test, (32..40).collect::<Vec<_>>());
    let w = EnsembleWeights::baseline(150, 5);
    let tv: f64 = test
        .iter()
        .map(|&j| discrepancy_clamped(Discrepancy::TV, &truths[j], &predict_distribution(&w, panel.column(j), 5).unwrap(), 1e-9).unwrap())
        .sum::<f64>()
        / test.len() as f64;
    let reported = table["baseline"]["metrics"][0][1].as_f64().unwrap();
    assert!((tv - reported).abs() < 1e-12, "{tv} {reported}");
    assert_eq!(std::fs::read_to_string(out.join("cross_table.csv")).unwrap().lines().count(), 23);
}

#[test]
fn eval_sweep_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.toml");
    std::fs::write(&cfg, "[synth.latent]\nn = 60\nm = 12\nalignment = \"linear_distortion\"\nnoise_sigma = 0.3\n").unwrap();
    let world = dir.path().join("world");
    assert!(twincal(&["synth", "--config", &s(&cfg), "--out", &s(&world)]).status.success());
    let out = dir.path().join("sw");
    let run = twincal(&["eval-sweep", "--config", &s(&world.join("run.toml")), "--fisher-z", "--out", &s(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let sweep = json(&out.join("sweep.json"));
    let report = json(&out.join("report.json"));
    assert_eq!(sweep["points"][0]["tau"].as_f64().unwrap(), 0.0);
    assert_eq!(sweep["points"][0]["mean"], report["baseline_mean"]);
    assert_eq!(sweep["always"], report["mean"]);
    assert_eq!(report["fisher_z"], true);
}
