use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
out = "runs"
[synth]
n = 600
seed = 3
[neighborhood]
k_v = 30
k_p = 10
[systems]
variants = ["NoPhi3"]
baselines = ["majority-vote", "stacked"]
[sweep]
k_v = [10, 30]
k_p = [5]
"#;

fn dmfp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmfp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_json(o: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().expect("stderr line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {err}"))
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), config).unwrap();
    dir
}

#[test]
fn worked_example_prints_tallies() {
    let dir = tempfile::tempdir().unwrap();
    let o = dmfp(dir.path(), &["reproduce-figure3"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("Private: 1.96, Public: 0 → Private"), "{}", stdout(&o));
}

#[test]
fn one_record_estimate_set_fails_with_neighbor_error() {
    let dir = setup("[synth]\nn = 40\n[split]\nfractions = [0.5, 0.03, 0.47]\n");
    let o = dmfp(dir.path(), &["train", "--config", "c.toml"]);
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"]["kind"], "no_neighbors");
}

#[test]
fn unknown_and_invalid_keys_are_enumerated() {
    let dir = setup("colour = 1\n[fusion]\nthreshhold = 0.4\n");
    let o = dmfp(dir.path(), &["train", "--config", "c.toml"]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_json(&o);
    assert_eq!(e["error"]["kind"], "config");
    assert_eq!(e["error"]["keys"], serde_json::json!(["colour", "fusion.threshhold"]));

    let dir = setup("[fusion]\nthreshold = 0\n[sweep]\nfolds = 1\n");
    let o = dmfp(dir.path(), &["sweep", "--config", "c.toml"]);
    assert_eq!(error_json(&o)["error"]["keys"], serde_json::json!(["fusion", "sweep.folds"]));

    let o = dmfp(dir.path(), &["train", "--variant", "NoSuch"]);
    assert_eq!(error_json(&o)["error"]["keys"], serde_json::json!(["systems.variants[0]"]));
}

#[test]
fn evaluate_without_training_is_a_usage_error() {
    let dir = setup(SMALL);
    let o = dmfp(dir.path(), &["evaluate", "--config", "c.toml"]);
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"]["kind"], "usage");
}

#[test]
fn train_predict_evaluate_layout_and_hashes() {
    let dir = setup(SMALL);
    let o = dmfp(dir.path(), &["train", "--config", "c.toml"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join(stdout(&o).trim());
    for sub in ["models", "predictions", "reports", "config.toml"] {
        assert!(run.join(sub).exists(), "{sub}");
    }
    let hash_line = std::fs::read_to_string(run.join("config.toml")).unwrap();
    let hash = hash_line.lines().next().unwrap().split('"').nth(1).unwrap().to_string();
    assert!(run.ends_with(format!("run-{}", &hash[..8])));

    let o = dmfp(dir.path(), &["predict", "--config", "c.toml", "--variant", "NoPhi3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!lines.is_empty());
    for l in &lines {
        assert_eq!(l["system"], "NoPhi3");
        assert_eq!(l["config_hash"], hash.as_str());
        assert!(l["label"] == "private" || l["label"] == "public");
    }
    let o = dmfp(dir.path(), &["predict", "--config", "c.toml", "--baseline", "fusion-avg"]);
    assert_eq!(error_json(&o)["error"]["kind"], "usage");

    let o = dmfp(dir.path(), &["evaluate", "--config", "c.toml"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("reports/report.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"], hash.as_str());
    let systems: Vec<&str> = report["reports"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            assert_eq!(r["meta"]["config_hash"], hash.as_str());
            r["meta"]["system"].as_str().unwrap()
        })
        .collect();
    assert_eq!(systems, ["DMFP", "NoPhi3", "majority-vote", "stacked"]);
    assert!(run.join("predictions/dmfp.jsonl").exists());

    // A changed configuration lands in a different run directory.
    let o = dmfp(dir.path(), &["train", "--config", "c.toml", "--seed", "11"]);
    let other = dir.path().join(stdout(&o).trim());
    assert_ne!(other, run);
    assert!(run.join("reports/report.json").exists());
}

#[test]
fn generated_data_feeds_training() {
    let dir = setup("[synth]\nn = 300\n");
    let o = dmfp(dir.path(), &["generate", "--config", "c.toml", "--out", "gen"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = stdout(&o).trim().to_string();
    assert!(dir.path().join(&manifest).exists());
    assert!(dir.path().join("gen/data/truth.json").exists());
    std::fs::write(
        dir.path().join("d.toml"),
        format!("[data]\nmanifest = {:?}\n[neighborhood]\nk_v = 20\nk_p = 5\n", manifest.trim_start_matches("./")),
    )
    .unwrap();
    let o = dmfp(dir.path(), &["train", "--config", "d.toml"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_writes_grid_and_multi_seed_summarizes() {
    let dir = setup(SMALL);
    let o = dmfp(dir.path(), &["sweep", "--config", "c.toml"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.starts_with("k_v\\k_p,5\n10,"), "{out}");
    assert!(out.contains("best: k_v = "));

    let o = dmfp(dir.path(), &["evaluate", "--config", "c.toml", "--seeds", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Paired t-test"));
}
