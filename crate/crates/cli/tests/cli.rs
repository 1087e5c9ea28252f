use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &[&str] = &[
    "--embed-dim", "16", "--layers", "1", "--heads", "2", "--batch-size", "32", "--lr", "1e-3", "--epochs", "2",
];

fn tabwild(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabwild"))
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("TABWILD_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = tabwild(cwd, args);
    assert!(
        out.status.success(),
        "tabwild {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path.as_ref()).unwrap()).unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(SMALL).copied().collect()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

/// Four real CSVs of two schemas, four surrogate generators each, and a manifest.
fn write_manifest_corpus(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    let mut entries = Vec::new();
    for (t, domain) in [("people_a", "social"), ("people_b", "social"), ("lab_a", "science"), ("lab_b", "science")] {
        let mut body = if t.starts_with("people") {
            String::from("age,job,income\n")
        } else {
            String::from("temp,site,reading\n")
        };
        for i in 0..40u32 {
            let line = if t.starts_with("people") {
                format!("{},{},{}\n", 20 + (i * 7) % 45, ["clerk", "nurse", "chef"][(i % 3) as usize], 1000 + i * 37)
            } else {
                format!("{}.{},{},{}\n", 10 + i % 15, i % 10, ["north", "south"][(i % 2) as usize], i * 3 % 17)
            };
            body.push_str(&line);
        }
        let real = data.join(format!("{t}.csv"));
        fs::write(&real, body).unwrap();
        let mut synthetic = Vec::new();
        for (g, mode) in ["independent", "jitter", "independent", "jitter"].iter().enumerate() {
            let name = format!("{t}_gen{g}");
            let seed = g.to_string();
            ok(dir, &["synthesize-surrogate", "--real", real.to_str().unwrap(), "--mode", mode, "--seed", &seed,
                "--name", &name, "--out", "data"]);
            synthetic.push(format!("data/{name}.csv"));
        }
        entries.push(serde_json::json!({
            "name": t, "domain": domain, "real_path": format!("data/{t}.csv"), "synthetic_paths": synthetic,
        }));
    }
    let manifest = dir.join("manifest.json");
    fs::write(&manifest, serde_json::to_string_pretty(&entries).unwrap()).unwrap();
    manifest
}

#[test]
fn train_from_manifest_writes_only_into_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest_corpus(dir.path());
    let before = listing(dir.path());
    ok(dir.path(), &with_small(&[
        "train", "--manifest", "manifest.json", "--variant", "datum-wise", "--adapt", "--fold", "0", "--folds", "2",
        "--ratios", "2,1,1", "--out", "run",
    ]));
    let mut after = listing(dir.path());
    after.retain(|n| n != "run");
    assert_eq!(before, after);
    assert_eq!(listing(&dir.path().join("run")), ["config.json", "model.twld", "summary.json", "train_log.jsonl"]);

    let config = json(dir.path().join("run/config.json"));
    assert_eq!(config["command"], "train");
    assert_eq!(config["detector"]["adaptation"], true);
    assert_eq!(config["corpus"]["kind"], "manifest");
    assert!(Path::new(config["corpus"]["path"].as_str().unwrap()).is_absolute());
    let split = &config["split"];
    assert_eq!(split["train_tables"].as_array().unwrap().len(), 2);
    assert_eq!(split["test_tables"].as_array().unwrap().len(), 1);

    let log = fs::read_to_string(dir.path().join("run/train_log.jsonl")).unwrap();
    let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0]["table_loss"].is_number());
    assert_eq!(lines[1]["stopping_reason"], "max_epochs");
    let summary = json(dir.path().join("run/summary.json"));
    assert_eq!(summary["test"]["scope"], "test");
}

#[test]
fn missing_manifest_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tabwild(dir.path(), &["train", "--manifest", "absent/m.json", "--fold", "0", "--out", "run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent/m.json"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn bad_flags_and_environment_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = tabwild(dir.path(), &["train", "--toy", "10", "--fold", "0", "--dropout", "1.5", "--out", "run"]);
    assert_eq!(out.status.code(), Some(2));
    let out = tabwild(dir.path(), &["mix", "--out", "run"]);
    assert_eq!(out.status.code(), Some(2), "a corpus source is required");
    let out = Command::new(env!("CARGO_BIN_EXE_tabwild"))
        .current_dir(dir.path())
        .env("TABWILD_THREADS", "zero")
        .args(["mix", "--toy", "5", "--out", "run"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_tabwild"))
        .current_dir(dir.path())
        .env("TABWILD_THREADS", "2")
        .args(["mix", "--toy", "5", "--out", "run"])
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn diverging_training_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tabwild(dir.path(), &[
        "train", "--toy", "20", "--train-tables", "census_a,weather_a", "--embed-dim", "16", "--layers", "1",
        "--heads", "2", "--lr", "1e30", "--out", "run",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn evaluate_reports_bootstrap_sweep_and_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &[
        "train", "--toy", "20", "--train-tables", "census_a,weather_a", "--validation-tables", "weather_b",
        "--embed-dim", "192", "--layers", "1", "--heads", "6", "--epochs", "1", "--lr", "1e-3", "--out", "run",
    ]);
    ok(d, &[
        "evaluate", "--ckpt", "run/model.twld", "--toy", "20", "--bootstrap", "500", "--permute-distance",
        "0,0.2,0.5,1.0", "--export-embeddings", "--out", "eval",
    ]);
    let report = json(d.join("eval/report.json"));
    let b = &report["bootstrap"];
    assert_eq!(b["resamples"], 500);
    assert_eq!(b["level"], 0.95);
    let (lo, mean, hi) = (b["ci_low"].as_f64().unwrap(), b["mean"].as_f64().unwrap(), b["ci_high"].as_f64().unwrap());
    assert!(lo <= mean && mean <= hi);
    assert_eq!(report["per_table"].as_object().unwrap().len(), 4);

    let sweep = fs::read_to_string(d.join("eval/sweep.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows[0], "distance,auc");
    assert_eq!(rows.len(), 5);

    let embeddings = fs::read_to_string(d.join("eval/embeddings.csv")).unwrap();
    let header: Vec<&str> = embeddings.lines().next().unwrap().split(',').collect();
    assert_eq!(&header[..3], ["row_id", "table", "label"]);
    assert_eq!(header.len() - 3, 192);
    assert_eq!(embeddings.lines().count(), 1 + 4 * 40);
    let analytics = json(d.join("eval/embedding_analytics.json"));
    assert!(analytics["probe_accuracy"].as_f64().unwrap() >= 0.0);
}

#[test]
fn corrupted_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &with_small(&["train", "--toy", "10", "--train-tables", "census_a,weather_a", "--out", "run"]));
    let mut bytes = fs::read(d.join("run/model.twld")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(d.join("bad.twld"), bytes).unwrap();
    let out = tabwild(d, &["evaluate", "--ckpt", "bad.twld", "--toy", "10", "--out", "eval"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &with_small(&[
        "train", "--toy", "20", "--train-tables", "census_a,weather_a", "--test-tables", "census_b", "--variant",
        "flat-text", "--augment", "dynamic-perm", "--seed", "5", "--out", "first",
    ]));
    let config = json(d.join("first/config.json"));
    assert_eq!(config["schedule"]["augment"], "dynamic_permutation");
    assert_eq!(config["detector"]["variant"], "flat_text");
    ok(d, &["replay", "--config", "first/config.json", "--out", "second"]);
    assert_eq!(fs::read(d.join("first/model.twld")).unwrap(), fs::read(d.join("second/model.twld")).unwrap());
    assert_eq!(json(d.join("first/summary.json")), json(d.join("second/summary.json")));
    assert_eq!(json(d.join("first/config.json")), json(d.join("second/config.json")));
}

#[test]
fn replay_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["mix", "--toy", "5", "--out", "mixed"]);
    let mut config = json(d.join("mixed/config.json"));
    config["corpus"]["colour"] = Value::from("blue");
    fs::write(d.join("edited.json"), config.to_string()).unwrap();
    let out = tabwild(d, &["replay", "--config", "edited.json", "--out", "again"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn mix_then_perturb_keeps_balance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["mix", "--toy", "50", "--corpus-seed", "3", "--out", "mixed"]);
    let summary = json(d.join("mixed/summary.json"));
    for t in ["census_a", "census_b", "weather_a", "weather_b"] {
        assert_eq!(summary[t]["real"], 50);
        assert_eq!(summary[t]["synthetic"], 50);
    }
    ok(d, &["perturb", "--tables", "mixed/tables", "--row-fraction", "0.2", "--seed", "9", "--out", "noisy"]);
    let replaced = json(d.join("noisy/summary.json"));
    for t in ["census_a", "census_b", "weather_a", "weather_b"] {
        assert_eq!(replaced["replaced_rows"][t], 10);
        let before = json(d.join(format!("mixed/tables/{t}.json")));
        let after = json(d.join(format!("noisy/tables/{t}.json")));
        assert_eq!(before["labels"], after["labels"]);
        let labels = before["labels"].as_array().unwrap();
        for (i, label) in labels.iter().enumerate() {
            if label == "real" {
                assert_eq!(before["rows"][i], after["rows"][i]);
            }
        }
    }
}

#[test]
fn synthesize_surrogate_keeps_header_and_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("real.csv"), "a,b\n1,x\n2,y\n3,x\n").unwrap();
    ok(d, &["synthesize-surrogate", "--real", "real.csv", "--mode", "jitter", "--rows", "7", "--out", "gen"]);
    let text = fs::read_to_string(d.join("gen/real_jitter.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "a,b");
    assert_eq!(lines.len(), 8);
}

#[test]
fn cross_table_protocol_summarizes_folds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &with_small(&[
        "protocol", "cross-table", "--toy", "20", "--ratios", "2,1,1", "--folds", "3", "--out", "study",
    ]));
    let s = json(d.join("study/summary.json"));
    assert_eq!(s["folds"].as_array().unwrap().len(), 3);
    for metric in ["auc", "accuracy"] {
        assert!(s[metric]["mean"].is_number());
        assert!(s[metric]["sd"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn cross_domain_protocol_labels_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_manifest_corpus(d);
    ok(d, &with_small(&[
        "protocol", "cross-domain", "--manifest", "manifest.json", "--source", "science", "--bootstrap", "40",
        "--out", "plain",
    ]));
    let plain = json(d.join("plain/summary.json"));
    assert_eq!(plain["row_label"], "plain");
    assert_eq!(plain["cells"].as_array().unwrap().len(), 1);
    assert_eq!(plain["cells"][0]["target"], "social");

    ok(d, &with_small(&[
        "protocol", "cross-domain", "--manifest", "manifest.json", "--source", "science", "--anonymize", "--perturb",
        "--bootstrap", "40", "--out", "afn",
    ]));
    let afn = json(d.join("afn/summary.json"));
    assert_eq!(afn["row_label"], "AFN");
    assert_eq!(afn["cells"][0]["bootstrap"]["resamples"], 40);
}
