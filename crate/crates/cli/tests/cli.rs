//! End-to-end runs of the `caudg` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use caudg_core::data::cwd::{DATA_FILE, DOMAINS_FILE, LABELS_FILE, META_FILE};
use caudg_core::data::load_cwd;
use caudg_core::pipeline::aggregate_seeds;
use caudg_core::pipeline::outputs::{find_runs, read_run, StoredRun};
use caudg_core::pipeline::Variant;

const CWD_FILES: [&str; 4] = [META_FILE, DATA_FILE, LABELS_FILE, DOMAINS_FILE];

fn caudg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caudg"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CAUDG_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = caudg(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    caudg(args, cwd).status.code().unwrap()
}

/// A temporary directory holding the small synthetic dataset in `syn/`.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--preset", "small", "--out", "syn"], dir.path());
    dir
}

/// `key=value` field of a summary line.
fn field<'a>(line: &'a str, key: &str) -> &'a str {
    line.split_whitespace()
        .find_map(|w| w.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in {line:?}"))
}

fn run_of(line: &str, cwd: &Path) -> StoredRun {
    read_run(&cwd.join(field(line, "run"))).unwrap()
}

#[test]
fn exit_codes_separate_usage_input_and_divergence() {
    let dir = workspace();
    let p = dir.path();
    assert_eq!(code(&["train", "--data", "syn"], p), 2);
    assert_eq!(code(&["train", "--data", "missing", "--target", "0", "--out", "r"], p), 2);
    assert_eq!(code(&["train", "--data", "syn", "--target", "4", "--out", "r"], p), 2);
    assert_eq!(code(&["train", "--data", "syn", "--target", "0", "--batch-size", "1", "--out", "r"], p), 2);
    let conflict = ["train", "--data", "syn", "--target", "0", "--ablation", "wo-ids", "--ids-eps", "1e-3", "--out", "r"];
    assert_eq!(code(&conflict, p), 2);
    assert_eq!(code(&["synth", "--preset", "huge", "--out", "x"], p), 2);
    assert_eq!(code(&["import", "--setting", "cross-person", "--raw-dir", "nowhere", "--out", "x"], p), 2);
    let diverge = ["train", "--data", "syn", "--target", "0", "--lr", "1e200", "--epochs", "1", "--out", "r"];
    assert_eq!(code(&diverge, p), 3);
    assert_eq!(code(&["train", "--data", "syn", "--target", "0", "--epochs", "1", "--out", "r"], p), 0);
}

#[test]
fn synth_is_byte_identical_and_consistent() {
    let dir = workspace();
    let p = dir.path();
    ok(&["synth", "--preset", "small", "--out", "again"], p);
    for f in CWD_FILES {
        assert_eq!(fs::read(p.join("syn").join(f)).unwrap(), fs::read(p.join("again").join(f)).unwrap(), "{f}");
    }
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(p.join("syn").join(META_FILE)).unwrap()).unwrap();
    assert_eq!(meta["domain_names"].as_array().unwrap().len(), 4);
    let n = meta["windows"].as_u64().unwrap() as usize;
    let c = meta["channels"].as_u64().unwrap() as usize;
    let w = meta["width"].as_u64().unwrap() as usize;
    assert_eq!(fs::read(p.join("syn").join(DATA_FILE)).unwrap().len(), n * c * w * 4);
    assert_eq!(fs::read(p.join("syn").join(LABELS_FILE)).unwrap().len(), n * 4);
    ok(&["synth", "--preset", "small", "--seed", "1", "--out", "other"], p);
    assert_ne!(fs::read(p.join("syn").join(DATA_FILE)).unwrap(), fs::read(p.join("other").join(DATA_FILE)).unwrap());
}

/// One 125-row segment per activity and subject in the DSADS layout.
fn dsads_raw(root: &Path) {
    for a in 1..=19 {
        for subject in 1..=8 {
            let dir = root.join(format!("a{a:02}/p{subject}"));
            fs::create_dir_all(&dir).unwrap();
            let mut text = String::new();
            for r in 0..125 {
                let vals: Vec<String> = (0..45)
                    .map(|c| (((a * 31 + subject * 7 + r * 3 + c) % 200) as f32 * 0.5 - 50.0).to_string())
                    .collect();
                writeln!(text, "{}", vals.join(",")).unwrap();
            }
            fs::write(dir.join("s01.txt"), text).unwrap();
        }
    }
}

#[test]
fn reimport_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    dsads_raw(&p.join("raw"));
    for out in ["a", "b"] {
        let args = ["import", "--dataset", "dsads", "--setting", "cross-person", "--raw-dir", "raw", "--out", out];
        ok(&args, p);
    }
    for f in CWD_FILES {
        assert_eq!(fs::read(p.join("a").join(f)).unwrap(), fs::read(p.join("b").join(f)).unwrap(), "{f}");
    }
    let ds = load_cwd(&p.join("a")).unwrap();
    assert_eq!((ds.len(), ds.num_domains(), ds.num_classes()), (19 * 8, 4, 19));
}

#[test]
fn summary_line_matches_results_file() {
    let dir = workspace();
    let p = dir.path();
    let out = ok(&["train", "--data", "syn", "--target", "2", "--epochs", "2", "--out", "runs"], p);
    let line = out.lines().last().unwrap();
    let run = run_of(line, p);
    assert_eq!(field(line, "acc").parse::<f64>().unwrap(), run.result.test.accuracy);
    assert_eq!(field(line, "macro_f1").parse::<f64>().unwrap(), run.result.test.macro_f1);
    assert_eq!(run.config.target, 2);
    let run_dir = PathBuf::from(field(line, "run"));
    assert!(p.join(&run_dir).join("manifest.json").is_file());
    assert!(p.join(&run_dir).join("confusion.csv").is_file());
    // the saved model re-evaluates to the same numbers
    let run_arg = run_dir.to_str().unwrap();
    let eval = ok(&["evaluate", "--model", run_arg, "--data", "syn", "--target", "2"], p);
    assert_eq!(field(&eval, "acc").parse::<f64>().unwrap(), run.result.test.accuracy);
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = workspace();
    let p = dir.path();
    let args = ["train", "--data", "syn", "--target", "1", "--epochs", "2", "--beta", "0.1", "--out", "a"];
    let first = run_of(ok(&args, p).lines().last().unwrap(), p);
    let manifest = fs::read_dir(p.join("a")).unwrap().next().unwrap().unwrap().path().join("manifest.json");
    let m = manifest.to_str().unwrap();
    let again = run_of(ok(&["train", "--data", "syn", "--target", "1", "--config", m, "--out", "b"], p).lines().last().unwrap(), p);
    assert_eq!(again.config, first.config);
    assert_eq!(again.result.history, first.result.history);
    assert_eq!(again.result.test, first.result.test);
}

#[test]
fn seed_precedence_is_flag_then_file_then_environment() {
    let dir = workspace();
    let p = dir.path();
    fs::write(p.join("seeded.toml"), "seed = 5\nepochs = 1\n").unwrap();
    fs::write(p.join("plain.toml"), "epochs = 1\n").unwrap();
    let seed = |cfg: &str, flag: Option<&str>| -> u64 {
        let mut args = vec!["train", "--data", "syn", "--target", "0", "--config", cfg, "--out", "r"];
        if let Some(s) = flag {
            args.extend(["--seed", s]);
        }
        let out = Command::new(env!("CARGO_BIN_EXE_caudg"))
            .args(&args)
            .current_dir(p)
            .env("CAUDG_SEED", "9")
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        field(String::from_utf8(out.stdout).unwrap().lines().last().unwrap(), "seed").parse().unwrap()
    };
    assert_eq!(seed("seeded.toml", Some("2")), 2);
    assert_eq!(seed("seeded.toml", None), 5);
    assert_eq!(seed("plain.toml", None), 9);
}

#[test]
fn evaluate_rejects_a_dataset_of_another_shape() {
    let dir = workspace();
    let p = dir.path();
    fs::write(p.join("wide.toml"), "width = 40\n").unwrap();
    ok(&["synth", "--preset", "small", "--config", "wide.toml", "--out", "wide"], p);
    let out = ok(&["train", "--data", "syn", "--target", "0", "--epochs", "1", "--out", "runs"], p);
    let run = field(out.lines().last().unwrap(), "run").to_string();
    let res = caudg(&["evaluate", "--model", &run, "--data", "wide"], p);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("32 samples"));
    ok(&["export-embeddings", "--model", &run, "--data", "syn", "--target", "0", "--out", "emb"], p);
    assert!(p.join("emb/embeddings.f32").is_file());
}

#[test]
fn ablation_list_matches_table_rows() {
    let dir = workspace();
    let p = dir.path();
    let listed: Vec<(String, String)> = ok(&["ablate", "--list"], p)
        .lines()
        .map(|l| {
            let (name, label) = l.split_once(' ').unwrap();
            (name.to_string(), label.trim().to_string())
        })
        .collect();
    let expected: Vec<(String, String)> = Variant::ABLATIONS
        .iter()
        .map(|v| (v.name().to_string(), v.label().to_string()))
        .collect();
    assert_eq!(listed, expected);
    let args = [
        "ablate", "--data", "syn", "--ablation", "full,wo-ids", "--seeds", "0,1", "--target", "0", "--epochs", "1",
        "--out", "abl",
    ];
    let table = ok(&args, p);
    let stored: serde_json::Value = serde_json::from_slice(&fs::read(p.join("abl/ablation.json")).unwrap()).unwrap();
    let labels: Vec<&str> = stored["variants"].as_array().unwrap().iter().map(|v| v["label"].as_str().unwrap()).collect();
    assert_eq!(labels, [listed[0].1.as_str(), listed[7].1.as_str()]);
    for l in labels {
        assert!(table.contains(l));
    }
    assert_eq!(find_runs(&p.join("abl")).unwrap().len(), 4);
}

#[test]
fn report_aggregates_like_the_library() {
    let dir = workspace();
    let p = dir.path();
    let args = [
        "ablate", "--data", "syn", "--ablation", "full", "--seeds", "0,1,2", "--target", "0,3", "--epochs", "1",
        "--out", "runs",
    ];
    ok(&args, p);
    ok(&["report", "--runs", "runs"], p);
    let runs = find_runs(&p.join("runs")).unwrap();
    assert_eq!(runs.len(), 6);
    let acc = |t: usize| -> Vec<f64> {
        let mut v: Vec<(u64, f64)> = runs
            .iter()
            .filter(|r| r.1.result.target == t)
            .map(|r| (r.1.result.seed, r.1.result.test.accuracy))
            .collect();
        v.sort_by_key(|x| x.0);
        v.into_iter().map(|x| x.1).collect()
    };
    let csv = fs::read_to_string(p.join("runs/report.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let check = |row: &[&str], values: &[f64]| {
        let a = aggregate_seeds(values).unwrap();
        assert_eq!(row[4], "3");
        assert_eq!(row[5].parse::<f64>().unwrap(), a.mean);
        assert_eq!(row[6].parse::<f64>().unwrap(), a.half_width);
    };
    check(&rows[0], &acc(0));
    check(&rows[1], &acc(3));
    assert_eq!(rows[2][2], "avg");
    let avg: Vec<f64> = acc(0).iter().zip(acc(3)).map(|(a, b)| (a + b) / 2.0).collect();
    check(&rows[2], &avg);

    let empty = tempfile::tempdir().unwrap();
    assert_eq!(code(&["report", "--runs", empty.path().to_str().unwrap()], p), 2);
}
