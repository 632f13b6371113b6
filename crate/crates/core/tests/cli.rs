use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use owm::agents::RunRecord;
use owm::harness::experiment::{load_manifest, MANIFEST_FILE};

const SMALL: &str = r#"
name = "small"
budget = 600
checkpoint_every = 200
n_seeds = 2

[env]
name = "riverswim"
n_states = 4

[agent]
imagination_n = 4
imagination_l = 6
model_batch = 32
"#;

fn owm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_owm")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            for f in fs::read_dir(&p).unwrap() {
                let f = f.unwrap().path();
                if f.extension().is_some_and(|e| e == "csv") {
                    out.push(f.strip_prefix(dir).unwrap().to_string_lossy().into_owned());
                }
            }
        }
    }
    out.sort();
    out
}

#[test]
fn single_seed_run_writes_one_csv_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("out");
    let res = owm(&["run", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(csv_files(&out), vec!["owm/seed_3.csv".to_string()]);
    let m = load_manifest(&out).unwrap();
    assert_eq!(m.seeds, vec![3]);
    assert_eq!(m.config_hash.len(), 64);
    assert_eq!(m.versions.owm, env!("CARGO_PKG_VERSION"));
    let rec = RunRecord::load_csv(&out.join("owm/seed_3.csv")).unwrap();
    assert_eq!(rec.rows.iter().map(|r| r.env_step).collect::<Vec<_>>(), vec![200, 400, 600]);
}

#[test]
fn reruns_and_parallel_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let dirs = ["a", "b", "c"].map(|d| tmp.path().join(d));
    for (dir, par) in dirs.iter().zip(["1", "1", "2"]) {
        let res = owm(&["run", "--config", &cfg, "--out", dir.to_str().unwrap(), "--parallel", par]);
        assert!(res.status.success());
    }
    let files = csv_files(&dirs[0]);
    assert_eq!(files.len(), 2);
    for f in &files {
        let first = fs::read(dirs[0].join(f)).unwrap();
        assert_eq!(first, fs::read(dirs[1].join(f)).unwrap());
        assert_eq!(first, fs::read(dirs[2].join(f)).unwrap());
    }
}

#[test]
fn sweep_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[sweep]\nalpha = [0.0, 0.0001]\n");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let out = tmp.path().join("out");
    let res = owm(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--parallel", "2"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(csv_files(&out).len(), 4);
    let m = load_manifest(&out).unwrap();
    let names: Vec<_> = m.variants.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, vec!["alpha=0e0", "alpha=1e-4"]);

    let res = owm(&["report", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("alpha=1e-4"));
    let final_csv = fs::read_to_string(out.join("report/final.csv")).unwrap();
    assert_eq!(final_csv.lines().next(), Some("variant,n_seeds,mean,iqm,median,sem,sem_defined"));
    assert_eq!(final_csv.lines().count(), 3);
    let curves = fs::read_to_string(out.join("report/curves.csv")).unwrap();
    // 2 variants x 2 seeds x 3 checkpoints
    assert_eq!(curves.lines().count(), 1 + 12);
    assert!(out.join("report/curve_summary.csv").exists());
}

#[test]
fn single_seed_report_flags_sem() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &SMALL.replace("n_seeds = 2", "n_seeds = 1"));
    let out = tmp.path().join("out");
    assert!(owm(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    assert!(owm(&["report", "--out", out.to_str().unwrap()]).status.success());
    let final_csv = fs::read_to_string(out.join("report/final.csv")).unwrap();
    let row: Vec<&str> = final_csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], "1");
    assert_eq!(row[2], row[3]);
    assert_eq!(row[3], row[4]);
    assert_eq!(&row[5..], &["0", "false"]);
}

#[test]
fn mixed_configurations_fail_aggregation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let a = write_config(tmp.path(), "a.toml", SMALL);
    let b = write_config(tmp.path(), "b.toml", &SMALL.replace("[agent]", "[agent]\nagent_kind = \"ce\""));
    assert!(owm(&["run", "--config", &a, "--out", out.to_str().unwrap()]).status.success());
    assert!(owm(&["run", "--config", &b, "--out", out.to_str().unwrap()]).status.success());
    assert!(out.join(MANIFEST_FILE).exists());
    let res = owm(&["report", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("aggregation error"));
}

#[test]
fn configuration_errors_exit_with_two_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (SMALL.replace("model_batch = 32", "model_batch = 32\nlearning_rate = 1.0"), "learning_rate"),
        (SMALL.replace("n_seeds = 2", "n_seeds = 0"), "n_seeds"),
        (SMALL.replace("model_batch = 32", "model_batch = 0"), "agent.model_batch"),
        (format!("{SMALL}\n[sweep]\neta = []\n"), "sweep.eta"),
    ];
    for (i, (text, field)) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.toml"), text);
        let res = owm(&["run", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(2), "case {field}");
        let stderr = String::from_utf8_lossy(&res.stderr);
        assert!(stderr.contains(field), "case {field}: {stderr}");
    }
    let cfg = write_config(tmp.path(), "good.toml", SMALL);
    let res = owm(&["sweep", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_a_configuration_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let res = owm(&["run", "--config", &cfg, "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("output_dir"));
}

#[test]
fn check_subcommand_passes() {
    let res = owm(&["check"]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(res.status.success(), "{stdout}");
    assert!(stdout.contains(", 0 failed"));
    assert!(!stdout.contains("FAIL "));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = owm::harness::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!cfg.variants().is_empty());
        n += 1;
    }
    assert!(n >= 2);
}
