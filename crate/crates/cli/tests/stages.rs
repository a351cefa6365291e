use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_cpdfs");

fn cpdfs(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn every_text_output_starts_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = cpdfs(&["pipeline", "--seed", "4", "--out", path_str(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files = files_under(dir.path());
    assert!(files.iter().any(|p| p.extension().is_some_and(|e| e == "ttag")));
    for f in files.iter().filter(|p| p.extension().is_none_or(|e| e != "ttag")) {
        let text = fs::read_to_string(f).unwrap();
        let first = text.lines().next().unwrap_or_default();
        assert!(first.starts_with("# cpdfs "), "{}: {first}", f.display());
        assert!(first.contains("config_hash=") && first.ends_with("seed=4"), "{first}");
    }
}

#[test]
fn stages_run_separately_match_pipeline() {
    let whole = tempfile::tempdir().unwrap();
    let staged = tempfile::tempdir().unwrap();
    assert!(cpdfs(&["pipeline", "--out", path_str(whole.path())]).status.success());
    for stage in ["simulate", "coincide", "tomography"] {
        let out = cpdfs(&[stage, "--out", path_str(staged.path())]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["counts.csv", "rho.csv", "tomography.txt", "coincide.txt"] {
        assert_eq!(
            fs::read(whole.path().join(name)).unwrap(),
            fs::read(staged.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn text_tag_files_feed_coincide() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[simulate]\ntag_format = \"text\"\n[experiment]\nduration_ps = 1_000_000_000\n").unwrap();
    let args = ["--config", path_str(&cfg), "--out", path_str(dir.path())];
    assert!(cpdfs(&[&["simulate"][..], &args].concat()).status.success());
    let tag = dir.path().join("tags/00_HH.csv");
    let first = fs::read_to_string(&tag).unwrap();
    assert!(first.starts_with("# cpdfs "));
    assert!(first.lines().nth(1).unwrap().starts_with("CLOCK,"));
    let out = cpdfs(&[&["coincide"][..], &args].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[model]\nchi_s = \"high\"\n").unwrap();
    assert_eq!(cpdfs(&["predict", "--config", path_str(&cfg)]).status.code(), Some(2));
    fs::write(&cfg, "[experiment]\nefficiency = { a_prime = 2.0, r_double = 0.1, b_prime = 0.1 }\n").unwrap();
    assert_eq!(cpdfs(&["simulate", "--config", path_str(&cfg), "--out", path_str(dir.path())]).status.code(), Some(2));
}

#[test]
fn missing_or_corrupt_inputs_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    assert_eq!(cpdfs(&["coincide", "--out", out]).status.code(), Some(3));
    assert_eq!(cpdfs(&["tomography", "--out", out]).status.code(), Some(3));

    assert!(cpdfs(&["simulate", "--out", out]).status.success());
    let tag = dir.path().join("tags/00_HH.ttag");
    let mut bytes = fs::read(&tag).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&tag, bytes).unwrap();
    assert_eq!(cpdfs(&["coincide", "--out", out]).status.code(), Some(3));
}

#[test]
fn degenerate_model_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("zero.toml");
    fs::write(&cfg, "[model]\nchi_s = 0.0\nchi_n = 0.0\ng2_s = 0.0\n").unwrap();
    assert_eq!(cpdfs(&["predict", "--config", path_str(&cfg)]).status.code(), Some(4));
}

#[test]
fn calibration_can_be_switched_off() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fixed.toml");
    fs::write(&cfg, "[coincidence]\ncalibrate = false\nwindows = { dt1 = 3000, dt2 = 4500, dt3 = 5500 }\n").unwrap();
    let out = cpdfs(&["pipeline", "--config", path_str(&cfg), "--out", path_str(dir.path()), "--format", "records"]);
    assert!(out.status.success());
    let coincide = fs::read_to_string(dir.path().join("coincide.csv")).unwrap();
    assert!(coincide.contains("\ncalibrated,false\n"));
    assert!(coincide.contains("\ndt3_ps,5500\n"));
}

#[test]
fn records_format_is_key_value() {
    let out = cpdfs(&["predict", "--format", "records"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# cpdfs "));
    assert_eq!(lines.next(), Some("key,value"));
    assert!(lines.all(|l| l.split(',').count() == 2));
}
