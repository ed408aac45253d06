use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/golden")
}

/// A scratch copy of the golden inputs, so runs never write into the repo.
fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for e in fs::read_dir(fixture()).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            fs::copy(&p, dir.path().join(p.file_name().unwrap())).unwrap();
        }
    }
    dir
}

fn foppa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foppa"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn stage_without_its_input_checkpoint_exits_2() {
    let dir = workdir();
    let out = foppa(dir.path(), &["identify"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("normalize"), "{err}");
}

#[test]
fn missing_config_exits_2() {
    let dir = workdir();
    let out = foppa(dir.path(), &["--config", "nope.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_accepts_the_fixture_and_lists_problems() {
    let dir = workdir();
    let ok = foppa(dir.path(), &["validate"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));

    let good = fs::read_to_string(dir.path().join("foppa.toml")).unwrap();
    let bad = good.replace("postal.csv", "missing.csv") + "\n[matching]\nname_threshold = 1.5\n";
    fs::write(dir.path().join("bad.toml"), bad).unwrap();
    let out = foppa(dir.path(), &["--config", "bad.toml", "validate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("name_threshold"), "{err}");
    assert!(err.contains("missing.csv"), "{err}");
}

#[test]
fn pipeline_equals_stages_run_one_by_one() {
    let dir = workdir();
    let whole = foppa(dir.path(), &["--out", "whole", "pipeline"]);
    assert!(whole.status.success(), "{}", String::from_utf8_lossy(&whole.stderr));
    for stage in ["ingest", "criteria", "normalize", "identify", "merge", "emit", "evaluate"] {
        let out = foppa(dir.path(), &["--out", "steps", "--jobs", "3", stage]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let a = tree(&dir.path().join("whole"));
    let b = tree(&dir.path().join("steps"));
    assert!(!a.is_empty());
    assert_eq!(a.iter().map(|f| &f.0).collect::<Vec<_>>(), b.iter().map(|f| &f.0).collect::<Vec<_>>());
    for (x, y) in a.iter().zip(&b) {
        assert!(x.1 == y.1, "{} differs", x.0);
    }
}

#[test]
fn partial_range_resumes_from_checkpoints() {
    let dir = workdir();
    let first = foppa(dir.path(), &["pipeline", "--stage-to", "normalize"]);
    assert!(first.status.success());
    assert!(!dir.path().join("out/checkpoints/identify").exists());
    let rest = foppa(dir.path(), &["pipeline", "--stage-from", "identify"]);
    assert!(rest.status.success(), "{}", String::from_utf8_lossy(&rest.stderr));
    assert!(dir.path().join("out/report").is_dir());
}

#[test]
fn masked_evaluation_writes_its_own_report() {
    let dir = workdir();
    assert!(foppa(dir.path(), &["pipeline", "--stage-to", "emit"]).status.success());
    let out = foppa(dir.path(), &["--seed", "7", "evaluate", "--mask"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let masked = dir.path().join("out/report/masked");
    assert!(masked.is_dir());
    assert!(fs::read_dir(&masked).unwrap().count() > 0);
}

#[test]
fn unknown_stage_name_is_a_usage_error() {
    let dir = workdir();
    let out = foppa(dir.path(), &["pipeline", "--stage-from", "polish"]);
    assert!(!out.status.success());
}
