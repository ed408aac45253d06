//! The 100-line golden fixture: generated once from a fixed seed, with the
//! pipeline outputs pinned by hash. After an intended output change, run
//! `cargo test -p foppa-core --test golden -- --ignored regenerate` and
//! review the diff of `expected.sha256`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use foppa_core::config::load_config;
use foppa_core::pipeline::{read_rows, IngestSummary, Layout, RunOptions, Runner, Stage};
use foppa_core::synth::{generate, SynthConfig};

const HASH_FILE: &str = "expected.sha256";

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

fn golden_config() -> SynthConfig {
    SynthConfig {
        seed: 100,
        departments: 6,
        cities_per_department: 5,
        public_entities: 15,
        private_entities: 30,
        lots: 97,
        declared_rate: [0.4, 0.3],
        joint_rate: 0.06,
        cancelled_rate: 0.04,
        unregistered_rate: 0.05,
        out_of_period_rate: 0.03,
        malformed_lines: 3,
        ..SynthConfig::default()
    }
}

fn run(out: &Path, jobs: usize) {
    let mut config = load_config(&golden_dir().join("foppa.toml")).unwrap();
    config.output = out.to_path_buf();
    config.jobs = jobs;
    Runner::new(config, RunOptions::default())
        .unwrap()
        .run_range(Stage::Ingest, Stage::Evaluate)
        .unwrap();
}

fn hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
            let digest = Sha256::digest(fs::read(&p).unwrap());
            let hex = digest.iter().fold(String::new(), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            });
            out.insert(rel, hex);
        }
    }
    out
}

fn render(h: &BTreeMap<String, String>) -> String {
    h.iter().map(|(p, d)| format!("{d}  {p}\n")).collect()
}

#[test]
#[ignore = "rewrites the committed fixture"]
fn regenerate() {
    let dir = golden_dir();
    generate(&golden_config()).write(&dir).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    run(tmp.path(), 1);
    fs::write(dir.join(HASH_FILE), render(&hashes(tmp.path()))).unwrap();
}

#[test]
fn fixture_matches_generator() {
    let tmp = tempfile::tempdir().unwrap();
    let files = generate(&golden_config()).write(tmp.path()).unwrap();
    for p in [files.ted, files.entities, files.facilities, files.postal, files.activity, files.labels] {
        let name = p.file_name().unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            fs::read_to_string(golden_dir().join(name)).unwrap(),
            "{name:?} drifted from the generator"
        );
    }
}

#[test]
fn outputs_match_pinned_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    run(tmp.path(), 2);
    let expected = fs::read_to_string(golden_dir().join(HASH_FILE)).unwrap();
    assert_eq!(render(&hashes(tmp.path())), expected);
}

#[test]
fn fixture_has_three_malformed_lines() {
    let ted = fs::read_to_string(golden_dir().join("ted.csv")).unwrap();
    assert_eq!(ted.lines().count(), 101, "header plus 100 lines");
    let tmp = tempfile::tempdir().unwrap();
    run(tmp.path(), 1);
    let summary: Vec<IngestSummary> = read_rows(&Layout::new(tmp.path()).checkpoint(Stage::Ingest, "summary.csv")).unwrap();
    assert_eq!(summary[0].skipped, 3);
    assert_eq!(summary[0].lots + summary[0].rejected, 97);
}
