//! End-to-end checks of the installed binary: exit codes, the
//! machine-readable error channel, stage selection, seed overrides, and
//! the cross-country comparison workflow.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use trapscope::panel::Schema;
use trapscope::pipeline::{
    BinningConfig, DimensionConfig, InterveneConfig, MetricParams, RunConfig, Stage,
};
use trapscope::interventions::PovertyDef;
use trapscope::synth::{DimChain, KernelSpec, SynthSpec};

fn binary() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_trapscope"));
    // Keep the ambient environment from leaking into seed handling.
    cmd.env_remove("TRAPSCOPE_SEED");
    cmd
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Last stderr line parsed as the structured error object.
fn stderr_error(output: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&output.stderr);
    let line = stderr
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {stderr}"))
}

fn stdout_paths(output: &Output) -> Vec<PathBuf> {
    String::from_utf8_lossy(&output.stdout)
        .lines()
        .map(PathBuf::from)
        .collect()
}

fn config_hash_line(output: &Output) -> String {
    let stderr = String::from_utf8_lossy(&output.stderr);
    stderr
        .lines()
        .find(|l| l.starts_with("config "))
        .unwrap_or_else(|| panic!("no config hash on stderr: {stderr}"))
        .to_string()
}

fn synth_config(country: &str, out: &Path) -> RunConfig {
    RunConfig {
        country: country.into(),
        stages: vec![Stage::Estimate],
        input: None,
        synth: Some(SynthSpec {
            kernel: KernelSpec::Factorized {
                chains: vec![
                    DimChain {
                        name: "income".into(),
                        bins: 5,
                        up: 0.2,
                        down: 0.25,
                    },
                    DimChain {
                        name: "health".into(),
                        bins: 5,
                        up: 0.3,
                        down: 0.3,
                    },
                ],
            },
            households: 300,
            waves: 8,
            seed: 0,
            missingness: 0.0,
            jitter: 0.25,
            start_wave: 2015,
            shock: None,
        }),
        schema: Schema::default(),
        dimensions: vec![
            DimensionConfig {
                name: "income".into(),
                binning: BinningConfig::Equidistant { k: 5 },
            },
            DimensionConfig {
                name: "health".into(),
                binning: BinningConfig::Equidistant { k: 5 },
            },
        ],
        period_boundaries: Vec::new(),
        params: MetricParams::default(),
        order: 1,
        bootstrap: None,
        homogeneity_interval: None,
        memory_orders: Vec::new(),
        poverty: PovertyDef::default(),
        escape_horizon: 200,
        shock: None,
        intervene: None,
        seed: 11,
        out: out.to_path_buf(),
    }
}

fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

#[test]
fn missing_config_file_is_a_structured_error() {
    let output = binary()
        .args(["metrics", "--config", "/nonexistent/run.json"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let err = stderr_error(&output);
    assert!(err["error"].as_str().is_some_and(|m| !m.is_empty()));
    assert!(err.get("stage").is_some());
}

#[test]
fn stage_failures_name_the_stage_on_stderr() {
    let tmp = TempDir::new().unwrap();
    // Second-order chains have no counterfactual arms, so the intervene
    // stage is the one that must be reported failing.
    let mut cfg = synth_config("aa", tmp.path());
    cfg.order = 2;
    cfg.stages = vec![Stage::Intervene];
    cfg.intervene = Some(InterveneConfig {
        income: "income".into(),
        health: "health".into(),
        percentile: 0.25,
        boosts: vec![0.05, 0.10],
    });
    let path = write_config(tmp.path(), "run.json", &cfg);
    let output = binary()
        .args(["run", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let err = stderr_error(&output);
    assert_eq!(err["stage"], "intervene");
    assert!(err["error"]
        .as_str()
        .is_some_and(|m| m.contains("first-order")));
}

#[test]
fn single_stage_subcommands_write_that_stage_only() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = synth_config("aa", tmp.path());
    cfg.input = Some(fixture_dir().join("panel.csv"));
    cfg.synth = None;
    cfg.dimensions.push(DimensionConfig {
        name: "education".into(),
        binning: BinningConfig::Equidistant { k: 3 },
    });
    let path = write_config(tmp.path(), "run.json", &cfg);
    let output = binary()
        .args(["metrics", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let paths = stdout_paths(&output);
    assert!(!paths.is_empty());
    for p in &paths {
        assert!(
            p.file_name()
                .unwrap()
                .to_string_lossy()
                .starts_with("metrics"),
            "unexpected artifact {}",
            p.display()
        );
        assert!(p.exists());
    }
    let json_path = paths.iter().find(|p| p.extension().unwrap() == "json").unwrap();
    let artifact: Value = serde_json::from_str(&fs::read_to_string(json_path).unwrap()).unwrap();
    assert_eq!(artifact["stage"], "metrics");
    assert_eq!(artifact["country"], "aa");
    assert!(artifact["body"]["joint"]["shorrocks"]["raw"].as_f64().is_some());
    let hash_line = config_hash_line(&output);
    assert!(artifact["config_hash"]
        .as_str()
        .is_some_and(|h| hash_line.contains(h)));
}

#[test]
fn environment_seed_wins_over_the_configured_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = synth_config("aa", tmp.path().join("one").as_path());
    let path = write_config(tmp.path(), "run.json", &cfg);

    let baseline = binary()
        .args(["synth", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(baseline.status.success());

    let mut cfg_two = cfg.clone();
    cfg_two.out = tmp.path().join("two");
    let path_two = write_config(tmp.path(), "run2.json", &cfg_two);
    let reseeded = binary()
        .args(["synth", "--config"])
        .arg(&path_two)
        .env("TRAPSCOPE_SEED", "12345")
        .output()
        .unwrap();
    assert!(reseeded.status.success());

    // The effective seed participates in the config identity, and the
    // generated panel actually changes.
    assert_ne!(config_hash_line(&baseline), config_hash_line(&reseeded));
    let panel = |out: &Output| {
        let p = stdout_paths(out)
            .into_iter()
            .find(|p| p.extension().unwrap() == "csv")
            .unwrap();
        fs::read(p).unwrap()
    };
    assert_ne!(panel(&baseline), panel(&reseeded));

    let malformed = binary()
        .args(["synth", "--config"])
        .arg(&path)
        .env("TRAPSCOPE_SEED", "not-a-number")
        .output()
        .unwrap();
    assert!(!malformed.status.success());
    let err = stderr_error(&malformed);
    assert!(err["error"]
        .as_str()
        .is_some_and(|m| m.contains("TRAPSCOPE_SEED")));
}

#[test]
fn flag_built_synthetic_panels_require_an_output_root() {
    let refused = binary()
        .args(["synth", "--kernel", "double-well", "--households", "50"])
        .output()
        .unwrap();
    assert!(!refused.status.success());
    assert!(stderr_error(&refused)["error"]
        .as_str()
        .is_some_and(|m| m.contains("--out")));

    let tmp = TempDir::new().unwrap();
    let output = binary()
        .args([
            "synth",
            "--kernel",
            "double-well",
            "--k",
            "7",
            "--households",
            "50",
            "--waves",
            "6",
            "--seed",
            "3",
            "--out",
        ])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let paths = stdout_paths(&output);
    let csv = paths
        .iter()
        .find(|p| p.extension().unwrap() == "csv")
        .unwrap();
    let text = fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("household_id,year,weight,income"));
    assert_eq!(lines.count(), 300);
}

#[test]
fn comparison_joins_external_deprivation_rates_by_country() {
    let tmp = TempDir::new().unwrap();
    let a = write_config(tmp.path(), "aa.json", &synth_config("aa", &tmp.path().join("runs")));
    let b = write_config(tmp.path(), "bb.json", &synth_config("bb", &tmp.path().join("runs")));
    let dep_path = tmp.path().join("deprivation.json");
    fs::write(&dep_path, r#"{"aa": 0.217, "zz": 0.4}"#).unwrap();

    let out_dir = tmp.path().join("table");
    let output = binary()
        .arg("compare")
        .arg("--config")
        .arg(&a)
        .arg("--config")
        .arg(&b)
        .arg("--deprivation")
        .arg(&dep_path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let paths = stdout_paths(&output);
    assert_eq!(paths.len(), 2, "expected the table as JSON and CSV");

    let json_path = paths.iter().find(|p| p.extension().unwrap() == "json").unwrap();
    let table: Value = serde_json::from_str(&fs::read_to_string(json_path).unwrap()).unwrap();
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["country"], "aa");
    assert_eq!(rows[0]["deprivation_rate"], 0.217);
    assert_eq!(rows[1]["country"], "bb");
    assert!(rows[1]["deprivation_rate"].is_null());
    // Identical synthetic countries agree on every internal statistic.
    assert_eq!(rows[0]["poverty_rate"], rows[1]["poverty_rate"]);
    assert_eq!(rows[0]["escape_time"], rows[1]["escape_time"]);

    let csv_path = paths.iter().find(|p| p.extension().unwrap() == "csv").unwrap();
    let text = fs::read_to_string(csv_path).unwrap();
    assert!(text.lines().next().unwrap().contains("deprivation_rate"));
    assert_eq!(text.lines().count(), 3);
}
