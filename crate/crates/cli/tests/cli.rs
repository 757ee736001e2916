use std::path::Path;
use std::process::Command;

use aflow_cli::checkpoint::{Checkpoint, FORMAT_VERSION};
use aflow_cli::commands::{VerifyFile, FINAL_CHECKPOINT, MANIFEST_FILE, METRICS_FILE, VERIFY_FILE};
use aflow_cli::output::Manifest;
use aflow_cli::{cmd_diagnose, cmd_run, cmd_spectrum, CliError, ExperimentConfig};
use aflow_core::diagnostics::defect_report;
use aflow_core::flow::{metric_from_density, FlowState, Formulation, RunStatus};
use aflow_core::torus::TorusGrid;
use tempfile::TempDir;

fn aflow() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aflow"))
}

fn balanced_toml(out: &Path, seed: u64) -> String {
    format!(
        r#"
n = 3
scenario = "stability_balanced"
output_dir = "{}"

[grid]
resolution = 8
active_coords = ["x1", "y1"]

[perturbation]
family = "balanced"
amplitude = 0.05
seed = {seed}
max_mode = 1

[integrator]
t_max = 0.1
checkpoint_every = 10

[norms]
k = 2
"#,
        out.display()
    )
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_manifest(dir: &Path) -> Manifest {
    serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
}

#[test]
fn malformed_config_fails_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let text = balanced_toml(&out, 1).replace("[norms]", "[norms]\nunknown_key = 3");
    let cfg = write(tmp.path(), "bad.toml", &text);
    let status = aflow().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("unknown_key"));
    assert!(!out.exists());
}

#[test]
fn config_schema_rules() {
    let out = Path::new("/nonexistent/never-written");
    let base = balanced_toml(out, 1);
    assert!(ExperimentConfig::from_toml(&base).unwrap().validate().is_ok());

    let no_seed = base.replace("seed = 1\n", "");
    assert!(matches!(ExperimentConfig::from_toml(&no_seed), Err(CliError::Config(_))));

    let wrong_family = base.replace("family = \"balanced\"", "family = \"generic\"");
    let err = ExperimentConfig::from_toml(&wrong_family).unwrap().validate().unwrap_err();
    assert!(matches!(err, CliError::Config(_)));

    let odd = base.replace("resolution = 8", "resolution = 7");
    assert!(ExperimentConfig::from_toml(&odd).unwrap().validate().is_err());

    let bad_coord = base.replace("\"y1\"", "\"z1\"");
    assert!(ExperimentConfig::from_toml(&bad_coord).unwrap().validate().is_err());

    let big_k = base.replace("k = 2", "k = 3");
    assert!(ExperimentConfig::from_toml(&big_k).unwrap().validate().is_err());

    let no_pert = r#"
n = 3
scenario = "stability_generic"
output_dir = "x"
[grid]
resolution = 8
"#;
    assert!(ExperimentConfig::from_toml(no_pert).unwrap().validate().is_err());
}

#[test]
fn json_config_is_accepted() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("gap");
    let json = serde_json::json!({
        "n": 3,
        "scenario": "spectrum",
        "output_dir": out,
        "grid": {"resolution": 16}
    });
    let p = write(tmp.path(), "c.json", &json.to_string());
    let cfg = ExperimentConfig::load(&p).unwrap();
    let summary = cmd_run(&cfg).unwrap();
    assert!(summary.manifest.status.is_none());
    let gap = summary.manifest.result.unwrap();
    assert!(gap["mu1"].as_f64().unwrap() > 0.0);
}

#[test]
fn identical_configs_give_identical_metrics() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, name) in [(&a, "a.toml"), (&b, "b.toml")] {
        let cfg = write(tmp.path(), name, &balanced_toml(dir, 42));
        let st = aflow().args(["run", "--config"]).arg(&cfg).env("AFLOW_THREADS", "2").output().unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    }
    let ma = std::fs::read(a.join(METRICS_FILE)).unwrap();
    let mb = std::fs::read(b.join(METRICS_FILE)).unwrap();
    assert_eq!(ma, mb);
    let header = String::from_utf8_lossy(&ma).lines().next().unwrap().to_string();
    assert_eq!(header, "t,energy,balanced,astheno,kahler,ricci,margin,dist_ck,dt");
    assert_eq!(
        std::fs::read(a.join(FINAL_CHECKPOINT)).unwrap().len(),
        std::fs::read(b.join(FINAL_CHECKPOINT)).unwrap().len()
    );
    // the output location does not enter the hash
    let (x, y) = (read_manifest(&a), read_manifest(&b));
    assert_eq!(x.initial_state_digest, y.initial_state_digest);
    assert_eq!(x.hash, y.hash);
    assert_ne!(x.config.output_dir, y.config.output_dir);
    assert_eq!(x.status, Some(RunStatus::TMax));
    assert!(a.join("checkpoints").read_dir().unwrap().count() > 0);
}

#[test]
fn manifest_hash_tracks_seed() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let h1 = cmd_run(&ExperimentConfig::from_toml(&balanced_toml(&out, 1)).unwrap())
        .unwrap()
        .manifest;
    let h2 = cmd_run(&ExperimentConfig::from_toml(&balanced_toml(&out, 2)).unwrap())
        .unwrap()
        .manifest;
    assert_ne!(h1.hash, h2.hash);
    assert_ne!(h1.initial_state_digest, h2.initial_state_digest);
    assert_eq!(h1.rng, "rand_chacha 0.3 ChaCha8Rng");
    assert_eq!(h1.hash.len(), 64);
}

#[test]
fn stationary_scenario_converges_immediately() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("s");
    let text = format!(
        "n = 3\nscenario = \"stationary\"\noutput_dir = \"{}\"\n[grid]\nresolution = 16\n",
        out.display()
    );
    let summary = cmd_run(&ExperimentConfig::from_toml(&text).unwrap()).unwrap();
    assert_eq!(summary.manifest.status, Some(RunStatus::Converged));
    let mut rdr = csv_rows(&out.join(METRICS_FILE));
    assert!(!rdr.is_empty());
    assert!(rdr.drain(..).all(|row| row[1] < 1e-14));
    let report = cmd_diagnose(&out.join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(report.balanced, 0.0);
    assert_eq!(report.kahler, 0.0);
    assert_eq!(report.ricci, 0.0);
    assert_eq!(report.dist_ck, 0.0);
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn sample_checkpoint() -> (Checkpoint, FlowState) {
    let grid = TorusGrid::new(3, 8, &[0, 1]).unwrap();
    let spec = aflow_core::flow::PerturbationSpec {
        family: aflow_core::flow::Family::Generic,
        amplitude: 0.1,
        seed: 3,
        max_mode: 1,
    };
    let mut state = aflow_core::flow::make_initial_data(&grid, &spec, Formulation::Anomaly).unwrap();
    state.t = 0.123456789;
    let metric = metric_from_density(&state).unwrap();
    (Checkpoint::from_state(&state, &metric, "abc", 17, 2), state)
}

#[test]
fn checkpoint_roundtrip_is_bit_identical() {
    let tmp = TempDir::new().unwrap();
    let (ckpt, state) = sample_checkpoint();
    let path = tmp.path().join("c.ckpt");
    ckpt.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    assert_eq!(loaded.to_bytes(), bytes);
    let back = loaded.state().unwrap();
    assert_eq!(back, state);

    let from_disk = cmd_diagnose(&path).unwrap();
    let in_memory = defect_report(&state, 2).unwrap();
    assert_eq!(from_disk, in_memory);
}

#[test]
fn checkpoint_layout_matches_documentation() {
    let (ckpt, state) = sample_checkpoint();
    let bytes = ckpt.to_bytes();
    assert_eq!(&bytes[..8], b"AFLOWCKP");
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), FORMAT_VERSION);
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
    assert_eq!(header["arrays"][0]["name"], "density");
    assert_eq!(header["arrays"][1]["name"], "metric");
    // first complex entry of the density array: point 0, entry (0, 0)
    let p = 16 + hlen;
    let re = f64::from_le_bytes(bytes[p..p + 8].try_into().unwrap());
    let im = f64::from_le_bytes(bytes[p + 8..p + 16].try_into().unwrap());
    assert_eq!((re, im), (state.density.data()[0].re, state.density.data()[0].im));
    // entry (0, 1) follows
    let q = p + 16;
    let re1 = f64::from_le_bytes(bytes[q..q + 8].try_into().unwrap());
    assert_eq!(re1, state.density.at(0)[(0, 1)].re);
    let n = state.grid().len() * 9;
    assert_eq!(bytes.len(), 16 + hlen + 2 * n * 16 + 32);
}

#[test]
fn corrupted_and_foreign_checkpoints_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let (ckpt, _) = sample_checkpoint();
    let good = ckpt.to_bytes();

    let mut flipped = good.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(CliError::Format(_))));

    let mut truncated = good.clone();
    truncated.truncate(good.len() - 100);
    assert!(matches!(Checkpoint::from_bytes(&truncated), Err(CliError::Format(_))));

    let mut future = good.clone();
    future[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        Checkpoint::from_bytes(&future),
        Err(CliError::Version { found, .. }) if found == FORMAT_VERSION + 1
    ));

    assert!(matches!(Checkpoint::from_bytes(b"not a checkpoint at all, clearly"), Err(CliError::Format(_))));

    let path = tmp.path().join("bad.ckpt");
    std::fs::write(&path, &flipped).unwrap();
    let out = aflow().args(["diagnose", "--checkpoint"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn flat_checkpoint_has_zero_defects() {
    let tmp = TempDir::new().unwrap();
    let grid = TorusGrid::new(3, 8, &[0, 1]).unwrap();
    let state = FlowState::flat(&grid, Formulation::Rescaled);
    let metric = metric_from_density(&state).unwrap();
    let path = tmp.path().join("flat.ckpt");
    Checkpoint::from_state(&state, &metric, "h", 0, 2).save(&path).unwrap();
    let out = aflow().args(["diagnose", "--checkpoint"]).arg(&path).output().unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["balanced", "astheno", "kahler", "ricci", "dist_ck"] {
        assert_eq!(report[key].as_f64().unwrap(), 0.0, "{key}");
    }
    assert_eq!(report["positivity_margin"].as_f64().unwrap(), 1.0);
}

fn spectrum_config(resolution: usize, active: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!(
        "n = 3\nscenario = \"spectrum\"\noutput_dir = \"unused\"\n[grid]\nresolution = {resolution}\nactive_coords = [{active}]\n"
    ))
    .unwrap()
}

#[test]
fn spectrum_is_resolution_independent_and_respects_active_coords() {
    let fine = cmd_spectrum(&spectrum_config(32, "\"x1\", \"y1\"")).unwrap();
    let coarse = cmd_spectrum(&spectrum_config(16, "\"x1\", \"y1\"")).unwrap();
    assert!(fine.mu1 > 0.0);
    assert!((fine.mu1 - coarse.mu1).abs() < 1e-12);
    let single = cmd_spectrum(&spectrum_config(16, "\"x2\"")).unwrap();
    assert_eq!(single.coords, vec!["x2".to_string()]);
    assert_eq!(single.mode.len(), 1);

    let tmp = TempDir::new().unwrap();
    let p = write(
        tmp.path(),
        "s.toml",
        "n = 3\nscenario = \"spectrum\"\noutput_dir = \"unused\"\n[grid]\nresolution = 16\n",
    );
    let out = aflow().args(["spectrum", "--config"]).arg(&p).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["mu1"].as_f64().unwrap() - fine.mu1).abs() < 1e-12);
    assert!(!tmp.path().join("unused").exists());
}

#[test]
fn verify_command_writes_report() {
    let tmp = TempDir::new().unwrap();
    let out = aflow()
        .args(["verify", "--suite", "algebra", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let file: VerifyFile = serde_json::from_slice(&std::fs::read(tmp.path().join(VERIFY_FILE)).unwrap()).unwrap();
    assert!(file.passed);
    assert_eq!(file.suites.len(), 1);
    assert!(file.suites[0].checks.iter().all(|c| c.passed && c.measured.is_finite()));

    let bad = aflow().args(["verify", "--suite", "nope"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn invalid_thread_count_is_rejected() {
    let out = aflow()
        .args(["verify", "--suite", "algebra", "--out", "/nonexistent/x"])
        .env("AFLOW_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("AFLOW_THREADS"));
}
