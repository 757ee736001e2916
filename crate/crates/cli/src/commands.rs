use std::path::{Path, PathBuf};

use aflow_core::diagnostics::{defect_report, DefectReport, RunRow};
use aflow_core::flow::{
    make_initial_data, run, FlowState, MetricState, Observer, RunStatus, CONVENTIONS_ID, RNG_NAME,
};
use aflow_core::linearization::{spectral_gap, GapReport};
use aflow_core::verify::{run_suite, twin_run_discrepancy, Suite, VerifyReport};
use log::info;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, Scenario};
use crate::output::{content_hash, state_digest, write_json, Manifest, MetricsWriter};
use crate::{CliError, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VERIFY_FILE: &str = "verify_report.json";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Twin-run tolerance of the `lemma31_equivalence` scenario.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyFile {
    pub passed: bool,
    pub suites: Vec<VerifyReport>,
}

struct RunObserver {
    metrics: MetricsWriter,
    checkpoints: PathBuf,
    hash: String,
    norms_k: usize,
}

impl Observer for RunObserver {
    fn sample(&mut self, row: &RunRow, _state: &FlowState) -> aflow_core::Result<()> {
        self.metrics
            .push(row)
            .map_err(|e| aflow_core::FlowError::Invalid(e.to_string()))
    }

    fn checkpoint(&mut self, state: &FlowState, metric: &MetricState, step: usize) -> aflow_core::Result<()> {
        let path = self.checkpoints.join(format!("step_{step:08}.ckpt"));
        Checkpoint::from_state(state, metric, &self.hash, step, self.norms_k)
            .save(&path)
            .map_err(|e| aflow_core::FlowError::Invalid(e.to_string()))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn base_manifest(config: &ExperimentConfig, initial: &FlowState) -> Manifest {
    let digest = state_digest(initial);
    Manifest {
        tool: "aflow".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        conventions: CONVENTIONS_ID.into(),
        rng: RNG_NAME.into(),
        hash: content_hash(config, CONVENTIONS_ID, &digest),
        initial_state_digest: digest,
        status: None,
        abort_reason: None,
        decay_fit: None,
        steps: None,
        final_t: None,
        final_defects: None,
        result: None,
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| CliError::Serialize(e.to_string()))
}

/// Runs one configured experiment and writes its outputs under
/// `output_dir`. Nothing is written when the configuration is invalid.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let grid = config.grid()?;
    let formulation = config.integrator.formulation;
    let initial = match config.perturbation_spec().filter(|_| config.scenario.family().is_some()) {
        Some(spec) => make_initial_data(&grid, &spec, formulation)?,
        None => FlowState::flat(&grid, formulation),
    };
    let out = config.output_dir.clone();
    create_dir(&out)?;
    let mut manifest = base_manifest(config, &initial);
    info!("scenario {:?}, hash {}", config.scenario, manifest.hash);

    let mut failure = None;
    match config.scenario {
        Scenario::Spectrum => {
            manifest.result = Some(to_value(&spectral_gap(&grid)?)?);
        }
        Scenario::VerifyLemmas => {
            let file = verify_suites(&Suite::ALL)?;
            write_json(&out.join(VERIFY_FILE), &file)?;
            if !file.passed {
                failure = Some(CliError::VerifyFailed(failed_names(&file)));
            }
            manifest.result = Some(to_value(&file)?);
        }
        Scenario::Lemma31Equivalence => {
            let spec = config.perturbation_spec().expect("validated");
            let d = twin_run_discrepancy(&grid, &spec, config.integrator.t_max, config.integrator.cfl)?;
            let passed = d < EQUIVALENCE_TOLERANCE;
            manifest.status = Some(RunStatus::TMax);
            manifest.final_t = Some(config.integrator.t_max);
            manifest.result = Some(serde_json::json!({
                "sup_relative_discrepancy": d,
                "tolerance": EQUIVALENCE_TOLERANCE,
                "passed": passed,
            }));
            if !passed {
                failure = Some(CliError::VerifyFailed(format!("twin-run discrepancy {d:e}")));
            }
        }
        Scenario::Stationary | Scenario::Theorem1 | Scenario::StabilityBalanced | Scenario::StabilityGeneric => {
            let ckpt_dir = out.join("checkpoints");
            if config.integrator.checkpoint_every > 0 {
                create_dir(&ckpt_dir)?;
            }
            let mut obs = RunObserver {
                metrics: MetricsWriter::create(&out.join(METRICS_FILE))?,
                checkpoints: ckpt_dir,
                hash: manifest.hash.clone(),
                norms_k: config.norms.k,
            };
            let outcome = run(&config.flow_config(), &initial, &mut obs)?;
            obs.metrics.finish()?;
            let metric = aflow_core::flow::metric_from_density(&outcome.state)?;
            Checkpoint::from_state(&outcome.state, &metric, &manifest.hash, outcome.steps, config.norms.k)
                .save(&out.join(FINAL_CHECKPOINT))?;
            manifest.status = Some(outcome.status);
            manifest.abort_reason = outcome.abort_reason.clone();
            manifest.decay_fit = outcome.record.decay_fit;
            manifest.steps = Some(outcome.steps);
            manifest.final_t = Some(outcome.state.t);
            manifest.final_defects = outcome.record.rows.last().map(|r| r.defects);
            if outcome.status == RunStatus::Aborted {
                failure = Some(CliError::Aborted(outcome.abort_reason.unwrap_or_default()));
            }
        }
    }
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(RunSummary {
            output_dir: out,
            manifest,
        }),
    }
}

fn failed_names(file: &VerifyFile) -> String {
    file.suites
        .iter()
        .flat_map(|r| {
            r.checks
                .iter()
                .filter(|c| !c.passed)
                .map(move |c| format!("{}/{}", r.suite.name(), c.name))
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn verify_suites(suites: &[Suite]) -> Result<VerifyFile> {
    let mut reports = Vec::with_capacity(suites.len());
    for &s in suites {
        info!("running suite {}", s.name());
        reports.push(run_suite(s)?);
    }
    Ok(VerifyFile {
        passed: reports.iter().all(|r| r.passed),
        suites: reports,
    })
}

/// Runs `suite` (`"all"` for every suite) and writes `verify_report.json`
/// into `out_dir`. Fails after writing when any check fails.
pub fn cmd_verify(suite: &str, out_dir: &Path) -> Result<VerifyFile> {
    let suites: Vec<Suite> = if suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![Suite::parse(suite).ok_or_else(|| {
            let names: Vec<_> = Suite::ALL.iter().map(|s| s.name()).collect();
            CliError::Config(format!("unknown suite {suite:?}; expected all or one of {}", names.join(", ")))
        })?]
    };
    let file = verify_suites(&suites)?;
    create_dir(out_dir)?;
    write_json(&out_dir.join(VERIFY_FILE), &file)?;
    if !file.passed {
        return Err(CliError::VerifyFailed(failed_names(&file)));
    }
    Ok(file)
}

pub fn cmd_spectrum(config: &ExperimentConfig) -> Result<GapReport> {
    config.validate()?;
    Ok(spectral_gap(&config.grid()?)?)
}

pub fn cmd_diagnose(path: &Path) -> Result<DefectReport> {
    let ckpt = Checkpoint::load(path)?;
    Ok(defect_report(&ckpt.state()?, ckpt.header.norms_k)?)
}
