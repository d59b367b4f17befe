//! Configuration-driven runner for the mflab checks, with hashed artifact trees.

pub mod artifacts;
pub mod config;
pub mod suites;

use anyhow::{Context, Result};
use mflab::InequalityReport;
use rayon::prelude::*;

use artifacts::{num, write_tree, Artifact, Manifest, Provenance, Table};
use config::{ConfigError, RunConfig};

pub const WORKERS_ENV: &str = "MFLAB_WORKERS";

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass = 0,
    CheckFailure = 1,
    ConfigError = 2,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub status: Status,
    pub manifest: Manifest,
    pub reports: Vec<(String, InequalityReport)>,
    /// Suites that stopped with an error, with the message.
    pub failures: Vec<(String, String)>,
}

/// Validates `cfg`, runs its suites on a pool of `workers` threads, and writes the artifact tree
/// to `cfg.out`. Validation problems come back as a [`ConfigError`] inside the error.
pub fn run(cfg: &RunConfig, workers: Option<usize>) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(ConfigError {
                path: "workers".into(),
                message: "must be positive".into(),
            }
            .into());
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("building worker pool")?;
    let (artifacts, reports, failures, suites) = pool.install(|| execute(cfg));
    let config_text = cfg.to_toml();
    let manifest = Manifest::build(cfg.seed, &config_text, &suites, &artifacts);
    write_tree(&cfg.out, &artifacts, &manifest)?;
    let status = if failures.is_empty() && reports.iter().all(|(_, r)| r.pass) {
        Status::Pass
    } else {
        Status::CheckFailure
    };
    Ok(RunOutcome {
        status,
        manifest,
        reports,
        failures,
    })
}

type Executed = (Vec<Artifact>, Vec<(String, InequalityReport)>, Vec<(String, String)>, Vec<&'static str>);

fn execute(cfg: &RunConfig) -> Executed {
    let suites = cfg.resolved_suites();
    let results: Vec<_> = suites
        .par_iter()
        .map(|&name| (name, suites::run_suite(name, cfg)))
        .collect();

    let mut artifacts = Vec::new();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let mut summary = Table::new(&["suite", "id", "check", "pass", "worst_residual", "tolerance", "evaluations", "vacuous"]);
    for (name, result) in results {
        match result {
            Ok(out) => {
                for (id, r) in &out.reports {
                    summary.push(vec![
                        name.to_string(),
                        id.clone(),
                        r.name.clone(),
                        r.pass.to_string(),
                        num(r.worst_residual),
                        num(r.tolerance),
                        r.evaluations.to_string(),
                        r.vacuous.to_string(),
                    ]);
                }
                artifacts.extend(out.artifacts);
                reports.extend(out.reports);
            }
            Err(e) => failures.push((name.to_string(), format!("{e:#}"))),
        }
    }
    if !summary.is_empty() {
        artifacts.push(Artifact {
            path: "summary.csv".into(),
            bytes: summary.to_csv(),
            provenance: Provenance::new("cli", "run").with("suites", suites.join(",")),
        });
    }
    if !failures.is_empty() {
        let record: Vec<_> = failures
            .iter()
            .map(|(s, e)| serde_json::json!({ "suite": s, "error": e }))
            .collect();
        artifacts.push(Artifact {
            path: "failures.json".into(),
            bytes: (serde_json::to_string_pretty(&record).expect("json") + "\n").into_bytes(),
            provenance: Provenance::new("cli", "run").with("failed", failures.len()),
        });
    }
    (artifacts, reports, failures, suites)
}

/// Maps an error from [`run`] to its exit status.
pub fn error_status(e: &anyhow::Error) -> Status {
    if e.downcast_ref::<ConfigError>().is_some() {
        Status::ConfigError
    } else {
        Status::CheckFailure
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_suite_writes_only_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            suite: vec![],
            out: dir.path().to_path_buf(),
            ..Default::default()
        };
        let outcome = run(&cfg, Some(1)).unwrap();
        assert_eq!(outcome.status, Status::Pass);
        assert!(outcome.manifest.entries.is_empty());
        let text = std::fs::read_to_string(dir.path().join(artifacts::MANIFEST_NAME)).unwrap();
        assert!(text.contains("# files 0"));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn invalid_config_maps_to_status_two() {
        let mut cfg = RunConfig::default();
        cfg.saw.order = 0;
        let e = run(&cfg, None).unwrap_err();
        assert_eq!(error_status(&e), Status::ConfigError);
        assert_eq!(e.downcast_ref::<ConfigError>().unwrap().path, "saw.order");
    }

    #[test]
    fn small_suite_is_reproducible_across_worker_counts() {
        let run_in = |workers| {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = RunConfig {
                suite: vec!["perc".into(), "ising".into()],
                out: dir.path().to_path_buf(),
                ..Default::default()
            };
            cfg.perc.trials = 2000;
            cfg.perc.grid_points = 4;
            cfg.ising.grid_points = 4;
            let outcome = run(&cfg, Some(workers)).unwrap();
            assert_eq!(outcome.status, Status::Pass, "{:?}", outcome.failures);
            outcome.manifest.render()
        };
        assert_eq!(run_in(1), run_in(3));
    }
}
