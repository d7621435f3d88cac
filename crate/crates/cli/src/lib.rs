//! Scenario-driven pipeline over the `specdeform` core.

pub mod plot;
pub mod run;
pub mod scenario;
pub mod stages;

use std::path::Path;
use std::time::Instant;

use run::{RunDir, StageRecord};
use scenario::Scenario;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] specdeform::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing stage output: {0}")]
    MissingStage(String),
}

pub const STAGES: [&str; 11] = [
    "certify",
    "assemble",
    "spectrum",
    "sweep-theta",
    "sweep-xi",
    "thresholds",
    "mourre",
    "feshbach",
    "embedded",
    "commlab",
    "plot-data",
];

/// Whether `all` runs `stage` for this scenario.
pub fn applicable(stage: &str, s: &Scenario) -> bool {
    match stage {
        "embedded" => s.is_embedded(),
        "sweep-xi" => {
            s.deformation.xi_sweep.is_some() && (s.is_embedded() || s.rectangle.center.is_some())
        }
        "sweep-theta" | "mourre" | "feshbach" => s.rectangle_center().is_ok(),
        _ => true,
    }
}

/// Runs one stage into `out` and merges it into the manifest. Returns whether every check passed.
pub fn run_stage(
    stage: &str,
    s: &Scenario,
    hash: &str,
    out: &Path,
) -> Result<StageRecord, CliError> {
    let mut dir = RunDir::create(out)?;
    let start = Instant::now();
    let res = match stage {
        "certify" => stages::certify(s, &mut dir),
        "assemble" => stages::assemble(s, &mut dir),
        "spectrum" => stages::spectrum(s, &mut dir),
        "sweep-theta" => stages::sweep_theta(s, &mut dir),
        "sweep-xi" => stages::sweep_xi(s, &mut dir),
        "thresholds" => stages::thresholds(s, &mut dir),
        "mourre" => stages::mourre(s, &mut dir),
        "feshbach" => stages::feshbach(s, &mut dir),
        "embedded" => stages::embedded(s, &mut dir),
        "commlab" => stages::commlab_batch(s, &mut dir),
        "plot-data" => plot::plot_data(&mut dir),
        other => return Err(CliError::Config(format!("unknown stage `{other}`"))),
    }?;
    let passed = res.checks.iter().all(|c| c.passed);
    let record = StageRecord {
        status: if passed { "pass" } else { "fail" }.into(),
        seconds: start.elapsed().as_secs_f64(),
        checks: res.checks,
        files: dir.take_files(),
    };
    dir.record(&s.name, hash, stage, record.clone(), &res.constants)?;
    Ok(record)
}
