use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use specdeform_cli::scenario::{self, Scenario};
use specdeform_cli::{applicable, run, run_stage, CliError, STAGES};

#[derive(Parser)]
#[command(name = "specdeform", version, about = "Spectral deformation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// `dotted.key=value`, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    Certify(Common),
    Assemble(Common),
    Spectrum(Common),
    SweepTheta(Common),
    SweepXi(Common),
    Thresholds(Common),
    Mourre(Common),
    Feshbach(Common),
    Embedded(Common),
    Commlab(Common),
    PlotData(Common),
    /// Every stage in order.
    All(Common),
    /// Re-hash the files listed in a run manifest.
    Verify {
        #[arg(long)]
        out: PathBuf,
    },
}

fn out_dir(c: &Common, s: &Scenario) -> PathBuf {
    if let Some(o) = &c.out {
        return o.clone();
    }
    if let Some(o) = &s.output {
        return o.clone();
    }
    match std::env::var_os("SPECDEFORM_OUT") {
        Some(root) => PathBuf::from(root).join(&s.name),
        None => PathBuf::from("runs").join(&s.name),
    }
}

fn execute(stages: &[&str], c: &Common) -> Result<bool, CliError> {
    let (s, hash) = scenario::load(&c.scenario, &c.overrides)?;
    let out = out_dir(c, &s);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(c.workers)
        .build()
        .map_err(|e| CliError::Config(format!("key `workers`: {e}")))?;
    pool.install(|| {
        let mut ok = true;
        for stage in stages {
            if stages.len() > 1 && !applicable(stage, &s) {
                println!("{stage}: skipped");
                continue;
            }
            let rec = run_stage(stage, &s, &hash, &out)?;
            for ch in &rec.checks {
                println!(
                    "{stage}: {} {} (value {:.6e}, limit {:.6e})",
                    ch.name,
                    if ch.passed { "PASS" } else { "FAIL" },
                    ch.value,
                    ch.limit
                );
            }
            println!(
                "{stage}: {} in {:.2}s -> {}",
                rec.status,
                rec.seconds,
                out.display()
            );
            ok &= rec.status == "pass";
        }
        Ok(ok)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Verify { out } => run::verify(out).map(|bad| {
            for b in &bad {
                println!("hash mismatch: {b}");
            }
            bad.is_empty()
        }),
        cmd => {
            let (stage, c) = match cmd {
                Command::Certify(c) => ("certify", c),
                Command::Assemble(c) => ("assemble", c),
                Command::Spectrum(c) => ("spectrum", c),
                Command::SweepTheta(c) => ("sweep-theta", c),
                Command::SweepXi(c) => ("sweep-xi", c),
                Command::Thresholds(c) => ("thresholds", c),
                Command::Mourre(c) => ("mourre", c),
                Command::Feshbach(c) => ("feshbach", c),
                Command::Embedded(c) => ("embedded", c),
                Command::Commlab(c) => ("commlab", c),
                Command::PlotData(c) => ("plot-data", c),
                Command::All(c) => ("all", c),
                Command::Verify { .. } => unreachable!(),
            };
            if stage == "all" {
                execute(&STAGES, c)
            } else {
                execute(&[stage], c)
            }
        }
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
