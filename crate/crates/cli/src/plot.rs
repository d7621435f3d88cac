use std::io::Write;
use std::path::{Path, PathBuf};

use crate::run::RunDir;
use crate::stages::StageOutput;
use crate::CliError;

fn rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::MissingStage(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    Ok((
        header,
        lines
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect(),
    ))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize, CliError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::MissingStage(format!("{} has no `{name}` column", path.display())))
}

/// Copies the named columns of `src` into `dst`.
fn project(run: &mut RunDir, src: &Path, dst: &str, cols: &[&str]) -> Result<(), CliError> {
    let (header, body) = rows(src)?;
    let idx = cols
        .iter()
        .map(|c| column(&header, c, src))
        .collect::<Result<Vec<_>, _>>()?;
    run.emit(dst, |p| {
        let mut f = std::io::BufWriter::new(std::fs::File::create(p)?);
        writeln!(f, "{}", cols.join(","))?;
        for r in &body {
            let picked: Vec<&str> = idx.iter().map(|&i| r[i].as_str()).collect();
            writeln!(f, "{}", picked.join(","))?;
        }
        f.flush()?;
        Ok(())
    })?;
    Ok(())
}

fn spectra_files(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    let dir = root.join("spectra");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    v.sort();
    Ok(v)
}

/// Flattens earlier stage outputs into plot-ready CSVs under `plots/`.
pub fn plot_data(run: &mut RunDir) -> Result<StageOutput, CliError> {
    let root = run.root.clone();
    let mut written = 0usize;
    for path in spectra_files(&root)? {
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        project(
            run,
            &path,
            &format!("plots/scatter_{stem}.csv"),
            &["re", "im", "class"],
        )?;
        written += 1;
    }
    let bands = root.join("bands.csv");
    if bands.exists() {
        let (header, _) = rows(&bands)?;
        let xi: Vec<&str> = header
            .iter()
            .filter(|h| h.starts_with("xi"))
            .map(String::as_str)
            .collect();
        let mut cols = xi.clone();
        cols.extend(["branch_id", "re_lambda", "im_lambda"]);
        project(run, &bands, "plots/bands.csv", &cols)?;
        written += 1;
    }
    let thresholds = root.join("thresholds.csv");
    if thresholds.exists() {
        let (header, _) = rows(&thresholds)?;
        let mut cols: Vec<&str> = header
            .iter()
            .filter(|h| h.starts_with("xi"))
            .map(String::as_str)
            .collect();
        cols.push("critical_value");
        project(run, &thresholds, "plots/thresholds.csv", &cols)?;
        written += 1;
    }
    if written == 0 {
        return Err(CliError::MissingStage(format!(
            "no spectra, bands or thresholds under {}",
            root.display()
        )));
    }
    Ok(StageOutput::default())
}
