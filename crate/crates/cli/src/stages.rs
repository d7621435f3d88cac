use std::io::Write;

use num_complex::Complex64 as C64;
use serde_json::json;
use specdeform::commlab;
use specdeform::dispersion::{DispersionPair, FieldBounds};
use specdeform::flow::FlowOptions;
use specdeform::grid::MomentumGrid;
use specdeform::io::fmt17;
use specdeform::linalg;
use specdeform::mourre::{
    assemble_commutator, extract_constants, flow_difference, mourre_inequality_check, virial_check,
    MourreReport,
};
use specdeform::operator::{
    adjoint_identity, admissible_radius, assemble_h, deformed_operator, relative_constant,
    FiberOperator,
};
use specdeform::potential::{EmbeddedPotential, FourierKernel};
use specdeform::spectra::{
    classify, eigendecompose, rectangle_scan, riesz_projection, sector_check, theta_independence,
    ClassifyOptions, FeshbachReduction, Rectangle, SpectrumReport,
};
use specdeform::thresholds::{
    band_sweep, branch_regularity, threshold_set, write_thresholds_csv, BandOptions, BandPoint,
};

use crate::run::{Check, Constants, RunDir};
use crate::scenario::Scenario;
use crate::CliError;

#[derive(Default)]
pub struct StageOutput {
    pub checks: Vec<Check>,
    pub constants: Constants,
}

impl StageOutput {
    fn check(&mut self, name: &str, value: f64, limit: f64, passed: bool) {
        self.checks.push(Check {
            name: name.into(),
            value,
            limit,
            passed,
        });
    }

    /// `value ≤ limit`
    fn at_most(&mut self, name: &str, value: f64, limit: f64) {
        self.check(name, value, limit, value <= limit);
    }

    /// `value ≥ limit`
    fn at_least(&mut self, name: &str, value: f64, limit: f64) {
        self.check(name, value, limit, value >= limit);
    }
}

struct Setup {
    grid: MomentumGrid,
    pair: DispersionPair,
    bounds: FieldBounds,
    kernel: FourierKernel,
    embedded: Option<EmbeddedPotential>,
}

fn setup(s: &Scenario) -> Result<Setup, CliError> {
    let pair = s.pair()?;
    let (kernel, embedded) = s.kernel()?;
    Ok(Setup {
        grid: s.grid()?,
        bounds: s.bounds(&pair)?,
        pair,
        kernel,
        embedded,
    })
}

fn flow_opts(s: &Scenario) -> FlowOptions {
    FlowOptions {
        tol: s.tolerances.flow_tol,
        ..FlowOptions::default()
    }
}

fn operator(s: &Scenario, st: &Setup, xi: &[f64], theta: C64) -> Result<FiberOperator, CliError> {
    let op = if theta == C64::new(0.0, 0.0) {
        assemble_h(&st.grid, &st.pair, &st.kernel, xi, s.tolerances.tail_tol)?
    } else {
        deformed_operator(
            &st.grid,
            &st.pair,
            &st.kernel,
            xi,
            theta,
            &st.bounds,
            &flow_opts(s),
            s.tolerances.tail_tol,
        )?
    };
    Ok(op)
}

fn classified(
    s: &Scenario,
    op: &FiberOperator,
    match_tol: f64,
) -> Result<SpectrumReport, CliError> {
    let mut rep = eigendecompose(op, s.tolerances.eig_tol)?;
    let mut curve = op.diagonal.clone();
    curve.sort_by(|a, b| a.re.total_cmp(&b.re));
    classify(&mut rep, &curve, None, &ClassifyOptions::new(match_tol));
    Ok(rep)
}

/// The configured rectangle, with missing sides taken from the Mourre constants at its center.
fn rectangle(
    s: &Scenario,
    st: &Setup,
    xi: &[f64],
) -> Result<(Rectangle, Option<MourreReport>), CliError> {
    let center = s.rectangle_center()?;
    if let (Some(hw), Some(ds)) = (s.rectangle.half_width, s.rectangle.depth_slope) {
        return Ok((Rectangle::new(center, hw, ds)?, None));
    }
    let t = threshold_set(&st.pair, xi, &st.grid)?;
    let known: Vec<f64> = s.target().into_iter().collect();
    let m = extract_constants(&st.grid, &st.pair, &st.kernel, center, xi, &t, &known)?;
    let rect = Rectangle::new(
        center,
        s.rectangle.half_width.unwrap_or(m.kappa),
        s.rectangle.depth_slope.unwrap_or(0.5 * m.e),
    )?;
    Ok((rect, Some(m)))
}

fn theta_tag(j: usize) -> String {
    format!("theta{j}")
}

pub fn certify(s: &Scenario, run: &mut RunDir) -> Result<StageOutput, CliError> {
    let mut out = StageOutput::default();
    let st = setup(s)?;
    let mut growth = Vec::new();
    for (name, spec) in [("first", &st.pair.first), ("second", &st.pair.second)] {
        let g = spec.check_growth(s.grid.cutoff, 0.05)?;
        out.at_most(
            &format!("growth violations ({name})"),
            g.violations as f64,
            0.0,
        );
        growth.push(g);
    }
    let radius = admissible_radius(&st.bounds, &st.kernel);
    let max_theta = s.thetas().iter().map(|t| t.norm()).fold(0.0, f64::max);
    out.check(
        "max |θ| below admissible radius",
        max_theta,
        radius,
        max_theta < radius,
    );
    let rc = relative_constant(
        &st.grid,
        &st.pair,
        &st.kernel,
        &s.first_xi(),
        &st.bounds,
        s.deformation.relative_samples,
        &flow_opts(s),
        s.tolerances.tail_tol,
    )?;
    out.constants = Constants {
        c_omega: Some(st.bounds.c_omega),
        c_omega_prime: Some(st.bounds.c_omega_prime),
        c_v: Some(st.kernel.c_v),
        radius: Some(radius),
        relative_c: Some(rc.c),
        r_prime: None,
    };
    run.emit_json(
        "certify.json",
        &json!({
            "bounds": st.bounds,
            "growth": growth,
            "c_v": st.kernel.c_v,
            "raw_c_v": st.kernel.raw_c_v,
            "d_prime": st.kernel.d_prime,
            "a_prime": st.kernel.a_prime,
            "convolution_bound": st.kernel.convolution_bound(),
            "admissible_radius": radius,
            "relative_constant": rc,
        }),
    )?;
    Ok(out)
}

pub fn assemble(s: &Scenario, run: &mut RunDir) -> Result<StageOutput, CliError> {
    let mut out = StageOutput::default();
    let st = setup(s)?;
    let mut worst: f64 = 0.0;
    for (i, xi) in s.xi_points().iter().enumerate() {
        for (j, &theta) in s.thetas().iter().enumerate() {
            let op = operator(s, &st, xi, theta)?;
            let conj = operator(s, &st, xi, theta.conj())?;
            let rep = adjoint_identity(&op, &conj)?;
            worst = worst.max(rep.defect / rep.scale.max(f64::MIN_POSITIVE));
            let stem = format!("operators/xi{i}_{}", theta_tag(j));
            let bin = run.root.join(format!("{stem}.bin"));
            let meta = run.root.join(format!("{stem}.json"));
            std::fs::create_dir_all(run.root.join("operators"))?;
            op.write(&bin, &meta)?;
            run.emit(&format!("{stem}.bin"), |_| Ok(()))?;
            run.emit(&format!("{stem}.json"), |_| Ok(()))?;
        }
    }
    out.at_most("adjoint identity defect / ‖H‖", worst, 1e-13);
    Ok(out)
}

pub fn spectrum(s: &Scenario, run: &mut RunDir) -> Result<StageOutput, CliError> {
    let mut out = StageOutput::default();
    let st = setup(s)?;
    let c_const = run.read_manifest()?.and_then(|m| m.constants.relative_c);
    let rect = match s.rectangle_center() {
        Ok(_) => Some(rectangle(s, &st, &s.first_xi())?.0),
        Err(_) => None,
    };
    let match_tol = s.match_tol(rect.map_or(0.0, |r| r.center));
    let mut flagged = 0usize;
    let mut violations = 0usize;
    let mut summaries = Vec::new();
    for (i, xi) in s.xi_points().iter().enumerate() {
        for (j, &theta) in s.thetas().iter().enumerate() {
            let op = operator(s, &st, xi, theta)?;
            let mut rep = classified(s, &op, match_tol)?;
            if let Some(r) = &rect {
                rep.rectangle_stats = Some(rectangle_scan(&rep, r, &[], match_tol));
            }
            flagged += rep.flagged_count();
            if let Some(c) = c_const {
                violations += sector_check(&rep, c, theta, 0.0).violations.len();
            }
            run.emit(&format!("spectra/xi{i}_{}.csv", theta_tag(j)), |p| {
                Ok(rep.write_csv(p)?)
            })?;
            summaries.push(rep.summary());
        }
    }
    out.at_most("flagged eigenpairs", flagged as f64, 0.0);
    if let Some(c) = c_const {
        out.check("sector violations", violations as f64, 0.0, violations == 0);
        summaries.push(json!({ "sector_constant": c }));
    }
    run.emit_json("spectra/summary.json", &summaries)?;
    Ok(out)
}

pub fn sweep_theta(s: &Scenario, run: &mut RunDir) -> Result<StageOutput, CliError> {
    let mut out = StageOutput::default();
    let st = setup(s)?;
    let xi = s.first_xi();
    let (rect, _) = rectangle(s, &st, &xi)?;
    let match_tol = s.match_tol(rect.center);
    let mut reports = Vec::new();
    for (j, &theta) in s.thetas().iter().enumerate() {
        let op = operator(s, &st, &xi, theta)?;
        let mut rep = classified(s, &op, match_tol)?;
        rep.rectangle_stats = Some(rectangle_scan(&rep, &rect, &[], match_tol));
        run.emit(&format!("spectra/{}.csv", theta_tag(j)), |p| {
            Ok(rep.write_csv(p)?)
        })?;
        reports.push(rep);
    }
    let table = theta_independence(&reports, &rect, 1e3 * match_tol)?;
    out.at_most(
        "isolated eigenvalue drift",
        table.max_isolated_drift,
        s.tolerances.drift_tol,
    );
    run.emit_json(
        "theta_drift.json",
        &json!({
            "rectangle": rect,
            "thetas": s.deformation.theta,
            "drift": table,
            "summaries": reports.iter().map(SpectrumReport::summary).collect::<Vec<_>>(),
        }),
    )?;
    Ok(out)
}

pub fn sweep_xi(s: &Scenario, run: &mut RunDir) -> Result<StageOutput, CliError> {
    let mut out = StageOutput::default();
    let pair = s.pair()?;
    let grid = s.grid()?;
    let bounds = s.bounds(&pair)?;
    let theta = s.thetas()[0];
    let opts = BandOptions {
        eig_tol: s.tolerances.eig_tol,
        tail_tol: s.tolerances.tail_tol,
        riesz_nodes: s.tolerances.riesz_nodes,
        ..BandOptions::default()
    };
    let embedded = s.is_embedded();
    let base = if embedded { None } else { Some(s.kernel()?.0) };
    let fixed_center = s.rectangle.center;
    let scenario = |xi: &[f64]| -> specdeform::Result<BandPoint> {
        let lift = |e: CliError| specdeform::Error::InvalidInput(e.to_string());
        let (kernel, fiber, center) = if embedded {
            (
                s.kernel_at_xi0(xi[0]).map_err(lift)?,
                vec![0.0; xi.len()],
                xi[0] * xi[0],
            )
        } else {
            let c = fixed_center.ok_or_else(|| {
                lift(CliError::Config(
                    "key `rectangle.center` is required".into(),
                ))
            })?;
            (base.clone().unwrap(), xi.to_vec(), c)
        };
        let rect = match (s.rectangle.half_width, s.rectangle.depth_slope) {
            (Some(hw), Some(ds)) => Rectangle::new(center, hw, ds)?,
            (hw, ds) => {
                let t = threshold_set(&pair, &fiber, &grid)?;
                let m = extract_constants(&grid, &pair, &kernel, center, &fiber, &t, &[center])?;
                Rectangle::new(center, hw.unwrap_or(m.kappa), ds.unwrap_or(0.5 * m.e))?
            }
        };
        Ok(BandPoint {
            pair: pair.clone(),
            kernel,
            bounds: bounds.clone(),
            fiber_xi: fiber,
            rect,
        })
    };
    let band = band_sweep(&grid, &s.sweep_points(), theta, scenario, &opts)?;
    run.emit("bands.csv", |p| Ok(band.write_csv(p)?))?;
    let mut fits = Vec::new();
    for b in &band.branches {
        out.check(
            &format!("branch {} multiplicity constant", b.id),
            b.samples.len() as f64,
            0.0,
            b.multiplicity_constant(),
        );
        if b.samples.len() >= 4 {
            fits.push(branch_regularity(&band, b.id, 2)?);
        }
    }
    if embedded {
        out.check(
            "branch count",
            band.branches.len() as f64,
            1.0,
            band.branches.len() == 1,
        );
        let dev = band
            .branches
            .iter()
            .flat_map(|b| b.samples.iter())
            .map(|x| (x.lambda - x.xi[0] * x.xi[0]).norm())
            .fold(0.0, f64::max);
        out.at_most("max |λ - ξ₀²|", dev, s.tolerances.embedded_eigen_tol);
    }
    run.emit_json(
        "band_fits.json",
        &json!({ "gaps": band.gaps, "fits": fits }),
    )?;
    Ok(out)
}

pub fn thresholds(s: &Scenario, run: &mut RunDir) -> Result<StageOutput, CliError> {
    let mut out = StageOutput::default();
    let pair = s.pair()?;
    let grid = s.grid()?;
    let sets = s
        .sweep_points()
        .iter()
        .map(|xi| threshold_set(&pair, xi, &grid))
        .collect::<specdeform::Result<Vec<_>>>()?;
    let dropped: usize = sets.iter().map(|t| t.dropped).sum();
    let seeds: usize = sets.iter().map(|t| t.seeds).sum();
    out.check(
        "seeds dropped",
        dropped as f64,
        seeds as f64,
        dropped < seeds.max(1),
    );
    run.emit("thresholds.csv", |p| Ok(write_thresholds_csv(&sets, p)?))?;
    run.emit_json("thresholds.json", &sets)?;
    Ok(out)
}

pub fn mourre(s: &Scenario, run: &mut RunDir) -> Result<StageOutput, CliError> {
    let mut out = StageOutput::default();
    let st = setup(s)?;
    let xi = s.first_xi();
    let lambda = s.rectangle_center()?;
    let t = threshold_set(&st.pair, &xi, &st.grid)?;
    let known: Vec<f64> = s.target().into_iter().collect();
    let report = extract_constants(&st.grid, &st.pair, &st.kernel, lambda, &xi, &t, &known)?;
    let h = assemble_h(&st.grid, &st.pair, &st.kernel, &xi, s.tolerances.tail_tol)?;
    let comm = assemble_commutator(&st.grid, &st.pair, &st.kernel, &xi, &xi)?;
    let p0_tol = if known.is_empty() {
        None
    } else {
        Some(1e3 * s.match_tol(lambda))
    };
    let ineq = mourre_inequality_check(&comm, &h, &report, p0_tol)?;
    let (vals, vecs) = linalg::hermitian_eigen(h.matrix.as_ref())?;
    let window: Vec<Vec<C64>> = (0..vals.len())
        .filter(|&i| (vals[i] - lambda).abs() <= report.kappa)
        .map(|i| (0..vals.len()).map(|r| vecs[(r, i)]).collect())
        .collect();
    let virial = virial_check(&comm, &window);
    let mut fd = Vec::new();
    for step in [1e-3, 1e-4] {
        let m = flow_difference(
            &st.grid,
            &st.pair,
            &st.kernel,
            &xi,
            &st.bounds,
            step,
            s.tolerances.tail_tol,
        )?;
        fd.push((step, (&m - &comm.matrix).norm_max()));
    }
    let ratio = fd[0].1 / fd[1].1;
    out.check("e > 0", report.e, 0.0, report.e > 0.0);
    out.at_least("inequality margin", ineq.margin, -s.tolerances.margin_tol);
    out.check(
        "finite-difference order ratio",
        ratio,
        10.0,
        (5.0..=20.0).contains(&ratio),
    );
    run.emit_json(
        "mourre.json",
        &json!({
            "constants": report,
            "inequality": ineq,
            "commutator_norm": comm.norm,
            "hermiticity_defect": comm.hermiticity_defect,
            "virial_window": virial,
            "finite_difference": fd,
        }),
    )?;
    Ok(out)
}

pub fn feshbach(s: &Scenario, run: &mut RunDir) -> Result<StageOutput, CliError> {
    let mut out = StageOutput::default();
    let st = setup(s)?;
    let xi = s.first_xi();
    let theta = s.thetas()[0];
    let (rect, _) = rectangle(s, &st, &xi)?;
    let op = operator(s, &st, &xi, theta)?;
    let rep = eigendecompose(&op, s.tolerances.eig_tol)?;
    let inside = rectangle_scan(&rep, &rect, &[], s.match_tol(rect.center)).inside;
    let expected = if s.target().is_some() { 1.0 } else { 0.0 };
    out.at_least("in-rectangle eigenvalues", inside.len() as f64, expected);
    let nodes = s.tolerances.riesz_nodes;
    let mut entries = Vec::new();
    for &mu in &inside {
        let gap = rep
            .eigenvalues
            .iter()
            .map(|&z| (z - mu).norm())
            .filter(|&d| d > 1e-12)
            .fold(f64::INFINITY, f64::min);
        let radius = (0.5 * gap).min(0.05);
        let base = riesz_projection(&op, mu, radius, nodes, &rep.eigenvalues)?;
        let mut spread: f64 = 0.0;
        let mut ranks = vec![base.rank];
        for (n, r) in [
            (2 * nodes, radius),
            (nodes, 0.9 * radius),
            (nodes, 1.1 * radius),
        ] {
            let p = riesz_projection(&op, mu, r, n, &rep.eigenvalues)?;
            spread = spread.max((&p.matrix - &base.matrix).norm_max());
            ranks.push(p.rank);
        }
        let f = FeshbachReduction::new(&op, &base.range_basis()?)?;
        let at_mu = f.det(mu)?.norm();
        let probes = [
            C64::new(0.1, 0.0),
            C64::new(-0.1, 0.0),
            C64::new(0.0, 0.1),
            C64::new(0.0, -0.1),
        ]
        .iter()
        .map(|&d| f.det(mu + d).map(|z| z.norm()))
        .collect::<specdeform::Result<Vec<_>>>()?;
        let min_probe = probes.iter().copied().fold(f64::INFINITY, f64::min);
        out.at_most("|det F(μ)|", at_mu, 1e-8);
        out.at_least("min |det F| at probes", min_probe, 1e-3);
        out.at_most("idempotency defect", base.idempotency_defect, 1e-8);
        let stable = ranks.iter().all(|&r| r == base.rank);
        out.check(
            "Riesz rank stable",
            base.rank as f64,
            ranks[1] as f64,
            stable,
        );
        entries.push(json!({
            "mu": [mu.re, mu.im],
            "radius": radius,
            "rank": base.rank,
            "idempotency_defect": base.idempotency_defect,
            "contour_spread": spread,
            "ranks": ranks,
            "det_at_mu": at_mu,
            "det_at_probes": probes,
        }));
    }
    run.emit_json(
        "feshbach.json",
        &json!({ "rectangle": rect, "theta": [theta.re, theta.im], "eigenvalues": entries }),
    )?;
    Ok(out)
}

pub fn embedded(s: &Scenario, run: &mut RunDir) -> Result<StageOutput, CliError> {
    let mut out = StageOutput::default();
    let st = setup(s)?;
    let e = st.embedded.as_ref().ok_or_else(|| {
        CliError::Config("key `potential.kind` must be \"embedded\" for this subcommand".into())
    })?;
    std::fs::create_dir_all(run.root.join("embedded"))?;
    e.write(
        &run.root.join("embedded/potential.csv"),
        &run.root.join("embedded/potential.json"),
    )?;
    run.emit("embedded/potential.csv", |_| Ok(()))?;
    run.emit("embedded/potential.json", |_| Ok(()))?;
    out.at_most(
        "construction residual",
        e.residual,
        s.tolerances.embedded_residual_tol,
    );
    let h = assemble_h(
        &st.grid,
        &st.pair,
        &st.kernel,
        &[0.0],
        s.tolerances.tail_tol,
    )?;
    let (vals, _) = linalg::hermitian_eigen(h.matrix.as_ref())?;
    let target = e.target_eigenvalue();
    let nearest = vals
        .iter()
        .copied()
        .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
        .unwrap_or(f64::NAN);
    out.at_most(
        "|λ - ξ₀²|",
        (nearest - target).abs(),
        s.tolerances.embedded_eigen_tol,
    );
    run.emit_json(
        "embedded/verification.json",
        &json!({ "target": target, "nearest_eigenvalue": nearest, "residual": e.residual }),
    )?;
    Ok(out)
}

pub fn commlab_batch(s: &Scenario, run: &mut RunDir) -> Result<StageOutput, CliError> {
    let mut out = StageOutput::default();
    let c = &s.commlab;
    let seeds: Vec<u64> = (0..c.seeds as u64)
        .map(|k| s.seed.wrapping_add(k))
        .collect();
    let rep = commlab::batch(&seeds, c.n, c.k_max, c.fraction)?;
    out.at_most(
        "series deviation",
        rep.worst_series_deviation,
        s.tolerances.commlab_tol,
    );
    out.at_most("adjoint deviation", rep.worst_adjoint_deviation, 1e-12);
    let lo = rep
        .entries
        .iter()
        .map(|e| e.graph_min)
        .fold(f64::INFINITY, f64::min);
    let hi = rep.entries.iter().map(|e| e.graph_max).fold(0.0, f64::max);
    out.at_least("graph-norm ratio min", lo, 0.5 - 1e-8);
    out.at_most("graph-norm ratio max", hi, 2.0 + 1e-8);
    out.constants.r_prime = Some(
        rep.entries
            .iter()
            .map(|e| e.r_prime)
            .fold(f64::INFINITY, f64::min),
    );
    run.emit_json("commlab.json", &rep)?;
    run.emit("commlab.csv", |p| {
        let mut f = std::io::BufWriter::new(std::fs::File::create(p)?);
        writeln!(
            f,
            "seed,c,r_prime,theta_re,theta_im,series_deviation,adjoint_deviation,w_ratio"
        )?;
        for e in &rep.entries {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                e.seed,
                fmt17(e.c),
                fmt17(e.r_prime),
                fmt17(e.theta.re),
                fmt17(e.theta.im),
                fmt17(e.series_deviation),
                fmt17(e.adjoint_deviation),
                fmt17(e.w_ratio)
            )?;
        }
        f.flush()?;
        Ok(())
    })?;
    Ok(out)
}
