use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specdeform::commlab;
use specdeform::dispersion::{DispersionPair, DispersionSpec, FieldBounds};
use specdeform::flow::{check_group_and_inverse, flow_from, ComplexTime, FlowOptions};
use specdeform::grid::MomentumGrid;
use specdeform::mourre::{
    assemble_commutator, extract_constants, flow_difference, mourre_inequality_check,
};
use specdeform::operator::{
    adjoint_identity, assemble_h, deformed_operator, relative_constant, FiberOperator,
    DEFAULT_TAIL_TOL,
};
use specdeform::potential::{
    certify_decay, construct_embedded, strip_sample, BumpProfile, FourierKernel, PositionGrid,
    PotentialSpec,
};
use specdeform::spectra::{
    classify, eigendecompose, rectangle_scan, riesz_projection, sector_check, theta_independence,
    ClassifyOptions, FeshbachReduction, Rectangle, SpectrumReport, DEFAULT_EIG_TOL,
};
use specdeform::thresholds::{
    band_sweep, branch_regularity, threshold_set, BandOptions, BandPoint,
};
use specdeform::Result;

const EMBEDDED_TAIL_TOL: f64 = 1e-4;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn i(theta: f64) -> C64 {
    C64::new(0.0, theta)
}

struct Reference {
    grid: MomentumGrid,
    pair: DispersionPair,
    kernel: FourierKernel,
    bounds: FieldBounds,
}

fn reference() -> Result<Reference> {
    let pair = DispersionPair::new(
        DispersionSpec::square(1, 0.5),
        DispersionSpec::square(1, 0.5),
    )?;
    Ok(Reference {
        grid: MomentumGrid::new(12.0, 801, 1)?,
        kernel: certify_decay(
            &PotentialSpec::gaussian(1, -1.0, 0.5),
            1.0,
            &strip_sample(1, 1.0, 30.0, 400, 3),
        )?,
        bounds: pair.certify_bounds(&[(0.0, 0.0)], 0.5, 0.02)?,
        pair,
    })
}

fn embedded_pair() -> Result<DispersionPair> {
    DispersionPair::new(
        DispersionSpec::zero(1, 0.5),
        DispersionSpec::quartic(1, 0.5, [0.0, 0.0]),
    )
}

fn embedded_kernel(xi0: f64) -> Result<FourierKernel> {
    let e = construct_embedded(xi0, &BumpProfile::default(), &PositionGrid::default())?;
    certify_decay(
        &e.potential_spec(e.default_stride(), 2.0),
        1.0,
        &strip_sample(1, 1.0, 30.0, 400, 3),
    )
}

struct Embedded {
    pair: DispersionPair,
    kernel: FourierKernel,
    bounds: FieldBounds,
    rect: Rectangle,
}

fn embedded() -> Result<Embedded> {
    let pair = embedded_pair()?;
    let kernel = embedded_kernel(1.0)?;
    let bounds = pair.certify_bounds(&[(0.0, 0.0)], 0.5, 0.02)?;
    let grid = MomentumGrid::new(12.0, 801, 1)?;
    let t = threshold_set(&pair, &[0.0], &grid)?;
    let m = extract_constants(&grid, &pair, &kernel, 1.0, &[0.0], &t, &[1.0])?;
    let rect = Rectangle::new(1.0, m.kappa, 0.5 * m.e)?;
    Ok(Embedded {
        pair,
        kernel,
        bounds,
        rect,
    })
}

fn embedded_operator(s: &Embedded, n: usize, theta: C64) -> Result<FiberOperator> {
    let grid = MomentumGrid::new(12.0, n, 1)?;
    deformed_operator(
        &grid,
        &s.pair,
        &s.kernel,
        &[0.0],
        theta,
        &s.bounds,
        &FlowOptions::default(),
        EMBEDDED_TAIL_TOL,
    )
}

fn classified(s: &Embedded, n: usize, theta: C64) -> Result<SpectrumReport> {
    let op = embedded_operator(s, n, theta)?;
    let mut rep = eigendecompose(&op, DEFAULT_EIG_TOL)?;
    let free = op.diagonal.clone();
    let mut curve: Vec<C64> = free;
    curve.sort_by(|a, b| a.re.total_cmp(&b.re));
    classify(&mut rep, &curve, None, &ClassifyOptions::new(1e-6));
    Ok(rep)
}

fn c1_commutator_series() -> Result<Outcome> {
    let seeds: Vec<u64> = (0..50).collect();
    let rep = commlab::batch(&seeds, 40, 60, 0.9)?;
    outcome(
        rep.worst_series_deviation <= 1e-10,
        format!(
            "worst relative deviation {:.3e}",
            rep.worst_series_deviation
        ),
    )
}

fn c2_adjoint_identity() -> Result<Outcome> {
    let r = reference()?;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for theta in [C64::new(0.02, 0.05), i(0.1)] {
        let a = deformed_operator(
            &r.grid,
            &r.pair,
            &r.kernel,
            &[0.0],
            theta,
            &r.bounds,
            &FlowOptions::default(),
            DEFAULT_TAIL_TOL,
        )?;
        let b = deformed_operator(
            &r.grid,
            &r.pair,
            &r.kernel,
            &[0.0],
            theta.conj(),
            &r.bounds,
            &FlowOptions::default(),
            DEFAULT_TAIL_TOL,
        )?;
        let rep = adjoint_identity(&a, &b)?;
        worst = worst.max(rep.defect / rep.scale);
        ok &= rep.defect <= 1e-13 * rep.scale;
    }
    outcome(ok, format!("max defect/‖H‖ {worst:.3e}"))
}

fn c3_sector_bound() -> Result<Outcome> {
    let r = reference()?;
    let rc = relative_constant(
        &r.grid,
        &r.pair,
        &r.kernel,
        &[0.0],
        &r.bounds,
        8,
        &FlowOptions::default(),
        DEFAULT_TAIL_TOL,
    )?;
    let mut violations = 0;
    let mut control = 0;
    for th in [0.025, 0.05, 0.1] {
        let op = deformed_operator(
            &r.grid,
            &r.pair,
            &r.kernel,
            &[0.0],
            i(th),
            &r.bounds,
            &FlowOptions::default(),
            DEFAULT_TAIL_TOL,
        )?;
        let rep = eigendecompose(&op, DEFAULT_EIG_TOL)?;
        violations += sector_check(&rep, rc.c, i(th), 0.0).violations.len();
        control += sector_check(&rep, rc.c / 100.0, i(th), 0.0)
            .violations
            .len();
    }
    outcome(
        violations == 0 && control > 0,
        format!(
            "C = {:.4}, violations {violations}, C/100 control violations {control}",
            rc.c
        ),
    )
}

fn c4_rectangle_clearing(s: &Embedded) -> Result<Outcome> {
    let theta = i(0.1);
    let mut strays = Vec::new();
    let mut persists = true;
    let mut eig = Vec::new();
    for n in [201, 401, 801] {
        let op = embedded_operator(s, n, theta)?;
        let rep = eigendecompose(&op, DEFAULT_EIG_TOL)?;
        let stats = rectangle_scan(&rep, &s.rect, &[C64::new(1.0, 0.0)], 1e-3);
        strays.push(stats.stray_count());
        match stats
            .matched
            .iter()
            .min_by(|a, b| (*a - 1.0).norm().total_cmp(&(*b - 1.0).norm()))
        {
            Some(&z) => {
                persists &= z.im.abs() <= 1e-6 && (z.re - 1.0).abs() <= 1e-3;
                eig.push(z);
            }
            None => persists = false,
        }
    }
    let monotone = strays.windows(2).all(|w| w[1] <= w[0]) && *strays.last().unwrap() == 0;
    outcome(
        monotone && persists,
        format!(
            "ρ = {:.3}, σ = {:.3}, strays {strays:?}, eigenvalue at N=801 {:.9}{:+.2e}i",
            s.rect.half_width,
            s.rect.depth_slope,
            eig.last().map_or(f64::NAN, |z| z.re),
            eig.last().map_or(f64::NAN, |z| z.im)
        ),
    )
}

fn c5_theta_independence(s: &Embedded) -> Result<Outcome> {
    let reports = [0.05, 0.075, 0.1]
        .iter()
        .map(|&th| classified(s, 401, i(th)))
        .collect::<Result<Vec<_>>>()?;
    let table = theta_independence(&reports, &s.rect, 1e-3)?;
    outcome(
        !table.isolated.is_empty()
            && table.max_isolated_drift <= 1e-5
            && table.median_arc_drift > 1e-3,
        format!(
            "isolated matches {}, max drift {:.3e}, median arc drift {:.3e}",
            table.isolated.len(),
            table.max_isolated_drift,
            table.median_arc_drift
        ),
    )
}

fn c6_feshbach(s: &Embedded) -> Result<Outcome> {
    let theta = i(0.1);
    let op = embedded_operator(s, 401, theta)?;
    let rep = eigendecompose(&op, DEFAULT_EIG_TOL)?;
    let stats = rectangle_scan(&rep, &s.rect, &[], 1e-3);
    if stats.inside.len() != 1 {
        return outcome(
            false,
            format!("{} eigenvalues in the rectangle", stats.inside.len()),
        );
    }
    let mu = stats.inside[0];
    let gap = rep
        .eigenvalues
        .iter()
        .filter(|&&z| (z - mu).norm() > 1e-12)
        .map(|&z| (z - mu).norm())
        .fold(f64::INFINITY, f64::min);
    let radius = (0.5 * gap).min(0.05);
    let base = riesz_projection(&op, mu, radius, 64, &rep.eigenvalues)?;
    let mut stable = base.rank == 1 && base.idempotency_defect <= 1e-8;
    let mut spread: f64 = 0.0;
    for (nodes, r) in [(128, radius), (64, 0.9 * radius), (64, 1.1 * radius)] {
        let p = riesz_projection(&op, mu, r, nodes, &rep.eigenvalues)?;
        stable &= p.rank == 1 && p.idempotency_defect <= 1e-8;
        spread = spread.max((&p.matrix - &base.matrix).norm_max());
    }
    stable &= spread <= 1e-8;
    let f = FeshbachReduction::new(&op, &base.range_basis()?)?;
    let at_mu = f.det(mu)?.norm();
    let probes = [C64::new(0.1, 0.0), C64::new(-0.1, 0.0), i(0.1), i(-0.1)]
        .iter()
        .map(|&d| f.det(mu + d).map(|z| z.norm()))
        .collect::<Result<Vec<_>>>()?;
    let min_probe = probes.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        at_mu <= 1e-8 && min_probe >= 1e-3 && stable,
        format!(
            "|det F(μ)| {at_mu:.2e}, min probe {min_probe:.3e}, rank {}, defect {:.2e}, contour spread {spread:.2e}",
            base.rank, base.idempotency_defect
        ),
    )
}

/// Classical RK4 on `(γ, M)` with `M' = Dv(γ) M` along the same L-shaped path.
fn variational_determinant(
    pair: &DispersionPair,
    xi: &[f64],
    k: f64,
    time: C64,
    steps: usize,
) -> Result<(C64, C64)> {
    let field = |g: C64, m: C64| -> Result<(C64, C64)> {
        let v = pair.vector_field(xi, &[g])?[0];
        let dv = pair.jacobian_field(xi, &[g])?[0];
        Ok((v, dv * m))
    };
    let mut g = C64::new(k, 0.0);
    let mut m = C64::new(1.0, 0.0);
    for leg in [C64::new(time.re, 0.0), C64::new(0.0, time.im)] {
        let h = leg / steps as f64;
        for _ in 0..steps {
            let (a1, b1) = field(g, m)?;
            let (a2, b2) = field(g + h * a1 * 0.5, m + h * b1 * 0.5)?;
            let (a3, b3) = field(g + h * a2 * 0.5, m + h * b2 * 0.5)?;
            let (a4, b4) = field(g + h * a3, m + h * b3)?;
            g += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            m += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        }
    }
    Ok((g, m))
}

fn c7_flow_identities() -> Result<Outcome> {
    let pair = DispersionPair::new(
        DispersionSpec::square(1, 0.5),
        DispersionSpec::square(1, 0.5),
    )?;
    let bounds = pair.certify_bounds(&[(-1.0, 1.0)], 0.5, 0.02)?;
    let opts = FlowOptions::default();
    let radius = bounds.flow_radius();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut group, mut inverse, mut speed, mut strip, mut det): (f64, f64, f64, f64, f64) =
        (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let xi = [rng.random_range(-1.0..1.0)];
        let k: f64 = rng.random_range(-1.0..1.0);
        let (t, s) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let g = check_group_and_inverse(&pair, &xi, &[k], t, s, &opts)?;
        group = group.max(g.group_deviation).max(g.jacobian_group_deviation);
        inverse = inverse
            .max(g.inverse_deviation)
            .max(g.jacobian_inverse_deviation);
        let theta = C64::from_polar(
            rng.random_range(0.0..0.95) * radius,
            rng.random_range(0.0..std::f64::consts::TAU),
        );
        let time = ComplexTime::new(theta, &bounds)?;
        let p = flow_from(&pair, &xi, &[C64::new(k, 0.0)], time.value, &opts)?;
        let disp = (p.gamma[0] - k).norm();
        speed = speed.max(disp - bounds.c_omega * theta.norm());
        strip = strip.max(p.gamma[0].im.abs() - bounds.c_omega * theta.im.abs());
        let (_, m) = variational_determinant(&pair, &xi, k, time.value, 400)?;
        det = det.max(((p.jacobian() - m) / m).norm());
    }
    let slack = 10.0 * opts.tol;
    outcome(
        group <= 1e-9 && inverse <= 1e-9 && speed <= slack && strip <= slack && det <= 1e-6,
        format!(
            "group {group:.2e}, inverse {inverse:.2e}, speed excess {speed:.2e}, strip excess {strip:.2e}, det {det:.2e}"
        ),
    )
}

fn c8_thresholds() -> Result<Outcome> {
    let seeds = MomentumGrid::new(4.0, 81, 1)?;
    let pair = DispersionPair::new(
        DispersionSpec::square(1, 0.5),
        DispersionSpec::square(1, 0.5),
    )?;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for j in 0..101 {
        let xi = -2.0 + 4.0 * j as f64 / 100.0;
        let t = threshold_set(&pair, &[xi], &seeds)?;
        ok &= t.critical_values.len() == 1;
        for v in &t.critical_values {
            worst = worst.max((v - 0.5 * xi * xi).abs());
        }
    }
    let well = DispersionPair::new(
        DispersionSpec::zero(1, 0.5),
        DispersionSpec::quartic(1, 0.5, [0.0, -2.0]),
    )?;
    let w = threshold_set(&well, &[0.0], &seeds)?;
    let well_ok = w.critical_values.len() == 2
        && (w.critical_values[0] + 1.0).abs() <= 1e-10
        && w.critical_values[1].abs() <= 1e-10;
    outcome(
        ok && worst <= 1e-10 && well_ok,
        format!(
            "max |t - ξ²/2| {worst:.2e}, double well {:?}",
            w.critical_values
        ),
    )
}

fn c9_mourre() -> Result<Outcome> {
    let r = reference()?;
    let t = threshold_set(&r.pair, &[0.0], &r.grid)?;
    let rep = extract_constants(&r.grid, &r.pair, &r.kernel, 1.0, &[0.0], &t, &[])?;
    let h = assemble_h(&r.grid, &r.pair, &r.kernel, &[0.0], DEFAULT_TAIL_TOL)?;
    let comm = assemble_commutator(&r.grid, &r.pair, &r.kernel, &[0.0], &[0.0])?;
    let ineq = mourre_inequality_check(&comm, &h, &rep, None)?;
    let err = |step: f64| -> Result<f64> {
        let fd = flow_difference(
            &r.grid,
            &r.pair,
            &r.kernel,
            &[0.0],
            &r.bounds,
            step,
            DEFAULT_TAIL_TOL,
        )?;
        Ok((&fd - &comm.matrix).norm_max())
    };
    let (e3, e4) = (err(1e-3)?, err(1e-4)?);
    let ratio = e3 / e4;
    outcome(
        rep.e > 0.0 && ineq.margin >= -1e-8 && (5.0..=20.0).contains(&ratio),
        format!(
            "e {:.4}, margin {:.4e}, FD error ratio h=1e-3/1e-4 {ratio:.2}",
            rep.e, ineq.margin
        ),
    )
}

fn c10_band() -> Result<Outcome> {
    let grid = MomentumGrid::new(12.0, 201, 1)?;
    let pair = embedded_pair()?;
    let bounds = pair.certify_bounds(&[(0.0, 0.0)], 0.5, 0.02)?;
    let xi_grid: Vec<Vec<f64>> = (0..21).map(|j| vec![0.5 + j as f64 / 20.0]).collect();
    let opts = BandOptions {
        tail_tol: EMBEDDED_TAIL_TOL,
        ..BandOptions::default()
    };
    let band = band_sweep(
        &grid,
        &xi_grid,
        i(0.1),
        |x| {
            let xi0 = x[0];
            Ok(BandPoint {
                pair: pair.clone(),
                kernel: embedded_kernel(xi0)?,
                bounds: bounds.clone(),
                fiber_xi: vec![0.0],
                rect: Rectangle::new(xi0 * xi0, 0.2, 1.0)?,
            })
        },
        &opts,
    )?;
    if band.branches.len() != 1 {
        return outcome(
            false,
            format!("{} branches, gaps {:?}", band.branches.len(), band.gaps),
        );
    }
    let b = &band.branches[0];
    let dev = b
        .samples
        .iter()
        .map(|s| (s.lambda - s.xi[0] * s.xi[0]).norm())
        .fold(0.0, f64::max);
    let mult = b.multiplicity_constant() && b.samples.iter().all(|s| s.multiplicity == 1);
    let fit = branch_regularity(&band, 0, 2)?;
    outcome(
        b.samples.len() == 21 && dev <= 1e-4 && mult && fit.fit.residual <= 1e-6,
        format!(
            "samples {}, max |λ - ξ₀²| {dev:.2e}, multiplicity 1: {mult}, degree-2 fit residual {:.2e}",
            b.samples.len(),
            fit.fit.residual
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let embedded = embedded();
    let with_embedded = |f: fn(&Embedded) -> Result<Outcome>| -> Result<Outcome> {
        match &embedded {
            Ok(s) => f(s),
            Err(e) => Err(specdeform::Error::InvalidInput(format!(
                "embedded scenario: {e}"
            ))),
        }
    };
    let criteria: Vec<(&str, Duration, Box<dyn Fn() -> Result<Outcome>>)> = vec![
        (
            "commutator series",
            Duration::from_secs(60),
            Box::new(c1_commutator_series),
        ),
        (
            "adjoint identity",
            Duration::from_secs(30),
            Box::new(c2_adjoint_identity),
        ),
        (
            "sector bound",
            Duration::from_secs(300),
            Box::new(c3_sector_bound),
        ),
        (
            "rectangle clearing",
            Duration::from_secs(600),
            Box::new(move || with_embedded(c4_rectangle_clearing)),
        ),
        (
            "theta independence",
            Duration::from_secs(600),
            Box::new(move || with_embedded(c5_theta_independence)),
        ),
        (
            "feshbach isospectrality",
            Duration::from_secs(120),
            Box::new(move || with_embedded(c6_feshbach)),
        ),
        (
            "flow identities",
            Duration::from_secs(60),
            Box::new(c7_flow_identities),
        ),
        (
            "threshold set",
            Duration::from_secs(30),
            Box::new(c8_thresholds),
        ),
        (
            "mourre constants",
            Duration::from_secs(120),
            Box::new(c9_mourre),
        ),
        (
            "embedded band",
            Duration::from_secs(900),
            Box::new(c10_band),
        ),
    ];
    let mut failures = 0;
    for (idx, (name, budget, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let result = run();
        let elapsed = t0.elapsed();
        let (passed, detail) = match result {
            Ok(o) => (o.passed && elapsed <= *budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failures += 1;
        }
        println!(
            "criterion {:>2} {:<24} {} ({:.1}s) {detail}",
            idx + 1,
            name,
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} passed in {:.1}s",
        criteria.len() - failures,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
