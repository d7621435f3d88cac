//! Spectra of deformed fiber operators and the spectral checks built on them:
//! sector bounds, rectangle scans, θ-drift tables, Riesz projections, the
//! Feshbach reduction and a pseudospectral membership probe.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::fmt17;
use crate::linalg::{self, CMat};
use crate::operator::FiberOperator;

pub const DEFAULT_EIG_TOL: f64 = 1e-8;
pub const DEFAULT_RIESZ_NODES: usize = 64;

/// `1e-6 (1 + |λ₀|)`.
pub fn default_match_tol(lambda0: f64) -> f64 {
    1e-6 * (1.0 + lambda0.abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenClass {
    ContinuumArc,
    IsolatedReal,
    Resonance,
    Unclassified,
}

impl EigenClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            EigenClass::ContinuumArc => "continuum-arc",
            EigenClass::IsolatedReal => "isolated-real",
            EigenClass::Resonance => "resonance",
            EigenClass::Unclassified => "unclassified",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<C64>,
    /// `‖Hv - λv‖ / (‖H‖_∞ ‖v‖)`
    pub residuals: Vec<f64>,
    pub flagged: Vec<bool>,
    pub classes: Vec<EigenClass>,
    pub theta: C64,
    pub xi: Vec<f64>,
    pub eig_tol: f64,
    pub rectangle_stats: Option<RectangleStats>,
    #[serde(skip)]
    pub eigenvectors: Option<CMat>,
}

impl SpectrumReport {
    pub fn count(&self, class: EigenClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "re,im,residual,class")?;
        for i in 0..self.eigenvalues.len() {
            let z = self.eigenvalues[i];
            writeln!(
                out,
                "{},{},{},{}",
                fmt17(z.re),
                fmt17(z.im),
                fmt17(self.residuals[i]),
                self.classes[i].as_str()
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "theta": [self.theta.re, self.theta.im],
            "xi": self.xi,
            "size": self.eigenvalues.len(),
            "max_residual": self.residuals.iter().cloned().fold(0.0, f64::max),
            "flagged": self.flagged_count(),
            "continuum_arc": self.count(EigenClass::ContinuumArc),
            "isolated_real": self.count(EigenClass::IsolatedReal),
            "resonance": self.count(EigenClass::Resonance),
            "unclassified": self.count(EigenClass::Unclassified),
            "rectangle": self.rectangle_stats,
        })
    }
}

/// Full non-Hermitian eigendecomposition with per-pair residuals, sorted by real part.
pub fn eigendecompose(op: &FiberOperator, eig_tol: f64) -> Result<SpectrumReport> {
    let (vals, vecs) = linalg::general_eigen(op.matrix.as_ref())?;
    let n = vals.len();
    let hv = &op.matrix * &vecs;
    let scale = op.norm_estimate.max(f64::MIN_POSITIVE);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        vals[a]
            .re
            .total_cmp(&vals[b].re)
            .then(vals[a].im.total_cmp(&vals[b].im))
    });
    let mut eigenvalues = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    for &j in &order {
        let lam = vals[j];
        if !lam.is_finite() {
            return Err(Error::ConvergenceFailure(format!(
                "eigenvalue {j} is not finite"
            )));
        }
        let mut r = 0.0;
        let mut v = 0.0;
        for i in 0..n {
            r += (hv[(i, j)] - vecs[(i, j)] * lam).norm_sqr();
            v += vecs[(i, j)].norm_sqr();
        }
        eigenvalues.push(lam);
        residuals.push((r / v).sqrt() / scale);
    }
    let sorted = Mat::from_fn(n, n, |i, j| vecs[(i, order[j])]);
    let flagged = residuals.iter().map(|&r| !(r <= eig_tol)).collect();
    Ok(SpectrumReport {
        classes: vec![EigenClass::Unclassified; n],
        eigenvalues,
        residuals,
        flagged,
        theta: op.theta,
        xi: op.xi.clone(),
        eig_tol,
        rectangle_stats: None,
        eigenvectors: Some(sorted),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub match_tol: f64,
    /// `|Im λ|` below which an eigenvalue counts as real.
    pub imag_tol: f64,
    /// Multiple of the local free-curve segment length treated as on the curve.
    pub arc_factor: f64,
}

impl ClassifyOptions {
    pub fn new(match_tol: f64) -> Self {
        Self {
            match_tol,
            imag_tol: 1e-6,
            arc_factor: 0.5,
        }
    }
}

/// Distance from `z` to the polyline through `curve` and the length of the closest segment.
fn polyline_distance(z: C64, curve: &[C64]) -> (f64, f64) {
    if curve.len() == 1 {
        return ((z - curve[0]).norm(), 0.0);
    }
    let mut best = (f64::INFINITY, 0.0);
    for w in curve.windows(2) {
        let (a, b) = (w[0], w[1]);
        let ab = b - a;
        let len2 = ab.norm_sqr();
        let t = if len2 == 0.0 {
            0.0
        } else {
            ((z - a) * ab.conj()).re / len2
        };
        let p = a + ab * t.clamp(0.0, 1.0);
        let dist = (z - p).norm();
        if dist < best.0 {
            best = (dist, len2.sqrt());
        }
    }
    best
}

/// Tags every eigenvalue.
///
/// An eigenvalue is a continuum arc when it sits on the free curve
/// `ω_ξ(γ(k))` (the diagonal of the `V ≡ 0` operator at the same `θ`) or when it
/// moves by more than `10·match_tol` under grid refinement. Remaining real
/// eigenvalues are isolated, those in the lower half-plane are resonances.
pub fn classify(
    report: &mut SpectrumReport,
    free_curve: &[C64],
    refined: Option<&[C64]>,
    opts: &ClassifyOptions,
) {
    let n = report.eigenvalues.len();
    let mut classes = vec![EigenClass::Unclassified; n];
    for (i, &lam) in report.eigenvalues.iter().enumerate() {
        let (dist, seg) = polyline_distance(lam, free_curve);
        let moved = refined.is_some_and(|r| {
            r.iter()
                .map(|&m| (m - lam).norm())
                .fold(f64::INFINITY, f64::min)
                > 10.0 * opts.match_tol
        });
        if dist <= (opts.arc_factor * seg).max(opts.match_tol) || moved {
            classes[i] = EigenClass::ContinuumArc;
        }
    }
    let arcs: Vec<C64> = (0..n)
        .filter(|&i| classes[i] == EigenClass::ContinuumArc)
        .map(|i| report.eigenvalues[i])
        .collect();
    for i in 0..n {
        if classes[i] == EigenClass::ContinuumArc {
            continue;
        }
        let lam = report.eigenvalues[i];
        if lam.im.abs() <= opts.imag_tol {
            let near_arc = arcs
                .iter()
                .any(|&a| (a - lam).norm() < 5.0 * opts.match_tol);
            classes[i] = if near_arc {
                EigenClass::Unclassified
            } else {
                EigenClass::IsolatedReal
            };
        } else if lam.im < 0.0 {
            classes[i] = EigenClass::Resonance;
        }
    }
    report.classes = classes;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorReport {
    pub violations: Vec<usize>,
    /// `min_λ (4C|θ|(|Re λ| + 1) + slack - |Im λ|)`
    pub worst_margin: f64,
    pub c_const: f64,
    pub slack: f64,
}

/// Flags eigenvalues with `|Im λ| > 4C|θ|(|Re λ| + 1) + slack`.
pub fn sector_check(report: &SpectrumReport, c_const: f64, theta: C64, slack: f64) -> SectorReport {
    let mut violations = Vec::new();
    let mut worst = f64::INFINITY;
    for (i, lam) in report.eigenvalues.iter().enumerate() {
        let margin = 4.0 * c_const * theta.norm() * (lam.re.abs() + 1.0) + slack - lam.im.abs();
        worst = worst.min(margin);
        if margin < 0.0 {
            violations.push(i);
        }
    }
    SectorReport {
        violations,
        worst_margin: worst,
        c_const,
        slack,
    }
}

/// `R_θ(σ, ρ) = {Re ∈ (λ₀ - ρ, λ₀ + ρ), Im > -σ Im θ}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub center: f64,
    pub half_width: f64,
    pub depth_slope: f64,
}

impl Rectangle {
    pub fn new(center: f64, half_width: f64, depth_slope: f64) -> Result<Self> {
        if !(half_width > 0.0) || !(depth_slope > 0.0) || !center.is_finite() {
            return Err(invalid("rectangle needs ρ > 0 and σ > 0"));
        }
        Ok(Self {
            center,
            half_width,
            depth_slope,
        })
    }

    pub fn contains(&self, z: C64, theta: C64) -> bool {
        (z.re - self.center).abs() < self.half_width && z.im > -self.depth_slope * theta.im
    }

    pub fn in_window(&self, z: C64) -> bool {
        (z.re - self.center).abs() < self.half_width
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectangleStats {
    pub rectangle: Rectangle,
    pub inside: Vec<C64>,
    pub matched: Vec<C64>,
    pub strays: Vec<C64>,
}

impl RectangleStats {
    pub fn stray_count(&self) -> usize {
        self.strays.len()
    }
}

/// Splits the in-rectangle eigenvalues into matches of `exclude` and strays.
pub fn rectangle_scan(
    report: &SpectrumReport,
    rect: &Rectangle,
    exclude: &[C64],
    match_tol: f64,
) -> RectangleStats {
    let inside: Vec<C64> = report
        .eigenvalues
        .iter()
        .copied()
        .filter(|&z| rect.contains(z, report.theta))
        .collect();
    let (matched, strays) = inside
        .iter()
        .partition(|&&z| exclude.iter().any(|&e| (z - e).norm() <= match_tol));
    RectangleStats {
        rectangle: *rect,
        inside,
        matched,
        strays,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftEntry {
    pub theta_from: C64,
    pub theta_to: C64,
    pub from: C64,
    pub to: C64,
    pub drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftTable {
    pub isolated: Vec<DriftEntry>,
    pub arcs: Vec<DriftEntry>,
    pub max_isolated_drift: f64,
    pub median_arc_drift: f64,
    pub unmatched: usize,
}

/// Greedy nearest-neighbour matching of in-rectangle isolated eigenvalues across
/// consecutive θ, together with the drift of continuum arcs in the rectangle window.
pub fn theta_independence(
    reports: &[SpectrumReport],
    rect: &Rectangle,
    match_tol: f64,
) -> Result<DriftTable> {
    let mut isolated = Vec::new();
    let mut arcs = Vec::new();
    let mut unmatched = 0;
    for w in reports.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let pick = |r: &SpectrumReport, class: EigenClass, rect_only: bool| -> Vec<C64> {
            r.eigenvalues
                .iter()
                .zip(&r.classes)
                .filter(|(z, &c)| {
                    c == class
                        && if rect_only {
                            rect.contains(**z, r.theta)
                        } else {
                            rect.in_window(**z)
                        }
                })
                .map(|(z, _)| *z)
                .collect()
        };
        let targets = pick(b, EigenClass::IsolatedReal, true);
        let mut used = vec![false; targets.len()];
        for from in pick(a, EigenClass::IsolatedReal, true) {
            let close = targets
                .iter()
                .filter(|&&t| (t - from).norm() <= match_tol)
                .count();
            if close > 1 {
                return Err(Error::MatchingAmbiguous(from));
            }
            let best = targets
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .min_by(|x, y| (x.1 - from).norm().total_cmp(&(y.1 - from).norm()));
            match best {
                Some((i, &to)) => {
                    used[i] = true;
                    isolated.push(DriftEntry {
                        theta_from: a.theta,
                        theta_to: b.theta,
                        from,
                        to,
                        drift: (to - from).norm(),
                    });
                }
                None => unmatched += 1,
            }
        }
        let arc_targets = pick(b, EigenClass::ContinuumArc, false);
        for from in pick(a, EigenClass::ContinuumArc, false) {
            if let Some(&to) = arc_targets
                .iter()
                .min_by(|x, y| (**x - from).norm().total_cmp(&(**y - from).norm()))
            {
                arcs.push(DriftEntry {
                    theta_from: a.theta,
                    theta_to: b.theta,
                    from,
                    to,
                    drift: (to - from).norm(),
                });
            }
        }
    }
    let max_isolated_drift = isolated.iter().map(|e| e.drift).fold(0.0, f64::max);
    let mut arc_drifts: Vec<f64> = arcs.iter().map(|e| e.drift).collect();
    arc_drifts.sort_by(f64::total_cmp);
    let median_arc_drift = if arc_drifts.is_empty() {
        0.0
    } else if arc_drifts.len() % 2 == 1 {
        arc_drifts[arc_drifts.len() / 2]
    } else {
        0.5 * (arc_drifts[arc_drifts.len() / 2 - 1] + arc_drifts[arc_drifts.len() / 2])
    };
    Ok(DriftTable {
        isolated,
        arcs,
        max_isolated_drift,
        median_arc_drift,
        unmatched,
    })
}

#[derive(Clone, Debug)]
pub struct RieszProjection {
    pub matrix: CMat,
    pub center: C64,
    pub radius: f64,
    pub nodes: usize,
    pub rank: usize,
    pub idempotency_defect: f64,
}

impl RieszProjection {
    /// Orthonormal basis of the range.
    pub fn range_basis(&self) -> Result<CMat> {
        let (vals, vecs) = linalg::general_eigen(self.matrix.as_ref())?;
        let cols: Vec<usize> = (0..vals.len())
            .filter(|&i| (vals[i] - 1.0).norm() <= 1e-6)
            .collect();
        let n = self.matrix.nrows();
        let raw = Mat::from_fn(n, cols.len(), |i, j| vecs[(i, cols[j])]);
        Ok(orthonormalize(&raw))
    }
}

fn orthonormalize(m: &CMat) -> CMat {
    if m.ncols() == 0 {
        return m.clone();
    }
    m.qr().compute_thin_Q()
}

/// `P = (2πi)^{-1} ∮ (z - H)^{-1} dz` by the trapezoid rule on a circle.
pub fn riesz_projection(
    op: &FiberOperator,
    center: C64,
    radius: f64,
    nodes: usize,
    spectrum: &[C64],
) -> Result<RieszProjection> {
    if !(radius > 0.0) || nodes < 4 {
        return Err(invalid(
            "contour needs a positive radius and at least 4 nodes",
        ));
    }
    let gap = spectrum
        .iter()
        .map(|&l| ((l - center).norm() - radius).abs())
        .fold(f64::INFINITY, f64::min);
    if gap < 0.1 * radius {
        return Err(Error::ContourTooClose {
            distance: gap,
            threshold: 0.1 * radius,
        });
    }
    let n = op.dim();
    let ident = linalg::identity(n);
    let matrix = (0..nodes)
        .into_par_iter()
        .map(|j| -> Result<CMat> {
            let w = C64::from_polar(radius, 2.0 * PI * j as f64 / nodes as f64);
            let lu = linalg::lu_shifted(op.matrix.as_ref(), center + w)?;
            let inv = linalg::solve_shifted(&lu, ident.as_ref())?;
            // (z - H)^{-1} = -(H - z)^{-1}
            Ok(inv * faer::Scale(-w / nodes as f64))
        })
        .try_reduce(|| Mat::zeros(n, n), |a, b| Ok(a + b))?;
    let vals = matrix
        .eigenvalues()
        .map_err(|e| Error::ConvergenceFailure(format!("{e:?}")))?;
    let rank = vals.iter().filter(|&&v| (v - 1.0).norm() <= 1e-6).count();
    let defect_mat = &matrix * &matrix - &matrix;
    let idempotency_defect = linalg::spectral_norm(defect_mat.as_ref(), 3);
    Ok(RieszProjection {
        matrix,
        center,
        radius,
        nodes,
        rank,
        idempotency_defect,
    })
}

/// Orthonormal eigenvectors of a Hermitian operator with eigenvalue within `tol` of `lambda`.
pub fn hermitian_eigenbasis(op: &FiberOperator, lambda: f64, tol: f64) -> Result<(Vec<f64>, CMat)> {
    let (vals, vecs) = linalg::hermitian_eigen(op.matrix.as_ref())?;
    let cols: Vec<usize> = (0..vals.len())
        .filter(|&i| (vals[i] - lambda).abs() <= tol)
        .collect();
    let n = op.dim();
    Ok((
        cols.iter().map(|&i| vals[i]).collect(),
        Mat::from_fn(n, cols.len(), |i, j| vecs[(i, cols[j])]),
    ))
}

/// Blocks of `H_θ` in the splitting `Ran P₀ ⊕ Ran P̄₀`.
#[derive(Clone, Debug)]
pub struct FeshbachReduction {
    pub rank: usize,
    a: CMat,
    b: CMat,
    c: CMat,
    d: CMat,
}

impl FeshbachReduction {
    /// `basis` must have orthonormal columns spanning `Ran P₀`.
    pub fn new(op: &FiberOperator, basis: &CMat) -> Result<Self> {
        let n = op.dim();
        let n0 = basis.ncols();
        if basis.nrows() != n || n0 == 0 || n0 >= n {
            return Err(invalid("feshbach basis must have 1..N columns of length N"));
        }
        let q = basis.qr().compute_Q();
        let p = q.as_ref().subcols(0, n0).to_owned();
        let pbar = q.as_ref().subcols(n0, n - n0).to_owned();
        let hp = &op.matrix * &p;
        let hpbar = &op.matrix * &pbar;
        Ok(Self {
            rank: n0,
            a: p.adjoint() * &hp,
            b: p.adjoint() * &hpbar,
            c: pbar.adjoint() * &hp,
            d: pbar.adjoint() * &hpbar,
        })
    }

    /// `F(z) = P₀(H - z)P₀ - P₀HP̄₀ (P̄₀HP̄₀ - z)^{-1} P̄₀HP₀`.
    pub fn map_at(&self, z: C64) -> Result<CMat> {
        let lu = linalg::lu_shifted(self.d.as_ref(), z)?;
        let x = lu.solve(self.c.as_ref());
        if !x.norm_max().is_finite() {
            return Err(Error::ReducedSingular(z));
        }
        let mut f = linalg::shifted(self.a.as_ref(), z);
        f -= &self.b * &x;
        if !f.norm_max().is_finite() {
            return Err(Error::ReducedSingular(z));
        }
        Ok(f)
    }

    pub fn det(&self, z: C64) -> Result<C64> {
        Ok(linalg::small_det(self.map_at(z)?.as_ref()))
    }

    /// Winding number of `det F` along a circle.
    pub fn winding_number(&self, center: C64, radius: f64, nodes: usize) -> Result<i64> {
        let vals = (0..=nodes)
            .map(|j| self.det(center + C64::from_polar(radius, 2.0 * PI * j as f64 / nodes as f64)))
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        for w in vals.windows(2) {
            total += (w[1] / w[0]).arg();
        }
        Ok((total / (2.0 * PI)).round() as i64)
    }

    /// Zero of `det F` by the secant method from `seed`.
    pub fn zero_near(&self, seed: C64, tol: f64) -> Result<C64> {
        let mut z0 = seed;
        let mut z1 = seed + C64::new(1e-4, 1e-4);
        let mut f0 = self.det(z0)?;
        let mut f1 = self.det(z1)?;
        for _ in 0..100 {
            if f1 == f0 {
                break;
            }
            let z2 = z1 - f1 * (z1 - z0) / (f1 - f0);
            z0 = z1;
            f0 = f1;
            z1 = z2;
            f1 = self.det(z1)?;
            if (z1 - z0).norm() <= tol {
                return Ok(z1);
            }
        }
        Err(Error::ToleranceNotMet {
            context: "feshbach zero search".into(),
            detail: format!("no convergence from {seed}"),
        })
    }
}

/// Smallest singular value of `H - λ` by inverse power iteration.
pub fn aps_probe(op: &FiberOperator, lambda: C64, n_vectors: usize, seed: u64) -> Result<f64> {
    let lu = linalg::lu_shifted(op.matrix.as_ref(), lambda)?;
    let n = op.dim();
    let mut best = f64::INFINITY;
    for v in 0..n_vectors.max(1) {
        let x0 = linalg::random_unit(n, seed.wrapping_add(v as u64));
        let mut x = Mat::from_fn(n, 1, |i, _| x0[i]);
        let mut est = f64::INFINITY;
        for _ in 0..200 {
            let y = lu.solve_adjoint(x.as_ref());
            let z = lu.solve(y.as_ref());
            let nz = z.norm_l2();
            if !nz.is_finite() {
                return Err(Error::SolveFailure("inverse iteration diverged".into()));
            }
            if nz == 0.0 {
                break;
            }
            let new = 1.0 / nz.sqrt();
            x = z * faer::Scale(C64::new(1.0 / nz, 0.0));
            let done = (new - est).abs() <= 1e-12 * new;
            est = new;
            if done {
                break;
            }
        }
        best = best.min(est);
    }
    Ok(best)
}
