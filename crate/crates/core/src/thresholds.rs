//! Threshold sets `T(ξ)`, band tracking of isolated real eigenvalues across
//! total momentum, and regularity fits of the tracked branches.

use std::io::Write;
use std::path::Path;

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::{DispersionPair, FieldBounds};
use crate::error::{invalid, Error, Result};
use crate::flow::FlowOptions;
use crate::grid::MomentumGrid;
use crate::io::fmt17;
use crate::operator::deformed_operator;
use crate::potential::FourierKernel;
use crate::spectra::{eigendecompose, riesz_projection, Rectangle, DEFAULT_EIG_TOL};

pub const NEWTON_TOL: f64 = 1e-10;
pub const DEFAULT_BAND_LIPSCHITZ: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub xi: Vec<f64>,
    pub critical_points: Vec<Vec<f64>>,
    /// Sorted, deduplicated at `1e-9`.
    pub critical_values: Vec<f64>,
    pub newton_tol: f64,
    pub seeds: usize,
    pub dropped: usize,
}

impl ThresholdSet {
    /// `dist(λ, T(ξ))`, infinite for an empty set.
    pub fn distance(&self, lambda: f64) -> f64 {
        self.critical_values
            .iter()
            .map(|t| (t - lambda).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

fn solve_small(h: &[f64], g: &[f64]) -> Option<Vec<f64>> {
    let d = g.len();
    let m = Mat::from_fn(d, d, |i, j| h[i * d + j]);
    let rhs = Mat::from_fn(d, 1, |i, _| g[i]);
    let lu = m.partial_piv_lu();
    let x = faer::linalg::solvers::Solve::solve(&lu, rhs.as_ref());
    let out: Vec<f64> = (0..d).map(|i| x[(i, 0)]).collect();
    out.iter().all(|v| v.is_finite()).then_some(out)
}

fn newton(pair: &DispersionPair, xi: &[f64], seed: &[f64]) -> Option<Vec<f64>> {
    let mut k = seed.to_vec();
    for _ in 0..400 {
        let kc: Vec<C64> = k.iter().map(|&x| C64::new(x, 0.0)).collect();
        let jet = pair.jet(xi, &kc).ok()?;
        let g: Vec<f64> = jet.grad.iter().map(|z| z.re).collect();
        if g.iter().map(|x| x * x).sum::<f64>().sqrt() <= NEWTON_TOL {
            return Some(k);
        }
        let h: Vec<f64> = jet.hessian.iter().map(|z| z.re).collect();
        let step = solve_small(&h, &g)?;
        for (a, s) in k.iter_mut().zip(&step) {
            *a -= s;
        }
        if !k.iter().all(|x| x.is_finite()) {
            return None;
        }
    }
    None
}

/// Newton on `∇ω_ξ = 0` from every seed node.
pub fn threshold_set(
    pair: &DispersionPair,
    xi: &[f64],
    seeds: &MomentumGrid,
) -> Result<ThresholdSet> {
    if xi.len() != pair.dim() || seeds.dim != pair.dim() {
        return Err(invalid("xi, seeds and dispersion dimensions must agree"));
    }
    let nodes = seeds.nodes();
    let roots: Vec<Option<Vec<f64>>> = nodes.par_iter().map(|s| newton(pair, xi, s)).collect();
    let dropped = roots.iter().filter(|r| r.is_none()).count();
    let mut points: Vec<Vec<f64>> = Vec::new();
    for r in roots.into_iter().flatten() {
        let dup = points.iter().any(|p| {
            p.iter()
                .zip(&r)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                <= 1e-6
        });
        if !dup {
            points.push(r);
        }
    }
    points.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut values = Vec::new();
    for p in &points {
        let kc: Vec<C64> = p.iter().map(|&x| C64::new(x, 0.0)).collect();
        values.push(pair.omega_xi(xi, &kc)?.re);
    }
    values.sort_by(f64::total_cmp);
    values.dedup_by(|a, b| (*a - *b).abs() <= 1e-9);
    Ok(ThresholdSet {
        xi: xi.to_vec(),
        critical_points: points,
        critical_values: values,
        newton_tol: NEWTON_TOL,
        seeds: nodes.len(),
        dropped,
    })
}

/// One row per critical value: `xi..., critical_value`.
pub fn write_thresholds_csv(sets: &[ThresholdSet], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = sets.first().map_or(1, |s| s.xi.len());
    writeln!(out, "{},critical_value", xi_header(d))?;
    for s in sets {
        for v in &s.critical_values {
            writeln!(out, "{},{}", join17(&s.xi), fmt17(*v))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn xi_header(d: usize) -> String {
    if d == 1 {
        "xi".into()
    } else {
        (0..d)
            .map(|i| format!("xi{i}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn join17(v: &[f64]) -> String {
    v.iter().map(|&x| fmt17(x)).collect::<Vec<_>>().join(",")
}

/// Everything `band_sweep` needs at one total momentum.
#[derive(Clone, Debug)]
pub struct BandPoint {
    pub pair: DispersionPair,
    pub kernel: FourierKernel,
    pub bounds: FieldBounds,
    /// Fiber momentum passed to the operator.
    pub fiber_xi: Vec<f64>,
    pub rect: Rectangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandOptions {
    pub matching_tol: f64,
    pub band_lipschitz: f64,
    pub imag_tol: f64,
    pub eig_tol: f64,
    pub tail_tol: f64,
    pub riesz_nodes: usize,
}

impl Default for BandOptions {
    fn default() -> Self {
        Self {
            matching_tol: 1e-6,
            band_lipschitz: DEFAULT_BAND_LIPSCHITZ,
            imag_tol: 1e-6,
            eig_tol: DEFAULT_EIG_TOL,
            tail_tol: crate::operator::DEFAULT_TAIL_TOL,
            riesz_nodes: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSample {
    pub xi_index: usize,
    pub xi: Vec<f64>,
    pub lambda: C64,
    pub multiplicity: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub samples: Vec<BandSample>,
}

impl Branch {
    pub fn multiplicity_constant(&self) -> bool {
        self.samples
            .windows(2)
            .all(|w| w[0].multiplicity == w[1].multiplicity)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandData {
    pub xi_grid: Vec<Vec<f64>>,
    pub branches: Vec<Branch>,
    pub matching_tol: f64,
    pub band_lipschitz: f64,
    /// ξ indices at which a branch ended or started.
    pub gaps: Vec<usize>,
    /// Eigenvalues found per ξ, before matching.
    pub found: Vec<Vec<C64>>,
}

impl BandData {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let d = self.xi_grid.first().map_or(1, Vec::len);
        writeln!(
            out,
            "{},branch_id,re_lambda,im_lambda,multiplicity,residual",
            xi_header(d)
        )?;
        for b in &self.branches {
            for s in &b.samples {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    join17(&s.xi),
                    b.id,
                    fmt17(s.lambda.re),
                    fmt17(s.lambda.im),
                    s.multiplicity,
                    fmt17(s.residual)
                )?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn scan_point(
    grid: &MomentumGrid,
    xi: &[f64],
    p: &BandPoint,
    theta: C64,
    opts: &BandOptions,
) -> Result<Vec<(C64, usize, f64)>> {
    let t = threshold_set(&p.pair, &p.fiber_xi, grid)?;
    for &v in &t.critical_values {
        if (v - p.rect.center).abs() < p.rect.half_width {
            return Err(Error::ThresholdCollision {
                xi: xi[0],
                threshold: v,
            });
        }
    }
    let op = deformed_operator(
        grid,
        &p.pair,
        &p.kernel,
        &p.fiber_xi,
        theta,
        &p.bounds,
        &FlowOptions::default(),
        opts.tail_tol,
    )?;
    let report = eigendecompose(&op, opts.eig_tol)?;
    let mut found = Vec::new();
    for (i, &z) in report.eigenvalues.iter().enumerate() {
        if !p.rect.contains(z, theta) || z.im.abs() > opts.imag_tol {
            continue;
        }
        let gap = report
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, w)| (w - z).norm())
            .fold(f64::INFINITY, f64::min);
        if gap <= opts.matching_tol {
            continue;
        }
        let radius = (0.5 * gap).min(0.25 * p.rect.half_width);
        let proj = riesz_projection(&op, z, radius, opts.riesz_nodes, &report.eigenvalues)?;
        found.push((z, proj.rank, report.residuals[i]));
    }
    Ok(found)
}

/// Tracks isolated real eigenvalues in the rectangle across `xi_grid`.
///
/// `scenario` supplies the operator data at each ξ. Eigenvalues are matched
/// to the nearest value at the previous ξ subject to
/// `|Δλ| ≤ band_lipschitz·|Δξ|`; an unmatched eigenvalue opens a new branch and
/// records a gap.
pub fn band_sweep<F>(
    grid: &MomentumGrid,
    xi_grid: &[Vec<f64>],
    theta: C64,
    scenario: F,
    opts: &BandOptions,
) -> Result<BandData>
where
    F: Fn(&[f64]) -> Result<BandPoint> + Sync,
{
    let per_xi: Vec<Vec<(C64, usize, f64)>> = xi_grid
        .par_iter()
        .map(|xi| scan_point(grid, xi, &scenario(xi)?, theta, opts))
        .collect::<Result<_>>()?;
    let mut branches: Vec<Branch> = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    let mut gaps = Vec::new();
    for (idx, found) in per_xi.iter().enumerate() {
        let mut next_open = Vec::new();
        let mut taken = vec![false; found.len()];
        for &b in &open {
            let last = branches[b].samples.last().unwrap();
            let dxi = xi_grid[idx]
                .iter()
                .zip(&last.xi)
                .map(|(a, c)| (a - c).powi(2))
                .sum::<f64>()
                .sqrt();
            let guard = opts.band_lipschitz * dxi + opts.matching_tol;
            let candidates: Vec<usize> = (0..found.len())
                .filter(|&i| !taken[i] && (found[i].0 - last.lambda).norm() <= guard)
                .collect();
            let best = candidates.iter().copied().min_by(|&x, &y| {
                (found[x].0 - last.lambda)
                    .norm()
                    .total_cmp(&(found[y].0 - last.lambda).norm())
            });
            if let Some(i) = best {
                let d0 = (found[i].0 - last.lambda).norm();
                if candidates.iter().any(|&j| {
                    j != i && ((found[j].0 - last.lambda).norm() - d0).abs() <= opts.matching_tol
                }) {
                    return Err(Error::MatchingAmbiguous(last.lambda));
                }
                taken[i] = true;
                branches[b].samples.push(BandSample {
                    xi_index: idx,
                    xi: xi_grid[idx].clone(),
                    lambda: found[i].0,
                    multiplicity: found[i].1,
                    residual: found[i].2,
                });
                next_open.push(b);
            } else {
                gaps.push(idx);
            }
        }
        for (i, f) in found.iter().enumerate() {
            if taken[i] {
                continue;
            }
            if idx > 0 {
                gaps.push(idx);
            }
            branches.push(Branch {
                id: branches.len(),
                samples: vec![BandSample {
                    xi_index: idx,
                    xi: xi_grid[idx].clone(),
                    lambda: f.0,
                    multiplicity: f.1,
                    residual: f.2,
                }],
            });
            next_open.push(branches.len() - 1);
        }
        open = next_open;
    }
    gaps.sort_unstable();
    gaps.dedup();
    Ok(BandData {
        xi_grid: xi_grid.to_vec(),
        branches,
        matching_tol: opts.matching_tol,
        band_lipschitz: opts.band_lipschitz,
        gaps,
        found: per_xi
            .into_iter()
            .map(|f| f.into_iter().map(|x| x.0).collect())
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialFit {
    pub degree: usize,
    /// Coefficients in powers of `ξ - ξ_mid`.
    pub coefficients: Vec<f64>,
    pub center: f64,
    /// Largest absolute residual.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuiseuxFit {
    pub xi0: f64,
    /// Residual of `c₀ + c₁s + c₂s²`, `s = |ξ - ξ₀|^{1/ℓ}`, for ℓ = 1, 2, 3.
    pub residuals: Vec<(usize, f64)>,
    pub best_ell: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub branch_id: usize,
    pub fit: PolynomialFit,
    pub residual_by_degree: Vec<(usize, f64)>,
    pub puiseux: Option<PuiseuxFit>,
}

fn lstsq(rows: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let m = rows.len();
    let n = rows[0].len();
    let a = Mat::from_fn(m, n, |i, j| rows[i][j]);
    let b = Mat::from_fn(m, 1, |i, _| y[i]);
    let x = a.qr().solve_lstsq(b.as_ref());
    let c: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    let res = rows
        .iter()
        .zip(y)
        .map(|(r, &v)| (r.iter().zip(&c).map(|(p, q)| p * q).sum::<f64>() - v).abs())
        .fold(0.0, f64::max);
    if !res.is_finite() {
        return Err(Error::NonFinite("least-squares fit".into()));
    }
    Ok((c, res))
}

/// Least-squares polynomial of the given degree through `(x, y)`.
pub fn polynomial_fit(x: &[f64], y: &[f64], degree: usize) -> Result<PolynomialFit> {
    if x.len() < degree + 3 || x.len() != y.len() {
        return Err(Error::InsufficientPoints {
            have: x.len(),
            need: degree + 3,
        });
    }
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let center = 0.5 * (lo + hi);
    let scale = (0.5 * (hi - lo)).max(f64::MIN_POSITIVE);
    let rows: Vec<Vec<f64>> = x
        .iter()
        .map(|&t| {
            (0..=degree)
                .map(|p| ((t - center) / scale).powi(p as i32))
                .collect()
        })
        .collect();
    let (c, residual) = lstsq(&rows, y)?;
    let coefficients = c
        .iter()
        .enumerate()
        .map(|(p, v)| v / scale.powi(p as i32))
        .collect();
    Ok(PolynomialFit {
        degree,
        coefficients,
        center,
        residual,
    })
}

/// Chooses ℓ ∈ {1, 2, 3} for `λ ≈ c₀ + c₁s + c₂s²` with `s = |ξ - ξ₀|^{1/ℓ}`.
pub fn puiseux_fit(x: &[f64], y: &[f64], xi0: f64) -> Result<PuiseuxFit> {
    if x.len() < 5 || x.len() != y.len() {
        return Err(Error::InsufficientPoints {
            have: x.len(),
            need: 5,
        });
    }
    let mut residuals = Vec::new();
    for ell in 1..=3usize {
        let rows: Vec<Vec<f64>> = x
            .iter()
            .map(|&t| {
                let s = (t - xi0).abs().powf(1.0 / ell as f64);
                vec![1.0, s, s * s]
            })
            .collect();
        residuals.push((ell, lstsq(&rows, y)?.1));
    }
    let best_ell = residuals
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|r| r.0)
        .unwrap();
    Ok(PuiseuxFit {
        xi0,
        residuals,
        best_ell,
    })
}

/// Polynomial fits of `Re λ(ξ₁)` on one branch for degrees `0..=degree`, plus a
/// Puiseux fit when another branch comes within `10·matching_tol`.
pub fn branch_regularity(band: &BandData, branch_id: usize, degree: usize) -> Result<FitReport> {
    let branch = band
        .branches
        .iter()
        .find(|b| b.id == branch_id)
        .ok_or_else(|| invalid(format!("no branch {branch_id}")))?;
    let x: Vec<f64> = branch.samples.iter().map(|s| s.xi[0]).collect();
    let y: Vec<f64> = branch.samples.iter().map(|s| s.lambda.re).collect();
    let fit = polynomial_fit(&x, &y, degree)?;
    let mut residual_by_degree = Vec::new();
    for p in 0..=degree {
        residual_by_degree.push((p, polynomial_fit(&x, &y, p)?.residual));
    }
    let mut meeting = None;
    for s in &branch.samples {
        for other in band.branches.iter().filter(|b| b.id != branch_id) {
            for o in other.samples.iter().filter(|o| o.xi_index == s.xi_index) {
                if (o.lambda - s.lambda).norm() <= 10.0 * band.matching_tol {
                    meeting = Some(s.xi[0]);
                }
            }
        }
    }
    let puiseux = match meeting {
        Some(xi0) => {
            let side: Vec<usize> = (0..x.len()).filter(|&i| x[i] >= xi0).collect();
            let pick = if side.len() >= 5 {
                side
            } else {
                (0..x.len()).filter(|&i| x[i] <= xi0).collect()
            };
            let xs: Vec<f64> = pick.iter().map(|&i| x[i]).collect();
            let ys: Vec<f64> = pick.iter().map(|&i| y[i]).collect();
            puiseux_fit(&xs, &ys, xi0).ok()
        }
        None => None,
    };
    Ok(FitReport {
        branch_id,
        fit,
        residual_by_degree,
        puiseux,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::DispersionSpec;

    fn seeds() -> MomentumGrid {
        MomentumGrid::new(3.0, 61, 1).unwrap()
    }

    #[test]
    fn square_pair_threshold() {
        let pair = DispersionPair::new(
            DispersionSpec::square(1, 0.5),
            DispersionSpec::square(1, 0.5),
        )
        .unwrap();
        for xi in [-1.3, 0.0, 0.7, 2.0] {
            let t = threshold_set(&pair, &[xi], &seeds()).unwrap();
            assert_eq!(t.critical_values.len(), 1);
            assert!((t.critical_values[0] - xi * xi / 2.0).abs() < 1e-12);
            assert!((t.critical_points[0][0] - xi / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quartic_and_double_well() {
        let quartic = DispersionPair::new(
            DispersionSpec::zero(1, 0.5),
            DispersionSpec::quartic(1, 0.5, [0.0, 0.0]),
        )
        .unwrap();
        let t = threshold_set(&quartic, &[0.4], &seeds()).unwrap();
        assert_eq!(t.critical_values, vec![0.0]);
        let well = DispersionPair::new(
            DispersionSpec::zero(1, 0.5),
            DispersionSpec::quartic(1, 0.5, [0.0, -2.0]),
        )
        .unwrap();
        let t = threshold_set(&well, &[0.0], &seeds()).unwrap();
        assert_eq!(t.critical_values.len(), 2);
        assert!((t.critical_values[0] + 1.0).abs() < 1e-12 && t.critical_values[1].abs() < 1e-12);
        assert_eq!(t.critical_points.len(), 3);
    }

    #[test]
    fn fits() {
        let x: Vec<f64> = (0..11).map(|i| 0.5 + 0.1 * i as f64).collect();
        let sq: Vec<f64> = x.iter().map(|t| t * t).collect();
        assert!(polynomial_fit(&x, &sq, 2).unwrap().residual <= 1e-10);
        let c = vec![0.3; 11];
        assert!(polynomial_fit(&x, &c, 0).unwrap().residual <= 1e-12);
        assert!(matches!(
            polynomial_fit(&x[..4], &sq[..4], 2),
            Err(Error::InsufficientPoints { .. })
        ));
        let xs: Vec<f64> = (1..=12).map(|i| 1.0 + 0.05 * i as f64).collect();
        let root: Vec<f64> = xs.iter().map(|t| (t - 1.0f64).sqrt()).collect();
        assert_eq!(puiseux_fit(&xs, &root, 1.0).unwrap().best_ell, 2);
    }
}
