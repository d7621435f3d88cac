//! Finite-dimensional checks of the abstract deformation machinery on explicit
//! Hermitian pairs `(H, A)`.

use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMat};

pub const MAX_DIM: usize = 200;

#[derive(Clone, Debug)]
pub struct MatrixPair {
    pub h: CMat,
    pub a: CMat,
    pub provenance: String,
}

fn hermitian_defect(m: &CMat) -> f64 {
    (linalg::adjoint(m.as_ref()) - m).norm_max()
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> CMat {
    let mut draw = || -> f64 { StandardNormal.sample(&mut *rng) };
    let m = Mat::from_fn(n, n, |_, _| c(draw(), draw()));
    Mat::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
}

impl MatrixPair {
    pub fn new(h: CMat, a: CMat, provenance: impl Into<String>) -> Result<Self> {
        let n = h.nrows();
        if n == 0 || n > MAX_DIM || h.ncols() != n || a.nrows() != n || a.ncols() != n {
            return Err(invalid(format!(
                "pair must be square with 1 ≤ n ≤ {MAX_DIM}"
            )));
        }
        for (name, m) in [("H", &h), ("A", &a)] {
            let scale = m.norm_max().max(1.0);
            if hermitian_defect(m) > 1e-14 * scale {
                return Err(invalid(format!("{name} is not Hermitian")));
            }
        }
        Ok(Self {
            h,
            a,
            provenance: provenance.into(),
        })
    }

    /// Standard complex normal entries, Hermitized by averaging with the adjoint.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hermitian(n, &mut rng);
        let a = random_hermitian(n, &mut rng);
        Self::new(h, a, format!("seed {seed}"))
    }

    /// `H = σ_x`, `A = σ_z`.
    pub fn pauli() -> Self {
        let z = c(0.0, 0.0);
        let o = c(1.0, 0.0);
        let h = Mat::from_fn(2, 2, |i, j| if i != j { o } else { z });
        let a = Mat::from_fn(2, 2, |i, j| {
            if i != j {
                z
            } else if i == 0 {
                o
            } else {
                -o
            }
        });
        Self {
            h,
            a,
            provenance: "pauli".into(),
        }
    }

    /// `A` a polynomial in `H`, so `[H, A] = 0`.
    pub fn commuting(n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hermitian(n, &mut rng);
        let a = &h * &h * faer::Scale(c(0.5, 0.0)) - &h;
        let a = Mat::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5);
        Self::new(h, a, format!("commuting seed {seed}"))
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }
}

fn op_norm(m: &CMat) -> f64 {
    m.singular_values()
        .map(|s| s.first().copied().unwrap_or(0.0))
        .unwrap_or(f64::NAN)
}

fn resolvent_i(h: &CMat) -> Result<CMat> {
    let lu = linalg::lu_shifted(h.as_ref(), c(0.0, -1.0))?;
    linalg::solve_shifted(&lu, linalg::identity(h.nrows()).as_ref())
}

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|j| (j as f64).ln()).sum()
}

#[derive(Clone, Debug)]
pub struct CommutatorLadder {
    pub ad: Vec<CMat>,
    /// `‖ad_k (H+i)^{-1}‖`
    pub norms: Vec<f64>,
    /// `max_k (‖ad_k (H+i)^{-1}‖ / k!)^{1/k}`
    pub growth_constant: f64,
}

impl CommutatorLadder {
    /// `R' = 1/(3C)`, infinite when `C = 0`.
    pub fn radius(&self) -> f64 {
        1.0 / (3.0 * self.growth_constant)
    }
}

/// `ad_0 = H`, `ad_{k+1} = ad_k A - A ad_k`.
pub fn ladder(pair: &MatrixPair, k_max: usize) -> Result<CommutatorLadder> {
    let res = resolvent_i(&pair.h)?;
    let mut ad = vec![pair.h.clone()];
    for k in 0..k_max {
        let next = &ad[k] * &pair.a - &pair.a * &ad[k];
        ad.push(next);
    }
    let norms: Vec<f64> = ad.par_iter().map(|m| op_norm(&(m * &res))).collect();
    let mut growth: f64 = 0.0;
    for (k, &nk) in norms.iter().enumerate().skip(1) {
        if nk > 0.0 {
            growth = growth.max(((nk.ln() - ln_factorial(k)) / k as f64).exp());
        }
    }
    Ok(CommutatorLadder {
        ad,
        norms,
        growth_constant: growth,
    })
}

#[derive(Clone, Debug)]
pub struct SeriesResult {
    pub matrix: CMat,
    pub k_max: usize,
    /// `‖H + i‖ (C|θ|)^{k_max+1} / (1 - C|θ|)`
    pub truncation_bound: f64,
}

fn check_radius(ladder: &CommutatorLadder, theta: C64) -> Result<()> {
    let radius = ladder.radius();
    if theta.norm() >= radius {
        return Err(Error::RadiusExceeded {
            theta_abs: theta.norm(),
            radius,
        });
    }
    Ok(())
}

/// `Σ_{k ≤ k_max} (-θ)^k/k! i^k ad_k`.
pub fn conjugate_series(
    pair: &MatrixPair,
    ladder: &CommutatorLadder,
    theta: C64,
    k_max: usize,
) -> Result<SeriesResult> {
    check_radius(ladder, theta)?;
    truncated_series(pair, ladder, theta, k_max)
}

/// The partial sum without the radius guard.
pub fn truncated_series(
    pair: &MatrixPair,
    ladder: &CommutatorLadder,
    theta: C64,
    k_max: usize,
) -> Result<SeriesResult> {
    if k_max >= ladder.ad.len() {
        return Err(invalid(format!(
            "ladder has {} terms, series needs {}",
            ladder.ad.len(),
            k_max + 1
        )));
    }
    let n = pair.dim();
    let mut out = Mat::zeros(n, n);
    let mut coef = c(1.0, 0.0);
    let step = -theta * c(0.0, 1.0);
    for k in 0..=k_max {
        if k > 0 {
            coef = coef * step / k as f64;
        }
        out += &ladder.ad[k] * faer::Scale(coef);
    }
    let q = ladder.growth_constant * theta.norm();
    let shift = op_norm(&linalg::shifted(pair.h.as_ref(), c(0.0, -1.0)));
    let truncation_bound = if q < 1.0 {
        shift * q.powi(k_max as i32 + 1) / (1.0 - q)
    } else {
        f64::INFINITY
    };
    Ok(SeriesResult {
        matrix: out,
        k_max,
        truncation_bound,
    })
}

/// `e^{iθA} H e^{-iθA}` from the eigendecomposition of `A`.
pub fn exponential_conjugation(pair: &MatrixPair, theta: C64) -> Result<CMat> {
    if theta == c(0.0, 0.0) {
        return Ok(pair.h.clone());
    }
    let (vals, u) = linalg::hermitian_eigen(pair.a.as_ref())?;
    let n = pair.dim();
    let plus = Mat::from_fn(n, n, |i, j| {
        u[(i, j)] * (c(0.0, 1.0) * theta * vals[j]).exp()
    });
    let minus = Mat::from_fn(n, n, |i, j| {
        u[(i, j)] * (-c(0.0, 1.0) * theta * vals[j]).exp()
    });
    Ok(&plus * u.adjoint() * &pair.h * (&minus * u.adjoint()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WThetaReport {
    /// `‖(H_θ - H)(H+i)^{-1}‖`
    pub actual: f64,
    /// `C|θ|/(1 - C|θ|)`
    pub bound: f64,
    pub ratio: f64,
    pub passed: bool,
}

pub fn w_theta_bound(
    pair: &MatrixPair,
    ladder: &CommutatorLadder,
    theta: C64,
) -> Result<WThetaReport> {
    check_radius(ladder, theta)?;
    let ht = exponential_conjugation(pair, theta)?;
    let res = resolvent_i(&pair.h)?;
    let actual = op_norm(&((&ht - &pair.h) * &res));
    let q = ladder.growth_constant * theta.norm();
    let bound = q / (1.0 - q);
    Ok(WThetaReport {
        actual,
        bound,
        ratio: if bound > 0.0 { actual / bound } else { 0.0 },
        passed: actual <= bound * (1.0 + 1e-12) + 1e-14,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorFiniteReport {
    pub eigenvalues: Vec<C64>,
    pub violations: usize,
    pub worst_margin: f64,
    pub c_const: f64,
}

/// Eigenvalues of `H_θ` against `|Im λ| ≤ 4C|θ|(|Re λ| + 1)`. With `truncation`
/// the truncated series replaces the exact conjugation.
pub fn sector_bound_finite(
    pair: &MatrixPair,
    ladder: &CommutatorLadder,
    theta: C64,
    c_const: f64,
    truncation: Option<usize>,
) -> Result<SectorFiniteReport> {
    let ht = match truncation {
        Some(k) => truncated_series(pair, ladder, theta, k)?.matrix,
        None => exponential_conjugation(pair, theta)?,
    };
    let (eigenvalues, _) = linalg::general_eigen(ht.as_ref())?;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for z in &eigenvalues {
        let margin = 4.0 * c_const * theta.norm() * (z.re.abs() + 1.0) - z.im.abs();
        worst = worst.min(margin);
        if margin < 0.0 {
            violations += 1;
        }
    }
    Ok(SectorFiniteReport {
        eigenvalues,
        violations,
        worst_margin: worst,
        c_const,
    })
}

/// `ψ_m(θ) = e^{-A²/(2m) + iθA} ψ`.
pub fn gaussian_regularize(
    pair: &MatrixPair,
    psi: &[C64],
    m: usize,
    theta: C64,
) -> Result<Vec<C64>> {
    if m == 0 || psi.len() != pair.dim() {
        return Err(invalid("need m ≥ 1 and a vector of matching length"));
    }
    let (vals, u) = linalg::hermitian_eigen(pair.a.as_ref())?;
    let mut coeffs = linalg::adjoint_matvec(u.as_ref(), psi);
    for (z, &a) in coeffs.iter_mut().zip(&vals) {
        *z *= (c(-a * a / (2.0 * m as f64), 0.0) + c(0.0, 1.0) * theta * a).exp();
    }
    Ok(linalg::matvec(u.as_ref(), &coeffs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationReport {
    pub ms: Vec<usize>,
    /// `‖ψ_m(θ) - e^{iθA}ψ‖`
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log m`.
    pub slope: f64,
}

/// Convergence of `ψ_m(θ) → e^{iθA}ψ` for real `θ`.
pub fn regularization_convergence(
    pair: &MatrixPair,
    psi: &[C64],
    theta: f64,
    ms: &[usize],
) -> Result<RegularizationReport> {
    let (vals, u) = linalg::hermitian_eigen(pair.a.as_ref())?;
    let mut coeffs = linalg::adjoint_matvec(u.as_ref(), psi);
    for (z, &a) in coeffs.iter_mut().zip(&vals) {
        *z *= c(0.0, theta * a).exp();
    }
    let limit = linalg::matvec(u.as_ref(), &coeffs);
    let errors: Vec<f64> = ms
        .iter()
        .map(|&m| {
            let v = gaussian_regularize(pair, psi, m, c(theta, 0.0))?;
            Ok(linalg::norm(
                &v.iter().zip(&limit).map(|(a, b)| a - b).collect::<Vec<_>>(),
            ))
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = ms.iter().map(|&m| (m as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    Ok(RegularizationReport {
        ms: ms.to_vec(),
        errors,
        slope,
    })
}

/// Largest relative deviation of `k!·b_k` from `(-1)^k i^k ad_k ψ`, `k = 0..=k_top`,
/// where `b_k` is the trapezoid approximation of `(2πi)^{-1}∮ H_η ψ η^{-k-1} dη`.
pub fn contour_coefficients(
    pair: &MatrixPair,
    ladder: &CommutatorLadder,
    psi: &[C64],
    radius: f64,
    nodes: usize,
    k_top: usize,
) -> Result<f64> {
    if k_top >= ladder.ad.len() {
        return Err(invalid("ladder too short for the requested coefficients"));
    }
    let samples: Vec<(C64, Vec<C64>)> = (0..nodes)
        .into_par_iter()
        .map(|j| {
            let eta = C64::from_polar(radius, 2.0 * PI * j as f64 / nodes as f64);
            let ht = exponential_conjugation(pair, eta)?;
            Ok((eta, linalg::matvec(ht.as_ref(), psi)))
        })
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    let mut fact = 1.0;
    for k in 0..=k_top {
        if k > 0 {
            fact *= k as f64;
        }
        let mut b = vec![c(0.0, 0.0); psi.len()];
        for (eta, v) in &samples {
            let w = eta.powi(-(k as i32)) / nodes as f64;
            for (bi, vi) in b.iter_mut().zip(v) {
                *bi += vi * w;
            }
        }
        let expect = linalg::matvec(ladder.ad[k].as_ref(), psi);
        let phase = (-c(0.0, 1.0)).powi(k as i32);
        let diff: Vec<C64> = b
            .iter()
            .zip(&expect)
            .map(|(x, y)| x * fact - y * phase)
            .collect();
        let scale = linalg::norm(&expect).max(f64::MIN_POSITIVE);
        worst = worst.max(linalg::norm(&diff) / scale);
    }
    Ok(worst)
}

/// Extremes of `‖(H_θ+i)ψ‖ / ‖(H+i)ψ‖` over seeded random vectors.
pub fn graph_norm_ratios(
    pair: &MatrixPair,
    theta: C64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let ht = linalg::shifted(exponential_conjugation(pair, theta)?.as_ref(), c(0.0, -1.0));
    let h = linalg::shifted(pair.h.as_ref(), c(0.0, -1.0));
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for s in 0..samples {
        let psi = linalg::random_unit(pair.dim(), seed.wrapping_add(s as u64));
        let r = linalg::norm(&linalg::matvec(ht.as_ref(), &psi))
            / linalg::norm(&linalg::matvec(h.as_ref(), &psi));
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((lo, hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub c: f64,
    pub r_prime: f64,
    pub theta: C64,
    /// `‖series - oracle‖ / ‖oracle‖`
    pub series_deviation: f64,
    /// `‖series(θ)ᴴ - series(θ̄)‖ / ‖H‖`
    pub adjoint_deviation: f64,
    pub w_ratio: f64,
    pub graph_min: f64,
    pub graph_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub n: usize,
    pub k_max: usize,
    pub fraction: f64,
    pub entries: Vec<SeedEntry>,
    pub worst_series_deviation: f64,
    pub worst_adjoint_deviation: f64,
    pub worst_w_ratio: f64,
}

/// Runs the series, adjoint, `W_θ` and graph-norm checks on seeded random pairs
/// at `θ = fraction·R'·e^{iφ}` with `φ` varying over seeds.
pub fn batch(seeds: &[u64], n: usize, k_max: usize, fraction: f64) -> Result<BatchReport> {
    let entries: Vec<SeedEntry> = seeds
        .par_iter()
        .map(|&seed| {
            let pair = MatrixPair::random(n, seed)?;
            let lad = ladder(&pair, k_max)?;
            let r_prime = lad.radius();
            let phi = 0.5 * PI + 0.37 * seed as f64;
            let theta = C64::from_polar(fraction * r_prime, phi);
            let series = conjugate_series(&pair, &lad, theta, k_max)?;
            let oracle = exponential_conjugation(&pair, theta)?;
            let series_deviation = (&series.matrix - &oracle).norm_l2() / oracle.norm_l2();
            let conj = conjugate_series(&pair, &lad, theta.conj(), k_max)?;
            let adjoint_deviation = (linalg::adjoint(series.matrix.as_ref()) - &conj.matrix)
                .norm_max()
                / pair.h.norm_max();
            let w = w_theta_bound(&pair, &lad, theta)?;
            let (graph_min, graph_max) = graph_norm_ratios(&pair, theta, 20, seed)?;
            Ok(SeedEntry {
                seed,
                c: lad.growth_constant,
                r_prime,
                theta,
                series_deviation,
                adjoint_deviation,
                w_ratio: w.ratio,
                graph_min,
                graph_max,
            })
        })
        .collect::<Result<_>>()?;
    let worst = |f: fn(&SeedEntry) -> f64| entries.iter().map(f).fold(0.0, f64::max);
    Ok(BatchReport {
        n,
        k_max,
        fraction,
        worst_series_deviation: worst(|e| e.series_deviation),
        worst_adjoint_deviation: worst(|e| e.adjoint_deviation),
        worst_w_ratio: worst(|e| e.w_ratio),
        entries,
    })
}
