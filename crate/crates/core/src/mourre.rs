//! The commutator `i[H(ξ), A_{ξ₀}]` on the grid, Mourre constants on an
//! energy shell, the inequality check and virial values.

use faer::Mat;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::{DispersionPair, FieldBounds};
use crate::error::{invalid, Error, Result};
use crate::flow::{build_flow_table, ComplexTime, FlowOptions};
use crate::grid::MomentumGrid;
use crate::linalg::{self, CMat};
use crate::operator::{assemble_h, assemble_h_theta, FiberOperator};
use crate::potential::FourierKernel;
use crate::thresholds::ThresholdSet;

#[derive(Clone, Debug)]
pub struct CommutatorMatrix {
    pub matrix: CMat,
    /// `v_{ξ₀}(k_i)·∇ω_ξ(k_i)`
    pub multiplication: Vec<f64>,
    pub potential: CMat,
    pub xi: Vec<f64>,
    pub xi0: Vec<f64>,
    pub grid: MomentumGrid,
    pub norm: f64,
    pub hermiticity_defect: f64,
}

/// `i[H(ξ), A_{ξ₀}]` with kernel
/// `g(k)δ + κ(k'-k)(w₀(k) + w₀(k')) + ∇κ(k'-k)·(v(k') - v(k))`,
/// `κ = (2π)^{-d/2}Δk^d V̂`, `w₀ = ½∇·v_{ξ₀}`.
pub fn assemble_commutator(
    grid: &MomentumGrid,
    pair: &DispersionPair,
    kernel: &FourierKernel,
    xi: &[f64],
    xi0: &[f64],
) -> Result<CommutatorMatrix> {
    let d = grid.dim;
    if pair.dim() != d || kernel.dim() != d || xi.len() != d || xi0.len() != d {
        return Err(invalid(
            "grid, dispersion, potential, xi and xi0 dimensions must agree",
        ));
    }
    let nodes = grid.nodes();
    let n = nodes.len();
    let mut v = vec![0.0; n * d];
    let mut w0 = vec![0.0; n];
    let mut multiplication = vec![0.0; n];
    for (i, k) in nodes.iter().enumerate() {
        let kc: Vec<C64> = k.iter().map(|&x| C64::new(x, 0.0)).collect();
        let field = pair.vector_field(xi0, &kc)?;
        let grad = pair.gradient(xi, &kc)?;
        w0[i] = 0.5 * pair.divergence(xi0, &kc)?.re;
        multiplication[i] = field.iter().zip(&grad).map(|(a, b)| a.re * b.re).sum();
        for a in 0..d {
            v[i * d + a] = field[a].re;
        }
    }
    let factor = (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0) * grid.cell_volume();
    let entry = |i: usize, j: usize, kap: C64, grad: &[C64]| -> C64 {
        let mut z = kap * (w0[i] + w0[j]);
        for a in 0..d {
            z += grad[a] * (v[j * d + a] - v[i * d + a]);
        }
        z * factor
    };
    let potential = if kernel.spec.is_zero() {
        Mat::zeros(n, n)
    } else if d == 1 {
        let h = grid.spacing();
        let table: Vec<(C64, C64)> = (0..2 * n - 1)
            .into_par_iter()
            .map(|m| {
                let z = [C64::new((m as f64 - (n - 1) as f64) * h, 0.0)];
                (kernel.vhat_unchecked(&z), kernel.grad_vhat_unchecked(&z)[0])
            })
            .collect();
        Mat::from_fn(n, n, |i, j| {
            let (kap, g) = table[j + n - 1 - i];
            entry(i, j, kap, &[g])
        })
    } else {
        let cols: Vec<Vec<C64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                (0..n)
                    .map(|i| {
                        let z: Vec<C64> = (0..d)
                            .map(|a| C64::new(nodes[j][a] - nodes[i][a], 0.0))
                            .collect();
                        let kap = kernel.vhat_unchecked(&z);
                        let g = kernel.grad_vhat_unchecked(&z);
                        entry(i, j, kap, &g)
                    })
                    .collect()
            })
            .collect();
        Mat::from_fn(n, n, |i, j| cols[j][i])
    };
    let mut matrix = potential.clone();
    for (i, g) in multiplication.iter().enumerate() {
        matrix[(i, i)] += *g;
    }
    let norm = linalg::inf_norm(matrix.as_ref());
    if !norm.is_finite() {
        return Err(Error::NonFinite("commutator".into()));
    }
    let hermiticity_defect = (linalg::adjoint(matrix.as_ref()) - &matrix).norm_max();
    Ok(CommutatorMatrix {
        matrix,
        multiplication,
        potential,
        xi: xi.to_vec(),
        xi0: xi0.to_vec(),
        grid: grid.clone(),
        norm,
        hermiticity_defect,
    })
}

/// `(H^{(h)} - H)/h` where `H^{(h)}` is assembled from the real-time flow of
/// `v_ξ` at time `h`.
pub fn flow_difference(
    grid: &MomentumGrid,
    pair: &DispersionPair,
    kernel: &FourierKernel,
    xi: &[f64],
    bounds: &FieldBounds,
    h: f64,
    tail_tol: f64,
) -> Result<CMat> {
    let h0 = assemble_h(grid, pair, kernel, xi, tail_tol)?;
    let time = ComplexTime::new(C64::new(h, 0.0), bounds)?;
    let flow = build_flow_table(pair, grid, xi, &time, bounds, &FlowOptions::default())?;
    let ht = assemble_h_theta(grid, pair, kernel, xi, &flow, bounds, tail_tol)?;
    Ok((&ht.matrix - &h0.matrix) * faer::Scale(C64::new(1.0 / h, 0.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MourreReport {
    pub lambda: f64,
    pub xi: Vec<f64>,
    pub xi0: Vec<f64>,
    pub e: f64,
    pub kappa: f64,
    pub c_upper: f64,
    pub compact_norm: f64,
    pub virial_residuals: Vec<f64>,
    pub threshold_distance: f64,
    /// Shell point where `e` is attained.
    pub argmin: Vec<f64>,
    /// Point where `c_upper` is attained.
    pub argmax: Vec<f64>,
    pub shell_samples: usize,
    /// No known eigenvalue within `κ` of `λ`, so `K = 0` may be chosen.
    pub k_free: bool,
}

fn fine_nodes(grid: &MomentumGrid) -> Vec<Vec<f64>> {
    let refine = if grid.dim == 1 { 16 } else { 4 };
    let m = (grid.points - 1) * refine + 1;
    let step = 2.0 * grid.cutoff / (m - 1) as f64;
    let axis: Vec<f64> = (0..m).map(|i| -grid.cutoff + step * i as f64).collect();
    crate::dispersion::tensor(&vec![axis; grid.dim])
}

/// `e` and `C` on the shell `|ω_ξ - λ| ≤ 2κ` with `κ = dist(λ, T(ξ))/4`,
/// sampled on a refinement of the grid.
pub fn shell_constants(
    grid: &MomentumGrid,
    pair: &DispersionPair,
    lambda: f64,
    xi: &[f64],
    kappa: f64,
) -> Result<(f64, Vec<f64>, f64, Vec<f64>, usize)> {
    let samples: Vec<(Vec<f64>, f64, f64)> = fine_nodes(grid)
        .into_par_iter()
        .map(|k| {
            let kc: Vec<C64> = k.iter().map(|&x| C64::new(x, 0.0)).collect();
            let w = pair.omega_xi(xi, &kc)?.re;
            let g = pair.commutator_symbol(xi, &k)?;
            Ok((k, w, g))
        })
        .collect::<Result<_>>()?;
    let mut e = (f64::INFINITY, Vec::new());
    let mut c = (0.0, Vec::new());
    let mut count = 0;
    for (k, w, g) in samples {
        if g > c.0 {
            c = (g, k.clone());
        }
        if (w - lambda).abs() <= 2.0 * kappa {
            count += 1;
            if g < e.0 {
                e = (g, k);
            }
        }
    }
    if count == 0 {
        return Err(Error::NotApplicable(format!(
            "energy shell around {lambda} is empty on the grid"
        )));
    }
    Ok((e.0, e.1, c.0, c.1, count))
}

/// Mourre constants at `(λ, ξ)` with the dilation taken at `ξ₀ = ξ`.
pub fn extract_constants(
    grid: &MomentumGrid,
    pair: &DispersionPair,
    kernel: &FourierKernel,
    lambda: f64,
    xi: &[f64],
    thresholds: &ThresholdSet,
    known_eigenvalues: &[f64],
) -> Result<MourreReport> {
    let distance = thresholds.distance(lambda);
    if !(distance > 1e-8 * (1.0 + lambda.abs())) {
        return Err(Error::ThresholdTooClose { distance });
    }
    let kappa = distance / 4.0;
    let (e, argmin, c_upper, argmax, shell_samples) =
        shell_constants(grid, pair, lambda, xi, kappa)?;
    let comm = assemble_commutator(grid, pair, kernel, xi, xi)?;
    let compact_norm = linalg::spectral_norm(comm.potential.as_ref(), 11);
    Ok(MourreReport {
        lambda,
        xi: xi.to_vec(),
        xi0: xi.to_vec(),
        e,
        kappa,
        c_upper,
        compact_norm,
        virial_residuals: Vec::new(),
        threshold_distance: distance,
        argmin,
        argmax,
        shell_samples,
        k_free: known_eigenvalues
            .iter()
            .all(|&m| (m - lambda).abs() > kappa),
    })
}

/// `⟨ψ, i[H,A]ψ⟩` for each normalized vector.
pub fn virial_check(commutator: &CommutatorMatrix, eigenvectors: &[Vec<C64>]) -> Vec<f64> {
    eigenvectors
        .iter()
        .map(|psi| {
            let mut p = psi.clone();
            linalg::normalize(&mut p);
            let cp = linalg::matvec(commutator.matrix.as_ref(), &p);
            p.iter().zip(&cp).map(|(a, b)| a.conj() * b).sum::<C64>().re
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub margin: f64,
    pub e: f64,
    pub kappa: f64,
    pub c_upper: f64,
    /// Rank of the eigenprojection `P₀` included in `S`.
    pub p0_rank: usize,
    pub window_rank: usize,
}

/// Smallest eigenvalue of `S = i[H,A] - e + C·Q⟨H⟩ + C·P₀`, with `Q` the spectral
/// projection of `H` onto `|λ' - λ| > κ` and `P₀` the projection onto the
/// eigenvectors with eigenvalue within `p0_tol` of `λ` (omitted when `None`).
pub fn mourre_inequality_check(
    commutator: &CommutatorMatrix,
    h: &FiberOperator,
    report: &MourreReport,
    p0_tol: Option<f64>,
) -> Result<InequalityReport> {
    let n = h.dim();
    if commutator.matrix.nrows() != n || h.theta != C64::new(0.0, 0.0) {
        return Err(invalid(
            "inequality check needs the undeformed operator on the commutator grid",
        ));
    }
    let (vals, vecs) = linalg::hermitian_eigen(h.matrix.as_ref())?;
    let diameter = vals[n - 1] - vals[0];
    if report.kappa > diameter {
        return Err(invalid(format!(
            "kappa {} exceeds the spectral diameter {diameter}",
            report.kappa
        )));
    }
    let mut weights = vec![0.0; n];
    let mut p0_rank = 0;
    let mut window_rank = 0;
    for (i, &l) in vals.iter().enumerate() {
        if (l - report.lambda).abs() > report.kappa {
            weights[i] += report.c_upper * (1.0 + l * l).sqrt();
        } else {
            window_rank += 1;
        }
        if p0_tol.is_some_and(|t| (l - report.lambda).abs() <= t) {
            weights[i] += report.c_upper;
            p0_rank += 1;
        }
    }
    let scaled = Mat::from_fn(n, n, |i, j| vecs[(i, j)] * weights[j]);
    let mut s = &commutator.matrix + &scaled * vecs.adjoint();
    for i in 0..n {
        s[(i, i)] -= report.e;
    }
    let sym = Mat::from_fn(n, n, |i, j| (s[(i, j)] + s[(j, i)].conj()) * 0.5);
    let (ev, _) = linalg::hermitian_eigen(sym.as_ref())?;
    Ok(InequalityReport {
        margin: ev[0],
        e: report.e,
        kappa: report.kappa,
        c_upper: report.c_upper,
        p0_rank,
        window_rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::DispersionSpec;
    use crate::operator::DEFAULT_TAIL_TOL;
    use crate::potential::{certify_decay, strip_sample, PotentialSpec};
    use crate::thresholds::threshold_set;

    fn pair() -> DispersionPair {
        DispersionPair::new(
            DispersionSpec::square(1, 0.5),
            DispersionSpec::square(1, 0.5),
        )
        .unwrap()
    }

    fn gaussian(amplitude: f64) -> FourierKernel {
        certify_decay(
            &PotentialSpec::gaussian(1, amplitude, 0.5),
            1.0,
            &strip_sample(1, 1.0, 20.0, 400, 3),
        )
        .unwrap()
    }

    #[test]
    fn free_commutator_is_g() {
        let grid = MomentumGrid::new(6.0, 61, 1).unwrap();
        let free = certify_decay(&PotentialSpec::zero(1), 0.5, &[]).unwrap();
        let c = assemble_commutator(&grid, &pair(), &free, &[0.3], &[0.3]).unwrap();
        for (i, k) in grid.axis().into_iter().enumerate() {
            let g = (-k * k - 0.09f64).exp() * (4.0 * k - 0.6).powi(2);
            assert!((c.matrix[(i, i)].re - g).abs() <= 1e-13 * (1.0 + g));
        }
        assert_eq!(c.potential.norm_max(), 0.0);
    }

    #[test]
    fn commutator_is_hermitian_and_matches_flow_difference() {
        let grid = MomentumGrid::new(8.0, 81, 1).unwrap();
        let kernel = gaussian(-0.5);
        let bounds = pair().certify_bounds(&[(0.0, 0.0)], 0.5, 0.05).unwrap();
        let c = assemble_commutator(&grid, &pair(), &kernel, &[0.0], &[0.0]).unwrap();
        assert!(c.hermiticity_defect <= 1e-12 * c.norm);
        let err = |h: f64| {
            let fd = flow_difference(
                &grid,
                &pair(),
                &kernel,
                &[0.0],
                &bounds,
                h,
                DEFAULT_TAIL_TOL,
            )
            .unwrap();
            (&fd - &c.matrix).norm_max()
        };
        let (e3, e4) = (err(1e-3), err(1e-4));
        assert!(e4 < 0.2 * e3 && e3 < 1e-1, "{e3} {e4}");
    }

    #[test]
    fn shell_minimum_matches_oracle() {
        let grid = MomentumGrid::new(6.0, 121, 1).unwrap();
        let t = threshold_set(&pair(), &[0.0], &grid).unwrap();
        let r = extract_constants(&grid, &pair(), &gaussian(-0.5), 1.0, &[0.0], &t, &[]).unwrap();
        assert_eq!(r.kappa, 0.25);
        // shell 2k² ∈ [0.5, 1.5]; 16k²e^{-k²} is increasing there, min at k² = 1/4
        let oracle = (0..=100000)
            .map(|i| 0.25 + 0.5 * i as f64 / 100000.0)
            .map(|q: f64| 16.0 * q * (-q).exp())
            .fold(f64::INFINITY, f64::min);
        assert!((r.e - oracle).abs() <= 1e-3 * oracle, "{} {oracle}", r.e);
        assert!(r.e > 0.0 && r.e <= r.c_upper);
        assert!(r.k_free);
        assert!(matches!(
            extract_constants(&grid, &pair(), &gaussian(-0.5), 0.0, &[0.0], &t, &[]),
            Err(Error::ThresholdTooClose { .. })
        ));
    }

    #[test]
    fn free_inequality_and_negative_control() {
        let grid = MomentumGrid::new(6.0, 121, 1).unwrap();
        let free = certify_decay(&PotentialSpec::zero(1), 0.5, &[]).unwrap();
        let t = threshold_set(&pair(), &[0.0], &grid).unwrap();
        let mut r = extract_constants(&grid, &pair(), &free, 1.0, &[0.0], &t, &[]).unwrap();
        let c = assemble_commutator(&grid, &pair(), &free, &[0.0], &[0.0]).unwrap();
        let h = assemble_h(&grid, &pair(), &free, &[0.0], DEFAULT_TAIL_TOL).unwrap();
        assert!(mourre_inequality_check(&c, &h, &r, None).unwrap().margin >= -1e-10);
        r.e *= 10.0;
        assert!(mourre_inequality_check(&c, &h, &r, None).unwrap().margin < -1.0);
        r.kappa = 1e6;
        assert!(mourre_inequality_check(&c, &h, &r, None).is_err());
    }

    #[test]
    fn virial_on_bound_state() {
        let grid = MomentumGrid::new(8.0, 161, 1).unwrap();
        let kernel = gaussian(-3.0);
        let h = assemble_h(&grid, &pair(), &kernel, &[0.0], DEFAULT_TAIL_TOL).unwrap();
        let (vals, vecs) = linalg::hermitian_eigen(h.matrix.as_ref()).unwrap();
        assert!(vals[0] < 0.0);
        let c = assemble_commutator(&grid, &pair(), &kernel, &[0.0], &[0.0]).unwrap();
        let psi: Vec<C64> = (0..h.dim()).map(|i| vecs[(i, 0)]).collect();
        let random = linalg::random_unit(h.dim(), 9);
        let v = virial_check(&c, &[psi, random]);
        let cn = linalg::spectral_norm(c.matrix.as_ref(), 1);
        assert!(v[0].abs() <= 1e-6 * cn, "{} {cn}", v[0]);
        assert!(v[1].abs() > 1e-3 * cn);
    }
}
