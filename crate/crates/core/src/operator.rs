//! Discretized fiber operators `H(ξ) = ω_ξ + T_V` and their deformations `H_θ(ξ)`.
//!
//! On the grid, `T_V` has kernel `(2π)^{-d/2} V̂(k' - k) Δk^d`, so it is the
//! quadrature of multiplication by `V`. The deformed operator reads
//! `ω_ξ(γ(k)) δ + (2π)^{-d/2} Δk^d √J(k) V̂(γ(k') - γ(k)) √J(k')` with `γ`, `J`
//! taken at flow time `-θ`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use faer::Mat;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::{DispersionPair, FieldBounds};
use crate::error::{invalid, Error, Result};
use crate::flow::{build_deformation_flow, FlowOptions, FlowTable};
use crate::grid::MomentumGrid;
use crate::linalg::{self, CMat};
use crate::potential::{decay_integral, FourierKernel};

/// Default relative tolerance for `|V̂(2K)| ≤ tail_tol · C_V`.
pub const DEFAULT_TAIL_TOL: f64 = 1e-10;
const MAGIC: &[u8; 8] = b"FIBEROP1";

#[derive(Clone, Debug)]
pub struct FiberOperator {
    pub matrix: CMat,
    /// Multiplication part `ω_ξ(γ(k_i))`.
    pub diagonal: Vec<C64>,
    pub xi: Vec<f64>,
    /// Momentum `ξ₀` of the dilation field used for the deformation.
    pub dilation_xi: Vec<f64>,
    pub theta: C64,
    pub grid: MomentumGrid,
    pub potential_even: bool,
    /// `‖H‖_∞`
    pub norm_estimate: f64,
    /// Largest `|V̂|` at the grid corners `±2K`.
    pub tail: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorManifest {
    pub n: usize,
    pub dim: usize,
    pub grid: MomentumGrid,
    pub xi: Vec<f64>,
    pub dilation_xi: Vec<f64>,
    pub theta: (f64, f64),
    pub potential_even: bool,
    pub norm_estimate: f64,
    pub tail: f64,
}

impl FiberOperator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `T_V^θ`, the matrix without its multiplication part.
    pub fn potential_part(&self) -> CMat {
        let mut t = self.matrix.clone();
        for (i, d) in self.diagonal.iter().enumerate() {
            t[(i, i)] -= d;
        }
        t
    }

    pub fn manifest(&self) -> OperatorManifest {
        OperatorManifest {
            n: self.dim(),
            dim: self.grid.dim,
            grid: self.grid.clone(),
            xi: self.xi.clone(),
            dilation_xi: self.dilation_xi.clone(),
            theta: (self.theta.re, self.theta.im),
            potential_even: self.potential_even,
            norm_estimate: self.norm_estimate,
            tail: self.tail,
        }
    }

    /// Binary layout: magic, `N` (u64), `d` (u64), then `N²` row-major
    /// little-endian `(re, im)` pairs. The manifest goes to a JSON sidecar.
    pub fn write(&self, path: &Path, manifest: &Path) -> Result<()> {
        let n = self.dim();
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&(n as u64).to_le_bytes())?;
        out.write_all(&(self.grid.dim as u64).to_le_bytes())?;
        for i in 0..n {
            for j in 0..n {
                let z = self.matrix[(i, j)];
                out.write_all(&z.re.to_le_bytes())?;
                out.write_all(&z.im.to_le_bytes())?;
            }
        }
        out.flush()?;
        std::fs::write(manifest, serde_json::to_string_pretty(&self.manifest())?)?;
        Ok(())
    }

    /// Reads the matrix written by [`FiberOperator::write`].
    pub fn read_matrix(path: &Path) -> Result<CMat> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 24 || &bytes[..8] != MAGIC {
            return Err(invalid("not a fiber operator file"));
        }
        let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let n = word(8) as usize;
        if bytes.len() != 24 + 16 * n * n {
            return Err(invalid("truncated fiber operator file"));
        }
        let f = |at: usize| f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        Ok(Mat::from_fn(n, n, |i, j| {
            let at = 24 + 16 * (i * n + j);
            C64::new(f(at), f(at + 8))
        }))
    }
}

/// `R = min{R̃/(C_ω+1), a'/(C_ω+1), π/(d C'_ω + 1)}`.
pub fn admissible_radius(bounds: &FieldBounds, kernel: &FourierKernel) -> f64 {
    let d = kernel.dim() as f64;
    let c = bounds.c_omega + 1.0;
    (bounds.strip_radius / c)
        .min(kernel.a_prime / c)
        .min(PI / (d * bounds.c_omega_prime + 1.0))
}

fn quadrature_factor(grid: &MomentumGrid) -> f64 {
    (2.0 * PI).powf(-(grid.dim as f64) / 2.0) * grid.cell_volume()
}

fn check_tail(grid: &MomentumGrid, kernel: &FourierKernel, tail_tol: f64) -> Result<f64> {
    let two_k = 2.0 * grid.cutoff;
    let mut probes = Vec::new();
    for axis in 0..grid.dim {
        for sign in [-1.0, 1.0] {
            let mut k = vec![C64::new(0.0, 0.0); grid.dim];
            k[axis] = C64::new(sign * two_k, 0.0);
            probes.push(k);
        }
    }
    if grid.dim > 1 {
        probes.push(vec![C64::new(two_k, 0.0); grid.dim]);
    }
    let tail = probes
        .iter()
        .map(|k| kernel.vhat_unchecked(k).norm())
        .fold(0.0, f64::max);
    if tail > tail_tol * kernel.c_v {
        return Err(Error::GridTooCoarse(format!(
            "|V̂(2K)| = {tail:.3e} exceeds {tail_tol:.1e} · C_V = {:.3e}",
            tail_tol * kernel.c_v
        )));
    }
    Ok(tail)
}

/// Fills `diag + c · s_i V̂(p_j - p_i) s_j`.
fn fill_matrix(
    points: &[C64],
    scale: &[C64],
    diagonal: &[C64],
    kernel: &FourierKernel,
    factor: f64,
    d: usize,
    symmetric: bool,
) -> CMat {
    let n = diagonal.len();
    let mut data = vec![C64::new(0.0, 0.0); n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(j, col)| {
        let pj = &points[j * d..(j + 1) * d];
        let rows = if symmetric { 0..=j } else { 0..=n - 1 };
        let mut arg = vec![C64::new(0.0, 0.0); d];
        for i in rows {
            let pi = &points[i * d..(i + 1) * d];
            for a in 0..d {
                arg[a] = pj[a] - pi[a];
            }
            col[i] = scale[i] * kernel.vhat_unchecked(&arg) * scale[j] * factor;
        }
    });
    Mat::from_fn(n, n, |i, j| {
        let mut z = if symmetric && i > j {
            data[i * n + j]
        } else {
            data[j * n + i]
        };
        if i == j {
            z += diagonal[i];
        }
        z
    })
}

/// `H(ξ)` on the grid.
pub fn assemble_h(
    grid: &MomentumGrid,
    pair: &DispersionPair,
    kernel: &FourierKernel,
    xi: &[f64],
    tail_tol: f64,
) -> Result<FiberOperator> {
    if grid.dim != pair.dim() || grid.dim != kernel.dim() || xi.len() != grid.dim {
        return Err(invalid(
            "grid, dispersion, potential and xi dimensions must agree",
        ));
    }
    let tail = check_tail(grid, kernel, tail_tol)?;
    let nodes = grid.nodes();
    let d = grid.dim;
    let n = nodes.len();
    let points: Vec<C64> = nodes.iter().flatten().map(|&x| C64::new(x, 0.0)).collect();
    let diagonal = nodes
        .iter()
        .map(|k| {
            let kc: Vec<C64> = k.iter().map(|&x| C64::new(x, 0.0)).collect();
            pair.omega_xi(xi, &kc).map(|w| C64::new(w.re, 0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let factor = quadrature_factor(grid);
    let matrix = if d == 1 {
        // Toeplitz: V̂ depends on j - i only.
        let h = grid.spacing();
        let table: Vec<C64> = (0..2 * n - 1)
            .into_par_iter()
            .map(|m| {
                kernel.vhat_unchecked(&[C64::new((m as f64 - (n - 1) as f64) * h, 0.0)]) * factor
            })
            .collect();
        Mat::from_fn(n, n, |i, j| {
            let mut z = table[j + n - 1 - i];
            if i == j {
                z += diagonal[i];
            }
            z
        })
    } else {
        let ones = vec![C64::new(1.0, 0.0); n];
        fill_matrix(
            &points,
            &ones,
            &diagonal,
            kernel,
            factor,
            d,
            kernel.is_even(),
        )
    };
    finish(
        matrix,
        diagonal,
        xi,
        xi,
        C64::new(0.0, 0.0),
        grid,
        kernel,
        tail,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish(
    matrix: CMat,
    diagonal: Vec<C64>,
    xi: &[f64],
    dilation_xi: &[f64],
    theta: C64,
    grid: &MomentumGrid,
    kernel: &FourierKernel,
    tail: f64,
) -> Result<FiberOperator> {
    let norm_estimate = linalg::inf_norm(matrix.as_ref());
    if !norm_estimate.is_finite() {
        return Err(Error::NonFinite("assembled operator".into()));
    }
    Ok(FiberOperator {
        matrix,
        diagonal,
        xi: xi.to_vec(),
        dilation_xi: dilation_xi.to_vec(),
        theta,
        grid: grid.clone(),
        potential_even: kernel.is_even(),
        norm_estimate,
        tail,
    })
}

/// `H_θ(ξ)` from a flow table at time `-θ`.
pub fn assemble_h_theta(
    grid: &MomentumGrid,
    pair: &DispersionPair,
    kernel: &FourierKernel,
    xi: &[f64],
    flow: &FlowTable,
    bounds: &FieldBounds,
    tail_tol: f64,
) -> Result<FiberOperator> {
    if &flow.grid != grid {
        return Err(invalid("flow table was built on a different grid"));
    }
    if grid.dim != pair.dim() || grid.dim != kernel.dim() || xi.len() != grid.dim {
        return Err(invalid(
            "grid, dispersion, potential and xi dimensions must agree",
        ));
    }
    let theta = -flow.time;
    let radius = admissible_radius(bounds, kernel);
    if theta.norm() >= radius {
        return Err(Error::RadiusExceeded {
            theta_abs: theta.norm(),
            radius,
        });
    }
    let reach = 2.0 * flow.diagnostics.max_imag_gamma;
    if reach >= kernel.a_prime {
        return Err(Error::StripViolation {
            context: "deformed kernel argument".into(),
            imag: reach,
            limit: kernel.a_prime,
        });
    }
    for (i, lj) in flow.log_jacobian.iter().enumerate() {
        if lj.im.abs() >= PI {
            return Err(Error::BranchFailure {
                node: i,
                arg: lj.im.abs(),
            });
        }
    }
    let tail = check_tail(grid, kernel, tail_tol)?;
    let d = grid.dim;
    let n = grid.len();
    let diagonal = (0..n)
        .map(|i| pair.omega_xi(xi, flow.gamma_at(i)))
        .collect::<Result<Vec<_>>>()?;
    let scale: Vec<C64> = (0..n).map(|i| flow.sqrt_jacobian(i)).collect();
    let matrix = fill_matrix(
        &flow.gamma,
        &scale,
        &diagonal,
        kernel,
        quadrature_factor(grid),
        d,
        kernel.is_even(),
    );
    finish(matrix, diagonal, xi, &flow.xi, theta, grid, kernel, tail)
}

/// Certifies bounds, builds the flow at `-θ` and assembles `H_θ(ξ)`.
#[allow(clippy::too_many_arguments)]
pub fn deformed_operator(
    grid: &MomentumGrid,
    pair: &DispersionPair,
    kernel: &FourierKernel,
    xi: &[f64],
    theta: C64,
    bounds: &FieldBounds,
    opts: &FlowOptions,
    tail_tol: f64,
) -> Result<FiberOperator> {
    if theta == C64::new(0.0, 0.0) {
        return assemble_h(grid, pair, kernel, xi, tail_tol);
    }
    let flow = build_deformation_flow(pair, grid, xi, theta, bounds, opts)?;
    assemble_h_theta(grid, pair, kernel, xi, &flow, bounds, tail_tol)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `‖A - B‖_∞` for the compared pair.
    pub defect: f64,
    /// `‖H‖_∞` used as the scale.
    pub scale: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `‖H_θᴴ - H_θ̄‖_∞ ≤ 1e-13 ‖H‖_∞`.
pub fn adjoint_identity(op: &FiberOperator, op_conj: &FiberOperator) -> Result<IdentityReport> {
    if op.dim() != op_conj.dim()
        || (op.theta.conj() - op_conj.theta).norm() > 1e-15 * (1.0 + op.theta.norm())
    {
        return Err(invalid("adjoint identity compares H_θ with H_θ̄"));
    }
    let diff = linalg::adjoint(op.matrix.as_ref()) - &op_conj.matrix;
    let defect = linalg::inf_norm(diff.as_ref());
    let scale = op.norm_estimate.max(op_conj.norm_estimate);
    let tolerance = 1e-13 * scale;
    Ok(IdentityReport {
        defect,
        scale,
        tolerance,
        passed: defect <= tolerance,
    })
}

/// `‖conj(H_θ) - H_θ̄‖_∞`, meaningful for any pair of operators.
pub fn conjugation_defect(op: &FiberOperator, op_conj: &FiberOperator) -> f64 {
    let n = op.dim();
    let diff = Mat::from_fn(n, n, |i, j| {
        op.matrix[(i, j)].conj() - op_conj.matrix[(i, j)]
    });
    linalg::inf_norm(diff.as_ref())
}

/// `conj(H_θ) = H_θ̄`, which needs an even potential.
pub fn conjugation_check(op: &FiberOperator, op_conj: &FiberOperator) -> Result<IdentityReport> {
    if op.dim() != op_conj.dim() {
        return Err(invalid("dimension mismatch"));
    }
    let defect = conjugation_defect(op, op_conj);
    let scale = op.norm_estimate.max(op_conj.norm_estimate);
    let tolerance = 1e-13 * scale;
    if !op.potential_even || !op_conj.potential_even {
        return Err(Error::NotApplicable(format!(
            "conjugation symmetry needs an even potential (measured defect {defect:.3e}, tolerance {tolerance:.3e})"
        )));
    }
    Ok(IdentityReport {
        defect,
        scale,
        tolerance,
        passed: defect <= tolerance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelNormReport {
    pub estimate: f64,
    pub bound: f64,
    pub passed: bool,
}

/// `‖T_V^θ‖ ≤ (2π)^{-d/2} C_V C_d e^{(d+d') C'_ω |θ|}`.
pub fn dilated_kernel_norm_check(
    op: &FiberOperator,
    bounds: &FieldBounds,
    kernel: &FourierKernel,
) -> KernelNormReport {
    let t = op.potential_part();
    let estimate = linalg::spectral_norm(t.as_ref(), 17);
    let d = op.grid.dim as f64;
    let bound = (2.0 * PI).powf(-d / 2.0)
        * kernel.c_v
        * decay_integral(op.grid.dim, kernel.d_prime)
        * ((d + kernel.d_prime as f64) * bounds.c_omega_prime * op.theta.norm()).exp();
    KernelNormReport {
        estimate,
        bound,
        passed: estimate <= bound,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeBoundReport {
    /// `‖(H_θ - H)(H + i)^{-1}‖`
    pub w_norm: f64,
    /// `(3C/2)|θ|`
    pub bound: f64,
    pub graph_ratio_min: f64,
    pub graph_ratio_max: f64,
    pub passed: bool,
}

fn resolvent_at_i(h0: &FiberOperator) -> Result<CMat> {
    let lu = linalg::lu_shifted(h0.matrix.as_ref(), C64::new(0.0, -1.0))?;
    linalg::solve_shifted(&lu, linalg::identity(h0.dim()).as_ref())
}

/// Checks `‖W_θ(H+i)^{-1}‖ ≤ (3C/2)|θ|` and graph-norm equivalence on random vectors.
pub fn relative_bound_check(
    op: &FiberOperator,
    h0: &FiberOperator,
    c_const: f64,
    samples: usize,
    seed: u64,
) -> Result<RelativeBoundReport> {
    if op.dim() != h0.dim() {
        return Err(invalid("dimension mismatch"));
    }
    let res = resolvent_at_i(h0)?;
    let w = &op.matrix - &h0.matrix;
    let b = &w * &res;
    let w_norm = linalg::spectral_norm(b.as_ref(), seed);
    let bound = 1.5 * c_const * op.theta.norm();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for s in 0..samples {
        let psi = linalg::random_unit(op.dim(), seed.wrapping_add(1 + s as u64));
        let graph = |m: &CMat| linalg::norm(&linalg::matvec(m.as_ref(), &psi)) + 1.0;
        let r = graph(&op.matrix) / graph(&h0.matrix);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(RelativeBoundReport {
        w_norm,
        bound,
        graph_ratio_min: lo,
        graph_ratio_max: hi,
        passed: w_norm <= bound && lo >= 0.5 && hi <= 2.0,
    })
}

/// `M = sup ‖H_θ(H+i)^{-1}‖` over sampled `θ` and the constant `C = max{1, M}/R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeConstant {
    pub m: f64,
    pub radius: f64,
    pub c: f64,
    pub sampled_radius: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn relative_constant(
    grid: &MomentumGrid,
    pair: &DispersionPair,
    kernel: &FourierKernel,
    xi: &[f64],
    bounds: &FieldBounds,
    samples: usize,
    opts: &FlowOptions,
    tail_tol: f64,
) -> Result<RelativeConstant> {
    let radius = admissible_radius(bounds, kernel);
    let h0 = assemble_h(grid, pair, kernel, xi, tail_tol)?;
    let res = resolvent_at_i(&h0)?;
    let sampled_radius = 0.9 * radius;
    let mut m = linalg::spectral_norm((&h0.matrix * &res).as_ref(), 5);
    for s in 0..samples.max(1) {
        let phi = 2.0 * PI * s as f64 / samples.max(1) as f64;
        let theta = C64::from_polar(sampled_radius, phi);
        let op = deformed_operator(grid, pair, kernel, xi, theta, bounds, opts, tail_tol)?;
        m = m.max(linalg::spectral_norm((&op.matrix * &res).as_ref(), 5));
    }
    Ok(RelativeConstant {
        m,
        radius,
        c: m.max(1.0) / radius,
        sampled_radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::DispersionSpec;
    use crate::potential::{certify_decay, strip_sample, PotentialSpec};

    fn setup(
        n: usize,
        amplitude: f64,
    ) -> (MomentumGrid, DispersionPair, FourierKernel, FieldBounds) {
        let grid = MomentumGrid::new(8.0, n, 1).unwrap();
        let pair = DispersionPair::new(
            DispersionSpec::square(1, 0.5),
            DispersionSpec::square(1, 0.5),
        )
        .unwrap();
        let kernel = certify_decay(
            &PotentialSpec::gaussian(1, amplitude, 0.5),
            1.0,
            &strip_sample(1, 1.0, 20.0, 400, 3),
        )
        .unwrap();
        let bounds = pair.certify_bounds(&[(0.0, 0.0)], 0.5, 0.05).unwrap();
        (grid, pair, kernel, bounds)
    }

    #[test]
    fn undeformed_is_hermitian_and_free_is_diagonal() {
        let (grid, pair, kernel, _) = setup(81, -1.0);
        let h = assemble_h(&grid, &pair, &kernel, &[0.0], DEFAULT_TAIL_TOL).unwrap();
        let herm = linalg::adjoint(h.matrix.as_ref()) - &h.matrix;
        assert!(herm.norm_max() == 0.0);
        let free = certify_decay(&PotentialSpec::zero(1), 0.5, &[]).unwrap();
        let h = assemble_h(&grid, &pair, &free, &[0.3], DEFAULT_TAIL_TOL).unwrap();
        for i in 0..h.dim() {
            for j in 0..h.dim() {
                if i != j {
                    assert_eq!(h.matrix[(i, j)], C64::new(0.0, 0.0));
                }
            }
        }
        let k = grid.axis()[5];
        assert!((h.matrix[(5, 5)].re - ((0.3 - k) * (0.3 - k) + k * k)).abs() < 1e-13);
    }

    #[test]
    fn quadrature_of_multiplication() {
        // For V = e^{-x²/2}, T_V applied to a gaussian wavepacket equals the transform of the product.
        let (grid, pair, kernel, _) = setup(161, 1.0);
        let h = assemble_h(&grid, &pair, &kernel, &[0.0], DEFAULT_TAIL_TOL).unwrap();
        let t = h.potential_part();
        let psi: Vec<C64> = grid
            .axis()
            .iter()
            .map(|&k| C64::new((-k * k / 2.0f64).exp(), 0.0))
            .collect();
        let out = linalg::matvec(t.as_ref(), &psi);
        // ψ = FT of e^{-x²/2}; Vψ = e^{-x²} whose transform is e^{-k²/4}/√2.
        for (i, &k) in grid.axis().iter().enumerate() {
            let expect = (-k * k / 4.0f64).exp() / 2.0f64.sqrt();
            assert!((out[i].re - expect).abs() < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn tail_guard() {
        let (grid, pair, _, _) = setup(81, 1.0);
        let wide = certify_decay(
            &PotentialSpec::gaussian(1, 1.0, 40.0),
            1.0,
            &strip_sample(1, 1.0, 20.0, 100, 3),
        )
        .unwrap();
        assert!(matches!(
            assemble_h(&grid, &pair, &wide, &[0.0], DEFAULT_TAIL_TOL),
            Err(Error::GridTooCoarse(_))
        ));
    }

    #[test]
    fn deformation_identities() {
        let (grid, pair, kernel, bounds) = setup(121, -1.0);
        let opts = FlowOptions::default();
        let theta = C64::new(0.02, 0.08);
        let a = deformed_operator(
            &grid,
            &pair,
            &kernel,
            &[0.0],
            theta,
            &bounds,
            &opts,
            DEFAULT_TAIL_TOL,
        )
        .unwrap();
        let b = deformed_operator(
            &grid,
            &pair,
            &kernel,
            &[0.0],
            theta.conj(),
            &bounds,
            &opts,
            DEFAULT_TAIL_TOL,
        )
        .unwrap();
        let adj = adjoint_identity(&a, &b).unwrap();
        assert!(adj.passed, "{adj:?}");
        let conj = conjugation_check(&a, &b).unwrap();
        assert!(conj.passed, "{conj:?}");
        let kn = dilated_kernel_norm_check(&a, &bounds, &kernel);
        assert!(kn.passed, "{kn:?}");
    }

    #[test]
    fn radius_guard() {
        let (grid, pair, kernel, bounds) = setup(41, -1.0);
        let r = admissible_radius(&bounds, &kernel);
        let theta = C64::new(r * 1.01, 0.0);
        let err = deformed_operator(
            &grid,
            &pair,
            &kernel,
            &[0.0],
            theta,
            &bounds,
            &FlowOptions::default(),
            DEFAULT_TAIL_TOL,
        );
        assert!(matches!(err, Err(Error::RadiusExceeded { .. })));
    }

    #[test]
    fn binary_round_trip() {
        let (grid, pair, kernel, _) = setup(21, -1.0);
        let h = assemble_h(&grid, &pair, &kernel, &[0.1], DEFAULT_TAIL_TOL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (p, m) = (dir.path().join("h.bin"), dir.path().join("h.json"));
        h.write(&p, &m).unwrap();
        let back = FiberOperator::read_matrix(&p).unwrap();
        assert_eq!(back, h.matrix);
    }
}
