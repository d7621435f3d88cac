//! Flow `γ^t` of the dilation field and its Jacobian `J^t = det ∂γ^t/∂k`.
//!
//! `log J` is integrated alongside the trajectory through `d(log J)/dt = div v`.
//! Complex times are reached along an L-shaped contour: the real part first,
//! then the imaginary part with `dy/dτ = i v(y)`.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::{DispersionPair, FieldBounds};
use crate::error::{invalid, Error, Result};
use crate::grid::MomentumGrid;
use crate::io::fmt17;

pub const DEFAULT_FLOW_TOL: f64 = 1e-12;
const MAX_STEPS: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_FLOW_TOL,
            max_steps: MAX_STEPS,
        }
    }
}

/// A flow time whose imaginary part is inside the certified radius `R̃/(C_ω+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexTime {
    pub value: C64,
    pub radius: f64,
}

impl ComplexTime {
    pub fn new(value: C64, bounds: &FieldBounds) -> Result<Self> {
        let radius = bounds.flow_radius();
        if !value.is_finite() {
            return Err(Error::NonFinite("flow time".into()));
        }
        if value.im.abs() >= radius {
            return Err(Error::RadiusExceeded {
                theta_abs: value.im.abs(),
                radius,
            });
        }
        Ok(Self { value, radius })
    }

    /// The time `-θ` whose flow deforms `H(ξ)` into `H_θ(ξ)`.
    pub fn deformation(theta: C64, bounds: &FieldBounds) -> Result<Self> {
        Self::new(-theta, bounds)
    }
}

/// Endpoint of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowPoint {
    pub gamma: Vec<C64>,
    pub log_jacobian: C64,
    pub steps: usize,
}

impl FlowPoint {
    pub fn jacobian(&self) -> C64 {
        self.log_jacobian.exp()
    }
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B_ERR: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// Integrates `dy/ds = dir·v(y)`, `d(log J)/ds = dir·div v(y)` for `s ∈ [0, length]`.
fn integrate_segment(
    pair: &DispersionPair,
    xi: &[f64],
    state: &mut [C64],
    dir: C64,
    length: f64,
    opts: &FlowOptions,
) -> Result<usize> {
    if length == 0.0 {
        return Ok(0);
    }
    let n = state.len();
    let d = n - 1;
    let strip = pair.strip_radius();
    let rhs = |y: &[C64], out: &mut [C64]| -> Result<()> {
        let div = pair.field_checked(xi, &y[..d], &mut out[..d])?;
        for z in out[..d].iter_mut() {
            *z *= dir;
        }
        out[d] = div * dir;
        Ok(())
    };
    let mut k = vec![vec![C64::new(0.0, 0.0); n]; 7];
    let mut tmp = vec![C64::new(0.0, 0.0); n];
    let mut y_new = vec![C64::new(0.0, 0.0); n];
    rhs(state, &mut k[0])?;
    let mut s = 0.0;
    let mut h = length.min(0.05);
    let mut steps = 0usize;
    let mut rejected_eval = 0usize;
    while s < length {
        if steps + rejected_eval > opts.max_steps {
            return Err(Error::ToleranceNotMet {
                context: "flow integration".into(),
                detail: format!("step budget {} exhausted at s = {s}", opts.max_steps),
            });
        }
        if s + h > length {
            h = length - s;
        }
        let mut stage_failed = false;
        for stage in 1..7 {
            for i in 0..n {
                let mut acc = state[i];
                for (j, kj) in k.iter().enumerate().take(stage) {
                    let a = A[stage][j];
                    if a != 0.0 {
                        acc += kj[i] * (a * h);
                    }
                }
                tmp[i] = acc;
            }
            if rhs(&tmp, &mut k[stage]).is_err() {
                stage_failed = true;
                break;
            }
        }
        if stage_failed {
            rejected_eval += 1;
            h *= 0.25;
            if h < 1e-14 * length {
                // Re-run at the current point to surface the underlying error.
                rhs(state, &mut tmp)?;
                return Err(Error::ToleranceNotMet {
                    context: "flow integration".into(),
                    detail: "step size underflow".into(),
                });
            }
            continue;
        }
        // The seventh stage point equals the fifth-order solution.
        y_new.copy_from_slice(&tmp);
        let mut err: f64 = 0.0;
        for i in 0..n {
            let mut e = C64::new(0.0, 0.0);
            for (j, kj) in k.iter().enumerate() {
                e += kj[i] * B_ERR[j];
            }
            let scale = opts.tol * (1.0 + state[i].norm().max(y_new[i].norm()));
            err = err.max((e * h).norm() / scale);
        }
        if !err.is_finite() {
            return Err(Error::NonFinite("flow error estimate".into()));
        }
        if err <= 1.0 {
            s += h;
            steps += 1;
            state.copy_from_slice(&y_new);
            for z in &state[..d] {
                if z.im.abs() >= strip {
                    return Err(Error::StripViolation {
                        context: "flow trajectory".into(),
                        imag: z.im.abs(),
                        limit: strip,
                    });
                }
            }
            let last = k[6].clone();
            k[0] = last;
        } else {
            rejected_eval += 1;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h < 1e-14 * length && s < length {
            return Err(Error::ToleranceNotMet {
                context: "flow integration".into(),
                detail: "step size underflow".into(),
            });
        }
    }
    Ok(steps)
}

/// Flow to a complex time along the L-shaped contour, starting from a complex point.
pub fn flow_from(
    pair: &DispersionPair,
    xi: &[f64],
    k: &[C64],
    time: C64,
    opts: &FlowOptions,
) -> Result<FlowPoint> {
    let d = pair.dim();
    if k.len() != d || xi.len() != d {
        return Err(invalid("flow start point dimension mismatch"));
    }
    if !(opts.tol > 0.0) {
        return Err(invalid("flow tolerance must be positive"));
    }
    let mut state: Vec<C64> = k.to_vec();
    state.push(C64::new(0.0, 0.0));
    let mut steps = integrate_segment(
        pair,
        xi,
        &mut state,
        C64::new(time.re.signum(), 0.0),
        time.re.abs(),
        opts,
    )?;
    steps += integrate_segment(
        pair,
        xi,
        &mut state,
        C64::new(0.0, time.im.signum()),
        time.im.abs(),
        opts,
    )?;
    let log_jacobian = state.pop().unwrap();
    Ok(FlowPoint {
        gamma: state,
        log_jacobian,
        steps,
    })
}

/// Real-time flow from a real point: `(γ^t(k), J^t(k))`.
pub fn integrate_real(
    pair: &DispersionPair,
    xi: &[f64],
    k: &[f64],
    t: f64,
    opts: &FlowOptions,
) -> Result<(Vec<f64>, f64)> {
    let kc: Vec<C64> = k.iter().map(|&x| C64::new(x, 0.0)).collect();
    let p = flow_from(pair, xi, &kc, C64::new(t, 0.0), opts)?;
    Ok((
        p.gamma.iter().map(|z| z.re).collect(),
        p.log_jacobian.re.exp(),
    ))
}

/// Analytic continuation `γ^θ(k)`, `J^θ(k)` for a certified complex time.
pub fn continue_complex(
    pair: &DispersionPair,
    xi: &[f64],
    k: &[f64],
    time: &ComplexTime,
    opts: &FlowOptions,
) -> Result<FlowPoint> {
    let kc: Vec<C64> = k.iter().map(|&x| C64::new(x, 0.0)).collect();
    flow_from(pair, xi, &kc, time.value, opts)
}

/// Worst-case margins of a flow table against its certified envelopes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowDiagnostics {
    pub max_imag_gamma: f64,
    pub imag_bound: f64,
    pub max_displacement: f64,
    pub displacement_bound: f64,
    pub max_abs_jacobian: f64,
    pub jacobian_bound: f64,
    pub max_abs_arg: f64,
    pub arg_bound: f64,
    pub max_steps: usize,
}

/// `γ^t`, `J^t` at every node of a momentum grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTable {
    pub grid: MomentumGrid,
    pub xi: Vec<f64>,
    pub time: C64,
    /// Node-major, `d` entries per node.
    pub gamma: Vec<C64>,
    pub log_jacobian: Vec<C64>,
    pub tol: f64,
    pub diagnostics: FlowDiagnostics,
}

impl FlowTable {
    pub fn gamma_at(&self, i: usize) -> &[C64] {
        let d = self.grid.dim;
        &self.gamma[i * d..(i + 1) * d]
    }

    pub fn jacobian(&self, i: usize) -> C64 {
        self.log_jacobian[i].exp()
    }

    /// `√J` on the branch continued from `J = 1` at `t = 0`.
    pub fn sqrt_jacobian(&self, i: usize) -> C64 {
        (self.log_jacobian[i] * 0.5).exp()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.grid.dim;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header: Vec<String> = (0..d).map(|i| format!("k{i}")).collect();
        header.extend((0..d).map(|i| format!("re_gamma{i}")));
        header.extend((0..d).map(|i| format!("im_gamma{i}")));
        header.extend(["re_J".into(), "im_J".into(), "arg_J".into()]);
        writeln!(out, "{}", header.join(","))?;
        for (i, node) in self.grid.nodes().iter().enumerate() {
            let g = self.gamma_at(i);
            let j = self.jacobian(i);
            let mut row: Vec<String> = node.iter().map(|&x| fmt17(x)).collect();
            row.extend(g.iter().map(|z| fmt17(z.re)));
            row.extend(g.iter().map(|z| fmt17(z.im)));
            row.extend([fmt17(j.re), fmt17(j.im), fmt17(self.log_jacobian[i].im)]);
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Flows every grid node to `time` and validates the certified envelopes.
pub fn build_flow_table(
    pair: &DispersionPair,
    grid: &MomentumGrid,
    xi: &[f64],
    time: &ComplexTime,
    bounds: &FieldBounds,
    opts: &FlowOptions,
) -> Result<FlowTable> {
    if grid.dim != pair.dim() {
        return Err(invalid("grid and dispersion dimensions differ"));
    }
    let d = grid.dim;
    let nodes = grid.nodes();
    let points: Vec<FlowPoint> = nodes
        .par_iter()
        .enumerate()
        .map(|(i, k)| {
            continue_complex(pair, xi, k, time, opts).map_err(|e| Error::NodeFailure {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let t = time.value;
    let slack = 1e-9;
    let mut diag = FlowDiagnostics {
        max_imag_gamma: 0.0,
        imag_bound: bounds.c_omega * t.im.abs() + slack,
        max_displacement: 0.0,
        displacement_bound: bounds.c_omega * t.norm() + slack,
        max_abs_jacobian: 0.0,
        jacobian_bound: (d as f64 * bounds.c_omega_prime * t.norm()).exp() * (1.0 + slack),
        max_abs_arg: 0.0,
        arg_bound: d as f64 * bounds.c_omega_prime * t.im.abs() + slack,
        max_steps: 0,
    };
    let mut gamma = Vec::with_capacity(nodes.len() * d);
    let mut log_jacobian = Vec::with_capacity(nodes.len());
    for (p, k) in points.iter().zip(&nodes) {
        let disp = p
            .gamma
            .iter()
            .zip(k)
            .map(|(g, &x)| (g - x).norm_sqr())
            .sum::<f64>()
            .sqrt();
        diag.max_displacement = diag.max_displacement.max(disp);
        for g in &p.gamma {
            diag.max_imag_gamma = diag.max_imag_gamma.max(g.im.abs());
        }
        diag.max_abs_jacobian = diag.max_abs_jacobian.max(p.log_jacobian.re.exp());
        diag.max_abs_arg = diag.max_abs_arg.max(p.log_jacobian.im.abs());
        diag.max_steps = diag.max_steps.max(p.steps);
        gamma.extend_from_slice(&p.gamma);
        log_jacobian.push(p.log_jacobian);
    }
    let checks = [
        ("strip confinement", diag.max_imag_gamma, diag.imag_bound),
        (
            "speed bound",
            diag.max_displacement,
            diag.displacement_bound,
        ),
        ("jacobian bound", diag.max_abs_jacobian, diag.jacobian_bound),
        ("jacobian argument", diag.max_abs_arg, diag.arg_bound),
    ];
    for (name, value, bound) in checks {
        if value > bound {
            return Err(Error::CertificationFailure(format!(
                "flow table {name}: {value:.6e} exceeds {bound:.6e}"
            )));
        }
    }
    Ok(FlowTable {
        grid: grid.clone(),
        xi: xi.to_vec(),
        time: t,
        gamma,
        log_jacobian,
        tol: opts.tol,
        diagnostics: diag,
    })
}

/// Flow table at time `-θ`, the input for assembling `H_θ`.
pub fn build_deformation_flow(
    pair: &DispersionPair,
    grid: &MomentumGrid,
    xi: &[f64],
    theta: C64,
    bounds: &FieldBounds,
    opts: &FlowOptions,
) -> Result<FlowTable> {
    let time = ComplexTime::deformation(theta, bounds)?;
    build_flow_table(pair, grid, xi, &time, bounds, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupLawReport {
    /// `|γ^{t+s}(k) - γ^t(γ^s(k))|`
    pub group_deviation: f64,
    /// Relative deviation of `J^{t+s}(k)` from `J^t(γ^s(k)) J^s(k)`.
    pub jacobian_group_deviation: f64,
    /// `|γ^{-t}(γ^t(k)) - k|`
    pub inverse_deviation: f64,
    /// `|J^{-t}(γ^t(k)) J^t(k) - 1|`
    pub jacobian_inverse_deviation: f64,
}

pub fn check_group_and_inverse(
    pair: &DispersionPair,
    xi: &[f64],
    k: &[f64],
    t: f64,
    s: f64,
    opts: &FlowOptions,
) -> Result<GroupLawReport> {
    let kc: Vec<C64> = k.iter().map(|&x| C64::new(x, 0.0)).collect();
    let real = |v: f64| C64::new(v, 0.0);
    let ts = flow_from(pair, xi, &kc, real(t + s), opts)?;
    let s_pt = flow_from(pair, xi, &kc, real(s), opts)?;
    let t_of_s = flow_from(pair, xi, &s_pt.gamma, real(t), opts)?;
    let t_pt = flow_from(pair, xi, &kc, real(t), opts)?;
    let back = flow_from(pair, xi, &t_pt.gamma, real(-t), opts)?;
    let dist = |a: &[C64], b: &[C64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt()
    };
    Ok(GroupLawReport {
        group_deviation: dist(&ts.gamma, &t_of_s.gamma),
        jacobian_group_deviation: (ts.log_jacobian - t_of_s.log_jacobian - s_pt.log_jacobian)
            .exp_m1()
            .norm(),
        inverse_deviation: dist(&back.gamma, &kc),
        jacobian_inverse_deviation: (back.log_jacobian + t_pt.log_jacobian).exp_m1().norm(),
    })
}

/// `|k - k'| e^{-C'_ω |θ|}`, the lower bound on `|γ^θ(k) - γ^θ(k')|`.
pub fn separation_lower_bound(
    k: &[f64],
    k_prime: &[f64],
    theta_abs: f64,
    c_omega_prime: f64,
) -> f64 {
    let dist = k
        .iter()
        .zip(k_prime)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    dist * (-c_omega_prime * theta_abs).exp()
}

trait ExpM1 {
    fn exp_m1(self) -> C64;
}

impl ExpM1 for C64 {
    fn exp_m1(self) -> C64 {
        if self.norm() < 1e-5 {
            self + self * self * 0.5 + self * self * self / 6.0
        } else {
            self.exp() - 1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::DispersionSpec;

    fn square_pair() -> DispersionPair {
        DispersionPair::new(
            DispersionSpec::square(1, 0.5),
            DispersionSpec::square(1, 0.5),
        )
        .unwrap()
    }

    #[test]
    fn zero_time_is_identity() {
        let pair = square_pair();
        let p = flow_from(
            &pair,
            &[0.3],
            &[C64::new(0.7, 0.0)],
            C64::new(0.0, 0.0),
            &FlowOptions::default(),
        )
        .unwrap();
        assert_eq!(p.gamma[0], C64::new(0.7, 0.0));
        assert_eq!(p.log_jacobian, C64::new(0.0, 0.0));
    }

    #[test]
    fn fixed_point_stays_put() {
        // At ξ = 0 the field 4k e^{-k²} vanishes at the origin.
        let pair = square_pair();
        let (g, j) = integrate_real(&pair, &[0.0], &[0.0], 0.7, &FlowOptions::default()).unwrap();
        assert_eq!(g[0], 0.0);
        // J = exp(t div v(0)) = exp(4t)
        assert!((j - (4.0f64 * 0.7).exp()).abs() < 1e-9 * j);
    }

    #[test]
    fn linearised_flow_near_origin() {
        // For ω₁ ≡ 0, ω₂ = k² the field is 2k e^{-k²} ≈ 2k near 0.
        let pair =
            DispersionPair::new(DispersionSpec::zero(1, 0.5), DispersionSpec::square(1, 0.5))
                .unwrap();
        let k0 = 1e-6;
        let (g, _) = integrate_real(&pair, &[0.0], &[k0], 0.5, &FlowOptions::default()).unwrap();
        assert!((g[0] / k0 - 1.0f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn group_law_and_inverse() {
        let pair = square_pair();
        let r = check_group_and_inverse(&pair, &[0.4], &[0.9], 0.3, -0.2, &FlowOptions::default())
            .unwrap();
        assert!(r.group_deviation < 1e-10, "{r:?}");
        assert!(r.inverse_deviation < 1e-10, "{r:?}");
        assert!(r.jacobian_group_deviation < 1e-10, "{r:?}");
        assert!(r.jacobian_inverse_deviation < 1e-10, "{r:?}");
    }

    #[test]
    fn complex_time_conjugation_is_exact() {
        let pair = square_pair();
        let opts = FlowOptions::default();
        let a = flow_from(
            &pair,
            &[0.0],
            &[C64::new(0.8, 0.0)],
            C64::new(0.02, 0.1),
            &opts,
        )
        .unwrap();
        let b = flow_from(
            &pair,
            &[0.0],
            &[C64::new(0.8, 0.0)],
            C64::new(0.02, -0.1),
            &opts,
        )
        .unwrap();
        assert_eq!(a.gamma[0], b.gamma[0].conj());
        assert_eq!(a.log_jacobian, b.log_jacobian.conj());
    }

    #[test]
    fn complex_flow_agrees_with_taylor_expansion() {
        // γ^z(k) = k + z v + z²/2 v v' + O(z³)
        let pair = square_pair();
        let k = 0.6;
        let z = C64::new(0.0, 1e-3);
        let p = flow_from(
            &pair,
            &[0.0],
            &[C64::new(k, 0.0)],
            z,
            &FlowOptions::default(),
        )
        .unwrap();
        let v = 4.0 * k * (-k * k).exp();
        let dv = (4.0 - 8.0 * k * k) * (-k * k).exp();
        let approx = C64::new(k, 0.0) + z * v + z * z * 0.5 * v * dv;
        assert!((p.gamma[0] - approx).norm() < 1e-8);
    }

    #[test]
    fn imaginary_time_beyond_radius_is_rejected() {
        let pair = square_pair();
        let b = pair.certify_bounds(&[(0.0, 0.0)], 0.5, 0.05).unwrap();
        assert!(ComplexTime::new(C64::new(0.0, 0.05), &b).is_ok());
        assert!(matches!(
            ComplexTime::new(C64::new(0.0, b.flow_radius()), &b),
            Err(Error::RadiusExceeded { .. })
        ));
    }

    #[test]
    fn table_respects_envelopes() {
        let pair = square_pair();
        let b = pair.certify_bounds(&[(0.0, 0.0)], 0.5, 0.05).unwrap();
        let grid = MomentumGrid::new(6.0, 61, 1).unwrap();
        let table = build_deformation_flow(
            &pair,
            &grid,
            &[0.0],
            C64::new(0.0, 0.1),
            &b,
            &FlowOptions::default(),
        )
        .unwrap();
        assert_eq!(table.time, C64::new(-0.0, -0.1));
        let dg = &table.diagnostics;
        assert!(dg.max_imag_gamma <= dg.imag_bound);
        assert!(dg.max_abs_arg <= dg.arg_bound);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow.csv");
        table.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "k0,re_gamma0,im_gamma0,re_J,im_J,arg_J"
        );
        assert_eq!(text.lines().count(), 62);
    }
}
