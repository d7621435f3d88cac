//! Radial dispersion relations, the fiber symbol `ω_ξ(k) = ω₁(ξ − k) + ω₂(k)`
//! and the local dilation field `v_ξ(k) = e^{-k² - ξ²} ∇ω_ξ(k)`.
//!
//! Every family is a function `f` of the analytic square `q = k·k`, so
//! `∇ω = 2 f'(q) k` and `∂ᵢ∂ⱼω = 2 f'(q) δᵢⱼ + 4 f''(q) kᵢ kⱼ`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Safety factor applied to sampled suprema before they are used as bounds.
pub const SAFETY_FACTOR: f64 = 1.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Family {
    /// `Σ c_j q^j`
    EvenPolynomial { coefficients: Vec<f64> },
    /// `(1 + q)^s`, principal branch.
    Relativistic { exponent: f64 },
    /// `q² + c₁ q + c₀` with `lower = [c₀, c₁]`.
    Quartic { lower: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionSpec {
    pub family: Family,
    pub dim: usize,
    /// Half-width `R̃` of the analyticity strip; values are defined on `S_{2R̃}`.
    pub strip_radius: f64,
    /// Growth exponent `s`.
    pub growth_exponent: f64,
    /// Growth constant `C̃`.
    pub growth_constant: f64,
}

impl DispersionSpec {
    pub fn new(
        family: Family,
        dim: usize,
        strip_radius: f64,
        growth_exponent: f64,
        growth_constant: f64,
    ) -> Result<Self> {
        let spec = Self {
            family,
            dim,
            strip_radius,
            growth_exponent,
            growth_constant,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `ω(k) = k²`.
    pub fn square(dim: usize, strip_radius: f64) -> Self {
        Self {
            family: Family::EvenPolynomial {
                coefficients: vec![0.0, 1.0],
            },
            dim,
            strip_radius,
            growth_exponent: 2.0,
            growth_constant: 4.0,
        }
    }

    /// `ω(k) = k⁴ + c₁k² + c₀`.
    pub fn quartic(dim: usize, strip_radius: f64, lower: [f64; 2]) -> Self {
        Self {
            family: Family::Quartic {
                lower: lower.to_vec(),
            },
            dim,
            strip_radius,
            growth_exponent: 4.0,
            growth_constant: 8.0 + lower[0].abs() + lower[1].abs(),
        }
    }

    /// `ω ≡ 0`.
    pub fn zero(dim: usize, strip_radius: f64) -> Self {
        Self {
            family: Family::EvenPolynomial {
                coefficients: vec![],
            },
            dim,
            strip_radius,
            growth_exponent: 0.0,
            growth_constant: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(invalid(format!("dimension {} not in 1..=3", self.dim)));
        }
        if !(self.strip_radius > 0.0) || !self.strip_radius.is_finite() {
            return Err(invalid("strip radius must be positive"));
        }
        if !(self.growth_constant >= 1.0) {
            return Err(invalid("growth constant must be at least 1"));
        }
        match &self.family {
            Family::EvenPolynomial { coefficients } => {
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::NonFinite("polynomial coefficients".into()));
                }
            }
            Family::Relativistic { exponent } => {
                if !(*exponent > 0.0) {
                    return Err(invalid("relativistic exponent must be positive"));
                }
                let limit = 0.5 / (self.dim as f64).sqrt();
                if self.strip_radius >= limit {
                    return Err(invalid(format!(
                        "relativistic strip radius {} must be below {limit}",
                        self.strip_radius
                    )));
                }
            }
            Family::Quartic { lower } => {
                if lower.len() > 2 {
                    return Err(invalid("quartic takes at most two lower coefficients"));
                }
            }
        }
        Ok(())
    }

    /// Radial profile and its first two derivatives at `q`.
    pub fn profile(&self, q: C64) -> (C64, C64, C64) {
        let zero = C64::new(0.0, 0.0);
        match &self.family {
            Family::EvenPolynomial { coefficients } => {
                let (mut f, mut f1, mut f2) = (zero, zero, zero);
                for &c in coefficients.iter().rev() {
                    f2 = f2 * q + 2.0 * f1;
                    f1 = f1 * q + f;
                    f = f * q + c;
                }
                (f, f1, f2)
            }
            Family::Relativistic { exponent: s } => {
                let base = q + 1.0;
                let f = base.powf(*s);
                let f1 = f / base * *s;
                let f2 = f1 / base * (*s - 1.0);
                (f, f1, f2)
            }
            Family::Quartic { lower } => {
                let c0 = lower.first().copied().unwrap_or(0.0);
                let c1 = lower.get(1).copied().unwrap_or(0.0);
                (q * q + q * c1 + c0, q * 2.0 + c1, C64::new(2.0, 0.0))
            }
        }
    }

    fn check_strip(&self, k: &[C64], context: &str) -> Result<()> {
        let limit = 2.0 * self.strip_radius;
        for z in k {
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::NonFinite(context.into()));
            }
            if z.im.abs() >= limit {
                return Err(Error::StripViolation {
                    context: context.into(),
                    imag: z.im.abs(),
                    limit,
                });
            }
        }
        Ok(())
    }

    pub fn eval(&self, k: &[C64]) -> Result<C64> {
        self.check_dim(k.len())?;
        self.check_strip(k, "dispersion")?;
        Ok(self.profile(dot(k, k)).0)
    }

    pub fn grad(&self, k: &[C64]) -> Result<Vec<C64>> {
        self.check_dim(k.len())?;
        self.check_strip(k, "dispersion gradient")?;
        let (_, f1, _) = self.profile(dot(k, k));
        Ok(k.iter().map(|&ki| f1 * 2.0 * ki).collect())
    }

    /// Row-major `d × d` Hessian.
    pub fn hessian(&self, k: &[C64]) -> Result<Vec<C64>> {
        self.check_dim(k.len())?;
        self.check_strip(k, "dispersion hessian")?;
        let (_, f1, f2) = self.profile(dot(k, k));
        let d = k.len();
        let mut h = vec![C64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for j in 0..d {
                h[i * d + j] = f2 * 4.0 * k[i] * k[j];
            }
            h[i * d + i] += f1 * 2.0;
        }
        Ok(h)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(invalid(format!(
                "expected a {}-vector, got length {len}",
                self.dim
            )));
        }
        Ok(())
    }

    /// Samples the growth conditions on `S_{2R̃}` with real parts in `[-extent, extent]`.
    pub fn check_growth(&self, extent: f64, step: f64) -> Result<GrowthReport> {
        if !(step > 0.0) || !(extent > 0.0) {
            return Err(invalid("growth sampling needs positive extent and step"));
        }
        let s = self.growth_exponent;
        let ct = self.growth_constant;
        let ylim = 2.0 * self.strip_radius;
        let nx = (extent / step).floor() as i64;
        let ny = (ylim / step).ceil() as i64;
        let d = self.dim;
        let mut report = GrowthReport {
            samples: 0,
            violations: 0,
            max_upper_ratio: 0.0,
            min_lower_margin: f64::INFINITY,
            passed: true,
        };
        for ix in -nx..=nx {
            for iy in -ny..=ny {
                let y = iy as f64 * step;
                if y.abs() >= ylim {
                    continue;
                }
                let z = C64::new(ix as f64 * step, y);
                // Along an axis and along the diagonal.
                let mut probes = vec![axis_vector(z, d)];
                if d > 1 {
                    probes.push(vec![z / (d as f64).sqrt(); d]);
                }
                for k in probes {
                    let (f, f1, _) = self.profile(dot(&k, &k));
                    let bracket = (1.0 + k.iter().map(|c| c.norm_sqr()).sum::<f64>())
                        .sqrt()
                        .powf(s);
                    let grad_max = k
                        .iter()
                        .map(|&ki| (f1 * 2.0 * ki).norm())
                        .fold(0.0, f64::max);
                    if !f.is_finite() || !grad_max.is_finite() {
                        return Err(Error::NonFinite("growth sample".into()));
                    }
                    let upper = f.norm().max(grad_max) / bracket;
                    let lower_margin = f.norm() - (bracket / ct - ct);
                    report.samples += 1;
                    report.max_upper_ratio = report.max_upper_ratio.max(upper);
                    report.min_lower_margin = report.min_lower_margin.min(lower_margin);
                    if upper > ct || lower_margin < 0.0 {
                        report.violations += 1;
                    }
                }
            }
        }
        report.passed = report.violations == 0;
        Ok(report)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub samples: usize,
    pub violations: usize,
    pub max_upper_ratio: f64,
    pub min_lower_margin: f64,
    pub passed: bool,
}

/// The pair `(ω₁, ω₂)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionPair {
    pub first: DispersionSpec,
    pub second: DispersionSpec,
}

/// Value, gradient, Hessian (row-major) of `ω_ξ` at one point.
#[derive(Clone, Debug)]
pub struct SymbolJet {
    pub value: C64,
    pub grad: Vec<C64>,
    pub hessian: Vec<C64>,
}

impl DispersionPair {
    pub fn new(first: DispersionSpec, second: DispersionSpec) -> Result<Self> {
        first.validate()?;
        second.validate()?;
        if first.dim != second.dim {
            return Err(invalid("dispersion dimensions differ"));
        }
        Ok(Self { first, second })
    }

    pub fn dim(&self) -> usize {
        self.first.dim
    }

    /// `R̃ = min(R̃₁, R̃₂)`.
    pub fn strip_radius(&self) -> f64 {
        self.first.strip_radius.min(self.second.strip_radius)
    }

    fn check(&self, xi: &[f64], k: &[C64]) -> Result<()> {
        if xi.len() != self.dim() || k.len() != self.dim() {
            return Err(invalid("xi and k must match the dispersion dimension"));
        }
        for &x in xi {
            if !x.is_finite() {
                return Err(Error::NonFinite("xi".into()));
            }
        }
        let rel: Vec<C64> = xi
            .iter()
            .zip(k)
            .map(|(&x, &z)| C64::new(x, 0.0) - z)
            .collect();
        self.first.check_strip(&rel, "omega_1(xi - k)")?;
        self.second.check_strip(k, "omega_2(k)")?;
        Ok(())
    }

    /// `ω_ξ`, its gradient and Hessian in `k`.
    pub fn jet(&self, xi: &[f64], k: &[C64]) -> Result<SymbolJet> {
        self.check(xi, k)?;
        Ok(self.jet_unchecked(xi, k))
    }

    pub(crate) fn jet_unchecked(&self, xi: &[f64], k: &[C64]) -> SymbolJet {
        let d = k.len();
        let rel: Vec<C64> = xi
            .iter()
            .zip(k)
            .map(|(&x, &z)| C64::new(x, 0.0) - z)
            .collect();
        let (f_a, f1_a, f2_a) = self.first.profile(dot(&rel, &rel));
        let (f_b, f1_b, f2_b) = self.second.profile(dot(k, k));
        let mut grad = vec![C64::new(0.0, 0.0); d];
        let mut hessian = vec![C64::new(0.0, 0.0); d * d];
        for i in 0..d {
            grad[i] = -f1_a * 2.0 * rel[i] + f1_b * 2.0 * k[i];
            for j in 0..d {
                hessian[i * d + j] = f2_a * 4.0 * rel[i] * rel[j] + f2_b * 4.0 * k[i] * k[j];
            }
            hessian[i * d + i] += (f1_a + f1_b) * 2.0;
        }
        SymbolJet {
            value: f_a + f_b,
            grad,
            hessian,
        }
    }

    pub fn omega_xi(&self, xi: &[f64], k: &[C64]) -> Result<C64> {
        self.check(xi, k)?;
        let rel: Vec<C64> = xi
            .iter()
            .zip(k)
            .map(|(&x, &z)| C64::new(x, 0.0) - z)
            .collect();
        Ok(self.first.profile(dot(&rel, &rel)).0 + self.second.profile(dot(k, k)).0)
    }

    pub fn gradient(&self, xi: &[f64], k: &[C64]) -> Result<Vec<C64>> {
        Ok(self.jet(xi, k)?.grad)
    }

    pub fn hessian(&self, xi: &[f64], k: &[C64]) -> Result<Vec<C64>> {
        Ok(self.jet(xi, k)?.hessian)
    }

    /// `v_ξ(k) = e^{-k² - ξ²} ∇ω_ξ(k)` with the analytic square `k²`.
    pub fn vector_field(&self, xi: &[f64], k: &[C64]) -> Result<Vec<C64>> {
        let jet = self.jet(xi, k)?;
        let w = weight(xi, k);
        Ok(jet.grad.iter().map(|g| g * w).collect())
    }

    /// `div v_ξ = e^{-k² - ξ²}(Δω_ξ - 2 k·∇ω_ξ)`.
    pub fn divergence(&self, xi: &[f64], k: &[C64]) -> Result<C64> {
        self.check(xi, k)?;
        Ok(self.field_unchecked(xi, k, None))
    }

    /// Row-major `Dv` with entries `∂ⱼ vᵢ`.
    pub fn jacobian_field(&self, xi: &[f64], k: &[C64]) -> Result<Vec<C64>> {
        let jet = self.jet(xi, k)?;
        let w = weight(xi, k);
        let d = k.len();
        let mut out = vec![C64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = w * (jet.hessian[i * d + j] - jet.grad[i] * k[j] * 2.0);
            }
        }
        Ok(out)
    }

    /// Writes `v_ξ(k)` into `out` when given and returns `div v_ξ(k)`.
    pub(crate) fn field_unchecked(&self, xi: &[f64], k: &[C64], out: Option<&mut [C64]>) -> C64 {
        let jet = self.jet_unchecked(xi, k);
        let d = k.len();
        let w = weight(xi, k);
        let mut lap = C64::new(0.0, 0.0);
        let mut kg = C64::new(0.0, 0.0);
        for i in 0..d {
            lap += jet.hessian[i * d + i];
            kg += k[i] * jet.grad[i];
        }
        if let Some(out) = out {
            for i in 0..d {
                out[i] = jet.grad[i] * w;
            }
        }
        w * (lap - kg * 2.0)
    }

    /// Field evaluation with strip checks, used by the flow integrator.
    pub(crate) fn field_checked(&self, xi: &[f64], k: &[C64], out: &mut [C64]) -> Result<C64> {
        self.check(xi, k)?;
        let div = self.field_unchecked(xi, k, Some(out));
        if !div.is_finite() || out.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("dilation field".into()));
        }
        Ok(div)
    }

    /// `g_ξ(k) = v_ξ(k)·∇ω_ξ(k)`, the multiplication part of the commutator.
    pub fn commutator_symbol(&self, xi: &[f64], k: &[f64]) -> Result<f64> {
        let kc: Vec<C64> = k.iter().map(|&x| C64::new(x, 0.0)).collect();
        let jet = self.jet(xi, &kc)?;
        let w = weight(xi, &kc).re;
        Ok(w * jet.grad.iter().map(|g| g.norm_sqr()).sum::<f64>())
    }

    /// Samples `sup|v_ξ|` and `sup‖Dv_ξ‖` over real `ξ` in `xi_box` and `k` in the
    /// sub-strip of half-width `strip_height`, then inflates by [`SAFETY_FACTOR`].
    pub fn certify_bounds(
        &self,
        xi_box: &[(f64, f64)],
        strip_height: f64,
        step: f64,
    ) -> Result<FieldBounds> {
        let d = self.dim();
        if xi_box.len() != d {
            return Err(invalid("xi box dimension mismatch"));
        }
        if !(step > 0.0) {
            return Err(invalid("sampling step must be positive"));
        }
        if !(strip_height >= 0.0) || strip_height > self.strip_radius() {
            return Err(Error::StripViolation {
                context: "certify_bounds sub-strip".into(),
                imag: strip_height,
                limit: self.strip_radius(),
            });
        }
        let axis_points = |lo: f64, hi: f64| -> Vec<f64> {
            if hi <= lo {
                return vec![lo];
            }
            let n = ((hi - lo) / step).ceil() as usize;
            (0..=n)
                .map(|i| lo + (hi - lo) * i as f64 / n as f64)
                .collect()
        };
        let xi_axes: Vec<Vec<f64>> = xi_box.iter().map(|&(lo, hi)| axis_points(lo, hi)).collect();
        let xi_points = tensor(&xi_axes);
        let reach = xi_box
            .iter()
            .map(|&(lo, hi)| lo.abs().max(hi.abs()))
            .fold(0.0, f64::max)
            + 10.0;
        let kstep = if d == 1 { step } else { 2.0 * step };
        let nx = (reach / kstep).ceil() as i64;
        let re_axis: Vec<f64> = (-nx..=nx).map(|i| i as f64 * kstep).collect();
        let ny = (strip_height / step).floor() as i64;
        let im_axis: Vec<f64> = if d == 1 {
            (-ny..=ny).map(|j| j as f64 * step).collect()
        } else {
            let mut v = vec![0.0];
            if strip_height > 0.0 {
                v.extend([-strip_height, strip_height]);
            }
            v
        };
        let re_points = tensor(&vec![re_axis; d]);
        let im_points = tensor(&vec![im_axis; d]);

        use rayon::prelude::*;
        let (c_raw, cp_raw) = xi_points
            .par_iter()
            .map(|xi| -> Result<(f64, f64)> {
                let mut c: f64 = 0.0;
                let mut cp: f64 = 0.0;
                for re in &re_points {
                    for im in &im_points {
                        let k: Vec<C64> =
                            re.iter().zip(im).map(|(&a, &b)| C64::new(a, b)).collect();
                        let v = self.vector_field(xi, &k)?;
                        let dv = self.jacobian_field(xi, &k)?;
                        let vn = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                        let dn = small_opnorm(&dv, d);
                        if !vn.is_finite() || !dn.is_finite() {
                            return Err(Error::NonFinite("certify_bounds sample".into()));
                        }
                        c = c.max(vn);
                        cp = cp.max(dn);
                    }
                }
                Ok((c, cp))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold((0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        Ok(FieldBounds {
            c_omega: SAFETY_FACTOR * c_raw,
            c_omega_prime: SAFETY_FACTOR * cp_raw,
            raw_c_omega: c_raw,
            raw_c_omega_prime: cp_raw,
            safety_factor: SAFETY_FACTOR,
            strip_height,
            strip_radius: self.strip_radius(),
            xi_box: xi_box.to_vec(),
            step,
        })
    }
}

/// Certified constants `C_ω ≥ sup|v|` and `C'_ω ≥ sup‖Dv‖`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldBounds {
    pub c_omega: f64,
    pub c_omega_prime: f64,
    pub raw_c_omega: f64,
    pub raw_c_omega_prime: f64,
    pub safety_factor: f64,
    pub strip_height: f64,
    pub strip_radius: f64,
    pub xi_box: Vec<(f64, f64)>,
    pub step: f64,
}

impl FieldBounds {
    /// Radius `r = R̃ / (C_ω + 1)` for complex flow times.
    pub fn flow_radius(&self) -> f64 {
        self.strip_radius / (self.c_omega + 1.0)
    }
}

/// `e^{-k·k - ξ·ξ}`.
pub fn weight(xi: &[f64], k: &[C64]) -> C64 {
    let xi2: f64 = xi.iter().map(|x| x * x).sum();
    (-dot(k, k) - xi2).exp()
}

pub(crate) fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axis_vector(z: C64, d: usize) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); d];
    v[0] = z;
    v
}

pub(crate) fn tensor(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for p in &out {
            for &x in axis {
                let mut q = p.clone();
                q.push(x);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Spectral norm of a small row-major complex matrix.
pub fn small_opnorm(m: &[C64], d: usize) -> f64 {
    match d {
        1 => m[0].norm(),
        _ => {
            // Power iteration on MᴴM.
            let mut x = vec![C64::new(1.0, 0.0); d];
            let mut x_norm = (d as f64).sqrt();
            for v in x.iter_mut() {
                *v /= x_norm;
            }
            let mut est = 0.0;
            for _ in 0..200 {
                let mx: Vec<C64> = (0..d)
                    .map(|i| (0..d).map(|j| m[i * d + j] * x[j]).sum())
                    .collect();
                let y: Vec<C64> = (0..d)
                    .map(|j| (0..d).map(|i| m[i * d + j].conj() * mx[i]).sum())
                    .collect();
                x_norm = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if x_norm == 0.0 {
                    return 0.0;
                }
                let new = x_norm.sqrt();
                x = y.into_iter().map(|z| z / x_norm).collect();
                if (new - est).abs() <= 1e-15 * new {
                    est = new;
                    break;
                }
                est = new;
            }
            est
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn square_symbol_and_field() {
        let pair = DispersionPair::new(
            DispersionSpec::square(1, 0.5),
            DispersionSpec::square(1, 0.5),
        )
        .unwrap();
        let xi = [0.7];
        let k = [c(0.3, 0.1)];
        let w = pair.omega_xi(&xi, &k).unwrap();
        let expect = (c(0.7, 0.0) - k[0]).powu(2) + k[0].powu(2);
        assert!((w - expect).norm() < 1e-15);
        let g = pair.gradient(&xi, &k).unwrap()[0];
        assert!((g - (k[0] * 4.0 - 1.4)).norm() < 1e-15);
        let v = pair.vector_field(&xi, &k).unwrap()[0];
        let e = (-k[0] * k[0] - 0.49).exp();
        assert!((v - e * g).norm() < 1e-15);
        // div v = e (4 - 2k(4k - 2ξ))
        let div = pair.divergence(&xi, &k).unwrap();
        assert!((div - e * (c(4.0, 0.0) - k[0] * 2.0 * g)).norm() < 1e-14);
    }

    #[test]
    fn relativistic_profile() {
        let spec =
            DispersionSpec::new(Family::Relativistic { exponent: 0.5 }, 1, 0.4, 1.0, 2.0).unwrap();
        let v = spec.eval(&[c(0.0, 0.3)]).unwrap();
        assert!((v.re - 0.91f64.sqrt()).abs() < 1e-15 && v.im.abs() < 1e-15);
        let quarter =
            DispersionSpec::new(Family::Relativistic { exponent: 0.25 }, 1, 0.4, 0.5, 2.0).unwrap();
        let v = quarter.eval(&[c(0.0, 0.3)]).unwrap();
        assert!((v.re - 0.91f64.powf(0.25)).abs() < 1e-15);
        assert!(
            DispersionSpec::new(Family::Relativistic { exponent: 0.5 }, 1, 0.5, 1.0, 2.0).is_err()
        );
    }

    #[test]
    fn strip_violation_is_reported() {
        let spec = DispersionSpec::square(1, 0.5);
        assert!(matches!(
            spec.eval(&[c(0.0, 1.0)]),
            Err(Error::StripViolation { .. })
        ));
        assert!(spec.eval(&[c(0.0, 0.99)]).is_ok());
    }

    #[test]
    fn profile_derivatives_match_differences() {
        let specs = [
            DispersionSpec::new(
                Family::EvenPolynomial {
                    coefficients: vec![0.3, -1.0, 0.5, 0.1],
                },
                1,
                0.5,
                6.0,
                10.0,
            )
            .unwrap(),
            DispersionSpec::new(Family::Relativistic { exponent: 0.7 }, 1, 0.4, 1.4, 3.0).unwrap(),
            DispersionSpec::quartic(1, 0.5, [1.0, -2.0]),
        ];
        let q = c(0.4, 0.2);
        let h = 1e-5;
        for s in &specs {
            let (_, f1, f2) = s.profile(q);
            let d1 = (s.profile(q + h).0 - s.profile(q - h).0) / (2.0 * h);
            let d2 = (s.profile(q + h).1 - s.profile(q - h).1) / (2.0 * h);
            assert!((f1 - d1).norm() < 1e-8, "{:?}", s.family);
            assert!((f2 - d2).norm() < 1e-8, "{:?}", s.family);
        }
    }

    #[test]
    fn jacobian_matches_differences_in_two_dimensions() {
        let pair = DispersionPair::new(
            DispersionSpec::new(Family::Relativistic { exponent: 0.5 }, 2, 0.3, 1.0, 3.0).unwrap(),
            DispersionSpec::quartic(2, 0.3, [0.0, 1.0]),
        )
        .unwrap();
        let xi = [0.2, -0.4];
        let k = [c(0.3, 0.05), c(-0.6, -0.1)];
        let dv = pair.jacobian_field(&xi, &k).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut kp = k;
            let mut km = k;
            kp[j] += h;
            km[j] -= h;
            let vp = pair.vector_field(&xi, &kp).unwrap();
            let vm = pair.vector_field(&xi, &km).unwrap();
            for i in 0..2 {
                let fd = (vp[i] - vm[i]) / (2.0 * h);
                assert!((fd - dv[i * 2 + j]).norm() < 1e-8);
            }
        }
        let div = pair.divergence(&xi, &k).unwrap();
        assert!((div - dv[0] - dv[3]).norm() < 1e-13);
    }

    #[test]
    fn zero_field_has_zero_bounds() {
        let pair = DispersionPair::new(DispersionSpec::zero(1, 0.5), DispersionSpec::zero(1, 0.5))
            .unwrap();
        let b = pair.certify_bounds(&[(0.0, 0.0)], 0.5, 0.1).unwrap();
        assert_eq!(b.c_omega, 0.0);
        assert_eq!(b.c_omega_prime, 0.0);
    }

    #[test]
    fn certified_bounds_include_safety_factor() {
        let pair = DispersionPair::new(
            DispersionSpec::square(1, 0.5),
            DispersionSpec::square(1, 0.5),
        )
        .unwrap();
        let b = pair.certify_bounds(&[(0.0, 0.0)], 0.0, 0.01).unwrap();
        // On the real line v = 4k e^{-k²} peaks at k = 1/√2.
        let peak = 4.0 * 0.5f64.sqrt() * (-0.5f64).exp();
        assert!((b.raw_c_omega - peak).abs() < 1e-3);
        assert!((b.c_omega - 1.25 * b.raw_c_omega).abs() < 1e-15);
        assert!((b.raw_c_omega_prime - 4.0).abs() < 1e-12);
        assert!(pair.certify_bounds(&[(0.0, 0.0)], 0.6, 0.01).is_err());
    }

    #[test]
    fn growth_of_square() {
        let r = DispersionSpec::square(1, 0.5)
            .check_growth(20.0, 0.1)
            .unwrap();
        assert!(r.passed, "{r:?}");
        let mut zero = DispersionSpec::zero(1, 0.5);
        zero.growth_exponent = 2.0;
        assert!(!zero.check_growth(20.0, 0.1).unwrap().passed);
    }
}
