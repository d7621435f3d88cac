//! Pair potentials, their Fourier transforms on complex arguments and the
//! construction of a potential with a prescribed embedded eigenvalue.
//!
//! `V̂(k) = (2π)^{-d/2} ∫ e^{-ik·x} V(x) dx`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dispersion::SAFETY_FACTOR;
use crate::error::{invalid, Error, Result};
use crate::io::{fmt17, parse17};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FourierMethod {
    #[default]
    ClosedForm,
    Quadrature,
}

/// Even potential sampled at `x = n·spacing`, `n = 0..len`, in one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledPotential {
    pub spacing: f64,
    pub half: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialFamily {
    Zero,
    /// `amplitude · e^{-width |x - center|²}`; an empty center means the origin.
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `amplitude · exp(-1/(1 - |x|²/radius²))` on `|x| < radius`.
    Bump {
        amplitude: f64,
        radius: f64,
    },
    ConstructedEmbedded {
        xi0: f64,
        samples: SampledPotential,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub family: PotentialFamily,
    pub dim: usize,
    /// Exponential decay rate `a`.
    pub decay_rate: f64,
    #[serde(default)]
    pub fourier_method: FourierMethod,
}

impl PotentialSpec {
    pub fn zero(dim: usize) -> Self {
        Self {
            family: PotentialFamily::Zero,
            dim,
            decay_rate: 2.0,
            fourier_method: FourierMethod::ClosedForm,
        }
    }

    pub fn gaussian(dim: usize, amplitude: f64, width: f64) -> Self {
        Self {
            family: PotentialFamily::Gaussian {
                amplitude,
                width,
                center: vec![],
            },
            dim,
            decay_rate: 2.0,
            fourier_method: FourierMethod::ClosedForm,
        }
    }

    pub fn bump(amplitude: f64, radius: f64) -> Self {
        Self {
            family: PotentialFamily::Bump { amplitude, radius },
            dim: 1,
            decay_rate: 2.0,
            fourier_method: FourierMethod::Quadrature,
        }
    }

    /// `d' = 2⌊d/2⌋ + 2`.
    pub fn smoothness_order(&self) -> usize {
        2 * (self.dim / 2) + 2
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(invalid("potential dimension must be 1, 2 or 3"));
        }
        if !(self.decay_rate > 0.0) {
            return Err(invalid("decay rate must be positive"));
        }
        match &self.family {
            PotentialFamily::Zero => {}
            PotentialFamily::Gaussian {
                amplitude,
                width,
                center,
            } => {
                if !amplitude.is_finite() || !(*width > 0.0) {
                    return Err(invalid(
                        "gaussian needs finite amplitude and positive width",
                    ));
                }
                if !center.is_empty() && center.len() != self.dim {
                    return Err(invalid("gaussian center dimension mismatch"));
                }
            }
            PotentialFamily::Bump { amplitude, radius } => {
                if !amplitude.is_finite() || !(*radius > 0.0) {
                    return Err(invalid("bump needs finite amplitude and positive radius"));
                }
            }
            PotentialFamily::ConstructedEmbedded { samples, .. } => {
                if self.dim != 1 {
                    return Err(invalid("constructed potentials are one-dimensional"));
                }
                if !(samples.spacing > 0.0) || samples.half.is_empty() {
                    return Err(invalid("empty sampled potential"));
                }
            }
        }
        if self.fourier_method == FourierMethod::Quadrature && self.dim != 1 {
            return Err(invalid("quadrature transforms are implemented for d = 1"));
        }
        Ok(())
    }

    /// Whether `V(-x) = V(x)`.
    pub fn is_even(&self) -> bool {
        match &self.family {
            PotentialFamily::Gaussian { center, .. } => center.iter().all(|&c| c == 0.0),
            _ => true,
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.family {
            PotentialFamily::Zero => true,
            PotentialFamily::Gaussian { amplitude, .. }
            | PotentialFamily::Bump { amplitude, .. } => *amplitude == 0.0,
            PotentialFamily::ConstructedEmbedded { samples, .. } => {
                samples.half.iter().all(|&v| v == 0.0)
            }
        }
    }

    /// `V(x)` in position space.
    pub fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|t| t * t).sum();
        match &self.family {
            PotentialFamily::Zero => 0.0,
            PotentialFamily::Gaussian {
                amplitude,
                width,
                center,
            } => {
                let d2: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let c = center.get(i).copied().unwrap_or(0.0);
                        (t - c) * (t - c)
                    })
                    .sum();
                amplitude * (-width * d2).exp()
            }
            PotentialFamily::Bump { amplitude, radius } => {
                bump_value(*amplitude, *radius, r2.sqrt())
            }
            PotentialFamily::ConstructedEmbedded { samples, .. } => {
                let t = r2.sqrt() / samples.spacing;
                let n = t.floor() as usize;
                if n + 1 >= samples.half.len() {
                    return if n < samples.half.len() {
                        samples.half[n]
                    } else {
                        0.0
                    };
                }
                let frac = t - n as f64;
                samples.half[n] * (1.0 - frac) + samples.half[n + 1] * frac
            }
        }
    }

    /// Samples `e^{a|x|} |∂^α V(x)|` for `|α| ≤ d'` along the first axis by
    /// high-order central differences.
    pub fn regularity_sup(&self, extent: f64, step: f64) -> f64 {
        let dp = self.smoothness_order();
        let h: f64 = 0.05;
        let mut sup: f64 = 0.0;
        let n = (extent / step).floor() as i64;
        for i in -n..=n {
            let x0 = i as f64 * step;
            let vals: Vec<f64> = (0..=dp)
                .map(|j| {
                    let mut x = vec![0.0; self.dim];
                    x[0] = x0 + (j as f64 - dp as f64 / 2.0) * h;
                    self.value(&x)
                })
                .collect();
            // Repeated differences give h^m ∂^m V at the centre up to O(h²).
            let mut diffs = vals.clone();
            for m in 0..=dp {
                let centre = diffs.len() / 2;
                let deriv = diffs[centre.min(diffs.len() - 1)] / h.powi(m as i32);
                sup = sup.max((self.decay_rate * x0.abs()).exp() * deriv.abs());
                if diffs.len() < 2 {
                    break;
                }
                diffs = diffs.windows(2).map(|w| w[1] - w[0]).collect();
            }
        }
        sup
    }
}

fn bump_value(amplitude: f64, radius: f64, r: f64) -> f64 {
    let s = r / radius;
    if s >= 1.0 {
        0.0
    } else {
        amplitude * (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Precomputed transform evaluator.
#[derive(Clone, Debug, PartialEq)]
enum Evaluator {
    Zero,
    Gaussian {
        amplitude: f64,
        width: f64,
        center: Vec<f64>,
        dim: usize,
    },
    /// Trapezoid rule for an even sample set, summed as cosine/sine series.
    Even {
        spacing: f64,
        cos_coeffs: Vec<f64>,
        sin_coeffs: Vec<f64>,
    },
    /// Trapezoid rule for arbitrary one-dimensional samples on `x0 + n·spacing`.
    General {
        x0: f64,
        spacing: f64,
        values: Vec<f64>,
    },
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Evaluator {
    fn even(spacing: f64, half: &[f64]) -> Self {
        let scale = INV_SQRT_2PI * spacing;
        let cos_coeffs = half
            .iter()
            .enumerate()
            .map(|(n, &v)| if n == 0 { scale * v } else { 2.0 * scale * v })
            .collect();
        let sin_coeffs = half
            .iter()
            .enumerate()
            .map(|(n, &v)| -2.0 * scale * v * n as f64 * spacing)
            .collect();
        Evaluator::Even {
            spacing,
            cos_coeffs,
            sin_coeffs,
        }
    }

    fn eval(&self, k: &[C64]) -> C64 {
        match self {
            Evaluator::Zero => C64::new(0.0, 0.0),
            Evaluator::Gaussian {
                amplitude,
                width,
                center,
                dim,
            } => {
                let k2: C64 = k.iter().map(|z| z * z).sum();
                let kc: C64 = k.iter().zip(center).map(|(z, &c)| z * c).sum();
                let pref = amplitude * (2.0 * width).powf(-(*dim as f64) / 2.0);
                (-k2 / (4.0 * width) - C64::i() * kc).exp() * pref
            }
            Evaluator::Even {
                spacing,
                cos_coeffs,
                ..
            } => clenshaw_cos(cos_coeffs, k[0] * *spacing),
            Evaluator::General {
                x0,
                spacing,
                values,
            } => {
                let step = (-C64::i() * k[0] * *spacing).exp();
                let mut phase = (-C64::i() * k[0] * *x0).exp();
                let mut acc = C64::new(0.0, 0.0);
                for &v in values {
                    acc += phase * v;
                    phase *= step;
                }
                acc * (INV_SQRT_2PI * spacing)
            }
        }
    }

    fn grad(&self, k: &[C64]) -> Vec<C64> {
        match self {
            Evaluator::Zero => vec![C64::new(0.0, 0.0); k.len()],
            Evaluator::Gaussian { width, center, .. } => {
                let v = self.eval(k);
                k.iter()
                    .enumerate()
                    .map(|(i, z)| {
                        let c = center.get(i).copied().unwrap_or(0.0);
                        v * (-z / (2.0 * width) - C64::i() * c)
                    })
                    .collect()
            }
            Evaluator::Even {
                spacing,
                sin_coeffs,
                ..
            } => vec![clenshaw_sin(sin_coeffs, k[0] * *spacing)],
            Evaluator::General {
                x0,
                spacing,
                values,
            } => {
                let step = (-C64::i() * k[0] * *spacing).exp();
                let mut phase = (-C64::i() * k[0] * *x0).exp();
                let mut acc = C64::new(0.0, 0.0);
                for (n, &v) in values.iter().enumerate() {
                    let x = x0 + n as f64 * spacing;
                    acc += phase * (v * x);
                    phase *= step;
                }
                vec![acc * (-C64::i() * INV_SQRT_2PI * spacing)]
            }
        }
    }
}

/// `Σ a_n cos(nθ)` by Clenshaw's recurrence.
fn clenshaw_cos(a: &[f64], theta: C64) -> C64 {
    let x = theta.cos();
    let mut b1 = C64::new(0.0, 0.0);
    let mut b2 = C64::new(0.0, 0.0);
    for &an in a.iter().skip(1).rev() {
        let b0 = x * b1 * 2.0 - b2 + an;
        b2 = b1;
        b1 = b0;
    }
    x * b1 - b2 + a.first().copied().unwrap_or(0.0)
}

/// `Σ c_n sin(nθ)` by Clenshaw's recurrence.
fn clenshaw_sin(c: &[f64], theta: C64) -> C64 {
    let x = theta.cos();
    let mut b1 = C64::new(0.0, 0.0);
    let mut b2 = C64::new(0.0, 0.0);
    for &cn in c.iter().skip(1).rev() {
        let b0 = x * b1 * 2.0 - b2 + cn;
        b2 = b1;
        b1 = b0;
    }
    b1 * theta.sin()
}

fn build_evaluator(spec: &PotentialSpec, zmax: f64) -> Result<Evaluator> {
    spec.validate()?;
    if spec.is_zero() {
        return Ok(Evaluator::Zero);
    }
    match (&spec.family, spec.fourier_method) {
        (PotentialFamily::Zero, _) => Ok(Evaluator::Zero),
        (
            PotentialFamily::Gaussian {
                amplitude,
                width,
                center,
            },
            FourierMethod::ClosedForm,
        ) => Ok(Evaluator::Gaussian {
            amplitude: *amplitude,
            width: *width,
            center: if center.is_empty() {
                vec![0.0; spec.dim]
            } else {
                center.clone()
            },
            dim: spec.dim,
        }),
        (PotentialFamily::ConstructedEmbedded { samples, .. }, _) => {
            Ok(Evaluator::even(samples.spacing, &samples.half))
        }
        (PotentialFamily::Bump { radius, .. }, _) => adaptive(spec, *radius, 0.0, zmax),
        (PotentialFamily::Gaussian { width, center, .. }, FourierMethod::Quadrature) => {
            let c = center.first().copied().unwrap_or(0.0);
            let reach = (40.0 / width).sqrt();
            adaptive(spec, reach, c, zmax)
        }
    }
}

/// Trapezoid rule on `[c - reach, c + reach]`, doubling until the transform
/// settles at the probe points.
fn adaptive(spec: &PotentialSpec, reach: f64, center: f64, zmax: f64) -> Result<Evaluator> {
    let probes = [
        C64::new(0.0, 0.0),
        C64::new(0.5 * zmax, 0.0),
        C64::new(zmax, 0.0),
        C64::new(zmax, 0.5 * spec.decay_rate),
    ];
    let make = |m: usize| -> Evaluator {
        let h = reach / m as f64;
        if center == 0.0 {
            let half: Vec<f64> = (0..=m).map(|n| spec.value(&[n as f64 * h])).collect();
            Evaluator::even(h, &half)
        } else {
            let values: Vec<f64> = (0..=2 * m)
                .map(|n| spec.value(&[center - reach + n as f64 * h]))
                .collect();
            Evaluator::General {
                x0: center - reach,
                spacing: h,
                values,
            }
        }
    };
    let mut m = 64usize;
    let mut prev = make(m);
    let scale = prev.eval(&[probes[0]]).norm().max(1e-300);
    while m < 1 << 20 {
        m *= 2;
        let next = make(m);
        let change = probes
            .iter()
            .map(|&z| (next.eval(&[z]) - prev.eval(&[z])).norm())
            .fold(0.0, f64::max);
        if !change.is_finite() {
            return Err(Error::QuadratureFailure("non-finite transform".into()));
        }
        if change <= 1e-14 * scale {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureFailure(format!(
        "no convergence up to {m} nodes"
    )))
}

fn check_strip(k: &[C64], limit: f64) -> Result<()> {
    for z in k {
        if !z.is_finite() {
            return Err(Error::NonFinite("transform argument".into()));
        }
        if z.im.abs() >= limit {
            return Err(Error::StripViolation {
                context: "fourier transform".into(),
                imag: z.im.abs(),
                limit,
            });
        }
    }
    Ok(())
}

/// Pointwise `V̂(k)` for `|Im kᵢ| < a/2`.
pub fn fourier_transform(spec: &PotentialSpec, k: &[C64]) -> Result<C64> {
    if k.len() != spec.dim {
        return Err(invalid("transform argument dimension mismatch"));
    }
    check_strip(k, spec.decay_rate / 2.0)?;
    let zmax = k.iter().map(|z| z.re.abs()).fold(1.0, f64::max);
    Ok(build_evaluator(spec, zmax)?.eval(k))
}

/// `V̂` together with its certified decay constant `C_V` on `S^d_{a'}`.
#[derive(Clone, Debug)]
pub struct FourierKernel {
    pub spec: PotentialSpec,
    pub a_prime: f64,
    pub c_v: f64,
    pub raw_c_v: f64,
    pub d_prime: usize,
    evaluator: Evaluator,
}

impl FourierKernel {
    pub fn vhat(&self, k: &[C64]) -> Result<C64> {
        if k.len() != self.spec.dim {
            return Err(invalid("transform argument dimension mismatch"));
        }
        check_strip(k, self.a_prime)?;
        Ok(self.evaluator.eval(k))
    }

    pub(crate) fn vhat_unchecked(&self, k: &[C64]) -> C64 {
        self.evaluator.eval(k)
    }

    /// `∇V̂(k)`.
    pub fn grad_vhat(&self, k: &[C64]) -> Result<Vec<C64>> {
        check_strip(k, self.a_prime)?;
        Ok(self.evaluator.grad(k))
    }

    pub(crate) fn grad_vhat_unchecked(&self, k: &[C64]) -> Vec<C64> {
        self.evaluator.grad(k)
    }

    pub fn is_even(&self) -> bool {
        self.spec.is_even()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// `(2π)^{-d/2} C_V C_d`, the bound on `‖T_V^θ‖` at `θ = 0`.
    pub fn convolution_bound(&self) -> f64 {
        (2.0 * PI).powf(-(self.spec.dim as f64) / 2.0)
            * self.c_v
            * decay_integral(self.spec.dim, self.d_prime)
    }
}

/// `C_d = ∫_{ℝ^d} (1 + |k|^{d'})^{-1} dk` by quadrature in the radial variable.
pub fn decay_integral(dim: usize, d_prime: usize) -> f64 {
    let sphere = match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    };
    // r = t/(1-t) maps [0, 1) onto [0, ∞).
    let f = |t: f64| -> f64 {
        if t >= 1.0 {
            return 0.0;
        }
        let r = t / (1.0 - t);
        let jac = 1.0 / ((1.0 - t) * (1.0 - t));
        r.powi(dim as i32 - 1) / (1.0 + r.powi(d_prime as i32)) * jac
    };
    sphere * adaptive_simpson(&f, 0.0, 1.0, 1e-13, 50)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, depth)
}

/// Uniform random points of `S^d_{a'}` with real parts in `[-extent, extent]`.
/// Every odd-indexed point has all imaginary parts on `±0.999a'`.
pub fn strip_sample(
    dim: usize,
    a_prime: f64,
    extent: f64,
    count: usize,
    seed: u64,
) -> Vec<Vec<C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|n| {
            (0..dim)
                .map(|_| {
                    let re = rng.random_range(-extent..=extent);
                    let im = if n % 2 == 1 {
                        if rng.random_bool(0.5) {
                            a_prime
                        } else {
                            -a_prime
                        }
                    } else {
                        rng.random_range(-a_prime..a_prime)
                    };
                    C64::new(re, im * 0.999)
                })
                .collect()
        })
        .collect()
}

/// Certifies `|V̂(k)| ≤ C_V (1 + |k|^{d'})^{-1}` on `sample ⊂ S^d_{a'}`.
pub fn certify_decay(
    spec: &PotentialSpec,
    a_prime: f64,
    sample: &[Vec<C64>],
) -> Result<FourierKernel> {
    spec.validate()?;
    if !(a_prime > 0.0) || a_prime >= spec.decay_rate {
        return Err(Error::StripViolation {
            context: "certify_decay strip".into(),
            imag: a_prime,
            limit: spec.decay_rate,
        });
    }
    let zmax = sample
        .iter()
        .flat_map(|k| k.iter().map(|z| z.re.abs()))
        .fold(1.0, f64::max);
    let evaluator = build_evaluator(spec, zmax)?;
    let d_prime = spec.smoothness_order();
    let mut raw: f64 = 0.0;
    for k in sample {
        if k.len() != spec.dim {
            return Err(invalid("sample dimension mismatch"));
        }
        check_strip(k, a_prime)?;
        let norm = k.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let val = evaluator.eval(k).norm() * (1.0 + norm.powi(d_prime as i32));
        if !val.is_finite() {
            return Err(Error::NonFinite("decay certification".into()));
        }
        raw = raw.max(val);
    }
    Ok(FourierKernel {
        spec: spec.clone(),
        a_prime,
        c_v: SAFETY_FACTOR * raw,
        raw_c_v: raw,
        d_prime,
        evaluator,
    })
}

/// Bump profile `f(x) = amplitude · exp(-1/(1 - (x/radius)²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    pub amplitude: f64,
    pub radius: f64,
}

impl Default for BumpProfile {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            radius: 4.0,
        }
    }
}

impl BumpProfile {
    pub fn value(&self, x: f64) -> f64 {
        bump_value(self.amplitude, self.radius, x.abs())
    }

    /// `f''` in closed form.
    pub fn second_derivative(&self, x: f64) -> f64 {
        let s = x / self.radius;
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let q = 1.0 - s * s;
        let p1 = -2.0 * s / (self.radius * q * q);
        let p2 = -2.0 * (1.0 + 3.0 * s * s) / (self.radius * self.radius * q * q * q);
        self.value(x) * (p1 * p1 + p2)
    }
}

/// Symmetric position grid `x_j = j·spacing`, `|x_j| ≤ half_width`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionGrid {
    pub half_width: f64,
    pub spacing: f64,
}

impl Default for PositionGrid {
    fn default() -> Self {
        Self {
            half_width: 6.0,
            spacing: 5e-4,
        }
    }
}

impl PositionGrid {
    pub fn points(&self) -> Vec<f64> {
        let m = (self.half_width / self.spacing).round() as i64;
        (-m..=m).map(|j| j as f64 * self.spacing).collect()
    }
}

/// Output of the embedded-eigenvalue construction.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedPotential {
    pub xi0: f64,
    pub bump: BumpProfile,
    pub grid: PositionGrid,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    /// `‖(Δ² + V)u - ξ₀²u‖₂ / ‖u‖₂`, see [`fourth_order_residual`].
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedManifest {
    pub xi0: f64,
    pub bump: BumpProfile,
    pub grid: PositionGrid,
    pub target_eigenvalue: f64,
    pub residual: f64,
}

/// Builds `V` with `(Δ² + V)u = ξ₀²u` from `u = (-Δ + ξ₀)^{-1} f`.
pub fn construct_embedded(
    xi0: f64,
    bump: &BumpProfile,
    grid: &PositionGrid,
) -> Result<EmbeddedPotential> {
    if !(xi0 > 0.0) || !xi0.is_finite() {
        return Err(invalid("xi0 must be positive"));
    }
    if !(bump.amplitude >= 0.0) || !(bump.radius > 0.0) {
        return Err(invalid("bump must be nonnegative with positive radius"));
    }
    if !(grid.spacing > 0.0) || grid.spacing > bump.radius / 100.0 {
        return Err(Error::GridTooCoarse(format!(
            "spacing {} must resolve the bump radius {} with at least 100 points",
            grid.spacing, bump.radius
        )));
    }
    if grid.half_width <= bump.radius + grid.spacing {
        return Err(Error::GridTooCoarse(
            "position domain must contain supp f".into(),
        ));
    }
    let x = grid.points();
    let n = x.len();
    let h = grid.spacing;
    let f: Vec<f64> = x.iter().map(|&t| bump.value(t)).collect();
    if bump.amplitude == 0.0 {
        return Ok(EmbeddedPotential {
            xi0,
            bump: *bump,
            grid: *grid,
            v: vec![0.0; n],
            u: vec![0.0; n],
            x,
            residual: 0.0,
        });
    }
    // Numerov for u'' = ξ₀u - f with exact exponential tails via ghost points.
    let off = 1.0 / (h * h) - xi0 / 12.0;
    let diag = -2.0 / (h * h) - 10.0 * xi0 / 12.0;
    let ghost = (-xi0.sqrt() * h).exp();
    let mut main = vec![diag; n];
    main[0] += off * ghost;
    main[n - 1] += off * ghost;
    let rhs: Vec<f64> = (0..n)
        .map(|j| {
            let fm = if j > 0 { f[j - 1] } else { 0.0 };
            let fp = if j + 1 < n { f[j + 1] } else { 0.0 };
            -(fm + 10.0 * f[j] + fp) / 12.0
        })
        .collect();
    let u = thomas(off, &main, &rhs)?;
    let mut v = vec![0.0; n];
    for j in 0..n {
        if x[j].abs() < bump.radius {
            if !(u[j] > 0.0) {
                return Err(Error::SingularU {
                    x: x[j],
                    value: u[j],
                });
            }
            v[j] = (bump.second_derivative(x[j]) + xi0 * f[j]) / u[j];
            if !v[j].is_finite() {
                return Err(Error::SingularU {
                    x: x[j],
                    value: u[j],
                });
            }
        }
    }
    let stride = ((0.01 / h).round() as usize).max(1);
    let residual = fourth_order_residual(&u, &v, xi0, h, stride);
    Ok(EmbeddedPotential {
        xi0,
        bump: *bump,
        grid: *grid,
        x,
        v,
        u,
        residual,
    })
}

/// `‖(Δ² + V)u - ξ₀²u‖₂ / ‖u‖₂` on the sub-grid of spacing `stride·h`, with the
/// nine-point sixth-order fourth difference.
pub fn fourth_order_residual(u: &[f64], v: &[f64], xi0: f64, h: f64, stride: usize) -> f64 {
    const W: [f64; 9] = [
        7.0, -96.0, 676.0, -1952.0, 2730.0, -1952.0, 676.0, -96.0, 7.0,
    ];
    let step = h * stride as f64;
    let h4 = 240.0 * step.powi(4);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut j = 4 * stride;
    while j + 4 * stride < u.len() {
        let d4: f64 = W
            .iter()
            .enumerate()
            .map(|(m, w)| w * u[j + m * stride - 4 * stride])
            .sum::<f64>()
            / h4;
        num += (d4 + v[j] * u[j] - xi0 * xi0 * u[j]).powi(2);
        den += u[j] * u[j];
        j += stride;
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Solves a symmetric tridiagonal system with constant off-diagonal.
fn thomas(off: f64, main: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = main.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = main[0];
    c[0] = off / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = main[i] - off * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::SolveFailure("tridiagonal pivot vanished".into()));
        }
        c[i] = off / denom;
        d[i] = (rhs[i] - off * d[i - 1]) / denom;
    }
    let mut out = vec![0.0; n];
    out[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = d[i] - c[i] * out[i + 1];
    }
    Ok(out)
}

impl EmbeddedPotential {
    pub fn target_eigenvalue(&self) -> f64 {
        self.xi0 * self.xi0
    }

    /// Stride that brings the quadrature spacing close to `0.01`.
    pub fn default_stride(&self) -> usize {
        ((0.01 / self.grid.spacing).round() as usize).max(1)
    }

    /// Potential spec using every `stride`-th sample for the transform.
    pub fn potential_spec(&self, stride: usize, decay_rate: f64) -> PotentialSpec {
        let stride = stride.max(1);
        let centre = self.x.len() / 2;
        let half: Vec<f64> = self.v[centre..].iter().step_by(stride).copied().collect();
        PotentialSpec {
            family: PotentialFamily::ConstructedEmbedded {
                xi0: self.xi0,
                samples: SampledPotential {
                    spacing: self.grid.spacing * stride as f64,
                    half,
                },
            },
            dim: 1,
            decay_rate,
            fourier_method: FourierMethod::Quadrature,
        }
    }

    pub fn manifest(&self) -> EmbeddedManifest {
        EmbeddedManifest {
            xi0: self.xi0,
            bump: self.bump,
            grid: self.grid,
            target_eigenvalue: self.target_eigenvalue(),
            residual: self.residual,
        }
    }

    /// Writes `x, V, u` as CSV and the manifest as JSON next to it.
    pub fn write(&self, csv: &Path, manifest: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(csv)?);
        writeln!(out, "x,V,u")?;
        for j in 0..self.x.len() {
            writeln!(
                out,
                "{},{},{}",
                fmt17(self.x[j]),
                fmt17(self.v[j]),
                fmt17(self.u[j])
            )?;
        }
        out.flush()?;
        std::fs::write(manifest, serde_json::to_string_pretty(&self.manifest())?)?;
        Ok(())
    }

    pub fn read(csv: &Path, manifest: &Path) -> Result<Self> {
        let m: EmbeddedManifest = serde_json::from_str(&std::fs::read_to_string(manifest)?)?;
        let file = std::io::BufReader::new(std::fs::File::open(csv)?);
        let (mut x, mut v, mut u) = (vec![], vec![], vec![]);
        for (i, line) in file.lines().enumerate() {
            let line = line?;
            if i == 0 {
                continue;
            }
            let cols: Vec<Option<f64>> = line.split(',').map(parse17).collect();
            match cols.as_slice() {
                [Some(a), Some(b), Some(c)] => {
                    x.push(*a);
                    v.push(*b);
                    u.push(*c);
                }
                _ => return Err(invalid(format!("malformed potential row {i}"))),
            }
        }
        Ok(Self {
            xi0: m.xi0,
            bump: m.bump,
            grid: m.grid,
            x,
            v,
            u,
            residual: m.residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_closed_form() {
        let spec = PotentialSpec::gaussian(1, 1.0, 0.5);
        for k in [0.0, 0.7, 2.0] {
            let v = fourier_transform(&spec, &[C64::new(k, 0.0)]).unwrap();
            assert!((v.re - (-k * k / 2.0f64).exp()).abs() < 1e-15 && v.im.abs() < 1e-15);
        }
        let zero = PotentialSpec::zero(1);
        assert_eq!(
            fourier_transform(&zero, &[C64::new(0.3, 0.1)]).unwrap(),
            C64::new(0.0, 0.0)
        );
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let mut spec = PotentialSpec::gaussian(1, 1.3, 0.7);
        let closed = certify_decay(&spec, 0.5, &strip_sample(1, 0.5, 20.0, 50, 1)).unwrap();
        spec.fourier_method = FourierMethod::Quadrature;
        let quad = certify_decay(&spec, 0.5, &strip_sample(1, 0.5, 20.0, 50, 1)).unwrap();
        for k in strip_sample(1, 0.5, 20.0, 100, 9) {
            let a = closed.vhat(&k).unwrap();
            let b = quad.vhat(&k).unwrap();
            assert!((a - b).norm() < 1e-12, "{k:?}: {a} vs {b}");
            let ga = closed.grad_vhat(&k).unwrap()[0];
            let gb = quad.grad_vhat(&k).unwrap()[0];
            assert!((ga - gb).norm() < 1e-11);
        }
    }

    #[test]
    fn shifted_gaussian_quadrature() {
        let mut spec = PotentialSpec::gaussian(1, 1.0, 1.0);
        spec.family = PotentialFamily::Gaussian {
            amplitude: 1.0,
            width: 1.0,
            center: vec![0.4],
        };
        assert!(!spec.is_even());
        let closed = certify_decay(&spec, 0.5, &strip_sample(1, 0.5, 10.0, 20, 1)).unwrap();
        spec.fourier_method = FourierMethod::Quadrature;
        let quad = certify_decay(&spec, 0.5, &strip_sample(1, 0.5, 10.0, 20, 1)).unwrap();
        for k in strip_sample(1, 0.5, 10.0, 30, 3) {
            assert!((closed.vhat(&k).unwrap() - quad.vhat(&k).unwrap()).norm() < 1e-12);
            assert!(
                (closed.grad_vhat(&k).unwrap()[0] - quad.grad_vhat(&k).unwrap()[0]).norm() < 1e-11
            );
        }
    }

    #[test]
    fn clenshaw_series() {
        let a = [0.3, -1.2, 0.5, 2.0];
        let t = C64::new(0.7, 0.2);
        let direct_cos: C64 = a
            .iter()
            .enumerate()
            .map(|(n, &c)| (t * n as f64).cos() * c)
            .sum();
        let direct_sin: C64 = a
            .iter()
            .enumerate()
            .map(|(n, &c)| (t * n as f64).sin() * c)
            .sum();
        assert!((clenshaw_cos(&a, t) - direct_cos).norm() < 1e-14);
        assert!((clenshaw_sin(&a, t) - direct_sin).norm() < 1e-14);
    }

    #[test]
    fn decay_certificate() {
        let spec = PotentialSpec::gaussian(1, 1.0, 0.5);
        let kern = certify_decay(&spec, 0.5, &strip_sample(1, 0.5, 30.0, 1000, 1)).unwrap();
        assert!(kern.c_v.is_finite() && kern.c_v > 0.0);
        assert_eq!(kern.d_prime, 2);
        let mut double = spec.clone();
        double.family = PotentialFamily::Gaussian {
            amplitude: 2.0,
            width: 0.5,
            center: vec![],
        };
        let k2 = certify_decay(&double, 0.5, &strip_sample(1, 0.5, 30.0, 1000, 1)).unwrap();
        assert!((k2.c_v - 2.0 * kern.c_v).abs() < 1e-12 * kern.c_v);
        let zero = certify_decay(
            &PotentialSpec::zero(1),
            0.5,
            &strip_sample(1, 0.5, 30.0, 10, 1),
        )
        .unwrap();
        assert_eq!(zero.c_v, 0.0);
        assert!(certify_decay(&spec, 2.0, &[]).is_err());
    }

    #[test]
    fn decay_integrals() {
        assert!((decay_integral(1, 2) - PI).abs() < 1e-10);
        assert!((decay_integral(2, 4) - PI * PI / 2.0).abs() < 1e-10);
    }

    #[test]
    fn bump_second_derivative() {
        let b = BumpProfile {
            amplitude: 1.3,
            radius: 2.0,
        };
        let h = 1e-4;
        for x in [-1.5, -0.3, 0.0, 0.9, 1.8] {
            let fd = (b.value(x + h) - 2.0 * b.value(x) + b.value(x - h)) / (h * h);
            assert!((fd - b.second_derivative(x)).abs() < 1e-5);
        }
    }

    #[test]
    fn embedded_construction() {
        let e = construct_embedded(1.0, &BumpProfile::default(), &PositionGrid::default()).unwrap();
        assert!(e.residual <= 1e-6, "residual {}", e.residual);
        for (x, v) in e.x.iter().zip(&e.v) {
            if x.abs() >= 4.0 {
                assert_eq!(*v, 0.0);
            }
        }
        let zero = construct_embedded(
            1.0,
            &BumpProfile {
                amplitude: 0.0,
                radius: 4.0,
            },
            &PositionGrid::default(),
        )
        .unwrap();
        assert!(zero.v.iter().all(|&v| v == 0.0));
        let coarse = PositionGrid {
            half_width: 6.0,
            spacing: 0.1,
        };
        assert!(matches!(
            construct_embedded(1.0, &BumpProfile::default(), &coarse),
            Err(Error::GridTooCoarse(_))
        ));
    }

    #[test]
    fn embedded_round_trip() {
        let e = construct_embedded(
            0.8,
            &BumpProfile::default(),
            &PositionGrid {
                half_width: 5.0,
                spacing: 2e-3,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (c, m) = (dir.path().join("v.csv"), dir.path().join("v.json"));
        e.write(&c, &m).unwrap();
        assert_eq!(EmbeddedPotential::read(&c, &m).unwrap(), e);
    }
}
