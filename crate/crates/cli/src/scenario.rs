use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use specdeform::dispersion::{DispersionPair, DispersionSpec, Family, FieldBounds};
use specdeform::grid::MomentumGrid;
use specdeform::operator::DEFAULT_TAIL_TOL;
use specdeform::potential::{
    certify_decay, construct_embedded, strip_sample, BumpProfile, EmbeddedPotential, FourierKernel,
    PositionGrid, PotentialSpec,
};
use specdeform::spectra::{default_match_tol, DEFAULT_EIG_TOL, DEFAULT_RIESZ_NODES};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub dispersion: DispersionBlock,
    pub potential: PotentialBlock,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub deformation: DeformationBlock,
    #[serde(default)]
    pub rectangle: RectangleBlock,
    #[serde(default)]
    pub tolerances: ToleranceBlock,
    #[serde(default)]
    pub commlab: CommlabBlock,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_name() -> String {
    "run".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionBlock {
    pub first: FamilyBlock,
    pub second: FamilyBlock,
    /// Strip half-height used for the field bounds.
    #[serde(default)]
    pub bound_height: Option<f64>,
    #[serde(default = "default_bound_step")]
    pub bound_step: f64,
}

fn default_bound_step() -> f64 {
    0.02
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilyBlock {
    Square {
        strip_radius: f64,
    },
    Zero {
        strip_radius: f64,
    },
    Quartic {
        strip_radius: f64,
        #[serde(default)]
        lower: [f64; 2],
    },
    Polynomial {
        strip_radius: f64,
        coefficients: Vec<f64>,
        growth_exponent: f64,
        growth_constant: f64,
    },
    Relativistic {
        strip_radius: f64,
        exponent: f64,
        growth_constant: f64,
    },
}

impl FamilyBlock {
    fn build(&self, dim: usize) -> Result<DispersionSpec, CliError> {
        let spec = match self {
            Self::Square { strip_radius } => DispersionSpec::square(dim, *strip_radius),
            Self::Zero { strip_radius } => DispersionSpec::zero(dim, *strip_radius),
            Self::Quartic {
                strip_radius,
                lower,
            } => DispersionSpec::quartic(dim, *strip_radius, *lower),
            Self::Polynomial {
                strip_radius,
                coefficients,
                growth_exponent,
                growth_constant,
            } => DispersionSpec::new(
                Family::EvenPolynomial {
                    coefficients: coefficients.clone(),
                },
                dim,
                *strip_radius,
                *growth_exponent,
                *growth_constant,
            )?,
            Self::Relativistic {
                strip_radius,
                exponent,
                growth_constant,
            } => DispersionSpec::new(
                Family::Relativistic {
                    exponent: *exponent,
                },
                dim,
                *strip_radius,
                2.0 * exponent,
                *growth_constant,
            )?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindTag {
    Zero,
    Gaussian,
    Embedded,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PotentialKind {
    Zero,
    Gaussian {
        amplitude: f64,
        width: f64,
    },
    Embedded {
        xi0: f64,
        bump_amplitude: f64,
        bump_radius: f64,
        half_width: f64,
        spacing: f64,
        decay_rate: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn four() -> f64 {
    4.0
}
fn six() -> f64 {
    6.0
}
fn fine_spacing() -> f64 {
    5e-4
}

/// `kind` selects which of the optional fields are read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialBlock {
    pub kind: KindTag,
    pub amplitude: Option<f64>,
    pub width: Option<f64>,
    pub xi0: Option<f64>,
    #[serde(default = "one")]
    pub bump_amplitude: f64,
    #[serde(default = "four")]
    pub bump_radius: f64,
    #[serde(default = "six")]
    pub half_width: f64,
    #[serde(default = "fine_spacing")]
    pub spacing: f64,
    #[serde(default = "two")]
    pub decay_rate: f64,
    #[serde(default = "one")]
    pub a_prime: f64,
    #[serde(default = "default_extent")]
    pub sample_extent: f64,
    #[serde(default = "default_count")]
    pub sample_count: usize,
    #[serde(default = "default_sample_seed")]
    pub sample_seed: u64,
}

impl PotentialBlock {
    pub fn kind(&self) -> Result<PotentialKind, CliError> {
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| {
                CliError::Config(format!("key `potential.{key}` is required for this kind"))
            })
        };
        Ok(match self.kind {
            KindTag::Zero => PotentialKind::Zero,
            KindTag::Gaussian => PotentialKind::Gaussian {
                amplitude: need(self.amplitude, "amplitude")?,
                width: need(self.width, "width")?,
            },
            KindTag::Embedded => PotentialKind::Embedded {
                xi0: need(self.xi0, "xi0")?,
                bump_amplitude: self.bump_amplitude,
                bump_radius: self.bump_radius,
                half_width: self.half_width,
                spacing: self.spacing,
                decay_rate: self.decay_rate,
            },
        })
    }
}

fn default_extent() -> f64 {
    30.0
}
fn default_count() -> usize {
    400
}
fn default_sample_seed() -> u64 {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBlock {
    pub cutoff: f64,
    pub points: usize,
    pub dim: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self {
            cutoff: 12.0,
            points: 801,
            dim: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiSweep {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformationBlock {
    /// `[re, im]` pairs.
    pub theta: Vec<[f64; 2]>,
    pub xi: Vec<Vec<f64>>,
    pub xi_sweep: Option<XiSweep>,
    pub relative_samples: usize,
}

fn default_relative_samples() -> usize {
    8
}

impl Default for DeformationBlock {
    fn default() -> Self {
        Self {
            theta: vec![[0.0, 0.1]],
            xi: vec![vec![0.0]],
            xi_sweep: None,
            relative_samples: default_relative_samples(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectangleBlock {
    /// Defaults to `ξ₀²` for an embedded potential.
    pub center: Option<f64>,
    /// Defaults to `κ = dist(λ₀, T)/4`.
    pub half_width: Option<f64>,
    /// Defaults to `e/2`.
    pub depth_slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceBlock {
    pub eig_tol: f64,
    pub tail_tol: f64,
    pub match_tol: Option<f64>,
    pub riesz_nodes: usize,
    pub flow_tol: f64,
    pub drift_tol: f64,
    pub margin_tol: f64,
    pub embedded_residual_tol: f64,
    pub embedded_eigen_tol: f64,
    pub commlab_tol: f64,
}

impl Default for ToleranceBlock {
    fn default() -> Self {
        Self {
            eig_tol: DEFAULT_EIG_TOL,
            tail_tol: DEFAULT_TAIL_TOL,
            match_tol: None,
            riesz_nodes: DEFAULT_RIESZ_NODES,
            flow_tol: specdeform::flow::DEFAULT_FLOW_TOL,
            drift_tol: 1e-5,
            margin_tol: 1e-8,
            embedded_residual_tol: 1e-6,
            embedded_eigen_tol: 1e-4,
            commlab_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommlabBlock {
    pub seeds: usize,
    pub n: usize,
    pub k_max: usize,
    pub fraction: f64,
}

impl Default for CommlabBlock {
    fn default() -> Self {
        Self {
            seeds: 50,
            n: 40,
            k_max: 60,
            fraction: 0.9,
        }
    }
}

/// Parses `text`, applies `key=value` overrides on the raw table, then validates.
pub fn parse(text: &str, overrides: &[String]) -> Result<(Scenario, String), CliError> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let canonical = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
    let scenario: Scenario =
        toml::from_str(&canonical).map_err(|e| CliError::Config(e.to_string()))?;
    scenario.validate()?;
    let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
    Ok((scenario, hash))
}

pub fn load(path: &Path, overrides: &[String]) -> Result<(Scenario, String), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, overrides)
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!(
            "override key `{key}` is malformed"
        )));
    }
    let value = parse_value(raw.trim());
    let mut cursor = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("override key `{key}`: `{p}` is not a table"))
        })?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, why: &str| Err(CliError::Config(format!("key `{key}`: {why}")));
        if self.schema_version != SCHEMA_VERSION {
            return bad(
                "schema_version",
                &format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            );
        }
        if !(self.grid.cutoff > 0.0) {
            return bad("grid.cutoff", "must be positive");
        }
        if self.grid.points < 3 || self.grid.points % 2 == 0 {
            return bad("grid.points", "must be odd and at least 3");
        }
        if !(1..=2).contains(&self.grid.dim) {
            return bad("grid.dim", "must be 1 or 2");
        }
        if self.deformation.theta.is_empty() {
            return bad("deformation.theta", "at least one θ is required");
        }
        if self
            .deformation
            .theta
            .iter()
            .flatten()
            .any(|x| !x.is_finite())
        {
            return bad("deformation.theta", "non-finite entry");
        }
        if self.xi_points().iter().any(|x| x.len() != self.grid.dim) {
            return bad("deformation.xi", "every ξ must have grid.dim components");
        }
        if let Some(s) = &self.deformation.xi_sweep {
            if self.grid.dim != 1 || s.count < 2 || !(s.stop > s.start) {
                return bad(
                    "deformation.xi_sweep",
                    "needs dim 1, count ≥ 2 and stop > start",
                );
            }
        }
        let kind = self.potential.kind()?;
        if matches!(kind, PotentialKind::Embedded { .. }) && self.grid.dim != 1 {
            return bad("potential.kind", "embedded potentials are one-dimensional");
        }
        if !(self.tolerances.eig_tol > 0.0)
            || !(self.tolerances.tail_tol > 0.0)
            || self.tolerances.riesz_nodes < 8
        {
            return bad(
                "tolerances",
                "eig_tol and tail_tol must be positive, riesz_nodes ≥ 8",
            );
        }
        if self.commlab.n == 0
            || self.commlab.seeds == 0
            || !(self.commlab.fraction > 0.0 && self.commlab.fraction < 1.0)
        {
            return bad("commlab", "need n ≥ 1, seeds ≥ 1 and 0 < fraction < 1");
        }
        Ok(())
    }

    pub fn thetas(&self) -> Vec<C64> {
        self.deformation
            .theta
            .iter()
            .map(|t| C64::new(t[0], t[1]))
            .collect()
    }

    /// Fibers for the per-ξ stages.
    pub fn xi_points(&self) -> Vec<Vec<f64>> {
        self.deformation.xi.clone()
    }

    /// The sweep when one is given, else the fiber list. For an embedded
    /// potential these are `ξ₀` values.
    pub fn sweep_points(&self) -> Vec<Vec<f64>> {
        match &self.deformation.xi_sweep {
            Some(s) => (0..s.count)
                .map(|j| vec![s.start + (s.stop - s.start) * j as f64 / (s.count - 1) as f64])
                .collect(),
            None => self.deformation.xi.clone(),
        }
    }

    pub fn is_embedded(&self) -> bool {
        self.potential.kind == KindTag::Embedded
    }

    pub fn first_xi(&self) -> Vec<f64> {
        self.xi_points()
            .into_iter()
            .next()
            .unwrap_or_else(|| vec![0.0; self.grid.dim])
    }

    pub fn grid(&self) -> Result<MomentumGrid, CliError> {
        Ok(MomentumGrid::new(
            self.grid.cutoff,
            self.grid.points,
            self.grid.dim,
        )?)
    }

    pub fn pair(&self) -> Result<DispersionPair, CliError> {
        let d = self.grid.dim;
        Ok(DispersionPair::new(
            self.dispersion.first.build(d)?,
            self.dispersion.second.build(d)?,
        )?)
    }

    pub fn bounds(&self, pair: &DispersionPair) -> Result<FieldBounds, CliError> {
        let mut xs = self.xi_points();
        if !self.is_embedded() {
            xs.extend(self.sweep_points());
        }
        let d = self.grid.dim;
        let boxes: Vec<(f64, f64)> = (0..d)
            .map(|i| {
                let lo = xs.iter().map(|x| x[i]).fold(f64::INFINITY, f64::min);
                let hi = xs.iter().map(|x| x[i]).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            })
            .collect();
        let height = self.dispersion.bound_height.unwrap_or(pair.strip_radius());
        Ok(pair.certify_bounds(&boxes, height, self.dispersion.bound_step)?)
    }

    pub fn embedded(&self) -> Result<Option<EmbeddedPotential>, CliError> {
        match self.potential.kind()? {
            PotentialKind::Embedded {
                xi0,
                bump_amplitude,
                bump_radius,
                half_width,
                spacing,
                ..
            } => Ok(Some(self.embedded_at(
                xi0,
                bump_amplitude,
                bump_radius,
                half_width,
                spacing,
            )?)),
            _ => Ok(None),
        }
    }

    fn embedded_at(
        &self,
        xi0: f64,
        amplitude: f64,
        radius: f64,
        half_width: f64,
        spacing: f64,
    ) -> Result<EmbeddedPotential, CliError> {
        Ok(construct_embedded(
            xi0,
            &BumpProfile { amplitude, radius },
            &PositionGrid {
                half_width,
                spacing,
            },
        )?)
    }

    pub fn potential_spec(
        &self,
        embedded: Option<&EmbeddedPotential>,
    ) -> Result<PotentialSpec, CliError> {
        Ok(match (self.potential.kind()?, embedded) {
            (PotentialKind::Zero, _) => PotentialSpec::zero(self.grid.dim),
            (PotentialKind::Gaussian { amplitude, width }, _) => {
                PotentialSpec::gaussian(self.grid.dim, amplitude, width)
            }
            (PotentialKind::Embedded { decay_rate, .. }, Some(e)) => {
                e.potential_spec(e.default_stride(), decay_rate)
            }
            (PotentialKind::Embedded { .. }, None) => {
                return Err(CliError::Config(
                    "embedded potential requested without construction".into(),
                ))
            }
        })
    }

    pub fn certify(&self, spec: &PotentialSpec) -> Result<FourierKernel, CliError> {
        let p = &self.potential;
        let sample = if spec.family == specdeform::potential::PotentialFamily::Zero {
            Vec::new()
        } else {
            strip_sample(
                self.grid.dim,
                p.a_prime,
                p.sample_extent,
                p.sample_count,
                p.sample_seed,
            )
        };
        Ok(certify_decay(spec, p.a_prime, &sample)?)
    }

    /// The kernel for the potential as configured, with its construction when embedded.
    pub fn kernel(&self) -> Result<(FourierKernel, Option<EmbeddedPotential>), CliError> {
        let e = self.embedded()?;
        let spec = self.potential_spec(e.as_ref())?;
        Ok((self.certify(&spec)?, e))
    }

    /// The same scenario with the embedded construction redone at `xi0`.
    pub fn kernel_at_xi0(&self, xi0: f64) -> Result<FourierKernel, CliError> {
        match self.potential.kind()? {
            PotentialKind::Embedded {
                bump_amplitude,
                bump_radius,
                half_width,
                spacing,
                ..
            } => {
                let e = self.embedded_at(xi0, bump_amplitude, bump_radius, half_width, spacing)?;
                let spec = self.potential_spec(Some(&e))?;
                self.certify(&spec)
            }
            _ => Err(CliError::Config(
                "potential.kind must be embedded for a ξ₀ sweep".into(),
            )),
        }
    }

    pub fn match_tol(&self, lambda0: f64) -> f64 {
        self.tolerances
            .match_tol
            .unwrap_or_else(|| default_match_tol(lambda0))
    }

    pub fn target(&self) -> Option<f64> {
        match self.potential.kind() {
            Ok(PotentialKind::Embedded { xi0, .. }) => Some(xi0 * xi0),
            _ => None,
        }
    }

    pub fn rectangle_center(&self) -> Result<f64, CliError> {
        self.rectangle.center.or(self.target()).ok_or_else(|| {
            CliError::Config("key `rectangle.center` is required for this potential".into())
        })
    }
}
