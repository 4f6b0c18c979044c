//! Emitter arrays: lattice construction, stochastic filling and positional disorder.
//!
//! Lengths are measured in units of the transition wavelength λ₀ and rates in
//! units of the single-emitter decay rate Γ₀.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Complex64;

pub type Vec3 = Vector3<f64>;
pub type CVec3 = Vector3<Complex64>;

const UNIT_NORM_TOL: f64 = 1e-12;

/// A set of two-level emitters with positions, dipole orientations and rates.
#[derive(Debug, Clone, PartialEq)]
pub struct EmitterArray {
    positions: Vec<Vec3>,
    dipoles: Vec<CVec3>,
    gamma0: Vec<f64>,
    gamma_nr: Vec<f64>,
    spacing: Option<f64>,
    dimension: usize,
    coincident: bool,
}

impl EmitterArray {
    /// Builds an array of identical emitters (Γ₀ⁱ = 1, γᵢ = 0) and validates it.
    pub fn new(positions: Vec<Vec3>, dipoles: Vec<CVec3>) -> Result<Self> {
        let n = positions.len();
        let array = EmitterArray {
            positions,
            dipoles,
            gamma0: vec![1.0; n],
            gamma_nr: vec![0.0; n],
            spacing: None,
            dimension: 3,
            coincident: false,
        };
        array.validate()?;
        Ok(array)
    }

    /// N emitters at a single point: the dissipative matrix is all ones and
    /// there are no coherent couplings.
    pub fn dicke_point(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("dicke_point needs at least one emitter".into()));
        }
        let z = CVec3::new(Complex64::ZERO, Complex64::ZERO, Complex64::ONE);
        Ok(EmitterArray {
            positions: vec![Vec3::zeros(); n],
            dipoles: vec![z; n],
            gamma0: vec![1.0; n],
            gamma_nr: vec![0.0; n],
            spacing: None,
            dimension: 0,
            coincident: true,
        })
    }

    /// Replaces the per-emitter radiative rates.
    pub fn with_gamma0(mut self, gamma0: Vec<f64>) -> Result<Self> {
        self.gamma0 = gamma0;
        self.validate()?;
        Ok(self)
    }

    /// Replaces the per-emitter non-radiative rates.
    pub fn with_gamma_nr(mut self, gamma_nr: Vec<f64>) -> Result<Self> {
        self.gamma_nr = gamma_nr;
        self.validate()?;
        Ok(self)
    }

    /// Uniform non-radiative rate on every emitter.
    pub fn with_uniform_gamma_nr(self, gamma: f64) -> Result<Self> {
        let n = self.len();
        self.with_gamma_nr(vec![gamma; n])
    }

    fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::Validation("array has no emitters".into()));
        }
        if self.dipoles.len() != n || self.gamma0.len() != n || self.gamma_nr.len() != n {
            return Err(Error::Validation(format!(
                "length mismatch: {} positions, {} dipoles, {} gamma0, {} gamma_nr",
                n,
                self.dipoles.len(),
                self.gamma0.len(),
                self.gamma_nr.len()
            )));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !p.iter().all(|x| x.is_finite()) {
                return Err(Error::Validation(format!("position {i} is not finite")));
            }
        }
        for (i, d) in self.dipoles.iter().enumerate() {
            let norm2: f64 = d.iter().map(|c| c.norm_sqr()).sum();
            if (norm2 - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Validation(format!(
                    "dipole {i} is not a unit vector (|d|² = {norm2})"
                )));
            }
        }
        if let Some(i) = self.gamma0.iter().position(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::Validation(format!("gamma0[{i}] must be positive")));
        }
        if let Some(i) = self.gamma_nr.iter().position(|&g| !(g >= 0.0 && g.is_finite())) {
            return Err(Error::Validation(format!("gamma_nr[{i}] must be non-negative")));
        }
        if !self.coincident {
            for i in 0..n {
                for j in (i + 1)..n {
                    if (self.positions[i] - self.positions[j]).norm() == 0.0 {
                        return Err(Error::Singularity { i, j });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn dipoles(&self) -> &[CVec3] {
        &self.dipoles
    }

    pub fn gamma0(&self) -> &[f64] {
        &self.gamma0
    }

    pub fn gamma_nr(&self) -> &[f64] {
        &self.gamma_nr
    }

    /// Lattice spacing d, when the array came from a lattice.
    pub fn spacing(&self) -> Option<f64> {
        self.spacing
    }

    /// Lattice dimensionality (0 for the Dicke point).
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// True for the [`EmitterArray::dicke_point`] construction.
    pub fn is_coincident(&self) -> bool {
        self.coincident
    }

    /// All dipole vectors have vanishing imaginary parts.
    pub fn has_real_dipoles(&self) -> bool {
        self.dipoles.iter().all(|d| d.iter().all(|c| c.im == 0.0))
    }

    /// Copy with all positions (and the spacing) multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Validation(format!("scale factor must be positive, got {factor}")));
        }
        let mut out = self.clone();
        for p in &mut out.positions {
            *p *= factor;
        }
        out.spacing = self.spacing.map(|d| d * factor);
        Ok(out)
    }

    /// Subset of emitters, in the given order.
    pub fn select(&self, keep: &[usize]) -> Result<Self> {
        if let Some(&bad) = keep.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Validation(format!("emitter index {bad} out of range")));
        }
        Ok(EmitterArray {
            positions: keep.iter().map(|&i| self.positions[i]).collect(),
            dipoles: keep.iter().map(|&i| self.dipoles[i]).collect(),
            gamma0: keep.iter().map(|&i| self.gamma0[i]).collect(),
            gamma_nr: keep.iter().map(|&i| self.gamma_nr[i]).collect(),
            spacing: self.spacing,
            dimension: self.dimension,
            coincident: self.coincident,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Chain,
    Ring,
    Square,
    Cubic,
}

impl LatticeKind {
    pub fn dimension(self) -> usize {
        match self {
            LatticeKind::Chain | LatticeKind::Ring => 1,
            LatticeKind::Square => 2,
            LatticeKind::Cubic => 3,
        }
    }

    fn axes(self) -> usize {
        match self {
            LatticeKind::Chain | LatticeKind::Ring => 1,
            LatticeKind::Square => 2,
            LatticeKind::Cubic => 3,
        }
    }
}

/// Dipole assignment for lattice sites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    /// Same real axis on every site; normalized on use.
    Axis([f64; 3]),
    /// Unit tangent to the ring at each site.
    Tangential,
}

impl Polarization {
    pub const X: Polarization = Polarization::Axis([1.0, 0.0, 0.0]);
    pub const Z: Polarization = Polarization::Axis([0.0, 0.0, 1.0]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub kind: LatticeKind,
    pub counts: Vec<usize>,
    pub spacing: f64,
    pub polarization: Polarization,
}

impl LatticeSpec {
    pub fn chain(n: usize, spacing: f64, polarization: Polarization) -> Self {
        LatticeSpec { kind: LatticeKind::Chain, counts: vec![n], spacing, polarization }
    }

    pub fn ring(n: usize, spacing: f64, polarization: Polarization) -> Self {
        LatticeSpec { kind: LatticeKind::Ring, counts: vec![n], spacing, polarization }
    }

    pub fn square(nx: usize, ny: usize, spacing: f64, polarization: Polarization) -> Self {
        LatticeSpec { kind: LatticeKind::Square, counts: vec![nx, ny], spacing, polarization }
    }

    pub fn cubic(nx: usize, ny: usize, nz: usize, spacing: f64, polarization: Polarization) -> Self {
        LatticeSpec { kind: LatticeKind::Cubic, counts: vec![nx, ny, nz], spacing, polarization }
    }

    pub fn site_count(&self) -> usize {
        self.counts.iter().product()
    }

    /// Same lattice with a different spacing.
    pub fn with_spacing(&self, spacing: f64) -> Self {
        LatticeSpec { spacing, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.len() != self.kind.axes() {
            return Err(Error::Validation(format!(
                "{:?} lattice needs {} counts, got {}",
                self.kind,
                self.kind.axes(),
                self.counts.len()
            )));
        }
        if self.counts.contains(&0) {
            return Err(Error::Validation("lattice counts must be >= 1".into()));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::Validation(format!("spacing must be positive, got {}", self.spacing)));
        }
        match self.polarization {
            Polarization::Axis(a) => {
                let norm = Vec3::from(a).norm();
                if !(norm > 0.0 && norm.is_finite()) {
                    return Err(Error::Validation("polarization axis must be non-zero".into()));
                }
            }
            Polarization::Tangential => {
                if self.kind != LatticeKind::Ring {
                    return Err(Error::Validation(
                        "tangential polarization is only defined for rings".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn real_dipole(v: Vec3) -> CVec3 {
    let u = v.normalize();
    CVec3::new(u.x.into(), u.y.into(), u.z.into())
}

/// Places emitters on a chain, ring, square or cubic lattice.
///
/// Chains run along x, square arrays lie in the x–y plane, rings lie in the
/// x–y plane centred on the origin with nearest-neighbour chord length equal
/// to the spacing.
pub fn build_lattice(spec: &LatticeSpec) -> Result<EmitterArray> {
    spec.validate()?;
    let d = spec.spacing;
    let mut positions = Vec::with_capacity(spec.site_count());
    let mut tangents = Vec::new();
    match spec.kind {
        LatticeKind::Chain => {
            positions.extend((0..spec.counts[0]).map(|i| Vec3::new(i as f64 * d, 0.0, 0.0)));
        }
        LatticeKind::Ring => {
            let n = spec.counts[0];
            let radius = if n > 1 { d / (2.0 * (PI / n as f64).sin()) } else { 0.0 };
            for i in 0..n {
                let theta = 2.0 * PI * i as f64 / n as f64;
                let (s, c) = theta.sin_cos();
                positions.push(Vec3::new(radius * c, radius * s, 0.0));
                tangents.push(Vec3::new(-s, c, 0.0));
            }
        }
        LatticeKind::Square => {
            let (nx, ny) = (spec.counts[0], spec.counts[1]);
            for iy in 0..ny {
                for ix in 0..nx {
                    positions.push(Vec3::new(ix as f64 * d, iy as f64 * d, 0.0));
                }
            }
        }
        LatticeKind::Cubic => {
            let (nx, ny, nz) = (spec.counts[0], spec.counts[1], spec.counts[2]);
            for iz in 0..nz {
                for iy in 0..ny {
                    for ix in 0..nx {
                        positions.push(Vec3::new(ix as f64 * d, iy as f64 * d, iz as f64 * d));
                    }
                }
            }
        }
    }
    let dipoles = match spec.polarization {
        Polarization::Axis(a) => vec![real_dipole(Vec3::from(a)); positions.len()],
        Polarization::Tangential => tangents.into_iter().map(real_dipole).collect(),
    };
    let mut array = EmitterArray::new(positions, dipoles)?;
    array.spacing = Some(d);
    array.dimension = spec.kind.dimension();
    Ok(array)
}

/// Keeps each emitter independently with probability `eta`.
pub fn apply_filling<R: Rng + ?Sized>(
    array: &EmitterArray,
    eta: f64,
    rng: &mut R,
) -> Result<EmitterArray> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Validation(format!("filling fraction must lie in (0, 1], got {eta}")));
    }
    let keep: Vec<usize> = (0..array.len()).filter(|_| rng.random::<f64>() < eta).collect();
    if keep.len() < 2 {
        return Err(Error::DegenerateArray(keep.len()));
    }
    array.select(&keep)
}

/// Adds independent Gaussian noise of width `sigma_rel · d` to every coordinate.
pub fn apply_position_noise<R: Rng + ?Sized>(
    array: &EmitterArray,
    sigma_rel: f64,
    rng: &mut R,
) -> Result<EmitterArray> {
    if !(sigma_rel >= 0.0 && sigma_rel.is_finite()) {
        return Err(Error::Validation(format!("sigma_rel must be >= 0, got {sigma_rel}")));
    }
    let d = array
        .spacing()
        .ok_or_else(|| Error::Validation("position noise needs a lattice spacing".into()))?;
    if sigma_rel == 0.0 {
        return Ok(array.clone());
    }
    let normal = Normal::new(0.0, sigma_rel * d)
        .map_err(|e| Error::Validation(format!("noise distribution: {e}")))?;
    let mut out = array.clone();
    for p in &mut out.positions {
        for x in p.iter_mut() {
            *x += normal.sample(rng);
        }
    }
    out.validate()?;
    Ok(out)
}
