//! Free-space dyadic Green's function and the coherent (J) and dissipative (Γ)
//! coupling matrices it induces between emitters.
//!
//! With lengths in λ₀ the wavenumber is k₀ = 2π. Writing x = k₀r and r̂ = r/|r|,
//!
//! ```text
//! G₀(r) = k₀/(4π) · e^{ix}/x³ · [(x² + ix − 1) 𝟙 + (3 − 3ix − x²) r̂⊗r̂]
//! ```
//!
//! and the rates are normalized so that Im[d̂*·G₀·d̂] → k₀/(6π) maps to Γ₀.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CVec3, EmitterArray, Vec3};
use crate::Complex64;

/// Transition wavenumber in units of 1/λ₀.
pub const K0: f64 = 2.0 * PI;

/// Below this value of k₀r the imaginary parts of the radial kernels switch
/// to their Taylor series, which avoids catastrophic cancellation.
const SERIES_CUTOFF: f64 = 1e-2;

pub type GreenTensor = Matrix3<Complex64>;

/// The two scalar kernels F₁(x), F₂(x) with G₀ = k₀/(4π)·[F₁ 𝟙 + F₂ r̂⊗r̂].
pub fn radial_kernels(x: f64) -> (Complex64, Complex64) {
    let (s, c) = x.sin_cos();
    let x2 = x * x;
    let x3 = x2 * x;
    let re1 = (c * (x2 - 1.0) - x * s) / x3;
    let re2 = (c * (3.0 - x2) + 3.0 * x * s) / x3;
    let (im1, im2) = if x < SERIES_CUTOFF {
        let x4 = x2 * x2;
        (2.0 / 3.0 - 2.0 * x2 / 15.0 + x4 / 140.0, x2 / 15.0 - x4 / 210.0)
    } else {
        ((s * (x2 - 1.0) + x * c) / x3, (s * (3.0 - x2) - 3.0 * x * c) / x3)
    };
    (Complex64::new(re1, im1), Complex64::new(re2, im2))
}

/// Free-space propagator at frequency ω₀ between two points separated by `r`.
pub fn green_tensor(r: &Vec3) -> Result<GreenTensor> {
    let dist = r.norm();
    if dist == 0.0 {
        return Err(Error::ZeroSeparation);
    }
    if !dist.is_finite() {
        return Err(Error::Validation("separation is not finite".into()));
    }
    let (f1, f2) = radial_kernels(K0 * dist);
    let u = r / dist;
    let pref = K0 / (4.0 * PI);
    Ok(GreenTensor::from_fn(|a, b| {
        let delta = if a == b { f1 } else { Complex64::ZERO };
        (delta + f2 * (u[a] * u[b])) * pref
    }))
}

fn bilinear(a: &CVec3, g: &GreenTensor, b: &CVec3) -> Complex64 {
    let mut acc = Complex64::ZERO;
    for p in 0..3 {
        for q in 0..3 {
            acc += a[p].conj() * g[(p, q)] * b[q];
        }
    }
    acc
}

/// Coherent and dissipative coupling matrices in units of Γ₀.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrices {
    pub j: DMatrix<Complex64>,
    pub gamma: DMatrix<Complex64>,
}

impl InteractionMatrices {
    pub fn n(&self) -> usize {
        self.gamma.nrows()
    }

    /// True when both matrices are real (real dipole orientations).
    pub fn is_real(&self) -> bool {
        self.gamma.iter().chain(self.j.iter()).all(|c| c.im == 0.0)
    }

    pub fn gamma_real(&self) -> DMatrix<f64> {
        self.gamma.map(|c| c.re)
    }

    pub fn j_real(&self) -> DMatrix<f64> {
        self.j.map(|c| c.re)
    }

    /// Per-emitter radiative rates Γᵢᵢ.
    pub fn gamma_diagonal(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.gamma[(i, i)].re).collect()
    }

    /// Largest deviation from Hermiticity, relative to the largest entry.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.n();
        let scale = self.gamma.iter().chain(self.j.iter()).map(|c| c.norm()).fold(0.0, f64::max);
        let mut worst: f64 = 0.0;
        for m in [&self.gamma, &self.j] {
            for i in 0..n {
                for k in 0..n {
                    worst = worst.max((m[(i, k)] - m[(k, i)].conj()).norm());
                }
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            worst
        }
    }

    /// Writes a matrix as row-major CSV with a header line naming N and units.
    pub fn write_csv<W: Write>(&self, which: MatrixKind, out: &mut W) -> Result<()> {
        let (m, name) = match which {
            MatrixKind::Coherent => (&self.j, "J"),
            MatrixKind::Dissipative => (&self.gamma, "Gamma"),
        };
        let real = m.iter().all(|c| c.im == 0.0);
        writeln!(out, "# matrix={name} N={} units=Gamma0", self.n())?;
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols())
                .map(|k| {
                    let c = m[(i, k)];
                    if real {
                        format!("{:e}", c.re)
                    } else {
                        format!("{:e}{:+e}i", c.re, c.im)
                    }
                })
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Coherent,
    Dissipative,
}

/// Assembles J and Γ for an array.
///
/// Off-diagonal entries come from the Hermitian and anti-Hermitian parts of
/// A_ij = d̂ᵢ*·G₀(rᵢ − rⱼ)·d̂ⱼ, scaled by √(Γ₀ⁱΓ₀ʲ). The diagonal of Γ is Γ₀ⁱ and
/// the diagonal of J is zero.
pub fn interaction_matrices(array: &EmitterArray) -> Result<InteractionMatrices> {
    let n = array.len();
    let g0 = array.gamma0();
    if array.is_coincident() {
        let gamma = DMatrix::from_fn(n, n, |i, k| Complex64::from((g0[i] * g0[k]).sqrt()));
        return Ok(InteractionMatrices { j: DMatrix::zeros(n, n), gamma });
    }
    let pos = array.positions();
    let dip = array.dipoles();
    let rows: Vec<Vec<(Complex64, Complex64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|k| {
                    if i == k {
                        return Ok((Complex64::ZERO, Complex64::from(g0[i])));
                    }
                    let g = green_tensor(&(pos[i] - pos[k])).map_err(|_| Error::Singularity {
                        i: i.min(k),
                        j: i.max(k),
                    })?;
                    let a_ik = bilinear(&dip[i], &g, &dip[k]);
                    let a_ki = bilinear(&dip[k], &g, &dip[i]);
                    let w = (g0[i] * g0[k]).sqrt();
                    let herm = (a_ik + a_ki.conj()) * 0.5;
                    let anti = (a_ik - a_ki.conj()) / Complex64::new(0.0, 2.0);
                    let j = herm * (-3.0 * PI / K0 * w);
                    let gamma = anti * (6.0 * PI / K0 * w);
                    Ok((j, gamma))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let j = DMatrix::from_fn(n, n, |i, k| rows[i][k].0);
    let gamma = DMatrix::from_fn(n, n, |i, k| rows[i][k].1);
    Ok(InteractionMatrices { j, gamma })
}

/// Pair data for an array whose geometry is rescaled uniformly by a spacing
/// factor. Evaluates the dissipative couplings at any scale in O(N²) without
/// building the matrix.
#[derive(Debug, Clone)]
pub struct ScaledCouplings {
    n: usize,
    diag: Vec<f64>,
    pairs: Vec<PairTerm>,
    coincident: bool,
}

#[derive(Debug, Clone, Copy)]
struct PairTerm {
    dist: f64,
    weight: f64,
    iso: Complex64,
    dyad: Complex64,
}

impl ScaledCouplings {
    /// `template` is the array at scale 1.
    pub fn new(template: &EmitterArray) -> Self {
        let n = template.len();
        let g0 = template.gamma0();
        let pos = template.positions();
        let dip = template.dipoles();
        let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        if !template.is_coincident() {
            for i in 0..n {
                for k in (i + 1)..n {
                    let r = pos[i] - pos[k];
                    let dist = r.norm();
                    let u = r / dist;
                    let iso = dip[i].dotc(&dip[k]);
                    let ui = CVec3::new(u.x.into(), u.y.into(), u.z.into());
                    let dyad = dip[i].dotc(&ui) * ui.dotc(&dip[k]);
                    pairs.push(PairTerm { dist, weight: (g0[i] * g0[k]).sqrt(), iso, dyad });
                }
            }
        }
        ScaledCouplings { n, diag: g0.to_vec(), pairs, coincident: template.is_coincident() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// (Σᵢ Γᵢᵢ, Σᵢⱼ |Γᵢⱼ|²) with all positions multiplied by `scale`.
    pub fn first_two_moments(&self, scale: f64) -> (f64, f64) {
        let m1: f64 = self.diag.iter().sum();
        let diag2: f64 = self.diag.iter().map(|g| g * g).sum();
        if self.coincident {
            return (m1, m1 * m1);
        }
        let off: f64 = self
            .pairs
            .par_iter()
            .with_min_len(4096)
            .map(|p| {
                let (f1, f2) = radial_kernels(K0 * p.dist * scale);
                let g = (p.iso * f1.im + p.dyad * f2.im) * (1.5 * p.weight);
                g.norm_sqr()
            })
            .sum();
        (m1, diag2 + 2.0 * off)
    }
}
