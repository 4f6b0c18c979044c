//! Collective decay channels (jump operators) of the dissipative matrix and
//! the spectral moments of their rates.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::interactions::InteractionMatrices;
use crate::Complex64;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// Relative size of negative eigenvalues still attributed to round-off.
pub const DARK_RATE_TOLERANCE: f64 = 1e-10;

/// Eigen-decomposition Γ = Σ_ν Γ_ν α_ν α_ν†.
///
/// Row ν of `coefficients` holds α_{ν,i}, the weight of emitter i in the
/// jump operator Ô_ν = Σᵢ α_{ν,i} σ̂ᵢ⁻. Rates are sorted in descending order.
/// Within a degenerate block the basis is arbitrary.
#[derive(Debug, Clone)]
pub struct DecayChannels {
    pub rates: Vec<f64>,
    pub coefficients: DMatrix<Complex64>,
}

impl DecayChannels {
    pub fn n(&self) -> usize {
        self.rates.len()
    }

    fn rate_scale(&self) -> f64 {
        let n = self.n() as f64;
        self.rates.iter().sum::<f64>() / n
    }

    /// Rates with round-off negatives set to zero, suitable as jump rates.
    /// Negatives larger than `DARK_RATE_TOLERANCE · N · Γ̄₀` are a model error.
    pub fn clamped_rates(&self) -> Result<Vec<f64>> {
        let tol = DARK_RATE_TOLERANCE * self.n() as f64 * self.rate_scale();
        self.rates
            .iter()
            .map(|&r| {
                if r >= 0.0 {
                    Ok(r)
                } else if r > -tol {
                    Ok(0.0)
                } else {
                    Err(Error::Model(format!("negative decay rate {r:e} beyond tolerance {tol:e}")))
                }
            })
            .collect()
    }

    /// |α_{ν,i}|² as a real matrix.
    pub fn weights(&self) -> DMatrix<f64> {
        self.coefficients.map(|c| c.norm_sqr())
    }

    /// Σ_ν Γ_ν α_{ν,i} α*_{ν,j}, which reproduces the dissipative matrix.
    pub fn reconstruct(&self, rates: &[f64]) -> DMatrix<Complex64> {
        let n = self.n();
        let a = &self.coefficients;
        DMatrix::from_fn(n, n, |i, j| {
            (0..n).map(|nu| a[(nu, i)] * a[(nu, j)].conj() * rates[nu]).sum()
        })
    }

    /// Largest |Σᵢ α*_{ν,i} α_{μ,i} − δ_{νμ}|.
    pub fn orthonormality_error(&self) -> f64 {
        let a = &self.coefficients;
        let gram = a.conjugate() * a.transpose();
        let n = self.n();
        let mut worst: f64 = 0.0;
        for nu in 0..n {
            for mu in 0..n {
                let target = if nu == mu { 1.0 } else { 0.0 };
                worst = worst.max((gram[(nu, mu)] - Complex64::from(target)).norm());
            }
        }
        worst
    }
}

/// Full Hermitian eigen-decomposition of the dissipative matrix.
pub fn decay_channels(m: &InteractionMatrices) -> Result<DecayChannels> {
    let n = m.n();
    let (values, vectors): (Vec<f64>, DMatrix<Complex64>) = if m.is_real() {
        let eig = SymmetricEigen::try_new(m.gamma_real(), EIGEN_EPS, EIGEN_MAX_ITER)
            .ok_or_else(|| non_convergence(m))?;
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors.map(Complex64::from))
    } else {
        let eig = SymmetricEigen::try_new(m.gamma.clone(), EIGEN_EPS, EIGEN_MAX_ITER)
            .ok_or_else(|| non_convergence(m))?;
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let rates: Vec<f64> = order.iter().map(|&k| values[k]).collect();
    let coefficients = DMatrix::from_fn(n, n, |nu, i| vectors[(i, order[nu])]);

    let mean = m.gamma_diagonal().iter().sum::<f64>() / n as f64;
    if let Some(&min) = rates.last() {
        if min < -DARK_RATE_TOLERANCE * n as f64 * mean {
            warn!("dissipative matrix is not positive semidefinite: min eigenvalue {min:e}");
        }
    }
    Ok(DecayChannels { rates, coefficients })
}

fn non_convergence(m: &InteractionMatrices) -> Error {
    let frob: f64 = m.gamma.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    Error::Numerical(format!(
        "eigensolver did not converge for {n}x{n} dissipative matrix (Frobenius norm {frob:e})",
        n = m.n()
    ))
}

/// Power sums of the decay rates, m_p = Σ_ν Γ_ν^p.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateMoments {
    pub n: usize,
    pub m1: f64,
    pub m2: f64,
    /// Absent when only the first two moments were evaluated.
    pub m3: Option<f64>,
}

impl RateMoments {
    /// Moments from an explicit list of eigenvalues.
    pub fn from_rates(rates: &[f64]) -> Self {
        RateMoments {
            n: rates.len(),
            m1: rates.iter().sum(),
            m2: rates.iter().map(|r| r * r).sum(),
            m3: Some(rates.iter().map(|r| r * r * r).sum()),
        }
    }

    /// Mean rate Γ̄₀ = m1 / N.
    pub fn mean_rate(&self) -> f64 {
        self.m1 / self.n as f64
    }

    /// Var({Γ_ν}/Γ̄₀) = (1/N) Σ_ν (Γ_ν/Γ̄₀)² − 1.
    pub fn variance(&self) -> f64 {
        let n = self.n as f64;
        n * self.m2 / (self.m1 * self.m1) - 1.0
    }
}

/// Moments through trace identities: m1 = tr Γ, m2 = Σᵢⱼ |Γᵢⱼ|², m3 = tr Γ³.
pub fn rate_moments(m: &InteractionMatrices) -> RateMoments {
    let n = m.n();
    let m1 = m.gamma_diagonal().iter().sum();
    let m2 = m.gamma.iter().map(|c| c.norm_sqr()).sum();
    let m3 = if m.is_real() {
        let g = m.gamma_real();
        let g2 = &g * &g;
        g2.component_mul(&g).sum()
    } else {
        let g2 = &m.gamma * &m.gamma;
        // tr(Γ²Γ) = Σᵢⱼ (Γ²)ᵢⱼ Γⱼᵢ
        g2.component_mul(&m.gamma.transpose()).sum().re
    };
    RateMoments { n, m1, m2, m3: Some(m3) }
}

/// Only m1 and m2, in O(N²).
pub fn rate_moments_fast(m: &InteractionMatrices) -> RateMoments {
    RateMoments {
        n: m.n(),
        m1: m.gamma_diagonal().iter().sum(),
        m2: m.gamma.iter().map(|c| c.norm_sqr()).sum(),
        m3: None,
    }
}

/// Writes (ν, Γ_ν) rows.
pub fn write_rates_csv<W: std::io::Write>(channels: &DecayChannels, out: &mut W) -> Result<()> {
    writeln!(out, "nu,rate_Gamma0")?;
    for (nu, r) in channels.rates.iter().enumerate() {
        writeln!(out, "{nu},{r:e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_lattice, EmitterArray, LatticeSpec, Polarization};
    use crate::interactions::interaction_matrices;

    fn channels_of(a: &EmitterArray) -> DecayChannels {
        decay_channels(&interaction_matrices(a).unwrap()).unwrap()
    }

    #[test]
    fn dicke_point_spectrum() {
        let ch = channels_of(&EmitterArray::dicke_point(6).unwrap());
        assert!((ch.rates[0] - 6.0).abs() < 1e-12);
        assert!(ch.rates[1..].iter().all(|r| r.abs() < 1e-12));
        assert!(ch.clamped_rates().unwrap().iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn independent_emitters() {
        let a = build_lattice(&LatticeSpec::chain(5, 1e4, Polarization::Z)).unwrap();
        let m = interaction_matrices(&a).unwrap();
        let mut diag = m.clone();
        diag.gamma = DMatrix::<f64>::identity(5, 5).map(Complex64::from);
        let ch = decay_channels(&diag).unwrap();
        assert!(ch.rates.iter().all(|&r| r == 1.0));
        let w = ch.weights();
        for i in 0..5 {
            let col: Vec<f64> = (0..5).map(|nu| w[(nu, i)]).collect();
            assert_eq!(col.iter().filter(|&&x| x == 1.0).count(), 1);
        }
        let rm = rate_moments(&diag);
        assert_eq!(rm.variance(), 0.0);
    }

    #[test]
    fn channel_invariants() {
        let a = build_lattice(&LatticeSpec::square(4, 4, 0.21, Polarization::Axis([0.3, 0.0, 1.0])))
            .unwrap()
            .with_gamma0((0..16).map(|i| 0.7 + 0.04 * i as f64).collect())
            .unwrap();
        let ch = channels_of(&a);
        assert!(ch.orthonormality_error() < 1e-10);
        let w = ch.weights();
        for i in 0..16 {
            let s: f64 = (0..16).map(|nu| ch.rates[nu] * w[(nu, i)]).sum();
            assert!((s - a.gamma0()[i]).abs() < 1e-10);
        }
        let total: f64 = ch.rates.iter().sum();
        let expected: f64 = a.gamma0().iter().sum();
        assert!((total - expected).abs() < 1e-10 * expected);
        assert!(ch.rates.windows(2).all(|w| w[0] >= w[1]));
        let m = interaction_matrices(&a).unwrap();
        let back = ch.reconstruct(&ch.rates);
        assert!((back - &m.gamma).norm() < 1e-10);
    }

    #[test]
    fn chain_has_bright_and_dark_channels() {
        let a = build_lattice(&LatticeSpec::chain(100, 0.1, Polarization::X)).unwrap();
        let ch = channels_of(&a);
        assert!(ch.rates[0] > 5.0, "brightest {}", ch.rates[0]);
        assert!(ch.rates[99] < 1e-3, "darkest {}", ch.rates[99]);
    }

    #[test]
    fn moments_trace_vs_eigen() {
        let a = build_lattice(&LatticeSpec::square(3, 2, 0.31, Polarization::Axis([1.0, 1.0, 0.0]))).unwrap();
        let m = interaction_matrices(&a).unwrap();
        let trace = rate_moments(&m);
        let eig = RateMoments::from_rates(&decay_channels(&m).unwrap().rates);
        assert!((trace.m1 - eig.m1).abs() < 1e-12 * eig.m1);
        assert!((trace.m2 - eig.m2).abs() < 1e-10 * eig.m2);
        assert!((trace.m3.unwrap() - eig.m3.unwrap()).abs() < 1e-10 * eig.m3.unwrap());
        assert!(trace.m2 >= trace.m1 * trace.m1 / 6.0);
    }

    #[test]
    fn dicke_variance() {
        let m = interaction_matrices(&EmitterArray::dicke_point(4).unwrap()).unwrap();
        assert!((rate_moments(&m).variance() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn permutation_leaves_rates_unchanged() {
        let a = build_lattice(&LatticeSpec::ring(7, 0.2, Polarization::Tangential)).unwrap();
        let b = a.select(&[3, 6, 0, 2, 5, 1, 4]).unwrap();
        let (ra, rb) = (channels_of(&a).rates, channels_of(&b).rates);
        for (x, y) in ra.iter().zip(&rb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn clamping_rejects_large_negatives() {
        let ch = DecayChannels {
            rates: vec![2.0, 0.5, -0.5],
            coefficients: DMatrix::<f64>::identity(3, 3).map(Complex64::from),
        };
        assert!(matches!(ch.clamped_rates(), Err(Error::Model(_))));
        let ch = DecayChannels { rates: vec![2.0, 1.0, -1e-14], ..ch };
        assert_eq!(ch.clamped_rates().unwrap(), vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn rates_csv() {
        let ch = channels_of(&EmitterArray::dicke_point(2).unwrap());
        let mut out = Vec::new();
        write_rates_csv(&ch, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("nu,rate_Gamma0\n0,2e0\n"));
    }
}
