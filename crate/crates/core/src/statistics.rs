//! Photon correlation functions on the fully inverted state.
//!
//! For N emitters with collective rates {Γ_ν} and mean single-emitter rate
//! Γ̄₀ = Σ_ν Γ_ν / N,
//!
//! ```text
//! g²(0) = 1 + (Var({Γ_ν}/Γ̄₀) − 1) / N
//! g³(0) = 1 + 2 Σ_ν x_ν³ + (3 − 12/N) Σ_ν x_ν² + 12/N² − 6/N,   x_ν = Γ_ν / (NΓ̄₀)
//! ```
//!
//! so a superradiant burst (g² > 1) needs Var > 1. Both only need the power
//! sums of the rates, which [`crate::channels::rate_moments`] obtains from
//! traces. The imperfect-state and non-radiative variants need the channel
//! coefficients.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::channels::{DecayChannels, RateMoments};
use crate::error::{Error, Result};
use crate::geometry::{EmitterArray, Vec3};
use crate::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonStatistics {
    pub g2: f64,
    /// Needs N ≥ 3 and the third moment.
    pub g3: Option<f64>,
    pub variance: f64,
    pub burst_predicted: bool,
}

/// g²(0), and g³(0) when the third moment is present and N ≥ 3.
pub fn photon_statistics(moments: &RateMoments) -> Result<PhotonStatistics> {
    let g2 = g2_zero(moments)?;
    let g3 = match moments.m3 {
        Some(_) if moments.n >= 3 => Some(g3_zero(moments)?),
        _ => None,
    };
    Ok(PhotonStatistics { g2, g3, variance: moments.variance(), burst_predicted: g2 > 1.0 })
}

pub fn g2_zero(moments: &RateMoments) -> Result<f64> {
    if moments.n < 2 {
        return Err(Error::Domain(format!("g2 needs at least 2 emitters, got {}", moments.n)));
    }
    Ok(1.0 + (moments.variance() - 1.0) / moments.n as f64)
}

pub fn g3_zero(moments: &RateMoments) -> Result<f64> {
    let n = moments.n;
    if n < 3 {
        return Err(Error::Domain(format!("g3 needs at least 3 emitters, got {n}")));
    }
    let m3 = moments
        .m3
        .ok_or_else(|| Error::Validation("g3 needs the third rate moment".into()))?;
    let nf = n as f64;
    let s = moments.m1;
    let x2 = moments.m2 / (s * s);
    let x3 = m3 / (s * s * s);
    Ok(1.0 + 2.0 * x3 + (3.0 - 12.0 / nf) * x2 + 12.0 / (nf * nf) - 6.0 / nf)
}

/// Quadratic form Σ_μ Γ_μ ⟨ψ|Ô_μ†Ô_μ|ψ⟩ for a single-hole state ψ = Σ_m c_m |hole m⟩.
fn hole_emission(gamma: &DMatrix<Complex64>, trace: f64, c: &DVector<Complex64>) -> f64 {
    let gc = gamma * c;
    let quad = c.dotc(&gc).re;
    let local: f64 = c.iter().enumerate().map(|(a, ca)| gamma[(a, a)].re * ca.norm_sqr()).sum();
    trace * c.norm_squared() + quad - 2.0 * local
}

/// g²(τ)/g²(0) with purely coherent evolution between the first two emissions.
///
/// After the first jump Ô_ν the state lives in the (N−1)-excitation sector,
/// spanned by single-hole states. There the coupling Hamiltonian acts as
/// hole hopping with ⟨hole m|H|hole j⟩ = J_{jm}; the uniform ω₀ term only
/// contributes a global phase.
pub fn g2_tau_ratio(
    channels: &DecayChannels,
    j: &DMatrix<Complex64>,
    taus: &[f64],
) -> Result<Vec<f64>> {
    let n = channels.n();
    if j.nrows() != n || j.ncols() != n {
        return Err(Error::Validation(format!(
            "coupling matrix is {}x{}, expected {n}x{n}",
            j.nrows(),
            j.ncols()
        )));
    }
    if let Some(t) = taus.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::Validation(format!("delay times must be >= 0, got {t}")));
    }
    let hopping = j.transpose();
    let scale = hopping.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1.0);
    let asym = (&hopping - hopping.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max);
    if asym > 1e-12 * scale {
        return Err(Error::Numerical(format!(
            "hole-sector generator is not Hermitian (deviation {asym:e})"
        )));
    }
    let eig = SymmetricEigen::try_new(hopping, 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("hole-sector eigensolver did not converge".into()))?;
    let vecs = eig.eigenvectors;
    let vals = eig.eigenvalues;

    let gamma = channels.reconstruct(&channels.rates);
    let trace: f64 = channels.rates.iter().sum();
    let amplitudes: Vec<DVector<Complex64>> = (0..n)
        .map(|nu| DVector::from_fn(n, |i, _| channels.coefficients[(nu, i)]))
        .collect();
    // amplitudes in the eigenbasis of the hopping generator
    let projected: Vec<DVector<Complex64>> = amplitudes.iter().map(|a| vecs.ad_mul(a)).collect();

    let numerator = |tau: f64| -> f64 {
        let phases = DVector::from_fn(n, |k, _| Complex64::from_polar(1.0, -vals[k] * tau));
        channels
            .rates
            .iter()
            .zip(&projected)
            .map(|(&rate, p)| {
                let c = &vecs * p.component_mul(&phases);
                rate * hole_emission(&gamma, trace, &c)
            })
            .sum()
    };
    let reference = numerator(0.0);
    if reference <= 0.0 {
        return Err(Error::Domain("two-photon emission rate vanishes".into()));
    }
    Ok(taus.iter().map(|&t| if t == 0.0 { 1.0 } else { numerator(t) / reference }).collect())
}

/// Single-hole admixture ζ of an imperfectly inverted state
/// √(1 − Σ|ζ|²)|e…e⟩ + Σ_a ζ_a |g_a, e…e⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct HoleState {
    pub zeta: Vec<Complex64>,
}

impl HoleState {
    pub fn new(zeta: Vec<Complex64>) -> Result<Self> {
        let state = HoleState { zeta };
        if state.total_imperfection() > 1.0 + 1e-12 {
            return Err(Error::Validation(format!(
                "hole amplitudes exceed unit norm: {}",
                state.total_imperfection()
            )));
        }
        Ok(state)
    }

    /// Perfect inversion.
    pub fn none(n: usize) -> Self {
        HoleState { zeta: vec![Complex64::ZERO; n] }
    }

    /// Σ_a |ζ_a|².
    pub fn total_imperfection(&self) -> f64 {
        self.zeta.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Excitation probability φ that gives a coherent spin state of N emitters a
/// total single-hole weight `total` after truncation and normalization.
pub fn phi_for_imperfection(total: f64, n: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&total) || n == 0 {
        return Err(Error::Domain(format!("imperfection must lie in [0, 1), got {total}")));
    }
    let nf = n as f64;
    Ok(1.0 - total / (nf * (1.0 - total) + total))
}

/// Hole amplitudes of a coherent spin state prepared by a short uniform pulse
/// with wavevector `k`, truncated to at most one hole and normalized together
/// with the fully excited amplitude √(φᴺ).
pub fn coherent_spin_state_hole(phi: f64, k: &Vec3, array: &EmitterArray) -> Result<HoleState> {
    if !(phi > 0.0 && phi <= 1.0) {
        return Err(Error::Domain(format!("excitation probability must lie in (0, 1], got {phi}")));
    }
    let n = array.len() as f64;
    // √(φ^{N−1}(1−φ)) / √(φᴺ + Nφ^{N−1}(1−φ)), with φ^{N−1} cancelled
    let amp = ((1.0 - phi) / (phi + n * (1.0 - phi))).sqrt();
    let zeta = array
        .positions()
        .iter()
        .map(|r| Complex64::from_polar(amp, -k.dot(r)))
        .collect();
    HoleState::new(zeta)
}

/// g²(0) on an imperfectly inverted state with single-hole admixture.
pub fn g2_imperfect(channels: &DecayChannels, hole: &HoleState) -> Result<f64> {
    let n = channels.n();
    if hole.zeta.len() != n {
        return Err(Error::Validation(format!(
            "hole state has {} amplitudes for {n} emitters",
            hole.zeta.len()
        )));
    }
    if n < 2 {
        return Err(Error::Domain(format!("g2 needs at least 2 emitters, got {n}")));
    }
    let nf = n as f64;
    let rates = &channels.rates;
    let a = &channels.coefficients;
    let g0 = rates.iter().sum::<f64>() / nf;
    let m2: f64 = rates.iter().map(|r| r * r).sum();
    let s = hole.total_imperfection();

    // w_ν = Σ_a ζ_a* α_{ν,a}; the cross terms Σ_{a,i} ζ_a* ζ_i α*_{ν,i} α_{ν,a} = |w_ν|²
    let overlap: Vec<f64> = (0..n)
        .map(|nu| {
            hole.zeta
                .iter()
                .enumerate()
                .map(|(i, z)| z.conj() * a[(nu, i)])
                .sum::<Complex64>()
                .norm_sqr()
        })
        .collect();
    let local: f64 = hole
        .zeta
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let weighted: f64 = (0..n).map(|nu| rates[nu] * rates[nu] * a[(nu, i)].norm_sqr()).sum();
            z.norm_sqr() * ((nf - 3.0) * g0 * g0 + weighted)
        })
        .sum();
    let cross: f64 = (0..n)
        .map(|nu| ((2.0 * nf - 8.0) * g0 * rates[nu] + 2.0 * rates[nu] * rates[nu]) * overlap[nu])
        .sum();
    let numerator = (nf * nf - 2.0 * nf) * g0 * g0 + m2 - 4.0 * local + cross;
    let single: f64 = (0..n).map(|nu| rates[nu] * overlap[nu]).sum();
    let denominator = (nf - 2.0 * s) * g0 + single;
    Ok(numerator / (denominator * denominator))
}

/// g²(0) for emitters with unequal radiative rates Γ₀ⁱ (flat spectral
/// response across the broadened line):
/// 1 + (Var(Γ_ν/Γ̄₀) − 1)/N − (2/N) Var(Γ₀ⁱ/Γ̄₀).
pub fn g2_inhomogeneous(moments: &RateMoments, gamma0: &[f64]) -> Result<f64> {
    let n = moments.n;
    if gamma0.len() != n {
        return Err(Error::Validation(format!("{} rates for {n} emitters", gamma0.len())));
    }
    if n < 2 {
        return Err(Error::Domain(format!("g2 needs at least 2 emitters, got {n}")));
    }
    let total: f64 = gamma0.iter().sum();
    if (total - moments.m1).abs() > 1e-9 * moments.m1.abs() {
        return Err(Error::Validation(format!(
            "rate sum {total} does not match the first moment {}",
            moments.m1
        )));
    }
    let nf = n as f64;
    let mean = total / nf;
    let local_var = gamma0.iter().map(|g| (g / mean).powi(2)).sum::<f64>() / nf - 1.0;
    Ok(1.0 + (moments.variance() - 1.0) / nf - 2.0 / nf * local_var)
}

/// Emission-order probabilities for local non-radiative decay, valid when
/// the second photon is emitted at roughly the rate of the first and at most
/// one non-radiative event occurs.
#[derive(Debug, Clone, PartialEq)]
pub struct NonRadiativeProbabilities {
    /// No non-radiative event before the first photon.
    pub p01: f64,
    /// One event on emitter i before the first photon.
    pub p11: Vec<f64>,
    /// No non-radiative event before the second photon.
    pub p02: f64,
    /// One event on emitter i right before the first of two photons.
    pub p12: Vec<f64>,
    /// One event on emitter i right before the second of two photons.
    pub p22: Vec<f64>,
}

impl NonRadiativeProbabilities {
    pub fn new(mean_radiative: f64, gamma_nr: &[f64]) -> Self {
        let nf = gamma_nr.len() as f64;
        let mean_nr = gamma_nr.iter().sum::<f64>() / nf;
        let one = nf * mean_radiative + nf * mean_nr;
        let two = nf * mean_radiative + 2.0 * nf * mean_nr;
        NonRadiativeProbabilities {
            p01: nf * mean_radiative / one,
            p11: gamma_nr.iter().map(|g| g / one).collect(),
            p02: nf * mean_radiative / two,
            p12: gamma_nr.iter().map(|g| g / two).collect(),
            p22: gamma_nr.iter().map(|g| g / two).collect(),
        }
    }
}

/// g²(0) with local non-radiative decay at per-emitter rates γᵢ.
pub fn g2_nonradiative(channels: &DecayChannels, gamma_nr: &[f64]) -> Result<f64> {
    let n = channels.n();
    if gamma_nr.len() != n {
        return Err(Error::Validation(format!("{} non-radiative rates for {n} emitters", gamma_nr.len())));
    }
    if n < 2 {
        return Err(Error::Domain(format!("g2 needs at least 2 emitters, got {n}")));
    }
    if let Some(g) = gamma_nr.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(Error::Validation(format!("non-radiative rate must be >= 0, got {g}")));
    }
    let nf = n as f64;
    let rates = &channels.rates;
    let w = channels.weights();
    let m1: f64 = rates.iter().sum();
    let m2: f64 = rates.iter().map(|r| r * r).sum();
    let mean = m1 / nf;
    let max_nr = gamma_nr.iter().copied().fold(0.0, f64::max);
    if max_nr > mean * (1.0 + 1e-9) {
        warn!("non-radiative rate {max_nr} exceeds the radiative rate {mean}; formula extrapolated");
    }
    // Γ₀ⁱ = Σ_ν Γ_ν |α_{ν,i}|² and (Γ²)ᵢᵢ = Σ_ν Γ_ν² |α_{ν,i}|²
    let local: Vec<f64> = (0..n).map(|i| (0..n).map(|nu| rates[nu] * w[(nu, i)]).sum()).collect();
    let local_sq: Vec<f64> =
        (0..n).map(|i| (0..n).map(|nu| rates[nu] * rates[nu] * w[(nu, i)]).sum()).collect();
    let sum_local_sq: f64 = local.iter().map(|g| g * g).sum();
    let p = NonRadiativeProbabilities::new(mean, gamma_nr);

    let coherent = nf * nf * mean * mean + m2 - 2.0 * sum_local_sq;
    // Σ_{ν,μ} Γ_ν Γ_μ ⟨σᵢ⁺ Ô_ν†Ô_μ†Ô_μÔ_ν σᵢ⁻⟩
    let after_loss = |i: usize| {
        nf * nf * mean * mean + m2 - 2.0 * local_sq[i] - 2.0 * nf * local[i] * mean
            + 4.0 * local[i] * local[i]
            - 2.0 * sum_local_sq
    };
    let numerator = p.p02 * coherent
        + (0..n).map(|i| (p.p12[i] + p.p22[i]) * after_loss(i)).sum::<f64>();
    let denominator =
        p.p01 * m1 + (0..n).map(|i| p.p11[i] * (nf - 1.0) * local[i]).sum::<f64>();
    Ok(numerator / (denominator * denominator))
}

/// Closed form of [`g2_nonradiative`] when every emitter has the same γ.
pub fn g2_nonradiative_uniform(moments: &RateMoments, gamma0: &[f64], gamma: f64) -> Result<f64> {
    let n = moments.n;
    if gamma0.len() != n {
        return Err(Error::Validation(format!("{} rates for {n} emitters", gamma0.len())));
    }
    if n < 2 {
        return Err(Error::Domain(format!("g2 needs at least 2 emitters, got {n}")));
    }
    let nf = n as f64;
    let mean = moments.mean_rate();
    let sum_sq: f64 = gamma0.iter().map(|g| g * g).sum();
    let enhancement = (1.0 + gamma / mean).powi(2) * (1.0 - 4.0 * gamma / (nf * mean + 2.0 * nf * gamma));
    let denom = nf * mean + (nf - 1.0) * gamma;
    Ok(enhancement * (nf * nf * mean * mean + moments.m2 - 2.0 * sum_sq) / (denom * denom))
}
