//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use superrad::channels::DecayChannels;
use superrad::geometry::{CVec3, EmitterArray, Vec3};
use superrad::Complex64;

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Random points in a cube of side `box_len` (λ₀) with a minimum pair
/// separation, and random real unit dipoles.
pub fn random_array<R: Rng>(rng: &mut R, n: usize, box_len: f64) -> EmitterArray {
    let min_sep = 0.02 * box_len.max(0.5);
    let mut positions: Vec<Vec3> = Vec::with_capacity(n);
    while positions.len() < n {
        let p = Vec3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * box_len;
        if positions.iter().all(|q| (p - q).norm() > min_sep) {
            positions.push(p);
        }
    }
    let dipoles = (0..n)
        .map(|_| {
            let v = Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                .normalize();
            CVec3::new(c(v.x), c(v.y), c(v.z))
        })
        .collect();
    EmitterArray::new(positions, dipoles).unwrap()
}

/// ‖Ô_λ Ô_μ |e…e⟩‖² style norms written as explicit index sums over distinct
/// emitters: the k-hole amplitude on a set of sites is the permanent-like sum
/// over orderings of the channel coefficients.
pub fn moments_by_index_sums(ch: &DecayChannels) -> (f64, f64) {
    let n = ch.n();
    let a = &ch.coefficients;
    let g = &ch.rates;
    let mut single = 0.0;
    for nu in 0..n {
        for i in 0..n {
            single += g[nu] * a[(nu, i)].norm_sqr();
        }
    }
    let mut pair = 0.0;
    for mu in 0..n {
        for nu in 0..n {
            let mut norm = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    let amp = a[(mu, i)] * a[(nu, j)] + a[(mu, j)] * a[(nu, i)];
                    norm += amp.norm_sqr();
                }
            }
            pair += g[mu] * g[nu] * norm;
        }
    }
    let mut triple = 0.0;
    for l in 0..n {
        for mu in 0..n {
            for nu in 0..n {
                let mut norm = 0.0;
                for i in 0..n {
                    for j in (i + 1)..n {
                        for k in (j + 1)..n {
                            let s = [i, j, k];
                            let mut amp = Complex64::ZERO;
                            for p in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
                                amp += a[(l, s[p[0]])] * a[(mu, s[p[1]])] * a[(nu, s[p[2]])];
                            }
                            norm += amp.norm_sqr();
                        }
                    }
                }
                triple += g[l] * g[mu] * g[nu] * norm;
            }
        }
    }
    (pair / (single * single), triple / (single * single * single))
}

/// Full 2ᴺ state vectors; bit i set means emitter i is excited.
pub fn fully_excited(n: usize) -> Vec<Complex64> {
    let mut psi = vec![Complex64::ZERO; 1 << n];
    psi[(1 << n) - 1] = Complex64::ONE;
    psi
}

/// Σᵢ αᵢ σᵢ⁻ ψ.
pub fn lower(alpha: &[Complex64], psi: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::ZERO; psi.len()];
    for (s, amp) in psi.iter().enumerate() {
        if *amp == Complex64::ZERO {
            continue;
        }
        for (i, a) in alpha.iter().enumerate() {
            if s & (1 << i) != 0 {
                out[s ^ (1 << i)] += a * amp;
            }
        }
    }
    out
}

pub fn norm_sqr(psi: &[Complex64]) -> f64 {
    psi.iter().map(|z| z.norm_sqr()).sum()
}

pub fn channel(ch: &DecayChannels, nu: usize) -> Vec<Complex64> {
    (0..ch.n()).map(|i| ch.coefficients[(nu, i)]).collect()
}

/// Σ_μ Γ_μ ‖Ô_μ ψ‖².
pub fn emission(ch: &DecayChannels, psi: &[Complex64]) -> f64 {
    (0..ch.n()).map(|mu| ch.rates[mu] * norm_sqr(&lower(&channel(ch, mu), psi))).sum()
}

/// Σ_{μν} Γ_μ Γ_ν ‖Ô_ν Ô_μ ψ‖² / (Σ_μ Γ_μ ‖Ô_μ ψ‖²)².
pub fn g2_state(ch: &DecayChannels, psi: &[Complex64]) -> f64 {
    let n = ch.n();
    let mut num = 0.0;
    for mu in 0..n {
        let first = lower(&channel(ch, mu), psi);
        num += ch.rates[mu] * emission(ch, &first);
    }
    let den = emission(ch, psi);
    num / (den * den)
}

/// H = Σ_{i≠j} J_ij σᵢ⁺σⱼ⁻ on the full 2ᴺ space.
pub fn full_hamiltonian(j: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = j.nrows();
    let dim = 1usize << n;
    let mut h = DMatrix::zeros(dim, dim);
    for s in 0..dim {
        for jj in 0..n {
            if s & (1 << jj) == 0 {
                continue;
            }
            for ii in 0..n {
                if ii == jj || s & (1 << ii) != 0 {
                    continue;
                }
                let t = (s ^ (1 << jj)) | (1 << ii);
                h[(t, s)] += j[(ii, jj)];
            }
        }
    }
    h
}

/// g²(τ)/g²(0) from e^{−iHτ} on the full Hilbert space.
pub fn g2_tau_full(ch: &DecayChannels, j: &DMatrix<Complex64>, taus: &[f64]) -> Vec<f64> {
    let n = ch.n();
    let h = full_hamiltonian(j);
    let eig = nalgebra::SymmetricEigen::new(h);
    let e = &eig.eigenvectors;
    let first: Vec<DVector<Complex64>> = (0..n)
        .map(|nu| e.ad_mul(&DVector::from_vec(lower(&channel(ch, nu), &fully_excited(n)))))
        .collect();
    let numerator = |tau: f64| -> f64 {
        let phase =
            DVector::from_iterator(e.nrows(), eig.eigenvalues.iter().map(|v| Complex64::from_polar(1.0, -v * tau)));
        (0..n)
            .map(|nu| {
                let psi = e * first[nu].component_mul(&phase);
                ch.rates[nu] * emission(ch, psi.as_slice())
            })
            .sum()
    };
    let reference = numerator(0.0);
    taus.iter().map(|&t| numerator(t) / reference).collect()
}
