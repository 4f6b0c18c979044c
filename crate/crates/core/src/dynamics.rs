//! Exact small-N emission dynamics from the fully inverted state.
//!
//! Basis states are bitmasks, bit i set when emitter i is excited. Without a
//! drive, the effective Hamiltonian
//!
//! ```text
//! H_eff = Σ_ij (J_ij − (i/2) Γ_ji) σᵢ⁺σⱼ⁻ − (i/2) Σ_i γᵢ σᵢ⁺σᵢ⁻
//! ```
//!
//! conserves the number of excitations and every jump removes one. Starting
//! from |e…e⟩, the density matrix therefore stays block diagonal in the
//! excitation number k, and a pure trajectory lives in a single block between
//! jumps. Both backends work block by block with sparse operators.

mod ode;

use std::io::Write;

use log::debug;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::decay_channels;
use crate::error::{Error, Result};
use crate::geometry::EmitterArray;
use crate::interactions::interaction_matrices;
use crate::Complex64;

pub use ode::{Dopri5, Tolerances};

pub const MAX_LIOUVILLE_EMITTERS: usize = 10;
pub const MAX_TRAJECTORY_EMITTERS: usize = 16;
const TRACE_DRIFT_LIMIT: f64 = 1e-6;
const TRAJECTORY_CHUNK: usize = 64;
const JUMP_TIME_TOL: f64 = 1e-10;

/// Output times: steps of 10⁻³/N up to 0.1/N, 10⁻²/N up to 1/N, then 0.05/N.
pub fn emission_grid(n: usize, t_end: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Validation("empty array".into()));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Validation(format!("t_end must be positive, got {t_end}")));
    }
    let nf = n as f64;
    let mut times = vec![0.0];
    let mut start = 0.0;
    for (step, stop) in [(1e-3 / nf, 0.1 / nf), (1e-2 / nf, 1.0 / nf), (0.05 / nf, f64::INFINITY)] {
        let mut k = 1usize;
        loop {
            let t = start + step * k as f64;
            if t >= t_end - 1e-12 * t_end {
                times.push(t_end);
                return Ok(times);
            }
            if t > stop + 1e-12 * stop {
                break;
            }
            times.push(t);
            k += 1;
        }
        start = *times.last().unwrap();
    }
    unreachable!("last grid segment is unbounded")
}

/// States with k excitations, ascending, and each state's index within its block.
#[derive(Debug, Clone)]
struct Sectors {
    n: usize,
    states: Vec<Vec<u32>>,
    rank: Vec<u32>,
    /// For every state in block k: (i, index of state | 1<<i in block k+1) for unexcited i.
    raise: Vec<Vec<Vec<(u8, u32)>>>,
}

impl Sectors {
    fn new(n: usize) -> Self {
        let mut states = vec![Vec::new(); n + 1];
        let mut rank = vec![0u32; 1 << n];
        for s in 0u32..(1u32 << n) {
            let k = s.count_ones() as usize;
            rank[s as usize] = states[k].len() as u32;
            states[k].push(s);
        }
        let raise = (0..=n)
            .map(|k| {
                states[k]
                    .iter()
                    .map(|&s| {
                        (0..n)
                            .filter(|&i| s & (1 << i) == 0)
                            .map(|i| (i as u8, rank[(s | (1 << i)) as usize]))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Sectors { n, states, rank, raise }
    }

    fn dim(&self, k: usize) -> usize {
        self.states[k].len()
    }
}

/// Row-compressed operator on one excitation block.
#[derive(Debug, Clone)]
struct SparseOp {
    start: Vec<usize>,
    col: Vec<u32>,
    val: Vec<Complex64>,
}

impl SparseOp {
    /// Block k of Σ_ij c(i,j) σᵢ⁺σⱼ⁻ + Σ_i extra(i) σᵢ⁺σᵢ⁻.
    fn hopping<C, D>(sectors: &Sectors, k: usize, coef: C, extra: D) -> Self
    where
        C: Fn(usize, usize) -> Complex64,
        D: Fn(usize) -> Complex64,
    {
        let n = sectors.n;
        let mut op = SparseOp { start: vec![0], col: Vec::new(), val: Vec::new() };
        for (r, &s) in sectors.states[k].iter().enumerate() {
            let mut diag = Complex64::ZERO;
            for i in (0..n).filter(|&i| s & (1 << i) != 0) {
                diag += coef(i, i) + extra(i);
                for j in (0..n).filter(|&j| s & (1 << j) == 0) {
                    let v = coef(i, j);
                    if v != Complex64::ZERO {
                        op.col.push(sectors.rank[((s ^ (1 << i)) | (1 << j)) as usize]);
                        op.val.push(v);
                    }
                }
            }
            op.col.push(r as u32);
            op.val.push(diag);
            op.start.push(op.col.len());
        }
        op
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let span = self.start[r]..self.start[r + 1];
        self.col[span.clone()].iter().map(|&c| c as usize).zip(self.val[span].iter().copied())
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        for (r, out) in y.iter_mut().enumerate() {
            *out = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// ⟨x|A|x⟩.
    fn expectation(&self, x: &[Complex64]) -> Complex64 {
        x.iter().enumerate().map(|(r, xr)| xr.conj() * self.row(r).map(|(c, v)| v * x[c]).sum::<Complex64>()).sum()
    }
}

/// Operators of one array, per excitation block.
#[derive(Debug, Clone)]
struct Model {
    n: usize,
    sectors: Sectors,
    heff: Vec<SparseOp>,
    emission: Vec<SparseOp>,
    gamma: DMatrix<Complex64>,
    gamma_nr: Vec<f64>,
    rates: Vec<f64>,
    coefficients: DMatrix<Complex64>,
}

impl Model {
    fn new(array: &EmitterArray, include_hamiltonian: bool) -> Result<Self> {
        let n = array.len();
        let m = interaction_matrices(array)?;
        let channels = decay_channels(&m)?;
        let rates = channels.clamped_rates()?;
        let gamma = if rates == channels.rates { m.gamma.clone() } else { channels.reconstruct(&rates) };
        let j = if include_hamiltonian { m.j.clone() } else { DMatrix::zeros(n, n) };
        let gamma_nr = array.gamma_nr().to_vec();
        let sectors = Sectors::new(n);
        let half_i = Complex64::new(0.0, 0.5);
        let heff = (0..=n)
            .map(|k| {
                SparseOp::hopping(
                    &sectors,
                    k,
                    |a, b| j[(a, b)] - half_i * gamma[(b, a)],
                    |a| -half_i * gamma_nr[a],
                )
            })
            .collect();
        let emission =
            (0..=n).map(|k| SparseOp::hopping(&sectors, k, |a, b| gamma[(b, a)], |_| Complex64::ZERO)).collect();
        Ok(Model {
            n,
            sectors,
            heff,
            emission,
            gamma,
            gamma_nr,
            rates,
            coefficients: channels.coefficients,
        })
    }
}

/// How the trace was produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum BackendInfo {
    Liouville { steps: usize, rejected: usize, max_trace_drift: f64 },
    Trajectories { trajectories: usize, seed: u64, jumps: usize },
}

/// Photon emission rate on a time grid (t in 1/Γ₀, R in Γ₀).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmissionTrace {
    pub times: Vec<f64>,
    pub rate: Vec<f64>,
    /// Standard error of the trajectory mean.
    pub stderr: Option<Vec<f64>>,
    /// Σᵢ⟨σᵢᵉᵉ⟩ (Liouville only).
    pub excitation: Option<Vec<f64>>,
    pub t_max: f64,
    pub peak_ratio: f64,
    pub burst: bool,
    pub info: BackendInfo,
}

impl EmissionTrace {
    fn new(
        times: Vec<f64>,
        rate: Vec<f64>,
        stderr: Option<Vec<f64>>,
        excitation: Option<Vec<f64>>,
        info: BackendInfo,
    ) -> Result<Self> {
        let b = burst_of(&times, &rate)?;
        Ok(EmissionTrace { times, rate, stderr, excitation, t_max: b.t_max, peak_ratio: b.peak_ratio, burst: b.burst, info })
    }

    /// ∫R dt by the trapezoid rule.
    pub fn emitted_photons(&self) -> f64 {
        self.times.windows(2).zip(self.rate.windows(2)).map(|(t, r)| 0.5 * (t[1] - t[0]) * (r[0] + r[1])).sum()
    }

    /// CSV rows (t, R, stderr); stderr blank for the Liouville backend.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "t_inv_gamma0,rate_gamma0,stderr_gamma0")?;
        for (k, (t, r)) in self.times.iter().zip(&self.rate).enumerate() {
            let e = self.stderr.as_ref().map(|e| format!("{:.12e}", e[k])).unwrap_or_default();
            writeln!(out, "{t:.10e},{r:.12e},{e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Burst {
    pub t_max: f64,
    pub peak_ratio: f64,
    pub burst: bool,
}

/// t_max = argmax R (earliest on ties); a burst needs t_max beyond two grid steps.
pub fn detect_burst(trace: &EmissionTrace) -> Result<Burst> {
    burst_of(&trace.times, &trace.rate)
}

fn burst_of(times: &[f64], rate: &[f64]) -> Result<Burst> {
    if times.is_empty() || times.len() != rate.len() {
        return Err(Error::Data(format!("{} times for {} rates", times.len(), rate.len())));
    }
    if let Some(k) = rate.iter().chain(times).position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite trace entry at index {k}")));
    }
    let mut best = 0;
    for (k, r) in rate.iter().enumerate() {
        if *r > rate[best] {
            best = k;
        }
    }
    let t_tol = times[2.min(times.len() - 1)] - times[0];
    let peak_ratio = if rate[0] > 0.0 { rate[best] / rate[0] } else { 1.0 };
    Ok(Burst { t_max: times[best], peak_ratio, burst: times[best] - times[0] > t_tol })
}

fn check_size(array: &EmitterArray, limit: usize, backend: &str) -> Result<()> {
    if array.is_empty() {
        return Err(Error::Validation("empty array".into()));
    }
    if array.len() > limit {
        return Err(Error::Capacity(format!(
            "{backend} backend supports at most {limit} emitters, got {}",
            array.len()
        )));
    }
    Ok(())
}

/// Flat storage of the block-diagonal density matrix, row-major per block.
struct BlockLayout {
    offset: Vec<usize>,
    dim: Vec<usize>,
}

impl BlockLayout {
    fn new(sectors: &Sectors) -> Self {
        let dim: Vec<usize> = (0..=sectors.n).map(|k| sectors.dim(k)).collect();
        let mut offset = Vec::with_capacity(dim.len() + 1);
        let mut acc = 0;
        for d in &dim {
            offset.push(acc);
            acc += d * d;
        }
        offset.push(acc);
        BlockLayout { offset, dim }
    }

    fn len(&self) -> usize {
        *self.offset.last().unwrap()
    }

    fn block<'a>(&self, y: &'a [Complex64], k: usize) -> &'a [Complex64] {
        &y[self.offset[k]..self.offset[k + 1]]
    }
}

fn liouville_rhs(model: &Model, layout: &BlockLayout, scratch: &mut Vec<Complex64>, y: &[Complex64], dy: &mut [Complex64]) {
    let n = model.n;
    let minus_i = Complex64::new(0.0, -1.0);
    for k in 0..=n {
        let d = layout.dim[k];
        let rho = layout.block(y, k);
        let out = &mut dy[layout.offset[k]..layout.offset[k + 1]];
        // A = H_eff ρ; the commutator part is −i(A − A†)
        scratch.clear();
        scratch.resize(d * d, Complex64::ZERO);
        for a in 0..d {
            let row = &mut scratch[a * d..(a + 1) * d];
            for (m, h) in model.heff[k].row(a) {
                for (dst, src) in row.iter_mut().zip(&rho[m * d..(m + 1) * d]) {
                    *dst += h * src;
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = minus_i * (scratch[a * d + b] - scratch[b * d + a].conj());
                out[a * d + b] = v;
                out[b * d + a] = v.conj();
            }
        }
        if k == n {
            continue;
        }
        // Σ_ij Γ_ij σᵢ⁻ ρ σⱼ⁺ + Σ_i γᵢ σᵢ⁻ ρ σᵢ⁺ fed from block k+1
        let up = layout.block(y, k + 1);
        let du = layout.dim[k + 1];
        let raise = &model.sectors.raise[k];
        for a in 0..d {
            for b in a..d {
                let mut acc = Complex64::ZERO;
                for &(i, ai) in &raise[a] {
                    let row = &up[ai as usize * du..(ai as usize + 1) * du];
                    for &(j, bj) in &raise[b] {
                        acc += model.gamma[(i as usize, j as usize)] * row[bj as usize];
                    }
                    if model.gamma_nr[i as usize] != 0.0 {
                        if let Some(&(_, bi)) = raise[b].iter().find(|(j, _)| *j == i) {
                            acc += row[bi as usize] * model.gamma_nr[i as usize];
                        }
                    }
                }
                out[a * d + b] += acc;
                if b != a {
                    out[b * d + a] += acc.conj();
                }
            }
        }
    }
}

/// Master-equation evolution of the fully inverted state up to `t_end`.
pub fn evolve_liouville(
    array: &EmitterArray,
    include_hamiltonian: bool,
    t_end: f64,
    tol: &Tolerances,
) -> Result<EmissionTrace> {
    check_size(array, MAX_LIOUVILLE_EMITTERS, "Liouville")?;
    tol.validate()?;
    let n = array.len();
    let times = emission_grid(n, t_end)?;
    let model = Model::new(array, include_hamiltonian)?;
    let layout = BlockLayout::new(&model.sectors);
    let mut y = vec![Complex64::ZERO; layout.len()];
    y[layout.offset[n]] = Complex64::ONE;

    let observe = |y: &[Complex64]| {
        let mut trace = 0.0;
        let mut excited = 0.0;
        let mut rate = 0.0;
        for k in 0..=n {
            let d = layout.dim[k];
            let rho = layout.block(y, k);
            let tr: f64 = (0..d).map(|a| rho[a * d + a].re).sum();
            trace += tr;
            excited += k as f64 * tr;
            // Tr(ρ E) = Σ_ab ρ_ba E_ab
            for a in 0..d {
                for (b, e) in model.emission[k].row(a) {
                    rate += (rho[b * d + a] * e).re;
                }
            }
        }
        (trace, excited, rate)
    };

    let mut scratch = Vec::new();
    let mut rhs = |y: &[Complex64], dy: &mut [Complex64]| liouville_rhs(&model, &layout, &mut scratch, y, dy);
    let mut ode = Dopri5::new(layout.len(), *tol, 1e-4 / n as f64);
    let mut rate = Vec::with_capacity(times.len());
    let mut excitation = Vec::with_capacity(times.len());
    let mut max_drift: f64 = 0.0;
    for (idx, &t) in times.iter().enumerate() {
        if idx > 0 {
            ode.advance(&mut rhs, &mut y, t - times[idx - 1])?;
        }
        let (trace, excited, r) = observe(&y);
        let drift = (trace - 1.0).abs();
        max_drift = max_drift.max(drift);
        if drift > TRACE_DRIFT_LIMIT {
            return Err(Error::Numerical(format!(
                "trace drifted by {drift:e} at t = {t} after {} steps ({} rejected, h = {:e})",
                ode.steps, ode.rejected, ode.h
            )));
        }
        rate.push(r);
        excitation.push(excited);
    }
    debug!("liouville N={n}: {} steps, {} rejected", ode.steps, ode.rejected);
    let info = BackendInfo::Liouville { steps: ode.steps, rejected: ode.rejected, max_trace_drift: max_drift };
    EmissionTrace::new(times, rate, None, Some(excitation), info)
}

/// Kahan-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Monte-Carlo wavefunction average of R(t) over `n_traj` trajectories.
///
/// Each trajectory draws from its own ChaCha8 stream (master seed, stream =
/// trajectory index), so runs with and without the Hamiltonian share random
/// numbers trajectory by trajectory. R is estimated as ⟨ψ|Σ Γ_ji σᵢ⁺σⱼ⁻|ψ⟩ on the
/// normalized conditional state.
pub fn evolve_trajectories(
    array: &EmitterArray,
    include_hamiltonian: bool,
    n_traj: usize,
    t_end: f64,
    seed: u64,
    tol: &Tolerances,
) -> Result<EmissionTrace> {
    check_size(array, MAX_TRAJECTORY_EMITTERS, "trajectory")?;
    tol.validate()?;
    if n_traj == 0 {
        return Err(Error::Validation("need at least one trajectory".into()));
    }
    let times = emission_grid(array.len(), t_end)?;
    let model = Model::new(array, include_hamiltonian)?;
    let mut sum = vec![Compensated::default(); times.len()];
    let mut sum_sq = vec![Compensated::default(); times.len()];
    let mut jumps = 0;
    let indices: Vec<usize> = (0..n_traj).collect();
    for chunk in indices.chunks(TRAJECTORY_CHUNK) {
        let runs = chunk
            .par_iter()
            .map(|&idx| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(idx as u64);
                run_trajectory(&model, &times, tol, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        for (rates, count) in runs {
            jumps += count;
            for (k, r) in rates.iter().enumerate() {
                sum[k].add(*r);
                sum_sq[k].add(r * r);
            }
        }
    }
    let nf = n_traj as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s.sum / nf).collect();
    let stderr = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| if n_traj > 1 { ((sq.sum - nf * m * m).max(0.0) / (nf - 1.0) / nf).sqrt() } else { 0.0 })
        .collect();
    let info = BackendInfo::Trajectories { trajectories: n_traj, seed, jumps };
    EmissionTrace::new(times, mean, Some(stderr), None, info)
}

fn norm_sqr(x: &[Complex64]) -> f64 {
    x.iter().map(|c| c.norm_sqr()).sum()
}

/// One trajectory: R at each grid time and the number of jumps.
fn run_trajectory(model: &Model, times: &[f64], tol: &Tolerances, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, usize)> {
    let n = model.n;
    let mut k = n;
    let mut psi = vec![Complex64::ONE];
    let mut rates = Vec::with_capacity(times.len());
    let record = |k: usize, psi: &[Complex64]| model.emission[k].expectation(psi).re / norm_sqr(psi);
    rates.push(record(k, &psi));
    let mut threshold: f64 = rng.random();
    let mut ode = Dopri5::new(1, *tol, 1e-4 / n as f64);
    let mut jumps = 0;
    let mut t = times[0];
    let mut saved = Vec::new();
    for &target in &times[1..] {
        while k > 0 {
            let heff = &model.heff[k];
            let mut rhs = |x: &[Complex64], dx: &mut [Complex64]| {
                heff.apply(x, dx);
                for v in dx.iter_mut() {
                    *v = Complex64::new(v.im, -v.re);
                }
            };
            saved.clear();
            saved.extend_from_slice(&psi);
            ode.advance(&mut rhs, &mut psi, target - t)?;
            if norm_sqr(&psi) > threshold {
                break;
            }
            // the jump falls inside (t, target]: bisect on the elapsed time
            let (mut lo, mut hi) = (0.0, target - t);
            let h_keep = ode.h;
            while hi - lo > JUMP_TIME_TOL * hi.max(1.0) {
                let mid = 0.5 * (lo + hi);
                psi.copy_from_slice(&saved);
                ode.invalidate();
                ode.h = h_keep.min(mid);
                ode.advance(&mut rhs, &mut psi, mid)?;
                if norm_sqr(&psi) > threshold {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            psi.copy_from_slice(&saved);
            ode.invalidate();
            ode.h = h_keep.min(hi);
            ode.advance(&mut rhs, &mut psi, hi)?;
            t += hi;
            psi = jump(model, k, &psi, rng)?;
            k -= 1;
            jumps += 1;
            ode.reset(psi.len());
            ode.h = h_keep;
            threshold = rng.random();
        }
        t = target;
        rates.push(if k == 0 { 0.0 } else { record(k, &psi) });
    }
    Ok((rates, jumps))
}

/// Applies a randomly chosen jump to a block-k state; returns the normalized
/// block-(k−1) state. Channels are the collective modes in descending rate
/// order followed by the local non-radiative channels.
fn jump(model: &Model, k: usize, psi: &[Complex64], rng: &mut ChaCha8Rng) -> Result<Vec<Complex64>> {
    let n = model.n;
    let lower = &model.sectors.raise[k - 1];
    let apply = |amp: &dyn Fn(usize) -> Complex64| -> Vec<Complex64> {
        lower
            .iter()
            .map(|targets| targets.iter().map(|&(i, src)| amp(i as usize) * psi[src as usize]).sum())
            .collect()
    };
    let mut weights = Vec::with_capacity(2 * n);
    for nu in 0..n {
        let w = if model.rates[nu] > 0.0 {
            model.rates[nu] * norm_sqr(&apply(&|i| model.coefficients[(nu, i)]))
        } else {
            0.0
        };
        weights.push(w);
    }
    for i in 0..n {
        let w = if model.gamma_nr[i] > 0.0 {
            model.gamma_nr[i] * norm_sqr(&apply(&|a| if a == i { Complex64::ONE } else { Complex64::ZERO }))
        } else {
            0.0
        };
        weights.push(w);
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::Model(format!("invalid jump weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Model(format!("no decay channel available from a {k}-excitation state")));
    }
    let draw = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = weights.len() - 1;
    for (c, w) in weights.iter().enumerate() {
        acc += w;
        if draw < acc {
            chosen = c;
            break;
        }
    }
    let mut out = if chosen < n {
        apply(&|i| model.coefficients[(chosen, i)])
    } else {
        let site = chosen - n;
        apply(&|a| if a == site { Complex64::ONE } else { Complex64::ZERO })
    };
    let norm = norm_sqr(&out).sqrt();
    for v in &mut out {
        *v /= norm;
    }
    Ok(out)
}

/// Scalar description of a trace for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub t_max: f64,
    pub peak_ratio: f64,
    pub burst: bool,
    pub g2_of_geometry: Option<f64>,
}
