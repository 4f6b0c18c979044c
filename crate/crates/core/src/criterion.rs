//! Critical distances, revivals and stochastic ensembles.
//!
//! A lattice family is a unit-spacing template whose positions are scaled by
//! the spacing d. Filling defects and position noise are applied to the
//! template, so the noise stays proportional to d. g²(0) at each d comes
//! from the O(N²) pair sum in [`ScaledCouplings`].

use std::f64::consts::FRAC_1_SQRT_2;
use std::io::Write;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{decay_channels, rate_moments, DecayChannels, RateMoments};
use crate::error::{Error, Result};
use crate::geometry::{apply_filling, apply_position_noise, build_lattice, EmitterArray, LatticeSpec};
use crate::interactions::{interaction_matrices, ScaledCouplings};
use crate::statistics::{g2_zero, g3_zero};

pub const DEFAULT_GRID: usize = 400;
pub const DEFAULT_REFINE_TOL: f64 = 1e-4;
/// Bisection keeps going until |g² − 1| drops below this at the midpoint.
pub const CROSSING_RESIDUAL: f64 = 1e-6;
const REVIVAL_LOCI: [f64; 2] = [0.5, FRAC_1_SQRT_2];
const REVIVAL_HALF_WIDTH: f64 = 0.05;
const REVIVAL_DENSIFY: usize = 4;
const MAX_BISECTIONS: usize = 200;

/// A geometry at unit spacing, evaluated at any spacing d.
#[derive(Debug, Clone)]
pub struct Family {
    template: EmitterArray,
    couplings: ScaledCouplings,
}

impl Family {
    pub fn from_spec(spec: &LatticeSpec) -> Result<Self> {
        Ok(Self::from_template(build_lattice(&spec.with_spacing(1.0))?))
    }

    /// `template` must have unit lattice spacing.
    pub fn from_template(template: EmitterArray) -> Self {
        let couplings = ScaledCouplings::new(&template);
        Family { template, couplings }
    }

    pub fn n(&self) -> usize {
        self.template.len()
    }

    pub fn dimension(&self) -> usize {
        self.template.dimension()
    }

    pub fn template(&self) -> &EmitterArray {
        &self.template
    }

    pub fn array_at(&self, d: f64) -> Result<EmitterArray> {
        self.template.scaled(d)
    }

    /// First two rate moments at spacing d, without building Γ.
    pub fn moments_at(&self, d: f64) -> Result<RateMoments> {
        check_spacing(d)?;
        let (m1, m2) = self.couplings.first_two_moments(d);
        Ok(RateMoments { n: self.n(), m1, m2, m3: None })
    }

    pub fn g2_at(&self, d: f64) -> Result<f64> {
        g2_zero(&self.moments_at(d)?)
    }
}

fn check_spacing(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("spacing must be positive, got {d}")))
    }
}

/// Scan grid over `d_range`: `grid` uniform points, with each interval
/// within ±0.05 of λ₀/2 and λ₀/√2 split four ways when `dimension` ≥ 2.
pub fn scan_grid(d_range: (f64, f64), grid: usize, dimension: usize) -> Result<Vec<f64>> {
    let (lo, hi) = d_range;
    check_spacing(lo)?;
    if !(hi > lo && hi.is_finite()) {
        return Err(Error::Validation(format!("empty spacing range [{lo}, {hi}]")));
    }
    if grid < 2 {
        return Err(Error::Validation(format!("scan needs at least 2 points, got {grid}")));
    }
    let step = (hi - lo) / (grid - 1) as f64;
    let uniform: Vec<f64> = (0..grid).map(|k| if k == grid - 1 { hi } else { lo + step * k as f64 }).collect();
    if dimension < 2 {
        return Ok(uniform);
    }
    let near_revival = |d: f64| REVIVAL_LOCI.iter().any(|r| (d - r).abs() <= REVIVAL_HALF_WIDTH);
    let mut out = Vec::with_capacity(grid * 2);
    for w in uniform.windows(2) {
        out.push(w[0]);
        if near_revival(w[0]) || near_revival(w[1]) {
            let sub = (w[1] - w[0]) / REVIVAL_DENSIFY as f64;
            out.extend((1..REVIVAL_DENSIFY).map(|k| w[0] + sub * k as f64));
        }
    }
    out.push(hi);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanPoint {
    pub d: f64,
    pub g2: f64,
    pub g3: Option<f64>,
    pub variance: f64,
}

/// g²(0) over the scan grid via the pair-sum fast path.
pub fn scan_g2(family: &Family, d_range: (f64, f64), grid: usize) -> Result<Vec<ScanPoint>> {
    let ds = scan_grid(d_range, grid, family.dimension())?;
    ds.par_iter()
        .map(|&d| {
            let m = family.moments_at(d)?;
            Ok(ScanPoint { d, g2: g2_zero(&m)?, g3: None, variance: m.variance() })
        })
        .collect()
}

/// g²(0) and g³(0) over the scan grid. Builds Γ at every point for the
/// third moment.
pub fn scan_statistics(family: &Family, d_range: (f64, f64), grid: usize) -> Result<Vec<ScanPoint>> {
    let ds = scan_grid(d_range, grid, family.dimension())?;
    ds.par_iter()
        .map(|&d| {
            let m = rate_moments(&interaction_matrices(&family.array_at(d)?)?);
            let g3 = if m.n >= 3 { Some(g3_zero(&m)?) } else { None };
            Ok(ScanPoint { d, g2: g2_zero(&m)?, g3, variance: m.variance() })
        })
        .collect()
}

/// Indices of interior local maxima of g²(0) along a scan.
pub fn local_maxima(scan: &[ScanPoint]) -> Vec<usize> {
    (1..scan.len().saturating_sub(1))
        .filter(|&k| scan[k].g2 > scan[k - 1].g2 && scan[k].g2 >= scan[k + 1].g2)
        .collect()
}

/// Sign change of g² − 1, read with decreasing d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// g² rises above 1 as d decreases.
    Upward,
    /// g² falls below 1 as d decreases.
    Downward,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::Upward => "upward",
            Direction::Downward => "downward",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub d: f64,
    pub direction: Direction,
    /// g² − 1 at `d`.
    pub residual: f64,
}

/// Crossings sorted by increasing d.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CrossingSet {
    pub crossings: Vec<Crossing>,
}

impl CrossingSet {
    pub fn is_empty(&self) -> bool {
        self.crossings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.crossings.len()
    }

    /// Largest d with a burst on its small-d side.
    pub fn d_critical(&self) -> Option<f64> {
        self.crossings.iter().rev().find(|c| c.direction == Direction::Upward).map(|c| c.d)
    }

    /// CSV rows (N, d, direction) under a header.
    pub fn write_csv<W: Write>(&self, n: usize, out: &mut W) -> Result<()> {
        writeln!(out, "n,d_lambda0,direction")?;
        for c in &self.crossings {
            writeln!(out, "{n},{:.10},{}", c.d, c.direction.label())?;
        }
        Ok(())
    }
}

/// Brackets every sign change of g²(d) − 1 on `grid` and refines it by
/// bisection until the bracket is narrower than `refine_tol` and the
/// midpoint residual is below [`CROSSING_RESIDUAL`].
pub fn find_crossings<F>(g2: F, grid: &[f64], refine_tol: f64) -> Result<CrossingSet>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if !(refine_tol > 0.0) {
        return Err(Error::Validation(format!("refinement tolerance must be positive, got {refine_tol}")));
    }
    let values: Vec<f64> = grid.par_iter().map(|&d| g2(d)).collect::<Result<_>>()?;
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("g2 is not finite at d = {}", grid[k])));
    }
    let brackets: Vec<usize> = (0..grid.len().saturating_sub(1))
        .filter(|&k| (values[k] > 1.0) != (values[k + 1] > 1.0))
        .collect();
    let crossings = brackets
        .par_iter()
        .map(|&k| {
            let direction = if values[k] > 1.0 { Direction::Upward } else { Direction::Downward };
            let (d, residual) = bisect(&g2, grid[k], grid[k + 1], values[k] > 1.0, refine_tol)?;
            Ok(Crossing { d, direction, residual })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossingSet { crossings })
}

fn bisect<F>(g2: &F, mut lo: f64, mut hi: f64, burst_low: bool, tol: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut mid = 0.5 * (lo + hi);
    let mut residual = g2(mid)? - 1.0;
    for _ in 0..MAX_BISECTIONS {
        if hi - lo < tol && residual.abs() < CROSSING_RESIDUAL {
            return Ok((mid, residual));
        }
        if (residual > 0.0) == burst_low {
            lo = mid;
        } else {
            hi = mid;
        }
        let next = 0.5 * (lo + hi);
        if next == mid {
            break;
        }
        mid = next;
        residual = g2(mid)? - 1.0;
    }
    warn!("bisection stalled at d = {mid} with residual {residual:e}");
    Ok((mid, residual))
}

/// All crossings of a lattice family over `d_range` on the default grid.
pub fn find_critical_distance(family: &Family, d_range: (f64, f64), refine_tol: f64) -> Result<CrossingSet> {
    find_critical_distance_on(family, d_range, DEFAULT_GRID, refine_tol)
}

pub fn find_critical_distance_on(
    family: &Family,
    d_range: (f64, f64),
    grid: usize,
    refine_tol: f64,
) -> Result<CrossingSet> {
    let ds = scan_grid(d_range, grid, family.dimension())?;
    find_crossings(|d| family.g2_at(d), &ds, refine_tol)
}

/// Crossings of a g² variant that needs the channel decomposition at each d.
pub fn find_critical_distance_with<F>(
    family: &Family,
    d_range: (f64, f64),
    grid: usize,
    refine_tol: f64,
    g2: F,
) -> Result<CrossingSet>
where
    F: Fn(&EmitterArray, &DecayChannels) -> Result<f64> + Sync,
{
    let ds = scan_grid(d_range, grid, family.dimension())?;
    find_crossings(
        |d| {
            let array = family.array_at(d)?;
            let channels = decay_channels(&interaction_matrices(&array)?)?;
            g2(&array, &channels)
        },
        &ds,
        refine_tol,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Perturbation {
    /// Each site occupied independently with probability η.
    Filling(f64),
    /// Gaussian displacement per coordinate, width σ_rel·d.
    PositionNoise(f64),
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Perturbation::Filling(eta) if !(eta > 0.0 && eta <= 1.0) => {
                Err(Error::Validation(format!("filling fraction must lie in (0, 1], got {eta}")))
            }
            Perturbation::PositionNoise(s) if !(s >= 0.0 && s.is_finite()) => {
                Err(Error::Validation(format!("sigma_rel must be >= 0, got {s}")))
            }
            _ => Ok(()),
        }
    }

    fn apply(&self, template: &EmitterArray, rng: &mut ChaCha8Rng) -> Result<EmitterArray> {
        match *self {
            Perturbation::Filling(eta) => apply_filling(template, eta, rng),
            Perturbation::PositionNoise(s) => apply_position_noise(template, s, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleOptions {
    pub d_range: (f64, f64),
    pub grid: usize,
    pub refine_tol: f64,
    pub bins: usize,
    /// Window of the moving average over histogram bins (odd).
    pub rolling_window: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            d_range: (0.05, 1.2),
            grid: DEFAULT_GRID,
            refine_tol: DEFAULT_REFINE_TOL,
            bins: 40,
            rolling_window: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Ok,
    /// Fewer than two emitters survived the perturbation.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSample {
    pub index: usize,
    pub seed: u64,
    pub n: usize,
    pub status: SampleStatus,
    /// None when the sample never bursts in range.
    pub d_critical: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub envelope: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub requested: usize,
    pub failed: usize,
    pub without_crossing: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleResult {
    pub master_seed: u64,
    pub samples: Vec<EnsembleSample>,
    pub summary: EnsembleSummary,
}

impl EnsembleResult {
    pub fn critical_values(&self) -> Vec<f64> {
        self.samples.iter().filter_map(|s| s.d_critical).collect()
    }

    /// CSV rows (index, seed, N, status, d_critical); empty field when no crossing.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "index,seed,n,status,d_critical_lambda0")?;
        for s in &self.samples {
            let status = match s.status {
                SampleStatus::Ok => "ok",
                SampleStatus::Degenerate => "degenerate",
            };
            let d = s.d_critical.map(|d| format!("{d:.10}")).unwrap_or_default();
            writeln!(out, "{},{},{},{status},{d}", s.index, s.seed, s.n)?;
        }
        Ok(())
    }

    pub fn write_histogram_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let h = &self.summary.histogram;
        writeln!(out, "bin_low_lambda0,bin_high_lambda0,count,rolling_average")?;
        for k in 0..h.counts.len() {
            writeln!(out, "{:.10},{:.10},{},{:.10}", h.edges[k], h.edges[k + 1], h.counts[k], h.envelope[k])?;
        }
        Ok(())
    }
}

/// Child seeds drawn in order from a ChaCha8 stream keyed by `master`.
pub fn child_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..count).map(|_| rng.random()).collect()
}

/// d_critical for `samples` perturbed copies of `base`.
pub fn ensemble_critical(
    base: &LatticeSpec,
    perturbation: Perturbation,
    samples: usize,
    seed: u64,
    options: &EnsembleOptions,
) -> Result<EnsembleResult> {
    if samples == 0 {
        return Err(Error::Validation("ensemble needs at least one sample".into()));
    }
    if options.bins == 0 {
        return Err(Error::Validation("histogram needs at least one bin".into()));
    }
    perturbation.validate()?;
    let template = build_lattice(&base.with_spacing(1.0))?;
    let grid = scan_grid(options.d_range, options.grid, template.dimension())?;
    let seeds = child_seeds(seed, samples);
    let results = seeds
        .par_iter()
        .enumerate()
        .map(|(index, &child)| {
            let mut rng = ChaCha8Rng::seed_from_u64(child);
            match perturbation.apply(&template, &mut rng) {
                Ok(array) => {
                    let family = Family::from_template(array);
                    let set = find_crossings(|d| family.g2_at(d), &grid, options.refine_tol)?;
                    Ok(EnsembleSample {
                        index,
                        seed: child,
                        n: family.n(),
                        status: SampleStatus::Ok,
                        d_critical: set.d_critical(),
                    })
                }
                Err(Error::DegenerateArray(n)) => {
                    debug!("sample {index} degenerate with {n} emitters");
                    Ok(EnsembleSample { index, seed: child, n, status: SampleStatus::Degenerate, d_critical: None })
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&results, options);
    Ok(EnsembleResult { master_seed: seed, samples: results, summary })
}

fn summarize(samples: &[EnsembleSample], options: &EnsembleOptions) -> EnsembleSummary {
    let failed = samples.iter().filter(|s| s.status == SampleStatus::Degenerate).count();
    let values: Vec<f64> = samples.iter().filter_map(|s| s.d_critical).collect();
    let without_crossing = samples.len() - failed - values.len();
    let (mean, std) = match values.len() {
        0 => (None, None),
        n => {
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            (Some(mean), Some(var.sqrt()))
        }
    };
    EnsembleSummary {
        requested: samples.len(),
        failed,
        without_crossing,
        mean,
        std,
        histogram: histogram(&values, options.d_range, options.bins, options.rolling_window),
    }
}

/// Fixed-range histogram with a centered moving average of the counts.
pub fn histogram(values: &[f64], range: (f64, f64), bins: usize, window: usize) -> Histogram {
    let (lo, hi) = range;
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = ((v - lo) / width).floor();
        if k >= 0.0 && v <= hi {
            counts[(k as usize).min(bins - 1)] += 1;
        }
    }
    let half = window / 2;
    let envelope = (0..bins)
        .map(|k| {
            let a = k.saturating_sub(half);
            let b = (k + half).min(bins - 1);
            counts[a..=b].iter().sum::<usize>() as f64 / (b - a + 1) as f64
        })
        .collect();
    Histogram { edges, counts, envelope }
}

/// Sarle's bimodality coefficient (skew² + 1) / (excess kurtosis + 3(n−1)²/((n−2)(n−3))).
/// Values above 5/9 indicate a bimodal or strongly skewed sample.
pub fn bimodality_coefficient(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 4 {
        return None;
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    if m2 == 0.0 {
        return None;
    }
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / nf;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
    // sample-size corrected skewness and excess kurtosis
    let g1 = m3 / m2.powf(1.5);
    let g2 = m4 / (m2 * m2) - 3.0;
    let skew = g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0);
    let kurt = (nf - 1.0) / ((nf - 2.0) * (nf - 3.0)) * ((nf + 1.0) * g2 + 6.0);
    Some((skew * skew + 1.0) / (kurt + 3.0 * (nf - 1.0).powi(2) / ((nf - 2.0) * (nf - 3.0))))
}

/// Write a g² scan as CSV rows (d, g2, g3, variance); g3 blank when absent.
pub fn write_scan_csv<W: Write>(scan: &[ScanPoint], out: &mut W) -> Result<()> {
    writeln!(out, "d_lambda0,g2,g3,variance")?;
    for p in scan {
        let g3 = p.g3.map(|g| format!("{g:.12}")).unwrap_or_default();
        writeln!(out, "{:.10},{:.12},{g3},{:.12}", p.d, p.g2, p.variance)?;
    }
    Ok(())
}
