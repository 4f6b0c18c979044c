//! Command line front end.
//!
//! Every run is described by a [`RunConfig`], read from a TOML file and
//! patched by flags. Outputs are written atomically: curve data as CSV with
//! `#` provenance lines, scalar results as JSON. A failed run leaves no file.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::channels::{decay_channels, rate_moments};
use crate::criterion::{
    bimodality_coefficient, ensemble_critical, find_critical_distance_on, find_critical_distance_with,
    find_crossings, scan_g2, scan_grid, scan_statistics, write_scan_csv, EnsembleOptions, Family,
    Perturbation,
};
use crate::dynamics::{evolve_liouville, evolve_trajectories, EmissionTrace, Tolerances, TraceSummary};
use crate::error::{Error, Result};
use crate::geometry::{build_lattice, EmitterArray, LatticeSpec, Vec3};
use crate::interactions::{interaction_matrices, K0};
use crate::statistics::{
    coherent_spin_state_hole, g2_imperfect, g2_inhomogeneous, g2_nonradiative, g2_tau_ratio,
    phi_for_imperfection, photon_statistics,
};

#[derive(Debug, Parser)]
#[command(name = "superrad", version, about = "Superradiant burst criterion for emitter arrays")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Channels,
    G2,
    Sweep,
    Critical,
    Ensemble,
    Simulate,
    G2tau,
    Solidstate,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Channels => "channels",
            CommandKind::G2 => "g2",
            CommandKind::Sweep => "sweep",
            CommandKind::Critical => "critical",
            CommandKind::Ensemble => "ensemble",
            CommandKind::Simulate => "simulate",
            CommandKind::G2tau => "g2tau",
            CommandKind::Solidstate => "solidstate",
        }
    }

    fn extension(self) -> &'static str {
        match self {
            CommandKind::G2 => "json",
            _ => "csv",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collective decay rates Γ_ν at one or more spacings.
    Channels(Overrides),
    /// g²(0), g³(0) and the rate variance at a single geometry.
    G2(Overrides),
    /// g²(0), g³(0) against lattice spacing.
    Sweep(Overrides),
    /// Spacings where g²(0) crosses 1.
    Critical(Overrides),
    /// Critical distances of randomly filled or displaced lattices.
    Ensemble(Overrides),
    /// Photon emission rate R(t) from the fully inverted state.
    Simulate(Overrides),
    /// g²(τ)/g²(0) with coherent evolution between the first two photons.
    G2tau(Overrides),
    /// Critical distances with non-radiative decay, rate disorder or an imperfect initial state.
    Solidstate(Overrides),
}

impl Command {
    pub fn split(self) -> (CommandKind, Overrides) {
        match self {
            Command::Channels(o) => (CommandKind::Channels, o),
            Command::G2(o) => (CommandKind::G2, o),
            Command::Sweep(o) => (CommandKind::Sweep, o),
            Command::Critical(o) => (CommandKind::Critical, o),
            Command::Ensemble(o) => (CommandKind::Ensemble, o),
            Command::Simulate(o) => (CommandKind::Simulate, o),
            Command::G2tau(o) => (CommandKind::G2tau, o),
            Command::Solidstate(o) => (CommandKind::Solidstate, o),
        }
    }
}

/// Flags that override the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Output file; defaults to `<command>.csv` or `<command>.json`.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// N emitters at a single point instead of a lattice.
    #[arg(long)]
    pub dicke: Option<usize>,
    /// Lattice spacing in λ₀.
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub d_min: Option<f64>,
    #[arg(long)]
    pub d_max: Option<f64>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub sigma_rel: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub n_traj: Option<usize>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Drop the coherent dipole-dipole Hamiltonian.
    #[arg(long)]
    pub no_hamiltonian: bool,
    /// Worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Liouville,
    Trajectories,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: Option<LatticeSpec>,
    /// Emitter count for coincident emitters.
    pub dicke: Option<usize>,
    pub scan: ScanConfig,
    pub ensemble: EnsembleConfig,
    pub dynamics: DynamicsConfig,
    pub delay: DelayConfig,
    pub imperfection: ImperfectionConfig,
    pub output: OutputConfig,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub grid: usize,
    pub refine_tol: f64,
    /// Also evaluate g³(0) in sweeps (builds Γ at every point).
    pub third_order: bool,
    /// Spacings for `channels`; empty means the geometry spacing.
    pub spacings: Vec<f64>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { d_min: 0.05, d_max: 1.2, grid: 400, refine_tol: 1e-4, third_order: true, spacings: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub samples: usize,
    pub filling: Option<f64>,
    pub sigma_rel: Option<f64>,
    pub seed: u64,
    pub bins: usize,
    pub rolling_window: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { samples: 200, filling: None, sigma_rel: None, seed: 0, bins: 40, rolling_window: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub backend: Backend,
    pub hamiltonian: bool,
    pub n_traj: usize,
    pub t_end: f64,
    pub seed: u64,
    /// Uniform non-radiative rate γ in Γ₀.
    pub gamma_nr: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        let tol = Tolerances::default();
        DynamicsConfig {
            backend: Backend::Liouville,
            hamiltonian: true,
            n_traj: 1000,
            t_end: 2.0,
            seed: 0,
            gamma_nr: 0.0,
            rtol: tol.rtol,
            atol: tol.atol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelayConfig {
    pub tau_max: f64,
    pub points: usize,
}

impl Default for DelayConfig {
    fn default() -> Self {
        DelayConfig { tau_max: 1.0, points: 101 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImperfectionConfig {
    /// Total single-hole weight Σ|ζ|² of a truncated coherent spin state.
    pub total: Option<f64>,
    /// Excitation probability φ; alternative to `total`.
    pub phi: Option<f64>,
    /// Drive wavevector in units of 1/λ₀.
    pub k: [f64; 3],
    /// Uniform non-radiative rates to scan, in Γ₀.
    pub gamma_nr: Vec<f64>,
    /// Relative spread of the radiative rates Γ₀ⁱ.
    pub sigma_gamma0: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for ImperfectionConfig {
    fn default() -> Self {
        ImperfectionConfig {
            total: None,
            phi: None,
            k: [K0, 0.0, 0.0],
            gamma_nr: Vec::new(),
            sigma_gamma0: 0.0,
            draws: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Validation(format!("{field}: {msg}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(n) = o.dicke {
            self.dicke = Some(n);
            self.geometry = None;
        }
        if let (Some(d), Some(g)) = (o.spacing, self.geometry.as_mut()) {
            g.spacing = d;
        }
        if let Some(v) = o.d_min {
            self.scan.d_min = v;
        }
        if let Some(v) = o.d_max {
            self.scan.d_max = v;
        }
        if let Some(v) = o.grid {
            self.scan.grid = v;
        }
        if let Some(v) = o.samples {
            self.ensemble.samples = v;
        }
        if let Some(v) = o.eta {
            self.ensemble.filling = Some(v);
        }
        if let Some(v) = o.sigma_rel {
            self.ensemble.sigma_rel = Some(v);
        }
        if let Some(v) = o.seed {
            self.ensemble.seed = v;
            self.dynamics.seed = v;
            self.imperfection.seed = v;
        }
        if let Some(v) = o.backend {
            self.dynamics.backend = v;
        }
        if let Some(v) = o.n_traj {
            self.dynamics.n_traj = v;
        }
        if let Some(v) = o.t_end {
            self.dynamics.t_end = v;
        }
        if o.no_hamiltonian {
            self.dynamics.hamiltonian = false;
        }
        if let Some(v) = o.threads {
            self.threads = Some(v);
        }
        if let Some(p) = &o.output {
            self.output.path = Some(p.clone());
        }
    }

    /// Field-level checks for the parts `command` uses.
    pub fn validate(&self, command: CommandKind) -> Result<()> {
        match (&self.geometry, self.dicke) {
            (Some(_), Some(_)) => return Err(invalid("geometry", "give either [geometry] or dicke, not both")),
            (None, None) => return Err(invalid("geometry", "missing [geometry] table or dicke count")),
            (Some(g), None) => g.validate().map_err(|e| invalid("geometry", e))?,
            (None, Some(n)) => {
                if n == 0 {
                    return Err(invalid("dicke", "must be >= 1"));
                }
                if matches!(
                    command,
                    CommandKind::Sweep | CommandKind::Critical | CommandKind::Ensemble | CommandKind::Solidstate
                ) {
                    return Err(invalid("geometry", format!("`{}` needs a lattice geometry", command.name())));
                }
            }
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be >= 1"));
        }
        let s = &self.scan;
        if matches!(command, CommandKind::Sweep | CommandKind::Critical | CommandKind::Ensemble | CommandKind::Solidstate) {
            if !(s.d_min > 0.0 && s.d_max > s.d_min && s.d_max.is_finite()) {
                return Err(invalid("scan", format!("need 0 < d_min < d_max, got [{}, {}]", s.d_min, s.d_max)));
            }
            if s.grid < 2 {
                return Err(invalid("scan.grid", "must be >= 2"));
            }
            if !(s.refine_tol > 0.0) {
                return Err(invalid("scan.refine_tol", "must be positive"));
            }
        }
        if let Some(d) = s.spacings.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(invalid("scan.spacings", format!("must be positive, got {d}")));
        }
        if command == CommandKind::Ensemble {
            let e = &self.ensemble;
            if e.samples == 0 {
                return Err(invalid("ensemble.samples", "must be >= 1"));
            }
            if e.bins == 0 {
                return Err(invalid("ensemble.bins", "must be >= 1"));
            }
            match (e.filling, e.sigma_rel) {
                (Some(_), Some(_)) | (None, None) => {
                    return Err(invalid("ensemble", "give exactly one of filling or sigma_rel"))
                }
                (Some(eta), None) if !(eta > 0.0 && eta <= 1.0) => {
                    return Err(invalid("ensemble.filling", format!("must lie in (0, 1], got {eta}")))
                }
                (None, Some(s)) if !(s >= 0.0 && s.is_finite()) => {
                    return Err(invalid("ensemble.sigma_rel", format!("must be >= 0, got {s}")))
                }
                _ => {}
            }
        }
        if command == CommandKind::Simulate {
            let d = &self.dynamics;
            if !(d.t_end > 0.0 && d.t_end.is_finite()) {
                return Err(invalid("dynamics.t_end", "must be positive"));
            }
            if d.backend == Backend::Trajectories && d.n_traj == 0 {
                return Err(invalid("dynamics.n_traj", "must be >= 1"));
            }
            if !(d.gamma_nr >= 0.0 && d.gamma_nr.is_finite()) {
                return Err(invalid("dynamics.gamma_nr", "must be >= 0"));
            }
            self.tolerances().validate().map_err(|e| invalid("dynamics", e))?;
        }
        if command == CommandKind::G2tau {
            if !(self.delay.tau_max >= 0.0 && self.delay.tau_max.is_finite()) {
                return Err(invalid("delay.tau_max", "must be >= 0"));
            }
            if self.delay.points < 2 {
                return Err(invalid("delay.points", "must be >= 2"));
            }
        }
        if command == CommandKind::Solidstate {
            let im = &self.imperfection;
            if im.total.is_some() && im.phi.is_some() {
                return Err(invalid("imperfection", "give either total or phi, not both"));
            }
            if let Some(t) = im.total {
                if !(0.0..1.0).contains(&t) {
                    return Err(invalid("imperfection.total", format!("must lie in [0, 1), got {t}")));
                }
            }
            if let Some(p) = im.phi {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(invalid("imperfection.phi", format!("must lie in (0, 1], got {p}")));
                }
            }
            if let Some(g) = im.gamma_nr.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
                return Err(invalid("imperfection.gamma_nr", format!("must be >= 0, got {g}")));
            }
            if !(im.sigma_gamma0 >= 0.0 && im.sigma_gamma0.is_finite()) {
                return Err(invalid("imperfection.sigma_gamma0", "must be >= 0"));
            }
            if im.sigma_gamma0 > 0.0 && im.draws == 0 {
                return Err(invalid("imperfection.draws", "must be >= 1"));
            }
            if im.total.is_none() && im.phi.is_none() && im.gamma_nr.is_empty() && im.sigma_gamma0 == 0.0 {
                return Err(invalid("imperfection", "nothing to compute"));
            }
        }
        Ok(())
    }

    fn tolerances(&self) -> Tolerances {
        Tolerances { rtol: self.dynamics.rtol, atol: self.dynamics.atol }
    }

    fn array(&self) -> Result<EmitterArray> {
        match (&self.geometry, self.dicke) {
            (Some(g), _) => build_lattice(g),
            (None, Some(n)) => EmitterArray::dicke_point(n),
            (None, None) => Err(invalid("geometry", "missing")),
        }
    }

    fn lattice(&self) -> Result<&LatticeSpec> {
        self.geometry.as_ref().ok_or_else(|| invalid("geometry", "a lattice geometry is required"))
    }

    fn d_range(&self) -> (f64, f64) {
        (self.scan.d_min, self.scan.d_max)
    }
}

/// One file to be written.
struct Artifact {
    path: PathBuf,
    bytes: Vec<u8>,
}

struct Provenance<'a> {
    command: CommandKind,
    config: &'a RunConfig,
    seed: Option<u64>,
}

impl Provenance<'_> {
    fn csv(&self, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let config = serde_json::to_string(self.config).map_err(|e| Error::Numerical(e.to_string()))?;
        writeln!(out, "# superrad {} {}", env!("CARGO_PKG_VERSION"), self.command.name())?;
        writeln!(out, "# config: {config}")?;
        match self.seed {
            Some(s) => writeln!(out, "# seed: {s}")?,
            None => writeln!(out, "# seed: none")?,
        }
        body(&mut out)?;
        writeln!(out, "# status: ok")?;
        Ok(out)
    }

    fn json(&self, result: serde_json::Value) -> Result<Vec<u8>> {
        let doc = json!({
            "program": "superrad",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command.name(),
            "config": self.config,
            "seed": self.seed,
            "result": result,
            "status": "ok",
        });
        let mut out = serde_json::to_vec_pretty(&doc).map_err(|e| Error::Numerical(e.to_string()))?;
        out.push(b'\n');
        Ok(out)
    }
}

/// `out.csv` → `out.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_atomic(artifact: &Artifact) -> Result<()> {
    let dir = match artifact.path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(&artifact.bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(&artifact.path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Runs `command` and writes its outputs. Returns the written paths.
pub fn run(command: CommandKind, config: &RunConfig) -> Result<Vec<PathBuf>> {
    config.validate(command)?;
    let work = || compute(command, config);
    let artifacts = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Numerical(format!("worker pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut written = Vec::with_capacity(artifacts.len());
    for a in &artifacts {
        write_atomic(a)?;
        info!("wrote {}", a.path.display());
        written.push(a.path.clone());
    }
    Ok(written)
}

fn compute(command: CommandKind, config: &RunConfig) -> Result<Vec<Artifact>> {
    let path = config
        .output
        .path
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.{}", command.name(), command.extension())));
    let seed = match command {
        CommandKind::Ensemble => Some(config.ensemble.seed),
        CommandKind::Simulate if config.dynamics.backend == Backend::Trajectories => Some(config.dynamics.seed),
        CommandKind::Solidstate if config.imperfection.sigma_gamma0 > 0.0 => Some(config.imperfection.seed),
        _ => None,
    };
    let prov = Provenance { command, config, seed };
    let one = |bytes| Ok(vec![Artifact { path: path.clone(), bytes }]);
    match command {
        CommandKind::Channels => one(channels_csv(config, &prov)?),
        CommandKind::G2 => one(g2_json(config, &prov)?),
        CommandKind::Sweep => {
            let family = Family::from_spec(config.lattice()?)?;
            let scan = if config.scan.third_order {
                scan_statistics(&family, config.d_range(), config.scan.grid)?
            } else {
                scan_g2(&family, config.d_range(), config.scan.grid)?
            };
            one(prov.csv(|out| write_scan_csv(&scan, out))?)
        }
        CommandKind::Critical => {
            let family = Family::from_spec(config.lattice()?)?;
            let set = find_critical_distance_on(&family, config.d_range(), config.scan.grid, config.scan.refine_tol)?;
            one(prov.csv(|out| set.write_csv(family.n(), out))?)
        }
        CommandKind::Ensemble => ensemble_outputs(config, &prov, &path),
        CommandKind::Simulate => simulate_outputs(config, &prov, &path),
        CommandKind::G2tau => {
            let array = config.array()?;
            let m = interaction_matrices(&array)?;
            let ch = decay_channels(&m)?;
            let d = &config.delay;
            let taus: Vec<f64> = (0..d.points).map(|k| d.tau_max * k as f64 / (d.points - 1) as f64).collect();
            let ratio = g2_tau_ratio(&ch, &m.j, &taus)?;
            one(prov.csv(|out| {
                writeln!(out, "tau_inv_gamma0,ratio")?;
                for (t, r) in taus.iter().zip(&ratio) {
                    writeln!(out, "{t:.10},{r:.12}")?;
                }
                Ok(())
            })?)
        }
        CommandKind::Solidstate => one(solidstate_csv(config, &prov)?),
    }
}

fn channels_csv(config: &RunConfig, prov: &Provenance) -> Result<Vec<u8>> {
    let base = config.array()?;
    let spacings: Vec<Option<f64>> = if config.scan.spacings.is_empty() || config.geometry.is_none() {
        vec![config.geometry.as_ref().map(|g| g.spacing)]
    } else {
        config.scan.spacings.iter().map(|&d| Some(d)).collect()
    };
    let mut rows = Vec::new();
    for d in spacings {
        let array = match (d, &config.geometry) {
            (Some(d), Some(g)) => build_lattice(&g.with_spacing(d))?,
            _ => base.clone(),
        };
        let ch = decay_channels(&interaction_matrices(&array)?)?;
        rows.push((d, ch.rates));
    }
    prov.csv(|out| {
        writeln!(out, "d_lambda0,nu,rate_gamma0")?;
        for (d, rates) in &rows {
            let d = d.map(|d| format!("{d:.10}")).unwrap_or_else(|| "0".into());
            for (nu, r) in rates.iter().enumerate() {
                writeln!(out, "{d},{nu},{r:.12e}")?;
            }
        }
        Ok(())
    })
}

fn g2_json(config: &RunConfig, prov: &Provenance) -> Result<Vec<u8>> {
    let array = config.array()?;
    let moments = rate_moments(&interaction_matrices(&array)?);
    let stats = photon_statistics(&moments)?;
    prov.json(json!({
        "n": array.len(),
        "spacing": config.geometry.as_ref().map(|g| g.spacing),
        "g2": stats.g2,
        "g3": stats.g3,
        "variance": stats.variance,
        "burst_predicted": stats.burst_predicted,
    }))
}

fn ensemble_outputs(config: &RunConfig, prov: &Provenance, path: &Path) -> Result<Vec<Artifact>> {
    let e = &config.ensemble;
    let perturbation = match (e.filling, e.sigma_rel) {
        (Some(eta), None) => Perturbation::Filling(eta),
        (None, Some(s)) => Perturbation::PositionNoise(s),
        _ => return Err(invalid("ensemble", "give exactly one of filling or sigma_rel")),
    };
    let options = EnsembleOptions {
        d_range: config.d_range(),
        grid: config.scan.grid,
        refine_tol: config.scan.refine_tol,
        bins: e.bins,
        rolling_window: e.rolling_window,
    };
    let result = ensemble_critical(config.lattice()?, perturbation, e.samples, e.seed, &options)?;
    let samples = prov.csv(|out| result.write_csv(out))?;
    let histogram = prov.csv(|out| result.write_histogram_csv(out))?;
    let summary = prov.json(json!({
        "summary": result.summary,
        "bimodality_coefficient": bimodality_coefficient(&result.critical_values()),
    }))?;
    Ok(vec![
        Artifact { path: path.to_path_buf(), bytes: samples },
        Artifact { path: sibling(path, "histogram.csv"), bytes: histogram },
        Artifact { path: sibling(path, "summary.json"), bytes: summary },
    ])
}

fn simulate_outputs(config: &RunConfig, prov: &Provenance, path: &Path) -> Result<Vec<Artifact>> {
    let d = &config.dynamics;
    let mut array = config.array()?;
    if d.gamma_nr > 0.0 {
        array = array.with_uniform_gamma_nr(d.gamma_nr)?;
    }
    let tol = config.tolerances();
    let trace: EmissionTrace = match d.backend {
        Backend::Liouville => evolve_liouville(&array, d.hamiltonian, d.t_end, &tol)?,
        Backend::Trajectories => evolve_trajectories(&array, d.hamiltonian, d.n_traj, d.t_end, d.seed, &tol)?,
    };
    let g2 = if array.len() >= 2 {
        Some(photon_statistics(&rate_moments(&interaction_matrices(&array)?))?.g2)
    } else {
        None
    };
    let summary = TraceSummary { t_max: trace.t_max, peak_ratio: trace.peak_ratio, burst: trace.burst, g2_of_geometry: g2 };
    let csv = prov.csv(|out| trace.write_csv(out))?;
    let json = prov.json(json!({ "summary": summary, "backend": trace.info, "emitted_photons": trace.emitted_photons() }))?;
    Ok(vec![
        Artifact { path: path.to_path_buf(), bytes: csv },
        Artifact { path: sibling(path, "summary.json"), bytes: json },
    ])
}

/// Radiative rates drawn from a Gaussian of mean 1 and width σ, redrawn while non-positive.
pub fn draw_gamma0(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let normal = Normal::new(1.0, sigma).map_err(|e| invalid("imperfection.sigma_gamma0", e))?;
    Ok((0..n)
        .map(|_| loop {
            let g: f64 = normal.sample(rng);
            if g > 0.0 {
                break g;
            }
        })
        .collect())
}

fn solidstate_csv(config: &RunConfig, prov: &Provenance) -> Result<Vec<u8>> {
    let spec = config.lattice()?;
    let family = Family::from_spec(spec)?;
    let n = family.n();
    let im = &config.imperfection;
    let (grid, tol) = (config.scan.grid, config.scan.refine_tol);
    let mut rows: Vec<(&str, f64, Option<f64>)> = Vec::new();

    let base = find_critical_distance_on(&family, config.d_range(), grid, tol)?.d_critical();
    rows.push(("ideal", 0.0, base));
    for &gamma in &im.gamma_nr {
        let rates = vec![gamma; n];
        let set = find_critical_distance_with(&family, config.d_range(), grid, tol, |_, ch| g2_nonradiative(ch, &rates))?;
        rows.push(("nonradiative", gamma, set.d_critical()));
    }
    let phi = match (im.total, im.phi) {
        (Some(t), None) => Some(phi_for_imperfection(t, n)?),
        (None, p) => p,
        _ => None,
    };
    if let Some(phi) = phi {
        let k = Vec3::from(im.k);
        let set = find_critical_distance_with(&family, config.d_range(), grid, tol, |a, ch| {
            g2_imperfect(ch, &coherent_spin_state_hole(phi, &k, a)?)
        })?;
        rows.push(("imperfect", 1.0 - phi, set.d_critical()));
    }
    if im.sigma_gamma0 > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(im.seed);
        let ds = scan_grid(config.d_range(), grid, family.dimension())?;
        for _ in 0..im.draws {
            let g0 = draw_gamma0(n, im.sigma_gamma0, &mut rng)?;
            let mean = g0.iter().sum::<f64>() / n as f64;
            let spread = g0.iter().map(|g| (g / mean - 1.0).powi(2)).sum::<f64>() / n as f64;
            let sample = Family::from_template(family.template().clone().with_gamma0(g0.clone())?);
            let set = find_crossings(|d| g2_inhomogeneous(&sample.moments_at(d)?, &g0), &ds, tol)?;
            rows.push(("inhomogeneous", spread, set.d_critical()));
        }
    }
    prov.csv(|out| {
        writeln!(out, "model,parameter,d_critical_lambda0")?;
        for (model, p, d) in &rows {
            let d = d.map(|d| format!("{d:.10}")).unwrap_or_default();
            writeln!(out, "{model},{p:.10},{d}")?;
        }
        Ok(())
    })
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (command, overrides) = cli.command.split();
    let result = (|| {
        let mut config = match &overrides.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        config.apply(&overrides);
        run(command, &config)
    })();
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
