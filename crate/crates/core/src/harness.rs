//! Monte Carlo orchestration: run configurations, figure presets, the
//! per-realization pipeline and the ordered disorder average.

use std::f64::consts::PI;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{estimate, DiffusionEstimate, DEFAULT_EXTRAPOLATION};
use crate::dimer::{resonant_pairs, ResonantPair, DEFAULT_X_MAX};
use crate::dynamics::{evolve_driven, make_propagator, steady_state, PropagatorMethod, PropagatorOptions};
use crate::ensemble::{sample_cube, SeedRecord};
use crate::kernel::{build_coupling_matrix, build_drive_vector, CouplingMatrix, DriveField};
use crate::linalg::matmul;
use crate::observables::{
    excitation_slab_map, far_field_weights, helicity_basis, instantaneous_rate, polarization_channels, sliding_rate,
    spectrum_axis, stft_spectrum, Direction, ObservableSeries, PolarizationSeries, RateEstimator, RateSeries, SlabMap, SlabSpec, Spectrum,
    SpectrumWindow,
};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrivenStage {
    /// Direct solve of the stationary point.
    Steady,
    /// RK4 over the full pulse from b = 0.
    Integrate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Paper,
    Desk,
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::Config(format!("unknown scale `{other}` (paper|desk)"))),
        }
    }
}

fn d_density() -> f64 {
    0.01
}
fn d_detuning() -> f64 {
    -4.0
}
fn d_rabi() -> f64 {
    1.0
}
fn d_helicity() -> i32 {
    1
}
fn d_pulse() -> f64 {
    2000.0
}
fn d_driven_stage() -> DrivenStage {
    DrivenStage::Steady
}
fn d_driven_dt() -> f64 {
    0.05
}
fn d_seed() -> u64 {
    20_200_301
}
fn d_t_max() -> f64 {
    300.0
}
fn d_intensity_dt() -> f64 {
    0.5
}
fn d_field_dt() -> f64 {
    0.05
}
fn d_theta() -> f64 {
    PI / 4.0
}
fn d_spectrum_width() -> f64 {
    30.0
}
fn d_threshold() -> f64 {
    1e-6
}
fn d_rate_h() -> f64 {
    1.0
}
fn d_slab_width() -> f64 {
    0.5
}
fn d_slab_bin() -> f64 {
    2.0
}
fn d_method() -> PropagatorMethod {
    PropagatorMethod::Eigen
}
fn d_eigen_cap() -> usize {
    9000
}
fn d_step_dt() -> f64 {
    0.01
}
fn d_extrapolation() -> f64 {
    DEFAULT_EXTRAPOLATION
}
fn d_true() -> bool {
    true
}
fn d_workers() -> usize {
    1
}
fn d_estimator() -> RateEstimator {
    RateEstimator::CentralDifference
}
fn d_sliding_window() -> f64 {
    10.0
}

/// One simulation campaign. Every field has a TOML key of the same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default = "d_density")]
    pub density: f64,
    pub kl: f64,
    #[serde(default = "d_detuning")]
    pub detuning: f64,
    #[serde(default = "d_rabi")]
    pub rabi: f64,
    /// +1 drives σ⁺, −1 drives σ⁻; the laser propagates along +ẑ.
    #[serde(default = "d_helicity")]
    pub helicity: i32,
    #[serde(default = "d_pulse")]
    pub pulse_duration: f64,
    #[serde(default = "d_driven_stage")]
    pub driven_stage: DrivenStage,
    #[serde(default = "d_driven_dt")]
    pub driven_dt: f64,
    #[serde(default)]
    pub r_min: f64,
    pub realizations: u64,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_t_max")]
    pub t_max: f64,
    #[serde(default = "d_intensity_dt")]
    pub intensity_dt: f64,
    #[serde(default = "d_field_dt")]
    pub field_dt: f64,
    #[serde(default = "d_theta")]
    pub observe_theta: f64,
    #[serde(default)]
    pub observe_phi: f64,
    /// Record the two circular channels at the observation direction.
    #[serde(default = "d_true")]
    pub polarization: bool,
    #[serde(default)]
    pub spectrum_centers: Vec<f64>,
    #[serde(default = "d_spectrum_width")]
    pub spectrum_width: f64,
    #[serde(default)]
    pub slab_delays: Vec<f64>,
    #[serde(default = "d_slab_width")]
    pub slab_width: f64,
    #[serde(default = "d_slab_bin")]
    pub slab_bin: f64,
    #[serde(default = "d_threshold")]
    pub threshold: f64,
    #[serde(default = "d_estimator")]
    pub rate_estimator: RateEstimator,
    #[serde(default = "d_rate_h")]
    pub rate_h: f64,
    #[serde(default = "d_sliding_window")]
    pub sliding_window: f64,
    #[serde(default = "d_method")]
    pub propagator: PropagatorMethod,
    #[serde(default = "d_eigen_cap")]
    pub eigen_cap: usize,
    #[serde(default = "d_step_dt")]
    pub step_dt: f64,
    #[serde(default = "d_extrapolation")]
    pub extrapolation: f64,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default = "d_workers")]
    pub workers: usize,
}

/// Grid 0, dt, 2dt, … up to `t_max` inclusive.
pub fn time_grid(t_max: f64, dt: f64) -> Vec<f64> {
    let n = (t_max / dt + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * dt).collect()
}

impl RunConfig {
    /// A config with every optional field at its default.
    pub fn new(name: impl Into<String>, kl: f64, realizations: u64) -> Self {
        let mut cfg: RunConfig = toml::from_str(&format!("name = \"x\"\nkl = {kl:?}\nrealizations = {realizations}\n"))
            .expect("defaults parse");
        cfg.name = name.into();
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name `{}` must be non-empty and free of path separators", self.name));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad(format!("density must be positive, got {}", self.density));
        }
        if !(self.kl > 0.0 && self.kl.is_finite()) {
            return bad(format!("kl must be positive, got {}", self.kl));
        }
        if !self.detuning.is_finite() {
            return bad("detuning must be finite".into());
        }
        if self.helicity != 1 && self.helicity != -1 {
            return bad(format!("helicity must be +1 or -1, got {}", self.helicity));
        }
        if !(self.rabi > 0.0) {
            return bad(format!("rabi must be positive, got {}", self.rabi));
        }
        if !(self.pulse_duration >= 0.0) {
            return bad(format!("pulse_duration must be non-negative, got {}", self.pulse_duration));
        }
        if self.driven_stage == DrivenStage::Integrate && !(self.driven_dt > 0.0 && self.driven_dt <= 0.05) {
            return bad(format!("driven_dt must lie in (0, 0.05], got {}", self.driven_dt));
        }
        if !(self.r_min >= 0.0) || self.r_min >= self.density.powf(-1.0 / 3.0) {
            return bad(format!("r_min = {} must be non-negative and below the mean spacing", self.r_min));
        }
        if self.realizations == 0 {
            return bad("realizations must be at least 1".into());
        }
        if !(self.t_max > 0.0 && self.intensity_dt > 0.0 && self.intensity_dt <= self.t_max) {
            return bad("need 0 < intensity_dt <= t_max".into());
        }
        let ratio = self.intensity_dt / self.field_dt;
        if !(self.field_dt > 0.0 && (ratio - ratio.round()).abs() < 1e-9 && ratio >= 1.0) {
            return bad("intensity_dt must be a positive multiple of field_dt".into());
        }
        if !(0.0..=PI).contains(&self.observe_theta) {
            return bad(format!("observe_theta must lie in [0, π], got {}", self.observe_theta));
        }
        for &c in &self.spectrum_centers {
            if c - self.spectrum_width / 2.0 < -1e-9 || c + self.spectrum_width / 2.0 > self.t_max + 1e-9 {
                return bad(format!("spectrum window at {c} ± {} leaves [0, {}]", self.spectrum_width / 2.0, self.t_max));
            }
        }
        if !self.spectrum_centers.is_empty() && self.field_dt > 0.05 {
            return bad(format!("spectra need field_dt <= 0.05, got {}", self.field_dt));
        }
        for &d in &self.slab_delays {
            if !(0.0..=self.t_max).contains(&d) {
                return bad(format!("slab delay {d} outside [0, {}]", self.t_max));
            }
        }
        if !self.slab_delays.is_empty() && !(self.slab_width > 0.0 && self.slab_width <= self.kl && self.slab_bin > 0.0) {
            return bad("slab_width must lie in (0, kl] and slab_bin must be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        let steps = self.rate_h / self.intensity_dt;
        if !(self.rate_h > 0.0 && (steps - steps.round()).abs() < 1e-9 && steps >= 1.0) {
            return bad("rate_h must be a positive multiple of intensity_dt".into());
        }
        if !(self.sliding_window >= 2.0 * self.intensity_dt) {
            return bad("sliding_window must span at least two grid steps".into());
        }
        if !(self.step_dt > 0.0) {
            return bad("step_dt must be positive".into());
        }
        if !(self.extrapolation >= 0.0) {
            return bad("extrapolation must be non-negative".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }

    pub fn atom_count(&self) -> usize {
        crate::ensemble::atom_count(self.density, self.kl)
    }

    pub fn drive(&self) -> DriveField {
        DriveField::circular(self.rabi, self.detuning, self.helicity, self.pulse_duration)
    }

    pub fn direction(&self) -> Direction {
        Direction { theta: self.observe_theta, phi: self.observe_phi.rem_euclid(2.0 * PI) }
    }

    pub fn intensity_times(&self) -> Vec<f64> {
        time_grid(self.t_max, self.intensity_dt)
    }

    pub fn field_times(&self) -> Vec<f64> {
        time_grid(self.t_max, self.field_dt)
    }

    pub fn propagator_options(&self) -> PropagatorOptions {
        PropagatorOptions { method: self.propagator, eigen_cap: self.eigen_cap, step_dt: self.step_dt }
    }

    pub fn spectrum_windows(&self) -> Vec<SpectrumWindow> {
        self.spectrum_centers.iter().map(|&c| SpectrumWindow::new(c, self.spectrum_width, self.field_dt)).collect()
    }

    pub fn slab(&self) -> SlabSpec {
        SlabSpec { axis: 1, center: self.kl / 2.0, width: self.slab_width, bin_size: self.slab_bin }
    }

    /// SHA-256 over the canonical JSON of every field that can change results
    /// (the worker count and output directory are left out).
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.workers = 0;
        c.out_dir = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn resolved_out_dir(&self) -> std::path::PathBuf {
        match &self.out_dir {
            Some(d) => d.into(),
            None => std::path::Path::new("runs").join(&self.name),
        }
    }
}

/// Why a realization was dropped from the average.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exclusion {
    pub index: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimes {
    pub sample: f64,
    pub build: f64,
    pub driven: f64,
    pub propagator: f64,
    pub observables: f64,
}

impl StageTimes {
    fn add(&mut self, o: &StageTimes) {
        self.sample += o.sample;
        self.build += o.build;
        self.driven += o.driven;
        self.propagator += o.propagator;
        self.observables += o.observables;
    }
}

/// Everything one realization contributes; all entries are linear in intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationBundle {
    pub index: u64,
    pub atoms: usize,
    pub excluded: Option<String>,
    pub min_pair_distance: Option<f64>,
    pub method: Option<PropagatorMethod>,
    /// b†Gb on the intensity grid.
    pub intensity: Vec<f64>,
    /// Σ|b|² on the intensity grid.
    pub population: Vec<f64>,
    pub co: Vec<f64>,
    pub counter: Vec<f64>,
    pub spectra: Vec<Vec<f64>>,
    pub slab_maps: Vec<SlabMap>,
    /// Count of grid steps on which Σ|b|² grew beyond round-off.
    pub energy_increases: usize,
    pub times: StageTimes,
}

impl RealizationBundle {
    fn excluded(index: u64, atoms: usize, reason: String, times: StageTimes) -> Self {
        warn!("realization {index} excluded: {reason}");
        Self {
            index,
            atoms,
            excluded: Some(reason),
            min_pair_distance: None,
            method: None,
            intensity: Vec::new(),
            population: Vec::new(),
            co: Vec::new(),
            counter: Vec::new(),
            spectra: Vec::new(),
            slab_maps: Vec::new(),
            energy_increases: 0,
            times,
        }
    }
}

fn elapsed(t: &mut Instant) -> f64 {
    let now = Instant::now();
    let d = now.duration_since(*t).as_secs_f64();
    *t = now;
    d
}

/// b†Gb = |b|² + Im(b†Vb) for every column of `states`.
fn decay_power_columns(k: &CouplingMatrix, states: &faer::Mat<C64>) -> Vec<f64> {
    let vb = matmul(k.v().as_ref(), states.as_ref());
    (0..states.ncols())
        .map(|j| {
            let (b, w) = (states.col(j), vb.col(j));
            let mut quad = C64::new(0.0, 0.0);
            let mut pop = 0.0;
            for r in 0..states.nrows() {
                quad += b[r].conj() * w[r];
                pop += b[r].norm_sqr();
            }
            pop + quad.im
        })
        .collect()
}

/// Samples, solves and decays one disorder realization.
pub fn run_realization(config: &RunConfig, index: u64) -> Result<RealizationBundle> {
    let mut times = StageTimes::default();
    let mut clock = Instant::now();
    let cfg = sample_cube(config.density, config.kl, config.r_min, SeedRecord::new(config.seed, index))?;
    times.sample = elapsed(&mut clock);
    let atoms = cfg.len();

    let k = match build_coupling_matrix(&cfg, config.detuning) {
        Ok(k) => k,
        Err(e) => return Ok(RealizationBundle::excluded(index, atoms, e.to_string(), times)),
    };
    let drive_field = config.drive();
    let drive = build_drive_vector(&cfg, &drive_field);
    times.build = elapsed(&mut clock);

    let b0 = match config.driven_stage {
        DrivenStage::Steady => steady_state(&k, &drive),
        DrivenStage::Integrate => evolve_driven(&k, &drive, config.pulse_duration, config.driven_dt),
    };
    let b0 = match b0 {
        Ok(b) => b,
        Err(e @ (Error::IllConditioned(_) | Error::Diverged { .. })) => {
            return Ok(RealizationBundle::excluded(index, atoms, e.to_string(), times))
        }
        Err(e) => return Err(e),
    };
    times.driven = elapsed(&mut clock);

    let prop = make_propagator(&k, config.propagator_options());
    times.propagator = elapsed(&mut clock);

    let t_int = config.intensity_times();
    let traj = prop.propagate(&b0, &t_int);
    let intensity = decay_power_columns(&k, &traj.states);
    let population = traj.populations();
    drop(traj);
    let energy_increases = population.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-10)).count();

    let (mut co, mut counter, mut spectra) = (Vec::new(), Vec::new(), Vec::new());
    if config.polarization || !config.spectrum_centers.is_empty() {
        let dir = config.direction();
        let (u_co, u_counter) = helicity_basis(dir).co_counter(drive_field.helicity());
        let weights = vec![far_field_weights(&cfg, dir, &u_co), far_field_weights(&cfg, dir, &u_counter)];
        if config.spectrum_centers.is_empty() {
            let fields = prop.project(&b0, &weights, &t_int);
            co = fields[0].iter().map(|a| a.norm_sqr()).collect();
            counter = fields[1].iter().map(|a| a.norm_sqr()).collect();
        } else {
            let t_field = config.field_times();
            let fields = prop.project(&b0, &weights, &t_field);
            let stride = (config.intensity_dt / config.field_dt).round() as usize;
            if config.polarization {
                co = fields[0].iter().step_by(stride).map(|a| a.norm_sqr()).collect();
                counter = fields[1].iter().step_by(stride).map(|a| a.norm_sqr()).collect();
            }
            for w in config.spectrum_windows() {
                let a = stft_spectrum(&fields[0], &t_field, w, config.detuning)?;
                let b = stft_spectrum(&fields[1], &t_field, w, config.detuning)?;
                spectra.push(a.power.iter().zip(&b.power).map(|(x, y)| x + y).collect());
            }
        }
    }

    let mut slab_maps = Vec::new();
    if !config.slab_delays.is_empty() {
        let tr = prop.propagate(&b0, &config.slab_delays);
        for j in 0..config.slab_delays.len() {
            slab_maps.push(excitation_slab_map(&tr.state(j), &cfg, config.slab())?);
        }
    }
    times.observables = elapsed(&mut clock);

    Ok(RealizationBundle {
        index,
        atoms,
        excluded: None,
        min_pair_distance: cfg.min_pair_distance(),
        method: Some(prop.method()),
        intensity,
        population,
        co,
        counter,
        spectra,
        slab_maps,
        energy_increases,
        times,
    })
}

/// Running sums over bundles, folded strictly in realization order.
#[derive(Debug, Clone)]
pub struct Accumulator {
    pub included: usize,
    pub excluded: Vec<Exclusion>,
    intensity: Vec<f64>,
    population: Vec<f64>,
    co: Vec<f64>,
    counter: Vec<f64>,
    spectra: Vec<Vec<f64>>,
    slab: Vec<Vec<f64>>,
    slab_atoms: Vec<usize>,
    slab_bins: usize,
    pub energy_increases: usize,
    pub step_fallbacks: usize,
    pub times: StageTimes,
    next_index: Option<u64>,
}

impl Default for Accumulator {
    fn default() -> Self {
        Self {
            included: 0,
            excluded: Vec::new(),
            intensity: Vec::new(),
            population: Vec::new(),
            co: Vec::new(),
            counter: Vec::new(),
            spectra: Vec::new(),
            slab: Vec::new(),
            slab_atoms: Vec::new(),
            slab_bins: 0,
            energy_increases: 0,
            step_fallbacks: 0,
            times: StageTimes::default(),
            next_index: None,
        }
    }
}

fn add_into(acc: &mut Vec<f64>, v: &[f64]) {
    if acc.is_empty() {
        acc.extend_from_slice(v);
    } else {
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
    }
}

impl Accumulator {
    /// Adds one bundle. Bundles must arrive in increasing index order.
    pub fn push(&mut self, b: &RealizationBundle) {
        if let Some(next) = self.next_index {
            assert!(b.index >= next, "bundles must be folded in index order");
        }
        self.next_index = Some(b.index + 1);
        self.times.add(&b.times);
        if let Some(reason) = &b.excluded {
            self.excluded.push(Exclusion { index: b.index, reason: reason.clone() });
            return;
        }
        self.included += 1;
        add_into(&mut self.intensity, &b.intensity);
        add_into(&mut self.population, &b.population);
        add_into(&mut self.co, &b.co);
        add_into(&mut self.counter, &b.counter);
        if self.spectra.is_empty() {
            self.spectra = b.spectra.clone();
        } else {
            self.spectra.iter_mut().zip(&b.spectra).for_each(|(a, s)| add_into(a, s));
        }
        if self.slab.is_empty() {
            self.slab = b.slab_maps.iter().map(|m| m.values.clone()).collect();
            self.slab_atoms = b.slab_maps.iter().map(|m| m.atoms_in_slab).collect();
            self.slab_bins = b.slab_maps.first().map(|m| m.bins).unwrap_or(0);
        } else {
            for (j, m) in b.slab_maps.iter().enumerate() {
                add_into(&mut self.slab[j], &m.values);
                self.slab_atoms[j] += m.atoms_in_slab;
            }
        }
        self.energy_increases += b.energy_increases;
        if b.method == Some(PropagatorMethod::Step) {
            self.step_fallbacks += 1;
        }
    }
}

/// Outcome of the τ* search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TauStar {
    Reached { t_star: f64, tau: f64 },
    NotReached { final_ratio: f64 },
}

impl TauStar {
    pub fn tau(&self) -> Option<f64> {
        match self {
            TauStar::Reached { tau, .. } => Some(*tau),
            TauStar::NotReached { .. } => None,
        }
    }
}

/// First time at which the averaged I(t)/I(0) falls to `threshold`
/// (interpolating ln I linearly) and τ from `rate` at that instant.
pub fn tau_star(intensity: &ObservableSeries, rate: &RateSeries, threshold: f64) -> Result<TauStar> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let norm = intensity.normalized()?;
    let v = &norm.values;
    let t = &norm.times;
    let target = threshold.ln();
    for j in 1..v.len() {
        if !(v[j] > 0.0) {
            break;
        }
        if v[j] <= threshold {
            let (l0, l1) = (v[j - 1].ln(), v[j].ln());
            let w = if l1 == l0 { 1.0 } else { (target - l0) / (l1 - l0) };
            let t_star = t[j - 1] + w * (t[j] - t[j - 1]);
            let tau = rate
                .tau_at(t_star)
                .ok_or_else(|| Error::InvalidParameter(format!("rate series does not cover t* = {t_star}")))?;
            return Ok(TauStar::Reached { t_star, tau });
        }
    }
    let last = v.iter().rev().find(|x| **x > 0.0).copied().unwrap_or(0.0);
    Ok(TauStar::NotReached { final_ratio: last })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumResult {
    pub window: SpectrumWindow,
    pub spectrum: Spectrum,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlabResult {
    pub delay: f64,
    pub map: SlabMap,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateResult {
    pub config: RunConfig,
    pub fingerprint: String,
    pub requested: u64,
    pub included: usize,
    pub excluded: Vec<Exclusion>,
    pub atoms: usize,
    /// Mean b†Gb.
    pub intensity: ObservableSeries,
    /// Mean Σ|b|².
    pub population: ObservableSeries,
    pub rate: RateSeries,
    pub polarization: Option<PolarizationSeries>,
    pub spectra: Vec<SpectrumResult>,
    pub slab_maps: Vec<SlabResult>,
    pub tau_star: TauStar,
    pub diffusion: DiffusionEstimate,
    pub resonant_pairs: Vec<ResonantPair>,
    pub energy_increases: usize,
    pub step_fallbacks: usize,
    #[serde(skip)]
    pub stage_times: StageTimes,
    #[serde(skip)]
    pub wall_time: f64,
}

/// Turns the sums into averages and only then derives rates, DOC and τ*.
pub fn finish(config: &RunConfig, acc: Accumulator) -> Result<AggregateResult> {
    if acc.included == 0 {
        return Err(Error::AllExcluded(acc.excluded.len()));
    }
    let n = acc.included as f64;
    let fp = config.fingerprint();
    let t_int = config.intensity_times();
    let mean = |v: &[f64]| v.iter().map(|x| x / n).collect::<Vec<f64>>();
    let mut intensity = ObservableSeries::averaged("intensity", t_int.clone(), mean(&acc.intensity), acc.included);
    intensity.fingerprint = Some(fp.clone());
    let mut population = ObservableSeries::averaged("population", t_int.clone(), mean(&acc.population), acc.included);
    population.fingerprint = Some(fp.clone());
    let rate = match config.rate_estimator {
        RateEstimator::CentralDifference => instantaneous_rate(&intensity, config.rate_h)?,
        RateEstimator::SlidingLeastSquares => sliding_rate(&intensity, config.sliding_window)?,
    };
    let polarization = if config.polarization {
        let co = ObservableSeries::averaged("co", t_int.clone(), mean(&acc.co), acc.included);
        let counter = ObservableSeries::averaged("counter", t_int.clone(), mean(&acc.counter), acc.included);
        Some(polarization_channels(&co, &counter)?)
    } else {
        None
    };
    let spectra = config
        .spectrum_windows()
        .into_iter()
        .zip(&acc.spectra)
        .map(|(window, sum)| {
            let (_, detuning, bin_width) = spectrum_axis(window, config.detuning);
            SpectrumResult { window, spectrum: Spectrum { detuning, power: mean(sum), bin_width } }
        })
        .collect();
    let slab_maps = config
        .slab_delays
        .iter()
        .zip(acc.slab.iter().zip(&acc.slab_atoms))
        .map(|(&delay, (sum, atoms))| SlabResult {
            delay,
            map: SlabMap { bins: acc.slab_bins, bin_size: config.slab_bin, values: mean(sum), atoms_in_slab: atoms / acc.included },
        })
        .collect();
    let tau_star = tau_star(&intensity, &rate, config.threshold)?;
    let diffusion = estimate(config.density, config.kl, config.extrapolation)?;
    let pairs = if config.detuning != 0.0 { resonant_pairs(config.detuning, DEFAULT_X_MAX)? } else { Vec::new() };
    Ok(AggregateResult {
        config: config.clone(),
        fingerprint: fp,
        requested: config.realizations,
        included: acc.included,
        excluded: acc.excluded,
        atoms: config.atom_count(),
        intensity,
        population,
        rate,
        polarization,
        spectra,
        slab_maps,
        tau_star,
        diffusion,
        resonant_pairs: pairs,
        energy_increases: acc.energy_increases,
        step_fallbacks: acc.step_fallbacks,
        stage_times: acc.times,
        wall_time: 0.0,
    })
}

/// Runs every realization on a pool of `config.workers` threads and folds the
/// bundles in index order.
pub fn run(config: &RunConfig) -> Result<AggregateResult> {
    config.validate()?;
    let start = Instant::now();
    faer::set_global_parallelism(faer::Par::Seq);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let chunk = (16 * config.workers) as u64;
    let mut acc = Accumulator::default();
    let mut next = 0u64;
    let mut last_log = Instant::now();
    while next < config.realizations {
        let end = (next + chunk).min(config.realizations);
        let bundles: Vec<Result<RealizationBundle>> =
            pool.install(|| (next..end).into_par_iter().map(|i| run_realization(config, i)).collect());
        for b in bundles {
            acc.push(&b?);
        }
        next = end;
        if last_log.elapsed().as_secs_f64() > 30.0 || next == config.realizations {
            info!("{}: {next}/{} realizations ({:.0} s)", config.name, config.realizations, start.elapsed().as_secs_f64());
            last_log = Instant::now();
        }
    }
    let mut result = finish(config, acc)?;
    result.wall_time = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Realization count interpolated geometrically between two anchors in kL.
pub fn geometric_count(kl: f64, (kl0, n0): (f64, u64), (kl1, n1): (f64, u64)) -> u64 {
    let w = (kl - kl0) / (kl1 - kl0);
    ((n0 as f64) * (n1 as f64 / n0 as f64).powf(w)).round() as u64
}

fn tag(x: f64) -> String {
    let s = format!("{x}");
    s.replace('-', "m").replace('.', "p")
}

fn base(kl: f64, detuning: f64, realizations: u64) -> RunConfig {
    RunConfig::new(format!("kl{}_d{}", tag(kl), tag(detuning)), kl, realizations).with_detuning(detuning)
}

impl RunConfig {
    fn with_detuning(mut self, d: f64) -> Self {
        self.detuning = d;
        self
    }

    /// Spectra at γt = 20 and 180, slab cuts at γt = 30 and 180.
    fn with_all_observables(mut self) -> Self {
        self.spectrum_centers = vec![20.0, 180.0];
        self.slab_delays = vec![30.0, 180.0];
        self
    }
}

pub const PRESETS: [&str; 7] = ["fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7"];

/// Configurations reproducing one figure's protocol. Desk-scale runs reuse a
/// single fully instrumented kL = 40 campaign wherever a figure asks for it.
pub fn preset(name: &str, scale: Scale) -> Result<Vec<RunConfig>> {
    let desk40 = || base(40.0, -4.0, 500).with_all_observables();
    let lean = |mut c: RunConfig| {
        c.polarization = false;
        c
    };
    let out = match (name, scale) {
        ("fig1", Scale::Paper) => {
            let mut v = vec![lean(base(5.848, -4.0, 4_000_000))];
            for kl in [20.0, 30.0, 40.0, 50.0, 60.0, 70.0] {
                v.push(lean(base(kl, -4.0, geometric_count(kl, (20.0, 10_000), (70.0, 5000)))));
            }
            v
        }
        ("fig1", Scale::Desk) => vec![lean(base(5.848, -4.0, 200_000)), lean(base(20.0, -4.0, 500)), desk40()],
        ("fig2", Scale::Paper) => [70.0, 80.0, 90.0, 100.0]
            .iter()
            .map(|&kl| lean(base(kl, -4.0, geometric_count(kl, (70.0, 5000), (100.0, 300)))))
            .collect(),
        ("fig2", Scale::Desk) => vec![lean(base(30.0, -4.0, 500)), desk40()],
        ("fig3", Scale::Paper) => [-2.0, -3.0, -4.0, -5.0].iter().map(|&d| lean(base(100.0, d, 300))).collect(),
        ("fig3", Scale::Desk) => [-2.0, -3.0, -5.0]
            .iter()
            .map(|&d| lean(base(40.0, d, 300)))
            .chain(std::iter::once(desk40()))
            .collect(),
        ("fig4" | "fig5" | "fig6", Scale::Paper) => vec![base(100.0, -4.0, 300).with_all_observables()],
        ("fig4" | "fig5" | "fig6", Scale::Desk) => vec![desk40()],
        ("fig7", Scale::Paper) => {
            let mut v = Vec::new();
            for d in [-2.0, -3.0, -4.0, -5.0] {
                for kl in [20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0] {
                    let n = if kl <= 70.0 {
                        geometric_count(kl, (20.0, 10_000), (70.0, 5000))
                    } else {
                        geometric_count(kl, (70.0, 5000), (100.0, 300))
                    };
                    v.push(lean(base(kl, d, n)));
                }
            }
            v
        }
        // b₀ ≈ 3.8, 7.5, 11.3; the kL = 60 point exceeds the desk cap and
        // carries few realizations
        ("fig7", Scale::Desk) => vec![lean(base(20.0, -4.0, 500)), desk40(), lean(base(60.0, -4.0, 12))],
        _ => return Err(Error::UnknownPreset(name.to_string())),
    };
    Ok(out)
}
