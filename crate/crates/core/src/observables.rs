//! Far-field intensities, decay rates, polarization, spectra and excitation maps.
//!
//! Per-realization quantities here are all linear in intensity. Logs, ratios
//! and derivatives only accept series flagged as disorder averages.

use std::f64::consts::PI;

use log::info;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AmplitudeState, Trajectory};
use crate::ensemble::EnsembleConfiguration;
use crate::kernel::{inner, spherical_unit_vector, CVec3, CouplingMatrix, SUBLEVELS};
use crate::{Error, Result, C64};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Observation direction relative to the laser axis +ẑ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub theta: f64,
    pub phi: f64,
}

impl Direction {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=PI).contains(&theta) || !phi.is_finite() {
            return Err(Error::InvalidParameter(format!("bad direction θ={theta}, φ={phi}")));
        }
        Ok(Self { theta, phi: phi.rem_euclid(2.0 * PI) })
    }

    pub fn unit(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    fn theta_hat(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [ct * cp, ct * sp, -st]
    }

    fn phi_hat(&self) -> [f64; 3] {
        let (sp, cp) = self.phi.sin_cos();
        [-sp, cp, 0.0]
    }
}

/// Circular basis transverse to a direction: `plus` has helicity +1 about k̂
/// and reduces to ê₊₁ on the +ẑ axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationBasis {
    pub plus: CVec3,
    pub minus: CVec3,
}

pub fn helicity_basis(dir: Direction) -> PolarizationBasis {
    let t = dir.theta_hat();
    let p = dir.phi_hat();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let plus = std::array::from_fn(|c| -s * (t[c] + I * p[c]));
    let minus = std::array::from_fn(|c| s * (t[c] - I * p[c]));
    PolarizationBasis { plus, minus }
}

impl PolarizationBasis {
    /// (co-rotating, counter-rotating) channels for a drive of the given helicity.
    pub fn co_counter(&self, drive_helicity: f64) -> (CVec3, CVec3) {
        if drive_helicity >= 0.0 {
            (self.plus, self.minus)
        } else {
            (self.minus, self.plus)
        }
    }
}

/// Coefficients c with A = Σ c_e b_e, i.e. c_(i,m) = ⟨u, ê_m⟩ e^{−i k̂·r_i}.
pub fn far_field_weights(cfg: &EnsembleConfiguration, dir: Direction, u: &CVec3) -> Vec<C64> {
    let proj: [C64; 3] = std::array::from_fn(|k| inner(u, &spherical_unit_vector(SUBLEVELS[k])));
    let k = dir.unit();
    let mut out = Vec::with_capacity(3 * cfg.len());
    for p in cfg.positions() {
        let phase = (-I * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2])).exp();
        for c in proj {
            out.push(c * phase);
        }
    }
    out
}

/// Far-field amplitude of the polarization component u radiated along `dir`.
pub fn far_field_amplitude(b: &AmplitudeState, cfg: &EnsembleConfiguration, dir: Direction, u: &CVec3) -> C64 {
    far_field_weights(cfg, dir, u).iter().zip(&b.b).map(|(c, b)| c * b).sum()
}

/// Total emitted power b†Gb.
pub fn total_intensity_closed_form(b: &AmplitudeState, k: &CouplingMatrix) -> f64 {
    k.decay_power(&b.b)
}

/// Product rule over the sphere: Gauss–Legendre in cos θ and a uniform
/// trapezoid in φ with twice as many points.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl SphereQuadrature {
    pub fn new(n_theta: usize) -> Self {
        let (xs, ws) = gauss_legendre(n_theta);
        let n_phi = 2 * n_theta;
        let dphi = 2.0 * PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (x, w) in xs.iter().zip(&ws) {
            let s = (1.0 - x * x).max(0.0).sqrt();
            for j in 0..n_phi {
                let phi = j as f64 * dphi;
                nodes.push([s * phi.cos(), s * phi.sin(), *x]);
                weights.push(w * dphi);
            }
        }
        Self { nodes, weights }
    }

    /// Resolves the angular band limit of a cloud of the given diameter
    /// (k = 1) with at least 450 nodes.
    pub fn for_diameter(diameter: f64) -> Self {
        Self::new(((diameter / 2.0).ceil() as usize + 10).max(15))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// ∫ f dΩ.
    pub fn integrate(&self, f: impl Fn([f64; 3]) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(n, w)| w * f(*n)).sum()
    }
}

/// Nodes and weights on [−1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = -x;
        xs[n - 1 - i] = x;
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    (xs, ws)
}

fn centered_positions(cfg: &EnsembleConfiguration) -> Vec<[f64; 3]> {
    let n = cfg.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in cfg.positions() {
        for a in 0..3 {
            c[a] += p[a] / n;
        }
    }
    cfg.positions().iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect()
}

/// Cloud diameter about its centroid, the quantity that sets the quadrature order.
pub fn cloud_diameter(cfg: &EnsembleConfiguration) -> f64 {
    2.0 * centered_positions(cfg)
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0, f64::max)
}

/// Σ_α |A_α|² integrated over 4π, calibrated by 3/(8π) so that one atom gives |b|².
pub fn total_intensity_quadrature(b: &AmplitudeState, cfg: &EnsembleConfiguration, quad: &SphereQuadrature) -> f64 {
    total_intensity_quadrature_many(std::slice::from_ref(&b.b), cfg, quad)[0]
}

/// Same as [`total_intensity_quadrature`] for several states of one configuration.
pub fn total_intensity_quadrature_many(states: &[Vec<C64>], cfg: &EnsembleConfiguration, quad: &SphereQuadrature) -> Vec<f64> {
    let pos = centered_positions(cfg);
    let basis: [CVec3; 3] = std::array::from_fn(|k| spherical_unit_vector(SUBLEVELS[k]));
    // Cartesian dipole of each atom, d_i = Σ_m ê_m b_(i,m)
    let dipoles: Vec<Vec<CVec3>> = states
        .iter()
        .map(|b| {
            (0..pos.len())
                .map(|i| std::array::from_fn(|c| (0..3).map(|m| basis[m][c] * b[3 * i + m]).sum()))
                .collect()
        })
        .collect();
    let mut out = vec![0.0; states.len()];
    let mut phases = vec![C64::new(0.0, 0.0); pos.len()];
    for (k, w) in quad.nodes.iter().zip(&quad.weights) {
        for (ph, p) in phases.iter_mut().zip(&pos) {
            *ph = (-I * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2])).exp();
        }
        for (s, d) in dipoles.iter().enumerate() {
            let mut tot = [C64::new(0.0, 0.0); 3];
            for (di, ph) in d.iter().zip(&phases) {
                for c in 0..3 {
                    tot[c] += di[c] * ph;
                }
            }
            let along = tot[0] * k[0] + tot[1] * k[1] + tot[2] * k[2];
            let full: f64 = tot.iter().map(|x| x.norm_sqr()).sum();
            out[s] += w * (full - along.norm_sqr());
        }
    }
    out.iter().map(|x| x * 3.0 / (8.0 * PI)).collect()
}

/// Whether a series is a disorder average or a single realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesOrigin {
    Averaged,
    Realization,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableSeries {
    pub label: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub n_realizations: usize,
    pub origin: SeriesOrigin,
    pub fingerprint: Option<String>,
}

impl ObservableSeries {
    pub fn realization(label: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(times.len(), values.len());
        Self { label: label.into(), times, values, n_realizations: 1, origin: SeriesOrigin::Realization, fingerprint: None }
    }

    pub fn averaged(label: impl Into<String>, times: Vec<f64>, values: Vec<f64>, n_realizations: usize) -> Self {
        assert_eq!(times.len(), values.len());
        Self { label: label.into(), times, values, n_realizations, origin: SeriesOrigin::Averaged, fingerprint: None }
    }

    /// Arithmetic mean of per-realization series in the given order.
    pub fn mean(label: impl Into<String>, parts: &[&ObservableSeries]) -> Result<Self> {
        let first = parts.first().ok_or(Error::AllExcluded(0))?;
        let mut acc = vec![0.0; first.values.len()];
        for p in parts {
            if p.times != first.times {
                return Err(Error::InvalidParameter("series on different time grids".into()));
            }
            acc.iter_mut().zip(&p.values).for_each(|(a, v)| *a += v);
        }
        let n = parts.len();
        acc.iter_mut().for_each(|a| *a /= n as f64);
        Ok(Self::averaged(label, first.times.clone(), acc, n))
    }

    fn require_average(&self) -> Result<()> {
        match self.origin {
            SeriesOrigin::Averaged => Ok(()),
            SeriesOrigin::Realization => Err(Error::NotAveraged(self.label.clone())),
        }
    }

    /// values / values[0].
    pub fn normalized(&self) -> Result<Self> {
        self.require_average()?;
        let i0 = *self.values.first().ok_or_else(|| Error::InvalidParameter("empty series".into()))?;
        if !(i0 > 0.0) {
            return Err(Error::InvalidParameter(format!("initial value of `{}` is {i0}", self.label)));
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v /= i0);
        Ok(out)
    }

    /// Linear interpolation at `t`.
    pub fn at(&self, t: f64) -> Option<f64> {
        let j = self.times.partition_point(|&x| x < t);
        if j < self.times.len() && self.times[j] == t {
            return Some(self.values[j]);
        }
        if j == 0 || j >= self.times.len() {
            return None;
        }
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let w = (t - t0) / (t1 - t0);
        Some(self.values[j - 1] * (1.0 - w) + self.values[j] * w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateEstimator {
    /// Central difference of ln I with half-width h.
    CentralDifference,
    /// Least-squares slope of ln I over a sliding window.
    SlidingLeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSeries {
    pub times: Vec<f64>,
    pub gamma: Vec<f64>,
    pub tau: Vec<f64>,
    /// True where the stencil was truncated at an end of the series.
    pub one_sided: Vec<bool>,
    pub estimator: RateEstimator,
    pub width: f64,
    /// First time at which the intensity was no longer positive.
    pub cutoff: Option<f64>,
}

impl RateSeries {
    /// τ at an arbitrary time by linear interpolation.
    pub fn tau_at(&self, t: f64) -> Option<f64> {
        ObservableSeries::averaged("tau", self.times.clone(), self.tau.clone(), 1).at(t)
    }
}

fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0)) {
        return Err(Error::InvalidParameter("rate estimation needs a uniform time grid".into()));
    }
    Ok(dt)
}

/// Keeps the leading run of strictly positive, finite values.
fn positive_prefix(series: &ObservableSeries) -> (usize, Option<f64>) {
    match series.values.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        Some(j) => {
            info!("`{}` truncated at t = {} where the average is no longer positive", series.label, series.times[j]);
            (j, Some(series.times[j]))
        }
        None => (series.values.len(), None),
    }
}

/// Γ(t) = −d ln I/dt by central differences of half-width `h`, and τ = 1/Γ.
pub fn instantaneous_rate(series: &ObservableSeries, h: f64) -> Result<RateSeries> {
    series.require_average()?;
    let dt = uniform_step(&series.times)?;
    let s = (h / dt).round() as usize;
    if s == 0 || ((s as f64) * dt - h).abs() > 1e-9 * h.max(1.0) {
        return Err(Error::InvalidParameter(format!("h = {h} is not a multiple of the grid step {dt}")));
    }
    let (len, cutoff) = positive_prefix(series);
    let logs: Vec<f64> = series.values[..len].iter().map(|v| v.ln()).collect();
    let mut gamma = Vec::with_capacity(len);
    let mut one_sided = Vec::with_capacity(len);
    for i in 0..len {
        let (lo, hi) = (i.checked_sub(s), (i + s < len).then_some(i + s));
        let g = match (lo, hi) {
            (Some(lo), Some(hi)) => -(logs[hi] - logs[lo]) / (2.0 * h),
            (None, Some(hi)) => -(logs[hi] - logs[i]) / h,
            (Some(lo), None) => -(logs[i] - logs[lo]) / h,
            (None, None) => f64::NAN,
        };
        gamma.push(g);
        one_sided.push(lo.is_none() || hi.is_none());
    }
    let tau = gamma.iter().map(|g| 1.0 / g).collect();
    Ok(RateSeries {
        times: series.times[..len].to_vec(),
        gamma,
        tau,
        one_sided,
        estimator: RateEstimator::CentralDifference,
        width: h,
        cutoff,
    })
}

/// Γ(t) from the least-squares slope of ln I over [t − w/2, t + w/2].
pub fn sliding_rate(series: &ObservableSeries, window: f64) -> Result<RateSeries> {
    series.require_average()?;
    let dt = uniform_step(&series.times)?;
    let half = ((window / 2.0) / dt).round() as usize;
    if half == 0 {
        return Err(Error::InvalidParameter(format!("window {window} is shorter than two grid steps")));
    }
    let (len, cutoff) = positive_prefix(series);
    let logs: Vec<f64> = series.values[..len].iter().map(|v| v.ln()).collect();
    let t = &series.times[..len];
    let mut gamma = Vec::with_capacity(len);
    let mut one_sided = Vec::with_capacity(len);
    for i in 0..len {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(len.saturating_sub(1));
        let m = (hi - lo + 1) as f64;
        let tm = t[lo..=hi].iter().sum::<f64>() / m;
        let lm = logs[lo..=hi].iter().sum::<f64>() / m;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for j in lo..=hi {
            sxy += (t[j] - tm) * (logs[j] - lm);
            sxx += (t[j] - tm).powi(2);
        }
        gamma.push(if sxx > 0.0 { -sxy / sxx } else { f64::NAN });
        one_sided.push(i < half || i + half >= len);
    }
    let tau = gamma.iter().map(|g| 1.0 / g).collect();
    Ok(RateSeries {
        times: t.to_vec(),
        gamma,
        tau,
        one_sided,
        estimator: RateEstimator::SlidingLeastSquares,
        width: window,
        cutoff,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolarizationSeries {
    pub times: Vec<f64>,
    pub co: Vec<f64>,
    pub counter: Vec<f64>,
    /// (co − counter)/(co + counter), positive for the drive helicity.
    /// Shorter than `times` if the total fell to the noise floor.
    pub doc: Vec<f64>,
}

/// Builds the degree of circular polarization from averaged channel intensities.
pub fn polarization_channels(co: &ObservableSeries, counter: &ObservableSeries) -> Result<PolarizationSeries> {
    co.require_average()?;
    counter.require_average()?;
    if co.times != counter.times {
        return Err(Error::InvalidParameter("polarization channels on different grids".into()));
    }
    let peak = co.values.iter().zip(&counter.values).map(|(a, b)| a + b).fold(0.0, f64::max);
    let mut doc = Vec::with_capacity(co.values.len());
    for (a, b) in co.values.iter().zip(&counter.values) {
        let tot = a + b;
        if !(tot > 1e-300 && tot > 1e-14 * peak) {
            break;
        }
        doc.push(((a - b) / tot).clamp(-1.0, 1.0));
    }
    if doc.len() < co.values.len() {
        info!("degree of polarization truncated at t = {}", co.times[doc.len()]);
    }
    Ok(PolarizationSeries { times: co.times.clone(), co: co.values.clone(), counter: counter.values.clone(), doc })
}

/// Rectangular short-time Fourier window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumWindow {
    pub center: f64,
    pub width: f64,
    pub dt: f64,
}

impl SpectrumWindow {
    pub fn new(center: f64, width: f64, dt: f64) -> Self {
        Self { center, width, dt }
    }

    pub fn samples(&self) -> usize {
        (self.width / self.dt).round() as usize
    }

    pub fn start(&self) -> f64 {
        self.center - 0.5 * self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    /// Detuning from the bare atomic resonance, ascending.
    pub detuning: Vec<f64>,
    pub power: Vec<f64>,
    pub bin_width: f64,
}

impl Spectrum {
    pub fn total(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.bin_width
    }

    pub fn argmax(&self) -> usize {
        self.power.iter().enumerate().fold(0, |best, (i, p)| if *p > self.power[best] { i } else { best })
    }

    /// Indices of strict local maxima.
    pub fn local_maxima(&self) -> Vec<usize> {
        (1..self.power.len().saturating_sub(1))
            .filter(|&i| self.power[i] > self.power[i - 1] && self.power[i] >= self.power[i + 1])
            .collect()
    }

    /// Element-wise mean in the given order.
    pub fn mean(parts: &[&Spectrum]) -> Option<Spectrum> {
        let first = parts.first()?;
        let mut power = vec![0.0; first.power.len()];
        for p in parts {
            power.iter_mut().zip(&p.power).for_each(|(a, v)| *a += v);
        }
        power.iter_mut().for_each(|v| *v /= parts.len() as f64);
        Some(Spectrum { detuning: first.detuning.clone(), power, bin_width: first.bin_width })
    }
}

/// Power spectrum |X(ν)|²/2π of the rotating-frame field inside the window,
/// X(ν) = dt Σ A(t_n) e^{−iνt_n}. A component e^{iνt} of the field radiates at
/// detuning δ − ν from the atomic line.
pub fn stft_spectrum(field: &[C64], times: &[f64], window: SpectrumWindow, drive_detuning: f64) -> Result<Spectrum> {
    if field.len() != times.len() || times.is_empty() {
        return Err(Error::InvalidParameter("field and time grid differ in length".into()));
    }
    let n = window.samples();
    let out_of_range = || Error::WindowOutOfRange {
        start: window.start(),
        end: window.start() + window.width,
        t0: times[0],
        t1: times[times.len() - 1],
    };
    if n < 2 {
        return Err(Error::InvalidParameter(format!("window holds {n} samples")));
    }
    let dt = uniform_step(times)?;
    if (dt - window.dt).abs() > 1e-9 * dt {
        return Err(Error::InvalidParameter(format!("field step {dt} differs from window step {}", window.dt)));
    }
    let offset = (window.start() - times[0]) / dt;
    if offset < -1e-6 {
        return Err(out_of_range());
    }
    let i0 = offset.round() as usize;
    if i0 + n > field.len() {
        return Err(out_of_range());
    }
    let mut buf: Vec<C64> = field[i0..i0 + n].iter().map(|a| a * dt).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let (order, detuning, bin_width) = spectrum_axis(window, drive_detuning);
    let power = order.iter().map(|&k| buf[k].norm_sqr() / (2.0 * PI)).collect();
    Ok(Spectrum { detuning, power, bin_width })
}

/// FFT bin order, ascending detuning axis and bin width of a window.
pub fn spectrum_axis(window: SpectrumWindow, drive_detuning: f64) -> (Vec<usize>, Vec<f64>, f64) {
    let n = window.samples();
    let dnu = 2.0 * PI / (n as f64 * window.dt);
    let nu = |k: usize| if k <= (n - 1) / 2 { k as f64 } else { k as f64 - n as f64 } * dnu;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (drive_detuning - nu(a)).total_cmp(&(drive_detuning - nu(b))));
    let detuning = order.iter().map(|&k| drive_detuning - nu(k)).collect();
    (order, detuning, dnu)
}

/// dt Σ|A|² over the window, the time-domain side of Parseval's identity.
pub fn window_energy(field: &[C64], times: &[f64], window: SpectrumWindow) -> f64 {
    let i0 = ((window.start() - times[0]) / window.dt).round() as usize;
    field[i0..i0 + window.samples()].iter().map(|a| a.norm_sqr()).sum::<f64>() * window.dt
}

/// A slab of atoms selected by one coordinate, binned on the other two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabSpec {
    /// Normal axis (0 = x, 1 = y, 2 = z).
    pub axis: usize,
    pub center: f64,
    pub width: f64,
    pub bin_size: f64,
}

impl SlabSpec {
    /// Normal ŷ through the cube centre, width 0.5, bins of 2.
    pub fn default_for(kl: f64) -> Self {
        Self { axis: 1, center: kl / 2.0, width: 0.5, bin_size: 2.0 }
    }

    fn plane_axes(&self) -> (usize, usize) {
        match self.axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlabMap {
    pub bins: usize,
    pub bin_size: f64,
    /// Row-major over (first in-plane axis, second in-plane axis).
    pub values: Vec<f64>,
    pub atoms_in_slab: usize,
}

impl SlabMap {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.bins + b]
    }

    /// Sum over the second in-plane axis.
    pub fn marginal(&self) -> Vec<f64> {
        (0..self.bins).map(|a| (0..self.bins).map(|b| self.get(a, b)).sum()).collect()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.bins).map(|a| (a as f64 + 0.5) * self.bin_size).collect()
    }

    pub fn mean(parts: &[&SlabMap]) -> Option<SlabMap> {
        let first = parts.first()?;
        let mut values = vec![0.0; first.values.len()];
        for p in parts {
            values.iter_mut().zip(&p.values).for_each(|(a, v)| *a += v);
        }
        values.iter_mut().for_each(|v| *v /= parts.len() as f64);
        let atoms = parts.iter().map(|p| p.atoms_in_slab).sum::<usize>() / parts.len();
        Some(SlabMap { bins: first.bins, bin_size: first.bin_size, values, atoms_in_slab: atoms })
    }
}

/// Accumulates Σ_m |b_(i,m)|² of the atoms inside the slab onto in-plane bins.
pub fn excitation_slab_map(b: &[C64], cfg: &EnsembleConfiguration, slab: SlabSpec) -> Result<SlabMap> {
    let kl = cfg.kl();
    if slab.axis > 2 || !(slab.width > 0.0 && slab.bin_size > 0.0) {
        return Err(Error::InvalidParameter("bad slab specification".into()));
    }
    if slab.center - slab.width / 2.0 < 0.0 || slab.center + slab.width / 2.0 > kl {
        return Err(Error::InvalidParameter(format!("slab at {} ± {} leaves the cube", slab.center, slab.width / 2.0)));
    }
    let bins = (kl / slab.bin_size).ceil() as usize;
    let (a, c) = slab.plane_axes();
    let mut values = vec![0.0; bins * bins];
    let mut atoms = 0;
    for (i, p) in cfg.positions().iter().enumerate() {
        if (p[slab.axis] - slab.center).abs() > slab.width / 2.0 {
            continue;
        }
        atoms += 1;
        let w: f64 = b[3 * i..3 * i + 3].iter().map(|x| x.norm_sqr()).sum();
        let ia = ((p[a] / slab.bin_size) as usize).min(bins - 1);
        let ic = ((p[c] / slab.bin_size) as usize).min(bins - 1);
        values[ia * bins + ic] += w;
    }
    Ok(SlabMap { bins, bin_size: slab.bin_size, values, atoms_in_slab: atoms })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HalfSineFit {
    pub amplitude: f64,
    pub offset: f64,
    /// RMS residual over the peak of the data.
    pub rms_residual: f64,
    /// Largest absolute residual over the peak of the data.
    pub max_residual: f64,
}

/// Least-squares fit of A sin(π(x + e)/(L + 2e)) with e ∈ [0, L].
pub fn half_sine_fit(xs: &[f64], ys: &[f64], length: f64) -> Result<HalfSineFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::InvalidParameter("half-sine fit needs at least three points".into()));
    }
    let peak = ys.iter().cloned().fold(f64::MIN, f64::max);
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter("half-sine fit needs a positive profile".into()));
    }
    let model = |e: f64| -> (f64, f64) {
        let basis: Vec<f64> = xs.iter().map(|x| (PI * (x + e) / (length + 2.0 * e)).sin()).collect();
        let num: f64 = basis.iter().zip(ys).map(|(f, y)| f * y).sum();
        let den: f64 = basis.iter().map(|f| f * f).sum();
        let amp = num / den;
        let sse: f64 = basis.iter().zip(ys).map(|(f, y)| (y - amp * f).powi(2)).sum();
        (amp, sse)
    };
    // coarse scan then golden-section refinement
    let steps = 400;
    let mut best = (0.0, f64::INFINITY);
    for i in 0..=steps {
        let e = length * i as f64 / steps as f64;
        let sse = model(e).1;
        if sse < best.1 {
            best = (e, sse);
        }
    }
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = ((best.0 - length / steps as f64).max(0.0), (best.0 + length / steps as f64).min(length));
    for _ in 0..100 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if model(m1).1 < model(m2).1 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let e = 0.5 * (lo + hi);
    let (amp, sse) = model(e);
    let max_res = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - amp * (PI * (x + e) / (length + 2.0 * e)).sin()).abs())
        .fold(0.0, f64::max);
    Ok(HalfSineFit {
        amplitude: amp,
        offset: e,
        rms_residual: (sse / xs.len() as f64).sqrt() / peak,
        max_residual: max_res / peak,
    })
}

/// Per-time total intensity b†Gb along a trajectory.
pub fn intensity_series(traj: &Trajectory, k: &CouplingMatrix) -> Vec<f64> {
    (0..traj.times.len()).map(|j| k.decay_power(&traj.state(j))).collect()
}
