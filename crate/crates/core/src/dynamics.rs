//! Driven steady state and free decay of the single-excitation amplitudes.
//!
//! During the pulse db/dt = M b − (i/2) Ω; after switch-off db/dt = M b.

use faer::linalg::solvers::PartialPivLu;
use faer::Mat;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::kernel::CouplingMatrix;
use crate::linalg::{inverse_norm1_estimate, lu_solve, matmul, matvec, matvec_ordered, norm1, norm_inf, vec_norm};
use crate::{Error, Result, C64};

/// Realizations whose evolution matrix exceeds this 1-norm condition
/// estimate are excluded.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Largest step accepted by [`evolve_driven`].
pub const MAX_DRIVEN_STEP: f64 = 0.05;

/// Relative RK4 error allowed per unit time in free decay.
pub const STEP_TOLERANCE: f64 = 1e-9;

const HALF_I: C64 = C64 { re: 0.0, im: 0.5 };

/// Amplitudes b_e in the frame rotating at the laser frequency, at delay `t`
/// after switch-off.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeState {
    pub b: Vec<C64>,
    pub t: f64,
}

impl AmplitudeState {
    pub fn new(b: Vec<C64>, t: f64) -> Self {
        Self { b, t }
    }

    /// Σ|b_e|².
    pub fn population(&self) -> f64 {
        self.b.iter().map(|x| x.norm_sqr()).sum()
    }
}

/// Solves M b = (i/2) Ω, the stationary point of the driven equations.
pub fn steady_state(k: &CouplingMatrix, drive: &[C64]) -> Result<AmplitudeState> {
    let n = k.dim();
    if drive.len() != n {
        return Err(Error::InvalidParameter(format!("drive vector has {} entries, expected {n}", drive.len())));
    }
    let m = k.evolution_matrix();
    let lu = m.partial_piv_lu();
    let cond = norm1(m.as_ref()) * inverse_norm1_estimate(&lu, n);
    if !(cond <= CONDITION_LIMIT) {
        return Err(Error::IllConditioned(cond));
    }
    let rhs: Vec<C64> = drive.iter().map(|w| HALF_I * w).collect();
    let mut b = lu_solve(&lu, &rhs);

    // one round of refinement keeps the residual at round-off level
    let rhs_norm = vec_norm(&rhs);
    for _ in 0..2 {
        let r: Vec<C64> = matvec_ordered(m.as_ref(), &b).iter().zip(&rhs).map(|(mb, f)| f - mb).collect();
        if vec_norm(&r) <= 1e-13 * rhs_norm {
            break;
        }
        let db = lu_solve(&lu, &r);
        b.iter_mut().zip(db).for_each(|(x, d)| *x += d);
    }
    let r: Vec<C64> = matvec_ordered(m.as_ref(), &b).iter().zip(&rhs).map(|(mb, f)| f - mb).collect();
    if vec_norm(&r) > 1e-10 * rhs_norm {
        return Err(Error::IllConditioned(cond));
    }
    Ok(AmplitudeState::new(b, 0.0))
}

fn rk4_step(m: &Mat<C64>, b: &mut [C64], source: Option<&[C64]>, h: f64) {
    let f = |y: &[C64]| -> Vec<C64> {
        let mut d = matvec(m.as_ref(), y);
        if let Some(s) = source {
            d.iter_mut().zip(s).for_each(|(x, s)| *x -= HALF_I * s);
        }
        d
    };
    let axpy = |y: &[C64], k: &[C64], a: f64| -> Vec<C64> { y.iter().zip(k).map(|(y, k)| y + a * k).collect() };
    let k1 = f(b);
    let k2 = f(&axpy(b, &k1, 0.5 * h));
    let k3 = f(&axpy(b, &k2, 0.5 * h));
    let k4 = f(&axpy(b, &k3, h));
    for i in 0..b.len() {
        b[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates the driven equations from b = 0 over `duration` with fixed-step
/// RK4 (step ≤ `dt`). Returns the state at switch-off.
pub fn evolve_driven(k: &CouplingMatrix, drive: &[C64], duration: f64, dt: f64) -> Result<AmplitudeState> {
    if !(dt > 0.0 && dt <= MAX_DRIVEN_STEP) {
        return Err(Error::InvalidParameter(format!("driven step must lie in (0, {MAX_DRIVEN_STEP}], got {dt}")));
    }
    if !(duration >= 0.0) {
        return Err(Error::InvalidParameter(format!("pulse duration must be non-negative, got {duration}")));
    }
    let n = k.dim();
    if drive.len() != n {
        return Err(Error::InvalidParameter(format!("drive vector has {} entries, expected {n}", drive.len())));
    }
    let mut b = vec![C64::new(0.0, 0.0); n];
    if duration == 0.0 {
        return Ok(AmplitudeState::new(b, 0.0));
    }
    let reference = steady_state(k, drive).ok().map(|s| vec_norm(&s.b));
    let m = k.evolution_matrix();
    let steps = (duration / dt).ceil() as usize;
    let h = duration / steps as f64;
    for step in 0..steps {
        rk4_step(&m, &mut b, Some(drive), h);
        if step % 64 == 0 || step + 1 == steps {
            let norm = vec_norm(&b);
            let limit = reference.map(|r| 10.0 * r).unwrap_or(f64::INFINITY);
            if !norm.is_finite() || norm > limit {
                return Err(Error::Diverged { norm, reference: reference.unwrap_or(f64::NAN) });
            }
        }
    }
    Ok(AmplitudeState::new(b, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagatorMethod {
    Eigen,
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorOptions {
    pub method: PropagatorMethod,
    /// Largest dimension 3N handed to the dense eigensolver.
    pub eigen_cap: usize,
    /// Upper bound on the RK4 step; see [`free_decay_step`] for the accuracy limit.
    pub step_dt: f64,
}

impl Default for PropagatorOptions {
    fn default() -> Self {
        Self { method: PropagatorMethod::Eigen, eigen_cap: 9000, step_dt: 0.01 }
    }
}

impl PropagatorOptions {
    pub fn step(dt: f64) -> Self {
        Self { method: PropagatorMethod::Step, step_dt: dt, ..Self::default() }
    }
}

enum Repr {
    Eigen { vectors: Mat<C64>, values: Vec<C64>, lu: PartialPivLu<C64> },
    Step { m: Mat<C64>, detuning: f64, dt: f64 },
}

/// Free-decay propagator for one configuration.
pub struct DecayPropagator {
    repr: Repr,
}

/// States b(t_j) stored column-wise.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Mat<C64>,
}

impl Trajectory {
    pub fn state(&self, j: usize) -> Vec<C64> {
        self.states.col(j).iter().copied().collect()
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.times.len()).map(|j| self.states.col(j).iter().map(|x| x.norm_sqr()).sum()).collect()
    }
}

pub fn make_propagator(k: &CouplingMatrix, opts: PropagatorOptions) -> DecayPropagator {
    let m = k.evolution_matrix();
    if opts.method == PropagatorMethod::Eigen {
        if k.dim() > opts.eigen_cap {
            warn!("3N = {} exceeds the eigensolver cap {}; using step integration", k.dim(), opts.eigen_cap);
        } else {
            match eigen_repr(&m) {
                Ok(repr) => return DecayPropagator { repr },
                Err(why) => warn!("eigendecomposition unusable ({why}); falling back to step integration"),
            }
        }
    }
    // the uniform iδ rotation is applied exactly; RK4 only sees the coupling part
    let detuning = k.detuning();
    let mut m = m;
    for i in 0..m.nrows() {
        m[(i, i)] -= C64::new(0.0, detuning);
    }
    let dt = free_decay_step(norm_inf(m.as_ref()), opts.step_dt);
    DecayPropagator { repr: Repr::Step { m, detuning, dt } }
}

/// RK4 step for a rotating-frame generator of norm ρ: the local error
/// (hρ)⁴ρ/120 per unit time is held at STEP_TOLERANCE, capped by `max_dt`.
pub fn free_decay_step(rho: f64, max_dt: f64) -> f64 {
    let h = (120.0 * STEP_TOLERANCE).powf(0.25) * rho.max(1e-300).powf(-1.25);
    h.min(max_dt)
}

fn eigen_repr(m: &Mat<C64>) -> std::result::Result<Repr, String> {
    let n = m.nrows();
    let evd = m.eigen().map_err(|e| format!("{e:?}"))?;
    let vectors = evd.U().to_owned();
    let values: Vec<C64> = evd.S().column_vector().iter().copied().collect();
    drop(evd);
    if values.iter().any(|v| !v.is_finite()) {
        return Err("non-finite eigenvalue".into());
    }
    let lu = vectors.partial_piv_lu();
    let cond = norm1(vectors.as_ref()) * inverse_norm1_estimate(&lu, n);
    if !(cond <= CONDITION_LIMIT) {
        return Err(format!("eigenvector matrix condition estimate {cond:.3e}"));
    }
    Ok(Repr::Eigen { vectors, values, lu })
}

impl DecayPropagator {
    pub fn method(&self) -> PropagatorMethod {
        match self.repr {
            Repr::Eigen { .. } => PropagatorMethod::Eigen,
            Repr::Step { .. } => PropagatorMethod::Step,
        }
    }

    /// Eigenvalues of M, available with the eigen method.
    pub fn eigenvalues(&self) -> Option<&[C64]> {
        match &self.repr {
            Repr::Eigen { values, .. } => Some(values),
            Repr::Step { .. } => None,
        }
    }

    /// Step actually used by the integrator, if stepping.
    pub fn step_dt(&self) -> Option<f64> {
        match &self.repr {
            Repr::Step { dt, .. } => Some(*dt),
            Repr::Eigen { .. } => None,
        }
    }

    fn check_times(b0: &AmplitudeState, times: &[f64]) {
        assert!(times.windows(2).all(|w| w[0] <= w[1]), "output times must be sorted");
        assert!(times.first().is_none_or(|&t| t >= b0.t), "output times must not precede the initial state");
    }

    /// b(t_j) for every requested time (absolute delays, ≥ `b0.t`).
    pub fn propagate(&self, b0: &AmplitudeState, times: &[f64]) -> Trajectory {
        Self::check_times(b0, times);
        let n = b0.b.len();
        let mut states = Mat::<C64>::zeros(n, times.len());
        match &self.repr {
            Repr::Eigen { vectors, values, lu } => {
                let a0 = lu_solve(lu, &b0.b);
                let modal = Mat::from_fn(n, times.len(), |k, j| (values[k] * (times[j] - b0.t)).exp() * a0[k]);
                states = matmul(vectors.as_ref(), modal.as_ref());
            }
            Repr::Step { m, detuning, dt } => {
                let mut b = b0.b.clone();
                let mut t = b0.t;
                for (j, &tj) in times.iter().enumerate() {
                    advance(m, *detuning, &mut b, tj - t, *dt);
                    t = tj;
                    for r in 0..n {
                        states[(r, j)] = b[r];
                    }
                }
            }
        }
        // exact identity at the initial time
        for (j, &tj) in times.iter().enumerate() {
            if tj == b0.t {
                for r in 0..n {
                    states[(r, j)] = b0.b[r];
                }
            }
        }
        Trajectory { times: times.to_vec(), states }
    }

    /// Linear functionals c·b(t_j) for each row of `functionals`, without
    /// forming the full trajectory on the eigen path.
    pub fn project(&self, b0: &AmplitudeState, functionals: &[Vec<C64>], times: &[f64]) -> Vec<Vec<C64>> {
        Self::check_times(b0, times);
        let n = b0.b.len();
        let mut out = vec![Vec::with_capacity(times.len()); functionals.len()];
        match &self.repr {
            Repr::Eigen { vectors, values, lu } => {
                let a0 = lu_solve(lu, &b0.b);
                // w_f[k] = a0_k Σ_r c_f[r] S[r,k]
                let weights: Vec<Vec<C64>> = functionals
                    .iter()
                    .map(|c| {
                        (0..n)
                            .map(|k| {
                                let col = vectors.col(k);
                                let s: C64 = (0..n).map(|r| c[r] * col[r]).sum();
                                s * a0[k]
                            })
                            .collect()
                    })
                    .collect();
                let mut phases = vec![C64::new(0.0, 0.0); n];
                for &t in times {
                    let dt = t - b0.t;
                    for k in 0..n {
                        phases[k] = (values[k] * dt).exp();
                    }
                    for (f, w) in weights.iter().enumerate() {
                        let v = if dt == 0.0 {
                            functionals[f].iter().zip(&b0.b).map(|(c, b)| c * b).sum()
                        } else {
                            w.iter().zip(&phases).map(|(w, p)| w * p).sum()
                        };
                        out[f].push(v);
                    }
                }
            }
            Repr::Step { m, detuning, dt } => {
                let mut b = b0.b.clone();
                let mut t = b0.t;
                for &tj in times {
                    advance(m, *detuning, &mut b, tj - t, *dt);
                    t = tj;
                    for (f, c) in functionals.iter().enumerate() {
                        out[f].push(c.iter().zip(&b).map(|(c, b)| c * b).sum());
                    }
                }
            }
        }
        out
    }
}

fn advance(m: &Mat<C64>, detuning: f64, b: &mut [C64], span: f64, dt: f64) {
    if span <= 0.0 {
        return;
    }
    let steps = (span / dt).ceil() as usize;
    let h = span / steps as f64;
    for _ in 0..steps {
        rk4_step(m, b, None, h);
    }
    let phase = C64::new(0.0, detuning * span).exp();
    for x in b.iter_mut() {
        *x *= phase;
    }
}
