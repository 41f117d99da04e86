//! Diffusion-theory reference numbers for radiation trapping in the cube.

use serde::Serialize;

use crate::{Error, Result};

/// Resonant cross section σ₀ = 6π/k².
pub const SIGMA0: f64 = 6.0 * std::f64::consts::PI;
/// Geometry factor of the longest diffusive mode of a cube.
pub const ALPHA_CUBE: f64 = 3.0;
pub const DEFAULT_EXTRAPOLATION: f64 = 0.71;
/// Below this optical depth diffusion theory is not trusted.
pub const VALIDITY_DEPTH: f64 = 5.0;

/// b₀ = n σ₀ L.
pub fn resonant_optical_depth(density: f64, kl: f64) -> f64 {
    density * SIGMA0 * kl
}

/// Resonant mean free path ℓ = 1/(n σ₀).
pub fn mean_free_path(density: f64) -> f64 {
    1.0 / (density * SIGMA0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiffusiveLifetime {
    pub tau: f64,
    /// False when b < 5.
    pub valid: bool,
}

/// τ_diff = 3b²/(απ²) in units of τ_at.
pub fn diffusive_lifetime(b: f64, alpha: f64) -> DiffusiveLifetime {
    let tau = 3.0 * b * b / (alpha * std::f64::consts::PI.powi(2));
    DiffusiveLifetime { tau, valid: b >= VALIDITY_DEPTH }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiffusionEstimate {
    pub b0: f64,
    pub ell: f64,
    pub b_prime: f64,
    pub b: f64,
    pub alpha: f64,
    /// Lifetime from b₀ alone.
    pub tau_diff_b0: DiffusiveLifetime,
    /// Lifetime from b = b₀ + b′.
    pub tau_diff: DiffusiveLifetime,
}

/// Adds an extrapolation length of `coefficient` mean free paths at each of
/// the two faces, i.e. b′ = 2·coefficient in optical-depth units.
pub fn extrapolated_depth(b0: f64, density: f64, coefficient: f64) -> Result<DiffusionEstimate> {
    if !(density > 0.0) {
        return Err(Error::InvalidParameter(format!("density must be positive, got {density}")));
    }
    if !(coefficient >= 0.0) {
        return Err(Error::InvalidParameter(format!("extrapolation coefficient must be non-negative, got {coefficient}")));
    }
    let b_prime = 2.0 * coefficient;
    let b = b0 + b_prime;
    Ok(DiffusionEstimate {
        b0,
        ell: mean_free_path(density),
        b_prime,
        b,
        alpha: ALPHA_CUBE,
        tau_diff_b0: diffusive_lifetime(b0, ALPHA_CUBE),
        tau_diff: diffusive_lifetime(b, ALPHA_CUBE),
    })
}

/// Convenience for a cube of edge `kl`.
pub fn estimate(density: f64, kl: f64, coefficient: f64) -> Result<DiffusionEstimate> {
    if !(kl > 0.0) {
        return Err(Error::InvalidParameter(format!("kL must be positive, got {kl}")));
    }
    extrapolated_depth(resonant_optical_depth(density, kl), density, coefficient)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optical_depths() {
        assert!((resonant_optical_depth(0.01, 100.0) - 18.849556).abs() < 1e-6);
        assert!((resonant_optical_depth(0.01, 5.848) - 1.10232).abs() < 1e-5);
        assert_eq!(resonant_optical_depth(0.01, 0.0), 0.0);
    }

    #[test]
    fn lifetimes() {
        let t = diffusive_lifetime(19.0, 3.0);
        assert!((t.tau - 36.5770).abs() < 1e-4);
        assert!(t.valid);
        assert_eq!(diffusive_lifetime(0.0, 3.0).tau, 0.0);
        assert!(!diffusive_lifetime(4.0, 3.0).valid);
        let a = diffusive_lifetime(7.0, 3.0).tau;
        let b = diffusive_lifetime(14.0, 3.0).tau;
        assert!((b / a - 4.0).abs() < 1e-12);
    }

    #[test]
    fn extrapolation() {
        let e = extrapolated_depth(10.0, 0.01, 0.0).unwrap();
        assert_eq!(e.b, e.b0);
        let e = estimate(0.01, 40.0, DEFAULT_EXTRAPOLATION).unwrap();
        assert!((e.ell - 5.305165).abs() < 1e-6);
        assert!((e.b - e.b0 - 1.42).abs() < 1e-12);
        assert!((e.b0 - 40.0 / e.ell).abs() < 1e-12);
        assert!(e.tau_diff.tau > e.tau_diff_b0.tau);
    }
}
