//! Closed-form levels of a two-atom quasimolecule and the resonant-pair solver.

use serde::Serialize;

use crate::{Error, Result};

/// Grid step used to bracket roots before bisection.
pub const ROOT_GRID_STEP: f64 = 1e-3;
pub const DEFAULT_X_MAX: f64 = 20.0;

/// One of the four distinct two-atom levels. The (p, q) = (1, 1) levels are
/// doubly degenerate (transverse dipoles), (0, −2) is the axial one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct DimerBranch {
    pub epsilon: i8,
    pub p: i8,
    pub q: i8,
}

impl DimerBranch {
    pub const ALL: [DimerBranch; 4] = [
        DimerBranch { epsilon: 1, p: 0, q: -2 },
        DimerBranch { epsilon: -1, p: 0, q: -2 },
        DimerBranch { epsilon: 1, p: 1, q: 1 },
        DimerBranch { epsilon: -1, p: 1, q: 1 },
    ];

    pub fn new(epsilon: i8, p: i8, q: i8) -> Result<Self> {
        let b = DimerBranch { epsilon, p, q };
        if Self::ALL.contains(&b) {
            Ok(b)
        } else {
            Err(Error::InvalidParameter(format!("no dimer branch (ε={epsilon}, p={p}, q={q})")))
        }
    }

    pub fn degeneracy(&self) -> usize {
        if self.p == 1 { 2 } else { 1 }
    }

    pub fn label(&self) -> String {
        format!("eps={:+} p={} q={:+}", self.epsilon, self.p, self.q)
    }
}

/// (Δ_r, Γ_r) in units of γ for separation x = kr.
///
/// # Panics
/// If `x <= 0`.
pub fn dimer_levels(x: f64, branch: DimerBranch) -> (f64, f64) {
    assert!(x > 0.0, "dimer separation must be positive, got {x}");
    let (s, c) = x.sin_cos();
    let eps = branch.epsilon as f64;
    let p = branch.p as f64;
    let q = branch.q as f64;
    let shift = 0.75 * eps * (-p * c / x + q * (c / x.powi(3) + s / (x * x)));
    let rate = 1.0 - 1.5 * eps * (-p * s / x + q * (s / x.powi(3) - c / (x * x)));
    (shift, rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResonantPair {
    pub branch: DimerBranch,
    pub x: f64,
    pub shift: f64,
    pub rate: f64,
    pub lifetime: f64,
}

/// All separations in (0, x_max] where some branch is shifted by exactly
/// `detuning`, longest-lived first.
pub fn resonant_pairs(detuning: f64, x_max: f64) -> Result<Vec<ResonantPair>> {
    if detuning == 0.0 || !detuning.is_finite() {
        return Err(Error::InvalidParameter(format!("detuning must be finite and nonzero, got {detuning}")));
    }
    if !(x_max > ROOT_GRID_STEP) {
        return Err(Error::InvalidParameter(format!("x_max must exceed the grid step, got {x_max}")));
    }
    let steps = (x_max / ROOT_GRID_STEP).round() as usize;
    let mut out = Vec::new();
    for branch in DimerBranch::ALL {
        let f = |x: f64| dimer_levels(x, branch).0 - detuning;
        let mut a = ROOT_GRID_STEP;
        let mut fa = f(a);
        for i in 2..=steps {
            let b = (i as f64 * ROOT_GRID_STEP).min(x_max);
            let fb = f(b);
            if fa == 0.0 {
                out.push(pair(branch, a));
            } else if fa * fb < 0.0 {
                out.push(pair(branch, bisect(&f, a, b, fa)));
            }
            a = b;
            fa = fb;
        }
        if fa == 0.0 {
            out.push(pair(branch, a));
        }
    }
    out.sort_by(|a, b| b.lifetime.total_cmp(&a.lifetime));
    Ok(out)
}

fn pair(branch: DimerBranch, x: f64) -> ResonantPair {
    let (shift, rate) = dimer_levels(x, branch);
    ResonantPair { branch, x, shift, rate, lifetime: 1.0 / rate }
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    while b - a > 1e-15 * b.max(1.0) {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    if f(a).abs() <= f(b).abs() { a } else { b }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SUB: DimerBranch = DimerBranch { epsilon: -1, p: 1, q: 1 };

    #[test]
    fn six_states() {
        let total: usize = DimerBranch::ALL.iter().map(|b| b.degeneracy()).sum();
        assert_eq!(total, 6);
        assert!(DimerBranch::new(1, 1, -2).is_err());
    }

    #[test]
    fn independent_atom_limit() {
        for b in DimerBranch::ALL {
            let (s, r) = dimer_levels(1e7, b);
            assert!(s.abs() < 1e-6);
            assert!((r - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn subradiant_anchor() {
        let (s, r) = dimer_levels(0.549, SUB);
        assert!((s + 4.0).abs() < 0.01, "{s}");
        assert!((1.0 / r - 16.86).abs() < 0.1, "{}", 1.0 / r);
        let (_, partner) = dimer_levels(0.549, DimerBranch { epsilon: 1, ..SUB });
        assert!(partner > 1.0);
    }

    #[test]
    fn pair_sum_rule() {
        for i in 1..200 {
            let x = 0.05 * i as f64;
            for (p, q) in [(0, -2), (1, 1)] {
                let a = dimer_levels(x, DimerBranch { epsilon: 1, p, q }).1;
                let b = dimer_levels(x, DimerBranch { epsilon: -1, p, q }).1;
                assert!((a + b - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resonant_pairs_at_minus_four() {
        let roots = resonant_pairs(-4.0, DEFAULT_X_MAX).unwrap();
        let first = roots[0];
        assert_eq!(first.branch, SUB);
        assert!((first.x - 0.5489849).abs() < 1e-6);
        assert!((first.lifetime - 16.8603).abs() < 1e-3);
        for r in &roots {
            assert!((r.shift + 4.0).abs() <= 1e-8);
        }
        let axial: Vec<_> = roots.iter().filter(|r| r.branch.p == 0).collect();
        assert_eq!(axial.len(), 1);
        assert!(axial[0].x > first.x);
        assert!((axial[0].x - 0.778).abs() < 1e-3);
        assert!((axial[0].lifetime - first.lifetime).abs() > 1.0);
        assert!(roots.windows(2).all(|w| w[0].lifetime >= w[1].lifetime));
    }

    #[test]
    fn positive_detuning_mirrors() {
        let roots = resonant_pairs(4.0, DEFAULT_X_MAX).unwrap();
        assert!(!roots.is_empty());
        let neg = resonant_pairs(-4.0, DEFAULT_X_MAX).unwrap();
        // flipping ε flips the shift and leaves x unchanged
        for r in &roots {
            assert!(neg.iter().any(|n| n.branch.epsilon == -r.branch.epsilon && n.branch.p == r.branch.p && (n.x - r.x).abs() < 1e-9));
        }
    }

    #[test]
    fn truncated_range_and_bad_detuning() {
        assert!(resonant_pairs(-4.0, 0.3).unwrap().is_empty());
        assert!(resonant_pairs(0.0, 20.0).is_err());
    }
}
