//! Dipole-dipole coupling for a J=0 → J=1 transition.
//!
//! Amplitudes are indexed by [`TransitionIndex`] (atom, Zeeman sublevel m) in
//! the spherical basis ê₊₁ = −(x̂ + iŷ)/√2, ê₀ = ẑ, ê₋₁ = (x̂ − iŷ)/√2. The
//! transition g → e_m couples to a field E through ê_m†·E and radiates with
//! dipole vector ê_m. With that convention the pair block is
//!
//! V_(i,m),(j,m') = −(3/2) e^{ix}/x³ ê_m† { [1 − ix − x²] I − [3 − 3ix − x²] n̂n̂ } ê_m'
//!
//! with x = |r_i − r_j| (in 1/k) and n̂ the unit separation. The evolution
//! matrix is M = (iδ − 1/2) I + (i/2) V and G = −(M + M†) is the decay matrix,
//! so that d/dt Σ|b|² = −b†Gb during free decay.

use std::f64::consts::FRAC_1_SQRT_2;

use faer::Mat;

use crate::ensemble::{dist2, EnsembleConfiguration};
use crate::{Error, Result, C64};

pub type CVec3 = [C64; 3];

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Sublevels in storage order.
pub const SUBLEVELS: [i32; 3] = [-1, 0, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransitionIndex {
    pub atom: usize,
    pub m: i32,
}

impl TransitionIndex {
    pub fn new(atom: usize, m: i32) -> Self {
        assert!((-1..=1).contains(&m), "Zeeman sublevel must be -1, 0 or 1, got {m}");
        Self { atom, m }
    }

    pub fn flat(&self) -> usize {
        3 * self.atom + (self.m + 1) as usize
    }

    pub fn from_flat(k: usize) -> Self {
        Self { atom: k / 3, m: (k % 3) as i32 - 1 }
    }
}

/// ê_m for m ∈ {−1, 0, +1}.
pub fn spherical_unit_vector(m: i32) -> CVec3 {
    let s = FRAC_1_SQRT_2;
    match m {
        1 => [C64::new(-s, 0.0), C64::new(0.0, -s), C64::new(0.0, 0.0)],
        0 => [C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        -1 => [C64::new(s, 0.0), C64::new(0.0, -s), C64::new(0.0, 0.0)],
        _ => panic!("Zeeman sublevel must be -1, 0 or 1, got {m}"),
    }
}

/// Hermitian inner product a†b.
pub fn inner(a: &CVec3, b: &CVec3) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn norm(a: &CVec3) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// 3×3 block V_(i,·),(j,·) in the spherical basis for separation `r = r_i − r_j`.
pub fn pair_block(r: [f64; 3]) -> [[C64; 3]; 3] {
    let x = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    assert!(x > 0.0, "pair coupling is undefined for coincident atoms");
    let n = [r[0] / x, r[1] / x, r[2] / x];

    let phase = (I * x).exp() / (x * x * x);
    let alpha = -1.5 * phase * C64::new(1.0 - x * x, -x);
    let beta = 1.5 * phase * C64::new(3.0 - x * x, -3.0 * x);

    // p_m = ê_m† n̂ (n̂ is real)
    let p: [C64; 3] = std::array::from_fn(|k| {
        let e = spherical_unit_vector(SUBLEVELS[k]);
        e[0].conj() * n[0] + e[1].conj() * n[1] + e[2].conj() * n[2]
    });

    let mut block = [[C64::new(0.0, 0.0); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            block[a][b] = beta * p[a] * p[b].conj();
            if a == b {
                block[a][b] += alpha;
            }
        }
    }
    block
}

/// Single element V_(i,m),(j,m') for separation `r = r_i − r_j`.
pub fn pair_coupling(r: [f64; 3], m: i32, m_prime: i32) -> C64 {
    let block = pair_block(r);
    block[(m + 1) as usize][(m_prime + 1) as usize]
}

/// Plane-wave drive of Rabi frequency Ω₀.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveField {
    pub rabi: f64,
    pub detuning: f64,
    pub propagation: [f64; 3],
    pub polarization: CVec3,
    pub duration: f64,
}

impl DriveField {
    /// Circularly polarized wave along +ẑ; `helicity` +1 drives σ⁺ (m = +1).
    pub fn circular(rabi: f64, detuning: f64, helicity: i32, duration: f64) -> Self {
        let m = if helicity >= 0 { 1 } else { -1 };
        Self {
            rabi,
            detuning,
            propagation: [0.0, 0.0, 1.0],
            polarization: spherical_unit_vector(m),
            duration,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.propagation;
        let kn = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
        if (kn - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("propagation must be a unit vector, |k| = {kn}")));
        }
        let un = norm(&self.polarization);
        if (un - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("polarization must be normalized, |u| = {un}")));
        }
        let along: C64 = (0..3).map(|c| self.polarization[c] * k[c]).sum();
        if along.norm() > 1e-12 {
            return Err(Error::InvalidParameter("polarization must be transverse to propagation".into()));
        }
        if !(self.duration >= 0.0) {
            return Err(Error::InvalidParameter(format!("pulse duration must be non-negative, got {}", self.duration)));
        }
        Ok(())
    }

    /// Helicity of the polarization about the propagation axis, in [−1, 1]:
    /// Re[i (u × u*)·k̂]. +1 for ê₊₁ along +ẑ.
    pub fn helicity(&self) -> f64 {
        let u = self.polarization;
        let uc = [u[0].conj(), u[1].conj(), u[2].conj()];
        let cross = [
            u[1] * uc[2] - u[2] * uc[1],
            u[2] * uc[0] - u[0] * uc[2],
            u[0] * uc[1] - u[1] * uc[0],
        ];
        let k = self.propagation;
        (I * (cross[0] * k[0] + cross[1] * k[1] + cross[2] * k[2])).re
    }
}

/// Dense 3N×3N coupling for one configuration. Only V is stored; M and G are
/// derived on demand so large clouds keep a single n² buffer.
#[derive(Debug, Clone)]
pub struct CouplingMatrix {
    v: Mat<C64>,
    detuning: f64,
}

pub fn build_coupling_matrix(cfg: &EnsembleConfiguration, detuning: f64) -> Result<CouplingMatrix> {
    let pos = cfg.positions();
    let n = 3 * pos.len();
    let mut v = Mat::<C64>::zeros(n, n);
    for i in 0..pos.len() {
        for j in (i + 1)..pos.len() {
            if dist2(&pos[i], &pos[j]) == 0.0 {
                return Err(Error::CoincidentAtoms { i, j });
            }
            let r = [pos[i][0] - pos[j][0], pos[i][1] - pos[j][1], pos[i][2] - pos[j][2]];
            let block = pair_block(r);
            for a in 0..3 {
                for b in 0..3 {
                    v[(3 * i + a, 3 * j + b)] = block[a][b];
                    v[(3 * j + a, 3 * i + b)] = block[a][b];
                }
            }
        }
    }
    Ok(CouplingMatrix { v, detuning })
}

impl CouplingMatrix {
    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn atoms(&self) -> usize {
        self.v.nrows() / 3
    }

    pub fn detuning(&self) -> f64 {
        self.detuning
    }

    pub fn v(&self) -> &Mat<C64> {
        &self.v
    }

    /// M = (iδ − 1/2) I + (i/2) V.
    pub fn evolution_matrix(&self) -> Mat<C64> {
        let n = self.dim();
        let diag = C64::new(-0.5, self.detuning);
        Mat::from_fn(n, n, |r, c| {
            let off = 0.5 * I * self.v[(r, c)];
            if r == c { off + diag } else { off }
        })
    }

    /// G = −(M + M†) = I + (V − V†)/(2i).
    pub fn decay_matrix(&self) -> Mat<C64> {
        let n = self.dim();
        Mat::from_fn(n, n, |r, c| {
            let g = (self.v[(r, c)] - self.v[(c, r)].conj()) / (2.0 * I);
            if r == c { g + 1.0 } else { g }
        })
    }

    /// Total emitted power b†Gb = |b|² + Im(b†Vb).
    pub fn decay_power(&self, b: &[C64]) -> f64 {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut quad = C64::new(0.0, 0.0);
        for c in 0..n {
            let bc = b[c];
            if bc == C64::new(0.0, 0.0) {
                continue;
            }
            let col = self.v.col(c);
            let mut acc = C64::new(0.0, 0.0);
            for (r, br) in b.iter().enumerate() {
                acc += br.conj() * col[r];
            }
            quad += acc * bc;
        }
        b.iter().map(|x| x.norm_sqr()).sum::<f64>() + quad.im
    }

    /// V rotated back to Cartesian components per atom, where reciprocity
    /// reads Vᵀ = V.
    pub fn cartesian_v(&self) -> Mat<C64> {
        let n = self.dim();
        let u: [CVec3; 3] = std::array::from_fn(|k| spherical_unit_vector(SUBLEVELS[k]));
        // V_cart block = U V_sph U†, U[μ][m] = ê_m^μ
        let mut out = Mat::<C64>::zeros(n, n);
        for bi in 0..n / 3 {
            for bj in 0..n / 3 {
                for mu in 0..3 {
                    for nu in 0..3 {
                        let mut acc = C64::new(0.0, 0.0);
                        for a in 0..3 {
                            for b in 0..3 {
                                acc += u[a][mu] * self.v[(3 * bi + a, 3 * bj + b)] * u[b][nu].conj();
                            }
                        }
                        out[(3 * bi + mu, 3 * bj + nu)] = acc;
                    }
                }
            }
        }
        out
    }
}

/// Ω_(i,m) = Ω₀ ⟨ê_m, u⟩ exp(i k̂·r_i).
pub fn build_drive_vector(cfg: &EnsembleConfiguration, drive: &DriveField) -> Vec<C64> {
    let proj: [C64; 3] = std::array::from_fn(|k| inner(&spherical_unit_vector(SUBLEVELS[k]), &drive.polarization));
    let k = drive.propagation;
    let mut out = Vec::with_capacity(3 * cfg.len());
    for p in cfg.positions() {
        let phase = (I * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2])).exp();
        for c in proj {
            out.push(drive.rabi * c * phase);
        }
    }
    out
}
