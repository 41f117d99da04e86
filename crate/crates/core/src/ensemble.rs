//! Random configurations of motionless atoms filling a cube at fixed density.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Redraw budget for exclusion-volume sampling.
pub const MAX_REDRAWS: usize = 1_000_000;

/// (master seed, realization index). Each pair selects an independent
/// ChaCha20 stream, so a realization never depends on the worker schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub index: u64,
}

impl SeedRecord {
    pub fn new(master: u64, index: u64) -> Self {
        Self { master, index }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master);
        rng.set_stream(self.index);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfiguration {
    positions: Vec<[f64; 3]>,
    kl: f64,
    density: f64,
    seed: Option<SeedRecord>,
}

/// N = round(density · kL³).
pub fn atom_count(density: f64, kl: f64) -> usize {
    (density * kl.powi(3)).round() as usize
}

/// Mean interparticle distance n^(-1/3).
pub fn mean_spacing(density: f64) -> f64 {
    density.powf(-1.0 / 3.0)
}

/// Uniform i.i.d. positions in [0, kL]³. With `r_min > 0` atoms are placed one
/// at a time and each is redrawn until it keeps at least `r_min` from every
/// atom already placed.
pub fn sample_cube(density: f64, kl: f64, r_min: f64, seed: SeedRecord) -> Result<EnsembleConfiguration> {
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::InvalidParameter(format!("density must be positive, got {density}")));
    }
    if !(kl > 0.0 && kl.is_finite()) {
        return Err(Error::InvalidParameter(format!("kL must be positive, got {kl}")));
    }
    if !(r_min >= 0.0) {
        return Err(Error::InvalidParameter(format!("r_min must be non-negative, got {r_min}")));
    }
    if r_min >= mean_spacing(density) {
        return Err(Error::InfeasibleExclusion { r_min, redraws: 0 });
    }

    let n = atom_count(density, kl);
    let mut rng = seed.rng();
    let draw = |rng: &mut ChaCha20Rng| -> [f64; 3] {
        [rng.random::<f64>() * kl, rng.random::<f64>() * kl, rng.random::<f64>() * kl]
    };

    let mut positions = Vec::with_capacity(n);
    if r_min == 0.0 {
        for _ in 0..n {
            positions.push(draw(&mut rng));
        }
    } else {
        let r2 = r_min * r_min;
        let mut redraws = 0usize;
        for _ in 0..n {
            loop {
                let p = draw(&mut rng);
                if positions.iter().all(|q| dist2(&p, q) >= r2) {
                    positions.push(p);
                    break;
                }
                redraws += 1;
                if redraws > MAX_REDRAWS {
                    return Err(Error::InfeasibleExclusion { r_min, redraws });
                }
            }
        }
    }

    Ok(EnsembleConfiguration { positions, kl, density, seed: Some(seed) })
}

pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

impl EnsembleConfiguration {
    /// Wraps explicit positions, e.g. a hand-placed dimer. The nominal density
    /// is N / kL³.
    pub fn from_positions(positions: Vec<[f64; 3]>, kl: f64) -> Result<Self> {
        if !(kl > 0.0) {
            return Err(Error::InvalidParameter(format!("kL must be positive, got {kl}")));
        }
        let density = positions.len() as f64 / kl.powi(3);
        Ok(Self { positions, kl, density, seed: None })
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn kl(&self) -> f64 {
        self.kl
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn seed(&self) -> Option<SeedRecord> {
        self.seed
    }

    /// Smallest pairwise distance, `None` for fewer than two atoms.
    pub fn min_pair_distance(&self) -> Option<f64> {
        let mut best = f64::INFINITY;
        for (i, a) in self.positions.iter().enumerate() {
            for b in &self.positions[i + 1..] {
                best = best.min(dist2(a, b));
            }
        }
        best.is_finite().then(|| best.sqrt())
    }

    /// Debug dump: one `x,y,z` line per atom.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "x,y,z")?;
        for p in &self.positions {
            writeln!(f, "{:?},{:?},{:?}", p[0], p[1], p[2])?;
        }
        f.flush()?;
        Ok(())
    }
}
