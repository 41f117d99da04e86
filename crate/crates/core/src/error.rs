use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("exclusion radius r_min = {r_min} is infeasible: no valid configuration after {redraws} redraws")]
    InfeasibleExclusion { r_min: f64, redraws: usize },

    #[error("atoms {i} and {j} coincide")]
    CoincidentAtoms { i: usize, j: usize },

    #[error("evolution matrix is ill-conditioned (1-norm condition estimate {0:.3e})")]
    IllConditioned(f64),

    #[error("driven integration diverged: |b| = {norm:.3e} exceeds 10x the steady-state norm {reference:.3e}")]
    Diverged { norm: f64, reference: f64 },

    #[error("spectrum window [{start}, {end}] lies outside the sampled span [{t0}, {t1}]")]
    WindowOutOfRange { start: f64, end: f64, t0: f64, t1: f64 },

    #[error("series `{0}` is a per-realization quantity; average over realizations before taking logs or ratios")]
    NotAveraged(String),

    #[error("all {0} realizations were excluded")]
    AllExcluded(usize),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
