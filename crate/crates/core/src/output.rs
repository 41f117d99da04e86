//! Run artifacts: one CSV per observable with a metadata header, a JSON
//! metadata file and a separate timings file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::harness::AggregateResult;
use crate::{Error, Result};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

fn header(w: &mut impl Write, r: &AggregateResult, what: &str) -> Result<()> {
    writeln!(w, "# subrad {CODE_VERSION} {what}")?;
    writeln!(w, "# fingerprint {}", r.fingerprint)?;
    writeln!(w, "# realizations {} of {} (seed {})", r.included, r.requested, r.config.seed)?;
    let mut portable = r.config.clone();
    portable.workers = 0;
    portable.out_dir = None;
    writeln!(w, "# config {}", serde_json::to_string(&portable)?)?;
    Ok(())
}

fn csv(dir: &Path, name: &str, r: &AggregateResult, what: &str, columns: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    header(&mut w, r, what)?;
    writeln!(w, "{}", columns.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip form; exponent notation outside [1e-4, 1e15).
fn num(x: f64) -> String {
    if !x.is_finite() {
        String::new()
    } else if x == 0.0 || (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn tag(x: f64) -> String {
    format!("{x}").replace('.', "p")
}

#[derive(Serialize)]
struct Timings {
    wall_seconds: f64,
    summed_stage_seconds: crate::harness::StageTimes,
    workers: usize,
}

/// Writes every artifact of a finished run into `dir`, creating it if needed.
pub fn write_run(r: &AggregateResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let t = &r.intensity.times;
    let i0 = r.intensity.values[0];
    csv(
        dir,
        "intensity.csv",
        r,
        "disorder-averaged total intensity b†Gb and population Σ|b|²",
        &["t", "intensity", "normalized", "population"],
        (0..t.len()).map(|j| {
            vec![num(t[j]), num(r.intensity.values[j]), num(r.intensity.values[j] / i0), num(r.population.values[j])]
        }),
    )?;
    csv(
        dir,
        "rate.csv",
        r,
        &format!("instantaneous decay rate ({:?}, width {})", r.rate.estimator, r.rate.width),
        &["t", "gamma", "tau", "one_sided"],
        (0..r.rate.times.len()).map(|j| {
            vec![num(r.rate.times[j]), num(r.rate.gamma[j]), num(r.rate.tau[j]), (r.rate.one_sided[j] as u8).to_string()]
        }),
    )?;
    if let Some(p) = &r.polarization {
        csv(
            dir,
            "polarization.csv",
            r,
            "circular channels at the observation direction; DOC > 0 for the drive helicity",
            &["t", "I_co", "I_counter", "DOC"],
            (0..p.times.len()).map(|j| {
                vec![num(p.times[j]), num(p.co[j]), num(p.counter[j]), p.doc.get(j).map(|d| num(*d)).unwrap_or_default()]
            }),
        )?;
    }
    for s in &r.spectra {
        csv(
            dir,
            &format!("spectrum_t{}.csv", tag(s.window.center)),
            r,
            &format!("spectrum, window centre {} width {}", s.window.center, s.window.width),
            &["detuning", "power"],
            s.spectrum.detuning.iter().zip(&s.spectrum.power).map(|(d, p)| vec![num(*d), num(*p)]),
        )?;
    }
    for s in &r.slab_maps {
        let m = &s.map;
        let centers = m.bin_centers();
        csv(
            dir,
            &format!("slab_t{}.csv", tag(s.delay)),
            r,
            &format!("excitation in the slab y = kL/2 ± {}, delay {}", r.config.slab_width / 2.0, s.delay),
            &["x", "z", "excitation"],
            (0..m.bins).flat_map(|a| {
                let c = &centers;
                (0..m.bins).map(move |b| vec![num(c[a]), num(c[b]), num(m.get(a, b))])
            }),
        )?;
    }

    let mut portable = r.config.clone();
    portable.workers = 0;
    portable.out_dir = None;
    let meta = json!({
        "code_version": CODE_VERSION,
        "fingerprint": r.fingerprint,
        "config": portable,
        "seeds": { "master": r.config.seed, "indices": [0, r.requested] },
        "atoms": r.atoms,
        "requested": r.requested,
        "included": r.included,
        "excluded": r.excluded,
        "rate": { "estimator": r.rate.estimator, "width": r.rate.width, "cutoff": r.rate.cutoff },
        "doc_valid_samples": r.polarization.as_ref().map(|p| p.doc.len()),
        "tau_star": r.tau_star,
        "diffusion": r.diffusion,
        "resonant_pairs": r.resonant_pairs,
        "energy_increases": r.energy_increases,
        "step_fallbacks": r.step_fallbacks,
    });
    let mut w = BufWriter::new(File::create(dir.join("metadata.json"))?);
    serde_json::to_writer_pretty(&mut w, &meta)?;
    writeln!(w)?;
    w.flush()?;

    let timings = Timings { wall_seconds: r.wall_time, summed_stage_seconds: r.stage_times.clone(), workers: r.config.workers };
    std::fs::write(dir.join("timings.json"), serde_json::to_string_pretty(&timings)? + "\n")?;
    Ok(())
}

/// A CSV written by [`write_run`]: header comments and numeric columns.
#[derive(Debug, Clone)]
pub struct Table {
    pub comments: Vec<String>,
    pub columns: BTreeMap<String, Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let f = BufReader::new(File::open(path)?);
        let mut comments = Vec::new();
        let mut names: Vec<String> = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for line in f.lines() {
            let line = line?;
            if let Some(c) = line.strip_prefix('#') {
                comments.push(c.trim().to_string());
            } else if names.is_empty() {
                names = line.split(',').map(str::to_string).collect();
                cols = vec![Vec::new(); names.len()];
            } else if !line.is_empty() {
                for (j, cell) in line.split(',').enumerate() {
                    let v = if cell.is_empty() {
                        f64::NAN
                    } else {
                        cell.parse().map_err(|_| Error::Config(format!("{}: bad number `{cell}`", path.display())))?
                    };
                    cols[j].push(v);
                }
            }
        }
        Ok(Self { comments, columns: names.into_iter().zip(cols).collect() })
    }

    pub fn column(&self, name: &str) -> &[f64] {
        self.columns.get(name).map(Vec::as_slice).unwrap_or_else(|| panic!("no column `{name}`"))
    }

    pub fn fingerprint(&self) -> Option<&str> {
        self.comments.iter().find_map(|c| c.strip_prefix("fingerprint "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run, RunConfig};

    #[test]
    fn artifacts_roundtrip() {
        let mut c = RunConfig::new("io", 10.0, 2);
        c.t_max = 40.0;
        c.spectrum_centers = vec![20.0];
        c.slab_delays = vec![5.0];
        let r = run(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run(&r, dir.path()).unwrap();
        let t = Table::read(&dir.path().join("intensity.csv")).unwrap();
        assert_eq!(t.fingerprint(), Some(c.fingerprint().as_str()));
        assert_eq!(t.column("intensity"), r.intensity.values.as_slice());
        assert_eq!(t.column("normalized")[0], 1.0);
        for f in ["rate.csv", "polarization.csv", "spectrum_t20.csv", "slab_t5.csv", "metadata.json", "timings.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
        assert_eq!(meta["fingerprint"], c.fingerprint());
        assert_eq!(meta["included"], 2);
    }
}
