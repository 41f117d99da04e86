use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use subrad::diffusion::{estimate, DEFAULT_EXTRAPOLATION};
use subrad::dimer::{resonant_pairs, DEFAULT_X_MAX};
use subrad::harness::{preset, run, RunConfig, Scale};
use subrad::output::write_run;

#[derive(Parser)]
#[command(name = "subrad", version, about = "Coupled-dipole simulation of subradiance in dilute atomic clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo campaign from a config file or a figure preset.
    Run {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// fig1 … fig7
        #[arg(long, requires = "scale")]
        preset: Option<String>,
        /// paper | desk
        #[arg(long)]
        scale: Option<String>,
        #[arg(long)]
        realizations: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory; presets write one subdirectory per configuration.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Intensity fraction that defines τ*.
        #[arg(long)]
        threshold: Option<f64>,
        /// Only run the preset configuration with this name.
        #[arg(long)]
        only: Option<String>,
        /// Print the resolved configurations as TOML and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Table of resonant pair separations for a detuning, as CSV.
    Dimer {
        #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
        detuning: f64,
        #[arg(long, default_value_t = DEFAULT_X_MAX)]
        x_max: f64,
    },
    /// Optical depth and diffusive lifetime estimates, as JSON.
    Theory {
        #[arg(long, default_value_t = 0.01)]
        density: f64,
        #[arg(long)]
        kl: f64,
        #[arg(long, default_value_t = DEFAULT_EXTRAPOLATION)]
        extrapolation: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> subrad::Result<()> {
    match cli.command {
        Command::Run { config, preset: name, scale, realizations, seed, workers, out_dir, threshold, only, dry_run } => {
            let (mut configs, from_preset) = match (config, name) {
                (Some(path), None) => (vec![RunConfig::load(&path)?], false),
                (None, Some(name)) => {
                    let scale: Scale = scale.as_deref().unwrap_or("desk").parse()?;
                    (preset(&name, scale)?, true)
                }
                _ => return Err(subrad::Error::Config("give either --config FILE or --preset NAME --scale desk|paper".into())),
            };
            if let Some(only) = only {
                configs.retain(|c| c.name == only);
                if configs.is_empty() {
                    return Err(subrad::Error::Config(format!("no configuration named `{only}`")));
                }
            }
            for c in &mut configs {
                if let Some(n) = realizations {
                    c.realizations = n;
                }
                if let Some(s) = seed {
                    c.seed = s;
                }
                if let Some(w) = workers {
                    c.workers = w;
                }
                if let Some(t) = threshold {
                    c.threshold = t;
                }
                if let Some(d) = &out_dir {
                    let d = if from_preset { d.join(&c.name) } else { d.clone() };
                    c.out_dir = Some(d.to_string_lossy().into_owned());
                }
                c.validate()?;
            }
            if dry_run {
                for c in &configs {
                    println!("{}", c.to_toml());
                }
                return Ok(());
            }
            for c in &configs {
                info!("{}: N = {}, {} realizations, {} worker(s)", c.name, c.atom_count(), c.realizations, c.workers);
                let result = run(c)?;
                let dir = c.resolved_out_dir();
                write_run(&result, &dir)?;
                let tau = match result.tau_star {
                    subrad::harness::TauStar::Reached { t_star, tau } => format!("τ* = {tau:.3} at t* = {t_star:.2}"),
                    subrad::harness::TauStar::NotReached { final_ratio } => format!("τ* not reached (I/I0 = {final_ratio:.3e})"),
                };
                println!(
                    "{}: {} of {} realizations, {tau}, {:.1} s -> {}",
                    c.name,
                    result.included,
                    result.requested,
                    result.wall_time,
                    dir.display()
                );
            }
            Ok(())
        }
        Command::Dimer { detuning, x_max } => {
            println!("branch,epsilon,p,q,x,shift,rate,lifetime");
            for r in resonant_pairs(detuning, x_max)? {
                println!(
                    "{},{},{},{},{:.10},{:.10},{:.10},{:.10}",
                    r.branch.label(),
                    r.branch.epsilon,
                    r.branch.p,
                    r.branch.q,
                    r.x,
                    r.shift,
                    r.rate,
                    r.lifetime
                );
            }
            Ok(())
        }
        Command::Theory { density, kl, extrapolation } => {
            let e = estimate(density, kl, extrapolation)?;
            let out = serde_json::json!({
                "density": density,
                "kl": kl,
                "atoms": subrad::ensemble::atom_count(density, kl),
                "estimate": e,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
    }
}
