use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use bendhom::app::{RunConfig, Session};
use bendhom::cell_inner::QhomCache;
use clap::{Parser, Subcommand};

/// Effective bending energies of plates with two-scale periodic microstructure.
#[derive(Debug, Parser)]
#[command(name = "bendhom", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `out_dir` of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Solver tolerance; overrides `solver.rtol` of the config.
    #[arg(long, global = true)]
    rtol: Option<f64>,

    /// Do not read or write the homogenized-tensor cache.
    #[arg(long, global = true)]
    no_cache: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the effective bending form.
    Homogenize,
    /// Bending energy of the configured surface.
    Energy,
    /// Recovery-sequence study of the scaled 3D energies.
    GammaCheck,
    /// Effective forms under grid refinement.
    Convergence,
    /// Check the configuration without solving.
    Validate,
}

fn session(cli: &Cli) -> anyhow::Result<Session> {
    let path = cli.config.as_ref().context("--config is required")?;
    let mut config = RunConfig::from_file(path)?;
    if let Some(out) = &cli.out {
        config.out_dir = std::env::current_dir()?.join(out);
    }
    if let Some(rtol) = cli.rtol {
        config.solver.rtol = rtol;
    }
    let cache = (!cli.no_cache).then(QhomCache::from_env);
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    Ok(Session::new(config, &base, cache)?)
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let s = session(cli)?;
    let out = s.out_dir();
    let ok = match cli.command {
        Command::Homogenize => {
            let (form, _) = s.homogenize()?;
            println!("regime {}", form.regime);
            println!("effective form (fjm-normalized, coordinates a11, a22, sqrt2 a12):");
            for i in 0..3 {
                let m = &form.fjm.0;
                println!("  {:>22.15e} {:>22.15e} {:>22.15e}", m[(i, 0)], m[(i, 1)], m[(i, 2)]);
            }
            true
        }
        Command::Energy => {
            let (e, _) = s.energy()?;
            println!("bending energy {e:.15e}");
            true
        }
        Command::GammaCheck => {
            let (study, _) = s.gamma_check()?;
            println!("{:>10} {:>12} {:>16} {:>16} {:>12}", "h", "epsilon", "E/h^2", "limit", "gap");
            for r in &study.rows {
                println!(
                    "{:>10.3e} {:>12.4e} {:>16.10} {:>16.10} {:>12.4e}",
                    r.h, r.epsilon, r.energy_over_h2, r.limit, r.gap
                );
            }
            if !study.monotone {
                println!("note: the gap column is not monotone");
            }
            true
        }
        Command::Convergence => {
            let (report, _) = s.convergence()?;
            for r in &report.rows {
                println!("ny {:>4} nx3 {:>3}  q11 {:.15e}", r.ny, r.nx3, r.form.fjm.0[(0, 0)]);
            }
            if let Some(p) = report.observed_order {
                println!("observed order on q11: {p:.3}");
            }
            match report.nested_monotone {
                Some(true) => println!("raw infima non-increasing under nested refinement"),
                Some(false) => println!("FAILED: a raw infimum increased under nested refinement"),
                None => println!("grids are not nested for this field; monotonicity not checked"),
            }
            report.nested_monotone != Some(false)
        }
        Command::Validate => {
            s.validate()?;
            println!("configuration is valid");
            true
        }
    };
    println!("outputs written to {}", out.display());
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
