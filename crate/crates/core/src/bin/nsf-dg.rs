use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nsf_dg::scenario::{self, RbConfig, RunSummary, SweepParam};
use nsf_dg::toy_thermo::{self, Oscillator, ToyState};
use nsf_dg::{Error, Execution};

/// Thread count for the parallel assembly pool.
const THREADS_ENV: &str = "NSF_DG_THREADS";

#[derive(Parser)]
#[command(name = "nsf-dg", version, about = "Energy-conserving DG solver for compressible Rayleigh-Bénard convection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write the diagnostics CSV (and optional VTK snapshots).
    Run {
        config: PathBuf,
        /// Output directory, overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
        /// Run the Ra = 2000..6000 sweep varying one parameter.
        #[arg(long = "ra-sweep", value_name = "re|m|z|pr")]
        ra_sweep: Option<String>,
        /// Single-threaded, fixed-order assembly for bitwise-reproducible output.
        #[arg(long)]
        deterministic: bool,
    },
    /// Validate a config and print the derived numbers.
    Check { config: PathBuf },
    /// Integrate one of the finite-dimensional thermodynamic test systems.
    Toy {
        system: ToyKind,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// CSV file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ToyKind {
    /// Damped oscillator, adiabatically closed.
    Oscillator,
    /// Damped oscillator exchanging heat with a reservoir at T_H = 2.
    Heated,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io(_) | Error::Csv(_) => 4,
        _ => 3,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn print_summary(label: &str, cfg: &RbConfig, s: &RunSummary, dir: &Path) {
    let max_abs = |f: fn(&nsf_dg::diagnostics::DiagRecord) -> f64| s.records.iter().map(f).fold(0.0f64, |a, v| a.max(v.abs()));
    let last = s.records.last().expect("a run records its initial state");
    let min_margin = s.records[1..].iter().map(|r| r.min_second_law_margin).fold(f64::INFINITY, f64::min);
    println!("{label}: Ra = {:.1}, {} steps ({} retries) to t = {}", scenario::rayleigh_number(cfg), s.steps, s.retries, last.time);
    println!("  max |energy drift| = {:.3e}  (relative {:.3e})", max_abs(|r| r.energy_drift), max_abs(|r| r.energy_drift) / s.records[0].total_energy.abs());
    println!("  max |mass drift|   = {:.3e}", max_abs(|r| r.mass_drift));
    println!("  min second-law margin = {min_margin:.3e}");
    println!("  kinetic L2: {:.6e} -> {:.6e}", s.records[0].kinetic_l2, last.kinetic_l2);
    println!("  output: {}", dir.join(&cfg.output.csv).display());
}

fn run(config: &Path, out: Option<PathBuf>, dt: Option<f64>, t_end: Option<f64>, sweep: Option<String>, deterministic: bool) -> Result<(), Error> {
    let mut cfg = RbConfig::load(config)?;
    if let Some(dt) = dt {
        cfg.time.dt = dt;
    }
    if let Some(t) = t_end {
        cfg.time.t_end = t;
    }
    let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    cfg.validate()?;
    let exec = if deterministic { Execution::Sequential } else { Execution::Parallel };
    match sweep {
        None => {
            let s = scenario::run_to_dir(&cfg, &dir, exec)?;
            print_summary("run", &cfg, &s, &dir);
        }
        Some(p) => {
            let param: SweepParam = p.parse()?;
            for (ra, c) in scenario::sweep(&cfg, param)? {
                let sub = dir.join(format!("{}_ra{}", param.name(), ra as u64));
                let s = scenario::run_to_dir(&c, &sub, exec)?;
                print_summary(&format!("sweep {} Ra={ra}", param.name()), &c, &s, &sub);
            }
        }
    }
    Ok(())
}

fn check(config: &Path) -> Result<(), Error> {
    let cfg = RbConfig::load(config)?;
    cfg.validate()?;
    println!("Ra    = {:.6}", scenario::rayleigh_number(&cfg));
    println!("Fr    = {:.6}", cfg.froude());
    println!("kappa = {:.6e}", cfg.kappa());
    println!("eta   = {:.6e}", cfg.eta());
    println!("mu    = {:.6e}", cfg.mu());
    println!("mesh  = {}x{} (h = {}), DG_{} / CG_{}", cfg.mesh.nx, cfg.mesh.ny, scenario::LZ / cfg.mesh.ny as f64, cfg.mesh.q, cfg.mesh.r);
    Ok(())
}

fn toy(kind: ToyKind, dt: f64, steps: usize, out: Option<PathBuf>) -> Result<(), Error> {
    let sys = match kind {
        ToyKind::Oscillator => Oscillator::damped(1.0, 1.0, 0.1),
        ToyKind::Heated => Oscillator::damped(1.0, 1.0, 0.1).with_relaxation(2.0, 0.5),
    };
    let init = ToyState::new(vec![1.0], vec![0.0], 0.0);
    let w: Box<dyn Write> = match &out {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    let r = toy_thermo::run_toy(&sys, init, dt, steps, w)?;
    eprintln!(
        "toy: {steps} steps, max energy balance gap {:.3e}, entropy monotone: {}",
        r.max_balance_gap, r.entropy_monotone
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = configure_threads().and_then(|_| match cli.cmd {
        Cmd::Run { config, out, dt, t_end, ra_sweep, deterministic } => run(&config, out, dt, t_end, ra_sweep, deterministic),
        Cmd::Check { config } => check(&config),
        Cmd::Toy { system, dt, steps, out } => toy(system, dt, steps, out),
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
