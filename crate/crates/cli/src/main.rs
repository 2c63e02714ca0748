use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use stfe::config::RunConfig;
use stfe::diagnostics::{touchdown_exponent, SkipReason, TouchdownResult};
use stfe::grid::{Field, Grid};
use stfe::montecarlo::{eps_sweep, run_ensemble};
use stfe::noise::{basis_eval, verify_identities, NoiseOperator, NoiseSpec};
use stfe::output::{self, fmt_f64, SNAPSHOT_MAGIC};
use stfe::stepper::{run, Problem, RunOptions};

#[derive(Parser)]
#[command(name = "stfe", version, about = "Stochastic thin-film equation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory and write its diagnostics.
    Simulate {
        config: PathBuf,
        /// Noise seed; defaults to ensemble.base_seed or 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides output.directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the ensemble for every configured eps and write moment tables.
    Ensemble {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the basis-identity residual table; fails if any residual exceeds 1e-10.
    VerifyNoise { config: PathBuf },
    /// Compare measured and analytic decay rates of small Fourier perturbations.
    DispersionTest { config: PathBuf },
    /// Fit touchdown exponents in a snapshot file or in a simulated trajectory.
    ContactAngle {
        input: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the ensemble across model.eps_list with shared seeds.
    EpsSweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const IDENTITY_TOL: f64 = 1e-10;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Simulate { config, seed, out } => simulate(&config, seed, out),
        Command::Ensemble { config, out } => ensemble(&config, out),
        Command::VerifyNoise { config } => verify_noise(&config),
        Command::DispersionTest { config } => dispersion(&config),
        Command::ContactAngle { input, threshold, seed } => contact_angle(&input, threshold, seed),
        Command::EpsSweep { config, out } => sweep(&config, out),
    }
}

fn load(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn out_dir(cfg: &RunConfig, over: Option<PathBuf>) -> Result<PathBuf> {
    let dir = over.unwrap_or_else(|| cfg.output.directory.clone());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn default_seed(cfg: &RunConfig, seed: Option<u64>) -> u64 {
    seed.or(cfg.ensemble.as_ref().map(|e| e.base_seed)).unwrap_or(0)
}

fn simulate(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = load(path)?;
    let problem = cfg.problem(cfg.eps()?)?;
    let u0 = cfg.initial(&problem.params)?;
    let seed = default_seed(&cfg, seed);
    let tr = run(u0, &cfg.run_options(), &problem, &cfg.stepper_config()?, seed)?;
    let dir = out_dir(&cfg, out)?;
    let mut w = create(&dir.join("trajectory.csv"))?;
    output::write_trajectory_csv(&mut w, &tr)?;
    w.flush()?;
    let mut w = create(&dir.join("trajectory_meta.csv"))?;
    output::write_trajectory_meta(&mut w, &tr)?;
    w.flush()?;
    if cfg.output.snapshots {
        let mut w = create(&dir.join("snapshots.bin"))?;
        output::write_snapshots(&mut w, problem.grid.length(), &tr.snapshots)?;
        w.flush()?;
    }
    println!(
        "status {} records {} rejections {}",
        tr.status.as_str(),
        tr.records.len(),
        tr.rejections()
    );
    Ok(ExitCode::SUCCESS)
}

fn ensemble(path: &Path, out: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = load(path)?;
    let ec = cfg.ensemble_config()?;
    let stepper = cfg.stepper_config()?;
    let options = cfg.run_options();
    let mut all = Vec::new();
    for &eps in &ec.eps_list {
        let problem = cfg.problem(eps)?;
        let u0 = cfg.initial(&problem.params)?;
        info!("ensemble eps = {eps:e}, {} samples", ec.n_samples);
        let stats = run_ensemble(&ec, &problem, &stepper, &options, &u0)?;
        if !stats.valid {
            eprintln!(
                "warning: eps = {eps:e}: {} of {} samples failed, results invalid",
                stats.n_failed, stats.n_requested
            );
        }
        all.push(stats);
    }
    let dir = out_dir(&cfg, out)?;
    let mut w = create(&dir.join("ensemble.csv"))?;
    output::write_ensemble_csv(&mut w, &all)?;
    w.flush()?;
    if !ec.phi_modes.is_empty() {
        let mut w = create(&dir.join("martingale.csv"))?;
        output::write_martingale_csv(&mut w, &all)?;
        w.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn verify_noise(path: &Path) -> Result<ExitCode> {
    let cfg = load(path)?;
    let grid = cfg.grid()?;
    let spec = cfg.noise_spec()?;
    let report = verify_identities(&spec, &grid);
    println!("id,expected,max_abs_residual,residual,description");
    for r in &report.rows {
        println!(
            "{},{},{},{},{}",
            r.id,
            fmt_f64(r.expected),
            fmt_f64(r.max_abs_residual),
            fmt_f64(r.residual),
            r.description
        );
    }
    // discretization error of the direct-sum correction operator, reported apart
    if let Some((e1, e2)) = correction_errors(&spec, &grid)? {
        println!(
            "# correction operator vs C_Strat d2: error N={} {}, N={} {}, ratio {}",
            grid.n_cells(),
            fmt_f64(e1),
            2 * grid.n_cells(),
            fmt_f64(e2),
            fmt_f64(e1 / e2)
        );
    }
    if report.passes(IDENTITY_TOL) {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("identity residual {:e} exceeds {IDENTITY_TOL:e}", report.max_residual());
        Ok(ExitCode::FAILURE)
    }
}

fn correction_errors(spec: &NoiseSpec, grid: &Grid) -> Result<Option<(f64, f64)>> {
    if spec.is_silent() {
        return Ok(None);
    }
    let err = |g: Grid| -> Result<f64> {
        let op = NoiseOperator::new(spec.clone(), g)?;
        let l = g.length();
        let u = g.sample(|x| 1.0 + 0.3 * (2.0 * std::f64::consts::PI * x / l).sin());
        let direct = op.strat_correction_operator(&u);
        let d2 = g.d2(&u).map(|v| op.c_strat() * v);
        Ok(direct.max_abs_diff(&d2))
    };
    let fine = Grid::new(grid.length(), 2 * grid.n_cells())?;
    Ok(Some((err(*grid)?, err(fine)?)))
}

fn dispersion(path: &Path) -> Result<ExitCode> {
    let cfg = load(path)?;
    let grid = cfg.grid()?;
    let section = cfg.dispersion.clone().unwrap_or(stfe::config::DispersionSection {
        modes: vec![1],
        amplitude: 1e-4,
    });
    let params = cfg.params(0.0)?;
    let problem = Problem::new(grid, NoiseSpec::silent(0), params)?;
    let stepper = cfg.stepper_config()?;
    let horizon = cfg.stepper.horizon;
    if !(horizon > 0.0) {
        bail!("dispersion-test needs stepper.horizon > 0");
    }
    let ubar = 1.0;
    println!("mode,measured_rate,analytic_rate,rel_error");
    for &k in &section.modes {
        let g = basis_eval(k, &grid)?;
        let u0 = g.map(|v| ubar + section.amplitude * v);
        let tr = run(u0, &RunOptions::new(horizon, 1).with_snapshots(), &problem, &stepper, 0)?;
        let a0 = grid.inner(&tr.snapshots[0].1, &g);
        let a1 = grid.inner(&tr.snapshots[1].1, &g);
        let measured = -(a1 / a0).ln() / horizon;
        let wave = 2.0 * std::f64::consts::PI * k.unsigned_abs() as f64 / grid.length();
        let analytic = ubar * ubar * wave.powi(4);
        println!(
            "{k},{},{},{}",
            fmt_f64(measured),
            fmt_f64(analytic),
            fmt_f64((measured - analytic) / analytic)
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn is_snapshot(path: &Path) -> Result<bool> {
    let mut head = [0u8; 5];
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let n = f.read(&mut head)?;
    Ok(n == 5 && &head == SNAPSHOT_MAGIC)
}

fn contact_angle(input: &Path, threshold: Option<f64>, seed: Option<u64>) -> Result<ExitCode> {
    let (grid, snaps, threshold) = if is_snapshot(input)? {
        let file = output::read_snapshots(File::open(input)?)?;
        let grid = Grid::new(file.length, file.n_cells)?;
        let Some(th) = threshold else {
            bail!("--threshold is required for snapshot input");
        };
        (grid, file.snapshots, th)
    } else {
        let cfg = load(input)?;
        let problem = cfg.problem(cfg.eps()?)?;
        let u0 = cfg.initial(&problem.params)?;
        let th = threshold
            .or(cfg.touchdown.as_ref().map(|t| t.threshold))
            .or_else(|| (problem.params.eps > 0.0).then(|| 2.0 * problem.params.initial_floor()));
        let Some(th) = th else {
            bail!("no touchdown threshold: pass --threshold or set [touchdown] threshold");
        };
        let opts = cfg.run_options().with_snapshots();
        let tr = run(u0, &opts, &problem, &cfg.stepper_config()?, default_seed(&cfg, seed))?;
        (problem.grid, tr.snapshots, th)
    };
    println!("t,location,u_min,exponent,r_squared,n_points,status");
    for (t, u) in &snaps {
        report_touchdown(*t, u, &grid, threshold)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn report_touchdown(t: f64, u: &Field, grid: &Grid, threshold: f64) -> Result<()> {
    for r in touchdown_exponent(u, grid, threshold)? {
        match r {
            TouchdownResult::Fit(f) => println!(
                "{},{},{},{},{},{},fit",
                fmt_f64(t),
                fmt_f64(f.location),
                fmt_f64(f.u_min),
                fmt_f64(f.exponent),
                fmt_f64(f.r_squared),
                f.n_points
            ),
            TouchdownResult::Skipped {
                location,
                u_min,
                n_points,
                reason,
            } => {
                let why = match reason {
                    SkipReason::TooFewPoints => "skipped_window".to_string(),
                    SkipReason::Plateau { width } => format!("skipped_plateau_{width}"),
                };
                println!(
                    "{},{},{},,,{},{why}",
                    fmt_f64(t),
                    fmt_f64(location),
                    fmt_f64(u_min),
                    n_points
                );
            }
        }
    }
    Ok(())
}

fn sweep(path: &Path, out: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = load(path)?;
    let ec = cfg.ensemble_config()?;
    let base = cfg.problem(ec.eps_list[0])?;
    let report = eps_sweep(&ec, &base, &cfg.stepper_config()?, &cfg.run_options(), |p| cfg.initial(p))?;
    let dir = out_dir(&cfg, out)?;
    let mut w = create(&dir.join("sweep.csv"))?;
    output::write_sweep_csv(&mut w, &report)?;
    w.flush()?;
    let mut w = create(&dir.join("sweep_spread.csv"))?;
    output::write_spread_csv(&mut w, &report)?;
    w.flush()?;
    for s in report.spreads.iter().filter(|s| s.flagged) {
        eprintln!(
            "warning: {} (q = {}) varies by a factor {:.3} across the sweep",
            s.statistic, s.q, s.ratio
        );
    }
    Ok(ExitCode::SUCCESS)
}
