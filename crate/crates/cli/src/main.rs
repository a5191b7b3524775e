use clap::{Args, Parser, Subcommand};
use fvsim::config::{Mode, RunConfig};
use fvsim::experiment::{run_measurement, run_psf, run_single_image, run_sweep, ExperimentError};
use std::path::PathBuf;
use std::process::ExitCode;

/// Monte Carlo focus-variation microscope simulator.
#[derive(Parser)]
#[command(name = "fvsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a single detector image.
    Render(Common),
    /// Full-factorial sweep over ray counts and roughness.
    Sweep(Common),
    /// Acquire a z-stack, reconstruct and compare the topography.
    Measure(Common),
    /// Blur an exported image with a point spread function.
    Psf(Common),
    /// Check a configuration without running anything.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `render.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn fail(e: ExperimentError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    let (mode, common) = match &cli.command {
        Command::Render(c) => (Some(Mode::Render), c),
        Command::Sweep(c) => (Some(Mode::Sweep), c),
        Command::Measure(c) => (Some(Mode::Measure), c),
        Command::Psf(c) => (Some(Mode::Psf), c),
        Command::Validate(c) => (None, c),
    };
    let mut cfg = match RunConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => return fail(e.into()),
    };
    if let Some(seed) = common.seed {
        cfg.render.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    if let Some(n) = common.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error: --threads: cannot start {n} worker threads");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    let out = cfg.output.dir.clone();
    let result = match mode {
        None => cfg.validate(Mode::Render).map(|_| println!("{}: ok", common.config.display())).map_err(ExperimentError::from),
        Some(Mode::Render) => run_single_image(&cfg, &out).map(|r| {
            println!(
                "{}: {} rays, {} detected, {:.3e} rays/s",
                r.image_path.display(),
                r.stats.rays_emitted,
                r.stats.rays_detected,
                r.stats.rays_per_second
            )
        }),
        Some(Mode::Sweep) => run_sweep(&cfg, &out).map(|r| {
            for c in &r.cells {
                match (&c.error, c.noise_summary) {
                    (Some(e), _) => println!("n_rays {} g {}: failed: {e}", c.n_rays, c.g),
                    (None, Some(s)) => println!("n_rays {} g {}: noise {s:.5}", c.n_rays, c.g),
                    _ => {}
                }
            }
            for w in &r.warnings {
                println!("warning: {w}");
            }
        }),
        Some(Mode::Measure) => run_measurement(&cfg, &out).map(|r| {
            println!("{} images, {} valid pixels", r.images, r.valid_pixels);
            match (&r.comparison, &r.notice) {
                (Some(c), _) => println!("rms deviation {:.4} µm, max {:.4} µm", c.rms_deviation, c.max_deviation),
                (None, Some(n)) => println!("notice: {n}"),
                _ => {}
            }
        }),
        Some(Mode::Psf) => run_psf(&cfg, &out).map(|_| println!("{}", out.join("psf.png").display())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
