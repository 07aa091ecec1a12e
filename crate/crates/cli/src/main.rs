use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use curvetrack::pipeline::{self, RunConfig, SynthConfig};
use curvetrack::{io, Error, FlowParams, ScalarField};

/// Tracks closed interfaces through 2D image sequences.
#[derive(Parser)]
#[command(name = "curvetrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic CT-like sequence with ground-truth masks.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dense Horn-Schunck flow between two frames.
    Flow {
        #[arg(long)]
        prev: PathBuf,
        #[arg(long)]
        next: PathBuf,
        #[arg(long, default_value_t = 7.0)]
        alpha: f64,
        #[arg(long, default_value_t = 500)]
        iterations: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        out: PathBuf,
        /// Optional flow-magnitude PGM for inspection.
        #[arg(long)]
        magnitude: Option<PathBuf>,
    },
    /// Track the interface through a sequence.
    Track {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a track output directory against synth ground truth.
    Eval {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = pipeline::DEFAULT_EVAL_BAND)]
        band: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run deterministic and stochastic tracking and compare their errors.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = pipeline::DEFAULT_EVAL_BAND)]
        band: f64,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parameter(_) => 2,
        Error::Degenerate(_) | Error::Cfl { .. } | Error::FilterDegeneracy { .. } => 3,
        Error::Io { .. } | Error::Decode { .. } => 4,
        Error::Internal(_) => 1,
    }
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn load_run_config(path: &Path, seed: Option<u64>, workers: Option<usize>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.filter.master_seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg: SynthConfig = load_json(&config)?;
            let manifest = pipeline::run_synth(&cfg, &out)?;
            eprintln!("wrote {} frames to {}", manifest.frames.len(), out.display());
        }
        Command::Flow { prev, next, alpha, iterations, tolerance, out, magnitude } => {
            let params = FlowParams { alpha, max_iterations: iterations, tolerance, ..FlowParams::default() };
            let a = io::load_image(&prev)?;
            let b = io::load_image(&next)?;
            let flow = curvetrack::flow::horn_schunck(&a, &b, &params)?;
            io::save_vector_ctf(&flow, &out)?;
            if let Some(path) = magnitude {
                let mag = flow.magnitude();
                let peak = mag.max().max(1e-12);
                let scaled: ScalarField = mag.map(|m| m / peak);
                io::save_pgm(&scaled, &path, io::BitDepth::Eight)?;
            }
        }
        Command::Track { config, seed, workers, out } => {
            let cfg = load_run_config(&config, seed, workers)?;
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| Error::Parameter("no output directory given".into()))?;
            let result = pipeline::run_track(&cfg, &out)?;
            eprintln!("tracked {} frames into {}", result.phi.len(), out.display());
        }
        Command::Eval { estimate, truth, band, out } => {
            let summary = pipeline::run_eval(&estimate, &truth, band, &out)?;
            print_json(&summary);
        }
        Command::Compare { config, seed, workers, band } => {
            let cfg = load_run_config(&config, seed, workers)?;
            let pipeline::FrameSource::Manifest { manifest } = &cfg.input else {
                return Err(Error::Parameter("compare needs a synth manifest as input".into()));
            };
            cfg.resolve()?;
            let (images, truth, _) = pipeline::load_sequence(manifest)?;
            let (report, _, _) = pipeline::compare_modes(&images, &truth, &cfg.track_options(), band)?;
            print_json(&report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
