use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use raybundle::config::{Config, SCHEMA_HELP};
use raybundle::harness::{self, artifacts, RunOptions};
use raybundle::io::{load_dwi, load_mask, load_tensor_volume, read_json, save_volume, write_json};
use raybundle::surface::{export_ply, import_ply};
use raybundle::{
    add_complex_gaussian_noise, generate_phantom, simulate_dwi, voxelize, BoundaryGrid, Centerline, Error, Fiber,
    Result,
};

/// Ray-cast boundary estimation of fiber bundles in diffusion tensor volumes.
#[derive(Parser)]
#[command(name = "raybundle", version, about)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one field by dotted path, e.g. `--set ray.k=8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        Config::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the torus phantom: ground-truth tensors, mask and analytic centerline.
    Phantom {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Simulate noise-free DWI signals from a tensor volume.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add complex Gaussian noise (seed + 2 stream) at the configured SNR.
    Noise {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dwi: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a tensor per voxel.
    Fit {
        #[arg(long)]
        dwi: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track streamlines from the seed ROI and keep those joining both ROIs.
    Track {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average ROI-filtered fibers into an `n`-point centerline.
    Centerline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        fibers: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cast rays along a centerline and correct outliers.
    Boundary {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long)]
        centerline: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the lattice before outlier correction.
        #[arg(long)]
        raw_out: Option<PathBuf>,
    },
    /// Triangulate a boundary lattice into a closed PLY mesh.
    Mesh {
        #[arg(long)]
        boundary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxelize a closed mesh on the grid of an existing volume.
    Voxelize {
        #[arg(long)]
        mesh: PathBuf,
        /// Volume whose grid geometry is used.
        #[arg(long)]
        like: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dice coefficient of two masks.
    Dice { a: PathBuf, b: PathBuf },
    /// Run the whole phantom pipeline and print the report as JSON.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record per-stage wall-clock times (the report is then not reproducible).
        #[arg(long)]
        timings: bool,
    },
    /// Run the configured n × k × d × seed sweep and write CSV.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = !matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            if usage {
                eprintln!("\n{SCHEMA_HELP}");
                return ExitCode::from(1);
            }
            return ExitCode::SUCCESS;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be ≥ 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}\n\n{SCHEMA_HELP}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn stdout_write(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Phantom { cfg, out_dir } => {
            let cfg = cfg.load()?;
            let ph = generate_phantom(&cfg.phantom_spec()?)?;
            save_volume(&ph.tensors.into(), out_dir.join(artifacts::PHANTOM_TENSORS))?;
            save_volume(&ph.mask.into(), out_dir.join(artifacts::TRUTH_MASK))?;
            write_json(&ph.centerline, out_dir.join(artifacts::ANALYTIC_CENTERLINE))
        }
        Command::Simulate { cfg, tensors, out } => {
            let cfg = cfg.load()?;
            let v = load_tensor_volume::<f64>(&tensors)?;
            save_volume(&simulate_dwi(&v, &cfg.phantom.acquisition()?)?.into(), out)
        }
        Command::Noise { cfg, dwi, out } => {
            let cfg = cfg.load()?;
            let d = load_dwi::<f64>(&dwi)?;
            let d = match cfg.phantom.snr {
                Some(snr) => add_complex_gaussian_noise(&d, snr, cfg.noise_seed())?,
                None => d,
            };
            save_volume(&d.into(), out)
        }
        Command::Fit { dwi, out } => {
            let (v, clamped) = harness::fit_dwi(&load_dwi::<f64>(&dwi)?)?;
            eprintln!("clamped signals: {clamped}");
            save_volume(&v.into(), out)
        }
        Command::Track { cfg, tensors, out } => {
            let cfg = cfg.load()?;
            let b = harness::track_bundle(&load_tensor_volume(&tensors)?, &cfg)?;
            eprintln!("seeds: {}, kept fibers: {}", b.seeds, b.kept.len());
            write_json(&b.kept, out)
        }
        Command::Centerline { cfg, fibers, out } => {
            let cfg = cfg.load()?;
            let fibers: Vec<Fiber<f64>> = read_json(&fibers)?;
            write_json(&harness::bundle_centerline(&fibers, &cfg)?, out)
        }
        Command::Boundary {
            cfg,
            tensors,
            centerline,
            out,
            raw_out,
        } => {
            let cfg = cfg.load()?;
            let c: Centerline<f64> = read_json(&centerline)?;
            let (raw, grid) = harness::boundary_from_centerline(&load_tensor_volume(&tensors)?, &c, &cfg)?;
            if let Some(p) = raw_out {
                write_json(&raw, p)?;
            }
            write_json(&grid, out)
        }
        Command::Mesh { boundary, out } => {
            let grid: BoundaryGrid<f64> = read_json(&boundary)?;
            export_ply(&raybundle::triangulate(&grid)?, out)
        }
        Command::Voxelize { mesh, like, out } => {
            let header = raybundle::io::read_header(&like)?;
            let m = import_ply::<f64>(&mesh)?;
            save_volume(&voxelize(&m, &header.geometry()?)?.into(), out)
        }
        Command::Dice { a, b } => {
            let d = harness::dice(&load_mask::<f64>(&a)?, &load_mask::<f64>(&b)?)?;
            stdout_write(&format!("{d}\n"))
        }
        Command::Pipeline { cfg, out, timings } => {
            let cfg = cfg.load()?;
            let report = harness::run_pipeline_with(&cfg, &RunOptions { timings })?;
            let text = harness::report_json(&report)?;
            if let Some(p) = out {
                write_text(&p, &text)?;
            }
            stdout_write(&text)
        }
        Command::Sweep { cfg, out } => {
            let cfg = cfg.load()?;
            let result = harness::sweep(&cfg)?;
            let mut buf = Vec::new();
            result.write_csv(&mut buf)?;
            let text = String::from_utf8(buf).expect("csv output is UTF-8");
            match out {
                Some(p) => write_text(&p, &text),
                None => stdout_write(&text),
            }
        }
    }
}
