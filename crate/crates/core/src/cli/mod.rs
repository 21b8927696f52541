//! The `homtwin` command line.
//!
//! Exit codes: 0 success, 1 input or configuration error, 2 runtime or fit
//! failure.

mod commands;
mod config;
mod formats;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    calibrate, cmd_image, cmd_process, cmd_scan, cmd_simulate, default_delays_ps, Calibration, ImageOutput,
    ImageReport, ScanOutput, ScanReport, SimulateOutput,
};
pub use config::{AnalysisSettings, Boundary, ModelSettings, RunConfig, ScanSettings, SourceSettings};
pub use formats::{
    format_events, read_truth, FrameHeader, FrameReader, FrameWriter, TruthWriter, EVENTS_SCHEMA,
    HEADER_LEN, MAGIC, VERSION,
};

use crate::frame_proc::Metric;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "homtwin", version, about = "HOM interference camera twin: simulate, process, scan, image")]
pub struct Cli {
    /// Run configuration file (`section.key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads, 0 = one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Distance used by the close-pair rejection rule.
    #[arg(long, global = true, value_parser = ["chebyshev", "euclidean"])]
    pub metric: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write gated frames and a truth sidecar.
    Simulate {
        #[arg(long, default_value_t = 1000)]
        frames: u64,
        /// Optical delay, ps.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        delay: f64,
    },
    /// Detect flashes and preselect two-photon frames in a frame file.
    Process {
        /// `HOMF` frame file.
        input: PathBuf,
    },
    /// Delay scan: simulate, process and tally per delay, then fit the dip.
    Scan {
        /// Comma-separated delays in ps (default: evenly spaced over the dip).
        #[arg(long, allow_hyphen_values = true)]
        delays: Option<String>,
        /// Gates per delay (default: `scan.frames_per_delay`).
        #[arg(long)]
        frames: Option<u64>,
    },
    /// Heralded coincidence image and two-lobe mode fit.
    Image {
        #[arg(long, default_value_t = 5100)]
        pairs: usize,
    },
    /// Print the effective configuration.
    Config,
}

fn parse_delays(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Input(format!("bad delay `{s}` in --delays")))
        })
        .collect()
}

impl Cli {
    /// Config file (or defaults) with command-line overrides applied.
    pub fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(m) = &self.metric {
            cfg.pipeline.metric = Metric::parse(m).expect("validated by clap");
        }
        Ok(cfg)
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.effective_config()?;
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::config("run.threads", e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Simulate { frames, delay } => {
            let out = cmd_simulate(&cfg, *frames, *delay)?;
            eprintln!("wrote {} frames to {}", out.frames, out.frames_path.display());
            Ok(())
        }
        Command::Process { input } => {
            let out = cmd_process(&cfg, input)?;
            let s = &out.stats;
            eprintln!(
                "{} frames, {} pairs, {} rejected; {:.0} frames/s",
                s.frames,
                s.pairs,
                s.rejected_frames,
                s.throughput()
            );
            Ok(())
        }
        Command::Scan { delays, frames } => {
            let delays = match delays {
                Some(list) => parse_delays(list)?,
                None => default_delays_ps(&cfg)?,
            };
            let out = cmd_scan(&cfg, &delays, frames.unwrap_or(cfg.scan.frames_per_delay))?;
            eprintln!(
                "V = {:.4} ± {:.4} (raw {:.4}), boundary x = {:.1}",
                out.fit.visibility,
                out.fit.visibility_error,
                out.fit.raw_visibility,
                out.calibration.boundary_x
            );
            Ok(())
        }
        Command::Image { pairs } => {
            let out = cmd_image(&cfg, *pairs)?;
            let [a, b] = out.modes;
            eprintln!(
                "lobes at x = {:.2}, {:.2} (separation {:.2} px)",
                a.center.0,
                b.center.0,
                b.center.0 - a.center.0
            );
            Ok(())
        }
        Command::Config => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    })
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("homtwin: {e}");
            e.exit_code()
        }
    }
}
