//! The four subcommands. Each validates the whole config first, writes its
//! artifacts into `config.output_dir` and returns what it wrote.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{Boundary, RunConfig};
use super::formats::{format_events, write_file, FrameReader, FrameWriter, TruthWriter};
use crate::analysis::{
    bootstrap_visibility_error, check_coalescence, coincidence_image, fit_dip, fit_modes, CoalescenceReport, DipFit, DipScan,
    ModeFit, ModeImage, PairAcceptance, PairTally, PortRegions, Ratio,
};
use crate::frame_proc::{process_frame, process_stream, RunStats, StreamOutput, TwoPhotonEvent};
use crate::rng::{tags, SeedStream};
use crate::sim::{ExperimentSimulator, PairMode};
use crate::{Error, Result};

/// Gates simulated per block when collecting a requested number of pairs.
const PAIR_BLOCK: u64 = 1 << 18;
/// Give up collecting pairs after this many gates.
const MAX_COLLECTION_GATES: u64 = 1 << 40;
/// Frames rendered and written per chunk by `simulate`.
const SIMULATE_CHUNK: u64 = 4096;
const BOOTSTRAP_RESAMPLES: usize = 1000;

fn prepare(config: &RunConfig) -> Result<PathBuf> {
    config.validate()?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn simulator(config: &RunConfig, delay_ps: f64, mode: PairMode, stream: SeedStream) -> Result<ExperimentSimulator> {
    let mut source = config.source_config();
    source.delay = delay_ps * 1e-12;
    ExperimentSimulator::new(source, config.camera, &config.interference_model()?, mode, stream)
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub frames_path: PathBuf,
    pub truth_path: PathBuf,
    pub frames: u64,
}

/// Writes `n_frames` gated exposures and their truth sidecar.
pub fn cmd_simulate(config: &RunConfig, n_frames: u64, delay_ps: f64) -> Result<SimulateOutput> {
    let dir = prepare(config)?;
    let stream = SeedStream::new(config.seed).fork(tags::SIMULATE);
    let sim = simulator(config, delay_ps, PairMode::Interference, stream)?;
    let frames_path = dir.join("frames.homf");
    let truth_path = dir.join("truth.jsonl");
    let mut frames = FrameWriter::create(&frames_path, config.camera.roi_width, config.camera.roi_height)?;
    let mut truth = TruthWriter::create(&truth_path)?;
    let mut start = 0;
    while start < n_frames {
        let end = (start + SIMULATE_CHUNK).min(n_frames);
        for g in sim.simulate_range(start..end) {
            frames.write(&g.frame)?;
            truth.write(&g.truth)?;
        }
        start = end;
    }
    let header = frames.finish()?;
    truth.finish()?;
    Ok(SimulateOutput {
        frames_path,
        truth_path,
        frames: header.frame_count,
    })
}

/// Runs the frame pipeline over a frame file; writes `events.tsv` and
/// `stats.json`.
pub fn cmd_process(config: &RunConfig, input: &Path) -> Result<StreamOutput> {
    let dir = prepare(config)?;
    let reader = FrameReader::open(input)?;
    let out = process_stream(reader, &config.pipeline)?;
    write_file(&dir, "events.tsv", &format_events(&out.pairs))?;
    write_file(&dir, "stats.json", &json(&out.stats))?;
    Ok(out)
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

/// Collects the first `n_pairs` preselected two-photon events of a gate
/// sequence, in gate order.
fn collect_pairs(sim: &ExperimentSimulator, config: &RunConfig, n_pairs: usize) -> Result<Vec<TwoPhotonEvent>> {
    if sim.source().mean_pairs_per_gate() == 0.0 {
        return Err(Error::config("source.pair_rate", "must be positive to collect pairs"));
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut start = 0;
    while pairs.len() < n_pairs {
        if start >= MAX_COLLECTION_GATES {
            return Err(Error::Input(format!(
                "only {} of {n_pairs} pairs after {start} gates",
                pairs.len()
            )));
        }
        let found = sim.map_sparse(start..start + PAIR_BLOCK, 2, |g| {
            process_frame(&g.frame, &config.pipeline).pair
        });
        pairs.extend(found.into_iter().flatten());
        start += PAIR_BLOCK;
    }
    pairs.truncate(n_pairs);
    Ok(pairs)
}

/// Port boundary and same-port pair acceptance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub boundary_x: f64,
    pub acceptance: PairAcceptance,
    #[serde(skip)]
    pub regions: PortRegions,
}

/// Heralded calibration run: fits the two lobes for the port boundary (unless
/// the config fixes it) and measures the same-port acceptance by event mixing.
pub fn calibrate(config: &RunConfig) -> Result<Calibration> {
    let width = config.camera.roi_width;
    let stream = SeedStream::new(config.seed).fork(tags::CALIBRATION);
    let sim = simulator(config, 0.0, PairMode::Heralded, stream)?;
    let pairs = collect_pairs(&sim, config, config.analysis.calibration_pairs)?;
    let regions = match config.analysis.boundary {
        Boundary::Fixed(x) => PortRegions::new(x, width)?,
        Boundary::Auto => {
            let image = coincidence_image(
                &pairs,
                config.analysis.bin_size,
                (width, config.camera.roi_height),
            )?;
            PortRegions::from_modes(&fit_modes(&image)?, width)?
        }
    };
    let p = &config.pipeline;
    let acceptance = PairAcceptance::from_mixed_events(&pairs, &regions, p.min_separation, p.metric)?;
    Ok(Calibration {
        boundary_x: regions.boundary_x(),
        acceptance,
        regions,
    })
}

/// Default delay list: `scan.points` delays over ±`scan.span_widths` dip widths.
pub fn default_delays_ps(config: &RunConfig) -> Result<Vec<f64>> {
    let w_ps = config.interference_model()?.dip_width() * 1e12;
    let n = config.scan.points;
    let span = config.scan.span_widths * w_ps;
    Ok((0..n)
        .map(|i| -span + 2.0 * span * i as f64 / (n - 1) as f64)
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub seed: u64,
    pub frames_per_delay: u64,
    pub calibration: Calibration,
    pub fit: DipFit,
    /// Standard deviation of V over Poisson resamples of the scan.
    pub bootstrap_visibility_error: Option<f64>,
    pub stats: RunStats,
}

#[derive(Debug, Clone)]
pub struct ScanOutput {
    pub delays_ps: Vec<f64>,
    pub scan: DipScan,
    pub fit: DipFit,
    pub ratios: Vec<CoalescenceReport>,
    pub calibration: Calibration,
}

/// Simulates, processes and tallies every delay, fits the dip and checks the
/// outcome ratios. Raw counts go to `scan.tsv`; `ratios.tsv` carries the
/// acceptance-corrected ratios.
pub fn cmd_scan(config: &RunConfig, delays_ps: &[f64], frames_per_delay: u64) -> Result<ScanOutput> {
    let dir = prepare(config)?;
    if delays_ps.len() < 5 {
        return Err(Error::Input(format!(
            "a scan needs at least 5 delays, got {}",
            delays_ps.len()
        )));
    }
    // Reject bad orderings before spending time on simulation.
    DipScan::new(delays_ps.iter().map(|&d| PairTally::empty(d)).collect())?;
    let calibration = calibrate(config)?;
    let regions = calibration.regions;

    let scan_stream = SeedStream::new(config.seed).fork(tags::SCAN);
    let mut tallies = Vec::with_capacity(delays_ps.len());
    let mut stats = RunStats::default();
    for (k, &d) in delays_ps.iter().enumerate() {
        let sim = simulator(config, d, PairMode::Interference, scan_stream.fork(k as u64))?;
        let outcomes = sim.map_sparse(0..frames_per_delay, 2, |g| process_frame(&g.frame, &config.pipeline));
        let mut point = RunStats::default();
        for o in &outcomes {
            point.record(o);
        }
        stats.merge(&point);
        tallies.push(PairTally::from_pairs(
            d * 1e-12,
            outcomes.iter().filter_map(|o| o.pair.as_ref()),
            &regions,
        ));
    }
    let scan = DipScan::new(tallies)?;
    let ratios = check_coalescence(&scan, &calibration.acceptance);
    write_file(&dir, "scan.tsv", &scan_table(delays_ps, &scan))?;
    write_file(&dir, "ratios.tsv", &ratio_table(delays_ps, &ratios))?;
    let fit = fit_dip(&scan)?;
    write_file(&dir, "scan_plot.tsv", &scan_plot(delays_ps, &scan, &fit))?;
    let bootstrap = bootstrap_visibility_error(
        &scan,
        BOOTSTRAP_RESAMPLES,
        SeedStream::new(config.seed).fork(tags::BOOTSTRAP),
    )
    .ok();
    let report = ScanReport {
        seed: config.seed,
        frames_per_delay,
        calibration,
        fit,
        bootstrap_visibility_error: bootstrap,
        stats,
    };
    write_file(&dir, "dip_fit.json", &json(&report))?;
    Ok(ScanOutput {
        delays_ps: delays_ps.to_vec(),
        scan,
        fit,
        ratios,
        calibration,
    })
}

fn scan_table(delays_ps: &[f64], scan: &DipScan) -> String {
    let mut s = String::from("# homtwin-scan v1\ndelay_ps\tc_hh\tc_vv\tc_hv\ttotal\n");
    for (d, t) in delays_ps.iter().zip(scan.points()) {
        let _ = writeln!(s, "{d}\t{}\t{}\t{}\t{}", t.c_hh, t.c_vv, t.c_hv, t.total());
    }
    s
}

fn ratio_cells(r: Option<Ratio>) -> String {
    match r {
        Some(r) => format!("{}\t{}", r.value, r.error),
        None => "NA\tNA".into(),
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| v.to_string())
}

fn ratio_table(delays_ps: &[f64], ratios: &[CoalescenceReport]) -> String {
    let mut s = String::from(
        "# homtwin-ratios v1\ndelay_ps\thh_over_hv\thh_over_hv_err\tvv_over_hv\tvv_over_hv_err\thh_over_vv\thh_over_vv_err\tsymmetry_z\tflag\n",
    );
    for (d, r) in delays_ps.iter().zip(ratios) {
        let _ = writeln!(
            s,
            "{d}\t{}\t{}\t{}\t{}\t{}",
            ratio_cells(r.hh_over_hv),
            ratio_cells(r.vv_over_hv),
            ratio_cells(r.hh_over_vv),
            opt_cell(r.symmetry_z),
            if r.asymmetric { "asymmetric" } else { "ok" }
        );
    }
    s
}

/// Long format for external plotting: one row per (series, delay).
fn scan_plot(delays_ps: &[f64], scan: &DipScan, fit: &DipFit) -> String {
    let mut s = String::from("# homtwin-plot v1\nseries\tdelay_ps\tvalue\terror\n");
    type Series = (&'static str, fn(&PairTally) -> u64);
    let series: [Series; 3] = [
        ("c_hh", |t| t.c_hh),
        ("c_vv", |t| t.c_vv),
        ("c_hv", |t| t.c_hv),
    ];
    for (name, get) in series {
        for (d, t) in delays_ps.iter().zip(scan.points()) {
            let c = get(t);
            let _ = writeln!(s, "{name}\t{d}\t{c}\t{}", (c as f64).sqrt());
        }
    }
    for (d, t) in delays_ps.iter().zip(scan.points()) {
        let u = (t.delay - fit.center) / fit.width;
        let model = fit.baseline * (1.0 - fit.visibility * (-u * u).exp());
        let _ = writeln!(s, "fit_hv\t{d}\t{model}\tNA");
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageReport {
    pub seed: u64,
    pub pairs: u64,
    pub bin_size: f64,
    pub modes: [ModeFit; 2],
    pub separation_px: f64,
}

#[derive(Debug, Clone)]
pub struct ImageOutput {
    pub pairs: Vec<TwoPhotonEvent>,
    pub image: ModeImage,
    pub modes: [ModeFit; 2],
}

/// Heralded coincidence image of `n_pairs` pairs and its two-lobe fit. The
/// histogram is written even when the fit fails.
pub fn cmd_image(config: &RunConfig, n_pairs: usize) -> Result<ImageOutput> {
    let dir = prepare(config)?;
    if n_pairs == 0 {
        return Err(Error::Input("--pairs must be at least 1".into()));
    }
    let stream = SeedStream::new(config.seed).fork(tags::IMAGE);
    let sim = simulator(config, 0.0, PairMode::Heralded, stream)?;
    let pairs = collect_pairs(&sim, config, n_pairs)?;
    let image = coincidence_image(
        &pairs,
        config.analysis.bin_size,
        (config.camera.roi_width, config.camera.roi_height),
    )?;
    write_file(&dir, "histogram.tsv", &histogram_table(&image))?;
    write_file(&dir, "image_events.tsv", &format_events(&pairs))?;
    let modes = fit_modes(&image)?;
    let report = ImageReport {
        seed: config.seed,
        pairs: image.total_pairs,
        bin_size: config.analysis.bin_size,
        modes,
        separation_px: modes[1].center.0 - modes[0].center.0,
    };
    write_file(&dir, "modes.json", &json(&report))?;
    Ok(ImageOutput { pairs, image, modes })
}

fn histogram_table(image: &ModeImage) -> String {
    let mut s = String::from("# homtwin-histogram v1\nx_lo\tx_hi\ty_lo\ty_hi\tcount\n");
    let nx = image.nx();
    for iy in 0..image.ny() {
        for ix in 0..nx {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                image.x_edges[ix],
                image.x_edges[ix + 1],
                image.y_edges[iy],
                image.y_edges[iy + 1],
                image.counts[iy * nx + ix]
            );
        }
    }
    s
}
