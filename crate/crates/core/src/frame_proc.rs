//! Flash segmentation, centroiding, crosstalk rejection and two-photon
//! preselection.
//!
//! Frames are independent work units: [`process_frame`] is a pure function of
//! one frame, and [`process_stream`] fans batches of frames out over the rayon
//! pool before re-emitting results in frame order.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::frame::Frame;
use crate::{Error, Result};

/// Every `BACKGROUND_STRIDE`-th pixel enters the background median.
const BACKGROUND_STRIDE: usize = 7;
const BATCH_FRAMES: usize = 256;

/// One localized flash.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub frame_index: u64,
    /// Intensity-weighted centroid, pixels. Pixel `c` spans `[c, c + 1)`.
    pub x: f64,
    pub y: f64,
    /// Peak counts above the frame background.
    pub peak_amplitude: f64,
    /// Number of above-threshold pixels.
    pub footprint: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPhotonEvent {
    pub frame_index: u64,
    pub event_a: DetectionEvent,
    pub event_b: DetectionEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    /// `max(|Δx|, |Δy|)`
    #[default]
    Chebyshev,
    Euclidean,
}

impl Metric {
    pub fn distance(self, a: &DetectionEvent, b: &DetectionEvent) -> f64 {
        let dx = (a.x - b.x).abs();
        let dy = (a.y - b.y).abs();
        match self {
            Metric::Chebyshev => dx.max(dy),
            Metric::Euclidean => dx.hypot(dy),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Chebyshev => "chebyshev",
            Metric::Euclidean => "euclidean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chebyshev" => Some(Metric::Chebyshev),
            "euclidean" => Some(Metric::Euclidean),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Counts above the frame background a pixel must exceed.
    pub threshold: f64,
    pub min_footprint: usize,
    pub min_separation: f64,
    pub metric: Metric,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold: 250.0,
            min_footprint: 6,
            min_separation: 12.0,
            metric: Metric::Chebyshev,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::config(
                "pipeline.threshold",
                format!("must be positive, got {}", self.threshold),
            ));
        }
        if !(self.min_separation.is_finite() && self.min_separation >= 0.0) {
            return Err(Error::config(
                "pipeline.min_separation",
                format!("must be >= 0, got {}", self.min_separation),
            ));
        }
        Ok(())
    }
}

/// Background estimate: median of a strided pixel sample. Flashes cover a
/// small fraction of the stripe, so the median sits on the pedestal.
pub fn background_level(frame: &Frame) -> u16 {
    let mut sample: Vec<u16> = frame
        .pixels()
        .iter()
        .step_by(BACKGROUND_STRIDE)
        .copied()
        .collect();
    let mid = sample.len() / 2;
    *sample.select_nth_unstable(mid).1
}

/// Connected components (8-connectivity) of pixels more than `threshold`
/// counts above the background, kept when at least `min_footprint` pixels
/// large. Events are sorted by centroid `(y, x)`.
pub fn detect_flashes(frame: &Frame, threshold: f64, min_footprint: usize) -> Vec<DetectionEvent> {
    let bg = background_level(frame);
    let cut = bg as f64 + threshold;
    if cut >= u16::MAX as f64 {
        return Vec::new();
    }
    // For integer pixels, p > cut  <=>  p > floor(cut).
    let cut = cut.floor() as u16;
    let pixels = frame.pixels();
    let Some(first) = pixels.iter().position(|&p| p > cut) else {
        return Vec::new();
    };

    let (w, h) = (frame.width(), frame.height());
    let bg = bg as f64;
    let mut visited = vec![false; pixels.len()];
    let mut stack = Vec::new();
    let mut events = Vec::new();

    for start in first..pixels.len() {
        if pixels[start] <= cut || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let (mut sw, mut swx, mut swy, mut peak) = (0.0, 0.0, 0.0, 0.0f64);
        let mut count = 0u32;
        while let Some(idx) = stack.pop() {
            let (col, row) = (idx % w, idx / w);
            let wgt = pixels[idx] as f64 - bg;
            sw += wgt;
            swx += wgt * (col as f64 + 0.5);
            swy += wgt * (row as f64 + 0.5);
            peak = peak.max(wgt);
            count += 1;
            let r0 = row.saturating_sub(1);
            let r1 = (row + 1).min(h - 1);
            let c0 = col.saturating_sub(1);
            let c1 = (col + 1).min(w - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let n = r * w + c;
                    if !visited[n] && pixels[n] > cut {
                        visited[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        if count as usize >= min_footprint {
            events.push(DetectionEvent {
                frame_index: frame.index,
                x: swx / sw,
                y: swy / sw,
                peak_amplitude: peak,
                footprint: count,
            });
        }
    }
    events.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));
    events
}

/// Drops the whole frame when any two events are closer than `min_separation`.
/// Returns the surviving events and whether the frame was rejected.
pub fn reject_close_pairs(
    events: Vec<DetectionEvent>,
    min_separation: f64,
    metric: Metric,
) -> (Vec<DetectionEvent>, bool) {
    for (i, a) in events.iter().enumerate() {
        for b in &events[i + 1..] {
            if metric.distance(a, b) < min_separation {
                return (Vec::new(), true);
            }
        }
    }
    (events, false)
}

/// Exactly two events make a two-photon event; any other multiplicity yields none.
pub fn preselect_two_photon(events: &[DetectionEvent]) -> Option<TwoPhotonEvent> {
    match events {
        [a, b] => Some(TwoPhotonEvent {
            frame_index: a.frame_index,
            event_a: *a,
            event_b: *b,
        }),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub frame_index: u64,
    /// Events found before rejection.
    pub detected: usize,
    pub rejected: bool,
    /// Events surviving rejection.
    pub events: Vec<DetectionEvent>,
    pub pair: Option<TwoPhotonEvent>,
}

pub fn process_frame(frame: &Frame, config: &PipelineConfig) -> FrameOutcome {
    let events = detect_flashes(frame, config.threshold, config.min_footprint);
    let detected = events.len();
    let (events, rejected) = reject_close_pairs(events, config.min_separation, config.metric);
    let pair = preselect_two_photon(&events);
    FrameOutcome {
        frame_index: frame.index,
        detected,
        rejected,
        events,
        pair,
    }
}

/// Counters of a processing run. Everything except `elapsed` is a pure
/// function of the input and merges commutatively.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub frames: u64,
    /// Non-rejected frames by surviving event count: 0, 1, 2 and 3 or more.
    pub multiplicity: [u64; 4],
    pub rejected_frames: u64,
    pub events: u64,
    pub pairs: u64,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl RunStats {
    pub fn record(&mut self, outcome: &FrameOutcome) {
        self.frames += 1;
        if outcome.rejected {
            self.rejected_frames += 1;
        } else {
            self.multiplicity[outcome.events.len().min(3)] += 1;
        }
        self.events += outcome.events.len() as u64;
        self.pairs += outcome.pair.is_some() as u64;
    }

    pub fn merge(&mut self, other: &RunStats) {
        self.frames += other.frames;
        for (a, b) in self.multiplicity.iter_mut().zip(other.multiplicity) {
            *a += b;
        }
        self.rejected_frames += other.rejected_frames;
        self.events += other.events;
        self.pairs += other.pairs;
        self.elapsed += other.elapsed;
    }

    /// Frames per second of wall time.
    pub fn throughput(&self) -> f64 {
        let s = self.elapsed.as_secs_f64();
        if s > 0.0 {
            self.frames as f64 / s
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StreamOutput {
    pub pairs: Vec<TwoPhotonEvent>,
    pub stats: RunStats,
}

/// Runs the pipeline over a frame source, stopping at the first input error.
pub fn process_stream<I>(frames: I, config: &PipelineConfig) -> Result<StreamOutput>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    config.validate()?;
    let started = Instant::now();
    let mut out = StreamOutput::default();
    let mut frames = frames.into_iter();
    let mut batch = Vec::with_capacity(BATCH_FRAMES);
    loop {
        batch.clear();
        for f in frames.by_ref().take(BATCH_FRAMES) {
            batch.push(f?);
        }
        if batch.is_empty() {
            break;
        }
        let outcomes: Vec<FrameOutcome> = batch
            .par_iter()
            .map(|f| process_frame(f, config))
            .collect();
        for o in &outcomes {
            out.stats.record(o);
            if let Some(p) = o.pair {
                out.pairs.push(p);
            }
        }
    }
    out.stats.elapsed = started.elapsed();
    Ok(out)
}
