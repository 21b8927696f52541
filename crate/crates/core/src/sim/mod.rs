//! Monte-Carlo generation of gated exposures.
//!
//! One gate is one frame. For each gate the simulator draws pair and
//! accidental photons, applies port transmission and quantum efficiency,
//! places the survivors on the sensor, adds dark events and intensifier
//! crosstalk, and finally renders the flashes. All draws for gate `g` come
//! from `stream.gate_rng(g)`, so any subset of gates can be produced in any
//! order, on any number of threads, with identical results.

mod camera;
mod render;
mod source;

use std::ops::Range;

use rand::Rng;
use rand_distr::Poisson;
use rayon::prelude::*;

pub use camera::{apply_efficiency, inject_crosstalk, position_of, CameraConfig, Detection};
pub use render::{add_flash, rasterize, render_frame, Flash, TruthPhoton, TruthRecord};
pub use source::{sample_gate, EmittedPhoton, GateSampler, Origin, Port, SourceConfig};

use crate::analysis::{PairClass, PairTally};
use crate::frame::Frame;
use crate::hom::{heralded_distribution, InterferenceModel};
use crate::rng::{GateRng, SeedStream};
use crate::Result;

/// Gates per work unit in [`ExperimentSimulator::map_sparse`].
const SPARSE_BLOCK: u64 = 4096;

/// How the two photons of a pair are routed by the displacer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    /// Polarisations at 45°: the displacer acts as a balanced splitter.
    Interference,
    /// Polarisations along the displacer axes: every pair is HV.
    Heralded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedGate {
    pub frame: Frame,
    pub truth: TruthRecord,
}

#[derive(Debug, Clone)]
pub struct ExperimentSimulator {
    source: SourceConfig,
    camera: CameraConfig,
    sampler: GateSampler,
    dark: Option<Poisson<f64>>,
    stream: SeedStream,
}

impl ExperimentSimulator {
    pub fn new(
        source: SourceConfig,
        camera: CameraConfig,
        model: &InterferenceModel,
        mode: PairMode,
        stream: SeedStream,
    ) -> Result<Self> {
        camera.validate()?;
        let sampler = match mode {
            PairMode::Interference => GateSampler::for_model(&source, model)?,
            PairMode::Heralded => GateSampler::new(&source, heralded_distribution())?,
        };
        let dark = source::poisson(camera.dark_rate * source.gate_time, "camera.dark_rate")?;
        Ok(Self {
            source,
            camera,
            sampler,
            dark,
            stream,
        })
    }

    pub fn source(&self) -> &SourceConfig {
        &self.source
    }

    pub fn camera(&self) -> &CameraConfig {
        &self.camera
    }

    pub fn sampler(&self) -> &GateSampler {
        &self.sampler
    }

    /// Everything up to rendering: the flashes that will appear in the frame.
    pub fn detections(&self, rng: &mut GateRng) -> Vec<Detection> {
        let cam = &self.camera;
        let mut photons = self.sampler.sample(rng);
        if !photons.is_empty() {
            photons.retain(|p| rng.random::<f64>() < cam.transmission_of(p.port()));
        }
        let photons = apply_efficiency(photons, cam.quantum_efficiency, rng);
        let n_dark = source::draw_count(&self.dark, rng);
        if photons.is_empty() && n_dark == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(photons.len() + n_dark);
        for p in &photons {
            let (x, y) = camera::sample_position(p.port(), cam, rng);
            out.push(Detection {
                x,
                y,
                origin: p.origin,
                pair: p.pair,
            });
        }
        for _ in 0..n_dark {
            out.push(Detection {
                x: rng.random::<f64>() * cam.roi_width as f64,
                y: rng.random::<f64>() * cam.roi_height as f64,
                origin: Origin::Dark,
                pair: None,
            });
        }
        inject_crosstalk(out, cam, rng)
    }

    pub fn simulate_gate(&self, gate: u64) -> SimulatedGate {
        let mut rng = self.stream.gate_rng(gate);
        let dets = self.detections(&mut rng);
        let (frame, truth) = render_frame(gate, &dets, &self.camera, &mut rng);
        SimulatedGate { frame, truth }
    }

    /// Renders every gate in `gates`, in gate order.
    pub fn simulate_range(&self, gates: Range<u64>) -> Vec<SimulatedGate> {
        gates.into_par_iter().map(|g| self.simulate_gate(g)).collect()
    }

    /// Renders only gates with at least `min_flashes` flashes and maps each
    /// through `f`; results come back in gate order. A rendered gate is
    /// identical to what [`simulate_gate`](Self::simulate_gate) produces.
    pub fn map_sparse<T, F>(&self, gates: Range<u64>, min_flashes: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(SimulatedGate) -> T + Sync + Send,
    {
        // Most gates are empty; blocks keep scheduling overhead off the hot loop.
        let blocks = gates.end.saturating_sub(gates.start).div_ceil(SPARSE_BLOCK);
        let per_block: Vec<Vec<T>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let lo = gates.start + b * SPARSE_BLOCK;
                let hi = (lo + SPARSE_BLOCK).min(gates.end);
                let mut out = Vec::new();
                for g in lo..hi {
                    let mut rng = self.stream.gate_rng(g);
                    let dets = self.detections(&mut rng);
                    if dets.len() < min_flashes {
                        continue;
                    }
                    let (frame, truth) = render_frame(g, &dets, &self.camera, &mut rng);
                    out.push(f(SimulatedGate { frame, truth }));
                }
                out
            })
            .collect();
        per_block.into_iter().flatten().collect()
    }

    /// Oracle tally from ground truth: gates with exactly two non-crosstalk
    /// detections, classified by the ports the photons actually took.
    pub fn truth_tally(&self, gates: Range<u64>) -> PairTally {
        let delay = self.source.delay;
        gates
            .into_par_iter()
            .fold(
                || PairTally::empty(delay),
                |mut tally, g| {
                    let mut rng = self.stream.gate_rng(g);
                    let dets = self.detections(&mut rng);
                    let ports: Vec<Port> = dets
                        .iter()
                        .filter(|d| d.origin != Origin::Crosstalk)
                        .map(|d| d.origin.port())
                        .collect::<Option<Vec<_>>>()
                        .unwrap_or_default();
                    if let [a, b] = ports[..] {
                        tally.add(PairClass::from_ports(a, b));
                    }
                    tally
                },
            )
            .reduce(|| PairTally::empty(delay), |a, b| a.merged(&b))
    }
}

/// Number of gates in which at least two photons are emitted.
pub fn multi_photon_gate_count(
    sampler: &GateSampler,
    stream: SeedStream,
    gates: Range<u64>,
) -> u64 {
    gates
        .into_par_iter()
        .map(|g| {
            let mut rng = stream.gate_rng(g);
            (sampler.sample(&mut rng).len() >= 2) as u64
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hom::SpectralProfile;

    fn model(v: f64) -> InterferenceModel {
        InterferenceModel::new(SpectralProfile::gaussian(810.0, 3.0).unwrap(), v).unwrap()
    }

    fn busy_source() -> SourceConfig {
        SourceConfig {
            pair_rate: 5e6,
            singles_rate: 2e6,
            ..Default::default()
        }
    }

    #[test]
    fn every_flash_has_one_truth_entry() {
        let sim = ExperimentSimulator::new(
            busy_source(),
            CameraConfig::default(),
            &model(0.963),
            PairMode::Interference,
            SeedStream::new(5),
        )
        .unwrap();
        let mut rendered = 0;
        for g in sim.simulate_range(0..2000) {
            let mut rng = SeedStream::new(5).gate_rng(g.frame.index);
            assert_eq!(sim.detections(&mut rng).len(), g.truth.photons.len());
            assert_eq!(g.truth.frame, g.frame.index);
            rendered += g.truth.photons.len();
        }
        assert!(rendered > 100);
    }

    #[test]
    fn sparse_frames_match_dense_frames() {
        let sim = ExperimentSimulator::new(
            busy_source(),
            CameraConfig::default(),
            &model(0.963),
            PairMode::Interference,
            SeedStream::new(6),
        )
        .unwrap();
        let dense = sim.simulate_range(0..400);
        let sparse = sim.map_sparse(0..400, 2, |g| g);
        let expected: Vec<_> = dense
            .into_iter()
            .filter(|g| g.truth.photons.len() >= 2)
            .collect();
        assert!(!expected.is_empty());
        assert_eq!(sparse, expected);
    }

    #[test]
    fn heralded_pairs_are_always_hv() {
        let src = SourceConfig {
            pair_rate: 5e6,
            singles_rate: 0.0,
            ..Default::default()
        };
        let cam = CameraConfig {
            crosstalk_probability: 0.0,
            ..Default::default()
        };
        let sim = ExperimentSimulator::new(
            src,
            cam,
            &model(1.0),
            PairMode::Heralded,
            SeedStream::new(7),
        )
        .unwrap();
        // Gates may hold several pairs; the two photons of any one pair split.
        let mut split = 0;
        for g in 0..200_000 {
            let mut rng = SeedStream::new(7).gate_rng(g);
            let dets = sim.detections(&mut rng);
            for (i, a) in dets.iter().enumerate() {
                for b in &dets[i + 1..] {
                    if a.pair.is_some() && a.pair == b.pair {
                        assert_ne!(a.origin.port(), b.origin.port());
                        split += 1;
                    }
                }
            }
        }
        assert!(split > 100);
    }

    #[test]
    fn dark_events_are_tagged() {
        let cam = CameraConfig {
            dark_rate: 5e7,
            crosstalk_probability: 0.0,
            ..Default::default()
        };
        let src = SourceConfig {
            pair_rate: 0.0,
            singles_rate: 0.0,
            ..Default::default()
        };
        let sim =
            ExperimentSimulator::new(src, cam, &model(1.0), PairMode::Interference, SeedStream::new(2))
                .unwrap();
        let n: usize = sim
            .simulate_range(0..200)
            .iter()
            .map(|g| g.truth.count_origin(|o| o == Origin::Dark))
            .sum();
        // 2 dark events per gate on average
        assert!((n as f64 - 400.0).abs() < 5.0 * 20.0, "{n}");
    }
}
