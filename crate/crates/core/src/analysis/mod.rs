//! From two-photon events to physics: port classification, outcome tallies,
//! HOM-dip fitting and coincidence imaging.

mod dip;
mod image;

pub use dip::{bootstrap_visibility_error, fit_dip, DipFit};
pub use image::{coincidence_image, fit_modes, ModeFit, ModeImage};

use serde::Serialize;

use crate::frame_proc::{DetectionEvent, Metric, TwoPhotonEvent};
use crate::sim::Port;
use crate::{Error, Result};

/// Vertical split line between the two output-mode areas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortRegions {
    boundary_x: f64,
}

impl PortRegions {
    pub fn new(boundary_x: f64, roi_width: usize) -> Result<Self> {
        if !(boundary_x > 0.0 && boundary_x < roi_width as f64) {
            return Err(Error::config(
                "analysis.boundary_x",
                format!("must lie strictly inside (0, {roi_width}), got {boundary_x}"),
            ));
        }
        Ok(Self { boundary_x })
    }

    /// Midpoint between two fitted lobe centres.
    pub fn from_modes(modes: &[ModeFit; 2], roi_width: usize) -> Result<Self> {
        Self::new(0.5 * (modes[0].center.0 + modes[1].center.0), roi_width)
    }

    pub fn boundary_x(&self) -> f64 {
        self.boundary_x
    }

    pub fn port_of(&self, x: f64) -> Port {
        if x < self.boundary_x {
            Port::H
        } else {
            Port::V
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PairClass {
    HH,
    VV,
    HV,
}

impl PairClass {
    pub fn from_ports(a: Port, b: Port) -> Self {
        match (a, b) {
            (Port::H, Port::H) => PairClass::HH,
            (Port::V, Port::V) => PairClass::VV,
            _ => PairClass::HV,
        }
    }
}

pub fn classify_pair(event: &TwoPhotonEvent, regions: &PortRegions) -> PairClass {
    PairClass::from_ports(
        regions.port_of(event.event_a.x),
        regions.port_of(event.event_b.x),
    )
}

/// Outcome counters at one delay. Merging is a commutative monoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairTally {
    /// Seconds.
    pub delay: f64,
    pub c_hh: u64,
    pub c_vv: u64,
    pub c_hv: u64,
}

impl PairTally {
    pub fn empty(delay: f64) -> Self {
        Self {
            delay,
            c_hh: 0,
            c_vv: 0,
            c_hv: 0,
        }
    }

    pub fn add(&mut self, class: PairClass) {
        match class {
            PairClass::HH => self.c_hh += 1,
            PairClass::VV => self.c_vv += 1,
            PairClass::HV => self.c_hv += 1,
        }
    }

    pub fn merged(&self, other: &PairTally) -> PairTally {
        PairTally {
            delay: self.delay,
            c_hh: self.c_hh + other.c_hh,
            c_vv: self.c_vv + other.c_vv,
            c_hv: self.c_hv + other.c_hv,
        }
    }

    pub fn total(&self) -> u64 {
        self.c_hh + self.c_vv + self.c_hv
    }

    pub fn from_pairs<'a>(
        delay: f64,
        pairs: impl IntoIterator<Item = &'a TwoPhotonEvent>,
        regions: &PortRegions,
    ) -> Self {
        let mut t = Self::empty(delay);
        for p in pairs {
            t.add(classify_pair(p, regions));
        }
        t
    }
}

/// Tallies over a delay-line scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DipScan {
    points: Vec<PairTally>,
}

impl DipScan {
    pub fn new(points: Vec<PairTally>) -> Result<Self> {
        if points.iter().any(|p| !p.delay.is_finite()) {
            return Err(Error::Input("scan delays must be finite".into()));
        }
        if points.windows(2).any(|w| w[1].delay <= w[0].delay) {
            return Err(Error::Input("scan delays must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[PairTally] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Most photons per port used for event mixing.
const MAX_MIXED_EVENTS: usize = 4000;

/// Probability that two photons landing in the same port survive the
/// close-pair rejection. Cross-port pairs are always far apart, so only
/// HH and VV need this correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairAcceptance {
    pub hh: f64,
    pub vv: f64,
}

impl PairAcceptance {
    pub const UNITY: Self = Self { hh: 1.0, vv: 1.0 };

    /// Event mixing: photons from different pairs of a heralded run are
    /// independent draws from their mode, so the fraction of mixed same-port
    /// combinations at least `min_separation` apart is the acceptance.
    pub fn from_mixed_events(
        pairs: &[TwoPhotonEvent],
        regions: &PortRegions,
        min_separation: f64,
        metric: Metric,
    ) -> Result<Self> {
        let mut ports: [Vec<DetectionEvent>; 2] = [Vec::new(), Vec::new()];
        for e in pairs.iter().flat_map(|p| [p.event_a, p.event_b]) {
            let k = (regions.port_of(e.x) == Port::V) as usize;
            if ports[k].len() < MAX_MIXED_EVENTS {
                ports[k].push(e);
            }
        }
        let accept = |events: &[DetectionEvent], name: &str| -> Result<f64> {
            if events.len() < 2 {
                return Err(Error::Input(format!(
                    "event mixing needs at least two {name} photons, got {}",
                    events.len()
                )));
            }
            let (mut kept, mut total) = (0u64, 0u64);
            for (i, a) in events.iter().enumerate() {
                for b in &events[i + 1..] {
                    total += 1;
                    kept += (metric.distance(a, b) >= min_separation) as u64;
                }
            }
            if kept == 0 {
                return Err(Error::Input(format!(
                    "no mixed {name} combinations survive min_separation {min_separation}"
                )));
            }
            Ok(kept as f64 / total as f64)
        };
        Ok(Self {
            hh: accept(&ports[0], "H")?,
            vv: accept(&ports[1], "V")?,
        })
    }
}

/// A count ratio with its Poisson error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ratio {
    pub value: f64,
    pub error: f64,
}

impl Ratio {
    /// `None` when the denominator is zero.
    pub fn of(num: u64, den: u64) -> Option<Self> {
        if den == 0 {
            return None;
        }
        let (a, b) = (num as f64, den as f64);
        let value = a / b;
        // A zero numerator still carries the one-count Poisson floor.
        let error = if num == 0 {
            1.0 / b
        } else {
            value * (1.0 / a + 1.0 / b).sqrt()
        };
        Some(Self { value, error })
    }

    fn scaled(self, k: f64) -> Self {
        Self {
            value: self.value * k,
            error: self.error * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoalescenceReport {
    pub delay: f64,
    /// Ratios use same-port counts divided by their acceptance.
    pub hh_over_hv: Option<Ratio>,
    pub vv_over_hv: Option<Ratio>,
    pub hh_over_vv: Option<Ratio>,
    /// Deviation of HH/HV from the distinguishable-photon value 1/2, in sigmas.
    pub hh_z_from_half: Option<f64>,
    pub vv_z_from_half: Option<f64>,
    /// `(HH - VV) / σ` on acceptance-corrected counts.
    pub symmetry_z: Option<f64>,
    /// `|symmetry_z| > 3`.
    pub asymmetric: bool,
}

/// `(same/a - hv/2) / σ` with Poisson variances on the raw counts.
fn z_from_half(same: u64, a: f64, hv: u64) -> Option<f64> {
    let var = same as f64 / (a * a) + 0.25 * hv as f64;
    (var > 0.0).then(|| (same as f64 / a - 0.5 * hv as f64) / var.sqrt())
}

/// Per-delay coalescence ratios with Poisson error bars. Pass
/// [`PairAcceptance::UNITY`] for uncorrected ratios.
pub fn check_coalescence(scan: &DipScan, acceptance: &PairAcceptance) -> Vec<CoalescenceReport> {
    let (ah, av) = (acceptance.hh, acceptance.vv);
    scan.points()
        .iter()
        .map(|t| {
            let (hh, vv) = (t.c_hh as f64, t.c_vv as f64);
            let var = hh / (ah * ah) + vv / (av * av);
            let symmetry_z = (var > 0.0).then(|| (hh / ah - vv / av) / var.sqrt());
            CoalescenceReport {
                delay: t.delay,
                hh_over_hv: Ratio::of(t.c_hh, t.c_hv).map(|r| r.scaled(1.0 / ah)),
                vv_over_hv: Ratio::of(t.c_vv, t.c_hv).map(|r| r.scaled(1.0 / av)),
                hh_over_vv: Ratio::of(t.c_hh, t.c_vv).map(|r| r.scaled(av / ah)),
                hh_z_from_half: z_from_half(t.c_hh, ah, t.c_hv),
                vv_z_from_half: z_from_half(t.c_vv, av, t.c_hv),
                symmetry_z,
                asymmetric: symmetry_z.is_some_and(|z| z.abs() > 3.0),
            }
        })
        .collect()
}
