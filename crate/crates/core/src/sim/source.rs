//! Photon emission within one gate.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::hom::{InterferenceModel, OutcomeDistribution};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Port {
    H,
    V,
}

/// Where a detected flash came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Pair(Port),
    Accidental(Port),
    Crosstalk,
    Dark,
}

impl Origin {
    pub fn port(self) -> Option<Port> {
        match self {
            Origin::Pair(p) | Origin::Accidental(p) => Some(p),
            Origin::Crosstalk | Origin::Dark => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Pair(Port::H) => "pair_h",
            Origin::Pair(Port::V) => "pair_v",
            Origin::Accidental(Port::H) => "accidental_h",
            Origin::Accidental(Port::V) => "accidental_v",
            Origin::Crosstalk => "crosstalk",
            Origin::Dark => "dark",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pair_h" => Origin::Pair(Port::H),
            "pair_v" => Origin::Pair(Port::V),
            "accidental_h" => Origin::Accidental(Port::H),
            "accidental_v" => Origin::Accidental(Port::V),
            "crosstalk" => Origin::Crosstalk,
            "dark" => Origin::Dark,
            _ => return None,
        })
    }
}

impl Serialize for Origin {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Origin {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Origin::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown origin `{s}`")))
    }
}

/// A photon leaving the displacer towards the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmittedPhoton {
    pub origin: Origin,
    /// Index of the parent pair within the gate, for pair photons.
    pub pair: Option<u32>,
}

impl EmittedPhoton {
    pub fn port(&self) -> Port {
        self.origin
            .port()
            .expect("emitted photons always carry a port")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceConfig {
    /// Photon pairs per second reaching the displacer.
    pub pair_rate: f64,
    /// Uncorrelated photons per second reaching the displacer.
    pub singles_rate: f64,
    /// Intensifier gate, seconds.
    pub gate_time: f64,
    /// Optical delay between the two photons, seconds.
    pub delay: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            pair_rate: 11_000.0,
            singles_rate: 11_000.0 * (1.0 / 0.15 - 1.0),
            gate_time: 40e-9,
            delay: 0.0,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = |v: f64, field: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be finite and >= 0, got {v}")))
            }
        };
        non_negative(self.pair_rate, "source.pair_rate")?;
        non_negative(self.singles_rate, "source.singles_rate")?;
        if !(self.gate_time.is_finite() && self.gate_time > 0.0) {
            return Err(Error::config(
                "source.gate_time_ns",
                format!("must be positive, got {} s", self.gate_time),
            ));
        }
        if !self.delay.is_finite() {
            return Err(Error::config("source.delay_ps", "must be finite"));
        }
        Ok(())
    }

    pub fn mean_pairs_per_gate(&self) -> f64 {
        self.pair_rate * self.gate_time
    }

    pub fn mean_singles_per_gate(&self) -> f64 {
        self.singles_rate * self.gate_time
    }
}

/// Poisson sampler for `mean`, or `None` when the mean is zero.
pub(crate) fn poisson(mean: f64, field: &str) -> Result<Option<Poisson<f64>>> {
    if mean == 0.0 {
        return Ok(None);
    }
    Poisson::new(mean)
        .map(Some)
        .map_err(|e| Error::config(field, format!("invalid Poisson mean {mean}: {e}")))
}

#[inline]
pub(crate) fn draw_count<R: Rng + ?Sized>(dist: &Option<Poisson<f64>>, rng: &mut R) -> usize {
    match dist {
        Some(d) => d.sample(rng) as usize,
        None => 0,
    }
}

/// Per-gate emission sampler with the outcome distribution and Poisson laws
/// precomputed.
#[derive(Debug, Clone)]
pub struct GateSampler {
    pairs: Option<Poisson<f64>>,
    singles: Option<Poisson<f64>>,
    outcome: OutcomeDistribution,
}

impl GateSampler {
    pub fn new(source: &SourceConfig, outcome: OutcomeDistribution) -> Result<Self> {
        source.validate()?;
        Ok(Self {
            pairs: poisson(source.mean_pairs_per_gate(), "source.pair_rate")?,
            singles: poisson(source.mean_singles_per_gate(), "source.singles_rate")?,
            outcome,
        })
    }

    pub fn for_model(source: &SourceConfig, model: &InterferenceModel) -> Result<Self> {
        Self::new(source, model.outcome_distribution(source.delay)?)
    }

    pub fn outcome(&self) -> &OutcomeDistribution {
        &self.outcome
    }

    /// Photons emitted in one gate: pair photons first (in pair order), then
    /// accidentals.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<EmittedPhoton> {
        let n_pairs = draw_count(&self.pairs, rng);
        let n_singles = draw_count(&self.singles, rng);
        if n_pairs == 0 && n_singles == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(2 * n_pairs + n_singles);
        for pair in 0..n_pairs {
            let u: f64 = rng.random();
            let (a, b) = if u < self.outcome.p_hh {
                (Port::H, Port::H)
            } else if u < self.outcome.p_hh + self.outcome.p_vv {
                (Port::V, Port::V)
            } else {
                (Port::H, Port::V)
            };
            let pair = Some(pair as u32);
            out.push(EmittedPhoton {
                origin: Origin::Pair(a),
                pair,
            });
            out.push(EmittedPhoton {
                origin: Origin::Pair(b),
                pair,
            });
        }
        for _ in 0..n_singles {
            let port = if rng.random::<bool>() { Port::H } else { Port::V };
            out.push(EmittedPhoton {
                origin: Origin::Accidental(port),
                pair: None,
            });
        }
        out
    }
}

/// One-shot form of [`GateSampler::sample`].
pub fn sample_gate<R: Rng + ?Sized>(
    source: &SourceConfig,
    model: &InterferenceModel,
    rng: &mut R,
) -> Result<Vec<EmittedPhoton>> {
    Ok(GateSampler::for_model(source, model)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hom::SpectralProfile;
    use crate::rng::SeedStream;

    fn model() -> InterferenceModel {
        InterferenceModel::new(SpectralProfile::gaussian(810.0, 3.0).unwrap(), 0.963).unwrap()
    }

    #[test]
    fn empty_source_gives_empty_gates() {
        let src = SourceConfig {
            pair_rate: 0.0,
            singles_rate: 0.0,
            ..Default::default()
        };
        let sampler = GateSampler::for_model(&src, &model()).unwrap();
        let s = SeedStream::new(1);
        for g in 0..10_000 {
            assert!(sampler.sample(&mut s.gate_rng(g)).is_empty());
        }
    }

    #[test]
    fn paper_pair_rate_per_gate() {
        let src = SourceConfig::default();
        assert!((src.mean_pairs_per_gate() - 4.4e-4).abs() < 1e-15);
    }

    #[test]
    fn pair_photons_come_in_twos() {
        let src = SourceConfig {
            pair_rate: 2e7,
            singles_rate: 0.0,
            ..Default::default()
        };
        let sampler = GateSampler::for_model(&src, &model()).unwrap();
        let s = SeedStream::new(9);
        let mut seen = 0;
        for g in 0..2_000 {
            let photons = sampler.sample(&mut s.gate_rng(g));
            assert_eq!(photons.len() % 2, 0);
            for chunk in photons.chunks(2) {
                assert_eq!(chunk[0].pair, chunk[1].pair);
                seen += 1;
            }
        }
        assert!(seen > 1000);
    }

    #[test]
    fn invalid_source_rejected() {
        let bad = SourceConfig {
            gate_time: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
        let bad = SourceConfig {
            singles_rate: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn origin_names_round_trip() {
        for o in [
            Origin::Pair(Port::H),
            Origin::Pair(Port::V),
            Origin::Accidental(Port::H),
            Origin::Accidental(Port::V),
            Origin::Crosstalk,
            Origin::Dark,
        ] {
            assert_eq!(Origin::parse(o.as_str()), Some(o));
        }
    }
}
