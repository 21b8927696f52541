//! Two-photon interference at a balanced splitter.
//!
//! A photon pair entering the two inputs of a 50:50 splitter leaves either
//! through different ports (HV) or bunched into one port (HH, VV). With
//! `xi = V * |overlap(tau)|^2` the outcome probabilities are
//!
//! ```text
//! p_hv = (1 - xi) / 2        p_hh = p_vv = (1 + xi) / 4
//! ```
//!
//! where `overlap(tau) = |∫ S(ω) e^{iωτ} dω|` for the unit-normalised spectral
//! intensity `S`, and `V` lumps every non-spectral distinguishability.

use std::f64::consts::PI;

use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Ratio between FWHM and standard deviation of a Gaussian, `2·sqrt(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Quadrature grid half-width, in intensity standard deviations.
const QUADRATURE_HALF_WIDTH: f64 = 8.0;
const QUADRATURE_POINTS: usize = 4097;

#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumShape {
    Gaussian,
    /// Intensity samples on a strictly increasing angular-frequency grid (rad/s).
    /// Linearly interpolated, zero outside the table.
    Tabulated { omega: Vec<f64>, intensity: Vec<f64> },
}

/// Precomputed trapezoid nodes for a tabulated spectrum, already multiplied by
/// the normalised intensity. Offsets are relative to the spectral mean so the
/// phase factor stays well conditioned.
#[derive(Debug, Clone, PartialEq)]
struct QuadratureTable {
    offsets: Vec<f64>,
    weights: Vec<f64>,
    sigma_omega: f64,
}

/// Filtered single-photon spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    center_wavelength_nm: f64,
    fwhm_bandwidth_nm: f64,
    shape: SpectrumShape,
    table: Option<QuadratureTable>,
}

impl SpectralProfile {
    pub fn gaussian(center_wavelength_nm: f64, fwhm_bandwidth_nm: f64) -> Result<Self> {
        check_wavelengths(center_wavelength_nm, fwhm_bandwidth_nm)?;
        Ok(Self {
            center_wavelength_nm,
            fwhm_bandwidth_nm,
            shape: SpectrumShape::Gaussian,
            table: None,
        })
    }

    /// Tabulated spectrum. The wavelength fields are kept as metadata; the
    /// overlap is computed from the table alone.
    pub fn tabulated(
        center_wavelength_nm: f64,
        fwhm_bandwidth_nm: f64,
        omega: Vec<f64>,
        intensity: Vec<f64>,
    ) -> Result<Self> {
        check_wavelengths(center_wavelength_nm, fwhm_bandwidth_nm)?;
        let table = QuadratureTable::build(&omega, &intensity)?;
        Ok(Self {
            center_wavelength_nm,
            fwhm_bandwidth_nm,
            shape: SpectrumShape::Tabulated { omega, intensity },
            table: Some(table),
        })
    }

    pub fn center_wavelength_nm(&self) -> f64 {
        self.center_wavelength_nm
    }

    pub fn fwhm_bandwidth_nm(&self) -> f64 {
        self.fwhm_bandwidth_nm
    }

    pub fn shape(&self) -> &SpectrumShape {
        &self.shape
    }

    /// Carrier angular frequency `2πc/λ0`.
    pub fn center_angular_frequency(&self) -> f64 {
        2.0 * PI * SPEED_OF_LIGHT / (self.center_wavelength_nm * 1e-9)
    }

    /// FWHM in ordinary frequency, `Δν = cΔλ/λ0²`.
    pub fn fwhm_frequency_hz(&self) -> f64 {
        let lambda = self.center_wavelength_nm * 1e-9;
        SPEED_OF_LIGHT * self.fwhm_bandwidth_nm * 1e-9 / (lambda * lambda)
    }

    /// Standard deviation of the spectral intensity in angular frequency.
    pub fn sigma_omega(&self) -> f64 {
        match &self.table {
            Some(t) => t.sigma_omega,
            None => 2.0 * PI * self.fwhm_frequency_hz() / FWHM_PER_SIGMA,
        }
    }

    /// `|∫ S(ω) e^{iωτ} dω|` for the unit-normalised intensity `S`.
    ///
    /// Closed form `exp(-σ_ω² τ² / 2)` for the Gaussian shape, trapezoid
    /// quadrature for tabulated spectra. Always in `[0, 1]` and even in `delay`.
    pub fn spectral_overlap(&self, delay: f64) -> Result<f64> {
        if !delay.is_finite() {
            return Err(Error::Input(format!("delay must be finite, got {delay}")));
        }
        Ok(match &self.table {
            None => {
                let s = self.sigma_omega() * delay;
                (-0.5 * s * s).exp()
            }
            Some(t) => t.overlap(delay),
        })
    }
}

fn check_wavelengths(center_nm: f64, fwhm_nm: f64) -> Result<()> {
    if !(center_nm.is_finite() && center_nm > 0.0) {
        return Err(Error::InvalidProfile(format!(
            "center wavelength must be positive, got {center_nm} nm"
        )));
    }
    if !(fwhm_nm.is_finite() && fwhm_nm > 0.0) {
        return Err(Error::InvalidProfile(format!(
            "FWHM bandwidth must be positive, got {fwhm_nm} nm"
        )));
    }
    Ok(())
}

impl QuadratureTable {
    fn build(omega: &[f64], intensity: &[f64]) -> Result<Self> {
        if omega.len() != intensity.len() {
            return Err(Error::InvalidProfile(format!(
                "{} frequency samples but {} intensity samples",
                omega.len(),
                intensity.len()
            )));
        }
        if omega.len() < 2 {
            return Err(Error::InvalidProfile("need at least two samples".into()));
        }
        if omega.iter().any(|w| !w.is_finite()) || omega.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidProfile(
                "frequency grid must be finite and strictly increasing".into(),
            ));
        }
        if intensity.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidProfile(
                "intensities must be finite and non-negative".into(),
            ));
        }

        // Moments of the piecewise-linear density by the trapezoid rule on the nodes.
        let trapz = |f: &dyn Fn(usize) -> f64| -> f64 {
            omega
                .windows(2)
                .enumerate()
                .map(|(i, w)| 0.5 * (w[1] - w[0]) * (f(i) + f(i + 1)))
                .sum()
        };
        let norm = trapz(&|i| intensity[i]);
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidProfile(
                "spectrum does not integrate to a finite positive value".into(),
            ));
        }
        let mean = trapz(&|i| omega[i] * intensity[i]) / norm;
        let var = trapz(&|i| (omega[i] - mean).powi(2) * intensity[i]) / norm;
        let sigma = var.sqrt();
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidProfile("spectrum has zero width".into()));
        }

        let half = QUADRATURE_HALF_WIDTH * sigma;
        let step = 2.0 * half / (QUADRATURE_POINTS - 1) as f64;
        let mut offsets = Vec::with_capacity(QUADRATURE_POINTS);
        let mut weights = Vec::with_capacity(QUADRATURE_POINTS);
        for k in 0..QUADRATURE_POINTS {
            let off = -half + step * k as f64;
            let end = k == 0 || k == QUADRATURE_POINTS - 1;
            let w = if end { 0.5 * step } else { step };
            offsets.push(off);
            weights.push(w * interpolate(omega, intensity, mean + off));
        }
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidProfile(
                "spectrum vanishes on the quadrature grid".into(),
            ));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            offsets,
            weights,
            sigma_omega: sigma,
        })
    }

    fn overlap(&self, delay: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (off, w) in self.offsets.iter().zip(&self.weights) {
            let (s, c) = (off * delay).sin_cos();
            re += w * c;
            im += w * s;
        }
        re.hypot(im).min(1.0)
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x < xs[0] || x > xs[xs.len() - 1] {
        return 0.0;
    }
    let i = xs.partition_point(|&v| v <= x);
    if i == xs.len() {
        return ys[ys.len() - 1];
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    let t = (x - x0) / (x1 - x0);
    ys[i - 1] + t * (ys[i] - ys[i - 1])
}

/// Spectrum plus a lumped intrinsic visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceModel {
    profile: SpectralProfile,
    intrinsic_visibility: f64,
}

impl InterferenceModel {
    pub fn new(profile: SpectralProfile, intrinsic_visibility: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&intrinsic_visibility) {
            return Err(Error::config(
                "model.intrinsic_visibility",
                format!("must lie in [0, 1], got {intrinsic_visibility}"),
            ));
        }
        Ok(Self {
            profile,
            intrinsic_visibility,
        })
    }

    pub fn profile(&self) -> &SpectralProfile {
        &self.profile
    }

    pub fn intrinsic_visibility(&self) -> f64 {
        self.intrinsic_visibility
    }

    /// `xi = V · overlap(τ)²`, the weight of the bunched (indistinguishable) part.
    pub fn coalescence_weight(&self, delay: f64) -> Result<f64> {
        let o = self.profile.spectral_overlap(delay)?;
        Ok(self.intrinsic_visibility * o * o)
    }

    /// Probability that the pair leaves through different ports.
    pub fn coincidence_probability(&self, delay: f64) -> Result<f64> {
        Ok(OutcomeDistribution::from_coalescence_weight(self.coalescence_weight(delay)?).p_hv)
    }

    pub fn outcome_distribution(&self, delay: f64) -> Result<OutcomeDistribution> {
        Ok(OutcomeDistribution::from_coalescence_weight(
            self.coalescence_weight(delay)?,
        ))
    }

    /// Dip width `w` of `exp(-(τ/w)²)` in the cross-port probability, i.e. `1/σ_ω`
    /// for a Gaussian spectrum.
    pub fn dip_width(&self) -> f64 {
        1.0 / self.profile.sigma_omega()
    }
}

/// Probabilities of the three two-photon outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeDistribution {
    pub p_hh: f64,
    pub p_vv: f64,
    pub p_hv: f64,
}

impl OutcomeDistribution {
    /// Outcomes for a pair whose bunched fraction is `xi` (clamped to `[0, 1]`).
    pub fn from_coalescence_weight(xi: f64) -> Self {
        let xi = xi.clamp(0.0, 1.0);
        let p_same = 0.25 * (1.0 + xi);
        Self {
            p_hh: p_same,
            p_vv: p_same,
            p_hv: 0.5 * (1.0 - xi),
        }
    }

    pub fn sum(&self) -> f64 {
        self.p_hh + self.p_vv + self.p_hv
    }
}

/// Photons prepared in the displacer basis: each exits its own port, so every
/// pair is HV and each photon heralds the other.
pub fn heralded_distribution() -> OutcomeDistribution {
    OutcomeDistribution {
        p_hh: 0.0,
        p_vv: 0.0,
        p_hv: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_profile() -> SpectralProfile {
        SpectralProfile::gaussian(810.0, 3.0).unwrap()
    }

    #[test]
    fn unit_overlap_at_zero_delay() {
        assert_eq!(paper_profile().spectral_overlap(0.0).unwrap(), 1.0);
    }

    #[test]
    fn overlap_vanishes_far_out() {
        let p = paper_profile();
        let tau = 20.0 / p.sigma_omega();
        assert!(p.spectral_overlap(tau).unwrap() < 1e-12);
        assert!(p.spectral_overlap(-tau).unwrap() < 1e-12);
    }

    #[test]
    fn bandwidth_conversion() {
        let p = paper_profile();
        // c·3 nm / (810 nm)² ≈ 1.3708 THz
        assert!((p.fwhm_frequency_hz() - 1.370_793e12).abs() < 1e7);
        // σ_ω = 2πΔν / 2.3548
        assert!((p.sigma_omega() - 3.657_582e12).abs() < 1e7);
    }

    #[test]
    fn coincidence_probability_limits() {
        let m = InterferenceModel::new(paper_profile(), 1.0).unwrap();
        assert_eq!(m.coincidence_probability(0.0).unwrap(), 0.0);
        let m = InterferenceModel::new(paper_profile(), 0.963).unwrap();
        assert!((m.coincidence_probability(0.0).unwrap() - 0.0185).abs() < 1e-12);
        let far = 50.0 * m.dip_width();
        assert!((m.coincidence_probability(far).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn outcome_distribution_examples() {
        let d = OutcomeDistribution::from_coalescence_weight(0.0);
        assert_eq!((d.p_hh, d.p_vv, d.p_hv), (0.25, 0.25, 0.5));
        let d = OutcomeDistribution::from_coalescence_weight(1.0);
        assert_eq!((d.p_hh, d.p_vv, d.p_hv), (0.5, 0.5, 0.0));
        let d = OutcomeDistribution::from_coalescence_weight(0.5);
        assert_eq!((d.p_hh, d.p_vv, d.p_hv), (0.375, 0.375, 0.25));
    }

    #[test]
    fn heralded_is_pure_hv() {
        let d = heralded_distribution();
        assert_eq!(d.p_hv, 1.0);
        assert_eq!(d.p_hh, 0.0);
        assert_eq!(d.sum(), 1.0);
    }

    #[test]
    fn rejects_bad_profiles() {
        assert!(matches!(
            SpectralProfile::gaussian(810.0, 0.0),
            Err(Error::InvalidProfile(_))
        ));
        assert!(matches!(
            SpectralProfile::gaussian(-1.0, 3.0),
            Err(Error::InvalidProfile(_))
        ));
        let w = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            SpectralProfile::tabulated(810.0, 3.0, w.clone(), vec![0.0, 0.0, 0.0]),
            Err(Error::InvalidProfile(_))
        ));
        assert!(matches!(
            SpectralProfile::tabulated(810.0, 3.0, w.clone(), vec![1.0, -1.0, 1.0]),
            Err(Error::InvalidProfile(_))
        ));
        assert!(matches!(
            SpectralProfile::tabulated(810.0, 3.0, vec![1.0, 1.0, 3.0], vec![1.0; 3]),
            Err(Error::InvalidProfile(_))
        ));
        assert!(matches!(
            SpectralProfile::tabulated(810.0, 3.0, w, vec![1.0, f64::INFINITY, 1.0]),
            Err(Error::InvalidProfile(_))
        ));
    }

    #[test]
    fn visibility_out_of_range() {
        assert!(InterferenceModel::new(paper_profile(), 1.01).is_err());
        assert!(InterferenceModel::new(paper_profile(), -0.01).is_err());
    }

    #[test]
    fn non_finite_delay_is_an_error() {
        assert!(paper_profile().spectral_overlap(f64::NAN).is_err());
    }

    #[test]
    fn tabulated_gaussian_matches_closed_form() {
        let g = paper_profile();
        let s = g.sigma_omega();
        let w0 = g.center_angular_frequency();
        let n = 2001;
        let omega: Vec<f64> = (0..n)
            .map(|k| w0 - 10.0 * s + 20.0 * s * k as f64 / (n - 1) as f64)
            .collect();
        let intensity: Vec<f64> = omega
            .iter()
            .map(|w| (-0.5 * ((w - w0) / s).powi(2)).exp())
            .collect();
        let t = SpectralProfile::tabulated(810.0, 3.0, omega, intensity).unwrap();
        assert!((t.sigma_omega() / s - 1.0).abs() < 1e-4);
        assert_eq!(t.spectral_overlap(0.0).unwrap(), 1.0);
        for k in -10..=10 {
            let tau = 0.4 * k as f64 / s;
            let a = t.spectral_overlap(tau).unwrap();
            let b = g.spectral_overlap(tau).unwrap();
            assert!((a - b).abs() < 1e-4, "tau={tau}: {a} vs {b}");
            assert!((a - t.spectral_overlap(-tau).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn flat_top_spectrum_has_sinc_overlap() {
        // Rectangular spectrum of width Ω: |sinc(Ωτ/2)|.
        let width = 1e13;
        let n = 4001;
        let omega: Vec<f64> = (0..n)
            .map(|k| 2.3e15 + width * k as f64 / (n - 1) as f64)
            .collect();
        let t = SpectralProfile::tabulated(810.0, 3.0, omega, vec![1.0; n]).unwrap();
        let tau = 3.0 / width;
        let x = 0.5 * width * tau;
        let expected = (x.sin() / x).abs();
        let got = t.spectral_overlap(tau).unwrap();
        assert!((got - expected).abs() < 2e-3, "{got} vs {expected}");
    }
}
