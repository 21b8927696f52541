//! Run configuration as flat `section.key = value` text.
//!
//! Values are kept in the units they are written in (ns, ps) so that
//! parse → serialize → parse is the identity; conversion to SI happens when
//! the owning module's config is built.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::frame_proc::{Metric, PipelineConfig};
use crate::hom::{InterferenceModel, SpectralProfile};
use crate::sim::{CameraConfig, SourceConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSettings {
    pub pair_rate: f64,
    pub singles_rate: f64,
    pub gate_time_ns: f64,
    pub delay_ps: f64,
}

impl Default for SourceSettings {
    fn default() -> Self {
        let s = SourceConfig::default();
        Self {
            pair_rate: s.pair_rate,
            singles_rate: s.singles_rate,
            gate_time_ns: 40.0,
            delay_ps: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSettings {
    pub center_wavelength_nm: f64,
    pub fwhm_bandwidth_nm: f64,
    pub intrinsic_visibility: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            center_wavelength_nm: 810.0,
            fwhm_bandwidth_nm: 3.0,
            intrinsic_visibility: 0.963,
        }
    }
}

/// Where the H/V split line comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    /// Midpoint of the lobes fitted to a heralded calibration run.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisSettings {
    pub bin_size: f64,
    pub boundary: Boundary,
    pub calibration_pairs: usize,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            bin_size: 4.0,
            boundary: Boundary::Auto,
            calibration_pairs: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSettings {
    pub frames_per_delay: u64,
    pub points: usize,
    /// Half-span of the default delay list in dip widths.
    pub span_widths: f64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        Self {
            frames_per_delay: 1_000_000,
            points: 21,
            span_widths: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads, 0 = one per core.
    pub threads: usize,
    pub output_dir: PathBuf,
    pub source: SourceSettings,
    pub model: ModelSettings,
    pub camera: CameraConfig,
    pub pipeline: PipelineConfig,
    pub analysis: AnalysisSettings,
    pub scan: ScanSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            threads: 0,
            output_dir: PathBuf::from("out"),
            source: SourceSettings::default(),
            model: ModelSettings::default(),
            camera: CameraConfig::default(),
            pipeline: PipelineConfig::default(),
            analysis: AnalysisSettings::default(),
            scan: ScanSettings::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses config text over the defaults. Unknown and repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Input(format!("config line {}: expected `key = value`", n + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "given more than once"));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        let cam = &mut self.camera;
        match key {
            "run.seed" => self.seed = parse_value(key, v)?,
            "run.threads" => self.threads = parse_value(key, v)?,
            "run.output_dir" => self.output_dir = PathBuf::from(v),
            "source.pair_rate" => self.source.pair_rate = parse_value(key, v)?,
            "source.singles_rate" => self.source.singles_rate = parse_value(key, v)?,
            "source.gate_time_ns" => self.source.gate_time_ns = parse_value(key, v)?,
            "source.delay_ps" => self.source.delay_ps = parse_value(key, v)?,
            "model.center_wavelength_nm" => self.model.center_wavelength_nm = parse_value(key, v)?,
            "model.fwhm_bandwidth_nm" => self.model.fwhm_bandwidth_nm = parse_value(key, v)?,
            "model.intrinsic_visibility" => self.model.intrinsic_visibility = parse_value(key, v)?,
            "camera.quantum_efficiency" => cam.quantum_efficiency = parse_value(key, v)?,
            "camera.pixel_pitch_um" => cam.pixel_pitch_um = parse_value(key, v)?,
            "camera.magnification" => cam.magnification = parse_value(key, v)?,
            "camera.vertical_magnification" => cam.vertical_magnification = parse_value(key, v)?,
            "camera.roi_width" => cam.roi_width = parse_value(key, v)?,
            "camera.roi_height" => cam.roi_height = parse_value(key, v)?,
            "camera.mode_center_h_x_mm" => cam.mode_center_h_mm.0 = parse_value(key, v)?,
            "camera.mode_center_h_y_mm" => cam.mode_center_h_mm.1 = parse_value(key, v)?,
            "camera.mode_center_v_x_mm" => cam.mode_center_v_mm.0 = parse_value(key, v)?,
            "camera.mode_center_v_y_mm" => cam.mode_center_v_mm.1 = parse_value(key, v)?,
            "camera.mode_waist_mm" => cam.mode_waist_mm = parse_value(key, v)?,
            "camera.flash_sigma_px" => cam.flash_sigma_px = parse_value(key, v)?,
            "camera.flash_amplitude" => cam.flash_amplitude = parse_value(key, v)?,
            "camera.amplitude_jitter" => cam.amplitude_jitter = parse_value(key, v)?,
            "camera.background_level" => cam.background_level = parse_value(key, v)?,
            "camera.read_noise" => cam.read_noise = parse_value(key, v)?,
            "camera.dark_rate" => cam.dark_rate = parse_value(key, v)?,
            "camera.crosstalk_probability" => cam.crosstalk_probability = parse_value(key, v)?,
            "camera.crosstalk_offset_px" => cam.crosstalk_offset_px = parse_value(key, v)?,
            "camera.frame_rate" => cam.frame_rate = parse_value(key, v)?,
            "camera.transmission_h" => cam.transmission.0 = parse_value(key, v)?,
            "camera.transmission_v" => cam.transmission.1 = parse_value(key, v)?,
            "pipeline.threshold" => self.pipeline.threshold = parse_value(key, v)?,
            "pipeline.min_footprint" => self.pipeline.min_footprint = parse_value(key, v)?,
            "pipeline.min_separation" => self.pipeline.min_separation = parse_value(key, v)?,
            "pipeline.metric" => {
                self.pipeline.metric = Metric::parse(v).ok_or_else(|| {
                    Error::config(key, format!("expected chebyshev or euclidean, got `{v}`"))
                })?
            }
            "analysis.bin_size" => self.analysis.bin_size = parse_value(key, v)?,
            "analysis.boundary_x" => {
                self.analysis.boundary = if v == "auto" {
                    Boundary::Auto
                } else {
                    Boundary::Fixed(parse_value(key, v)?)
                }
            }
            "analysis.calibration_pairs" => self.analysis.calibration_pairs = parse_value(key, v)?,
            "scan.frames_per_delay" => self.scan.frames_per_delay = parse_value(key, v)?,
            "scan.points" => self.scan.points = parse_value(key, v)?,
            "scan.span_widths" => self.scan.span_widths = parse_value(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let c = &self.camera;
        let boundary = match self.analysis.boundary {
            Boundary::Auto => "auto".to_string(),
            Boundary::Fixed(x) => x.to_string(),
        };
        let fields: Vec<(&str, String)> = vec![
            ("run.seed", self.seed.to_string()),
            ("run.threads", self.threads.to_string()),
            ("run.output_dir", self.output_dir.display().to_string()),
            ("source.pair_rate", self.source.pair_rate.to_string()),
            ("source.singles_rate", self.source.singles_rate.to_string()),
            ("source.gate_time_ns", self.source.gate_time_ns.to_string()),
            ("source.delay_ps", self.source.delay_ps.to_string()),
            ("model.center_wavelength_nm", self.model.center_wavelength_nm.to_string()),
            ("model.fwhm_bandwidth_nm", self.model.fwhm_bandwidth_nm.to_string()),
            ("model.intrinsic_visibility", self.model.intrinsic_visibility.to_string()),
            ("camera.quantum_efficiency", c.quantum_efficiency.to_string()),
            ("camera.pixel_pitch_um", c.pixel_pitch_um.to_string()),
            ("camera.magnification", c.magnification.to_string()),
            ("camera.vertical_magnification", c.vertical_magnification.to_string()),
            ("camera.roi_width", c.roi_width.to_string()),
            ("camera.roi_height", c.roi_height.to_string()),
            ("camera.mode_center_h_x_mm", c.mode_center_h_mm.0.to_string()),
            ("camera.mode_center_h_y_mm", c.mode_center_h_mm.1.to_string()),
            ("camera.mode_center_v_x_mm", c.mode_center_v_mm.0.to_string()),
            ("camera.mode_center_v_y_mm", c.mode_center_v_mm.1.to_string()),
            ("camera.mode_waist_mm", c.mode_waist_mm.to_string()),
            ("camera.flash_sigma_px", c.flash_sigma_px.to_string()),
            ("camera.flash_amplitude", c.flash_amplitude.to_string()),
            ("camera.amplitude_jitter", c.amplitude_jitter.to_string()),
            ("camera.background_level", c.background_level.to_string()),
            ("camera.read_noise", c.read_noise.to_string()),
            ("camera.dark_rate", c.dark_rate.to_string()),
            ("camera.crosstalk_probability", c.crosstalk_probability.to_string()),
            ("camera.crosstalk_offset_px", c.crosstalk_offset_px.to_string()),
            ("camera.frame_rate", c.frame_rate.to_string()),
            ("camera.transmission_h", c.transmission.0.to_string()),
            ("camera.transmission_v", c.transmission.1.to_string()),
            ("pipeline.threshold", self.pipeline.threshold.to_string()),
            ("pipeline.min_footprint", self.pipeline.min_footprint.to_string()),
            ("pipeline.min_separation", self.pipeline.min_separation.to_string()),
            ("pipeline.metric", self.pipeline.metric.as_str().to_string()),
            ("analysis.bin_size", self.analysis.bin_size.to_string()),
            ("analysis.boundary_x", boundary),
            ("analysis.calibration_pairs", self.analysis.calibration_pairs.to_string()),
            ("scan.frames_per_delay", self.scan.frames_per_delay.to_string()),
            ("scan.points", self.scan.points.to_string()),
            ("scan.span_widths", self.scan.span_widths.to_string()),
        ];
        let mut out = String::from("# homtwin run configuration\n");
        let mut section = "";
        for (key, value) in &fields {
            let sec = key.split('.').next().unwrap_or("");
            if sec != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = sec;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn source_config(&self) -> SourceConfig {
        SourceConfig {
            pair_rate: self.source.pair_rate,
            singles_rate: self.source.singles_rate,
            gate_time: self.source.gate_time_ns * 1e-9,
            delay: self.source.delay_ps * 1e-12,
        }
    }

    pub fn interference_model(&self) -> Result<InterferenceModel> {
        let profile =
            SpectralProfile::gaussian(self.model.center_wavelength_nm, self.model.fwhm_bandwidth_nm)?;
        InterferenceModel::new(profile, self.model.intrinsic_visibility)
    }

    /// Checks every field before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.source_config().validate()?;
        self.interference_model()?;
        self.camera.validate()?;
        self.pipeline.validate()?;
        let a = &self.analysis;
        if !(a.bin_size.is_finite() && a.bin_size > 0.0) {
            return Err(Error::config("analysis.bin_size", "must be positive"));
        }
        if let Boundary::Fixed(x) = a.boundary {
            crate::analysis::PortRegions::new(x, self.camera.roi_width)?;
        }
        if a.calibration_pairs < 2 {
            return Err(Error::config("analysis.calibration_pairs", "must be >= 2"));
        }
        if self.scan.points < 5 {
            return Err(Error::config("scan.points", "a dip fit needs at least 5 delays"));
        }
        if !(self.scan.span_widths.is_finite() && self.scan.span_widths > 0.0) {
            return Err(Error::config("scan.span_widths", "must be positive"));
        }
        Ok(())
    }
}
