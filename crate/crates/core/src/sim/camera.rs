//! Detector geometry and the photon-to-detection chain.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::source::{Origin, Port};
use crate::{Error, Result};

const MAX_POSITION_ATTEMPTS: usize = 100;

/// Intensified-camera model. Physical positions are at the displacer exit face,
/// with the origin imaged onto the ROI corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraConfig {
    pub quantum_efficiency: f64,
    pub pixel_pitch_um: f64,
    /// Horizontal magnification onto the sensor.
    pub magnification: f64,
    /// Vertical magnification (the stripe is squeezed by a cylindrical lens).
    pub vertical_magnification: f64,
    pub roi_width: usize,
    pub roi_height: usize,
    pub mode_center_h_mm: (f64, f64),
    pub mode_center_v_mm: (f64, f64),
    /// 1/e² intensity radius of each mode; position std is half of it.
    pub mode_waist_mm: f64,
    pub flash_sigma_px: f64,
    /// Nominal flash peak above background, counts.
    pub flash_amplitude: f64,
    /// Relative half-width of the uniform flash-amplitude jitter.
    pub amplitude_jitter: f64,
    pub background_level: f64,
    /// Gaussian read noise, counts rms.
    pub read_noise: f64,
    /// Thermal events per second over the whole ROI.
    pub dark_rate: f64,
    pub crosstalk_probability: f64,
    pub crosstalk_offset_px: f64,
    pub frame_rate: f64,
    /// Transmission of the H and V paths after the displacer.
    pub transmission: (f64, f64),
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            quantum_efficiency: 0.23,
            pixel_pitch_um: 6.5,
            magnification: 1.1,
            vertical_magnification: 0.11,
            roi_width: 700,
            roi_height: 22,
            mode_center_h_mm: (0.47, 0.65),
            mode_center_v_mm: (3.67, 0.65),
            mode_waist_mm: 0.35,
            flash_sigma_px: 1.7,
            flash_amplitude: 1000.0,
            amplitude_jitter: 0.3,
            background_level: 100.0,
            read_noise: 3.0,
            dark_rate: 0.0,
            crosstalk_probability: 0.05,
            crosstalk_offset_px: 6.0,
            frame_rate: 7000.0,
            transmission: (1.0, 1.0),
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64, field: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(field, format!("must lie in [0, 1], got {v}")))
            }
        };
        let positive = |v: f64, field: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {v}")))
            }
        };
        let non_negative = |v: f64, field: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be >= 0, got {v}")))
            }
        };
        unit(self.quantum_efficiency, "camera.quantum_efficiency")?;
        positive(self.pixel_pitch_um, "camera.pixel_pitch_um")?;
        positive(self.magnification, "camera.magnification")?;
        positive(self.vertical_magnification, "camera.vertical_magnification")?;
        for (v, field) in [
            (self.roi_width, "camera.roi_width"),
            (self.roi_height, "camera.roi_height"),
        ] {
            if v == 0 || v > u16::MAX as usize {
                return Err(Error::config(field, format!("must be in 1..=65535, got {v}")));
            }
        }
        non_negative(self.mode_waist_mm, "camera.mode_waist_mm")?;
        positive(self.flash_sigma_px, "camera.flash_sigma_px")?;
        positive(self.flash_amplitude, "camera.flash_amplitude")?;
        if !(0.0..1.0).contains(&self.amplitude_jitter) {
            return Err(Error::config(
                "camera.amplitude_jitter",
                format!("must lie in [0, 1), got {}", self.amplitude_jitter),
            ));
        }
        non_negative(self.background_level, "camera.background_level")?;
        non_negative(self.read_noise, "camera.read_noise")?;
        non_negative(self.dark_rate, "camera.dark_rate")?;
        unit(self.crosstalk_probability, "camera.crosstalk_probability")?;
        non_negative(self.crosstalk_offset_px, "camera.crosstalk_offset_px")?;
        positive(self.frame_rate, "camera.frame_rate")?;
        unit(self.transmission.0, "camera.transmission_h")?;
        unit(self.transmission.1, "camera.transmission_v")?;
        for port in [Port::H, Port::V] {
            let (x, y) = self.mode_center_px(port);
            if !self.contains(x, y) {
                let field = match port {
                    Port::H => "camera.mode_center_h",
                    Port::V => "camera.mode_center_v",
                };
                return Err(Error::config(
                    field,
                    format!(
                        "maps to sensor ({x:.2}, {y:.2}) px, outside the {}x{} ROI",
                        self.roi_width, self.roi_height
                    ),
                ));
            }
        }
        Ok(())
    }

    fn pitch_mm(&self) -> f64 {
        self.pixel_pitch_um * 1e-3
    }

    /// Physical position (mm) to sensor pixels.
    pub fn to_sensor(&self, x_mm: f64, y_mm: f64) -> (f64, f64) {
        (
            x_mm * self.magnification / self.pitch_mm(),
            y_mm * self.vertical_magnification / self.pitch_mm(),
        )
    }

    pub fn mode_center_px(&self, port: Port) -> (f64, f64) {
        let (x, y) = match port {
            Port::H => self.mode_center_h_mm,
            Port::V => self.mode_center_v_mm,
        };
        self.to_sensor(x, y)
    }

    /// Position standard deviation of a mode on the sensor, per axis.
    pub fn mode_sigma_px(&self) -> (f64, f64) {
        let s = 0.5 * self.mode_waist_mm;
        (
            s * self.magnification / self.pitch_mm(),
            s * self.vertical_magnification / self.pitch_mm(),
        )
    }

    /// Mode waist (1/e² radius) on the sensor, per axis.
    pub fn mode_waist_px(&self) -> (f64, f64) {
        let (sx, sy) = self.mode_sigma_px();
        (2.0 * sx, 2.0 * sy)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.roi_width as f64 && y < self.roi_height as f64
    }

    pub fn transmission_of(&self, port: Port) -> f64 {
        match port {
            Port::H => self.transmission.0,
            Port::V => self.transmission.1,
        }
    }
}

/// A photoelectron event at a subpixel sensor position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub origin: Origin,
    pub pair: Option<u32>,
}

/// Samples the landing position of a photon leaving through `port`.
///
/// Draws from the mode's 2D Gaussian mapped onto the sensor; samples outside
/// the ROI are redrawn (up to 100 attempts, then clamped inside).
pub fn position_of<R: Rng + ?Sized>(
    port: Port,
    camera: &CameraConfig,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let (cx, cy) = camera.mode_center_px(port);
    if !camera.contains(cx, cy) {
        return Err(Error::config(
            "camera.mode_center",
            format!("port {port:?} maps to ({cx:.2}, {cy:.2}) px outside the ROI"),
        ));
    }
    Ok(sample_position(port, camera, rng))
}

pub(crate) fn sample_position<R: Rng + ?Sized>(
    port: Port,
    camera: &CameraConfig,
    rng: &mut R,
) -> (f64, f64) {
    let (cx, cy) = camera.mode_center_px(port);
    let (sx, sy) = camera.mode_sigma_px();
    let mut last = (cx, cy);
    for _ in 0..MAX_POSITION_ATTEMPTS {
        let dx: f64 = StandardNormal.sample(rng);
        let dy: f64 = StandardNormal.sample(rng);
        last = (cx + sx * dx, cy + sy * dy);
        if camera.contains(last.0, last.1) {
            return last;
        }
    }
    let w = camera.roi_width as f64;
    let h = camera.roi_height as f64;
    (last.0.clamp(0.0, w.next_down()), last.1.clamp(0.0, h.next_down()))
}

/// Independent Bernoulli thinning with survival probability `quantum_efficiency`.
pub fn apply_efficiency<T, R: Rng + ?Sized>(
    mut items: Vec<T>,
    quantum_efficiency: f64,
    rng: &mut R,
) -> Vec<T> {
    items.retain(|_| rng.random::<f64>() < quantum_efficiency);
    items
}

/// Each detection spawns, with the configured probability, a spurious flash
/// `crosstalk_offset_px` away in a uniformly random direction. Spurious flashes
/// landing outside the ROI are lost.
pub fn inject_crosstalk<R: Rng + ?Sized>(
    mut detections: Vec<Detection>,
    camera: &CameraConfig,
    rng: &mut R,
) -> Vec<Detection> {
    let p = camera.crosstalk_probability;
    if p == 0.0 {
        return detections;
    }
    let n = detections.len();
    for i in 0..n {
        if rng.random::<f64>() < p {
            let theta = TAU * rng.random::<f64>();
            let (s, c) = theta.sin_cos();
            let d = detections[i];
            let x = d.x + camera.crosstalk_offset_px * c;
            let y = d.y + camera.crosstalk_offset_px * s;
            if camera.contains(x, y) {
                detections.push(Detection {
                    x,
                    y,
                    origin: Origin::Crosstalk,
                    pair: None,
                });
            }
        }
    }
    detections
}
