//! Rendering detections into intensifier flashes on the sensor raster.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::camera::{CameraConfig, Detection};
use super::source::Origin;
use crate::frame::Frame;

/// Flash footprint is evaluated out to this many sigmas.
const FLASH_RADIUS_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flash {
    pub x: f64,
    pub y: f64,
    /// Peak counts above background.
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthPhoton {
    pub x: f64,
    pub y: f64,
    pub amplitude: f64,
    pub origin: Origin,
}

/// Ground truth for one frame: one entry per rendered flash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub frame: u64,
    pub photons: Vec<TruthPhoton>,
}

impl TruthRecord {
    pub fn count_origin(&self, pred: impl Fn(Origin) -> bool) -> usize {
        self.photons.iter().filter(|p| pred(p.origin)).count()
    }
}

/// Adds a point-sampled Gaussian flash into an `f64` accumulation buffer.
/// Pixel `(col, row)` is sampled at its center `(col + 0.5, row + 0.5)`.
pub fn add_flash(buf: &mut [f64], width: usize, height: usize, flash: &Flash, sigma: f64) {
    let r = (FLASH_RADIUS_SIGMAS * sigma).ceil();
    let c0 = (flash.x - r).floor().max(0.0) as usize;
    let c1 = ((flash.x + r).ceil() as usize).min(width);
    let r0 = (flash.y - r).floor().max(0.0) as usize;
    let r1 = ((flash.y + r).ceil() as usize).min(height);
    let inv = -0.5 / (sigma * sigma);
    // Separable weights; the row factor is computed once per row.
    let col_w: Vec<f64> = (c0..c1)
        .map(|c| {
            let dx = c as f64 + 0.5 - flash.x;
            (inv * dx * dx).exp()
        })
        .collect();
    for row in r0..r1 {
        let dy = row as f64 + 0.5 - flash.y;
        let wy = flash.amplitude * (inv * dy * dy).exp();
        let line = &mut buf[row * width + c0..row * width + c1];
        for (px, wx) in line.iter_mut().zip(&col_w) {
            *px += wy * wx;
        }
    }
}

/// Noise-free raster of the given flashes with no background.
pub fn rasterize(index: u64, flashes: &[Flash], camera: &CameraConfig) -> Frame {
    let (w, h) = (camera.roi_width, camera.roi_height);
    let mut buf = vec![0.0; w * h];
    for f in flashes {
        add_flash(&mut buf, w, h, f, camera.flash_sigma_px);
    }
    quantize(index, w, h, &buf)
}

fn quantize(index: u64, width: usize, height: usize, buf: &[f64]) -> Frame {
    let mut frame = Frame::zeros(index, width, height);
    for (px, v) in frame.pixels_mut().iter_mut().zip(buf) {
        *px = v.round().clamp(0.0, u16::MAX as f64) as u16;
    }
    frame
}

/// Draws flash amplitudes, background and read noise, and renders the frame.
///
/// Random draws happen in a fixed order (one amplitude per detection, then one
/// noise sample per pixel in raster order), so the output depends only on the
/// generator state.
pub fn render_frame<R: Rng + ?Sized>(
    index: u64,
    detections: &[Detection],
    camera: &CameraConfig,
    rng: &mut R,
) -> (Frame, TruthRecord) {
    let jitter = camera.amplitude_jitter;
    let mut photons = Vec::with_capacity(detections.len());
    let flashes: Vec<Flash> = detections
        .iter()
        .map(|d| {
            let u: f64 = rng.random();
            let amplitude = camera.flash_amplitude * (1.0 + jitter * (2.0 * u - 1.0));
            photons.push(TruthPhoton {
                x: d.x,
                y: d.y,
                amplitude,
                origin: d.origin,
            });
            Flash {
                x: d.x,
                y: d.y,
                amplitude,
            }
        })
        .collect();

    let (w, h) = (camera.roi_width, camera.roi_height);
    let mut buf = vec![camera.background_level; w * h];
    if camera.read_noise > 0.0 {
        for px in buf.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *px += camera.read_noise * n;
        }
    }
    for f in &flashes {
        add_flash(&mut buf, w, h, f, camera.flash_sigma_px);
    }
    (
        quantize(index, w, h, &buf),
        TruthRecord {
            frame: index,
            photons,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use crate::sim::source::Port;

    fn quiet_camera() -> CameraConfig {
        CameraConfig {
            background_level: 0.0,
            read_noise: 0.0,
            ..Default::default()
        }
    }

    fn det(x: f64, y: f64) -> Detection {
        Detection {
            x,
            y,
            origin: Origin::Pair(Port::H),
            pair: Some(0),
        }
    }

    #[test]
    fn no_detections_no_signal() {
        let cam = quiet_camera();
        let mut rng = SeedStream::new(1).gate_rng(0);
        let (frame, truth) = render_frame(0, &[], &cam, &mut rng);
        assert!(frame.pixels().iter().all(|&p| p == 0));
        assert!(truth.photons.is_empty());
    }

    #[test]
    fn nominal_footprint_is_about_25_pixels() {
        let cam = quiet_camera();
        let threshold = 0.25 * cam.flash_amplitude;
        let centre = Flash {
            x: cam.roi_width as f64 / 2.0,
            y: cam.roi_height as f64 / 2.0,
            amplitude: cam.flash_amplitude,
        };
        let frame = rasterize(0, &[centre], &cam);
        let footprint = frame
            .pixels()
            .iter()
            .filter(|&&p| p as f64 > threshold)
            .count();
        assert!((23..=27).contains(&footprint), "{footprint}");
    }

    #[test]
    fn separated_flashes_add() {
        let cam = quiet_camera();
        let a = Flash {
            x: 200.3,
            y: 10.2,
            amplitude: 900.0,
        };
        let b = Flash {
            x: 300.3,
            y: 11.7,
            amplitude: 1200.0,
        };
        let both = rasterize(0, &[a, b], &cam);
        let fa = rasterize(0, &[a], &cam);
        let fb = rasterize(0, &[b], &cam);
        for ((p, pa), pb) in both.pixels().iter().zip(fa.pixels()).zip(fb.pixels()) {
            assert_eq!(*p, pa + pb);
        }

        // Same check through render_frame: same generator state, same amplitudes.
        let mut r1 = SeedStream::new(8).gate_rng(0);
        let (f2, t2) = render_frame(0, &[det(200.3, 10.2), det(300.3, 11.7)], &cam, &mut r1);
        let flashes: Vec<Flash> = t2
            .photons
            .iter()
            .map(|p| Flash {
                x: p.x,
                y: p.y,
                amplitude: p.amplitude,
            })
            .collect();
        let f1a = rasterize(0, &flashes[..1], &cam);
        let f1b = rasterize(0, &flashes[1..], &cam);
        for ((p, pa), pb) in f2.pixels().iter().zip(f1a.pixels()).zip(f1b.pixels()) {
            assert_eq!(*p, pa + pb);
        }
    }

    #[test]
    fn saturates_at_16_bits() {
        let cam = quiet_camera();
        let f = Flash {
            x: 50.5,
            y: 10.5,
            amplitude: 1e6,
        };
        let frame = rasterize(0, &[f], &cam);
        assert_eq!(frame.get(50, 10), u16::MAX);
    }

    #[test]
    fn amplitude_jitter_bounds_and_truth() {
        let cam = CameraConfig::default();
        let mut rng = SeedStream::new(2).gate_rng(0);
        let dets: Vec<Detection> = (0..50).map(|i| det(10.0 + 13.0 * i as f64, 11.0)).collect();
        let (_, truth) = render_frame(3, &dets, &cam, &mut rng);
        assert_eq!(truth.frame, 3);
        assert_eq!(truth.photons.len(), dets.len());
        for p in &truth.photons {
            assert!(p.amplitude >= 700.0 && p.amplitude <= 1300.0);
        }
    }
}
