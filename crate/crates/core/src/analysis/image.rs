//! Coincidence imaging of the two output modes and a two-lobe Gaussian fit.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::fit::{levenberg_marquardt, LmSettings, Model};
use crate::frame_proc::TwoPhotonEvent;
use crate::{Error, FitError, Result};

/// 2-D histogram of detection positions, counts row-major `[iy * nx + ix]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeImage {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    pub counts: Vec<f64>,
    pub total_pairs: u64,
}

impl ModeImage {
    pub fn nx(&self) -> usize {
        self.x_edges.len() - 1
    }

    pub fn ny(&self) -> usize {
        self.y_edges.len() - 1
    }

    pub fn total_counts(&self) -> f64 {
        self.counts.iter().sum()
    }

    fn x_center(&self, ix: usize) -> f64 {
        0.5 * (self.x_edges[ix] + self.x_edges[ix + 1])
    }

    fn y_center(&self, iy: usize) -> f64 {
        0.5 * (self.y_edges[iy] + self.y_edges[iy + 1])
    }
}

fn edges(extent: f64, bin: f64) -> Vec<f64> {
    let n = (extent / bin).ceil().max(1.0) as usize;
    (0..=n).map(|k| (k as f64 * bin).min(extent)).collect()
}

fn bin_of(edges: &[f64], v: f64) -> usize {
    let bin = edges[1] - edges[0];
    ((v / bin).floor().max(0.0) as usize).min(edges.len() - 2)
}

/// Histograms both photons of every pair over `[0, w) × [0, h)` pixels.
pub fn coincidence_image(
    pairs: &[TwoPhotonEvent],
    bin_size: f64,
    extent: (usize, usize),
) -> Result<ModeImage> {
    if !(bin_size.is_finite() && bin_size > 0.0) {
        return Err(Error::config("analysis.bin_size", "must be positive"));
    }
    let x_edges = edges(extent.0 as f64, bin_size);
    let y_edges = edges(extent.1 as f64, bin_size);
    let nx = x_edges.len() - 1;
    let mut counts = vec![0.0; nx * (y_edges.len() - 1)];
    for p in pairs {
        for e in [&p.event_a, &p.event_b] {
            counts[bin_of(&y_edges, e.y) * nx + bin_of(&x_edges, e.x)] += 1.0;
        }
    }
    Ok(ModeImage {
        x_edges,
        y_edges,
        counts,
        total_pairs: pairs.len() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeFit {
    /// Pixels.
    pub center: (f64, f64),
    pub center_error: (f64, f64),
    /// 1/e² intensity radius (twice the standard deviation), pixels.
    pub waist: (f64, f64),
    pub waist_error: (f64, f64),
    /// Expected number of detections in the lobe.
    pub amplitude: f64,
    pub amplitude_error: f64,
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Bin probabilities of a 1-D Gaussian and their derivatives w.r.t. centre
/// and sigma.
fn bin_integrals(edges: &[f64], c: f64, s: f64, p: &mut [f64], dc: &mut [f64], ds: &mut [f64]) {
    let mut z0 = (edges[0] - c) / s;
    let (mut cdf0, mut pdf0) = (std_normal_cdf(z0), std_normal_pdf(z0));
    for i in 0..edges.len() - 1 {
        let z1 = (edges[i + 1] - c) / s;
        let (cdf1, pdf1) = (std_normal_cdf(z1), std_normal_pdf(z1));
        p[i] = cdf1 - cdf0;
        dc[i] = -(pdf1 - pdf0) / s;
        ds[i] = -(z1 * pdf1 - z0 * pdf0) / s;
        (z0, cdf0, pdf0) = (z1, cdf1, pdf1);
    }
}

/// Two separable Gaussian lobes, parameters per lobe `[N, cx, cy, wx, wy]`.
struct TwoLobes<'a> {
    image: &'a ModeImage,
    min_waist: f64,
}

impl Model for TwoLobes<'_> {
    fn n_params(&self) -> usize {
        10
    }

    fn evaluate(&self, p: &[f64], values: &mut [f64], jac: &mut DMatrix<f64>) {
        let (nx, ny) = (self.image.nx(), self.image.ny());
        values.fill(0.0);
        let mut px = vec![0.0; nx];
        let mut pxc = vec![0.0; nx];
        let mut pxs = vec![0.0; nx];
        let mut py = vec![0.0; ny];
        let mut pyc = vec![0.0; ny];
        let mut pys = vec![0.0; ny];
        for lobe in 0..2 {
            let q = &p[5 * lobe..5 * lobe + 5];
            let (n, cx, cy, sx, sy) = (q[0], q[1], q[2], 0.5 * q[3], 0.5 * q[4]);
            bin_integrals(&self.image.x_edges, cx, sx, &mut px, &mut pxc, &mut pxs);
            bin_integrals(&self.image.y_edges, cy, sy, &mut py, &mut pyc, &mut pys);
            for iy in 0..ny {
                for ix in 0..nx {
                    let i = iy * nx + ix;
                    values[i] += n * px[ix] * py[iy];
                    let k = 5 * lobe;
                    jac[(i, k)] = px[ix] * py[iy];
                    jac[(i, k + 1)] = n * pxc[ix] * py[iy];
                    jac[(i, k + 2)] = n * px[ix] * pyc[iy];
                    jac[(i, k + 3)] = 0.5 * n * pxs[ix] * py[iy];
                    jac[(i, k + 4)] = 0.5 * n * px[ix] * pys[iy];
                }
            }
        }
    }

    fn constrain(&self, p: &mut [f64]) {
        let x_max = *self.image.x_edges.last().unwrap();
        let y_max = *self.image.y_edges.last().unwrap();
        for lobe in 0..2 {
            let q = &mut p[5 * lobe..5 * lobe + 5];
            q[0] = q[0].max(0.0);
            q[1] = q[1].clamp(0.0, x_max);
            q[2] = q[2].clamp(0.0, y_max);
            q[3] = q[3].max(self.min_waist);
            q[4] = q[4].max(self.min_waist);
        }
    }
}

/// Initial lobe parameters from the counts on one side of `split`.
fn moments(image: &ModeImage, left: bool, split: f64) -> [f64; 5] {
    let bin = image.x_edges[1] - image.x_edges[0];
    let (mut n, mut sx, mut sy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for iy in 0..image.ny() {
        let y = image.y_center(iy);
        for ix in 0..image.nx() {
            let x = image.x_center(ix);
            if (x < split) != left {
                continue;
            }
            let c = image.counts[iy * image.nx() + ix];
            n += c;
            sx += c * x;
            sy += c * y;
            sxx += c * x * x;
            syy += c * y * y;
        }
    }
    let (mx, my) = (sx / n, sy / n);
    // Sheppard's correction for the bin width, floored at a few percent of a bin.
    let var = |s2: f64, m: f64| (s2 / n - m * m - bin * bin / 12.0).max(0.01 * bin * bin);
    [n, mx, my, 2.0 * var(sxx, mx).sqrt(), 2.0 * var(syy, my).sqrt()]
}

/// Fits two Gaussian lobes to a coincidence image by Poisson maximum
/// likelihood (iteratively reweighted least squares). Lobes are returned
/// in order of increasing `x`.
pub fn fit_modes(image: &ModeImage) -> Result<[ModeFit; 2]> {
    let total = image.total_counts();
    if total <= 0.0 {
        return Err(Error::Input("coincidence image is empty".into()));
    }
    let (nx, ny) = (image.nx(), image.ny());
    let argmax = |pred: &dyn Fn(usize) -> bool| {
        (0..nx * ny)
            .filter(|&i| pred(i % nx))
            .max_by(|&a, &b| image.counts[a].total_cmp(&image.counts[b]))
    };
    let first = argmax(&|_| true).unwrap();
    let x1 = image.x_center(first % nx);
    let half_width = 0.5 * (image.x_edges[nx] - image.x_edges[0]);
    let second = argmax(&|ix| (image.x_center(ix) - x1).abs() >= half_width)
        .filter(|&i| image.counts[i] > 0.0)
        .ok_or_else(|| FitError::Degenerate("only one lobe found in the image".into()))?;
    let x2 = image.x_center(second % nx);
    let split = 0.5 * (x1 + x2);
    let a = moments(image, true, split);
    let b = moments(image, false, split);
    let mut params: Vec<f64> = a.iter().chain(&b).copied().collect();

    let bin = image.x_edges[1] - image.x_edges[0];
    let model = TwoLobes {
        image,
        min_waist: 1e-3 * bin,
    };
    let mut values = vec![0.0; nx * ny];
    let mut jac = DMatrix::zeros(nx * ny, 10);
    let mut weights: Vec<f64> = image.counts.iter().map(|&c| 1.0 / c.max(1.0)).collect();
    let mut fit = None;
    for _ in 0..50 {
        let out = levenberg_marquardt(&model, &image.counts, &weights, &params, &LmSettings::default())?;
        let shift = out
            .params
            .iter()
            .zip(&params)
            .map(|(a, b)| (a - b).abs() / (b.abs() + 1e-9))
            .fold(0.0, f64::max);
        params.clone_from(&out.params);
        fit = Some(out);
        if shift < 1e-10 {
            break;
        }
        model.evaluate(&params, &mut values, &mut jac);
        for (w, mu) in weights.iter_mut().zip(&values) {
            *w = 1.0 / mu.max(0.1);
        }
    }
    let fit = fit.expect("at least one fit round");
    let x_extent = *image.x_edges.last().unwrap();
    let y_extent = *image.y_edges.last().unwrap();

    let lobe = |k: usize| ModeFit {
        amplitude: fit.params[k],
        amplitude_error: fit.std_error(k),
        center: (fit.params[k + 1], fit.params[k + 2]),
        center_error: (fit.std_error(k + 1), fit.std_error(k + 2)),
        waist: (fit.params[k + 3], fit.params[k + 4]),
        waist_error: (fit.std_error(k + 3), fit.std_error(k + 4)),
    };
    let mut lobes = [lobe(0), lobe(5)];
    for m in &lobes {
        let finite = [m.amplitude, m.center.0, m.center.1, m.waist.0, m.waist.1]
            .iter()
            .all(|v| v.is_finite());
        if !finite || m.amplitude < 0.01 * total {
            return Err(FitError::Degenerate(format!(
                "lobe amplitude {:.3} is negligible against {total} counts",
                m.amplitude
            ))
            .into());
        }
        if m.waist.0 <= 0.25 * bin || m.waist.1 <= 0.25 * bin {
            return Err(FitError::Degenerate(format!(
                "lobe waist {:.3} x {:.3} px is below the {bin} px bin size",
                m.waist.0, m.waist.1
            ))
            .into());
        }
        if m.center_error.0 > x_extent || m.center_error.1 > y_extent {
            return Err(FitError::Degenerate("lobe position is undetermined".into()).into());
        }
    }
    if lobes[0].center.0 > lobes[1].center.0 {
        lobes.swap(0, 1);
    }
    Ok(lobes)
}
