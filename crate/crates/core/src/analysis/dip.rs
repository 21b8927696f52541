//! Gaussian HOM-dip fit to the HV coincidence counts of a delay scan.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use super::{DipScan, PairTally};
use crate::fit::{conditional_covariance, levenberg_marquardt, LmSettings, Model};
use crate::rng::SeedStream;
use crate::{Error, Result};

/// Minimum number of scan points for a four-parameter fit.
const MIN_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DipFit {
    pub visibility: f64,
    pub visibility_error: f64,
    /// Seconds.
    pub center: f64,
    pub center_error: f64,
    /// 1/e half-width `w` of `exp(-(τ-τ0)²/w²)`, seconds.
    pub width: f64,
    pub width_error: f64,
    pub baseline: f64,
    pub baseline_error: f64,
    /// `1 - min(C_HV) / B̂`, with B̂ from the points farthest from the centre.
    pub raw_visibility: f64,
    pub chi_square: f64,
    pub dof: usize,
}

/// `C(u) = B (1 - V exp(-(u - c)² / w²))` in normalised delay `u`.
struct DipModel {
    u: Vec<f64>,
    /// Narrower dips fall between samples and cannot be resolved.
    min_width: f64,
}

impl Model for DipModel {
    fn n_params(&self) -> usize {
        4
    }

    fn evaluate(&self, p: &[f64], values: &mut [f64], jac: &mut DMatrix<f64>) {
        let [b, v, c, w] = [p[0], p[1], p[2], p[3]];
        for (i, &u) in self.u.iter().enumerate() {
            let d = u - c;
            let g = (-(d * d) / (w * w)).exp();
            values[i] = b * (1.0 - v * g);
            jac[(i, 0)] = 1.0 - v * g;
            jac[(i, 1)] = -b * g;
            jac[(i, 2)] = -b * v * g * 2.0 * d / (w * w);
            jac[(i, 3)] = -b * v * g * 2.0 * d * d / (w * w * w);
        }
    }

    fn constrain(&self, p: &mut [f64]) {
        p[2] = p[2].clamp(-1.0, 1.0);
        p[3] = p[3].clamp(self.min_width, 10.0);
    }
}

/// Mean of the `round(0.2 n)` values farthest from `center` (at least one).
fn wing_baseline(x: &[f64], y: &[f64], center: f64) -> f64 {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        (x[b] - center)
            .abs()
            .total_cmp(&(x[a] - center).abs())
    });
    let k = ((0.2 * x.len() as f64).round() as usize).max(1);
    idx[..k].iter().map(|&i| y[i]).sum::<f64>() / k as f64
}

pub fn fit_dip(scan: &DipScan) -> Result<DipFit> {
    let n = scan.len();
    if n < MIN_POINTS {
        return Err(Error::Input(format!(
            "dip fit needs at least {MIN_POINTS} delays, got {n}"
        )));
    }
    let pts = scan.points();
    let t: Vec<f64> = pts.iter().map(|p| p.delay).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.c_hv as f64).collect();
    if y.iter().all(|&v| v == 0.0) {
        return Err(Error::Input("no HV coincidences in the scan".into()));
    }
    let mid = 0.5 * (t[0] + t[n - 1]);
    let half = 0.5 * (t[n - 1] - t[0]);
    let u: Vec<f64> = t.iter().map(|&x| (x - mid) / half).collect();

    let (i_min, &y_min) = y
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty scan");
    let b0 = wing_baseline(&u, &y, u[i_min]).max(1.0);
    let v0 = (1.0 - y_min / b0).clamp(0.0, 1.0);
    // Half-depth width from the points below mid-depth; w = HWHM / sqrt(ln 2).
    let below = y.iter().filter(|&&v| v < b0 * (1.0 - 0.5 * v0)).count();
    let spacing = 2.0 / (n - 1) as f64;
    let w0 = if v0 > 0.05 && below > 0 {
        (0.5 * below as f64 * spacing / std::f64::consts::LN_2.sqrt()).max(spacing)
    } else {
        0.3
    };

    let weights: Vec<f64> = y.iter().map(|&v| 1.0 / v.max(1.0)).collect();
    let model = DipModel {
        u,
        min_width: 0.5 * spacing,
    };
    let out = levenberg_marquardt(
        &model,
        &y,
        &weights,
        &[b0, v0, model.u[i_min], w0],
        &LmSettings::default(),
    )?;
    let p = &out.params;
    // With the width pinned at its bound the centre and width are not
    // determined; quote baseline and depth errors at fixed shape.
    let (baseline_error, visibility_error) = if p[3] <= model.min_width * (1.0 + 1e-9) {
        let c = conditional_covariance(&model, p, &weights, &[0, 1]);
        (c[(0, 0)].max(0.0).sqrt(), c[(1, 1)].max(0.0).sqrt())
    } else {
        (out.std_error(0), out.std_error(1))
    };
    let center = mid + p[2] * half;
    let b_wing = wing_baseline(&t, &y, center);
    let raw_visibility = if b_wing > 0.0 { 1.0 - y_min / b_wing } else { f64::NAN };

    Ok(DipFit {
        visibility: p[1],
        visibility_error,
        center,
        center_error: out.std_error(2) * half,
        width: p[3] * half,
        width_error: out.std_error(3) * half,
        baseline: p[0],
        baseline_error,
        raw_visibility,
        chi_square: out.chi_square,
        dof: n - 4,
    })
}

/// Spread of the fitted visibility over `resamples` parametric bootstrap
/// scans, each count redrawn from a Poisson law with the observed mean.
/// Resample `k` draws from `stream.gate_rng(k)`. Failed refits are skipped.
pub fn bootstrap_visibility_error(scan: &DipScan, resamples: usize, stream: SeedStream) -> Result<f64> {
    let redraw = |mean: u64, rng: &mut crate::rng::GateRng| -> u64 {
        if mean == 0 {
            0
        } else {
            Poisson::new(mean as f64).expect("positive mean").sample(rng) as u64
        }
    };
    let vs: Vec<f64> = (0..resamples as u64)
        .into_par_iter()
        .filter_map(|k| {
            let mut rng = stream.gate_rng(k);
            let points = scan
                .points()
                .iter()
                .map(|p| PairTally {
                    delay: p.delay,
                    c_hh: p.c_hh,
                    c_vv: p.c_vv,
                    c_hv: redraw(p.c_hv, &mut rng),
                })
                .collect();
            fit_dip(&DipScan::new(points).ok()?).ok().map(|f| f.visibility)
        })
        .collect();
    if vs.len() < 2 {
        return Err(Error::Input("bootstrap needs at least two successful refits".into()));
    }
    let n = vs.len() as f64;
    let mean = vs.iter().sum::<f64>() / n;
    Ok((vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan_from(f: impl Fn(f64) -> f64, delays: &[f64]) -> DipScan {
        DipScan::new(
            delays
                .iter()
                .map(|&d| PairTally {
                    delay: d,
                    c_hh: 0,
                    c_vv: 0,
                    c_hv: f(d).round() as u64,
                })
                .collect(),
        )
        .unwrap()
    }

    fn delays(n: usize, span: f64) -> Vec<f64> {
        (0..n)
            .map(|i| -span + 2.0 * span * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn recovers_a_clean_dip() {
        let w = 0.4e-12;
        let tau0 = 0.05e-12;
        let f = |t: f64| 1e6 * (1.0 - 0.9 * (-((t - tau0) / w).powi(2)).exp());
        let fit = fit_dip(&scan_from(f, &delays(31, 1.2e-12))).unwrap();
        assert!((fit.visibility - 0.9).abs() < 1e-4, "{fit:?}");
        assert!((fit.center - tau0).abs() < 1e-16);
        assert!((fit.width - w).abs() / w < 1e-4);
        assert!((fit.baseline - 1e6).abs() / 1e6 < 1e-5);
        assert_eq!(fit.dof, 27);
    }

    #[test]
    fn flat_scan_has_zero_visibility() {
        let fit = fit_dip(&scan_from(|_| 5000.0, &delays(11, 1e-12))).unwrap();
        assert!(fit.visibility.abs() < 1e-9, "{fit:?}");
        assert!(fit.raw_visibility.abs() < 1e-12);
        assert!(fit.visibility_error.is_finite());
    }

    #[test]
    fn noisy_flat_scan_keeps_a_finite_error() {
        let counts = [270.0, 251.0, 288.0, 262.0, 240.0, 281.0, 259.0, 266.0, 275.0];
        let d = delays(9, 1e-12);
        let fit = fit_dip(&scan_from(|t| counts[d.iter().position(|&x| x == t).unwrap()], &d)).unwrap();
        assert!(fit.visibility_error > 0.01 && fit.visibility_error.is_finite(), "{fit:?}");
        assert!(fit.visibility.abs() < 3.0 * fit.visibility_error, "{fit:?}");
        assert!(fit.width >= 0.5 * 0.25e-12 * (1.0 - 1e-9));
    }

    #[test]
    fn too_few_points() {
        let err = fit_dip(&scan_from(|_| 10.0, &delays(4, 1e-12))).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn bootstrap_matches_covariance_error() {
        let f = |t: f64| 3000.0 * (1.0 - 0.95 * (-(t / 0.4e-12).powi(2)).exp());
        let scan = scan_from(f, &delays(21, 1.2e-12));
        let fit = fit_dip(&scan).unwrap();
        let boot = bootstrap_visibility_error(&scan, 400, SeedStream::new(3)).unwrap();
        let r = boot / fit.visibility_error;
        assert!((0.8..1.25).contains(&r), "bootstrap {boot} vs covariance {}", fit.visibility_error);
    }
}
