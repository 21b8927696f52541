//! Weighted Levenberg-Marquardt least squares.
//!
//! Minimises `Σ w_i (y_i - f_i(p))²` for models that supply analytic
//! Jacobians. Damping uses Marquardt's diagonal scaling with a floor so that
//! parameters the data cannot see (e.g. the dip centre of a flat scan) do not
//! make the normal equations singular.

use nalgebra::{DMatrix, DVector};

use crate::FitError;

pub trait Model {
    fn n_params(&self) -> usize;

    /// Fills `values[i] = f_i(p)` and `jacobian[(i, k)] = ∂f_i/∂p_k`.
    fn evaluate(&self, params: &[f64], values: &mut [f64], jacobian: &mut DMatrix<f64>);

    /// Projects parameters back into the admissible region.
    fn constrain(&self, _params: &mut [f64]) {}
}

#[derive(Debug, Clone, Copy)]
pub struct LmSettings {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    /// Converged when every accepted step is below this, relative to `|p| + 1e-12`.
    pub step_tolerance: f64,
    /// Converged when the relative chi-square decrease is below this.
    pub chi_tolerance: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            initial_lambda: 1e-3,
            step_tolerance: 1e-12,
            chi_tolerance: 1e-15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// `(JᵀWJ)⁻¹` at the solution (pseudo-inverse when singular).
    pub covariance: DMatrix<f64>,
    pub chi_square: f64,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

impl LmOutcome {
    pub fn std_error(&self, k: usize) -> f64 {
        self.covariance[(k, k)].max(0.0).sqrt()
    }
}

fn chi_square(observed: &[f64], weights: &[f64], values: &[f64]) -> f64 {
    observed
        .iter()
        .zip(weights)
        .zip(values)
        .map(|((y, w), f)| w * (y - f) * (y - f))
        .sum()
}

pub fn levenberg_marquardt<M: Model>(
    model: &M,
    observed: &[f64],
    weights: &[f64],
    initial: &[f64],
    settings: &LmSettings,
) -> Result<LmOutcome, FitError> {
    let n = observed.len();
    let k = model.n_params();
    assert_eq!(weights.len(), n);
    assert_eq!(initial.len(), k);

    let mut params = initial.to_vec();
    model.constrain(&mut params);
    let mut values = vec![0.0; n];
    let mut jac = DMatrix::zeros(n, k);
    model.evaluate(&params, &mut values, &mut jac);
    let mut chi = chi_square(observed, weights, &values);
    if !chi.is_finite() {
        return Err(FitError::Degenerate(
            "model is not finite at the initial parameters".into(),
        ));
    }

    let mut lambda = settings.initial_lambda;
    let mut trial = vec![0.0; k];
    let mut trial_values = vec![0.0; n];
    let mut trial_jac = DMatrix::zeros(n, k);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        iterations += 1;
        let (alpha, beta) = normal_equations(&jac, observed, weights, &values);
        let diag_max = (0..k).map(|i| alpha[(i, i)]).fold(0.0, f64::max);
        if diag_max == 0.0 || chi == 0.0 {
            converged = true;
            break;
        }
        let floor = diag_max * 1e-12;

        // Inner loop: raise damping until a step lowers chi-square.
        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = alpha.clone();
            for i in 0..k {
                a[(i, i)] += lambda * alpha[(i, i)].max(floor);
            }
            let Some(step) = solve(a, &beta) else {
                lambda *= 10.0;
                continue;
            };
            for i in 0..k {
                trial[i] = params[i] + step[i];
            }
            model.constrain(&mut trial);
            model.evaluate(&trial, &mut trial_values, &mut trial_jac);
            let trial_chi = chi_square(observed, weights, &trial_values);
            if trial_chi.is_finite() && trial_chi <= chi {
                let small_step = (0..k).all(|i| {
                    (trial[i] - params[i]).abs()
                        <= settings.step_tolerance * (params[i].abs() + 1e-12)
                });
                let small_gain = chi - trial_chi <= settings.chi_tolerance * chi;
                params.copy_from_slice(&trial);
                std::mem::swap(&mut values, &mut trial_values);
                std::mem::swap(&mut jac, &mut trial_jac);
                chi = trial_chi;
                lambda = (lambda * 0.1).max(1e-15);
                accepted = true;
                if small_step || small_gain {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No direction lowers chi-square: we are at the minimum to machine precision.
            converged = true;
        }
        if converged {
            break;
        }
    }

    let residuals: Vec<f64> = observed.iter().zip(&values).map(|(y, f)| y - f).collect();
    if !converged {
        return Err(FitError::NotConverged {
            iterations,
            chi_square: chi,
            residuals,
        });
    }
    let (alpha, _) = normal_equations(&jac, observed, weights, &values);
    Ok(LmOutcome {
        params,
        covariance: invert(alpha),
        chi_square: chi,
        residuals,
        iterations,
    })
}

/// `(JᵀWJ)⁻¹` restricted to the parameters in `free`, the others held fixed.
pub fn conditional_covariance<M: Model>(
    model: &M,
    params: &[f64],
    weights: &[f64],
    free: &[usize],
) -> DMatrix<f64> {
    let n = weights.len();
    let mut values = vec![0.0; n];
    let mut jac = DMatrix::zeros(n, model.n_params());
    model.evaluate(params, &mut values, &mut jac);
    let sub = jac.select_columns(free);
    let (alpha, _) = normal_equations(&sub, &values, weights, &values);
    invert(alpha)
}

fn normal_equations(
    jac: &DMatrix<f64>,
    observed: &[f64],
    weights: &[f64],
    values: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let k = jac.ncols();
    let mut alpha = DMatrix::zeros(k, k);
    let mut beta = DVector::zeros(k);
    for i in 0..observed.len() {
        let w = weights[i];
        let r = observed[i] - values[i];
        for a in 0..k {
            let ja = jac[(i, a)] * w;
            beta[a] += ja * r;
            for b in 0..=a {
                alpha[(a, b)] += ja * jac[(i, b)];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            alpha[(b, a)] = alpha[(a, b)];
        }
    }
    (alpha, beta)
}

fn solve(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let x = match a.clone().cholesky() {
        Some(ch) => ch.solve(b),
        None => a.lu().solve(b)?,
    };
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn invert(a: DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = a.clone().cholesky() {
        return ch.inverse();
    }
    let k = a.nrows();
    a.pseudo_inverse(1e-14)
        .unwrap_or_else(|_| DMatrix::from_element(k, k, f64::INFINITY))
}
