//! Small dense Levenberg–Marquardt solver for the nonlinear curve fits.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A weighted least-squares problem: minimize `sum r_i(p)^2`.
pub trait LeastSquaresProblem {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, params: &[f64], out: &mut [f64]);
    /// Row-major `n_residuals x n_params` Jacobian of the residuals.
    fn jacobian(&self, params: &[f64], out: &mut DMatrix<f64>);
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// `(J^T J)^-1` at the solution, not scaled by the residual variance.
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub ftol: f64,
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 500,
            ftol: 1e-15,
            xtol: 1e-14,
        }
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub fn levenberg_marquardt<P: LeastSquaresProblem>(problem: &P, init: &[f64], options: LmOptions) -> Result<LmReport> {
    let n = problem.n_params();
    let m = problem.n_residuals();
    if m < n {
        return Err(Error::Fit(format!("{m} residuals cannot determine {n} parameters")));
    }
    let mut p = init.to_vec();
    let mut r = vec![0.0; m];
    let mut trial_r = vec![0.0; m];
    let mut jac = DMatrix::<f64>::zeros(m, n);
    problem.residuals(&p, &mut r);
    let mut chi2 = sum_sq(&r);
    if !chi2.is_finite() {
        return Err(Error::Fit("non-finite residuals at the starting point".into()));
    }
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iterations {
        iterations += 1;
        problem.jacobian(&p, &mut jac);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
            problem.residuals(&trial, &mut trial_r);
            let trial_chi2 = sum_sq(&trial_r);
            if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                let rel_drop = (chi2 - trial_chi2) / chi2.max(1e-300);
                let step_small = step
                    .iter()
                    .zip(&p)
                    .all(|(d, x)| d.abs() <= options.xtol * (x.abs() + options.xtol));
                p = trial;
                std::mem::swap(&mut r, &mut trial_r);
                chi2 = trial_chi2;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel_drop < options.ftol || step_small || chi2 == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: already at the minimum to
            // working precision.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::Fit(format!(
            "no convergence after {iterations} iterations (chi2 = {chi2:e})"
        )));
    }
    problem.jacobian(&p, &mut jac);
    let jtj = jac.transpose() * &jac;
    let covariance = jtj
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular normal matrix at the solution".into()))?;
    Ok(LmReport {
        params: p,
        covariance,
        chi2,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct ExpDecay {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquaresProblem for ExpDecay {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for ((o, x), y) in out.iter_mut().zip(&self.x).zip(&self.y) {
                *o = p[0] * (-x / p[1]).exp() - y;
            }
        }
        fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
            for (i, x) in self.x.iter().enumerate() {
                let e = (-x / p[1]).exp();
                out[(i, 0)] = e;
                out[(i, 1)] = p[0] * e * x / (p[1] * p[1]);
            }
        }
    }

    #[test]
    fn recovers_exact_parameters() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let y = x.iter().map(|x| 3.0 * (-x / 1.7f64).exp()).collect();
        let rep = levenberg_marquardt(&ExpDecay { x, y }, &[1.0, 0.5], LmOptions::default()).unwrap();
        assert!((rep.params[0] - 3.0).abs() < 1e-9);
        assert!((rep.params[1] - 1.7).abs() < 1e-9);
    }

    #[test]
    fn underdetermined_is_an_error() {
        let p = ExpDecay {
            x: vec![1.0],
            y: vec![1.0],
        };
        assert!(levenberg_marquardt(&p, &[1.0, 1.0], LmOptions::default()).is_err());
    }
}
