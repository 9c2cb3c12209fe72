//! Damped Gauss-Newton (Levenberg-Marquardt) over dense residual vectors.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Converged when ||step|| <= tol * (||p|| + tol).
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_tolerance: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LmOutcome {
    pub params: DVector<f64>,
    /// (J^T J)^-1 at the solution, `None` when singular.
    pub inverse_normal: Option<DMatrix<f64>>,
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub message: Option<String>,
}

/// Minimises ||r(p)||^2. `eval` returns residuals and the Jacobian dr/dp.
pub fn levenberg_marquardt<F>(p0: DVector<f64>, mut eval: F, opts: &LmOptions) -> LmOutcome
where
    F: FnMut(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let mut p = p0;
    let (mut r, mut j) = eval(&p);
    let mut rss = r.norm_squared();
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut message = None;
    let mut iterations = 0;

    if !rss.is_finite() {
        return LmOutcome {
            params: p,
            inverse_normal: None,
            rss,
            iterations,
            converged: false,
            message: Some("non-finite residual at the initial guess".into()),
        };
    }

    while iterations < opts.max_iterations {
        iterations += 1;
        if rss == 0.0 {
            converged = true;
            break;
        }
        let jt = j.transpose();
        let jtj = &jt * &j;
        let grad = &jt * &r;
        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = -chol.solve(&grad);
            let small = step.norm() <= opts.step_tolerance * (p.norm() + opts.step_tolerance);
            let trial = &p + &step;
            let (r_new, j_new) = eval(&trial);
            let rss_new = r_new.norm_squared();
            if rss_new.is_finite() && rss_new <= rss {
                p = trial;
                r = r_new;
                j = j_new;
                let improved = rss_new < rss;
                rss = rss_new;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if small || !improved {
                    converged = true;
                }
                break;
            }
            if small {
                // No representable improvement left at this resolution.
                converged = true;
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            message = Some("damping exhausted without reducing the residual".into());
            break;
        }
    }
    if !converged && message.is_none() {
        message = Some(format!(
            "no convergence after {} iterations",
            opts.max_iterations
        ));
    }
    let jtj = j.transpose() * &j;
    let inverse_normal = jtj.try_inverse();
    LmOutcome {
        params: p,
        inverse_normal,
        rss,
        iterations,
        converged,
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_a_line_exactly() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 2.0).collect();
        let out = levenberg_marquardt(
            DVector::from_vec(vec![0.0, 0.0]),
            |p| {
                let r = DVector::from_iterator(
                    xs.len(),
                    xs.iter().zip(&ys).map(|(x, y)| p[0] * x + p[1] - y),
                );
                let j = DMatrix::from_fn(xs.len(), 2, |i, c| if c == 0 { xs[i] } else { 1.0 });
                (r, j)
            },
            &LmOptions::default(),
        );
        assert!(out.converged);
        assert!((out.params[0] - 3.0).abs() < 1e-10);
        assert!((out.params[1] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn rosenbrock_style_problem_converges() {
        let out = levenberg_marquardt(
            DVector::from_vec(vec![-1.2, 1.0]),
            |p| {
                let r = DVector::from_vec(vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]]);
                let j = DMatrix::from_row_slice(2, 2, &[-20.0 * p[0], 10.0, -1.0, 0.0]);
                (r, j)
            },
            &LmOptions::default(),
        );
        assert!(out.converged, "{:?}", out.message);
        assert!((out.params[0] - 1.0).abs() < 1e-8);
    }
}
