//! Line-shape, relaxation and baseline fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LmOptions};
use crate::error::AnalysisError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Lorentzian,
    Poly3,
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: FitKind,
    pub parameters: Vec<FitParameter>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.parameters
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.value)
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.parameters
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.sigma)
    }

    fn flagged(kind: FitKind, n_points: usize, names: &[&str], message: String) -> Self {
        Self {
            kind,
            parameters: names
                .iter()
                .map(|n| FitParameter {
                    name: (*n).to_string(),
                    value: f64::NAN,
                    sigma: f64::NAN,
                })
                .collect(),
            residual_norm: f64::NAN,
            converged: false,
            iterations: 0,
            n_points,
            message: Some(message),
        }
    }
}

fn check_pairs(x: &[f64], y: &[f64], min: usize, what: &str) -> Result<(), AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::InvalidInput(format!(
            "{what}: {} abscissae but {} values",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min {
        return Err(AnalysisError::InsufficientData(format!(
            "{what} needs at least {min} points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidInput(format!(
            "{what}: non-finite sample"
        )));
    }
    Ok(())
}

fn sigmas(inverse_normal: &Option<DMatrix<f64>>, rss: f64, m: usize, n: usize) -> Vec<f64> {
    let s2 = if m > n { rss / (m - n) as f64 } else { 0.0 };
    match inverse_normal {
        Some(inv) => (0..n).map(|i| (s2 * inv[(i, i)].max(0.0)).sqrt()).collect(),
        None => vec![f64::INFINITY; n],
    }
}

const LORENTZIAN_NAMES: [&str; 5] = ["f_res_hz", "q", "amplitude", "offset", "fwhm_hz"];

/// Least-squares fit of A (f_r/2Q)^2 / ((f - f_r)^2 + (f_r/2Q)^2) + offset.
pub fn fit_lorentzian(f_hz: &[f64], s: &[f64]) -> Result<FitResult, AnalysisError> {
    check_pairs(f_hz, s, 8, "lorentzian fit")?;
    let m = f_hz.len();
    let (i_max, &s_max) = s
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let s_min = s.iter().copied().fold(f64::INFINITY, f64::min);
    let a_guess = s_max - s_min;
    if !(a_guess > 0.0) {
        return Ok(FitResult::flagged(
            FitKind::Lorentzian,
            m,
            &LORENTZIAN_NAMES,
            "flat trace: no resonance peak to fit".into(),
        ));
    }
    let half = s_min + 0.5 * a_guess;
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = i_max;
        for i in range {
            if s[i] < half {
                let t = (half - s[i]) / (s[prev] - s[i]);
                return Some(f_hz[i] + t * (f_hz[prev] - f_hz[i]));
            }
            prev = i;
        }
        None
    };
    let left = crossing(&mut (0..i_max).rev());
    let right = crossing(&mut (i_max + 1..m));
    let (Some(left), Some(right)) = (left, right) else {
        return Err(AnalysisError::InsufficientData(
            "trace does not reach half maximum on both sides of the peak".into(),
        ));
    };
    let width = right - left;
    let span = f_hz[m - 1] - f_hz[0];
    if !(width > 0.0) || span.abs() < 2.0 * width {
        return Err(AnalysisError::InsufficientData(format!(
            "trace spans {span:.4e} Hz, less than two linewidths ({width:.4e} Hz)"
        )));
    }
    let f_guess = f_hz[i_max];
    let q_guess = f_guess / width;

    let unpack = |q: &DVector<f64>| {
        (
            f_guess + width * q[0],
            q_guess * q[1].exp(),
            a_guess * q[2],
            a_guess * q[3],
        )
    };
    let eval = |q: &DVector<f64>| {
        let (fr, qf, amp, off) = unpack(q);
        let mut r = DVector::zeros(m);
        let mut j = DMatrix::zeros(m, 4);
        for i in 0..m {
            let df = f_hz[i] - fr;
            let u = 2.0 * qf * df / fr;
            let den = 1.0 + u * u;
            let val = amp / den + off;
            r[i] = val - s[i];
            let dl_du = -2.0 * amp * u / (den * den);
            let du_dfr = -2.0 * qf * f_hz[i] / (fr * fr);
            j[(i, 0)] = width * dl_du * du_dfr;
            j[(i, 1)] = dl_du * u;
            j[(i, 2)] = a_guess / den;
            j[(i, 3)] = a_guess;
        }
        (r, j)
    };
    let p0 = DVector::from_vec(vec![0.0, 0.0, 1.0, s_min / a_guess]);
    let out = levenberg_marquardt(p0, eval, &LmOptions::default());
    let (fr, qf, amp, off) = unpack(&out.params);
    let sig = sigmas(&out.inverse_normal, out.rss, m, 4);
    let sig_fr = width * sig[0];
    let sig_q = qf * sig[1];
    let fwhm = fr / qf;
    let sig_fwhm = fwhm * ((sig_fr / fr).powi(2) + (sig_q / qf).powi(2)).sqrt();
    let mut converged = out.converged;
    let mut message = out.message;
    if !(amp > 0.0 && qf > 0.0) {
        converged = false;
        message = Some(format!("degenerate solution: amplitude {amp:e}, Q {qf:e}"));
    }
    let values = [
        (fr, sig_fr),
        (qf, sig_q),
        (amp, a_guess * sig[2]),
        (off, a_guess * sig[3]),
        (fwhm, sig_fwhm),
    ];
    Ok(FitResult {
        kind: FitKind::Lorentzian,
        parameters: LORENTZIAN_NAMES
            .iter()
            .zip(values)
            .map(|(n, (v, e))| FitParameter {
                name: (*n).to_string(),
                value: v,
                sigma: e,
            })
            .collect(),
        residual_norm: out.rss.sqrt(),
        converged,
        iterations: out.iterations,
        n_points: m,
        message,
    })
}

const EXP_NAMES: [&str; 4] = ["y_inf", "amplitude", "tau_s", "t_ref_s"];

/// Least-squares fit of y_inf + A exp(-(t - t_ref) / tau), t_ref = first
/// sample time. tau is fitted through its logarithm.
pub fn fit_exponential(t_s: &[f64], y: &[f64]) -> Result<FitResult, AnalysisError> {
    check_pairs(t_s, y, 5, "exponential fit")?;
    let m = t_s.len();
    let t_ref = t_s.iter().copied().fold(f64::INFINITY, f64::min);
    let t_end = t_s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = y_max - y_min;
    if !(scale > 0.0) {
        return Ok(FitResult::flagged(
            FitKind::Exponential,
            m,
            &EXP_NAMES,
            "constant series: amplitude is zero and the time constant is unidentifiable".into(),
        ));
    }
    let span = t_end - t_ref;
    let i_last = (0..m)
        .max_by(|&a, &b| t_s[a].total_cmp(&t_s[b]))
        .expect("non-empty");
    let i_first = (0..m)
        .min_by(|&a, &b| t_s[a].total_cmp(&t_s[b]))
        .expect("non-empty");
    let y_inf_guess = y[i_last];
    let a_guess = y[i_first] - y_inf_guess;

    // log-linear regression on |y - y_inf| for the initial tau
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut count = 0.0;
    for i in 0..m {
        let dev = y[i] - y_inf_guess;
        if i != i_last && dev * a_guess > 0.0 && dev.abs() > 0.05 * a_guess.abs() {
            let x = t_s[i] - t_ref;
            let l = dev.abs().ln();
            sx += x;
            sy += l;
            sxx += x * x;
            sxy += x * l;
            count += 1.0;
        }
    }
    let slope = if count >= 2.0 {
        (count * sxy - sx * sy) / (count * sxx - sx * sx)
    } else {
        f64::NAN
    };
    let tau_guess = if slope < 0.0 && slope.is_finite() {
        -1.0 / slope
    } else {
        span / 3.0
    };

    let eval = |q: &DVector<f64>| {
        let (yi, amp, tau) = (scale * q[0], scale * q[1], q[2].exp());
        let mut r = DVector::zeros(m);
        let mut j = DMatrix::zeros(m, 3);
        for i in 0..m {
            let x = t_s[i] - t_ref;
            let e = (-x / tau).exp();
            r[i] = yi + amp * e - y[i];
            j[(i, 0)] = scale;
            j[(i, 1)] = scale * e;
            j[(i, 2)] = amp * e * x / tau;
        }
        (r, j)
    };
    let p0 = DVector::from_vec(vec![y_inf_guess / scale, a_guess / scale, tau_guess.ln()]);
    let out = levenberg_marquardt(p0, eval, &LmOptions::default());
    let sig = sigmas(&out.inverse_normal, out.rss, m, 3);
    let tau = out.params[2].exp();
    let amp = scale * out.params[1];
    let mut converged = out.converged;
    let mut message = out.message;
    if !sig[2].is_finite() || amp.abs() <= 1e-12 * scale {
        converged = false;
        message = Some("time constant unidentifiable: amplitude vanishes".into());
    } else if span < tau {
        converged = false;
        message = Some(format!(
            "data span {span:.4e} s is shorter than one time constant ({tau:.4e} s)"
        ));
    }
    let values = [
        (scale * out.params[0], scale * sig[0]),
        (amp, scale * sig[1]),
        (tau, tau * sig[2]),
        (t_ref, 0.0),
    ];
    Ok(FitResult {
        kind: FitKind::Exponential,
        parameters: EXP_NAMES
            .iter()
            .zip(values)
            .map(|(n, (v, e))| FitParameter {
                name: (*n).to_string(),
                value: v,
                sigma: e,
            })
            .collect(),
        residual_norm: out.rss.sqrt(),
        converged,
        iterations: out.iterations,
        n_points: m,
        message,
    })
}

/// Least-squares cubic f = c0 + c1 T + c2 T^2 + c3 T^3.
pub fn fit_poly3(t_k: &[f64], f: &[f64]) -> Result<FitResult, AnalysisError> {
    check_pairs(t_k, f, 1, "cubic fit")?;
    let mut distinct: Vec<f64> = t_k.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(AnalysisError::RankDeficient(format!(
            "a cubic needs at least 4 distinct temperatures, got {}",
            distinct.len()
        )));
    }
    let m = t_k.len();
    let mean = f.iter().sum::<f64>() / m as f64;
    let mut v = DMatrix::from_fn(m, 4, |i, k| t_k[i].powi(k as i32));
    let mut norms = [0.0; 4];
    for (k, norm) in norms.iter_mut().enumerate() {
        *norm = v.column(k).norm();
        v.column_mut(k).scale_mut(1.0 / *norm);
    }
    let y = DVector::from_iterator(m, f.iter().map(|x| x - mean));
    let qr = v.clone().qr();
    let r = qr.r();
    let diag_max = (0..4).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..4).any(|i| r[(i, i)].abs() <= 1e-13 * diag_max) {
        return Err(AnalysisError::RankDeficient(
            "temperatures too clustered for a cubic".into(),
        ));
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| AnalysisError::RankDeficient("singular triangular factor".into()))?;
    let resid = &v * &beta - &y;
    let rss = resid.norm_squared();
    let rtr_inv = (r.transpose() * &r).try_inverse();
    let sig = sigmas(&rtr_inv, rss, m, 4);
    let mut coeffs = [0.0; 4];
    for k in 0..4 {
        coeffs[k] = beta[k] / norms[k];
    }
    coeffs[0] += mean;
    Ok(FitResult {
        kind: FitKind::Poly3,
        parameters: (0..4)
            .map(|k| FitParameter {
                name: format!("c{k}"),
                value: coeffs[k],
                sigma: sig[k] / norms[k],
            })
            .collect(),
        residual_norm: rss.sqrt(),
        converged: true,
        iterations: 1,
        n_points: m,
        message: None,
    })
}

/// Coefficients of a cubic fit in ascending power order.
pub fn poly3_coefficients(fit: &FitResult) -> Option<[f64; 4]> {
    Some([
        fit.get("c0")?,
        fit.get("c1")?,
        fit.get("c2")?,
        fit.get("c3")?,
    ])
}

pub fn eval_poly3(c: &[f64; 4], t: f64) -> f64 {
    c[0] + t * (c[1] + t * (c[2] + t * c[3]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lorentz(f: f64, fr: f64, q: f64, a: f64, o: f64) -> f64 {
        let g = fr / (2.0 * q);
        a * g * g / ((f - fr).powi(2) + g * g) + o
    }

    #[test]
    fn lorentzian_round_trip() {
        let (fr, q) = (2.230e9, 6200.0);
        let fw = fr / q;
        let f: Vec<f64> = (0..401)
            .map(|i| fr - 5.0 * fw + f64::from(i) * 10.0 * fw / 400.0)
            .collect();
        let s: Vec<f64> = f.iter().map(|&x| lorentz(x, fr, q, 0.8, 0.01)).collect();
        let fit = fit_lorentzian(&f, &s).unwrap();
        assert!(fit.converged, "{:?}", fit.message);
        assert!((fit.get("f_res_hz").unwrap() - fr).abs() < 1.0);
        assert!((fit.get("q").unwrap() - q).abs() < 1e-4 * q);
        assert!((fit.get("fwhm_hz").unwrap() - 3.597e5).abs() < 0.001e5);
    }

    #[test]
    fn flat_trace_is_flagged() {
        let f: Vec<f64> = (0..20).map(|i| 2.23e9 + f64::from(i) * 1e4).collect();
        let s = vec![0.5; 20];
        let fit = fit_lorentzian(&f, &s).unwrap();
        assert!(!fit.converged);
        assert!(fit.message.unwrap().contains("flat"));
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            fit_lorentzian(&[1.0, 2.0], &[0.0, 1.0]),
            Err(AnalysisError::InsufficientData(_))
        ));
    }

    #[test]
    fn exponential_round_trip() {
        let t: Vec<f64> = (0..200).map(|i| 100.0 + f64::from(i) * 5.0).collect();
        let y: Vec<f64> = t
            .iter()
            .map(|&x| 3.0 - 2.0 * (-(x - 100.0) / 120.0).exp())
            .collect();
        let fit = fit_exponential(&t, &y).unwrap();
        assert!(fit.converged, "{:?}", fit.message);
        assert!((fit.get("tau_s").unwrap() - 120.0).abs() < 1e-6 * 120.0);
        assert!((fit.get("amplitude").unwrap() + 2.0).abs() < 1e-9);
        assert_eq!(fit.get("t_ref_s").unwrap(), 100.0);
    }

    #[test]
    fn constant_series_is_flagged() {
        let t: Vec<f64> = (0..10).map(f64::from).collect();
        let fit = fit_exponential(&t, &[1.0; 10]).unwrap();
        assert!(!fit.converged);
    }

    #[test]
    fn cubic_round_trip_and_exact_interpolation() {
        let c = [1.0e4, -1.5e3, -40.0, -2.5];
        let t: Vec<f64> = (0..61).map(|i| 5.0 + f64::from(i) * 0.5).collect();
        let f: Vec<f64> = t.iter().map(|&x| 2.23e9 + eval_poly3(&c, x)).collect();
        let fit = fit_poly3(&t, &f).unwrap();
        let got = poly3_coefficients(&fit).unwrap();
        assert!((got[0] - 2.23e9 - c[0]).abs() < 1e-9 * (2.23e9 + c[0]));
        for k in 1..4 {
            assert!(
                (got[k] - c[k]).abs() < 1e-9 * c[k].abs(),
                "c{k}: {} vs {}",
                got[k],
                c[k]
            );
        }
        let four = fit_poly3(&t[..4], &f[..4]).unwrap();
        assert!(four.residual_norm < 1e-6);
    }

    #[test]
    fn cubic_needs_four_temperatures() {
        assert!(matches!(
            fit_poly3(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]),
            Err(AnalysisError::RankDeficient(_))
        ));
        assert!(fit_poly3(&[1.0, 1.0, 2.0, 3.0, 3.0], &[1.0; 5]).is_err());
    }

    #[test]
    fn constant_cubic() {
        let t = [5.0, 10.0, 15.0, 20.0, 30.0];
        let fit = fit_poly3(&t, &[7.0; 5]).unwrap();
        assert_eq!(poly3_coefficients(&fit).unwrap(), [7.0, 0.0, 0.0, 0.0]);
    }
}
