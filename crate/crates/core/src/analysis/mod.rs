//! Measurement-side pipeline: fits, baseline correction, thickness
//! inversion and campaign statistics.

pub mod fits;
pub mod lm;
pub mod stats;

pub use fits::{
    eval_poly3, fit_exponential, fit_lorentzian, fit_poly3, poly3_coefficients, FitKind,
    FitParameter, FitResult,
};
pub use stats::{decades_spanned, histogram_log, line_shape, pearson, LineShape, LogHistogram};

use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::film::{MaterialProps, Morphology};
use crate::resonator::ResonatorModel;
use crate::thermo::Branch;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineCorrection {
    pub df_hz: f64,
    /// The temperature lies outside the range the cubic was fitted over.
    pub extrapolated: bool,
}

/// Removes the temperature baseline `coeffs` (absolute cubic in T) from a
/// measured frequency.
pub fn correct_baseline(
    f_meas_hz: f64,
    t_k: f64,
    coeffs: &[f64; 4],
    range_k: [f64; 2],
) -> BaselineCorrection {
    BaselineCorrection {
        df_hz: f_meas_hz - eval_poly3(coeffs, t_k),
        extrapolated: t_k < range_k[0] || t_k > range_k[1],
    }
}

/// Film thickness that produces `shift` (Delta f / f), found by bisection on
/// the monotone forward model.
pub fn invert_thickness(
    shift: f64,
    phase: Branch,
    morphology: Morphology,
    model: &ResonatorModel,
    props: &MaterialProps,
) -> Result<f64, AnalysisError> {
    if !shift.is_finite() || shift > 0.0 {
        return Err(AnalysisError::InvalidInput(format!(
            "film shifts are non-positive, got {shift:e}"
        )));
    }
    let max = model.max_shift_magnitude(phase, props);
    if -shift >= max {
        return Err(AnalysisError::Saturation {
            shift,
            max_magnitude: max,
        });
    }
    if shift == 0.0 {
        return Ok(0.0);
    }
    let forward = |d: f64| model.fractional_shift(d, phase, morphology, props);
    let mut lo = 0.0;
    let mut hi = model.participation.lambda_m;
    while forward(hi) > shift {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(AnalysisError::Saturation {
                shift,
                max_magnitude: max,
            });
        }
    }
    for _ in 0..2000 {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if forward(mid) > shift {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (flo, fhi) = (forward(lo), forward(hi));
    Ok(if (flo - shift).abs() <= (fhi - shift).abs() {
        lo
    } else {
        hi
    })
}
