//! Correlation, logarithmic histograms and line-shape asymmetry.

use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::InvalidInput(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(AnalysisError::InsufficientData(
            "correlation needs at least 2 pairs".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::Undefined(
            "one of the samples is constant".into(),
        ));
    }
    if !(sxx.is_finite() && syy.is_finite() && sxy.is_finite()) {
        return Err(AnalysisError::InvalidInput("non-finite sample".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHistogram {
    pub edges_m: Vec<f64>,
    pub counts: Vec<usize>,
    /// Non-positive (or non-finite) inputs left out of the bins.
    pub excluded: usize,
}

impl LogHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Histogram on log10(d) with bins `decades_per_bin` wide, edges aligned to
/// multiples of the bin width.
pub fn histogram_log(d: &[f64], decades_per_bin: f64) -> Result<LogHistogram, AnalysisError> {
    if !(decades_per_bin > 0.0 && decades_per_bin.is_finite()) {
        return Err(AnalysisError::InvalidInput(format!(
            "bin width must be positive, got {decades_per_bin}"
        )));
    }
    let logs: Vec<f64> = d
        .iter()
        .filter(|v| **v > 0.0 && v.is_finite())
        .map(|v| v.log10())
        .collect();
    let excluded = d.len() - logs.len();
    if logs.is_empty() {
        return Ok(LogHistogram {
            edges_m: Vec::new(),
            counts: Vec::new(),
            excluded,
        });
    }
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = (lo / decades_per_bin).floor();
    let bins = (((hi / decades_per_bin).floor() - start) as usize + 1).max(1);
    let mut counts = vec![0; bins];
    for l in &logs {
        let idx = ((l / decades_per_bin).floor() - start) as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    let edges_m = (0..=bins)
        .map(|i| 10f64.powf((start + i as f64) * decades_per_bin))
        .collect();
    Ok(LogHistogram {
        edges_m,
        counts,
        excluded,
    })
}

/// Decades between the largest and smallest positive value.
pub fn decades_spanned(d: &[f64]) -> Option<f64> {
    let pos: Vec<f64> = d.iter().copied().filter(|v| *v > 0.0).collect();
    if pos.is_empty() {
        return None;
    }
    let lo = pos.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((hi / lo).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineShape {
    pub peak_hz: f64,
    pub fwhm_hz: f64,
    pub midpoint_hz: f64,
    /// (half-maximum midpoint - peak) / FWHM.
    pub asymmetry: f64,
}

/// Peak position, FWHM and asymmetry of a sampled transmission peak.
pub fn line_shape(f_hz: &[f64], s: &[f64]) -> Result<LineShape, AnalysisError> {
    if f_hz.len() != s.len() || f_hz.len() < 5 {
        return Err(AnalysisError::InsufficientData(
            "line shape needs at least 5 samples".into(),
        ));
    }
    let (i, &top) = s
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let floor = s.iter().copied().fold(f64::INFINITY, f64::min);
    if !(top > floor) {
        return Err(AnalysisError::InvalidInput("flat trace".into()));
    }
    let peak_hz = if i > 0 && i + 1 < s.len() {
        // vertex of the parabola through the three top samples
        let (x0, x1, x2) = (f_hz[i - 1], f_hz[i], f_hz[i + 1]);
        let (y0, y1, y2) = (s[i - 1], s[i], s[i + 1]);
        let den = (x0 - x1) * (x0 - x2) * (x1 - x2);
        let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den;
        let b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / den;
        if a < 0.0 {
            (-b / (2.0 * a)).clamp(x0, x2)
        } else {
            x1
        }
    } else {
        f_hz[i]
    };
    let half = floor + 0.5 * (top - floor);
    let walk = |indices: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = i;
        for j in indices {
            if s[j] < half {
                let t = (half - s[j]) / (s[prev] - s[j]);
                return Some(f_hz[j] + t * (f_hz[prev] - f_hz[j]));
            }
            prev = j;
        }
        None
    };
    let left = walk(&mut (0..i).rev()).ok_or_else(|| {
        AnalysisError::InsufficientData("no half-maximum crossing below the peak".into())
    })?;
    let right = walk(&mut (i + 1..s.len())).ok_or_else(|| {
        AnalysisError::InsufficientData("no half-maximum crossing above the peak".into())
    })?;
    let fwhm = right - left;
    let mid = 0.5 * (left + right);
    Ok(LineShape {
        peak_hz,
        fwhm_hz: fwhm,
        midpoint_hz: mid,
        asymmetry: (mid - peak_hz) / fwhm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_correlations() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &z).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            pearson(&x, &[1.0; 20]),
            Err(AnalysisError::Undefined(_))
        ));
    }

    #[test]
    fn histogram_single_value_and_exclusions() {
        let h = histogram_log(&[3e-8], 0.25).unwrap();
        assert_eq!(h.counts, vec![1]);
        let h = histogram_log(&[1e-9, 0.0, -1.0, 1e-6, 1e-7], 0.5).unwrap();
        assert_eq!(h.total(), 3);
        assert_eq!(h.excluded, 2);
        assert_eq!(h.edges_m.len(), h.counts.len() + 1);
    }

    #[test]
    fn symmetric_line_has_no_asymmetry() {
        let f: Vec<f64> = (0..2001).map(|i| f64::from(i - 1000) * 0.01).collect();
        let s: Vec<f64> = f.iter().map(|x| 1.0 / (1.0 + x * x)).collect();
        let l = line_shape(&f, &s).unwrap();
        assert!(l.asymmetry.abs() < 1e-9);
        // half maximum is measured from the lowest sample
        let floor: f64 = 1.0 / 101.0;
        let half = floor + 0.5 * (1.0 - floor);
        assert!((l.fwhm_hz - 2.0 * (1.0 / half - 1.0).sqrt()).abs() < 1e-4);
    }
}
