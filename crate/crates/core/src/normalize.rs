//! Z-score standardization and sigmoid compression.
//!
//! Every standardization in the pipeline goes through [`zscore`], which uses the
//! population standard deviation (divide by `n`). A vector whose entries are all
//! equal standardizes to all zeros, so a degenerate cohort compresses to `0.5`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default compression coefficient for productivity (publication) metrics.
pub const DEFAULT_K_PRODUCTIVITY: f64 = 0.5;
/// Default compression coefficient for public attention metrics.
pub const DEFAULT_K_ATTENTION: f64 = 0.7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormalizeError {
    #[error("cannot standardize an empty vector")]
    Empty,
    #[error("value at index {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("value at index {index} is negative ({value})")]
    Negative { index: usize, value: f64 },
    #[error("compression coefficient must be finite and positive, got {0}")]
    InvalidK(f64),
}

/// Sigmoid steepness for the two metric families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressionParams {
    pub k_productivity: f64,
    pub k_attention: f64,
}

impl Default for CompressionParams {
    fn default() -> Self {
        Self {
            k_productivity: DEFAULT_K_PRODUCTIVITY,
            k_attention: DEFAULT_K_ATTENTION,
        }
    }
}

impl CompressionParams {
    pub fn validate(&self) -> Result<(), NormalizeError> {
        check_k(self.k_productivity)?;
        check_k(self.k_attention)
    }
}

fn check_k(k: f64) -> Result<(), NormalizeError> {
    if k.is_finite() && k > 0.0 {
        Ok(())
    } else {
        Err(NormalizeError::InvalidK(k))
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<(), NormalizeError> {
    if values.is_empty() {
        return Err(NormalizeError::Empty);
    }
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(NormalizeError::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// Population z-scores. All-equal input maps to all zeros.
pub fn zscore(values: &[f64]) -> Result<Vec<f64>, NormalizeError> {
    check_finite(values)?;
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return Ok(vec![0.0; values.len()]);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 || !std.is_finite() {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// `1 / (1 + e^(-k·x))`, kept strictly inside the open unit interval.
pub fn sigmoid_compress(x: f64, k: f64) -> Result<f64, NormalizeError> {
    if !x.is_finite() {
        return Err(NormalizeError::NonFinite { index: 0, value: x });
    }
    check_k(k)?;
    Ok(sigmoid_unchecked(x, k))
}

pub(crate) fn sigmoid_unchecked(x: f64, k: f64) -> f64 {
    let y = 1.0 / (1.0 + (-k * x).exp());
    // Saturation at extreme k·x would otherwise round to exactly 0 or 1.
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `sigmoid_compress(zscore(values), k)`, elementwise.
pub fn standardize_metric(values: &[f64], k: f64) -> Result<Vec<f64>, NormalizeError> {
    check_k(k)?;
    Ok(zscore(values)?.into_iter().map(|z| sigmoid_unchecked(z, k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_std(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
        (m, s)
    }

    #[test]
    fn zscore_of_one_two_three() {
        let z = zscore(&[1.0, 2.0, 3.0]).unwrap();
        let r = (1.5f64).sqrt();
        assert!((z[0] + r).abs() < 1e-12);
        assert_eq!(z[1], 0.0);
        assert!((z[2] - r).abs() < 1e-12);
        assert!((z[2] - 1.224_744_871).abs() < 1e-9);
    }

    #[test]
    fn zscore_zero_variance() {
        assert_eq!(zscore(&[7.0, 7.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(zscore(&[0.1, 0.1, 0.1]).unwrap(), vec![0.0; 3]);
        assert_eq!(zscore(&[3.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn zscore_idempotent() {
        let z = zscore(&[3.0, -1.0, 8.5, 2.25, 0.0]).unwrap();
        let zz = zscore(&z).unwrap();
        for (a, b) in z.iter().zip(&zz) {
            assert!((a - b).abs() < 1e-12);
        }
        let (m, s) = mean_std(&z);
        assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zscore_errors() {
        assert_eq!(zscore(&[]), Err(NormalizeError::Empty));
        assert!(matches!(
            zscore(&[1.0, f64::NAN]),
            Err(NormalizeError::NonFinite { index: 1, .. })
        ));
        assert!(matches!(
            zscore(&[f64::INFINITY]),
            Err(NormalizeError::NonFinite { index: 0, .. })
        ));
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_compress(0.0, 0.5).unwrap(), 0.5);
        assert_eq!(sigmoid_compress(0.0, 0.7).unwrap(), 0.5);
        let up = sigmoid_compress(2.0, 0.5).unwrap();
        let down = sigmoid_compress(-2.0, 0.5).unwrap();
        assert!((up - 0.731_058_578_6).abs() < 1e-9);
        assert!((down - 0.268_941_421_4).abs() < 1e-9);
        assert!((up + down - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_rejects_bad_input() {
        assert!(sigmoid_compress(f64::NAN, 0.5).is_err());
        assert_eq!(sigmoid_compress(1.0, 0.0), Err(NormalizeError::InvalidK(0.0)));
        assert!(sigmoid_compress(1.0, -0.5).is_err());
    }

    #[test]
    fn sigmoid_stays_open_at_extremes() {
        let hi = sigmoid_compress(1e6, 0.7).unwrap();
        let lo = sigmoid_compress(-1e6, 0.7).unwrap();
        assert!(hi < 1.0 && hi > 0.5);
        assert!(lo > 0.0 && lo < 0.5);
    }

    #[test]
    fn outlier_compression() {
        for k in [0.5, 0.6, 0.7] {
            let f = |x: f64| sigmoid_compress(x, k).unwrap();
            // Mean slope across the tail is below the mid-range slope.
            assert!((f(10.0) - f(1.0)) / 9.0 < f(1.0) - f(0.0), "k={k}");
        }
    }

    #[test]
    fn standardize_constant_is_half() {
        assert_eq!(standardize_metric(&[5.0, 5.0, 5.0], 0.7).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn standardize_increasing() {
        let out = standardize_metric(&[1.0, 4.0, 9.0, 100.0], 0.5).unwrap();
        assert!(out.windows(2).all(|w| w[0] < w[1]));
        assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn standardize_symmetric_vector() {
        let out = standardize_metric(&[-3.0, -1.0, 0.0, 1.0, 3.0], 0.7).unwrap();
        for i in 0..out.len() {
            assert!((out[i] + out[out.len() - 1 - i] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn params_validate() {
        assert!(CompressionParams::default().validate().is_ok());
        let bad = CompressionParams {
            k_productivity: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
