//! Accuracy of a trajectory estimate against the truth, and effective sample size.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("{what}: expected {expected} values, found {found}")]
    Mismatch { what: &'static str, expected: usize, found: usize },
    #[error("true trajectory must be positive at every grid point")]
    NonPositiveTruth,
    #[error("need at least {0} values")]
    TooShort(usize),
}

/// Pointwise posterior summary on the `N_e` scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Band {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AccuracyMetrics {
    /// Sum of relative errors of the median.
    pub sre: f64,
    /// Mean relative width of the 95% band.
    pub mrw: f64,
    /// Percentage of grid points whose truth lies inside the band.
    pub env: f64,
}

/// `k` evenly spaced points from 0 to `0.6 · tmrca`.
pub fn metric_grid(tmrca: f64, k: usize) -> Vec<f64> {
    let hi = 0.6 * tmrca;
    if k == 1 {
        return vec![0.0];
    }
    (0..k).map(|i| hi * i as f64 / (k - 1) as f64).collect()
}

pub fn accuracy_metrics(bands: &[Band], truth: &[f64]) -> Result<AccuracyMetrics, DiagnosticsError> {
    if bands.len() != truth.len() {
        return Err(DiagnosticsError::Mismatch { what: "truth values", expected: bands.len(), found: truth.len() });
    }
    if truth.iter().any(|&v| v.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
        return Err(DiagnosticsError::NonPositiveTruth);
    }
    let k = truth.len() as f64;
    let mut m = AccuracyMetrics { sre: 0.0, mrw: 0.0, env: 0.0 };
    for (b, &n) in bands.iter().zip(truth) {
        m.sre += (b.median - n).abs() / n;
        m.mrw += (b.hi - b.lo).abs() / n;
        if b.lo <= n && n <= b.hi {
            m.env += 1.0;
        }
    }
    m.mrw /= k;
    m.env *= 100.0 / k;
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EssFlag {
    /// Zero variance; the length is reported.
    Constant,
    /// Negative autocorrelation pushed the estimate above the length.
    Clipped,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ess {
    pub value: f64,
    pub flag: Option<EssFlag>,
}

/// Effective sample size with Geyer's initial monotone sequence estimator.
pub fn ess(x: &[f64]) -> Result<Ess, DiagnosticsError> {
    let n = x.len();
    if n < 10 {
        return Err(DiagnosticsError::TooShort(10));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = d.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 <= (1e-12 * mean.abs()).powi(2) {
        return Ok(Ess { value: n as f64, flag: Some(EssFlag::Constant) });
    }
    let rho = |k: usize| d[..n - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 / c0;
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 1;
    }
    let value = n as f64 / tau;
    if !(tau > 0.0) || value > n as f64 {
        return Ok(Ess { value: n as f64, flag: Some(EssFlag::Clipped) });
    }
    Ok(Ess { value, flag: None })
}
