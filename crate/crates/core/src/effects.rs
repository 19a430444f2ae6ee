//! Per-task effect sizes for paired designs.
//!
//! Three families are supported:
//!
//! * [`EffectFamily::Md`]: raw mean of the pairwise differences, `V = S_diff² / n`.
//! * [`EffectFamily::Smd`]: standardized mean difference with Hedges'
//!   small-sample correction always applied.
//! * [`EffectFamily::Corr`]: a correlation coefficient, carried in Fisher z
//!   space with `V = 1 / (n - 3)` and back-transformed for display.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::metrics::PairedSamples;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EffectError {
    #[error("treatment and control differ by a constant; SMD undefined")]
    DegenerateSamples,
    #[error("correlation {0} lies outside (-1, 1)")]
    CorrelationOutOfDomain(f64),
    #[error("correlation effects need at least 4 samples, got {0}")]
    InsufficientSamples(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EffectFamily {
    #[serde(rename = "MD")]
    Md,
    #[serde(rename = "SMD")]
    Smd,
    #[serde(rename = "CORR")]
    Corr,
}

impl EffectFamily {
    pub const ALL: [EffectFamily; 3] = [EffectFamily::Md, EffectFamily::Smd, EffectFamily::Corr];

    pub fn as_str(self) -> &'static str {
        match self {
            EffectFamily::Md => "MD",
            EffectFamily::Smd => "SMD",
            EffectFamily::Corr => "CORR",
        }
    }

    /// Human readable name of the effect measure.
    pub fn describe(self) -> &'static str {
        match self {
            EffectFamily::Md => "Raw mean difference",
            EffectFamily::Smd => "Standardized mean difference (Hedges' g)",
            EffectFamily::Corr => "Correlation r",
        }
    }
}

impl FromStr for EffectFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EffectFamily::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown effect type `{s}`, expected one of MD|SMD|CORR"))
    }
}

impl fmt::Display for EffectFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One task's effect and its sampling variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectSize {
    pub family: EffectFamily,
    /// D, g or Fisher z.
    pub value: f64,
    pub variance: f64,
    pub n: usize,
    /// Equal to `value`, except for correlations where it is `r`.
    pub display_value: f64,
}

/// Summary statistics of a paired sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedStats {
    pub n: usize,
    pub mean_diff: f64,
    /// Sample standard deviation of the pairwise differences (n - 1 denominator).
    pub s_diff: f64,
    /// Pearson correlation between treatment and control. `None` when
    /// either vector is constant.
    pub r_pair: Option<f64>,
}

fn is_constant(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x == xs[0])
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if is_constant(a) || is_constant(b) {
        return None;
    }
    if a.len() == 2 {
        // two points are always perfectly (anti-)correlated
        let sign = (a[1] - a[0]) * (b[1] - b[0]);
        return Some(if sign > 0.0 { 1.0 } else { -1.0 });
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn paired_stats(p: &PairedSamples) -> PairedStats {
    let diffs: Vec<f64> = p
        .treatment()
        .iter()
        .zip(p.control())
        .map(|(t, c)| t - c)
        .collect();
    let n = diffs.len();
    let mean_diff = mean(&diffs);
    let s_diff = if is_constant(&diffs) {
        0.0
    } else {
        let ss: f64 = diffs.iter().map(|d| (d - mean_diff).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    PairedStats {
        n,
        mean_diff,
        s_diff,
        r_pair: pearson(p.treatment(), p.control()),
    }
}

pub fn effect_md(stats: &PairedStats) -> EffectSize {
    EffectSize {
        family: EffectFamily::Md,
        value: stats.mean_diff,
        variance: stats.s_diff * stats.s_diff / stats.n as f64,
        n: stats.n,
        display_value: stats.mean_diff,
    }
}

/// Hedges' correction factor for `df` degrees of freedom.
pub fn hedges_j(df: usize) -> f64 {
    1.0 - 3.0 / (4.0 * df as f64 - 1.0)
}

/// Cohen's d for a paired design and its variance, before correction.
pub fn cohens_d(stats: &PairedStats) -> Result<(f64, f64), EffectError> {
    let r = match stats.r_pair {
        Some(r) if r < 1.0 && stats.s_diff > 0.0 => r,
        _ => return Err(EffectError::DegenerateSamples),
    };
    let n = stats.n as f64;
    let s_within = stats.s_diff / (2.0 * (1.0 - r)).sqrt();
    let d = stats.mean_diff / s_within;
    let v_d = (1.0 / n + d * d / (2.0 * n)) * 2.0 * (1.0 - r);
    Ok((d, v_d))
}

/// Hedges' g: `J * d` with variance `J² * V_d`, `df = n - 1`.
pub fn effect_smd(stats: &PairedStats) -> Result<EffectSize, EffectError> {
    let (d, v_d) = cohens_d(stats)?;
    let j = hedges_j(stats.n - 1);
    let g = j * d;
    Ok(EffectSize {
        family: EffectFamily::Smd,
        value: g,
        variance: j * j * v_d,
        n: stats.n,
        display_value: g,
    })
}

pub fn fisher_z(r: f64) -> f64 {
    0.5 * libm::log((1.0 + r) / (1.0 - r))
}

/// Inverse of [`fisher_z`].
pub fn fisher_backtransform(z: f64) -> f64 {
    // tanh(z) == (e^{2z} - 1) / (e^{2z} + 1) without overflowing for large |z|
    libm::tanh(z)
}

/// Variance of a raw correlation coefficient, `(1 - r²)² / (n - 1)`.
///
/// Reporting only; pooling happens on the z scale.
pub fn correlation_variance(r: f64, n: usize) -> f64 {
    (1.0 - r * r).powi(2) / (n as f64 - 1.0)
}

pub fn effect_corr(r: f64, n: usize) -> Result<EffectSize, EffectError> {
    if !(r > -1.0 && r < 1.0) {
        return Err(EffectError::CorrelationOutOfDomain(r));
    }
    if n <= 3 {
        return Err(EffectError::InsufficientSamples(n));
    }
    Ok(EffectSize {
        family: EffectFamily::Corr,
        value: fisher_z(r),
        variance: 1.0 / (n as f64 - 3.0),
        n,
        display_value: r,
    })
}
