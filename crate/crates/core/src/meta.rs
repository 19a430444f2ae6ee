//! Random-effects pooling (DerSimonian-Laird) and normal confidence intervals.

use serde::Serialize;
use thiserror::Error;

use crate::effects::{fisher_backtransform, EffectFamily, EffectSize};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaError {
    #[error("probability {0} outside (0, 1)")]
    ProbabilityDomain(f64),
    #[error("alpha {0} outside (0, 1)")]
    AlphaDomain(f64),
    #[error("variance {0} is negative or not finite")]
    VarianceDomain(f64),
    #[error("no effects to pool")]
    Empty,
    #[error("{effects} effects but {task_ids} task ids")]
    LengthMismatch { effects: usize, task_ids: usize },
    #[error("task `{task_id}` is a {found} effect, expected {expected}")]
    FamilyMismatch {
        task_id: String,
        expected: EffectFamily,
        found: EffectFamily,
    },
    #[error("task `{0}` has zero variance; its weight would be infinite")]
    ZeroVariance(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Interval {
        Interval {
            lower: f(self.lower),
            upper: f(self.upper),
        }
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse CDF of the standard normal distribution.
///
/// Acklam's rational approximation followed by one Halley step against the
/// exact CDF.
pub fn normal_ppf(p: f64) -> Result<f64, MetaError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(MetaError::ProbabilityDomain(p));
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.38357751867269e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * libm::log(p)).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * libm::log(1.0 - p)).sqrt())
    };

    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * libm::exp(x * x / 2.0);
    Ok(x - u / (1.0 + x * u / 2.0))
}

/// Two-sided critical value `ppf(1 - alpha / 2)`.
pub fn critical_value(alpha: f64) -> Result<f64, MetaError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MetaError::AlphaDomain(alpha));
    }
    normal_ppf(1.0 - alpha / 2.0)
}

/// Symmetric normal interval `value ± z · sqrt(variance)`.
pub fn confidence_interval(value: f64, variance: f64, alpha: f64) -> Result<Interval, MetaError> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(MetaError::VarianceDomain(variance));
    }
    let half = critical_value(alpha)? * variance.sqrt();
    Ok(Interval {
        lower: value - half,
        upper: value + half,
    })
}

/// Interval on the reporting scale: for correlations it is computed on the
/// z scale and both limits are back-transformed to r.
pub fn display_interval(family: EffectFamily, value: f64, variance: f64, alpha: f64) -> Result<Interval, MetaError> {
    let ci = confidence_interval(value, variance, alpha)?;
    Ok(match family {
        EffectFamily::Corr => ci.map(fisher_backtransform),
        EffectFamily::Md | EffectFamily::Smd => ci,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskWeight {
    pub task_id: String,
    pub effect: EffectSize,
    /// `1 / V_i`
    pub fixed_weight: f64,
    /// `1 / (V_i + T²)`
    pub adjusted_weight: f64,
    pub weight_share: f64,
    /// Interval from the task's own variance, on the effect's native scale.
    pub ci: Interval,
    pub display_ci: Interval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryEffect {
    pub value: f64,
    pub variance: f64,
    pub ci: Interval,
    pub display_value: f64,
    pub display_ci: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledResult {
    pub family: EffectFamily,
    pub per_task: Vec<TaskWeight>,
    pub tau_squared: f64,
    pub q: f64,
    pub summary: SummaryEffect,
    pub alpha: f64,
}

impl PooledResult {
    pub fn k(&self) -> usize {
        self.per_task.len()
    }
}

/// Pools same-family effects with the DerSimonian-Laird random-effects model.
pub fn pool(effects: &[EffectSize], task_ids: &[String], alpha: f64) -> Result<PooledResult, MetaError> {
    if effects.is_empty() {
        return Err(MetaError::Empty);
    }
    if effects.len() != task_ids.len() {
        return Err(MetaError::LengthMismatch {
            effects: effects.len(),
            task_ids: task_ids.len(),
        });
    }
    critical_value(alpha)?;
    let family = effects[0].family;
    for (e, id) in effects.iter().zip(task_ids) {
        if e.family != family {
            return Err(MetaError::FamilyMismatch {
                task_id: id.clone(),
                expected: family,
                found: e.family,
            });
        }
        if !(e.variance >= 0.0 && e.variance.is_finite()) {
            return Err(MetaError::VarianceDomain(e.variance));
        }
    }
    let k = effects.len();
    if k >= 2 {
        if let Some((_, id)) = effects.iter().zip(task_ids).find(|(e, _)| e.variance == 0.0) {
            return Err(MetaError::ZeroVariance(id.clone()));
        }
    }

    let w: Vec<f64> = effects.iter().map(|e| 1.0 / e.variance).collect();
    let (tau_squared, q) = if k == 1 {
        (0.0, 0.0)
    } else {
        let sum_w: f64 = w.iter().sum();
        let sum_wy: f64 = w.iter().zip(effects).map(|(w, e)| w * e.value).sum();
        let sum_wy2: f64 = w.iter().zip(effects).map(|(w, e)| w * e.value * e.value).sum();
        let sum_w2: f64 = w.iter().map(|w| w * w).sum();
        let q = sum_wy2 - sum_wy * sum_wy / sum_w;
        let df = (k - 1) as f64;
        let c = sum_w - sum_w2 / sum_w;
        (((q - df) / c).max(0.0), q)
    };

    let (w_star, summary_value, summary_variance) = if k == 1 {
        (w.clone(), effects[0].value, effects[0].variance)
    } else {
        let w_star: Vec<f64> = effects.iter().map(|e| 1.0 / (e.variance + tau_squared)).collect();
        let total: f64 = w_star.iter().sum();
        let m: f64 = w_star.iter().zip(effects).map(|(w, e)| w * e.value).sum::<f64>() / total;
        // rounding can push the weighted mean a hair outside the observed range
        let lo = effects.iter().map(|e| e.value).fold(f64::INFINITY, f64::min);
        let hi = effects.iter().map(|e| e.value).fold(f64::NEG_INFINITY, f64::max);
        (w_star, m.clamp(lo, hi), 1.0 / total)
    };
    let total_star: f64 = w_star.iter().sum();

    let mut per_task = Vec::with_capacity(k);
    for (i, (e, id)) in effects.iter().zip(task_ids).enumerate() {
        per_task.push(TaskWeight {
            task_id: id.clone(),
            effect: *e,
            fixed_weight: w[i],
            adjusted_weight: w_star[i],
            weight_share: if k == 1 { 1.0 } else { w_star[i] / total_star },
            ci: confidence_interval(e.value, e.variance, alpha)?,
            display_ci: display_interval(family, e.value, e.variance, alpha)?,
        });
    }
    let display_value = match family {
        EffectFamily::Corr => fisher_backtransform(summary_value),
        EffectFamily::Md | EffectFamily::Smd => summary_value,
    };
    Ok(PooledResult {
        family,
        per_task,
        tau_squared,
        q,
        summary: SummaryEffect {
            value: summary_value,
            variance: summary_variance,
            ci: confidence_interval(summary_value, summary_variance, alpha)?,
            display_value,
            display_ci: display_interval(family, summary_value, summary_variance, alpha)?,
        },
        alpha,
    })
}
