//! wasm-bindgen bindings behind the static demo page in `www/`.
//!
//! Three operations are exposed: pooling a list of per-task effects into a
//! forest plot, computing one task's effect from pasted paired scores, and
//! a confidence interval calculator. Each has a plain Rust counterpart
//! returning `Result<_, String>` so it can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use metaeval::effects::{self, EffectFamily, EffectSize};
use metaeval::meta::{self, Interval};
use metaeval::metrics::PairedSamples;
use metaeval::report::{self, ForestPlotSpec};

fn parse_family(s: &str) -> Result<EffectFamily, String> {
    s.parse()
}

fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("`{t}` is not a finite number"))
        })
        .collect()
}

/// Forest plot and table for pooled effects.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct ForestAnalysis {
    svg: String,
    table: String,
    summary: f64,
    tau_squared: f64,
}

#[wasm_bindgen]
impl ForestAnalysis {
    #[wasm_bindgen(getter)]
    pub fn svg(&self) -> String {
        self.svg.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn table(&self) -> String {
        self.table.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> f64 {
        self.summary
    }

    #[wasm_bindgen(getter)]
    pub fn tau_squared(&self) -> f64 {
        self.tau_squared
    }
}

/// Pools effects given one per line as `label value variance` (MD, SMD) or
/// `label r n` (CORR). Labels may not contain whitespace; `#` starts a comment.
pub fn pool_effects(text: &str, family: &str, alpha: f64) -> Result<ForestAnalysis, String> {
    let family = parse_family(family)?;
    let mut labels = Vec::new();
    let mut effects: Vec<EffectSize> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or_default();
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 {
            return Err(format!("line {}: expected `label value variance`", i + 1));
        }
        let a: f64 = fields[1]
            .parse()
            .map_err(|_| format!("line {}: `{}` is not a number", i + 1, fields[1]))?;
        let effect = match family {
            EffectFamily::Corr => {
                let n: usize = fields[2]
                    .parse()
                    .map_err(|_| format!("line {}: sample count `{}` is not an integer", i + 1, fields[2]))?;
                effects::effect_corr(a, n).map_err(|e| format!("line {}: {e}", i + 1))?
            }
            EffectFamily::Md | EffectFamily::Smd => {
                let variance: f64 = fields[2]
                    .parse()
                    .map_err(|_| format!("line {}: `{}` is not a number", i + 1, fields[2]))?;
                if !a.is_finite() {
                    return Err(format!("line {}: effect must be finite", i + 1));
                }
                EffectSize {
                    family,
                    value: a,
                    variance,
                    n: 0,
                    display_value: a,
                }
            }
        };
        labels.push(fields[0].to_string());
        effects.push(effect);
    }
    let pooled = meta::pool(&effects, &labels, alpha).map_err(|e| e.to_string())?;
    let spec = ForestPlotSpec::from_result(&pooled, &labels, &format!("{} over {} tasks", family.describe(), labels.len()))
        .map_err(|e| e.to_string())?;
    let svg = report::render_forest_svg(&spec).map_err(|e| e.to_string())?;
    Ok(ForestAnalysis {
        svg: String::from_utf8(svg).expect("svg is utf-8"),
        table: report::render_table(&pooled),
        summary: pooled.summary.display_value,
        tau_squared: pooled.tau_squared,
    })
}

#[derive(Debug, Serialize)]
pub struct PairedEffect {
    pub n: usize,
    pub mean_diff: f64,
    pub s_diff: f64,
    pub r_pair: Option<f64>,
    pub effect: EffectSize,
    pub ci: Interval,
}

/// Effect of one task from comma or whitespace separated per-item scores.
/// CORR uses the Pearson correlation between the two vectors.
pub fn paired_effect(treatment: &str, control: &str, family: &str, alpha: f64) -> Result<PairedEffect, String> {
    let family = parse_family(family)?;
    let t = parse_numbers(treatment)?;
    let c = parse_numbers(control)?;
    let ids = (0..t.len().max(c.len())).map(|i| i.to_string()).collect();
    let samples = PairedSamples::new(ids, t, c).map_err(|e| e.to_string())?;
    let stats = effects::paired_stats(&samples);
    let effect = match family {
        EffectFamily::Md => effects::effect_md(&stats),
        EffectFamily::Smd => effects::effect_smd(&stats).map_err(|e| e.to_string())?,
        EffectFamily::Corr => {
            let r = stats.r_pair.ok_or("correlation undefined for a constant vector")?;
            effects::effect_corr(r, stats.n).map_err(|e| e.to_string())?
        }
    };
    let ci = meta::display_interval(family, effect.value, effect.variance, alpha).map_err(|e| e.to_string())?;
    Ok(PairedEffect {
        n: stats.n,
        mean_diff: stats.mean_diff,
        s_diff: stats.s_diff,
        r_pair: stats.r_pair,
        effect,
        ci,
    })
}

/// `[lower, upper, z]` for a value and variance at level alpha.
pub fn interval(value: f64, variance: f64, alpha: f64) -> Result<[f64; 3], String> {
    let ci = meta::confidence_interval(value, variance, alpha).map_err(|e| e.to_string())?;
    let z = meta::critical_value(alpha).map_err(|e| e.to_string())?;
    Ok([ci.lower, ci.upper, z])
}

#[wasm_bindgen(js_name = poolEffects)]
pub fn pool_effects_js(text: &str, family: &str, alpha: f64) -> Result<ForestAnalysis, JsError> {
    pool_effects(text, family, alpha).map_err(|e| JsError::new(&e))
}

/// JSON-encoded [`PairedEffect`].
#[wasm_bindgen(js_name = pairedEffect)]
pub fn paired_effect_js(treatment: &str, control: &str, family: &str, alpha: f64) -> Result<String, JsError> {
    let effect = paired_effect(treatment, control, family, alpha).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&effect).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = confidenceInterval)]
pub fn interval_js(value: f64, variance: f64, alpha: f64) -> Result<Vec<f64>, JsError> {
    interval(value, variance, alpha)
        .map(|v| v.to_vec())
        .map_err(|e| JsError::new(&e))
}
