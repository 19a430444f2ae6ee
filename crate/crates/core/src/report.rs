//! Forest plots (SVG) and markdown tables for pooled results.
//!
//! Output is fully deterministic: fixed fonts, fixed layout, no timestamps.
//! Each task row is emitted as a `<g class="row">` carrying its plotted
//! value, interval and weight as `data-*` attributes, so the drawing can be
//! checked against the numbers it encodes.

use std::fmt::Write as _;

use thiserror::Error;

use crate::meta::{Interval, PooledResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("forest plot needs at least one task row")]
    NoRows,
    #[error("non-finite geometry in row `{0}`")]
    NonFinite(String),
    #[error("{rows} rows but {labels} labels")]
    LabelMismatch { rows: usize, labels: usize },
}

pub const DEFAULT_WIDTH: f64 = 960.0;
pub const ROW_HEIGHT: f64 = 60.0;
const TOP: f64 = 80.0;
const MARGIN: f64 = 16.0;
const LABEL_COL: f64 = 130.0;
const METRIC_COL: f64 = 110.0;
const JUDGED_COL: f64 = 110.0;
const RIGHT_COLS: f64 = 286.0;
/// Half extents of the diamond drawn for the heaviest task.
const DIAMOND_HALF_WIDTH: f64 = 9.0;
const DIAMOND_HALF_HEIGHT: f64 = 14.0;
const SUMMARY_HALF_HEIGHT: f64 = 12.0;
const ACCENT: &str = "#1f5fa8";
const SUMMARY_FILL: &str = "#f2a33a";

/// Default canvas height for `rows` rows, summary included.
pub fn default_height(rows: usize) -> f64 {
    ROW_HEIGHT * rows as f64 + 120.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestRow {
    pub label: String,
    /// Value on the reporting scale.
    pub value: f64,
    pub ci: Interval,
    pub weight_share: f64,
    /// e.g. `0.412 → 0.455` (control → treatment).
    pub metric_note: Option<String>,
    /// e.g. `0.93 → 0.88` for the judged ratios.
    pub judged_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestPlotSpec {
    pub title: String,
    pub x_axis_label: String,
    /// Header over the interval column, e.g. `95% CI`.
    pub ci_label: String,
    pub metric_header: String,
    pub judged_header: String,
    pub rows: Vec<ForestRow>,
    pub summary: ForestRow,
    pub width: f64,
    pub height: f64,
}

impl ForestPlotSpec {
    /// Builds a plot of `result` with one row per task, labelled by `labels`.
    pub fn from_result(result: &PooledResult, labels: &[String], title: &str) -> Result<Self, ReportError> {
        if labels.len() != result.per_task.len() {
            return Err(ReportError::LabelMismatch {
                rows: result.per_task.len(),
                labels: labels.len(),
            });
        }
        let rows: Vec<ForestRow> = result
            .per_task
            .iter()
            .zip(labels)
            .map(|(t, label)| ForestRow {
                label: label.clone(),
                value: t.effect.display_value,
                ci: t.display_ci,
                weight_share: t.weight_share,
                metric_note: None,
                judged_note: None,
            })
            .collect();
        let summary = ForestRow {
            label: "Summary effect".into(),
            value: result.summary.display_value,
            ci: result.summary.display_ci,
            weight_share: 1.0,
            metric_note: None,
            judged_note: None,
        };
        Ok(ForestPlotSpec {
            title: title.to_string(),
            x_axis_label: result.family.describe().to_string(),
            ci_label: ci_label(result.alpha),
            metric_header: String::new(),
            judged_header: String::new(),
            height: default_height(rows.len() + 1),
            width: DEFAULT_WIDTH,
            rows,
            summary,
        })
    }
}

/// `95% CI` for alpha = 0.05.
pub fn ci_label(alpha: f64) -> String {
    let level = format!("{:.2}", (1.0 - alpha) * 100.0);
    let level = level.trim_end_matches('0').trim_end_matches('.');
    format!("{level}% CI")
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Coordinate formatting: 9 decimals, trailing zeros trimmed.
fn px(v: f64) -> String {
    let s = format!("{v:.9}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Fixed-decimal number without a negative zero.
pub fn fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Percentages at 0.1 precision that add up to exactly 100.0
/// (largest-remainder rounding). Returns tenths of a percent.
pub fn percent_tenths(shares: &[f64]) -> Vec<u64> {
    let total: f64 = shares.iter().sum();
    if shares.is_empty() || total <= 0.0 {
        return vec![0; shares.len()];
    }
    let raw: Vec<f64> = shares.iter().map(|s| s / total * 1000.0).collect();
    let mut tenths: Vec<u64> = raw.iter().map(|r| r.floor() as u64).collect();
    let assigned: u64 = tenths.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(1000u64.saturating_sub(assigned) as usize) {
        tenths[i] += 1;
    }
    tenths
}

fn percent(tenths: u64) -> String {
    format!("{}.{}%", tenths / 10, tenths % 10)
}

/// Affine map from effect values to x pixels.
#[derive(Debug, Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    left: f64,
    right: f64,
}

impl Scale {
    fn x(&self, v: f64) -> f64 {
        self.left + (v - self.lo) / (self.hi - self.lo) * (self.right - self.left)
    }
}

/// Data range covering every interval and zero, padded by 5% on each side.
fn value_range(spec: &ForestPlotSpec) -> (f64, f64) {
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for row in spec.rows.iter().chain(std::iter::once(&spec.summary)) {
        lo = lo.min(row.ci.lower).min(row.value);
        hi = hi.max(row.ci.upper).max(row.value);
    }
    let span = hi - lo;
    if span == 0.0 {
        return (-1.0, 1.0);
    }
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = libm::pow(10.0, libm::floor(libm::log10(raw)));
    let norm = raw / mag;
    let mult = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    };
    mult * mag
}

fn ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let step = nice_step(hi - lo);
    let decimals = (-libm::floor(libm::log10(step))).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    ((first..=last).map(|i| i as f64 * step).collect(), decimals)
}

fn check_row(row: &ForestRow) -> Result<(), ReportError> {
    let ok = [row.value, row.ci.lower, row.ci.upper, row.weight_share]
        .iter()
        .all(|v| v.is_finite());
    if ok {
        Ok(())
    } else {
        Err(ReportError::NonFinite(row.label.clone()))
    }
}

/// Renders a standalone SVG 1.1 forest plot.
pub fn render_forest_svg(spec: &ForestPlotSpec) -> Result<Vec<u8>, ReportError> {
    if spec.rows.is_empty() {
        return Err(ReportError::NoRows);
    }
    for row in spec.rows.iter().chain(std::iter::once(&spec.summary)) {
        check_row(row)?;
    }
    if !(spec.width.is_finite() && spec.height.is_finite()) {
        return Err(ReportError::NonFinite("canvas".into()));
    }

    let has_metric = spec.rows.iter().any(|r| r.metric_note.is_some());
    let has_judged = spec.rows.iter().any(|r| r.judged_note.is_some());
    let metric_x = MARGIN + LABEL_COL;
    let judged_x = metric_x + if has_metric { METRIC_COL } else { 0.0 };
    let plot_left = judged_x + if has_judged { JUDGED_COL } else { 0.0 } + 10.0;
    let plot_right = spec.width - RIGHT_COLS;
    let effect_x = plot_right + 70.0;
    let ci_x = plot_right + 82.0;
    let weight_x = spec.width - MARGIN;

    let (lo, hi) = value_range(spec);
    let scale = Scale {
        lo,
        hi,
        left: plot_left,
        right: plot_right,
    };
    let n_rows = spec.rows.len() + 1;
    let rows_bottom = TOP + ROW_HEIGHT * n_rows as f64;
    let row_y = |i: usize| TOP + ROW_HEIGHT * i as f64 + ROW_HEIGHT / 2.0;
    let max_share = spec
        .rows
        .iter()
        .map(|r| r.weight_share)
        .fold(0.0f64, f64::max);
    let shares: Vec<f64> = spec.rows.iter().map(|r| r.weight_share).collect();
    let tenths = percent_tenths(&shares);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="DejaVu Sans Mono, monospace" font-size="12">"#,
        w = px(spec.width),
        h = px(spec.height)
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#,
        px(spec.width),
        px(spec.height)
    );
    let _ = writeln!(
        s,
        r#"<text class="title" x="{}" y="28" font-size="16" font-weight="bold">{}</text>"#,
        px(MARGIN),
        escape(&spec.title)
    );

    // column headers
    let _ = writeln!(s, r#"<g class="header" font-weight="bold">"#);
    let _ = writeln!(s, r#"<text x="{}" y="62">Task</text>"#, px(MARGIN));
    if has_metric {
        let _ = writeln!(s, r#"<text x="{}" y="62">{}</text>"#, px(metric_x), escape(&spec.metric_header));
    }
    if has_judged {
        let _ = writeln!(s, r#"<text x="{}" y="62">{}</text>"#, px(judged_x), escape(&spec.judged_header));
    }
    let _ = writeln!(s, r#"<text x="{}" y="62" text-anchor="end">Effect</text>"#, px(effect_x));
    let _ = writeln!(s, r#"<text x="{}" y="62">{}</text>"#, px(ci_x), escape(&spec.ci_label));
    let _ = writeln!(s, r#"<text x="{}" y="62" text-anchor="end">Weight</text>"#, px(weight_x));
    let _ = writeln!(s, "</g>");

    let x0 = scale.x(0.0);
    let _ = writeln!(
        s,
        r##"<line class="zero-line" x1="{x}" y1="{top}" x2="{x}" y2="{bottom}" stroke="#555555" stroke-width="1" stroke-dasharray="2,4"/>"##,
        x = px(x0),
        top = px(TOP),
        bottom = px(rows_bottom)
    );

    for (i, row) in spec.rows.iter().enumerate() {
        let cy = row_y(i);
        let cx = scale.x(row.value);
        let (xl, xu) = (scale.x(row.ci.lower), scale.x(row.ci.upper));
        let factor = if max_share > 0.0 {
            (row.weight_share / max_share).sqrt()
        } else {
            0.0
        };
        let (a, b) = (DIAMOND_HALF_WIDTH * factor, DIAMOND_HALF_HEIGHT * factor);
        let _ = writeln!(
            s,
            r#"<g class="row" data-task="{}" data-value="{}" data-lower="{}" data-upper="{}" data-weight="{}">"#,
            escape(&row.label),
            row.value,
            row.ci.lower,
            row.ci.upper,
            row.weight_share
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, px(MARGIN), px(cy + 4.0), escape(&row.label));
        if let Some(note) = &row.metric_note {
            let _ = writeln!(s, r#"<text class="metric" x="{}" y="{}">{}</text>"#, px(metric_x), px(cy + 4.0), escape(note));
        }
        if let Some(note) = &row.judged_note {
            let _ = writeln!(s, r#"<text class="judged" x="{}" y="{}">{}</text>"#, px(judged_x), px(cy + 4.0), escape(note));
        }
        let _ = writeln!(
            s,
            r#"<line class="whisker" x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{ACCENT}" stroke-width="1.5"/>"#,
            px(xl),
            px(xu),
            y = px(cy)
        );
        for x in [xl, xu] {
            let _ = writeln!(
                s,
                r#"<line class="cap" x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="{ACCENT}" stroke-width="1.5"/>"#,
                px(cy - 5.0),
                px(cy + 5.0),
                x = px(x)
            );
        }
        let _ = writeln!(
            s,
            r#"<polygon class="diamond" points="{},{y} {cxs},{} {},{y} {cxs},{}" fill="{ACCENT}"/>"#,
            px(cx - a),
            px(cy - b),
            px(cx + a),
            px(cy + b),
            y = px(cy),
            cxs = px(cx)
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, px(effect_x), px(cy + 4.0), fixed(row.value, 4));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">[{}, {}]</text>"#,
            px(ci_x),
            px(cy + 4.0),
            fixed(row.ci.lower, 4),
            fixed(row.ci.upper, 4)
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, px(weight_x), px(cy + 4.0), percent(tenths[i]));
        let _ = writeln!(s, "</g>");
    }

    let sum = &spec.summary;
    let cy = row_y(spec.rows.len());
    let sep_y = TOP + ROW_HEIGHT * spec.rows.len() as f64;
    let _ = writeln!(
        s,
        r##"<line class="separator" x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#999999" stroke-width="1"/>"##,
        px(MARGIN),
        px(spec.width - MARGIN),
        y = px(sep_y)
    );
    let (xl, xm, xu) = (scale.x(sum.ci.lower), scale.x(sum.value), scale.x(sum.ci.upper));
    let _ = writeln!(
        s,
        r#"<g class="summary" data-task="{}" data-value="{}" data-lower="{}" data-upper="{}" data-weight="1">"#,
        escape(&sum.label),
        sum.value,
        sum.ci.lower,
        sum.ci.upper
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-weight="bold">{}</text>"#, px(MARGIN), px(cy + 4.0), escape(&sum.label));
    let _ = writeln!(
        s,
        r#"<polygon class="summary-diamond" points="{},{y} {xms},{} {},{y} {xms},{}" fill="{SUMMARY_FILL}" stroke="black" stroke-width="1"/>"#,
        px(xl),
        px(cy - SUMMARY_HALF_HEIGHT),
        px(xu),
        px(cy + SUMMARY_HALF_HEIGHT),
        y = px(cy),
        xms = px(xm)
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" font-weight="bold">{}</text>"#, px(effect_x), px(cy + 4.0), fixed(sum.value, 4));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-weight="bold">[{}, {}]</text>"#,
        px(ci_x),
        px(cy + 4.0),
        fixed(sum.ci.lower, 4),
        fixed(sum.ci.upper, 4)
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" font-weight="bold">100.0%</text>"#, px(weight_x), px(cy + 4.0));
    let _ = writeln!(s, "</g>");

    // x axis
    let axis_y = rows_bottom + 4.0;
    let _ = writeln!(s, r#"<g class="axis">"#);
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="black" stroke-width="1"/>"#,
        px(plot_left),
        px(plot_right),
        y = px(axis_y)
    );
    let (tick_values, decimals) = ticks(lo, hi);
    for t in tick_values {
        let x = px(scale.x(t));
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="black" stroke-width="1"/>"#,
            px(axis_y),
            px(axis_y + 4.0)
        );
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle" font-size="11">{}</text>"#,
            px(axis_y + 17.0),
            fixed(t, decimals)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        px((plot_left + plot_right) / 2.0),
        px(axis_y + 35.0),
        escape(&spec.x_axis_label)
    );
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    Ok(s.into_bytes())
}

/// Markdown table labelled by task id.
pub fn render_table(result: &PooledResult) -> String {
    let labels: Vec<String> = result.per_task.iter().map(|t| t.task_id.clone()).collect();
    render_table_labeled(result, &labels)
}

/// Markdown table with one row per task plus a summary row. Values are on the
/// reporting scale (r for correlations).
pub fn render_table_labeled(result: &PooledResult, labels: &[String]) -> String {
    let shares: Vec<f64> = result.per_task.iter().map(|t| t.weight_share).collect();
    let tenths = percent_tenths(&shares);
    let mut s = String::new();
    let _ = writeln!(s, "| Task | Effect | {} | Weight |", ci_label(result.alpha));
    let _ = writeln!(s, "| --- | ---: | --- | ---: |");
    for (i, t) in result.per_task.iter().enumerate() {
        let label = labels.get(i).unwrap_or(&t.task_id);
        let _ = writeln!(
            s,
            "| {} | {} | [{}, {}] | {} |",
            label.replace('|', "\\|"),
            fixed(t.effect.display_value, 4),
            fixed(t.display_ci.lower, 4),
            fixed(t.display_ci.upper, 4),
            percent(tenths[i])
        );
    }
    let _ = writeln!(
        s,
        "| Summary | {} | [{}, {}] | 100.0% |",
        fixed(result.summary.display_value, 4),
        fixed(result.summary.display_ci.lower, 4),
        fixed(result.summary.display_ci.upper, 4)
    );
    s
}
