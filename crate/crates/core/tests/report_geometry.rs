mod common;

use proptest::prelude::*;

use metaeval::effects::{EffectFamily, EffectSize};
use metaeval::meta::{pool, Interval};
use metaeval::report::{render_forest_svg, render_table, ForestPlotSpec, ForestRow};

use common::{affine_residual, parse_forest, ForestSvg};

fn row(label: &str, value: f64, lower: f64, upper: f64, share: f64) -> ForestRow {
    ForestRow {
        label: label.into(),
        value,
        ci: Interval { lower, upper },
        weight_share: share,
        metric_note: None,
        judged_note: None,
    }
}

fn spec(rows: Vec<ForestRow>, summary: ForestRow) -> ForestPlotSpec {
    ForestPlotSpec {
        title: "t".into(),
        x_axis_label: "x".into(),
        ci_label: "95% CI".into(),
        metric_header: String::new(),
        judged_header: String::new(),
        height: metaeval::report::default_height(rows.len() + 1),
        width: 960.0,
        rows,
        summary,
    }
}

fn value_x_pairs(svg: &ForestSvg) -> Vec<(f64, f64)> {
    let mut pairs = vec![(0.0, svg.zero_x)];
    for r in &svg.rows {
        let (x1, x2) = r.whisker.unwrap();
        pairs.extend([(r.value, r.diamond_center_x()), (r.lower, x1), (r.upper, x2)]);
    }
    let s = &svg.summary;
    pairs.extend([
        (s.value, s.diamond_center_x()),
        (s.lower, s.diamond[0].0),
        (s.upper, s.diamond[2].0),
    ]);
    pairs
}

#[test]
fn diamond_area_tracks_weight() {
    let svg = render_forest_svg(&spec(
        vec![row("a", 0.2, 0.0, 0.4, 0.8), row("b", -0.1, -0.5, 0.3, 0.2)],
        row("Summary effect", 0.14, 0.0, 0.3, 1.0),
    ))
    .unwrap();
    let parsed = parse_forest(&svg);
    let ratio = parsed.rows[0].diamond_area() / parsed.rows[1].diamond_area();
    assert!((ratio / 4.0 - 1.0).abs() < 0.02, "ratio {ratio}");
}

#[test]
fn single_row_at_zero_sits_on_zero_line() {
    let svg = render_forest_svg(&spec(
        vec![row("only", 0.0, -0.2, 0.2, 1.0)],
        row("Summary effect", 0.0, -0.2, 0.2, 1.0),
    ))
    .unwrap();
    let parsed = parse_forest(&svg);
    assert!((parsed.rows[0].diamond_center_x() - parsed.zero_x).abs() < 1e-6);
    assert!((parsed.summary.diamond_center_x() - parsed.zero_x).abs() < 1e-6);
}

#[test]
fn escapes_labels() {
    let svg = render_forest_svg(&spec(
        vec![row("a<b & \"c\"", 0.1, 0.0, 0.2, 1.0)],
        row("Summary effect", 0.1, 0.0, 0.2, 1.0),
    ))
    .unwrap();
    assert_eq!(parse_forest(&svg).rows[0].label, "a<b & \"c\"");
}

#[test]
fn rejects_non_finite_rows() {
    let bad = spec(
        vec![row("a", f64::NAN, 0.0, 0.2, 1.0)],
        row("Summary effect", 0.1, 0.0, 0.2, 1.0),
    );
    assert!(render_forest_svg(&bad).is_err());
    let empty = spec(vec![], row("Summary effect", 0.1, 0.0, 0.2, 1.0));
    assert!(render_forest_svg(&empty).is_err());
}

fn pooled_inputs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-3.0f64..3.0, 0.0005f64..0.5), 1..10)
}

fn render(raw: &[(f64, f64)]) -> (metaeval::PooledResult, ForestSvg) {
    let effects: Vec<EffectSize> = raw
        .iter()
        .map(|&(y, v)| EffectSize { family: EffectFamily::Md, value: y, variance: v, n: 10, display_value: y })
        .collect();
    let ids: Vec<String> = (0..raw.len()).map(|i| format!("task{i}")).collect();
    let result = pool(&effects, &ids, 0.05).unwrap();
    let spec = ForestPlotSpec::from_result(&result, &ids, "plot").unwrap();
    let svg = render_forest_svg(&spec).unwrap();
    (result, parse_forest(&svg))
}

proptest! {
    #[test]
    fn coordinates_are_affine_and_in_view(raw in pooled_inputs()) {
        let (result, svg) = render(&raw);
        prop_assert_eq!(svg.rows.len(), result.k());
        for &x in &svg.all_x {
            prop_assert!(x >= 0.0 && x <= svg.width, "x {x} outside [0, {}]", svg.width);
        }
        let residual = affine_residual(&value_x_pairs(&svg));
        prop_assert!(residual < 1e-6, "residual {residual}");
    }

    #[test]
    fn rows_excluding_zero_do_not_touch_zero_line(raw in pooled_inputs()) {
        let (_, svg) = render(&raw);
        for r in &svg.rows {
            let (x1, x2) = r.whisker.unwrap();
            if r.lower > 0.0 {
                prop_assert!(x1 > svg.zero_x);
            }
            if r.upper < 0.0 {
                prop_assert!(x2 < svg.zero_x);
            }
        }
    }

    #[test]
    fn table_has_one_line_per_task(raw in pooled_inputs()) {
        let (result, _) = render(&raw);
        let table = render_table(&result);
        prop_assert_eq!(table.lines().count(), result.k() + 3);
        let total: f64 = table
            .lines()
            .skip(2)
            .take(result.k())
            .map(|l| l.trim_end_matches(" |").rsplit("| ").next().unwrap().trim_end_matches('%').parse::<f64>().unwrap())
            .sum();
        prop_assert!((total - 100.0).abs() < 1e-9, "{total}");
    }
}
