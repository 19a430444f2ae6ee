#![allow(dead_code)]

use std::path::PathBuf;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data")
}

#[derive(Debug, Clone)]
pub struct SvgRow {
    pub label: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub weight: f64,
    /// Diamond vertices: left, top, right, bottom.
    pub diamond: Vec<(f64, f64)>,
    /// `(x1, x2)` of the whisker; `None` for the summary row.
    pub whisker: Option<(f64, f64)>,
}

impl SvgRow {
    pub fn diamond_center_x(&self) -> f64 {
        self.diamond[1].0
    }

    /// Shoelace area of the diamond polygon.
    pub fn diamond_area(&self) -> f64 {
        let p = &self.diamond;
        let mut twice = 0.0;
        for i in 0..p.len() {
            let (x1, y1) = p[i];
            let (x2, y2) = p[(i + 1) % p.len()];
            twice += x1 * y2 - x2 * y1;
        }
        twice.abs() / 2.0
    }
}

#[derive(Debug, Clone)]
pub struct ForestSvg {
    pub width: f64,
    pub height: f64,
    pub rows: Vec<SvgRow>,
    pub summary: SvgRow,
    pub zero_x: f64,
    /// Every x coordinate drawn anywhere in the document.
    pub all_x: Vec<f64>,
}

fn num(node: roxmltree::Node, attr: &str) -> f64 {
    node.attribute(attr)
        .unwrap_or_else(|| panic!("missing {attr}"))
        .parse()
        .unwrap_or_else(|_| panic!("bad {attr}"))
}

fn points(node: roxmltree::Node) -> Vec<(f64, f64)> {
    node.attribute("points")
        .expect("points")
        .split_whitespace()
        .map(|p| {
            let (x, y) = p.split_once(',').expect("x,y");
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect()
}

fn has_class(node: &roxmltree::Node, class: &str) -> bool {
    node.attribute("class") == Some(class)
}

fn row_of(group: roxmltree::Node) -> SvgRow {
    let diamond = group
        .children()
        .find(|n| n.has_tag_name("polygon"))
        .map(points)
        .expect("diamond polygon");
    let whisker = group
        .children()
        .find(|n| has_class(n, "whisker"))
        .map(|n| (num(n, "x1"), num(n, "x2")));
    SvgRow {
        label: group.attribute("data-task").unwrap_or_default().to_string(),
        value: num(group, "data-value"),
        lower: num(group, "data-lower"),
        upper: num(group, "data-upper"),
        weight: num(group, "data-weight"),
        diamond,
        whisker,
    }
}

/// Parses an emitted forest plot; panics if the document is not well-formed.
pub fn parse_forest(svg: &[u8]) -> ForestSvg {
    let text = std::str::from_utf8(svg).expect("utf-8");
    let doc = roxmltree::Document::parse(text).expect("well-formed XML");
    let root = doc.root_element();
    assert_eq!(root.tag_name().name(), "svg");
    let width = num(root, "width");
    let height = num(root, "height");
    let mut rows = Vec::new();
    let mut summary = None;
    let mut zero_x = None;
    let mut all_x = Vec::new();
    for node in root.descendants().filter(|n| n.is_element()) {
        if has_class(&node, "row") {
            rows.push(row_of(node));
        } else if has_class(&node, "summary") {
            summary = Some(row_of(node));
        } else if has_class(&node, "zero-line") {
            zero_x = Some(num(node, "x1"));
        }
        for attr in ["x", "x1", "x2"] {
            if let Some(v) = node.attribute(attr) {
                all_x.push(v.parse().unwrap());
            }
        }
        if node.has_tag_name("polygon") {
            all_x.extend(points(node).into_iter().map(|(x, _)| x));
        }
    }
    ForestSvg {
        width,
        height,
        rows,
        summary: summary.expect("summary row"),
        zero_x: zero_x.expect("zero line"),
        all_x,
    }
}

/// Largest deviation of `(value, x)` pairs from the line through the two
/// most distant points.
pub fn affine_residual(pairs: &[(f64, f64)]) -> f64 {
    let (lo, hi) = pairs.iter().fold((pairs[0], pairs[0]), |(lo, hi), &p| {
        (if p.0 < lo.0 { p } else { lo }, if p.0 > hi.0 { p } else { hi })
    });
    if hi.0 == lo.0 {
        return pairs.iter().map(|p| (p.1 - lo.1).abs()).fold(0.0, f64::max);
    }
    let slope = (hi.1 - lo.1) / (hi.0 - lo.0);
    pairs
        .iter()
        .map(|&(v, x)| (lo.1 + slope * (v - lo.0) - x).abs())
        .fold(0.0, f64::max)
}
