//! Per-item evaluation metrics and treatment/control alignment.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ingest::{Qrels, RankedRun, SampleMetricFile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("cutoff k must be at least 1")]
    ZeroCutoff,
    #[error("prediction and gold ids differ; missing from predictions: [{}], missing from gold: [{}]",
        .missing_in_pred.join(", "), .missing_in_gold.join(", "))]
    Alignment {
        missing_in_pred: Vec<String>,
        missing_in_gold: Vec<String>,
    },
    #[error("need at least 2 paired items, found {found}")]
    InsufficientPairs { found: usize },
    #[error("treatment, control and id vectors differ in length ({ids}, {treatment}, {control})")]
    LengthMismatch {
        ids: usize,
        treatment: usize,
        control: usize,
    },
    #[error("non-finite metric value for item `{0}`")]
    NonFinite(String),
}

/// Which per-item metric a task is evaluated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricSpec {
    Ndcg { k: usize },
    Accuracy,
    /// Values are already per-sample metrics and are paired as-is.
    Identity,
}

impl FromStr for MetricSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "accuracy" => Ok(MetricSpec::Accuracy),
            "identity" => Ok(MetricSpec::Identity),
            _ => {
                let k = lower
                    .strip_prefix("ndcg@")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| {
                        format!("unknown metric `{s}`, expected ndcg@<k>|accuracy|identity")
                    })?;
                if k == 0 {
                    return Err("ndcg cutoff must be at least 1".into());
                }
                Ok(MetricSpec::Ndcg { k })
            }
        }
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::Ndcg { k } => write!(f, "nDCG@{k}"),
            MetricSpec::Accuracy => f.write_str("accuracy"),
            MetricSpec::Identity => f.write_str("identity"),
        }
    }
}

fn gain(grade: u32) -> f64 {
    libm::exp2(grade as f64) - 1.0
}

fn discount(rank: usize) -> f64 {
    libm::log2((rank + 1) as f64)
}

/// Per-query nDCG@k with exponential gain `2^grade - 1` and `log2(rank + 1)`
/// discount.
///
/// Every query in `qrels` gets a score. A query without results in the run
/// scores 0, as does a query with no positively graded documents. Queries
/// that only occur in the run are skipped.
pub fn ndcg_at_k(run: &RankedRun, qrels: &Qrels, k: usize) -> Result<BTreeMap<String, f64>, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroCutoff);
    }
    let mut out = BTreeMap::new();
    for (qid, judged) in qrels.iter() {
        let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain(g) / discount(i + 1))
            .sum();
        if idcg == 0.0 {
            out.insert(qid.to_string(), 0.0);
            continue;
        }
        let dcg: f64 = run
            .results(qid)
            .unwrap_or_default()
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, doc)| gain(judged.get(&doc.doc_id).copied().unwrap_or(0)) / discount(i + 1))
            .sum();
        out.insert(qid.to_string(), dcg / idcg);
    }
    Ok(out)
}

/// Per-query fraction of the top `min(k, len)` results that carry any
/// judgment (grade 0 included). Scored over the queries in `qrels`; a query
/// with no results scores 0.
pub fn judged_at_k(run: &RankedRun, qrels: &Qrels, k: usize) -> Result<BTreeMap<String, f64>, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroCutoff);
    }
    let mut out = BTreeMap::new();
    for (qid, judged) in qrels.iter() {
        let docs = run.results(qid).unwrap_or_default();
        let depth = k.min(docs.len());
        let value = if depth == 0 {
            0.0
        } else {
            let hits = docs[..depth]
                .iter()
                .filter(|d| judged.contains_key(&d.doc_id))
                .count();
            hits as f64 / depth as f64
        };
        out.insert(qid.to_string(), value);
    }
    Ok(out)
}

/// 1.0 where prediction and gold agree, 0.0 otherwise.
pub fn accuracy_per_sample(
    pred: &SampleMetricFile,
    gold: &SampleMetricFile,
) -> Result<BTreeMap<String, f64>, MetricError> {
    let missing_in_pred: Vec<String> = gold
        .values()
        .keys()
        .filter(|id| pred.get(id).is_none())
        .cloned()
        .collect();
    let missing_in_gold: Vec<String> = pred
        .values()
        .keys()
        .filter(|id| gold.get(id).is_none())
        .cloned()
        .collect();
    if !missing_in_pred.is_empty() || !missing_in_gold.is_empty() {
        return Err(MetricError::Alignment {
            missing_in_pred,
            missing_in_gold,
        });
    }
    Ok(pred
        .values()
        .iter()
        .map(|(id, &p)| {
            let hit = gold.get(id) == Some(p);
            (id.clone(), if hit { 1.0 } else { 0.0 })
        })
        .collect())
}

/// Aligned treatment and control values for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSamples {
    item_ids: Vec<String>,
    treatment: Vec<f64>,
    control: Vec<f64>,
}

impl PairedSamples {
    pub fn new(item_ids: Vec<String>, treatment: Vec<f64>, control: Vec<f64>) -> Result<Self, MetricError> {
        if item_ids.len() != treatment.len() || item_ids.len() != control.len() {
            return Err(MetricError::LengthMismatch {
                ids: item_ids.len(),
                treatment: treatment.len(),
                control: control.len(),
            });
        }
        if item_ids.len() < 2 {
            return Err(MetricError::InsufficientPairs {
                found: item_ids.len(),
            });
        }
        for (i, id) in item_ids.iter().enumerate() {
            if !treatment[i].is_finite() || !control[i].is_finite() {
                return Err(MetricError::NonFinite(id.clone()));
            }
        }
        Ok(PairedSamples {
            item_ids,
            treatment,
            control,
        })
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn control(&self) -> &[f64] {
        &self.control
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    /// Swaps the roles of treatment and control.
    pub fn mirrored(&self) -> PairedSamples {
        PairedSamples {
            item_ids: self.item_ids.clone(),
            treatment: self.control.clone(),
            control: self.treatment.clone(),
        }
    }
}

/// Ids that only one side of a pairing had.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DroppedIds {
    pub treatment_only: Vec<String>,
    pub control_only: Vec<String>,
}

impl DroppedIds {
    pub fn is_empty(&self) -> bool {
        self.treatment_only.is_empty() && self.control_only.is_empty()
    }

    pub fn count(&self) -> usize {
        self.treatment_only.len() + self.control_only.len()
    }
}

/// Aligns two id → value maps over their common ids, in ascending id order.
pub fn pair(
    treatment: &BTreeMap<String, f64>,
    control: &BTreeMap<String, f64>,
) -> Result<(PairedSamples, DroppedIds), MetricError> {
    let mut ids = Vec::new();
    let mut t = Vec::new();
    let mut c = Vec::new();
    let mut dropped = DroppedIds::default();
    for (id, &tv) in treatment {
        match control.get(id) {
            Some(&cv) => {
                ids.push(id.clone());
                t.push(tv);
                c.push(cv);
            }
            None => dropped.treatment_only.push(id.clone()),
        }
    }
    dropped.control_only = control
        .keys()
        .filter(|id| !treatment.contains_key(*id))
        .cloned()
        .collect();
    let samples = PairedSamples::new(ids, t, c)?;
    Ok((samples, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_qrels, parse_run};

    fn map(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
        entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn run_of(docs: &[&str]) -> RankedRun {
        let text: String = docs
            .iter()
            .enumerate()
            .map(|(i, d)| format!("q1 Q0 {d} {} {} t\n", i + 1, 100 - i))
            .collect();
        parse_run(text.as_bytes()).unwrap()
    }

    #[test]
    fn metric_spec_parsing() {
        assert_eq!("nDCG@10".parse::<MetricSpec>(), Ok(MetricSpec::Ndcg { k: 10 }));
        assert_eq!("accuracy".parse::<MetricSpec>(), Ok(MetricSpec::Accuracy));
        assert_eq!("identity".parse::<MetricSpec>(), Ok(MetricSpec::Identity));
        assert!("ndcg@0".parse::<MetricSpec>().is_err());
        assert!("map".parse::<MetricSpec>().is_err());
    }

    #[test]
    fn ndcg_perfect_ranking() {
        let qrels = parse_qrels(b"q1 0 d1 2\nq1 0 d2 1").unwrap();
        let s = ndcg_at_k(&run_of(&["d1", "d2", "d9"]), &qrels, 10).unwrap();
        assert_eq!(s["q1"], 1.0);
    }

    #[test]
    fn ndcg_hand_example() {
        let qrels = parse_qrels(b"q1 0 d1 2\nq1 0 d2 1").unwrap();
        let s = ndcg_at_k(&run_of(&["d3", "d1", "d2"]), &qrels, 10).unwrap();
        // DCG = 3/log2(3) + 1/log2(4), IDCG = 3 + 1/log2(3)
        let expected = (3.0 / 3f64.log2() + 0.5) / (3.0 + 1.0 / 3f64.log2());
        assert!((s["q1"] - expected).abs() < 1e-15);
        assert!((s["q1"] - 0.65900).abs() < 1e-5);
    }

    #[test]
    fn ndcg_degenerate_cases() {
        let qrels = parse_qrels(b"q1 0 d1 0\nq2 0 d5 1").unwrap();
        let s = ndcg_at_k(&run_of(&["d1", "d2"]), &qrels, 10).unwrap();
        assert_eq!(s["q1"], 0.0);
        // q2 has no results in the run
        assert_eq!(s["q2"], 0.0);
        assert_eq!(ndcg_at_k(&run_of(&["d1"]), &qrels, 0), Err(MetricError::ZeroCutoff));
    }

    #[test]
    fn ndcg_skips_unjudged_queries() {
        let qrels = parse_qrels(b"q2 0 d1 1").unwrap();
        let s = ndcg_at_k(&run_of(&["d1"]), &qrels, 10).unwrap();
        assert!(!s.contains_key("q1"));
    }

    #[test]
    fn ndcg_cutoff_applies() {
        let qrels = parse_qrels(b"q1 0 d3 1").unwrap();
        let s = ndcg_at_k(&run_of(&["d1", "d2", "d3"]), &qrels, 2).unwrap();
        assert_eq!(s["q1"], 0.0);
    }

    #[test]
    fn judged_ratio() {
        let docs: Vec<String> = (1..=10).map(|i| format!("d{i}")).collect();
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let all: String = (1..=10).map(|i| format!("q1 0 d{i} {}\n", i % 2)).collect();
        let qrels = parse_qrels(all.as_bytes()).unwrap();
        assert_eq!(judged_at_k(&run_of(&refs), &qrels, 10).unwrap()["q1"], 1.0);

        let half: String = (1..=5).map(|i| format!("q1 0 d{i} {}\n", i % 3)).collect();
        let qrels = parse_qrels(half.as_bytes()).unwrap();
        assert_eq!(judged_at_k(&run_of(&refs), &qrels, 10).unwrap()["q1"], 0.5);

        // shorter list than k: denominator is the list length
        assert_eq!(judged_at_k(&run_of(&["d1", "d99"]), &qrels, 10).unwrap()["q1"], 0.5);

        let other = parse_qrels(b"q7 0 d1 1").unwrap();
        assert_eq!(judged_at_k(&run_of(&refs), &other, 10).unwrap()["q7"], 0.0);
        assert_eq!(judged_at_k(&run_of(&refs), &other, 0), Err(MetricError::ZeroCutoff));
    }

    #[test]
    fn accuracy() {
        let pred: SampleMetricFile = map(&[("s1", 1.0), ("s2", 0.0)]).into_iter().collect();
        let gold: SampleMetricFile = map(&[("s1", 1.0), ("s2", 1.0)]).into_iter().collect();
        let acc = accuracy_per_sample(&pred, &gold).unwrap();
        assert_eq!(acc, map(&[("s1", 1.0), ("s2", 0.0)]));
        assert!(accuracy_per_sample(&gold, &gold).unwrap().values().all(|&v| v == 1.0));

        let short: SampleMetricFile = map(&[("s1", 1.0)]).into_iter().collect();
        let err = accuracy_per_sample(&short, &gold).unwrap_err();
        assert!(err.to_string().contains("s2"), "{err}");
    }

    #[test]
    fn pairing() {
        let (p, dropped) = pair(&map(&[("a", 1.0), ("b", 0.0)]), &map(&[("a", 1.0), ("b", 1.0)])).unwrap();
        assert_eq!(p.item_ids(), ["a", "b"]);
        assert_eq!(p.treatment(), [1.0, 0.0]);
        assert_eq!(p.control(), [1.0, 1.0]);
        assert!(dropped.is_empty());

        let err = pair(&map(&[("a", 1.0), ("b", 0.0)]), &map(&[("c", 1.0), ("d", 1.0)])).unwrap_err();
        assert_eq!(err, MetricError::InsufficientPairs { found: 0 });

        let (p, dropped) = pair(
            &map(&[("a", 1.0), ("b", 0.0), ("c", 0.5)]),
            &map(&[("a", 1.0), ("b", 1.0)]),
        )
        .unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(dropped.treatment_only, ["c"]);
        assert!(dropped.control_only.is_empty());
    }

    #[test]
    fn paired_samples_validation() {
        assert!(PairedSamples::new(vec!["a".into()], vec![1.0], vec![1.0]).is_err());
        assert!(PairedSamples::new(vec!["a".into(), "b".into()], vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(PairedSamples::new(vec!["a".into(), "b".into()], vec![1.0, f64::NAN], vec![1.0, 2.0]).is_err());
    }
}
