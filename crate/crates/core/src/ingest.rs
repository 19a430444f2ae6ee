//! Parsers for the on-disk inputs: TREC qrels, TREC runs, per-sample metric
//! files, correlation records and the JSON experiment manifest.
//!
//! Every parser works on raw bytes and reports problems with the 1-based
//! line number they were found on. Parsed structures are immutable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Deserialize;
use thiserror::Error;

use crate::effects::EffectFamily;
use crate::metrics::MetricSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("line {line}: invalid UTF-8")]
    Utf8 { line: usize },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate judgment for query `{query_id}`, document `{doc_id}`")]
    DuplicateJudgment {
        line: usize,
        query_id: String,
        doc_id: String,
    },
    #[error("line {line}: document `{doc_id}` appears twice for query `{query_id}`")]
    DuplicateDocument {
        line: usize,
        query_id: String,
        doc_id: String,
    },
    #[error("line {line}: duplicate sample id `{sample_id}`")]
    DuplicateSample { line: usize, sample_id: String },
    #[error("line {line}: non-finite value `{value}`")]
    NonFinite { line: usize, value: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
}

impl IngestError {
    /// Line the problem was detected on, if the error is line-based.
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::Utf8 { line }
            | IngestError::Malformed { line, .. }
            | IngestError::DuplicateJudgment { line, .. }
            | IngestError::DuplicateDocument { line, .. }
            | IngestError::DuplicateSample { line, .. }
            | IngestError::NonFinite { line, .. } => Some(*line),
            IngestError::Manifest(_) => None,
        }
    }
}

/// Yields `(line_number, fields)` for every non-blank line.
fn records(bytes: &[u8]) -> impl Iterator<Item = Result<(usize, Vec<&str>), IngestError>> {
    bytes
        .split(|&b| b == b'\n')
        .enumerate()
        .filter_map(|(idx, raw)| {
            let line = idx + 1;
            let text = match std::str::from_utf8(raw) {
                Ok(t) => t,
                Err(_) => return Some(Err(IngestError::Utf8 { line })),
            };
            let fields: Vec<&str> = text.split_whitespace().collect();
            if fields.is_empty() {
                None
            } else {
                Some(Ok((line, fields)))
            }
        })
}

fn expect_fields(line: usize, fields: &[&str], n: usize, layout: &str) -> Result<(), IngestError> {
    if fields.len() != n {
        return Err(IngestError::Malformed {
            line,
            reason: format!(
                "expected {n} fields ({layout}), found {}",
                fields.len()
            ),
        });
    }
    Ok(())
}

fn parse_finite(line: usize, raw: &str, what: &str) -> Result<f64, IngestError> {
    let value: f64 = raw.parse().map_err(|_| IngestError::Malformed {
        line,
        reason: format!("{what} `{raw}` is not a number"),
    })?;
    if !value.is_finite() {
        return Err(IngestError::NonFinite {
            line,
            value: raw.to_string(),
        });
    }
    Ok(value)
}

/// Relevance judgments, grouped by query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    queries: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.queries.get(query_id)?.get(doc_id).copied()
    }

    /// Judgments for one query, keyed by document id.
    pub fn judgments(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.queries.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u32>)> {
        self.queries.iter().map(|(q, d)| (q.as_str(), d))
    }

    /// Number of `(query, document)` judgments.
    pub fn len(&self) -> usize {
        self.queries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Parses a TREC qrels file: `<qid> <iter> <docid> <grade>`.
pub fn parse_qrels(bytes: &[u8]) -> Result<Qrels, IngestError> {
    let mut queries: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    for record in records(bytes) {
        let (line, fields) = record?;
        expect_fields(line, &fields, 4, "qid iter docid grade")?;
        let grade: u32 = fields[3].parse().map_err(|_| IngestError::Malformed {
            line,
            reason: format!("grade `{}` is not a non-negative integer", fields[3]),
        })?;
        let docs = queries.entry(fields[0].to_string()).or_default();
        if docs.insert(fields[2].to_string(), grade).is_some() {
            return Err(IngestError::DuplicateJudgment {
                line,
                query_id: fields[0].to_string(),
                doc_id: fields[2].to_string(),
            });
        }
    }
    Ok(Qrels { queries })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// One system's ranked result lists.
///
/// Lists are ordered by score descending, ties by document id descending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedRun {
    system_tag: String,
    queries: BTreeMap<String, Vec<ScoredDoc>>,
}

impl RankedRun {
    pub fn system_tag(&self) -> &str {
        &self.system_tag
    }

    /// Ranked list for a query; `None` if the run has no results for it.
    pub fn results(&self, query_id: &str) -> Option<&[ScoredDoc]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[ScoredDoc])> {
        self.queries.iter().map(|(q, d)| (q.as_str(), d.as_slice()))
    }

    /// Serializes back into TREC run format with ranks starting at 1.
    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        let tag = if self.system_tag.is_empty() {
            "run"
        } else {
            &self.system_tag
        };
        for (qid, docs) in &self.queries {
            for (rank, doc) in docs.iter().enumerate() {
                let _ = writeln!(out, "{qid} Q0 {} {} {:?} {tag}", doc.doc_id, rank + 1, doc.score);
            }
        }
        out
    }
}

fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.doc_id.cmp(&a.doc_id))
}

/// Parses a TREC run file: `<qid> Q0 <docid> <rank> <score> <tag>`.
///
/// The rank column is validated as an integer and otherwise ignored; lists
/// are re-sorted by `(score desc, doc_id desc)`.
pub fn parse_run(bytes: &[u8]) -> Result<RankedRun, IngestError> {
    let mut queries: BTreeMap<String, Vec<ScoredDoc>> = BTreeMap::new();
    let mut seen: BTreeMap<String, std::collections::BTreeSet<String>> = BTreeMap::new();
    let mut system_tag = None;
    for record in records(bytes) {
        let (line, fields) = record?;
        expect_fields(line, &fields, 6, "qid Q0 docid rank score tag")?;
        if fields[3].parse::<i64>().is_err() {
            return Err(IngestError::Malformed {
                line,
                reason: format!("rank `{}` is not an integer", fields[3]),
            });
        }
        let score = parse_finite(line, fields[4], "score")?;
        let (qid, doc_id) = (fields[0], fields[2]);
        if !seen
            .entry(qid.to_string())
            .or_default()
            .insert(doc_id.to_string())
        {
            return Err(IngestError::DuplicateDocument {
                line,
                query_id: qid.to_string(),
                doc_id: doc_id.to_string(),
            });
        }
        system_tag.get_or_insert_with(|| fields[5].to_string());
        queries.entry(qid.to_string()).or_default().push(ScoredDoc {
            doc_id: doc_id.to_string(),
            score,
        });
    }
    for docs in queries.values_mut() {
        docs.sort_by(rank_order);
    }
    Ok(RankedRun {
        system_tag: system_tag.unwrap_or_default(),
        queries,
    })
}

/// Per-sample metric values, keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleMetricFile {
    values: BTreeMap<String, f64>,
}

impl SampleMetricFile {
    pub fn get(&self, sample_id: &str) -> Option<f64> {
        self.values.get(sample_id).copied()
    }

    pub fn values(&self) -> &BTreeMap<String, f64> {
        &self.values
    }

    pub fn into_values(self) -> BTreeMap<String, f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl FromIterator<(String, f64)> for SampleMetricFile {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        SampleMetricFile {
            values: iter.into_iter().collect(),
        }
    }
}

/// Parses `sample_id<TAB>value` lines.
pub fn parse_sample_metrics(bytes: &[u8]) -> Result<SampleMetricFile, IngestError> {
    let mut values = BTreeMap::new();
    for record in records(bytes) {
        let (line, fields) = record?;
        expect_fields(line, &fields, 2, "sample_id value")?;
        let value = parse_finite(line, fields[1], "value")?;
        if values.insert(fields[0].to_string(), value).is_some() {
            return Err(IngestError::DuplicateSample {
                line,
                sample_id: fields[0].to_string(),
            });
        }
    }
    Ok(SampleMetricFile { values })
}

/// A pre-computed correlation coefficient and the number of samples behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationRecord {
    pub r: f64,
    pub n: usize,
}

/// Parses a single-record `r<TAB>n` file.
pub fn parse_correlation_record(bytes: &[u8]) -> Result<CorrelationRecord, IngestError> {
    let mut found = None;
    for record in records(bytes) {
        let (line, fields) = record?;
        if found.is_some() {
            return Err(IngestError::Malformed {
                line,
                reason: "correlation file must hold exactly one `r n` record".into(),
            });
        }
        expect_fields(line, &fields, 2, "r n")?;
        let r = parse_finite(line, fields[0], "correlation")?;
        let n: usize = fields[1].parse().map_err(|_| IngestError::Malformed {
            line,
            reason: format!("sample count `{}` is not a non-negative integer", fields[1]),
        })?;
        found = Some(CorrelationRecord { r, n });
    }
    found.ok_or(IngestError::Malformed {
        line: 1,
        reason: "correlation file is empty".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentMode {
    Retrieval,
    Classification,
}

/// One task of the manifest. Paths are kept exactly as written.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub task_id: String,
    pub display_name: String,
    pub mode: ExperimentMode,
    pub treatment_path: PathBuf,
    pub control_path: PathBuf,
    pub qrels_path: Option<PathBuf>,
    /// Gold labels for `accuracy` over raw predictions (classification only).
    pub gold_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub metric: MetricSpec,
    pub effect_type: EffectFamily,
    pub alpha: f64,
    pub experiments: Vec<Experiment>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    metric: String,
    effect_type: String,
    alpha: f64,
    experiments: Vec<RawExperiment>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    task_id: String,
    display_name: String,
    mode: ExperimentMode,
    treatment_path: PathBuf,
    control_path: PathBuf,
    #[serde(default)]
    qrels_path: Option<PathBuf>,
    #[serde(default)]
    gold_path: Option<PathBuf>,
}

/// Validates an alpha level, shared by the manifest and CLI overrides.
pub fn check_alpha(alpha: f64) -> Result<f64, IngestError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(alpha)
    } else {
        Err(IngestError::Manifest(format!(
            "alpha must lie strictly between 0 and 1, got {alpha}"
        )))
    }
}

/// Parses and validates the JSON manifest.
pub fn load_manifest(bytes: &[u8]) -> Result<Manifest, IngestError> {
    let raw: RawManifest =
        serde_json::from_slice(bytes).map_err(|e| IngestError::Manifest(e.to_string()))?;
    let metric: MetricSpec = raw.metric.parse().map_err(IngestError::Manifest)?;
    let effect_type: EffectFamily = raw.effect_type.parse().map_err(IngestError::Manifest)?;
    let alpha = check_alpha(raw.alpha)?;
    if raw.experiments.is_empty() {
        return Err(IngestError::Manifest("at least one experiment is required".into()));
    }
    let mut task_ids = std::collections::BTreeSet::new();
    let mut experiments = Vec::with_capacity(raw.experiments.len());
    for e in raw.experiments {
        if !task_ids.insert(e.task_id.clone()) {
            return Err(IngestError::Manifest(format!("duplicate task_id `{}`", e.task_id)));
        }
        match e.mode {
            ExperimentMode::Retrieval => {
                if e.qrels_path.is_none() {
                    return Err(IngestError::Manifest(format!(
                        "retrieval task `{}` has no qrels_path",
                        e.task_id
                    )));
                }
                if e.gold_path.is_some() {
                    return Err(IngestError::Manifest(format!(
                        "retrieval task `{}` must not carry a gold_path",
                        e.task_id
                    )));
                }
            }
            ExperimentMode::Classification => {
                if e.qrels_path.is_some() {
                    return Err(IngestError::Manifest(format!(
                        "classification task `{}` must not carry a qrels_path",
                        e.task_id
                    )));
                }
            }
        }
        experiments.push(Experiment {
            task_id: e.task_id,
            display_name: e.display_name,
            mode: e.mode,
            treatment_path: e.treatment_path,
            control_path: e.control_path,
            qrels_path: e.qrels_path,
            gold_path: e.gold_path,
        });
    }
    Ok(Manifest {
        metric,
        effect_type,
        alpha,
        experiments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrels_basic() {
        let q = parse_qrels(b"q1 0 d1 2\nq1 0 d2 1").unwrap();
        assert_eq!(q.grade("q1", "d1"), Some(2));
        assert_eq!(q.grade("q1", "d2"), Some(1));
        assert_eq!(q.len(), 2);
    }

    #[test]
    fn qrels_empty_and_blank_lines() {
        assert!(parse_qrels(b"").unwrap().is_empty());
        let q = parse_qrels(b"q1\t0\td1\t1\n\n   \n").unwrap();
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn qrels_bad_grade_names_line() {
        let err = parse_qrels(b"q1 0 d1 two").unwrap_err();
        assert_eq!(err.line(), Some(1));
        assert!(matches!(err, IngestError::Malformed { .. }));
        let err = parse_qrels(b"q1 0 d1 1\nq1 0 d2 -1").unwrap_err();
        assert_eq!(err.line(), Some(2));
    }

    #[test]
    fn qrels_wrong_field_count() {
        let err = parse_qrels(b"q1 0 d1").unwrap_err();
        assert_eq!(err.line(), Some(1));
    }

    #[test]
    fn qrels_duplicate() {
        let err = parse_qrels(b"q1 0 d1 1\nq2 0 d1 1\nq1 0 d1 0").unwrap_err();
        assert_eq!(
            err,
            IngestError::DuplicateJudgment {
                line: 3,
                query_id: "q1".into(),
                doc_id: "d1".into()
            }
        );
    }

    #[test]
    fn qrels_invalid_utf8() {
        let err = parse_qrels(b"q1 0 d1 1\nq\xff 0 d1 1").unwrap_err();
        assert_eq!(err, IngestError::Utf8 { line: 2 });
    }

    #[test]
    fn run_basic() {
        let run = parse_run(b"q1 Q0 d2 1 9.5 sys\nq1 Q0 d7 2 8.0 sys").unwrap();
        let docs = run.results("q1").unwrap();
        assert_eq!(docs[0], ScoredDoc { doc_id: "d2".into(), score: 9.5 });
        assert_eq!(docs[1], ScoredDoc { doc_id: "d7".into(), score: 8.0 });
        assert_eq!(run.system_tag(), "sys");
    }

    #[test]
    fn run_resorts_and_breaks_ties_by_doc_id_desc() {
        let run = parse_run(b"q1 Q0 d1 1 3.0 a\nq1 Q0 d2 2 3.0 a").unwrap();
        let ids: Vec<_> = run.results("q1").unwrap().iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["d2", "d1"]);

        // rank column disagrees with the scores
        let run = parse_run(b"q1 Q0 a 1 1.0 t\nq1 Q0 b 2 5.0 t\nq1 Q0 c 3 3.0 t").unwrap();
        let ids: Vec<_> = run.results("q1").unwrap().iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["b", "c", "a"]);
    }

    #[test]
    fn run_errors() {
        assert!(matches!(
            parse_run(b"q1 Q0 d1 1 3.0 a\nq1 Q0 d1 2 2.0 a").unwrap_err(),
            IngestError::DuplicateDocument { line: 2, .. }
        ));
        assert_eq!(parse_run(b"q1 Q0 d1 1 3.0").unwrap_err().line(), Some(1));
        assert_eq!(parse_run(b"q1 Q0 d1 1 high a").unwrap_err().line(), Some(1));
        assert_eq!(parse_run(b"q1 Q0 d1 x 1.0 a").unwrap_err().line(), Some(1));
        assert!(matches!(
            parse_run(b"q1 Q0 d1 1 inf a").unwrap_err(),
            IngestError::NonFinite { .. }
        ));
    }

    #[test]
    fn sample_metrics() {
        let m = parse_sample_metrics(b"s1\t1.0\ns2\t0.0").unwrap();
        assert_eq!(m.get("s1"), Some(1.0));
        assert_eq!(m.get("s2"), Some(0.0));
        assert!(matches!(
            parse_sample_metrics(b"s1\t1.0\ns1\t0.0").unwrap_err(),
            IngestError::DuplicateSample { line: 2, .. }
        ));
        assert!(matches!(
            parse_sample_metrics(b"s1\tNaN").unwrap_err(),
            IngestError::NonFinite { line: 1, .. }
        ));
        assert!(matches!(
            parse_sample_metrics(b"s1\tabc").unwrap_err(),
            IngestError::Malformed { line: 1, .. }
        ));
    }

    #[test]
    fn correlation_record() {
        let rec = parse_correlation_record(b"0.5\t12\n").unwrap();
        assert_eq!(rec, CorrelationRecord { r: 0.5, n: 12 });
        assert!(parse_correlation_record(b"").is_err());
        assert!(parse_correlation_record(b"0.5\t12\n0.4\t10").is_err());
        assert!(parse_correlation_record(b"0.5\t1.5").is_err());
    }

    const MANIFEST: &str = r#"{
        "metric": "ndcg@10",
        "effect_type": "MD",
        "alpha": 0.05,
        "experiments": [
            {"task_id": "b", "display_name": "B", "mode": "retrieval",
             "treatment_path": "t.run", "control_path": "c.run", "qrels_path": "q.txt"},
            {"task_id": "a", "display_name": "A", "mode": "retrieval",
             "treatment_path": "t2.run", "control_path": "c2.run", "qrels_path": "q2.txt"}
        ]
    }"#;

    #[test]
    fn manifest_preserves_order() {
        let m = load_manifest(MANIFEST.as_bytes()).unwrap();
        assert_eq!(m.effect_type, EffectFamily::Md);
        assert_eq!(m.metric, MetricSpec::Ndcg { k: 10 });
        let ids: Vec<_> = m.experiments.iter().map(|e| e.task_id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
    }

    #[test]
    fn manifest_rejections() {
        let bad_effect = MANIFEST.replace("\"MD\"", "\"XYZ\"");
        let err = load_manifest(bad_effect.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("MD|SMD|CORR"), "{err}");

        let bad_alpha = MANIFEST.replace("0.05", "1.0");
        assert!(load_manifest(bad_alpha.as_bytes()).is_err());

        let no_qrels = MANIFEST.replace(r#", "qrels_path": "q.txt""#, "");
        let err = load_manifest(no_qrels.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("qrels_path"), "{err}");

        let dup = MANIFEST.replace(r#""task_id": "a""#, r#""task_id": "b""#);
        assert!(load_manifest(dup.as_bytes()).is_err());

        let missing = MANIFEST.replace(r#""metric": "ndcg@10","#, "");
        let err = load_manifest(missing.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("metric"), "{err}");

        assert!(load_manifest(br#"{"metric":"accuracy","effect_type":"MD","alpha":0.05,"experiments":[]}"#).is_err());
    }

    #[test]
    fn classification_may_not_have_qrels() {
        let m = r#"{"metric":"accuracy","effect_type":"SMD","alpha":0.1,"experiments":[
            {"task_id":"x","display_name":"X","mode":"classification",
             "treatment_path":"t","control_path":"c","qrels_path":"q"}]}"#;
        assert!(load_manifest(m.as_bytes()).is_err());
    }
}
