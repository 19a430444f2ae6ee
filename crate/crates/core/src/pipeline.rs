//! End-to-end analysis: manifest → per-task metrics → effects → pooling →
//! forest plot and markdown report.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::effects::{self, EffectError, EffectFamily, EffectSize};
use crate::ingest::{self, ExperimentMode, Experiment, IngestError, Manifest};
use crate::meta::{self, MetaError, PooledResult};
use crate::metrics::{self, DroppedIds, MetricError, MetricSpec};
use crate::report::{self, fixed, ForestPlotSpec, ReportError};

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Manifest { path: PathBuf, source: IngestError },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("task `{task}`: {path}: {source}")]
    Parse {
        task: String,
        path: PathBuf,
        source: IngestError,
    },
    #[error("task `{task}`: {message}")]
    Data { task: String, message: String },
    #[error("task `{task}`: {source}")]
    Metric { task: String, source: MetricError },
    #[error("task `{task}`: {source}")]
    Effect { task: String, source: EffectError },
    #[error("pooling failed: {0}")]
    Pool(#[from] MetaError),
    #[error("rendering failed: {0}")]
    Render(#[from] ReportError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl AnalyzeError {
    /// 1 = usage or manifest, 2 = ingest or I/O, 3 = statistical degeneracy.
    pub fn exit_code(&self) -> i32 {
        match self {
            AnalyzeError::Usage(_) | AnalyzeError::Manifest { .. } => 1,
            AnalyzeError::Read { .. }
            | AnalyzeError::Parse { .. }
            | AnalyzeError::Data { .. }
            | AnalyzeError::Write { .. } => 2,
            AnalyzeError::Metric { source, .. } => match source {
                MetricError::InsufficientPairs { .. } => 3,
                _ => 2,
            },
            AnalyzeError::Effect { .. } | AnalyzeError::Pool(_) | AnalyzeError::Render(_) => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOptions {
    pub config: PathBuf,
    pub effect_type: Option<EffectFamily>,
    pub alpha: Option<f64>,
}

/// What happened to one task on its way to an effect size.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDiagnostics {
    pub task_id: String,
    pub display_name: String,
    pub n_pairs: usize,
    pub dropped: DroppedIds,
    pub mean_treatment: Option<f64>,
    pub mean_control: Option<f64>,
    pub judged_treatment: Option<f64>,
    pub judged_control: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub manifest: Manifest,
    pub effect_type: EffectFamily,
    pub alpha: f64,
    pub tasks: Vec<TaskDiagnostics>,
    pub pooled: PooledResult,
    pub outputs: Vec<PathBuf>,
}

fn read(path: &Path) -> Result<Vec<u8>, AnalyzeError> {
    std::fs::read(path).map_err(|source| AnalyzeError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn map_mean(values: &std::collections::BTreeMap<String, f64>) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.values().sum::<f64>() / values.len() as f64)
    }
}

struct TaskContext<'a> {
    experiment: &'a Experiment,
    base: &'a Path,
}

impl TaskContext<'_> {
    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    fn task(&self) -> String {
        self.experiment.task_id.clone()
    }

    fn parse<T>(
        &self,
        path: &Path,
        parser: impl FnOnce(&[u8]) -> Result<T, IngestError>,
    ) -> Result<T, AnalyzeError> {
        let full = self.resolve(path);
        let bytes = read(&full)?;
        parser(&bytes).map_err(|source| AnalyzeError::Parse {
            task: self.task(),
            path: full,
            source,
        })
    }

    fn metric_err(&self, source: MetricError) -> AnalyzeError {
        AnalyzeError::Metric {
            task: self.task(),
            source,
        }
    }

    fn effect_err(&self, source: EffectError) -> AnalyzeError {
        AnalyzeError::Effect {
            task: self.task(),
            source,
        }
    }
}

fn retrieval_task(
    ctx: &TaskContext<'_>,
    k: usize,
    family: EffectFamily,
) -> Result<(EffectSize, TaskDiagnostics), AnalyzeError> {
    let e = ctx.experiment;
    let qrels_path = e.qrels_path.as_deref().ok_or_else(|| AnalyzeError::Usage(format!(
        "retrieval task `{}` has no qrels_path",
        e.task_id
    )))?;
    let qrels = ctx.parse(qrels_path, ingest::parse_qrels)?;
    let treatment = ctx.parse(&e.treatment_path, ingest::parse_run)?;
    let control = ctx.parse(&e.control_path, ingest::parse_run)?;
    let ndcg_t = metrics::ndcg_at_k(&treatment, &qrels, k).map_err(|s| ctx.metric_err(s))?;
    let ndcg_c = metrics::ndcg_at_k(&control, &qrels, k).map_err(|s| ctx.metric_err(s))?;
    let judged_t = metrics::judged_at_k(&treatment, &qrels, k).map_err(|s| ctx.metric_err(s))?;
    let judged_c = metrics::judged_at_k(&control, &qrels, k).map_err(|s| ctx.metric_err(s))?;
    let (paired, dropped) = metrics::pair(&ndcg_t, &ndcg_c).map_err(|s| ctx.metric_err(s))?;
    let effect = paired_effect(ctx, &paired, family)?;
    Ok((
        effect,
        TaskDiagnostics {
            task_id: e.task_id.clone(),
            display_name: e.display_name.clone(),
            n_pairs: paired.len(),
            dropped,
            mean_treatment: Some(mean(paired.treatment())),
            mean_control: Some(mean(paired.control())),
            judged_treatment: map_mean(&judged_t),
            judged_control: map_mean(&judged_c),
        },
    ))
}

fn paired_effect(
    ctx: &TaskContext<'_>,
    paired: &metrics::PairedSamples,
    family: EffectFamily,
) -> Result<EffectSize, AnalyzeError> {
    let stats = effects::paired_stats(paired);
    match family {
        EffectFamily::Md => Ok(effects::effect_md(&stats)),
        EffectFamily::Smd => effects::effect_smd(&stats).map_err(|s| ctx.effect_err(s)),
        EffectFamily::Corr => Err(AnalyzeError::Usage(format!(
            "task `{}`: CORR effects are read from correlation files, not paired samples",
            ctx.experiment.task_id
        ))),
    }
}

fn check_correctness(ctx: &TaskContext<'_>, path: &Path, values: &ingest::SampleMetricFile) -> Result<(), AnalyzeError> {
    if let Some((id, v)) = values.values().iter().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(AnalyzeError::Data {
            task: ctx.task(),
            message: format!(
                "{}: accuracy without gold_path expects 0/1 correctness values, sample `{id}` has {v}",
                ctx.resolve(path).display()
            ),
        });
    }
    Ok(())
}

fn classification_task(
    ctx: &TaskContext<'_>,
    metric: MetricSpec,
    family: EffectFamily,
) -> Result<(EffectSize, TaskDiagnostics), AnalyzeError> {
    let e = ctx.experiment;
    let treatment = ctx.parse(&e.treatment_path, ingest::parse_sample_metrics)?;
    let control = ctx.parse(&e.control_path, ingest::parse_sample_metrics)?;
    let (t_values, c_values) = match (metric, &e.gold_path) {
        (MetricSpec::Accuracy, Some(gold_path)) => {
            let gold = ctx.parse(gold_path, ingest::parse_sample_metrics)?;
            (
                metrics::accuracy_per_sample(&treatment, &gold).map_err(|s| ctx.metric_err(s))?,
                metrics::accuracy_per_sample(&control, &gold).map_err(|s| ctx.metric_err(s))?,
            )
        }
        (MetricSpec::Accuracy, None) => {
            check_correctness(ctx, &e.treatment_path, &treatment)?;
            check_correctness(ctx, &e.control_path, &control)?;
            (treatment.into_values(), control.into_values())
        }
        (MetricSpec::Identity, _) => (treatment.into_values(), control.into_values()),
        (MetricSpec::Ndcg { .. }, _) => unreachable!("validated before task processing"),
    };
    let (paired, dropped) = metrics::pair(&t_values, &c_values).map_err(|s| ctx.metric_err(s))?;
    let effect = paired_effect(ctx, &paired, family)?;
    Ok((
        effect,
        TaskDiagnostics {
            task_id: e.task_id.clone(),
            display_name: e.display_name.clone(),
            n_pairs: paired.len(),
            dropped,
            mean_treatment: Some(mean(paired.treatment())),
            mean_control: Some(mean(paired.control())),
            judged_treatment: None,
            judged_control: None,
        },
    ))
}

fn correlation_task(ctx: &TaskContext<'_>) -> Result<(EffectSize, TaskDiagnostics), AnalyzeError> {
    let e = ctx.experiment;
    let record = ctx.parse(&e.treatment_path, ingest::parse_correlation_record)?;
    let effect = effects::effect_corr(record.r, record.n).map_err(|s| ctx.effect_err(s))?;
    Ok((
        effect,
        TaskDiagnostics {
            task_id: e.task_id.clone(),
            display_name: e.display_name.clone(),
            n_pairs: record.n,
            dropped: DroppedIds::default(),
            mean_treatment: None,
            mean_control: None,
            judged_treatment: None,
            judged_control: None,
        },
    ))
}

fn check_compatibility(manifest: &Manifest, family: EffectFamily) -> Result<(), AnalyzeError> {
    for e in &manifest.experiments {
        let problem = match (e.mode, manifest.metric, family) {
            (ExperimentMode::Retrieval, _, EffectFamily::Corr) => {
                Some("CORR needs classification-mode tasks with `r n` correlation files")
            }
            (ExperimentMode::Retrieval, MetricSpec::Ndcg { .. }, _) => None,
            (ExperimentMode::Retrieval, _, _) => Some("retrieval tasks need an ndcg@k metric"),
            (ExperimentMode::Classification, MetricSpec::Ndcg { .. }, EffectFamily::Md | EffectFamily::Smd) => {
                Some("ndcg@k needs retrieval-mode tasks")
            }
            (ExperimentMode::Classification, _, _) => None,
        };
        if let Some(problem) = problem {
            return Err(AnalyzeError::Usage(format!("task `{}`: {problem}", e.task_id)));
        }
    }
    Ok(())
}

/// Runs the full analysis without writing anything.
pub fn analyze(opts: &AnalyzeOptions) -> Result<RunReport, AnalyzeError> {
    let bytes = std::fs::read(&opts.config).map_err(|source| AnalyzeError::Usage(format!(
        "cannot read manifest {}: {source}",
        opts.config.display()
    )))?;
    let manifest = ingest::load_manifest(&bytes).map_err(|source| AnalyzeError::Manifest {
        path: opts.config.clone(),
        source,
    })?;
    let family = opts.effect_type.unwrap_or(manifest.effect_type);
    let alpha = match opts.alpha {
        Some(a) => ingest::check_alpha(a).map_err(|e| AnalyzeError::Usage(e.to_string()))?,
        None => manifest.alpha,
    };
    check_compatibility(&manifest, family)?;

    let base = opts
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut effects = Vec::with_capacity(manifest.experiments.len());
    let mut tasks = Vec::with_capacity(manifest.experiments.len());
    for experiment in &manifest.experiments {
        let ctx = TaskContext {
            experiment,
            base: &base,
        };
        let (effect, diag) = match (family, experiment.mode, manifest.metric) {
            (EffectFamily::Corr, _, _) => correlation_task(&ctx)?,
            (_, ExperimentMode::Retrieval, MetricSpec::Ndcg { k }) => retrieval_task(&ctx, k, family)?,
            (_, ExperimentMode::Classification, metric) => classification_task(&ctx, metric, family)?,
            (_, ExperimentMode::Retrieval, _) => unreachable!("validated by check_compatibility"),
        };
        effects.push(effect);
        tasks.push(diag);
    }
    let ids: Vec<String> = manifest.experiments.iter().map(|e| e.task_id.clone()).collect();
    let pooled = meta::pool(&effects, &ids, alpha)?;
    Ok(RunReport {
        manifest,
        effect_type: family,
        alpha,
        tasks,
        pooled,
        outputs: Vec::new(),
    })
}

fn transition(control: Option<f64>, treatment: Option<f64>) -> Option<String> {
    Some(format!("{} → {}", fixed(control?, 3), fixed(treatment?, 3)))
}

/// Forest plot of a run, with metric and judged-ratio columns where known.
pub fn forest_spec(run: &RunReport) -> Result<ForestPlotSpec, ReportError> {
    let labels: Vec<String> = run.tasks.iter().map(|t| t.display_name.clone()).collect();
    let mut title = format!("{} over {} tasks", run.effect_type.describe(), run.tasks.len());
    if run.manifest.metric != MetricSpec::Identity {
        let _ = write!(title, " ({})", run.manifest.metric);
    }
    let mut spec = ForestPlotSpec::from_result(&run.pooled, &labels, &title)?;
    for (row, task) in spec.rows.iter_mut().zip(&run.tasks) {
        row.metric_note = transition(task.mean_control, task.mean_treatment);
        row.judged_note = transition(task.judged_control, task.judged_treatment);
    }
    spec.metric_header = match run.manifest.metric {
        MetricSpec::Identity => "Metric C → T".to_string(),
        metric => format!("{metric} C → T"),
    };
    if let MetricSpec::Ndcg { k } = run.manifest.metric {
        spec.judged_header = format!("J@{k} C → T");
    }
    Ok(spec)
}

/// Markdown report: settings, effect table, heterogeneity and per-task
/// diagnostics.
pub fn render_markdown(run: &RunReport) -> String {
    let labels: Vec<String> = run.tasks.iter().map(|t| t.display_name.clone()).collect();
    let mut s = String::new();
    let _ = writeln!(s, "# Meta-analysis report\n");
    let _ = writeln!(s, "- Metric: {}", run.manifest.metric);
    let _ = writeln!(s, "- Effect type: {}", run.effect_type);
    let _ = writeln!(s, "- Measure: {}", run.effect_type.describe());
    let _ = writeln!(s, "- Alpha: {}", run.alpha);
    let _ = writeln!(s, "- Tasks: {}\n", run.tasks.len());
    s.push_str(&report::render_table_labeled(&run.pooled, &labels));
    let _ = writeln!(
        s,
        "\nHeterogeneity: Q = {}, df = {}, T² = {}\n",
        fixed(run.pooled.q, 4),
        run.pooled.k().saturating_sub(1),
        fixed(run.pooled.tau_squared, 6)
    );
    let _ = writeln!(s, "## Diagnostics\n");
    let has_judged = run.tasks.iter().any(|t| t.judged_control.is_some());
    if has_judged {
        let _ = writeln!(s, "| Task | Pairs | Dropped | Control | Treatment | J control | J treatment |");
        let _ = writeln!(s, "| --- | ---: | ---: | ---: | ---: | ---: | ---: |");
    } else {
        let _ = writeln!(s, "| Task | Pairs | Dropped | Control | Treatment |");
        let _ = writeln!(s, "| --- | ---: | ---: | ---: | ---: |");
    }
    let opt = |v: Option<f64>| v.map(|v| fixed(v, 4)).unwrap_or_else(|| "-".into());
    for t in &run.tasks {
        let _ = write!(
            s,
            "| {} | {} | {} | {} | {} |",
            t.display_name.replace('|', "\\|"),
            t.n_pairs,
            t.dropped.count(),
            opt(t.mean_control),
            opt(t.mean_treatment)
        );
        if has_judged {
            let _ = write!(s, " {} | {} |", opt(t.judged_control), opt(t.judged_treatment));
        }
        s.push('\n');
    }
    let dropped: Vec<&TaskDiagnostics> = run.tasks.iter().filter(|t| !t.dropped.is_empty()).collect();
    if !dropped.is_empty() {
        let _ = writeln!(s, "\n## Warnings\n");
        for t in dropped {
            let _ = writeln!(
                s,
                "- `{}`: dropped {} unpaired ids (treatment only: [{}]; control only: [{}])",
                t.task_id,
                t.dropped.count(),
                t.dropped.treatment_only.join(", "),
                t.dropped.control_only.join(", ")
            );
        }
    }
    s
}

fn temp_in(path: &Path) -> Result<tempfile::NamedTempFile, AnalyzeError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    tempfile::NamedTempFile::new_in(&dir).map_err(|source| AnalyzeError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Renders both artifacts and moves them into place only once both are
/// fully written.
pub fn write_outputs(run: &mut RunReport, svg_path: &Path, md_path: &Path) -> Result<(), AnalyzeError> {
    let svg = report::render_forest_svg(&forest_spec(run)?)?;
    let md = render_markdown(run);
    let mut staged = Vec::new();
    for (path, bytes) in [(svg_path, svg.as_slice()), (md_path, md.as_bytes())] {
        let mut tmp = temp_in(path)?;
        tmp.write_all(bytes)
            .and_then(|_| tmp.flush())
            .map_err(|source| AnalyzeError::Write {
                path: path.to_path_buf(),
                source,
            })?;
        staged.push((tmp, path));
    }
    let mut written: Vec<PathBuf> = Vec::new();
    for (tmp, path) in staged {
        if let Err(e) = tmp.persist(path) {
            for done in &written {
                let _ = std::fs::remove_file(done);
            }
            return Err(AnalyzeError::Write {
                path: path.to_path_buf(),
                source: e.error,
            });
        }
        written.push(path.to_path_buf());
    }
    run.outputs = written;
    Ok(())
}

/// Analyze and write; the error carries the process exit code.
pub fn run(opts: &AnalyzeOptions, svg_path: &Path, md_path: &Path) -> Result<RunReport, AnalyzeError> {
    let mut report = analyze(opts)?;
    write_outputs(&mut report, svg_path, md_path)?;
    Ok(report)
}
