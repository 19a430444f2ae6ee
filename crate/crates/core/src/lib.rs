//! Effect-size based meta-analysis for multi-task evaluation.
//!
//! The crate takes per-item evaluation results of a *treatment* and a
//! *control* system on several tasks, turns each task into an effect size
//! with a variance, pools the effects under a DerSimonian-Laird
//! random-effects model and renders the result as a forest plot and a
//! markdown table.
//!
//! The pipeline is split into small modules that can be used on their own:
//!
//! * [`ingest`] parses TREC qrels and runs, per-sample metric files and the
//!   JSON experiment manifest.
//! * [`metrics`] computes nDCG@k, J@k and per-sample accuracy, and aligns
//!   treatment and control values into [`metrics::PairedSamples`].
//! * [`effects`] turns paired samples into raw mean differences, Hedges' g
//!   or Fisher z effects.
//! * [`meta`] pools effects and attaches confidence intervals.
//! * [`report`] renders forest plots (SVG) and tables (markdown).
//! * [`pipeline`] wires everything together for the `metaeval analyze`
//!   command line.
//!
//! ```
//! use metaeval::effects::{effect_md, paired_stats};
//! use metaeval::meta::pool;
//! use metaeval::metrics::PairedSamples;
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let a = PairedSamples::new(
//!     vec!["q1".into(), "q2".into(), "q3".into()],
//!     vec![0.9, 0.6, 0.3],
//!     vec![0.8, 0.4, 0.3],
//! )?;
//! let b = PairedSamples::new(
//!     vec!["q1".into(), "q2".into(), "q3".into()],
//!     vec![0.5, 0.7, 0.2],
//!     vec![0.5, 0.5, 0.1],
//! )?;
//! let effects = [effect_md(&paired_stats(&a)), effect_md(&paired_stats(&b))];
//! let pooled = pool(&effects, &["a".to_string(), "b".to_string()], 0.05)?;
//! assert!(pooled.summary.value > 0.0);
//! # Ok(())
//! # }
//! ```

pub mod effects;
pub mod ingest;
pub mod meta;
pub mod metrics;
pub mod pipeline;
pub mod report;

pub use effects::{EffectFamily, EffectSize};
pub use meta::{Interval, PooledResult};
