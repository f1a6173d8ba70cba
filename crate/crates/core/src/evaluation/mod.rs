//! Automatic metrics, code-switching analysis, run aggregation and
//! human-evaluation sheets.

pub mod codeswitch;
pub mod human;
pub mod metrics;
pub mod stats;

pub use codeswitch::{
    code_switch_report, detect_code_switching, CodeSwitchLabel, CodeSwitchReport, ConstantIdentifier,
    InterrogativeLexicon, LanguageIdentifier, ScriptHeuristicIdentifier, WordTableIdentifier,
};
pub use human::{aggregate_human_ratings, export_human_eval_sheet, HumanEvalSheet, HumanEvalTable, RaterSheet};
pub use metrics::{compute_metric, MetricName};
pub use stats::{aggregate_runs, EvalReport, MetricSummary};
