//! Edit evaluation: success and magnitude scores on rewrite, paraphrase and
//! neighborhood prompts, generation entropy, reference similarity, essence
//! perplexity, and their aggregation with confidence intervals.

mod edit;
mod report;
mod scores;
mod text;

pub use edit::{edit_metrics, essence_score, evaluate_record, generate_texts, EvalOptions, GenerationSettings, RecordMetrics};
pub use report::{aggregate, format_table, mean_ci, MeanCi, MetricReport};
pub use scores::{magnitude_score, success_score};
pub use text::{generation_entropy, reference_score};
