//! Nearest-neighbour ranking, retrieval metrics, embedding export and the
//! improvement-tercile analysis.

mod analysis;
mod evaluate;
mod export;
mod metrics;
mod rank;

pub use analysis::{analyze_improvement_groups, ClassStat, Group, ImprovementAnalysis};
pub use evaluate::{
    default_threads, evaluate, score_queries, AtK, ClassAp, EvalOptions, MetricReport, QueryScores, THREADS_ENV,
};
pub use export::{embed_collection, write_embeddings_csv};
pub use metrics::{average_precision, average_precision_at, cosine_distance, precision_at_k};
pub use rank::{rank, rank_excluding, Collection, Metric, RankedList};
