//! Retrieval and text-generation metrics, random baselines and the
//! cross-validation runner.

mod crossval;
mod metrics;
mod random;
mod report;
mod text;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::describers::DescribeError;
use crate::retrieval::RetrievalError;

pub use crossval::{
    average_folds, run_cross_validation, CandidateMode, CrossValConfig, CrossValReport, FoldResult,
    InnerLoop, ItemRecord, RandomRow, RetrievalRow, TextRow,
};
pub use metrics::{accuracy, hit, mrr, ndcg, ndcg_at, reciprocal_rank, RetrievalMetrics};
pub use random::{expected_random_accuracy, expected_random_mrr, expected_random_mrr_exact};
pub use report::{render_tables, results_jsonl, write_report};
pub use text::{
    bleu, corpus_bleu, cosine_text_similarity, jaccard, lcs_len, rouge_l, TextGenMetrics,
    TextScores, BLEU_EPSILON, BLEU_MAX_ORDER,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Describe(#[from] DescribeError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("{0}")]
    InvalidSizes(&'static str),
    #[error("nothing to evaluate: no describers, windows or candidate modes")]
    EmptyConfig,
    #[error("describer name {0:?} used twice")]
    DuplicateDescriber(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("inner loop: {0}")]
    Inner(String),
}

impl EvalError {
    /// True when a generation fixture was tagged for another fold.
    pub fn is_leakage(&self) -> bool {
        matches!(
            self,
            EvalError::Describe(DescribeError::FoldMismatch { .. })
        )
    }
}
