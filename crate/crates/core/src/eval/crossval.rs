use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{ndcg_at, reciprocal_rank, RetrievalMetrics};
use super::random::{expected_random_accuracy, expected_random_mrr};
use super::text::{TextGenMetrics, TextScores};
use super::EvalError;
use crate::context::{ContextWindow, WindowName};
use crate::corpus::{Corpus, FoldSpec};
use crate::describers::{gt_manual, Describer, Prepared};
use crate::retrieval::{
    encode_candidates, encode_text, score_and_rank, EmbeddingBackend, EmbeddingCache,
};
use crate::scalar::Scalar;

/// Whether ranked images are removed from the candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    Reduced,
    All,
}

impl CandidateMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CandidateMode::Reduced => "reduced",
            CandidateMode::All => "all",
        }
    }

    pub fn is_reduced(&self) -> bool {
        *self == CandidateMode::Reduced
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValConfig {
    pub windows: Vec<WindowName>,
    pub modes: Vec<CandidateMode>,
    /// Count the mention's own utterance in the window size.
    #[serde(default)]
    pub inclusive_windows: bool,
    /// Score descriptions against the manual label of the same window.
    #[serde(default = "yes")]
    pub text_metrics: bool,
    /// Also score text similarity with the retrieval backend's text encoder.
    #[serde(default)]
    pub cosine: bool,
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn yes() -> bool {
    true
}

impl Default for CrossValConfig {
    fn default() -> Self {
        CrossValConfig {
            windows: vec![WindowName::W7, WindowName::Full],
            modes: vec![CandidateMode::Reduced, CandidateMode::All],
            inclusive_windows: false,
            text_metrics: true,
            cosine: false,
            parallel: true,
        }
    }
}

impl CrossValConfig {
    fn window(&self, name: WindowName) -> ContextWindow {
        if self.inclusive_windows {
            ContextWindow::inclusive(name)
        } else {
            ContextWindow::preceding(name)
        }
    }
}

/// Called once per fold with the fold's split before evaluation, for
/// tuning on the training dialogues.
pub type InnerLoop<'a> = dyn Fn(&FoldSpec, &Corpus) -> Result<(), EvalError> + Sync + 'a;

/// One evaluated (mention, describer, window, mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub fold_id: String,
    pub dialogue_id: String,
    pub mention_id: String,
    pub describer: String,
    pub window: WindowName,
    pub mode: CandidateMode,
    pub description: String,
    pub referent: String,
    pub predicted: String,
    pub n_candidates: usize,
    pub rank: Option<usize>,
    pub reciprocal_rank: f64,
    pub ndcg: f64,
    /// Present when the mention has a manual label for the window.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reference: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub text: Option<TextScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub describer: String,
    pub window: WindowName,
    pub mode: CandidateMode,
    /// Pooled over the fold's mentions.
    pub micro: RetrievalMetrics,
    /// Mean of per-dialogue values.
    #[serde(rename = "macro")]
    pub macro_avg: RetrievalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRow {
    pub describer: String,
    pub window: WindowName,
    pub metrics: TextGenMetrics,
}

/// Expected scores of a random ranker over the evaluated items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomRow {
    pub mode: CandidateMode,
    pub accuracy: f64,
    pub mrr: f64,
    pub n_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_id: String,
    pub retrieval: Vec<RetrievalRow>,
    pub text: Vec<TextRow>,
    pub random: Vec<RandomRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: Vec<FoldResult>,
    /// Mean over folds of every rate; counts are totals.
    pub averages: FoldResult,
    pub items: Vec<ItemRecord>,
    pub describers: Vec<String>,
    pub windows: Vec<WindowName>,
    pub modes: Vec<CandidateMode>,
}

/// Evaluates every describer on each fold's held-out dialogues.
///
/// Only single-image mentions are scored. Folds run in parallel when the
/// config allows; results are assembled in fold order either way.
pub fn run_cross_validation<T: Scalar>(
    corpus: &Corpus,
    describers: &[Describer],
    backend: &dyn EmbeddingBackend<T>,
    cache: &EmbeddingCache<T>,
    config: &CrossValConfig,
    inner: Option<&InnerLoop<'_>>,
) -> Result<CrossValReport, EvalError> {
    if describers.is_empty() || config.windows.is_empty() || config.modes.is_empty() {
        return Err(EvalError::EmptyConfig);
    }
    let mut names: Vec<&str> = describers.iter().map(|d| d.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(EvalError::DuplicateDescriber(w[0].to_string()));
    }
    let folds = corpus.make_folds()?;
    // bind every describer to every fold first, so a mis-tagged fixture
    // stops the run before anything is scored
    let mut prepared = Vec::with_capacity(folds.len());
    for f in &folds {
        let mut per = Vec::new();
        for d in describers {
            for &w in &config.windows {
                per.push(d.prepare(&f.fold_id, w)?);
            }
        }
        prepared.push(per);
    }
    let run = |(f, p): (&FoldSpec, &Vec<Prepared<'_>>)| -> Result<(FoldResult, Vec<ItemRecord>), EvalError> {
        if let Some(hook) = inner {
            hook(f, corpus)?;
        }
        evaluate_fold(corpus, f, p, backend, cache, config)
    };
    let per_fold: Vec<(FoldResult, Vec<ItemRecord>)> = if config.parallel {
        folds
            .par_iter()
            .zip(&prepared)
            .map(run)
            .collect::<Result<_, _>>()?
    } else {
        folds
            .iter()
            .zip(&prepared)
            .map(run)
            .collect::<Result<_, _>>()?
    };
    let (folds, items): (Vec<FoldResult>, Vec<Vec<ItemRecord>>) = per_fold.into_iter().unzip();
    let averages = average_folds(&folds);
    Ok(CrossValReport {
        averages,
        folds,
        items: items.into_iter().flatten().collect(),
        describers: describers.iter().map(|d| d.name.clone()).collect(),
        windows: config.windows.clone(),
        modes: config.modes.clone(),
    })
}

fn evaluate_fold<T: Scalar>(
    corpus: &Corpus,
    fold: &FoldSpec,
    prepared: &[Prepared<'_>],
    backend: &dyn EmbeddingBackend<T>,
    cache: &EmbeddingCache<T>,
    config: &CrossValConfig,
) -> Result<(FoldResult, Vec<ItemRecord>), EvalError> {
    let text_backend = config.cosine.then_some(backend);
    let mut items = Vec::new();
    let mut result = FoldResult {
        fold_id: fold.fold_id.clone(),
        retrieval: Vec::new(),
        text: Vec::new(),
        random: Vec::new(),
    };
    let dialogues = fold
        .test_dialogue_ids
        .iter()
        .map(|id| corpus.dialogue(id))
        .collect::<Result<Vec<_>, _>>()?;

    for (prepared, &wname) in prepared.iter().zip(config.windows.iter().cycle()) {
        let describer = prepared.describer();
        let window = config.window(wname);
        let mut text_scores = Vec::new();
        let mut by_mode: BTreeMap<CandidateMode, Vec<ItemRecord>> = BTreeMap::new();
        for dialogue in &dialogues {
            for m in dialogue.single_image_mentions() {
                let mention_id = &m.mention.mention_id;
                let referent = m.mention.single_referent().expect("single-image mention");
                let d = prepared.describe(dialogue, mention_id, window)?;
                let reference = config
                    .text_metrics
                    .then(|| gt_manual(m.mention, wname).ok().map(|r| r.text))
                    .flatten();
                let text = reference
                    .as_deref()
                    .map(|r| TextScores::compute(&d.text, r, text_backend))
                    .transpose()?;
                if let Some(t) = text {
                    text_scores.push(t);
                }
                let v = encode_text(backend, &d.text)?;
                for &mode in &config.modes {
                    let candidates =
                        corpus.candidate_set_at(dialogue, mention_id, mode.is_reduced())?;
                    let a = encode_candidates(backend, &candidates, cache)?;
                    let r = score_and_rank(&a, &v)?.resolve(mention_id, referent);
                    by_mode.entry(mode).or_default().push(ItemRecord {
                        fold_id: fold.fold_id.clone(),
                        dialogue_id: dialogue.dialogue_id.clone(),
                        mention_id: mention_id.clone(),
                        describer: describer.name.clone(),
                        window: wname,
                        mode,
                        description: d.text.clone(),
                        referent: referent.to_string(),
                        predicted: r.predicted.clone(),
                        n_candidates: candidates.len(),
                        rank: r.rank_of_referent,
                        reciprocal_rank: reciprocal_rank(r.rank_of_referent),
                        ndcg: ndcg_at(r.rank_of_referent),
                        reference: reference.clone(),
                        text,
                    });
                }
            }
        }
        for &mode in &config.modes {
            let rows = by_mode.remove(&mode).unwrap_or_default();
            result.retrieval.push(RetrievalRow {
                describer: describer.name.clone(),
                window: wname,
                mode,
                micro: metrics_of(&rows),
                macro_avg: macro_metrics(&rows),
            });
            if result.random.len() < config.modes.len() {
                result.random.push(random_row(mode, &rows)?);
            }
            items.extend(rows);
        }
        result.text.push(TextRow {
            describer: describer.name.clone(),
            window: wname,
            metrics: TextGenMetrics::from_items(&text_scores),
        });
    }
    Ok((result, items))
}

fn metrics_of(rows: &[ItemRecord]) -> RetrievalMetrics {
    RetrievalMetrics::from_ranks(&rows.iter().map(|r| r.rank).collect::<Vec<_>>())
}

fn macro_metrics(rows: &[ItemRecord]) -> RetrievalMetrics {
    let mut by_dialogue: BTreeMap<&str, Vec<Option<usize>>> = BTreeMap::new();
    for r in rows {
        by_dialogue.entry(&r.dialogue_id).or_default().push(r.rank);
    }
    let parts: Vec<RetrievalMetrics> = by_dialogue
        .values()
        .map(|v| RetrievalMetrics::from_ranks(v))
        .collect();
    RetrievalMetrics::mean(&parts)
}

fn random_row(mode: CandidateMode, rows: &[ItemRecord]) -> Result<RandomRow, EvalError> {
    let sizes: Vec<usize> = rows.iter().map(|r| r.n_candidates).collect();
    if sizes.is_empty() {
        return Ok(RandomRow {
            mode,
            accuracy: 0.0,
            mrr: 0.0,
            n_items: 0,
        });
    }
    Ok(RandomRow {
        mode,
        accuracy: expected_random_accuracy(&sizes)?,
        mrr: expected_random_mrr(&sizes)?,
        n_items: sizes.len(),
    })
}

/// Mean of each fold's values, row by row.
pub fn average_folds(folds: &[FoldResult]) -> FoldResult {
    let Some(first) = folds.first() else {
        return FoldResult {
            fold_id: "average".into(),
            retrieval: vec![],
            text: vec![],
            random: vec![],
        };
    };
    let retrieval = (0..first.retrieval.len())
        .map(|i| {
            let rows: Vec<&RetrievalRow> = folds.iter().map(|f| &f.retrieval[i]).collect();
            RetrievalRow {
                describer: rows[0].describer.clone(),
                window: rows[0].window,
                mode: rows[0].mode,
                micro: RetrievalMetrics::mean(&rows.iter().map(|r| r.micro).collect::<Vec<_>>()),
                macro_avg: RetrievalMetrics::mean(
                    &rows.iter().map(|r| r.macro_avg).collect::<Vec<_>>(),
                ),
            }
        })
        .collect();
    let text = (0..first.text.len())
        .map(|i| TextRow {
            describer: first.text[i].describer.clone(),
            window: first.text[i].window,
            metrics: TextGenMetrics::mean(
                &folds.iter().map(|f| f.text[i].metrics).collect::<Vec<_>>(),
            ),
        })
        .collect();
    let random = (0..first.random.len())
        .map(|i| {
            let used: Vec<&RandomRow> = folds
                .iter()
                .map(|f| &f.random[i])
                .filter(|r| r.n_items > 0)
                .collect();
            let k = used.len().max(1) as f64;
            RandomRow {
                mode: first.random[i].mode,
                accuracy: used.iter().map(|r| r.accuracy).sum::<f64>() / k,
                mrr: used.iter().map(|r| r.mrr).sum::<f64>() / k,
                n_items: folds.iter().map(|f| f.random[i].n_items).sum(),
            }
        })
        .collect();
    FoldResult {
        fold_id: "average".into(),
        retrieval,
        text,
        random,
    }
}
