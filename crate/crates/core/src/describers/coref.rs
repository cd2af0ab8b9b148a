//! Descriptions aggregated from the clusters of an external coreference
//! system.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{description, DescribeError, DescriptionSource, ReferentDescription, CHAIN_SEPARATOR};
use crate::context::{LinguisticContext, WindowName};
use crate::corpus::{Dialogue, Span};
use crate::tokenize::{set_of_words, tokens};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationVariant {
    Chain,
    Set,
}

/// Clusters of character spans over a window text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CorefClusterOutput {
    pub clusters: Vec<Vec<Span>>,
}

impl CorefClusterOutput {
    /// Spans must fit the text and no span may appear in two clusters.
    pub fn validate(&self, text: &str) -> Result<(), String> {
        let n = text.chars().count();
        let mut seen = HashSet::new();
        for cluster in &self.clusters {
            for s in cluster {
                if s.is_empty() || s.end > n {
                    return Err(format!(
                        "span [{}, {}) outside text of {n} characters",
                        s.start, s.end
                    ));
                }
                if !seen.insert(*s) {
                    return Err(format!(
                        "span [{}, {}) in more than one cluster",
                        s.start, s.end
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Aggregates the cluster of `target` into a description.
///
/// Only cluster spans beginning before the target ends are used. An exact
/// span match aggregates the whole cluster. Otherwise the cluster with the
/// largest character overlap (earliest on ties) is aggregated and the target
/// tokens it lacks are appended. With no overlapping cluster the target's
/// own text is returned.
pub fn coref_aggregate(
    window_text: &str,
    target: Span,
    clusters: &CorefClusterOutput,
    variant: AggregationVariant,
) -> String {
    let target_text = target.slice(window_text).unwrap_or("");
    let visible = |c: &Vec<Span>| -> Vec<Span> {
        let mut spans: Vec<Span> = c
            .iter()
            .copied()
            .filter(|s| !s.is_empty() && s.start < target.end && s.slice(window_text).is_some())
            .collect();
        spans.sort();
        spans.dedup();
        spans
    };

    if let Some(c) = clusters.clusters.iter().find(|c| c.contains(&target)) {
        let spans = visible(c);
        let texts = spans.iter().filter_map(|s| s.slice(window_text));
        return match variant {
            AggregationVariant::Chain => texts.collect::<Vec<_>>().join(CHAIN_SEPARATOR),
            AggregationVariant::Set => set_of_words(texts).join(" "),
        };
    }

    let best = clusters
        .clusters
        .iter()
        .map(|c| c.iter().map(|s| s.overlap(&target)).max().unwrap_or(0))
        .enumerate()
        .filter(|(_, o)| *o > 0)
        // max_by_key keeps the last maximum; reverse so the earliest cluster wins
        .rev()
        .max_by_key(|(_, o)| *o);

    let Some((idx, _)) = best else {
        return match variant {
            AggregationVariant::Chain => target_text.to_string(),
            AggregationVariant::Set => set_of_words([target_text]).join(" "),
        };
    };

    let spans = visible(&clusters.clusters[idx]);
    let texts: Vec<&str> = spans.iter().filter_map(|s| s.slice(window_text)).collect();
    let have: HashSet<String> = texts.iter().flat_map(|t| tokens(t)).collect();
    let mut missing = Vec::new();
    for t in tokens(target_text) {
        if !have.contains(&t) && !missing.contains(&t) {
            missing.push(t);
        }
    }
    match variant {
        AggregationVariant::Chain => {
            let mut out = texts.join(CHAIN_SEPARATOR);
            if !missing.is_empty() {
                out.push_str(CHAIN_SEPARATOR);
                out.push_str(&missing.join(" "));
            }
            out
        }
        AggregationVariant::Set => {
            let mut words = set_of_words(texts.iter().copied());
            words.extend(missing);
            words.join(" ")
        }
    }
}

/// Coreference description for the mention of `context`.
pub fn describe_coref(
    context: &LinguisticContext,
    clusters: &CorefClusterOutput,
    variant: AggregationVariant,
) -> ReferentDescription {
    let text = coref_aggregate(
        &context.window_text(),
        context.mention_span_in_window(),
        clusters,
        variant,
    );
    let source = match variant {
        AggregationVariant::Chain => DescriptionSource::CorefChain,
        AggregationVariant::Set => DescriptionSource::CorefSet,
    };
    description(&context.mention_id, text, source, context.window.name)
}

/// The annotated chains of a context expressed as cluster output, so the
/// aggregation path can be checked against the ground-truth extractors.
pub fn gold_clusters(dialogue: &Dialogue, context: &LinguisticContext) -> CorefClusterOutput {
    let offsets = context.utterance_offsets();
    let mut order: Vec<&str> = Vec::new();
    let mut by_chain: HashMap<&str, Vec<Span>> = HashMap::new();
    for (ctx_u, offset) in context.utterances.iter().zip(offsets) {
        let u = &dialogue.utterances[ctx_u.index];
        let mut ms: Vec<_> = u.mentions.iter().collect();
        ms.sort_by_key(|m| m.span);
        for m in ms {
            let entry = by_chain.entry(m.chain_id.as_str()).or_insert_with(|| {
                order.push(m.chain_id.as_str());
                Vec::new()
            });
            entry.push(m.span.shifted(offset));
        }
    }
    CorefClusterOutput {
        clusters: order
            .into_iter()
            .map(|c| by_chain.remove(c).unwrap_or_default())
            .collect(),
    }
}

/// One line of a cluster ingestion file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefRecord {
    pub mention_id: String,
    pub window: WindowName,
    pub clusters: CorefClusterOutput,
}

/// Cluster output for every (mention, window) pair, loaded from a
/// line-delimited file of [`CorefRecord`]s.
#[derive(Debug, Clone, Default)]
pub struct CorefStore {
    records: BTreeMap<(String, WindowName), CorefClusterOutput>,
}

impl CorefStore {
    pub fn load(path: &Path) -> Result<Self, DescribeError> {
        let err = |message: String| DescribeError::Fixture {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut store = CorefStore::default();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let r: CorefRecord =
                serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", n + 1)))?;
            store.insert(r);
        }
        Ok(store)
    }

    pub fn insert(&mut self, record: CorefRecord) {
        self.records
            .insert((record.mention_id, record.window), record.clusters);
    }

    pub fn get(&self, mention_id: &str, window: WindowName) -> Option<&CorefClusterOutput> {
        self.records.get(&(mention_id.to_string(), window))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
