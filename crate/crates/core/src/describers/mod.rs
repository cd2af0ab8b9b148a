//! Referent descriptions: heuristic baselines, ground-truth extraction,
//! coreference-cluster aggregation and generator adapters.
//!
//! Every describer maps a (mention, context window) pair to a non-empty
//! definite description that the retrieval step grounds against images.

mod configured;
mod coref;
mod generator;
mod lexicon;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{ContextError, ContextWindow, WindowName};
use crate::corpus::{CorpusError, Dialogue, Mention, MentionRef};
use crate::tokenize::set_of_words;

pub use configured::{Describer, DescriberConfig, DescriptionTable, Prepared};
pub use coref::{
    coref_aggregate, describe_coref, gold_clusters, AggregationVariant, CorefClusterOutput,
    CorefRecord, CorefStore,
};
pub use generator::{
    crdg_generate, generate_batch, EchoGenerator, FixtureGenerator, FixtureHeader,
    GenerationRequest, GeneratorBackend, GeneratorError, HttpGenerator,
};
pub use lexicon::ProformLexicon;

/// Joins mention surface strings in chain concatenations.
pub const CHAIN_SEPARATOR: &str = ", ";

#[derive(Debug, Error)]
pub enum DescribeError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("mention {mention_id} has no manual label for window {window}")]
    MissingLabel {
        mention_id: String,
        window: WindowName,
    },
    #[error("generator failed on {sample_id}: {message}")]
    Backend {
        sample_id: String,
        message: String,
        retryable: bool,
    },
    #[error("generator returned an empty description for {0}")]
    EmptyGeneration(String),
    #[error("sample {0} already carries a completion")]
    HasCompletion(String),
    #[error("no clusters for mention {mention_id} at window {window}")]
    MissingClusters {
        mention_id: String,
        window: WindowName,
    },
    #[error("{path}: {message}")]
    Fixture { path: String, message: String },
    #[error("leakage: {path} is tagged for fold {found}, not {expected}")]
    FoldMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path} holds generations for window {found}, not {expected}")]
    WindowMismatch {
        path: String,
        expected: WindowName,
        found: WindowName,
    },
    #[error("no description for mention {mention_id} at window {window}")]
    MissingDescription {
        mention_id: String,
        window: WindowName,
    },
    #[error(transparent)]
    Context(Box<ContextError>),
}

impl From<ContextError> for DescribeError {
    fn from(e: ContextError) -> Self {
        DescribeError::Context(Box::new(e))
    }
}

impl DescribeError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            DescribeError::Backend {
                retryable: true,
                ..
            }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionSource {
    Mention,
    Substitution,
    CorefChain,
    CorefSet,
    GtChain,
    GtSet,
    GtManual,
    Crdg,
}

impl DescriptionSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            DescriptionSource::Mention => "mention",
            DescriptionSource::Substitution => "substitution",
            DescriptionSource::CorefChain => "coref_chain",
            DescriptionSource::CorefSet => "coref_set",
            DescriptionSource::GtChain => "gt_chain",
            DescriptionSource::GtSet => "gt_set",
            DescriptionSource::GtManual => "gt_manual",
            DescriptionSource::Crdg => "crdg",
        }
    }
}

impl fmt::Display for DescriptionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DescriptionSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown describer {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferentDescription {
    pub mention_id: String,
    pub text: String,
    pub source: DescriptionSource,
    pub window: WindowName,
}

fn description(
    mention_id: &str,
    text: String,
    source: DescriptionSource,
    window: WindowName,
) -> ReferentDescription {
    ReferentDescription {
        mention_id: mention_id.to_string(),
        text,
        source,
        window,
    }
}

/// The marked mention on its own.
pub fn describe_mention(
    dialogue: &Dialogue,
    mention_id: &str,
    window: ContextWindow,
) -> Result<ReferentDescription, DescribeError> {
    let m = dialogue.find_mention(mention_id)?;
    Ok(description(
        mention_id,
        m.surface().to_string(),
        DescriptionSource::Mention,
        window.name,
    ))
}

/// Replaces a proform or non-descriptive mention by the most recent
/// preceding descriptive mention inside the window.
pub fn describe_substitution(
    dialogue: &Dialogue,
    mention_id: &str,
    lexicon: &ProformLexicon,
    window: ContextWindow,
) -> Result<ReferentDescription, DescribeError> {
    let target = dialogue.find_mention(mention_id)?;
    let first = window.first_visible(target.utterance.index);
    let preceding: Vec<&str> = dialogue
        .mentions()
        .into_iter()
        .filter(|m| m.utterance.index >= first && m.doc_key() < target.doc_key())
        .map(|m| m.surface())
        .collect();
    Ok(description(
        mention_id,
        substitute(target.surface(), &preceding, lexicon).to_string(),
        DescriptionSource::Substitution,
        window.name,
    ))
}

/// Substitution rule over a surface string and its preceding mentions.
pub fn substitute<'a>(
    surface: &'a str,
    preceding: &[&'a str],
    lexicon: &ProformLexicon,
) -> &'a str {
    if !lexicon.is_substitutable(surface) {
        return surface;
    }
    preceding
        .iter()
        .rev()
        .find(|s| !lexicon.is_substitutable(s))
        .copied()
        .unwrap_or(surface)
}

/// Same-chain mentions visible to the target under `window`, in document
/// order, ending with the target.
///
/// A mention in the target's utterance counts when it begins before the
/// target ends, which keeps nested and overlapping links but drops later
/// (cataphoric) ones.
pub fn chain_in_window<'a>(
    dialogue: &'a Dialogue,
    mention_id: &str,
    window: ContextWindow,
) -> Result<Vec<MentionRef<'a>>, DescribeError> {
    let target = dialogue.find_mention(mention_id)?;
    let first = window.first_visible(target.utterance.index);
    Ok(dialogue
        .mentions()
        .into_iter()
        .filter(|m| {
            m.mention.chain_id == target.mention.chain_id
                && m.utterance.index >= first
                && visible_from(m, &target)
        })
        .collect())
}

fn visible_from(m: &MentionRef<'_>, target: &MentionRef<'_>) -> bool {
    m.utterance.index < target.utterance.index
        || (m.utterance.index == target.utterance.index
            && m.mention.span.start < target.mention.span.end)
}

/// Incremental concatenation of the reference chain.
pub fn gt_chain_concat(
    dialogue: &Dialogue,
    mention_id: &str,
    window: ContextWindow,
) -> Result<ReferentDescription, DescribeError> {
    let chain = chain_in_window(dialogue, mention_id, window)?;
    let text = chain
        .iter()
        .map(|m| m.surface())
        .collect::<Vec<_>>()
        .join(CHAIN_SEPARATOR);
    Ok(description(
        mention_id,
        text,
        DescriptionSource::GtChain,
        window.name,
    ))
}

/// Incremental ordered set of the chain's unique words.
pub fn gt_set_of_words(
    dialogue: &Dialogue,
    mention_id: &str,
    window: ContextWindow,
) -> Result<ReferentDescription, DescribeError> {
    let chain = chain_in_window(dialogue, mention_id, window)?;
    let text = set_of_words(chain.iter().map(|m| m.surface())).join(" ");
    Ok(description(
        mention_id,
        text,
        DescriptionSource::GtSet,
        window.name,
    ))
}

/// The manually written label stored for `window`.
pub fn gt_manual(
    mention: &Mention,
    window: WindowName,
) -> Result<ReferentDescription, DescribeError> {
    match mention.manual_labels.get(window.as_str()) {
        Some(label) if !label.trim().is_empty() => Ok(description(
            &mention.mention_id,
            label.clone(),
            DescriptionSource::GtManual,
            window,
        )),
        _ => Err(DescribeError::MissingLabel {
            mention_id: mention.mention_id.clone(),
            window,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;

    fn figure1() -> Corpus {
        Corpus::load(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/tests/fixtures/figure1.jsonl"
        ))
        .unwrap()
    }

    #[test]
    fn mention_describer_is_verbatim() {
        let c = figure1();
        let d = &c.dialogues[0];
        let desc = describe_mention(d, "f4", ContextWindow::full()).unwrap();
        assert_eq!(desc.text, "that red one");
        assert_eq!(desc.source, DescriptionSource::Mention);
        assert_eq!(
            describe_mention(d, "f5", ContextWindow::full())
                .unwrap()
                .text,
            "it"
        );
    }

    #[test]
    fn substitution_replaces_proforms_only() {
        let lex = ProformLexicon::default();
        assert_eq!(
            substitute("it", &["apples", "the apple"], &lex),
            "the apple"
        );
        assert_eq!(
            substitute("the fluffy dog", &["it"], &lex),
            "the fluffy dog"
        );
        assert_eq!(
            substitute("the one you mentioned", &["it", "this one"], &lex),
            "the one you mentioned"
        );
        assert_eq!(substitute("it", &["the dog", "that one"], &lex), "the dog");
    }

    #[test]
    fn substitution_on_figure1() {
        let c = figure1();
        let d = &c.dialogues[0];
        let lex = ProformLexicon::default();
        let full = ContextWindow::full();
        assert_eq!(
            describe_substitution(d, "f5", &lex, full).unwrap().text,
            "that red one"
        );
        // "the shiny one" is descriptive, so it stays
        assert_eq!(
            describe_substitution(d, "f3", &lex, full).unwrap().text,
            "the shiny one"
        );
    }

    #[test]
    fn substitution_respects_window() {
        let c = figure1();
        let d = &c.dialogues[0];
        let lex = ProformLexicon::default();
        let narrow = ContextWindow {
            name: WindowName::W3,
            history: Some(0),
        };
        assert_eq!(
            describe_substitution(d, "f5", &lex, narrow).unwrap().text,
            "it"
        );
    }

    #[test]
    fn chain_concat_on_figure1() {
        let c = figure1();
        let d = &c.dialogues[0];
        assert_eq!(
            gt_chain_concat(d, "f4", ContextWindow::full())
                .unwrap()
                .text,
            "apple, the shiny one, that red one"
        );
        assert_eq!(
            gt_chain_concat(d, "f4", WindowName::W3.into())
                .unwrap()
                .text,
            "the shiny one, that red one"
        );
        assert_eq!(
            gt_chain_concat(d, "f2", ContextWindow::full())
                .unwrap()
                .text,
            "apple"
        );
    }

    #[test]
    fn set_of_words_on_figure1() {
        let c = figure1();
        let d = &c.dialogues[0];
        assert_eq!(
            gt_set_of_words(d, "f4", ContextWindow::full())
                .unwrap()
                .text,
            "apple the shiny one that red"
        );
    }

    #[test]
    fn manual_labels() {
        let c = figure1();
        let d = &c.dialogues[0];
        let m = d.find_mention("f4").unwrap().mention;
        assert_eq!(
            gt_manual(m, WindowName::Full).unwrap().text,
            "the shiny red apple"
        );
        let mut m = m.clone();
        m.manual_labels = [("3".to_string(), "the angry dog".to_string())].into();
        assert_eq!(gt_manual(&m, WindowName::W3).unwrap().text, "the angry dog");
        assert!(matches!(
            gt_manual(&m, WindowName::W13),
            Err(DescribeError::MissingLabel { .. })
        ));
    }

    #[test]
    fn source_names_round_trip() {
        for s in [
            DescriptionSource::Mention,
            DescriptionSource::CorefSet,
            DescriptionSource::GtManual,
            DescriptionSource::Crdg,
        ] {
            assert_eq!(s.as_str().parse::<DescriptionSource>().unwrap(), s);
        }
        assert!("gpt".parse::<DescriptionSource>().is_err());
    }
}
