//! Linguistic context of a mention and its flat prompt serialization.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Dialogue, Span, Speaker};
use crate::describers::{self, DescribeError, DescriptionSource};

/// Prompts longer than this many characters are reported at export.
pub const PROMPT_WARN_CHARS: usize = 4096;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Describe(#[from] DescribeError),
    #[error("invalid marker config: {0}")]
    InvalidMarkers(String),
    #[error("marker {marker:?} occurs in the text of dialogue {dialogue_id}")]
    MarkerCollision { marker: String, dialogue_id: String },
    #[error("mention span {0:?} cannot be located in its utterance")]
    SpanNotLocatable(Span),
    #[error("no manual label for window {window}: {}", .mention_ids.join(", "))]
    MissingLabels {
        window: WindowName,
        mention_ids: Vec<String>,
    },
    #[error("label source {0} cannot produce training targets")]
    UnsupportedLabelSource(DescriptionSource),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The four dialogue-history caps used in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WindowName {
    #[serde(rename = "3")]
    W3,
    #[serde(rename = "7")]
    W7,
    #[serde(rename = "13")]
    W13,
    #[serde(rename = "full")]
    Full,
}

impl WindowName {
    pub const ALL: [WindowName; 4] = [
        WindowName::W3,
        WindowName::W7,
        WindowName::W13,
        WindowName::Full,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WindowName::W3 => "3",
            WindowName::W7 => "7",
            WindowName::W13 => "13",
            WindowName::Full => "full",
        }
    }

    /// Nominal size, `None` for the full dialogue.
    pub fn size(&self) -> Option<usize> {
        match self {
            WindowName::W3 => Some(3),
            WindowName::W7 => Some(7),
            WindowName::W13 => Some(13),
            WindowName::Full => None,
        }
    }
}

impl fmt::Display for WindowName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WindowName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "3" | "w3" => Ok(WindowName::W3),
            "7" | "w7" => Ok(WindowName::W7),
            "13" | "w13" => Ok(WindowName::W13),
            "full" => Ok(WindowName::Full),
            other => Err(format!(
                "unknown context window {other:?} (expected 3, 7, 13 or full)"
            )),
        }
    }
}

/// A named window and the number of preceding utterances it admits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextWindow {
    pub name: WindowName,
    /// Preceding utterances kept; `None` keeps the whole history.
    pub history: Option<usize>,
}

impl ContextWindow {
    /// The window size counts preceding utterances only.
    pub fn preceding(name: WindowName) -> Self {
        ContextWindow {
            name,
            history: name.size(),
        }
    }

    /// The window size includes the mention's own utterance.
    pub fn inclusive(name: WindowName) -> Self {
        ContextWindow {
            name,
            history: name.size().map(|n| n.saturating_sub(1)),
        }
    }

    pub fn full() -> Self {
        Self::preceding(WindowName::Full)
    }

    /// Index of the first utterance visible from utterance `index`.
    pub fn first_visible(&self, index: usize) -> usize {
        self.history.map_or(0, |h| index.saturating_sub(h))
    }
}

impl From<WindowName> for ContextWindow {
    fn from(name: WindowName) -> Self {
        ContextWindow::preceding(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextUtterance {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinguisticContext {
    pub dialogue_id: String,
    pub mention_id: String,
    /// Ends with the utterance containing the mention.
    pub utterances: Vec<ContextUtterance>,
    /// Mention span within the last utterance.
    pub mention_span: Span,
    pub window: ContextWindow,
}

impl LinguisticContext {
    /// Utterance texts joined by newlines, the text coreference spans refer to.
    pub fn window_text(&self) -> String {
        self.utterances
            .iter()
            .map(|u| u.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Character offset of each utterance within [`Self::window_text`].
    pub fn utterance_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.utterances.len());
        let mut at = 0;
        for u in &self.utterances {
            offsets.push(at);
            at += u.text.chars().count() + 1;
        }
        offsets
    }

    /// Mention span translated into [`Self::window_text`] coordinates.
    pub fn mention_span_in_window(&self) -> Span {
        let last = *self.utterance_offsets().last().unwrap_or(&0);
        self.mention_span.shifted(last)
    }

    pub fn mention_surface(&self) -> &str {
        self.utterances
            .last()
            .and_then(|u| self.mention_span.slice(&u.text))
            .unwrap_or("")
    }
}

/// The mention's utterance plus up to `window.history` preceding utterances.
pub fn build_context(
    dialogue: &Dialogue,
    mention_id: &str,
    window: ContextWindow,
) -> Result<LinguisticContext, CorpusError> {
    let m = dialogue.find_mention(mention_id)?;
    let end = m.utterance.index;
    let start = window.first_visible(end);
    Ok(LinguisticContext {
        dialogue_id: dialogue.dialogue_id.clone(),
        mention_id: mention_id.to_string(),
        utterances: dialogue.utterances[start..=end]
            .iter()
            .map(|u| ContextUtterance {
                index: u.index,
                speaker: u.speaker,
                text: u.text.clone(),
            })
            .collect(),
        mention_span: m.mention.span,
        window,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerConfig {
    pub mention_begin: String,
    pub mention_end: String,
    pub speaker_tokens: BTreeMap<Speaker, String>,
    pub task_token: String,
    pub separator: String,
    /// Appended to training completions, stripped from generations.
    pub end_of_description: String,
}

impl Default for MarkerConfig {
    fn default() -> Self {
        MarkerConfig {
            mention_begin: "<m>".into(),
            mention_end: "</m>".into(),
            speaker_tokens: [(Speaker::A, "<A>".into()), (Speaker::B, "<B>".into())]
                .into_iter()
                .collect(),
            task_token: "<task>".into(),
            separator: "\n".into(),
            end_of_description: "<eod>".into(),
        }
    }
}

impl MarkerConfig {
    pub fn speaker_token(&self, speaker: Speaker) -> &str {
        self.speaker_tokens
            .get(&speaker)
            .map(String::as_str)
            .unwrap_or("")
    }

    fn all(&self) -> Vec<&str> {
        let mut v = vec![
            self.mention_begin.as_str(),
            self.mention_end.as_str(),
            self.task_token.as_str(),
            self.separator.as_str(),
            self.end_of_description.as_str(),
        ];
        v.extend(self.speaker_tokens.values().map(String::as_str));
        v
    }

    pub fn validate(&self) -> Result<(), ContextError> {
        for s in [Speaker::A, Speaker::B] {
            if !self.speaker_tokens.contains_key(&s) {
                return Err(ContextError::InvalidMarkers(format!(
                    "no token for speaker {s}"
                )));
            }
        }
        let all = self.all();
        if all.iter().any(|m| m.is_empty()) {
            return Err(ContextError::InvalidMarkers("empty marker".into()));
        }
        for (i, a) in all.iter().enumerate() {
            if all[i + 1..].contains(a) {
                return Err(ContextError::InvalidMarkers(format!(
                    "marker {a:?} used twice"
                )));
            }
        }
        Ok(())
    }

    /// First marker string that occurs inside `text`.
    pub fn collision<'a>(&'a self, text: &str) -> Option<&'a str> {
        self.all().into_iter().find(|m| text.contains(m))
    }

    /// Errors if any marker occurs in any utterance or instruction of the corpus.
    pub fn check_corpus(&self, corpus: &Corpus) -> Result<(), ContextError> {
        for d in &corpus.dialogues {
            let texts = std::iter::once(d.task_instructions.as_str())
                .chain(d.utterances.iter().map(|u| u.text.as_str()));
            for t in texts {
                if let Some(m) = self.collision(t) {
                    return Err(ContextError::MarkerCollision {
                        marker: m.to_string(),
                        dialogue_id: d.dialogue_id.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Removes every marker token; the inverse of the markup added by
    /// [`serialize_sample`] up to separators.
    pub fn strip(&self, prompt: &str) -> String {
        let mut out = prompt.to_string();
        let mut tokens = vec![
            self.mention_begin.as_str(),
            self.mention_end.as_str(),
            self.task_token.as_str(),
        ];
        tokens.extend(self.speaker_tokens.values().map(String::as_str));
        // longest first so a token that contains another is removed whole
        tokens.sort_by_key(|t| std::cmp::Reverse(t.len()));
        for t in tokens {
            out = out.replace(t, "");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedSample {
    pub mention_id: String,
    pub prompt: String,
    /// Present for training samples only.
    pub completion: Option<String>,
    pub marker_config: MarkerConfig,
}

/// Flattens a context into the generator prompt.
///
/// Layout: `task_token instructions SEP` (omitted when `instructions` is
/// empty), then `speaker_token text SEP` per utterance, with the mention
/// wrapped in `mention_begin`/`mention_end` inside the last utterance.
pub fn serialize_sample(
    context: &LinguisticContext,
    instructions: &str,
    markers: &MarkerConfig,
    target: Option<&str>,
) -> Result<SerializedSample, ContextError> {
    markers.validate()?;
    let texts =
        std::iter::once(instructions).chain(context.utterances.iter().map(|u| u.text.as_str()));
    for t in texts {
        if let Some(m) = markers.collision(t) {
            return Err(ContextError::MarkerCollision {
                marker: m.to_string(),
                dialogue_id: context.dialogue_id.clone(),
            });
        }
    }

    let mut prompt = String::new();
    if !instructions.is_empty() {
        prompt.push_str(&markers.task_token);
        prompt.push_str(instructions);
        prompt.push_str(&markers.separator);
    }
    let last = context.utterances.len().saturating_sub(1);
    for (i, u) in context.utterances.iter().enumerate() {
        prompt.push_str(markers.speaker_token(u.speaker));
        if i == last {
            let r = context
                .mention_span
                .byte_range(&u.text)
                .ok_or(ContextError::SpanNotLocatable(context.mention_span))?;
            prompt.push_str(&u.text[..r.start]);
            prompt.push_str(&markers.mention_begin);
            prompt.push_str(&u.text[r.clone()]);
            prompt.push_str(&markers.mention_end);
            prompt.push_str(&u.text[r.end..]);
        } else {
            prompt.push_str(&u.text);
        }
        prompt.push_str(&markers.separator);
    }

    Ok(SerializedSample {
        mention_id: context.mention_id.clone(),
        prompt,
        completion: target.map(|t| format!("{t}{}", markers.end_of_description)),
        marker_config: markers.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportHeader {
    pub window: WindowName,
    pub history: Option<usize>,
    pub markers: MarkerConfig,
    pub label_source: DescriptionSource,
    pub corpus_hash: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fold_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub mention_id: String,
    pub prompt: String,
    pub completion: String,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: ExportHeader,
}

/// Builds the training samples for the single-image mentions of
/// `dialogue_ids`, in dialogue then document order.
pub fn finetune_samples(
    corpus: &Corpus,
    dialogue_ids: &[String],
    window: ContextWindow,
    markers: &MarkerConfig,
    label_source: DescriptionSource,
) -> Result<Vec<ExportRecord>, ContextError> {
    markers.validate()?;
    markers.check_corpus(corpus)?;
    if !matches!(
        label_source,
        DescriptionSource::GtManual | DescriptionSource::GtChain | DescriptionSource::GtSet
    ) {
        return Err(ContextError::UnsupportedLabelSource(label_source));
    }

    let mut missing = Vec::new();
    let mut records = Vec::new();
    for id in dialogue_ids {
        let d = corpus.dialogue(id)?;
        for m in d.single_image_mentions() {
            let mid = &m.mention.mention_id;
            let label = match label_source {
                DescriptionSource::GtManual => {
                    match describers::gt_manual(m.mention, window.name) {
                        Ok(l) => l.text,
                        Err(DescribeError::MissingLabel { .. }) => {
                            missing.push(mid.clone());
                            continue;
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
                DescriptionSource::GtChain => describers::gt_chain_concat(d, mid, window)?.text,
                _ => describers::gt_set_of_words(d, mid, window)?.text,
            };
            let ctx = build_context(d, mid, window)?;
            let sample = serialize_sample(&ctx, &d.task_instructions, markers, Some(&label))?;
            let n = sample.prompt.chars().count();
            if n > PROMPT_WARN_CHARS {
                log::warn!("prompt for {mid} has {n} characters (not truncated)");
            }
            records.push(ExportRecord {
                mention_id: sample.mention_id,
                prompt: sample.prompt,
                completion: sample.completion.unwrap_or_default(),
            });
        }
    }
    if !missing.is_empty() {
        return Err(ContextError::MissingLabels {
            window: window.name,
            mention_ids: missing,
        });
    }
    Ok(records)
}

/// Writes a fine-tuning dataset and returns the number of samples.
///
/// The first line is a header recording the window, marker config, label
/// source and corpus hash; each following line is one
/// `{mention_id, prompt, completion}` record. No samples means an empty file.
pub fn export_finetune_dataset(
    corpus: &Corpus,
    dialogue_ids: &[String],
    window: ContextWindow,
    markers: &MarkerConfig,
    label_source: DescriptionSource,
    fold_id: Option<&str>,
    out: &Path,
) -> Result<usize, ContextError> {
    let records = finetune_samples(corpus, dialogue_ids, window, markers, label_source)?;
    let io_err = |source| ContextError::Io {
        path: out.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(out).map_err(io_err)?);
    if !records.is_empty() {
        let header = HeaderLine {
            header: ExportHeader {
                window: window.name,
                history: window.history,
                markers: markers.clone(),
                label_source,
                corpus_hash: corpus.content_hash(),
                fold_id: fold_id.map(str::to_string),
            },
        };
        writeln!(
            w,
            "{}",
            serde_json::to_string(&header).expect("serializable")
        )
        .map_err(io_err)?;
        for r in &records {
            writeln!(w, "{}", serde_json::to_string(r).expect("serializable")).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(records.len())
}

/// Reads back a dataset written by [`export_finetune_dataset`].
pub fn read_finetune_dataset(
    path: &Path,
) -> Result<Option<(ExportHeader, Vec<ExportRecord>)>, ContextError> {
    let io_err = |source| ContextError::Io {
        path: path.display().to_string(),
        source,
    };
    let text = std::fs::read_to_string(path).map_err(io_err)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let Some(first) = lines.next() else {
        return Ok(None);
    };
    let bad =
        |e: serde_json::Error| io_err(std::io::Error::new(std::io::ErrorKind::InvalidData, e));
    let header: HeaderLine = serde_json::from_str(first).map_err(bad)?;
    let records = lines
        .map(|l| serde_json::from_str(l).map_err(bad))
        .collect::<Result<Vec<ExportRecord>, _>>()?;
    Ok(Some((header.header, records)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Mention, Utterance};
    use proptest::prelude::*;

    fn dialogue(n: usize) -> Dialogue {
        Dialogue {
            dialogue_id: "d".into(),
            image_set_id: "s".into(),
            task_instructions: "Rank the fruit.".into(),
            utterances: (0..n)
                .map(|i| {
                    let text = format!("utterance {i} mentions that red one");
                    let start = text.find("that").unwrap();
                    Utterance {
                        index: i,
                        speaker: if i % 2 == 0 { Speaker::A } else { Speaker::B },
                        text,
                        round: 1,
                        mentions: vec![Mention {
                            mention_id: format!("m{i}"),
                            span: Span::new(start, start + 12),
                            referent_image_ids: ["x".to_string()].into(),
                            chain_id: "c".into(),
                            manual_labels: Default::default(),
                        }],
                    }
                })
                .collect(),
            ranking_events: vec![],
        }
    }

    fn indices(ctx: &LinguisticContext) -> Vec<usize> {
        ctx.utterances.iter().map(|u| u.index).collect()
    }

    #[test]
    fn w3_keeps_three_preceding_utterances() {
        let d = dialogue(12);
        let ctx = build_context(&d, "m10", WindowName::W3.into()).unwrap();
        assert_eq!(indices(&ctx), vec![7, 8, 9, 10]);
    }

    #[test]
    fn history_truncates_at_dialogue_start() {
        let d = dialogue(12);
        let ctx = build_context(&d, "m1", WindowName::W7.into()).unwrap();
        assert_eq!(indices(&ctx), vec![0, 1]);
    }

    #[test]
    fn full_window_keeps_everything() {
        let d = dialogue(40);
        let ctx = build_context(&d, "m39", ContextWindow::full()).unwrap();
        assert_eq!(ctx.utterances.len(), 40);
    }

    #[test]
    fn inclusive_window_counts_own_utterance() {
        let d = dialogue(12);
        let ctx = build_context(&d, "m10", ContextWindow::inclusive(WindowName::W3)).unwrap();
        assert_eq!(indices(&ctx), vec![8, 9, 10]);
    }

    #[test]
    fn unknown_mention_is_an_error() {
        assert!(build_context(&dialogue(2), "zz", ContextWindow::full()).is_err());
    }

    #[test]
    fn serializes_one_utterance_with_target() {
        let mut d = dialogue(1);
        d.utterances[0].text = "Do you mean that red one?".into();
        d.utterances[0].mentions[0].span = Span::new(12, 24);
        let ctx = build_context(&d, "m0", ContextWindow::full()).unwrap();
        let m = MarkerConfig::default();
        let s = serialize_sample(&ctx, "Rank the fruit.", &m, Some("the shiny red apple")).unwrap();
        assert_eq!(
            s.prompt,
            "<task>Rank the fruit.\n<A>Do you mean <m>that red one</m>?\n"
        );
        assert_eq!(s.completion.as_deref(), Some("the shiny red apple<eod>"));

        let inference = serialize_sample(&ctx, "Rank the fruit.", &m, None).unwrap();
        assert_eq!(inference.prompt, s.prompt);
        assert_eq!(inference.completion, None);
    }

    #[test]
    fn marker_in_text_is_a_collision() {
        let mut d = dialogue(1);
        d.utterances[0].text = "look at <m> here that red one".into();
        let ctx = build_context(&d, "m0", ContextWindow::full()).unwrap();
        assert!(matches!(
            serialize_sample(&ctx, "", &MarkerConfig::default(), None),
            Err(ContextError::MarkerCollision { .. })
        ));
    }

    #[test]
    fn duplicate_markers_are_invalid() {
        let mut m = MarkerConfig::default();
        m.mention_end = m.mention_begin.clone();
        assert!(m.validate().is_err());
        let mut m = MarkerConfig::default();
        m.task_token.clear();
        assert!(m.validate().is_err());
    }

    #[test]
    fn distinct_mentions_in_one_utterance_give_distinct_prompts() {
        let mut d = dialogue(1);
        d.utterances[0].text = "the dog and the cat".into();
        d.utterances[0].mentions = vec![
            Mention {
                mention_id: "a".into(),
                span: Span::new(0, 7),
                referent_image_ids: ["x".to_string()].into(),
                chain_id: "c1".into(),
                manual_labels: Default::default(),
            },
            Mention {
                mention_id: "b".into(),
                span: Span::new(12, 19),
                referent_image_ids: ["y".to_string()].into(),
                chain_id: "c2".into(),
                manual_labels: Default::default(),
            },
        ];
        let m = MarkerConfig::default();
        let pa = serialize_sample(
            &build_context(&d, "a", ContextWindow::full()).unwrap(),
            "",
            &m,
            None,
        )
        .unwrap();
        let pb = serialize_sample(
            &build_context(&d, "b", ContextWindow::full()).unwrap(),
            "",
            &m,
            None,
        )
        .unwrap();
        assert_ne!(pa.prompt, pb.prompt);
        assert_eq!(pa.prompt.matches("<m>").count(), 1);
        assert_eq!(pb.prompt.matches("</m>").count(), 1);
    }

    proptest! {
        #[test]
        fn stripping_markers_recovers_texts(
            texts in proptest::collection::vec("[a-z ,.?]{1,30}", 1..8),
            pick in any::<proptest::sample::Index>(),
            instructions in "[A-Za-z .]{0,20}",
        ) {
            let mut d = dialogue(texts.len());
            for (u, t) in d.utterances.iter_mut().zip(&texts) {
                let n = t.chars().count();
                u.text = t.clone();
                u.mentions[0].span = Span::new(0, n);
            }
            let target = pick.index(texts.len());
            let m = MarkerConfig::default();
            let ctx = build_context(&d, &format!("m{target}"), ContextWindow::full()).unwrap();
            let s = serialize_sample(&ctx, &instructions, &m, None).unwrap();

            prop_assert_eq!(s.prompt.matches("<m>").count(), 1);
            prop_assert!(s.prompt.find("<m>").unwrap() < s.prompt.find("</m>").unwrap());
            if !instructions.is_empty() {
                prop_assert!(s.prompt.starts_with("<task>"));
            }

            let mut expected = String::new();
            if !instructions.is_empty() {
                expected.push_str(&instructions);
                expected.push('\n');
            }
            for t in &texts[..=target] {
                expected.push_str(t);
                expected.push('\n');
            }
            prop_assert_eq!(m.strip(&s.prompt), expected);
        }

        #[test]
        fn smaller_window_is_suffix_of_larger(n in 1usize..30, pick in any::<proptest::sample::Index>()) {
            let d = dialogue(n);
            let id = format!("m{}", pick.index(n));
            let m = MarkerConfig::default();
            let small = serialize_sample(&build_context(&d, &id, WindowName::W3.into()).unwrap(), "", &m, None).unwrap();
            let large = serialize_sample(&build_context(&d, &id, WindowName::W7.into()).unwrap(), "", &m, None).unwrap();
            prop_assert!(large.prompt.ends_with(&small.prompt));
        }
    }
}
