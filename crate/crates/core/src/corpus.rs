//! Annotated visually-grounded dialogue corpora.
//!
//! A corpus is a set of image sets plus dialogues played over them. Every
//! utterance carries its grounded mentions as character spans, and the
//! dialogue records the point at which each image was successfully ranked so
//! that the candidate set can be reduced as the game progresses.
//!
//! On disk a corpus is UTF-8 JSON Lines. Each line is one record tagged by
//! `"record": "image_set"` or `"record": "dialogue"`; the remaining fields
//! are exactly the fields of [`ImageSet`] and [`Dialogue`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Keys accepted in [`Mention::manual_labels`].
pub const MANUAL_LABEL_KEYS: [&str; 4] = ["3", "7", "13", "full"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dialogue {dialogue_id}{}: {message}", fmt_utterance(*.utterance))]
    Validation {
        dialogue_id: String,
        utterance: Option<usize>,
        message: String,
    },
    #[error("image set {set_id}: {message}")]
    ImageSet { set_id: String, message: String },
    #[error("mention {mention_id} not found in dialogue {dialogue_id}")]
    MentionNotFound {
        dialogue_id: String,
        mention_id: String,
    },
    #[error("unknown dialogue {0}")]
    UnknownDialogue(String),
    #[error("cross-validation needs at least two image sets, found {0}")]
    TooFewImageSets(usize),
}

fn fmt_utterance(u: Option<usize>) -> String {
    u.map(|i| format!(", utterance {i}")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub image_id: String,
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSet {
    pub set_id: String,
    pub category: String,
    pub images: Vec<Image>,
}

impl ImageSet {
    pub fn image(&self, image_id: &str) -> Option<&Image> {
        self.images.iter().find(|i| i.image_id == image_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speaker::A => f.write_str("A"),
            Speaker::B => f.write_str("B"),
        }
    }
}

/// Half-open `[start, end)` range of character (Unicode scalar) offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Number of characters shared with `other`.
    pub fn overlap(&self, other: &Span) -> usize {
        self.end
            .min(other.end)
            .saturating_sub(self.start.max(other.start))
    }

    pub fn shifted(&self, offset: usize) -> Span {
        Span::new(self.start + offset, self.end + offset)
    }

    /// Byte range of this span in `text`, or `None` if it does not fit.
    pub fn byte_range(&self, text: &str) -> Option<Range<usize>> {
        if self.start > self.end {
            return None;
        }
        let mut start = None;
        for (n, (b, _)) in text.char_indices().enumerate() {
            if n == self.start {
                start = Some(b);
            }
            if n == self.end {
                return start.map(|s| s..b);
            }
        }
        let n_chars = text.chars().count();
        if self.end == n_chars {
            let s = if self.start == n_chars {
                Some(text.len())
            } else {
                start
            };
            return s.map(|s| s..text.len());
        }
        None
    }

    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        self.byte_range(text).map(|r| &text[r])
    }
}

impl Serialize for Span {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.start, self.end].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [start, end] = <[usize; 2]>::deserialize(d)?;
        Ok(Span { start, end })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub mention_id: String,
    pub span: Span,
    pub referent_image_ids: BTreeSet<String>,
    pub chain_id: String,
    #[serde(default)]
    pub manual_labels: BTreeMap<String, String>,
}

impl Mention {
    pub fn is_single_image(&self) -> bool {
        self.referent_image_ids.len() == 1
    }

    /// The referent of a single-image mention.
    pub fn single_referent(&self) -> Option<&str> {
        if self.is_single_image() {
            self.referent_image_ids.iter().next().map(String::as_str)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
    pub round: u32,
    #[serde(default)]
    pub mentions: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingEvent {
    pub image_id: String,
    pub round: u32,
    pub utterance_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub image_set_id: String,
    #[serde(default)]
    pub task_instructions: String,
    pub utterances: Vec<Utterance>,
    #[serde(default)]
    pub ranking_events: Vec<RankingEvent>,
}

/// A mention together with the utterance that contains it.
#[derive(Debug, Clone, Copy)]
pub struct MentionRef<'a> {
    pub utterance: &'a Utterance,
    pub mention: &'a Mention,
}

impl<'a> MentionRef<'a> {
    /// Surface string of the mention, verbatim.
    pub fn surface(&self) -> &'a str {
        self.mention.span.slice(&self.utterance.text).unwrap_or("")
    }

    /// Sort key giving document order: utterance index, span start, span end.
    pub fn doc_key(&self) -> (usize, usize, usize) {
        (
            self.utterance.index,
            self.mention.span.start,
            self.mention.span.end,
        )
    }
}

impl Dialogue {
    /// All mentions in document order.
    pub fn mentions(&self) -> Vec<MentionRef<'_>> {
        let mut out: Vec<_> = self
            .utterances
            .iter()
            .flat_map(|u| {
                u.mentions.iter().map(move |m| MentionRef {
                    utterance: u,
                    mention: m,
                })
            })
            .collect();
        out.sort_by_key(|m| m.doc_key());
        out
    }

    /// Mentions with exactly one referent image, in document order.
    pub fn single_image_mentions(&self) -> Vec<MentionRef<'_>> {
        self.mentions()
            .into_iter()
            .filter(|m| m.mention.is_single_image())
            .collect()
    }

    pub fn find_mention(&self, mention_id: &str) -> Result<MentionRef<'_>, CorpusError> {
        self.utterances
            .iter()
            .find_map(|u| {
                u.mentions
                    .iter()
                    .find(|m| m.mention_id == mention_id)
                    .map(|m| MentionRef {
                        utterance: u,
                        mention: m,
                    })
            })
            .ok_or_else(|| CorpusError::MentionNotFound {
                dialogue_id: self.dialogue_id.clone(),
                mention_id: mention_id.to_string(),
            })
    }

    /// Whether `image_id` was ranked in `round` strictly before utterance `index`.
    pub fn ranked_before(&self, image_id: &str, round: u32, index: usize) -> bool {
        self.ranking_events
            .iter()
            .any(|e| e.image_id == image_id && e.round == round && e.utterance_index < index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub fold_id: String,
    pub test_image_set_id: String,
    pub train_dialogue_ids: Vec<String>,
    pub test_dialogue_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    ImageSet(ImageSet),
    Dialogue(Dialogue),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub image_sets: Vec<ImageSet>,
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    /// Reads and validates a corpus file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| CorpusError::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            match record {
                Record::ImageSet(s) => corpus.image_sets.push(s),
                Record::Dialogue(d) => corpus.dialogues.push(d),
            }
        }
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn parse_str(s: &str) -> Result<Self, CorpusError> {
        Self::from_reader(s.as_bytes())
    }

    /// Canonical serialization: image sets first, then dialogues, one per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.image_sets {
            out.push_str(&serde_json::to_string(&RecordRef::ImageSet(s)).expect("serializable"));
            out.push('\n');
        }
        for d in &self.dialogues {
            out.push_str(&serde_json::to_string(&RecordRef::Dialogue(d)).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        w.write_all(self.to_jsonl().as_bytes()).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }

    pub fn image_set(&self, set_id: &str) -> Option<&ImageSet> {
        self.image_sets.iter().find(|s| s.set_id == set_id)
    }

    pub fn dialogue(&self, dialogue_id: &str) -> Result<&Dialogue, CorpusError> {
        self.dialogues
            .iter()
            .find(|d| d.dialogue_id == dialogue_id)
            .ok_or_else(|| CorpusError::UnknownDialogue(dialogue_id.to_string()))
    }

    pub fn image_set_of(&self, dialogue: &Dialogue) -> Result<&ImageSet, CorpusError> {
        self.image_set(&dialogue.image_set_id)
            .ok_or_else(|| CorpusError::Validation {
                dialogue_id: dialogue.dialogue_id.clone(),
                utterance: None,
                message: format!("unknown image set {}", dialogue.image_set_id),
            })
    }

    /// Image sets with their dialogues, in declaration order.
    pub fn grouped(&self) -> Vec<(&ImageSet, Vec<&Dialogue>)> {
        self.image_sets
            .iter()
            .map(|s| {
                let ds = self
                    .dialogues
                    .iter()
                    .filter(|d| d.image_set_id == s.set_id)
                    .collect();
                (s, ds)
            })
            .collect()
    }

    /// Candidate images for a mention.
    ///
    /// Without reduction this is the whole image set in declaration order.
    /// With reduction, images ranked in the mention's round before the
    /// mention's utterance are removed.
    pub fn candidate_set_at(
        &self,
        dialogue: &Dialogue,
        mention_id: &str,
        reduced: bool,
    ) -> Result<Vec<&Image>, CorpusError> {
        let m = dialogue.find_mention(mention_id)?;
        let set = self.image_set_of(dialogue)?;
        let round = m.utterance.round;
        let index = m.utterance.index;
        Ok(set
            .images
            .iter()
            .filter(|img| !reduced || !dialogue.ranked_before(&img.image_id, round, index))
            .collect())
    }

    /// One fold per image set; the set's dialogues are held out.
    pub fn make_folds(&self) -> Result<Vec<FoldSpec>, CorpusError> {
        if self.image_sets.len() < 2 {
            return Err(CorpusError::TooFewImageSets(self.image_sets.len()));
        }
        Ok(self
            .image_sets
            .iter()
            .map(|s| {
                let (test, train): (Vec<&Dialogue>, Vec<&Dialogue>) = self
                    .dialogues
                    .iter()
                    .partition(|d| d.image_set_id == s.set_id);
                FoldSpec {
                    fold_id: s.set_id.clone(),
                    test_image_set_id: s.set_id.clone(),
                    train_dialogue_ids: train.iter().map(|d| d.dialogue_id.clone()).collect(),
                    test_dialogue_ids: test.iter().map(|d| d.dialogue_id.clone()).collect(),
                }
            })
            .collect())
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut sets: HashMap<&str, &ImageSet> = HashMap::new();
        for s in &self.image_sets {
            let set_err = |message: String| CorpusError::ImageSet {
                set_id: s.set_id.clone(),
                message,
            };
            if s.images.is_empty() {
                return Err(set_err("image set is empty".into()));
            }
            let mut ids = HashSet::new();
            for img in &s.images {
                if !ids.insert(img.image_id.as_str()) {
                    return Err(set_err(format!("duplicate image id {}", img.image_id)));
                }
            }
            if sets.insert(s.set_id.as_str(), s).is_some() {
                return Err(set_err("duplicate image set id".into()));
            }
        }

        let mut dialogue_ids = HashSet::new();
        let mut mention_ids = HashSet::new();
        for d in &self.dialogues {
            let err = |utterance: Option<usize>, message: String| CorpusError::Validation {
                dialogue_id: d.dialogue_id.clone(),
                utterance,
                message,
            };
            if !dialogue_ids.insert(d.dialogue_id.as_str()) {
                return Err(err(None, "duplicate dialogue id".into()));
            }
            let set = sets
                .get(d.image_set_id.as_str())
                .ok_or_else(|| err(None, format!("unknown image set {}", d.image_set_id)))?;

            let mut chains: HashMap<&str, &BTreeSet<String>> = HashMap::new();
            for (i, u) in d.utterances.iter().enumerate() {
                if u.index != i {
                    return Err(err(
                        Some(i),
                        format!("utterance index {} out of sequence", u.index),
                    ));
                }
                if !(1..=4).contains(&u.round) {
                    return Err(err(Some(i), format!("round {} outside 1..=4", u.round)));
                }
                let n_chars = u.text.chars().count();
                for m in &u.mentions {
                    if !mention_ids.insert(m.mention_id.as_str()) {
                        return Err(err(
                            Some(i),
                            format!("duplicate mention id {}", m.mention_id),
                        ));
                    }
                    if m.span.start >= m.span.end || m.span.end > n_chars {
                        return Err(err(
                            Some(i),
                            format!(
                                "mention {} span [{}, {}) outside utterance of {} characters",
                                m.mention_id, m.span.start, m.span.end, n_chars
                            ),
                        ));
                    }
                    if m.referent_image_ids.is_empty() {
                        return Err(err(
                            Some(i),
                            format!("mention {} has no referent", m.mention_id),
                        ));
                    }
                    if let Some(bad) = m
                        .referent_image_ids
                        .iter()
                        .find(|id| set.image(id).is_none())
                    {
                        return Err(err(
                            Some(i),
                            format!("mention {} refers to unknown image {}", m.mention_id, bad),
                        ));
                    }
                    if let Some(k) = m
                        .manual_labels
                        .keys()
                        .find(|k| !MANUAL_LABEL_KEYS.contains(&k.as_str()))
                    {
                        return Err(err(
                            Some(i),
                            format!(
                                "mention {} has label for unknown window {k:?}",
                                m.mention_id
                            ),
                        ));
                    }
                    match chains.get(m.chain_id.as_str()) {
                        Some(refs) if *refs != &m.referent_image_ids => {
                            return Err(err(
                                Some(i),
                                format!(
                                    "mention {} in chain {} has a different referent set",
                                    m.mention_id, m.chain_id
                                ),
                            ));
                        }
                        Some(_) => {}
                        None => {
                            chains.insert(&m.chain_id, &m.referent_image_ids);
                        }
                    }
                }
            }

            let mut ranked: HashSet<(u32, &str)> = HashSet::new();
            for e in &d.ranking_events {
                if set.image(&e.image_id).is_none() {
                    return Err(err(
                        None,
                        format!("ranking event for unknown image {}", e.image_id),
                    ));
                }
                if e.utterance_index >= d.utterances.len() {
                    return Err(err(
                        None,
                        format!(
                            "ranking event for {} at utterance {} past dialogue end",
                            e.image_id, e.utterance_index
                        ),
                    ));
                }
                if !ranked.insert((e.round, e.image_id.as_str())) {
                    return Err(err(
                        None,
                        format!("image {} ranked twice in round {}", e.image_id, e.round),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum RecordRef<'a> {
    ImageSet(&'a ImageSet),
    Dialogue(&'a Dialogue),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        concat!(
            r#"{"record":"image_set","set_id":"s1","category":"Dogs","images":[{"image_id":"d1","uri":"d1.jpg"},{"image_id":"d2","uri":"d2.jpg"}]}"#,
            "\n",
            r#"{"record":"dialogue","dialogue_id":"g1","image_set_id":"s1","task_instructions":"Rank the dogs.","utterances":[{"index":0,"speaker":"A","text":"I like the fluffy dog.","round":1,"mentions":[{"mention_id":"m1","span":[7,21],"referent_image_ids":["d1"],"chain_id":"c1","manual_labels":{"full":"the fluffy dog"}}]}],"ranking_events":[]}"#,
            "\n"
        )
    }

    #[test]
    fn loads_minimal_corpus() {
        let c = Corpus::parse_str(minimal()).unwrap();
        assert_eq!(c.dialogues.len(), 1);
        assert_eq!(c.dialogues[0].mentions().len(), 1);
        assert_eq!(c.dialogues[0].mentions()[0].surface(), "the fluffy dog");
    }

    #[test]
    fn span_past_end_is_rejected() {
        let bad = minimal().replace("[7,21]", "[7,40]");
        let err = Corpus::parse_str(&bad).unwrap_err();
        match err {
            CorpusError::Validation {
                dialogue_id,
                utterance,
                ..
            } => {
                assert_eq!(dialogue_id, "g1");
                assert_eq!(utterance, Some(0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_image_is_rejected() {
        let bad = minimal().replace(r#"["d1"]"#, r#"["d9"]"#);
        assert!(matches!(
            Corpus::parse_str(&bad),
            Err(CorpusError::Validation { .. })
        ));
    }

    #[test]
    fn empty_span_is_rejected() {
        let bad = minimal().replace("[7,21]", "[7,7]");
        assert!(Corpus::parse_str(&bad).is_err());
    }

    #[test]
    fn parse_error_names_line() {
        let bad = format!("{}{{not json\n", minimal());
        match Corpus::parse_str(&bad) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn chain_with_mixed_referents_is_rejected() {
        let two = minimal().replace(
            r#""manual_labels":{"full":"the fluffy dog"}}]"#,
            r#""manual_labels":{}},{"mention_id":"m2","span":[0,1],"referent_image_ids":["d2"],"chain_id":"c1"}]"#,
        );
        assert!(Corpus::parse_str(&two).is_err());
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = Corpus::parse_str(minimal()).unwrap();
        let text = c.to_jsonl();
        assert_eq!(text, minimal());
        assert_eq!(Corpus::parse_str(&text).unwrap(), c);
    }

    #[test]
    fn single_image_set_has_no_folds() {
        let c = Corpus::parse_str(minimal()).unwrap();
        assert!(matches!(
            c.make_folds(),
            Err(CorpusError::TooFewImageSets(1))
        ));
    }

    #[test]
    fn two_sets_give_two_folds() {
        let mut c = Corpus::parse_str(minimal()).unwrap();
        let mut s2 = c.image_sets[0].clone();
        s2.set_id = "s2".into();
        c.image_sets.push(s2);
        let mut d2 = c.dialogues[0].clone();
        d2.dialogue_id = "g2".into();
        d2.image_set_id = "s2".into();
        d2.utterances[0].mentions[0].mention_id = "m2".into();
        c.dialogues.push(d2);
        c.validate().unwrap();
        let folds = c.make_folds().unwrap();
        assert_eq!(folds.len(), 2);
        assert_eq!(folds[0].test_dialogue_ids, vec!["g1"]);
        assert_eq!(folds[0].train_dialogue_ids, vec!["g2"]);
        assert_eq!(folds[1].test_dialogue_ids, vec!["g2"]);
    }

    #[test]
    fn span_slicing_handles_multibyte_text() {
        let text = "le café rouge";
        assert_eq!(Span::new(3, 7).slice(text), Some("café"));
        assert_eq!(Span::new(8, 13).slice(text), Some("rouge"));
        assert_eq!(Span::new(8, 14).slice(text), None);
        assert_eq!(Span::new(13, 13).slice(text), Some(""));
    }

    #[test]
    fn overlap_counts_shared_characters() {
        assert_eq!(Span::new(0, 12).overlap(&Span::new(5, 12)), 7);
        assert_eq!(Span::new(0, 3).overlap(&Span::new(3, 5)), 0);
    }
}
