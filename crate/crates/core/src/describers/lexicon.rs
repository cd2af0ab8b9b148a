use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::tokenize::tokens;

/// Word lists deciding which mentions carry no descriptive content.
///
/// The test is applied to the whole mention: `"it"` is a proform and
/// `"the one you mentioned"` is non-descriptive, but `"that red one"` is
/// descriptive because `"red"` is a content word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProformLexicon {
    pub pronouns: BTreeSet<String>,
    /// Content words that still say nothing about the referent.
    pub nondescriptive_words: BTreeSet<String>,
    pub function_words: BTreeSet<String>,
}

fn set(words: &[&str]) -> BTreeSet<String> {
    words.iter().map(|w| w.to_string()).collect()
}

impl Default for ProformLexicon {
    fn default() -> Self {
        ProformLexicon {
            pronouns: set(&[
                "it", "its", "this", "that", "these", "those", "they", "them", "one", "ones",
            ]),
            nondescriptive_words: set(&[
                "one", "ones", "thing", "image", "picture", "photo", "mention", "choice", "option",
            ]),
            function_words: set(&[
                "a",
                "an",
                "the",
                "this",
                "that",
                "these",
                "those",
                "it",
                "its",
                "they",
                "them",
                "their",
                "i",
                "me",
                "my",
                "you",
                "your",
                "we",
                "us",
                "our",
                "he",
                "she",
                "him",
                "her",
                "his",
                "which",
                "who",
                "what",
                "of",
                "in",
                "on",
                "at",
                "to",
                "for",
                "with",
                "from",
                "by",
                "about",
                "as",
                "and",
                "or",
                "but",
                "is",
                "are",
                "was",
                "were",
                "be",
                "been",
                "have",
                "has",
                "had",
                "do",
                "does",
                "did",
                "just",
                "so",
                "other",
                "another",
                "same",
                "here",
                "there",
                "all",
                "both",
                "each",
                "either",
                "any",
                "some",
                "said",
                "talked",
                "discussed",
                "described",
                "meant",
                "mean",
                "before",
                "earlier",
            ]),
        }
    }
}

impl ProformLexicon {
    pub fn is_proform(&self, surface: &str) -> bool {
        let toks = tokens(surface);
        toks.len() == 1 && self.pronouns.contains(&toks[0])
    }

    /// True when every token is a function word or a non-descriptive word
    /// (plural `-s` and past `-ed` forms included).
    pub fn is_nondescriptive(&self, surface: &str) -> bool {
        tokens(surface).iter().all(|t| {
            self.function_words.contains(t)
                || self.nondescriptive_words.contains(t)
                || [t.strip_suffix('s'), t.strip_suffix("ed")]
                    .into_iter()
                    .flatten()
                    .any(|stem| self.nondescriptive_words.contains(stem))
        })
    }

    /// Whether the substitution baseline replaces this mention.
    pub fn is_substitutable(&self, surface: &str) -> bool {
        self.is_proform(surface) || self.is_nondescriptive(surface)
    }
}
