use std::collections::BTreeSet;

use refres::corpus::{Span, Speaker};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Resolve a written description against the reduced candidate set.
    Independent,
    /// Resolve mentions while reading the dialogue as it unfolds.
    Holistic,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Independent => "independent",
            Mode::Holistic => "holistic",
        }
    }
}

/// How stimuli are allocated to a new session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum Assignment {
    /// Least covered dialogue (holistic) or items (independent) first.
    #[default]
    Balanced,
    /// A named dialogue; holistic only.
    Dialogue { dialogue_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSession {
    pub mode: Mode,
    pub participant_id: String,
    #[serde(default)]
    pub assignment: Assignment,
    /// Independent sessions: how many items; all eligible items by default.
    #[serde(default)]
    pub n_items: Option<usize>,
}

/// One thing a participant resolves: a mention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub dialogue_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub item_id: String,
    pub selected_image_ids: BTreeSet<String>,
    pub latency_ms: u64,
    /// Milliseconds since the Unix epoch, set by the service.
    pub timestamp: u64,
    /// Selected images that had already been ranked when shown.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub ranked_selected: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSession {
    pub session_id: String,
    pub mode: Mode,
    pub participant_id: String,
    /// Holistic sessions bind to one dialogue.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue_id: Option<String>,
    pub items: Vec<Item>,
    pub cursor: usize,
    pub responses: Vec<Response>,
    pub completed: bool,
    /// Orders independent stimuli.
    pub seed: u64,
}

impl ExperimentSession {
    pub fn current(&self) -> Option<&Item> {
        self.items.get(self.cursor)
    }
}

/// Session summary returned to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub mode: Mode,
    pub participant_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue_id: Option<String>,
    pub cursor: usize,
    pub n_items: usize,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_code: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub image_id: String,
    pub uri: String,
    /// Already placed in the current round; shown faded.
    pub ranked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShownUtterance {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StimulusBody {
    Independent {
        description: String,
    },
    Holistic {
        /// The dialogue up to and including the mention's utterance.
        utterances: Vec<ShownUtterance>,
        /// Character span of the mention in the last utterance.
        mention_span: Span,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stimulus {
    pub session_id: String,
    pub item_id: String,
    /// Position in the session, from 0.
    pub position: usize,
    pub n_items: usize,
    pub candidates: Vec<Candidate>,
    /// True when more than one image may be selected.
    pub multi_select: bool,
    #[serde(flatten)]
    pub body: StimulusBody,
}

/// What `next_stimulus` returns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Next {
    Stimulus(Stimulus),
    Completed {
        session_id: String,
        completion_code: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub item_id: String,
    pub selected_image_ids: BTreeSet<String>,
    #[serde(default)]
    pub latency_ms: u64,
    /// Retries carrying the same key are answered without a second record.
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

/// One line of the results export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub session_id: String,
    pub participant_id: String,
    pub mode: Mode,
    pub dialogue_id: String,
    #[serde(flatten)]
    pub response: Response,
}
