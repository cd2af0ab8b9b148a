//! Human evaluation service.
//!
//! Independent sessions show a written description with the reduced
//! candidate set; holistic sessions replay a dialogue up to each mention and
//! show every image with its ranking status. Responses are written to an
//! append-only log before they take effect.

pub mod http;
pub mod model;
pub mod scoring;
pub mod service;
pub mod store;

use refres::corpus::CorpusError;
use thiserror::Error;

pub use model::{
    Assignment, Candidate, CreateSession, ExperimentSession, Item, Mode, Next, Response,
    ResultRecord, SessionView, Stimulus, StimulusBody, SubmitResponse,
};
pub use scoring::{score_sessions, HumanReport, ModeScore};
pub use service::{Experiment, ExperimentConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("participant {participant_id} already has a holistic session on {image_set_id}")]
    CapExceeded {
        participant_id: String,
        image_set_id: String,
    },
    #[error("no items to assign")]
    NoItems,
    #[error("session {0} is completed")]
    Completed(String),
    #[error("item {0} already has a response")]
    DuplicateResponse(String),
    #[error("expected a response to {expected}, got {got}")]
    NotCurrentItem { expected: String, got: String },
    #[error("invalid selection: {0}")]
    InvalidSelection(String),
    #[error("idempotency key {0} was used for a different response")]
    IdempotencyConflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("storage: {0}")]
    Storage(String),
}
