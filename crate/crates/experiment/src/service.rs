use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refres::corpus::{Corpus, Dialogue, MentionRef};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{
    Assignment, Candidate, CreateSession, ExperimentSession, Item, Mode, Next, Response,
    ResultRecord, SessionView, ShownUtterance, Stimulus, StimulusBody, SubmitResponse,
};
use crate::store::{Event, EventLog};
use crate::ExperimentError;

/// Window whose manual label is shown in independent sessions.
const LABEL_WINDOW: &str = "full";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Mixed into completion codes so participants cannot forge them.
    #[serde(default)]
    pub completion_secret: String,
    /// Event log; without one, state is lost on restart.
    #[serde(default)]
    pub log_path: Option<PathBuf>,
    /// Directory image uris are resolved against when serving image bytes.
    #[serde(default)]
    pub image_root: Option<PathBuf>,
}

#[derive(Debug)]
struct State {
    sessions: BTreeMap<String, ExperimentSession>,
    /// (session_id, idempotency key) → index of the recorded response.
    keys: HashMap<(String, String), usize>,
    log: EventLog,
}

impl State {
    fn apply(&mut self, event: Event) {
        match event {
            Event::SessionCreated { session } => {
                self.sessions.insert(session.session_id.clone(), session);
            }
            Event::ResponseRecorded {
                session_id,
                response,
                idempotency_key,
            } => {
                let Some(s) = self.sessions.get_mut(&session_id) else {
                    log::warn!("response for unknown session {session_id} ignored");
                    return;
                };
                if let Some(k) = idempotency_key {
                    self.keys.insert((session_id, k), s.responses.len());
                }
                s.responses.push(response);
                s.cursor += 1;
                s.completed = s.cursor >= s.items.len();
            }
        }
    }

    fn record(&mut self, event: Event) -> Result<(), ExperimentError> {
        self.log.append(&event)?;
        self.apply(event);
        Ok(())
    }
}

/// Session management for both experiment modes.
///
/// All mutations take one lock, so operations on a session are serialized
/// and every read sees a consistent snapshot.
#[derive(Debug)]
pub struct Experiment {
    corpus: Arc<Corpus>,
    config: ExperimentConfig,
    state: Mutex<State>,
}

impl Experiment {
    /// Opens the service, replaying the event log when one is configured.
    pub fn open(corpus: Arc<Corpus>, config: ExperimentConfig) -> Result<Self, ExperimentError> {
        let (log, events) = match &config.log_path {
            Some(p) => EventLog::open(p)?,
            None => (EventLog::ephemeral(), Vec::new()),
        };
        let mut state = State {
            sessions: BTreeMap::new(),
            keys: HashMap::new(),
            log,
        };
        for e in events {
            state.apply(e);
        }
        Ok(Experiment {
            corpus,
            config,
            state: Mutex::new(state),
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn completion_code(&self, session_id: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.config.completion_secret.as_bytes());
        h.update(b":");
        h.update(session_id.as_bytes());
        hex::encode(h.finalize())[..12].to_uppercase()
    }

    fn view(&self, s: &ExperimentSession) -> SessionView {
        SessionView {
            session_id: s.session_id.clone(),
            mode: s.mode,
            participant_id: s.participant_id.clone(),
            dialogue_id: s.dialogue_id.clone(),
            cursor: s.cursor,
            n_items: s.items.len(),
            completed: s.completed,
            completion_code: s.completed.then(|| self.completion_code(&s.session_id)),
        }
    }

    /// Single-image mentions with a label whose referent is still a
    /// candidate, in corpus order.
    pub fn independent_pool(&self) -> Vec<Item> {
        let mut out = Vec::new();
        for d in &self.corpus.dialogues {
            for m in d.single_image_mentions() {
                if !m.mention.manual_labels.contains_key(LABEL_WINDOW) {
                    continue;
                }
                let referent = m.mention.single_referent().unwrap_or_default();
                let Ok(cands) = self.corpus.candidate_set_at(d, &m.mention.mention_id, true) else {
                    continue;
                };
                if cands.iter().any(|c| c.image_id == referent) {
                    out.push(Item {
                        item_id: m.mention.mention_id.clone(),
                        dialogue_id: d.dialogue_id.clone(),
                    });
                }
            }
        }
        out
    }

    pub fn create_session(&self, req: &CreateSession) -> Result<SessionView, ExperimentError> {
        if req.participant_id.trim().is_empty() {
            return Err(ExperimentError::BadRequest(
                "participant_id is empty".into(),
            ));
        }
        let mut st = self.lock();
        let n = st.sessions.len() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(n);
        let seed: u64 = rng.random();

        let (dialogue_id, items) = match req.mode {
            Mode::Holistic => {
                let d = self.pick_dialogue(&st, &req.participant_id, &req.assignment)?;
                let items: Vec<Item> = d
                    .mentions()
                    .iter()
                    .map(|m| Item {
                        item_id: m.mention.mention_id.clone(),
                        dialogue_id: d.dialogue_id.clone(),
                    })
                    .collect();
                (Some(d.dialogue_id.clone()), items)
            }
            Mode::Independent => {
                let mut pool = self.independent_pool();
                if let Assignment::Dialogue { dialogue_id } = &req.assignment {
                    self.corpus.dialogue(dialogue_id)?;
                    pool.retain(|i| &i.dialogue_id == dialogue_id);
                }
                let coverage = |item: &Item| {
                    st.sessions
                        .values()
                        .filter(|s| {
                            s.mode == Mode::Independent
                                && s.items.iter().any(|i| i.item_id == item.item_id)
                        })
                        .count()
                };
                let mut ranked: Vec<(usize, usize, Item)> = pool
                    .into_iter()
                    .enumerate()
                    .map(|(k, i)| (coverage(&i), k, i))
                    .collect();
                ranked.sort_by_key(|(c, k, _)| (*c, *k));
                let take = req.n_items.unwrap_or(ranked.len());
                let mut items: Vec<Item> =
                    ranked.into_iter().take(take).map(|(_, _, i)| i).collect();
                items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                (None, items)
            }
        };
        if items.is_empty() {
            return Err(ExperimentError::NoItems);
        }
        let session = ExperimentSession {
            session_id: format!("s{:05}", n + 1),
            mode: req.mode,
            participant_id: req.participant_id.clone(),
            dialogue_id,
            items,
            cursor: 0,
            responses: Vec::new(),
            completed: false,
            seed,
        };
        let view = self.view(&session);
        st.record(Event::SessionCreated { session })?;
        Ok(view)
    }

    fn pick_dialogue<'c>(
        &'c self,
        st: &State,
        participant: &str,
        assignment: &Assignment,
    ) -> Result<&'c Dialogue, ExperimentError> {
        let done: BTreeSet<&str> = st
            .sessions
            .values()
            .filter(|s| s.mode == Mode::Holistic && s.participant_id == participant)
            .filter_map(|s| s.dialogue_id.as_deref())
            .filter_map(|id| self.corpus.dialogue(id).ok())
            .map(|d| d.image_set_id.as_str())
            .collect();
        match assignment {
            Assignment::Dialogue { dialogue_id } => {
                let d = self.corpus.dialogue(dialogue_id)?;
                if done.contains(d.image_set_id.as_str()) {
                    return Err(ExperimentError::CapExceeded {
                        participant_id: participant.to_string(),
                        image_set_id: d.image_set_id.clone(),
                    });
                }
                Ok(d)
            }
            Assignment::Balanced => {
                let coverage = |d: &Dialogue| {
                    st.sessions
                        .values()
                        .filter(|s| s.dialogue_id.as_deref() == Some(d.dialogue_id.as_str()))
                        .count()
                };
                self.corpus
                    .dialogues
                    .iter()
                    .filter(|d| !done.contains(d.image_set_id.as_str()))
                    .filter(|d| !d.mentions().is_empty())
                    .enumerate()
                    .min_by_key(|(k, d)| (coverage(d), *k))
                    .map(|(_, d)| d)
                    .ok_or_else(|| ExperimentError::CapExceeded {
                        participant_id: participant.to_string(),
                        image_set_id: "every image set".into(),
                    })
            }
        }
    }

    pub fn session(&self, session_id: &str) -> Result<SessionView, ExperimentError> {
        let st = self.lock();
        let s = st
            .sessions
            .get(session_id)
            .ok_or_else(|| ExperimentError::UnknownSession(session_id.to_string()))?;
        Ok(self.view(s))
    }

    fn mention_of(&self, item: &Item) -> Result<(&Dialogue, MentionRef<'_>), ExperimentError> {
        let d = self.corpus.dialogue(&item.dialogue_id)?;
        Ok((d, d.find_mention(&item.item_id)?))
    }

    fn stimulus(&self, s: &ExperimentSession) -> Result<Stimulus, ExperimentError> {
        let item = s.current().expect("session not completed");
        let (d, m) = self.mention_of(item)?;
        let set = self.corpus.image_set_of(d)?;
        let (candidates, body) = match s.mode {
            Mode::Independent => {
                let mut cands: Vec<Candidate> = self
                    .corpus
                    .candidate_set_at(d, &item.item_id, true)?
                    .into_iter()
                    .map(|i| Candidate {
                        image_id: i.image_id.clone(),
                        uri: i.uri.clone(),
                        ranked: false,
                    })
                    .collect();
                cands.shuffle(&mut ChaCha8Rng::seed_from_u64(
                    s.seed.wrapping_add(1 + s.cursor as u64),
                ));
                let description = m
                    .mention
                    .manual_labels
                    .get(LABEL_WINDOW)
                    .cloned()
                    .ok_or_else(|| {
                        ExperimentError::BadRequest(format!("item {} has no label", item.item_id))
                    })?;
                (cands, StimulusBody::Independent { description })
            }
            Mode::Holistic => {
                let (round, index) = (m.utterance.round, m.utterance.index);
                let cands = set
                    .images
                    .iter()
                    .map(|i| Candidate {
                        image_id: i.image_id.clone(),
                        uri: i.uri.clone(),
                        ranked: d.ranked_before(&i.image_id, round, index),
                    })
                    .collect();
                let utterances = d.utterances[..=index]
                    .iter()
                    .map(|u| ShownUtterance {
                        index: u.index,
                        speaker: u.speaker,
                        text: u.text.clone(),
                    })
                    .collect();
                (
                    cands,
                    StimulusBody::Holistic {
                        utterances,
                        mention_span: m.mention.span,
                    },
                )
            }
        };
        Ok(Stimulus {
            session_id: s.session_id.clone(),
            item_id: item.item_id.clone(),
            position: s.cursor,
            n_items: s.items.len(),
            candidates,
            multi_select: s.mode == Mode::Holistic,
            body,
        })
    }

    pub fn next_stimulus(&self, session_id: &str) -> Result<Next, ExperimentError> {
        let st = self.lock();
        let s = st
            .sessions
            .get(session_id)
            .ok_or_else(|| ExperimentError::UnknownSession(session_id.to_string()))?;
        if s.completed {
            return Ok(Next::Completed {
                session_id: s.session_id.clone(),
                completion_code: self.completion_code(&s.session_id),
            });
        }
        Ok(Next::Stimulus(self.stimulus(s)?))
    }

    pub fn submit_response(
        &self,
        session_id: &str,
        req: &SubmitResponse,
    ) -> Result<SessionView, ExperimentError> {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        self.submit_response_at(session_id, req, now)
    }

    /// Records a response; `now_ms` becomes its timestamp.
    pub fn submit_response_at(
        &self,
        session_id: &str,
        req: &SubmitResponse,
        now_ms: u64,
    ) -> Result<SessionView, ExperimentError> {
        let mut st = self.lock();
        let s = st
            .sessions
            .get(session_id)
            .ok_or_else(|| ExperimentError::UnknownSession(session_id.to_string()))?;
        if let Some(key) = &req.idempotency_key {
            if let Some(&i) = st.keys.get(&(session_id.to_string(), key.clone())) {
                let prior = &s.responses[i];
                if prior.item_id == req.item_id
                    && prior.selected_image_ids == req.selected_image_ids
                {
                    return Ok(self.view(s));
                }
                return Err(ExperimentError::IdempotencyConflict(key.clone()));
            }
        }
        if s.responses.iter().any(|r| r.item_id == req.item_id) {
            return Err(ExperimentError::DuplicateResponse(req.item_id.clone()));
        }
        if s.completed {
            return Err(ExperimentError::Completed(session_id.to_string()));
        }
        let current = s.current().expect("session not completed");
        if current.item_id != req.item_id {
            return Err(ExperimentError::NotCurrentItem {
                expected: current.item_id.clone(),
                got: req.item_id.clone(),
            });
        }
        if req.selected_image_ids.is_empty() {
            return Err(ExperimentError::InvalidSelection(
                "no image selected".into(),
            ));
        }
        if s.mode == Mode::Independent && req.selected_image_ids.len() != 1 {
            return Err(ExperimentError::InvalidSelection(
                "independent items take exactly one image".into(),
            ));
        }
        let shown = self.stimulus(s)?.candidates;
        let mut ranked_selected = BTreeSet::new();
        for id in &req.selected_image_ids {
            match shown.iter().find(|c| &c.image_id == id) {
                None => {
                    return Err(ExperimentError::InvalidSelection(format!(
                        "{id} was not shown"
                    )))
                }
                Some(c) if c.ranked => {
                    ranked_selected.insert(id.clone());
                }
                Some(_) => {}
            }
        }
        let response = Response {
            item_id: req.item_id.clone(),
            selected_image_ids: req.selected_image_ids.clone(),
            latency_ms: req.latency_ms,
            timestamp: now_ms,
            ranked_selected,
        };
        st.record(Event::ResponseRecorded {
            session_id: session_id.to_string(),
            response,
            idempotency_key: req.idempotency_key.clone(),
        })?;
        Ok(self.view(&st.sessions[session_id]))
    }

    /// A copy of every session, in creation order.
    pub fn sessions(&self) -> Vec<ExperimentSession> {
        self.lock().sessions.values().cloned().collect()
    }

    /// Every response with its session context.
    pub fn export_results(&self) -> Vec<ResultRecord> {
        let st = self.lock();
        let mut out = Vec::new();
        for s in st.sessions.values() {
            for (r, item) in s.responses.iter().zip(&s.items) {
                out.push(ResultRecord {
                    session_id: s.session_id.clone(),
                    participant_id: s.participant_id.clone(),
                    mode: s.mode,
                    dialogue_id: item.dialogue_id.clone(),
                    response: r.clone(),
                });
            }
        }
        out
    }
}
