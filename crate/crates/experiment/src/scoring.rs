use std::collections::BTreeMap;

use refres::corpus::Corpus;
use serde::{Deserialize, Serialize};

use crate::model::{ExperimentSession, Mode};
use crate::ExperimentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionScore {
    pub session_id: String,
    pub participant_id: String,
    pub correct: usize,
    pub n_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueScore {
    pub mode: Mode,
    pub dialogue_id: String,
    /// Highest accuracy of any session on this dialogue's items.
    pub best: f64,
    pub sessions: Vec<SessionScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeScore {
    pub mode: Mode,
    /// Pooled over all scored responses.
    pub accuracy: f64,
    pub n_items: usize,
    pub n_sessions: usize,
    /// Mean over dialogues of the best session accuracy.
    pub best_per_dialogue: f64,
    pub n_dialogues: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanReport {
    pub modes: Vec<ModeScore>,
    pub dialogues: Vec<DialogueScore>,
}

/// Top-1 accuracy of human responses on single-image items.
///
/// A response is correct when the selected set is exactly the referent.
/// Multi-image items are not scored.
pub fn score_sessions(
    sessions: &[ExperimentSession],
    corpus: &Corpus,
) -> Result<HumanReport, ExperimentError> {
    // (mode, dialogue) -> session -> (correct, n)
    let mut tally: BTreeMap<(Mode, String), BTreeMap<String, SessionScore>> = BTreeMap::new();
    for s in sessions {
        for (r, item) in s.responses.iter().zip(&s.items) {
            let d = corpus.dialogue(&item.dialogue_id)?;
            let m = d.find_mention(&item.item_id)?;
            let Some(referent) = m.mention.single_referent() else {
                continue;
            };
            let correct =
                r.selected_image_ids.len() == 1 && r.selected_image_ids.contains(referent);
            let entry = tally
                .entry((s.mode, item.dialogue_id.clone()))
                .or_default()
                .entry(s.session_id.clone())
                .or_insert_with(|| SessionScore {
                    session_id: s.session_id.clone(),
                    participant_id: s.participant_id.clone(),
                    correct: 0,
                    n_items: 0,
                });
            entry.n_items += 1;
            entry.correct += usize::from(correct);
        }
    }

    let dialogues: Vec<DialogueScore> = tally
        .into_iter()
        .map(|((mode, dialogue_id), by_session)| {
            let sessions: Vec<SessionScore> = by_session.into_values().collect();
            let best = sessions
                .iter()
                .map(|s| s.correct as f64 / s.n_items as f64)
                .fold(0.0, f64::max);
            DialogueScore {
                mode,
                dialogue_id,
                best,
                sessions,
            }
        })
        .collect();

    let modes = [Mode::Independent, Mode::Holistic]
        .into_iter()
        .filter_map(|mode| {
            let ds: Vec<&DialogueScore> = dialogues.iter().filter(|d| d.mode == mode).collect();
            if ds.is_empty() {
                return None;
            }
            let all = ds.iter().flat_map(|d| &d.sessions);
            let (correct, n) = all
                .clone()
                .fold((0, 0), |(c, n), s| (c + s.correct, n + s.n_items));
            let mut ids: Vec<&str> = all.map(|s| s.session_id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            Some(ModeScore {
                mode,
                accuracy: correct as f64 / n as f64,
                n_items: n,
                n_sessions: ids.len(),
                best_per_dialogue: ds.iter().map(|d| d.best).sum::<f64>() / ds.len() as f64,
                n_dialogues: ds.len(),
            })
        })
        .collect();
    Ok(HumanReport { modes, dialogues })
}
