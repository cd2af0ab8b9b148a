use std::collections::BTreeSet;
use std::sync::Arc;

use refres::corpus::Corpus;
use refres::synth::{planted_corpus, PlantedShape};
use refres_experiment::{
    score_sessions, Assignment, CreateSession, Experiment, ExperimentConfig, ExperimentError, Mode,
    Next, StimulusBody, SubmitResponse,
};

fn figure1() -> Arc<Corpus> {
    Arc::new(
        Corpus::load(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../core/tests/fixtures/figure1.jsonl"
        ))
        .unwrap(),
    )
}

fn planted() -> Arc<Corpus> {
    Arc::new(planted_corpus(PlantedShape::default(), 2))
}

fn create(x: &Experiment, mode: Mode, who: &str) -> Result<String, ExperimentError> {
    x.create_session(&CreateSession {
        mode,
        participant_id: who.into(),
        assignment: Assignment::Balanced,
        n_items: Some(10),
    })
    .map(|v| v.session_id)
}

fn pick(ids: &[&str]) -> BTreeSet<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

fn answer(x: &Experiment, sid: &str, correct: bool) -> refres_experiment::SessionView {
    let Next::Stimulus(s) = x.next_stimulus(sid).unwrap() else {
        panic!("session already completed")
    };
    let m = x
        .corpus()
        .dialogues
        .iter()
        .find_map(|d| d.find_mention(&s.item_id).ok())
        .unwrap();
    let referent: BTreeSet<String> = m.mention.referent_image_ids.clone();
    let chosen = if correct {
        if s.multi_select {
            referent
        } else {
            pick(&[referent.iter().next().unwrap()])
        }
    } else {
        match s
            .candidates
            .iter()
            .find(|c| !referent.contains(&c.image_id))
        {
            Some(wrong) => pick(&[&wrong.image_id]),
            None => pick(&[&s.candidates[0].image_id]),
        }
    };
    x.submit_response_at(
        sid,
        &SubmitResponse {
            item_id: s.item_id.clone(),
            selected_image_ids: chosen,
            latency_ms: 1200,
            idempotency_key: None,
        },
        0,
    )
    .unwrap()
}

#[test]
fn holistic_cap_per_image_set() {
    let x = Experiment::open(figure1(), ExperimentConfig::default()).unwrap();
    create(&x, Mode::Holistic, "p1").unwrap();
    let err = x
        .create_session(&CreateSession {
            mode: Mode::Holistic,
            participant_id: "p1".into(),
            assignment: Assignment::Dialogue {
                dialogue_id: "fig1".into(),
            },
            n_items: None,
        })
        .unwrap_err();
    assert!(matches!(err, ExperimentError::CapExceeded { .. }), "{err}");
    assert!(matches!(
        create(&x, Mode::Holistic, "p1"),
        Err(ExperimentError::CapExceeded { .. })
    ));
    create(&x, Mode::Holistic, "p2").unwrap();
}

#[test]
fn independent_session_has_requested_items() {
    let x = Experiment::open(planted(), ExperimentConfig::default()).unwrap();
    let sid = create(&x, Mode::Independent, "p").unwrap();
    assert_eq!(x.session(&sid).unwrap().n_items, 10);
    let Next::Stimulus(s) = x.next_stimulus(&sid).unwrap() else {
        panic!()
    };
    let StimulusBody::Independent { description } = &s.body else {
        panic!()
    };
    assert!(description.starts_with("the "));
    assert!(!s.multi_select);
    assert!(s.candidates.iter().all(|c| !c.ranked));
}

#[test]
fn holistic_reveal_grows_and_stops_at_the_mention() {
    let corpus = figure1();
    let x = Experiment::open(corpus.clone(), ExperimentConfig::default()).unwrap();
    let sid = create(&x, Mode::Holistic, "p").unwrap();
    let d = &corpus.dialogues[0];
    let mut prev: Vec<String> = Vec::new();
    while let Next::Stimulus(s) = x.next_stimulus(&sid).unwrap() {
        let StimulusBody::Holistic {
            utterances,
            mention_span,
        } = &s.body
        else {
            panic!()
        };
        let shown: Vec<String> = utterances.iter().map(|u| u.text.clone()).collect();
        assert!(shown.starts_with(&prev));
        let m = d.find_mention(&s.item_id).unwrap();
        assert_eq!(utterances.last().unwrap().index, m.utterance.index);
        assert_eq!(*mention_span, m.mention.span);
        assert_eq!(s.candidates.len(), 9);
        prev = shown;
        answer(&x, &sid, true);
    }
    assert_eq!(prev.len(), d.utterances.len());
}

#[test]
fn ranked_images_are_flagged_not_hidden() {
    let x = Experiment::open(planted(), ExperimentConfig::default()).unwrap();
    let sid = create(&x, Mode::Holistic, "p").unwrap();
    // opener, "Next, X", "Agreed, put it there." (X placed here), "Next, Y", ...
    let mut shown = Vec::new();
    for _ in 0..6 {
        let Next::Stimulus(s) = x.next_stimulus(&sid).unwrap() else {
            panic!()
        };
        assert_eq!(s.candidates.len(), 9);
        let flagged: BTreeSet<String> = s
            .candidates
            .iter()
            .filter(|c| c.ranked)
            .map(|c| c.image_id.clone())
            .collect();
        let m = x
            .corpus()
            .dialogues
            .iter()
            .find_map(|d| d.find_mention(&s.item_id).ok())
            .unwrap();
        shown.push((m.mention.referent_image_ids.clone(), flagged));
        answer(&x, &sid, true);
    }
    let first = shown[1].0.clone();
    assert_eq!(shown[2].0, first);
    let expected = [
        BTreeSet::new(),
        BTreeSet::new(),
        BTreeSet::new(),
        first.clone(),
        first.clone(),
    ];
    for (k, want) in expected.iter().enumerate() {
        assert_eq!(&shown[k].1, want, "item {k}");
    }
    assert_eq!(shown[5].1.len(), 2);
}

#[test]
fn submit_validation() {
    let x = Experiment::open(planted(), ExperimentConfig::default()).unwrap();
    let sid = create(&x, Mode::Independent, "p").unwrap();
    let Next::Stimulus(s) = x.next_stimulus(&sid).unwrap() else {
        panic!()
    };
    let req = |ids: &[&str], item: &str| SubmitResponse {
        item_id: item.into(),
        selected_image_ids: pick(ids),
        latency_ms: 5,
        idempotency_key: None,
    };
    let e = x
        .submit_response(&sid, &req(&["no_such_image"], &s.item_id))
        .unwrap_err();
    assert!(matches!(e, ExperimentError::InvalidSelection(_)));
    let e = x.submit_response(&sid, &req(&[], &s.item_id)).unwrap_err();
    assert!(matches!(e, ExperimentError::InvalidSelection(_)));
    let two = [
        s.candidates[0].image_id.as_str(),
        s.candidates[1].image_id.as_str(),
    ];
    assert!(x.submit_response(&sid, &req(&two, &s.item_id)).is_err());

    let v = x
        .submit_response(&sid, &req(&two[..1], &s.item_id))
        .unwrap();
    assert_eq!(v.cursor, 1);
    let e = x
        .submit_response(&sid, &req(&two[..1], &s.item_id))
        .unwrap_err();
    assert!(matches!(e, ExperimentError::DuplicateResponse(_)));
    let e = x
        .submit_response(&sid, &req(&two[..1], "elsewhere"))
        .unwrap_err();
    assert!(matches!(e, ExperimentError::NotCurrentItem { .. }));
}

#[test]
fn idempotent_retry_records_once() {
    let x = Experiment::open(planted(), ExperimentConfig::default()).unwrap();
    let sid = create(&x, Mode::Independent, "p").unwrap();
    let Next::Stimulus(s) = x.next_stimulus(&sid).unwrap() else {
        panic!()
    };
    let req = SubmitResponse {
        item_id: s.item_id.clone(),
        selected_image_ids: pick(&[&s.candidates[0].image_id]),
        latency_ms: 5,
        idempotency_key: Some("k1".into()),
    };
    let a = x.submit_response(&sid, &req).unwrap();
    let b = x.submit_response(&sid, &req).unwrap();
    assert_eq!(a, b);
    assert_eq!(x.export_results().len(), 1);
    let other = SubmitResponse {
        selected_image_ids: pick(&[&s.candidates[1].image_id]),
        ..req
    };
    assert!(matches!(
        x.submit_response(&sid, &other),
        Err(ExperimentError::IdempotencyConflict(_))
    ));
}

#[test]
fn completion_and_scoring() {
    let x = Experiment::open(planted(), ExperimentConfig::default()).unwrap();
    let good = create(&x, Mode::Independent, "good").unwrap();
    let mut last = None;
    for _ in 0..10 {
        last = Some(answer(&x, &good, true));
    }
    let last = last.unwrap();
    assert!(last.completed);
    assert!(last.completion_code.is_some());
    assert!(matches!(
        x.next_stimulus(&good).unwrap(),
        Next::Completed { .. }
    ));

    let half = create(&x, Mode::Independent, "half").unwrap();
    for i in 0..10 {
        answer(&x, &half, i % 2 == 0);
    }
    let report = score_sessions(&x.sessions(), x.corpus()).unwrap();
    let per_session: Vec<f64> = report
        .dialogues
        .iter()
        .flat_map(|d| &d.sessions)
        .fold(
            std::collections::BTreeMap::<String, (usize, usize)>::new(),
            |mut m, s| {
                let e = m.entry(s.session_id.clone()).or_default();
                e.0 += s.correct;
                e.1 += s.n_items;
                m
            },
        )
        .values()
        .map(|(c, n)| *c as f64 / *n as f64)
        .collect();
    assert_eq!(per_session, vec![1.0, 0.5]);
    let ind = &report.modes[0];
    assert_eq!(ind.mode, Mode::Independent);
    assert_eq!(ind.accuracy, 0.75);
    assert_eq!(ind.best_per_dialogue, 1.0);
}

#[test]
fn best_of_participants_per_dialogue() {
    let corpus = planted();
    let x = Experiment::open(corpus.clone(), ExperimentConfig::default()).unwrap();
    // two participants on each of the two dialogues
    let mut by_dialogue = std::collections::BTreeMap::<String, Vec<String>>::new();
    for p in ["a", "b", "c", "d"] {
        let sid = create(&x, Mode::Holistic, p).unwrap();
        let d = x.session(&sid).unwrap().dialogue_id.unwrap();
        by_dialogue.entry(d).or_default().push(sid);
    }
    assert_eq!(by_dialogue.len(), 2);
    assert!(by_dialogue.values().all(|v| v.len() == 2));
    // one session answers everything right, the other only the opener
    for sids in by_dialogue.values() {
        for _ in 0..4 {
            answer(&x, &sids[0], true);
        }
        for i in 0..4 {
            answer(&x, &sids[1], i == 0);
        }
    }
    let report = score_sessions(&x.sessions(), &corpus).unwrap();
    let h = report
        .modes
        .iter()
        .find(|m| m.mode == Mode::Holistic)
        .unwrap();
    // the opener names all images and is not scored
    let scores: Vec<f64> = report.dialogues.iter().map(|d| d.best).collect();
    assert_eq!(scores, vec![1.0, 1.0]);
    assert_eq!(h.best_per_dialogue, 1.0);
    assert_eq!(h.n_sessions, 4);
}

#[test]
fn restart_replays_every_response() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        log_path: Some(dir.path().join("events.jsonl")),
        seed: 4,
        ..ExperimentConfig::default()
    };
    let corpus = planted();
    let (before, results) = {
        let x = Experiment::open(corpus.clone(), config.clone()).unwrap();
        let a = create(&x, Mode::Independent, "p").unwrap();
        let b = create(&x, Mode::Holistic, "q").unwrap();
        for _ in 0..3 {
            answer(&x, &a, true);
            answer(&x, &b, false);
        }
        (x.sessions(), x.export_results())
    };
    // a torn write at the end of the log is discarded
    let log = dir.path().join("events.jsonl");
    let mut bytes = std::fs::read(&log).unwrap();
    bytes.extend_from_slice(b"{\"event\":\"response_rec");
    std::fs::write(&log, bytes).unwrap();

    let x = Experiment::open(corpus, config).unwrap();
    assert_eq!(x.sessions(), before);
    assert_eq!(x.export_results(), results);
    let c = create(&x, Mode::Independent, "r").unwrap();
    assert_eq!(c, "s00003");
}
