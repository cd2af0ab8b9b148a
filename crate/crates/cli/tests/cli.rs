use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use refres::context::WindowName;
use refres::corpus::Corpus;
use refres::synth::{planted_corpus, PlantedShape};

fn refres(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refres"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn five_set_corpus() -> Corpus {
    planted_corpus(
        PlantedShape {
            image_sets: 5,
            dialogues_per_set: 2,
            rounds: 2,
            ranked_per_round: 4,
            ..PlantedShape::default()
        },
        11,
    )
}

fn write_corpus(dir: &Path, corpus: &Corpus) -> PathBuf {
    let p = dir.join("corpus.jsonl");
    corpus.save(&p).unwrap();
    p
}

/// One generation fixture per fold and window, echoing the manual labels.
fn write_crdg_fixtures(dir: &Path, corpus: &Corpus, windows: &[WindowName], mistag: Option<&str>) {
    std::fs::create_dir_all(dir.join("gen")).unwrap();
    for f in corpus.make_folds().unwrap() {
        for w in windows {
            let tag = if Some(f.fold_id.as_str()) == mistag {
                "elsewhere"
            } else {
                &f.fold_id
            };
            let mut text = format!("{{\"header\":{{\"fold_id\":\"{tag}\",\"window\":\"{w}\"}}}}\n");
            for id in &f.test_dialogue_ids {
                for m in corpus.dialogue(id).unwrap().single_image_mentions() {
                    let label = &m.mention.manual_labels[w.as_str()];
                    text.push_str(&format!(
                        "{{\"mention_id\":\"{}\",\"text\":\"{label}\"}}\n",
                        m.mention.mention_id
                    ));
                }
            }
            std::fs::write(dir.join(format!("gen/{}_{w}.jsonl", f.fold_id)), text).unwrap();
        }
    }
}

fn average_accuracy(results: &str, describer: &str, mode: &str) -> Vec<f64> {
    results
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| {
            v["record"] == "retrieval"
                && v["fold_id"] == "average"
                && v["describer"] == describer
                && v["mode"] == mode
        })
        .map(|v| v["micro"]["accuracy"].as_f64().unwrap())
        .collect()
}

#[test]
fn validate_reports_status() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/tests/fixtures/figure1.jsonl"
    );
    let ok = refres(&["validate", fixture], dir.path());
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("1 dialogues, 5 mentions"));

    let bad = std::fs::read_to_string(fixture)
        .unwrap()
        .replace("[24, 30]", "[24, 300]");
    std::fs::write(dir.path().join("bad.jsonl"), bad).unwrap();
    let o = refres(&["validate", "bad.jsonl"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("f1"), "{}", stderr(&o));

    let o = refres(&["validate", "nowhere.jsonl"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nowhere.jsonl"));
}

#[test]
fn export_writes_a_file_per_fold() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = five_set_corpus();
    write_corpus(dir.path(), &corpus);
    let o = refres(
        &[
            "export",
            "--corpus",
            "corpus.jsonl",
            "--window",
            "7",
            "--out",
            "ft",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let files: Vec<_> = std::fs::read_dir(dir.path().join("ft")).unwrap().collect();
    assert_eq!(files.len(), 5);

    let singles: usize = corpus
        .dialogues
        .iter()
        .map(|d| d.single_image_mentions().len())
        .sum();
    let per_set = singles / 5;
    for f in corpus.make_folds().unwrap() {
        let text =
            std::fs::read_to_string(dir.path().join(format!("ft/{}_7.jsonl", f.fold_id))).unwrap();
        assert_eq!(text.lines().count(), 1 + singles - per_set);
    }
    assert!(stdout(&o).ends_with(&format!("{} samples\n", 4 * singles)));

    let o = refres(
        &[
            "export",
            "--corpus",
            "corpus.jsonl",
            "--window",
            "3",
            "--fold",
            "dogs",
            "--out",
            "one",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    assert_eq!(
        std::fs::read_dir(dir.path().join("one")).unwrap().count(),
        1
    );
}

#[test]
fn export_lists_missing_labels() {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = five_set_corpus();
    let m = &mut corpus.dialogues[2].utterances[1].mentions[0];
    m.manual_labels.clear();
    let id = m.mention_id.clone();
    write_corpus(dir.path(), &corpus);
    let o = refres(
        &["export", "--corpus", "corpus.jsonl", "--window", "full"],
        dir.path(),
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains(&id), "{}", stderr(&o));
}

#[test]
fn describe_output_feeds_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = five_set_corpus();
    write_corpus(dir.path(), &corpus);
    let o = refres(
        &[
            "describe",
            "--corpus",
            "corpus.jsonl",
            "--describer",
            "gt_manual",
            "--window",
            "7",
            "--out",
            "desc",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("desc/descriptions.jsonl")).unwrap();
    let singles: usize = corpus
        .dialogues
        .iter()
        .map(|d| d.single_image_mentions().len())
        .sum();
    assert_eq!(text.lines().count(), singles);
    assert!(text.lines().all(|l| l.contains("\"source\":\"gt_manual\"")));

    std::fs::write(
        dir.path().join("run.toml"),
        r#"
corpus = "corpus.jsonl"
windows = ["7"]
out = "report"

[backend]
kind = "planted"

[[describers]]
name = "stored"
kind = "precomputed"
path = "desc/descriptions.jsonl"
"#,
    )
    .unwrap();
    let o = refres(&["evaluate", "--config", "run.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let results = std::fs::read_to_string(dir.path().join("report/results.jsonl")).unwrap();
    assert_eq!(average_accuracy(&results, "stored", "reduced"), vec![1.0]);
    assert_eq!(average_accuracy(&results, "stored", "all"), vec![1.0]);
    let tables = std::fs::read_to_string(dir.path().join("report/tables.md")).unwrap();
    assert!(tables.contains("stored"));
    assert!(tables.to_lowercase().contains("random"));
}

#[test]
fn crdg_fixtures_and_leakage() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = five_set_corpus();
    write_corpus(dir.path(), &corpus);
    let windows = [WindowName::W7, WindowName::Full];
    write_crdg_fixtures(dir.path(), &corpus, &windows, None);
    let config = r#"
corpus = "corpus.jsonl"
out = "report"

[backend]
kind = "planted"

[[describers]]
name = "crdg"
kind = "crdg"
fixtures = "gen/{fold}_{window}.jsonl"
"#;
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    let o = refres(
        &["evaluate", "--config", "run.toml", "--reduced"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let results = std::fs::read_to_string(dir.path().join("report/results.jsonl")).unwrap();
    assert_eq!(
        average_accuracy(&results, "crdg", "reduced"),
        vec![1.0, 1.0]
    );
    assert!(average_accuracy(&results, "crdg", "all").is_empty());

    write_crdg_fixtures(dir.path(), &corpus, &windows, Some("cats"));
    let o = refres(&["evaluate", "--config", "run.toml"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("elsewhere"), "{}", stderr(&o));
}

#[test]
fn config_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = refres(&["evaluate"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--config"));

    write_corpus(dir.path(), &five_set_corpus());
    let o = refres(
        &[
            "evaluate",
            "--corpus",
            "corpus.jsonl",
            "--describer",
            "oracle",
        ],
        dir.path(),
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("oracle"));

    let o = refres(
        &["evaluate", "--corpus", "corpus.jsonl", "--window", "5"],
        dir.path(),
    );
    assert!(!o.status.success());
}
