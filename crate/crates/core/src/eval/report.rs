use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::crossval::{
    CandidateMode, CrossValReport, FoldResult, ItemRecord, RandomRow, RetrievalRow, TextRow,
};
use super::EvalError;
use crate::context::WindowName;

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line<'a> {
    Item(&'a ItemRecord),
    Retrieval {
        fold_id: &'a str,
        #[serde(flatten)]
        row: &'a RetrievalRow,
    },
    Text {
        fold_id: &'a str,
        #[serde(flatten)]
        row: &'a TextRow,
    },
    Random {
        fold_id: &'a str,
        #[serde(flatten)]
        row: &'a RandomRow,
    },
}

fn summary_lines<'a>(f: &'a FoldResult, out: &mut Vec<Line<'a>>) {
    let id = f.fold_id.as_str();
    out.extend(
        f.retrieval
            .iter()
            .map(|row| Line::Retrieval { fold_id: id, row }),
    );
    out.extend(f.text.iter().map(|row| Line::Text { fold_id: id, row }));
    out.extend(f.random.iter().map(|row| Line::Random { fold_id: id, row }));
}

/// Line-delimited results: per-item records, then per-fold rows, then the
/// averages under fold id `average`.
pub fn results_jsonl(report: &CrossValReport) -> String {
    let mut lines: Vec<Line<'_>> = report.items.iter().map(Line::Item).collect();
    for f in &report.folds {
        summary_lines(f, &mut lines);
    }
    summary_lines(&report.averages, &mut lines);
    let mut s = String::new();
    for l in &lines {
        s.push_str(&serde_json::to_string(l).expect("serializable"));
        s.push('\n');
    }
    s
}

fn two(x: f64) -> String {
    format!("{x:.2}")
}

fn row(cells: &[String], widths: &[usize]) -> String {
    let mut s = String::from("|");
    for (c, w) in cells.iter().zip(widths) {
        let _ = write!(s, " {c:<w$} |");
    }
    s.push('\n');
    s
}

fn table(title: &str, header: Vec<String>, body: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut s = format!("{title}\n\n");
    s.push_str(&row(&header, &widths));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    s.push_str(&row(&rule, &widths));
    for r in &body {
        s.push_str(&row(r, &widths));
    }
    s.push('\n');
    s
}

fn retrieval_table(report: &CrossValReport, mode: CandidateMode) -> String {
    let avg = &report.averages;
    let mut header = vec!["describer".to_string()];
    for w in &report.windows {
        for m in ["acc", "mrr", "ndcg"] {
            header.push(format!("{m}@{w}"));
        }
    }
    let mut body = Vec::new();
    if let Some(r) = avg.random.iter().find(|r| r.mode == mode) {
        let mut cells = vec!["random".to_string()];
        for _ in &report.windows {
            cells.extend([two(r.accuracy), two(r.mrr), "-".into()]);
        }
        body.push(cells);
    }
    for d in &report.describers {
        let mut cells = vec![d.clone()];
        for w in &report.windows {
            match find_retrieval(avg, d, *w, mode) {
                Some(r) => {
                    cells.extend([two(r.micro.accuracy), two(r.micro.mrr), two(r.micro.ndcg)])
                }
                None => cells.extend(["-".into(), "-".into(), "-".into()]),
            }
        }
        body.push(cells);
    }
    let what = match mode {
        CandidateMode::Reduced => "reduced candidate sets",
        CandidateMode::All => "all candidates",
    };
    table(
        &format!(
            "Reference resolution, {what}, single-image referents, mean over {} folds",
            report.folds.len()
        ),
        header,
        body,
    )
}

fn find_retrieval<'a>(
    f: &'a FoldResult,
    d: &str,
    w: WindowName,
    mode: CandidateMode,
) -> Option<&'a RetrievalRow> {
    f.retrieval
        .iter()
        .find(|r| r.describer == d && r.window == w && r.mode == mode)
}

fn text_table(report: &CrossValReport) -> String {
    let avg = &report.averages;
    let mut header = vec!["describer".to_string()];
    for w in &report.windows {
        for m in ["bleu", "rouge-l", "jaccard", "cosine"] {
            header.push(format!("{m}@{w}"));
        }
    }
    let body = report
        .describers
        .iter()
        .map(|d| {
            let mut cells = vec![d.clone()];
            for w in &report.windows {
                match avg
                    .text
                    .iter()
                    .find(|t| &t.describer == d && t.window == *w)
                {
                    Some(t) if t.metrics.n_items > 0 => cells.extend([
                        two(t.metrics.bleu),
                        two(t.metrics.rouge_l),
                        two(t.metrics.jaccard),
                        t.metrics.cosine.map_or("-".into(), two),
                    ]),
                    _ => cells.extend(["-".into(), "-".into(), "-".into(), "-".into()]),
                }
            }
            cells
        })
        .collect();
    table(
        &format!(
            "Description quality against manual labels, mean over {} folds",
            report.folds.len()
        ),
        header,
        body,
    )
}

/// Human-readable tables, values rounded to two decimals.
pub fn render_tables(report: &CrossValReport) -> String {
    let mut s = String::new();
    for &mode in &report.modes {
        s.push_str(&retrieval_table(report, mode));
    }
    if report.averages.text.iter().any(|t| t.metrics.n_items > 0) {
        s.push_str(&text_table(report));
    }
    s
}

/// Writes `results.jsonl` and `tables.md` into `dir`.
pub fn write_report(report: &CrossValReport, dir: &Path) -> Result<(), EvalError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| EvalError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let results = dir.join("results.jsonl");
    std::fs::write(&results, results_jsonl(report)).map_err(io(&results))?;
    let tables = dir.join("tables.md");
    std::fs::write(&tables, render_tables(report)).map_err(io(&tables))?;
    Ok(())
}
