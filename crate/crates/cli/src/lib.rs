//! Commands behind the `refres` binary.

pub mod config;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use refres::context::{export_finetune_dataset, ContextError, ContextWindow, WindowName};
use refres::corpus::{Corpus, CorpusError};
use refres::describers::{DescribeError, Describer, DescriptionSource, DescriptionTable};
use refres::eval::{run_cross_validation, write_report, CrossValConfig, CrossValReport, EvalError};
use refres::retrieval::{
    EmbeddingBackend, EmbeddingCache, HashBackend, HttpEmbeddingBackend, PlantedBackend,
    RetrievalError,
};
use refres::synth::planted_backend;
use refres_experiment::{Experiment, ExperimentError};
use thiserror::Error;

pub use config::{BackendConfig, NamedDescriber, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Describe(#[from] DescribeError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

impl CliError {
    pub fn is_leakage(&self) -> bool {
        match self {
            CliError::Eval(e) => e.is_leakage(),
            CliError::Describe(e) => matches!(e, DescribeError::FoldMismatch { .. }),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSummary {
    pub image_sets: usize,
    pub dialogues: usize,
    pub mentions: usize,
    pub single_image_mentions: usize,
}

/// Loads and validates a corpus file.
pub fn cmd_validate(path: &Path) -> Result<CorpusSummary, CliError> {
    let corpus = Corpus::load(path)?;
    corpus.validate()?;
    Ok(CorpusSummary {
        image_sets: corpus.image_sets.len(),
        dialogues: corpus.dialogues.len(),
        mentions: corpus.dialogues.iter().map(|d| d.mentions().len()).sum(),
        single_image_mentions: corpus
            .dialogues
            .iter()
            .map(|d| d.single_image_mentions().len())
            .sum(),
    })
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus, CliError> {
    let corpus = Corpus::load(&cfg.corpus)?;
    corpus.validate()?;
    Ok(corpus)
}

fn window(cfg: &RunConfig, name: WindowName) -> ContextWindow {
    if cfg.inclusive_windows {
        ContextWindow::inclusive(name)
    } else {
        ContextWindow::preceding(name)
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })
}

/// Writes one fine-tuning file per fold from the fold's training
/// dialogues, named `{fold}_{window}.jsonl`. Returns each path with its
/// sample count.
pub fn cmd_export(
    cfg: &RunConfig,
    fold: Option<&str>,
    window_name: WindowName,
    label_source: DescriptionSource,
    out_dir: &Path,
) -> Result<Vec<(PathBuf, usize)>, CliError> {
    let corpus = load_corpus(cfg)?;
    let folds = corpus.make_folds()?;
    let chosen: Vec<_> = match fold {
        Some(id) => {
            let f = folds
                .iter()
                .find(|f| f.fold_id == id)
                .ok_or_else(|| CliError::Usage(format!("unknown fold {id:?}")))?;
            vec![f]
        }
        None => folds.iter().collect(),
    };
    create_dir(out_dir)?;
    let mut written = Vec::new();
    for f in chosen {
        let path = out_dir.join(format!("{}_{}.jsonl", f.fold_id, window_name));
        let n = export_finetune_dataset(
            &corpus,
            &f.train_dialogue_ids,
            window(cfg, window_name),
            &cfg.markers,
            label_source,
            Some(&f.fold_id),
            &path,
        )?;
        written.push((path, n));
    }
    Ok(written)
}

fn load_describers(cfg: &RunConfig) -> Result<Vec<Describer>, CliError> {
    cfg.describers
        .iter()
        .map(|d| Describer::load(d.name(), &d.config, &cfg.base_dir).map_err(CliError::from))
        .collect()
}

/// Describes every single-image mention of each fold's held-out dialogues
/// and writes them to `out`. Order: window, fold, dialogue, mention.
pub fn cmd_describe(cfg: &RunConfig, out: &Path) -> Result<usize, CliError> {
    let [describer] = cfg.describers.as_slice() else {
        return Err(CliError::Usage(
            "describe takes exactly one describer".into(),
        ));
    };
    let describer = Describer::load(describer.name(), &describer.config, &cfg.base_dir)?;
    let corpus = load_corpus(cfg)?;
    let folds = corpus.make_folds()?;
    let mut descriptions = Vec::new();
    for &w in &cfg.windows {
        for f in &folds {
            let prepared = describer.prepare(&f.fold_id, w)?;
            for id in &f.test_dialogue_ids {
                let d = corpus.dialogue(id)?;
                for m in d.single_image_mentions() {
                    descriptions.push(prepared.describe(
                        d,
                        &m.mention.mention_id,
                        window(cfg, w),
                    )?);
                }
            }
        }
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    DescriptionTable::write(&descriptions, out).map_err(|source| CliError::Io {
        path: out.display().to_string(),
        source,
    })?;
    Ok(descriptions.len())
}

pub fn build_backend(
    cfg: &RunConfig,
    corpus: &Corpus,
) -> Result<Box<dyn EmbeddingBackend<f64>>, CliError> {
    Ok(match &cfg.backend {
        BackendConfig::Hash { dimension } => Box::new(HashBackend::new(*dimension, cfg.seed)),
        BackendConfig::Planted { path: None } => Box::new(planted_backend::<f64>(corpus)),
        BackendConfig::Planted { path: Some(p) } => {
            Box::new(PlantedBackend::<f64>::load("planted", p).map_err(|source| {
                RetrievalError::Backend {
                    backend_id: "planted".into(),
                    source,
                }
            })?)
        }
        BackendConfig::Http {
            endpoint,
            dimension,
            id,
            token_env,
            normalize,
        } => {
            let mut b = HttpEmbeddingBackend::new(
                id.clone().unwrap_or_else(|| endpoint.clone()),
                endpoint,
                *dimension,
            );
            b.token_env = token_env.clone();
            b.normalize = *normalize;
            Box::new(b)
        }
    })
}

/// Runs cross-validation and writes `results.jsonl` and `tables.md` to the
/// output directory.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<CrossValReport, CliError> {
    if cfg.describers.is_empty() {
        return Err(CliError::Usage("no describers configured".into()));
    }
    let corpus = load_corpus(cfg)?;
    let describers = load_describers(cfg)?;
    let backend = build_backend(cfg, &corpus)?;
    let cache = match &cfg.cache {
        Some(p) => EmbeddingCache::load(p)?,
        None => EmbeddingCache::new(),
    };
    let config = CrossValConfig {
        windows: cfg.windows.clone(),
        modes: cfg.modes.clone(),
        inclusive_windows: cfg.inclusive_windows,
        text_metrics: true,
        cosine: cfg.cosine,
        parallel: true,
    };
    let report = run_cross_validation(
        &corpus,
        &describers,
        backend.as_ref(),
        &cache,
        &config,
        None,
    )?;
    create_dir(&cfg.out)?;
    write_report(&report, &cfg.out)?;
    if let Some(p) = &cfg.cache {
        cache.save(p)?;
    }
    Ok(report)
}

/// Serves the experiment over HTTP until the process is stopped.
pub async fn cmd_serve(cfg: &RunConfig, addr: SocketAddr) -> Result<(), CliError> {
    let corpus = Arc::new(load_corpus(cfg)?);
    let experiment = Arc::new(Experiment::open(corpus, cfg.experiment.clone())?);
    refres_experiment::http::serve(experiment, addr)
        .await
        .map_err(|source| CliError::Io {
            path: addr.to_string(),
            source,
        })
}
