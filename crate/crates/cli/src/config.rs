//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use refres::context::{MarkerConfig, WindowName};
use refres::describers::DescriberConfig;
use refres::eval::CandidateMode;
use refres_experiment::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A describer entry; `name` defaults to the kind's name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedDescriber {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub config: DescriberConfig,
}

impl NamedDescriber {
    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or(self.config.default_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Seeded pseudo-random vectors.
    Hash {
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    /// Vectors from a file, or one-hot vectors derived from the corpus
    /// labels when no file is given.
    Planted {
        #[serde(default)]
        path: Option<PathBuf>,
    },
    Http {
        endpoint: String,
        dimension: usize,
        #[serde(default)]
        id: Option<String>,
        /// Name of the environment variable holding a bearer token.
        #[serde(default)]
        token_env: Option<String>,
        #[serde(default = "yes")]
        normalize: bool,
    },
}

fn default_dimension() -> usize {
    256
}

fn yes() -> bool {
    true
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Hash {
            dimension: default_dimension(),
        }
    }
}

impl BackendConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendConfig::Hash { .. } => "hash",
            BackendConfig::Planted { .. } => "planted",
            BackendConfig::Http { .. } => "http",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    #[serde(default = "default_windows")]
    pub windows: Vec<WindowName>,
    #[serde(default)]
    pub describers: Vec<NamedDescriber>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default = "default_modes")]
    pub modes: Vec<CandidateMode>,
    #[serde(default)]
    pub inclusive_windows: bool,
    #[serde(default)]
    pub cosine: bool,
    /// Embedding cache file, read before and written after a run.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub markers: MarkerConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    /// Directory relative paths in describer configs resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_windows() -> Vec<WindowName> {
    vec![WindowName::W7, WindowName::Full]
}

fn default_modes() -> Vec<CandidateMode> {
    vec![CandidateMode::Reduced, CandidateMode::All]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Values given on the command line; each replaces the config's.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub corpus: Option<PathBuf>,
    pub windows: Vec<WindowName>,
    pub describers: Vec<String>,
    pub backend: Option<String>,
    pub reduced: Option<bool>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn for_corpus(corpus: impl Into<PathBuf>) -> Self {
        RunConfig {
            corpus: corpus.into(),
            windows: default_windows(),
            describers: Vec::new(),
            backend: BackendConfig::default(),
            modes: default_modes(),
            inclusive_windows: false,
            cosine: false,
            cache: None,
            out: default_out(),
            seed: 0,
            markers: MarkerConfig::default(),
            experiment: ExperimentConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }

    /// Parses a config file. Relative paths in it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        cfg.corpus = dir.join(&cfg.corpus);
        cfg.out = dir.join(&cfg.out);
        cfg.cache = cfg.cache.map(|c| dir.join(c));
        if let BackendConfig::Planted { path: Some(p) } = &mut cfg.backend {
            *p = dir.join(&*p);
        }
        cfg.experiment.log_path = cfg.experiment.log_path.map(|p| dir.join(p));
        cfg.experiment.image_root = cfg.experiment.image_root.map(|p| dir.join(p));
        cfg.base_dir = dir;
        Ok(cfg)
    }

    /// Loads the config file if one is given, applies the overrides and
    /// validates the result.
    pub fn resolve(config: Option<&Path>, o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match (config, &o.corpus) {
            (Some(p), _) => RunConfig::from_file(p)?,
            (None, Some(c)) => RunConfig::for_corpus(c),
            (None, None) => {
                return Err(CliError::Usage(
                    "either --config or --corpus is required".into(),
                ))
            }
        };
        cfg.apply(o)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(c) = &o.corpus {
            self.corpus = c.clone();
        }
        if !o.windows.is_empty() {
            self.windows = o.windows.clone();
        }
        if !o.describers.is_empty() {
            let mut chosen = Vec::new();
            for name in &o.describers {
                let d = match self.describers.iter().find(|d| d.name() == name) {
                    Some(d) => d.clone(),
                    None => NamedDescriber {
                        name: Some(name.clone()),
                        config: DescriberConfig::from_name(name).ok_or_else(|| {
                            CliError::Usage(format!(
                                "describer {name:?} is neither configured nor built in"
                            ))
                        })?,
                    },
                };
                chosen.push(d);
            }
            self.describers = chosen;
        }
        if let Some(kind) = &o.backend {
            if kind != self.backend.kind() {
                self.backend =
                    match kind.as_str() {
                        "hash" => BackendConfig::default(),
                        "planted" => BackendConfig::Planted { path: None },
                        "http" => return Err(CliError::Usage(
                            "the http backend needs an endpoint; configure it in the config file"
                                .into(),
                        )),
                        other => return Err(CliError::Usage(format!("unknown backend {other:?}"))),
                    };
            }
        }
        match o.reduced {
            Some(true) => self.modes = vec![CandidateMode::Reduced],
            Some(false) => self.modes = vec![CandidateMode::All],
            None => {}
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        self.experiment.seed = self.seed;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !self.corpus.is_file() {
            return Err(CliError::Usage(format!(
                "corpus {} does not exist",
                self.corpus.display()
            )));
        }
        if self.windows.is_empty() {
            return Err(CliError::Usage("no context windows".into()));
        }
        if self.modes.is_empty() {
            return Err(CliError::Usage("no candidate modes".into()));
        }
        let mut names: Vec<&str> = self.describers.iter().map(NamedDescriber::name).collect();
        if names.iter().any(|n| n.is_empty()) {
            return Err(CliError::Usage("empty describer name".into()));
        }
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(CliError::Usage(format!(
                "describer name {:?} used twice",
                w[0]
            )));
        }
        if let BackendConfig::Planted { path: Some(p) } = &self.backend {
            if !p.is_file() {
                return Err(CliError::Usage(format!(
                    "planted vectors {} do not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}
