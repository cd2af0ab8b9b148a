//! Describers assembled from configuration, with their files loaded.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    crdg_generate, describe_coref, describe_mention, describe_substitution, gold_clusters,
    gt_chain_concat, gt_manual, gt_set_of_words, AggregationVariant, CorefStore, DescribeError,
    FixtureGenerator, ProformLexicon, ReferentDescription,
};
use crate::context::{build_context, serialize_sample, ContextWindow, MarkerConfig, WindowName};
use crate::corpus::Dialogue;

/// How a describer is built.
///
/// Coreference describers without a `clusters` file aggregate the annotated
/// chains. CRDG fixtures are located by substituting `{fold}` and `{window}`
/// in `fixtures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DescriberConfig {
    Mention,
    Substitution,
    CorefChain {
        #[serde(default)]
        clusters: Option<PathBuf>,
    },
    CorefSet {
        #[serde(default)]
        clusters: Option<PathBuf>,
    },
    GtChain,
    GtSet,
    GtManual,
    Crdg {
        fixtures: String,
        #[serde(default)]
        markers: MarkerConfig,
    },
    Precomputed {
        path: PathBuf,
    },
}

impl DescriberConfig {
    pub fn default_name(&self) -> &'static str {
        match self {
            DescriberConfig::Mention => "mention",
            DescriberConfig::Substitution => "substitution",
            DescriberConfig::CorefChain { .. } => "coref_chain",
            DescriberConfig::CorefSet { .. } => "coref_set",
            DescriberConfig::GtChain => "gt_chain",
            DescriberConfig::GtSet => "gt_set",
            DescriberConfig::GtManual => "gt_manual",
            DescriberConfig::Crdg { .. } => "crdg",
            DescriberConfig::Precomputed { .. } => "precomputed",
        }
    }

    /// Builds a describer from one of the built-in names that need no files.
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "mention" => DescriberConfig::Mention,
            "substitution" => DescriberConfig::Substitution,
            "coref_chain" => DescriberConfig::CorefChain { clusters: None },
            "coref_set" => DescriberConfig::CorefSet { clusters: None },
            "gt_chain" => DescriberConfig::GtChain,
            "gt_set" => DescriberConfig::GtSet,
            "gt_manual" => DescriberConfig::GtManual,
            _ => return None,
        })
    }
}

/// Stored descriptions keyed by mention and window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DescriptionTable {
    rows: BTreeMap<(String, WindowName), ReferentDescription>,
}

impl DescriptionTable {
    pub fn insert(&mut self, d: ReferentDescription) {
        self.rows.insert((d.mention_id.clone(), d.window), d);
    }

    pub fn get(&self, mention_id: &str, window: WindowName) -> Option<&ReferentDescription> {
        self.rows.get(&(mention_id.to_string(), window))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, DescribeError> {
        let err = |message: String| DescribeError::Fixture {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut table = DescriptionTable::default();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let d: ReferentDescription =
                serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", n + 1)))?;
            table.insert(d);
        }
        Ok(table)
    }

    /// Writes one description per line in the given order.
    pub fn write(descriptions: &[ReferentDescription], path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for d in descriptions {
            writeln!(w, "{}", serde_json::to_string(d).expect("serializable"))?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone)]
enum Loaded {
    Mention,
    Substitution(ProformLexicon),
    Coref {
        variant: AggregationVariant,
        store: Option<CorefStore>,
    },
    GtChain,
    GtSet,
    GtManual,
    Crdg {
        template: PathBuf,
        markers: MarkerConfig,
    },
    Precomputed(DescriptionTable),
}

/// A named describer with its resources in memory.
#[derive(Debug, Clone)]
pub struct Describer {
    pub name: String,
    loaded: Loaded,
}

impl Describer {
    /// Loads the files `config` refers to; relative paths resolve against
    /// `base_dir`.
    pub fn load(
        name: impl Into<String>,
        config: &DescriberConfig,
        base_dir: &Path,
    ) -> Result<Self, DescribeError> {
        let loaded = match config {
            DescriberConfig::Mention => Loaded::Mention,
            DescriberConfig::Substitution => Loaded::Substitution(ProformLexicon::default()),
            DescriberConfig::CorefChain { clusters } | DescriberConfig::CorefSet { clusters } => {
                Loaded::Coref {
                    variant: if matches!(config, DescriberConfig::CorefChain { .. }) {
                        AggregationVariant::Chain
                    } else {
                        AggregationVariant::Set
                    },
                    store: clusters
                        .as_ref()
                        .map(|p| CorefStore::load(&base_dir.join(p)))
                        .transpose()?,
                }
            }
            DescriberConfig::GtChain => Loaded::GtChain,
            DescriberConfig::GtSet => Loaded::GtSet,
            DescriberConfig::GtManual => Loaded::GtManual,
            DescriberConfig::Crdg { fixtures, markers } => {
                markers.validate()?;
                Loaded::Crdg {
                    template: base_dir.join(fixtures),
                    markers: markers.clone(),
                }
            }
            DescriberConfig::Precomputed { path } => {
                Loaded::Precomputed(DescriptionTable::load(&base_dir.join(path))?)
            }
        };
        Ok(Describer {
            name: name.into(),
            loaded,
        })
    }

    /// Describer with an explicit proform lexicon.
    pub fn substitution(name: impl Into<String>, lexicon: ProformLexicon) -> Self {
        Describer {
            name: name.into(),
            loaded: Loaded::Substitution(lexicon),
        }
    }

    pub fn is_crdg(&self) -> bool {
        matches!(self.loaded, Loaded::Crdg { .. })
    }

    /// Binds the describer to one fold and window.
    ///
    /// For a CRDG this loads the fold's fixture and fails when its header
    /// names another fold or window.
    pub fn prepare(
        &self,
        fold_id: &str,
        window: WindowName,
    ) -> Result<Prepared<'_>, DescribeError> {
        let generator = match &self.loaded {
            Loaded::Crdg { template, .. } => {
                let path = PathBuf::from(
                    template
                        .to_string_lossy()
                        .replace("{fold}", fold_id)
                        .replace("{window}", window.as_str()),
                );
                let g = FixtureGenerator::load(&path)?;
                if g.header.fold_id != fold_id {
                    return Err(DescribeError::FoldMismatch {
                        path: path.display().to_string(),
                        expected: fold_id.to_string(),
                        found: g.header.fold_id,
                    });
                }
                if g.header.window != window {
                    return Err(DescribeError::WindowMismatch {
                        path: path.display().to_string(),
                        expected: window,
                        found: g.header.window,
                    });
                }
                Some(g)
            }
            _ => None,
        };
        Ok(Prepared {
            describer: self,
            generator,
        })
    }
}

/// A describer bound to a fold.
#[derive(Debug)]
pub struct Prepared<'a> {
    describer: &'a Describer,
    generator: Option<FixtureGenerator>,
}

impl Prepared<'_> {
    pub fn describer(&self) -> &Describer {
        self.describer
    }

    pub fn describe(
        &self,
        dialogue: &Dialogue,
        mention_id: &str,
        window: ContextWindow,
    ) -> Result<ReferentDescription, DescribeError> {
        match &self.describer.loaded {
            Loaded::Mention => describe_mention(dialogue, mention_id, window),
            Loaded::Substitution(lex) => describe_substitution(dialogue, mention_id, lex, window),
            Loaded::Coref { variant, store } => {
                let ctx = build_context(dialogue, mention_id, window)?;
                let clusters = match store {
                    Some(s) => s.get(mention_id, window.name).cloned().ok_or_else(|| {
                        DescribeError::MissingClusters {
                            mention_id: mention_id.to_string(),
                            window: window.name,
                        }
                    })?,
                    None => gold_clusters(dialogue, &ctx),
                };
                Ok(describe_coref(&ctx, &clusters, *variant))
            }
            Loaded::GtChain => gt_chain_concat(dialogue, mention_id, window),
            Loaded::GtSet => gt_set_of_words(dialogue, mention_id, window),
            Loaded::GtManual => gt_manual(dialogue.find_mention(mention_id)?.mention, window.name),
            Loaded::Crdg { markers, .. } => {
                let generator = self
                    .generator
                    .as_ref()
                    .expect("prepared CRDG has a generator");
                let ctx = build_context(dialogue, mention_id, window)?;
                let sample = serialize_sample(&ctx, &dialogue.task_instructions, markers, None)?;
                crdg_generate(&sample, generator, window.name)
            }
            Loaded::Precomputed(table) => {
                table.get(mention_id, window.name).cloned().ok_or_else(|| {
                    DescribeError::MissingDescription {
                        mention_id: mention_id.to_string(),
                        window: window.name,
                    }
                })
            }
        }
    }
}
