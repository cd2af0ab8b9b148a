//! Zero-shot referent identification.
//!
//! A description is encoded into a vector `v`, the candidate images into the
//! rows of a matrix `A`, and the candidates are ranked by the scores `A·v`.
//! The top-scoring image is the predicted referent. Ties go to the image that
//! comes first in the image set's declaration order.

mod backend;
mod cache;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Dialogue, Image};
use crate::describers::ReferentDescription;
use crate::scalar::{dot, norm, normalize, Scalar};

pub use backend::{
    BackendError, Capabilities, EmbeddingBackend, HashBackend, HttpEmbeddingBackend,
    PlantedBackend, PlantedRecord,
};
pub use cache::EmbeddingCache;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("backend {backend_id}: {source}")]
    Backend {
        backend_id: String,
        #[source]
        source: BackendError,
    },
    #[error("cannot encode empty text")]
    EmptyText,
    #[error("no candidate images")]
    NoCandidates,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("backend mismatch: {0} vs {1}")]
    BackendMismatch(String, String),
    #[error("normalization flags differ")]
    NormalizationMismatch,
    #[error("embedding has non-finite entries")]
    NonFinite,
    #[error("embedding flagged normalized has norm {0}")]
    NotUnit(f64),
    #[error("{0} rows for {1} image ids")]
    RowCount(usize, usize),
    #[error("backend {0} cannot encode {1}")]
    Unsupported(String, &'static str),
    #[error("embedding cache {path}: {message}")]
    Cache { path: String, message: String },
}

impl RetrievalError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            RetrievalError::Backend {
                source: BackendError::Transient(_),
                ..
            }
        )
    }
}

fn check_vector<T: Scalar>(v: &[T], normalized: bool) -> Result<(), RetrievalError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(RetrievalError::NonFinite);
    }
    if normalized {
        let n = norm(v);
        if (n - T::one()).abs() > T::norm_tolerance() {
            return Err(RetrievalError::NotUnit(n.as_f64()));
        }
    }
    Ok(())
}

/// Encoded description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding<T> {
    vector: Vec<T>,
    backend_id: String,
    normalized: bool,
}

impl<T: Scalar> TextEmbedding<T> {
    pub fn new(
        vector: Vec<T>,
        backend_id: impl Into<String>,
        normalized: bool,
    ) -> Result<Self, RetrievalError> {
        check_vector(&vector, normalized)?;
        Ok(TextEmbedding {
            vector,
            backend_id: backend_id.into(),
            normalized,
        })
    }

    pub fn vector(&self) -> &[T] {
        &self.vector
    }

    pub fn dimension(&self) -> usize {
        self.vector.len()
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// The same direction scaled by `k`; the result is flagged unnormalized
    /// unless `k` is one.
    pub fn scaled(&self, k: T) -> Result<Self, RetrievalError> {
        Self::new(
            self.vector.iter().map(|&x| x * k).collect(),
            self.backend_id.clone(),
            self.normalized && k == T::one(),
        )
    }
}

/// Encoded candidates, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMatrix<T> {
    data: Vec<T>,
    dimension: usize,
    image_ids: Vec<String>,
    backend_id: String,
    normalized: bool,
}

impl<T: Scalar> CandidateMatrix<T> {
    pub fn new(
        rows: Vec<Vec<T>>,
        image_ids: Vec<String>,
        backend_id: impl Into<String>,
        normalized: bool,
    ) -> Result<Self, RetrievalError> {
        if rows.len() != image_ids.len() {
            return Err(RetrievalError::RowCount(rows.len(), image_ids.len()));
        }
        if rows.is_empty() {
            return Err(RetrievalError::NoCandidates);
        }
        let dimension = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * dimension);
        for r in rows {
            if r.len() != dimension {
                return Err(RetrievalError::DimensionMismatch(r.len(), dimension));
            }
            check_vector(&r, normalized)?;
            data.extend(r);
        }
        Ok(CandidateMatrix {
            data,
            dimension,
            image_ids,
            backend_id: backend_id.into(),
            normalized,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.image_ids.len()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Matrix with row `i` taken from row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        CandidateMatrix {
            data: perm
                .iter()
                .flat_map(|&p| self.row(p).iter().copied())
                .collect(),
            dimension: self.dimension,
            image_ids: perm.iter().map(|&p| self.image_ids[p].clone()).collect(),
            backend_id: self.backend_id.clone(),
            normalized: self.normalized,
        }
    }

    /// `A·v`.
    pub fn scores(&self, v: &[T]) -> Vec<T> {
        (0..self.n_rows()).map(|i| dot(self.row(i), v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult<T> {
    pub mention_id: String,
    pub image_ids: Vec<String>,
    /// Aligned with `image_ids`.
    pub scores: Vec<T>,
    /// Candidate ids by descending score.
    pub ranking: Vec<String>,
    pub predicted: String,
    /// 1-based rank of the true referent; absent when it is not a candidate.
    pub rank_of_referent: Option<usize>,
}

impl<T> RetrievalResult<T> {
    /// Fills in the mention and the rank of its referent.
    pub fn resolve(mut self, mention_id: &str, referent: &str) -> Self {
        self.mention_id = mention_id.to_string();
        self.rank_of_referent = self
            .ranking
            .iter()
            .position(|id| id == referent)
            .map(|p| p + 1);
        self
    }
}

/// Scores every candidate against `v` and ranks them.
pub fn score_and_rank<T: Scalar>(
    a: &CandidateMatrix<T>,
    v: &TextEmbedding<T>,
) -> Result<RetrievalResult<T>, RetrievalError> {
    if a.dimension != v.dimension() {
        return Err(RetrievalError::DimensionMismatch(
            a.dimension,
            v.dimension(),
        ));
    }
    if a.backend_id != v.backend_id {
        return Err(RetrievalError::BackendMismatch(
            a.backend_id.clone(),
            v.backend_id.clone(),
        ));
    }
    if a.normalized != v.normalized {
        return Err(RetrievalError::NormalizationMismatch);
    }
    let scores = a.scores(v.vector());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort: equal scores keep canonical order
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let ranking: Vec<String> = order.iter().map(|&i| a.image_ids[i].clone()).collect();
    Ok(RetrievalResult {
        mention_id: String::new(),
        image_ids: a.image_ids.clone(),
        scores,
        predicted: ranking[0].clone(),
        ranking,
        rank_of_referent: None,
    })
}

/// Encodes a description with the backend's text encoder.
pub fn encode_text<T: Scalar>(
    backend: &dyn EmbeddingBackend<T>,
    text: &str,
) -> Result<TextEmbedding<T>, RetrievalError> {
    if text.trim().is_empty() {
        return Err(RetrievalError::EmptyText);
    }
    if !backend.capabilities().encode_text {
        return Err(RetrievalError::Unsupported(
            backend.backend_id().to_string(),
            "text",
        ));
    }
    let raw = backend
        .embed_text(text)
        .map_err(|source| RetrievalError::Backend {
            backend_id: backend.backend_id().to_string(),
            source,
        })?;
    if raw.len() != backend.dimension() {
        return Err(RetrievalError::DimensionMismatch(
            raw.len(),
            backend.dimension(),
        ));
    }
    let v = if backend.normalizes() {
        normalize(raw)
    } else {
        raw
    };
    TextEmbedding::new(v, backend.backend_id(), backend.normalizes())
}

/// Encodes candidate images in order, consulting `cache` before the backend.
pub fn encode_candidates<T: Scalar>(
    backend: &dyn EmbeddingBackend<T>,
    images: &[&Image],
    cache: &EmbeddingCache<T>,
) -> Result<CandidateMatrix<T>, RetrievalError> {
    if images.is_empty() {
        return Err(RetrievalError::NoCandidates);
    }
    if !backend.capabilities().encode_image {
        return Err(RetrievalError::Unsupported(
            backend.backend_id().to_string(),
            "images",
        ));
    }
    let id = backend.backend_id();
    let mut rows = Vec::with_capacity(images.len());
    for img in images {
        let row = match cache.get(id, &img.image_id) {
            Some(v) => v,
            None => {
                let raw = backend
                    .embed_image(img)
                    .map_err(|source| RetrievalError::Backend {
                        backend_id: id.to_string(),
                        source,
                    })?;
                if raw.len() != backend.dimension() {
                    return Err(RetrievalError::DimensionMismatch(
                        raw.len(),
                        backend.dimension(),
                    ));
                }
                let v = if backend.normalizes() {
                    normalize(raw)
                } else {
                    raw
                };
                cache.insert(id, &img.image_id, v.clone());
                v
            }
        };
        rows.push(row);
    }
    CandidateMatrix::new(
        rows,
        images.iter().map(|i| i.image_id.clone()).collect(),
        id,
        backend.normalizes(),
    )
}

/// Candidate set, encoding and ranking for one mention.
///
/// `rank_of_referent` is absent for multi-image mentions and when the
/// referent has been reduced out of the candidate set.
pub fn identify<T: Scalar>(
    corpus: &Corpus,
    dialogue: &Dialogue,
    mention_id: &str,
    description: &ReferentDescription,
    backend: &dyn EmbeddingBackend<T>,
    cache: &EmbeddingCache<T>,
    reduced: bool,
) -> Result<RetrievalResult<T>, RetrievalError> {
    let m = dialogue.find_mention(mention_id)?;
    let candidates = corpus.candidate_set_at(dialogue, mention_id, reduced)?;
    let a = encode_candidates(backend, &candidates, cache)?;
    let v = encode_text(backend, &description.text)?;
    let mut result = score_and_rank(&a, &v)?;
    result.mention_id = mention_id.to_string();
    if let Some(referent) = m.mention.single_referent() {
        result = result.resolve(mention_id, referent);
    }
    Ok(result)
}
