use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Image;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
    #[error("cannot read image {image_id}: {message}")]
    UnreadableImage { image_id: String, message: String },
    #[error("no planted vector for {0:?}")]
    UnknownKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub encode_text: bool,
    pub encode_image: bool,
}

/// Text and image encoders of a vision-language model, or a stand-in.
///
/// Implementations return raw vectors; [`super::encode_text`] and
/// [`super::encode_candidates`] apply normalization when
/// [`EmbeddingBackend::normalizes`] is set.
pub trait EmbeddingBackend<T: Scalar>: Send + Sync {
    fn backend_id(&self) -> &str;

    fn dimension(&self) -> usize;

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            encode_text: true,
            encode_image: true,
        }
    }

    /// Same input, same output.
    fn deterministic(&self) -> bool {
        true
    }

    fn normalizes(&self) -> bool {
        true
    }

    fn embed_text(&self, text: &str) -> Result<Vec<T>, BackendError>;

    fn embed_image(&self, image: &Image) -> Result<Vec<T>, BackendError>;
}

/// Pseudo-random vectors derived from a hash of the input.
///
/// Texts and images live in separate key spaces, so the backend carries no
/// signal; it exists to exercise the pipeline deterministically.
#[derive(Debug, Clone)]
pub struct HashBackend {
    id: String,
    dimension: usize,
    seed: u64,
}

impl HashBackend {
    pub fn new(dimension: usize, seed: u64) -> Self {
        HashBackend {
            id: format!("hash-{dimension}-{seed}"),
            dimension,
            seed,
        }
    }

    fn vector<T: Scalar>(&self, kind: &str, key: &str) -> Vec<T> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(kind.as_bytes());
        h.update([0]);
        h.update(key.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dimension)
            .map(|_| T::of(rng.random_range(-1.0..1.0)))
            .collect()
    }
}

impl<T: Scalar> EmbeddingBackend<T> for HashBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<Vec<T>, BackendError> {
        Ok(self.vector("text", text))
    }

    fn embed_image(&self, image: &Image) -> Result<Vec<T>, BackendError> {
        Ok(self.vector("image", &image.image_id))
    }
}

/// One line of a planted-vector fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRecord {
    /// `"text"` keys are descriptions, `"image"` keys are image ids.
    #[serde(default = "text_kind")]
    pub kind: String,
    pub key: String,
    pub vector: Vec<f64>,
}

fn text_kind() -> String {
    "text".into()
}

/// Lookup table of fixed vectors for texts and images.
#[derive(Debug, Clone)]
pub struct PlantedBackend<T> {
    id: String,
    dimension: usize,
    texts: HashMap<String, Vec<T>>,
    images: HashMap<String, Vec<T>>,
}

impl<T: Scalar> PlantedBackend<T> {
    pub fn new(id: impl Into<String>, dimension: usize) -> Self {
        PlantedBackend {
            id: id.into(),
            dimension,
            texts: HashMap::new(),
            images: HashMap::new(),
        }
    }

    pub fn plant_text(&mut self, text: impl Into<String>, v: Vec<T>) {
        self.texts.insert(text.into(), v);
    }

    pub fn plant_image(&mut self, image_id: impl Into<String>, v: Vec<T>) {
        self.images.insert(image_id.into(), v);
    }

    pub fn records(&self) -> Vec<PlantedRecord> {
        let mut out: Vec<PlantedRecord> = self
            .texts
            .iter()
            .map(|(k, v)| ("text", k, v))
            .chain(self.images.iter().map(|(k, v)| ("image", k, v)))
            .map(|(kind, k, v)| PlantedRecord {
                kind: kind.into(),
                key: k.clone(),
                vector: v.iter().map(|x| x.as_f64()).collect(),
            })
            .collect();
        out.sort_by(|a, b| (&a.kind, &a.key).cmp(&(&b.kind, &b.key)));
        out
    }

    pub fn from_records(
        id: impl Into<String>,
        records: impl IntoIterator<Item = PlantedRecord>,
    ) -> Result<Self, BackendError> {
        let mut b = PlantedBackend::new(id, 0);
        for r in records {
            if b.dimension == 0 {
                b.dimension = r.vector.len();
            } else if r.vector.len() != b.dimension {
                return Err(BackendError::Fatal(format!(
                    "vector for {:?} has dimension {}, expected {}",
                    r.key,
                    r.vector.len(),
                    b.dimension
                )));
            }
            let v = r.vector.into_iter().map(T::of).collect();
            match r.kind.as_str() {
                "text" => b.plant_text(r.key, v),
                "image" => b.plant_image(r.key, v),
                other => {
                    return Err(BackendError::Fatal(format!(
                        "unknown record kind {other:?}"
                    )))
                }
            }
        }
        Ok(b)
    }

    pub fn load(id: impl Into<String>, path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Fatal(format!("{}: {e}", path.display())))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, l)| {
                serde_json::from_str(l).map_err(|e| {
                    BackendError::Fatal(format!("{} line {}: {e}", path.display(), n + 1))
                })
            })
            .collect::<Result<Vec<PlantedRecord>, _>>()?;
        Self::from_records(id, records)
    }
}

impl<T: Scalar> EmbeddingBackend<T> for PlantedBackend<T> {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<Vec<T>, BackendError> {
        self.texts
            .get(text)
            .cloned()
            .ok_or_else(|| BackendError::UnknownKey(text.to_string()))
    }

    fn embed_image(&self, image: &Image) -> Result<Vec<T>, BackendError> {
        self.images
            .get(&image.image_id)
            .cloned()
            .ok_or_else(|| BackendError::UnreadableImage {
                image_id: image.image_id.clone(),
                message: "no planted vector".into(),
            })
    }
}

/// Client for an encoder service answering `{"text"}` or `{"image_uri"}`
/// with `{"vector"}`.
#[derive(Debug, Clone)]
pub struct HttpEmbeddingBackend {
    pub id: String,
    pub endpoint: String,
    pub dimension: usize,
    pub token_env: Option<String>,
    pub normalize: bool,
    pub timeout: Duration,
}

impl HttpEmbeddingBackend {
    pub fn new(id: impl Into<String>, endpoint: impl Into<String>, dimension: usize) -> Self {
        HttpEmbeddingBackend {
            id: id.into(),
            endpoint: endpoint.into(),
            dimension,
            token_env: None,
            normalize: true,
            timeout: Duration::from_secs(30),
        }
    }

    fn call(&self, body: serde_json::Value) -> Result<Vec<f64>, BackendError> {
        #[derive(Deserialize)]
        struct Reply {
            vector: Vec<f64>,
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(&self.endpoint);
        if let Some(var) = &self.token_env {
            let token = std::env::var(var)
                .map_err(|_| BackendError::Fatal(format!("environment variable {var} not set")))?;
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::StatusCode(code) if code < 500 && code != 429 => {
                BackendError::Fatal(format!("HTTP {code}"))
            }
            other => BackendError::Transient(other.to_string()),
        })?;
        resp.body_mut()
            .read_json::<Reply>()
            .map(|r| r.vector)
            .map_err(|e| BackendError::Fatal(format!("bad response body: {e}")))
    }
}

impl<T: Scalar> EmbeddingBackend<T> for HttpEmbeddingBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn normalizes(&self) -> bool {
        self.normalize
    }

    fn embed_text(&self, text: &str) -> Result<Vec<T>, BackendError> {
        let v = self.call(serde_json::json!({ "text": text }))?;
        Ok(v.into_iter().map(T::of).collect())
    }

    fn embed_image(&self, image: &Image) -> Result<Vec<T>, BackendError> {
        let v = self
            .call(serde_json::json!({ "image_uri": image.uri }))
            .map_err(|e| match e {
                BackendError::Fatal(message) => BackendError::UnreadableImage {
                    image_id: image.image_id.clone(),
                    message,
                },
                other => other,
            })?;
        Ok(v.into_iter().map(T::of).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{encode_text, RetrievalError};

    #[test]
    fn hash_backend_is_stable_unit_vectors() {
        let b = HashBackend::new(32, 1);
        let x = encode_text::<f64>(&b, "abc").unwrap();
        let y = encode_text::<f64>(&b, "abc").unwrap();
        assert_eq!(x, y);
        assert!(x.is_normalized());
        let n: f64 = x.vector().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert_ne!(x, encode_text::<f64>(&b, "abd").unwrap());
        assert_ne!(
            x.vector(),
            encode_text::<f64>(&HashBackend::new(32, 2), "abc")
                .unwrap()
                .vector()
        );
    }

    #[test]
    fn hash_backend_works_in_f32() {
        let b = HashBackend::new(8, 3);
        let x = encode_text::<f32>(&b, "the red apple").unwrap();
        assert_eq!(x.dimension(), 8);
    }

    #[test]
    fn empty_text_is_rejected() {
        let b = HashBackend::new(4, 0);
        assert!(matches!(
            encode_text::<f64>(&b, ""),
            Err(RetrievalError::EmptyText)
        ));
        assert!(matches!(
            encode_text::<f64>(&b, "  "),
            Err(RetrievalError::EmptyText)
        ));
    }

    #[test]
    fn planted_backend_looks_up_keys() {
        let mut b = PlantedBackend::<f64>::new("planted", 2);
        b.plant_text("the red apple", vec![0.0, 1.0]);
        let v = encode_text(&b, "the red apple").unwrap();
        assert_eq!(v.vector(), &[0.0, 1.0]);
        assert!(encode_text(&b, "the pear").is_err());

        let again = PlantedBackend::<f64>::from_records("planted", b.records()).unwrap();
        assert_eq!(encode_text(&again, "the red apple").unwrap(), v);
    }

    #[test]
    fn planted_records_must_agree_on_dimension() {
        let recs = vec![
            PlantedRecord {
                kind: "text".into(),
                key: "a".into(),
                vector: vec![1.0],
            },
            PlantedRecord {
                kind: "image".into(),
                key: "b".into(),
                vector: vec![1.0, 0.0],
            },
        ];
        assert!(PlantedBackend::<f64>::from_records("p", recs).is_err());
    }
}
