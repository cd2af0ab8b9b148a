use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::scalar::Scalar;

const FORMAT: &str = "refres-embedding-cache";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    backend_id: String,
    key: String,
    vector: Vec<f64>,
}

/// Image embeddings keyed by `(backend_id, image_id)`.
///
/// Reads are concurrent; each insert takes the write lock. The file format
/// is a `{"format", "version"}` header line followed by one
/// `{backend_id, key, vector}` record per line, sorted by key.
#[derive(Debug, Default)]
pub struct EmbeddingCache<T> {
    entries: RwLock<HashMap<(String, String), Vec<T>>>,
}

impl<T: Scalar> EmbeddingCache<T> {
    pub fn new() -> Self {
        EmbeddingCache {
            entries: RwLock::new(HashMap::new()),
        }
    }

    pub fn get(&self, backend_id: &str, key: &str) -> Option<Vec<T>> {
        self.entries
            .read()
            .expect("cache lock")
            .get(&(backend_id.to_string(), key.to_string()))
            .cloned()
    }

    pub fn insert(&self, backend_id: &str, key: &str, vector: Vec<T>) {
        self.entries
            .write()
            .expect("cache lock")
            .insert((backend_id.to_string(), key.to_string()), vector);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reads a cache file; a missing file gives an empty cache.
    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let err = |message: String| RetrievalError::Cache {
            path: path.display().to_string(),
            message,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::new()),
            Err(e) => return Err(err(e.to_string())),
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let cache = Self::new();
        let Some(first) = lines.next() else {
            return Ok(cache);
        };
        let header: Header =
            serde_json::from_str(first).map_err(|e| err(format!("bad header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(err(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        for line in lines {
            let e: Entry = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            cache.insert(
                &e.backend_id,
                &e.key,
                e.vector.into_iter().map(T::of).collect(),
            );
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let err = |e: std::io::Error| RetrievalError::Cache {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let entries = self.entries.read().expect("cache lock");
        let sorted: BTreeMap<_, _> = entries.iter().collect();
        let mut w = BufWriter::new(File::create(path).map_err(err)?);
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
        };
        writeln!(
            w,
            "{}",
            serde_json::to_string(&header).expect("serializable")
        )
        .map_err(err)?;
        for ((backend_id, key), v) in sorted {
            let e = Entry {
                backend_id: backend_id.clone(),
                key: key.clone(),
                vector: v.iter().map(|x| x.as_f64()).collect(),
            };
            writeln!(w, "{}", serde_json::to_string(&e).expect("serializable")).map_err(err)?;
        }
        w.flush().map_err(err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let c = EmbeddingCache::<f64>::new();
        c.insert("clip", "img1", vec![0.25, -0.5]);
        c.insert("clip", "img0", vec![1.0, 0.0]);
        c.save(&path).unwrap();
        let back = EmbeddingCache::<f64>::load(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.get("clip", "img1"), Some(vec![0.25, -0.5]));
        assert_eq!(back.get("blip", "img1"), None);

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"format\":\"refres-embedding-cache\",\"version\":1}\n"));
        let img0 = text.find("img0").unwrap();
        assert!(img0 < text.find("img1").unwrap());
    }

    #[test]
    fn missing_file_is_empty_and_wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(EmbeddingCache::<f32>::load(&dir.path().join("none"))
            .unwrap()
            .is_empty());
        let path = dir.path().join("v9");
        std::fs::write(
            &path,
            "{\"format\":\"refres-embedding-cache\",\"version\":9}\n",
        )
        .unwrap();
        assert!(EmbeddingCache::<f32>::load(&path).is_err());
    }
}
