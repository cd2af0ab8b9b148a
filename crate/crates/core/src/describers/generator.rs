//! Adapters to the conversational referent description generator (CRDG).

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{description, DescribeError, DescriptionSource, ReferentDescription};
use crate::context::{MarkerConfig, SerializedSample, WindowName};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("{0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub sample_id: &'a str,
    pub prompt: &'a str,
}

/// Text-in, text-out generation.
pub trait GeneratorBackend: Send + Sync {
    fn generate(&self, request: GenerationRequest<'_>) -> Result<String, GeneratorError>;

    /// Backends that cannot serve concurrent calls return true.
    fn single_flight(&self) -> bool {
        false
    }
}

/// Returns the marked mention, for tests.
#[derive(Debug, Clone, Default)]
pub struct EchoGenerator {
    pub markers: MarkerConfig,
}

impl GeneratorBackend for EchoGenerator {
    fn generate(&self, request: GenerationRequest<'_>) -> Result<String, GeneratorError> {
        let p = request.prompt;
        let start = p
            .rfind(&self.markers.mention_begin)
            .map(|i| i + self.markers.mention_begin.len())
            .ok_or_else(|| GeneratorError::Fatal("prompt has no marked mention".into()))?;
        let len = p[start..]
            .find(&self.markers.mention_end)
            .ok_or_else(|| GeneratorError::Fatal("unterminated mention marker".into()))?;
        Ok(p[start..start + len].to_string())
    }
}

/// First line of a generation fixture file.
///
/// The fold tag names the held-out image set the generator was evaluated
/// on; the cross-validation runner refuses a file used for another fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureHeader {
    pub fold_id: String,
    pub window: WindowName,
    #[serde(default)]
    pub generator: String,
}

#[derive(Deserialize)]
struct FixtureLine {
    mention_id: String,
    text: String,
}

/// Stored generations keyed by mention id.
#[derive(Debug, Clone)]
pub struct FixtureGenerator {
    pub header: FixtureHeader,
    texts: HashMap<String, String>,
}

impl FixtureGenerator {
    pub fn new(header: FixtureHeader, texts: HashMap<String, String>) -> Self {
        FixtureGenerator { header, texts }
    }

    /// Reads `{header}` then one `{mention_id, text}` record per line.
    pub fn load(path: &Path) -> Result<Self, DescribeError> {
        let err = |message: String| DescribeError::Fixture {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| err("empty fixture file".into()))?;
        #[derive(Deserialize)]
        struct H {
            header: FixtureHeader,
        }
        let header = serde_json::from_str::<H>(first)
            .map_err(|e| err(format!("line 1: bad header: {e}")))?
            .header;
        let mut texts = HashMap::new();
        for (n, line) in lines {
            let r: FixtureLine =
                serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", n + 1)))?;
            texts.insert(r.mention_id, r.text);
        }
        Ok(FixtureGenerator { header, texts })
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }
}

impl GeneratorBackend for FixtureGenerator {
    fn generate(&self, request: GenerationRequest<'_>) -> Result<String, GeneratorError> {
        self.texts.get(request.sample_id).cloned().ok_or_else(|| {
            GeneratorError::Fatal(format!("no stored generation for {}", request.sample_id))
        })
    }
}

/// Client for a completion endpoint taking `{"prompt", "temperature"}` and
/// answering `{"text"}`. The bearer token, if any, is read from the named
/// environment variable on every call.
#[derive(Debug, Clone)]
pub struct HttpGenerator {
    pub endpoint: String,
    pub token_env: Option<String>,
    pub temperature: f32,
    pub timeout: Duration,
}

impl HttpGenerator {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpGenerator {
            endpoint: endpoint.into(),
            token_env: None,
            temperature: 0.0,
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Serialize)]
struct HttpRequest<'a> {
    prompt: &'a str,
    temperature: f32,
}

#[derive(Deserialize)]
struct HttpResponse {
    text: String,
}

impl GeneratorBackend for HttpGenerator {
    fn generate(&self, request: GenerationRequest<'_>) -> Result<String, GeneratorError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(&self.endpoint);
        if let Some(var) = &self.token_env {
            let token = std::env::var(var).map_err(|_| {
                GeneratorError::Fatal(format!("environment variable {var} not set"))
            })?;
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(HttpRequest {
                prompt: request.prompt,
                temperature: self.temperature,
            })
            .map_err(|e| match e {
                ureq::Error::StatusCode(code) if code < 500 && code != 429 => {
                    GeneratorError::Fatal(format!("HTTP {code}"))
                }
                other => GeneratorError::Transient(other.to_string()),
            })?;
        resp.body_mut()
            .read_json::<HttpResponse>()
            .map(|r| r.text)
            .map_err(|e| GeneratorError::Fatal(format!("bad response body: {e}")))
    }
}

/// Generates a description for an inference sample.
///
/// The end-of-description marker and anything after it are cut, and
/// surrounding whitespace is trimmed.
pub fn crdg_generate(
    sample: &SerializedSample,
    generator: &dyn GeneratorBackend,
    window: WindowName,
) -> Result<ReferentDescription, DescribeError> {
    if sample.completion.is_some() {
        return Err(DescribeError::HasCompletion(sample.mention_id.clone()));
    }
    let raw = generator
        .generate(GenerationRequest {
            sample_id: &sample.mention_id,
            prompt: &sample.prompt,
        })
        .map_err(|e| DescribeError::Backend {
            sample_id: sample.mention_id.clone(),
            retryable: matches!(e, GeneratorError::Transient(_)),
            message: e.to_string(),
        })?;
    let eod = &sample.marker_config.end_of_description;
    let text = match raw.find(eod.as_str()) {
        Some(i) if !eod.is_empty() => &raw[..i],
        _ => raw.as_str(),
    }
    .trim();
    if text.is_empty() {
        return Err(DescribeError::EmptyGeneration(sample.mention_id.clone()));
    }
    Ok(description(
        &sample.mention_id,
        text.to_string(),
        DescriptionSource::Crdg,
        window,
    ))
}

/// Runs [`crdg_generate`] over many samples with at most `max_in_flight`
/// concurrent backend calls. Results keep the input order.
pub fn generate_batch(
    samples: &[SerializedSample],
    generator: &dyn GeneratorBackend,
    window: WindowName,
    max_in_flight: usize,
) -> Vec<Result<ReferentDescription, DescribeError>> {
    let workers = if generator.single_flight() {
        1
    } else {
        max_in_flight.clamp(1, samples.len().max(1))
    };
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<ReferentDescription, DescribeError>>>> =
        samples.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(sample) = samples.get(i) else { break };
                let r = crdg_generate(sample, generator, window);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("slot lock")
                .expect("every slot filled")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{build_context, serialize_sample, ContextWindow};
    use crate::corpus::Corpus;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn sample(id: &str) -> SerializedSample {
        let c = Corpus::load(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/tests/fixtures/figure1.jsonl"
        ))
        .unwrap();
        let d = &c.dialogues[0];
        let ctx = build_context(d, id, ContextWindow::full()).unwrap();
        serialize_sample(&ctx, &d.task_instructions, &MarkerConfig::default(), None).unwrap()
    }

    struct Fixed(&'static str);

    impl GeneratorBackend for Fixed {
        fn generate(&self, _: GenerationRequest<'_>) -> Result<String, GeneratorError> {
            Ok(self.0.to_string())
        }
    }

    struct Flaky;

    impl GeneratorBackend for Flaky {
        fn generate(&self, _: GenerationRequest<'_>) -> Result<String, GeneratorError> {
            Err(GeneratorError::Transient("connection reset".into()))
        }
    }

    #[test]
    fn echo_returns_marked_mention() {
        let d = crdg_generate(&sample("f4"), &EchoGenerator::default(), WindowName::Full).unwrap();
        assert_eq!(d.text, "that red one");
        assert_eq!(d.source, DescriptionSource::Crdg);
    }

    #[test]
    fn strips_end_marker_and_whitespace() {
        let d = crdg_generate(
            &sample("f4"),
            &Fixed("  the shiny red apple<eod> junk"),
            WindowName::Full,
        )
        .unwrap();
        assert_eq!(d.text, "the shiny red apple");
    }

    #[test]
    fn empty_generation_is_an_error() {
        assert!(matches!(
            crdg_generate(&sample("f4"), &Fixed(""), WindowName::Full),
            Err(DescribeError::EmptyGeneration(_))
        ));
        assert!(matches!(
            crdg_generate(&sample("f4"), &Fixed(" <eod>"), WindowName::Full),
            Err(DescribeError::EmptyGeneration(_))
        ));
    }

    #[test]
    fn backend_failure_is_retryable_and_names_sample() {
        let err = crdg_generate(&sample("f3"), &Flaky, WindowName::Full).unwrap_err();
        assert!(err.is_retryable());
        assert!(err.to_string().contains("f3"));
    }

    #[test]
    fn training_samples_are_refused() {
        let mut s = sample("f4");
        s.completion = Some("x".into());
        assert!(crdg_generate(&s, &EchoGenerator::default(), WindowName::Full).is_err());
    }

    #[test]
    fn fixture_generator_looks_up_by_mention() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.jsonl");
        std::fs::write(
            &path,
            "{\"header\":{\"fold_id\":\"fruits\",\"window\":\"7\",\"generator\":\"gpt3\"}}\n{\"mention_id\":\"f4\",\"text\":\"the shiny red apple\"}\n",
        )
        .unwrap();
        let g = FixtureGenerator::load(&path).unwrap();
        assert_eq!(g.header.fold_id, "fruits");
        assert_eq!(g.header.window, WindowName::W7);
        let d = crdg_generate(&sample("f4"), &g, WindowName::W7).unwrap();
        assert_eq!(d.text, "the shiny red apple");
        assert!(crdg_generate(&sample("f3"), &g, WindowName::W7).is_err());
    }

    #[test]
    fn batch_keeps_order() {
        let samples: Vec<_> = ["f2", "f3", "f4", "f5"]
            .iter()
            .map(|id| sample(id))
            .collect();
        let out = generate_batch(&samples, &EchoGenerator::default(), WindowName::Full, 3);
        let texts: Vec<_> = out.into_iter().map(|r| r.unwrap().text).collect();
        assert_eq!(texts, ["apple", "the shiny one", "that red one", "it"]);
    }

    #[test]
    fn http_generator_posts_prompt() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line.trim().to_string();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
            assert!(req["prompt"]
                .as_str()
                .unwrap()
                .contains("<m>that red one</m>"));
            assert_eq!(req["temperature"], 0.0);
            let reply = r#"{"text":"the shiny red apple<eod>"}"#;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.len(),
                reply
            )
            .unwrap();
            auth
        });
        std::env::set_var("REFRES_TEST_GEN_TOKEN", "s3cret");
        let mut g = HttpGenerator::new(format!("http://{addr}/generate"));
        g.token_env = Some("REFRES_TEST_GEN_TOKEN".into());
        let d = crdg_generate(&sample("f4"), &g, WindowName::Full).unwrap();
        assert_eq!(d.text, "the shiny red apple");
        assert!(server.join().unwrap().ends_with("Bearer s3cret"));
    }
}
