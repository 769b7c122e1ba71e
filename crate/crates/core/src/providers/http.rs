//! JSON-over-HTTP clients for OpenAI-style inference servers.
//!
//! | capability | route               | request                                        | response                                    |
//! |------------|---------------------|------------------------------------------------|---------------------------------------------|
//! | generation | `/chat/completions` | `{model, messages:[{role,content}], temperature, max_tokens, stop}` | `{choices:[{message:{content}}]}` |
//! | embeddings | `/embeddings`       | `{model, input:[texts]}`                       | `{data:[{embedding:[floats]}]}`             |
//! | rerank     | `/rerank`           | `{model, query, documents:[texts]}`            | `{results:[{index, relevance_score}]}`      |
//!
//! The endpoint is a base URL; the route is appended unless the URL already
//! ends with it. A bearer token is sent when `MEDRAG_<KIND>_API_KEY` is set.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    truncate_at_stop, EmbedItem, Embedder, GenerationParams, Generator, InFlight, ProviderError,
    ProviderSpec, Reranker, RetryPolicy,
};

struct Client {
    agent: ureq::Agent,
    url: String,
    model: String,
    token: Option<String>,
    timeout_ms: u64,
    retry: RetryPolicy,
    gate: InFlight,
}

impl Client {
    fn new(spec: &ProviderSpec, base: String, route: &str, token: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(spec.timeout_ms)))
            .http_status_as_error(false)
            .build();
        let base = base.trim_end_matches('/').to_string();
        let url = if base.ends_with(route) {
            base
        } else {
            format!("{base}{route}")
        };
        Self {
            agent: ureq::Agent::new_with_config(config),
            url,
            model: spec.model_tag.clone(),
            token,
            timeout_ms: spec.timeout_ms,
            retry: spec.retry,
            gate: InFlight::new(spec.max_in_flight),
        }
    }

    fn post<T: DeserializeOwned>(&self, body: &serde_json::Value) -> Result<T, ProviderError> {
        let mut attempt = 0;
        loop {
            let result = {
                let _slot = self.gate.acquire();
                self.post_once(body)
            };
            match result {
                Err(e) if e.is_transient() && attempt < self.retry.count => {
                    let wait = self.retry.backoff_ms.saturating_mul(1 << attempt.min(16));
                    log::warn!("{} failed ({e}); retrying in {wait} ms", self.url);
                    std::thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn post_once<T: DeserializeOwned>(&self, body: &serde_json::Value) -> Result<T, ProviderError> {
        let mut req = self.agent.post(&self.url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(|e| self.map_err(e))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ProviderError::Http {
                endpoint: self.url.clone(),
                status,
                body: text,
            });
        }
        resp.body_mut().read_json::<T>().map_err(|e| match e {
            ureq::Error::Timeout(_) => self.map_err(e),
            other => ProviderError::Protocol(format!("{}: {other}", self.url)),
        })
    }

    fn map_err(&self, e: ureq::Error) -> ProviderError {
        match e {
            ureq::Error::Timeout(_) => ProviderError::Timeout {
                endpoint: self.url.clone(),
                ms: self.timeout_ms,
            },
            ureq::Error::StatusCode(status) => ProviderError::Http {
                endpoint: self.url.clone(),
                status,
                body: String::new(),
            },
            other => ProviderError::Unreachable {
                endpoint: self.url.clone(),
                msg: other.to_string(),
            },
        }
    }
}

pub struct HttpEmbedder {
    client: Client,
    max_batch: usize,
}

impl HttpEmbedder {
    pub fn new(spec: &ProviderSpec, base: String, token: Option<String>) -> Self {
        Self {
            client: Client::new(spec, base, "/embeddings", token),
            max_batch: spec.max_batch,
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
    #[serde(default)]
    index: Option<usize>,
}

impl Embedder for HttpEmbedder {
    fn tag(&self) -> &str {
        &self.client.model
    }

    fn embed(&self, items: &[EmbedItem<'_>]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let input: Vec<&str> = items.iter().map(|i| i.text).collect();
        let resp: EmbeddingResponse = self
            .client
            .post(&json!({ "model": self.client.model, "input": input }))?;
        if resp.data.len() != items.len() {
            return Err(ProviderError::Protocol(format!(
                "{} embeddings for {} inputs",
                resp.data.len(),
                items.len()
            )));
        }
        let mut data = resp.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }
}

pub struct HttpGenerator {
    client: Client,
}

impl HttpGenerator {
    pub fn new(spec: &ProviderSpec, base: String, token: Option<String>) -> Self {
        Self {
            client: Client::new(spec, base, "/chat/completions", token),
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatContent,
}

#[derive(Deserialize)]
struct ChatContent {
    #[serde(default)]
    content: Option<String>,
}

impl Generator for HttpGenerator {
    fn tag(&self) -> &str {
        &self.client.model
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.client.model,
            "messages": [ChatMessage { role: "user", content: prompt }],
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
            "stop": params.stop_sequences,
        });
        let resp: ChatResponse = self.client.post(&body)?;
        let text = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Protocol("response has no choices".into()))?;
        Ok(truncate_at_stop(&text, &params.stop_sequences).to_string())
    }
}

pub struct HttpReranker {
    client: Client,
}

impl HttpReranker {
    pub fn new(spec: &ProviderSpec, base: String, token: Option<String>) -> Self {
        Self {
            client: Client::new(spec, base, "/rerank", token),
        }
    }
}

#[derive(Deserialize)]
struct RerankResponse {
    results: Vec<RerankResult>,
}

#[derive(Deserialize)]
struct RerankResult {
    index: usize,
    relevance_score: f64,
}

impl Reranker for HttpReranker {
    fn tag(&self) -> &str {
        &self.client.model
    }

    fn score(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, ProviderError> {
        let resp: RerankResponse = self
            .client
            .post(&json!({ "model": self.client.model, "query": query, "documents": passages }))?;
        let mut scores = vec![None; passages.len()];
        for r in resp.results {
            let slot = scores.get_mut(r.index).ok_or_else(|| {
                ProviderError::Protocol(format!("rerank index {} out of range", r.index))
            })?;
            *slot = Some(r.relevance_score);
        }
        scores
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| {
                    ProviderError::Protocol(format!("no rerank score for document {i}"))
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    use super::*;
    use crate::providers::ProviderKind;

    /// Serves `replies` (status, body) in order and forwards each request
    /// body to the returned channel.
    fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<(String, serde_json::Value)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let mut len = 0;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    if h.trim().is_empty() {
                        break;
                    }
                    if let Some(v) = h.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let path = request_line
                    .split_whitespace()
                    .nth(1)
                    .unwrap_or("")
                    .to_string();
                tx.send((path, serde_json::from_slice(&buf).unwrap_or_default()))
                    .ok();
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), rx)
    }

    fn spec(kind: ProviderKind) -> ProviderSpec {
        let mut s = ProviderSpec::new(kind, "http://unused", "test-model");
        s.retry = RetryPolicy {
            count: 0,
            backoff_ms: 1,
        };
        s.timeout_ms = 2_000;
        s
    }

    #[test]
    fn chat_completion_round_trip() {
        let (url, rx) = serve(vec![(
            200,
            r#"{"choices":[{"message":{"role":"assistant","content":"Answer: C\nSTOP tail"}}]}"#
                .into(),
        )]);
        let g = HttpGenerator::new(&spec(ProviderKind::Generator), url, None);
        let params = GenerationParams {
            stop_sequences: vec!["STOP".into()],
            ..GenerationParams::default()
        };
        assert_eq!(g.generate("Q?", &params).unwrap(), "Answer: C\n");
        let (path, body) = rx.recv().unwrap();
        assert_eq!(path, "/v1/chat/completions");
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["messages"][0]["content"], "Q?");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 512);
        assert_eq!(body["stop"][0], "STOP");
    }

    #[test]
    fn embeddings_round_trip() {
        let (url, rx) = serve(vec![(
            200,
            r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#
                .into(),
        )]);
        let e = HttpEmbedder::new(&spec(ProviderKind::Embedding), url, None);
        let out = e
            .embed(&[EmbedItem::text("a"), EmbedItem::text("b")])
            .unwrap();
        assert_eq!(out, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (path, body) = rx.recv().unwrap();
        assert_eq!(path, "/v1/embeddings");
        assert_eq!(body["input"], json!(["a", "b"]));
    }

    #[test]
    fn rerank_round_trip() {
        let (url, rx) = serve(vec![(
            200,
            r#"{"results":[{"index":1,"relevance_score":0.9},{"index":0,"relevance_score":0.1}]}"#
                .into(),
        )]);
        let r = HttpReranker::new(&spec(ProviderKind::Reranker), url, None);
        assert_eq!(r.score("q", &["x", "y"]).unwrap(), vec![0.1, 0.9]);
        let (path, body) = rx.recv().unwrap();
        assert_eq!(path, "/v1/rerank");
        assert_eq!(body["documents"], json!(["x", "y"]));
    }

    #[test]
    fn server_error_is_retried() {
        let (url, _rx) = serve(vec![
            (503, r#"{"error":"busy"}"#.into()),
            (200, r#"{"choices":[{"message":{"content":"B"}}]}"#.into()),
        ]);
        let mut s = spec(ProviderKind::Generator);
        s.retry = RetryPolicy {
            count: 1,
            backoff_ms: 1,
        };
        let g = HttpGenerator::new(&s, url, None);
        assert_eq!(g.generate("p", &GenerationParams::default()).unwrap(), "B");
    }

    #[test]
    fn client_error_surfaces_status() {
        let (url, _rx) = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
        let g = HttpGenerator::new(&spec(ProviderKind::Generator), url, None);
        let err = g.generate("p", &GenerationParams::default()).unwrap_err();
        assert!(
            matches!(err, ProviderError::Http { status: 400, .. }),
            "{err}"
        );
    }

    #[test]
    fn unreachable_endpoint() {
        // bind then drop to get a port with nothing listening
        let port = TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let g = HttpGenerator::new(
            &spec(ProviderKind::Generator),
            format!("http://127.0.0.1:{port}"),
            None,
        );
        let err = g.generate("p", &GenerationParams::default()).unwrap_err();
        assert!(
            matches!(
                err,
                ProviderError::Unreachable { .. } | ProviderError::Timeout { .. }
            ),
            "{err}"
        );
    }

    #[test]
    fn slow_server_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (_s, _) = listener.accept().unwrap();
            std::thread::sleep(Duration::from_millis(1500));
        });
        let mut s = spec(ProviderKind::Generator);
        s.timeout_ms = 200;
        let g = HttpGenerator::new(&s, format!("http://{addr}"), None);
        let err = g.generate("p", &GenerationParams::default()).unwrap_err();
        assert!(matches!(err, ProviderError::Timeout { .. }), "{err}");
    }
}
