//! In-repo HTTP mock serving the generation and scorer contracts, used by
//! offline tests and the `serve-mock` subcommand.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use anyhow::Result;

use crate::gateway::{GenerationBackend, MockGenerationBackend};
use procforge_core::gateway::GenerationRequest;
use procforge_core::verifier::toy_step_prob;

pub struct MockServer {
    pub addr: SocketAddr,
    shutdown: Arc<std::sync::atomic::AtomicBool>,
    handle: Option<JoinHandle<()>>,
    server: Arc<tiny_http::Server>,
}

#[derive(serde::Deserialize)]
struct ScoreBody {
    #[serde(default)]
    #[allow(dead_code)]
    prompt: String,
    steps: Vec<String>,
}

fn handle_request(mut request: tiny_http::Request, backend: &MockGenerationBackend) {
    let mut body = String::new();
    let _ = request.as_reader().read_to_string(&mut body);
    let url = request.url().to_string();
    let (code, reply) = match url.as_str() {
        "/generate" => match serde_json::from_str::<GenerationRequest>(&body) {
            Ok(gen_request) => match backend.generate(&gen_request) {
                Ok(reply) => (200, serde_json::to_string(&reply).unwrap()),
                Err(e) => (500, format!("{{\"error\": \"{e}\"}}")),
            },
            Err(e) => (400, format!("{{\"error\": \"bad request: {e}\"}}")),
        },
        "/score" => match serde_json::from_str::<ScoreBody>(&body) {
            Ok(score) => {
                let probs: Vec<f64> = score.steps.iter().map(|s| toy_step_prob(s)).collect();
                (
                    200,
                    serde_json::to_string(&serde_json::json!({ "p_correct": probs })).unwrap(),
                )
            }
            Err(e) => (400, format!("{{\"error\": \"bad request: {e}\"}}")),
        },
        _ => (404, "{\"error\": \"unknown endpoint\"}".to_string()),
    };
    let response = tiny_http::Response::from_string(reply)
        .with_status_code(code)
        .with_header(
            tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap(),
        );
    let _ = request.respond(response);
}

impl MockServer {
    /// Bind on 127.0.0.1 (port 0 picks a free one) and serve until dropped.
    pub fn start(backend: MockGenerationBackend, port: u16) -> Result<Self> {
        let server = Arc::new(
            tiny_http::Server::http(("127.0.0.1", port))
                .map_err(|e| anyhow::anyhow!("bind mock server: {e}"))?,
        );
        let addr = match server.server_addr() {
            tiny_http::ListenAddr::IP(addr) => addr,
            other => anyhow::bail!("unexpected listen address {other:?}"),
        };
        let shutdown = Arc::new(std::sync::atomic::AtomicBool::new(false));
        let backend = Arc::new(backend);
        let handle = {
            let server = Arc::clone(&server);
            let shutdown = Arc::clone(&shutdown);
            let backend = Arc::clone(&backend);
            std::thread::spawn(move || {
                while !shutdown.load(std::sync::atomic::Ordering::SeqCst) {
                    match server.recv_timeout(std::time::Duration::from_millis(50)) {
                        Ok(Some(request)) => handle_request(request, &backend),
                        Ok(None) => {}
                        Err(_) => break,
                    }
                }
            })
        };
        Ok(MockServer {
            addr,
            shutdown,
            handle: Some(handle),
            server,
        })
    }

    pub fn generate_url(&self) -> String {
        format!("http://{}/generate", self.addr)
    }

    pub fn score_url(&self) -> String {
        format!("http://{}/score", self.addr)
    }

    /// Serve on the calling thread until interrupted (CLI mode).
    pub fn run_blocking(&self, backend: &MockGenerationBackend) {
        loop {
            if crate::backend::interrupted() {
                break;
            }
            match self.server.recv_timeout(std::time::Duration::from_millis(100)) {
                Ok(Some(request)) => handle_request(request, backend),
                Ok(None) => {}
                Err(_) => break,
            }
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown
            .store(true, std::sync::atomic::Ordering::SeqCst);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{HttpGenerationBackend, MockGenerationRule, RawSample};
    use crate::scorer::{HttpScorer, StepScorer};

    fn sample_backend() -> MockGenerationBackend {
        MockGenerationBackend::new(vec![MockGenerationRule {
            match_substring: "*".into(),
            samples: vec![RawSample {
                text: "theorem t : 1 = 1 := rfl".into(),
                logprob: Some(-0.5),
            }],
        }])
    }

    #[test]
    fn http_generate_round_trip() {
        let server = MockServer::start(sample_backend(), 0).unwrap();
        let client = HttpGenerationBackend::new(&server.generate_url());
        let reply = client
            .generate(&GenerationRequest {
                prompt: "anything".into(),
                n: 1,
                temperature: 0.7,
                max_tokens: 128,
            })
            .unwrap();
        assert_eq!(reply.samples.len(), 1);
        assert!(reply.samples[0].text.contains("theorem"));
    }

    #[test]
    fn http_score_round_trip_matches_local_toy() {
        let server = MockServer::start(sample_backend(), 0).unwrap();
        let scorer = HttpScorer::new(&server.score_url());
        let steps = vec!["rfl".to_string(), "unknown_tactic foo".to_string()];
        let remote = scorer.score("prompt", &steps).unwrap();
        let local: Vec<f64> = steps.iter().map(|s| toy_step_prob(s)).collect();
        assert_eq!(remote, local);
    }

    #[test]
    fn prompt_wrapper_is_applied_before_the_request_leaves() {
        // the mock rule only matches the wrapper text, so a hit proves the
        // prompt was wrapped on the way out
        let backend = MockGenerationBackend::new(vec![MockGenerationRule {
            match_substring: "[INST]".into(),
            samples: vec![RawSample {
                text: "theorem wrapped : 1 = 1 := rfl".into(),
                logprob: None,
            }],
        }]);
        let server = MockServer::start(backend, 0).unwrap();
        let client = HttpGenerationBackend::new(&server.generate_url())
            .with_wrapper(Some("[INST] {prompt} [/INST]".into()));
        let reply = client
            .generate(&GenerationRequest {
                prompt: "plain words".into(),
                n: 1,
                temperature: 0.7,
                max_tokens: 64,
            })
            .unwrap();
        assert_eq!(reply.samples.len(), 1);
        assert!(reply.samples[0].text.contains("wrapped"));
    }

    #[test]
    fn unreachable_backend_reports_unavailable_with_retries() {
        let client = HttpGenerationBackend::new("http://127.0.0.1:1/generate");
        let err = client
            .generate(&GenerationRequest {
                prompt: "x".into(),
                n: 1,
                temperature: 0.7,
                max_tokens: 16,
            })
            .unwrap_err();
        let text = err.to_string();
        assert!(text.contains("unavailable"), "{text}");
        assert!(text.contains("retries"), "{text}");
    }
}
