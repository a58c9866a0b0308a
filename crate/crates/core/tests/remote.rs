mod common;

use std::time::Duration;

use common::FakeServer;
use iterative_retriever::encoder::RemoteEmbedder;
use iterative_retriever::environment::{Prompt, RemoteLmEnv};
use iterative_retriever::{Embedder, Error, LmEnvironment};
use serde_json::{json, Value};

const TIMEOUT: Duration = Duration::from_secs(5);

fn body(server: &FakeServer, i: usize) -> Value {
    serde_json::from_str(&server.requests.lock().unwrap()[i]).unwrap()
}

#[test]
fn embedder_posts_texts_and_reads_vectors() {
    let server = FakeServer::start(|_, body| {
        let req: Value = serde_json::from_str(body).unwrap();
        let n = req["texts"].as_array().unwrap().len();
        let vectors: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, 1.0, 0.0]).collect();
        (200, json!({ "vectors": vectors }).to_string())
    });
    let emb = RemoteEmbedder::new(server.url.clone(), 3, TIMEOUT).unwrap();
    let got = emb.embed_batch(&["first", "second"]).unwrap();
    assert_eq!(got, vec![vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0]]);
    assert_eq!(body(&server, 0), json!({ "texts": ["first", "second"] }));
}

#[test]
fn embedder_rejects_the_wrong_dimension_as_a_config_error() {
    let server = FakeServer::start(|_, _| (200, json!({ "vectors": [[1.0, 2.0]] }).to_string()));
    let emb = RemoteEmbedder::new(server.url.clone(), 3, TIMEOUT).unwrap();
    let err = emb.embed("x").unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("dimension 2")), "{err}");
}

#[test]
fn server_errors_are_retried_until_success() {
    let server = FakeServer::start(|i, _| {
        if i == 0 {
            (500, "busy".into())
        } else {
            (200, json!({ "vectors": [[0.5]] }).to_string())
        }
    });
    let emb = RemoteEmbedder::new(server.url.clone(), 1, TIMEOUT).unwrap();
    assert_eq!(emb.embed("x").unwrap(), vec![0.5]);
    assert_eq!(server.request_count(), 2);
}

#[test]
fn persistent_server_errors_report_the_attempt_count() {
    let server = FakeServer::start(|_, _| (503, "down".into()));
    let env = RemoteLmEnv::new(server.url.clone(), "m", TIMEOUT).with_max_attempts(2);
    let err = env.score(&Prompt { text: "P".into() }, "(f)").unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 2, .. }), "{err}");
    assert_eq!(server.request_count(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let server = FakeServer::start(|_, _| (400, json!({ "error": "bad model" }).to_string()));
    let env = RemoteLmEnv::new(server.url.clone(), "m", TIMEOUT);
    let err = env.score(&Prompt { text: "P".into() }, "(f)").unwrap_err();
    assert!(matches!(err, Error::Provider { ref payload } if payload.contains("bad model")), "{err}");
    assert_eq!(server.request_count(), 1);
}

#[test]
fn scoring_sums_logprobs_past_the_prompt() {
    // "Q:" is 2 characters; the reference " (f)" starts at offset 2.
    let server = FakeServer::start(|_, _| {
        let reply = json!({
            "choices": [{
                "text": "Q: (f)",
                "logprobs": {
                    "token_logprobs": [null, -0.5, -0.25, -0.125],
                    "text_offset": [0, 1, 2, 4]
                }
            }]
        });
        (200, reply.to_string())
    });
    let env = RemoteLmEnv::new(server.url.clone(), "lm", TIMEOUT);
    let score = env.score(&Prompt { text: "Q:".into() }, "(f)").unwrap();
    assert_eq!(score.tokens, 2);
    assert!((score.log_prob + 0.375).abs() < 1e-12);
    let req = body(&server, 0);
    assert_eq!(req["prompt"], "Q: (f)");
    assert_eq!(req["model"], "lm");
    assert_eq!(req["max_tokens"], 0);
    assert_eq!(req["echo"], true);
}

#[test]
fn generation_ranks_beams_by_total_logprob() {
    let server = FakeServer::start(|_, _| {
        let choice = |text: &str, lps: &[f64]| json!({ "text": text, "logprobs": { "token_logprobs": lps } });
        let reply = json!({ "choices": [choice(" (a)", &[-2.0, -1.0]), choice(" (b)", &[-0.5]), choice(" (c)", &[-0.1, -0.1])] });
        (200, reply.to_string())
    });
    let env = RemoteLmEnv::new(server.url.clone(), "lm", TIMEOUT);
    let hyps = env.generate(&Prompt { text: "Q:".into() }, 2).unwrap();
    let texts: Vec<&str> = hyps.iter().map(|h| h.text.as_str()).collect();
    assert_eq!(texts, ["(c)", "(b)"]);
    let req = body(&server, 0);
    assert_eq!(req["n"], 2);
    assert_eq!(req["use_beam_search"], true);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let env = RemoteLmEnv::new("http://127.0.0.1:9/v1", "m", Duration::from_millis(500)).with_max_attempts(1);
    let err = env.score(&Prompt { text: "P".into() }, "(f)").unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 1, .. }), "{err}");
}
