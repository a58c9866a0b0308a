#![allow(dead_code)]

pub mod oracles;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use iterative_retriever::{ExemplarStore, HashingEmbedder, IngestOptions, Record};

/// Minimal HTTP/1.1 server answering each POST with `handler(body)`.
/// Request bodies are recorded in arrival order.
pub struct FakeServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<String>>>,
}

impl FakeServer {
    pub fn start(handler: impl Fn(usize, &str) -> (u16, String) + Send + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut content_length = 0usize;
                let mut line = String::new();
                loop {
                    line.clear();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let trimmed = line.trim_end();
                    if trimmed.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = trimmed.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            content_length = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0u8; content_length];
                if reader.read_exact(&mut body).is_err() {
                    continue;
                }
                let body = String::from_utf8_lossy(&body).into_owned();
                let index = {
                    let mut log = log.lock().unwrap();
                    log.push(body.clone());
                    log.len() - 1
                };
                let (status, reply) = handler(index, &body);
                let response = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                    reply.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        Self { url, requests }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

/// Store over `n` short records embedded with the hashing embedder.
pub fn small_store(n: usize, dim: usize) -> ExemplarStore {
    let records: Vec<Record> = (0..n)
        .map(|i| Record::new(format!("request {i} about topic {}", i % 7), format!("(Intent{} :x {})", i % 5, i)))
        .collect();
    let emb = HashingEmbedder::new(dim, 0).unwrap();
    ExemplarStore::ingest(records, &emb, IngestOptions::default()).unwrap()
}

pub const STAFF_MEETING_PARSE: &str = r#"(Yield
  :output (Event.start
    :obj (FindNumNextEvent
      :constraint (Event.subject_?
        :obj (?~= "staff meeting"))
      :number 1L)))"#;

pub const STAFF_MEETING_TRIPLES: [&str; 11] = [
    "instance($0, Yield)",
    "output($0, $1)",
    "instance($1, Event.start)",
    "obj($1, $2)",
    "instance($2, FindNumNextEvent)",
    "constraint($2, $3)",
    "instance($3, Event.subject_?)",
    "obj($3, $4)",
    "instance($4, ?~=)",
    "ARG0($4, \"staff meeting\")",
    "number($2, 1L)",
];
