//! Shared support for the integration and acceptance suites: a deterministic
//! RNG, random alignment instances with an independent fixpoint oracle, and
//! a minimal chat-completions stub server.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_gg-explore")
}

/// splitmix64: deterministic, dependency-free randomness for generators.
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform value in `0..bound` (bound must be non-zero).
    pub fn below(&mut self, bound: usize) -> usize {
        (self.next_u64() % bound as u64) as usize
    }

    pub fn chance(&mut self, numerator: u64, denominator: u64) -> bool {
        self.next_u64() % denominator < numerator
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            items.swap(i, self.below(i + 1));
        }
    }
}

/// A randomly generated alignment problem, kept as plain strings so the
/// oracle stays independent of the library's types and indexes.
#[derive(Debug, Clone)]
pub struct RawInstance {
    /// Knowledge triples (subject, relation, object).
    pub triples: Vec<(String, String, String)>,
    /// Guidance edges (head clue, label, tail clue).
    pub gg_edges: Vec<(String, String, String)>,
    /// Edge index -> required relation for grounded edges.
    pub grounds: BTreeMap<usize, String>,
    /// Initial clue mapping.
    pub initial: BTreeMap<String, BTreeSet<String>>,
    /// All clue node ids, mapped or not.
    pub clue_ids: Vec<String>,
}

/// Random instance within the acceptance bounds: at most 25 entities,
/// 60 triples and 5 clue nodes, with a random partial initial mapping.
pub fn random_instance(seed: u64) -> RawInstance {
    let mut rng = SplitMix64(seed.wrapping_mul(0x5851_f42d_4c95_7f2d).wrapping_add(11));

    let entity_count = 4 + rng.below(22); // 4..=25
    let entities: Vec<String> = (0..entity_count).map(|i| format!("e{i}")).collect();
    let relations: Vec<String> = (0..5).map(|i| format!("r{i}")).collect();

    let triple_count = 3 + rng.below(58); // 3..=60
    let mut triples = Vec::new();
    for _ in 0..triple_count {
        let s = entities[rng.below(entity_count)].clone();
        let o = entities[rng.below(entity_count)].clone();
        let r = relations[rng.below(relations.len())].clone();
        triples.push((s, r, o));
    }

    let clue_count = 2 + rng.below(4); // 2..=5
    let clue_ids: Vec<String> = (0..clue_count).map(|i| format!("c{i}")).collect();
    let mut gg_edges = Vec::new();
    for i in 0..clue_count {
        for j in (i + 1)..clue_count {
            if rng.chance(1, 2) {
                gg_edges.push((
                    clue_ids[i].clone(),
                    format!("l{i}{j}"),
                    clue_ids[j].clone(),
                ));
            }
        }
    }
    if gg_edges.is_empty() {
        gg_edges.push((clue_ids[0].clone(), "l01".to_string(), clue_ids[1].clone()));
    }

    // Map each clue with high probability; keep at least two mapped.
    let mut initial: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for id in &clue_ids {
        if rng.chance(4, 5) {
            let size = 1 + rng.below(4);
            let mut set = BTreeSet::new();
            for _ in 0..size {
                set.insert(entities[rng.below(entity_count)].clone());
            }
            initial.insert(id.clone(), set);
        }
    }
    while initial.len() < 2 {
        let id = clue_ids[rng.below(clue_count)].clone();
        let mut set = BTreeSet::new();
        set.insert(entities[rng.below(entity_count)].clone());
        initial.entry(id).or_insert(set);
    }

    // Ground some edges whose endpoints are both mapped.
    let mut grounds = BTreeMap::new();
    for (i, (h, _, t)) in gg_edges.iter().enumerate() {
        if initial.contains_key(h) && initial.contains_key(t) && rng.chance(3, 10) {
            grounds.insert(i, relations[rng.below(relations.len())].clone());
        }
    }

    RawInstance {
        triples,
        gg_edges,
        grounds,
        initial,
        clue_ids,
    }
}

impl RawInstance {
    /// Direction-agnostic connectivity by raw triple scan.
    pub fn connected(&self, a: &str, b: &str, required: Option<&str>) -> bool {
        self.triples.iter().any(|(s, r, o)| {
            let touches = (s == a && o == b) || (s == b && o == a);
            touches && required.is_none_or(|req| r == req)
        })
    }

    /// Naive repeat-until-stable pairwise support filter over the guidance
    /// edges whose endpoints are both mapped, visiting edges in the given
    /// order. Sets emptied during iteration keep constraining until the
    /// fixpoint; afterwards they are dropped and reported.
    pub fn oracle_fixpoint(
        &self,
        edge_order: &[usize],
    ) -> (BTreeMap<String, BTreeSet<String>>, BTreeSet<String>) {
        let mut sets = self.initial.clone();
        loop {
            let mut changed = false;
            for &i in edge_order {
                let (head, _, tail) = &self.gg_edges[i];
                if !sets.contains_key(head) || !sets.contains_key(tail) {
                    continue;
                }
                let required = self.grounds.get(&i).map(String::as_str);
                for (this, other) in [(head, tail), (tail, head)] {
                    let support = sets[other].clone();
                    let set = sets.get_mut(this).unwrap();
                    let before = set.len();
                    set.retain(|x| support.iter().any(|y| self.connected(x, y, required)));
                    changed |= set.len() != before;
                }
            }
            if !changed {
                break;
            }
        }
        let emptied: BTreeSet<String> = sets
            .iter()
            .filter(|(_, s)| s.is_empty())
            .map(|(c, _)| c.clone())
            .collect();
        sets.retain(|_, s| !s.is_empty());
        (sets, emptied)
    }

    /// Exhaustively enumerates full embeddings of the initial mapping: one
    /// entity per mapped clue such that every guidance edge between mapped
    /// clues is connected (honoring grounded relations). Returns every
    /// (clue, entity) pair participating in at least one embedding.
    pub fn embedding_members(&self) -> BTreeSet<(String, String)> {
        let clues: Vec<&String> = self.initial.keys().collect();
        let domains: Vec<Vec<&String>> = clues
            .iter()
            .map(|c| self.initial[*c].iter().collect())
            .collect();
        let constraints: Vec<(usize, usize, Option<&str>)> = self
            .gg_edges
            .iter()
            .enumerate()
            .filter_map(|(i, (h, _, t))| {
                let hi = clues.iter().position(|c| *c == h)?;
                let ti = clues.iter().position(|c| *c == t)?;
                Some((hi, ti, self.grounds.get(&i).map(String::as_str)))
            })
            .collect();

        let mut members = BTreeSet::new();
        let mut assignment: Vec<usize> = vec![0; clues.len()];
        'outer: loop {
            let consistent = constraints.iter().all(|(hi, ti, req)| {
                self.connected(domains[*hi][assignment[*hi]], domains[*ti][assignment[*ti]], *req)
            });
            if consistent {
                for (i, clue) in clues.iter().enumerate() {
                    members.insert(((*clue).clone(), domains[i][assignment[i]].clone()));
                }
            }
            // Advance the mixed-radix counter.
            for i in 0..clues.len() {
                assignment[i] += 1;
                if assignment[i] < domains[i].len() {
                    continue 'outer;
                }
                assignment[i] = 0;
            }
            break;
        }
        members
    }
}

/// One canned stub response: assistant content plus reported usage.
pub struct StubResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A captured request: target path and headers plus the parsed JSON body.
pub struct CapturedRequest {
    pub path: String,
    pub authorization: Option<String>,
    pub body: serde_json::Value,
}

/// Minimal single-threaded HTTP server speaking just enough of the
/// chat-completions protocol for one pipeline run. Serves the given
/// responses in order, capturing each request.
pub struct StubServer {
    pub base_url: String,
    requests: Arc<Mutex<Vec<CapturedRequest>>>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(responses: Vec<StubResponse>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let base_url = format!("http://{}", listener.local_addr().expect("local addr"));
        let requests: Arc<Mutex<Vec<CapturedRequest>>> = Arc::new(Mutex::new(Vec::new()));
        let captured = Arc::clone(&requests);

        let handle = std::thread::spawn(move || {
            for response in responses {
                let (mut stream, _) = match listener.accept() {
                    Ok(pair) => pair,
                    Err(_) => return,
                };
                let request = read_http_request(&mut stream);
                captured.lock().expect("capture lock").push(request);

                let body = serde_json::json!({
                    "choices": [
                        {"message": {"role": "assistant", "content": response.content}, "finish_reason": "stop"}
                    ],
                    "usage": {
                        "prompt_tokens": response.prompt_tokens,
                        "completion_tokens": response.completion_tokens,
                        "total_tokens": response.prompt_tokens + response.completion_tokens,
                    },
                    "model": "stub"
                })
                .to_string();
                let reply = format!(
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                    body.len(),
                    body
                );
                let _ = stream.write_all(reply.as_bytes());
                let _ = stream.flush();
            }
        });

        StubServer {
            base_url,
            requests,
            handle: Some(handle),
        }
    }

    /// Waits for the server thread and returns everything it captured.
    pub fn finish(mut self) -> Vec<CapturedRequest> {
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
        Arc::try_unwrap(self.requests)
            .ok()
            .expect("server thread done")
            .into_inner()
            .expect("capture lock")
    }
}

fn read_http_request(stream: &mut std::net::TcpStream) -> CapturedRequest {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    let header_end;
    loop {
        let n = stream.read(&mut chunk).expect("read request");
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_header_end(&buf) {
            header_end = pos;
            break;
        }
        assert!(n > 0, "connection closed before headers were complete");
    }

    let header_text = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let mut lines = header_text.split("\r\n");
    let request_line = lines.next().unwrap_or_default();
    let path = request_line.split(' ').nth(1).unwrap_or_default().to_string();

    let mut content_length = 0usize;
    let mut authorization = None;
    for line in lines {
        let Some((name, value)) = line.split_once(':') else {
            continue;
        };
        let value = value.trim();
        if name.eq_ignore_ascii_case("content-length") {
            content_length = value.parse().unwrap_or(0);
        } else if name.eq_ignore_ascii_case("authorization") {
            authorization = Some(value.to_string());
        }
    }

    let body_start = header_end + 4;
    while buf.len() < body_start + content_length {
        let n = stream.read(&mut chunk).expect("read body");
        assert!(n > 0, "connection closed before body was complete");
        buf.extend_from_slice(&chunk[..n]);
    }
    let body: serde_json::Value =
        serde_json::from_slice(&buf[body_start..body_start + content_length])
            .expect("request body is JSON");

    CapturedRequest {
        path,
        authorization,
        body,
    }
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}
