use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{bare_question, StageError, StageResult};
use crate::corpus::text::tokenize;
use crate::corpus::Corpus;
use crate::qboost::{boost, BoostConfig, Seq2Seq};
use crate::ranker::{rank_candidates, Ranker, ScoreWeights};
use crate::retrieval::{RetrievalIndex, TokenId};

/// Immutable models and corpus shared by every query.
pub struct RecommendState {
    pub corpus: Corpus,
    pub index: RetrievalIndex,
    /// `None` when the variant drops the clarifying question.
    pub qboost: Option<Seq2Seq<f32>>,
    pub ranker: Ranker<f32>,
    pub weights: ScoreWeights,
    pub answers: HashMap<u64, Vec<TokenId>>,
    pub boost: BoostConfig,
    pub default_k: usize,
    pub excerpt_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendedAnswer {
    pub aid: u64,
    pub qid: u64,
    pub score: f64,
    pub excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub boosted: String,
    pub results: Vec<RecommendedAnswer>,
}

/// Boost the query, retrieve the `k` most similar questions and rank all of
/// their answers.
pub fn recommend(state: &RecommendState, query: &str, k: Option<usize>) -> StageResult<Recommendation> {
    if state.index.is_empty() {
        return Err(StageError::EmptyIndex);
    }
    let k = k.unwrap_or(state.default_k);
    let tokens = tokenize(query);
    let boosted = match &state.qboost {
        Some(m) => boost(m, &state.index.vocab, &tokens, &state.boost),
        None => bare_question(&tokens, state.boost.max_question_len),
    };
    let similar = state.index.knn(&tokens, k);
    let candidates: Vec<(u64, Vec<TokenId>)> = similar
        .iter()
        .flat_map(|(pid, _)| state.corpus.answers_of(*pid))
        .map(|a| (a.id, state.answers.get(&a.id).cloned().unwrap_or_default()))
        .collect();
    let q = state.index.vocab.encode(&boosted.joined);
    let ranked = rank_candidates(&state.ranker, &q, &candidates, &state.weights)?;
    let results = ranked
        .into_iter()
        .map(|(aid, score)| {
            let a = state.corpus.answer(aid).expect("candidate answer exists");
            RecommendedAnswer {
                aid,
                qid: a.parent_id,
                score,
                excerpt: a.body.chars().take(state.excerpt_chars).collect(),
            }
        })
        .collect();
    Ok(Recommendation {
        boosted: boosted.joined.join(" "),
        results,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Request {
    query: String,
    #[serde(default)]
    k: Option<usize>,
}

fn error_line(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

/// Answer one protocol line with one JSON line (no trailing newline).
pub fn handle_request(state: &RecommendState, line: &str) -> String {
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return error_line(&format!("malformed request: {e}")),
    };
    if req.k == Some(0) {
        return error_line("k must be at least 1");
    }
    match recommend(state, &req.query, req.k) {
        Ok(r) => serde_json::to_string(&r).expect("recommendation serializes"),
        Err(e) => error_line(&e.to_string()),
    }
}

fn handle_connection(state: &RecommendState, stream: TcpStream) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut reply = handle_request(state, &line);
        reply.push('\n');
        writer.write_all(reply.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Accept connections forever, one thread per connection.
pub fn serve(listener: TcpListener, state: Arc<RecommendState>) -> StageResult<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let state = Arc::clone(&state);
        std::thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = handle_connection(&state, stream) {
                debug!("connection {peer:?} closed: {e}");
            }
        });
    }
    Ok(())
}
