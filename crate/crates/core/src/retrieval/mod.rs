//! Vocabulary, IDF weights, word vectors and exact k-NN over question titles.

mod embedding;
pub mod vocab;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use embedding::{train_embeddings, EmbeddingMatrix, SkipGramConfig, EMBEDDING_MAGIC};
pub use vocab::{TokenId, Vocabulary, BOS, EOS, NUM_RESERVED, PAD, RESERVED, SEP, UNK};

use crate::error::{Error, Result};

/// Per-token inverse document frequency. Tokens that never occur in a
/// document (and the reserved tokens) have no weight.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    weights: Vec<Option<f64>>,
    n_docs: usize,
}

impl IdfTable {
    pub fn from_documents(docs: &[Vec<TokenId>], vocab_size: usize) -> Self {
        let mut df = vec![0usize; vocab_size];
        let mut seen = vec![usize::MAX; vocab_size];
        for (d, doc) in docs.iter().enumerate() {
            for &t in doc {
                let t = t as usize;
                if t < NUM_RESERVED || t >= vocab_size || seen[t] == d {
                    continue;
                }
                seen[t] = d;
                df[t] += 1;
            }
        }
        let n = docs.len() as f64;
        let weights = df
            .into_iter()
            .map(|c| (c > 0).then(|| (n / c as f64).ln()))
            .collect();
        IdfTable {
            weights,
            n_docs: docs.len(),
        }
    }

    pub fn from_weights(weights: Vec<Option<f64>>, n_docs: usize) -> Self {
        IdfTable { weights, n_docs }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn get(&self, id: TokenId) -> Option<f64> {
        self.weights.get(id as usize).copied().flatten()
    }

    pub fn weights(&self) -> &[Option<f64>] {
        &self.weights
    }
}

/// IDF-weighted mean of the token vectors; zero when no token carries weight.
pub fn embed_sentence(tokens: &[TokenId], emb: &EmbeddingMatrix, idf: &IdfTable) -> Vec<f64> {
    let mut out = vec![0.0; emb.dim()];
    let mut mass = 0.0;
    for &t in tokens {
        let Some(w) = idf.get(t) else { continue };
        if (t as usize) >= emb.rows() || w == 0.0 {
            continue;
        }
        mass += w;
        for (o, &e) in out.iter_mut().zip(emb.row(t)) {
            *o += w * e as f64;
        }
    }
    if mass > 0.0 {
        out.iter_mut().for_each(|o| *o /= mass);
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; 0 if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedTitle {
    pub id: u64,
    pub tokens: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct VocabRecord {
    token: String,
    idf: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexMeta {
    n_docs: usize,
    vocab_size: usize,
    dim: usize,
    n_titles: usize,
}

/// Exact cosine k-NN over IDF-weighted title embeddings.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    pub vocab: Vocabulary,
    pub idf: IdfTable,
    pub embeddings: EmbeddingMatrix,
    titles: Vec<IndexedTitle>,
    unit_vectors: Vec<Vec<f64>>,
}

impl RetrievalIndex {
    /// Build over `(post id, title tokens)`; IDF is computed from these titles.
    pub fn build(vocab: Vocabulary, embeddings: EmbeddingMatrix, titles: Vec<IndexedTitle>) -> Result<Self> {
        let docs: Vec<Vec<TokenId>> = titles.iter().map(|t| vocab.encode(&t.tokens)).collect();
        let idf = IdfTable::from_documents(&docs, vocab.len());
        Self::assemble(vocab, idf, embeddings, titles)
    }

    fn assemble(vocab: Vocabulary, idf: IdfTable, embeddings: EmbeddingMatrix, mut titles: Vec<IndexedTitle>) -> Result<Self> {
        if embeddings.rows() != vocab.len() {
            return Err(Error::Shape {
                context: "retrieval embeddings".into(),
                expected: vec![vocab.len(), embeddings.dim()],
                actual: vec![embeddings.rows(), embeddings.dim()],
            });
        }
        titles.sort_by_key(|t| t.id);
        let unit_vectors = titles
            .par_iter()
            .map(|t| {
                let mut v = embed_sentence(&vocab.encode(&t.tokens), &embeddings, &idf);
                let n = norm(&v);
                if n > 0.0 {
                    v.iter_mut().for_each(|x| *x /= n);
                }
                v
            })
            .collect();
        Ok(RetrievalIndex {
            vocab,
            idf,
            embeddings,
            titles,
            unit_vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.titles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.titles.is_empty()
    }

    pub fn titles(&self) -> &[IndexedTitle] {
        &self.titles
    }

    pub fn embed(&self, tokens: &[String]) -> Vec<f64> {
        embed_sentence(&self.vocab.encode(tokens), &self.embeddings, &self.idf)
    }

    /// Top-k posts by cosine, score descending then post id ascending.
    pub fn knn(&self, query: &[String], k: usize) -> Vec<(u64, f64)> {
        if k == 0 || self.titles.is_empty() {
            return Vec::new();
        }
        let q = self.embed(query);
        let qn = norm(&q);
        let mut scored: Vec<(u64, f64)> = self
            .titles
            .par_iter()
            .zip(self.unit_vectors.par_iter())
            .map(|(t, v)| {
                let s = if qn == 0.0 {
                    0.0
                } else {
                    (q.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / qn).clamp(-1.0, 1.0)
                };
                (t.id, s)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(
            &dir.join("vocab.jsonl"),
            self.vocab.tokens().iter().enumerate().map(|(i, t)| VocabRecord {
                token: t.clone(),
                idf: self.idf.get(i as TokenId),
            }),
        )?;
        write_jsonl(&dir.join("titles.jsonl"), self.titles.iter())?;
        let meta = IndexMeta {
            n_docs: self.idf.n_docs(),
            vocab_size: self.vocab.len(),
            dim: self.embeddings.dim(),
            n_titles: self.titles.len(),
        };
        let meta_path = dir.join("meta.json");
        fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
        let emb_path = dir.join("embeddings.bin");
        let file = File::create(&emb_path).map_err(|e| Error::io(&emb_path, e))?;
        let mut w = BufWriter::new(file);
        self.embeddings.write_binary(&mut w).map_err(|e| Error::io(&emb_path, e))?;
        w.flush().map_err(|e| Error::io(&emb_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let records: Vec<VocabRecord> = read_jsonl(&dir.join("vocab.jsonl"))?;
        let titles: Vec<IndexedTitle> = read_jsonl(&dir.join("titles.jsonl"))?;
        let meta_path = dir.join("meta.json");
        let meta: IndexMeta =
            serde_json::from_slice(&fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?)?;
        let emb_path = dir.join("embeddings.bin");
        let file = File::open(&emb_path).map_err(|e| Error::io(&emb_path, e))?;
        let embeddings = EmbeddingMatrix::read_binary(BufReader::new(file), &emb_path)?;
        let weights = records.iter().map(|r| r.idf).collect();
        let vocab = Vocabulary::from_tokens(records.into_iter().map(|r| r.token).collect())?;
        if meta.vocab_size != vocab.len() || meta.n_titles != titles.len() {
            return Err(Error::format(&meta_path, "index metadata does not match its files"));
        }
        Self::assemble(vocab, IdfTable::from_weights(weights, meta.n_docs), embeddings, titles)
    }
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}
