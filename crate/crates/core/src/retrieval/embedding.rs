use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{TokenId, Vocabulary, NUM_RESERVED, PAD};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"DAEMB\0\0\x01";

/// Dense `|V| × d` word embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingMatrix {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape {
                context: "embedding matrix".into(),
                expected: vec![rows, dim],
                actual: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding matrix".into()));
        }
        Ok(EmbeddingMatrix { rows, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: TokenId) -> &[f32] {
        let i = id as usize * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn row_mut(&mut self, id: TokenId) -> &mut [f32] {
        let i = id as usize * self.dim;
        &mut self.data[i..i + self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Save as `token v1 … vd` lines.
    pub fn save_text(&self, vocab: &Vocabulary, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, tok) in vocab.tokens().iter().enumerate().take(self.rows) {
            let mut line = tok.clone();
            for v in self.row(i as TokenId) {
                line.push(' ');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Load pre-trained vectors for `vocab` from a text file. Tokens missing
    /// from the file keep a zero row; file tokens outside the vocabulary are
    /// ignored.
    pub fn load_text(vocab: &Vocabulary, path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut matrix: Option<EmbeddingMatrix> = None;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f32> = parts
                .map(|p| p.parse::<f32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
            let m = matrix.get_or_insert_with(|| EmbeddingMatrix::zeros(vocab.len(), values.len()));
            if values.len() != m.dim {
                return Err(Error::format(path, format!("line {}: expected {} values", lineno + 1, m.dim)));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(path, format!("line {}: non-finite value", lineno + 1)));
            }
            if let Some(id) = vocab.get(token) {
                if id != PAD {
                    m.row_mut(id).copy_from_slice(&values);
                }
            }
        }
        matrix.ok_or_else(|| Error::format(path, "empty embedding file"))
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, origin: &Path) -> Result<Self> {
        let io = |e| Error::io(origin, e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != EMBEDDING_MAGIC {
            return Err(Error::format(origin, "bad embedding magic"));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word).map_err(io)?;
        let rows = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word).map_err(io)?;
        let dim = u64::from_le_bytes(word) as usize;
        let mut bytes = vec![0u8; rows * dim * 4];
        r.read_exact(&mut bytes).map_err(io)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_vec(rows, dim, data)
    }
}

/// Skip-gram with negative sampling settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub epochs: usize,
    pub window: usize,
    pub negatives: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 100,
            epochs: 5,
            window: 5,
            negatives: 5,
            learning_rate: 0.025,
            seed: 42,
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Unigram^0.75 sampler over non-reserved tokens.
struct NegativeTable {
    ids: Vec<TokenId>,
    cumulative: Vec<f64>,
}

impl NegativeTable {
    fn new(counts: &[u64]) -> Option<Self> {
        let mut ids = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = 0.0;
        for (id, &c) in counts.iter().enumerate().skip(NUM_RESERVED) {
            if c > 0 {
                total += (c as f64).powf(0.75);
                ids.push(id as TokenId);
                cumulative.push(total);
            }
        }
        (!ids.is_empty()).then_some(NegativeTable { ids, cumulative })
    }

    fn sample(&self, rng: &mut impl Rng) -> TokenId {
        let total = *self.cumulative.last().unwrap();
        let x = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= x).min(self.ids.len() - 1);
        self.ids[i]
    }
}

/// Train word vectors on token-id streams. Deterministic given the seed.
pub fn train_embeddings(streams: &[Vec<TokenId>], vocab_size: usize, cfg: &SkipGramConfig) -> Result<EmbeddingMatrix> {
    if cfg.dim == 0 {
        return Err(Error::Argument("embedding dimension must be positive".into()));
    }
    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 0.5 / dim as f32;
    let mut input: Vec<f32> = (0..vocab_size * dim).map(|_| rng.random_range(-bound..bound)).collect();
    input[PAD as usize * dim..(PAD as usize + 1) * dim].fill(0.0);

    let sentences: Vec<Vec<TokenId>> = streams
        .iter()
        .map(|s| s.iter().copied().filter(|&t| t as usize >= NUM_RESERVED && (t as usize) < vocab_size).collect())
        .filter(|s: &Vec<TokenId>| s.len() >= 2)
        .collect();
    let mut counts = vec![0u64; vocab_size];
    for s in &sentences {
        for &t in s {
            counts[t as usize] += 1;
        }
    }
    let Some(table) = NegativeTable::new(&counts) else {
        return EmbeddingMatrix::from_vec(vocab_size, dim, input);
    };
    let mut output = vec![0f32; vocab_size * dim];
    let total_steps = (cfg.epochs * sentences.iter().map(Vec::len).sum::<usize>()).max(1) as f32;
    let mut step = 0usize;
    let mut hidden_grad = vec![0f32; dim];

    for _ in 0..cfg.epochs {
        for sentence in &sentences {
            for (i, &center) in sentence.iter().enumerate() {
                let lr = (cfg.learning_rate * (1.0 - step as f32 / total_steps)).max(cfg.learning_rate * 1e-4);
                step += 1;
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window).min(sentence.len() - 1);
                for (j, &context) in sentence.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    hidden_grad.fill(0.0);
                    let c_off = center as usize * dim;
                    for n in 0..=cfg.negatives {
                        let (target, label) = if n == 0 {
                            (context, 1.0)
                        } else {
                            let t = table.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let t_off = target as usize * dim;
                        let dot: f32 = (0..dim).map(|k| input[c_off + k] * output[t_off + k]).sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for k in 0..dim {
                            hidden_grad[k] += g * output[t_off + k];
                            output[t_off + k] += g * input[c_off + k];
                        }
                    }
                    for k in 0..dim {
                        input[c_off + k] += hidden_grad[k];
                    }
                }
            }
        }
    }
    EmbeddingMatrix::from_vec(vocab_size, dim, input)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f32], b: &[f32]) -> f32 {
        let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
        let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
        dot / (na * nb)
    }

    fn two_cluster_corpus(n: usize) -> Vec<Vec<TokenId>> {
        // cluster A uses ids 5..10, cluster B ids 10..15; sentences never mix clusters
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..n)
            .map(|k| {
                let base = if k % 2 == 0 { 5 } else { 10 };
                (0..8).map(|_| base + rng.random_range(0..5)).collect()
            })
            .collect()
    }

    #[test]
    fn co_occurring_tokens_end_up_closer() {
        let corpus = two_cluster_corpus(400);
        let cfg = SkipGramConfig {
            dim: 16,
            epochs: 5,
            seed: 9,
            ..SkipGramConfig::default()
        };
        let e = train_embeddings(&corpus, 15, &cfg).unwrap();
        let same = cosine(e.row(5), e.row(6));
        let across = cosine(e.row(5), e.row(11));
        assert!(same > across, "same={same} across={across}");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let corpus = two_cluster_corpus(10);
        let cfg = SkipGramConfig {
            dim: 8,
            epochs: 0,
            ..SkipGramConfig::default()
        };
        let a = train_embeddings(&corpus, 15, &cfg).unwrap();
        let b = train_embeddings(&[], 15, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.row(PAD).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_after_training_and_deterministic() {
        let corpus = two_cluster_corpus(1000);
        let cfg = SkipGramConfig {
            dim: 12,
            epochs: 5,
            ..SkipGramConfig::default()
        };
        let a = train_embeddings(&corpus, 15, &cfg).unwrap();
        assert!(a.data().iter().all(|v| v.is_finite()));
        assert_eq!(a, train_embeddings(&corpus, 15, &cfg).unwrap());
    }

    #[test]
    fn zero_dim_is_an_argument_error() {
        let cfg = SkipGramConfig {
            dim: 0,
            ..SkipGramConfig::default()
        };
        assert!(matches!(train_embeddings(&[], 5, &cfg), Err(Error::Argument(_))));
    }

    #[test]
    fn binary_and_text_round_trip() {
        let vocab = Vocabulary::build([vec!["a".to_string(), "b".to_string()]], 10).unwrap();
        let data: Vec<f32> = (0..vocab.len() * 3).map(|i| i as f32 * 0.25 - 1.0).collect();
        let mut m = EmbeddingMatrix::from_vec(vocab.len(), 3, data).unwrap();
        m.row_mut(PAD).fill(0.0);
        let mut bytes = Vec::new();
        m.write_binary(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], EMBEDDING_MAGIC);
        assert_eq!(bytes.len(), 8 + 16 + m.data().len() * 4);
        let back = EmbeddingMatrix::read_binary(bytes.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, m);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        m.save_text(&vocab, &path).unwrap();
        assert_eq!(EmbeddingMatrix::load_text(&vocab, &path).unwrap(), m);
    }
}
