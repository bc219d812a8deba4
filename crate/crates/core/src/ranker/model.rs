use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::checkpoint::{encode_checkpoint, Checkpoint};
use crate::neural::ops::{axpy, cross_entropy, dot, matvec_add, matvec_t_add, outer_add, relu, softmax};
use crate::neural::{Params, Scalar, Tensor, INIT_SCALE};
use crate::retrieval::{EmbeddingMatrix, TokenId, PAD};

pub const MODEL_NAME: &str = "ranker";
pub const FILTER_WIDTHS: [usize; 3] = [3, 4, 5];
pub const MAX_ANSWER_LEN: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankerConfig {
    pub vocab_size: usize,
    pub dim: usize,
    /// Feature maps per filter width.
    pub maps: usize,
    pub widths: Vec<usize>,
    /// 4 for the labeled model, 2 for the binary ablation.
    pub classes: usize,
    pub max_question_len: usize,
    pub max_answer_len: usize,
    /// Use one set of filters for both branches.
    pub shared_branches: bool,
}

impl RankerConfig {
    pub fn new(vocab_size: usize, dim: usize, maps: usize, classes: usize) -> Self {
        RankerConfig {
            vocab_size,
            dim,
            maps,
            widths: FILTER_WIDTHS.to_vec(),
            classes,
            max_question_len: crate::qboost::MAX_QUESTION_LEN,
            max_answer_len: MAX_ANSWER_LEN,
            shared_branches: false,
        }
    }

    /// Width of the joined feature vector.
    pub fn features(&self) -> usize {
        2 * self.widths.len() * self.maps
    }
}

/// Convolution filters of one branch; filter `k` of width `m` is stored as a
/// row of `m·d` values over a window of consecutive token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub filters: Vec<Tensor<T>>,
    pub biases: Vec<Tensor<T>>,
}

impl<T: Scalar> Branch<T> {
    fn new(cfg: &RankerConfig, rng: &mut ChaCha8Rng) -> Self {
        let filters = cfg
            .widths
            .iter()
            .map(|&m| Tensor::uniform(&[cfg.maps, m * cfg.dim], INIT_SCALE, rng))
            .collect();
        let biases = cfg.widths.iter().map(|_| Tensor::uniform(&[cfg.maps], INIT_SCALE, rng)).collect();
        Branch { filters, biases }
    }

    fn named<'a>(&'a self, prefix: &str, widths: &[usize]) -> Vec<(String, &'a Tensor<T>)> {
        let mut v = Vec::new();
        for (i, m) in widths.iter().enumerate() {
            v.push((format!("{prefix}.conv{m}.w"), &self.filters[i]));
            v.push((format!("{prefix}.conv{m}.b"), &self.biases[i]));
        }
        v
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, widths: &[usize]) -> Vec<(String, &'a mut Tensor<T>)> {
        let mut v = Vec::new();
        for ((m, f), b) in widths.iter().zip(self.filters.iter_mut()).zip(self.biases.iter_mut()) {
            v.push((format!("{prefix}.conv{m}.w"), f));
            v.push((format!("{prefix}.conv{m}.b"), b));
        }
        v
    }
}

/// Dual-CNN classifier over ⟨question, answer⟩ token sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranker<T> {
    pub cfg: RankerConfig,
    /// `[V, d]`; the PAD row is never read.
    pub embedding: Tensor<T>,
    pub question: Branch<T>,
    /// Absent when branches are shared.
    pub answer: Option<Branch<T>>,
    pub fc_w: Tensor<T>,
    pub fc_b: Tensor<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
}

/// Pooled features of one branch with the winning window per map.
#[derive(Debug, Clone)]
struct BranchCache<T> {
    tokens: Vec<TokenId>,
    pooled: Vec<T>,
    argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    q: BranchCache<T>,
    a: BranchCache<T>,
    joined: Vec<T>,
    hidden: Vec<T>,
    pub logits: Vec<T>,
}

/// Column `i` is the embedding of token `i`; short inputs are padded with
/// zero columns and long ones truncated.
pub fn sentence_matrix<T: Scalar>(tokens: &[TokenId], embedding: &Tensor<T>, max_len: usize) -> Tensor<T> {
    let d = embedding.shape()[1];
    let mut s = Tensor::zeros(&[d, max_len]);
    for (i, &t) in tokens.iter().take(max_len).enumerate() {
        if t == PAD {
            continue;
        }
        for (r, &v) in embedding.row(t as usize).iter().enumerate() {
            s.data_mut()[r * max_len + i] = v;
        }
    }
    s
}

impl<T: Scalar> Ranker<T> {
    pub fn new(cfg: RankerConfig, seed: u64) -> Result<Self> {
        if cfg.dim == 0 || cfg.maps == 0 || cfg.classes < 2 || cfg.widths.is_empty() {
            return Err(Error::Argument("ranker needs positive sizes and at least two classes".into()));
        }
        let widest = *cfg.widths.iter().max().unwrap();
        if cfg.max_question_len < widest || cfg.max_answer_len < widest {
            return Err(Error::Argument(format!("max sequence lengths must be at least {widest}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = cfg.features();
        let mut embedding = Tensor::uniform(&[cfg.vocab_size, cfg.dim], INIT_SCALE, &mut rng);
        if cfg.vocab_size > 0 {
            embedding.row_mut(PAD as usize).fill(T::zero());
        }
        let question = Branch::new(&cfg, &mut rng);
        let answer = (!cfg.shared_branches).then(|| Branch::new(&cfg, &mut rng));
        Ok(Ranker {
            embedding,
            question,
            answer,
            fc_w: Tensor::uniform(&[f, f], INIT_SCALE, &mut rng),
            fc_b: Tensor::uniform(&[f], INIT_SCALE, &mut rng),
            out_w: Tensor::uniform(&[cfg.classes, f], INIT_SCALE, &mut rng),
            out_b: Tensor::uniform(&[cfg.classes], INIT_SCALE, &mut rng),
            cfg,
        })
    }

    pub fn load_embeddings(&mut self, emb: &EmbeddingMatrix) -> Result<()> {
        if emb.rows() != self.cfg.vocab_size || emb.dim() != self.cfg.dim {
            return Err(Error::Shape {
                context: "ranker embeddings".into(),
                expected: vec![self.cfg.vocab_size, self.cfg.dim],
                actual: vec![emb.rows(), emb.dim()],
            });
        }
        for (dst, &src) in self.embedding.data_mut().iter_mut().zip(emb.data()) {
            *dst = T::lit(src as f64);
        }
        self.embedding.row_mut(PAD as usize).fill(T::zero());
        Ok(())
    }

    fn answer_branch(&self) -> &Branch<T> {
        self.answer.as_ref().unwrap_or(&self.question)
    }

    /// Token-major padded input `[max_len, d]`.
    fn window_input(&self, tokens: &[TokenId], max_len: usize) -> Vec<T> {
        let d = self.cfg.dim;
        let mut x = vec![T::zero(); max_len * d];
        for (i, &t) in tokens.iter().take(max_len).enumerate() {
            if t != PAD {
                x[i * d..(i + 1) * d].copy_from_slice(self.embedding.row(t as usize));
            }
        }
        x
    }

    fn branch_forward(&self, branch: &Branch<T>, tokens: &[TokenId], max_len: usize) -> BranchCache<T> {
        let d = self.cfg.dim;
        let x = self.window_input(tokens, max_len);
        let mut pooled = Vec::with_capacity(self.cfg.widths.len() * self.cfg.maps);
        let mut argmax = Vec::with_capacity(pooled.capacity());
        for (wi, &m) in self.cfg.widths.iter().enumerate() {
            let positions = max_len - m + 1;
            let filt = &branch.filters[wi];
            let bias = branch.biases[wi].data();
            for k in 0..self.cfg.maps {
                let f = filt.row(k);
                let mut best = T::neg_infinity();
                let mut best_i = 0;
                for i in 0..positions {
                    let c = dot(f, &x[i * d..(i + m) * d]);
                    if c > best {
                        best = c;
                        best_i = i;
                    }
                }
                // relu commutes with max
                pooled.push(relu(best + bias[k]));
                argmax.push(best_i);
            }
        }
        BranchCache {
            tokens: tokens.iter().take(max_len).copied().collect(),
            pooled,
            argmax,
        }
    }

    fn branch_backward(&self, branch: &Branch<T>, cache: &BranchCache<T>, d_pooled: &[T], gb: &mut Branch<T>, gemb: &mut Tensor<T>) {
        let d = self.cfg.dim;
        let mut j = 0;
        for (wi, &m) in self.cfg.widths.iter().enumerate() {
            for k in 0..self.cfg.maps {
                let g = d_pooled[j];
                let active = cache.pooled[j] > T::zero();
                let start = cache.argmax[j];
                j += 1;
                if !active || g == T::zero() {
                    continue;
                }
                gb.biases[wi].data_mut()[k] += g;
                let f = branch.filters[wi].row(k);
                for off in 0..m {
                    let pos = start + off;
                    let Some(&tok) = cache.tokens.get(pos) else { continue };
                    if tok == PAD {
                        continue;
                    }
                    let e = self.embedding.row(tok as usize);
                    axpy(&mut gb.filters[wi].row_mut(k)[off * d..(off + 1) * d], g, e);
                    axpy(gemb.row_mut(tok as usize), g, &f[off * d..(off + 1) * d]);
                }
            }
        }
    }

    pub fn forward_cache(&self, q: &[TokenId], a: &[TokenId]) -> ForwardCache<T> {
        let qc = self.branch_forward(&self.question, q, self.cfg.max_question_len);
        let ac = self.branch_forward(self.answer_branch(), a, self.cfg.max_answer_len);
        let mut joined = qc.pooled.clone();
        joined.extend_from_slice(&ac.pooled);
        let mut hidden = self.fc_b.data().to_vec();
        matvec_add(&mut hidden, self.fc_w.data(), &joined);
        hidden.iter_mut().for_each(|v| *v = relu(*v));
        let mut logits = self.out_b.data().to_vec();
        matvec_add(&mut logits, self.out_w.data(), &hidden);
        ForwardCache {
            q: qc,
            a: ac,
            joined,
            hidden,
            logits,
        }
    }

    /// Class distribution for a pair.
    pub fn forward(&self, q: &[TokenId], a: &[TokenId]) -> Result<Vec<T>> {
        let cache = self.forward_cache(q, a);
        if cache.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "ranker logits {:?} (|q|={}, |a|={})",
                cache.logits,
                q.len(),
                a.len()
            )));
        }
        Ok(softmax(&cache.logits))
    }

    pub fn loss(&self, q: &[TokenId], a: &[TokenId], label: usize) -> T {
        cross_entropy(&self.forward_cache(q, a).logits, label).0
    }

    /// Forward/backward for one labeled pair; gradients accumulate into `g`.
    /// Returns the loss and whether the arg-max class was correct.
    pub fn accumulate_gradients(&self, q: &[TokenId], a: &[TokenId], label: usize, g: &mut Ranker<T>) -> (T, bool) {
        let cache = self.forward_cache(q, a);
        let predicted = argmax(&cache.logits);
        let (loss, dlogits) = cross_entropy(&cache.logits, label);
        outer_add(g.out_w.data_mut(), &dlogits, &cache.hidden);
        axpy(g.out_b.data_mut(), T::one(), &dlogits);
        let mut dh = vec![T::zero(); cache.hidden.len()];
        matvec_t_add(&mut dh, self.out_w.data(), &dlogits);
        for (d, &h) in dh.iter_mut().zip(&cache.hidden) {
            if h <= T::zero() {
                *d = T::zero();
            }
        }
        outer_add(g.fc_w.data_mut(), &dh, &cache.joined);
        axpy(g.fc_b.data_mut(), T::one(), &dh);
        let mut dj = vec![T::zero(); cache.joined.len()];
        matvec_t_add(&mut dj, self.fc_w.data(), &dh);
        let half = dj.len() / 2;

        let mut gemb = std::mem::replace(&mut g.embedding, Tensor::zeros(&[0]));
        let Ranker { question, answer, .. } = g;
        self.branch_backward(&self.question, &cache.q, &dj[..half], question, &mut gemb);
        let ga = answer.as_mut().unwrap_or(question);
        self.branch_backward(self.answer_branch(), &cache.a, &dj[half..], ga, &mut gemb);
        g.embedding = gemb;
        (loss, predicted == label)
    }

    pub fn hyperparameters(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(&self.cfg)?)
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        encode_checkpoint(MODEL_NAME, self.hyperparameters()?, &self.tensors())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_model(MODEL_NAME)?;
        let cfg: RankerConfig = serde_json::from_value(ck.header.hyperparameters.clone())?;
        let mut m = Self::new(cfg, 0)?;
        for (name, t) in m.tensors_mut() {
            ck.load_into(&name, t)?;
        }
        Ok(m)
    }
}

pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> Params<T> for Ranker<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let w = &self.cfg.widths;
        let mut v = vec![("embedding".to_string(), &self.embedding)];
        v.extend(self.question.named("q", w));
        if let Some(a) = &self.answer {
            v.extend(a.named("a", w));
        }
        v.push(("fc.w".into(), &self.fc_w));
        v.push(("fc.b".into(), &self.fc_b));
        v.push(("out.w".into(), &self.out_w));
        v.push(("out.b".into(), &self.out_b));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let w = self.cfg.widths.clone();
        let mut v = vec![("embedding".to_string(), &mut self.embedding)];
        v.extend(self.question.named_mut("q", &w));
        if let Some(a) = &mut self.answer {
            v.extend(a.named_mut("a", &w));
        }
        v.push(("fc.w".into(), &mut self.fc_w));
        v.push(("fc.b".into(), &mut self.fc_b));
        v.push(("out.w".into(), &mut self.out_w));
        v.push(("out.b".into(), &mut self.out_b));
        v
    }
}
