use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::checkpoint::{encode_checkpoint, Checkpoint};
use crate::neural::ops::{axpy, cross_entropy, dot, log_softmax, matvec_add, matvec_t_add, outer_add, softmax};
use crate::neural::{Lstm, LstmStep, Params, Scalar, Tensor, INIT_SCALE};
use crate::retrieval::{EmbeddingMatrix, TokenId, BOS, EOS, NUM_RESERVED};

pub const MODEL_NAME: &str = "qboost";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2SeqConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub hidden: usize,
}

/// Attentional encoder-decoder: shared embedding, 2-layer bidirectional LSTM
/// encoder, tanh bridge, 1-layer LSTM decoder with additive attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq<T> {
    pub cfg: Seq2SeqConfig,
    /// `[V, d]`
    pub embedding: Tensor<T>,
    pub enc_fw1: Lstm<T>,
    pub enc_bw1: Lstm<T>,
    pub enc_fw2: Lstm<T>,
    pub enc_bw2: Lstm<T>,
    /// `[h, 2h]`
    pub bridge_w: Tensor<T>,
    pub bridge_b: Tensor<T>,
    pub dec: Lstm<T>,
    /// `[h, 2h]`, applied to encoder states
    pub att_enc: Tensor<T>,
    /// `[h, h]`, applied to the decoder state
    pub att_dec: Tensor<T>,
    pub att_b: Tensor<T>,
    pub att_v: Tensor<T>,
    /// `[V, 3h]` over `[s_t; ctx]`
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
}

/// Cached encoder activations for one source sequence.
#[derive(Debug, Clone)]
pub struct Encoded<T> {
    src: Vec<TokenId>,
    fw1: Vec<LstmStep<T>>,
    bw1: Vec<LstmStep<T>>,
    fw2: Vec<LstmStep<T>>,
    bw2: Vec<LstmStep<T>>,
    /// `h_i = [fw_i; bw_i]` of the top layer.
    pub states: Vec<Vec<T>>,
    /// `W_enc · h_i`
    proj: Vec<Vec<T>>,
    bridge_in: Vec<T>,
    /// Initial decoder state.
    pub s0: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Attention<T> {
    /// `tanh(W_enc h_i + W_dec s + b)` per position.
    u: Vec<Vec<T>>,
    pub weights: Vec<T>,
    pub context: Vec<T>,
}

/// One decoder step: new state, attention and output logits.
#[derive(Debug, Clone)]
pub struct DecodeStep<T> {
    pub lstm: LstmStep<T>,
    pub attention: Attention<T>,
    pub logits: Vec<T>,
}

fn concat<T: Copy>(a: &[T], b: &[T]) -> Vec<T> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

impl<T: Scalar> Seq2Seq<T> {
    pub fn new(cfg: Seq2SeqConfig, seed: u64) -> Result<Self> {
        if cfg.vocab_size < NUM_RESERVED {
            return Err(Error::Argument("vocabulary lacks the reserved BOS/EOS tokens".into()));
        }
        if cfg.dim == 0 || cfg.hidden == 0 {
            return Err(Error::Argument("embedding and hidden sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d, h) = (cfg.vocab_size, cfg.dim, cfg.hidden);
        Ok(Seq2Seq {
            cfg,
            embedding: Tensor::uniform(&[v, d], INIT_SCALE, &mut rng),
            enc_fw1: Lstm::new(d, h, &mut rng),
            enc_bw1: Lstm::new(d, h, &mut rng),
            enc_fw2: Lstm::new(2 * h, h, &mut rng),
            enc_bw2: Lstm::new(2 * h, h, &mut rng),
            bridge_w: Tensor::uniform(&[h, 2 * h], INIT_SCALE, &mut rng),
            bridge_b: Tensor::uniform(&[h], INIT_SCALE, &mut rng),
            dec: Lstm::new(d, h, &mut rng),
            att_enc: Tensor::uniform(&[h, 2 * h], INIT_SCALE, &mut rng),
            att_dec: Tensor::uniform(&[h, h], INIT_SCALE, &mut rng),
            att_b: Tensor::uniform(&[h], INIT_SCALE, &mut rng),
            att_v: Tensor::uniform(&[h], INIT_SCALE, &mut rng),
            out_w: Tensor::uniform(&[v, 3 * h], INIT_SCALE, &mut rng),
            out_b: Tensor::uniform(&[v], INIT_SCALE, &mut rng),
        })
    }

    /// Overwrite the embedding table with pre-trained vectors.
    pub fn load_embeddings(&mut self, emb: &EmbeddingMatrix) -> Result<()> {
        if emb.rows() != self.cfg.vocab_size || emb.dim() != self.cfg.dim {
            return Err(Error::Shape {
                context: "qboost embeddings".into(),
                expected: vec![self.cfg.vocab_size, self.cfg.dim],
                actual: vec![emb.rows(), emb.dim()],
            });
        }
        for (dst, &src) in self.embedding.data_mut().iter_mut().zip(emb.data()) {
            *dst = T::lit(src as f64);
        }
        Ok(())
    }

    fn embed(&self, id: TokenId) -> Vec<T> {
        self.embedding.row(id as usize).to_vec()
    }

    /// Run the encoder. `src` must be non-empty.
    pub fn encode(&self, src: &[TokenId]) -> Encoded<T> {
        assert!(!src.is_empty(), "encode requires at least one token");
        let h = self.cfg.hidden;
        let zeros = vec![T::zero(); h];
        let x: Vec<Vec<T>> = src.iter().map(|&t| self.embed(t)).collect();
        let fw1 = self.enc_fw1.run(&x, &zeros, &zeros, false);
        let bw1 = self.enc_bw1.run(&x, &zeros, &zeros, true);
        let l1: Vec<Vec<T>> = fw1.iter().zip(&bw1).map(|(f, b)| concat(&f.h, &b.h)).collect();
        let fw2 = self.enc_fw2.run(&l1, &zeros, &zeros, false);
        let bw2 = self.enc_bw2.run(&l1, &zeros, &zeros, true);
        let states: Vec<Vec<T>> = fw2.iter().zip(&bw2).map(|(f, b)| concat(&f.h, &b.h)).collect();
        let proj = states
            .iter()
            .map(|s| {
                let mut p = vec![T::zero(); h];
                matvec_add(&mut p, self.att_enc.data(), s);
                p
            })
            .collect();
        let bridge_in = concat(&fw2[src.len() - 1].h, &bw2[0].h);
        let mut s0 = self.bridge_b.data().to_vec();
        matvec_add(&mut s0, self.bridge_w.data(), &bridge_in);
        s0.iter_mut().for_each(|v| *v = v.tanh());
        Encoded {
            src: src.to_vec(),
            fw1,
            bw1,
            fw2,
            bw2,
            states,
            proj,
            bridge_in,
            s0,
        }
    }

    pub fn attend(&self, enc: &Encoded<T>, s: &[T]) -> Attention<T> {
        let h = self.cfg.hidden;
        let mut q = self.att_b.data().to_vec();
        matvec_add(&mut q, self.att_dec.data(), s);
        let u: Vec<Vec<T>> = enc
            .proj
            .iter()
            .map(|p| p.iter().zip(&q).map(|(&a, &b)| (a + b).tanh()).collect())
            .collect();
        let scores: Vec<T> = u.iter().map(|ui| dot(ui, self.att_v.data())).collect();
        let weights = softmax(&scores);
        let mut context = vec![T::zero(); 2 * h];
        for (a, hs) in weights.iter().zip(&enc.states) {
            axpy(&mut context, *a, hs);
        }
        Attention { u, weights, context }
    }

    pub fn decode_step(&self, enc: &Encoded<T>, prev: TokenId, h_prev: &[T], c_prev: &[T]) -> DecodeStep<T> {
        let lstm = self.dec.step(&self.embed(prev), h_prev, c_prev);
        let attention = self.attend(enc, &lstm.h);
        let mut logits = self.out_b.data().to_vec();
        matvec_add(&mut logits, self.out_w.data(), &concat(&lstm.h, &attention.context));
        DecodeStep {
            lstm,
            attention,
            logits,
        }
    }

    /// Log-distribution over the vocabulary after `prev`.
    pub fn step_log_probs(&self, enc: &Encoded<T>, prev: TokenId, h: &[T], c: &[T]) -> (Vec<T>, Vec<T>, Vec<f64>) {
        let step = self.decode_step(enc, prev, h, c);
        let lp = log_softmax(&step.logits).into_iter().map(|v| v.to_f64().unwrap_or(f64::NEG_INFINITY)).collect();
        (step.lstm.h, step.lstm.c, lp)
    }

    fn teacher_forced(&self, src: &[TokenId], tgt: &[TokenId]) -> (Encoded<T>, Vec<DecodeStep<T>>, Vec<TokenId>) {
        let enc = self.encode(src);
        let mut inputs = vec![BOS];
        inputs.extend_from_slice(tgt);
        let mut targets = tgt.to_vec();
        targets.push(EOS);
        let mut h = enc.s0.clone();
        let mut c = vec![T::zero(); self.cfg.hidden];
        let mut steps = Vec::with_capacity(inputs.len());
        for &prev in &inputs {
            let s = self.decode_step(&enc, prev, &h, &c);
            h.clone_from(&s.lstm.h);
            c.clone_from(&s.lstm.c);
            steps.push(s);
        }
        (enc, steps, targets)
    }

    /// Summed token NLL of `tgt ⊕ EOS` given `src`, and the token count.
    pub fn sequence_loss(&self, src: &[TokenId], tgt: &[TokenId]) -> (T, usize) {
        let (_, steps, targets) = self.teacher_forced(src, tgt);
        let loss = steps
            .iter()
            .zip(&targets)
            .map(|(s, &y)| -log_softmax(&s.logits)[y as usize])
            .sum();
        (loss, targets.len())
    }

    /// Forward and backward for one pair. Gradients of the summed NLL are
    /// accumulated into `g`; returns `(summed loss, token count)`.
    pub fn accumulate_gradients(&self, src: &[TokenId], tgt: &[TokenId], g: &mut Seq2Seq<T>) -> (T, usize) {
        let h = self.cfg.hidden;
        let (enc, steps, targets) = self.teacher_forced(src, tgt);
        let n_src = enc.states.len();
        let mut d_states = vec![vec![T::zero(); 2 * h]; n_src];
        let mut d_proj = vec![vec![T::zero(); h]; n_src];
        let mut d_dec_h = Vec::with_capacity(steps.len());
        let mut loss = T::zero();

        for (step, &y) in steps.iter().zip(&targets) {
            let (l, dlogits) = cross_entropy(&step.logits, y as usize);
            loss += l;
            let out_in = concat(&step.lstm.h, &step.attention.context);
            outer_add(g.out_w.data_mut(), &dlogits, &out_in);
            axpy(g.out_b.data_mut(), T::one(), &dlogits);
            let mut d_out_in = vec![T::zero(); 3 * h];
            matvec_t_add(&mut d_out_in, self.out_w.data(), &dlogits);
            let mut ds = d_out_in[..h].to_vec();
            let dctx = &d_out_in[h..];

            let att = &step.attention;
            let mut da = vec![T::zero(); n_src];
            for i in 0..n_src {
                axpy(&mut d_states[i], att.weights[i], dctx);
                da[i] = dot(dctx, &enc.states[i]);
            }
            let mean: T = att.weights.iter().zip(&da).map(|(&a, &d)| a * d).sum();
            let mut dq = vec![T::zero(); h];
            for i in 0..n_src {
                let de = att.weights[i] * (da[i] - mean);
                if de == T::zero() {
                    continue;
                }
                axpy(g.att_v.data_mut(), de, &att.u[i]);
                for j in 0..h {
                    let u = att.u[i][j];
                    let dpre = de * self.att_v.data()[j] * (T::one() - u * u);
                    d_proj[i][j] += dpre;
                    dq[j] += dpre;
                }
            }
            axpy(g.att_b.data_mut(), T::one(), &dq);
            outer_add(g.att_dec.data_mut(), &dq, &step.lstm.h);
            matvec_t_add(&mut ds, self.att_dec.data(), &dq);
            d_dec_h.push(ds);
        }

        let dec_steps: Vec<LstmStep<T>> = steps.iter().map(|s| s.lstm.clone()).collect();
        let (dx, ds0, _) = self.dec.backward_run(&dec_steps, &d_dec_h, false, &mut g.dec);
        let mut prev = BOS;
        for (t, dxt) in dx.iter().enumerate() {
            axpy(g.embedding.row_mut(prev as usize), T::one(), dxt);
            if t < tgt.len() {
                prev = tgt[t];
            }
        }

        for i in 0..n_src {
            outer_add(g.att_enc.data_mut(), &d_proj[i], &enc.states[i]);
            matvec_t_add(&mut d_states[i], self.att_enc.data(), &d_proj[i]);
        }
        self.backward_encoder(&enc, d_states, &ds0, g);
        (loss, targets.len())
    }

    fn backward_encoder(&self, enc: &Encoded<T>, d_states: Vec<Vec<T>>, ds0: &[T], g: &mut Seq2Seq<T>) {
        let h = self.cfg.hidden;
        let n = enc.states.len();
        let dpre: Vec<T> = ds0.iter().zip(&enc.s0).map(|(&d, &s)| d * (T::one() - s * s)).collect();
        axpy(g.bridge_b.data_mut(), T::one(), &dpre);
        outer_add(g.bridge_w.data_mut(), &dpre, &enc.bridge_in);
        let mut d_bridge_in = vec![T::zero(); 2 * h];
        matvec_t_add(&mut d_bridge_in, self.bridge_w.data(), &dpre);

        let mut d_fw2: Vec<Vec<T>> = d_states.iter().map(|d| d[..h].to_vec()).collect();
        let mut d_bw2: Vec<Vec<T>> = d_states.iter().map(|d| d[h..].to_vec()).collect();
        axpy(&mut d_fw2[n - 1], T::one(), &d_bridge_in[..h]);
        axpy(&mut d_bw2[0], T::one(), &d_bridge_in[h..]);

        let (dl1_f, _, _) = self.enc_fw2.backward_run(&enc.fw2, &d_fw2, false, &mut g.enc_fw2);
        let (dl1_b, _, _) = self.enc_bw2.backward_run(&enc.bw2, &d_bw2, true, &mut g.enc_bw2);
        let d_fw1: Vec<Vec<T>> = (0..n)
            .map(|i| dl1_f[i][..h].iter().zip(&dl1_b[i][..h]).map(|(&a, &b)| a + b).collect())
            .collect();
        let d_bw1: Vec<Vec<T>> = (0..n)
            .map(|i| dl1_f[i][h..].iter().zip(&dl1_b[i][h..]).map(|(&a, &b)| a + b).collect())
            .collect();
        let (dx_f, _, _) = self.enc_fw1.backward_run(&enc.fw1, &d_fw1, false, &mut g.enc_fw1);
        let (dx_b, _, _) = self.enc_bw1.backward_run(&enc.bw1, &d_bw1, true, &mut g.enc_bw1);
        for (i, &tok) in enc.src.iter().enumerate() {
            let row = g.embedding.row_mut(tok as usize);
            axpy(row, T::one(), &dx_f[i]);
            axpy(row, T::one(), &dx_b[i]);
        }
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        encode_checkpoint(MODEL_NAME, serde_json::to_value(self.cfg)?, &self.tensors())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_model(MODEL_NAME)?;
        let cfg: Seq2SeqConfig = serde_json::from_value(ck.header.hyperparameters.clone())?;
        let mut m = Self::new(cfg, 0)?;
        for (name, t) in m.tensors_mut() {
            ck.load_into(&name, t)?;
        }
        Ok(m)
    }
}

impl<T: Scalar> Params<T> for Seq2Seq<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = vec![("embedding".to_string(), &self.embedding)];
        v.extend(self.enc_fw1.named("enc.fw1"));
        v.extend(self.enc_bw1.named("enc.bw1"));
        v.extend(self.enc_fw2.named("enc.fw2"));
        v.extend(self.enc_bw2.named("enc.bw2"));
        v.push(("bridge.w".into(), &self.bridge_w));
        v.push(("bridge.b".into(), &self.bridge_b));
        v.extend(self.dec.named("dec"));
        v.push(("att.enc".into(), &self.att_enc));
        v.push(("att.dec".into(), &self.att_dec));
        v.push(("att.b".into(), &self.att_b));
        v.push(("att.v".into(), &self.att_v));
        v.push(("out.w".into(), &self.out_w));
        v.push(("out.b".into(), &self.out_b));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = vec![("embedding".to_string(), &mut self.embedding)];
        v.extend(self.enc_fw1.named_mut("enc.fw1"));
        v.extend(self.enc_bw1.named_mut("enc.bw1"));
        v.extend(self.enc_fw2.named_mut("enc.fw2"));
        v.extend(self.enc_bw2.named_mut("enc.bw2"));
        v.push(("bridge.w".into(), &mut self.bridge_w));
        v.push(("bridge.b".into(), &mut self.bridge_b));
        v.extend(self.dec.named_mut("dec"));
        v.push(("att.enc".into(), &mut self.att_enc));
        v.push(("att.dec".into(), &mut self.att_dec));
        v.push(("att.b".into(), &mut self.att_b));
        v.push(("att.v".into(), &mut self.att_v));
        v.push(("out.w".into(), &mut self.out_w));
        v.push(("out.b".into(), &mut self.out_b));
        v
    }
}
