//! Multi-stage batch pipeline over a workspace directory, plus one-shot
//! recommendation and the line-protocol server.

mod config;
pub mod manifest;
mod serve;

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::PipelineConfig;
pub use manifest::Manifest;
pub use serve::{handle_request, recommend, serve, RecommendState, Recommendation, RecommendedAnswer};

use crate::corpus::text::tokenize;
use crate::corpus::{
    compute_hunger_stats, cq_answer_probability, extract_clarifying_questions, parse_comments, parse_posts, Answer, ClarifyingQuestion,
    Comment, Corpus, CqProbability, HungerStats, ParseReport, Post, Timestamp,
};
use crate::error::Error;
use crate::eval::{self, build_pools, CandidatePool, EvalReport, OracleScorer, RankerScorer, SweepRow};
use crate::labeling::{establish_labels, LabelReport, LabeledQAPair};
use crate::neural::checkpoint::Checkpoint;
use crate::qboost::{self, boost, BoostConfig, BoostedQuestion, Pair, Seq2Seq, Seq2SeqConfig, TrainConfig};
use crate::ranker::{self, distributions, tune_weights, Example, Ranker, RankerConfig, ScoreWeights, ScoredPool, FILTER_WIDTHS};
use crate::retrieval::{read_jsonl, train_embeddings, EmbeddingMatrix, IndexedTitle, RetrievalIndex, SkipGramConfig, TokenId, Vocabulary};

/// Failures of a CLI stage, mapped onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("{0}")]
    StageOrder(String),
    #[error("the retrieval index is empty")]
    EmptyIndex,
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Other(#[from] Error),
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::MissingInput(_) => 2,
            StageError::StageOrder(_) => 3,
            StageError::EmptyIndex => 4,
            StageError::Bind { .. } => 5,
            StageError::Other(_) => 1,
        }
    }
}

impl From<serde_json::Error> for StageError {
    fn from(e: serde_json::Error) -> Self {
        StageError::Other(e.into())
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

pub const POSTS: &str = "corpus/posts.jsonl";
pub const ANSWERS: &str = "corpus/answers.jsonl";
pub const COMMENTS: &str = "corpus/comments.jsonl";
pub const CQ: &str = "corpus/cq.jsonl";
pub const INGEST_SUMMARY: &str = "corpus/ingest_summary.json";
pub const SPLIT: &str = "corpus/split.json";
pub const INDEX_DIR: &str = "index";
pub const INDEX_FILES: [&str; 4] = ["index/vocab.jsonl", "index/titles.jsonl", "index/meta.json", "index/embeddings.bin"];
pub const QBOOST_CKPT: &str = "qboost/model.ckpt";
pub const QBOOST_HISTORY: &str = "qboost/history.json";
pub const BOOSTED: &str = "label/boosted.jsonl";
pub const LABELED: &str = "label/labeled_pairs.jsonl";
pub const LABEL_REPORT: &str = "label/report.json";

/// Which ranker configuration a stage works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Variant {
    pub drop_cq: bool,
    pub drop_labeling: bool,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match (self.drop_cq, self.drop_labeling) {
            (false, false) => "full",
            (true, false) => "drop_cq",
            (false, true) => "drop_labeling",
            (true, true) => "drop_cq_drop_labeling",
        }
    }

    pub fn classes(&self) -> usize {
        if self.drop_labeling {
            2
        } else {
            4
        }
    }

    pub fn ranker_ckpt(&self) -> String {
        format!("ranker/{}/model.ckpt", self.name())
    }

    pub fn ranker_history(&self) -> String {
        format!("ranker/{}/history.json", self.name())
    }

    pub fn weights(&self) -> String {
        format!("tune/{}/weights.json", self.name())
    }

    pub fn tune_report(&self) -> String {
        format!("tune/{}/report.json", self.name())
    }

    pub fn eval_dir(&self) -> String {
        format!("eval/{}", self.name())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<u64>,
    pub valid: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub posts: ParseReport,
    pub comments: ParseReport,
    pub n_questions: usize,
    pub n_answers: usize,
    pub n_comments: usize,
    pub n_clarifying_questions: usize,
    pub vocab_size: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoostedRecord {
    pub qid: u64,
    #[serde(flatten)]
    pub boosted: BoostedQuestion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub hunger: HungerStats,
    pub clarifying: CqProbability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub weights: ScoreWeights,
    pub n_pools: usize,
    pub valid_p1_unit: f64,
    pub valid_p1_tuned: f64,
}

/// Shared context of every stage.
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub force: bool,
}

fn seed_for(seed: u64, stage: u64) -> u64 {
    seed.wrapping_add(stage.wrapping_mul(0x9E37_79B9))
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Self {
        Pipeline { cfg, force: false }
    }

    pub fn ws(&self) -> &Path {
        &self.cfg.workspace
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.cfg.workspace.join(rel)
    }

    fn config_text(&self) -> String {
        self.cfg.to_text()
    }

    fn finish(&self, stage: &str, inputs: &[PathBuf], outputs: &[&str]) -> StageResult<Manifest> {
        let outputs: Vec<PathBuf> = outputs.iter().map(PathBuf::from).collect();
        let m = Manifest::record(stage, &self.config_text(), self.ws(), inputs, &outputs)?;
        m.save(self.ws())?;
        Ok(m)
    }

    fn require(&self, stage: &str, needed_by: &str) -> StageResult<Manifest> {
        manifest::require(self.ws(), stage, needed_by, self.force)
    }

    fn upstream_outputs(manifests: &[&Manifest]) -> Vec<PathBuf> {
        manifests.iter().flat_map(|m| m.outputs.keys().map(PathBuf::from)).collect()
    }

    // ---- loading helpers ----

    pub fn load_corpus(&self) -> StageResult<Corpus> {
        let posts: Vec<Post> = read_jsonl(&self.path(POSTS))?;
        let answers: Vec<Answer> = read_jsonl(&self.path(ANSWERS))?;
        let comments: Vec<Comment> = read_jsonl(&self.path(COMMENTS))?;
        Ok(Corpus::new(posts, answers, comments))
    }

    pub fn load_split(&self) -> StageResult<Split> {
        read_json(&self.path(SPLIT))
    }

    pub fn load_index(&self) -> StageResult<RetrievalIndex> {
        Ok(RetrievalIndex::load(&self.path(INDEX_DIR))?)
    }

    pub fn load_qboost(&self) -> StageResult<Seq2Seq<f32>> {
        let ck = Checkpoint::read(&self.path(QBOOST_CKPT))?;
        Ok(Seq2Seq::from_checkpoint(&ck)?)
    }

    pub fn load_ranker(&self, v: Variant) -> StageResult<Ranker<f32>> {
        let ck = Checkpoint::read(&self.path(&v.ranker_ckpt()))?;
        Ok(Ranker::from_checkpoint(&ck)?)
    }

    pub fn load_weights(&self, v: Variant) -> StageResult<ScoreWeights> {
        read_json(&self.path(&v.weights()))
    }

    pub fn load_boosted(&self) -> StageResult<HashMap<u64, BoostedQuestion>> {
        let recs: Vec<BoostedRecord> = read_jsonl(&self.path(BOOSTED))?;
        Ok(recs.into_iter().map(|r| (r.qid, r.boosted)).collect())
    }

    /// The ranker's question side: boosted, or the bare title when the
    /// clarifying question is dropped.
    pub fn query_form(&self, v: Variant, post: &Post, boosted: &HashMap<u64, BoostedQuestion>) -> BoostedQuestion {
        if v.drop_cq {
            bare_question(&tokenize(&post.title), self.cfg.max_question_len)
        } else {
            boosted
                .get(&post.id)
                .cloned()
                .unwrap_or_else(|| bare_question(&tokenize(&post.title), self.cfg.max_question_len))
        }
    }

    pub fn boost_config(&self) -> BoostConfig {
        BoostConfig {
            beam: self.cfg.beam,
            max_len: self.cfg.max_len,
            max_question_len: self.cfg.max_question_len,
        }
    }

    // ---- stages ----

    pub fn ingest(&self) -> StageResult<IngestSummary> {
        let dump = &self.cfg.dump_dir;
        let posts_xml = dump.join("Posts.xml");
        let comments_xml = dump.join("Comments.xml");
        for f in [&posts_xml, &comments_xml] {
            if !f.is_file() {
                return Err(StageError::MissingInput(format!("{} not found", f.display())));
            }
        }
        let links_xml = dump.join("PostLinks.xml");
        let links = links_xml.is_file().then_some(links_xml.as_path());
        let parsed = parse_posts(&posts_xml, links)?;
        let (comments, comment_report) = parse_comments(&comments_xml, &parsed.posts)?;
        let cqs = extract_clarifying_questions(&comments, &parsed.posts, Some(&self.cfg.cq_filter()));
        info!(
            "ingested {} questions, {} answers, {} comments, {} clarifying questions",
            parsed.posts.len(),
            parsed.answers.len(),
            comments.len(),
            cqs.len()
        );

        manifest::write_jsonl_atomic(&self.path(POSTS), &parsed.posts)?;
        manifest::write_jsonl_atomic(&self.path(ANSWERS), &parsed.answers)?;
        manifest::write_jsonl_atomic(&self.path(COMMENTS), &comments)?;
        manifest::write_jsonl_atomic(&self.path(CQ), &cqs)?;

        let corpus = Corpus::new(parsed.posts.clone(), parsed.answers.clone(), comments.clone());
        let streams: Vec<Vec<String>> = corpus
            .posts
            .iter()
            .flat_map(|p| [tokenize(&p.title), tokenize(&p.body)])
            .chain(corpus.answers.iter().map(|a| tokenize(&a.body)))
            .chain(corpus.comments.iter().map(|c| tokenize(&c.text)))
            .collect();
        let vocab = Vocabulary::build(streams.iter().cloned(), self.cfg.vocab_cap)?;
        let embeddings = match &self.cfg.embeddings_path {
            Some(p) => {
                if !p.is_file() {
                    return Err(StageError::MissingInput(format!("{} not found", p.display())));
                }
                EmbeddingMatrix::load_text(&vocab, p)?
            }
            None => {
                let encoded: Vec<Vec<TokenId>> = streams.iter().map(|s| vocab.encode(s)).collect();
                let sg = SkipGramConfig {
                    dim: self.cfg.d,
                    epochs: self.cfg.emb_epochs,
                    window: self.cfg.emb_window,
                    negatives: self.cfg.emb_negatives,
                    learning_rate: self.cfg.emb_lr as f32,
                    seed: seed_for(self.cfg.seed, 1),
                };
                train_embeddings(&encoded, vocab.len(), &sg)?
            }
        };
        if embeddings.dim() != self.cfg.d {
            return Err(Error::Argument(format!("embedding width {} differs from d = {}", embeddings.dim(), self.cfg.d)).into());
        }
        let titles: Vec<IndexedTitle> = corpus
            .posts
            .iter()
            .map(|p| IndexedTitle {
                id: p.id,
                tokens: tokenize(&p.title),
            })
            .collect();
        let vocab_size = vocab.len();
        let index = RetrievalIndex::build(vocab, embeddings, titles)?;
        save_index_atomic(&index, &self.path(INDEX_DIR))?;

        let split = make_split(&corpus, self.cfg.n_test, self.cfg.n_valid, seed_for(self.cfg.seed, 2));
        manifest::write_json_atomic(&self.path(SPLIT), &split)?;

        let summary = IngestSummary {
            posts: parsed.report,
            comments: comment_report,
            n_questions: corpus.posts.len(),
            n_answers: corpus.answers.len(),
            n_comments: corpus.comments.len(),
            n_clarifying_questions: cqs.len(),
            vocab_size,
            n_train: split.train.len(),
            n_valid: split.valid.len(),
            n_test: split.test.len(),
        };
        manifest::write_json_atomic(&self.path(INGEST_SUMMARY), &summary)?;

        let mut inputs = vec![posts_xml, comments_xml];
        if let Some(l) = links {
            inputs.push(l.to_path_buf());
        }
        if let Some(p) = &self.cfg.embeddings_path {
            inputs.push(p.clone());
        }
        let inputs: Vec<PathBuf> = inputs.into_iter().map(|p| std::path::absolute(&p).unwrap_or(p)).collect();
        let mut outputs = vec![POSTS, ANSWERS, COMMENTS, CQ, SPLIT, INGEST_SUMMARY];
        outputs.extend(INDEX_FILES);
        self.finish("ingest", &inputs, &outputs)?;
        Ok(summary)
    }

    pub fn stats(&self) -> StageResult<StatsReport> {
        self.require("ingest", "stats")?;
        let corpus = self.load_corpus()?;
        let dump_date = corpus.latest_timestamp().unwrap_or(Timestamp(chrono::DateTime::UNIX_EPOCH.naive_utc()));
        Ok(StatsReport {
            hunger: compute_hunger_stats(&corpus.posts, &corpus.answers),
            clarifying: cq_answer_probability(&corpus.posts, &corpus.answers, &corpus.comments, dump_date),
        })
    }

    pub fn train_qboost(&self) -> StageResult<qboost::TrainHistory> {
        let up = self.require("ingest", "train-qboost")?;
        let corpus = self.load_corpus()?;
        let split = self.load_split()?;
        let index = self.load_index()?;
        let cqs: Vec<ClarifyingQuestion> = read_jsonl(&self.path(CQ))?;
        let to_pairs = |ids: &[u64]| -> Vec<Pair> {
            let ids: BTreeSet<u64> = ids.iter().copied().collect();
            cqs.iter()
                .filter(|c| ids.contains(&c.post_id))
                .filter_map(|c| {
                    let post = corpus.post(c.post_id)?;
                    let mut src = index.vocab.encode(&tokenize(&post.title));
                    src.truncate(self.cfg.max_question_len);
                    Some(Pair {
                        src,
                        tgt: index.vocab.encode(&c.tokens),
                    })
                })
                .collect()
        };
        let train = to_pairs(&split.train);
        let valid = to_pairs(&split.valid);
        if train.is_empty() {
            return Err(Error::Argument("no clarifying questions in the training split".into()).into());
        }
        info!("training qboost on {} pairs ({} validation)", train.len(), valid.len());
        let mcfg = Seq2SeqConfig {
            vocab_size: index.vocab.len(),
            dim: self.cfg.d,
            hidden: self.cfg.hidden,
        };
        let mut model = Seq2Seq::<f32>::new(mcfg, seed_for(self.cfg.seed, 3))?;
        model.load_embeddings(&index.embeddings)?;
        let tc = TrainConfig {
            epochs: self.cfg.qboost_epochs,
            batch: self.cfg.qboost_batch,
            lr: self.cfg.qboost_lr as f32,
            patience: self.cfg.qboost_patience,
            clip: self.cfg.grad_clip as f32,
            seed: seed_for(self.cfg.seed, 4),
        };
        let (model, history) = qboost::train(model, &train, &valid, &tc)?;
        manifest::write_atomic(&self.path(QBOOST_CKPT), &model.to_checkpoint()?)?;
        manifest::write_json_atomic(&self.path(QBOOST_HISTORY), &history)?;
        self.finish("train-qboost", &Self::upstream_outputs(&[&up]), &[QBOOST_CKPT, QBOOST_HISTORY])?;
        Ok(history)
    }

    pub fn label(&self) -> StageResult<LabelReport> {
        let up1 = self.require("ingest", "label")?;
        let up2 = self.require("train-qboost", "label")?;
        let corpus = self.load_corpus()?;
        let split = self.load_split()?;
        let index = self.load_index()?;
        let model = self.load_qboost()?;
        let bc = self.boost_config();
        let boosted: Vec<BoostedRecord> = corpus
            .posts
            .par_iter()
            .map(|p| BoostedRecord {
                qid: p.id,
                boosted: boost(&model, &index.vocab, &tokenize(&p.title), &bc),
            })
            .collect();
        manifest::write_jsonl_atomic(&self.path(BOOSTED), &boosted)?;

        let (pairs, report) = establish_labels(&labeling_corpus(&corpus, &split), &index, self.cfg.k_sim, seed_for(self.cfg.seed, 5));
        info!("labeled pairs per class (pos, neu+, neu-, neg): {:?}", report.counts);
        manifest::write_jsonl_atomic(&self.path(LABELED), &pairs)?;
        manifest::write_json_atomic(&self.path(LABEL_REPORT), &report)?;
        self.finish("label", &Self::upstream_outputs(&[&up1, &up2]), &[BOOSTED, LABELED, LABEL_REPORT])?;
        Ok(report)
    }

    /// Training and validation examples for a ranker variant.
    pub fn ranker_examples(&self, v: Variant) -> StageResult<(Vec<Example>, Vec<Example>)> {
        let corpus = self.load_corpus()?;
        let split = self.load_split()?;
        let index = self.load_index()?;
        let boosted = self.load_boosted()?;
        let pairs: Vec<LabeledQAPair> = read_jsonl(&self.path(LABELED))?;
        let valid_ids: BTreeSet<u64> = split.valid.iter().copied().collect();
        let mut train = Vec::new();
        let mut valid = Vec::new();
        for p in &pairs {
            let Some(post) = corpus.post(p.qid) else { continue };
            let q = self.query_form(v, post, &boosted);
            let mut a = index.vocab.encode(&p.a_tokens);
            a.truncate(self.cfg.max_answer_len);
            let ex = Example {
                q: index.vocab.encode(&q.joined),
                a,
                label: p.label.class_index(v.drop_labeling),
            };
            if valid_ids.contains(&p.qid) {
                valid.push(ex);
            } else {
                train.push(ex);
            }
        }
        Ok((train, valid))
    }

    pub fn train_ranker(&self, v: Variant) -> StageResult<ranker::RankerHistory> {
        let stage = format!("train-ranker-{}", v.name());
        let up = self.require("label", &stage)?;
        let index = self.load_index()?;
        let (train, valid) = self.ranker_examples(v)?;
        if train.is_empty() {
            return Err(Error::Argument("no labeled training pairs".into()).into());
        }
        info!("training ranker ({}) on {} pairs ({} validation)", v.name(), train.len(), valid.len());
        let rcfg = RankerConfig {
            vocab_size: index.vocab.len(),
            dim: self.cfg.d,
            maps: self.cfg.maps,
            widths: FILTER_WIDTHS.to_vec(),
            classes: v.classes(),
            max_question_len: self.cfg.max_question_len,
            max_answer_len: self.cfg.max_answer_len,
            shared_branches: self.cfg.shared_branches,
        };
        let mut model = Ranker::<f32>::new(rcfg, seed_for(self.cfg.seed, 6))?;
        model.load_embeddings(&index.embeddings)?;
        let tc = TrainConfig {
            epochs: self.cfg.ranker_epochs,
            batch: self.cfg.ranker_batch,
            lr: self.cfg.ranker_lr as f32,
            patience: self.cfg.ranker_patience,
            clip: self.cfg.grad_clip as f32,
            seed: seed_for(self.cfg.seed, 7),
        };
        let (model, history) = ranker::train(model, &train, &valid, &tc)?;
        manifest::write_atomic(&self.path(&v.ranker_ckpt()), &model.to_checkpoint()?)?;
        manifest::write_json_atomic(&self.path(&v.ranker_history()), &history)?;
        self.finish(&stage, &Self::upstream_outputs(&[&up]), &[&v.ranker_ckpt(), &v.ranker_history()])?;
        Ok(history)
    }

    /// Candidate pools over the given questions at pool size `k`.
    pub fn pools(&self, v: Variant, ids: &[u64], k: usize, corpus: &Corpus, index: &RetrievalIndex) -> StageResult<Vec<CandidatePool>> {
        let boosted = if v.drop_cq { HashMap::new() } else { self.load_boosted()? };
        let posts: Vec<&Post> = ids.iter().filter_map(|id| corpus.post(*id)).collect();
        let booster = |p: &Post| self.query_form(v, p, &boosted);
        let (pools, report) = build_pools(&posts, corpus, index, &booster, k);
        info!("built {} pools of size {k} ({} short)", report.built, report.short_pools);
        Ok(pools)
    }

    pub fn tune(&self, v: Variant) -> StageResult<TuneReport> {
        let stage = format!("tune-{}", v.name());
        let up = self.require(&format!("train-ranker-{}", v.name()), &stage)?;
        let corpus = self.load_corpus()?;
        let split = self.load_split()?;
        let index = self.load_index()?;
        let model = self.load_ranker(v)?;
        let pools = self.pools(v, &split.valid, self.cfg.k, &corpus, &index)?;
        let answers = answer_tokens(&corpus, &index.vocab, self.cfg.max_answer_len);
        let scored: Vec<ScoredPool> = pools
            .iter()
            .map(|p| {
                let q = index.vocab.encode(&p.boosted.joined);
                let cands: Vec<(u64, Vec<TokenId>)> = p.candidates.iter().map(|c| (c.aid, answers.get(&c.aid).cloned().unwrap_or_default())).collect();
                let d = distributions(&model, &q, &cands)?;
                Ok(ScoredPool {
                    candidates: cands.iter().map(|c| c.0).zip(d).collect(),
                    accepted: p.accepted_aid(),
                })
            })
            .collect::<crate::error::Result<_>>()?;
        // the binary model scores p_pos - p_neg, so its weights stay at one
        let weights = if v.drop_labeling { ScoreWeights::UNIT } else { tune_weights(&scored) };
        let report = TuneReport {
            weights,
            n_pools: scored.len(),
            valid_p1_unit: ranker::pool_precision_at_1(&scored, &ScoreWeights::UNIT),
            valid_p1_tuned: ranker::pool_precision_at_1(&scored, &weights),
        };
        info!("tuned weights {:?}: validation P@1 {:.3} -> {:.3}", weights, report.valid_p1_unit, report.valid_p1_tuned);
        manifest::write_json_atomic(&self.path(&v.weights()), &weights)?;
        manifest::write_json_atomic(&self.path(&v.tune_report()), &report)?;
        self.finish(&stage, &Self::upstream_outputs(&[&up]), &[&v.weights(), &v.tune_report()])?;
        Ok(report)
    }

    fn eval_config(&self, v: Variant, k: usize, scorer: &str) -> serde_json::Value {
        serde_json::json!({
            "variant": v.name(),
            "scorer": scorer,
            "k": k,
            "seed": self.cfg.seed,
            "d": self.cfg.d,
            "hidden": self.cfg.hidden,
            "maps": self.cfg.maps,
            "beam": self.cfg.beam,
            "shared_branches": self.cfg.shared_branches,
        })
    }

    /// Evaluate on the test split. With `oracle`, the accepted answer is
    /// ranked first regardless of the model.
    pub fn evaluate(&self, v: Variant, k: usize, sweep: Option<(usize, usize)>, oracle: bool) -> StageResult<EvaluateOutput> {
        let stage = if oracle { "evaluate-oracle".to_string() } else { format!("evaluate-{}", v.name()) };
        let up = if oracle { self.require("label", &stage)? } else { self.require(&format!("tune-{}", v.name()), &stage)? };
        let corpus = self.load_corpus()?;
        let split = self.load_split()?;
        let index = self.load_index()?;
        let dir = if oracle { "eval/oracle".to_string() } else { v.eval_dir() };
        let answers = answer_tokens(&corpus, &index.vocab, self.cfg.max_answer_len);
        let model = if oracle { None } else { Some((self.load_ranker(v)?, self.load_weights(v)?)) };
        let run = |k: usize| -> StageResult<(Vec<usize>, EvalReport)> {
            let pools = self.pools(v, &split.test, k, &corpus, &index)?;
            let name = if oracle { "oracle" } else { "ranker" };
            let ranks = match &model {
                None => eval::accepted_ranks(&pools, &OracleScorer)?,
                Some((m, w)) => eval::accepted_ranks(
                    &pools,
                    &RankerScorer {
                        model: m,
                        weights: *w,
                        vocab: &index.vocab,
                        answers: &answers,
                    },
                )?,
            };
            let report = eval::report_from_ranks(&ranks, self.eval_config(v, k, name));
            Ok((ranks, report))
        };

        let (_, report) = run(k)?;
        let mut outputs = vec![format!("{dir}/report.json"), format!("{dir}/report.txt")];
        manifest::write_json_atomic(&self.path(&outputs[0]), &report)?;
        manifest::write_atomic(&self.path(&outputs[1]), report.table().as_bytes())?;

        let mut rows = Vec::new();
        if let Some((lo, hi)) = sweep {
            for kk in lo..=hi {
                let (ranks, r) = run(kk)?;
                let path = format!("{dir}/sweep/k{kk}.json");
                manifest::write_json_atomic(&self.path(&path), &r)?;
                outputs.push(path);
                rows.push(eval::sweep_row(kk, &ranks));
            }
            let (json, txt) = (format!("{dir}/sweep.json"), format!("{dir}/sweep.txt"));
            manifest::write_json_atomic(&self.path(&json), &rows)?;
            manifest::write_atomic(&self.path(&txt), eval::sweep_table(&rows).as_bytes())?;
            outputs.push(json);
            outputs.push(txt);
        }
        let outs: Vec<&str> = outputs.iter().map(String::as_str).collect();
        self.finish(&stage, &Self::upstream_outputs(&[&up]), &outs)?;
        Ok(EvaluateOutput { report, sweep: rows })
    }

    /// Load everything `recommend` and `serve` need.
    pub fn recommend_state(&self, v: Variant) -> StageResult<RecommendState> {
        self.require(&format!("tune-{}", v.name()), "recommend")?;
        let corpus = self.load_corpus()?;
        let index = self.load_index()?;
        let qboost = if v.drop_cq { None } else { Some(self.load_qboost()?) };
        let ranker = self.load_ranker(v)?;
        let weights = self.load_weights(v)?;
        let answers = answer_tokens(&corpus, &index.vocab, self.cfg.max_answer_len);
        Ok(RecommendState {
            corpus,
            index,
            qboost,
            ranker,
            weights,
            answers,
            boost: self.boost_config(),
            default_k: self.cfg.k,
            excerpt_chars: self.cfg.excerpt_chars,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOutput {
    pub report: EvalReport,
    pub sweep: Vec<SweepRow>,
}

pub fn bare_question(title: &[String], max_len: usize) -> BoostedQuestion {
    let mut joined = title.to_vec();
    joined.truncate(max_len);
    BoostedQuestion {
        original: title.to_vec(),
        cq: Vec::new(),
        joined,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> StageResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?)
}

fn save_index_atomic(index: &RetrievalIndex, dir: &Path) -> StageResult<()> {
    let tmp = dir.with_extension("tmp");
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    index.save(&tmp)?;
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

/// Test and validation questions are drawn from resolved questions with a
/// non-empty accepted answer; everything else trains.
pub fn make_split(corpus: &Corpus, n_test: usize, n_valid: usize, seed: u64) -> Split {
    let mut eligible: Vec<u64> = corpus
        .posts
        .iter()
        .filter(|p| corpus.accepted_answer(p).is_some_and(|a| !tokenize(&a.body).is_empty()))
        .map(|p| p.id)
        .collect();
    eligible.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = n_test.min(eligible.len());
    let n_valid = n_valid.min(eligible.len() - n_test);
    let mut test = eligible[..n_test].to_vec();
    let mut valid = eligible[n_test..n_test + n_valid].to_vec();
    test.sort_unstable();
    valid.sort_unstable();
    let held: BTreeSet<u64> = test.iter().chain(&valid).copied().collect();
    let train = corpus.posts.iter().map(|p| p.id).filter(|id| !held.contains(id)).collect();
    Split { train, valid, test }
}

/// Train and validation questions with their answers; test threads are left out.
pub fn labeling_corpus(corpus: &Corpus, split: &Split) -> Corpus {
    let keep: BTreeSet<u64> = split.train.iter().chain(&split.valid).copied().collect();
    let posts = corpus.posts.iter().filter(|p| keep.contains(&p.id)).cloned().collect();
    let answers = corpus.answers.iter().filter(|a| keep.contains(&a.parent_id)).cloned().collect();
    Corpus::new(posts, answers, Vec::new())
}

/// Encoded, truncated answer bodies by answer id.
pub fn answer_tokens(corpus: &Corpus, vocab: &Vocabulary, max_len: usize) -> HashMap<u64, Vec<TokenId>> {
    corpus
        .answers
        .par_iter()
        .map(|a| {
            let mut t = vocab.encode(&tokenize(&a.body));
            t.truncate(max_len);
            (a.id, t)
        })
        .collect()
}
