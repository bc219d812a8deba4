use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CqFilter, DEFAULT_EXCLUSION_KEYWORDS, DEFAULT_KEY_PHRASES};
use crate::error::{Error, Result};

/// Flat key/value pipeline configuration. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dump_dir: PathBuf,
    pub workspace: PathBuf,
    pub seed: u64,

    pub vocab_cap: usize,
    /// Embedding width shared by retrieval, qboost and the ranker.
    pub d: usize,
    /// Pre-trained vectors (`token v1 … vd` per line) instead of skip-gram.
    pub embeddings_path: Option<PathBuf>,
    pub emb_epochs: usize,
    pub emb_window: usize,
    pub emb_negatives: usize,
    pub emb_lr: f64,

    pub hidden: usize,
    pub qboost_epochs: usize,
    pub qboost_batch: usize,
    pub qboost_lr: f64,
    pub qboost_patience: usize,
    pub beam: usize,
    pub max_len: usize,

    pub maps: usize,
    pub shared_branches: bool,
    pub ranker_epochs: usize,
    pub ranker_batch: usize,
    pub ranker_lr: f64,
    pub ranker_patience: usize,
    pub grad_clip: f64,

    pub k: usize,
    pub k_sim: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub max_question_len: usize,
    pub max_answer_len: usize,

    pub drop_cq: bool,
    pub drop_labeling: bool,

    pub exclusion_keywords: Vec<String>,
    pub key_phrases: Vec<String>,
    pub exclude_asker: bool,

    pub excerpt_chars: usize,
    pub serve_addr: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dump_dir: PathBuf::from("dump"),
            workspace: PathBuf::from("workspace"),
            seed: 42,
            vocab_cap: 50_000,
            d: 100,
            embeddings_path: None,
            emb_epochs: 5,
            emb_window: 5,
            emb_negatives: 5,
            emb_lr: 0.025,
            hidden: 256,
            qboost_epochs: 50,
            qboost_batch: 64,
            qboost_lr: 0.01,
            qboost_patience: 5,
            beam: 10,
            max_len: 20,
            maps: 100,
            shared_branches: false,
            ranker_epochs: 50,
            ranker_batch: 64,
            ranker_lr: 0.01,
            ranker_patience: 5,
            grad_clip: 5.0,
            k: 5,
            k_sim: 5,
            n_valid: 1000,
            n_test: 1000,
            max_question_len: 40,
            max_answer_len: 100,
            drop_cq: false,
            drop_labeling: false,
            exclusion_keywords: DEFAULT_EXCLUSION_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            key_phrases: DEFAULT_KEY_PHRASES.iter().map(|s| s.to_string()).collect(),
            exclude_asker: true,
            excerpt_chars: 200,
            serve_addr: "127.0.0.1:7878".into(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Desk-scale settings for the planted synthetic corpus.
    pub fn synth(dump_dir: PathBuf, workspace: PathBuf) -> Self {
        PipelineConfig {
            dump_dir,
            workspace,
            d: 32,
            hidden: 32,
            qboost_epochs: 100,
            qboost_batch: 8,
            qboost_lr: 1.0,
            qboost_patience: 20,
            maps: 16,
            ranker_epochs: 30,
            ranker_batch: 16,
            ranker_lr: 0.1,
            ranker_patience: 8,
            n_valid: 50,
            n_test: 100,
            ..PipelineConfig::default()
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_cap", self.vocab_cap),
            ("d", self.d),
            ("emb_window", self.emb_window),
            ("hidden", self.hidden),
            ("qboost_epochs", self.qboost_epochs),
            ("qboost_batch", self.qboost_batch),
            ("qboost_patience", self.qboost_patience),
            ("beam", self.beam),
            ("max_len", self.max_len),
            ("maps", self.maps),
            ("ranker_epochs", self.ranker_epochs),
            ("ranker_batch", self.ranker_batch),
            ("ranker_patience", self.ranker_patience),
            ("k", self.k),
            ("k_sim", self.k_sim),
            ("max_question_len", self.max_question_len),
            ("max_answer_len", self.max_answer_len),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Argument(format!("config key {name} must be positive")));
        }
        for (name, lr) in [("emb_lr", self.emb_lr), ("qboost_lr", self.qboost_lr), ("ranker_lr", self.ranker_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Argument(format!("config key {name} must be > 0")));
            }
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Argument("config key grad_clip must be > 0".into()));
        }
        if self.max_question_len < 5 || self.max_answer_len < 5 {
            return Err(Error::Argument("max_question_len and max_answer_len must be at least 5".into()));
        }
        Ok(())
    }

    pub fn cq_filter(&self) -> CqFilter {
        CqFilter {
            exclusion_keywords: self.exclusion_keywords.clone(),
            key_phrases: self.key_phrases.clone(),
            exclude_asker: self.exclude_asker,
        }
    }
}
