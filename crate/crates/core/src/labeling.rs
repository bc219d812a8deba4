//! Heuristic four-class labeling of question/answer pairs.

use std::collections::BTreeSet;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::text::tokenize;
use crate::corpus::{Answer, Corpus, Post};
use crate::retrieval::RetrievalIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    NeutralPlus,
    NeutralMinus,
    Negative,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Positive, Label::NeutralPlus, Label::NeutralMinus, Label::Negative];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Class index under the two-class collapse: Positive vs. everything else.
    pub fn binary_index(self) -> usize {
        usize::from(self != Label::Positive)
    }

    pub fn class_index(self, binary: bool) -> usize {
        if binary {
            self.binary_index()
        } else {
            self.index()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledQAPair {
    pub qid: u64,
    pub q_tokens: Vec<String>,
    pub a_tokens: Vec<String>,
    pub label: Label,
    /// Post the answer belongs to.
    pub prov_qid: u64,
    pub prov_aid: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelReport {
    pub questions_labeled: usize,
    pub skipped_no_accepted: usize,
    pub skipped_empty_accepted: usize,
    pub missing_neutral_minus: usize,
    pub missing_negative: usize,
    /// Pair counts in `Label::ALL` order.
    pub counts: [usize; 4],
}

/// Distinct, well-mixed stream seed for one question.
pub fn question_seed(seed: u64, qid: u64) -> u64 {
    let mut z = seed ^ qid.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `k_sim` posts most similar to `post` among those in `corpus`, self excluded.
pub fn similar_posts(corpus: &Corpus, index: &RetrievalIndex, post: &Post, k_sim: usize) -> Vec<u64> {
    index
        .knn(&tokenize(&post.title), index.len())
        .into_iter()
        .map(|(id, _)| id)
        .filter(|&id| id != post.id && corpus.post(id).is_some())
        .take(k_sim)
        .collect()
}

fn pair(post: &Post, q_tokens: &[String], a: &Answer, label: Label) -> LabeledQAPair {
    LabeledQAPair {
        qid: post.id,
        q_tokens: q_tokens.to_vec(),
        a_tokens: tokenize(&a.body),
        label,
        prov_qid: a.parent_id,
        prov_aid: a.id,
    }
}

enum Outcome {
    NoAccepted,
    EmptyAccepted,
    Labeled {
        pairs: Vec<LabeledQAPair>,
        missing_neutral_minus: bool,
        missing_negative: bool,
    },
}

fn label_question(corpus: &Corpus, index: &RetrievalIndex, answered: &[&Answer], post: &Post, k_sim: usize, seed: u64) -> Outcome {
    let Some(accepted) = corpus.accepted_answer(post) else {
        return Outcome::NoAccepted;
    };
    if tokenize(&accepted.body).is_empty() {
        return Outcome::EmptyAccepted;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(question_seed(seed, post.id));
    let q_tokens = tokenize(&post.title);
    let mut pairs = vec![pair(post, &q_tokens, accepted, Label::Positive)];
    pairs.extend(
        corpus
            .answers_of(post.id)
            .filter(|a| a.id != accepted.id)
            .map(|a| pair(post, &q_tokens, a, Label::NeutralPlus)),
    );

    let similar = similar_posts(corpus, index, post, k_sim);
    let similar_answers: Vec<&Answer> = similar.iter().flat_map(|&id| corpus.answers_of(id)).collect();
    let missing_neutral_minus = similar_answers.is_empty();
    if !missing_neutral_minus {
        let a = similar_answers[rng.random_range(0..similar_answers.len())];
        pairs.push(pair(post, &q_tokens, a, Label::NeutralMinus));
    }

    let excluded: BTreeSet<u64> = similar.iter().copied().chain([post.id]).collect();
    let negative = sample_outside(answered, &excluded, &mut rng);
    if let Some(a) = negative {
        pairs.push(pair(post, &q_tokens, a, Label::Negative));
    }
    Outcome::Labeled {
        pairs,
        missing_neutral_minus,
        missing_negative: negative.is_none(),
    }
}

/// Uniform draw over answers whose post is not excluded: rejection first,
/// exact enumeration when rejection keeps failing.
fn sample_outside<'a>(answers: &[&'a Answer], excluded: &BTreeSet<u64>, rng: &mut ChaCha8Rng) -> Option<&'a Answer> {
    if answers.is_empty() {
        return None;
    }
    for _ in 0..32 {
        let a = answers[rng.random_range(0..answers.len())];
        if !excluded.contains(&a.parent_id) {
            return Some(a);
        }
    }
    let rest: Vec<&Answer> = answers.iter().copied().filter(|a| !excluded.contains(&a.parent_id)).collect();
    (!rest.is_empty()).then(|| rest[rng.random_range(0..rest.len())])
}

/// Label every question of `corpus`. The index may cover more posts than the
/// corpus; posts outside the corpus are ignored when forming similar sets.
pub fn establish_labels(corpus: &Corpus, index: &RetrievalIndex, k_sim: usize, seed: u64) -> (Vec<LabeledQAPair>, LabelReport) {
    let answered: Vec<&Answer> = corpus.answers.iter().filter(|a| corpus.post(a.parent_id).is_some()).collect();
    let outcomes: Vec<Outcome> = corpus
        .posts
        .par_iter()
        .map(|p| label_question(corpus, index, &answered, p, k_sim, seed))
        .collect();

    let mut report = LabelReport::default();
    let mut pairs = Vec::new();
    for o in outcomes {
        match o {
            Outcome::NoAccepted => report.skipped_no_accepted += 1,
            Outcome::EmptyAccepted => report.skipped_empty_accepted += 1,
            Outcome::Labeled {
                pairs: p,
                missing_neutral_minus,
                missing_negative,
            } => {
                report.questions_labeled += 1;
                report.missing_neutral_minus += usize::from(missing_neutral_minus);
                report.missing_negative += usize::from(missing_negative);
                pairs.extend(p);
            }
        }
    }
    for p in &pairs {
        report.counts[p.label.index()] += 1;
    }
    if report.missing_neutral_minus > 0 {
        warn!("{} questions have no answered similar question", report.missing_neutral_minus);
    }
    if report.missing_negative > 0 {
        warn!("{} questions have no answered non-similar question", report.missing_negative);
    }
    (pairs, report)
}
