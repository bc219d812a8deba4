use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::cq::extract_clarifying_questions;
use super::{Answer, Comment, Post, Timestamp};

/// Unanswered / resolved / unresolved counts and waiting times.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HungerStats {
    pub n_questions: usize,
    pub n_unanswered: usize,
    pub n_resolved: usize,
    pub n_unresolved: usize,
    pub avg_waiting_days: f64,
    pub avg_accepting_days: f64,
}

/// Mean of the (clamped non-negative) answer delays; 0 when there are none.
fn mean_or_zero(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn compute_hunger_stats(posts: &[Post], answers: &[Answer]) -> HungerStats {
    let created: HashMap<u64, Timestamp> = posts.iter().map(|p| (p.id, p.created_at)).collect();
    let mut answered = HashSet::new();
    let mut waiting = Vec::new();
    let mut accepting = Vec::new();
    let accepted_ids: HashSet<u64> = posts.iter().filter_map(|p| p.accepted_answer_id).collect();

    for a in answers {
        let Some(q_created) = created.get(&a.parent_id) else {
            continue;
        };
        answered.insert(a.parent_id);
        let delay = a.created_at.days_since(q_created).max(0.0);
        waiting.push(delay);
        if a.is_accepted || accepted_ids.contains(&a.id) {
            accepting.push(delay);
        }
    }

    let mut stats = HungerStats {
        n_questions: posts.len(),
        avg_waiting_days: mean_or_zero(&waiting),
        avg_accepting_days: mean_or_zero(&accepting),
        ..HungerStats::default()
    };
    for p in posts {
        if !answered.contains(&p.id) {
            stats.n_unanswered += 1;
        } else if p.accepted_answer_id.is_some() {
            stats.n_resolved += 1;
        } else {
            stats.n_unresolved += 1;
        }
    }
    stats
}

/// Answer probabilities with and without a clarifying question, plus the
/// counts behind them. `None` marks an undefined ratio (zero denominator).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CqProbability {
    pub p_with: Option<f64>,
    pub p_without: Option<f64>,
    pub n_question_comments: usize,
    pub n_clarifying_questions: usize,
    pub answered_with_cq: usize,
    pub unanswered_with_cq: usize,
    pub answered_without_cq: usize,
    pub unanswered_without_cq: usize,
    pub removed_self_answered: usize,
    pub removed_recent_unanswered: usize,
    pub removed_cq_by_asker: usize,
    pub removed_cq_after_first_answer: usize,
}

const RECENT_DAYS: f64 = 7.0;

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Apply the four thread filters in order and estimate P(A|CQ), P(A|¬CQ).
pub fn cq_answer_probability(
    posts: &[Post],
    answers: &[Answer],
    comments: &[Comment],
    dump_date: Timestamp,
) -> CqProbability {
    let mut out = CqProbability {
        n_question_comments: comments.len(),
        ..CqProbability::default()
    };
    let mut by_post: HashMap<u64, Vec<&Answer>> = HashMap::new();
    for a in answers {
        by_post.entry(a.parent_id).or_default().push(a);
    }

    // 1. self-answered threads, 2. unanswered threads too close to the dump date
    let mut kept: Vec<&Post> = Vec::new();
    for p in posts {
        let thread = by_post.get(&p.id).map(Vec::as_slice).unwrap_or(&[]);
        let self_answered = p.author_id.is_some() && thread.iter().any(|a| a.author_id == p.author_id);
        if self_answered {
            out.removed_self_answered += 1;
            continue;
        }
        if thread.is_empty() && dump_date.days_since(&p.created_at) < RECENT_DAYS {
            out.removed_recent_unanswered += 1;
            continue;
        }
        kept.push(p);
    }

    let cqs = extract_clarifying_questions(comments, posts, None);
    out.n_clarifying_questions = cqs.len();
    let kept_ids: HashMap<u64, &Post> = kept.iter().map(|p| (p.id, *p)).collect();
    let mut with_cq = HashSet::new();
    for cq in &cqs {
        let Some(post) = kept_ids.get(&cq.post_id) else {
            continue;
        };
        // 3. questions asked by the asker themselves
        if post.author_id.is_some() && cq.author_id == post.author_id {
            out.removed_cq_by_asker += 1;
            continue;
        }
        // 4. questions posted after the first answer
        let first_answer = by_post
            .get(&post.id)
            .and_then(|thread| thread.iter().map(|a| a.created_at).min());
        if first_answer.is_some_and(|first| cq.created_at > first) {
            out.removed_cq_after_first_answer += 1;
            continue;
        }
        with_cq.insert(post.id);
    }

    for p in &kept {
        let answered = by_post.contains_key(&p.id);
        match (with_cq.contains(&p.id), answered) {
            (true, true) => out.answered_with_cq += 1,
            (true, false) => out.unanswered_with_cq += 1,
            (false, true) => out.answered_without_cq += 1,
            (false, false) => out.unanswered_without_cq += 1,
        }
    }
    out.p_with = ratio(out.answered_with_cq, out.answered_with_cq + out.unanswered_with_cq);
    out.p_without = ratio(out.answered_without_cq, out.answered_without_cq + out.unanswered_without_cq);
    out
}
