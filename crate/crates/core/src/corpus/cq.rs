use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::text::{split_sentences, tokenize};
use super::{ClarifyingQuestion, Comment, Post, MAX_CQ_TOKENS};

pub const DEFAULT_EXCLUSION_KEYWORDS: &[&str] = &["edit", "related", "vote", "duplicate", "upvote", "downvote"];

pub const DEFAULT_KEY_PHRASES: &[&str] = &[
    "do you", "have you", "did you", "are you", "can you", "could you", "what", "which", "how", "why",
    "where", "when",
];

/// Keyword filtering applied when building the ⟨question, clarifying question⟩
/// training set. Phrases are matched as contiguous token sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqFilter {
    pub exclusion_keywords: Vec<String>,
    pub key_phrases: Vec<String>,
    /// Drop questions written by the asker of the post.
    pub exclude_asker: bool,
}

impl Default for CqFilter {
    fn default() -> Self {
        CqFilter {
            exclusion_keywords: DEFAULT_EXCLUSION_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            key_phrases: DEFAULT_KEY_PHRASES.iter().map(|s| s.to_string()).collect(),
            exclude_asker: true,
        }
    }
}

fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && tokens.windows(phrase.len()).any(|w| w == phrase)
}

impl CqFilter {
    pub fn accepts(&self, tokens: &[String]) -> bool {
        let excluded = self
            .exclusion_keywords
            .iter()
            .any(|k| contains_phrase(tokens, &tokenize(k)));
        if excluded {
            return false;
        }
        self.key_phrases.iter().any(|p| contains_phrase(tokens, &tokenize(p)))
    }
}

/// Question parts of a single comment text: every sentence containing `?`,
/// truncated through its first `?`, of at most [`MAX_CQ_TOKENS`] tokens.
pub fn question_sentences(text: &str) -> Vec<Vec<String>> {
    split_sentences(text)
        .into_iter()
        .filter_map(|sentence| {
            let tokens = tokenize(sentence);
            let q = tokens.iter().position(|t| t == "?")?;
            let truncated = tokens[..=q].to_vec();
            (truncated.len() <= MAX_CQ_TOKENS).then_some(truncated)
        })
        .collect()
}

/// Extract clarifying questions from question comments.
///
/// Without a filter this is the plain extraction used for corpus statistics;
/// with one it yields the training-pair set.
pub fn extract_clarifying_questions(
    comments: &[Comment],
    posts: &[Post],
    filter: Option<&CqFilter>,
) -> Vec<ClarifyingQuestion> {
    let askers: HashMap<u64, Option<i64>> = posts.iter().map(|p| (p.id, p.author_id)).collect();
    let mut out = Vec::new();
    for comment in comments {
        let Some(&asker) = askers.get(&comment.post_id) else {
            continue;
        };
        if let Some(f) = filter {
            let by_asker = f.exclude_asker && asker.is_some() && asker == comment.author_id;
            if by_asker {
                continue;
            }
        }
        for tokens in question_sentences(&comment.text) {
            if filter.is_some_and(|f| !f.accepts(&tokens)) {
                continue;
            }
            out.push(ClarifyingQuestion {
                post_id: comment.post_id,
                tokens,
                created_at: comment.created_at,
                author_id: comment.author_id,
            });
        }
    }
    out
}
