//! StackExchange dump ingestion, clarifying-question extraction and the
//! answer-hunger statistics.

mod cq;
mod stats;
pub mod text;
mod xml;

use std::collections::HashMap;
use std::fmt;

use chrono::NaiveDateTime;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use cq::{extract_clarifying_questions, CqFilter, DEFAULT_EXCLUSION_KEYWORDS, DEFAULT_KEY_PHRASES};
pub use stats::{compute_hunger_stats, cq_answer_probability, CqProbability, HungerStats};
pub use xml::{parse_comments, parse_comments_str, parse_posts, parse_posts_str, ParseReport, ParsedPosts};

/// A UTC timestamp as found in the dumps (`2019-09-05T12:34:56.789`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub NaiveDateTime);

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.3f";

impl Timestamp {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().trim_end_matches('Z');
        NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
            .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f"))
            .ok()
            .map(Timestamp)
    }

    /// Signed difference `self - earlier` in fractional days.
    pub fn days_since(&self, earlier: &Timestamp) -> f64 {
        (self.0 - earlier.0).num_milliseconds() as f64 / 86_400_000.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format(TS_FORMAT))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Timestamp::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad timestamp {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: u64,
    pub title: String,
    pub body: String,
    pub tags: Vec<String>,
    pub created_at: Timestamp,
    pub accepted_answer_id: Option<u64>,
    pub author_id: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub id: u64,
    pub parent_id: u64,
    pub body: String,
    pub created_at: Timestamp,
    pub author_id: Option<i64>,
    pub is_accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub id: u64,
    pub post_id: u64,
    pub text: String,
    pub created_at: Timestamp,
    pub author_id: Option<i64>,
}

/// A question extracted from a comment on a question post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarifyingQuestion {
    pub post_id: u64,
    pub tokens: Vec<String>,
    pub created_at: Timestamp,
    pub author_id: Option<i64>,
}

/// Maximum number of tokens (including the trailing `?`) in a clarifying question.
pub const MAX_CQ_TOKENS: usize = 20;

/// Parsed corpus with lookup tables. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub posts: Vec<Post>,
    pub answers: Vec<Answer>,
    pub comments: Vec<Comment>,
    post_index: HashMap<u64, usize>,
    answers_by_post: HashMap<u64, Vec<usize>>,
    answer_index: HashMap<u64, usize>,
}

impl Corpus {
    pub fn new(mut posts: Vec<Post>, mut answers: Vec<Answer>, mut comments: Vec<Comment>) -> Self {
        posts.sort_by_key(|p| p.id);
        answers.sort_by_key(|a| a.id);
        comments.sort_by_key(|c| c.id);
        let post_index = posts.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
        let answer_index = answers.iter().enumerate().map(|(i, a)| (a.id, i)).collect();
        let mut answers_by_post: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, a) in answers.iter().enumerate() {
            answers_by_post.entry(a.parent_id).or_default().push(i);
        }
        Corpus {
            posts,
            answers,
            comments,
            post_index,
            answers_by_post,
            answer_index,
        }
    }

    pub fn post(&self, id: u64) -> Option<&Post> {
        self.post_index.get(&id).map(|&i| &self.posts[i])
    }

    pub fn answer(&self, id: u64) -> Option<&Answer> {
        self.answer_index.get(&id).map(|&i| &self.answers[i])
    }

    /// Answers of a post in ascending id order.
    pub fn answers_of(&self, post_id: u64) -> impl Iterator<Item = &Answer> {
        self.answers_by_post
            .get(&post_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.answers[i])
    }

    pub fn accepted_answer(&self, post: &Post) -> Option<&Answer> {
        let id = post.accepted_answer_id?;
        self.answer(id).filter(|a| a.parent_id == post.id)
    }

    /// One representative answer per post: the accepted one, else the lowest id.
    pub fn representative_answer(&self, post: &Post) -> Option<&Answer> {
        self.accepted_answer(post).or_else(|| self.answers_of(post.id).next())
    }

    pub fn latest_timestamp(&self) -> Option<Timestamp> {
        let posts = self.posts.iter().map(|p| p.created_at);
        let answers = self.answers.iter().map(|a| a.created_at);
        let comments = self.comments.iter().map(|c| c.created_at);
        posts.chain(answers).chain(comments).max()
    }
}
