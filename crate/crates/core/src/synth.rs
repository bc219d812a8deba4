//! Planted synthetic StackExchange dump.
//!
//! Questions come in groups whose titles share four group words, so k-NN
//! retrieval returns siblings first. Each question has one topic, distinct
//! within its group. The topic token in the title determines the
//! clarifying-question word asked in a comment, and the accepted answer is
//! written in that topic's vocabulary plus the same clarifying word. Sibling
//! answers use other topics, so a candidate pool can only be ranked by
//! matching the question's topic.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use quick_xml::escape::escape;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub groups: usize,
    pub group_size: usize,
    pub topics: usize,
    /// Fraction of questions with answers but none accepted.
    pub unresolved: f64,
    /// Fraction of questions without answers.
    pub unanswered: f64,
    /// Non-accepted answers per resolved question.
    pub extra_answers: usize,
    pub noise_comments: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            groups: 300,
            group_size: 5,
            topics: 8,
            unresolved: 0.1,
            unanswered: 0.1,
            extra_answers: 1,
            noise_comments: true,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// `n` questions, each with exactly one accepted and `extra_answers`
    /// non-accepted answers.
    pub fn resolved_only(n: usize, seed: u64) -> Self {
        let d = SynthConfig::default();
        SynthConfig {
            groups: n / d.group_size,
            unresolved: 0.0,
            unanswered: 0.0,
            seed,
            ..d
        }
    }

    pub fn questions(&self) -> usize {
        self.groups * self.group_size
    }
}

/// Ground truth for one generated question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedQuestion {
    pub id: u64,
    pub group: usize,
    pub topic: usize,
    pub title: String,
    pub cq_word: String,
    pub accepted_answer: Option<u64>,
    pub answers: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthDump {
    pub posts_xml: String,
    pub comments_xml: String,
    pub links_xml: String,
    pub planted: Vec<PlantedQuestion>,
}

fn topic_token(t: usize) -> String {
    format!("tp{t}")
}

pub fn cq_word(t: usize) -> String {
    format!("cw{t}")
}

fn topic_vocab(t: usize, j: usize) -> String {
    format!("tv{t}x{j}")
}

const TOPIC_VOCAB: usize = 6;
const QUALITY: usize = 10;
const JUNK: usize = 20;
const FILLER: usize = 30;

fn pick(rng: &mut ChaCha8Rng, prefix: &str, n: usize, count: usize) -> Vec<String> {
    (0..count).map(|_| format!("{prefix}{}", rng.random_range(0..n))).collect()
}

fn date(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%.3f").to_string()
}

struct Rows(String);

impl Rows {
    fn new(root: &str) -> Self {
        Rows(format!("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<{root}>\n"))
    }

    fn row(&mut self, attrs: &[(&str, String)]) {
        self.0.push_str("  <row");
        for (k, v) in attrs {
            let _ = write!(self.0, " {k}=\"{}\"", escape(v.as_str()));
        }
        self.0.push_str(" />\n");
    }

    fn finish(mut self, root: &str) -> String {
        let _ = writeln!(self.0, "</{root}>");
        self.0
    }
}

fn answer_body(words: &mut [String], rng: &mut ChaCha8Rng) -> String {
    words.shuffle(rng);
    format!("<p>{} .</p>", words.join(" "))
}

pub fn generate(cfg: &SynthConfig) -> SynthDump {
    assert!(cfg.group_size <= cfg.topics, "topics must be distinct within a group");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let mut posts = Rows::new("posts");
    let mut comments = Rows::new("comments");
    let mut planted = Vec::new();
    let mut next_id = 1u64;
    let mut next_comment = 1u64;
    let mut id = || {
        let v = next_id;
        next_id += 1;
        v
    };

    let n = cfg.questions();
    let mut kinds: Vec<u8> = (0..n)
        .map(|i| {
            let f = i as f64 / n as f64;
            if f < cfg.unanswered {
                2
            } else if f < cfg.unanswered + cfg.unresolved {
                1
            } else {
                0
            }
        })
        .collect();
    kinds.shuffle(&mut rng);

    for g in 0..cfg.groups {
        let mut topics: Vec<usize> = (0..cfg.topics).collect();
        topics.shuffle(&mut rng);
        for (slot, &topic) in topics[..cfg.group_size].iter().enumerate() {
            let qi = g * cfg.group_size + slot;
            let qid = id();
            let asker = 1000 + qi as i64;
            let created = base + Duration::hours(3 * qi as i64);
            let mut title: Vec<String> = (0..4).map(|j| format!("g{g}w{j}")).collect();
            let at = rng.random_range(0..=title.len());
            title.insert(at, topic_token(topic));
            let title = format!("{} ?", title.join(" "));
            let mut body = pick(&mut rng, "fl", FILLER, 6);
            body.push(format!("g{g}w{}", rng.random_range(0..4)));
            body.push(topic_token(topic));
            body.shuffle(&mut rng);
            let body = format!("<p>{} .</p>", body.join(" "));

            let kind = kinds[qi];
            let mut answers = Vec::new();
            let mut accepted = None;
            if kind != 2 {
                let count = 1 + cfg.extra_answers;
                for a in 0..count {
                    let aid = id();
                    let good = kind == 0 && a == 0;
                    let mut words = if good {
                        let mut w = pick(&mut rng, "qv", QUALITY, 4);
                        w.extend((0..3).map(|_| topic_vocab(topic, rng.random_range(0..TOPIC_VOCAB))));
                        w.push(cq_word(topic));
                        w.extend(pick(&mut rng, "fl", FILLER, 4));
                        w
                    } else {
                        let mut w = pick(&mut rng, "jk", JUNK, 8);
                        w.push(topic_vocab(topic, rng.random_range(0..TOPIC_VOCAB)));
                        w.extend(pick(&mut rng, "fl", FILLER, 3));
                        w
                    };
                    if good {
                        accepted = Some(aid);
                    }
                    let body = answer_body(&mut words, &mut rng);
                    answers.push((aid, body, created + Duration::minutes(120 + 30 * a as i64)));
                }
            }

            let mut attrs = vec![
                ("Id", qid.to_string()),
                ("PostTypeId", "1".into()),
                ("CreationDate", date(created)),
                ("Score", "0".into()),
                ("Body", body),
                ("OwnerUserId", asker.to_string()),
                ("Title", title.clone()),
                ("Tags", format!("<g{g}><topic{topic}>")),
                ("AnswerCount", answers.len().to_string()),
            ];
            if let Some(a) = accepted {
                attrs.insert(2, ("AcceptedAnswerId", a.to_string()));
            }
            posts.row(&attrs);
            for (aid, body, at) in &answers {
                posts.row(&[
                    ("Id", aid.to_string()),
                    ("PostTypeId", "2".into()),
                    ("ParentId", qid.to_string()),
                    ("CreationDate", date(*at)),
                    ("Body", body.clone()),
                    ("OwnerUserId", (5000 + rng.random_range(0..50)).to_string()),
                ]);
            }

            let mut comment = |text: String, author: i64, minutes: i64| {
                comments.row(&[
                    ("Id", next_comment.to_string()),
                    ("PostId", qid.to_string()),
                    ("Text", text),
                    ("CreationDate", date(created + Duration::minutes(minutes))),
                    ("UserId", author.to_string()),
                ]);
                next_comment += 1;
            };
            let template = rng.random_range(0..2);
            let cq = if template == 0 {
                format!("Do you use {} ? Please add details.", cq_word(topic))
            } else {
                format!("Have you tried {} ?", cq_word(topic))
            };
            comment(cq, 9000 + rng.random_range(0..20), 60);
            if cfg.noise_comments {
                if rng.random_bool(0.3) {
                    comment("Possible duplicate of an older question ?".into(), 9100, 70);
                }
                if rng.random_bool(0.3) {
                    comment("What do you mean by that ?".into(), asker, 80);
                }
            }
            planted.push(PlantedQuestion {
                id: qid,
                group: g,
                topic,
                title,
                cq_word: cq_word(topic),
                accepted_answer: accepted,
                answers: answers.iter().map(|a| a.0).collect(),
            });
        }
    }

    let links = Rows::new("postlinks");
    SynthDump {
        posts_xml: posts.finish("posts"),
        comments_xml: comments.finish("comments"),
        links_xml: links.finish("postlinks"),
        planted,
    }
}

/// Write `Posts.xml`, `Comments.xml`, `PostLinks.xml` and `planted.json`.
pub fn write_dump(dir: &Path, dump: &SynthDump) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("Posts.xml", dump.posts_xml.clone()),
        ("Comments.xml", dump.comments_xml.clone()),
        ("PostLinks.xml", dump.links_xml.clone()),
        ("planted.json", serde_json::to_string_pretty(&dump.planted)?),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
