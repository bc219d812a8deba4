use std::collections::{HashMap, HashSet};
use std::path::Path;

use log::warn;
use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use super::text::{decode_entities, strip_html};
use super::{Answer, Comment, Post, Timestamp};
use crate::error::{Error, Result};

/// Counters collected while parsing a dump file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows: usize,
    pub skipped_malformed: usize,
    pub skipped_missing_fields: usize,
    pub skipped_empty_title: usize,
    pub duplicates_removed: usize,
    pub orphan_answers: usize,
    pub dangling_accepted: usize,
    pub comments_on_answers: usize,
    pub comments_orphaned: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedPosts {
    pub posts: Vec<Post>,
    pub answers: Vec<Answer>,
    pub report: ParseReport,
}

type Attrs = HashMap<String, String>;

/// Split a dump into `<row …/>` fragments so one malformed row cannot poison
/// its neighbours.
fn row_fragments(xml: &str) -> impl Iterator<Item = &str> {
    let mut starts: Vec<usize> = xml.match_indices("<row").map(|(i, _)| i).collect();
    starts.push(xml.len());
    (0..starts.len() - 1).map(move |k| {
        let frag = &xml[starts[k]..starts[k + 1]];
        match frag.find("/>") {
            Some(end) => &frag[..end + 2],
            None => frag,
        }
    })
}

fn parse_row(fragment: &str) -> Option<Attrs> {
    let mut reader = Reader::from_str(fragment);
    match reader.read_event() {
        Ok(Event::Empty(e)) if e.name().as_ref() == b"row" => {
            let mut attrs = Attrs::new();
            for attr in e.attributes() {
                let attr = attr.ok()?;
                let key = std::str::from_utf8(attr.key.as_ref()).ok()?.to_string();
                let value = attr.unescape_value().ok()?.into_owned();
                attrs.insert(key, value);
            }
            Some(attrs)
        }
        _ => None,
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_id(attrs: &Attrs, key: &str) -> Option<u64> {
    attrs.get(key)?.trim().parse().ok().filter(|&v: &u64| v > 0)
}

fn parse_int(attrs: &Attrs, key: &str) -> Option<i64> {
    attrs.get(key)?.trim().parse().ok()
}

fn parse_tags(raw: &str) -> Vec<String> {
    raw.split(['<', '>', '|'])
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Parse `Posts.xml` (and optionally `PostLinks.xml` for duplicate removal).
pub fn parse_posts(path: &Path, duplicates: Option<&Path>) -> Result<ParsedPosts> {
    let posts_xml = read_file(path)?;
    let links_xml = duplicates.map(read_file).transpose()?;
    Ok(parse_posts_str(&posts_xml, links_xml.as_deref()))
}

pub fn parse_posts_str(posts_xml: &str, links_xml: Option<&str>) -> ParsedPosts {
    let mut report = ParseReport::default();
    let mut posts = Vec::new();
    let mut answers = Vec::new();

    for fragment in row_fragments(posts_xml) {
        report.rows += 1;
        let Some(attrs) = parse_row(fragment) else {
            report.skipped_malformed += 1;
            continue;
        };
        let (Some(id), Some(created_at)) = (
            parse_id(&attrs, "Id"),
            attrs.get("CreationDate").and_then(|s| Timestamp::parse(s)),
        ) else {
            report.skipped_missing_fields += 1;
            continue;
        };
        let body = strip_html(attrs.get("Body").map(String::as_str).unwrap_or(""));
        let author_id = parse_int(&attrs, "OwnerUserId");
        match parse_int(&attrs, "PostTypeId") {
            Some(1) => {
                let title = decode_entities(attrs.get("Title").map(String::as_str).unwrap_or(""))
                    .split_whitespace()
                    .collect::<Vec<_>>()
                    .join(" ");
                if title.is_empty() {
                    report.skipped_empty_title += 1;
                    continue;
                }
                posts.push(Post {
                    id,
                    title,
                    body,
                    tags: attrs.get("Tags").map(|t| parse_tags(t)).unwrap_or_default(),
                    created_at,
                    accepted_answer_id: parse_id(&attrs, "AcceptedAnswerId"),
                    author_id,
                });
            }
            Some(2) => {
                let Some(parent_id) = parse_id(&attrs, "ParentId") else {
                    report.skipped_missing_fields += 1;
                    continue;
                };
                answers.push(Answer {
                    id,
                    parent_id,
                    body,
                    created_at,
                    author_id,
                    is_accepted: false,
                });
            }
            // wiki, tag excerpts and other post types are not part of the Q&A corpus
            _ => {}
        }
    }

    if let Some(links) = links_xml {
        let mut duplicate_ids = HashSet::new();
        for fragment in row_fragments(links) {
            let Some(attrs) = parse_row(fragment) else {
                report.skipped_malformed += 1;
                continue;
            };
            if parse_int(&attrs, "LinkTypeId") == Some(3) {
                if let (Some(dup), Some(master)) = (parse_id(&attrs, "PostId"), parse_id(&attrs, "RelatedPostId")) {
                    if dup != master {
                        duplicate_ids.insert(dup);
                    }
                }
            }
        }
        let before = posts.len();
        posts.retain(|p| !duplicate_ids.contains(&p.id));
        report.duplicates_removed = before - posts.len();
    }

    posts.sort_by_key(|p| p.id);
    posts.dedup_by_key(|p| p.id);
    let question_ids: HashSet<u64> = posts.iter().map(|p| p.id).collect();
    let before = answers.len();
    answers.retain(|a| question_ids.contains(&a.parent_id));
    report.orphan_answers = before - answers.len();
    answers.sort_by_key(|a| a.id);
    answers.dedup_by_key(|a| a.id);

    let parent_of: HashMap<u64, u64> = answers.iter().map(|a| (a.id, a.parent_id)).collect();
    let mut accepted = HashSet::new();
    for post in &mut posts {
        if let Some(aid) = post.accepted_answer_id {
            if parent_of.get(&aid) == Some(&post.id) {
                accepted.insert(aid);
            } else {
                post.accepted_answer_id = None;
                report.dangling_accepted += 1;
            }
        }
    }
    for a in &mut answers {
        a.is_accepted = accepted.contains(&a.id);
    }

    let skipped = report.skipped_malformed + report.skipped_missing_fields;
    if skipped > 0 {
        warn!("skipped {skipped} post rows (malformed or missing Id/CreationDate)");
    }
    ParsedPosts { posts, answers, report }
}

/// Parse `Comments.xml`, keeping only comments on question posts.
pub fn parse_comments(path: &Path, posts: &[Post]) -> Result<(Vec<Comment>, ParseReport)> {
    let xml = read_file(path)?;
    Ok(parse_comments_str(&xml, posts))
}

pub fn parse_comments_str(xml: &str, posts: &[Post]) -> (Vec<Comment>, ParseReport) {
    let question_ids: HashSet<u64> = posts.iter().map(|p| p.id).collect();
    let mut report = ParseReport::default();
    let mut comments = Vec::new();
    for fragment in row_fragments(xml) {
        report.rows += 1;
        let Some(attrs) = parse_row(fragment) else {
            report.skipped_malformed += 1;
            continue;
        };
        let (Some(id), Some(post_id), Some(created_at)) = (
            parse_id(&attrs, "Id"),
            parse_id(&attrs, "PostId"),
            attrs.get("CreationDate").and_then(|s| Timestamp::parse(s)),
        ) else {
            report.skipped_missing_fields += 1;
            continue;
        };
        if !question_ids.contains(&post_id) {
            // answers and removed duplicates share the PostId space
            report.comments_on_answers += 1;
            continue;
        }
        comments.push(Comment {
            id,
            post_id,
            text: attrs.get("Text").cloned().unwrap_or_default(),
            created_at,
            author_id: parse_int(&attrs, "UserId"),
        });
    }
    comments.sort_by_key(|c| c.id);
    comments.dedup_by_key(|c| c.id);
    (comments, report)
}
