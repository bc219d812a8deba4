//! Text normalization: HTML stripping, sentence splitting and word tokenization.
//!
//! The rules are deliberately simple and deterministic:
//! - `<code>…</code>` blocks are removed entirely, remaining tags are dropped,
//!   and HTML entities are decoded.
//! - A sentence ends at `.`, `!` or `?` followed by whitespace (or end of text).
//! - Words are lowercased runs of alphanumerics and `_` (an apostrophe between
//!   two word characters stays inside the word). `?` is kept as its own token;
//!   every other punctuation character only separates words.

/// Strip HTML markup from a post or answer body.
pub fn strip_html(html: &str) -> String {
    let without_code = remove_code_blocks(html);
    let mut text = String::with_capacity(without_code.len());
    let mut in_tag = false;
    for ch in without_code.chars() {
        match ch {
            '<' => {
                in_tag = true;
                text.push(' ');
            }
            '>' if in_tag => in_tag = false,
            _ if !in_tag => text.push(ch),
            _ => {}
        }
    }
    collapse_whitespace(&decode_entities(&text))
}

fn remove_code_blocks(html: &str) -> String {
    let lower = html.to_ascii_lowercase();
    let mut out = String::with_capacity(html.len());
    let mut pos = 0;
    while let Some(rel) = find_code_open(&lower[pos..]) {
        let start = pos + rel;
        out.push_str(&html[pos..start]);
        match lower[start..].find("</code>") {
            Some(end_rel) => pos = start + end_rel + "</code>".len(),
            None => {
                // unterminated block: drop the rest
                pos = html.len();
                break;
            }
        }
        out.push(' ');
    }
    out.push_str(&html[pos..]);
    out
}

fn find_code_open(lower: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(rel) = lower[from..].find("<code") {
        let at = from + rel;
        match lower[at + 5..].chars().next() {
            Some('>') | Some(' ') | Some('\t') | Some('\n') => return Some(at),
            _ => from = at + 5,
        }
    }
    None
}

/// Decode the HTML entities that occur in StackExchange bodies.
pub fn decode_entities(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let tail = &rest[amp..];
        let decoded = tail.find(';').filter(|&semi| semi <= 10).and_then(|semi| {
            let name = &tail[1..semi];
            let ch = match name {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some(' '),
                _ => {
                    if let Some(hex) = name.strip_prefix("#x").or_else(|| name.strip_prefix("#X")) {
                        u32::from_str_radix(hex, 16).ok().and_then(char::from_u32)
                    } else if let Some(dec) = name.strip_prefix('#') {
                        dec.parse::<u32>().ok().and_then(char::from_u32)
                    } else {
                        None
                    }
                }
            };
            ch.map(|c| (c, semi + 1))
        });
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &tail[len..];
            }
            None => {
                out.push('&');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Split text into sentences on `.`, `!`, `?` followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, ch)) = iter.next() {
        if matches!(ch, '.' | '!' | '?') {
            let at_boundary = match iter.peek() {
                Some(&(_, next)) => next.is_whitespace(),
                None => true,
            };
            if at_boundary {
                let end = i + ch.len_utf8();
                let sentence = text[start..end].trim();
                if !sentence.is_empty() {
                    sentences.push(sentence);
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Lowercase word tokenization keeping `?` as a separate token.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut word = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if is_word_char(c) {
            word.extend(c.to_lowercase());
            continue;
        }
        let inner_apostrophe = (c == '\'' || c == '’')
            && !word.is_empty()
            && chars.get(i + 1).copied().is_some_and(is_word_char);
        if inner_apostrophe {
            word.push('\'');
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if c == '?' {
            tokens.push("?".to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Tokenize an HTML body after stripping markup.
pub fn tokenize_html(html: &str) -> Vec<String> {
    tokenize(&strip_html(html))
}
