use alloc::string::String;
use alloc::vec::Vec;

use super::extract::is_relation_verb;
use crate::text::is_stopword;

const PRONOUNS: &[&str] = &["he", "her", "him", "it", "she", "them", "they"];

/// Sentence-level punctuation kept by normalization; everything else that is
/// not alphanumeric becomes a word separator.
pub(crate) fn is_kept_punct(ch: char) -> bool {
    matches!(ch, '.' | ',' | ';' | ':' | '!' | '?')
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Piece {
    Word(String),
    Punct(char),
}

pub(crate) fn pieces(text: &str) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
            continue;
        }
        if !current.is_empty() {
            out.push(Piece::Word(core::mem::take(&mut current)));
        }
        if is_kept_punct(ch) {
            out.push(Piece::Punct(ch));
        }
    }
    if !current.is_empty() {
        out.push(Piece::Word(current));
    }
    out
}

/// Lowercase `raw`, strip links and markup, and collapse whitespace.
///
/// * `[[target|label]]` and `[[label]]` keep the label.
/// * `[label](url)` keeps the label.
/// * any other `[...]` segment and `<...>` tag is dropped.
/// * bare `http://`, `https://` and `www.` tokens are dropped.
///
/// With `resolve_pronouns`, third-person pronouns are replaced by the most
/// recent clause subject (the content words right before a relation verb).
pub fn normalize_text(raw: &str, resolve_pronouns: bool) -> String {
    let stripped = strip_markup(raw);
    let mut items = pieces(&stripped);
    if resolve_pronouns {
        items = resolve(items);
    }
    render(&items)
}

fn render(items: &[Piece]) -> String {
    let mut out = String::new();
    for item in items {
        match item {
            Piece::Word(w) => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(w);
            }
            Piece::Punct(c) => out.push(*c),
        }
    }
    out
}

fn strip_markup(raw: &str) -> String {
    let chars: Vec<char> = raw.chars().collect();
    let mut out = String::with_capacity(raw.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '[' && chars.get(i + 1) == Some(&'[') {
            if let Some(end) = find_seq(&chars, i + 2, &[']', ']']) {
                let inner: String = chars[i + 2..end].iter().collect();
                let label = inner.rsplit('|').next().unwrap_or("");
                out.push(' ');
                out.push_str(label);
                out.push(' ');
                i = end + 2;
                continue;
            }
        }
        if c == '[' {
            if let Some(end) = find_seq(&chars, i + 1, &[']']) {
                if chars.get(end + 1) == Some(&'(') {
                    if let Some(close) = find_seq(&chars, end + 2, &[')']) {
                        let label: String = chars[i + 1..end].iter().collect();
                        out.push(' ');
                        out.push_str(&label);
                        out.push(' ');
                        i = close + 1;
                        continue;
                    }
                }
                out.push(' ');
                i = end + 1;
                continue;
            }
        }
        if c == '<' {
            if let Some(end) = find_seq(&chars, i + 1, &['>']) {
                out.push(' ');
                i = end + 1;
                continue;
            }
        }
        out.push(c);
        i += 1;
    }
    let mut cleaned = String::with_capacity(out.len());
    for token in out.split_whitespace() {
        let lower = token.to_lowercase();
        if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.") {
            // keep trailing sentence punctuation of a dropped URL
            if let Some(last) = token.chars().last().filter(|c| is_kept_punct(*c)) {
                cleaned.push(last);
            }
            continue;
        }
        if !cleaned.is_empty() {
            cleaned.push(' ');
        }
        cleaned.push_str(token);
    }
    cleaned
}

fn find_seq(chars: &[char], from: usize, pat: &[char]) -> Option<usize> {
    if from > chars.len() {
        return None;
    }
    (from..=chars.len().saturating_sub(pat.len())).find(|&j| chars[j..].starts_with(pat))
}

fn resolve(items: Vec<Piece>) -> Vec<Piece> {
    let mut out = Vec::with_capacity(items.len());
    let mut last_subject: Option<Vec<String>> = None;
    // content words since the last clause boundary
    let mut span: Vec<String> = Vec::new();
    for item in items {
        match item {
            Piece::Punct(c) => {
                span.clear();
                out.push(Piece::Punct(c));
            }
            Piece::Word(w) => {
                if PRONOUNS.contains(&w.as_str()) {
                    if let Some(subject) = &last_subject {
                        for s in subject {
                            span.push(s.clone());
                            out.push(Piece::Word(s.clone()));
                        }
                        continue;
                    }
                    out.push(Piece::Word(w));
                } else if is_relation_verb(&w) {
                    if !span.is_empty() {
                        last_subject = Some(core::mem::take(&mut span));
                    }
                    out.push(Piece::Word(w));
                } else if matches!(w.as_str(), "and" | "or" | "but") {
                    span.clear();
                    out.push(Piece::Word(w));
                } else {
                    if !is_stopword(&w) {
                        span.push(w.clone());
                    }
                    out.push(Piece::Word(w));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input() {
        assert_eq!(normalize_text("", false), "");
        assert_eq!(normalize_text("", true), "");
    }

    #[test]
    fn bracket_segments_are_removed() {
        assert_eq!(normalize_text("See [link] HERE", false), "see here");
    }

    #[test]
    fn wiki_and_markdown_links_keep_labels() {
        assert_eq!(
            normalize_text("[[Reykjavik|The capital]] is in [Iceland](https://en.wikipedia.org/wiki/Iceland).", false),
            "the capital is in iceland."
        );
        assert_eq!(normalize_text("Visit https://example.org now", false), "visit now");
        assert_eq!(normalize_text("<b>Bold</b>   text", false), "bold text");
    }

    #[test]
    fn pronoun_takes_the_preceding_subject() {
        let raw = "Iceland is a Nordic island country in the North Atlantic Ocean and it is the most sparsely populated country in Europe.";
        let out = normalize_text(raw, true);
        assert_eq!(
            out,
            "iceland is a nordic island country in the north atlantic ocean and iceland is the most sparsely populated country in europe."
        );
        // without the flag the pronoun stays
        assert!(normalize_text(raw, false).contains(" it is "));
    }

    #[test]
    fn pronoun_without_antecedent_is_kept() {
        assert_eq!(normalize_text("It is raining.", true), "it is raining.");
    }
}
