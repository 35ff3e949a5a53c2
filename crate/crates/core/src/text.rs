//! Tokenization, stopwords and stemming.
//!
//! Every stage (retrieval terms, trie keys, entity memory, metrics) goes
//! through the same pipeline: lowercase, split on anything that is not
//! alphanumeric, drop stopwords where relevant, stem.

use alloc::string::String;
use alloc::vec::Vec;

/// English stopwords (the common NLTK list, apostrophe fragments included).
const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "ain", "all", "am", "an", "and", "any",
    "are", "aren", "as", "at", "be", "because", "been", "before", "being", "below", "between",
    "both", "but", "by", "can", "couldn", "d", "did", "didn", "do", "does", "doesn", "doing",
    "don", "down", "during", "each", "few", "for", "from", "further", "had", "hadn", "has",
    "hasn", "have", "haven", "having", "he", "her", "here", "hers", "herself", "him", "himself",
    "his", "how", "i", "if", "in", "into", "is", "isn", "it", "its", "itself", "just", "ll", "m",
    "ma", "me", "mightn", "more", "most", "mustn", "my", "myself", "needn", "no", "nor", "not",
    "now", "o", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves",
    "out", "over", "own", "re", "s", "same", "shan", "she", "should", "shouldn", "so", "some",
    "such", "t", "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there",
    "these", "they", "this", "those", "through", "to", "too", "under", "until", "up", "ve",
    "very", "was", "wasn", "we", "were", "weren", "what", "when", "where", "which", "while",
    "who", "whom", "why", "will", "with", "won", "wouldn", "y", "you", "your", "yours",
    "yourself", "yourselves",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

/// Lowercased alphanumeric runs. Everything else separates words.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            out.push(core::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Stemmed, stopword-free terms of `text`: the retrieval and coverage vocabulary.
pub fn terms(text: &str) -> Vec<String> {
    words(text)
        .into_iter()
        .filter(|w| !is_stopword(w))
        .map(|w| stem(&w))
        .collect()
}

/// Stemmed, stopword-free terms of already-split tokens.
pub fn terms_of<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .flat_map(|t| words(t.as_ref()))
        .filter(|w| !is_stopword(w))
        .map(|w| stem(&w))
        .collect()
}

/// Tokens for the built-in word-level language models: lowercased,
/// whitespace separated, with each punctuation character its own token.
pub fn lm_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut current = String::new();
        for ch in chunk.chars() {
            if ch.is_alphanumeric() {
                current.extend(ch.to_lowercase());
            } else {
                if !current.is_empty() {
                    out.push(core::mem::take(&mut current));
                }
                out.push(ch.to_lowercase().collect());
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

/// Inflectional Porter-style stemmer.
///
/// Applies the plural step (with the "vowel not immediately before the s"
/// guard, so `gas` and `is` survive) and the `-ed` / `-ing` / `-eed` step
/// with the usual repairs (`driving` -> `drive`, `hopping` -> `hop`).
/// Derivational suffixes are left alone. The two steps are iterated to a
/// fixed point, which makes `stem` idempotent.
///
/// Words that are not plain ASCII letters, or are shorter than three
/// characters, are returned unchanged.
pub fn stem(word: &str) -> String {
    if word.len() < 3 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        return String::from(word);
    }
    let mut current: Vec<u8> = word.as_bytes().to_vec();
    loop {
        let next = step_1b(&step_1a(&current));
        if next == current || next.len() < 2 {
            break;
        }
        current = next;
    }
    // ASCII in, ASCII out.
    String::from_utf8(current).unwrap_or_else(|_| String::from(word))
}

fn is_consonant(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_consonant(w, i - 1),
        _ => true,
    }
}

/// Number of vowel-consonant sequences, the `m` of `[C](VC){m}[V]`.
fn measure(w: &[u8]) -> usize {
    let mut m = 0;
    let mut i = 0;
    let n = w.len();
    while i < n && is_consonant(w, i) {
        i += 1;
    }
    while i < n {
        while i < n && !is_consonant(w, i) {
            i += 1;
        }
        if i >= n {
            break;
        }
        while i < n && is_consonant(w, i) {
            i += 1;
        }
        m += 1;
    }
    m
}

fn has_vowel(w: &[u8]) -> bool {
    (0..w.len()).any(|i| !is_consonant(w, i))
}

fn ends_double_consonant(w: &[u8]) -> bool {
    let n = w.len();
    n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1)
}

fn ends_cvc(w: &[u8]) -> bool {
    let n = w.len();
    n >= 3
        && is_consonant(w, n - 3)
        && !is_consonant(w, n - 2)
        && is_consonant(w, n - 1)
        && !matches!(w[n - 1], b'w' | b'x' | b'y')
}

fn step_1a(w: &[u8]) -> Vec<u8> {
    let n = w.len();
    if w.ends_with(b"sses") {
        return w[..n - 2].to_vec();
    }
    if w.ends_with(b"ied") || w.ends_with(b"ies") {
        let keep = if n > 4 { n - 2 } else { n - 1 };
        return w[..keep].to_vec();
    }
    if w.ends_with(b"us") || w.ends_with(b"ss") {
        return w.to_vec();
    }
    if w.ends_with(b"s") && n >= 3 {
        let stem = &w[..n - 1];
        // a vowel somewhere before the letter preceding the s
        if has_vowel(&stem[..stem.len() - 1]) {
            return stem.to_vec();
        }
    }
    w.to_vec()
}

fn step_1b(w: &[u8]) -> Vec<u8> {
    let n = w.len();
    if w.ends_with(b"eed") {
        if measure(&w[..n - 3]) > 0 {
            return w[..n - 1].to_vec();
        }
        return w.to_vec();
    }
    let stem = if w.ends_with(b"ed") {
        &w[..n - 2]
    } else if w.ends_with(b"ing") {
        &w[..n - 3]
    } else {
        return w.to_vec();
    };
    if !has_vowel(stem) {
        return w.to_vec();
    }
    let mut out = stem.to_vec();
    if out.ends_with(b"at") || out.ends_with(b"bl") || out.ends_with(b"iz") {
        out.push(b'e');
    } else if ends_double_consonant(&out) && !matches!(out[out.len() - 1], b'l' | b's' | b'z') {
        out.pop();
    } else if measure(&out) == 1 && ends_cvc(&out) {
        out.push(b'e');
    }
    out
}
