use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::normalize::{pieces, Piece};
use crate::text::is_stopword;

/// A subject / relation / object triplet over normalized word tokens.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subj: Vec<String>,
    pub rel: Vec<String>,
    pub obj: Vec<String>,
}

impl Triplet {
    pub fn new<S: Into<String>>(
        subj: impl IntoIterator<Item = S>,
        rel: impl IntoIterator<Item = S>,
        obj: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            subj: subj.into_iter().map(Into::into).collect(),
            rel: rel.into_iter().map(Into::into).collect(),
            obj: obj.into_iter().map(Into::into).collect(),
        }
    }

    /// All tokens, subject first.
    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.subj.iter().chain(&self.rel).chain(&self.obj)
    }
}

// Sorted for binary search.
const RELATION_VERBS: &[&str] = &[
    "affect", "affected", "affects", "are", "be", "became", "become", "becomes", "been",
    "cause", "caused", "causes", "contain", "contained", "contains", "created", "creates",
    "had", "has", "have", "impaired", "impairs", "include", "included", "includes",
    "increased", "increases", "is", "live", "lived", "lives", "means", "produce", "produced",
    "produces", "provided", "provides", "reduced", "reduces", "require", "required",
    "requires", "slowed", "slows", "treated", "treats", "was", "were",
];

/// Whether `word` is in the fixed relation-verb list used for extraction.
pub fn is_relation_verb(word: &str) -> bool {
    RELATION_VERBS.binary_search(&word).is_ok()
}

#[derive(Debug, Clone)]
enum Tok {
    Word(String),
    Verb(String),
    Sep,
}

/// Rule-based subject / verb / object extraction over normalized text.
///
/// Sentences end at `.`, `!`, `?` and `;`. Inside a sentence every maximal
/// run of relation verbs is one relation; the words around the runs are
/// split into parts at `and`, `or` and commas.
///
/// * the subject of the first relation is the last part before it;
/// * between two relations, a span with several parts gives its leading
///   parts to the left relation as objects and its last part to the right
///   relation as subject; a single-part span is both (relative clauses:
///   `drug that slows` makes `drug` the subject of `slows`);
/// * the last relation takes every trailing part as an object.
///
/// Stopwords are removed from subjects and objects, and a triplet is only
/// emitted when both are non-empty.
pub fn extract_triplets(text: &str) -> Vec<Triplet> {
    let mut out = Vec::new();
    let mut sentence: Vec<Tok> = Vec::new();
    for piece in pieces(text) {
        match piece {
            Piece::Punct('.' | '!' | '?' | ';') => {
                extract_sentence(&sentence, &mut out);
                sentence.clear();
            }
            Piece::Punct(_) => sentence.push(Tok::Sep),
            Piece::Word(w) if matches!(w.as_str(), "and" | "or") => sentence.push(Tok::Sep),
            Piece::Word(w) if is_relation_verb(&w) => sentence.push(Tok::Verb(w)),
            Piece::Word(w) => sentence.push(Tok::Word(w)),
        }
    }
    extract_sentence(&sentence, &mut out);
    out
}

fn extract_sentence(toks: &[Tok], out: &mut Vec<Triplet>) {
    // segments between verb runs, and the verb runs themselves
    let mut segments: Vec<&[Tok]> = Vec::new();
    let mut relations: Vec<Vec<String>> = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < toks.len() {
        if let Tok::Verb(_) = toks[i] {
            segments.push(&toks[start..i]);
            let mut rel = Vec::new();
            while let Some(Tok::Verb(v)) = toks.get(i) {
                rel.push(v.clone());
                i += 1;
            }
            relations.push(rel);
            start = i;
        } else {
            i += 1;
        }
    }
    if relations.is_empty() {
        return;
    }
    segments.push(&toks[start..]);
    let parts: Vec<Vec<Vec<String>>> = segments.iter().map(|s| split_parts(s)).collect();

    let last = relations.len() - 1;
    for (j, rel) in relations.iter().enumerate() {
        let subject = parts[j].last().cloned().unwrap_or_default();
        let right = &parts[j + 1];
        let objects: &[Vec<String>] = if j < last && right.len() >= 2 {
            &right[..right.len() - 1]
        } else {
            right
        };
        if subject.is_empty() {
            continue;
        }
        for obj in objects {
            out.push(Triplet {
                subj: subject.clone(),
                rel: rel.clone(),
                obj: obj.clone(),
            });
        }
    }
}

/// Content words of each separator-delimited part; empty parts are dropped.
fn split_parts(segment: &[Tok]) -> Vec<Vec<String>> {
    let mut parts = Vec::new();
    let mut current = Vec::new();
    for tok in segment {
        match tok {
            Tok::Sep => {
                if !current.is_empty() {
                    parts.push(core::mem::take(&mut current));
                }
            }
            Tok::Word(w) if !is_stopword(w) => current.push(w.clone()),
            _ => {}
        }
    }
    if !current.is_empty() {
        parts.push(current);
    }
    parts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::normalize_text;

    fn t(subj: &str, rel: &str, obj: &str) -> Triplet {
        Triplet::new(subj.split(' '), rel.split(' '), obj.split(' '))
    }

    #[test]
    fn verb_table_is_sorted() {
        assert!(RELATION_VERBS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_copula() {
        assert_eq!(
            extract_triplets("iceland is a nordic island country"),
            [t("iceland", "is", "nordic island country")]
        );
    }

    #[test]
    fn two_clauses_after_pronoun_resolution() {
        let text = normalize_text(
            "Iceland is a Nordic island country and it is the most sparsely populated country in Europe.",
            true,
        );
        let triplets = extract_triplets(&text);
        assert_eq!(triplets.len(), 2);
        assert!(triplets.iter().all(|tr| tr.subj == ["iceland"]));
        assert_eq!(triplets[0].obj, ["nordic", "island", "country"]);
        assert_eq!(triplets[1].obj, ["sparsely", "populated", "country", "europe"]);
    }

    #[test]
    fn no_pattern_no_triplets() {
        assert!(extract_triplets("the the of").is_empty());
        assert!(extract_triplets("").is_empty());
    }

    #[test]
    fn conjunction_splits_objects() {
        assert_eq!(
            extract_triplets("helium is a gas and a noble element."),
            [t("helium", "is", "gas"), t("helium", "is", "noble element")]
        );
    }

    #[test]
    fn relative_clause_chains_subjects() {
        assert_eq!(
            extract_triplets("marijuana is a depressant drug that slows reaction times."),
            [
                t("marijuana", "is", "depressant drug"),
                t("depressant drug", "slows", "reaction times")
            ]
        );
    }

    #[test]
    fn sentences_are_independent() {
        let out = extract_triplets("zorvex is a red stone. zorvex lives in paris.");
        assert_eq!(out, [t("zorvex", "is", "red stone"), t("zorvex", "lives", "paris")]);
    }

    #[test]
    fn verb_runs_form_one_relation() {
        assert_eq!(
            extract_triplets("the river has been a border"),
            [t("river", "has been", "border")]
        );
    }

    #[test]
    fn missing_subject_skips() {
        assert!(extract_triplets("is a gas").is_empty());
    }
}
