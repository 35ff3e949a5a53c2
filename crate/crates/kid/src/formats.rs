//! On-disk formats. All are UTF-8 JSON lines; blank lines are ignored on
//! read and parse errors carry the 1-based line number.
//!
//! * corpus: one `{id, title, text}` object per document.
//! * chunk store: a header `{version, chunk_size, chunk_count, vocabulary,
//!   document_frequencies}` then one `{doc_id, chunk_index, tokens}` per chunk.
//! * trie: a header `{version, key_count, triplet_count}` then one
//!   `{key, max_depth, entries: [{value, rel, next}]}` per key, keys ascending.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use kid_core::knowledge::{KnowledgeTrie, TrieEntry, TrieIntegrityError};
use kid_core::retriever::{Chunk, ChunkStore, Document};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{KidError, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| KidError::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| KidError::io(path, e))
}

/// Non-blank lines with their 1-based numbers.
fn numbered_lines(reader: impl BufRead, path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| KidError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_line<T: DeserializeOwned>(path: &Path, line: usize, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| KidError::format(path, line, e.to_string()))
}

pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead, path: &Path) -> Result<Vec<T>> {
    numbered_lines(reader, path)?
        .into_iter()
        .map(|(n, l)| parse_line(path, n, &l))
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(open(path)?, path)
}

pub fn to_line<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| KidError::Internal(e.to_string()))
}

pub fn write_jsonl<T: Serialize>(mut w: impl Write, items: &[T], path: &Path) -> Result<()> {
    for item in items {
        writeln!(w, "{}", to_line(item)?).map_err(|e| KidError::io(path, e))?;
    }
    w.flush().map_err(|e| KidError::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    read_jsonl(path)
}

/// Plain-text lines, trimmed, blanks dropped.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(numbered_lines(open(path)?, path)?
        .into_iter()
        .map(|(_, l)| l.trim().to_string())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ChunkStoreHeader {
    version: u32,
    chunk_size: usize,
    chunk_count: usize,
    vocabulary: Vec<String>,
    document_frequencies: BTreeMap<String, usize>,
}

pub fn write_chunk_store(mut w: impl Write, store: &ChunkStore, path: &Path) -> Result<()> {
    let df = store.document_frequencies().clone();
    let header = ChunkStoreHeader {
        version: FORMAT_VERSION,
        chunk_size: store.chunk_size(),
        chunk_count: store.len(),
        vocabulary: df.keys().cloned().collect(),
        document_frequencies: df,
    };
    writeln!(w, "{}", to_line(&header)?).map_err(|e| KidError::io(path, e))?;
    write_jsonl(w, store.chunks(), path)
}

/// Reads a chunk store and rejects it if the stored index disagrees with
/// the one recomputed from its chunks.
pub fn parse_chunk_store(reader: impl BufRead, path: &Path) -> Result<ChunkStore> {
    let lines = numbered_lines(reader, path)?;
    let Some((header_line, header_text)) = lines.first() else {
        return Err(KidError::format(path, 1, "missing chunk store header"));
    };
    let header: ChunkStoreHeader = parse_line(path, *header_line, header_text)?;
    if header.version != FORMAT_VERSION {
        return Err(KidError::format(path, *header_line, format!("unsupported version {}", header.version)));
    }
    let chunks = lines[1..]
        .iter()
        .map(|(n, l)| parse_line::<Chunk>(path, *n, l))
        .collect::<Result<Vec<_>>>()?;
    if chunks.len() != header.chunk_count {
        return Err(KidError::format(
            path,
            *header_line,
            format!("header declares {} chunks, file has {}", header.chunk_count, chunks.len()),
        ));
    }
    let store = ChunkStore::from_chunks(header.chunk_size, chunks).map_err(|e| KidError::format(path, *header_line, e.to_string()))?;
    let vocab_matches = header.vocabulary.iter().eq(header.document_frequencies.keys());
    if !vocab_matches || store.document_frequencies() != &header.document_frequencies {
        return Err(KidError::format(path, *header_line, "index header does not match the chunks"));
    }
    Ok(store)
}

pub fn read_chunk_store(path: &Path) -> Result<ChunkStore> {
    parse_chunk_store(open(path)?, path)
}

pub fn save_chunk_store(path: &Path, store: &ChunkStore) -> Result<()> {
    write_chunk_store(create(path)?, store, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrieHeader {
    version: u32,
    key_count: usize,
    triplet_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EntryLine {
    value: Vec<String>,
    rel: Vec<String>,
    next: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KeyLine {
    key: String,
    max_depth: usize,
    entries: Vec<EntryLine>,
}

pub fn write_trie(mut w: impl Write, trie: &KnowledgeTrie, path: &Path) -> Result<()> {
    let header = TrieHeader {
        version: FORMAT_VERSION,
        key_count: trie.key_count(),
        triplet_count: trie.triplet_count(),
    };
    writeln!(w, "{}", to_line(&header)?).map_err(|e| KidError::io(path, e))?;
    for (key, entries) in trie.iter() {
        let line = KeyLine {
            key: key.to_string(),
            max_depth: trie.max_child_depth(key),
            entries: entries
                .iter()
                .map(|e| EntryLine {
                    value: e.value.clone(),
                    rel: e.relation.clone(),
                    next: e.next.clone(),
                })
                .collect(),
        };
        writeln!(w, "{}", to_line(&line)?).map_err(|e| KidError::io(path, e))?;
    }
    w.flush().map_err(|e| KidError::io(path, e))
}

pub fn parse_trie(reader: impl BufRead, path: &Path) -> Result<KnowledgeTrie> {
    let lines = numbered_lines(reader, path)?;
    let Some((header_line, header_text)) = lines.first() else {
        return Err(KidError::format(path, 1, "missing trie header"));
    };
    let header: TrieHeader = parse_line(path, *header_line, header_text)?;
    if header.version != FORMAT_VERSION {
        return Err(KidError::format(path, *header_line, format!("unsupported version {}", header.version)));
    }
    let mut entries = BTreeMap::new();
    let mut depths = BTreeMap::new();
    let mut line_of = BTreeMap::new();
    let mut previous: Option<String> = None;
    for (n, text) in &lines[1..] {
        let kl: KeyLine = parse_line(path, *n, text)?;
        if previous.as_ref().is_some_and(|p| *p >= kl.key) {
            return Err(KidError::format(path, *n, format!("key {:?} is out of order or repeated", kl.key)));
        }
        previous = Some(kl.key.clone());
        line_of.insert(kl.key.clone(), *n);
        depths.insert(kl.key.clone(), kl.max_depth);
        let list: Vec<TrieEntry> = kl
            .entries
            .into_iter()
            .map(|e| TrieEntry {
                value: e.value,
                relation: e.rel,
                next: e.next,
            })
            .collect();
        entries.insert(kl.key, list);
    }
    if entries.len() != header.key_count {
        return Err(KidError::format(
            path,
            *header_line,
            format!("header declares {} keys, file has {}", header.key_count, entries.len()),
        ));
    }
    KnowledgeTrie::from_parts(entries, depths, header.triplet_count).map_err(|e| {
        let key = match &e {
            TrieIntegrityError::DanglingLink { key, .. } | TrieIntegrityError::MissingDepth { key } => key,
        };
        KidError::format(path, line_of.get(key).copied().unwrap_or(*header_line), e.to_string())
    })
}

pub fn read_trie(path: &Path) -> Result<KnowledgeTrie> {
    parse_trie(open(path)?, path)
}

pub fn save_trie(path: &Path, trie: &KnowledgeTrie) -> Result<()> {
    write_trie(create(path)?, trie, path)
}
