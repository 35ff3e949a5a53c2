use std::path::Path;

use kid::formats::{parse_trie, read_chunk_store, read_trie, save_chunk_store, save_trie, write_trie};
use kid::KidError;
use kid_core::knowledge::{KnowledgeTrie, Triplet};
use kid_core::retriever::{ChunkStore, Document, TfIdfScorer};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn word(i: usize) -> String {
    let mut s = String::from("zor");
    let mut i = i;
    loop {
        s.push((b'a' + (i % 26) as u8) as char);
        i /= 26;
        if i == 0 {
            return s;
        }
    }
}

#[test]
fn ten_thousand_triplet_trie_round_trips() {
    let mut rng = StdRng::seed_from_u64(12);
    let triplets: Vec<Triplet> = (0..10_000)
        .map(|_| {
            let obj: Vec<String> = (0..rng.gen_range(1..3)).map(|_| word(rng.gen_range(0..5000))).collect();
            Triplet::new(vec![word(rng.gen_range(0..2500))], vec!["has".into()], obj)
        })
        .collect();
    let trie = KnowledgeTrie::build(&triplets);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trie.jsonl");
    save_trie(&path, &trie).unwrap();
    let back = read_trie(&path).unwrap();
    assert_eq!(back, trie);
    for _ in 0..100 {
        let w = word(rng.gen_range(0..5000));
        let h = rng.gen_range(0..6);
        assert_eq!(back.query(&w, h), trie.query(&w, h));
    }
    let mut again = Vec::new();
    write_trie(&mut again, &back, &path).unwrap();
    assert_eq!(again, std::fs::read(&path).unwrap());
}

#[test]
fn truncated_trie_file_is_rejected_with_a_line_number() {
    let trie = KnowledgeTrie::build(&[
        Triplet::new(["helium"], ["is"], ["gas"]),
        Triplet::new(["gas"], ["fills"], ["balloons"]),
    ]);
    let mut bytes = Vec::new();
    write_trie(&mut bytes, &trie, Path::new("t")).unwrap();
    let text = String::from_utf8(bytes).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.truncate(lines.len() - 1);
    let cut = lines.join("\n");
    assert!(matches!(parse_trie(cut.as_bytes(), Path::new("t")), Err(KidError::Format { .. })));
    let broken = text.replacen("\"entries\"", "\"entrys\"", 1);
    match parse_trie(broken.as_bytes(), Path::new("t")) {
        Err(KidError::Format { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn chunk_store_file_preserves_retrieval() {
    let docs: Vec<Document> = (0..30)
        .map(|i| Document {
            id: format!("d{i:02}"),
            title: String::new(),
            text: format!("{} is near {} and {}", word(i), word(i + 1), word(i * 7 % 30)),
        })
        .collect();
    let store = ChunkStore::ingest(&docs, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chunks.jsonl");
    save_chunk_store(&path, &store).unwrap();
    let back = read_chunk_store(&path).unwrap();
    assert_eq!(back, store);
    for i in 0..30 {
        let q = [word(i)];
        assert_eq!(back.retrieve(&q, 5, &TfIdfScorer).unwrap(), store.retrieve(&q, 5, &TfIdfScorer).unwrap());
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let err = read_trie(Path::new("/nonexistent/trie.jsonl")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
