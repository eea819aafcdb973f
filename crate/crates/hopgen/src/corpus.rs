//! Corpus loading, sentence segmentation, tokenization, and the bounded
//! vocabulary shared by graph construction and both models.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const BOS_ID: u32 = 3;
pub const EOS_ID: u32 = 4;

/// Special token surface forms, in reserved id order.
pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<sep>", "<bos>", "<eos>"];

/// One training record: a source context and its target sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub source: String,
    pub target_sentences: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(Error::Config(format!("unknown corpus format: {other}"))),
        }
    }
}

/// Result of loading a corpus file: parsed documents plus the number of
/// malformed records that were skipped.
#[derive(Debug)]
pub struct LoadOutcome {
    pub documents: Vec<Document>,
    pub skipped: usize,
}

#[derive(Deserialize)]
struct RawRecord {
    source: Option<String>,
    target: Option<String>,
}

/// Loads a corpus file. Records missing `source` or `target` (or whose
/// source tokenizes to nothing) are counted and skipped; an unreadable
/// file is fatal.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<LoadOutcome> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut documents = Vec::new();
    let mut skipped = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Option<(String, String)> = match format {
            CorpusFormat::Jsonl => match serde_json::from_str::<RawRecord>(&line) {
                Ok(RawRecord {
                    source: Some(s),
                    target: Some(t),
                }) => Some((s, t)),
                _ => None,
            },
            CorpusFormat::Tsv => line
                .split_once('\t')
                .map(|(s, t)| (s.to_string(), t.to_string())),
        };
        match parsed.and_then(|(source, target)| document_from_pair(source, target)) {
            Some(doc) => documents.push(doc),
            None => {
                skipped += 1;
                eprintln!("warning: skipping malformed record at line {}", lineno + 1);
            }
        }
    }
    Ok(LoadOutcome { documents, skipped })
}

fn document_from_pair(source: String, target: String) -> Option<Document> {
    if tokenize(&source).is_empty() {
        return None;
    }
    let target_sentences = split_sentences(&target);
    if target_sentences.is_empty() {
        return None;
    }
    Some(Document {
        source,
        target_sentences,
    })
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '。' | '！' | '？')
}

/// Splits text into sentences at terminal punctuation (`.`, `!`, `?` and
/// their CJK equivalents). Runs of terminal punctuation stay attached to
/// the preceding sentence; a trailing segment without a terminal is kept.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut in_terminal_run = false;

    for c in text.chars() {
        if is_terminal(c) {
            current.push(c);
            in_terminal_run = true;
        } else {
            if in_terminal_run {
                let trimmed = current.trim();
                if !trimmed.is_empty() {
                    sentences.push(trimmed.to_string());
                }
                current.clear();
                in_terminal_run = false;
            }
            current.push(c);
        }
    }
    let trimmed = current.trim();
    if !trimmed.is_empty() {
        sentences.push(trimmed.to_string());
    }
    sentences
}

/// Lowercases and splits text into word and punctuation tokens. Alphanumeric
/// runs form word tokens; every other non-whitespace character becomes a
/// single-character token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Frequency-bounded token vocabulary with five reserved special ids.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    size_limit: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from a corpus keeping the most frequent tokens,
    /// ties broken lexicographically. `limit` bounds the total size
    /// including the five specials.
    pub fn build(corpus: &[Document], limit: usize) -> Result<Self> {
        if limit <= SPECIAL_TOKENS.len() {
            return Err(Error::Config(format!(
                "vocabulary limit must exceed {}, got {limit}",
                SPECIAL_TOKENS.len()
            )));
        }
        let mut freq: HashMap<String, u64> = HashMap::new();
        for doc in corpus {
            for tok in tokenize(&doc.source) {
                *freq.entry(tok).or_insert(0) += 1;
            }
            for sentence in &doc.target_sentences {
                for tok in tokenize(sentence) {
                    *freq.entry(tok).or_insert(0) += 1;
                }
            }
        }
        let mut entries: Vec<(String, u64)> = freq.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(limit - SPECIAL_TOKENS.len());
        let tokens: Vec<String> = entries.into_iter().map(|(t, _)| t).collect();
        Ok(Self::from_tokens(tokens, limit))
    }

    fn from_tokens(tokens: Vec<String>, size_limit: usize) -> Self {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            index.insert(tok.clone(), (i + SPECIAL_TOKENS.len()) as u32);
        }
        Vocabulary {
            tokens,
            index,
            size_limit,
        }
    }

    /// Total size including specials.
    pub fn len(&self) -> usize {
        self.tokens.len() + SPECIAL_TOKENS.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    pub fn size_limit(&self) -> usize {
        self.size_limit
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        SPECIAL_TOKENS
            .iter()
            .position(|s| *s == token)
            .map(|i| i as u32)
            .or_else(|| self.index.get(token).copied())
    }

    pub fn token_of(&self, id: u32) -> Result<&str> {
        let i = id as usize;
        if i < SPECIAL_TOKENS.len() {
            Ok(SPECIAL_TOKENS[i])
        } else {
            self.tokens
                .get(i - SPECIAL_TOKENS.len())
                .map(|s| s.as_str())
                .ok_or(Error::IdOutOfRange {
                    id,
                    size: self.len(),
                })
        }
    }

    /// Maps tokens to ids; out-of-vocabulary tokens become `UNK_ID`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.id_of(t.as_ref()).unwrap_or(UNK_ID))
            .collect()
    }

    /// Maps ids back to token strings; any id outside the vocabulary is an
    /// error.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| self.token_of(id).map(|s| s.to_string()))
            .collect()
    }

    /// Non-special tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Stable 64-bit digest of the vocabulary contents, used to tie
    /// checkpoints and graph artifacts to the vocabulary they were built
    /// with.
    pub fn content_hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        for tok in &self.tokens {
            hasher.update(tok.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Writes the vocabulary file: one token per line, line number = id - 5.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        for tok in &self.tokens {
            writeln!(w, "{tok}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(&path, e))?;
        crate::artifact::write_atomic(&path, &buf)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)
            .map_err(|e| Error::Data(format!("vocabulary not valid UTF-8: {e}")))?;
        let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        let limit = tokens.len() + SPECIAL_TOKENS.len();
        Ok(Self::from_tokens(tokens, limit))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Self::read_from(&mut file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write as _;

    #[test]
    fn tokenize_isolates_punctuation_and_lowercases() {
        assert_eq!(tokenize("The cat sat."), vec!["the", "cat", "sat", "."]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("A A a"), vec!["a", "a", "a"]);
    }

    #[test]
    fn split_sentences_on_terminals() {
        assert_eq!(split_sentences("a. b! c?"), vec!["a.", "b!", "c?"]);
        assert_eq!(
            split_sentences("no terminal punctuation"),
            vec!["no terminal punctuation"]
        );
        assert_eq!(split_sentences(""), Vec::<String>::new());
    }

    #[test]
    fn split_sentences_cjk_terminals() {
        assert_eq!(split_sentences("你好。再见！"), vec!["你好。", "再见！"]);
    }

    #[test]
    fn split_sentences_keeps_terminal_runs_together() {
        assert_eq!(split_sentences("wow!! then what?"), vec!["wow!!", "then what?"]);
    }

    #[test]
    fn load_corpus_counts_skipped_records() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"source": "a b.", "target": "c d."}}"#).unwrap();
        writeln!(f, r#"{{"source": "only source"}}"#).unwrap();
        writeln!(f, r#"{{"source": "e f.", "target": "g h."}}"#).unwrap();
        let out = load_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(out.documents.len(), 2);
        assert_eq!(out.skipped, 1);
    }

    #[test]
    fn load_corpus_empty_file() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let out = load_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        assert!(out.documents.is_empty());
        assert_eq!(out.skipped, 0);
    }

    #[test]
    fn load_corpus_single_record() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"source": "a cat.", "target": "it sat. it slept."}}"#).unwrap();
        let out = load_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(out.documents.len(), 1);
        assert_eq!(
            out.documents[0].target_sentences,
            vec!["it sat.", "it slept."]
        );
    }

    #[test]
    fn load_corpus_tsv() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a cat.\tit sat.").unwrap();
        writeln!(f, "no tab on this line").unwrap();
        let out = load_corpus(f.path(), CorpusFormat::Tsv).unwrap();
        assert_eq!(out.documents.len(), 1);
        assert_eq!(out.skipped, 1);
    }

    #[test]
    fn load_corpus_missing_file_is_fatal() {
        assert!(load_corpus("/nonexistent/corpus.jsonl", CorpusFormat::Jsonl).is_err());
    }

    fn docs_from_words(words: &[&str]) -> Vec<Document> {
        words
            .iter()
            .map(|w| Document {
                source: w.to_string(),
                target_sentences: vec![w.to_string()],
            })
            .collect()
    }

    #[test]
    fn vocab_under_limit_keeps_everything() {
        let docs = docs_from_words(&["a", "b", "c", "d", "e"]);
        let vocab = Vocabulary::build(&docs, 16_000).unwrap();
        assert_eq!(vocab.len(), 10); // 5 words + 5 specials
    }

    #[test]
    fn vocab_keeps_most_frequent_under_limit() {
        // Ten distinct words; "w0" appears most often, "w9" least.
        let mut docs = Vec::new();
        for (i, w) in ["w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7", "w8", "w9"]
            .iter()
            .enumerate()
        {
            for _ in 0..(10 - i) {
                docs.push(Document {
                    source: w.to_string(),
                    target_sentences: vec![w.to_string()],
                });
            }
        }
        let vocab = Vocabulary::build(&docs, 8).unwrap();
        assert_eq!(vocab.tokens(), &["w0", "w1", "w2"]);
    }

    #[test]
    fn vocab_ties_break_lexicographically() {
        let docs = docs_from_words(&["zebra", "apple"]);
        let vocab = Vocabulary::build(&docs, 7).unwrap();
        assert_eq!(vocab.tokens(), &["apple", "zebra"]);
    }

    #[test]
    fn encode_unknown_maps_to_unk() {
        let docs = docs_from_words(&["known"]);
        let vocab = Vocabulary::build(&docs, 100).unwrap();
        assert_eq!(vocab.encode(&["known", "mystery"]), vec![5, UNK_ID]);
    }

    #[test]
    fn decode_out_of_range_errors() {
        let docs = docs_from_words(&["known"]);
        let vocab = Vocabulary::build(&docs, 100).unwrap();
        let bad = vocab.len() as u32;
        assert!(vocab.decode(&[bad]).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let docs = docs_from_words(&["one", "two", "three"]);
        let vocab = Vocabulary::build(&docs, 100).unwrap();
        let mut buf = Vec::new();
        vocab.write_to(&mut buf).unwrap();
        let loaded = Vocabulary::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded.tokens(), vocab.tokens());
        assert_eq!(loaded.content_hash(), vocab.content_hash());
    }

    proptest! {
        #[test]
        fn decode_encode_round_trips_in_vocab(words in proptest::collection::vec("[a-e]{1,3}", 1..20)) {
            let docs = docs_from_words(&words.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            let vocab = Vocabulary::build(&docs, 16_000).unwrap();
            let ids = vocab.encode(&words);
            let back = vocab.decode(&ids).unwrap();
            prop_assert_eq!(back, words);
        }

        #[test]
        fn split_preserves_non_whitespace(text in "[ a-z.!?。]{0,80}") {
            let joined: String = split_sentences(&text).concat();
            let left: String = text.chars().filter(|c| !c.is_whitespace()).collect();
            let right: String = joined.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(left, right);
        }

        #[test]
        fn vocab_never_exceeds_limit(words in proptest::collection::vec("[a-z]{1,4}", 0..40), limit in 6usize..20) {
            let docs = docs_from_words(&words.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            let vocab = Vocabulary::build(&docs, limit).unwrap();
            prop_assert!(vocab.len() <= limit);
        }
    }
}
