//! Concept graphs: PMI-based self-construction from a corpus, triple-file
//! import, and capped loop-aware neighbor queries.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::corpus::{tokenize, Document, Vocabulary};
use crate::error::{Error, Result};

/// Conservative built-in stopword list; override with `--stopwords <file>`
/// (one word per line).
const BUILTIN_STOPWORDS: &str = "a an the and or but if then than that this these those of in on at to from by for with without as is are was were be been being am do does did have has had it its he she they them his her their we you i me my your our us not no nor so too very can will just there here what which who whom when where why how all any both each few more most other some such only own same s t don now";

pub fn builtin_stopwords() -> HashSet<String> {
    BUILTIN_STOPWORDS
        .split_whitespace()
        .map(|w| w.to_string())
        .collect()
}

/// Loads a stopword file: one word per line, lowercased.
pub fn load_stopwords(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

#[derive(Debug, Clone)]
pub struct GraphConfig {
    pub top_k: usize,
    pub neighbor_cap: usize,
    pub stopwords: HashSet<String>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            top_k: 20,
            neighbor_cap: 20,
            stopwords: builtin_stopwords(),
        }
    }
}

/// Document-level co-occurrence statistics over vocabulary words.
#[derive(Debug)]
pub struct CooccurrenceCounts {
    pub doc_count: usize,
    words: Vec<String>,
    word_index: HashMap<String, u32>,
    word_doc_freq: Vec<u32>,
    /// Keyed by (min id, max id); symmetric by construction.
    pair_doc_freq: HashMap<(u32, u32), u32>,
}

impl CooccurrenceCounts {
    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_doc_freq(&self, word: &str) -> Option<u32> {
        self.word_index.get(word).map(|&i| self.word_doc_freq[i as usize])
    }

    pub fn pair_doc_freq(&self, a: &str, b: &str) -> Option<u32> {
        let ia = *self.word_index.get(a)?;
        let ib = *self.word_index.get(b)?;
        Some(self.pair_freq_ids(ia, ib))
    }

    fn pair_freq_ids(&self, a: u32, b: u32) -> u32 {
        let key = if a < b { (a, b) } else { (b, a) };
        self.pair_doc_freq.get(&key).copied().unwrap_or(0)
    }
}

/// Counts, per document, which vocabulary words occur and which unordered
/// word pairs occur together. A document contributes at most 1 to any
/// frequency. Stopwords and out-of-vocabulary tokens are excluded.
pub fn count_cooccurrence(
    corpus: &[Document],
    vocab: &Vocabulary,
    stopwords: &HashSet<String>,
) -> CooccurrenceCounts {
    let mut words: Vec<String> = Vec::new();
    let mut word_index: HashMap<String, u32> = HashMap::new();
    let mut word_doc_freq: Vec<u32> = Vec::new();
    let mut pair_doc_freq: HashMap<(u32, u32), u32> = HashMap::new();

    for doc in corpus {
        let mut present: Vec<u32> = Vec::new();
        let mut seen: HashSet<u32> = HashSet::new();
        let absorb = |text: &str,
                          words: &mut Vec<String>,
                          word_index: &mut HashMap<String, u32>,
                          word_doc_freq: &mut Vec<u32>,
                          present: &mut Vec<u32>,
                          seen: &mut HashSet<u32>| {
            for tok in tokenize(text) {
                if stopwords.contains(&tok) || vocab.id_of(&tok).is_none() {
                    continue;
                }
                let id = match word_index.get(&tok) {
                    Some(&id) => id,
                    None => {
                        let id = words.len() as u32;
                        word_index.insert(tok.clone(), id);
                        words.push(tok);
                        word_doc_freq.push(0);
                        id
                    }
                };
                if seen.insert(id) {
                    present.push(id);
                }
            }
        };
        absorb(
            &doc.source,
            &mut words,
            &mut word_index,
            &mut word_doc_freq,
            &mut present,
            &mut seen,
        );
        for sentence in &doc.target_sentences {
            absorb(
                sentence,
                &mut words,
                &mut word_index,
                &mut word_doc_freq,
                &mut present,
                &mut seen,
            );
        }
        for &id in &present {
            word_doc_freq[id as usize] += 1;
        }
        present.sort_unstable();
        for i in 0..present.len() {
            for j in (i + 1)..present.len() {
                *pair_doc_freq.entry((present[i], present[j])).or_insert(0) += 1;
            }
        }
    }

    CooccurrenceCounts {
        doc_count: corpus.len(),
        words,
        word_index,
        word_doc_freq,
        pair_doc_freq,
    }
}

/// Natural-log pointwise mutual information with document-frequency
/// probabilities. Returns `None` when the pair never co-occurs (no edge);
/// a word absent from the counts is an error.
pub fn pmi(a: &str, b: &str, counts: &CooccurrenceCounts) -> Result<Option<f64>> {
    let ia = *counts
        .word_index
        .get(a)
        .ok_or_else(|| Error::UnknownWord(a.to_string()))?;
    let ib = *counts
        .word_index
        .get(b)
        .ok_or_else(|| Error::UnknownWord(b.to_string()))?;
    let joint = counts.pair_freq_ids(ia, ib);
    if joint == 0 {
        return Ok(None);
    }
    let n = counts.doc_count as f64;
    let p_joint = joint as f64 / n;
    let p_a = counts.word_doc_freq[ia as usize] as f64 / n;
    let p_b = counts.word_doc_freq[ib as usize] as f64 / n;
    Ok(Some((p_joint / (p_a * p_b)).ln()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphOrigin {
    SelfConstructed,
    Imported,
}

/// An immutable concept graph. Triples are stored directed (that is what
/// `triple_count` reports and what the TSV export contains); neighbor
/// queries answer over the union of out- and in-edges.
#[derive(Debug)]
pub struct ConceptGraph {
    nodes: Vec<String>,
    node_index: HashMap<String, u32>,
    adjacency: Vec<Vec<(u32, u32)>>,
    relations: Vec<String>,
    triples: Vec<(u32, u32, u32)>,
    origin: GraphOrigin,
}

impl ConceptGraph {
    fn new(origin: GraphOrigin) -> Self {
        ConceptGraph {
            nodes: Vec::new(),
            node_index: HashMap::new(),
            adjacency: Vec::new(),
            relations: Vec::new(),
            triples: Vec::new(),
            origin,
        }
    }

    fn intern_node(&mut self, name: &str) -> u32 {
        match self.node_index.get(name) {
            Some(&id) => id,
            None => {
                let id = self.nodes.len() as u32;
                self.node_index.insert(name.to_string(), id);
                self.nodes.push(name.to_string());
                self.adjacency.push(Vec::new());
                id
            }
        }
    }

    fn intern_relation(&mut self, name: &str) -> u32 {
        match self.relations.iter().position(|r| r == name) {
            Some(i) => i as u32,
            None => {
                self.relations.push(name.to_string());
                (self.relations.len() - 1) as u32
            }
        }
    }

    /// Records a directed triple; adjacency becomes visible from both
    /// endpoints. Self-loops and exact duplicate adjacency entries are
    /// ignored.
    fn add_triple(&mut self, head: &str, relation: &str, tail: &str) {
        if head == tail {
            return;
        }
        let h = self.intern_node(head);
        let t = self.intern_node(tail);
        let r = self.intern_relation(relation);
        self.triples.push((h, r, t));
        if !self.adjacency[h as usize].iter().any(|&(n, _)| n == t) {
            self.adjacency[h as usize].push((t, r));
        }
        if !self.adjacency[t as usize].iter().any(|&(n, _)| n == h) {
            self.adjacency[t as usize].push((h, r));
        }
    }

    pub fn origin(&self) -> GraphOrigin {
        self.origin
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of stored directed triples.
    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn contains(&self, concept: &str) -> bool {
        self.node_index.contains_key(concept)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_id(&self, concept: &str) -> Option<u32> {
        self.node_index.get(concept).copied()
    }

    pub fn node_name(&self, id: u32) -> &str {
        &self.nodes[id as usize]
    }

    /// Raw adjacency list of a node in stored order (neighbor id, relation id).
    pub fn adjacency_of(&self, id: u32) -> &[(u32, u32)] {
        &self.adjacency[id as usize]
    }

    pub fn relation_name(&self, id: u32) -> &str {
        &self.relations[id as usize]
    }

    /// First `cap` adjacent concepts in stored order, skipping anything in
    /// `visited`. Unknown concepts are an error.
    pub fn neighbors(
        &self,
        concept: &str,
        cap: usize,
        visited: &HashSet<String>,
    ) -> Result<Vec<String>> {
        let id = self
            .node_id(concept)
            .ok_or_else(|| Error::UnknownConcept(concept.to_string()))?;
        Ok(self
            .neighbor_ids(id, cap, |n| visited.contains(&self.nodes[n as usize]))
            .into_iter()
            .map(|n| self.nodes[n as usize].clone())
            .collect())
    }

    /// Id-based neighbor query used by the search loops.
    pub fn neighbor_ids(&self, id: u32, cap: usize, is_visited: impl Fn(u32) -> bool) -> Vec<u32> {
        self.adjacency[id as usize]
            .iter()
            .map(|&(n, _)| n)
            .filter(|&n| !is_visited(n))
            .take(cap)
            .collect()
    }

    /// Serializes the stored triples as `head<TAB>relation<TAB>tail` lines.
    pub fn write_triples(&self, w: &mut impl Write) -> std::io::Result<()> {
        for &(h, r, t) in &self.triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.nodes[h as usize], self.relations[r as usize], self.nodes[t as usize]
            )?;
        }
        Ok(())
    }

    pub fn to_tsv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_triples(&mut buf).expect("write to Vec");
        buf
    }
}

/// Builds the self-constructed graph: for every counted word, directed
/// edges to its `top_k` highest-PMI co-occurring partners, ties broken
/// lexicographically by partner.
pub fn build_self_graph(
    corpus: &[Document],
    vocab: &Vocabulary,
    config: &GraphConfig,
) -> ConceptGraph {
    let counts = count_cooccurrence(corpus, vocab, &config.stopwords);
    self_graph_from_counts(&counts, config.top_k)
}

/// Graph construction from precomputed counts; split out so callers can
/// reuse the counting pass.
pub fn self_graph_from_counts(counts: &CooccurrenceCounts, top_k: usize) -> ConceptGraph {
    // Partner lists per word, in pair-insertion order.
    let mut partners: Vec<Vec<u32>> = vec![Vec::new(); counts.word_count()];
    let mut pairs: Vec<(&(u32, u32), &u32)> = counts.pair_doc_freq.iter().collect();
    pairs.sort_unstable_by_key(|(k, _)| **k);
    for (&(a, b), _) in pairs {
        partners[a as usize].push(b);
        partners[b as usize].push(a);
    }

    let mut graph = ConceptGraph::new(GraphOrigin::SelfConstructed);
    let n = counts.doc_count as f64;
    // Iterate words in counting order so node ids and triple order are
    // reproducible for a fixed corpus.
    for (wid, word) in counts.words.iter().enumerate() {
        graph.intern_node(word);
        let p_w = counts.word_doc_freq[wid] as f64 / n;
        let mut scored: Vec<(f64, &str, u32)> = partners[wid]
            .iter()
            .map(|&pid| {
                let joint = counts.pair_freq_ids(wid as u32, pid) as f64 / n;
                let p_p = counts.word_doc_freq[pid as usize] as f64 / n;
                let score = (joint / (p_w * p_p)).ln();
                (score, counts.words[pid as usize].as_str(), pid)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("finite pmi")
                .then_with(|| a.1.cmp(b.1))
        });
        for (_, partner, _) in scored.into_iter().take(top_k) {
            graph.add_triple(word, "pmi", partner);
        }
    }
    graph
}

/// Outcome of loading a triple file.
#[derive(Debug)]
pub struct ImportOutcome {
    pub graph: ConceptGraph,
    pub skipped: usize,
}

/// Imports a `head<TAB>relation<TAB>tail` triple file as an undirected
/// graph. Malformed lines and self-loops are skipped with a warning;
/// duplicate triples collapse to one.
pub fn import_triples(path: impl AsRef<Path>) -> Result<ImportOutcome> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut graph = ConceptGraph::new(GraphOrigin::Imported);
    let mut seen: HashSet<(String, String, String)> = HashSet::new();
    let mut skipped = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (head, rel, tail) = match (parts.next(), parts.next(), parts.next()) {
            (Some(h), Some(r), Some(t))
                if !h.is_empty() && !r.is_empty() && !t.is_empty() && h != t =>
            {
                (h, r, t)
            }
            _ => {
                skipped += 1;
                eprintln!("warning: skipping malformed triple at line {}", lineno + 1);
                continue;
            }
        };
        if seen.insert((head.to_string(), rel.to_string(), tail.to_string())) {
            graph.add_triple(head, rel, tail);
        }
    }
    Ok(ImportOutcome { graph, skipped })
}

/// Tokens that are graph nodes, deduplicated in first-occurrence order,
/// stopwords excluded.
pub fn match_concepts<S: AsRef<str>>(
    tokens: &[S],
    graph: &ConceptGraph,
    stopwords: &HashSet<String>,
) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for tok in tokens {
        let tok = tok.as_ref();
        if stopwords.contains(tok) || !graph.contains(tok) {
            continue;
        }
        if seen.insert(tok.to_string()) {
            out.push(tok.to_string());
        }
    }
    out
}
