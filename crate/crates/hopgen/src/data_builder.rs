//! Self-supervised dataset construction: hop-wise labelling examples and
//! path-to-sentence realization examples from consecutive sentence pairs.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Document, Vocabulary, BOS_ID, EOS_ID};
use crate::error::{Error, Result};
use crate::graph::{match_concepts, ConceptGraph, GraphConfig};

/// Three-way node label. The discriminants double as classifier class
/// indices, and the ordering is the fixed tie-break order (lower wins on
/// exact probability ties).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeLabel {
    Other = 0,
    Intermediate = 1,
    Target = 2,
}

impl NodeLabel {
    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn from_class_index(i: usize) -> Option<NodeLabel> {
        match i {
            0 => Some(NodeLabel::Other),
            1 => Some(NodeLabel::Intermediate),
            2 => Some(NodeLabel::Target),
            _ => None,
        }
    }
}

/// A loop-free concept chain: every node is labeled Intermediate except the
/// final Target node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPath {
    pub nodes: Vec<String>,
    pub labels: Vec<NodeLabel>,
}

impl LabeledPath {
    /// Builds the canonical labelling for a chain: all Intermediate, last
    /// node Target. Requires at least two nodes (one hop).
    pub fn from_nodes(nodes: Vec<String>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Data("a labeled path spans at least one hop".into()));
        }
        let mut labels = vec![NodeLabel::Intermediate; nodes.len()];
        *labels.last_mut().unwrap() = NodeLabel::Target;
        let path = LabeledPath { nodes, labels };
        path.validate()?;
        Ok(path)
    }

    pub fn start(&self) -> &str {
        &self.nodes[0]
    }

    pub fn end(&self) -> &str {
        self.nodes.last().unwrap()
    }

    /// Edge count.
    pub fn hops(&self) -> usize {
        self.nodes.len() - 1
    }

    /// All nodes except the terminal target.
    pub fn intermediates(&self) -> &[String] {
        &self.nodes[..self.nodes.len() - 1]
    }

    /// Checks the type invariants: parallel labels, loop-free, exactly the
    /// last node labeled Target.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.len() != self.labels.len() {
            return Err(Error::Data("path labels not parallel to nodes".into()));
        }
        if self.nodes.len() < 2 {
            return Err(Error::Data("path shorter than one hop".into()));
        }
        let distinct: HashSet<&String> = self.nodes.iter().collect();
        if distinct.len() != self.nodes.len() {
            return Err(Error::Data(format!("path revisits a node: {:?}", self.nodes)));
        }
        for (i, label) in self.labels.iter().enumerate() {
            let want = if i + 1 == self.labels.len() {
                NodeLabel::Target
            } else {
                NodeLabel::Intermediate
            };
            if *label != want {
                return Err(Error::Data(format!(
                    "label at position {i} is {label:?}, expected {want:?}"
                )));
            }
        }
        Ok(())
    }
}

/// One hop-wise sequence-labelling record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabellingExample {
    pub context_ids: Vec<u32>,
    pub candidates: Vec<String>,
    pub labels: Vec<NodeLabel>,
    pub hop: usize,
}

/// One paths-to-sentence realization record; `target_ids` carry BOS/EOS.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizationExample {
    pub paths: Vec<LabeledPath>,
    pub target_ids: Vec<u32>,
}

/// Consecutive sentence pairs over `[source, y1, ..., yn]`; a document with
/// s total sentences yields s-1 pairs.
pub fn sentence_pairs(doc: &Document) -> Vec<(String, String)> {
    let mut seq = Vec::with_capacity(doc.target_sentences.len() + 1);
    seq.push(doc.source.clone());
    seq.extend(doc.target_sentences.iter().cloned());
    seq.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect()
}

/// Breadth-first search from every former-sentence concept for the shortest
/// loop-free route (at most `max_hops` edges, at most `neighbor_cap`
/// expansions per node) to each reachable latter-sentence concept. Ties at
/// equal length break by lexicographic node sequence.
pub fn find_labeled_paths(
    former_concepts: &[String],
    latter_concepts: &[String],
    graph: &ConceptGraph,
    max_hops: usize,
    neighbor_cap: usize,
) -> Vec<LabeledPath> {
    let latter: HashSet<&str> = latter_concepts.iter().map(|s| s.as_str()).collect();
    let mut out = Vec::new();

    for start in former_concepts {
        let Some(start_id) = graph.node_id(start) else {
            continue;
        };
        // Per-end shortest winner for this start.
        let mut resolved: HashMap<u32, Vec<u32>> = HashMap::new();
        let mut frontier: Vec<Vec<u32>> = vec![vec![start_id]];

        for _depth in 1..=max_hops {
            let mut next: Vec<Vec<u32>> = Vec::new();
            let mut level_hits: HashMap<u32, Vec<u32>> = HashMap::new();
            for path in &frontier {
                let tail = *path.last().unwrap();
                let expansions =
                    graph.neighbor_ids(tail, neighbor_cap, |n| path.contains(&n));
                for nb in expansions {
                    let mut extended = path.clone();
                    extended.push(nb);
                    if latter.contains(graph.node_name(nb)) && !resolved.contains_key(&nb) {
                        match level_hits.get(&nb) {
                            Some(best) if !lex_less(graph, &extended, best) => {}
                            _ => {
                                level_hits.insert(nb, extended.clone());
                            }
                        }
                    }
                    next.push(extended);
                }
            }
            for (end, path) in level_hits {
                resolved.insert(end, path);
            }
            frontier = next;
            if frontier.is_empty() {
                break;
            }
        }

        let mut paths: Vec<Vec<u32>> = resolved.into_values().collect();
        paths.sort_by(|a, b| {
            a.len()
                .cmp(&b.len())
                .then_with(|| graph.node_name(*a.last().unwrap()).cmp(graph.node_name(*b.last().unwrap())))
        });
        for ids in paths {
            let nodes = ids.iter().map(|&i| graph.node_name(i).to_string()).collect();
            out.push(LabeledPath::from_nodes(nodes).expect("search emits valid paths"));
        }
    }
    out
}

fn lex_less(graph: &ConceptGraph, a: &[u32], b: &[u32]) -> bool {
    let names = |p: &[u32]| p.iter().map(|&i| graph.node_name(i).to_string()).collect::<Vec<_>>();
    names(a) < names(b)
}

fn pair_concepts(
    former: &str,
    latter: &str,
    graph: &ConceptGraph,
    config: &GraphConfig,
) -> (Vec<String>, Vec<String>, Vec<String>) {
    let former_tokens = tokenize(former);
    let former_concepts = match_concepts(&former_tokens, graph, &config.stopwords);
    let latter_concepts = match_concepts(&tokenize(latter), graph, &config.stopwords);
    (former_tokens, former_concepts, latter_concepts)
}

/// Unrolls every labeled path of every sentence pair into hop-wise
/// labelling examples. At hop k the candidates are all neighbors expanded
/// from the paths still alive at that hop; a candidate sitting on a path at
/// its terminal position is Target, at a non-terminal position
/// Intermediate, anything else Other. Target dominates on conflicts.
pub fn build_labelling_dataset(
    corpus: &[Document],
    graph: &ConceptGraph,
    vocab: &Vocabulary,
    config: &GraphConfig,
    max_hops: usize,
) -> Vec<LabellingExample> {
    let mut out = Vec::new();
    for doc in corpus {
        for (former, latter) in sentence_pairs(doc) {
            let (former_tokens, former_concepts, latter_concepts) =
                pair_concepts(&former, &latter, graph, config);
            let paths = find_labeled_paths(
                &former_concepts,
                &latter_concepts,
                graph,
                max_hops,
                config.neighbor_cap,
            );
            if paths.is_empty() {
                continue;
            }
            let context_ids = vocab.encode(&former_tokens);
            out.extend(unroll_examples(&paths, graph, config.neighbor_cap, &context_ids));
        }
    }
    out
}

fn unroll_examples(
    paths: &[LabeledPath],
    graph: &ConceptGraph,
    neighbor_cap: usize,
    context_ids: &[u32],
) -> Vec<LabellingExample> {
    let longest = paths.iter().map(|p| p.hops()).max().unwrap_or(0);
    let mut examples = Vec::new();
    for hop in 1..=longest {
        let mut candidates: Vec<String> = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        for path in paths {
            if path.hops() < hop {
                continue;
            }
            let tail = graph.node_id(&path.nodes[hop - 1]).expect("path node in graph");
            let visited: HashSet<&str> =
                path.nodes[..hop].iter().map(|s| s.as_str()).collect();
            for nb in graph.neighbor_ids(tail, neighbor_cap, |n| {
                visited.contains(graph.node_name(n))
            }) {
                let name = graph.node_name(nb).to_string();
                if seen.insert(name.clone()) {
                    candidates.push(name);
                }
            }
        }
        if candidates.is_empty() {
            continue;
        }
        let labels: Vec<NodeLabel> = candidates
            .iter()
            .map(|c| {
                let mut label = NodeLabel::Other;
                for path in paths {
                    if path.hops() >= hop && &path.nodes[hop] == c {
                        let role = if path.hops() == hop {
                            NodeLabel::Target
                        } else {
                            NodeLabel::Intermediate
                        };
                        label = label.max(role);
                    }
                }
                label
            })
            .collect();
        examples.push(LabellingExample {
            context_ids: context_ids.to_vec(),
            candidates,
            labels,
            hop,
        });
    }
    examples
}

/// One realization example per sentence pair with at least one labeled
/// path: all paths of the pair, plus the latter sentence wrapped in
/// BOS/EOS.
pub fn build_realization_dataset(
    corpus: &[Document],
    graph: &ConceptGraph,
    vocab: &Vocabulary,
    config: &GraphConfig,
    max_hops: usize,
) -> Vec<RealizationExample> {
    let mut out = Vec::new();
    for doc in corpus {
        for (former, latter) in sentence_pairs(doc) {
            let (_, former_concepts, latter_concepts) =
                pair_concepts(&former, &latter, graph, config);
            let paths = find_labeled_paths(
                &former_concepts,
                &latter_concepts,
                graph,
                max_hops,
                config.neighbor_cap,
            );
            if paths.is_empty() {
                continue;
            }
            let mut target_ids = Vec::new();
            target_ids.push(BOS_ID);
            target_ids.extend(vocab.encode(&tokenize(&latter)));
            target_ids.push(EOS_ID);
            out.push(RealizationExample { paths, target_ids });
        }
    }
    out
}

pub fn write_labelling_jsonl(examples: &[LabellingExample], w: &mut impl Write) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut *w, ex)?;
        w.write_all(b"\n")
            .map_err(|e| Error::Data(format!("write failed: {e}")))?;
    }
    Ok(())
}

pub fn read_labelling_jsonl(text: &str) -> Result<Vec<LabellingExample>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn write_realization_jsonl(examples: &[RealizationExample], w: &mut impl Write) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut *w, ex)?;
        w.write_all(b"\n")
            .map_err(|e| Error::Data(format!("write failed: {e}")))?;
    }
    Ok(())
}

pub fn read_realization_jsonl(text: &str) -> Result<Vec<RealizationExample>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::import_triples;

    fn graph_from(lines: &[&str]) -> ConceptGraph {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("triples.tsv");
        std::fs::write(&path, lines.join("\n")).unwrap();
        import_triples(&path).unwrap().graph
    }

    fn strings(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn sentence_pairs_follow_the_chain() {
        let doc = Document {
            source: "s".into(),
            target_sentences: strings(&["y1", "y2", "y3"]),
        };
        let pairs = sentence_pairs(&doc);
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[0], ("s".to_string(), "y1".to_string()));
        assert_eq!(pairs[2], ("y2".to_string(), "y3".to_string()));

        let single = Document {
            source: "s".into(),
            target_sentences: strings(&["y1"]),
        };
        assert_eq!(sentence_pairs(&single).len(), 1);
    }

    #[test]
    fn two_hop_path_is_found_and_labeled() {
        let graph = graph_from(&["a\tr\tb", "b\tr\tc"]);
        let paths = find_labeled_paths(&strings(&["a"]), &strings(&["c"]), &graph, 3, 20);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].nodes, strings(&["a", "b", "c"]));
        assert_eq!(
            paths[0].labels,
            vec![NodeLabel::Intermediate, NodeLabel::Intermediate, NodeLabel::Target]
        );
    }

    #[test]
    fn direct_edge_path() {
        let graph = graph_from(&["a\tr\tc"]);
        let paths = find_labeled_paths(&strings(&["a"]), &strings(&["c"]), &graph, 3, 20);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].nodes, strings(&["a", "c"]));
        assert_eq!(paths[0].labels, vec![NodeLabel::Intermediate, NodeLabel::Target]);
    }

    #[test]
    fn disconnected_concepts_yield_nothing() {
        let graph = graph_from(&["a\tr\tb", "c\tr\td"]);
        let paths = find_labeled_paths(&strings(&["a"]), &strings(&["c"]), &graph, 3, 20);
        assert!(paths.is_empty());
    }

    #[test]
    fn shortest_path_wins_over_longer_route() {
        // a-c direct, and a-b-c; only the 1-hop path survives.
        let graph = graph_from(&["a\tr\tc", "a\tr\tb", "b\tr\tc"]);
        let paths = find_labeled_paths(&strings(&["a"]), &strings(&["c"]), &graph, 3, 20);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].nodes, strings(&["a", "c"]));
    }

    #[test]
    fn equal_length_tie_breaks_lexicographically() {
        // a-b-d and a-c-d, both 2 hops: (a,b,d) < (a,c,d).
        let graph = graph_from(&["a\tr\tc", "c\tr\td", "a\tr\tb", "b\tr\td"]);
        let paths = find_labeled_paths(&strings(&["a"]), &strings(&["d"]), &graph, 3, 20);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].nodes, strings(&["a", "b", "d"]));
    }

    #[test]
    fn max_hops_bounds_the_search() {
        let graph = graph_from(&["a\tr\tb", "b\tr\tc", "c\tr\td", "d\tr\te"]);
        let within = find_labeled_paths(&strings(&["a"]), &strings(&["d"]), &graph, 3, 20);
        assert_eq!(within.len(), 1);
        let beyond = find_labeled_paths(&strings(&["a"]), &strings(&["e"]), &graph, 3, 20);
        assert!(beyond.is_empty());
    }

    #[test]
    fn labelling_examples_unroll_the_path() {
        // a-b, b-c, a-d: path a->b->c; d is an off-path neighbor of a.
        let graph = graph_from(&["a\tr\tb", "b\tr\tc", "a\tr\td"]);
        let paths = find_labeled_paths(&strings(&["a"]), &strings(&["c"]), &graph, 3, 20);
        let examples = unroll_examples(&paths, &graph, 20, &[7, 8]);
        assert_eq!(examples.len(), 2);

        let hop1 = &examples[0];
        assert_eq!(hop1.hop, 1);
        assert_eq!(hop1.context_ids, vec![7, 8]);
        let b_pos = hop1.candidates.iter().position(|c| c == "b").unwrap();
        let d_pos = hop1.candidates.iter().position(|c| c == "d").unwrap();
        assert_eq!(hop1.labels[b_pos], NodeLabel::Intermediate);
        assert_eq!(hop1.labels[d_pos], NodeLabel::Other);

        let hop2 = &examples[1];
        assert_eq!(hop2.hop, 2);
        let c_pos = hop2.candidates.iter().position(|c| c == "c").unwrap();
        assert_eq!(hop2.labels[c_pos], NodeLabel::Target);
    }

    #[test]
    fn target_dominates_intermediate_on_conflicts() {
        // Two paths: a->m (1 hop, m is latter) and a->m->z (m intermediate).
        let graph = graph_from(&["a\tr\tm", "m\tr\tz"]);
        let paths = find_labeled_paths(&strings(&["a"]), &strings(&["m", "z"]), &graph, 3, 20);
        assert_eq!(paths.len(), 2);
        let examples = unroll_examples(&paths, &graph, 20, &[1]);
        let hop1 = &examples[0];
        let m_pos = hop1.candidates.iter().position(|c| c == "m").unwrap();
        assert_eq!(hop1.labels[m_pos], NodeLabel::Target);
        // No candidate may be labeled both ways: labels are single-valued by
        // construction; check m appears exactly once.
        assert_eq!(hop1.candidates.iter().filter(|c| *c == "m").count(), 1);
    }

    fn mini_corpus(pairs: &[(&str, &str)]) -> Vec<Document> {
        pairs
            .iter()
            .map(|(s, t)| Document {
                source: s.to_string(),
                target_sentences: vec![t.to_string()],
            })
            .collect()
    }

    #[test]
    fn realization_dataset_counts_pairs_with_paths() {
        // Graph connects (a,b) and (c,d) only; 10 pairs, 6 with a route.
        let graph = graph_from(&["a\tr\tb", "c\tr\td"]);
        let corpus = mini_corpus(&[
            ("a x.", "b y."), // path a-b
            ("a x.", "d y."), // no route within 3 hops
            ("c x.", "d y."), // path c-d
            ("q x.", "b y."), // q not in graph
            ("b x.", "a y."), // path b-a
            ("a x.", "q y."), // no latter concept
            ("d x.", "c y."), // path d-c
            ("x x.", "y y."), // nothing in graph
            ("b x.", "a y. c z."), // doc with 2 sentences: pairs (b,a)+(a,c): first has path
            ("c x.", "d y."), // path c-d
        ]);
        let vocab = Vocabulary::build(&corpus, 16_000).unwrap();
        let config = GraphConfig {
            stopwords: HashSet::new(),
            ..GraphConfig::default()
        };
        let dataset = build_realization_dataset(&corpus, &graph, &vocab, &config, 3);
        assert_eq!(dataset.len(), 6);
        for ex in &dataset {
            assert!(!ex.paths.is_empty());
            assert_eq!(*ex.target_ids.first().unwrap(), BOS_ID);
            assert_eq!(*ex.target_ids.last().unwrap(), EOS_ID);
            for p in &ex.paths {
                p.validate().unwrap();
            }
        }
    }

    #[test]
    fn pair_with_two_paths_yields_one_example() {
        let graph = graph_from(&["a\tr\tc", "b\tr\tc", "a\tr\td", "b\tr\td"]);
        let corpus = mini_corpus(&[("a b.", "c d.")]);
        let vocab = Vocabulary::build(&corpus, 16_000).unwrap();
        let config = GraphConfig {
            stopwords: HashSet::new(),
            ..GraphConfig::default()
        };
        let dataset = build_realization_dataset(&corpus, &graph, &vocab, &config, 3);
        assert_eq!(dataset.len(), 1);
        // starts a and b each reach ends c and d via direct edges
        assert_eq!(dataset[0].paths.len(), 4);
    }

    #[test]
    fn datasets_are_deterministic() {
        let graph = graph_from(&["a\tr\tb", "b\tr\tc", "a\tr\td", "d\tr\tc"]);
        let corpus = mini_corpus(&[("a d.", "c b."), ("b a.", "d c.")]);
        let vocab = Vocabulary::build(&corpus, 16_000).unwrap();
        let config = GraphConfig {
            stopwords: HashSet::new(),
            ..GraphConfig::default()
        };
        let mut out1 = Vec::new();
        let mut out2 = Vec::new();
        write_labelling_jsonl(
            &build_labelling_dataset(&corpus, &graph, &vocab, &config, 3),
            &mut out1,
        )
        .unwrap();
        write_labelling_jsonl(
            &build_labelling_dataset(&corpus, &graph, &vocab, &config, 3),
            &mut out2,
        )
        .unwrap();
        assert_eq!(out1, out2);
    }

    #[test]
    fn jsonl_round_trip() {
        let graph = graph_from(&["a\tr\tb", "b\tr\tc"]);
        let corpus = mini_corpus(&[("a.", "c b.")]);
        let vocab = Vocabulary::build(&corpus, 16_000).unwrap();
        let config = GraphConfig {
            stopwords: HashSet::new(),
            ..GraphConfig::default()
        };
        let labelling = build_labelling_dataset(&corpus, &graph, &vocab, &config, 3);
        let realization = build_realization_dataset(&corpus, &graph, &vocab, &config, 3);
        assert!(!labelling.is_empty());
        assert!(!realization.is_empty());

        let mut buf = Vec::new();
        write_labelling_jsonl(&labelling, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"hop\""));
        let back = read_labelling_jsonl(&text).unwrap();
        assert_eq!(back.len(), labelling.len());

        let mut buf = Vec::new();
        write_realization_jsonl(&realization, &mut buf).unwrap();
        let back = read_realization_jsonl(&String::from_utf8(buf).unwrap()).unwrap();
        assert_eq!(back.len(), realization.len());
        assert_eq!(back[0].paths, realization[0].paths);
    }
}
