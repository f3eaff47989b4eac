//! Rule-based node-to-token aligner, used when no JAMR alignments are given.

use std::collections::HashSet;

use serde::Serialize;

use crate::corpus::{Alignment, AnnotatedExample, TokenizedSentence};
use crate::graph::{strip_sense, AmrGraph, NodeId};

const NEGATORS: [&str; 5] = ["not", "no", "never", "n't", "without"];
const MIN_PREFIX: usize = 4;

/// Aligns graph nodes to tokens with a fixed sequence of rule tiers: exact
/// lexical match, shared prefix, named entities, negation, numbers. Within a
/// tier candidates are taken greedily in (token, depth, node) order; a token is
/// used at most once per tier and a node at most once overall.
pub fn align(sentence: &TokenizedSentence, graph: &AmrGraph) -> Alignment {
    let mut alignment = Alignment::new();
    if graph.is_empty() {
        return alignment;
    }
    let depths = graph.depths();
    let tokens: Vec<(String, String)> = sentence
        .tokens
        .iter()
        .map(|t| (t.surface.to_lowercase(), t.lemma.to_lowercase()))
        .collect();
    let concept = |n: NodeId| strip_sense(&graph.node(n).label).to_lowercase();

    // exact match
    let mut cands = Vec::new();
    for n in variables(graph) {
        let c = concept(n);
        for (i, (s, l)) in tokens.iter().enumerate() {
            if c == *s || c == *l {
                cands.push((i, depths[n], n));
            }
        }
    }
    accept(&mut alignment, cands);

    // shared prefix
    let mut cands = Vec::new();
    for n in variables(graph) {
        let c = concept(n);
        for (i, (s, l)) in tokens.iter().enumerate() {
            if common_prefix(&c, s) >= MIN_PREFIX || common_prefix(&c, l) >= MIN_PREFIX {
                cands.push((i, depths[n], n));
            }
        }
    }
    accept(&mut alignment, cands);

    // named entities: the name node and its entity head go to the first name token
    let mut cands = Vec::new();
    for e in graph.edges().iter().filter(|e| e.label == ":name") {
        let name = e.target;
        let ops: Vec<String> = graph
            .out_edges(name)
            .filter(|o| o.label.starts_with(":op"))
            .map(|o| graph.node(o.target).label.to_lowercase())
            .collect();
        if ops.is_empty() {
            continue;
        }
        let hit = (0..tokens.len()).find(|&i| {
            ops.iter()
                .enumerate()
                .all(|(k, op)| tokens.get(i + k).is_some_and(|(s, _)| s == op))
        });
        if let Some(i) = hit {
            cands.push((i, depths[name], name));
            cands.push((i, depths[e.source], e.source));
        }
    }
    // both nodes of one entity share the token, so only node uniqueness applies
    let mut sorted = cands;
    sorted.sort_unstable();
    for (t, _, n) in sorted {
        alignment.insert(n, t);
    }

    // negation
    let mut cands = Vec::new();
    for e in graph.edges().iter().filter(|e| e.label == ":polarity") {
        if graph.node(e.target).label != "-" {
            continue;
        }
        for (i, (s, l)) in tokens.iter().enumerate() {
            if NEGATORS.contains(&s.as_str()) || NEGATORS.contains(&l.as_str()) {
                cands.push((i, depths[e.target], e.target));
            }
        }
    }
    accept(&mut alignment, cands);

    // numbers
    let mut cands = Vec::new();
    for (n, node) in graph.nodes().iter().enumerate() {
        if !node.is_constant() {
            continue;
        }
        let Ok(value) = node.label.parse::<f64>() else {
            continue;
        };
        for (i, (s, _)) in tokens.iter().enumerate() {
            if s.replace(',', "").parse::<f64>().is_ok_and(|v| v == value) {
                cands.push((i, depths[n], n));
            }
        }
    }
    accept(&mut alignment, cands);

    alignment
}

fn variables(graph: &AmrGraph) -> impl Iterator<Item = NodeId> + '_ {
    graph
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.is_variable())
        .map(|(i, _)| i)
}

fn accept(alignment: &mut Alignment, mut cands: Vec<(usize, usize, NodeId)>) {
    cands.sort_unstable();
    let mut used = HashSet::new();
    for (t, _, n) in cands {
        if alignment.token_of(n).is_some() || used.contains(&t) {
            continue;
        }
        used.insert(t);
        alignment.insert(n, t);
    }
}

fn common_prefix(a: &str, b: &str) -> usize {
    a.chars().zip(b.chars()).take_while(|(x, y)| x == y).count()
}

/// Fraction of variable nodes that carry an alignment; 0 for a graph without
/// variables.
pub fn alignment_coverage(alignment: &Alignment, graph: &AmrGraph) -> f64 {
    let vars: Vec<NodeId> = variables(graph).collect();
    if vars.is_empty() {
        return 0.0;
    }
    let aligned = vars
        .iter()
        .filter(|&&n| alignment.token_of(n).is_some())
        .count();
    aligned as f64 / vars.len() as f64
}

/// Whether two edges between aligned nodes cross when drawn above the
/// sentence. Edges sharing a token never cross.
pub fn is_non_projective(alignment: &Alignment, graph: &AmrGraph) -> bool {
    let spans: Vec<(usize, usize)> = graph
        .edges()
        .iter()
        .filter_map(|e| {
            let a = alignment.token_of(e.source)?;
            let b = alignment.token_of(e.target)?;
            (a != b).then_some((a.min(b), a.max(b)))
        })
        .collect();
    spans.iter().enumerate().any(|(i, &(a, b))| {
        spans[i + 1..]
            .iter()
            .any(|&(c, d)| (a < c && c < b && b < d) || (c < a && a < d && d < b))
    })
}

/// Corpus diagnostics written by preprocessing.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub variables: usize,
    pub aligned_variables: usize,
    /// Aligned variables over all variables.
    pub alignment_coverage: f64,
    pub reentrant_sentences: usize,
    pub non_projective_sentences: usize,
}

pub fn corpus_stats(examples: &[AnnotatedExample]) -> CorpusStats {
    let mut s = CorpusStats {
        sentences: examples.len(),
        ..CorpusStats::default()
    };
    for ex in examples {
        for n in variables(&ex.graph) {
            s.variables += 1;
            s.aligned_variables += usize::from(ex.alignment.token_of(n).is_some());
        }
        s.reentrant_sentences += usize::from(!ex.graph.reentrant_nodes().is_empty());
        s.non_projective_sentences += usize::from(is_non_projective(&ex.alignment, &ex.graph));
    }
    if s.variables > 0 {
        s.alignment_coverage = s.aligned_variables as f64 / s.variables as f64;
    }
    s
}
