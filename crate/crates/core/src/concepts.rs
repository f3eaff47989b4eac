//! Concept identification: per-token subgraph fragments and the lemma-keyed
//! table of fragment templates learned from aligned data.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::{Alignment, AnnotatedExample, NerTag, Token, TokenizedSentence};
use crate::graph::{AmrGraph, Edge, Node, NodeId};
use crate::penman::{parse_penman, serialize_penman_compact};

/// Marker for "this token has no concept" in the table text format.
pub const EMPTY_TEMPLATE: &str = "()";

const ARTICLES: [&str; 3] = ["a", "an", "the"];
const AUXILIARIES: [&str; 20] = [
    "be", "am", "is", "are", "was", "were", "been", "being", "do", "does", "did", "have", "has",
    "had", "will", "would", "shall", "should", "'s", "'re",
];

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("concept table line {line}: {message}")]
    Format { line: usize, message: String },
}

/// The gold subgraph claimed by one token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    /// Gold node ids; `nodes[k]` is node `k` of `template`, and `nodes[0]` is its root.
    pub nodes: Vec<NodeId>,
    pub template: AmrGraph,
}

#[derive(Clone, Debug, Default)]
pub struct Fragments {
    pub per_token: Vec<Option<Fragment>>,
    /// Gold nodes no token claims.
    pub unclaimed: Vec<NodeId>,
}

impl Fragments {
    pub fn templates(&self) -> Vec<Option<AmrGraph>> {
        self.per_token
            .iter()
            .map(|f| f.as_ref().map(|f| f.template.clone()))
            .collect()
    }
}

/// Splits `graph` into per-token fragments: a token's aligned nodes plus the
/// unaligned nodes reachable from them through unaligned nodes only. Tokens
/// claim nodes left to right. A fragment is rooted at its node closest to the
/// graph root; fragment nodes not reachable from that root stay unclaimed.
pub fn token_fragments(graph: &AmrGraph, alignment: &Alignment, n_tokens: usize) -> Fragments {
    let depths = graph.depths();
    let mut claimed = vec![false; graph.len()];
    let mut per_token = Vec::with_capacity(n_tokens);
    for token in 0..n_tokens {
        let seeds: Vec<NodeId> = alignment
            .nodes_of(token)
            .into_iter()
            .filter(|&n| n < graph.len() && !claimed[n])
            .collect();
        if seeds.is_empty() {
            per_token.push(None);
            continue;
        }
        let mut members: HashSet<NodeId> = seeds.iter().copied().collect();
        let mut queue: VecDeque<NodeId> = seeds.iter().copied().collect();
        while let Some(n) = queue.pop_front() {
            for e in graph.out_edges(n) {
                let t = e.target;
                if !claimed[t] && alignment.token_of(t).is_none() && members.insert(t) {
                    queue.push_back(t);
                }
            }
        }
        let root = *seeds
            .iter()
            .chain(members.iter())
            .min_by_key(|&&n| (depths[n], n))
            .unwrap();
        // breadth-first from the root inside the fragment
        let mut order = vec![root];
        let mut seen = HashSet::from([root]);
        let mut i = 0;
        while i < order.len() {
            let n = order[i];
            for e in graph.out_edges(n) {
                if members.contains(&e.target) && seen.insert(e.target) {
                    order.push(e.target);
                }
            }
            i += 1;
        }
        let index: BTreeMap<NodeId, usize> =
            order.iter().enumerate().map(|(k, &n)| (n, k)).collect();
        let nodes: Vec<Node> = order.iter().map(|&n| graph.node(n).clone()).collect();
        let edges: Vec<Edge> = graph
            .edges()
            .iter()
            .filter_map(|e| {
                Some(Edge {
                    source: *index.get(&e.source)?,
                    target: *index.get(&e.target)?,
                    label: e.label.clone(),
                })
            })
            .collect();
        let template = AmrGraph::from_parts(nodes, edges, 0).expect("fragment of a valid graph");
        for &n in &order {
            claimed[n] = true;
        }
        per_token.push(Some(Fragment {
            nodes: order,
            template,
        }));
    }
    let unclaimed = (0..graph.len()).filter(|&n| !claimed[n]).collect();
    Fragments {
        per_token,
        unclaimed,
    }
}

/// Compact PENMAN with variables renamed in written order, so that fragments
/// of the same shape produce the same string.
pub fn canonical_penman(template: &AmrGraph) -> String {
    let mut g = template.clone();
    for _ in 0..2 {
        let renamed = rename_variables(&g);
        let text = serialize_penman_compact(&renamed).expect("templates are rooted fragments");
        g = parse_penman(&text).expect("serializer output parses");
    }
    serialize_penman_compact(&g).expect("templates are rooted fragments")
}

fn rename_variables(g: &AmrGraph) -> AmrGraph {
    let mut taken: HashSet<String> = HashSet::new();
    let nodes = g
        .nodes()
        .iter()
        .map(|n| {
            if n.is_variable() {
                let name = crate::graph::fresh_name(&n.label, |s| taken.contains(s));
                taken.insert(name.clone());
                Node::variable(name, n.label.clone())
            } else {
                n.clone()
            }
        })
        .collect();
    AmrGraph::from_parts(nodes, g.edges().to_vec(), g.root()).expect("renaming keeps validity")
}

/// Lemma → template counts. Lookups return the most frequent template, ties
/// broken by the template string.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConceptTable {
    entries: BTreeMap<String, BTreeMap<String, usize>>,
}

impl ConceptTable {
    pub fn new() -> Self {
        ConceptTable::default()
    }

    /// Records every token of every example; unaligned tokens count toward the
    /// empty template.
    pub fn build(examples: &[AnnotatedExample]) -> Self {
        let mut table = ConceptTable::new();
        for ex in examples {
            let graph = ex.graph.normalize_inverse_edges();
            let fragments = token_fragments(&graph, &ex.alignment, ex.sentence.len());
            for (tok, frag) in ex.sentence.tokens.iter().zip(&fragments.per_token) {
                table.record(&tok.lemma, frag.as_ref().map(|f| &f.template));
            }
        }
        table
    }

    pub fn record(&mut self, lemma: &str, template: Option<&AmrGraph>) {
        let key = template.map_or_else(|| EMPTY_TEMPLATE.to_string(), canonical_penman);
        *self
            .entries
            .entry(lemma.to_lowercase())
            .or_default()
            .entry(key)
            .or_insert(0) += 1;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Most frequent template string for `lemma` and its count.
    pub fn best(&self, lemma: &str) -> Option<(&str, usize)> {
        let counts = self.entries.get(&lemma.to_lowercase())?;
        counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(t, &c)| (t.as_str(), c))
    }

    /// Template for a single token, falling back to rules for unseen lemmas.
    pub fn lookup(&self, token: &Token) -> Option<AmrGraph> {
        if let Some((text, _)) = self.best(&token.lemma) {
            return parse_template(text);
        }
        fallback(token, std::slice::from_ref(&token.surface))
    }

    /// Templates for a whole sentence. Runs of unseen tokens sharing a
    /// named-entity class become a single multi-word name on the first token.
    pub fn lookup_sentence(&self, sentence: &TokenizedSentence) -> Vec<Option<AmrGraph>> {
        let toks = &sentence.tokens;
        let unseen = |i: usize| self.best(&toks[i].lemma).is_none();
        let mut out = Vec::with_capacity(toks.len());
        let mut i = 0;
        while i < toks.len() {
            let tok = &toks[i];
            if tok.ner != NerTag::O && unseen(i) && !is_stopword(tok) {
                let mut j = i + 1;
                while j < toks.len() && toks[j].ner == tok.ner && unseen(j) {
                    j += 1;
                }
                let words: Vec<String> = toks[i..j].iter().map(|t| t.surface.clone()).collect();
                out.push(fallback(tok, &words));
                out.extend((i + 1..j).map(|_| None));
                i = j;
                continue;
            }
            out.push(self.lookup(tok));
            i += 1;
        }
        out
    }

    /// Sorted `lemma<TAB>count<TAB>template` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (lemma, counts) in &self.entries {
            for (template, count) in counts {
                writeln!(out, "{lemma}\t{count}\t{template}").unwrap();
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, ConceptError> {
        let mut table = ConceptTable::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConceptError::Format {
                line: i + 1,
                message,
            };
            let mut cols = line.splitn(3, '\t');
            let (Some(lemma), Some(count), Some(template)) =
                (cols.next(), cols.next(), cols.next())
            else {
                return Err(err("expected three tab-separated columns".into()));
            };
            let count: usize = count
                .parse()
                .map_err(|_| err(format!("bad count `{count}`")))?;
            if template != EMPTY_TEMPLATE {
                parse_penman(template).map_err(|e| err(e.to_string()))?;
            }
            *table
                .entries
                .entry(lemma.to_string())
                .or_default()
                .entry(template.to_string())
                .or_insert(0) += count;
        }
        Ok(table)
    }
}

fn parse_template(text: &str) -> Option<AmrGraph> {
    if text == EMPTY_TEMPLATE {
        None
    } else {
        // entries are validated on insertion
        parse_penman(text).ok()
    }
}

pub fn is_stopword(token: &Token) -> bool {
    let lemma = token.lemma.to_lowercase();
    let surface = token.surface.to_lowercase();
    if token.pos == "PUNCT" || token.pos == "AUX" {
        return true;
    }
    if surface.chars().all(|c| c.is_ascii_punctuation()) {
        return true;
    }
    let any = |list: &[&str]| list.contains(&lemma.as_str()) || list.contains(&surface.as_str());
    any(&ARTICLES) || any(&AUXILIARIES) || surface == "to"
}

fn parse_number(surface: &str) -> Option<String> {
    let cleaned = surface.replace(',', "");
    let v: f64 = cleaned.parse().ok()?;
    if !v.is_finite() {
        return None;
    }
    Some(if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    })
}

fn sanitize_concept(lemma: &str) -> Option<String> {
    let cleaned: String = lemma
        .to_lowercase()
        .chars()
        .map(|c| {
            if c.is_whitespace() || "()\"/:~".contains(c) {
                '-'
            } else {
                c
            }
        })
        .collect();
    let cleaned = cleaned.trim_matches('-').to_string();
    (!cleaned.is_empty()).then_some(cleaned)
}

/// Rule-based template for an unseen token. `words` holds the surface forms
/// of the name when the token starts a named-entity run.
fn fallback(token: &Token, words: &[String]) -> Option<AmrGraph> {
    if is_stopword(token) {
        return None;
    }
    if token.is_verb() {
        let concept = sanitize_concept(&token.lemma)?;
        return Some(AmrGraph::new(Node::variable(
            crate::graph::fresh_name(&concept, |_| false),
            format!("{concept}-01"),
        )));
    }
    if token.ner != NerTag::O {
        let kind = match token.ner {
            NerTag::Per => "person",
            NerTag::Org => "organization",
            NerTag::Loc => "city",
            _ => "thing",
        };
        let mut g = AmrGraph::new(Node::variable(
            crate::graph::fresh_name(kind, |_| false),
            kind,
        ));
        let name = g.add_concept("name");
        g.add_edge(0, name, ":name").unwrap();
        for (k, w) in words.iter().enumerate() {
            let c = g.add_constant(w, true);
            g.add_edge(name, c, format!(":op{}", k + 1)).unwrap();
        }
        return Some(g);
    }
    if let Some(value) = parse_number(&token.surface) {
        return Some(AmrGraph::new(Node::constant(value, false)));
    }
    let concept = sanitize_concept(&token.lemma)?;
    Some(AmrGraph::new(Node::variable(
        crate::graph::fresh_name(&concept, |_| false),
        concept,
    )))
}
