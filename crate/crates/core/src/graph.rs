//! In-memory AMR graphs and their canonical triple form.
//!
//! Node ids are dense indices into [`AmrGraph::nodes`]. Edges keep the order in
//! which they were added, which for parsed graphs is the written order; JAMR
//! node paths depend on that.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;

/// Relations ending in `-of` that are not inverses of another relation.
pub const LEXICAL_OF_RELATIONS: [&str; 3] = [":consist-of", ":prep-out-of", ":prep-on-behalf-of"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("node {0} does not exist")]
    MissingNode(NodeId),
    #[error("relation label `{0}` must start with `:`")]
    BadLabel(String),
    #[error("constant node {0} cannot have outgoing edges")]
    ConstantSource(NodeId),
    #[error("graph has no nodes")]
    Empty,
    #[error("undefined variable `{0}` in triple")]
    UnknownVariable(String),
    #[error("no TOP triple")]
    MissingTop,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    /// A concept instance, e.g. `d / dog`.
    Variable { name: String },
    /// A constant such as `-`, `5` or `"Trieste"`. The flag only affects rendering.
    Constant { quoted: bool },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub label: String,
    pub kind: NodeKind,
}

impl Node {
    pub fn variable(name: impl Into<String>, concept: impl Into<String>) -> Self {
        Node {
            label: concept.into(),
            kind: NodeKind::Variable { name: name.into() },
        }
    }

    pub fn constant(value: impl Into<String>, quoted: bool) -> Self {
        Node {
            label: value.into(),
            kind: NodeKind::Constant { quoted },
        }
    }

    pub fn is_variable(&self) -> bool {
        matches!(self.kind, NodeKind::Variable { .. })
    }

    pub fn is_constant(&self) -> bool {
        !self.is_variable()
    }

    pub fn variable_name(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::Variable { name } => Some(name),
            NodeKind::Constant { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub source: NodeId,
    pub target: NodeId,
    pub label: String,
}

/// A rooted, labeled, directed graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmrGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    root: NodeId,
}

impl AmrGraph {
    /// Creates a graph containing only `root`.
    pub fn new(root: Node) -> Self {
        AmrGraph {
            nodes: vec![root],
            edges: Vec::new(),
            root: 0,
        }
    }

    /// The canonical empty AMR, `(a / amr-empty)`.
    pub fn empty_amr() -> Self {
        AmrGraph::new(Node::variable("a", "amr-empty"))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn set_root(&mut self, root: NodeId) -> Result<(), GraphError> {
        if root >= self.nodes.len() {
            return Err(GraphError::MissingNode(root));
        }
        self.root = root;
        Ok(())
    }

    pub fn add_node(&mut self, node: Node) -> Result<NodeId, GraphError> {
        if let Some(name) = node.variable_name() {
            if self.find_variable(name).is_some() {
                return Err(GraphError::DuplicateVariable(name.to_string()));
            }
        }
        self.nodes.push(node);
        Ok(self.nodes.len() - 1)
    }

    /// Adds a variable node, generating a fresh name from the concept.
    pub fn add_concept(&mut self, concept: &str) -> NodeId {
        let name = self.fresh_variable_name(concept);
        self.nodes.push(Node::variable(name, concept));
        self.nodes.len() - 1
    }

    pub fn add_constant(&mut self, value: &str, quoted: bool) -> NodeId {
        self.nodes.push(Node::constant(value, quoted));
        self.nodes.len() - 1
    }

    pub fn add_edge(
        &mut self,
        source: NodeId,
        target: NodeId,
        label: impl Into<String>,
    ) -> Result<(), GraphError> {
        let label = label.into();
        if !label.starts_with(':') || label.len() < 2 {
            return Err(GraphError::BadLabel(label));
        }
        for id in [source, target] {
            if id >= self.nodes.len() {
                return Err(GraphError::MissingNode(id));
            }
        }
        if self.nodes[source].is_constant() {
            return Err(GraphError::ConstantSource(source));
        }
        self.edges.push(Edge {
            source,
            target,
            label,
        });
        Ok(())
    }

    pub(crate) fn retarget_edge(&mut self, index: usize, target: NodeId) {
        self.edges[index].target = target;
    }

    pub fn find_variable(&self, name: &str) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| n.variable_name() == Some(name))
    }

    /// First letter of the concept plus a counter: `d`, `d2`, `d3`, ...
    pub fn fresh_variable_name(&self, concept: &str) -> String {
        let taken: HashSet<&str> = self.nodes.iter().filter_map(Node::variable_name).collect();
        fresh_name(concept, |n| taken.contains(n))
    }

    /// Builds a graph from raw parts, checking every invariant.
    pub fn from_parts(
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        root: NodeId,
    ) -> Result<Self, GraphError> {
        let g = AmrGraph { nodes, edges, root };
        g.validate()?;
        Ok(g)
    }

    /// Outgoing edges of `id` in insertion order.
    pub fn out_edges(&self, id: NodeId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.source == id)
    }

    pub fn in_edges(&self, id: NodeId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.target == id)
    }

    pub fn in_degree(&self, id: NodeId) -> usize {
        self.in_edges(id).count()
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        if self.root >= self.nodes.len() {
            return Err(GraphError::MissingNode(self.root));
        }
        let mut names = HashSet::new();
        for n in &self.nodes {
            if let Some(name) = n.variable_name() {
                if !names.insert(name) {
                    return Err(GraphError::DuplicateVariable(name.to_string()));
                }
            }
        }
        for e in &self.edges {
            if !e.label.starts_with(':') {
                return Err(GraphError::BadLabel(e.label.clone()));
            }
            if e.source >= self.nodes.len() {
                return Err(GraphError::MissingNode(e.source));
            }
            if e.target >= self.nodes.len() {
                return Err(GraphError::MissingNode(e.target));
            }
            if self.nodes[e.source].is_constant() {
                return Err(GraphError::ConstantSource(e.source));
            }
        }
        Ok(())
    }

    /// Nodes reachable from the root following edges forward.
    pub fn reachable_from_root(&self) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([self.root]);
        seen[self.root] = true;
        while let Some(n) = queue.pop_front() {
            for e in self.out_edges(n) {
                if !seen[e.target] {
                    seen[e.target] = true;
                    queue.push_back(e.target);
                }
            }
        }
        seen
    }

    pub fn is_acyclic(&self) -> bool {
        // Kahn's algorithm
        let mut indeg = vec![0usize; self.nodes.len()];
        for e in &self.edges {
            indeg[e.target] += 1;
        }
        let mut queue: VecDeque<NodeId> =
            (0..self.nodes.len()).filter(|&n| indeg[n] == 0).collect();
        let mut visited = 0;
        while let Some(n) = queue.pop_front() {
            visited += 1;
            for e in self.edges.iter().filter(|e| e.source == n) {
                indeg[e.target] -= 1;
                if indeg[e.target] == 0 {
                    queue.push_back(e.target);
                }
            }
        }
        visited == self.nodes.len()
    }

    /// Shortest forward distance from the root; `usize::MAX` when unreachable.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![usize::MAX; self.nodes.len()];
        let mut queue = VecDeque::from([self.root]);
        depth[self.root] = 0;
        while let Some(n) = queue.pop_front() {
            for e in self.out_edges(n) {
                if depth[e.target] == usize::MAX {
                    depth[e.target] = depth[n] + 1;
                    queue.push_back(e.target);
                }
            }
        }
        depth
    }

    /// Reverses every inverse (`-of`) edge, except for lexicalized relations
    /// and edges whose target is a constant.
    pub fn normalize_inverse_edges(&self) -> AmrGraph {
        let mut out = self.clone();
        for e in &mut out.edges {
            if is_inverse_label(&e.label) && self.nodes[e.target].is_variable() {
                e.label = invert_label(&e.label);
                std::mem::swap(&mut e.source, &mut e.target);
            }
        }
        out
    }

    /// Variable nodes with in-degree of at least two after inverse normalization.
    pub fn reentrant_nodes(&self) -> Vec<NodeId> {
        let normalized = self.normalize_inverse_edges();
        (0..normalized.nodes.len())
            .filter(|&n| normalized.nodes[n].is_variable() && normalized.in_degree(n) >= 2)
            .collect()
    }

    /// Canonical triples of the graph as stored (no inverse normalization).
    pub fn to_triples(&self) -> Vec<Triple> {
        let var = |id: NodeId| self.nodes[id].variable_name().unwrap_or("").to_string();
        let mut triples = Vec::with_capacity(self.nodes.len() + self.edges.len() + 1);
        for n in &self.nodes {
            if let Some(name) = n.variable_name() {
                triples.push(Triple::new(
                    TripleKind::Instance,
                    name,
                    "instance",
                    &n.label,
                ));
            }
        }
        let root = &self.nodes[self.root];
        if let Some(name) = root.variable_name() {
            triples.push(Triple::new(TripleKind::Attribute, name, "TOP", &root.label));
        }
        for e in &self.edges {
            let predicate = e.label.trim_start_matches(':');
            let target = &self.nodes[e.target];
            if target.is_constant() {
                triples.push(Triple::new(
                    TripleKind::Attribute,
                    &var(e.source),
                    predicate,
                    &target.label,
                ));
            } else {
                triples.push(Triple::new(
                    TripleKind::Relation,
                    &var(e.source),
                    predicate,
                    &var(e.target),
                ));
            }
        }
        triples
    }

    /// Rebuilds a graph from triples produced by [`AmrGraph::to_triples`].
    pub fn from_triples(triples: &[Triple]) -> Result<AmrGraph, GraphError> {
        let mut graph: Option<AmrGraph> = None;
        let mut ids = HashMap::new();
        for t in triples.iter().filter(|t| t.kind == TripleKind::Instance) {
            let node = Node::variable(&t.subject, &t.object);
            let id = match graph.as_mut() {
                None => {
                    graph = Some(AmrGraph::new(node));
                    0
                }
                Some(g) => g.add_node(node)?,
            };
            ids.insert(t.subject.as_str(), id);
        }
        let mut graph = graph.ok_or(GraphError::Empty)?;
        let lookup = |name: &str| {
            ids.get(name)
                .copied()
                .ok_or_else(|| GraphError::UnknownVariable(name.to_string()))
        };
        let mut top = None;
        for t in triples {
            match t.kind {
                TripleKind::Instance => {}
                TripleKind::Attribute if t.predicate == "TOP" => top = Some(lookup(&t.subject)?),
                TripleKind::Attribute => {
                    let source = lookup(&t.subject)?;
                    let quoted = needs_quoting(&t.object);
                    let target = graph.add_constant(&t.object, quoted);
                    graph.add_edge(source, target, format!(":{}", t.predicate))?;
                }
                TripleKind::Relation => {
                    let source = lookup(&t.subject)?;
                    let target = lookup(&t.object)?;
                    graph.add_edge(source, target, format!(":{}", t.predicate))?;
                }
            }
        }
        graph.set_root(top.ok_or(GraphError::MissingTop)?)?;
        Ok(graph)
    }
}

impl fmt::Display for AmrGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match crate::penman::serialize_penman(self) {
            Ok(s) => f.write_str(&s),
            Err(e) => write!(f, "<unserializable graph: {e}>"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TripleKind {
    Instance,
    Attribute,
    Relation,
}

/// `predicate(subject, object)` with the leading `:` of relations stripped.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub kind: TripleKind,
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Triple {
    pub fn new(kind: TripleKind, subject: &str, predicate: &str, object: &str) -> Self {
        Triple {
            kind,
            subject: subject.to_string(),
            predicate: predicate.to_string(),
            object: object.to_string(),
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}, {})", self.predicate, self.subject, self.object)
    }
}

pub fn is_inverse_label(label: &str) -> bool {
    label.ends_with("-of") && !LEXICAL_OF_RELATIONS.contains(&label)
}

/// `:ARG0` <-> `:ARG0-of`; lexicalized `-of` relations gain a suffix.
pub fn invert_label(label: &str) -> String {
    if is_inverse_label(label) {
        label[..label.len() - 3].to_string()
    } else {
        format!("{label}-of")
    }
}

/// Variable name for `concept` that `taken` rejects: first letter of the
/// concept, then the same letter with a counter.
pub fn fresh_name(concept: &str, taken: impl Fn(&str) -> bool) -> String {
    let first = concept
        .chars()
        .find(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_lowercase())
        .unwrap_or('x');
    let base = first.to_string();
    if !taken(&base) {
        return base;
    }
    (2..)
        .map(|i| format!("{first}{i}"))
        .find(|n| !taken(n))
        .unwrap()
}

/// Strips a PropBank-style sense suffix: `want-01` -> `want`.
pub fn strip_sense(concept: &str) -> &str {
    match concept.rfind('-') {
        Some(i)
            if i > 0
                && i + 1 < concept.len()
                && concept[i + 1..].bytes().all(|b| b.is_ascii_digit()) =>
        {
            &concept[..i]
        }
        _ => concept,
    }
}

/// Whether a label must be written as a quoted string in PENMAN.
pub fn needs_quoting(label: &str) -> bool {
    label.is_empty()
        || label.starts_with(':')
        || label
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '(' | ')' | '"' | '/'))
}

/// Bare symbols of this shape are read as variable references.
pub fn looks_like_variable(symbol: &str) -> bool {
    let mut chars = symbol.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase()) && chars.all(|c| c.is_ascii_digit())
}

/// Exact isomorphism test: a bijection between variables that maps root to root
/// and preserves concepts, attributes and relation multisets. Quoting of
/// constants is ignored.
pub fn isomorphic(a: &AmrGraph, b: &AmrGraph) -> bool {
    if a.nodes.len() != b.nodes.len() || a.edges.len() != b.edges.len() {
        return false;
    }
    // constants carry no outgoing edges, so a constant root means a one-node graph
    let (root_a, root_b) = (a.node(a.root), b.node(b.root));
    if root_a.is_constant() || root_b.is_constant() {
        return root_a.is_constant() && root_b.is_constant() && root_a.label == root_b.label;
    }
    let sig_a = Signature::of(a);
    let sig_b = Signature::of(b);
    if sig_a.vars.len() != sig_b.vars.len() {
        return false;
    }
    let ra = sig_a.index_of[&a.root];
    let rb = sig_b.index_of[&b.root];
    let mut mapping = vec![usize::MAX; sig_a.vars.len()];
    let mut used = vec![false; sig_b.vars.len()];
    if sig_a.unary[ra] != sig_b.unary[rb] {
        return false;
    }
    mapping[ra] = rb;
    used[rb] = true;
    if !sig_a.consistent(&sig_b, &mapping, ra) {
        return false;
    }
    let order: Vec<usize> = (0..sig_a.vars.len()).filter(|&i| i != ra).collect();
    extend_isomorphism(&sig_a, &sig_b, &order, &mut mapping, &mut used)
}

fn extend_isomorphism(
    a: &Signature,
    b: &Signature,
    order: &[usize],
    mapping: &mut [usize],
    used: &mut [bool],
) -> bool {
    let Some((&i, rest)) = order.split_first() else {
        return true;
    };
    for j in 0..b.vars.len() {
        if used[j] || a.unary[i] != b.unary[j] {
            continue;
        }
        mapping[i] = j;
        used[j] = true;
        if a.consistent(b, mapping, i) && extend_isomorphism(a, b, rest, mapping, used) {
            return true;
        }
        used[j] = false;
        mapping[i] = usize::MAX;
    }
    false
}

struct Signature {
    vars: Vec<NodeId>,
    index_of: HashMap<NodeId, usize>,
    /// concept plus sorted (label, constant value) attributes
    unary: Vec<(String, Vec<(String, String)>)>,
    /// (source var index, target var index) -> sorted labels
    relations: BTreeMap<(usize, usize), Vec<String>>,
}

impl Signature {
    fn of(g: &AmrGraph) -> Self {
        let vars: Vec<NodeId> = (0..g.nodes.len())
            .filter(|&n| g.nodes[n].is_variable())
            .collect();
        let index_of: HashMap<NodeId, usize> =
            vars.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut unary: Vec<(String, Vec<(String, String)>)> = vars
            .iter()
            .map(|&n| (g.nodes[n].label.clone(), Vec::new()))
            .collect();
        let mut relations: BTreeMap<(usize, usize), Vec<String>> = BTreeMap::new();
        for e in &g.edges {
            let s = index_of[&e.source];
            if g.nodes[e.target].is_constant() {
                unary[s]
                    .1
                    .push((e.label.clone(), g.nodes[e.target].label.clone()));
            } else {
                relations
                    .entry((s, index_of[&e.target]))
                    .or_default()
                    .push(e.label.clone());
            }
        }
        for u in &mut unary {
            u.1.sort();
        }
        for labels in relations.values_mut() {
            labels.sort();
        }
        Signature {
            vars,
            index_of,
            unary,
            relations,
        }
    }

    fn rel(&self, s: usize, t: usize) -> &[String] {
        self.relations
            .get(&(s, t))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Relations between `i` and every already-mapped variable agree.
    fn consistent(&self, other: &Signature, mapping: &[usize], i: usize) -> bool {
        let j = mapping[i];
        if self.rel(i, i) != other.rel(j, j) {
            return false;
        }
        mapping.iter().enumerate().all(|(k, &m)| {
            k == i
                || m == usize::MAX
                || (self.rel(i, k) == other.rel(j, m) && self.rel(k, i) == other.rel(m, j))
        })
    }
}
