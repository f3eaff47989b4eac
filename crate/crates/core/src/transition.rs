//! The transition system: configurations, actions and graph assembly.
//!
//! Every token's concept fragment is bound when the configuration is created,
//! so the node of the buffer front can take part in arcs before it leaves the
//! buffer. Arcs connect the stack top `s0` with the buffer front `b0`:
//!
//! - `Shift` moves `b0` off the buffer, pushing its node if it has one.
//! - `LArc(l)` adds `b0 -l-> s0` and pops `s0`.
//! - `RArc(l)` adds `s0 -l-> b0` and moves `b0` onto the stack. From the ROOT
//!   sentinel it designates the graph root instead.
//! - `Reduce(r)` pops `s0`; `Some(l)` also adds `s0 -l-> sibling` (see
//!   [`Configuration::reentrancy_candidate`]).
//!
//! Each action lowers `2 * |buffer| + |stack|` by one or two.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{fresh_name, AmrGraph, Edge, Node, NodeId};

/// Label used for the root designation.
pub const TOP_LABEL: &str = ":TOP";
/// Label for edges added when reattaching stranded components.
pub const REPAIR_LABEL: &str = ":mod";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransitionError {
    #[error("{action} is not legal here (stack {stack}, buffer {buffer})")]
    Illegal {
        action: String,
        stack: usize,
        buffer: usize,
    },
    #[error("bad relation label `{0}`")]
    BadLabel(String),
    #[error("sentence has no tokens")]
    EmptySentence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    Shift,
    LArc,
    RArc,
    Reduce,
}

impl ActionKind {
    pub const ALL: [ActionKind; 4] = [
        ActionKind::Shift,
        ActionKind::LArc,
        ActionKind::RArc,
        ActionKind::Reduce,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Shift => "Shift",
            ActionKind::LArc => "LArc",
            ActionKind::RArc => "RArc",
            ActionKind::Reduce => "Reduce",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        ActionKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Shift,
    LArc(String),
    RArc(String),
    /// `Some(label)` creates a reentrant edge to the sibling candidate.
    Reduce(Option<String>),
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Shift => ActionKind::Shift,
            Action::LArc(_) => ActionKind::LArc,
            Action::RArc(_) => ActionKind::RArc,
            Action::Reduce(_) => ActionKind::Reduce,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Shift => write!(f, "Shift"),
            Action::LArc(l) => write!(f, "LArc({l})"),
            Action::RArc(l) => write!(f, "RArc({l})"),
            Action::Reduce(None) => write!(f, "Reduce"),
            Action::Reduce(Some(l)) => write!(f, "Reduce({l})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StackItem {
    Root,
    Node(NodeId),
}

impl StackItem {
    pub fn node(self) -> Option<NodeId> {
        match self {
            StackItem::Root => None,
            StackItem::Node(n) => Some(n),
        }
    }
}

/// A node instantiated from a token's template.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigNode {
    pub node: Node,
    pub token: usize,
}

/// Derived view of a stack node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackNode {
    pub id: NodeId,
    pub token: Option<usize>,
    pub concept: String,
    /// Height of the subgraph below the node.
    pub depth: usize,
    pub parents: usize,
    pub children: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Configuration {
    n_tokens: usize,
    stack: Vec<StackItem>,
    /// Index of the buffer front; the buffer is `next..n_tokens`.
    next: usize,
    nodes: Vec<ConfigNode>,
    /// Template root of each token.
    bound: Vec<Option<NodeId>>,
    /// Template-internal edges per token, added when the token leaves the buffer.
    internal: Vec<Vec<Edge>>,
    edges: Vec<Edge>,
    root: Option<NodeId>,
}

impl Configuration {
    /// Initial configuration: stack `[ROOT]`, every token on the buffer, and
    /// `templates[i]` instantiated for token `i`.
    pub fn new(templates: &[Option<AmrGraph>]) -> Result<Self, TransitionError> {
        if templates.is_empty() {
            return Err(TransitionError::EmptySentence);
        }
        let mut c = Configuration {
            n_tokens: templates.len(),
            stack: vec![StackItem::Root],
            next: 0,
            nodes: Vec::new(),
            bound: Vec::with_capacity(templates.len()),
            internal: Vec::with_capacity(templates.len()),
            edges: Vec::new(),
            root: None,
        };
        for (token, template) in templates.iter().enumerate() {
            let Some(t) = template else {
                c.bound.push(None);
                c.internal.push(Vec::new());
                continue;
            };
            let offset = c.nodes.len();
            c.nodes.extend(t.nodes().iter().map(|n| ConfigNode {
                node: n.clone(),
                token,
            }));
            c.bound.push(Some(offset + t.root()));
            c.internal.push(
                t.edges()
                    .iter()
                    .map(|e| Edge {
                        source: offset + e.source,
                        target: offset + e.target,
                        label: e.label.clone(),
                    })
                    .collect(),
            );
        }
        Ok(c)
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn stack(&self) -> &[StackItem] {
        &self.stack
    }

    pub fn buffer(&self) -> std::ops::Range<usize> {
        self.next..self.n_tokens
    }

    pub fn buffer_len(&self) -> usize {
        self.n_tokens - self.next
    }

    pub fn nodes(&self) -> &[ConfigNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn designated_root(&self) -> Option<NodeId> {
        self.root
    }

    /// Template root bound to `token`.
    pub fn token_node(&self, token: usize) -> Option<NodeId> {
        self.bound.get(token).copied().flatten()
    }

    pub fn is_terminal(&self) -> bool {
        self.stack.is_empty() && self.next == self.n_tokens
    }

    /// `2 * |buffer| + |stack|`.
    pub fn measure(&self) -> usize {
        2 * self.buffer_len() + self.stack.len()
    }

    /// Stack item `i` positions below the top.
    pub fn stack_at(&self, i: usize) -> Option<StackItem> {
        self.stack.len().checked_sub(i + 1).map(|k| self.stack[k])
    }

    pub fn s0(&self) -> Option<StackItem> {
        self.stack.last().copied()
    }

    /// Buffer token `i` positions after the front.
    pub fn buffer_at(&self, i: usize) -> Option<usize> {
        let t = self.next + i;
        (t < self.n_tokens).then_some(t)
    }

    pub fn b0_node(&self) -> Option<NodeId> {
        self.buffer_at(0).and_then(|t| self.token_node(t))
    }

    fn is_variable(&self, n: NodeId) -> bool {
        self.nodes[n].node.is_variable()
    }

    fn connected(&self, a: NodeId, b: NodeId) -> bool {
        self.edges
            .iter()
            .any(|e| (e.source == a && e.target == b) || (e.source == b && e.target == a))
    }

    /// Whether `to` is reachable from `from` over current edges.
    fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        let mut seen = HashSet::from([from]);
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            for e in self.edges.iter().chain(self.internal_live()) {
                if e.source == n && seen.insert(e.target) {
                    stack.push(e.target);
                }
            }
        }
        false
    }

    /// Internal edges of tokens still on the buffer; they join the graph later.
    fn internal_live(&self) -> impl Iterator<Item = &Edge> {
        self.internal[self.next..].iter().flatten()
    }

    /// Whether a new edge `source -> target` keeps the graph simple and
    /// acyclic. A constant takes at most one incoming edge, since PENMAN
    /// cannot share it.
    fn can_link(&self, source: NodeId, target: NodeId) -> bool {
        source != target
            && self.is_variable(source)
            && (self.is_variable(target)
                || !self
                    .edges
                    .iter()
                    .chain(self.internal_live())
                    .any(|e| e.target == target))
            && !self.connected(source, target)
            && !self.reaches(target, source)
    }

    pub fn can_larc(&self) -> bool {
        match (self.s0(), self.b0_node()) {
            (Some(StackItem::Node(s)), Some(b)) => self.can_link(b, s),
            _ => false,
        }
    }

    pub fn can_rarc(&self) -> bool {
        match (self.s0(), self.b0_node()) {
            (Some(StackItem::Root), Some(b)) => self.root.is_none() && self.is_variable(b),
            (Some(StackItem::Node(s)), Some(b)) => self.can_link(s, b),
            _ => false,
        }
    }

    pub fn can_reduce(&self) -> bool {
        match self.s0() {
            Some(StackItem::Root) => self.stack.len() == 1 && self.next == self.n_tokens,
            Some(StackItem::Node(_)) => true,
            None => false,
        }
    }

    pub fn legal_actions(&self) -> Vec<ActionKind> {
        let mut out = Vec::with_capacity(4);
        if self.next < self.n_tokens {
            out.push(ActionKind::Shift);
        }
        if self.can_larc() {
            out.push(ActionKind::LArc);
        }
        if self.can_rarc() {
            out.push(ActionKind::RArc);
        }
        if self.can_reduce() {
            out.push(ActionKind::Reduce);
        }
        out
    }

    pub fn is_legal(&self, kind: ActionKind) -> bool {
        match kind {
            ActionKind::Shift => self.next < self.n_tokens,
            ActionKind::LArc => self.can_larc(),
            ActionKind::RArc => self.can_rarc(),
            ActionKind::Reduce => self.can_reduce(),
        }
    }

    /// For a Reduce of `s0`: the popped node and the most recently attached
    /// other child of its most recent parent that could receive an edge from it.
    pub fn reentrancy_candidate(&self) -> Option<(NodeId, NodeId)> {
        let p = self.s0()?.node()?;
        let parent = self.edges.iter().rev().find(|e| e.target == p)?.source;
        let sibling = self
            .edges
            .iter()
            .rev()
            .filter(|e| e.source == parent && e.target != p)
            .map(|e| e.target)
            .find(|&s| self.is_variable(s) && self.can_link(p, s))?;
        Some((p, sibling))
    }

    fn illegal(&self, action: &Action) -> TransitionError {
        TransitionError::Illegal {
            action: action.to_string(),
            stack: self.stack.len(),
            buffer: self.buffer_len(),
        }
    }

    fn leave_buffer(&mut self) {
        let t = self.next;
        self.next += 1;
        let internal = std::mem::take(&mut self.internal[t]);
        self.edges.extend(internal);
    }

    /// Applies `action` in place.
    pub fn apply_mut(&mut self, action: &Action) -> Result<(), TransitionError> {
        if !self.is_legal(action.kind()) {
            return Err(self.illegal(action));
        }
        if let Action::LArc(label) | Action::RArc(label) | Action::Reduce(Some(label)) = action {
            if !label.starts_with(':') || label.len() < 2 {
                return Err(TransitionError::BadLabel(label.clone()));
            }
        }
        match action {
            Action::Shift => {
                let node = self.b0_node();
                self.leave_buffer();
                if let Some(n) = node {
                    self.stack.push(StackItem::Node(n));
                }
            }
            Action::LArc(label) => {
                let s = self.stack.pop().and_then(StackItem::node).unwrap();
                let b = self.b0_node().unwrap();
                self.edges.push(Edge {
                    source: b,
                    target: s,
                    label: label.clone(),
                });
            }
            Action::RArc(label) => {
                let b = self.b0_node().unwrap();
                match self.s0().unwrap() {
                    StackItem::Root => self.root = Some(b),
                    StackItem::Node(s) => self.edges.push(Edge {
                        source: s,
                        target: b,
                        label: label.clone(),
                    }),
                }
                self.leave_buffer();
                self.stack.push(StackItem::Node(b));
            }
            Action::Reduce(reentrancy) => {
                let candidate = self.reentrancy_candidate();
                self.stack.pop();
                if let (Some(label), Some((p, s))) = (reentrancy, candidate) {
                    self.edges.push(Edge {
                        source: p,
                        target: s,
                        label: label.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Returns the configuration after `action`.
    pub fn apply(&self, action: &Action) -> Result<Configuration, TransitionError> {
        let mut next = self.clone();
        next.apply_mut(action)?;
        Ok(next)
    }

    pub fn stack_node(&self, id: NodeId) -> StackNode {
        let parents = self.edges.iter().filter(|e| e.target == id).count();
        let children = self.edges.iter().filter(|e| e.source == id).count();
        StackNode {
            id,
            token: Some(self.nodes[id].token),
            concept: self.nodes[id].node.label.clone(),
            depth: self.height(id),
            parents,
            children,
        }
    }

    /// Longest downward breadth-first distance from `id` over current edges.
    fn height(&self, id: NodeId) -> usize {
        let mut dist = std::collections::HashMap::from([(id, 0usize)]);
        let mut queue = VecDeque::from([id]);
        let mut max = 0;
        while let Some(n) = queue.pop_front() {
            let d = dist[&n];
            max = max.max(d);
            for e in self.edges.iter().filter(|e| e.source == n) {
                if !dist.contains_key(&e.target) {
                    dist.insert(e.target, d + 1);
                    queue.push_back(e.target);
                }
            }
        }
        max
    }
}

/// Graph assembled from a configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BuiltGraph {
    pub graph: AmrGraph,
    /// `:mod` edges added to connect stranded components.
    pub repairs: usize,
}

/// Assembles the output graph from the nodes of tokens that left the buffer
/// and the edge set. Components not connected to the root are attached to
/// it with `:mod`. A configuration without nodes yields `(a / amr-empty)`.
pub fn build_graph(c: &Configuration) -> BuiltGraph {
    let mut include = vec![false; c.nodes.len()];
    for (i, n) in c.nodes.iter().enumerate() {
        if n.token < c.next {
            include[i] = true;
        }
    }
    for e in &c.edges {
        include[e.source] = true;
        include[e.target] = true;
    }
    let ids: Vec<NodeId> = (0..c.nodes.len()).filter(|&i| include[i]).collect();
    if ids.is_empty() {
        return BuiltGraph {
            graph: AmrGraph::empty_amr(),
            repairs: 0,
        };
    }
    let mut index = vec![usize::MAX; c.nodes.len()];
    let mut taken: HashSet<String> = HashSet::new();
    let mut nodes = Vec::with_capacity(ids.len() + 1);
    for (k, &i) in ids.iter().enumerate() {
        index[i] = k;
        let node = &c.nodes[i].node;
        if node.is_variable() {
            let name = fresh_name(&node.label, |s| taken.contains(s));
            taken.insert(name.clone());
            nodes.push(Node::variable(name, node.label.clone()));
        } else {
            nodes.push(node.clone());
        }
    }
    let mut edges: Vec<Edge> = c
        .edges
        .iter()
        .map(|e| Edge {
            source: index[e.source],
            target: index[e.target],
            label: e.label.clone(),
        })
        .collect();
    let has_parent = |edges: &[Edge], n: usize| edges.iter().any(|e| e.target == n);
    let root = c
        .root
        .map(|r| index[r])
        .filter(|&r| r != usize::MAX)
        .or_else(|| (0..nodes.len()).find(|&n| nodes[n].is_variable() && !has_parent(&edges, n)))
        .or_else(|| (0..nodes.len()).find(|&n| nodes[n].is_variable()));
    let root = match root {
        Some(r) => r,
        None if nodes.len() == 1 => 0,
        None => {
            // only constants: hang them off a placeholder concept
            let name = fresh_name("amr-unknown", |s| taken.contains(s));
            nodes.push(Node::variable(name, "amr-unknown"));
            nodes.len() - 1
        }
    };
    let mut repairs = 0;
    loop {
        let g = AmrGraph::from_parts(nodes.clone(), edges.clone(), root)
            .expect("assembled graph is valid");
        let reach = connected_to(&g, root);
        let Some(stranded) = (0..nodes.len()).find(|&n| !reach[n]) else {
            return BuiltGraph { graph: g, repairs };
        };
        // attach the component at a node without parents where there is one
        let component = connected_to(&g, stranded);
        let head = (0..nodes.len())
            .find(|&n| component[n] && !has_parent(&edges, n))
            .unwrap_or(stranded);
        edges.push(Edge {
            source: root,
            target: head,
            label: REPAIR_LABEL.to_string(),
        });
        repairs += 1;
    }
}

/// Nodes connected to `start` ignoring edge direction; the serializer inverts
/// edges as needed, so this is what a rooted rendering requires.
fn connected_to(g: &AmrGraph, start: NodeId) -> Vec<bool> {
    let mut seen = vec![false; g.len()];
    seen[start] = true;
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for e in g.edges() {
            let other = if e.source == n {
                e.target
            } else if e.target == n {
                e.source
            } else {
                continue;
            };
            if !seen[other] {
                seen[other] = true;
                stack.push(other);
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::isomorphic;
    use crate::penman::{parse_penman, serialize_penman_compact};

    fn t(text: &str) -> Option<AmrGraph> {
        Some(parse_penman(text).unwrap())
    }

    fn dog_wants_templates() -> Vec<Option<AmrGraph>> {
        vec![
            None,
            t("(d / dog)"),
            t("(w / want-01)"),
            None,
            t("(e / eat-01)"),
        ]
    }

    fn dog_wants_actions() -> Vec<Action> {
        vec![
            Action::Shift,
            Action::Shift,
            Action::LArc(":ARG0".into()),
            Action::RArc(TOP_LABEL.into()),
            Action::Shift,
            Action::RArc(":ARG1".into()),
            Action::Reduce(Some(":ARG0".into())),
            Action::Reduce(None),
            Action::Reduce(None),
        ]
    }

    #[test]
    fn dog_wants_golden_trace() {
        let mut c = Configuration::new(&dog_wants_templates()).unwrap();
        assert_eq!(c.legal_actions(), vec![ActionKind::Shift]);
        let mut measures = vec![c.measure()];
        for a in dog_wants_actions() {
            if let Action::Reduce(Some(_)) = a {
                let (p, s) = c.reentrancy_candidate().unwrap();
                assert_eq!(c.nodes()[p].node.label, "eat-01");
                assert_eq!(c.nodes()[s].node.label, "dog");
            }
            c.apply_mut(&a).unwrap();
            measures.push(c.measure());
        }
        assert!(c.is_terminal());
        assert!(measures.windows(2).all(|w| w[1] < w[0]));
        let built = build_graph(&c);
        assert_eq!(built.repairs, 0);
        let gold =
            parse_penman("(w / want-01 :ARG0 (d / dog) :ARG1 (e / eat-01 :ARG0 d))").unwrap();
        assert!(isomorphic(&built.graph, &gold));
        assert_eq!(
            serialize_penman_compact(&built.graph).unwrap(),
            "(w / want-01 :ARG0 (d / dog) :ARG1 (e / eat-01 :ARG0 d))"
        );
    }

    #[test]
    fn legal_action_examples() {
        let c = Configuration::new(&[t("(a / alpha)"), t("(b / beta)")]).unwrap();
        assert_eq!(c.legal_actions(), vec![ActionKind::Shift, ActionKind::RArc]);
        let c = c
            .apply(&Action::Shift)
            .unwrap()
            .apply(&Action::Shift)
            .unwrap();
        assert_eq!(c.stack().len(), 3);
        assert_eq!(c.legal_actions(), vec![ActionKind::Reduce]);
        let c = c
            .apply(&Action::Reduce(None))
            .unwrap()
            .apply(&Action::Reduce(None))
            .unwrap()
            .apply(&Action::Reduce(None))
            .unwrap();
        assert!(c.is_terminal());
        assert!(c.legal_actions().is_empty());
    }

    #[test]
    fn illegal_actions_are_rejected() {
        let c = Configuration::new(&dog_wants_templates()).unwrap();
        assert!(matches!(
            c.apply(&Action::Reduce(None)),
            Err(TransitionError::Illegal { .. })
        ));
        assert!(matches!(
            c.apply(&Action::LArc(":ARG0".into())),
            Err(TransitionError::Illegal { .. })
        ));
        let c = c
            .apply(&Action::Shift)
            .unwrap()
            .apply(&Action::Shift)
            .unwrap();
        assert!(matches!(
            c.apply(&Action::LArc("ARG0".into())),
            Err(TransitionError::BadLabel(_))
        ));
        assert!(Configuration::new(&[]).is_err());
    }

    #[test]
    fn constants_take_one_incoming_edge() {
        let t = |c: &str| Some(AmrGraph::new(Node::variable("v", c)));
        let minus = Some(AmrGraph::new(Node::constant("-", false)));
        // a - b: after a -> -, b may not take - as a dependent
        let mut c = Configuration::new(&[t("alpha"), minus, t("beta")]).unwrap();
        c.apply_mut(&Action::RArc(TOP_LABEL.into())).unwrap();
        c.apply_mut(&Action::RArc(":mod".into())).unwrap();
        assert!(!c.can_larc());
        assert!(c.can_reduce());
    }

    #[test]
    fn reduce_without_candidate_adds_nothing() {
        let c = Configuration::new(&[t("(a / alpha)")]).unwrap();
        let c = c.apply(&Action::Shift).unwrap();
        assert_eq!(c.reentrancy_candidate(), None);
        let c = c.apply(&Action::Reduce(Some(":ARG0".into()))).unwrap();
        assert!(c.edges().is_empty());
        assert_eq!(c.stack(), &[StackItem::Root]);
    }

    #[test]
    fn single_child_parent_has_no_candidate() {
        let c = Configuration::new(&[t("(a / alpha)"), t("(b / beta)")]).unwrap();
        let c = c
            .apply(&Action::RArc(TOP_LABEL.into()))
            .unwrap()
            .apply(&Action::RArc(":ARG1".into()))
            .unwrap();
        assert_eq!(c.reentrancy_candidate(), None);
    }

    #[test]
    fn stranded_components_are_repaired() {
        let c = Configuration::new(&[t("(a / alpha)"), t("(b / beta)")]).unwrap();
        let mut c = c;
        for a in [
            Action::Shift,
            Action::Shift,
            Action::Reduce(None),
            Action::Reduce(None),
            Action::Reduce(None),
        ] {
            c.apply_mut(&a).unwrap();
        }
        let built = build_graph(&c);
        assert_eq!(built.repairs, 1);
        assert_eq!(
            serialize_penman_compact(&built.graph).unwrap(),
            "(a / alpha :mod (b / beta))"
        );
    }

    #[test]
    fn empty_parse_is_amr_empty() {
        let mut c = Configuration::new(&[None, None]).unwrap();
        for a in [Action::Shift, Action::Shift, Action::Reduce(None)] {
            c.apply_mut(&a).unwrap();
        }
        assert!(c.is_terminal());
        assert_eq!(
            serialize_penman_compact(&build_graph(&c).graph).unwrap(),
            "(a / amr-empty)"
        );
    }

    #[test]
    fn template_internal_edges_join_on_shift() {
        let c = Configuration::new(&[t("(c / city :name (n / name :op1 \"Rome\"))")]).unwrap();
        assert!(c.edges().is_empty());
        let c = c.apply(&Action::RArc(TOP_LABEL.into())).unwrap();
        assert_eq!(c.edges().len(), 2);
        let g = build_graph(&c).graph;
        assert_eq!(
            serialize_penman_compact(&g).unwrap(),
            "(c / city :name (n / name :op1 \"Rome\"))"
        );
    }
}
