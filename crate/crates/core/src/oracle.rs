//! Static oracle: derives the gold action sequence for an aligned sentence.

use std::collections::{HashMap, HashSet};
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::{token_fragments, Fragments};
use crate::corpus::AnnotatedExample;
use crate::graph::{AmrGraph, NodeId};
use crate::transition::{
    build_graph, Action, Configuration, StackItem, TransitionError, TOP_LABEL,
};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{id}: gold graph is cyclic after inverse normalization")]
    Cyclic { id: String },
    #[error("{id}: alignment refers to node {node} of a {len}-node graph")]
    BadNode {
        id: String,
        node: NodeId,
        len: usize,
    },
    #[error("{id}: alignment refers to token {token} of a {len}-token sentence")]
    BadToken {
        id: String,
        token: usize,
        len: usize,
    },
    #[error("{id}: {source}")]
    Transition {
        id: String,
        #[source]
        source: TransitionError,
    },
}

/// Gold material the oracle could not reproduce.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossReport {
    /// Gold nodes no token fragment claims.
    pub nodes_dropped: usize,
    /// Gold edges missing from the reconstruction.
    pub edges_dropped: usize,
    /// The subset of dropped edges that point at reentrant nodes.
    pub reentrant_edges_dropped: usize,
    /// 1 when the gold root was not designated as root.
    pub root_unattached: usize,
}

impl LossReport {
    pub fn is_zero(&self) -> bool {
        *self == LossReport::default()
    }
}

impl AddAssign for LossReport {
    fn add_assign(&mut self, o: Self) {
        self.nodes_dropped += o.nodes_dropped;
        self.edges_dropped += o.edges_dropped;
        self.reentrant_edges_dropped += o.reentrant_edges_dropped;
        self.root_unattached += o.root_unattached;
    }
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub actions: Vec<Action>,
    /// Per-token fragments bound in the initial configuration.
    pub templates: Vec<Option<AmrGraph>>,
    pub reconstructed: AmrGraph,
    pub loss: LossReport,
}

impl OracleResult {
    /// Configuration before each action, plus the terminal one.
    pub fn configurations(&self) -> Result<Vec<Configuration>, TransitionError> {
        let mut c = Configuration::new(&self.templates)?;
        let mut out = Vec::with_capacity(self.actions.len() + 1);
        for a in &self.actions {
            let next = c.apply(a)?;
            out.push(c);
            c = next;
        }
        out.push(c);
        Ok(out)
    }
}

/// Folds `actions` over the initial configuration for `templates`.
pub fn replay(
    templates: &[Option<AmrGraph>],
    actions: &[Action],
) -> Result<Configuration, TransitionError> {
    let mut c = Configuration::new(templates)?;
    for a in actions {
        c.apply_mut(a)?;
    }
    Ok(c)
}

struct Gold {
    graph: AmrGraph,
    /// arena id of every claimed gold node
    to_arena: HashMap<NodeId, NodeId>,
    /// gold edges between claimed nodes, keyed by arena endpoints
    edges: HashMap<(NodeId, NodeId), String>,
    root: Option<NodeId>,
}

impl Gold {
    fn new(graph: AmrGraph, fragments: &Fragments) -> Self {
        let mut to_arena = HashMap::new();
        let mut offset = 0;
        for f in fragments.per_token.iter().flatten() {
            for (k, &n) in f.nodes.iter().enumerate() {
                to_arena.insert(n, offset + k);
            }
            offset += f.nodes.len();
        }
        let mut edges = HashMap::new();
        for e in graph.edges() {
            if let (Some(&s), Some(&t)) = (to_arena.get(&e.source), to_arena.get(&e.target)) {
                edges.entry((s, t)).or_insert_with(|| e.label.clone());
            }
        }
        let root = to_arena.get(&graph.root()).copied();
        Gold {
            graph,
            to_arena,
            edges,
            root,
        }
    }

    fn unrealized(
        &self,
        realized: &HashSet<(NodeId, NodeId)>,
        s: NodeId,
        t: NodeId,
    ) -> Option<&str> {
        if realized.contains(&(s, t)) {
            return None;
        }
        self.edges.get(&(s, t)).map(String::as_str)
    }
}

/// Runs the rule cascade over the example:
///
/// 1. `LArc` when the gold graph has an unrealized edge `b0 -> s0`;
/// 2. `RArc` when it has an unrealized edge `s0 -> b0`, or `s0` is ROOT and
///    `b0` is the gold root;
/// 3. `Reduce` when `s0` has no unrealized gold edge with a buffer token,
///    creating the reentrant edge iff the gold graph has it;
/// 4. `Shift` while the buffer is non-empty;
/// 5. otherwise `Reduce`.
pub fn run_oracle(ex: &AnnotatedExample) -> Result<OracleResult, OracleError> {
    let id = ex.id().to_string();
    let n_tokens = ex.sentence.len();
    let graph = ex.graph.normalize_inverse_edges();
    if !graph.is_acyclic() {
        return Err(OracleError::Cyclic { id });
    }
    for (node, token) in ex.alignment.pairs() {
        if node >= graph.len() {
            return Err(OracleError::BadNode {
                id,
                node,
                len: graph.len(),
            });
        }
        if token >= n_tokens {
            return Err(OracleError::BadToken {
                id,
                token,
                len: n_tokens,
            });
        }
    }
    let fragments = token_fragments(&graph, &ex.alignment, n_tokens);
    let templates = fragments.templates();
    let gold = Gold::new(graph, &fragments);
    let mut c = Configuration::new(&templates).map_err(|source| OracleError::Transition {
        id: id.clone(),
        source,
    })?;
    let mut actions = Vec::new();
    while !c.is_terminal() {
        let action = next_action(&c, &gold);
        c.apply_mut(&action)
            .map_err(|source| OracleError::Transition {
                id: id.clone(),
                source,
            })?;
        actions.push(action);
    }
    let loss = loss_report(&c, &gold, &fragments);
    let reconstructed = build_graph(&c).graph;
    Ok(OracleResult {
        actions,
        templates,
        reconstructed,
        loss,
    })
}

fn next_action(c: &Configuration, gold: &Gold) -> Action {
    let realized: HashSet<(NodeId, NodeId)> =
        c.edges().iter().map(|e| (e.source, e.target)).collect();
    let s0 = c.s0();
    let b0 = c.b0_node();
    if let (Some(StackItem::Node(s)), Some(b)) = (s0, b0) {
        if let Some(label) = gold.unrealized(&realized, b, s) {
            if c.can_larc() {
                return Action::LArc(label.to_string());
            }
        }
        if let Some(label) = gold.unrealized(&realized, s, b) {
            if c.can_rarc() {
                return Action::RArc(label.to_string());
            }
        }
    }
    if let (Some(StackItem::Root), Some(b)) = (s0, b0) {
        if gold.root == Some(b) && c.can_rarc() {
            return Action::RArc(TOP_LABEL.to_string());
        }
    }
    if let Some(StackItem::Node(s)) = s0 {
        let pending = c.buffer().filter_map(|t| c.token_node(t)).any(|b| {
            gold.unrealized(&realized, s, b).is_some() || gold.unrealized(&realized, b, s).is_some()
        });
        if !pending {
            return reduce(c, gold, &realized);
        }
    }
    if c.buffer_len() > 0 {
        return Action::Shift;
    }
    reduce(c, gold, &realized)
}

fn reduce(c: &Configuration, gold: &Gold, realized: &HashSet<(NodeId, NodeId)>) -> Action {
    let label = c
        .reentrancy_candidate()
        .and_then(|(p, s)| gold.unrealized(realized, p, s))
        .map(str::to_string);
    Action::Reduce(label)
}

fn loss_report(c: &Configuration, gold: &Gold, fragments: &Fragments) -> LossReport {
    let realized: HashSet<(NodeId, NodeId)> =
        c.edges().iter().map(|e| (e.source, e.target)).collect();
    let mut loss = LossReport {
        nodes_dropped: fragments.unclaimed.len(),
        ..LossReport::default()
    };
    for e in gold.graph.edges() {
        let hit = match (gold.to_arena.get(&e.source), gold.to_arena.get(&e.target)) {
            (Some(&s), Some(&t)) => realized.contains(&(s, t)),
            _ => false,
        };
        if !hit {
            loss.edges_dropped += 1;
            if gold.graph.node(e.target).is_variable() && gold.graph.in_degree(e.target) >= 2 {
                loss.reentrant_edges_dropped += 1;
            }
        }
    }
    if gold.root.is_none() || c.designated_root() != gold.root {
        loss.root_unattached = 1;
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_jamr_alignment, Alignment, TokenizedSentence};
    use crate::graph::isomorphic;
    use crate::penman::parse_penman;
    use crate::transition::ActionKind;

    fn example(text: &str, penman: &str, jamr: &str) -> AnnotatedExample {
        let graph = parse_penman(penman).unwrap();
        let sentence = TokenizedSentence::from_whitespace("x", text);
        let alignment = parse_jamr_alignment("x", jamr, &graph, sentence.len()).unwrap();
        AnnotatedExample {
            sentence,
            graph,
            alignment,
        }
    }

    fn dog_wants() -> AnnotatedExample {
        example(
            "The dog wants to eat",
            "(w / want-01 :ARG0 (d / dog) :ARG1 (e / eat-01 :ARG0 d))",
            "1-2|0.0 2-3|0 4-5|0.1",
        )
    }

    #[test]
    fn dog_wants_trace() {
        let r = run_oracle(&dog_wants()).unwrap();
        let expected = vec![
            Action::Shift,
            Action::Shift,
            Action::LArc(":ARG0".into()),
            Action::RArc(TOP_LABEL.into()),
            Action::Shift,
            Action::RArc(":ARG1".into()),
            Action::Reduce(Some(":ARG0".into())),
            Action::Reduce(None),
            Action::Reduce(None),
        ];
        assert_eq!(r.actions, expected);
        assert!(r.loss.is_zero());
        assert!(isomorphic(&r.reconstructed, &dog_wants().graph));
        let replayed = build_graph(&replay(&r.templates, &r.actions).unwrap()).graph;
        assert_eq!(replayed.to_triples(), r.reconstructed.to_triples());
    }

    #[test]
    fn single_node() {
        let ex = example("dog", "(d / dog)", "0-1|0");
        let r = run_oracle(&ex).unwrap();
        assert_eq!(
            r.actions,
            vec![
                Action::RArc(TOP_LABEL.into()),
                Action::Reduce(None),
                Action::Reduce(None)
            ]
        );
        assert!(isomorphic(&r.reconstructed, &ex.graph));
        assert!(r.loss.is_zero());
    }

    #[test]
    fn non_sibling_reentrancy_is_charged() {
        let ex = example(
            "beta alpha gamma delta",
            "(a / alpha :ARG0 (b / beta) :ARG1 (c / gamma :ARG0 (d / delta :ARG1 b)))",
            "0-1|0.0 1-2|0 2-3|0.1 3-4|0.1.0",
        );
        let r = run_oracle(&ex).unwrap();
        assert_eq!(r.loss.reentrant_edges_dropped, 1);
        assert_eq!(r.loss.edges_dropped, 1);
        assert_eq!(r.loss.nodes_dropped, 0);
        assert!(!isomorphic(&r.reconstructed, &ex.graph));
    }

    #[test]
    fn empty_alignment_only_shifts_and_reduces() {
        let mut ex = dog_wants();
        ex.alignment = Alignment::new();
        let r = run_oracle(&ex).unwrap();
        assert!(r
            .actions
            .iter()
            .all(|a| matches!(a.kind(), ActionKind::Shift | ActionKind::Reduce)));
        assert_eq!(r.loss.nodes_dropped, 3);
        assert_eq!(r.loss.edges_dropped, 3);
        assert_eq!(r.loss.root_unattached, 1);
    }

    #[test]
    fn inverse_roles_are_normalized() {
        let ex = example(
            "dog eat",
            "(d / dog :ARG0-of (e / eat-01))",
            "0-1|0 1-2|0.0",
        );
        let r = run_oracle(&ex).unwrap();
        assert_eq!(r.actions[0], Action::RArc(TOP_LABEL.into()));
        assert_eq!(r.actions[1], Action::LArc(":ARG0".into()));
        assert!(r.loss.is_zero());
        assert!(isomorphic(
            &r.reconstructed,
            &ex.graph.normalize_inverse_edges()
        ));
    }

    #[test]
    fn cyclic_gold_is_an_error() {
        let ex = example(
            "a b",
            "(a / alpha :ARG0 (b / beta :ARG1 a))",
            "0-1|0 1-2|0.0",
        );
        assert!(matches!(run_oracle(&ex), Err(OracleError::Cyclic { .. })));
    }

    #[test]
    fn loss_is_monotone_in_unrealizable_edges() {
        let base = run_oracle(&example(
            "beta alpha gamma delta",
            "(a / alpha :ARG0 (b / beta) :ARG1 (c / gamma :ARG0 (d / delta)))",
            "0-1|0.0 1-2|0 2-3|0.1 3-4|0.1.0",
        ))
        .unwrap();
        let more = run_oracle(&example(
            "beta alpha gamma delta",
            "(a / alpha :ARG0 (b / beta) :ARG1 (c / gamma :ARG0 (d / delta :ARG1 b)))",
            "0-1|0.0 1-2|0 2-3|0.1 3-4|0.1.0",
        ))
        .unwrap();
        assert!(more.loss.edges_dropped > base.loss.edges_dropped);
        assert!(more.loss.reentrant_edges_dropped >= base.loss.reentrant_edges_dropped);
    }
}
