#![allow(dead_code)]

use amrberger::corpus::{
    load_amr_file, load_conllu_annotations, zip_examples, AlignmentSource, AnnotatedExample,
};
use amrberger::graph::{isomorphic, Node};
use amrberger::transition::{build_graph, Action, ActionKind, Configuration, StackItem, TOP_LABEL};
use amrberger::{parse_penman, serialize_penman, AmrGraph};
use rand::Rng;

const CONCEPTS: [&str; 5] = ["dog", "want-01", "eat-01", "cat", "person"];
const LABELS: [&str; 5] = [":ARG0", ":ARG1", ":mod", ":ARG0-of", ":location"];
const CONSTANTS: [(&str, &str, bool); 4] = [
    (":polarity", "-", false),
    (":quant", "5", false),
    (":wiki", "Trieste", true),
    (":op1", "New York", true),
];

/// Random connected graph with up to `max_vars` variables, a few constants
/// and some reentrant edges. Edges run from lower to higher node ids.
pub fn random_graph(rng: &mut impl Rng, max_vars: usize) -> AmrGraph {
    let n = rng.gen_range(1..=max_vars);
    let pick = |rng: &mut dyn rand::RngCore, xs: &[&'static str]| xs[rng.gen_range(0..xs.len())];
    let mut g = AmrGraph::new(Node::variable("x0", pick(rng, &CONCEPTS)));
    for i in 1..n {
        let id = g
            .add_node(Node::variable(format!("x{i}"), pick(rng, &CONCEPTS)))
            .unwrap();
        let parent = rng.gen_range(0..i);
        g.add_edge(parent, id, pick(rng, &LABELS)).unwrap();
    }
    for _ in 0..rng.gen_range(0..=n / 2) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a < b && !g.edges().iter().any(|e| e.source == a && e.target == b) {
            g.add_edge(a, b, pick(rng, &LABELS)).unwrap();
        }
    }
    for _ in 0..rng.gen_range(0..=2) {
        let (label, value, quoted) = CONSTANTS[rng.gen_range(0..CONSTANTS.len())];
        let source = rng.gen_range(0..n);
        let c = g.add_constant(value, quoted);
        g.add_edge(source, c, label).unwrap();
    }
    g
}

/// Random per-token templates: unaligned tokens, single concepts, a
/// polarity constant and a two-node name fragment.
pub fn random_templates(rng: &mut impl Rng, max_tokens: usize) -> Vec<Option<AmrGraph>> {
    (0..rng.gen_range(1..=max_tokens))
        .map(|_| match rng.gen_range(0..20) {
            0..=4 => None,
            5..=14 => Some(AmrGraph::new(Node::variable(
                "v",
                CONCEPTS[rng.gen_range(0..CONCEPTS.len())],
            ))),
            15..=16 => Some(AmrGraph::new(Node::constant("-", false))),
            _ => {
                let mut g = AmrGraph::new(Node::variable("p", "person"));
                let n = g.add_node(Node::variable("n", "name")).unwrap();
                g.add_edge(0, n, ":name").unwrap();
                Some(g)
            }
        })
        .collect()
}

/// Drives one random legal action sequence to the end. Checks that the
/// progress measure drops on every step and that the built graph is valid,
/// connected to its root and survives a PENMAN round trip.
pub fn fuzz_sequence(rng: &mut impl Rng) -> Result<usize, String> {
    let templates = random_templates(rng, 8);
    let mut c = Configuration::new(&templates).map_err(|e| e.to_string())?;
    let bound = 2 * templates.len() + 1;
    let mut steps = 0;
    while !c.is_terminal() {
        let legal = c.legal_actions();
        if legal.is_empty() {
            return Err(format!("no legal action after {steps} steps"));
        }
        let kind = legal[rng.gen_range(0..legal.len())];
        let label = LABELS[rng.gen_range(0..LABELS.len())].to_string();
        let action = match kind {
            ActionKind::Shift => Action::Shift,
            ActionKind::LArc => Action::LArc(label),
            ActionKind::RArc if c.s0() == Some(StackItem::Root) => {
                Action::RArc(TOP_LABEL.to_string())
            }
            ActionKind::RArc => Action::RArc(label),
            ActionKind::Reduce => Action::Reduce(rng.gen_bool(0.5).then_some(label)),
        };
        let before = c.measure();
        c.apply_mut(&action).map_err(|e| format!("{action}: {e}"))?;
        if c.measure() >= before {
            return Err(format!(
                "{action} left the measure at {} (was {before})",
                c.measure()
            ));
        }
        steps += 1;
        if steps > bound {
            return Err(format!("{steps} steps exceed the bound {bound}"));
        }
    }
    let g = build_graph(&c).graph;
    g.validate().map_err(|e| e.to_string())?;
    if !connected(&g) {
        return Err("graph is not connected to its root".into());
    }
    let text = serialize_penman(&g).map_err(|e| e.to_string())?;
    let back = parse_penman(&text).map_err(|e| e.to_string())?;
    // the serializer writes edges against their direction as inverse roles
    if !isomorphic(
        &g.normalize_inverse_edges(),
        &back.normalize_inverse_edges(),
    ) {
        return Err(format!("round trip changed {text}"));
    }
    Ok(steps)
}

/// Every node reaches the root when edge direction is ignored.
pub fn connected(g: &AmrGraph) -> bool {
    let mut seen = vec![false; g.len()];
    let mut stack = vec![g.root()];
    seen[g.root()] = true;
    while let Some(n) = stack.pop() {
        for e in g.edges() {
            let next = if e.source == n {
                e.target
            } else if e.target == n {
                e.source
            } else {
                continue;
            };
            if !seen[next] {
                seen[next] = true;
                stack.push(next);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// The toy corpus split, zipped with its hand alignments.
pub fn toy_examples(split: &str) -> Vec<AnnotatedExample> {
    let bank = load_amr_file(fixture(&format!("toy/{split}.amr"))).unwrap();
    assert!(bank.errors.is_empty(), "{:?}", bank.errors);
    let ann = load_conllu_annotations(fixture(&format!("toy/{split}.conllu"))).unwrap();
    zip_examples(&bank.records, &ann, AlignmentSource::Jamr).unwrap()
}
