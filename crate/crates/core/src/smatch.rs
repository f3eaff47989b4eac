//! Smatch: triple overlap under the best variable mapping, found by greedy
//! hill climbing (or exhaustively for small graphs), and the fine-grained
//! metric suite built on top of it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{strip_sense, AmrGraph, Edge, NodeId};

pub const DEFAULT_RESTARTS: usize = 4;
pub const EXACT_LIMIT: usize = 8;
const UNLABELED: &str = "rel";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmatchError {
    #[error("exact matching is limited to {EXACT_LIMIT} variables per graph, got {a} and {b}")]
    TooLarge { a: usize, b: usize },
}

/// Matched triple count against both totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmatchResult {
    pub matched: usize,
    /// Triples of the first (predicted) graph.
    pub total_a: usize,
    /// Triples of the second (gold) graph.
    pub total_b: usize,
}

impl SmatchResult {
    pub fn precision(&self) -> f64 {
        ratio(self.matched, self.total_a)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.matched, self.total_b)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

impl std::ops::AddAssign for SmatchResult {
    fn add_assign(&mut self, o: Self) {
        self.matched += o.matched;
        self.total_a += o.total_a;
        self.total_b += o.total_b;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Triples over numbered variables, ready for matching.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripleSet {
    /// Concept of each variable.
    pub concepts: Vec<String>,
    /// `(variable, predicate, value)`: instance, TOP and attribute triples.
    pub unary: Vec<(usize, String, String)>,
    /// `(source, predicate, target)` between variables.
    pub relations: Vec<(usize, String, usize)>,
}

impl TripleSet {
    pub fn len(&self) -> usize {
        self.unary.len() + self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Triples of the inverse-normalized graph.
    pub fn of_graph(g: &AmrGraph) -> Self {
        TripleSet::select(
            &g.normalize_inverse_edges(),
            |_| true,
            |_| true,
            true,
            |l| l.to_string(),
            |c| c.to_string(),
        )
    }

    /// Triples of a subgraph of an already normalized graph. Kept variables
    /// contribute instance triples; kept edges contribute attribute or
    /// relation triples when their variable endpoints are kept.
    pub fn select(
        g: &AmrGraph,
        keep_node: impl Fn(NodeId) -> bool,
        keep_edge: impl Fn(&Edge) -> bool,
        top: bool,
        relabel: impl Fn(&str) -> String,
        concept: impl Fn(&str) -> String,
    ) -> Self {
        let mut index = HashMap::new();
        let mut set = TripleSet::default();
        for (id, n) in g.nodes().iter().enumerate() {
            if n.is_variable() && keep_node(id) {
                index.insert(id, set.concepts.len());
                let c = concept(&n.label);
                set.unary
                    .push((set.concepts.len(), "instance".into(), c.clone()));
                set.concepts.push(c);
            }
        }
        if top {
            if let Some(&v) = index.get(&g.root()) {
                set.unary.push((v, "TOP".into(), set.concepts[v].clone()));
            }
        }
        for e in g.edges() {
            if !keep_edge(e) {
                continue;
            }
            let Some(&s) = index.get(&e.source) else {
                continue;
            };
            let predicate = relabel(e.label.trim_start_matches(':'));
            let target = g.node(e.target);
            if target.is_constant() {
                set.unary.push((s, predicate, target.label.clone()));
            } else if let Some(&t) = index.get(&e.target) {
                set.relations.push((s, predicate, t));
            }
        }
        set
    }
}

/// Precomputed match tables between two triple sets.
struct Problem {
    n: usize,
    m: usize,
    /// `unary[i * m + j]`: unary triples matched when `i -> j`.
    unary: Vec<u32>,
    /// Distinct relation keys of A: `(i, k, predicate id, count)`.
    keys: Vec<(usize, usize, u32, u32)>,
    b_relations: HashMap<(usize, usize, u32), u32>,
    /// Keys touching each variable of A.
    touching: Vec<Vec<usize>>,
    /// Variables of B each variable of A could share a triple with.
    candidates: Vec<Vec<usize>>,
}

impl Problem {
    fn new(a: &TripleSet, b: &TripleSet) -> Self {
        let (n, m) = (a.concepts.len(), b.concepts.len());
        let mut ua: BTreeMap<(usize, &str, &str), u32> = BTreeMap::new();
        for (v, p, o) in &a.unary {
            *ua.entry((*v, p, o)).or_default() += 1;
        }
        let mut ub: HashMap<(&str, &str), Vec<(usize, u32)>> = HashMap::new();
        let mut ub_counts: BTreeMap<(usize, &str, &str), u32> = BTreeMap::new();
        for (v, p, o) in &b.unary {
            *ub_counts.entry((*v, p, o)).or_default() += 1;
        }
        for ((v, p, o), c) in ub_counts {
            ub.entry((p, o)).or_default().push((v, c));
        }
        let mut unary = vec![0u32; n * m];
        for ((i, p, o), ca) in ua {
            for &(j, cb) in ub.get(&(p, o)).map(Vec::as_slice).unwrap_or(&[]) {
                unary[i * m + j] += ca.min(cb);
            }
        }
        let mut preds: HashMap<String, u32> = HashMap::new();
        let mut pred_id = |p: &str| {
            let next = preds.len() as u32;
            *preds.entry(p.to_string()).or_insert(next)
        };
        let mut ka: BTreeMap<(usize, usize, u32), u32> = BTreeMap::new();
        for (s, p, t) in &a.relations {
            *ka.entry((*s, *t, pred_id(p))).or_default() += 1;
        }
        let mut b_relations = HashMap::new();
        for (s, p, t) in &b.relations {
            *b_relations.entry((*s, *t, pred_id(p))).or_default() += 1;
        }
        let keys: Vec<_> = ka.into_iter().map(|((i, k, p), c)| (i, k, p, c)).collect();
        let mut touching = vec![Vec::new(); n];
        for (x, &(i, k, _, _)) in keys.iter().enumerate() {
            touching[i].push(x);
            if k != i {
                touching[k].push(x);
            }
        }
        let mut candidates: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for i in 0..n {
            candidates[i].extend((0..m).filter(|&j| unary[i * m + j] > 0));
        }
        for &(i, k, p, _) in &keys {
            for &(j, l, q) in b_relations.keys() {
                if p == q {
                    candidates[i].insert(j);
                    candidates[k].insert(l);
                }
            }
        }
        Problem {
            n,
            m,
            unary,
            keys,
            b_relations,
            touching,
            candidates: candidates
                .into_iter()
                .map(|c| c.into_iter().collect())
                .collect(),
        }
    }

    fn key_score(&self, x: usize, map: &[Option<usize>]) -> u32 {
        let (i, k, p, c) = self.keys[x];
        match (map[i], map[k]) {
            (Some(j), Some(l)) => self.b_relations.get(&(j, l, p)).map_or(0, |&cb| c.min(cb)),
            _ => 0,
        }
    }

    fn unary_score(&self, i: usize, map: &[Option<usize>]) -> u32 {
        map[i].map_or(0, |j| self.unary[i * self.m + j])
    }

    fn score(&self, map: &[Option<usize>]) -> u32 {
        (0..self.n).map(|i| self.unary_score(i, map)).sum::<u32>()
            + (0..self.keys.len())
                .map(|x| self.key_score(x, map))
                .sum::<u32>()
    }

    /// Score of the triples involving `i` or `k`.
    fn local(&self, i: usize, k: Option<usize>, map: &[Option<usize>]) -> u32 {
        let mut s = self.unary_score(i, map);
        s += self.touching[i]
            .iter()
            .map(|&x| self.key_score(x, map))
            .sum::<u32>();
        if let Some(k) = k {
            s += self.unary_score(k, map);
            s += self.touching[k]
                .iter()
                .filter(|&&x| !self.touching[i].contains(&x))
                .map(|&x| self.key_score(x, map))
                .sum::<u32>();
        }
        s
    }

    /// Steepest ascent over reassignments and swaps; returns the final score.
    fn climb(&self, map: &mut [Option<usize>]) -> u32 {
        let mut owner = vec![None; self.m];
        for (i, j) in map.iter().enumerate() {
            if let Some(j) = *j {
                owner[j] = Some(i);
            }
        }
        let mut score = self.score(map);
        loop {
            let mut best: Option<(usize, Option<usize>, i64)> = None;
            for i in 0..self.n {
                for j in (0..self.m).map(Some).chain([None]) {
                    if map[i] == j {
                        continue;
                    }
                    let other = j.and_then(|j| owner[j]);
                    let before = self.local(i, other, map) as i64;
                    let old = map[i];
                    map[i] = j;
                    if let Some(k) = other {
                        map[k] = old;
                    }
                    let after = self.local(i, other, map) as i64;
                    map[i] = old;
                    if let Some(k) = other {
                        map[k] = j;
                    }
                    let delta = after - before;
                    if delta > 0 && best.is_none_or(|(_, _, d)| delta > d) {
                        best = Some((i, j, delta));
                    }
                }
            }
            let Some((i, j, delta)) = best else { break };
            let old = map[i];
            let other = j.and_then(|j| owner[j]);
            map[i] = j;
            if let Some(k) = other {
                map[k] = old;
            }
            if let Some(o) = old {
                owner[o] = other;
            }
            if let Some(j) = j {
                owner[j] = Some(i);
            }
            score = (score as i64 + delta) as u32;
        }
        score
    }

    /// Each variable takes the first free variable with the same concept;
    /// the rest take their first free candidate.
    fn concept_seed(&self, a: &TripleSet, b: &TripleSet) -> Vec<Option<usize>> {
        let mut used = vec![false; self.m];
        let mut map = vec![None; self.n];
        for (i, slot) in map.iter_mut().enumerate() {
            if let Some(j) = (0..self.m).find(|&j| !used[j] && a.concepts[i] == b.concepts[j]) {
                used[j] = true;
                *slot = Some(j);
            }
        }
        for (i, slot) in map.iter_mut().enumerate() {
            if slot.is_none() {
                if let Some(&j) = self.candidates[i].iter().find(|&&j| !used[j]) {
                    used[j] = true;
                    *slot = Some(j);
                }
            }
        }
        map
    }

    /// Visits variables in random order, giving each a random free variable
    /// among those it could share a triple with.
    fn random_seed(&self, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(rng);
        let mut used = vec![false; self.m];
        let mut map = vec![None; self.n];
        for i in order {
            let free: Vec<usize> = self.candidates[i]
                .iter()
                .copied()
                .filter(|&j| !used[j])
                .collect();
            if let Some(&j) = free.choose(rng) {
                used[j] = true;
                map[i] = Some(j);
            }
        }
        map
    }

    fn exact(&self) -> u32 {
        // keys grouped by the later of their endpoints, scored once both are placed
        let mut closing = vec![Vec::new(); self.n];
        for (x, &(i, k, _, _)) in self.keys.iter().enumerate() {
            closing[i.max(k)].push(x);
        }
        let mut map = vec![None; self.n];
        let mut used = vec![false; self.m];
        let mut best = 0;
        self.search(0, 0, &closing, &mut map, &mut used, &mut best);
        best
    }

    fn search(
        &self,
        i: usize,
        score: u32,
        closing: &[Vec<usize>],
        map: &mut [Option<usize>],
        used: &mut [bool],
        best: &mut u32,
    ) {
        if i == self.n {
            *best = (*best).max(score);
            return;
        }
        for j in (0..self.m).map(Some).chain([None]) {
            if j.is_some_and(|j| used[j]) {
                continue;
            }
            map[i] = j;
            if let Some(j) = j {
                used[j] = true;
            }
            let gained = self.unary_score(i, map)
                + closing[i]
                    .iter()
                    .map(|&x| self.key_score(x, map))
                    .sum::<u32>();
            self.search(i + 1, score + gained, closing, map, used, best);
            if let Some(j) = j {
                used[j] = false;
            }
        }
        map[i] = None;
    }
}

/// Best matched count by hill climbing from the concept seed plus
/// `restarts - 1` random mappings drawn from `seed`.
pub fn match_sets(a: &TripleSet, b: &TripleSet, restarts: usize, seed: u64) -> SmatchResult {
    let p = Problem::new(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0;
    for r in 0..restarts.max(1) {
        let mut map = if r == 0 {
            p.concept_seed(a, b)
        } else {
            p.random_seed(&mut rng)
        };
        best = best.max(p.climb(&mut map));
        if best as usize == a.len().min(b.len()) {
            break;
        }
    }
    SmatchResult {
        matched: best as usize,
        total_a: a.len(),
        total_b: b.len(),
    }
}

/// Exhaustive search over all partial injective mappings.
pub fn match_sets_exact(a: &TripleSet, b: &TripleSet) -> Result<SmatchResult, SmatchError> {
    if a.concepts.len() > EXACT_LIMIT || b.concepts.len() > EXACT_LIMIT {
        return Err(SmatchError::TooLarge {
            a: a.concepts.len(),
            b: b.concepts.len(),
        });
    }
    Ok(SmatchResult {
        matched: Problem::new(a, b).exact() as usize,
        total_a: a.len(),
        total_b: b.len(),
    })
}

/// Smatch of `a` (predicted) against `b` (gold).
pub fn smatch(a: &AmrGraph, b: &AmrGraph, restarts: usize, seed: u64) -> SmatchResult {
    match_sets(
        &TripleSet::of_graph(a),
        &TripleSet::of_graph(b),
        restarts,
        seed,
    )
}

pub fn smatch_exact(a: &AmrGraph, b: &AmrGraph) -> Result<SmatchResult, SmatchError> {
    match_sets_exact(&TripleSet::of_graph(a), &TripleSet::of_graph(b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Smatch,
    Unlabeled,
    NoWsd,
    Concepts,
    NamedEntities,
    Wikification,
    Negations,
    Reentrancy,
    Srl,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::Smatch,
        Metric::Unlabeled,
        Metric::NoWsd,
        Metric::Concepts,
        Metric::NamedEntities,
        Metric::Wikification,
        Metric::Negations,
        Metric::Reentrancy,
        Metric::Srl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Smatch => "Smatch",
            Metric::Unlabeled => "Unlabeled",
            Metric::NoWsd => "No WSD",
            Metric::Concepts => "Concepts",
            Metric::NamedEntities => "Named Ent.",
            Metric::Wikification => "Wikification",
            Metric::Negations => "Negations",
            Metric::Reentrancy => "Reentrancy",
            Metric::Srl => "SRL",
        }
    }

    /// Parses a metric name, ignoring case, spaces and dots.
    pub fn from_name(s: &str) -> Option<Self> {
        let key = |s: &str| {
            s.chars()
                .filter(|c| c.is_alphanumeric())
                .collect::<String>()
                .to_lowercase()
        };
        let k = key(s);
        Metric::ALL
            .into_iter()
            .find(|m| key(m.name()) == k || (k == "namedentities" && *m == Metric::NamedEntities))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn is_srl(label: &str) -> bool {
    label
        .strip_prefix(":ARG")
        .is_some_and(|rest| rest.starts_with(|c: char| c.is_ascii_digit()))
}

/// Overlap of two multisets given as sorted-insensitive lists.
fn multiset_overlap(a: Vec<String>, b: Vec<String>) -> SmatchResult {
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for x in &b {
        *counts.entry(x).or_default() += 1;
    }
    let mut matched = 0;
    for x in &a {
        if let Some(c) = counts.get_mut(x.as_str()) {
            if *c > 0 {
                *c -= 1;
                matched += 1;
            }
        }
    }
    SmatchResult {
        matched,
        total_a: a.len(),
        total_b: b.len(),
    }
}

fn concepts_of(g: &AmrGraph) -> Vec<String> {
    g.nodes()
        .iter()
        .filter(|n| n.is_variable())
        .map(|n| n.label.clone())
        .collect()
}

fn wiki_values(g: &AmrGraph) -> Vec<String> {
    g.edges()
        .iter()
        .filter(|e| e.label == ":wiki")
        .map(|e| g.node(e.target).label.clone())
        .collect()
}

fn negated_concepts(g: &AmrGraph) -> Vec<String> {
    g.edges()
        .iter()
        .filter(|e| {
            e.label == ":polarity"
                && g.node(e.target).is_constant()
                && g.node(e.target).label == "-"
        })
        .map(|e| g.node(e.source).label.clone())
        .collect()
}

/// Triples a mapped metric compares, taken from a normalized graph.
fn metric_triples(metric: Metric, g: &AmrGraph) -> TripleSet {
    let same = |l: &str| l.to_string();
    match metric {
        Metric::Smatch => TripleSet::select(g, |_| true, |_| true, true, same, same),
        Metric::Unlabeled => {
            TripleSet::select(g, |_| true, |_| true, true, |_| UNLABELED.to_string(), same)
        }
        Metric::NoWsd => TripleSet::select(
            g,
            |_| true,
            |_| true,
            true,
            same,
            |c| strip_sense(c).to_string(),
        ),
        Metric::NamedEntities => {
            let mut keep = vec![false; g.len()];
            for e in g.edges().iter().filter(|e| e.label == ":name") {
                keep[e.source] = true;
                keep[e.target] = true;
            }
            let name_node = |e: &Edge| {
                e.label == ":name"
                    || g.edges()
                        .iter()
                        .any(|n| n.label == ":name" && n.target == e.source)
            };
            TripleSet::select(g, |n| keep[n], name_node, false, same, same)
        }
        Metric::Reentrancy => {
            let reentrant = g.reentrant_nodes();
            let mut keep = vec![false; g.len()];
            for e in g.edges().iter().filter(|e| reentrant.contains(&e.target)) {
                keep[e.source] = true;
                keep[e.target] = true;
            }
            TripleSet::select(
                g,
                |n| keep[n],
                |e| reentrant.contains(&e.target),
                false,
                same,
                same,
            )
        }
        Metric::Srl => {
            let mut keep = vec![false; g.len()];
            for e in g.edges().iter().filter(|e| is_srl(&e.label)) {
                keep[e.source] = true;
                keep[e.target] = true;
            }
            TripleSet::select(g, |n| keep[n], |e| is_srl(&e.label), false, same, same)
        }
        Metric::Concepts | Metric::Wikification | Metric::Negations => {
            unreachable!("not mapping based")
        }
    }
}

/// One metric for a predicted/gold pair.
pub fn metric_score(
    metric: Metric,
    pred: &AmrGraph,
    gold: &AmrGraph,
    restarts: usize,
    seed: u64,
) -> SmatchResult {
    let (a, b) = (
        pred.normalize_inverse_edges(),
        gold.normalize_inverse_edges(),
    );
    match metric {
        Metric::Concepts => multiset_overlap(concepts_of(&a), concepts_of(&b)),
        Metric::Wikification => multiset_overlap(wiki_values(&a), wiki_values(&b)),
        Metric::Negations => multiset_overlap(negated_concepts(&a), negated_concepts(&b)),
        m => match_sets(
            &metric_triples(m, &a),
            &metric_triples(m, &b),
            restarts,
            seed,
        ),
    }
}

/// Every metric for one pair.
pub fn fine_grained(
    pred: &AmrGraph,
    gold: &AmrGraph,
    restarts: usize,
    seed: u64,
) -> BTreeMap<Metric, SmatchResult> {
    Metric::ALL
        .into_iter()
        .map(|m| (m, metric_score(m, pred, gold, restarts, seed)))
        .collect()
}

/// Micro-averaged scores over a corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusReport {
    pub scores: BTreeMap<Metric, SmatchResult>,
    pub sentences: usize,
    /// Gold ids without a prediction; scored as empty predictions.
    pub missing_predictions: Vec<String>,
    /// Predicted ids absent from the gold corpus; ignored.
    pub unknown_predictions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub metric: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn pct(x: f64) -> f64 {
    (x * 1000.0).round() / 10.0
}

impl CorpusReport {
    pub fn lines(&self) -> Vec<MetricLine> {
        self.scores
            .iter()
            .map(|(m, r)| MetricLine {
                metric: m.name().to_string(),
                precision: pct(r.precision()),
                recall: pct(r.recall()),
                f1: pct(r.f1()),
            })
            .collect()
    }

    /// Aligned table of percentages with one decimal.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<14}{:>8}{:>8}{:>8}", "Metric", "P", "R", "F1").unwrap();
        for l in self.lines() {
            writeln!(
                s,
                "{:<14}{:>8.1}{:>8.1}{:>8.1}",
                l.metric, l.precision, l.recall, l.f1
            )
            .unwrap();
        }
        for id in &self.missing_predictions {
            writeln!(s, "missing prediction: {id}").unwrap();
        }
        for id in &self.unknown_predictions {
            writeln!(s, "prediction without gold: {id}").unwrap();
        }
        s
    }

    pub fn write_jsonl(&self, out: &mut impl Write) -> io::Result<()> {
        for l in self.lines() {
            serde_json::to_writer(&mut *out, &l)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Scores predictions against gold graphs matched by id. Pair `i` in gold
/// order uses seed `seed + i`, so results do not depend on scheduling.
pub fn corpus_score(
    pred: &[(String, AmrGraph)],
    gold: &[(String, AmrGraph)],
    metrics: &[Metric],
    restarts: usize,
    seed: u64,
) -> CorpusReport {
    let by_id: HashMap<&str, &AmrGraph> = pred.iter().map(|(id, g)| (id.as_str(), g)).collect();
    let gold_ids: HashMap<&str, ()> = gold.iter().map(|(id, _)| (id.as_str(), ())).collect();
    let mut report = CorpusReport {
        sentences: gold.len(),
        ..Default::default()
    };
    report.unknown_predictions = pred
        .iter()
        .filter(|(id, _)| !gold_ids.contains_key(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    let per_pair: Vec<Vec<SmatchResult>> = gold
        .par_iter()
        .enumerate()
        .map(|(i, (id, g))| {
            let s = seed.wrapping_add(i as u64);
            match by_id.get(id.as_str()) {
                Some(p) => metrics
                    .iter()
                    .map(|&m| metric_score(m, p, g, restarts, s))
                    .collect(),
                None => {
                    let empty = AmrGraph::empty_amr();
                    metrics
                        .iter()
                        .map(|&m| SmatchResult {
                            matched: 0,
                            total_a: 0,
                            total_b: metric_score(m, &empty, g, 1, s).total_b,
                        })
                        .collect()
                }
            }
        })
        .collect();
    report.missing_predictions = gold
        .iter()
        .filter(|(id, _)| !by_id.contains_key(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    for &m in metrics {
        report.scores.insert(m, SmatchResult::default());
    }
    for row in per_pair {
        for (&m, r) in metrics.iter().zip(row) {
            *report.scores.get_mut(&m).unwrap() += r;
        }
    }
    report
}
