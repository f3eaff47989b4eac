//! Dataset ingestion: AMR banks, CoNLL-U annotations and JAMR alignments.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{AmrGraph, NodeId};
use crate::penman::parse_penman;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("block {block} (line {line}): {message}")]
    Block {
        block: usize,
        line: usize,
        message: String,
    },
    #[error("line {line}: expected 10 tab-separated columns, found {found}")]
    Columns { line: usize, found: usize },
    #[error("line {line}: {message}")]
    Conllu { line: usize, message: String },
    #[error("sentence `{id}`: dependency structure is not a tree ({reason})")]
    NotATree { id: String, reason: String },
    #[error("sentence `{id}` is missing from the {missing_from}")]
    MissingId {
        id: String,
        missing_from: &'static str,
    },
    #[error("sentence `{id}`: AMR bank has {amr} tokens but annotations have {conllu}")]
    TokenCount {
        id: String,
        amr: usize,
        conllu: usize,
    },
    #[error("sentence `{id}`: alignment node path `{path}` does not exist")]
    BadNodePath { id: String, path: String },
    #[error("sentence `{id}`: malformed alignment `{item}`")]
    BadAlignment { id: String, item: String },
    #[error("sentence `{id}`: aligned token {token} is out of range ({len} tokens)")]
    TokenOutOfRange {
        id: String,
        token: usize,
        len: usize,
    },
    #[error("archive line {line}: {message}")]
    Archive { line: usize, message: String },
}

/// A list of errors gathered while ingesting a whole corpus.
#[derive(Debug, Error)]
pub struct IngestErrors(pub Vec<CorpusError>);

impl fmt::Display for IngestErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} ingest error(s):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

/// Collapsed named-entity classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NerTag {
    O,
    Per,
    Org,
    Loc,
    Misc,
}

impl NerTag {
    pub const ALL: [NerTag; 5] = [
        NerTag::O,
        NerTag::Per,
        NerTag::Org,
        NerTag::Loc,
        NerTag::Misc,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NerTag::O => "O",
            NerTag::Per => "PER",
            NerTag::Org => "ORG",
            NerTag::Loc => "LOC",
            NerTag::Misc => "MISC",
        }
    }
}

/// Maps fine-grained NE tags (CoreNLP, CoNLL, OntoNotes) onto [`NerTag`].
/// Unknown non-`O` tags become `MISC`.
#[derive(Clone, Debug)]
pub struct NerMap {
    table: HashMap<String, NerTag>,
}

impl Default for NerMap {
    fn default() -> Self {
        use NerTag::*;
        let entries = [
            ("O", O),
            ("PER", Per),
            ("PERSON", Per),
            ("ORG", Org),
            ("ORGANIZATION", Org),
            ("LOC", Loc),
            ("LOCATION", Loc),
            ("CITY", Loc),
            ("COUNTRY", Loc),
            ("STATE_OR_PROVINCE", Loc),
            ("GPE", Loc),
            ("MISC", Misc),
            ("NATIONALITY", Misc),
            ("NORP", Misc),
            ("RELIGION", Misc),
            ("DATE", O),
            ("TIME", O),
            ("DURATION", O),
            ("SET", O),
            ("NUMBER", O),
            ("ORDINAL", O),
            ("MONEY", O),
            ("PERCENT", O),
        ];
        NerMap::from_pairs(entries.iter().map(|(k, v)| (k.to_string(), *v)))
    }
}

impl NerMap {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, NerTag)>) -> Self {
        NerMap {
            table: pairs.into_iter().collect(),
        }
    }

    pub fn collapse(&self, tag: &str) -> NerTag {
        let bare = tag
            .strip_prefix("B-")
            .or_else(|| tag.strip_prefix("I-"))
            .or_else(|| tag.strip_prefix("E-"))
            .or_else(|| tag.strip_prefix("S-"))
            .unwrap_or(tag)
            .to_ascii_uppercase();
        match self.table.get(&bare) {
            Some(t) => *t,
            None if bare.is_empty() || bare == "_" => NerTag::O,
            None => NerTag::Misc,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub index: usize,
    pub surface: String,
    pub lemma: String,
    /// Universal POS tag (falls back to the language-specific tag).
    pub pos: String,
    pub ner: NerTag,
    /// `None` for the root of the dependency tree.
    pub dep_head: Option<usize>,
    pub dep_label: String,
}

impl Token {
    /// A token carrying only its surface form; lemma equals the lowercased surface.
    pub fn bare(index: usize, surface: &str) -> Self {
        Token {
            index,
            surface: surface.to_string(),
            lemma: surface.to_lowercase(),
            pos: "X".to_string(),
            ner: NerTag::O,
            dep_head: None,
            dep_label: "dep".to_string(),
        }
    }

    pub fn is_verb(&self) -> bool {
        self.pos == "VERB" || self.pos.starts_with("VB")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSentence {
    pub id: String,
    pub tokens: Vec<Token>,
}

impl TokenizedSentence {
    /// Whitespace tokenization without annotations.
    pub fn from_whitespace(id: &str, text: &str) -> Self {
        TokenizedSentence {
            id: id.to_string(),
            tokens: text
                .split_whitespace()
                .enumerate()
                .map(|(i, w)| Token::bare(i, w))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Partial map from graph nodes to token positions; each node aligns to at
/// most one token.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pairs: BTreeMap<NodeId, usize>,
    /// Full token span of multi-token JAMR alignments, kept for reference.
    #[serde(default)]
    spans: BTreeMap<NodeId, (usize, usize)>,
}

impl Alignment {
    pub fn new() -> Self {
        Alignment::default()
    }

    /// Aligns `node` to `token` unless it is already aligned; returns whether
    /// the pair was added.
    pub fn insert(&mut self, node: NodeId, token: usize) -> bool {
        if self.pairs.contains_key(&node) {
            return false;
        }
        self.pairs.insert(node, token);
        true
    }

    pub fn remove(&mut self, node: NodeId) {
        self.pairs.remove(&node);
        self.spans.remove(&node);
    }

    pub fn token_of(&self, node: NodeId) -> Option<usize> {
        self.pairs.get(&node).copied()
    }

    /// Nodes aligned to `token`, in node-id order.
    pub fn nodes_of(&self, token: usize) -> Vec<NodeId> {
        self.pairs
            .iter()
            .filter(|(_, &t)| t == token)
            .map(|(&n, _)| n)
            .collect()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (NodeId, usize)> + '_ {
        self.pairs.iter().map(|(&n, &t)| (n, t))
    }

    pub fn span_of(&self, node: NodeId) -> Option<(usize, usize)> {
        self.spans.get(&node).copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// When one token aligns to several disconnected fragments, keeps the
    /// fragment whose shallowest node is closest to the root. Returns the
    /// number of node alignments dropped.
    pub fn prune_disjoint_fragments(&mut self, graph: &AmrGraph) -> usize {
        let depths = graph.depths();
        let tokens: HashSet<usize> = self.pairs.values().copied().collect();
        let mut dropped = 0;
        let mut tokens: Vec<usize> = tokens.into_iter().collect();
        tokens.sort_unstable();
        for token in tokens {
            let nodes = self.nodes_of(token);
            if nodes.len() < 2 {
                continue;
            }
            let components = connected_components(graph, &nodes);
            if components.len() < 2 {
                continue;
            }
            let best = components
                .iter()
                .enumerate()
                .min_by_key(|(i, c)| (c.iter().map(|&n| depths[n]).min().unwrap(), *i))
                .map(|(i, _)| i)
                .unwrap();
            for (i, comp) in components.iter().enumerate() {
                if i != best {
                    warn!("token {token} aligns to disjoint fragments; dropping nodes {comp:?}");
                    for &n in comp {
                        self.remove(n);
                        dropped += 1;
                    }
                }
            }
        }
        dropped
    }
}

/// Components of the subgraph induced by `nodes`, ignoring edge direction.
fn connected_components(graph: &AmrGraph, nodes: &[NodeId]) -> Vec<Vec<NodeId>> {
    let set: HashSet<NodeId> = nodes.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for &start in nodes {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = vec![start];
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            for e in graph.edges() {
                let other = if e.source == n {
                    e.target
                } else if e.target == n {
                    e.source
                } else {
                    continue;
                };
                if set.contains(&other) && seen.insert(other) {
                    comp.push(other);
                    stack.push(other);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub sentence: TokenizedSentence,
    pub graph: AmrGraph,
    pub alignment: Alignment,
}

impl AnnotatedExample {
    pub fn id(&self) -> &str {
        &self.sentence.id
    }
}

/// One block of an AMR bank file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmrRecord {
    pub id: String,
    pub sentence: String,
    pub tokens: Option<Vec<String>>,
    /// Raw JAMR alignment string (`start-end|path+path ...`).
    pub alignments: Option<String>,
    pub graph: AmrGraph,
}

#[derive(Debug, Default)]
pub struct AmrBank {
    pub records: Vec<AmrRecord>,
    pub errors: Vec<CorpusError>,
}

pub fn load_amr_file(path: impl AsRef<Path>) -> Result<AmrBank, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_amr_bank(&text))
}

/// Parses blank-line separated blocks of `# ::key value` metadata followed by
/// PENMAN. Malformed blocks are reported and skipped.
pub fn parse_amr_bank(text: &str) -> AmrBank {
    let mut bank = AmrBank::default();
    let mut block: Vec<(usize, &str)> = Vec::new();
    let mut index = 0;
    let lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    for (lineno, line) in lines.chain(std::iter::once((0, ""))) {
        if !line.trim().is_empty() {
            block.push((lineno, line));
            continue;
        }
        if block.is_empty() {
            continue;
        }
        if let Some(result) = parse_block(index, &block) {
            match result {
                Ok(rec) => bank.records.push(rec),
                Err(e) => bank.errors.push(e),
            }
            index += 1;
        }
        block.clear();
    }
    bank
}

fn parse_block(index: usize, lines: &[(usize, &str)]) -> Option<Result<AmrRecord, CorpusError>> {
    let mut meta: HashMap<String, String> = HashMap::new();
    let mut body = String::new();
    let mut body_lines = Vec::new();
    for &(lineno, line) in lines {
        let trimmed = line.trim_start();
        if body.is_empty() && trimmed.starts_with('#') {
            for field in trimmed.trim_start_matches('#').split(" ::").skip(1) {
                let field = field.trim();
                let (key, value) = field.split_once(char::is_whitespace).unwrap_or((field, ""));
                meta.insert(key.to_string(), value.trim().to_string());
            }
            // `# ::id x` starts with `::` rather than ` ::`
            if let Some(rest) = trimmed
                .trim_start_matches('#')
                .trim_start()
                .strip_prefix("::")
            {
                let first = rest.split(" ::").next().unwrap().trim();
                let (key, value) = first.split_once(char::is_whitespace).unwrap_or((first, ""));
                meta.insert(key.to_string(), value.trim().to_string());
            }
            continue;
        }
        body_lines.push((lineno, body.len()));
        body.push_str(line);
        body.push('\n');
    }
    if body.trim().is_empty() {
        // metadata-only block, e.g. a file header
        return None;
    }
    let first_line = lines[0].0;
    let graph = match parse_penman(&body) {
        Ok(g) => g,
        Err(e) => {
            let offset = e.offset().unwrap_or(0);
            let line = body_lines
                .iter()
                .rev()
                .find(|(_, start)| *start <= offset)
                .map(|(l, _)| *l)
                .unwrap_or(first_line);
            return Some(Err(CorpusError::Block {
                block: index,
                line,
                message: e.to_string(),
            }));
        }
    };
    let id = meta
        .remove("id")
        .unwrap_or_else(|| format!("block-{index}"));
    let sentence = meta.remove("snt").unwrap_or_default();
    let tokens = meta
        .remove("tok")
        .map(|t| t.split_whitespace().map(str::to_string).collect());
    let alignments = meta.remove("alignments").map(|a| {
        // JAMR appends `::annotator ...` on the same line
        a.split(" ::").next().unwrap().trim().to_string()
    });
    Some(Ok(AmrRecord {
        id,
        sentence,
        tokens,
        alignments,
        graph,
    }))
}

/// Writes records in AMR bank format with `::id` and `::snt` headers.
pub fn write_amr_bank<'a>(
    out: &mut impl io::Write,
    records: impl IntoIterator<Item = (&'a str, &'a str, &'a AmrGraph)>,
) -> io::Result<()> {
    for (id, snt, graph) in records {
        writeln!(out, "# ::id {id}")?;
        writeln!(out, "# ::snt {snt}")?;
        let text = crate::penman::serialize_penman(graph)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        writeln!(out, "{text}")?;
        writeln!(out)?;
    }
    Ok(())
}

pub fn load_conllu_annotations(
    path: impl AsRef<Path>,
) -> Result<Vec<TokenizedSentence>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_conllu(&text, &NerMap::default())
}

/// Reads CoNLL-U. Sentence ids come from `# sent_id`; NE tags from the
/// `NER=` key of the MISC column. Multiword ranges and empty nodes are skipped.
pub fn parse_conllu(text: &str, ner_map: &NerMap) -> Result<Vec<TokenizedSentence>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut id: Option<String> = None;
    let mut tokens: Vec<Token> = Vec::new();
    let mut heads: Vec<usize> = Vec::new();
    let mut start_line = 1;
    let mut finish = |id: &mut Option<String>,
                      tokens: &mut Vec<Token>,
                      heads: &mut Vec<usize>,
                      line: usize|
     -> Result<(), CorpusError> {
        if tokens.is_empty() {
            *id = None;
            return Ok(());
        }
        let sid = id
            .take()
            .unwrap_or_else(|| format!("sent-{}", out.len() + 1));
        if !seen.insert(sid.clone()) {
            return Err(CorpusError::Conllu {
                line,
                message: format!("duplicate sentence id `{sid}`"),
            });
        }
        for (tok, &head) in tokens.iter_mut().zip(heads.iter()) {
            if head > 0 && head - 1 >= heads.len() {
                return Err(CorpusError::NotATree {
                    id: sid,
                    reason: format!("head {head} out of range"),
                });
            }
            tok.dep_head = head.checked_sub(1);
        }
        check_tree(&sid, tokens)?;
        out.push(TokenizedSentence {
            id: sid,
            tokens: std::mem::take(tokens),
        });
        heads.clear();
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut id, &mut tokens, &mut heads, start_line)?;
            start_line = lineno + 1;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(value) = comment.trim().strip_prefix("sent_id") {
                id = Some(value.trim_start_matches([' ', '=']).trim().to_string());
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(CorpusError::Columns {
                line: lineno,
                found: cols.len(),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let index: usize = cols[0].parse().map_err(|_| CorpusError::Conllu {
            line: lineno,
            message: format!("bad token id `{}`", cols[0]),
        })?;
        if index != tokens.len() + 1 {
            return Err(CorpusError::Conllu {
                line: lineno,
                message: format!("token id {index} is not contiguous"),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| CorpusError::Conllu {
            line: lineno,
            message: format!("bad head `{}`", cols[6]),
        })?;
        let ner = cols[9]
            .split('|')
            .find_map(|kv| kv.strip_prefix("NER="))
            .map(|t| ner_map.collapse(t))
            .unwrap_or(NerTag::O);
        let pos = if cols[3] != "_" { cols[3] } else { cols[4] };
        let lemma = if cols[2] == "_" {
            cols[1].to_lowercase()
        } else {
            cols[2].to_string()
        };
        tokens.push(Token {
            index: index - 1,
            surface: cols[1].to_string(),
            lemma,
            pos: pos.to_string(),
            ner,
            dep_head: None,
            dep_label: cols[7].to_string(),
        });
        heads.push(head);
    }
    finish(&mut id, &mut tokens, &mut heads, start_line)?;
    Ok(out)
}

fn check_tree(id: &str, tokens: &[Token]) -> Result<(), CorpusError> {
    let roots = tokens.iter().filter(|t| t.dep_head.is_none()).count();
    if roots != 1 {
        return Err(CorpusError::NotATree {
            id: id.to_string(),
            reason: format!("{roots} roots"),
        });
    }
    for t in tokens {
        let mut current = t.index;
        let mut steps = 0;
        while let Some(h) = tokens[current].dep_head {
            current = h;
            steps += 1;
            if steps > tokens.len() {
                return Err(CorpusError::NotATree {
                    id: id.to_string(),
                    reason: format!("cycle through token {}", t.index + 1),
                });
            }
        }
    }
    Ok(())
}

/// Resolves a JAMR node path (`0.1.2`): `0` is the root, each further index
/// selects a role value of the node in written order.
pub fn resolve_node_path(graph: &AmrGraph, path: &str) -> Option<NodeId> {
    let mut parts = path.split('.');
    if parts.next()? != "0" {
        return None;
    }
    let mut node = graph.root();
    for part in parts {
        let k: usize = part.parse().ok()?;
        node = graph.out_edges(node).nth(k)?.target;
    }
    Some(node)
}

/// First JAMR path of every node reachable from the root.
pub fn node_paths(graph: &AmrGraph) -> BTreeMap<NodeId, String> {
    let mut paths = BTreeMap::new();
    let mut stack = vec![(graph.root(), "0".to_string())];
    paths.insert(graph.root(), "0".to_string());
    // depth-first in written order so that the first path found is the canonical one
    while let Some((node, path)) = stack.pop() {
        let children: Vec<_> = graph.out_edges(node).map(|e| e.target).collect();
        for (k, &child) in children.iter().enumerate().rev() {
            if let std::collections::btree_map::Entry::Vacant(slot) = paths.entry(child) {
                let p = format!("{path}.{k}");
                slot.insert(p.clone());
                stack.push((child, p));
            }
        }
    }
    paths
}

/// Parses a JAMR alignment string against `graph`. Each node aligns to the
/// first token of its span; a node listed twice keeps its first alignment.
pub fn parse_jamr_alignment(
    id: &str,
    text: &str,
    graph: &AmrGraph,
    n_tokens: usize,
) -> Result<Alignment, CorpusError> {
    let mut alignment = Alignment::new();
    for item in text.split_whitespace() {
        let bad = || CorpusError::BadAlignment {
            id: id.to_string(),
            item: item.to_string(),
        };
        let (span, paths) = item.split_once('|').ok_or_else(bad)?;
        let (start, end) = span.split_once('-').ok_or_else(bad)?;
        let start: usize = start.parse().map_err(|_| bad())?;
        let end: usize = end.parse().map_err(|_| bad())?;
        if end <= start {
            return Err(bad());
        }
        if end > n_tokens {
            return Err(CorpusError::TokenOutOfRange {
                id: id.to_string(),
                token: end - 1,
                len: n_tokens,
            });
        }
        for path in paths.split('+') {
            let node = resolve_node_path(graph, path).ok_or_else(|| CorpusError::BadNodePath {
                id: id.to_string(),
                path: path.to_string(),
            })?;
            if alignment.insert(node, start) {
                if end - start > 1 {
                    alignment.spans.insert(node, (start, end));
                }
            } else {
                warn!("{id}: node path {path} aligned twice; keeping the first token");
            }
        }
    }
    Ok(alignment)
}

/// Renders an alignment in JAMR span format, one span per token.
pub fn alignment_to_jamr(alignment: &Alignment, graph: &AmrGraph) -> String {
    let paths = node_paths(graph);
    let mut by_token: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (node, token) in alignment.pairs() {
        if let Some(p) = paths.get(&node) {
            by_token.entry(token).or_default().push(p);
        }
    }
    by_token
        .into_iter()
        .map(|(t, ps)| format!("{}-{}|{}", t, t + 1, ps.join("+")))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Where alignments come from when zipping a corpus.
#[derive(Clone, Copy, Debug)]
pub enum AlignmentSource<'a> {
    /// `::alignments` lines of the AMR bank; records without one fall back to
    /// the heuristic aligner.
    Jamr,
    /// JAMR strings keyed by sentence id.
    External(&'a HashMap<String, String>),
    /// Always use the heuristic aligner.
    Heuristic,
}

/// Joins AMR records with their annotations and alignments. Output follows the
/// order of `records`.
pub fn zip_examples(
    records: &[AmrRecord],
    annotations: &[TokenizedSentence],
    source: AlignmentSource<'_>,
) -> Result<Vec<AnnotatedExample>, IngestErrors> {
    let by_id: HashMap<&str, &TokenizedSentence> =
        annotations.iter().map(|s| (s.id.as_str(), s)).collect();
    let amr_ids: HashSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let mut errors = Vec::new();
    let mut out = Vec::new();
    for rec in records {
        let Some(sentence) = by_id.get(rec.id.as_str()) else {
            errors.push(CorpusError::MissingId {
                id: rec.id.clone(),
                missing_from: "annotations",
            });
            continue;
        };
        if let Some(toks) = &rec.tokens {
            if toks.len() != sentence.len() {
                errors.push(CorpusError::TokenCount {
                    id: rec.id.clone(),
                    amr: toks.len(),
                    conllu: sentence.len(),
                });
                continue;
            }
        }
        let jamr = match source {
            AlignmentSource::Jamr => rec.alignments.as_deref(),
            AlignmentSource::External(map) => match map.get(&rec.id) {
                Some(a) => Some(a.as_str()),
                None => {
                    errors.push(CorpusError::MissingId {
                        id: rec.id.clone(),
                        missing_from: "alignments",
                    });
                    continue;
                }
            },
            AlignmentSource::Heuristic => None,
        };
        let mut alignment = match jamr {
            Some(text) => match parse_jamr_alignment(&rec.id, text, &rec.graph, sentence.len()) {
                Ok(a) => a,
                Err(e) => {
                    errors.push(e);
                    continue;
                }
            },
            None => {
                if matches!(source, AlignmentSource::Jamr) {
                    info!("{}: no ::alignments, using the heuristic aligner", rec.id);
                }
                crate::aligner::align(sentence, &rec.graph)
            }
        };
        alignment.prune_disjoint_fragments(&rec.graph);
        out.push(AnnotatedExample {
            sentence: (*sentence).clone(),
            graph: rec.graph.clone(),
            alignment,
        });
    }
    for s in annotations {
        if !amr_ids.contains(s.id.as_str()) {
            errors.push(CorpusError::MissingId {
                id: s.id.clone(),
                missing_from: "AMR bank",
            });
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(IngestErrors(errors))
    }
}

/// Archive of annotated examples, one JSON object per line.
pub fn write_archive(out: &mut impl io::Write, examples: &[AnnotatedExample]) -> io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut *out, ex)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_archive(text: &str) -> Result<Vec<AnnotatedExample>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let ex: AnnotatedExample =
                serde_json::from_str(l).map_err(|e| CorpusError::Archive {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            ex.graph.validate().map_err(|e| CorpusError::Archive {
                line: i + 1,
                message: e.to_string(),
            })?;
            Ok(ex)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOG_WANTS_BLOCK: &str = "# ::id dog-wants\n# ::snt The dog wants to eat\n# ::tok The dog wants to eat\n# ::alignments 1-2|0.0 2-3|0 4-5|0.1 ::annotator hand\n(w / want-01\n    :ARG0 (d / dog)\n    :ARG1 (e / eat-01 :ARG0 d))\n";

    const DOG_WANTS_CONLLU: &str = "# sent_id = dog-wants\n# text = The dog wants to eat\n1\tThe\tthe\tDET\tDT\t_\t2\tdet\t_\t_\n2\tdog\tdog\tNOUN\tNN\t_\t3\tnsubj\t_\t_\n3\twants\twant\tVERB\tVBZ\t_\t0\troot\t_\t_\n4\tto\tto\tPART\tTO\t_\t5\tmark\t_\t_\n5\teat\teat\tVERB\tVB\t_\t3\txcomp\t_\tNER=O\n";

    #[test]
    fn reads_dog_wants_block() {
        let bank = parse_amr_bank(DOG_WANTS_BLOCK);
        assert!(bank.errors.is_empty());
        assert_eq!(bank.records.len(), 1);
        let rec = &bank.records[0];
        assert_eq!(rec.id, "dog-wants");
        assert_eq!(rec.sentence, "The dog wants to eat");
        assert_eq!(rec.tokens.as_ref().unwrap().len(), 5);
        assert_eq!(rec.alignments.as_deref(), Some("1-2|0.0 2-3|0 4-5|0.1"));
        assert_eq!(rec.graph.len(), 3);
    }

    #[test]
    fn empty_file_has_no_records() {
        let bank = parse_amr_bank("");
        assert!(bank.records.is_empty() && bank.errors.is_empty());
    }

    #[test]
    fn malformed_block_is_reported_and_skipped() {
        let bad = "# ::id bad\n# ::snt oops\n(a / alpha\n    :ARG0 (b / beta)\n\n";
        let text = format!("{DOG_WANTS_BLOCK}\n{bad}");
        let bank = parse_amr_bank(&text);
        assert_eq!(bank.records.len(), 1);
        assert_eq!(bank.errors.len(), 1);
        match &bank.errors[0] {
            CorpusError::Block { block, line, .. } => {
                assert_eq!(*block, 1);
                assert_eq!(*line, 11);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reads_conllu_tree() {
        let sents = parse_conllu(DOG_WANTS_CONLLU, &NerMap::default()).unwrap();
        assert_eq!(sents.len(), 1);
        let s = &sents[0];
        assert_eq!(s.id, "dog-wants");
        assert_eq!(s.len(), 5);
        assert_eq!(s.tokens[2].surface, "wants");
        assert_eq!(s.tokens[2].dep_head, None);
        assert_eq!(s.tokens[2].lemma, "want");
        assert_eq!(s.tokens[1].dep_head, Some(2));
        assert_eq!(s.tokens[1].dep_label, "nsubj");
        assert_eq!(s.tokens[0].ner, NerTag::O);
    }

    #[test]
    fn single_token_sentence_is_root() {
        let text = "# sent_id = one\n1\tHi\thi\tINTJ\tUH\t_\t0\troot\t_\t_\n";
        let s = &parse_conllu(text, &NerMap::default()).unwrap()[0];
        assert_eq!(s.tokens[0].dep_head, None);
        assert_eq!(s.tokens[0].dep_label, "root");
    }

    #[test]
    fn ner_from_misc_column() {
        let text = "# sent_id = t\n1\tTrieste\tTrieste\tPROPN\tNNP\t_\t0\troot\t_\tNER=CITY|SpaceAfter=No\n";
        let s = &parse_conllu(text, &NerMap::default()).unwrap()[0];
        assert_eq!(s.tokens[0].ner, NerTag::Loc);
        let map = NerMap::default();
        assert_eq!(map.collapse("B-PER"), NerTag::Per);
        assert_eq!(map.collapse("DATE"), NerTag::O);
        assert_eq!(map.collapse("WEAPON"), NerTag::Misc);
    }

    #[test]
    fn conllu_errors() {
        let cols = "# sent_id = x\n1\tHi\thi\tINTJ\n";
        assert!(matches!(
            parse_conllu(cols, &NerMap::default()),
            Err(CorpusError::Columns { line: 2, found: 4 })
        ));
        let two_roots =
            "# sent_id = x\n1\ta\ta\tX\tX\t_\t0\troot\t_\t_\n2\tb\tb\tX\tX\t_\t0\troot\t_\t_\n";
        assert!(matches!(
            parse_conllu(two_roots, &NerMap::default()),
            Err(CorpusError::NotATree { .. })
        ));
        let cycle = "# sent_id = x\n1\ta\ta\tX\tX\t_\t2\tdep\t_\t_\n2\tb\tb\tX\tX\t_\t1\tdep\t_\t_\n3\tc\tc\tX\tX\t_\t0\troot\t_\t_\n";
        assert!(matches!(
            parse_conllu(cycle, &NerMap::default()),
            Err(CorpusError::NotATree { .. })
        ));
    }

    #[test]
    fn jamr_paths_resolve_in_written_order() {
        let g = parse_penman("(w / want-01 :ARG0 (d / dog) :ARG1 (e / eat-01 :ARG0 d))").unwrap();
        assert_eq!(resolve_node_path(&g, "0"), Some(0));
        assert_eq!(resolve_node_path(&g, "0.0"), g.find_variable("d"));
        assert_eq!(resolve_node_path(&g, "0.1"), g.find_variable("e"));
        assert_eq!(resolve_node_path(&g, "0.1.0"), g.find_variable("d"));
        assert_eq!(resolve_node_path(&g, "0.2"), None);
        assert_eq!(resolve_node_path(&g, "1"), None);
        let a = parse_jamr_alignment("dog-wants", "1-2|0.0 2-3|0 4-5|0.1", &g, 5).unwrap();
        assert_eq!(alignment_to_jamr(&a, &g), "1-2|0.0 2-3|0 4-5|0.1");
    }

    #[test]
    fn multi_token_span_aligns_first_token() {
        let g = parse_penman("(c / city :name (n / name :op1 \"New\" :op2 \"York\"))").unwrap();
        let a = parse_jamr_alignment("ny", "0-2|0+0.0", &g, 2).unwrap();
        assert_eq!(a.token_of(0), Some(0));
        assert_eq!(a.token_of(1), Some(0));
        assert_eq!(a.span_of(0), Some((0, 2)));
    }

    #[test]
    fn duplicate_node_keeps_first_token() {
        let g = parse_penman("(d / dog)").unwrap();
        let a = parse_jamr_alignment("x", "0-1|0 1-2|0", &g, 2).unwrap();
        assert_eq!(a.token_of(0), Some(0));
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn disjoint_fragments_keep_the_highest() {
        let g = parse_penman("(w / want-01 :ARG0 (d / dog :mod (b / big)) :ARG1 (e / eat-01))")
            .unwrap();
        let mut a = Alignment::new();
        let (d, b, e) = (1, 2, 3);
        a.insert(b, 0);
        a.insert(e, 0);
        a.insert(d, 1);
        assert_eq!(a.prune_disjoint_fragments(&g), 1);
        assert_eq!(a.token_of(e), Some(0));
        assert_eq!(a.token_of(b), None);
    }

    #[test]
    fn zip_dog_wants() {
        let bank = parse_amr_bank(DOG_WANTS_BLOCK);
        let sents = parse_conllu(DOG_WANTS_CONLLU, &NerMap::default()).unwrap();
        let examples = zip_examples(&bank.records, &sents, AlignmentSource::Jamr).unwrap();
        assert_eq!(examples.len(), 1);
        let ex = &examples[0];
        assert_eq!(ex.alignment.token_of(0), Some(2));
        assert_eq!(ex.alignment.len(), 3);
    }

    #[test]
    fn zip_reports_missing_annotation() {
        let bank = parse_amr_bank(DOG_WANTS_BLOCK);
        let err = zip_examples(&bank.records, &[], AlignmentSource::Jamr).unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert!(err.0[0].to_string().contains("dog-wants"));
    }

    #[test]
    fn zip_reports_bad_node_path() {
        let text = DOG_WANTS_BLOCK.replace("4-5|0.1", "4-5|0.7");
        let bank = parse_amr_bank(&text);
        let sents = parse_conllu(DOG_WANTS_CONLLU, &NerMap::default()).unwrap();
        let err = zip_examples(&bank.records, &sents, AlignmentSource::Jamr).unwrap_err();
        assert!(matches!(&err.0[0], CorpusError::BadNodePath { path, .. } if path == "0.7"));
    }

    #[test]
    fn zip_reports_token_count_mismatch() {
        let text = DOG_WANTS_BLOCK.replace(
            "# ::tok The dog wants to eat",
            "# ::tok The dog wants to eat .",
        );
        let bank = parse_amr_bank(&text);
        let sents = parse_conllu(DOG_WANTS_CONLLU, &NerMap::default()).unwrap();
        let err = zip_examples(&bank.records, &sents, AlignmentSource::Jamr).unwrap_err();
        assert!(matches!(
            err.0[0],
            CorpusError::TokenCount {
                amr: 6,
                conllu: 5,
                ..
            }
        ));
    }

    #[test]
    fn archive_round_trip() {
        let bank = parse_amr_bank(DOG_WANTS_BLOCK);
        let sents = parse_conllu(DOG_WANTS_CONLLU, &NerMap::default()).unwrap();
        let examples = zip_examples(&bank.records, &sents, AlignmentSource::Jamr).unwrap();
        let mut buf = Vec::new();
        write_archive(&mut buf, &examples).unwrap();
        let back = read_archive(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, examples);
    }
}
