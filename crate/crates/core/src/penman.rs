//! PENMAN notation reader and writer.
//!
//! The reader accepts one expression, `(var / concept :role value ...)`, where a
//! value is a nested node, a quoted string, or a bare symbol. Bare symbols that
//! name a variable defined anywhere in the expression become reentrant edges;
//! everything else is a constant. Inverse roles are stored as written.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::graph::{
    invert_label, looks_like_variable, needs_quoting, AmrGraph, GraphError, Node, NodeId, NodeKind,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PenmanError {
    #[error("empty PENMAN expression")]
    Empty,
    #[error("unbalanced parenthesis at byte {offset}")]
    Unbalanced { offset: usize },
    #[error("variable `{name}` defined twice (byte {offset})")]
    DuplicateVariable { name: String, offset: usize },
    #[error("relation `{token}` at byte {offset} is missing its `:` prefix")]
    MissingColon { token: String, offset: usize },
    #[error("variable `{name}` referenced at byte {offset} is never defined")]
    DanglingVariable { name: String, offset: usize },
    #[error("unterminated string starting at byte {offset}")]
    UnterminatedString { offset: usize },
    #[error("unexpected {found} at byte {offset}; expected {expected}")]
    Unexpected {
        found: String,
        expected: &'static str,
        offset: usize,
    },
    #[error("node {0} is unreachable from the root")]
    Unreachable(NodeId),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl PenmanError {
    /// Byte offset into the parsed text, when the error has one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            PenmanError::Unbalanced { offset }
            | PenmanError::DuplicateVariable { offset, .. }
            | PenmanError::MissingColon { offset, .. }
            | PenmanError::DanglingVariable { offset, .. }
            | PenmanError::UnterminatedString { offset }
            | PenmanError::Unexpected { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Open,
    Close,
    Slash,
    Role(String),
    Str(String),
    Sym(String),
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Open => "`(`".into(),
            Tok::Close => "`)`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Role(r) => format!("role `{r}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Sym(s) => format!("symbol `{s}`"),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, PenmanError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b if b.is_ascii_whitespace() => i += 1,
            b'(' => {
                out.push((Tok::Open, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::Close, i));
                i += 1;
            }
            b'/' => {
                out.push((Tok::Slash, i));
                i += 1;
            }
            b'"' => {
                let start = i;
                let mut value = String::new();
                i += 1;
                loop {
                    match text[i..].chars().next() {
                        None => return Err(PenmanError::UnterminatedString { offset: start }),
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            let escaped = text[i + 1..]
                                .chars()
                                .next()
                                .ok_or(PenmanError::UnterminatedString { offset: start })?;
                            value.push(escaped);
                            i += 1 + escaped.len_utf8();
                        }
                        Some(ch) => {
                            value.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                out.push((Tok::Str(value), start));
            }
            _ => {
                let start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && !matches!(bytes[i], b'(' | b')' | b'/' | b'"')
                {
                    i += 1;
                }
                let word = &text[start..i];
                if word.starts_with(':') {
                    out.push((Tok::Role(word.to_string()), start));
                } else {
                    out.push((Tok::Sym(word.to_string()), start));
                }
            }
        }
    }
    Ok(out)
}

struct Reader {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
    defined: HashSet<String>,
    graph: Option<AmrGraph>,
    /// edge index -> (variable name, offset) for references resolved after parsing
    pending: Vec<(usize, String, usize)>,
}

impl Reader {
    fn next_or(&mut self, open_offset: usize) -> Result<(Tok, usize), PenmanError> {
        let t = self
            .toks
            .get(self.pos)
            .cloned()
            .ok_or(PenmanError::Unbalanced {
                offset: open_offset,
            })?;
        self.pos += 1;
        Ok(t)
    }

    fn push_node(&mut self, node: Node, offset: usize) -> Result<NodeId, PenmanError> {
        match self.graph.as_mut() {
            None => {
                self.graph = Some(AmrGraph::new(node));
                Ok(0)
            }
            Some(g) => g.add_node(node).map_err(|e| match e {
                GraphError::DuplicateVariable(name) => {
                    PenmanError::DuplicateVariable { name, offset }
                }
                other => other.into(),
            }),
        }
    }

    fn graph(&mut self) -> &mut AmrGraph {
        self.graph.as_mut().expect("node pushed before edges")
    }

    /// Parses `( var / concept role-value* )`; the `(` has been consumed.
    fn node(&mut self, open: usize) -> Result<NodeId, PenmanError> {
        let (tok, offset) = self.next_or(open)?;
        let Tok::Sym(var) = tok else {
            return Err(unexpected(&tok, "a variable", offset));
        };
        let (tok, offset2) = self.next_or(open)?;
        if tok != Tok::Slash {
            return Err(unexpected(&tok, "`/`", offset2));
        }
        let (tok, offset3) = self.next_or(open)?;
        let concept = match tok {
            Tok::Sym(s) | Tok::Str(s) => s,
            other => return Err(unexpected(&other, "a concept", offset3)),
        };
        let id = self.push_node(Node::variable(var, concept), offset)?;
        loop {
            let (tok, offset) = self.next_or(open)?;
            match tok {
                Tok::Close => return Ok(id),
                Tok::Role(role) => self.value(id, role, open)?,
                Tok::Sym(s) | Tok::Str(s) => {
                    return Err(PenmanError::MissingColon { token: s, offset })
                }
                other => return Err(unexpected(&other, "a role or `)`", offset)),
            }
        }
    }

    fn value(&mut self, parent: NodeId, role: String, open: usize) -> Result<(), PenmanError> {
        let (tok, offset) = self.next_or(open)?;
        match tok {
            Tok::Open => {
                let child = self.node(offset)?;
                self.graph().add_edge(parent, child, role)?;
            }
            Tok::Str(s) => {
                let c = self.graph().add_constant(&s, true);
                self.graph().add_edge(parent, c, role)?;
            }
            Tok::Sym(s) if self.defined.contains(&s) => {
                // target fixed up once every variable has an id
                self.graph().add_edge(parent, parent, role)?;
                let index = self.graph().edges().len() - 1;
                self.pending.push((index, s, offset));
            }
            Tok::Sym(s) if looks_like_variable(&s) => {
                return Err(PenmanError::DanglingVariable { name: s, offset })
            }
            Tok::Sym(s) => {
                let c = self.graph().add_constant(&s, false);
                self.graph().add_edge(parent, c, role)?;
            }
            Tok::Close => {
                return Err(PenmanError::Unexpected {
                    found: "`)`".into(),
                    expected: "a value",
                    offset,
                })
            }
            other => return Err(unexpected(&other, "a value", offset)),
        }
        Ok(())
    }
}

fn unexpected(tok: &Tok, expected: &'static str, offset: usize) -> PenmanError {
    PenmanError::Unexpected {
        found: tok.describe(),
        expected,
        offset,
    }
}

/// Reads a single PENMAN expression. `# ::` metadata must already be stripped.
///
/// A bare constant (e.g. `5`) is accepted as a one-node graph; concept
/// templates use that form.
pub fn parse_penman(text: &str) -> Result<AmrGraph, PenmanError> {
    let toks = tokenize(text)?;
    let Some((first, first_offset)) = toks.first().cloned() else {
        return Err(PenmanError::Empty);
    };
    // balance check first so that a stray `)` is reported where it occurs
    let mut open = Vec::new();
    let mut end = toks.len();
    for (i, (t, off)) in toks.iter().enumerate() {
        match t {
            Tok::Open => open.push(*off),
            Tok::Close => {
                if open.pop().is_none() {
                    return Err(PenmanError::Unbalanced { offset: *off });
                }
                if open.is_empty() {
                    end = i + 1;
                    break;
                }
            }
            _ => {}
        }
    }
    if let Some(&unclosed) = open.first() {
        return Err(PenmanError::Unbalanced { offset: unclosed });
    }
    if end < toks.len() {
        let (t, off) = &toks[end];
        return Err(unexpected(t, "end of input", *off));
    }

    match first {
        Tok::Open => {}
        Tok::Sym(s) | Tok::Str(s) if toks.len() == 1 => {
            let quoted = matches!(toks[0].0, Tok::Str(_));
            return Ok(AmrGraph::new(Node::constant(s, quoted)));
        }
        other => return Err(unexpected(&other, "`(`", first_offset)),
    }

    let defined: HashSet<String> = toks
        .windows(3)
        .filter_map(|w| match (&w[0].0, &w[1].0, &w[2].0) {
            (Tok::Open, Tok::Sym(v), Tok::Slash) => Some(v.clone()),
            _ => None,
        })
        .collect();
    let mut reader = Reader {
        toks,
        pos: 1,
        end,
        defined,
        graph: None,
        pending: Vec::new(),
    };
    reader.node(first_offset)?;
    debug_assert_eq!(reader.pos, reader.end);
    let mut graph = reader.graph.take().expect("root node parsed");
    let ids: HashMap<String, NodeId> = (0..graph.len())
        .filter_map(|i| graph.node(i).variable_name().map(|n| (n.to_string(), i)))
        .collect();
    for (edge, name, offset) in reader.pending {
        let target = *ids
            .get(&name)
            .ok_or(PenmanError::DanglingVariable { name, offset })?;
        graph.retarget_edge(edge, target);
    }
    Ok(graph)
}

/// Multi-line PENMAN with one role per line.
pub fn serialize_penman(g: &AmrGraph) -> Result<String, PenmanError> {
    write_penman(g, true)
}

/// Single-line PENMAN, used in tab-separated files.
pub fn serialize_penman_compact(g: &AmrGraph) -> Result<String, PenmanError> {
    write_penman(g, false)
}

/// Child list of one node as it will be printed: (role, target).
type Layout = Vec<Vec<(String, NodeId)>>;

/// Decides which edges to print inverted so that every node is reachable,
/// then orders children by (role, node id).
fn layout(g: &AmrGraph) -> Result<Layout, PenmanError> {
    let n = g.len();
    let mut inverted = vec![false; g.edges().len()];
    let mut reached = vec![false; n];
    let mut frontier = vec![g.root()];
    reached[g.root()] = true;
    loop {
        while let Some(node) = frontier.pop() {
            for (i, e) in g.edges().iter().enumerate() {
                let next = if e.source == node && !inverted[i] {
                    e.target
                } else if e.target == node && inverted[i] {
                    e.source
                } else {
                    continue;
                };
                if !reached[next] {
                    reached[next] = true;
                    frontier.push(next);
                }
            }
        }
        if reached.iter().all(|&r| r) {
            break;
        }
        // invert the first edge that leads from a reached node back to an unreached variable
        let candidate = g
            .edges()
            .iter()
            .enumerate()
            .find(|(_, e)| reached[e.target] && !reached[e.source]);
        match candidate {
            Some((i, e)) => {
                inverted[i] = true;
                reached[e.source] = true;
                frontier.push(e.source);
            }
            None => {
                let stray = reached.iter().position(|&r| !r).unwrap();
                return Err(PenmanError::Unreachable(stray));
            }
        }
    }
    let mut children: Layout = vec![Vec::new(); n];
    for (i, e) in g.edges().iter().enumerate() {
        if inverted[i] {
            children[e.target].push((invert_label(&e.label), e.source));
        } else {
            children[e.source].push((e.label.clone(), e.target));
        }
    }
    for c in &mut children {
        c.sort();
    }
    Ok(children)
}

fn write_penman(g: &AmrGraph, indent: bool) -> Result<String, PenmanError> {
    g.validate()?;
    let root = g.node(g.root());
    if root.is_constant() {
        let mut out = String::new();
        write_constant(&mut out, g, g.root());
        return Ok(out);
    }
    let children = layout(g)?;
    let var_names: HashSet<&str> = g.nodes().iter().filter_map(Node::variable_name).collect();
    let mut out = String::new();
    let mut visited = vec![false; g.len()];
    let mut writer = Writer {
        g,
        children: &children,
        var_names,
        visited: &mut visited,
        out: &mut out,
        indent,
    };
    writer.node(g.root(), 0);
    Ok(out)
}

struct Writer<'a> {
    g: &'a AmrGraph,
    children: &'a Layout,
    var_names: HashSet<&'a str>,
    visited: &'a mut Vec<bool>,
    out: &'a mut String,
    indent: bool,
}

impl Writer<'_> {
    fn node(&mut self, id: NodeId, depth: usize) {
        let node = self.g.node(id);
        let NodeKind::Variable { name } = &node.kind else {
            self.constant(id);
            return;
        };
        if self.visited[id] {
            self.out.push_str(name);
            return;
        }
        self.visited[id] = true;
        write!(self.out, "({name} / ").unwrap();
        write_symbol(self.out, &node.label, false);
        for (role, child) in &self.children[id] {
            if self.indent {
                self.out.push('\n');
                for _ in 0..(depth + 1) * 4 {
                    self.out.push(' ');
                }
            } else {
                self.out.push(' ');
            }
            self.out.push_str(role);
            self.out.push(' ');
            self.node(*child, depth + 1);
        }
        self.out.push(')');
    }

    fn constant(&mut self, id: NodeId) {
        let node = self.g.node(id);
        let quoted = matches!(node.kind, NodeKind::Constant { quoted: true })
            || looks_like_variable(&node.label)
            || self.var_names.contains(node.label.as_str());
        write_symbol(self.out, &node.label, quoted);
    }
}

fn write_constant(out: &mut String, g: &AmrGraph, id: NodeId) {
    let node = g.node(id);
    let quoted = matches!(node.kind, NodeKind::Constant { quoted: true })
        || looks_like_variable(&node.label);
    write_symbol(out, &node.label, quoted);
}

fn write_symbol(out: &mut String, label: &str, force_quotes: bool) {
    if force_quotes || needs_quoting(label) {
        out.push('"');
        for c in label.chars() {
            if c == '"' || c == '\\' {
                out.push('\\');
            }
            out.push(c);
        }
        out.push('"');
    } else {
        out.push_str(label);
    }
}
