//! Dense feature vectors for configurations.
//!
//! Each slot (stack positions first, then buffer positions) has the layout
//!
//! ```text
//! presence 1 | root 1 | word W | concept C | pos 18 | ner 5 | dep 38 | depth, parents, children 3
//! ```
//!
//! followed by two pair blocks, for (s1, s0) and (s0, b0), each one-hot over
//! `none | head->dependent label (38) | dependent->head label (38)`.
//! In the indexed encoding the word part of a slot is a single value, the
//! static-table row id, which [`FeatureLayout::expand`] turns back into the
//! dense vector.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{NerTag, Token, TokenizedSentence};
use crate::embeddings::{EmbeddingError, Embeddings, StaticTable, WordSource};
use crate::transition::{Configuration, StackItem};

pub const UPOS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

pub const UD_RELATIONS: [&str; 37] = [
    "acl",
    "advcl",
    "advmod",
    "amod",
    "appos",
    "aux",
    "case",
    "cc",
    "ccomp",
    "clf",
    "compound",
    "conj",
    "cop",
    "csubj",
    "dep",
    "det",
    "discourse",
    "dislocated",
    "expl",
    "fixed",
    "flat",
    "goeswith",
    "iobj",
    "list",
    "mark",
    "nmod",
    "nsubj",
    "nummod",
    "obj",
    "obl",
    "orphan",
    "parataxis",
    "punct",
    "reparandum",
    "root",
    "vocative",
    "xcomp",
];

pub const POS_WIDTH: usize = UPOS.len() + 1;
pub const NER_WIDTH: usize = NerTag::ALL.len();
pub const DEP_WIDTH: usize = UD_RELATIONS.len() + 1;
pub const SCALARS: usize = 3;
pub const PAIR_WIDTH: usize = 1 + 2 * DEP_WIDTH;
const SCALAR_CAP: f32 = 10.0;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("indexed encoding needs static word vectors")]
    NotIndexable,
    #[error("row has {found} values, expected {expected}")]
    Width { expected: usize, found: usize },
}

/// Which positions are read and whether dependency features are on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FeatureTemplate {
    pub stack_slots: usize,
    pub buffer_slots: usize,
    pub use_dependency: bool,
}

impl Default for FeatureTemplate {
    fn default() -> Self {
        FeatureTemplate {
            stack_slots: 3,
            buffer_slots: 2,
            use_dependency: true,
        }
    }
}

/// Offsets of one slot's fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotOffsets {
    pub presence: usize,
    pub root: usize,
    pub word: usize,
    pub concept: usize,
    pub pos: usize,
    pub ner: usize,
    pub dep: usize,
    pub scalars: usize,
}

/// Widths derived from a template and the vector dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    pub template: FeatureTemplate,
    /// Word values per slot: the vector dimension, or 1 when indexed.
    pub word_width: usize,
    pub concept_width: usize,
    pub indexed: bool,
}

impl FeatureLayout {
    pub fn new(
        template: FeatureTemplate,
        word_dim: usize,
        concept_dim: usize,
        indexed: bool,
    ) -> Self {
        FeatureLayout {
            template,
            word_width: if indexed { 1 } else { word_dim },
            concept_width: concept_dim,
            indexed,
        }
    }

    /// Dense layout for the given embeddings.
    pub fn dense(template: FeatureTemplate, emb: &Embeddings) -> Self {
        FeatureLayout::new(template, emb.config.word_dim, emb.config.concept_dim, false)
    }

    /// Same template with dense word slots of width `word_dim`.
    pub fn expanded(&self, word_dim: usize) -> Self {
        FeatureLayout::new(self.template, word_dim, self.concept_width, false)
    }

    pub fn slots(&self) -> usize {
        self.template.stack_slots + self.template.buffer_slots
    }

    pub fn slot_width(&self) -> usize {
        2 + self.word_width + self.concept_width + POS_WIDTH + NER_WIDTH + DEP_WIDTH + SCALARS
    }

    pub fn width(&self) -> usize {
        self.slots() * self.slot_width() + 2 * PAIR_WIDTH
    }

    pub fn slot(&self, i: usize) -> SlotOffsets {
        let base = i * self.slot_width();
        let word = base + 2;
        let concept = word + self.word_width;
        let pos = concept + self.concept_width;
        let ner = pos + POS_WIDTH;
        let dep = ner + NER_WIDTH;
        SlotOffsets {
            presence: base,
            root: base + 1,
            word,
            concept,
            pos,
            ner,
            dep,
            scalars: dep + DEP_WIDTH,
        }
    }

    /// Start of pair block `k` (0 for (s1, s0), 1 for (s0, b0)).
    pub fn pair(&self, k: usize) -> usize {
        self.slots() * self.slot_width() + k * PAIR_WIDTH
    }

    /// Whether coordinate `i` is derived from dependency annotations.
    pub fn is_dependency_coordinate(&self, i: usize) -> bool {
        if i >= self.pair(0) {
            return true;
        }
        let within = i % self.slot_width();
        let dep = self.slot(0).dep;
        (dep..dep + DEP_WIDTH).contains(&within)
    }

    /// Replaces the index in each word slot with the table row.
    pub fn expand(&self, row: &[f32], table: &StaticTable) -> Result<Vec<f32>, FeatureError> {
        if row.len() != self.width() {
            return Err(FeatureError::Width {
                expected: self.width(),
                found: row.len(),
            });
        }
        if !self.indexed {
            return Ok(row.to_vec());
        }
        let dense = self.expanded(table.dim());
        let mut out = Vec::with_capacity(dense.width());
        let sw = self.slot_width();
        for i in 0..self.slots() {
            let s = &row[i * sw..(i + 1) * sw];
            out.extend_from_slice(&s[..2]);
            if s[0] != 0.0 && s[1] == 0.0 {
                out.extend_from_slice(table.row(s[2] as usize));
            } else {
                out.extend(std::iter::repeat_n(0.0, table.dim()));
            }
            out.extend_from_slice(&s[3..]);
        }
        out.extend_from_slice(&row[self.pair(0)..]);
        Ok(out)
    }

    /// Text description of the layout; its hash ties models to features.
    pub fn manifest(&self, word_source: WordSource) -> String {
        let mut m = String::new();
        let t = &self.template;
        writeln!(m, "feature-manifest 1").unwrap();
        writeln!(m, "word_source {word_source:?}").unwrap();
        writeln!(
            m,
            "encoding {}",
            if self.indexed { "indexed" } else { "dense" }
        )
        .unwrap();
        writeln!(m, "use_dependency {}", t.use_dependency).unwrap();
        writeln!(m, "word_width {}", self.word_width).unwrap();
        writeln!(m, "concept_width {}", self.concept_width).unwrap();
        writeln!(m, "slot_width {}", self.slot_width()).unwrap();
        writeln!(m, "field presence 1").unwrap();
        writeln!(m, "field root 1").unwrap();
        writeln!(m, "field word {}", self.word_width).unwrap();
        writeln!(m, "field concept {}", self.concept_width).unwrap();
        writeln!(m, "field pos {POS_WIDTH}").unwrap();
        writeln!(m, "field ner {NER_WIDTH}").unwrap();
        writeln!(m, "field dep {DEP_WIDTH}").unwrap();
        writeln!(m, "field scalars {SCALARS}").unwrap();
        for i in 0..t.stack_slots {
            writeln!(m, "slot s{i} offset {}", self.slot(i).presence).unwrap();
        }
        for i in 0..t.buffer_slots {
            writeln!(
                m,
                "slot b{i} offset {}",
                self.slot(t.stack_slots + i).presence
            )
            .unwrap();
        }
        writeln!(m, "pair s1-s0 offset {} width {PAIR_WIDTH}", self.pair(0)).unwrap();
        writeln!(m, "pair s0-b0 offset {} width {PAIR_WIDTH}", self.pair(1)).unwrap();
        writeln!(m, "width {}", self.width()).unwrap();
        m
    }
}

/// SHA-256 of a manifest, hex encoded.
pub fn manifest_hash(manifest: &str) -> String {
    Sha256::digest(manifest.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn pos_index(tag: &str) -> usize {
    if let Some(i) = UPOS.iter().position(|&u| u == tag) {
        return i;
    }
    let upos = match tag {
        "NN" | "NNS" => "NOUN",
        "NNP" | "NNPS" => "PROPN",
        "JJ" | "JJR" | "JJS" => "ADJ",
        "RB" | "RBR" | "RBS" | "WRB" => "ADV",
        "IN" => "ADP",
        "CC" => "CCONJ",
        "DT" | "PDT" | "WDT" => "DET",
        "CD" => "NUM",
        "PRP" | "PRP$" | "WP" | "WP$" | "EX" => "PRON",
        "TO" | "RP" | "POS" => "PART",
        "MD" => "AUX",
        "UH" => "INTJ",
        "SYM" => "SYM",
        "FW" | "LS" => "X",
        "." | "," | ":" | "``" | "''" | "-LRB-" | "-RRB-" | "HYPH" => "PUNCT",
        t if t.starts_with("VB") => "VERB",
        _ => return UPOS.len(),
    };
    UPOS.iter().position(|&u| u == upos).unwrap()
}

pub fn dep_index(label: &str) -> usize {
    let base = label.split(':').next().unwrap_or("").to_lowercase();
    UD_RELATIONS
        .iter()
        .position(|&r| r == base)
        .unwrap_or(UD_RELATIONS.len())
}

/// Turns configurations of one sentence into feature rows.
pub struct FeatureExtractor<'a> {
    pub layout: FeatureLayout,
    pub embeddings: &'a Embeddings,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(
        template: FeatureTemplate,
        embeddings: &'a Embeddings,
        indexed: bool,
    ) -> Result<Self, FeatureError> {
        if indexed && embeddings.config.word_source != WordSource::Static {
            return Err(FeatureError::NotIndexable);
        }
        let c = &embeddings.config;
        Ok(FeatureExtractor {
            layout: FeatureLayout::new(template, c.word_dim, c.concept_dim, indexed),
            embeddings,
        })
    }

    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn extract(
        &self,
        c: &Configuration,
        sentence: &TokenizedSentence,
    ) -> Result<Vec<f32>, FeatureError> {
        let l = &self.layout;
        let t = &l.template;
        let mut out = vec![0.0f32; l.width()];
        for i in 0..t.stack_slots {
            let item = c.stack_at(i);
            match item {
                None => {}
                Some(StackItem::Root) => {
                    let o = l.slot(i);
                    out[o.presence] = 1.0;
                    out[o.root] = 1.0;
                }
                Some(StackItem::Node(n)) => {
                    self.fill_slot(&mut out, i, c, sentence, c.nodes()[n].token, Some(n))?;
                }
            }
        }
        for j in 0..t.buffer_slots {
            if let Some(tok) = c.buffer_at(j) {
                self.fill_slot(
                    &mut out,
                    t.stack_slots + j,
                    c,
                    sentence,
                    tok,
                    c.token_node(tok),
                )?;
            }
        }
        if t.use_dependency {
            let token_of = |item: Option<StackItem>| {
                item.and_then(StackItem::node).map(|n| c.nodes()[n].token)
            };
            let s0 = token_of(c.stack_at(0));
            let s1 = token_of(c.stack_at(1));
            let b0 = c.buffer_at(0);
            for (k, (a, b)) in [(s1, s0), (s0, b0)].into_iter().enumerate() {
                if let (Some(a), Some(b)) = (a, b) {
                    out[l.pair(k) + pair_relation(&sentence.tokens[a], &sentence.tokens[b])] = 1.0;
                }
            }
        }
        Ok(out)
    }

    fn fill_slot(
        &self,
        out: &mut [f32],
        slot: usize,
        c: &Configuration,
        sentence: &TokenizedSentence,
        token: usize,
        node: Option<usize>,
    ) -> Result<(), FeatureError> {
        let l = &self.layout;
        let o = l.slot(slot);
        let tok = &sentence.tokens[token];
        out[o.presence] = 1.0;
        if l.indexed {
            let table = self
                .embeddings
                .table
                .as_ref()
                .ok_or(EmbeddingError::MissingSource("static"))?;
            out[o.word] = table.token_id(&tok.surface, &tok.lemma) as f32;
        } else {
            let v = self
                .embeddings
                .token_vector(&sentence.id, token, &tok.surface, &tok.lemma)?;
            out[o.word..o.word + l.word_width].copy_from_slice(v);
        }
        if let Some(n) = node {
            let cn = &c.nodes()[n];
            let v = self
                .embeddings
                .concept_vector(&cn.node.label, cn.node.is_constant());
            out[o.concept..o.concept + l.concept_width].copy_from_slice(&v);
            let info = c.stack_node(n);
            for (k, x) in [info.depth, info.parents, info.children]
                .into_iter()
                .enumerate()
            {
                out[o.scalars + k] = (x as f32).min(SCALAR_CAP) / SCALAR_CAP;
            }
        }
        out[o.pos + pos_index(&tok.pos)] = 1.0;
        out[o.ner + tok.ner.index()] = 1.0;
        if l.template.use_dependency {
            out[o.dep + dep_index(&tok.dep_label)] = 1.0;
        }
        Ok(())
    }
}

/// Pair index: 0 when neither token heads the other, `1 + label` when `a`
/// heads `b`, `1 + DEP_WIDTH + label` when `b` heads `a`.
fn pair_relation(a: &Token, b: &Token) -> usize {
    if b.dep_head == Some(a.index) {
        1 + dep_index(&b.dep_label)
    } else if a.dep_head == Some(b.index) {
        1 + DEP_WIDTH + dep_index(&a.dep_label)
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_conllu, NerMap};
    use crate::embeddings::StaticTable;
    use crate::penman::parse_penman;
    use crate::transition::Action;

    const CONLLU: &str = "# sent_id = dog-wants\n1\tThe\tthe\tDET\tDT\t_\t2\tdet\t_\t_\n2\tdog\tdog\tNOUN\tNN\t_\t3\tnsubj\t_\t_\n3\twants\twant\tVERB\tVBZ\t_\t0\troot\t_\t_\n4\tto\tto\tPART\tTO\t_\t5\tmark\t_\t_\n5\teat\teat\tVERB\tVB\t_\t3\txcomp\t_\t_\n";

    fn setup() -> (TokenizedSentence, Embeddings, Configuration) {
        let s = parse_conllu(CONLLU, &NerMap::default()).unwrap().remove(0);
        let table = StaticTable::parse("the 1 0\ndog 0 1\nwant 2 2\neat 3 3\n").unwrap();
        let t = |p: &str| Some(parse_penman(p).unwrap());
        let c = Configuration::new(&[
            None,
            t("(d / dog)"),
            t("(w / want-01)"),
            None,
            t("(e / eat-01)"),
        ])
        .unwrap();
        (s, Embeddings::static_only(table, true), c)
    }

    #[test]
    fn width_arithmetic() {
        let l = FeatureLayout::new(FeatureTemplate::default(), 300, 300, false);
        assert_eq!(l.slot_width(), 2 + 300 + 300 + 18 + 5 + 38 + 3);
        assert_eq!(l.width(), 5 * 666 + 2 * 77);
        let idx = FeatureLayout::new(FeatureTemplate::default(), 300, 300, true);
        assert_eq!(l.width() - idx.width(), 5 * 299);
    }

    #[test]
    fn initial_dog_wants_features() {
        let (s, e, c) = setup();
        let fx = FeatureExtractor::new(FeatureTemplate::default(), &e, false).unwrap();
        let v = fx.extract(&c, &s).unwrap();
        let l = fx.layout;
        assert_eq!(v.len(), l.width());
        // s0 is ROOT, s1 and s2 are absent
        let s0 = l.slot(0);
        assert_eq!(
            &v[s0.presence..s0.presence + l.slot_width()]
                .iter()
                .sum::<f32>(),
            &2.0
        );
        assert_eq!(v[s0.root], 1.0);
        for i in [1, 2] {
            let o = l.slot(i);
            assert!(v[o.presence..o.presence + l.slot_width()]
                .iter()
                .all(|&x| x == 0.0));
        }
        // b0 = "The": no node, so no concept or scalars
        let b0 = l.slot(3);
        assert_eq!(v[b0.presence], 1.0);
        assert_eq!(&v[b0.word..b0.word + 2], &[1.0, 0.0]);
        assert_eq!(&v[b0.concept..b0.concept + 2], &[0.0, 0.0]);
        assert_eq!(v[b0.pos + pos_index("DET")], 1.0);
        assert_eq!(v[b0.ner + NerTag::O.index()], 1.0);
        assert_eq!(v[b0.dep + dep_index("det")], 1.0);
        // b1 = "dog" with its bound node
        let b1 = l.slot(4);
        assert_eq!(&v[b1.word..b1.word + 2], &[0.0, 1.0]);
        assert_eq!(&v[b1.concept..b1.concept + 2], &[0.0, 1.0]);
        // no pair relation with ROOT on top
        assert!(v[l.pair(0)..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pair_features_and_scalars() {
        let (s, e, c) = setup();
        let c = c
            .apply(&Action::Shift)
            .unwrap()
            .apply(&Action::Shift)
            .unwrap();
        let fx = FeatureExtractor::new(FeatureTemplate::default(), &e, false).unwrap();
        let v = fx.extract(&c, &s).unwrap();
        let l = fx.layout;
        // s0 = dog, b0 = wants, and wants heads dog with nsubj
        assert_eq!(v[l.pair(1) + 1 + DEP_WIDTH + dep_index("nsubj")], 1.0);
        let c = c.apply(&Action::LArc(":ARG0".into())).unwrap();
        let c = c.apply(&Action::RArc(":TOP".into())).unwrap();
        let v = fx.extract(&c, &s).unwrap();
        let s0 = l.slot(0);
        assert_eq!(&v[s0.scalars..s0.scalars + 3], &[0.1, 0.0, 0.1]);
        assert_eq!(&v[s0.concept..s0.concept + 2], &[2.0, 2.0]);
    }

    #[test]
    fn ablation_touches_only_dependency_coordinates() {
        let (s, e, c) = setup();
        let with = FeatureExtractor::new(FeatureTemplate::default(), &e, false).unwrap();
        let without = FeatureExtractor::new(
            FeatureTemplate {
                use_dependency: false,
                ..FeatureTemplate::default()
            },
            &e,
            false,
        )
        .unwrap();
        let mut c = c;
        for a in [Action::Shift, Action::Shift, Action::LArc(":ARG0".into())] {
            let x = with.extract(&c, &s).unwrap();
            let y = without.extract(&c, &s).unwrap();
            assert_eq!(x.len(), y.len());
            for (i, (a, b)) in x.iter().zip(&y).enumerate() {
                if a != b {
                    assert!(with.layout.is_dependency_coordinate(i), "coordinate {i}");
                }
            }
            assert!(y
                .iter()
                .enumerate()
                .all(|(i, &v)| !with.layout.is_dependency_coordinate(i) || v == 0.0));
            c.apply_mut(&a).unwrap();
        }
    }

    #[test]
    fn indexed_rows_expand_to_dense() {
        let (s, e, c) = setup();
        let dense = FeatureExtractor::new(FeatureTemplate::default(), &e, false).unwrap();
        let indexed = FeatureExtractor::new(FeatureTemplate::default(), &e, true).unwrap();
        let c = c
            .apply(&Action::Shift)
            .unwrap()
            .apply(&Action::Shift)
            .unwrap();
        let row = indexed.extract(&c, &s).unwrap();
        assert_eq!(dense.width() - indexed.width(), 5 * (2 - 1));
        let expanded = indexed
            .layout
            .expand(&row, e.table.as_ref().unwrap())
            .unwrap();
        assert_eq!(expanded, dense.extract(&c, &s).unwrap());
    }

    #[test]
    fn manifest_hash_tracks_the_ablation() {
        let l = FeatureLayout::new(FeatureTemplate::default(), 4, 4, false);
        let m = l.manifest(WordSource::Static);
        assert!(m.contains("width"));
        let mut t = FeatureTemplate::default();
        t.use_dependency = false;
        let l2 = FeatureLayout::new(t, 4, 4, false);
        assert_eq!(l.width(), l2.width());
        assert_ne!(
            manifest_hash(&m),
            manifest_hash(&l2.manifest(WordSource::Static))
        );
        assert_eq!(manifest_hash(&m).len(), 64);
    }
}
