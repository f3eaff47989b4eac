//! Word and concept vectors: static text tables and precomputed contextual
//! vectors in the `AMRE` binary format.
//!
//! `AMRE` layout, all integers little-endian:
//!
//! ```text
//! magic  b"AMRE"
//! u16    format version (1)
//! u16    dim
//! repeated until EOF:
//!   u32  byte length of the sentence id, then the UTF-8 id
//!   u32  token count
//!   f32  token count * dim values, token-major
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::strip_sense;

pub const AMRE_MAGIC: &[u8; 4] = b"AMRE";
pub const AMRE_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("embedding table is empty")]
    Empty,
    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: bad number `{value}`")]
    BadNumber { line: usize, value: String },
    #[error("byte {offset}: bad magic, expected `AMRE`")]
    BadMagic { offset: usize },
    #[error("byte {offset}: unsupported format version {version}")]
    Version { offset: usize, version: u16 },
    #[error("byte {offset}: file truncated")]
    Truncated { offset: usize },
    #[error("byte {offset}: sentence id is not UTF-8")]
    BadId { offset: usize },
    #[error("duplicate sentence id `{0}`")]
    DuplicateKey(String),
    #[error("no contextual vector for sentence `{sentence}` token {token}")]
    MissingKey { sentence: String, token: usize },
    #[error("dimension {0} does not fit the format")]
    TooWide(usize),
    #[error("configuration needs a {0} table but none was loaded")]
    MissingSource(&'static str),
}

/// Word vectors read from a GloVe-style text file.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticTable {
    dim: usize,
    index: HashMap<String, usize>,
    rows: Vec<Vec<f32>>,
    unknown: Vec<f32>,
}

impl StaticTable {
    /// Builds a table; the unknown vector is the componentwise mean of all rows.
    pub fn from_rows(rows: Vec<(String, Vec<f32>)>) -> Result<Self, EmbeddingError> {
        let dim = rows.first().ok_or(EmbeddingError::Empty)?.1.len();
        let mut index = HashMap::new();
        let mut vectors = Vec::with_capacity(rows.len());
        let mut sum = vec![0f64; dim];
        for (i, (word, v)) in rows.into_iter().enumerate() {
            if v.len() != dim {
                return Err(EmbeddingError::Dimension {
                    line: i + 1,
                    expected: dim,
                    found: v.len(),
                });
            }
            for (s, x) in sum.iter_mut().zip(&v) {
                *s += *x as f64;
            }
            // the first occurrence of a word wins
            if !index.contains_key(&word) {
                index.insert(word, vectors.len());
                vectors.push(v);
            }
        }
        let n = vectors.len() as f64;
        let unknown = sum.iter().map(|s| (s / n) as f32).collect();
        Ok(StaticTable {
            dim,
            index,
            rows: vectors,
            unknown,
        })
    }

    pub fn parse(text: &str) -> Result<Self, EmbeddingError> {
        let mut rows = Vec::new();
        let mut expected = None;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values = parts
                .map(|p| {
                    p.parse::<f32>().map_err(|_| EmbeddingError::BadNumber {
                        line: i + 1,
                        value: p.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let dim = *expected.get_or_insert(values.len());
            if values.len() != dim || dim == 0 {
                return Err(EmbeddingError::Dimension {
                    line: i + 1,
                    expected: dim,
                    found: values.len(),
                });
            }
            rows.push((word.to_string(), values));
        }
        StaticTable::from_rows(rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        StaticTable::parse(&text)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn unknown(&self) -> &[f32] {
        &self.unknown
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index.get(word).map(|&i| self.rows[i].as_slice())
    }

    /// Row index of `word`; `len()` stands for the unknown vector.
    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Vector for a row index, with `len()` and anything past it meaning unknown.
    pub fn row(&self, id: usize) -> &[f32] {
        self.rows.get(id).map_or(&self.unknown, Vec::as_slice)
    }

    /// Row index for a token: lowercased surface, then lemma, then unknown.
    pub fn token_id(&self, surface: &str, lemma: &str) -> usize {
        self.id(&surface.to_lowercase())
            .or_else(|| self.id(&lemma.to_lowercase()))
            .unwrap_or(self.rows.len())
    }

    /// Lookup for a concept label: lowercased, sense suffix stripped.
    pub fn concept(&self, label: &str) -> &[f32] {
        let key = strip_sense(&label.to_lowercase()).to_string();
        self.get(&key).unwrap_or(&self.unknown)
    }
}

/// Precomputed contextual vectors keyed by sentence id and token index.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextualStore {
    dim: usize,
    sentences: HashMap<String, Vec<f32>>,
    order: Vec<String>,
}

impl ContextualStore {
    pub fn new(dim: usize) -> Self {
        ContextualStore {
            dim,
            sentences: HashMap::new(),
            order: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Sentence ids in file order.
    pub fn ids(&self) -> &[String] {
        &self.order
    }

    /// Adds a sentence given token-major values (`tokens * dim` floats).
    pub fn insert(&mut self, id: &str, values: Vec<f32>) -> Result<(), EmbeddingError> {
        assert_eq!(
            values.len() % self.dim.max(1),
            0,
            "values must be whole rows"
        );
        if self.sentences.contains_key(id) {
            return Err(EmbeddingError::DuplicateKey(id.to_string()));
        }
        self.order.push(id.to_string());
        self.sentences.insert(id.to_string(), values);
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.sentences.contains_key(id)
    }

    pub fn token_count(&self, id: &str) -> Option<usize> {
        self.sentences.get(id).map(|v| v.len() / self.dim.max(1))
    }

    pub fn get(&self, id: &str, token: usize) -> Option<&[f32]> {
        let v = self.sentences.get(id)?;
        let start = token.checked_mul(self.dim)?;
        v.get(start..start + self.dim)
    }

    pub fn write(&self, out: &mut impl Write) -> Result<(), EmbeddingError> {
        let io = |source| EmbeddingError::Io {
            path: "<output>".into(),
            source,
        };
        let dim = u16::try_from(self.dim).map_err(|_| EmbeddingError::TooWide(self.dim))?;
        out.write_all(AMRE_MAGIC).map_err(io)?;
        out.write_all(&AMRE_VERSION.to_le_bytes()).map_err(io)?;
        out.write_all(&dim.to_le_bytes()).map_err(io)?;
        for id in &self.order {
            let values = &self.sentences[id];
            out.write_all(&(id.len() as u32).to_le_bytes())
                .map_err(io)?;
            out.write_all(id.as_bytes()).map_err(io)?;
            out.write_all(&((values.len() / self.dim.max(1)) as u32).to_le_bytes())
                .map_err(io)?;
            for v in values {
                out.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, EmbeddingError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != AMRE_MAGIC {
            return Err(EmbeddingError::BadMagic { offset: 0 });
        }
        let version = r.u16()?;
        if version != AMRE_VERSION {
            return Err(EmbeddingError::Version { offset: 4, version });
        }
        let dim = r.u16()? as usize;
        if dim != 768 && dim != 1024 {
            warn!("contextual vectors have dimension {dim}; encoders usually give 768 or 1024");
        }
        let mut store = ContextualStore::new(dim);
        while r.pos < bytes.len() {
            let id_len = r.u32()? as usize;
            let at = r.pos;
            let id = std::str::from_utf8(r.take(id_len)?)
                .map_err(|_| EmbeddingError::BadId { offset: at })?
                .to_string();
            let count = r.u32()? as usize;
            let n = count
                .checked_mul(dim)
                .ok_or(EmbeddingError::Truncated { offset: r.pos })?;
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or(EmbeddingError::Truncated { offset: r.pos })?,
            )?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            store.insert(&id, values)?;
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        ContextualStore::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbeddingError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(EmbeddingError::Truncated { offset: self.pos })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, EmbeddingError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, EmbeddingError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WordSource {
    Static,
    Contextual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConceptSource {
    Static,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub word_source: WordSource,
    pub concept_source: ConceptSource,
    /// Width of the word vector slots.
    pub word_dim: usize,
    /// Width of the concept vector slots; zero-filled when the source is `None`.
    pub concept_dim: usize,
}

/// The loaded vector sources for one configuration.
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub config: EmbeddingConfig,
    pub table: Option<StaticTable>,
    pub store: Option<ContextualStore>,
}

impl Embeddings {
    /// Static words and concepts from one table.
    pub fn static_only(table: StaticTable, concepts: bool) -> Self {
        let dim = table.dim();
        Embeddings {
            config: EmbeddingConfig {
                word_source: WordSource::Static,
                concept_source: if concepts {
                    ConceptSource::Static
                } else {
                    ConceptSource::None
                },
                word_dim: dim,
                concept_dim: dim,
            },
            table: Some(table),
            store: None,
        }
    }

    /// Contextual words; static concepts when a table is given.
    pub fn contextual(
        store: ContextualStore,
        table: Option<StaticTable>,
        concept_dim: usize,
    ) -> Self {
        let concept_source = if table.is_some() {
            ConceptSource::Static
        } else {
            ConceptSource::None
        };
        let concept_dim = table.as_ref().map_or(concept_dim, StaticTable::dim);
        Embeddings {
            config: EmbeddingConfig {
                word_source: WordSource::Contextual,
                concept_source,
                word_dim: store.dim(),
                concept_dim,
            },
            table,
            store: Some(store),
        }
    }

    pub fn check(&self) -> Result<(), EmbeddingError> {
        match self.config.word_source {
            WordSource::Static if self.table.is_none() => {
                Err(EmbeddingError::MissingSource("static"))
            }
            WordSource::Contextual if self.store.is_none() => {
                Err(EmbeddingError::MissingSource("contextual"))
            }
            _ if self.config.concept_source == ConceptSource::Static && self.table.is_none() => {
                Err(EmbeddingError::MissingSource("static"))
            }
            _ => Ok(()),
        }
    }

    pub fn token_vector(
        &self,
        sentence_id: &str,
        token: usize,
        surface: &str,
        lemma: &str,
    ) -> Result<&[f32], EmbeddingError> {
        match self.config.word_source {
            WordSource::Static => {
                let t = self
                    .table
                    .as_ref()
                    .ok_or(EmbeddingError::MissingSource("static"))?;
                Ok(t.row(t.token_id(surface, lemma)))
            }
            WordSource::Contextual => self
                .store
                .as_ref()
                .ok_or(EmbeddingError::MissingSource("contextual"))?
                .get(sentence_id, token)
                .ok_or_else(|| EmbeddingError::MissingKey {
                    sentence: sentence_id.to_string(),
                    token,
                }),
        }
    }

    /// Concept vector; constants map to the unknown vector and a `None`
    /// source gives zeros.
    pub fn concept_vector(&self, label: &str, constant: bool) -> Vec<f32> {
        match (self.config.concept_source, &self.table) {
            (ConceptSource::Static, Some(t)) if constant => t.unknown().to_vec(),
            (ConceptSource::Static, Some(t)) => t.concept(label).to_vec(),
            _ => vec![0.0; self.config.concept_dim],
        }
    }
}
