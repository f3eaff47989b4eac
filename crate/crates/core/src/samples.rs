//! Training samples for the three classifiers and their binary file format.
//!
//! Sample file layout, all integers little-endian:
//!
//! ```text
//! magic  b"AMRS"
//! u16    format version (1)
//! u8     classifier (0 transition, 1 label, 2 reentrancy)
//! u8     encoding (0 dense, 1 indexed word slots)
//! u32    feature width d
//! u32    row count n
//! n times: d f32 features, then a u32 label id
//! ```
//!
//! Label ids refer to a sidecar vocabulary with one label per line.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::AnnotatedExample;
use crate::features::{FeatureError, FeatureExtractor};
use crate::oracle::OracleResult;
use crate::transition::{Action, ActionKind, StackItem, TransitionError};

pub const SAMPLE_MAGIC: &[u8; 4] = b"AMRS";
pub const SAMPLE_VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("row {row} has {found} values, expected {expected}")]
    Width {
        row: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassifierId {
    Transition,
    Label,
    Reentrancy,
}

impl ClassifierId {
    pub const ALL: [ClassifierId; 3] = [
        ClassifierId::Transition,
        ClassifierId::Label,
        ClassifierId::Reentrancy,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        ClassifierId::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassifierId::Transition => "transition",
            ClassifierId::Label => "label",
            ClassifierId::Reentrancy => "reentrancy",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        ClassifierId::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for ClassifierId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered label names of one classifier.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new(labels: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocab::default();
        for l in labels {
            if !v.index.contains_key(&l) {
                v.index.insert(l.clone(), v.labels.len() as u32);
                v.labels.push(l);
            }
        }
        v
    }

    /// Fixed vocabulary for a classifier whose labels do not depend on data.
    pub fn fixed(classifier: ClassifierId) -> Option<Self> {
        match classifier {
            ClassifierId::Transition => Some(Vocab::new(
                ActionKind::ALL.iter().map(|k| k.as_str().to_string()),
            )),
            ClassifierId::Reentrancy => Some(Vocab::new(["0".to_string(), "1".to_string()])),
            ClassifierId::Label => None,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn to_text(&self) -> String {
        self.labels.iter().map(|l| format!("{l}\n")).collect()
    }

    pub fn from_text(text: &str) -> Self {
        Vocab::new(text.lines().filter(|l| !l.is_empty()).map(str::to_string))
    }
}

/// One training example for one classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub classifier: ClassifierId,
    pub features: Vec<f32>,
    pub label: String,
}

/// Samples for every action of an oracle run: a transition sample per action,
/// a label sample per arc (root designation excluded) and per created
/// reentrant edge, and a reentrancy sample per Reduce that has a candidate.
/// Features are taken from the configuration before the action.
pub fn emit_training_samples(
    ex: &AnnotatedExample,
    result: &OracleResult,
    fx: &FeatureExtractor<'_>,
) -> Result<Vec<TrainingSample>, SampleError> {
    let configs = result.configurations()?;
    let mut out = Vec::new();
    for (c, action) in configs.iter().zip(&result.actions) {
        let features = fx.extract(c, &ex.sentence)?;
        let mut push = |classifier, label: &str| {
            out.push(TrainingSample {
                classifier,
                features: features.clone(),
                label: label.to_string(),
            })
        };
        push(ClassifierId::Transition, action.kind().as_str());
        match action {
            Action::LArc(l) => push(ClassifierId::Label, l),
            Action::RArc(l) if c.s0() != Some(StackItem::Root) => push(ClassifierId::Label, l),
            Action::Reduce(r) => {
                if c.reentrancy_candidate().is_some() {
                    push(
                        ClassifierId::Reentrancy,
                        if r.is_some() { "1" } else { "0" },
                    );
                }
                if let Some(l) = r {
                    push(ClassifierId::Label, l);
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Rows of one classifier in file form.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub classifier: ClassifierId,
    pub indexed: bool,
    pub width: usize,
    pub features: Vec<f32>,
    pub labels: Vec<u32>,
}

impl SampleSet {
    pub fn new(classifier: ClassifierId, indexed: bool, width: usize) -> Self {
        SampleSet {
            classifier,
            indexed,
            width,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn push(&mut self, row: &[f32], label: u32) -> Result<(), SampleError> {
        if row.len() != self.width {
            return Err(SampleError::Width {
                row: self.len(),
                expected: self.width,
                found: row.len(),
            });
        }
        self.features.extend_from_slice(row);
        self.labels.push(label);
        Ok(())
    }

    /// File size for `count` rows of width `width`.
    pub fn file_size(width: usize, count: usize) -> usize {
        HEADER_BYTES + count * (4 * width + 4)
    }

    pub fn write(&self, out: &mut impl io::Write) -> io::Result<()> {
        out.write_all(SAMPLE_MAGIC)?;
        out.write_all(&SAMPLE_VERSION.to_le_bytes())?;
        out.write_all(&[self.classifier.code(), self.indexed as u8])?;
        out.write_all(&(self.width as u32).to_le_bytes())?;
        out.write_all(&(self.len() as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(4 * self.width + 4);
        for i in 0..self.len() {
            buf.clear();
            for x in self.row(i) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            buf.extend_from_slice(&self.labels[i].to_le_bytes());
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(SampleSet::file_size(self.width, self.len()));
        self.write(&mut buf).expect("writing to memory");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SampleError> {
        let fmt_err = |offset: usize, message: &str| SampleError::Format {
            offset,
            message: message.to_string(),
        };
        if bytes.len() < HEADER_BYTES {
            return Err(fmt_err(bytes.len(), "truncated header"));
        }
        if &bytes[..4] != SAMPLE_MAGIC {
            return Err(fmt_err(0, "bad magic, expected `AMRS`"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SAMPLE_VERSION {
            return Err(fmt_err(4, &format!("unsupported version {version}")));
        }
        let classifier =
            ClassifierId::from_code(bytes[6]).ok_or_else(|| fmt_err(6, "unknown classifier"))?;
        let indexed = match bytes[7] {
            0 => false,
            1 => true,
            _ => return Err(fmt_err(7, "unknown encoding")),
        };
        let u32_at = |o: usize| {
            u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        };
        let width = u32_at(8);
        let count = u32_at(12);
        let expected = SampleSet::file_size(width, count);
        if bytes.len() != expected {
            return Err(fmt_err(
                bytes.len().min(expected),
                &format!(
                    "expected {expected} bytes for {count} rows of width {width}, found {}",
                    bytes.len()
                ),
            ));
        }
        let mut set = SampleSet::new(classifier, indexed, width);
        set.features.reserve(width * count);
        let mut o = HEADER_BYTES;
        for _ in 0..count {
            for _ in 0..width {
                set.features.push(f32::from_le_bytes([
                    bytes[o],
                    bytes[o + 1],
                    bytes[o + 2],
                    bytes[o + 3],
                ]));
                o += 4;
            }
            set.labels.push(u32_at(o) as u32);
            o += 4;
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SampleError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| SampleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        SampleSet::from_bytes(&bytes)
    }
}

/// Groups samples per classifier with deterministic vocabularies: fixed ones
/// for transitions and reentrancy, sorted labels for relations.
pub fn collect_sets(
    samples: &[TrainingSample],
    indexed: bool,
    width: usize,
) -> Result<Vec<(SampleSet, Vocab)>, SampleError> {
    let mut out = Vec::new();
    for classifier in ClassifierId::ALL {
        let vocab = Vocab::fixed(classifier).unwrap_or_else(|| {
            let labels: BTreeSet<&str> = samples
                .iter()
                .filter(|s| s.classifier == classifier)
                .map(|s| s.label.as_str())
                .collect();
            Vocab::new(labels.into_iter().map(str::to_string))
        });
        let mut set = SampleSet::new(classifier, indexed, width);
        for s in samples.iter().filter(|s| s.classifier == classifier) {
            set.push(
                &s.features,
                vocab.id(&s.label).expect("label collected above"),
            )?;
        }
        out.push((set, vocab));
    }
    Ok(out)
}
