//! Trained classifier files.
//!
//! ```text
//! magic  b"AMRM"
//! u16    format version (1)
//! u8     classifier (0 transition, 1 label, 2 reentrancy)
//! u8     reserved (0)
//! 64     feature-manifest hash, lowercase hex ASCII
//! u32    layer count L (input and output included)
//! L u32  layer dims
//! per layer: row-major f32 weights (in x out), then f32 biases
//! ```
//!
//! The label vocabulary sits next to the model in a text sidecar.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use thiserror::Error;

use super::mlp::{Mlp, MlpError};
use crate::samples::{ClassifierId, Vocab};
use crate::transition::Configuration;

pub const MODEL_MAGIC: &[u8; 4] = b"AMRM";
pub const MODEL_VERSION: u16 = 1;
const HASH_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("vocabulary has {vocab} labels but the network has {outputs} outputs")]
    VocabSize { vocab: usize, outputs: usize },
    #[error(
        "{classifier} model was trained on features {model}, the runtime template hashes to {runtime}; \
         rerun oracle and train with the same embedding and dependency flags"
    )]
    ManifestMismatch {
        classifier: ClassifierId,
        model: String,
        runtime: String,
    },
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

/// Anything that turns a configuration's feature row into label probabilities.
///
/// Trained networks ignore the configuration; test doubles may use it.
pub trait Classifier: Send + Sync {
    fn vocab(&self) -> &Vocab;
    fn probabilities(&self, c: &Configuration, features: &[f32]) -> Result<Vec<f64>, MlpError>;
}

/// A network with its label vocabulary and the manifest hash of its features.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub classifier: ClassifierId,
    pub manifest_hash: String,
    pub mlp: Mlp,
    pub vocab: Vocab,
}

impl Classifier for ClassifierModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn probabilities(&self, _c: &Configuration, features: &[f32]) -> Result<Vec<f64>, MlpError> {
        self.mlp.forward(features)
    }
}

impl ClassifierModel {
    pub fn new(
        classifier: ClassifierId,
        manifest_hash: String,
        mlp: Mlp,
        vocab: Vocab,
    ) -> Result<Self, ModelError> {
        if vocab.len() != mlp.output_dim() {
            return Err(ModelError::VocabSize {
                vocab: vocab.len(),
                outputs: mlp.output_dim(),
            });
        }
        Ok(ClassifierModel {
            classifier,
            manifest_hash,
            mlp,
            vocab,
        })
    }

    pub fn check_manifest(&self, runtime: &str) -> Result<(), ModelError> {
        if self.manifest_hash == runtime {
            Ok(())
        } else {
            Err(ModelError::ManifestMismatch {
                classifier: self.classifier,
                model: self.manifest_hash.clone(),
                runtime: runtime.to_string(),
            })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.push(self.classifier.code());
        out.push(0);
        let mut hash = self.manifest_hash.as_bytes().to_vec();
        hash.resize(HASH_LEN, b'0');
        out.extend_from_slice(&hash);
        let dims = self.mlp.dims();
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in &dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for (w, b) in self.mlp.weights.iter().zip(&self.mlp.biases) {
            for x in w.iter() {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
            for x in b.iter() {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parses model bytes; the vocabulary comes from the sidecar.
    pub fn from_bytes(bytes: &[u8], vocab: Vocab) -> Result<Self, ModelError> {
        let err = |offset: usize, message: &str| ModelError::Format {
            offset,
            message: message.to_string(),
        };
        let need = |o: usize, n: usize| {
            if bytes.len() < o + n {
                Err(err(bytes.len(), "truncated"))
            } else {
                Ok(())
            }
        };
        need(0, 8 + HASH_LEN + 4)?;
        if &bytes[..4] != MODEL_MAGIC {
            return Err(err(0, "bad magic, expected `AMRM`"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != MODEL_VERSION {
            return Err(err(4, &format!("unsupported version {version}")));
        }
        let classifier =
            ClassifierId::from_code(bytes[6]).ok_or_else(|| err(6, "unknown classifier"))?;
        let manifest_hash = std::str::from_utf8(&bytes[8..8 + HASH_LEN])
            .map_err(|_| err(8, "manifest hash is not ASCII"))?
            .to_string();
        let u32_at = |o: usize| {
            u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        };
        let mut o = 8 + HASH_LEN;
        let layers = u32_at(o);
        o += 4;
        if !(2..=64).contains(&layers) {
            return Err(err(o - 4, &format!("implausible layer count {layers}")));
        }
        need(o, 4 * layers)?;
        let dims: Vec<usize> = (0..layers).map(|i| u32_at(o + 4 * i)).collect();
        o += 4 * layers;
        let params: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if bytes.len() != o + 4 * params {
            return Err(err(
                bytes.len().min(o + 4 * params),
                &format!(
                    "expected {} parameter bytes, found {}",
                    4 * params,
                    bytes.len() - o
                ),
            ));
        }
        let mut read = |n: usize| -> Vec<f64> {
            let v = bytes[o..o + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            o += 4 * n;
            v
        };
        let mut mlp = Mlp::zeros(&dims)?;
        for (l, w) in dims.windows(2).enumerate() {
            mlp.weights[l] =
                Array2::from_shape_vec((w[0], w[1]), read(w[0] * w[1])).expect("shape checked");
            mlp.biases[l] = Array1::from_vec(read(w[1]));
        }
        ClassifierModel::new(classifier, manifest_hash, mlp, vocab)
    }

    pub fn model_path(dir: &Path, classifier: ClassifierId) -> PathBuf {
        dir.join(format!("{}.model", classifier.name()))
    }

    pub fn vocab_path(dir: &Path, classifier: ClassifierId) -> PathBuf {
        dir.join(format!("{}.vocab", classifier.name()))
    }

    /// Writes `<name>.model` and `<name>.vocab` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| ModelError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let m = ClassifierModel::model_path(dir, self.classifier);
        fs::write(&m, self.to_bytes()).map_err(io(&m))?;
        let v = ClassifierModel::vocab_path(dir, self.classifier);
        fs::write(&v, self.vocab.to_text()).map_err(io(&v))?;
        Ok(())
    }

    pub fn load(dir: &Path, classifier: ClassifierId) -> Result<Self, ModelError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| ModelError::Io { path, source }
        };
        let m = ClassifierModel::model_path(dir, classifier);
        let bytes = fs::read(&m).map_err(io(&m))?;
        let v = ClassifierModel::vocab_path(dir, classifier);
        let vocab = Vocab::from_text(&fs::read_to_string(&v).map_err(io(&v))?);
        let model = ClassifierModel::from_bytes(&bytes, vocab)?;
        if model.classifier != classifier {
            return Err(ModelError::Format {
                offset: 6,
                message: format!("{} holds a {} model", m.display(), model.classifier),
            });
        }
        Ok(model)
    }
}
