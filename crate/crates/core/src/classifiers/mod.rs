//! Feed-forward classifiers for actions, relation labels and reentrancy,
//! with their training loop, hyperparameter search and file format.

pub mod mlp;
pub mod model;
pub mod train;

use std::io::{self, Write};

pub use mlp::{argmax, Gradients, Mlp, MlpError};
pub use model::{Classifier, ClassifierModel, ModelError};
pub use train::{
    evaluate, random_search, sample_configs, train, Dataset, EpochMetrics, SearchSpace,
    TrainConfig, TrainError, TrainOutcome, TrialRecord, UNKNOWN_LABEL,
};

use crate::embeddings::StaticTable;
use crate::features::{FeatureError, FeatureLayout};
use crate::samples::{SampleSet, Vocab};

/// Converts a sample set to a dataset, expanding indexed word slots with
/// `table`. Label ids are translated through the vocabularies; ids whose
/// label `target` lacks become [`UNKNOWN_LABEL`].
pub fn dataset_from_samples(
    set: &SampleSet,
    layout: Option<(&FeatureLayout, &StaticTable)>,
    source: &Vocab,
    target: &Vocab,
) -> Result<Dataset, FeatureError> {
    let map: Vec<usize> = source
        .labels()
        .iter()
        .map(|l| target.id(l).map_or(UNKNOWN_LABEL, |i| i as usize))
        .collect();
    let label = |id: u32| map.get(id as usize).copied().unwrap_or(UNKNOWN_LABEL);
    match (set.indexed, layout) {
        (true, Some((layout, table))) => {
            let mut d = Dataset::new(layout.expanded(table.dim()).width());
            for i in 0..set.len() {
                d.push(&layout.expand(set.row(i), table)?, label(set.labels[i]));
            }
            Ok(d)
        }
        (true, None) => Err(FeatureError::NotIndexable),
        (false, _) => Ok(Dataset {
            width: set.width,
            features: set.features.clone(),
            labels: set.labels.iter().map(|&l| label(l)).collect(),
        }),
    }
}

/// Writes metrics as one JSON object per line.
pub fn write_jsonl<T: serde::Serialize>(out: &mut impl Write, records: &[T]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
