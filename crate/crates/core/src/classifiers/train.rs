use log::{info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mlp::{argmax, Mlp, MlpError};

/// Label of a row whose class the model cannot represent; always counted as wrong.
pub const UNKNOWN_LABEL: usize = usize::MAX;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("loss became NaN at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

/// Feature rows with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub width: usize,
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(width: usize) -> Self {
        Dataset {
            width,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, row: &[f32], label: usize) {
        assert_eq!(row.len(), self.width, "row width");
        self.features.extend_from_slice(row);
        self.labels.push(label);
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

    fn batch(&self, idx: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((idx.len(), self.width), |(r, c)| {
            self.features[idx[r] * self.width + c] as f64
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_layers: 6,
            hidden_width: 768,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 50,
            patience: 5,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(TrainError::Config("hidden width must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::Config(
                "batch size and epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(
                "learning rate must be >= 0 and momentum in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        d.push(output);
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Mlp,
    pub metrics: Vec<EpochMetrics>,
    /// Epoch of the returned parameters (0 = initialization).
    pub best_epoch: usize,
    pub best_dev_accuracy: Option<f64>,
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn evaluate(model: &Mlp, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let (_, acc) = loss_and_accuracy(model, data);
    acc
}

/// Mean cross-entropy over rows with known labels, and accuracy over all rows.
pub fn loss_and_accuracy(model: &Mlp, data: &Dataset) -> (f64, f64) {
    let mut correct = 0usize;
    let mut loss = 0.0;
    let mut known = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let p = model.forward_batch(&data.batch(chunk));
        for (r, &i) in chunk.iter().enumerate() {
            let row = p.row(r);
            let label = data.labels[i];
            if label == UNKNOWN_LABEL || label >= row.len() {
                continue;
            }
            known += 1;
            loss -= row[label].max(f64::MIN_POSITIVE).ln();
            if argmax(row.as_slice().unwrap()) == label {
                correct += 1;
            }
        }
    }
    let n = data.len().max(1) as f64;
    (loss / known.max(1) as f64, correct as f64 / n)
}

/// Mini-batch SGD with classical momentum (`v = mu * v - lr * g; p += v`),
/// returning the parameters with the best dev accuracy (the last epoch when
/// there is no dev set).
pub fn train(
    data: &Dataset,
    dev: Option<&Dataset>,
    n_classes: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut counts = vec![0usize; n_classes];
    for &l in &data.labels {
        if l < n_classes {
            counts[l] += 1;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            warn!("class {c} has no training samples");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Mlp::new(&cfg.dims(data.width, n_classes), &mut rng)?;
    let mut vw: Vec<Array2<f64>> = model
        .weights
        .iter()
        .map(|w| Array2::zeros(w.raw_dim()))
        .collect();
    let mut vb: Vec<_> = model
        .biases
        .iter()
        .map(|b| ndarray::Array1::zeros(b.raw_dim()))
        .collect();
    let dev = dev.filter(|d| !d.is_empty());
    let mut metrics = Vec::new();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_acc = dev.map(|d| evaluate(&model, d));
    let mut stale = 0;
    let mut order: Vec<usize> = (0..data.len())
        .filter(|&i| data.labels[i] < n_classes)
        .collect();
    if order.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut batch_index = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = data.batch(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (loss, g) = model.loss_and_gradients(&x, &y);
            if loss.is_nan() {
                return Err(TrainError::NanLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            for l in 0..model.weights.len() {
                vw[l].zip_mut_with(&g.weights[l], |v, &gr| {
                    *v = cfg.momentum * *v - cfg.learning_rate * gr
                });
                model.weights[l] += &vw[l];
                vb[l].zip_mut_with(&g.biases[l], |v, &gr| {
                    *v = cfg.momentum * *v - cfg.learning_rate * gr
                });
                model.biases[l] += &vb[l];
            }
            batch_index += 1;
        }
        let train_acc = evaluate(&model, data);
        metrics.push(EpochMetrics {
            epoch,
            split: "train".into(),
            loss: epoch_loss / order.len() as f64,
            accuracy: train_acc,
        });
        match dev {
            Some(d) => {
                let (loss, acc) = loss_and_accuracy(&model, d);
                metrics.push(EpochMetrics {
                    epoch,
                    split: "dev".into(),
                    loss,
                    accuracy: acc,
                });
                info!("epoch {epoch}: train acc {train_acc:.4}, dev acc {acc:.4}");
                if best_acc.is_none_or(|b| acc > b) {
                    best_acc = Some(acc);
                    best = model.clone();
                    best_epoch = epoch;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        break;
                    }
                }
            }
            None => {
                best = model.clone();
                best_epoch = epoch;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        metrics,
        best_epoch,
        best_dev_accuracy: best_acc,
    })
}

/// Ranges for random hyperparameter search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Learning rate drawn log-uniformly from this range.
    pub learning_rate: (f64, f64),
    pub hidden_layers: Vec<usize>,
    pub hidden_width: Vec<usize>,
    pub momentum: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub epochs: usize,
    pub patience: usize,
    pub trials: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: (1e-4, 1e-1),
            hidden_layers: vec![6],
            hidden_width: vec![768],
            momentum: vec![0.9],
            batch_size: vec![64],
            epochs: 50,
            patience: 5,
            trials: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: TrainConfig,
    pub dev_accuracy: f64,
    pub best_epoch: usize,
}

/// Draws `space.trials` configurations from a generator seeded with `seed`
/// and trains each; returns the trial with the best dev accuracy (earliest on
/// ties) and every trial record.
pub fn random_search(
    space: &SearchSpace,
    data: &Dataset,
    dev: &Dataset,
    n_classes: usize,
    seed: u64,
) -> Result<(TrainConfig, TrainOutcome, Vec<TrialRecord>), TrainError> {
    if space.trials == 0 {
        return Err(TrainError::Config("at least one trial is needed".into()));
    }
    let (lo, hi) = space.learning_rate;
    if !(lo > 0.0 && hi >= lo) || space.hidden_layers.is_empty() || space.hidden_width.is_empty() {
        return Err(TrainError::Config("empty search range".into()));
    }
    if space.momentum.is_empty() || space.batch_size.is_empty() {
        return Err(TrainError::Config("empty search range".into()));
    }
    let configs = sample_configs(space, seed);
    let mut log = Vec::new();
    let mut best: Option<(TrainConfig, TrainOutcome, f64)> = None;
    for (trial, cfg) in configs.into_iter().enumerate() {
        let outcome = train(data, Some(dev), n_classes, &cfg)?;
        let acc = evaluate(&outcome.model, dev);
        info!(
            "trial {trial}: lr {:.2e}, dev acc {acc:.4}",
            cfg.learning_rate
        );
        log.push(TrialRecord {
            trial,
            config: cfg.clone(),
            dev_accuracy: acc,
            best_epoch: outcome.best_epoch,
        });
        if best.as_ref().is_none_or(|(_, _, b)| acc > *b) {
            best = Some((cfg, outcome, acc));
        }
    }
    let (cfg, outcome, _) = best.expect("at least one trial");
    Ok((cfg, outcome, log))
}

/// The trial configurations `random_search` would use.
pub fn sample_configs(space: &SearchSpace, seed: u64) -> Vec<TrainConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = space.learning_rate;
    (0..space.trials)
        .map(|trial| {
            let lr = if hi > lo {
                rng.gen_range(lo.ln()..hi.ln()).exp()
            } else {
                lo
            };
            TrainConfig {
                hidden_layers: *space.hidden_layers.choose(&mut rng).unwrap(),
                hidden_width: *space.hidden_width.choose(&mut rng).unwrap(),
                learning_rate: lr,
                momentum: *space.momentum.choose(&mut rng).unwrap(),
                batch_size: *space.batch_size.choose(&mut rng).unwrap(),
                epochs: space.epochs,
                patience: space.patience,
                seed: seed.wrapping_add(trial as u64 + 1),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Three well separated clusters in 4 dimensions.
    fn clusters(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = Dataset::new(4);
        for i in 0..n {
            let c = i % 3;
            let mut row = [0f32; 4];
            for (k, v) in row.iter_mut().enumerate() {
                *v = rng.gen_range(-0.3..0.3) + if k == c { 2.0 } else { 0.0 };
            }
            d.push(&row, c);
        }
        d
    }

    fn small(seed: u64) -> TrainConfig {
        TrainConfig {
            hidden_layers: 1,
            hidden_width: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 10,
            epochs: 200,
            patience: 200,
            seed,
        }
    }

    #[test]
    fn separable_data_is_learned() {
        let d = clusters(50, 3);
        let out = train(&d, None, 3, &small(1)).unwrap();
        assert!(evaluate(&out.model, &d) >= 0.98);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let d = clusters(30, 4);
        let mut cfg = small(9);
        cfg.learning_rate = 0.0;
        cfg.epochs = 1;
        let out = train(&d, None, 3, &cfg).unwrap();
        let init = Mlp::new(&cfg.dims(4, 3), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for (a, b) in out.model.weights.iter().zip(&init.weights) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        for (a, b) in out.model.biases.iter().zip(&init.biases) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let d = clusters(40, 5);
        let mut cfg = small(11);
        cfg.epochs = 5;
        let a = train(&d, None, 3, &cfg).unwrap().model;
        let b = train(&d, None, 3, &cfg).unwrap().model;
        assert_eq!(a, b);
    }

    #[test]
    fn nan_loss_names_the_batch() {
        let mut d = clusters(20, 6);
        d.features[25] = f32::NAN;
        let mut cfg = small(1);
        cfg.batch_size = 4;
        match train(&d, None, 3, &cfg) {
            Err(TrainError::NanLoss { epoch: 1, batch }) => assert!(batch < 5),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("training succeeded on NaN input"),
        }
    }

    #[test]
    fn evaluation_counts_argmax_hits() {
        let m = Mlp::zeros(&[4, 3]).unwrap();
        let mut d = Dataset::new(4);
        d.push(&[0.0; 4], 0);
        d.push(&[0.0; 4], 1);
        // uniform outputs tie, and ties go to class 0
        assert_eq!(evaluate(&m, &d), 0.5);
        d.push(&[0.0; 4], UNKNOWN_LABEL);
        assert!((evaluate(&m, &d) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn early_stopping_returns_best_checkpoint() {
        let d = clusters(30, 7);
        let dev = clusters(15, 8);
        let mut cfg = small(2);
        cfg.patience = 3;
        cfg.epochs = 100;
        let out = train(&d, Some(&dev), 3, &cfg).unwrap();
        let best = out.best_dev_accuracy.unwrap();
        assert_eq!(evaluate(&out.model, &dev), best);
        let dev_accs: Vec<f64> = out
            .metrics
            .iter()
            .filter(|m| m.split == "dev")
            .map(|m| m.accuracy)
            .collect();
        assert!(dev_accs.iter().all(|&a| a <= best));
        assert!(dev_accs.len() < 100);
    }

    #[test]
    fn search_is_seeded_and_picks_the_best() {
        let space = SearchSpace {
            learning_rate: (1e-3, 1e-1),
            hidden_layers: vec![1, 2],
            hidden_width: vec![8, 16],
            momentum: vec![0.5, 0.9],
            batch_size: vec![8],
            epochs: 20,
            patience: 5,
            trials: 5,
        };
        assert_eq!(sample_configs(&space, 42), sample_configs(&space, 42));
        assert_ne!(sample_configs(&space, 42), sample_configs(&space, 43));
        for c in sample_configs(&space, 42) {
            assert!((1e-3..1e-1).contains(&c.learning_rate));
        }
        let d = clusters(30, 1);
        let dev = clusters(15, 2);
        let (cfg, out, log) = random_search(&space, &d, &dev, 3, 42).unwrap();
        assert_eq!(log.len(), 5);
        let best = evaluate(&out.model, &dev);
        assert!(log.iter().all(|t| t.dev_accuracy <= best));
        assert!(log.iter().any(|t| t.config == cfg));

        let one = SearchSpace { trials: 1, ..space };
        let (cfg, _, log) = random_search(&one, &d, &dev, 3, 42).unwrap();
        assert_eq!(log[0].config, cfg);
    }

    #[test]
    fn full_size_net_memorizes_a_small_set() {
        // random labels on distinct inputs: only capacity can fit them
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut d = Dataset::new(20);
        for _ in 0..100 {
            let row: Vec<f32> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
            d.push(&row, rng.gen_range(0..3));
        }
        let cfg = TrainConfig {
            learning_rate: 0.01,
            batch_size: 16,
            epochs: 60,
            seed: 4,
            ..TrainConfig::default()
        };
        // the training set doubles as dev so early stopping ends the run
        let out = train(&d, Some(&d), 3, &cfg).unwrap();
        assert_eq!(evaluate(&out.model, &d), 1.0);
    }
}
