use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MlpError {
    #[error("input has {found} features, network expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("a network needs at least an input and an output layer")]
    TooFewLayers,
}

/// Feed-forward network: ReLU hidden layers, softmax output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    /// `weights[l]` maps layer `l` (rows) to layer `l + 1` (columns).
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Gradients with the same shapes as the parameters.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Mlp {
    /// Uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Result<Self, MlpError> {
        if dims.len() < 2 {
            return Err(MlpError::TooFewLayers);
        }
        let weights = dims
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Array2::from_shape_fn((w[0], w[1]), |_| rng.gen_range(-limit..limit))
            })
            .collect();
        let biases = dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(Mlp { weights, biases })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self, MlpError> {
        if dims.len() < 2 {
            return Err(MlpError::TooFewLayers);
        }
        Ok(Mlp {
            weights: dims
                .windows(2)
                .map(|w| Array2::zeros((w[0], w[1])))
                .collect(),
            biases: dims[1..].iter().map(|&d| Array1::zeros(d)).collect(),
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.weights[0].nrows()];
        d.extend(self.weights.iter().map(|w| w.ncols()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Class probabilities for one input.
    pub fn forward(&self, x: &[f32]) -> Result<Vec<f64>, MlpError> {
        if x.len() != self.input_dim() {
            return Err(MlpError::Dimension {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let batch = Array2::from_shape_fn((1, x.len()), |(_, j)| x[j] as f64);
        Ok(self.forward_batch(&batch).row(0).to_vec())
    }

    /// Row-wise class probabilities for a batch.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        let (_, mut h) = self.activations(x);
        softmax_rows(&mut h);
        h
    }

    /// Hidden activations per layer (input first) and the output logits.
    fn activations(&self, x: &Array2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let last = self.weights.len() - 1;
        let mut acts = vec![x.clone()];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(w);
            z += b;
            if l == last {
                return (acts, z);
            }
            // keeps NaN so a corrupt input surfaces in the loss
            z.mapv_inplace(|v| if v < 0.0 { 0.0 } else { v });
            acts.push(z);
        }
        unreachable!("at least one layer")
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_gradients(&self, x: &Array2<f64>, y: &[usize]) -> (f64, Gradients) {
        let n = x.nrows() as f64;
        let (acts, logits) = self.activations(x);
        let mut probs = logits;
        softmax_rows(&mut probs);
        let mut loss = 0.0;
        for (i, &c) in y.iter().enumerate() {
            // f64::max would swallow a NaN here
            let p = probs[[i, c]];
            loss -= if p.is_nan() {
                p
            } else {
                p.max(f64::MIN_POSITIVE).ln()
            };
        }
        loss /= n;
        // d loss / d logits
        let mut delta = probs;
        for (i, &c) in y.iter().enumerate() {
            delta[[i, c]] -= 1.0;
        }
        delta /= n;
        let layers = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); layers];
        let mut gb = vec![Array1::zeros(0); layers];
        for l in (0..layers).rev() {
            gw[l] = acts[l].t().dot(&delta);
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                back.zip_mut_with(&acts[l], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        (
            loss,
            Gradients {
                weights: gw,
                biases: gb,
            },
        )
    }
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}
