use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Dense, Head, Mlp};
use crate::adam::Adam;
use crate::datasets::Dataset;
use crate::error::{FansError, Result};
use crate::rng::{task_rng, Domain};

/// Hidden layer widths plus the hidden activation. The head follows from the
/// class count: sigmoid for two classes, softmax otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl ArchSpec {
    pub fn logistic() -> Self {
        Self {
            hidden: Vec::new(),
            activation: Activation::Relu,
        }
    }

    pub fn mlp(hidden: Vec<usize>, activation: Activation) -> Self {
        Self { hidden, activation }
    }
}

/// `logistic`, `mlp:16,8` or `mlp:16,8:tanh`.
impl FromStr for ArchSpec {
    type Err = FansError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || FansError::config(format!("unrecognized architecture `{s}`"));
        if s == "logistic" {
            return Ok(Self::logistic());
        }
        let rest = s.strip_prefix("mlp:").ok_or_else(bad)?;
        let (widths, act) = match rest.split_once(':') {
            Some((w, a)) => (w, a),
            None => (rest, "relu"),
        };
        let activation = match act {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            _ => return Err(bad()),
        };
        let hidden = widths
            .split(',')
            .map(|w| w.trim().parse::<usize>().ok().filter(|&w| w > 0).ok_or_else(bad))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { hidden, activation })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.05,
            batch_size: 64,
        }
    }
}

fn init_model(arch: &ArchSpec, d: usize, classes: usize, seed: u64) -> Result<Mlp> {
    let (out, head) = if classes == 2 {
        (1, Head::Sigmoid)
    } else {
        (classes, Head::Softmax)
    };
    let mut sizes = vec![d];
    sizes.extend(&arch.hidden);
    sizes.push(out);
    let mut rng = task_rng(seed, Domain::Training, 0);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (cols, rows) = (w[0], w[1]);
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Dense::new(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect(),
                vec![0.0; rows],
            )
        })
        .collect();
    Mlp::new(layers, vec![arch.activation; arch.hidden.len()], head)
}

/// Mini-batch Adam on cross-entropy. Deterministic for a given seed.
pub fn fit_mlp(dataset: &Dataset, arch: &ArchSpec, hyper: &TrainConfig, seed: u64) -> Result<Mlp> {
    if dataset.is_empty() {
        return Err(FansError::config("cannot train on an empty dataset"));
    }
    if hyper.batch_size == 0 || !hyper.learning_rate.is_finite() || hyper.learning_rate <= 0.0 {
        return Err(FansError::config("batch size and learning rate must be positive"));
    }
    let classes = dataset.num_classes();
    let mut model = init_model(arch, dataset.dim(), classes, seed)?;
    let n_params: usize = model.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
    let mut adam = Adam::new(n_params, hyper.learning_rate);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut task_rng(seed, Domain::Training, epoch as u64 + 1));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let mut grads = model.zero_grads();
            for &i in batch {
                let trace = model.forward_trace(&dataset.inputs[i])?;
                let y = dataset.labels[i];
                let p = &trace.output;
                let (loss, grad_logits) = match model.head {
                    Head::Sigmoid => {
                        let t = y as f64;
                        let q = if y == 1 { p[0] } else { 1.0 - p[0] };
                        (-q.max(f64::MIN_POSITIVE).ln(), vec![p[0] - t])
                    }
                    _ => {
                        let g = p
                            .iter()
                            .enumerate()
                            .map(|(k, &pk)| pk - f64::from(u8::from(k == y)))
                            .collect();
                        (-p[y].max(f64::MIN_POSITIVE).ln(), g)
                    }
                };
                epoch_loss += loss;
                model.backward(&trace, grad_logits, Some(&mut grads));
            }
            let scale = 1.0 / batch.len() as f64;
            let flat: Vec<f64> = grads
                .iter()
                .flat_map(|(w, b)| w.iter().chain(b))
                .map(|g| g * scale)
                .collect();
            let step = adam.step(&flat);
            let mut it = step.into_iter();
            for layer in &mut model.layers {
                for p in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                    *p -= it.next().expect("step covers all parameters");
                }
            }
        }
        if !epoch_loss.is_finite() || model.validate().is_err() {
            return Err(FansError::Divergence { epoch });
        }
    }
    Ok(model)
}

/// Fraction of rows whose predicted class matches the label.
pub fn accuracy(model: &dyn super::Predictor, dataset: &Dataset) -> Result<f64> {
    let mut hits = 0usize;
    for (x, &y) in dataset.inputs.iter().zip(&dataset.labels) {
        hits += usize::from(super::predicted_class(model, x)? == y);
    }
    Ok(hits as f64 / dataset.len().max(1) as f64)
}
