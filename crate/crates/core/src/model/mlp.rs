use serde::{Deserialize, Serialize};

use super::{Predictor, ScalarReadout};
use crate::error::{check_len, FansError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// Output head applied to the last layer's pre-activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Softmax,
    Sigmoid,
    /// Raw scores. Only used for exactly linear test models; outputs are not probabilities.
    Identity,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Fully connected layer, `rows` outputs by `cols` inputs, row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>) -> Self {
        Self {
            rows,
            cols,
            weights,
            bias,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols], vec![0.0; rows])
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(input).fold(b, |acc, (w, x)| acc + w * x))
            .collect()
    }

    /// `W^T g`
    fn backward(&self, grad_out: &[f64]) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.cols];
        for (row, &g) in self.weights.chunks_exact(self.cols).zip(grad_out) {
            for (gi, &w) in grad_in.iter_mut().zip(row) {
                *gi += w * g;
            }
        }
        grad_in
    }
}

/// Multi-layer perceptron: dense layers, a hidden activation after every layer
/// but the last, and an output [`Head`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub(crate) layers: Vec<Dense>,
    pub(crate) activations: Vec<Activation>,
    pub(crate) head: Head,
}

/// Intermediate values kept for the backward pass.
pub(crate) struct Trace {
    /// Input followed by each hidden layer's activations.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pub pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Parameter gradients, shaped like the layers.
pub(crate) type LayerGrads = Vec<(Vec<f64>, Vec<f64>)>;

impl Mlp {
    pub fn new(layers: Vec<Dense>, activations: Vec<Activation>, head: Head) -> Result<Self> {
        let mlp = Self {
            layers,
            activations,
            head,
        };
        mlp.validate()?;
        Ok(mlp)
    }

    /// `sigmoid(w . x + bias)`.
    pub fn logistic(weights: Vec<f64>, bias: f64) -> Result<Self> {
        let d = weights.len();
        Self::new(vec![Dense::new(1, d, weights, vec![bias])], vec![], Head::Sigmoid)
    }

    /// `w . x + bias` with no squashing.
    pub fn linear(weights: Vec<f64>, bias: f64) -> Result<Self> {
        let d = weights.len();
        Self::new(vec![Dense::new(1, d, weights, vec![bias])], vec![], Head::Identity)
    }

    /// All-zero weights: 0.5 for `classes == 1`, uniform otherwise.
    pub fn constant(input_dim: usize, classes: usize) -> Self {
        let head = if classes == 1 { Head::Sigmoid } else { Head::Softmax };
        Self {
            layers: vec![Dense::zeros(classes, input_dim)],
            activations: vec![],
            head,
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(FansError::Layer {
                layer: 0,
                message: "model has no layers".into(),
            });
        }
        if self.activations.len() + 1 != self.layers.len() {
            return Err(FansError::Layer {
                layer: self.layers.len() - 1,
                message: format!(
                    "{} hidden activations given for {} layers (expected {})",
                    self.activations.len(),
                    self.layers.len(),
                    self.layers.len() - 1
                ),
            });
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |message: String| FansError::Layer { layer: i, message };
            if layer.rows == 0 || layer.cols == 0 {
                return Err(fail("zero-sized layer".into()));
            }
            if layer.weights.len() != layer.rows * layer.cols {
                return Err(fail(format!(
                    "weights has {} entries, expected rows*cols = {}",
                    layer.weights.len(),
                    layer.rows * layer.cols
                )));
            }
            if layer.bias.len() != layer.rows {
                return Err(fail(format!(
                    "bias has {} entries, expected rows = {}",
                    layer.bias.len(),
                    layer.rows
                )));
            }
            if i > 0 && layer.cols != self.layers[i - 1].rows {
                return Err(fail(format!(
                    "cols = {} does not match previous layer rows = {}",
                    layer.cols,
                    self.layers[i - 1].rows
                )));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(FansError::numeric(format!("layer {i} has a non-finite parameter")));
            }
        }
        let k = self.output_dim();
        match self.head {
            Head::Sigmoid if k != 1 => Err(FansError::Layer {
                layer: self.layers.len() - 1,
                message: format!("sigmoid head needs exactly 1 output, found {k}"),
            }),
            Head::Softmax if k < 2 => Err(FansError::Layer {
                layer: self.layers.len() - 1,
                message: format!("softmax head needs at least 2 outputs, found {k}"),
            }),
            _ => Ok(()),
        }
    }

    pub(crate) fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        check_len("model input", self.input_dim(), x.len())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&current);
            inputs.push(current);
            current = match self.activations.get(i) {
                Some(&act) => z.iter().map(|&v| act.apply(v)).collect(),
                None => Vec::new(),
            };
            pre.push(z);
        }
        let logits = pre.last().expect("validated non-empty");
        let output = match self.head {
            Head::Softmax => softmax(logits),
            Head::Sigmoid => vec![sigmoid(logits[0])],
            Head::Identity => logits.clone(),
        };
        if output.iter().any(|v| !v.is_finite()) {
            return Err(FansError::numeric("activation overflow in forward pass"));
        }
        Ok(Trace { inputs, pre, output })
    }

    /// Back-propagate `grad_logits` (gradient w.r.t. the last pre-activations).
    /// Returns the input gradient and fills `params` when given.
    pub(crate) fn backward(
        &self,
        trace: &Trace,
        grad_logits: Vec<f64>,
        mut params: Option<&mut LayerGrads>,
    ) -> Vec<f64> {
        let mut grad = grad_logits;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if let Some(p) = params.as_deref_mut() {
                let (gw, gb) = &mut p[i];
                let input = &trace.inputs[i];
                for (r, &g) in grad.iter().enumerate() {
                    gb[r] += g;
                    let row = &mut gw[r * layer.cols..(r + 1) * layer.cols];
                    for (w, &a) in row.iter_mut().zip(input) {
                        *w += g * a;
                    }
                }
            }
            let grad_in = layer.backward(&grad);
            if i == 0 {
                return grad_in;
            }
            let act = self.activations[i - 1];
            let z = &trace.pre[i - 1];
            let a = &trace.inputs[i];
            grad = grad_in
                .iter()
                .zip(z.iter().zip(a))
                .map(|(&g, (&z, &a))| g * act.derivative(z, a))
                .collect();
        }
        unreachable!("model has at least one layer")
    }

    /// d output[k] / d logits
    fn head_jacobian_row(&self, output: &[f64], k: usize) -> Vec<f64> {
        match self.head {
            Head::Softmax => output
                .iter()
                .enumerate()
                .map(|(j, &pj)| {
                    let pk = output[k];
                    if j == k {
                        pk * (1.0 - pk)
                    } else {
                        -pk * pj
                    }
                })
                .collect(),
            Head::Sigmoid => vec![output[0] * (1.0 - output[0])],
            Head::Identity => (0..output.len()).map(|j| f64::from(u8::from(j == k))).collect(),
        }
    }

    pub(crate) fn zero_grads(&self) -> LayerGrads {
        self.layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect()
    }
}

impl Predictor for Mlp {
    fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.output)
    }

    fn input_gradient(&self, x: &[f64], readout: ScalarReadout) -> Result<Vec<f64>> {
        readout.check(self.output_dim())?;
        let trace = self.forward_trace(x)?;
        let seed = self.head_jacobian_row(&trace.output, readout.class);
        let grad = self.backward(&trace, seed, None);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(FansError::numeric("non-finite input gradient"));
        }
        Ok(grad)
    }

    fn has_gradient(&self) -> bool {
        true
    }
}
