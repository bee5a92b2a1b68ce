//! Small fully-connected ReLU network trained with a multi-label hinge loss,
//! and layer-wise relevance propagation through it.

mod lrp;

pub use lrp::{lrp_alphabeta, lrp_epsilon, nn_heatmap, LayerRelevance};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dims, Error, Result};
use crate::imaging::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }
}

/// Dense layer computing `g(Σ_i w_ji x_i + b_j)`; `weights` is row-major
/// `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        ensure_dims!(weights.len() == inputs * outputs, "weights {} != {outputs}x{inputs}", weights.len());
        ensure_dims!(bias.len() == outputs, "bias {} != {outputs}", bias.len());
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite layer parameter".into()));
        }
        Ok(DenseLayer { inputs, outputs, weights, bias, activation })
    }

    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.weights[j * self.inputs + i]
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.inputs..(j + 1) * self.inputs]
    }

    /// Pre-activations z_j including the bias.
    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|j| self.row(j).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[j])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralNet {
    /// Side length of the square grayscale input the network consumes.
    pub input_side: usize,
    pub layers: Vec<DenseLayer>,
    pub classes: Vec<String>,
}

/// Activations of every layer for one input (`activations[0]` is the input).
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub activations: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least the input")
    }
}

impl NeuralNet {
    pub fn new(input_side: usize, layers: Vec<DenseLayer>, classes: Vec<String>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::Validation("network has no layers".into()))?;
        ensure_dims!(first.inputs == input_side * input_side, "first layer takes {} inputs, image has {}", first.inputs, input_side * input_side);
        for pair in layers.windows(2) {
            ensure_dims!(pair[0].outputs == pair[1].inputs, "layer outputs {} feed layer inputs {}", pair[0].outputs, pair[1].inputs);
        }
        let last = layers.last().unwrap();
        ensure_dims!(last.outputs == classes.len(), "{} outputs for {} classes", last.outputs, classes.len());
        Ok(NeuralNet { input_side, layers, classes })
    }

    /// ReLU hidden layers, identity output, He-normal weights, zero biases.
    pub fn initialize(input_side: usize, hidden: &[usize], classes: Vec<String>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![input_side * input_side];
        sizes.extend_from_slice(hidden);
        sizes.push(classes.len());
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(idx, s)| {
                let scale = (2.0 / s[0] as f64).sqrt();
                let weights = (0..s[0] * s[1]).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
                let activation = if idx + 2 == sizes.len() { Activation::Identity } else { Activation::Relu };
                DenseLayer::new(s[0], s[1], weights, vec![0.0; s[1]], activation)
            })
            .collect::<Result<Vec<_>>>()?;
        NeuralNet::new(input_side, layers, classes)
    }

    pub fn input_len(&self) -> usize {
        self.input_side * self.input_side
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes.iter().position(|c| c == name).ok_or_else(|| Error::Key(format!("unknown class {name:?}")))
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardPass> {
        ensure_dims!(input.len() == self.input_len(), "input has {} values, network expects {}", input.len(), self.input_len());
        let mut activations = vec![input.to_vec()];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = layer.pre_activation(activations.last().unwrap());
            activations.push(z.iter().map(|v| layer.activation.apply(*v)).collect());
            pre_activations.push(z);
        }
        Ok(ForwardPass { activations, pre_activations })
    }

    pub fn scores(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.output().to_vec())
    }
}

/// Box-downscales the luminance of `img` to `side`×`side` and centres
/// intensities around zero (`v − 0.5`).
pub fn preprocess(img: &Image, side: usize) -> Result<Vec<f64>> {
    let (w, h) = (img.width(), img.height());
    if side == 0 || w % side != 0 || h % side != 0 || w / side != h / side {
        return Err(Error::Dim(format!("cannot downscale {w}x{h} to {side}x{side} by an integer factor")));
    }
    let f = w / side;
    let lum = img.luminance();
    let area = (f * f) as f64;
    Ok((0..side)
        .flat_map(|by| (0..side).map(move |bx| (bx, by)))
        .map(|(bx, by)| {
            let mut s = 0.0;
            for y in by * f..(by + 1) * f {
                for x in bx * f..(bx + 1) * f {
                    s += lum[y * w + x];
                }
            }
            s / area - 0.5
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnTrainParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for NnTrainParams {
    fn default() -> Self {
        NnTrainParams { epochs: 60, learning_rate: 0.03, batch: 16, seed: 0 }
    }
}

/// Σ_c max(0, 1 − y_c f_c(x)) averaged over examples.
pub fn multilabel_hinge_loss(net: &NeuralNet, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        let f = net.scores(x)?;
        total += f.iter().zip(t).map(|(s, y)| (1.0 - y * s).max(0.0)).sum::<f64>();
    }
    Ok(total / inputs.len().max(1) as f64)
}

#[derive(Debug, Clone)]
pub struct NnTrainReport {
    pub net: NeuralNet,
    /// Mean training loss before training and after each epoch.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch subgradient descent on the summed per-class hinge losses,
/// starting from `net`. `targets[i][c]` is ±1.
pub fn train_multilabel(
    mut net: NeuralNet,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    params: &NnTrainParams,
) -> Result<NnTrainReport> {
    ensure_dims!(inputs.len() == targets.len(), "{} inputs for {} targets", inputs.len(), targets.len());
    if inputs.is_empty() {
        return Err(Error::Train("no training examples".into()));
    }
    for (x, t) in inputs.iter().zip(targets) {
        ensure_dims!(x.len() == net.input_len(), "input has {} values, network expects {}", x.len(), net.input_len());
        ensure_dims!(t.len() == net.classes.len(), "target has {} classes, network has {}", t.len(), net.classes.len());
    }
    for c in 0..net.classes.len() {
        if !(targets.iter().any(|t| t[c] > 0.0) && targets.iter().any(|t| t[c] < 0.0)) {
            return Err(Error::Train(format!("class {} needs positive and negative examples", net.classes[c])));
        }
    }
    let batch = params.batch.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut loss_trace = vec![multilabel_hinge_loss(&net, inputs, targets)?];
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut grads: Vec<(Vec<f64>, Vec<f64>)> =
                net.layers.iter().map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.outputs])).collect();
            for &i in chunk {
                accumulate_gradient(&net, &inputs[i], &targets[i], &mut grads)?;
            }
            let step = params.learning_rate / chunk.len() as f64;
            for (layer, (gw, gb)) in net.layers.iter_mut().zip(&grads) {
                for (w, g) in layer.weights.iter_mut().zip(gw) {
                    *w -= step * g;
                }
                for (b, g) in layer.bias.iter_mut().zip(gb) {
                    *b -= step * g;
                }
            }
        }
        loss_trace.push(multilabel_hinge_loss(&net, inputs, targets)?);
    }
    Ok(NnTrainReport { net, loss_trace })
}

fn accumulate_gradient(net: &NeuralNet, x: &[f64], t: &[f64], grads: &mut [(Vec<f64>, Vec<f64>)]) -> Result<()> {
    let pass = net.forward(x)?;
    // d loss / d output
    let mut delta: Vec<f64> = pass
        .output()
        .iter()
        .zip(t)
        .map(|(f, y)| if y * f < 1.0 { -y } else { 0.0 })
        .collect();
    for (li, layer) in net.layers.iter().enumerate().rev() {
        if layer.activation == Activation::Relu {
            for (d, z) in delta.iter_mut().zip(&pass.pre_activations[li]) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let input = &pass.activations[li];
        let (gw, gb) = &mut grads[li];
        let mut below = vec![0.0; layer.inputs];
        for j in 0..layer.outputs {
            let d = delta[j];
            if d == 0.0 {
                continue;
            }
            gb[j] += d;
            let row = layer.row(j);
            for i in 0..layer.inputs {
                gw[j * layer.inputs + i] += d * input[i];
                below[i] += d * row[i];
            }
        }
        delta = below;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_shapes_and_relu() {
        let l1 = DenseLayer::new(4, 2, vec![1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0], Activation::Relu).unwrap();
        let l2 = DenseLayer::new(2, 1, vec![1.0, 1.0], vec![0.5], Activation::Identity).unwrap();
        let net = NeuralNet::new(2, vec![l1, l2], vec!["a".into()]).unwrap();
        let pass = net.forward(&[2.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(pass.activations[1], vec![2.0, 0.0]);
        assert_eq!(pass.output(), &[2.5]);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn inconsistent_layers_rejected() {
        let l1 = DenseLayer::new(4, 3, vec![0.0; 12], vec![0.0; 3], Activation::Relu).unwrap();
        let l2 = DenseLayer::new(2, 1, vec![0.0; 2], vec![0.0], Activation::Identity).unwrap();
        assert!(matches!(NeuralNet::new(2, vec![l1, l2], vec!["a".into()]), Err(Error::Dim(_))));
    }

    #[test]
    fn preprocess_box_average() {
        let img = Image::new(4, 4, 1, (0..16).map(|v| v as f64 / 15.0).collect()).unwrap();
        let x = preprocess(&img, 2).unwrap();
        let expected = (0.0 + 1.0 + 4.0 + 5.0) / 4.0 / 15.0 - 0.5;
        assert!((x[0] - expected).abs() < 1e-15);
        assert!(preprocess(&img, 3).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let net = NeuralNet::initialize(2, &[3], vec!["a".into(), "b".into()], 1).unwrap();
        let inputs = vec![vec![0.5, -0.5, 0.1, 0.0], vec![-0.5, 0.5, 0.0, 0.2]];
        let targets = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        let params = NnTrainParams { epochs: 5, learning_rate: 0.0, batch: 1, seed: 3 };
        let out = train_multilabel(net.clone(), &inputs, &targets, &params).unwrap();
        assert_eq!(out.net, net);
    }
}
