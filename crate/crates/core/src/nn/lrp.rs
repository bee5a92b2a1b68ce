use crate::error::{ensure_dims, Error, Result};
use crate::imaging::Heatmap;

use super::NeuralNet;

/// Relevance at every layer of one explanation, from the input (`layers[0]`)
/// up to the output (`layers[last]`).
///
/// For the transition feeding layer `k + 1` from layer `k`,
/// `Σ R^(k+1) = Σ R^(k) + bias_share[k] + absorbed[k]`: the bias terms
/// take `bias_share` and the stabiliser (or a vanishing α/β part) takes
/// `absorbed`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRelevance {
    pub class: usize,
    pub score: f64,
    pub layers: Vec<Vec<f64>>,
    pub bias_share: Vec<f64>,
    pub absorbed: Vec<f64>,
}

impl LayerRelevance {
    pub fn input(&self) -> &[f64] {
        &self.layers[0]
    }

    pub fn layer_sums(&self) -> Vec<f64> {
        self.layers.iter().map(|r| r.iter().sum()).collect()
    }
}

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn top_relevance(net: &NeuralNet, outputs: &[f64], class: usize) -> Result<Vec<f64>> {
    if class >= net.classes.len() {
        return Err(Error::Key(format!("class index {class} out of range for {} classes", net.classes.len())));
    }
    let mut top = vec![0.0; outputs.len()];
    top[class] = outputs[class];
    Ok(top)
}

/// ε-rule: `R_i = Σ_j z_ij / (z_j + ε·sign(z_j)) R_j` with `sign(0) = +1`.
///
/// With `ε = 0` a unit with `z_j = 0` and nonzero relevance cannot be
/// redistributed and yields `ZeroDenominator`.
pub fn lrp_epsilon(net: &NeuralNet, input: &[f64], class: usize, epsilon: f64) -> Result<LayerRelevance> {
    if epsilon.is_nan() || epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::Validation(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    let pass = net.forward(input)?;
    let mut rel = top_relevance(net, pass.output(), class)?;
    let n = net.layers.len();
    let mut layers = vec![Vec::new(); n + 1];
    let mut bias_share = vec![0.0; n];
    let mut absorbed = vec![0.0; n];
    for (li, layer) in net.layers.iter().enumerate().rev() {
        let x = &pass.activations[li];
        let z = &pass.pre_activations[li];
        let mut below = vec![0.0; layer.inputs];
        for (j, &rj) in rel.iter().enumerate() {
            if rj == 0.0 {
                continue;
            }
            let stab = epsilon * sign(z[j]);
            let denom = z[j] + stab;
            if denom == 0.0 {
                return Err(Error::ZeroDenominator(format!("layer {li} unit {j}: z_j = 0 with epsilon = 0")));
            }
            let s = rj / denom;
            let row = layer.row(j);
            for i in 0..layer.inputs {
                below[i] += row[i] * x[i] * s;
            }
            bias_share[li] += layer.bias[j] * s;
            absorbed[li] += stab * s;
        }
        layers[li + 1] = rel;
        rel = below;
    }
    layers[0] = rel;
    Ok(LayerRelevance { class, score: pass.output()[class], layers, bias_share, absorbed })
}

/// αβ-rule: `R_i = Σ_j (α z_ij⁺/z_j⁺ − β z_ij⁻/z_j⁻) R_j`, with a term set to
/// zero when its denominator vanishes. The bias enters `z_j⁺` or `z_j⁻`
/// according to its sign. `α − β = 1` is required unless `enforce` is off.
pub fn lrp_alphabeta(
    net: &NeuralNet,
    input: &[f64],
    class: usize,
    alpha: f64,
    beta: f64,
    enforce: bool,
) -> Result<LayerRelevance> {
    if enforce && (alpha - beta - 1.0).abs() > 1e-12 {
        return Err(Error::Validation(format!("alpha - beta must be 1, got alpha={alpha} beta={beta}")));
    }
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(Error::Validation("alpha and beta must be non-negative".into()));
    }
    let pass = net.forward(input)?;
    let mut rel = top_relevance(net, pass.output(), class)?;
    let n = net.layers.len();
    let mut layers = vec![Vec::new(); n + 1];
    let mut bias_share = vec![0.0; n];
    let mut absorbed = vec![0.0; n];
    for (li, layer) in net.layers.iter().enumerate().rev() {
        let x = &pass.activations[li];
        let mut below = vec![0.0; layer.inputs];
        for (j, &rj) in rel.iter().enumerate() {
            if rj == 0.0 {
                continue;
            }
            let row = layer.row(j);
            let b = layer.bias[j];
            let (mut zp, mut zn) = (b.max(0.0), b.min(0.0));
            for i in 0..layer.inputs {
                let zij = row[i] * x[i];
                if zij > 0.0 {
                    zp += zij;
                } else {
                    zn += zij;
                }
            }
            let sp = if zp != 0.0 { alpha * rj / zp } else { 0.0 };
            let sn = if zn != 0.0 { beta * rj / zn } else { 0.0 };
            for i in 0..layer.inputs {
                let zij = row[i] * x[i];
                below[i] += if zij > 0.0 { zij * sp } else { -zij * sn };
            }
            bias_share[li] += b.max(0.0) * sp - b.min(0.0) * sn;
            let passed = (if zp != 0.0 { alpha } else { 0.0 }) - (if zn != 0.0 { beta } else { 0.0 });
            absorbed[li] += rj * (1.0 - passed);
        }
        layers[li + 1] = rel;
        rel = below;
    }
    layers[0] = rel;
    Ok(LayerRelevance { class, score: pass.output()[class], layers, bias_share, absorbed })
}

/// Reshapes input relevance (`side`×`side`) into a `width`×`height` heatmap,
/// spreading each input value evenly over its source block.
pub fn nn_heatmap(rel: &LayerRelevance, side: usize, width: usize, height: usize) -> Result<Heatmap> {
    let input = rel.input();
    ensure_dims!(input.len() == side * side, "input relevance has {} values, expected {side}x{side}", input.len());
    if side == 0 || !width.is_multiple_of(side) || !height.is_multiple_of(side) || width / side != height / side {
        return Err(Error::Dim(format!("cannot upsample {side}x{side} to {width}x{height} by an integer factor")));
    }
    let f = width / side;
    let area = (f * f) as f64;
    let values = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| input[(y / f) * side + x / f] / area)
        .collect();
    Heatmap::new(width, height, values)
}
