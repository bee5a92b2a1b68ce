//! Seeded generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use fvlrp::descriptors::{Area, DescriptorSet, LocalDescriptor};
use fvlrp::gmm::GmmModel;
use fvlrp::lrp::R2Variant;
use fvlrp::nn::{Activation, DenseLayer, NeuralNet};
use fvlrp::svm::{ClassModel, SvmModel, SvmParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn random_gmm(rng: &mut ChaCha8Rng, k: usize, d: usize) -> GmmModel {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    // make the weights sum to one exactly in floating point
    let rest: f64 = weights[1..].iter().sum();
    weights[0] = 1.0 - rest;
    let means = (0..k * d).map(|_| normal(rng)).collect();
    let sigmas = (0..k * d).map(|_| rng.random_range(0.5..1.5)).collect();
    GmmModel::new(d, weights, means, sigmas).unwrap()
}

/// `n` descriptors of dimension `d` with receptive fields inside a
/// `width`×`height` image.
pub fn random_descriptors(rng: &mut ChaCha8Rng, n: usize, d: usize, width: usize, height: usize) -> DescriptorSet {
    let descriptors = (0..n)
        .map(|_| {
            let w = rng.random_range(1..=width);
            let h = rng.random_range(1..=height);
            let area = Area { x: rng.random_range(0..=width - w), y: rng.random_range(0..=height - h), w, h };
            LocalDescriptor { vector: (0..d).map(|_| 1.5 * normal(rng)).collect(), area }
        })
        .collect();
    DescriptorSet { width, height, descriptors }
}

pub fn random_svm(rng: &mut ChaCha8Rng, dim: usize) -> SvmModel {
    let class = ClassModel { name: "c".into(), weights: (0..dim).map(|_| normal(rng)).collect(), bias: normal(rng) };
    SvmModel { classes: vec![class], params: SvmParams::default(), dual: None }
}

/// Ψ_λ(l) from the textbook formulas: densities evaluated directly rather
/// than in the log domain.
pub fn oracle_embedding(gmm: &GmmModel, l: &[f64]) -> Vec<f64> {
    let (k, d) = (gmm.components(), gmm.dim());
    let dens: Vec<f64> = (0..k)
        .map(|c| {
            let mut p = gmm.weight(c);
            for (r, v) in l.iter().enumerate().take(d) {
                let s = gmm.sigma(c)[r];
                let t = (v - gmm.mean(c)[r]) / s;
                p *= (-0.5 * t * t).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            }
            p
        })
        .collect();
    let total: f64 = dens.iter().sum();
    let mut out = vec![0.0; (1 + 2 * d) * k];
    for c in 0..k {
        let g = dens[c] / total;
        let pi = gmm.weight(c);
        out[c] = (g - pi) / pi.sqrt();
        for r in 0..d {
            let t = (l[r] - gmm.mean(c)[r]) / gmm.sigma(c)[r];
            out[k + c * d + r] = g * t / pi.sqrt();
            out[k + k * d + c * d + r] = g * (t * t - 1.0) / (2.0 * pi).sqrt();
        }
    }
    out
}

/// R² from an explicitly stored matrix `rows[l][d]`, summing in dimension
/// order within each descriptor.
pub fn materialized_r2(r3: &[f64], rows: &[Vec<f64>], variant: R2Variant) -> Vec<f64> {
    let n = rows.len();
    let len = r3.len();
    let mut coef = vec![0.0; len];
    let mut live = vec![false; len];
    let mut zero_rel = 0.0;
    for d in 0..len {
        let col: Vec<f64> = rows.iter().map(|r| r[d]).collect();
        live[d] = col.iter().any(|m| *m != 0.0);
        if !live[d] {
            zero_rel += r3[d];
            continue;
        }
        let sum = col.iter().fold(0.0, |a, m| a + m);
        let den = match variant {
            R2Variant::Plain => sum,
            R2Variant::Epsilon { epsilon } => sum + if sum >= 0.0 { epsilon } else { -epsilon },
            R2Variant::Absolute => col.iter().fold(0.0, |a, m| a + m.abs()),
        };
        coef[d] = r3[d] / den;
    }
    let xi = zero_rel / n as f64;
    rows.iter()
        .map(|row| {
            let mut r = 0.0;
            for d in 0..len {
                if live[d] {
                    let m = if variant == R2Variant::Absolute { row[d].abs() } else { row[d] };
                    r += coef[d] * m;
                }
            }
            r + xi
        })
        .collect()
}

/// ReLU net with the given layer sizes, identity output, optional biases.
pub fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize], with_bias: bool) -> NeuralNet {
    let side = (sizes[0] as f64).sqrt() as usize;
    assert_eq!(side * side, sizes[0], "input size must be a square");
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(i, s)| {
            let weights = (0..s[0] * s[1]).map(|_| normal(rng)).collect();
            let bias = (0..s[1]).map(|_| if with_bias { 0.5 * normal(rng) } else { 0.0 }).collect();
            let act = if i + 2 == sizes.len() { Activation::Identity } else { Activation::Relu };
            DenseLayer::new(s[0], s[1], weights, bias, act).unwrap()
        })
        .collect();
    NeuralNet::new(side, layers, (0..sizes[sizes.len() - 1]).map(|c| format!("c{c}")).collect()).unwrap()
}

/// Every z_ij of every layer, materialised as `z[layer][j][i]`, plus the
/// activations feeding each layer.
pub struct Contributions {
    pub z: Vec<Vec<Vec<f64>>>,
    pub bias: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub fn contributions(net: &NeuralNet, input: &[f64]) -> Contributions {
    let mut x = input.to_vec();
    let mut z = Vec::new();
    let mut bias = Vec::new();
    for layer in &net.layers {
        let zl: Vec<Vec<f64>> = (0..layer.outputs).map(|j| (0..layer.inputs).map(|i| layer.weight(j, i) * x[i]).collect()).collect();
        let next: Vec<f64> = zl
            .iter()
            .zip(&layer.bias)
            .map(|(row, b)| {
                let s = row.iter().sum::<f64>() + b;
                match layer.activation {
                    Activation::Relu => s.max(0.0),
                    Activation::Identity => s,
                }
            })
            .collect();
        z.push(zl);
        bias.push(layer.bias.clone());
        x = next;
    }
    Contributions { z, bias, output: x }
}

/// Brute-force ε-rule relevance at every layer (index 0 is the input).
pub fn oracle_epsilon(c: &Contributions, class: usize, eps: f64) -> Vec<Vec<f64>> {
    let mut rel = vec![0.0; c.output.len()];
    rel[class] = c.output[class];
    let mut out = vec![rel.clone()];
    for (zl, bl) in c.z.iter().zip(&c.bias).rev() {
        let inputs = zl[0].len();
        let mut below = vec![0.0; inputs];
        for (j, row) in zl.iter().enumerate() {
            let zj = row.iter().sum::<f64>() + bl[j];
            let den = zj + eps * if zj >= 0.0 { 1.0 } else { -1.0 };
            for i in 0..inputs {
                if rel[j] != 0.0 {
                    below[i] += row[i] / den * rel[j];
                }
            }
        }
        out.push(below.clone());
        rel = below;
    }
    out.reverse();
    out
}

/// Brute-force αβ-rule relevance at every layer (index 0 is the input).
pub fn oracle_alphabeta(c: &Contributions, class: usize, alpha: f64, beta: f64) -> Vec<Vec<f64>> {
    let mut rel = vec![0.0; c.output.len()];
    rel[class] = c.output[class];
    let mut out = vec![rel.clone()];
    for (zl, bl) in c.z.iter().zip(&c.bias).rev() {
        let inputs = zl[0].len();
        let mut below = vec![0.0; inputs];
        for (j, row) in zl.iter().enumerate() {
            let zp: f64 = row.iter().filter(|v| **v > 0.0).sum::<f64>() + bl[j].max(0.0);
            let zn: f64 = row.iter().filter(|v| **v < 0.0).sum::<f64>() + bl[j].min(0.0);
            for i in 0..inputs {
                let v = row[i];
                let pos = if zp != 0.0 && v > 0.0 { alpha * v / zp } else { 0.0 };
                let neg = if zn != 0.0 && v < 0.0 { beta * v / zn } else { 0.0 };
                below[i] += (pos - neg) * rel[j];
            }
        }
        out.push(below.clone());
        rel = below;
    }
    out.reverse();
    out
}

/// True when every unit carrying relevance has both a positive and a
/// negative contribution, the precondition for αβ conservation.
pub fn alphabeta_well_posed(c: &Contributions, class: usize, alpha: f64, beta: f64) -> bool {
    let layers = oracle_alphabeta(c, class, alpha, beta);
    for (li, zl) in c.z.iter().enumerate() {
        for (j, row) in zl.iter().enumerate() {
            if layers[li + 1][j] == 0.0 {
                continue;
            }
            let has_pos = row.iter().any(|v| *v > 0.0) || c.bias[li][j] > 0.0;
            let has_neg = row.iter().any(|v| *v < 0.0) || c.bias[li][j] < 0.0;
            if !(has_pos && has_neg) {
                return false;
            }
        }
    }
    true
}
