//! One-vs-rest linear SVMs over improved Fisher vectors.
//!
//! Each class minimises `λ/2 ‖w‖² + (1/n) Σ_i max(0, 1 − y_i (w·φ_i + b))`
//! with `λ = 1/C`, by full-batch subgradient steps of size `1/(λ(t+1))`.
//! The returned parameters are the best running average of the iterates, so
//! the recorded objective never increases. Because every iterate is a linear
//! combination of the training vectors, the solver also tracks the expansion
//! coefficients `α_i y_i` (the dual view) alongside `w`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dims, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    pub name: String,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ClassModel {
    /// f(x) = w·φ(x) + b, summed in dimension order.
    pub fn score(&self, phi: &[f64]) -> Result<f64> {
        ensure_dims!(phi.len() == self.weights.len(), "input has {} dims, model has {}", phi.len(), self.weights.len());
        Ok(self.score_unchecked(phi))
    }

    pub(crate) fn score_unchecked(&self, phi: &[f64]) -> f64 {
        let mut s = 0.0;
        for (w, x) in self.weights.iter().zip(phi) {
            s += w * x;
        }
        s + self.bias
    }
}

/// Training points and coefficients with `w = Σ_i coef_i φ(x_i)`, where
/// `coef_i = α_i y_i` per class.
#[derive(Debug, Clone, PartialEq)]
pub struct DualView {
    pub support: Vec<Vec<f64>>,
    /// `coefficients[c][i] = α_i y_i` for class `c`.
    pub coefficients: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub epochs: usize,
    /// Recorded with the model; the full-batch solver draws no randomness.
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { c: 1.0, epochs: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub classes: Vec<ClassModel>,
    pub params: SvmParams,
    pub dual: Option<DualView>,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.weights.len())
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Key(format!("unknown class {name:?}")))
    }

    pub fn class(&self, index: usize) -> &ClassModel {
        &self.classes[index]
    }

    pub fn score(&self, phi: &[f64], class: usize) -> Result<f64> {
        self.classes
            .get(class)
            .ok_or_else(|| Error::Key(format!("class index {class} out of range")))?
            .score(phi)
    }

    /// Scores via the stored expansion: `Σ_i α_i y_i φ(x_i)·φ(x) + b`.
    pub fn score_dual(&self, phi: &[f64], class: usize) -> Result<f64> {
        let dual = self.dual.as_ref().ok_or_else(|| Error::Validation("model has no dual view".into()))?;
        ensure_dims!(phi.len() == self.dim(), "input has {} dims, model has {}", phi.len(), self.dim());
        let mut s = 0.0;
        for (coef, sv) in dual.coefficients[class].iter().zip(&dual.support) {
            s += coef * sv.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(s + self.classes[class].bias)
    }
}

/// Per-class score and thresholded decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: String,
    pub score: f64,
    pub present: bool,
}

/// Labels every class with `score > threshold`. Missing thresholds default to 0.
pub fn predict_multilabel(
    model: &SvmModel,
    phi: &[f64],
    thresholds: &[(String, f64)],
) -> Result<Vec<Prediction>> {
    for (name, _) in thresholds {
        model.class_index(name)?;
    }
    model
        .classes
        .iter()
        .map(|c| {
            let score = c.score(phi)?;
            let tau = thresholds.iter().find(|(n, _)| *n == c.name).map_or(0.0, |t| t.1);
            Ok(Prediction { class: c.name.clone(), score, present: score > tau })
        })
        .collect()
}

/// Objective `λ/2 ‖w‖² + mean hinge` for one class.
pub fn objective(weights: &[f64], bias: f64, lambda: f64, features: &[Vec<f64>], labels: &[f64]) -> f64 {
    let reg = 0.5 * lambda * weights.iter().map(|w| w * w).sum::<f64>();
    let hinge: f64 = features
        .iter()
        .zip(labels)
        .map(|(x, y)| {
            let s: f64 = weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias;
            (1.0 - y * s).max(0.0)
        })
        .sum();
    reg + hinge / features.len() as f64
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: SvmModel,
    /// Per class, the objective of the kept iterate after each epoch
    /// (index 0 is the zero initialisation).
    pub objective_traces: Vec<Vec<f64>>,
}

/// Trains one binary SVM per class. `labels[c][i]` is ±1 for class `c` and
/// example `i`.
pub fn train(
    features: &[Vec<f64>],
    class_names: &[String],
    labels: &[Vec<f64>],
    params: &SvmParams,
) -> Result<TrainReport> {
    let n = features.len();
    if n == 0 {
        return Err(Error::Train("no training examples".into()));
    }
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::Train(format!("C must be positive, got {}", params.c)));
    }
    ensure_dims!(labels.len() == class_names.len(), "{} label rows for {} classes", labels.len(), class_names.len());
    let dim = features[0].len();
    for x in features {
        ensure_dims!(x.len() == dim, "feature of length {} among length {dim}", x.len());
    }
    let lambda = 1.0 / params.c;
    let mut classes = Vec::with_capacity(class_names.len());
    let mut coefficients = Vec::with_capacity(class_names.len());
    let mut traces = Vec::with_capacity(class_names.len());
    for (name, y) in class_names.iter().zip(labels) {
        ensure_dims!(y.len() == n, "class {name}: {} labels for {n} examples", y.len());
        if y.iter().any(|v| *v != 1.0 && *v != -1.0) {
            return Err(Error::Train(format!("class {name}: labels must be ±1")));
        }
        if !(y.contains(&1.0) && y.contains(&-1.0)) {
            return Err(Error::Train(format!("class {name} needs positive and negative examples")));
        }
        let fit = train_binary(features, y, lambda, params.epochs);
        classes.push(ClassModel { name: name.clone(), weights: fit.weights, bias: fit.bias });
        coefficients.push(fit.coefficients);
        traces.push(fit.trace);
    }
    let model = SvmModel {
        classes,
        params: *params,
        dual: Some(DualView { support: features.to_vec(), coefficients }),
    };
    Ok(TrainReport { model, objective_traces: traces })
}

struct BinaryFit {
    weights: Vec<f64>,
    bias: f64,
    coefficients: Vec<f64>,
    trace: Vec<f64>,
}

fn train_binary(features: &[Vec<f64>], y: &[f64], lambda: f64, epochs: usize) -> BinaryFit {
    let n = features.len();
    let dim = features[0].len();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut coef = vec![0.0; n];
    let mut avg_w = vec![0.0; dim];
    let mut avg_b = 0.0;
    let mut avg_coef = vec![0.0; n];

    let mut best = (objective(&w, b, lambda, features, y), w.clone(), b, coef.clone());
    let mut trace = vec![best.0];
    let mut violators = Vec::with_capacity(n);
    for t in 1..=epochs {
        violators.clear();
        for (i, x) in features.iter().enumerate() {
            let s: f64 = w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b;
            if y[i] * s < 1.0 {
                violators.push(i);
            }
        }
        let eta = 1.0 / (lambda * (t as f64 + 1.0));
        let shrink = 1.0 - eta * lambda;
        w.iter_mut().for_each(|v| *v *= shrink);
        coef.iter_mut().for_each(|v| *v *= shrink);
        let step = eta / n as f64;
        for &i in &violators {
            coef[i] += step * y[i];
            for (wv, xv) in w.iter_mut().zip(&features[i]) {
                *wv += step * y[i] * xv;
            }
            b += step * y[i];
        }
        let frac = 1.0 / t as f64;
        for (a, v) in avg_w.iter_mut().zip(&w) {
            *a += (v - *a) * frac;
        }
        for (a, v) in avg_coef.iter_mut().zip(&coef) {
            *a += (v - *a) * frac;
        }
        avg_b += (b - avg_b) * frac;
        let obj = objective(&avg_w, avg_b, lambda, features, y);
        if obj < best.0 {
            best = (obj, avg_w.clone(), avg_b, avg_coef.clone());
        }
        trace.push(best.0);
    }
    BinaryFit { weights: best.1, bias: best.2, coefficients: best.3, trace }
}

/// Threshold equalising false-positive and false-negative rates, searched
/// over midpoints between sorted scores. Ties go to the lower threshold.
pub fn eer_threshold(scores: &[f64], positive: &[bool]) -> Result<f64> {
    ensure_dims!(scores.len() == positive.len(), "{} scores for {} labels", scores.len(), positive.len());
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Validation("EER needs positive and negative examples".into()));
    }
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut candidates = vec![sorted[0] - 1.0];
    candidates.extend(sorted.windows(2).filter(|w| w[0] < w[1]).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(sorted[sorted.len() - 1] + 1.0);
    let gap = |tau: f64| {
        let fp = scores.iter().zip(positive).filter(|(s, p)| !**p && **s > tau).count();
        let fn_ = scores.iter().zip(positive).filter(|(s, p)| **p && **s <= tau).count();
        (fp as f64 / n_neg as f64 - fn_ as f64 / n_pos as f64).abs()
    };
    let mut best = (f64::INFINITY, candidates[0]);
    for tau in candidates {
        let g = gap(tau);
        if g < best.0 {
            best = (g, tau);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn separable_pair() {
        let x = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let r = train(&x, &names(1), &[vec![1.0, -1.0]], &SvmParams::default()).unwrap();
        let m = &r.model;
        assert!(m.score(&x[0], 0).unwrap() > 0.0);
        assert!(m.score(&x[1], 0).unwrap() < 0.0);
        let trace = &r.objective_traces[0];
        assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        assert!(trace.last().unwrap() <= &trace[0]);
    }

    #[test]
    fn single_class_labels_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(train(&x, &names(1), &[vec![1.0, 1.0]], &SvmParams::default()), Err(Error::Train(_))));
    }

    #[test]
    fn score_examples() {
        let m = ClassModel { name: "a".into(), weights: vec![0.0, 0.0], bias: 0.3 };
        assert_eq!(m.score(&[5.0, -2.0]).unwrap(), 0.3);
        let m = ClassModel { name: "a".into(), weights: vec![2.0, -1.0], bias: 0.5 };
        assert!((m.score(&[0.6, 0.8]).unwrap() - 0.9).abs() < 1e-15);
        assert!(matches!(m.score(&[1.0]), Err(Error::Dim(_))));
    }

    #[test]
    fn multilabel_thresholds() {
        let model = SvmModel {
            classes: vec![
                ClassModel { name: "a".into(), weights: vec![1.0], bias: -0.1 },
                ClassModel { name: "b".into(), weights: vec![-1.0], bias: 0.8 },
            ],
            params: SvmParams::default(),
            dual: None,
        };
        let p = predict_multilabel(&model, &[1.0], &[]).unwrap();
        assert_eq!(p.iter().map(|p| p.present).collect::<Vec<_>>(), vec![true, false]);
        let p = predict_multilabel(&model, &[1.0], &[("a".into(), f64::INFINITY), ("b".into(), f64::INFINITY)]).unwrap();
        assert!(p.iter().all(|p| !p.present));
        assert!(matches!(predict_multilabel(&model, &[1.0], &[("zebra".into(), 0.0)]), Err(Error::Key(_))));
    }
}
