mod common;

use common::*;
use fvlrp::descriptors::pca_fit;
use fvlrp::gmm::{em_fit, EmParams};
use fvlrp::svm::{self, eer_threshold, SvmParams};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn pca_finds_the_cluster_axis() {
    let mut r = rng(21);
    let axis = [3.0f64, 4.0, 0.0, 12.0];
    let norm = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
    let data: Vec<Vec<f64>> = (0..400)
        .map(|i| {
            let s = if i % 2 == 0 { 5.0 } else { -5.0 };
            axis.iter().map(|a| s * a / norm + 0.1 * normal(&mut r)).collect()
        })
        .collect();
    let pca = pca_fit(&data, 1).unwrap();
    let dot: f64 = pca.basis_row(0).iter().zip(&axis).map(|(b, a)| b * a / norm).sum();
    let angle = dot.abs().min(1.0).acos();
    assert!(angle < 1e-2, "angle {angle}");
}

#[test]
fn em_recovers_separated_clusters() {
    let mut r = rng(22);
    let centers = [[-6.0, 0.0], [6.0, 1.0], [0.0, 8.0]];
    let data: Vec<Vec<f64>> = (0..900).map(|i| centers[i % 3].iter().map(|c| c + 0.5 * normal(&mut r)).collect()).collect();
    let fit = em_fit(&data, &EmParams { components: 3, seed: 1, max_iter: 200, tol: 1e-9 }).unwrap();
    for c in &centers {
        let best = (0..3)
            .map(|k| fit.model.mean(k).iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.15, "center {c:?} off by {best}");
    }
    for k in 0..3 {
        assert!((fit.model.weight(k) - 1.0 / 3.0).abs() < 0.02);
    }
}

#[test]
fn em_single_component_is_the_sample_moments() {
    let mut r = rng(23);
    let data: Vec<Vec<f64>> = (0..200).map(|_| vec![1.0 + normal(&mut r), 3.0 * normal(&mut r)]).collect();
    let fit = em_fit(&data, &EmParams { components: 1, seed: 0, max_iter: 10, tol: 0.0 }).unwrap();
    for dim in 0..2 {
        let mean = data.iter().map(|v| v[dim]).sum::<f64>() / 200.0;
        let var = data.iter().map(|v| (v[dim] - mean).powi(2)).sum::<f64>() / 200.0;
        assert!((fit.model.mean(0)[dim] - mean).abs() < 1e-12);
        assert!((fit.model.sigma(0)[dim] - var.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn svm_is_invariant_to_duplicating_the_data() {
    let mut r = rng(24);
    let feats: Vec<Vec<f64>> = (0..40).map(|_| (0..5).map(|_| normal(&mut r)).collect()).collect();
    let labels: Vec<f64> = feats.iter().map(|f| if f[0] + 0.3 * f[1] > 0.0 { 1.0 } else { -1.0 }).collect();
    let names = vec!["c".to_string()];
    let params = SvmParams { c: 10.0, epochs: 300, seed: 0 };
    let once = svm::train(&feats, &names, std::slice::from_ref(&labels), &params).unwrap().model;
    let twice_feats: Vec<Vec<f64>> = feats.iter().chain(&feats).cloned().collect();
    let twice_labels: Vec<f64> = labels.iter().chain(&labels).copied().collect();
    let twice = svm::train(&twice_feats, &names, &[twice_labels], &params).unwrap().model;
    for (a, b) in once.classes[0].weights.iter().zip(&twice.classes[0].weights) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!((once.classes[0].bias - twice.classes[0].bias).abs() < 1e-9);
}

fn brute_force_eer(scores: &[f64], positive: &[bool]) -> f64 {
    let n_pos = positive.iter().filter(|p| **p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let mut best = f64::INFINITY;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut taus = vec![sorted[0] - 1.0];
    taus.extend(sorted.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    taus.push(sorted[sorted.len() - 1] + 1.0);
    for tau in taus {
        let fp = scores.iter().zip(positive).filter(|(s, p)| !**p && **s > tau).count() as f64 / n_neg;
        let fneg = scores.iter().zip(positive).filter(|(s, p)| **p && **s <= tau).count() as f64 / n_pos;
        best = best.min((fp - fneg).abs());
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eer_threshold_attains_the_smallest_gap(seed in any::<u64>(), n in 4usize..30) {
        let mut r = rng(seed);
        let scores: Vec<f64> = (0..n).map(|_| (r.random_range(-20..20) as f64) / 4.0).collect();
        let mut positive: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        positive[0] = true;
        positive[1] = false;
        let tau = eer_threshold(&scores, &positive).unwrap();
        let n_pos = positive.iter().filter(|p| **p).count() as f64;
        let n_neg = n as f64 - n_pos;
        let fp = scores.iter().zip(&positive).filter(|(s, p)| !**p && **s > tau).count() as f64 / n_neg;
        let fneg = scores.iter().zip(&positive).filter(|(s, p)| **p && **s <= tau).count() as f64 / n_pos;
        prop_assert!(((fp - fneg).abs() - brute_force_eer(&scores, &positive)).abs() < 1e-12);
    }

    #[test]
    fn em_log_likelihood_never_decreases(seed in any::<u64>(), k in 1usize..5) {
        let mut r = rng(seed);
        let data: Vec<Vec<f64>> = (0..120).map(|_| (0..3).map(|_| 2.0 * normal(&mut r)).collect()).collect();
        let fit = em_fit(&data, &EmParams { components: k, seed, max_iter: 40, tol: 0.0 }).unwrap();
        for w in fit.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8);
        }
    }
}
