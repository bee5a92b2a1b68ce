//! Runtime invariant checks behind the `verify` subcommand.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{NnRule, PipelineConfig};
use crate::descriptors::DescriptorSet;
use crate::error::Result;
use crate::evaluation::{morf_order, morf_replace_ordered, Replacement};
use crate::fisher::{aggregate, hellinger_check};
use crate::lrp::{relevance_r2, relevance_r3, FvPipeline, MappingSource, MappingView, R2Variant};
use crate::nn::{lrp_alphabeta, lrp_epsilon, NeuralNet};

const REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed deviation over all cases.
    pub worst: f64,
    pub cases: usize,
    pub detail: String,
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn check(name: &str, worst: f64, cases: usize, tol: f64, what: &str) -> CheckResult {
    let passed = cases > 0 && worst <= tol;
    CheckResult { name: name.into(), passed, worst, cases, detail: format!("{what} {worst:.3e} over {cases} cases (tolerance {tol:.0e})") }
}

/// R² computed from the explicitly stored mapping matrix, in the same
/// summation order as the streaming pass.
fn materialized_r2(r3: &[f64], view: &MappingView<'_, Vec<f64>>, variant: R2Variant) -> Vec<f64> {
    let n = view.descriptors();
    let rows: Vec<Vec<f64>> = (0..n).map(|l| view.row(l)).collect();
    let fv_len = r3.len();
    let mut coef = vec![0.0; fv_len];
    let mut nonzero = vec![false; fv_len];
    let mut z_rel = 0.0;
    for d in 0..fv_len {
        let (mut col, mut abs) = (0.0, 0.0);
        for row in &rows {
            col += row[d];
            abs += row[d].abs();
            nonzero[d] |= row[d] != 0.0;
        }
        if !nonzero[d] {
            z_rel += r3[d];
            continue;
        }
        let den = match variant {
            R2Variant::Plain => col,
            R2Variant::Epsilon { epsilon } => col + epsilon * if col >= 0.0 { 1.0 } else { -1.0 },
            R2Variant::Absolute => abs,
        };
        coef[d] = r3[d] / den;
    }
    let xi = z_rel / n as f64;
    rows.iter()
        .map(|row| {
            let mut r = 0.0;
            for d in 0..fv_len {
                if nonzero[d] {
                    r += coef[d] * if variant == R2Variant::Absolute { row[d].abs() } else { row[d] };
                }
            }
            r + xi
        })
        .collect()
}

/// Conservation, Hellinger, streaming-versus-materialized R², MoRF
/// incremental update and NN bias accounting on the given test data.
pub fn run_checks(
    fv: &FvPipeline<'_>,
    projected: &[DescriptorSet],
    net: &NeuralNet,
    nn_inputs: &[Vec<f64>],
    class: usize,
    cfg: &PipelineConfig,
) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let phis = projected.iter().map(|ds| fv.features(ds)).collect::<Result<Vec<_>>>()?;
    let raws = projected.iter().map(|ds| aggregate(fv.gmm, &ds.descriptors).map(|r| r.values)).collect::<Result<Vec<_>>>()?;

    let mut worst = 0.0f64;
    for phi in &phis {
        let r3 = relevance_r3(fv.svm, phi, class)?;
        worst = worst.max(rel_err(r3.values.iter().sum(), r3.score));
    }
    out.push(check("r3-conservation", worst, phis.len(), REL_TOL, "relative error of sum R3 against f"));

    let (mut worst2, mut worst1) = (0.0f64, 0.0f64);
    for ds in projected {
        let e = fv.explain_descriptors(ds, class, R2Variant::Absolute)?;
        worst2 = worst2.max(rel_err(e.r2.sum(), e.score));
        worst1 = worst1.max(rel_err(e.heatmap.sum(), e.score));
    }
    out.push(check("r2-conservation-abs", worst2, projected.len(), REL_TOL, "relative error of sum R2 against f"));
    out.push(check("r1-conservation-abs", worst1, projected.len(), REL_TOL, "relative error of sum R1 against f"));

    let mut worst = 0.0f64;
    for pair in raws.windows(2) {
        let (lhs, rhs) = hellinger_check(&pair[0], &pair[1])?;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    out.push(check("hellinger", worst, raws.len().saturating_sub(1), 1e-10, "kernel difference over max(1, |lhs|)"));

    let mut mismatches = 0usize;
    let mut cases = 0usize;
    for (ds, phi) in projected.iter().zip(&phis).take(3) {
        let vectors: Vec<Vec<f64>> = ds.descriptors.iter().map(|d| d.vector.clone()).collect();
        let view = MappingView::new(fv.gmm, &vectors)?;
        let r3 = relevance_r3(fv.svm, phi, class)?;
        for variant in [cfg.lrp.variant(), R2Variant::Absolute] {
            let streamed = relevance_r2(&r3, &view, variant)?;
            let stored = materialized_r2(&r3.values, &view, variant);
            mismatches += streamed.values.iter().zip(&stored).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
            cases += 1;
        }
    }
    out.push(check("r2-streaming", mismatches as f64, cases, 0.0, "bitwise mismatching entries"));

    let mut worst = 0.0f64;
    let mut cases = 0usize;
    let params = cfg.morf_params();
    for (i, ds) in projected.iter().enumerate().take(3) {
        if params.batch * params.steps > ds.len() {
            continue;
        }
        let e = fv.explain_descriptors(ds, class, cfg.lrp.variant())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        let trace = morf_replace_ordered(
            ds,
            fv.gmm,
            &fv.svm.classes[class],
            &morf_order(&e.r2.values),
            "lrp",
            params.batch,
            params.steps,
            Replacement::Gmm,
            &mut rng,
        )?;
        let mut replaced: Vec<Vec<f64>> = ds.descriptors.iter().map(|d| d.vector.clone()).collect();
        for (l, v) in &trace.replacements {
            replaced[*l] = v.clone();
        }
        let fresh = aggregate(fv.gmm, &replaced)?.values;
        for (a, b) in trace.final_fv.iter().zip(&fresh) {
            worst = worst.max((a - b).abs());
        }
        cases += 1;
    }
    out.push(check("morf-incremental", worst, cases, 1e-10, "max abs FV difference"));

    let mut worst = 0.0f64;
    let target = class.min(net.classes.len() - 1);
    for x in nn_inputs {
        let rel = match cfg.nn.rule {
            NnRule::Epsilon => lrp_epsilon(net, x, target, cfg.nn.epsilon)?,
            NnRule::AlphaBeta => lrp_alphabeta(net, x, target, cfg.nn.alpha, cfg.nn.beta, true)?,
        };
        let sums = rel.layer_sums();
        for k in 0..rel.bias_share.len() {
            let rhs = sums[k] + rel.bias_share[k] + rel.absorbed[k];
            let scale = sums[k + 1].abs().max(sums[k].abs()).max(rel.bias_share[k].abs()).max(rel.absorbed[k].abs());
            if scale > 0.0 {
                worst = worst.max((sums[k + 1] - rhs).abs() / scale);
            }
        }
    }
    out.push(check("nn-bias-accounting", worst, nn_inputs.len(), REL_TOL, "relative accounting gap"));

    if fv.svm.dual.is_some() {
        let mut worst = 0.0f64;
        for phi in &phis {
            worst = worst.max(rel_err(fv.svm.score(phi, class)?, fv.svm.score_dual(phi, class)?));
        }
        out.push(check("svm-primal-dual", worst, phis.len(), 1e-8, "relative score difference"));
    }
    Ok(out)
}
