//! Diagonal-covariance Gaussian mixture: EM fitting, soft assignments and
//! sampling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{ensure_dims, Error, Result};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
/// Rows per E-step work unit. Fixed so partial sums combine identically for
/// any thread count.
const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    sigmas: Vec<f64>,
    /// log π_k − Σ_r log σ_kr − D/2 log 2π
    log_norm: Vec<f64>,
}

impl GmmModel {
    /// Builds a model from per-component weights, means and standard
    /// deviations (means and sigmas are `K*D`, component-major).
    pub fn new(dim: usize, weights: Vec<f64>, means: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || dim == 0 {
            return Err(Error::Validation("mixture needs K >= 1 and D >= 1".into()));
        }
        ensure_dims!(means.len() == k * dim, "means length {} != K*D = {}", means.len(), k * dim);
        ensure_dims!(sigmas.len() == k * dim, "sigmas length {} != K*D = {}", sigmas.len(), k * dim);
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Validation("mixture weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("mixture weights sum to {total}, not 1")));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Validation("means must be finite and sigmas positive".into()));
        }
        let log_norm = (0..k)
            .map(|c| {
                let log_det: f64 = sigmas[c * dim..(c + 1) * dim].iter().map(|s| s.ln()).sum();
                weights[c].ln() - log_det - 0.5 * dim as f64 * LOG_2PI
            })
            .collect();
        Ok(GmmModel { dim, weights, means, sigmas, log_norm })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn sigma(&self, k: usize) -> &[f64] {
        &self.sigmas[k * self.dim..(k + 1) * self.dim]
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Per-component log of π_k N(l; μ_k, σ_k), written into `out`.
    fn component_log_densities(&self, l: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let mu = self.mean(k);
            let sd = self.sigma(k);
            let mut q = 0.0;
            for r in 0..self.dim {
                let t = (l[r] - mu[r]) / sd[r];
                q += t * t;
            }
            *o = self.log_norm[k] - 0.5 * q;
        }
    }

    /// Writes γ_k(l) into `out` and returns log Σ_k π_k N(l; μ_k, σ_k).
    pub(crate) fn responsibilities_into(&self, l: &[f64], out: &mut [f64]) -> f64 {
        self.component_log_densities(l, out);
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
        max + sum.ln()
    }

    /// Soft assignment of `l` to every component, computed in the log domain.
    pub fn responsibilities(&self, l: &[f64]) -> Result<Vec<f64>> {
        ensure_dims!(l.len() == self.dim, "descriptor has {} dims, model has {}", l.len(), self.dim);
        let mut out = vec![0.0; self.components()];
        self.responsibilities_into(l, &mut out);
        Ok(out)
    }

    /// Σ_l log Σ_k π_k N(l; μ_k, σ_k).
    pub fn log_likelihood<V: AsRef<[f64]> + Sync>(&self, data: &[V]) -> Result<f64> {
        for row in data {
            ensure_dims!(row.as_ref().len() == self.dim, "row has {} dims, model has {}", row.as_ref().len(), self.dim);
        }
        let partials: Vec<f64> = data
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut scratch = vec![0.0; self.components()];
                chunk.iter().map(|row| self.responsibilities_into(row.as_ref(), &mut scratch)).sum()
            })
            .collect();
        Ok(partials.iter().sum())
    }

    /// Draws one descriptor: component k with probability π_k, then
    /// μ_k + σ_k ⊙ N(0, I).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (c, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = c;
                break;
            }
        }
        let mu = self.mean(k);
        let sd = self.sigma(k);
        (0..self.dim)
            .map(|r| {
                let z: f64 = rng.sample(StandardNormal);
                mu[r] + sd[r] * z
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmParams {
    pub components: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the mean log-likelihood improves by less than this.
    pub tol: f64,
}

impl Default for EmParams {
    fn default() -> Self {
        EmParams { components: 8, seed: 0, max_iter: 100, tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GmmModel,
    /// Mean log-likelihood of the data after initialisation and after every
    /// EM iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// Fits a diagonal GMM with EM. Initialisation is k-means++ seeding followed
/// by one hard-assignment M-step. Variances are floored at
/// `1e-4 * max(var_r(data), 1e-8)` per dimension.
pub fn em_fit<V: AsRef<[f64]> + Sync>(data: &[V], params: &EmParams) -> Result<EmFit> {
    let k = params.components;
    let n = data.len();
    if k == 0 {
        return Err(Error::Fit("K must be at least 1".into()));
    }
    if n < k {
        return Err(Error::Fit(format!("{n} samples cannot support {k} components")));
    }
    let dim = data[0].as_ref().len();
    if dim == 0 {
        return Err(Error::Fit("zero-dimensional data".into()));
    }
    for row in data {
        ensure_dims!(row.as_ref().len() == dim, "ragged data: {} vs {dim}", row.as_ref().len());
        if row.as_ref().iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit("non-finite sample".into()));
        }
    }
    if k > 1 && data.iter().all(|row| row.as_ref() == data[0].as_ref()) {
        return Err(Error::Fit("all samples identical; mixture is degenerate".into()));
    }

    let global_mean = column_means(data, dim);
    let mut var_floor = vec![0.0; dim];
    for row in data {
        for (r, v) in row.as_ref().iter().enumerate() {
            var_floor[r] += (v - global_mean[r]).powi(2);
        }
    }
    for f in var_floor.iter_mut() {
        *f = 1e-4 * (*f / n as f64).max(1e-8);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let centers = kmeans_pp(data, k, dim, &mut rng);

    // hard assignment to the nearest seed, expressed as one-hot responsibilities
    let mut resp = vec![0.0; n * k];
    for (i, row) in data.iter().enumerate() {
        let row = row.as_ref();
        let best = (0..k)
            .map(|c| sq_dist(row, &centers[c * dim..(c + 1) * dim]))
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (c, d)| if d < acc.1 { (c, d) } else { acc })
            .0;
        resp[i * k + best] = 1.0;
    }
    let mut model = m_step(data, &resp, k, dim, &var_floor, Some(&centers))?;

    let mut ll = e_step(&model, data, &mut resp) / n as f64;
    let mut trace = vec![ll];
    let mut converged = false;
    for _ in 0..params.max_iter {
        model = m_step(data, &resp, k, dim, &var_floor, None)?;
        let next = e_step(&model, data, &mut resp) / n as f64;
        trace.push(next);
        if next - ll < params.tol {
            converged = true;
            break;
        }
        ll = next;
    }
    Ok(EmFit { model, trace, converged })
}

fn column_means<V: AsRef<[f64]>>(data: &[V], dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    for row in data {
        for (m, v) in mean.iter_mut().zip(row.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= data.len() as f64);
    mean
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp<V: AsRef<[f64]>>(data: &[V], k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len();
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(data[first].as_ref());
    let mut nearest: Vec<f64> = data.iter().map(|row| sq_dist(row.as_ref(), &centers[..dim])).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.extend_from_slice(data[pick].as_ref());
        let new_center = &centers[c * dim..(c + 1) * dim];
        for (d, row) in nearest.iter_mut().zip(data) {
            *d = d.min(sq_dist(row.as_ref(), new_center));
        }
    }
    centers
}

/// Responsibilities into `resp` (row-major n×K); returns the total
/// log-likelihood.
fn e_step<V: AsRef<[f64]> + Sync>(model: &GmmModel, data: &[V], resp: &mut [f64]) -> f64 {
    let k = model.components();
    let partials: Vec<f64> = data
        .par_chunks(CHUNK)
        .zip(resp.par_chunks_mut(CHUNK * k))
        .map(|(rows, out)| {
            rows.iter()
                .zip(out.chunks_exact_mut(k))
                .map(|(row, g)| model.responsibilities_into(row.as_ref(), g))
                .sum::<f64>()
        })
        .collect();
    partials.iter().sum()
}

/// Weighted maximum-likelihood update. Components with no mass keep the
/// fallback centre (when given) and the floored global spread.
fn m_step<V: AsRef<[f64]>>(
    data: &[V],
    resp: &[f64],
    k: usize,
    dim: usize,
    var_floor: &[f64],
    fallback: Option<&[f64]>,
) -> Result<GmmModel> {
    let n = data.len();
    let mut mass = vec![0.0; k];
    let mut sums = vec![0.0; k * dim];
    for (row, g) in data.iter().zip(resp.chunks_exact(k)) {
        let row = row.as_ref();
        for c in 0..k {
            if g[c] == 0.0 {
                continue;
            }
            mass[c] += g[c];
            for r in 0..dim {
                sums[c * dim + r] += g[c] * row[r];
            }
        }
    }
    let mut means = vec![0.0; k * dim];
    for c in 0..k {
        for r in 0..dim {
            means[c * dim + r] = if mass[c] > 0.0 {
                sums[c * dim + r] / mass[c]
            } else {
                fallback.map_or(0.0, |f| f[c * dim + r])
            };
        }
    }
    let mut sq = vec![0.0; k * dim];
    for (row, g) in data.iter().zip(resp.chunks_exact(k)) {
        let row = row.as_ref();
        for c in 0..k {
            if g[c] == 0.0 {
                continue;
            }
            for r in 0..dim {
                let t = row[r] - means[c * dim + r];
                sq[c * dim + r] += g[c] * t * t;
            }
        }
    }
    let mut sigmas = vec![0.0; k * dim];
    for c in 0..k {
        for r in 0..dim {
            let var = if mass[c] > 0.0 { sq[c * dim + r] / mass[c] } else { var_floor[r] * 1e4 };
            sigmas[c * dim + r] = var.max(var_floor[r]).sqrt();
        }
    }
    if mass.iter().any(|m| !m.is_finite()) {
        return Err(Error::Fit("non-finite responsibilities".into()));
    }
    // empty components keep a pseudo-count of one sample so that every π_k > 0
    let empty = mass.iter().filter(|m| **m <= 0.0).count();
    let total = n as f64 + empty as f64;
    let mut weights: Vec<f64> = mass.iter().map(|m| if *m > 0.0 { m / total } else { 1.0 / total }).collect();
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    GmmModel::new(dim, weights, means, sigmas)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_component(sep: f64) -> GmmModel {
        GmmModel::new(1, vec![0.5, 0.5], vec![-sep / 2.0, sep / 2.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn single_component_takes_everything() {
        let m = GmmModel::new(2, vec![1.0], vec![3.0, -1.0], vec![0.5, 2.0]).unwrap();
        for l in [[0.0, 0.0], [1e3, -1e3], [3.0, -1.0]] {
            assert_eq!(m.responsibilities(&l).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn symmetric_midpoint() {
        let m = GmmModel::new(3, vec![0.5, 0.5], vec![-1.0; 3].into_iter().chain(vec![1.0; 3]).collect(), vec![0.7; 6]).unwrap();
        let g = m.responsibilities(&[0.0, 0.0, 0.0]).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn far_component_is_negligible() {
        // l at μ_1, μ_2 ten sigmas away: γ_2/γ_1 = exp(-50) ≈ 2e-22
        let m = two_component(10.0);
        let g = m.responsibilities(&[-5.0]).unwrap();
        assert!(g[0] >= 1.0 - 1e-10);
    }

    #[test]
    fn no_overflow_at_extreme_distances() {
        let m = two_component(2.0);
        let g = m.responsibilities(&[1e6]).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g[1] > 0.999);
    }

    #[test]
    fn log_likelihood_of_standard_normal_at_zero() {
        let m = GmmModel::new(1, vec![1.0], vec![0.0], vec![1.0]).unwrap();
        let ll = m.log_likelihood(&[[0.0]]).unwrap();
        assert!((ll - (-0.918_938_533_204_672_8)).abs() < 1e-12);
        let data = [[0.3], [-1.2], [2.0]];
        let doubled = [[0.3], [-1.2], [2.0], [0.3], [-1.2], [2.0]];
        let a = m.log_likelihood(&data).unwrap();
        assert!((m.log_likelihood(&doubled).unwrap() - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn dim_mismatch() {
        let m = two_component(1.0);
        assert!(matches!(m.responsibilities(&[0.0, 1.0]), Err(Error::Dim(_))));
        assert!(matches!(m.log_likelihood(&[[0.0, 1.0]]), Err(Error::Dim(_))));
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(GmmModel::new(1, vec![0.6, 0.6], vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(GmmModel::new(1, vec![1.0], vec![0.0], vec![0.0]).is_err());
        assert!(GmmModel::new(2, vec![1.0], vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn fit_errors() {
        let data = vec![vec![1.0, 2.0]; 4];
        assert!(matches!(em_fit(&data, &EmParams { components: 2, ..Default::default() }), Err(Error::Fit(_))));
        assert!(matches!(em_fit(&data[..1], &EmParams { components: 2, ..Default::default() }), Err(Error::Fit(_))));
        // one component on identical data is fine: variance hits the floor
        let fit = em_fit(&data, &EmParams { components: 1, ..Default::default() }).unwrap();
        assert_eq!(fit.model.mean(0), &[1.0, 2.0]);
        assert!((fit.model.sigma(0)[0] - (1e-4f64 * 1e-8).sqrt()).abs() < 1e-18);
    }

    #[test]
    fn sampling_is_deterministic_and_degenerate_sigma_collapses() {
        let m = GmmModel::new(2, vec![1.0], vec![4.0, -2.0], vec![1e-9, 1e-9]).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let s = m.sample(&mut a);
        assert_eq!(s, m.sample(&mut b));
        assert!((s[0] - 4.0).abs() < 1e-7 && (s[1] + 2.0).abs() < 1e-7);
    }
}
