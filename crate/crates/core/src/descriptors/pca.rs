use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::descriptors::{DescriptorSet, LocalDescriptor};
use crate::error::{ensure_dims, Error, Result};

/// Rows per covariance work unit; fixed so the result does not depend on the
/// thread count.
const CHUNK: usize = 1024;
/// Eigenvalues below this fraction of the largest count as rank deficiency.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    input_dim: usize,
    output_dim: usize,
    mean: Vec<f64>,
    /// `output_dim` rows of length `input_dim`, orthonormal.
    basis: Vec<f64>,
    eigenvalues: Vec<f64>,
    whiten: bool,
}

impl PcaModel {
    pub fn new(mean: Vec<f64>, basis: Vec<f64>, eigenvalues: Vec<f64>, whiten: bool) -> Result<Self> {
        let input_dim = mean.len();
        let output_dim = eigenvalues.len();
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::Validation("empty PCA model".into()));
        }
        ensure_dims!(
            basis.len() == input_dim * output_dim,
            "basis has {} entries, expected {}x{}",
            basis.len(),
            output_dim,
            input_dim
        );
        if whiten && eigenvalues.iter().any(|e| *e <= 0.0) {
            return Err(Error::Validation("whitening needs positive eigenvalues".into()));
        }
        Ok(PcaModel { input_dim, output_dim, mean, basis, eigenvalues, whiten })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis_row(&self, i: usize) -> &[f64] {
        &self.basis[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn whiten(&self) -> bool {
        self.whiten
    }

    pub fn with_whitening(mut self, whiten: bool) -> Result<Self> {
        if whiten && self.eigenvalues.iter().any(|e| *e <= 0.0) {
            return Err(Error::Validation("whitening needs positive eigenvalues".into()));
        }
        self.whiten = whiten;
        Ok(self)
    }

    /// basis · (v − mean), optionally scaled by 1/√eigenvalue.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        ensure_dims!(v.len() == self.input_dim, "vector has {} dims, PCA expects {}", v.len(), self.input_dim);
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..self.output_dim)
            .map(|i| {
                let p: f64 = self.basis_row(i).iter().zip(&centered).map(|(b, c)| b * c).sum();
                if self.whiten {
                    p / self.eigenvalues[i].sqrt()
                } else {
                    p
                }
            })
            .collect())
    }

    /// Projects every descriptor, keeping receptive fields and order.
    pub fn apply(&self, ds: &DescriptorSet) -> Result<DescriptorSet> {
        let descriptors = ds
            .descriptors
            .par_iter()
            .map(|d| Ok(LocalDescriptor { vector: self.project(&d.vector)?, area: d.area }))
            .collect::<Result<Vec<_>>>()?;
        Ok(DescriptorSet { width: ds.width, height: ds.height, descriptors })
    }
}

/// Top-`dim` principal axes of the sample covariance, eigenvalue-descending,
/// each axis signed so its largest-magnitude entry is positive.
pub fn pca_fit<V: AsRef<[f64]> + Sync>(data: &[V], dim: usize) -> Result<PcaModel> {
    let n = data.len();
    let raw = data.first().map_or(0, |r| r.as_ref().len());
    if dim == 0 || dim > raw {
        return Err(Error::Dim(format!("cannot keep {dim} of {raw} dimensions")));
    }
    if n <= dim {
        return Err(Error::Dim(format!("{n} samples are too few for {dim} components")));
    }
    for row in data {
        ensure_dims!(row.as_ref().len() == raw, "ragged data: {} vs {raw}", row.as_ref().len());
    }
    let mut mean = vec![0.0; raw];
    for row in data {
        for (m, v) in mean.iter_mut().zip(row.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let partials: Vec<Vec<f64>> = data
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; raw * raw];
            let mut c = vec![0.0; raw];
            for row in chunk {
                for (ci, (v, m)) in c.iter_mut().zip(row.as_ref().iter().zip(&mean)) {
                    *ci = v - m;
                }
                for i in 0..raw {
                    if c[i] == 0.0 {
                        continue;
                    }
                    let ci = c[i];
                    for j in i..raw {
                        acc[i * raw + j] += ci * c[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut cov = DMatrix::<f64>::zeros(raw, raw);
    for p in &partials {
        for i in 0..raw {
            for j in i..raw {
                cov[(i, j)] += p[i * raw + j];
            }
        }
    }
    for i in 0..raw {
        for j in i..raw {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..raw).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let kept = eig.eigenvalues[order[dim - 1]];
    if top <= 0.0 || kept <= RANK_TOL * top {
        return Err(Error::Dim(format!(
            "covariance rank is below the requested {dim} components"
        )));
    }
    let mut basis = Vec::with_capacity(dim * raw);
    let mut eigenvalues = Vec::with_capacity(dim);
    for &col in &order[..dim] {
        let v = eig.eigenvectors.column(col);
        let lead = (0..raw).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        basis.extend(v.iter().map(|x| sign * x));
        eigenvalues.push(eig.eigenvalues[col]);
    }
    PcaModel::new(mean, basis, eigenvalues, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::Area;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_cloud(n: usize, scales: &[f64], seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| scales.iter().map(|s| s * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn axis_aligned_data_gives_signed_permutation() {
        let data = gaussian_cloud(2000, &[0.5, 3.0, 1.5], 1);
        let m = pca_fit(&data, 3).unwrap();
        let expected_axes = [1, 2, 0];
        for (i, axis) in expected_axes.iter().enumerate() {
            let row = m.basis_row(i);
            assert!((row[*axis] - 1.0).abs() < 1e-2, "row {i}: {row:?}");
        }
        // orthonormal to 1e-10
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = m.basis_row(i).iter().zip(m.basis_row(j)).map(|(a, b)| a * b).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn refit_is_identical() {
        let data = gaussian_cloud(300, &[1.0, 2.0, 0.1, 0.7], 9);
        assert_eq!(pca_fit(&data, 2).unwrap(), pca_fit(&data, 2).unwrap());
    }

    #[test]
    fn dim_errors() {
        let data = gaussian_cloud(50, &[1.0, 1.0], 2);
        assert!(matches!(pca_fit(&data, 3), Err(Error::Dim(_))));
        // rank one data cannot support two components
        let line: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(matches!(pca_fit(&line, 2), Err(Error::Dim(_))));
        assert!(pca_fit(&line, 1).is_ok());
    }

    #[test]
    fn apply_centres_and_keeps_areas() {
        let data = gaussian_cloud(100, &[1.0, 2.0, 3.0], 3);
        let m = pca_fit(&data, 2).unwrap();
        let area = Area { x: 1, y: 2, w: 3, h: 4 };
        let ds = DescriptorSet {
            width: 10,
            height: 10,
            descriptors: vec![LocalDescriptor { vector: m.mean().to_vec(), area }],
        };
        let out = m.apply(&ds).unwrap();
        assert_eq!(out.descriptors[0].area, area);
        assert!(out.descriptors[0].vector.iter().all(|v| v.abs() < 1e-15));
        assert!(matches!(m.project(&[1.0]), Err(Error::Dim(_))));
    }

    #[test]
    fn identity_basis_leaves_vectors_unchanged() {
        let m = PcaModel::new(vec![0.0; 2], vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 1.0], false).unwrap();
        assert_eq!(m.project(&[3.5, -2.0]).unwrap(), vec![3.5, -2.0]);
    }

    #[test]
    fn projection_is_non_expansive() {
        let data = gaussian_cloud(200, &[1.0, 0.3, 2.0, 0.8, 1.1], 4);
        let m = pca_fit(&data, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p = m.project(&v).unwrap();
            let pn = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            let cn = v.iter().zip(m.mean()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(pn <= cn + 1e-12);
        }
    }
}
