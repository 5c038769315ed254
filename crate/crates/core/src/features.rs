//! Per-modality PCA, temporal pooling, modality fusion, and class weighting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{mpf, FeatureSequence};
use crate::error::{Error, Result};
use crate::numcore::{sym_eig, Matrix};

/// Relative eigenvalue threshold below which a direction counts as zero variance.
const RANK_TOL: f64 = 1e-10;

/// Projection onto the top principal directions of a training matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// d×k, orthonormal columns.
    pub components: Matrix,
    /// Descending, one per component.
    pub eigenvalues: Vec<f64>,
    /// Sum of all covariance eigenvalues (trace of the covariance).
    pub total_variance: f64,
}

#[derive(Serialize, Deserialize)]
struct PcaSidecar {
    eigenvalues: Vec<f64>,
    total_variance: f64,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.cols()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance == 0.0 {
            return vec![0.0; self.k()];
        }
        self.eigenvalues.iter().map(|l| l / self.total_variance).collect()
    }

    /// Writes `<stem>.mean.mpf`, `<stem>.components.mpf` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        mpf::write(&dir.join(format!("{stem}.mean.mpf")), &Matrix::row_vector(&self.mean))?;
        mpf::write(&dir.join(format!("{stem}.components.mpf")), &self.components)?;
        let side = PcaSidecar {
            eigenvalues: self.eigenvalues.clone(),
            total_variance: self.total_variance,
        };
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<PcaModel> {
        let mean = mpf::read(&dir.join(format!("{stem}.mean.mpf")))?.into_vec();
        let components = mpf::read(&dir.join(format!("{stem}.components.mpf")))?;
        let path = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let side: PcaSidecar = serde_json::from_str(&text)?;
        if components.rows() != mean.len() || components.cols() != side.eigenvalues.len() {
            return Err(Error::Dimension(format!("inconsistent PCA files for {stem}")));
        }
        Ok(PcaModel {
            mean,
            components,
            eigenvalues: side.eigenvalues,
            total_variance: side.total_variance,
        })
    }
}

/// Fits PCA with `k` components to the rows of `x`.
///
/// When `d > n` the eigenvectors come from the n×n Gram matrix and are mapped
/// back, which is exact for the leading `n − 1` components. If the data rank is
/// below `k`, `k` is reduced to the rank.
pub fn pca_fit(x: &Matrix, k: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::Config(format!("PCA needs at least 2 rows, got {n}")));
    }
    let k_max = (n - 1).min(d);
    if k == 0 || k > k_max {
        return Err(Error::Config(format!(
            "PCA k must lie in 1..={k_max} for {n}x{d} data, got {k}"
        )));
    }
    let mean = x.column_means();
    let centered = x.sub_row(&mean)?;
    let denom = (n - 1) as f64;

    let (values, vectors) = if d <= n {
        let cov = centered.t_matmul(&centered)?.scale(1.0 / denom);
        let eig = sym_eig(&cov)?;
        (eig.values, eig.vectors)
    } else {
        let gram = centered.matmul_t(&centered)?.scale(1.0 / denom);
        let eig = sym_eig(&gram)?;
        // v = Xcᵀ u / sqrt((n-1) λ) has unit norm when λ > 0
        let mut vectors = centered.t_matmul(&eig.vectors)?;
        for (j, &lambda) in eig.values.iter().enumerate() {
            let norm = if lambda > 0.0 { (denom * lambda).sqrt() } else { 0.0 };
            for i in 0..d {
                vectors[(i, j)] = if norm > 0.0 { vectors[(i, j)] / norm } else { 0.0 };
            }
        }
        (eig.values, vectors)
    };

    let total_variance: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let top = values.first().copied().unwrap_or(0.0);
    let rank = values.iter().filter(|&&v| v > RANK_TOL * top.max(0.0) && v > 0.0).count();
    if rank == 0 {
        return Err(Error::Degenerate(format!(
            "data has zero variance (rank 0) across {n} rows"
        )));
    }
    let k = if rank < k {
        log::warn!("PCA: data rank {rank} is below k={k}; using k={rank}");
        rank
    } else {
        k
    };

    Ok(PcaModel {
        mean,
        components: vectors.slice_cols(0, k),
        eigenvalues: values[..k].to_vec(),
        total_variance,
    })
}

/// `(x − mean) · components`, with the mean taken from the fitted data.
pub fn pca_transform(model: &PcaModel, x: &Matrix) -> Result<Matrix> {
    if x.cols() != model.dim() {
        return Err(Error::Dimension(format!(
            "PCA model expects {} columns, got {}",
            model.dim(),
            x.cols()
        )));
    }
    x.sub_row(&model.mean)?.matmul(&model.components)
}

/// Average over frames.
pub fn mean_pool(seq: &FeatureSequence) -> Result<Vec<f64>> {
    if seq.frames() == 0 {
        return Err(Error::Dimension("cannot pool an empty sequence".into()));
    }
    Ok(seq.values.column_means())
}

/// Audio block followed by visual block.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedVector {
    pub values: Vec<f64>,
    pub audio_len: usize,
}

impl FusedVector {
    pub fn audio(&self) -> &[f64] {
        &self.values[..self.audio_len]
    }

    pub fn visual(&self) -> &[f64] {
        &self.values[self.audio_len..]
    }
}

pub fn fuse_concat(audio: &[f64], visual: &[f64]) -> FusedVector {
    let mut values = Vec::with_capacity(audio.len() + visual.len());
    values.extend_from_slice(audio);
    values.extend_from_slice(visual);
    FusedVector {
        values,
        audio_len: audio.len(),
    }
}

/// Per-class weights `N_max / N_c`. For two classes this is the familiar
/// `N_neg / N_pos` on the minority class with weight 1 on the majority.
pub fn class_weights(labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; classes];
    for &y in labels {
        if y >= classes {
            return Err(Error::Config(format!("label {y} out of range for {classes} classes")));
        }
        counts[y] += 1;
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass { class });
    }
    let max = *counts.iter().max().unwrap_or(&1) as f64;
    Ok(counts.iter().map(|&c| max / c as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureKind;
    use crate::numcore::Rng;
    use proptest::prelude::*;

    fn random(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        let data = (0..n * d).map(|_| rng.normal()).collect();
        Matrix::from_vec(n, d, data).unwrap()
    }

    fn column_variances(z: &Matrix) -> Vec<f64> {
        let means = z.column_means();
        let n = z.rows() as f64;
        (0..z.cols())
            .map(|j| z.col(j).iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / (n - 1.0))
            .collect()
    }

    fn seq(rows: &[Vec<f64>]) -> FeatureSequence {
        FeatureSequence {
            kind: FeatureKind::Mfcc,
            window_seconds: 5,
            values: Matrix::from_rows(rows).unwrap(),
        }
    }

    #[test]
    fn axis_aligned_variance() {
        let x = Matrix::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![-1.0, 2.0, 3.0],
            vec![4.0, 2.0, 3.0],
            vec![0.5, 2.0, 3.0],
        ])
        .unwrap();
        let m = pca_fit(&x, 1).unwrap();
        assert!((m.components[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!(m.components[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn diagonal_points() {
        // covariance of the four points is [[10/3, 10/3], [10/3, 10/3]]:
        // eigenvalues 20/3 and 0, leading vector (1,1)/√2
        let x = Matrix::from_rows(&[
            vec![1.0, 1.0],
            vec![-1.0, -1.0],
            vec![2.0, 2.0],
            vec![-2.0, -2.0],
        ])
        .unwrap();
        let m = pca_fit(&x, 1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.components[(0, 0)].abs() - h).abs() < 1e-12);
        assert!((m.components[(0, 0)] - m.components[(1, 0)]).abs() < 1e-12);
        assert!((m.eigenvalues[0] - 20.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn full_rank_reconstruction() {
        for (n, d) in [(20, 5), (6, 15)] {
            let x = random(n, d, 7);
            let k = (n - 1).min(d);
            let m = pca_fit(&x, k).unwrap();
            let z = pca_transform(&m, &x).unwrap();
            let back = z.matmul_t(&m.components).unwrap();
            let centered = x.sub_row(&m.mean).unwrap();
            let err = back.sub(&centered).unwrap().max_abs();
            assert!(err < 1e-8, "{n}x{d}: {err}");
        }
    }

    #[test]
    fn transform_variances_are_eigenvalues() {
        for (n, d) in [(40, 6), (8, 30)] {
            let x = random(n, d, 3);
            let m = pca_fit(&x, 4).unwrap();
            let z = pca_transform(&m, &x).unwrap();
            for (v, l) in column_variances(&z).iter().zip(&m.eigenvalues) {
                assert!((v - l).abs() < 1e-8 * l.max(1.0));
            }
            assert!(z.column_means().iter().all(|m| m.abs() < 1e-9));
            let gram = m.components.t_matmul(&m.components).unwrap();
            assert!(gram.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-8);
            assert!(m.explained_variance_ratio().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn mean_row_projects_to_zero() {
        let x = random(10, 4, 1);
        let m = pca_fit(&x, 2).unwrap();
        let z = pca_transform(&m, &Matrix::from_rows(&[m.mean.clone(), m.mean.clone()]).unwrap()).unwrap();
        assert!(z.max_abs() < 1e-12);
    }

    #[test]
    fn point_along_first_component() {
        let x = random(12, 5, 2);
        let m = pca_fit(&x, 3).unwrap();
        let row: Vec<f64> = (0..5).map(|i| m.mean[i] + 2.0 * m.components[(i, 0)]).collect();
        let z = pca_transform(&m, &Matrix::row_vector(&row)).unwrap();
        assert!((z[(0, 0)] - 2.0).abs() < 1e-12);
        assert!(z[(0, 1)].abs() < 1e-12 && z[(0, 2)].abs() < 1e-12);
    }

    #[test]
    fn pca_errors() {
        let x = random(5, 3, 0);
        assert!(matches!(pca_fit(&x, 0), Err(Error::Config(_))));
        assert!(matches!(pca_fit(&x, 4), Err(Error::Config(_))));
        let constant = Matrix::filled(5, 3, 2.0);
        assert!(matches!(pca_fit(&constant, 1), Err(Error::Degenerate(_))));
        let m = pca_fit(&x, 2).unwrap();
        assert!(matches!(pca_transform(&m, &Matrix::zeros(1, 4)), Err(Error::Dimension(_))));
    }

    #[test]
    fn rank_deficient_data_clamps_k() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![2.0, 0.0, 0.0],
            vec![3.0, 0.0, 0.0],
            vec![5.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(pca_fit(&x, 3).unwrap().k(), 1);
    }

    #[test]
    fn pca_files_round_trip() {
        let m = pca_fit(&random(10, 4, 5), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path(), "audio").unwrap();
        let back = PcaModel::load(dir.path(), "audio").unwrap();
        assert_eq!(back.eigenvalues, m.eigenvalues);
        assert_eq!(back.components, mpf::quantize(&m.components));
    }

    #[test]
    fn pooling() {
        assert_eq!(mean_pool(&seq(&[vec![3.0, 4.0]])).unwrap(), vec![3.0, 4.0]);
        assert_eq!(mean_pool(&seq(&[vec![0.0, 0.0], vec![2.0, 4.0]])).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            mean_pool(&seq(&[vec![2.0, 4.0], vec![0.0, 0.0]])).unwrap(),
            mean_pool(&seq(&[vec![0.0, 0.0], vec![2.0, 4.0]])).unwrap()
        );
        let empty = FeatureSequence {
            kind: FeatureKind::Mfcc,
            window_seconds: 1,
            values: Matrix::zeros(0, 2),
        };
        assert!(mean_pool(&empty).is_err());
    }

    #[test]
    fn fusion() {
        let f = fuse_concat(&[1.0, 2.0], &[3.0]);
        assert_eq!(f.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(fuse_concat(&[0.0; 50], &[0.0; 50]).values.len(), 100);
        assert_eq!(fuse_concat(&[1.0], &[]).values, vec![1.0]);
    }

    #[test]
    fn weights() {
        let mut labels = vec![0; 90];
        labels.extend(vec![1; 10]);
        assert_eq!(class_weights(&labels, 2).unwrap(), vec![1.0, 9.0]);
        assert_eq!(class_weights(&[0, 1, 2, 0, 1, 2], 3).unwrap(), vec![1.0; 3]);
        let mut t = vec![0; 138];
        t.extend(vec![1; 120]);
        t.extend(vec![2; 79]);
        let w = class_weights(&t, 3).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 1.15).abs() < 1e-12);
        assert!((w[2] - 138.0 / 79.0).abs() < 1e-12);
        assert!((w[2] - 1.7468).abs() < 1e-4);
        assert!(matches!(class_weights(&[0, 0, 2], 3), Err(Error::MissingClass { class: 1 })));
    }

    proptest! {
        #[test]
        fn weighted_frequencies_equalize(counts in prop::collection::vec(1usize..50, 2..6)) {
            let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| vec![c; n]).collect();
            let w = class_weights(&labels, counts.len()).unwrap();
            let max = *counts.iter().max().unwrap() as f64;
            for (c, &n) in counts.iter().enumerate() {
                prop_assert!((n as f64 * w[c] - max).abs() < 1e-9);
            }
        }

        #[test]
        fn fusion_slices_recover_blocks(
            a in prop::collection::vec(-10.0f64..10.0, 0..8),
            b in prop::collection::vec(-10.0f64..10.0, 0..8),
        ) {
            let f = fuse_concat(&a, &b);
            prop_assert_eq!(f.values.len(), a.len() + b.len());
            prop_assert_eq!(f.audio(), &a[..]);
            prop_assert_eq!(f.visual(), &b[..]);
        }
    }
}
