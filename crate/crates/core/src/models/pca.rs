//! Linear baseline: the top principal directions of the centered actions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: DVector<f64>,
    /// m x d, orthonormal columns sorted by decreasing variance.
    pub components: DMatrix<f64>,
    /// Covariance eigenvalues, descending (all m of them).
    pub eigenvalues: Vec<f64>,
}

impl PcaBasis {
    /// Fits on the rows of `actions` (N x m). Each component is signed so its
    /// largest-magnitude entry is positive.
    pub fn fit(actions: &DMatrix<f64>, latent_dim: usize) -> Result<Self> {
        let (rows, m) = actions.shape();
        if rows == 0 {
            return Err(Error::Config("cannot fit PCA on an empty action set".into()));
        }
        if latent_dim == 0 || latent_dim > m {
            return Err(Error::Config(format!(
                "PCA latent dimension {latent_dim} outside 1..={m}"
            )));
        }
        let mean = DVector::from_fn(m, |j, _| actions.column(j).mean());
        let mut centered = actions.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mean[j]);
        }
        let cov = centered.transpose() * &centered / rows as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut components = DMatrix::zeros(m, latent_dim);
        for (k, &idx) in order.iter().take(latent_dim).enumerate() {
            let mut v = eig.eigenvectors.column(idx).into_owned();
            let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                v.neg_mut();
            }
            components.set_column(k, &v);
        }
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        Ok(PcaBasis {
            mean,
            components,
            eigenvalues,
        })
    }

    pub fn encode(&self, action: &DVector<f64>) -> DVector<f64> {
        self.components.transpose() * (action - &self.mean)
    }

    pub fn decode(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.components * z
    }

    /// Decodes each row of `zs` (k x d) into a row of actions (k x m).
    pub fn decode_rows(&self, zs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = zs * self.components.transpose();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.mean[j]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let data = DMatrix::from_row_slice(4, 2, &[-1.0, -2.0, 1.0, 2.0, -2.0, -4.1, 2.0, 4.0]);
        let pca = PcaBasis::fit(&data, 1).unwrap();
        let c = pca.components.column(0);
        assert!(c[1] > 0.0 && c[1].abs() > c[0].abs());
        assert!((c.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let data = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!(PcaBasis::fit(&data, 3).is_err());
        assert!(PcaBasis::fit(&data, 0).is_err());
        assert!(PcaBasis::fit(&DMatrix::zeros(0, 2), 1).is_err());
    }
}
