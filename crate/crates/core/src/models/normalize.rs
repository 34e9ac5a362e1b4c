use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Per-dimension z-score statistics. Zero-variance dimensions keep std = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Statistics over the rows of `data`.
    pub fn fit(data: &DMatrix<f64>) -> Self {
        let rows = data.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(data.ncols());
        let mut std = Vec::with_capacity(data.ncols());
        for col in data.column_iter() {
            let m = col.sum() / rows;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / rows;
            let s = var.sqrt();
            mean.push(m);
            std.push(if s > 1e-12 { s } else { 1.0 });
        }
        Normalizer { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_rows(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| {
            (data[(i, j)] - self.mean[j]) / self.std[j]
        })
    }

    pub fn invert_rows(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| {
            data[(i, j)] * self.std[j] + self.mean[j]
        })
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| (v[i] - self.mean[i]) / self.std[i])
    }

    pub fn is_valid(&self) -> bool {
        self.mean.len() == self.std.len()
            && self.std.iter().all(|s| *s > 0.0 && s.is_finite())
            && self.mean.iter().all(|m| m.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_column_keeps_unit_std() {
        let data = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let n = Normalizer::fit(&data);
        assert_eq!(n.std[1], 1.0);
        assert!((n.mean[0] - 2.0).abs() < 1e-15);
        let z = n.apply_rows(&data);
        assert!(z.column(1).iter().all(|&v| v == 0.0));
        assert!((n.invert_rows(&z) - data).norm() < 1e-12);
    }
}
