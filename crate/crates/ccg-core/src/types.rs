//! Core matrix types with their validity invariants.

use ndarray::Array2;

use crate::error::{CcgError, Result};

/// N x d matrix of model activations, one example per row. Entries are
/// checked finite at construction; emptiness is rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    data: Array2<f64>,
}

impl ActivationMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(CcgError::invalid(format!(
                "activation matrix must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(((r, c), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(CcgError::invalid(format!(
                "activation matrix has non-finite entry {v} at ({r}, {c})"
            )));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }
}

/// N x K nonnegative concept activations with at most `k` nonzeros per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptMatrix {
    data: Array2<f64>,
    k: usize,
}

impl ConceptMatrix {
    pub fn new(data: Array2<f64>, k: usize) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(CcgError::invalid("concept matrix must be non-empty"));
        }
        if let Some(((r, c), v)) = data
            .indexed_iter()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(CcgError::invalid(format!(
                "concept matrix entry {v} at ({r}, {c}) is negative or non-finite"
            )));
        }
        for (r, row) in data.rows().into_iter().enumerate() {
            let nnz = row.iter().filter(|v| **v > 0.0).count();
            if nnz > k {
                return Err(CcgError::invalid(format!(
                    "row {r} has {nnz} nonzeros, exceeding sparsity k={k}"
                )));
            }
        }
        Ok(Self { data, k })
    }

    /// Wrap an already-validated nonnegative matrix, inferring `k` as the
    /// densest row. Used when loading concept matrices from disk.
    pub fn from_data(data: Array2<f64>) -> Result<Self> {
        let k = data
            .rows()
            .into_iter()
            .map(|row| row.iter().filter(|v| **v > 0.0).count())
            .max()
            .unwrap_or(0)
            .max(1);
        Self::new(data, k)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_concepts(&self) -> usize {
        self.data.ncols()
    }

    /// Fraction of strictly positive entries, averaged per row and then over
    /// rows. A fully trained TopK model pins this at exactly k/K.
    pub fn l0_rate(&self) -> f64 {
        let k_total = self.data.ncols() as f64;
        let per_row: f64 = self
            .data
            .rows()
            .into_iter()
            .map(|row| row.iter().filter(|v| **v > 0.0).count() as f64 / k_total)
            .sum();
        per_row / self.data.nrows() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn activation_matrix_rejects_non_finite() {
        assert!(ActivationMatrix::new(array![[1.0, f64::NAN]]).is_err());
        assert!(ActivationMatrix::new(array![[1.0, f64::INFINITY]]).is_err());
        assert!(ActivationMatrix::new(Array2::zeros((0, 3))).is_err());
        assert!(ActivationMatrix::new(array![[1.0, -2.0]]).is_ok());
    }

    #[test]
    fn concept_matrix_enforces_nonnegativity_and_sparsity() {
        assert!(ConceptMatrix::new(array![[1.0, -0.1]], 2).is_err());
        assert!(ConceptMatrix::new(array![[1.0, 2.0]], 1).is_err());
        let c = ConceptMatrix::new(array![[1.0, 0.0], [0.0, 2.0]], 1).unwrap();
        assert_eq!(c.k(), 1);
    }

    #[test]
    fn l0_rate_counts_strict_positives() {
        let zero = ConceptMatrix::new(Array2::zeros((3, 4)), 4).unwrap();
        assert_eq!(zero.l0_rate(), 0.0);

        let dense = ConceptMatrix::new(Array2::ones((3, 4)), 4).unwrap();
        assert_eq!(dense.l0_rate(), 1.0);

        let half = ConceptMatrix::new(array![[1.0, 0.0], [0.0, 1.0]], 1).unwrap();
        assert_eq!(half.l0_rate(), 0.5);
    }

    #[test]
    fn paper_rate_thirteen_of_256() {
        let mut data = Array2::zeros((5, 256));
        for mut row in data.rows_mut() {
            for j in 0..13 {
                row[j * 7] = 1.0;
            }
        }
        let c = ConceptMatrix::new(data, 13).unwrap();
        assert!((c.l0_rate() - 13.0 / 256.0).abs() < 1e-15);
    }
}
