//! Sparse feature vectors (bag-of-words / TF-IDF rows).

use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    indices: Vec<u32>,
    values: Vec<f32>,
    dim: usize,
}

impl SparseVec {
    /// Validates sortedness, range, and finiteness.
    pub fn new(dim: usize, indices: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Contract(alloc::format!(
                "sparse vector with {} indices and {} values",
                indices.len(),
                values.len()
            )));
        }
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Contract(alloc::format!(
                "sparse indices not strictly increasing: {} then {}",
                w[0],
                w[1]
            )));
        }
        if let Some(&last) = indices.last() {
            if last as usize >= dim {
                return Err(Error::Contract(alloc::format!(
                    "sparse index {last} out of range for dimension {dim}"
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite sparse value".into()));
        }
        Ok(Self {
            indices,
            values,
            dim,
        })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f32)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        Float::sqrt(self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>())
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Unit L2 norm copy; the zero vector stays zero.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Self {
            indices: self.indices.clone(),
            values: self.values.iter().map(|&v| (v as f64 / n) as f32).collect(),
            dim: self.dim,
        }
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v as f64 * dense[i as usize]).sum()
    }

    pub fn add_to_dense(&self, dense: &mut [f64]) {
        for (i, v) in self.iter() {
            dense[i as usize] += v as f64;
        }
    }

    /// Sum of several sparse vectors of the same dimension.
    pub fn sum<'a>(dim: usize, parts: impl IntoIterator<Item = &'a SparseVec>) -> Self {
        let mut acc: alloc::collections::BTreeMap<u32, f64> = Default::default();
        for p in parts {
            for (i, v) in p.iter() {
                *acc.entry(i).or_insert(0.0) += v as f64;
            }
        }
        let (indices, values) = acc
            .into_iter()
            .filter(|(_, v)| *v != 0.0)
            .map(|(i, v)| (i, v as f32))
            .unzip();
        Self {
            indices,
            values,
            dim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn validation() {
        assert!(SparseVec::new(5, vec![1, 4], vec![0.5, 1.0]).is_ok());
        assert!(SparseVec::new(5, vec![4, 1], vec![0.5, 1.0]).is_err());
        assert!(SparseVec::new(5, vec![1, 1], vec![0.5, 1.0]).is_err());
        assert!(SparseVec::new(4, vec![1, 4], vec![0.5, 1.0]).is_err());
        assert!(SparseVec::new(5, vec![1], vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn normalize_and_sum() {
        let a = SparseVec::new(4, vec![0], vec![1.0]).unwrap();
        let b = SparseVec::new(4, vec![2], vec![1.0]).unwrap();
        let s = SparseVec::sum(4, [&a, &b]).normalized();
        let r = 1.0 / 2f32.sqrt();
        assert_eq!(s.indices(), &[0, 2]);
        assert!(s.values().iter().all(|&v| (v - r).abs() < 1e-7));
        assert!(SparseVec::zeros(3).normalized().is_zero());
    }
}
