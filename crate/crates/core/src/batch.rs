use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// `n` points in `d` dimensions with optional probability weights
/// (uniform `1/n` when absent).
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    points: Tensor,
    weights: Option<Vec<f64>>,
}

impl SampleBatch {
    pub fn new(points: Tensor) -> Result<Self> {
        if points.rank() != 2 {
            return Err(Error::ShapeMismatch {
                context: "sample batch".into(),
                expected: vec![0, 0],
                actual: points.shape().to_vec(),
            });
        }
        Ok(Self {
            points,
            weights: None,
        })
    }

    pub fn with_weights(points: Tensor, weights: Vec<f64>) -> Result<Self> {
        let mut batch = Self::new(points)?;
        if weights.len() != batch.len() {
            return Err(Error::ShapeMismatch {
                context: "sample weights".into(),
                expected: vec![batch.len()],
                actual: vec![weights.len()],
            });
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(invalid("sample weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("sample weights sum to {total}, expected 1")));
        }
        batch.weights = Some(weights);
        Ok(batch)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?)
    }

    /// Batch of `n` scalar points.
    pub fn from_scalars(values: &[f64]) -> Self {
        Self {
            points: Tensor::matrix(values.len(), 1, values.to_vec()).expect("n×1"),
            weights: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn into_points(self) -> Tensor {
        self.points
    }

    pub fn weights(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.len() as f64; self.len()],
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.is_none()
    }

    /// Rows `indices` as a new uniform batch.
    pub fn select(&self, indices: &[usize]) -> SampleBatch {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.point(i));
        }
        SampleBatch {
            points: Tensor::matrix(indices.len(), d, data).expect("selected rows"),
            weights: None,
        }
    }

    /// Concatenates two batches of equal dimension (weights dropped).
    pub fn concat(&self, other: &SampleBatch) -> Result<SampleBatch> {
        if self.dim() != other.dim() {
            return Err(Error::ShapeMismatch {
                context: "batch concatenation".into(),
                expected: vec![self.dim()],
                actual: vec![other.dim()],
            });
        }
        let mut data = self.points.data().to_vec();
        data.extend_from_slice(other.points.data());
        SampleBatch::new(Tensor::matrix(self.len() + other.len(), self.dim(), data)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weights_are_uniform() {
        let b = SampleBatch::from_scalars(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(b.weights(), vec![0.25; 4]);
        assert_eq!(b.dim(), 1);
    }

    #[test]
    fn weights_validated() {
        let pts = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(SampleBatch::with_weights(pts.clone(), vec![0.5, 0.6]).is_err());
        assert!(SampleBatch::with_weights(pts.clone(), vec![-0.5, 1.5]).is_err());
        assert!(SampleBatch::with_weights(pts, vec![0.25, 0.75]).is_ok());
    }
}
