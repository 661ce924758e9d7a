use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shift-invariant transport costs `ℓ(y, ŷ) = h(y − ŷ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `‖y − ŷ‖`
    L2Norm,
    /// `‖y − ŷ‖² / 2`
    HalfSquaredL2,
}

impl LossKind {
    pub fn eval(self, y: &[f64], yhat: &[f64]) -> f64 {
        debug_assert_eq!(y.len(), yhat.len());
        let sq: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
        match self {
            LossKind::L2Norm => sq.sqrt(),
            LossKind::HalfSquaredL2 => 0.5 * sq,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::L2Norm => "l2-norm",
            LossKind::HalfSquaredL2 => "half-squared-l2",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2-norm" => Ok(LossKind::L2Norm),
            "half-squared-l2" => Ok(LossKind::HalfSquaredL2),
            other => Err(Error::InvalidArgument(format!("unknown loss `{other}`"))),
        }
    }
}

/// `C_ij = ℓ(y_i, ŷ_j)` for an `n × m` pair of batches.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix(pub Tensor);

impl CostMatrix {
    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.0.at(i, j)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(CostMatrix(Tensor::from_rows(rows)?))
    }
}

pub fn cost_matrix(loss: LossKind, y: &SampleBatch, yhat: &SampleBatch) -> Result<CostMatrix> {
    if y.dim() != yhat.dim() {
        return Err(Error::ShapeMismatch {
            context: "cost matrix point dimension".into(),
            expected: vec![y.dim()],
            actual: vec![yhat.dim()],
        });
    }
    let (n, m) = (y.len(), yhat.len());
    let mut data = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            data.push(loss.eval(y.point(i), yhat.point(j)));
        }
    }
    Ok(CostMatrix(Tensor::matrix(n, m, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_examples() {
        let y = SampleBatch::from_scalars(&[0.0, 1.0]);
        let yh = SampleBatch::from_scalars(&[0.0, 2.0]);
        let c = cost_matrix(LossKind::HalfSquaredL2, &y, &yh).unwrap();
        assert_eq!(c.0.data(), &[0.0, 2.0, 0.5, 0.5]);
        let c = cost_matrix(LossKind::L2Norm, &y, &yh).unwrap();
        assert_eq!(c.0.data(), &[0.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let y = SampleBatch::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let yh = SampleBatch::from_scalars(&[0.0]);
        assert!(matches!(
            cost_matrix(LossKind::L2Norm, &y, &yh),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_diagonal_for_identical_batches() {
        let y = SampleBatch::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5], vec![1.0, 1.0]]).unwrap();
        for loss in [LossKind::L2Norm, LossKind::HalfSquaredL2] {
            let c = cost_matrix(loss, &y, &y).unwrap();
            for i in 0..3 {
                assert_eq!(c.at(i, i), 0.0);
            }
            assert!(c.0.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn shift_invariance() {
        let y = [0.3, -1.0];
        let yh = [2.0, 0.5];
        let s = [10.0, -3.0];
        let shift = |p: &[f64; 2]| [p[0] + s[0], p[1] + s[1]];
        for loss in [LossKind::L2Norm, LossKind::HalfSquaredL2] {
            let a = loss.eval(&y, &yh);
            let b = loss.eval(&shift(&y), &shift(&yh));
            assert!((a - b).abs() < 1e-12);
        }
    }
}
