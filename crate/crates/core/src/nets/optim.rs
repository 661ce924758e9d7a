use serde::{Deserialize, Serialize};

use super::MlpParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Bias-corrected Adam.
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// `buf ← μ·buf + g; θ ← θ − lr·buf`
    SgdMomentum { momentum: f64 },
}

impl OptimizerKind {
    pub fn adam(beta1: f64, beta2: f64) -> Self {
        OptimizerKind::Adam {
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, params: &MlpParams) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros.clone(),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        Self {
            kind,
            lr,
            first: zeros,
            second,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Descends along `grads`, one gradient per parameter tensor in
    /// [`MlpParams::tensors`] order.
    pub fn step(&mut self, params: &mut MlpParams, grads: &[Tensor]) -> Result<()> {
        let mut targets = params.tensors_mut();
        if grads.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                context: "optimizer gradients".into(),
                expected: vec![targets.len()],
                actual: vec![grads.len()],
            });
        }
        for (k, (g, p)) in grads.iter().zip(&targets).enumerate() {
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    context: MlpParams::tensor_name(k),
                    expected: p.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(MlpParams::tensor_name(k)));
            }
        }
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (k, p) in targets.iter_mut().enumerate() {
                    let m = self.first[k].data_mut();
                    let v = self.second[k].data_mut();
                    for (((theta, &g), m), v) in p.data_mut().iter_mut().zip(grads[k].data()).zip(m).zip(v) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *theta -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::SgdMomentum { momentum } => {
                for (k, p) in targets.iter_mut().enumerate() {
                    let buf = self.first[k].data_mut();
                    for ((theta, &g), b) in p.data_mut().iter_mut().zip(grads[k].data()).zip(buf) {
                        *b = momentum * *b + g;
                        *theta -= lr * *b;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Activation, MlpSpec};

    fn scalar_net(value: f64) -> MlpParams {
        let spec = MlpSpec::uniform(vec![1, 1], Activation::Identity).unwrap();
        let mut p = MlpParams::zeros(&spec);
        p.layers[0].weight.data_mut()[0] = value;
        p
    }

    fn grads(w: f64, b: f64) -> Vec<Tensor> {
        vec![
            Tensor::new(vec![1, 1], vec![w]).unwrap(),
            Tensor::vector(vec![b]),
        ]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_net(0.5);
        let before = p.clone();
        let mut opt = OptimizerState::new(OptimizerKind::adam(0.9, 0.999), 0.1, &p);
        opt.step(&mut p, &grads(0.0, 0.0)).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn adam_matches_hand_recursion() {
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut p = scalar_net(0.0);
        let mut opt = OptimizerState::new(OptimizerKind::adam(b1, b2), lr, &p);
        let (mut theta, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            opt.step(&mut p, &grads(1.0, 0.0)).unwrap();
            m = b1 * m + (1.0 - b1);
            v = b2 * v + (1.0 - b2);
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            theta -= lr * m_hat / (v_hat.sqrt() + eps);
            assert!((p.layers[0].weight.item() - theta).abs() < 1e-15);
        }
        // with constant unit gradients every bias-corrected step is lr
        assert!((theta + 0.3).abs() < 1e-6);
    }

    #[test]
    fn first_adam_step_is_lr_times_sign() {
        let mut p = scalar_net(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::adam(0.5, 0.999), 0.01, &p);
        opt.step(&mut p, &grads(-3.7, 0.2)).unwrap();
        let dw = p.layers[0].weight.item() - 1.0;
        let db = p.layers[0].bias.item();
        assert!((dw / 0.01 - 1.0).abs() < 1e-6);
        assert!((db / -0.01 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sgd_without_momentum_is_gradient_descent() {
        let mut p = scalar_net(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::SgdMomentum { momentum: 0.0 }, 0.5, &p);
        opt.step(&mut p, &grads(2.0, -1.0)).unwrap();
        opt.step(&mut p, &grads(2.0, -1.0)).unwrap();
        assert_eq!(p.layers[0].weight.item(), -1.0);
        assert_eq!(p.layers[0].bias.item(), 1.0);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut p = scalar_net(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::adam(0.5, 0.999), 0.01, &p);
        match opt.step(&mut p, &grads(0.0, f64::NAN)) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "layer0.bias"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
