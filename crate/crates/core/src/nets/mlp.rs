use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::error::{invalid, Error, Result};
use crate::grad::{Tape, Var};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Rows evaluated per tape when running a network outside training.
const FORWARD_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    /// Leaky rectifier with slope [`LEAKY_SLOPE`] on the negative side.
    LeakyRelu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    widths: Vec<usize>,
    hidden: Vec<Activation>,
}

impl MlpSpec {
    /// `widths` lists input, hidden and output widths; `hidden` has one
    /// activation per hidden layer. The output layer is always linear.
    pub fn new(widths: Vec<usize>, hidden: Vec<Activation>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(invalid("an MLP needs at least one layer"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(invalid("layer widths must be positive"));
        }
        if hidden.len() != widths.len() - 2 {
            return Err(invalid(format!(
                "{} hidden layers need {} activations, got {}",
                widths.len() - 2,
                widths.len() - 2,
                hidden.len()
            )));
        }
        Ok(Self { widths, hidden })
    }

    pub fn uniform(widths: Vec<usize>, act: Activation) -> Result<Self> {
        let hidden = vec![act; widths.len().saturating_sub(2)];
        Self::new(widths, hidden)
    }

    /// `d → 128 → 128 → 1` with leaky rectifiers.
    pub fn discriminator(d: usize) -> Self {
        Self::uniform(vec![d, 128, 128, 1], Activation::LeakyRelu).expect("valid widths")
    }

    /// Over-parameterized linear generator `r → 128 → 128 → d`.
    pub fn linear_generator(r: usize, d: usize) -> Self {
        Self::uniform(vec![r, 128, 128, d], Activation::Identity).expect("valid widths")
    }

    /// `r → 128 → 128 → d` generator with leaky rectifiers.
    pub fn leaky_generator(r: usize, d: usize) -> Self {
        Self::uniform(vec![r, 128, 128, d], Activation::LeakyRelu).expect("valid widths")
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn hidden_activations(&self) -> &[Activation] {
        &self.hidden
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn is_linear(&self) -> bool {
        self.hidden.iter().all(|a| *a == Activation::Identity)
    }

    /// Declares one tape input per weight and bias, in layer order.
    pub fn declare_params(&self, tape: &mut Tape) -> Vec<Var> {
        let mut vars = Vec::with_capacity(2 * self.num_layers());
        for l in 0..self.num_layers() {
            vars.push(tape.input(&[self.widths[l + 1], self.widths[l]]));
            vars.push(tape.input(&[self.widths[l + 1]]));
        }
        vars
    }

    /// Records the network applied row-wise to `x`.
    pub fn record(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        if params.len() != 2 * self.num_layers() {
            return Err(invalid("parameter handle count does not match the spec"));
        }
        let mut h = x;
        for l in 0..self.num_layers() {
            h = tape.affine(h, params[2 * l], Some(params[2 * l + 1]))?;
            if let Some(Activation::LeakyRelu) = self.hidden.get(l) {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = (0..spec.num_layers())
            .map(|l| Layer {
                weight: Tensor::zeros(&[spec.widths[l + 1], spec.widths[l]]),
                bias: Tensor::zeros(&[spec.widths[l + 1]]),
            })
            .collect();
        Self { layers }
    }

    /// Weights and biases interleaved in layer order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Name of the `k`-th tensor in [`tensors`](Self::tensors) order.
    pub fn tensor_name(k: usize) -> String {
        let kind = if k % 2 == 0 { "weight" } else { "bias" };
        format!("layer{}.{kind}", k / 2)
    }

    pub fn matches(&self, spec: &MlpSpec) -> bool {
        self.layers.len() == spec.num_layers()
            && self.layers.iter().enumerate().all(|(l, layer)| {
                layer.weight.shape() == [spec.widths[l + 1], spec.widths[l]]
                    && layer.bias.shape() == [spec.widths[l + 1]]
            })
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

/// Weights ~ N(0, 1/fan_in) from the seeded stream, layer by layer in
/// row-major order; biases zero.
pub fn init_params(spec: &MlpSpec, seed: u64) -> MlpParams {
    let mut rng = SeededRng::new(seed);
    let mut params = MlpParams::zeros(spec);
    for layer in &mut params.layers {
        let fan_in = layer.weight.cols() as f64;
        let scale = 1.0 / fan_in.sqrt();
        for w in layer.weight.data_mut() {
            *w = scale * rng.normal();
        }
    }
    params
}

/// A network specification together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

impl Mlp {
    pub fn new(spec: MlpSpec, params: MlpParams) -> Result<Self> {
        if !params.matches(&spec) {
            return Err(invalid("parameters do not match the network spec"));
        }
        Ok(Self { spec, params })
    }

    pub fn init(spec: MlpSpec, seed: u64) -> Self {
        let params = init_params(&spec, seed);
        Self { spec, params }
    }

    /// Row-wise evaluation of an `n × input_width` matrix.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.cols() != self.spec.input_width() {
            return Err(Error::ShapeMismatch {
                context: "network input".into(),
                expected: vec![x.rows(), self.spec.input_width()],
                actual: x.shape().to_vec(),
            });
        }
        let n = x.rows();
        let k = x.cols();
        let out_w = self.spec.output_width();
        let mut out = Vec::with_capacity(n * out_w);
        let params = self.params.tensors();
        let mut start = 0;
        while start < n {
            let rows = FORWARD_CHUNK.min(n - start);
            let chunk = Tensor::matrix(rows, k, x.data()[start * k..(start + rows) * k].to_vec())?;
            let mut tape = Tape::new();
            let xv = tape.input(&[rows, k]);
            let pv = self.spec.declare_params(&mut tape);
            self.spec.record(&mut tape, xv, &pv)?;
            let mut inputs = vec![&chunk];
            inputs.extend(params.iter().copied());
            out.extend_from_slice(tape.forward(&inputs)?.data());
            start += rows;
        }
        Tensor::matrix(n, out_w, out)
    }

    /// Per-row output of a scalar-valued network.
    pub fn forward_scalar(&self, x: &Tensor) -> Result<Vec<f64>> {
        if self.spec.output_width() != 1 {
            return Err(invalid("network output is not scalar"));
        }
        Ok(self.forward(x)?.into_data())
    }

    /// `(M, c)` such that the network computes `x ↦ M·x + c`; only for
    /// networks without nonlinear activations.
    pub fn affine_map(&self) -> Result<(Tensor, Vec<f64>)> {
        if !self.spec.is_linear() {
            return Err(invalid("network has nonlinear activations"));
        }
        let r = self.spec.input_width();
        let d = self.spec.output_width();
        let offset = self.forward(&Tensor::zeros(&[1, r]))?.into_data();
        let mut basis = Tensor::zeros(&[r, r]);
        for i in 0..r {
            basis.data_mut()[i * r + i] = 1.0;
        }
        let images = self.forward(&basis)?;
        let mut m = Tensor::zeros(&[d, r]);
        for j in 0..r {
            for i in 0..d {
                m.data_mut()[i * r + j] = images.at(j, i) - offset[i];
            }
        }
        Ok((m, offset))
    }
}

/// Applies a network to every point of a batch.
pub fn mlp_forward(net: &Mlp, batch: &SampleBatch) -> Result<SampleBatch> {
    SampleBatch::new(net.forward(batch.points())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let spec = MlpSpec::discriminator(3);
        assert_eq!(init_params(&spec, 9), init_params(&spec, 9));
        assert_ne!(init_params(&spec, 9), init_params(&spec, 10));
    }

    #[test]
    fn width_one_identity_net() {
        let spec = MlpSpec::uniform(vec![1, 1], Activation::Identity).unwrap();
        let p = init_params(&spec, 0);
        assert_eq!(p.layers.len(), 1);
        assert_eq!(p.layers[0].weight.numel(), 1);
        assert_eq!(p.layers[0].bias.data(), &[0.0]);
    }

    #[test]
    fn init_variance_is_inverse_fan_in() {
        let spec = MlpSpec::uniform(vec![128, 100], Activation::Identity).unwrap();
        let p = init_params(&spec, 3);
        let w = p.layers[0].weight.data();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var * 128.0 - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec::discriminator(2);
        let net = Mlp::new(spec.clone(), MlpParams::zeros(&spec)).unwrap();
        let out = net.forward(&Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn leaky_slope_on_negative_input() {
        let spec = MlpSpec::uniform(vec![1, 1, 1], Activation::LeakyRelu).unwrap();
        let mut params = MlpParams::zeros(&spec);
        params.layers[0].weight.data_mut()[0] = 1.0;
        params.layers[1].weight.data_mut()[0] = 1.0;
        let net = Mlp::new(spec, params).unwrap();
        let out = net.forward(&Tensor::matrix(1, 1, vec![-1.0]).unwrap()).unwrap();
        assert!((out.item() + 0.2).abs() < 1e-15);
    }

    #[test]
    fn input_width_checked() {
        let net = Mlp::init(MlpSpec::discriminator(2), 0);
        assert!(matches!(
            net.forward(&Tensor::zeros(&[4, 3])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn affine_map_of_linear_net() {
        let mut net = Mlp::init(MlpSpec::linear_generator(2, 3), 5);
        for l in &mut net.params.layers {
            for (k, b) in l.bias.data_mut().iter_mut().enumerate() {
                *b = 0.1 * k as f64 - 0.3;
            }
        }
        let (m, c) = net.affine_map().unwrap();
        let x = Tensor::matrix(1, 2, vec![0.7, -1.3]).unwrap();
        let y = net.forward(&x).unwrap();
        for i in 0..3 {
            let manual = m.at(i, 0) * 0.7 + m.at(i, 1) * -1.3 + c[i];
            assert!((manual - y.data()[i]).abs() < 1e-12);
        }
    }
}
