use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Affine layer `y = W x + b` with `W` stored as `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Array2::zeros((output, input)), bias: Array1::zeros(output) }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Softplus on every hidden layer, linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs and pre-activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct MlpTrace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and biases.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight = Array2::from_shape_fn((w[1], w[0]), |_| rng.random_range(-bound..bound));
                let bias = Array1::from_shape_fn(w[1], |_| rng.random_range(-bound..bound));
                Dense { weight, bias }
            })
            .collect();
        Self { layers }
    }

    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Dense::zeros(l.input_dim(), l.output_dim())).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        for w in self.layers.windows(2) {
            if w[1].input_dim() != w[0].output_dim() {
                return Err(Error::DimensionMismatch { expected: w[0].output_dim(), got: w[1].input_dim() });
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::DimensionMismatch { expected: l.output_dim(), got: l.bias.len() });
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice().unwrap(), l.bias.as_slice().unwrap()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_slice_mut().unwrap(), l.bias.as_slice_mut().unwrap()])
            .collect()
    }

    /// Batched forward pass, one input per row.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = self.layers[0].apply(x);
        for layer in &self.layers[1..] {
            h.mapv_inplace(softplus);
            h = layer.apply(h.view());
        }
        h
    }

    pub(crate) fn forward_traced(&self, x: Array2<f64>) -> (Array2<f64>, MlpTrace) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(h.view());
            inputs.push(h);
            h = if i < last { z.mapv(softplus) } else { z.clone() };
            pre.push(z);
        }
        (h, MlpTrace { inputs, pre })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub(crate) fn backward(&self, trace: &MlpTrace, grad_out: Array2<f64>, grads: &mut Mlp) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut g = grad_out;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                g.zip_mut_with(&trace.pre[i], |gi, z| *gi *= sigmoid(*z));
            }
            let gl = &mut grads.layers[i];
            gl.weight += &g.t().dot(&trace.inputs[i]);
            gl.bias += &g.sum_axis(Axis(0));
            g = g.dot(&self.layers[i].weight);
        }
        g
    }
}

/// Forward pass of a single input vector through a layer stack.
pub fn mlp_forward(layers: &[Dense], input: &[f64]) -> Result<Vec<f64>> {
    let first = layers.first().ok_or(Error::DimensionMismatch { expected: 1, got: 0 })?;
    if first.input_dim() != input.len() {
        return Err(Error::DimensionMismatch { expected: first.input_dim(), got: input.len() });
    }
    let net = Mlp { layers: layers.to_vec() };
    net.validate()?;
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
    Ok(net.forward(x).row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp { layers: vec![Dense::zeros(3, 4), Dense::zeros(4, 2)] };
        assert_eq!(mlp_forward(&net.layers, &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_layer_is_affine() {
        let layer = Dense { weight: array![[1.0, 2.0], [3.0, -1.0]], bias: array![0.5, -0.5] };
        assert_eq!(mlp_forward(&[layer], &[2.0, 1.0]).unwrap(), vec![4.5, 4.5]);
    }

    #[test]
    fn hidden_softplus_of_zero_is_ln2() {
        let net = Mlp { layers: vec![Dense::zeros(2, 3)] };
        let (_, trace) = net.forward_traced(Array2::zeros((1, 2)));
        let hidden = trace.pre[0].mapv(softplus);
        assert!(hidden.iter().all(|h| (h - std::f64::consts::LN_2).abs() < 1e-15));
        // With an identity readout of the hidden layer the output shows ln 2.
        let readout = Dense { weight: Array2::eye(3), bias: Array1::zeros(3) };
        let out = mlp_forward(&[Dense::zeros(2, 3), readout], &[0.3, 0.4]).unwrap();
        assert!(out.iter().all(|h| (h - std::f64::consts::LN_2).abs() < 1e-12));
    }

    #[test]
    fn rejects_wrong_input_dim() {
        let net = Mlp { layers: vec![Dense::zeros(3, 2)] };
        assert!(matches!(mlp_forward(&net.layers, &[1.0]), Err(Error::DimensionMismatch { expected: 3, got: 1 })));
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert!((sigmoid(-800.0)).abs() < 1e-300 && (sigmoid(800.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn traced_forward_matches_plain() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let net = Mlp::random(&[3, 5, 2], &mut rng);
        let x = array![[0.1, -0.2, 0.3], [1.0, 0.5, -1.0]];
        let (a, _) = net.forward_traced(x.clone());
        assert_eq!(a, net.forward(x.view()));
    }
}
