use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::param::{ParamSet, ParamTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

/// Fully connected layer `y = act(x W^T + b)` with `W` of shape `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
    pub activation: Activation,
}

impl DenseLayer {
    /// Weights uniform in `±1/sqrt(in_dim)`, zero biases.
    pub fn new<R: Rng>(
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!(
                "layer {name}: dimensions must be >= 1 ({out_dim}x{in_dim})"
            )));
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Ok(DenseLayer {
            weight: ParamTensor::from_values(format!("{name}.weight"), &[out_dim, in_dim], w)?,
            bias: ParamTensor::zeros(format!("{name}.bias"), &[out_dim]),
            activation,
        })
    }

    pub fn from_parts(
        weight: ParamTensor,
        bias: ParamTensor,
        activation: Activation,
    ) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(
                weight.name().to_string(),
                "[out, in] weight with [out] bias",
                format!("{:?} / {:?}", weight.shape(), bias.shape()),
            ));
        }
        Ok(DenseLayer {
            weight,
            bias,
            activation,
        })
    }

    /// Base name shared by the weight and bias tensors.
    pub fn name(&self) -> &str {
        self.weight.name().trim_end_matches(".weight")
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Returns `(pre_activation, output)` for a batch `[n, in]`.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::shape(
                self.name().to_string(),
                self.in_dim(),
                x.ncols(),
            ));
        }
        let mut pre = Array2::zeros((x.nrows(), self.out_dim()));
        general_mat_mul(1.0, &x, &self.weight.view2().t(), 0.0, &mut pre);
        pre += &self.bias.view1();
        let out = match self.activation {
            Activation::Identity => pre.clone(),
            act => pre.mapv(|v| act.apply(v)),
        };
        Ok((pre, out))
    }

    /// Accumulates parameter gradients given `dL/d(output)` and returns
    /// `dL/d(input)` when requested.
    pub fn backward(
        &mut self,
        input: ArrayView2<'_, f64>,
        pre: ArrayView2<'_, f64>,
        grad_out: ArrayView2<'_, f64>,
        need_input_grad: bool,
    ) -> Option<Array2<f64>> {
        let act = self.activation;
        let mut dpre = grad_out.to_owned();
        if act != Activation::Identity {
            Zip::from(&mut dpre)
                .and(&pre)
                .for_each(|g, &p| *g *= act.derivative(p));
        }
        general_mat_mul(
            1.0,
            &dpre.t(),
            &input,
            1.0,
            &mut self.weight.grad_view2_mut(),
        );
        let db = dpre.sum_axis(Axis(0));
        self.bias
            .grad_view1_mut()
            .zip_mut_with(&db, |g, &d| *g += d);
        need_input_grad.then(|| dpre.dot(&self.weight.view2()))
    }
}

impl ParamSet for DenseLayer {
    fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl ParamSet for Vec<DenseLayer> {
    fn params(&self) -> Vec<&ParamTensor> {
        self.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Every intermediate value of a forward pass through a layer stack.
#[derive(Debug, Clone)]
pub struct Activations {
    /// Input to each layer; `inputs[0]` is the network input.
    pub inputs: Vec<Array2<f64>>,
    pub pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

pub fn forward(layers: &[DenseLayer], input: ArrayView2<'_, f64>) -> Result<Activations> {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut current = input.to_owned();
    for layer in layers {
        let (p, out) = layer.forward(current.view())?;
        inputs.push(current);
        pre.push(p);
        current = out;
    }
    Ok(Activations {
        inputs,
        pre,
        output: current,
    })
}

/// Records one forward pass so the matching backward pass can run once.
#[derive(Debug, Default)]
pub struct Tape {
    trace: Option<Activations>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(
        &mut self,
        layers: &[DenseLayer],
        input: ArrayView2<'_, f64>,
    ) -> Result<&Array2<f64>> {
        let trace = self.trace.insert(forward(layers, input)?);
        Ok(&trace.output)
    }

    pub fn output(&self) -> Option<&Array2<f64>> {
        self.trace.as_ref().map(|t| &t.output)
    }

    /// Back-propagates `grad_output` through `layers`, consuming the recorded
    /// forward pass.
    pub fn backward(
        &mut self,
        layers: &mut [DenseLayer],
        grad_output: ArrayView2<'_, f64>,
        need_input_grad: bool,
    ) -> Result<Option<Array2<f64>>> {
        let trace = self
            .trace
            .take()
            .ok_or_else(|| Error::Usage("backward called before forward".into()))?;
        if trace.pre.len() != layers.len() {
            return Err(Error::Usage(format!(
                "tape recorded {} layers, backward got {}",
                trace.pre.len(),
                layers.len()
            )));
        }
        if grad_output.dim() != trace.output.dim() {
            return Err(Error::shape(
                "grad_output",
                format!("{:?}", trace.output.dim()),
                format!("{:?}", grad_output.dim()),
            ));
        }
        let mut grad = grad_output.to_owned();
        for (i, layer) in layers.iter_mut().enumerate().rev() {
            let want = i > 0 || need_input_grad;
            match layer.backward(
                trace.inputs[i].view(),
                trace.pre[i].view(),
                grad.view(),
                want,
            ) {
                Some(g) => grad = g,
                None => return Ok(None),
            }
        }
        Ok(Some(grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(w: Vec<f64>, out: usize, inp: usize, b: Vec<f64>, act: Activation) -> DenseLayer {
        DenseLayer::from_parts(
            ParamTensor::from_values("l.weight", &[out, inp], w).unwrap(),
            ParamTensor::from_values("l.bias", &[out], b).unwrap(),
            act,
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let l = layer(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            3,
            3,
            vec![0.0; 3],
            Activation::Identity,
        );
        let x = array![[1.5, -2.0, 0.25], [0.0, 3.0, -1.0]];
        assert_eq!(l.forward(x.view()).unwrap().1, x);
    }

    #[test]
    fn relu_zeroes_negative_preactivations() {
        let l = layer(
            vec![1.0, 1.0, -1.0, 2.0],
            2,
            2,
            vec![-10.0, -10.0],
            Activation::Relu,
        );
        let (_, y) = l.forward(array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(y, array![[0.0, 0.0]]);
    }

    #[test]
    fn two_layer_net_matches_hand_computation() {
        // x = [1, -1]; h = relu([[1,2],[3,-1]] x + [0.5, -1]) = relu([-0.5, 3]) = [0, 3]
        // y = [[2, -1]] h + [1] = -2
        let layers = vec![
            layer(
                vec![1.0, 2.0, 3.0, -1.0],
                2,
                2,
                vec![0.5, -1.0],
                Activation::Relu,
            ),
            layer(vec![2.0, -1.0], 1, 2, vec![1.0], Activation::Identity),
        ];
        let acts = forward(&layers, array![[1.0, -1.0]].view()).unwrap();
        assert_eq!(acts.pre[0], array![[-0.5, 3.0]]);
        assert_eq!(acts.inputs[1], array![[0.0, 3.0]]);
        assert_eq!(acts.output, array![[-2.0]]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let l = layer(vec![1.0, 2.0], 1, 2, vec![0.0], Activation::Identity);
        assert!(matches!(
            l.forward(array![[1.0, 2.0, 3.0]].view()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn backward_before_forward_is_a_usage_error() {
        let mut layers = vec![layer(vec![1.0], 1, 1, vec![0.0], Activation::Identity)];
        let mut tape = Tape::new();
        let err = tape
            .backward(&mut layers, array![[1.0]].view(), false)
            .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        tape.forward(&layers, array![[2.0]].view()).unwrap();
        tape.backward(&mut layers, array![[1.0]].view(), false)
            .unwrap();
        assert!(tape
            .backward(&mut layers, array![[1.0]].view(), false)
            .is_err());
    }

    #[test]
    fn square_loss_gradient() {
        // y = w * 1, L = y^2, so dL/dw = 2w = 6 at w = 3.
        let mut layers = vec![layer(vec![3.0], 1, 1, vec![0.0], Activation::Identity)];
        let mut tape = Tape::new();
        let y = tape.forward(&layers, array![[1.0]].view()).unwrap()[[0, 0]];
        tape.backward(&mut layers, array![[2.0 * y]].view(), false)
            .unwrap();
        assert!((layers[0].weight.grad()[0] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = DenseLayer::new(
            "a",
            16,
            4,
            Activation::Relu,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let b = DenseLayer::new(
            "a",
            16,
            4,
            Activation::Relu,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(a.weight.values().iter().all(|w| w.abs() <= 0.25));
        assert!(a.bias.values().iter().all(|&b| b == 0.0));
        assert!(DenseLayer::new(
            "z",
            0,
            4,
            Activation::Relu,
            &mut ChaCha8Rng::seed_from_u64(1)
        )
        .is_err());
    }
}
