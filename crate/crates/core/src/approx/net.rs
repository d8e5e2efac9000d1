use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    Tanh,
    Softmax,
}

/// One affine layer. `weights` has shape `(fan_in, fan_out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Dense<F> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Dense::zeros(self.weights.nrows(), self.weights.ncols())
    }
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<F> {
    pub layers: Vec<Dense<F>>,
}

impl<F: Scalar> Grads<F> {
    pub fn zeros_like(net: &DenseNet<F>) -> Self {
        Grads {
            layers: net.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    /// All gradient entries, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<F> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|g| g.is_zero())
    }
}

/// Intermediate values of a batched forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct Trace<F> {
    /// Input to each layer; the last entry is the activated output.
    activations: Vec<Array2<F>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<F>>,
}

impl<F: Scalar> Trace<F> {
    pub fn output(&self) -> &Array2<F> {
        self.activations.last().expect("trace has an output")
    }

    /// Pre-activation of the output layer (logits, or pre-tanh actions).
    pub fn output_pre(&self) -> &Array2<F> {
        self.pre.last().expect("trace has an output")
    }
}

/// Feed-forward network: ReLU hidden layers and a configurable output activation.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet<F> {
    layers: Vec<Dense<F>>,
    output: OutputActivation,
}

impl<F: Scalar> DenseNet<F> {
    /// Random network with uniform fan-in initialisation `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: OutputActivation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, output)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.weights.nrows() as f64).sqrt();
            layer.weights.mapv_inplace(|_| F::lit(rng.random_range(-bound..bound)));
            layer.bias.mapv_inplace(|_| F::lit(rng.random_range(-bound..bound)));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return contract(format!("invalid layer sizes {sizes:?}"));
        }
        Ok(DenseNet {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            output,
        })
    }

    pub fn from_layers(layers: Vec<Dense<F>>, output: OutputActivation) -> Result<Self> {
        if layers.is_empty() {
            return contract("network needs at least one layer");
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.ncols() {
                return contract(format!("layer {i}: bias length does not match fan-out"));
            }
            if i > 0 && layers[i - 1].weights.ncols() != l.weights.nrows() {
                return contract(format!("layer {i}: fan-in does not match previous fan-out"));
            }
        }
        Ok(DenseNet { layers, output })
    }

    pub fn layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<F>] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weights.ncols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weights.ncols()).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Single-input convenience wrapper around [`DenseNet::forward_batch`].
    pub fn forward(&self, input: &[F]) -> Result<Vec<F>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(x.ncols())?;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weights);
            z += &layer.bias;
            if i + 1 < self.layers.len() {
                z.mapv_inplace(relu);
            } else {
                self.activate(&mut z);
            }
            h = z;
        }
        Ok(h)
    }

    /// Forward pass that keeps every intermediate array.
    pub fn forward_trace(&self, x: ArrayView2<F>) -> Result<Trace<F>> {
        self.check_input(x.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(x.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = activations[i].dot(&layer.weights);
            z += &layer.bias;
            let mut a = z.clone();
            if i + 1 < self.layers.len() {
                a.mapv_inplace(relu);
            } else {
                self.activate(&mut a);
            }
            pre.push(z);
            activations.push(a);
        }
        Ok(Trace { activations, pre })
    }

    /// Reverse pass. `d_out` is the loss adjoint with respect to the activated
    /// output; returns parameter gradients and the adjoint of the input.
    pub fn backward(&self, trace: &Trace<F>, d_out: ArrayView2<F>) -> Result<(Grads<F>, Array2<F>)> {
        let out = trace.output();
        if d_out.dim() != out.dim() {
            return Err(Error::Shape {
                expected: out.len(),
                got: d_out.len(),
            });
        }
        let mut delta = match self.output {
            OutputActivation::Linear => d_out.to_owned(),
            OutputActivation::Tanh => {
                let mut d = d_out.to_owned();
                Zip::from(&mut d).and(out).for_each(|d, &y| *d *= F::one() - y * y);
                d
            }
            OutputActivation::Softmax => {
                let mut d = d_out.to_owned();
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(out.rows()) {
                    let dot: F = drow.iter().zip(yrow.iter()).map(|(&a, &b)| a * b).sum();
                    Zip::from(&mut drow).and(&yrow).for_each(|d, &y| *d = y * (*d - dot));
                }
                d
            }
        };
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let dw = trace.activations[i].t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            grads.push(Dense { weights: dw, bias: db });
            let mut d_in = delta.dot(&layer.weights.t());
            if i > 0 {
                Zip::from(&mut d_in).and(&trace.pre[i - 1]).for_each(|d, &z| {
                    if z <= F::zero() {
                        *d = F::zero();
                    }
                });
            }
            delta = d_in;
        }
        grads.reverse();
        Ok((Grads { layers: grads }, delta))
    }

    /// `self <- (1 - tau) * self + tau * src`.
    pub fn soft_update_from(&mut self, src: &DenseNet<F>, tau: F) -> Result<()> {
        if self.sizes() != src.sizes() {
            return contract("soft update between networks of different shapes");
        }
        let keep = F::one() - tau;
        for (t, s) in self.layers.iter_mut().zip(&src.layers) {
            Zip::from(&mut t.weights)
                .and(&s.weights)
                .for_each(|t, &s| *t = keep * *t + tau * s);
            Zip::from(&mut t.bias)
                .and(&s.bias)
                .for_each(|t, &s| *t = keep * *t + tau * s);
        }
        Ok(())
    }

    fn check_input(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    fn activate(&self, z: &mut Array2<F>) {
        match self.output {
            OutputActivation::Linear => {}
            OutputActivation::Tanh => z.mapv_inplace(|v| v.tanh()),
            OutputActivation::Softmax => {
                for mut row in z.rows_mut() {
                    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
                    row.mapv_inplace(|v| (v - m).exp());
                    let s: F = row.iter().copied().sum();
                    row.mapv_inplace(|v| v / s);
                }
            }
        }
    }
}

#[inline]
fn relu<F: Scalar>(v: F) -> F {
    if v > F::zero() {
        v
    } else {
        F::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::<f64>::zeros(&[3, 8, 2], OutputActivation::Linear).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let eye = Array2::<f64>::eye(3);
        let net = DenseNet::from_layers(
            vec![Dense {
                weights: eye,
                bias: Array1::zeros(3),
            }],
            OutputActivation::Linear,
        )
        .unwrap();
        assert_eq!(net.forward(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn forward_is_deterministic_and_shape_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::<f64>::new(&[4, 16, 16, 3], OutputActivation::Tanh, &mut rng).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4];
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { expected: 4, got: 1 })));
    }

    #[test]
    fn softmax_output_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::<f64>::new(&[2, 8, 5], OutputActivation::Softmax, &mut rng).unwrap();
        let y = net.forward(&[0.3, -0.7]).unwrap();
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_adjoint_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNet::<f64>::new(&[2, 8, 1], OutputActivation::Linear, &mut rng).unwrap();
        let x = array![[0.3, 0.9], [-1.0, 0.2]];
        let trace = net.forward_trace(x.view()).unwrap();
        let (g, dx) = net.backward(&trace, Array2::zeros((2, 1)).view()).unwrap();
        assert!(g.is_zero());
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dead_relu_unit_has_no_gradient() {
        // Hidden unit 0 always has a negative pre-activation, unit 1 is live.
        let l0 = Dense {
            weights: array![[0.0, 1.0]],
            bias: array![-1.0, 0.0],
        };
        let l1 = Dense {
            weights: array![[2.0], [3.0]],
            bias: array![0.0],
        };
        let net = DenseNet::from_layers(vec![l0, l1], OutputActivation::Linear).unwrap();
        let trace = net.forward_trace(array![[0.5]].view()).unwrap();
        let (g, _) = net.backward(&trace, array![[1.0]].view()).unwrap();
        assert_eq!(g.layers[0].weights[[0, 0]], 0.0);
        assert_eq!(g.layers[0].bias[0], 0.0);
        assert_eq!(g.layers[1].weights[[0, 0]], 0.0);
        assert_ne!(g.layers[0].weights[[0, 1]], 0.0);
    }

    #[test]
    fn soft_update_arithmetic() {
        let mut target = DenseNet::<f64>::zeros(&[1, 1], OutputActivation::Linear).unwrap();
        let mut src = target.clone();
        src.layers_mut()[0].weights.fill(1.0);
        target.soft_update_from(&src, 0.005).unwrap();
        assert_eq!(target.layers()[0].weights[[0, 0]], 0.005);
    }
}
