use ndarray::Zip;

use crate::error::{contract, Result};
use crate::scalar::Scalar;

use super::net::{DenseNet, Grads};

/// Adam moments for one network.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    m: Grads<F>,
    v: Grads<F>,
    steps: u64,
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Scalar> AdamState<F> {
    /// Zeroed moments with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(net: &DenseNet<F>, lr: F) -> Self {
        AdamState {
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
            steps: 0,
            lr,
            beta1: F::lit(0.9),
            beta2: F::lit(0.999),
            eps: F::lit(1e-8),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected Adam step.
    pub fn step(&mut self, net: &mut DenseNet<F>, grads: &Grads<F>) -> Result<()> {
        if grads.layers.len() != net.layers().len() {
            return contract("gradient layer count does not match network");
        }
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2, one) = (self.beta1, self.beta2, F::one());
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let (lr, eps) = (self.lr, self.eps);
        let update = |p: &mut F, m: &mut F, v: &mut F, g: &F| {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, m), v), g) in net
            .layers_mut()
            .iter_mut()
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
            .zip(&grads.layers)
        {
            if layer.weights.dim() != g.weights.dim() || layer.bias.dim() != g.bias.dim() {
                return contract("gradient shape does not match parameters");
            }
            Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(update);
        }
        Ok(())
    }
}
