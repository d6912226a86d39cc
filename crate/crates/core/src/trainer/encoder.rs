use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine layer `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let scale = (1.0 / inputs as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((outputs, inputs), || {
            let g: f64 = StandardNormal.sample(rng);
            g * scale
        });
        Self {
            weight,
            bias: Array1::zeros(outputs),
        }
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

/// Student/teacher network: `input → tanh(hidden) → embed`, or a single
/// affine map when there is no hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub hidden: Option<Dense>,
    pub output: Dense,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    hidden_act: Option<Array2<f64>>,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, embed_dim: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || embed_dim == 0 {
            return Err(Error::InvalidParameter("encoder dimensions must be positive".into()));
        }
        Ok(if hidden_dim == 0 {
            Self {
                hidden: None,
                output: Dense::init(input_dim, embed_dim, rng),
            }
        } else {
            let hidden = Dense::init(input_dim, hidden_dim, rng);
            Self {
                hidden: Some(hidden),
                output: Dense::init(hidden_dim, embed_dim, rng),
            }
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.output).weight.ncols()
    }

    pub fn embed_dim(&self) -> usize {
        self.output.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, ForwardCache) {
        match &self.hidden {
            None => (self.output.forward(x), ForwardCache { hidden_act: None }),
            Some(h) => {
                let act = h.forward(x).mapv(f64::tanh);
                let out = self.output.forward(act.view());
                (out, ForwardCache { hidden_act: Some(act) })
            }
        }
    }

    /// Parameter gradient given `∂L/∂v` for every row of `x`.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        cache: &ForwardCache,
        grad_out: ArrayView2<'_, f64>,
    ) -> EncoderParams {
        let layer_input = cache.hidden_act.as_ref().map_or(x, |a| a.view());
        let output = Dense {
            weight: grad_out.t().dot(&layer_input),
            bias: grad_out.sum_axis(Axis(0)),
        };
        let hidden = match (&self.hidden, &cache.hidden_act) {
            (Some(_), Some(act)) => {
                let mut grad_pre = grad_out.dot(&self.output.weight);
                Zip::from(&mut grad_pre).and(act).for_each(|g, &a| *g *= 1.0 - a * a);
                Some(Dense {
                    weight: grad_pre.t().dot(&x),
                    bias: grad_pre.sum_axis(Axis(0)),
                })
            }
            _ => None,
        };
        EncoderParams { hidden, output }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.as_ref().map(Dense::zeros_like),
            output: self.output.zeros_like(),
        }
    }

    /// `self ← self − lr·grad`.
    pub fn descend(&mut self, grad: &EncoderParams, lr: f64) {
        fn step(p: &mut Dense, g: &Dense, lr: f64) {
            p.weight.scaled_add(-lr, &g.weight);
            p.bias.scaled_add(-lr, &g.bias);
        }
        if let (Some(p), Some(g)) = (self.hidden.as_mut(), grad.hidden.as_ref()) {
            step(p, g, lr);
        }
        step(&mut self.output, &grad.output, lr);
    }

    /// Parameters in a fixed order: hidden W, hidden b, output W, output b.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in self.hidden.iter().chain(std::iter::once(&self.output)) {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for layer in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            layer.weight.iter_mut().chain(layer.bias.iter_mut()).for_each(|p| {
                *p = *it.next().expect("flat parameter vector too short");
            });
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }
}
