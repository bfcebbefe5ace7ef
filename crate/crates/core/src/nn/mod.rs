//! Small fixed-architecture multilayer perceptrons with hand-written
//! backpropagation, an optimizer, and the loss primitives used by the agents.
//!
//! Parameters live in one flat vector. Each layer stores its weight matrix
//! (`fan_in x fan_out`, row-major) followed by its bias (`fan_out`). Hidden
//! layers apply the activation, the output layer is linear.

mod io;
pub mod loss;
mod optim;

pub use io::{
    read_params_file, read_vector_file, write_params_file, write_vector_file, ParamsHeader, PARAMS_FORMAT_VERSION,
};
pub use optim::{OptimMethod, OptimizerState};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and the output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// A trainable multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Approximator {
    layer_dims: Vec<usize>,
    params: Vec<f64>,
    activation: Activation,
    rng_seed: u64,
}

/// Gradient of a scalar loss with respect to every parameter of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub param_grads: Vec<f64>,
    pub loss_value: f64,
}

impl GradientTape {
    pub fn zeros(len: usize) -> Self {
        GradientTape {
            param_grads: vec![0.0; len],
            loss_value: 0.0,
        }
    }

    /// Adds another tape for the same network (losses and gradients sum).
    pub fn accumulate(&mut self, other: &GradientTape) {
        assert_eq!(self.param_grads.len(), other.param_grads.len());
        for (g, o) in self.param_grads.iter_mut().zip(&other.param_grads) {
            *g += o;
        }
        self.loss_value += other.loss_value;
    }

    pub fn is_finite(&self) -> bool {
        self.loss_value.is_finite() && self.param_grads.iter().all(|g| g.is_finite())
    }
}

/// Value of a scalar loss on a batch of network outputs together with its
/// gradient with respect to those outputs.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    pub d_output: Array2<f64>,
}

struct ForwardCache {
    /// Layer inputs, starting with the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

pub fn param_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl Approximator {
    /// Uniform fan-in initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
    /// for both weights and biases.
    pub fn new(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(layer_dims));
        for w in layer_dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] + 1) * w[1] {
                params.push(rng.random_range(-bound..=bound));
            }
        }
        Ok(Approximator {
            layer_dims: layer_dims.to_vec(),
            params,
            activation,
            rng_seed: seed,
        })
    }

    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        validate_dims(layer_dims)?;
        Ok(Approximator {
            layer_dims: layer_dims.to_vec(),
            params: vec![0.0; param_count(layer_dims)],
            activation,
            rng_seed: 0,
        })
    }

    pub fn from_params(layer_dims: &[usize], activation: Activation, params: Vec<f64>, rng_seed: u64) -> Result<Self> {
        validate_dims(layer_dims)?;
        let expected = param_count(layer_dims);
        if params.len() != expected {
            return Err(Error::Shape {
                expected,
                got: params.len(),
            });
        }
        Ok(Approximator {
            layer_dims: layer_dims.to_vec(),
            params,
            activation,
            rng_seed,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Weight matrix and bias of layer `l`, borrowed from the flat vector.
    pub fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let offset: usize = self.layer_dims[..=l].windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
        let w = &self.params[offset..offset + fan_in * fan_out];
        let b = &self.params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
        (
            ArrayView2::from_shape((fan_in, fan_out), w).expect("layer shape"),
            ArrayView1::from(b),
        )
    }

    fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        Ok(self.forward_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass over a batch laid out as `(examples, features)`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.to_owned();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut z = h.dot(&w);
            z += &b;
            if l + 1 < self.n_layers() {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut pre = Vec::with_capacity(self.n_layers() - 1);
        let mut h = x.to_owned();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut z = h.dot(&w);
            z += &b;
            inputs.push(h);
            if l + 1 < self.n_layers() {
                let act = self.activation;
                pre.push(z.clone());
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(ForwardCache { inputs, pre, output: h })
    }

    /// Gradient of `loss(outputs)` with respect to the parameters.
    ///
    /// The closure receives the network outputs for `x` and returns the loss
    /// value and its gradient with respect to those outputs.
    pub fn backward<F>(&self, x: ArrayView2<'_, f64>, loss: F) -> Result<GradientTape>
    where
        F: FnOnce(ArrayView2<'_, f64>) -> Result<LossEval>,
    {
        self.backward_full(x, loss, false).map(|(tape, _)| tape)
    }

    /// Like [`Approximator::backward`] but also returns the gradient with
    /// respect to the inputs.
    pub fn backward_with_input_grad<F>(&self, x: ArrayView2<'_, f64>, loss: F) -> Result<(GradientTape, Array2<f64>)>
    where
        F: FnOnce(ArrayView2<'_, f64>) -> Result<LossEval>,
    {
        self.backward_full(x, loss, true)
            .map(|(tape, dx)| (tape, dx.expect("input grad requested")))
    }

    fn backward_full<F>(
        &self,
        x: ArrayView2<'_, f64>,
        loss: F,
        want_input_grad: bool,
    ) -> Result<(GradientTape, Option<Array2<f64>>)>
    where
        F: FnOnce(ArrayView2<'_, f64>) -> Result<LossEval>,
    {
        let cache = self.forward_cached(x)?;
        let LossEval { value, d_output } = loss(cache.output.view())?;
        if d_output.dim() != cache.output.dim() {
            return Err(Error::Shape {
                expected: cache.output.len(),
                got: d_output.len(),
            });
        }
        if let Some((index, _)) = d_output
            .axis_iter(Axis(0))
            .enumerate()
            .find(|(_, row)| row.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Numeric {
                index,
                what: "loss gradient".into(),
            });
        }
        if !value.is_finite() {
            return Err(Error::Numeric {
                index: 0,
                what: "loss value".into(),
            });
        }

        let mut grads = vec![0.0; self.params.len()];
        let mut delta = d_output;
        let mut input_grad = None;
        for l in (0..self.n_layers()).rev() {
            let offset: usize = self.layer_dims[..=l].windows(2).map(|w| (w[0] + 1) * w[1]).sum();
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let gw = cache.inputs[l].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            grads[offset..offset + fan_in * fan_out].copy_from_slice(gw.as_standard_layout().as_slice().unwrap());
            grads[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out].copy_from_slice(gb.as_slice().unwrap());
            if l == 0 && !want_input_grad {
                break;
            }
            let (w, _) = self.layer(l);
            let mut prev = delta.dot(&w.t());
            if l > 0 {
                let act = self.activation;
                ndarray::Zip::from(&mut prev)
                    .and(&cache.pre[l - 1])
                    .and(&cache.inputs[l])
                    .for_each(|d, &z, &a| *d *= act.derivative(z, a));
                delta = prev;
            } else {
                input_grad = Some(prev);
                break;
            }
        }
        Ok((
            GradientTape {
                param_grads: grads,
                loss_value: value,
            },
            input_grad,
        ))
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Polyak averaging: `self <- (1 - rate) * self + rate * source`.
    pub fn soft_update_from(&mut self, source: &Approximator, rate: f64) {
        assert_eq!(self.params.len(), source.params.len());
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = (1.0 - rate) * *t + rate * s;
        }
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::Parameter(
            "an approximator needs at least an input and an output dimension".into(),
        ));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::Parameter("layer dimensions must be positive".into()));
    }
    Ok(())
}

/// Stacks rows into a `(rows, dim)` matrix.
pub fn stack_rows<'a, I>(rows: I, dim: usize) -> Array2<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut flat = Vec::new();
    let mut n = 0;
    for r in rows {
        debug_assert_eq!(r.len(), dim);
        flat.extend_from_slice(r);
        n += 1;
    }
    Array2::from_shape_vec((n, dim), flat).expect("row lengths match dim")
}

/// Concatenates two matrices column-wise.
pub fn hcat(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("row counts match")
}

pub fn column(x: &Array2<f64>) -> Array1<f64> {
    x.column(0).to_owned()
}
