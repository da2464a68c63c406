//! Dense feed-forward network: forward pass, backpropagated gradients and
//! per-row output sensitivities.
//!
//! Batches are column-per-sample matrices (`features x samples`). Parameters
//! flatten layer by layer, each layer as its weight matrix in row-major order
//! followed by its bias vector.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
    Relu,
    Sigmoid,
}

/// `tanh` through a single `exp`, about three times faster than the libm
/// routine. Near zero `exp_m1` avoids the cancellation in `1 - e`.
#[inline]
fn tanh(z: f64) -> f64 {
    let u = -2.0 * z.abs();
    let t = if u > -0.25 {
        let e = u.exp_m1();
        -e / (2.0 + e)
    } else {
        let e = u.exp();
        (1.0 - e) / (1.0 + e)
    };
    t.copysign(z)
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => tanh(z),
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `outputs x inputs`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn n_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Activations of every layer for one batch; `act[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pre: Vec<DMatrix<f64>>,
    pub act: Vec<DMatrix<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &DMatrix<f64> {
        self.act.last().expect("trace has an output layer")
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidParameter(format!(
            "layer sizes {sizes:?} need an input, an output and no zero widths"
        )));
    }
    Ok(())
}

impl Mlp {
    /// Weights and biases drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Self> {
        check_sizes(sizes)?;
        let mut r = rng(seed, &[0x6d6c70]);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weights = DMatrix::from_fn(w[1], w[0], |_, _| r.gen_range(-bound..=bound));
                let bias = DVector::from_fn(w[1], |_, _| r.gen_range(-bound..=bound));
                Layer { weights, bias }
            })
            .collect();
        Ok(Self {
            layers,
            hidden,
            output,
        })
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: DMatrix::zeros(w[1], w[0]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            layers,
            hidden,
            output,
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.n_inputs()];
        s.extend(self.layers.iter().map(Layer::n_out));
        s
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map(Layer::n_out).unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            for j in 0..l.n_out() {
                p.extend(l.weights.row(j).iter());
            }
            p.extend(l.bias.iter());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a network with {}",
                p.len(),
                self.n_params()
            )));
        }
        let mut it = p.iter();
        for l in &mut self.layers {
            let (rows, cols) = l.weights.shape();
            for j in 0..rows {
                for k in 0..cols {
                    l.weights[(j, k)] = *it.next().expect("length checked");
                }
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_inputs() {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} for a network with {} inputs",
                x.len(),
                self.n_inputs()
            )));
        }
        let y = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x))?;
        Ok(y.column(0).iter().copied().collect())
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_batch(x)?;
        let mut a = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let act = self.activation(i);
            let mut z = &l.weights * &a;
            for mut col in z.column_iter_mut() {
                col += &l.bias;
                col.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn trace(&self, x: &DMatrix<f64>) -> Result<ForwardTrace> {
        self.check_batch(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = Vec::with_capacity(self.layers.len() + 1);
        act.push(x.clone());
        for (i, l) in self.layers.iter().enumerate() {
            let f = self.activation(i);
            let mut z = &l.weights * act.last().expect("non-empty");
            for mut col in z.column_iter_mut() {
                col += &l.bias;
            }
            let a = z.map(|v| f.apply(v));
            pre.push(z);
            act.push(a);
        }
        Ok(ForwardTrace { pre, act })
    }

    fn check_batch(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.n_inputs() {
            return Err(Error::ShapeMismatch(format!(
                "batch with {} features for a network with {} inputs",
                x.nrows(),
                self.n_inputs()
            )));
        }
        Ok(())
    }

    /// Elementwise `f'(z)` of every layer.
    pub(crate) fn derivatives(&self, trace: &ForwardTrace) -> Vec<DMatrix<f64>> {
        trace
            .pre
            .iter()
            .zip(&trace.act[1..])
            .enumerate()
            .map(|(i, (z, a))| {
                let f = self.activation(i);
                z.zip_map(a, |z, a| f.derivative(z, a))
            })
            .collect()
    }

    /// Gradient of the batch MSE (mean over samples and outputs).
    pub fn mse_gradient(&self, x: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
        let trace = self.trace(x)?;
        let y = trace.output();
        check_targets(y, t)?;
        let count = y.len() as f64;
        let err = y - t;
        let mse = err.norm_squared() / count;
        let derivs = self.derivatives(&trace);

        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = err.component_mul(derivs.last().expect("layer")) * (2.0 / count);
        for l in (0..self.layers.len()).rev() {
            let gw = &delta * trace.act[l].transpose();
            let gb = row_sums(&delta);
            if l > 0 {
                let back = self.layers[l].weights.tr_mul(&delta);
                delta = back.component_mul(&derivs[l - 1]);
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            for j in 0..gw.nrows() {
                flat.extend(gw.row(j).iter());
            }
            flat.extend(gb.iter());
        }
        Ok((flat, mse))
    }

    /// Add `delta` (flattened like `params`) to the parameters.
    pub fn add_params(&mut self, delta: &[f64], scale: f64) {
        let mut it = delta.iter();
        for l in &mut self.layers {
            let (rows, cols) = l.weights.shape();
            for j in 0..rows {
                for k in 0..cols {
                    l.weights[(j, k)] += scale * it.next().expect("delta length");
                }
            }
            for b in l.bias.iter_mut() {
                *b += scale * it.next().expect("delta length");
            }
        }
    }

    /// Batch MSE against targets.
    pub fn mse(&self, x: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<f64> {
        let y = self.forward_batch(x)?;
        check_targets(&y, t)?;
        Ok((y - t).norm_squared() / t.len().max(1) as f64)
    }
}

pub(crate) fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

pub(crate) fn check_targets(y: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<()> {
    if y.shape() != t.shape() {
        return Err(Error::ShapeMismatch(format!(
            "targets {:?} vs outputs {:?}",
            t.shape(),
            y.shape()
        )));
    }
    Ok(())
}
