use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dual::{gelu, gelu_with_prime, Dual};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn apply_dual(self, x: Dual) -> Dual {
        match self {
            Activation::Gelu => x.gelu(),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn with_derivative(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Gelu => gelu_with_prime(x),
            Activation::Identity => (x, 1.0),
        }
    }
}

/// Affine layer `y = x Wᵀ + b`, with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    /// `U(−1/√fan_in, 1/√fan_in)` for weights and biases.
    pub fn uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
        let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound));
        Self { weight, bias }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }

    fn affine(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Dense>,
}

impl Gradient {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp.layers.iter().map(|l| Dense::zeros(l.fan_in(), l.fan_out())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weight *= c;
            l.bias *= c;
        }
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }
}

/// Activations recorded by [`Mlp::forward_cached`] for a later backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    /// Activation derivative at each hidden pre-activation.
    deriv: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> Option<usize> {
        self.inputs.first().map(|x| x.nrows())
    }
}

/// Fully connected network: activation after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl Mlp {
    /// `sizes = [input, hidden…, output]`. Hidden layers use fan-in uniform
    /// initialization; the head is zeroed when `zero_head` is set.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, zero_head: bool, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if i + 1 == n && zero_head {
                    Dense::zeros(w[0], w[1])
                } else {
                    Dense::uniform(w[0], w[1], rng)
                }
            })
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].fan_out() != w[1].fan_in() {
                return Err(Error::DimensionMismatch {
                    what: if i == 0 { "layer 1 fan-in" } else { "layer fan-in" },
                    expected: w[0].fan_out(),
                    got: w[1].fan_in(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::DimensionMismatch { what: "bias length", expected: l.fan_out(), got: l.bias.len() });
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(Dense::fan_out));
        sizes
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch { what: "flat parameters", expected: self.num_params(), got: flat.len() });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { what: "network input", expected: self.input_dim(), got: x.ncols() });
        }
        Ok(())
    }

    /// Batched forward pass; rows are samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut h = self.layers[0].affine(&x);
        if last > 0 {
            h.mapv_inplace(|v| self.activation.apply(v));
        }
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.affine(&h.view());
            if i < last {
                h.mapv_inplace(|v| self.activation.apply(v));
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache::default();
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = layer.affine(&h.view());
            cache.inputs.push(h);
            if i < last {
                let mut d = Array2::zeros(pre.dim());
                Zip::from(&mut pre).and(&mut d).for_each(|p, d| (*p, *d) = self.activation.with_derivative(*p));
                cache.deriv.push(d);
            }
            h = pre;
        }
        Ok((h, cache))
    }

    /// Forward-mode pass carrying a tangent for every input row.
    ///
    /// Returns `(output, J · tangent)`. The primal half runs the same
    /// arithmetic as [`Mlp::forward`], so the two outputs agree bitwise.
    pub fn jvp(&self, x: ArrayView2<f64>, tangent: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_input(&x)?;
        if tangent.dim() != x.dim() {
            return Err(Error::DimensionMismatch { what: "tangent columns", expected: x.ncols(), got: tangent.ncols() });
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        let mut dh = tangent.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = layer.affine(&h.view());
            let mut dpre = dh.dot(&layer.weight.t());
            if i < last {
                let act = self.activation;
                Zip::from(&mut pre).and(&mut dpre).for_each(|p, d| {
                    let y = act.apply_dual(Dual::new(*p, *d));
                    *p = y.primal;
                    *d = y.tangent;
                });
            }
            h = pre;
            dh = dpre;
        }
        Ok((h, dh))
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        grad_out: ArrayView2<f64>,
        mut params: Option<&mut Gradient>,
    ) -> Result<Array2<f64>> {
        let batch = cache.batch_size().ok_or(Error::NoForwardPass)?;
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::NoForwardPass);
        }
        if grad_out.nrows() != batch {
            return Err(Error::DimensionMismatch { what: "gradient rows", expected: batch, got: grad_out.nrows() });
        }
        if grad_out.ncols() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                what: "gradient columns",
                expected: self.output_dim(),
                got: grad_out.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut delta = grad_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                delta *= &cache.deriv[i];
            }
            if let Some(g) = params.as_deref_mut() {
                let gl = &mut g.layers[i];
                gl.weight += &delta.t().dot(&cache.inputs[i]);
                gl.bias += &delta.sum_axis(Axis(0));
            }
            delta = delta.dot(&self.layers[i].weight);
        }
        Ok(delta)
    }

    /// Accumulates `∂L/∂θ` for `grad_out = ∂L/∂output` into a fresh gradient.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Result<Gradient> {
        let mut g = Gradient::zeros_like(self);
        self.backprop(cache, grad_out, Some(&mut g))?;
        Ok(g)
    }

    /// `∂L/∂input` only, skipping the parameter gradients.
    pub fn input_gradient(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.backprop(cache, grad_out, None)
    }

    /// Both gradients from one reverse sweep.
    pub fn backward_full(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Result<(Gradient, Array2<f64>)> {
        let mut g = Gradient::zeros_like(self);
        let dx = self.backprop(cache, grad_out, Some(&mut g))?;
        Ok((g, dx))
    }

    /// `θ ← (1 − τ) θ + τ θ_src`.
    pub fn soft_update_from(&mut self, src: &Mlp, tau: f64) {
        if tau == 1.0 {
            self.layers.clone_from(&src.layers);
            return;
        }
        if tau == 0.0 {
            return;
        }
        for (dst, s) in self.layers.iter_mut().zip(&src.layers) {
            Zip::from(&mut dst.weight).and(&s.weight).for_each(|d, &v| *d = (1.0 - tau) * *d + tau * v);
            Zip::from(&mut dst.bias).and(&s.bias).for_each(|d, &v| *d = (1.0 - tau) * *d + tau * v);
        }
    }
}
