use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};

/// Average-velocity network `u_θ(a_t, r, t, s)`.
///
/// Inputs are laid out as `[a_t ‖ r ‖ t ‖ s]`; the output has the action's
/// dimension. A zero head makes the fresh policy the identity sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFlowPolicy {
    pub net: Mlp,
    action_dim: usize,
    state_dim: usize,
}

impl MeanFlowPolicy {
    pub fn new<R: Rng + ?Sized>(
        action_dim: usize,
        state_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![action_dim + 2 + state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let net = Mlp::new(&sizes, activation, true, rng)?;
        Ok(Self { net, action_dim, state_dim })
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        let action_dim = net.output_dim();
        let state_dim = net
            .input_dim()
            .checked_sub(action_dim + 2)
            .ok_or(Error::DimensionMismatch { what: "policy input", expected: action_dim + 2, got: net.input_dim() })?;
        Ok(Self { net, action_dim, state_dim })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Stacks `[a_t ‖ r ‖ t ‖ s]` row-wise.
    pub fn inputs(&self, a_t: ArrayView2<f64>, r: &[f64], t: &[f64], s: ArrayView2<f64>) -> Result<Array2<f64>> {
        let n = a_t.nrows();
        let check = |what, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what, expected, got })
            }
        };
        check("action columns", self.action_dim, a_t.ncols())?;
        check("state columns", self.state_dim, s.ncols())?;
        check("r length", n, r.len())?;
        check("t length", n, t.len())?;
        check("state rows", n, s.nrows())?;
        for (&ri, &ti) in r.iter().zip(t) {
            if ri > ti {
                return Err(Error::IntervalOrder { r: ri, t: ti });
            }
        }
        let d = self.action_dim;
        let mut x = Array2::zeros((n, d + 2 + self.state_dim));
        x.slice_mut(s![.., ..d]).assign(&a_t);
        x.column_mut(d).assign(&ArrayView1::from(r));
        x.column_mut(d + 1).assign(&ArrayView1::from(t));
        x.slice_mut(s![.., d + 2..]).assign(&s);
        Ok(x)
    }

    pub fn forward_batch(&self, a_t: ArrayView2<f64>, r: &[f64], t: &[f64], s: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.forward(self.inputs(a_t, r, t, s)?.view())
    }

    pub fn forward(&self, a_t: &[f64], r: f64, t: f64, s: &[f64]) -> Result<Vec<f64>> {
        let a = row(a_t);
        let st = row(s);
        Ok(self.forward_batch(a.view(), &[r], &[t], st.view())?.into_raw_vec_and_offset().0)
    }

    /// Forward pass with input tangent `(v, 0, dt, 0)`.
    ///
    /// With `dt = 1` the tangent output is the total derivative
    /// `J_{a_t} u · v + ∂_t u`. Returns `(u, tangent)`.
    pub fn jvp_batch(
        &self,
        a_t: ArrayView2<f64>,
        r: &[f64],
        t: &[f64],
        s: ArrayView2<f64>,
        v: ArrayView2<f64>,
        dt: f64,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let x = self.inputs(a_t, r, t, s)?;
        if v.dim() != a_t.dim() {
            return Err(Error::DimensionMismatch { what: "tangent columns", expected: self.action_dim, got: v.ncols() });
        }
        let d = self.action_dim;
        let mut tangent = Array2::zeros(x.dim());
        tangent.slice_mut(s![.., ..d]).assign(&v);
        tangent.column_mut(d + 1).fill(dt);
        self.net.jvp(x.view(), tangent.view())
    }

    pub fn jvp_total_derivative(&self, a_t: &[f64], r: f64, t: f64, s: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let (_, tan) = self.jvp_batch(row(a_t).view(), &[r], &[t], row(s).view(), row(v).view(), 1.0)?;
        Ok(tan.into_raw_vec_and_offset().0)
    }
}

fn row(x: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector")
}
