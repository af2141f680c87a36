//! Velocity targets, the average-velocity regression target, its loss, and
//! one-step sampling.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Adam, Gradient, MeanFlowPolicy};
use crate::schedules::NoiseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanFlowConfig {
    /// Fraction of training rows with `r = t`.
    pub rho_eq: f64,
    pub clip_actions: bool,
}

impl Default for MeanFlowConfig {
    fn default() -> Self {
        Self { rho_eq: 0.5, clip_actions: true }
    }
}

/// Probability-flow velocity with the critic score in place of `∇ log p_t`:
/// `f(t) a_t − ½ g²(t) score`. For VP this is `−½β(t)(a_t + score)`, for VE
/// `−½ (dσ²/dt) score`.
pub fn target_velocity(schedule: &NoiseSchedule, score: &[f64], a_t: &[f64], t: f64) -> Result<Vec<f64>> {
    if score.len() != a_t.len() {
        return Err(Error::DimensionMismatch { what: "score length", expected: a_t.len(), got: score.len() });
    }
    let (f, g2) = schedule.pf_ode_coefficients(t)?;
    Ok(a_t.iter().zip(score).map(|(&a, &g)| f * a - 0.5 * g2 * g).collect())
}

pub fn target_velocity_batch(
    schedule: &NoiseSchedule,
    score: ArrayView2<f64>,
    a_t: ArrayView2<f64>,
    t: &[f64],
) -> Result<Array2<f64>> {
    if score.dim() != a_t.dim() || t.len() != a_t.nrows() {
        return Err(Error::DimensionMismatch { what: "velocity batch", expected: a_t.nrows(), got: t.len() });
    }
    let mut out = Array2::zeros(a_t.dim());
    for (i, &ti) in t.iter().enumerate() {
        let (f, g2) = schedule.pf_ode_coefficients(ti)?;
        Zip::from(out.row_mut(i)).and(a_t.row(i)).and(score.row(i)).for_each(|o, &a, &g| *o = f * a - 0.5 * g2 * g);
    }
    Ok(out)
}

/// `u_tgt = v − (t − r)(J_{a_t} u · v + ∂_t u)`, evaluated on `policy` as given.
///
/// The result is plain data: nothing downstream differentiates through it, so
/// it acts as a stop-gradient target. Rows with `r = t` return `v` unchanged.
pub fn meanflow_target_batch(
    policy: &MeanFlowPolicy,
    v: ArrayView2<f64>,
    a_t: ArrayView2<f64>,
    r: &[f64],
    t: &[f64],
    s: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let (_, total) = policy.jvp_batch(a_t, r, t, s, v, 1.0)?;
    let mut out = v.to_owned();
    for i in 0..out.nrows() {
        let gap = t[i] - r[i];
        if gap != 0.0 {
            out.row_mut(i).scaled_add(-gap, &total.row(i));
        }
    }
    Ok(out)
}

pub fn meanflow_target(policy: &MeanFlowPolicy, v: &[f64], a_t: &[f64], r: f64, t: f64, s: &[f64]) -> Result<Vec<f64>> {
    let out = meanflow_target_batch(policy, row(v).view(), row(a_t).view(), &[r], &[t], row(s).view())?;
    Ok(out.into_raw_vec_and_offset().0)
}

/// Mean over rows of `‖u_θ(a_t, r, t, s) − u_tgt‖²` and its parameter gradient.
pub fn loss(
    policy: &MeanFlowPolicy,
    a_t: ArrayView2<f64>,
    r: &[f64],
    t: &[f64],
    s: ArrayView2<f64>,
    u_tgt: ArrayView2<f64>,
) -> Result<(f64, Gradient)> {
    let x = policy.inputs(a_t, r, t, s)?;
    let (u, cache) = policy.net.forward_cached(x.view())?;
    if u.dim() != u_tgt.dim() {
        return Err(Error::DimensionMismatch { what: "target rows", expected: u.nrows(), got: u_tgt.nrows() });
    }
    let n = u.nrows() as f64;
    let diff = &u - &u_tgt;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad_out = diff * (2.0 / n);
    let grad = policy.net.backward(&cache, grad_out.view())?;
    Ok((value, grad))
}

/// Deterministic one-step map `a₀ = a₁ − u_θ(a₁, 0, 1, s)`.
pub fn one_step_map(policy: &MeanFlowPolicy, a1: ArrayView2<f64>, s: ArrayView2<f64>) -> Result<Array2<f64>> {
    partial_map(policy, a1, s, 0.0)
}

/// Carry noise `a₁` from time 1 down to time `t` with a single average-velocity
/// step, `a_t = a₁ − (1 − t) u_θ(a₁, t, 1, s)`. At `t = 0` this is [`one_step_map`].
pub fn partial_map(policy: &MeanFlowPolicy, a1: ArrayView2<f64>, s: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
    let n = a1.nrows();
    let u = policy.forward_batch(a1, &vec![t; n], &vec![1.0; n], s)?;
    Ok(&a1 - &(u * (1.0 - t)))
}

/// One action per state row from fresh standard-normal noise, optionally clipped
/// to `[−bound, bound]`.
pub fn sample_one_step_batch<R: Rng + ?Sized>(
    policy: &MeanFlowPolicy,
    s: ArrayView2<f64>,
    clip: Option<f64>,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let eps = standard_normal(s.nrows(), policy.action_dim(), rng);
    let mut a = one_step_map(policy, eps.view(), s)?;
    if let Some(b) = clip {
        a.mapv_inplace(|x| x.clamp(-b, b));
    }
    Ok(a)
}

pub fn sample_one_step<R: Rng + ?Sized>(
    policy: &MeanFlowPolicy,
    s: &[f64],
    clip: Option<f64>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(sample_one_step_batch(policy, row(s).view(), clip, rng)?.into_raw_vec_and_offset().0)
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// `n` pairs `r ≤ t` in `[t_floor, 1]`: the min and max of two uniform draws,
/// collapsed to `r = t` with probability `rho_eq`. Returns `(r, t)`.
pub fn sample_time_pairs<R: Rng + ?Sized>(n: usize, t_floor: f64, rho_eq: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let mut r = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.random_range(t_floor..=1.0);
        let b = rng.random_range(t_floor..=1.0);
        let hi = a.max(b);
        let eq = rng.random::<f64>() < rho_eq;
        t.push(hi);
        r.push(if eq { hi } else { a.min(b) });
    }
    (r, t)
}

/// One step of plain MeanFlow training on data `a0` with the linear path
/// `a_t = (1 − t) a₀ + t ε` and conditional velocity `v = ε − a₀`.
///
/// Its optimum maps noise to the data distribution in one step, which makes it
/// a supervised check of the target construction independent of any critic.
#[allow(clippy::too_many_arguments)]
pub fn supervised_step<R: Rng + ?Sized>(
    policy: &mut MeanFlowPolicy,
    opt: &mut Adam,
    a0: ArrayView2<f64>,
    s: ArrayView2<f64>,
    rho_eq: f64,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    let (n, d) = a0.dim();
    let (r, t) = sample_time_pairs(n, 0.0, rho_eq, rng);
    let eps = standard_normal(n, d, rng);
    let mut a_t = Array2::zeros((n, d));
    for i in 0..n {
        Zip::from(a_t.row_mut(i)).and(a0.row(i)).and(eps.row(i)).for_each(|x, &a, &e| *x = (1.0 - t[i]) * a + t[i] * e);
    }
    let v = &eps - &a0;
    let u_tgt = meanflow_target_batch(policy, v.view(), a_t.view(), &r, &t, s)?;
    let (value, grad) = loss(policy, a_t.view(), &r, &t, s, u_tgt.view())?;
    opt.step(&mut policy.net, &grad, lr);
    Ok(value)
}

fn row(x: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector")
}
