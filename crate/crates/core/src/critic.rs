//! Twin-Q critic with soft-updated targets and Best-of-N action selection,
//! plus an oracle critic that reads the bandit reward directly.

use std::sync::Arc;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Bandit;
use crate::error::{Error, Result};
use crate::meanflow::{one_step_map, standard_normal};
use crate::net::{Activation, Adam, MeanFlowPolicy, Mlp};
use crate::score::QFunction;
use crate::trainer::TransitionBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticMode {
    Oracle,
    Learned,
}

/// Which twin supplies the value and gradient seen by the score estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradSource {
    Min,
    Q1,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub mode: CriticMode,
    pub tau: f64,
    pub lr: f64,
    pub bon_n: usize,
    pub grad_source: GradSource,
    /// Std of Gaussian noise added to executed actions; 0 disables it. Unset
    /// means 0.1 on the point-mass task and 0 on bandits.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explore_noise: Option<f64>,
    pub gamma: f64,
    pub reward_scale: f64,
    pub hidden: Vec<usize>,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            mode: CriticMode::Oracle,
            tau: 0.005,
            lr: 1e-4,
            bon_n: 32,
            grad_source: GradSource::Min,
            explore_noise: None,
            gamma: 0.99,
            reward_scale: 0.2,
            hidden: vec![64, 64],
        }
    }
}

impl CriticConfig {
    pub fn explore_noise_for(&self, bandit: bool) -> f64 {
        self.explore_noise.unwrap_or(if bandit { 0.0 } else { 0.1 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.bon_n == 0 {
            return Err(Error::Config("critic.bon_n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("critic.tau and critic.gamma must lie in [0, 1]".into()));
        }
        if self.lr < 0.0 || self.explore_noise.is_some_and(|n| n < 0.0) {
            return Err(Error::Config("critic.lr and critic.explore_noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// For each state row, draw `n` one-step candidates and keep the one `value`
/// ranks highest. Candidates are drawn state-major, so with `n = 1` this
/// consumes the RNG exactly like plain one-step sampling.
pub fn best_of_n<R, F>(
    policy: &MeanFlowPolicy,
    states: ArrayView2<f64>,
    n: usize,
    clip: Option<f64>,
    rng: &mut R,
    value: F,
) -> Result<Array2<f64>>
where
    R: Rng + ?Sized,
    F: Fn(ArrayView2<f64>, ArrayView2<f64>) -> Result<Vec<f64>>,
{
    let b = states.nrows();
    let reps = repeat_rows(states, n);
    let eps = standard_normal(b * n, policy.action_dim(), rng);
    let mut cand = one_step_map(policy, eps.view(), reps.view())?;
    if let Some(c) = clip {
        cand.mapv_inplace(|x| x.clamp(-c, c));
    }
    let q = value(reps.view(), cand.view())?;
    let mut out = Array2::zeros((b, policy.action_dim()));
    for i in 0..b {
        let j = argmax_first(&q[i * n..(i + 1) * n]);
        out.row_mut(i).assign(&cand.row(i * n + j));
    }
    Ok(out)
}

fn repeat_rows(x: ArrayView2<f64>, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows() * n, x.ncols()));
    for i in 0..x.nrows() {
        for j in 0..n {
            out.row_mut(i * n + j).assign(&x.row(i));
        }
    }
    out
}

/// Exact bandit reward as a critic. Reads the landscape as training observes
/// it, so an active deterministic perturbation is included; noisy
/// perturbations have no gradient and are rejected at construction.
#[derive(Debug, Clone)]
pub struct OracleCritic {
    bandit: Arc<Bandit>,
}

impl OracleCritic {
    pub fn new(bandit: Arc<Bandit>) -> Result<Self> {
        if bandit.perturbation().gradient([0.0, 0.0], 1.0).is_none() {
            return Err(Error::Config("the oracle critic cannot differentiate a noisy reward; use critic.mode = \"learned\"".into()));
        }
        Ok(Self { bandit })
    }

    fn eval(&self, a: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
        let mut q = Vec::with_capacity(a.nrows());
        let mut g = Array2::zeros((a.nrows(), 2));
        for (i, row) in a.rows().into_iter().enumerate() {
            let (v, gr) = self.bandit.perturbed_value_and_gradient([row[0], row[1]]).expect("checked at construction");
            q.push(v);
            g[[i, 0]] = gr[0];
            g[[i, 1]] = gr[1];
        }
        (q, g)
    }
}

/// Two Q networks over `[s ‖ a]` and their slowly tracking targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinQ {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub opt1: Adam,
    pub opt2: Adam,
    state_dim: usize,
    action_dim: usize,
}

impl TwinQ {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q1 = Mlp::new(&sizes, Activation::Gelu, false, rng)?;
        let q2 = Mlp::new(&sizes, Activation::Gelu, false, rng)?;
        Ok(Self {
            opt1: Adam::for_net(&q1),
            opt2: Adam::for_net(&q2),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            state_dim,
            action_dim,
        })
    }

    pub fn from_nets(q1: Mlp, q2: Mlp, state_dim: usize) -> Result<Self> {
        let action_dim = q1
            .input_dim()
            .checked_sub(state_dim)
            .ok_or(Error::DimensionMismatch { what: "critic input", expected: state_dim, got: q1.input_dim() })?;
        if q1.layer_sizes() != q2.layer_sizes() || q1.output_dim() != 1 {
            return Err(Error::DimensionMismatch { what: "twin critic shapes", expected: 1, got: q2.output_dim() });
        }
        Ok(Self {
            opt1: Adam::for_net(&q1),
            opt2: Adam::for_net(&q2),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            state_dim,
            action_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn inputs(&self, s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<Array2<f64>> {
        if s.ncols() != self.state_dim || a.ncols() != self.action_dim || s.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch { what: "critic input", expected: self.state_dim + self.action_dim, got: s.ncols() + a.ncols() });
        }
        Ok(concatenate(Axis(1), &[s, a]).expect("matching rows"))
    }

    /// `(q1, q2)` of the online networks.
    pub fn values(&self, s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.inputs(s, a)?;
        Ok((self.q1.forward(x.view())?.into_raw_vec_and_offset().0, self.q2.forward(x.view())?.into_raw_vec_and_offset().0))
    }

    /// Clipped double-Q value `min(q1, q2)` of the online networks.
    pub fn min_values(&self, s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<Vec<f64>> {
        let (a1, a2) = self.values(s, a)?;
        Ok(a1.iter().zip(&a2).map(|(x, y)| x.min(*y)).collect())
    }

    pub fn target_min_values(&self, s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<Vec<f64>> {
        let x = self.inputs(s, a)?;
        let t1 = self.q1_target.forward(x.view())?;
        let t2 = self.q2_target.forward(x.view())?;
        Ok(t1.iter().zip(t2.iter()).map(|(x, y)| x.min(*y)).collect())
    }

    /// Value and action-gradient selected by `source`.
    pub fn values_and_gradients(&self, s: ArrayView2<f64>, a: ArrayView2<f64>, source: GradSource) -> Result<(Vec<f64>, Array2<f64>)> {
        let x = self.inputs(s, a)?;
        let n = x.nrows();
        let ones = Array2::ones((n, 1));
        let (v1, c1) = self.q1.forward_cached(x.view())?;
        let g1 = self.q1.input_gradient(&c1, ones.view())?;
        let sd = self.state_dim;
        let take = |g: &Array2<f64>, i: usize| g.row(i).slice(ndarray::s![sd..]).to_owned();
        if source == GradSource::Q1 {
            let g = g1.slice(ndarray::s![.., sd..]).to_owned();
            return Ok((v1.into_raw_vec_and_offset().0, g));
        }
        let (v2, c2) = self.q2.forward_cached(x.view())?;
        let g2 = self.q2.input_gradient(&c2, ones.view())?;
        let mut vals = Vec::with_capacity(n);
        let mut grads = Array2::zeros((n, self.action_dim));
        for i in 0..n {
            let (a1, a2) = (v1[[i, 0]], v2[[i, 0]]);
            match source {
                GradSource::Min => {
                    if a1 <= a2 {
                        vals.push(a1);
                        grads.row_mut(i).assign(&take(&g1, i));
                    } else {
                        vals.push(a2);
                        grads.row_mut(i).assign(&take(&g2, i));
                    }
                }
                GradSource::Mean => {
                    vals.push(0.5 * (a1 + a2));
                    grads.row_mut(i).assign(&((take(&g1, i) + take(&g2, i)) * 0.5));
                }
                GradSource::Q1 => unreachable!(),
            }
        }
        Ok((vals, grads))
    }

    /// One clipped double-Q TD step with Best-of-N next actions from the target
    /// critic. Returns the mean of the two regression losses.
    pub fn td_update<R: Rng + ?Sized>(
        &mut self,
        batch: &TransitionBatch,
        policy: &MeanFlowPolicy,
        cfg: &CriticConfig,
        clip: Option<f64>,
        rng: &mut R,
    ) -> Result<f64> {
        let y = self.td_targets(batch, policy, cfg, clip, rng)?;
        let x = self.inputs(batch.states.view(), batch.actions.view())?;
        let n = y.len() as f64;
        let mut total = 0.0;
        for (net, opt) in [(&mut self.q1, &mut self.opt1), (&mut self.q2, &mut self.opt2)] {
            let (q, cache) = net.forward_cached(x.view())?;
            let mut diff = q;
            for (d, &yi) in diff.iter_mut().zip(&y) {
                *d -= yi;
            }
            total += diff.iter().map(|d| d * d).sum::<f64>() / n;
            let grad = net.backward(&cache, (diff * (2.0 / n)).view())?;
            opt.step(net, &grad, cfg.lr);
        }
        self.soft_update(cfg.tau);
        Ok(0.5 * total)
    }

    /// `y = scale · r + γ (1 − done) min(q1_tgt, q2_tgt)(s', a')`.
    pub fn td_targets<R: Rng + ?Sized>(
        &self,
        batch: &TransitionBatch,
        policy: &MeanFlowPolicy,
        cfg: &CriticConfig,
        clip: Option<f64>,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut y: Vec<f64> = batch.rewards.iter().map(|r| cfg.reward_scale * r).collect();
        let live: Vec<usize> = (0..y.len()).filter(|&i| !batch.dones[i]).collect();
        if live.is_empty() || cfg.gamma == 0.0 {
            return Ok(y);
        }
        let next = batch.next_states.select(Axis(0), &live);
        let a_next = best_of_n(policy, next.view(), cfg.bon_n, clip, rng, |s, a| self.target_min_values(s, a))?;
        let q_next = self.target_min_values(next.view(), a_next.view())?;
        for (k, &i) in live.iter().enumerate() {
            y[i] += cfg.gamma * q_next[k];
        }
        Ok(y)
    }

    pub fn soft_update(&mut self, tau: f64) {
        self.q1_target.soft_update_from(&self.q1, tau);
        self.q2_target.soft_update_from(&self.q2, tau);
    }
}

#[derive(Debug, Clone)]
pub enum Critic {
    Oracle(OracleCritic),
    Learned { nets: TwinQ, grad_source: GradSource },
}

impl Critic {
    pub fn is_learned(&self) -> bool {
        matches!(self, Self::Learned { .. })
    }

    /// Conservative value: the oracle reward, or `min(q1, q2)`.
    pub fn q_values(&self, s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<Vec<f64>> {
        match self {
            Self::Oracle(o) => Ok(o.eval(a).0),
            Self::Learned { nets, .. } => nets.min_values(s, a),
        }
    }

    pub fn q_value(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(self.q_values(row(s).view(), row(a).view())?[0])
    }

    pub fn q_gradient(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let (_, g) = self.values_and_gradients(row(s).view(), row(a).view())?;
        Ok(g.into_raw_vec_and_offset().0)
    }

    /// Best-of-N acting with the online critic.
    pub fn best_of_n<R: Rng + ?Sized>(
        &self,
        policy: &MeanFlowPolicy,
        states: ArrayView2<f64>,
        n: usize,
        clip: Option<f64>,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        best_of_n(policy, states, n, clip, rng, |s, a| self.q_values(s, a))
    }

    /// TD step for a learned critic; the oracle has nothing to learn and returns `None`.
    pub fn td_update<R: Rng + ?Sized>(
        &mut self,
        batch: &TransitionBatch,
        policy: &MeanFlowPolicy,
        cfg: &CriticConfig,
        clip: Option<f64>,
        rng: &mut R,
    ) -> Result<Option<f64>> {
        match self {
            Self::Oracle(_) => Ok(None),
            Self::Learned { nets, .. } => nets.td_update(batch, policy, cfg, clip, rng).map(Some),
        }
    }
}

impl QFunction for Critic {
    fn action_dim(&self) -> usize {
        match self {
            Self::Oracle(_) => 2,
            Self::Learned { nets, .. } => nets.action_dim,
        }
    }

    fn values_and_gradients(&self, s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        match self {
            Self::Oracle(o) => Ok(o.eval(a)),
            Self::Learned { nets, grad_source } => nets.values_and_gradients(s, a, *grad_source),
        }
    }
}

/// A critic extended beyond the action box `[−bound, bound]ᵈ` by
/// `Q̃(a) = Q(p) − ½ κ ‖a − p‖²` with `p` the projection of `a` onto the box.
///
/// A learned critic only sees in-box actions, so its raw values outside are
/// extrapolation, and a critic that keeps rising toward the boundary makes
/// `exp(α Q)` improper. The extension agrees with `Q` inside the box and pulls
/// back toward it outside. Gradients are exact: clamped coordinates carry only
/// the penalty term.
pub struct BoxProjected<'a, Q: ?Sized> {
    pub inner: &'a Q,
    pub bound: f64,
    pub kappa: f64,
}

impl<Q: QFunction + ?Sized> QFunction for BoxProjected<'_, Q> {
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn values_and_gradients(&self, s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let b = self.bound;
        let p = a.mapv(|x| x.clamp(-b, b));
        let (mut q, mut g) = self.inner.values_and_gradients(s, p.view())?;
        for (i, qi) in q.iter_mut().enumerate() {
            let mut sq = 0.0;
            for c in 0..a.ncols() {
                let out = a[[i, c]] - p[[i, c]];
                if out != 0.0 {
                    sq += out * out;
                    g[[i, c]] = -self.kappa * out;
                }
            }
            *qi -= 0.5 * self.kappa * sq;
        }
        Ok((q, g))
    }
}

fn row(x: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector")
}
