//! Monte-Carlo estimate of the smoothed critic gradient `∇_{a_t} Q_t`, the
//! closed-form mixture score it approximates, and the normalizations applied
//! before the estimate becomes a velocity target.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::GaussianMixture;
use crate::error::{Error, Result};
use crate::schedules::NoiseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub k_samples: usize,
    /// Boltzmann inverse temperature.
    pub alpha: f64,
    /// Norm of the rescaled score.
    pub w: f64,
    pub eps_norm: f64,
    /// Standardize the critic values of every proposal in a batch before the softmax.
    pub q_norm: bool,
    /// Skip unit-norm rescaling and feed the raw estimate to the velocity target.
    pub raw: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { k_samples: 100, alpha: 1.0, w: 25.0, eps_norm: 1e-8, q_norm: true, raw: false }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_samples == 0 {
            return Err(Error::Config("score.k_samples must be at least 1".into()));
        }
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.alpha) || !pos(self.eps_norm) || !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(Error::Config("score.alpha and score.eps_norm must be positive, score.w non-negative".into()));
        }
        Ok(())
    }
}

/// Anything that can report `Q(s, a)` and `∇_a Q(s, a)` row by row.
pub trait QFunction {
    fn action_dim(&self) -> usize;

    /// Values and action-gradients at each `(states[i], actions[i])`.
    fn values_and_gradients(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)>;
}

/// `log Σ exp(x_i)` with the maximum factored out.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Max-shifted softmax; the weights sum to one.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Standardize to zero mean and unit population std (std floored at 1e-8).
pub fn batch_q_normalize(q: &[f64]) -> Result<Vec<f64>> {
    if q.len() < 2 {
        return Err(Error::BatchTooSmall(q.len()));
    }
    let (mean, std) = mean_std(q);
    let std = std.max(1e-8);
    Ok(q.iter().map(|v| (v - mean) / std).collect())
}

fn mean_std(q: &[f64]) -> (f64, f64) {
    let n = q.len() as f64;
    let mean = q.iter().sum::<f64>() / n;
    let var = q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `w · g / (‖g‖ + ε)`.
pub fn normalize_rescale(cfg: &ScoreConfig, g: &[f64]) -> Vec<f64> {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let k = cfg.w / (norm + cfg.eps_norm);
    g.iter().map(|v| k * v).collect()
}

/// Self-normalized importance-sampling estimate of `∇_{a_t} Q_t(s, a_t)` for a
/// batch of rows, each with its own state, noisy action and time.
///
/// For every row, `K` draws `a⁽ⁱ⁾ ~ N(μ(a_t), var)` from the proposal are
/// scored by the critic and the gradient is `Σ ρ_i α ∇Q(a⁽ⁱ⁾) · ∂a⁽ⁱ⁾/∂a_t`
/// with `ρ = softmax(α Q)`. Draws are taken row-major, so a fixed RNG state
/// gives a fixed result. With `q_norm` the critic values of all `B·K` draws
/// are standardized together first, which rescales their gradients by the
/// same factor.
pub fn estimate_energy_gradient_batch<Q, R>(
    cfg: &ScoreConfig,
    schedule: &NoiseSchedule,
    critic: &Q,
    states: ArrayView2<f64>,
    a_t: ArrayView2<f64>,
    t: &[f64],
    rng: &mut R,
) -> Result<Array2<f64>>
where
    Q: QFunction + ?Sized,
    R: Rng + ?Sized,
{
    let (b, d) = a_t.dim();
    let k = cfg.k_samples;
    if t.len() != b || states.nrows() != b {
        return Err(Error::DimensionMismatch { what: "score batch rows", expected: b, got: t.len().min(states.nrows()) });
    }
    if d != critic.action_dim() {
        return Err(Error::DimensionMismatch { what: "score action dim", expected: critic.action_dim(), got: d });
    }
    let mut draws = Array2::zeros((b * k, d));
    let mut draw_states = Array2::zeros((b * k, states.ncols()));
    let mut jac = Vec::with_capacity(b);
    for i in 0..b {
        let kern = schedule.kernel(t[i])?;
        let m = kern.mean_coeff;
        let sd = kern.std / m;
        jac.push(1.0 / m);
        for j in 0..k {
            let row = i * k + j;
            for c in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                draws[[row, c]] = a_t[[i, c]] / m + sd * z;
            }
            draw_states.row_mut(row).assign(&states.row(i));
        }
    }
    let (mut q, mut grad) = critic.values_and_gradients(draw_states.view(), draws.view())?;
    if cfg.q_norm && q.len() >= 2 {
        let (mean, std) = mean_std(&q);
        let std = std.max(1e-8);
        for v in q.iter_mut() {
            *v = (*v - mean) / std;
        }
        grad /= std;
    }
    let mut out = Array2::zeros((b, d));
    for i in 0..b {
        let logits: Vec<f64> = q[i * k..(i + 1) * k].iter().map(|v| cfg.alpha * v).collect();
        let rho = softmax(&logits);
        let total: f64 = rho.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::DegenerateSoftmax);
        }
        let mut acc = out.row_mut(i);
        for (j, r) in rho.iter().enumerate() {
            acc.scaled_add(r * cfg.alpha * jac[i], &grad.row(i * k + j));
        }
    }
    Ok(out)
}

/// Single-row form of [`estimate_energy_gradient_batch`].
pub fn estimate_energy_gradient<Q, R>(
    cfg: &ScoreConfig,
    schedule: &NoiseSchedule,
    critic: &Q,
    s: &[f64],
    a_t: &[f64],
    t: f64,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    Q: QFunction + ?Sized,
    R: Rng + ?Sized,
{
    let st = ArrayView2::from_shape((1, s.len()), s).expect("row");
    let at = ArrayView2::from_shape((1, a_t.len()), a_t).expect("row");
    let g = estimate_energy_gradient_batch(cfg, schedule, critic, st, at, &[t], rng)?;
    Ok(g.index_axis(Axis(0), 0).to_vec())
}

/// Exact score of the mixture pushed through the forward kernel to time `t`.
pub fn mixture_score_oracle(mixture: &GaussianMixture, schedule: &NoiseSchedule, x_t: [f64; 2], t: f64) -> Result<[f64; 2]> {
    mixture.smoothed_score(schedule, x_t, t)
}

/// Energy `Q(a) = log Σ_k w_k exp(−‖a − μ_k‖² / 2σ²)` of a mixture, so that
/// `exp(Q)` is its unnormalized density. Ignores the state.
#[derive(Debug, Clone, Copy)]
pub struct MixtureLogDensity<'a>(pub &'a GaussianMixture);

impl MixtureLogDensity<'_> {
    pub fn gradient(&self, a: [f64; 2]) -> [f64; 2] {
        let m = self.0;
        let s2 = m.component_std() * m.component_std();
        let logs: Vec<f64> = m
            .centers()
            .iter()
            .zip(m.weights())
            .map(|(c, &w)| w.ln() - ((c[0] - a[0]).powi(2) + (c[1] - a[1]).powi(2)) / (2.0 * s2))
            .collect();
        let rho = softmax(&logs);
        let mut g = [0.0, 0.0];
        for (r, c) in rho.iter().zip(m.centers()) {
            g[0] += r * (c[0] - a[0]) / s2;
            g[1] += r * (c[1] - a[1]) / s2;
        }
        g
    }
}

impl QFunction for MixtureLogDensity<'_> {
    fn action_dim(&self) -> usize {
        2
    }

    fn values_and_gradients(&self, _states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let n = actions.nrows();
        let mut q = Vec::with_capacity(n);
        let mut g = Array2::zeros((n, 2));
        for (i, a) in actions.rows().into_iter().enumerate() {
            let a = [a[0], a[1]];
            q.push(self.0.log_density(a));
            let gi = self.gradient(a);
            g[[i, 0]] = gi[0];
            g[[i, 1]] = gi[1];
        }
        Ok((q, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Dual;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(k: usize) -> ScoreConfig {
        ScoreConfig { k_samples: k, q_norm: false, ..Default::default() }
    }

    /// `Q(a) = −‖a‖² / 2`, so `exp(Q)` is a standard normal.
    struct StdNormal;

    impl QFunction for StdNormal {
        fn action_dim(&self) -> usize {
            2
        }

        fn values_and_gradients(&self, _s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
            let q = a.rows().into_iter().map(|r| -0.5 * r.dot(&r)).collect();
            Ok((q, a.mapv(|v| -v)))
        }
    }

    #[test]
    fn standard_normal_is_a_vp_fixed_point() {
        let sched = NoiseSchedule::vp(0.1, 10.0).unwrap();
        let mut mean_err = 0.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = estimate_energy_gradient(&cfg(10_000), &sched, &StdNormal, &[], &[1.0, 0.0], 0.5, &mut rng).unwrap();
            mean_err += ((g[0] + 1.0).powi(2) + g[1].powi(2)).sqrt() / 20.0;
        }
        assert!(mean_err < 0.05, "{mean_err}");
    }

    #[test]
    fn single_sample_returns_scaled_gradient_at_draw() {
        let sched = NoiseSchedule::vp(0.1, 10.0).unwrap();
        let t = 0.4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = estimate_energy_gradient(&cfg(1), &sched, &StdNormal, &[], &[0.3, -0.2], t, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = sched.kernel(t).unwrap();
        let z: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let m = k.mean_coeff;
        for c in 0..2 {
            let a = [0.3, -0.2][c] / m + k.std / m * z[c];
            assert!((g[c] - (-a) / m).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_midpoint_is_flat() {
        let mix = GaussianMixture::new(vec![[-1.0, 0.0], [1.0, 0.0]], vec![1.0, 1.0], 0.4).unwrap();
        let sched = NoiseSchedule::vp(0.1, 10.0).unwrap();
        let n = 200;
        let mut xs = Vec::new();
        for seed in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = estimate_energy_gradient(&cfg(64), &sched, &MixtureLogDensity(&mix), &[], &[0.0, 0.0], 0.3, &mut rng)
                .unwrap();
            xs.push(g);
        }
        for c in 0..2 {
            let v: Vec<f64> = xs.iter().map(|g| g[c]).collect();
            let (mean, std) = mean_std(&v);
            assert!(mean.abs() < 3.0 * std / (n as f64).sqrt() + 1e-12, "coord {c}: {mean} ± {std}");
        }
    }

    #[test]
    fn weighted_average_equals_gradient_of_log_sum_exp() {
        // Q(a) = log Σ_j c_j exp(−‖a − μ_j‖²/2), differentiated in forward mode
        // through log Σ_i exp(α Q(a_t/m + sd z_i)) on fixed draws.
        let mix = GaussianMixture::new(vec![[0.5, 0.0], [-0.7, 0.4], [0.1, -0.9]], vec![1.0, 2.0, 1.5], 1.0).unwrap();
        let sched = NoiseSchedule::vp(0.1, 10.0).unwrap();
        let (t, k, alpha) = (0.35, 16, 1.7);
        let config = ScoreConfig { k_samples: k, alpha, q_norm: false, ..Default::default() };
        let a_t = [0.2, -0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let est = estimate_energy_gradient(&config, &sched, &MixtureLogDensity(&mix), &[], &a_t, t, &mut rng).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z: Vec<[f64; 2]> = (0..k).map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
        let kern = sched.kernel(t).unwrap();
        let (m, sd) = (kern.mean_coeff, kern.std / kern.mean_coeff);
        for dir in 0..2 {
            let x = [
                Dual::new(a_t[0], if dir == 0 { 1.0 } else { 0.0 }),
                Dual::new(a_t[1], if dir == 1 { 1.0 } else { 0.0 }),
            ];
            let mut outer = Dual::constant(0.0);
            for zi in &z {
                let a = [x[0].scale(1.0 / m) + Dual::constant(sd * zi[0]), x[1].scale(1.0 / m) + Dual::constant(sd * zi[1])];
                let mut inner = Dual::constant(0.0);
                for (c, &w) in mix.centers().iter().zip(mix.weights()) {
                    let d0 = a[0] - Dual::constant(c[0]);
                    let d1 = a[1] - Dual::constant(c[1]);
                    inner = inner + (d0 * d0 + d1 * d1).scale(-0.5).exp().scale(w);
                }
                // exp(α log inner) = inner^α
                let p = inner.primal.powf(alpha);
                outer = outer + Dual::new(p, alpha * p / inner.primal * inner.tangent);
            }
            let lse_grad = outer.tangent / outer.primal;
            assert!((lse_grad - est[dir]).abs() < 1e-10, "{dir}: {lse_grad} vs {}", est[dir]);
        }
    }

    #[test]
    fn softmax_stable_and_normalized() {
        let w = softmax(&[700.0, -700.0, 699.0, 0.0]);
        assert!(w.iter().all(|v| v.is_finite()));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_fd_of_log_density() {
        let mix = GaussianMixture::eight_gaussian();
        let sched = NoiseSchedule::vp(0.1, 10.0).unwrap();
        let x = [0.5, 0.5];
        let g = mixture_score_oracle(&mix, &sched, x, 0.3).unwrap();
        let h = 1e-5;
        for c in 0..2 {
            let mut up = x;
            let mut dn = x;
            up[c] += h;
            dn[c] -= h;
            let fd = (mix.smoothed_log_density(&sched, up, 0.3).unwrap() - mix.smoothed_log_density(&sched, dn, 0.3).unwrap())
                / (2.0 * h);
            assert!((fd - g[c]).abs() / g[c].abs() < 1e-6);
        }
    }

    #[test]
    fn oracle_trivial_cases() {
        let sched = NoiseSchedule::vp(0.1, 10.0).unwrap();
        let single = GaussianMixture::new(vec![[1.0, -0.5]], vec![1.0], 0.3).unwrap();
        let m = sched.kernel(0.6).unwrap().mean_coeff;
        let g = mixture_score_oracle(&single, &sched, [m, -0.5 * m], 0.6).unwrap();
        assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
        let pair = GaussianMixture::new(vec![[1.0, 1.0], [-1.0, -1.0]], vec![1.0, 1.0], 0.3).unwrap();
        let g = mixture_score_oracle(&pair, &sched, [0.0, 0.0], 0.2).unwrap();
        assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn oracle_at_floor_matches_reward_log_gradient() {
        let mix = GaussianMixture::eight_gaussian();
        let sched = NoiseSchedule::vp(0.1, 10.0).unwrap();
        for a in [[0.3, 0.2], [1.2, -0.4], [-0.8, 1.1]] {
            let g = mixture_score_oracle(&mix, &sched, a, 1e-7).unwrap();
            let d = mix.density_gradient(a);
            let p = mix.density(a);
            for c in 0..2 {
                assert!((g[c] - d[c] / p).abs() < 1e-4, "{a:?}");
            }
        }
    }

    #[test]
    fn normalize_rescale_examples() {
        let c = ScoreConfig::default();
        let v = normalize_rescale(&c, &[3.0, 4.0]);
        assert!((v[0] - 15.0).abs() < 1e-6 && (v[1] - 20.0).abs() < 1e-6);
        assert_eq!(normalize_rescale(&c, &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn batch_q_normalize_examples() {
        let v = batch_q_normalize(&[1.0, 2.0, 3.0]).unwrap();
        let e = 1.224744871391589;
        assert!((v[0] + e).abs() < 1e-12 && v[1].abs() < 1e-15 && (v[2] - e).abs() < 1e-12);
        assert_eq!(batch_q_normalize(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        assert!(matches!(batch_q_normalize(&[1.0]), Err(Error::BatchTooSmall(1))));
    }

    #[test]
    fn batch_rows_are_independent_of_layout() {
        let sched = NoiseSchedule::vp(0.1, 10.0).unwrap();
        let a = Array2::from_shape_vec((2, 2), vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let states = Array2::zeros((2, 0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let both = estimate_energy_gradient_batch(&cfg(8), &sched, &StdNormal, states.view(), a.view(), &[0.2, 0.7], &mut rng)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let first =
            estimate_energy_gradient(&cfg(8), &sched, &StdNormal, &[], &[0.1, 0.2], 0.2, &mut rng).unwrap();
        assert_eq!(both.row(0).to_vec(), first);
    }
}
