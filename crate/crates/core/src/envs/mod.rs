//! Bandit reward landscapes, reward perturbations, and a point-mass MDP.

mod mixture;
mod pointmass;
mod toy;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use mixture::GaussianMixture;
pub use pointmass::PointMass;
pub use toy::{Checkerboard, TwoMoons};

use crate::error::{Error, Result};

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// The episode is over.
    pub done: bool,
    /// The episode ended in a true terminal state, so values do not bootstrap
    /// past it. A time limit ends the episode without being terminal.
    pub terminal: bool,
}

pub trait Environment: Send {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Half-width of the box `[−b, b]^d` of admissible actions.
    fn action_bound(&self) -> f64;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: &[f64], rng: &mut dyn RngCore) -> Step;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    EightGaussian,
    TwoMoons,
    Checkerboard,
    Pointmass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardPerturbation {
    None,
    GaussianNoise { sigma: f64 },
    /// `c · Q_max · exp(−‖a‖² / 2σ²)` added to every query.
    GaussianBump { c: f64, sigma: f64 },
}

impl Default for RewardPerturbation {
    fn default() -> Self {
        Self::None
    }
}

impl RewardPerturbation {
    pub fn is_active(&self) -> bool {
        !matches!(self, Self::None)
    }

    pub fn apply<R: Rng + ?Sized>(&self, a: [f64; 2], clean: f64, q_max: f64, rng: &mut R) -> f64 {
        match *self {
            Self::None => clean,
            Self::GaussianNoise { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                clean + sigma * z
            }
            Self::GaussianBump { c, sigma } => clean + c * q_max * bump(a, sigma),
        }
    }

    /// Gradient of the added term, when it is deterministic.
    pub fn gradient(&self, a: [f64; 2], q_max: f64) -> Option<[f64; 2]> {
        match *self {
            Self::None => Some([0.0, 0.0]),
            Self::GaussianNoise { .. } => None,
            Self::GaussianBump { c, sigma } => {
                let k = -c * q_max * bump(a, sigma) / (sigma * sigma);
                Some([k * a[0], k * a[1]])
            }
        }
    }
}

fn bump(a: [f64; 2], sigma: f64) -> f64 {
    (-(a[0] * a[0] + a[1] * a[1]) / (2.0 * sigma * sigma)).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Landscape {
    EightGaussian(GaussianMixture),
    TwoMoons(TwoMoons),
    Checkerboard(Checkerboard),
}

impl Landscape {
    pub fn value(&self, a: [f64; 2]) -> f64 {
        match self {
            Self::EightGaussian(m) => m.reward(a),
            Self::TwoMoons(m) => m.reward(a),
            Self::Checkerboard(m) => m.reward(a),
        }
    }

    pub fn gradient(&self, a: [f64; 2]) -> [f64; 2] {
        match self {
            Self::EightGaussian(m) => m.reward_gradient(a),
            Self::TwoMoons(m) => m.reward_gradient(a),
            Self::Checkerboard(m) => m.reward_gradient(a),
        }
    }

    pub fn value_and_gradient(&self, a: [f64; 2]) -> (f64, [f64; 2]) {
        match self {
            Self::EightGaussian(m) => m.reward_and_gradient(a),
            _ => (self.value(a), self.gradient(a)),
        }
    }

    pub fn mixture(&self) -> Option<&GaussianMixture> {
        match self {
            Self::EightGaussian(m) => Some(m),
            _ => None,
        }
    }
}

/// Single-state, single-step bandit over a 2-D reward landscape.
///
/// Counts direct reads of the clean landscape separately from perturbed
/// queries so callers can verify that training only sees perturbed values.
#[derive(Debug)]
pub struct Bandit {
    landscape: Landscape,
    perturbation: RewardPerturbation,
    bound: f64,
    clean_reads: AtomicU64,
    queries: AtomicU64,
}

impl Clone for Bandit {
    fn clone(&self) -> Self {
        Self {
            landscape: self.landscape.clone(),
            perturbation: self.perturbation.clone(),
            bound: self.bound,
            clean_reads: AtomicU64::new(self.clean_reads.load(Ordering::Relaxed)),
            queries: AtomicU64::new(self.queries.load(Ordering::Relaxed)),
        }
    }
}

/// Maximum of every normalized landscape.
pub const Q_MAX: f64 = 1.0;

impl Bandit {
    pub fn new(landscape: Landscape, perturbation: RewardPerturbation) -> Self {
        Self { landscape, perturbation, bound: 2.5, clean_reads: AtomicU64::new(0), queries: AtomicU64::new(0) }
    }

    pub fn from_name(name: EnvName, perturbation: RewardPerturbation) -> Result<Self> {
        let landscape = match name {
            EnvName::EightGaussian => Landscape::EightGaussian(GaussianMixture::eight_gaussian()),
            EnvName::TwoMoons => Landscape::TwoMoons(TwoMoons::default()),
            EnvName::Checkerboard => Landscape::Checkerboard(Checkerboard::default()),
            EnvName::Pointmass => return Err(Error::Config("pointmass is not a bandit".into())),
        };
        Ok(Self::new(landscape, perturbation))
    }

    pub fn landscape(&self) -> &Landscape {
        &self.landscape
    }

    pub fn perturbation(&self) -> &RewardPerturbation {
        &self.perturbation
    }

    /// Unperturbed reward; counted as a clean read.
    pub fn clean_reward(&self, a: [f64; 2]) -> f64 {
        self.clean_reads.fetch_add(1, Ordering::Relaxed);
        self.landscape.value(a)
    }

    pub fn clean_reward_gradient(&self, a: [f64; 2]) -> [f64; 2] {
        self.clean_reads.fetch_add(1, Ordering::Relaxed);
        self.landscape.gradient(a)
    }

    /// Reward as observed during training: clean value plus perturbation.
    pub fn query<R: Rng + ?Sized>(&self, a: [f64; 2], rng: &mut R) -> f64 {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.perturbation.apply(a, self.landscape.value(a), Q_MAX, rng)
    }

    /// Value and gradient of the perturbed landscape, for deterministic
    /// perturbations only.
    pub fn perturbed_value_and_gradient(&self, a: [f64; 2]) -> Option<(f64, [f64; 2])> {
        let extra = self.perturbation.gradient(a, Q_MAX)?;
        self.queries.fetch_add(1, Ordering::Relaxed);
        let offset = match self.perturbation {
            RewardPerturbation::GaussianBump { c, sigma } => c * Q_MAX * bump(a, sigma),
            _ => 0.0,
        };
        let (v, g) = self.landscape.value_and_gradient(a);
        Some((v + offset, [g[0] + extra[0], g[1] + extra[1]]))
    }

    pub fn clean_reads(&self) -> u64 {
        self.clean_reads.load(Ordering::Relaxed)
    }

    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }
}

impl Environment for Bandit {
    fn state_dim(&self) -> usize {
        0
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bound(&self) -> f64 {
        self.bound
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        Vec::new()
    }

    fn step(&mut self, action: &[f64], rng: &mut dyn RngCore) -> Step {
        let reward = self.query([action[0], action[1]], rng);
        Step { next_state: Vec::new(), reward, done: true, terminal: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub name: EnvName,
    pub perturb: RewardPerturbation,
    pub pointmass: PointMass,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { name: EnvName::EightGaussian, perturb: RewardPerturbation::None, pointmass: PointMass::default() }
    }
}

impl EnvConfig {
    pub fn is_bandit(&self) -> bool {
        self.name != EnvName::Pointmass
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perturbation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(RewardPerturbation::None.apply([0.3, 0.1], 0.42, 1.0, &mut rng), 0.42);
        let bump = RewardPerturbation::GaussianBump { c: 0.5, sigma: 0.4 };
        assert_eq!(bump.apply([0.0, 0.0], 0.25, 1.0, &mut rng), 0.75);
        assert_eq!(bump.apply([0.3, -0.2], 0.1, 1.0, &mut rng), bump.apply([0.3, -0.2], 0.1, 1.0, &mut rng));
    }

    #[test]
    fn gaussian_noise_has_requested_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = RewardPerturbation::GaussianNoise { sigma: 0.2 };
        let n = 100_000;
        let d: Vec<f64> = (0..n).map(|_| p.apply([0.0, 0.0], 0.3, 1.0, &mut rng) - 0.3).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((std / 0.2 - 1.0).abs() < 0.01, "{std}");
    }

    #[test]
    fn bump_gradient_matches_fd() {
        let b = Bandit::from_name(EnvName::EightGaussian, RewardPerturbation::GaussianBump { c: 0.3, sigma: 0.5 }).unwrap();
        let a = [0.4, -0.3];
        let (_, g) = b.perturbed_value_and_gradient(a).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut up = a;
            let mut dn = a;
            up[k] += h;
            dn[k] -= h;
            let fd = (b.perturbed_value_and_gradient(up).unwrap().0 - b.perturbed_value_and_gradient(dn).unwrap().0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
        assert_eq!(b.clean_reads(), 0);
    }

    #[test]
    fn bandit_counts_reads_separately() {
        let mut b = Bandit::from_name(EnvName::TwoMoons, RewardPerturbation::None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let st = b.step(&[0.0, 1.0], &mut rng);
        assert!(st.done && st.terminal && st.next_state.is_empty());
        b.clean_reward([0.0, 1.0]);
        assert_eq!((b.queries(), b.clean_reads()), (1, 1));
        assert!(Bandit::from_name(EnvName::Pointmass, RewardPerturbation::None).is_err());
    }
}
