//! The actor-critic loop: act with Best-of-N one-step samples, store
//! transitions, fit the critic by TD, and regress the policy onto
//! critic-derived MeanFlow targets.

mod buffer;
mod config;

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use buffer::{ReplayBuffer, Transition, TransitionBatch};
pub use config::{Config, TrainConfig};

use crate::analysis::{arrow_grid, mode_coverage, ModeCoverage, DEFAULT_RADIUS};
use crate::critic::{BoxProjected, Critic, CriticMode, OracleCritic, TwinQ};
use crate::envs::{Bandit, EnvName, Environment, PointMass};
use crate::error::{Error, Result};
use crate::meanflow::{loss, meanflow_target_batch, sample_time_pairs, target_velocity_batch};
use crate::net::{Adam, MeanFlowPolicy};
use crate::schedules::NoiseSchedule;
use crate::score::{estimate_energy_gradient_batch, normalize_rescale};

/// Curvature of the quadratic penalty extending a learned critic beyond the
/// action box during score estimation.
pub const BOX_PENALTY: f64 = 1.0;

/// Consecutive non-finite losses tolerated before a run is aborted.
pub const MAX_NONFINITE: usize = 10;

/// Stream offset for evaluation randomness, kept apart from the training stream.
const EVAL_STREAM: u64 = 0x5eed_e7a1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub coverage: Option<ModeCoverage>,
    #[serde(rename = "return")]
    pub episode_return: Option<f64>,
}

enum Task {
    Bandit(Arc<Bandit>),
    PointMass { env: PointMass, state: Vec<f64> },
}

pub struct Trainer {
    cfg: Config,
    schedule: NoiseSchedule,
    task: Task,
    pub policy: MeanFlowPolicy,
    pub policy_opt: Adam,
    pub critic: Critic,
    pub buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    steps: usize,
    nonfinite_streak: usize,
    actor_window: Vec<f64>,
    critic_window: Vec<f64>,
    pub metrics: Vec<MetricRecord>,
}

pub struct TrainOutput {
    pub policy: MeanFlowPolicy,
    pub policy_opt: Adam,
    pub critic: Critic,
    pub metrics: Vec<MetricRecord>,
}

impl Trainer {
    pub fn new(cfg: Config) -> Result<Self> {
        let bandit = if cfg.env.is_bandit() {
            Some(Arc::new(Bandit::from_name(cfg.env.name, cfg.env.perturb.clone())?))
        } else {
            None
        };
        Self::build(cfg, bandit)
    }

    /// Train against a caller-owned bandit, e.g. to inspect its access counters.
    pub fn with_bandit(cfg: Config, bandit: Arc<Bandit>) -> Result<Self> {
        Self::build(cfg, Some(bandit))
    }

    fn build(cfg: Config, bandit: Option<Arc<Bandit>>) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.sde.schedule()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let (task, state_dim, action_dim) = match bandit {
            Some(b) => (Task::Bandit(b), 0, 2),
            None => {
                let mut env = cfg.env.pointmass.clone();
                let state = env.reset(&mut rng);
                (Task::PointMass { env, state }, 4, 2)
            }
        };
        let policy = MeanFlowPolicy::new(action_dim, state_dim, &cfg.train.hidden, cfg.train.activation, &mut rng)?;
        let critic = match (&task, cfg.critic.mode) {
            (Task::Bandit(b), CriticMode::Oracle) => Critic::Oracle(OracleCritic::new(b.clone())?),
            (_, CriticMode::Oracle) => return Err(Error::Config("oracle critic requires a bandit".into())),
            (_, CriticMode::Learned) => Critic::Learned {
                nets: TwinQ::new(state_dim, action_dim, &cfg.critic.hidden, &mut rng)?,
                grad_source: cfg.critic.grad_source,
            },
        };
        Ok(Self {
            schedule,
            task,
            policy_opt: Adam::for_net(&policy.net),
            policy,
            critic,
            buffer: ReplayBuffer::new(cfg.train.buffer_capacity)?,
            rng,
            steps: 0,
            nonfinite_streak: 0,
            actor_window: Vec::new(),
            critic_window: Vec::new(),
            metrics: Vec::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn bandit(&self) -> Option<&Arc<Bandit>> {
        match &self.task {
            Task::Bandit(b) => Some(b),
            Task::PointMass { .. } => None,
        }
    }

    fn action_bound(&self) -> f64 {
        match &self.task {
            Task::Bandit(b) => b.action_bound(),
            Task::PointMass { env, .. } => env.action_bound(),
        }
    }

    fn clip(&self) -> Option<f64> {
        self.cfg.meanflow.clip_actions.then(|| self.action_bound())
    }

    fn state(&self) -> Vec<f64> {
        match &self.task {
            Task::Bandit(_) => Vec::new(),
            Task::PointMass { state, .. } => state.clone(),
        }
    }

    /// Act once, step the environment and store the transition. Warmup actions
    /// are uniform in the action box; afterwards Best-of-N with the online
    /// critic plus optional Gaussian exploration noise.
    pub fn collect_step(&mut self) -> Result<Transition> {
        let bound = self.action_bound();
        let s = self.state();
        let action: Vec<f64> = if self.steps < self.cfg.train.warmup_steps {
            (0..self.policy.action_dim()).map(|_| self.rng.random_range(-bound..=bound)).collect()
        } else {
            let srow = Array2::from_shape_vec((1, s.len()), s.clone()).expect("state row");
            let clip = self.clip();
            let a = self.critic.best_of_n(&self.policy, srow.view(), self.cfg.critic.bon_n, clip, &mut self.rng)?;
            let noise = self.cfg.critic.explore_noise_for(self.cfg.env.is_bandit());
            a.iter()
                .map(|&x| {
                    let z: f64 = if noise > 0.0 { noise * self.rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
                    (x + z).clamp(-bound, bound)
                })
                .collect()
        };
        let (reward, next_state, terminal) = match &mut self.task {
            Task::Bandit(b) => (b.query([action[0], action[1]], &mut self.rng), Vec::new(), true),
            Task::PointMass { env, state } => {
                let st = env.step(&action, &mut self.rng);
                *state = if st.done { env.reset(&mut self.rng) } else { st.next_state.clone() };
                (st.reward, st.next_state, st.terminal)
            }
        };
        let t = Transition { state: s, action, reward, next_state, done: terminal };
        self.buffer.push(t.clone());
        self.steps += 1;
        Ok(t)
    }

    /// One policy step on a replay batch. Returns the batch loss.
    pub fn actor_update(&mut self) -> Result<f64> {
        let cfg = &self.cfg;
        let b = cfg.train.batch_size;
        let batch = self.buffer.sample(b, &mut self.rng)?;
        let (r, t) = sample_time_pairs(b, cfg.sde.t_floor, cfg.meanflow.rho_eq, &mut self.rng);
        let mut a_t = Array2::zeros(batch.actions.dim());
        for i in 0..b {
            self.schedule.perturb_into(batch.actions.row(i), t[i], &mut self.rng, a_t.row_mut(i))?;
        }
        let clip = self.clip();
        let (states, rng) = (batch.states.view(), &mut self.rng);
        let mut g = match clip {
            Some(bound) if self.critic.is_learned() => {
                let q = BoxProjected { inner: &self.critic, bound, kappa: BOX_PENALTY };
                estimate_energy_gradient_batch(&cfg.score, &self.schedule, &q, states, a_t.view(), &t, rng)?
            }
            _ => estimate_energy_gradient_batch(&cfg.score, &self.schedule, &self.critic, states, a_t.view(), &t, rng)?,
        };
        if !cfg.score.raw {
            for mut row in g.rows_mut() {
                let scaled = normalize_rescale(&cfg.score, row.as_slice().expect("contiguous row"));
                row.assign(&ndarray::ArrayView1::from(&scaled));
            }
        }
        let v = target_velocity_batch(&self.schedule, g.view(), a_t.view(), &t)?;
        let u_tgt = meanflow_target_batch(&self.policy, v.view(), a_t.view(), &r, &t, batch.states.view())?;
        let (value, grad) = loss(&self.policy, a_t.view(), &r, &t, batch.states.view(), u_tgt.view())?;
        self.policy_opt.step(&mut self.policy.net, &grad, cfg.train.actor_lr);
        Ok(value)
    }

    /// One TD step; `None` for the oracle critic.
    pub fn critic_update(&mut self) -> Result<Option<f64>> {
        if !self.critic.is_learned() {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.cfg.train.batch_size, &mut self.rng)?;
        let clip = self.clip();
        self.critic.td_update(&batch, &self.policy, &self.cfg.critic, clip, &mut self.rng)
    }

    fn check_finite(&mut self, value: f64, what: &str) -> Result<()> {
        if value.is_finite() {
            self.nonfinite_streak = 0;
            return Ok(());
        }
        self.nonfinite_streak += 1;
        if self.nonfinite_streak >= MAX_NONFINITE {
            return Err(Error::TrainingAborted(format!(
                "{what} loss non-finite for {MAX_NONFINITE} consecutive updates at step {}",
                self.steps
            )));
        }
        Ok(())
    }

    /// One environment step followed by the scheduled updates and, on cadence,
    /// a metric record.
    pub fn step(&mut self) -> Result<()> {
        self.collect_step()?;
        let tc = &self.cfg.train;
        if self.steps > tc.warmup_steps && self.buffer.len() >= tc.batch_size {
            for _ in 0..tc.updates_per_step {
                if let Some(c) = self.critic_update()? {
                    self.check_finite(c, "critic")?;
                    self.critic_window.push(c);
                }
                let a = self.actor_update()?;
                self.check_finite(a, "actor")?;
                self.actor_window.push(a);
            }
        }
        if self.steps % self.cfg.train.metrics_every == 0 {
            let rec = self.record()?;
            self.metrics.push(rec);
        }
        Ok(())
    }

    fn record(&mut self) -> Result<MetricRecord> {
        let mean = |w: &mut Vec<f64>| {
            let m = (!w.is_empty()).then(|| w.iter().sum::<f64>() / w.len() as f64);
            w.clear();
            m
        };
        let actor_loss = mean(&mut self.actor_window);
        let critic_loss = mean(&mut self.critic_window);
        let coverage = if self.cfg.env.name == EnvName::EightGaussian { Some(self.coverage()?) } else { None };
        let episode_return = match &self.task {
            Task::PointMass { env, .. } => Some(self.evaluate_return(env, self.cfg.train.eval_episodes)?),
            Task::Bandit(_) => None,
        };
        Ok(MetricRecord { step: self.steps, actor_loss, critic_loss, coverage, episode_return })
    }

    /// Coverage of the 7×7 arrow grid on `[−2, 2]²`.
    pub fn coverage(&self) -> Result<ModeCoverage> {
        let grid = arrow_grid(&self.policy, &[], 7, 2.0)?;
        Ok(mode_coverage(&grid.endpoints(), DEFAULT_RADIUS))
    }

    /// Mean undiscounted return of Best-of-N acting (no exploration noise) on
    /// a fixed evaluation stream.
    pub fn evaluate_return(&self, env: &PointMass, episodes: usize) -> Result<f64> {
        let clip = self.clip();
        let n = self.cfg.critic.bon_n;
        evaluate_return(env, episodes, self.cfg.train.seed ^ EVAL_STREAM, |s, rng| {
            let srow = Array2::from_shape_vec((1, s.len()), s.to_vec()).expect("state row");
            Ok(self.critic.best_of_n(&self.policy, srow.view(), n, clip, rng)?.into_raw_vec_and_offset().0)
        })
    }

    pub fn run(mut self) -> Result<TrainOutput> {
        for _ in 0..self.cfg.train.total_steps {
            self.step()?;
        }
        Ok(TrainOutput { policy: self.policy, policy_opt: self.policy_opt, critic: self.critic, metrics: self.metrics })
    }
}

/// Train from a config; deterministic per `train.seed`.
pub fn train(cfg: Config) -> Result<TrainOutput> {
    Trainer::new(cfg)?.run()
}

/// Mean undiscounted return of `act` over `episodes` episodes from a fresh copy
/// of `env`, using an RNG seeded from `seed`.
pub fn evaluate_return<F>(env: &PointMass, episodes: usize, seed: u64, mut act: F) -> Result<f64>
where
    F: FnMut(&[f64], &mut ChaCha8Rng) -> Result<Vec<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = env.clone();
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut s = env.reset(&mut rng);
        loop {
            let a = act(&s, &mut rng)?;
            let st = env.step(&a, &mut rng);
            total += st.reward;
            if st.done {
                break;
            }
            s = st.next_state;
        }
    }
    Ok(total / episodes.max(1) as f64)
}

/// Mean return of uniform random actions in the action box.
pub fn random_policy_return(env: &PointMass, episodes: usize, seed: u64) -> Result<f64> {
    let b = env.action_bound();
    evaluate_return(env, episodes, seed, |_, rng| Ok(vec![rng.random_range(-b..=b), rng.random_range(-b..=b)]))
}
