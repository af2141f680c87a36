use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, Step};

/// Damped double integrator in the plane.
///
/// State is `[x, y, vx, vy]`. Each step applies
/// `v ← damping · v + dt · gain · a` and `p ← p + dt · v`, clamps the position
/// to the arena, and pays `−‖p − goal‖`. Episodes start at rest from a
/// uniformly drawn position and end after `horizon` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointMass {
    pub dt: f64,
    pub damping: f64,
    pub gain: f64,
    pub goal: [f64; 2],
    pub horizon: usize,
    pub arena: f64,
    pub start_spread: f64,
    #[serde(skip)]
    state: [f64; 4],
    #[serde(skip)]
    elapsed: usize,
}

impl Default for PointMass {
    fn default() -> Self {
        Self {
            dt: 0.05,
            damping: 0.95,
            gain: 2.0,
            goal: [1.0, 1.0],
            horizon: 200,
            arena: 2.0,
            start_spread: 1.0,
            state: [0.0; 4],
            elapsed: 0,
        }
    }
}

impl PointMass {
    /// Pure transition: `(s', reward)`.
    pub fn transition(&self, s: [f64; 4], a: [f64; 2]) -> ([f64; 4], f64) {
        let a = [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)];
        let mut vx = self.damping * s[2] + self.dt * self.gain * a[0];
        let mut vy = self.damping * s[3] + self.dt * self.gain * a[1];
        let mut x = s[0] + self.dt * vx;
        let mut y = s[1] + self.dt * vy;
        if x.abs() > self.arena {
            x = x.clamp(-self.arena, self.arena);
            vx = 0.0;
        }
        if y.abs() > self.arena {
            y = y.clamp(-self.arena, self.arena);
            vy = 0.0;
        }
        let reward = -((x - self.goal[0]).powi(2) + (y - self.goal[1]).powi(2)).sqrt();
        ([x, y, vx, vy], reward)
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    pub fn set_state(&mut self, s: [f64; 4]) {
        self.state = s;
        self.elapsed = 0;
    }
}

impl Environment for PointMass {
    fn state_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bound(&self) -> f64 {
        1.0
    }

    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let s = self.start_spread;
        let x = if s > 0.0 { rng.random_range(-s..s) } else { 0.0 };
        let y = if s > 0.0 { rng.random_range(-s..s) } else { 0.0 };
        self.state = [x, y, 0.0, 0.0];
        self.elapsed = 0;
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64], _rng: &mut dyn rand::RngCore) -> Step {
        let (next, reward) = self.transition(self.state, [action[0], action[1]]);
        self.state = next;
        self.elapsed += 1;
        Step { next_state: next.to_vec(), reward, done: self.elapsed >= self.horizon, terminal: false }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_action_from_rest_stays_put() {
        let env = PointMass::default();
        let (s, r) = env.transition([0.3, -0.2, 0.0, 0.0], [0.0, 0.0]);
        assert_eq!(s, [0.3, -0.2, 0.0, 0.0]);
        assert_eq!(r, -((0.7f64).powi(2) + (1.2f64).powi(2)).sqrt());
    }

    #[test]
    fn pushing_toward_goal_reduces_distance() {
        let env = PointMass::default();
        let mut s = [0.0, 0.0, 0.0, 0.0];
        let d0 = 2f64.sqrt();
        let mut last = d0;
        for _ in 0..5 {
            let (n, r) = env.transition(s, [1.0, 1.0]);
            assert!(-r < last);
            last = -r;
            s = n;
        }
    }

    #[test]
    fn fixed_actions_reproduce_bitwise() {
        let run = || {
            let mut env = PointMass::default();
            env.set_state([0.1, 0.2, 0.0, 0.0]);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            (0..50)
                .map(|i| {
                    let a = [((i as f64) * 0.37).sin(), ((i as f64) * 0.11).cos()];
                    let st = env.step(&a, &mut rng);
                    (st.reward.to_bits(), st.next_state.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn episode_ends_at_horizon() {
        let mut env = PointMass { horizon: 3, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        env.reset(&mut rng);
        assert!(!env.step(&[0.0, 0.0], &mut rng).done);
        assert!(!env.step(&[0.0, 0.0], &mut rng).done);
        assert!(env.step(&[0.0, 0.0], &mut rng).done);
    }

    #[test]
    fn actions_are_clipped_and_reward_bounded() {
        let env = PointMass::default();
        let (a, _) = env.transition([0.0; 4], [5.0, -5.0]);
        let (b, _) = env.transition([0.0; 4], [1.0, -1.0]);
        assert_eq!(a, b);
        let mut s = [0.0; 4];
        for _ in 0..1000 {
            let (n, r) = env.transition(s, [-1.0, -1.0]);
            assert!(r >= -(2.0f64 * 9.0).sqrt() - 1e-12);
            s = n;
        }
    }
}
