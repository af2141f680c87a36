use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::schedules::NoiseSchedule;

/// Weighted mixture of isotropic 2-D Gaussians sharing one standard deviation.
///
/// As a reward it is the mixture density divided by its maximum, so values lie
/// in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    centers: Vec<[f64; 2]>,
    weights: Vec<f64>,
    std: f64,
    normalizer: f64,
}

impl GaussianMixture {
    pub fn new(centers: Vec<[f64; 2]>, weights: Vec<f64>, std: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::EmptyMixture);
        }
        if centers.len() != weights.len() {
            return Err(Error::DimensionMismatch { what: "mixture weights", expected: centers.len(), got: weights.len() });
        }
        if weights.iter().any(|&w| w <= 0.0 || !w.is_finite()) || std <= 0.0 || !std.is_finite() {
            return Err(Error::Config("mixture weights and std must be positive".into()));
        }
        let mut mix = Self { centers, weights, std, normalizer: 1.0 };
        mix.normalizer = mix.max_density();
        Ok(mix)
    }

    /// Eight modes on the circle of radius √2; even-index modes carry weight 2,
    /// odd-index modes weight 1; σ = 0.3.
    pub fn eight_gaussian() -> Self {
        let centers = (0..8)
            .map(|i| {
                let th = 2.0 * PI * i as f64 / 8.0;
                [SQRT_2 * th.cos(), SQRT_2 * th.sin()]
            })
            .collect();
        let weights = (0..8).map(|i| if i % 2 == 0 { 2.0 } else { 1.0 }).collect();
        Self::new(centers, weights, 0.3).expect("valid mixture")
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn component_std(&self) -> f64 {
        self.std
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    fn kernel_terms(&self, a: [f64; 2]) -> impl Iterator<Item = (f64, [f64; 2])> + '_ {
        let inv = 1.0 / (2.0 * self.std * self.std);
        self.centers.iter().zip(&self.weights).map(move |(c, &w)| {
            let d = [c[0] - a[0], c[1] - a[1]];
            let x = (d[0] * d[0] + d[1] * d[1]) * inv;
            // exp(−x) is exactly zero past this point, so skipping it changes nothing
            let e = if x > 750.0 { 0.0 } else { w * (-x).exp() };
            (e, d)
        })
    }

    /// `Σ_k w_k exp(−‖a − μ_k‖² / 2σ²)`.
    pub fn density(&self, a: [f64; 2]) -> f64 {
        self.kernel_terms(a).map(|(e, _)| e).sum()
    }

    pub fn density_gradient(&self, a: [f64; 2]) -> [f64; 2] {
        let s2 = self.std * self.std;
        self.kernel_terms(a)
            .fold([0.0, 0.0], |g, (e, d)| [g[0] + e * d[0] / s2, g[1] + e * d[1] / s2])
    }

    pub fn reward(&self, a: [f64; 2]) -> f64 {
        (self.density(a) / self.normalizer).min(1.0)
    }

    pub fn reward_gradient(&self, a: [f64; 2]) -> [f64; 2] {
        let g = self.density_gradient(a);
        [g[0] / self.normalizer, g[1] / self.normalizer]
    }

    /// Same values as [`Self::reward`] and [`Self::reward_gradient`] from one
    /// pass over the components.
    pub fn reward_and_gradient(&self, a: [f64; 2]) -> (f64, [f64; 2]) {
        let s2 = self.std * self.std;
        let (mut v, mut g) = (0.0, [0.0, 0.0]);
        for (e, d) in self.kernel_terms(a) {
            v += e;
            g = [g[0] + e * d[0] / s2, g[1] + e * d[1] / s2];
        }
        ((v / self.normalizer).min(1.0), [g[0] / self.normalizer, g[1] / self.normalizer])
    }

    /// `log Σ_k w_k exp(−‖a − μ_k‖² / 2σ²)` evaluated without underflow.
    pub fn log_density(&self, a: [f64; 2]) -> f64 {
        let inv = 1.0 / (2.0 * self.std * self.std);
        let logs: Vec<f64> = self
            .centers
            .iter()
            .zip(&self.weights)
            .map(|(c, &w)| w.ln() - ((c[0] - a[0]).powi(2) + (c[1] - a[1]).powi(2)) * inv)
            .collect();
        crate::score::log_sum_exp(&logs)
    }

    /// Score of the time-`t` marginal after pushing the mixture through the
    /// forward kernel, `Σ_k ρ_k(x) (m μ_k − x) / (m² σ² + s²)`.
    ///
    /// At `t = 0` this is `∇ log` of the mixture itself.
    pub fn smoothed_score(&self, schedule: &NoiseSchedule, x: [f64; 2], t: f64) -> Result<[f64; 2]> {
        let k = schedule.kernel(t)?;
        let m = k.mean_coeff;
        let var = m * m * self.std * self.std + k.variance();
        let logs: Vec<f64> = self
            .centers
            .iter()
            .zip(&self.weights)
            .map(|(c, &w)| w.ln() - ((m * c[0] - x[0]).powi(2) + (m * c[1] - x[1]).powi(2)) / (2.0 * var))
            .collect();
        let rho = crate::score::softmax(&logs);
        let mut g = [0.0, 0.0];
        for (r, c) in rho.iter().zip(&self.centers) {
            g[0] += r * (m * c[0] - x[0]) / var;
            g[1] += r * (m * c[1] - x[1]) / var;
        }
        Ok(g)
    }

    /// Log of the time-`t` marginal density up to a constant.
    pub fn smoothed_log_density(&self, schedule: &NoiseSchedule, x: [f64; 2], t: f64) -> Result<f64> {
        let k = schedule.kernel(t)?;
        let m = k.mean_coeff;
        let var = m * m * self.std * self.std + k.variance();
        let logs: Vec<f64> = self
            .centers
            .iter()
            .zip(&self.weights)
            .map(|(c, &w)| w.ln() - ((m * c[0] - x[0]).powi(2) + (m * c[1] - x[1]).powi(2)) / (2.0 * var))
            .collect();
        Ok(crate::score::log_sum_exp(&logs))
    }

    /// Largest density value, found by mean-shift ascent from every center.
    fn max_density(&self) -> f64 {
        let mut best = 0.0f64;
        for &c in &self.centers {
            let mut x = c;
            for _ in 0..500 {
                let mut num = [0.0, 0.0];
                let mut den = 0.0;
                for (e, d) in self.kernel_terms(x) {
                    num[0] += e * (x[0] + d[0]);
                    num[1] += e * (x[1] + d[1]);
                    den += e;
                }
                let next = [num[0] / den, num[1] / den];
                let moved = (next[0] - x[0]).abs() + (next[1] - x[1]).abs();
                x = next;
                if moved < 1e-15 {
                    break;
                }
            }
            best = best.max(self.density(x));
        }
        best
    }
}
