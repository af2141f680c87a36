//! Noise schedules for the variance-preserving (VP) and variance-exploding (VE)
//! forward SDEs.
//!
//! Everything here is closed form: the VP integral `B(t) = ∫₀ᵗ β(τ) dτ` for the
//! linear schedule, the Gaussian transition kernel, the importance-sampling
//! proposal used by the score estimator, and the drift/diffusion coefficients
//! that enter the probability-flow ODE.

use ndarray::{ArrayView1, ArrayViewMut1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdeKind {
    Vp,
    Ve,
}

/// Schedule settings as they appear under `[sde]` in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeConfig {
    pub kind: SdeKind,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Lower bound for training times; the VP proposal degenerates at `t = 0`.
    pub t_floor: f64,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            kind: SdeKind::Vp,
            beta_min: 0.1,
            beta_max: 10.0,
            sigma_min: 0.01,
            sigma_max: 3.0,
            t_floor: 1e-3,
        }
    }
}

impl SdeConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        if !(self.t_floor > 0.0 && self.t_floor < 1.0) {
            return Err(Error::Config(format!("sde.t_floor = {} must lie in (0, 1)", self.t_floor)));
        }
        match self.kind {
            SdeKind::Vp => NoiseSchedule::vp(self.beta_min, self.beta_max),
            SdeKind::Ve => NoiseSchedule::ve(self.sigma_min, self.sigma_max),
        }
    }
}

/// Moments of the forward kernel `p_t(a_t | a_0) = N(mean_coeff · a_0, std² I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub mean_coeff: f64,
    pub std: f64,
}

impl Kernel {
    pub fn variance(&self) -> f64 {
        self.std * self.std
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSchedule {
    /// Linear `β(t) = β_min + t (β_max − β_min)`.
    Vp { beta_min: f64, beta_max: f64 },
    /// Geometric `σ(t) = σ_min (σ_max / σ_min)^t`.
    Ve { sigma_min: f64, sigma_max: f64 },
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange { t })
    }
}

impl NoiseSchedule {
    pub fn vp(beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(beta_min > 0.0 && beta_min < beta_max && beta_max.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < beta_min < beta_max, got ({beta_min}, {beta_max})"
            )));
        }
        Ok(Self::Vp { beta_min, beta_max })
    }

    pub fn ve(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
            )));
        }
        Ok(Self::Ve { sigma_min, sigma_max })
    }

    pub fn kind(&self) -> SdeKind {
        match self {
            Self::Vp { .. } => SdeKind::Vp,
            Self::Ve { .. } => SdeKind::Ve,
        }
    }

    pub fn beta(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        match *self {
            Self::Vp { beta_min, beta_max } => Ok(beta_min + t * (beta_max - beta_min)),
            Self::Ve { .. } => Err(Error::WrongScheduleKind { op: "beta", expected: "VP" }),
        }
    }

    /// `B(t) = β_min t + ½ (β_max − β_min) t²`.
    pub fn integrated_beta(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        match *self {
            Self::Vp { beta_min, beta_max } => Ok(beta_min * t + 0.5 * (beta_max - beta_min) * t * t),
            Self::Ve { .. } => Err(Error::WrongScheduleKind { op: "integrated_beta", expected: "VP" }),
        }
    }

    /// `(exp(−½ B(t)), 1 − exp(−B(t)))`.
    pub fn vp_kernel_moments(&self, t: f64) -> Result<(f64, f64)> {
        let b = self.integrated_beta(t)?;
        Ok(((-0.5 * b).exp(), -(-b).exp_m1()))
    }

    pub fn ve_sigma(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        match *self {
            Self::Ve { sigma_min, sigma_max } => Ok(sigma_min * (sigma_max / sigma_min).powf(t)),
            Self::Vp { .. } => Err(Error::WrongScheduleKind { op: "ve_sigma", expected: "VE" }),
        }
    }

    /// Forward kernel at time `t`.
    ///
    /// The VE kernel variance is `σ²(t) − σ²(0)`, so the kernel is the identity at
    /// `t = 0` for both families.
    pub fn kernel(&self, t: f64) -> Result<Kernel> {
        match *self {
            Self::Vp { .. } => {
                let (mean_coeff, var) = self.vp_kernel_moments(t)?;
                Ok(Kernel { mean_coeff, std: var.sqrt() })
            }
            Self::Ve { sigma_min, .. } => {
                let sigma = self.ve_sigma(t)?;
                let var = (sigma * sigma - sigma_min * sigma_min).max(0.0);
                Ok(Kernel { mean_coeff: 1.0, std: var.sqrt() })
            }
        }
    }

    /// Draw `a_t ~ p_t(· | a_0)` into `out`.
    pub fn perturb_into<R: Rng + ?Sized>(
        &self,
        a0: ArrayView1<f64>,
        t: f64,
        rng: &mut R,
        mut out: ArrayViewMut1<f64>,
    ) -> Result<()> {
        let k = self.kernel(t)?;
        for (o, &x) in out.iter_mut().zip(a0.iter()) {
            let eps: f64 = rng.sample(StandardNormal);
            *o = if k.std == 0.0 { k.mean_coeff * x } else { k.mean_coeff * x + k.std * eps };
        }
        Ok(())
    }

    pub fn perturb<R: Rng + ?Sized>(&self, a0: &[f64], t: f64, rng: &mut R) -> Result<Vec<f64>> {
        let mut out = vec![0.0; a0.len()];
        self.perturb_into(ArrayView1::from(a0), t, rng, ArrayViewMut1::from(out.as_mut_slice()))?;
        Ok(out)
    }

    /// Gaussian proposal for `a_{0|t}`: the kernel likelihood read as a density in `a_0`.
    ///
    /// VP: `N(a_t / m, s² / m²)`; VE: `N(a_t, σ_t²)`. Returns `(mean, variance)`.
    pub fn idem_proposal_moments(&self, a_t: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        let k = self.kernel(t)?;
        let mean = a_t.iter().map(|x| x / k.mean_coeff).collect();
        Ok((mean, k.variance() / (k.mean_coeff * k.mean_coeff)))
    }

    /// `∂a_{0|t} / ∂a_t` for the reparameterized proposal (a multiple of the identity).
    pub fn proposal_jacobian(&self, t: f64) -> Result<f64> {
        Ok(1.0 / self.kernel(t)?.mean_coeff)
    }

    /// `(f(t), g²(t))` for the probability-flow ODE `v = f x − ½ g² ∇ log p_t`.
    pub fn pf_ode_coefficients(&self, t: f64) -> Result<(f64, f64)> {
        match *self {
            Self::Vp { .. } => {
                let b = self.beta(t)?;
                Ok((-0.5 * b, b))
            }
            Self::Ve { sigma_min, sigma_max } => {
                let sigma = self.ve_sigma(t)?;
                Ok((0.0, 2.0 * sigma * sigma * (sigma_max / sigma_min).ln()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vp() -> NoiseSchedule {
        NoiseSchedule::vp(0.1, 10.0).unwrap()
    }

    fn ve() -> NoiseSchedule {
        NoiseSchedule::ve(0.01, 3.0).unwrap()
    }

    #[test]
    fn beta_endpoints_and_midpoint() {
        let s = vp();
        assert_eq!(s.beta(0.0).unwrap(), 0.1);
        assert_eq!(s.beta(1.0).unwrap(), 10.0);
        assert!((s.beta(0.5).unwrap() - 5.05).abs() < 1e-15);
        assert!(matches!(s.beta(1.5), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(s.beta(-0.1), Err(Error::TimeOutOfRange { .. })));
        assert!(ve().beta(0.5).is_err());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(NoiseSchedule::vp(10.0, 0.1).is_err());
        assert!(NoiseSchedule::vp(0.0, 1.0).is_err());
        assert!(NoiseSchedule::ve(3.0, 3.0).is_err());
    }

    #[test]
    fn vp_kernel_reference_values() {
        let s = vp();
        assert_eq!(s.vp_kernel_moments(0.0).unwrap(), (1.0, 0.0));
        let (m, v) = s.vp_kernel_moments(1.0).unwrap();
        assert!((m - (-2.525f64).exp()).abs() < 1e-15);
        assert!((m - 0.080058).abs() < 1e-6);
        assert!((v - (1.0 - (-5.05f64).exp())).abs() < 1e-15);
        assert!((v - 0.99359).abs() < 1e-5);
        let (m, v) = s.vp_kernel_moments(0.5).unwrap();
        assert!((m - (-0.64375f64).exp()).abs() < 1e-15);
        assert!((v - (1.0 - (-1.2875f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn ve_sigma_geometric() {
        let s = ve();
        assert!((s.ve_sigma(0.0).unwrap() - 0.01).abs() < 1e-15);
        assert!((s.ve_sigma(1.0).unwrap() - 3.0).abs() < 1e-12);
        assert!((s.ve_sigma(0.5).unwrap() - 0.03f64.sqrt()).abs() < 1e-12);
        assert!((s.ve_sigma(0.5).unwrap() - 0.17321).abs() < 1e-5);
    }

    #[test]
    fn perturb_at_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a0 = [0.3, -1.7];
        assert_eq!(vp().perturb(&a0, 0.0, &mut rng).unwrap(), a0.to_vec());
        assert_eq!(ve().perturb(&a0, 0.0, &mut rng).unwrap(), a0.to_vec());
    }

    #[test]
    fn ve_perturb_std_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = ve();
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let x = s.perturb(&[0.0], 1.0, &mut rng).unwrap()[0];
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).sqrt();
        assert!((std / 3.0 - 1.0).abs() < 0.02, "std {std}");
    }

    #[test]
    fn proposal_moments() {
        let s = vp();
        let (mean, var) = s.idem_proposal_moments(&[0.3, 0.4], 0.0).unwrap();
        assert_eq!(mean, vec![0.3, 0.4]);
        assert_eq!(var, 0.0);

        let (mean, var) = s.idem_proposal_moments(&[0.08, 0.0], 1.0).unwrap();
        let m = (-2.525f64).exp();
        let expected_var = (1.0 - (-5.05f64).exp()) / (-5.05f64).exp();
        assert!((mean[0] - 0.08 / m).abs() < 1e-12);
        assert!((mean[0] - 0.999272).abs() < 1e-6);
        assert_eq!(mean[1], 0.0);
        assert!((var - expected_var).abs() < 1e-9);
        assert!((var - 155.0225).abs() < 1e-3);

        let e = ve();
        let (mean, var) = e.idem_proposal_moments(&[1.0, 1.0], 0.5).unwrap();
        assert_eq!(mean, vec![1.0, 1.0]);
        let sigma = e.ve_sigma(0.5).unwrap();
        assert!((var - (sigma * sigma - 1e-4)).abs() < 1e-15);
    }

    #[test]
    fn pf_ode_coefficients_reference() {
        let (f, g2) = vp().pf_ode_coefficients(0.5).unwrap();
        assert!((f + 2.525).abs() < 1e-15);
        assert!((g2 - 5.05).abs() < 1e-15);

        let s = ve();
        for &t in &[0.1, 0.4, 0.9] {
            let (f, g2) = s.pf_ode_coefficients(t).unwrap();
            assert_eq!(f, 0.0);
            let h = 1e-5;
            let sq = |t: f64| s.ve_sigma(t).unwrap().powi(2);
            let fd = (sq(t + h) - sq(t - h)) / (2.0 * h);
            assert!(((g2 - fd) / fd).abs() < 1e-8, "t={t} g2={g2} fd={fd}");
        }
    }

    #[test]
    fn kernel_monotonicity() {
        let s = vp();
        let mut prev = s.vp_kernel_moments(0.0).unwrap();
        for i in 1..=100 {
            let cur = s.vp_kernel_moments(i as f64 / 100.0).unwrap();
            assert!(cur.0 < prev.0 && cur.1 > prev.1);
            assert!(cur.0 > 0.0 && cur.0 <= 1.0 && cur.1 < 1.0);
            assert!((cur.0 * cur.0 + cur.1 - 1.0).abs() < 1e-12);
            prev = cur;
        }
    }

    #[test]
    fn integral_matches_quadrature() {
        let s = vp();
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            // composite Simpson, exact for the linear integrand
            let n = 64;
            let h = t / n as f64;
            let mut acc = s.beta(0.0).unwrap() + s.beta(t).unwrap();
            for j in 1..n {
                let w = if j % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * s.beta(j as f64 * h).unwrap();
            }
            let quad = acc * h / 3.0;
            assert!((quad - s.integrated_beta(t).unwrap()).abs() < 1e-10);
        }
    }
}
