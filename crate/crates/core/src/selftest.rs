//! Fast oracle comparisons behind `somflow selftest`.

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{cosine, mode_coverage};
use crate::envs::GaussianMixture;
use crate::meanflow::{meanflow_target, target_velocity};
use crate::net::{Activation, MeanFlowPolicy, Mlp};
use crate::schedules::NoiseSchedule;
use crate::score::{batch_q_normalize, estimate_energy_gradient, mixture_score_oracle, normalize_rescale, MixtureLogDensity, ScoreConfig};

type Check = fn() -> std::result::Result<(), String>;

const CHECKS: [(&str, Check); 7] = [
    ("kernel closed form vs quadrature", kernel_quadrature),
    ("backward vs finite differences", backward_fd),
    ("jvp vs finite differences", jvp_fd),
    ("score estimate vs mixture oracle", score_consistency),
    ("equal-time target is the velocity", equal_time_identity),
    ("batch normalization and rescaling", normalization),
    ("mode coverage arithmetic", coverage_arithmetic),
];

/// Run every check, print one line each, and report whether all passed.
pub fn run_all<W: Write>(out: &mut W) -> bool {
    let mut ok = true;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => {
                let _ = writeln!(out, "PASS {name}");
            }
            Err(msg) => {
                ok = false;
                let _ = writeln!(out, "FAIL {name}: {msg}");
            }
        }
    }
    ok
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn kernel_quadrature() -> std::result::Result<(), String> {
    let s = NoiseSchedule::vp(0.1, 10.0).map_err(|e| e.to_string())?;
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        let n = 2000;
        let h = t / n as f64;
        let beta = |x: f64| s.beta(x).unwrap();
        let mut acc = beta(0.0) + beta(t);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * beta(i as f64 * h);
        }
        let quad = acc * h / 3.0;
        let exact = s.integrated_beta(t).map_err(|e| e.to_string())?;
        ensure((quad - exact).abs() < 1e-10, || format!("t={t}: {quad} vs {exact}"))?;
    }
    Ok(())
}

fn random_mlp(sizes: &[usize], seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mlp::new(sizes, Activation::Gelu, false, &mut rng).expect("valid sizes")
}

fn backward_fd() -> std::result::Result<(), String> {
    let mut net = random_mlp(&[3, 4, 4, 2], 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Array2::from_shape_simple_fn((3, 3), || rng.random_range(-1.0..1.0));
    let f = |n: &Mlp| n.forward(x.view()).unwrap().iter().map(|v| v * v).sum::<f64>();
    let (y, cache) = net.forward_cached(x.view()).map_err(|e| e.to_string())?;
    let g = net.backward(&cache, (y * 2.0).view()).map_err(|e| e.to_string())?.flat();
    let base = net.params_flat();
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] += 1e-6;
        net.set_params_flat(&p).unwrap();
        let up = f(&net);
        p[k] -= 2e-6;
        net.set_params_flat(&p).unwrap();
        let dn = f(&net);
        let fd = (up - dn) / 2e-6;
        ensure((fd - g[k]).abs() / g[k].abs().max(1e-4) < 1e-5, || format!("param {k}: {} vs {fd}", g[k]))?;
    }
    Ok(())
}

fn jvp_fd() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = MeanFlowPolicy::new(2, 1, &[5], Activation::Gelu, &mut rng).map_err(|e| e.to_string())?;
    let n = p.net.num_params();
    p.net.set_params_flat(&(0..n).map(|_| rng.random_range(-0.7..0.7)).collect::<Vec<_>>()).unwrap();
    let (a, r, t, s, v) = ([0.3, -0.4], 0.1, 0.6, [0.2], [0.5, 0.9]);
    let jvp = p.jvp_total_derivative(&a, r, t, &s, &v).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let at = |e: f64| p.forward(&[a[0] + e * v[0], a[1] + e * v[1]], r, t + e, &s).unwrap();
    let (up, dn) = (at(h), at(-h));
    for c in 0..2 {
        let fd = (up[c] - dn[c]) / (2.0 * h);
        ensure((fd - jvp[c]).abs() / fd.abs().max(1e-4) < 1e-5, || format!("coord {c}: {} vs {fd}", jvp[c]))?;
    }
    Ok(())
}

fn score_consistency() -> std::result::Result<(), String> {
    let mix = GaussianMixture::eight_gaussian();
    let s = NoiseSchedule::vp(0.1, 10.0).map_err(|e| e.to_string())?;
    let cfg = ScoreConfig { k_samples: 4000, q_norm: false, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut total = 0.0;
    let pts = [[0.5, 0.5], [-1.0, 0.3], [0.2, -1.4], [1.6, 1.1]];
    for p in pts {
        let est = estimate_energy_gradient(&cfg, &s, &MixtureLogDensity(&mix), &[], &p, 0.5, &mut rng).map_err(|e| e.to_string())?;
        let exact = mixture_score_oracle(&mix, &s, p, 0.5).map_err(|e| e.to_string())?;
        total += cosine([est[0], est[1]], exact);
    }
    let mean = total / pts.len() as f64;
    ensure(mean > 0.98, || format!("mean cosine {mean}"))
}

fn equal_time_identity() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = MeanFlowPolicy::new(2, 0, &[6], Activation::Gelu, &mut rng).map_err(|e| e.to_string())?;
    let n = p.net.num_params();
    p.net.set_params_flat(&(0..n).map(|_| rng.random_range(-0.5..0.5)).collect::<Vec<_>>()).unwrap();
    let s = NoiseSchedule::vp(0.1, 10.0).unwrap();
    for _ in 0..20 {
        let a = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let t = rng.random_range(1e-3..1.0);
        let g = [rng.random_range(-25.0..25.0), rng.random_range(-25.0..25.0)];
        let v = target_velocity(&s, &g, &a, t).unwrap();
        let u = meanflow_target(&p, &v, &a, t, t, &[]).map_err(|e| e.to_string())?;
        ensure(u.iter().zip(&v).all(|(x, y)| x.to_bits() == y.to_bits()), || format!("t={t}: {u:?} vs {v:?}"))?;
    }
    Ok(())
}

fn normalization() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q: Vec<f64> = (0..256).map(|_| rng.random_range(-3.0..7.0)).collect();
    let z = batch_q_normalize(&q).map_err(|e| e.to_string())?;
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
    ensure(mean.abs() < 1e-10 && (std - 1.0).abs() < 1e-8, || format!("mean {mean}, std {std}"))?;
    let cfg = ScoreConfig::default();
    let g = normalize_rescale(&cfg, &[0.3, -1.2]);
    let norm = g[0].hypot(g[1]);
    ensure((norm - cfg.w).abs() < 1e-6, || format!("norm {norm}"))
}

fn coverage_arithmetic() -> std::result::Result<(), String> {
    let c = mode_coverage(&[[std::f64::consts::SQRT_2, 0.0], [0.0, 0.0], [1.0, 0.0]], 0.5);
    ensure(c.e == 2 && c.total == 2, || format!("{c:?}"))
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        let mut buf = Vec::new();
        assert!(super::run_all(&mut buf), "{}", String::from_utf8_lossy(&buf));
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }
}
