//! Evaluation artifacts: arrow grids, mode coverage, score fields, Q statistics
//! and intermediate-time sample clouds, with their CSV/JSON writers.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critic::Critic;
use crate::envs::GaussianMixture;
use crate::error::{Error, Result};
use crate::meanflow::{one_step_map, partial_map, sample_one_step_batch};
use crate::net::MeanFlowPolicy;
use crate::schedules::NoiseSchedule;
use crate::score::{estimate_energy_gradient_batch, mixture_score_oracle, MixtureLogDensity, ScoreConfig};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// The four weight-2 modes of the eight-Gaussian task, in N, E, S, W order.
pub const HIGH_MODES: [[f64; 2]; 4] = [[0.0, SQRT_2], [SQRT_2, 0.0], [0.0, -SQRT_2], [-SQRT_2, 0.0]];

pub const DEFAULT_RADIUS: f64 = 0.5;

/// `side × side` lattice on `[−extent, extent]²`, row-major with `y` outer.
pub fn lattice(side: usize, extent: f64) -> Array2<f64> {
    let coord = |k: usize| if side == 1 { 0.0 } else { -extent + 2.0 * extent * k as f64 / (side - 1) as f64 };
    let mut out = Array2::zeros((side * side, 2));
    for i in 0..side {
        for j in 0..side {
            out[[i * side + j, 0]] = coord(j);
            out[[i * side + j, 1]] = coord(i);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrowGrid {
    pub grid_side: usize,
    pub extent: f64,
    pub starts: Array2<f64>,
    pub ends: Array2<f64>,
}

impl ArrowGrid {
    pub fn endpoints(&self) -> Vec<[f64; 2]> {
        self.ends.rows().into_iter().map(|r| [r[0], r[1]]).collect()
    }
}

/// Push every lattice point through the one-step map; no fresh noise.
pub fn arrow_grid(policy: &MeanFlowPolicy, state: &[f64], grid_side: usize, extent: f64) -> Result<ArrowGrid> {
    if policy.action_dim() != 2 {
        return Err(Error::DimensionMismatch { what: "arrow grid action dim", expected: 2, got: policy.action_dim() });
    }
    let starts = lattice(grid_side, extent);
    let states = broadcast_state(state, starts.nrows());
    let ends = one_step_map(policy, starts.view(), states.view())?;
    Ok(ArrowGrid { grid_side, extent, starts, ends })
}

fn broadcast_state(state: &[f64], n: usize) -> Array2<f64> {
    let mut s = Array2::zeros((n, state.len()));
    for mut row in s.rows_mut() {
        row.assign(&ndarray::ArrayView1::from(state));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModeCoverage {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "E")]
    pub e: usize,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub total: usize,
}

impl ModeCoverage {
    pub fn per_mode(&self) -> [usize; 4] {
        [self.n, self.e, self.s, self.w]
    }

    pub fn all_modes_hit(&self) -> bool {
        self.per_mode().iter().all(|&c| c > 0)
    }
}

/// Count endpoints within `radius` of a high mode; each endpoint counts at most
/// once, for its nearest mode.
pub fn mode_coverage(endpoints: &[[f64; 2]], radius: f64) -> ModeCoverage {
    let mut counts = [0usize; 4];
    for p in endpoints {
        let (k, d) = HIGH_MODES
            .iter()
            .map(|m| ((p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2)).sqrt())
            .enumerate()
            .fold((0, f64::INFINITY), |best, (k, d)| if d < best.1 { (k, d) } else { best });
        if d <= radius {
            counts[k] += 1;
        }
    }
    ModeCoverage { n: counts[0], e: counts[1], s: counts[2], w: counts[3], total: counts.iter().sum() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreFieldPoint {
    pub x: f64,
    pub y: f64,
    pub est: [f64; 2],
    pub oracle: [f64; 2],
    pub cosine: f64,
}

/// Cosine of the angle between `a` and `b`; 0 when either is numerically zero.
pub fn cosine(a: [f64; 2], b: [f64; 2]) -> f64 {
    let na = a[0].hypot(a[1]);
    let nb = b[0].hypot(b[1]);
    if na <= 1e-12 || nb <= 1e-12 {
        return 0.0;
    }
    ((a[0] * b[0] + a[1] * b[1]) / (na * nb)).clamp(-1.0, 1.0)
}

/// Estimated and exact smoothed scores of `mixture` on a lattice, taking
/// `exp(Q)` to be the unnormalized mixture density.
pub fn score_field<R: Rng + ?Sized>(
    mixture: &GaussianMixture,
    schedule: &NoiseSchedule,
    cfg: &ScoreConfig,
    grid_side: usize,
    extent: f64,
    t: f64,
    rng: &mut R,
) -> Result<Vec<ScoreFieldPoint>> {
    let pts = lattice(grid_side, extent);
    let n = pts.nrows();
    let states = Array2::zeros((n, 0));
    let est = estimate_energy_gradient_batch(cfg, schedule, &MixtureLogDensity(mixture), states.view(), pts.view(), &vec![t; n], rng)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let x = [pts[[i, 0]], pts[[i, 1]]];
        let oracle = mixture_score_oracle(mixture, schedule, x, t)?;
        let e = [est[[i, 0]], est[[i, 1]]];
        out.push(ScoreFieldPoint { x: x[0], y: x[1], est: e, oracle, cosine: cosine(e, oracle) });
    }
    Ok(out)
}

/// Mean and std of `Q(s, a)` over `n` one-step actions at each state.
pub fn q_statistics<R: Rng + ?Sized>(
    policy: &MeanFlowPolicy,
    critic: &Critic,
    states: ArrayView2<f64>,
    n: usize,
    clip: Option<f64>,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(states.nrows());
    for s in states.rows() {
        let rep = broadcast_state(s.as_slice().expect("contiguous state row"), n);
        let a = sample_one_step_batch(policy, rep.view(), clip, rng)?;
        let q = critic.q_values(rep.view(), a.view())?;
        let mean = q.iter().sum::<f64>() / n as f64;
        let var = q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        out.push((mean, var.sqrt()));
    }
    Ok(out)
}

/// Times at which sample clouds are exported.
pub const CLOUD_TIMES: [f64; 4] = [0.75, 0.5, 0.25, 0.0];

/// Noise `a₁` carried to each time in `times` by one average-velocity step.
/// The `t = 0` cloud is exactly the one-step endpoint set.
pub fn sample_clouds(policy: &MeanFlowPolicy, state: &[f64], a1: ArrayView2<f64>, times: &[f64]) -> Result<Vec<(f64, Array2<f64>)>> {
    let states = broadcast_state(state, a1.nrows());
    times.iter().map(|&t| Ok((t, partial_map(policy, a1, states.view(), t)?))).collect()
}

fn versioned(kind: &str, header: &str) -> String {
    format!("# somflow {kind} v1\n{header}\n")
}

pub fn arrows_csv(grid: &ArrowGrid) -> String {
    let mut s = versioned("arrows", "start_x,start_y,end_x,end_y");
    for (a, b) in grid.starts.rows().into_iter().zip(grid.ends.rows()) {
        writeln!(s, "{},{},{},{}", a[0], a[1], b[0], b[1]).unwrap();
    }
    s
}

pub fn score_field_csv(field: &[ScoreFieldPoint]) -> String {
    let mut s = versioned("score_field", "x,y,est_sx,est_sy,oracle_sx,oracle_sy,cosine");
    for p in field {
        writeln!(s, "{},{},{},{},{},{},{}", p.x, p.y, p.est[0], p.est[1], p.oracle[0], p.oracle[1], p.cosine).unwrap();
    }
    s
}

pub fn qstats_csv(stats: &[(f64, f64)]) -> String {
    let mut s = versioned("qstats", "state_idx,q_mean,q_std");
    for (i, (m, sd)) in stats.iter().enumerate() {
        writeln!(s, "{i},{m},{sd}").unwrap();
    }
    s
}

pub fn clouds_csv(clouds: &[(f64, Array2<f64>)]) -> String {
    let mut s = versioned("clouds", "t,x,y");
    for (t, pts) in clouds {
        for r in pts.rows() {
            writeln!(s, "{t},{},{}", r[0], r[1]).unwrap();
        }
    }
    s
}

#[derive(Serialize)]
struct CoverageFile {
    #[serde(flatten)]
    coverage: ModeCoverage,
    radius: f64,
}

pub fn coverage_json(c: &ModeCoverage, radius: f64) -> Result<String> {
    Ok(serde_json::to_string(&CoverageFile { coverage: *c, radius })? + "\n")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}
