//! Two-moons and checkerboard reward landscapes on the plane.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Two interleaved half-annuli: the upper arc of the unit circle at the
/// origin and the lower arc of the unit circle at `(1, 0.5)`, each with a
/// Gaussian cross-section of width 0.15.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoMoons {
    width: f64,
    normalizer: f64,
}

/// Half circle of radius 1; `upper` selects `y ≥ cy`.
#[derive(Debug, Clone, Copy)]
struct Arc {
    center: [f64; 2],
    upper: bool,
}

impl Arc {
    /// Closest point on the arc to `p`.
    fn project(&self, p: [f64; 2]) -> [f64; 2] {
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let inside = if self.upper { d[1] >= 0.0 } else { d[1] <= 0.0 };
        if inside && r > 0.0 {
            [self.center[0] + d[0] / r, self.center[1] + d[1] / r]
        } else {
            // nearest endpoint, (±1, 0) relative to the center
            let x = if d[0] >= 0.0 { 1.0 } else { -1.0 };
            [self.center[0] + x, self.center[1]]
        }
    }
}

const MOONS: [Arc; 2] = [
    Arc { center: [0.0, 0.0], upper: true },
    Arc { center: [1.0, 0.5], upper: false },
];

impl Default for TwoMoons {
    fn default() -> Self {
        Self::new(0.15)
    }
}

impl TwoMoons {
    pub fn new(width: f64) -> Self {
        let mut m = Self { width, normalizer: 1.0 };
        m.normalizer = m.find_max();
        m
    }

    fn raw(&self, a: [f64; 2]) -> (f64, [f64; 2]) {
        let inv = 1.0 / (2.0 * self.width * self.width);
        let mut v = 0.0;
        let mut g = [0.0, 0.0];
        for arc in &MOONS {
            let q = arc.project(a);
            let d = [a[0] - q[0], a[1] - q[1]];
            let e = (-(d[0] * d[0] + d[1] * d[1]) * inv).exp();
            v += e;
            // ∇ dist² = 2 (a − proj(a))
            g[0] -= e * 2.0 * d[0] * inv;
            g[1] -= e * 2.0 * d[1] * inv;
        }
        (v, g)
    }

    pub fn reward(&self, a: [f64; 2]) -> f64 {
        (self.raw(a).0 / self.normalizer).min(1.0)
    }

    pub fn reward_gradient(&self, a: [f64; 2]) -> [f64; 2] {
        let g = self.raw(a).1;
        [g[0] / self.normalizer, g[1] / self.normalizer]
    }

    fn find_max(&self) -> f64 {
        let mut best = ([0.0, 0.0], 0.0);
        let n = 400;
        for i in 0..=n {
            for j in 0..=n {
                let a = [-2.0 + 5.0 * i as f64 / n as f64, -2.0 + 4.0 * j as f64 / n as f64];
                let v = self.raw(a).0;
                if v > best.1 {
                    best = (a, v);
                }
            }
        }
        // gradient ascent polish from the best lattice point
        let (mut x, mut v) = best;
        let mut step = 1e-3;
        for _ in 0..2000 {
            let g = self.raw(x).1;
            let cand = [x[0] + step * g[0], x[1] + step * g[1]];
            let cv = self.raw(cand).0;
            if cv > v {
                x = cand;
                v = cv;
            } else {
                step *= 0.5;
                if step < 1e-14 {
                    break;
                }
            }
        }
        v
    }
}

/// 4×4 alternating unit squares on `[−2, 2]²`, blurred with a Gaussian of
/// width 0.1. The blurred indicator never exceeds one, so no rescaling is needed.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkerboard {
    blur: f64,
}

impl Default for Checkerboard {
    fn default() -> Self {
        Self { blur: 0.1 }
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

impl Checkerboard {
    pub fn new(blur: f64) -> Self {
        Self { blur }
    }

    /// Blurred indicator of `[lo, lo + 1]` along one axis, and its derivative.
    fn interval(&self, x: f64, lo: f64) -> (f64, f64) {
        let w = self.blur;
        let (u, l) = ((lo + 1.0 - x) / w, (lo - x) / w);
        (std_normal_cdf(u) - std_normal_cdf(l), (std_normal_pdf(l) - std_normal_pdf(u)) / w)
    }

    fn raw(&self, a: [f64; 2]) -> (f64, [f64; 2]) {
        let mut v = 0.0;
        let mut g = [0.0, 0.0];
        for i in 0..4 {
            let (fx, dfx) = self.interval(a[0], -2.0 + i as f64);
            for j in 0..4 {
                if (i + j) % 2 != 0 {
                    continue;
                }
                let (fy, dfy) = self.interval(a[1], -2.0 + j as f64);
                v += fx * fy;
                g[0] += dfx * fy;
                g[1] += fx * dfy;
            }
        }
        (v, g)
    }

    pub fn reward(&self, a: [f64; 2]) -> f64 {
        self.raw(a).0.clamp(0.0, 1.0)
    }

    pub fn reward_gradient(&self, a: [f64; 2]) -> [f64; 2] {
        self.raw(a).1
    }
}
