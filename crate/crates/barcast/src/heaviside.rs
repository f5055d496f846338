//! Smooth and stochastic approximations of the Heaviside step function.
//!
//! Visibility decisions in the renderer are step functions of the boundary
//! intercepts; replacing the exact step with a smooth surrogate `λ(x, k)`
//! makes the whole forward pass differentiable. Larger `k` means a sharper
//! step. Two of the kinds are Bernoulli samplers whose success probability
//! equals a deterministic sibling; their samples use counter-based seeding
//! (a hash of seed, view, pixel and boundary index) so evaluation order
//! never matters and renders are reproducible for a fixed seed.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which smooth step family to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeavisideKind {
    Circle,
    CircleDistance,
    Erfc,
    Tanh,
    Log,
}

impl HeavisideKind {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, HeavisideKind::CircleDistance | HeavisideKind::Log)
    }

    pub fn name(&self) -> &'static str {
        match self {
            HeavisideKind::Circle => "circle",
            HeavisideKind::CircleDistance => "circle_distance",
            HeavisideKind::Erfc => "erfc",
            HeavisideKind::Tanh => "tanh",
            HeavisideKind::Log => "log",
        }
    }
}

impl std::str::FromStr for HeavisideKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(HeavisideKind::Circle),
            "circle_distance" | "circle-distance" => Ok(HeavisideKind::CircleDistance),
            "erfc" => Ok(HeavisideKind::Erfc),
            "tanh" => Ok(HeavisideKind::Tanh),
            "log" => Ok(HeavisideKind::Log),
            other => Err(Error::InvalidHeaviside(format!("unknown kind '{other}'"))),
        }
    }
}

/// A concrete smooth-step configuration: family, sharpness and (for the
/// stochastic kinds) the seed of the sample stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heaviside {
    pub kind: HeavisideKind,
    pub k: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Identifies one evaluation site for counter-based sampling.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleCtx {
    pub view: u32,
    pub pixel: u32,
    pub boundary: u32,
}

impl Heaviside {
    pub fn new(kind: HeavisideKind, k: f64, seed: u64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidHeaviside(format!("k must be > 0, got {k}")));
        }
        Ok(Self { kind, k, seed })
    }

    pub fn deterministic(kind: HeavisideKind, k: f64) -> Result<Self> {
        Self::new(kind, k, 0)
    }

    /// The underlying deterministic value: λ(x, k) for smooth kinds, the
    /// Bernoulli success probability for stochastic kinds.
    pub fn prob(&self, x: f64) -> f64 {
        let k = self.k;
        match self.kind {
            HeavisideKind::Circle | HeavisideKind::CircleDistance => {
                0.5 + 0.5 * x / (x * x + k * k).sqrt()
            }
            HeavisideKind::Erfc => 0.5 * libm::erfc(-k * x),
            HeavisideKind::Tanh | HeavisideKind::Log => 0.5 + 0.5 * (k * x).tanh(),
        }
    }

    /// Forward value: deterministic kinds return λ(x, k); stochastic kinds
    /// return a {0,1} Bernoulli sample with success probability λ(x, k),
    /// drawn from the counter-based stream at `ctx`.
    pub fn eval(&self, x: f64, ctx: SampleCtx) -> f64 {
        let p = self.prob(x);
        if self.kind.is_stochastic() {
            let u = unit_hash(self.seed, ctx);
            if u < p {
                1.0
            } else {
                0.0
            }
        } else {
            p
        }
    }

    /// dλ/dx of the underlying probability. Stochastic kinds use the same
    /// derivative (straight-through estimator through the sampler).
    pub fn deriv(&self, x: f64) -> f64 {
        let k = self.k;
        match self.kind {
            HeavisideKind::Circle | HeavisideKind::CircleDistance => {
                let s = x * x + k * k;
                0.5 * k * k / (s * s.sqrt())
            }
            HeavisideKind::Erfc => {
                let t = k * x;
                k * (-t * t).exp() / std::f64::consts::PI.sqrt()
            }
            HeavisideKind::Tanh | HeavisideKind::Log => {
                let t = (k * x).tanh();
                0.5 * k * (1.0 - t * t)
            }
        }
    }
}

/// Exact Heaviside step: 1 for x >= 0, else 0.
#[inline]
pub fn hard_step(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// splitmix64-style mixer over (seed, view, pixel, boundary), mapped to
/// [0, 1).
fn unit_hash(seed: u64, ctx: SampleCtx) -> f64 {
    let mut z = seed
        ^ (ctx.view as u64).wrapping_mul(0x9E3779B97F4A7C15)
        ^ (ctx.pixel as u64).wrapping_mul(0xBF58476D1CE4E5B9)
        ^ (ctx.boundary as u64).wrapping_mul(0x94D049BB133111EB);
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^= z >> 31;
    // upper 53 bits -> [0,1)
    (z >> 11) as f64 * (1.0 / 9007199254740992.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_midpoint_is_half() {
        for k in [0.1, 1.0, 50.0] {
            let h = Heaviside::deterministic(HeavisideKind::Tanh, k).unwrap();
            assert_eq!(h.eval(0.0, SampleCtx::default()), 0.5);
        }
    }

    #[test]
    fn tanh_reference_value() {
        let h = Heaviside::deterministic(HeavisideKind::Tanh, 0.1).unwrap();
        let v = h.eval(10.0, SampleCtx::default());
        let expect = 0.5 + 0.5 * 1.0f64.tanh();
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.88079).abs() < 1e-5);
    }

    #[test]
    fn circle_limits() {
        let h = Heaviside::deterministic(HeavisideKind::Circle, 0.5).unwrap();
        assert!((h.eval(1e12, SampleCtx::default()) - 1.0).abs() < 1e-9);
        assert!(h.eval(-1e12, SampleCtx::default()) < 1e-9);
    }

    #[test]
    fn rejects_nonpositive_k() {
        assert!(Heaviside::new(HeavisideKind::Tanh, 0.0, 0).is_err());
        assert!(Heaviside::new(HeavisideKind::Tanh, -1.0, 0).is_err());
    }

    #[test]
    fn symmetry_in_expectation() {
        // λ(x) + λ(-x) = 1 for every deterministic kind
        for kind in [HeavisideKind::Circle, HeavisideKind::Erfc, HeavisideKind::Tanh] {
            let h = Heaviside::deterministic(kind, 0.7).unwrap();
            for x in [-3.0, -0.2, 0.0, 0.9, 5.0] {
                let s = h.prob(x) + h.prob(-x);
                assert!((s - 1.0).abs() < 1e-12, "{kind:?} at {x}: {s}");
            }
        }
    }

    #[test]
    fn stochastic_kinds_are_reproducible_and_unbiased() {
        let h = Heaviside::new(HeavisideKind::Log, 2.0, 7).unwrap();
        let ctx = SampleCtx {
            view: 1,
            pixel: 42,
            boundary: 3,
        };
        let a = h.eval(0.3, ctx);
        let b = h.eval(0.3, ctx);
        assert_eq!(a, b);
        assert!(a == 0.0 || a == 1.0);

        // across seeds the mean approaches the deterministic sibling
        let x = 0.3;
        let p = h.prob(x);
        let n = 1000;
        let mut acc = 0.0;
        for seed in 0..n {
            let hs = Heaviside::new(HeavisideKind::Log, 2.0, seed).unwrap();
            acc += hs.eval(x, ctx);
        }
        let mean = acc / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (mean - p).abs() <= 3.0 * sigma,
            "mean {mean} vs p {p} (3σ = {})",
            3.0 * sigma
        );
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for kind in [HeavisideKind::Circle, HeavisideKind::Erfc, HeavisideKind::Tanh] {
            let h = Heaviside::deterministic(kind, 3.0).unwrap();
            for x in [-1.2, -0.1, 0.0, 0.4, 2.0] {
                let eps = 1e-6;
                let fd = (h.prob(x + eps) - h.prob(x - eps)) / (2.0 * eps);
                let an = h.deriv(x);
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                    "{kind:?} at {x}: fd {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn hard_step_convention() {
        assert_eq!(hard_step(0.0), 1.0);
        assert_eq!(hard_step(-1e-300), 0.0);
        assert_eq!(hard_step(3.0), 1.0);
    }
}
