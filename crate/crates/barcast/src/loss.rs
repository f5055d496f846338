//! The optimization objective: per-view MSE plus optional barrier and
//! neighbor regularizers.
//!
//! The image term averages squared differences over views, pixels and
//! channels (each pixel contributes the mean of its three channel errors,
//! and the total is normalized by `m^2 * |views|`), so it lies in [0, 1] for
//! in-range images. The barrier term is a log barrier on heights normalized
//! to the `[h_min, h_max]` range; the neighbor term penalizes absolute
//! height differences between 4-neighbors (each pair counted once), with
//! `|x|` smoothed as `sqrt(x^2 + eps^2)` for differentiability at zero.

use crate::error::{Error, Result};
use crate::field::{Heightfield, ViewSpec};
use crate::heaviside::Heaviside;
use crate::img::ImageRgb;
use crate::render::{render_view, RenderOutput, RenderParams};
use serde::{Deserialize, Serialize};

/// Smoothing epsilon for the absolute value in the neighbor term.
pub const NEIGHBOR_ABS_EPS: f64 = 1e-6;

/// How rays that miss every bar enter the image loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundPolicy {
    /// Miss pixels render as the background color and are penalized like any
    /// other pixel. This is the raw color-sum semantics of the forward
    /// model and the default.
    #[default]
    Penalize,
    /// Miss pixels are excluded from the loss (contribute zero); the
    /// normalization stays `m^2 * |views|`.
    Mask,
}

/// Objective configuration: regularizer toggles and weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub barrier_enabled: bool,
    pub barrier_weight: f64,
    pub neighbor_enabled: bool,
    pub neighbor_weight: f64,
    pub background_policy: BackgroundPolicy,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            barrier_enabled: true,
            barrier_weight: 1e-3,
            neighbor_enabled: true,
            neighbor_weight: 1e-2,
            background_policy: BackgroundPolicy::Penalize,
        }
    }
}

impl LossConfig {
    /// MSE only, no regularization.
    pub fn none() -> Self {
        Self {
            barrier_enabled: false,
            neighbor_enabled: false,
            ..Self::default()
        }
    }

    pub fn barrier_only() -> Self {
        Self {
            neighbor_enabled: false,
            ..Self::default()
        }
    }

    pub fn smoothing_only() -> Self {
        Self {
            barrier_enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.barrier_weight < 0.0 || self.neighbor_weight < 0.0 {
            return Err(Error::Config(format!(
                "regularizer weights must be >= 0, got barrier={} neighbor={}",
                self.barrier_weight, self.neighbor_weight
            )));
        }
        Ok(())
    }

    pub fn effective_barrier_weight(&self) -> f64 {
        if self.barrier_enabled {
            self.barrier_weight
        } else {
            0.0
        }
    }

    pub fn effective_neighbor_weight(&self) -> f64 {
        if self.neighbor_enabled {
            self.neighbor_weight
        } else {
            0.0
        }
    }
}

/// Individual terms of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub barrier: f64,
    pub neighbor: f64,
    pub total: f64,
}

/// Pixel-wise MSE between rendered and desired image sets.
///
/// `rendered[v]` must match `desired[v]` in shape; miss pixels are excluded
/// under [`BackgroundPolicy::Mask`]. Normalization is `1 / (m^2 * |views|)`
/// with a per-pixel channel mean.
pub fn mse_loss(
    rendered: &[&RenderOutput],
    desired: &[&ImageRgb],
    policy: BackgroundPolicy,
) -> Result<f64> {
    if rendered.len() != desired.len() || rendered.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} rendered views vs {} desired",
            rendered.len(),
            desired.len()
        )));
    }
    let mut acc = 0.0;
    let mut denom = 0.0;
    for (out, want) in rendered.iter().zip(desired) {
        if out.image.width != want.width || out.image.height != want.height {
            return Err(Error::ShapeMismatch(format!(
                "rendered {}x{} vs desired {}x{}",
                out.image.width, out.image.height, want.width, want.height
            )));
        }
        denom += (want.width * want.height) as f64;
        for (p, (got, want_px)) in out.image.pixels.iter().zip(&want.pixels).enumerate() {
            if policy == BackgroundPolicy::Mask && out.hits[p].is_none() {
                continue;
            }
            let mut e = 0.0;
            for ch in 0..3 {
                let d = got[ch] - want_px[ch];
                e += d * d;
            }
            acc += e / 3.0;
        }
    }
    Ok(acc / denom)
}

/// Log barrier keeping heights strictly inside `(h_min, h_max)`, evaluated
/// on heights normalized by the range:
/// `-sum_i [ log(1 - u_i) + log(u_i) ]` with `u_i = (h_i - h_min) / (h_max - h_min)`.
pub fn barrier_loss(field: &Heightfield) -> Result<f64> {
    let range = field.h_range();
    let mut acc = 0.0;
    for (n, &h) in field.heights().iter().enumerate() {
        let u = (h - field.h_min()) / range;
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::BarrierViolation {
                row: n / field.cols(),
                col: n % field.cols(),
                height: h,
                h_min: field.h_min(),
                h_max: field.h_max(),
            });
        }
        acc -= (1.0 - u).ln() + u.ln();
    }
    Ok(acc)
}

/// Gradient of [`barrier_loss`] with respect to each height (same layout as
/// `field.heights()`).
pub fn barrier_grad(field: &Heightfield) -> Result<Vec<f64>> {
    let range = field.h_range();
    let mut g = vec![0.0; field.heights().len()];
    for (n, &h) in field.heights().iter().enumerate() {
        let u = (h - field.h_min()) / range;
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::BarrierViolation {
                row: n / field.cols(),
                col: n % field.cols(),
                height: h,
                h_min: field.h_min(),
                h_max: field.h_max(),
            });
        }
        g[n] = (1.0 / (1.0 - u) - 1.0 / u) / range;
    }
    Ok(g)
}

#[inline]
fn smooth_abs(x: f64) -> f64 {
    (x * x + NEIGHBOR_ABS_EPS * NEIGHBOR_ABS_EPS).sqrt()
}

#[inline]
fn smooth_abs_deriv(x: f64) -> f64 {
    x / (x * x + NEIGHBOR_ABS_EPS * NEIGHBOR_ABS_EPS).sqrt()
}

/// Sum of smoothed absolute height differences over 4-neighbor pairs, each
/// pair counted once, on range-normalized heights.
pub fn neighbor_loss(field: &Heightfield) -> f64 {
    let (rows, cols) = (field.rows(), field.cols());
    let inv = 1.0 / field.h_range();
    let mut acc = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let h = field.height(i, j) * inv;
            if j + 1 < cols {
                acc += smooth_abs(h - field.height(i, j + 1) * inv);
            }
            if i + 1 < rows {
                acc += smooth_abs(h - field.height(i + 1, j) * inv);
            }
        }
    }
    acc
}

/// Gradient of [`neighbor_loss`] with respect to each height.
pub fn neighbor_grad(field: &Heightfield) -> Vec<f64> {
    let (rows, cols) = (field.rows(), field.cols());
    let inv = 1.0 / field.h_range();
    let mut g = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let h = field.height(i, j) * inv;
            if j + 1 < cols {
                let d = smooth_abs_deriv(h - field.height(i, j + 1) * inv) * inv;
                g[i * cols + j] += d;
                g[i * cols + j + 1] -= d;
            }
            if i + 1 < rows {
                let d = smooth_abs_deriv(h - field.height(i + 1, j) * inv) * inv;
                g[i * cols + j] += d;
                g[(i + 1) * cols + j] -= d;
            }
        }
    }
    g
}

/// Forward-only evaluation of the full objective. The smooth forward render
/// is used for the image term; the same path the gradients differentiate.
pub fn total_loss(
    field: &Heightfield,
    views: &[ViewSpec],
    spec: &Heaviside,
    cfg: &LossConfig,
    params: &RenderParams,
) -> Result<LossBreakdown> {
    if views.is_empty() {
        return Err(Error::InvalidView("need at least one view".into()));
    }
    let mut rendered = Vec::with_capacity(views.len());
    for (v, view) in views.iter().enumerate() {
        let p = RenderParams {
            image_size: view.image_size(),
            ..*params
        };
        rendered.push(render_view(field, view.angles, spec, v as u32, &p)?);
    }
    let refs: Vec<&RenderOutput> = rendered.iter().collect();
    let desired: Vec<&ImageRgb> = views.iter().map(|v| &v.desired).collect();
    let mse = mse_loss(&refs, &desired, cfg.background_policy)?;
    let barrier = if cfg.barrier_enabled {
        barrier_loss(field)?
    } else {
        0.0
    };
    let neighbor = if cfg.neighbor_enabled {
        neighbor_loss(field)
    } else {
        0.0
    };
    let total = mse
        + cfg.effective_barrier_weight() * barrier
        + cfg.effective_neighbor_weight() * neighbor;
    Ok(LossBreakdown {
        mse,
        barrier,
        neighbor,
        total,
    })
}
