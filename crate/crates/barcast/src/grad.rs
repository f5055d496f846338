//! Analytic reverse pass: d(objective)/d(heights) and d(objective)/d(colors)
//! through the full forward chain, plus a finite-difference verifier.
//!
//! The color sum is linear in the strip colors, so color gradients are exact
//! weight sums. Height gradients flow through the smooth step derivative at
//! each boundary, the cumulative max (which routes each monotone boundary to
//! the first running argmax), and the backtrace (each boundary depends on
//! exactly one strip height), then scatter back to grid cells through the
//! slice's source cells.

use crate::error::{Error, Result};
use crate::field::{
    backtrace_boundaries, cummax_with_argmax, make_camera_rays, CameraRays, FieldGeom,
    Heightfield, ViewSpec,
};
use crate::heaviside::{Heaviside, SampleCtx};
use crate::loss::{
    barrier_grad, barrier_loss, neighbor_grad, neighbor_loss, BackgroundPolicy, LossBreakdown,
    LossConfig,
};
use crate::render::{hard_hit_strip, RenderParams};

/// Gradients with the same layout as the heightfield arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_heights: Vec<f64>,
    pub d_colors: Vec<[f64; 3]>,
}

impl GradientSet {
    pub fn zeros(field: &Heightfield) -> Self {
        let n = field.rows() * field.cols();
        Self {
            d_heights: vec![0.0; n],
            d_colors: vec![[0.0; 3]; n],
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mh = self.d_heights.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        self.d_colors
            .iter()
            .flatten()
            .fold(mh, |a, v| a.max(v.abs()))
    }
}

/// Loss value of the full objective together with its gradients.
pub fn backward(
    field: &Heightfield,
    views: &[ViewSpec],
    spec: &Heaviside,
    cfg: &LossConfig,
    params: &RenderParams,
) -> Result<(LossBreakdown, GradientSet)> {
    backward_probe(field, views, spec, cfg, params, None)
}

/// As [`backward`], optionally accumulating the signed sum of all per-slice
/// 1D height contributions before scatter (used to verify that scatter
/// through source cells neither loses nor duplicates gradient).
pub(crate) fn backward_probe(
    field: &Heightfield,
    views: &[ViewSpec],
    spec: &Heaviside,
    cfg: &LossConfig,
    params: &RenderParams,
    mut scatter_probe: Option<&mut f64>,
) -> Result<(LossBreakdown, GradientSet)> {
    if views.is_empty() {
        return Err(Error::InvalidView("need at least one view".into()));
    }
    let cols = field.cols();
    let mut grads = GradientSet::zeros(field);
    let mut mse_acc = 0.0;
    let mut denom = 0.0;

    // scratch reused across pixels
    let mut g = Vec::<f64>::new();
    let mut g_boundary = Vec::<f64>::new();

    for (v, view) in views.iter().enumerate() {
        let m = view.image_size();
        denom += (m * m) as f64;
        let norm = 1.0; // per-view weight folded in at the end via denom
        let _ = norm;
        let geom = FieldGeom::of(field, params.tiling);
        let rays = make_camera_rays(view.angles, geom, m)?;
        match rays {
            CameraRays::Nadir(pixels) => {
                for (row, col, cell) in pixels {
                    let got = field.color(cell.0, cell.1);
                    let want = view.desired.get(row, col);
                    let mut e = 0.0;
                    for ch in 0..3 {
                        let d = got[ch] - want[ch];
                        e += d * d;
                        grads.d_colors[cell.0 * cols + cell.1][ch] += 2.0 * d / 3.0;
                    }
                    mse_acc += e / 3.0;
                    // heights do not move the nadir image
                }
            }
            CameraRays::Oblique { slope, lines } => {
                for line in &lines {
                    let slice = crate::field::slice_clipped(field, &line.line, params.tiling);
                    if slice.is_empty() {
                        if cfg.background_policy == BackgroundPolicy::Penalize {
                            for pr in &line.rays {
                                let want = view.desired.get(pr.row, pr.col);
                                let mut e = 0.0;
                                for ch in 0..3 {
                                    let d = params.background[ch] - want[ch];
                                    e += d * d;
                                }
                                mse_acc += e / 3.0;
                            }
                        }
                        continue;
                    }
                    let n = slice.n();
                    let y = backtrace_boundaries(&slice, slope)?;
                    let (ym, argmax) = cummax_with_argmax(&y);
                    g_boundary.resize(n + 1, 0.0);
                    for pr in &line.rays {
                        let o_y = pr.ray.intercept;
                        let pix = (pr.row * m + pr.col) as u32;
                        let miss = hard_hit_strip(&ym, o_y).is_none();
                        if miss && cfg.background_policy == BackgroundPolicy::Mask {
                            continue;
                        }
                        // forward values g_j and pixel color (telescoped)
                        g.clear();
                        for (j, yv) in ym.iter().enumerate() {
                            g.push(spec.eval(
                                o_y - yv,
                                SampleCtx {
                                    view: v as u32,
                                    pixel: pix,
                                    boundary: j as u32,
                                },
                            ));
                        }
                        let mut got = [0.0f64; 3];
                        for ch in 0..3 {
                            let mut acc = g[0] * slice.colors1d[0][ch];
                            for j in 1..n {
                                acc += g[j] * (slice.colors1d[j][ch] - slice.colors1d[j - 1][ch]);
                            }
                            acc -= g[n] * slice.colors1d[n - 1][ch];
                            acc += params.background[ch] * (1.0 - (g[0] - g[n]));
                            got[ch] = acc.clamp(0.0, 1.0);
                        }
                        let want = view.desired.get(pr.row, pr.col);
                        let mut rf = [0.0f64; 3];
                        let mut e = 0.0;
                        for ch in 0..3 {
                            let d = got[ch] - want[ch];
                            e += d * d;
                            rf[ch] = 2.0 * d / 3.0;
                        }
                        mse_acc += e / 3.0;
                        if !e.is_finite() {
                            return Err(Error::NonFiniteGradient {
                                view: v,
                                px: pr.row,
                                py: pr.col,
                                strip: 0,
                            });
                        }

                        // color gradients: dI/dc[t] = g[t] - g[t+1]
                        for t in 0..n {
                            let w = g[t] - g[t + 1];
                            if w != 0.0 {
                                let (ci, cj) = slice.source_cells[t];
                                let slot = &mut grads.d_colors[ci * cols + cj];
                                for ch in 0..3 {
                                    slot[ch] += rf[ch] * w;
                                }
                            }
                        }

                        // boundary gradients: dI/dY~[j] = -λ'(o_y - Y~[j]) * coef_j
                        for (j, gb) in g_boundary.iter_mut().enumerate() {
                            let lp = spec.deriv(o_y - ym[j]);
                            if lp == 0.0 {
                                *gb = 0.0;
                                continue;
                            }
                            let mut acc = 0.0;
                            for ch in 0..3 {
                                let coef = if j == 0 {
                                    slice.colors1d[0][ch] - params.background[ch]
                                } else if j == n {
                                    params.background[ch] - slice.colors1d[n - 1][ch]
                                } else {
                                    slice.colors1d[j][ch] - slice.colors1d[j - 1][ch]
                                };
                                acc += rf[ch] * coef;
                            }
                            *gb = -lp * acc;
                            if !gb.is_finite() {
                                return Err(Error::NonFiniteGradient {
                                    view: v,
                                    px: pr.row,
                                    py: pr.col,
                                    strip: j.min(n.saturating_sub(1)),
                                });
                            }
                        }

                        // cummax routing + backtrace ownership + scatter
                        for j in 0..=n {
                            let gb = g_boundary[j];
                            if gb == 0.0 {
                                continue;
                            }
                            let l = argmax[j];
                            let owner = if l == 0 { 0 } else { l - 1 };
                            let (ci, cj) = slice.source_cells[owner];
                            grads.d_heights[ci * cols + cj] += gb;
                            if let Some(probe) = scatter_probe.as_deref_mut() {
                                *probe += gb;
                            }
                        }
                    }
                }
            }
        }
    }

    // finish the image-term normalization: mean over views/pixels with the
    // per-pixel channel mean already applied
    let inv = 1.0 / denom;
    let mse = mse_acc * inv;
    for dh in &mut grads.d_heights {
        *dh *= inv;
    }
    if let Some(probe) = scatter_probe.as_deref_mut() {
        *probe *= inv;
    }
    for dc in &mut grads.d_colors {
        for ch in 0..3 {
            dc[ch] *= inv;
        }
    }

    let mut barrier = 0.0;
    if cfg.barrier_enabled {
        barrier = barrier_loss(field)?;
        let w = cfg.effective_barrier_weight();
        for (dh, gb) in grads.d_heights.iter_mut().zip(barrier_grad(field)?) {
            *dh += w * gb;
        }
    }
    let mut neighbor = 0.0;
    if cfg.neighbor_enabled {
        neighbor = neighbor_loss(field);
        let w = cfg.effective_neighbor_weight();
        for (dh, gn) in grads.d_heights.iter_mut().zip(neighbor_grad(field)) {
            *dh += w * gn;
        }
    }

    for (i, dh) in grads.d_heights.iter().enumerate() {
        if !dh.is_finite() {
            return Err(Error::NonFiniteGradient {
                view: usize::MAX,
                px: i / cols,
                py: i % cols,
                strip: 0,
            });
        }
    }

    let total = mse
        + cfg.effective_barrier_weight() * barrier
        + cfg.effective_neighbor_weight() * neighbor;
    Ok((
        LossBreakdown {
            mse,
            barrier,
            neighbor,
            total,
        },
        grads,
    ))
}

/// Which parameter a probe touched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeCoord {
    Height { row: usize, col: usize },
    Color { row: usize, col: usize, ch: usize },
}

impl std::fmt::Display for ProbeCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProbeCoord::Height { row, col } => write!(f, "h[{row},{col}]"),
            ProbeCoord::Color { row, col, ch } => write!(f, "c[{row},{col}][{ch}]"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradProbe {
    pub coord: ProbeCoord,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Result of a finite-difference check over sampled coordinates.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: Vec<GradProbe>,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub worst: Option<ProbeCoord>,
    pub fd_step_scale: f64,
}

impl GradCheckReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "gradient check: {} probes, fd step scale {}\n",
            self.probes.len(),
            self.fd_step_scale
        ));
        s.push_str(&format!(
            "max relative error:  {:.6e}\nmean relative error: {:.6e}\n",
            self.max_rel_err, self.mean_rel_err
        ));
        if let Some(w) = &self.worst {
            s.push_str(&format!("worst coordinate:    {w}\n"));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("coordinate,analytic,numeric,relative_error\n");
        for p in &self.probes {
            s.push_str(&format!(
                "{},{},{},{}\n",
                p.coord, p.analytic, p.numeric, p.rel_err
            ));
        }
        s
    }
}

/// Absolute disagreement below which a probe counts as exact. Central
/// differences cannot resolve gradients below their own rounding/truncation
/// noise, so tiny absolute deviations on near-zero coordinates are not
/// evidence against the analytic value.
pub const GRAD_CHECK_ABS_FLOOR: f64 = 1e-9;

fn rel_err(a: f64, n: f64) -> f64 {
    if (a - n).abs() <= GRAD_CHECK_ABS_FLOOR {
        0.0
    } else {
        (a - n).abs() / a.abs().max(n.abs())
    }
}

/// Compare analytic gradients against central finite differences on
/// `n_probes` randomly sampled coordinates. Heights step by
/// `fd_step_scale * (h_max - h_min)`, colors by `fd_step_scale`.
pub fn grad_check(
    field: &Heightfield,
    views: &[ViewSpec],
    spec: &Heaviside,
    cfg: &LossConfig,
    params: &RenderParams,
    n_probes: usize,
    fd_step_scale: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    use rand::{Rng, SeedableRng};
    if n_probes == 0 {
        return Err(Error::Config("n_probes must be >= 1".into()));
    }
    let (_, grads) = backward(field, views, spec, cfg, params)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h_step = fd_step_scale * field.h_range();
    let c_step = fd_step_scale;
    let cols = field.cols();

    let mut probes = Vec::with_capacity(n_probes);
    let mut attempts = 0;
    while probes.len() < n_probes && attempts < n_probes * 20 {
        attempts += 1;
        let row = rng.gen_range(0..field.rows());
        let col = rng.gen_range(0..field.cols());
        let pick_height = rng.gen_bool(0.5);
        if pick_height {
            let h = field.height(row, col);
            // stay clear of the barrier domain edge so the central stencil
            // remains finite
            if cfg.barrier_enabled
                && (h - field.h_min() < 2.0 * h_step || field.h_max() - h < 2.0 * h_step)
            {
                continue;
            }
            if h - field.h_min() < h_step || field.h_max() - h < h_step {
                continue;
            }
            let analytic = grads.d_heights[row * cols + col];
            let eval = |hv: f64| -> Result<f64> {
                let mut f2 = field.clone();
                f2.heights_mut()[row * cols + col] = hv;
                Ok(crate::loss::total_loss(&f2, views, spec, cfg, params)?.total)
            };
            let numeric = (eval(h + h_step)? - eval(h - h_step)?) / (2.0 * h_step);
            probes.push(GradProbe {
                coord: ProbeCoord::Height { row, col },
                analytic,
                numeric,
                rel_err: rel_err(analytic, numeric),
            });
        } else {
            let ch = rng.gen_range(0..3);
            let c = field.color(row, col)[ch];
            if !(c_step..=1.0 - c_step).contains(&c) {
                continue;
            }
            let analytic = grads.d_colors[row * cols + col][ch];
            let eval = |cv: f64| -> Result<f64> {
                let mut f2 = field.clone();
                f2.colors_mut()[row * cols + col][ch] = cv;
                Ok(crate::loss::total_loss(&f2, views, spec, cfg, params)?.total)
            };
            let numeric = (eval(c + c_step)? - eval(c - c_step)?) / (2.0 * c_step);
            probes.push(GradProbe {
                coord: ProbeCoord::Color { row, col, ch },
                analytic,
                numeric,
                rel_err: rel_err(analytic, numeric),
            });
        }
    }

    let max_rel_err = probes.iter().fold(0.0f64, |a, p| a.max(p.rel_err));
    let mean_rel_err = if probes.is_empty() {
        0.0
    } else {
        probes.iter().map(|p| p.rel_err).sum::<f64>() / probes.len() as f64
    };
    let worst = probes
        .iter()
        .max_by(|a, b| a.rel_err.partial_cmp(&b.rel_err).unwrap())
        .map(|p| p.coord);
    Ok(GradCheckReport {
        probes,
        max_rel_err,
        mean_rel_err,
        worst,
        fd_step_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ViewAngles;
    use crate::heaviside::HeavisideKind;
    use crate::img::ImageRgb;
    use crate::render::{render_view, RenderParams};
    use rand::{Rng, SeedableRng};

    fn random_field(seed: u64, rows: usize, cols: usize) -> Heightfield {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let heights = (0..rows * cols).map(|_| rng.gen_range(0.2..3.8)).collect();
        let colors = (0..rows * cols)
            .map(|_| [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)])
            .collect();
        Heightfield::from_parts(rows, cols, 1.0, 0.0, 4.0, heights, colors).unwrap()
    }

    fn random_views(seed: u64, m: usize, count: usize) -> Vec<ViewSpec> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let angles = ViewAngles::new(
                    rng.gen_range(25.0..80.0),
                    rng.gen_range(0.0..360.0),
                )
                .unwrap();
                let px = (0..m * m)
                    .map(|_| [rng.gen(), rng.gen(), rng.gen()])
                    .collect();
                ViewSpec::new(angles, ImageRgb::from_pixels(m, m, px).unwrap()).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_gradient_at_global_minimum() {
        let f = Heightfield::uniform(4, 4, 1.0, 0.0, 4.0, 1.5, [0.4, 0.5, 0.6]).unwrap();
        let spec = Heaviside::deterministic(HeavisideKind::Tanh, 10.0).unwrap();
        let params = RenderParams::new(8);
        // two views whose desired images equal the smooth render itself
        let mut views = Vec::new();
        for (i, (e, a)) in [(45.0, 0.0), (45.0, 180.0)].iter().enumerate() {
            let angles = ViewAngles::new(*e, *a).unwrap();
            let out = render_view(&f, angles, &spec, i as u32, &params).unwrap();
            views.push(ViewSpec::new(angles, out.image).unwrap());
        }
        let (lb, g) = backward(&f, &views, &spec, &LossConfig::none(), &params).unwrap();
        assert!(lb.total < 1e-24);
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn color_gradient_of_hit_bar_matches_closed_form() {
        // sharp step: one-hot weights; the hit bar's color gradient is
        // 2(I-D)/(3 m^2 |CAM|) per channel, everything else ~0
        let f = random_field(5, 4, 4);
        let spec = Heaviside::deterministic(HeavisideKind::Tanh, 1e6).unwrap();
        let m = 8;
        let params = RenderParams::new(m);
        let angles = ViewAngles::new(50.0, 0.0).unwrap();
        let hard = crate::render::render_hard(&f, angles, &params, None).unwrap();
        // desired: all mid-gray
        let view = ViewSpec::new(angles, ImageRgb::new(m, m, [0.5; 3])).unwrap();
        let (_, g) = backward(&f, &[view.clone()], &spec, &LossConfig::none(), &params).unwrap();

        // pick a pixel whose ray hits a bar squarely (top hit)
        let p = hard
            .hits
            .iter()
            .position(|h| h.map(|h| h.top).unwrap_or(false))
            .unwrap();
        let hit = hard.hits[p].unwrap();
        let i = hit.cell.0 * f.cols() + hit.cell.1;
        let rendered = hard.image.pixels[p];
        let want = view.desired.pixels[p];
        let norm = 1.0 / (m * m) as f64;
        for ch in 0..3 {
            let expect = 2.0 * (rendered[ch] - want[ch]) / 3.0 * norm;
            // the bar may be hit by several pixels; gradient is a sum, so
            // verify the single-pixel formula against a bar hit exactly once
            let hits_on_bar = hard
                .hits
                .iter()
                .filter(|h| h.map(|h| h.cell == hit.cell).unwrap_or(false))
                .count();
            if hits_on_bar == 1 {
                assert!(
                    (g.d_colors[i][ch] - expect).abs() < 1e-9,
                    "ch {ch}: {} vs {expect}",
                    g.d_colors[i][ch]
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec = Heaviside::deterministic(HeavisideKind::Tanh, 10.0).unwrap();
        let params = RenderParams::new(16);
        for seed in 0..3 {
            let f = random_field(seed, 8, 8);
            let views = random_views(seed + 100, 16, 2);
            let report = grad_check(
                &f,
                &views,
                &spec,
                &LossConfig::default(),
                &params,
                60,
                1e-4,
                seed,
            )
            .unwrap();
            assert!(
                report.max_rel_err <= 1e-3,
                "seed {seed}: max rel err {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn erfc_and_circle_kinds_pass_fd_check() {
        let params = RenderParams::new(12);
        let f = random_field(11, 6, 6);
        let views = random_views(12, 12, 2);
        for kind in [HeavisideKind::Erfc, HeavisideKind::Circle] {
            let spec = Heaviside::deterministic(kind, 8.0).unwrap();
            let report = grad_check(
                &f,
                &views,
                &spec,
                &LossConfig::none(),
                &params,
                40,
                1e-4,
                7,
            )
            .unwrap();
            assert!(
                report.max_rel_err <= 1e-3,
                "{kind:?}: max rel err {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn color_gradients_are_quadratic_exact() {
        // for fixed heights the loss is quadratic in colors; FD matches to
        // near machine precision
        let f = random_field(21, 6, 6);
        let views = random_views(22, 12, 2);
        let spec = Heaviside::deterministic(HeavisideKind::Tanh, 10.0).unwrap();
        let params = RenderParams::new(12);
        let (_, g) = backward(&f, &views, &spec, &LossConfig::none(), &params).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let row = rng.gen_range(0..6);
            let col = rng.gen_range(0..6);
            let ch = rng.gen_range(0..3);
            let c = f.color(row, col)[ch];
            let step = 1e-3;
            if !(step..=1.0 - step).contains(&c) {
                continue;
            }
            let eval = |cv: f64| {
                let mut f2 = f.clone();
                f2.colors_mut()[row * 6 + col][ch] = cv;
                crate::loss::total_loss(&f2, &views, &spec, &LossConfig::none(), &params)
                    .unwrap()
                    .total
            };
            let numeric = (eval(c + step) - eval(c - step)) / (2.0 * step);
            let analytic = g.d_colors[row * 6 + col][ch];
            assert!(
                rel_err(analytic, numeric) < 1e-8,
                "c[{row},{col}][{ch}]: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn scatter_conserves_gradient_mass() {
        let f = random_field(31, 8, 8);
        let views = random_views(32, 16, 2);
        let spec = Heaviside::deterministic(HeavisideKind::Tanh, 10.0).unwrap();
        let params = RenderParams::new(16);
        let mut probe = 0.0;
        let (_, g) = backward_probe(
            &f,
            &views,
            &spec,
            &LossConfig::none(),
            &params,
            Some(&mut probe),
        )
        .unwrap();
        let scattered: f64 = g.d_heights.iter().sum();
        assert!(
            (scattered - probe).abs() <= 1e-12 * probe.abs().max(1e-6),
            "scattered {scattered} vs slice total {probe}"
        );
    }

    #[test]
    fn grad_check_reports_zero_at_flat_minimum() {
        // nadir view whose target equals the render: loss is exactly zero,
        // heights have no effect at all and the color residuals vanish, so
        // both analytic and numeric gradients are identically zero
        let f = Heightfield::uniform(4, 4, 1.0, 0.0, 4.0, 2.0, [0.5; 3]).unwrap();
        let spec = Heaviside::deterministic(HeavisideKind::Tanh, 10.0).unwrap();
        let params = RenderParams::new(8);
        let angles = ViewAngles::new(90.0, 0.0).unwrap();
        let out = render_view(&f, angles, &spec, 0, &params).unwrap();
        let views = vec![ViewSpec::new(angles, out.image).unwrap()];
        let report = grad_check(
            &f,
            &views,
            &spec,
            &LossConfig::none(),
            &params,
            20,
            1e-4,
            3,
        )
        .unwrap();
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn backward_loss_matches_forward_total_loss() {
        let f = random_field(41, 6, 6);
        let views = random_views(42, 12, 2);
        let spec = Heaviside::deterministic(HeavisideKind::Tanh, 20.0).unwrap();
        let params = RenderParams::new(12);
        let cfg = LossConfig::default();
        let (lb, _) = backward(&f, &views, &spec, &cfg, &params).unwrap();
        let fw = crate::loss::total_loss(&f, &views, &spec, &cfg, &params).unwrap();
        assert!((lb.total - fw.total).abs() < 1e-12);
        assert!((lb.mse - fw.mse).abs() < 1e-12);
    }
}
