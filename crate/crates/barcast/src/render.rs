//! Forward rendering of heightfields.
//!
//! Two flavors share one pipeline (camera rays -> slice -> backtraced
//! boundaries -> cumulative max -> per-pixel color):
//!
//! - [`render_view`]: the differentiable forward pass, using a smooth (or
//!   stochastic) Heaviside surrogate for the visibility step.
//! - [`render_hard`]: the exact-step specialization, used as the correctness
//!   reference and for final previews. It resolves per-pixel hit metadata
//!   (which bar, at what height, top or side face) and can color bars with
//!   per-bar vertical color segments produced by post-optimization
//!   projection.
//!
//! The per-pixel color formula is evaluated in its telescoped form: for
//! monotone boundaries `Y[0..=n]` and strip colors `c[0..n]`,
//!
//! ```text
//! color = sum_j g(o_y - Y[j]) * dc[j] + bg * (1 - g(o_y - Y[0]) + g(o_y - Y[n]))
//! dc[0] = c[0],  dc[j] = c[j] - c[j-1],  dc[n] = -c[n-1]
//! ```
//!
//! which is algebraically identical to the per-strip product form but makes
//! boundaries between equal-colored strips contribute exactly zero. That
//! exactness is what keeps renders bit-identical across coarse-to-fine
//! subdivision.

use crate::error::{Error, Result};
use crate::field::{
    backtrace_boundaries, cummax_with_argmax, make_camera_rays, CameraRays, FieldGeom,
    Heightfield, Ray2D, SliceCrossSection, ViewAngles,
};
use crate::heaviside::{Heaviside, SampleCtx};
use crate::img::ImageRgb;
use serde::{Deserialize, Serialize};

/// Per-pixel hit metadata from the exact visibility criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    /// Grid cell of the struck bar (already reduced modulo the base grid
    /// when tiling).
    pub cell: (usize, usize),
    /// Strip index within the pixel's slice.
    pub strip: usize,
    /// Height of the hit point in millimeters.
    pub z: f64,
    /// True for a top-face hit, false for a side-wall hit.
    pub top: bool,
}

/// Rendered image plus hit metadata. `hits[p]` is `None` exactly where
/// `miss_mask` is true.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: ImageRgb,
    pub hits: Vec<Option<PixelHit>>,
}

impl RenderOutput {
    pub fn miss_mask(&self) -> Vec<bool> {
        self.hits.iter().map(|h| h.is_none()).collect()
    }

    pub fn miss_count(&self) -> usize {
        self.hits.iter().filter(|h| h.is_none()).count()
    }
}

/// Optional per-bar vertical color segments (from post-optimization
/// projection). Segment `s` of bar `(i, j)` colors the height band
/// `[s*h/S, (s+1)*h/S)` of that bar's side walls; the top face takes the
/// last segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedColors {
    pub rows: usize,
    pub cols: usize,
    pub segments_per_bar: usize,
    /// Row-major by cell, then segment index from the bottom up.
    pub colors: Vec<[f64; 3]>,
}

impl SegmentedColors {
    pub fn new(rows: usize, cols: usize, segments_per_bar: usize) -> Self {
        Self {
            rows,
            cols,
            segments_per_bar,
            colors: vec![[0.0; 3]; rows * cols * segments_per_bar],
        }
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, seg: usize) -> usize {
        (row * self.cols + col) * self.segments_per_bar + seg
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, seg: usize) -> [f64; 3] {
        self.colors[self.idx(row, col, seg)]
    }

    /// Segment index for a hit at height `z` on a bar of height `h`.
    pub fn segment_of_hit(&self, z: f64, h: f64, top: bool) -> usize {
        if top || h <= 0.0 {
            return self.segments_per_bar - 1;
        }
        let s = (z / h * self.segments_per_bar as f64).floor() as isize;
        s.clamp(0, self.segments_per_bar as isize - 1) as usize
    }
}

/// Rendering parameters shared by the smooth and hard paths.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RenderParams {
    pub image_size: usize,
    /// Periodic repetition factor (1 = no tiling).
    pub tiling: usize,
    /// Color rays take when they cross the footprint without hitting a bar.
    pub background: [f64; 3],
    /// 1 during optimization; 4 gives 4x4 stratified rays/pixel for final
    /// hard previews.
    pub samples_per_axis: usize,
}

impl RenderParams {
    pub fn new(image_size: usize) -> Self {
        Self {
            image_size,
            tiling: 1,
            background: [0.0; 3],
            samples_per_axis: 1,
        }
    }

    pub fn with_tiling(mut self, tiling: usize) -> Self {
        self.tiling = tiling.max(1);
        self
    }

    pub fn with_background(mut self, bg: [f64; 3]) -> Self {
        self.background = bg;
        self
    }

    pub fn with_samples(mut self, samples_per_axis: usize) -> Self {
        self.samples_per_axis = samples_per_axis.max(1);
        self
    }
}

/// The smooth step used per boundary index (stochastic kinds sample a
/// counter-based stream keyed by view/pixel/boundary).
enum StepMode<'a> {
    Smooth { spec: &'a Heaviside, view: u32 },
    Hard,
}

/// Exact-step hit lookup: index `t` with `ym[t] <= o_y < ym[t+1]`, or None.
#[inline]
pub fn hard_hit_strip(ym: &[f64], o_y: f64) -> Option<usize> {
    if ym.is_empty() {
        return None;
    }
    let c = ym.partition_point(|v| *v <= o_y);
    if c == 0 || c == ym.len() {
        None
    } else {
        Some(c - 1)
    }
}

/// Physical hit point for a ray known to hit strip `t` of a slice.
#[inline]
pub fn hit_point(slice: &SliceCrossSection, ray: Ray2D, t: usize) -> (f64, bool) {
    let z_near = ray.intercept + ray.slope * slice.cum_widths[t];
    let h = slice.heights1d[t];
    if z_near < h {
        (z_near.max(0.0), false)
    } else {
        (h, true)
    }
}

/// Per-strip product form of the color sum (Eq. 5 layout): each strip
/// contributes `c_t * (g(o_y - Y[t]) - g(o_y - Y[t+1]))`. Used as the
/// algebraic cross-check of the telescoped form.
pub fn pixel_color_product<F>(
    colors: &[[f64; 3]],
    ym: &[f64],
    o_y: f64,
    background: [f64; 3],
    step: F,
) -> [f64; 3]
where
    F: Fn(f64, usize) -> f64,
{
    let n = colors.len();
    if n == 0 {
        return background;
    }
    debug_assert_eq!(ym.len(), n + 1);
    let mut out = [0.0; 3];
    let g0 = step(o_y - ym[0], 0);
    let gn = step(o_y - ym[n], n);
    let mut g_prev = g0;
    for t in 0..n {
        let g_next = if t + 1 == n {
            gn
        } else {
            step(o_y - ym[t + 1], t + 1)
        };
        let w = g_prev - g_next;
        for ch in 0..3 {
            out[ch] += colors[t][ch] * w;
        }
        g_prev = g_next;
    }
    let bg_w = 1.0 - (g0 - gn);
    for ch in 0..3 {
        out[ch] += background[ch] * bg_w;
    }
    out
}

/// Telescoped form of the color sum (Eq. 6 layout); the canonical
/// evaluation path.
pub fn pixel_color<F>(
    colors: &[[f64; 3]],
    ym: &[f64],
    o_y: f64,
    background: [f64; 3],
    step: F,
) -> [f64; 3]
where
    F: Fn(f64, usize) -> f64,
{
    let n = colors.len();
    if n == 0 {
        return background;
    }
    debug_assert_eq!(ym.len(), n + 1);
    let g0 = step(o_y - ym[0], 0);
    let mut out = [
        g0 * colors[0][0],
        g0 * colors[0][1],
        g0 * colors[0][2],
    ];
    for j in 1..n {
        let gj = step(o_y - ym[j], j);
        for ch in 0..3 {
            out[ch] += gj * (colors[j][ch] - colors[j - 1][ch]);
        }
    }
    let gn = step(o_y - ym[n], n);
    for ch in 0..3 {
        out[ch] -= gn * colors[n - 1][ch];
    }
    let bg_w = 1.0 - (g0 - gn);
    for ch in 0..3 {
        out[ch] += background[ch] * bg_w;
    }
    out
}

/// Differentiable forward render with a smooth (or stochastic) Heaviside.
///
/// `view_index` keys the stochastic sample streams; it is ignored by the
/// deterministic kinds.
pub fn render_view(
    field: &Heightfield,
    angles: ViewAngles,
    spec: &Heaviside,
    view_index: u32,
    params: &RenderParams,
) -> Result<RenderOutput> {
    render_impl(field, angles, params, StepMode::Smooth { spec, view: view_index }, None)
}

/// Exact-step render. Fills hit metadata and optionally colors bars with
/// vertical segments.
pub fn render_hard(
    field: &Heightfield,
    angles: ViewAngles,
    params: &RenderParams,
    segments: Option<&SegmentedColors>,
) -> Result<RenderOutput> {
    render_impl(field, angles, params, StepMode::Hard, segments)
}

fn render_impl(
    field: &Heightfield,
    angles: ViewAngles,
    params: &RenderParams,
    mode: StepMode<'_>,
    segments: Option<&SegmentedColors>,
) -> Result<RenderOutput> {
    if let Some(seg) = segments {
        if seg.rows != field.rows() || seg.cols != field.cols() {
            return Err(Error::ShapeMismatch(format!(
                "segments shape {}x{} vs field {}x{}",
                seg.rows,
                seg.cols,
                field.rows(),
                field.cols()
            )));
        }
    }
    let m = params.image_size;
    if m == 0 {
        return Err(Error::InvalidView("image size must be positive".into()));
    }
    let ss = params.samples_per_axis.max(1);
    let fine = m * ss;
    let geom = FieldGeom::of(field, params.tiling);
    let rays = make_camera_rays(angles, geom, fine)?;
    let inv_w = 1.0 / (ss * ss) as f64;

    let mut image = ImageRgb::new(m, m, [0.0; 3]);
    let mut hits: Vec<Option<PixelHit>> = vec![None; m * m];

    let mut put = |row: usize, col: usize, rgb: [f64; 3], hit: Option<PixelHit>| {
        let (cr, cc) = (row / ss, col / ss);
        let i = cr * m + cc;
        let px = &mut image.pixels[i];
        for ch in 0..3 {
            px[ch] += rgb[ch] * inv_w;
        }
        if row % ss == 0 && col % ss == 0 {
            hits[i] = hit;
        }
    };

    match rays {
        CameraRays::Nadir(pixels) => {
            for (row, col, cell) in pixels {
                let h = field.height(cell.0, cell.1);
                let color = match segments {
                    Some(seg) => seg.get(cell.0, cell.1, seg.segments_per_bar - 1),
                    None => field.color(cell.0, cell.1),
                };
                put(
                    row,
                    col,
                    color,
                    Some(PixelHit {
                        cell,
                        strip: 0,
                        z: h,
                        top: true,
                    }),
                );
            }
        }
        CameraRays::Oblique { slope, lines } => {
            for line in &lines {
                let slice = crate::field::slice_clipped(field, &line.line, params.tiling);
                if slice.is_empty() {
                    for pr in &line.rays {
                        put(pr.row, pr.col, params.background, None);
                    }
                    continue;
                }
                let y = backtrace_boundaries(&slice, slope)?;
                let (ym, _) = cummax_with_argmax(&y);
                for pr in &line.rays {
                    let o_y = pr.ray.intercept;
                    let hit = hard_hit_strip(&ym, o_y).map(|t| {
                        let (z, top) = hit_point(&slice, pr.ray, t);
                        PixelHit {
                            cell: slice.source_cells[t],
                            strip: t,
                            z,
                            top,
                        }
                    });
                    let rgb = match (&mode, &hit) {
                        (StepMode::Hard, Some(h)) => match segments {
                            Some(seg) => {
                                let bar_h = field.height(h.cell.0, h.cell.1);
                                seg.get(h.cell.0, h.cell.1, seg.segment_of_hit(h.z, bar_h, h.top))
                            }
                            None => slice.colors1d[h.strip],
                        },
                        (StepMode::Hard, None) => params.background,
                        (StepMode::Smooth { spec, view }, _) => {
                            let pix = (pr.row * fine + pr.col) as u32;
                            let c = pixel_color(
                                &slice.colors1d,
                                &ym,
                                o_y,
                                params.background,
                                |x, j| {
                                    spec.eval(
                                        x,
                                        SampleCtx {
                                            view: *view,
                                            pixel: pix,
                                            boundary: j as u32,
                                        },
                                    )
                                },
                            );
                            [
                                c[0].clamp(0.0, 1.0),
                                c[1].clamp(0.0, 1.0),
                                c[2].clamp(0.0, 1.0),
                            ]
                        }
                    };
                    put(pr.row, pr.col, rgb, hit);
                }
            }
        }
    }
    Ok(RenderOutput { image, hits })
}
