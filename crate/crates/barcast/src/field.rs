//! Heightfield data model and the reduction of 3D camera rays to 2D slice
//! rays.
//!
//! The heightfield is a `rows x cols` grid of square-footprint bars sitting
//! on the ground plane `z = 0`. Bar `(i, j)` occupies
//! `x in [j*w, (j+1)*w]`, `y in [i*w, (i+1)*w]`, `z in [0, heights[i,j]]`
//! with `w = strip_width`. Cameras are orthographic: a view is a single unit
//! direction vector pointing from the camera toward the surface. One ray is
//! traced per pixel, from an evenly spaced grid of points on the ground
//! plane backwards along the view direction; pixel `(row, col)` of an `m x m`
//! image maps to the ground point `x = (row+0.5)*Lx/m`, `y = (col+0.5)*Ly/m`.
//!
//! For rendering, each ray is reduced to 2D: its ground projection is a line
//! that crosses a sequence of grid cells (the slice), and within the vertical
//! plane over that line the ray is `z(s) = intercept + slope * s`, where `s`
//! is arc length measured from the point where the line enters the footprint.

use crate::error::{Error, Result};
use crate::img::ImageRgb;
use serde::{Deserialize, Serialize};

/// Grid of square-footprint colored bars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heightfield {
    rows: usize,
    cols: usize,
    #[serde(rename = "strip_width_mm")]
    strip_width: f64,
    h_min: f64,
    h_max: f64,
    heights: Vec<f64>,
    colors: Vec<[f64; 3]>,
}

impl Heightfield {
    /// Uniform field: all bars at `height`, all colored `color`.
    pub fn uniform(
        rows: usize,
        cols: usize,
        strip_width: f64,
        h_min: f64,
        h_max: f64,
        height: f64,
        color: [f64; 3],
    ) -> Result<Self> {
        let f = Self {
            rows,
            cols,
            strip_width,
            h_min,
            h_max,
            heights: vec![height; rows * cols],
            colors: vec![color; rows * cols],
        };
        f.validate()?;
        Ok(f)
    }

    pub fn from_parts(
        rows: usize,
        cols: usize,
        strip_width: f64,
        h_min: f64,
        h_max: f64,
        heights: Vec<f64>,
        colors: Vec<[f64; 3]>,
    ) -> Result<Self> {
        if heights.len() != rows * cols || colors.len() != rows * cols {
            return Err(Error::InvalidField(format!(
                "expected {} entries, got {} heights / {} colors",
                rows * cols,
                heights.len(),
                colors.len()
            )));
        }
        let f = Self {
            rows,
            cols,
            strip_width,
            h_min,
            h_max,
            heights,
            colors,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.rows == 0 || self.cols == 0 {
            problems.push("rows and cols must be >= 1".to_string());
        }
        if !(self.strip_width > 0.0) {
            problems.push(format!("strip_width must be > 0, got {}", self.strip_width));
        }
        if !(self.h_min >= 0.0 && self.h_min < self.h_max) {
            problems.push(format!(
                "need 0 <= h_min < h_max, got h_min={} h_max={}",
                self.h_min, self.h_max
            ));
        }
        for (n, &h) in self.heights.iter().enumerate() {
            if !(h >= self.h_min && h <= self.h_max) || !h.is_finite() {
                problems.push(format!(
                    "height[{},{}]={} outside [{}, {}]",
                    n / self.cols,
                    n % self.cols,
                    h,
                    self.h_min,
                    self.h_max
                ));
                break;
            }
        }
        for (n, c) in self.colors.iter().enumerate() {
            if c.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) {
                problems.push(format!(
                    "color[{},{}]={:?} outside [0,1]",
                    n / self.cols,
                    n % self.cols,
                    c
                ));
                break;
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidField(problems.join("; ")))
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn strip_width(&self) -> f64 {
        self.strip_width
    }
    pub fn h_min(&self) -> f64 {
        self.h_min
    }
    pub fn h_max(&self) -> f64 {
        self.h_max
    }
    pub fn h_range(&self) -> f64 {
        self.h_max - self.h_min
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.rows && col < self.cols);
        row * self.cols + col
    }

    #[inline]
    pub fn height(&self, row: usize, col: usize) -> f64 {
        self.heights[row * self.cols + col]
    }

    #[inline]
    pub fn color(&self, row: usize, col: usize) -> [f64; 3] {
        self.colors[row * self.cols + col]
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }
    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }
    pub fn heights_mut(&mut self) -> &mut [f64] {
        &mut self.heights
    }
    pub fn colors_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.colors
    }

    /// Clamp all heights into `(h_min + margin, h_max - margin)` and colors
    /// into `[0, 1]`.
    pub fn clamp_feasible(&mut self, margin: f64) {
        let lo = self.h_min + margin;
        let hi = self.h_max - margin;
        for h in &mut self.heights {
            *h = h.clamp(lo, hi);
        }
        for c in &mut self.colors {
            for v in c.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }

    /// Double the resolution in both axes: each bar becomes a 2x2 block of
    /// bars with the same height and color, and the strip width halves so the
    /// physical footprint is preserved.
    pub fn subdivide(&self) -> Heightfield {
        let rows = self.rows * 2;
        let cols = self.cols * 2;
        let mut heights = vec![0.0; rows * cols];
        let mut colors = vec![[0.0; 3]; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                let src = (i / 2) * self.cols + j / 2;
                heights[i * cols + j] = self.heights[src];
                colors[i * cols + j] = self.colors[src];
            }
        }
        Heightfield {
            rows,
            cols,
            strip_width: self.strip_width * 0.5,
            h_min: self.h_min,
            h_max: self.h_max,
            heights,
            colors,
        }
    }

    /// Physical footprint extents in millimeters (x spans cols, y spans rows).
    pub fn extent(&self) -> (f64, f64) {
        (
            self.cols as f64 * self.strip_width,
            self.rows as f64 * self.strip_width,
        )
    }
}

/// Orthographic viewing direction given as elevation/azimuth in degrees.
///
/// Elevation 90 looks straight down; azimuth is measured in the ground plane
/// from +x toward +y and gives the compass direction the camera sits at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewAngles {
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
}

impl ViewAngles {
    pub fn new(elevation_deg: f64, azimuth_deg: f64) -> Result<Self> {
        let v = Self {
            elevation_deg,
            azimuth_deg,
        };
        v.direction()?;
        Ok(v)
    }

    /// Unit vector pointing from the camera toward the surface.
    pub fn direction(&self) -> Result<[f64; 3]> {
        direction_from_angles(self.elevation_deg, self.azimuth_deg)
    }

    pub fn is_nadir(&self) -> bool {
        self.elevation_deg == 90.0
    }
}

/// One viewing direction together with its desired appearance image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub angles: ViewAngles,
    pub desired: ImageRgb,
}

impl ViewSpec {
    pub fn new(angles: ViewAngles, desired: ImageRgb) -> Result<Self> {
        if !desired.is_square() {
            return Err(Error::InvalidView(format!(
                "desired image must be square, got {}x{}",
                desired.width, desired.height
            )));
        }
        Ok(Self { angles, desired })
    }

    pub fn image_size(&self) -> usize {
        self.desired.width
    }
}

/// Unit direction from the camera toward the surface:
/// `-(cos e cos a, cos e sin a, sin e)` for elevation `e`, azimuth `a`.
pub fn direction_from_angles(elevation_deg: f64, azimuth_deg: f64) -> Result<[f64; 3]> {
    if !(elevation_deg > 0.0 && elevation_deg <= 90.0) {
        return Err(Error::InvalidView(format!(
            "elevation must be in (0, 90], got {elevation_deg}"
        )));
    }
    if !(0.0..360.0).contains(&azimuth_deg) {
        return Err(Error::InvalidView(format!(
            "azimuth must be in [0, 360), got {azimuth_deg}"
        )));
    }
    let e = elevation_deg.to_radians();
    let a = azimuth_deg.to_radians();
    Ok([-(e.cos() * a.cos()), -(e.cos() * a.sin()), -e.sin()])
}

/// Projected camera ray within a slice plane: `z(s) = intercept + slope*s`
/// with `s` the arc-length slice coordinate. Slope is negative for any
/// elevation below 90 (the ray descends while advancing along the slice).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray2D {
    pub slope: f64,
    pub intercept: f64,
}

impl Ray2D {
    pub fn new(slope: f64, intercept: f64) -> Result<Self> {
        if !slope.is_finite() || !intercept.is_finite() {
            return Err(Error::InvalidRay(format!(
                "non-finite ray: slope={slope} intercept={intercept}"
            )));
        }
        Ok(Self { slope, intercept })
    }
}

/// 1D cross-section of the heightfield along one projected ray line.
///
/// `cum_widths` has `n+1` entries starting at 0; strip `t` spans slice
/// coordinates `[cum_widths[t], cum_widths[t+1]]`. `source_cells[t]` is the
/// grid cell the strip came from (already reduced modulo the base grid when
/// tiling), so gradient scatter through it is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceCrossSection {
    pub heights1d: Vec<f64>,
    pub cum_widths: Vec<f64>,
    pub colors1d: Vec<[f64; 3]>,
    pub source_cells: Vec<(usize, usize)>,
}

impl SliceCrossSection {
    pub fn n(&self) -> usize {
        self.heights1d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights1d.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        *self.cum_widths.last().unwrap_or(&0.0)
    }
}

/// An infinite line on the ground plane: a point plus a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundLine {
    pub point: [f64; 2],
    pub dir: [f64; 2],
}

/// A ground line clipped to the (possibly tiled) footprint rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClippedLine {
    pub entry: [f64; 2],
    pub dir: [f64; 2],
    pub length: f64,
}

/// Identity of a slice line within one camera's ray grid. Pixels whose
/// ground points are exactly collinear along the projected view direction
/// share an id (and therefore a cross-section). Grouping is purely
/// structural — by pixel row, column or diagonal — so it cannot depend on
/// floating-point coincidences or iteration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LineId {
    /// Projection along x: all pixels of one image column share a line.
    Col(u32),
    /// Projection along y: all pixels of one image row share a line.
    Row(u32),
    /// Diagonal projection with dir.x * dir.y > 0: constant row - col.
    DiagDiff(i32),
    /// Diagonal projection with dir.x * dir.y < 0: constant row + col.
    DiagSum(u32),
    /// General azimuth: every pixel is its own line.
    Pixel(u32, u32),
}

/// One pixel's ray within a slice line.
#[derive(Debug, Clone, Copy)]
pub struct PixelRay {
    pub row: usize,
    pub col: usize,
    pub ray: Ray2D,
}

/// All rays of one slice line.
#[derive(Debug, Clone)]
pub struct SliceLineRays {
    pub id: LineId,
    pub line: ClippedLine,
    pub rays: Vec<PixelRay>,
}

/// The full ray grid for one camera.
#[derive(Debug, Clone)]
pub enum CameraRays {
    /// Elevation 90: every pixel maps straight down to the cell below it.
    /// Stores (row, col, cell) per pixel.
    Nadir(Vec<(usize, usize, (usize, usize))>),
    /// Oblique view: slice lines with their per-pixel 2D rays.
    Oblique {
        slope: f64,
        lines: Vec<SliceLineRays>,
    },
}

/// Geometry needed to build camera rays: grid shape, strip width and tiling.
#[derive(Debug, Clone, Copy)]
pub struct FieldGeom {
    pub rows: usize,
    pub cols: usize,
    pub strip_width: f64,
    /// Periodic repetition factor; 1 renders the field as-is. With tiling
    /// `r`, the field is virtually repeated `r x r` and the pixels of the
    /// central unit are reported.
    pub tiling: usize,
}

impl FieldGeom {
    pub fn of(field: &Heightfield, tiling: usize) -> Self {
        Self {
            rows: field.rows(),
            cols: field.cols(),
            strip_width: field.strip_width(),
            tiling: tiling.max(1),
        }
    }

    /// Virtual grid shape including tiling.
    pub fn virtual_shape(&self) -> (usize, usize) {
        (self.rows * self.tiling, self.cols * self.tiling)
    }

    /// Extent of the virtual footprint in mm.
    pub fn virtual_extent(&self) -> (f64, f64) {
        let (vr, vc) = self.virtual_shape();
        (vc as f64 * self.strip_width, vr as f64 * self.strip_width)
    }

    /// Index of the reported (central) unit along each axis.
    pub fn central_tile(&self) -> usize {
        self.tiling / 2
    }

    /// Ground point of pixel (row, col) of the reported m x m image.
    /// Pixel rows advance along x, pixel columns along y, so that under
    /// azimuth 0 (projection along x) all pixels of an image column share a
    /// slice line. Positions are computed from global (virtual) pixel
    /// indices so that a tiled render and an explicitly materialized tiled
    /// field produce bit-identical coordinates.
    pub fn pixel_ground(&self, m: usize, row: usize, col: usize) -> [f64; 2] {
        let (ex, ey) = self.virtual_extent();
        let total = (self.tiling * m) as f64;
        let gr = (self.central_tile() * m + row) as f64;
        let gc = (self.central_tile() * m + col) as f64;
        [(gr + 0.5) * ex / total, (gc + 0.5) * ey / total]
    }
}

/// Builds the per-pixel ray set for one camera over an `m x m` image.
///
/// Rays sharing a projected ground line share a [`LineId`]; the projected
/// direction, clipped segment and per-pixel intercepts are precomputed so the
/// renderer slices the heightfield once per line.
pub fn make_camera_rays(angles: ViewAngles, geom: FieldGeom, m: usize) -> Result<CameraRays> {
    if m == 0 {
        return Err(Error::InvalidView("image size must be positive".into()));
    }
    let d = angles.direction()?;
    if angles.is_nadir() {
        let (vr, vc) = geom.virtual_shape();
        let (_, _) = (vr, vc);
        let mut px = Vec::with_capacity(m * m);
        for row in 0..m {
            for col in 0..m {
                let g = geom.pixel_ground(m, row, col);
                let j = ((g[0] / geom.strip_width) as usize).min(geom.cols * geom.tiling - 1);
                let i = ((g[1] / geom.strip_width) as usize).min(geom.rows * geom.tiling - 1);
                px.push((row, col, (i % geom.rows, j % geom.cols)));
            }
        }
        return Ok(CameraRays::Nadir(px));
    }

    // Ground projection of the view direction and slice-plane slope.
    let horiz = (d[0] * d[0] + d[1] * d[1]).sqrt();
    let u = [d[0] / horiz, d[1] / horiz];
    let slope = d[2] / horiz; // negative: descends per unit ground advance
    let tan_e = -slope;

    // Structural grouping of pixels into slice lines.
    let ux0 = u[0] == 0.0;
    let uy0 = u[1] == 0.0;
    let diag = u[0].abs() == u[1].abs() && !ux0 && !uy0;
    let id_of = |row: usize, col: usize| -> LineId {
        if uy0 {
            // direction along x only: ground y fixed per image column
            LineId::Col(col as u32)
        } else if ux0 {
            LineId::Row(row as u32)
        } else if diag && geom.rows == geom.cols {
            if u[0] * u[1] > 0.0 {
                LineId::DiagDiff(row as i32 - col as i32)
            } else {
                LineId::DiagSum((row + col) as u32)
            }
        } else {
            LineId::Pixel(row as u32, col as u32)
        }
    };

    let mut lines: Vec<SliceLineRays> = Vec::new();
    let mut index: std::collections::HashMap<LineId, usize> = std::collections::HashMap::new();
    for row in 0..m {
        for col in 0..m {
            let g = geom.pixel_ground(m, row, col);
            let id = id_of(row, col);
            let slot = match index.get(&id) {
                Some(&s) => s,
                None => {
                    // Canonical line anchor: the first pixel encountered in
                    // row-major order lies on the line, and grouping is
                    // structural, so the anchor is stable under any
                    // generation order of the lines themselves.
                    let clipped = clip_to_footprint(GroundLine { point: g, dir: u }, geom)
                        .ok_or_else(|| {
                            Error::InvalidRay("pixel ground point outside footprint".into())
                        })?;
                    lines.push(SliceLineRays {
                        id,
                        line: clipped,
                        rays: Vec::new(),
                    });
                    index.insert(id, lines.len() - 1);
                    lines.len() - 1
                }
            };
            let line = &lines[slot].line;
            let xi = (g[0] - line.entry[0]) * line.dir[0] + (g[1] - line.entry[1]) * line.dir[1];
            let o_y = xi * tan_e;
            lines[slot].rays.push(PixelRay {
                row,
                col,
                ray: Ray2D {
                    slope,
                    intercept: o_y,
                },
            });
        }
    }
    Ok(CameraRays::Oblique { slope, lines })
}

/// Clip an infinite ground line (directed) to the virtual footprint
/// rectangle. Returns the entry point along the travel direction and the
/// clipped length, or None when the line misses the rectangle.
pub fn clip_to_footprint(line: GroundLine, geom: FieldGeom) -> Option<ClippedLine> {
    let (ex, ey) = geom.virtual_extent();
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for axis in 0..2 {
        let p = line.point[axis];
        let d = line.dir[axis];
        let lo = 0.0;
        let hi = if axis == 0 { ex } else { ey };
        if d == 0.0 {
            if p < lo || p > hi {
                return None;
            }
        } else {
            let ta = (lo - p) / d;
            let tb = (hi - p) / d;
            let (tmin, tmax) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(tmin);
            t1 = t1.min(tmax);
        }
    }
    if !(t1 > t0) {
        return None;
    }
    let entry = [line.point[0] + t0 * line.dir[0], line.point[1] + t0 * line.dir[1]];
    Some(ClippedLine {
        entry,
        dir: line.dir,
        length: t1 - t0,
    })
}

/// Slice the heightfield along a clipped ground line.
///
/// Crossing positions are computed directly from grid indices (never by
/// accumulating steps) so that slicing a subdivided field reproduces the
/// parent field's boundary coordinates bit-exactly. Cell membership is
/// decided at segment midpoints, which sidesteps corner-crossing ties; exact
/// corner touches produce zero-width segments that are dropped.
pub fn slice_clipped(field: &Heightfield, clip: &ClippedLine, tiling: usize) -> SliceCrossSection {
    let geom = FieldGeom::of(field, tiling);
    let w = geom.strip_width;
    let (vrows, vcols) = geom.virtual_shape();
    let [ex, ey] = [vcols as f64 * w, vrows as f64 * w];
    let (e, u, len) = (clip.entry, clip.dir, clip.length);

    // Collect crossing parameters with the vertical grid lines x = j*w and
    // horizontal lines y = i*w, in (0, len).
    let mut params: Vec<f64> = Vec::new();
    params.push(0.0);
    params.push(len);
    for (axis, n_lines, extent) in [(0usize, vcols, ex), (1usize, vrows, ey)] {
        let d = u[axis];
        if d == 0.0 {
            continue;
        }
        let _ = extent;
        for k in 1..n_lines {
            let coord = k as f64 * w;
            let t = (coord - e[axis]) / d;
            if t > 0.0 && t < len {
                params.push(t);
            }
        }
    }
    params.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let eps = 1e-12 * (1.0 + len);
    let mut heights1d = Vec::new();
    let mut colors1d = Vec::new();
    let mut source_cells = Vec::new();
    let mut cum = vec![0.0f64];
    let mut last = 0.0f64;
    for pair in params.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a <= eps {
            continue;
        }
        let mid = 0.5 * (a + b);
        let px = e[0] + mid * u[0];
        let py = e[1] + mid * u[1];
        let j = ((px / w).floor() as isize).clamp(0, vcols as isize - 1) as usize;
        let i = ((py / w).floor() as isize).clamp(0, vrows as isize - 1) as usize;
        let (bi, bj) = (i % geom.rows, j % geom.cols);
        heights1d.push(field.height(bi, bj));
        colors1d.push(field.color(bi, bj));
        source_cells.push((bi, bj));
        cum.push(b);
        last = b;
    }
    let _ = last;
    SliceCrossSection {
        heights1d,
        cum_widths: cum,
        colors1d,
        source_cells,
    }
}

/// Slice the heightfield along an arbitrary ground line. A line that misses
/// the footprint yields an empty cross-section (rays on it see background).
pub fn slice_heightfield(field: &Heightfield, line: GroundLine, tiling: usize) -> SliceCrossSection {
    let geom = FieldGeom::of(field, tiling);
    match clip_to_footprint(line, geom) {
        Some(clip) => slice_clipped(field, &clip, tiling),
        None => SliceCrossSection {
            heights1d: Vec::new(),
            cum_widths: vec![0.0],
            colors1d: Vec::new(),
            source_cells: Vec::new(),
        },
    }
}

/// Backtraced boundary intercepts of a slice for a given (negative, finite)
/// ray slope.
///
/// With `n` strips the result has `n + 1` entries:
///
/// - `y[0]` passes through the first strip's near top corner
///   `(cum_widths[0], heights1d[0])`; rays below it enter the footprint
///   through the outer wall and are treated as background.
/// - `y[t+1]` passes through strip `t`'s far top corner
///   `(cum_widths[t+1], heights1d[t])`; it is the exact intercept at which a
///   descending ray just clears strip `t`.
///
/// After [`monotonic_cummax`], a ray with intercept `o_y` hits strip `t` iff
/// `y~[t] <= o_y < y~[t+1]`, which matches brute-force ray marching on both
/// top and interior side-wall hits.
pub fn backtrace_boundaries(slice: &SliceCrossSection, ray_slope: f64) -> Result<Vec<f64>> {
    if !ray_slope.is_finite() || ray_slope >= 0.0 {
        return Err(Error::InvalidRay(format!(
            "backtrace needs a finite negative slope, got {ray_slope} (vertical rays take the nadir path)"
        )));
    }
    let n = slice.n();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut y = Vec::with_capacity(n + 1);
    y.push(slice.heights1d[0] - ray_slope * slice.cum_widths[0]);
    for t in 0..n {
        y.push(slice.heights1d[t] - ray_slope * slice.cum_widths[t + 1]);
    }
    Ok(y)
}

/// Running maximum: `out[i] = max(y[0..=i])`.
pub fn monotonic_cummax(y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    let mut best = f64::NEG_INFINITY;
    for &v in y {
        if v > best {
            best = v;
        }
        out.push(best);
    }
    out
}

/// Running maximum together with, per position, the index of the first
/// element achieving it. Ties route to the earliest index, which is the
/// subgradient convention used by the backward pass.
pub fn cummax_with_argmax(y: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut vals = Vec::with_capacity(y.len());
    let mut args = Vec::with_capacity(y.len());
    let mut best = f64::NEG_INFINITY;
    let mut best_i = 0usize;
    for (i, &v) in y.iter().enumerate() {
        if v > best {
            best = v;
            best_i = i;
        }
        vals.push(best);
        args.push(best_i);
    }
    (vals, args)
}
