//! The full design loop: Adam updates, coarse-to-fine subdivision,
//! alternating block coordinate descent, simulated annealing, initial
//! configurations, and post-optimization color projection.
//!
//! The loop is driven entirely by the global step counter. Block coordinate
//! descent alternates `height_steps` of height updates with `color_steps`
//! of color updates; subdivision is due every `subdivide_every` steps but is
//! applied only at a block boundary so a phase never changes resolution
//! mid-flight; annealing runs at step 0 and every `every_n_steps` steps.
//! The Heaviside sharpness `k` ramps linearly from `k_start` to `k_end`
//! over the run. All randomness derives from the single config seed.

use crate::error::{Error, Result};
use crate::field::{Heightfield, ViewSpec};
use crate::grad::backward;
use crate::heaviside::{Heaviside, HeavisideKind};
use crate::loss::{total_loss, LossBreakdown, LossConfig};
use crate::render::{render_hard, RenderParams, SegmentedColors};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Relative margin keeping heights strictly inside the barrier domain.
pub const FEASIBILITY_MARGIN: f64 = 1e-4;

/// Initial surface configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Flat,
    VerticalWall,
    HorizontalWall,
    Cross,
    Random,
}

impl std::str::FromStr for InitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(InitKind::Flat),
            "vertical_wall" | "vertical-wall" => Ok(InitKind::VerticalWall),
            "horizontal_wall" | "horizontal-wall" => Ok(InitKind::HorizontalWall),
            "cross" => Ok(InitKind::Cross),
            "random" => Ok(InitKind::Random),
            other => Err(Error::InvalidOptimizerConfig(format!(
                "unknown init kind '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    /// Height learning rate, in units of the height range (h_max - h_min).
    pub lr_heights: f64,
    /// Color learning rate, in color units.
    pub lr_colors: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_heights: 0.05,
            lr_colors: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseToFineConfig {
    pub enabled: bool,
    pub subdivide_every: usize,
}

impl Default for CoarseToFineConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            subdivide_every: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcdConfig {
    pub enabled: bool,
    pub height_steps: usize,
    pub color_steps: usize,
}

impl Default for BcdConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            height_steps: 10,
            color_steps: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealingConfig {
    pub enabled: bool,
    pub t_max: f64,
    pub t_min: f64,
    pub cool_factor: f64,
    pub every_n_steps: usize,
    /// Perturbation scale at T = T_max, relative to the height range (for
    /// heights) and to the unit color range (for colors).
    pub neighbor_sigma: f64,
}

impl Default for AnnealingConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            t_max: 3.0,
            t_min: 0.5,
            cool_factor: 0.99,
            every_n_steps: 100,
            neighbor_sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeavisideSchedule {
    pub kind: HeavisideKind,
    pub k_start: f64,
    pub k_end: f64,
}

impl Default for HeavisideSchedule {
    fn default() -> Self {
        Self {
            kind: HeavisideKind::Tanh,
            k_start: 10.0,
            k_end: 100.0,
        }
    }
}

impl HeavisideSchedule {
    pub fn fixed(kind: HeavisideKind, k: f64) -> Self {
        Self {
            kind,
            k_start: k,
            k_end: k,
        }
    }

    /// Sharpness at step `s` of a `total`-step run (linear ramp).
    pub fn k_at(&self, s: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.k_end;
        }
        let t = s as f64 / (total - 1) as f64;
        self.k_start + (self.k_end - self.k_start) * t.clamp(0.0, 1.0)
    }
}

/// Field geometry for a run. `strip_width_mm` is the bar width at the *end*
/// resolution (the printable width); coarser stages use proportionally wider
/// bars over the same footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldShape {
    pub start_resolution: usize,
    pub end_resolution: usize,
    pub strip_width_mm: f64,
    pub h_min_mm: f64,
    pub h_max_mm: f64,
}

impl Default for FieldShape {
    fn default() -> Self {
        Self {
            start_resolution: 8,
            end_resolution: 32,
            strip_width_mm: 1.0,
            h_min_mm: 0.0,
            h_max_mm: 4.0,
        }
    }
}

impl FieldShape {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !self.start_resolution.is_power_of_two() || !self.end_resolution.is_power_of_two() {
            problems.push("start/end resolutions must be powers of two".to_string());
        }
        if self.start_resolution < 2 {
            problems.push("start resolution must be >= 2".to_string());
        }
        if self.start_resolution > self.end_resolution {
            problems.push("start resolution must be <= end resolution".to_string());
        }
        if !(self.strip_width_mm > 0.0) {
            problems.push(format!(
                "strip width must be > 0, got {}",
                self.strip_width_mm
            ));
        }
        if !(self.h_min_mm >= 0.0 && self.h_min_mm < self.h_max_mm) {
            problems.push(format!(
                "need 0 <= h_min < h_max, got {} and {}",
                self.h_min_mm, self.h_max_mm
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidOptimizerConfig(problems.join("; ")))
        }
    }

    /// Strip width at a given (intermediate) resolution.
    pub fn strip_width_at(&self, resolution: usize) -> f64 {
        self.strip_width_mm * (self.end_resolution / resolution) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub total_steps: usize,
    pub field: FieldShape,
    pub adam: AdamConfig,
    pub coarse_to_fine: CoarseToFineConfig,
    pub bcd: BcdConfig,
    pub annealing: AnnealingConfig,
    pub init_kind: InitKind,
    pub heaviside: HeavisideSchedule,
    pub loss: LossConfig,
    pub seed: u64,
    /// Periodic repetition factor during optimization (1 = none).
    pub tiling: usize,
    pub background: [f64; 3],
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            total_steps: 150,
            field: FieldShape::default(),
            adam: AdamConfig::default(),
            coarse_to_fine: CoarseToFineConfig::default(),
            bcd: BcdConfig::default(),
            annealing: AnnealingConfig::default(),
            init_kind: InitKind::Flat,
            heaviside: HeavisideSchedule::default(),
            loss: LossConfig::default(),
            seed: 0,
            tiling: 1,
            background: [0.0; 3],
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.total_steps == 0 {
            problems.push("total_steps must be >= 1".to_string());
        }
        if let Err(e) = self.field.validate() {
            problems.push(e.to_string());
        }
        if self.bcd.enabled && (self.bcd.height_steps == 0 || self.bcd.color_steps == 0) {
            problems.push("bcd step counts must be >= 1".to_string());
        }
        if self.coarse_to_fine.enabled && self.coarse_to_fine.subdivide_every == 0 {
            problems.push("subdivide_every must be >= 1".to_string());
        }
        if self.annealing.enabled {
            let a = &self.annealing;
            if !(a.t_max > a.t_min && a.t_min > 0.0) {
                problems.push(format!(
                    "need T_max > T_min > 0, got {} and {}",
                    a.t_max, a.t_min
                ));
            }
            if !(a.cool_factor > 0.0 && a.cool_factor < 1.0) {
                problems.push(format!(
                    "cool factor must be in (0,1), got {}",
                    a.cool_factor
                ));
            }
            if a.every_n_steps == 0 {
                problems.push("annealing cadence must be >= 1 step".to_string());
            }
        }
        if !(self.heaviside.k_start > 0.0 && self.heaviside.k_end > 0.0) {
            problems.push("heaviside k must be > 0".to_string());
        }
        if !(self.adam.lr_heights > 0.0 && self.adam.lr_colors > 0.0) {
            problems.push("learning rates must be > 0".to_string());
        }
        if let Err(e) = self.loss.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidOptimizerConfig(problems.join("; ")))
        }
    }

    fn start_field(&self) -> Result<Heightfield> {
        let r = self.field.start_resolution;
        initial_field(
            self.init_kind,
            r,
            r,
            self.field.strip_width_at(r),
            self.field.h_min_mm,
            self.field.h_max_mm,
            mix_seed(self.seed, 1),
        )
    }
}

/// Parameter block being updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Heights,
    Colors,
    Both,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Heights => write!(f, "heights"),
            Phase::Colors => write!(f, "colors"),
            Phase::Both => write!(f, "both"),
        }
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub mse: f64,
    pub barrier: f64,
    pub neighbor: f64,
    pub total: f64,
    pub phase: Phase,
}

/// Full optimizer state; checkpointable and resumable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub field: Heightfield,
    pub m_heights: Vec<f64>,
    pub v_heights: Vec<f64>,
    pub m_colors: Vec<[f64; 3]>,
    pub v_colors: Vec<[f64; 3]>,
    /// Per-block Adam update counts (bias correction).
    pub t_heights: u64,
    pub t_colors: u64,
    pub step: usize,
    pub phase: Phase,
    pub next_subdivision_step: usize,
    /// Last annealing temperature (T_min after a completed pass).
    pub temperature: f64,
    pub rng_word_pos: u128,
    pub loss_history: Vec<LossRow>,
}

impl OptimizerState {
    pub fn new(cfg: &OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut field = cfg.start_field()?;
        field.clamp_feasible(FEASIBILITY_MARGIN * field.h_range());
        let n = field.rows() * field.cols();
        Ok(Self {
            field,
            m_heights: vec![0.0; n],
            v_heights: vec![0.0; n],
            m_colors: vec![[0.0; 3]; n],
            v_colors: vec![[0.0; 3]; n],
            t_heights: 0,
            t_colors: 0,
            step: 0,
            phase: phase_at(cfg, 0),
            next_subdivision_step: cfg.coarse_to_fine.subdivide_every,
            temperature: cfg.annealing.t_max,
            rng_word_pos: 0,
            loss_history: Vec::new(),
        })
    }

    fn rng(&self, cfg: &OptimizerConfig) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2));
        rng.set_word_pos(self.rng_word_pos);
        rng
    }
}

fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Initial surface configuration of the given kind.
pub fn initial_field(
    kind: InitKind,
    rows: usize,
    cols: usize,
    strip_width: f64,
    h_min: f64,
    h_max: f64,
    seed: u64,
) -> Result<Heightfield> {
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidOptimizerConfig(format!(
            "initial field needs resolution >= 2, got {rows}x{cols}"
        )));
    }
    let n = rows * cols;
    let wall_h = (0.5 * h_max).clamp(h_min, h_max);
    let gray = [0.5; 3];
    let (heights, colors) = match kind {
        InitKind::Flat => (vec![h_min; n], vec![gray; n]),
        InitKind::VerticalWall => {
            let mut h = vec![h_min; n];
            for i in 0..rows {
                for j in 0..cols {
                    if j % 2 == 1 {
                        h[i * cols + j] = wall_h;
                    }
                }
            }
            (h, vec![gray; n])
        }
        InitKind::HorizontalWall => {
            let mut h = vec![h_min; n];
            for i in 0..rows {
                if i % 2 == 1 {
                    for j in 0..cols {
                        h[i * cols + j] = wall_h;
                    }
                }
            }
            (h, vec![gray; n])
        }
        InitKind::Cross => {
            let mut h = vec![h_min; n];
            for i in 0..rows {
                for j in 0..cols {
                    if i % 2 == 1 || j % 2 == 1 {
                        h[i * cols + j] = wall_h;
                    }
                }
            }
            (h, vec![gray; n])
        }
        InitKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = (0..n).map(|_| rng.gen_range(h_min..h_max)).collect();
            let c = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            (h, c)
        }
    };
    Heightfield::from_parts(rows, cols, strip_width, h_min, h_max, heights, colors)
}

/// Phase implied by the global step counter.
pub fn phase_at(cfg: &OptimizerConfig, step: usize) -> Phase {
    if !cfg.bcd.enabled {
        return Phase::Both;
    }
    let cycle = cfg.bcd.height_steps + cfg.bcd.color_steps;
    if step % cycle < cfg.bcd.height_steps {
        Phase::Heights
    } else {
        Phase::Colors
    }
}

/// Standard Adam update with bias correction on the selected block only.
/// Heights are clamped to the feasible open interval, colors to [0,1].
pub fn adam_step(
    state: &mut OptimizerState,
    grads: &crate::grad::GradientSet,
    which: Phase,
    adam: &AdamConfig,
) -> Result<()> {
    let n = state.field.rows() * state.field.cols();
    if grads.d_heights.len() != n || grads.d_colors.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "gradient arrays sized {} vs field {}",
            grads.d_heights.len(),
            n
        )));
    }
    if grads.d_heights.iter().any(|g| !g.is_finite())
        || grads.d_colors.iter().flatten().any(|g| !g.is_finite())
    {
        return Err(Error::NonFiniteGradient {
            view: usize::MAX,
            px: 0,
            py: 0,
            strip: 0,
        });
    }
    let range = state.field.h_range();
    let margin = FEASIBILITY_MARGIN * range;
    let (b1, b2, eps) = (adam.beta1, adam.beta2, adam.epsilon);

    if matches!(which, Phase::Heights | Phase::Both) {
        state.t_heights += 1;
        let bc1 = 1.0 - b1.powi(state.t_heights as i32);
        let bc2 = 1.0 - b2.powi(state.t_heights as i32);
        let lr = adam.lr_heights * range;
        let lo = state.field.h_min() + margin;
        let hi = state.field.h_max() - margin;
        for i in 0..n {
            let g = grads.d_heights[i];
            let m = &mut state.m_heights[i];
            let v = &mut state.v_heights[i];
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            let h = &mut state.field.heights_mut()[i];
            *h = (*h - lr * m_hat / (v_hat.sqrt() + eps)).clamp(lo, hi);
        }
    } else {
        // moments still decay while the block is frozen
        for i in 0..n {
            state.m_heights[i] *= b1;
            state.v_heights[i] *= b2;
        }
    }

    if matches!(which, Phase::Colors | Phase::Both) {
        state.t_colors += 1;
        let bc1 = 1.0 - b1.powi(state.t_colors as i32);
        let bc2 = 1.0 - b2.powi(state.t_colors as i32);
        let lr = adam.lr_colors;
        for i in 0..n {
            for ch in 0..3 {
                let g = grads.d_colors[i][ch];
                let m = &mut state.m_colors[i][ch];
                let v = &mut state.v_colors[i][ch];
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                let c = &mut state.field.colors_mut()[i][ch];
                *c = (*c - lr * m_hat / (v_hat.sqrt() + eps)).clamp(0.0, 1.0);
            }
        }
    } else {
        for i in 0..n {
            for ch in 0..3 {
                state.m_colors[i][ch] *= b1;
                state.v_colors[i][ch] *= b2;
            }
        }
    }
    Ok(())
}

/// Double the field resolution, replicating heights, colors and Adam moments
/// per 2x2 block. The rendered image is unchanged.
pub fn subdivide(state: &mut OptimizerState) {
    let old_cols = state.field.cols();
    state.field = state.field.subdivide();
    let (rows, cols) = (state.field.rows(), state.field.cols());
    let rep = |src: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[i * cols + j] = src[(i / 2) * old_cols + j / 2];
            }
        }
        out
    };
    let rep3 = |src: &[[f64; 3]]| -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[i * cols + j] = src[(i / 2) * old_cols + j / 2];
            }
        }
        out
    };
    state.m_heights = rep(&state.m_heights);
    state.v_heights = rep(&state.v_heights);
    state.m_colors = rep3(&state.m_colors);
    state.v_colors = rep3(&state.v_colors);
}

/// Metropolis acceptance rule: always accept improvements, otherwise accept
/// with probability `exp(-delta / t)` against the uniform draw `u`.
#[inline]
pub fn metropolis_accept(delta: f64, t: f64, u: f64) -> bool {
    delta < 0.0 || u < (-delta / t).exp()
}

/// Number of cooling iterations of the annealing loop.
pub fn cooling_iterations(t_max: f64, t_min: f64, cool_factor: f64) -> usize {
    let mut t = t_max;
    let mut n = 0;
    while t > t_min {
        n += 1;
        t *= cool_factor;
    }
    n
}

/// One simulated-annealing pass over heights and colors.
///
/// Proposals are Gaussian perturbations with temperature-scaled widths,
/// clamped to feasibility; the loop cools from `T_max` to `T_min` by the
/// exponential factor, accepting by the Metropolis rule on the total loss.
pub fn anneal(
    field: &mut Heightfield,
    views: &[ViewSpec],
    spec: &Heaviside,
    loss_cfg: &LossConfig,
    params: &RenderParams,
    acfg: &AnnealingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let range = field.h_range();
    let margin = FEASIBILITY_MARGIN * range;
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut current = total_loss(field, views, spec, loss_cfg, params)?.total;
    let mut accepted = 0;
    let mut t = acfg.t_max;
    while t > acfg.t_min {
        let sigma_h = acfg.neighbor_sigma * range * t / acfg.t_max;
        let sigma_c = acfg.neighbor_sigma * t / acfg.t_max;
        let mut candidate = field.clone();
        for h in candidate.heights_mut() {
            *h += sigma_h * normal.sample(rng);
        }
        for c in candidate.colors_mut() {
            for v in c.iter_mut() {
                *v += sigma_c * normal.sample(rng);
            }
        }
        candidate.clamp_feasible(margin);
        let cand_loss = total_loss(&candidate, views, spec, loss_cfg, params)?.total;
        let delta = cand_loss - current;
        let u: f64 = rng.gen();
        if metropolis_accept(delta, t, u) {
            *field = candidate;
            current = cand_loss;
            accepted += 1;
        }
        t *= acfg.cool_factor;
    }
    Ok(accepted)
}

/// Result of an optimization run.
#[derive(Debug, Clone)]
pub struct OptimizeResult {
    /// Best-total-loss field encountered (including the final state).
    pub best_field: Heightfield,
    pub best_loss: LossBreakdown,
    pub best_step: usize,
    /// Field after the last step.
    pub final_field: Heightfield,
    pub final_loss: LossBreakdown,
    /// Per-step loss trace (loss evaluated at the top of each step).
    pub history: Vec<LossRow>,
    /// Heaviside sharpness at the end of the run.
    pub final_k: f64,
}

/// Run the full optimization loop.
pub fn optimize(views: &[ViewSpec], cfg: &OptimizerConfig) -> Result<OptimizeResult> {
    let mut state = OptimizerState::new(cfg)?;
    optimize_resume(&mut state, views, cfg, &mut |_, _| {})
}

/// Continue an optimization from an existing state (fresh states start at
/// step 0). The observer runs after every step with the post-update state,
/// e.g. to write periodic checkpoints.
pub fn optimize_resume(
    state: &mut OptimizerState,
    views: &[ViewSpec],
    cfg: &OptimizerConfig,
    observer: &mut dyn FnMut(&OptimizerState, &LossRow),
) -> Result<OptimizeResult> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::InvalidView("need at least one view".into()));
    }
    let m0 = views[0].image_size();
    if views.iter().any(|v| v.image_size() != m0) {
        return Err(Error::InvalidView(
            "all views must share one image size".into(),
        ));
    }
    let params = RenderParams {
        image_size: m0,
        tiling: cfg.tiling,
        background: cfg.background,
        samples_per_axis: 1,
    };
    let mut rng = state.rng(cfg);

    let mut best_field = state.field.clone();
    let mut best_loss: Option<LossBreakdown> = None;
    let mut best_step = state.step;
    let cycle_len = if cfg.bcd.enabled {
        cfg.bcd.height_steps + cfg.bcd.color_steps
    } else {
        1
    };

    while state.step < cfg.total_steps {
        let s = state.step;
        let k = cfg.heaviside.k_at(s, cfg.total_steps);
        let spec = Heaviside::new(cfg.heaviside.kind, k, mix_seed(cfg.seed, 3))?;

        // schedule events at block boundaries
        if s % cycle_len == 0 {
            if cfg.coarse_to_fine.enabled
                && s >= state.next_subdivision_step
                && state.field.rows() < cfg.field.end_resolution
            {
                subdivide(state);
                state.next_subdivision_step += cfg.coarse_to_fine.subdivide_every;
            }
            if cfg.annealing.enabled && s % cfg.annealing.every_n_steps == 0 {
                anneal(
                    &mut state.field,
                    views,
                    &spec,
                    &cfg.loss,
                    &params,
                    &cfg.annealing,
                    &mut rng,
                )?;
                state.temperature = cfg.annealing.t_min;
            }
        }

        state.phase = phase_at(cfg, s);
        let (loss, grads) = backward(&state.field, views, &spec, &cfg.loss, &params)?;
        let row = LossRow {
            step: s,
            mse: loss.mse,
            barrier: loss.barrier,
            neighbor: loss.neighbor,
            total: loss.total,
            phase: state.phase,
        };
        state.loss_history.push(row);
        if best_loss.map(|b| loss.total < b.total).unwrap_or(true) {
            best_loss = Some(loss);
            best_field = state.field.clone();
            best_step = s;
        }

        adam_step(state, &grads, state.phase, &cfg.adam)?;
        state.step += 1;
        state.rng_word_pos = rng.get_word_pos();
        observer(state, &row);
    }

    // evaluate the final field so the best tracker sees the last update
    let final_k = cfg
        .heaviside
        .k_at(cfg.total_steps.saturating_sub(1), cfg.total_steps);
    let spec = Heaviside::new(cfg.heaviside.kind, final_k, mix_seed(cfg.seed, 3))?;
    let final_loss = total_loss(&state.field, views, &spec, &cfg.loss, &params)?;
    if best_loss
        .map(|b| final_loss.total < b.total)
        .unwrap_or(true)
    {
        best_loss = Some(final_loss);
        best_field = state.field.clone();
        best_step = state.step;
    }

    Ok(OptimizeResult {
        best_field,
        best_loss: best_loss.unwrap(),
        best_step,
        final_field: state.field.clone(),
        final_loss,
        history: state.loss_history.clone(),
        final_k,
    })
}

/// Split each bar's surface into vertical color bands and re-project the
/// desired images onto them through exact-render hit points.
///
/// Every non-miss pixel of every view deposits its desired color onto the
/// band its ray strikes; bands hit from several views average all
/// contributions (weighted by hit counts); unhit bands keep the optimized
/// bar color.
pub fn project_colors(
    field: &Heightfield,
    views: &[ViewSpec],
    segments_per_bar: usize,
    params: &RenderParams,
) -> Result<SegmentedColors> {
    if segments_per_bar == 0 {
        return Err(Error::Config("segments_per_bar must be >= 1".into()));
    }
    if views.is_empty() {
        return Err(Error::InvalidView("need at least one view".into()));
    }
    let (rows, cols) = (field.rows(), field.cols());
    let mut seg = SegmentedColors::new(rows, cols, segments_per_bar);
    let mut sums = vec![[0.0f64; 3]; rows * cols * segments_per_bar];
    let mut counts = vec![0usize; rows * cols * segments_per_bar];

    for view in views {
        let p = RenderParams {
            image_size: view.image_size(),
            samples_per_axis: 1,
            ..*params
        };
        let out = render_hard(field, view.angles, &p, None)?;
        for (i, hit) in out.hits.iter().enumerate() {
            let Some(h) = hit else { continue };
            let bar_h = field.height(h.cell.0, h.cell.1);
            let s = seg.segment_of_hit(h.z, bar_h, h.top);
            let idx = seg.idx(h.cell.0, h.cell.1, s);
            let want = view.desired.pixels[i];
            for ch in 0..3 {
                sums[idx][ch] += want[ch];
            }
            counts[idx] += 1;
        }
    }

    for i in 0..rows {
        for j in 0..cols {
            for s in 0..segments_per_bar {
                let idx = seg.idx(i, j, s);
                seg.colors[idx] = if counts[idx] > 0 {
                    let inv = 1.0 / counts[idx] as f64;
                    let v = sums[idx];
                    [
                        (v[0] * inv).clamp(0.0, 1.0),
                        (v[1] * inv).clamp(0.0, 1.0),
                        (v[2] * inv).clamp(0.0, 1.0),
                    ]
                } else {
                    field.color(i, j)
                };
            }
        }
    }
    Ok(seg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ViewAngles;
    use crate::grad::GradientSet;
    use crate::img::ImageRgb;
    use crate::loss::neighbor_loss;

    #[test]
    fn initial_fields_match_patterns() {
        let f = initial_field(InitKind::Flat, 8, 8, 1.0, 0.0, 4.0, 0).unwrap();
        assert!(f.heights().iter().all(|&h| h == 0.0));
        assert!(neighbor_loss(&f) < 1e-4);

        let f = initial_field(InitKind::VerticalWall, 8, 8, 1.0, 0.0, 4.0, 0).unwrap();
        let raised: Vec<usize> = (0..8)
            .filter(|&j| (0..8).all(|i| f.height(i, j) > 0.0))
            .collect();
        assert_eq!(raised.len(), 4);
        for j in &raised {
            assert_eq!(j % 2, 1);
        }

        let f = initial_field(InitKind::HorizontalWall, 8, 8, 1.0, 0.0, 4.0, 0).unwrap();
        let raised_rows: Vec<usize> = (0..8)
            .filter(|&i| (0..8).all(|j| f.height(i, j) > 0.0))
            .collect();
        assert_eq!(raised_rows.len(), 4);

        // cross raises the union of both wall patterns
        let f = initial_field(InitKind::Cross, 8, 8, 1.0, 0.0, 4.0, 0).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = i % 2 == 1 || j % 2 == 1;
                assert_eq!(f.height(i, j) > 0.0, want);
            }
        }

        // seeded random is bit-identical across runs
        let a = initial_field(InitKind::Random, 8, 8, 1.0, 0.0, 4.0, 9).unwrap();
        let b = initial_field(InitKind::Random, 8, 8, 1.0, 0.0, 4.0, 9).unwrap();
        assert_eq!(a, b);
        let c = initial_field(InitKind::Random, 8, 8, 1.0, 0.0, 4.0, 10).unwrap();
        assert_ne!(a, c);
    }

    fn dummy_state(res: usize) -> OptimizerState {
        let cfg = OptimizerConfig {
            field: FieldShape {
                start_resolution: res,
                end_resolution: res * 4,
                ..FieldShape::default()
            },
            ..OptimizerConfig::default()
        };
        OptimizerState::new(&cfg).unwrap()
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut st = dummy_state(4);
        st.field.heights_mut().iter_mut().for_each(|h| *h = 2.0);
        let before = st.field.clone();
        let g = GradientSet::zeros(&st.field);
        adam_step(&mut st, &g, Phase::Both, &AdamConfig::default()).unwrap();
        assert_eq!(st.field, before);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut st = dummy_state(4);
        st.field.heights_mut().iter_mut().for_each(|h| *h = 2.0);
        let before = st.field.clone();
        let mut g = GradientSet::zeros(&st.field);
        g.d_heights.iter_mut().for_each(|v| *v = 0.37);
        g.d_colors.iter_mut().for_each(|c| c[1] = -1.4);
        let adam = AdamConfig::default();
        adam_step(&mut st, &g, Phase::Both, &adam).unwrap();
        let range = st.field.h_range();
        for i in 0..16 {
            let dh = st.field.heights()[i] - before.heights()[i];
            assert!(
                (dh + adam.lr_heights * range).abs() < 1e-6 * range,
                "height step {dh}"
            );
            let dc = st.field.colors()[i][1] - before.colors()[i][1];
            assert!((dc - adam.lr_colors).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_clamps_heights_at_bounds() {
        let mut st = dummy_state(4);
        let hi = st.field.h_max() - FEASIBILITY_MARGIN * st.field.h_range();
        st.field.heights_mut().iter_mut().for_each(|h| *h = hi);
        let mut g = GradientSet::zeros(&st.field);
        g.d_heights.iter_mut().for_each(|v| *v = -1.0); // pushes upward
        adam_step(&mut st, &g, Phase::Heights, &AdamConfig::default()).unwrap();
        for &h in st.field.heights() {
            assert_eq!(h, hi);
        }
    }

    #[test]
    fn subdivision_replicates_moments() {
        let mut st = dummy_state(4);
        st.m_heights[5] = 0.7;
        st.v_colors[3][2] = 0.2;
        subdivide(&mut st);
        assert_eq!(st.field.rows(), 8);
        assert_eq!(st.m_heights.len(), 64);
        // parent cell (1,1) -> children (2..3, 2..3)
        for (i, j) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
            assert_eq!(st.m_heights[i * 8 + j], 0.7);
        }
        for (i, j) in [(0, 6), (0, 7), (1, 6), (1, 7)] {
            assert_eq!(st.v_colors[i * 8 + j][2], 0.2);
        }
    }

    #[test]
    fn cooling_schedule_iteration_count() {
        // ceil(log(0.5/3)/log(0.99)) = 179
        assert_eq!(cooling_iterations(3.0, 0.5, 0.99), 179);
    }

    #[test]
    fn metropolis_improvements_always_accepted() {
        for u in [0.0, 0.5, 0.999_999] {
            assert!(metropolis_accept(-1e-9, 0.5, u));
        }
    }

    #[test]
    fn metropolis_acceptance_frequency_matches_boltzmann() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for (delta, t) in [(0.3, 1.0), (1.0, 0.7), (0.05, 0.5)] {
            let p = (-delta / t) as f64;
            let p = p.exp();
            let n = 10_000;
            let mut acc = 0usize;
            for _ in 0..n {
                if metropolis_accept(delta, t, rng.gen()) {
                    acc += 1;
                }
            }
            let freq = acc as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "dL={delta} T={t}: freq {freq} vs p {p}"
            );
        }
    }

    fn two_view_targets(m: usize) -> Vec<ViewSpec> {
        vec![
            ViewSpec::new(
                ViewAngles::new(45.0, 0.0).unwrap(),
                ImageRgb::new(m, m, [0.0; 3]),
            )
            .unwrap(),
            ViewSpec::new(
                ViewAngles::new(45.0, 180.0).unwrap(),
                ImageRgb::new(m, m, [1.0; 3]),
            )
            .unwrap(),
        ]
    }

    #[test]
    fn bcd_phase_purity() {
        // during a height phase colors never change (bit-exact) and vice versa
        let cfg = OptimizerConfig {
            total_steps: 12,
            field: FieldShape {
                start_resolution: 4,
                end_resolution: 4,
                ..FieldShape::default()
            },
            coarse_to_fine: CoarseToFineConfig {
                enabled: false,
                ..Default::default()
            },
            annealing: AnnealingConfig {
                enabled: false,
                ..Default::default()
            },
            bcd: BcdConfig {
                enabled: true,
                height_steps: 3,
                color_steps: 2,
            },
            init_kind: InitKind::Random,
            loss: LossConfig::none(),
            ..OptimizerConfig::default()
        };
        let views = two_view_targets(8);
        let mut state = OptimizerState::new(&cfg).unwrap();
        let mut prev = state.field.clone();
        let mut checked = 0;
        optimize_resume(&mut state, &views, &cfg, &mut |st, row| {
            match row.phase {
                Phase::Heights => {
                    assert_eq!(
                        st.field.colors(),
                        prev.colors(),
                        "colors moved in height phase"
                    );
                    checked += 1;
                }
                Phase::Colors => {
                    assert_eq!(
                        st.field.heights(),
                        prev.heights(),
                        "heights moved in color phase"
                    );
                    checked += 1;
                }
                Phase::Both => {}
            }
            prev = st.field.clone();
        })
        .unwrap();
        assert_eq!(checked, 12);
    }

    #[test]
    fn optimize_is_deterministic_and_feasible() {
        let cfg = OptimizerConfig {
            total_steps: 25,
            field: FieldShape {
                start_resolution: 4,
                end_resolution: 8,
                ..FieldShape::default()
            },
            coarse_to_fine: CoarseToFineConfig {
                enabled: true,
                subdivide_every: 10,
            },
            annealing: AnnealingConfig {
                enabled: true,
                every_n_steps: 10,
                ..Default::default()
            },
            init_kind: InitKind::Random,
            seed: 5,
            ..OptimizerConfig::default()
        };
        let views = two_view_targets(8);
        let a = optimize(&views, &cfg).unwrap();
        let b = optimize(&views, &cfg).unwrap();
        assert_eq!(a.best_field, b.best_field);
        assert_eq!(a.history.len(), b.history.len());
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.total, rb.total);
        }
        // feasibility after every step
        for &h in a.final_field.heights() {
            assert!(h > cfg.field.h_min_mm && h < cfg.field.h_max_mm);
        }
        for c in a.final_field.colors() {
            assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        // the returned best is no worse than any recorded step
        let hist_best = a.history.iter().map(|r| r.total).fold(f64::INFINITY, f64::min);
        assert!(a.best_loss.total <= hist_best + 1e-15);
    }

    #[test]
    fn optimize_improves_single_view_loss() {
        let cfg = OptimizerConfig {
            total_steps: 40,
            field: FieldShape {
                start_resolution: 8,
                end_resolution: 8,
                ..FieldShape::default()
            },
            coarse_to_fine: CoarseToFineConfig {
                enabled: false,
                ..Default::default()
            },
            annealing: AnnealingConfig {
                enabled: false,
                ..Default::default()
            },
            bcd: BcdConfig {
                enabled: false,
                ..Default::default()
            },
            loss: LossConfig::none(),
            init_kind: InitKind::Flat,
            ..OptimizerConfig::default()
        };
        // single nadir view: a pure color-matching problem
        let m = 8;
        let mut target = ImageRgb::new(m, m, [0.0; 3]);
        for r in 0..m {
            for c in 0..m {
                target.set(r, c, [r as f64 / m as f64, 0.2, c as f64 / m as f64]);
            }
        }
        let views = vec![ViewSpec::new(ViewAngles::new(90.0, 0.0).unwrap(), target).unwrap()];
        let res = optimize(&views, &cfg).unwrap();
        assert!(res.history[0].total > 0.01);
        assert!(
            res.best_loss.total < res.history[0].total * 0.05,
            "loss {} -> {}",
            res.history[0].total,
            res.best_loss.total
        );
    }

    #[test]
    fn project_colors_nadir_reproduces_target() {
        let field = Heightfield::uniform(8, 8, 1.0, 0.0, 4.0, 2.0, [0.5; 3]).unwrap();
        let m = 8;
        let mut target = ImageRgb::new(m, m, [0.0; 3]);
        for r in 0..m {
            for c in 0..m {
                target.set(r, c, [r as f64 / 8.0, c as f64 / 8.0, 0.5]);
            }
        }
        let view = ViewSpec::new(ViewAngles::new(90.0, 0.0).unwrap(), target.clone()).unwrap();
        let params = RenderParams::new(m);
        let seg = project_colors(&field, &[view], 3, &params).unwrap();
        let out = render_hard(
            &field,
            ViewAngles::new(90.0, 0.0).unwrap(),
            &params,
            Some(&seg),
        )
        .unwrap();
        for (a, b) in out.image.pixels.iter().zip(&target.pixels) {
            for ch in 0..3 {
                assert!((a[ch] - b[ch]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn project_colors_single_view_single_segment_takes_mean() {
        // 2x2 bars under a 4x4 nadir view: each bar's only band becomes the
        // mean desired color over the four pixels that strike it
        let field = Heightfield::uniform(2, 2, 1.0, 0.0, 4.0, 1.0, [0.5; 3]).unwrap();
        let m = 4;
        let mut target = ImageRgb::new(m, m, [0.0; 3]);
        for r in 0..m {
            for c in 0..m {
                target.set(r, c, [(r * m + c) as f64 / 16.0, 0.0, 0.0]);
            }
        }
        let view = ViewSpec::new(ViewAngles::new(90.0, 0.0).unwrap(), target.clone()).unwrap();
        let seg = project_colors(&field, &[view], 1, &RenderParams::new(m)).unwrap();
        // cell (0,0) is struck by pixels with row < 2 and col < 2
        let mut want = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                want += target.get(r, c)[0];
            }
        }
        want /= 4.0;
        assert!((seg.get(0, 0, 0)[0] - want).abs() < 1e-12);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = OptimizerConfig::default();
        cfg.field.start_resolution = 12;
        assert!(cfg.validate().is_err());
        let mut cfg = OptimizerConfig::default();
        cfg.annealing.t_min = 5.0;
        assert!(cfg.validate().is_err());
        let mut cfg = OptimizerConfig::default();
        cfg.annealing.cool_factor = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = OptimizerConfig::default();
        cfg.bcd.height_steps = 0;
        assert!(cfg.validate().is_err());
    }
}
