//! Experiment protocols: angle-compatibility sweeps and the ablation tables
//! (regularization variants, optimization-technique combinations, Heaviside
//! approximation families), plus the synthetic target images they use.
//!
//! The canonical two-view protocol puts both cameras at 45 degrees elevation
//! on opposite sides of the surface, with solid black and solid white
//! desired images, and runs 100 optimization steps.

use crate::error::{Error, Result};
use crate::field::{ViewAngles, ViewSpec};
use crate::heaviside::HeavisideKind;
use crate::img::ImageRgb;
use crate::loss::LossConfig;
use crate::optim::{
    optimize, BcdConfig, CoarseToFineConfig, FieldShape, HeavisideSchedule, OptimizeResult,
    OptimizerConfig,
};
use serde::{Deserialize, Serialize};

/// Synthetic target image families used by the ablation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Black,
    White,
    /// Seeded uniform RGB noise.
    Random,
    /// Vertical black/white stripes with a 4-pixel period.
    Stripes,
}

impl TargetKind {
    pub fn name(&self) -> &'static str {
        match self {
            TargetKind::Black => "black",
            TargetKind::White => "white",
            TargetKind::Random => "random",
            TargetKind::Stripes => "stripes",
        }
    }
}

impl std::str::FromStr for TargetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "black" => Ok(TargetKind::Black),
            "white" => Ok(TargetKind::White),
            "random" => Ok(TargetKind::Random),
            "stripes" => Ok(TargetKind::Stripes),
            other => Err(Error::Config(format!("unknown target kind '{other}'"))),
        }
    }
}

/// Generate an `m x m` target image.
pub fn target_image(kind: TargetKind, m: usize, seed: u64) -> ImageRgb {
    use rand::{Rng, SeedableRng};
    match kind {
        TargetKind::Black => ImageRgb::new(m, m, [0.0; 3]),
        TargetKind::White => ImageRgb::new(m, m, [1.0; 3]),
        TargetKind::Random => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let px = (0..m * m)
                .map(|_| [rng.gen(), rng.gen(), rng.gen()])
                .collect();
            ImageRgb::from_pixels(m, m, px).unwrap()
        }
        TargetKind::Stripes => {
            let mut img = ImageRgb::new(m, m, [0.0; 3]);
            for r in 0..m {
                for c in 0..m {
                    if c % 4 < 2 {
                        img.set(r, c, [1.0; 3]);
                    }
                }
            }
            img
        }
    }
}

/// Build the two-view problem used throughout the experiments.
pub fn two_view_problem(
    angles: [(f64, f64); 2],
    targets: [TargetKind; 2],
    m: usize,
    seed: u64,
) -> Result<Vec<ViewSpec>> {
    let mut views = Vec::with_capacity(2);
    for (i, ((e, a), t)) in angles.iter().zip(targets.iter()).enumerate() {
        views.push(ViewSpec::new(
            ViewAngles::new(*e, *a)?,
            target_image(*t, m, seed.wrapping_add(i as u64)),
        )?);
    }
    Ok(views)
}

/// Which angle the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Azimuth,
    Elevation,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "azimuth" => Ok(SweepAxis::Azimuth),
            "elevation" => Ok(SweepAxis::Elevation),
            other => Err(Error::Config(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepRow {
    pub separation_deg: f64,
    pub elevation2_deg: f64,
    pub azimuth2_deg: f64,
    pub final_mse: f64,
    pub final_total: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("separation_deg,elevation2_deg,azimuth2_deg,final_mse,final_total\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.separation_deg, r.elevation2_deg, r.azimuth2_deg, r.final_mse, r.final_total
        ));
    }
    s
}

/// Angle-compatibility sweep: a black-target view fixed at `fixed`, a
/// white-target view separated from it along `axis` by each entry of
/// `separations`, each cell a `cfg.total_steps`-step optimization. The loss
/// reported is the MSE of the post-run field.
///
/// Elevation separations that would push the second view past 90 degrees
/// are capped at 90 (the row records the actual angles used).
pub fn sweep(
    axis: SweepAxis,
    fixed: ViewAngles,
    separations: &[f64],
    cfg: &OptimizerConfig,
    m: usize,
) -> Result<Vec<SweepRow>> {
    if separations.is_empty() {
        return Err(Error::Config("empty sweep range".into()));
    }
    let mut rows = Vec::with_capacity(separations.len());
    for &sep in separations {
        let (e2, a2) = match axis {
            SweepAxis::Azimuth => (fixed.elevation_deg, (fixed.azimuth_deg + sep).rem_euclid(360.0)),
            SweepAxis::Elevation => ((fixed.elevation_deg + sep).min(90.0), fixed.azimuth_deg),
        };
        let views = two_view_problem(
            [(fixed.elevation_deg, fixed.azimuth_deg), (e2, a2)],
            [TargetKind::Black, TargetKind::White],
            m,
            cfg.seed,
        )?;
        let res = optimize(&views, cfg)?;
        rows.push(SweepRow {
            separation_deg: sep,
            elevation2_deg: e2,
            azimuth2_deg: a2,
            final_mse: res.final_loss.mse,
            final_total: res.final_loss.total,
        });
    }
    Ok(rows)
}

/// Ablation suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblateSuite {
    /// Regularizer toggles: none / barrier / smoothing / both.
    Regularization,
    /// Optimization techniques: none / coarse-to-fine / coordinate descent /
    /// full (coarse-to-fine + coordinate descent + annealing).
    Optimization,
    /// Heaviside approximation families at fixed k = 0.1.
    Heaviside,
}

impl std::str::FromStr for AblateSuite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regularization" => Ok(AblateSuite::Regularization),
            "optimization" => Ok(AblateSuite::Optimization),
            "heaviside" => Ok(AblateSuite::Heaviside),
            other => Err(Error::Config(format!("unknown ablation suite '{other}'"))),
        }
    }
}

/// One cell of an ablation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateCell {
    pub pair: String,
    pub column: String,
    pub final_mse: f64,
    pub final_total: f64,
    /// Per-step MSE curve.
    pub curve: Vec<f64>,
}

pub fn ablate_csv(cells: &[AblateCell]) -> String {
    let mut s = String::from("pair,column,final_mse,final_total\n");
    for c in cells {
        s.push_str(&format!(
            "{},{},{},{}\n",
            c.pair, c.column, c.final_mse, c.final_total
        ));
    }
    s
}

pub fn ablate_curves_csv(cells: &[AblateCell]) -> String {
    let mut s = String::from("pair,column,step,mse\n");
    for c in cells {
        for (step, mse) in c.curve.iter().enumerate() {
            s.push_str(&format!("{},{},{},{}\n", c.pair, c.column, step, mse));
        }
    }
    s
}

/// Target pairs of the ablation tables.
pub const ABLATION_PAIRS: [[TargetKind; 2]; 5] = [
    [TargetKind::Black, TargetKind::White],
    [TargetKind::Black, TargetKind::Random],
    [TargetKind::Black, TargetKind::Stripes],
    [TargetKind::Random, TargetKind::Stripes],
    [TargetKind::Random, TargetKind::Random],
];

/// Opposite-side 45-degree camera pair used by all ablation rows.
pub const ABLATION_ANGLES: [(f64, f64); 2] = [(45.0, 0.0), (45.0, 180.0)];

/// Optimizer variants for the optimization-technique ablation. `base` sets
/// geometry, steps, learning rates and seed; toggles are overridden per
/// column.
pub fn optimization_variant(base: &OptimizerConfig, column: &str) -> Result<OptimizerConfig> {
    let mut cfg = base.clone();
    match column {
        "none" => {
            // fixed end resolution, simultaneous updates, no annealing
            cfg.field.start_resolution = cfg.field.end_resolution;
            cfg.coarse_to_fine.enabled = false;
            cfg.bcd.enabled = false;
            cfg.annealing.enabled = false;
        }
        "coarse_to_fine" => {
            cfg.coarse_to_fine.enabled = true;
            cfg.bcd.enabled = false;
            cfg.annealing.enabled = false;
        }
        "coord_descent" => {
            cfg.field.start_resolution = cfg.field.end_resolution;
            cfg.coarse_to_fine.enabled = false;
            cfg.bcd.enabled = true;
            cfg.annealing.enabled = false;
        }
        "full" => {
            cfg.coarse_to_fine.enabled = true;
            cfg.bcd.enabled = true;
            cfg.annealing.enabled = true;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown optimization column '{other}'"
            )))
        }
    }
    Ok(cfg)
}

fn run_cell(
    pair: [TargetKind; 2],
    column: &str,
    cfg: &OptimizerConfig,
    m: usize,
) -> Result<AblateCell> {
    let views = two_view_problem(ABLATION_ANGLES, pair, m, cfg.seed)?;
    let res: OptimizeResult = optimize(&views, cfg)?;
    Ok(AblateCell {
        pair: format!("{}/{}", pair[0].name(), pair[1].name()),
        column: column.to_string(),
        final_mse: res.final_loss.mse,
        final_total: res.final_loss.total,
        curve: res.history.iter().map(|r| r.mse).collect(),
    })
}

/// Run one ablation suite. `base` supplies geometry, steps (100 for the
/// published protocol), learning rates and seed.
pub fn ablate(suite: AblateSuite, base: &OptimizerConfig, m: usize) -> Result<Vec<AblateCell>> {
    let mut cells = Vec::new();
    match suite {
        AblateSuite::Regularization => {
            // regularizer toggles ride on the coarse-to-fine optimizer
            let opt = optimization_variant(base, "coarse_to_fine")?;
            let columns: [(&str, LossConfig); 4] = [
                ("none", LossConfig::none()),
                ("barrier", LossConfig::barrier_only()),
                ("smoothing", LossConfig::smoothing_only()),
                ("barrier_smoothing", LossConfig::default()),
            ];
            for pair in ABLATION_PAIRS {
                for (name, loss) in &columns {
                    let mut cfg = opt.clone();
                    cfg.loss = *loss;
                    cells.push(run_cell(pair, name, &cfg, m)?);
                }
            }
        }
        AblateSuite::Optimization => {
            for pair in ABLATION_PAIRS {
                for column in ["none", "coarse_to_fine", "coord_descent", "full"] {
                    let mut cfg = optimization_variant(base, column)?;
                    cfg.loss = LossConfig::none();
                    cells.push(run_cell(pair, column, &cfg, m)?);
                }
            }
        }
        AblateSuite::Heaviside => {
            // fixed k = 0.1, plain optimizer, black/white pair
            let kinds = [
                HeavisideKind::Circle,
                HeavisideKind::CircleDistance,
                HeavisideKind::Erfc,
                HeavisideKind::Tanh,
                HeavisideKind::Log,
            ];
            for kind in kinds {
                let mut cfg = optimization_variant(base, "none")?;
                cfg.loss = LossConfig::none();
                cfg.heaviside = HeavisideSchedule::fixed(kind, 0.1);
                cells.push(run_cell(
                    [TargetKind::Black, TargetKind::White],
                    kind.name(),
                    &cfg,
                    m,
                )?);
            }
        }
    }
    Ok(cells)
}

/// Baseline config for the published 100-step protocols.
pub fn protocol_config(seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        total_steps: 100,
        field: FieldShape::default(),
        coarse_to_fine: CoarseToFineConfig {
            enabled: true,
            subdivide_every: 50,
        },
        bcd: BcdConfig::default(),
        loss: LossConfig::none(),
        seed,
        ..OptimizerConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_are_reproducible_and_shaped() {
        let b = target_image(TargetKind::Black, 8, 0);
        assert!(b.pixels.iter().all(|p| *p == [0.0; 3]));
        let w = target_image(TargetKind::White, 8, 0);
        assert!(w.pixels.iter().all(|p| *p == [1.0; 3]));
        let s = target_image(TargetKind::Stripes, 8, 0);
        // columns 0,1 white; 2,3 black; period 4
        assert_eq!(s.get(3, 0), [1.0; 3]);
        assert_eq!(s.get(3, 1), [1.0; 3]);
        assert_eq!(s.get(3, 2), [0.0; 3]);
        assert_eq!(s.get(3, 3), [0.0; 3]);
        assert_eq!(s.get(3, 4), [1.0; 3]);
        let r1 = target_image(TargetKind::Random, 8, 5);
        let r2 = target_image(TargetKind::Random, 8, 5);
        assert_eq!(r1, r2);
        let r3 = target_image(TargetKind::Random, 8, 6);
        assert_ne!(r1, r3);
    }

    #[test]
    fn optimization_variants_toggle_the_right_pieces() {
        let base = protocol_config(0);
        let none = optimization_variant(&base, "none").unwrap();
        assert!(!none.coarse_to_fine.enabled);
        assert!(!none.bcd.enabled);
        assert!(!none.annealing.enabled);
        assert_eq!(none.field.start_resolution, none.field.end_resolution);

        let c2f = optimization_variant(&base, "coarse_to_fine").unwrap();
        assert!(c2f.coarse_to_fine.enabled);
        assert!(!c2f.bcd.enabled);

        let full = optimization_variant(&base, "full").unwrap();
        assert!(full.coarse_to_fine.enabled && full.bcd.enabled && full.annealing.enabled);

        assert!(optimization_variant(&base, "bogus").is_err());
    }

    #[test]
    fn sweep_rejects_empty_range() {
        let cfg = protocol_config(0);
        let fixed = ViewAngles::new(60.0, 0.0).unwrap();
        assert!(sweep(SweepAxis::Azimuth, fixed, &[], &cfg, 16).is_err());
    }

    #[test]
    fn sweep_caps_elevation_at_90() {
        let mut cfg = protocol_config(0);
        cfg.total_steps = 2;
        cfg.field.start_resolution = 4;
        cfg.field.end_resolution = 4;
        cfg.annealing.enabled = false;
        let fixed = ViewAngles::new(20.0, 0.0).unwrap();
        let rows = sweep(SweepAxis::Elevation, fixed, &[80.0], &cfg, 8).unwrap();
        assert_eq!(rows[0].elevation2_deg, 90.0);
    }
}
