//! Central finite-difference checks of the loss gradients on small random scenes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::Box3D;
use crate::network::{HeadOutput, BOX_PARAMS, DIR_CLASSES};
use crate::pillars::GridConfig;
use crate::targets::{
    assign_targets, generate_anchors, total_loss, AnchorGrid, AnchorSpec, LossConfig, LossOutput,
    TargetAssignment,
};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub scenes: usize,
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 100,
            step: 1e-4,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
        }
    }
}

/// Loss terms checked separately; each is a weighted, normalized part of the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Regression,
    Direction,
    Classification,
    Total,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [
        LossTerm::Regression,
        LossTerm::Direction,
        LossTerm::Classification,
        LossTerm::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Regression => "reg",
            LossTerm::Direction => "dir",
            LossTerm::Classification => "cls",
            LossTerm::Total => "total",
        }
    }

    fn value(self, out: &LossOutput, cfg: &LossConfig) -> f64 {
        let norm = out.num_pos.max(1) as f64;
        match self {
            LossTerm::Regression => cfg.beta_reg * out.reg / norm,
            LossTerm::Direction => cfg.beta_dir * out.dir / norm,
            LossTerm::Classification => cfg.beta_cls * out.cls / norm,
            LossTerm::Total => out.value,
        }
    }

    /// Which flattened head entries this term depends on.
    fn owns(self, k: usize, anchors: usize) -> bool {
        let cls_end = anchors;
        let box_end = cls_end + anchors * BOX_PARAMS;
        match self {
            LossTerm::Classification => k < cls_end,
            LossTerm::Regression => (cls_end..box_end).contains(&k),
            LossTerm::Direction => k >= box_end,
            LossTerm::Total => true,
        }
    }
}

/// A random head output with its anchors and targets.
#[derive(Debug, Clone)]
pub struct GradScene {
    pub anchors: AnchorGrid,
    pub gts: Vec<Box3D>,
    pub assignment: TargetAssignment,
    pub head: HeadOutput,
}

pub fn gradcheck_grid() -> GridConfig {
    GridConfig {
        x_range: (0.0, 0.96),
        y_range: (-0.48, 0.48),
        ..GridConfig::kitti_pedestrian()
    }
}

/// Residual offset kept at least this far from the smooth-L1 transition.
const KINK_MARGIN: f64 = 1e-2;

pub fn random_scene(rng: &mut impl Rng, cfg: &LossConfig) -> GradScene {
    let grid = gradcheck_grid();
    let anchors = generate_anchors(&grid, &AnchorSpec::pedestrian());
    let n_gt = rng.gen_range(0..=3);
    let gts: Vec<Box3D> = (0..n_gt)
        .map(|_| {
            Box3D::new(
                rng.gen_range(grid.x_range.0..grid.x_range.1),
                rng.gen_range(grid.y_range.0..grid.y_range.1),
                rng.gen_range(-0.9..-0.3),
                rng.gen_range(0.6..1.0),
                rng.gen_range(0.45..0.75),
                rng.gen_range(1.5..1.9),
                rng.gen_range(-PI..PI),
            )
        })
        .collect();
    let assignment = assign_targets(&anchors, &gts, cfg);
    let mut head = HeadOutput::zeros(anchors.width, anchors.height, anchors.per_cell);
    head.cls_logits
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-4.0..4.0));
    head.dir_logits
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-3.0..3.0));
    for i in 0..anchors.len() {
        let target = assignment.box_targets[i].to_array();
        for k in 0..BOX_PARAMS {
            let r = loop {
                let r: f64 = rng.gen_range(-2.5..2.5);
                if (r.abs() - 1.0).abs() > KINK_MARGIN {
                    break r;
                }
            };
            head.box_deltas[i * BOX_PARAMS + k] = if k == BOX_PARAMS - 1 {
                target[k] + rng.gen_range(-3.0..3.0)
            } else {
                target[k] + r
            };
        }
    }
    GradScene {
        anchors,
        gts,
        assignment,
        head,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub scene: usize,
    pub term: LossTerm,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradcheckReport {
    pub scenes: usize,
    pub comparisons: usize,
    /// Largest `|a - n| / max(rel_tol * max(|a|, |n|), abs_tol)`; at most 1 on pass.
    pub worst_ratio: f64,
    pub mismatches: Vec<GradMismatch>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares analytic and central-difference gradients for every loss term
/// and every head output entry of one scene.
pub fn check_scene(
    scene: &GradScene,
    loss_cfg: &LossConfig,
    cfg: &GradcheckConfig,
    index: usize,
    report: &mut GradcheckReport,
) -> Result<()> {
    let base = total_loss(&scene.head, &scene.assignment, loss_cfg)?;
    let analytic = base.grad.flatten();
    let a = scene.head.num_anchors();
    debug_assert_eq!(analytic.len(), a * (1 + BOX_PARAMS + DIR_CLASSES));
    let mut head = scene.head.clone();
    for k in 0..analytic.len() {
        let orig = *head.flat_mut(k);
        *head.flat_mut(k) = orig + cfg.step;
        let plus = total_loss(&head, &scene.assignment, loss_cfg)?;
        *head.flat_mut(k) = orig - cfg.step;
        let minus = total_loss(&head, &scene.assignment, loss_cfg)?;
        *head.flat_mut(k) = orig;
        for term in LossTerm::ALL {
            let numeric =
                (term.value(&plus, loss_cfg) - term.value(&minus, loss_cfg)) / (2.0 * cfg.step);
            let an = if term.owns(k, a) { analytic[k] } else { 0.0 };
            let bound = (cfg.rel_tol * an.abs().max(numeric.abs())).max(cfg.abs_tol);
            let ratio = (an - numeric).abs() / bound;
            report.comparisons += 1;
            report.worst_ratio = report.worst_ratio.max(ratio);
            if ratio > 1.0 {
                report.mismatches.push(GradMismatch {
                    scene: index,
                    term,
                    index: k,
                    analytic: an,
                    numeric,
                });
            }
        }
    }
    report.scenes += 1;
    Ok(())
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let loss_cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradcheckReport::default();
    for s in 0..cfg.scenes {
        let scene = random_scene(&mut rng, &loss_cfg);
        check_scene(&scene, &loss_cfg, cfg, s, &mut report)?;
    }
    Ok(report)
}
