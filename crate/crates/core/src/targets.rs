//! Anchors, target assignment, the anchor-relative box codec, and the
//! detection losses with analytic gradients with respect to head outputs.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::geometry::{iou_bev, Box3D};
use crate::network::{HeadOutput, BOX_PARAMS, DIR_CLASSES};
use crate::pillars::GridConfig;

/// Size, height, and yaw set of the pedestrian anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSpec {
    pub l: f64,
    pub w: f64,
    pub h: f64,
    /// Center height.
    pub z: f64,
    pub rotations: Vec<f64>,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        Self::pedestrian()
    }
}

impl AnchorSpec {
    pub fn pedestrian() -> Self {
        Self {
            l: 0.8,
            w: 0.6,
            h: 1.73,
            z: -0.6,
            rotations: vec![0.0, FRAC_PI_2],
        }
    }

    pub fn per_cell(&self) -> usize {
        self.rotations.len()
    }
}

/// Anchors at every BEV cell center; flat index `(x_index * width + y_index) * per_cell + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub width: usize,
    pub height: usize,
    pub per_cell: usize,
    pub boxes: Vec<Box3D>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn flat_index(&self, x_index: usize, y_index: usize, a: usize) -> usize {
        (x_index * self.width + y_index) * self.per_cell + a
    }
}

pub fn generate_anchors(cfg: &GridConfig, spec: &AnchorSpec) -> AnchorGrid {
    let (nx, ny) = (cfg.nx(), cfg.ny());
    let mut boxes = Vec::with_capacity(nx * ny * spec.per_cell());
    for xi in 0..nx {
        for yi in 0..ny {
            let (x, y) = cfg.cell_center(xi, yi);
            for &theta in &spec.rotations {
                boxes.push(Box3D::new(x, y, spec.z, spec.l, spec.w, spec.h, theta));
            }
        }
    }
    AnchorGrid {
        width: ny,
        height: nx,
        per_cell: spec.per_cell(),
        boxes,
    }
}

/// Anchor-relative box offsets.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dl: f64,
    pub dw: f64,
    pub dh: f64,
    pub dtheta: f64,
}

impl BoxDelta {
    pub fn to_array(self) -> [f64; BOX_PARAMS] {
        [
            self.dx,
            self.dy,
            self.dz,
            self.dl,
            self.dw,
            self.dh,
            self.dtheta,
        ]
    }

    pub fn from_array(a: [f64; BOX_PARAMS]) -> Self {
        Self {
            dx: a[0],
            dy: a[1],
            dz: a[2],
            dl: a[3],
            dw: a[4],
            dh: a[5],
            dtheta: a[6],
        }
    }
}

/// BEV diagonal of the anchor, the normalizer of the planar offsets.
pub fn anchor_diagonal(a: &Box3D) -> f64 {
    a.l.hypot(a.w)
}

pub fn encode_box(gt: &Box3D, a: &Box3D) -> BoxDelta {
    let d = anchor_diagonal(a);
    BoxDelta {
        dx: (gt.x - a.x) / d,
        dy: (gt.y - a.y) / d,
        dz: (gt.z - a.z) / a.h,
        dl: (gt.l / a.l).ln(),
        dw: (gt.w / a.w).ln(),
        dh: (gt.h / a.h).ln(),
        dtheta: gt.theta - a.theta,
    }
}

pub fn decode_box(delta: &BoxDelta, a: &Box3D) -> Box3D {
    let d = anchor_diagonal(a);
    Box3D::new(
        delta.dx * d + a.x,
        delta.dy * d + a.y,
        delta.dz * a.h + a.z,
        delta.dl.exp() * a.l,
        delta.dw.exp() * a.w,
        delta.dh.exp() * a.h,
        a.theta + delta.dtheta,
    )
}

/// Direction class of a heading relative to its anchor: 1 when
/// `theta - anchor_theta` lies in `[0, π)` modulo 2π, else 0.
pub fn direction_bit(theta: f64, anchor_theta: f64) -> usize {
    let rel = (theta - anchor_theta).rem_euclid(2.0 * PI);
    usize::from(rel < PI)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Regression weight.
    pub beta_reg: f64,
    /// Direction weight.
    pub beta_dir: f64,
    /// Classification weight.
    pub beta_cls: f64,
    pub match_iou_pos: f64,
    pub match_iou_neg: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            beta_reg: 2.0,
            beta_dir: 0.2,
            beta_cls: 1.0,
            match_iou_pos: 0.5,
            match_iou_neg: 0.35,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.alpha < 1.0
            && self.gamma >= 0.0
            && self.beta_reg > 0.0
            && self.beta_dir > 0.0
            && self.beta_cls > 0.0
            && 0.0 <= self.match_iou_neg
            && self.match_iou_neg < self.match_iou_pos
            && self.match_iou_pos <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid loss configuration {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive { gt: usize },
    Negative,
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetAssignment {
    pub labels: Vec<AnchorLabel>,
    /// Regression target of every positive anchor (default elsewhere).
    pub box_targets: Vec<BoxDelta>,
    /// Direction class of every positive anchor (0 elsewhere).
    pub dir_targets: Vec<usize>,
    pub num_pos: usize,
}

impl TargetAssignment {
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().enumerate().filter_map(|(i, l)| match l {
            AnchorLabel::Positive { gt } => Some((i, *gt)),
            _ => None,
        })
    }
}

/// Labels anchors by BEV IoU: positive at `≥ match_iou_pos` (matched to the
/// best gt), negative below `match_iou_neg`, ignored in between. Every gt
/// additionally claims its best still-unclaimed overlapping anchor.
pub fn assign_targets(anchors: &AnchorGrid, gts: &[Box3D], cfg: &LossConfig) -> TargetAssignment {
    let n = anchors.len();
    let mut best_iou = vec![0.0f64; n];
    let mut best_gt = vec![usize::MAX; n];
    // Per gt: anchors with positive overlap.
    let mut overlaps: Vec<Vec<(usize, f64)>> = vec![Vec::new(); gts.len()];
    for (j, gt) in gts.iter().enumerate() {
        for (i, a) in anchors.boxes.iter().enumerate() {
            let iou = iou_bev(a, gt);
            if iou <= 0.0 {
                continue;
            }
            overlaps[j].push((i, iou));
            if iou > best_iou[i] {
                best_iou[i] = iou;
                best_gt[i] = j;
            }
        }
    }
    let mut labels: Vec<AnchorLabel> = (0..n)
        .map(|i| {
            if best_iou[i] >= cfg.match_iou_pos {
                AnchorLabel::Positive { gt: best_gt[i] }
            } else if best_iou[i] < cfg.match_iou_neg {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignored
            }
        })
        .collect();

    let mut forced = vec![false; n];
    for (j, cands) in overlaps.iter_mut().enumerate() {
        cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        if let Some(&(i, _)) = cands.iter().find(|(i, _)| !forced[*i]) {
            forced[i] = true;
            labels[i] = AnchorLabel::Positive { gt: j };
        }
    }

    let mut box_targets = vec![BoxDelta::default(); n];
    let mut dir_targets = vec![0usize; n];
    let mut num_pos = 0;
    for (i, l) in labels.iter().enumerate() {
        if let AnchorLabel::Positive { gt } = *l {
            let a = &anchors.boxes[i];
            box_targets[i] = encode_box(&gts[gt], a);
            dir_targets[i] = direction_bit(gts[gt].theta, a.theta);
            num_pos += 1;
        }
    }
    TargetAssignment {
        labels,
        box_targets,
        dir_targets,
        num_pos,
    }
}

/// Value and derivative of the smooth L1 function with transition at 1.
pub fn smooth_l1(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    }
}

/// Smooth L1 over the six location/size residuals plus smooth L1 of the sine
/// of the angle residual. Returns the gradient with respect to `pred`.
pub fn regression_loss(pred: &BoxDelta, target: &BoxDelta) -> (f64, [f64; BOX_PARAMS]) {
    let (p, t) = (pred.to_array(), target.to_array());
    let mut grad = [0.0; BOX_PARAMS];
    let mut value = 0.0;
    for k in 0..BOX_PARAMS - 1 {
        let (v, g) = smooth_l1(p[k] - t[k]);
        value += v;
        grad[k] = g;
    }
    let u = p[6] - t[6];
    let (v, g) = smooth_l1(u.sin());
    value += v;
    grad[6] = g * u.cos();
    (value, grad)
}

/// Softmax cross-entropy over the two direction logits; gradient is
/// `softmax - one_hot(target)`.
pub fn direction_loss(logits: [f64; DIR_CLASSES], target: usize) -> (f64, [f64; DIR_CLASSES]) {
    let m = logits[0].max(logits[1]);
    let e = logits.map(|z| (z - m).exp());
    let sum = e[0] + e[1];
    let log_sum = sum.ln() + m;
    let value = log_sum - logits[target];
    let mut grad = e.map(|v| v / sum);
    grad[target] -= 1.0;
    (value, grad)
}

const PROB_CLAMP: f64 = 1e-7;

/// Focal loss of an anchor whose logistic foreground probability is `p`.
/// Returns the value and its derivative with respect to the logit.
pub fn focal_loss(p: f64, is_positive: bool, cfg: &LossConfig) -> Result<(f64, f64)> {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DomainError(p));
    }
    let (pt, alpha_t, sign) = if is_positive {
        (p, cfg.alpha, 1.0)
    } else {
        (1.0 - p, 1.0 - cfg.alpha, -1.0)
    };
    let q = 1.0 - pt;
    let modulator = q.powf(cfg.gamma);
    let value = -alpha_t * modulator * pt.ln();
    // d/dz with dp_t/dz = ±p_t(1 - p_t).
    let grad = sign * alpha_t * modulator * (cfg.gamma * pt * pt.ln() - q);
    Ok((value, grad))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Total loss and its parts; `grad` has the layout of the head output.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// Unnormalized regression sum over positives.
    pub reg: f64,
    /// Unnormalized direction sum over positives.
    pub dir: f64,
    /// Unnormalized focal sum over positives and negatives.
    pub cls: f64,
    pub num_pos: usize,
    pub grad: HeadOutput,
}

/// `(β_reg·L_reg + β_dir·L_dir + β_cls·L_cls) / max(N_pos, 1)`.
pub fn total_loss(
    head: &HeadOutput,
    assignment: &TargetAssignment,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    let n = head.num_anchors();
    if assignment.labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} anchor labels for {n} head anchors",
            assignment.labels.len()
        )));
    }
    let norm = assignment.num_pos.max(1) as f64;
    let mut grad = HeadOutput::zeros(head.width, head.height, head.anchors);
    grad.stride = head.stride;
    let (mut reg, mut dir, mut cls) = (0.0, 0.0, 0.0);
    for (i, label) in assignment.labels.iter().enumerate() {
        let positive = match label {
            AnchorLabel::Ignored => continue,
            AnchorLabel::Negative => false,
            AnchorLabel::Positive { .. } => true,
        };
        let (v, g) = focal_loss(sigmoid(head.cls_logits[i]), positive, cfg)?;
        cls += v;
        grad.cls_logits[i] = cfg.beta_cls * g / norm;
        if positive {
            let pred = BoxDelta::from_array(head.deltas(i));
            let (v, g) = regression_loss(&pred, &assignment.box_targets[i]);
            reg += v;
            for k in 0..BOX_PARAMS {
                grad.box_deltas[i * BOX_PARAMS + k] = cfg.beta_reg * g[k] / norm;
            }
            let (v, g) = direction_loss(head.dir(i), assignment.dir_targets[i]);
            dir += v;
            for k in 0..DIR_CLASSES {
                grad.dir_logits[i * DIR_CLASSES + k] = cfg.beta_dir * g[k] / norm;
            }
        }
    }
    Ok(LossOutput {
        value: (cfg.beta_reg * reg + cfg.beta_dir * dir + cfg.beta_cls * cls) / norm,
        reg,
        dir,
        cls,
        num_pos: assignment.num_pos,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn anchor() -> Box3D {
        Box3D::new(0.0, 0.0, -0.6, 0.8, 0.6, 1.73, 0.0)
    }

    #[test]
    fn anchor_grid_layout() {
        let cfg = GridConfig::kitti_pedestrian();
        let grid = generate_anchors(&cfg, &AnchorSpec::pedestrian());
        assert_eq!(grid.len(), 150_000);
        let a0 = grid.boxes[0];
        assert!((a0.x - 0.08).abs() < 1e-12 && (a0.y + 19.92).abs() < 1e-12);
        assert_eq!(a0.theta, 0.0);
        assert_eq!(grid.boxes[1].theta, FRAC_PI_2);
        for b in &grid.boxes {
            assert_eq!((b.w, b.l, b.h, b.z), (0.6, 0.8, 1.73, -0.6));
        }
        let i = grid.flat_index(3, 7, 1);
        let (x, y) = cfg.cell_center(3, 7);
        assert_eq!((grid.boxes[i].x, grid.boxes[i].y), (x, y));
    }

    #[test]
    fn codec_examples() {
        let a = anchor();
        assert_eq!(encode_box(&a, &a).to_array(), [0.0; 7]);
        let gt = Box3D::new(1.0, 0.5, -0.5, 0.8, 0.6, 1.73, 0.1);
        let d = encode_box(&gt, &a).to_array();
        let want = [1.0, 0.5, 0.1 / 1.73, 0.0, 0.0, 0.0, 0.1];
        for (g, w) in d.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{d:?}");
        }
        assert!((d[2] - 0.05780).abs() < 1e-5);
        let big = Box3D::new(0.0, 0.0, -0.6, 1.6, 1.2, 3.46, 0.0);
        let d = encode_box(&big, &a);
        for v in [d.dl, d.dw, d.dh] {
            assert!((v - LN_2).abs() < 1e-12);
        }
        assert_eq!(decode_box(&BoxDelta::default(), &a), a);
        let back = decode_box(
            &BoxDelta {
                dl: LN_2,
                ..Default::default()
            },
            &a,
        );
        assert!((back.l - 1.6).abs() < 1e-12);
    }

    #[test]
    fn direction_bits() {
        assert_eq!(direction_bit(-0.1, 0.0), 0);
        assert_eq!(direction_bit(0.0, 0.0), 1);
        assert_eq!(direction_bit(3.0, 0.0), 1);
        assert_eq!(direction_bit(FRAC_PI_2 - 0.1, FRAC_PI_2), 0);
        assert_eq!(direction_bit(-3.0, FRAC_PI_2), 1);
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1(0.0), (0.0, 0.0));
        assert_eq!(smooth_l1(0.5), (0.125, 0.5));
        assert_eq!(smooth_l1(2.0), (1.5, 1.0));
        assert_eq!(smooth_l1(-2.0), (1.5, -1.0));
    }

    #[test]
    fn regression_examples() {
        let t = BoxDelta::from_array([0.1, -0.2, 0.3, 0.0, 0.1, -0.1, 0.4]);
        assert_eq!(regression_loss(&t, &t).0, 0.0);
        let flipped = BoxDelta {
            dtheta: t.dtheta + PI,
            ..t
        };
        assert!(regression_loss(&flipped, &t).0 < 1e-24);
        let shifted = BoxDelta {
            dx: t.dx + 0.5,
            ..t
        };
        assert!((regression_loss(&shifted, &t).0 - 0.125).abs() < 1e-12);
    }

    #[test]
    fn direction_examples() {
        let (v, _) = direction_loss([20.0, -20.0], 0);
        assert!(v < 1e-15);
        let (v, g) = direction_loss([0.0, 0.0], 1);
        assert!((v - LN_2).abs() < 1e-15);
        assert_eq!(g, [0.5, -0.5]);
    }

    #[test]
    fn focal_examples() {
        let cfg = LossConfig::default();
        let (v, _) = focal_loss(0.5, true, &cfg).unwrap();
        assert!((v - 0.25 * 0.25 * LN_2).abs() < 1e-15);
        assert!((v - 0.04332).abs() < 1e-5);
        assert!(focal_loss(1.0 - 1e-12, true, &cfg).unwrap().0 < 1e-20);
        let ce = LossConfig {
            gamma: 0.0,
            alpha: 0.999_999_999,
            ..cfg.clone()
        };
        let (v, _) = focal_loss(0.3, true, &ce).unwrap();
        assert!((v + 0.3f64.ln()).abs() < 1e-8);
        assert!(matches!(
            focal_loss(f64::NAN, true, &cfg),
            Err(Error::DomainError(_))
        ));
    }

    #[test]
    fn no_gts_all_negative() {
        let cfg = GridConfig {
            x_range: (0.0, 1.6),
            y_range: (-0.8, 0.8),
            ..GridConfig::kitti_pedestrian()
        };
        let anchors = generate_anchors(&cfg, &AnchorSpec::pedestrian());
        let asg = assign_targets(&anchors, &[], &LossConfig::default());
        assert_eq!(asg.num_pos, 0);
        assert!(asg.labels.iter().all(|l| *l == AnchorLabel::Negative));
    }

    #[test]
    fn exact_anchor_match_has_zero_delta() {
        let cfg = GridConfig {
            x_range: (0.0, 1.6),
            y_range: (-0.8, 0.8),
            ..GridConfig::kitti_pedestrian()
        };
        let anchors = generate_anchors(&cfg, &AnchorSpec::pedestrian());
        let k = anchors.flat_index(4, 5, 1);
        let gt = anchors.boxes[k];
        let asg = assign_targets(&anchors, &[gt], &LossConfig::default());
        assert_eq!(asg.labels[k], AnchorLabel::Positive { gt: 0 });
        assert_eq!(asg.box_targets[k].to_array(), [0.0; 7]);
    }

    #[test]
    fn weak_overlap_forces_single_positive() {
        let cfg = GridConfig {
            x_range: (0.0, 3.2),
            y_range: (-1.6, 1.6),
            ..GridConfig::kitti_pedestrian()
        };
        let anchors = generate_anchors(&cfg, &AnchorSpec::pedestrian());
        // A small box: its best IoU against any anchor is well below the thresholds.
        let gt = Box3D::new(1.23, 0.11, -0.6, 0.3, 0.25, 1.7, 0.3);
        let ious: Vec<f64> = anchors.boxes.iter().map(|a| iou_bev(a, &gt)).collect();
        let max = ious.iter().cloned().fold(0.0, f64::max);
        assert!(max > 0.0 && max < 0.35, "max IoU {max}");
        let argmax = ious.iter().position(|&v| v == max).unwrap();
        let asg = assign_targets(&anchors, &[gt], &LossConfig::default());
        assert_eq!(asg.num_pos, 1);
        assert_eq!(asg.labels[argmax], AnchorLabel::Positive { gt: 0 });
    }

    #[test]
    fn empty_scene_loss_uses_unit_normalizer() {
        let head = HeadOutput {
            cls_logits: vec![-1.0, 0.5],
            ..HeadOutput::zeros(1, 1, 2)
        };
        let asg = TargetAssignment {
            labels: vec![AnchorLabel::Negative; 2],
            box_targets: vec![BoxDelta::default(); 2],
            dir_targets: vec![0; 2],
            num_pos: 0,
        };
        let cfg = LossConfig::default();
        let out = total_loss(&head, &asg, &cfg).unwrap();
        let want: f64 = [-1.0, 0.5]
            .iter()
            .map(|&z| focal_loss(sigmoid(z), false, &cfg).unwrap().0)
            .sum();
        assert!((out.value - want).abs() < 1e-15);
    }
}
