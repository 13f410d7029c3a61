//! Detection decoding, BEV non-maximum suppression, and KITTI-style average
//! precision per difficulty level.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};

use crate::geometry::{iou_3d, iou_bev, normalize_angle, Box3D};
use crate::network::HeadOutput;
use crate::targets::{decode_box, direction_bit, sigmoid, AnchorGrid, BoxDelta};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    pub score: f64,
}

/// Decodes every anchor whose foreground probability reaches `score_threshold`.
/// The heading is flipped by π when the direction classifier disagrees with
/// the decoded angle's half-turn.
pub fn decode_detections(
    head: &HeadOutput,
    anchors: &AnchorGrid,
    score_threshold: f64,
) -> Vec<Detection> {
    let mut out = Vec::new();
    for (i, a) in anchors.boxes.iter().enumerate().take(head.num_anchors()) {
        let score = sigmoid(head.cls_logits[i]);
        if score < score_threshold {
            continue;
        }
        let mut bbox = decode_box(&BoxDelta::from_array(head.deltas(i)), a);
        let dir = head.dir(i);
        let predicted = usize::from(dir[1] > dir[0]);
        if predicted != direction_bit(bbox.theta, a.theta) {
            bbox.theta = normalize_angle(bbox.theta + PI);
        }
        out.push(Detection { bbox, score });
    }
    out
}

/// Greedy suppression in descending score order (stable for equal scores);
/// a detection is dropped when its BEV IoU with a kept one exceeds the threshold.
pub fn nms_bev(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = dets[i];
        if kept
            .iter()
            .all(|k| iou_bev(&k.bbox, &d.bbox) <= iou_threshold)
        {
            kept.push(d);
        }
    }
    kept
}

/// Difficulty level; the derived order is easiest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    None,
}

impl Difficulty {
    pub const LEVELS: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
            Difficulty::None => "none",
        }
    }

    /// True when an object of this level counts when evaluating `level`.
    pub fn counts_for(self, level: Difficulty) -> bool {
        self != Difficulty::None && self <= level
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Image-space annotation used to grade difficulty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtMeta {
    /// 2D box height in pixels.
    pub bbox_height: f64,
    /// 0 visible, 1 partly, 2 largely occluded, 3 unknown.
    pub occlusion: u8,
    pub truncation: f64,
}

struct LevelRule {
    level: Difficulty,
    min_height: f64,
    max_occlusion: u8,
    max_truncation: f64,
}

const LEVEL_RULES: [LevelRule; 3] = [
    LevelRule {
        level: Difficulty::Easy,
        min_height: 40.0,
        max_occlusion: 0,
        max_truncation: 0.15,
    },
    LevelRule {
        level: Difficulty::Moderate,
        min_height: 25.0,
        max_occlusion: 1,
        max_truncation: 0.30,
    },
    LevelRule {
        level: Difficulty::Hard,
        min_height: 25.0,
        max_occlusion: 2,
        max_truncation: 0.50,
    },
];

/// Easiest level whose height, occlusion, and truncation limits the object meets.
pub fn classify_difficulty(meta: &GtMeta) -> Difficulty {
    LEVEL_RULES
        .iter()
        .find(|r| {
            meta.bbox_height >= r.min_height
                && meta.occlusion <= r.max_occlusion
                && meta.truncation <= r.max_truncation
        })
        .map_or(Difficulty::None, |r| r.level)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: Box3D,
    pub difficulty: Difficulty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApMode {
    /// Recall 0, 0.1, …, 1.
    Point11,
    /// Recall 1/40, …, 1.
    Point40,
}

impl ApMode {
    /// Recall points as `(numerator, denominator)`.
    fn recall_points(self) -> impl Iterator<Item = (usize, usize)> {
        let (start, n) = match self {
            ApMode::Point11 => (0, 10),
            ApMode::Point40 => (1, 40),
        };
        (start..=n).map(move |i| (i, n))
    }

    pub fn points(self) -> usize {
        match self {
            ApMode::Point11 => 11,
            ApMode::Point40 => 40,
        }
    }
}

impl fmt::Display for ApMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.points())
    }
}

/// One point of the precision-recall curve, recorded after each counted detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub score: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    /// Percent.
    pub ap: f64,
    pub num_gt: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub curve: Vec<PrPoint>,
}

impl ApResult {
    pub fn precision_recall(&self) -> Vec<(f64, f64)> {
        self.curve
            .iter()
            .map(|p| {
                let prec = p.tp as f64 / (p.tp + p.fp) as f64;
                let rec = if self.num_gt == 0 {
                    0.0
                } else {
                    p.tp as f64 / self.num_gt as f64
                };
                (prec, rec)
            })
            .collect()
    }
}

/// Max-interpolated precision averaged over the mode's recall points, in percent.
pub fn interpolated_ap(curve: &[PrPoint], num_gt: usize, mode: ApMode) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, n) in mode.recall_points() {
        count += 1;
        let best = curve
            .iter()
            .filter(|p| p.tp * n >= i * num_gt)
            .map(|p| p.tp as f64 / (p.tp + p.fp) as f64)
            .fold(0.0, f64::max);
        total += best;
    }
    100.0 * total / count as f64
}

/// Greedy matching over all frames in descending score order (ties by frame,
/// then detection index). Detections that only match objects outside the
/// evaluated level are neither true nor false positives.
pub fn average_precision(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruth>],
    level: Difficulty,
    iou_fn: impl Fn(&Box3D, &Box3D) -> f64,
    iou_threshold: f64,
    mode: ApMode,
) -> ApResult {
    let mut order: Vec<(usize, usize)> = dets
        .iter()
        .enumerate()
        .flat_map(|(f, ds)| (0..ds.len()).map(move |d| (f, d)))
        .collect();
    order.sort_by(|a, b| {
        dets[b.0][b.1]
            .score
            .total_cmp(&dets[a.0][a.1].score)
            .then(a.cmp(b))
    });

    let num_gt = gts
        .iter()
        .flatten()
        .filter(|g| g.difficulty.counts_for(level))
        .count();
    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let (mut tp, mut fp) = (0, 0);
    let mut curve = Vec::new();
    for (f, d) in order {
        let det = &dets[f][d];
        let frame_gts: &[GroundTruth] = gts.get(f).map_or(&[], Vec::as_slice);
        let mut best: Option<(usize, f64)> = None;
        let mut dont_care = false;
        for (g, gt) in frame_gts.iter().enumerate() {
            let iou = iou_fn(&det.bbox, &gt.bbox);
            if iou < iou_threshold {
                continue;
            }
            if !gt.difficulty.counts_for(level) {
                dont_care = true;
            } else if !matched[f][g] && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, _)) => {
                matched[f][g] = true;
                tp += 1;
            }
            None if dont_care => continue,
            None => fp += 1,
        }
        curve.push(PrPoint {
            score: det.score,
            tp,
            fp,
        });
    }
    ApResult {
        ap: interpolated_ap(&curve, num_gt, mode),
        num_gt,
        tp,
        fp,
        fn_: num_gt - tp,
        curve,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelReport {
    pub difficulty: Difficulty,
    pub bev: ApResult,
    pub d3: ApResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: ApMode,
    pub iou_threshold: f64,
    pub num_frames: usize,
    pub levels: Vec<LevelReport>,
}

impl EvalReport {
    pub fn level(&self, d: Difficulty) -> &LevelReport {
        self.levels
            .iter()
            .find(|l| l.difficulty == d)
            .expect("all three levels are evaluated")
    }

    pub fn map_3d(&self) -> f64 {
        self.levels.iter().map(|l| l.d3.ap).sum::<f64>() / self.levels.len() as f64
    }

    pub fn map_bev(&self) -> f64 {
        self.levels.iter().map(|l| l.bev.ap).sum::<f64>() / self.levels.len() as f64
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{}-point AP @ IoU {:.2} over {} frame(s)",
            self.mode, self.iou_threshold, self.num_frames
        );
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>8} {:>6} {:>6} {:>6}",
            "level", "AP_3D", "AP_BEV", "TP", "FP", "FN"
        );
        for l in &self.levels {
            let _ = writeln!(
                s,
                "{:<10} {:>8.2} {:>8.2} {:>6} {:>6} {:>6}",
                l.difficulty.name(),
                l.d3.ap,
                l.bev.ap,
                l.bev.tp,
                l.bev.fp,
                l.bev.fn_
            );
        }
        let _ = writeln!(
            s,
            "{:<10} {:>8.2} {:>8.2}",
            "mAP",
            self.map_3d(),
            self.map_bev()
        );
        s
    }

    /// `key=value` lines, one metric per line.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode={}", self.mode);
        let _ = writeln!(s, "iou_threshold={}", self.iou_threshold);
        let _ = writeln!(s, "frames={}", self.num_frames);
        for l in &self.levels {
            let n = l.difficulty.name();
            for (metric, r) in [("3d", &l.d3), ("bev", &l.bev)] {
                let _ = writeln!(s, "{n}.ap_{metric}={:.6}", r.ap);
                let _ = writeln!(s, "{n}.{metric}.gt={}", r.num_gt);
                let _ = writeln!(s, "{n}.{metric}.tp={}", r.tp);
                let _ = writeln!(s, "{n}.{metric}.fp={}", r.fp);
                let _ = writeln!(s, "{n}.{metric}.fn={}", r.fn_);
            }
        }
        let _ = writeln!(s, "map_3d={:.6}", self.map_3d());
        let _ = writeln!(s, "map_bev={:.6}", self.map_bev());
        s
    }
}

/// AP_3D and AP_BEV for every difficulty level at the given IoU threshold.
pub fn evaluate(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruth>],
    iou_threshold: f64,
    mode: ApMode,
) -> EvalReport {
    let levels = Difficulty::LEVELS
        .iter()
        .map(|&difficulty| LevelReport {
            difficulty,
            bev: average_precision(dets, gts, difficulty, iou_bev, iou_threshold, mode),
            d3: average_precision(dets, gts, difficulty, iou_3d, iou_threshold, mode),
        })
        .collect();
    EvalReport {
        mode,
        iou_threshold,
        num_frames: dets.len().max(gts.len()),
        levels,
    }
}
