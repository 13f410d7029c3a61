//! Deterministic synthetic scenes: box-shaped pedestrian clusters, narrow
//! tall poles, ground clutter, and a segmentation map rendered from the same
//! geometry.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::kitti::{box_corners, LabelObject};
use super::scene::SceneBundle;
use crate::error::{Error, Result};
use crate::eval::Detection;
use crate::geometry::{Box3D, Calibration, Point, PointCloud};
use crate::painting::{SegScoreMap, BACKGROUND_SCORES, NUM_CLASSES};

/// Ground height in the LiDAR frame.
pub const GROUND_Z: f64 = -1.5;
/// Class scores of a correctly segmented pedestrian pixel.
pub const PEDESTRIAN_SCORES: [f32; NUM_CLASSES] = [0.9, 0.03, 0.02, 0.05];
const MIN_SEPARATION: f64 = 1.5;
const PLACEMENT_ATTEMPTS: usize = 200;

pub fn synth_calibration() -> Calibration {
    Calibration::kitti_like(721.5, 609.6, 172.9, 1242, 375)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSceneSpec {
    pub seed: u64,
    pub pedestrians: usize,
    pub poles: usize,
    /// Number of ground points scattered over the scene.
    pub clutter: usize,
    /// Standard deviation of the per-point position jitter, meters.
    pub noise: f64,
    /// Probability that a pedestrian pixel is labeled pedestrian.
    pub fidelity: f64,
    /// Forward distance band for objects, meters.
    pub range: (f64, f64),
    /// Largest lateral offset for objects, meters.
    pub lateral_limit: f64,
}

impl Default for SynthSceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            pedestrians: 3,
            poles: 2,
            clutter: 1500,
            noise: 0.01,
            fidelity: 1.0,
            range: (8.0, 24.0),
            lateral_limit: 12.0,
        }
    }
}

impl SynthSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fidelity) {
            return Err(Error::InvalidConfig(format!(
                "fidelity {} outside [0, 1]",
                self.fidelity
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise {} must be a finite non-negative value",
                self.noise
            )));
        }
        if !(self.range.0 > 0.0 && self.range.0 < self.range.1 && self.lateral_limit > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "placement band {:?} / lateral {} is empty",
                self.range, self.lateral_limit
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Pedestrian,
    Pole,
}

struct Placed {
    kind: Kind,
    bbox: Box3D,
    rect: [u32; 4],
    points: Vec<Point>,
}

fn sample_object(
    kind: Kind,
    rng: &mut ChaCha8Rng,
    spec: &SynthSceneSpec,
    jitter: &Normal<f64>,
) -> (Box3D, Vec<Point>) {
    let x = rng.gen_range(spec.range.0..spec.range.1);
    let lat = (0.6 * x).min(spec.lateral_limit);
    let y = rng.gen_range(-lat..lat);
    let n = ((2400.0 / x) as usize).clamp(40, 400);
    let mut pts = Vec::with_capacity(n);
    let bbox = match kind {
        Kind::Pedestrian => {
            let (l, w, h) = (
                rng.gen_range(0.7..0.9),
                rng.gen_range(0.5..0.7),
                rng.gen_range(1.6..1.85),
            );
            let b = Box3D::new(x, y, GROUND_Z + 0.5 * h, l, w, h, rng.gen_range(-PI..PI));
            let (s, c) = b.theta.sin_cos();
            for _ in 0..n {
                let u = rng.gen_range(-0.5..0.5) * l;
                let v = rng.gen_range(-0.5..0.5) * w;
                let t = rng.gen_range(-0.5..0.5) * h;
                pts.push((b.x + c * u - s * v, b.y + s * u + c * v, b.z + t));
            }
            b
        }
        Kind::Pole => {
            let (r, h) = (rng.gen_range(0.04..0.1), rng.gen_range(2.4..3.2));
            for _ in 0..n {
                let a = rng.gen_range(-PI..PI);
                let rho = r * rng.gen::<f64>().sqrt();
                pts.push((
                    x + rho * a.cos(),
                    y + rho * a.sin(),
                    GROUND_Z + rng.gen_range(0.0..h),
                ));
            }
            Box3D::new(x, y, GROUND_Z + 0.5 * h, 2.0 * r, 2.0 * r, h, 0.0)
        }
    };
    let points = pts
        .into_iter()
        .map(|(px, py, pz)| {
            Point::new(
                (px + jitter.sample(rng)) as f32,
                (py + jitter.sample(rng)) as f32,
                (pz + jitter.sample(rng)) as f32,
                rng.gen_range(0.0..1.0),
            )
        })
        .collect();
    (bbox, points)
}

/// Pixel rectangle `[u0, v0, u1, v1)` covering the corners and points, or
/// `None` when any of them leaves the image.
fn image_rect(bbox: &Box3D, points: &[Point], calib: &Calibration) -> Option<[u32; 4]> {
    let (w, h) = (calib.image_width as f64, calib.image_height as f64);
    let (mut u0, mut v0, mut u1, mut v1) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    let all = box_corners(bbox).into_iter().chain(
        points
            .iter()
            .map(|p| Vector3::new(p.x as f64, p.y as f64, p.z as f64)),
    );
    for p in all {
        let (u, v) = calib.rect_to_image(calib.velo_point_to_rect(p))?;
        u0 = u0.min(u);
        v0 = v0.min(v);
        u1 = u1.max(u);
        v1 = v1.max(v);
    }
    let (u0, v0, u1, v1) = (
        u0.floor() - 1.0,
        v0.floor() - 1.0,
        u1.floor() + 2.0,
        v1.floor() + 2.0,
    );
    if u0 < 0.0 || v0 < 0.0 || u1 > w || v1 > h {
        return None;
    }
    Some([u0 as u32, v0 as u32, u1 as u32, v1 as u32])
}

fn rects_overlap(a: &[u32; 4], b: &[u32; 4]) -> bool {
    a[0] < b[2] && b[0] < a[2] && a[1] < b[3] && b[1] < a[3]
}

fn place_objects(
    spec: &SynthSceneSpec,
    rng: &mut ChaCha8Rng,
    jitter: &Normal<f64>,
    calib: &Calibration,
) -> Vec<Placed> {
    let kinds = std::iter::repeat_n(Kind::Pedestrian, spec.pedestrians)
        .chain(std::iter::repeat_n(Kind::Pole, spec.poles));
    let mut placed: Vec<Placed> = Vec::new();
    for kind in kinds {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (bbox, points) = sample_object(kind, rng, spec, jitter);
            let Some(rect) = image_rect(&bbox, &points, calib) else {
                continue;
            };
            let clear = placed.iter().all(|o| {
                (o.bbox.x - bbox.x).hypot(o.bbox.y - bbox.y) >= MIN_SEPARATION
                    && !rects_overlap(&o.rect, &rect)
            });
            if clear {
                placed.push(Placed {
                    kind,
                    bbox,
                    rect,
                    points,
                });
                break;
            }
        }
    }
    placed
}

/// Boxes of the objects placed in a synthetic scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthObjects {
    pub pedestrians: Vec<Box3D>,
    pub poles: Vec<Box3D>,
}

/// Builds one frame. Objects whose image rectangles or footprints would
/// collide with earlier ones are re-drawn, and dropped after repeated failures.
pub fn synth_scene(spec: &SynthSceneSpec) -> Result<SceneBundle> {
    synth_scene_with_objects(spec).map(|(b, _)| b)
}

/// Like [`synth_scene`], also returning the placed boxes (poles are not labeled).
pub fn synth_scene_with_objects(spec: &SynthSceneSpec) -> Result<(SceneBundle, SynthObjects)> {
    spec.validate()?;
    let calib = synth_calibration();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let placed = place_objects(spec, &mut rng, &jitter, &calib);

    let mut points: Vec<Point> = placed
        .iter()
        .flat_map(|o| o.points.iter().copied())
        .collect();
    let (x0, x1) = (spec.range.0 - 3.0, spec.range.1 + 3.0);
    let lat = spec.lateral_limit + 2.0;
    for _ in 0..spec.clutter {
        points.push(Point::new(
            rng.gen_range(x0..x1) as f32,
            rng.gen_range(-lat..lat) as f32,
            (GROUND_Z + jitter.sample(&mut rng)) as f32,
            rng.gen_range(0.0..1.0),
        ));
    }

    let (w, h) = (calib.image_width, calib.image_height);
    let mut scores = vec![BACKGROUND_SCORES; (w * h) as usize];
    for o in placed.iter().filter(|o| o.kind == Kind::Pedestrian) {
        let [u0, v0, u1, v1] = o.rect;
        for v in v0..v1 {
            for u in u0..u1 {
                if rng.gen::<f64>() < spec.fidelity {
                    scores[(v * w + u) as usize] = PEDESTRIAN_SCORES;
                }
            }
        }
    }

    let boxes = |k: Kind| placed.iter().filter(move |o| o.kind == k).map(|o| o.bbox);
    let objects = SynthObjects {
        pedestrians: boxes(Kind::Pedestrian).collect(),
        poles: boxes(Kind::Pole).collect(),
    };
    let labels = objects
        .pedestrians
        .iter()
        .map(|b| LabelObject {
            score: None,
            ..LabelObject::from_detection(
                &Detection {
                    bbox: *b,
                    score: 1.0,
                },
                &calib,
            )
        })
        .collect();

    let bundle = SceneBundle {
        frame_id: "000000".into(),
        cloud: PointCloud::new(points),
        calib,
        scores: SegScoreMap::new(w, h, scores)?,
        labels: Some(labels),
    };
    Ok((bundle, objects))
}
