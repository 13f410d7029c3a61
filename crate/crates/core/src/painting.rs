//! Point painting: every LiDAR point receives the class scores of the image
//! pixel it projects to.

use crate::error::{Error, Result};
use crate::geometry::{project_points, Calibration, Point, PointCloud};

pub const NUM_CLASSES: usize = 4;

/// Class order of every score vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemanticClass {
    Pedestrian = 0,
    Cyclist = 1,
    Car = 2,
    Background = 3,
}

/// Score vector assigned to points that do not land in the image.
pub const BACKGROUND_SCORES: [f32; NUM_CLASSES] = [0.0, 0.0, 0.0, 1.0];

const SCORE_TOL: f32 = 1e-6;
const SUM_TOL: f32 = 1e-4;

/// Per-pixel class probabilities, row-major (`v * width + u`).
#[derive(Debug, Clone, PartialEq)]
pub struct SegScoreMap {
    width: u32,
    height: u32,
    scores: Vec<[f32; NUM_CLASSES]>,
}

impl SegScoreMap {
    pub fn new(width: u32, height: u32, scores: Vec<[f32; NUM_CLASSES]>) -> Result<Self> {
        if scores.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} score vectors for a {width}x{height} map",
                scores.len()
            )));
        }
        for s in &scores {
            if let Some(&bad) = s
                .iter()
                .find(|v| !(-SCORE_TOL..=1.0 + SCORE_TOL).contains(*v))
            {
                return Err(Error::InvalidScore { value: bad });
            }
            let sum: f32 = s.iter().sum();
            if (sum - 1.0).abs() > SUM_TOL {
                return Err(Error::InvalidScore { value: sum });
            }
        }
        Ok(Self {
            width,
            height,
            scores,
        })
    }

    /// Map with every pixel set to `scores`.
    pub fn uniform(width: u32, height: u32, scores: [f32; NUM_CLASSES]) -> Result<Self> {
        Self::new(
            width,
            height,
            vec![scores; width as usize * height as usize],
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn scores(&self) -> &[[f32; NUM_CLASSES]] {
        &self.scores
    }

    pub fn at(&self, u: u32, v: u32) -> [f32; NUM_CLASSES] {
        self.scores[v as usize * self.width as usize + u as usize]
    }
}

/// Builds a four-class map from pedestrian/cyclist/car probabilities; the
/// background channel is one minus their sum, renormalized when the three
/// inputs already exceed one.
pub fn complete_background(width: u32, height: u32, three: &[[f32; 3]]) -> Result<SegScoreMap> {
    let scores = three
        .iter()
        .map(|s| complete_pixel(*s))
        .collect::<Result<Vec<_>>>()?;
    SegScoreMap::new(width, height, scores)
}

pub fn complete_pixel(three: [f32; 3]) -> Result<[f32; NUM_CLASSES]> {
    if let Some(&bad) = three
        .iter()
        .find(|v| !(-SCORE_TOL..=1.0 + SCORE_TOL).contains(*v))
    {
        return Err(Error::InvalidScore { value: bad });
    }
    let [p, c, k] = three.map(|v| v.clamp(0.0, 1.0));
    let sum = p + c + k;
    if sum > 1.0 {
        Ok([p / sum, c / sum, k / sum, 0.0])
    } else {
        Ok([p, c, k, 1.0 - sum])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaintedPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub r: f32,
    /// Pedestrian, cyclist, car, background.
    pub scores: [f32; NUM_CLASSES],
}

impl PaintedPoint {
    pub fn new(p: Point, scores: [f32; NUM_CLASSES]) -> Self {
        Self {
            x: p.x,
            y: p.y,
            z: p.z,
            r: p.r,
            scores,
        }
    }

    pub fn point(&self) -> Point {
        Point::new(self.x, self.y, self.z, self.r)
    }

    pub fn score(&self, class: SemanticClass) -> f32 {
        self.scores[class as usize]
    }

    /// The eight painted features `(x, y, z, r, s_ped, s_cyc, s_car, s_bg)`.
    pub fn to_array(&self) -> [f32; 8] {
        let s = self.scores;
        [self.x, self.y, self.z, self.r, s[0], s[1], s[2], s[3]]
    }

    pub fn from_array(a: [f32; 8]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            z: a[2],
            r: a[3],
            scores: [a[4], a[5], a[6], a[7]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PaintedPointCloud {
    pub points: Vec<PaintedPoint>,
}

impl PaintedPointCloud {
    pub fn new(points: Vec<PaintedPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Drops the scores.
    pub fn geometry(&self) -> PointCloud {
        PointCloud::new(self.points.iter().map(PaintedPoint::point).collect())
    }
}

/// Appends the score vector of pixel `(floor(u), floor(v))` to every point.
/// Points outside the image or behind the camera get [`BACKGROUND_SCORES`].
pub fn paint(
    cloud: &PointCloud,
    seg: &SegScoreMap,
    calib: &Calibration,
) -> Result<PaintedPointCloud> {
    if seg.width != calib.image_width || seg.height != calib.image_height {
        return Err(Error::DimensionMismatch(format!(
            "score map is {}x{}, calibration image is {}x{}",
            seg.width, seg.height, calib.image_width, calib.image_height
        )));
    }
    let points = cloud
        .points
        .iter()
        .zip(project_points(cloud, calib))
        .map(|(p, proj)| {
            let scores = if proj.in_image {
                seg.at(proj.u.floor() as u32, proj.v.floor() as u32)
            } else {
                BACKGROUND_SCORES
            };
            PaintedPoint::new(*p, scores)
        })
        .collect();
    Ok(PaintedPointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3x4, Matrix4};

    fn pinhole(w: u32, h: u32) -> Calibration {
        // Identity extrinsics: the LiDAR frame is the camera frame here.
        #[rustfmt::skip]
        let p = Matrix3x4::new(
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
        );
        Calibration::new(Matrix4::identity(), Matrix4::identity(), p, w, h).unwrap()
    }

    #[test]
    fn background_completion() {
        assert_eq!(
            complete_pixel([0.0, 0.0, 0.0]).unwrap(),
            [0.0, 0.0, 0.0, 1.0]
        );
        let s = complete_pixel([0.7, 0.1, 0.1]).unwrap();
        for (a, b) in s.iter().zip([0.7, 0.1, 0.1, 0.1]) {
            assert!((a - b).abs() < 1e-6);
        }
        let s = complete_pixel([0.6, 0.3, 0.2]).unwrap();
        for (a, b) in s.iter().zip([0.6 / 1.1, 0.3 / 1.1, 0.2 / 1.1, 0.0]) {
            assert!((a - b).abs() < 1e-6, "{s:?}");
        }
        assert!(matches!(
            complete_pixel([1.2, 0.0, 0.0]),
            Err(Error::InvalidScore { .. })
        ));
        assert!(matches!(
            complete_pixel([-0.1, 0.0, 0.0]),
            Err(Error::InvalidScore { .. })
        ));
    }

    #[test]
    fn map_validation() {
        assert!(SegScoreMap::new(2, 2, vec![BACKGROUND_SCORES; 3]).is_err());
        assert!(SegScoreMap::new(1, 1, vec![[0.5, 0.5, 0.5, 0.0]]).is_err());
        assert!(SegScoreMap::new(1, 1, vec![[0.25; 4]]).is_ok());
    }

    #[test]
    fn delta_and_background_assignment() {
        let calib = pinhole(3, 1);
        let seg = SegScoreMap::new(
            3,
            1,
            vec![
                [1.0, 0.0, 0.0, 0.0],
                BACKGROUND_SCORES,
                [0.0, 0.0, 1.0, 0.0],
            ],
        )
        .unwrap();
        let cloud = PointCloud::new(vec![
            Point::new(0.5, 0.5, 1.0, 0.1),
            Point::new(0.5, 0.5, -1.0, 0.2),
            Point::new(2.2, 0.9, 1.0, 0.3),
            Point::new(9.0, 0.0, 1.0, 0.4),
        ]);
        let painted = paint(&cloud, &seg, &calib).unwrap();
        assert_eq!(painted.points[0].score(SemanticClass::Pedestrian), 1.0);
        assert_eq!(painted.points[1].scores, BACKGROUND_SCORES);
        assert_eq!(painted.points[2].score(SemanticClass::Car), 1.0);
        assert_eq!(painted.points[3].scores, BACKGROUND_SCORES);
        assert_eq!(painted.geometry(), cloud);
    }

    #[test]
    fn scene_round_trip_construction() {
        // Build the map from the scores we expect to read back.
        let expected = [
            [0.1, 0.2, 0.3, 0.4],
            [0.7, 0.1, 0.1, 0.1],
            [0.0, 0.5, 0.0, 0.5],
        ];
        let pixels = [(1u32, 0u32), (3, 2), (0, 3)];
        let (w, h) = (4u32, 4u32);
        let mut scores = vec![BACKGROUND_SCORES; (w * h) as usize];
        for (s, (u, v)) in expected.iter().zip(pixels) {
            scores[(v * w + u) as usize] = *s;
        }
        let seg = SegScoreMap::new(w, h, scores).unwrap();
        let cloud = PointCloud::new(
            pixels
                .iter()
                .map(|&(u, v)| {
                    Point::new((u as f32 + 0.5) * 2.0, (v as f32 + 0.25) * 2.0, 2.0, 0.0)
                })
                .collect(),
        );
        let painted = paint(&cloud, &seg, &pinhole(w, h)).unwrap();
        for (p, s) in painted.points.iter().zip(expected) {
            assert_eq!(p.scores, s);
        }
    }

    #[test]
    fn size_mismatch_is_reported() {
        let seg = SegScoreMap::uniform(2, 2, BACKGROUND_SCORES).unwrap();
        let err = paint(&PointCloud::default(), &seg, &pinhole(3, 2)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }
}
