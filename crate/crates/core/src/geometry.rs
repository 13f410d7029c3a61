//! Shared geometric types: points, calibration, oriented boxes, BEV feature
//! maps, and rotated-box overlap.
//!
//! Coordinates follow the LiDAR frame (x forward, y left, z up). A [`Box3D`]
//! stores the geometric center of the box; label files that store the bottom
//! face are converted in [`crate::io::kitti`].

use std::f64::consts::PI;

use nalgebra::{Matrix3x4, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

/// Half-plane tolerance used by the polygon clipper.
const CLIP_EPS: f64 = 1e-9;
/// Intersections below this area (m²) count as empty.
const MIN_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub r: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, r: f32) -> Self {
        Self { x, y, z, r }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// KITTI-style camera calibration: LiDAR → camera → rectified camera → image.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub velo_to_cam: Matrix4<f64>,
    pub rectification: Matrix4<f64>,
    pub cam_to_image: Matrix3x4<f64>,
    pub image_width: u32,
    pub image_height: u32,
}

impl Calibration {
    pub fn new(
        velo_to_cam: Matrix4<f64>,
        rectification: Matrix4<f64>,
        cam_to_image: Matrix3x4<f64>,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self> {
        let bottom = Vector4::new(0.0, 0.0, 0.0, 1.0).transpose();
        for (name, m) in [
            ("velo_to_cam", &velo_to_cam),
            ("rectification", &rectification),
        ] {
            if m.row(3) != bottom {
                return Err(Error::InvalidConfig(format!(
                    "{name} is not a homogeneous transform (bottom row {:?})",
                    m.row(3)
                )));
            }
        }
        let finite = velo_to_cam.iter().all(|v| v.is_finite())
            && rectification.iter().all(|v| v.is_finite())
            && cam_to_image.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig(
                "calibration has non-finite entries".into(),
            ));
        }
        Ok(Self {
            velo_to_cam,
            rectification,
            cam_to_image,
            image_width,
            image_height,
        })
    }

    /// Camera with KITTI axis conventions (x right, y down, z forward) mounted
    /// at the LiDAR origin, no rectification, and the given pinhole intrinsics.
    pub fn kitti_like(focal: f64, cu: f64, cv: f64, image_width: u32, image_height: u32) -> Self {
        #[rustfmt::skip]
        let velo_to_cam = Matrix4::new(
            0.0, -1.0, 0.0, 0.0,
            0.0, 0.0, -1.0, 0.0,
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        #[rustfmt::skip]
        let cam_to_image = Matrix3x4::new(
            focal, 0.0, cu, 0.0,
            0.0, focal, cv, 0.0,
            0.0, 0.0, 1.0, 0.0,
        );
        Self {
            velo_to_cam,
            rectification: Matrix4::identity(),
            cam_to_image,
            image_width,
            image_height,
        }
    }

    /// Calibration used when only relative geometry matters (evaluation of
    /// camera-frame labels): KITTI axes with the standard color-camera intrinsics.
    pub fn canonical() -> Self {
        Self::kitti_like(721.5377, 609.5593, 172.854, 1242, 375)
    }

    /// LiDAR frame → rectified camera frame.
    pub fn velo_to_rect(&self) -> Matrix4<f64> {
        self.rectification * self.velo_to_cam
    }

    pub fn velo_point_to_rect(&self, p: Vector3<f64>) -> Vector3<f64> {
        (self.velo_to_rect() * p.push(1.0)).xyz()
    }

    pub fn rect_point_to_velo(&self, p: Vector3<f64>) -> Vector3<f64> {
        let inv = self
            .velo_to_rect()
            .try_inverse()
            .expect("rigid calibration transform is invertible");
        (inv * p.push(1.0)).xyz()
    }

    pub fn velo_dir_to_rect(&self, d: Vector3<f64>) -> Vector3<f64> {
        (self.velo_to_rect() * d.push(0.0)).xyz()
    }

    pub fn rect_dir_to_velo(&self, d: Vector3<f64>) -> Vector3<f64> {
        let inv = self
            .velo_to_rect()
            .try_inverse()
            .expect("rigid calibration transform is invertible");
        (inv * d.push(0.0)).xyz()
    }

    /// Projects a rectified-camera point to pixel coordinates. Returns `None`
    /// when the point is not in front of the camera.
    pub fn rect_to_image(&self, p: Vector3<f64>) -> Option<(f64, f64)> {
        let q = self.cam_to_image * p.push(1.0);
        if p.z <= 0.0 || q.z <= 0.0 {
            return None;
        }
        Some((q.x / q.z, q.y / q.z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub in_image: bool,
}

/// Projects every point into the image. Points behind the camera get
/// `in_image = false` and non-finite pixel coordinates.
pub fn project_points(cloud: &PointCloud, calib: &Calibration) -> Vec<Projection> {
    let to_rect = calib.velo_to_rect();
    let full = calib.cam_to_image * to_rect;
    let (w, h) = (calib.image_width as f64, calib.image_height as f64);
    cloud
        .points
        .iter()
        .map(|p| {
            let hp = Vector4::new(p.x as f64, p.y as f64, p.z as f64, 1.0);
            let depth = (to_rect * hp).z;
            let q = full * hp;
            if depth <= 0.0 || q.z <= 0.0 {
                return Projection {
                    u: f64::NAN,
                    v: f64::NAN,
                    in_image: false,
                };
            }
            let (u, v) = (q.x / q.z, q.y / q.z);
            let in_image = (0.0..w).contains(&u) && (0.0..h).contains(&v);
            Projection { u, v, in_image }
        })
        .collect()
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut t = theta - two_pi * ((theta + PI) / two_pi).floor();
    if t >= PI {
        t -= two_pi;
    }
    if t < -PI {
        t = -PI;
    }
    t
}

/// Oriented 3D box. `(x, y, z)` is the geometric center; `l` runs along the
/// heading `theta` (yaw about +z), `w` across it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl Box3D {
    pub fn new(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, theta: f64) -> Self {
        debug_assert!(
            l > 0.0 && w > 0.0 && h > 0.0,
            "box dimensions must be positive"
        );
        Self {
            x,
            y,
            z,
            l,
            w,
            h,
            theta: normalize_angle(theta),
        }
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn bev_area(&self) -> f64 {
        self.l * self.w
    }

    /// True when `(px, py)` lies inside the BEV rectangle (boundary included).
    pub fn contains_bev(&self, px: f64, py: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (px - self.x, py - self.y);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        u.abs() <= 0.5 * self.l && v.abs() <= 0.5 * self.w
    }
}

/// Counter-clockwise BEV corners of the box.
pub fn bev_corners(b: &Box3D) -> [(f64, f64); 4] {
    let (s, c) = b.theta.sin_cos();
    let (hl, hw) = (0.5 * b.l, 0.5 * b.w);
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
        .map(|(u, v)| (b.x + c * u - s * v, b.y + s * u + c * v))
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    0.5 * twice
}

/// Sutherland–Hodgman clipping of `subject` against a convex counter-clockwise
/// `clip` polygon.
pub fn clip_convex(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let edge_len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let side = |p: (f64, f64)| cross(a, b, p) / edge_len;
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            let (cur_in, prev_in) = (sc >= -CLIP_EPS, sp >= -CLIP_EPS);
            if cur_in {
                if !prev_in {
                    output.push(segment_crossing(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_crossing(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn segment_crossing(p: (f64, f64), q: (f64, f64), sp: f64, sq: f64) -> (f64, f64) {
    let denom = sp - sq;
    if denom.abs() < f64::MIN_POSITIVE {
        return q;
    }
    let t = (sp / denom).clamp(0.0, 1.0);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

/// Area of the BEV intersection of two boxes.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let reach = 0.5 * (a.l.hypot(a.w) + b.l.hypot(b.w));
    if (a.x - b.x).hypot(a.y - b.y) > reach {
        return 0.0;
    }
    let poly = clip_convex(&bev_corners(a), &bev_corners(b));
    let area = polygon_area(&poly);
    if area < MIN_AREA {
        0.0
    } else {
        area
    }
}

/// Rotated-rectangle IoU in the ground plane.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.bev_area() + b.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Overlap of the vertical extents `[z - h/2, z + h/2]`.
pub fn vertical_overlap(a: &Box3D, b: &Box3D) -> f64 {
    let top = (a.z + 0.5 * a.h).min(b.z + 0.5 * b.h);
    let bottom = (a.z - 0.5 * a.h).max(b.z - 0.5 * b.h);
    (top - bottom).max(0.0)
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let dz = vertical_overlap(a, b);
    if dz == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    if inter == 0.0 {
        return 0.0;
    }
    (inter / (a.volume() + b.volume() - inter)).clamp(0.0, 1.0)
}

/// Dense BEV grid of `f32` values.
///
/// `height` counts cells along x, `width` cells along y. Values are stored
/// row-major by x index, then y index, with channels innermost:
/// `data[(x_index * width + y_index) * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height}x{channels} map",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn same_spatial(&self, other: &FeatureMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn index(&self, x_index: usize, y_index: usize, c: usize) -> usize {
        (x_index * self.width + y_index) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x_index: usize, y_index: usize, c: usize) -> f32 {
        self.data[self.index(x_index, y_index, c)]
    }

    #[inline]
    pub fn set(&mut self, x_index: usize, y_index: usize, c: usize, v: f32) {
        let i = self.index(x_index, y_index, c);
        self.data[i] = v;
    }

    pub fn cell(&self, x_index: usize, y_index: usize) -> &[f32] {
        let start = (x_index * self.width + y_index) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn cell_mut(&mut self, x_index: usize, y_index: usize) -> &mut [f32] {
        let start = (x_index * self.width + y_index) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    /// Channel-wise concatenation `[self | other]`.
    pub fn concat_channels(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if !self.same_spatial(other) {
            return Err(Error::ShapeMismatch(format!(
                "cannot concatenate {}x{} with {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let channels = self.channels + other.channels;
        let mut data = Vec::with_capacity(self.num_cells() * channels);
        let (ca, cb) = (self.channels, other.channels);
        for cell in 0..self.num_cells() {
            data.extend_from_slice(&self.data[cell * ca..(cell + 1) * ca]);
            data.extend_from_slice(&other.data[cell * cb..(cell + 1) * cb]);
        }
        FeatureMap::from_vec(self.width, self.height, channels, data)
    }

    pub fn channel_sum(&self, c: usize) -> f64 {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .map(|&v| v as f64)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;
    use std::f64::consts::FRAC_PI_4;

    fn bx(x: f64, y: f64, l: f64, w: f64, theta: f64) -> Box3D {
        Box3D::new(x, y, 0.0, l, w, 1.0, theta)
    }

    fn assert_close(a: (f64, f64), b: (f64, f64)) {
        assert!(
            (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12,
            "{a:?} != {b:?}"
        );
    }

    #[test]
    fn identity_projection_hits_principal_point() {
        #[rustfmt::skip]
        let p = Matrix3x4::new(
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
        );
        let calib = Calibration::new(Matrix4::identity(), Matrix4::identity(), p, 10, 10).unwrap();
        let cloud = PointCloud::new(vec![
            Point::new(0.0, 0.0, 1.0, 0.3),
            Point::new(0.0, 0.0, -1.0, 0.0),
        ]);
        let out = project_points(&cloud, &calib);
        assert_eq!((out[0].u, out[0].v), (0.0, 0.0));
        assert!(out[0].in_image);
        assert!(!out[1].in_image);
    }

    #[test]
    fn kitti_intrinsics_project_optical_axis_to_principal_point() {
        let calib = Calibration::kitti_like(721.5, 609.6, 172.9, 1242, 375);
        // Camera-frame (0, 0, 10) is LiDAR (10, 0, 0).
        let out = project_points(
            &PointCloud::new(vec![Point::new(10.0, 0.0, 0.0, 0.0)]),
            &calib,
        );
        assert!((out[0].u - 609.6).abs() < 1e-9);
        assert!((out[0].v - 172.9).abs() < 1e-9);
        assert!(out[0].in_image);
    }

    #[test]
    fn image_border_is_half_open() {
        #[rustfmt::skip]
        let p = Matrix3x4::new(
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
        );
        let calib = Calibration::new(Matrix4::identity(), Matrix4::identity(), p, 4, 4).unwrap();
        let cloud = PointCloud::new(vec![
            Point::new(4.0, 1.0, 1.0, 0.0),
            Point::new(3.99, 0.0, 1.0, 0.0),
        ]);
        let out = project_points(&cloud, &calib);
        assert!(!out[0].in_image);
        assert!(out[1].in_image);
    }

    #[test]
    fn empty_cloud_projects_to_nothing() {
        assert!(project_points(&PointCloud::default(), &Calibration::canonical()).is_empty());
    }

    #[test]
    fn rejects_non_homogeneous_transform() {
        let mut m = Matrix4::identity();
        m[(3, 0)] = 1.0;
        let err = Calibration::new(m, Matrix4::identity(), Matrix3x4::identity(), 1, 1);
        assert!(err.is_err());
    }

    #[test]
    fn corners_axis_aligned_and_rotated() {
        let c = bev_corners(&bx(0.0, 0.0, 2.0, 1.0, 0.0));
        for (got, want) in c
            .iter()
            .zip([(1.0, 0.5), (-1.0, 0.5), (-1.0, -0.5), (1.0, -0.5)])
        {
            assert_close(*got, want);
        }
        assert!(polygon_area(&c) > 0.0, "corners must be counter-clockwise");

        let c = bev_corners(&bx(0.0, 0.0, 2.0, 1.0, FRAC_PI_2));
        for (got, want) in c
            .iter()
            .zip([(-0.5, 1.0), (-0.5, -1.0), (0.5, -1.0), (0.5, 1.0)])
        {
            assert_close(*got, want);
        }

        let c = bev_corners(&bx(1.0, 1.0, 2.0, 1.0, FRAC_PI_4));
        let (s, co) = FRAC_PI_4.sin_cos();
        for (got, (u, v)) in c
            .iter()
            .zip([(1.0, 0.5), (-1.0, 0.5), (-1.0, -0.5), (1.0, -0.5)])
        {
            assert_close(*got, (1.0 + co * u - s * v, 1.0 + s * u + co * v));
        }
        let cx = c.iter().map(|p| p.0).sum::<f64>() / 4.0;
        let cy = c.iter().map(|p| p.1).sum::<f64>() / 4.0;
        assert!((cx - 1.0).abs() < 1e-6 && (cy - 1.0).abs() < 1e-6);
    }

    #[test]
    fn iou_closed_forms() {
        let a = bx(0.0, 0.0, 1.0, 1.0, 0.0);
        assert!((iou_bev(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(iou_bev(&a, &bx(100.0, 0.0, 1.0, 1.0, 0.0)), 0.0);
        let b = bx(0.5, 0.0, 1.0, 1.0, 0.0);
        assert!((iou_bev(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let up = Box3D { z: 1.0, ..a };
        assert_eq!(iou_3d(&a, &up), 0.0);
        // Rotating a square by π/2 is the same footprint.
        let r = bx(0.0, 0.0, 1.0, 1.0, FRAC_PI_2);
        assert!((iou_bev(&a, &r) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn touching_boxes_have_zero_iou() {
        let a = bx(0.0, 0.0, 1.0, 1.0, 0.0);
        let b = bx(1.0, 0.0, 1.0, 1.0, 0.0);
        assert_eq!(iou_bev(&a, &b), 0.0);
    }

    #[test]
    fn angle_normalization() {
        assert_eq!(normalize_angle(PI), -PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
        assert_eq!(normalize_angle(0.25), 0.25);
        for k in -5..5 {
            let t = normalize_angle(0.3 + k as f64 * 2.0 * PI);
            assert!((t - 0.3).abs() < 1e-12);
            assert!((-PI..PI).contains(&t));
        }
    }

    #[test]
    fn concat_channels_interleaves_per_cell() {
        let a = FeatureMap::from_vec(2, 1, 1, vec![1.0, 2.0]).unwrap();
        let b = FeatureMap::from_vec(2, 1, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = a.concat_channels(&b).unwrap();
        assert_eq!(c.data, vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        assert!(a.concat_channels(&FeatureMap::zeros(1, 1, 1)).is_err());
    }
}
