//! KITTI object-detection files: velodyne scans, calibration text, and label
//! lines.
//!
//! Labels live in the rectified camera frame (x right, y down, z forward) with
//! the box location at the bottom face center and `rotation_y` about the
//! camera y axis. The heading vector of a label is `(cos ry, 0, -sin ry)` in
//! that frame; conversion maps it through the calibration and takes `atan2`
//! in the LiDAR ground plane, and the inverse maps the LiDAR heading back.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3x4, Matrix4, Vector3};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::eval::{classify_difficulty, Detection, Difficulty, GroundTruth, GtMeta};
use crate::geometry::{bev_corners, normalize_angle, Box3D, Calibration, Point, PointCloud};

pub const PEDESTRIAN: &str = "Pedestrian";
const DEFAULT_IMAGE_SIZE: (u32, u32) = (1242, 375);

pub fn decode_velodyne(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
        });
    }
    Ok(PointCloud::new(
        bytes
            .chunks_exact(16)
            .map(|c| {
                let f = |i: usize| f32::from_le_bytes(c[4 * i..4 * i + 4].try_into().unwrap());
                Point::new(f(0), f(1), f(2), f(3))
            })
            .collect(),
    ))
}

pub fn read_velodyne(path: &Path) -> Result<PointCloud> {
    decode_velodyne(&fs::read(path)?, path)
}

pub fn encode_velodyne(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.r] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_velodyne(cloud: &PointCloud, path: &Path) -> Result<()> {
    write_atomic(path, &encode_velodyne(cloud))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_floats(tokens: &[&str], path: &Path, line: usize) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("not a number: {t:?}")))
        })
        .collect()
}

fn join(vals: impl IntoIterator<Item = f64>) -> String {
    vals.into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses `P2`, `R0_rect`, and `Tr_velo_to_cam`; other keys are ignored. An
/// optional `image_size: W H` line sets the image extent (1242×375 otherwise).
pub fn decode_calib(text: &str, path: &Path) -> Result<Calibration> {
    let (mut p2, mut r0, mut tr, mut size) = (None, None, None, None);
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let (key, rest) = raw
            .split_once(':')
            .ok_or_else(|| parse_err(path, line_no, "expected `key: values`"))?;
        let tokens: Vec<&str> = rest.split_whitespace().collect();
        let want = match key.trim() {
            "P2" => 12,
            "R0_rect" => 9,
            "Tr_velo_to_cam" => 12,
            "image_size" => 2,
            _ => continue,
        };
        if tokens.len() != want {
            return Err(parse_err(
                path,
                line_no,
                format!("{key} needs {want} values, found {}", tokens.len()),
            ));
        }
        let v = parse_floats(&tokens, path, line_no)?;
        match key.trim() {
            "P2" => p2 = Some(Matrix3x4::from_row_slice(&v)),
            "R0_rect" => {
                let mut m = Matrix4::identity();
                for r in 0..3 {
                    for c in 0..3 {
                        m[(r, c)] = v[r * 3 + c];
                    }
                }
                r0 = Some(m);
            }
            "Tr_velo_to_cam" => {
                let mut m = Matrix4::identity();
                for r in 0..3 {
                    for c in 0..4 {
                        m[(r, c)] = v[r * 4 + c];
                    }
                }
                tr = Some(m);
            }
            _ => {
                let ok = |x: f64| x >= 1.0 && x.fract() == 0.0 && x <= u32::MAX as f64;
                if !ok(v[0]) || !ok(v[1]) {
                    return Err(parse_err(
                        path,
                        line_no,
                        "image_size must be two positive integers",
                    ));
                }
                size = Some((v[0] as u32, v[1] as u32));
            }
        }
    }
    let end = text.lines().count() + 1;
    let missing = |k: &str| parse_err(path, end, format!("missing {k}"));
    let (w, h) = size.unwrap_or(DEFAULT_IMAGE_SIZE);
    Calibration::new(
        tr.ok_or_else(|| missing("Tr_velo_to_cam"))?,
        r0.ok_or_else(|| missing("R0_rect"))?,
        p2.ok_or_else(|| missing("P2"))?,
        w,
        h,
    )
    .map_err(|e| parse_err(path, end, e.to_string()))
}

pub fn read_calib(path: &Path) -> Result<Calibration> {
    decode_calib(&fs::read_to_string(path)?, path)
}

pub fn encode_calib(calib: &Calibration) -> String {
    let p2 = calib.cam_to_image;
    let r0 = calib.rectification;
    let tr = calib.velo_to_cam;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "P2: {}",
        join((0..3).flat_map(|r| (0..4).map(move |c| p2[(r, c)])))
    );
    let _ = writeln!(
        s,
        "R0_rect: {}",
        join((0..3).flat_map(|r| (0..3).map(move |c| r0[(r, c)])))
    );
    let _ = writeln!(
        s,
        "Tr_velo_to_cam: {}",
        join((0..3).flat_map(|r| (0..4).map(move |c| tr[(r, c)])))
    );
    let _ = writeln!(
        s,
        "image_size: {} {}",
        calib.image_width, calib.image_height
    );
    s
}

pub fn write_calib(calib: &Calibration, path: &Path) -> Result<()> {
    write_atomic(path, encode_calib(calib).as_bytes())
}

/// Box fields as they appear in a label line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraBox {
    pub h: f64,
    pub w: f64,
    pub l: f64,
    /// Bottom face center in the rectified camera frame.
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rotation_y: f64,
}

pub fn camera_to_lidar(c: &CameraBox, calib: &Calibration) -> Box3D {
    let center = calib.rect_point_to_velo(Vector3::new(c.x, c.y - 0.5 * c.h, c.z));
    let (s, co) = c.rotation_y.sin_cos();
    let d = calib.rect_dir_to_velo(Vector3::new(co, 0.0, -s));
    // Struct literal: `DontCare` lines carry placeholder dimensions of -1.
    Box3D {
        x: center.x,
        y: center.y,
        z: center.z,
        l: c.l,
        w: c.w,
        h: c.h,
        theta: normalize_angle(d.y.atan2(d.x)),
    }
}

pub fn lidar_to_camera(b: &Box3D, calib: &Calibration) -> CameraBox {
    let c = calib.velo_point_to_rect(Vector3::new(b.x, b.y, b.z));
    let (s, co) = b.theta.sin_cos();
    let d = calib.velo_dir_to_rect(Vector3::new(co, s, 0.0));
    CameraBox {
        h: b.h,
        w: b.w,
        l: b.l,
        x: c.x,
        y: c.y + 0.5 * b.h,
        z: c.z,
        rotation_y: normalize_angle((-d.z).atan2(d.x)),
    }
}

/// The eight corners of a box in the LiDAR frame.
pub fn box_corners(b: &Box3D) -> [Vector3<f64>; 8] {
    let bev = bev_corners(b);
    let mut out = [Vector3::zeros(); 8];
    for (i, (x, y)) in bev.iter().enumerate() {
        out[i] = Vector3::new(*x, *y, b.z - 0.5 * b.h);
        out[i + 4] = Vector3::new(*x, *y, b.z + 0.5 * b.h);
    }
    out
}

/// Image rectangle `[x1, y1, x2, y2]` of the projected corners in front of the
/// camera, clipped to the image; all zeros when none are in front.
pub fn project_box(b: &Box3D, calib: &Calibration) -> [f64; 4] {
    let pts: Vec<(f64, f64)> = box_corners(b)
        .iter()
        .filter_map(|p| calib.rect_to_image(calib.velo_point_to_rect(*p)))
        .collect();
    if pts.is_empty() {
        return [0.0; 4];
    }
    let (w, h) = (calib.image_width as f64, calib.image_height as f64);
    let clip = |v: f64, hi: f64| v.clamp(0.0, hi - 1.0);
    let (mut x1, mut y1, mut x2, mut y2) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for (u, v) in pts {
        x1 = x1.min(u);
        y1 = y1.min(v);
        x2 = x2.max(u);
        y2 = y2.max(v);
    }
    [clip(x1, w), clip(y1, h), clip(x2, w), clip(y2, h)]
}

/// One label line, with the 3D box converted to the LiDAR frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelObject {
    pub class: String,
    pub truncation: f64,
    /// KITTI occlusion state; `-1` on `DontCare` lines.
    pub occlusion: i32,
    pub alpha: f64,
    pub bbox_2d: [f64; 4],
    pub bbox: Box3D,
    pub score: Option<f64>,
}

impl LabelObject {
    pub fn is_pedestrian(&self) -> bool {
        self.class == PEDESTRIAN
    }

    pub fn meta(&self) -> GtMeta {
        GtMeta {
            bbox_height: self.bbox_2d[3] - self.bbox_2d[1],
            occlusion: u8::try_from(self.occlusion).map_or(3, |o| o.min(3)),
            truncation: self.truncation,
        }
    }

    pub fn difficulty(&self) -> Difficulty {
        classify_difficulty(&self.meta())
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            bbox: self.bbox,
            difficulty: self.difficulty(),
        }
    }

    /// Detection with the label's score, or 1 when the line has none.
    pub fn detection(&self) -> Detection {
        Detection {
            bbox: self.bbox,
            score: self.score.unwrap_or(1.0),
        }
    }

    /// Label line for a detected pedestrian, with the 2D box from projection.
    pub fn from_detection(det: &Detection, calib: &Calibration) -> Self {
        let cam = lidar_to_camera(&det.bbox, calib);
        let center = calib.velo_point_to_rect(Vector3::new(det.bbox.x, det.bbox.y, det.bbox.z));
        Self {
            class: PEDESTRIAN.into(),
            truncation: 0.0,
            occlusion: 0,
            alpha: normalize_angle(cam.rotation_y - center.x.atan2(center.z)),
            bbox_2d: project_box(&det.bbox, calib),
            bbox: det.bbox,
            score: Some(det.score),
        }
    }
}

pub fn decode_labels(text: &str, path: &Path, calib: &Calibration) -> Result<Vec<LabelObject>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 15 && tokens.len() != 16 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 15 or 16 fields, found {}", tokens.len()),
            ));
        }
        let v = parse_floats(&tokens[1..], path, line_no)?;
        if v[1].fract() != 0.0 {
            return Err(parse_err(
                path,
                line_no,
                format!("occlusion must be an integer, found {}", v[1]),
            ));
        }
        let cam = CameraBox {
            h: v[7],
            w: v[8],
            l: v[9],
            x: v[10],
            y: v[11],
            z: v[12],
            rotation_y: v[13],
        };
        if tokens[0] == PEDESTRIAN && !(cam.h > 0.0 && cam.w > 0.0 && cam.l > 0.0) {
            return Err(parse_err(
                path,
                line_no,
                "pedestrian box dimensions must be positive",
            ));
        }
        out.push(LabelObject {
            class: tokens[0].to_string(),
            truncation: v[0],
            occlusion: v[1] as i32,
            alpha: v[2],
            bbox_2d: [v[3], v[4], v[5], v[6]],
            bbox: camera_to_lidar(&cam, calib),
            score: v.get(14).copied(),
        });
    }
    Ok(out)
}

pub fn read_labels(path: &Path, calib: &Calibration) -> Result<Vec<LabelObject>> {
    decode_labels(&fs::read_to_string(path)?, path, calib)
}

pub fn encode_labels(labels: &[LabelObject], calib: &Calibration) -> String {
    let mut s = String::new();
    for o in labels {
        let c = lidar_to_camera(&o.bbox, calib);
        let _ = write!(
            s,
            "{} {} {} {} {} {} {}",
            o.class,
            o.truncation,
            o.occlusion,
            o.alpha,
            join(o.bbox_2d),
            join([c.h, c.w, c.l, c.x, c.y, c.z]),
            c.rotation_y
        );
        if let Some(score) = o.score {
            let _ = write!(s, " {score}");
        }
        s.push('\n');
    }
    s
}

pub fn write_labels(labels: &[LabelObject], calib: &Calibration, path: &Path) -> Result<()> {
    write_atomic(path, encode_labels(labels, calib).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn velodyne_bytes() {
        assert!(decode_velodyne(&[], p()).unwrap().is_empty());
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = decode_velodyne(&bytes, p()).unwrap();
        assert_eq!(cloud.points, vec![Point::new(1.0, 2.0, 3.0, 0.5)]);
        assert_eq!(encode_velodyne(&cloud), bytes);
        bytes.push(0);
        assert!(matches!(
            decode_velodyne(&bytes, p()),
            Err(Error::TruncatedFile { len: 17, .. })
        ));
    }

    #[test]
    fn calib_round_trip() {
        let id = Calibration::new(
            Matrix4::identity(),
            Matrix4::identity(),
            Matrix3x4::identity(),
            100,
            50,
        )
        .unwrap();
        assert_eq!(decode_calib(&encode_calib(&id), p()).unwrap(), id);
        let k = Calibration::canonical();
        assert_eq!(decode_calib(&encode_calib(&k), p()).unwrap(), k);
    }

    #[test]
    fn calib_errors_carry_line_numbers() {
        let text = "P2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 x\n";
        match decode_calib(text, p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            decode_calib("P2: 1 2 3\n", p()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(decode_calib("", p()), Err(Error::Parse { .. })));
    }

    #[test]
    fn pedestrian_label_to_lidar() {
        let calib = Calibration::canonical();
        let line = "Pedestrian 0.00 0 -0.20 712.40 143.00 810.73 307.92 1.80 0.60 0.80 0.00 1.65 10.00 1.57\n";
        let labels = decode_labels(line, p(), &calib).unwrap();
        let o = &labels[0];
        assert!(o.is_pedestrian());
        // Geometric center sits h/2 above the bottom: camera y 1.65 - 0.9 = 0.75 (y down).
        let back = calib.velo_point_to_rect(Vector3::new(o.bbox.x, o.bbox.y, o.bbox.z));
        assert!((back - Vector3::new(0.0, 0.75, 10.0)).norm() < 1e-9);
        assert!((o.bbox.x - 10.0).abs() < 1e-9 && (o.bbox.z + 0.75).abs() < 1e-9);
        assert_eq!((o.bbox.l, o.bbox.w, o.bbox.h), (0.8, 0.6, 1.8));
        assert!((o.bbox.theta - (-1.57 - std::f64::consts::FRAC_PI_2)).abs() < 1e-9);
        assert_eq!(o.difficulty(), Difficulty::Easy);
    }

    #[test]
    fn labels_round_trip_and_flag_other_classes() {
        let calib = Calibration::canonical();
        let text = "Car 0.5 2 0.1 1 2 3 4 1.5 1.6 3.9 2.0 1.7 20.0 -3.0\n\
                    Pedestrian 0 0 0 10 20 30 90 1.7 0.5 0.9 -1.0 1.6 8.0 0.4 0.75\n\
                    DontCare -1 -1 -10 1 1 5 5 -1 -1 -1 -1000 -1000 -1000 -10\n";
        let labels = decode_labels(text, p(), &calib).unwrap();
        assert_eq!(labels.len(), 3);
        assert!(!labels[0].is_pedestrian() && labels[1].is_pedestrian());
        assert_eq!(labels[1].score, Some(0.75));
        assert_eq!(labels[2].meta().occlusion, 3);
        let again = decode_labels(&encode_labels(&labels, &calib), p(), &calib).unwrap();
        for (a, b) in labels.iter().zip(&again) {
            assert_eq!(a.class, b.class);
            let (ca, cb) = (
                lidar_to_camera(&a.bbox, &calib),
                lidar_to_camera(&b.bbox, &calib),
            );
            for (x, y) in [
                (ca.x, cb.x),
                (ca.y, cb.y),
                (ca.z, cb.z),
                (ca.h, cb.h),
                (ca.rotation_y, cb.rotation_y),
            ] {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn camera_lidar_camera_identity() {
        let calib = Calibration::canonical();
        for ry in [-3.0, -1.0, 0.0, 0.5, 2.9] {
            let c = CameraBox {
                h: 1.7,
                w: 0.6,
                l: 0.8,
                x: 1.5,
                y: 1.6,
                z: 12.0,
                rotation_y: ry,
            };
            let r = lidar_to_camera(&camera_to_lidar(&c, &calib), &calib);
            for (a, b) in [
                (c.x, r.x),
                (c.y, r.y),
                (c.z, r.z),
                (c.h, r.h),
                (c.w, r.w),
                (c.l, r.l),
                (c.rotation_y, r.rotation_y),
            ] {
                assert!((a - b).abs() < 1e-9, "{c:?} vs {r:?}");
            }
        }
    }
}
