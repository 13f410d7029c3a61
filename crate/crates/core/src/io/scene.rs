//! Scene bundles on disk:
//!
//! ```text
//! DIR/velodyne/<id>.bin   DIR/calib/<id>.txt   DIR/scores/<id>.svsm   DIR/label_2/<id>.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::binary::{read_scoremap, write_scoremap};
use super::kitti::{
    read_calib, read_labels, read_velodyne, write_calib, write_labels, write_velodyne, LabelObject,
};
use crate::error::{Error, Result};
use crate::geometry::{Calibration, PointCloud};
use crate::painting::{paint, PaintedPointCloud, SegScoreMap};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub frame_id: String,
    pub cloud: PointCloud,
    pub calib: Calibration,
    pub scores: SegScoreMap,
    pub labels: Option<Vec<LabelObject>>,
}

impl SceneBundle {
    pub fn painted(&self) -> Result<PaintedPointCloud> {
        paint(&self.cloud, &self.scores, &self.calib)
    }
}

pub fn velodyne_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("velodyne").join(format!("{id}.bin"))
}

pub fn calib_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("calib").join(format!("{id}.txt"))
}

pub fn scores_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("scores").join(format!("{id}.svsm"))
}

pub fn label_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("label_2").join(format!("{id}.txt"))
}

pub fn write_scene(bundle: &SceneBundle, dir: &Path) -> Result<()> {
    let id = &bundle.frame_id;
    write_velodyne(&bundle.cloud, &velodyne_path(dir, id))?;
    write_calib(&bundle.calib, &calib_path(dir, id))?;
    write_scoremap(&bundle.scores, &scores_path(dir, id))?;
    if let Some(labels) = &bundle.labels {
        write_labels(labels, &bundle.calib, &label_path(dir, id))?;
    }
    Ok(())
}

pub fn read_scene(dir: &Path, id: &str) -> Result<SceneBundle> {
    let calib = read_calib(&calib_path(dir, id))?;
    let lp = label_path(dir, id);
    let labels = if lp.exists() {
        Some(read_labels(&lp, &calib)?)
    } else {
        None
    };
    Ok(SceneBundle {
        frame_id: id.to_string(),
        cloud: read_velodyne(&velodyne_path(dir, id))?,
        scores: read_scoremap(&scores_path(dir, id))?,
        calib,
        labels,
    })
}

/// Sorted stems of the files in `dir` with extension `ext`.
pub fn list_stems(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Frame ids of a bundle directory, from its velodyne scans.
pub fn list_frames(dir: &Path) -> Result<Vec<String>> {
    let ids = list_stems(&dir.join("velodyne"), "bin")?;
    if ids.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} holds no velodyne scans",
            dir.display()
        )));
    }
    Ok(ids)
}
