//! File formats, KITTI readers and writers, checkpoints, and the synthetic
//! scene generator.

pub mod binary;
pub mod checkpoint;
pub mod kitti;
pub mod scene;
pub mod synth;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use binary::{
    read_featuremap, read_painted, read_scoremap, write_featuremap, write_painted, write_scoremap,
};
pub use checkpoint::{load_model, save_model, Checkpoint, TensorBlock};
pub use kitti::{
    read_calib, read_labels, read_velodyne, write_calib, write_labels, write_velodyne, LabelObject,
};
pub use scene::{list_frames, read_scene, write_scene, SceneBundle};
pub use synth::{synth_scene, synth_scene_with_objects, SynthObjects, SynthSceneSpec};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::Io(e)
    })
}

/// Little-endian reader over an in-memory file.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self {
            bytes,
            pos: 0,
            path,
        }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::TruncatedFile {
                path: self.path.to_path_buf(),
                len: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn version(&mut self, supported: u32) -> Result<()> {
        match self.u32()? {
            v if v == supported => Ok(()),
            v => Err(Error::UnsupportedVersion(v)),
        }
    }

    /// Reads `n` floats, failing with `DimensionOverflow` when fewer remain.
    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::DimensionOverflow(format!("{n} floats")))?;
        if bytes > self.remaining() {
            return Err(Error::DimensionOverflow(format!(
                "header declares {n} floats, {} bytes remain",
                self.remaining()
            )));
        }
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::DimensionOverflow(format!(
                "{} trailing bytes",
                self.remaining()
            )));
        }
        Ok(())
    }
}

pub(crate) fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    out.reserve(vs.len() * 4);
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Product of dimensions, or `DimensionOverflow`.
pub(crate) fn checked_product(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::DimensionOverflow(format!("dimensions {dims:?}")))
}

pub(crate) fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v)
        .map_err(|_| Error::DimensionOverflow(format!("{what} = {v} does not fit in u32")))
}
