//! Custom little-endian binary formats.
//!
//! | magic  | header after magic (u32 each)      | payload (f32)                      |
//! |--------|------------------------------------|------------------------------------|
//! | `SVSM` | version, width, height, classes=4  | pixels row-major, class-minor      |
//! | `SVPC` | version, count                     | `x y z r s0 s1 s2 s3` per point    |
//! | `SVFM` | version, width, height, channels   | cells x-major, channel-minor       |

use std::fs;
use std::path::Path;

use super::{checked_product, push_f32s, push_u32, to_u32, write_atomic, ByteReader};
use crate::error::{Error, Result};
use crate::geometry::FeatureMap;
use crate::painting::{PaintedPoint, PaintedPointCloud, SegScoreMap, NUM_CLASSES};

pub const SCOREMAP_MAGIC: [u8; 4] = *b"SVSM";
pub const PAINTED_MAGIC: [u8; 4] = *b"SVPC";
pub const FEATUREMAP_MAGIC: [u8; 4] = *b"SVFM";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_scoremap(map: &SegScoreMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + map.scores().len() * NUM_CLASSES * 4);
    out.extend_from_slice(&SCOREMAP_MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    push_u32(&mut out, map.width());
    push_u32(&mut out, map.height());
    push_u32(&mut out, NUM_CLASSES as u32);
    for px in map.scores() {
        push_f32s(&mut out, px);
    }
    out
}

pub fn decode_scoremap(bytes: &[u8], path: &Path) -> Result<SegScoreMap> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(SCOREMAP_MAGIC)?;
    r.version(FORMAT_VERSION)?;
    let (w, h, classes) = (r.u32()?, r.u32()?, r.u32()?);
    if classes as usize != NUM_CLASSES {
        return Err(Error::ShapeMismatch(format!(
            "score map has {classes} classes, expected {NUM_CLASSES}"
        )));
    }
    let n = checked_product(&[w as usize, h as usize, NUM_CLASSES])?;
    let data = r.f32s(n)?;
    r.finish()?;
    let scores = data
        .chunks_exact(NUM_CLASSES)
        .map(|c| c.try_into().unwrap())
        .collect();
    SegScoreMap::new(w, h, scores)
}

pub fn write_scoremap(map: &SegScoreMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_scoremap(map))
}

pub fn read_scoremap(path: &Path) -> Result<SegScoreMap> {
    decode_scoremap(&fs::read(path)?, path)
}

pub fn encode_painted(cloud: &PaintedPointCloud) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + cloud.len() * 32);
    out.extend_from_slice(&PAINTED_MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    push_u32(&mut out, to_u32(cloud.len(), "point count")?);
    for p in &cloud.points {
        push_f32s(&mut out, &p.to_array());
    }
    Ok(out)
}

pub fn decode_painted(bytes: &[u8], path: &Path) -> Result<PaintedPointCloud> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(PAINTED_MAGIC)?;
    r.version(FORMAT_VERSION)?;
    let n = r.u32()? as usize;
    let data = r.f32s(checked_product(&[n, 8])?)?;
    r.finish()?;
    Ok(PaintedPointCloud::new(
        data.chunks_exact(8)
            .map(|c| PaintedPoint::from_array(c.try_into().unwrap()))
            .collect(),
    ))
}

pub fn write_painted(cloud: &PaintedPointCloud, path: &Path) -> Result<()> {
    write_atomic(path, &encode_painted(cloud)?)
}

pub fn read_painted(path: &Path) -> Result<PaintedPointCloud> {
    decode_painted(&fs::read(path)?, path)
}

pub fn encode_featuremap(map: &FeatureMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + map.data.len() * 4);
    out.extend_from_slice(&FEATUREMAP_MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    push_u32(&mut out, to_u32(map.width, "width")?);
    push_u32(&mut out, to_u32(map.height, "height")?);
    push_u32(&mut out, to_u32(map.channels, "channels")?);
    push_f32s(&mut out, &map.data);
    Ok(out)
}

pub fn decode_featuremap(bytes: &[u8], path: &Path) -> Result<FeatureMap> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(FEATUREMAP_MAGIC)?;
    r.version(FORMAT_VERSION)?;
    let (w, h, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let data = r.f32s(checked_product(&[w, h, c])?)?;
    r.finish()?;
    FeatureMap::from_vec(w, h, c, data)
}

pub fn write_featuremap(map: &FeatureMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_featuremap(map)?)
}

pub fn read_featuremap(path: &Path) -> Result<FeatureMap> {
    decode_featuremap(&fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::painting::BACKGROUND_SCORES;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn scoremap_byte_count() {
        let m = SegScoreMap::uniform(1, 1, BACKGROUND_SCORES).unwrap();
        let bytes = encode_scoremap(&m);
        assert_eq!(bytes.len(), 4 + 4 * 4 + 16);
        assert_eq!(&bytes[..4], b"SVSM");
        assert_eq!(decode_scoremap(&bytes, p()).unwrap(), m);
    }

    #[test]
    fn scoremap_errors() {
        let m = SegScoreMap::uniform(2, 3, BACKGROUND_SCORES).unwrap();
        let mut bytes = encode_scoremap(&m);
        bytes[0] = b'X';
        assert!(matches!(
            decode_scoremap(&bytes, p()),
            Err(Error::BadMagic { .. })
        ));

        let mut huge = encode_scoremap(&m);
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            decode_scoremap(&huge, p()),
            Err(Error::DimensionOverflow(_))
        ));

        let mut short = encode_scoremap(&m);
        short.truncate(short.len() - 4);
        assert!(matches!(
            decode_scoremap(&short, p()),
            Err(Error::DimensionOverflow(_))
        ));

        let mut v2 = encode_scoremap(&m);
        v2[4] = 2;
        assert!(matches!(
            decode_scoremap(&v2, p()),
            Err(Error::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn painted_and_featuremap_round_trip() {
        let cloud = PaintedPointCloud::new(vec![PaintedPoint::from_array([
            1.0, -2.0, 0.5, 0.25, 0.1, 0.2, 0.3, 0.4,
        ])]);
        let bytes = encode_painted(&cloud).unwrap();
        assert_eq!(bytes.len(), 12 + 32);
        assert_eq!(decode_painted(&bytes, p()).unwrap(), cloud);

        let fm = FeatureMap::from_vec(2, 1, 3, vec![1.0, f32::MIN_POSITIVE, -0.0, 4.0, 5.0, 6.5])
            .unwrap();
        let back = decode_featuremap(&encode_featuremap(&fm).unwrap(), p()).unwrap();
        assert_eq!(
            back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            fm.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
