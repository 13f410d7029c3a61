//! Semantic branch: class scores averaged in z-voxels inside each pillar,
//! stacked along z, and mixed by a 1×1 convolution.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::FeatureMap;
use crate::painting::{PaintedPointCloud, NUM_CLASSES};
use crate::pillars::GridConfig;

/// Output channels of the semantic aggregation.
pub const SEMANTIC_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticVoxel {
    pub mean: [f32; NUM_CLASSES],
    pub count: usize,
}

/// Occupied voxels keyed by `(x_index, y_index, z_index)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemanticVoxelGrid {
    pub nz: usize,
    pub voxels: BTreeMap<(usize, usize, usize), SemanticVoxel>,
}

impl SemanticVoxelGrid {
    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Stacked `nz * 4` vector of one pillar (z-major, class-minor); empty
    /// voxels contribute zeros.
    pub fn stacked(&self, x_index: usize, y_index: usize) -> Vec<f32> {
        let mut v = vec![0.0; self.nz * NUM_CLASSES];
        for ((_, _, zi), vox) in self
            .voxels
            .range((x_index, y_index, 0)..(x_index, y_index + 1, 0))
        {
            v[zi * NUM_CLASSES..(zi + 1) * NUM_CLASSES].copy_from_slice(&vox.mean);
        }
        v
    }
}

/// Voxelizes a cropped cloud and averages the score vectors of each voxel.
///
/// Scores are sorted before summation so the result does not depend on the
/// input point order, bit for bit.
pub fn voxelize_semantic(cloud: &PaintedPointCloud, cfg: &GridConfig) -> SemanticVoxelGrid {
    let mut members: BTreeMap<(usize, usize, usize), Vec<[f32; NUM_CLASSES]>> = BTreeMap::new();
    for p in &cloud.points {
        let (Some((xi, yi)), Some(zi)) =
            (cfg.cell_of(p.x as f64, p.y as f64), cfg.z_index(p.z as f64))
        else {
            continue;
        };
        members.entry((xi, yi, zi)).or_default().push(p.scores);
    }
    let voxels = members
        .into_iter()
        .map(|(key, mut scores)| {
            scores.sort_by(|a, b| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let mut sum = [0.0f64; NUM_CLASSES];
            for s in &scores {
                for (acc, v) in sum.iter_mut().zip(s) {
                    *acc += *v as f64;
                }
            }
            let n = scores.len() as f64;
            let mean = sum.map(|v| (v / n) as f32);
            (
                key,
                SemanticVoxel {
                    mean,
                    count: scores.len(),
                },
            )
        })
        .collect();
    SemanticVoxelGrid {
        nz: cfg.nz(),
        voxels,
    }
}

/// 1×1 convolution from the `nz * 4` stacked scores to `K` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticAggParams {
    pub in_channels: usize,
    /// Row-major `(K, in_channels)`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl SemanticAggParams {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            weight: vec![0.0; in_channels * out_channels],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn random(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / in_channels as f32).sqrt()).unwrap();
        Self {
            in_channels,
            weight: (0..in_channels * out_channels)
                .map(|_| normal.sample(rng))
                .collect(),
            bias: (0..out_channels)
                .map(|_| rng.gen_range(-0.1..0.1))
                .collect(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight.len() != self.in_channels * self.out_channels() {
            return Err(Error::ShapeMismatch(format!(
                "semantic weight has {} values, expected {}x{}",
                self.weight.len(),
                self.out_channels(),
                self.in_channels
            )));
        }
        if !self.weight.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig(
                "semantic parameters must be finite".into(),
            ));
        }
        Ok(())
    }

    /// `W · v + b` for one cell.
    pub fn apply(&self, stacked: &[f32], out: &mut [f32]) {
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.weight[k * self.in_channels..(k + 1) * self.in_channels];
            let mut acc = self.bias[k];
            for (w, x) in row.iter().zip(stacked) {
                acc += w * x;
            }
            *o = acc;
        }
    }
}

/// Dense `(ny, nx, K)` semantic map; cells without any voxel hold the bias.
pub fn stack_and_aggregate(
    grid: &SemanticVoxelGrid,
    params: &SemanticAggParams,
    cfg: &GridConfig,
) -> Result<FeatureMap> {
    params.validate()?;
    let stacked_len = cfg.nz() * NUM_CLASSES;
    if params.in_channels != stacked_len || grid.nz != cfg.nz() {
        return Err(Error::ShapeMismatch(format!(
            "semantic aggregation expects {} inputs, grid stacks {}",
            params.in_channels, stacked_len
        )));
    }
    let k = params.out_channels();
    let mut map = FeatureMap::zeros(cfg.ny(), cfg.nx(), k);
    for cell in map.data.chunks_exact_mut(k.max(1)) {
        cell[..k].copy_from_slice(&params.bias);
    }
    let mut pillars: Vec<(usize, usize)> = grid.voxels.keys().map(|&(x, y, _)| (x, y)).collect();
    pillars.dedup();
    for (xi, yi) in pillars {
        if xi >= map.height || yi >= map.width {
            return Err(Error::ShapeMismatch(format!(
                "voxel ({xi}, {yi}) outside the grid"
            )));
        }
        let v = grid.stacked(xi, yi);
        params.apply(&v, map.cell_mut(xi, yi));
    }
    Ok(map)
}

/// `crop → voxelize → stack → 1×1`.
pub fn encode_semantic(
    cloud: &PaintedPointCloud,
    cfg: &GridConfig,
    params: &SemanticAggParams,
) -> Result<FeatureMap> {
    cfg.validate()?;
    let grid = voxelize_semantic(&crate::pillars::crop(cloud, cfg), cfg);
    stack_and_aggregate(&grid, params, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::painting::PaintedPoint;

    fn pp(x: f32, y: f32, z: f32, scores: [f32; 4]) -> PaintedPoint {
        PaintedPoint {
            x,
            y,
            z,
            r: 0.0,
            scores,
        }
    }

    #[test]
    fn two_point_mean() {
        let cfg = GridConfig::kitti_pedestrian();
        let cloud = PaintedPointCloud::new(vec![
            pp(10.0, 0.0, -1.0, [1.0, 0.0, 0.0, 0.0]),
            pp(10.01, 0.01, -0.95, [0.0, 1.0, 0.0, 0.0]),
        ]);
        let grid = voxelize_semantic(&cloud, &cfg);
        assert_eq!(grid.voxels.len(), 1);
        let (&key, vox) = grid.voxels.iter().next().unwrap();
        assert_eq!(key, (62, 125, 5));
        assert_eq!(vox.mean, [0.5, 0.5, 0.0, 0.0]);
        assert_eq!(vox.count, 2);
    }

    #[test]
    fn z_index_arithmetic() {
        let cfg = GridConfig::kitti_pedestrian();
        assert_eq!(cfg.z_index(-1.0), Some(5));
        assert_eq!(cfg.z_index(-2.5), Some(0));
        assert_eq!(cfg.z_index(0.49), Some(9));
        assert_eq!(cfg.z_index(0.5), None);
    }

    #[test]
    fn empty_cloud_gives_empty_grid() {
        let grid = voxelize_semantic(
            &PaintedPointCloud::default(),
            &GridConfig::kitti_pedestrian(),
        );
        assert!(grid.is_empty());
    }

    #[test]
    fn constant_map_from_bias() {
        let cfg = GridConfig::kitti_pedestrian();
        let mut params = SemanticAggParams::zeros(40, 8);
        params.bias = (0..8).map(|i| i as f32).collect();
        let cloud = PaintedPointCloud::new(vec![pp(10.0, 0.0, -1.0, [1.0, 0.0, 0.0, 0.0])]);
        let map = stack_and_aggregate(&voxelize_semantic(&cloud, &cfg), &params, &cfg).unwrap();
        assert_eq!((map.width, map.height, map.channels), (250, 300, 8));
        for cell in map.data.chunks_exact(8) {
            assert_eq!(cell, params.bias.as_slice());
        }
    }

    #[test]
    fn one_hot_routing() {
        let cfg = GridConfig::kitti_pedestrian();
        let mut params = SemanticAggParams::zeros(40, 8);
        params.weight[3 * 40 + 5 * 4] = 1.0; // channel 3 ← (z = 5, pedestrian)
        let cloud = PaintedPointCloud::new(vec![pp(10.0, 0.0, -1.0, [1.0, 0.0, 0.0, 0.0])]);
        let map = stack_and_aggregate(&voxelize_semantic(&cloud, &cfg), &params, &cfg).unwrap();
        assert_eq!(map.cell(62, 125), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(map.data.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn stacking_is_z_major() {
        let cfg = GridConfig::kitti_pedestrian();
        let cloud = PaintedPointCloud::new(vec![
            pp(10.0, 0.0, -2.4, [0.1, 0.2, 0.3, 0.4]),
            pp(10.0, 0.0, 0.4, [0.0, 0.0, 1.0, 0.0]),
        ]);
        let v = voxelize_semantic(&cloud, &cfg).stacked(62, 125);
        assert_eq!(&v[0..4], &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(&v[36..40], &[0.0, 0.0, 1.0, 0.0]);
        assert!(v[4..36].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let cfg = GridConfig::kitti_pedestrian();
        let err = stack_and_aggregate(
            &SemanticVoxelGrid::default(),
            &SemanticAggParams::zeros(36, 8),
            &cfg,
        );
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }
}
