//! End-to-end model: geometric and semantic encoders, fused backbone, and head.

use rand::Rng;

use crate::error::{Error, Result};
use crate::eval::{decode_detections, nms_bev, Detection};
use crate::geometry::FeatureMap;
use crate::network::{
    fuse, fuse_traced, head_forward, Backbone, BackboneConfig, FusionTrace, HeadOutput, HeadParams,
};
use crate::painting::{PaintedPointCloud, NUM_CLASSES};
use crate::pillars::{encode_geometric, GridConfig, PointNetParams};
use crate::semantic::{encode_semantic, SemanticAggParams};
use crate::targets::{generate_anchors, AnchorGrid, AnchorSpec};

/// Classification bias giving a foreground prior of 0.01.
const CLS_PRIOR_BIAS: f32 = -4.595_12;

/// Grid used for quick experiments: 0.32 m pillars over 25.6 m × 25.6 m.
pub fn desk_grid() -> GridConfig {
    GridConfig {
        x_range: (0.0, 25.6),
        y_range: (-12.8, 12.8),
        pillar_size: 0.32,
        ..GridConfig::kitti_pedestrian()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub pointnet: PointNetParams,
    pub semantic: SemanticAggParams,
    pub backbone: Backbone,
    pub head: HeadParams,
}

/// Both encoder outputs for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedScene {
    pub geometric: FeatureMap,
    pub semantic: FeatureMap,
}

impl Model {
    pub fn random(cfg: BackboneConfig, grid: &GridConfig, rng: &mut impl Rng) -> Result<Self> {
        grid.validate()?;
        let anchors = AnchorSpec::pedestrian().per_cell();
        let head_in = cfg.head_input_channels();
        let mut head = HeadParams::random(head_in, anchors, 1.0, rng);
        head.cls_bias.iter_mut().for_each(|b| *b = CLS_PRIOR_BIAS);
        Ok(Self {
            pointnet: PointNetParams::random(cfg.geometric_channels, rng),
            semantic: SemanticAggParams::random(
                grid.nz() * NUM_CLASSES,
                cfg.semantic_channels,
                rng,
            ),
            head,
            backbone: Backbone::random(cfg, rng)?,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.backbone.cfg
    }

    /// Checks that every tensor agrees with the backbone configuration and grid.
    pub fn validate(&self, grid: &GridConfig) -> Result<()> {
        let cfg = self.config();
        self.pointnet.validate()?;
        self.semantic.validate()?;
        self.backbone.validate()?;
        self.head.validate()?;
        let checks = [
            (
                "pointnet channels",
                self.pointnet.channels(),
                cfg.geometric_channels,
            ),
            (
                "semantic output channels",
                self.semantic.out_channels(),
                cfg.semantic_channels,
            ),
            (
                "semantic input channels",
                self.semantic.in_channels,
                grid.nz() * NUM_CLASSES,
            ),
            (
                "head input channels",
                self.head.in_channels,
                cfg.head_input_channels(),
            ),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::ShapeMismatch(format!(
                    "{what}: {got}, expected {want}"
                )));
            }
        }
        Ok(())
    }

    pub fn encode(&self, cloud: &PaintedPointCloud, grid: &GridConfig) -> Result<EncodedScene> {
        Ok(EncodedScene {
            geometric: encode_geometric(cloud, grid, &self.pointnet)?,
            semantic: encode_semantic(cloud, grid, &self.semantic)?,
        })
    }

    /// Head input for already-encoded maps.
    pub fn fuse(&self, enc: &EncodedScene) -> Result<FeatureMap> {
        fuse(&enc.geometric, &enc.semantic, &self.backbone)
    }

    pub fn fuse_traced(&self, enc: &EncodedScene) -> Result<(FeatureMap, FusionTrace)> {
        fuse_traced(&enc.geometric, &enc.semantic, &self.backbone)
    }

    pub fn head(&self, features: &FeatureMap) -> Result<HeadOutput> {
        head_forward(features, &self.head)
    }

    pub fn forward(&self, cloud: &PaintedPointCloud, grid: &GridConfig) -> Result<HeadOutput> {
        self.head(&self.fuse(&self.encode(cloud, grid)?)?)
    }

    pub fn detect(
        &self,
        cloud: &PaintedPointCloud,
        grid: &GridConfig,
        post: &PostProcess,
    ) -> Result<Vec<Detection>> {
        let anchors = generate_anchors(grid, &AnchorSpec::pedestrian());
        Ok(post.apply(&self.forward(cloud, grid)?, &anchors))
    }
}

/// Score threshold followed by BEV non-maximum suppression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostProcess {
    pub score_threshold: f64,
    pub nms_threshold: f64,
}

impl Default for PostProcess {
    fn default() -> Self {
        Self {
            score_threshold: 0.3,
            nms_threshold: 0.5,
        }
    }
}

impl PostProcess {
    pub fn apply(&self, head: &HeadOutput, anchors: &AnchorGrid) -> Vec<Detection> {
        nms_bev(
            &decode_detections(head, anchors, self.score_threshold),
            self.nms_threshold,
        )
    }
}
