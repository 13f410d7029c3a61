//! Three-block convolutional backbone, the fusion placements, and the
//! detection head.

pub mod conv;
pub mod head;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::FeatureMap;
use crate::pillars::BatchNorm;
use conv::{Conv2d, ConvBnRelu, ConvTranspose2d, DeconvBnRelu};

pub use head::{
    head_forward, head_param_grads, HeadOutput, HeadParamGrads, HeadParams, BOX_PARAMS, DIR_CLASSES,
};

/// Where the semantic map is concatenated with the geometric stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionScheme {
    /// Before the first block.
    Early,
    /// With the output of the first block.
    Middle,
    /// With the final (upsampled and concatenated) feature map.
    Late,
}

impl FusionScheme {
    pub const ALL: [FusionScheme; 3] = [
        FusionScheme::Early,
        FusionScheme::Middle,
        FusionScheme::Late,
    ];

    pub fn code(self) -> u32 {
        match self {
            FusionScheme::Early => 0,
            FusionScheme::Middle => 1,
            FusionScheme::Late => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.code() == code)
    }
}

impl fmt::Display for FusionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionScheme::Early => "early",
            FusionScheme::Middle => "middle",
            FusionScheme::Late => "late",
        })
    }
}

impl FromStr for FusionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "early" => Ok(FusionScheme::Early),
            "middle" => Ok(FusionScheme::Middle),
            "late" => Ok(FusionScheme::Late),
            other => Err(Error::InvalidConfig(format!(
                "unknown fusion scheme {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    /// Stride of the block's first convolution.
    pub stride: usize,
    pub layers: usize,
    pub channels: usize,
    /// Channels of the block's upsampled output.
    pub upsample_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub scheme: FusionScheme,
    pub geometric_channels: usize,
    pub semantic_channels: usize,
    pub blocks: Vec<BlockSpec>,
}

impl BackboneConfig {
    /// Blocks of 4/6/6 layers with 64/128/256 channels, strides 1/2/2, each
    /// upsampled to 128 channels.
    pub fn pointpillars(scheme: FusionScheme) -> Self {
        Self {
            scheme,
            geometric_channels: 64,
            semantic_channels: 8,
            blocks: vec![
                BlockSpec {
                    stride: 1,
                    layers: 4,
                    channels: 64,
                    upsample_channels: 128,
                },
                BlockSpec {
                    stride: 2,
                    layers: 6,
                    channels: 128,
                    upsample_channels: 128,
                },
                BlockSpec {
                    stride: 2,
                    layers: 6,
                    channels: 256,
                    upsample_channels: 128,
                },
            ],
        }
    }

    /// Same channel widths as [`Self::pointpillars`] with `layers` convolutions per block.
    pub fn reduced_depth(scheme: FusionScheme, layers: usize) -> Self {
        let mut cfg = Self::pointpillars(scheme);
        cfg.blocks.iter_mut().for_each(|b| b.layers = layers);
        cfg
    }

    /// A small configuration for fast experiments.
    pub fn desk(scheme: FusionScheme) -> Self {
        Self {
            scheme,
            geometric_channels: 16,
            semantic_channels: 8,
            blocks: vec![
                BlockSpec {
                    stride: 1,
                    layers: 1,
                    channels: 16,
                    upsample_channels: 16,
                },
                BlockSpec {
                    stride: 2,
                    layers: 1,
                    channels: 32,
                    upsample_channels: 16,
                },
                BlockSpec {
                    stride: 2,
                    layers: 1,
                    channels: 32,
                    upsample_channels: 16,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidConfig(
                "backbone needs at least one block".into(),
            ));
        }
        if self.scheme == FusionScheme::Middle && self.blocks.len() < 2 {
            return Err(Error::InvalidConfig(
                "middle fusion needs a second block".into(),
            ));
        }
        for b in &self.blocks {
            if b.stride == 0 || b.layers == 0 || b.channels == 0 || b.upsample_channels == 0 {
                return Err(Error::InvalidConfig(format!("degenerate block {b:?}")));
            }
        }
        Ok(())
    }

    /// Channels entering the first block.
    pub fn input_channels(&self) -> usize {
        self.geometric_channels
            + match self.scheme {
                FusionScheme::Early => self.semantic_channels,
                _ => 0,
            }
    }

    /// Channels entering each block.
    pub fn block_input_channels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut c = self.input_channels();
        for (i, b) in self.blocks.iter().enumerate() {
            if i == 1 && self.scheme == FusionScheme::Middle {
                c += self.semantic_channels;
            }
            out.push(c);
            c = b.channels;
        }
        out
    }

    /// Total downsampling of each block relative to the input.
    pub fn cumulative_strides(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .scan(1, |acc, b| {
                *acc *= b.stride;
                Some(*acc)
            })
            .collect()
    }

    /// Channels of the concatenated upsampled outputs.
    pub fn backbone_output_channels(&self) -> usize {
        self.blocks.iter().map(|b| b.upsample_channels).sum()
    }

    pub fn head_input_channels(&self) -> usize {
        self.backbone_output_channels()
            + match self.scheme {
                FusionScheme::Late => self.semantic_channels,
                _ => 0,
            }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub layers: Vec<ConvBnRelu>,
    pub upsample: DeconvBnRelu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub blocks: Vec<Block>,
}

/// Channel counts observed during a fused forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionTrace {
    /// `(height, width, channels)` entering each block.
    pub block_inputs: Vec<(usize, usize, usize)>,
    /// `(height, width, channels)` of the concatenated backbone output.
    pub backbone_output: (usize, usize, usize),
    /// `(height, width, channels)` of the head input.
    pub head_input: (usize, usize, usize),
}

fn dims(m: &FeatureMap) -> (usize, usize, usize) {
    (m.height, m.width, m.channels)
}

impl Backbone {
    pub fn random(cfg: BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let inputs = cfg.block_input_channels();
        let strides = cfg.cumulative_strides();
        let blocks = cfg
            .blocks
            .iter()
            .zip(inputs)
            .zip(strides)
            .map(|((spec, c_in), up)| {
                let layers = (0..spec.layers)
                    .map(|l| ConvBnRelu {
                        conv: Conv2d::random(
                            if l == 0 { c_in } else { spec.channels },
                            spec.channels,
                            3,
                            if l == 0 { spec.stride } else { 1 },
                            rng,
                        ),
                        bn: BatchNorm::random(spec.channels, rng),
                    })
                    .collect();
                let upsample = DeconvBnRelu {
                    deconv: ConvTranspose2d::random(spec.channels, spec.upsample_channels, up, rng),
                    bn: BatchNorm::random(spec.upsample_channels, rng),
                };
                Block { layers, upsample }
            })
            .collect();
        Ok(Self { cfg, blocks })
    }

    /// All-zero convolutions with identity batch norms.
    pub fn zeros(cfg: BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let inputs = cfg.block_input_channels();
        let strides = cfg.cumulative_strides();
        let blocks = cfg
            .blocks
            .iter()
            .zip(inputs)
            .zip(strides)
            .map(|((spec, c_in), up)| Block {
                layers: (0..spec.layers)
                    .map(|l| ConvBnRelu {
                        conv: Conv2d::zeros(
                            if l == 0 { c_in } else { spec.channels },
                            spec.channels,
                            3,
                            if l == 0 { spec.stride } else { 1 },
                        ),
                        bn: BatchNorm::identity(spec.channels),
                    })
                    .collect(),
                upsample: DeconvBnRelu {
                    deconv: ConvTranspose2d::zeros(spec.channels, spec.upsample_channels, up),
                    bn: BatchNorm::identity(spec.upsample_channels),
                },
            })
            .collect();
        Ok(Self { cfg, blocks })
    }

    /// Checks every layer against the configuration.
    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if self.blocks.len() != self.cfg.blocks.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} blocks for a {}-block configuration",
                self.blocks.len(),
                self.cfg.blocks.len()
            )));
        }
        let strides = self.cfg.cumulative_strides();
        for (b, ((spec, c_in), up)) in self.blocks.iter().zip(
            self.cfg
                .blocks
                .iter()
                .zip(self.cfg.block_input_channels())
                .zip(strides),
        ) {
            if b.layers.len() != spec.layers {
                return Err(Error::ShapeMismatch(format!(
                    "block has {} layers, expected {}",
                    b.layers.len(),
                    spec.layers
                )));
            }
            for (l, layer) in b.layers.iter().enumerate() {
                let (want_in, want_stride) = if l == 0 {
                    (c_in, spec.stride)
                } else {
                    (spec.channels, 1)
                };
                let c = &layer.conv;
                if c.in_channels != want_in
                    || c.out_channels != spec.channels
                    || c.stride != want_stride
                    || c.kernel != 3
                {
                    return Err(Error::ShapeMismatch(format!(
                        "conv {}→{} k{} s{} does not match block spec {spec:?} (input {want_in})",
                        c.in_channels, c.out_channels, c.kernel, c.stride
                    )));
                }
                c.validate()?;
                layer.bn.validate(spec.channels, "conv")?;
            }
            let d = &b.upsample.deconv;
            if d.in_channels != spec.channels
                || d.out_channels != spec.upsample_channels
                || d.stride != up
            {
                return Err(Error::ShapeMismatch(format!(
                    "upsample {}→{} x{} does not match block spec {spec:?} (factor {up})",
                    d.in_channels, d.out_channels, d.stride
                )));
            }
            d.validate()?;
            b.upsample.bn.validate(spec.upsample_channels, "upsample")?;
        }
        Ok(())
    }

    /// Runs the blocks; `middle` is concatenated before the second block.
    fn run(
        &self,
        input: &FeatureMap,
        middle: Option<&FeatureMap>,
        trace: &mut FusionTrace,
    ) -> Result<FeatureMap> {
        let (h, w) = (input.height, input.width);
        let mut x = input.clone();
        let mut ups: Vec<FeatureMap> = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            if i == 1 {
                if let Some(m) = middle {
                    x = x.concat_channels(m)?;
                }
            }
            trace.block_inputs.push(dims(&x));
            for layer in &block.layers {
                x = layer.forward(&x)?;
            }
            ups.push(block.upsample.forward(&x, h, w)?);
        }
        let mut out = ups[0].clone();
        for u in &ups[1..] {
            out = out.concat_channels(u)?;
        }
        trace.backbone_output = dims(&out);
        Ok(out)
    }

    /// Forward pass over an already-fused input (early fusion or no fusion).
    /// Output has the input's spatial size and the summed upsample channels.
    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        if self.cfg.scheme == FusionScheme::Middle {
            return Err(Error::ShapeMismatch(
                "middle fusion needs the semantic map; use fuse()".into(),
            ));
        }
        if input.channels != self.cfg.input_channels() {
            return Err(Error::ShapeMismatch(format!(
                "backbone expects {} input channels, got {}",
                self.cfg.input_channels(),
                input.channels
            )));
        }
        self.run(input, None, &mut empty_trace())
    }
}

fn empty_trace() -> FusionTrace {
    FusionTrace {
        block_inputs: Vec::new(),
        backbone_output: (0, 0, 0),
        head_input: (0, 0, 0),
    }
}

/// Runs the backbone with the semantic map concatenated at the depth chosen by
/// the backbone's scheme, returning the head input.
pub fn fuse(
    geometric: &FeatureMap,
    semantic: &FeatureMap,
    backbone: &Backbone,
) -> Result<FeatureMap> {
    fuse_traced(geometric, semantic, backbone).map(|(m, _)| m)
}

pub fn fuse_traced(
    geometric: &FeatureMap,
    semantic: &FeatureMap,
    backbone: &Backbone,
) -> Result<(FeatureMap, FusionTrace)> {
    let cfg = &backbone.cfg;
    if !geometric.same_spatial(semantic) {
        return Err(Error::ShapeMismatch(format!(
            "geometric map is {}x{}, semantic map is {}x{}",
            geometric.height, geometric.width, semantic.height, semantic.width
        )));
    }
    if geometric.channels != cfg.geometric_channels || semantic.channels != cfg.semantic_channels {
        return Err(Error::ShapeMismatch(format!(
            "expected {}+{} channels, got {}+{}",
            cfg.geometric_channels, cfg.semantic_channels, geometric.channels, semantic.channels
        )));
    }
    let mut trace = empty_trace();
    let head_in = match cfg.scheme {
        FusionScheme::Early => {
            backbone.run(&geometric.concat_channels(semantic)?, None, &mut trace)?
        }
        FusionScheme::Middle => {
            let full = backbone.run(geometric, Some(semantic), &mut trace)?;
            if !full.same_spatial(semantic) {
                return Err(Error::ShapeMismatch(
                    "backbone changed the spatial size".into(),
                ));
            }
            full
        }
        FusionScheme::Late => backbone
            .run(geometric, None, &mut trace)?
            .concat_channels(semantic)?,
    };
    trace.head_input = dims(&head_in);
    Ok((head_in, trace))
}
