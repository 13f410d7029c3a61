//! `SVCK` checkpoints: named row-major `f32` tensors.
//!
//! Layout after the magic: u32 version, u32 block count, then per block a u32
//! name length, the UTF-8 name, u32 rank, rank × u32 dimensions, and the
//! payload. Batch-norm statistics are stored in inference form.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::{checked_product, push_f32s, push_u32, to_u32, write_atomic, ByteReader};
use crate::error::{Error, Result};
use crate::network::conv::{Conv2d, ConvBnRelu, ConvTranspose2d, DeconvBnRelu};
use crate::network::{
    Backbone, BackboneConfig, Block, BlockSpec, FusionScheme, HeadParams, BOX_PARAMS, DIR_CLASSES,
};
use crate::pillars::{BatchNorm, PointNetParams, POINT_FEATURES};
use crate::pipeline::Model;
use crate::semantic::SemanticAggParams;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SVCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const CONV_KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub blocks: Vec<TensorBlock>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.blocks.push(TensorBlock {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for b in &self.blocks {
            if !seen.insert(b.name.as_str()) {
                return Err(Error::Checkpoint(format!("duplicate tensor {:?}", b.name)));
            }
            if checked_product(&b.shape)? != b.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} has shape {:?} but {} values",
                    b.name,
                    b.shape,
                    b.data.len()
                )));
            }
        }
        Ok(())
    }

    /// The tensor `name`, which must have exactly `shape`.
    pub fn get(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        let b = self
            .blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
        if b.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "tensor {name:?} has shape {:?}, expected {shape:?}",
                b.shape
            )));
        }
        Ok(&b.data)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        push_u32(&mut out, CHECKPOINT_VERSION);
        push_u32(&mut out, to_u32(self.blocks.len(), "block count")?);
        for b in &self.blocks {
            push_u32(&mut out, to_u32(b.name.len(), "name length")?);
            out.extend_from_slice(b.name.as_bytes());
            push_u32(&mut out, to_u32(b.shape.len(), "rank")?);
            for &d in &b.shape {
                push_u32(&mut out, to_u32(d, "dimension")?);
            }
            push_f32s(&mut out, &b.data);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        r.magic(CHECKPOINT_MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let n = r.u32()?;
        let mut ck = Checkpoint::default();
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.bytes(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()?;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let data = r.f32s(checked_product(&shape)?)?;
            ck.push(name, shape, data);
        }
        r.finish()?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?, path)
    }
}

fn push_bn(ck: &mut Checkpoint, prefix: &str, bn: &BatchNorm) {
    let c = bn.channels();
    for (field, v) in [
        ("scale", &bn.scale),
        ("shift", &bn.shift),
        ("mean", &bn.mean),
        ("var", &bn.var),
    ] {
        ck.push(format!("{prefix}.bn.{field}"), vec![c], v.clone());
    }
}

fn get_bn(ck: &Checkpoint, prefix: &str, c: usize) -> Result<BatchNorm> {
    let f = |field: &str| {
        ck.get(&format!("{prefix}.bn.{field}"), &[c])
            .map(<[f32]>::to_vec)
    };
    Ok(BatchNorm {
        scale: f("scale")?,
        shift: f("shift")?,
        mean: f("mean")?,
        var: f("var")?,
    })
}

fn config_floats(cfg: &BackboneConfig) -> Vec<f32> {
    let mut v = vec![
        cfg.scheme.code() as f32,
        cfg.geometric_channels as f32,
        cfg.semantic_channels as f32,
        cfg.blocks.len() as f32,
    ];
    for b in &cfg.blocks {
        v.extend([b.stride, b.layers, b.channels, b.upsample_channels].map(|x| x as f32));
    }
    v
}

fn config_from_floats(v: &[f32]) -> Result<BackboneConfig> {
    let bad = || Error::Checkpoint("malformed config.backbone".into());
    let int = |x: f32| -> Result<usize> {
        if x >= 0.0 && x.fract() == 0.0 && x < 16_777_216.0 {
            Ok(x as usize)
        } else {
            Err(bad())
        }
    };
    if v.len() < 4 {
        return Err(bad());
    }
    let scheme = FusionScheme::from_code(int(v[0])? as u32).ok_or_else(bad)?;
    let n = int(v[3])?;
    if v.len() != 4 + 4 * n {
        return Err(bad());
    }
    let blocks = v[4..]
        .chunks_exact(4)
        .map(|c| {
            Ok(BlockSpec {
                stride: int(c[0])?,
                layers: int(c[1])?,
                channels: int(c[2])?,
                upsample_channels: int(c[3])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = BackboneConfig {
        scheme,
        geometric_channels: int(v[1])?,
        semantic_channels: int(v[2])?,
        blocks,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn model_to_checkpoint(model: &Model) -> Checkpoint {
    let mut ck = Checkpoint::default();
    let cfg = model.config();
    let cv = config_floats(cfg);
    ck.push("config.backbone", vec![cv.len()], cv);

    let pn = &model.pointnet;
    let c = pn.channels();
    ck.push(
        "pointnet.weight",
        vec![c, POINT_FEATURES],
        pn.weight.clone(),
    );
    ck.push("pointnet.bias", vec![c], pn.bias.clone());
    push_bn(&mut ck, "pointnet", &pn.bn);

    let sem = &model.semantic;
    ck.push(
        "semantic.weight",
        vec![sem.out_channels(), sem.in_channels],
        sem.weight.clone(),
    );
    ck.push("semantic.bias", vec![sem.out_channels()], sem.bias.clone());

    for (i, block) in model.backbone.blocks.iter().enumerate() {
        for (l, layer) in block.layers.iter().enumerate() {
            let prefix = format!("backbone.block{i}.conv{l}");
            let cv = &layer.conv;
            ck.push(
                format!("{prefix}.weight"),
                vec![cv.out_channels, cv.in_channels, cv.kernel, cv.kernel],
                cv.weight.clone(),
            );
            push_bn(&mut ck, &prefix, &layer.bn);
        }
        let prefix = format!("backbone.block{i}.up");
        let d = &block.upsample.deconv;
        ck.push(
            format!("{prefix}.weight"),
            vec![d.in_channels, d.out_channels, d.stride, d.stride],
            d.weight.clone(),
        );
        push_bn(&mut ck, &prefix, &block.upsample.bn);
    }

    let h = &model.head;
    let (a, hc) = (h.anchors, h.in_channels);
    ck.push("head.cls.weight", vec![a, hc], h.cls_weight.clone());
    ck.push("head.cls.bias", vec![a], h.cls_bias.clone());
    ck.push(
        "head.box.weight",
        vec![a * BOX_PARAMS, hc],
        h.box_weight.clone(),
    );
    ck.push("head.box.bias", vec![a * BOX_PARAMS], h.box_bias.clone());
    ck.push(
        "head.dir.weight",
        vec![a * DIR_CLASSES, hc],
        h.dir_weight.clone(),
    );
    ck.push("head.dir.bias", vec![a * DIR_CLASSES], h.dir_bias.clone());
    ck
}

pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<Model> {
    ck.validate()?;
    let cfg_block = ck
        .blocks
        .iter()
        .find(|b| b.name == "config.backbone")
        .ok_or_else(|| Error::Checkpoint("missing tensor \"config.backbone\"".into()))?;
    let cfg = config_from_floats(&cfg_block.data)?;

    let c = cfg.geometric_channels;
    let pointnet = PointNetParams {
        weight: ck.get("pointnet.weight", &[c, POINT_FEATURES])?.to_vec(),
        bias: ck.get("pointnet.bias", &[c])?.to_vec(),
        bn: get_bn(ck, "pointnet", c)?,
    };

    let k = cfg.semantic_channels;
    let sem_bias = ck.get("semantic.bias", &[k])?.to_vec();
    let sem_block = ck
        .blocks
        .iter()
        .find(|b| b.name == "semantic.weight")
        .ok_or_else(|| Error::Checkpoint("missing tensor \"semantic.weight\"".into()))?;
    if sem_block.shape.len() != 2 || sem_block.shape[0] != k {
        return Err(Error::ShapeMismatch(format!(
            "tensor \"semantic.weight\" has shape {:?}, expected [{k}, _]",
            sem_block.shape
        )));
    }
    let semantic = SemanticAggParams {
        in_channels: sem_block.shape[1],
        weight: sem_block.data.clone(),
        bias: sem_bias,
    };

    let mut blocks = Vec::with_capacity(cfg.blocks.len());
    for (i, ((spec, c_in), up)) in cfg
        .blocks
        .iter()
        .zip(cfg.block_input_channels())
        .zip(cfg.cumulative_strides())
        .enumerate()
    {
        let mut layers = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let prefix = format!("backbone.block{i}.conv{l}");
            let (cin, stride) = if l == 0 {
                (c_in, spec.stride)
            } else {
                (spec.channels, 1)
            };
            let weight = ck
                .get(
                    &format!("{prefix}.weight"),
                    &[spec.channels, cin, CONV_KERNEL, CONV_KERNEL],
                )?
                .to_vec();
            layers.push(ConvBnRelu {
                conv: Conv2d {
                    in_channels: cin,
                    out_channels: spec.channels,
                    kernel: CONV_KERNEL,
                    stride,
                    weight,
                },
                bn: get_bn(ck, &prefix, spec.channels)?,
            });
        }
        let prefix = format!("backbone.block{i}.up");
        let weight = ck
            .get(
                &format!("{prefix}.weight"),
                &[spec.channels, spec.upsample_channels, up, up],
            )?
            .to_vec();
        blocks.push(Block {
            layers,
            upsample: DeconvBnRelu {
                deconv: ConvTranspose2d {
                    in_channels: spec.channels,
                    out_channels: spec.upsample_channels,
                    stride: up,
                    weight,
                },
                bn: get_bn(ck, &prefix, spec.upsample_channels)?,
            },
        });
    }

    let hc = cfg.head_input_channels();
    let a = ck
        .blocks
        .iter()
        .find(|b| b.name == "head.cls.bias")
        .map(|b| b.data.len())
        .ok_or_else(|| Error::Checkpoint("missing tensor \"head.cls.bias\"".into()))?;
    let head = HeadParams {
        in_channels: hc,
        anchors: a,
        cls_weight: ck.get("head.cls.weight", &[a, hc])?.to_vec(),
        cls_bias: ck.get("head.cls.bias", &[a])?.to_vec(),
        box_weight: ck.get("head.box.weight", &[a * BOX_PARAMS, hc])?.to_vec(),
        box_bias: ck.get("head.box.bias", &[a * BOX_PARAMS])?.to_vec(),
        dir_weight: ck.get("head.dir.weight", &[a * DIR_CLASSES, hc])?.to_vec(),
        dir_bias: ck.get("head.dir.bias", &[a * DIR_CLASSES])?.to_vec(),
    };

    let model = Model {
        pointnet,
        semantic,
        backbone: Backbone { cfg, blocks },
        head,
    };
    model.pointnet.validate()?;
    model.semantic.validate()?;
    model.backbone.validate()?;
    model.head.validate()?;
    Ok(model)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    model_to_checkpoint(model).save(path)
}

pub fn load_model(path: &Path) -> Result<Model> {
    model_from_checkpoint(&Checkpoint::load(path)?)
}
