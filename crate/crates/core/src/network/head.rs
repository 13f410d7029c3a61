//! Detection head: three independent 1×1 convolutions producing per-anchor
//! classification logits, box deltas, and direction logits.
//!
//! Outputs are kept in `f64` so that losses and their gradients can be checked
//! against finite differences without single-precision noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::FeatureMap;

/// Box delta components per anchor: `(Δx, Δy, Δz, Δl, Δw, Δh, Δθ)`.
pub const BOX_PARAMS: usize = 7;
/// Direction classes per anchor.
pub const DIR_CLASSES: usize = 2;

/// Weights of the three 1×1 convolutions, each row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub in_channels: usize,
    pub anchors: usize,
    pub cls_weight: Vec<f32>,
    pub cls_bias: Vec<f32>,
    pub box_weight: Vec<f32>,
    pub box_bias: Vec<f32>,
    pub dir_weight: Vec<f32>,
    pub dir_bias: Vec<f32>,
}

impl HeadParams {
    pub fn zeros(in_channels: usize, anchors: usize) -> Self {
        Self {
            in_channels,
            anchors,
            cls_weight: vec![0.0; anchors * in_channels],
            cls_bias: vec![0.0; anchors],
            box_weight: vec![0.0; anchors * BOX_PARAMS * in_channels],
            box_bias: vec![0.0; anchors * BOX_PARAMS],
            dir_weight: vec![0.0; anchors * DIR_CLASSES * in_channels],
            dir_bias: vec![0.0; anchors * DIR_CLASSES],
        }
    }

    pub fn random(in_channels: usize, anchors: usize, scale: f32, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, scale / (in_channels as f32).sqrt()).unwrap();
        let mut p = Self::zeros(in_channels, anchors);
        for w in p
            .cls_weight
            .iter_mut()
            .chain(&mut p.box_weight)
            .chain(&mut p.dir_weight)
        {
            *w = normal.sample(rng);
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let (c, a) = (self.in_channels, self.anchors);
        let shapes = [
            ("cls weight", self.cls_weight.len(), a * c),
            ("cls bias", self.cls_bias.len(), a),
            ("box weight", self.box_weight.len(), a * BOX_PARAMS * c),
            ("box bias", self.box_bias.len(), a * BOX_PARAMS),
            ("dir weight", self.dir_weight.len(), a * DIR_CLASSES * c),
            ("dir bias", self.dir_bias.len(), a * DIR_CLASSES),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::ShapeMismatch(format!(
                    "head {name} has {got} values, expected {want}"
                )));
            }
        }
        let all = [
            &self.cls_weight,
            &self.cls_bias,
            &self.box_weight,
            &self.box_bias,
            &self.dir_weight,
            &self.dir_bias,
        ];
        if !all.iter().all(|v| v.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidConfig(
                "head parameters must be finite".into(),
            ));
        }
        Ok(())
    }

    /// `param -= lr * grad` for every tensor.
    pub fn apply_gradient(&mut self, grads: &HeadParamGrads, lr: f64) {
        let pairs: [(&mut Vec<f32>, &Vec<f64>); 6] = [
            (&mut self.cls_weight, &grads.cls_weight),
            (&mut self.cls_bias, &grads.cls_bias),
            (&mut self.box_weight, &grads.box_weight),
            (&mut self.box_bias, &grads.box_bias),
            (&mut self.dir_weight, &grads.dir_weight),
            (&mut self.dir_bias, &grads.dir_bias),
        ];
        for (p, g) in pairs {
            for (w, d) in p.iter_mut().zip(g) {
                *w = (*w as f64 - lr * d) as f32;
            }
        }
    }
}

/// Per-anchor head outputs. Anchor `i = (x_index * width + y_index) * anchors + a`.
/// The same layout carries loss gradients with respect to these outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub width: usize,
    pub height: usize,
    pub anchors: usize,
    /// Output stride relative to the BEV grid.
    pub stride: usize,
    /// `[i]`
    pub cls_logits: Vec<f64>,
    /// `[i * 7 + k]`
    pub box_deltas: Vec<f64>,
    /// `[i * 2 + k]`
    pub dir_logits: Vec<f64>,
}

impl HeadOutput {
    pub fn zeros(width: usize, height: usize, anchors: usize) -> Self {
        let n = width * height * anchors;
        Self {
            width,
            height,
            anchors,
            stride: 1,
            cls_logits: vec![0.0; n],
            box_deltas: vec![0.0; n * BOX_PARAMS],
            dir_logits: vec![0.0; n * DIR_CLASSES],
        }
    }

    pub fn num_anchors(&self) -> usize {
        self.cls_logits.len()
    }

    pub fn deltas(&self, i: usize) -> [f64; BOX_PARAMS] {
        std::array::from_fn(|k| self.box_deltas[i * BOX_PARAMS + k])
    }

    pub fn dir(&self, i: usize) -> [f64; DIR_CLASSES] {
        [self.dir_logits[i * 2], self.dir_logits[i * 2 + 1]]
    }

    /// All outputs in one vector: classification, then boxes, then directions.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(
            self.cls_logits.len() + self.box_deltas.len() + self.dir_logits.len(),
        );
        v.extend_from_slice(&self.cls_logits);
        v.extend_from_slice(&self.box_deltas);
        v.extend_from_slice(&self.dir_logits);
        v
    }

    /// Mutable access to the `k`-th entry of [`Self::flatten`]'s order.
    pub fn flat_mut(&mut self, k: usize) -> &mut f64 {
        let (nc, nb) = (self.cls_logits.len(), self.box_deltas.len());
        if k < nc {
            &mut self.cls_logits[k]
        } else if k < nc + nb {
            &mut self.box_deltas[k - nc]
        } else {
            &mut self.dir_logits[k - nc - nb]
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

fn affine(weight: &[f32], bias: &[f32], x: &[f32], out: &mut [f64]) {
    let c = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &weight[o * c..(o + 1) * c];
        let mut acc = bias[o] as f64;
        for (w, v) in row.iter().zip(x) {
            acc += *w as f64 * *v as f64;
        }
        *y = acc;
    }
}

pub fn head_forward(feat: &FeatureMap, params: &HeadParams) -> Result<HeadOutput> {
    params.validate()?;
    if feat.channels != params.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "head expects {} channels, got {}",
            params.in_channels, feat.channels
        )));
    }
    let a = params.anchors;
    let mut out = HeadOutput::zeros(feat.width, feat.height, a);
    for cell in 0..feat.num_cells() {
        let x = &feat.data[cell * feat.channels..(cell + 1) * feat.channels];
        affine(
            &params.cls_weight,
            &params.cls_bias,
            x,
            &mut out.cls_logits[cell * a..(cell + 1) * a],
        );
        affine(
            &params.box_weight,
            &params.box_bias,
            x,
            &mut out.box_deltas[cell * a * BOX_PARAMS..(cell + 1) * a * BOX_PARAMS],
        );
        affine(
            &params.dir_weight,
            &params.dir_bias,
            x,
            &mut out.dir_logits[cell * a * DIR_CLASSES..(cell + 1) * a * DIR_CLASSES],
        );
    }
    Ok(out)
}

/// Gradients of a scalar loss with respect to the head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParamGrads {
    pub cls_weight: Vec<f64>,
    pub cls_bias: Vec<f64>,
    pub box_weight: Vec<f64>,
    pub box_bias: Vec<f64>,
    pub dir_weight: Vec<f64>,
    pub dir_bias: Vec<f64>,
}

/// Back-propagates output gradients (in [`HeadOutput`] layout) through the 1×1 convolutions.
pub fn head_param_grads(
    feat: &FeatureMap,
    params: &HeadParams,
    grad: &HeadOutput,
) -> Result<HeadParamGrads> {
    if grad.width != feat.width || grad.height != feat.height || grad.anchors != params.anchors {
        return Err(Error::ShapeMismatch(
            "gradient does not match the feature map".into(),
        ));
    }
    let c = params.in_channels;
    let a = params.anchors;
    let mut g = HeadParamGrads {
        cls_weight: vec![0.0; params.cls_weight.len()],
        cls_bias: vec![0.0; params.cls_bias.len()],
        box_weight: vec![0.0; params.box_weight.len()],
        box_bias: vec![0.0; params.box_bias.len()],
        dir_weight: vec![0.0; params.dir_weight.len()],
        dir_bias: vec![0.0; params.dir_bias.len()],
    };
    let accumulate = |w: &mut [f64], b: &mut [f64], x: &[f32], dy: &[f64]| {
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            b[o] += d;
            for (wi, &xv) in w[o * c..(o + 1) * c].iter_mut().zip(x) {
                *wi += d * xv as f64;
            }
        }
    };
    for cell in 0..feat.num_cells() {
        let x = &feat.data[cell * c..(cell + 1) * c];
        accumulate(
            &mut g.cls_weight,
            &mut g.cls_bias,
            x,
            &grad.cls_logits[cell * a..(cell + 1) * a],
        );
        accumulate(
            &mut g.box_weight,
            &mut g.box_bias,
            x,
            &grad.box_deltas[cell * a * BOX_PARAMS..(cell + 1) * a * BOX_PARAMS],
        );
        accumulate(
            &mut g.dir_weight,
            &mut g.dir_bias,
            x,
            &grad.dir_logits[cell * a * DIR_CLASSES..(cell + 1) * a * DIR_CLASSES],
        );
    }
    Ok(g)
}
