//! Dense convolution primitives on [`FeatureMap`]s.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::FeatureMap;
use crate::pillars::BatchNorm;

/// Square convolution with zero padding `kernel / 2` and no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `(out, in, ky, kx)` row-major, `ky` along x cells, `kx` along y cells.
    pub weight: Vec<f32>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
        }
    }

    pub fn random(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f32;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
        let mut conv = Self::zeros(in_channels, out_channels, kernel, stride);
        conv.weight.iter_mut().for_each(|w| *w = normal.sample(rng));
        conv
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// Output extent for an input extent `n`.
    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.padding() - self.kernel) / self.stride + 1
    }

    pub fn weight_at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weight[((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx]
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) || self.stride == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv kernel {} / stride {} unsupported",
                self.kernel, self.stride
            )));
        }
        if self.weight.len() != self.out_channels * self.in_channels * self.kernel * self.kernel {
            return Err(Error::ShapeMismatch(format!(
                "conv weight has {} values, expected {}x{}x{}x{}",
                self.weight.len(),
                self.out_channels,
                self.in_channels,
                self.kernel,
                self.kernel
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        self.validate()?;
        if input.channels != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, input.channels
            )));
        }
        let (k, s, pad) = (self.kernel, self.stride, self.padding() as isize);
        let (ci_n, co_n) = (self.in_channels, self.out_channels);
        // Taps as (ky, kx, in) rows of `out` contiguous weights.
        let mut taps = vec![0.0f32; k * k * ci_n * co_n];
        for o in 0..co_n {
            for i in 0..ci_n {
                for ky in 0..k {
                    for kx in 0..k {
                        taps[((ky * k + kx) * ci_n + i) * co_n + o] = self.weight_at(o, i, ky, kx);
                    }
                }
            }
        }
        let (out_h, out_w) = (self.out_size(input.height), self.out_size(input.width));
        let mut out = FeatureMap::zeros(out_w, out_h, co_n);
        for ox in 0..out_h {
            for oy in 0..out_w {
                let acc = out.cell_mut(ox, oy);
                for ky in 0..k {
                    let ix = (ox * s) as isize + ky as isize - pad;
                    if ix < 0 || ix >= input.height as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let iy = (oy * s) as isize + kx as isize - pad;
                        if iy < 0 || iy >= input.width as isize {
                            continue;
                        }
                        let cell = input.cell(ix as usize, iy as usize);
                        let base = (ky * k + kx) * ci_n;
                        for (i, &v) in cell.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let row = &taps[(base + i) * co_n..(base + i + 1) * co_n];
                            for (a, &w) in acc.iter_mut().zip(row) {
                                *a += v * w;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Transposed convolution with `kernel == stride` (non-overlapping upsampling).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// `(in, out, ky, kx)` row-major with `ky, kx < stride`.
    pub weight: Vec<f32>,
}

impl ConvTranspose2d {
    pub fn zeros(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            stride,
            weight: vec![0.0; in_channels * out_channels * stride * stride],
        }
    }

    pub fn random(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let normal = Normal::new(0.0, (2.0 / in_channels as f32).sqrt()).unwrap();
        let mut t = Self::zeros(in_channels, out_channels, stride);
        t.weight.iter_mut().for_each(|w| *w = normal.sample(rng));
        t
    }

    pub fn weight_at(&self, i: usize, o: usize, ky: usize, kx: usize) -> f32 {
        self.weight[((i * self.out_channels + o) * self.stride + ky) * self.stride + kx]
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidConfig(
                "transposed conv stride must be positive".into(),
            ));
        }
        if self.weight.len() != self.in_channels * self.out_channels * self.stride * self.stride {
            return Err(Error::ShapeMismatch(format!(
                "transposed conv weight has {} values, expected {}x{}x{s}x{s}",
                self.weight.len(),
                self.in_channels,
                self.out_channels,
                s = self.stride
            )));
        }
        Ok(())
    }

    /// Upsamples by `stride` and crops the result to `(out_height, out_width)`.
    pub fn forward(
        &self,
        input: &FeatureMap,
        out_height: usize,
        out_width: usize,
    ) -> Result<FeatureMap> {
        self.validate()?;
        if input.channels != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "transposed conv expects {} input channels, got {}",
                self.in_channels, input.channels
            )));
        }
        let s = self.stride;
        if input.height * s < out_height || input.width * s < out_width {
            return Err(Error::ShapeMismatch(format!(
                "cannot upsample {}x{} by {s} to {out_height}x{out_width}",
                input.height, input.width
            )));
        }
        let (ci_n, co_n) = (self.in_channels, self.out_channels);
        let mut taps = vec![0.0f32; s * s * ci_n * co_n];
        for i in 0..ci_n {
            for o in 0..co_n {
                for ky in 0..s {
                    for kx in 0..s {
                        taps[((ky * s + kx) * ci_n + i) * co_n + o] = self.weight_at(i, o, ky, kx);
                    }
                }
            }
        }
        let mut out = FeatureMap::zeros(out_width, out_height, co_n);
        for ox in 0..out_height {
            for oy in 0..out_width {
                let (ix, ky, iy, kx) = (ox / s, ox % s, oy / s, oy % s);
                let cell = input.cell(ix, iy);
                let base = (ky * s + kx) * ci_n;
                let acc = out.cell_mut(ox, oy);
                for (i, &v) in cell.iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    let row = &taps[(base + i) * co_n..(base + i + 1) * co_n];
                    for (a, &w) in acc.iter_mut().zip(row) {
                        *a += v * w;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Batch norm followed by ReLU, in place.
pub fn bn_relu(map: &mut FeatureMap, bn: &BatchNorm) -> Result<()> {
    bn.validate(map.channels, "feature map")?;
    let c = map.channels;
    let factors: Vec<(f32, f32)> = (0..c)
        .map(|i| {
            let a = bn.scale[i] / bn.var[i].sqrt();
            (a, bn.shift[i] - bn.mean[i] * a)
        })
        .collect();
    for cell in map.data.chunks_exact_mut(c.max(1)) {
        for (v, &(a, b)) in cell.iter_mut().zip(&factors) {
            *v = (*v * a + b).max(0.0);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl ConvBnRelu {
    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        let mut out = self.conv.forward(input)?;
        bn_relu(&mut out, &self.bn)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeconvBnRelu {
    pub deconv: ConvTranspose2d,
    pub bn: BatchNorm,
}

impl DeconvBnRelu {
    pub fn forward(
        &self,
        input: &FeatureMap,
        out_height: usize,
        out_width: usize,
    ) -> Result<FeatureMap> {
        let mut out = self.deconv.forward(input, out_height, out_width)?;
        bn_relu(&mut out, &self.bn)?;
        Ok(out)
    }
}
