use pathosr_tensor::{Float, Graph, NodeId, ParamSet, Tensor};
use serde::{Deserialize, Serialize};

use super::{load_params, Conv, Initializer};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::resample::LinearScale;

const LEAK: f64 = 0.2;

/// Architecture of the RRDB super-resolution generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub in_channels: usize,
    pub n_rrdb_blocks: usize,
    pub base_channels: usize,
    pub growth_channels: usize,
    pub linear_scale: LinearScale,
    /// Scaling applied to each dense block's residual before it is added back.
    pub residual_scaling: f64,
    /// Add the nearest-upsampled input to the output, so the network learns
    /// a correction on top of pixel replication.
    pub global_residual: bool,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            in_channels: 3,
            n_rrdb_blocks: 8,
            base_channels: 64,
            growth_channels: 32,
            linear_scale: LinearScale::new(4).expect("supported"),
            residual_scaling: 0.2,
            global_residual: true,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_rrdb_blocks == 0 {
            return Err(Error::Config("generator needs at least one RRDB block".into()));
        }
        if self.base_channels == 0 || self.growth_channels == 0 {
            return Err(Error::Config("generator channel widths must be positive".into()));
        }
        if self.in_channels != 1 && self.in_channels != 3 {
            return Err(Error::Config(format!("unsupported input channels {}", self.in_channels)));
        }
        if !(self.residual_scaling > 0.0 && self.residual_scaling <= 1.0) {
            return Err(Error::Config(format!(
                "residual_scaling {} outside (0, 1]",
                self.residual_scaling
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct DenseBlock {
    convs: [Conv; 5],
}

#[derive(Clone, Debug)]
struct Rrdb {
    blocks: [DenseBlock; 3],
}

/// ESRGAN-style generator: residual-in-residual dense blocks on LR features,
/// then one sub-pixel convolution stage per factor of the scale.
#[derive(Clone, Debug)]
pub struct Generator<F> {
    spec: GeneratorSpec,
    params: ParamSet<F>,
    conv_first: Conv,
    body: Vec<Rrdb>,
    conv_body: Conv,
    upsample: Vec<(Conv, usize)>,
    conv_hr: Conv,
    conv_last: Conv,
}

impl<F: Float> Generator<F> {
    /// Residual branches (dense-block convolutions and the output layer)
    /// start at 0.1x the Kaiming scale.
    pub fn new(spec: &GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (nf, gc) = (spec.base_channels, spec.growth_channels);
        let mut init = Initializer::<F>::new(seed, LEAK);
        let conv_first = init.conv("conv_first", spec.in_channels, nf, 3, 1, 1.0);
        let body = (0..spec.n_rrdb_blocks)
            .map(|i| Rrdb {
                blocks: [1, 2, 3].map(|j| DenseBlock {
                    convs: [0, 1, 2, 3, 4].map(|k| {
                        let cout = if k == 4 { nf } else { gc };
                        init.conv(&format!("body.{i}.rdb{j}.conv{}", k + 1), nf + k * gc, cout, 3, 1, 0.1)
                    }),
                }),
            })
            .collect();
        let conv_body = init.conv("conv_body", nf, nf, 3, 1, 1.0);
        let upsample = spec
            .linear_scale
            .stages()
            .iter()
            .enumerate()
            .map(|(i, &r)| (init.conv(&format!("conv_up{}", i + 1), nf, nf * r * r, 3, 1, 1.0), r))
            .collect();
        let conv_hr = init.conv("conv_hr", nf, nf, 3, 1, 1.0);
        let conv_last = init.conv("conv_last", nf, spec.in_channels, 3, 1, 0.1);
        Ok(Self {
            spec: spec.clone(),
            params: init.params,
            conv_first,
            body,
            conv_body,
            upsample,
            conv_hr,
            conv_last,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    pub fn load_params(&mut self, params: ParamSet<F>) -> Result<()> {
        load_params(&mut self.params, params)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn scale(&self) -> LinearScale {
        self.spec.linear_scale
    }

    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Vec<NodeId> {
        g.bind(&self.params, trainable)
    }

    fn dense_block(&self, g: &mut Graph<F>, p: &[NodeId], block: &DenseBlock, x: NodeId) -> Result<NodeId> {
        let mut features = vec![x];
        for conv in &block.convs[..4] {
            let input = g.concat_channels(&features)?;
            let y = conv.forward(g, p, input)?;
            features.push(g.leaky_relu(y, LEAK));
        }
        let input = g.concat_channels(&features)?;
        let y = block.convs[4].forward(g, p, input)?;
        Ok(g.weighted_sum(&[y, x], &[self.spec.residual_scaling, 1.0])?)
    }

    /// Builds the forward pass for an NCHW LR batch; output is unclamped.
    pub fn forward(&self, g: &mut Graph<F>, p: &[NodeId], lr: NodeId) -> Result<NodeId> {
        let (_, c, _, _) = g.value(lr).dims4()?;
        if c != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "generator expects {} channels, got {c}",
                self.spec.in_channels
            )));
        }
        let feat = self.conv_first.forward(g, p, lr)?;
        let mut trunk = feat;
        for rrdb in &self.body {
            let mut h = trunk;
            for block in &rrdb.blocks {
                h = self.dense_block(g, p, block, h)?;
            }
            trunk = g.weighted_sum(&[h, trunk], &[self.spec.residual_scaling, 1.0])?;
        }
        let trunk = self.conv_body.forward(g, p, trunk)?;
        let mut h = g.add(feat, trunk)?;
        for (conv, r) in &self.upsample {
            let y = conv.forward(g, p, h)?;
            let y = g.pixel_shuffle(y, *r)?;
            h = g.leaky_relu(y, LEAK);
        }
        let y = self.conv_hr.forward(g, p, h)?;
        let y = g.leaky_relu(y, LEAK);
        let out = self.conv_last.forward(g, p, y)?;
        if self.spec.global_residual {
            let base = g.upsample_nearest(lr, self.spec.linear_scale.get())?;
            Ok(g.add(out, base)?)
        } else {
            Ok(out)
        }
    }

    /// Inference on an NCHW batch without recording gradients; unclamped.
    pub fn forward_tensor(&self, lr: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(lr.clone());
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }

    /// Super-resolves a batch of same-sized images; outputs clamped to `[0, 1]`.
    pub fn super_resolve_batch(&self, lr: &[&Image]) -> Result<Vec<Image>> {
        let t = Image::batch_to_tensor::<F>(lr)?;
        let y = self.forward_tensor(&t)?;
        (0..lr.len()).map(|i| Image::from_tensor(&y, i)).collect()
    }

    /// Super-resolves one image, in overlapping tiles when it is larger than
    /// `tile` LR pixels per side. Tiles overlap by `overlap` LR pixels and
    /// each output pixel is taken from the tile whose core contains it.
    pub fn super_resolve(&self, lr: &Image, tile: usize, overlap: usize) -> Result<Image> {
        if lr.channels() != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "generator expects {} channels, got {}",
                self.spec.in_channels,
                lr.channels()
            )));
        }
        let s = self.spec.linear_scale.get();
        if lr.width() <= tile && lr.height() <= tile {
            return Ok(self.super_resolve_batch(&[lr])?.remove(0));
        }
        let c = lr.channels();
        let (ow, oh) = (lr.width() * s, lr.height() * s);
        let mut out = vec![0.0f32; ow * oh * c];
        for r0 in (0..lr.height()).step_by(tile) {
            for c0 in (0..lr.width()).step_by(tile) {
                let (th, tw) = (tile.min(lr.height() - r0), tile.min(lr.width() - c0));
                let rr = r0.saturating_sub(overlap);
                let cc = c0.saturating_sub(overlap);
                let rh = (r0 + th + overlap).min(lr.height()) - rr;
                let cw = (c0 + tw + overlap).min(lr.width()) - cc;
                let patch = lr.crop(rr, cc, rh, cw)?;
                let sr = self.super_resolve_batch(&[&patch])?.remove(0);
                for y in r0 * s..(r0 + th) * s {
                    for x in c0 * s..(c0 + tw) * s {
                        for ch in 0..c {
                            out[(y * ow + x) * c + ch] = sr.get(y - rr * s, x - cc * s, ch);
                        }
                    }
                }
            }
        }
        Image::new(ow, oh, c, out)
    }
}
