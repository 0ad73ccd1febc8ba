use pathosr_tensor::{sigmoid, Float, Graph, NodeId, ParamSet, Tensor};
use serde::{Deserialize, Serialize};

use super::{load_params, Conv, Dense, Initializer};
use crate::error::{Error, Result};

/// Architecture of a VGG-style relativistic critic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticSpec {
    pub in_channels: usize,
    /// Expected square input side length.
    pub input_size: usize,
    /// `(out_channels, stride)` for each 3x3 convolution.
    pub conv_stages: Vec<(usize, usize)>,
    pub leak: f64,
    pub head_hidden: usize,
}

impl CriticSpec {
    /// Alternating stride-1 / stride-2 convolutions, doubling width after
    /// each downsampling up to `8 * base`, until the map is at most 4 pixels.
    pub fn vgg_style(input_size: usize, base: usize) -> Self {
        let mut stages = Vec::new();
        let (mut side, mut ch) = (input_size, base);
        while side > 4 && side % 2 == 0 {
            stages.push((ch, 1));
            stages.push((ch, 2));
            side /= 2;
            ch = (ch * 2).min(base * 8);
        }
        if stages.is_empty() {
            stages.push((base, 1));
        }
        Self {
            in_channels: 3,
            input_size,
            conv_stages: stages,
            leak: 0.2,
            head_hidden: 100,
        }
    }

    pub fn total_stride(&self) -> usize {
        self.conv_stages.iter().map(|&(_, s)| s).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_stages.is_empty() {
            return Err(Error::Config("critic needs at least one convolution".into()));
        }
        if self.conv_stages.iter().any(|&(c, s)| c == 0 || s == 0) {
            return Err(Error::Config("critic stage channels and strides must be positive".into()));
        }
        if !(self.leak.is_finite() && self.leak >= 0.0) || self.head_hidden == 0 || self.in_channels == 0 {
            return Err(Error::Config("invalid critic head or activation".into()));
        }
        let stride = self.total_stride();
        if self.input_size == 0 || !self.input_size.is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "critic input size {} not divisible by total stride {stride}",
                self.input_size
            )));
        }
        Ok(())
    }
}

/// Convolutional critic producing one unbounded score per sample.
#[derive(Clone, Debug)]
pub struct Critic<F> {
    spec: CriticSpec,
    params: ParamSet<F>,
    convs: Vec<Conv>,
    hidden: Dense,
    out: Dense,
}

impl<F: Float> Critic<F> {
    pub fn new(spec: &CriticSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut init = Initializer::<F>::new(seed, spec.leak);
        let mut cin = spec.in_channels;
        let convs = spec
            .conv_stages
            .iter()
            .enumerate()
            .map(|(i, &(c, s))| {
                let conv = init.conv(&format!("features.{i}"), cin, c, 3, s, 1.0);
                cin = c;
                conv
            })
            .collect();
        let hidden = init.dense("head.0", cin, spec.head_hidden, 1.0);
        let out = init.dense("head.1", spec.head_hidden, 1, 1.0);
        Ok(Self {
            spec: spec.clone(),
            params: init.params,
            convs,
            hidden,
            out,
        })
    }

    pub fn spec(&self) -> &CriticSpec {
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

    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Vec<NodeId> {
        g.bind(&self.params, trainable)
    }

    /// Scores an NCHW batch, returning a `[N, 1]` node.
    pub fn forward(&self, g: &mut Graph<F>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let (_, c, h, w) = g.value(x).dims4()?;
        if c != self.spec.in_channels || h != self.spec.input_size || w != self.spec.input_size {
            return Err(Error::Shape(format!(
                "critic expects {}x{0}x{} input, got {c}x{h}x{w}",
                self.spec.in_channels, self.spec.input_size
            )));
        }
        let mut h = x;
        for conv in &self.convs {
            let y = conv.forward(g, p, h)?;
            h = g.leaky_relu(y, self.spec.leak);
        }
        let pooled = g.global_avg_pool(h)?;
        let y = self.hidden.forward(g, p, pooled)?;
        let y = g.leaky_relu(y, self.spec.leak);
        self.out.forward(g, p, y)
    }

    /// Raw scores for a batch, without recording gradients.
    pub fn scores(&self, x: &Tensor<F>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xn = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xn)?;
        Ok(g.value(y).data().iter().map(|v| v.as_f64()).collect())
    }
}

/// `sigmoid(C(a_i) - mean_j C(b_j))` for each sample of `a`.
pub fn relativistic_prob<F: Float>(critic: &Critic<F>, a: &Tensor<F>, b: &Tensor<F>) -> Result<Vec<f64>> {
    let sa = critic.scores(a)?;
    let sb = critic.scores(b)?;
    relativistic_prob_from_scores(&sa, &sb)
}

pub fn relativistic_prob_from_scores(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Shape("relativistic probability of an empty batch".into()));
    }
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    Ok(a.iter().map(|&s| sigmoid(s - mb)).collect())
}
