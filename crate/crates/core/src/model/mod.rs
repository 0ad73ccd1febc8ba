//! Generator and critic networks.

mod critic;
mod generator;

pub use critic::{relativistic_prob, relativistic_prob_from_scores, Critic, CriticSpec};
pub use generator::{Generator, GeneratorSpec};

use pathosr_tensor::{Float, Graph, NodeId, ParamSet, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// 3x3 (or `kernel`) convolution with padding `kernel / 2`, referencing its
/// weight and bias by index into the owning network's [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

impl Conv {
    pub(crate) fn forward<F: Float>(&self, g: &mut Graph<F>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        Ok(g.conv2d(x, p[self.w], Some(p[self.b]), self.stride, self.pad)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dense {
    w: usize,
    b: usize,
}

impl Dense {
    pub(crate) fn forward<F: Float>(&self, g: &mut Graph<F>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        Ok(g.linear(x, p[self.w], Some(p[self.b]))?)
    }
}

/// Seeded parameter factory using Kaiming-normal fan-in scaling.
pub(crate) struct Initializer<F> {
    rng: ChaCha8Rng,
    leak: f64,
    pub(crate) params: ParamSet<F>,
}

impl<F: Float> Initializer<F> {
    pub(crate) fn new(seed: u64, leak: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            leak,
            params: ParamSet::new(),
        }
    }

    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor<F> {
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| F::of(dist.sample(&mut self.rng)))
    }

    fn kaiming_std(&self, fan_in: usize, gain: f64) -> f64 {
        gain * (2.0 / ((1.0 + self.leak * self.leak) * fan_in as f64)).sqrt()
    }

    pub(crate) fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, gain: f64) -> Conv {
        let std = self.kaiming_std(cin * kernel * kernel, gain);
        let w = self.normal(&[cout, cin, kernel, kernel], std);
        let w = self.params.push(format!("{name}.weight"), w);
        let b = self.params.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Conv {
            w,
            b,
            stride,
            pad: kernel / 2,
        }
    }

    pub(crate) fn dense(&mut self, name: &str, fin: usize, fout: usize, gain: f64) -> Dense {
        let std = self.kaiming_std(fin, gain);
        let w = self.normal(&[fout, fin], std);
        let w = self.params.push(format!("{name}.weight"), w);
        let b = self.params.push(format!("{name}.bias"), Tensor::zeros(&[fout]));
        Dense { w, b }
    }
}

/// Replaces parameter values in place after checking names and shapes match.
pub(crate) fn load_params<F: Float>(dst: &mut ParamSet<F>, src: ParamSet<F>) -> Result<()> {
    use crate::error::Error;
    if dst.len() != src.len() {
        return Err(Error::Shape(format!(
            "expected {} parameter tensors, found {}",
            dst.len(),
            src.len()
        )));
    }
    for ((dn, dt), (sn, st)) in dst.iter().zip(src.iter()) {
        if dn != sn || dt.shape() != st.shape() {
            return Err(Error::Shape(format!(
                "parameter {dn} {:?} vs stored {sn} {:?}",
                dt.shape(),
                st.shape()
            )));
        }
    }
    *dst = src;
    Ok(())
}
