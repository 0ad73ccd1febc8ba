//! Reconstruction, critic and adversarial objectives.

mod perceptual;

pub use perceptual::{read_safetensors, FeatureExtractor, VggLayer, IMAGENET_MEAN, IMAGENET_STD, VGG19_TO_CONV5_4};

use pathosr_tensor::{Float, Graph, NodeId, Tensor, Window};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, LUMA_WEIGHTS};
use crate::model::Critic;

/// Clamp applied to relativistic probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the pixel term in the reconstruction loss.
    pub eta: f64,
    pub lambda_t1: f64,
    pub lambda_t2: f64,
    /// Edge emphasis for the edge-weighted pixel term.
    pub alpha_edge: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            eta: 1e-2,
            lambda_t1: 5e-3,
            lambda_t2: 5e-3,
            alpha_edge: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta", self.eta),
            ("lambda_t1", self.lambda_t1),
            ("lambda_t2", self.lambda_t2),
            ("alpha_edge", self.alpha_edge),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn sobel_magnitude(luma: &[f64], width: usize, height: usize) -> Vec<f64> {
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, height as isize - 1) as usize;
        let c = c.clamp(0, width as isize - 1) as usize;
        luma[r * width + c]
    };
    let mut out = Vec::with_capacity(width * height);
    for r in 0..height as isize {
        for c in 0..width as isize {
            let gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
            out.push(gx.hypot(gy));
        }
    }
    out
}

fn weights_from_luma(luma: &[f64], width: usize, height: usize, alpha: f64) -> Vec<f64> {
    let mag = sobel_magnitude(luma, width, height);
    let max = mag.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![1.0; mag.len()];
    }
    mag.iter().map(|m| 1.0 + alpha * m / max).collect()
}

/// Per-pixel weights `1 + alpha * |sobel(luma)| / max`, row-major `H x W`.
/// Borders replicate the edge pixel, so constant images map to all ones.
pub fn edge_weight_map(hr: &Image, alpha: f64) -> Vec<f64> {
    weights_from_luma(&hr.luma(), hr.width(), hr.height(), alpha)
}

/// [`edge_weight_map`] for every sample of an NCHW batch, broadcast over
/// channels so it can weight an element-wise error directly.
pub fn edge_weight_tensor<F: Float>(hr: &Tensor<F>, alpha: f64) -> Result<Tensor<F>> {
    let (n, c, h, w) = hr.dims4()?;
    let plane = h * w;
    let mut out = Vec::with_capacity(hr.numel());
    for s in 0..n {
        let sample = &hr.data()[s * c * plane..(s + 1) * c * plane];
        let luma: Vec<f64> = if c == 3 {
            (0..plane)
                .map(|i| (0..3).map(|ch| LUMA_WEIGHTS[ch] * sample[ch * plane + i].as_f64()).sum())
                .collect()
        } else {
            sample[..plane].iter().map(|v| v.as_f64()).collect()
        };
        let weights = weights_from_luma(&luma, w, h, alpha);
        for _ in 0..c {
            out.extend(weights.iter().map(|&v| F::of(v)));
        }
    }
    Ok(Tensor::new(hr.shape(), out)?)
}

/// `eta * mean(|sr - hr|) + mean((phi(sr) - phi(hr))^2)`, with the pixel
/// term weighted by [`edge_weight_tensor`] when `edge_weighted`.
pub fn recon_loss<F: Float>(
    g: &mut Graph<F>,
    sr: NodeId,
    hr: &Tensor<F>,
    weights: &LossWeights,
    phi: Option<&FeatureExtractor<F>>,
    edge_weighted: bool,
) -> Result<NodeId> {
    if g.value(sr).shape() != hr.shape() {
        return Err(Error::Shape(format!(
            "recon_loss: sr {:?} vs hr {:?}",
            g.value(sr).shape(),
            hr.shape()
        )));
    }
    let edge = if edge_weighted {
        Some(edge_weight_tensor(hr, weights.alpha_edge)?)
    } else {
        None
    };
    let pixel = g.abs_error(sr, hr, edge.as_ref())?;
    match phi {
        Some(phi) => {
            let fs = phi.forward(g, sr)?;
            let hr_node = g.constant(hr.clone());
            let fh = phi.forward(g, hr_node)?;
            let perceptual = g.squared_error(fs, fh)?;
            Ok(g.weighted_sum(&[pixel, perceptual], &[weights.eta, 1.0])?)
        }
        None => Ok(g.scale(pixel, weights.eta)),
    }
}

/// Relativistic-average pair loss on precomputed score nodes:
/// `-E log T(x, y) - E log(1 - T(y, x))`.
fn relativistic_pair<F: Float>(g: &mut Graph<F>, x: NodeId, y: NodeId) -> Result<NodeId> {
    let a = g.relativistic_bce(x, y, true, PROB_EPS)?;
    let b = g.relativistic_bce(y, x, false, PROB_EPS)?;
    Ok(g.add(a, b)?)
}

/// Critic objective with the critic's parameters bound as `params`; `real`
/// and `fake` enter as constants so nothing upstream receives gradient.
pub fn critic_loss<F: Float>(
    g: &mut Graph<F>,
    critic: &Critic<F>,
    params: &[NodeId],
    real: &Tensor<F>,
    fake: &Tensor<F>,
) -> Result<NodeId> {
    if real.shape().first() == Some(&0) || fake.shape().first() == Some(&0) {
        return Err(Error::Shape("critic_loss: empty batch".into()));
    }
    let real = g.constant(real.clone());
    let fake = g.constant(fake.clone());
    let sr = critic.forward(g, params, real)?;
    let sf = critic.forward(g, params, fake)?;
    relativistic_pair(g, sr, sf)
}

/// A critic together with its parameters bound into the current graph.
#[derive(Clone, Copy)]
pub struct BoundCritic<'a, F> {
    pub critic: &'a Critic<F>,
    pub params: &'a [NodeId],
}

/// ROI windows for the patch critic, in HR coordinates of the batch.
#[derive(Clone, Copy)]
pub struct RoiBatch<'a> {
    pub windows: &'a [Window],
    pub patch_size: usize,
}

/// Generator adversarial objective: the relativistic pair loss with the
/// roles of real and generated swapped, on whole images (T1) and on ROI
/// patches (T2). The T2 term is 0 without windows or without `t2`.
pub fn generator_adv_loss<F: Float>(
    g: &mut Graph<F>,
    t1: BoundCritic<'_, F>,
    t2: Option<BoundCritic<'_, F>>,
    sr: NodeId,
    hr: &Tensor<F>,
    roi: RoiBatch<'_>,
    weights: &LossWeights,
) -> Result<NodeId> {
    if g.value(sr).shape() != hr.shape() {
        return Err(Error::Shape(format!(
            "generator_adv_loss: sr {:?} vs hr {:?}",
            g.value(sr).shape(),
            hr.shape()
        )));
    }
    let hr_node = g.constant(hr.clone());
    let s_sr = t1.critic.forward(g, t1.params, sr)?;
    let s_hr = t1.critic.forward(g, t1.params, hr_node)?;
    let whole = relativistic_pair(g, s_sr, s_hr)?;
    let mut terms = vec![whole];
    let mut lambdas = vec![weights.lambda_t1];
    if let Some(t2) = t2 {
        if !roi.windows.is_empty() {
            let x_sr = g.gather_windows(sr, roi.windows, roi.patch_size)?;
            let x_hr = g.gather_windows(hr_node, roi.windows, roi.patch_size)?;
            let p_sr = t2.critic.forward(g, t2.params, x_sr)?;
            let p_hr = t2.critic.forward(g, t2.params, x_hr)?;
            terms.push(relativistic_pair(g, p_sr, p_hr)?);
            lambdas.push(weights.lambda_t2);
        }
    }
    Ok(g.weighted_sum(&terms, &lambdas)?)
}

/// Cuts ROI windows out of a detached NCHW batch, stacked `[K, C, p, p]`.
pub fn gather_patches<F: Float>(batch: &Tensor<F>, windows: &[Window], size: usize) -> Result<Tensor<F>> {
    let mut g = Graph::new();
    let x = g.constant(batch.clone());
    let y = g.gather_windows(x, windows, size)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_weights_are_one() {
        let img = Image::filled(9, 7, 3, 0.3).unwrap();
        assert!(edge_weight_map(&img, 1.0).iter().all(|&w| w == 1.0));
    }

    #[test]
    fn vertical_step_edge_band() {
        let img = Image::from_fn(10, 6, 1, |_, c, _| if c < 5 { 0.0 } else { 1.0 }).unwrap();
        let w = edge_weight_map(&img, 1.0);
        for r in 0..6 {
            let row = &w[r * 10..(r + 1) * 10];
            assert_eq!(row[4], 2.0);
            assert_eq!(row[5], 2.0);
            assert_eq!(row[0], 1.0);
            assert_eq!(row[9], 1.0);
        }
        assert!(edge_weight_map(&img, 0.0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights {
            eta: -1.0,
            ..Default::default()
        };
        assert!(matches!(w.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn closed_form_pixel_loss() {
        let hr = Tensor::<f64>::full(&[1, 3, 4, 4], 0.3);
        let sr = hr.map(|v| v + 0.1);
        let w = LossWeights {
            eta: 1.0,
            ..Default::default()
        };
        let mut g = Graph::new();
        let s = g.variable(sr);
        let l = recon_loss(&mut g, s, &hr, &w, None, false).unwrap();
        assert!((g.value(l).item() - 0.1).abs() < 1e-12);
        let mut g = Graph::new();
        let s = g.variable(hr.clone());
        let l = recon_loss(&mut g, s, &hr, &w, None, true).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }
}
