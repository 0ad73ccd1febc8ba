use crate::{Float, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments live here, not on the parameters, so
/// they can be checkpointed independently.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor<F>>,
    pub second_moment: Vec<Tensor<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(config: AdamConfig, params: &ParamSet<F>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    /// Applies one update. Parameters whose gradient is `None` are left
    /// untouched, moments included.
    pub fn update(&mut self, params: &mut ParamSet<F>, grads: &[Option<Tensor<F>>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let step_size = F::of(lr / (1.0 - beta1.powi(t)));
        let bias2 = F::of((1.0 - beta2.powi(t)).sqrt());
        let (b1, b2, eps) = (F::of(beta1), F::of(beta2), F::of(eps));
        let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
        for (i, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let p = &mut params.tensors_mut()[i];
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *w -= step_size * *m / (v.sqrt() / bias2 + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let mut params = ParamSet::<f64>::new();
        params.push("w", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let grad = Tensor::new(&[3], vec![0.3, -4.0, 1e-3]).unwrap();
        adam.update(&mut params, &[Some(grad)], 0.1);
        let w = params.tensors()[0].data();
        // with bias correction the first step is lr * g / (|g| + eps')
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
        assert!((w[2] - 0.4).abs() < 1e-4);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut params = ParamSet::<f64>::new();
        params.push("x", Tensor::new(&[2], vec![3.0, -1.5]).unwrap());
        let mut adam = Adam::new(AdamConfig::default(), &params);
        for _ in 0..2000 {
            let g = params.tensors()[0].map(|x| 2.0 * (x - 0.25));
            adam.update(&mut params, &[Some(g)], 0.01);
        }
        for &x in params.tensors()[0].data() {
            assert!((x - 0.25).abs() < 1e-3, "{x}");
        }
    }

    #[test]
    fn missing_gradient_leaves_parameter_alone() {
        let mut params = ParamSet::<f32>::new();
        params.push("a", Tensor::full(&[2], 1.0));
        params.push("b", Tensor::full(&[2], 1.0));
        let before = params.tensors()[1].clone();
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.update(&mut params, &[Some(Tensor::full(&[2], 1.0)), None], 1e-2);
        assert_eq!(params.tensors()[1], before);
        assert_ne!(params.tensors()[0].data()[0], 1.0);
    }
}
