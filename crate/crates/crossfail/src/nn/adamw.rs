//! AdamW: Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::network::{Network, NnError};

/// Optimizer hyperparameters and per-parameter moment accumulators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(param_count: usize, learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    /// One decoupled-weight-decay update of `net` from flat gradients
    /// (same order as [`Network::visit_params`]).
    pub fn apply(&mut self, net: &mut Network, grads: &[f64]) -> Result<(), NnError> {
        assert_eq!(grads.len(), self.m.len(), "gradient/moment shape mismatch");
        if let Some(ix) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient(ix));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        let wd = self.weight_decay;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let mut i = 0usize;
        let m = &mut self.m;
        let v = &mut self.v;
        net.visit_params_mut(|p| {
            let g = grads[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            let theta = *p as f64;
            let updated = theta - lr * wd * theta - lr * mhat / (vhat.sqrt() + eps);
            *p = updated as f32;
            i += 1;
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::{Activation, Dense, Layer};
    use crate::rng::stream;

    fn tiny_net() -> Network {
        let mut rng = stream(21, "adamw", 0);
        Network::new(vec![Layer::Dense(Dense::new(
            2,
            2,
            Activation::Identity,
            &mut rng,
        ))])
        .unwrap()
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut net = tiny_net();
        let before = net.params_vec();
        let mut opt = AdamW::new(net.param_count(), 1e-3, 0.0);
        let n = net.param_count();
        opt.apply(&mut net, &vec![0.0; n]).unwrap();
        assert_eq!(before, net.params_vec());
    }

    #[test]
    fn decay_only_shrinks_parameters() {
        let mut net = tiny_net();
        let before = net.params_vec();
        let (lr, wd) = (0.01, 0.5);
        let mut opt = AdamW::new(net.param_count(), lr, wd);
        let n = net.param_count();
        opt.apply(&mut net, &vec![0.0; n]).unwrap();
        for (b, a) in before.iter().zip(net.params_vec()) {
            // the update computes in f64 and rounds once to f32
            let want = ((*b as f64) - lr * wd * (*b as f64)) as f32;
            assert_eq!(a.to_bits(), want.to_bits(), "{a} vs {want}");
        }
    }

    #[test]
    fn first_step_matches_hand_evaluated_recurrence() {
        let mut net = tiny_net();
        let before = net.params_vec();
        let g = 0.25f64;
        let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
        let mut opt = AdamW::new(net.param_count(), lr, 0.0);
        let n = net.param_count();
        opt.apply(&mut net, &vec![g; n]).unwrap();
        // m = (1-b1) g, v = (1-b2) g^2; mhat = g, vhat = g^2 after correction
        let m_hat = (1.0 - b1) * g / (1.0 - b1);
        let v_hat = (1.0 - b2) * g * g / (1.0 - b2);
        let delta = lr * m_hat / (v_hat.sqrt() + eps);
        for (b, a) in before.iter().zip(net.params_vec()) {
            assert!(((a as f64) - (*b as f64 - delta)).abs() < 1e-7);
        }
    }

    #[test]
    fn lr_zero_is_identity_even_with_gradient() {
        let mut net = tiny_net();
        let before = net.params_vec();
        let mut opt = AdamW::new(net.param_count(), 0.0, 0.3);
        let n = net.param_count();
        opt.apply(&mut net, &vec![1.0; n]).unwrap();
        assert_eq!(before, net.params_vec());
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut net = tiny_net();
        let mut opt = AdamW::new(net.param_count(), 1e-3, 0.0);
        let mut g = vec![0.0; net.param_count()];
        g[3] = f64::NAN;
        assert!(opt.apply(&mut net, &g).is_err());
    }
}
