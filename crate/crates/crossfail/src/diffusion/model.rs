//! Conditional denoiser: conditioning embedding, forward diffusion, reverse
//! steps, and batched ancestral sampling.
//!
//! All chain arithmetic happens in normalized space (raw error sequences
//! divided by the prior scale `sqrt(gamma)` and the per-component data
//! scale); [`DenoiserModel::sample_batch`] inverts the normalization exactly
//! before returning.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::nn::Network;
use crate::sim::Branch;

use super::schedule::{DiffusionError, VarianceSchedule};

/// What a denoiser is conditioned on besides the noised sequence: the target
/// robustness and the initial traffic state.
#[derive(Debug, Clone)]
pub struct Conditioning {
    pub rho_threshold: f64,
    pub s0: Vec<f64>,
}

/// Embedding layout and min-max scaling bounds for the conditioning inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSpec {
    /// Sinusoidal embedding width for the denoise step index (even).
    pub k_embed_dim: usize,
    pub rho_bounds: (f64, f64),
    pub s0_bounds: Vec<(f64, f64)>,
}

impl ConditioningSpec {
    pub fn dim(&self) -> usize {
        self.k_embed_dim + 1 + self.s0_bounds.len()
    }

    fn scale(x: f64, (lo, hi): (f64, f64)) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
    }

    /// Appends `[sin/cos k features, scaled rho, scaled s0]` to `out`.
    pub fn embed_into(&self, k: usize, cond: &Conditioning, out: &mut Vec<f64>) {
        let half = self.k_embed_dim / 2;
        for d in 0..half {
            let omega = (10_000.0f64).powf(-(d as f64) / half.max(1) as f64);
            let a = k as f64 * omega;
            out.push(a.sin());
            out.push(a.cos());
        }
        out.push(Self::scale(cond.rho_threshold, self.rho_bounds));
        for (i, &(lo, hi)) in self.s0_bounds.iter().enumerate() {
            let v = cond.s0.get(i).copied().unwrap_or(0.0);
            out.push(Self::scale(v, (lo, hi)));
        }
    }
}

/// Anything that can predict the injected noise `z` from a noised point.
/// Implemented by network-backed denoisers and by analytic test oracles.
pub trait NoisePredictor {
    fn data_dim(&self) -> usize;
    /// `eps_k`: batch-major normalized points, one `Conditioning` per item,
    /// all at the same chain step `k`. Returns batch-major predictions.
    fn predict(&self, eps_k: &[f64], conds: &[Conditioning], k: usize) -> Vec<f64>;
}

/// Forward diffusion to step `k`: `eps_k = sqrt(ab_k) eps0 + sqrt(1-ab_k) z`
/// in normalized space. Returns the noised point and the injected `z`
/// (needed for the regression target). `k = 0` is the identity.
pub fn forward_diffuse(
    schedule: &VarianceSchedule,
    eps0: &[f64],
    k: usize,
    rng: &mut impl Rng,
) -> (Vec<f64>, Vec<f64>) {
    let ab = schedule.alpha_bar(k);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut z = vec![0.0; eps0.len()];
    if k > 0 {
        for zv in z.iter_mut() {
            *zv = StandardNormal.sample(rng);
        }
    }
    let eps_k = eps0
        .iter()
        .zip(&z)
        .map(|(e, zv)| sa * e + sb * zv)
        .collect();
    (eps_k, z)
}

/// One reverse step for a whole batch at step `k`:
/// `mu = (eps_k - beta_k / sqrt(1 - ab_k) * zhat) / sqrt(1 - beta_k)`, plus
/// `sqrt(beta_k) z` noise for `k > 1`; the final step is deterministic.
pub fn reverse_step_batch(
    predictor: &dyn NoisePredictor,
    schedule: &VarianceSchedule,
    eps_k: &[f64],
    conds: &[Conditioning],
    k: usize,
    rngs: &mut [ChaCha12Rng],
) -> Result<Vec<f64>, DiffusionError> {
    if k == 0 || k > schedule.len() {
        return Err(DiffusionError::BadStep {
            k,
            max: schedule.len(),
        });
    }
    let dim = predictor.data_dim();
    let batch = conds.len();
    if eps_k.len() != batch * dim || rngs.len() != batch {
        return Err(DiffusionError::Dims(format!(
            "reverse step batch {batch} x dim {dim}, got {} values / {} rngs",
            eps_k.len(),
            rngs.len()
        )));
    }
    let beta = schedule.beta(k);
    let ab = schedule.alpha_bar(k);
    let zhat = predictor.predict(eps_k, conds, k);
    let coef = beta / (1.0 - ab).sqrt();
    let inv = 1.0 / (1.0 - beta).sqrt();
    let noise_sd = if k > 1 { beta.sqrt() } else { 0.0 };
    let mut out = vec![0.0; eps_k.len()];
    for bi in 0..batch {
        let rng = &mut rngs[bi];
        for d in 0..dim {
            let i = bi * dim + d;
            let mu = (eps_k[i] - coef * zhat[i]) * inv;
            out[i] = if noise_sd > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                mu + noise_sd * z
            } else {
                mu
            };
        }
    }
    Ok(out)
}

/// A trained conditional denoiser plus everything needed to sample from it.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    pub net: Network,
    pub schedule: VarianceSchedule,
    pub cond: ConditioningSpec,
    /// `sqrt(gamma)`: standard deviation of the prior each component is
    /// divided by during normalization.
    pub prior_scale: f64,
    /// Per-component empirical scale applied after the prior scale.
    pub data_scale: Vec<f64>,
    pub scenario: Option<Branch>,
}

impl DenoiserModel {
    pub fn data_dim(&self) -> usize {
        self.data_scale.len()
    }

    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(i, v)| v / (self.prior_scale * self.data_scale[i]))
            .collect()
    }

    pub fn denormalize(&self, norm: &[f64]) -> Vec<f64> {
        norm.iter()
            .enumerate()
            .map(|(i, v)| v * self.prior_scale * self.data_scale[i])
            .collect()
    }

    /// Ancestral sampling for a batch of conditionings, one RNG stream per
    /// chain (batching does not change any chain's draw sequence). Returns
    /// raw-space sequences.
    pub fn sample_batch(
        &self,
        conds: &[Conditioning],
        rngs: &mut [ChaCha12Rng],
    ) -> Result<Vec<Vec<f64>>, DiffusionError> {
        let dim = self.data_dim();
        let batch = conds.len();
        if rngs.len() != batch {
            return Err(DiffusionError::Dims("one rng stream per chain".into()));
        }
        let mut eps = vec![0.0f64; batch * dim];
        for bi in 0..batch {
            for d in 0..dim {
                eps[bi * dim + d] = StandardNormal.sample(&mut rngs[bi]);
            }
        }
        for k in (1..=self.schedule.len()).rev() {
            eps = reverse_step_batch(self, &self.schedule, &eps, conds, k, rngs)?;
        }
        Ok((0..batch)
            .map(|bi| self.denormalize(&eps[bi * dim..(bi + 1) * dim]))
            .collect())
    }

    pub fn sample(
        &self,
        cond: &Conditioning,
        rng: &mut ChaCha12Rng,
    ) -> Result<Vec<f64>, DiffusionError> {
        let mut rngs = vec![rng.clone()];
        let out = self.sample_batch(std::slice::from_ref(cond), &mut rngs)?;
        *rng = rngs.pop().unwrap();
        Ok(out.into_iter().next().unwrap())
    }
}

impl NoisePredictor for DenoiserModel {
    fn data_dim(&self) -> usize {
        self.data_scale.len()
    }

    fn predict(&self, eps_k: &[f64], conds: &[Conditioning], k: usize) -> Vec<f64> {
        let dim = self.data_dim();
        let batch = conds.len();
        let in_dim = self.net.input_dim;
        let mut input = Vec::with_capacity(batch * in_dim);
        for bi in 0..batch {
            input.extend_from_slice(&eps_k[bi * dim..(bi + 1) * dim]);
            self.cond.embed_into(k, &conds[bi], &mut input);
        }
        debug_assert_eq!(input.len(), batch * in_dim);
        let cache = self
            .net
            .forward_batch(&input, batch)
            .expect("denoiser input dims fixed by construction");
        cache.output().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::rng::stream;

    fn spec(s0_dim: usize) -> ConditioningSpec {
        ConditioningSpec {
            k_embed_dim: 8,
            rho_bounds: (0.0, 1.0),
            s0_bounds: vec![(-1.0, 1.0); s0_dim],
        }
    }

    #[test]
    fn forward_diffuse_k0_is_identity() {
        let s = VarianceSchedule::cosine(16).unwrap();
        let mut rng = stream(91, "fd", 0);
        let x = vec![0.3, -0.7, 1.1];
        let (y, z) = forward_diffuse(&s, &x, 0, &mut rng);
        assert_eq!(y, x);
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_diffuse_terminal_variance_is_unit() {
        // Var(eps_K) ~ 1 over many draws when eps0 ~ N(0,1)
        let s = VarianceSchedule::cosine(64).unwrap();
        let mut rng = stream(92, "fd-var", 0);
        let n = 40_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let (y, _) = forward_diffuse(&s, &[x], s.len(), &mut rng);
            sum += y[0];
            sumsq += y[0] * y[0];
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn forward_diffuse_reproducible_with_fixed_seed() {
        let s = VarianceSchedule::cosine(16).unwrap();
        let x = vec![0.5; 4];
        let (a, za) = forward_diffuse(&s, &x, 7, &mut stream(93, "fd-seed", 0));
        let (b, zb) = forward_diffuse(&s, &x, 7, &mut stream(93, "fd-seed", 0));
        assert_eq!(a, b);
        assert_eq!(za, zb);
    }

    struct ZeroPredictor(usize);
    impl NoisePredictor for ZeroPredictor {
        fn data_dim(&self) -> usize {
            self.0
        }
        fn predict(&self, eps_k: &[f64], _c: &[Conditioning], _k: usize) -> Vec<f64> {
            vec![0.0; eps_k.len()]
        }
    }

    #[test]
    fn reverse_step_with_zero_prediction_matches_closed_form() {
        let s = VarianceSchedule::cosine(8).unwrap();
        let cond = Conditioning {
            rho_threshold: 0.0,
            s0: vec![],
        };
        // k = 1 is deterministic: mu = eps / sqrt(1 - beta_1)
        let eps = vec![0.4, -0.2];
        let mut rngs = vec![stream(94, "rev", 0)];
        let out = reverse_step_batch(
            &ZeroPredictor(2),
            &s,
            &eps,
            std::slice::from_ref(&cond),
            1,
            &mut rngs,
        )
        .unwrap();
        let inv = 1.0 / (1.0 - s.beta(1)).sqrt();
        assert!((out[0] - 0.4 * inv).abs() < 1e-15);
        assert!((out[1] + 0.2 * inv).abs() < 1e-15);
    }

    #[test]
    fn zero_network_sampler_matches_analytic_chain_covariance() {
        // with zhat = 0 the chain is linear-Gaussian: V_{k-1} = V_k/(1-b_k)
        // + b_k (k > 1), V_0 = V_1 / (1 - b_1)
        let k_steps = 12;
        let schedule = VarianceSchedule::cosine(k_steps).unwrap();
        let mut analytic = 1.0;
        for k in (2..=k_steps).rev() {
            analytic = analytic / (1.0 - schedule.beta(k)) + schedule.beta(k);
        }
        analytic /= 1.0 - schedule.beta(1);

        let mut net = Network::residual_mlp(
            1 + spec(0).dim(),
            8,
            1,
            1,
            Activation::Identity,
            &mut stream(95, "zero-net", 0),
        );
        net.zero_params();
        let model = DenoiserModel {
            net,
            schedule,
            cond: spec(0),
            prior_scale: 1.0,
            data_scale: vec![1.0],
            scenario: None,
        };
        let cond = Conditioning {
            rho_threshold: 0.0,
            s0: vec![],
        };
        let n = 100_000usize;
        let batch = 500;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for chunk in 0..n / batch {
            let conds = vec![cond.clone(); batch];
            let mut rngs: Vec<_> = (0..batch)
                .map(|i| stream(96, "zero-chain", (chunk * batch + i) as u64))
                .collect();
            let out = model.sample_batch(&conds, &mut rngs).unwrap();
            for v in out {
                sum += v[0];
                sumsq += v[0] * v[0];
            }
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(
            (var - analytic).abs() < 0.05 * analytic,
            "monte carlo {var} vs analytic {analytic}"
        );
        assert!(mean.abs() < 4.0 * (analytic / n as f64).sqrt() + 0.01);
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut rng = stream(97, "sample-seed", 0);
        let net = Network::residual_mlp(
            3 + spec(2).dim(),
            16,
            1,
            3,
            Activation::Identity,
            &mut rng,
        );
        let model = DenoiserModel {
            net,
            schedule: VarianceSchedule::cosine(10).unwrap(),
            cond: spec(2),
            prior_scale: 2.0,
            data_scale: vec![1.0, 0.5, 2.0],
            scenario: None,
        };
        let cond = Conditioning {
            rho_threshold: 0.2,
            s0: vec![0.1, -0.4],
        };
        let a = model.sample(&cond, &mut stream(98, "s", 1)).unwrap();
        let b = model.sample(&cond, &mut stream(98, "s", 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normalization_round_trips_exactly() {
        let mut rng = stream(99, "norm", 0);
        let net = Network::residual_mlp(
            2 + spec(0).dim(),
            8,
            1,
            2,
            Activation::Identity,
            &mut rng,
        );
        let model = DenoiserModel {
            net,
            schedule: VarianceSchedule::cosine(4).unwrap(),
            cond: spec(0),
            prior_scale: (1.0f64 / 0.15).sqrt(),
            data_scale: vec![1.25, 0.75],
            scenario: Some(Branch::South),
        };
        let raw = vec![0.123456789, -2.5];
        let back = model.denormalize(&model.normalize(&raw));
        for (a, b) in raw.iter().zip(&back) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
