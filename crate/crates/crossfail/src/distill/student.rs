//! The one-step student sampler and its supervised pretraining stage.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::diffusion::{
    train_teacher, Conditioning, DenoiserModel, FailureSystem, NoisePredictor,
    TeacherTrainConfig, TrainedTeacher,
};
use crate::nn::AdamW;
use crate::rng::stream;
use crate::sim::Branch;

use super::dataset::{DistillError, TeacherRecord};

/// One-step denoiser: a [`DenoiserModel`] whose schedule has a single step
/// `beta_hat`. Generation draws `eps_1 ~ N(0, I)` and one reverse step that
/// keeps the `beta_hat` output noise (unlike the teacher chain, whose final
/// step is deterministic).
#[derive(Debug, Clone)]
pub struct StudentModel {
    pub model: DenoiserModel,
}

impl StudentModel {
    pub fn beta_hat(&self) -> f64 {
        self.model.schedule.beta(1)
    }

    /// Pretrains a student with the same round-based algorithm as the
    /// teacher, at one denoising step.
    pub fn pretrain_with_teacher_algorithm<S: FailureSystem>(
        system: &S,
        cfg: &TeacherTrainConfig,
        seed: u64,
        scenario: Option<Branch>,
    ) -> Result<(StudentModel, TrainedTeacher), DistillError> {
        let mut cfg = cfg.clone();
        cfg.k_steps = 1;
        let trained = train_teacher(system, &cfg, seed, scenario)?;
        let model = trained.model.clone();
        Ok((StudentModel { model }, trained))
    }

    /// Mean reconstruction (no output noise): the deterministic part of the
    /// single denoising step.
    pub fn reconstruct_mean_batch(&self, eps_tilde: &[f64], conds: &[Conditioning]) -> Vec<f64> {
        let beta = self.beta_hat();
        let zhat = self.model.predict(eps_tilde, conds, 1);
        let coef = beta.sqrt();
        let inv = 1.0 / (1.0 - beta).sqrt();
        eps_tilde
            .iter()
            .zip(&zhat)
            .map(|(e, z)| (e - coef * z) * inv)
            .collect()
    }

    /// Single-step generation for a batch in raw space: one latent draw,
    /// one network pass, plus the `beta_hat` output noise.
    pub fn sample_batch(
        &self,
        conds: &[Conditioning],
        rngs: &mut [ChaCha12Rng],
    ) -> Result<Vec<Vec<f64>>, DistillError> {
        let dim = self.model.data_dim();
        let batch = conds.len();
        if rngs.len() != batch {
            return Err(DistillError::Format("one rng stream per sample".into()));
        }
        let mut eps1 = vec![0.0f64; batch * dim];
        for bi in 0..batch {
            for d in 0..dim {
                eps1[bi * dim + d] = StandardNormal.sample(&mut rngs[bi]);
            }
        }
        let mu = self.reconstruct_mean_batch(&eps1, conds);
        let sd = self.beta_hat().sqrt();
        let mut out = Vec::with_capacity(batch);
        for bi in 0..batch {
            let mut v = Vec::with_capacity(dim);
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rngs[bi]);
                v.push(mu[bi * dim + d] + sd * z);
            }
            out.push(self.model.denormalize(&v));
        }
        Ok(out)
    }

    pub fn sample(
        &self,
        cond: &Conditioning,
        rng: &mut ChaCha12Rng,
    ) -> Result<Vec<f64>, DistillError> {
        let mut rngs = vec![rng.clone()];
        let out = self.sample_batch(std::slice::from_ref(cond), &mut rngs)?;
        *rng = rngs.pop().unwrap();
        Ok(out.into_iter().next().unwrap())
    }
}

#[derive(Debug, Clone)]
pub struct SupervisedConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        // published values: 50k steps, batch 256, lr 1e-3, L2 1e-5
        SupervisedConfig {
            steps: 50_000,
            batch_size: 256,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
        }
    }
}

/// A dataset record prepared for distillation: normalized sequence plus the
/// reconstruction conditioning (threshold zero, the record's initial state).
#[derive(Debug, Clone)]
pub struct DistillSample {
    pub eps_norm: Vec<f64>,
    pub cond: Conditioning,
}

pub fn prepare_samples(model: &DenoiserModel, records: &[TeacherRecord]) -> Vec<DistillSample> {
    records
        .iter()
        .map(|r| DistillSample {
            eps_norm: model.normalize(&r.eps),
            cond: Conditioning {
                rho_threshold: 0.0,
                s0: r.s0.to_vec(),
            },
        })
        .collect()
}

/// Supervised pretraining: diffuse each teacher sample with the student's
/// one-step forward process, reconstruct (with output noise), and minimize
/// the mean squared reconstruction error. Returns the per-step losses.
pub fn supervised_pretrain(
    student: &mut StudentModel,
    samples: &[DistillSample],
    cfg: &SupervisedConfig,
    seed: u64,
) -> Result<Vec<f64>, DistillError> {
    if samples.is_empty() {
        return Err(DistillError::EmptyDataset);
    }
    let dim = student.model.data_dim();
    let beta = student.beta_hat();
    let (sqb, sqa) = (beta.sqrt(), (1.0 - beta).sqrt());
    let in_dim = student.model.net.input_dim;
    let mut opt = AdamW::new(
        student.model.net.param_count(),
        cfg.learning_rate,
        cfg.weight_decay,
    );
    let mut rng = stream(seed, "supervised", 0);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let b = cfg.batch_size.min(samples.len());
        let mut inputs = Vec::with_capacity(b * in_dim);
        let mut eps0 = Vec::with_capacity(b * dim);
        let mut z2 = Vec::with_capacity(b * dim);
        for _ in 0..b {
            let s = &samples[rng.gen_range(0..samples.len())];
            for d in 0..dim {
                let z1: f64 = StandardNormal.sample(&mut rng);
                inputs.push(sqa * s.eps_norm[d] + sqb * z1);
            }
            student.model.cond.embed_into(1, &s.cond, &mut inputs);
            eps0.extend_from_slice(&s.eps_norm);
            for _ in 0..dim {
                z2.push(StandardNormal.sample(&mut rng));
            }
        }
        let loss = reconstruction_step(
            &mut student.model,
            &mut opt,
            &inputs,
            &eps0,
            &z2,
            b,
            dim,
            sqb,
            sqa,
        )?;
        losses.push(loss);
    }
    Ok(losses)
}

/// One AdamW step on `MSE(eps, eps_hat)` where
/// `eps_hat = (eps_tilde - sqrt(b) zhat)/sqrt(1-b) + sqrt(b) z2`.
/// Chunked batch gradients are combined in fixed order.
#[allow(clippy::too_many_arguments)]
fn reconstruction_step(
    model: &mut DenoiserModel,
    opt: &mut AdamW,
    inputs: &[f64],
    eps0: &[f64],
    z2: &[f64],
    batch: usize,
    dim: usize,
    sqb: f64,
    sqa: f64,
) -> Result<f64, DistillError> {
    let in_dim = model.net.input_dim;
    let chunks = 4usize.min(batch.max(1));
    let per = batch.div_ceil(chunks);
    let net = &model.net;
    let results: Vec<(Vec<f64>, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * per;
            let hi = ((c + 1) * per).min(batch);
            if lo >= hi {
                return (vec![0.0; net.param_count()], 0.0);
            }
            let n = hi - lo;
            let cache = net
                .forward_batch(&inputs[lo * in_dim..hi * in_dim], n)
                .expect("prepared inputs");
            let zhat = cache.output();
            let inv = 1.0 / sqa;
            let scale = 2.0 / (batch * dim) as f64;
            let mut upstream = vec![0.0; n * dim];
            let mut loss = 0.0;
            for i in 0..n * dim {
                let gi = (lo * dim) + i;
                let eps_tilde = inputs[(lo + i / dim) * in_dim + (i % dim)];
                let eps_hat = (eps_tilde - sqb * zhat[i]) * inv + sqb * z2[gi];
                let diff = eps_hat - eps0[gi];
                loss += diff * diff;
                // d eps_hat / d zhat = -sqrt(beta)/sqrt(1-beta)
                upstream[i] = scale * diff * (-sqb * inv);
            }
            let (grads, _) = net.backward_batch(&cache, &upstream);
            (grads, loss)
        })
        .collect();
    let mut grads = vec![0.0f64; model.net.param_count()];
    let mut loss = 0.0;
    for (g, l) in results {
        for (acc, v) in grads.iter_mut().zip(&g) {
            *acc += v;
        }
        loss += l;
    }
    opt.apply(&mut model.net, &grads)?;
    Ok(loss / (batch * dim) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{ConditioningSpec, VarianceSchedule};
    use crate::nn::{Activation, Network};

    fn tiny_student(dim: usize, seed: u64) -> StudentModel {
        let cond = ConditioningSpec {
            k_embed_dim: 8,
            rho_bounds: (0.0, 1.0),
            s0_bounds: vec![(-1.0, 1.0); 2],
        };
        let net = Network::residual_mlp(
            dim + cond.dim(),
            32,
            1,
            dim,
            Activation::Identity,
            &mut stream(seed, "student-init", 0),
        );
        StudentModel {
            model: DenoiserModel {
                net,
                schedule: VarianceSchedule::cosine(1).unwrap(),
                cond,
                prior_scale: 1.0,
                data_scale: vec![1.0; dim],
                scenario: None,
            },
        }
    }

    #[test]
    fn sampling_reproducible_and_beta_hat_is_k1_cosine() {
        let s = tiny_student(3, 1);
        assert_eq!(s.beta_hat(), crate::diffusion::BETA_CLIP);
        let cond = Conditioning {
            rho_threshold: 0.0,
            s0: vec![0.1, -0.2],
        };
        let a = s.sample(&cond, &mut stream(2, "s", 0)).unwrap();
        let b = s.sample(&cond, &mut stream(2, "s", 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_net_output_moments_match_closed_form() {
        // zhat = 0: eps0 = eps1/sqrt(1-b) + sqrt(b) z2, so
        // Var = 1/(1-b) + b
        let mut s = tiny_student(1, 3);
        s.model.net.zero_params();
        let b = s.beta_hat();
        let want = 1.0 / (1.0 - b) + b;
        let n = 60_000;
        let conds = vec![
            Conditioning {
                rho_threshold: 0.0,
                s0: vec![0.0, 0.0],
            };
            n
        ];
        let mut rngs: Vec<ChaCha12Rng> = (0..n).map(|i| stream(4, "mc", i as u64)).collect();
        let out = s.sample_batch(&conds, &mut rngs).unwrap();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for v in &out {
            sum += v[0];
            sumsq += v[0] * v[0];
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((var - want).abs() < 0.05 * want, "{var} vs {want}");
    }

    #[test]
    fn supervised_pretrain_reduces_loss_on_toy_dataset() {
        let mut s = tiny_student(4, 5);
        let mut rng = stream(6, "data", 0);
        let samples: Vec<DistillSample> = (0..1000)
            .map(|_| {
                let base: f64 = rng.gen_range(-1.0..1.0);
                DistillSample {
                    eps_norm: vec![base, -base, 0.5 * base, 0.1],
                    cond: Conditioning {
                        rho_threshold: 0.0,
                        s0: vec![base, 0.0],
                    },
                }
            })
            .collect();
        let cfg = SupervisedConfig {
            steps: 400,
            batch_size: 64,
            learning_rate: 3e-3,
            weight_decay: 1e-5,
        };
        let losses = supervised_pretrain(&mut s, &samples, &cfg, 7).unwrap();
        let first: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let last: f64 = losses[losses.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn single_repeated_record_learns_the_conditional_mean() {
        // a moderate one-step variance keeps the reconstruction map well
        // conditioned so the closed-form optimum is reachable quickly
        let mut s = tiny_student(2, 8);
        s.model.schedule = VarianceSchedule::from_betas(vec![0.25]).unwrap();
        let record = DistillSample {
            eps_norm: vec![0.7, -0.3],
            cond: Conditioning {
                rho_threshold: 0.0,
                s0: vec![0.2, 0.4],
            },
        };
        let samples = vec![record.clone(); 4];
        let cfg = SupervisedConfig {
            steps: 4000,
            batch_size: 32,
            learning_rate: 3e-3,
            weight_decay: 0.0,
        };
        supervised_pretrain(&mut s, &samples, &cfg, 9).unwrap();
        // the mean reconstruction should land on the record from fresh
        // one-step noisings
        let beta = s.beta_hat();
        let mut rng = stream(10, "check", 0);
        let mut err = 0.0;
        let trials = 200;
        for _ in 0..trials {
            let mut epst = Vec::with_capacity(2);
            for d in 0..2 {
                let z: f64 = StandardNormal.sample(&mut rng);
                epst.push((1.0 - beta).sqrt() * record.eps_norm[d] + beta.sqrt() * z);
            }
            let mu = s.reconstruct_mean_batch(&epst, std::slice::from_ref(&record.cond));
            err += (mu[0] - 0.7).abs() + (mu[1] + 0.3).abs();
        }
        err /= trials as f64;
        assert!(err < 0.15, "mean reconstruction error {err}");
    }
}
