//! GAN-based distillation: the discriminator, the loss set, and the
//! alternating training loop with validation-based checkpoint selection.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::{Conditioning, NoisePredictor, VarianceSchedule};
use crate::metrics::{coverage, density, FeatureSet, SetLabel};
use crate::nn::{Activation, AdamW, Network};
use crate::rng::stream;

use super::dataset::DistillError;
use super::student::{DistillSample, StudentModel};

/// Discriminator scores in (0, 1) get clamped to this band before logs.
pub const SCORE_CLAMP: f64 = 1e-7;

/// Real-vs-generated classifier: one residual block behind an input
/// projection, with a linear score head through a sigmoid.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub net: Network,
    /// When set, the conditioning (scaled rho and s0) is appended to the
    /// scored sequence.
    pub conditional: bool,
}

impl Discriminator {
    pub fn new(data_dim: usize, cond_dim: usize, hidden: usize, conditional: bool, rng: &mut impl Rng) -> Discriminator {
        let input = data_dim + if conditional { cond_dim } else { 0 };
        Discriminator {
            net: Network::residual_mlp(input, hidden, 1, 1, Activation::Sigmoid, rng),
            conditional,
        }
    }

    pub fn score_batch(&self, eps: &[f64], batch: usize) -> Vec<f64> {
        let cache = self
            .net
            .forward_batch(eps, batch)
            .expect("discriminator input dims");
        cache.output().to_vec()
    }
}

/// The loss set for one batch (means over items):
/// generator adversarial, discriminator adversarial, distillation, and the
/// combined generator objective.
#[derive(Debug, Clone, Copy)]
pub struct GanLosses {
    pub gen_adv: f64,
    pub disc_adv: f64,
    pub distill: f64,
    pub total: f64,
    /// Number of discriminator scores that hit the clamp band.
    pub saturated: usize,
}

fn clamp_score(s: f64) -> (f64, bool) {
    if s < SCORE_CLAMP {
        (SCORE_CLAMP, true)
    } else if s > 1.0 - SCORE_CLAMP {
        (1.0 - SCORE_CLAMP, true)
    } else {
        (s, false)
    }
}

/// Loss evaluation for aligned teacher samples and student reconstructions
/// (all in normalized space). The distillation term diffuses the student
/// reconstruction with the teacher's one-step kernel at `k` and compares
/// against the teacher's one-step inversion. `lambda` weighs the
/// distillation term in the combined objective.
#[allow(clippy::too_many_arguments)]
pub fn gan_losses(
    eps: &[f64],
    eps_hat: &[f64],
    disc: &Discriminator,
    teacher: &dyn NoisePredictor,
    teacher_schedule: &VarianceSchedule,
    conds: &[Conditioning],
    ks: &[usize],
    lambda: f64,
    rng: &mut ChaCha12Rng,
) -> GanLosses {
    let batch = conds.len();
    let dim = teacher.data_dim();
    let real_scores = disc.score_batch(eps, batch);
    let fake_scores = disc.score_batch(eps_hat, batch);

    let mut gen_adv = 0.0;
    let mut disc_adv = 0.0;
    let mut saturated = 0usize;
    for bi in 0..batch {
        let (mf, satf) = clamp_score(fake_scores[bi]);
        let (mr, satr) = clamp_score(real_scores[bi]);
        saturated += usize::from(satf) + usize::from(satr);
        gen_adv += -mf.ln();
        disc_adv += -(1.0 - mf).ln() - mr.ln();
    }
    gen_adv /= batch as f64;
    disc_adv /= batch as f64;

    let distill = distill_targets(eps_hat, teacher, teacher_schedule, conds, ks, rng)
        .iter()
        .zip(eps_hat)
        .map(|(t, e)| (e - t) * (e - t))
        .sum::<f64>()
        / batch as f64;
    let _ = dim;

    GanLosses {
        gen_adv,
        disc_adv,
        distill,
        total: gen_adv + lambda * distill,
        saturated,
    }
}

/// Teacher reconstructions of the student outputs: diffuse each `eps_hat`
/// with the one-step kernel `N(sqrt(1-b_k) eps_hat, b_k I)` and invert it
/// through the teacher's noise prediction at step `k`. Used as a fixed
/// regression target for the student.
fn distill_targets(
    eps_hat: &[f64],
    teacher: &dyn NoisePredictor,
    schedule: &VarianceSchedule,
    conds: &[Conditioning],
    ks: &[usize],
    rng: &mut ChaCha12Rng,
) -> Vec<f64> {
    let dim = teacher.data_dim();
    let batch = conds.len();
    let mut out = vec![0.0f64; batch * dim];
    // group items by k so the teacher runs batched per distinct step
    let mut order: Vec<usize> = (0..batch).collect();
    order.sort_by_key(|i| ks[*i]);
    let mut i = 0usize;
    while i < batch {
        let k = ks[order[i]];
        let mut j = i;
        while j < batch && ks[order[j]] == k {
            j += 1;
        }
        let idxs = &order[i..j];
        let (sqa, sqb) = ((1.0 - schedule.beta(k)).sqrt(), schedule.beta(k).sqrt());
        let mut noised = Vec::with_capacity(idxs.len() * dim);
        let mut sub_conds = Vec::with_capacity(idxs.len());
        for &bi in idxs {
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(rng);
                noised.push(sqa * eps_hat[bi * dim + d] + sqb * z);
            }
            sub_conds.push(conds[bi].clone());
        }
        let zhat = teacher.predict(&noised, &sub_conds, k);
        for (si, &bi) in idxs.iter().enumerate() {
            for d in 0..dim {
                let v = (noised[si * dim + d] - sqb * zhat[si * dim + d]) / sqa;
                out[bi * dim + d] = v;
            }
        }
        i = j;
    }
    out
}

#[derive(Debug, Clone)]
pub struct GanConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gen_weight_decay: f64,
    pub disc_weight_decay: f64,
    pub lambda: f64,
    pub disc_hidden: usize,
    pub conditional_discriminator: bool,
    /// Validation cadence for checkpoint selection.
    pub eval_every: usize,
    /// Fraction of the dataset held out for validation.
    pub holdout_fraction: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        // published values: batch 2048, lr 3e-4 both, decay 0.6 generator /
        // 0.1 discriminator, lambda 1
        GanConfig {
            iterations: 4000,
            batch_size: 2048,
            learning_rate: 3e-4,
            gen_weight_decay: 0.6,
            disc_weight_decay: 0.1,
            lambda: 1.0,
            disc_hidden: 128,
            conditional_discriminator: false,
            eval_every: 200,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GanStats {
    pub iterations_run: usize,
    pub best_iteration: usize,
    pub best_validation_score: f64,
    pub gen_losses: Vec<f64>,
    pub disc_losses: Vec<f64>,
    pub disc_accuracy: Vec<(usize, f64)>,
    pub saturated_scores: usize,
}

fn disc_input(
    disc: &Discriminator,
    student: &StudentModel,
    eps: &[f64],
    conds: &[Conditioning],
) -> Vec<f64> {
    let dim = student.model.data_dim();
    if !disc.conditional {
        return eps.to_vec();
    }
    let mut out = Vec::with_capacity(conds.len() * disc.net.input_dim);
    for (bi, c) in conds.iter().enumerate() {
        out.extend_from_slice(&eps[bi * dim..(bi + 1) * dim]);
        let mut emb = Vec::new();
        student.model.cond.embed_into(1, c, &mut emb);
        // drop the k features: the discriminator is step-free
        out.extend_from_slice(&emb[student.model.cond.k_embed_dim..]);
    }
    out
}

/// Alternating GAN distillation: one discriminator AdamW step on its
/// adversarial loss, then one generator step on the combined objective,
/// per iteration. Keeps the parameters with the best held-out
/// density-times-coverage and restores them at the end.
pub fn gan_distill(
    student: &mut StudentModel,
    disc: &mut Discriminator,
    teacher: &dyn NoisePredictor,
    teacher_schedule: &VarianceSchedule,
    samples: &[DistillSample],
    cfg: &GanConfig,
    seed: u64,
) -> Result<GanStats, DistillError> {
    if samples.is_empty() {
        return Err(DistillError::EmptyDataset);
    }
    let dim = student.model.data_dim();
    let in_dim = student.model.net.input_dim;
    let beta = student.beta_hat();
    let (sqb, sqa) = (beta.sqrt(), (1.0 - beta).sqrt());
    let k_max = teacher_schedule.len();

    let holdout = ((samples.len() as f64 * cfg.holdout_fraction) as usize)
        .clamp(1, samples.len().saturating_sub(1).max(1));
    let (train, val) = samples.split_at(samples.len() - holdout);
    let train = if train.is_empty() { samples } else { train };

    let mut gen_opt = AdamW::new(
        student.model.net.param_count(),
        cfg.learning_rate,
        cfg.gen_weight_decay,
    );
    let mut disc_opt = AdamW::new(
        disc.net.param_count(),
        cfg.learning_rate,
        cfg.disc_weight_decay,
    );

    let mut stats = GanStats {
        iterations_run: 0,
        best_iteration: 0,
        best_validation_score: f64::NEG_INFINITY,
        gen_losses: Vec::new(),
        disc_losses: Vec::new(),
        disc_accuracy: Vec::new(),
        saturated_scores: 0,
    };
    let mut best_params = student.model.net.params_vec();
    let mut median_window: Vec<f64> = Vec::new();
    let mut high_loss_run = 0usize;
    let mut rng = stream(seed, "gan", 0);

    for iter in 0..cfg.iterations {
        stats.iterations_run = iter + 1;
        let b = cfg.batch_size.min(train.len());

        // assemble batch: student reconstructions of teacher samples
        let mut idxs = Vec::with_capacity(b);
        let mut inputs = Vec::with_capacity(b * in_dim);
        let mut z2: Vec<f64> = Vec::with_capacity(b * dim);
        for _ in 0..b {
            let si = rng.gen_range(0..train.len());
            idxs.push(si);
            let s = &train[si];
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                inputs.push(sqa * s.eps_norm[d] + sqb * z);
            }
            student.model.cond.embed_into(1, &s.cond, &mut inputs);
            for _ in 0..dim {
                z2.push(StandardNormal.sample(&mut rng));
            }
        }
        let gen_cache = student.model.net.forward_batch(&inputs, b)?;
        let zhat = gen_cache.output();
        let mut eps_hat = vec![0.0f64; b * dim];
        for i in 0..b * dim {
            let eps_tilde = inputs[(i / dim) * in_dim + (i % dim)];
            eps_hat[i] = (eps_tilde - sqb * zhat[i]) / sqa + sqb * z2[i];
        }
        let conds: Vec<Conditioning> = idxs.iter().map(|&si| train[si].cond.clone()).collect();
        let mut real = Vec::with_capacity(b * dim);
        for &si in &idxs {
            real.extend_from_slice(&train[si].eps_norm);
        }

        // discriminator step on its adversarial loss
        let fake_in = disc_input(disc, student, &eps_hat, &conds);
        let real_in = disc_input(disc, student, &real, &conds);
        let fake_cache = disc.net.forward_batch(&fake_in, b)?;
        let real_cache = disc.net.forward_batch(&real_in, b)?;
        let mut disc_loss = 0.0;
        let mut up_fake = vec![0.0f64; b];
        let mut up_real = vec![0.0f64; b];
        for bi in 0..b {
            let (mf, satf) = clamp_score(fake_cache.output()[bi]);
            let (mr, satr) = clamp_score(real_cache.output()[bi]);
            stats.saturated_scores += usize::from(satf) + usize::from(satr);
            disc_loss += -(1.0 - mf).ln() - mr.ln();
            // d/dm of -ln(1-m) = 1/(1-m); d/dm of -ln(m) = -1/m
            up_fake[bi] = if satf { 0.0 } else { 1.0 / (1.0 - mf) } / b as f64;
            up_real[bi] = if satr { 0.0 } else { -1.0 / mr } / b as f64;
        }
        disc_loss /= b as f64;
        let (gf, _) = disc.net.backward_batch(&fake_cache, &up_fake);
        let (gr, _) = disc.net.backward_batch(&real_cache, &up_real);
        let dgrads: Vec<f64> = gf.iter().zip(&gr).map(|(a, c)| a + c).collect();
        disc_opt.apply(&mut disc.net, &dgrads)?;

        // generator step on the combined objective, against the updated
        // discriminator
        let ks: Vec<usize> = (0..b).map(|_| rng.gen_range(1..=k_max)).collect();
        let targets = distill_targets(&eps_hat, teacher, teacher_schedule, &conds, &ks, &mut rng);
        let fake_in = disc_input(disc, student, &eps_hat, &conds);
        let fake_cache = disc.net.forward_batch(&fake_in, b)?;
        let mut gen_adv = 0.0;
        let mut up_score = vec![0.0f64; b];
        for bi in 0..b {
            let (mf, satf) = clamp_score(fake_cache.output()[bi]);
            gen_adv += -mf.ln();
            up_score[bi] = if satf { 0.0 } else { -1.0 / mf } / b as f64;
        }
        gen_adv /= b as f64;
        let (_, d_in) = disc.net.backward_batch(&fake_cache, &up_score);

        let mut distill_loss = 0.0;
        let mut up_eps_hat = vec![0.0f64; b * dim];
        let disc_in_dim = disc.net.input_dim;
        for bi in 0..b {
            for d in 0..dim {
                let i = bi * dim + d;
                let diff = eps_hat[i] - targets[i];
                distill_loss += diff * diff;
                // adversarial gradient flows through the discriminator input
                // (the scored slice is the first `dim` of its input row)
                up_eps_hat[i] =
                    d_in[bi * disc_in_dim + d] + cfg.lambda * 2.0 * diff / b as f64;
            }
        }
        distill_loss /= b as f64;
        let gen_loss = gen_adv + cfg.lambda * distill_loss;

        // chain through eps_hat = (eps_tilde - sqrt(b) zhat)/sqrt(1-b) + ...
        let mut up_zhat = vec![0.0f64; b * dim];
        for i in 0..b * dim {
            up_zhat[i] = up_eps_hat[i] * (-sqb / sqa);
        }
        let (ggrads, _) = student.model.net.backward_batch(&gen_cache, &up_zhat);
        gen_opt.apply(&mut student.model.net, &ggrads)?;

        stats.gen_losses.push(gen_loss);
        stats.disc_losses.push(disc_loss);

        // divergence guard: ten-times the moving median, 100 strikes
        median_window.push(gen_loss);
        if median_window.len() > 101 {
            median_window.remove(0);
        }
        let mut sorted = median_window.clone();
        sorted.sort_by(|a, c| a.partial_cmp(c).unwrap());
        let median = sorted[sorted.len() / 2];
        if gen_loss > 10.0 * median && median.is_finite() && median > 0.0 {
            high_loss_run += 1;
            if high_loss_run >= 100 {
                return Err(DistillError::Diverged(iter, gen_loss));
            }
        } else {
            high_loss_run = 0;
        }

        // validation: held-out density x coverage in normalized space
        if (iter + 1) % cfg.eval_every == 0 || iter + 1 == cfg.iterations {
            let (score, acc) = validate(student, disc, val, seed, iter)?;
            stats.disc_accuracy.push((iter + 1, acc));
            if score > stats.best_validation_score {
                stats.best_validation_score = score;
                stats.best_iteration = iter + 1;
                best_params = student.model.net.params_vec();
            }
        }
    }

    student.model.net.set_params(&best_params);
    Ok(stats)
}

/// Validation pass: student samples against the held-out teacher split.
/// Returns (density x coverage, discriminator accuracy on real-vs-fake).
fn validate(
    student: &StudentModel,
    disc: &Discriminator,
    val: &[DistillSample],
    seed: u64,
    iter: usize,
) -> Result<(f64, f64), DistillError> {
    let dim = student.model.data_dim();
    let n = val.len().min(256);
    if n < 8 {
        return Ok((0.0, 0.5));
    }
    let conds: Vec<Conditioning> = val[..n].iter().map(|s| s.cond.clone()).collect();
    let mut rngs: Vec<ChaCha12Rng> = (0..n)
        .map(|i| stream(seed, "gan-val", (iter * 100_000 + i) as u64))
        .collect();
    let samples_raw = student.sample_batch(&conds, &mut rngs)?;
    let fake_pts: Vec<Vec<f64>> = samples_raw
        .iter()
        .map(|raw| student.model.normalize(raw))
        .collect();
    let real_pts: Vec<Vec<f64>> = val[..n].iter().map(|s| s.eps_norm.clone()).collect();

    let k = 5.min(n - 1);
    let real = FeatureSet::new(real_pts.clone(), SetLabel::Real).expect("uniform dims");
    let fake = FeatureSet::new(fake_pts.clone(), SetLabel::Generated).expect("uniform dims");
    let score = match (density(&real, &fake, k), coverage(&real, &fake, k)) {
        (Ok(d), Ok(c)) => d * c,
        _ => 0.0,
    };

    let mut flat_fake = Vec::with_capacity(n * dim);
    for p in &fake_pts {
        flat_fake.extend_from_slice(p);
    }
    let mut flat_real = Vec::with_capacity(n * dim);
    for p in &real_pts {
        flat_real.extend_from_slice(p);
    }
    let fake_scores = disc.score_batch(&disc_input(disc, student, &flat_fake, &conds), n);
    let real_scores = disc.score_batch(&disc_input(disc, student, &flat_real, &conds), n);
    let mut correct = 0usize;
    for s in &fake_scores {
        if *s < 0.5 {
            correct += 1;
        }
    }
    for s in &real_scores {
        if *s >= 0.5 {
            correct += 1;
        }
    }
    Ok((score, correct as f64 / (2 * n) as f64))
}
