//! Variance schedules for the denoising chain.

use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("schedule needs at least one step")]
    EmptySchedule,
    #[error("invalid beta {beta} at step {k}")]
    BadBeta { k: usize, beta: f64 },
    #[error("denoise step {k} outside 1..={max}")]
    BadStep { k: usize, max: usize },
    #[error("dimension mismatch: {0}")]
    Dims(String),
    #[error("no sample reached the elite threshold {threshold} in round {round}")]
    UnreachableFailureRegime { round: usize, threshold: f64 },
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}

pub const BETA_CLIP: f64 = 0.999;
const COSINE_OFFSET: f64 = 0.008;

/// Per-step variances `beta_1..beta_K` and the cumulative products
/// `alpha_bar_0..alpha_bar_K` of `(1 - beta_k)`, with `alpha_bar_0 = 1`.
/// The stored `alpha_bar` is always the exact running product of the stored
/// (clipped) betas.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl VarianceSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<VarianceSchedule, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::EmptySchedule);
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b <= BETA_CLIP) {
                return Err(DiffusionError::BadBeta { k: i + 1, beta: b });
            }
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for &b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(VarianceSchedule { betas, alpha_bar })
    }

    /// Cosine schedule: `alpha_bar_k = f(k)/f(0)` with
    /// `f(k) = cos^2(((k/K + s)/(1 + s)) * pi/2)`, `s = 0.008`, and
    /// `beta_k = 1 - alpha_bar_k / alpha_bar_{k-1}` clipped at 0.999.
    pub fn cosine(k_steps: usize) -> Result<VarianceSchedule, DiffusionError> {
        if k_steps == 0 {
            return Err(DiffusionError::EmptySchedule);
        }
        let f = |k: usize| -> f64 {
            let t = (k as f64 / k_steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
            (t * FRAC_PI_2).cos().powi(2)
        };
        let f0 = f(0);
        let mut betas = Vec::with_capacity(k_steps);
        let mut prev = 1.0;
        for k in 1..=k_steps {
            let ab = f(k) / f0;
            let beta = (1.0 - ab / prev).min(BETA_CLIP);
            betas.push(beta);
            prev = ab;
        }
        VarianceSchedule::from_betas(betas)
    }

    /// Number of denoising steps `K`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// `beta_k`, 1-based.
    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    /// `alpha_bar_k`, 0-based (`alpha_bar(0) == 1`).
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}
