//! Sensor-error sequences: the object the failure samplers generate.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::geometry::SimError;

/// Number of observation/action steps in a full simulation.
pub const HORIZON: usize = 23;
/// Components of one per-step error vector: `[e_x, e_y, e_vx, e_vy]`.
pub const NOISE_DIM: usize = 4;
/// Flattened length of a full sequence.
pub const FLAT_DIM: usize = HORIZON * NOISE_DIM;

/// A full-horizon sequence of sensor-error vectors, one per step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSequence {
    steps: Vec<[f64; NOISE_DIM]>,
}

impl NoiseSequence {
    pub fn zeros() -> NoiseSequence {
        NoiseSequence {
            steps: vec![[0.0; NOISE_DIM]; HORIZON],
        }
    }

    pub fn from_steps(steps: Vec<[f64; NOISE_DIM]>) -> Result<NoiseSequence, SimError> {
        if steps.len() != HORIZON {
            return Err(SimError::NoiseLength {
                got: steps.len(),
                want: HORIZON,
            });
        }
        Ok(NoiseSequence { steps })
    }

    pub fn from_flat(flat: &[f64]) -> Result<NoiseSequence, SimError> {
        if flat.len() != FLAT_DIM {
            return Err(SimError::NoiseLength {
                got: flat.len(),
                want: FLAT_DIM,
            });
        }
        let steps = flat
            .chunks_exact(NOISE_DIM)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect();
        Ok(NoiseSequence { steps })
    }

    pub fn steps(&self) -> &[[f64; NOISE_DIM]] {
        &self.steps
    }

    /// The suffix starting at step `start_t`, as fed to a simulation that
    /// begins mid-horizon.
    pub fn suffix(&self, start_t: usize) -> &[[f64; NOISE_DIM]] {
        &self.steps[start_t.min(HORIZON)..]
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(FLAT_DIM);
        for s in &self.steps {
            out.extend_from_slice(s);
        }
        out
    }

    /// i.i.d. draw from the Gaussian prior with covariance `gamma * I`
    /// (per-component standard deviation `sqrt(gamma)`).
    pub fn draw_prior(gamma: f64, rng: &mut impl Rng) -> NoiseSequence {
        let normal = Normal::new(0.0, gamma.sqrt()).expect("gamma must be non-negative");
        let steps = (0..HORIZON)
            .map(|_| {
                [
                    normal.sample(rng),
                    normal.sample(rng),
                    normal.sample(rng),
                    normal.sample(rng),
                ]
            })
            .collect();
        NoiseSequence { steps }
    }
}
