//! Kalman-filter beliefs over intruder states during the policy-based phase.
//!
//! State is `[x, y, vx, vy]`. The position block carries the full filter
//! recurrence; the velocity belief is pinned to the latest observation with
//! the sensor-noise variance (the intruder may accelerate arbitrarily, so
//! velocity transitions are not modeled).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("belief covariance is not positive semidefinite")]
    NonPsdCovariance,
    #[error(transparent)]
    Solver(#[from] crate::solver::LpError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Distill(#[from] crate::distill::DistillError),
    #[error("planner needs at least one failure sample")]
    EmptyFailureSet,
}

/// Where a belief came from: the live sensor, or one reused failure sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterSource {
    Observation,
    FailureSample(usize),
}

#[derive(Debug, Clone)]
pub struct BeliefFilter {
    pub mean: [f64; 4],
    /// Position covariance, symmetric 2x2.
    pub pos_cov: [[f64; 2]; 2],
    /// Velocity covariance is `vel_var * I2`.
    pub vel_var: f64,
    pub source: FilterSource,
}

fn sym2_eigs(m: &[[f64; 2]; 2]) -> (f64, f64) {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 - disc, tr / 2.0 + disc)
}

impl BeliefFilter {
    /// Diffuse initialization at an observed state: covariance `3 gamma I4`.
    pub fn diffuse(obs: [f64; 4], gamma: f64, source: FilterSource) -> BeliefFilter {
        BeliefFilter {
            mean: obs,
            pos_cov: [[3.0 * gamma, 0.0], [0.0, 3.0 * gamma]],
            vel_var: 3.0 * gamma,
            source,
        }
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        let (lo, _) = sym2_eigs(&self.pos_cov);
        let sym = (self.pos_cov[0][1] - self.pos_cov[1][0]).abs() <= tol;
        sym && lo >= -tol && self.vel_var >= -tol
    }

    /// One filter update with a new 4-vector observation. The predicted
    /// position advances by the half-step velocity average
    /// `mu_p = pos + (vel_belief + vel_observed) / 2`; observation and
    /// transition noise are `gamma I2` and `gamma/4 I2`.
    pub fn update(&self, obs: [f64; 4], gamma: f64) -> Result<BeliefFilter, PlannerError> {
        if !self.is_psd(1e-9) {
            return Err(PlannerError::NonPsdCovariance);
        }
        let mu_p = [
            self.mean[0] + 0.5 * self.mean[2] + 0.5 * obs[2],
            self.mean[1] + 0.5 * self.mean[3] + 0.5 * obs[3],
        ];
        // sigma_p = Ts Sigma Ts^T + Sigma_s = P + (vel_var/4) I + (gamma/4) I
        let add = self.vel_var / 4.0 + gamma / 4.0;
        let sp = [
            [self.pos_cov[0][0] + add, self.pos_cov[0][1]],
            [self.pos_cov[1][0], self.pos_cov[1][1] + add],
        ];
        // K = sigma_p (sigma_p + gamma I)^-1
        let s = [[sp[0][0] + gamma, sp[0][1]], [sp[1][0], sp[1][1] + gamma]];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let sinv = [
            [s[1][1] / det, -s[0][1] / det],
            [-s[1][0] / det, s[0][0] / det],
        ];
        let k = [
            [
                sp[0][0] * sinv[0][0] + sp[0][1] * sinv[1][0],
                sp[0][0] * sinv[0][1] + sp[0][1] * sinv[1][1],
            ],
            [
                sp[1][0] * sinv[0][0] + sp[1][1] * sinv[1][0],
                sp[1][0] * sinv[0][1] + sp[1][1] * sinv[1][1],
            ],
        ];
        let innov = [obs[0] - mu_p[0], obs[1] - mu_p[1]];
        let pos = [
            mu_p[0] + k[0][0] * innov[0] + k[0][1] * innov[1],
            mu_p[1] + k[1][0] * innov[0] + k[1][1] * innov[1],
        ];
        // (I - K) sigma_p, re-symmetrized against rounding
        let ik = [[1.0 - k[0][0], -k[0][1]], [-k[1][0], 1.0 - k[1][1]]];
        let mut p = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                p[r][c] = ik[r][0] * sp[0][c] + ik[r][1] * sp[1][c];
            }
        }
        let off = 0.5 * (p[0][1] + p[1][0]);
        p[0][1] = off;
        p[1][0] = off;
        Ok(BeliefFilter {
            mean: [pos[0], pos[1], obs[2], obs[3]],
            pos_cov: p,
            vel_var: gamma,
            source: self.source,
        })
    }

    /// Draws a state from the belief: positions from the 2x2 Gaussian (via
    /// its Cholesky factor), velocities isotropic.
    pub fn sample(&self, rng: &mut impl Rng) -> [f64; 4] {
        let a = self.pos_cov[0][0].max(0.0).sqrt();
        let (b, c) = if a > 0.0 {
            let b = self.pos_cov[0][1] / a;
            (b, (self.pos_cov[1][1] - b * b).max(0.0).sqrt())
        } else {
            (0.0, self.pos_cov[1][1].max(0.0).sqrt())
        };
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let sv = self.vel_var.max(0.0).sqrt();
        let zv0: f64 = StandardNormal.sample(rng);
        let zv1: f64 = StandardNormal.sample(rng);
        [
            self.mean[0] + a * z0,
            self.mean[1] + b * z0 + c * z1,
            self.mean[2] + sv * zv0,
            self.mean[3] + sv * zv1,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng as _;

    #[test]
    fn huge_prior_covariance_snaps_to_observation() {
        let gamma = 0.1;
        let mut f = BeliefFilter::diffuse([0.0; 4], gamma, FilterSource::Observation);
        f.pos_cov = [[1e9, 0.0], [0.0, 1e9]];
        let obs = [0.7, -0.3, 0.1, 0.2];
        let g = f.update(obs, gamma).unwrap();
        assert!((g.mean[0] - obs[0]).abs() < 1e-6);
        assert!((g.mean[1] - obs[1]).abs() < 1e-6);
        assert_eq!(g.mean[2], obs[2]);
        assert_eq!(g.mean[3], obs[3]);
    }

    #[test]
    fn single_update_matches_independent_matrix_arithmetic() {
        // dense 2x2 oracle via nalgebra
        use nalgebra::{Matrix2, Vector2};
        let gamma = 0.27;
        let f = BeliefFilter {
            mean: [0.3, -0.1, 0.25, 0.4],
            pos_cov: [[0.5, 0.1], [0.1, 0.8]],
            vel_var: 0.9,
            source: FilterSource::Observation,
        };
        let obs = [0.55, 0.05, 0.3, 0.35];
        let got = f.update(obs, gamma).unwrap();

        let p = Matrix2::new(0.5, 0.1, 0.1, 0.8);
        let sp = p + Matrix2::identity() * (0.9 / 4.0 + gamma / 4.0);
        let mu_p = Vector2::new(0.3 + 0.5 * 0.25 + 0.5 * 0.3, -0.1 + 0.5 * 0.4 + 0.5 * 0.35);
        let k = sp * (sp + Matrix2::identity() * gamma).try_inverse().unwrap();
        let mu = mu_p + k * (Vector2::new(obs[0], obs[1]) - mu_p);
        let pc = (Matrix2::identity() - k) * sp;
        assert!((got.mean[0] - mu[0]).abs() < 1e-9);
        assert!((got.mean[1] - mu[1]).abs() < 1e-9);
        assert!((got.pos_cov[0][0] - pc[(0, 0)]).abs() < 1e-9);
        assert!((got.pos_cov[0][1] - 0.5 * (pc[(0, 1)] + pc[(1, 0)])).abs() < 1e-9);
        assert!((got.pos_cov[1][1] - pc[(1, 1)]).abs() < 1e-9);
        assert_eq!(got.vel_var, gamma);
    }

    #[test]
    fn covariance_stays_symmetric_psd_over_23_chained_updates() {
        let gamma = 1.0 / 0.15;
        let mut rng = stream(101, "kalman-chain", 0);
        let mut f = BeliefFilter::diffuse([0.2, 0.3, 0.1, 0.0], gamma, FilterSource::Observation);
        let mut trace_bound = 0.0f64;
        for _ in 0..23 {
            let obs = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ];
            f = f.update(obs, gamma).unwrap();
            assert!(f.is_psd(1e-12), "cov went non-PSD: {:?}", f.pos_cov);
            let (lo, hi) = sym2_eigs(&f.pos_cov);
            assert!(lo >= -1e-12);
            trace_bound = trace_bound.max(f.pos_cov[0][0] + f.pos_cov[1][1]);
            let _ = hi;
        }
        // bounded observations keep the covariance trace bounded
        assert!(trace_bound < 10.0 * gamma, "trace grew to {trace_bound}");
    }

    #[test]
    fn non_psd_input_rejected() {
        let mut f = BeliefFilter::diffuse([0.0; 4], 0.1, FilterSource::Observation);
        f.pos_cov = [[1.0, 2.0], [2.0, 1.0]]; // eigenvalues -1 and 3
        assert!(f.update([0.0; 4], 0.1).is_err());
    }

    #[test]
    fn sampling_tracks_mean_and_spread() {
        let f = BeliefFilter {
            mean: [1.0, -2.0, 0.3, 0.1],
            pos_cov: [[0.04, 0.01], [0.01, 0.09]],
            vel_var: 0.25,
            source: FilterSource::FailureSample(3),
        };
        let mut rng = stream(102, "kalman-sample", 0);
        let n = 20_000;
        let mut mean = [0.0f64; 4];
        let mut var0 = 0.0f64;
        for _ in 0..n {
            let s = f.sample(&mut rng);
            for (m, v) in mean.iter_mut().zip(&s) {
                *m += v;
            }
            var0 += (s[0] - 1.0) * (s[0] - 1.0);
        }
        for (m, want) in mean.iter_mut().zip(&f.mean) {
            *m /= n as f64;
            assert!((*m - want).abs() < 0.02, "{m} vs {want}");
        }
        var0 /= n as f64;
        assert!((var0 - 0.04).abs() < 0.004);
    }
}
