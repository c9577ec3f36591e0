//! Run configuration: one key per hyperparameter, with defaults at the
//! published experiment values. Resolved configs are echoed into every
//! output directory so runs replay exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::TeacherTrainConfig;
use crate::distill::{GanConfig, SupervisedConfig};
use crate::planner::{PlanLimits, PlannerConfig};
use crate::sim::{IdmParams, SimParams, SpawnRanges};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// east | west | south | north | all
    pub scenario: String,
    pub sim: SimSection,
    pub teacher: TeacherSection,
    pub distill: DistillSection,
    pub planner: PlannerSection,
    pub campaign: CampaignSection,
    pub metrics: MetricsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scenario: "all".into(),
            sim: SimSection::default(),
            teacher: TeacherSection::default(),
            distill: DistillSection::default(),
            planner: PlannerSection::default(),
            campaign: CampaignSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSection {
    pub lane_width: f64,
    pub branch_length: f64,
    /// Prior sensor-noise scale (per-component variance of the Gaussian).
    pub gamma: f64,
    /// Multiplier on `gamma` for desk-scale campaigns; reported alongside
    /// results whenever it is not 1.
    pub noise_inflation: f64,
    pub collision_radius_sum: f64,
    pub spawn: SpawnRanges,
    pub ego_idm: IdmParams,
    pub intruder_idm: IdmParams,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            lane_width: 0.04,
            branch_length: 1.0,
            gamma: 1.0 / 0.15,
            noise_inflation: 1.0,
            collision_radius_sum: 0.04,
            spawn: SpawnRanges::default(),
            ego_idm: IdmParams::ego_default(),
            intruder_idm: IdmParams::intruder_default(),
        }
    }
}

impl SimSection {
    pub fn effective_gamma(&self) -> f64 {
        self.gamma * self.noise_inflation
    }

    pub fn params(&self) -> SimParams {
        SimParams {
            gamma: self.effective_gamma(),
            collision_radius_sum: self.collision_radius_sum,
            ego_idm: self.ego_idm,
            intruder_idm: self.intruder_idm,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherSection {
    pub k_steps: usize,
    pub rounds: usize,
    pub sims_per_round: usize,
    pub fit_steps_per_round: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub percentile_schedule: Vec<f64>,
    pub hidden: usize,
    pub blocks: usize,
    pub k_embed_dim: usize,
    pub rho_bound_hi: f64,
}

impl Default for TeacherSection {
    fn default() -> Self {
        TeacherSection {
            k_steps: 1000,
            rounds: 5,
            sims_per_round: 2000,
            fit_steps_per_round: 1500,
            batch_size: 128,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            percentile_schedule: vec![100.0, 50.0, 25.0, 10.0, 0.0],
            hidden: 256,
            blocks: 4,
            k_embed_dim: 32,
            rho_bound_hi: 1.0,
        }
    }
}

impl TeacherSection {
    pub fn train_config(&self, prior_scale: f64, s0_bounds: Vec<(f64, f64)>) -> TeacherTrainConfig {
        TeacherTrainConfig {
            k_steps: self.k_steps,
            rounds: self.rounds,
            sims_per_round: self.sims_per_round,
            fit_steps_per_round: self.fit_steps_per_round,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            percentile_schedule: self.percentile_schedule.clone(),
            hidden: self.hidden,
            blocks: self.blocks,
            k_embed_dim: self.k_embed_dim,
            rho_bounds: (0.0, self.rho_bound_hi),
            s0_bounds,
            prior_scale,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillSection {
    pub dataset_size: usize,
    /// One-step student variance; by default `beta_1` of the one-step
    /// cosine schedule (0.999).
    pub beta_hat: f64,
    /// Budget scale of the student's round-based pretraining relative to
    /// the teacher section (it reuses those keys).
    pub pretrain_rounds: usize,
    pub pretrain_sims_per_round: usize,
    pub supervised_steps: usize,
    pub supervised_batch: usize,
    pub supervised_learning_rate: f64,
    pub supervised_weight_decay: f64,
    pub gan_iterations: usize,
    pub gan_batch: usize,
    pub gan_learning_rate: f64,
    pub gan_gen_weight_decay: f64,
    pub gan_disc_weight_decay: f64,
    pub lambda: f64,
    pub disc_hidden: usize,
    pub conditional_discriminator: bool,
    pub gan_eval_every: usize,
    pub gan_holdout_fraction: f64,
}

impl Default for DistillSection {
    fn default() -> Self {
        DistillSection {
            dataset_size: 200_000,
            beta_hat: 0.999,
            pretrain_rounds: 5,
            pretrain_sims_per_round: 2000,
            supervised_steps: 50_000,
            supervised_batch: 256,
            supervised_learning_rate: 1e-3,
            supervised_weight_decay: 1e-5,
            gan_iterations: 4000,
            gan_batch: 2048,
            gan_learning_rate: 3e-4,
            gan_gen_weight_decay: 0.6,
            gan_disc_weight_decay: 0.1,
            lambda: 1.0,
            disc_hidden: 128,
            conditional_discriminator: false,
            gan_eval_every: 200,
            gan_holdout_fraction: 0.1,
        }
    }
}

impl DistillSection {
    pub fn supervised_config(&self) -> SupervisedConfig {
        SupervisedConfig {
            steps: self.supervised_steps,
            batch_size: self.supervised_batch,
            learning_rate: self.supervised_learning_rate,
            weight_decay: self.supervised_weight_decay,
        }
    }

    pub fn gan_config(&self) -> GanConfig {
        GanConfig {
            iterations: self.gan_iterations,
            batch_size: self.gan_batch,
            learning_rate: self.gan_learning_rate,
            gen_weight_decay: self.gan_gen_weight_decay,
            disc_weight_decay: self.gan_disc_weight_decay,
            lambda: self.lambda,
            disc_hidden: self.disc_hidden,
            conditional_discriminator: self.conditional_discriminator,
            eval_every: self.gan_eval_every,
            holdout_fraction: self.gan_holdout_fraction,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerSection {
    pub n_prime: usize,
    pub n_select: usize,
    pub eta: f64,
    pub samples_per_filter: usize,
    pub planning_cutoff: f64,
    pub limits: PlanLimits,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let d = PlannerConfig::default();
        PlannerSection {
            n_prime: d.n_prime,
            n_select: d.n_select,
            eta: d.eta,
            samples_per_filter: d.samples_per_filter,
            planning_cutoff: d.planning_cutoff,
            limits: d.limits,
        }
    }
}

impl PlannerSection {
    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig {
            n_prime: self.n_prime,
            n_select: self.n_select,
            eta: self.eta,
            samples_per_filter: self.samples_per_filter,
            planning_cutoff: self.planning_cutoff,
            limits: self.limits,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignSection {
    /// Monte Carlo simulations per scenario for `mc`.
    pub mc_count: usize,
    /// Paired rollouts per scenario for `plan-eval`.
    pub plan_eval_count: usize,
    /// Samples drawn per model for `sample` and `metrics`.
    pub sample_count: usize,
}

impl Default for CampaignSection {
    fn default() -> Self {
        CampaignSection {
            mc_count: 100_000,
            plan_eval_count: 130_000,
            sample_count: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSection {
    /// Neighborhood size for density/coverage.
    pub k: usize,
    /// "trajectory" (simulated relative states) or "epsilon" (raw sequences).
    pub feature_space: String,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            k: 5,
            feature_space: "trajectory".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, super::HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            super::HarnessError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| super::HarnessError::Config(format!("bad config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.teacher.k_steps, 1000);
        assert_eq!(back.distill.dataset_size, 200_000);
        assert_eq!(back.planner.n_prime, 200);
        assert_eq!(back.planner.n_select, 40);
        assert!((back.planner.eta - 0.08).abs() < 1e-12);
        assert!((back.sim.gamma - 1.0 / 0.15).abs() < 1e-12);
        assert_eq!(back.campaign.plan_eval_count, 130_000);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let text = "seed = 9\n[sim]\nnoise_inflation = 0.5\n";
        let c: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(c.seed, 9);
        assert!((c.sim.noise_inflation - 0.5).abs() < 1e-12);
        assert_eq!(c.teacher.hidden, 256);
    }
}
