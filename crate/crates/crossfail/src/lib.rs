//! crossfail: learned failure sampling and robust planning for a four-way
//! intersection.
//!
//! The crate has three layers that build on each other:
//!
//! 1. A deterministic traffic world ([`sim`]): piecewise-linear routes through
//!    a four-way intersection, point-mass kinematics, IDM longitudinal
//!    control, Gaussian sensor-noise injection, and a robustness measure
//!    (minimum separation, zero meaning collision).
//! 2. Generative failure samplers: a conditional denoising diffusion model
//!    over 23-step sensor-error sequences ([`diffusion`]) and its one-step
//!    distilled counterpart trained with a GAN objective ([`distill`]), both
//!    running on a small hand-rolled network stack ([`nn`]).
//! 3. A robust planner ([`planner`]) that samples failure trajectories with
//!    the one-step model, maximizes worst-case L1 separation from them with a
//!    mixed-integer linear program ([`solver`]), and falls back to a
//!    Kalman-filter belief policy near the intersection.
//!
//! Evaluation utilities (failure rate, k-NN density/coverage, two-proportion
//! z-test) live in [`metrics`]; experiment orchestration, config handling and
//! file formats for the CLI live in [`harness`].
//!
//! Every operation is deterministic given an explicit RNG stream; see
//! [`rng`] for how streams are derived from a root seed.

pub mod diffusion;
pub mod distill;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod planner;
pub mod rng;
pub mod sim;
pub mod solver;
