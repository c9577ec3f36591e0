//! Minimal differentiable function-approximator stack: dense/residual
//! networks with analytic gradients, AdamW updates, and deterministic
//! checkpoint serialization.

pub mod adamw;
pub mod checkpoint;
pub mod network;

pub use adamw::AdamW;
pub use checkpoint::{Checkpoint, MetaBlock, ScaleBlock};
pub use network::{Activation, Dense, ForwardCache, Layer, Network, NnError, Residual};

/// Central-finite-difference gradient of `loss` with respect to the
/// parameters of `net`, using the actually-representable `f32` perturbations
/// (the divisor is the realized parameter difference, not the nominal step).
///
/// Test-support oracle: it never calls the analytic backward path.
pub fn finite_difference_grads(
    net: &Network,
    loss: &mut dyn FnMut(&Network) -> f64,
    h: f64,
) -> Vec<f64> {
    let base = net.params_vec();
    let mut grads = Vec::with_capacity(base.len());
    let mut work = net.clone();
    for i in 0..base.len() {
        let theta = base[i] as f64;
        let up = (theta + h) as f32;
        let dn = (theta - h) as f32;
        let set = |val: f32, work: &mut Network| {
            let mut k = 0usize;
            work.visit_params_mut(|p| {
                if k == i {
                    *p = val;
                }
                k += 1;
            });
        };
        set(up, &mut work);
        let f_up = loss(&work);
        set(dn, &mut work);
        let f_dn = loss(&work);
        set(base[i], &mut work);
        let denom = up as f64 - dn as f64;
        grads.push((f_up - f_dn) / denom);
    }
    grads
}
