//! Failure-sample generation inside the planning loop: draw error sequences
//! from the one-step sampler conditioned on the current measurement,
//! simulate IDM-vs-IDM futures, and keep the lowest-robustness trajectories.

use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::diffusion::Conditioning;
use crate::distill::StudentModel;
use crate::rng::stream;
use crate::sim::{
    run_simulation, IdmEgo, InitialState, NoiseSequence, ObservedVehicle, Scenario, SimParams,
    VehicleState, WorldGeometry, HORIZON,
};

use super::kalman::PlannerError;

/// The lowest-robustness intruder trajectories out of a generated batch.
/// `trajectories[j][i]` is the intruder state 4-vector at time
/// `generated_at + i`; index 0 holds the observation the batch was
/// conditioned on.
#[derive(Debug, Clone)]
pub struct FailureSampleSet {
    pub generated_at: usize,
    pub trajectories: Vec<Vec<[f64; 4]>>,
    pub robustness: Vec<f64>,
}

/// Places an observed intruder state on its route: progress by projection,
/// speed from the tangential velocity component (clamped forward).
pub fn place_on_route(
    world: &WorldGeometry,
    scenario: &Scenario,
    obs: &ObservedVehicle,
) -> VehicleState {
    let route = scenario.intruder_route(world);
    let (arc, _) = route.project(obs.pos);
    let t = route.tangent_at(arc);
    let speed = (obs.vel[0] * t[0] + obs.vel[1] * t[1]).max(0.0);
    VehicleState::on_route(route, arc, speed)
}

/// Generates `n_prime` candidate futures from timestep `t` and selects the
/// `n` lowest-robustness intruder trajectories (stable order on ties). Both
/// vehicles are IDM-controlled in these futures; the intruder starts at the
/// observed state, the ego at its true state. Residual scenario randomness
/// (intruder destination and exponent) redraws per future.
#[allow(clippy::too_many_arguments)]
pub fn generate_failure_set(
    student: &StudentModel,
    world: &WorldGeometry,
    params: &SimParams,
    scenario: &Scenario,
    ego: &VehicleState,
    obs: &ObservedVehicle,
    t: usize,
    n_prime: usize,
    n: usize,
    seed: u64,
    stream_tag: u64,
) -> Result<FailureSampleSet, PlannerError> {
    assert!(n >= 1 && n <= n_prime, "need 1 <= n <= n_prime");
    let cond = Conditioning {
        rho_threshold: 0.0,
        s0: vec![
            ego.x, ego.y, ego.vx, ego.vy, obs.pos[0], obs.pos[1], obs.vel[0], obs.vel[1],
        ],
    };
    let conds = vec![cond; n_prime];
    let mut rngs: Vec<ChaCha12Rng> = (0..n_prime)
        .map(|i| stream(seed, "plan-eps", stream_tag * 1_000_000 + i as u64))
        .collect();
    let eps_list = student.sample_batch(&conds, &mut rngs)?;

    let intruder0 = place_on_route(world, scenario, obs);
    let sims: Vec<(Vec<[f64; 4]>, f64)> = eps_list
        .par_iter()
        .enumerate()
        .map(|(i, eps)| {
            // redraw the intruder's destination and exponent per future
            let mut srng = stream(seed, "plan-scn", stream_tag * 1_000_000 + i as u64);
            let mut scn = Scenario::sample(scenario.intruder_spawn, &mut srng);
            scn.ego_destination = scenario.ego_destination;
            let intr_route = scn.intruder_route(world);
            let (arc, _) = intr_route.project(intruder0.position());
            let intruder = VehicleState::on_route(
                intr_route,
                arc,
                intruder0.speed(),
            );
            let s0 = InitialState {
                ego: *ego,
                intruder,
            };
            let noise = NoiseSequence::from_flat(eps).expect("student output is full length");
            let out = run_simulation(
                world,
                params,
                &scn,
                &s0,
                noise.suffix(t),
                &mut IdmEgo,
                t,
            )
            .expect("IDM futures cannot fail");
            let traj: Vec<[f64; 4]> = out
                .trajectory
                .iter()
                .map(|s| [s.intruder.x, s.intruder.y, s.intruder.vx, s.intruder.vy])
                .collect();
            (traj, out.robustness)
        })
        .collect();

    // stable selection of the n lowest-robustness futures
    let mut order: Vec<usize> = (0..n_prime).collect();
    order.sort_by(|a, b| sims[*a].1.partial_cmp(&sims[*b].1).unwrap());
    let mut trajectories = Vec::with_capacity(n);
    let mut robustness = Vec::with_capacity(n);
    for &i in order.iter().take(n) {
        trajectories.push(sims[i].0.clone());
        robustness.push(sims[i].1);
    }
    debug_assert!(trajectories.iter().all(|tr| tr.len() == HORIZON - t + 1));
    Ok(FailureSampleSet {
        generated_at: t,
        trajectories,
        robustness,
    })
}
