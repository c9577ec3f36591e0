//! The robust planning controller: far from the intersection it replans a
//! max-min separation MILP against freshly sampled failures each step; near
//! the intersection it reuses the last failure set through Kalman beliefs
//! and takes the most conservative plausible IDM action.

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::distill::StudentModel;
use crate::rng::stream;
use crate::sim::{
    idm_accel_against, observe, robustness_of, step_along_route, step_planar, tangential_speed,
    InitialState, ObservedVehicle, Scenario, SimOutcome, SimParams, Snapshot, VehicleState,
    WorldGeometry, HORIZON, NOISE_DIM,
};
use crate::solver::{solve_milp, LpError, Status};

use super::failure_set::{generate_failure_set, FailureSampleSet};
use super::kalman::{BeliefFilter, FilterSource, PlannerError};
use super::milp_build::{build_plan_milp, PlanLimits, PlanSolution};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Candidate futures generated per planning step.
    pub n_prime: usize,
    /// Lowest-robustness futures kept as failure samples.
    pub n_select: usize,
    /// Plausibility radius around the observed intruder position.
    pub eta: f64,
    /// Belief samples drawn per filter in the policy phase.
    pub samples_per_filter: usize,
    /// Distance to the intersection below which replanning stops.
    pub planning_cutoff: f64,
    pub limits: PlanLimits,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            n_prime: 200,
            n_select: 40,
            eta: 0.08,
            samples_per_filter: 10,
            planning_cutoff: 0.35,
            limits: PlanLimits::default(),
        }
    }
}

/// Which control mode produced a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Planning,
    PolicyBased,
}

#[derive(Debug, Clone)]
pub struct RolloutLogRow {
    pub t: usize,
    pub phase: Phase,
    pub ego: [f64; 4],
    pub intruder: [f64; 4],
    /// MILP objective in the planning phase, chosen acceleration otherwise.
    pub objective_or_accel: f64,
    pub plausible_states: usize,
}

#[derive(Debug)]
pub struct RolloutResult {
    pub outcome: SimOutcome,
    /// Ego failed to end on the destination branch with clearance.
    pub delayed: bool,
    pub log: Vec<RolloutLogRow>,
    /// MILP solves that returned no usable plan (fallbacks taken).
    pub infeasible_plans: usize,
}

/// Most conservative plausible action: draw `m_per` states per belief, keep
/// those within `eta` of the observed intruder position, run IDM against
/// each, and take the minimum acceleration. Falls back to the observation
/// filter's mean when nothing is plausible.
#[allow(clippy::too_many_arguments)]
pub fn policy_phase_action(
    filters: &[BeliefFilter],
    obs: &ObservedVehicle,
    world: &WorldGeometry,
    scenario: &Scenario,
    ego: &VehicleState,
    params: &SimParams,
    m_per: usize,
    eta: f64,
    rng: &mut ChaCha12Rng,
) -> (f64, usize) {
    let route = scenario.ego_route(world);
    let intr_route = scenario.intruder_route(world);
    let speed = tangential_speed(route, ego);
    let eval = |state: [f64; 4]| -> f64 {
        idm_accel_against(
            world,
            route,
            ego.route_progress,
            speed,
            &params.ego_idm,
            &ObservedVehicle {
                pos: [state[0], state[1]],
                vel: [state[2], state[3]],
            },
            intr_route,
            params.collision_radius_sum,
        )
        .unwrap_or(-params.ego_idm.hard_decel)
    };
    let mut best: Option<f64> = None;
    let mut plausible = 0usize;
    for f in filters {
        for _ in 0..m_per {
            let s = f.sample(rng);
            let d = ((s[0] - obs.pos[0]).powi(2) + (s[1] - obs.pos[1]).powi(2)).sqrt();
            if d <= eta {
                plausible += 1;
                let a = eval(s);
                best = Some(best.map_or(a, |b: f64| b.min(a)));
            }
        }
    }
    match best {
        Some(a) => (a, plausible),
        None => {
            let mean = filters
                .iter()
                .find(|f| f.source == FilterSource::Observation)
                .map(|f| f.mean)
                .unwrap_or([obs.pos[0], obs.pos[1], obs.vel[0], obs.vel[1]]);
            (eval(mean), 0)
        }
    }
}

fn on_destination_branch(
    world: &WorldGeometry,
    dest: crate::sim::Branch,
    pos: [f64; 2],
    clearance: f64,
) -> bool {
    let w = world.lane_width;
    let l = world.branch_length;
    let d = world.distance_to_intersection(pos);
    if d < clearance {
        return false;
    }
    match dest {
        crate::sim::Branch::North => pos[1] >= w && pos[0].abs() <= w && pos[1] <= l + w,
        crate::sim::Branch::South => pos[1] <= -w && pos[0].abs() <= w,
        crate::sim::Branch::East => pos[0] >= w && pos[1].abs() <= w && pos[0] <= l + w,
        crate::sim::Branch::West => pos[0] <= -w && pos[1].abs() <= w,
    }
}

/// Runs one closed-loop rollout of the robust planner against an
/// IDM-controlled intruder, under the given per-step observation noise.
/// `(seed, rollout_tag)` derive every internal sampling stream.
#[allow(clippy::too_many_arguments)]
pub fn run_robust_planner(
    world: &WorldGeometry,
    params: &SimParams,
    scenario: &Scenario,
    s0: &InitialState,
    student: &StudentModel,
    cfg: &PlannerConfig,
    noise: &[[f64; NOISE_DIM]],
    seed: u64,
    rollout_tag: u64,
) -> Result<RolloutResult, PlannerError> {
    assert_eq!(noise.len(), HORIZON, "full-horizon noise required");
    let ego_route = scenario.ego_route(world);
    let intr_route = scenario.intruder_route(world);
    let mut intr_params = params.intruder_idm;
    intr_params.delta = scenario.intruder_idm_delta;

    let mut ego = s0.ego;
    let mut intruder = s0.intruder;
    let mut trajectory = Vec::with_capacity(HORIZON + 1);
    trajectory.push(Snapshot { ego, intruder });
    let mut collided = trajectory[0].separation() <= params.collision_radius_sum;

    let mut log: Vec<RolloutLogRow> = Vec::new();
    let mut last_fset: Option<FailureSampleSet> = None;
    let mut pending_plan: Option<(PlanSolution, usize)> = None; // plan + steps consumed
    let mut filters: Option<Vec<BeliefFilter>> = None;
    let mut infeasible_plans = 0usize;
    let mut policy_rng = stream(seed, "policy-draw", rollout_tag);

    for t in 0..HORIZON {
        if collided {
            let last = *trajectory.last().unwrap();
            trajectory.push(last);
            continue;
        }
        let obs = observe(&intruder, &noise[t]);
        let dist = world.distance_to_intersection(ego.position());
        let planning = dist >= cfg.planning_cutoff && filters.is_none();

        let mut row = RolloutLogRow {
            t,
            phase: if planning { Phase::Planning } else { Phase::PolicyBased },
            ego: [ego.x, ego.y, ego.vx, ego.vy],
            intruder: [intruder.x, intruder.y, intruder.vx, intruder.vy],
            objective_or_accel: 0.0,
            plausible_states: 0,
        };

        if planning {
            let fset = generate_failure_set(
                student,
                world,
                params,
                scenario,
                &ego,
                &obs,
                t,
                cfg.n_prime,
                cfg.n_select.min(cfg.n_prime),
                seed,
                rollout_tag * 100 + t as u64,
            )?;
            let plan = match build_plan_milp(
                world,
                &ego,
                scenario.ego_destination,
                &fset,
                t,
                &cfg.limits,
            ) {
                Ok(problem) => match solve_milp(&problem.milp) {
                    Ok(res)
                        if (res.status == Status::Optimal
                            || res.status == Status::IterationLimit)
                            && !res.x.is_empty() =>
                    {
                        problem.extract(&res)
                    }
                    Ok(_) => None,
                    Err(LpError::EmptyBound(_)) => None,
                    Err(e) => return Err(e.into()),
                },
                Err(PlannerError::EmptyFailureSet) => None,
                Err(e) => return Err(e),
            };
            last_fset = Some(fset);
            let action = match plan {
                Some(p) => {
                    row.objective_or_accel = p.objective;
                    let a = p.actions[0];
                    pending_plan = Some((p, 1));
                    Some(a)
                }
                None => {
                    infeasible_plans += 1;
                    // fall back to the unexecuted tail of the previous plan
                    match pending_plan.take() {
                        Some((p, used)) if used < p.actions.len() => {
                            let a = p.actions[used];
                            row.objective_or_accel = p.objective;
                            pending_plan = Some((p, used + 1));
                            Some(a)
                        }
                        _ => None,
                    }
                }
            };
            match action {
                Some([ax, ay]) => {
                    ego = step_planar(ego_route, &ego, ax, ay);
                }
                None => {
                    // no plan at all: IDM on the current observation
                    let a = idm_accel_against(
                        world,
                        ego_route,
                        ego.route_progress,
                        tangential_speed(ego_route, &ego),
                        &params.ego_idm,
                        &obs,
                        intr_route,
                        params.collision_radius_sum,
                    )?;
                    row.objective_or_accel = a;
                    ego = step_along_route(ego_route, &ego, a);
                }
            }
        } else {
            // policy-based phase
            if filters.is_none() {
                // re-attach the ego to its route for IDM control
                let (arc, _) = ego_route.project(ego.position());
                ego = VehicleState::on_route(
                    ego_route,
                    arc,
                    tangential_speed(ego_route, &ego),
                );
                let mut fs = Vec::new();
                fs.push(BeliefFilter::diffuse(
                    obs.as_vector(),
                    params.gamma,
                    FilterSource::Observation,
                ));
                if let Some(fset) = &last_fset {
                    let idx = t - fset.generated_at;
                    for (i, traj) in fset.trajectories.iter().enumerate() {
                        if let Some(state) = traj.get(idx) {
                            fs.push(BeliefFilter::diffuse(
                                *state,
                                params.gamma,
                                FilterSource::FailureSample(i),
                            ));
                        }
                    }
                }
                filters = Some(fs);
            }
            let fs = filters.as_mut().unwrap();
            for f in fs.iter_mut() {
                let meas = match f.source {
                    FilterSource::Observation => obs.as_vector(),
                    FilterSource::FailureSample(i) => {
                        let fset = last_fset.as_ref().expect("failure filters imply a set");
                        let idx = t - fset.generated_at;
                        match fset.trajectories[i].get(idx) {
                            Some(s) => *s,
                            None => *fset.trajectories[i].last().unwrap(),
                        }
                    }
                };
                *f = f.update(meas, params.gamma)?;
            }
            let (a, plausible) = policy_phase_action(
                fs,
                &obs,
                world,
                scenario,
                &ego,
                params,
                cfg.samples_per_filter,
                cfg.eta,
                &mut policy_rng,
            );
            row.objective_or_accel = a;
            row.plausible_states = plausible;
            ego = step_along_route(ego_route, &ego, a);
        }

        // intruder runs noise-free IDM against the true ego state
        let intr_a = idm_accel_against(
            world,
            intr_route,
            intruder.route_progress,
            tangential_speed(intr_route, &intruder),
            &intr_params,
            &ObservedVehicle {
                pos: ego.position(),
                vel: ego.velocity(),
            },
            ego_route,
            params.collision_radius_sum,
        )?;
        intruder = step_along_route(intr_route, &intruder, intr_a);

        let snap = Snapshot { ego, intruder };
        if snap.separation() <= params.collision_radius_sum {
            collided = true;
        }
        trajectory.push(snap);
        log.push(row);
    }

    let robustness = robustness_of(&trajectory, params.collision_radius_sum);
    let final_pos = trajectory.last().unwrap().ego.position();
    let delayed = !on_destination_branch(
        world,
        scenario.ego_destination,
        final_pos,
        cfg.limits.terminal_clearance,
    );
    Ok(RolloutResult {
        outcome: SimOutcome {
            scenario_spawn: scenario.intruder_spawn,
            trajectory,
            robustness,
            collided: robustness == 0.0,
        },
        delayed,
        log,
        infeasible_plans,
    })
}

/// CSV header and row rendering for rollout logs.
pub fn log_csv_header() -> &'static str {
    "t,phase,ego_x,ego_y,ego_vx,ego_vy,intr_x,intr_y,intr_vx,intr_vy,objective_or_accel,plausible\n"
}

pub fn log_csv_row(row: &RolloutLogRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}\n",
        row.t,
        match row.phase {
            Phase::Planning => "planning",
            Phase::PolicyBased => "policy",
        },
        row.ego[0],
        row.ego[1],
        row.ego[2],
        row.ego[3],
        row.intruder[0],
        row.intruder[1],
        row.intruder[2],
        row.intruder[3],
        row.objective_or_accel,
        row.plausible_states
    )
}
