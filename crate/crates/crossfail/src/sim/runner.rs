//! Closed-loop simulation: per step the ego observes the intruder through
//! sensor noise and picks an acceleration, the intruder runs noise-free IDM,
//! and both advance one Euler step along their routes.

use serde::{Deserialize, Serialize};

use super::geometry::{Route, SimError, WorldGeometry};
use super::idm::{idm_accel_against, IdmParams, ObservedVehicle};
use super::noise::{HORIZON, NOISE_DIM};
use super::outcome::{robustness_of, SimOutcome, Snapshot};
use super::vehicle::{InitialState, Scenario, VehicleState};

/// Simulation-wide parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimParams {
    /// Prior sensor-noise covariance scale (per-component variance).
    pub gamma: f64,
    /// Sum of the two disc radii; separation at or below this is a collision.
    pub collision_radius_sum: f64,
    pub ego_idm: IdmParams,
    pub intruder_idm: IdmParams,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            gamma: 1.0 / 0.15,
            collision_radius_sum: 0.04,
            ego_idm: IdmParams::ego_default(),
            intruder_idm: IdmParams::intruder_default(),
        }
    }
}

/// One forward-Euler step along a route with scalar acceleration `a`:
/// `progress += v + a/2`, `v += a` (dt = 1), no reverse motion, and the
/// vehicle parks at the route end.
pub fn step_along_route(route: &Route, state: &VehicleState, a: f64) -> VehicleState {
    let v = tangential_speed(route, state);
    let ds = (v + 0.5 * a).max(0.0);
    let mut v_next = (v + a).max(0.0);
    let mut progress = state.route_progress + ds;
    if progress >= route.length() {
        progress = route.length();
        v_next = 0.0;
    }
    VehicleState::on_route(route, progress, v_next)
}

/// Free planar Euler step (used by the robust planner's trajectory plans):
/// `p += v + a/2`, `v += a`. `route_progress` is refreshed by projection.
pub fn step_planar(route: &Route, state: &VehicleState, ax: f64, ay: f64) -> VehicleState {
    let x = state.x + state.vx + 0.5 * ax;
    let y = state.y + state.vy + 0.5 * ay;
    let vx = state.vx + ax;
    let vy = state.vy + ay;
    let (progress, _) = route.project([x, y]);
    VehicleState {
        x,
        y,
        vx,
        vy,
        route_progress: progress,
    }
}

/// Speed along the route tangent (non-negative).
pub fn tangential_speed(route: &Route, state: &VehicleState) -> f64 {
    let t = route.tangent_at(state.route_progress);
    (state.vx * t[0] + state.vy * t[1]).max(0.0)
}

/// Noisy measurement of the intruder: truth plus the per-step error vector.
/// The ego's own state is observed exactly.
pub fn observe(intruder: &VehicleState, eps: &[f64; NOISE_DIM]) -> ObservedVehicle {
    ObservedVehicle {
        pos: [intruder.x + eps[0], intruder.y + eps[1]],
        vel: [intruder.vx + eps[2], intruder.vy + eps[3]],
    }
}

/// Context handed to an ego controller each step.
pub struct EgoContext<'a> {
    pub t: usize,
    pub ego: &'a VehicleState,
    pub observed_intruder: ObservedVehicle,
    pub world: &'a WorldGeometry,
    pub scenario: &'a Scenario,
    pub params: &'a SimParams,
}

/// An ego controller producing a scalar along-route acceleration per step.
pub trait EgoPolicy {
    fn accel(&mut self, ctx: &EgoContext) -> f64;
}

/// The baseline controller: IDM with fixed exponent against the observed
/// intruder state, using the intruder's route for conflict geometry.
pub struct IdmEgo;

impl EgoPolicy for IdmEgo {
    fn accel(&mut self, ctx: &EgoContext) -> f64 {
        let route = ctx.scenario.ego_route(ctx.world);
        idm_accel_against(
            ctx.world,
            route,
            ctx.ego.route_progress,
            tangential_speed(route, ctx.ego),
            &ctx.params.ego_idm,
            &ctx.observed_intruder,
            ctx.scenario.intruder_route(ctx.world),
            ctx.params.collision_radius_sum,
        )
        .unwrap_or(-ctx.params.ego_idm.hard_decel)
    }
}

/// Runs the closed loop from `start_t` with one noise vector per remaining
/// step. State propagation freezes once the discs touch (robustness is zero
/// from then on); the trajectory keeps `noise.len() + 1` snapshots either
/// way.
pub fn run_simulation(
    world: &WorldGeometry,
    params: &SimParams,
    scenario: &Scenario,
    s0: &InitialState,
    noise: &[[f64; NOISE_DIM]],
    ego_policy: &mut dyn EgoPolicy,
    start_t: usize,
) -> Result<SimOutcome, SimError> {
    if start_t > HORIZON || noise.len() != HORIZON - start_t {
        return Err(SimError::NoiseLength {
            got: noise.len(),
            want: HORIZON - start_t.min(HORIZON),
        });
    }
    let ego_route = scenario.ego_route(world);
    let intr_route = scenario.intruder_route(world);
    let mut intr_params = params.intruder_idm;
    intr_params.delta = scenario.intruder_idm_delta;

    let mut ego = s0.ego;
    let mut intruder = s0.intruder;
    let mut trajectory = Vec::with_capacity(noise.len() + 1);
    trajectory.push(Snapshot { ego, intruder });
    let mut collided =
        trajectory[0].separation() <= params.collision_radius_sum;

    for (i, eps) in noise.iter().enumerate() {
        if collided {
            let last = *trajectory.last().unwrap();
            trajectory.push(last);
            continue;
        }
        let t = start_t + i;
        let obs = observe(&intruder, eps);
        let ctx = EgoContext {
            t,
            ego: &ego,
            observed_intruder: obs,
            world,
            scenario,
            params,
        };
        let ego_a = ego_policy.accel(&ctx);
        if !ego_a.is_finite() {
            return Err(SimError::BadPolicy(t));
        }
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
        ego = step_along_route(ego_route, &ego, ego_a);
        intruder = step_along_route(intr_route, &intruder, intr_a);
        let snap = Snapshot { ego, intruder };
        if snap.separation() <= params.collision_radius_sum {
            collided = true;
        }
        trajectory.push(snap);
    }

    let robustness = robustness_of(&trajectory, params.collision_radius_sum);
    Ok(SimOutcome {
        scenario_spawn: scenario.intruder_spawn,
        trajectory,
        robustness,
        collided: robustness == 0.0,
    })
}
