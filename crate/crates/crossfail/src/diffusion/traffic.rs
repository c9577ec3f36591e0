//! Adapter exposing the intersection simulator as a [`FailureSystem`]: one
//! case is a scenario instance plus an initial state, and the residual
//! randomness (destinations, IDM exponent) comes from the case stream.

use rand_chacha::ChaCha12Rng;

use crate::sim::{
    draw_initial_state, run_simulation, Branch, IdmEgo, InitialState, NoiseSequence, Scenario,
    SimOutcome, SimParams, SpawnRanges, VehicleState, WorldGeometry, FLAT_DIM,
};

use super::train::FailureSystem;

/// Spawn-separation margin added to the collision radius when drawing
/// initial states.
pub const SPAWN_MARGIN: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct TrafficSystem {
    pub world: WorldGeometry,
    pub params: SimParams,
    pub spawn: Branch,
    pub ranges: SpawnRanges,
}

#[derive(Debug, Clone)]
pub struct TrafficCase {
    pub scenario: Scenario,
    pub s0: InitialState,
}

impl TrafficSystem {
    pub fn new(world: WorldGeometry, params: SimParams, spawn: Branch) -> TrafficSystem {
        TrafficSystem {
            world,
            params,
            spawn,
            ranges: SpawnRanges::default(),
        }
    }

    /// Full simulation of a case (the `rho` shortcut plus trajectory).
    pub fn simulate(&self, case: &TrafficCase, eps_raw: &[f64]) -> SimOutcome {
        let noise = NoiseSequence::from_flat(eps_raw).expect("flat noise length");
        run_simulation(
            &self.world,
            &self.params,
            &case.scenario,
            &case.s0,
            noise.steps(),
            &mut IdmEgo,
            0,
        )
        .expect("IDM closed loop cannot fail on valid inputs")
    }

    /// Rebuilds a case from a stored `s0` vector and scenario instance:
    /// positions are projected back onto the routes and speeds taken from
    /// the stored velocities (used when re-simulating dataset records).
    pub fn case_from_vector(&self, scenario: Scenario, s0: &[f64; 8]) -> TrafficCase {
        let ego_route = scenario.ego_route(&self.world);
        let intr_route = scenario.intruder_route(&self.world);
        let (pe, _) = ego_route.project([s0[0], s0[1]]);
        let (pi, _) = intr_route.project([s0[4], s0[5]]);
        let ego = VehicleState::on_route(ego_route, pe, (s0[2] * s0[2] + s0[3] * s0[3]).sqrt());
        let intruder =
            VehicleState::on_route(intr_route, pi, (s0[6] * s0[6] + s0[7] * s0[7]).sqrt());
        TrafficCase {
            scenario,
            s0: InitialState { ego, intruder },
        }
    }
}

impl FailureSystem for TrafficSystem {
    type Case = TrafficCase;

    fn data_dim(&self) -> usize {
        FLAT_DIM
    }

    fn s0_dim(&self) -> usize {
        8
    }

    fn draw_case(&self, rng: &mut ChaCha12Rng) -> TrafficCase {
        let scenario = Scenario::sample(self.spawn, rng);
        let s0 = draw_initial_state(
            &self.world,
            &scenario,
            &self.ranges,
            self.params.collision_radius_sum + SPAWN_MARGIN,
            rng,
        )
        .expect("default ranges always admit a non-overlapping spawn");
        TrafficCase { scenario, s0 }
    }

    fn s0_of(&self, case: &TrafficCase) -> Vec<f64> {
        case.s0.as_vector().to_vec()
    }

    fn rho(&self, case: &TrafficCase, eps_raw: &[f64]) -> f64 {
        self.simulate(case, eps_raw).robustness
    }
}

/// Conditioning bounds for the traffic system: positions within the map,
/// velocities within the speed caps.
pub fn traffic_s0_bounds(world: &WorldGeometry) -> Vec<(f64, f64)> {
    let l = world.branch_length + world.lane_width;
    let v = 0.55;
    vec![
        (-l, l),
        (-l, l),
        (-v, v),
        (-v, v),
        (-l, l),
        (-l, l),
        (-v, v),
        (-v, v),
    ]
}
