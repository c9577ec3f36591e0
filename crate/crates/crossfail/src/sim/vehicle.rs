//! Vehicle state, scenario instances, and the randomized initializer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{Branch, Route, SimError, WorldGeometry};

/// Point-mass vehicle: planar position/velocity plus arc progress along its
/// assigned route. IDM-controlled vehicles stay on the polyline; the robust
/// planner moves the ego freely and keeps `route_progress` as the projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub route_progress: f64,
}

impl VehicleState {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.vx, self.vy]
    }

    pub fn speed(&self) -> f64 {
        (self.vx * self.vx + self.vy * self.vy).sqrt()
    }

    /// Places a vehicle on `route` at arc `progress` moving at `speed`.
    pub fn on_route(route: &Route, progress: f64, speed: f64) -> VehicleState {
        let p = route.point_at(progress);
        let t = route.tangent_at(progress);
        VehicleState {
            x: p[0],
            y: p[1],
            vx: speed * t[0],
            vy: speed * t[1],
            route_progress: progress,
        }
    }
}

/// One concrete scenario instance. The scenario *family* (in the sense of
/// "the set of situations with the intruder spawning from branch X") is just
/// the `intruder_spawn` tag; destination choices and the intruder's IDM
/// exponent are randomized per instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub intruder_spawn: Branch,
    pub intruder_destination: Branch,
    pub ego_destination: Branch,
    pub intruder_idm_delta: f64,
}

impl Scenario {
    /// Draws destinations uniformly over the legal exits and the IDM
    /// exponent uniformly from [3.5, 4.5]. The ego always spawns South.
    pub fn sample(intruder_spawn: Branch, rng: &mut impl Rng) -> Scenario {
        let intr_exits = intruder_spawn.exits();
        let ego_exits = Branch::South.exits();
        Scenario {
            intruder_spawn,
            intruder_destination: intr_exits[rng.gen_range(0..3)],
            ego_destination: ego_exits[rng.gen_range(0..3)],
            intruder_idm_delta: rng.gen_range(3.5..4.5),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.intruder_spawn == self.intruder_destination {
            return Err(SimError::BadGeometry(
                "intruder destination equals its spawn branch".into(),
            ));
        }
        if self.ego_destination == Branch::South {
            return Err(SimError::BadGeometry("ego destination equals its spawn".into()));
        }
        if !(3.5..=4.5).contains(&self.intruder_idm_delta) {
            return Err(SimError::BadGeometry(format!(
                "intruder IDM delta {} outside [3.5, 4.5]",
                self.intruder_idm_delta
            )));
        }
        Ok(())
    }

    pub fn ego_route<'w>(&self, world: &'w WorldGeometry) -> &'w Route {
        world.route(Branch::South, self.ego_destination)
    }

    pub fn intruder_route<'w>(&self, world: &'w WorldGeometry) -> &'w Route {
        world.route(self.intruder_spawn, self.intruder_destination)
    }
}

/// Initial traffic state `s0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    pub ego: VehicleState,
    pub intruder: VehicleState,
}

impl InitialState {
    /// Conditioning vector `[ego x,y,vx,vy, intruder x,y,vx,vy]`.
    pub fn as_vector(&self) -> [f64; 8] {
        [
            self.ego.x,
            self.ego.y,
            self.ego.vx,
            self.ego.vy,
            self.intruder.x,
            self.intruder.y,
            self.intruder.vx,
            self.intruder.vy,
        ]
    }
}

/// Spawn ranges of the default initializer (distances measured to the
/// intersection box, speeds in units per step).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpawnRanges {
    pub ego_distance: (f64, f64),
    pub ego_speed: (f64, f64),
    pub intruder_distance: (f64, f64),
    pub intruder_speed: (f64, f64),
}

impl Default for SpawnRanges {
    fn default() -> Self {
        SpawnRanges {
            ego_distance: (0.35, 0.65),
            ego_speed: (0.35, 0.5),
            intruder_distance: (0.25, 0.45),
            intruder_speed: (0.35, 0.45),
        }
    }
}

fn gen_in(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Arc progress on `route` of the point at axial distance `d` from the
/// intersection box on the approach leg.
pub fn approach_progress(world: &WorldGeometry, _route: &Route, d: f64) -> f64 {
    world.branch_length - (d + world.intersection_half())
}

/// Draws `s0`, resampling until the two vehicles do not overlap at spawn.
pub fn draw_initial_state(
    world: &WorldGeometry,
    scenario: &Scenario,
    ranges: &SpawnRanges,
    min_separation: f64,
    rng: &mut impl Rng,
) -> Result<InitialState, SimError> {
    let ego_route = scenario.ego_route(world);
    let intr_route = scenario.intruder_route(world);
    let max_d = ranges.ego_distance.1.max(ranges.intruder_distance.1);
    if max_d + world.intersection_half() >= world.branch_length {
        return Err(SimError::BadGeometry(format!(
            "branch length {} shorter than max spawn distance {}",
            world.branch_length, max_d
        )));
    }
    const ATTEMPTS: usize = 100;
    for _ in 0..ATTEMPTS {
        let de = gen_in(rng, ranges.ego_distance);
        let ve = gen_in(rng, ranges.ego_speed);
        let di = gen_in(rng, ranges.intruder_distance);
        let vi = gen_in(rng, ranges.intruder_speed);
        let ego = VehicleState::on_route(ego_route, approach_progress(world, ego_route, de), ve);
        let intruder =
            VehicleState::on_route(intr_route, approach_progress(world, intr_route, di), vi);
        let sep = ((ego.x - intruder.x).powi(2) + (ego.y - intruder.y).powi(2)).sqrt();
        if sep > min_separation {
            return Ok(InitialState { ego, intruder });
        }
    }
    Err(SimError::SpawnFailed(ATTEMPTS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn sampled_scenarios_are_legal() {
        let mut rng = stream(41, "scenario", 0);
        for b in crate::sim::geometry::BRANCHES {
            for _ in 0..50 {
                let s = Scenario::sample(b, &mut rng);
                s.validate().unwrap();
                assert_eq!(s.intruder_spawn, b);
            }
        }
    }

    #[test]
    fn initial_states_respect_ranges_and_lie_on_routes() {
        let world = WorldGeometry::build(0.04, 1.0).unwrap();
        let ranges = SpawnRanges::default();
        let mut rng = stream(42, "spawn", 0);
        for i in 0..200 {
            let scenario = Scenario::sample(
                crate::sim::geometry::BRANCHES[i % 4],
                &mut rng,
            );
            let s0 = draw_initial_state(&world, &scenario, &ranges, 0.05, &mut rng).unwrap();
            let de = world.distance_to_intersection(s0.ego.position());
            assert!((0.35..=0.65).contains(&de), "ego distance {de}");
            let di = world.distance_to_intersection(s0.intruder.position());
            assert!((0.25..=0.45).contains(&di), "intruder distance {di}");
            assert!((0.35..=0.5).contains(&s0.ego.speed()));
            assert!((0.35..=0.45).contains(&s0.intruder.speed()));
            // on-route within tolerance
            let (_, lat) = scenario.ego_route(&world).project(s0.ego.position());
            assert!(lat < 1e-9);
            let sep = ((s0.ego.x - s0.intruder.x).powi(2) + (s0.ego.y - s0.intruder.y).powi(2))
                .sqrt();
            assert!(sep > 0.05);
        }
    }
}
