//! Intelligent Driver Model longitudinal control and the obstacle
//! resolution that feeds it (direct leader on the own path, or a conflict
//! point where two routes cross).

use serde::{Deserialize, Serialize};

use super::geometry::{Route, SimError, WorldGeometry};

/// IDM parameters. Speeds and distances are in map units and units/step;
/// `delta` is the velocity exponent (the intruder's is randomized per
/// scenario instance).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IdmParams {
    pub desired_speed: f64,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub hard_decel: f64,
    pub delta: f64,
}

impl IdmParams {
    pub fn ego_default() -> IdmParams {
        // hard_decel is sized so a vehicle at the speed cap can stop inside
        // the shortest spawn distance (0.5^2 / (2 * 0.5) = 0.25); min_gap
        // exceeds the collision radius so queuing vehicles never touch
        IdmParams {
            desired_speed: 0.5,
            time_headway: 1.0,
            min_gap: 0.06,
            max_accel: 0.1,
            comfort_decel: 0.2,
            hard_decel: 0.5,
            delta: 4.0,
        }
    }

    pub fn intruder_default() -> IdmParams {
        IdmParams {
            desired_speed: 0.45,
            ..IdmParams::ego_default()
        }
    }
}

/// IDM acceleration for speed `v`, net gap to the obstacle, and closing
/// speed `dv` (positive when approaching). `gap = +inf` is the free road.
/// The result is clamped to `[-hard_decel, max_accel]`.
pub fn idm_acceleration(v: f64, gap: f64, dv: f64, p: &IdmParams) -> Result<f64, SimError> {
    if !v.is_finite() || gap.is_nan() || !dv.is_finite() {
        return Err(SimError::BadGeometry(format!(
            "non-finite IDM inputs v={v} gap={gap} dv={dv}"
        )));
    }
    if !(p.desired_speed > 0.0) || !(gap > 0.0) {
        return Err(SimError::BadGeometry(format!(
            "IDM needs positive desired speed and gap (v0={} gap={gap})",
            p.desired_speed
        )));
    }
    let s_star = p.min_gap
        + v * p.time_headway
        + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
    let free = (v / p.desired_speed).powf(p.delta);
    let interaction = if gap.is_infinite() { 0.0 } else { (s_star / gap).powi(2) };
    let a = p.max_accel * (1.0 - free - interaction);
    Ok(a.clamp(-p.hard_decel, p.max_accel))
}

/// Another vehicle as seen by a controller (possibly through sensor noise).
#[derive(Debug, Clone, Copy)]
pub struct ObservedVehicle {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

impl ObservedVehicle {
    pub fn as_vector(&self) -> [f64; 4] {
        [self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    pub fn from_vector(v: [f64; 4]) -> ObservedVehicle {
        ObservedVehicle {
            pos: [v[0], v[1]],
            vel: [v[2], v[3]],
        }
    }
}

/// Floor speed used when converting distances to arrival times; a stopped
/// vehicle gets an effectively infinite time-to-conflict.
const SPEED_FLOOR: f64 = 1e-6;

/// Gap/closing-speed pairs the IDM should brake for, from the viewpoint of a
/// vehicle at `progress` on `route` moving at `speed`:
///
/// * direct leader: the other vehicle projects onto our path ahead of us
///   within half a lane laterally;
/// * conflict point: our route crosses the other's route ahead, the other
///   has not yet cleared the crossing, and it arrives no later than we do
///   (the earlier-arriving vehicle keeps its priority; ties yield). The
///   conflict point is then treated as a standing obstacle.
///
/// `clearance` is subtracted from raw distances (disc footprints).
pub fn resolve_obstacles(
    world: &WorldGeometry,
    route: &Route,
    progress: f64,
    speed: f64,
    other: &ObservedVehicle,
    other_route: &Route,
    clearance: f64,
) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(2);

    // same-path handling: a vehicle within half a lane of our own polyline
    // is either a direct leader (ahead) or a follower (behind, its problem);
    // crossing conflicts never apply to it, since it can only reach a
    // crossing through us or ahead of us along the shared path
    let (arc, lat) = route.project(other.pos);
    if lat <= world.lane_width / 2.0 + 1e-9 {
        if arc > progress + 1e-12 {
            let gap = (arc - progress - clearance).max(1e-6);
            let tangent = route.tangent_at(arc);
            let other_along = other.vel[0] * tangent[0] + other.vel[1] * tangent[1];
            out.push((gap, speed - other_along));
        }
        return out;
    }

    // conflict points with the other's route
    let (other_arc, _) = other_route.project(other.pos);
    let ot = other_route.tangent_at(other_arc);
    let other_speed = (other.vel[0] * ot[0] + other.vel[1] * ot[1]).max(0.0);
    for c in world.crossings(route, other_route) {
        if c.arc_a <= progress + 1e-12 {
            continue; // already past it
        }
        if other_arc - clearance > c.arc_b {
            continue; // the other has cleared this crossing
        }
        let t_self = (c.arc_a - progress) / speed.max(SPEED_FLOOR);
        let t_other = (c.arc_b - other_arc).max(0.0) / other_speed.max(SPEED_FLOOR);
        if t_self >= t_other {
            let gap = (c.arc_a - progress - clearance).max(1e-6);
            out.push((gap, speed));
            break;
        }
    }
    out
}

/// Full IDM decision against one observed vehicle: free-road acceleration
/// when no obstacle binds, otherwise the most restrictive obstacle response.
pub fn idm_accel_against(
    world: &WorldGeometry,
    route: &Route,
    progress: f64,
    speed: f64,
    params: &IdmParams,
    other: &ObservedVehicle,
    other_route: &Route,
    clearance: f64,
) -> Result<f64, SimError> {
    let obstacles = resolve_obstacles(world, route, progress, speed, other, other_route, clearance);
    let mut a = idm_acceleration(speed, f64::INFINITY, 0.0, params)?;
    for (gap, dv) in obstacles {
        a = a.min(idm_acceleration(speed, gap, dv, params)?);
    }
    Ok(a)
}
