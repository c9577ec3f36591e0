//! Diagnostic: find zero-noise collisions and dump their trajectories.

use crossfail::diffusion::{FailureSystem, TrafficSystem};
use crossfail::rng::stream;
use crossfail::sim::{Branch, NoiseSequence, SimParams, WorldGeometry};

fn main() {
    let world = WorldGeometry::build(0.04, 1.0).unwrap();
    let params = SimParams::default();
    let spawn = Branch::South;
    let system = TrafficSystem::new(world.clone(), params, spawn);
    let mut shown = 0;
    for i in 0..2000u64 {
        let case = {
            let mut r = stream(7, "probe", i);
            system.draw_case(&mut r)
        };
        let out = system.simulate(&case, &NoiseSequence::zeros().flat());
        if out.collided && shown < 3 {
            shown += 1;
            println!(
                "case {i}: intr {:?}->{:?} delta {:.2} ego->{:?}",
                case.scenario.intruder_spawn,
                case.scenario.intruder_destination,
                case.scenario.intruder_idm_delta,
                case.scenario.ego_destination
            );
            for (t, s) in out.trajectory.iter().enumerate().take(8) {
                println!(
                    "  t={t} ego ({:+.3},{:+.3}) v({:+.3},{:+.3}) | intr ({:+.3},{:+.3}) v({:+.3},{:+.3}) sep {:.3}",
                    s.ego.x, s.ego.y, s.ego.vx, s.ego.vy,
                    s.intruder.x, s.intruder.y, s.intruder.vx, s.intruder.vy,
                    s.separation()
                );
            }
        }
    }
    let mut fails = 0;
    for i in 0..2000u64 {
        let case = {
            let mut r = stream(7, "probe", i);
            system.draw_case(&mut r)
        };
        let out = system.simulate(&case, &NoiseSequence::zeros().flat());
        if out.collided {
            fails += 1;
        }
    }
    println!("zero-noise south failure rate: {}", fails as f64 / 2000.0);
}
