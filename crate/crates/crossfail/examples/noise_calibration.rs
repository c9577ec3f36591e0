//! Sweeps the sensor-noise scale and reports the Monte Carlo failure rate
//! per scenario, which is how the desk-scale campaign noise gets picked.
//!
//! ```sh
//! cargo run --release --example noise_calibration -- 20000
//! ```

use crossfail::diffusion::{FailureSystem, TrafficSystem};
use crossfail::rng::stream;
use crossfail::sim::{Branch, NoiseSequence, SimParams, WorldGeometry, BRANCHES};
use rayon::prelude::*;

fn rate(world: &WorldGeometry, gamma: f64, spawn: Branch, n: usize, seed: u64) -> (f64, f64) {
    let params = SimParams {
        gamma,
        ..SimParams::default()
    };
    let system = TrafficSystem::new(world.clone(), params, spawn);
    let stats: Vec<(bool, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let case = {
                let mut r = stream(seed, "calib-case", i as u64);
                system.draw_case(&mut r)
            };
            let noise = {
                let mut r = stream(seed, "calib-eps", i as u64);
                NoiseSequence::draw_prior(gamma, &mut r)
            };
            let out = system.simulate(&case, &noise.flat());
            let last = out.trajectory.last().unwrap().ego.position();
            let delayed = !crossfail::harness::on_dest(
                &system.world,
                case.scenario.ego_destination,
                last,
                0.1,
            );
            (out.collided, delayed)
        })
        .collect();
    let fails = stats.iter().filter(|s| s.0).count();
    let delays = stats.iter().filter(|s| s.1).count();
    (fails as f64 / n as f64, delays as f64 / n as f64)
}

fn main() {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|v| v.parse().ok())
        .unwrap_or(20_000);
    let world = WorldGeometry::build(0.04, 1.0).unwrap();
    println!("scenario,gamma,failure_rate,delay_rate");
    for spawn in BRANCHES {
        for gamma in [
            1.0 / 0.15,
            1.0,
            0.15,
            0.05,
            0.02,
            0.01,
            0.005,
            0.002,
            0.001,
        ] {
            let (f, d) = rate(&world, gamma, spawn, n, 7);
            println!("{},{gamma},{f},{d}", spawn.name());
        }
    }
}
