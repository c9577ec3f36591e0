//! Robust planner: failure-sample generation, the max-min separation MILP,
//! Kalman beliefs, and the two-phase closed-loop controller.

pub mod failure_set;
pub mod kalman;
pub mod milp_build;
pub mod rollout;

pub use failure_set::{generate_failure_set, place_on_route, FailureSampleSet};
pub use kalman::{BeliefFilter, FilterSource, PlannerError};
pub use milp_build::{audit_plan, build_plan_milp, PlanLimits, PlanProblem, PlanSolution};
pub use rollout::{
    log_csv_header, log_csv_row, policy_phase_action, run_robust_planner, Phase, PlannerConfig,
    RolloutLogRow, RolloutResult,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::sim::{step_planar, Branch, VehicleState, WorldGeometry, HORIZON};
    use crate::solver::{solve_milp, SimplexSolver, Status};

    fn world() -> WorldGeometry {
        WorldGeometry::build(0.04, 1.0).unwrap()
    }

    fn fset_with(positions: Vec<Vec<[f64; 2]>>, t: usize) -> FailureSampleSet {
        // positions[j][i] is the intruder position at time t+1+i
        let trajectories = positions
            .into_iter()
            .map(|ps| {
                let mut traj = vec![[0.0, 0.0, 0.0, 0.0]];
                traj.extend(ps.into_iter().map(|p| [p[0], p[1], 0.0, 0.0]));
                traj
            })
            .collect::<Vec<_>>();
        let robustness = vec![0.0; trajectories.len()];
        FailureSampleSet {
            generated_at: t,
            trajectories,
            robustness,
        }
    }

    fn ego_near_end(w: &WorldGeometry, h: usize, speed: f64) -> (VehicleState, usize) {
        // place the ego so only h steps remain
        let t = HORIZON - h;
        let route = w.route(Branch::South, Branch::North);
        let ego = VehicleState::on_route(route, 0.3, speed);
        (ego, t)
    }

    #[test]
    fn far_sample_makes_all_signs_fixed_and_plan_feasible() {
        let w = world();
        let (ego, t) = ego_near_end(&w, 4, 0.4);
        let fset = fset_with(vec![vec![[0.9, -0.9]; 4]], t);
        let problem =
            build_plan_milp(&w, &ego, Branch::North, &fset, t, &PlanLimits::default()).unwrap();
        // the far sample fixes every separation sign; only lane-phase
        // binaries (at most two per step) remain
        assert!(
            problem.milp.binary_vars.len() <= 8,
            "expected only phase binaries, got {}",
            problem.milp.binary_vars.len()
        );
        let res = solve_milp(&problem.milp).unwrap();
        assert_eq!(res.status, Status::Optimal);
        let plan = problem.extract(&res).unwrap();
        let (viol, true_obj) = audit_plan(
            &w,
            &ego,
            Branch::North,
            &fset,
            &PlanLimits::default(),
            &plan,
        );
        assert!(viol <= 1e-6, "constraint violation {viol}");
        assert!(
            (true_obj - plan.objective).abs() <= 1e-6,
            "objective {} vs audited {true_obj}",
            plan.objective
        );
    }

    #[test]
    fn toy_size_matches_orthant_enumeration() {
        let w = world();
        for (h, n, seed) in [(2usize, 1usize, 0u64), (3, 2, 1), (4, 2, 2)] {
            // close enough that the terminal region stays reachable under
            // the mean-velocity cap even at the two-step horizon
            let t = HORIZON - h;
            let route = w.route(Branch::South, Branch::North);
            let ego = VehicleState::on_route(route, 0.75, 0.45);
            let mut rng = stream(31337, "orthant", seed);
            use rand::Rng;
            let positions: Vec<Vec<[f64; 2]>> = (0..n)
                .map(|_| {
                    (0..h)
                        .map(|_| [rng.gen_range(-0.1..0.1), rng.gen_range(-0.8..0.2)])
                        .collect()
                })
                .collect();
            let fset = fset_with(positions, t);
            let problem =
                build_plan_milp(&w, &ego, Branch::North, &fset, t, &PlanLimits::default())
                    .unwrap();
            let res = solve_milp(&problem.milp).unwrap();
            assert_eq!(res.status, Status::Optimal);

            // brute force: every assignment of the problem's binaries
            let nb = problem.milp.binary_vars.len();
            assert!(nb <= 14, "toy problem grew {nb} binaries");
            let solver = SimplexSolver::new(&problem.milp.lp).unwrap();
            let mut best = f64::NEG_INFINITY;
            for mask in 0u64..(1 << nb) {
                let fixes: Vec<(usize, f64, f64)> = problem
                    .milp
                    .binary_vars
                    .iter()
                    .enumerate()
                    .map(|(bit, &j)| {
                        let v = if mask >> bit & 1 == 1 { 1.0 } else { 0.0 };
                        (j, v, v)
                    })
                    .collect();
                let r = solver.solve_with_bounds(&fixes);
                if r.status == Status::Optimal && r.objective > best {
                    best = r.objective;
                }
            }
            assert!(
                (best - res.objective).abs() <= 1e-6,
                "h={h} n={n}: enumeration {best} vs milp {}",
                res.objective
            );
        }
    }

    #[test]
    fn adding_a_failure_sample_never_raises_the_objective() {
        let w = world();
        let (ego, t) = ego_near_end(&w, 4, 0.4);
        let base = vec![vec![[0.02, -0.3]; 4]];
        let mut more = base.clone();
        more.push(vec![[0.02, 0.1]; 4]);
        let lim = PlanLimits::default();
        let p1 = build_plan_milp(&w, &ego, Branch::North, &fset_with(base, t), t, &lim).unwrap();
        let p2 = build_plan_milp(&w, &ego, Branch::North, &fset_with(more, t), t, &lim).unwrap();
        let r1 = solve_milp(&p1.milp).unwrap();
        let r2 = solve_milp(&p2.milp).unwrap();
        assert_eq!(r1.status, Status::Optimal);
        assert_eq!(r2.status, Status::Optimal);
        assert!(r2.objective <= r1.objective + 1e-9);
    }

    #[test]
    fn open_loop_execution_reproduces_planned_waypoints() {
        let w = world();
        let (ego, t) = ego_near_end(&w, 6, 0.4);
        let fset = fset_with(vec![vec![[0.5, 0.5]; 6]], t);
        let problem =
            build_plan_milp(&w, &ego, Branch::North, &fset, t, &PlanLimits::default()).unwrap();
        let res = solve_milp(&problem.milp).unwrap();
        let plan = problem.extract(&res).unwrap();
        let route = w.route(Branch::South, Branch::North);
        let mut state = ego;
        for (i, a) in plan.actions.iter().enumerate() {
            state = step_planar(route, &state, a[0], a[1]);
            let s = plan.states[i];
            assert!(
                (state.x - s[0]).abs() < 1e-9
                    && (state.y - s[1]).abs() < 1e-9
                    && (state.vx - s[2]).abs() < 1e-9
                    && (state.vy - s[3]).abs() < 1e-9,
                "step {i}: sim ({}, {}) vs plan ({}, {})",
                state.x,
                state.y,
                s[0],
                s[1]
            );
        }
    }

    #[test]
    fn full_horizon_plan_solves_quickly_with_default_limits() {
        // the production shape: t = 0, N failure samples crossing the box
        let w = world();
        let route = w.route(Branch::South, Branch::East);
        let ego = VehicleState::on_route(route, 0.45, 0.45);
        let mut rng = stream(555, "fullh", 0);
        use rand::Rng;
        let n = 8;
        let positions: Vec<Vec<[f64; 2]>> = (0..n)
            .map(|_| {
                let mut x: f64 = rng.gen_range(0.3..0.9);
                let speed: f64 = rng.gen_range(0.3..0.45);
                (0..HORIZON)
                    .map(|_| {
                        x -= speed;
                        [x.max(-1.0), 0.02]
                    })
                    .collect()
            })
            .collect();
        let fset = fset_with(positions, 0);
        let start = std::time::Instant::now();
        let problem =
            build_plan_milp(&w, &ego, Branch::East, &fset, 0, &PlanLimits::default()).unwrap();
        let res = solve_milp(&problem.milp).unwrap();
        let elapsed = start.elapsed();
        eprintln!(
            "full-horizon MILP: {} binaries, status {:?}, objective {:.4}, {:?}",
            problem.milp.binary_vars.len(),
            res.status,
            res.objective,
            elapsed
        );
        assert!(res.status == Status::Optimal || res.status == Status::IterationLimit);
        let plan = problem.extract(&res).unwrap();
        let (viol, true_obj) = audit_plan(
            &w,
            &ego,
            Branch::East,
            &fset,
            &PlanLimits::default(),
            &plan,
        );
        assert!(viol <= 1e-6, "violation {viol}");
        assert!((true_obj - plan.objective).abs() <= 1e-6);
    }
}
