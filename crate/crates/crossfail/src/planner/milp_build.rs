//! The planning-phase optimization: maximize the minimum L1 distance between
//! the planned ego positions and every failure-sample intruder position,
//! over all future timesteps, subject to Euler dynamics, lane membership,
//! velocity/acceleration boxes, mean-speed limits, and the terminal region.
//!
//! Maximizing a minimum of absolute values is not LP-representable, so each
//! |dx| (and |dy|) that can change sign over the step's reachable box gets
//! one binary selecting its orthant with big-M deactivation; sign-fixed
//! terms collapse to affine expressions. Lane membership over the
//! approach / intersection-box / exit union uses a monotone two-binary phase
//! chain per step, fixed wherever reachability already decides the phase.
//! All big-M constants come from per-step reachability intervals, capped by
//! the map diameter.

use serde::{Deserialize, Serialize};

use crate::sim::{Branch, VehicleState, WorldGeometry, HORIZON};
use crate::solver::{LinearProgram, MilpProblem, Row, Sense, SolveResult, Status};

use super::failure_set::FailureSampleSet;
use super::kalman::PlannerError;

/// Trajectory-optimizer limits (signs given for the forward direction; the
/// builder orients them per ego destination).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlanLimits {
    pub vel_forward_max: f64,
    pub vel_retro_max: f64,
    pub acc_x_forward: f64,
    pub acc_y_forward: f64,
    pub acc_retro: f64,
    pub mean_vel_x: f64,
    pub mean_vel_y: f64,
    pub terminal_clearance: f64,
}

impl Default for PlanLimits {
    fn default() -> Self {
        PlanLimits {
            vel_forward_max: 0.5,
            vel_retro_max: 1e-3,
            acc_x_forward: 0.1,
            acc_y_forward: 1.0,
            acc_retro: 0.2,
            mean_vel_x: 0.4,
            mean_vel_y: 0.3,
            terminal_clearance: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    xlo: f64,
    xhi: f64,
    ylo: f64,
    yhi: f64,
}

impl Rect {
    fn intersects(&self, x: (f64, f64), y: (f64, f64)) -> bool {
        x.1 >= self.xlo - 1e-12 && x.0 <= self.xhi + 1e-12 && y.1 >= self.ylo - 1e-12 && y.0 <= self.yhi + 1e-12
    }
}

/// Lane region of an ego journey (spawn South): approach rectangle, the
/// intersection box, and the destination rectangle; plus the terminal
/// region.
fn ego_region(world: &WorldGeometry, dest: Branch, clearance: f64) -> (Rect, Rect, Rect, Rect) {
    let w = world.lane_width;
    let l = world.branch_length;
    let approach = Rect {
        xlo: 0.0,
        xhi: w,
        ylo: -l,
        yhi: -w,
    };
    let bx = Rect {
        xlo: -w,
        xhi: w,
        ylo: -w,
        yhi: w,
    };
    let exit = match dest {
        Branch::North => Rect {
            xlo: 0.0,
            xhi: w,
            ylo: w,
            yhi: l,
        },
        Branch::East => Rect {
            xlo: w,
            xhi: l,
            ylo: -w,
            yhi: 0.0,
        },
        Branch::West => Rect {
            xlo: -l,
            xhi: -w,
            ylo: 0.0,
            yhi: w,
        },
        Branch::South => Rect {
            // not a legal ego destination; degenerate rect keeps the type total
            xlo: -w,
            xhi: 0.0,
            ylo: -l,
            yhi: -w,
        },
    };
    let q = match dest {
        Branch::North => Rect {
            ylo: w + clearance,
            ..exit
        },
        Branch::East => Rect {
            xlo: w + clearance,
            ..exit
        },
        Branch::West => Rect {
            xhi: -(w + clearance),
            ..exit
        },
        Branch::South => exit,
    };
    (approach, bx, exit, q)
}

/// Velocity and acceleration boxes oriented for the ego journey.
fn oriented_bounds(dest: Branch, lim: &PlanLimits) -> ((f64, f64), (f64, f64), (f64, f64), (f64, f64)) {
    let vy = (-lim.vel_retro_max, lim.vel_forward_max);
    let ay = (-lim.acc_retro, lim.acc_y_forward);
    let (vx, ax) = match dest {
        Branch::East => (
            (-lim.vel_retro_max, lim.vel_forward_max),
            (-lim.acc_retro, lim.acc_x_forward),
        ),
        Branch::West => (
            (-lim.vel_forward_max, lim.vel_retro_max),
            (-lim.acc_x_forward, lim.acc_retro),
        ),
        // straight north: x motion is lateral only
        _ => (
            (-lim.vel_retro_max, lim.vel_retro_max),
            (-lim.acc_retro, lim.acc_retro),
        ),
    };
    (vx, vy, ax, ay)
}

/// A planned open-loop trajectory.
#[derive(Debug, Clone)]
pub struct PlanSolution {
    /// Worst-case L1 separation achieved by the plan.
    pub objective: f64,
    /// `(x, y, vx, vy)` for each future step `t+1..=23`.
    pub states: Vec<[f64; 4]>,
    /// `(ax, ay)` per future step; `actions[0]` is the next action.
    pub actions: Vec<[f64; 2]>,
    pub status: Status,
}

enum AxisTerm {
    /// diff keeps one sign over the reachable box: |d| = sign * (pos - f)
    Fixed { sign: f64 },
    /// aux variable index + binary index
    Split { z: usize, b: usize, big_m: f64 },
}

struct TermRef {
    step: usize,
    fx: f64,
    fy: f64,
    x: AxisTerm,
    y: AxisTerm,
}

pub struct PlanProblem {
    pub milp: MilpProblem,
    horizon: usize,
    /// var offsets: states/actions fixed layout, aux appended after
    base_vars: usize,
}

impl PlanProblem {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Interprets a solver result as a plan.
    pub fn extract(&self, result: &SolveResult) -> Option<PlanSolution> {
        if result.x.len() < self.base_vars {
            return None;
        }
        let h = self.horizon;
        let x = &result.x;
        let states = (0..h)
            .map(|i| [x[i], x[h + i], x[2 * h + i], x[3 * h + i]])
            .collect();
        let actions = (0..h).map(|i| [x[4 * h + i], x[5 * h + i]]).collect();
        Some(PlanSolution {
            objective: x[6 * h],
            states,
            actions,
            status: result.status,
        })
    }
}

/// Builds the planning MILP at timestep `t` for the current (exactly
/// observed) ego state and the selected failure trajectories.
pub fn build_plan_milp(
    world: &WorldGeometry,
    ego: &VehicleState,
    dest: Branch,
    fset: &FailureSampleSet,
    t: usize,
    lim: &PlanLimits,
) -> Result<PlanProblem, PlannerError> {
    if fset.trajectories.is_empty() {
        return Err(PlannerError::EmptyFailureSet);
    }
    let h = HORIZON - t;
    assert!(h >= 1, "planning needs at least one future step");
    let (approach, bx, exit, q) = ego_region(world, dest, lim.terminal_clearance);
    let (vxb, vyb, axb, ayb) = oriented_bounds(dest, lim);
    let m_map = 2.0 * (world.branch_length + world.lane_width);

    // union bounding box of the lane region
    let union_x = (
        approach.xlo.min(bx.xlo).min(exit.xlo),
        approach.xhi.max(bx.xhi).max(exit.xhi),
    );
    let union_y = (
        approach.ylo.min(bx.ylo).min(exit.ylo),
        approach.yhi.max(bx.yhi).max(exit.yhi),
    );

    // per-step reachability intervals (positions clipped to the union box)
    let mut reach_x = Vec::with_capacity(h);
    let mut reach_y = Vec::with_capacity(h);
    let mut rvx = (ego.vx, ego.vx);
    let mut rvy = (ego.vy, ego.vy);
    let mut rx = (ego.x, ego.x);
    let mut ry = (ego.y, ego.y);
    for _ in 0..h {
        // position increment v + a/2 = (v_prev + v_next)/2, so the velocity
        // boxes tighten reachability far more than the acceleration boxes
        let vx_next = ((rvx.0 + axb.0).max(vxb.0), (rvx.1 + axb.1).min(vxb.1));
        let vy_next = ((rvy.0 + ayb.0).max(vyb.0), (rvy.1 + ayb.1).min(vyb.1));
        rx = (
            (rx.0 + 0.5 * (rvx.0 + vx_next.0)).max(union_x.0),
            (rx.1 + 0.5 * (rvx.1 + vx_next.1)).min(union_x.1),
        );
        ry = (
            (ry.0 + 0.5 * (rvy.0 + vy_next.0)).max(union_y.0),
            (ry.1 + 0.5 * (rvy.1 + vy_next.1)).min(union_y.1),
        );
        rvx = vx_next;
        rvy = vy_next;
        reach_x.push(rx);
        reach_y.push(ry);
    }

    // variable layout
    let base_vars = 6 * h + 1 + 2 * h; // states, actions, m, mean-|v| aux
    let mut objective = vec![0.0; base_vars];
    objective[6 * h] = 1.0; // maximize m
    let mut bounds: Vec<(f64, f64)> = Vec::with_capacity(base_vars + 4 * h);
    for i in 0..h {
        let _ = i;
        bounds.push((f64::NEG_INFINITY, f64::INFINITY)); // x_i, tightened below
    }
    for _ in 0..h {
        bounds.push((f64::NEG_INFINITY, f64::INFINITY)); // y_i
    }
    for _ in 0..h {
        bounds.push(vxb);
    }
    for _ in 0..h {
        bounds.push(vyb);
    }
    for _ in 0..h {
        bounds.push(axb);
    }
    for _ in 0..h {
        bounds.push(ayb);
    }
    bounds.push((0.0, f64::INFINITY)); // m, upper bound set after pruning
    let wmax_x = vxb.0.abs().max(vxb.1.abs());
    let wmax_y = vyb.0.abs().max(vyb.1.abs());
    for _ in 0..h {
        bounds.push((0.0, wmax_x)); // wx_i
    }
    for _ in 0..h {
        bounds.push((0.0, wmax_y)); // wy_i
    }
    let xv = |i: usize| i; // state index helpers, i in 0..h
    let yv = |i: usize| h + i;
    let vxv = |i: usize| 2 * h + i;
    let vyv = |i: usize| 3 * h + i;
    let axv = |i: usize| 4 * h + i;
    let ayv = |i: usize| 5 * h + i;
    let mv = 6 * h;
    let wxv = |i: usize| 6 * h + 1 + i;
    let wyv = |i: usize| 6 * h + 1 + h + i;

    let mut rows: Vec<Row> = Vec::new();

    // dynamics
    for i in 0..h {
        if i == 0 {
            rows.push(Row {
                coeffs: vec![(xv(0), 1.0), (axv(0), -0.5)],
                sense: Sense::Eq,
                rhs: ego.x + ego.vx,
            });
            rows.push(Row {
                coeffs: vec![(yv(0), 1.0), (ayv(0), -0.5)],
                sense: Sense::Eq,
                rhs: ego.y + ego.vy,
            });
            rows.push(Row {
                coeffs: vec![(vxv(0), 1.0), (axv(0), -1.0)],
                sense: Sense::Eq,
                rhs: ego.vx,
            });
            rows.push(Row {
                coeffs: vec![(vyv(0), 1.0), (ayv(0), -1.0)],
                sense: Sense::Eq,
                rhs: ego.vy,
            });
        } else {
            rows.push(Row {
                coeffs: vec![(xv(i), 1.0), (xv(i - 1), -1.0), (vxv(i - 1), -1.0), (axv(i), -0.5)],
                sense: Sense::Eq,
                rhs: 0.0,
            });
            rows.push(Row {
                coeffs: vec![(yv(i), 1.0), (yv(i - 1), -1.0), (vyv(i - 1), -1.0), (ayv(i), -0.5)],
                sense: Sense::Eq,
                rhs: 0.0,
            });
            rows.push(Row {
                coeffs: vec![(vxv(i), 1.0), (vxv(i - 1), -1.0), (axv(i), -1.0)],
                sense: Sense::Eq,
                rhs: 0.0,
            });
            rows.push(Row {
                coeffs: vec![(vyv(i), 1.0), (vyv(i - 1), -1.0), (ayv(i), -1.0)],
                sense: Sense::Eq,
                rhs: 0.0,
            });
        }
    }

    // mean-|velocity| limits
    for i in 0..h {
        rows.push(Row {
            coeffs: vec![(wxv(i), 1.0), (vxv(i), -1.0)],
            sense: Sense::Ge,
            rhs: 0.0,
        });
        rows.push(Row {
            coeffs: vec![(wxv(i), 1.0), (vxv(i), 1.0)],
            sense: Sense::Ge,
            rhs: 0.0,
        });
        rows.push(Row {
            coeffs: vec![(wyv(i), 1.0), (vyv(i), -1.0)],
            sense: Sense::Ge,
            rhs: 0.0,
        });
        rows.push(Row {
            coeffs: vec![(wyv(i), 1.0), (vyv(i), 1.0)],
            sense: Sense::Ge,
            rhs: 0.0,
        });
    }
    rows.push(Row {
        coeffs: (0..h).map(|i| (wxv(i), 1.0)).collect(),
        sense: Sense::Le,
        rhs: lim.mean_vel_x * h as f64,
    });
    rows.push(Row {
        coeffs: (0..h).map(|i| (wyv(i), 1.0)).collect(),
        sense: Sense::Le,
        rhs: lim.mean_vel_y * h as f64,
    });

    // lane membership: per-step phase (approach | box | exit), with
    // reachability fixing and a monotone chain on the free binaries
    let mut binaries: Vec<usize> = Vec::new();
    let mut var_count = base_vars;
    let mut q_vars: Vec<Option<usize>> = Vec::with_capacity(h); // None + fixed value below
    let mut q_fixed: Vec<Option<f64>> = Vec::with_capacity(h);
    let mut r_vars: Vec<Option<usize>> = Vec::with_capacity(h);
    let mut r_fixed: Vec<Option<f64>> = Vec::with_capacity(h);
    for i in 0..h {
        let rxi = reach_x[i];
        let ryi = reach_y[i];
        // q = 1 <=> out of the approach rect (in box or exit)
        let must_be_in_a = !bx.intersects(rxi, ryi) && !exit.intersects(rxi, ryi);
        let cannot_be_in_a = !approach.intersects(rxi, ryi);
        let (qv, qf) = if must_be_in_a {
            (None, Some(0.0))
        } else if cannot_be_in_a {
            (None, Some(1.0))
        } else {
            let v = var_count;
            var_count += 1;
            bounds.push((0.0, 1.0));
            objective.push(0.0);
            binaries.push(v);
            (Some(v), None)
        };
        // r = 1 <=> in the exit rect
        let cannot_be_in_c = !exit.intersects(rxi, ryi);
        let must_be_in_c = !approach.intersects(rxi, ryi) && !bx.intersects(rxi, ryi);
        let (rv, rf) = if cannot_be_in_c {
            (None, Some(0.0))
        } else if must_be_in_c {
            (None, Some(1.0))
        } else {
            let v = var_count;
            var_count += 1;
            bounds.push((0.0, 1.0));
            objective.push(0.0);
            binaries.push(v);
            (Some(v), None)
        };
        q_vars.push(qv);
        q_fixed.push(qf);
        r_vars.push(rv);
        r_fixed.push(rf);
    }

    // helper emitting `expr(pos) within rect side` gated by up to two
    // binary activations: sum of gate coefficients relaxes the row
    let gate_rows = |rows: &mut Vec<Row>,
                     var: usize,
                     lo: f64,
                     hi: f64,
                     gates: &[(usize, f64, f64)]| {
        // gates: (binary var, coeff, constant) meaning slack = sum coeff*b + const
        // row: pos >= lo - M*slack ; pos <= hi + M*slack
        let mut lo_coeffs = vec![(var, 1.0)];
        let mut hi_coeffs = vec![(var, 1.0)];
        let mut lo_rhs = lo;
        let mut hi_rhs = hi;
        for &(b, coeff, cons) in gates {
            lo_coeffs.push((b, m_map * coeff));
            hi_coeffs.push((b, -m_map * coeff));
            lo_rhs -= m_map * cons;
            hi_rhs += m_map * cons;
        }
        rows.push(Row {
            coeffs: lo_coeffs,
            sense: Sense::Ge,
            rhs: lo_rhs,
        });
        rows.push(Row {
            coeffs: hi_coeffs,
            sense: Sense::Le,
            rhs: hi_rhs,
        });
    };

    for i in 0..h {
        let fixed_phase = match (q_fixed[i], r_fixed[i]) {
            (Some(qf), Some(rf)) => Some((qf, rf)),
            _ => None,
        };
        if let Some((qf, rf)) = fixed_phase {
            // phase decided: intersect the position variable bounds directly
            let rect = if rf == 1.0 {
                exit
            } else if qf == 1.0 {
                bx
            } else {
                approach
            };
            bounds[xv(i)] = (
                bounds[xv(i)].0.max(rect.xlo),
                bounds[xv(i)].1.min(rect.xhi),
            );
            bounds[yv(i)] = (
                bounds[yv(i)].0.max(rect.ylo),
                bounds[yv(i)].1.min(rect.yhi),
            );
            continue;
        }
        // at least one phase binary is free: emit gated membership rows.
        // slack terms: approach active when q=0 (slack = q); box active when
        // q=1, r=0 (slack = (1-q) + r); exit active when r=1 (slack = 1-r).
        let qg: Vec<(usize, f64, f64)> = match (q_vars[i], q_fixed[i]) {
            (Some(v), _) => vec![(v, 1.0, 0.0)],
            (None, Some(f)) => vec![(usize::MAX, 0.0, f)],
            _ => unreachable!(),
        };
        let filter_gates = |list: Vec<(usize, f64, f64)>| -> Vec<(usize, f64, f64)> {
            list.into_iter()
                .map(|(v, c, k)| if v == usize::MAX { (0, 0.0, k) } else { (v, c, k) })
                .collect()
        };
        // approach: slack q
        let ga = filter_gates(qg.clone());
        gate_rows(&mut rows, xv(i), approach.xlo, approach.xhi, &ga);
        gate_rows(&mut rows, yv(i), approach.ylo, approach.yhi, &ga);
        // box: slack (1 - q) + r  ->  gates: (q, -1, +1), (r, +1, 0)
        let mut gb: Vec<(usize, f64, f64)> = Vec::new();
        match (q_vars[i], q_fixed[i]) {
            (Some(v), _) => {
                gb.push((v, -1.0, 1.0));
            }
            (None, Some(f)) => gb.push((0, 0.0, 1.0 - f)),
            _ => unreachable!(),
        }
        match (r_vars[i], r_fixed[i]) {
            (Some(v), _) => gb.push((v, 1.0, 0.0)),
            (None, Some(f)) => gb.push((0, 0.0, f)),
            _ => unreachable!(),
        }
        gate_rows(&mut rows, xv(i), bx.xlo, bx.xhi, &gb);
        gate_rows(&mut rows, yv(i), bx.ylo, bx.yhi, &gb);
        // exit: slack (1 - r)  ->  gate (r, -1, +1)
        let mut gc: Vec<(usize, f64, f64)> = Vec::new();
        match (r_vars[i], r_fixed[i]) {
            (Some(v), _) => gc.push((v, -1.0, 1.0)),
            (None, Some(f)) => gc.push((0, 0.0, 1.0 - f)),
            _ => unreachable!(),
        }
        gate_rows(&mut rows, xv(i), exit.xlo, exit.xhi, &gc);
        gate_rows(&mut rows, yv(i), exit.ylo, exit.yhi, &gc);
        // r <= q
        match (r_vars[i], q_vars[i]) {
            (Some(rv), Some(qv)) => rows.push(Row {
                coeffs: vec![(rv, 1.0), (qv, -1.0)],
                sense: Sense::Le,
                rhs: 0.0,
            }),
            (Some(rv), None) => rows.push(Row {
                coeffs: vec![(rv, 1.0)],
                sense: Sense::Le,
                rhs: q_fixed[i].unwrap(),
            }),
            _ => {}
        }
    }
    // monotone chains
    for i in 1..h {
        let pair = |a: (Option<usize>, Option<f64>), b: (Option<usize>, Option<f64>)| -> Option<Row> {
            match (a, b) {
                ((Some(va), _), (Some(vb), _)) => Some(Row {
                    coeffs: vec![(va, 1.0), (vb, -1.0)],
                    sense: Sense::Le,
                    rhs: 0.0,
                }),
                ((Some(va), _), (None, Some(fb))) => Some(Row {
                    coeffs: vec![(va, 1.0)],
                    sense: Sense::Le,
                    rhs: fb,
                }),
                ((None, Some(fa)), (Some(vb), _)) => Some(Row {
                    coeffs: vec![(vb, 1.0)],
                    sense: Sense::Ge,
                    rhs: fa,
                }),
                _ => None,
            }
        };
        if let Some(row) = pair((q_vars[i - 1], q_fixed[i - 1]), (q_vars[i], q_fixed[i])) {
            rows.push(row);
        }
        if let Some(row) = pair((r_vars[i - 1], r_fixed[i - 1]), (r_vars[i], r_fixed[i])) {
            rows.push(row);
        }
    }
    // terminal: in the destination region
    {
        let i = h - 1;
        bounds[xv(i)] = (bounds[xv(i)].0.max(q.xlo), bounds[xv(i)].1.min(q.xhi));
        bounds[yv(i)] = (bounds[yv(i)].0.max(q.ylo), bounds[yv(i)].1.min(q.yhi));
        if let Some(rv) = r_vars[i] {
            rows.push(Row {
                coeffs: vec![(rv, 1.0)],
                sense: Sense::Eq,
                rhs: 1.0,
            });
        }
        // terminal region unreachable under reach intervals: infeasible later
    }

    // separation terms: prune dominated ones, fix signs, encode the rest
    let n = fset.trajectories.len();
    let mut term_lo = vec![vec![0.0f64; n]; h];
    let mut term_hi = vec![vec![0.0f64; n]; h];
    let mut upper = f64::INFINITY;
    for i in 0..h {
        for (j, traj) in fset.trajectories.iter().enumerate() {
            let f = traj[i + 1]; // traj[0] is the state at plan time t
            let (fx, fy) = (f[0], f[1]);
            let dxlo = reach_x[i].0 - fx;
            let dxhi = reach_x[i].1 - fx;
            let dylo = reach_y[i].0 - fy;
            let dyhi = reach_y[i].1 - fy;
            let axmin = if dxlo <= 0.0 && dxhi >= 0.0 {
                0.0
            } else {
                dxlo.abs().min(dxhi.abs())
            };
            let axmax = dxlo.abs().max(dxhi.abs());
            let aymin = if dylo <= 0.0 && dyhi >= 0.0 {
                0.0
            } else {
                dylo.abs().min(dyhi.abs())
            };
            let aymax = dylo.abs().max(dyhi.abs());
            term_lo[i][j] = axmin + aymin;
            term_hi[i][j] = axmax + aymax;
            upper = upper.min(term_hi[i][j]);
        }
    }
    bounds[mv] = (0.0, upper.max(0.0));

    let mut terms: Vec<TermRef> = Vec::new();
    for i in 0..h {
        for (j, traj) in fset.trajectories.iter().enumerate() {
            if term_lo[i][j] >= upper - 1e-12 && term_lo[i][j] > 0.0 {
                continue; // never the binding minimum
            }
            let f = traj[i + 1];
            let (fx, fy) = (f[0], f[1]);
            let enc = |lo: f64, hi: f64, fv: f64| -> AxisTerm {
                let dlo = lo - fv;
                let dhi = hi - fv;
                if dlo >= -1e-12 {
                    AxisTerm::Fixed { sign: 1.0 }
                } else if dhi <= 1e-12 {
                    AxisTerm::Fixed { sign: -1.0 }
                } else {
                    AxisTerm::Split {
                        z: 0,
                        b: 0,
                        big_m: dlo.abs().max(dhi.abs()).min(m_map),
                    }
                }
            };
            let mut xterm = enc(reach_x[i].0, reach_x[i].1, fx);
            let mut yterm = enc(reach_y[i].0, reach_y[i].1, fy);
            if let AxisTerm::Split { z, b, .. } = &mut xterm {
                *z = var_count;
                var_count += 1;
                *b = var_count;
                var_count += 1;
            }
            if let AxisTerm::Split { z, b, .. } = &mut yterm {
                *z = var_count;
                var_count += 1;
                *b = var_count;
                var_count += 1;
            }
            terms.push(TermRef {
                step: i,
                fx,
                fy,
                x: xterm,
                y: yterm,
            });
        }
    }
    // allocate aux bounds/objective entries and rows
    for term in &terms {
        for (axis_var, axis, fv) in [(xv(term.step), &term.x, term.fx), (yv(term.step), &term.y, term.fy)] {
            if let AxisTerm::Split { z, b, big_m } = axis {
                while bounds.len() <= *z.max(b) {
                    bounds.push((0.0, 1.0));
                    objective.push(0.0);
                }
                bounds[*z] = (0.0, *big_m);
                bounds[*b] = (0.0, 1.0);
                objective[*z] = 0.0;
                objective[*b] = 0.0;
                binaries.push(*b);
                // z >= d, z >= -d, z <= d + 2M(1-b), z <= -d + 2Mb, d = pos - fv
                rows.push(Row {
                    coeffs: vec![(*z, 1.0), (axis_var, -1.0)],
                    sense: Sense::Ge,
                    rhs: -fv,
                });
                rows.push(Row {
                    coeffs: vec![(*z, 1.0), (axis_var, 1.0)],
                    sense: Sense::Ge,
                    rhs: fv,
                });
                rows.push(Row {
                    coeffs: vec![(*z, 1.0), (axis_var, -1.0), (*b, 2.0 * big_m)],
                    sense: Sense::Le,
                    rhs: -fv + 2.0 * big_m,
                });
                rows.push(Row {
                    coeffs: vec![(*z, 1.0), (axis_var, 1.0), (*b, -2.0 * big_m)],
                    sense: Sense::Le,
                    rhs: fv,
                });
            }
        }
        // m <= |dx| + |dy|
        let mut coeffs = vec![(mv, 1.0)];
        let mut rhs = 0.0;
        match &term.x {
            AxisTerm::Fixed { sign } => {
                coeffs.push((xv(term.step), -sign));
                rhs += -sign * term.fx;
            }
            AxisTerm::Split { z, .. } => coeffs.push((*z, -1.0)),
        }
        match &term.y {
            AxisTerm::Fixed { sign } => {
                coeffs.push((yv(term.step), -sign));
                rhs += -sign * term.fy;
            }
            AxisTerm::Split { z, .. } => coeffs.push((*z, -1.0)),
        }
        rows.push(Row {
            coeffs,
            sense: Sense::Le,
            rhs,
        });
    }

    // position variable bounds from reachability
    for i in 0..h {
        bounds[xv(i)] = (
            bounds[xv(i)].0.max(reach_x[i].0),
            bounds[xv(i)].1.min(reach_x[i].1),
        );
        bounds[yv(i)] = (
            bounds[yv(i)].0.max(reach_y[i].0),
            bounds[yv(i)].1.min(reach_y[i].1),
        );
    }

    debug_assert_eq!(bounds.len(), var_count);
    debug_assert_eq!(objective.len(), var_count);
    let lp = LinearProgram {
        maximize: true,
        objective,
        var_bounds: bounds,
        rows,
    };
    Ok(PlanProblem {
        milp: MilpProblem {
            lp,
            binary_vars: binaries,
        },
        horizon: h,
        base_vars,
    })
}

/// Re-audits a plan against the original inputs: dynamics, boxes, lane
/// membership, terminal region, and the max-min objective. Returns the
/// largest violation and the true objective of the trajectory.
pub fn audit_plan(
    world: &WorldGeometry,
    ego: &VehicleState,
    dest: Branch,
    fset: &FailureSampleSet,
    lim: &PlanLimits,
    plan: &PlanSolution,
) -> (f64, f64) {
    let h = plan.states.len();
    let (approach, bx, exit, q) = ego_region(world, dest, lim.terminal_clearance);
    let (vxb, vyb, axb, ayb) = oriented_bounds(dest, lim);
    let mut viol = 0.0f64;
    let mut prev = [ego.x, ego.y, ego.vx, ego.vy];
    let mut sum_wx = 0.0;
    let mut sum_wy = 0.0;
    for i in 0..h {
        let s = plan.states[i];
        let a = plan.actions[i];
        viol = viol.max((s[0] - (prev[0] + prev[2] + 0.5 * a[0])).abs());
        viol = viol.max((s[1] - (prev[1] + prev[3] + 0.5 * a[1])).abs());
        viol = viol.max((s[2] - (prev[2] + a[0])).abs());
        viol = viol.max((s[3] - (prev[3] + a[1])).abs());
        viol = viol.max(vxb.0 - s[2]).max(s[2] - vxb.1);
        viol = viol.max(vyb.0 - s[3]).max(s[3] - vyb.1);
        viol = viol.max(axb.0 - a[0]).max(a[0] - axb.1);
        viol = viol.max(ayb.0 - a[1]).max(a[1] - ayb.1);
        let in_rect = |r: &Rect| -> f64 {
            (r.xlo - s[0])
                .max(s[0] - r.xhi)
                .max(r.ylo - s[1])
                .max(s[1] - r.yhi)
                .max(0.0)
        };
        let lane = in_rect(&approach).min(in_rect(&bx)).min(in_rect(&exit));
        viol = viol.max(lane);
        sum_wx += s[2].abs();
        sum_wy += s[3].abs();
        prev = s;
    }
    viol = viol.max(sum_wx / h as f64 - lim.mean_vel_x);
    viol = viol.max(sum_wy / h as f64 - lim.mean_vel_y);
    let last = plan.states[h - 1];
    viol = viol
        .max(q.xlo - last[0])
        .max(last[0] - q.xhi)
        .max(q.ylo - last[1])
        .max(last[1] - q.yhi);
    // true objective
    let mut min_sep = f64::INFINITY;
    for i in 0..h {
        for traj in &fset.trajectories {
            let f = traj[i + 1];
            let sep = (plan.states[i][0] - f[0]).abs() + (plan.states[i][1] - f[1]).abs();
            min_sep = min_sep.min(sep);
        }
    }
    (viol.max(0.0), min_sep)
}
