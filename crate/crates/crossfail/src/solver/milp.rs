//! Best-first branch and bound over LP relaxations, for problems whose
//! integer variables are all binary.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::lp::{LinearProgram, LpError, SimplexSolver, SolveResult, Status};

/// A linear program plus a set of variable indices restricted to {0, 1}.
#[derive(Debug, Clone)]
pub struct MilpProblem {
    pub lp: LinearProgram,
    pub binary_vars: Vec<usize>,
}

pub const INT_TOL: f64 = 1e-6;
pub const NODE_CAP: usize = 10_000;
const BOUND_EPS: f64 = 1e-9;

struct Node {
    /// Relaxation objective of the parent (max-normalized), an upper bound.
    bound: f64,
    id: u64,
    fixings: Vec<(usize, f64, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // best bound first; FIFO on ties for determinism
        self.bound
            .partial_cmp(&other.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.id.cmp(&self.id))
    }
}

fn most_fractional(binaries: &[usize], x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &j in binaries {
        let frac = x[j] - x[j].floor();
        let dist = (frac.min(1.0 - frac)).abs();
        if dist > INT_TOL {
            let score = (frac - 0.5).abs();
            match best {
                Some((_, s)) if score >= s => {}
                _ => best = Some((j, score)),
            }
        }
    }
    best.map(|(j, _)| j)
}

/// Solves a binary MILP by branch and bound. Returns the best incumbent with
/// `Status::IterationLimit` if the node cap is reached before the tree is
/// exhausted; `Status::Optimal` incumbents are proved optimal.
pub fn solve_milp(p: &MilpProblem) -> Result<SolveResult, LpError> {
    let solver = SimplexSolver::new(&p.lp)?;
    let maximize = p.lp.maximize;
    let norm = |v: f64| if maximize { v } else { -v };

    let mut incumbent: Option<(Vec<f64>, f64)> = None; // (x, normalized obj)
    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    let mut next_id = 0u64;
    let mut nodes_solved = 0usize;
    let mut hit_cap = false;

    // binary bounds always apply, on top of any tighter user bounds
    let root_fix: Vec<(usize, f64, f64)> =
        p.binary_vars.iter().map(|&j| (j, 0.0, 1.0)).collect();
    heap.push(Node {
        bound: f64::INFINITY,
        id: next_id,
        fixings: root_fix,
    });
    next_id += 1;

    while let Some(node) = heap.pop() {
        if let Some((_, inc)) = &incumbent {
            if node.bound <= *inc + BOUND_EPS {
                continue;
            }
        }
        if nodes_solved >= NODE_CAP {
            hit_cap = true;
            break;
        }
        nodes_solved += 1;

        let rel = solver.solve_with_bounds(&node.fixings);
        match rel.status {
            Status::Infeasible => continue,
            Status::Unbounded => {
                // an unbounded relaxation of a binary problem means the
                // continuous part is unbounded regardless of the binaries
                return Ok(rel);
            }
            Status::IterationLimit => continue,
            Status::Optimal => {}
        }
        let bound = norm(rel.objective);
        if let Some((_, inc)) = &incumbent {
            if bound <= *inc + BOUND_EPS {
                continue;
            }
        }

        match most_fractional(&p.binary_vars, &rel.x) {
            None => {
                // integral: candidate incumbent
                if incumbent.as_ref().map_or(true, |(_, inc)| bound > *inc) {
                    incumbent = Some((rel.x.clone(), bound));
                }
            }
            Some(jb) => {
                // diving heuristic at the root: round and repair an incumbent
                if nodes_solved == 1 {
                    if let Some(cand) = dive(&solver, p, &node.fixings, &rel.x) {
                        let cb = norm(cand.1);
                        if incumbent.as_ref().map_or(true, |(_, inc)| cb > *inc) {
                            incumbent = Some((cand.0, cb));
                        }
                    }
                }
                for &(lo, hi) in &[(0.0, 0.0), (1.0, 1.0)] {
                    let mut fix = node.fixings.clone();
                    fix.push((jb, lo, hi));
                    heap.push(Node {
                        bound,
                        id: next_id,
                        fixings: fix,
                    });
                    next_id += 1;
                }
            }
        }
    }

    let status = if hit_cap {
        Status::IterationLimit
    } else if incumbent.is_some() {
        Status::Optimal
    } else {
        Status::Infeasible
    };
    Ok(match incumbent {
        Some((x, inc)) => {
            let objective = if maximize { inc } else { -inc };
            SolveResult {
                status,
                x,
                objective,
                duals: Vec::new(),
                reduced_costs: Vec::new(),
            }
        }
        None => SolveResult {
            status,
            x: Vec::new(),
            objective: f64::NAN,
            duals: Vec::new(),
            reduced_costs: Vec::new(),
        },
    })
}

/// Rounds every binary to the nearest integer and re-solves with them fixed;
/// a feasible result seeds the incumbent so pruning starts early.
fn dive(
    solver: &SimplexSolver,
    p: &MilpProblem,
    fixings: &[(usize, f64, f64)],
    relax_x: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let mut fix = fixings.to_vec();
    for &j in &p.binary_vars {
        let v = if relax_x[j] >= 0.5 { 1.0 } else { 0.0 };
        fix.push((j, v, v));
    }
    let r = solver.solve_with_bounds(&fix);
    if r.status == Status::Optimal {
        Some((r.x, r.objective))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::lp::{Row, Sense};

    fn knapsack() -> MilpProblem {
        // max 3a + 2b, a + b <= 1, binary
        MilpProblem {
            lp: LinearProgram {
                maximize: true,
                objective: vec![3.0, 2.0],
                var_bounds: vec![(0.0, 1.0), (0.0, 1.0)],
                rows: vec![Row {
                    coeffs: vec![(0, 1.0), (1, 1.0)],
                    sense: Sense::Le,
                    rhs: 1.0,
                }],
            },
            binary_vars: vec![0, 1],
        }
    }

    #[test]
    fn knapsack_picks_heavier_item() {
        let r = solve_milp(&knapsack()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.objective - 3.0).abs() < 1e-9);
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!(r.x[1].abs() < 1e-6);
    }

    #[test]
    fn integral_relaxation_returned_unchanged() {
        // relaxation optimum already lands on a binary vertex
        let p = MilpProblem {
            lp: LinearProgram {
                maximize: true,
                objective: vec![1.0, 1.0],
                var_bounds: vec![(0.0, 1.0), (0.0, 1.0)],
                rows: vec![],
            },
            binary_vars: vec![0, 1],
        };
        let r = solve_milp(&p).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.objective - 2.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_binary_problem() {
        // a + b = 0.5 has no binary solution
        let p = MilpProblem {
            lp: LinearProgram {
                maximize: true,
                objective: vec![1.0, 1.0],
                var_bounds: vec![(0.0, 1.0), (0.0, 1.0)],
                rows: vec![Row {
                    coeffs: vec![(0, 1.0), (1, 1.0)],
                    sense: Sense::Eq,
                    rhs: 0.5,
                }],
            },
            binary_vars: vec![0, 1],
        };
        let r = solve_milp(&p).unwrap();
        assert_eq!(r.status, Status::Infeasible);
    }

    #[test]
    fn mixed_continuous_binary() {
        // max 2y + x with y binary, x in [0, 10], x <= 3 + 4y
        let p = MilpProblem {
            lp: LinearProgram {
                maximize: true,
                objective: vec![1.0, 2.0],
                var_bounds: vec![(0.0, 10.0), (0.0, 1.0)],
                rows: vec![Row {
                    coeffs: vec![(0, 1.0), (1, -4.0)],
                    sense: Sense::Le,
                    rhs: 3.0,
                }],
            },
            binary_vars: vec![1],
        };
        let r = solve_milp(&p).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.objective - 9.0).abs() < 1e-9);
        assert!((r.x[0] - 7.0).abs() < 1e-6);
    }
}
