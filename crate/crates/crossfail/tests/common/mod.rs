//! Shared oracles for integration tests: brute-force solvers kept
//! deliberately independent of the library's algorithms.

#![allow(dead_code)]

use crossfail::solver::{LinearProgram, MilpProblem, Row, Sense};
use rand::Rng;

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-11 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// All-vertex enumeration for a bounded LP: every choice of `n` active
/// constraints (rows as equalities plus variable bounds) is solved as a
/// square system and checked for feasibility. Equality rows are always
/// active. Returns the best objective and argmax, or None when no feasible
/// vertex exists.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<(f64, Vec<f64>)> {
    let n = lp.num_vars();
    #[derive(Clone)]
    enum Con {
        Rowc(usize),
        Lo(usize),
        Hi(usize),
    }
    let mut optional: Vec<Con> = Vec::new();
    let mut forced: Vec<Con> = Vec::new();
    for (i, row) in lp.rows.iter().enumerate() {
        if row.sense == Sense::Eq {
            forced.push(Con::Rowc(i));
        } else {
            optional.push(Con::Rowc(i));
        }
    }
    for j in 0..n {
        let (lo, hi) = lp.var_bounds[j];
        if lo.is_finite() {
            optional.push(Con::Lo(j));
        }
        if hi.is_finite() {
            optional.push(Con::Hi(j));
        }
    }
    if forced.len() > n {
        return None;
    }
    let need = n - forced.len();
    let mut best: Option<(f64, Vec<f64>)> = None;

    let mut combo = Vec::new();
    fn rec(
        start: usize,
        need: usize,
        optional: &[Con],
        combo: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if need == 0 {
            visit(combo);
            return;
        }
        for i in start..optional.len() {
            combo.push(i);
            rec(i + 1, need - 1, optional, combo, visit);
            combo.pop();
        }
    }

    let feas_tol = 1e-8;
    let mut visit = |chosen: &[usize]| {
        let mut a: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut b: Vec<f64> = Vec::with_capacity(n);
        let mut add = |con: &Con| {
            let mut arow = vec![0.0; n];
            let rhs;
            match con {
                Con::Rowc(i) => {
                    for &(j, v) in &lp.rows[*i].coeffs {
                        arow[j] += v;
                    }
                    rhs = lp.rows[*i].rhs;
                }
                Con::Lo(j) => {
                    arow[*j] = 1.0;
                    rhs = lp.var_bounds[*j].0;
                }
                Con::Hi(j) => {
                    arow[*j] = 1.0;
                    rhs = lp.var_bounds[*j].1;
                }
            }
            a.push(arow);
            b.push(rhs);
        };
        for c in &forced {
            add(c);
        }
        for &i in chosen {
            add(&optional[i]);
        }
        if let Some(x) = dense_solve(a, b) {
            if lp.max_violation(&x) <= feas_tol {
                let obj = lp.objective_value(&x);
                let better = match &best {
                    None => true,
                    Some((bo, _)) => {
                        if lp.maximize {
                            obj > *bo
                        } else {
                            obj < *bo
                        }
                    }
                };
                if better {
                    best = Some((obj, x));
                }
            }
        }
    };
    rec(0, need, &optional, &mut combo, &mut visit);
    best
}

/// Brute force over all binary assignments. Fixed binaries are substituted
/// out so the vertex enumeration only sees the continuous remainder.
pub fn milp_enumeration(p: &MilpProblem) -> Option<(f64, Vec<f64>)> {
    let nb = p.binary_vars.len();
    let n = p.lp.num_vars();
    let is_binary: Vec<bool> = {
        let mut v = vec![false; n];
        for &j in &p.binary_vars {
            v[j] = true;
        }
        v
    };
    let cont_vars: Vec<usize> = (0..n).filter(|j| !is_binary[*j]).collect();
    let remap: std::collections::HashMap<usize, usize> = cont_vars
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new))
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u64..(1u64 << nb) {
        let mut bval = vec![0.0f64; n];
        for (bit, &j) in p.binary_vars.iter().enumerate() {
            bval[j] = if mask >> bit & 1 == 1 { 1.0 } else { 0.0 };
        }
        // reduced problem over continuous vars only
        let mut feasible = true;
        let mut rows = Vec::with_capacity(p.lp.rows.len());
        for row in &p.lp.rows {
            let mut coeffs = Vec::new();
            let mut shift = 0.0;
            for &(j, v) in &row.coeffs {
                if is_binary[j] {
                    shift += v * bval[j];
                } else {
                    coeffs.push((remap[&j], v));
                }
            }
            let rhs = row.rhs - shift;
            if coeffs.is_empty() {
                let ok = match row.sense {
                    Sense::Le => 0.0 <= rhs + 1e-9,
                    Sense::Ge => 0.0 >= rhs - 1e-9,
                    Sense::Eq => rhs.abs() <= 1e-9,
                };
                if !ok {
                    feasible = false;
                    break;
                }
            } else {
                rows.push(Row {
                    coeffs,
                    sense: row.sense,
                    rhs,
                });
            }
        }
        if !feasible {
            continue;
        }
        let const_obj: f64 = p
            .binary_vars
            .iter()
            .map(|&j| p.lp.objective[j] * bval[j])
            .sum();
        let cand = if cont_vars.is_empty() {
            Some((const_obj, Vec::new()))
        } else {
            let sub = LinearProgram {
                maximize: p.lp.maximize,
                objective: cont_vars.iter().map(|&j| p.lp.objective[j]).collect(),
                var_bounds: cont_vars.iter().map(|&j| p.lp.var_bounds[j]).collect(),
                rows,
            };
            vertex_enumeration(&sub).map(|(obj, x)| (obj + const_obj, x))
        };
        if let Some((obj, xsub)) = cand {
            let better = match &best {
                None => true,
                Some((bo, _)) => {
                    if p.lp.maximize {
                        obj > *bo
                    } else {
                        obj < *bo
                    }
                }
            };
            if better {
                let mut full = bval;
                for (new, &old) in cont_vars.iter().enumerate() {
                    full[old] = xsub[new];
                }
                best = Some((obj, full));
            }
        }
    }
    best
}

/// Random bounded LP with a guaranteed interior feasible point.
pub fn random_lp(rng: &mut impl Rng) -> LinearProgram {
    let n = rng.gen_range(2..=6);
    let m = rng.gen_range(1..=8);
    let mut var_bounds = Vec::with_capacity(n);
    let mut xstar = Vec::with_capacity(n);
    for _ in 0..n {
        let lo = rng.gen_range(-3.0..0.0);
        let hi = rng.gen_range(0.5..4.0);
        var_bounds.push((lo, hi));
        xstar.push(rng.gen_range(lo..hi));
    }
    let mut rows = Vec::with_capacity(m);
    let mut used_eq = false;
    for _ in 0..m {
        let coeffs: Vec<(usize, f64)> = (0..n)
            .filter_map(|j| {
                if rng.gen_bool(0.7) {
                    Some((j, rng.gen_range(-2.0..2.0)))
                } else {
                    None
                }
            })
            .collect();
        if coeffs.is_empty() {
            continue;
        }
        let lhs: f64 = coeffs.iter().map(|&(j, v)| v * xstar[j]).sum();
        let r = rng.gen::<f64>();
        let (sense, rhs) = if r < 0.12 && !used_eq {
            used_eq = true;
            (Sense::Eq, lhs)
        } else if r < 0.56 {
            (Sense::Le, lhs + rng.gen_range(0.0..2.0))
        } else {
            (Sense::Ge, lhs - rng.gen_range(0.0..2.0))
        };
        rows.push(Row { coeffs, sense, rhs });
    }
    LinearProgram {
        maximize: rng.gen_bool(0.5),
        objective: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        var_bounds,
        rows,
    }
}

/// Random mixed binary problem, feasible by construction.
pub fn random_milp(rng: &mut impl Rng) -> MilpProblem {
    let nb = rng.gen_range(1..=8);
    let nc = rng.gen_range(0..=2);
    let n = nb + nc;
    let mut var_bounds = Vec::with_capacity(n);
    let mut xstar = Vec::with_capacity(n);
    for _ in 0..nb {
        var_bounds.push((0.0, 1.0));
        xstar.push(if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
    }
    for _ in 0..nc {
        let lo = rng.gen_range(-2.0..0.0);
        let hi = rng.gen_range(0.5..3.0);
        var_bounds.push((lo, hi));
        xstar.push(rng.gen_range(lo..hi));
    }
    let m = rng.gen_range(1..=6);
    let mut rows = Vec::with_capacity(m);
    for _ in 0..m {
        let coeffs: Vec<(usize, f64)> = (0..n)
            .filter_map(|j| {
                if rng.gen_bool(0.6) {
                    Some((j, rng.gen_range(-3.0..3.0)))
                } else {
                    None
                }
            })
            .collect();
        if coeffs.is_empty() {
            continue;
        }
        let lhs: f64 = coeffs.iter().map(|&(j, v)| v * xstar[j]).sum();
        let (sense, rhs) = if rng.gen_bool(0.5) {
            (Sense::Le, lhs + rng.gen_range(0.0..1.5))
        } else {
            (Sense::Ge, lhs - rng.gen_range(0.0..1.5))
        };
        rows.push(Row { coeffs, sense, rhs });
    }
    MilpProblem {
        lp: LinearProgram {
            maximize: rng.gen_bool(0.5),
            objective: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            var_bounds,
            rows,
        },
        binary_vars: (0..nb).collect(),
    }
}
