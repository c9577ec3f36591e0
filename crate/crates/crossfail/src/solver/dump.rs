//! Plain-text dump/load of solver problems, for debugging.
//!
//! Line-oriented format:
//!
//! ```text
//! milp max <n_vars> <n_rows>
//! obj <c_0> ... <c_{n-1}>
//! bnd <lo> <hi>            # one line per variable; inf / -inf allowed
//! row <le|eq|ge> <rhs> <j:coef> ...
//! bin <j> <j> ...          # optional, binary variable indices
//! ```

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::lp::{LinearProgram, Row, Sense};
use super::milp::MilpProblem;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

pub fn dump_milp(p: &MilpProblem) -> String {
    let lp = &p.lp;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "milp {} {} {}",
        if lp.maximize { "max" } else { "min" },
        lp.num_vars(),
        lp.rows.len()
    );
    let mut obj = String::from("obj");
    for c in &lp.objective {
        let _ = write!(obj, " {c:?}");
    }
    let _ = writeln!(s, "{obj}");
    for &(lo, hi) in &lp.var_bounds {
        let _ = writeln!(s, "bnd {} {}", fmt_bound(lo), fmt_bound(hi));
    }
    for row in &lp.rows {
        let sense = match row.sense {
            Sense::Le => "le",
            Sense::Eq => "eq",
            Sense::Ge => "ge",
        };
        let mut line = format!("row {sense} {:?}", row.rhs);
        for &(j, v) in &row.coeffs {
            let _ = write!(line, " {j}:{v:?}");
        }
        let _ = writeln!(s, "{line}");
    }
    if !p.binary_vars.is_empty() {
        let mut line = String::from("bin");
        for j in &p.binary_vars {
            let _ = write!(line, " {j}");
        }
        let _ = writeln!(s, "{line}");
    }
    s
}

pub fn write_milp(p: &MilpProblem, path: &Path) -> Result<(), DumpError> {
    std::fs::write(path, dump_milp(p))?;
    Ok(())
}

fn parse_bound(tok: &str, line: usize) -> Result<f64, DumpError> {
    match tok {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok.parse::<f64>().map_err(|e| DumpError::Parse {
            line,
            msg: format!("bad number {tok:?}: {e}"),
        }),
    }
}

pub fn parse_milp(text: &str) -> Result<MilpProblem, DumpError> {
    let mut lines = text.lines().enumerate();
    let (ln, header) = lines.next().ok_or(DumpError::Parse {
        line: 0,
        msg: "empty dump".into(),
    })?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "milp" {
        return Err(DumpError::Parse {
            line: ln + 1,
            msg: "expected 'milp max|min <n> <m>'".into(),
        });
    }
    let maximize = toks[1] == "max";
    let n: usize = toks[2].parse().map_err(|_| DumpError::Parse {
        line: ln + 1,
        msg: "bad var count".into(),
    })?;
    let mut objective = Vec::new();
    let mut var_bounds = Vec::new();
    let mut rows = Vec::new();
    let mut binary_vars = Vec::new();
    for (ln, raw) in lines {
        let line = ln + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        match toks[0] {
            "obj" => {
                for t in &toks[1..] {
                    objective.push(parse_bound(t, line)?);
                }
            }
            "bnd" => {
                if toks.len() != 3 {
                    return Err(DumpError::Parse {
                        line,
                        msg: "bnd needs lo and hi".into(),
                    });
                }
                var_bounds.push((parse_bound(toks[1], line)?, parse_bound(toks[2], line)?));
            }
            "row" => {
                if toks.len() < 3 {
                    return Err(DumpError::Parse {
                        line,
                        msg: "row needs sense and rhs".into(),
                    });
                }
                let sense = match toks[1] {
                    "le" => Sense::Le,
                    "eq" => Sense::Eq,
                    "ge" => Sense::Ge,
                    other => {
                        return Err(DumpError::Parse {
                            line,
                            msg: format!("unknown sense {other:?}"),
                        })
                    }
                };
                let rhs = parse_bound(toks[2], line)?;
                let mut coeffs = Vec::new();
                for t in &toks[3..] {
                    let (j, v) = t.split_once(':').ok_or_else(|| DumpError::Parse {
                        line,
                        msg: format!("expected j:coef, got {t:?}"),
                    })?;
                    coeffs.push((
                        j.parse::<usize>().map_err(|_| DumpError::Parse {
                            line,
                            msg: "bad index".into(),
                        })?,
                        parse_bound(v, line)?,
                    ));
                }
                rows.push(Row { coeffs, sense, rhs });
            }
            "bin" => {
                for t in &toks[1..] {
                    binary_vars.push(t.parse::<usize>().map_err(|_| DumpError::Parse {
                        line,
                        msg: "bad binary index".into(),
                    })?);
                }
            }
            other => {
                return Err(DumpError::Parse {
                    line,
                    msg: format!("unknown record {other:?}"),
                })
            }
        }
    }
    if objective.len() != n || var_bounds.len() != n {
        return Err(DumpError::Parse {
            line: 0,
            msg: format!(
                "declared {n} vars, parsed {} objective terms and {} bounds",
                objective.len(),
                var_bounds.len()
            ),
        });
    }
    Ok(MilpProblem {
        lp: LinearProgram {
            maximize,
            objective,
            var_bounds,
            rows,
        },
        binary_vars,
    })
}

pub fn read_milp(path: &Path) -> Result<MilpProblem, DumpError> {
    parse_milp(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let p = MilpProblem {
            lp: LinearProgram {
                maximize: true,
                objective: vec![1.5, -2.0, 0.0],
                var_bounds: vec![(0.0, 1.0), (f64::NEG_INFINITY, f64::INFINITY), (-3.5, 7.0)],
                rows: vec![Row {
                    coeffs: vec![(0, 1.0), (2, -0.25)],
                    sense: Sense::Ge,
                    rhs: -1.0,
                }],
            },
            binary_vars: vec![0],
        };
        let text = dump_milp(&p);
        let q = parse_milp(&text).unwrap();
        assert_eq!(q.lp.objective, p.lp.objective);
        assert_eq!(q.lp.var_bounds, p.lp.var_bounds);
        assert_eq!(q.binary_vars, p.binary_vars);
        assert_eq!(q.lp.rows.len(), 1);
        assert_eq!(q.lp.rows[0].coeffs, p.lp.rows[0].coeffs);
    }
}
