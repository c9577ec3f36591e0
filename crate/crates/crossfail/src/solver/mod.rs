//! Linear and mixed-integer linear programming.

pub mod dump;
pub mod lp;
pub mod milp;

pub use lp::{solve_lp, LinearProgram, LpError, Row, Sense, SimplexSolver, SolveResult, Status};
pub use milp::{solve_milp, MilpProblem};
