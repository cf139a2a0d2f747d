//! Declarative LMI modeling and a self-contained SDP backend.
//!
//! Problems are assembled with [`ProblemBuilder`] from matrix-valued
//! variables, [`AffineExpr`] block expressions and [`LmiConstraint`]s, then
//! lowered to a [`ConicForm`] that any [`SolverBackend`] can consume.

mod barrier;
mod dump;
mod expr;
mod problem;

use std::panic::{catch_unwind, AssertUnwindSafe};

pub use barrier::{BackendOutput, BarrierSettings, BarrierSolver, SolverBackend};
pub use dump::dump;
pub use expr::{AffineExpr, Var, VarKind};
pub use problem::{
    CompiledConstraint, ConicForm, LmiConstraint, Objective, ProblemBuilder, PsdBlock, SdpProblem,
    SdpSolution, Sense, SignConstraint, SolveStatus, SolverDiagnostics, VarInfo,
    DEFAULT_FLOOR, DEFAULT_STRICT_MARGIN,
};

use crate::linalg::{Matrix, SymMatrix};

/// Solves `problem` with `backend`. Backend failures, including panics,
/// surface as [`SolveStatus::NumericalFailure`].
pub fn solve(problem: &SdpProblem, backend: &dyn SolverBackend) -> SdpSolution {
    solve_with_start(problem, backend, None)
}

/// Like [`solve`], seeding the backend with a coordinate vector.
pub fn solve_with_start(
    problem: &SdpProblem,
    backend: &dyn SolverBackend,
    start: Option<&[f64]>,
) -> SdpSolution {
    let form = problem.conic_form();
    let out = catch_unwind(AssertUnwindSafe(|| backend.solve(&form, start)));
    let out = match out {
        Ok(o) => o,
        Err(_) => {
            return SdpSolution {
                status: SolveStatus::NumericalFailure,
                values: None,
                objective: f64::NAN,
                diagnostics: SolverDiagnostics {
                    backend: backend.name().into(),
                    message: "backend panicked".into(),
                    ..Default::default()
                },
            }
        }
    };
    let mut diagnostics = out.diagnostics;
    match (out.status, out.y) {
        (SolveStatus::Optimal, Some(y)) if y.len() == problem.num_coords() => {
            let objective = problem.objective_value(&y);
            let interior = form
                .blocks
                .iter()
                .all(|b| b.eval(&y).cholesky().is_some());
            if objective.is_finite() && interior {
                SdpSolution {
                    status: SolveStatus::Optimal,
                    values: Some(y),
                    objective,
                    diagnostics,
                }
            } else {
                diagnostics.message = "returned point fails the cone constraints".into();
                SdpSolution {
                    status: SolveStatus::NumericalFailure,
                    values: None,
                    objective: f64::NAN,
                    diagnostics,
                }
            }
        }
        (SolveStatus::Optimal, _) => {
            diagnostics.message = "backend reported optimal without a point".into();
            SdpSolution {
                status: SolveStatus::NumericalFailure,
                values: None,
                objective: f64::NAN,
                diagnostics,
            }
        }
        (status, _) => SdpSolution {
            status,
            values: None,
            objective: f64::NAN,
            diagnostics,
        },
    }
}

/// Verification of one constraint at a candidate point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintCheck {
    pub name: String,
    pub sense: Sense,
    /// Largest eigenvalue of the constraint written as "≤ 0" (F for the
    /// negative senses, −F for the positive ones, ±|F| entries for
    /// equalities).
    pub lambda_max: f64,
    /// `lambda_max` must not exceed this.
    pub threshold: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub checks: Vec<ConstraintCheck>,
}

impl CheckReport {
    pub fn all_satisfied(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }

    pub fn violations(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.checks.iter().filter(|c| !c.satisfied)
    }
}

/// Re-evaluates every constraint and sign restriction at the solution by
/// eigenvalue test. Strict constraints must satisfy λmax ≤ −margin;
/// non-strict ones λmax ≤ 1e-12·scale. Non-optimal solutions fail every
/// check.
pub fn check_solution(problem: &SdpProblem, solution: &SdpSolution, margin: f64) -> CheckReport {
    let Some(y) = solution.values.as_deref() else {
        let checks = problem
            .constraints()
            .iter()
            .map(|c| ConstraintCheck {
                name: c.def.name().into(),
                sense: c.def.sense(),
                lambda_max: f64::NAN,
                threshold: if c.def.sense().is_strict() { -margin } else { 0.0 },
                satisfied: false,
            })
            .collect();
        return CheckReport { checks };
    };
    let mut checks = Vec::new();
    for c in problem.constraints() {
        let f = c.expr.eval(y);
        let scale = f.amax().max(1.0);
        let sense = c.def.sense();
        let lambda_max = match sense {
            Sense::NegativeDefinite | Sense::NegativeSemidefinite => max_eig(&f),
            Sense::PositiveDefinite | Sense::PositiveSemidefinite => max_eig(&(-&f)),
            Sense::Zero => f.amax(),
        };
        let threshold = if sense.is_strict() {
            -margin
        } else {
            1e-12 * scale
        };
        checks.push(ConstraintCheck {
            name: c.def.name().into(),
            sense,
            lambda_max,
            threshold,
            satisfied: lambda_max <= threshold,
        });
    }
    for info in problem.variables() {
        let threshold = match info.sign {
            SignConstraint::Free => continue,
            SignConstraint::PositiveDefinite => -0.5 * problem.floor(),
            SignConstraint::Nonnegative => 0.0,
        };
        let value = info.var.assemble(y);
        let lambda_max = max_eig(&(-value));
        checks.push(ConstraintCheck {
            name: format!("{} sign", info.name),
            sense: Sense::PositiveDefinite,
            lambda_max,
            threshold,
            satisfied: lambda_max <= threshold,
        });
    }
    CheckReport { checks }
}

fn max_eig(m: &Matrix) -> f64 {
    SymMatrix::symmetrize(m.clone()).max_eigenvalue()
}
