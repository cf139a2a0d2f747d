//! Plain-text rendering of a problem for debugging.
//!
//! Layout:
//!
//! ```text
//! problem <name>
//! variables <coordinate count>
//!   <name> <kind> <rows>x<cols> <sign>
//! objective <feasibility | minimize linear: <expr> | minimize -logdet: <expr>>
//! constraint "<name>" <sense> margin <eps> blocks [<sizes>]
//!   block (i,j):
//!     const [[row], [row], ...]
//!     <var><(i,j)> * [[row], ...]
//! ```
//!
//! Matrices print row by row with shortest round-trip float formatting.
//! Zero constants are omitted; only blocks on or above the diagonal appear.

use std::fmt::Write;

use super::expr::{AffineExpr, VarKind};
use super::problem::{SdpProblem, SignConstraint};
use crate::linalg::Matrix;

pub fn dump(problem: &SdpProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "problem {}", problem.name());
    let _ = writeln!(out, "variables {}", problem.num_coords());
    for v in problem.variables() {
        let (r, c) = v.var.dims();
        let kind = match v.var.kind() {
            VarKind::Symmetric(_) => "symmetric",
            VarKind::Diagonal(_) => "diagonal",
            VarKind::Rectangular(..) => "rectangular",
            VarKind::Scalar => "scalar",
        };
        let sign = match v.sign {
            SignConstraint::Free => "free",
            SignConstraint::PositiveDefinite => "pos-def",
            SignConstraint::Nonnegative => "nonneg",
        };
        let _ = writeln!(out, "  {} {kind} {r}x{c} {sign}", v.name);
    }
    let obj = problem.objective();
    if obj.is_feasibility() {
        let _ = writeln!(out, "objective feasibility");
    }
    if let Some(l) = &obj.linear {
        let _ = writeln!(out, "objective minimize linear:");
        write_expr(&mut out, problem, l, "  ");
    }
    if let Some(g) = &obj.neg_logdet {
        let _ = writeln!(out, "objective minimize -logdet:");
        write_expr(&mut out, problem, g, "  ");
    }
    for c in problem.constraints() {
        let _ = writeln!(
            out,
            "constraint \"{}\" {} margin {} blocks {:?}",
            c.def.name(),
            c.def.sense().symbol(),
            c.margin,
            c.def.block_sizes()
        );
        for (&(i, j), e) in c.def.blocks() {
            let _ = writeln!(out, "  block ({i},{j}):");
            write_expr(&mut out, problem, e, "    ");
        }
    }
    out
}

fn write_expr(out: &mut String, problem: &SdpProblem, e: &AffineExpr, indent: &str) {
    if e.constant.amax() > 0.0 || e.terms.is_empty() {
        let _ = writeln!(out, "{indent}const {}", fmt_matrix(&e.constant));
    }
    for (&k, m) in &e.terms {
        if m.amax() == 0.0 {
            continue;
        }
        let _ = writeln!(out, "{indent}{} * {}", coord_name(problem, k), fmt_matrix(m));
    }
}

fn coord_name(problem: &SdpProblem, k: usize) -> String {
    for v in problem.variables() {
        let range = v.var.coords();
        if range.contains(&k) {
            return format!("{}{}", v.name, v.var.kind().coord_label(k - range.start));
        }
    }
    format!("y{k}")
}

fn fmt_matrix(m: &Matrix) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let cells: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::{LmiConstraint, Objective, ProblemBuilder, Sense};

    #[test]
    fn dump_lists_variables_and_blocks() {
        let mut b = ProblemBuilder::new("demo");
        let p = b.symmetric("P", 2, SignConstraint::PositiveDefinite);
        let s = b.diagonal("S1", 2, SignConstraint::PositiveDefinite);
        b.constrain(
            LmiConstraint::new("lmi", &[2, 2], Sense::NegativeDefinite)
                .with_block(0, 0, -AffineExpr::var(p))
                .with_block(1, 1, -AffineExpr::var(s)),
        );
        b.objective(Objective::minimize_neg_logdet(p));
        let text = dump(&b.build().unwrap());
        assert!(text.contains("problem demo"));
        assert!(text.contains("P symmetric 2x2 pos-def"));
        assert!(text.contains("S1 diagonal 2x2 pos-def"));
        assert!(text.contains("constraint \"lmi\" < 0"));
        assert!(text.contains("P(0,1) * [[-0, -1], [-1, -0]]") || text.contains("P(0,1) * [[0, -1], [-1, 0]]"));
        assert!(text.contains("S1(1,1)"));
        assert!(text.contains("objective minimize -logdet:"));
    }
}
