//! Independent checks on the diffusion operator.
//!
//! The diffusion block approximates `L^{-1}` with a few Newton-Schulz steps.
//! This module provides three routes to the quantities it approximates: an
//! explicit Euler integration of the linear flow `dI/dt = L I + u(t) vec(F)`,
//! a partially pivoted dense solve of `L x = vec(F)`, and Newton-Schulz run
//! to convergence from a provably safe seed.
//!
//! Note the flow's equilibrium is `-L^{-1} vec(F)` (set the derivative to
//! zero), not `+L^{-1} vec(F)`.

use std::ops::ControlFlow;

use crate::adb::{newton_schulz_step, LaplacianMatrix};
use crate::error::{Result, ScmError};
use crate::linalg::DenseMatrix;
use crate::maps::ScoreMap;
use crate::patch_graph::flatten;

/// Norm above which the integration is declared divergent.
pub const OVERFLOW_GUARD: f64 = 1e100;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub i: Vec<f64>,
    pub t: f64,
}

impl FlowState {
    pub fn norm(&self) -> f64 {
        self.i.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Spectral radius bound used for step-size guidance: explicit Euler on a
/// stable system needs `dt < 2 / rho(L)`, and `rho(L) <= ||L||_inf`.
pub fn max_stable_dt(l: &DenseMatrix) -> f64 {
    let r = l.norm_inf();
    if r == 0.0 {
        f64::INFINITY
    } else {
        2.0 / r
    }
}

/// Euler integration from `I(0) = 0`.
pub fn simulate_flow(
    lap: &LaplacianMatrix,
    f: &ScoreMap,
    dt: f64,
    steps: usize,
    input_rate: impl Fn(f64) -> f64,
) -> Result<FlowState> {
    simulate_flow_observed(lap, f, dt, steps, input_rate, |_, _| ControlFlow::Continue(()))
}

/// As [`simulate_flow`], calling `observe(step, state)` after every step;
/// returning `Break` ends the integration early.
pub fn simulate_flow_observed(
    lap: &LaplacianMatrix,
    f: &ScoreMap,
    dt: f64,
    steps: usize,
    input_rate: impl Fn(f64) -> f64,
    mut observe: impl FnMut(usize, &FlowState) -> ControlFlow<()>,
) -> Result<FlowState> {
    let l = &lap.l;
    let n = l.rows();
    if !l.is_square() || f.len() != n {
        return Err(ScmError::Shape(format!(
            "flow on a {}x{} operator with {} sources",
            l.rows(),
            l.cols(),
            f.len()
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ScmError::Argument(format!("dt must be positive, got {dt}")));
    }
    if steps == 0 {
        return Err(ScmError::Argument("at least one step is required".into()));
    }
    let source = flatten(f);
    let mut state = FlowState {
        i: vec![0.0; n],
        t: 0.0,
    };
    for step in 1..=steps {
        let u = input_rate(state.t);
        let rate = l.matvec(&state.i);
        for ((x, r), s) in state.i.iter_mut().zip(rate).zip(&source) {
            *x += dt * (r + u * s);
        }
        state.t = step as f64 * dt;
        let norm = state.norm();
        if !norm.is_finite() || norm > OVERFLOW_GUARD {
            return Err(ScmError::Instability {
                step,
                norm,
                max_stable_dt: max_stable_dt(l),
            });
        }
        if observe(step, &state).is_break() {
            break;
        }
    }
    Ok(state)
}

/// `||L x + u vec(F)||_2` for a constant input rate `u`.
pub fn steady_state_residual(lap: &LaplacianMatrix, f: &ScoreMap, x: &[f64], u: f64) -> f64 {
    lap.l
        .matvec(x)
        .iter()
        .zip(f.as_slice())
        .map(|(a, b)| (a + u * b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Solves `L x = vec(F)`.
pub fn exact_solve(lap: &LaplacianMatrix, f: &ScoreMap) -> Result<Vec<f64>> {
    if f.len() != lap.l.rows() {
        return Err(ScmError::Shape(format!(
            "{} sources for a {}-node operator",
            f.len(),
            lap.l.rows()
        )));
    }
    solve_dense(&lap.l, &flatten(f))
}

/// Gaussian elimination with partial pivoting. A pivot below
/// `1e-12 * ||A||_inf` is reported as singular.
pub fn solve_dense(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if !a.is_square() || b.len() != n {
        return Err(ScmError::Shape(format!(
            "cannot solve a {}x{} system with {} right-hand values",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let threshold = 1e-12 * a.norm_inf();
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, m[(r, col)].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot <= threshold {
            return Err(ScmError::Singular {
                column: col,
                pivot,
                threshold,
            });
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = m[(col, j)];
                m[(col, j)] = m[(pivot_row, j)];
                m[(pivot_row, j)] = tmp;
            }
            rhs.swap(col, pivot_row);
        }
        let p = m[(col, col)];
        for r in col + 1..n {
            let factor = m[(r, col)] / p;
            if factor == 0.0 {
                continue;
            }
            m[(r, col)] = 0.0;
            for j in col + 1..n {
                let v = m[(col, j)];
                m[(r, j)] -= factor * v;
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|j| m[(r, j)] * x[j]).sum();
        x[r] = (rhs[r] - tail) / m[(r, r)];
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct NsInverse {
    pub x: DenseMatrix,
    pub iterations: usize,
    /// `||I - L X||_max` at exit.
    pub residual: f64,
}

/// `alpha = 1 / (||L||_1 ||L||_inf)`, which puts the spectrum of
/// `alpha L L^T` inside (0, 1] for any invertible `L`.
pub fn safe_alpha(l: &DenseMatrix) -> f64 {
    1.0 / (l.norm_1() * l.norm_inf())
}

/// Runs Newton-Schulz from the safe seed until `||I - L X||_max <= tol`.
pub fn converged_ns_inverse(lap: &LaplacianMatrix, tol: f64, max_p: usize) -> Result<NsInverse> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(ScmError::Argument(format!("tolerance must be positive, got {tol}")));
    }
    let l = &lap.l;
    if !l.is_square() {
        return Err(ScmError::Shape(format!(
            "cannot invert a {}x{} matrix",
            l.rows(),
            l.cols()
        )));
    }
    let n = l.rows();
    let residual_of = |x: &DenseMatrix| DenseMatrix::identity(n).sub(&l.matmul(x)).norm_max();
    let alpha = safe_alpha(l);
    if !alpha.is_finite() {
        return Err(ScmError::Convergence {
            iterations: 0,
            residual: 1.0,
            tolerance: tol,
        });
    }
    let mut x = l.transpose().scaled(alpha);
    let mut residual = residual_of(&x);
    let mut iterations = 0;
    while residual > tol {
        if iterations == max_p {
            return Err(ScmError::Convergence {
                iterations,
                residual,
                tolerance: tol,
            });
        }
        x = newton_schulz_step(l, &x);
        iterations += 1;
        if !x.all_finite() {
            return Err(ScmError::Numeric(format!(
                "non-finite entry after Newton-Schulz iteration {iterations}"
            )));
        }
        residual = residual_of(&x);
    }
    Ok(NsInverse {
        x,
        iterations,
        residual,
    })
}
