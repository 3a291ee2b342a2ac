use std::io::Write;
use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scm_core::adb::{build_laplacian, semantic_similarity, DEFAULT_LAMBDA};
use scm_core::flow_oracle::{exact_solve, max_stable_dt, simulate_flow_observed, steady_state_residual};
use scm_core::patch_graph::build_grid_graph;
use scm_core::{ScoreMap, SemanticMap};

use crate::args::SimulateArgs;
use crate::config::Settings;
use crate::dataset::Dataset;
use crate::error::{CliError, Result};

/// Positive attention and semantics clustered around a common direction.
pub fn random_system(seed: u64, size: usize) -> (ScoreMap, SemanticMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = ScoreMap::from_fn(size, size, |_, _| rng.random_range(0.2..1.0));
    let s = SemanticMap::from_fn(size, size, 3, |_, _, _| 1.0 + rng.random_range(-0.3..0.3));
    (f, s)
}

pub fn run(s: &Settings, args: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let (f, sem) = match &args.image {
        Some(id) => Dataset::open(s.require_tensor_dir()?, None, s.grid)?.load_inputs(id)?,
        None => {
            if args.size == 0 {
                return Err(CliError::Input("--size must be positive".into()));
            }
            random_system(s.seed, args.size)
        }
    };
    let lambda = s.params.lambda.first().copied().unwrap_or(DEFAULT_LAMBDA);
    let g = build_grid_graph(f.height(), f.width())?;
    let lap = build_laplacian(&g, &semantic_similarity(&sem), lambda, s.params.laplacian_sign)?;
    let bound = max_stable_dt(&lap.l);
    let dt = args.dt.unwrap_or(0.5 * bound);
    writeln!(
        out,
        "system: {}x{} grid, lambda {lambda}, sign {}, u {}, dt {dt:.4e} (Euler bound {bound:.4e})",
        f.height(),
        f.width(),
        s.params.laplacian_sign,
        args.input_rate
    )?;

    let u = args.input_rate;
    let equilibrium = match exact_solve(&lap, &f) {
        Ok(x) => Some(x.into_iter().map(|v| -u * v).collect::<Vec<f64>>()),
        Err(e) => {
            writeln!(out, "exact equilibrium unavailable: {e}")?;
            None
        }
    };
    let source_norm = f.as_slice().iter().map(|v| (u * v).powi(2)).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    writeln!(out, "{:>10}  {:>12}  {:>12}  {:>12}", "step", "t", "|I|", "residual")?;
    let mut last = (0, 0.0, f64::INFINITY);
    let mut rows: Vec<String> = Vec::new();
    let state = simulate_flow_observed(&lap, &f, dt, args.steps, |_| u, |step, st| {
        let rel = steady_state_residual(&lap, &f, &st.i, u) / source_norm;
        last = (step, st.t, rel);
        let settled = rel <= args.tol;
        if step.is_power_of_two() || settled || step == args.steps {
            rows.push(format!("{step:>10}  {:>12.4e}  {:>12.4e}  {rel:>12.4e}", st.t, st.norm()));
        }
        if settled {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    for r in &rows {
        writeln!(out, "{r}")?;
    }
    let state = state?;
    let (step, t, rel) = last;
    if rel > args.tol {
        return Err(CliError::NotSettled {
            steps: args.steps,
            residual: rel,
        });
    }
    match equilibrium {
        Some(eq) => {
            let scale = eq.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let err = state.i.iter().zip(&eq).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / scale;
            writeln!(
                out,
                "converged at t = {t:.4e} after {step} steps; relative distance to -u L^-1 F = {err:.3e}"
            )?;
        }
        None => writeln!(out, "converged at t = {t:.4e} after {step} steps")?,
    }
    Ok(())
}
