use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scm_core::patch_graph::build_grid_graph;
use scm_core::sensitivity::{dual_sensitivity, finite_difference, relative_error, ParamTarget};
use scm_core::{ScoreMap, SemanticMap};

use crate::args::GradcheckArgs;
use crate::config::Settings;
use crate::dataset::par_map;
use crate::error::{CliError, Result};

/// Attention in `[0.2, 2)`, semantics in `[-1, 1)`.
pub fn random_fixture(seed: u64, index: usize, size: usize, classes: usize) -> (ScoreMap, SemanticMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let f = ScoreMap::from_fn(size, size, |_, _| rng.random_range(0.2..2.0));
    let s = SemanticMap::from_fn(size, size, classes, |_, _, _| rng.random_range(-1.0..1.0));
    (f, s)
}

pub fn targets(layers: usize) -> Vec<ParamTarget> {
    (0..layers)
        .flat_map(|l| [ParamTarget::lambda(l), ParamTarget::beta(l)])
        .collect()
}

pub fn run(s: &Settings, args: &GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    if args.size == 0 || args.classes == 0 || args.fixtures == 0 {
        return Err(CliError::Input("--size, --classes and --fixtures must be positive".into()));
    }
    let g = build_grid_graph(args.size, args.size)?;
    let targets = targets(s.params.num_layers());
    let indices: Vec<usize> = (0..args.fixtures).collect();
    let results: Vec<Vec<(f64, f64)>> = par_map(s.jobs, &indices, |&i| {
        let (f, sem) = random_fixture(s.seed, i, args.size, args.classes);
        let class = i % args.classes;
        targets
            .iter()
            .map(|&t| {
                let d = dual_sensitivity(&f, &sem, &s.params, &g, class, t)?;
                let fd = finite_difference(&f, &sem, &s.params, &g, class, t, args.h)?;
                Ok((d, fd))
            })
            .collect()
    })?;

    writeln!(
        out,
        "{} fixtures, {}x{} grid, h = {:e}; dual and fd shown for fixture 0",
        args.fixtures, args.size, args.size, args.h
    )?;
    writeln!(out, "{:<10}  {:>14}  {:>14}  {:>12}  status", "parameter", "dual", "fd", "max_rel_err")?;
    let mut failed = 0;
    for (k, t) in targets.iter().enumerate() {
        let worst = results
            .iter()
            .map(|r| relative_error(r[k].0, r[k].1))
            .fold(0.0, f64::max);
        let pass = worst <= args.tolerance;
        if !pass {
            failed += 1;
        }
        let (d, fd) = results[0][k];
        writeln!(
            out,
            "{:<10}  {d:>14.6e}  {fd:>14.6e}  {worst:>12.3e}  {}",
            t.to_string(),
            if pass { "pass" } else { "FAIL" }
        )?;
    }
    if failed > 0 {
        return Err(CliError::GradCheck {
            failed,
            total: targets.len(),
        });
    }
    Ok(())
}
