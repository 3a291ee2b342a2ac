//! Forward-mode derivatives of a stack logit with respect to one per-layer
//! scalar, and the central-difference check they are compared against.

mod dual;

use std::fmt;
use std::str::FromStr;

pub use dual::DualReal;

use crate::adb::{gap_logits, scm_forward, scm_forward_with, DiffusionParams, LayerParams};
use crate::error::{Result, ScmError};
use crate::maps::{ScoreMap, SemanticMap};
use crate::patch_graph::PatchGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Lambda,
    Beta,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lambda => "lambda",
            Self::Beta => "beta",
        })
    }
}

impl FromStr for ParamKind {
    type Err = ScmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "beta" => Ok(Self::Beta),
            other => Err(ScmError::Argument(format!("unknown parameter `{other}`"))),
        }
    }
}

/// A single learnable scalar; `layer` is zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamTarget {
    pub kind: ParamKind,
    pub layer: usize,
}

impl ParamTarget {
    pub fn lambda(layer: usize) -> Self {
        Self {
            kind: ParamKind::Lambda,
            layer,
        }
    }

    pub fn beta(layer: usize) -> Self {
        Self {
            kind: ParamKind::Beta,
            layer,
        }
    }

    /// Layers beyond the stack exist but do not influence the output.
    fn is_used(&self, params: &DiffusionParams) -> bool {
        self.layer < params.num_layers()
    }
}

impl fmt::Display for ParamTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.kind, self.layer + 1)
    }
}

fn logit_of(s: &SemanticMap, class_idx: usize) -> Result<f64> {
    gap_logits(s)
        .get(class_idx)
        .copied()
        .ok_or_else(|| ScmError::Argument(format!("class {class_idx} out of range")))
}

/// GAP logit of `class_idx` from the last semantic map of the stack.
pub fn scalar_output(
    f0: &ScoreMap,
    s0: &SemanticMap,
    params: &DiffusionParams,
    g: &PatchGraph,
    class_idx: usize,
) -> Result<f64> {
    let trace = scm_forward(f0, s0, params, g)?;
    logit_of(trace.last_semantic(), class_idx)
}

pub fn dual_sensitivity(
    f0: &ScoreMap,
    s0: &SemanticMap,
    params: &DiffusionParams,
    g: &PatchGraph,
    class_idx: usize,
    target: ParamTarget,
) -> Result<f64> {
    params.validate()?;
    if class_idx >= s0.channels() {
        return Err(ScmError::Argument(format!("class {class_idx} out of range")));
    }
    if !target.is_used(params) {
        return Ok(0.0);
    }
    let layers: Vec<LayerParams<DualReal>> = params
        .lambda
        .iter()
        .zip(&params.beta)
        .enumerate()
        .map(|(l, (&lambda, &beta))| {
            let seed = |kind| {
                if target.layer == l && target.kind == kind {
                    1.0
                } else {
                    0.0
                }
            };
            LayerParams {
                lambda: DualReal::new(lambda, seed(ParamKind::Lambda)),
                beta: DualReal::new(beta, seed(ParamKind::Beta)),
            }
        })
        .collect();
    let trace = scm_forward_with(&f0.lift(), &s0.lift(), &layers, params, g)?;
    Ok(gap_logits(trace.last_semantic())[class_idx].deriv)
}

fn shifted(params: &DiffusionParams, target: ParamTarget, delta: f64) -> DiffusionParams {
    let mut p = params.clone();
    match target.kind {
        ParamKind::Lambda => p.lambda[target.layer] += delta,
        ParamKind::Beta => p.beta[target.layer] += delta,
    }
    p
}

/// `(f(theta + h) - f(theta - h)) / 2h`.
pub fn finite_difference(
    f0: &ScoreMap,
    s0: &SemanticMap,
    params: &DiffusionParams,
    g: &PatchGraph,
    class_idx: usize,
    target: ParamTarget,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(ScmError::Argument(format!("step {h} must be positive")));
    }
    params.validate()?;
    if !target.is_used(params) {
        return Ok(0.0);
    }
    if target.kind == ParamKind::Beta {
        let b = params.beta[target.layer];
        if b - h <= 0.0 || b + h >= 1.0 {
            return Err(ScmError::Argument(format!(
                "beta {b} +/- {h} leaves (0, 1)"
            )));
        }
    }
    let plus = scalar_output(f0, s0, &shifted(params, target, h), g, class_idx)?;
    let minus = scalar_output(f0, s0, &shifted(params, target, -h), g, class_idx)?;
    Ok((plus - minus) / (2.0 * h))
}

/// `|dual - fd| / max(1e-12, |dual|)`.
pub fn relative_error(dual: f64, fd: f64) -> f64 {
    (dual - fd).abs() / dual.abs().max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch_graph::build_grid_graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture(seed: u64, h: usize, w: usize, c: usize) -> (ScoreMap, SemanticMap, PatchGraph) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = ScoreMap::from_fn(h, w, |_, _| rng.random_range(0.2..2.0));
        let s = SemanticMap::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0));
        (f, s, build_grid_graph(h, w).unwrap())
    }

    #[test]
    fn zero_layers_is_input_logit() {
        let (f, s, g) = fixture(1, 3, 3, 2);
        let p = DiffusionParams::uniform(0, 1.0, 0.5);
        assert_eq!(scalar_output(&f, &s, &p, &g, 1).unwrap(), gap_logits(&s)[1]);
    }

    #[test]
    fn constant_semantics_keep_the_logit() {
        let (f, _, g) = fixture(2, 3, 4, 3);
        let s = SemanticMap::from_fn(3, 4, 3, |_, _, k| [0.4, -0.2, 1.1][k]);
        let p = DiffusionParams::uniform(2, 1.0, 0.5);
        assert_eq!(scalar_output(&f, &s, &p, &g, 2).unwrap(), gap_logits(&s)[2]);
    }

    #[test]
    fn unused_layer_has_zero_derivative() {
        let (f, s, g) = fixture(3, 3, 3, 2);
        let p = DiffusionParams::uniform(1, 0.8, 0.4);
        assert_eq!(dual_sensitivity(&f, &s, &p, &g, 0, ParamTarget::lambda(1)).unwrap(), 0.0);
        assert_eq!(finite_difference(&f, &s, &p, &g, 0, ParamTarget::lambda(1), 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn beta_has_no_effect_on_zero_attention() {
        let (_, s, g) = fixture(4, 3, 3, 2);
        let f = ScoreMap::filled(3, 3, 0.0);
        let p = DiffusionParams::uniform(2, 0.9, 0.5);
        assert_eq!(dual_sensitivity(&f, &s, &p, &g, 1, ParamTarget::beta(0)).unwrap(), 0.0);
    }

    #[test]
    fn beta_domain_is_checked() {
        let (f, s, g) = fixture(5, 2, 2, 2);
        let p = DiffusionParams::uniform(1, 1.0, 0.99);
        assert!(matches!(
            finite_difference(&f, &s, &p, &g, 0, ParamTarget::beta(0), 0.05),
            Err(ScmError::Argument(_))
        ));
        assert!(finite_difference(&f, &s, &p, &g, 0, ParamTarget::beta(0), 0.0).is_err());
    }

    #[test]
    fn dual_value_matches_plain_forward() {
        let (f, s, g) = fixture(6, 3, 4, 3);
        let mut p = DiffusionParams::uniform(2, 0.7, 0.3);
        p.alpha = 0.02;
        let layers: Vec<LayerParams<DualReal>> = p.layer_params();
        let dual = scm_forward_with(&f.lift(), &s.lift(), &layers, &p, &g).unwrap();
        let plain = scm_forward(&f, &s, &p, &g).unwrap();
        assert_eq!(dual.last_semantic().values(), *plain.last_semantic());
    }

    #[test]
    fn dual_agrees_with_central_difference() {
        for seed in 0..6 {
            let (f, s, g) = fixture(100 + seed, 3, 3, 3);
            let mut p = DiffusionParams::uniform(2, 0.8, 0.4);
            p.alpha = 0.02;
            for target in [ParamTarget::lambda(0), ParamTarget::beta(1), ParamTarget::lambda(1)] {
                let d = dual_sensitivity(&f, &s, &p, &g, 0, target).unwrap();
                let fd = finite_difference(&f, &s, &p, &g, 0, target, 1e-5).unwrap();
                assert!(relative_error(d, fd) <= 1e-4, "{target}: dual {d} fd {fd}");
            }
        }
    }

    #[test]
    fn halving_the_step_is_second_order() {
        let (f, s, g) = fixture(7, 3, 3, 2);
        let mut p = DiffusionParams::uniform(1, 0.8, 0.4);
        p.alpha = 0.02;
        let t = ParamTarget::beta(0);
        let d = dual_sensitivity(&f, &s, &p, &g, 1, t).unwrap();
        let e1 = (finite_difference(&f, &s, &p, &g, 1, t, 0.02).unwrap() - d).abs();
        let e2 = (finite_difference(&f, &s, &p, &g, 1, t, 0.01).unwrap() - d).abs();
        let ratio = e1 / e2;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn target_display_is_one_based() {
        assert_eq!(ParamTarget::lambda(0).to_string(), "lambda_1");
        assert_eq!("beta".parse::<ParamKind>().unwrap(), ParamKind::Beta);
    }
}
