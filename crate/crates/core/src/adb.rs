//! Activation diffusion blocks and the calibration stack built from them.
//!
//! One block runs, in order: cosine similarity between patch vectors of the
//! semantic map, the semantics-coupled Laplacian `(D - A) * (lambda E - 1)`
//! (Hadamard product), a truncated Newton-Schulz approximation of its
//! inverse, diffusion of the attention map through that approximation, the
//! tanh-shrink filter, and finally the semantic-map update.
//!
//! Everything is generic over [`Real`] so the sensitivity pass can push dual
//! numbers through the exact same code.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, ScmError};
use crate::linalg::DenseMatrix;
use crate::maps::{ScoreMap, SemanticMap};
use crate::patch_graph::{flatten, unflatten, PatchGraph};
use crate::scalar::Real;

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 0.002;
pub const DEFAULT_ITERATIONS: usize = 4;
pub const DEFAULT_LAYERS: usize = 4;

/// Which way round the semantic coupling term is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LaplacianSign {
    /// `(D - A) * (lambda E - 1)`
    #[default]
    Main,
    /// `(D - A) * (1 - lambda E)`, the shifted Laplacian of the flow model.
    Appendix,
}

impl FromStr for LaplacianSign {
    type Err = ScmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(LaplacianSign::Main),
            "appendix" => Ok(LaplacianSign::Appendix),
            other => Err(ScmError::Argument(format!(
                "unknown Laplacian sign {other:?} (expected main or appendix)"
            ))),
        }
    }
}

impl fmt::Display for LaplacianSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LaplacianSign::Main => "main",
            LaplacianSign::Appendix => "appendix",
        })
    }
}

/// Which map the tanh-shrink filter reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterInput {
    /// Filter the diffused map; its output feeds both residual updates.
    #[default]
    Diffused,
    /// Filter the block input: the attention output is the raw diffused map
    /// and only the semantic update sees the filtered input.
    Input,
}

impl FromStr for FilterInput {
    type Err = ScmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffused" => Ok(FilterInput::Diffused),
            "input" => Ok(FilterInput::Input),
            other => Err(ScmError::Argument(format!(
                "unknown filter input {other:?} (expected diffused or input)"
            ))),
        }
    }
}

impl fmt::Display for FilterInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterInput::Diffused => "diffused",
            FilterInput::Input => "input",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionParams {
    /// Per-layer semantic intensity.
    pub lambda: Vec<f64>,
    /// Per-layer filter threshold, each in (0, 1).
    pub beta: Vec<f64>,
    /// Newton-Schulz seed scale.
    pub alpha: f64,
    /// Newton-Schulz iterations per block.
    pub iterations: usize,
    pub residual_f: bool,
    pub residual_s: bool,
    pub laplacian_sign: LaplacianSign,
    pub filter_input: FilterInput,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self::uniform(DEFAULT_LAYERS, DEFAULT_LAMBDA, DEFAULT_BETA)
    }
}

impl DiffusionParams {
    pub fn uniform(layers: usize, lambda: f64, beta: f64) -> Self {
        Self {
            lambda: vec![lambda; layers],
            beta: vec![beta; layers],
            alpha: DEFAULT_ALPHA,
            iterations: DEFAULT_ITERATIONS,
            residual_f: true,
            residual_s: true,
            laplacian_sign: LaplacianSign::Main,
            filter_input: FilterInput::Diffused,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.lambda.len()
    }

    /// Zero layers is accepted and yields the identity stack.
    pub fn validate(&self) -> Result<()> {
        if self.lambda.len() != self.beta.len() {
            return Err(ScmError::Argument(format!(
                "{} lambda values but {} beta values",
                self.lambda.len(),
                self.beta.len()
            )));
        }
        if let Some((l, b)) = self
            .beta
            .iter()
            .enumerate()
            .find(|(_, &b)| !(b > 0.0 && b < 1.0))
        {
            return Err(ScmError::Argument(format!(
                "beta of layer {} is {b}, must lie in (0, 1)",
                l + 1
            )));
        }
        if !self.lambda.iter().all(|v| v.is_finite()) {
            return Err(ScmError::Argument("lambda values must be finite".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ScmError::Argument(format!(
                "alpha is {}, must be positive",
                self.alpha
            )));
        }
        if self.iterations == 0 {
            return Err(ScmError::Argument("Newton-Schulz needs at least one iteration".into()));
        }
        Ok(())
    }

    pub fn layer_params<T: Real>(&self) -> Vec<LayerParams<T>> {
        self.lambda
            .iter()
            .zip(&self.beta)
            .map(|(&l, &b)| LayerParams {
                lambda: T::from_f64(l),
                beta: T::from_f64(b),
            })
            .collect()
    }
}

/// The learnable scalars of one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerParams<T = f64> {
    pub lambda: T,
    pub beta: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T = f64> {
    pub e: DenseMatrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix<T = f64> {
    pub l: DenseMatrix<T>,
    pub lambda_used: T,
}

impl LaplacianMatrix<f64> {
    pub fn from_matrix(l: DenseMatrix) -> Self {
        Self {
            l,
            lambda_used: f64::NAN,
        }
    }
}

/// Pairwise cosine similarity of the per-patch channel vectors.
///
/// Zero vectors have similarity 0 with everything, themselves included.
/// Identical and exactly opposite vectors are assigned 1 and -1 without
/// going through the division, which keeps the `E == 1` null case exact.
pub fn semantic_similarity<T: Real>(s: &SemanticMap<T>) -> SimilarityMatrix<T> {
    let n = s.num_patches();
    let norms: Vec<T> = (0..n)
        .map(|i| s.patch(i).iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt())
        .collect();
    let mut e = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let vi = s.patch(i);
        if norms[i].value() == 0.0 {
            continue;
        }
        for j in i..n {
            if norms[j].value() == 0.0 {
                continue;
            }
            let vj = s.patch(j);
            let sim = if vi == vj {
                T::one()
            } else if vi.iter().zip(vj).all(|(&a, &b)| a == -b) {
                -T::one()
            } else {
                let dot = vi.iter().zip(vj).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                let c = dot / (norms[i] * norms[j]);
                if c.value() > 1.0 {
                    T::one()
                } else if c.value() < -1.0 {
                    -T::one()
                } else {
                    c
                }
            };
            e[(i, j)] = sim;
            e[(j, i)] = sim;
        }
    }
    SimilarityMatrix { e }
}

/// Hadamard product of the graph Laplacian `D - A` with the semantic
/// coupling term; only the diagonal and graph edges can be non-zero.
pub fn build_laplacian<T: Real>(
    g: &PatchGraph,
    sim: &SimilarityMatrix<T>,
    lambda: T,
    sign: LaplacianSign,
) -> Result<LaplacianMatrix<T>> {
    let n = g.num_nodes();
    if sim.e.rows() != n || sim.e.cols() != n {
        return Err(ScmError::Shape(format!(
            "similarity is {}x{}, graph has {n} nodes",
            sim.e.rows(),
            sim.e.cols()
        )));
    }
    let coupling = |e: T| match sign {
        LaplacianSign::Main => lambda * e - T::one(),
        LaplacianSign::Appendix => T::one() - lambda * e,
    };
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let deg = g.degree(i);
        if deg > 0 {
            l[(i, i)] = coupling(sim.e[(i, i)]).scale(deg as f64);
        }
        for &j in g.neighbors(i) {
            l[(i, j)] = -coupling(sim.e[(i, j)]);
        }
    }
    Ok(LaplacianMatrix {
        l,
        lambda_used: lambda,
    })
}

/// `X_0 = alpha L^T`, then `X_{k+1} = X_k (2I - L X_k)` for `iterations` steps.
pub fn newton_schulz<T: Real>(
    lap: &LaplacianMatrix<T>,
    alpha: f64,
    iterations: usize,
) -> Result<DenseMatrix<T>> {
    let l = &lap.l;
    if !l.is_square() {
        return Err(ScmError::Shape(format!(
            "Newton-Schulz needs a square matrix, got {}x{}",
            l.rows(),
            l.cols()
        )));
    }
    let mut x = l.transpose().map(|v| v.scale(alpha));
    for k in 0..iterations {
        x = newton_schulz_step(l, &x);
        if !x.all_finite() {
            return Err(ScmError::Numeric(format!(
                "non-finite entry after Newton-Schulz iteration {}",
                k + 1
            )));
        }
    }
    Ok(x)
}

/// One update `X (2I - L X)`.
pub fn newton_schulz_step<T: Real>(l: &DenseMatrix<T>, x: &DenseMatrix<T>) -> DenseMatrix<T> {
    let mut m = l.matmul(x).map(|v| -v);
    for i in 0..m.rows() {
        m[(i, i)] += T::from_f64(2.0);
    }
    x.matmul(&m)
}

pub fn diffuse<T: Real>(f: &ScoreMap<T>, x: &DenseMatrix<T>, g: &PatchGraph) -> Result<ScoreMap<T>> {
    let n = g.num_nodes();
    if f.len() != n || x.rows() != n || x.cols() != n {
        return Err(ScmError::Shape(format!(
            "diffusion of a {}x{} map with a {}x{} operator on {n} nodes",
            f.height(),
            f.width(),
            x.rows(),
            x.cols()
        )));
    }
    unflatten(x.matvec(&flatten(f)), g.height(), g.width())
}

/// `T(x, beta) = x - beta tanh(x / beta)`, elementwise.
pub fn dynamic_filter<T: Real>(f: &ScoreMap<T>, beta: T) -> ScoreMap<T> {
    f.map(|x| tanh_shrink(x, beta))
}

#[inline]
pub fn tanh_shrink<T: Real>(x: T, beta: T) -> T {
    x - beta * (x / beta).tanh()
}

/// Outputs of a single block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdbStep<T = f64> {
    pub f: ScoreMap<T>,
    pub s: SemanticMap<T>,
    /// Diffused map before filtering.
    pub diffused: ScoreMap<T>,
}

pub fn adb_forward<T: Real>(
    f: &ScoreMap<T>,
    s: &SemanticMap<T>,
    layer: LayerParams<T>,
    params: &DiffusionParams,
    g: &PatchGraph,
) -> Result<AdbStep<T>> {
    if (f.height(), f.width()) != (g.height(), g.width())
        || (s.height(), s.width()) != (g.height(), g.width())
    {
        return Err(ScmError::Shape(format!(
            "maps {}x{} / {}x{} do not match the {}x{} graph",
            f.height(),
            f.width(),
            s.height(),
            s.width(),
            g.height(),
            g.width()
        )));
    }
    let sim = semantic_similarity(s);
    let lap = build_laplacian(g, &sim, layer.lambda, params.laplacian_sign)?;
    let x = newton_schulz(&lap, params.alpha, params.iterations)?;
    let diffused = diffuse(f, &x, g)?;

    let (f_next_base, gate) = match params.filter_input {
        FilterInput::Diffused => {
            let filtered = dynamic_filter(&diffused, layer.beta);
            (filtered.clone(), filtered)
        }
        FilterInput::Input => (diffused.clone(), dynamic_filter(f, layer.beta)),
    };

    let f_next = if params.residual_f {
        f.zip_with(&f_next_base, |a, b| a + b)?
    } else {
        f_next_base
    };
    let s_next = if params.residual_s {
        s.scale_patches(&gate.map(|v| T::one() + v))?
    } else {
        s.scale_patches(&gate)?
    };
    Ok(AdbStep {
        f: f_next,
        s: s_next,
        diffused,
    })
}

/// Maps after every block; index 0 holds the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmTrace<T = f64> {
    pub f: Vec<ScoreMap<T>>,
    pub s: Vec<SemanticMap<T>>,
    /// Pre-filter diffused map of each block (one fewer entry than `f`).
    pub diffused: Vec<ScoreMap<T>>,
}

impl<T: Real> ScmTrace<T> {
    pub fn num_layers(&self) -> usize {
        self.diffused.len()
    }

    pub fn last_semantic(&self) -> &SemanticMap<T> {
        self.s.last().expect("trace always holds the inputs")
    }
}

pub fn scm_forward(
    f0: &ScoreMap,
    s0: &SemanticMap,
    params: &DiffusionParams,
    g: &PatchGraph,
) -> Result<ScmTrace> {
    params.validate()?;
    scm_forward_with(f0, s0, &params.layer_params::<f64>(), params, g)
}

/// Stack with explicitly supplied per-layer scalars (possibly dual numbers);
/// the remaining block settings come from `params`.
pub fn scm_forward_with<T: Real>(
    f0: &ScoreMap<T>,
    s0: &SemanticMap<T>,
    layers: &[LayerParams<T>],
    params: &DiffusionParams,
    g: &PatchGraph,
) -> Result<ScmTrace<T>> {
    let mut trace = ScmTrace {
        f: vec![f0.clone()],
        s: vec![s0.clone()],
        diffused: Vec::with_capacity(layers.len()),
    };
    for &layer in layers {
        let step = adb_forward(
            trace.f.last().expect("non-empty"),
            trace.s.last().expect("non-empty"),
            layer,
            params,
            g,
        )?;
        trace.f.push(step.f);
        trace.s.push(step.s);
        trace.diffused.push(step.diffused);
    }
    Ok(trace)
}

/// Global average pooling per channel.
pub fn gap_logits<T: Real>(s: &SemanticMap<T>) -> Vec<T> {
    let c = s.channels();
    let n = s.num_patches();
    let mut sums = vec![T::zero(); c];
    for i in 0..n {
        for (acc, &v) in sums.iter_mut().zip(s.patch(i)) {
            *acc += v;
        }
    }
    sums.into_iter().map(|v| v.scale(1.0 / n as f64)).collect()
}
