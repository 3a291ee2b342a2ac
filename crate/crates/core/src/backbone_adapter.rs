//! Rebuilds the calibration inputs from exported transformer internals: the
//! class-token attention map `F0` and the per-class semantic map `S0`.

use crate::error::{Result, ScmError};
use crate::linalg::DenseMatrix;
use crate::maps::{ScoreMap, SemanticMap};
use crate::tensor_store::Tensor;

/// Head-averaged self-attention matrices of every transformer layer, each
/// `(N+1) x (N+1)` with the class token at index 0.
#[derive(Debug, Clone)]
pub struct AttentionStack {
    layers: Vec<DenseMatrix>,
    grid: (usize, usize),
}

impl AttentionStack {
    pub fn new(layers: Vec<DenseMatrix>, grid: (usize, usize)) -> Result<Self> {
        let n = grid.0 * grid.1;
        if n == 0 {
            return Err(ScmError::Shape(format!("empty patch grid {grid:?}")));
        }
        for (i, m) in layers.iter().enumerate() {
            if m.rows() != n + 1 || m.cols() != n + 1 {
                return Err(ScmError::Shape(format!(
                    "layer {i} is {}x{}, expected {}x{} for a {}x{} grid",
                    m.rows(),
                    m.cols(),
                    n + 1,
                    n + 1,
                    grid.0,
                    grid.1
                )));
            }
            if !m.all_finite() {
                return Err(ScmError::Validation(format!(
                    "layer {i} has non-finite attention weights"
                )));
            }
        }
        Ok(Self { layers, grid })
    }

    /// Splits an `I x (N+1) x (N+1)` tensor. Without an explicit grid the
    /// patch count must be a perfect square.
    pub fn from_tensor(t: &Tensor, grid: Option<(usize, usize)>) -> Result<Self> {
        let [layers, rows, cols] = t.dims() else {
            return Err(ScmError::Shape(format!(
                "attention stack needs a rank-3 tensor, got dims {:?}",
                t.dims()
            )));
        };
        let (layers, rows, cols) = (*layers, *rows, *cols);
        if rows != cols || rows < 2 {
            return Err(ScmError::Shape(format!(
                "attention matrices must be square with N >= 1, got {rows}x{cols}"
            )));
        }
        let n = rows - 1;
        let grid = match grid {
            Some(g) => g,
            None => {
                let side = (n as f64).sqrt().round() as usize;
                if side * side != n {
                    return Err(ScmError::Shape(format!(
                        "{n} patches is not a square grid; pass the grid explicitly"
                    )));
                }
                (side, side)
            }
        };
        let data = t.to_f64();
        let per_layer = rows * cols;
        let mats = data
            .chunks_exact(per_layer)
            .take(layers)
            .map(|c| DenseMatrix::from_row_major(rows, cols, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(mats, grid)
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

/// Last-layer patch tokens (class token excluded), one row per patch.
#[derive(Debug, Clone)]
pub struct TokenGrid {
    tokens: DenseMatrix,
    grid: (usize, usize),
}

impl TokenGrid {
    pub fn new(tokens: DenseMatrix, grid: (usize, usize)) -> Result<Self> {
        if tokens.rows() != grid.0 * grid.1 {
            return Err(ScmError::Shape(format!(
                "{} tokens for a {}x{} grid",
                tokens.rows(),
                grid.0,
                grid.1
            )));
        }
        Ok(Self { tokens, grid })
    }

    pub fn from_tensor(t: &Tensor, grid: (usize, usize)) -> Result<Self> {
        let [n, din] = t.dims() else {
            return Err(ScmError::Shape(format!(
                "tokens need a rank-2 tensor, got dims {:?}",
                t.dims()
            )));
        };
        Self::new(DenseMatrix::from_row_major(*n, *din, t.to_f64())?, grid)
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }
}

/// 3x3 convolution head mapping token features to class channels.
/// Kernel layout is `[ky][kx][din][class]`, row-major.
#[derive(Debug, Clone)]
pub struct SemanticHead {
    kernel: Vec<f64>,
    bias: Vec<f64>,
    in_dim: usize,
    classes: usize,
}

impl SemanticHead {
    pub const KERNEL: usize = 3;

    pub fn new(kernel: Vec<f64>, bias: Vec<f64>, in_dim: usize) -> Result<Self> {
        let classes = bias.len();
        if classes == 0 || in_dim == 0 {
            return Err(ScmError::Shape("head needs at least one input and one class".into()));
        }
        if kernel.len() != 9 * in_dim * classes {
            return Err(ScmError::Shape(format!(
                "kernel has {} weights, expected 3x3x{in_dim}x{classes}",
                kernel.len()
            )));
        }
        Ok(Self {
            kernel,
            bias,
            in_dim,
            classes,
        })
    }

    pub fn from_tensors(kernel: &Tensor, bias: &Tensor) -> Result<Self> {
        let [kh, kw, din, c] = kernel.dims() else {
            return Err(ScmError::Shape(format!(
                "kernel needs a rank-4 tensor, got dims {:?}",
                kernel.dims()
            )));
        };
        if (*kh, *kw) != (Self::KERNEL, Self::KERNEL) {
            return Err(ScmError::Shape(format!(
                "spatial kernel must be 3x3, got {kh}x{kw}"
            )));
        }
        if bias.dims() != [*c] {
            return Err(ScmError::Shape(format!(
                "bias dims {:?} do not match {c} classes",
                bias.dims()
            )));
        }
        Self::new(kernel.to_f64(), bias.to_f64(), *din)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    fn weight(&self, ky: usize, kx: usize, d: usize, k: usize) -> f64 {
        self.kernel[((ky * Self::KERNEL + kx) * self.in_dim + d) * self.classes + k]
    }
}

/// Mean over layers of the class-token query row (row 0, columns 1..=N),
/// reshaped row-major onto the patch grid. Rows are not renormalized after
/// dropping the class-to-class weight.
pub fn assemble_attention(stack: &AttentionStack) -> Result<ScoreMap> {
    if stack.layers.is_empty() {
        return Err(ScmError::Shape("attention stack has no layers".into()));
    }
    let (h, w) = stack.grid;
    let n = h * w;
    let mut acc = vec![0.0; n];
    for layer in &stack.layers {
        for (a, &v) in acc.iter_mut().zip(&layer.row(0)[1..]) {
            *a += v;
        }
    }
    let count = stack.layers.len() as f64;
    ScoreMap::new(h, w, acc.into_iter().map(|v| v / count).collect())
}

/// 3x3 convolution, stride 1, zero padding 1, plus per-channel bias.
pub fn apply_semantic_head(tokens: &TokenGrid, head: &SemanticHead) -> Result<SemanticMap> {
    if tokens.dim() != head.in_dim {
        return Err(ScmError::Shape(format!(
            "tokens have {} features, head expects {}",
            tokens.dim(),
            head.in_dim
        )));
    }
    let (h, w) = tokens.grid;
    let c = head.classes;
    let mut out = Vec::with_capacity(h * w * c);
    let mut acc = vec![0.0; c];
    for r in 0..h {
        for col in 0..w {
            acc.copy_from_slice(&head.bias);
            for ky in 0..3 {
                let Some(rr) = (r + ky).checked_sub(1).filter(|&rr| rr < h) else {
                    continue;
                };
                for kx in 0..3 {
                    let Some(cc) = (col + kx).checked_sub(1).filter(|&cc| cc < w) else {
                        continue;
                    };
                    let token = tokens.tokens.row(rr * w + cc);
                    for (d, &x) in token.iter().enumerate() {
                        if x == 0.0 {
                            continue;
                        }
                        for (k, a) in acc.iter_mut().enumerate() {
                            *a += x * head.weight(ky, kx, d, k);
                        }
                    }
                }
            }
            out.extend_from_slice(&acc);
        }
    }
    SemanticMap::new(h, w, c, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer_with_cls_row(n: usize, row: &[f64]) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(n + 1, n + 1);
        for (j, &v) in row.iter().enumerate() {
            m[(0, j)] = v;
        }
        m
    }

    #[test]
    fn uniform_attention_gives_constant_map() {
        let n = 4;
        let row = vec![1.0 / 5.0; 5];
        let stack = AttentionStack::new(vec![layer_with_cls_row(n, &row)], (2, 2)).unwrap();
        let f = assemble_attention(&stack).unwrap();
        assert!(f.as_slice().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn two_layers_average() {
        let a = [0.1, 0.2, 0.3, 0.4, 0.0];
        let b = [0.5, 0.0, 0.1, 0.2, 0.2];
        let stack = AttentionStack::new(
            vec![layer_with_cls_row(4, &a), layer_with_cls_row(4, &b)],
            (2, 2),
        )
        .unwrap();
        let f = assemble_attention(&stack).unwrap();
        for i in 0..4 {
            assert!((f.as_slice()[i] - (a[i + 1] + b[i + 1]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn three_layers_hand_mean() {
        // CLS rows (CLS entry first); hand means of the patch entries:
        // (0.1+0.3+0.2)/3, (0.2+0.1+0.3)/3, (0.3+0.2+0.1)/3, (0.3+0.3+0.3)/3
        let rows = [
            [0.1, 0.1, 0.2, 0.3, 0.3],
            [0.1, 0.3, 0.1, 0.2, 0.3],
            [0.1, 0.2, 0.3, 0.1, 0.3],
        ];
        let layers = rows.iter().map(|r| layer_with_cls_row(4, r)).collect();
        let f = assemble_attention(&AttentionStack::new(layers, (2, 2)).unwrap()).unwrap();
        let expected = [0.2, 0.2, 0.2, 0.3];
        for (got, want) in f.as_slice().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn inconsistent_layers_rejected() {
        let res = AttentionStack::new(
            vec![DenseMatrix::zeros(5, 5), DenseMatrix::zeros(4, 4)],
            (2, 2),
        );
        assert!(matches!(res, Err(ScmError::Shape(_))));
    }

    #[test]
    fn empty_stack_rejected() {
        let stack = AttentionStack::new(vec![], (2, 2)).unwrap();
        assert!(assemble_attention(&stack).is_err());
    }

    fn head_with(din: usize, c: usize, f: impl Fn(usize, usize, usize, usize) -> f64, bias: Vec<f64>) -> SemanticHead {
        let mut k = Vec::new();
        for ky in 0..3 {
            for kx in 0..3 {
                for d in 0..din {
                    for cc in 0..c {
                        k.push(f(ky, kx, d, cc));
                    }
                }
            }
        }
        SemanticHead::new(k, bias, din).unwrap()
    }

    #[test]
    fn delta_kernel_copies_channel() {
        let (din, c) = (3, 2);
        let tokens = DenseMatrix::from_fn(6, din, |i, d| (i * 10 + d) as f64);
        let tg = TokenGrid::new(tokens, (2, 3)).unwrap();
        let head = head_with(din, c, |ky, kx, d, cc| f64::from(ky == 1 && kx == 1 && d == 2 && cc == 1), vec![0.0; c]);
        let s = apply_semantic_head(&tg, &head).unwrap();
        assert_eq!((s.height(), s.width(), s.channels()), (2, 3, 2));
        for i in 0..6 {
            assert_eq!(s.patch(i)[1], (i * 10 + 2) as f64);
            assert_eq!(s.patch(i)[0], 0.0);
        }
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let tg = TokenGrid::new(DenseMatrix::from_fn(4, 2, |i, d| (i + d) as f64), (2, 2)).unwrap();
        let head = head_with(2, 3, |_, _, _, _| 0.0, vec![0.5, -1.0, 2.0]);
        let s = apply_semantic_head(&tg, &head).unwrap();
        for i in 0..4 {
            assert_eq!(s.patch(i), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn ones_kernel_counts_padded_neighbours() {
        let tg = TokenGrid::new(DenseMatrix::from_fn(16, 1, |_, _| 1.0), (4, 4)).unwrap();
        let head = head_with(1, 1, |_, _, _, _| 1.0, vec![0.0]);
        let s = apply_semantic_head(&tg, &head).unwrap();
        let ch = s.channel(0).unwrap();
        assert_eq!(ch.get(0, 0), 4.0);
        assert_eq!(ch.get(0, 3), 4.0);
        assert_eq!(ch.get(3, 3), 4.0);
        assert_eq!(ch.get(0, 1), 6.0);
        assert_eq!(ch.get(2, 0), 6.0);
        assert_eq!(ch.get(1, 1), 9.0);
        assert_eq!(ch.get(2, 2), 9.0);
    }

    #[test]
    fn head_dim_mismatch() {
        let tg = TokenGrid::new(DenseMatrix::zeros(4, 3), (2, 2)).unwrap();
        let head = head_with(2, 1, |_, _, _, _| 0.0, vec![0.0]);
        assert!(matches!(apply_semantic_head(&tg, &head), Err(ScmError::Shape(_))));
    }

    #[test]
    fn attention_is_linear_in_the_stack() {
        let row: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let scaled: Vec<f64> = row.iter().map(|v| v * 2.5).collect();
        let a = assemble_attention(&AttentionStack::new(vec![layer_with_cls_row(9, &row)], (3, 3)).unwrap()).unwrap();
        let b = assemble_attention(&AttentionStack::new(vec![layer_with_cls_row(9, &scaled)], (3, 3)).unwrap()).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x * 2.5 - y).abs() < 1e-14);
        }
    }
}
