//! Reference implementation of the calibration stack that reaches the
//! diffused map through a dense linear solve instead of matrix products:
//! after `p` Newton-Schulz steps from `alpha L^T`, `L X_p = I - R^(2^p)`
//! with `R = I - alpha L L^T`, so `X_p f = L^{-1} (f - R^(2^p) f)`.

#![allow(dead_code)]

use scm_core::flow_oracle::solve_dense;
use scm_core::{DenseMatrix, ScoreMap, SemanticMap};

pub struct ReferenceTrace {
    pub f: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn neighbours(h: usize, w: usize, i: usize) -> Vec<usize> {
    let (r, c) = (i / w, i % w);
    let mut out = Vec::new();
    if r > 0 {
        out.push(i - w);
    }
    if c > 0 {
        out.push(i - 1);
    }
    if c + 1 < w {
        out.push(i + 1);
    }
    if r + 1 < h {
        out.push(i + w);
    }
    out
}

/// Semantics-coupled operator with the `lambda * E - 1` weighting.
pub fn coupled_operator(h: usize, w: usize, s: &[f64], c: usize, lambda: f64) -> DenseMatrix {
    let n = h * w;
    let patch = |i: usize| &s[i * c..(i + 1) * c];
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let nb = neighbours(h, w, i);
        l[(i, i)] = nb.len() as f64 * (lambda * cosine(patch(i), patch(i)) - 1.0);
        for j in nb {
            l[(i, j)] = -(lambda * cosine(patch(i), patch(j)) - 1.0);
        }
    }
    l
}

/// `X_p f` via `L^{-1} (f - R^(2^p) f)`.
pub fn diffuse_by_solve(l: &DenseMatrix, f: &[f64], alpha: f64, iterations: usize) -> Vec<f64> {
    let lt = l.transpose();
    let mut v = f.to_vec();
    for _ in 0..(1usize << iterations) {
        let llt_v = l.matvec(&lt.matvec(&v));
        v = v.iter().zip(&llt_v).map(|(a, b)| a - alpha * b).collect();
    }
    let rhs: Vec<f64> = f.iter().zip(&v).map(|(a, b)| a - b).collect();
    solve_dense(l, &rhs).expect("reference operator must be invertible")
}

/// Default block: filter the diffused map, additive and gated residuals.
pub fn reference_trace(
    f0: &ScoreMap,
    s0: &SemanticMap,
    lambda: &[f64],
    beta: &[f64],
    alpha: f64,
    iterations: usize,
) -> ReferenceTrace {
    let (h, w, c) = (s0.height(), s0.width(), s0.channels());
    let mut f = vec![f0.as_slice().to_vec()];
    let mut s = vec![s0.as_slice().to_vec()];
    for (&lam, &b) in lambda.iter().zip(beta) {
        let (fl, sl) = (f.last().unwrap(), s.last().unwrap());
        let l = coupled_operator(h, w, sl, c, lam);
        let d = diffuse_by_solve(&l, fl, alpha, iterations);
        let filtered: Vec<f64> = d.iter().map(|&x| x - b * (x / b).tanh()).collect();
        let f_next: Vec<f64> = fl.iter().zip(&filtered).map(|(a, g)| a + g).collect();
        let s_next: Vec<f64> = sl
            .chunks_exact(c)
            .zip(&filtered)
            .flat_map(|(p, g)| p.iter().map(move |v| v * (1.0 + g)))
            .collect();
        f.push(f_next);
        s.push(s_next);
    }
    ReferenceTrace { f, s }
}
