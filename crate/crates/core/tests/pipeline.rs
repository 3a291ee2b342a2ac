use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scm_core::adb::{build_laplacian, newton_schulz, scm_forward, semantic_similarity};
use scm_core::backbone_adapter::{apply_semantic_head, assemble_attention, AttentionStack, SemanticHead, TokenGrid};
use scm_core::metrics::{iou, predict_image};
use scm_core::patch_graph::build_grid_graph;
use scm_core::{BBox, DenseMatrix, DiffusionParams, LaplacianSign, Tensor};

const H: usize = 6;
const W: usize = 6;
const D: usize = 3;
const CLASSES: usize = 3;

/// Attention focused on a 2x3 block at rows 1..3, columns 2..5, with tokens
/// carrying feature 1 there and a down-weighted feature 0 elsewhere.
fn backbone() -> (Tensor, Tensor, Tensor, Tensor) {
    let n = H * W;
    let inside = |p: usize| (1..3).contains(&(p / W)) && (2..5).contains(&(p % W));
    let mut attn = Vec::new();
    for layer in 0..2 {
        for q in 0..=n {
            let row: Vec<f64> = (0..=n)
                .map(|k| match (q, k) {
                    (0, 0) => 1.0,
                    (0, k) if inside(k - 1) => 4.0 + layer as f64,
                    _ => 1.0,
                })
                .collect();
            let sum: f64 = row.iter().sum();
            attn.extend(row.iter().map(|v| v / sum));
        }
    }
    let attn = Tensor::from_f64(vec![2, n + 1, n + 1], &attn).unwrap();
    let tokens: Vec<f64> = (0..n)
        .flat_map(|p| (0..D).map(move |d| if d == usize::from(inside(p)) { 1.0 } else { 0.0 }))
        .collect();
    let tokens = Tensor::from_f64(vec![n, D], &tokens).unwrap();
    let mut kernel = vec![0.0; 9 * D * CLASSES];
    for (d, weight) in [(0, 0.1), (1, 1.0), (2, 1.0)] {
        kernel[(4 * D + d) * CLASSES + d] = weight;
    }
    let kernel = Tensor::from_f64(vec![3, 3, D, CLASSES], &kernel).unwrap();
    let bias = Tensor::from_f64(vec![CLASSES], &[0.0, 0.0, 0.0]).unwrap();
    (attn, tokens, kernel, bias)
}

#[test]
fn calibrated_box_covers_the_attended_block() {
    let (attn, tokens, kernel, bias) = backbone();
    let f0 = assemble_attention(&AttentionStack::from_tensor(&attn, None).unwrap()).unwrap();
    let head = SemanticHead::from_tensors(&kernel, &bias).unwrap();
    let s0 = apply_semantic_head(&TokenGrid::from_tensor(&tokens, (H, W)).unwrap(), &head).unwrap();
    assert_eq!((f0.height(), f0.width(), s0.channels()), (H, W, CLASSES));

    let g = build_grid_graph(H, W).unwrap();
    let trace = scm_forward(&f0, &s0, &DiffusionParams::default(), &g).unwrap();
    assert_eq!(trace.f.len(), 5);

    let pred = predict_image(trace.f.last().unwrap(), trace.last_semantic(), 60, 60, 0.5).unwrap();
    let truth = BBox::new(20, 10, 50, 30).unwrap();
    let found = pred.bbox.expect("foreground present");
    assert!(iou(&found, &truth) >= 0.5, "{found} vs {truth}");
    assert_eq!(pred.class_idx, 1);
}

#[test]
fn ns_iterate_matches_closed_form_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = build_grid_graph(3, 4).unwrap();
    let s = scm_core::SemanticMap::from_fn(3, 4, 2, |_, _, _| rng.random_range(-1.0..1.0));
    let e = semantic_similarity(&s);
    for sign in [LaplacianSign::Main, LaplacianSign::Appendix] {
        let lap = build_laplacian(&g, &e, 0.8, sign).unwrap();
        let alpha = 0.01;
        for p in 0..5 {
            let x = newton_schulz(&lap, alpha, p).unwrap();
            let n = lap.l.rows();
            let r = DenseMatrix::identity(n).sub(&lap.l.matmul(&lap.l.transpose()).scaled(alpha));
            let mut rp = DenseMatrix::identity(n);
            for _ in 0..1 << p {
                rp = rp.matmul(&r);
            }
            let lhs = lap.l.matmul(&x);
            let rhs = DenseMatrix::identity(n).sub(&rp);
            assert!(lhs.sub(&rhs).norm_max() < 1e-12, "{sign} p = {p}");
        }
    }
}
