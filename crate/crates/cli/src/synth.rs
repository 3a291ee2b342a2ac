//! Seeded planted-rectangle fixtures in the tensor-directory layout.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use scm_core::tensor_store::write_annotations;
use scm_core::{Annotation, BBox, Tensor};

use crate::dataset::{attn_file, create_dir, save_tensor, tokens_file, ANNOTATIONS, HEAD_BIAS, HEAD_KERNEL};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    pub grid: (usize, usize),
    pub patch: usize,
    pub classes: usize,
    /// Token width; must exceed `classes` to leave a background feature.
    pub dim: usize,
    pub vit_layers: usize,
    pub noise: f64,
    /// Extra CLS logit on object patches.
    pub boost: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 10,
            seed: 0,
            grid: (14, 14),
            patch: 16,
            classes: 4,
            dim: 8,
            vit_layers: 4,
            noise: 0.1,
            boost: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub annotation: Annotation,
    pub attention: Tensor,
    pub tokens: Tensor,
}

#[derive(Debug, Clone)]
pub struct SynthSet {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub images: Vec<SynthImage>,
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    let bad = |m: &str| Err(CliError::Input(format!("synth: {m}")));
    if cfg.grid.0 < 3 || cfg.grid.1 < 3 {
        return bad("grid must be at least 3x3");
    }
    if cfg.classes == 0 || cfg.dim <= cfg.classes {
        return bad("need at least one class and dim > classes");
    }
    if cfg.patch == 0 || cfg.vit_layers == 0 {
        return bad("patch size and layer count must be positive");
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return bad("noise must be non-negative");
    }
    Ok(())
}

/// Centre tap maps feature `d < classes` to class `d`; everything else is 0.
fn head(cfg: &SynthConfig) -> Result<(Tensor, Tensor)> {
    let (din, c) = (cfg.dim, cfg.classes);
    let centre = 3 + 1;
    let mut kernel = vec![0.0f64; 9 * din * c];
    for d in 0..c {
        kernel[(centre * din + d) * c + d] = 1.0;
    }
    Ok((
        Tensor::from_f64(vec![3, 3, din, c], &kernel)?,
        Tensor::from_f64(vec![c], &vec![0.0; c])?,
    ))
}

fn image(cfg: &SynthConfig, index: usize) -> Result<SynthImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let (h, w) = cfg.grid;
    let n = h * w;
    let side = |rng: &mut ChaCha8Rng, extent: usize| rng.random_range(3..=8.min(extent - 1));
    let (rh, rw) = (side(&mut rng, h), side(&mut rng, w));
    let r0 = rng.random_range(0..=h - rh);
    let c0 = rng.random_range(0..=w - rw);
    let label = rng.random_range(0..cfg.classes);
    let inside = |p: usize| (r0..r0 + rh).contains(&(p / w)) && (c0..c0 + rw).contains(&(p % w));

    let noise = Normal::new(0.0, cfg.noise).map_err(|e| CliError::Input(e.to_string()))?;
    let logit_noise = Normal::new(0.0, 0.5).map_err(|e| CliError::Input(e.to_string()))?;

    let t = n + 1;
    let mut attn = Vec::with_capacity(cfg.vit_layers * t * t);
    let mut row = vec![0.0f64; t];
    for _ in 0..cfg.vit_layers {
        for i in 0..t {
            for (j, z) in row.iter_mut().enumerate() {
                *z = logit_noise.sample(&mut rng);
                if i == 0 && j > 0 && inside(j - 1) {
                    *z += cfg.boost;
                }
            }
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|z| (z - m).exp()).sum();
            attn.extend(row.iter().map(|z| (z - m).exp() / sum));
        }
    }

    let mut tokens = vec![0.0f64; n * cfg.dim];
    for (p, tok) in tokens.chunks_exact_mut(cfg.dim).enumerate() {
        for v in tok.iter_mut() {
            *v = noise.sample(&mut rng);
        }
        tok[if inside(p) { label } else { cfg.classes }] += 1.0;
    }

    let px = |v: usize| (v * cfg.patch) as u32;
    let annotation = Annotation {
        image_id: format!("synth_{index:04}"),
        image_width: px(w),
        image_height: px(h),
        class_label: label,
        gt_boxes: vec![BBox::new(px(c0), px(r0), px(c0 + rw), px(r0 + rh))?],
    };
    Ok(SynthImage {
        annotation,
        attention: Tensor::from_f64(vec![cfg.vit_layers, t, t], &attn)?,
        tokens: Tensor::from_f64(vec![n, cfg.dim], &tokens)?,
    })
}

/// Each image draws from its own stream of the seeded generator, so the
/// result does not depend on generation order.
pub fn generate(cfg: &SynthConfig) -> Result<SynthSet> {
    validate(cfg)?;
    let (kernel, bias) = head(cfg)?;
    let images = (0..cfg.count).map(|i| image(cfg, i)).collect::<Result<_>>()?;
    Ok(SynthSet { kernel, bias, images })
}

pub fn write(dir: &Path, set: &SynthSet) -> Result<()> {
    create_dir(dir)?;
    save_tensor(&dir.join(HEAD_KERNEL), &set.kernel)?;
    save_tensor(&dir.join(HEAD_BIAS), &set.bias)?;
    for im in &set.images {
        let id = &im.annotation.image_id;
        save_tensor(&dir.join(attn_file(id)), &im.attention)?;
        save_tensor(&dir.join(tokens_file(id)), &im.tokens)?;
    }
    let anns: Vec<Annotation> = set.images.iter().map(|i| i.annotation.clone()).collect();
    write_annotations(dir.join(ANNOTATIONS), &anns)?;
    Ok(())
}
