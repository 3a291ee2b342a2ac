//! Box prediction from score maps and the localization metrics: GT-Known,
//! top-k localization accuracy, MaxBoxAccV1 and MaxBoxAccV2.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::adb::gap_logits;
use crate::error::{Result, ScmError};
use crate::maps::{ScoreMap, SemanticMap};

/// IoU thresholds averaged by MaxBoxAccV2.
pub const V2_DELTAS: [f64; 3] = [0.3, 0.5, 0.7];
pub const GT_KNOWN_DELTA: f64 = 0.5;

/// Half-open pixel box `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x1 <= x0 || y1 <= y0 {
            return Err(ScmError::Validation(format!(
                "box ({x0}, {y0}, {x1}, {y1}) has non-positive extent"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn area(&self) -> u64 {
        u64::from(self.x1 - self.x0) * u64::from(self.y1 - self.y0)
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x0, self.y0, self.x1, self.y1)
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.x0, self.y0, self.x1, self.y1].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x0, y0, x1, y1] = <[u32; 4]>::deserialize(d)?;
        Ok(Self { x0, y0, x1, y1 })
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = a.x1.min(b.x1).saturating_sub(a.x0.max(b.x0));
    let iy = a.y1.min(b.y1).saturating_sub(a.y0.max(b.y0));
    let inter = u64::from(ix) * u64::from(iy);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

fn best_iou(pred: &BBox, gts: &[BBox]) -> f64 {
    gts.iter().map(|g| iou(pred, g)).fold(0.0, f64::max)
}

/// True iff a prediction exists and overlaps some ground truth with
/// IoU >= `delta` (inclusive).
pub fn gt_known(pred: Option<&BBox>, gts: &[BBox], delta: f64) -> bool {
    pred.is_some_and(|p| best_iou(p, gts) >= delta)
}

/// Rank of `label` among the logits; ties go to the smaller index.
fn class_rank(logits: &[f64], label: usize) -> Option<usize> {
    let v = *logits.get(label)?;
    Some(
        logits
            .iter()
            .enumerate()
            .filter(|&(j, &l)| l > v || (l == v && j < label))
            .count(),
    )
}

pub fn loc_acc_topk(
    logits: &[f64],
    label: usize,
    pred: Option<&BBox>,
    gts: &[BBox],
    k: usize,
    delta: f64,
) -> bool {
    class_rank(logits, label).is_some_and(|r| r < k) && gt_known(pred, gts, delta)
}

/// Index of the largest logit; ties go to the smaller index.
pub fn argmax(logits: &[f64]) -> Option<usize> {
    logits
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if v <= b => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

pub fn couple_maps(f0: &ScoreMap, s0: &SemanticMap, class_idx: usize) -> Result<ScoreMap> {
    let channel = s0.channel(class_idx)?;
    f0.zip_with(&channel, |a, b| a * b)
}

/// Corner-aligned bilinear resampling: the first and last output samples
/// coincide with the first and last input samples.
pub fn upsample_bilinear(m: &ScoreMap, out_h: usize, out_w: usize) -> Result<ScoreMap> {
    let (h, w) = (m.height(), m.width());
    if out_h < h || out_w < w {
        return Err(ScmError::Argument(format!(
            "cannot upsample {h}x{w} to smaller {out_h}x{out_w}"
        )));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(m.clone());
    }
    let coord = |o: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        if out <= 1 || inp <= 1 {
            return (0, 0, 0.0);
        }
        let src = o as f64 * (inp - 1) as f64 / (out - 1) as f64;
        let lo = (src.floor() as usize).min(inp - 1);
        let hi = (lo + 1).min(inp - 1);
        (lo, hi, src - lo as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| coord(x, out_w, w)).collect();
    Ok(ScoreMap::from_fn(out_h, out_w, |y, x| {
        let (y0, y1, ty) = coord(y, out_h, h);
        let (x0, x1, tx) = cols[x];
        let top = m.get(y0, x0) * (1.0 - tx) + m.get(y0, x1) * tx;
        let bottom = m.get(y1, x0) * (1.0 - tx) + m.get(y1, x1) * tx;
        top * (1.0 - ty) + bottom * ty
    }))
}

/// Rescales to [0, 1]; a constant map becomes all zeros.
pub fn normalize_minmax(m: &ScoreMap) -> ScoreMap {
    let Some((lo, hi)) = m.min_max() else {
        return m.clone();
    };
    let span = hi - lo;
    if span <= 0.0 || !span.is_finite() {
        return m.map(|_| 0.0);
    }
    m.map(|v| (v - lo) / span)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxMode {
    LargestComponent,
    AllComponents,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub bbox: BBox,
    pub area: usize,
}

/// 4-connected components of `{v > gamma}` in raster order of first pixel.
pub fn foreground_components(m: &ScoreMap, gamma: f64) -> Vec<Component> {
    let (h, w) = (m.height(), m.width());
    let fg: Vec<bool> = m.as_slice().iter().map(|&v| v > gamma).collect();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !fg[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut area = 0;
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            area += 1;
            x0 = x0.min(c);
            y0 = y0.min(r);
            x1 = x1.max(c + 1);
            y1 = y1.max(r + 1);
            let mut visit = |j: usize| {
                if fg[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
            if r + 1 < h {
                visit(i + w);
            }
        }
        out.push(Component {
            bbox: BBox {
                x0: x0 as u32,
                y0: y0 as u32,
                x1: x1 as u32,
                y1: y1 as u32,
            },
            area,
        });
    }
    out
}

/// Tight boxes of the thresholded map. An empty foreground yields no boxes.
/// Among equally large components the first in raster order wins.
pub fn boxes_from_map(m: &ScoreMap, gamma: f64, mode: BoxMode) -> Vec<BBox> {
    let comps = foreground_components(m, gamma);
    match mode {
        BoxMode::AllComponents => comps.into_iter().map(|c| c.bbox).collect(),
        BoxMode::LargestComponent => comps
            .into_iter()
            .fold(None, |best: Option<Component>, c| match best {
                Some(b) if b.area >= c.area => Some(b),
                _ => Some(c),
            })
            .map(|c| vec![c.bbox])
            .unwrap_or_default(),
    }
}

/// `0.00, 0.05, ..., 0.95`.
pub fn default_gamma_grid() -> Vec<f64> {
    (0..20).map(|i| i as f64 / 20.0).collect()
}

fn check_dataset(maps: &[ScoreMap], gts: &[Vec<BBox>], gammas: &[f64]) -> Result<()> {
    if maps.len() != gts.len() {
        return Err(ScmError::Shape(format!(
            "{} score maps but {} ground-truth lists",
            maps.len(),
            gts.len()
        )));
    }
    if gammas.is_empty() {
        return Err(ScmError::Argument("gamma grid is empty".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(0.0..1.0).contains(*g)) {
        return Err(ScmError::Argument(format!("gamma {g} outside [0, 1)")));
    }
    Ok(())
}

/// Fraction of images whose best box (under `mode`) reaches `delta`, for
/// one threshold.
fn accuracy_at(maps: &[ScoreMap], gts: &[Vec<BBox>], gamma: f64, delta: f64, mode: BoxMode) -> f64 {
    if maps.is_empty() {
        return 0.0;
    }
    let hits = maps
        .iter()
        .zip(gts)
        .filter(|(m, g)| {
            boxes_from_map(m, gamma, mode)
                .iter()
                .any(|b| best_iou(b, g) >= delta)
        })
        .count();
    hits as f64 / maps.len() as f64
}

/// Best score over the grid; ties keep the smallest gamma.
fn best_over_grid(gammas: &[f64], score: impl Fn(f64) -> f64) -> (f64, f64) {
    gammas.iter().fold((f64::NEG_INFINITY, gammas[0]), |(best, bg), &g| {
        let s = score(g);
        if s > best {
            (s, g)
        } else {
            (best, bg)
        }
    })
}

/// GT-Known accuracy per threshold, largest-component boxes.
pub fn gt_known_sweep(maps: &[ScoreMap], gts: &[Vec<BBox>], gammas: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_dataset(maps, gts, gammas)?;
    Ok(gammas
        .iter()
        .map(|&g| (g, accuracy_at(maps, gts, g, GT_KNOWN_DELTA, BoxMode::LargestComponent)))
        .collect())
}

/// Returns `(score, best_gamma)`.
pub fn maxbox_acc_v1(maps: &[ScoreMap], gts: &[Vec<BBox>], gammas: &[f64]) -> Result<(f64, f64)> {
    check_dataset(maps, gts, gammas)?;
    Ok(best_over_grid(gammas, |g| {
        accuracy_at(maps, gts, g, GT_KNOWN_DELTA, BoxMode::LargestComponent)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaScore {
    pub delta: f64,
    pub score: f64,
    pub best_gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxBoxV2 {
    pub score: f64,
    pub per_delta: Vec<DeltaScore>,
}

/// Best match over all (estimated box, ground-truth box) pairs, every
/// component's box counted; per-delta optimum over the grid, then averaged.
pub fn maxbox_acc_v2(maps: &[ScoreMap], gts: &[Vec<BBox>], gammas: &[f64]) -> Result<MaxBoxV2> {
    check_dataset(maps, gts, gammas)?;
    let per_delta: Vec<DeltaScore> = V2_DELTAS
        .iter()
        .map(|&delta| {
            let (score, best_gamma) = best_over_grid(gammas, |g| {
                accuracy_at(maps, gts, g, delta, BoxMode::AllComponents)
            });
            DeltaScore {
                delta,
                score,
                best_gamma,
            }
        })
        .collect();
    let score = per_delta.iter().map(|d| d.score).sum::<f64>() / per_delta.len() as f64;
    Ok(MaxBoxV2 { score, per_delta })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub bbox: Option<BBox>,
    pub logits: Vec<f64>,
    pub class_idx: usize,
    /// Coupled map after upsampling and min-max normalization.
    pub score_map: ScoreMap,
}

/// GAP logits, argmax class, `F0 * S0[class]`, upsample to the image size,
/// normalize, largest-component box at `gamma`.
pub fn predict_image(
    f0: &ScoreMap,
    s0: &SemanticMap,
    image_h: usize,
    image_w: usize,
    gamma: f64,
) -> Result<Prediction> {
    let logits = gap_logits(s0);
    let class_idx = argmax(&logits).ok_or_else(|| ScmError::Shape("semantic map has no channels".into()))?;
    let coupled = couple_maps(f0, s0, class_idx)?;
    let score_map = normalize_minmax(&upsample_bilinear(&coupled, image_h, image_w)?);
    let bbox = boxes_from_map(&score_map, gamma, BoxMode::LargestComponent)
        .into_iter()
        .next();
    Ok(Prediction {
        bbox,
        logits,
        class_idx,
        score_map,
    })
}

/// Everything the evaluator needs about one image.
#[derive(Debug, Clone)]
pub struct ImageEval {
    pub gts: Vec<BBox>,
    pub label: usize,
    pub pred: Option<BBox>,
    pub logits: Vec<f64>,
    pub score_map: ScoreMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_images: usize,
    /// Threshold the stored predictions were made with.
    pub gamma: f64,
    pub gt_known: f64,
    pub top1_loc: f64,
    pub top5_loc: f64,
    pub maxbox_v1: f64,
    pub maxbox_v1_gamma: f64,
    pub maxbox_v2: f64,
    pub maxbox_v2_per_delta: Vec<DeltaScore>,
    /// GT-Known for every gamma of the grid.
    pub gamma_sweep: Vec<(f64, f64)>,
}

pub fn evaluate(images: &[ImageEval], gamma: f64, gammas: &[f64]) -> Result<EvalReport> {
    let n = images.len();
    let frac = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
    let count = |pred: &dyn Fn(&ImageEval) -> bool| images.iter().filter(|im| pred(im)).count();

    let gt_known_hits = count(&|im| gt_known(im.pred.as_ref(), &im.gts, GT_KNOWN_DELTA));
    let top1 = count(&|im| loc_acc_topk(&im.logits, im.label, im.pred.as_ref(), &im.gts, 1, GT_KNOWN_DELTA));
    let top5 = count(&|im| loc_acc_topk(&im.logits, im.label, im.pred.as_ref(), &im.gts, 5, GT_KNOWN_DELTA));

    let maps: Vec<ScoreMap> = images.iter().map(|im| im.score_map.clone()).collect();
    let gts: Vec<Vec<BBox>> = images.iter().map(|im| im.gts.clone()).collect();
    let (v1, v1_gamma) = maxbox_acc_v1(&maps, &gts, gammas)?;
    let v2 = maxbox_acc_v2(&maps, &gts, gammas)?;
    let sweep = gt_known_sweep(&maps, &gts, gammas)?;

    Ok(EvalReport {
        num_images: n,
        gamma,
        gt_known: frac(gt_known_hits),
        top1_loc: frac(top1),
        top5_loc: frac(top5),
        maxbox_v1: v1,
        maxbox_v1_gamma: v1_gamma,
        maxbox_v2: v2.score,
        maxbox_v2_per_delta: v2.per_delta,
        gamma_sweep: sweep,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "images        {}", self.num_images)?;
        writeln!(f, "gt_known      {:.4}  (gamma {:.2})", self.gt_known, self.gamma)?;
        writeln!(f, "top1_loc      {:.4}", self.top1_loc)?;
        writeln!(f, "top5_loc      {:.4}", self.top5_loc)?;
        writeln!(f, "maxbox_v1     {:.4}  (gamma {:.2})", self.maxbox_v1, self.maxbox_v1_gamma)?;
        writeln!(f, "maxbox_v2     {:.4}", self.maxbox_v2)?;
        for d in &self.maxbox_v2_per_delta {
            writeln!(
                f,
                "  delta {:.1}   {:.4}  (gamma {:.2})",
                d.delta, d.score, d.best_gamma
            )?;
        }
        Ok(())
    }
}

/// Binary PGM (P5, maxval 255) of a [0, 1] map; values are scaled by 255
/// and truncated.
pub fn encode_pgm(m: &ScoreMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", m.width(), m.height()).into_bytes();
    out.extend(m.as_slice().iter().map(|&v| (v * 255.0).clamp(0.0, 255.0) as u8));
    out
}
