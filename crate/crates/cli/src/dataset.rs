//! On-disk layout of fixtures and run outputs.
//!
//! A tensor directory holds `head.kernel.scmt`, `head.bias.scmt` and, per
//! image, `<id>.attn.scmt` (`I x (N+1) x (N+1)`) and `<id>.tokens.scmt`
//! (`N x Din`).

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use scm_core::backbone_adapter::{apply_semantic_head, assemble_attention, AttentionStack, SemanticHead, TokenGrid};
use scm_core::tensor_store::{read_annotations, read_tensor, write_tensor};
use scm_core::{Annotation, BBox, ScmError, ScoreMap, SemanticMap, Tensor};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const HEAD_KERNEL: &str = "head.kernel.scmt";
pub const HEAD_BIAS: &str = "head.bias.scmt";
pub const ANNOTATIONS: &str = "annotations.jsonl";
pub const MANIFEST: &str = "manifest.jsonl";
pub const PREDICTIONS: &str = "predictions.jsonl";
const ATTN_SUFFIX: &str = ".attn.scmt";

pub fn attn_file(id: &str) -> String {
    format!("{id}{ATTN_SUFFIX}")
}

pub fn tokens_file(id: &str) -> String {
    format!("{id}.tokens.scmt")
}

fn tensor_error(path: &Path, source: ScmError) -> CliError {
    match source {
        ScmError::Storage { path, source } => CliError::Io { path, source },
        source => CliError::Tensor {
            path: path.to_path_buf(),
            source,
        },
    }
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    read_tensor(path).map_err(|e| tensor_error(path, e))
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_tensor(path, t).map_err(|e| tensor_error(path, e))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Serializes one record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&buf).map_err(|e| CliError::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            line: idx + 1,
            source,
        })?);
    }
    Ok(out)
}

/// Runs `f` over `items` on a pool of `jobs` threads (0 = all cores) and
/// returns results in input order.
pub fn par_map<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Raw transformer fixtures plus optional ground truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    dir: PathBuf,
    ids: Vec<String>,
    annotations: Option<Vec<Annotation>>,
    head: SemanticHead,
    grid: Option<(usize, usize)>,
}

impl Dataset {
    /// Image ids come from the annotation file when given, otherwise from
    /// the `*.attn.scmt` files in sorted order.
    pub fn open(dir: &Path, annotations: Option<&Path>, grid: Option<(usize, usize)>) -> Result<Self> {
        if !dir.is_dir() {
            return Err(CliError::Input(format!("tensor directory {} does not exist", dir.display())));
        }
        let head = SemanticHead::from_tensors(&load_tensor(&dir.join(HEAD_KERNEL))?, &load_tensor(&dir.join(HEAD_BIAS))?)
            .map_err(|source| CliError::Tensor {
                path: dir.join(HEAD_KERNEL),
                source,
            })?;
        let annotations = annotations.map(read_annotations).transpose()?;
        let ids = match &annotations {
            Some(a) => a.iter().map(|a| a.image_id.clone()).collect(),
            None => scan_ids(dir)?,
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            ids,
            annotations,
            head,
            grid,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn annotation(&self, idx: usize) -> Option<&Annotation> {
        self.annotations.as_ref().map(|a| &a[idx])
    }

    /// `F0` and `S0` for one image.
    pub fn load_inputs(&self, id: &str) -> Result<(ScoreMap, SemanticMap)> {
        let attn_path = self.dir.join(attn_file(id));
        let tokens_path = self.dir.join(tokens_file(id));
        let wrap = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CliError::Tensor { path, source }
        };
        let stack = AttentionStack::from_tensor(&load_tensor(&attn_path)?, self.grid).map_err(wrap(&attn_path))?;
        let f0 = assemble_attention(&stack).map_err(wrap(&attn_path))?;
        let tokens = TokenGrid::from_tensor(&load_tensor(&tokens_path)?, stack.grid()).map_err(wrap(&tokens_path))?;
        let s0 = apply_semantic_head(&tokens, &self.head).map_err(wrap(&tokens_path))?;
        Ok((f0, s0))
    }
}

fn scan_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids: Vec<String> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(ATTN_SUFFIX)).map(str::to_string))
        .collect();
    ids.sort();
    Ok(ids)
}

/// One line of the calibrate manifest. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub image_id: String,
    pub layers: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub ftrace: String,
    pub strace: String,
    pub dtrace: Option<String>,
}

impl TraceRecord {
    pub fn files(id: &str) -> (String, String, String) {
        (
            format!("{id}.ftrace.scmt"),
            format!("{id}.strace.scmt"),
            format!("{id}.dtrace.scmt"),
        )
    }
}

/// Reads `F0` and `S0` (trace index 0) back from calibrate output.
pub fn load_trace_inputs(dir: &Path, rec: &TraceRecord) -> Result<(ScoreMap, SemanticMap)> {
    let (h, w, c) = (rec.height, rec.width, rec.classes);
    let fpath = dir.join(&rec.ftrace);
    let spath = dir.join(&rec.strace);
    let ft = load_tensor(&fpath)?;
    let st = load_tensor(&spath)?;
    if ft.dims() != [rec.layers + 1, h, w] || st.dims() != [rec.layers + 1, h, w, c] {
        return Err(CliError::Input(format!(
            "trace shapes {:?} / {:?} disagree with the manifest entry for {}",
            ft.dims(),
            st.dims(),
            rec.image_id
        )));
    }
    let f0 = ScoreMap::new(h, w, ft.to_f64()[..h * w].to_vec())?;
    let s0 = SemanticMap::new(h, w, c, st.to_f64()[..h * w * c].to_vec())?;
    Ok((f0, s0))
}

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: Option<BBox>,
    pub class: usize,
    pub logits: Vec<f64>,
    pub gamma: f64,
    /// Normalized score map at image resolution, relative to the file.
    pub score_map: String,
}

pub fn score_file(id: &str) -> String {
    format!("{id}.score.scmt")
}

pub fn heatmap_file(id: &str) -> String {
    format!("{id}.pgm")
}
