use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;

use scm_core::metrics::{encode_pgm, predict_image, Prediction};
use scm_core::tensor_store::read_annotations;
use scm_core::{Annotation, ScoreMap, SemanticMap};

use crate::config::Settings;
use crate::dataset::{
    create_dir, heatmap_file, load_trace_inputs, par_map, read_jsonl, save_tensor, score_file, write_file, write_jsonl,
    Dataset, PredictionRecord, TraceRecord, MANIFEST, PREDICTIONS,
};
use crate::error::{CliError, Result};

enum Source {
    Raw(Dataset),
    Traces(PathBuf, Vec<TraceRecord>),
}

impl Source {
    fn ids(&self) -> Vec<String> {
        match self {
            Source::Raw(ds) => ds.ids().to_vec(),
            Source::Traces(_, recs) => recs.iter().map(|r| r.image_id.clone()).collect(),
        }
    }

    fn load(&self, idx: usize) -> Result<(ScoreMap, SemanticMap)> {
        match self {
            Source::Raw(ds) => ds.load_inputs(&ds.ids()[idx]),
            Source::Traces(dir, recs) => load_trace_inputs(dir, &recs[idx]),
        }
    }
}

pub fn run(s: &Settings, out: &mut dyn Write) -> Result<()> {
    let source = match &s.trace_dir {
        Some(dir) => Source::Traces(dir.clone(), read_jsonl(&dir.join(MANIFEST))?),
        None => Source::Raw(Dataset::open(s.require_tensor_dir()?, s.annotations.as_deref(), s.grid)?),
    };
    let sizes: HashMap<String, (usize, usize)> = match &s.annotations {
        Some(p) => read_annotations(p)?
            .into_iter()
            .map(|a: Annotation| (a.image_id, (a.image_height as usize, a.image_width as usize)))
            .collect(),
        None => HashMap::new(),
    };
    let ids = source.ids();
    let dir = s.out_dir_or("predictions");
    create_dir(&dir)?;

    let indices: Vec<usize> = (0..ids.len()).collect();
    let preds: Vec<Prediction> = par_map(s.jobs, &indices, |&i| {
        let (f0, s0) = source.load(i)?;
        let (h, w) = sizes.get(&ids[i]).copied().unwrap_or(s.image_size);
        predict_image(&f0, &s0, h, w, s.gamma).map_err(|e| CliError::Input(format!("{}: {e}", ids[i])))
    })?;

    let mut records = Vec::with_capacity(preds.len());
    for (id, p) in ids.iter().zip(preds) {
        let score = score_file(id);
        save_tensor(&dir.join(&score), &p.score_map.to_tensor())?;
        if s.heatmap {
            write_file(&dir.join(heatmap_file(id)), &encode_pgm(&p.score_map))?;
        }
        records.push(PredictionRecord {
            image_id: id.clone(),
            bbox: p.bbox,
            class: p.class_idx,
            logits: p.logits,
            gamma: s.gamma,
            score_map: score,
        });
    }
    write_jsonl(&dir.join(PREDICTIONS), &records)?;
    let boxed = records.iter().filter(|r| r.bbox.is_some()).count();
    writeln!(
        out,
        "predicted {} images ({boxed} with a box) into {}",
        records.len(),
        dir.display()
    )?;
    Ok(())
}
