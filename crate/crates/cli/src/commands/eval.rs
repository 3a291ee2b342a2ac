use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::PathBuf;

use scm_core::metrics::{evaluate, EvalReport, ImageEval};
use scm_core::tensor_store::read_annotations;
use scm_core::ScoreMap;

use crate::config::{Metric, Settings};
use crate::dataset::{create_dir, load_tensor, read_jsonl, write_file, PredictionRecord, PREDICTIONS};
use crate::error::{CliError, Result};

pub const REPORT_JSON: &str = "eval_report.json";
pub const REPORT_TEXT: &str = "eval_report.txt";

pub fn run(s: &Settings, out: &mut dyn Write) -> Result<()> {
    let ann_path = s
        .annotations
        .as_deref()
        .ok_or_else(|| CliError::Input("--annotations is required".into()))?;
    let anns = read_annotations(ann_path)?;
    let pred_dir = s.pred_dir.clone().unwrap_or_else(|| PathBuf::from("predictions"));
    let preds: Vec<PredictionRecord> = read_jsonl(&pred_dir.join(PREDICTIONS))?;

    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::new();
    for p in &preds {
        if by_id.insert(p.image_id.as_str(), p).is_some() {
            return Err(CliError::Input(format!("duplicate prediction for {}", p.image_id)));
        }
    }
    let ann_ids: HashSet<&str> = anns.iter().map(|a| a.image_id.as_str()).collect();
    let missing_predictions: Vec<String> = anns
        .iter()
        .filter(|a| !by_id.contains_key(a.image_id.as_str()))
        .map(|a| a.image_id.clone())
        .collect();
    let missing_annotations: Vec<String> = preds
        .iter()
        .filter(|p| !ann_ids.contains(p.image_id.as_str()))
        .map(|p| p.image_id.clone())
        .collect();
    if !missing_predictions.is_empty() || !missing_annotations.is_empty() {
        return Err(CliError::IdMismatch {
            missing_predictions,
            missing_annotations,
        });
    }

    let images = anns
        .iter()
        .map(|a| {
            let p = by_id[a.image_id.as_str()];
            let path = pred_dir.join(&p.score_map);
            let score_map = ScoreMap::from_tensor(&load_tensor(&path)?).map_err(|source| CliError::Tensor { path, source })?;
            Ok(ImageEval {
                gts: a.gt_boxes.clone(),
                label: a.class_label,
                pred: p.bbox,
                logits: p.logits.clone(),
                score_map,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let gamma = preds.first().map_or(s.gamma, |p| p.gamma);
    let report = evaluate(&images, gamma, &s.gamma_grid)?;

    let dir = s.out_dir.clone().unwrap_or(pred_dir);
    create_dir(&dir)?;
    let json = serde_json::to_vec_pretty(&report).map_err(|source| CliError::Json {
        path: dir.join(REPORT_JSON),
        line: 0,
        source,
    })?;
    write_file(&dir.join(REPORT_JSON), &json)?;
    let mut text = report.to_string();
    text.push_str(&sweep_table(&report));
    write_file(&dir.join(REPORT_TEXT), text.as_bytes())?;

    write!(out, "{}", summary(&report, s.metric))?;
    if s.sweep {
        write!(out, "{}", sweep_table(&report))?;
    }
    Ok(())
}

fn summary(r: &EvalReport, metric: Option<Metric>) -> String {
    match metric {
        None => r.to_string(),
        Some(Metric::Gtk) => format!("gt_known      {:.4}  (gamma {:.2})\n", r.gt_known, r.gamma),
        Some(Metric::Loc) => format!("top1_loc      {:.4}\ntop5_loc      {:.4}\n", r.top1_loc, r.top5_loc),
        Some(Metric::V1) => format!("maxbox_v1     {:.4}  (gamma {:.2})\n", r.maxbox_v1, r.maxbox_v1_gamma),
        Some(Metric::V2) => {
            let mut s = format!("maxbox_v2     {:.4}\n", r.maxbox_v2);
            for d in &r.maxbox_v2_per_delta {
                s.push_str(&format!("  delta {:.1}   {:.4}  (gamma {:.2})\n", d.delta, d.score, d.best_gamma));
            }
            s
        }
    }
}

fn sweep_table(r: &EvalReport) -> String {
    let mut s = String::from("gamma  gt_known\n");
    for (g, acc) in &r.gamma_sweep {
        s.push_str(&format!("{g:.2}   {acc:.4}\n"));
    }
    s
}
