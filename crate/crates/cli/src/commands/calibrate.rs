use std::io::Write;

use scm_core::adb::{scm_forward, ScmTrace};
use scm_core::patch_graph::build_grid_graph;
use scm_core::Tensor;

use crate::config::Settings;
use crate::dataset::{create_dir, par_map, save_tensor, write_file, write_jsonl, Dataset, TraceRecord, MANIFEST};
use crate::error::{CliError, Result};

/// Stacked `F` (`(L+1) x H x W`), `S` (`(L+1) x H x W x C`) and, when the
/// stack is non-empty, diffused maps (`L x H x W`).
pub fn trace_tensors(trace: &ScmTrace) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let f0 = &trace.f[0];
    let (h, w) = (f0.height(), f0.width());
    let c = trace.s[0].channels();
    let layers = trace.num_layers();
    let f: Vec<f64> = trace.f.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
    let s: Vec<f64> = trace.s.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
    let d = if layers == 0 {
        None
    } else {
        let d: Vec<f64> = trace.diffused.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
        Some(Tensor::from_f64(vec![layers, h, w], &d)?)
    };
    Ok((
        Tensor::from_f64(vec![layers + 1, h, w], &f)?,
        Tensor::from_f64(vec![layers + 1, h, w, c], &s)?,
        d,
    ))
}

pub fn run(s: &Settings, out: &mut dyn Write) -> Result<()> {
    let ds = Dataset::open(s.require_tensor_dir()?, s.annotations.as_deref(), s.grid)?;
    let dir = s.out_dir_or("calibrated");
    create_dir(&dir)?;

    let traces = par_map(s.jobs, ds.ids(), |id| {
        let (f0, s0) = ds.load_inputs(id)?;
        let g = build_grid_graph(f0.height(), f0.width())?;
        scm_forward(&f0, &s0, &s.params, &g).map_err(|e| CliError::Input(format!("{id}: {e}")))
    })?;

    let mut records = Vec::with_capacity(traces.len());
    for (id, trace) in ds.ids().iter().zip(&traces) {
        let (ft, st, dt) = trace_tensors(trace)?;
        let (fname, sname, dname) = TraceRecord::files(id);
        save_tensor(&dir.join(&fname), &ft)?;
        save_tensor(&dir.join(&sname), &st)?;
        let dtrace = match dt {
            Some(t) => {
                save_tensor(&dir.join(&dname), &t)?;
                Some(dname)
            }
            None => None,
        };
        let f0 = &trace.f[0];
        records.push(TraceRecord {
            image_id: id.clone(),
            layers: trace.num_layers(),
            height: f0.height(),
            width: f0.width(),
            classes: trace.s[0].channels(),
            ftrace: fname,
            strace: sname,
            dtrace,
        });
    }
    write_jsonl(&dir.join(MANIFEST), &records)?;
    write_file(&dir.join("params.txt"), params_summary(s).as_bytes())?;
    writeln!(
        out,
        "calibrated {} images with {} blocks into {}",
        records.len(),
        s.params.num_layers(),
        dir.display()
    )?;
    Ok(())
}

fn params_summary(s: &Settings) -> String {
    let p = &s.params;
    let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    format!(
        "layers = {}\nlambda = {}\nbeta = {}\nalpha = {}\niters = {}\nsign = {}\nfilter-input = {}\nresidual-f = {}\nresidual-s = {}\n",
        p.num_layers(),
        list(&p.lambda),
        list(&p.beta),
        p.alpha,
        p.iterations,
        p.laplacian_sign,
        p.filter_input,
        p.residual_f,
        p.residual_s
    )
}
