use std::io::Write;

use scm_core::metrics::{encode_pgm, normalize_minmax};
use scm_core::ScoreMap;

use crate::args::HeatmapArgs;
use crate::dataset::{load_tensor, write_file};
use crate::error::{CliError, Result};

pub fn run(args: &HeatmapArgs, out: &mut dyn Write) -> Result<()> {
    let t = load_tensor(&args.input)?;
    let map = match *t.dims() {
        [h, w] => ScoreMap::new(h, w, t.to_f64())?,
        [k, h, w] => {
            let idx = args.index.unwrap_or(k - 1);
            if idx >= k {
                return Err(CliError::Input(format!("index {idx} out of range for {k} slices")));
            }
            ScoreMap::new(h, w, t.to_f64()[idx * h * w..(idx + 1) * h * w].to_vec())?
        }
        ref dims => {
            return Err(CliError::Input(format!(
                "{}: expected a rank-2 map or rank-3 trace, got dims {dims:?}",
                args.input.display()
            )))
        }
    };
    write_file(&args.output, &encode_pgm(&normalize_minmax(&map)))?;
    writeln!(out, "wrote {}x{} heatmap to {}", map.height(), map.width(), args.output.display())?;
    Ok(())
}
