use std::io::Write;

use crate::args::SynthArgs;
use crate::config::{Settings, DEFAULT_GRID};
use crate::error::Result;
use crate::synth::{generate, write, SynthConfig};

pub fn run(s: &Settings, args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = SynthConfig {
        count: args.count,
        seed: s.seed,
        grid: s.grid.unwrap_or(DEFAULT_GRID),
        patch: args.patch,
        classes: args.classes,
        dim: args.dim,
        vit_layers: args.vit_layers,
        noise: args.noise,
        ..SynthConfig::default()
    };
    let dir = s.out_dir_or("synth");
    write(&dir, &generate(&cfg)?)?;
    writeln!(
        out,
        "wrote {} fixtures ({}x{} grid, seed {}) to {}",
        cfg.count,
        cfg.grid.0,
        cfg.grid.1,
        cfg.seed,
        dir.display()
    )?;
    Ok(())
}
