use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunArgs;

#[derive(Debug, Parser)]
#[command(name = "scm", version, about = "Spatial calibration, box prediction and localization metrics for transformer attention maps")]
pub struct Cli {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write seeded planted-rectangle fixtures.
    Synth(SynthArgs),
    /// Run the diffusion stack and write per-image traces.
    Calibrate,
    /// Predict one box per image from F0 and S0.
    Predict,
    /// Score predictions against annotations.
    Eval,
    /// Integrate the diffusion flow and compare with the exact equilibrium.
    Simulate(SimulateArgs),
    /// Check forward-mode derivatives against finite differences.
    Gradcheck(GradcheckArgs),
    /// Render a stored map as a PGM image.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Token feature width.
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Transformer layers in the attention stack.
    #[arg(long, default_value_t = 4)]
    pub vit_layers: usize,
    #[arg(long, default_value_t = 16)]
    pub patch: usize,
    /// Standard deviation of the token noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Side of the random square grid.
    #[arg(long, default_value_t = 4)]
    pub size: usize,
    /// Use F0/S0 of this image from --tensor-dir instead of a random system.
    #[arg(long)]
    pub image: Option<String>,
    /// Step size; defaults to half the Euler stability bound.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 200_000)]
    pub steps: usize,
    /// Relative residual at which the flow counts as settled.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Constant input rate u.
    #[arg(long, default_value_t = 1.0)]
    pub input_rate: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    pub fixtures: usize,
    /// Side of the random square grid.
    #[arg(long, default_value_t = 4)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Args)]
pub struct HeatmapArgs {
    /// Rank-2 map, or a rank-3 trace when --index is given.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Slice of a rank-3 trace; defaults to the last.
    #[arg(long)]
    pub index: Option<usize>,
}
