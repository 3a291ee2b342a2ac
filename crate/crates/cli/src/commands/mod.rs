pub mod calibrate;
pub mod eval;
pub mod gradcheck;
pub mod heatmap;
pub mod predict;
pub mod simulate;
pub mod synth;
