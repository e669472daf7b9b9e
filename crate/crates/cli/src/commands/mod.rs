pub mod detect;
pub mod eval;
pub mod fit;
pub mod synth;
