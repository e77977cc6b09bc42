pub mod annotations;
pub mod augment;
pub mod decoder;
pub mod eval;
pub mod fmap;
pub mod geometry;
pub mod labels;
pub mod losses;
pub mod pipeline;
pub mod synth;
