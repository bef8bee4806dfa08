pub mod assessment;
pub mod capture;
pub mod dataset;
pub mod detector;
pub mod geometry;
pub mod imgproc;
pub mod mask;
pub mod segmenter;
pub mod session;
pub mod synth;
pub mod types;
