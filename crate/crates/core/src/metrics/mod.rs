//! Evaluation metrics: Fréchet distance over externally extracted clip features,
//! windowed SSIM, MSE and success-rate aggregation.

pub mod features;
pub mod fvd;
pub mod pixel;
pub mod report;
pub mod ssim;

pub use features::{read_feature_file, write_feature_file, FeatureSet};
pub use fvd::{fit_gaussian, frechet_distance, sqrt_psd, GaussianStats};
pub use pixel::{mse, mse_values, success_rate};
pub use report::{evaluate_generation, read_labels, EpisodeMetrics, Label, MetricReport};
pub use ssim::{ssim, ssim_frames, Plane, SsimConfig};
