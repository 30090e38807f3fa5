//! Image-quality metrics, synthetic phantoms, the TV baseline and the
//! comparative experiment runner.

mod metrics;
mod phantom;
mod suite;
mod tv;

pub use metrics::{nmse, psnr, psnr_peak_ref, ssim, PSNR_CAP, SSIM_WINDOW};
pub use phantom::{ellipses_body_mask, make_phantom, PhantomKind};
pub use suite::{
    evaluate_suite, records_to_csv, Aggregate, ImageMetrics, LearnedEntry, Method, MetricsRecord, SuiteConfig,
    SuiteOutput, CSV_HEADER,
};
pub use tv::{total_variation, tv_objective, tv_reconstruct, tv_reconstruct_traced, TvRun};
