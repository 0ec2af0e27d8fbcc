//! Image-quality metrics, the five-variant balance measure and test-set reports.

mod balance;
mod metrics;
mod report;

pub use balance::{balance_error, weighted_mean, AblationSet, BalanceTable, BALANCE_WEIGHTS};
pub use metrics::{psnr, ssim, ssim_gray, PSNR_CAP, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{
    evaluate_testset, image_grid, score_variant, side_by_side, stylize, stylize_files, stylize_images,
    EvalOptions, EvaluationSummary, MetricRecord, VariantSummary,
};
