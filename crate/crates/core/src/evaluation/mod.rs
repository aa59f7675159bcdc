//! Metrics, correspondence probes and the probe ablation harness.

mod ablation;
mod correspondence;
mod metrics;
mod render;

pub use ablation::{
    ablation_rows_csv, ablation_sweep, run_probe_config, seed_means, write_ablation, AblationRow, SweepAxis,
    SweepSetup,
};
pub use correspondence::{
    boundary_keypoints, dense_features, gt_correspondence, keypoint_benchmark, match_keypoints, match_keypoints_intensity, similarity_heatmap, Heatmap,
    KeypointMatch, KeypointReport, MatchContext, Measure,
};
pub use metrics::{aggregate, dice, endpoint_error, evaluate, evaluate_identity, pair_metrics, EvalReport, PairMetrics};
pub use render::{line_plot_svg, metrics_csv, write_metrics_csv, write_pgm, write_svg, CsvRow};
