//! Evaluation metrics: reconstruction fidelity, spectra, subject
//! fingerprints, loss-curve convergence, Welch's t-test and linear probes.

mod convergence;
mod fingerprint;
mod pve;
mod probe;
mod psd;
mod report;
mod stats;

pub use convergence::{loss_convergence, LossCurveAnalysis, SMOOTHING_WINDOW};
pub use fingerprint::{
    correlation_distances, default_lags, fingerprint, pearson, tde_features, FingerprintScore, FingerprintSet,
};
pub use probe::{zero_shot_probe, ProbeConfig, ProbeInput, ProbeResult, ProbeSplit, ProbeTrial};
pub use psd::{l2_psd_distance, welch_psd, PsdEstimate};
pub use pve::{pve, pve_values, token_histogram, PveAxes, PveReport, TokenHistogram};
pub use report::{read_metrics_csv, svg_line_plot, write_metrics_csv, MetricRow};
pub use stats::{bonferroni, welch_ttest, WelchTest};
