//! Label accuracy audit against a wearable eye tracker.
//!
//! Each eye-tracker record holds the scene-camera gaze pixel and the pixel
//! positions of board markers at the capture instant. The markers give an
//! image→board homography, which maps the gaze onto the board and, through
//! the planar pose, yields the scene camera center. The reference error of
//! a sample is the angle at that center between the measured gaze point and
//! the sample's target.

mod records;
mod reference;
mod report;
pub mod stats;

use std::path::{Path, PathBuf};

pub use records::{read_eval_records, write_eval_records, EvalRecord, RecordQuality};
pub use reference::{reference_error, ReferenceMeasurement};
pub use report::{
    build_condition_report, build_reports, compare_conditions, evaluate_samples, render_text, sample_target,
    write_report_files, Comparison, ConditionReport, EstimatorCorrelation, EvaluatedSample, Evaluation,
    ExcludedRecord, OutlierAnalysis, OutlierBasis, OutlierFlag, ReportOptions, SCATTER_RANGE_MM,
};
pub use stats::{mann_whitney_u, mann_whitney_u_with, pearson_r, spearman_rho, zscore_outliers, Correlation, MannWhitney, Summary, ZScores};

use crate::board_geometry::GeometryError;
use crate::jsonl::JsonlError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Records(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl EvalError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_owned(), source }
    }
}
