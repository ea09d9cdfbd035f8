use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{mann_whitney_u, pearson_r, spearman_rho, summarize, zscore_outliers, Correlation, MannWhitney, Summary};
use super::{reference_error, EvalError, EvalRecord};
use crate::board_geometry::{angular_error_deg, BoardLayout};
use crate::capture::GazeSample;
use crate::ids::{Mode, ParticipantId, SampleId};
use crate::Vec2;

/// Half-width of the relative-position scatter window.
pub const SCATTER_RANGE_MM: f64 = 150.0;

/// One sample with its eye-tracker measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedSample {
    pub sample_id: SampleId,
    pub participant_id: ParticipantId,
    pub condition: Mode,
    pub target_board_mm: [f64; 2],
    pub gaze_board_mm: [f64; 2],
    /// `gaze - target` on the board.
    pub relative_mm: [f64; 2],
    /// Outside the ±150 mm scatter window.
    pub clipped: bool,
    pub out_of_bounds: bool,
    pub error_deg: f64,
    /// Angle between estimator output and label, when the estimator ran.
    pub estimator_error_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExcludedRecord {
    pub sample_id: SampleId,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: Vec<EvaluatedSample>,
    /// Records that were degraded or failed geometrically.
    pub excluded: Vec<ExcludedRecord>,
    /// Records with no stored sample, and samples with no record.
    pub unmatched_records: Vec<SampleId>,
    pub unmatched_samples: Vec<SampleId>,
}

/// Target of a stored sample on the board plane.
pub fn sample_target(sample: &GazeSample, layout: &BoardLayout) -> Result<Vec2, EvalError> {
    match (&sample.letter_id, sample.stimulus_xy_mm) {
        (Some(id), _) => {
            let p = layout.letter_position(id)?;
            Ok(Vec2::new(p.x, p.y))
        }
        (None, Some([x, y])) => Ok(Vec2::new(x, y)),
        (None, None) => Err(EvalError::DegenerateInput(format!("{}: sample has no target", sample.sample_id))),
    }
}

/// Joins samples with eye-tracker records by sample id and measures each.
/// Output is sorted by sample id.
pub fn evaluate_samples(samples: &[GazeSample], records: &[EvalRecord], layout: &BoardLayout) -> Evaluation {
    let by_id: BTreeMap<&SampleId, &GazeSample> = samples.iter().map(|s| (&s.sample_id, s)).collect();
    let mut out = Evaluation::default();
    let mut seen = BTreeSet::new();
    for record in records {
        let Some(sample) = by_id.get(&record.sample_id) else {
            out.unmatched_records.push(record.sample_id.clone());
            continue;
        };
        if !seen.insert(&record.sample_id) {
            tracing::warn!(sample = %record.sample_id, "duplicate eye-tracker record ignored");
            continue;
        }
        if record.quality.degraded {
            out.excluded.push(ExcludedRecord {
                sample_id: record.sample_id.clone(),
                reason: record.quality.note.clone().unwrap_or_else(|| "degraded".into()),
            });
            continue;
        }
        match evaluate_one(sample, record, layout) {
            Ok(e) => out.samples.push(e),
            Err(e) => out.excluded.push(ExcludedRecord { sample_id: record.sample_id.clone(), reason: e.to_string() }),
        }
    }
    out.unmatched_samples = by_id.keys().filter(|id| !seen.contains(*id)).map(|id| (*id).clone()).collect();
    out.samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    out.excluded.sort();
    out.unmatched_records.sort();
    out
}

fn evaluate_one(sample: &GazeSample, record: &EvalRecord, layout: &BoardLayout) -> Result<EvaluatedSample, EvalError> {
    let target = sample_target(sample, layout)?;
    let m = reference_error(record, &target)?;
    let rel = m.gaze_board_mm - target;
    let estimator_error_deg = match sample.estimator_vec() {
        Some(e) => Some(angular_error_deg(&e, &sample.label_vec())?),
        None => None,
    };
    Ok(EvaluatedSample {
        sample_id: sample.sample_id.clone(),
        participant_id: sample.participant_id.clone(),
        condition: sample.mode,
        target_board_mm: [target.x, target.y],
        gaze_board_mm: [m.gaze_board_mm.x, m.gaze_board_mm.y],
        relative_mm: [rel.x, rel.y],
        clipped: rel.x.abs() > SCATTER_RANGE_MM || rel.y.abs() > SCATTER_RANGE_MM,
        out_of_bounds: m.out_of_bounds,
        error_deg: m.error_deg,
        estimator_error_deg,
    })
}

/// Which per-sample error the z-scores are computed on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierBasis {
    /// Estimator error when every sample has one, reference error otherwise.
    #[default]
    Auto,
    Estimator,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Flag and re-aggregate without samples whose |z| exceeds this.
    pub remove_outliers_z: Option<f64>,
    pub outlier_basis: OutlierBasis,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { remove_outliers_z: Some(3.0), outlier_basis: OutlierBasis::Auto }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierFlag {
    pub sample_id: SampleId,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierAnalysis {
    pub basis: OutlierBasis,
    pub threshold: f64,
    pub mean: f64,
    pub sd: f64,
    pub flagged: Vec<OutlierFlag>,
    /// Reference-error summary with the flagged samples removed.
    pub summary_without: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorCorrelation {
    /// Pairs of (estimator error, reference error).
    pub n: usize,
    pub pearson: Correlation,
    pub spearman: Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub other: Mode,
    pub mann_whitney: MannWhitney,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Mode,
    pub n_samples: usize,
    pub n_participants: usize,
    pub excluded: Vec<ExcludedRecord>,
    pub summary: Summary,
    pub outliers: Option<OutlierAnalysis>,
    pub correlation: Option<EstimatorCorrelation>,
    pub comparison: Option<Comparison>,
    pub samples: Vec<EvaluatedSample>,
}

impl ConditionReport {
    pub fn errors(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.error_deg).collect()
    }
}

/// Aggregates the samples of one condition. `evaluation` may contain other
/// conditions; they are ignored.
pub fn build_condition_report(
    evaluation: &Evaluation,
    condition: Mode,
    options: &ReportOptions,
) -> Result<ConditionReport, EvalError> {
    let mut samples: Vec<EvaluatedSample> =
        evaluation.samples.iter().filter(|s| s.condition == condition).cloned().collect();
    samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    if samples.is_empty() {
        return Err(EvalError::InsufficientData(format!("no evaluated {condition} samples")));
    }
    let errors: Vec<f64> = samples.iter().map(|s| s.error_deg).collect();
    let summary = summarize(&errors)?;
    let participants: BTreeSet<&ParticipantId> = samples.iter().map(|s| &s.participant_id).collect();
    let outliers = match options.remove_outliers_z {
        Some(z) if samples.len() >= 3 => Some(outlier_analysis(&samples, z, options.outlier_basis)?),
        _ => None,
    };
    let correlation = estimator_correlation(&samples);
    // excluded records carry no condition of their own, so every report lists them
    let excluded = evaluation.excluded.clone();
    Ok(ConditionReport {
        condition,
        n_samples: samples.len(),
        n_participants: participants.len(),
        excluded,
        summary,
        outliers,
        correlation,
        comparison: None,
        samples,
    })
}

fn outlier_analysis(samples: &[EvaluatedSample], threshold: f64, basis: OutlierBasis) -> Result<OutlierAnalysis, EvalError> {
    let all_estimated = samples.iter().all(|s| s.estimator_error_deg.is_some());
    let basis = match basis {
        OutlierBasis::Auto if all_estimated => OutlierBasis::Estimator,
        OutlierBasis::Auto => OutlierBasis::Reference,
        OutlierBasis::Estimator if !all_estimated => {
            return Err(EvalError::DegenerateInput("estimator error missing for some samples".into()));
        }
        b => b,
    };
    let values: Vec<f64> = samples
        .iter()
        .map(|s| match basis {
            OutlierBasis::Estimator => s.estimator_error_deg.unwrap_or(f64::NAN),
            _ => s.error_deg,
        })
        .collect();
    let z = zscore_outliers(&values, threshold)?;
    let flagged: Vec<OutlierFlag> =
        z.flagged.iter().map(|&(i, z)| OutlierFlag { sample_id: samples[i].sample_id.clone(), z }).collect();
    let removed: BTreeSet<usize> = z.flagged.iter().map(|&(i, _)| i).collect();
    let kept: Vec<f64> = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, s)| s.error_deg)
        .collect();
    let summary_without = if flagged.is_empty() || kept.is_empty() { None } else { Some(summarize(&kept)?) };
    Ok(OutlierAnalysis { basis, threshold, mean: z.mean, sd: z.sd, flagged, summary_without })
}

fn estimator_correlation(samples: &[EvaluatedSample]) -> Option<EstimatorCorrelation> {
    let (est, reference): (Vec<f64>, Vec<f64>) =
        samples.iter().filter_map(|s| s.estimator_error_deg.map(|e| (e, s.error_deg))).unzip();
    let pearson = pearson_r(&est, &reference).ok()?;
    let spearman = spearman_rho(&est, &reference).ok()?;
    Some(EstimatorCorrelation { n: est.len(), pearson, spearman })
}

/// Two-sided Mann-Whitney of `report`'s errors against `other`'s.
pub fn compare_conditions(report: &ConditionReport, other: &ConditionReport) -> Result<Comparison, EvalError> {
    Ok(Comparison { other: other.condition, mann_whitney: mann_whitney_u(&report.errors(), &other.errors())? })
}

/// Builds one report per condition present, comparing the two when both are.
pub fn build_reports(evaluation: &Evaluation, options: &ReportOptions) -> Result<Vec<ConditionReport>, EvalError> {
    let present: BTreeSet<Mode> = evaluation.samples.iter().map(|s| s.condition).collect();
    let mut reports = present
        .into_iter()
        .map(|c| build_condition_report(evaluation, c, options))
        .collect::<Result<Vec<_>, _>>()?;
    if let [a, b] = reports.as_mut_slice() {
        a.comparison = Some(compare_conditions(a, b)?);
        b.comparison = Some(compare_conditions(b, a)?);
    }
    Ok(reports)
}

/// Plain-text summary.
pub fn render_text(reports: &[ConditionReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let m = &r.summary;
        let _ = writeln!(s, "condition {}: {} samples, {} participants, {} excluded", r.condition, r.n_samples, r.n_participants, r.excluded.len());
        let _ = writeln!(s, "  mean {:.3} deg  sd {:.3}  median {:.3}  q1 {:.3}  q3 {:.3}", m.mean, m.sd, m.median, m.q1, m.q3);
        if let Some(o) = &r.outliers {
            let _ = writeln!(s, "  outliers (|z| > {} on {:?} error): {}", o.threshold, o.basis, o.flagged.len());
            for f in &o.flagged {
                let _ = writeln!(s, "    {} z = {:.2}", f.sample_id, f.z);
            }
            if let Some(w) = &o.summary_without {
                let _ = writeln!(s, "  without outliers: mean {:.3} deg over {} samples", w.mean, w.n);
            }
        }
        if let Some(c) = &r.correlation {
            let _ = writeln!(s, "  estimator vs reference error: pearson r = {:.3} (p = {:.4}), spearman rho = {:.3} (p = {:.4}), n = {}", c.pearson.r, c.pearson.p, c.spearman.r, c.spearman.p, c.n);
        }
        if let Some(c) = &r.comparison {
            let mw = &c.mann_whitney;
            let _ = writeln!(s, "  vs {}: U = {}, p = {:.4} ({:?})", c.other, mw.u, mw.p_two_sided, mw.method);
        }
    }
    s
}

/// Writes `report.json`, `report.txt`, `errors.csv`, `boxplot.csv` and
/// `scatter.csv` into `dir`.
pub fn write_report_files(dir: &Path, reports: &[ConditionReport]) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| EvalError::io(&p, e))
    };
    write("report.json", serde_json::to_string_pretty(reports).expect("report serializes") + "\n")?;
    write("report.txt", render_text(reports))?;

    let mut errors = String::from("sample_id,participant_id,condition,error_deg,estimator_error_deg,out_of_bounds\n");
    let mut scatter = String::from("sample_id,condition,dx_mm,dy_mm,clipped\n");
    let mut boxplot = String::from("condition,n,mean,min,whisker_low,q1,median,q3,whisker_high,max,n_fliers\n");
    for r in reports {
        for e in &r.samples {
            let est = e.estimator_error_deg.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(errors, "{},{},{},{},{},{}", e.sample_id, e.participant_id, r.condition, e.error_deg, est, e.out_of_bounds);
            let _ = writeln!(scatter, "{},{},{},{},{}", e.sample_id, r.condition, e.relative_mm[0], e.relative_mm[1], e.clipped);
        }
        let m = &r.summary;
        let _ = writeln!(
            boxplot,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.condition, m.n, m.mean, m.min, m.whisker_low, m.q1, m.median, m.q3, m.whisker_high, m.max, m.fliers.len()
        );
    }
    write("errors.csv", errors)?;
    write("scatter.csv", scatter)?;
    write("boxplot.csv", boxplot)
}
