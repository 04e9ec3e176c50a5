//! Scoring against cleaned ground truth.
//!
//! Predictions and references go through the same beat → IBI → HR/HRV path
//! ([`beat_metrics`]), so feeding a prediction in as its own reference gives
//! zero error on every metric.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::beat_analysis::{filter_ibis, heart_rate, ibis_from_beats, BeatSeries, HrEntry, HrSeries, HrWindow, IbiSeries};
use crate::error::{Error, Result};
use crate::ground_truth_cleaning::{propose_peaks, BlankRegion};
use crate::hrv_metrics::{hrv_report, HrvReport, DEFAULT_DETREND_LAMBDA};
use crate::stats;
use crate::trace_io::GroundTruthRecord;

/// The blind baseline always predicts this rate.
pub const BASELINE_BPM: f64 = 75.0;
pub const DEFAULT_STUDY_WINDOW_S: f64 = 16.0;

pub fn default_presets() -> Vec<HrWindow> {
    vec![
        HrWindow::Finite(15.0),
        HrWindow::Finite(30.0),
        HrWindow::Finite(DEFAULT_STUDY_WINDOW_S),
        HrWindow::Infinite,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub window: HrWindow,
    pub stride_s: f64,
    pub detrend_lambda: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            window: HrWindow::Finite(DEFAULT_STUDY_WINDOW_S),
            stride_s: 1.0,
            detrend_lambda: DEFAULT_DETREND_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatMetrics {
    pub ibis: IbiSeries,
    pub hr: HrSeries,
    pub hrv: HrvReport,
}

/// Range- and 3-sigma-filtered IBIs, without intervals overlapping a blank region.
pub fn filtered_ibis(beats: &BeatSeries, blanks: &[BlankRegion]) -> IbiSeries {
    let mut raw = ibis_from_beats(beats);
    raw.intervals
        .retain(|i| !blanks.iter().any(|b| b.overlaps(i.start_s, i.end_s())));
    filter_ibis(&raw)
}

/// Filtered IBIs, HR series and HRV for a beat series. Intervals that
/// overlap a blank region are dropped before filtering.
pub fn beat_metrics(beats: &BeatSeries, blanks: &[BlankRegion], config: &MetricsConfig) -> Result<BeatMetrics> {
    let ibis = filtered_ibis(beats, blanks);
    let hr = heart_rate(&ibis, config.window, config.stride_s)?;
    let hrv = hrv_report(&ibis, beats, config.detrend_lambda);
    Ok(BeatMetrics { ibis, hr, hrv })
}

/// Reference HR/HRV from cleaned beats.
pub fn gt_reference(
    beats: &BeatSeries,
    blanks: &[BlankRegion],
    window: HrWindow,
    stride_s: f64,
) -> Result<(HrSeries, HrvReport)> {
    if beats.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "reference needs at least 2 beats, have {}",
            beats.len()
        )));
    }
    let m = beat_metrics(
        beats,
        blanks,
        &MetricsConfig {
            window,
            stride_s,
            ..MetricsConfig::default()
        },
    )?;
    Ok((m.hr, m.hrv))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrMae {
    pub mae_bpm: f64,
    /// Population standard deviation of the absolute errors.
    pub std_bpm: f64,
    /// Fraction of truth windows that have a prediction.
    pub coverage: f64,
    pub n_windows: usize,
}

fn center_key(e: &HrEntry) -> i64 {
    (e.window_center * 1e6).round() as i64
}

/// Paired absolute errors between two HR series on the same window grid.
fn paired_errors(pred: &HrSeries, truth: &HrSeries) -> Vec<f64> {
    let finite = |s: &HrSeries| s.entries.iter().all(|e| e.window_s != HrWindow::Infinite);
    if !finite(pred) || !finite(truth) {
        return match (pred.entries.first(), truth.entries.first()) {
            (Some(p), Some(t)) if pred.len() == 1 && truth.len() == 1 => vec![(p.bpm - t.bpm).abs()],
            _ => Vec::new(),
        };
    }
    let by_center: BTreeMap<i64, f64> = pred.entries.iter().map(|e| (center_key(e), e.bpm)).collect();
    truth
        .entries
        .iter()
        .filter_map(|t| by_center.get(&center_key(t)).map(|p| (p - t.bpm).abs()))
        .collect()
}

/// Mean and spread of absolute HR error over windows present in both series.
pub fn hr_mae(pred: &HrSeries, truth: &HrSeries) -> Result<HrMae> {
    let errors = paired_errors(pred, truth);
    if errors.is_empty() {
        return Err(Error::InsufficientData("no overlapping HR windows".into()));
    }
    Ok(HrMae {
        mae_bpm: stats::mean(&errors),
        std_bpm: stats::std_pop(&errors),
        coverage: errors.len() as f64 / truth.len() as f64,
        n_windows: errors.len(),
    })
}

/// 75 bpm at every truth window.
pub fn baseline_hr(truth: &HrSeries) -> HrSeries {
    HrSeries {
        entries: truth
            .entries
            .iter()
            .map(|e| HrEntry {
                bpm: BASELINE_BPM,
                ..*e
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub window: HrWindow,
    pub mae_bpm: f64,
    /// MAE relative to the infinite-window MAE; `None` when undefined.
    pub ratio: Option<f64>,
    /// Both MAEs were exactly zero (ratio fixed at 1).
    pub exact: bool,
}

/// HR MAE for several window lengths, relative to the infinite window.
pub fn window_length_sweep(
    pred: &BeatSeries,
    truth: &BeatSeries,
    lengths: &[HrWindow],
    stride_s: f64,
) -> Result<Vec<SweepPoint>> {
    if lengths.len() < 2 || !lengths.contains(&HrWindow::Infinite) {
        return Err(Error::Config(
            "window sweep needs >= 2 lengths including inf".into(),
        ));
    }
    let mae_for = |window: HrWindow| -> Result<f64> {
        let cfg = MetricsConfig {
            window,
            stride_s,
            ..MetricsConfig::default()
        };
        let p = beat_metrics(pred, &[], &cfg)?;
        let t = beat_metrics(truth, &[], &cfg)?;
        Ok(hr_mae(&p.hr, &t.hr)?.mae_bpm)
    };
    let inf_mae = mae_for(HrWindow::Infinite)?;
    lengths
        .iter()
        .map(|&window| {
            let mae = mae_for(window)?;
            let (ratio, exact) = if inf_mae > 0.0 {
                (Some(mae / inf_mae), false)
            } else if mae == 0.0 {
                (Some(1.0), true)
            } else {
                (None, false)
            };
            Ok(SweepPoint {
                window,
                mae_bpm: mae,
                ratio,
                exact,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricError {
    pub predicted: Option<f64>,
    pub truth: Option<f64>,
    pub abs_error: Option<f64>,
}

impl MetricError {
    fn new(predicted: Option<f64>, truth: Option<f64>) -> Self {
        Self {
            predicted,
            truth,
            abs_error: predicted.zip(truth).map(|(p, t)| (p - t).abs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrvErrors {
    pub rmssd_ms: MetricError,
    pub sdnn_ms: MetricError,
    pub lf_nu: MetricError,
    pub hf_nu: MetricError,
    pub lf_hf: MetricError,
}

impl HrvErrors {
    pub fn new(pred: &HrvReport, truth: &HrvReport) -> Self {
        Self {
            rmssd_ms: MetricError::new(pred.rmssd_ms, truth.rmssd_ms),
            sdnn_ms: MetricError::new(pred.sdnn_ms, truth.sdnn_ms),
            lf_nu: MetricError::new(pred.lf_nu, truth.lf_nu),
            hf_nu: MetricError::new(pred.hf_nu, truth.hf_nu),
            lf_hf: MetricError::new(pred.lf_hf, truth.lf_hf),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub window: HrWindow,
    pub mae_bpm: f64,
    pub std_bpm: f64,
    pub coverage: f64,
    pub n_windows: usize,
    pub baseline_mae_bpm: f64,
    pub baseline_std_bpm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub hr: Vec<WindowScore>,
    pub hrv: HrvErrors,
    pub n_pred_beats: usize,
    pub n_truth_beats: usize,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Scores predicted beats against cleaned reference beats for each window
/// preset. Blank regions apply to both sides.
pub fn evaluate(
    pred: &BeatSeries,
    truth: &BeatSeries,
    blanks: &[BlankRegion],
    windows: &[HrWindow],
    stride_s: f64,
) -> Result<EvaluationReport> {
    if windows.is_empty() {
        return Err(Error::Config("no HR window presets given".into()));
    }
    let (Some((p0, p1)), Some((t0, t1))) = (pred.span(), truth.span()) else {
        return Err(Error::InsufficientData("prediction or reference has no beats".into()));
    };
    if p1 < t0 || t1 < p0 {
        return Err(Error::Validation(format!(
            "no temporal overlap: prediction [{p0}, {p1}] s, reference [{t0}, {t1}] s"
        )));
    }
    let mut hr = Vec::with_capacity(windows.len());
    let mut hrv = None;
    for &window in windows {
        let cfg = MetricsConfig {
            window,
            stride_s,
            ..MetricsConfig::default()
        };
        let p = beat_metrics(pred, blanks, &cfg)?;
        let t = beat_metrics(truth, blanks, &cfg)?;
        let score = hr_mae(&p.hr, &t.hr)?;
        let base = hr_mae(&baseline_hr(&t.hr), &t.hr)?;
        hr.push(WindowScore {
            window,
            mae_bpm: score.mae_bpm,
            std_bpm: score.std_bpm,
            coverage: score.coverage,
            n_windows: score.n_windows,
            baseline_mae_bpm: base.mae_bpm,
            baseline_std_bpm: base.std_bpm,
        });
        hrv.get_or_insert_with(|| HrvErrors::new(&p.hrv, &t.hrv));
    }
    Ok(EvaluationReport {
        hr,
        hrv: hrv.expect("at least one window"),
        n_pred_beats: pred.len(),
        n_truth_beats: truth.len(),
    })
}

/// Agreement between raw detector peaks and hand-cleaned peaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub hr_mae_bpm: f64,
    pub hr_std_bpm: f64,
    pub rmssd_mae_ms: f64,
    pub rmssd_std_ms: f64,
    pub n_recordings: usize,
    pub n_windows: usize,
}

/// One recording for [`pooled_deviation`].
#[derive(Debug, Clone)]
pub struct CleanedRecording {
    pub raw: GroundTruthRecord,
    pub cleaned: BeatSeries,
    pub blanks: Vec<BlankRegion>,
}

/// Raw-vs-clean deviation for a single recording.
pub fn raw_vs_clean_deviation(
    raw: &GroundTruthRecord,
    cleaned: &BeatSeries,
    blanks: &[BlankRegion],
    config: &MetricsConfig,
    delta_factor: f64,
) -> Result<DeviationReport> {
    pooled_deviation(
        &[CleanedRecording {
            raw: raw.clone(),
            cleaned: cleaned.clone(),
            blanks: blanks.to_vec(),
        }],
        config,
        delta_factor,
    )
}

/// Raw-vs-clean deviation pooled over recordings: HR errors over all
/// windows, RMSSD errors one per recording.
pub fn pooled_deviation(
    recordings: &[CleanedRecording],
    config: &MetricsConfig,
    delta_factor: f64,
) -> Result<DeviationReport> {
    let mut hr_errors = Vec::new();
    let mut rmssd_errors = Vec::new();
    for rec in recordings {
        let w = &rec.raw.waveform;
        if let Some((a, b)) = rec.cleaned.span() {
            let end = w.time_at(w.len().saturating_sub(1));
            if a < w.t0 || b > end {
                return Err(Error::Validation(format!(
                    "cleaned beats [{a}, {b}] s exceed the waveform span [{}, {end}] s",
                    w.t0
                )));
            }
        }
        let proposed = propose_peaks(&rec.raw, delta_factor)?;
        let raw_m = beat_metrics(&proposed, &rec.blanks, config)?;
        let clean_m = beat_metrics(&rec.cleaned, &rec.blanks, config)?;
        hr_errors.extend(paired_errors(&raw_m.hr, &clean_m.hr));
        if let (Some(p), Some(t)) = (raw_m.hrv.rmssd_ms, clean_m.hrv.rmssd_ms) {
            rmssd_errors.push((p - t).abs());
        }
    }
    if hr_errors.is_empty() {
        return Err(Error::InsufficientData("no overlapping HR windows".into()));
    }
    let (rmssd_mae_ms, rmssd_std_ms) = if rmssd_errors.is_empty() {
        (0.0, 0.0)
    } else {
        (stats::mean(&rmssd_errors), stats::std_pop(&rmssd_errors))
    };
    Ok(DeviationReport {
        hr_mae_bpm: stats::mean(&hr_errors),
        hr_std_bpm: stats::std_pop(&hr_errors),
        rmssd_mae_ms,
        rmssd_std_ms,
        n_recordings: recordings.len(),
        n_windows: hr_errors.len(),
    })
}
