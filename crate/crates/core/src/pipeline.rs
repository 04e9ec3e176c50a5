//! End-to-end streaming analysis: trace → BVP → beats → HR/HRV.
//!
//! Windows of 256 (30 Hz) or 512 (60 Hz) samples slide by the hop. Each
//! window is POS-projected, transformed, cleaned of head-motion frequencies,
//! band-limited, narrowband-filtered around its dominant frequency and
//! overlap-added. Beats are detected online on finalized BVP samples.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::beat_analysis::{heart_rate, refine_peak_offset, BeatSeries, BeatSource, HrSeries, HrWindow, PeakScanner};
use crate::error::{Error, Result};
use crate::evaluation::filtered_ibis;
use crate::hrv_metrics::{hrv_report, HrvReport, DEFAULT_DETREND_LAMBDA};
use crate::pulse_extraction::{pos_project, window_samples, RgbWindow};
use crate::spectral_filtering::{
    band_limit, dominant_frequency, narrowband_from_spectrum, suppress_motion, z_normalize, BandLimits,
    BvpAccumulator, Spectrum, Transforms,
};
use crate::stats;
use crate::trace_io::{choose_pipeline_rate, resample_uniform, GapStats, ResampledTrace, SampleTrace, UniformSignal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window_s: f64,
    pub hop_s: f64,
    pub band: BandLimits,
    pub narrow_bw_hz: f64,
    pub peak_delta: f64,
    pub hr_window: HrWindow,
    pub hr_stride_s: f64,
    pub motion_suppression: bool,
    pub detrend_lambda: f64,
    /// Parabolic sub-sample refinement of beat times.
    pub subsample_peaks: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_s: 8.53,
            hop_s: 0.5,
            band: BandLimits::HEART,
            narrow_bw_hz: 0.47,
            peak_delta: 0.3,
            hr_window: HrWindow::Finite(16.0),
            hr_stride_s: 1.0,
            motion_suppression: true,
            detrend_lambda: DEFAULT_DETREND_LAMBDA,
            subsample_peaks: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window_s", self.window_s),
            ("hop_s", self.hop_s),
            ("narrow_bw_hz", self.narrow_bw_hz),
            ("peak_delta", self.peak_delta),
            ("hr_stride_s", self.hr_stride_s),
            ("detrend_lambda", self.detrend_lambda),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if let HrWindow::Finite(w) = self.hr_window {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("hr_window must be > 0, got {w}")));
            }
        }
        BandLimits::new(self.band.lo, self.band.hi)?;
        Ok(())
    }

    /// Window and hop lengths in samples at `rate`.
    pub fn frames(&self, rate: f64) -> Result<(usize, usize)> {
        let n = window_samples(rate)?;
        if (self.window_s * rate).round() as usize != n {
            return Err(Error::Config(format!(
                "window of {} s is not {n} samples at {rate} Hz",
                self.window_s
            )));
        }
        let hop = self.hop_s * rate;
        if (hop - hop.round()).abs() > 1e-6 || hop.round() < 1.0 || hop.round() as usize > n {
            return Err(Error::Config(format!(
                "hop of {} s must be a whole number of samples in [1, {n}] at {rate} Hz",
                self.hop_s
            )));
        }
        self.band.check_nyquist(rate)?;
        Ok((n, hop.round() as usize))
    }
}

/// Pipeline stages in execution order.
pub const STAGES: [&str; 12] = [
    "resample",
    "pos_project",
    "forward_spectrum",
    "suppress_motion",
    "band_limit",
    "dominant_frequency",
    "narrowband_filter",
    "overlap_add",
    "detect_peaks",
    "filter_ibis",
    "heart_rate",
    "hrv",
];

#[derive(Debug, Clone, Default)]
struct StageTimer {
    samples: Vec<Vec<f64>>,
}

impl StageTimer {
    fn new() -> Self {
        Self {
            samples: vec![Vec::new(); STAGES.len()],
        }
    }

    fn time<T>(&mut self, stage: usize, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.at_stage(STAGES[stage]));
        self.samples[stage].push(start.elapsed().as_secs_f64() * 1000.0);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub calls: usize,
    pub total_ms: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub ms_per_frame: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stages: Vec<StageTiming>,
    pub total_ms: f64,
    pub ms_per_frame: f64,
    /// Trace duration divided by processing time.
    pub realtime_factor: f64,
}

fn summarize(samples: &[Vec<f64>], frames: usize, duration_s: f64) -> Timing {
    let frames = frames.max(1) as f64;
    let stages: Vec<StageTiming> = STAGES
        .iter()
        .zip(samples)
        .map(|(name, s)| {
            let total: f64 = s.iter().sum();
            StageTiming {
                stage: name.to_string(),
                calls: s.len(),
                total_ms: total,
                mean_ms: if s.is_empty() { 0.0 } else { stats::mean(s) },
                std_ms: if s.is_empty() { 0.0 } else { stats::std_pop(s) },
                ms_per_frame: total / frames,
            }
        })
        .collect();
    let total_ms: f64 = stages.iter().map(|s| s.total_ms).sum();
    Timing {
        total_ms,
        ms_per_frame: total_ms / frames,
        realtime_factor: if total_ms > 0.0 {
            duration_s * 1000.0 / total_ms
        } else {
            f64::INFINITY
        },
        stages,
    }
}

/// Run bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMeta {
    pub rate: f64,
    pub t0: f64,
    pub n_samples: usize,
    pub duration_s: f64,
    pub window_samples: usize,
    pub hop_samples: usize,
    pub window_count: usize,
    /// Windows with no in-band energy and no earlier frequency to fall back on.
    pub windows_skipped: usize,
    pub uncovered_samples: usize,
    pub n_ibis: usize,
    pub n_ibis_used: usize,
    pub gaps: GapStats,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub source_id: String,
    pub beats: Vec<f64>,
    pub hr_series: HrSeries,
    pub hrv: HrvReport,
    pub meta: ResultMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl AnalysisResult {
    /// Pretty JSON with a fixed key order; timing is left out unless asked for.
    pub fn to_json(&self, include_timing: bool) -> Result<String> {
        let mut s = if include_timing || self.timing.is_none() {
            serde_json::to_string_pretty(self)?
        } else {
            serde_json::to_string_pretty(&AnalysisResult {
                timing: None,
                ..self.clone()
            })?
        };
        s.push('\n');
        Ok(s)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let r: AnalysisResult = serde_json::from_slice(bytes)?;
        BeatSeries::new(r.beats.clone(), BeatSource::Rppg)?;
        Ok(r)
    }

    pub fn beat_series(&self) -> Result<BeatSeries> {
        BeatSeries::new(self.beats.clone(), BeatSource::Rppg)
    }
}

/// Incremental window loop over a resampled trace.
#[derive(Debug)]
pub struct Analyzer {
    config: PipelineConfig,
    rate: f64,
    t0: f64,
    n: usize,
    hop: usize,
    transforms: Transforms,
    acc: BvpAccumulator,
    scanner: PeakScanner,
    scanned: usize,
    peaks: Vec<f64>,
    last_center: Option<f64>,
    next_start: usize,
    windows: usize,
    skipped: usize,
    timer: StageTimer,
}

impl Analyzer {
    pub fn new(config: &PipelineConfig, rate: f64, t0: f64) -> Result<Self> {
        config.validate()?;
        let (n, hop) = config.frames(rate)?;
        Ok(Self {
            config: config.clone(),
            rate,
            t0,
            n,
            hop,
            transforms: Transforms::new(n)?,
            acc: BvpAccumulator::new(t0, rate),
            scanner: PeakScanner::new(config.peak_delta),
            scanned: 0,
            peaks: Vec::new(),
            last_center: None,
            next_start: 0,
            windows: 0,
            skipped: 0,
            timer: StageTimer::new(),
        })
    }

    pub fn window_samples(&self) -> usize {
        self.n
    }

    pub fn hop_samples(&self) -> usize {
        self.hop
    }

    /// Beats confirmed on finalized samples so far.
    pub fn confirmed_beats(&self) -> &[f64] {
        &self.peaks
    }

    /// Processes every whole hop-aligned window available in `rs`.
    pub fn feed(&mut self, rs: &ResampledTrace) -> Result<()> {
        while self.next_start + self.n <= rs.len() {
            self.process_window(rs, self.next_start)?;
            self.next_start += self.hop;
        }
        Ok(())
    }

    /// Adds one last window aligned with the end of `rs` when the hop grid
    /// leaves trailing samples uncovered.
    pub fn feed_tail(&mut self, rs: &ResampledTrace) -> Result<()> {
        if rs.len() < self.n {
            return Ok(());
        }
        let last = rs.len() - self.n;
        let last_grid = self.next_start.checked_sub(self.hop);
        if last_grid.is_none_or(|g| g < last) {
            self.process_window(rs, last)?;
        }
        Ok(())
    }

    fn process_window(&mut self, rs: &ResampledTrace, start: usize) -> Result<()> {
        let range = start..start + self.n;
        let rate = self.rate;
        let band = self.config.band;
        let t = &mut self.timer;
        let raw = t.time(1, || {
            let w = RgbWindow::new(&rs.r.values[range.clone()], &rs.g.values[range.clone()], &rs.b.values[range.clone()], rate)?;
            pos_project(&w)
        })?;
        let transforms = &self.transforms;
        let (spec, pose) = t.time(2, || {
            let spec = transforms.forward(&raw.values, rate)?;
            let pose = match &rs.pose {
                Some(channels) => {
                    let mut out = Vec::with_capacity(3);
                    for c in channels {
                        let seg = &c.values[range.clone()];
                        let m = stats::mean(seg);
                        let centered: Vec<f64> = seg.iter().map(|v| v - m).collect();
                        out.push(transforms.forward(&centered, rate)?);
                    }
                    let [a, b, c]: [Spectrum; 3] = out.try_into().expect("three pose channels");
                    Some([a, b, c])
                }
                None => None,
            };
            Ok((spec, pose))
        })?;
        let enabled = self.config.motion_suppression;
        let cleaned = t.time(3, || suppress_motion(&spec, pose.as_ref(), band, enabled))?;
        let limited = t.time(4, || band_limit(&cleaned, band))?;
        let found = t.time(5, || match dominant_frequency(&limited, band) {
            Ok(f) => Ok(Some(f)),
            Err(Error::NoSignal) => Ok(None),
            Err(e) => Err(e),
        })?;
        self.windows += 1;
        let Some(center) = found.or(self.last_center) else {
            log::debug!("window at sample {start}: no in-band signal, skipped");
            self.skipped += 1;
            return Ok(());
        };
        self.last_center = Some(center);
        let bw = self.config.narrow_bw_hz;
        let filtered = t.time(6, || narrowband_from_spectrum(transforms, &spec, center, bw, band))?;
        let acc = &mut self.acc;
        t.time(7, || {
            acc.add_at_index(&z_normalize(&filtered), start)?;
            Ok(())
        })?;
        let ready = self.acc.finalized_len();
        self.scan(ready)
    }

    fn scan(&mut self, upto: usize) -> Result<()> {
        let from = self.scanned;
        let scanner = &mut self.scanner;
        let peaks = &mut self.peaks;
        let bvp = self.acc.emitted();
        let (t0, rate, refine) = (self.t0, self.rate, self.config.subsample_peaks);
        self.timer.time(8, || {
            for k in from..upto {
                if let Some(p) = scanner.push(bvp[k]) {
                    let offset = if refine { refine_peak_offset(bvp, p) } else { 0.0 };
                    peaks.push(t0 + (p as f64 + offset) / rate);
                }
            }
            Ok(())
        })?;
        self.scanned = upto;
        Ok(())
    }

    /// Flushes pending samples and returns the BVP with all detected beats.
    pub fn finish(mut self) -> Result<AnalyzerOutput> {
        let acc = std::mem::replace(&mut self.acc, BvpAccumulator::new(self.t0, self.rate));
        let uncovered_before = acc.uncovered();
        let bvp = acc.finish();
        let from = self.scanned;
        let (t0, rate, refine) = (self.t0, self.rate, self.config.subsample_peaks);
        let scanner = &mut self.scanner;
        let peaks = &mut self.peaks;
        self.timer.time(8, || {
            for k in from..bvp.len() {
                if let Some(p) = scanner.push(bvp.values[k]) {
                    let offset = if refine { refine_peak_offset(&bvp.values, p) } else { 0.0 };
                    peaks.push(t0 + (p as f64 + offset) / rate);
                }
            }
            Ok(())
        })?;
        Ok(AnalyzerOutput {
            beats: BeatSeries::new(self.peaks, BeatSource::Rppg).map_err(|e| e.at_stage(STAGES[8]))?,
            uncovered: uncovered_before,
            bvp,
            windows: self.windows,
            skipped: self.skipped,
            timer: self.timer,
        })
    }
}

#[derive(Debug)]
pub struct AnalyzerOutput {
    pub beats: BeatSeries,
    pub bvp: UniformSignal,
    pub windows: usize,
    pub skipped: usize,
    pub uncovered: usize,
    timer: StageTimer,
}

/// Runs the full pipeline on a trace.
pub fn analyze(trace: &SampleTrace, config: &PipelineConfig) -> Result<AnalysisResult> {
    config.validate()?;
    let mut timer = StageTimer::new();
    let rate = timer.time(0, || choose_pipeline_rate(trace))?;
    let rs = timer.time(0, || resample_uniform(trace, rate))?;
    let mut analyzer = Analyzer::new(config, rate, rs.t0())?;
    if rs.len() < analyzer.window_samples() {
        return Err(Error::InsufficientData(format!(
            "trace has {} samples at {rate} Hz, one window needs {}",
            rs.len(),
            analyzer.window_samples()
        ))
        .at_stage(STAGES[0]));
    }
    analyzer.feed(&rs)?;
    analyzer.feed_tail(&rs)?;
    let (n, hop) = (analyzer.window_samples(), analyzer.hop_samples());
    let out = analyzer.finish()?;
    for (stage, s) in out.timer.samples.iter().enumerate().skip(1) {
        timer.samples[stage].extend_from_slice(s);
    }

    let ibis = timer.time(9, || Ok(filtered_ibis(&out.beats, &[])))?;
    let hr = timer.time(10, || heart_rate(&ibis, config.hr_window, config.hr_stride_s))?;
    let hrv = timer.time(11, || Ok(hrv_report(&ibis, &out.beats, config.detrend_lambda)))?;

    let duration_s = rs.len() as f64 / rate;
    let timing = summarize(&timer.samples, rs.len(), duration_s);
    Ok(AnalysisResult {
        source_id: trace.source_id().to_string(),
        beats: out.beats.times().to_vec(),
        hr_series: hr,
        meta: ResultMeta {
            rate,
            t0: rs.t0(),
            n_samples: rs.len(),
            duration_s,
            window_samples: n,
            hop_samples: hop,
            window_count: out.windows,
            windows_skipped: out.skipped,
            uncovered_samples: out.uncovered,
            n_ibis: ibis.len(),
            n_ibis_used: hrv.n_ibis_used,
            gaps: rs.gaps,
            config: config.clone(),
        },
        hrv,
        timing: Some(timing),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStage {
    pub stage: String,
    pub ms_per_frame_mean: f64,
    pub ms_per_frame_std: f64,
    pub ms_per_call_mean: f64,
    pub calls_per_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub source_id: String,
    pub n_frames: usize,
    pub duration_s: f64,
    pub runs: usize,
    pub wall_ms_mean: f64,
    pub wall_ms_std: f64,
    pub ms_per_frame: f64,
    pub realtime_factor: f64,
    pub stages: Vec<BenchStage>,
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Times `runs` full analyses of `trace` and reports per-stage cost.
pub fn bench(trace: &SampleTrace, config: &PipelineConfig, runs: usize) -> Result<BenchReport> {
    let runs = runs.max(1);
    let mut walls = Vec::with_capacity(runs);
    let mut timings = Vec::with_capacity(runs);
    let mut frames = 0;
    let mut duration_s = 0.0;
    for _ in 0..runs {
        let start = Instant::now();
        let result = analyze(trace, config)?;
        walls.push(start.elapsed().as_secs_f64() * 1000.0);
        frames = result.meta.n_samples;
        duration_s = result.meta.duration_s;
        timings.push(result.timing.expect("analysis records timing"));
    }
    let stages = STAGES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let per_frame: Vec<f64> = timings.iter().map(|t| t.stages[i].ms_per_frame).collect();
            let per_call: Vec<f64> = timings.iter().map(|t| t.stages[i].mean_ms).collect();
            BenchStage {
                stage: name.to_string(),
                ms_per_frame_mean: stats::mean(&per_frame),
                ms_per_frame_std: stats::std_pop(&per_frame),
                ms_per_call_mean: stats::mean(&per_call),
                calls_per_run: timings[0].stages[i].calls,
            }
        })
        .collect();
    let wall_ms_mean = stats::mean(&walls);
    Ok(BenchReport {
        source_id: trace.source_id().to_string(),
        n_frames: frames,
        duration_s,
        runs,
        wall_ms_mean,
        wall_ms_std: stats::std_pop(&walls),
        ms_per_frame: wall_ms_mean / frames.max(1) as f64,
        realtime_factor: duration_s * 1000.0 / wall_ms_mean.max(f64::MIN_POSITIVE),
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_trace, SynthConfig};

    fn clean(hr: f64, duration_s: f64) -> SampleTrace {
        synth_trace(&SynthConfig {
            mean_hr_bpm: hr,
            duration_s,
            ..SynthConfig::default()
        })
        .unwrap()
        .trace
    }

    #[test]
    fn config_frames() {
        let c = PipelineConfig::default();
        assert_eq!(c.frames(30.0).unwrap(), (256, 15));
        assert_eq!(c.frames(60.0).unwrap(), (512, 30));
        let odd = PipelineConfig {
            hop_s: 0.51,
            ..c.clone()
        };
        assert!(odd.frames(30.0).is_err());
        let long = PipelineConfig {
            window_s: 10.0,
            ..c
        };
        assert!(long.frames(30.0).is_err());
    }

    #[test]
    fn short_trace_is_insufficient() {
        let trace = clean(60.0, 5.0);
        let err = analyze(&trace, &PipelineConfig::default()).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::InsufficientData);
        assert!(err.to_string().starts_with("resample"));
    }

    #[test]
    fn single_window_trace() {
        let trace = clean(60.0, 255.0 / 30.0);
        let r = analyze(&trace, &PipelineConfig::default()).unwrap();
        assert_eq!(r.meta.window_count, 1);
        let t = r.timing.unwrap();
        assert_eq!(t.stages[1].calls, 1);
    }

    #[test]
    fn recovers_steady_rate() {
        let r = analyze(&clean(72.0, 60.0), &PipelineConfig::default()).unwrap();
        let mean_bpm = stats::mean(&r.hr_series.entries.iter().map(|e| e.bpm).collect::<Vec<_>>());
        assert!((mean_bpm - 72.0).abs() < 0.5, "{mean_bpm}");
        assert_eq!(r.meta.uncovered_samples, 0);
    }

    #[test]
    fn growing_prefix_confirms_a_prefix_of_beats() {
        let trace = clean(66.0, 60.0);
        let cfg = PipelineConfig::default();
        let full = analyze(&trace, &cfg).unwrap();
        for n in [400, 900, 1500] {
            let prefix = trace.prefix(n);
            let rs = resample_uniform(&prefix, 30.0).unwrap();
            let mut a = Analyzer::new(&cfg, 30.0, rs.t0()).unwrap();
            a.feed(&rs).unwrap();
            let confirmed = a.confirmed_beats();
            assert!(!confirmed.is_empty());
            assert_eq!(confirmed, &full.beats[..confirmed.len()]);
        }
    }

    #[test]
    fn result_json_round_trips() {
        let r = analyze(&clean(80.0, 30.0), &PipelineConfig::default()).unwrap();
        let text = r.to_json(false).unwrap();
        assert!(!text.contains("\"timing\""));
        let back = AnalysisResult::parse(text.as_bytes()).unwrap();
        assert_eq!(back.to_json(false).unwrap(), text);
        assert!(r.to_json(true).unwrap().contains("\"timing\""));
    }

    #[test]
    fn config_file_fills_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"hop_s": 1.0, "hr_window": "inf"}"#).unwrap();
        assert_eq!(c.hop_s, 1.0);
        assert_eq!(c.hr_window, HrWindow::Infinite);
        assert_eq!(c.window_s, 8.53);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"hopp": 1}"#).is_err());
    }

    #[test]
    fn bench_reports_every_stage() {
        let r = bench(&clean(70.0, 20.0), &PipelineConfig::default(), 2).unwrap();
        assert_eq!(r.stages.len(), STAGES.len());
        assert!(r.realtime_factor > 1.0);
        assert!(r.stages.iter().all(|s| s.ms_per_frame_mean >= 0.0));
    }
}
