//! Subcommand bodies. Each takes parsed arguments and returns a core result
//! so `main` can map failures onto exit codes.

use std::fs;
use std::path::{Path, PathBuf};

use pulse_core::beat_analysis::HrWindow;
use pulse_core::evaluation::{evaluate, EvaluationReport};
use pulse_core::ground_truth_cleaning::AnnotationFile;
use pulse_core::pipeline::{analyze, bench, AnalysisResult, BenchReport, PipelineConfig};
use pulse_core::synth::{contact_waveform, synth_trace, IbiModulation, MotionConfig, MotionCoupling, SynthConfig};
use pulse_core::trace_io::{parse_trace, serialize_gt_waveform, serialize_trace, SampleTrace, SignalKind};
use pulse_core::{Error, Result};

/// Sample rate of the reference waveform written by `simulate`.
pub const REFERENCE_RATE_HZ: f64 = 100.0;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn load_trace(path: &Path) -> Result<SampleTrace> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_trace(&read(path)?, &id)
}

/// Comma-separated HR windows such as `15,30,inf`.
pub fn parse_windows(list: &str) -> Result<Vec<HrWindow>> {
    list.split(',').map(|s| s.parse()).collect()
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeArgs {
    pub trace: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub hop_s: Option<f64>,
    pub hr_window: Option<HrWindow>,
    pub no_motion_suppression: bool,
    pub no_timing: bool,
}

/// Config file values first, then command-line overrides.
pub fn pipeline_config(args: &AnalyzeArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(p) => serde_json::from_slice(&read(p)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(h) = args.hop_s {
        cfg.hop_s = h;
    }
    if let Some(w) = args.hr_window {
        cfg.hr_window = w;
    }
    if args.no_motion_suppression {
        cfg.motion_suppression = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run_analyze(args: &AnalyzeArgs) -> Result<AnalysisResult> {
    let cfg = pipeline_config(args)?;
    let trace = load_trace(&args.trace)?;
    let result = analyze(&trace, &cfg)?;
    log::info!(
        "{}: {} beats, {} windows",
        trace.source_id(),
        result.beats.len(),
        result.meta.window_count
    );
    write(&args.out, &result.to_json(!args.no_timing)?)?;
    Ok(result)
}

pub fn run_evaluate(result: &Path, truth: &Path, windows: &[HrWindow], stride_s: f64, out: &Path) -> Result<EvaluationReport> {
    let result = AnalysisResult::parse(&read(result)?)?;
    let truth = AnnotationFile::parse(&read(truth)?)?;
    let report = evaluate(
        &result.beat_series()?,
        &truth.beats()?,
        &truth.blanks()?,
        windows,
        stride_s,
    )?;
    write(out, &report.to_json()?)?;
    Ok(report)
}

/// Synthetic-trace parameters; unset fields keep the preset (or default) value.
#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub preset: Option<String>,
    pub hr: Option<f64>,
    pub rate: Option<f64>,
    pub pulse_amp: Option<f64>,
    pub ibi_mod_freq: Option<f64>,
    pub ibi_mod_amp: Option<f64>,
    pub motion_freq: Option<f64>,
    pub motion_amp: Option<f64>,
    pub motion_coupling: Option<MotionCoupling>,
    pub noise: Option<f64>,
    pub duration: Option<f64>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

pub fn synth_config(args: &SimulateArgs) -> Result<SynthConfig> {
    let mut cfg = match &args.preset {
        Some(p) => SynthConfig::preset(p)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = args.hr {
        cfg.mean_hr_bpm = v;
    }
    if let Some(v) = args.rate {
        cfg.rate = v;
    }
    if let Some(v) = args.pulse_amp {
        cfg.pulse_amplitude = v;
    }
    if let Some(v) = args.noise {
        cfg.noise_sigma = v;
    }
    if let Some(v) = args.duration {
        cfg.duration_s = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.ibi_mod_freq.is_some() || args.ibi_mod_amp.is_some() {
        let (f0, a0) = match cfg.ibi_modulation {
            IbiModulation::Sine { freq_hz, amplitude_ms } => (freq_hz, amplitude_ms),
            _ => (0.1, 0.0),
        };
        cfg.ibi_modulation = IbiModulation::Sine {
            freq_hz: args.ibi_mod_freq.unwrap_or(f0),
            amplitude_ms: args.ibi_mod_amp.unwrap_or(a0),
        };
    }
    if args.motion_freq.is_some() || args.motion_amp.is_some() || args.motion_coupling.is_some() {
        let base = cfg.motion.clone().unwrap_or(MotionConfig {
            freq_hz: 1.5,
            amplitude: 3.0 * cfg.pulse_amplitude,
            coupling: MotionCoupling::Chromatic,
            pose_amplitude_deg: 10.0,
        });
        cfg.motion = Some(MotionConfig {
            freq_hz: args.motion_freq.unwrap_or(base.freq_hz),
            amplitude: args.motion_amp.unwrap_or(base.amplitude),
            coupling: args.motion_coupling.unwrap_or(base.coupling),
            ..base
        });
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes `trace.csv`, `truth.json` (annotation file), `reference.csv`
/// (contact waveform) and `synth.json` (the configuration) into `out`.
pub fn run_simulate(args: &SimulateArgs) -> Result<SynthConfig> {
    let cfg = synth_config(args)?;
    let out = synth_trace(&cfg)?;
    let dir = &args.out;
    fs::create_dir_all(dir)?;
    write(&dir.join("trace.csv"), &serialize_trace(&out.trace))?;
    let truth = AnnotationFile {
        version: 0,
        signal_id: "reference".into(),
        kind: SignalKind::Ppg,
        peaks: out.truth_beats.times().to_vec(),
        blank_regions: Vec::new(),
        annotator: "synth".into(),
        created_at: String::new(),
    };
    write(&dir.join("truth.json"), &truth.to_json()?)?;
    let reference = contact_waveform(&out.truth_beats, cfg.duration_s, REFERENCE_RATE_HZ)?;
    write(&dir.join("reference.csv"), &serialize_gt_waveform(&reference))?;
    let mut echo = serde_json::to_string_pretty(&cfg)?;
    echo.push('\n');
    write(&dir.join("synth.json"), &echo)?;
    Ok(cfg)
}

pub enum BenchInput {
    Trace(PathBuf),
    Preset(String),
}

pub fn run_bench(input: &BenchInput, config: &PipelineConfig, runs: usize) -> Result<BenchReport> {
    let trace = match input {
        BenchInput::Trace(p) => load_trace(p)?,
        BenchInput::Preset(name) => synth_trace(&SynthConfig::preset(name)?)?.trace,
    };
    bench(&trace, config, runs)
}
