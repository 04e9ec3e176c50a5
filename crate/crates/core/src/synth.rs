//! Synthetic RGB/pose traces with exactly known beats.
//!
//! The pulse is a two-harmonic function of the instantaneous beat phase, so
//! each generated beat time is a crest of the colour modulation.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::beat_analysis::{BeatSeries, BeatSource, IBI_MAX_MS, IBI_MIN_MS};
use crate::error::{Error, Result};
use crate::evaluation::{beat_metrics, MetricsConfig};
use crate::hrv_metrics::HrvReport;
use crate::trace_io::{grid_len, GroundTruthRecord, HeadPose, Sample, SampleTrace, SignalKind, UniformSignal};

/// Skin-tone base colour.
pub const BASE_RGB: [f64; 3] = [120.0, 100.0, 90.0];
/// Unnormalized colour direction of the pulse.
pub const PULSE_DIRECTION: [f64; 3] = [0.33, 0.77, 0.53];
/// Relative weight of the second pulse harmonic.
pub const SECOND_HARMONIC: f64 = 0.3;

pub fn pulse_direction() -> [f64; 3] {
    let n = PULSE_DIRECTION.iter().map(|v| v * v).sum::<f64>().sqrt();
    PULSE_DIRECTION.map(|v| v / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IbiModulation {
    None,
    /// `amplitude_ms * sin(2 pi freq t)` added to the mean interval.
    Sine { freq_hz: f64, amplitude_ms: f64 },
    /// Fixed interval list in milliseconds; `mean_hr_bpm` is ignored.
    Explicit { ibis_ms: Vec<f64> },
}

/// How head motion leaks into the colour channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionCoupling {
    /// Pose channels only.
    None,
    /// Equal relative modulation of all colour channels (illumination change).
    Intensity,
    /// Modulation along the pulse colour direction, indistinguishable from
    /// pulse by colour alone.
    Chromatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionConfig {
    pub freq_hz: f64,
    /// Relative colour modulation amplitude.
    pub amplitude: f64,
    pub coupling: MotionCoupling,
    /// Head rotation amplitude written to the pose channels.
    pub pose_amplitude_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub rate: f64,
    pub mean_hr_bpm: f64,
    pub ibi_modulation: IbiModulation,
    /// Relative colour modulation of the pulse.
    pub pulse_amplitude: f64,
    pub motion: Option<MotionConfig>,
    /// Per-channel white noise standard deviation (colour units).
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_s: 300.0,
            rate: 30.0,
            mean_hr_bpm: 72.0,
            ibi_modulation: IbiModulation::None,
            pulse_amplitude: 0.005,
            motion: None,
            noise_sigma: 0.0,
            seed: 1,
        }
    }
}

pub const PRESETS: [&str; 5] = ["clean72", "clean60", "hrv-lf", "hrv-hf", "motion"];

impl SynthConfig {
    /// Named configurations used by the CLI and the acceptance tests.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        let sine = |freq_hz| IbiModulation::Sine {
            freq_hz,
            amplitude_ms: 50.0,
        };
        Ok(match name {
            "clean72" => base,
            "clean60" => Self {
                mean_hr_bpm: 60.0,
                ..base
            },
            "hrv-lf" => Self {
                mean_hr_bpm: 60.0,
                ibi_modulation: sine(0.1),
                ..base
            },
            "hrv-hf" => Self {
                mean_hr_bpm: 60.0,
                ibi_modulation: sine(0.3),
                ..base
            },
            "motion" => Self {
                mean_hr_bpm: 60.0,
                motion: Some(MotionConfig {
                    freq_hz: 1.5,
                    amplitude: 3.0 * base.pulse_amplitude,
                    coupling: MotionCoupling::Chromatic,
                    pose_amplitude_deg: 10.0,
                }),
                ..base
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown synth preset '{other}' (known: {})",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration must be > 0, got {}", self.duration_s));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return bad(format!("rate must be > 0, got {}", self.rate));
        }
        if !matches!(self.ibi_modulation, IbiModulation::Explicit { .. })
            && !(42.0..=240.0).contains(&self.mean_hr_bpm)
        {
            return bad(format!("mean HR {} bpm outside [42, 240]", self.mean_hr_bpm));
        }
        if !(self.pulse_amplitude >= 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("amplitudes must be >= 0".into());
        }
        if let IbiModulation::Sine {
            freq_hz,
            amplitude_ms,
        } = self.ibi_modulation
        {
            if !(freq_hz > 0.0) || !(amplitude_ms >= 0.0) {
                return bad(format!("invalid IBI modulation {freq_hz} Hz / {amplitude_ms} ms"));
            }
        }
        if let Some(m) = &self.motion {
            if !(m.freq_hz > 0.0 && m.freq_hz < self.rate / 2.0) {
                return bad(format!("motion frequency {} Hz must lie in (0, rate/2)", m.freq_hz));
            }
            if !(m.amplitude >= 0.0) || !(m.pose_amplitude_deg >= 0.0) {
                return bad("motion amplitudes must be >= 0".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub trace: SampleTrace,
    pub truth_beats: BeatSeries,
    pub truth_ibis_ms: Vec<f64>,
    pub truth_hrv: HrvReport,
}

/// Generating intervals (ms) and beat times (s, starting at 0).
pub fn synth_ibis(config: &SynthConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    config.validate()?;
    let end = config.duration_s + 1e-9;
    let mut beats = vec![0.0];
    let mut ibis = Vec::new();
    let check = |ibi: f64| {
        if ibi > IBI_MIN_MS && ibi < IBI_MAX_MS {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "generated interval {ibi} ms outside ({IBI_MIN_MS}, {IBI_MAX_MS})"
            )))
        }
    };
    match &config.ibi_modulation {
        IbiModulation::Explicit { ibis_ms } => {
            for &ibi in ibis_ms {
                check(ibi)?;
                let t = beats[beats.len() - 1] + ibi / 1000.0;
                if t > end {
                    break;
                }
                ibis.push(ibi);
                beats.push(t);
            }
        }
        modulation => {
            let mean = 60_000.0 / config.mean_hr_bpm;
            if let IbiModulation::Sine { amplitude_ms, .. } = modulation {
                check(mean - amplitude_ms)?;
                check(mean + amplitude_ms)?;
            }
            loop {
                let t = beats[beats.len() - 1];
                let ibi = match modulation {
                    IbiModulation::Sine {
                        freq_hz,
                        amplitude_ms,
                    } => mean + amplitude_ms * (2.0 * PI * freq_hz * t).sin(),
                    _ => mean,
                };
                check(ibi)?;
                let next = t + ibi / 1000.0;
                if next > end {
                    break;
                }
                ibis.push(ibi);
                beats.push(next);
            }
        }
    }
    Ok((ibis, beats))
}

/// Unit pulse shape at beat phase `phi` (radians); crest value 1 at `phi = 0`.
fn pulse_shape(phi: f64) -> f64 {
    (phi.cos() + SECOND_HARMONIC * (2.0 * phi).cos()) / (1.0 + SECOND_HARMONIC)
}

/// Beat phase at `t`, linear between beats and extended past the last one
/// with the final interval.
struct PhaseTrack<'a> {
    beats: &'a [f64],
    i: usize,
}

impl PhaseTrack<'_> {
    fn phase(&mut self, t: f64) -> f64 {
        let b = self.beats;
        if b.len() < 2 {
            return 0.0;
        }
        while self.i + 2 < b.len() && t >= b[self.i + 1] {
            self.i += 1;
        }
        let (t0, t1) = (b[self.i], b[self.i + 1]);
        2.0 * PI * (t - t0) / (t1 - t0)
    }
}

/// Generates the trace and its ground truth. Deterministic for a given config.
pub fn synth_trace(config: &SynthConfig) -> Result<SynthOutput> {
    let (ibis, beats) = synth_ibis(config)?;
    let dir = pulse_direction();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sigma)
        .map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
    let n = grid_len(config.duration_s, config.rate);
    let mut track = PhaseTrack { beats: &beats, i: 0 };
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / config.rate;
        let p = config.pulse_amplitude * pulse_shape(track.phase(t));
        let mut rel = [p * dir[0], p * dir[1], p * dir[2]];
        let mut gain = 1.0;
        let mut pose = None;
        if let Some(m) = &config.motion {
            let s = (2.0 * PI * m.freq_hz * t).sin();
            match m.coupling {
                MotionCoupling::None => {}
                MotionCoupling::Intensity => gain += m.amplitude * s,
                MotionCoupling::Chromatic => {
                    for c in 0..3 {
                        rel[c] += m.amplitude * s * dir[c];
                    }
                }
            }
            let a = m.pose_amplitude_deg;
            let w = 2.0 * PI * m.freq_hz * t;
            pose = Some(HeadPose {
                pitch: a * w.sin(),
                roll: 0.3 * a * (w + 1.0).sin(),
                yaw: 0.6 * a * (w + 0.5).sin(),
            });
        }
        let mut rgb = [0.0; 3];
        for c in 0..3 {
            let v = BASE_RGB[c] * gain * (1.0 + rel[c]);
            let e = if config.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            rgb[c] = (v + e).max(0.0);
        }
        samples.push(Sample {
            t,
            r: rgb[0],
            g: rgb[1],
            b: rgb[2],
            pose,
        });
    }
    let trace = SampleTrace::new(format!("synth-{}", config.seed), samples)?;
    let truth_beats = BeatSeries::new(beats, BeatSource::GroundTruth)?;
    let truth_hrv = beat_metrics(&truth_beats, &[], &MetricsConfig::default())?.hrv;
    Ok(SynthOutput {
        trace,
        truth_beats,
        truth_ibis_ms: ibis,
        truth_hrv,
    })
}

/// Contact-PPG-like reference waveform for a beat sequence, sampled at
/// `rate` over `[0, duration_s]`; crests sit on the beats.
pub fn contact_waveform(beats: &BeatSeries, duration_s: f64, rate: f64) -> Result<GroundTruthRecord> {
    let mut track = PhaseTrack {
        beats: beats.times(),
        i: 0,
    };
    let values = (0..grid_len(duration_s, rate))
        .map(|k| pulse_shape(track.phase(k as f64 / rate)))
        .collect();
    Ok(GroundTruthRecord {
        waveform: UniformSignal::new(0.0, rate, values)?,
        kind: SignalKind::Ppg,
    })
}
