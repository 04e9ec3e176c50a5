//! Time- and frequency-domain heart-rate-variability metrics.
//!
//! The frequency-domain chain resamples the IBI sequence to a 4 Hz
//! tachogram with a natural cubic spline, removes the slow trend with a
//! smoothness-priors filter, and estimates band powers from a Welch
//! periodogram (256-sample Hann segments, 50 % overlap).

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::beat_analysis::{BeatSeries, IbiFlag, IbiSeries};
use crate::error::{Error, Result};
use crate::stats;
use crate::trace_io::{grid_len, UniformSignal};

pub const TACHOGRAM_RATE_HZ: f64 = 4.0;
pub const DEFAULT_DETREND_LAMBDA: f64 = 500.0;
pub const WELCH_SEGMENT: usize = 256;
pub const LF_BAND: (f64, f64) = (0.04, 0.15);
pub const HF_BAND: (f64, f64) = (0.15, 0.4);
/// LF + HF below this (ms²) is treated as no variability.
pub const MIN_BAND_POWER: f64 = 1e-10;

/// HRV summary. Metrics that cannot be computed are `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HrvReport {
    pub rmssd_ms: Option<f64>,
    pub sdnn_ms: Option<f64>,
    pub lf_nu: Option<f64>,
    pub hf_nu: Option<f64>,
    pub lf_hf: Option<f64>,
    pub n_ibis_used: usize,
}

/// Flags surviving intervals further than one standard deviation from the
/// mean as [`IbiFlag::Sigma1Excluded`]. The band is inclusive.
pub fn mask_sigma1(ibis: &IbiSeries) -> IbiSeries {
    let mut out = ibis.clone();
    for ibi in &mut out.intervals {
        if ibi.flag == IbiFlag::Sigma1Excluded {
            ibi.flag = IbiFlag::Raw;
        }
    }
    let kept = out.survivor_durations();
    if kept.is_empty() {
        return out;
    }
    let m = stats::mean(&kept);
    let limit = stats::std_pop(&kept) + 1e-9 * m.abs();
    for ibi in out.intervals.iter_mut().filter(|i| i.flag == IbiFlag::Raw) {
        if (ibi.duration_ms - m).abs() > limit {
            ibi.flag = IbiFlag::Sigma1Excluded;
        }
    }
    out
}

/// Root mean square of successive differences over the 1-sigma band.
///
/// Only pairs of intervals that were adjacent in the beat sequence and both
/// kept by the mask contribute; pairs broken by an exclusion are skipped.
pub fn rmssd(ibis: &IbiSeries) -> Result<f64> {
    let masked = mask_sigma1(ibis);
    let kept: Vec<_> = masked
        .intervals
        .iter()
        .filter(|i| i.flag == IbiFlag::Raw)
        .collect();
    if kept.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "RMSSD needs 3 intervals inside the 1-sigma band, have {}",
            kept.len()
        )));
    }
    let diffs: Vec<f64> = kept
        .windows(2)
        .filter(|w| w[1].start_beat == w[0].start_beat + 1)
        .map(|w| w[1].duration_ms - w[0].duration_ms)
        .collect();
    if diffs.is_empty() {
        return Err(Error::InsufficientData(
            "no adjacent interval pairs inside the 1-sigma band".into(),
        ));
    }
    Ok((diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt())
}

/// Population standard deviation of the filtered intervals.
pub fn sdnn(ibis: &IbiSeries) -> Result<f64> {
    let kept = ibis.survivor_durations();
    if kept.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "SDNN needs 2 intervals, have {}",
            kept.len()
        )));
    }
    Ok(stats::std_pop(&kept))
}

/// Natural cubic spline through strictly increasing knots.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::InsufficientData(format!("spline needs >= 2 knots, have {n}")));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("spline knots must be strictly increasing".into()));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives (Thomas algorithm)
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                let h0 = x[i + 1] - x[i];
                let h1 = x[i + 2] - x[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let lower = x[i + 1] - x[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Evenly sampled IBI durations (ms) at 4 Hz.
///
/// Each surviving interval contributes a knot at the time of the beat that
/// closes it; the spline is sampled over the knot span.
pub fn interpolate_tachogram(ibis: &IbiSeries, beats: &BeatSeries) -> Result<UniformSignal> {
    let times = beats.times();
    let mut knots_t = Vec::new();
    let mut knots_v = Vec::new();
    for ibi in ibis.survivors() {
        let end = times
            .get(ibi.start_beat + 1)
            .copied()
            .unwrap_or_else(|| ibi.end_s());
        knots_t.push(end);
        knots_v.push(ibi.duration_ms);
    }
    if knots_t.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "tachogram needs 4 intervals, have {}",
            knots_t.len()
        )));
    }
    let spline = NaturalSpline::new(&knots_t, &knots_v)?;
    let t0 = knots_t[0];
    let n = grid_len(knots_t[knots_t.len() - 1] - t0, TACHOGRAM_RATE_HZ);
    let values = (0..n)
        .map(|k| spline.eval(t0 + k as f64 / TACHOGRAM_RATE_HZ))
        .collect();
    UniformSignal::new(t0, TACHOGRAM_RATE_HZ, values)
}

/// Symmetric positive-definite pentadiagonal matrix stored by lower bands.
struct Pentadiagonal {
    /// `bands[i] = [A[i][i], A[i][i-1], A[i][i-2]]`
    bands: Vec<[f64; 3]>,
}

impl Pentadiagonal {
    /// `I + lambda² D2ᵀ D2` with `D2` the (n-2)×n second-difference operator.
    fn smoothness_prior(n: usize, lambda: f64) -> Self {
        let l2 = lambda * lambda;
        let mut bands = vec![[1.0, 0.0, 0.0]; n];
        let c = [1.0, -2.0, 1.0];
        for r in 0..n.saturating_sub(2) {
            for a in 0..3 {
                for b in 0..=a {
                    bands[r + a][a - b] += l2 * c[a] * c[b];
                }
            }
        }
        Self { bands }
    }

    /// Solves `A x = rhs` by banded Cholesky factorization.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.bands.len();
        // lower factor L, same band layout
        let mut l = vec![[0.0f64; 3]; n];
        for i in 0..n {
            for d in (0..3).rev() {
                if d > i {
                    continue;
                }
                let j = i - d;
                let mut s = self.bands[i][d];
                // sum over k in [max(i-2, j-2, 0), j) of L[i][k] * L[j][k]
                let k_lo = i.saturating_sub(2);
                for k in k_lo..j {
                    s -= l[i][i - k] * l[j][j - k];
                }
                if d == 0 {
                    l[i][0] = s.sqrt();
                } else {
                    l[i][d] = s / l[j][0];
                }
            }
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = rhs[i];
            for d in 1..3 {
                if d <= i {
                    s -= l[i][d] * y[i - d];
                }
            }
            y[i] = s / l[i][0];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for d in 1..3 {
                if i + d < n {
                    s -= l[i + d][d] * x[i + d];
                }
            }
            x[i] = s / l[i][0];
        }
        x
    }
}

/// Smoothness-priors detrending: `z - (I + lambda² D2ᵀD2)⁻¹ z`.
pub fn detrend_values(values: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if values.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "detrending needs 3 samples, have {}",
            values.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("invalid detrend lambda {lambda}")));
    }
    let trend = Pentadiagonal::smoothness_prior(values.len(), lambda).solve(values);
    Ok(values.iter().zip(&trend).map(|(z, t)| z - t).collect())
}

pub fn detrend(tacho: &UniformSignal, lambda: f64) -> Result<UniformSignal> {
    Ok(UniformSignal {
        t0: tacho.t0,
        rate: tacho.rate,
        values: detrend_values(&tacho.values, lambda)?,
    })
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Periodogram {
    pub frequencies: Vec<f64>,
    /// ms²/Hz for a tachogram in ms.
    pub power: Vec<f64>,
}

impl Periodogram {
    pub fn resolution(&self) -> f64 {
        self.frequencies.get(1).copied().unwrap_or(0.0)
    }

    /// Rectangle-rule integral over bins with `lo <= f < hi` (or `<= hi` when `closed`).
    pub fn band_power(&self, lo: f64, hi: f64, closed: bool) -> f64 {
        let df = self.resolution();
        self.frequencies
            .iter()
            .zip(&self.power)
            .filter(|(&f, _)| f >= lo && if closed { f <= hi } else { f < hi })
            .map(|(_, &p)| p * df)
            .sum()
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.resolution()
    }
}

/// Welch periodogram: Hann-tapered, mean-removed segments of 256 samples
/// with 50 % overlap; shorter inputs use one full-length segment.
pub fn welch_psd(signal: &UniformSignal) -> Result<Periodogram> {
    let x = &signal.values;
    if x.is_empty() {
        return Err(Error::InsufficientData("empty input to Welch estimate".into()));
    }
    if x.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "Welch estimate needs 4 samples, have {}",
            x.len()
        )));
    }
    let fs = signal.rate;
    let seg = WELCH_SEGMENT.min(x.len());
    let step = seg / 2;
    let window: Vec<f64> = (0..seg)
        .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / seg as f64).cos())
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let n_bins = seg / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut segments = 0usize;
    let mut start = 0;
    while start + seg <= x.len() {
        let chunk = &x[start..start + seg];
        let m = stats::mean(chunk);
        let mut buf: Vec<Complex64> = chunk
            .iter()
            .zip(&window)
            .map(|(v, w)| Complex64::new((v - m) * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (fs * window_power * segments as f64);
    let power = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || (seg % 2 == 0 && k == seg / 2) { 1.0 } else { 2.0 };
            p * scale * one_sided
        })
        .collect();
    let frequencies = (0..n_bins).map(|k| k as f64 * fs / seg as f64).collect();
    Ok(Periodogram { frequencies, power })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LfHf {
    pub lf: f64,
    pub hf: f64,
    pub lf_nu: f64,
    pub hf_nu: f64,
    pub lf_hf: f64,
}

/// LF power over [0.04, 0.15) Hz, HF over [0.15, 0.4] Hz, and normalized units.
pub fn lf_hf(psd: &Periodogram) -> Result<LfHf> {
    let top = psd.frequencies.last().copied().unwrap_or(0.0);
    if top < HF_BAND.1 {
        return Err(Error::Validation(format!(
            "periodogram only reaches {top} Hz, need {} Hz",
            HF_BAND.1
        )));
    }
    let lf = psd.band_power(LF_BAND.0, LF_BAND.1, false);
    let hf = psd.band_power(HF_BAND.0, HF_BAND.1, true);
    let total = lf + hf;
    if !(total > MIN_BAND_POWER) {
        return Err(Error::UndefinedMetric(format!(
            "LF + HF power is {total} ms², too small to normalize"
        )));
    }
    Ok(LfHf {
        lf,
        hf,
        lf_nu: lf / total,
        hf_nu: hf / total,
        lf_hf: if hf > 0.0 { lf / hf } else { f64::INFINITY },
    })
}

/// Frequency-domain chain from filtered IBIs to band powers.
pub fn frequency_metrics(ibis: &IbiSeries, beats: &BeatSeries, lambda: f64) -> Result<LfHf> {
    let tacho = interpolate_tachogram(ibis, beats)?;
    let detrended = detrend(&tacho, lambda)?;
    lf_hf(&welch_psd(&detrended)?)
}

/// Full HRV report over filtered IBIs. Metrics lacking data are left empty.
pub fn hrv_report(ibis: &IbiSeries, beats: &BeatSeries, lambda: f64) -> HrvReport {
    let freq = frequency_metrics(ibis, beats, lambda);
    if let Err(e) = &freq {
        log::debug!("frequency-domain HRV unavailable: {e}");
    }
    let freq = freq.ok();
    HrvReport {
        rmssd_ms: rmssd(ibis).ok(),
        sdnn_ms: sdnn(ibis).ok(),
        lf_nu: freq.map(|f| f.lf_nu),
        hf_nu: freq.map(|f| f.hf_nu),
        lf_hf: freq.map(|f| f.lf_hf).filter(|v| v.is_finite()),
        n_ibis_used: ibis.survivors().count(),
    }
}
