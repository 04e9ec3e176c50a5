//! Frequency-domain stages: rhythmic-motion suppression, heart-band limiting,
//! the data-driven narrowband filter and overlap-add reconstruction.

use std::collections::VecDeque;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::stats;
use crate::trace_io::UniformSignal;

/// Frequency interval in Hz, inclusive at both ends.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BandLimits {
    pub lo: f64,
    pub hi: f64,
}

impl BandLimits {
    /// Human heart-rate range, 42-240 bpm.
    pub const HEART: BandLimits = BandLimits { lo: 0.7, hi: 4.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::Config(format!("invalid band [{lo}, {hi}] Hz")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo && f <= self.hi
    }

    pub fn check_nyquist(&self, rate: f64) -> Result<()> {
        if self.hi >= rate / 2.0 {
            return Err(Error::Config(format!(
                "band upper edge {} Hz is not below Nyquist ({} Hz)",
                self.hi,
                rate / 2.0
            )));
        }
        Ok(())
    }
}

impl Default for BandLimits {
    fn default() -> Self {
        Self::HEART
    }
}

fn check_window_len(n: usize) -> Result<()> {
    if n == 256 || n == 512 {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "spectrum length must be 256 or 512, got {n}"
        )))
    }
}

/// Complex DFT coefficients of a real window.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    pub rate: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Hz per bin.
    pub fn resolution(&self) -> f64 {
        self.rate / self.bins.len() as f64
    }

    /// Absolute frequency of bin `k` (negative-frequency bins fold onto positive).
    pub fn abs_frequency(&self, k: usize) -> f64 {
        let n = self.bins.len();
        let folded = if k <= n / 2 { k } else { n - k };
        folded as f64 * self.resolution()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }

    fn check_compatible(&self, other: &Spectrum) -> Result<()> {
        if self.len() != other.len() || self.rate != other.rate {
            return Err(Error::Validation(format!(
                "spectrum mismatch: {} bins @ {} Hz vs {} bins @ {} Hz",
                self.len(),
                self.rate,
                other.len(),
                other.rate
            )));
        }
        Ok(())
    }

    /// Zeroes every bin whose absolute frequency falls outside `band`.
    fn retain_band(&mut self, band: BandLimits) {
        for k in 0..self.bins.len() {
            if !band.contains(self.abs_frequency(k)) {
                self.bins[k] = Complex64::new(0.0, 0.0);
            }
        }
    }
}

/// Planned forward/inverse transforms for one window length.
#[derive(Clone)]
pub struct Transforms {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    n: usize,
}

impl std::fmt::Debug for Transforms {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transforms").field("n", &self.n).finish()
    }
}

impl Transforms {
    pub fn new(n: usize) -> Result<Self> {
        check_window_len(n)?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            n,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, values: &[f64], rate: f64) -> Result<Spectrum> {
        if values.len() != self.n {
            return Err(Error::Validation(format!(
                "window has {} samples, transform expects {}",
                values.len(),
                self.n
            )));
        }
        let mut bins: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut bins);
        Ok(Spectrum { bins, rate })
    }

    /// Real part of the inverse DFT, scaled by `1/N`.
    pub fn inverse(&self, spectrum: &Spectrum) -> Result<Vec<f64>> {
        if spectrum.len() != self.n {
            return Err(Error::Validation(format!(
                "spectrum has {} bins, transform expects {}",
                spectrum.len(),
                self.n
            )));
        }
        let mut buf = spectrum.bins.clone();
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        Ok(buf.iter().map(|c| c.re * scale).collect())
    }
}

/// DFT of a 256- or 512-sample window.
pub fn forward_spectrum(values: &[f64], rate: f64) -> Result<Spectrum> {
    Transforms::new(values.len())?.forward(values, rate)
}

/// Inverse DFT back to real samples.
pub fn inverse_spectrum(spectrum: &Spectrum) -> Result<Vec<f64>> {
    Transforms::new(spectrum.len())?.inverse(spectrum)
}

/// Attenuates head-motion frequencies in the pulse spectrum.
///
/// The pose magnitude spectra are averaged into `H`, scaled so that its
/// in-band maximum equals the pulse's in-band maximum, and subtracted from
/// the pulse magnitudes (floored at zero). Pulse phase is kept. With
/// `enabled = false`, no pose spectra, or a zero in-band `H`, the input is
/// returned unchanged.
pub fn suppress_motion(
    pulse: &Spectrum,
    pose: Option<&[Spectrum; 3]>,
    band: BandLimits,
    enabled: bool,
) -> Result<Spectrum> {
    let Some(pose) = pose else {
        return Ok(pulse.clone());
    };
    for p in pose {
        pulse.check_compatible(p)?;
    }
    if !enabled {
        return Ok(pulse.clone());
    }
    let n = pulse.len();
    let mean_pose: Vec<f64> = (0..n)
        .map(|k| pose.iter().map(|p| p.bins[k].norm()).sum::<f64>() / 3.0)
        .collect();

    let mut pulse_max = 0.0f64;
    let mut pose_max = 0.0f64;
    for k in 0..n {
        if band.contains(pulse.abs_frequency(k)) {
            pulse_max = pulse_max.max(pulse.bins[k].norm());
            pose_max = pose_max.max(mean_pose[k]);
        }
    }
    if pose_max == 0.0 || pulse_max == 0.0 {
        return Ok(pulse.clone());
    }
    let scale = pulse_max / pose_max;

    let bins = pulse
        .bins
        .iter()
        .zip(&mean_pose)
        .map(|(&c, &h)| {
            let mag = c.norm();
            if mag == 0.0 {
                return c;
            }
            let reduced = (mag - scale * h).max(0.0);
            c * (reduced / mag)
        })
        .collect();
    Ok(Spectrum {
        bins,
        rate: pulse.rate,
    })
}

/// Removes everything outside `band` (both positive and negative frequencies).
pub fn band_limit(spec: &Spectrum, band: BandLimits) -> Result<Spectrum> {
    band.check_nyquist(spec.rate)?;
    let mut out = spec.clone();
    out.retain_band(band);
    Ok(out)
}

/// Centre frequency of the strongest in-band bin; ties go to the lower frequency.
pub fn dominant_frequency(spec: &Spectrum, band: BandLimits) -> Result<f64> {
    let mut best: Option<(usize, f64)> = None;
    for k in 0..=spec.len() / 2 {
        let f = spec.abs_frequency(k);
        if !band.contains(f) {
            continue;
        }
        let mag = spec.bins[k].norm();
        if mag > 0.0 && best.is_none_or(|(_, m)| mag > m) {
            best = Some((k, mag));
        }
    }
    best.map(|(k, _)| spec.abs_frequency(k)).ok_or(Error::NoSignal)
}

/// Passband of the narrowband filter: `center ± bandwidth/2`, clipped to `band`.
pub fn narrowband_passband(center: f64, bandwidth: f64, band: BandLimits) -> BandLimits {
    BandLimits {
        lo: (center - bandwidth / 2.0).max(band.lo),
        hi: (center + bandwidth / 2.0).min(band.hi),
    }
}

/// Narrowband filtering of an existing spectrum by bin masking and inverse DFT.
pub fn narrowband_from_spectrum(
    transforms: &Transforms,
    raw: &Spectrum,
    center: f64,
    bandwidth: f64,
    band: BandLimits,
) -> Result<Vec<f64>> {
    if !band.contains(center) {
        return Err(Error::Validation(format!(
            "narrowband centre {center} Hz outside [{}, {}] Hz",
            band.lo, band.hi
        )));
    }
    let mut masked = raw.clone();
    masked.retain_band(narrowband_passband(center, bandwidth, band));
    transforms.inverse(&masked)
}

/// Narrowband-filters a raw pulse window around `center` Hz.
pub fn narrowband_filter(
    raw: &[f64],
    rate: f64,
    center: f64,
    bandwidth: f64,
    band: BandLimits,
) -> Result<Vec<f64>> {
    let transforms = Transforms::new(raw.len())?;
    let spec = transforms.forward(raw, rate)?;
    narrowband_from_spectrum(&transforms, &spec, center, bandwidth, band)
}

/// Subtracts the mean and divides by the population standard deviation.
/// A constant window maps to zeros.
pub fn z_normalize(values: &[f64]) -> Vec<f64> {
    let m = stats::mean(values);
    let sd = stats::std_pop(values);
    if sd == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - m) / sd).collect()
}

/// Overlap-add of z-normalized windows onto a global uniform grid.
///
/// Samples before the start of the most recent window are final and are
/// emitted as `sum / count`. Grid points never covered by any window are
/// emitted as 0 and counted in [`BvpAccumulator::uncovered`].
#[derive(Debug, Clone)]
pub struct BvpAccumulator {
    t0: f64,
    rate: f64,
    /// Global index of `sum[0]`.
    finalized: usize,
    sum: VecDeque<f64>,
    counts: VecDeque<u32>,
    emitted: Vec<f64>,
    uncovered: usize,
}

impl BvpAccumulator {
    pub fn new(t0: f64, rate: f64) -> Self {
        Self {
            t0,
            rate,
            finalized: 0,
            sum: VecDeque::new(),
            counts: VecDeque::new(),
            emitted: Vec::new(),
            uncovered: 0,
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Number of final samples emitted so far.
    pub fn finalized_len(&self) -> usize {
        self.finalized
    }

    pub fn uncovered(&self) -> usize {
        self.uncovered
    }

    /// All final samples so far.
    pub fn emitted(&self) -> &[f64] {
        &self.emitted
    }

    fn emit_front(&mut self) {
        let s = self.sum.pop_front().unwrap_or(0.0);
        let c = self.counts.pop_front().unwrap_or(0);
        if c == 0 {
            self.uncovered += 1;
            self.emitted.push(0.0);
        } else {
            self.emitted.push(s / c as f64);
        }
        self.finalized += 1;
    }

    /// Adds a filtered window whose first sample sits at grid index `start`.
    /// Returns the samples finalized by this call.
    pub fn add_at_index(&mut self, window: &[f64], start: usize) -> Result<&[f64]> {
        if start < self.finalized {
            return Err(Error::Ordering(format!(
                "window starts at sample {start} but samples up to {} are final",
                self.finalized
            )));
        }
        let before = self.emitted.len();
        while self.finalized < start {
            self.emit_front();
        }
        if self.sum.len() < window.len() {
            self.sum.resize(window.len(), 0.0);
            self.counts.resize(window.len(), 0);
        }
        for (k, v) in z_normalize(window).into_iter().enumerate() {
            self.sum[k] += v;
            self.counts[k] += 1;
        }
        Ok(&self.emitted[before..])
    }

    /// Adds a window starting at `window_start` seconds (must lie on the grid).
    pub fn add(&mut self, window: &[f64], window_start: f64) -> Result<&[f64]> {
        let pos = (window_start - self.t0) * self.rate;
        let index = pos.round();
        if index < 0.0 || (pos - index).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "window start {window_start} s is not on the {} Hz grid",
                self.rate
            )));
        }
        self.add_at_index(window, index as usize)
    }

    /// Emits every pending sample and returns the complete BVP signal.
    pub fn finish(mut self) -> UniformSignal {
        while !self.sum.is_empty() {
            self.emit_front();
        }
        UniformSignal {
            t0: self.t0,
            rate: self.rate,
            values: self.emitted,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(n: usize, rate: f64, f: f64, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|k| amp * (2.0 * PI * f * k as f64 / rate).sin())
            .collect()
    }

    fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    #[test]
    fn forward_rejects_other_lengths() {
        assert!(forward_spectrum(&[0.0; 100], 30.0).is_err());
        assert!(forward_spectrum(&[0.0; 512], 60.0).is_ok());
    }

    #[test]
    fn zero_window_zero_spectrum() {
        let s = forward_spectrum(&[0.0; 256], 30.0).unwrap();
        assert!(s.bins.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn basis_tone_occupies_two_bins() {
        let (n, rate, k) = (256, 30.0, 10);
        let x = tone(n, rate, k as f64 * rate / n as f64, 1.0);
        let s = forward_spectrum(&x, rate).unwrap();
        for (i, c) in s.bins.iter().enumerate() {
            if i == k || i == n - k {
                assert!((c.norm() - n as f64 / 2.0).abs() < 1e-9);
            } else {
                assert!(c.norm() < 1e-9, "bin {i}: {}", c.norm());
            }
        }
    }

    #[test]
    fn round_trip_random_window() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in [256, 512] {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let back = inverse_spectrum(&forward_spectrum(&x, 30.0).unwrap()).unwrap();
            let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let err: f64 = x
                .iter()
                .zip(&back)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(err / norm <= 1e-9);
        }
    }

    fn bin_tone(n: usize, rate: f64, f: f64, amp: f64) -> Vec<f64> {
        let k = (f * n as f64 / rate).round();
        tone(n, rate, k * rate / n as f64, amp)
    }

    #[test]
    fn suppression_with_zero_pose_is_identity() {
        let p = forward_spectrum(&bin_tone(256, 30.0, 1.2, 1.0), 30.0).unwrap();
        let zero = forward_spectrum(&[0.0; 256], 30.0).unwrap();
        let pose = [zero.clone(), zero.clone(), zero];
        let out = suppress_motion(&p, Some(&pose), BandLimits::HEART, true).unwrap();
        assert_eq!(out, p);
        assert_eq!(suppress_motion(&p, None, BandLimits::HEART, true).unwrap(), p);
    }

    #[test]
    fn suppression_removes_motion_peak() {
        let (n, rate) = (256, 30.0);
        let pulse = add(&bin_tone(n, rate, 1.0, 1.0), &bin_tone(n, rate, 1.5, 0.6));
        let motion = bin_tone(n, rate, 1.5, 4.0);
        let p = forward_spectrum(&pulse, rate).unwrap();
        let h = forward_spectrum(&motion, rate).unwrap();
        let pose = [h.clone(), h.clone(), h];
        let band = BandLimits::HEART;
        // without suppression the 1.0 Hz tone already wins; make the motion dominate
        let loud = add(&bin_tone(n, rate, 1.0, 1.0), &bin_tone(n, rate, 1.5, 2.0));
        let loud_spec = forward_spectrum(&loud, rate).unwrap();
        let f_off = dominant_frequency(&loud_spec, band).unwrap();
        let f_on = dominant_frequency(
            &suppress_motion(&loud_spec, Some(&pose), band, true).unwrap(),
            band,
        )
        .unwrap();
        let bin = rate / n as f64;
        assert!((f_off - (1.5 / bin).round() * bin).abs() < 1e-12);
        assert!((f_on - (1.0 / bin).round() * bin).abs() < 1e-12);

        let out = suppress_motion(&p, Some(&pose), band, true).unwrap();
        let f = dominant_frequency(&out, band).unwrap();
        assert!((f - (1.0 / bin).round() * bin).abs() < 1e-12);
    }

    #[test]
    fn disabled_suppression_is_bit_identical() {
        let p = forward_spectrum(&bin_tone(256, 30.0, 1.2, 1.0), 30.0).unwrap();
        let h = forward_spectrum(&bin_tone(256, 30.0, 1.2, 3.0), 30.0).unwrap();
        let pose = [h.clone(), h.clone(), h];
        let out = suppress_motion(&p, Some(&pose), BandLimits::HEART, false).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn suppression_never_increases_magnitude() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut rand_window = || (0..256).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            let p = forward_spectrum(&rand_window(), 30.0).unwrap();
            let pose = [
                forward_spectrum(&rand_window(), 30.0).unwrap(),
                forward_spectrum(&rand_window(), 30.0).unwrap(),
                forward_spectrum(&rand_window(), 30.0).unwrap(),
            ];
            let out = suppress_motion(&p, Some(&pose), BandLimits::HEART, true).unwrap();
            for (a, b) in out.bins.iter().zip(&p.bins) {
                assert!(a.norm() <= b.norm() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn mismatched_pose_spectrum_is_rejected() {
        let p = forward_spectrum(&[0.0; 256], 30.0).unwrap();
        let h = forward_spectrum(&[0.0; 512], 60.0).unwrap();
        let pose = [h.clone(), h.clone(), h];
        assert!(suppress_motion(&p, Some(&pose), BandLimits::HEART, true).is_err());
    }

    #[test]
    fn band_limit_examples() {
        let dc = forward_spectrum(&[3.0; 256], 30.0).unwrap();
        let out = band_limit(&dc, BandLimits::HEART).unwrap();
        assert!(out.bins.iter().all(|c| c.norm() == 0.0));

        let (n, rate) = (256, 30.0);
        let t12 = bin_tone(n, rate, 1.2, 1.0);
        let s = forward_spectrum(&t12, rate).unwrap();
        let kept = band_limit(&s, BandLimits::HEART).unwrap();
        for k in 0..n {
            if BandLimits::HEART.contains(s.abs_frequency(k)) {
                assert_eq!(kept.bins[k], s.bins[k]);
            } else {
                assert!(s.bins[k].norm() < 1e-9);
            }
        }

        let mixed = forward_spectrum(&add(&bin_tone(n, rate, 0.5, 1.0), &t12), rate).unwrap();
        let limited = band_limit(&mixed, BandLimits::HEART).unwrap();
        for k in 0..n {
            let f = limited.abs_frequency(k);
            if !BandLimits::HEART.contains(f) {
                assert_eq!(limited.bins[k].norm(), 0.0);
            } else {
                assert_eq!(limited.bins[k], mixed.bins[k]);
            }
        }
        // bookkeeping oracle: 0.5 Hz sits in bin round(0.5 * 256 / 30) = 4
        assert!(mixed.bins[4].norm() > 1.0);
        assert_eq!(limited.bins[4].norm(), 0.0);
        assert_eq!(limited.bins[n - 4].norm(), 0.0);
        assert_eq!(band_limit(&limited, BandLimits::HEART).unwrap(), limited);
    }

    #[test]
    fn band_must_fit_under_nyquist() {
        let s = forward_spectrum(&[0.0; 256], 6.0).unwrap();
        assert!(band_limit(&s, BandLimits::HEART).is_err());
    }

    #[test]
    fn dominant_frequency_examples() {
        let (n, rate) = (256, 32.0); // 0.125 Hz bins so 1.0/2.0 Hz are bin-aligned
        let band = BandLimits::HEART;
        let single = forward_spectrum(&tone(n, rate, 1.25, 1.0), rate).unwrap();
        assert_eq!(dominant_frequency(&single, band).unwrap(), 1.25);

        let two = add(&tone(n, rate, 1.0, 2.0), &tone(n, rate, 2.0, 1.0));
        let s = forward_spectrum(&two, rate).unwrap();
        assert_eq!(dominant_frequency(&s, band).unwrap(), 1.0);

        let tie = add(&tone(n, rate, 1.0, 1.0), &tone(n, rate, 2.0, 1.0));
        let s = forward_spectrum(&tie, rate).unwrap();
        // round-off can make the two peaks differ in the last bits; equalize magnitudes
        let mut s = s;
        let (k1, k2) = (8, 16);
        let m = s.bins[k1].norm();
        s.bins[k2] = s.bins[k2] * (m / s.bins[k2].norm());
        assert_eq!(dominant_frequency(&s, band).unwrap(), 1.0);

        let zero = forward_spectrum(&[0.0; 256], rate).unwrap();
        assert!(matches!(dominant_frequency(&zero, band), Err(Error::NoSignal)));
    }

    fn power_at(x: &[f64], rate: f64, f: f64) -> f64 {
        let s = forward_spectrum(x, rate).unwrap();
        let k = (f * x.len() as f64 / rate).round() as usize;
        s.bins[k].norm_sqr()
    }

    #[test]
    fn narrowband_keeps_centre_tone() {
        let (n, rate) = (256, 30.0);
        let x = bin_tone(n, rate, 1.2, 1.0);
        let y = narrowband_filter(&x, rate, 1.2, 0.47, BandLimits::HEART).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
        // off-bin tone: leakage outside the mask costs about 1% of amplitude
        // in the window interior
        let x = tone(n, rate, 1.2, 1.0);
        let y = narrowband_filter(&x, rate, 1.2, 0.47, BandLimits::HEART).unwrap();
        let amp = |v: &[f64]| stats::std_pop(&v[64..192]) * 2f64.sqrt();
        assert!((amp(&y) / amp(&x) - 1.0).abs() < 0.02, "{}", amp(&y) / amp(&x));
    }

    #[test]
    fn narrowband_rejects_distant_tone() {
        let (n, rate) = (256, 30.0);
        let x = add(&tone(n, rate, 1.2, 1.0), &tone(n, rate, 2.5, 1.0));
        let y = narrowband_filter(&x, rate, 1.2, 0.47, BandLimits::HEART).unwrap();
        assert!(power_at(&y, rate, 2.5) <= 0.01 * power_at(&y, rate, 1.2));
        let s = forward_spectrum(&y, rate).unwrap();
        let pass = narrowband_passband(1.2, 0.47, BandLimits::HEART);
        for k in 0..n {
            if !pass.contains(s.abs_frequency(k)) {
                assert!(s.bins[k].norm() < 1e-9);
            }
        }
        let zero = narrowband_filter(&[0.0; 256], rate, 1.2, 0.47, BandLimits::HEART).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn overlap_add_single_window() {
        let w = tone(256, 30.0, 1.3, 2.0);
        let mut acc = BvpAccumulator::new(0.0, 30.0);
        assert!(acc.add(&w, 0.0).unwrap().is_empty());
        let bvp = acc.finish();
        let z = z_normalize(&w);
        assert_eq!(bvp.values, z);
    }

    #[test]
    fn overlap_add_constant_window_contributes_zeros() {
        let mut acc = BvpAccumulator::new(0.0, 30.0);
        acc.add(&[4.0; 256], 0.0).unwrap();
        assert!(acc.finish().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn overlap_add_steady_state() {
        // 1 Hz at 30 Hz: 0.5 s hop = 15 samples, half a period; use a 0.5 s period (2 Hz)
        let rate = 30.0;
        let x = |k: usize| (2.0 * PI * 2.0 * k as f64 / rate).sin();
        let hop = 15;
        let mut acc = BvpAccumulator::new(0.0, rate);
        for h in 0..=10 {
            let start = h * hop;
            let w: Vec<f64> = (start..start + 256).map(x).collect();
            acc.add(&w, start as f64 / rate).unwrap();
        }
        let reference = z_normalize(&(0..256).map(x).collect::<Vec<_>>());
        let bvp = acc.finish();
        for k in 0..bvp.len() {
            // reference is periodic with 15 samples
            assert!((bvp.values[k] - reference[k % 15]).abs() < 1e-9);
        }
    }

    #[test]
    fn overlap_add_rejects_stale_windows() {
        let mut acc = BvpAccumulator::new(0.0, 30.0);
        acc.add(&[1.0, 2.0, 3.0], 1.0).unwrap();
        assert!(matches!(acc.add(&[1.0, 2.0], 0.5), Err(Error::Ordering(_))));
        assert!(acc.add(&[1.0, 2.0], 1.01).is_err());
    }
}
