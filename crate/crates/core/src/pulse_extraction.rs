//! RoI spatial averaging and the plane-orthogonal-to-skin (POS) combination.

use crate::error::{Error, Result};
use crate::stats;

/// Samples per analysis window at 30 Hz (8.53 s).
pub const WINDOW_SAMPLES_30HZ: usize = 256;
/// Samples per analysis window at 60 Hz (8.53 s).
pub const WINDOW_SAMPLES_60HZ: usize = 512;

/// Window length in samples for a pipeline rate of 30 or 60 Hz.
pub fn window_samples(rate: f64) -> Result<usize> {
    if rate == 30.0 {
        Ok(WINDOW_SAMPLES_30HZ)
    } else if rate == 60.0 {
        Ok(WINDOW_SAMPLES_60HZ)
    } else {
        Err(Error::Validation(format!(
            "pipeline rate must be 30 or 60 Hz, got {rate}"
        )))
    }
}

/// Mean colour of one frame's RoI pixels.
pub fn spatial_average(pixels: &[[f64; 3]]) -> Result<[f64; 3]> {
    if pixels.is_empty() {
        return Err(Error::EmptyRoi);
    }
    let mut sum = [0.0; 3];
    for p in pixels {
        for c in 0..3 {
            sum[c] += p[c];
        }
    }
    let n = pixels.len() as f64;
    Ok([sum[0] / n, sum[1] / n, sum[2] / n])
}

/// One analysis window of the three colour channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbWindow<'a> {
    r: &'a [f64],
    g: &'a [f64],
    b: &'a [f64],
    rate: f64,
}

impl<'a> RgbWindow<'a> {
    pub fn new(r: &'a [f64], g: &'a [f64], b: &'a [f64], rate: f64) -> Result<Self> {
        let expected = window_samples(rate)?;
        for (name, ch) in [("r", r), ("g", g), ("b", b)] {
            if ch.len() != expected {
                return Err(Error::Validation(format!(
                    "channel {name} has {} samples, expected {expected} at {rate} Hz",
                    ch.len()
                )));
            }
        }
        Ok(Self { r, g, b, rate })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Raw (unfiltered) pulse signal for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPulseWindow {
    pub values: Vec<f64>,
    pub rate: f64,
}

/// POS combination of a window.
///
/// Channels are divided by their window means, projected onto
/// `S1 = G - B` and `S2 = G + B - 2R`, and combined as
/// `h = S1 + (std(S1) / std(S2)) * S2` (`h = S1` when `std(S2) = 0`).
pub fn pos_project(window: &RgbWindow<'_>) -> Result<RawPulseWindow> {
    Ok(RawPulseWindow {
        values: pos_combine(window.r, window.g, window.b)?,
        rate: window.rate,
    })
}

/// The POS combination on equal-length channel slices of any length.
pub fn pos_combine(r: &[f64], g: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let means = [stats::mean(r), stats::mean(g), stats::mean(b)];
    for (name, m) in ["r", "g", "b"].iter().zip(means) {
        if !(m > 0.0) {
            return Err(Error::DegenerateChannel(format!(
                "channel {name} has window mean {m}"
            )));
        }
    }
    let n = r.len();
    let mut s1 = Vec::with_capacity(n);
    let mut s2 = Vec::with_capacity(n);
    for k in 0..n {
        let rn = r[k] / means[0];
        let gn = g[k] / means[1];
        let bn = b[k] / means[2];
        s1.push(gn - bn);
        s2.push(gn + bn - 2.0 * rn);
    }
    let sd2 = stats::std_pop(&s2);
    if sd2 == 0.0 {
        return Ok(s1);
    }
    let alpha = stats::std_pop(&s1) / sd2;
    Ok(s1.iter().zip(&s2).map(|(a, b)| a + alpha * b).collect())
}
