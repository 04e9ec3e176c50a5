//! Beat localisation, inter-beat-interval filtering and windowed heart rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::trace_io::UniformSignal;

/// Physiological IBI limits in ms (30-240 bpm).
pub const IBI_MIN_MS: f64 = 250.0;
pub const IBI_MAX_MS: f64 = 2000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeatSource {
    Rppg,
    GroundTruth,
}

/// Strictly increasing beat timestamps in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatSeries {
    beats: Vec<f64>,
    source: BeatSource,
}

impl BeatSeries {
    pub fn new(beats: Vec<f64>, source: BeatSource) -> Result<Self> {
        if let Some(i) = beats.iter().position(|t| !t.is_finite()) {
            return Err(Error::Validation(format!("beat {i} is not finite")));
        }
        if let Some(i) = beats.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "beats must be strictly increasing (index {})",
                i + 1
            )));
        }
        Ok(Self { beats, source })
    }

    pub fn times(&self) -> &[f64] {
        &self.beats
    }

    pub fn source(&self) -> BeatSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.beats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beats.is_empty()
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        Some((*self.beats.first()?, *self.beats.last()?))
    }
}

/// Online alternating max/min scan.
///
/// A running maximum is confirmed as a peak once the signal has fallen at
/// least `delta` below it; the scan then tracks the running minimum until the
/// signal has risen `delta` above that, and starts looking for a maximum again.
#[derive(Debug, Clone)]
pub struct PeakScanner {
    delta: f64,
    index: usize,
    looking_for_max: bool,
    extreme: f64,
    extreme_at: usize,
}

impl PeakScanner {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            index: 0,
            looking_for_max: true,
            extreme: f64::NEG_INFINITY,
            extreme_at: 0,
        }
    }

    /// Feeds the next sample; returns the index of a newly confirmed peak.
    pub fn push(&mut self, v: f64) -> Option<usize> {
        let i = self.index;
        self.index += 1;
        if self.looking_for_max {
            if v > self.extreme {
                self.extreme = v;
                self.extreme_at = i;
            }
            if self.extreme - v >= self.delta {
                let peak = self.extreme_at;
                self.looking_for_max = false;
                self.extreme = v;
                self.extreme_at = i;
                return Some(peak);
            }
        } else {
            if v < self.extreme {
                self.extreme = v;
                self.extreme_at = i;
            }
            if v - self.extreme >= self.delta {
                self.looking_for_max = true;
                self.extreme = v;
                self.extreme_at = i;
            }
        }
        None
    }
}

/// Sample indices of the crests found by the alternating scan.
pub fn detect_peak_indices(values: &[f64], delta: f64) -> Vec<usize> {
    let mut scanner = PeakScanner::new(delta);
    values.iter().filter_map(|&v| scanner.push(v)).collect()
}

/// Beat times of a BVP signal.
pub fn detect_peaks(signal: &UniformSignal, delta: f64, source: BeatSource) -> Result<BeatSeries> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!("peak delta must be > 0, got {delta}")));
    }
    let beats = detect_peak_indices(&signal.values, delta)
        .into_iter()
        .map(|k| signal.time_at(k))
        .collect();
    BeatSeries::new(beats, source)
}

/// Sub-sample crest time by fitting a parabola through the peak sample and
/// its two neighbours. Falls back to the sample time at the signal edges or
/// on a flat top.
pub fn refine_peak_time(signal: &UniformSignal, k: usize) -> f64 {
    signal.time_at(k) + refine_peak_offset(&signal.values, k) / signal.rate
}

/// Parabolic crest offset from sample `k`, in samples, within `[-0.5, 0.5]`.
pub fn refine_peak_offset(v: &[f64], k: usize) -> f64 {
    if k == 0 || k + 1 >= v.len() {
        return 0.0;
    }
    let (a, b, c) = (v[k - 1], v[k], v[k + 1]);
    let denom = a - 2.0 * b + c;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IbiFlag {
    Raw,
    RangeRejected,
    Sigma3Rejected,
    /// Survived the 3-sigma filter but lies outside the 1-sigma band used for RMSSD.
    Sigma1Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ibi {
    /// Index of the beat that opens the interval.
    pub start_beat: usize,
    /// Time of the opening beat, seconds.
    pub start_s: f64,
    pub duration_ms: f64,
    pub flag: IbiFlag,
}

impl Ibi {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_ms / 1000.0
    }

    /// Passed range and 3-sigma filtering (1-sigma exclusion still counts).
    pub fn survives(&self) -> bool {
        matches!(self.flag, IbiFlag::Raw | IbiFlag::Sigma1Excluded)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IbiSeries {
    pub intervals: Vec<Ibi>,
}

impl IbiSeries {
    pub fn survivors(&self) -> impl Iterator<Item = &Ibi> {
        self.intervals.iter().filter(|i| i.survives())
    }

    pub fn survivor_durations(&self) -> Vec<f64> {
        self.survivors().map(|i| i.duration_ms).collect()
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// Raw intervals between consecutive beats.
pub fn ibis_from_beats(beats: &BeatSeries) -> IbiSeries {
    let t = beats.times();
    IbiSeries {
        intervals: t
            .windows(2)
            .enumerate()
            .map(|(i, w)| Ibi {
                start_beat: i,
                start_s: w[0],
                duration_ms: 1000.0 * (w[1] - w[0]),
                flag: IbiFlag::Raw,
            })
            .collect(),
    }
}

/// Range rejection followed by 3-sigma outlier removal.
///
/// Intervals outside [250, 2000] ms are flagged first. Mean and standard
/// deviation are then taken over the remaining intervals and anything
/// further than three deviations from the mean is flagged; this repeats
/// until no interval is removed, so the filter is idempotent.
pub fn filter_ibis(ibis: &IbiSeries) -> IbiSeries {
    let mut out = ibis.clone();
    for ibi in &mut out.intervals {
        ibi.flag = if ibi.duration_ms < IBI_MIN_MS || ibi.duration_ms > IBI_MAX_MS {
            IbiFlag::RangeRejected
        } else {
            IbiFlag::Raw
        };
    }
    loop {
        let kept = out.survivor_durations();
        if kept.is_empty() {
            break;
        }
        let m = stats::mean(&kept);
        // relative slack keeps round-off in beat times from counting as spread
        let limit = 3.0 * stats::std_pop(&kept) + 1e-9 * m.abs();
        let mut removed = false;
        for ibi in out.intervals.iter_mut().filter(|i| i.survives()) {
            if (ibi.duration_ms - m).abs() > limit {
                ibi.flag = IbiFlag::Sigma3Rejected;
                removed = true;
            }
        }
        if !removed {
            break;
        }
    }
    out
}

/// Heart-rate averaging window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HrWindow {
    Finite(f64),
    Infinite,
}

impl HrWindow {
    pub fn seconds(self) -> f64 {
        match self {
            HrWindow::Finite(s) => s,
            HrWindow::Infinite => f64::INFINITY,
        }
    }

    pub fn label(self) -> String {
        match self {
            HrWindow::Finite(s) => format!("{s}"),
            HrWindow::Infinite => "inf".to_string(),
        }
    }
}

impl std::str::FromStr for HrWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if matches!(s, "inf" | "infinity" | "∞") {
            return Ok(HrWindow::Infinite);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(HrWindow::Finite(v)),
            Ok(v) if v == f64::INFINITY => Ok(HrWindow::Infinite),
            _ => Err(Error::Config(format!("invalid HR window '{s}'"))),
        }
    }
}

impl std::fmt::Display for HrWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for HrWindow {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            HrWindow::Finite(v) => s.serialize_f64(*v),
            HrWindow::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for HrWindow {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) if v > 0.0 => Ok(HrWindow::Finite(v)),
            Repr::Num(v) => Err(serde::de::Error::custom(format!("invalid HR window {v}"))),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrEntry {
    pub window_center: f64,
    pub bpm: f64,
    pub window_s: HrWindow,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HrSeries {
    pub entries: Vec<HrEntry>,
}

impl HrSeries {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Heart rate from filtered IBIs.
///
/// Finite windows are centred on multiples of `stride_s` spanning the
/// interval start times; an interval belongs to a window when its opening
/// beat falls in `[center - w/2, center + w/2)`. The infinite window yields a
/// single entry over all surviving intervals. Windows with no surviving
/// interval produce no entry.
pub fn heart_rate(ibis: &IbiSeries, window: HrWindow, stride_s: f64) -> Result<HrSeries> {
    let kept: Vec<&Ibi> = ibis.survivors().collect();
    let (Some(first), Some(last)) = (kept.first(), kept.last()) else {
        return Ok(HrSeries::default());
    };
    let bpm_of = |sel: &[f64]| 60_000.0 / stats::mean(sel);
    match window {
        HrWindow::Infinite => {
            let durations: Vec<f64> = kept.iter().map(|i| i.duration_ms).collect();
            Ok(HrSeries {
                entries: vec![HrEntry {
                    window_center: 0.5 * (first.start_s + last.end_s()),
                    bpm: bpm_of(&durations),
                    window_s: HrWindow::Infinite,
                }],
            })
        }
        HrWindow::Finite(w) => {
            if !(w > 0.0) || !(stride_s > 0.0) {
                return Err(Error::Config(format!(
                    "window {w} s and stride {stride_s} s must be > 0"
                )));
            }
            let k_first = (first.start_s / stride_s).ceil() as i64;
            let k_last = (last.start_s / stride_s).floor() as i64;
            let mut entries = Vec::new();
            let mut lo_idx = 0;
            for k in k_first..=k_last {
                let center = k as f64 * stride_s;
                let (lo, hi) = (center - w / 2.0, center + w / 2.0);
                while lo_idx < kept.len() && kept[lo_idx].start_s < lo {
                    lo_idx += 1;
                }
                let sel: Vec<f64> = kept[lo_idx..]
                    .iter()
                    .take_while(|i| i.start_s < hi)
                    .map(|i| i.duration_ms)
                    .collect();
                if !sel.is_empty() {
                    entries.push(HrEntry {
                        window_center: center,
                        bpm: bpm_of(&sel),
                        window_s: window,
                    });
                }
            }
            Ok(HrSeries { entries })
        }
    }
}
