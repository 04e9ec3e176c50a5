//! Trace and ground-truth file I/O, validation and uniform resampling.
//!
//! Trace CSV: header `t,r,g,b` or `t,r,g,b,pitch,roll,yaw`, one row per frame.
//! Ground-truth CSV: a `# rate=<Hz> kind=<ppg|ecg>` line followed by `t,v` rows.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

const TRACE_HEADER: [&str; 4] = ["t", "r", "g", "b"];
const POSE_HEADER: [&str; 3] = ["pitch", "roll", "yaw"];

/// Head orientation in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    pub pitch: f64,
    pub roll: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub r: f64,
    pub g: f64,
    pub b: f64,
    pub pose: Option<HeadPose>,
}

/// Raw per-frame RGB means with optional head pose.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    source_id: String,
    samples: Vec<Sample>,
}

impl SampleTrace {
    /// Builds a trace, enforcing increasing timestamps, finite non-negative
    /// colours and all-or-nothing pose columns.
    pub fn new(source_id: impl Into<String>, samples: Vec<Sample>) -> Result<Self> {
        let has_pose = samples.first().map(|s| s.pose.is_some());
        for (i, s) in samples.iter().enumerate() {
            if !s.t.is_finite() {
                return Err(Error::Validation(format!("sample {i}: non-finite timestamp")));
            }
            for (name, v) in [("r", s.r), ("g", s.g), ("b", s.b)] {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Validation(format!(
                        "sample {i}: channel {name} must be finite and >= 0, got {v}"
                    )));
                }
            }
            if let Some(p) = s.pose {
                if !(p.pitch.is_finite() && p.roll.is_finite() && p.yaw.is_finite()) {
                    return Err(Error::Validation(format!("sample {i}: non-finite pose")));
                }
            }
            if Some(s.pose.is_some()) != has_pose {
                return Err(Error::Validation(format!(
                    "sample {i}: mixed presence of pose columns"
                )));
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(Error::Validation(format!(
                    "non-increasing timestamps at sample {i} (t={})",
                    s.t
                )));
            }
        }
        Ok(Self {
            source_id: source_id.into(),
            samples,
        })
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_pose(&self) -> bool {
        self.samples.first().is_some_and(|s| s.pose.is_some())
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Leading sub-trace of the first `n` samples.
    pub fn prefix(&self, n: usize) -> SampleTrace {
        SampleTrace {
            source_id: self.source_id.clone(),
            samples: self.samples[..n.min(self.samples.len())].to_vec(),
        }
    }
}

/// Fixed-rate sample sequence; sample `k` sits at `t0 + k / rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformSignal {
    pub t0: f64,
    pub rate: f64,
    pub values: Vec<f64>,
}

impl UniformSignal {
    pub fn new(t0: f64, rate: f64, values: Vec<f64>) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Validation(format!("rate must be > 0, got {rate}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite sample at index {i}")));
        }
        Ok(Self { t0, rate, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_at(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.rate
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 / self.rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Ppg,
    Ecg,
}

impl SignalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::Ppg => "ppg",
            SignalKind::Ecg => "ecg",
        }
    }
}

impl std::str::FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppg" => Ok(SignalKind::Ppg),
            "ecg" => Ok(SignalKind::Ecg),
            other => Err(Error::Validation(format!("unknown signal kind '{other}'"))),
        }
    }
}

/// Contact PPG or ECG reference waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub waveform: UniformSignal,
    pub kind: SignalKind,
}

/// Frame-spacing statistics gathered while resampling.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GapStats {
    pub median_dt_s: f64,
    pub max_dt_s: f64,
    /// Frame intervals longer than 1.5x the median spacing.
    pub gap_count: usize,
}

/// A trace resampled onto one shared uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledTrace {
    pub r: UniformSignal,
    pub g: UniformSignal,
    pub b: UniformSignal,
    /// pitch, roll, yaw
    pub pose: Option<[UniformSignal; 3]>,
    pub gaps: GapStats,
}

impl ResampledTrace {
    pub fn rate(&self) -> f64 {
        self.r.rate
    }

    pub fn t0(&self) -> f64 {
        self.r.t0
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

fn parse_f64(field: &str, line: u64, column: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("column '{column}': cannot parse '{field}' as a number"),
    })
}

fn csv_reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(bytes)
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Parses a trace CSV.
pub fn parse_trace(bytes: &[u8], source_id: &str) -> Result<SampleTrace> {
    let mut reader = csv_reader(bytes);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let columns: Vec<&str> = header.iter().collect();
    let with_pose = if columns == TRACE_HEADER {
        false
    } else if columns.len() == 7 && columns[..4] == TRACE_HEADER && columns[4..] == POSE_HEADER {
        true
    } else {
        return Err(Error::Parse {
            line: record_line(&header),
            message: format!(
                "expected header 't,r,g,b[,pitch,roll,yaw]', got '{}'",
                columns.join(",")
            ),
        });
    };
    let arity = columns.len();

    let mut samples = Vec::new();
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = record_line(&record);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != arity {
            return Err(Error::Parse {
                line,
                message: format!("expected {arity} fields, found {}", record.len()),
            });
        }
        let t = parse_f64(&record[0], line, "t")?;
        let r = parse_f64(&record[1], line, "r")?;
        let g = parse_f64(&record[2], line, "g")?;
        let b = parse_f64(&record[3], line, "b")?;
        let pose = if with_pose {
            let present = (4..7).filter(|&i| !record[i].is_empty()).count();
            match present {
                0 => None,
                3 => Some(HeadPose {
                    pitch: parse_f64(&record[4], line, "pitch")?,
                    roll: parse_f64(&record[5], line, "roll")?,
                    yaw: parse_f64(&record[6], line, "yaw")?,
                }),
                _ => {
                    return Err(Error::Validation(format!(
                        "line {line}: mixed presence of pose columns"
                    )))
                }
            }
        } else {
            None
        };
        samples.push(Sample { t, r, g, b, pose });
    }
    SampleTrace::new(source_id, samples)
}

/// Serializes a trace in the CSV layout accepted by [`parse_trace`].
/// Numbers use the shortest representation that parses back exactly.
pub fn serialize_trace(trace: &SampleTrace) -> String {
    let mut out = String::new();
    if trace.has_pose() {
        out.push_str("t,r,g,b,pitch,roll,yaw\n");
    } else {
        out.push_str("t,r,g,b\n");
    }
    for s in trace.samples() {
        let _ = write!(out, "{},{},{},{}", s.t, s.r, s.g, s.b);
        if let Some(p) = s.pose {
            let _ = write!(out, ",{},{},{}", p.pitch, p.roll, p.yaw);
        }
        out.push('\n');
    }
    out
}

/// Picks the pipeline rate (30 or 60 Hz) closest to the median frame rate.
/// Exactly 45 Hz resolves to 30.
pub fn choose_pipeline_rate(trace: &SampleTrace) -> Result<f64> {
    if trace.len() < 2 {
        return Err(Error::InsufficientData(
            "at least 2 samples needed to estimate the frame rate".into(),
        ));
    }
    let rates: Vec<f64> = trace
        .samples()
        .windows(2)
        .map(|w| 1.0 / (w[1].t - w[0].t))
        .collect();
    let median_rate = stats::median(&rates).unwrap_or(30.0);
    Ok(if median_rate <= 45.0 { 30.0 } else { 60.0 })
}

/// Linear interpolation of one channel onto the uniform grid.
fn interpolate(times: &[f64], values: &[f64], t0: f64, rate: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let t = t0 + k as f64 / rate;
        while j + 2 < times.len() && times[j + 1] < t {
            j += 1;
        }
        if times.len() == 1 {
            out.push(values[0]);
            continue;
        }
        let (ta, tb) = (times[j], times[j + 1]);
        let frac = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        out.push(values[j] + frac * (values[j + 1] - values[j]));
    }
    out
}

/// Number of grid points in `[t_first, t_last]` at `rate`: `floor(span * rate) + 1`.
/// A tolerance of 1e-9 samples absorbs rounding in the span product.
pub fn grid_len(span: f64, rate: f64) -> usize {
    (span * rate + 1e-9).floor() as usize + 1
}

/// Resamples every channel of `trace` onto `t0 = first timestamp`, step `1/rate`.
/// No extrapolation past the last input sample.
pub fn resample_uniform(trace: &SampleTrace, rate: f64) -> Result<ResampledTrace> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Validation(format!("rate must be > 0, got {rate}")));
    }
    let samples = trace.samples();
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("empty trace".into()))?;
    let last = samples[samples.len() - 1];
    let t0 = first.t;
    let n = grid_len(last.t - t0, rate);
    let times: Vec<f64> = samples.iter().map(|s| s.t).collect();

    let channel = |f: &dyn Fn(&Sample) -> f64| -> UniformSignal {
        let values: Vec<f64> = samples.iter().map(f).collect();
        UniformSignal {
            t0,
            rate,
            values: interpolate(&times, &values, t0, rate, n),
        }
    };

    let pose = if trace.has_pose() {
        Some([
            channel(&|s| s.pose.map_or(0.0, |p| p.pitch)),
            channel(&|s| s.pose.map_or(0.0, |p| p.roll)),
            channel(&|s| s.pose.map_or(0.0, |p| p.yaw)),
        ])
    } else {
        None
    };

    let dts: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let median_dt = stats::median(&dts).unwrap_or(0.0);
    let gaps = GapStats {
        median_dt_s: median_dt,
        max_dt_s: dts.iter().copied().fold(0.0, f64::max),
        gap_count: dts.iter().filter(|&&dt| dt > 1.5 * median_dt).count(),
    };
    if gaps.gap_count > 0 {
        log::debug!(
            "{}: {} frame gaps (max {:.3} s)",
            trace.source_id(),
            gaps.gap_count,
            gaps.max_dt_s
        );
    }

    Ok(ResampledTrace {
        r: channel(&|s| s.r),
        g: channel(&|s| s.g),
        b: channel(&|s| s.b),
        pose,
        gaps,
    })
}

fn parse_gt_header(line: &str) -> Result<(f64, SignalKind)> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "expected '# rate=<Hz> kind=<ppg|ecg>' header".into(),
        })?;
    let mut rate = None;
    let mut kind = None;
    for token in body.split_whitespace() {
        match token.split_once('=') {
            Some(("rate", v)) => rate = Some(parse_f64(v, 1, "rate")?),
            Some(("kind", v)) => kind = Some(v.parse::<SignalKind>()?),
            _ => {}
        }
    }
    let rate = rate.ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing rate in header".into(),
    })?;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Validation(format!("header rate must be > 0, got {rate}")));
    }
    let kind = kind.ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing kind in header".into(),
    })?;
    Ok((rate, kind))
}

/// Parses a ground-truth waveform file.
pub fn parse_gt_waveform(bytes: &[u8]) -> Result<GroundTruthRecord> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 1,
        message: format!("invalid UTF-8: {e}"),
    })?;
    let (header, body) = text.split_once('\n').unwrap_or((text, ""));
    let (rate, kind) = parse_gt_header(header)?;

    let mut t0 = None;
    let mut values = Vec::new();
    for record in csv_reader(body.as_bytes()).records() {
        let record = record.map_err(csv_error)?;
        // offset by the header line
        let line = record_line(&record) + 1;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        if values.is_empty() && t0.is_none() && &record[0] == "t" && &record[1] == "v" {
            continue;
        }
        let t = parse_f64(&record[0], line, "t")?;
        let v = parse_f64(&record[1], line, "v")?;
        if !v.is_finite() {
            return Err(Error::Validation(format!("line {line}: non-finite sample")));
        }
        t0.get_or_insert(t);
        values.push(v);
    }
    Ok(GroundTruthRecord {
        waveform: UniformSignal::new(t0.unwrap_or(0.0), rate, values)?,
        kind,
    })
}

pub fn serialize_gt_waveform(record: &GroundTruthRecord) -> String {
    let w = &record.waveform;
    let mut out = format!("# rate={} kind={}\nt,v\n", w.rate, record.kind.as_str());
    for (k, v) in w.values.iter().enumerate() {
        let _ = writeln!(out, "{},{}", w.time_at(k), v);
    }
    out
}
