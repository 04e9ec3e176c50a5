//! Ground-truth peak cleaning sessions.
//!
//! A session starts from peaks proposed by the alternating-scan detector on
//! the raw contact PPG/ECG and is corrected by a human through single edits.
//! Every edit is logged with enough information to undo it, and replaying
//! the log from the initial proposal reproduces the current state.

use serde::{Deserialize, Serialize};

use crate::beat_analysis::{detect_peak_indices, BeatSeries, BeatSource};
use crate::error::{Error, Result};
use crate::stats;
use crate::trace_io::{GroundTruthRecord, SignalKind};

/// Proposal threshold as a fraction of the waveform's standard deviation.
pub const DEFAULT_PROPOSAL_DELTA_FACTOR: f64 = 0.4;
/// Edits grab the nearest peak within this distance (seconds).
pub const SNAP_TOLERANCE_S: f64 = 0.15;
pub const ANNOTATION_FORMAT_VERSION: u32 = 1;

/// Closed time span `[t0, t1]` excluded from annotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlankRegion {
    pub t0: f64,
    pub t1: f64,
}

impl BlankRegion {
    pub fn new(t0: f64, t1: f64) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return Err(Error::EditRejected(format!("invalid blank region [{t0}, {t1}]")));
        }
        Ok(Self { t0, t1 })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 && t <= self.t1
    }

    /// True when the open span `(a, b)` intersects the region.
    pub fn overlaps(&self, a: f64, b: f64) -> bool {
        a < self.t1 && b > self.t0
    }
}

/// Candidate peaks on a raw ground-truth waveform.
///
/// `delta_factor` scales the waveform's population standard deviation into
/// the detector threshold; a flat waveform yields no proposals.
pub fn propose_peaks(waveform: &GroundTruthRecord, delta_factor: f64) -> Result<BeatSeries> {
    let w = &waveform.waveform;
    if w.is_empty() {
        return Err(Error::InsufficientData("empty waveform".into()));
    }
    let delta = delta_factor * stats::std_pop(&w.values);
    if !(delta > 0.0) {
        return BeatSeries::new(Vec::new(), BeatSource::GroundTruth);
    }
    propose_peaks_with_delta(waveform, delta)
}

pub fn propose_peaks_with_delta(waveform: &GroundTruthRecord, delta: f64) -> Result<BeatSeries> {
    let w = &waveform.waveform;
    let beats = detect_peak_indices(&w.values, delta)
        .into_iter()
        .map(|k| w.time_at(k))
        .collect();
    BeatSeries::new(beats, BeatSource::GroundTruth)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PeakEdit {
    Add { t: f64 },
    Move { from: f64, to: f64 },
    Delete { t: f64 },
    MarkBlank { t0: f64, t1: f64 },
    UnmarkBlank { t: f64 },
    Undo,
}

/// State change produced by an edit, kept for undo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum EditEffect {
    Added { t: f64 },
    Moved { from: f64, to: f64 },
    Deleted { t: f64 },
    Blanked {
        region: BlankRegion,
        merged: Vec<BlankRegion>,
        removed_peaks: Vec<f64>,
    },
    Unblanked { region: BlankRegion },
    Undid { entry: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEdit {
    pub edit: PeakEdit,
    pub effect: EditEffect,
}

/// One annotator's working state for a single ground-truth signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub session_id: String,
    pub signal_id: String,
    pub kind: SignalKind,
    pub annotator: String,
    pub created_at: String,
    initial_peaks: Vec<f64>,
    peaks: Vec<f64>,
    blank_regions: Vec<BlankRegion>,
    edit_log: Vec<LoggedEdit>,
    /// Log indices of edits that can still be undone, oldest first.
    undo_stack: Vec<usize>,
    version: u64,
    #[serde(default)]
    dirty: bool,
}

impl AnnotationSession {
    pub fn new(
        session_id: impl Into<String>,
        signal_id: impl Into<String>,
        kind: SignalKind,
        initial: &BeatSeries,
    ) -> Self {
        Self {
            session_id: session_id.into(),
            signal_id: signal_id.into(),
            kind,
            annotator: String::new(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            initial_peaks: initial.times().to_vec(),
            peaks: initial.times().to_vec(),
            blank_regions: Vec::new(),
            edit_log: Vec::new(),
            undo_stack: Vec::new(),
            version: 0,
            dirty: false,
        }
    }

    /// Starts a session from detector proposals on `waveform`.
    pub fn from_waveform(
        session_id: impl Into<String>,
        signal_id: impl Into<String>,
        waveform: &GroundTruthRecord,
        delta_factor: f64,
    ) -> Result<Self> {
        let proposal = propose_peaks(waveform, delta_factor)?;
        Ok(Self::new(session_id, signal_id, waveform.kind, &proposal))
    }

    pub fn peaks(&self) -> &[f64] {
        &self.peaks
    }

    pub fn initial_peaks(&self) -> &[f64] {
        &self.initial_peaks
    }

    pub fn blank_regions(&self) -> &[BlankRegion] {
        &self.blank_regions
    }

    pub fn edit_log(&self) -> &[LoggedEdit] {
        &self.edit_log
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn mark_saved(&mut self) {
        self.dirty = false;
    }

    pub fn can_undo(&self) -> bool {
        !self.undo_stack.is_empty()
    }

    pub fn beats(&self) -> Result<BeatSeries> {
        BeatSeries::new(self.peaks.clone(), BeatSource::GroundTruth)
    }

    fn in_blank(&self, t: f64) -> bool {
        self.blank_regions.iter().any(|r| r.contains(t))
    }

    fn nearest_peak(&self, t: f64) -> Result<usize> {
        let i = self.peaks.partition_point(|&p| p < t);
        let candidates = [i.checked_sub(1), (i < self.peaks.len()).then_some(i)];
        candidates
            .into_iter()
            .flatten()
            .filter(|&k| (self.peaks[k] - t).abs() <= SNAP_TOLERANCE_S)
            .min_by(|&a, &b| (self.peaks[a] - t).abs().total_cmp(&(self.peaks[b] - t).abs()))
            .ok_or(Error::PeakNotFound {
                t,
                tolerance_s: SNAP_TOLERANCE_S,
            })
    }

    fn insert_peak(&mut self, t: f64) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::EditRejected(format!("peak time {t} is not finite")));
        }
        if self.in_blank(t) {
            return Err(Error::EditRejected(format!("t={t} lies inside a blank region")));
        }
        let i = self.peaks.partition_point(|&p| p < t);
        if self.peaks.get(i) == Some(&t) {
            return Err(Error::EditRejected(format!("a peak already exists at t={t}")));
        }
        self.peaks.insert(i, t);
        Ok(())
    }

    fn remove_exact(&mut self, t: f64) {
        if let Some(i) = self.peaks.iter().position(|&p| p == t) {
            self.peaks.remove(i);
        }
    }

    fn remove_region(&mut self, region: &BlankRegion) {
        if let Some(i) = self.blank_regions.iter().position(|r| r == region) {
            self.blank_regions.remove(i);
        }
    }

    fn insert_region(&mut self, region: BlankRegion) {
        let i = self.blank_regions.partition_point(|r| r.t0 < region.t0);
        self.blank_regions.insert(i, region);
    }

    /// Applies one edit without version checks.
    fn perform(&mut self, edit: PeakEdit) -> Result<EditEffect> {
        match edit {
            PeakEdit::Add { t } => {
                self.insert_peak(t)?;
                Ok(EditEffect::Added { t })
            }
            PeakEdit::Move { from, to } => {
                let i = self.nearest_peak(from)?;
                let old = self.peaks.remove(i);
                if let Err(e) = self.insert_peak(to) {
                    self.peaks.insert(i, old);
                    return Err(e);
                }
                Ok(EditEffect::Moved { from: old, to })
            }
            PeakEdit::Delete { t } => {
                let i = self.nearest_peak(t)?;
                let old = self.peaks.remove(i);
                Ok(EditEffect::Deleted { t: old })
            }
            PeakEdit::MarkBlank { t0, t1 } => {
                let mut region = BlankRegion::new(t0, t1)?;
                let merged: Vec<BlankRegion> = self
                    .blank_regions
                    .iter()
                    .filter(|r| r.t0 <= region.t1 && r.t1 >= region.t0)
                    .copied()
                    .collect();
                for r in &merged {
                    region.t0 = region.t0.min(r.t0);
                    region.t1 = region.t1.max(r.t1);
                    self.remove_region(r);
                }
                let removed_peaks: Vec<f64> =
                    self.peaks.iter().copied().filter(|&p| region.contains(p)).collect();
                self.peaks.retain(|&p| !region.contains(p));
                self.insert_region(region);
                Ok(EditEffect::Blanked {
                    region,
                    merged,
                    removed_peaks,
                })
            }
            PeakEdit::UnmarkBlank { t } => {
                let region = *self
                    .blank_regions
                    .iter()
                    .find(|r| r.contains(t))
                    .ok_or_else(|| Error::EditRejected(format!("no blank region contains t={t}")))?;
                self.remove_region(&region);
                Ok(EditEffect::Unblanked { region })
            }
            PeakEdit::Undo => {
                let entry = *self
                    .undo_stack
                    .last()
                    .ok_or_else(|| Error::EditRejected("nothing to undo".into()))?;
                self.revert(&self.edit_log[entry].effect.clone());
                self.undo_stack.pop();
                Ok(EditEffect::Undid { entry })
            }
        }
    }

    fn revert(&mut self, effect: &EditEffect) {
        match effect {
            EditEffect::Added { t } => self.remove_exact(*t),
            EditEffect::Moved { from, to } => {
                self.remove_exact(*to);
                let i = self.peaks.partition_point(|&p| p < *from);
                self.peaks.insert(i, *from);
            }
            EditEffect::Deleted { t } => {
                let i = self.peaks.partition_point(|&p| p < *t);
                self.peaks.insert(i, *t);
            }
            EditEffect::Blanked {
                region,
                merged,
                removed_peaks,
            } => {
                self.remove_region(region);
                for r in merged {
                    self.insert_region(*r);
                }
                for &t in removed_peaks {
                    let i = self.peaks.partition_point(|&p| p < t);
                    self.peaks.insert(i, t);
                }
            }
            EditEffect::Unblanked { region } => self.insert_region(*region),
            EditEffect::Undid { .. } => {}
        }
    }

    /// Applies an edit. When `expected_version` is given it must match the
    /// current version (optimistic locking). Returns the new version.
    pub fn apply_edit(&mut self, edit: PeakEdit, expected_version: Option<u64>) -> Result<u64> {
        if let Some(expected) = expected_version {
            if expected != self.version {
                return Err(Error::VersionConflict {
                    expected,
                    current: self.version,
                });
            }
        }
        let effect = self.perform(edit)?;
        let undoable = !matches!(effect, EditEffect::Undid { .. });
        self.edit_log.push(LoggedEdit { edit, effect });
        if undoable {
            self.undo_stack.push(self.edit_log.len() - 1);
        }
        self.version += 1;
        self.dirty = true;
        Ok(self.version)
    }

    /// Re-applies the edit log to the initial proposal.
    pub fn replay(&self) -> Result<AnnotationSession> {
        let mut fresh = AnnotationSession {
            initial_peaks: self.initial_peaks.clone(),
            peaks: self.initial_peaks.clone(),
            blank_regions: Vec::new(),
            edit_log: Vec::new(),
            undo_stack: Vec::new(),
            version: 0,
            dirty: false,
            ..self.clone()
        };
        for logged in &self.edit_log {
            fresh.apply_edit(logged.edit, None)?;
        }
        Ok(fresh)
    }

    /// Consecutive-peak intervals as `(beat time, RR ms)`, skipping pairs that
    /// straddle a blank region.
    pub fn rr_intervals(&self) -> Vec<(f64, f64)> {
        self.peaks
            .windows(2)
            .filter(|w| !self.blank_regions.iter().any(|r| r.overlaps(w[0], w[1])))
            .map(|w| (w[1], 1000.0 * (w[1] - w[0])))
            .collect()
    }

    pub fn to_annotation(&self) -> AnnotationFile {
        AnnotationFile {
            version: self.version,
            signal_id: self.signal_id.clone(),
            kind: self.kind,
            peaks: self.peaks.clone(),
            blank_regions: self.blank_regions.iter().map(|r| [r.t0, r.t1]).collect(),
            annotator: self.annotator.clone(),
            created_at: self.created_at.clone(),
        }
    }

    /// Serializes the current annotations. Fails when `expected_version` is
    /// given and stale.
    pub fn export(&self, expected_version: Option<u64>) -> Result<String> {
        if let Some(expected) = expected_version {
            if expected != self.version {
                return Err(Error::VersionConflict {
                    expected,
                    current: self.version,
                });
            }
        }
        self.to_annotation().to_json()
    }
}

/// Exported annotation document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub version: u64,
    pub signal_id: String,
    pub kind: SignalKind,
    pub peaks: Vec<f64>,
    pub blank_regions: Vec<[f64; 2]>,
    pub annotator: String,
    pub created_at: String,
}

impl AnnotationFile {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and validates an annotation document.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let file: AnnotationFile = serde_json::from_slice(bytes)?;
        BeatSeries::new(file.peaks.clone(), BeatSource::GroundTruth)?;
        let regions = file.blanks()?;
        for w in regions.windows(2) {
            if w[1].t0 <= w[0].t1 {
                return Err(Error::Validation("blank regions overlap".into()));
            }
        }
        if let Some(p) = file.peaks.iter().find(|&&p| regions.iter().any(|r| r.contains(p))) {
            return Err(Error::Validation(format!("peak {p} lies inside a blank region")));
        }
        Ok(file)
    }

    pub fn blanks(&self) -> Result<Vec<BlankRegion>> {
        self.blank_regions
            .iter()
            .map(|[a, b]| BlankRegion::new(*a, *b).map_err(|_| Error::Validation(format!("invalid blank region [{a}, {b}]"))))
            .collect()
    }

    pub fn beats(&self) -> Result<BeatSeries> {
        BeatSeries::new(self.peaks.clone(), BeatSource::GroundTruth)
    }
}

/// Min/max decimation of the samples in `[from, to]` to at most `max_points`
/// points (two per bucket, in time order). Small ranges are returned as-is.
pub fn decimate(waveform: &GroundTruthRecord, from: f64, to: f64, max_points: usize) -> Vec<(f64, f64)> {
    let w = &waveform.waveform;
    if w.is_empty() || to < from {
        return Vec::new();
    }
    let lo = ((from - w.t0) * w.rate).ceil().max(0.0) as usize;
    let hi = (((to - w.t0) * w.rate).floor() as i64).min(w.len() as i64 - 1);
    if hi < lo as i64 {
        return Vec::new();
    }
    let hi = hi as usize;
    let count = hi - lo + 1;
    if count <= max_points.max(2) {
        return (lo..=hi).map(|k| (w.time_at(k), w.values[k])).collect();
    }
    let buckets = (max_points / 2).max(1);
    let mut out = Vec::with_capacity(buckets * 2);
    for b in 0..buckets {
        let s = lo + b * count / buckets;
        let e = lo + (b + 1) * count / buckets;
        if s >= e {
            continue;
        }
        let (mut kmin, mut kmax) = (s, s);
        for k in s..e {
            if w.values[k] < w.values[kmin] {
                kmin = k;
            }
            if w.values[k] > w.values[kmax] {
                kmax = k;
            }
        }
        let (a, b) = if kmin <= kmax { (kmin, kmax) } else { (kmax, kmin) };
        out.push((w.time_at(a), w.values[a]));
        if b != a {
            out.push((w.time_at(b), w.values[b]));
        }
    }
    out
}
