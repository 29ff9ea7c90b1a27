//! Time-lapse ingestion: timestamp parsing, gap segmentation, forecast
//! windows and the window manifest CSV.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use log::warn;

use crate::error::{Error, Result};
use crate::image::SkyImage;
use crate::metrics::csv_err;

/// Filename timestamp template used when none is given.
pub const DEFAULT_TIMESTAMP_PATTERN: &str = "%Y%m%d%H%M%S";
/// Format of `anchor_ts` in manifests and prediction filenames.
pub const ANCHOR_TS_FORMAT: &str = "%Y%m%d%H%M%S";
/// Past offsets `t-5 ..= t` every window keeps.
pub const HISTORY_LEN: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Frame {
    pub timestamp: NaiveDateTime,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOptions {
    /// strftime-style template searched for anywhere in the file name.
    pub timestamp_pattern: String,
    pub period_s: f64,
    pub tolerance_s: f64,
    /// Drop frames whose mean intensity in `[0, 1]` is below this value.
    pub min_mean_brightness: Option<f64>,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        Self {
            timestamp_pattern: DEFAULT_TIMESTAMP_PATTERN.to_string(),
            period_s: 30.0,
            tolerance_s: 5.0,
            min_mean_brightness: None,
        }
    }
}

/// Time-ordered frames split into gap-free segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    frames: Vec<Frame>,
    segments: Vec<Range<usize>>,
    period_s: f64,
    tolerance_s: f64,
    dims: Option<(u32, u32)>,
    skipped: usize,
}

impl ImageSequence {
    /// Sort, deduplicate and segment `frames`. Consecutive frames further
    /// apart than `period_s ± tolerance_s` start a new segment.
    pub fn from_frames(mut frames: Vec<Frame>, period_s: f64, tolerance_s: f64) -> Result<Self> {
        if !(period_s > 0.0) || !(tolerance_s >= 0.0) || tolerance_s >= period_s {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= tolerance < period, got period {period_s} tolerance {tolerance_s}"
            )));
        }
        frames.sort();
        frames.dedup_by(|b, a| {
            let dup = a.timestamp == b.timestamp;
            if dup {
                warn!("duplicate timestamp {}: keeping {}", a.timestamp, a.path.display());
            }
            dup
        });
        let mut segments = Vec::new();
        let mut start = 0;
        for i in 1..frames.len() {
            let dt = (frames[i].timestamp - frames[i - 1].timestamp).num_milliseconds() as f64 / 1000.0;
            if (dt - period_s).abs() > tolerance_s {
                segments.push(start..i);
                start = i;
            }
        }
        if !frames.is_empty() {
            segments.push(start..frames.len());
        }
        Ok(Self { frames, segments, period_s, tolerance_s, dims: None, skipped: 0 })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    pub fn segment_lengths(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.len()).collect()
    }

    pub fn period_s(&self) -> f64 {
        self.period_s
    }

    pub fn tolerance_s(&self) -> f64 {
        self.tolerance_s
    }

    /// Common frame dimensions, when read from disk.
    pub fn dims(&self) -> Option<(u32, u32)> {
        self.dims
    }

    /// Files ignored because no timestamp could be parsed from their name.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Split into frames strictly before `year` and frames from `year` on.
    /// Each half is segmented afresh.
    pub fn split_by_year(&self, year: i32) -> Result<(ImageSequence, ImageSequence)> {
        let (train, test): (Vec<Frame>, Vec<Frame>) =
            self.frames.iter().cloned().partition(|f| f.timestamp.year() < year);
        let mut a = Self::from_frames(train, self.period_s, self.tolerance_s)?;
        let mut b = Self::from_frames(test, self.period_s, self.tolerance_s)?;
        a.dims = self.dims;
        b.dims = self.dims;
        Ok((a, b))
    }
}

/// Find a timestamp matching `pattern` anywhere in `name`.
pub fn parse_timestamp(name: &str, pattern: &str) -> Option<NaiveDateTime> {
    let width = probe_width(pattern)?;
    let chars: Vec<(usize, char)> = name.char_indices().collect();
    if chars.len() < width {
        return None;
    }
    for start in 0..=chars.len() - width {
        let from = chars[start].0;
        let to = chars.get(start + width).map_or(name.len(), |c| c.0);
        let candidate = &name[from..to];
        if let Ok(ts) = NaiveDateTime::parse_from_str(candidate, pattern) {
            return Some(ts);
        }
        if let Ok(d) = NaiveDate::parse_from_str(candidate, pattern) {
            return d.and_hms_opt(0, 0, 0);
        }
    }
    None
}

/// Character width of a timestamp rendered with `pattern`; fixed-width
/// fields only.
fn probe_width(pattern: &str) -> Option<usize> {
    let probe = NaiveDate::from_ymd_opt(2002, 11, 22)?.and_hms_opt(13, 44, 55)?;
    let mut out = String::new();
    use std::fmt::Write as _;
    write!(out, "{}", probe.format(pattern)).ok()?;
    Some(out.chars().count())
}

/// Read every image in `dir` whose name carries a timestamp.
pub fn load_sequence(dir: impl AsRef<Path>, options: &SequenceOptions) -> Result<ImageSequence> {
    let dir = dir.as_ref();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Sequence(format!("no files in {}", dir.display())));
    }
    let mut frames = Vec::new();
    let mut skipped = 0;
    let mut dims: Option<(u32, u32)> = None;
    for path in entries {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Some(timestamp) = parse_timestamp(name, &options.timestamp_pattern) else {
            skipped += 1;
            continue;
        };
        let d = image::image_dimensions(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
        match dims {
            None => dims = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::DimensionMismatch {
                    expected: (expected.0 as usize, expected.1 as usize),
                    actual: (d.0 as usize, d.1 as usize),
                })
            }
            _ => {}
        }
        if let Some(min) = options.min_mean_brightness {
            let img: SkyImage<f32> = SkyImage::load(&path)?;
            let mean = img.pixels().iter().map(|&p| p as f64).sum::<f64>() / img.pixels().len() as f64;
            if mean < min {
                continue;
            }
        }
        frames.push(Frame { timestamp, path });
    }
    if skipped > 0 {
        warn!("{skipped} file(s) in {} had no parseable timestamp", dir.display());
    }
    if frames.is_empty() {
        return Err(Error::Sequence(format!("no usable frames in {}", dir.display())));
    }
    let mut seq = ImageSequence::from_frames(frames, options.period_s, options.tolerance_s)?;
    seq.dims = dims;
    seq.skipped = skipped;
    Ok(seq)
}

/// One sample: history `t-5 ..= t` and targets `t+1 ..= t+T_f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastWindow<'a> {
    /// Index of the anchor frame `t` in the sequence.
    pub anchor: usize,
    frames: &'a [Frame],
    horizon: usize,
}

impl<'a> ForecastWindow<'a> {
    /// Build from a slice holding `t-5 ..= t+horizon`.
    pub fn new(anchor: usize, frames: &'a [Frame], horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("forecast horizon must be at least 1".into()));
        }
        if frames.len() != HISTORY_LEN + horizon {
            return Err(Error::InsufficientHistory(format!(
                "window needs {} frames, got {}",
                HISTORY_LEN + horizon,
                frames.len()
            )));
        }
        Ok(Self { anchor, frames, horizon })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn anchor_frame(&self) -> &'a Frame {
        &self.frames[HISTORY_LEN - 1]
    }

    pub fn anchor_ts(&self) -> String {
        self.anchor_frame().timestamp.format(ANCHOR_TS_FORMAT).to_string()
    }

    /// Frames `t-5 ..= t`.
    pub fn history(&self) -> &'a [Frame] {
        &self.frames[..HISTORY_LEN]
    }

    /// Input stack `{t-5, t-3, t-1, t}`.
    pub fn inputs(&self) -> [&'a Frame; 4] {
        let h = self.history();
        [&h[0], &h[2], &h[4], &h[5]]
    }

    /// Frames `t+1 ..= t+T_f`.
    pub fn targets(&self) -> &'a [Frame] {
        &self.frames[HISTORY_LEN..]
    }

    /// Real frame at `offset` relative to `t`, for `-5 <= offset <= T_f`.
    pub fn at_offset(&self, offset: isize) -> Option<&'a Frame> {
        let i = offset + HISTORY_LEN as isize - 1;
        usize::try_from(i).ok().and_then(|i| self.frames.get(i))
    }
}

/// Number of windows a segment of `len` frames yields.
pub fn windows_in_segment(len: usize, horizon: usize) -> usize {
    len.saturating_sub(HISTORY_LEN - 1 + horizon)
}

/// Lazily enumerate every window of `seq`. Indexable, so disjoint ranges
/// can be consumed from different threads.
pub fn make_windows(seq: &ImageSequence, horizon: usize) -> Windows<'_> {
    let mut starts = Vec::with_capacity(seq.segments.len());
    let mut total = 0;
    for seg in &seq.segments {
        let n = if horizon == 0 { 0 } else { windows_in_segment(seg.len(), horizon) };
        if n > 0 {
            starts.push((total, seg.start));
            total += n;
        }
    }
    Windows { frames: &seq.frames, horizon, starts, total, next: 0 }
}

#[derive(Debug, Clone)]
pub struct Windows<'a> {
    frames: &'a [Frame],
    horizon: usize,
    /// (first window index, first frame index) of each productive segment.
    starts: Vec<(usize, usize)>,
    total: usize,
    next: usize,
}

impl<'a> Windows<'a> {
    pub fn total(&self) -> usize {
        self.total
    }

    /// The `index`-th window in enumeration order.
    pub fn get(&self, index: usize) -> Option<ForecastWindow<'a>> {
        if index >= self.total {
            return None;
        }
        let seg = self.starts.partition_point(|&(first, _)| first <= index) - 1;
        let (first, frame0) = self.starts[seg];
        let lo = frame0 + (index - first);
        let anchor = lo + HISTORY_LEN - 1;
        let frames = &self.frames[lo..=anchor + self.horizon];
        Some(ForecastWindow { anchor, frames, horizon: self.horizon })
    }
}

impl<'a> Iterator for Windows<'a> {
    type Item = ForecastWindow<'a>;

    fn next(&mut self) -> Option<Self::Item> {
        let w = self.get(self.next)?;
        self.next += 1;
        Some(w)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.total - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Windows<'_> {}

/// Offsets relative to `t` of the input stack for recursive step `k`
/// (`k` predictions already made).
pub fn recursion_offsets(k: usize) -> [isize; 4] {
    let k = k as isize;
    [-5 + k, -3 + k, -1 + k, k]
}

/// One slot of a recursive input stack.
#[derive(Debug, PartialEq)]
pub enum StackFrame<'a, P> {
    Real(&'a Frame),
    /// Prediction for offset `t + n`, stored at `predictions[n - 1]`.
    Predicted(&'a P),
}

/// Input stack for the next recursive step, given the predictions made so
/// far (`predictions[j]` is the estimate of `t + j + 1`).
pub fn recursion_inputs<'a, P>(
    window: &ForecastWindow<'a>,
    predictions: &'a [P],
) -> Result<[StackFrame<'a, P>; 4]> {
    let offsets = recursion_offsets(predictions.len());
    let slot = |o: isize| -> Result<StackFrame<'a, P>> {
        if o > 0 {
            Ok(StackFrame::Predicted(&predictions[o as usize - 1]))
        } else {
            window
                .at_offset(o)
                .map(StackFrame::Real)
                .ok_or_else(|| Error::InsufficientHistory(format!("no frame at offset t{o:+}")))
        }
    };
    Ok([slot(offsets[0])?, slot(offsets[1])?, slot(offsets[2])?, slot(offsets[3])?])
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub anchor_ts: String,
    pub inputs: [PathBuf; 4],
    pub targets: Vec<PathBuf>,
}

impl ManifestRow {
    pub fn from_window(w: &ForecastWindow<'_>) -> Self {
        Self {
            anchor_ts: w.anchor_ts(),
            inputs: w.inputs().map(|f| f.path.clone()),
            targets: w.targets().iter().map(|f| f.path.clone()).collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.targets.len()
    }
}

fn manifest_header(horizon: usize) -> Vec<String> {
    let mut h: Vec<String> = ["anchor_ts", "in0", "in1", "in2", "in3"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=horizon).map(|k| format!("target{k}")));
    h
}

/// Write `anchor_ts,in0,in1,in2,in3,target1..targetK`.
pub fn write_manifest<'a>(
    out: impl Write,
    horizon: usize,
    windows: impl IntoIterator<Item = ForecastWindow<'a>>,
) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(manifest_header(horizon)).map_err(csv_err)?;
    let mut n = 0;
    for win in windows {
        if win.horizon() != horizon {
            return Err(Error::InvalidParameter("windows with mixed horizons".into()));
        }
        write_row(&mut w, &ManifestRow::from_window(&win))?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

fn write_row<W: Write>(w: &mut csv::Writer<W>, row: &ManifestRow) -> Result<()> {
    let mut rec = vec![row.anchor_ts.clone()];
    rec.extend(row.inputs.iter().chain(&row.targets).map(|p| p.to_string_lossy().into_owned()));
    w.write_record(rec).map_err(csv_err)
}

/// Write already materialized rows.
pub fn write_manifest_rows(out: impl Write, rows: &[ManifestRow]) -> Result<()> {
    let horizon = rows.first().map_or(1, ManifestRow::horizon);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(manifest_header(horizon)).map_err(csv_err)?;
    for row in rows {
        if row.horizon() != horizon {
            return Err(Error::InvalidParameter("rows with mixed horizons".into()));
        }
        write_row(&mut w, row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(input: impl Read) -> Result<Vec<ManifestRow>> {
    let bad = |reason: String| Error::Format { kind: "window manifest", reason };
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.len() < 6 {
        return Err(bad(format!("expected at least 6 columns, found {}", header.len())));
    }
    let horizon = header.len() - 5;
    if header != manifest_header(horizon) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let path = |i: usize| PathBuf::from(&rec[i]);
        rows.push(ManifestRow {
            anchor_ts: rec[0].to_string(),
            inputs: [path(1), path(2), path(3), path(4)],
            targets: (5..5 + horizon).map(path).collect(),
        });
    }
    Ok(rows)
}

/// Group manifest rows by anchor timestamp, rejecting duplicates.
pub fn index_manifest(rows: &[ManifestRow]) -> Result<BTreeMap<&str, &ManifestRow>> {
    let mut map = BTreeMap::new();
    for row in rows {
        if map.insert(row.anchor_ts.as_str(), row).is_some() {
            return Err(Error::Format { kind: "window manifest", reason: format!("duplicate anchor {}", row.anchor_ts) });
        }
    }
    Ok(map)
}
