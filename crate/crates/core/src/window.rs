//! Accelerometer windows, feedback samples, datasets and stream segmentation.
//!
//! A window stores its three axes as separate contiguous arrays together with
//! the timestamp of its first sample. Samples inside a window are assumed to be
//! uniformly spaced at [`SAMPLE_PERIOD_MS`]; all signal math uses index order.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per prediction window.
pub const WINDOW_LEN: usize = 128;
/// Samples shared by consecutive windows when segmenting a stream.
pub const WINDOW_OVERLAP: usize = 10;
/// Nominal gap between accelerometer samples.
pub const SAMPLE_PERIOD_MS: i64 = 32;

/// One tri-axial accelerometer reading, in m/s².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelSample {
    pub t: i64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Fall,
    Adl,
}

impl Label {
    /// Binary training target: Fall = 1, ADL = 0.
    pub fn target(self) -> f64 {
        match self {
            Label::Fall => 1.0,
            Label::Adl => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Fall => "fall",
            Label::Adl => "adl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fall" => Some(Label::Fall),
            "adl" => Some(Label::Adl),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[serde(rename = "base")]
    BaseDataset,
    Feedback,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::BaseDataset => "base",
            Source::Feedback => "feedback",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" => Some(Source::BaseDataset),
            "feedback" => Some(Source::Feedback),
            _ => None,
        }
    }
}

/// Outcome of a user confirming an alert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Tp,
    Fp,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Tp => "tp",
            Verdict::Fp => "fp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tp" => Some(Verdict::Tp),
            "fp" => Some(Verdict::Fp),
            _ => None,
        }
    }

    /// The label a confirmed alert carries when it is used for training.
    pub fn label(self) -> Label {
        match self {
            Verdict::Tp => Label::Fall,
            Verdict::Fp => Label::Adl,
        }
    }
}

/// Identity of a window: who wore the sensor and when the window started.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowKey {
    pub subject_id: String,
    pub t0_ms: i64,
}

impl fmt::Display for WindowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.subject_id, self.t0_ms)
    }
}

/// Labeling and provenance shared by every window cut from one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMeta {
    pub subject_id: String,
    pub label: Label,
    pub activity: Option<String>,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelWindow {
    pub subject_id: String,
    pub label: Label,
    pub activity: Option<String>,
    pub source: Source,
    pub t0_ms: i64,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl AccelWindow {
    /// Builds a window from per-axis arrays. Axes must have equal, non-zero
    /// length and contain only finite values.
    pub fn new(meta: WindowMeta, t0_ms: i64, x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidArgument("window has no samples".into()));
        }
        if y.len() != x.len() {
            return Err(Error::Shape { expected: x.len(), actual: y.len() });
        }
        if z.len() != x.len() {
            return Err(Error::Shape { expected: x.len(), actual: z.len() });
        }
        if x.iter().chain(&y).chain(&z).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("window contains non-finite values".into()));
        }
        Ok(Self {
            subject_id: meta.subject_id,
            label: meta.label,
            activity: meta.activity,
            source: meta.source,
            t0_ms,
            x,
            y,
            z,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn axes(&self) -> [&[f64]; 3] {
        [&self.x, &self.y, &self.z]
    }

    pub fn key(&self) -> WindowKey {
        WindowKey {
            subject_id: self.subject_id.clone(),
            t0_ms: self.t0_ms,
        }
    }

    pub fn meta(&self) -> WindowMeta {
        WindowMeta {
            subject_id: self.subject_id.clone(),
            label: self.label,
            activity: self.activity.clone(),
            source: self.source,
        }
    }

    pub fn sample(&self, i: usize) -> AccelSample {
        AccelSample {
            t: self.t0_ms + i as i64 * SAMPLE_PERIOD_MS,
            x: self.x[i],
            y: self.y[i],
            z: self.z[i],
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = AccelSample> + '_ {
        (0..self.len()).map(move |i| self.sample(i))
    }

    /// Copy of this window with every axis value transformed by `f`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        AccelWindow::new(
            self.meta(),
            self.t0_ms,
            self.x.iter().map(|&v| f(v)).collect(),
            self.y.iter().map(|&v| f(v)).collect(),
            self.z.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// A confirmed alert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSample {
    pub window: AccelWindow,
    pub verdict: Verdict,
    pub round: u32,
}

impl FeedbackSample {
    pub fn new(window: AccelWindow, verdict: Verdict, round: u32) -> Result<Self> {
        if round == 0 {
            return Err(Error::InvalidArgument("feedback round must be >= 1".into()));
        }
        if verdict.label() != window.label {
            return Err(Error::InvalidArgument(format!(
                "verdict {} contradicts label {} of window {}",
                verdict.as_str(),
                window.label.as_str(),
                window.key()
            )));
        }
        Ok(Self { window, verdict, round })
    }

    /// A truthful user confirms an alert according to the window's ground truth.
    pub fn from_oracle(mut window: AccelWindow, round: u32) -> Result<Self> {
        let verdict = match window.label {
            Label::Fall => Verdict::Tp,
            Label::Adl => Verdict::Fp,
        };
        window.source = Source::Feedback;
        Self::new(window, verdict, round)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Selected,
    Merged,
}

/// A collection of windows with unique identities.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    windows: Vec<AccelWindow>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(windows: Vec<AccelWindow>, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::with_capacity(windows.len());
        for w in &windows {
            if !seen.insert(w.key()) {
                return Err(Error::Merge(w.key().to_string()));
            }
        }
        Ok(Self { windows, provenance })
    }

    pub fn empty(provenance: Provenance) -> Self {
        Self { windows: Vec::new(), provenance }
    }

    pub fn windows(&self) -> &[AccelWindow] {
        &self.windows
    }

    pub fn into_windows(self) -> Vec<AccelWindow> {
        self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Number of windows labeled `label`.
    pub fn count(&self, label: Label) -> usize {
        self.windows.iter().filter(|w| w.label == label).count()
    }

    pub fn has_both_classes(&self) -> bool {
        self.count(Label::Fall) > 0 && self.count(Label::Adl) > 0
    }
}

/// Start indices of the windows `segment_stream` would emit for a stream of `n` samples.
pub fn window_starts(n: usize, window_size: usize, overlap: usize) -> Result<Vec<usize>> {
    if window_size == 0 {
        return Err(Error::config("window size must be positive"));
    }
    if overlap >= window_size {
        return Err(Error::config(format!(
            "overlap {overlap} must be smaller than window size {window_size}"
        )));
    }
    if n < window_size {
        return Ok(Vec::new());
    }
    let stride = window_size - overlap;
    Ok((0..=(n - window_size) / stride).map(|k| k * stride).collect())
}

/// Cuts a stream into overlapping fixed-length windows, left to right.
/// Trailing samples that cannot fill a window are dropped.
pub fn segment_stream(
    stream: &[AccelSample],
    window_size: usize,
    overlap: usize,
    meta: &WindowMeta,
) -> Result<Vec<AccelWindow>> {
    let starts = window_starts(stream.len(), window_size, overlap)?;
    if let Some(pos) = stream.windows(2).position(|p| p[1].t <= p[0].t) {
        return Err(Error::InvalidArgument(format!(
            "timestamps not strictly increasing at sample {}",
            pos + 1
        )));
    }
    starts
        .into_iter()
        .map(|s| {
            let slice = &stream[s..s + window_size];
            AccelWindow::new(
                meta.clone(),
                slice[0].t,
                slice.iter().map(|p| p.x).collect(),
                slice.iter().map(|p| p.y).collect(),
                slice.iter().map(|p| p.z).collect(),
            )
        })
        .collect()
}

/// Signal magnitude vector: per-sample Euclidean norm of the three axes.
pub fn smv(window: &AccelWindow) -> Vec<f64> {
    window
        .x()
        .iter()
        .zip(window.y())
        .zip(window.z())
        .map(|((x, y), z)| (x * x + y * y + z * z).sqrt())
        .collect()
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    pub fn meta(label: Label) -> WindowMeta {
        WindowMeta {
            subject_id: "s0".into(),
            label,
            activity: Some("test".into()),
            source: Source::BaseDataset,
        }
    }

    pub fn window_from(label: Label, t0: i64, x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> AccelWindow {
        AccelWindow::new(meta(label), t0, x, y, z).unwrap()
    }

    pub fn constant_window(label: Label, t0: i64, len: usize, c: f64) -> AccelWindow {
        window_from(label, t0, vec![c; len], vec![c; len], vec![c; len])
    }
}

#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;

    fn stream(n: usize) -> Vec<AccelSample> {
        (0..n)
            .map(|i| AccelSample {
                t: i as i64 * SAMPLE_PERIOD_MS,
                x: i as f64,
                y: -(i as f64),
                z: 0.5 * i as f64,
            })
            .collect()
    }

    #[test]
    fn segments_with_stride() {
        let s = stream(266);
        let w = segment_stream(&s, 128, 10, &meta(Label::Adl)).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].x()[0], 0.0);
        assert_eq!(w[1].x()[0], 118.0);
        assert_eq!(w[1].t0_ms, 118 * SAMPLE_PERIOD_MS);
        // consecutive windows share exactly `overlap` samples
        assert_eq!(&w[0].x()[118..], &w[1].x()[..10]);
    }

    #[test]
    fn exact_fit_and_short_stream() {
        assert_eq!(segment_stream(&stream(128), 128, 10, &meta(Label::Adl)).unwrap().len(), 1);
        assert!(segment_stream(&stream(127), 128, 10, &meta(Label::Adl)).unwrap().is_empty());
    }

    #[test]
    fn overlap_must_be_smaller_than_window() {
        let err = segment_stream(&stream(300), 128, 128, &meta(Label::Adl)).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn rejects_non_increasing_timestamps() {
        let mut s = stream(200);
        s[50].t = s[49].t;
        assert!(matches!(
            segment_stream(&s, 128, 10, &meta(Label::Adl)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn window_count_formula() {
        for n in 128..700 {
            for overlap in [0, 10, 64, 127] {
                let expected = (n - 128) / (128 - overlap) + 1;
                assert_eq!(window_starts(n, 128, overlap).unwrap().len(), expected);
            }
        }
    }

    #[test]
    fn smv_values() {
        let zero = constant_window(Label::Adl, 0, 16, 0.0);
        assert!(smv(&zero).iter().all(|&v| v == 0.0));
        let w = window_from(Label::Adl, 0, vec![3.0; 8], vec![4.0; 8], vec![0.0; 8]);
        assert!(smv(&w).iter().all(|&v| v == 5.0));
    }

    #[test]
    fn window_rejects_bad_input() {
        assert!(AccelWindow::new(meta(Label::Adl), 0, vec![1.0], vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(AccelWindow::new(meta(Label::Adl), 0, vec![f64::NAN], vec![1.0], vec![1.0]).is_err());
        assert!(AccelWindow::new(meta(Label::Adl), 0, vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn feedback_verdict_must_match_label() {
        let fall = constant_window(Label::Fall, 0, 4, 1.0);
        assert!(FeedbackSample::new(fall.clone(), Verdict::Fp, 1).is_err());
        assert!(FeedbackSample::new(fall.clone(), Verdict::Tp, 0).is_err());
        let fb = FeedbackSample::from_oracle(fall, 2).unwrap();
        assert_eq!(fb.verdict, Verdict::Tp);
        assert_eq!(fb.window.source, Source::Feedback);
    }

    #[test]
    fn dataset_rejects_duplicate_keys() {
        let a = constant_window(Label::Adl, 0, 4, 1.0);
        let b = constant_window(Label::Fall, 0, 4, 2.0);
        assert!(matches!(Dataset::new(vec![a, b], Provenance::Original), Err(Error::Merge(_))));
    }
}
