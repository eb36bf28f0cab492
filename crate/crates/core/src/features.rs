//! Similarity metrics between accelerometer axes and the feature vectors fed
//! to the embedder and the detector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::window::AccelWindow;

/// A bounded similarity value. `degenerate` is set when an input had zero norm
/// or zero variance and the value was defined as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub value: f64,
    pub degenerate: bool,
}

impl Similarity {
    fn defined(value: f64) -> Self {
        Self { value: value.clamp(-1.0, 1.0), degenerate: false }
    }

    fn degenerate() -> Self {
        Self { value: 0.0, degenerate: true }
    }
}

fn check_pair(a: &[f64], b: &[f64], min_len: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape { expected: a.len(), actual: b.len() });
    }
    if a.len() < min_len {
        return Err(Error::InvalidArgument(format!(
            "sequences need at least {min_len} elements, got {}",
            a.len()
        )));
    }
    Ok(())
}

/// Cosine of the angle between `a` and `b`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<Similarity> {
    check_pair(a, b, 1)?;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&u, &v) in a.iter().zip(b) {
        dot += u * v;
        na += u * u;
        nb += v * v;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(Similarity::degenerate());
    }
    Ok(Similarity::defined(dot / (na.sqrt() * nb.sqrt())))
}

/// Pearson linear correlation coefficient.
pub fn plcc(a: &[f64], b: &[f64]) -> Result<Similarity> {
    check_pair(a, b, 2)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&u, &v) in a.iter().zip(b) {
        let (du, dv) = (u - ma, v - mb);
        cov += du * dv;
        va += du * du;
        vb += dv * dv;
    }
    // Relative threshold: a constant sequence can leave rounding residue in its variance.
    let tiny = |var: f64, s: &[f64]| var <= 1e-24 * s.iter().map(|v| v * v).sum::<f64>().max(1e-300);
    if va == 0.0 || vb == 0.0 || tiny(va, a) || tiny(vb, b) {
        return Ok(Similarity::degenerate());
    }
    Ok(Similarity::defined(cov / (va.sqrt() * vb.sqrt())))
}

/// Dynamic time warping distance with absolute-difference ground cost.
///
/// Full O(|a|·|b|) table, kept to two rows.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("dtw needs non-empty sequences".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &ai in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = (ai - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// DTW divided by `|a| + |b|`, the longest possible warping path.
pub fn dtw_normalized(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(dtw(a, b)? / (a.len() + b.len()) as f64)
}

/// Which representation of a window is fed to a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureVariant {
    /// Cosine, PLCC and normalized DTW over the axis pairs (x,y), (x,z), (y,z): 9 values.
    SimilarityMetrics,
    /// Per-axis min, max, mean, std: 12 values.
    BasicStats,
    /// The flattened x, y, z series: 3·W values.
    RawSeries,
    /// Similarity metrics followed by basic stats: 21 values. Used by the detector.
    SimilarityAndStats,
}

impl FeatureVariant {
    pub fn dim(self, window_len: usize) -> usize {
        match self {
            FeatureVariant::SimilarityMetrics => 9,
            FeatureVariant::BasicStats => 12,
            FeatureVariant::RawSeries => 3 * window_len,
            FeatureVariant::SimilarityAndStats => 21,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureVariant::SimilarityMetrics => "similarity_metrics",
            FeatureVariant::BasicStats => "basic_stats",
            FeatureVariant::RawSeries => "raw_series",
            FeatureVariant::SimilarityAndStats => "similarity_and_stats",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "similarity_metrics" | "similarity" => Some(FeatureVariant::SimilarityMetrics),
            "basic_stats" | "stats" => Some(FeatureVariant::BasicStats),
            "raw_series" | "raw" => Some(FeatureVariant::RawSeries),
            "similarity_and_stats" | "combined" => Some(FeatureVariant::SimilarityAndStats),
            _ => None,
        }
    }

    pub fn feature_names(self, window_len: usize) -> Vec<String> {
        const PAIRS: [&str; 3] = ["xy", "xz", "yz"];
        let sim = || {
            ["cos", "plcc", "dtwn"]
                .iter()
                .flat_map(|m| PAIRS.iter().map(move |p| format!("{m}_{p}")))
                .collect::<Vec<_>>()
        };
        let stats = || {
            ["x", "y", "z"]
                .iter()
                .flat_map(|a| ["min", "max", "mean", "std"].iter().map(move |s| format!("{s}_{a}")))
                .collect::<Vec<_>>()
        };
        match self {
            FeatureVariant::SimilarityMetrics => sim(),
            FeatureVariant::BasicStats => stats(),
            FeatureVariant::RawSeries => ["ax", "ay", "az"]
                .iter()
                .flat_map(|a| (0..window_len).map(move |i| format!("{a}_{i}")))
                .collect(),
            FeatureVariant::SimilarityAndStats => {
                let mut v = sim();
                v.extend(stats());
                v
            }
        }
    }
}

fn similarity_features(window: &AccelWindow) -> Vec<f64> {
    let [x, y, z] = window.axes();
    let pairs = [(x, y), (x, z), (y, z)];
    let mut out = Vec::with_capacity(9);
    // Windows are validated non-empty with equal-length axes, so these cannot fail
    // except for single-sample windows, where PLCC is treated as degenerate.
    for (a, b) in pairs {
        out.push(cosine(a, b).map(|s| s.value).unwrap_or(0.0));
    }
    for (a, b) in pairs {
        out.push(plcc(a, b).map(|s| s.value).unwrap_or(0.0));
    }
    for (a, b) in pairs {
        out.push(dtw_normalized(a, b).unwrap_or(0.0));
    }
    out
}

fn basic_stats(window: &AccelWindow) -> Vec<f64> {
    let mut out = Vec::with_capacity(12);
    for axis in window.axes() {
        let n = axis.len() as f64;
        let min = axis.iter().copied().fold(f64::INFINITY, f64::min);
        let max = axis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = axis.iter().sum::<f64>() / n;
        let var = axis.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        out.extend([min, max, mean, var.sqrt()]);
    }
    out
}

/// Raw (unnormalized) feature vector of a window.
pub fn extract_features(window: &AccelWindow, variant: FeatureVariant) -> Vec<f64> {
    match variant {
        FeatureVariant::SimilarityMetrics => similarity_features(window),
        FeatureVariant::BasicStats => basic_stats(window),
        FeatureVariant::RawSeries => window.axes().iter().flat_map(|a| a.iter().copied()).collect(),
        FeatureVariant::SimilarityAndStats => {
            let mut v = similarity_features(window);
            v.extend(basic_stats(window));
            v
        }
    }
}

/// Extracts raw features for many windows in parallel, preserving order.
pub fn extract_all(windows: &[AccelWindow], variant: FeatureVariant) -> Vec<Vec<f64>> {
    use rayon::prelude::*;
    windows.par_iter().map(|w| extract_features(w, variant)).collect()
}

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits column means and population standard deviations. Columns with
    /// zero spread get a unit divisor.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot fit normalization on zero rows".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::Shape { expected: dim, actual: r.len() });
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::Shape { expected: self.dim(), actual: row.len() });
        }
        Ok(row
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }
}

/// Feature extraction plus z-score normalization fitted on a training pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub variant: FeatureVariant,
    pub window_len: usize,
    pub scaler: Option<Standardizer>,
}

/// Version tag of the persisted normalization record.
pub const NORMALIZATION_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NormalizationRecord {
    version: u32,
    variant: FeatureVariant,
    window_len: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Featurizer {
    pub fn new(variant: FeatureVariant, window_len: usize) -> Self {
        Self { variant, window_len, scaler: None }
    }

    pub fn dim(&self) -> usize {
        self.variant.dim(self.window_len)
    }

    pub fn is_fitted(&self) -> bool {
        self.scaler.is_some()
    }

    pub fn raw(&self, window: &AccelWindow) -> Result<Vec<f64>> {
        if window.len() != self.window_len {
            return Err(Error::Shape { expected: self.window_len, actual: window.len() });
        }
        Ok(extract_features(window, self.variant))
    }

    /// Fits the normalization on `windows` and returns their normalized features.
    pub fn fit(&mut self, windows: &[AccelWindow]) -> Result<Vec<Vec<f64>>> {
        if let Some(w) = windows.iter().find(|w| w.len() != self.window_len) {
            return Err(Error::Shape { expected: self.window_len, actual: w.len() });
        }
        let raw = extract_all(windows, self.variant);
        let scaler = Standardizer::fit(&raw)?;
        let out = raw.iter().map(|r| scaler.transform(r)).collect::<Result<_>>()?;
        self.scaler = Some(scaler);
        Ok(out)
    }

    fn scaler(&self) -> Result<&Standardizer> {
        self.scaler
            .as_ref()
            .ok_or_else(|| Error::State("feature normalization requested before fitting".into()))
    }

    pub fn transform(&self, window: &AccelWindow) -> Result<Vec<f64>> {
        let scaler = self.scaler()?;
        scaler.transform(&self.raw(window)?)
    }

    pub fn transform_all(&self, windows: &[AccelWindow]) -> Result<Vec<Vec<f64>>> {
        use rayon::prelude::*;
        let scaler = self.scaler()?;
        windows
            .par_iter()
            .map(|w| scaler.transform(&self.raw(w)?))
            .collect()
    }

    pub fn to_record(&self) -> Result<String> {
        let s = self.scaler()?;
        let rec = NormalizationRecord {
            version: NORMALIZATION_VERSION,
            variant: self.variant,
            window_len: self.window_len,
            mean: s.mean.clone(),
            std: s.std.clone(),
        };
        serde_json::to_string_pretty(&rec).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let rec: NormalizationRecord =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("normalization record: {e}")))?;
        if rec.version != NORMALIZATION_VERSION {
            return Err(Error::Schema(format!("unsupported normalization version {}", rec.version)));
        }
        let dim = rec.variant.dim(rec.window_len);
        if rec.mean.len() != dim || rec.std.len() != dim {
            return Err(Error::Schema("normalization vector length does not match variant".into()));
        }
        Ok(Self {
            variant: rec.variant,
            window_len: rec.window_len,
            scaler: Some(Standardizer { mean: rec.mean, std: rec.std }),
        })
    }
}

/// Writes a feature matrix as CSV with a header naming each feature.
pub fn write_feature_csv<W: std::io::Write>(
    writer: W,
    names: &[String],
    ids: &[String],
    rows: &[Vec<f64>],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Schema(format!("feature csv: {e}"));
    let mut header = vec!["sample_id".to_string()];
    header.extend(names.iter().cloned());
    wtr.write_record(&header).map_err(err)?;
    for (id, row) in ids.iter().zip(rows) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| format!("{v}")));
        wtr.write_record(&rec).map_err(err)?;
    }
    wtr.flush().map_err(|e| Error::Schema(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::window::test_util::*;
    use crate::window::Label;

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().value - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap().value, 0.0);
        // 4 / (sqrt 5 * sqrt 5)
        assert!((cosine(&[1.0, 2.0], &[2.0, 1.0]).unwrap().value - 0.8).abs() < 1e-12);
        let d = cosine(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert!(d.degenerate && d.value == 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn plcc_examples() {
        assert!((plcc(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().value - 1.0).abs() < 1e-12);
        assert!((plcc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().value + 1.0).abs() < 1e-12);
        // cov 4 over sqrt 5 * sqrt 5
        assert!((plcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap().value - 0.8).abs() < 1e-12);
        let d = plcc(&[2.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(d.degenerate && d.value == 0.0);
        assert!(plcc(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn plcc_treats_near_constant_rounding_as_degenerate() {
        let a = vec![0.1 + 0.2; 7];
        let b: Vec<f64> = (0..7).map(f64::from).collect();
        assert!(plcc(&a, &b).unwrap().degenerate);
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw(&[1.0, 5.0, 2.0], &[1.0, 5.0, 2.0]).unwrap(), 0.0);
        assert_eq!(dtw(&[0.0, 1.0, 2.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert!(dtw(&[], &[1.0]).is_err());
        assert_eq!(dtw_normalized(&[0.0, 1.0, 2.0], &[0.0, 2.0]).unwrap(), 0.2);
    }

    #[test]
    fn identical_axes_features() {
        let v: Vec<f64> = (0..32).map(|i| (i as f64 * 0.3).sin() + 2.0).collect();
        let w = window_from(Label::Adl, 0, v.clone(), v.clone(), v);
        let f = extract_features(&w, FeatureVariant::SimilarityMetrics);
        assert_eq!(f.len(), 9);
        for c in &f[..6] {
            assert!((c - 1.0).abs() < 1e-12);
        }
        assert!(f[6..].iter().all(|&d| d == 0.0));
    }

    #[test]
    fn stats_of_constant_window() {
        let w = constant_window(Label::Adl, 0, 16, 3.5);
        let f = extract_features(&w, FeatureVariant::BasicStats);
        assert_eq!(f, vec![3.5, 3.5, 3.5, 0.0, 3.5, 3.5, 3.5, 0.0, 3.5, 3.5, 3.5, 0.0]);
    }

    #[test]
    fn variant_dims_and_names() {
        let w = constant_window(Label::Adl, 0, 10, 1.0);
        for v in [
            FeatureVariant::SimilarityMetrics,
            FeatureVariant::BasicStats,
            FeatureVariant::RawSeries,
            FeatureVariant::SimilarityAndStats,
        ] {
            assert_eq!(extract_features(&w, v).len(), v.dim(10));
            assert_eq!(v.feature_names(10).len(), v.dim(10));
            assert_eq!(FeatureVariant::parse(v.as_str()), Some(v));
        }
    }

    #[test]
    fn transform_before_fit_is_state_error() {
        let f = Featurizer::new(FeatureVariant::BasicStats, 8);
        let w = constant_window(Label::Adl, 0, 8, 1.0);
        assert!(matches!(f.transform(&w), Err(Error::State(_))));
    }

    #[test]
    fn fitted_features_are_standardized_and_persist() {
        let ws: Vec<_> = (0..20)
            .map(|k| {
                let x = (0..16).map(|i| ((i + k) as f64).sin() * k as f64).collect();
                let y = (0..16).map(|i| (i * k) as f64 * 0.1).collect();
                let z = (0..16).map(|i| ((i as f64) - k as f64).abs()).collect();
                window_from(Label::Adl, k as i64, x, y, z)
            })
            .collect();
        let mut f = Featurizer::new(FeatureVariant::SimilarityAndStats, 16);
        let rows = f.fit(&ws).unwrap();
        for j in 0..21 {
            let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
            assert!(mean.abs() < 1e-9);
        }
        let back = Featurizer::from_record(&f.to_record().unwrap()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.transform(&ws[3]).unwrap(), rows[3]);
    }
}
