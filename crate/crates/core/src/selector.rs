//! Gradient scoring of windows, per-cluster quotas and balanced top-x selection.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::partition::ClusterAssignment;
use crate::window::{AccelWindow, Dataset, FeedbackSample, Provenance, Source};

/// Share of the feedback pool kept for retraining.
pub const DEFAULT_FRACTION: f64 = 0.2;

// Guards floor/round against products like 0.2 * 35 = 6.999999999999999.
const ROUNDING_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientScore {
    pub sample_id: usize,
    pub g: f64,
}

/// Mean absolute consecutive difference of a scalar signal.
pub fn signal_gradient(signal: &[f64]) -> Result<f64> {
    if signal.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "gradient needs at least 2 points, got {}",
            signal.len()
        )));
    }
    let total: f64 = signal.windows(2).map(|p| (p[1] - p[0]).abs()).sum();
    Ok(total / (signal.len() - 1) as f64)
}

/// Window gradient score: the mean of the three per-axis gradients.
pub fn window_gradient(window: &AccelWindow) -> Result<f64> {
    let mut sum = 0.0;
    for axis in window.axes() {
        sum += signal_gradient(axis)?;
    }
    Ok(sum / 3.0)
}

pub fn score_windows<'a>(windows: impl IntoIterator<Item = &'a AccelWindow>) -> Result<Vec<GradientScore>> {
    windows
        .into_iter()
        .enumerate()
        .map(|(sample_id, w)| Ok(GradientScore { sample_id, g: window_gradient(w)? }))
        .collect()
}

/// Base per-cluster quota `floor(fraction·|X|/|C|)` and total budget `round(fraction·|X|)`.
/// With no clusters both are 0.
pub fn quota(pool_size: usize, cluster_count: usize, fraction: f64) -> (usize, usize) {
    if cluster_count == 0 {
        return (0, 0);
    }
    let fraction = fraction.clamp(0.0, 1.0);
    let raw = fraction * pool_size as f64;
    let budget = ((raw + ROUNDING_SLACK).round() as usize).min(pool_size);
    let base = (raw / cluster_count as f64 + ROUNDING_SLACK).floor() as usize;
    (base, budget)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Quotas {
    pub base: usize,
    pub budget: usize,
    pub per_cluster: Vec<usize>,
}

/// Per-cluster quotas: the base quota everywhere, plus one extra unit for each
/// of the `budget − |C|·base` largest clusters (ties by cluster index).
pub fn allocate_quotas(cluster_sizes: &[usize], fraction: f64) -> Quotas {
    let pool: usize = cluster_sizes.iter().sum();
    let (base, budget) = quota(pool, cluster_sizes.len(), fraction);
    let mut per_cluster = vec![base; cluster_sizes.len()];
    let remainder = budget.saturating_sub(base * cluster_sizes.len());
    let mut order: Vec<usize> = (0..cluster_sizes.len()).collect();
    order.sort_by(|&a, &b| cluster_sizes[b].cmp(&cluster_sizes[a]).then(a.cmp(&b)));
    for &c in order.iter().take(remainder) {
        per_cluster[c] += 1;
    }
    Quotas { base, budget, per_cluster }
}

fn by_score_desc(a: &GradientScore, b: &GradientScore) -> Ordering {
    b.g.total_cmp(&a.g).then(a.sample_id.cmp(&b.sample_id))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    /// Selected sample ids, ascending.
    pub selected: Vec<usize>,
    pub quotas: Quotas,
    /// How many samples each cluster contributed before refill.
    pub taken_per_cluster: Vec<usize>,
    /// Samples added from the global pool to use up leftover budget.
    pub refilled: usize,
    pub fraction: f64,
    pub pool_size: usize,
}

impl SelectionResult {
    pub fn budget(&self) -> usize {
        self.quotas.budget
    }

    pub fn empty(fraction: f64) -> Self {
        Self {
            selected: Vec::new(),
            quotas: Quotas { base: 0, budget: 0, per_cluster: Vec::new() },
            taken_per_cluster: Vec::new(),
            refilled: 0,
            fraction,
            pool_size: 0,
        }
    }
}

/// Selects from disjoint clusters of scored samples.
///
/// A cluster holding more samples than its quota contributes its top-quota samples
/// by descending score (ties: smaller id first); a cluster at or under quota
/// contributes all of its samples. Unused budget is then refilled from the
/// remaining samples of all clusters, again by descending score.
pub fn select(clusters: &[Vec<GradientScore>], fraction: f64) -> SelectionResult {
    let sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();
    let quotas = allocate_quotas(&sizes, fraction);
    let pool_size: usize = sizes.iter().sum();
    let mut chosen: HashSet<usize> = HashSet::new();
    let mut selected = Vec::with_capacity(quotas.budget);
    let mut taken_per_cluster = Vec::with_capacity(clusters.len());
    for (members, &q) in clusters.iter().zip(&quotas.per_cluster) {
        let mut ranked = members.clone();
        ranked.sort_by(by_score_desc);
        let take = q.min(ranked.len());
        for s in &ranked[..take] {
            chosen.insert(s.sample_id);
            selected.push(s.sample_id);
        }
        taken_per_cluster.push(take);
    }
    let leftover = quotas.budget.saturating_sub(selected.len());
    let mut refilled = 0;
    if leftover > 0 {
        let mut rest: Vec<GradientScore> = clusters
            .iter()
            .flatten()
            .filter(|s| !chosen.contains(&s.sample_id))
            .copied()
            .collect();
        rest.sort_by(by_score_desc);
        for s in rest.into_iter().take(leftover) {
            selected.push(s.sample_id);
            refilled += 1;
        }
    }
    selected.sort_unstable();
    SelectionResult { selected, quotas, taken_per_cluster, refilled, fraction, pool_size }
}

/// Groups scores by DBSCAN cluster; noise points form one extra pseudo-cluster
/// at the end. Returns the groups and their report ids (-1 for noise).
pub fn group_by_cluster(assignment: &ClusterAssignment, scores: &[GradientScore]) -> Result<(Vec<Vec<GradientScore>>, Vec<i64>)> {
    if scores.len() != assignment.len() {
        return Err(Error::Shape { expected: assignment.len(), actual: scores.len() });
    }
    let mut groups: Vec<Vec<GradientScore>> = vec![Vec::new(); assignment.n_clusters];
    let mut noise = Vec::new();
    for (s, label) in scores.iter().zip(&assignment.labels) {
        match label {
            Some(c) => groups[*c].push(*s),
            None => noise.push(*s),
        }
    }
    let mut ids: Vec<i64> = (0..assignment.n_clusters as i64).collect();
    if !noise.is_empty() {
        groups.push(noise);
        ids.push(-1);
    }
    Ok((groups, ids))
}

/// Original windows plus the selected feedback windows, labeled by verdict.
pub fn merge(original: &Dataset, pool: &[FeedbackSample], selection: &SelectionResult) -> Result<Dataset> {
    let mut windows: Vec<AccelWindow> = original.windows().to_vec();
    let mut keys: HashSet<_> = windows.iter().map(AccelWindow::key).collect();
    for &id in &selection.selected {
        let fb = pool.get(id).ok_or_else(|| {
            Error::InvalidArgument(format!("selected id {id} outside pool of {}", pool.len()))
        })?;
        let mut w = fb.window.clone();
        w.label = fb.verdict.label();
        w.source = Source::Feedback;
        if !keys.insert(w.key()) {
            return Err(Error::Merge(w.key().to_string()));
        }
        windows.push(w);
    }
    Dataset::new(windows, Provenance::Merged)
}

/// Merges every sample of `pool` (the unfiltered strategy).
pub fn merge_all(original: &Dataset, pool: &[FeedbackSample]) -> Result<Dataset> {
    let all = SelectionResult {
        selected: (0..pool.len()).collect(),
        quotas: Quotas { base: 0, budget: pool.len(), per_cluster: Vec::new() },
        taken_per_cluster: Vec::new(),
        refilled: 0,
        fraction: 1.0,
        pool_size: pool.len(),
    };
    merge(original, pool, &all)
}
