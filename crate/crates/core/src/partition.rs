//! DBSCAN over embeddings and majority-label cluster purity.
//!
//! Conventions: a point is core when at least `min_pts` points, itself
//! included, lie within `eps` (inclusive). Points are scanned in ascending
//! index order and clusters are expanded breadth-first, so a border point
//! reachable from several clusters joins the one discovered first.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::embedder::{euclidean, Embedder};
use crate::error::{Error, Result};
use crate::window::{AccelWindow, FeedbackSample};

pub const EPS_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbscanConfig {
    /// Neighborhood radius; `None` selects it with [`auto_eps`].
    pub eps: Option<f64>,
    pub min_pts: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self { eps: None, min_pts: 5 }
    }
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_pts < 2 {
            return Err(Error::config("min_pts must be at least 2"));
        }
        if let Some(eps) = self.eps {
            if !(eps > 0.0) {
                return Err(Error::config("eps must be positive"));
            }
        }
        Ok(())
    }
}

/// Cluster id per point (`None` = noise). Ids are dense from 0 in discovery order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<Option<usize>>,
    pub core: Vec<bool>,
    pub n_clusters: usize,
    /// Radius actually used.
    pub eps: f64,
}

impl ClusterAssignment {
    pub fn empty(eps: f64) -> Self {
        Self { labels: Vec::new(), core: Vec::new(), n_clusters: 0, eps }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Member indices of each cluster, ascending.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                out[*c].push(i);
            }
        }
        out
    }

    pub fn noise(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i].is_none()).collect()
    }

    /// Report encoding: noise is -1.
    pub fn encoded(&self) -> Vec<i64> {
        self.labels.iter().map(|l| l.map_or(-1, |c| c as i64)).collect()
    }
}

fn check_dims(points: &[Vec<f64>]) -> Result<()> {
    if let Some(first) = points.first() {
        if let Some(p) = points.iter().find(|p| p.len() != first.len()) {
            return Err(Error::Shape { expected: first.len(), actual: p.len() });
        }
    }
    Ok(())
}

/// Median distance from each point to its `(min_pts − 1)`-th nearest other point,
/// floored at [`EPS_FLOOR`].
pub fn auto_eps(points: &[Vec<f64>], min_pts: usize) -> Result<f64> {
    if min_pts < 2 {
        return Err(Error::config("min_pts must be at least 2"));
    }
    if points.len() < min_pts {
        return Err(Error::config(format!(
            "auto eps needs at least min_pts = {min_pts} points, got {}",
            points.len()
        )));
    }
    check_dims(points)?;
    let k = min_pts - 1;
    let mut kdist: Vec<f64> = (0..points.len())
        .map(|i| {
            let mut d: Vec<f64> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| euclidean(&points[i], &points[j]))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect();
    kdist.sort_by(f64::total_cmp);
    let n = kdist.len();
    let median = if n % 2 == 1 {
        kdist[n / 2]
    } else {
        0.5 * (kdist[n / 2 - 1] + kdist[n / 2])
    };
    Ok(median.max(EPS_FLOOR))
}

pub fn dbscan(points: &[Vec<f64>], config: &DbscanConfig) -> Result<ClusterAssignment> {
    config.validate()?;
    check_dims(points)?;
    if points.is_empty() {
        return Ok(ClusterAssignment::empty(config.eps.unwrap_or(EPS_FLOOR)));
    }
    let eps = match config.eps {
        Some(e) => e,
        // Fewer points than min_pts can never form a core point.
        None if points.len() < config.min_pts => EPS_FLOOR,
        None => auto_eps(points, config.min_pts)?,
    };
    Ok(dbscan_with_eps(points, eps, config.min_pts))
}

fn dbscan_with_eps(points: &[Vec<f64>], eps: f64, min_pts: usize) -> ClusterAssignment {
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| euclidean(&points[i], &points[j]) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut n_clusters = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if labels[start].is_some() || !core[start] {
            continue;
        }
        let id = n_clusters;
        n_clusters += 1;
        labels[start] = Some(id);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(id);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    ClusterAssignment { labels, core, n_clusters, eps }
}

/// Feature extraction → embedding → DBSCAN over a feedback pool.
pub fn cluster_feedback(
    embedder: &Embedder,
    feedback: &[FeedbackSample],
    config: &DbscanConfig,
) -> Result<ClusterAssignment> {
    let windows: Vec<AccelWindow> = feedback.iter().map(|f| f.window.clone()).collect();
    cluster_windows(embedder, &windows, config)
}

pub fn cluster_windows(embedder: &Embedder, windows: &[AccelWindow], config: &DbscanConfig) -> Result<ClusterAssignment> {
    config.validate()?;
    if windows.is_empty() {
        return Ok(ClusterAssignment::empty(config.eps.unwrap_or(EPS_FLOOR)));
    }
    let points: Vec<Vec<f64>> = embedder.embed_windows(windows)?.into_iter().map(|e| e.0).collect();
    let assignment = dbscan(&points, config)?;
    log::info!(
        "dbscan: {} points, eps {:.6}, min_pts {}, {} clusters, {} noise",
        points.len(),
        assignment.eps,
        config.min_pts,
        assignment.n_clusters,
        assignment.noise().len()
    );
    Ok(assignment)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ActivityPurity {
    /// Non-noise points carrying this label.
    pub total: usize,
    /// Of those, the ones sitting in a cluster whose majority label is this one.
    pub correct: usize,
}

impl ActivityPurity {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PurityReport {
    pub accuracy: f64,
    /// Set when every point was noise and accuracy is undefined (reported as 0).
    pub all_noise: bool,
    pub per_activity: BTreeMap<String, ActivityPurity>,
    pub clustered: usize,
    pub noise: usize,
}

/// Accuracy obtained by assigning every cluster its majority label.
/// Majority ties go to the lexicographically smallest label.
pub fn cluster_purity<S: AsRef<str>>(assignment: &ClusterAssignment, labels: &[S]) -> Result<PurityReport> {
    if labels.len() != assignment.len() {
        return Err(Error::Shape { expected: assignment.len(), actual: labels.len() });
    }
    let mut per_activity: BTreeMap<String, ActivityPurity> = BTreeMap::new();
    let mut majority_total = 0;
    let clusters = assignment.clusters();
    for members in &clusters {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for &i in members {
            *counts.entry(labels[i].as_ref()).or_default() += 1;
        }
        // BTreeMap iterates in label order; strict `>` keeps the first (smallest) on ties.
        let mut best: Option<(&str, usize)> = None;
        for (&label, &c) in &counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((label, c));
            }
        }
        let (winner, win_count) = best.expect("clusters are non-empty");
        majority_total += win_count;
        for (&label, &c) in &counts {
            let entry = per_activity.entry(label.to_string()).or_default();
            entry.total += c;
            if label == winner {
                entry.correct += c;
            }
        }
    }
    let clustered: usize = clusters.iter().map(Vec::len).sum();
    let noise = assignment.len() - clustered;
    if clustered == 0 {
        log::warn!("cluster purity undefined: all {} points are noise", assignment.len());
        return Ok(PurityReport { accuracy: 0.0, all_noise: true, per_activity, clustered, noise });
    }
    Ok(PurityReport {
        accuracy: majority_total as f64 / clustered as f64,
        all_noise: false,
        per_activity,
        clustered,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn one_dimensional_example() {
        let p = pts(&[0.0, 0.1, 0.2, 5.0, 5.1, 5.2, 100.0]);
        let a = dbscan(&p, &DbscanConfig { eps: Some(0.15), min_pts: 2 }).unwrap();
        assert_eq!(a.labels, vec![Some(0), Some(0), Some(0), Some(1), Some(1), Some(1), None]);
        assert_eq!(a.encoded()[6], -1);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let p = vec![vec![1.0, 2.0]; 6];
        let a = dbscan(&p, &DbscanConfig { eps: None, min_pts: 5 }).unwrap();
        assert_eq!(a.n_clusters, 1);
        assert!(a.noise().is_empty());
        assert_eq!(a.eps, EPS_FLOOR);
    }

    #[test]
    fn tiny_eps_gives_all_noise() {
        let p = pts(&[0.0, 1.0, 2.5, 4.0]);
        let a = dbscan(&p, &DbscanConfig { eps: Some(0.5), min_pts: 2 }).unwrap();
        assert_eq!(a.n_clusters, 0);
        assert_eq!(a.noise().len(), 4);
    }

    #[test]
    fn dimension_mismatch() {
        let p = vec![vec![0.0], vec![1.0, 2.0]];
        assert!(matches!(dbscan(&p, &DbscanConfig::default()), Err(Error::Shape { .. })));
    }

    #[test]
    fn auto_eps_requires_enough_points() {
        assert!(matches!(auto_eps(&pts(&[0.0, 1.0]), 5), Err(Error::InvalidConfig(_))));
        // k = 1: nearest-neighbor distances 1, 1, 2 (sorted 1,1,2) → median 1
        assert_eq!(auto_eps(&pts(&[0.0, 1.0, 3.0]), 2).unwrap(), 1.0);
    }

    #[test]
    fn purity_examples() {
        let a = ClusterAssignment {
            labels: vec![Some(0), Some(0), Some(0), None],
            core: vec![true; 4],
            n_clusters: 1,
            eps: 1.0,
        };
        let r = cluster_purity(&a, &["A", "A", "B", "B"]).unwrap();
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_activity["A"], ActivityPurity { total: 2, correct: 2 });
        assert_eq!(r.per_activity["B"], ActivityPurity { total: 1, correct: 0 });

        let pure = ClusterAssignment {
            labels: vec![Some(0), Some(1), Some(0), Some(1)],
            core: vec![true; 4],
            n_clusters: 2,
            eps: 1.0,
        };
        assert_eq!(cluster_purity(&pure, &["A", "B", "A", "B"]).unwrap().accuracy, 1.0);

        let noise = ClusterAssignment { labels: vec![None, None], core: vec![false; 2], n_clusters: 0, eps: 1.0 };
        let r = cluster_purity(&noise, &["A", "B"]).unwrap();
        assert!(r.all_noise && r.accuracy == 0.0);
    }
}
