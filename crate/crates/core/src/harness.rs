//! Metrics, splits and the personalization experiments: multi-round naive vs
//! selective retraining, single-shot strategy comparison, SNN-input ablation
//! and the feedback-fraction sweep.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::detector::{train_fsl, train_tfs, train_tl, DetectorModel, DetectorTrainConfig, FallAlarm};
use crate::embedder::{Embedder, SnnTrainConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureVariant, Featurizer};
use crate::partition::{cluster_feedback, cluster_purity, cluster_windows, ClusterAssignment, DbscanConfig, PurityReport};
use crate::seeds::{self, streams};
use crate::selector::{group_by_cluster, merge, merge_all, score_windows, select, GradientScore, SelectionResult};
use crate::simfeed::{generate_evaluation, generate_population, generate_stream_with, simulate_round, Catalog, PopulationSpec, StreamSpec};
use crate::window::{AccelWindow, Dataset, FeedbackSample, Label, Provenance, Verdict, WindowKey, WINDOW_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "naive-all")]
    NaiveAll,
    #[serde(rename = "selective")]
    Selective,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::NaiveAll => "naive-all",
            Strategy::Selective => "selective",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "naive-all" | "naive" => Some(Strategy::NaiveAll),
            "selective" => Some(Strategy::Selective),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RetrainMode {
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "TFS", alias = "tfs")]
    Tfs,
    #[serde(rename = "TL", alias = "tl")]
    Tl,
    #[serde(rename = "FSL", alias = "fsl")]
    Fsl,
}

impl RetrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrainMode::Base => "base",
            RetrainMode::Tfs => "TFS",
            RetrainMode::Tl => "TL",
            RetrainMode::Fsl => "FSL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Some(RetrainMode::Base),
            "tfs" => Some(RetrainMode::Tfs),
            "tl" => Some(RetrainMode::Tl),
            "fsl" => Some(RetrainMode::Fsl),
            _ => None,
        }
    }
}

/// Confusion counts with Fall as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// A precision or recall denominator was zero and the value was set to 0.
    pub degenerate: bool,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let degenerate = tp + fp == 0 || tp + fn_ == 0;
        Self { tp, fp, fn_, tn, precision, recall, f1, degenerate }
    }
}

pub fn metrics(predictions: &[bool], labels: &[Label]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape { expected: labels.len(), actual: predictions.len() });
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one prediction".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, Label::Fall) => tp += 1,
            (true, Label::Adl) => fp += 1,
            (false, Label::Fall) => fn_ += 1,
            (false, Label::Adl) => tn += 1,
        }
    }
    let m = Metrics::from_counts(tp, fp, fn_, tn);
    if m.degenerate {
        log::warn!("degenerate metrics: tp {tp}, fp {fp}, fn {fn_}; undefined ratios reported as 0");
    }
    Ok(m)
}

pub fn evaluate(model: &impl FallAlarm, test: &[AccelWindow]) -> Result<Metrics> {
    let labels: Vec<Label> = test.iter().map(|w| w.label).collect();
    metrics(&model.alerts(test)?, &labels)
}

/// Stratified by verdict: each class contributes `round(ratio·n)` samples to the
/// retrain side, keeping at least one on each side when it has two or more.
pub fn split_80_20(pool: &[FeedbackSample], ratio: f64, seed: u64) -> Result<(Vec<FeedbackSample>, Vec<FeedbackSample>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut rng = seeds::rng(seed, streams::SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for verdict in [Verdict::Tp, Verdict::Fp] {
        let mut idx: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].verdict == verdict).collect();
        let n = idx.len();
        if n == 0 {
            continue;
        }
        idx.shuffle(&mut rng);
        let n_train = if n == 1 {
            log::warn!("only one {} sample: it goes to the retrain split", verdict.as_str());
            1
        } else {
            ((ratio * n as f64).round() as usize).clamp(1, n - 1)
        };
        let (a, b) = idx.split_at(n_train);
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_unstable();
        b.sort_unstable();
        train.extend(a.into_iter().map(|i| pool[i].clone()));
        test.extend(b.into_iter().map(|i| pool[i].clone()));
    }
    if !pool.iter().any(|f| f.verdict == Verdict::Tp) {
        log::warn!("feedback pool holds no true positives");
    }
    Ok((train, test))
}

/// Within-subject split: every (subject, activity) group of `dataset` gives
/// `round(ratio·n)` randomly chosen windows to the first part.
pub fn split_within_subject(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, w) in dataset.windows().iter().enumerate() {
        let activity = w.activity.clone().unwrap_or_else(|| w.label.as_str().to_string());
        groups.entry((w.subject_id.clone(), activity)).or_default().push(i);
    }
    let mut rng = seeds::rng(seed, streams::SPLIT);
    let mut in_train = vec![false; dataset.len()];
    for idx in groups.values_mut() {
        idx.shuffle(&mut rng);
        let n = idx.len();
        let k = if n < 2 { n } else { ((ratio * n as f64).round() as usize).clamp(1, n - 1) };
        for &i in &idx[..k] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (w, t) in dataset.windows().iter().zip(in_train) {
        if t {
            train.push(w.clone());
        } else {
            test.push(w.clone());
        }
    }
    Ok((Dataset::new(train, Provenance::Original)?, Dataset::new(test, Provenance::Original)?))
}

/// The synthetic world: recorded population, and a wearer whose personal style
/// differs from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Benchmark {
    pub catalog: Catalog,
    pub population: PopulationSpec,
    pub deployment: StreamSpec,
    pub evaluation_windows: usize,
    pub evaluation_fall_probability: f64,
    pub base_split: f64,
}

impl Default for Benchmark {
    fn default() -> Self {
        let deployment = StreamSpec {
            subject_id: "user".into(),
            activity_mix: [
                ("walking", 0.25),
                ("standing", 0.2),
                ("sitting_down", 0.1),
                ("lying_down", 0.15),
                ("waving_hands", 0.1),
                ("drinking_water", 0.1),
                ("wearing_jacket", 0.05),
                ("washing_hands", 0.05),
            ]
            .into_iter()
            .map(|(a, p)| (a.to_string(), p))
            .collect(),
            fall_burst: Some(crate::simfeed::BurstParams { amplitude: (6.0, 11.0), duration: (2.0, 4.0) }),
            fall_activities: vec!["fall_backward".into()],
            intensity: [("lying_down", 3.5), ("waving_hands", 1.3)]
                .into_iter()
                .map(|(a, k)| (a.to_string(), k))
                .collect(),
            ..StreamSpec::default()
        };
        Self {
            catalog: Catalog::standard(),
            population: PopulationSpec { subjects: 30, windows_per_fall: 10, intensity_jitter: 0.6, ..PopulationSpec::default() },
            deployment,
            evaluation_windows: 500,
            evaluation_fall_probability: 0.5,
            base_split: 0.8,
        }
    }
}

impl Benchmark {
    pub fn validate(&self) -> Result<()> {
        self.catalog.validate()?;
        self.deployment.validate(&self.catalog)?;
        if !(self.base_split > 0.0 && self.base_split < 1.0) {
            return Err(Error::config("base split must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.evaluation_fall_probability) {
            return Err(Error::config("evaluation fall probability must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Everything an experiment needs for one seed.
#[derive(Debug, Clone)]
pub struct World {
    pub seed: u64,
    pub base_train: Dataset,
    pub base_test: Dataset,
    pub deployment: Vec<Vec<AccelWindow>>,
    /// Held-out wearer windows, never deployed on.
    pub evaluation: Vec<AccelWindow>,
}

impl World {
    /// The fixed test set: base test split plus held-out wearer windows.
    pub fn test_set(&self) -> Vec<AccelWindow> {
        let mut t = self.base_test.windows().to_vec();
        t.extend(self.evaluation.iter().cloned());
        t
    }
}

/// Builds the world for `seed`; the seed replaces those of the population and
/// deployment specs.
pub fn build_world(bench: &Benchmark, seed: u64) -> Result<World> {
    bench.validate()?;
    let population = PopulationSpec { seed, ..bench.population.clone() };
    let dataset = generate_population(&population, &bench.catalog)?;
    let (base_train, base_test) = split_within_subject(&dataset, bench.base_split, seed)?;
    let stream = StreamSpec { seed, ..bench.deployment.clone() };
    let deployment = generate_stream_with(&stream, &bench.catalog)?;
    let evaluation = generate_evaluation(&stream, &bench.catalog, bench.evaluation_windows, bench.evaluation_fall_probability)?;
    Ok(World { seed, base_train, base_test, deployment, evaluation })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolScope {
    /// Select from all feedback archived so far.
    #[default]
    Cumulative,
    /// Select from the current round's feedback only.
    Round,
}

/// Which model raises alerts while feedback is collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Deployment {
    /// `M_O` runs for the whole collection period; retrained models are only evaluated.
    #[default]
    Base,
    /// Each round deploys the model retrained at the end of the previous round.
    Current,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub rounds: usize,
    pub fraction: f64,
    pub split_ratio: f64,
    pub seeds: Vec<u64>,
    pub mode: RetrainMode,
    pub strategy: Strategy,
    pub pool_scope: PoolScope,
    pub deployment: Deployment,
    pub snn_variant: FeatureVariant,
    pub snn: SnnTrainConfig,
    pub dbscan: DbscanConfig,
    pub detector: DetectorTrainConfig,
    pub fsl_shots: usize,
    /// TL fine-tunes on the added feedback alone instead of the merged dataset.
    pub tl_feedback_only: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: Benchmark::default(),
            rounds: 6,
            fraction: crate::selector::DEFAULT_FRACTION,
            split_ratio: 0.8,
            seeds: vec![1, 2, 3],
            mode: RetrainMode::Tfs,
            strategy: Strategy::Selective,
            pool_scope: PoolScope::Cumulative,
            deployment: Deployment::Base,
            snn_variant: FeatureVariant::SimilarityMetrics,
            snn: SnnTrainConfig::default(),
            dbscan: DbscanConfig::default(),
            detector: DetectorTrainConfig::default(),
            fsl_shots: 10,
            tl_feedback_only: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.benchmark.validate()?;
        if self.rounds == 0 {
            return Err(Error::config("rounds must be at least 1"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::config("split ratio must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::config("fraction must lie in [0, 1]"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        self.snn.validate()?;
        self.dbscan.validate()?;
        self.detector.validate()?;
        Ok(())
    }

    /// Parses a TOML document laid over the default config: tables merge key
    /// by key, so a partial `[benchmark.deployment]` keeps the default wearer.
    pub fn from_toml(text: &str) -> Result<Self> {
        let err = |m: &str| Error::config(format!("experiment config: {m}"));
        let user: toml::Table = toml::from_str(text).map_err(|e| err(e.message()))?;
        let mut merged = toml::Table::try_from(Self::default()).map_err(|e| err(&e.to_string()))?;
        merge_tables(&mut merged, user);
        merged.try_into().map_err(|e: toml::de::Error| err(e.message()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("experiment config: {e}")))
    }

    fn detector_config(&self, seed: u64) -> DetectorTrainConfig {
        DetectorTrainConfig { seed, ..self.detector.clone() }
    }

    fn snn_config(&self, seed: u64) -> SnnTrainConfig {
        SnnTrainConfig { seed, ..self.snn.clone() }
    }

    /// `key: value` lines identifying the run, echoed into report headers.
    pub fn header(&self) -> Vec<(String, String)> {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        vec![
            ("seeds".into(), seeds.join(",")),
            ("rounds".into(), self.rounds.to_string()),
            ("fraction".into(), self.fraction.to_string()),
            ("split_ratio".into(), self.split_ratio.to_string()),
            ("mode".into(), self.mode.as_str().into()),
            ("strategy".into(), self.strategy.as_str().into()),
            ("snn_variant".into(), self.snn_variant.as_str().into()),
        ]
    }
}

// Maps keyed by activity are data, not config structure: they are replaced whole.
const REPLACED_TABLES: [&str; 3] = ["activity_mix", "intensity", "posture"];

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !REPLACED_TABLES.contains(&k.as_str()) => {
                merge_tables(b, o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// A world with its base model `M_O`.
#[derive(Debug, Clone)]
pub struct Context {
    pub world: World,
    pub base: DetectorModel,
}

pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Context> {
    let world = build_world(&config.benchmark, seed)?;
    let base = train_tfs(&world.base_train, &config.detector_config(seed))?;
    Ok(Context { world, base })
}

pub fn train_embedder(config: &ExperimentConfig, world: &World, variant: FeatureVariant) -> Result<Embedder> {
    let (embedder, losses) = Embedder::train(
        world.base_train.windows(),
        Featurizer::new(variant, WINDOW_LEN),
        &config.snn_config(world.seed),
    )?;
    if let Some(last) = losses.last() {
        log::info!("snn ({}) final loss {last:.5}", variant.as_str());
    }
    Ok(embedder)
}

/// Gradient scores, clusters and selection over one feedback pool.
#[derive(Debug, Clone)]
pub struct SelectionTrace {
    pub assignment: ClusterAssignment,
    pub scores: Vec<GradientScore>,
    pub selection: SelectionResult,
}

impl SelectionTrace {
    /// CSV `sample_id,cluster_id,gradient,selected` (noise as -1).
    pub fn to_csv(&self) -> String {
        let chosen: HashSet<usize> = self.selection.selected.iter().copied().collect();
        let mut out = String::from("sample_id,cluster_id,gradient,selected\n");
        for (s, c) in self.scores.iter().zip(self.assignment.encoded()) {
            let _ = writeln!(out, "{},{},{},{}", s.sample_id, c, s.g, chosen.contains(&s.sample_id));
        }
        out
    }

    pub fn summary(&self) -> String {
        let q = &self.selection.quotas;
        let quotas: Vec<String> = q.per_cluster.iter().map(usize::to_string).collect();
        format!(
            "pool {}, fraction {}, budget {}, clusters {}, noise {}, base quota {}, per-cluster quotas [{}], refilled {}, eps {}",
            self.selection.pool_size,
            self.selection.fraction,
            q.budget,
            self.assignment.n_clusters,
            self.assignment.noise().len(),
            q.base,
            quotas.join(","),
            self.selection.refilled,
            self.assignment.eps
        )
    }
}

pub fn select_feedback(
    embedder: &Embedder,
    pool: &[FeedbackSample],
    dbscan: &DbscanConfig,
    fraction: f64,
) -> Result<SelectionTrace> {
    let scores = score_windows(pool.iter().map(|f| &f.window))?;
    let assignment = cluster_feedback(embedder, pool, dbscan)?;
    let (groups, _) = group_by_cluster(&assignment, &scores)?;
    let selection = select(&groups, fraction);
    Ok(SelectionTrace { assignment, scores, selection })
}

fn retrain(
    config: &ExperimentConfig,
    ctx: &Context,
    mode: RetrainMode,
    merged: &Dataset,
    added: &[FeedbackSample],
) -> Result<DetectorModel> {
    let cfg = config.detector_config(ctx.world.seed);
    match mode {
        RetrainMode::Base => Ok(ctx.base.clone()),
        RetrainMode::Tfs => train_tfs(merged, &cfg),
        RetrainMode::Tl if config.tl_feedback_only => {
            train_tl(&ctx.base, &merge_all(&Dataset::empty(Provenance::Selected), added)?, &cfg)
        }
        RetrainMode::Tl => train_tl(&ctx.base, merged, &cfg),
        RetrainMode::Fsl => train_fsl(&ctx.base, added, &ctx.world.base_train, &cfg, config.fsl_shots),
    }
}

fn assert_disjoint(train: &Dataset, test: &[AccelWindow]) -> Result<()> {
    let keys: HashSet<WindowKey> = train.windows().iter().map(AccelWindow::key).collect();
    if let Some(w) = test.iter().find(|w| keys.contains(&w.key())) {
        return Err(Error::State(format!("test window {} appears in training data", w.key())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub seed: u64,
    /// 0 is the base model before any feedback.
    pub round: usize,
    pub strategy: Strategy,
    pub mode: RetrainMode,
    pub metrics: Metrics,
    /// Alerts raised this round.
    pub feedback: usize,
    pub false_alarms: usize,
    /// Retrain-side pool the selection ran on.
    pub pool: usize,
    /// Feedback windows merged into the training set.
    pub added: usize,
    pub clusters: Option<usize>,
}

/// Multi-round personalization for one seed: collect a round of feedback,
/// split it, build the retrain pool, merge, retrain, evaluate on the fixed test set.
pub fn run_rounds_with(
    config: &ExperimentConfig,
    ctx: &Context,
    embedder: Option<&Embedder>,
) -> Result<Vec<RoundRecord>> {
    let test = ctx.world.test_set();
    let seed = ctx.world.seed;
    let mut records = vec![RoundRecord {
        seed,
        round: 0,
        strategy: config.strategy,
        mode: RetrainMode::Base,
        metrics: evaluate(&ctx.base, &test)?,
        feedback: 0,
        false_alarms: 0,
        pool: 0,
        added: 0,
        clusters: None,
    }];
    let mut model = ctx.base.clone();
    let mut archive: Vec<FeedbackSample> = Vec::new();
    for (r, windows) in ctx.world.deployment.iter().enumerate().take(config.rounds) {
        let round = r + 1;
        let deployed = match config.deployment {
            Deployment::Base => &ctx.base,
            Deployment::Current => &model,
        };
        let feedback = simulate_round(deployed, windows, round as u32)?;
        let false_alarms = feedback.iter().filter(|f| f.verdict == Verdict::Fp).count();
        let (train_part, _) = if feedback.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            split_80_20(&feedback, config.split_ratio, seed.wrapping_mul(1000).wrapping_add(round as u64))?
        };
        let pool: Vec<FeedbackSample> = match config.pool_scope {
            PoolScope::Cumulative => {
                archive.extend(train_part);
                archive.clone()
            }
            PoolScope::Round => train_part,
        };
        let (merged, added, clusters) = match config.strategy {
            Strategy::NaiveAll => (merge_all(&ctx.world.base_train, &pool)?, pool.clone(), None),
            Strategy::Selective => {
                let embedder = embedder.ok_or_else(|| Error::State("selective strategy needs an embedder".into()))?;
                let trace = select_feedback(embedder, &pool, &config.dbscan, config.fraction)?;
                let added: Vec<FeedbackSample> = trace.selection.selected.iter().map(|&i| pool[i].clone()).collect();
                (merge(&ctx.world.base_train, &pool, &trace.selection)?, added, Some(trace.assignment.n_clusters))
            }
        };
        assert_disjoint(&merged, &test)?;
        if !added.is_empty() {
            model = retrain(config, ctx, config.mode, &merged, &added)?;
        }
        let m = evaluate(&model, &test)?;
        log::info!(
            "seed {seed} round {round} {}: alerts {} (fp {false_alarms}), added {}, P {:.3} R {:.3} F1 {:.3}",
            config.strategy.as_str(),
            feedback.len(),
            added.len(),
            m.precision,
            m.recall,
            m.f1
        );
        records.push(RoundRecord {
            seed,
            round,
            strategy: config.strategy,
            mode: config.mode,
            metrics: m,
            feedback: feedback.len(),
            false_alarms,
            pool: pool.len(),
            added: added.len(),
            clusters,
        });
    }
    Ok(records)
}

fn per_seed<T>(config: &ExperimentConfig, f: impl Fn(u64) -> Result<T>) -> Result<Vec<T>> {
    config.validate()?;
    config.seeds.iter().map(|&s| f(s)).collect()
}

/// Runs the configured strategy for every seed.
pub fn run_rounds(config: &ExperimentConfig) -> Result<Vec<RoundRecord>> {
    let runs = per_seed(config, |seed| {
        let ctx = prepare(config, seed)?;
        let embedder = match config.strategy {
            Strategy::Selective => Some(train_embedder(config, &ctx.world, config.snn_variant)?),
            Strategy::NaiveAll => None,
        };
        run_rounds_with(config, &ctx, embedder.as_ref())
    })?;
    Ok(runs.into_iter().flatten().collect())
}

/// Mean precision, recall and F1 over seeds, per round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub runs: usize,
}

pub fn mean_metrics<'a>(items: impl IntoIterator<Item = &'a Metrics>) -> MeanMetrics {
    let (mut p, mut r, mut f, mut n) = (0.0, 0.0, 0.0, 0);
    for m in items {
        p += m.precision;
        r += m.recall;
        f += m.f1;
        n += 1;
    }
    let d = n.max(1) as f64;
    MeanMetrics { precision: p / d, recall: r / d, f1: f / d, runs: n }
}

pub fn mean_by_round(records: &[RoundRecord]) -> BTreeMap<usize, MeanMetrics> {
    let mut by: BTreeMap<usize, Vec<&Metrics>> = BTreeMap::new();
    for r in records {
        by.entry(r.round).or_default().push(&r.metrics);
    }
    by.into_iter().map(|(k, v)| (k, mean_metrics(v))).collect()
}

/// One-shot personalization: `M_O` collects feedback over every deployment
/// round, the archive is split, the retrain side is selected at `fraction`
/// and merged. The test set is the fixed test set plus the feedback test split.
pub struct SingleShot {
    /// Retrain side of the split; selection ids index into it.
    pub pool: Vec<FeedbackSample>,
    pub merged: Dataset,
    pub added: Vec<FeedbackSample>,
    pub test: Vec<AccelWindow>,
    pub trace: Option<SelectionTrace>,
}

pub fn single_shot(config: &ExperimentConfig, ctx: &Context, embedder: Option<&Embedder>, fraction: f64) -> Result<SingleShot> {
    let rounds = config.rounds.min(ctx.world.deployment.len());
    let mut archive = Vec::new();
    for (r, windows) in ctx.world.deployment[..rounds].iter().enumerate() {
        archive.extend(simulate_round(&ctx.base, windows, r as u32 + 1)?);
    }
    let (train_part, test_part) = if archive.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        split_80_20(&archive, config.split_ratio, ctx.world.seed)?
    };
    let mut test = ctx.world.test_set();
    test.extend(test_part.into_iter().map(|f| f.window));
    let (merged, added, trace) = match (config.strategy, embedder) {
        (Strategy::NaiveAll, _) => (merge_all(&ctx.world.base_train, &train_part)?, train_part.clone(), None),
        (Strategy::Selective, Some(e)) => {
            let trace = select_feedback(e, &train_part, &config.dbscan, fraction)?;
            let added = trace.selection.selected.iter().map(|&i| train_part[i].clone()).collect();
            (merge(&ctx.world.base_train, &train_part, &trace.selection)?, added, Some(trace))
        }
        (Strategy::Selective, None) => return Err(Error::State("selective strategy needs an embedder".into())),
    };
    assert_disjoint(&merged, &test)?;
    Ok(SingleShot { pool: train_part, merged, added, test, trace })
}

fn shot_metrics(config: &ExperimentConfig, ctx: &Context, shot: &SingleShot, mode: RetrainMode) -> Result<Metrics> {
    let model = if shot.added.is_empty() {
        ctx.base.clone()
    } else {
        retrain(config, ctx, mode, &shot.merged, &shot.added)?
    };
    evaluate(&model, &shot.test)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub seed: u64,
    /// Retrain mode, SNN input variant or fraction, depending on the table.
    pub key: String,
    pub metrics: Metrics,
}

/// Base model against TFS, TL and FSL retraining on the same merged data.
pub fn compare_strategies(config: &ExperimentConfig) -> Result<Vec<TableRow>> {
    let runs = per_seed(config, |seed| {
        let ctx = prepare(config, seed)?;
        let embedder = match config.strategy {
            Strategy::Selective => Some(train_embedder(config, &ctx.world, config.snn_variant)?),
            Strategy::NaiveAll => None,
        };
        let shot = single_shot(config, &ctx, embedder.as_ref(), config.fraction)?;
        [RetrainMode::Base, RetrainMode::Tfs, RetrainMode::Tl, RetrainMode::Fsl]
            .into_iter()
            .map(|mode| {
                Ok(TableRow { seed, key: mode.as_str().into(), metrics: shot_metrics(config, &ctx, &shot, mode)? })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(runs.into_iter().flatten().collect())
}

pub const ABLATION_VARIANTS: [FeatureVariant; 3] =
    [FeatureVariant::SimilarityMetrics, FeatureVariant::BasicStats, FeatureVariant::RawSeries];

/// Selective one-shot retraining with each SNN input variant.
pub fn ablation_table3(config: &ExperimentConfig) -> Result<Vec<TableRow>> {
    ablation(config, &ABLATION_VARIANTS)
}

pub fn ablation(config: &ExperimentConfig, variants: &[FeatureVariant]) -> Result<Vec<TableRow>> {
    let runs = per_seed(config, |seed| {
        let ctx = prepare(config, seed)?;
        variants
            .iter()
            .map(|&variant| {
                let embedder = train_embedder(config, &ctx.world, variant)?;
                let cfg = ExperimentConfig { strategy: Strategy::Selective, ..config.clone() };
                let shot = single_shot(&cfg, &ctx, Some(&embedder), config.fraction)?;
                Ok(TableRow { seed, key: variant.as_str().into(), metrics: shot_metrics(config, &ctx, &shot, config.mode)? })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(runs.into_iter().flatten().collect())
}

pub const SWEEP_FRACTIONS: [f64; 5] = [0.05, 0.10, 0.15, 0.20, 0.25];

/// Selective one-shot retraining at each fraction, in ascending order.
pub fn sweep_fraction(config: &ExperimentConfig, fractions: &[f64]) -> Result<Vec<TableRow>> {
    let mut fractions = fractions.to_vec();
    if fractions.is_empty() || fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::config("fractions must be non-empty and lie in [0, 1]"));
    }
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let runs = per_seed(config, |seed| {
        let ctx = prepare(config, seed)?;
        let embedder = train_embedder(config, &ctx.world, config.snn_variant)?;
        let cfg = ExperimentConfig { strategy: Strategy::Selective, ..config.clone() };
        fractions
            .iter()
            .map(|&f| {
                let shot = single_shot(&cfg, &ctx, Some(&embedder), f)?;
                Ok(TableRow { seed, key: f.to_string(), metrics: shot_metrics(config, &ctx, &shot, config.mode)? })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    // Rows grouped by fraction, seeds inside.
    let mut rows: Vec<TableRow> = runs.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        let fa: f64 = a.key.parse().unwrap_or(0.0);
        let fb: f64 = b.key.parse().unwrap_or(0.0);
        fa.total_cmp(&fb).then(a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

/// Clusters the base test windows with an embedder trained on the base
/// training split and scores majority-activity purity.
pub fn purity_benchmark(config: &ExperimentConfig, seed: u64, variant: FeatureVariant) -> Result<PurityReport> {
    let world = build_world(&config.benchmark, seed)?;
    let embedder = train_embedder(config, &world, variant)?;
    let windows = world.base_test.windows();
    let assignment = cluster_windows(&embedder, windows, &config.dbscan)?;
    let labels: Vec<String> = windows
        .iter()
        .map(|w| w.activity.clone().unwrap_or_else(|| w.label.as_str().into()))
        .collect();
    cluster_purity(&assignment, &labels)
}

fn header_block(header: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in header {
        let _ = writeln!(out, "# {k}: {v}");
    }
    out
}

pub fn rounds_csv(records: &[RoundRecord], header: &[(String, String)]) -> String {
    let mut out = header_block(header);
    out.push_str("seed,round,strategy,mode,tp,fp,fn,tn,precision,recall,f1,degenerate,alerts,false_alarms,pool,added,clusters\n");
    for r in records {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{},{},{},{},{},{}",
            r.seed,
            r.round,
            r.strategy.as_str(),
            r.mode.as_str(),
            m.tp,
            m.fp,
            m.fn_,
            m.tn,
            m.precision,
            m.recall,
            m.f1,
            m.degenerate,
            r.feedback,
            r.false_alarms,
            r.pool,
            r.added,
            r.clusters.map(|c| c.to_string()).unwrap_or_default()
        );
    }
    out
}

pub fn table_csv(key_name: &str, rows: &[TableRow], header: &[(String, String)]) -> String {
    let mut out = header_block(header);
    let _ = writeln!(out, "seed,{key_name},tp,fp,fn,tn,precision,recall,f1,degenerate");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{}",
            r.seed, r.key, m.tp, m.fp, m.fn_, m.tn, m.precision, m.recall, m.f1, m.degenerate
        );
    }
    out
}

/// Mean metrics per key, in first-appearance order.
pub fn mean_by_key(rows: &[TableRow]) -> Vec<(String, MeanMetrics)> {
    let mut order: Vec<String> = Vec::new();
    let mut by: BTreeMap<String, Vec<&Metrics>> = BTreeMap::new();
    for r in rows {
        if !by.contains_key(&r.key) {
            order.push(r.key.clone());
        }
        by.entry(r.key.clone()).or_default().push(&r.metrics);
    }
    order
        .into_iter()
        .map(|k| {
            let m = mean_metrics(by[&k].iter().copied());
            (k, m)
        })
        .collect()
}

pub fn summary_text(title: &str, means: &[(String, MeanMetrics)], header: &[(String, String)]) -> String {
    let mut out = format!("{title}\n");
    out.push_str(&header_block(header));
    let _ = writeln!(out, "{:<20} {:>9} {:>9} {:>9} {:>5}", "", "precision", "recall", "f1", "runs");
    for (k, m) in means {
        let _ = writeln!(out, "{:<20} {:>9.4} {:>9.4} {:>9.4} {:>5}", k, m.precision, m.recall, m.f1, m.runs);
    }
    out
}

pub fn rounds_summary(records: &[RoundRecord], header: &[(String, String)]) -> String {
    let means: Vec<(String, MeanMetrics)> =
        mean_by_round(records).into_iter().map(|(r, m)| (format!("round {r}"), m)).collect();
    summary_text("per-round means over seeds", &means, header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::window::test_util::constant_window;

    #[test]
    fn counting_example() {
        let mut preds = vec![true; 9];
        preds.push(true);
        preds.push(false);
        let mut labels = vec![Label::Fall; 9];
        labels.push(Label::Adl);
        labels.push(Label::Fall);
        let m = metrics(&preds, &labels).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (9, 1, 1, 0));
        assert!((m.precision - 0.9).abs() < 1e-12);
        assert!((m.recall - 0.9).abs() < 1e-12);
        assert!((m.f1 - 0.9).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let labels = [Label::Fall, Label::Adl, Label::Fall];
        let m = metrics(&[true, false, true], &labels).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_positives_is_degenerate_zero() {
        let m = metrics(&[false, false], &[Label::Adl, Label::Adl]).unwrap();
        assert!(m.degenerate);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(metrics(&[], &[]).is_err());
        assert!(metrics(&[true], &[]).is_err());
    }

    #[test]
    fn partial_config_keeps_nested_defaults() {
        let c = ExperimentConfig::from_toml("rounds = 2\n[benchmark.deployment]\nwindows_per_round = 50\n").unwrap();
        let d = ExperimentConfig::default();
        assert_eq!(c.rounds, 2);
        assert_eq!(c.benchmark.deployment.windows_per_round, 50);
        assert_eq!(c.benchmark.deployment.activity_mix, d.benchmark.deployment.activity_mix);
        assert_eq!(c.benchmark.deployment.intensity, d.benchmark.deployment.intensity);
        let mix = ExperimentConfig::from_toml("[benchmark.deployment.activity_mix]\nwalking = 1.0\n").unwrap();
        assert_eq!(mix.benchmark.deployment.activity_mix.len(), 1);
        assert_eq!(ExperimentConfig::from_toml(&d.to_toml().unwrap()).unwrap(), d);
        assert!(ExperimentConfig::from_toml("rounds = \"six\"").is_err());
    }

    fn pool(tp: usize, fp: usize) -> Vec<FeedbackSample> {
        (0..tp + fp)
            .map(|i| {
                let label = if i < tp { Label::Fall } else { Label::Adl };
                FeedbackSample::from_oracle(constant_window(label, i as i64 * 1000, 4, 1.0), 1).unwrap()
            })
            .collect()
    }

    #[test]
    fn stratified_split_arithmetic() {
        let p = pool(10, 100);
        let (train, test) = split_80_20(&p, 0.8, 5).unwrap();
        let count = |s: &[FeedbackSample], v| s.iter().filter(|f| f.verdict == v).count();
        assert_eq!((count(&train, Verdict::Tp), count(&train, Verdict::Fp)), (8, 80));
        assert_eq!((count(&test, Verdict::Tp), count(&test, Verdict::Fp)), (2, 20));
        assert_eq!(split_80_20(&p, 0.8, 5).unwrap(), (train, test));
    }

    #[test]
    fn single_true_positive_goes_to_train() {
        let (train, test) = split_80_20(&pool(1, 10), 0.8, 1).unwrap();
        assert_eq!(train.iter().filter(|f| f.verdict == Verdict::Tp).count(), 1);
        assert!(test.iter().all(|f| f.verdict == Verdict::Fp));
    }

    #[test]
    fn invalid_split_ratio() {
        assert!(split_80_20(&pool(2, 2), 1.0, 1).is_err());
        assert!(split_80_20(&pool(2, 2), 0.0, 1).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig { rounds: 0, ..Default::default() };
        assert!(c.validate().is_err());
        c.rounds = 1;
        c.split_ratio = 1.0;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn mode_and_strategy_names() {
        for m in [RetrainMode::Base, RetrainMode::Tfs, RetrainMode::Tl, RetrainMode::Fsl] {
            assert_eq!(RetrainMode::parse(m.as_str()), Some(m));
        }
        for s in [Strategy::NaiveAll, Strategy::Selective] {
            assert_eq!(Strategy::parse(s.as_str()), Some(s));
        }
    }
}
