use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fallsel::detector::{train_fsl, train_tfs, train_tl, DetectorModel};
use fallsel::embedder::Embedder;
use fallsel::features::{write_feature_csv, FeatureVariant, Featurizer};
use fallsel::harness::{self, ExperimentConfig, RetrainMode, Strategy};
use fallsel::io::{self, Format};
use fallsel::partition::{cluster_purity, cluster_windows};
use fallsel::persist::ModelRecord;
use fallsel::selector::merge_all;
use fallsel::simfeed::{
    generate_evaluation, generate_population, generate_stream_with, simulate_deployment, PopulationSpec, StreamSpec,
};
use fallsel::window::{AccelWindow, Label, WINDOW_LEN};
use fallsel::{Dataset, Error, Provenance, Result, Verdict};
use serde_json::json;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "fallsel", version, about = "Selective feedback personalization for wearable fall detection")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random draw; replaces the seed list of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML experiment config; missing keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the base dataset, a deployment stream and held-out wearer windows.
    Generate,
    /// Extract per-window features to CSV.
    Featurize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "similarity_metrics")]
        variant: String,
        /// z-score the features and save the fitted featurizer.
        #[arg(long)]
        normalize: bool,
    },
    /// Train the siamese embedder on labeled windows.
    TrainSnn {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Embed windows and run DBSCAN.
    Cluster {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        min_pts: Option<usize>,
    },
    /// Cluster a feedback pool and pick the gradient-ranked subset.
    Select {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Train the base detector or personalize it with feedback.
    Retrain {
        #[arg(long, default_value = "TFS")]
        mode: String,
        #[arg(long)]
        base_data: PathBuf,
        #[arg(long)]
        feedback: Option<PathBuf>,
        /// Starting model for TL and FSL.
        #[arg(long)]
        base_model: Option<PathBuf>,
        /// Windows to evaluate the trained model on.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Run a detector over a stream and collect oracle-labeled feedback.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Multi-round personalization experiment over the config's seeds.
    Experiment {
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        fraction: Option<f64>,
        /// Also compare base, TFS, TL and FSL on one selective retrain.
        #[arg(long)]
        compare: bool,
    },
    /// Selective pipeline with each embedder input variant.
    Ablation,
    /// Selective pipeline across feedback fractions.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Featurize { .. } => "featurize",
            Command::TrainSnn { .. } => "train-snn",
            Command::Cluster { .. } => "cluster",
            Command::Select { .. } => "select",
            Command::Retrain { .. } => "retrain",
            Command::Simulate { .. } => "simulate",
            Command::Experiment { .. } => "experiment",
            Command::Ablation => "ablation",
            Command::Sweep { .. } => "sweep",
        }
    }
}

/// Files read and written by one invocation, for the manifest.
struct Run {
    out_dir: PathBuf,
    inputs: Vec<PathBuf>,
    artifacts: Vec<String>,
}

impl Run {
    fn input(&mut self, path: &Path) -> PathBuf {
        self.inputs.push(path.to_path_buf());
        path.to_path_buf()
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out_dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: {line}");
            return ExitCode::from(1);
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    Ok(config)
}

fn parse_variant(s: &str) -> Result<FeatureVariant> {
    FeatureVariant::parse(s).ok_or_else(|| Error::InvalidArgument(format!("unknown feature variant `{s}`")))
}

fn parse_mode(s: &str) -> Result<RetrainMode> {
    RetrainMode::parse(s).ok_or_else(|| Error::InvalidArgument(format!("unknown retrain mode `{s}`")))
}

fn load_windows(path: &Path) -> Result<Vec<AccelWindow>> {
    Ok(io::load_records(path, Format::from_path(path), WINDOW_LEN)?
        .into_iter()
        .map(|r| r.window)
        .collect())
}

fn load_model(path: &Path) -> Result<ModelRecord> {
    ModelRecord::load(path)
}

fn sample_ids(windows: &[AccelWindow]) -> Vec<String> {
    windows.iter().map(|w| w.key().to_string()).collect()
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

fn run(cli: Cli) -> Result<String> {
    let mut config = load_config(&cli.common)?;
    let seed = config.seeds[0];
    let out_dir = cli.common.out_dir.clone();
    let mut run = Run { out_dir: out_dir.clone(), inputs: Vec::new(), artifacts: Vec::new() };
    let command = cli.command.name();

    // Flag overrides are applied before validation so that a bad flag fails early.
    if let Command::Experiment { strategy, rounds, mode, fraction, .. } = &cli.command {
        if let Some(s) = strategy {
            config.strategy = Strategy::parse(s).ok_or_else(|| Error::InvalidArgument(format!("unknown strategy `{s}`")))?;
        }
        if let Some(r) = rounds {
            config.rounds = *r;
        }
        if let Some(m) = mode {
            config.mode = parse_mode(m)?;
        }
        if let Some(f) = fraction {
            config.fraction = *f;
        }
    }
    if let Command::Select { fraction: Some(f), .. } = &cli.command {
        config.fraction = *f;
    }
    if let Command::TrainSnn { epochs: Some(e), .. } = &cli.command {
        config.snn.epochs = *e;
    }
    if let Command::Cluster { eps, min_pts, .. } = &cli.command {
        if eps.is_some() {
            config.dbscan.eps = *eps;
        }
        if let Some(m) = min_pts {
            config.dbscan.min_pts = *m;
        }
    }
    config.validate()?;
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let summary = match cli.command {
        Command::Generate => {
            let bench = &config.benchmark;
            let world = harness::build_world(bench, seed)?;
            let population = generate_population(&PopulationSpec { seed, ..bench.population.clone() }, &bench.catalog)?;
            io::save_dataset(&population, &run.path("base.csv"), Format::Csv)?;
            let stream = StreamSpec { seed, ..bench.deployment.clone() };
            let rounds = generate_stream_with(&stream, &bench.catalog)?;
            io::save_rounds(&rounds, &run.path("stream.csv"), Format::Csv)?;
            let evaluation = generate_evaluation(&stream, &bench.catalog, bench.evaluation_windows, bench.evaluation_fall_probability)?;
            let eval_ds = Dataset::new(evaluation, Provenance::Original)?;
            io::save_dataset(&eval_ds, &run.path("evaluation.csv"), Format::Csv)?;
            let stream_falls = rounds.iter().flatten().filter(|w| w.label == Label::Fall).count();
            format!(
                "generated {} base windows ({} falls), {} rounds x {} stream windows ({} falls), {} evaluation windows ({} falls); base split {} train / {} test",
                population.len(),
                population.count(Label::Fall),
                rounds.len(),
                stream.windows_per_round,
                stream_falls,
                eval_ds.len(),
                eval_ds.count(Label::Fall),
                world.base_train.len(),
                world.base_test.len()
            )
        }
        Command::Featurize { input, variant, normalize } => {
            let windows = load_windows(&run.input(&input))?;
            let variant = parse_variant(&variant)?;
            let mut featurizer = Featurizer::new(variant, WINDOW_LEN);
            let rows = if normalize {
                let rows = featurizer.fit(&windows)?;
                run.write("featurizer.json", &featurizer.to_record()?)?;
                rows
            } else {
                windows.iter().map(|w| featurizer.raw(w)).collect::<Result<_>>()?
            };
            let path = run.path("features.csv");
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_feature_csv(file, &variant.feature_names(WINDOW_LEN), &sample_ids(&windows), &rows)?;
            format!("featurized {} windows into {} {} features", windows.len(), featurizer.dim(), variant.as_str())
        }
        Command::TrainSnn { input, variant, .. } => {
            let windows = load_windows(&run.input(&input))?;
            let variant = match variant {
                Some(v) => parse_variant(&v)?,
                None => config.snn_variant,
            };
            let snn = fallsel::embedder::SnnTrainConfig { seed, ..config.snn.clone() };
            let (embedder, losses) = Embedder::train(&windows, Featurizer::new(variant, WINDOW_LEN), &snn)?;
            embedder.to_record().save(&run.path("embedder.json"))?;
            let mut csv = String::from("epoch,loss\n");
            for (i, l) in losses.iter().enumerate() {
                let _ = writeln!(csv, "{},{}", i + 1, l);
            }
            run.write("snn_loss.csv", &csv)?;
            format!(
                "trained embedder on {} windows ({}), {} epochs, final loss {:.6}",
                windows.len(),
                variant.as_str(),
                losses.len(),
                losses.last().copied().unwrap_or(f64::NAN)
            )
        }
        Command::Cluster { model, input, .. } => {
            let embedder = Embedder::from_record(load_model(&run.input(&model))?)?;
            let windows = load_windows(&run.input(&input))?;
            let assignment = cluster_windows(&embedder, &windows, &config.dbscan)?;
            let mut csv = String::from("sample_id,activity,cluster_id,core\n");
            for ((w, c), core) in windows.iter().zip(assignment.encoded()).zip(&assignment.core) {
                let _ = writeln!(csv, "{},{},{},{}", w.key(), w.activity.as_deref().unwrap_or(""), c, core);
            }
            run.write("clusters.csv", &csv)?;
            let mut line = format!(
                "{} windows: {} clusters, {} noise, eps {:.6}",
                windows.len(),
                assignment.n_clusters,
                assignment.noise().len(),
                assignment.eps
            );
            if windows.iter().all(|w| w.activity.is_some()) {
                let labels: Vec<&str> = windows.iter().map(|w| w.activity.as_deref().unwrap_or("")).collect();
                let purity = cluster_purity(&assignment, &labels)?;
                let _ = write!(line, ", purity {:.4}", purity.accuracy);
            }
            line
        }
        Command::Select { model, input, .. } => {
            let embedder = Embedder::from_record(load_model(&run.input(&model))?)?;
            let pool = io::load_feedback(&run.input(&input), Format::from_path(&input))?;
            let trace = harness::select_feedback(&embedder, &pool, &config.dbscan, config.fraction)?;
            run.write("selection.csv", &trace.to_csv())?;
            let chosen: Vec<_> = trace.selection.selected.iter().map(|&i| pool[i].clone()).collect();
            io::save_feedback(&chosen, &run.path("selected.csv"), Format::Csv)?;
            format!("selected {} of {} feedback samples; {}", chosen.len(), pool.len(), trace.summary())
        }
        Command::Retrain { mode, base_data, feedback, base_model, test } => {
            let mode = parse_mode(&mode)?;
            let base = io::load_dataset(&run.input(&base_data), Format::from_path(&base_data))?;
            let feedback = match &feedback {
                Some(p) => io::load_feedback(&run.input(p), Format::from_path(p))?,
                None => Vec::new(),
            };
            let start = match &base_model {
                Some(p) => Some(DetectorModel::from_record(load_model(&run.input(p))?)?),
                None => None,
            };
            let cfg = fallsel::detector::DetectorTrainConfig { seed, ..config.detector.clone() };
            let need_start = || {
                start.as_ref().ok_or_else(|| Error::InvalidArgument(format!("{} needs --base-model", mode.as_str())))
            };
            let model = match mode {
                RetrainMode::Base => train_tfs(&base, &cfg)?,
                RetrainMode::Tfs => train_tfs(&merge_all(&base, &feedback)?, &cfg)?,
                RetrainMode::Tl => train_tl(need_start()?, &merge_all(&base, &feedback)?, &cfg)?,
                RetrainMode::Fsl => train_fsl(need_start()?, &feedback, &base, &cfg, config.fsl_shots)?,
            };
            model.to_record().save(&run.path("detector.json"))?;
            let mut line = format!(
                "trained {} detector on {} base windows and {} feedback samples",
                mode.as_str(),
                base.len(),
                feedback.len()
            );
            if let Some(t) = &test {
                let windows = load_windows(&run.input(t))?;
                let m = harness::evaluate(&model, &windows)?;
                let report = json!({
                    "tp": m.tp, "fp": m.fp, "fn": m.fn_, "tn": m.tn,
                    "precision": m.precision, "recall": m.recall, "f1": m.f1, "degenerate": m.degenerate,
                });
                run.write("metrics.json", &format!("{report:#}\n"))?;
                let _ = write!(line, "; test P {:.4} R {:.4} F1 {:.4}", m.precision, m.recall, m.f1);
            }
            line
        }
        Command::Simulate { model, input } => {
            let detector = DetectorModel::from_record(load_model(&run.input(&model))?)?;
            let rounds = io::load_rounds(&run.input(&input), Format::from_path(&input))?;
            let feedback = simulate_deployment(&detector, &rounds)?;
            let flat: Vec<_> = feedback.into_iter().flatten().collect();
            io::save_feedback(&flat, &run.path("feedback.csv"), Format::Csv)?;
            let tp = flat.iter().filter(|f| f.verdict == Verdict::Tp).count();
            format!(
                "{} rounds, {} windows: {} alerts ({} true, {} false)",
                rounds.len(),
                rounds.iter().map(Vec::len).sum::<usize>(),
                flat.len(),
                tp,
                flat.len() - tp
            )
        }
        Command::Experiment { compare, .. } => {
            let header = config.header();
            let records = harness::run_rounds(&config)?;
            run.write("rounds.csv", &harness::rounds_csv(&records, &header))?;
            run.write("rounds_summary.txt", &harness::rounds_summary(&records, &header))?;
            let by_round = harness::mean_by_round(&records);
            let (last, m) = by_round.iter().next_back().expect("at least the base round");
            let mut line = format!(
                "{} {} over {} seed(s): round {last} mean P {:.4} R {:.4} F1 {:.4}",
                config.strategy.as_str(),
                config.mode.as_str(),
                config.seeds.len(),
                m.precision,
                m.recall,
                m.f1
            );
            if compare {
                let rows = harness::compare_strategies(&config)?;
                let means = harness::mean_by_key(&rows);
                run.write("strategies.csv", &harness::table_csv("mode", &rows, &header))?;
                run.write("strategies_summary.txt", &harness::summary_text("retraining strategies", &means, &header))?;
                for (k, m) in &means {
                    let _ = write!(line, "; {k} F1 {:.4}", m.f1);
                }
            }
            line
        }
        Command::Ablation => {
            let header = config.header();
            let rows = harness::ablation_table3(&config)?;
            let means = harness::mean_by_key(&rows);
            run.write("ablation.csv", &harness::table_csv("variant", &rows, &header))?;
            run.write("ablation_summary.txt", &harness::summary_text("embedder input ablation", &means, &header))?;
            means.iter().map(|(k, m)| format!("{k} F1 {:.4}", m.f1)).collect::<Vec<_>>().join("; ")
        }
        Command::Sweep { fractions } => {
            let header = config.header();
            let fractions = fractions.unwrap_or_else(|| harness::SWEEP_FRACTIONS.to_vec());
            if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
                return Err(Error::InvalidArgument(format!("fraction {f} outside [0, 1]")));
            }
            let rows = harness::sweep_fraction(&config, &fractions)?;
            let means = harness::mean_by_key(&rows);
            run.write("sweep.csv", &harness::table_csv("fraction", &rows, &header))?;
            run.write("sweep_summary.txt", &harness::summary_text("feedback fraction sweep", &means, &header))?;
            means.iter().map(|(k, m)| format!("{k} F1 {:.4}", m.f1)).collect::<Vec<_>>().join("; ")
        }
    };
    write_manifest(&mut run, command, seed, &config)?;
    Ok(summary)
}

fn write_manifest(run: &mut Run, command: &str, seed: u64, config: &ExperimentConfig) -> Result<()> {
    let hashes = |paths: Vec<(String, PathBuf)>| -> Result<Vec<serde_json::Value>> {
        paths
            .into_iter()
            .map(|(name, p)| Ok(json!({ "path": name, "sha256": sha256_hex(&p)? })))
            .collect()
    };
    let inputs = hashes(run.inputs.iter().map(|p| (p.display().to_string(), p.clone())).collect())?;
    let artifacts = hashes(run.artifacts.iter().map(|a| (a.clone(), run.out_dir.join(a))).collect())?;
    let manifest = json!({
        "tool": "fallsel",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config": config.to_toml()?,
        "inputs": inputs,
        "artifacts": artifacts,
    });
    let path = run.out_dir.join("manifest.json");
    fs::write(&path, format!("{manifest:#}\n")).map_err(|e| Error::io(&path, e))
}
