use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use privgraph::feature_store::{
    apply_split_csv, assign_kfold, cooccurrence_histogram, load_dataset, share_at_most_one, write_dataset,
    write_split_csv, Dataset, EntityVocabulary, Split,
};
use privgraph::harness::{
    comparison_csv, comparison_markdown, evaluate, evaluate_baseline, generate, grid_sweep, histogram_csv,
    input_marks, multi_run, params_vs_ba_csv, pct, recall_vs_ba_csv, runs_csv, summary_csv, train, Checkpoint,
    ComparisonRow, Manifest, MetricsReport, SynthConfig, SynthMode,
};
use privgraph::models::{
    count_parameters, depth_width_grid, gamlp_variants, mlp_variants, BaselineKind, ExperimentConfig, Predictor,
    GRID_DEPTHS, GRID_WIDTHS,
};
use privgraph::prior_graph::{build_combined_graph, build_cooccurrence_graph, build_frequency_graph, PriorGraph};
use privgraph::{Error, Result};

#[derive(Parser)]
#[command(name = "privgraph", version, about = "Train and audit image-privacy classifiers over visual-entity features")]
struct Cli {
    /// Output directory (default: $PRIVGRAPH_OUT, else ./runs).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assign stratified k-fold train/val/test splits and write them as CSV.
    Split {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 3)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        fold_index: usize,
        #[arg(long, default_value_t = 789)]
        seed: u64,
    },
    /// Build the prior graph from the training split.
    BuildGraph {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = GraphKind::Combined)]
        kind: GraphKind,
    },
    /// Train one model, or several seeds with --runs.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Number of runs with consecutive seeds.
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Evaluate a checkpoint or a rule-based baseline.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long, conflicts_with = "checkpoint")]
        baseline: Option<String>,
        /// Split to score (default: test when splits exist, else every record).
        #[arg(long)]
        on: Option<String>,
        #[arg(long, default_value_t = 789)]
        seed: u64,
    },
    /// Train a grid of model variants under one protocol.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Grid::DepthWidth)]
        grid: Grid,
        #[arg(long, value_delimiter = ',')]
        depths: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        widths: Vec<usize>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print the per-component parameter inventory of a model.
    CountParams {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Histogram of distinct detected categories per image, by class.
    Stats {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        on: Option<String>,
    },
    /// Comparative table over checkpoints and baselines on the test split.
    Report {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        baseline: Vec<String>,
        #[arg(long, default_value_t = 789)]
        seed: u64,
    },
    /// Write a synthetic dataset with a planted privacy rule.
    Synth {
        #[arg(long, default_value = "both")]
        mode: String,
        #[arg(long, default_value_t = 789)]
        seed: u64,
        #[arg(long, default_value_t = 600)]
        n_train: usize,
        #[arg(long, default_value_t = 200)]
        n_val: usize,
        #[arg(long, default_value_t = 200)]
        n_test: usize,
        #[arg(long, default_value_t = 0.5)]
        private_fraction: f64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        deep_dim: usize,
        #[arg(long, default_value_t = 0)]
        image_dim: usize,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Feature file (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Vocabulary JSON (default: the 80 COCO objects and 365 scenes).
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Split CSV overriding any splits stored in the feature file.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    preset: Option<String>,
    /// Key-value config file, applied after the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    budget: Option<f64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphKind {
    Combined,
    Frequency,
    Cooccurrence,
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    DepthWidth,
    MlpVariants,
    GamlpVariants,
}

fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

struct Loaded {
    ds: Dataset,
    inputs: Vec<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<Loaded> {
        let vocab = match &self.vocab {
            Some(p) => EntityVocabulary::load(p)?,
            None => EntityVocabulary::coco(),
        };
        let mut ds = load_dataset(&self.data, &vocab)?;
        let mut inputs = vec![self.data.clone()];
        inputs.extend(self.vocab.clone());
        if let Some(p) = &self.split {
            apply_split_csv(p, &mut ds)?;
            inputs.push(p.clone());
        }
        Ok(Loaded { ds, inputs })
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<(ExperimentConfig, Vec<PathBuf>)> {
        let mut inputs = Vec::new();
        let mut cfg = match (&self.preset, &self.config) {
            (Some(p), _) => ExperimentConfig::from_preset(p)?,
            (None, Some(_)) => ExperimentConfig::parse("")?,
            (None, None) => return Err(Error::Config("give --preset or --config".into())),
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
            inputs.push(path.clone());
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(b) = self.budget {
            cfg.set("budget_secs", &b.to_string())?;
        }
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok((cfg, inputs))
    }
}

fn parse_split(on: &Option<String>, ds: &Dataset) -> Result<Option<Split>> {
    match on.as_deref() {
        Some("all") => Ok(None),
        Some(s) => s.parse().map(Some),
        None if ds.has_splits() => Ok(Some(Split::Test)),
        None => Ok(None),
    }
}

fn out_dir(cli: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = cli
        .clone()
        .or_else(|| std::env::var_os("PRIVGRAPH_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serialisable")
}

fn save_manifest(mut m: Manifest, inputs: &[PathBuf], dir: &Path) -> Result<()> {
    for p in inputs {
        m.add_input(p)?;
    }
    m.save(&dir.join("manifest.json"))
}

/// 14175 → "14,175".
fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn metrics_text(m: &MetricsReport) -> String {
    let mut out = String::new();
    for (name, v) in m.scalars() {
        let _ = writeln!(out, "{name:<12} {}", pct(v));
    }
    let _ = write!(out, "{:<12} {}", "total", m.total);
    out
}

fn load_graph(path: &Option<PathBuf>, ds: &Dataset, cfg: &ExperimentConfig, inputs: &mut Vec<PathBuf>) -> Result<Option<PriorGraph>> {
    if let Some(p) = path {
        inputs.push(p.clone());
        return PriorGraph::load(p).map(Some);
    }
    let needs = cfg.model().is_some_and(|m| m.uses_graph());
    if !needs {
        return Ok(None);
    }
    build_combined_graph(&ds.subset(Split::Train), &ds.vocabulary).map(Some)
}

fn run(cli: Cli) -> Result<()> {
    let argv = command_line();
    match cli.command {
        Command::Split { data, folds, fold_index, seed } => {
            let Loaded { mut ds, inputs } = data.load()?;
            assign_kfold(&mut ds, folds, fold_index, seed)?;
            let dir = out_dir(&cli.out_dir)?;
            write_split_csv(&dir.join("split.csv"), &ds)?;
            for (split, [public, private]) in ds.split_counts() {
                println!("{split:<6} public {public:>7} private {private:>7}");
            }
            let text = format!("folds = {folds}\nfold_index = {fold_index}\nseed = {seed}\n");
            save_manifest(Manifest::from_text(&argv, &text, seed), &inputs, &dir)
        }
        Command::BuildGraph { data, kind } => {
            let Loaded { ds, inputs } = data.load()?;
            if !ds.has_splits() {
                return Err(validation("records carry no split; pass --split"));
            }
            let train = ds.subset(Split::Train);
            let graph = match kind {
                GraphKind::Combined => build_combined_graph(&train, &ds.vocabulary)?,
                GraphKind::Frequency => build_frequency_graph(&train, &ds.vocabulary)?,
                GraphKind::Cooccurrence => build_cooccurrence_graph(&train, &ds.vocabulary),
            };
            let dir = out_dir(&cli.out_dir)?;
            graph.save(&dir.join("graph.json"))?;
            println!("K {} edges {} from {} training images", graph.k, graph.edge_count(), train.len());
            let text = format!("kind = {}\n", kind.to_possible_value().expect("named").get_name());
            save_manifest(Manifest::from_text(&argv, &text, 0), &inputs, &dir)
        }
        Command::Train { data, config, graph, runs } => {
            let Loaded { ds, mut inputs } = data.load()?;
            let (cfg, cfg_inputs) = config.resolve()?;
            inputs.extend(cfg_inputs);
            let graph = load_graph(&graph, &ds, &cfg, &mut inputs)?;
            let dir = out_dir(&cli.out_dir)?;
            if runs == 0 {
                return Err(validation("--runs must be at least 1"));
            }
            if runs == 1 {
                let out = train(&cfg, &ds, graph.as_ref())?;
                out.checkpoint.save(&dir.join("checkpoint.json"))?;
                write(&dir.join("run.json"), &json(&out.record))?;
                write(&dir.join("runs.csv"), &runs_csv(std::slice::from_ref(&out.record)))?;
                let r = &out.record;
                println!("{}: best epoch {} of {} ({:?})", r.name, r.best_epoch, r.history.len(), r.stop_reason);
                if let Some(t) = r.test() {
                    println!("{}", metrics_text(t));
                }
            } else {
                let seeds: Vec<u64> = (0..runs as u64).map(|i| cfg.train.seed + i).collect();
                let multi = multi_run(&cfg, &ds, graph.as_ref(), &seeds)?;
                write(&dir.join("runs.json"), &json(&multi))?;
                write(&dir.join("runs.csv"), &runs_csv(&multi.runs))?;
                write(&dir.join("summary.csv"), &summary_csv(&multi.summary))?;
                for m in &multi.summary {
                    println!("{:<12} {} ± {}", m.metric, pct(m.mean), pct(m.std));
                }
            }
            save_manifest(Manifest::new(&argv, &cfg), &inputs, &dir)
        }
        Command::Eval { data, checkpoint, baseline, on, seed } => {
            let Loaded { ds, mut inputs } = data.load()?;
            let split = parse_split(&on, &ds)?;
            let (report, manifest) = match (&checkpoint, &baseline) {
                (Some(path), _) => {
                    let ckpt = Checkpoint::load(path)?;
                    inputs.push(path.clone());
                    (evaluate(&ckpt, &ds, split)?, Manifest::new(&argv, &ckpt.config))
                }
                (None, Some(name)) => {
                    let kind: BaselineKind = name.replace('-', "_").parse()?;
                    let mut cfg = ExperimentConfig::from_preset(&kind.to_string().replace('_', "-"))?;
                    cfg.train.seed = seed;
                    (evaluate_baseline(kind, &ds, split, seed)?, Manifest::new(&argv, &cfg))
                }
                (None, None) => return Err(validation("give --checkpoint or --baseline")),
            };
            let dir = out_dir(&cli.out_dir)?;
            write(&dir.join("metrics.json"), &json(&report))?;
            println!("{}", metrics_text(&report));
            save_manifest(manifest, &inputs, &dir)
        }
        Command::Sweep { data, config, graph, grid, depths, widths, jobs } => {
            let Loaded { ds, mut inputs } = data.load()?;
            let config = ConfigArgs { preset: config.preset.or_else(|| config.config.is_none().then(|| "mlp".into())), ..config };
            let (cfg, cfg_inputs) = config.resolve()?;
            inputs.extend(cfg_inputs);
            let variants = match grid {
                Grid::DepthWidth => {
                    let d = if depths.is_empty() { GRID_DEPTHS.to_vec() } else { depths };
                    let w = if widths.is_empty() { GRID_WIDTHS.to_vec() } else { widths };
                    depth_width_grid(&d, &w)
                }
                Grid::MlpVariants => mlp_variants(),
                Grid::GamlpVariants => gamlp_variants(),
            };
            let graph = load_graph(&graph, &ds, &cfg, &mut inputs)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.unwrap_or(0))
                .build()
                .map_err(|e| Error::Runtime(e.to_string()))?;
            let records = pool.install(|| grid_sweep(&cfg, &variants, &ds, graph.as_ref()))?;
            let dir = out_dir(&cli.out_dir)?;
            write(&dir.join("sweep.csv"), &runs_csv(&records))?;
            write(&dir.join("sweep.json"), &json(&records))?;
            for r in &records {
                let ba = r.test().map(|t| pct(t.balanced_accuracy)).unwrap_or_default();
                println!("{:<28} BA {ba}", r.name);
            }
            save_manifest(Manifest::new(&argv, &cfg), &inputs, &dir)
        }
        Command::CountParams { config } => {
            let (cfg, _) = config.resolve()?;
            let Predictor::Model(spec) = &cfg.predictor else {
                return Err(validation("baselines have no parameters"));
            };
            let c = count_parameters(spec);
            for (name, n) in &c.components {
                println!("{name:<16} {:>14}", thousands(*n));
            }
            for b in &c.backbones {
                println!("{:<16} {:>14} (fixed)", b.name, thousands(b.params));
            }
            println!("optimised {}", thousands(c.optimised));
            if c.pretrained_frozen > 0 {
                println!("pretrained {}", thousands(c.pretrained_frozen));
            }
            println!("total {}", thousands(c.total));
            Ok(())
        }
        Command::Stats { data, on } => {
            let Loaded { ds, inputs } = data.load()?;
            let split = parse_split(&on, &ds)?;
            let bins = cooccurrence_histogram(&ds, split);
            let dir = out_dir(&cli.out_dir)?;
            write(&dir.join("histogram.csv"), &histogram_csv(&bins))?;
            println!("images with at most one distinct category: {:.2}%", share_at_most_one(&bins));
            let text = format!("on = {}\n", split.map_or("all", |s| s.as_str()));
            save_manifest(Manifest::from_text(&argv, &text, 0), &inputs, &dir)
        }
        Command::Report { data, checkpoint, baseline, seed } => {
            let Loaded { ds, mut inputs } = data.load()?;
            if checkpoint.is_empty() && baseline.is_empty() {
                return Err(validation("give at least one --checkpoint or --baseline"));
            }
            let split = parse_split(&None, &ds)?;
            let mut rows = Vec::new();
            let mut text = String::new();
            for name in &baseline {
                let kind: BaselineKind = name.replace('-', "_").parse()?;
                let metrics = evaluate_baseline(kind, &ds, split, seed)?;
                rows.push(ComparisonRow {
                    method: kind.to_string(),
                    inputs: input_marks(&Predictor::Baseline(kind)),
                    metrics,
                    params: None,
                });
                let _ = writeln!(text, "baseline = {kind}");
            }
            for path in &checkpoint {
                let ckpt = Checkpoint::load(path)?;
                inputs.push(path.clone());
                let spec = ckpt.spec()?;
                rows.push(ComparisonRow {
                    method: ckpt.config.preset.clone().unwrap_or_else(|| spec.kind.to_string()),
                    inputs: input_marks(&ckpt.config.predictor),
                    metrics: evaluate(&ckpt, &ds, split)?,
                    params: Some(count_parameters(spec).optimised),
                });
                let _ = writeln!(text, "checkpoint = {}", ckpt.config_hash);
            }
            let dir = out_dir(&cli.out_dir)?;
            let md = comparison_markdown(&rows);
            write(&dir.join("table.md"), &md)?;
            write(&dir.join("table.csv"), &comparison_csv(&rows))?;
            write(&dir.join("recall_vs_ba.csv"), &recall_vs_ba_csv(&rows))?;
            write(&dir.join("params_vs_ba.csv"), &params_vs_ba_csv(&rows))?;
            print!("{md}");
            save_manifest(Manifest::from_text(&argv, &text, seed), &inputs, &dir)
        }
        Command::Synth { mode, seed, n_train, n_val, n_test, private_fraction, noise, deep_dim, image_dim } => {
            let mode: SynthMode = mode.parse()?;
            if !(0.0..=1.0).contains(&private_fraction) || !(0.0..=1.0).contains(&noise) {
                return Err(validation("--private-fraction and --noise must lie in [0, 1]"));
            }
            let cfg = SynthConfig {
                n_train,
                n_val,
                n_test,
                private_fraction,
                noise,
                mode,
                seed,
                deep_dim,
                image_dim,
                ..SynthConfig::default()
            };
            let vocab = EntityVocabulary::coco();
            let ds = generate(&cfg, &vocab)?;
            let dir = out_dir(&cli.out_dir)?;
            write_dataset(&dir.join("data.jsonl"), &ds)?;
            vocab.save(&dir.join("vocab.json"))?;
            println!("{} records written to {}", ds.records.len(), dir.join("data.jsonl").display());
            save_manifest(Manifest::from_text(&argv, &json(&cfg), seed), &[], &dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: {line}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
