//! Command-line surface.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lightxml_core::cluster::size_bound_feasible;
use lightxml_core::data::{Batch, Split};
use lightxml_core::model::{ModelBundle, WeightChoice};
use lightxml_core::predict::predict;
use lightxml_core::rank::Bottleneck;
use lightxml_core::synth::{generate, SynthRecipe};
use lightxml_core::text::Vocab;
use lightxml_core::train::{EpochRecord, SamplingMode, StaticCandidateCache, TrainObserver};
use lightxml_core::Real;

use crate::checkpoint::{self, Width};
use crate::cluster_file::{read_cluster_map, write_cluster_map};
use crate::corpus_io::{build_vocab, load_dataset, read_texts, sparse_only};
use crate::diagnostics::joint_gradcheck;
use crate::error::{CliError, Result};
use crate::pipeline::{cluster_labels, evaluate_at, prepare_bundle, run_ablation, run_training, write_synthetic, LogObserver};
use crate::report::{format_eval, format_prediction, manifest_path, RunManifest};
use crate::settings::{read_pairs, Pairs, Settings};
use crate::sparse_file::read_sparse;

/// Label counts of the datasets the presets were tuned for.
const PRESET_LABELS: [(&str, usize); 5] = [
    ("eurlex-4k", 3_956),
    ("amazoncat-13k", 13_330),
    ("wiki10-31k", 30_938),
    ("wiki-500k", 501_008),
    ("amazon-670k", 670_091),
];

/// Gradient check tolerance on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "lightxml", version, about = "Extreme multi-label text classification")]
pub struct Cli {
    /// Seed for clustering, initialization, shuffling and dropout.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// 64-bit floats throughout, checkpoints stored at full width.
    #[arg(long, global = true)]
    pub verify: bool,
    /// key=value settings file (a run manifest also works).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a balanced label clustering from a sparse training file.
    Cluster(ClusterArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Top-k labels for each line of a text file.
    Predict(PredictArgs),
    /// P@k and cluster recall on a labelled test set.
    Eval(EvalArgs),
    /// Dynamic vs static sampling and multi vs single layer runs.
    Ablate(AblateArgs),
    /// Analytic vs finite-difference gradients on a micro-model.
    Gradcheck(GradcheckArgs),
    /// Write the synthetic topic corpus and its training recipe.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SamplingArg {
    Dynamic,
    Static,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BottleneckArg {
    Sigmoid,
    Relu,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum WeightsArg {
    #[default]
    Auto,
    Swa,
    Last,
}

impl From<WeightsArg> for WeightChoice {
    fn from(w: WeightsArg) -> Self {
        match w {
            WeightsArg::Auto => WeightChoice::Auto,
            WeightsArg::Swa => WeightChoice::Swa,
            WeightsArg::Last => WeightChoice::Last,
        }
    }
}

/// Training hyperparameters; anything left unset falls back to the config
/// file, then the preset, then the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Clusters recalled per instance.
    #[arg(long)]
    pub b_top: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Maximum labels per cluster (1 = one label per cluster).
    #[arg(long)]
    pub cluster_size: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Apply weight decay to biases and normalization weights as well.
    #[arg(long)]
    pub decay_bias_norm: bool,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, value_enum)]
    pub sampling: Option<SamplingArg>,
    /// First epoch (1-based) folded into the weight average.
    #[arg(long)]
    pub swa_start: Option<usize>,
    /// Generator-only epochs before the static cache is frozen.
    #[arg(long)]
    pub static_warmup: Option<usize>,
    #[arg(long, conflicts_with = "no_clip")]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub no_clip: bool,
    /// Train the ranker with positives as 0 and negatives as 1.
    #[arg(long)]
    pub inverted_rank_targets: bool,
    #[arg(long, value_enum)]
    pub bottleneck: Option<BottleneckArg>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    /// Number of final layers whose [CLS] states are concatenated.
    #[arg(long)]
    pub concat_layers: Option<usize>,
    #[arg(long)]
    pub block_dropout: Option<f64>,
    /// Words seen fewer times map to [UNK].
    #[arg(long)]
    pub min_freq: Option<usize>,
}

impl TrainFlags {
    fn pairs(&self) -> Pairs {
        let mut out: Pairs = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        let s = |v: &Option<usize>| v.map(|x| x.to_string());
        let f = |v: &Option<f64>| v.map(|x| x.to_string());
        put("preset", self.preset.clone());
        put("epochs", s(&self.epochs));
        put("batch_size", s(&self.batch_size));
        put("b_top", s(&self.b_top));
        put("embed_dim", s(&self.embed_dim));
        put("cluster_size", s(&self.cluster_size));
        put("max_len", s(&self.max_len));
        put("lr", f(&self.lr));
        put("weight_decay", f(&self.weight_decay));
        put("decay_bias_norm", self.decay_bias_norm.then(|| "true".into()));
        put("dropout", f(&self.dropout));
        put(
            "sampling",
            self.sampling.map(|m| match m {
                SamplingArg::Dynamic => "dynamic".into(),
                SamplingArg::Static => "static".into(),
            }),
        );
        put("swa_start_epoch", s(&self.swa_start));
        put("static_warmup_epochs", s(&self.static_warmup));
        put("clip_norm", f(&self.clip_norm));
        put("clip_norm", self.no_clip.then(|| "none".into()));
        put("polarity", self.inverted_rank_targets.then(|| "low".into()));
        put(
            "bottleneck",
            self.bottleneck.map(|b| match b {
                BottleneckArg::Sigmoid => "sigmoid".into(),
                BottleneckArg::Relu => "relu".into(),
            }),
        );
        put("hidden", s(&self.hidden));
        put("layers", s(&self.layers));
        put("heads", s(&self.heads));
        put("ff_dim", s(&self.ff_dim));
        put("concat_layers", s(&self.concat_layers));
        put("block_dropout", f(&self.block_dropout));
        put("min_freq", s(&self.min_freq));
        out
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainData {
    #[arg(long)]
    pub train_text: PathBuf,
    #[arg(long)]
    pub train_sparse: PathBuf,
    /// Precomputed cluster map; built from the training features otherwise.
    #[arg(long)]
    pub cluster_map: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub sparse: PathBuf,
    /// Maximum labels per cluster.
    #[arg(long)]
    pub max_size: Option<usize>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: TrainData,
    #[arg(long, requires = "dev_sparse")]
    pub dev_text: Option<PathBuf>,
    #[arg(long, requires = "dev_text")]
    pub dev_sparse: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch metrics log; defaults to `<out>.log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Skip the `<out>.epochN` snapshots written after every epoch.
    #[arg(long)]
    pub no_epoch_checkpoints: bool,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One document per line.
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub b_top: Option<usize>,
    #[arg(long, value_enum, default_value_t = WeightsArg::Auto)]
    pub weights: WeightsArg,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "ensemble", conflicts_with = "ensemble")]
    pub model: Option<PathBuf>,
    /// Comma-separated checkpoints whose fused scores are averaged.
    #[arg(long, value_delimiter = ',')]
    pub ensemble: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub test_text: PathBuf,
    #[arg(long)]
    pub test_sparse: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub k: Vec<usize>,
    #[arg(long)]
    pub b_top: Option<usize>,
    #[arg(long, value_enum, default_value_t = WeightsArg::Auto)]
    pub weights: WeightsArg,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: TrainData,
    #[arg(long)]
    pub test_text: PathBuf,
    #[arg(long)]
    pub test_sparse: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check only this bottleneck; both by default.
    #[arg(long, value_enum)]
    pub bottleneck: Option<BottleneckArg>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
}

impl Cli {
    fn file_pairs(&self) -> Result<Pairs> {
        self.config.as_deref().map_or(Ok(Vec::new()), read_pairs)
    }

    fn settings(&self, flags: &TrainFlags) -> Result<Settings> {
        let mut pairs = flags.pairs();
        if let Some(seed) = self.seed {
            pairs.push(("seed".into(), seed.to_string()));
        }
        if self.verify {
            pairs.push(("verify".into(), "true".into()));
        }
        let s = Settings::resolve(&self.file_pairs()?, &pairs)?;
        s.train.validate()?;
        Ok(s)
    }
}

fn width(settings: &Settings) -> Width {
    if settings.verify {
        Width::F64
    } else {
        Width::F32
    }
}

fn warn_preset_mismatch(settings: &Settings, num_labels: usize) {
    let name = settings.train.preset.as_str();
    if let Some((_, expect)) = PRESET_LABELS.iter().find(|(n, _)| *n == name) {
        if *expect != num_labels {
            eprintln!("warning: preset {name} is tuned for {expect} labels, the dataset has {num_labels}");
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Cluster(a) => cmd_cluster(cli, a),
        Command::Train(a) => {
            let s = cli.settings(&a.flags)?;
            if s.verify {
                cmd_train::<f64>(&s, a)
            } else {
                cmd_train::<f32>(&s, a)
            }
        }
        Command::Predict(a) => {
            if cli.verify {
                cmd_predict::<f64>(a)
            } else {
                cmd_predict::<f32>(a)
            }
        }
        Command::Eval(a) => {
            if cli.verify {
                cmd_eval::<f64>(a)
            } else {
                cmd_eval::<f32>(a)
            }
        }
        Command::Ablate(a) => {
            let s = cli.settings(&a.flags)?;
            if s.verify {
                cmd_ablate::<f64>(&s, a)
            } else {
                cmd_ablate::<f32>(&s, a)
            }
        }
        Command::Gradcheck(a) => cmd_gradcheck(cli, a),
        Command::Synth(a) => cmd_synth(cli, a),
    }
}

fn cmd_cluster(cli: &Cli, a: &ClusterArgs) -> Result<()> {
    let flags = TrainFlags {
        preset: a.preset.clone(),
        cluster_size: a.max_size,
        ..TrainFlags::default()
    };
    let settings = cli.settings(&flags)?;
    let s = settings.train.cluster_size;
    let seed = settings.train.seed;
    let data = sparse_only(read_sparse(&a.sparse, Split::Train)?, Split::Train)?;
    warn_preset_mismatch(&settings, data.num_labels);
    let map = cluster_labels(&data, s, seed)?;
    let feasible = size_bound_feasible(map.num_labels(), s);
    if feasible && !map.satisfies_size_bound() {
        return Err(CliError::Internal(format!("cluster sizes outside ({}, {s}]", s / 2)));
    }
    if !feasible {
        eprintln!(
            "warning: no partition of {} labels into clusters of size ({}, {s}] exists; sizes are balanced instead",
            map.num_labels(),
            s / 2
        );
    }
    write_cluster_map(&a.out, &map)?;
    let mut m = RunManifest::new("cluster", seed, settings.to_pairs());
    m.input("sparse", &a.sparse)
        .artifact("cluster_map", &a.out)
        .fact("clusters", map.num_clusters())
        .fact("labels", map.num_labels())
        .fact("size_bound_feasible", feasible);
    m.write(&manifest_path(&a.out))?;
    println!("clusters={} labels={} max_size={s}", map.num_clusters(), map.num_labels());
    Ok(())
}

fn load_or_cluster(data: &TrainData, train: &lightxml_core::data::XmcDataset, settings: &Settings) -> Result<lightxml_core::cluster::ClusterMap> {
    match &data.cluster_map {
        Some(p) => {
            let map = read_cluster_map(p)?;
            if map.num_labels() != train.num_labels {
                return Err(CliError::Usage(format!(
                    "cluster map covers {} labels, the training set has {}",
                    map.num_labels(),
                    train.num_labels
                )));
            }
            Ok(map)
        }
        None => cluster_labels(train, settings.train.cluster_size, settings.train.seed),
    }
}

fn cmd_train<T: Real>(settings: &Settings, a: &TrainArgs) -> Result<()> {
    let resume = a.resume.as_deref().map(checkpoint::load::<T>).transpose()?;
    let vocab = match resume.as_ref().and_then(|c| c.vocab.clone()) {
        Some(v) => v,
        None => build_vocab(&a.data.train_text, settings.min_freq)?,
    };
    let max_len = settings.train.max_len;
    let train = load_dataset(&a.data.train_text, &a.data.train_sparse, &vocab, max_len, Split::Train)?;
    warn_preset_mismatch(settings, train.num_labels);
    let dev = match (&a.dev_text, &a.dev_sparse) {
        (Some(t), Some(s)) => Some(load_dataset(t, s, &vocab, max_len, Split::Test)?),
        _ => None,
    };
    let map = load_or_cluster(&a.data, &train, settings)?;
    let mut bundle: ModelBundle<T> = prepare_bundle(settings, &train, map, resume.map(|c| c.bundle))?;

    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".log");
        PathBuf::from(s)
    });
    let sink = std::fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let pairs = settings.to_pairs();
    let mut obs = EpochSaver {
        log: LogObserver::new(std::io::BufWriter::new(sink), true),
        out: (!a.no_epoch_checkpoints).then_some(a.out.as_path()),
        vocab: &vocab,
        settings: &pairs,
        width: width(settings),
        saved: Vec::new(),
    };
    let log = run_training(settings, &mut bundle, &train, dev.as_ref(), &mut obs)?;
    obs.log.sink.flush().map_err(|e| CliError::io(&log_path, e))?;
    let snapshots = std::mem::take(&mut obs.saved);

    checkpoint::save(&a.out, &bundle, Some(&vocab), &pairs, width(settings))?;
    let mut m = RunManifest::new("train", settings.train.seed, pairs);
    m.input("train_text", &a.data.train_text).input("train_sparse", &a.data.train_sparse);
    if let Some(p) = &a.data.cluster_map {
        m.input("cluster_map", p);
    }
    if let (Some(t), Some(s)) = (&a.dev_text, &a.dev_sparse) {
        m.input("dev_text", t).input("dev_sparse", s);
    }
    if let Some(p) = &a.resume {
        m.input("resume", p);
    }
    m.artifact("checkpoint", &a.out).artifact("metrics_log", &log_path);
    for (epoch, path) in &snapshots {
        m.artifact(&format!("epoch{epoch}"), path);
    }
    m.fact("mode", settings.train.sampling.as_str())
        .fact("dtype", T::NAME)
        .fact("epochs_completed", bundle.epoch)
        .fact("b_top", bundle.b_top)
        .fact("clusters", bundle.model.num_clusters());
    if settings.train.sampling == SamplingMode::Static {
        m.fact("cache_snapshot", log.cache_id.as_deref().unwrap_or("none"))
            .fact("sample_calls_after_cache", log.samples_after_cache);
    }
    m.write(&manifest_path(&a.out))?;
    println!("checkpoint={} epochs={}", a.out.display(), bundle.epoch);
    Ok(())
}

/// Logs every epoch and, unless disabled, snapshots the bundle next to
/// the final checkpoint.
struct EpochSaver<'a, W> {
    log: LogObserver<W>,
    out: Option<&'a Path>,
    vocab: &'a Vocab,
    settings: &'a Pairs,
    width: Width,
    saved: Vec<(usize, PathBuf)>,
}

impl<T: Real, W: std::io::Write> TrainObserver<T> for EpochSaver<'_, W> {
    fn epoch_end(&mut self, bundle: &ModelBundle<T>, record: &mut EpochRecord) -> lightxml_core::Result<()> {
        self.log.epoch_end(bundle, record)?;
        if let Some(out) = self.out {
            let mut name = out.as_os_str().to_owned();
            name.push(format!(".epoch{}", record.epoch));
            let path = PathBuf::from(name);
            // Snapshots are a convenience; a failed write is reported, not fatal.
            match checkpoint::save(&path, bundle, Some(self.vocab), self.settings, self.width) {
                Ok(()) => self.saved.push((record.epoch, path)),
                Err(e) => eprintln!("warning: epoch snapshot not written: {e}"),
            }
        }
        Ok(())
    }

    fn cache_built(&mut self, cache: &StaticCandidateCache) -> lightxml_core::Result<()> {
        TrainObserver::<T>::cache_built(&mut self.log, cache)
    }
}

/// Settings stored in a checkpoint, for its tokenization length.
fn stored_settings<T>(c: &checkpoint::Checkpoint<T>) -> Result<Settings> {
    Settings::resolve(&c.settings, &[])
}

fn checkpoint_vocab<T>(c: &checkpoint::Checkpoint<T>, path: &Path) -> Result<Vocab> {
    c.vocab
        .clone()
        .ok_or_else(|| CliError::format(path, "checkpoint has no vocabulary"))
}

fn cmd_predict<T: Real>(a: &PredictArgs) -> Result<()> {
    let mut c = checkpoint::load::<T>(&a.model)?;
    let vocab = checkpoint_vocab(&c, &a.model)?;
    let max_len = stored_settings(&c)?.train.max_len;
    if let Some(b) = a.b_top {
        c.bundle.b_top = b;
    }
    if a.batch_size == 0 {
        return Err(CliError::Usage("batch size must be positive".into()));
    }
    let texts = read_texts(&a.text)?;
    let seqs: Vec<Vec<u32>> = texts.iter().map(|t| vocab.tokenize(t, max_len)).collect();
    let mut out = String::new();
    for chunk in seqs.chunks(a.batch_size) {
        let batch = Batch::from_sequences(chunk.iter().map(Vec::as_slice));
        for p in predict(&c.bundle, &batch, c.bundle.b_top, a.k, a.weights.into())? {
            out.push_str(&format_prediction(&p));
            out.push('\n');
        }
    }
    match &a.out {
        Some(p) => std::fs::write(p, out).map_err(|e| CliError::io(p, e)),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn cmd_eval<T: Real>(a: &EvalArgs) -> Result<()> {
    let paths: Vec<PathBuf> = match (&a.model, &a.ensemble) {
        (Some(m), _) => vec![m.clone()],
        (None, Some(e)) if !e.is_empty() => e.clone(),
        _ => return Err(CliError::Usage("give --model or --ensemble".into())),
    };
    let mut bundles = Vec::new();
    let mut datasets = Vec::new();
    for p in &paths {
        let mut c = checkpoint::load::<T>(p)?;
        let vocab = checkpoint_vocab(&c, p)?;
        let max_len = stored_settings(&c)?.train.max_len;
        let test = load_dataset(&a.test_text, &a.test_sparse, &vocab, max_len, Split::Test)?;
        if test.is_empty() {
            return Err(CliError::Usage(format!("{} has no documents", a.test_sparse.display())));
        }
        if test.num_labels != c.bundle.model.config.num_labels {
            return Err(CliError::Core(lightxml_core::Error::Config(format!(
                "{} predicts {} labels but the test set has {}",
                p.display(),
                c.bundle.model.config.num_labels,
                test.num_labels
            ))));
        }
        if let Some(b) = a.b_top {
            c.bundle.b_top = b;
        }
        bundles.push(c.bundle);
        datasets.push(test);
    }
    let refs: Vec<&ModelBundle<T>> = bundles.iter().collect();
    let drefs: Vec<_> = datasets.iter().collect();
    let (precisions, report) = evaluate_at(&refs, &drefs, &a.k, a.batch_size.max(1), a.weights.into())?;
    print!("{}", format_eval(&precisions, &report));
    Ok(())
}

fn cmd_ablate<T: Real>(settings: &Settings, a: &AblateArgs) -> Result<()> {
    let vocab = build_vocab(&a.data.train_text, settings.min_freq)?;
    let max_len = settings.train.max_len;
    let train = load_dataset(&a.data.train_text, &a.data.train_sparse, &vocab, max_len, Split::Train)?;
    let test = load_dataset(&a.test_text, &a.test_sparse, &vocab, max_len, Split::Test)?;
    if test.num_labels != train.num_labels {
        return Err(CliError::Usage("train and test label spaces differ".into()));
    }
    let map = load_or_cluster(&a.data, &train, settings)?;
    let report = run_ablation::<T>(settings, &train, &test, &map, true)?;
    report.write(&a.out_dir)?;
    let mut m = RunManifest::new("ablate", settings.train.seed, settings.to_pairs());
    m.input("train_text", &a.data.train_text)
        .input("train_sparse", &a.data.train_sparse)
        .input("test_text", &a.test_text)
        .input("test_sparse", &a.test_sparse)
        .artifact("table", &a.out_dir.join("ablation.txt"))
        .artifact("layer_curves", &a.out_dir.join("layers_loss.csv"))
        .artifact("sampling_curves", &a.out_dir.join("sampling_loss.csv"))
        .fact("dtype", T::NAME);
    if let Some(id) = &report.static_.cache_id {
        m.fact("cache_snapshot", id);
    }
    m.write(&a.out_dir.join("ablation.manifest"))?;
    print!("{}", report.table());
    Ok(())
}

fn cmd_gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(11);
    let which = match a.bottleneck {
        Some(BottleneckArg::Sigmoid) => vec![Bottleneck::Sigmoid],
        Some(BottleneckArg::Relu) => vec![Bottleneck::Relu],
        None => vec![Bottleneck::Sigmoid, Bottleneck::Relu],
    };
    let mut worst = 0.0f64;
    for b in which {
        let start = Instant::now();
        let r = joint_gradcheck(b, seed)?;
        println!(
            "bottleneck={} max_rel_err={:e} worst={}[{}] checked={} elapsed_ms={}",
            if b == Bottleneck::Sigmoid { "sigmoid" } else { "relu" },
            r.max_rel_err,
            r.worst_param,
            r.worst_index,
            r.checked,
            start.elapsed().as_millis()
        );
        worst = worst.max(r.max_rel_err);
    }
    if worst >= GRADCHECK_TOLERANCE {
        return Err(CliError::Internal(format!(
            "gradient mismatch {worst:e} exceeds {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut recipe = SynthRecipe::default();
    if let Some(seed) = cli.seed {
        recipe.corpus.seed = seed;
        recipe.train.seed = seed;
    }
    let corpus = generate(&recipe.corpus)?;
    write_synthetic(&a.out_dir, &corpus, &recipe)?;
    let mut m = RunManifest::new("synth", recipe.corpus.seed, Settings::from_recipe(&recipe).to_pairs());
    for f in crate::pipeline::SYNTH_FILES {
        m.artifact(f, &a.out_dir.join(f));
    }
    m.fact("train_docs", corpus.train.len())
        .fact("test_docs", corpus.test.len())
        .fact("labels", corpus.num_labels)
        .fact("topics", corpus.topics);
    m.write(&a.out_dir.join("synth.manifest"))?;
    println!("wrote {}", a.out_dir.display());
    Ok(())
}
