//! Wiring shared by the command line and the acceptance suite: clustering,
//! training with logging, multi-k evaluation, synthetic corpora, and the
//! sampling and layer ablations.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use lightxml_core::cluster::{build_cluster_map, build_label_reps, ClusterMap};
use lightxml_core::data::{Batch, XmcDataset};
use lightxml_core::metrics::{precision_at_k, EvalReport};
use lightxml_core::model::{ModelBundle, WeightChoice};
use lightxml_core::predict::{ensemble_predict, evaluate, evaluate_ensemble};
use lightxml_core::synth::{SynthCorpus, SynthRecipe};
use lightxml_core::train::{
    init_bundle, train, EpochRecord, SamplingMode, StaticCandidateCache, TrainLog, TrainObserver,
};
use lightxml_core::Real;

use crate::error::{CliError, Result};
use crate::report::format_epoch;
use crate::settings::Settings;
use crate::sparse_file::{SparseFile, SparseRow};

impl Settings {
    /// The desk-scale synthetic recipe as run settings.
    pub fn from_recipe(recipe: &SynthRecipe) -> Self {
        Self {
            train: recipe.train.clone(),
            hidden: recipe.hidden,
            layers: recipe.layers,
            heads: recipe.heads,
            ff_dim: recipe.ff_dim,
            concat_layers: recipe.layers.min(5),
            block_dropout: recipe.encoder(1).block_dropout,
            min_freq: 1,
            verify: false,
        }
    }
}

pub fn cluster_labels(train: &XmcDataset, s: usize, seed: u64) -> Result<ClusterMap> {
    let reps = build_label_reps(train);
    let map = build_cluster_map(&reps, s, seed)?;
    if map.num_labels() != train.num_labels {
        return Err(CliError::Internal("cluster map lost labels".into()));
    }
    Ok(map)
}

/// Writes one log line per epoch and stamps wall time.
pub struct LogObserver<W> {
    pub sink: W,
    pub echo: bool,
    start: Instant,
    pub cache_id: Option<String>,
}

impl<W: std::io::Write> LogObserver<W> {
    pub fn new(sink: W, echo: bool) -> Self {
        Self {
            sink,
            echo,
            start: Instant::now(),
            cache_id: None,
        }
    }
}

impl<T, W: std::io::Write> TrainObserver<T> for LogObserver<W> {
    fn epoch_end(&mut self, _bundle: &ModelBundle<T>, record: &mut EpochRecord) -> lightxml_core::Result<()> {
        record.wall_ms = Some(self.start.elapsed().as_millis() as u64);
        let line = format_epoch(record);
        if self.echo {
            eprintln!("{line}");
        }
        // A failing log sink should not abort training.
        let _ = writeln!(self.sink, "{line}");
        Ok(())
    }

    fn cache_built(&mut self, cache: &StaticCandidateCache) -> lightxml_core::Result<()> {
        self.cache_id = Some(cache.snapshot_id());
        if self.echo {
            eprintln!("static cache frozen: {}", cache.snapshot_id());
        }
        Ok(())
    }
}

/// Fresh bundle for `settings` on `train`, or `resume` when given.
pub fn prepare_bundle<T: Real>(
    settings: &Settings,
    train: &XmcDataset,
    cluster_map: ClusterMap,
    resume: Option<ModelBundle<T>>,
) -> Result<ModelBundle<T>> {
    if let Some(b) = resume {
        if b.model.config.num_labels != train.num_labels {
            return Err(CliError::Usage("checkpoint and dataset label spaces differ".into()));
        }
        return Ok(b);
    }
    let encoder = settings.encoder(train.vocab_size);
    let config = settings.train.model_config(encoder, train.num_labels);
    Ok(init_bundle(config, cluster_map, train, &settings.train)?)
}

pub fn run_training<T: Real>(
    settings: &Settings,
    bundle: &mut ModelBundle<T>,
    train_set: &XmcDataset,
    dev: Option<&XmcDataset>,
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainLog> {
    if train_set.is_empty() {
        return Err(CliError::Usage("training set is empty".into()));
    }
    Ok(train(bundle, train_set, dev, &settings.train, observer)?)
}

/// P@k for every `k`, plus the standard report, for one model or an
/// averaged ensemble. `datasets[i]` is tokenized for `bundles[i]`.
pub fn evaluate_at<T: Real>(
    bundles: &[&ModelBundle<T>],
    datasets: &[&XmcDataset],
    ks: &[usize],
    batch_size: usize,
    weights: WeightChoice,
) -> Result<(Vec<(usize, f64)>, EvalReport)> {
    if datasets.first().is_none_or(|d| d.is_empty()) {
        return Err(CliError::Usage("evaluation set is empty".into()));
    }
    if ks.contains(&0) {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    let report = if bundles.len() == 1 {
        evaluate(bundles[0], datasets[0], bundles[0].b_top, batch_size, weights)?
    } else {
        evaluate_ensemble(bundles, datasets, batch_size, weights)?
    };
    let max_k = ks.iter().copied().max().unwrap_or(1);
    let batches: Vec<Vec<Batch>> = datasets
        .iter()
        .map(|d| d.sequential_batches(batch_size).collect())
        .collect();
    let mut sums = vec![0.0; ks.len()];
    let mut n = 0usize;
    for bi in 0..batches[0].len() {
        let members: Vec<(&ModelBundle<T>, &Batch)> = bundles
            .iter()
            .zip(&batches)
            .map(|(b, bs)| (*b, &bs[bi]))
            .collect();
        let preds = ensemble_predict(&members, max_k, weights)?;
        for (p, truth) in preds.iter().zip(&batches[0][bi].labels) {
            let ranking = p.ranking();
            for (sum, &k) in sums.iter_mut().zip(ks) {
                *sum += precision_at_k(&ranking, truth, k);
            }
            n += 1;
        }
    }
    let precisions = ks.iter().zip(sums).map(|(&k, s)| (k, s / n as f64)).collect();
    Ok((precisions, report))
}

/// Sparse-file view of a dataset's labels and features.
pub fn sparse_of(dataset: &XmcDataset) -> SparseFile {
    SparseFile {
        feature_dim: dataset.feature_dim,
        num_labels: dataset.num_labels,
        rows: dataset
            .documents
            .iter()
            .map(|d| SparseRow {
                labels: d.labels.clone(),
                features: d.sparse.clone(),
            })
            .collect(),
    }
}

fn texts(docs: &[lightxml_core::synth::SynthDoc]) -> Vec<&str> {
    docs.iter().map(|d| d.text.as_str()).collect()
}

pub const SYNTH_FILES: [&str; 5] = ["train_texts.txt", "train.txt", "test_texts.txt", "test.txt", "recipe.conf"];

/// Writes the synthetic corpus as text and sparse files plus the recipe
/// as a config file.
pub fn write_synthetic(dir: &Path, corpus: &SynthCorpus, recipe: &SynthRecipe) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let data = corpus.datasets(recipe.train.max_len)?;
    crate::corpus_io::write_corpus(
        &dir.join(SYNTH_FILES[0]),
        &dir.join(SYNTH_FILES[1]),
        &texts(&corpus.train),
        &sparse_of(&data.train),
    )?;
    crate::corpus_io::write_corpus(
        &dir.join(SYNTH_FILES[2]),
        &dir.join(SYNTH_FILES[3]),
        &texts(&corpus.test),
        &sparse_of(&data.test),
    )?;
    let conf = crate::settings::format_pairs(&Settings::from_recipe(recipe).to_pairs());
    let path = dir.join(SYNTH_FILES[4]);
    std::fs::write(&path, conf).map_err(|e| CliError::io(&path, e))
}

/// One trained configuration of an ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub name: String,
    pub sampling: SamplingMode,
    pub concat_layers: usize,
    pub report: EvalReport,
    pub epochs: Vec<EpochRecord>,
    pub cache_id: Option<String>,
    pub samples_after_cache: u64,
}

impl AblationRun {
    pub fn total_loss(&self, epoch: usize) -> f64 {
        let r = &self.epochs[epoch - 1];
        r.loss_g + r.loss_d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub dynamic: AblationRun,
    pub static_: AblationRun,
    /// Same settings as `dynamic` with a single-layer representation.
    pub single_layer: AblationRun,
}

/// Tolerance on "dynamic P@1 ≥ static P@1" at desk scale.
pub const SAMPLING_TOLERANCE: f64 = 0.02;

impl AblationReport {
    /// Epoch at which the layer comparison is read: half the budget.
    pub fn half_mark(&self) -> usize {
        self.dynamic.epochs.len().div_ceil(2).max(1)
    }

    pub fn dynamic_at_least_static(&self) -> bool {
        self.dynamic.report.p1 >= self.static_.report.p1
    }

    pub fn dynamic_within_tolerance(&self) -> bool {
        self.dynamic.report.p1 >= self.static_.report.p1 - SAMPLING_TOLERANCE
    }

    /// Multi-layer loss at the half mark is lower than single-layer loss at
    /// the same epoch.
    pub fn multi_layer_lower_at_half(&self) -> bool {
        let h = self.half_mark();
        self.dynamic.total_loss(h) < self.single_layer.total_loss(h)
    }

    /// Multi-layer loss at the half mark already matches the single-layer
    /// loss at the end.
    pub fn multi_layer_half_matches_single_final(&self) -> bool {
        let e = self.single_layer.epochs.len();
        self.dynamic.total_loss(self.half_mark()) <= self.single_layer.total_loss(e)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let row = |out: &mut String, tag: &str, r: &AblationRun| {
            let _ = writeln!(
                out,
                "{:<10}{:>10}{:>8}{:>9.4}{:>9.4}{:>9.4}{:>16.4}",
                tag,
                r.sampling.as_str(),
                r.concat_layers,
                r.report.p1,
                r.report.p3,
                r.report.p5,
                r.report.cluster_recall
            );
        };
        let header = format!(
            "{:<10}{:>10}{:>8}{:>9}{:>9}{:>9}{:>16}\n",
            "variant", "sampling", "layers", "P@1", "P@3", "P@5", "cluster_recall"
        );
        out.push_str("# negative sampling\n");
        out.push_str(&header);
        row(&mut out, "D", &self.dynamic);
        row(&mut out, "S", &self.static_);
        out.push_str("\n# text representation\n");
        out.push_str(&header);
        row(&mut out, &format!("concat{}", self.dynamic.concat_layers), &self.dynamic);
        row(&mut out, &format!("concat{}", self.single_layer.concat_layers), &self.single_layer);
        let h = self.half_mark();
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "claim dynamic_ge_static={} p1_dynamic={:.4} p1_static={:.4}",
            self.dynamic_at_least_static(),
            self.dynamic.report.p1,
            self.static_.report.p1
        );
        let _ = writeln!(
            out,
            "claim dynamic_ge_static_minus_{}={}",
            SAMPLING_TOLERANCE,
            self.dynamic_within_tolerance()
        );
        let _ = writeln!(
            out,
            "claim multi_layer_lower_loss_at_epoch_{h}={} loss_multi={:.6} loss_single={:.6}",
            self.multi_layer_lower_at_half(),
            self.dynamic.total_loss(h),
            self.single_layer.total_loss(h)
        );
        let _ = writeln!(
            out,
            "claim multi_layer_half_reaches_single_final={} loss_single_final={:.6}",
            self.multi_layer_half_matches_single_final(),
            self.single_layer.total_loss(self.single_layer.epochs.len())
        );
        let _ = writeln!(
            out,
            "static cache={} sample_calls_after_cache={}",
            self.static_.cache_id.as_deref().unwrap_or("none"),
            self.static_.samples_after_cache
        );
        out
    }

    fn curves(runs: &[&AblationRun]) -> String {
        let mut out = String::from("variant,epoch,loss_g,loss_d,total,half_epoch_loss\n");
        for r in runs {
            for e in &r.epochs {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.name,
                    e.epoch,
                    e.loss_g,
                    e.loss_d,
                    e.loss_g + e.loss_d,
                    e.half_epoch_loss
                );
            }
        }
        out
    }

    /// Per-epoch losses of the layer comparison, `epochs × 2` rows.
    pub fn layer_curves(&self) -> String {
        Self::curves(&[&self.dynamic, &self.single_layer])
    }

    /// Per-epoch losses of the sampling comparison, `epochs × 2` rows.
    pub fn sampling_curves(&self) -> String {
        Self::curves(&[&self.dynamic, &self.static_])
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for (name, body) in [
            ("ablation.txt", self.table()),
            ("layers_loss.csv", self.layer_curves()),
            ("sampling_loss.csv", self.sampling_curves()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| CliError::io(&p, e))?;
        }
        Ok(())
    }
}

fn ablation_run<T: Real>(
    name: &str,
    settings: &Settings,
    train_set: &XmcDataset,
    test: &XmcDataset,
    map: &ClusterMap,
    echo: bool,
) -> Result<AblationRun> {
    let mut bundle: ModelBundle<T> = prepare_bundle(settings, train_set, map.clone(), None)?;
    if echo {
        eprintln!("ablation run {name}");
    }
    let mut obs = LogObserver::new(std::io::sink(), echo);
    let log = run_training(settings, &mut bundle, train_set, None, &mut obs)?;
    let report = evaluate(&bundle, test, bundle.b_top, settings.train.batch_size.max(32), WeightChoice::Auto)?;
    Ok(AblationRun {
        name: name.to_string(),
        sampling: settings.train.sampling,
        concat_layers: bundle.model.config.encoder.concat_layers,
        report,
        epochs: log.epochs,
        cache_id: log.cache_id,
        samples_after_cache: log.samples_after_cache,
    })
}

/// Three runs sharing seed, data and cluster map: the base settings with
/// dynamic sampling, the same with static sampling, and dynamic sampling
/// with a single-layer representation.
pub fn run_ablation<T: Real>(
    base: &Settings,
    train_set: &XmcDataset,
    test: &XmcDataset,
    map: &ClusterMap,
    echo: bool,
) -> Result<AblationReport> {
    let mut dynamic = base.clone();
    dynamic.train.sampling = SamplingMode::Dynamic;
    let mut static_ = dynamic.clone();
    static_.train.sampling = SamplingMode::Static;
    let mut single = dynamic.clone();
    single.concat_layers = 1;
    let concat = dynamic.concat_layers.min(dynamic.layers);
    Ok(AblationReport {
        dynamic: ablation_run::<T>(&format!("D-concat{concat}"), &dynamic, train_set, test, map, echo)?,
        static_: ablation_run::<T>(&format!("S-concat{concat}"), &static_, train_set, test, map, echo)?,
        single_layer: ablation_run::<T>("D-concat1", &single, train_set, test, map, echo)?,
    })
}
