//! Joint training of encoder, generator and discriminator on the summed
//! recall and rank losses, with dynamic or static negative sampling and
//! per-epoch weight averaging.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::cluster::ClusterMap;
use crate::data::{Batch, XmcDataset};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::metrics::EvalReport;
use crate::model::{Model, ModelBundle, ModelConfig, WeightChoice};
use crate::optim::{clip_grad_norm, SwaState};
use crate::predict::evaluate;
use crate::rank::{rank_loss, Bottleneck, TargetPolarity};
use crate::real::Real;
use crate::recall::{recall_loss, sample_candidates, Candidates};
use crate::rng::rng_for;

const DROPOUT_STREAM: u64 = 0xD50_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// Candidates recomputed from the current generator at every step.
    #[default]
    Dynamic,
    /// Candidates frozen once from a generator snapshot.
    Static,
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingMode::Dynamic => "dynamic",
            SamplingMode::Static => "static",
        }
    }
}

impl core::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic" | "D" => Ok(SamplingMode::Dynamic),
            "static" | "S" => Ok(SamplingMode::Static),
            _ => Err(Error::Config(alloc::format!("unknown sampling mode {s:?}"))),
        }
    }
}

/// Named hyperparameter rows for the standard benchmark datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub epochs: usize,
    pub batch_size: usize,
    pub embed_dim: Option<usize>,
    pub cluster_size: Option<usize>,
    pub max_len: usize,
}

pub const PRESETS: [Preset; 5] = [
    Preset {
        name: "eurlex-4k",
        epochs: 20,
        batch_size: 16,
        embed_dim: None,
        cluster_size: None,
        max_len: 512,
    },
    Preset {
        name: "amazoncat-13k",
        epochs: 5,
        batch_size: 16,
        embed_dim: None,
        cluster_size: None,
        max_len: 512,
    },
    Preset {
        name: "wiki10-31k",
        epochs: 30,
        batch_size: 16,
        embed_dim: None,
        cluster_size: None,
        max_len: 512,
    },
    Preset {
        name: "wiki-500k",
        epochs: 10,
        batch_size: 32,
        embed_dim: Some(500),
        cluster_size: Some(60),
        max_len: 128,
    },
    Preset {
        name: "amazon-670k",
        epochs: 15,
        batch_size: 16,
        embed_dim: Some(400),
        cluster_size: Some(80),
        max_len: 128,
    },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

/// Embedding width used when a preset leaves it open.
pub const DEFAULT_EMBED_DIM: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` picks [`crate::recall::default_b_top`] from the training data.
    pub b_top: Option<usize>,
    pub embed_dim: usize,
    pub cluster_size: usize,
    pub max_len: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub decay_bias_norm: bool,
    /// Dropout on the text representation.
    pub dropout: f64,
    pub sampling: SamplingMode,
    /// First (1-based) epoch folded into the weight average; `None` means
    /// `epochs / 2 + 1`.
    pub swa_start_epoch: Option<usize>,
    /// Generator-only epochs before the static cache is frozen; `None`
    /// means `max(1, epochs / 4)`.
    pub static_warmup_epochs: Option<usize>,
    /// Global gradient norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub polarity: TargetPolarity,
    pub bottleneck: Bottleneck,
    pub seed: u64,
    pub preset: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            b_top: None,
            embed_dim: DEFAULT_EMBED_DIM,
            cluster_size: 1,
            max_len: 512,
            lr: 1e-4,
            weight_decay: 0.01,
            decay_bias_norm: false,
            dropout: 0.5,
            sampling: SamplingMode::Dynamic,
            swa_start_epoch: None,
            static_warmup_epochs: None,
            clip_norm: Some(5.0),
            polarity: TargetPolarity::PositivesHigh,
            bottleneck: Bottleneck::Sigmoid,
            seed: 0,
            preset: String::new(),
        }
    }
}

impl TrainConfig {
    /// Defaults overlaid with a named preset.
    pub fn from_preset(name: &str) -> Result<Self> {
        let p = preset(name).ok_or_else(|| Error::Config(alloc::format!("unknown preset {name:?}")))?;
        let mut c = Self::default();
        c.apply_preset(p);
        Ok(c)
    }

    pub fn apply_preset(&mut self, p: &Preset) {
        self.epochs = p.epochs;
        self.batch_size = p.batch_size;
        self.embed_dim = p.embed_dim.unwrap_or(DEFAULT_EMBED_DIM);
        self.cluster_size = p.cluster_size.unwrap_or(1);
        self.max_len = p.max_len;
        self.preset = p.name.to_string();
    }

    pub fn swa_start(&self) -> usize {
        self.swa_start_epoch.unwrap_or(self.epochs / 2 + 1)
    }

    pub fn warmup_epochs(&self) -> usize {
        self.static_warmup_epochs
            .unwrap_or((self.epochs / 4).max(1))
            .min(self.epochs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.embed_dim == 0 || self.cluster_size == 0 {
            return Err(Error::Config("embed_dim and cluster size must be positive".into()));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must leave room for [CLS] and one token".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("lr and weight decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(alloc::format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.swa_start() == 0 {
            return Err(Error::Config("swa start epoch is 1-based".into()));
        }
        Ok(())
    }

    /// Model architecture for `encoder` under this config: the
    /// representation dropout and label embedding width come from here.
    pub fn model_config(&self, mut encoder: EncoderConfig, num_labels: usize) -> ModelConfig {
        encoder.rep_dropout = self.dropout;
        encoder.max_positions = encoder.max_positions.max(self.max_len);
        ModelConfig {
            encoder,
            num_labels,
            embed_dim: self.embed_dim,
            bottleneck: self.bottleneck,
        }
    }
}

/// Which loss terms enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub generator: bool,
    pub discriminator: bool,
}

impl LossTerms {
    pub const BOTH: Self = Self {
        generator: true,
        discriminator: true,
    };
    pub const GENERATOR: Self = Self {
        generator: true,
        discriminator: false,
    };
    pub const DISCRIMINATOR: Self = Self {
        generator: false,
        discriminator: true,
    };
}

/// Frozen training candidates, one set per training document.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticCandidateCache {
    sets: Vec<Candidates>,
    /// Completed epochs of the generator snapshot the cache came from.
    pub snapshot_epoch: usize,
}

impl StaticCandidateCache {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, doc: usize) -> Option<&Candidates> {
        self.sets.get(doc)
    }

    pub fn sets(&self) -> &[Candidates] {
        &self.sets
    }

    /// `"epoch<n>-<hash>"`, a stable id of the snapshot and its contents.
    pub fn snapshot_id(&self) -> String {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for c in &self.sets {
            for &l in &c.labels {
                h = (h ^ u64::from(l)).wrapping_mul(0x100_0000_01B3);
            }
            h = (h ^ 0xFFFF_FFFF).wrapping_mul(0x100_0000_01B3);
        }
        alloc::format!("epoch{}-{h:016x}", self.snapshot_epoch)
    }
}

/// Where a step gets its candidate labels.
#[derive(Debug, Clone, Copy)]
pub enum CandidateSource<'a> {
    /// Sample from the generator scores of this very forward pass.
    Dynamic,
    /// Look rows up in a frozen cache by document index.
    Cached(&'a StaticCandidateCache),
    /// Use these sets, one per batch row.
    Fixed(&'a [Candidates]),
}

/// Nodes of one joint forward pass.
#[derive(Debug, Clone)]
pub struct JointForward {
    pub loss_g: NodeId,
    pub loss_d: NodeId,
    /// The objective: the sum of the enabled terms.
    pub total: NodeId,
    pub recall_scores: NodeId,
    pub candidates: Vec<Candidates>,
    /// Calls made to `sample_candidates`.
    pub sample_calls: u64,
}

/// encode → recall scores → candidates with positive injection → rank
/// scores → both losses.
#[allow(clippy::too_many_arguments)]
pub fn joint_forward<T: Real, R: rand::Rng>(
    g: &mut Graph<'_, T>,
    model: &Model,
    batch: &Batch,
    b_top: usize,
    source: CandidateSource<'_>,
    terms: LossTerms,
    polarity: TargetPolarity,
    training: bool,
    rng: &mut R,
) -> Result<JointForward> {
    if !terms.generator && !terms.discriminator {
        return Err(Error::Config("at least one loss term must be enabled".into()));
    }
    let e = model
        .encoder
        .encode(g, &batch.tokens, &batch.mask, batch.rows, batch.seq, training, rng)?;
    let recall = model.generator.scores(g, e)?;
    let k = model.num_clusters();
    let mut targets = Vec::with_capacity(batch.rows * k);
    for labels in &batch.labels {
        targets.extend(
            model
                .cluster_map
                .cluster_targets(labels)?
                .into_iter()
                .map(|t| if t { T::one() } else { T::zero() }),
        );
    }
    let loss_g = recall_loss(g, recall, &targets)?;

    let mut sample_calls = 0;
    let candidates: Vec<Candidates> = match source {
        CandidateSource::Dynamic => {
            let scores = g.value(recall).data().to_vec();
            let mut out = Vec::with_capacity(batch.rows);
            for (row, labels) in scores.chunks(k).zip(&batch.labels) {
                out.push(sample_candidates(row, &model.cluster_map, b_top, Some(labels))?);
                sample_calls += 1;
            }
            out
        }
        CandidateSource::Cached(cache) => batch
            .doc_indices
            .iter()
            .map(|&i| {
                cache
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Config(alloc::format!("static cache has no entry for document {i}")))
            })
            .collect::<Result<_>>()?,
        CandidateSource::Fixed(sets) => {
            if sets.len() != batch.rows {
                return Err(crate::error::dim_err("fixed candidates", &[batch.rows], &[sets.len()]));
            }
            sets.to_vec()
        }
    };
    let rank = model.discriminator.scores(g, e, &candidates)?;
    let flags: Vec<bool> = candidates
        .iter()
        .flat_map(|c| c.is_positive.iter().copied())
        .collect();
    let loss_d = rank_loss(g, rank, &flags, batch.rows, polarity)?;
    let total = match (terms.generator, terms.discriminator) {
        (true, true) => g.add(loss_g, loss_d)?,
        (true, false) => loss_g,
        _ => loss_d,
    };
    Ok(JointForward {
        loss_g,
        loss_d,
        total,
        recall_scores: recall,
        candidates,
        sample_calls,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss_g: f64,
    pub loss_d: f64,
    /// Value of the optimized objective.
    pub total: f64,
    pub grad_norm: f64,
    pub sample_calls: u64,
}

/// One forward, one backward on the enabled loss terms, one optimizer step.
/// Parameters without gradient (the discriminator under generator-only
/// training) are left untouched.
pub fn train_step<T: Real>(
    bundle: &mut ModelBundle<T>,
    batch: &Batch,
    config: &TrainConfig,
    source: CandidateSource<'_>,
    terms: LossTerms,
) -> Result<StepStats> {
    let step = bundle.optimizer.step_count();
    let mut rng = rng_for(config.seed, DROPOUT_STREAM ^ step);
    let (stats, mut grads) = {
        let mut g = Graph::new(&bundle.store);
        let fw = joint_forward(
            &mut g,
            &bundle.model,
            batch,
            bundle.b_top,
            source,
            terms,
            config.polarity,
            true,
            &mut rng,
        )?;
        let loss_g = g.value(fw.loss_g).item()?.as_f64();
        let loss_d = g.value(fw.loss_d).item()?.as_f64();
        let total = g.value(fw.total).item()?.as_f64();
        if !(loss_g.is_finite() && loss_d.is_finite()) {
            return Err(Error::Diverged {
                step,
                lr: bundle.optimizer.lr,
                loss_g,
                loss_d,
            });
        }
        let grads = g.backward(fw.total)?.params();
        (
            StepStats {
                loss_g,
                loss_d,
                total,
                grad_norm: 0.0,
                sample_calls: fw.sample_calls,
            },
            grads,
        )
    };
    let grad_norm = match config.clip_norm {
        Some(max) => clip_grad_norm(&mut grads, max),
        None => clip_grad_norm(&mut grads, f64::INFINITY),
    };
    bundle.optimizer.lr = config.lr;
    bundle.optimizer.weight_decay = config.weight_decay;
    bundle.optimizer.decay_bias_norm = config.decay_bias_norm;
    if terms == LossTerms::BOTH {
        bundle.optimizer.step(&mut bundle.store, &grads)?;
    } else {
        bundle.optimizer.step_partial(&mut bundle.store, &grads)?;
    }
    Ok(StepStats { grad_norm, ..stats })
}

/// Candidate sets for every document of `dataset` from the current weights
/// (no dropout), with positives injected.
pub fn build_static_cache<T: Real>(
    dataset: &XmcDataset,
    bundle: &ModelBundle<T>,
    batch_size: usize,
) -> Result<StaticCandidateCache> {
    let model = &bundle.model;
    let k = model.num_clusters();
    let mut sets = Vec::with_capacity(dataset.len());
    let mut rng = rng_for(0, 0);
    for batch in dataset.sequential_batches(batch_size.max(1)) {
        let mut g = Graph::new(&bundle.store);
        let e = model
            .encoder
            .encode(&mut g, &batch.tokens, &batch.mask, batch.rows, batch.seq, false, &mut rng)?;
        let recall = model.generator.scores(&mut g, e)?;
        for (row, labels) in g.value(recall).data().chunks(k).zip(&batch.labels) {
            sets.push(sample_candidates(row, &model.cluster_map, bundle.b_top, Some(labels))?);
        }
    }
    let cache = StaticCandidateCache {
        sets,
        snapshot_epoch: bundle.epoch,
    };
    check_cache(&cache, dataset)?;
    Ok(cache)
}

pub fn check_cache(cache: &StaticCandidateCache, dataset: &XmcDataset) -> Result<()> {
    if cache.len() != dataset.len() {
        return Err(Error::Config(alloc::format!(
            "static cache covers {} documents but the dataset has {}",
            cache.len(),
            dataset.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Batch means over the epoch.
    pub loss_g: f64,
    pub loss_d: f64,
    /// Mean objective over the first half of the epoch's batches.
    pub half_epoch_loss: f64,
    /// Generator-only epochs of the static schedule.
    pub warmup: bool,
    pub dev: Option<EvalReport>,
    /// Calls to `sample_candidates` during the epoch.
    pub sample_calls: u64,
    /// Filled in by callers with a clock.
    pub wall_ms: Option<u64>,
}

/// Hooks into the training loop.
pub trait TrainObserver<T> {
    /// Called after every epoch, once averaging has been applied.
    fn epoch_end(&mut self, _bundle: &ModelBundle<T>, _record: &mut EpochRecord) -> Result<()> {
        Ok(())
    }

    /// Called when a static cache has been frozen.
    fn cache_built(&mut self, _cache: &StaticCandidateCache) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct Silent;

impl<T> TrainObserver<T> for Silent {}

/// Outcome of [`train`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Snapshot id of the static cache, when one was used.
    pub cache_id: Option<String>,
    /// `sample_candidates` calls after the static cache was frozen.
    pub samples_after_cache: u64,
}

/// Fresh bundle for `train` under `config`, with the cluster map and the
/// generator shortlist size checked against the data.
pub fn init_bundle<T: Real>(
    model_config: ModelConfig,
    cluster_map: ClusterMap,
    train: &XmcDataset,
    config: &TrainConfig,
) -> Result<ModelBundle<T>> {
    config.validate()?;
    if train.num_labels != cluster_map.num_labels() || train.num_labels != model_config.num_labels {
        return Err(Error::Config(alloc::format!(
            "dataset has {} labels, cluster map {}, model {}",
            train.num_labels,
            cluster_map.num_labels(),
            model_config.num_labels
        )));
    }
    let b_top = config
        .b_top
        .unwrap_or_else(|| crate::recall::default_b_top(train.mean_labels(), cluster_map.num_clusters()));
    let mut bundle = ModelBundle::new(
        model_config,
        cluster_map,
        config.seed,
        b_top,
        config.lr,
        config.weight_decay,
    )?;
    bundle.optimizer.decay_bias_norm = config.decay_bias_norm;
    Ok(bundle)
}

/// Runs the remaining epochs `bundle.epoch + 1 ..= config.epochs`.
pub fn train<T: Real>(
    bundle: &mut ModelBundle<T>,
    train: &XmcDataset,
    dev: Option<&XmcDataset>,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainLog> {
    config.validate()?;
    if train.num_labels != bundle.model.cluster_map.num_labels() {
        return Err(Error::Config(alloc::format!(
            "dataset has {} labels but the cluster map covers {}",
            train.num_labels,
            bundle.model.cluster_map.num_labels()
        )));
    }
    if let Some(d) = dev {
        if d.num_labels != train.num_labels {
            return Err(Error::Config("dev and train label spaces differ".into()));
        }
    }
    bundle.check_consistent()?;
    let mut log = TrainLog::default();
    let warmup = match config.sampling {
        SamplingMode::Dynamic => 0,
        SamplingMode::Static => config.warmup_epochs(),
    };
    let mut cache: Option<StaticCandidateCache> = None;
    while bundle.epoch < config.epochs {
        let epoch = bundle.epoch + 1;
        let is_warmup = epoch <= warmup;
        if config.sampling == SamplingMode::Static && !is_warmup && cache.is_none() {
            let c = build_static_cache(train, bundle, config.batch_size)?;
            observer.cache_built(&c)?;
            log.cache_id = Some(c.snapshot_id());
            cache = Some(c);
        }
        let (source, terms) = match (&cache, is_warmup) {
            (_, true) => (CandidateSource::Dynamic, LossTerms::GENERATOR),
            (Some(c), false) => (CandidateSource::Cached(c), LossTerms::BOTH),
            (None, false) => (CandidateSource::Dynamic, LossTerms::BOTH),
        };
        let n_batches = train.len().div_ceil(config.batch_size);
        let half = n_batches.div_ceil(2);
        let mut rec = EpochRecord {
            epoch,
            warmup: is_warmup,
            ..EpochRecord::default()
        };
        let mut half_sum = 0.0;
        for (i, batch) in train
            .batches(config.batch_size, config.seed, epoch as u64)
            .enumerate()
        {
            let s = train_step(bundle, &batch, config, source, terms)?;
            rec.loss_g += s.loss_g;
            rec.loss_d += s.loss_d;
            rec.sample_calls += s.sample_calls;
            if cache.is_some() {
                log.samples_after_cache += s.sample_calls;
            }
            if i < half {
                half_sum += s.total;
            }
        }
        if n_batches > 0 {
            rec.loss_g /= n_batches as f64;
            rec.loss_d /= n_batches as f64;
            rec.half_epoch_loss = half_sum / half as f64;
        }
        bundle.epoch = epoch;
        if epoch >= config.swa_start() {
            let swa = bundle
                .swa
                .get_or_insert_with(|| SwaState::new(&bundle.store, epoch));
            swa.update(&bundle.store)?;
        }
        if let Some(d) = dev {
            rec.dev = Some(evaluate(bundle, d, bundle.b_top, config.batch_size, WeightChoice::Last)?);
        }
        observer.epoch_end(bundle, &mut rec)?;
        log.epochs.push(rec);
    }
    Ok(log)
}
