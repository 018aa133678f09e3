//! The trainable model: encoder, generator and discriminator sharing one
//! parameter store, plus optimizer and weight-averaging state.

use crate::cluster::ClusterMap;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::optim::{AdamW, SwaState};
use crate::params::ParamStore;
use crate::rank::{Bottleneck, Discriminator};
use crate::real::Real;
use crate::recall::Generator;
use crate::rng::rng_for;

const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub num_labels: usize,
    pub embed_dim: usize,
    pub bottleneck: Bottleneck,
}

/// Architecture handles; parameter values live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub cluster_map: ClusterMap,
}

impl Model {
    pub fn init<T: Real>(
        config: ModelConfig,
        cluster_map: ClusterMap,
        store: &mut ParamStore<T>,
        seed: u64,
    ) -> Result<Self> {
        if cluster_map.num_labels() != config.num_labels {
            return Err(Error::Config(alloc::format!(
                "cluster map covers {} labels but the model has {}",
                cluster_map.num_labels(),
                config.num_labels
            )));
        }
        if config.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        let mut rng = rng_for(seed, INIT_STREAM);
        let encoder = Encoder::init(config.encoder.clone(), store, &mut rng)?;
        let width = config.encoder.rep_width();
        let generator = Generator::init(cluster_map.num_clusters(), width, store, &mut rng);
        let discriminator = Discriminator::init(
            config.num_labels,
            config.embed_dim,
            width,
            config.bottleneck,
            store,
            &mut rng,
        );
        Ok(Self {
            config,
            encoder,
            generator,
            discriminator,
            cluster_map,
        })
    }

    pub fn rep_width(&self) -> usize {
        self.config.encoder.rep_width()
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_map.num_clusters()
    }
}

/// Which weights inference should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightChoice {
    /// Averaged weights when present, otherwise the latest.
    #[default]
    Auto,
    Swa,
    Last,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub model: Model,
    pub store: ParamStore<T>,
    pub optimizer: AdamW<T>,
    pub swa: Option<SwaState<T>>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    /// Number of clusters recalled per instance.
    pub b_top: usize,
}

impl<T: Real> ModelBundle<T> {
    pub fn new(
        config: ModelConfig,
        cluster_map: ClusterMap,
        seed: u64,
        b_top: usize,
        lr: f64,
        weight_decay: f64,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = Model::init(config, cluster_map, &mut store, seed)?;
        if b_top == 0 || b_top > model.num_clusters() {
            return Err(Error::Config(alloc::format!(
                "b_top {b_top} outside 1..={}",
                model.num_clusters()
            )));
        }
        let optimizer = AdamW::new(&store, lr, weight_decay);
        Ok(Self {
            model,
            store,
            optimizer,
            swa: None,
            epoch: 0,
            seed,
            b_top,
        })
    }

    pub fn weights(&self, choice: WeightChoice) -> Result<&ParamStore<T>> {
        match (choice, &self.swa) {
            (WeightChoice::Last, _) => Ok(&self.store),
            (WeightChoice::Auto, Some(s)) | (WeightChoice::Swa, Some(s)) if s.count > 0 => Ok(&s.average),
            (WeightChoice::Auto, _) => Ok(&self.store),
            (WeightChoice::Swa, _) => Err(Error::Contract("no averaged weights in this bundle".into())),
        }
    }

    /// Checks every parameter shape against the architecture.
    pub fn check_consistent(&self) -> Result<()> {
        let m = &self.model;
        let width = m.rep_width();
        let expect = [
            (m.generator.weight, [m.num_clusters(), width].to_vec()),
            (m.generator.bias, [m.num_clusters()].to_vec()),
            (m.discriminator.embeddings, [m.config.num_labels, m.config.embed_dim].to_vec()),
            (m.discriminator.weight, [m.config.embed_dim, width].to_vec()),
            (m.discriminator.bias, [m.config.embed_dim].to_vec()),
        ];
        for (id, shape) in expect {
            for store in core::iter::once(&self.store).chain(self.swa.as_ref().map(|s| &s.average)) {
                if id.index() >= store.len() || store.value(id).shape() != shape.as_slice() {
                    return Err(Error::Contract(alloc::format!(
                        "parameter {} has an inconsistent shape",
                        id.index()
                    )));
                }
            }
        }
        Ok(())
    }
}
