//! Synthetic topic corpus whose words spell out their labels.
//!
//! Label `l` belongs to topic `l % topics`. A document picks a topic, one to
//! two of its labels and sometimes one label of the next topic, then writes
//! each label's own word twice, a few words of each involved topic and some
//! shared noise, in shuffled order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::data::{dataset_from_texts, Split, XmcDataset};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::text::Vocab;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_labels: usize,
    pub topics: usize,
    pub train_docs: usize,
    pub test_docs: usize,
    pub topic_words: usize,
    pub noise_words: usize,
    /// Probability of one extra label from the neighbouring topic.
    pub cross_topic: f64,
    /// Copies of each label's own word.
    pub label_repeats: usize,
    /// Topic words drawn per involved topic.
    pub topic_tokens: usize,
    /// Inclusive range of noise words per document.
    pub noise_tokens: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_labels: 64,
            topics: 8,
            train_docs: 2000,
            test_docs: 500,
            topic_words: 6,
            noise_words: 40,
            cross_topic: 0.2,
            label_repeats: 2,
            topic_tokens: 3,
            noise_tokens: (4, 10),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthDoc {
    pub text: String,
    /// Sorted.
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub train: Vec<SynthDoc>,
    pub test: Vec<SynthDoc>,
    pub num_labels: usize,
    pub topics: usize,
}

impl SynthCorpus {
    pub fn topic_of(&self, label: u32) -> usize {
        label as usize % self.topics
    }
}

fn document<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> SynthDoc {
    let per_topic = cfg.num_labels / cfg.topics;
    let topic = rng.random_range(0..cfg.topics);
    let in_topic: Vec<u32> = (0..per_topic).map(|j| (topic + j * cfg.topics) as u32).collect();
    let n = rng.random_range(1..=2);
    let mut labels: Vec<u32> = in_topic.choose_multiple(rng, n).copied().collect();
    let mut involved = alloc::vec![topic];
    if rng.random_bool(cfg.cross_topic) {
        let other = (topic + 1) % cfg.topics;
        let j = rng.random_range(0..per_topic);
        labels.push((other + j * cfg.topics) as u32);
        involved.push(other);
    }
    labels.sort_unstable();
    labels.dedup();

    let mut words: Vec<String> = Vec::new();
    for &l in &labels {
        for _ in 0..cfg.label_repeats {
            words.push(format!("label{l}"));
        }
    }
    for &t in &involved {
        for _ in 0..cfg.topic_tokens {
            let w = rng.random_range(0..cfg.topic_words);
            words.push(format!("topic{t}w{w}"));
        }
    }
    for _ in 0..rng.random_range(cfg.noise_tokens.0..=cfg.noise_tokens.1) {
        words.push(format!("noise{}", rng.random_range(0..cfg.noise_words)));
    }
    words.shuffle(rng);
    SynthDoc {
        text: words.join(" "),
        labels,
    }
}

/// Deterministic in `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.topics == 0 || cfg.num_labels < cfg.topics || !cfg.num_labels.is_multiple_of(cfg.topics) {
        return Err(Error::Config(format!(
            "{} labels cannot be split evenly over {} topics",
            cfg.num_labels, cfg.topics
        )));
    }
    if cfg.topic_words == 0 || cfg.label_repeats == 0 || cfg.noise_tokens.0 > cfg.noise_tokens.1 || cfg.noise_words == 0 || !(0.0..=1.0).contains(&cfg.cross_topic) {
        return Err(Error::Config("synthetic vocabulary sizes must be positive".into()));
    }
    let mut rng = rng_for(cfg.seed, 0x5E7);
    let train = (0..cfg.train_docs).map(|_| document(cfg, &mut rng)).collect();
    let test = (0..cfg.test_docs).map(|_| document(cfg, &mut rng)).collect();
    Ok(SynthCorpus {
        train,
        test,
        num_labels: cfg.num_labels,
        topics: cfg.topics,
    })
}

/// Vocabulary (built on the training texts) and both splits, tokenized.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub vocab: Vocab,
    pub train: XmcDataset,
    pub test: XmcDataset,
}

fn texts(docs: &[SynthDoc]) -> Vec<&str> {
    docs.iter().map(|d| d.text.as_str()).collect()
}

impl SynthCorpus {
    pub fn datasets(&self, max_len: usize) -> Result<SynthData> {
        let labels = |docs: &[SynthDoc]| docs.iter().map(|d| d.labels.clone()).collect::<Vec<_>>();
        let vocab = Vocab::build(texts(&self.train), 1)?;
        let train = dataset_from_texts(
            &texts(&self.train),
            &labels(&self.train),
            &vocab,
            self.num_labels,
            max_len,
            Split::Train,
        )?;
        let test = dataset_from_texts(
            &texts(&self.test),
            &labels(&self.test),
            &vocab,
            self.num_labels,
            max_len,
            Split::Test,
        )?;
        Ok(SynthData { vocab, train, test })
    }
}

/// Desk-scale settings under which the synthetic corpus is learned.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecipe {
    pub corpus: SynthConfig,
    pub train: TrainConfig,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
}

impl SynthRecipe {
    pub fn encoder(&self, vocab_size: usize) -> EncoderConfig {
        let mut c = EncoderConfig::new(vocab_size, self.hidden, self.layers, self.heads, self.train.max_len);
        c.ff_dim = self.ff_dim;
        c
    }
}

impl Default for SynthRecipe {
    fn default() -> Self {
        let train = TrainConfig {
            epochs: 20,
            batch_size: 8,
            b_top: Some(3),
            cluster_size: 8,
            max_len: 64,
            lr: 3e-3,
            // 0.5 keeps the train loss of a 32-wide encoder noisy long
            // after the test metrics have saturated.
            dropout: 0.1,
            seed: 7,
            ..TrainConfig::default()
        };
        Self {
            corpus: SynthConfig::default(),
            train,
            hidden: 32,
            layers: 5,
            heads: 2,
            ff_dim: 128,
        }
    }
}
