//! Joint training: gradient flow between the two losses, optimizer and
//! averaging bookkeeping, static sampling, determinism.

use lightxml_core::cluster::{build_cluster_map, build_label_reps};
use lightxml_core::data::XmcDataset;
use lightxml_core::encoder::EncoderConfig;
use lightxml_core::graph::Graph;
use lightxml_core::model::ModelBundle;
use lightxml_core::params::ParamStore;
use lightxml_core::rank::TargetPolarity;
use lightxml_core::recall::sample_candidates;
use lightxml_core::rng::rng_for;
use lightxml_core::synth::{generate, SynthConfig};
use lightxml_core::train::{
    build_static_cache, init_bundle, joint_forward, preset, train, train_step, CandidateSource, EpochRecord,
    LossTerms, SamplingMode, Silent, TrainConfig, TrainObserver,
};
use lightxml_core::{Error, Real};

struct Fixture {
    train: XmcDataset,
    config: TrainConfig,
    encoder: EncoderConfig,
}

fn fixture() -> Fixture {
    let corpus = generate(&SynthConfig {
        num_labels: 16,
        topics: 4,
        train_docs: 48,
        test_docs: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let data = corpus.datasets(24).unwrap();
    let config = TrainConfig {
        epochs: 3,
        batch_size: 8,
        b_top: Some(2),
        embed_dim: 6,
        cluster_size: 4,
        max_len: 24,
        lr: 1e-2,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut encoder = EncoderConfig::new(data.vocab.len(), 8, 2, 2, 24);
    encoder.ff_dim = 16;
    Fixture {
        train: data.train,
        config,
        encoder,
    }
}

fn bundle<T: Real>(f: &Fixture, config: &TrainConfig) -> ModelBundle<T> {
    let map = build_cluster_map(&build_label_reps(&f.train), config.cluster_size, config.seed).unwrap();
    let mc = config.model_config(f.encoder.clone(), f.train.num_labels);
    init_bundle(mc, map, &f.train, config).unwrap()
}

fn grads(b: &ModelBundle<f64>, f: &Fixture, terms: LossTerms) -> Vec<Option<Vec<f64>>> {
    let batch = f.train.sequential_batches(8).next().unwrap();
    let mut g = Graph::new(&b.store);
    let fw = joint_forward(
        &mut g,
        &b.model,
        &batch,
        b.b_top,
        CandidateSource::Dynamic,
        terms,
        TargetPolarity::PositivesHigh,
        false,
        &mut rng_for(0, 0),
    )
    .unwrap();
    g.backward(fw.total).unwrap().params()
}

#[test]
fn zero_lr_leaves_parameters_unchanged() {
    let f = fixture();
    let config = TrainConfig { lr: 0.0, ..f.config.clone() };
    let mut b: ModelBundle<f32> = bundle(&f, &config);
    let before = b.store.clone();
    for batch in f.train.batches(8, 1, 1) {
        let s = train_step(&mut b, &batch, &config, CandidateSource::Dynamic, LossTerms::BOTH).unwrap();
        assert!(s.loss_g.is_finite() && s.loss_d.is_finite());
    }
    assert_eq!(b.store, before);
}

#[test]
fn discriminator_loss_alone_skips_the_generator() {
    let f = fixture();
    let b: ModelBundle<f64> = bundle(&f, &f.config);
    let g = grads(&b, &f, LossTerms::DISCRIMINATOR);
    let w_g = b.model.generator.weight.index();
    assert!(g[w_g].as_ref().is_none_or(|v| v.iter().all(|&x| x == 0.0)));
    let enc_nonzero = b
        .store
        .iter()
        .filter(|(_, p)| p.name.starts_with("encoder."))
        .any(|(id, _)| g[id.index()].as_ref().is_some_and(|v| v.iter().any(|&x| x != 0.0)));
    assert!(enc_nonzero);
}

#[test]
fn encoder_gradient_is_the_sum_of_both_losses() {
    let f = fixture();
    let b: ModelBundle<f64> = bundle(&f, &f.config);
    let both = grads(&b, &f, LossTerms::BOTH);
    let gen = grads(&b, &f, LossTerms::GENERATOR);
    let disc = grads(&b, &f, LossTerms::DISCRIMINATOR);
    let mut checked = 0;
    for (id, p) in b.store.iter() {
        if !p.name.starts_with("encoder.") {
            continue;
        }
        let i = id.index();
        let zero = vec![0.0; p.value.len()];
        let (t, a, c) = (
            both[i].as_ref().unwrap(),
            gen[i].as_ref().unwrap_or(&zero),
            disc[i].as_ref().unwrap_or(&zero),
        );
        for ((t, a), c) in t.iter().zip(a).zip(c) {
            assert!((t - (a + c)).abs() <= 1e-12 * t.abs().max(1.0), "{}", p.name);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn total_is_the_sum_at_every_step() {
    let f = fixture();
    let mut b: ModelBundle<f32> = bundle(&f, &f.config);
    for batch in f.train.batches(8, 1, 1) {
        let s = train_step(&mut b, &batch, &f.config, CandidateSource::Dynamic, LossTerms::BOTH).unwrap();
        assert!((s.total - (s.loss_g + s.loss_d)).abs() <= 1e-6 * s.total.abs().max(1.0));
    }
}

#[test]
fn zero_epochs_returns_the_initial_bundle() {
    let f = fixture();
    let config = TrainConfig { epochs: 0, ..f.config.clone() };
    let mut b: ModelBundle<f32> = bundle(&f, &config);
    let before = b.clone();
    let log = train(&mut b, &f.train, None, &config, &mut Silent).unwrap();
    assert!(log.epochs.is_empty());
    assert_eq!(b, before);
}

#[test]
fn same_seed_same_bundle() {
    let f = fixture();
    let run = || {
        let mut b: ModelBundle<f64> = bundle(&f, &f.config);
        train(&mut b, &f.train, None, &f.config, &mut Silent).unwrap();
        b
    };
    assert_eq!(run(), run());
}

struct Snapshots(Vec<(usize, ParamStore<f64>)>);

impl TrainObserver<f64> for Snapshots {
    fn epoch_end(&mut self, b: &ModelBundle<f64>, r: &mut EpochRecord) -> lightxml_core::Result<()> {
        self.0.push((r.epoch, b.store.clone()));
        Ok(())
    }
}

#[test]
fn swa_is_the_mean_of_epoch_end_weights() {
    let f = fixture();
    let config = TrainConfig {
        epochs: 4,
        swa_start_epoch: Some(2),
        ..f.config.clone()
    };
    let mut b: ModelBundle<f64> = bundle(&f, &config);
    let mut snaps = Snapshots(Vec::new());
    train(&mut b, &f.train, None, &config, &mut snaps).unwrap();
    let swa = b.swa.as_ref().unwrap();
    assert_eq!((swa.count, swa.start_epoch), (3, 2));
    let used: Vec<&ParamStore<f64>> = snaps.0.iter().filter(|(e, _)| *e >= 2).map(|(_, s)| s).collect();
    for id in b.store.ids() {
        for (i, &avg) in swa.average.value(id).data().iter().enumerate() {
            let mean = used.iter().map(|s| s.value(id).data()[i]).sum::<f64>() / used.len() as f64;
            assert!((avg - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        }
    }
}

#[test]
fn static_mode_never_resamples_after_the_cache() {
    let f = fixture();
    let config = TrainConfig {
        epochs: 3,
        sampling: SamplingMode::Static,
        static_warmup_epochs: Some(1),
        ..f.config.clone()
    };
    let mut b: ModelBundle<f32> = bundle(&f, &config);
    let log = train(&mut b, &f.train, None, &config, &mut Silent).unwrap();
    assert!(log.cache_id.as_deref().is_some_and(|id| id.starts_with("epoch1-")));
    assert_eq!(log.samples_after_cache, 0);
    assert!(log.epochs[0].warmup && log.epochs[0].sample_calls > 0);
    assert!(log.epochs[1..].iter().all(|e| !e.warmup && e.sample_calls == 0));
}

#[test]
fn static_cache_matches_dynamic_then_stays_put() {
    let f = fixture();
    let mut b: ModelBundle<f64> = bundle(&f, &f.config);
    let cache = build_static_cache(&f.train, &b, 8).unwrap();
    assert_eq!(cache.len(), f.train.len());
    let dynamic = |b: &ModelBundle<f64>| {
        let mut out = Vec::new();
        for batch in f.train.sequential_batches(8) {
            let mut g = Graph::new(&b.store);
            let fw = joint_forward(
                &mut g,
                &b.model,
                &batch,
                b.b_top,
                CandidateSource::Dynamic,
                LossTerms::BOTH,
                TargetPolarity::PositivesHigh,
                false,
                &mut rng_for(0, 0),
            )
            .unwrap();
            out.extend(fw.candidates);
        }
        out
    };
    assert_eq!(dynamic(&b), cache.sets());
    // Push the generator bias so the ranking flips for everyone.
    let bias = b.model.generator.bias;
    let k = b.model.num_clusters();
    let data = b.store.value_mut(bias).data_mut();
    for (c, v) in data.iter_mut().enumerate() {
        *v = if c == k - 1 { 50.0 } else { -50.0 };
    }
    let after = dynamic(&b);
    assert_ne!(after, cache.sets());
    assert!(after.iter().all(|c| c.source_cluster.contains(&((k - 1) as u32))));
    let again = build_static_cache(&f.train, &b, 8).unwrap();
    assert_ne!(again.snapshot_id(), cache.snapshot_id());
}

#[test]
fn generator_change_changes_dynamic_candidates() {
    let f = fixture();
    let b: ModelBundle<f64> = bundle(&f, &f.config);
    let map = &b.model.cluster_map;
    let k = map.num_clusters();
    let mut scores: Vec<f64> = (0..k).map(|c| c as f64 / k as f64).collect();
    let first = sample_candidates(&scores, map, 1, None).unwrap();
    scores[0] = 2.0;
    let second = sample_candidates(&scores, map, 1, None).unwrap();
    assert_ne!(first, second);
    assert_eq!(second.source_cluster[0], 0);
}

#[test]
fn mismatched_cluster_map_is_a_config_error() {
    let f = fixture();
    let map = lightxml_core::cluster::ClusterMap::identity(f.train.num_labels + 1, 0);
    let mc = f.config.model_config(f.encoder.clone(), f.train.num_labels + 1);
    let e = init_bundle::<f32>(mc, map, &f.train, &f.config).unwrap_err();
    assert!(matches!(e, Error::Config(_)), "{e}");
}

#[test]
fn presets_carry_the_table_values() {
    let row = |n| {
        let p = preset(n).unwrap();
        (p.epochs, p.batch_size, p.embed_dim, p.cluster_size, p.max_len)
    };
    assert_eq!(row("eurlex-4k"), (20, 16, None, None, 512));
    assert_eq!(row("wiki-500k"), (10, 32, Some(500), Some(60), 128));
    assert_eq!(row("amazon-670k"), (15, 16, Some(400), Some(80), 128));
    assert_eq!(row("amazoncat-13k"), (5, 16, None, None, 512));
    assert_eq!(row("wiki10-31k"), (30, 16, None, None, 512));
    let c = TrainConfig::from_preset("eurlex-4k").unwrap();
    assert_eq!((c.cluster_size, c.embed_dim, c.lr), (1, 300, 1e-4));
}
