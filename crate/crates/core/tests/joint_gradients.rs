//! Joint-loss gradients of a micro-model against finite differences.

use lightxml_core::cluster::ClusterMap;
use lightxml_core::data::Batch;
use lightxml_core::encoder::EncoderConfig;
use lightxml_core::gradcheck::{grad_check, DEFAULT_STEP};
use lightxml_core::graph::Graph;
use lightxml_core::model::{ModelBundle, ModelConfig};
use lightxml_core::rank::{Bottleneck, TargetPolarity};
use lightxml_core::recall::Candidates;
use lightxml_core::rng::rng_for;
use lightxml_core::train::{joint_forward, CandidateSource, LossTerms};

fn micro(bottleneck: Bottleneck) -> (ModelBundle<f64>, Batch) {
    let mut enc = EncoderConfig::new(50, 8, 2, 2, 8);
    enc.ff_dim = 16;
    let map = ClusterMap::from_members(vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]], 8, 2, 0).unwrap();
    let cfg = ModelConfig {
        encoder: enc,
        num_labels: 8,
        embed_dim: 4,
        bottleneck,
    };
    let bundle = ModelBundle::new(cfg, map, 11, 2, 1e-3, 0.01).unwrap();
    let mut batch = Batch::from_sequences([&[1u32, 7, 9, 23, 41, 5, 6, 30][..], &[1, 12, 48, 3][..]]);
    batch.labels = vec![vec![1, 6], vec![3]];
    (bundle, batch)
}

fn base_candidates(bundle: &ModelBundle<f64>, batch: &Batch) -> Vec<Candidates> {
    let mut g = Graph::new(&bundle.store);
    joint_forward(
        &mut g,
        &bundle.model,
        batch,
        bundle.b_top,
        CandidateSource::Dynamic,
        LossTerms::BOTH,
        TargetPolarity::PositivesHigh,
        false,
        &mut rng_for(0, 0),
    )
    .unwrap()
    .candidates
}

#[test]
fn joint_loss_matches_finite_differences() {
    for bottleneck in [Bottleneck::Sigmoid, Bottleneck::Relu] {
        let (mut bundle, batch) = micro(bottleneck);
        let cands = base_candidates(&bundle, &batch);
        assert!(cands.iter().any(|c| c.is_positive.iter().any(|&p| !p)));
        let model = bundle.model.clone();
        let start = std::time::Instant::now();
        let report = grad_check(
            &mut bundle.store,
            |g| {
                let fw = joint_forward(
                    g,
                    &model,
                    &batch,
                    2,
                    CandidateSource::Fixed(&cands),
                    LossTerms::BOTH,
                    TargetPolarity::PositivesHigh,
                    false,
                    &mut rng_for(0, 0),
                )?;
                Ok(fw.total)
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "{bottleneck:?}: {} at {}[{}]",
            report.max_rel_err,
            report.worst_param,
            report.worst_index
        );
        assert!(start.elapsed().as_secs() < 30);
    }
}
