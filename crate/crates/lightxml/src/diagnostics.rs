//! Gradient verification of the joint objective on a micro-model.

use lightxml_core::cluster::ClusterMap;
use lightxml_core::data::Batch;
use lightxml_core::encoder::EncoderConfig;
use lightxml_core::gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
use lightxml_core::graph::Graph;
use lightxml_core::model::{ModelBundle, ModelConfig};
use lightxml_core::rank::{Bottleneck, TargetPolarity};
use lightxml_core::rng::rng_for;
use lightxml_core::train::{joint_forward, CandidateSource, LossTerms};
use lightxml_core::Result;

/// Vocabulary 50, hidden 8, 2 layers, 4 clusters over 8 labels, label
/// embeddings of width 4, two documents.
pub fn micro_model(bottleneck: Bottleneck, seed: u64) -> Result<(ModelBundle<f64>, Batch)> {
    let mut enc = EncoderConfig::new(50, 8, 2, 2, 8);
    enc.ff_dim = 16;
    let map = ClusterMap::from_members(vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]], 8, 2, seed)?;
    let config = ModelConfig {
        encoder: enc,
        num_labels: 8,
        embed_dim: 4,
        bottleneck,
    };
    let bundle = ModelBundle::new(config, map, seed, 2, 1e-3, 0.01)?;
    let mut batch = Batch::from_sequences([&[1u32, 7, 9, 23, 41, 5, 6, 30][..], &[1, 12, 48, 3][..]]);
    batch.labels = vec![vec![1, 6], vec![3]];
    Ok((bundle, batch))
}

/// Analytic against central-difference gradients of the joint loss for
/// every parameter. The candidate sets are taken from the unperturbed
/// model and held fixed.
pub fn joint_gradcheck(bottleneck: Bottleneck, seed: u64) -> Result<GradCheckReport> {
    let (mut bundle, batch) = micro_model(bottleneck, seed)?;
    let model = bundle.model.clone();
    let b_top = bundle.b_top;
    let candidates = {
        let mut g = Graph::new(&bundle.store);
        joint_forward(
            &mut g,
            &model,
            &batch,
            b_top,
            CandidateSource::Dynamic,
            LossTerms::BOTH,
            TargetPolarity::PositivesHigh,
            false,
            &mut rng_for(0, 0),
        )?
        .candidates
    };
    grad_check(
        &mut bundle.store,
        |g| {
            let fw = joint_forward(
                g,
                &model,
                &batch,
                b_top,
                CandidateSource::Fixed(&candidates),
                LossTerms::BOTH,
                TargetPolarity::PositivesHigh,
                false,
                &mut rng_for(0, 0),
            )?;
            Ok(fw.total)
        },
        DEFAULT_STEP,
    )
}
