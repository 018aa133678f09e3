//! Cluster-recall generator: scores every label cluster from the text
//! representation and turns the top clusters into candidate labels.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::cluster::ClusterMap;
use crate::encoder::{head_init_std, linear};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub weight: ParamId,
    pub bias: ParamId,
    pub num_clusters: usize,
    pub rep_width: usize,
}

impl Generator {
    pub fn init<T: Real, R: Rng>(
        num_clusters: usize,
        rep_width: usize,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_normal("generator.W_g", &[num_clusters, rep_width], head_init_std(rep_width), rng);
        let bias = store.add_const("generator.b_g", &[num_clusters], 0.0, true);
        Self {
            weight,
            bias,
            num_clusters,
            rep_width,
        }
    }

    /// Per-cluster probabilities `σ(e·W_gᵀ + b_g)`, shape `[rows × K]`.
    pub fn scores<T: Real>(&self, g: &mut Graph<'_, T>, e: NodeId) -> Result<NodeId> {
        let z = linear(g, e, self.weight, self.bias)?;
        g.sigmoid(z)
    }
}

/// Summed cluster BCE per instance, averaged over the rows of the batch.
/// `targets` is the row-major multi-hot matrix matching `scores`.
pub fn recall_loss<T: Real>(g: &mut Graph<'_, T>, scores: NodeId, targets: &[T]) -> Result<NodeId> {
    if targets.iter().any(|&y| y != T::zero() && y != T::one()) {
        return Err(Error::Contract("recall targets must be 0 or 1".into()));
    }
    let rows = g.value(scores).rows().max(1);
    g.bce_loss(scores, targets, T::one() / T::lit(rows as f64))
}

/// Default number of recalled clusters: `ceil(15 · mean positives)` clamped
/// to `[min(5, K), K]`.
pub fn default_b_top(mean_positives: f64, num_clusters: usize) -> usize {
    let raw = num_traits::Float::ceil(15.0 * mean_positives).max(1.0) as usize;
    raw.clamp(num_clusters.min(5), num_clusters)
}

/// Ids of the `b_top` highest scores, best first; ties go to the lower id.
pub fn top_clusters<T: Real>(scores: &[T], b_top: usize) -> Result<Vec<usize>> {
    if b_top == 0 || b_top > scores.len() {
        return Err(Error::Config(format!(
            "b_top {b_top} outside 1..={}",
            scores.len()
        )));
    }
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    if b_top < ids.len() {
        ids.select_nth_unstable_by(b_top - 1, cmp);
        ids.truncate(b_top);
    }
    ids.sort_unstable_by(cmp);
    Ok(ids)
}

/// Candidate labels of one instance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Candidates {
    pub labels: Vec<u32>,
    pub is_positive: Vec<bool>,
    pub source_cluster: Vec<u32>,
}

impl Candidates {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Labels of the `b_top` best clusters in ranked cluster order and member
/// order. With `positives` (training) any missing positive is appended in
/// ascending id order and flagged.
pub fn sample_candidates<T: Real>(
    scores: &[T],
    map: &ClusterMap,
    b_top: usize,
    positives: Option<&[u32]>,
) -> Result<Candidates> {
    if scores.len() != map.num_clusters() {
        return Err(crate::error::dim_err(
            "sample_candidates",
            &[scores.len()],
            &[map.num_clusters()],
        ));
    }
    let top = top_clusters(scores, b_top)?;
    let pos = positives.unwrap_or(&[]);
    if let Some(&l) = pos.iter().find(|&&l| l as usize >= map.num_labels()) {
        return Err(Error::Contract(format!("positive label {l} outside label space")));
    }
    let is_pos = |l: u32| pos.binary_search(&l).is_ok();
    let mut out = Candidates::default();
    let mut selected = alloc::vec![false; map.num_clusters()];
    for &c in &top {
        selected[c] = true;
        for &l in map.members(c) {
            out.labels.push(l);
            out.is_positive.push(is_pos(l));
            out.source_cluster.push(c as u32);
        }
    }
    let mut missing: Vec<u32> = pos
        .iter()
        .copied()
        .filter(|&l| !selected[map.cluster_of(l)])
        .collect();
    missing.sort_unstable();
    missing.dedup();
    for l in missing {
        out.labels.push(l);
        out.is_positive.push(true);
        out.source_cluster.push(map.cluster_of(l) as u32);
    }
    Ok(out)
}
