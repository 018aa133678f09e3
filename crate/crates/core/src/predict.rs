//! End-to-end prediction: recall top clusters, rank their labels, fuse the
//! two scores by product, and keep the best K.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::data::{Batch, XmcDataset};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{cluster_recall, precision_at_k, EvalReport};
use crate::model::{ModelBundle, WeightChoice};
use crate::real::Real;
use crate::recall::{sample_candidates, Candidates};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Prediction {
    /// `(label, fused score)`, best first.
    pub labels: Vec<(u32, f64)>,
    /// Fewer than K candidates were available.
    pub short: bool,
}

impl Prediction {
    pub fn ranking(&self) -> Vec<u32> {
        self.labels.iter().map(|&(l, _)| l).collect()
    }
}

/// Scores of one row before truncation to K.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRow {
    pub recall: Vec<f64>,
    /// `(label, recall · rank)` for every recalled candidate.
    pub fused: Vec<(u32, f64)>,
}

/// Recall and fused candidate scores for every row of `batch`.
pub fn score_batch<T: Real>(
    bundle: &ModelBundle<T>,
    batch: &Batch,
    b_top: usize,
    weights: WeightChoice,
) -> Result<Vec<ScoredRow>> {
    let store = bundle.weights(weights)?;
    let m = &bundle.model;
    let mut g = Graph::new(store);
    // no dropout at inference, the generator is never consulted
    let mut rng = rng_for(0, 0);
    let e = m
        .encoder
        .encode(&mut g, &batch.tokens, &batch.mask, batch.rows, batch.seq, false, &mut rng)?;
    let recall = m.generator.scores(&mut g, e)?;
    let k = m.num_clusters();
    let recall_rows: Vec<Vec<f64>> = g
        .value(recall)
        .data()
        .chunks(k)
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect();
    let cands: Vec<Candidates> = recall_rows
        .iter()
        .map(|r| sample_candidates(r, &m.cluster_map, b_top, None))
        .collect::<Result<_>>()?;
    let rank = m.discriminator.scores(&mut g, e, &cands)?;
    let rank = g.value(rank).data();
    let mut off = 0;
    let mut out = Vec::with_capacity(batch.rows);
    for (r, c) in recall_rows.into_iter().zip(&cands) {
        let fused = c
            .labels
            .iter()
            .zip(&c.source_cluster)
            .zip(&rank[off..off + c.len()])
            .map(|((&l, &src), &s)| (l, r[src as usize] * s.as_f64()))
            .collect();
        off += c.len();
        out.push(ScoredRow { recall: r, fused });
    }
    Ok(out)
}

/// Top `k` of `(label, score)` pairs by score, ties to the lower label id.
pub fn top_k(mut scored: Vec<(u32, f64)>, k: usize) -> Prediction {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let short = scored.len() < k;
    scored.truncate(k);
    Prediction {
        labels: scored,
        short,
    }
}

pub fn predict<T: Real>(
    bundle: &ModelBundle<T>,
    batch: &Batch,
    b_top: usize,
    k: usize,
    weights: WeightChoice,
) -> Result<Vec<Prediction>> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    Ok(score_batch(bundle, batch, b_top, weights)?
        .into_iter()
        .map(|row| top_k(row.fused, k))
        .collect())
}

/// Averages fused scores over several models (labels a model did not recall
/// count as 0 for it) and keeps the best `k`. Every model sees the batch
/// prepared for it.
pub fn ensemble_predict<T: Real>(
    members: &[(&ModelBundle<T>, &Batch)],
    k: usize,
    weights: WeightChoice,
) -> Result<Vec<Prediction>> {
    let Some((first, first_batch)) = members.first() else {
        return Err(Error::Config("empty ensemble".into()));
    };
    let labels = first.model.config.num_labels;
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut totals: Vec<BTreeMap<u32, f64>> = alloc::vec![BTreeMap::new(); first_batch.rows];
    for (bundle, batch) in members {
        if bundle.model.config.num_labels != labels {
            return Err(Error::Config(alloc::format!(
                "ensemble members disagree on the label space ({} vs {labels})",
                bundle.model.config.num_labels
            )));
        }
        if batch.rows != first_batch.rows {
            return Err(Error::Config("ensemble batches differ in size".into()));
        }
        for (acc, row) in totals.iter_mut().zip(score_batch(bundle, batch, bundle.b_top, weights)?) {
            for (l, s) in row.fused {
                *acc.entry(l).or_insert(0.0) += s;
            }
        }
    }
    let n = members.len() as f64;
    Ok(totals
        .into_iter()
        .map(|acc| top_k(acc.into_iter().map(|(l, s)| (l, s / n)).collect(), k))
        .collect())
}

/// P@{1,3,5} and cluster recall of `bundle` on `dataset`.
pub fn evaluate<T: Real>(
    bundle: &ModelBundle<T>,
    dataset: &XmcDataset,
    b_top: usize,
    batch_size: usize,
    weights: WeightChoice,
) -> Result<EvalReport> {
    let mut rep = EvalReport::default();
    let mut recall_sum = 0.0;
    let mut recall_n = 0usize;
    for batch in dataset.sequential_batches(batch_size) {
        let rows = score_batch(bundle, &batch, b_top, weights)?;
        for (row, truth) in rows.into_iter().zip(&batch.labels) {
            if !truth.is_empty() {
                recall_sum += cluster_recall(&row.recall, truth, &bundle.model.cluster_map, b_top)?;
                recall_n += 1;
            }
            let ranking = top_k(row.fused, 5).ranking();
            rep.p1 += precision_at_k(&ranking, truth, 1);
            rep.p3 += precision_at_k(&ranking, truth, 3);
            rep.p5 += precision_at_k(&ranking, truth, 5);
            rep.instances += 1;
        }
    }
    if rep.instances > 0 {
        let n = rep.instances as f64;
        rep.p1 /= n;
        rep.p3 /= n;
        rep.p5 /= n;
    }
    rep.cluster_recall = if recall_n > 0 {
        recall_sum / recall_n as f64
    } else {
        1.0
    };
    Ok(rep)
}

/// Averaged-ensemble version of [`evaluate`]; `datasets[i]` is tokenized for
/// `bundles[i]`.
pub fn evaluate_ensemble<T: Real>(
    bundles: &[&ModelBundle<T>],
    datasets: &[&XmcDataset],
    batch_size: usize,
    weights: WeightChoice,
) -> Result<EvalReport> {
    if bundles.len() != datasets.len() || bundles.is_empty() {
        return Err(Error::Config("one dataset per ensemble member required".into()));
    }
    let n_docs = datasets[0].len();
    if datasets.iter().any(|d| d.len() != n_docs) {
        return Err(Error::Config("ensemble datasets differ in size".into()));
    }
    let iters: Vec<Vec<Batch>> = datasets
        .iter()
        .map(|d| d.sequential_batches(batch_size).collect())
        .collect();
    let mut rep = EvalReport::default();
    let mut recall_sum = 0.0;
    let mut recall_n = 0usize;
    for bi in 0..iters[0].len() {
        let members: Vec<(&ModelBundle<T>, &Batch)> = bundles
            .iter()
            .zip(&iters)
            .map(|(b, batches)| (*b, &batches[bi]))
            .collect();
        let preds = ensemble_predict(&members, 5, weights)?;
        let truth_rows = &iters[0][bi].labels;
        let first = score_batch(bundles[0], &iters[0][bi], bundles[0].b_top, weights)?;
        for ((p, truth), row) in preds.iter().zip(truth_rows).zip(first) {
            let ranking = p.ranking();
            rep.p1 += precision_at_k(&ranking, truth, 1);
            rep.p3 += precision_at_k(&ranking, truth, 3);
            rep.p5 += precision_at_k(&ranking, truth, 5);
            rep.instances += 1;
            if !truth.is_empty() {
                recall_sum += cluster_recall(&row.recall, truth, &bundles[0].model.cluster_map, bundles[0].b_top)?;
                recall_n += 1;
            }
        }
    }
    if rep.instances > 0 {
        let n = rep.instances as f64;
        rep.p1 /= n;
        rep.p3 /= n;
        rep.p5 /= n;
    }
    rep.cluster_recall = if recall_n > 0 {
        recall_sum / recall_n as f64
    } else {
        1.0
    };
    Ok(rep)
}
