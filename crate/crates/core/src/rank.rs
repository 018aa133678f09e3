//! Label-rank discriminator: a bottleneck projection of the text
//! representation scored against gathered label embeddings.

use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::encoder::{head_init_std, linear};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::recall::Candidates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Bottleneck {
    #[default]
    Sigmoid,
    Relu,
}

/// Which candidates get target 1 in the ranking loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetPolarity {
    #[default]
    PositivesHigh,
    /// Positives 0, negatives 1. Debug comparison only: prediction assumes
    /// positives score high.
    PositivesLow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub embeddings: ParamId,
    pub weight: ParamId,
    pub bias: ParamId,
    pub num_labels: usize,
    pub embed_dim: usize,
    pub rep_width: usize,
    pub bottleneck: Bottleneck,
}

impl Discriminator {
    pub fn init<T: Real, R: Rng>(
        num_labels: usize,
        embed_dim: usize,
        rep_width: usize,
        bottleneck: Bottleneck,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Self {
        let std = 1.0 / (embed_dim as f64).sqrt();
        let embeddings = store.add_normal("discriminator.E", &[num_labels, embed_dim], std, rng);
        let weight = store.add_normal("discriminator.W_h", &[embed_dim, rep_width], head_init_std(rep_width), rng);
        let bias = store.add_const("discriminator.b_h", &[embed_dim], 0.0, true);
        Self {
            embeddings,
            weight,
            bias,
            num_labels,
            embed_dim,
            rep_width,
            bottleneck,
        }
    }

    /// Closed-form parameter count `L·b + b·(width + 1)`.
    pub fn param_count(num_labels: usize, embed_dim: usize, rep_width: usize) -> usize {
        num_labels * embed_dim + embed_dim * (rep_width + 1)
    }

    /// Hidden bottleneck `act(e·W_hᵀ + b_h)`, shape `[rows × embed_dim]`.
    pub fn bottleneck<T: Real>(&self, g: &mut Graph<'_, T>, e: NodeId) -> Result<NodeId> {
        let z = linear(g, e, self.weight, self.bias)?;
        match self.bottleneck {
            Bottleneck::Sigmoid => g.sigmoid(z),
            Bottleneck::Relu => g.relu(z),
        }
    }

    /// Embedding rows of `labels`, shape `[len × embed_dim]`.
    pub fn gather<T: Real>(&self, g: &mut Graph<'_, T>, labels: &[u32]) -> Result<NodeId> {
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= self.num_labels) {
            return Err(Error::Contract(alloc::format!(
                "candidate label {l} outside label space of {}",
                self.num_labels
            )));
        }
        let ids: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let table = g.param(self.embeddings);
        g.gather_rows(table, &ids)
    }

    /// Probabilities `σ(M_j · h_i)` for every candidate `j` of every row `i`,
    /// flattened in row order.
    pub fn scores<T: Real>(&self, g: &mut Graph<'_, T>, e: NodeId, candidates: &[Candidates]) -> Result<NodeId> {
        let rows = g.value(e).rows();
        if candidates.len() != rows {
            return Err(crate::error::dim_err("rank_scores", &[rows], &[candidates.len()]));
        }
        let h = self.bottleneck(g, e)?;
        let labels: Vec<u32> = candidates.iter().flat_map(|c| c.labels.iter().copied()).collect();
        let owners: Vec<usize> = candidates
            .iter()
            .enumerate()
            .flat_map(|(i, c)| core::iter::repeat_n(i, c.len()))
            .collect();
        let m = self.gather(g, &labels)?;
        let hh = g.gather_rows(h, &owners)?;
        let z = g.row_dot(m, hh)?;
        g.sigmoid(z)
    }
}

/// Summed candidate BCE per instance averaged over `rows` instances.
pub fn rank_loss<T: Real>(
    g: &mut Graph<'_, T>,
    scores: NodeId,
    is_positive: &[bool],
    rows: usize,
    polarity: TargetPolarity,
) -> Result<NodeId> {
    let target: Vec<T> = is_positive
        .iter()
        .map(|&p| {
            let high = match polarity {
                TargetPolarity::PositivesHigh => p,
                TargetPolarity::PositivesLow => !p,
            };
            if high {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    g.bce_loss(scores, &target, T::one() / T::lit(rows.max(1) as f64))
}

/// `σ(d/2)`: score of an all-ones embedding row against a zero-input
/// sigmoid bottleneck.
pub fn half_sigmoid_score(embed_dim: usize) -> f64 {
    1.0 / (1.0 + Float::exp(-(embed_dim as f64) / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn setup(l: usize, d: usize, w: usize) -> (ParamStore<f64>, Discriminator) {
        let mut store = ParamStore::new();
        let disc = Discriminator::init(l, d, w, Bottleneck::Sigmoid, &mut store, &mut rng_for(2, 0));
        (store, disc)
    }

    fn cands(labels: &[u32]) -> Candidates {
        Candidates {
            labels: labels.to_vec(),
            is_positive: vec![false; labels.len()],
            source_cluster: vec![0; labels.len()],
        }
    }

    #[test]
    fn gather_first_row_and_shapes() {
        let (store, disc) = setup(10, 400, 6);
        let mut g = Graph::new(&store);
        let m = disc.gather(&mut g, &[0]).unwrap();
        assert_eq!(g.value(m).data(), &store.value(disc.embeddings).data()[..400]);
        let ids: Vec<u32> = (0..9).collect();
        let m = disc.gather(&mut g, &ids).unwrap();
        assert_eq!(g.shape(m), &[9, 400]);
        assert!(matches!(disc.gather(&mut g, &[10]), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_embeddings_score_half() {
        let (mut store, disc) = setup(5, 3, 4);
        store.value_mut(disc.embeddings).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut g = Graph::new(&store);
        let e = g.constant(Tensor::new(&[1, 4], vec![0.7, -0.2, 0.1, 3.0]).unwrap());
        let s = disc.scores(&mut g, e, &[cands(&[0, 2, 4])]).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn all_ones_row_with_zero_bottleneck() {
        let d = 6;
        let (mut store, disc) = setup(3, d, 4);
        store.value_mut(disc.embeddings).data_mut().iter_mut().for_each(|v| *v = 1.0);
        store.value_mut(disc.weight).data_mut().iter_mut().for_each(|v| *v = 0.0);
        for scale in [1.0, 10.0] {
            let mut g = Graph::new(&store);
            let e = g.constant(Tensor::new(&[1, 4], vec![scale, -scale, 0.5 * scale, 2.0]).unwrap());
            let s = disc.scores(&mut g, e, &[cands(&[1])]).unwrap();
            let v = g.value(s).data()[0];
            assert!((v - half_sigmoid_score(d)).abs() < 1e-12);
        }
        // sigma(3) for d = 6
        assert!((half_sigmoid_score(6) - 0.952_574_126_822_433_4).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let s = g.constant(Tensor::new(&[6], vec![0.5; 6]).unwrap());
        let l = rank_loss(&mut g, s, &[true, false, false, true, false, false], 1, TargetPolarity::PositivesHigh).unwrap();
        assert!((g.value(l).item().unwrap() - 4.159).abs() < 1e-3);

        let s = g.constant(Tensor::new(&[2], vec![0.9, 0.1]).unwrap());
        let l = rank_loss(&mut g, s, &[true, false], 1, TargetPolarity::PositivesHigh).unwrap();
        assert!((g.value(l).item().unwrap() - 0.2107).abs() < 1e-4);
        let lit = rank_loss(&mut g, s, &[true, false], 1, TargetPolarity::PositivesLow).unwrap();
        assert!(g.value(lit).item().unwrap() > 4.0);

        let eps = 1e-12;
        let s = g.constant(Tensor::new(&[3], vec![1.0 - eps, eps, eps]).unwrap());
        let l = rank_loss(&mut g, s, &[true, false, false], 1, TargetPolarity::PositivesHigh).unwrap();
        assert!(g.value(l).item().unwrap() < 1e-10);
    }

    #[test]
    fn param_count_formula() {
        let (store, disc) = setup(17, 5, 12);
        let counted = store.numel_with_prefix("discriminator.");
        assert_eq!(counted, Discriminator::param_count(17, 5, 12));
        assert_eq!(disc.embed_dim, 5);
    }
}
