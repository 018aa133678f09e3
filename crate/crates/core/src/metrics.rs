//! Ranking metrics.

use crate::cluster::ClusterMap;
use crate::error::Result;
use crate::real::Real;
use crate::recall::top_clusters;

/// `|top-k ∩ truth| / k`; missing ranking slots count as misses.
/// `truth` must be sorted.
pub fn precision_at_k(ranking: &[u32], truth: &[u32], k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let hits = ranking
        .iter()
        .take(k)
        .filter(|l| truth.binary_search(l).is_ok())
        .count();
    hits as f64 / k as f64
}

/// Fraction of `truth` labels whose cluster is among the `b_top` best
/// scored clusters; 1.0 for an empty `truth`.
pub fn cluster_recall<T: Real>(scores: &[T], truth: &[u32], map: &ClusterMap, b_top: usize) -> Result<f64> {
    if truth.is_empty() {
        return Ok(1.0);
    }
    let top = top_clusters(scores, b_top)?;
    let hit = truth
        .iter()
        .filter(|&&l| top.contains(&map.cluster_of(l)))
        .count();
    Ok(hit as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalReport {
    pub p1: f64,
    pub p3: f64,
    pub p5: f64,
    /// Mean over instances with at least one positive label.
    pub cluster_recall: f64,
    pub instances: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn worked_example() {
        let truth = [1, 2];
        let ranking = [1, 3, 2, 4, 5];
        assert_eq!(precision_at_k(&ranking, &truth, 1), 1.0);
        assert_eq!(precision_at_k(&ranking, &truth, 3), 2.0 / 3.0);
        assert_eq!(precision_at_k(&ranking, &truth, 5), 2.0 / 5.0);
        assert_eq!(precision_at_k(&[1, 2], &truth, 2), 1.0);
        assert_eq!(precision_at_k(&[7, 8], &truth, 2), 0.0);
        // short rankings are padded with misses
        assert_eq!(precision_at_k(&[1], &truth, 5), 0.2);
    }

    #[test]
    fn recall_cases() {
        let map = ClusterMap::from_members(vec![vec![0, 1], vec![2, 3], vec![4, 5]], 6, 2, 0).unwrap();
        let s = [0.9f32, 0.2, 0.5];
        assert_eq!(cluster_recall(&s, &[0, 3], &map, 3).unwrap(), 1.0);
        assert_eq!(cluster_recall(&s, &[0, 1], &map, 1).unwrap(), 1.0);
        assert_eq!(cluster_recall(&s, &[0, 3], &map, 2).unwrap(), 0.5);
    }
}
