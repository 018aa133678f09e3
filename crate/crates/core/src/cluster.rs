//! Label representations and balanced recursive 2-means label clustering.
//!
//! Labels are represented by the normalized sum of the sparse features of
//! the training documents carrying them. The label set is then split
//! recursively by balanced 2-means until every part holds at most `s`
//! labels; the parts become the clusters of a two-level label tree.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;

use num_traits::Float;

use crate::data::XmcDataset;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::sparse::SparseVec;

pub const MAX_ITERS: usize = 50;
pub const INIT_SAMPLE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRep {
    pub label: u32,
    /// Unit L2 norm, or zero for labels never seen in training.
    pub rep: SparseVec,
}

pub fn build_label_reps(dataset: &XmcDataset) -> Vec<LabelRep> {
    let mut docs_of: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_labels];
    for (i, d) in dataset.documents.iter().enumerate() {
        for &l in &d.labels {
            docs_of[l as usize].push(i);
        }
    }
    docs_of
        .into_iter()
        .enumerate()
        .map(|(l, docs)| LabelRep {
            label: l as u32,
            rep: SparseVec::sum(
                dataset.feature_dim,
                docs.iter().map(|&i| &dataset.documents[i].sparse),
            )
            .normalized(),
        })
        .collect()
}

/// Labels of one split, re-indexed onto the union of their features.
struct LocalReps {
    rows: Vec<Vec<(usize, f64)>>,
    labels: Vec<u32>,
    width: usize,
}

impl LocalReps {
    fn new(items: &[&LabelRep]) -> Self {
        let mut feats: Vec<u32> = items
            .iter()
            .flat_map(|r| r.rep.indices().iter().copied())
            .collect();
        feats.sort_unstable();
        feats.dedup();
        let rows = items
            .iter()
            .map(|r| {
                r.rep
                    .iter()
                    .filter(|(_, v)| *v != 0.0)
                    .map(|(i, v)| (feats.binary_search(&i).expect("feature in union"), v as f64))
                    .collect()
            })
            .collect();
        Self {
            rows,
            labels: items.iter().map(|r| r.label).collect(),
            width: feats.len(),
        }
    }

    fn is_zero(&self, i: usize) -> bool {
        self.rows[i].is_empty()
    }

    fn dot(&self, i: usize, dense: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(j, v)| v * dense[j]).sum()
    }

    fn dot_rows(&self, a: usize, b: usize) -> f64 {
        let (ra, rb) = (&self.rows[a], &self.rows[b]);
        let (mut x, mut y, mut acc) = (0, 0, 0.0);
        while x < ra.len() && y < rb.len() {
            match ra[x].0.cmp(&rb[y].0) {
                core::cmp::Ordering::Less => x += 1,
                core::cmp::Ordering::Greater => y += 1,
                core::cmp::Ordering::Equal => {
                    acc += ra[x].1 * rb[y].1;
                    x += 1;
                    y += 1;
                }
            }
        }
        acc
    }

    /// Normalized sum of the given rows.
    fn centroid(&self, members: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; self.width];
        for &i in members {
            for &(j, v) in &self.rows[i] {
                c[j] += v;
            }
        }
        let n = Float::sqrt(c.iter().map(|v| v * v).sum::<f64>());
        if n > 0.0 {
            c.iter_mut().for_each(|v| *v /= n);
        }
        c
    }

    fn one_hot_centroid(&self, i: usize) -> Vec<f64> {
        self.centroid(&[i])
    }
}

/// Seed centroids: the pair with minimal mutual cosine among a random
/// sample of at most [`INIT_SAMPLE`] non-zero labels.
fn init_pair<R: Rng>(local: &LocalReps, rng: &mut R) -> Option<(usize, usize)> {
    let n = local.rows.len();
    let mut pool: Vec<usize> = sample(rng, n, n.min(INIT_SAMPLE)).into_vec();
    pool.retain(|&i| !local.is_zero(i));
    pool.sort_unstable_by_key(|&i| local.labels[i]);
    let mut best: Option<(f64, usize, usize)> = None;
    for (x, &a) in pool.iter().enumerate() {
        for &b in &pool[x + 1..] {
            let c = local.dot_rows(a, b);
            if best.is_none_or(|(bc, _, _)| c < bc) {
                best = Some((c, a, b));
            }
        }
    }
    best.map(|(_, a, b)| (a, b))
}

/// Positions of `items` assigned to the left side (exactly `n_left`) and the
/// right side.
fn split_sized<R: Rng>(items: &[&LabelRep], n_left: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let n = items.len();
    debug_assert!(n_left <= n);
    let local = LocalReps::new(items);
    let (mut c_left, mut c_right) = match init_pair(&local, rng) {
        Some((a, b)) => (local.one_hot_centroid(a), local.one_hot_centroid(b)),
        None => (vec![0.0; local.width], vec![0.0; local.width]),
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut prev: Option<Vec<usize>> = None;
    for _ in 0..MAX_ITERS {
        let scores: Vec<f64> = (0..n)
            .map(|i| local.dot(i, &c_left) - local.dot(i, &c_right))
            .collect();
        order.sort_by(|&a, &b| {
            local
                .is_zero(a)
                .cmp(&local.is_zero(b))
                .then_with(|| scores[b].total_cmp(&scores[a]))
                .then_with(|| local.labels[a].cmp(&local.labels[b]))
        });
        let mut left: Vec<usize> = order[..n_left].to_vec();
        left.sort_unstable();
        if prev.as_ref() == Some(&left) {
            break;
        }
        let mut right: Vec<usize> = order[n_left..].to_vec();
        right.sort_unstable();
        c_left = local.centroid(&left);
        c_right = local.centroid(&right);
        prev = Some(left);
    }
    let left = prev.unwrap_or_default();
    let mut is_left = vec![false; n];
    left.iter().for_each(|&i| is_left[i] = true);
    let right = (0..n).filter(|&i| !is_left[i]).collect();
    (left, right)
}

/// One balanced 2-means split; the left side gets the extra label when the
/// count is odd.
pub fn balanced_2means(reps: &[LabelRep], seed: u64) -> Result<(Vec<u32>, Vec<u32>)> {
    if reps.len() < 2 {
        return Err(Error::Contract(alloc::format!(
            "balanced_2means needs at least 2 labels, got {}",
            reps.len()
        )));
    }
    let items: Vec<&LabelRep> = reps.iter().collect();
    let mut rng = rng_for(seed, 0xC1A5);
    let (l, r) = split_sized(&items, reps.len().div_ceil(2), &mut rng);
    let ids = |v: Vec<usize>| -> Vec<u32> {
        let mut out: Vec<u32> = v.into_iter().map(|i| reps[i].label).collect();
        out.sort_unstable();
        out
    };
    Ok((ids(l), ids(r)))
}

/// Label → cluster assignment and its inverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMap {
    assign: Vec<u32>,
    members: Vec<Vec<u32>>,
    max_size: usize,
    seed: u64,
}

impl ClusterMap {
    /// Builds and validates a map from per-cluster member lists.
    pub fn from_members(
        members: Vec<Vec<u32>>,
        num_labels: usize,
        max_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut assign = vec![u32::MAX; num_labels];
        let mut members = members;
        for (c, m) in members.iter_mut().enumerate() {
            m.sort_unstable();
            for &l in m.iter() {
                let slot = assign.get_mut(l as usize).ok_or_else(|| {
                    Error::Contract(alloc::format!("cluster {c} holds unknown label {l}"))
                })?;
                if *slot != u32::MAX {
                    return Err(Error::Contract(alloc::format!(
                        "label {l} appears in clusters {} and {c}",
                        *slot
                    )));
                }
                *slot = c as u32;
            }
        }
        if let Some(l) = assign.iter().position(|&c| c == u32::MAX) {
            return Err(Error::Contract(alloc::format!("label {l} is in no cluster")));
        }
        Ok(Self {
            assign,
            members,
            max_size,
            seed,
        })
    }

    /// Every label in its own cluster, cluster id = label id.
    pub fn identity(num_labels: usize, seed: u64) -> Self {
        Self {
            assign: (0..num_labels as u32).collect(),
            members: (0..num_labels as u32).map(|l| vec![l]).collect(),
            max_size: 1,
            seed,
        }
    }

    pub fn num_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn num_labels(&self) -> usize {
        self.assign.len()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cluster_of(&self, label: u32) -> usize {
        self.assign[label as usize] as usize
    }

    pub fn assignments(&self) -> &[u32] {
        &self.assign
    }

    pub fn members(&self, cluster: usize) -> &[u32] {
        &self.members[cluster]
    }

    pub fn all_members(&self) -> &[Vec<u32>] {
        &self.members
    }

    /// Whether every cluster size lies in `(s/2, s]`, or the map is a
    /// single cluster of `L ≤ s` labels.
    pub fn satisfies_size_bound(&self) -> bool {
        let s = self.max_size;
        if self.members.len() == 1 && self.num_labels() <= s {
            return true;
        }
        self.members.iter().all(|m| 2 * m.len() > s && m.len() <= s)
    }

    /// Multi-hot cluster targets of a label set.
    pub fn cluster_targets(&self, labels: &[u32]) -> Result<Vec<bool>> {
        let mut y = vec![false; self.members.len()];
        for &l in labels {
            let c = self.assign.get(l as usize).ok_or_else(|| {
                Error::Contract(alloc::format!(
                    "label {l} outside label space of {}",
                    self.assign.len()
                ))
            })?;
            y[*c as usize] = true;
        }
        Ok(y)
    }
}

/// Whether any partition of `num_labels` into parts of size in `(s/2, s]`
/// exists.
pub fn size_bound_feasible(num_labels: usize, s: usize) -> bool {
    if num_labels <= s {
        return true;
    }
    let k = num_labels.div_ceil(s);
    2 * (num_labels / k) > s
}

/// Recursively partitions labels by balanced 2-means until every part holds
/// at most `s` labels. Clusters are numbered in depth-first, left-first
/// order.
///
/// The number of leaves is fixed up front at `ceil(L/s)` and every split
/// divides both labels and leaves between its sides so that all leaves end
/// up with `floor(L/K)` or `ceil(L/K)` labels. When a node has an even leaf
/// count this is an exact halving.
pub fn build_cluster_map(reps: &[LabelRep], s: usize, seed: u64) -> Result<ClusterMap> {
    if s == 0 {
        return Err(Error::Config("cluster size must be at least 1".into()));
    }
    let num_labels = reps.len();
    if reps.iter().enumerate().any(|(i, r)| r.label as usize != i) {
        return Err(Error::Contract("label reps must be ordered by label id".into()));
    }
    if s == 1 {
        return Ok(ClusterMap::identity(num_labels, seed));
    }
    if num_labels <= s {
        let all = (0..num_labels as u32).collect();
        return ClusterMap::from_members(vec![all], num_labels, s, seed);
    }
    let k = num_labels.div_ceil(s);
    let mut rng = rng_for(seed, 0xC1A5);
    let mut leaves = Vec::with_capacity(k);
    let items: Vec<&LabelRep> = reps.iter().collect();
    split_recursive(&items, k, &mut rng, &mut leaves);
    ClusterMap::from_members(leaves, num_labels, s, seed)
}

fn left_share(n: usize, k: usize) -> (usize, usize) {
    let k_left = k.div_ceil(2);
    let n_left = if k.is_multiple_of(2) {
        n.div_ceil(2)
    } else {
        let (a, r) = (n / k, n % k);
        a * k_left + (r * k_left).div_ceil(k)
    };
    (n_left, k_left)
}

fn split_recursive<R: Rng>(items: &[&LabelRep], k: usize, rng: &mut R, out: &mut Vec<Vec<u32>>) {
    if k <= 1 {
        let mut m: Vec<u32> = items.iter().map(|r| r.label).collect();
        m.sort_unstable();
        out.push(m);
        return;
    }
    let (n_left, k_left) = left_share(items.len(), k);
    let (l, r) = split_sized(items, n_left, rng);
    let left: Vec<&LabelRep> = l.into_iter().map(|i| items[i]).collect();
    let right: Vec<&LabelRep> = r.into_iter().map(|i| items[i]).collect();
    split_recursive(&left, k_left, rng, out);
    split_recursive(&right, k - k_left, rng, out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn dense_rep(label: u32, v: &[f32]) -> LabelRep {
        let (idx, val): (Vec<u32>, Vec<f32>) = v
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, x)| (i as u32, *x))
            .unzip();
        LabelRep {
            label,
            rep: SparseVec::new(v.len(), idx, val).unwrap().normalized(),
        }
    }

    #[test]
    fn two_means_separates_directions() {
        let reps = vec![
            dense_rep(0, &[1.0, 0.0]),
            dense_rep(1, &[0.95, 0.05]),
            dense_rep(2, &[0.0, 1.0]),
            dense_rep(3, &[0.05, 0.95]),
        ];
        let (l, r) = balanced_2means(&reps, 3).unwrap();
        let mut sides = [l, r];
        sides.sort();
        assert_eq!(sides, [vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn two_labels_and_ties() {
        let reps = vec![dense_rep(0, &[1.0, 0.0]), dense_rep(1, &[0.0, 1.0])];
        let (l, r) = balanced_2means(&reps, 0).unwrap();
        assert_eq!((l.len(), r.len()), (1, 1));

        let same: Vec<_> = (0..6).map(|i| dense_rep(i, &[0.3, 0.4])).collect();
        assert_eq!(
            balanced_2means(&same, 5).unwrap(),
            (vec![0, 1, 2], vec![3, 4, 5])
        );
        let odd: Vec<_> = (0..5).map(|i| dense_rep(i, &[0.3, 0.4])).collect();
        assert_eq!(balanced_2means(&odd, 5).unwrap(), (vec![0, 1, 2], vec![3, 4]));
        assert!(balanced_2means(&same[..1], 0).is_err());
    }

    #[test]
    fn zero_labels_sort_last() {
        let mut reps: Vec<_> = (0..4).map(|i| dense_rep(i, &[0.0, 0.0])).collect();
        reps.push(dense_rep(4, &[1.0, 0.0]));
        reps.push(dense_rep(5, &[1.0, 0.1]));
        let (l, _) = balanced_2means(&reps, 1).unwrap();
        assert!(l.contains(&4) && l.contains(&5));
    }

    #[test]
    fn small_label_sets() {
        let reps: Vec<_> = (0..3).map(|i| dense_rep(i, &[1.0, i as f32])).collect();
        let m = build_cluster_map(&reps, 60, 0).unwrap();
        assert_eq!(m.num_clusters(), 1);
        assert_eq!(m.members(0), &[0, 1, 2]);
        let id = build_cluster_map(&reps, 1, 0).unwrap();
        assert_eq!(id.num_clusters(), 3);
        assert!((0..3).all(|l| id.cluster_of(l) == l as usize));
    }

    #[test]
    fn hundred_labels_size_eight() {
        let reps: Vec<_> = (0..100)
            .map(|i| dense_rep(i, &[(i % 7) as f32 + 1.0, (i % 5) as f32, (i % 3) as f32]))
            .collect();
        let m = build_cluster_map(&reps, 8, 11).unwrap();
        assert!((13..=20).contains(&m.num_clusters()));
        for c in 0..m.num_clusters() {
            assert!((5..=8).contains(&m.members(c).len()));
            for &l in m.members(c) {
                assert_eq!(m.cluster_of(l), c);
            }
        }
        assert_eq!(m, build_cluster_map(&reps, 8, 11).unwrap());
    }

    #[test]
    fn targets() {
        let m = ClusterMap::from_members(vec![vec![2, 3], vec![0, 1], vec![4]], 5, 2, 0).unwrap();
        assert_eq!(m.cluster_targets(&[0, 1]).unwrap(), vec![false, true, false]);
        assert_eq!(m.cluster_targets(&[]).unwrap(), vec![false; 3]);
        assert_eq!(m.cluster_targets(&[0, 2, 4]).unwrap(), vec![true; 3]);
        assert!(m.cluster_targets(&[5]).is_err());
    }

    #[test]
    fn from_members_rejects_bad_maps() {
        assert!(ClusterMap::from_members(vec![vec![0], vec![0, 1]], 2, 2, 0).is_err());
        assert!(ClusterMap::from_members(vec![vec![0]], 2, 2, 0).is_err());
        assert!(ClusterMap::from_members(vec![vec![0, 2]], 2, 2, 0).is_err());
    }

    #[test]
    fn feasibility() {
        assert!(!size_bound_feasible(11, 2));
        assert!(size_bound_feasible(12, 2));
        assert!(!size_bound_feasible(9, 8));
        assert!(size_bound_feasible(17, 8));
        assert!(size_bound_feasible(5, 8));
    }

    #[test]
    fn left_share_keeps_leaves_balanced() {
        // brute force: all leaves end in {floor(L/K), ceil(L/K)}
        fn leaves(n: usize, k: usize, out: &mut Vec<usize>) {
            if k == 1 {
                out.push(n);
                return;
            }
            let (nl, kl) = left_share(n, k);
            leaves(nl, kl, out);
            leaves(n - nl, k - kl, out);
        }
        for l in 2usize..400 {
            for s in 2..40 {
                if l <= s {
                    continue;
                }
                let k = l.div_ceil(s);
                let mut out = Vec::new();
                leaves(l, k, &mut out);
                assert_eq!(out.len(), k);
                assert_eq!(out.iter().sum::<usize>(), l);
                let (lo, hi) = (l / k, l.div_ceil(k));
                assert!(out.iter().all(|&x| x == lo || x == hi), "{l} {s} {out:?}");
            }
        }
    }
}
