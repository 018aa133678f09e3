//! Documents, datasets, and deterministic padded batching.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::sparse::SparseVec;
use crate::text::{tfidf, Vocab, CLS, PAD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: usize,
    /// Starts with `[CLS]`, never padded.
    pub tokens: Vec<u32>,
    /// Sorted, distinct label ids.
    pub labels: Vec<u32>,
    pub sparse: SparseVec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XmcDataset {
    pub documents: Vec<Document>,
    pub num_labels: usize,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub split: Split,
}

impl XmcDataset {
    pub fn new(
        documents: Vec<Document>,
        num_labels: usize,
        vocab_size: usize,
        feature_dim: usize,
        split: Split,
    ) -> Result<Self> {
        for d in &documents {
            if d.tokens.first() != Some(&CLS) {
                return Err(Error::Contract(alloc::format!(
                    "document {} does not start with [CLS]",
                    d.id
                )));
            }
            if let Some(&t) = d.tokens.iter().find(|&&t| t as usize >= vocab_size) {
                return Err(Error::Contract(alloc::format!(
                    "document {} has token {t} outside a vocabulary of {vocab_size}",
                    d.id
                )));
            }
            if d.labels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Contract(alloc::format!(
                    "document {} labels are not sorted and distinct",
                    d.id
                )));
            }
            if let Some(&l) = d.labels.iter().find(|&&l| l as usize >= num_labels) {
                return Err(Error::Contract(alloc::format!(
                    "document {} has label {l} but only {num_labels} labels exist",
                    d.id
                )));
            }
            if split == Split::Train && d.labels.is_empty() {
                return Err(Error::Contract(alloc::format!(
                    "training document {} has no labels",
                    d.id
                )));
            }
        }
        Ok(Self {
            documents,
            num_labels,
            vocab_size,
            feature_dim,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Mean number of positive labels per document.
    pub fn mean_labels(&self) -> f64 {
        if self.documents.is_empty() {
            return 0.0;
        }
        let n: usize = self.documents.iter().map(|d| d.labels.len()).sum();
        n as f64 / self.documents.len() as f64
    }

    /// Batches of `batch_size` in a shuffled order fixed by `(seed, epoch)`;
    /// the final short batch is kept.
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: u64) -> BatchIter<'_> {
        assert!(batch_size >= 1, "batch size must be positive");
        let mut order: Vec<usize> = (0..self.documents.len()).collect();
        order.shuffle(&mut rng_for(seed, 0x0BA7_C400 ^ epoch));
        BatchIter {
            dataset: self,
            order,
            pos: 0,
            batch_size,
        }
    }

    /// Batches in dataset order, used for evaluation.
    pub fn sequential_batches(&self, batch_size: usize) -> BatchIter<'_> {
        assert!(batch_size >= 1, "batch size must be positive");
        BatchIter {
            dataset: self,
            order: (0..self.documents.len()).collect(),
            pos: 0,
            batch_size,
        }
    }
}

pub struct BatchIter<'a> {
    dataset: &'a XmcDataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let docs: Vec<&Document> = idx.iter().map(|&i| &self.dataset.documents[i]).collect();
        let mut b = Batch::from_sequences(docs.iter().map(|d| d.tokens.as_slice()));
        b.doc_indices = idx.to_vec();
        b.labels = docs.iter().map(|d| d.labels.clone()).collect();
        Some(b)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

/// Token sequences padded with `[PAD]` to the longest row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub rows: usize,
    pub seq: usize,
    /// `rows × seq`, row-major.
    pub tokens: Vec<u32>,
    /// `mask[i·seq + j]` is true for real tokens.
    pub mask: Vec<bool>,
    /// Position of each row in its dataset.
    pub doc_indices: Vec<usize>,
    pub labels: Vec<Vec<u32>>,
}

impl Batch {
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a [u32]>) -> Self {
        let seqs: Vec<&[u32]> = seqs.into_iter().collect();
        let rows = seqs.len();
        let seq = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut tokens = Vec::with_capacity(rows * seq);
        let mut mask = Vec::with_capacity(rows * seq);
        for s in &seqs {
            tokens.extend_from_slice(s);
            mask.extend(core::iter::repeat_n(true, s.len()));
            tokens.extend(core::iter::repeat_n(PAD, seq - s.len()));
            mask.extend(core::iter::repeat_n(false, seq - s.len()));
        }
        Self {
            rows,
            seq,
            tokens,
            mask,
            doc_indices: (0..rows).collect(),
            labels: alloc::vec![Vec::new(); rows],
        }
    }
}

/// Tokenizes `texts` with `vocab` and attaches TF-IDF features over the
/// same token ids. Labels are sorted and deduplicated.
pub fn dataset_from_texts(
    texts: &[&str],
    labels: &[Vec<u32>],
    vocab: &Vocab,
    num_labels: usize,
    max_len: usize,
    split: Split,
) -> Result<XmcDataset> {
    if texts.len() != labels.len() {
        return Err(Error::Config(alloc::format!(
            "{} texts but {} label rows",
            texts.len(),
            labels.len()
        )));
    }
    if max_len < 2 {
        return Err(Error::Config("max_len must leave room for [CLS] and one token".into()));
    }
    let tokens: Vec<Vec<u32>> = texts.iter().map(|t| vocab.tokenize(t, max_len)).collect();
    let features = tfidf(&tokens, vocab.len());
    let documents = tokens
        .into_iter()
        .zip(features)
        .zip(labels)
        .enumerate()
        .map(|(id, ((tokens, sparse), l))| {
            let mut labels = l.clone();
            labels.sort_unstable();
            labels.dedup();
            Document {
                id,
                tokens,
                labels,
                sparse,
            }
        })
        .collect();
    XmcDataset::new(documents, num_labels, vocab.len(), vocab.len(), split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toy(n: usize) -> XmcDataset {
        let docs = (0..n)
            .map(|i| Document {
                id: i,
                tokens: [CLS].into_iter().chain(3..3 + (i % 4) as u32).collect(),
                labels: vec![(i % 3) as u32],
                sparse: SparseVec::zeros(4),
            })
            .collect();
        XmcDataset::new(docs, 3, 10, 4, Split::Train).unwrap()
    }

    #[test]
    fn batch_sizes() {
        let ds = toy(10);
        let sizes: Vec<usize> = ds.batches(16, 1, 0).map(|b| b.rows).collect();
        assert_eq!(sizes, vec![10]);
        let sizes: Vec<usize> = ds.batches(4, 1, 0).map(|b| b.rows).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn deterministic_order_and_full_coverage() {
        let ds = toy(37);
        let a: Vec<Vec<usize>> = ds.batches(5, 9, 3).map(|b| b.doc_indices).collect();
        let b: Vec<Vec<usize>> = ds.batches(5, 9, 3).map(|b| b.doc_indices).collect();
        assert_eq!(a, b);
        let c: Vec<Vec<usize>> = ds.batches(5, 9, 4).map(|b| b.doc_indices).collect();
        assert_ne!(a, c);
        let mut all: Vec<usize> = a.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn mask_marks_real_tokens() {
        let ds = toy(8);
        for b in ds.batches(3, 2, 0) {
            for i in 0..b.rows {
                let doc = &ds.documents[b.doc_indices[i]];
                for j in 0..b.seq {
                    assert_eq!(b.mask[i * b.seq + j], j < doc.tokens.len());
                    if j >= doc.tokens.len() {
                        assert_eq!(b.tokens[i * b.seq + j], PAD);
                    }
                }
            }
        }
    }

    #[test]
    fn train_rows_need_labels() {
        let d = Document {
            id: 0,
            tokens: vec![CLS],
            labels: vec![],
            sparse: SparseVec::zeros(1),
        };
        assert!(XmcDataset::new(vec![d.clone()], 2, 3, 1, Split::Train).is_err());
        assert!(XmcDataset::new(vec![d], 2, 3, 1, Split::Test).is_ok());
    }
}
