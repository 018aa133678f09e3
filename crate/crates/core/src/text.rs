//! Lowercase word tokenization, vocabulary construction, and a TF-IDF
//! builder for synthetic corpora.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::sparse::SparseVec;

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const UNK: u32 = 2;
pub const RESERVED: [&str; 3] = ["[PAD]", "[CLS]", "[UNK]"];

/// Lowercased maximal runs of alphanumeric characters.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
    min_freq: usize,
}

impl Vocab {
    /// Ids are assigned by descending frequency, then lexicographically;
    /// words seen fewer than `min_freq` times are left out (they map to
    /// `[UNK]`).
    pub fn build<'a, I>(docs: I, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for d in docs {
            n_docs += 1;
            for w in words(d) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
        }
        let min_freq = min_freq.max(1);
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq && !RESERVED.contains(&w.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(w, _)| w))
            .collect();
        Ok(Self::from_tokens_unchecked(tokens, min_freq))
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..3] != RESERVED {
            return Err(Error::Contract("vocabulary must start with [PAD] [CLS] [UNK]".into()));
        }
        let v = Self::from_tokens_unchecked(tokens, min_freq);
        if v.index.len() != v.tokens.len() {
            return Err(Error::Contract("duplicate token in vocabulary".into()));
        }
        Ok(v)
    }

    fn from_tokens_unchecked(tokens: Vec<String>, min_freq: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            index,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// `[CLS]` followed by the word ids of `text`, truncated to `max_len`.
    /// Padding is left to batching.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Vec<u32> {
        assert!(max_len >= 2, "max_len must leave room for [CLS] and one token");
        core::iter::once(CLS)
            .chain(words(text).map(|w| self.id(&w)))
            .take(max_len)
            .collect()
    }
}

/// L2-normalized TF-IDF rows over token ids; reserved ids are ignored.
/// idf = ln((1 + N) / (1 + df)) + 1.
pub fn tfidf(docs: &[Vec<u32>], dim: usize) -> Vec<SparseVec> {
    let mut df = alloc::vec![0usize; dim];
    let counts: Vec<BTreeMap<u32, usize>> = docs
        .iter()
        .map(|d| {
            let mut c = BTreeMap::new();
            for &t in d.iter().filter(|&&t| t > UNK) {
                *c.entry(t).or_insert(0) += 1;
            }
            c
        })
        .collect();
    for c in &counts {
        for &t in c.keys() {
            df[t as usize] += 1;
        }
    }
    let n = docs.len() as f64;
    counts
        .into_iter()
        .map(|c| {
            let (indices, values): (Vec<u32>, Vec<f32>) = c
                .into_iter()
                .map(|(t, tf)| {
                    let idf = Float::ln((1.0 + n) / (1.0 + df[t as usize] as f64)) + 1.0;
                    (t, (tf as f64 * idf) as f32)
                })
                .unzip();
            SparseVec::new(dim, indices, values)
                .expect("ids come from a BTreeMap and are < dim")
                .normalized()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn frequency_then_lexicographic_ids() {
        let v = Vocab::build(["a b", "a c"], 1).unwrap();
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("b"), 4);
        assert_eq!(v.id("c"), 5);
        let v2 = Vocab::build(["a b", "a c"], 2).unwrap();
        assert_eq!(v2.id("b"), UNK);
        assert_eq!(v2.id("c"), UNK);
        assert_eq!(v2.len(), 4);
        assert_eq!(v, Vocab::build(["a b", "a c"], 1).unwrap());
    }

    #[test]
    fn empty_corpus_is_config_error() {
        let none: [&str; 0] = [];
        assert!(matches!(Vocab::build(none, 1), Err(Error::Config(_))));
    }

    #[test]
    fn tokenize_rules() {
        let v = Vocab::build(["Alpha, beta! gamma"], 1).unwrap();
        assert_eq!(v.tokenize("", 128), vec![CLS]);
        let t = v.tokenize("alpha BETA gamma", 128);
        assert_eq!(t.len(), 4);
        assert_eq!(t[0], CLS);
        assert_eq!(v.tokenize("delta", 8), vec![CLS, UNK]);
        let long: String = (0..600).map(|_| "alpha ").collect();
        assert_eq!(v.tokenize(&long, 512).len(), 512);
        assert!(!v.tokenize(&long, 512).contains(&PAD));
    }

    #[test]
    fn tfidf_rows_are_unit() {
        let rows = tfidf(&[vec![1, 3, 3, 4], vec![1, 4, 5]], 6);
        for r in &rows {
            assert!((r.norm() - 1.0).abs() < 1e-6);
            assert!(r.indices().iter().all(|&i| i > UNK));
        }
        // token 3 appears only in doc 0 so it outweighs the shared token 4
        let w3 = rows[0].iter().find(|(i, _)| *i == 3).unwrap().1;
        let w4 = rows[0].iter().find(|(i, _)| *i == 4).unwrap().1;
        assert!(w3 > w4);
    }
}
