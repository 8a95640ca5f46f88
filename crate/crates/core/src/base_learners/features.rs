//! Hashed bag-of-n-grams text features.

use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturizerConfig {
    /// Number of hash buckets.
    pub dim: usize,
    pub ngram_orders: Vec<usize>,
    pub lowercase: bool,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig { dim: 65_536, ngram_orders: vec![1, 2], lowercase: true }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > u32::MAX as usize {
            return Err(Error::Config(format!("feature dimension {} out of range", self.dim)));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::Config("n-gram orders must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// Sparse representation of a fixed-dimension real feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector<T> {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<T>,
}

impl<T: Scalar> FeatureVector<T> {
    /// Builds from `(index, value)` pairs; duplicate indices are summed.
    pub fn from_entries(dim: usize, entries: impl IntoIterator<Item = (usize, T)>) -> Result<Self> {
        let mut acc: BTreeMap<usize, T> = BTreeMap::new();
        for (i, v) in entries {
            if i >= dim {
                return Err(Error::Shape { expected: dim, got: i + 1 });
            }
            let slot = acc.entry(i).or_insert(T::zero());
            *slot = *slot + v;
        }
        let (indices, values) = acc.into_iter().filter(|(_, v)| *v != T::zero()).map(|(i, v)| (i as u32, v)).unzip();
        Ok(FeatureVector { dim, indices, values })
    }

    pub fn from_dense(values: &[T]) -> Self {
        let (indices, vals) = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != T::zero())
            .map(|(i, &v)| (i as u32, v))
            .unzip();
        FeatureVector { dim: values.len(), indices, values: vals }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn get(&self, index: usize) -> T {
        match self.indices.binary_search(&(index as u32)) {
            Ok(p) => self.values[p],
            Err(_) => T::zero(),
        }
    }

    pub fn dot(&self, weights: &[T]) -> T {
        self.iter().fold(T::zero(), |acc, (i, v)| acc + weights[i] * v)
    }

    pub fn l2_norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    fn normalized(mut self) -> Self {
        let n = self.l2_norm();
        if n > T::zero() {
            for v in &mut self.values {
                *v = *v / n;
            }
        }
        self
    }
}

/// 64-bit FNV-1a of the n-gram's UTF-8 bytes, reduced modulo `dim`.
pub fn hash_bucket(ngram: &str, dim: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(ngram.as_bytes());
    (h.finish() % dim as u64) as usize
}

/// Whitespace n-grams of the requested orders, tokens joined by one space.
pub fn ngrams(text: &str, config: &FeaturizerConfig) -> Vec<String> {
    let normalized;
    let text = if config.lowercase {
        normalized = text.to_lowercase();
        normalized.as_str()
    } else {
        text
    };
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut out = Vec::new();
    for &n in &config.ngram_orders {
        if n == 0 || tokens.len() < n {
            continue;
        }
        out.extend(tokens.windows(n).map(|w| w.join(" ")));
    }
    out
}

/// Bucket counts before normalization.
pub fn ngram_counts(text: &str, config: &FeaturizerConfig) -> Result<BTreeMap<usize, usize>> {
    if text.is_empty() {
        return Err(Error::arg("cannot featurize an empty text"));
    }
    let grams = ngrams(text, config);
    if grams.is_empty() {
        return Err(Error::arg("text has no tokens"));
    }
    let mut counts = BTreeMap::new();
    for g in grams {
        *counts.entry(hash_bucket(&g, config.dim)).or_insert(0) += 1;
    }
    Ok(counts)
}

/// L2-normalized hashed n-gram counts.
pub fn featurize_text<T: Scalar>(text: &str, config: &FeaturizerConfig) -> Result<FeatureVector<T>> {
    let counts = ngram_counts(text, config)?;
    Ok(FeatureVector::from_entries(config.dim, counts.into_iter().map(|(i, c)| (i, T::of_usize(c))))?.normalized())
}

/// Annotator ids seen at training time; everything else maps to one shared
/// unknown slot at the end of the block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorVocab {
    ids: Vec<String>,
}

impl AnnotatorVocab {
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        ids.sort();
        ids.dedup();
        AnnotatorVocab { ids }
    }

    /// Vocabulary size plus the unknown slot.
    pub fn block_len(&self) -> usize {
        self.ids.len() + 1
    }

    pub fn slot(&self, id: &str) -> usize {
        self.ids.binary_search_by(|x| x.as_str().cmp(id)).unwrap_or(self.ids.len())
    }
}

/// Appends a multi-hot annotator block after the text features.
pub fn augment_with_annotator_ids<T: Scalar>(
    features: &FeatureVector<T>,
    annotator_ids: &[&str],
    vocab: &AnnotatorVocab,
) -> FeatureVector<T> {
    let base = features.dim();
    let mut slots: Vec<usize> = annotator_ids.iter().map(|id| base + vocab.slot(id)).collect();
    slots.sort_unstable();
    slots.dedup();
    let mut indices = features.indices.clone();
    let mut values = features.values.clone();
    for s in slots {
        indices.push(s as u32);
        values.push(T::one());
    }
    FeatureVector { dim: base + vocab.block_len(), indices, values }
}
