use std::collections::HashMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::LlmError;

/// A unit-L2-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// L2-normalizes `values`. Fails on empty, zero or non-finite input.
    pub fn normalized(values: &[f64]) -> Result<Self, LlmError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || !norm.is_finite() || norm == 0.0 {
            return Err(LlmError::BadEmbedding(format!(
                "cannot normalize a vector of length {} and norm {norm}",
                values.len()
            )));
        }
        Ok(EmbeddingVector(values.iter().map(|v| (v / norm) as f32).collect()))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    /// Mean of `vectors`, re-normalized. `None` for an empty slice or when the
    /// mean is the zero vector.
    pub fn pooled(vectors: &[&EmbeddingVector]) -> Option<EmbeddingVector> {
        let first = vectors.first()?;
        let mut sum = vec![0f64; first.dimension()];
        for v in vectors {
            for (acc, &x) in sum.iter_mut().zip(&v.0) {
                *acc += f64::from(x);
            }
        }
        EmbeddingVector::normalized(&sum).ok()
    }
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
///
/// Bitwise-identical vectors score exactly 1.0, so a threshold of 1.0 admits
/// precisely the embedding duplicates.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    if a.0 == b.0 {
        return 1.0;
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    dot.clamp(-1.0, 1.0)
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    /// One unit vector per input, in input order. The batch must be
    /// non-empty.
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, LlmError>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        Ok(self.embed(&[text])?.remove(0))
    }
}

/// Deterministic offline embedder: hashed character-trigram counts.
///
/// The input is lowercased and padded with one space on each side; every
/// trigram is hashed (FNV-1a, 64 bit) into one of `dimension` buckets, and
/// the count vector is L2-normalized. Inputs too short to form a trigram
/// hash as a single gram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyEmbedder {
    dimension: usize,
}

pub const TOY_DIMENSION: usize = 256;

impl Default for ToyEmbedder {
    fn default() -> Self {
        ToyEmbedder { dimension: TOY_DIMENSION }
    }
}

impl ToyEmbedder {
    pub fn with_dimension(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        ToyEmbedder { dimension }
    }

    fn bucket(&self, gram: &[char]) -> usize {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut buf = [0u8; 4];
        for c in gram {
            for &byte in c.encode_utf8(&mut buf).as_bytes() {
                hash ^= u64::from(byte);
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        (hash % self.dimension as u64) as usize
    }

    pub fn vector(&self, text: &str) -> EmbeddingVector {
        let padded: Vec<char> =
            std::iter::once(' ').chain(text.to_lowercase().chars()).chain(std::iter::once(' ')).collect();
        let mut counts = vec![0f64; self.dimension];
        if padded.len() < 3 {
            counts[self.bucket(&padded)] += 1.0;
        } else {
            for gram in padded.windows(3) {
                counts[self.bucket(gram)] += 1.0;
            }
        }
        EmbeddingVector::normalized(&counts).expect("at least one gram is counted")
    }
}

impl Embedder for ToyEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, LlmError> {
        if texts.is_empty() {
            return Err(LlmError::EmptyBatch);
        }
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Memoizes another embedder per input string.
pub struct CachedEmbedder<E> {
    inner: E,
    memo: RwLock<HashMap<String, EmbeddingVector>>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        CachedEmbedder { inner, memo: RwLock::default() }
    }

    pub fn cached(&self) -> usize {
        self.memo.read().expect("memo lock").len()
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, LlmError> {
        if texts.is_empty() {
            return Err(LlmError::EmptyBatch);
        }
        let mut misses: Vec<&str> = {
            let memo = self.memo.read().expect("memo lock");
            texts.iter().copied().filter(|t| !memo.contains_key(*t)).collect()
        };
        misses.sort_unstable();
        misses.dedup();
        if !misses.is_empty() {
            let fresh = self.inner.embed(&misses)?;
            let mut memo = self.memo.write().expect("memo lock");
            for (text, v) in misses.iter().zip(fresh) {
                memo.insert(text.to_string(), v);
            }
        }
        let memo = self.memo.read().expect("memo lock");
        Ok(texts.iter().map(|t| memo[*t].clone()).collect())
    }
}

/// cos("rainfall", "rain") under the 256-bucket toy embedder. " ra", "rai"
/// and "ain" are shared out of 4 and 8 trigrams, 3/sqrt(32) barring bucket
/// collisions.
#[cfg(test)]
pub(crate) const RAINFALL_RAIN: f64 = 0.530_330_076_813_697_8;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_inputs_give_identical_vectors() {
        let e = ToyEmbedder::default();
        let v = e.embed(&["rain", "rain"]).unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(cosine(&v[0], &v[1]), 1.0);
        assert_eq!(v[0].dimension(), 256);
    }

    /// Pinned once from the implementation; any change to hashing, padding or
    /// normalization shows up here.
    #[test]
    fn rainfall_rain_similarity_is_pinned() {
        let e = ToyEmbedder::default();
        let sim = cosine(&e.vector("rainfall"), &e.vector("rain"));
        assert_eq!(sim, RAINFALL_RAIN);
    }

    #[test]
    fn rainfall_closer_to_rain_than_to_unrelated() {
        let e = ToyEmbedder::default();
        let rainfall = e.vector("rainfall");
        assert!(cosine(&rainfall, &e.vector("rain")) > cosine(&rainfall, &e.vector("erosion")));
        assert!(cosine(&rainfall, &e.vector("rain")) > cosine(&rainfall, &e.vector("drought")));
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert!(matches!(ToyEmbedder::default().embed(&[]), Err(LlmError::EmptyBatch)));
    }

    #[test]
    fn empty_and_short_strings_embed() {
        let e = ToyEmbedder::default();
        for s in ["", "a", "ab"] {
            assert!((e.vector(s).norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cache_is_transparent() {
        let cached = CachedEmbedder::new(ToyEmbedder::default());
        let a = cached.embed(&["storm", "rain", "storm"]).unwrap();
        let b = ToyEmbedder::default().embed(&["storm", "rain", "storm"]).unwrap();
        assert_eq!(a, b);
        assert_eq!(cached.cached(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn outputs_are_unit_norm(s in "\\PC{0,40}") {
            let v = ToyEmbedder::default().vector(&s);
            prop_assert!((v.norm() - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn cosine_is_symmetric_and_reflexive(a in "[a-z ]{0,12}", b in "[a-z ]{0,12}") {
            let e = ToyEmbedder::default();
            let (va, vb) = (e.vector(&a), e.vector(&b));
            prop_assert_eq!(cosine(&va, &va), 1.0);
            prop_assert_eq!(cosine(&va, &vb), cosine(&vb, &va));
        }
    }
}
