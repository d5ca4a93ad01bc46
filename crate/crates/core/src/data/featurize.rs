//! Hook for turning pre-tokenized text into feature vectors. No tokenizer
//! ships; callers split text however they like.

use alloc::vec;
use alloc::vec::Vec;

use crate::numeric::Fnv64;

pub trait Featurizer {
    fn dim(&self) -> usize;
    fn featurize(&self, tokens: &[&str]) -> Vec<f64>;
}

/// Hashed bag of words: each token adds `1/len` to bucket `hash(token) mod dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedBagOfWords {
    pub dim: usize,
}

impl Featurizer for HashedBagOfWords {
    fn dim(&self) -> usize {
        self.dim
    }

    fn featurize(&self, tokens: &[&str]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if tokens.is_empty() || self.dim == 0 {
            return out;
        }
        let w = 1.0 / tokens.len() as f64;
        for t in tokens {
            let mut h = Fnv64::default();
            for chunk in t.as_bytes().chunks(8) {
                let mut word = [0u8; 8];
                word[..chunk.len()].copy_from_slice(chunk);
                h.write_u64(u64::from_le_bytes(word));
            }
            h.write_u64(t.len() as u64);
            out[(h.finish() % self.dim as u64) as usize] += w;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_are_normalized_and_stable() {
        let f = HashedBagOfWords { dim: 16 };
        let a = f.featurize(&["born", "in", "born"]);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a, f.featurize(&["born", "in", "born"]));
        assert!(f.featurize(&[]).iter().all(|&x| x == 0.0));
    }
}
