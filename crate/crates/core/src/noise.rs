//! Online noise injection: probabilistic replacement of low-importance
//! rationale tokens with vocabulary samples, driven by precomputed corpus
//! statistics. Pure given its inputs and RNG state; disabled at evaluation
//! time by simply not calling it.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStats, TokenizedText};
use crate::error::{Error, Result};
use crate::util::derive_seed;

/// A hard rationale selection over a token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(bits: Vec<u8>) -> Self {
        debug_assert!(bits.iter().all(|&b| b <= 1));
        BinaryMask { bits }
    }

    pub fn zeros(len: usize) -> Self {
        BinaryMask { bits: vec![0; len] }
    }

    pub fn ones(len: usize) -> Self {
        BinaryMask { bits: vec![1; len] }
    }

    pub fn from_positions(len: usize, positions: &[usize]) -> Self {
        let mut bits = vec![0u8; len];
        for &p in positions {
            bits[p] = 1;
        }
        BinaryMask { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn is_selected(&self, pos: usize) -> bool {
        self.bits[pos] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn selected_positions(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }
}

/// A rationale sequence after noise injection. Positions outside the mask
/// are never replaced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedRationale {
    pub tokens: Vec<u32>,
    pub replaced: Vec<usize>,
}

impl PerturbedRationale {
    /// The untouched rationale; used at evaluation time where noise is off.
    pub fn identity(text: &TokenizedText) -> Self {
        PerturbedRationale {
            tokens: text.tokens.clone(),
            replaced: Vec::new(),
        }
    }
}

pub const RNG_ALGORITHM: &str = "chacha8";

/// A seeded, platform-stable random stream (ChaCha8). Identical seeds
/// reproduce identical draw sequences everywhere.
pub struct SeededRng {
    pub seed: u64,
    rng: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// One fresh stream per epoch so runs are reproducible while noise
    /// differs across epochs.
    pub fn for_epoch(global_seed: u64, epoch: u64) -> Self {
        SeededRng::new(derive_seed(global_seed, seed_purpose::NOISE, epoch))
    }

    pub fn next_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Seed-derivation namespaces; keeping noise and data-order streams apart
/// means disabling one cannot shift the other.
pub mod seed_purpose {
    pub const NOISE: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const PARAMS: u64 = 3;
    pub const DATA: u64 = 4;
}

/// Inverse-CDF draw from a discrete distribution (linear scan; the tail
/// catch-all absorbs rounding).
fn sample_index(dist: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in dist.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last_positive = i;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Replace each masked-in token independently with probability taken from
/// `stats`; replacements are drawn from the sampling distribution. Masked-out
/// positions pass through untouched. Deterministic given (inputs, RNG state).
pub fn inject_noise(
    text: &TokenizedText,
    doc_id: &str,
    mask: &BinaryMask,
    stats: &CorpusStats,
    rng: &mut SeededRng,
) -> Result<PerturbedRationale> {
    if mask.len() != text.len() {
        return Err(Error::Shape {
            op: "inject_noise",
            lhs: (1, text.len()),
            rhs: (1, mask.len()),
        });
    }
    let probs = stats.position_probs(doc_id, &text.tokens)?;
    let mut tokens = text.tokens.clone();
    let mut replaced = Vec::new();
    for i in 0..text.len() {
        if !mask.is_selected(i) {
            continue;
        }
        if rng.next_f64() < probs[i] {
            tokens[i] = sample_index(&stats.sample_dist, rng.next_f64()) as u32;
            replaced.push(i);
        }
    }
    Ok(PerturbedRationale { tokens, replaced })
}

/// Sum of per-position replacement probabilities over the mask; the
/// expected number of replacements `inject_noise` performs.
pub fn expected_replacements(
    text: &TokenizedText,
    doc_id: &str,
    mask: &BinaryMask,
    stats: &CorpusStats,
) -> Result<f64> {
    if mask.len() != text.len() {
        return Err(Error::Shape {
            op: "expected_replacements",
            lhs: (1, text.len()),
            rhs: (1, mask.len()),
        });
    }
    let probs = stats.position_probs(doc_id, &text.tokens)?;
    Ok(probs
        .iter()
        .enumerate()
        .filter(|(i, _)| mask.is_selected(*i))
        .map(|(_, &p)| p)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, CorpusStats, Document};
    use rand::Rng;

    fn tiny_corpus() -> Corpus {
        let docs = vec![
            Document {
                id: "d1".into(),
                raw_text: "good movie good".into(),
                label: None,
            },
            Document {
                id: "d2".into(),
                raw_text: "bad movie".into(),
                label: None,
            },
        ];
        Corpus::build(docs, true, 1).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let corpus = tiny_corpus();
        let stats = CorpusStats::compute(&corpus, 0.0).unwrap();
        let text = &corpus.docs[0].text;
        let mask = BinaryMask::ones(text.len());
        let mut rng = SeededRng::new(5);
        let out = inject_noise(text, "d1", &mask, &stats, &mut rng).unwrap();
        assert_eq!(out.tokens, text.tokens);
        assert!(out.replaced.is_empty());
    }

    #[test]
    fn boundary_probabilities() {
        // Force p_i = 1 on exactly one masked position by clamping: p = 0.5
        // sends "movie" in d1 to 1.0 while "good" stays at 0.
        let corpus = tiny_corpus();
        let stats = CorpusStats::compute(&corpus, 0.5).unwrap();
        let text = &corpus.docs[0].text;
        let movie = text
            .token_strings
            .iter()
            .position(|t| t == "movie")
            .unwrap();
        let mask = BinaryMask::ones(text.len());
        for seed in 0..50 {
            let mut rng = SeededRng::new(seed);
            let out = inject_noise(text, "d1", &mask, &stats, &mut rng).unwrap();
            assert_eq!(out.replaced, vec![movie]);
        }
    }

    #[test]
    fn monte_carlo_replacement_frequency_matches_probabilities() {
        let corpus = tiny_corpus();
        let stats = CorpusStats::compute(&corpus, 0.2).unwrap();
        let text = &corpus.docs[0].text;
        let mask = BinaryMask::ones(text.len());
        let movie = text
            .token_strings
            .iter()
            .position(|t| t == "movie")
            .unwrap();

        let trials = 10_000;
        let mut counts = vec![0usize; text.len()];
        for seed in 0..trials {
            let mut rng = SeededRng::new(seed as u64);
            let out = inject_noise(text, "d1", &mask, &stats, &mut rng).unwrap();
            for &i in &out.replaced {
                counts[i] += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / trials as f64;
            if i == movie {
                assert!((freq - 0.6).abs() < 0.015, "movie freq {freq}");
            } else {
                assert_eq!(c, 0, "good must never be replaced");
            }
        }
    }

    #[test]
    fn determinism_same_seed_same_bytes() {
        let corpus = tiny_corpus();
        let stats = CorpusStats::compute(&corpus, 0.7).unwrap();
        let text = &corpus.docs[0].text;
        let mask = BinaryMask::new(vec![1, 1, 0]);
        let a = inject_noise(text, "d1", &mask, &stats, &mut SeededRng::new(99)).unwrap();
        let b = inject_noise(text, "d1", &mask, &stats, &mut SeededRng::new(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unmasked_positions_never_change_and_replacements_stay_in_support() {
        let corpus = tiny_corpus();
        let stats = CorpusStats::compute(&corpus, 0.9).unwrap();
        let argmax_atfidf = (0..stats.sample_dist.len())
            .filter(|&i| !corpus.vocab.is_special(i as u32))
            .max_by(|&a, &b| stats.atfidf[a].partial_cmp(&stats.atfidf[b]).unwrap())
            .unwrap() as u32;

        let mut seed_rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for trial in 0..500 {
            let doc = &corpus.docs[trial % 2];
            let bits: Vec<u8> = (0..doc.text.len())
                .map(|_| seed_rng.gen_range(0..=1u8))
                .collect();
            let mask = BinaryMask::new(bits);
            let mut rng = SeededRng::new(trial as u64);
            let out = inject_noise(&doc.text, &doc.id, &mask, &stats, &mut rng).unwrap();
            for i in 0..doc.text.len() {
                if !mask.is_selected(i) {
                    assert_eq!(out.tokens[i], doc.text.tokens[i]);
                }
            }
            for &i in &out.replaced {
                assert!(mask.is_selected(i));
                let id = out.tokens[i];
                assert!(stats.sample_dist[id as usize] > 0.0);
                assert_ne!(id, argmax_atfidf);
            }
        }
    }

    #[test]
    fn empirical_frequency_within_three_sigma() {
        let corpus = tiny_corpus();
        let stats = CorpusStats::compute(&corpus, 0.3).unwrap();
        let doc = &corpus.docs[1];
        let mask = BinaryMask::ones(doc.text.len());
        let probs = stats.position_probs(&doc.id, &doc.text.tokens).unwrap();

        let n = 10_000usize;
        let mut counts = vec![0usize; doc.text.len()];
        for seed in 0..n {
            let mut rng = SeededRng::new(seed as u64);
            let out = inject_noise(&doc.text, &doc.id, &mask, &stats, &mut rng).unwrap();
            for &i in &out.replaced {
                counts[i] += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            let p = probs[i];
            let freq = c as f64 / n as f64;
            let band = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() <= band.max(1e-12),
                "pos {i}: freq {freq} vs p {p} (band {band})"
            );
        }
    }

    #[test]
    fn expected_replacements_examples() {
        let corpus = tiny_corpus();
        let stats = CorpusStats::compute(&corpus, 0.2).unwrap();
        let text = &corpus.docs[0].text;

        let zero = BinaryMask::zeros(text.len());
        assert_eq!(expected_replacements(text, "d1", &zero, &stats).unwrap(), 0.0);

        let full = BinaryMask::ones(text.len());
        let e = expected_replacements(text, "d1", &full, &stats).unwrap();
        assert!((e - 0.6).abs() < 1e-12);
        // No clamp triggers at p = 0.2, so the full-mask expectation is
        // exactly p * |d|.
        assert!((e - 0.2 * text.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn unknown_doc_without_fallback_is_missing_stats() {
        let corpus = tiny_corpus();
        let mut stats = CorpusStats::compute(&corpus, 0.2).unwrap();
        stats.clear_fallback();
        let text = &corpus.docs[0].text;
        let mask = BinaryMask::ones(text.len());
        let mut rng = SeededRng::new(1);
        assert!(matches!(
            inject_noise(text, "nope", &mask, &stats, &mut rng),
            Err(Error::MissingStats(_))
        ));
    }
}
