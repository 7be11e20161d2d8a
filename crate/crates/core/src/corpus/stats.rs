//! TF*IDF-derived corpus statistics: per-position replacement probabilities
//! and the vocabulary sampling distribution used for noise injection.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocabulary};
use crate::error::{Error, Result};

pub const STATS_VERSION: u32 = 1;
/// Raw count over document length; recorded in the stats header so files
/// computed with a different variant are distinguishable.
pub const TF_VARIANT: &str = "count/doclen";
/// Unsmoothed ln(N/df).
pub const IDF_VARIANT: &str = "ln(N/df)";

/// `TF(w,d) * IDF(w)` per token position, parallel to `corpus.docs`.
/// Positions holding the same word in the same document share a score.
pub fn compute_tfidf(corpus: &Corpus) -> Vec<Vec<f64>> {
    let n_docs = corpus.docs.len() as f64;
    let mut df: HashMap<u32, usize> = HashMap::new();
    for doc in &corpus.docs {
        let mut seen: Vec<u32> = doc.text.tokens.clone();
        seen.sort_unstable();
        seen.dedup();
        for id in seen {
            *df.entry(id).or_insert(0) += 1;
        }
    }
    let idf: HashMap<u32, f64> = df
        .iter()
        .map(|(&id, &d)| (id, (n_docs / d as f64).ln()))
        .collect();

    corpus
        .docs
        .iter()
        .map(|doc| {
            let len = doc.text.len() as f64;
            let mut counts: HashMap<u32, usize> = HashMap::new();
            for &id in &doc.text.tokens {
                *counts.entry(id).or_insert(0) += 1;
            }
            doc.text
                .tokens
                .iter()
                .map(|id| (counts[id] as f64 / len) * idf[id])
                .collect()
        })
        .collect()
}

/// Eq.-style per-position replacement probabilities: the normalized inverted
/// TF*IDF weight scaled by `p * |d|`, clamped into [0, 1]. A document whose
/// positions all share one TF*IDF value has zero total weight; it falls back
/// to the uniform probability `p`, preserving the expected count `p * |d|`.
pub fn compute_replace_probs(
    corpus: &Corpus,
    tfidf: &[Vec<f64>],
    p: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!(
            "noise magnitude p must be in [0, 1], got {p}"
        )));
    }
    Ok(corpus
        .docs
        .iter()
        .zip(tfidf)
        .map(|(doc, scores)| {
            let len = doc.text.len() as f64;
            let w_max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scores.iter().map(|s| w_max - s).collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                return vec![p; doc.text.len()];
            }
            weights
                .iter()
                .map(|w| (w / total * p * len).clamp(0.0, 1.0))
                .collect()
        })
        .collect())
}

/// The replacement-sampling distribution over the vocabulary: normalized
/// inverted ATF*IDF, where ATF is term frequency macro-averaged over all
/// documents. UNK and PAD are excluded from the support. When every content
/// word shares one ATF*IDF value (all weights zero) the distribution is
/// uniform over the content vocabulary.
pub fn compute_sample_dist(corpus: &Corpus) -> Result<(Vec<f64>, Vec<f64>)> {
    let vocab_len = corpus.vocab.len();
    let content: Vec<u32> = (0..vocab_len as u32)
        .filter(|&id| !corpus.vocab.is_special(id))
        .collect();
    if content.len() < 2 {
        return Err(Error::InvalidCorpus(
            "sampling distribution needs at least two content words".into(),
        ));
    }

    let n_docs = corpus.docs.len() as f64;
    let mut atf = vec![0.0f64; vocab_len];
    let mut df = vec![0usize; vocab_len];
    for doc in &corpus.docs {
        let len = doc.text.len() as f64;
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for &id in &doc.text.tokens {
            *counts.entry(id).or_insert(0) += 1;
        }
        for (&id, &c) in &counts {
            atf[id as usize] += c as f64 / len;
            df[id as usize] += 1;
        }
    }
    let atfidf: Vec<f64> = (0..vocab_len)
        .map(|i| {
            if df[i] == 0 {
                0.0
            } else {
                (atf[i] / n_docs) * (n_docs / df[i] as f64).ln()
            }
        })
        .collect();

    let w_max = content
        .iter()
        .map(|&id| atfidf[id as usize])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights = vec![0.0f64; vocab_len];
    for &id in &content {
        weights[id as usize] = w_max - atfidf[id as usize];
    }
    let total: f64 = weights.iter().sum();
    let dist: Vec<f64> = if total <= 1e-300 {
        let uniform = 1.0 / content.len() as f64;
        (0..vocab_len as u32)
            .map(|id| if corpus.vocab.is_special(id) { 0.0 } else { uniform })
            .collect()
    } else {
        weights.iter().map(|w| w / total).collect()
    };
    Ok((dist, atfidf))
}

/// Immutable bundle of every statistic noise injection needs, persisted as a
/// versioned JSON file. Safe to share across threads once computed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub version: u32,
    pub tf_variant: String,
    pub idf_variant: String,
    /// Noise magnitude the replacement probabilities were scaled with.
    pub p: f64,
    pub vocab_hash: String,
    pub vocab: Vocabulary,
    doc_ids: Vec<String>,
    tfidf: Vec<Vec<f64>>,
    replace_prob: Vec<Vec<f64>>,
    pub atfidf: Vec<f64>,
    pub sample_dist: Vec<f64>,
    /// Mean replacement probability per vocabulary id, for documents the
    /// stats were not computed over. `None` disables the fallback.
    fallback_prob: Option<Vec<f64>>,
    #[serde(skip)]
    doc_index: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn compute(corpus: &Corpus, p: f64) -> Result<CorpusStats> {
        let tfidf = compute_tfidf(corpus);
        let replace_prob = compute_replace_probs(corpus, &tfidf, p)?;
        let (sample_dist, atfidf) = compute_sample_dist(corpus)?;

        let vocab_len = corpus.vocab.len();
        let mut sums = vec![0.0f64; vocab_len];
        let mut counts = vec![0usize; vocab_len];
        for (doc, probs) in corpus.docs.iter().zip(&replace_prob) {
            for (&id, &prob) in doc.text.tokens.iter().zip(probs) {
                sums[id as usize] += prob;
                counts[id as usize] += 1;
            }
        }
        let fallback: Vec<f64> = (0..vocab_len)
            .map(|i| if counts[i] == 0 { p } else { sums[i] / counts[i] as f64 })
            .collect();

        let doc_ids: Vec<String> = corpus.docs.iter().map(|d| d.id.clone()).collect();
        let doc_index = doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(CorpusStats {
            version: STATS_VERSION,
            tf_variant: TF_VARIANT.into(),
            idf_variant: IDF_VARIANT.into(),
            p,
            vocab_hash: corpus.vocab.hash(),
            vocab: corpus.vocab.clone(),
            doc_ids,
            tfidf,
            replace_prob,
            atfidf,
            sample_dist,
            fallback_prob: Some(fallback),
            doc_index,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn tfidf_of(&self, doc_id: &str) -> Option<&[f64]> {
        self.doc_index.get(doc_id).map(|&i| self.tfidf[i].as_slice())
    }

    pub fn replace_probs_of(&self, doc_id: &str) -> Option<&[f64]> {
        self.doc_index
            .get(doc_id)
            .map(|&i| self.replace_prob[i].as_slice())
    }

    pub fn fallback_probs(&self) -> Option<&[f64]> {
        self.fallback_prob.as_deref()
    }

    pub fn clear_fallback(&mut self) {
        self.fallback_prob = None;
    }

    /// Per-position replacement probabilities for a document: by id when the
    /// stats cover it, otherwise through the form-level fallback table.
    pub fn position_probs(&self, doc_id: &str, tokens: &[u32]) -> Result<Vec<f64>> {
        if let Some(probs) = self.replace_probs_of(doc_id) {
            return Ok(probs.to_vec());
        }
        match &self.fallback_prob {
            Some(table) => Ok(tokens
                .iter()
                .map(|&id| table.get(id as usize).copied().unwrap_or(self.p))
                .collect()),
            None => Err(Error::MissingStats(doc_id.to_string())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CorpusStats> {
        let raw = crate::util::read_file(path)?;
        let mut stats: CorpusStats = serde_json::from_str(&raw)?;
        if stats.version != STATS_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported stats version {}",
                stats.version
            )));
        }
        stats.doc_index = stats
            .doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(stats)
    }
}
