//! Tokenization, sentence segmentation, vocabulary construction, and the
//! corpus-level statistics that parameterize noise injection.

mod stats;

pub use stats::{
    compute_replace_probs, compute_sample_dist, compute_tfidf, CorpusStats, IDF_VARIANT,
    STATS_VERSION, TF_VARIANT,
};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_FORM: &str = "<pad>";
pub const UNK_FORM: &str = "<unk>";

/// A raw ingested document. Labels are optional so unlabeled corpora can be
/// used for statistics only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub raw_text: String,
    pub label: Option<String>,
}

/// A tokenized document: vocabulary ids, the parallel surface forms, and
/// half-open sentence intervals covering `[0, T)` without gaps or overlap.
///
/// `tokens` are all [`UNK_ID`] until [`Vocabulary::encode`] assigns real ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub tokens: Vec<u32>,
    pub token_strings: Vec<String>,
    pub sentence_bounds: Vec<(usize, usize)>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Sentence index containing token position `pos`.
    pub fn sentence_of(&self, pos: usize) -> Option<usize> {
        self.sentence_bounds
            .iter()
            .position(|&(s, e)| pos >= s && pos < e)
    }
}

/// Splits on whitespace and punctuation boundaries; punctuation becomes
/// standalone tokens. `<br>`-style HTML break tags are stripped first (they
/// count as line breaks, so a doubled tag forms a blank line). Sentences end
/// after runs of `.`, `!`, `?` and at blank lines.
pub fn tokenize(text: &str, lowercase: bool) -> Result<TokenizedText> {
    let normalized = strip_break_tags(text);
    let mut token_strings: Vec<String> = Vec::new();
    let mut sentence_bounds: Vec<(usize, usize)> = Vec::new();
    let mut sentence_start = 0usize;

    // Paragraphs (blank-line separated) force sentence boundaries.
    for paragraph in split_paragraphs(&normalized) {
        for raw in paragraph.split_whitespace() {
            let mut word = String::new();
            for ch in raw.chars() {
                if ch.is_alphanumeric() {
                    word.push(if lowercase {
                        ch.to_lowercase().next().unwrap_or(ch)
                    } else {
                        ch
                    });
                } else {
                    if !word.is_empty() {
                        token_strings.push(std::mem::take(&mut word));
                    }
                    token_strings.push(ch.to_string());
                }
            }
            if !word.is_empty() {
                token_strings.push(word);
            }
        }
        // Close sentences after maximal runs of terminal punctuation.
        let upto = token_strings.len();
        let mut i = sentence_start;
        while i < upto {
            let terminal = is_terminal(&token_strings[i]);
            let next_terminal = i + 1 < upto && is_terminal(&token_strings[i + 1]);
            if terminal && !next_terminal {
                sentence_bounds.push((sentence_start, i + 1));
                sentence_start = i + 1;
            }
            i += 1;
        }
        if sentence_start < upto {
            sentence_bounds.push((sentence_start, upto));
            sentence_start = upto;
        }
    }

    if token_strings.is_empty() {
        return Err(Error::EmptyDocument);
    }
    Ok(TokenizedText {
        tokens: vec![UNK_ID; token_strings.len()],
        token_strings,
        sentence_bounds,
    })
}

/// Whitespace-only tokenization that preserves pre-tokenized boundaries
/// (annotation offsets stay aligned). Each input line is one sentence.
pub fn tokenize_whitespace(text: &str, lowercase: bool) -> Result<TokenizedText> {
    let normalized = strip_break_tags(text);
    let mut token_strings = Vec::new();
    let mut sentence_bounds = Vec::new();
    for line in normalized.lines() {
        let start = token_strings.len();
        for tok in line.split_whitespace() {
            token_strings.push(if lowercase {
                tok.to_lowercase()
            } else {
                tok.to_string()
            });
        }
        if token_strings.len() > start {
            sentence_bounds.push((start, token_strings.len()));
        }
    }
    if token_strings.is_empty() {
        return Err(Error::EmptyDocument);
    }
    Ok(TokenizedText {
        tokens: vec![UNK_ID; token_strings.len()],
        token_strings,
        sentence_bounds,
    })
}

fn is_terminal(tok: &str) -> bool {
    matches!(tok, "." | "!" | "?")
}

fn strip_break_tags(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let bytes = text.as_bytes();
    let lower = text.to_lowercase();
    let lower_bytes = lower.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if lower_bytes[i] == b'<' && lower[i..].starts_with("<br") {
            if let Some(close) = lower[i..].find('>') {
                let inner = &lower[i + 3..i + close];
                if inner.trim() == "/" || inner.trim().is_empty() {
                    out.push('\n');
                    i += close + 1;
                    continue;
                }
            }
        }
        // Multi-byte chars: copy the full char, not the byte.
        let ch = text[i..].chars().next().unwrap();
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}

fn split_paragraphs(text: &str) -> Vec<String> {
    let mut paragraphs = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.trim().is_empty() {
                paragraphs.push(std::mem::take(&mut current));
            }
            current.clear();
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.trim().is_empty() {
        paragraphs.push(current);
    }
    paragraphs
}

/// Bijective form <-> dense id mapping with reserved PAD and UNK slots.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    forms: Vec<String>,
    index_of: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(forms: Vec<String>) -> Self {
        Vocabulary::from_forms(forms)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Vec<String> {
        v.forms
    }
}

impl Vocabulary {
    pub fn from_forms(forms: Vec<String>) -> Self {
        let index_of = forms
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i as u32))
            .collect();
        Vocabulary { forms, index_of }
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    pub fn id_of(&self, form: &str) -> Option<u32> {
        self.index_of.get(form).copied()
    }

    pub fn form_of(&self, id: u32) -> Option<&str> {
        self.forms.get(id as usize).map(|s| s.as_str())
    }

    pub fn forms(&self) -> &[String] {
        &self.forms
    }

    pub fn is_special(&self, id: u32) -> bool {
        id == PAD_ID || id == UNK_ID
    }

    /// Resolve token ids in place; unknown forms map to UNK.
    pub fn encode(&self, text: &mut TokenizedText) {
        for (slot, form) in text.tokens.iter_mut().zip(&text.token_strings) {
            *slot = self.id_of(form).unwrap_or(UNK_ID);
        }
    }

    pub fn hash(&self) -> String {
        crate::util::sha256_hex(self.forms.join("\n").as_bytes())
    }
}

/// Forms occurring at least `min_count` times get ids, ordered by descending
/// count then lexicographically; everything else maps to UNK.
pub fn build_vocab<'a, I>(texts: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a TokenizedText>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut any = false;
    for text in texts {
        any = true;
        for form in &text.token_strings {
            *counts.entry(form.as_str()).or_insert(0) += 1;
        }
    }
    if !any {
        return Err(Error::InvalidCorpus("no documents".into()));
    }
    let mut entries: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut forms = vec![PAD_FORM.to_string(), UNK_FORM.to_string()];
    forms.extend(entries.into_iter().map(|(f, _)| f.to_string()));
    Ok(Vocabulary::from_forms(forms))
}

/// A tokenized, id-encoded document within a [`Corpus`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    pub label: Option<String>,
    pub text: TokenizedText,
}

/// The document set plus its vocabulary; ids are unique and every text is
/// encoded against `vocab`.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub docs: Vec<CorpusDoc>,
    pub vocab: Vocabulary,
}

impl Corpus {
    pub fn build(documents: Vec<Document>, lowercase: bool, min_count: usize) -> Result<Corpus> {
        let mut seen = HashMap::new();
        let mut docs = Vec::with_capacity(documents.len());
        for doc in documents {
            if seen.insert(doc.id.clone(), ()).is_some() {
                return Err(Error::InvalidCorpus(format!("duplicate document id `{}`", doc.id)));
            }
            let text = tokenize(&doc.raw_text, lowercase)?;
            docs.push(CorpusDoc {
                id: doc.id,
                label: doc.label,
                text,
            });
        }
        if docs.is_empty() {
            return Err(Error::InvalidCorpus("no documents".into()));
        }
        let vocab = build_vocab(docs.iter().map(|d| &d.text), min_count)?;
        for doc in &mut docs {
            vocab.encode(&mut doc.text);
        }
        Ok(Corpus { docs, vocab })
    }

    /// Build from already-tokenized texts (whitespace-preserving loaders).
    pub fn from_tokenized(
        docs: Vec<(String, Option<String>, TokenizedText)>,
        min_count: usize,
    ) -> Result<Corpus> {
        let mut out = Vec::with_capacity(docs.len());
        let mut seen = HashMap::new();
        for (id, label, text) in docs {
            if seen.insert(id.clone(), ()).is_some() {
                return Err(Error::InvalidCorpus(format!("duplicate document id `{id}`")));
            }
            out.push(CorpusDoc { id, label, text });
        }
        if out.is_empty() {
            return Err(Error::InvalidCorpus("no documents".into()));
        }
        let vocab = build_vocab(out.iter().map(|d| &d.text), min_count)?;
        for doc in &mut out {
            vocab.encode(&mut doc.text);
        }
        Ok(Corpus { docs: out, vocab })
    }

    pub fn doc(&self, id: &str) -> Option<&CorpusDoc> {
        self.docs.iter().find(|d| d.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_single_sentence() {
        let t = tokenize("Good movie.", true).unwrap();
        assert_eq!(t.token_strings, vec!["good", "movie", "."]);
        assert_eq!(t.sentence_bounds, vec![(0, 3)]);
    }

    #[test]
    fn tokenize_break_tag_and_terminal_punctuation() {
        let t = tokenize("Bad!<br />Sad.", true).unwrap();
        assert_eq!(t.token_strings, vec!["bad", "!", "sad", "."]);
        assert_eq!(t.sentence_bounds, vec![(0, 2), (2, 4)]);
    }

    #[test]
    fn tokenize_empty_is_an_error() {
        assert!(matches!(tokenize("", true), Err(Error::EmptyDocument)));
        assert!(matches!(tokenize("  \n\t ", true), Err(Error::EmptyDocument)));
        assert!(matches!(
            tokenize("<br /><br />", true),
            Err(Error::EmptyDocument)
        ));
    }

    #[test]
    fn tokenize_blank_line_splits_sentences() {
        let t = tokenize("one two\n\nthree", true).unwrap();
        assert_eq!(t.token_strings, vec!["one", "two", "three"]);
        assert_eq!(t.sentence_bounds, vec![(0, 2), (2, 3)]);
    }

    #[test]
    fn tokenize_run_of_terminals_stays_in_one_sentence() {
        let t = tokenize("Wow!! Fine.", true).unwrap();
        assert_eq!(t.token_strings, vec!["wow", "!", "!", "fine", "."]);
        assert_eq!(t.sentence_bounds, vec![(0, 3), (3, 5)]);
    }

    #[test]
    fn sentence_bounds_partition_positions() {
        let t = tokenize("A b c. D e! F?", true).unwrap();
        let mut covered = vec![false; t.len()];
        for &(s, e) in &t.sentence_bounds {
            assert!(s < e);
            for slot in &mut covered[s..e] {
                assert!(!*slot, "overlap");
                *slot = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn vocab_includes_shared_words() {
        let a = tokenize("good movie", true).unwrap();
        let b = tokenize("good acting", true).unwrap();
        let v = build_vocab([&a, &b], 1).unwrap();
        assert!(v.id_of("good").is_some());
    }

    #[test]
    fn vocab_min_count_maps_rare_to_unk() {
        let a = tokenize("good movie", true).unwrap();
        let b = tokenize("good acting", true).unwrap();
        let v = build_vocab([&a, &b], 2).unwrap();
        assert!(v.id_of("movie").is_none());
        let mut enc = a.clone();
        v.encode(&mut enc);
        assert_eq!(enc.tokens[1], UNK_ID);
        assert_eq!(enc.tokens[0], v.id_of("good").unwrap());
    }

    #[test]
    fn vocab_ties_break_lexicographically() {
        let a = tokenize("movie good movie good movie good", true).unwrap();
        let v = build_vocab([&a], 1).unwrap();
        // counts {movie: 3, good: 3}: "good" sorts first.
        assert!(v.id_of("good").unwrap() < v.id_of("movie").unwrap());
        assert_eq!(v.id_of("good").unwrap(), 2);
    }

    #[test]
    fn vocab_ids_are_dense_and_bijective() {
        let a = tokenize("x y z y z z", true).unwrap();
        let v = build_vocab([&a], 1).unwrap();
        for id in 0..v.len() as u32 {
            let form = v.form_of(id).unwrap();
            assert_eq!(v.id_of(form), Some(id));
        }
        assert_eq!(v.form_of(PAD_ID).unwrap(), PAD_FORM);
        assert_eq!(v.form_of(UNK_ID).unwrap(), UNK_FORM);
    }

    #[test]
    fn corpus_rejects_duplicate_ids() {
        let docs = vec![
            Document {
                id: "a".into(),
                raw_text: "one".into(),
                label: None,
            },
            Document {
                id: "a".into(),
                raw_text: "two".into(),
                label: None,
            },
        ];
        assert!(matches!(
            Corpus::build(docs, true, 1),
            Err(Error::InvalidCorpus(_))
        ));
    }
}
