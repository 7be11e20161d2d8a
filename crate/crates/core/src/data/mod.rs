//! Dataset construction: ERASER-style annotated ingestion, benchmark
//! assembly from raw review directories, cross-corpus overlap detection, and
//! synthetic corpora with planted gold rationales for desk-scale
//! experiments.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, tokenize_whitespace, Document, TokenizedText};
use crate::error::{Error, Result};
use crate::eval::RationaleSpanSet;
use crate::noise::{seed_purpose, BinaryMask};
use crate::util::derive_seed;

/// Version tag for the bundled normalization assets; recorded in overlap
/// reports so results stay comparable across releases.
pub const STOPWORDS_VERSION: &str = "v1";

static STOPWORDS_RAW: &str = include_str!("stopwords.txt");

fn stopword_set() -> &'static HashSet<String> {
    use std::sync::OnceLock;
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        let mut set = HashSet::new();
        for w in STOPWORDS_RAW.lines() {
            let w = w.trim();
            if w.is_empty() {
                continue;
            }
            set.insert(w.to_string());
            // Apostrophe-stripped variant so "don't", "dont" and the
            // pre-tokenized "do n't" all normalize into the list.
            let stripped: String = w.chars().filter(|c| c.is_alphanumeric()).collect();
            set.insert(stripped);
        }
        // Contraction fragments left over by punctuation-splitting
        // tokenizers.
        for frag in ["t", "s", "d", "m", "ll", "re", "ve", "nt"] {
            set.insert(frag.to_string());
        }
        set
    })
}

/// Deterministic rule-based suffix stemmer, the bundled stand-in for a
/// lemmatizer. Both sides of an overlap comparison run through the same
/// rules, which is what makes the hash join meaningful.
pub fn stem(word: &str) -> String {
    let mut w = word.to_string();
    if let Some(base) = w.strip_suffix("sses") {
        w = format!("{base}ss");
    } else if let Some(base) = w.strip_suffix("ies") {
        w = format!("{base}i");
    } else if w.ends_with("ss") {
        // keep
    } else if w.len() > 3 {
        if let Some(base) = w.strip_suffix('s') {
            w = base.to_string();
        }
    }
    if w.len() >= 6 {
        if let Some(base) = w.strip_suffix("ing") {
            w = base.to_string();
        }
    }
    if w.len() >= 5 {
        if let Some(base) = w.strip_suffix("ed") {
            w = base.to_string();
        }
    }
    if w.len() >= 5 {
        if let Some(base) = w.strip_suffix("ly") {
            w = base.to_string();
        }
    }
    if w.len() >= 5 {
        if let Some(base) = w.strip_suffix('e') {
            w = base.to_string();
        }
    }
    w
}

/// Lowercase, drop punctuation-only tokens and stop-words, stem the rest.
pub fn normalize_tokens(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .filter_map(|tok| {
            let alnum: String = tok
                .chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(|c| c.to_lowercase())
                .collect();
            if alnum.is_empty() || stopword_set().contains(&alnum) {
                return None;
            }
            Some(stem(&alnum))
        })
        .collect()
}

/// Minimum surviving tokens for a sentence to participate in overlap
/// detection; shorter sentences produce generic matches.
pub const MIN_OVERLAP_TOKENS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapMatch {
    pub a_doc: String,
    pub a_sentence: usize,
    pub b_doc: String,
    pub b_sentence: usize,
    pub normalized: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapReport {
    pub stopwords_version: String,
    pub min_tokens: usize,
    pub matches: Vec<OverlapMatch>,
}

/// Exact matches between normalized sentences of two corpora that span at
/// least [`MIN_OVERLAP_TOKENS`] surviving tokens, found with a hash join.
/// Symmetric: swapping the arguments yields the same pair set.
pub fn detect_overlap(
    a: &[(String, TokenizedText)],
    b: &[(String, TokenizedText)],
) -> OverlapReport {
    fn keyed_sentences(corpus: &[(String, TokenizedText)]) -> Vec<(String, usize, String)> {
        let mut out = Vec::new();
        for (doc_id, text) in corpus {
            for (sent_idx, &(s, e)) in text.sentence_bounds.iter().enumerate() {
                let normalized = normalize_tokens(&text.token_strings[s..e]);
                if normalized.len() >= MIN_OVERLAP_TOKENS {
                    out.push((doc_id.clone(), sent_idx, normalized.join(" ")));
                }
            }
        }
        out
    }

    let mut index: HashMap<&str, Vec<(&str, usize)>> = HashMap::new();
    let a_sentences = keyed_sentences(a);
    for (doc, sent, key) in &a_sentences {
        index.entry(key).or_default().push((doc, *sent));
    }
    let mut matches = Vec::new();
    for (b_doc, b_sent, key) in keyed_sentences(b) {
        if let Some(hits) = index.get(key.as_str()) {
            for &(a_doc, a_sent) in hits {
                matches.push(OverlapMatch {
                    a_doc: a_doc.to_string(),
                    a_sentence: a_sent,
                    b_doc: b_doc.clone(),
                    b_sentence: b_sent,
                    normalized: key.clone(),
                });
            }
        }
    }
    matches.sort_by(|x, y| {
        (&x.a_doc, x.a_sentence, &y.b_doc, x.b_sentence).cmp(&(
            &y.a_doc,
            y.a_sentence,
            &x.b_doc,
            y.b_sentence,
        ))
    });
    OverlapReport {
        stopwords_version: STOPWORDS_VERSION.into(),
        min_tokens: MIN_OVERLAP_TOKENS,
        matches,
    }
}

/// One annotated example in the ERASER-style directory layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EraserExample {
    pub annotation_id: String,
    pub doc_id: String,
    pub classification: String,
    /// Half-open token intervals into the referenced document.
    pub evidences: Vec<(usize, usize)>,
    /// Which source file the example came from.
    pub split: String,
}

impl EraserExample {
    /// Union of the evidence intervals as a span set.
    pub fn gold_spans(&self, doc_len: usize) -> Result<RationaleSpanSet> {
        let mut bits = vec![0u8; doc_len];
        for &(s, e) in &self.evidences {
            if s >= e || e > doc_len {
                return Err(Error::CorruptAnnotation {
                    annotation_id: self.annotation_id.clone(),
                    doc_id: self.doc_id.clone(),
                    detail: format!("evidence ({s}, {e}) outside document of {doc_len} tokens"),
                });
            }
            for b in &mut bits[s..e] {
                *b = 1;
            }
        }
        Ok(RationaleSpanSet::from_mask(&BinaryMask::new(bits)))
    }
}

#[derive(Serialize, Deserialize)]
struct EvidenceLine {
    start_token: usize,
    end_token: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    docid: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct EraserLine {
    annotation_id: String,
    classification: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    doc_id: Option<String>,
    evidences: Vec<EvidenceLine>,
}

const ERASER_SPLITS: [&str; 3] = ["train", "val", "test"];

/// Load an ERASER-style directory: `docs/<doc_id>` plain-text files (one
/// sentence per line, whitespace-tokenized) plus any of train/val/test
/// `.jsonl` annotation files. Token boundaries follow the documents'
/// whitespace exactly so evidence offsets stay aligned.
pub fn load_eraser(dir: &Path) -> Result<Vec<(EraserExample, TokenizedText)>> {
    let docs_dir = dir.join("docs");
    let mut cache: HashMap<String, TokenizedText> = HashMap::new();
    let mut out = Vec::new();
    let mut any_file = false;

    for split in ERASER_SPLITS {
        let path = dir.join(format!("{split}.jsonl"));
        if !path.exists() {
            continue;
        }
        any_file = true;
        let raw = crate::util::read_file(&path)?;
        for line in raw.lines().filter(|l| !l.trim().is_empty()) {
            let parsed: EraserLine = serde_json::from_str(line)?;
            let doc_id = parsed.doc_id.unwrap_or_else(|| parsed.annotation_id.clone());
            if !cache.contains_key(&doc_id) {
                let doc_path = docs_dir.join(&doc_id);
                let raw_doc = crate::util::read_file(&doc_path)?;
                cache.insert(doc_id.clone(), tokenize_whitespace(&raw_doc, false)?);
            }
            let text = cache[&doc_id].clone();
            let example = EraserExample {
                annotation_id: parsed.annotation_id,
                doc_id: doc_id.clone(),
                classification: parsed.classification,
                evidences: parsed
                    .evidences
                    .iter()
                    .map(|e| (e.start_token, e.end_token))
                    .collect(),
                split: split.to_string(),
            };
            // Validates bounds eagerly so corrupt files fail at load time.
            example.gold_spans(text.len())?;
            out.push((example, text));
        }
    }
    if !any_file {
        return Err(Error::InvalidConfig(format!(
            "no train/val/test .jsonl files under {}",
            dir.display()
        )));
    }
    Ok(out)
}

/// Write examples back into the directory layout `load_eraser` reads;
/// loading the result reproduces the inputs exactly.
pub fn save_eraser(dir: &Path, examples: &[(EraserExample, TokenizedText)]) -> Result<()> {
    let docs_dir = dir.join("docs");
    std::fs::create_dir_all(&docs_dir)?;
    let mut lines: HashMap<&str, Vec<String>> = HashMap::new();
    let mut written: HashSet<&str> = HashSet::new();
    for (example, text) in examples {
        if written.insert(example.doc_id.as_str()) {
            let doc: Vec<String> = text
                .sentence_bounds
                .iter()
                .map(|&(s, e)| text.token_strings[s..e].join(" "))
                .collect();
            std::fs::write(docs_dir.join(&example.doc_id), doc.join("\n"))?;
        }
        let line = EraserLine {
            annotation_id: example.annotation_id.clone(),
            classification: example.classification.clone(),
            doc_id: Some(example.doc_id.clone()),
            evidences: example
                .evidences
                .iter()
                .map(|&(s, e)| EvidenceLine {
                    start_token: s,
                    end_token: e,
                    docid: Some(example.doc_id.clone()),
                })
                .collect(),
        };
        lines
            .entry(match example.split.as_str() {
                "train" | "val" | "test" => {
                    ERASER_SPLITS[ERASER_SPLITS.iter().position(|s| *s == example.split).unwrap()]
                }
                _ => "test",
            })
            .or_default()
            .push(serde_json::to_string(&line)?);
    }
    for (split, content) in lines {
        std::fs::write(dir.join(format!("{split}.jsonl")), content.join("\n"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One line of the merged benchmark: raw lowercased text plus, on the test
/// split only, token-level evidence spans.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UsrExample {
    pub id: String,
    pub text: String,
    pub label: String,
    pub split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidences: Option<Vec<(usize, usize)>>,
}

#[derive(Debug)]
pub struct UsrBuild {
    pub examples: Vec<UsrExample>,
    pub overlap: OverlapReport,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
}

/// Paper-scale split sizes; smaller stand-in corpora split 80/20
/// proportionally instead.
const FULL_TRAIN: usize = 40_000;
const FULL_VAL: usize = 10_000;

fn canonical_label(raw: &str) -> String {
    match raw.to_lowercase().as_str() {
        "pos" | "positive" | "1" => "positive".into(),
        "neg" | "negative" | "0" => "negative".into(),
        other => other.into(),
    }
}

/// Merge a raw review directory (`pos/`, `neg/` of text files) with an
/// ERASER-style annotated directory: the unannotated reviews become the
/// train/validation splits by seeded shuffle, every annotated example
/// becomes the test split, and a cross-corpus overlap report is embedded.
pub fn build_usr(imdb_dir: &Path, eraser_dir: &Path, seed: u64) -> Result<UsrBuild> {
    let mut reviews: Vec<(String, String, String)> = Vec::new(); // (id, label, text)
    for (sub, label) in [("pos", "positive"), ("neg", "negative")] {
        let sub_dir = imdb_dir.join(sub);
        if !sub_dir.is_dir() {
            return Err(Error::InvalidConfig(format!(
                "missing directory {}",
                sub_dir.display()
            )));
        }
        let mut paths: Vec<_> = std::fs::read_dir(&sub_dir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        for path in paths {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_default();
            let text = crate::util::read_file(&path)?.to_lowercase();
            reviews.push((format!("imdb-{sub}-{stem}"), label.to_string(), text));
        }
    }
    if reviews.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "need at least 5 unannotated reviews, found {}",
            reviews.len()
        )));
    }

    let annotated = load_eraser(eraser_dir)?;
    if annotated.is_empty() {
        return Err(Error::InsufficientData(
            "annotated source contains no examples".into(),
        ));
    }

    let (n_train, n_val) = if reviews.len() >= FULL_TRAIN + FULL_VAL {
        (FULL_TRAIN, FULL_VAL)
    } else {
        let train = (reviews.len() * 4) / 5;
        (train, reviews.len() - train)
    };

    let mut order: Vec<usize> = (0..reviews.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, seed_purpose::DATA, 0));
    order.shuffle(&mut rng);

    let mut examples = Vec::with_capacity(reviews.len() + annotated.len());
    for (rank, &idx) in order.iter().enumerate().take(n_train + n_val) {
        let (id, label, text) = &reviews[idx];
        examples.push(UsrExample {
            id: id.clone(),
            text: text.clone(),
            label: label.clone(),
            split: if rank < n_train { Split::Train } else { Split::Val },
            evidences: None,
        });
    }
    for (example, text) in &annotated {
        let raw: Vec<String> = text
            .sentence_bounds
            .iter()
            .map(|&(s, e)| text.token_strings[s..e].join(" "))
            .collect();
        let spans = example.gold_spans(text.len())?;
        examples.push(UsrExample {
            id: format!("eraser-{}", example.annotation_id),
            text: raw.join("\n").to_lowercase(),
            label: canonical_label(&example.classification),
            split: Split::Test,
            evidences: Some(spans.spans().to_vec()),
        });
    }

    let imdb_tokenized: Vec<(String, TokenizedText)> = reviews
        .iter()
        .map(|(id, _, text)| Ok((id.clone(), tokenize(text, true)?)))
        .collect::<Result<_>>()?;
    let eraser_tokenized: Vec<(String, TokenizedText)> = annotated
        .iter()
        .map(|(e, t)| {
            let mut lowered = t.clone();
            for s in &mut lowered.token_strings {
                *s = s.to_lowercase();
            }
            (format!("eraser-{}", e.annotation_id), lowered)
        })
        .collect();
    let overlap = detect_overlap(&imdb_tokenized, &eraser_tokenized);

    Ok(UsrBuild {
        train_count: n_train,
        val_count: n_val,
        test_count: annotated.len(),
        examples,
        overlap,
    })
}

/// Surface form of the planted label-correlated, low-TF*IDF token.
pub const LEAK_TOKEN: &str = "leakword";
/// Class-conditional insertion probabilities: class 0 vs every other class.
pub const LEAK_PROBS: (f64, f64) = (0.9, 0.1);

/// Recipe for a planted-keyword corpus: filler tokens with class-indicative
/// lexicon words at known positions, optionally plus a frequent token whose
/// presence correlates with class 0 but is excluded from the gold rationale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub filler_vocab: usize,
    pub doc_len: (usize, usize),
    pub lexicons: Vec<Vec<String>>,
    pub keywords_per_doc: usize,
    pub leak_token: bool,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.lexicons.len() < 2 || self.lexicons.iter().any(|l| l.is_empty()) {
            return Err(Error::InvalidConfig(
                "need at least two non-empty keyword lexicons".into(),
            ));
        }
        let mut seen = HashSet::new();
        for word in self.lexicons.iter().flatten() {
            if !seen.insert(word.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "lexicons must be disjoint; `{word}` repeats"
                )));
            }
            if word == LEAK_TOKEN {
                return Err(Error::InvalidConfig(format!(
                    "`{LEAK_TOKEN}` is reserved for the leak channel"
                )));
            }
        }
        if self.filler_vocab == 0 || self.keywords_per_doc == 0 {
            return Err(Error::InvalidConfig("sizes must be positive".into()));
        }
        if self.doc_len.0 > self.doc_len.1 || self.doc_len.0 < self.keywords_per_doc + 2 {
            return Err(Error::InvalidConfig(format!(
                "doc length range {:?} cannot hold {} keywords plus a leak slot",
                self.doc_len, self.keywords_per_doc
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticDoc {
    pub id: String,
    pub token_strings: Vec<String>,
    pub label: usize,
    /// Keyword positions, sorted: the gold rationale.
    pub gold: Vec<usize>,
    /// Every position holding the leak token (class-conditional insertion
    /// and background occurrences alike); never part of the gold.
    pub leak_positions: Vec<usize>,
}

impl SyntheticDoc {
    pub fn text(&self) -> String {
        self.token_strings.join(" ")
    }

    pub fn gold_spans(&self) -> RationaleSpanSet {
        RationaleSpanSet::from_mask(&BinaryMask::from_positions(
            self.token_strings.len(),
            &self.gold,
        ))
    }
}

/// Generate `n_docs` labeled documents with gold rationales at the keyword
/// positions. Deterministic for a given spec. Fillers draw uniformly from
/// the filler vocabulary; with a vocabulary comfortably larger than the
/// corpus' token budget per word, every filler is rare (high IDF), leaving
/// the leak as the one genuinely frequent, low-TF*IDF word.
pub fn gen_synthetic(spec: &SyntheticSpec, n_docs: usize) -> Result<Vec<SyntheticDoc>> {
    spec.validate()?;
    let n_classes = spec.lexicons.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, seed_purpose::DATA, 1));

    let mut docs = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let label = rng.gen_range(0..n_classes);
        let len = rng.gen_range(spec.doc_len.0..=spec.doc_len.1);
        let mut tokens: Vec<String> = (0..len)
            .map(|_| format!("w{}", rng.gen_range(0..spec.filler_vocab)))
            .collect();

        // One reserved slot beyond the keywords for the leak insertion.
        let positions: Vec<usize> = {
            let all: Vec<usize> = (0..len).collect();
            all.choose_multiple(&mut rng, spec.keywords_per_doc + 1)
                .copied()
                .collect()
        };
        let mut gold: Vec<usize> = positions[..spec.keywords_per_doc].to_vec();
        gold.sort_unstable();
        for &pos in &gold {
            let lexicon = &spec.lexicons[label];
            tokens[pos] = lexicon[rng.gen_range(0..lexicon.len())].clone();
        }

        let mut leak_positions = Vec::new();
        if spec.leak_token {
            let prob = if label == 0 { LEAK_PROBS.0 } else { LEAK_PROBS.1 };
            if rng.gen::<f64>() < prob {
                let pos = positions[spec.keywords_per_doc];
                tokens[pos] = LEAK_TOKEN.to_string();
                leak_positions.push(pos);
            }
        }

        docs.push(SyntheticDoc {
            id: format!("syn-{i}"),
            token_strings: tokens,
            label,
            gold,
            leak_positions,
        });
    }
    Ok(docs)
}

/// View the synthetic docs as raw documents for corpus/statistics building.
pub fn synthetic_to_documents(docs: &[SyntheticDoc]) -> Vec<Document> {
    docs.iter()
        .map(|d| Document {
            id: d.id.clone(),
            raw_text: d.text(),
            label: Some(format!("class{}", d.label)),
        })
        .collect()
}
