//! File formats: dataset JSONL lines and the self-contained trained-model
//! file (parameters, model config, vocabulary, label names).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use rationalize::corpus::{tokenize, Corpus, Document, Vocabulary};
use rationalize::diffcore::Checkpoint;
use rationalize::error::{Error, Result};
use rationalize::eval::{EvalExample, Granularity, RationaleSpanSet};
use rationalize::model::{ModelConfig, RationaleModel};
use rationalize::training::{LabeledExample, TrainConfig};

/// One dataset example on disk. `evidences` are token spans (test splits);
/// `gold_sentences` mark sentence-annotated data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataLine {
    pub id: String,
    pub text: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidences: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sentences: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<Granularity>,
}

pub fn read_jsonl(path: &Path) -> Result<Vec<DataLine>> {
    let raw = rationalize::util::read_file(path)?;
    let mut out = Vec::new();
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line)?);
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, lines: &[DataLine]) -> Result<()> {
    let mut buf = String::new();
    for line in lines {
        buf.push_str(&serde_json::to_string(line)?);
        buf.push('\n');
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Distinct labels in first-seen-sorted order; the class-id mapping.
pub fn label_names(lines: &[DataLine]) -> Vec<String> {
    let mut set = BTreeSet::new();
    for l in lines {
        set.insert(l.label.clone());
    }
    set.into_iter().collect()
}

pub fn label_id(names: &[String], label: &str, example_id: &str) -> Result<usize> {
    names.iter().position(|n| n == label).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "example `{example_id}` has unknown label `{label}` (known: {names:?})"
        ))
    })
}

/// Tokenize and encode training lines, building the corpus and vocabulary
/// from them.
pub fn corpus_from_lines(lines: &[DataLine], lowercase: bool, min_count: usize) -> Result<Corpus> {
    let documents = lines
        .iter()
        .map(|l| Document {
            id: l.id.clone(),
            raw_text: l.text.clone(),
            label: Some(l.label.clone()),
        })
        .collect();
    Corpus::build(documents, lowercase, min_count)
}

pub fn labeled_examples(
    lines: &[DataLine],
    vocab: &Vocabulary,
    names: &[String],
    lowercase: bool,
) -> Result<Vec<LabeledExample>> {
    lines
        .iter()
        .map(|l| {
            let mut text = tokenize(&l.text, lowercase)?;
            vocab.encode(&mut text);
            Ok(LabeledExample {
                id: l.id.clone(),
                text,
                label: label_id(names, &l.label, &l.id)?,
            })
        })
        .collect()
}

pub fn eval_examples(
    lines: &[DataLine],
    vocab: &Vocabulary,
    names: &[String],
    lowercase: bool,
) -> Result<Vec<EvalExample>> {
    lines
        .iter()
        .map(|l| {
            let mut text = tokenize(&l.text, lowercase)?;
            vocab.encode(&mut text);
            let gold_tokens = match &l.evidences {
                Some(spans) => Some(RationaleSpanSet::new(spans.clone())?),
                None => None,
            };
            Ok(EvalExample {
                id: l.id.clone(),
                label: label_id(names, &l.label, &l.id)?,
                gold_tokens,
                gold_sentences: l
                    .gold_sentences
                    .as_ref()
                    .map(|s| s.iter().copied().collect()),
                text,
            })
        })
        .collect()
}

/// A checkpoint bundled with everything needed to rebuild and run the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModelFile {
    pub model: ModelConfig,
    pub train_config: TrainConfig,
    pub vocab: Vocabulary,
    pub labels: Vec<String>,
    pub lowercase: bool,
    pub checkpoint: Checkpoint,
}

impl TrainedModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = rationalize::util::read_file(path)?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn rebuild_model(&self) -> Result<RationaleModel> {
        let mut model = RationaleModel::new(self.model.clone(), self.checkpoint.seed)?;
        model.params.load_checkpoint(&self.checkpoint)?;
        Ok(model)
    }
}
