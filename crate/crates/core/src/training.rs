//! The cooperative training loop: score, hard-select, optionally perturb the
//! rationale, predict with both heads, minimize the coupled losses with
//! Adam, and checkpoint at the lowest validation loss. Runs are fully
//! reproducible from (config, seed, data order).

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusStats, TokenizedText};
use crate::data::{gen_synthetic, synthetic_to_documents, SyntheticSpec};
use crate::diffcore::{backward, Checkpoint, Tensor};
use crate::error::{Error, Result};
use crate::eval::{token_prf, EvalExample};
use crate::model::{
    combined_loss, losses, select, ModelConfig, PredictionPair, RationaleModel, SelectionStrategy,
};
use crate::noise::{inject_noise, seed_purpose, BinaryMask, PerturbedRationale, SeededRng};
use crate::util::{derive_seed, sha256_hex};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Flat training configuration. Defaults are sized for the small trainable
/// encoder here; settings tuned for fine-tuning large pretrained encoders
/// (e.g. lr 2e-5) do not transfer to this scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Closeness coefficient on the Jensen-Shannon coupling term.
    pub lambda: f64,
    /// Fraction of tokens the selection keeps.
    pub k_fraction: f64,
    /// Noise magnitude for replacement probabilities.
    pub p: f64,
    pub seed: u64,
    pub noise_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: 30,
            patience: 5,
            lambda: 0.1,
            k_fraction: 0.2,
            p: 0.2,
            seed: 0,
            noise_enabled: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidConfig(format!("p must be in [0, 1], got {}", self.p)));
        }
        if !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "k_fraction must be in (0, 1], got {}",
                self.k_fraction
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Hash over every setting that affects training outputs.
pub fn config_hash(cfg: &TrainConfig, model_cfg: &ModelConfig) -> String {
    let blob = serde_json::to_string(&(cfg, model_cfg)).expect("serializable configs");
    sha256_hex(blob.as_bytes())
}

#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub id: String,
    pub text: TokenizedText,
    pub label: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss_a: f64,
    pub train_loss_r: f64,
    pub val_loss_a: f64,
    pub val_loss_r: f64,
    pub val_accuracy_rationale: f64,
    pub val_accuracy_attention: f64,
}

/// Everything a finished run reports; serialized as `run.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl RunRecord {
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("serialize").as_bytes())
    }

    pub fn best_val_loss(&self) -> f64 {
        let e = &self.epochs[self.best_epoch];
        e.val_loss_a + e.val_loss_r
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_loss_a,train_loss_r,val_loss_a,val_loss_r,val_acc_rationale,val_acc_attention\n",
        );
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epoch,
                e.train_loss_a,
                e.train_loss_r,
                e.val_loss_a,
                e.val_loss_r,
                e.val_accuracy_rationale,
                e.val_accuracy_attention
            ));
        }
        out
    }
}

struct Adam {
    lr: f64,
    t: u64,
    slots: Vec<(String, Tensor, Tensor)>, // (name, m, v)
}

impl Adam {
    fn new(model: &RationaleModel, lr: f64) -> Adam {
        let slots = model
            .params
            .iter()
            .filter(|(_, _, trainable)| *trainable)
            .map(|(name, node, _)| {
                let (r, c) = node.shape();
                (name.to_string(), Tensor::zeros(r, c), Tensor::zeros(r, c))
            })
            .collect();
        Adam { lr, t: 0, slots }
    }

    /// One update from the accumulated gradients, scaled by `grad_scale`
    /// (1 / batch size). Gradients are cleared afterwards.
    fn step(&mut self, model: &RationaleModel, grad_scale: f64) {
        self.t += 1;
        let bias1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bias2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (name, m, v) in &mut self.slots {
            let node = model.params.get(name).expect("registered parameter");
            let grad = node.grad();
            node.update_data(|data| {
                for i in 0..data.len() {
                    let g = grad.as_slice()[i] * grad_scale;
                    let mi = ADAM_BETA1 * m.as_slice()[i] + (1.0 - ADAM_BETA1) * g;
                    let vi = ADAM_BETA2 * v.as_slice()[i] + (1.0 - ADAM_BETA2) * g * g;
                    m.as_mut_slice()[i] = mi;
                    v.as_mut_slice()[i] = vi;
                    let m_hat = mi / bias1;
                    let v_hat = vi / bias2;
                    data.as_mut_slice()[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            });
        }
        model.params.zero_grads();
    }
}

struct ForwardOutput {
    loss: crate::diffcore::Node,
    loss_a: f64,
    loss_r: f64,
    pair: PredictionPair,
}

fn forward_example(
    model: &RationaleModel,
    example: &LabeledExample,
    strategy: &SelectionStrategy,
    lambda: f64,
    noise: Option<(&CorpusStats, &mut SeededRng)>,
) -> Result<ForwardOutput> {
    let scores = model.score_tokens(&example.text)?;
    let mask = select(
        scores.value().as_slice(),
        strategy,
        &example.text.sentence_bounds,
    )?;
    let rationale = match noise {
        Some((stats, rng)) => inject_noise(&example.text, &example.id, &mask, stats, rng)?,
        None => PerturbedRationale::identity(&example.text),
    };
    let pair = PredictionPair {
        y_a: model.predict_attention(&example.text, &scores)?,
        y_r: model.predict_rationale(&rationale, &mask)?,
    };
    let loss = combined_loss(&pair, example.label, lambda)?;
    let (la, lr) = losses(&pair, example.label, lambda)?;
    Ok(ForwardOutput {
        loss,
        loss_a: la.item(),
        loss_r: lr.item(),
        pair,
    })
}

fn validate_labels(data: &[LabeledExample], n_classes: usize, split: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(split.into()));
    }
    for ex in data {
        if ex.label >= n_classes {
            return Err(Error::InvalidConfig(format!(
                "example `{}` has label {} but the model has {} classes",
                ex.id, ex.label, n_classes
            )));
        }
    }
    Ok(())
}

/// Train to the lowest validation loss with early stopping. The returned
/// checkpoint holds the best-epoch parameters; the model is left in that
/// state as well.
pub fn train(
    model: &mut RationaleModel,
    train_data: &[LabeledExample],
    val_data: &[LabeledExample],
    stats: &CorpusStats,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, RunRecord)> {
    cfg.validate()?;
    validate_labels(train_data, model.cfg.n_classes, "train")?;
    validate_labels(val_data, model.cfg.n_classes, "validation")?;
    let strategy = SelectionStrategy::new(model.cfg.selection, cfg.k_fraction)?;
    let hash = config_hash(cfg, &model.cfg);

    let mut adam = Adam::new(model, cfg.learning_rate);
    model.params.zero_grads();

    let mut record = RunRecord {
        seed: cfg.seed,
        config_hash: hash.clone(),
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, Vec<(String, Tensor)>)> = None;
    let mut epochs_without_improvement = 0usize;
    let mut step_index = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, seed_purpose::SHUFFLE, epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let mut noise_rng = SeededRng::for_epoch(cfg.seed, epoch as u64);

        let mut train_la = 0.0;
        let mut train_lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for &idx in batch {
                let example = &train_data[idx];
                let noise = if cfg.noise_enabled {
                    Some((stats, &mut noise_rng))
                } else {
                    None
                };
                let out = forward_example(model, example, &strategy, cfg.lambda, noise)?;
                if !out.loss.value().is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite training loss at step {step_index}"
                    )));
                }
                backward(&out.loss)?;
                train_la += out.loss_a;
                train_lr += out.loss_r;
                step_index += 1;
            }
            adam.step(model, 1.0 / batch.len() as f64);
        }
        train_la /= train_data.len() as f64;
        train_lr /= train_data.len() as f64;

        // Validation pass: noise disabled, no gradients consumed.
        let mut val_la = 0.0;
        let mut val_lr = 0.0;
        let mut correct_r = 0usize;
        let mut correct_a = 0usize;
        for example in val_data {
            let out = forward_example(model, example, &strategy, cfg.lambda, None)?;
            val_la += out.loss_a;
            val_lr += out.loss_r;
            if argmax(out.pair.y_r.value().as_slice()) == example.label {
                correct_r += 1;
            }
            if argmax(out.pair.y_a.value().as_slice()) == example.label {
                correct_a += 1;
            }
        }
        model.params.zero_grads();
        val_la /= val_data.len() as f64;
        val_lr /= val_data.len() as f64;

        record.epochs.push(EpochRecord {
            epoch,
            train_loss_a: train_la,
            train_loss_r: train_lr,
            val_loss_a: val_la,
            val_loss_r: val_lr,
            val_accuracy_rationale: correct_r as f64 / val_data.len() as f64,
            val_accuracy_attention: correct_a as f64 / val_data.len() as f64,
        });

        let val_total = val_la + val_lr;
        if best.as_ref().is_none_or(|(b, _)| val_total < *b) {
            best = Some((val_total, model.params.snapshot()));
            record.best_epoch = epoch;
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if epochs_without_improvement >= cfg.patience {
                break;
            }
        }
    }

    let (_, snapshot) = best.expect("at least one epoch ran");
    model.params.restore(&snapshot);
    let checkpoint = model.params.to_checkpoint(cfg.seed, &hash);
    Ok((checkpoint, record))
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Predicted masks plus gold-rationale token F1 (macro over examples with
/// non-empty gold) and rationale-head accuracy on a test set.
pub fn test_metrics(
    model: &RationaleModel,
    test: &[EvalExample],
    strategy: &SelectionStrategy,
) -> Result<(f64, f64, Vec<BinaryMask>)> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("test".into()));
    }
    let mut f1_sum = 0.0;
    let mut f1_n = 0usize;
    let mut correct = 0usize;
    let mut masks = Vec::with_capacity(test.len());
    for example in test {
        let scores = model.score_tokens(&example.text)?;
        let mask = select(
            scores.value().as_slice(),
            strategy,
            &example.text.sentence_bounds,
        )?;
        let y_r = model.predict_rationale(&PerturbedRationale::identity(&example.text), &mask)?;
        if argmax(y_r.value().as_slice()) == example.label {
            correct += 1;
        }
        if let Some(gold) = &example.gold_tokens {
            if !gold.is_empty() {
                let (_, _, f1) = token_prf(&mask, gold)?;
                f1_sum += f1;
                f1_n += 1;
            }
        }
        masks.push(mask);
    }
    Ok((
        f1_sum / f1_n.max(1) as f64,
        correct as f64 / test.len() as f64,
        masks,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRun {
    pub p: f64,
    pub seed: u64,
    pub f1: f64,
    pub accuracy: f64,
    pub best_epoch: usize,
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
    #[serde(skip)]
    pub test_masks: Vec<BinaryMask>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub p: f64,
    pub mean_f1: f64,
    pub se_f1: f64,
    pub mean_accuracy: f64,
    pub se_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub points: Vec<SweepPoint>,
    pub runs: Vec<SweepRun>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,mean_f1,se_f1,mean_accuracy,se_accuracy,n_seeds\n");
        let n = self.runs.len() / self.points.len().max(1);
        for pt in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                pt.p, pt.mean_f1, pt.se_f1, pt.mean_accuracy, pt.se_accuracy, n
            ));
        }
        out
    }

    pub fn point(&self, p: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|pt| pt.p == p)
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Train `grid x seeds` independent runs and aggregate gold-rationale F1 and
/// accuracy per noise level (mean and standard error across seeds). Runs
/// execute on up to `jobs` worker threads; each run is sequential and owns
/// its model, and the aggregation is a deterministic ordered reduce, so the
/// result is independent of `jobs`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_p<F>(
    model_factory: &F,
    corpus: &Corpus,
    train_data: &[LabeledExample],
    val_data: &[LabeledExample],
    test: &[EvalExample],
    cfg: &TrainConfig,
    grid: &[f64],
    seeds: &[u64],
    jobs: usize,
) -> Result<SweepTable>
where
    F: Fn(u64) -> Result<RationaleModel> + Sync,
{
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("sweep grid and seeds must be non-empty".into()));
    }
    let stats_per_p: Vec<CorpusStats> = grid
        .iter()
        .map(|&p| CorpusStats::compute(corpus, p))
        .collect::<Result<_>>()?;

    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|gi| (0..seeds.len()).map(move |si| (gi, si)))
        .collect();
    let results: Mutex<Vec<Option<Result<SweepRun>>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    let workers = jobs.max(1).min(tasks.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let t = cursor.fetch_add(1, Ordering::SeqCst);
                if t >= tasks.len() {
                    break;
                }
                let (gi, si) = tasks[t];
                let run = run_one(
                    model_factory,
                    &stats_per_p[gi],
                    train_data,
                    val_data,
                    test,
                    cfg,
                    grid[gi],
                    seeds[si],
                );
                results.lock().expect("poisoned").splice(t..=t, [Some(run)]);
            });
        }
    });

    let collected = results.into_inner().expect("poisoned");
    let mut runs = Vec::with_capacity(tasks.len());
    for slot in collected {
        runs.push(slot.expect("every task executed")?);
    }

    let mut points = Vec::with_capacity(grid.len());
    for (gi, &p) in grid.iter().enumerate() {
        let of_p: Vec<&SweepRun> = runs
            .iter()
            .skip(gi * seeds.len())
            .take(seeds.len())
            .collect();
        let (mean_f1, se_f1) = mean_and_se(&of_p.iter().map(|r| r.f1).collect::<Vec<_>>());
        let (mean_acc, se_acc) =
            mean_and_se(&of_p.iter().map(|r| r.accuracy).collect::<Vec<_>>());
        points.push(SweepPoint {
            p,
            mean_f1,
            se_f1,
            mean_accuracy: mean_acc,
            se_accuracy: se_acc,
        });
    }
    Ok(SweepTable { points, runs })
}

#[allow(clippy::too_many_arguments)]
fn run_one<F>(
    model_factory: &F,
    stats: &CorpusStats,
    train_data: &[LabeledExample],
    val_data: &[LabeledExample],
    test: &[EvalExample],
    cfg: &TrainConfig,
    p: f64,
    seed: u64,
) -> Result<SweepRun>
where
    F: Fn(u64) -> Result<RationaleModel>,
{
    let mut run_cfg = cfg.clone();
    run_cfg.p = p;
    run_cfg.seed = seed;
    let mut model = model_factory(seed)?;
    let (checkpoint, record) = train(&mut model, train_data, val_data, stats, &run_cfg)?;
    let strategy = SelectionStrategy::new(model.cfg.selection, run_cfg.k_fraction)?;
    let (f1, accuracy, test_masks) = test_metrics(&model, test, &strategy)?;
    Ok(SweepRun {
        p,
        seed,
        f1,
        accuracy,
        best_epoch: record.best_epoch,
        record,
        checkpoint,
        test_masks,
    })
}

/// A ready-to-train synthetic task: vocabulary built from the training
/// split, encoded train/val/test examples, and the leak positions for
/// selection-rate analysis.
pub struct SyntheticTask {
    pub corpus: Corpus,
    pub train: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
    pub test: Vec<EvalExample>,
    pub test_leak_positions: Vec<Vec<usize>>,
    pub n_classes: usize,
}

/// Generate and encode a synthetic task. The vocabulary and corpus come
/// from the training split only.
pub fn prepare_synthetic_task(
    spec: &SyntheticSpec,
    n_train: usize,
    n_val: usize,
    n_test: usize,
) -> Result<SyntheticTask> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::InvalidConfig("split sizes must be positive".into()));
    }
    let docs = gen_synthetic(spec, n_train + n_val + n_test)?;
    let (train_docs, rest) = docs.split_at(n_train);
    let (val_docs, test_docs) = rest.split_at(n_val);

    let corpus = Corpus::build(synthetic_to_documents(train_docs), true, 1)?;
    let encode = |doc: &crate::data::SyntheticDoc| -> Result<TokenizedText> {
        let mut text = crate::corpus::tokenize(&doc.text(), true)?;
        corpus.vocab.encode(&mut text);
        Ok(text)
    };

    let train = corpus
        .docs
        .iter()
        .zip(train_docs)
        .map(|(cd, sd)| LabeledExample {
            id: cd.id.clone(),
            text: cd.text.clone(),
            label: sd.label,
        })
        .collect();
    let val = val_docs
        .iter()
        .map(|doc| {
            Ok(LabeledExample {
                id: doc.id.clone(),
                text: encode(doc)?,
                label: doc.label,
            })
        })
        .collect::<Result<_>>()?;
    let test = test_docs
        .iter()
        .map(|doc| {
            Ok(EvalExample {
                id: doc.id.clone(),
                text: encode(doc)?,
                label: doc.label,
                gold_tokens: Some(doc.gold_spans()),
                gold_sentences: None,
            })
        })
        .collect::<Result<_>>()?;

    Ok(SyntheticTask {
        corpus,
        train,
        val,
        test,
        test_leak_positions: test_docs.iter().map(|d| d.leak_positions.clone()).collect(),
        n_classes: spec.lexicons.len(),
    })
}

/// Fraction of leak-carrying test documents with at least one leak
/// occurrence inside the predicted mask.
pub fn leak_selection_rate(masks: &[BinaryMask], leak_positions: &[Vec<usize>]) -> f64 {
    let mut with_leak = 0usize;
    let mut selected = 0usize;
    for (mask, leaks) in masks.iter().zip(leak_positions) {
        if leaks.is_empty() {
            continue;
        }
        with_leak += 1;
        if leaks.iter().any(|&pos| mask.is_selected(pos)) {
            selected += 1;
        }
    }
    if with_leak == 0 {
        0.0
    } else {
        selected as f64 / with_leak as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderKind, GeneratorConfig, SelectionKind};

    fn toy_task(seed: u64) -> SyntheticTask {
        let spec = SyntheticSpec {
            filler_vocab: 12,
            doc_len: (8, 12),
            lexicons: vec![
                vec!["great".into(), "super".into()],
                vec!["awful".into(), "boring".into()],
            ],
            keywords_per_doc: 1,
            leak_token: false,
            seed,
        };
        prepare_synthetic_task(&spec, 24, 8, 8).unwrap()
    }

    fn toy_model(task: &SyntheticTask, seed: u64) -> RationaleModel {
        RationaleModel::new(
            ModelConfig {
                generator: GeneratorConfig {
                    embed_dim: 8,
                    hidden_dim: 8,
                    trainable_embeddings: true,
                    encoder: EncoderKind::MeanPool,
                },
                n_classes: task.n_classes,
                vocab_size: task.corpus.vocab.len(),
                selection: SelectionKind::TopKUnigram,
            },
            seed,
        )
        .unwrap()
    }

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 4,
            max_epochs: 3,
            patience: 2,
            lambda: 0.1,
            k_fraction: 0.3,
            p: 0.2,
            seed,
            noise_enabled: true,
        }
    }

    #[test]
    fn one_adam_step_decreases_training_loss() {
        let task = toy_task(1);
        let model = toy_model(&task, 1);
        let strategy = SelectionStrategy::new(SelectionKind::TopKUnigram, 0.3).unwrap();
        let batch = &task.train[..4];

        let loss_of = |model: &RationaleModel| -> f64 {
            batch
                .iter()
                .map(|ex| {
                    let out = forward_example(model, ex, &strategy, 0.1, None).unwrap();
                    out.loss.item()
                })
                .sum::<f64>()
                / batch.len() as f64
        };

        let before = loss_of(&model);
        let mut adam = Adam::new(&model, 1e-2);
        model.params.zero_grads();
        for ex in batch {
            let out = forward_example(&model, ex, &strategy, 0.1, None).unwrap();
            backward(&out.loss).unwrap();
        }
        adam.step(&model, 1.0 / batch.len() as f64);
        let after = loss_of(&model);
        assert!(after < before, "loss {before} -> {after}");
    }

    #[test]
    fn disabled_noise_is_bit_identical_to_zero_p() {
        let task = toy_task(2);
        let stats_zero = CorpusStats::compute(&task.corpus, 0.0).unwrap();

        let mut cfg_a = quick_cfg(9);
        cfg_a.p = 0.0;
        cfg_a.noise_enabled = true;
        let mut model_a = toy_model(&task, 9);
        let (ckpt_a, _) = train(&mut model_a, &task.train, &task.val, &stats_zero, &cfg_a).unwrap();

        let mut cfg_b = cfg_a.clone();
        cfg_b.noise_enabled = false;
        let mut model_b = toy_model(&task, 9);
        let (ckpt_b, _) = train(&mut model_b, &task.train, &task.val, &stats_zero, &cfg_b).unwrap();

        // Same bytes apart from the config hash recording the flag.
        assert_eq!(
            serde_json::to_string(&ckpt_a.arrays).unwrap(),
            serde_json::to_string(&ckpt_b.arrays).unwrap()
        );
    }

    #[test]
    fn same_seed_reproduces_identical_digests() {
        let task = toy_task(3);
        let stats = CorpusStats::compute(&task.corpus, 0.2).unwrap();
        let cfg = quick_cfg(7);

        let mut model_a = toy_model(&task, 7);
        let (ckpt_a, rec_a) = train(&mut model_a, &task.train, &task.val, &stats, &cfg).unwrap();
        let mut model_b = toy_model(&task, 7);
        let (ckpt_b, rec_b) = train(&mut model_b, &task.train, &task.val, &stats, &cfg).unwrap();

        assert_eq!(ckpt_a.digest(), ckpt_b.digest());
        assert_eq!(rec_a.digest(), rec_b.digest());
    }

    #[test]
    fn generator_frozen_without_attention_loss_path() {
        // With lambda = 0 and noise off, backpropagating L_r alone must
        // leave every generator parameter byte-identical.
        let task = toy_task(4);
        let model = toy_model(&task, 4);
        let strategy = SelectionStrategy::new(SelectionKind::TopKUnigram, 0.3).unwrap();

        let before: Vec<(String, Vec<f64>)> = model
            .params
            .iter()
            .filter(|(n, _, _)| n.starts_with("gen."))
            .map(|(n, node, _)| (n.to_string(), node.value().as_slice().to_vec()))
            .collect();

        let mut adam = Adam::new(&model, 1e-2);
        model.params.zero_grads();
        for ex in &task.train[..8] {
            let scores = model.score_tokens(&ex.text).unwrap();
            let mask = select(
                scores.value().as_slice(),
                &strategy,
                &ex.text.sentence_bounds,
            )
            .unwrap();
            let pair = PredictionPair {
                y_a: model.predict_attention(&ex.text, &scores).unwrap(),
                y_r: model
                    .predict_rationale(&PerturbedRationale::identity(&ex.text), &mask)
                    .unwrap(),
            };
            // Attention loss zeroed: only L_r with lambda = 0 remains.
            let (_, lr) = losses(&pair, ex.label, 0.0).unwrap();
            backward(&lr).unwrap();
        }
        adam.step(&model, 1.0 / 8.0);

        for (name, data) in before {
            let now = model.params.get(&name).unwrap().value();
            assert_eq!(now.as_slice(), data.as_slice(), "{name} moved");
        }
    }

    #[test]
    fn frozen_embeddings_never_move() {
        let task = toy_task(12);
        let stats = CorpusStats::compute(&task.corpus, 0.2).unwrap();
        let mut model = RationaleModel::new(
            ModelConfig {
                generator: GeneratorConfig {
                    embed_dim: 8,
                    hidden_dim: 8,
                    trainable_embeddings: false,
                    encoder: EncoderKind::MeanPool,
                },
                n_classes: task.n_classes,
                vocab_size: task.corpus.vocab.len(),
                selection: SelectionKind::TopKUnigram,
            },
            12,
        )
        .unwrap();
        let before = model.params.get("gen.embed").unwrap().value();
        train(&mut model, &task.train, &task.val, &stats, &quick_cfg(12)).unwrap();
        let after = model.params.get("gen.embed").unwrap().value();
        assert_eq!(before.as_slice(), after.as_slice());
        // The scorer on top of the frozen table still trains.
        assert!(model
            .params
            .iter()
            .any(|(n, node, _)| n == "gen.score_w" && node.grad().as_slice().iter().all(|g| g.is_finite())));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_lr = TrainConfig {
            learning_rate: 0.0,
            ..quick_cfg(1)
        };
        assert!(matches!(bad_lr.validate(), Err(Error::InvalidConfig(_))));
        let bad_p = TrainConfig {
            p: 1.5,
            ..quick_cfg(1)
        };
        assert!(matches!(bad_p.validate(), Err(Error::InvalidConfig(_))));
        let bad_k = TrainConfig {
            k_fraction: 0.0,
            ..quick_cfg(1)
        };
        assert!(matches!(bad_k.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn best_epoch_has_minimal_validation_loss() {
        let task = toy_task(5);
        let stats = CorpusStats::compute(&task.corpus, 0.2).unwrap();
        let mut cfg = quick_cfg(11);
        cfg.max_epochs = 6;
        let mut model = toy_model(&task, 11);
        let (_, record) = train(&mut model, &task.train, &task.val, &stats, &cfg).unwrap();
        let best = record.best_val_loss();
        for e in &record.epochs {
            assert!(best <= e.val_loss_a + e.val_loss_r + 1e-15);
        }
    }

    #[test]
    fn empty_split_is_rejected() {
        let task = toy_task(6);
        let stats = CorpusStats::compute(&task.corpus, 0.2).unwrap();
        let mut model = toy_model(&task, 6);
        let err = train(&mut model, &[], &task.val, &stats, &quick_cfg(1));
        assert!(matches!(err, Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn sweep_zero_grid_reproduces_baseline_runs() {
        let task = toy_task(8);
        let seeds = [3u64, 4u64];
        let cfg = quick_cfg(0);

        let factory = |seed: u64| {
            Ok(toy_model(&task, seed))
        };
        let table = sweep_p(
            &factory,
            &task.corpus,
            &task.train,
            &task.val,
            &task.test,
            &cfg,
            &[0.0],
            &seeds,
            2,
        )
        .unwrap();
        assert_eq!(table.runs.len(), 2);

        // Direct baseline runs with the same settings must match digests.
        let stats = CorpusStats::compute(&task.corpus, 0.0).unwrap();
        for (i, &seed) in seeds.iter().enumerate() {
            let mut cfg_direct = cfg.clone();
            cfg_direct.p = 0.0;
            cfg_direct.seed = seed;
            let mut model = toy_model(&task, seed);
            let (ckpt, record) =
                train(&mut model, &task.train, &task.val, &stats, &cfg_direct).unwrap();
            assert_eq!(table.runs[i].checkpoint.digest(), ckpt.digest());
            assert_eq!(table.runs[i].record.digest(), record.digest());
        }
    }

    #[test]
    fn sweep_is_deterministic_across_job_counts() {
        let task = toy_task(9);
        let cfg = quick_cfg(0);
        let factory = |seed: u64| Ok(toy_model(&task, seed));
        let run = |jobs: usize| {
            sweep_p(
                &factory,
                &task.corpus,
                &task.train,
                &task.val,
                &task.test,
                &cfg,
                &[0.0, 0.3],
                &[1, 2],
                jobs,
            )
            .unwrap()
        };
        let serial = run(1);
        let parallel = run(4);
        assert_eq!(
            serde_json::to_string(&serial.points).unwrap(),
            serde_json::to_string(&parallel.points).unwrap()
        );
        for (a, b) in serial.runs.iter().zip(&parallel.runs) {
            assert_eq!(a.checkpoint.digest(), b.checkpoint.digest());
        }
    }

    #[test]
    fn leak_selection_rate_counts_only_leaky_documents() {
        let masks = vec![
            BinaryMask::from_positions(4, &[0, 1]),
            BinaryMask::from_positions(4, &[2]),
            BinaryMask::from_positions(4, &[3]),
        ];
        let leaks = vec![vec![1], vec![3], vec![]];
        assert_eq!(leak_selection_rate(&masks, &leaks), 0.5);
        assert_eq!(leak_selection_rate(&masks, &[vec![], vec![], vec![]]), 0.0);
    }
}
