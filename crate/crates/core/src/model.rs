//! The generator-predictor architecture at desk scale: a trainable generator
//! scores tokens, a hard model-external selection turns scores into a binary
//! mask, an attention predictor shares the generator's embeddings (the only
//! gradient conduit into the generator), and a rationale predictor with its
//! own embeddings sees nothing but the masked-in tokens.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenizedText, PAD_ID};
use crate::diffcore::{
    concat_rows, lookup, mean_pool_rows, weighted_sum, ModelParameters, Node, Tensor,
};
use crate::error::{Error, Result};
use crate::noise::{seed_purpose, BinaryMask, PerturbedRationale};
use crate::util::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Per-token linear features mixed with a document mean embedding.
    MeanPool,
    /// A single left-to-right recurrent cell.
    RecurrentCell,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// When false the embedding table stays at its initialization, the
    /// fixed-weights analog of a frozen pretrained encoder.
    pub trainable_embeddings: bool,
    pub encoder: EncoderKind,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            embed_dim: 32,
            hidden_dim: 32,
            trainable_embeddings: true,
            encoder: EncoderKind::MeanPool,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionKind {
    TopKUnigram,
    TopHalfKBigram,
    TopKSentence,
}

/// Model-external, untrained rule converting token scores into a hard mask.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SelectionStrategy {
    pub kind: SelectionKind,
    /// Fraction of tokens (or sentences) to keep, in (0, 1].
    pub k_fraction: f64,
}

impl SelectionStrategy {
    pub fn new(kind: SelectionKind, k_fraction: f64) -> Result<Self> {
        if !(k_fraction > 0.0 && k_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "k_fraction must be in (0, 1], got {k_fraction}"
            )));
        }
        Ok(SelectionStrategy { kind, k_fraction })
    }

    /// Token budget: floor with a minimum of one so short texts always get
    /// a non-empty rationale.
    pub fn token_budget(&self, len: usize) -> usize {
        ((self.k_fraction * len as f64).floor() as usize).max(1)
    }
}

/// The two heads' class distributions for one example.
#[derive(Debug, Clone)]
pub struct PredictionPair {
    pub y_a: Node,
    pub y_r: Node,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub n_classes: usize,
    pub vocab_size: usize,
    pub selection: SelectionKind,
}

pub struct RationaleModel {
    pub cfg: ModelConfig,
    pub params: ModelParameters,
}

impl RationaleModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<RationaleModel> {
        if cfg.n_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 classes, got {}",
                cfg.n_classes
            )));
        }
        if cfg.vocab_size == 0 || cfg.generator.embed_dim == 0 || cfg.generator.hidden_dim == 0 {
            return Err(Error::InvalidConfig(
                "vocab size and dimensions must be at least 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, seed_purpose::PARAMS, 0));
        let (v, d, h, c) = (
            cfg.vocab_size,
            cfg.generator.embed_dim,
            cfg.generator.hidden_dim,
            cfg.n_classes,
        );
        let mut params = ModelParameters::new();
        let init = |rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.gen_range(-scale..scale))
                .collect();
            Tensor::from_vec(rows, cols, data).expect("sized init")
        };

        params.register(
            "gen.embed",
            init(v, d, d, &mut rng),
            cfg.generator.trainable_embeddings,
        );
        params.register("gen.enc_w", init(d, h, d, &mut rng), true);
        match cfg.generator.encoder {
            EncoderKind::MeanPool => {
                params.register("gen.enc_ctx", init(d, h, d, &mut rng), true);
            }
            EncoderKind::RecurrentCell => {
                params.register("gen.rec_u", init(h, h, h, &mut rng), true);
            }
        }
        params.register("gen.enc_b", Tensor::zeros(1, h), true);
        params.register("gen.score_w", init(h, 1, h, &mut rng), true);
        params.register("gen.score_b", Tensor::zeros(1, 1), true);

        params.register("att.cls_w", init(d, c, d, &mut rng), true);
        params.register("att.cls_b", Tensor::zeros(1, c), true);

        params.register("pre.embed", init(v, d, d, &mut rng), true);
        params.register("pre.hid_w", init(d, h, d, &mut rng), true);
        params.register("pre.hid_b", Tensor::zeros(1, h), true);
        params.register("pre.cls_w", init(h, c, h, &mut rng), true);
        params.register("pre.cls_b", Tensor::zeros(1, c), true);

        Ok(RationaleModel { cfg, params })
    }

    fn param(&self, name: &str) -> &Node {
        self.params.get(name).expect("registered parameter")
    }

    /// Names of the parameters belonging to the generator.
    pub fn generator_param_names(&self) -> Vec<String> {
        self.params
            .names()
            .filter(|n| n.starts_with("gen."))
            .map(|n| n.to_string())
            .collect()
    }

    fn valid_positions(text: &TokenizedText) -> Vec<bool> {
        text.tokens.iter().map(|&id| id != PAD_ID).collect()
    }

    /// Per-token generator scores as a 1 x T node. PAD positions carry a
    /// -inf sentinel so neither selection nor attention can pick them.
    pub fn score_tokens(&self, text: &TokenizedText) -> Result<Node> {
        if text.is_empty() {
            return Err(Error::EmptyInput);
        }
        let t = text.len();
        let embeds = lookup(self.param("gen.embed"), &text.tokens)?;
        let enc_w = self.param("gen.enc_w");
        let enc_b = self.param("gen.enc_b");

        let hidden = match self.cfg.generator.encoder {
            EncoderKind::MeanPool => {
                let valid: Vec<usize> = Self::valid_positions(text)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v)
                    .map(|(i, _)| i)
                    .collect();
                if valid.is_empty() {
                    return Err(Error::EmptyInput);
                }
                let context = mean_pool_rows(&embeds, &valid)?;
                let ctx_proj = context.matmul(self.param("gen.enc_ctx"))?.repeat_row(t)?;
                embeds
                    .matmul(enc_w)?
                    .add(&ctx_proj)?
                    .add(&enc_b.repeat_row(t)?)?
                    .tanh()
            }
            EncoderKind::RecurrentCell => {
                let rec_u = self.param("gen.rec_u");
                let mut state = Node::constant(Tensor::zeros(1, self.cfg.generator.hidden_dim));
                let mut rows = Vec::with_capacity(t);
                for i in 0..t {
                    let x = embeds.row(i)?;
                    state = x
                        .matmul(enc_w)?
                        .add(&state.matmul(rec_u)?)?
                        .add(enc_b)?
                        .tanh();
                    rows.push(state.clone());
                }
                concat_rows(&rows)?
            }
        };

        let scores = hidden
            .matmul(self.param("gen.score_w"))?
            .add(&self.param("gen.score_b").repeat_row(t)?)?
            .transpose();
        let sentinel: Vec<f64> = Self::valid_positions(text)
            .iter()
            .map(|&v| if v { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        scores.add(&Node::constant(Tensor::row_vector(sentinel)))
    }

    /// Class distribution from attention over the generator's own
    /// embeddings; fully differentiable into the generator.
    pub fn predict_attention(&self, text: &TokenizedText, scores: &Node) -> Result<Node> {
        if scores.shape() != (1, text.len()) {
            return Err(Error::Shape {
                op: "predict_attention",
                lhs: scores.shape(),
                rhs: (1, text.len()),
            });
        }
        let valid = Self::valid_positions(text);
        let attention = scores.masked_softmax_row(&valid)?;
        let embeds = lookup(self.param("gen.embed"), &text.tokens)?;
        let context = weighted_sum(&attention, &embeds)?;
        let logits = context
            .matmul(self.param("att.cls_w"))?
            .add(self.param("att.cls_b"))?;
        Ok(logits.softmax_row())
    }

    /// Class distribution from the masked-in (possibly perturbed) tokens
    /// only. Tokens outside the mask never enter the computation, which is
    /// the architectural faithfulness guarantee.
    pub fn predict_rationale(
        &self,
        rationale: &PerturbedRationale,
        mask: &BinaryMask,
    ) -> Result<Node> {
        if rationale.tokens.len() != mask.len() {
            return Err(Error::Shape {
                op: "predict_rationale",
                lhs: (1, rationale.tokens.len()),
                rhs: (1, mask.len()),
            });
        }
        let selected: Vec<u32> = mask
            .selected_positions()
            .into_iter()
            .map(|i| rationale.tokens[i])
            .collect();
        if selected.is_empty() {
            return Err(Error::EmptyRationale);
        }
        let embeds = lookup(self.param("pre.embed"), &selected)?;
        let all_rows: Vec<usize> = (0..selected.len()).collect();
        let pooled = mean_pool_rows(&embeds, &all_rows)?;
        let hidden = pooled
            .matmul(self.param("pre.hid_w"))?
            .add(self.param("pre.hid_b"))?
            .tanh();
        let logits = hidden
            .matmul(self.param("pre.cls_w"))?
            .add(self.param("pre.cls_b"))?;
        Ok(logits.softmax_row())
    }
}

/// The coupled objectives: each head minimizes its own cross-entropy plus a
/// Jensen-Shannon term toward a stop-gradiented copy of the other head, so
/// the heads approach each other without either optimizing the other's
/// criterion.
pub fn losses(pair: &PredictionPair, target: usize, lambda: f64) -> Result<(Node, Node)> {
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let ce_a = pair.y_a.cross_entropy(target)?;
    let ce_r = pair.y_r.cross_entropy(target)?;
    let loss_a = ce_a.add(&pair.y_a.jsd(&pair.y_r.stop_gradient())?.scale(lambda))?;
    let loss_r = ce_r.add(&pair.y_a.stop_gradient().jsd(&pair.y_r)?.scale(lambda))?;
    Ok((loss_a, loss_r))
}

/// The joint objective actually backpropagated: `CE_a + CE_r + lambda *
/// JSD(y_a, y_r)` with no stop-gradients.
///
/// Its true gradient equals the summed gradient of [`losses`]: in that pair
/// each JSD argument is stop-gradiented in exactly one of the two terms, so
/// per argument exactly one JSD contribution survives, the same one this
/// single unstopped term supplies. Backpropagating this form and the pair
/// are interchangeable for simultaneous updates, and this form is a smooth
/// function of the parameters, so central finite differences can verify it.
pub fn combined_loss(pair: &PredictionPair, target: usize, lambda: f64) -> Result<Node> {
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let ce_a = pair.y_a.cross_entropy(target)?;
    let ce_r = pair.y_r.cross_entropy(target)?;
    let coupling = pair.y_a.jsd(&pair.y_r)?.scale(lambda);
    ce_a.add(&ce_r)?.add(&coupling)
}

/// Hard top-k selection over generator scores. Non-finite scores (the PAD
/// sentinel) are never selected; ties break toward the earliest position.
pub fn select(
    scores: &[f64],
    strategy: &SelectionStrategy,
    sentence_bounds: &[(usize, usize)],
) -> Result<BinaryMask> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let eligible: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i].is_finite())
        .collect();
    if eligible.is_empty() {
        return Err(Error::EmptyInput);
    }
    let budget = strategy.token_budget(scores.len());

    let positions = match strategy.kind {
        SelectionKind::TopKUnigram => {
            let mut order = eligible.clone();
            order.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .expect("finite scores")
                    .then(a.cmp(&b))
            });
            order.truncate(budget.min(order.len()));
            order
        }
        SelectionKind::TopHalfKBigram => {
            let bigram_budget = (budget / 2).max(1);
            let mut pairs: Vec<(usize, f64)> = eligible
                .windows(2)
                .filter(|w| w[1] == w[0] + 1)
                .map(|w| (w[0], scores[w[0]] + scores[w[1]]))
                .collect();
            pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
            let mut taken = vec![false; scores.len()];
            let mut out = Vec::new();
            for (start, _) in pairs {
                if out.len() / 2 >= bigram_budget {
                    break;
                }
                if taken[start] || taken[start + 1] {
                    continue;
                }
                taken[start] = true;
                taken[start + 1] = true;
                out.push(start);
                out.push(start + 1);
            }
            if out.is_empty() {
                // No adjacent pair exists (single-token text): fall back to
                // the best unigram so the rationale is never empty.
                out.push(eligible[0]);
            }
            out
        }
        SelectionKind::TopKSentence => {
            if sentence_bounds.is_empty() {
                return Err(Error::EmptyInput);
            }
            let n_select =
                ((strategy.k_fraction * sentence_bounds.len() as f64).floor() as usize).max(1);
            let mut ranked: Vec<(usize, f64)> = sentence_bounds
                .iter()
                .enumerate()
                .map(|(idx, &(s, e))| {
                    let valid: Vec<f64> = (s..e)
                        .filter(|&i| scores[i].is_finite())
                        .map(|i| scores[i])
                        .collect();
                    let mean = if valid.is_empty() {
                        f64::NEG_INFINITY
                    } else {
                        valid.iter().sum::<f64>() / valid.len() as f64
                    };
                    (idx, mean)
                })
                .collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("ordered").then(a.0.cmp(&b.0)));
            let mut out = Vec::new();
            for &(idx, _) in ranked.iter().take(n_select) {
                let (s, e) = sentence_bounds[idx];
                out.extend(s..e);
            }
            out
        }
    };
    Ok(BinaryMask::from_positions(scores.len(), &positions))
}
