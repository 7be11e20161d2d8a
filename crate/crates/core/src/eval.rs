//! Plausibility metrics (token/sentence P/R/F1, span-level IOU-F1) and
//! faithfulness metrics (comprehensiveness, sufficiency), plus the span
//! algebra shared with data loading. All metrics are pure functions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedText;
use crate::error::{Error, Result};
use crate::model::RationaleModel;
use crate::noise::{BinaryMask, PerturbedRationale};

/// Sorted, disjoint, half-open token intervals. Interconvertible with a
/// [`BinaryMask`] via maximal-run decomposition, losslessly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleSpanSet {
    spans: Vec<(usize, usize)>,
}

impl RationaleSpanSet {
    pub fn empty() -> Self {
        RationaleSpanSet { spans: Vec::new() }
    }

    pub fn new(mut spans: Vec<(usize, usize)>) -> Result<Self> {
        spans.sort_unstable();
        for &(s, e) in &spans {
            if s >= e {
                return Err(Error::InvalidConfig(format!("empty span ({s}, {e})")));
            }
        }
        for w in spans.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(Error::InvalidConfig(format!(
                    "overlapping spans {:?} and {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(RationaleSpanSet { spans })
    }

    /// Maximal runs of ones.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, &b) in mask.bits().iter().enumerate() {
            match (b, start) {
                (1, None) => start = Some(i),
                (0, Some(s)) => {
                    spans.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push((s, mask.len()));
        }
        RationaleSpanSet { spans }
    }

    pub fn to_mask(&self, len: usize) -> BinaryMask {
        let mut bits = vec![0u8; len];
        for &(s, e) in &self.spans {
            for b in bits.iter_mut().take(e.min(len)).skip(s) {
                *b = 1;
            }
        }
        BinaryMask::new(bits)
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.spans.iter().map(|&(s, e)| e - s).sum()
    }

    pub fn token_set(&self) -> BTreeSet<usize> {
        self.spans.iter().flat_map(|&(s, e)| s..e).collect()
    }

    pub fn max_end(&self) -> usize {
        self.spans.last().map(|&(_, e)| e).unwrap_or(0)
    }
}

fn prf(intersection: usize, n_pred: usize, n_gold: usize) -> (f64, f64, f64) {
    let p = if n_pred == 0 {
        0.0
    } else {
        intersection as f64 / n_pred as f64
    };
    let r = if n_gold == 0 {
        0.0
    } else {
        intersection as f64 / n_gold as f64
    };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Token-level precision/recall/F1 of a predicted mask against gold spans.
/// Per-example values; dataset aggregation macro-averages and excludes
/// empty-gold examples.
pub fn token_prf(pred: &BinaryMask, gold: &RationaleSpanSet) -> Result<(f64, f64, f64)> {
    if gold.max_end() > pred.len() {
        return Err(Error::Shape {
            op: "token_prf",
            lhs: (1, pred.len()),
            rhs: (1, gold.max_end()),
        });
    }
    let pred_set: BTreeSet<usize> = pred.selected_positions().into_iter().collect();
    let gold_set = gold.token_set();
    let inter = pred_set.intersection(&gold_set).count();
    Ok(prf(inter, pred_set.len(), gold_set.len()))
}

/// The same set arithmetic at sentence granularity.
pub fn sentence_prf(pred: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> (f64, f64, f64) {
    let inter = pred.intersection(gold).count();
    prf(inter, pred.len(), gold.len())
}

fn interval_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    if inter == 0 {
        return 0.0;
    }
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    inter as f64 / union as f64
}

/// Kuhn's augmenting-path matching over the eligibility graph, seeded in
/// descending-IOU edge order. Returns the maximum number of one-to-one
/// (pred, gold) pairs with IOU at or above the threshold.
fn max_iou_matching(pred: &[(usize, usize)], gold: &[(usize, usize)], threshold: f64) -> usize {
    let mut adjacency: Vec<Vec<(usize, f64)>> = pred
        .iter()
        .map(|&ps| {
            let mut edges: Vec<(usize, f64)> = gold
                .iter()
                .enumerate()
                .filter_map(|(j, &gs)| {
                    let iou = interval_iou(ps, gs);
                    (iou >= threshold).then_some((j, iou))
                })
                .collect();
            edges.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite iou"));
            edges
        })
        .collect();
    // Process predicted spans with their best edge first.
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| {
        let best_a = adjacency[a].first().map(|e| e.1).unwrap_or(0.0);
        let best_b = adjacency[b].first().map(|e| e.1).unwrap_or(0.0);
        best_b.partial_cmp(&best_a).expect("finite iou")
    });

    let mut gold_owner: Vec<Option<usize>> = vec![None; gold.len()];
    fn try_assign(
        p: usize,
        adjacency: &mut [Vec<(usize, f64)>],
        gold_owner: &mut [Option<usize>],
        visited: &mut [bool],
    ) -> bool {
        let edges = adjacency[p].clone();
        for (g, _) in edges {
            if visited[g] {
                continue;
            }
            visited[g] = true;
            if gold_owner[g].is_none()
                || try_assign(gold_owner[g].unwrap(), adjacency, gold_owner, visited)
            {
                gold_owner[g] = Some(p);
                return true;
            }
        }
        false
    }
    let mut matched = 0;
    for p in order {
        let mut visited = vec![false; gold.len()];
        if try_assign(p, &mut adjacency, &mut gold_owner, &mut visited) {
            matched += 1;
        }
    }
    matched
}

/// Span-level F1 with partial matching: a predicted span can match one gold
/// span when their interval intersection-over-union reaches `threshold`.
/// The matching is one-to-one and maximal over the eligible pairs.
pub fn iou_f1(pred: &RationaleSpanSet, gold: &RationaleSpanSet, threshold: f64) -> f64 {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let m = max_iou_matching(pred.spans(), gold.spans(), threshold);
    let p = m as f64 / pred.spans().len() as f64;
    let r = m as f64 / gold.spans().len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.1;

/// Rationale-head distribution on the clean text restricted to `mask`.
fn rationale_distribution(
    model: &RationaleModel,
    text: &TokenizedText,
    mask: &BinaryMask,
) -> Result<Vec<f64>> {
    let y = model.predict_rationale(&PerturbedRationale::identity(text), mask)?;
    Ok(y.value().as_slice().to_vec())
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probability"))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Drop in the full-input predicted-class probability when the rationale is
/// removed (higher is better). Uses the model's own predicted class on the
/// full input; noise is never involved at evaluation time.
pub fn comprehensiveness(
    model: &RationaleModel,
    text: &TokenizedText,
    mask: &BinaryMask,
) -> Result<f64> {
    let complement = mask.complement();
    if complement.count_ones() == 0 {
        return Err(Error::DegenerateMask(
            "rationale covers every token; its complement is empty".into(),
        ));
    }
    let full = rationale_distribution(model, text, &BinaryMask::ones(text.len()))?;
    let predicted = argmax(&full);
    let without = rationale_distribution(model, text, &complement)?;
    Ok(full[predicted] - without[predicted])
}

/// Drop in the full-input predicted-class probability when only the
/// rationale is kept (lower is better).
pub fn sufficiency(
    model: &RationaleModel,
    text: &TokenizedText,
    mask: &BinaryMask,
) -> Result<f64> {
    if mask.count_ones() == 0 {
        return Err(Error::EmptyRationale);
    }
    let full = rationale_distribution(model, text, &BinaryMask::ones(text.len()))?;
    let predicted = argmax(&full);
    let only = rationale_distribution(model, text, mask)?;
    Ok(full[predicted] - only[predicted])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Token,
    Sentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Mean of per-example scores (the default; empty-gold examples are
    /// excluded from P/R/F1 and IOU-F1).
    Macro,
    /// Global counts pooled across examples.
    Micro,
}

/// One evaluation instance: an encoded text, its class, and gold rationale
/// annotation at token or sentence granularity.
#[derive(Debug, Clone)]
pub struct EvalExample {
    pub id: String,
    pub text: TokenizedText,
    pub label: usize,
    pub gold_tokens: Option<RationaleSpanSet>,
    pub gold_sentences: Option<BTreeSet<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub granularity: Granularity,
    pub averaging: Averaging,
    pub n_examples: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Span-level score; token-granularity datasets only.
    pub iou_f1: Option<f64>,
    pub comprehensiveness: f64,
    pub sufficiency: f64,
}

/// Predicted sentence set: every sentence containing at least one selected
/// token.
pub fn sentences_of_mask(mask: &BinaryMask, text: &TokenizedText) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for pos in mask.selected_positions() {
        if let Some(s) = text.sentence_of(pos) {
            out.insert(s);
        }
    }
    out
}

/// Run the full evaluation pipeline: score, select, compare with gold, and
/// measure faithfulness. `masks` must be precomputed by the caller (they
/// come from the model's selection strategy), keeping this a pure function
/// of its inputs.
pub fn evaluate(
    model: &RationaleModel,
    examples: &[EvalExample],
    masks: &[BinaryMask],
    granularity: Granularity,
    averaging: Averaging,
    iou_threshold: f64,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("evaluation".into()));
    }
    if examples.len() != masks.len() {
        return Err(Error::Shape {
            op: "evaluate",
            lhs: (1, examples.len()),
            rhs: (1, masks.len()),
        });
    }

    let mut correct = 0usize;
    let mut prf_scores: Vec<(f64, f64, f64)> = Vec::new();
    let mut iou_scores: Vec<f64> = Vec::new();
    let mut micro = (0usize, 0usize, 0usize); // intersection, pred, gold
    let mut comp_sum = 0.0;
    let mut suff_sum = 0.0;
    let mut faith_n = 0usize;

    for (example, mask) in examples.iter().zip(masks) {
        let y = rationale_distribution(model, &example.text, mask)?;
        if argmax(&y) == example.label {
            correct += 1;
        }

        match granularity {
            Granularity::Token => {
                if let Some(gold) = &example.gold_tokens {
                    if !gold.is_empty() {
                        prf_scores.push(token_prf(mask, gold)?);
                        let pred_spans = RationaleSpanSet::from_mask(mask);
                        iou_scores.push(iou_f1(&pred_spans, gold, iou_threshold));
                        let pred_set: BTreeSet<usize> =
                            mask.selected_positions().into_iter().collect();
                        let gold_set = gold.token_set();
                        micro.0 += pred_set.intersection(&gold_set).count();
                        micro.1 += pred_set.len();
                        micro.2 += gold_set.len();
                    }
                }
            }
            Granularity::Sentence => {
                if let Some(gold) = &example.gold_sentences {
                    if !gold.is_empty() {
                        let pred = sentences_of_mask(mask, &example.text);
                        prf_scores.push(sentence_prf(&pred, gold));
                        micro.0 += pred.intersection(gold).count();
                        micro.1 += pred.len();
                        micro.2 += gold.len();
                    }
                }
            }
        }

        comp_sum += comprehensiveness(model, &example.text, mask)?;
        suff_sum += sufficiency(model, &example.text, mask)?;
        faith_n += 1;
    }

    let (precision, recall, f1) = match averaging {
        Averaging::Macro => {
            let n = prf_scores.len().max(1) as f64;
            let sum = prf_scores
                .iter()
                .fold((0.0, 0.0, 0.0), |acc, s| (acc.0 + s.0, acc.1 + s.1, acc.2 + s.2));
            (sum.0 / n, sum.1 / n, sum.2 / n)
        }
        Averaging::Micro => prf(micro.0, micro.1, micro.2),
    };
    let iou = match granularity {
        Granularity::Token if !iou_scores.is_empty() => {
            Some(iou_scores.iter().sum::<f64>() / iou_scores.len() as f64)
        }
        Granularity::Token => Some(0.0),
        Granularity::Sentence => None,
    };

    Ok(EvalReport {
        granularity,
        averaging,
        n_examples: examples.len(),
        accuracy: correct as f64 / examples.len() as f64,
        precision,
        recall,
        f1,
        iou_f1: iou,
        comprehensiveness: comp_sum / faith_n.max(1) as f64,
        sufficiency: suff_sum / faith_n.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        EncoderKind, GeneratorConfig, ModelConfig, RationaleModel, SelectionKind,
    };
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prf_examples() {
        let gold = RationaleSpanSet::new(vec![(2, 4)]).unwrap();

        let exact = gold.to_mask(6);
        assert_eq!(token_prf(&exact, &gold).unwrap(), (1.0, 1.0, 1.0));

        // pred {1,2}, gold {2,3}
        let pred = BinaryMask::from_positions(6, &[1, 2]);
        let gold2 = RationaleSpanSet::new(vec![(2, 4)]).unwrap();
        assert_eq!(token_prf(&pred, &gold2).unwrap(), (0.5, 0.5, 0.5));

        let empty = BinaryMask::zeros(6);
        assert_eq!(token_prf(&empty, &gold).unwrap(), (0.0, 0.0, 0.0));

        assert!(matches!(
            token_prf(&BinaryMask::zeros(2), &gold),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn sentence_prf_examples() {
        let s = |v: &[usize]| v.iter().copied().collect::<BTreeSet<usize>>();
        assert_eq!(sentence_prf(&s(&[0, 2]), &s(&[0, 2])), (1.0, 1.0, 1.0));
        let (p, r, f1) = sentence_prf(&s(&[0]), &s(&[0, 1]));
        assert_eq!((p, r), (1.0, 0.5));
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(sentence_prf(&s(&[3]), &s(&[0, 1])), (0.0, 0.0, 0.0));
    }

    #[test]
    fn f1_is_harmonic_mean_of_p_and_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let len = rng.gen_range(1..=30);
            let bits: Vec<u8> = (0..len).map(|_| rng.gen_range(0..=1)).collect();
            let pred = BinaryMask::new(bits);
            let gold_bits: Vec<u8> = (0..len).map(|_| rng.gen_range(0..=1)).collect();
            let gold = RationaleSpanSet::from_mask(&BinaryMask::new(gold_bits));
            let (p, r, f1) = token_prf(&pred, &gold).unwrap();
            let expect = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            assert!((f1 - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_f1_examples() {
        // IOU((2,6), (0,4)) = 2/6 >= 0.1, a partial match.
        let pred = RationaleSpanSet::new(vec![(2, 6)]).unwrap();
        let gold = RationaleSpanSet::new(vec![(0, 4)]).unwrap();
        assert_eq!(iou_f1(&pred, &gold, DEFAULT_IOU_THRESHOLD), 1.0);

        assert_eq!(iou_f1(&RationaleSpanSet::empty(), &gold, 0.1), 0.0);
        assert_eq!(iou_f1(&gold, &gold, 0.1), 1.0);
        assert_eq!(
            iou_f1(&RationaleSpanSet::empty(), &RationaleSpanSet::empty(), 0.1),
            1.0
        );

        // Below threshold: IOU((0,1), (9,10)) = 0.
        let far = RationaleSpanSet::new(vec![(9, 10)]).unwrap();
        let near = RationaleSpanSet::new(vec![(0, 1)]).unwrap();
        assert_eq!(iou_f1(&near, &far, 0.1), 0.0);
    }

    /// Brute-force oracle: enumerate every injective assignment of predicted
    /// spans to gold spans and count the best number of threshold-eligible
    /// pairs.
    fn brute_force_best_matching(
        pred: &[(usize, usize)],
        gold: &[(usize, usize)],
        threshold: f64,
    ) -> usize {
        fn recurse(
            i: usize,
            pred: &[(usize, usize)],
            gold: &[(usize, usize)],
            used: &mut Vec<bool>,
            threshold: f64,
        ) -> usize {
            if i == pred.len() {
                return 0;
            }
            // Option: leave pred[i] unmatched.
            let mut best = recurse(i + 1, pred, gold, used, threshold);
            for (j, &gs) in gold.iter().enumerate() {
                if used[j] || interval_iou(pred[i], gs) < threshold {
                    continue;
                }
                used[j] = true;
                best = best.max(1 + recurse(i + 1, pred, gold, used, threshold));
                used[j] = false;
            }
            best
        }
        recurse(0, pred, gold, &mut vec![false; gold.len()], threshold)
    }

    fn random_span_set(rng: &mut ChaCha8Rng, len: usize, max_spans: usize) -> RationaleSpanSet {
        let n = rng.gen_range(0..=max_spans);
        let mut spans = Vec::new();
        let mut cursor = 0usize;
        for _ in 0..n {
            if cursor >= len {
                break;
            }
            let s = rng.gen_range(cursor..len);
            let e = rng.gen_range(s + 1..=len.min(s + 6));
            spans.push((s, e));
            cursor = e + rng.gen_range(0..3);
        }
        RationaleSpanSet::new(spans).unwrap()
    }

    #[test]
    fn iou_matching_agrees_with_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let len = rng.gen_range(4..=40);
            let pred = random_span_set(&mut rng, len, 5);
            let gold = random_span_set(&mut rng, len, 5);
            let fast = max_iou_matching(pred.spans(), gold.spans(), 0.1);
            let slow = brute_force_best_matching(pred.spans(), gold.spans(), 0.1);
            assert_eq!(fast, slow, "pred {:?} gold {:?}", pred.spans(), gold.spans());
        }
    }

    #[test]
    fn crossing_spans_still_reach_the_maximum_matching() {
        // The highest-IOU pair (A, X) would block both eligible pairs
        // (A, Y) and (B, X) under naive greedy matching.
        let pred = RationaleSpanSet::new(vec![(0, 2), (2, 9)]).unwrap();
        let gold = RationaleSpanSet::new(vec![(0, 8), (8, 12)]).unwrap();
        assert_eq!(max_iou_matching(pred.spans(), gold.spans(), 0.1), 2);
        assert_eq!(iou_f1(&pred, &gold, 0.1), 1.0);
    }

    proptest! {
        #[test]
        fn mask_span_round_trip(bits in proptest::collection::vec(0u8..=1, 1..60)) {
            let mask = BinaryMask::new(bits);
            let spans = RationaleSpanSet::from_mask(&mask);
            prop_assert_eq!(spans.to_mask(mask.len()), mask);
        }
    }

    fn tiny_model(seed: u64) -> RationaleModel {
        RationaleModel::new(
            ModelConfig {
                generator: GeneratorConfig {
                    embed_dim: 4,
                    hidden_dim: 4,
                    trainable_embeddings: true,
                    encoder: EncoderKind::MeanPool,
                },
                n_classes: 2,
                vocab_size: 12,
                selection: SelectionKind::TopKUnigram,
            },
            seed,
        )
        .unwrap()
    }

    fn text_of(tokens: Vec<u32>) -> TokenizedText {
        let len = tokens.len();
        TokenizedText {
            token_strings: tokens.iter().map(|t| format!("t{t}")).collect(),
            tokens,
            sentence_bounds: vec![(0, len)],
        }
    }

    fn make_constant_head(model: &RationaleModel) {
        // Zero hidden weight: the rationale head output no longer depends
        // on its input.
        model
            .params
            .get("pre.hid_w")
            .unwrap()
            .update_data(|t| t.fill(0.0));
    }

    #[test]
    fn constant_head_scores_zero_faithfulness() {
        let model = tiny_model(3);
        make_constant_head(&model);
        let text = text_of(vec![2, 3, 4, 5]);
        let mask = BinaryMask::from_positions(4, &[1]);
        assert_eq!(comprehensiveness(&model, &text, &mask).unwrap(), 0.0);
        assert_eq!(sufficiency(&model, &text, &mask).unwrap(), 0.0);
    }

    #[test]
    fn full_mask_is_degenerate_for_comprehensiveness_and_exact_zero_sufficiency() {
        let model = tiny_model(4);
        let text = text_of(vec![2, 3, 4]);
        let full = BinaryMask::ones(3);
        assert!(matches!(
            comprehensiveness(&model, &text, &full),
            Err(Error::DegenerateMask(_))
        ));
        assert_eq!(sufficiency(&model, &text, &full).unwrap(), 0.0);
    }

    /// Hand-built sentiment-by-keyword model: class-0 logit follows token 2.
    fn keyword_model() -> RationaleModel {
        let model = tiny_model(5);
        // Identity-ish embedding: token 2 maps to a distinctive direction.
        model.params.get("pre.embed").unwrap().update_data(|t| {
            t.fill(0.0);
            t.set(2, 0, 1.0);
        });
        model.params.get("pre.hid_w").unwrap().update_data(|t| {
            t.fill(0.0);
            t.set(0, 0, 1.0);
        });
        model.params.get("pre.hid_b").unwrap().update_data(|t| t.fill(0.0));
        model.params.get("pre.cls_w").unwrap().update_data(|t| {
            t.fill(0.0);
            t.set(0, 0, 4.0);
        });
        model.params.get("pre.cls_b").unwrap().update_data(|t| t.fill(0.0));
        model
    }

    #[test]
    fn keyword_inside_mask_gives_positive_comprehensiveness() {
        let model = keyword_model();
        // Token 2 is the planted signal; it sits inside the rationale.
        let text = text_of(vec![2, 7, 8, 9]);
        let mask = BinaryMask::from_positions(4, &[0]);
        assert!(comprehensiveness(&model, &text, &mask).unwrap() > 0.0);
    }

    #[test]
    fn keyword_outside_mask_gives_positive_sufficiency() {
        let model = keyword_model();
        let text = text_of(vec![2, 7, 8, 9]);
        let mask = BinaryMask::from_positions(4, &[1, 2]);
        assert!(sufficiency(&model, &text, &mask).unwrap() > 0.0);
    }

    #[test]
    fn metrics_are_pure() {
        let model = tiny_model(6);
        let text = text_of(vec![2, 3, 4, 5, 6]);
        let mask = BinaryMask::from_positions(5, &[0, 2]);
        let a = comprehensiveness(&model, &text, &mask).unwrap();
        let b = comprehensiveness(&model, &text, &mask).unwrap();
        assert_eq!(a, b);
        let s1 = sufficiency(&model, &text, &mask).unwrap();
        let s2 = sufficiency(&model, &text, &mask).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn evaluate_produces_a_consistent_report() {
        let model = tiny_model(7);
        let examples = vec![
            EvalExample {
                id: "a".into(),
                text: text_of(vec![2, 3, 4, 5]),
                label: 0,
                gold_tokens: Some(RationaleSpanSet::new(vec![(0, 2)]).unwrap()),
                gold_sentences: None,
            },
            EvalExample {
                id: "b".into(),
                text: text_of(vec![6, 7, 8, 9]),
                label: 1,
                gold_tokens: Some(RationaleSpanSet::new(vec![(2, 4)]).unwrap()),
                gold_sentences: None,
            },
        ];
        let masks = vec![
            BinaryMask::from_positions(4, &[0, 1]),
            BinaryMask::from_positions(4, &[0, 1]),
        ];
        let report = evaluate(
            &model,
            &examples,
            &masks,
            Granularity::Token,
            Averaging::Macro,
            0.1,
        )
        .unwrap();
        assert_eq!(report.n_examples, 2);
        // First example matches gold exactly, second misses entirely.
        assert!((report.f1 - 0.5).abs() < 1e-12);
        assert!((report.precision - 0.5).abs() < 1e-12);
        assert_eq!(report.iou_f1, Some(0.5));
        assert!(report.accuracy >= 0.0 && report.accuracy <= 1.0);

        // Micro averaging pools token counts: 2 of 4 predicted and 2 of 4
        // gold tokens intersect.
        let micro = evaluate(
            &model,
            &examples,
            &masks,
            Granularity::Token,
            Averaging::Micro,
            0.1,
        )
        .unwrap();
        assert!((micro.precision - 0.5).abs() < 1e-12);
        assert!((micro.recall - 0.5).abs() < 1e-12);
        assert!((micro.f1 - 0.5).abs() < 1e-12);
    }
}
