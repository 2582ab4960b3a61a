use cc_embed::finetune::{
    classify, evaluate_classifier, finetune, metrics_from_predictions, predict, ClassifierHead, FinetuneConfig,
    LabeledExample, Pooling,
};
use cc_embed::model::{CcLstm, Encoder, ModelConfig, ModelKind, Vocab};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FILLER: &[&str] = &["the", "a", "report", "was", "filed", "today", "and", "then", "reviewed", "twice"];
const MARKERS: [&str; 2] = ["benign", "malignant"];

/// Sentences of filler words with one class marker at a random position.
fn separable(n: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let len = rng.gen_range(3..7);
            let mut text: Vec<String> = (0..len).map(|_| FILLER.choose(&mut rng).unwrap().to_string()).collect();
            text.insert(rng.gen_range(0..=len), MARKERS[label].to_string());
            LabeledExample { text_a: text, text_b: None, label }
        })
        .collect()
}

fn model(seed: u64) -> CcLstm<f32> {
    let vocab = Vocab::new(FILLER.iter().chain(&MARKERS).copied());
    let config = ModelConfig { dim: 16, embed_dim: 8, ..ModelConfig::new(ModelKind::CcLstm) };
    CcLstm::new(config, vocab, 1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn with_head(seed: u64, n_classes: usize) -> (CcLstm<f32>, ClassifierHead) {
    let mut m = model(seed);
    let head = ClassifierHead::new(&mut m, n_classes, Pooling::Max, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (m, head)
}

#[test]
fn separable_task_reaches_95_percent_within_20_epochs() {
    let (mut m, head) = with_head(1, 2);
    let (train, dev) = (separable(200, 1), separable(100, 2));
    let cfg = FinetuneConfig { max_epochs: 20, patience: 20, ..FinetuneConfig::default() };
    let out = finetune(&mut m, &head, &train, &dev, &cfg).unwrap();
    assert!(out.best_dev_accuracy >= 0.95, "{:?}", out.dev_accuracy);
}

#[test]
fn zero_learning_rate_keeps_dev_accuracy_constant() {
    let (mut m, head) = with_head(3, 2);
    let (train, dev) = (separable(40, 3), separable(40, 4));
    let cfg = FinetuneConfig { learning_rate: 0.0, max_epochs: 4, patience: 10, ..FinetuneConfig::default() };
    let out = finetune(&mut m, &head, &train, &dev, &cfg).unwrap();
    assert_eq!(out.epochs_trained(), 4);
    assert!(out.dev_accuracy.iter().all(|&a| a == out.dev_accuracy[0]), "{:?}", out.dev_accuracy);
}

#[test]
fn frozen_encoder_is_bitwise_unchanged() {
    let (mut m, head) = with_head(5, 2);
    let encoder: Vec<Vec<f32>> = m.encoder_params().iter().map(|&id| m.store().get(id).data.clone()).collect();
    let head_before: Vec<Vec<f32>> = head.params().iter().map(|&id| m.store().get(id).data.clone()).collect();
    let cfg = FinetuneConfig { freeze_encoder: true, max_epochs: 3, patience: 10, ..FinetuneConfig::default() };
    finetune(&mut m, &head, &separable(40, 5), &separable(20, 6), &cfg).unwrap();
    for (id, before) in m.encoder_params().iter().zip(&encoder) {
        assert_eq!(&m.store().get(*id).data, before);
    }
    let head_after: Vec<Vec<f32>> = head.params().iter().map(|&id| m.store().get(id).data.clone()).collect();
    assert_ne!(head_after, head_before);
}

#[test]
fn zero_patience_trains_one_epoch() {
    let (mut m, head) = with_head(7, 2);
    let cfg = FinetuneConfig { patience: 0, ..FinetuneConfig::default() };
    let out = finetune(&mut m, &head, &separable(20, 7), &separable(10, 8), &cfg).unwrap();
    assert_eq!(out.epochs_trained(), 1);
    assert_eq!(out.best_epoch, 1);
}

#[test]
fn probabilities_are_a_deterministic_distribution() {
    let (m, head) = with_head(9, 3);
    for ex in separable(10, 9) {
        let p = classify(&m, &head, &ex).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|&x| x >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(p, classify(&m, &head, &ex).unwrap());
    }
}

#[test]
fn evaluate_classifier_agrees_with_predictions() {
    let (m, head) = with_head(11, 3);
    let mut test = separable(30, 10);
    test.iter_mut().enumerate().for_each(|(i, e)| e.label = i % 3);
    let gold: Vec<usize> = test.iter().map(|e| e.label).collect();
    let predicted: Vec<usize> = test.iter().map(|e| predict(&m, &head, e).unwrap()).collect();
    assert_eq!(
        evaluate_classifier(&m, &head, &test).unwrap(),
        metrics_from_predictions(&gold, &predicted, 3).unwrap()
    );
}

proptest! {
    #[test]
    fn metrics_match_a_confusion_matrix_count(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60)) {
        let gold: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let predicted: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let m = metrics_from_predictions(&gold, &predicted, 3).unwrap();
        let count = |g: Option<usize>, p: Option<usize>| {
            pairs.iter().filter(|x| g.is_none_or(|g| x.0 == g) && p.is_none_or(|p| x.1 == p)).count()
        };
        let correct: usize = (0..3).map(|k| count(Some(k), Some(k))).sum();
        prop_assert!((m.accuracy - correct as f64 / pairs.len() as f64).abs() < 1e-12);
        for k in 0..3 {
            let tp = count(Some(k), Some(k)) as f64;
            let (gold_k, pred_k) = (count(Some(k), None), count(None, Some(k)));
            let c = m.per_class[k];
            prop_assert_eq!(c.support, gold_k);
            prop_assert_eq!(c.precision, (pred_k > 0).then(|| tp / pred_k as f64));
            prop_assert_eq!(c.recall, (gold_k > 0).then(|| tp / gold_k as f64));
            for p in 0..3 {
                prop_assert_eq!(m.confusion[k][p], count(Some(k), Some(p)));
            }
        }
    }
}
