//! Per-triplet SGD on the margin ranking loss.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape};
use crate::error::{Error, Result};
use crate::index::{ContextMatch, SentenceIndex};
use crate::kg::{ConceptIx, Lexicon, Triplet, MAX_NAME_WORDS};
use crate::model::{ConceptInput, Encoder, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// probability of training on a name variant instead of the primary name
    pub alpha: f64,
    /// probability of drawing a share-a-word negative
    pub beta: f64,
    pub seed: u64,
    /// global gradient-norm clip; `None` disables clipping
    pub clip_norm: Option<f64>,
    pub max_name_words: usize,
    pub retrieval_k: usize,
    /// steps per training-log record
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 0.1,
            learning_rate: 1.0,
            epochs: 10,
            alpha: 0.5,
            beta: 0.5,
            seed: 0,
            clip_norm: Some(5.0),
            max_name_words: MAX_NAME_WORDS,
            retrieval_k: 10,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.margin > 0.0) {
            return bad(format!("margin must be > 0, got {}", self.margin));
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        for (name, p) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip norm must be > 0, got {c}"));
            }
        }
        if self.max_name_words == 0 || self.retrieval_k == 0 || self.log_every == 0 {
            return bad("max_name_words, retrieval_k and log_every must be >= 1".into());
        }
        Ok(())
    }
}

/// `[gamma + d_pos - d_neg]_+`
pub fn margin_loss(d_pos: f64, d_neg: f64, gamma: f64) -> f64 {
    (gamma + d_pos - d_neg).max(0.0)
}

/// Concepts indexed by every word of every one of their names.
#[derive(Debug, Clone)]
pub struct NegativePool {
    by_word: HashMap<String, Vec<ConceptIx>>,
    n_concepts: usize,
}

impl NegativePool {
    pub fn new(lexicon: &Lexicon) -> Self {
        let mut by_word: HashMap<String, Vec<ConceptIx>> = HashMap::new();
        for ix in lexicon.indices() {
            let c = lexicon.concept(ix);
            for w in std::iter::once(&c.primary_name).chain(&c.variants).flatten() {
                let list = by_word.entry(w.clone()).or_default();
                if list.last() != Some(&ix) {
                    list.push(ix);
                }
            }
        }
        NegativePool {
            by_word,
            n_concepts: lexicon.len(),
        }
    }

    pub fn containing(&self, word: &str) -> &[ConceptIx] {
        self.by_word.get(word).map_or(&[], Vec::as_slice)
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeStats {
    pub uniform: u64,
    pub discriminative: u64,
    /// share-a-word draws that found no candidate and fell back to uniform
    pub fallbacks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corruption {
    pub triplet: Triplet,
    pub head_replaced: bool,
    pub discriminative: bool,
    pub fallback: bool,
}

/// Replaces the head or the tail (equal odds). With probability `beta` the
/// replacement shares a word with the replaced concept's primary name;
/// otherwise, or when no concept shares a word, it is uniform over all
/// other concepts.
pub fn sample_negative<R: Rng + ?Sized>(
    triplet: &Triplet,
    pool: &NegativePool,
    lexicon: &Lexicon,
    beta: f64,
    rng: &mut R,
    stats: &mut NegativeStats,
) -> Result<Corruption> {
    let head_replaced = rng.gen_bool(0.5);
    let truth = if head_replaced { triplet.head } else { triplet.tail };
    let mut discriminative = false;
    let mut fallback = false;
    let mut pick = None;
    if beta > 0.0 && rng.gen::<f64>() < beta {
        let mut words: Vec<&String> = lexicon.concept(truth).primary_name.iter().collect();
        words.sort();
        words.dedup();
        words.shuffle(rng);
        for w in words {
            let others: Vec<ConceptIx> = pool.containing(w).iter().copied().filter(|&c| c != truth).collect();
            if !others.is_empty() {
                pick = Some(others[rng.gen_range(0..others.len())]);
                discriminative = true;
                break;
            }
        }
        if pick.is_none() {
            fallback = true;
            stats.fallbacks += 1;
        }
    }
    let replacement = match pick {
        Some(c) => {
            stats.discriminative += 1;
            c
        }
        None => {
            let n = pool.n_concepts();
            if n < 2 {
                return Err(Error::Validation(
                    "cannot corrupt a triplet: the lexicon has fewer than two concepts".into(),
                ));
            }
            stats.uniform += 1;
            let k = rng.gen_range(0..n - 1) as u32;
            ConceptIx(if k >= truth.0 { k + 1 } else { k })
        }
    };
    let mut corrupted = *triplet;
    if head_replaced {
        corrupted.head = replacement;
    } else {
        corrupted.tail = replacement;
    }
    Ok(Corruption {
        triplet: corrupted,
        head_replaced,
        discriminative,
        fallback,
    })
}

/// Retrieval results per queried surface form.
#[derive(Debug, Default)]
pub struct ContextCache {
    map: HashMap<Vec<String>, Vec<ContextMatch>>,
}

impl ContextCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn retrieve(&mut self, index: &SentenceIndex, name: &[String], k: usize) -> &[ContextMatch] {
        self.map
            .entry(name.to_vec())
            .or_insert_with(|| index.retrieve_contexts(name, k))
    }
}

/// Read-only inputs of a training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub lexicon: &'a Lexicon,
    pub index: &'a SentenceIndex,
}

/// Draws the encoder input for one encounter of concept `c`: a surface
/// form, then one of its top retrieved contexts.
pub fn sample_input<'a, R: Rng + ?Sized>(
    kind: ModelKind,
    c: ConceptIx,
    data: TrainData<'a>,
    config: &TrainConfig,
    cache: &mut ContextCache,
    rng: &mut R,
) -> Result<ConceptInput<'a>> {
    if kind == ModelKind::TransE {
        return Ok(ConceptInput::Entity(c));
    }
    let name = data.lexicon.sample_surface_form(c, config.alpha, config.max_name_words, rng)?;
    if kind == ModelKind::Dnn {
        return Ok(ConceptInput::Name(name));
    }
    let matches = cache.retrieve(data.index, name, config.retrieval_k);
    let (tokens, span) = data.index.sample_context(matches, name, rng);
    Ok(ConceptInput::Mention { tokens, span })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub corruption: Corruption,
}

/// Mutable state carried across steps.
#[derive(Debug)]
pub struct TrainState {
    pub rng: ChaCha8Rng,
    pub cache: ContextCache,
    pub negatives: NegativeStats,
    pub pool: NegativePool,
    pub step: u64,
}

impl TrainState {
    pub fn new(lexicon: &Lexicon, seed: u64) -> Self {
        TrainState {
            rng: ChaCha8Rng::seed_from_u64(seed),
            cache: ContextCache::new(),
            negatives: NegativeStats::default(),
            pool: NegativePool::new(lexicon),
            step: 0,
        }
    }
}

/// One SGD step on `triplet` against a freshly sampled corruption. The
/// parameters change only when the loss is positive.
pub fn train_step<T: Real, E: Encoder<T> + ?Sized>(
    model: &mut E,
    triplet: &Triplet,
    data: TrainData<'_>,
    config: &TrainConfig,
    state: &mut TrainState,
) -> Result<StepOutcome> {
    let corruption = sample_negative(
        triplet,
        &state.pool,
        data.lexicon,
        config.beta,
        &mut state.rng,
        &mut state.negatives,
    )?;
    let neg = corruption.triplet;
    let kind = model.kind();
    let mut tape = Tape::new();
    let mut vars = Vec::with_capacity(4);
    for c in [triplet.head, triplet.tail, neg.head, neg.tail] {
        let input = sample_input(kind, c, data, config, &mut state.cache, &mut state.rng)?;
        vars.push(model.encode(&mut tape, input)?);
    }
    let rel = tape.embed_lookup(model.store(), model.relations(), &[triplet.relation.index()])?;
    let hr = tape.add(vars[0], rel)?;
    let d_pos = tape.euclidean_distance(hr, vars[1])?;
    let hr_neg = tape.add(vars[2], rel)?;
    let d_neg = tape.euclidean_distance(hr_neg, vars[3])?;
    let diff = tape.sub(d_pos, d_neg)?;
    let loss = tape.hinge(diff, T::of(config.margin))?;
    let value = tape.scalar(loss).f64();
    state.step += 1;
    if value > 0.0 {
        tape.backward(loss, model.store_mut())?;
        model.store_mut().sgd_step(config.learning_rate, config.clip_norm)?;
        model.after_update(&[triplet.head, triplet.tail, neg.head, neg.tail]);
    }
    Ok(StepOutcome { loss: value, corruption })
}

/// Aggregate over a window of steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub mean_loss: f64,
    pub hinge_active_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainEvent {
    Log(LogRecord),
    /// end of epoch `epoch` (1-based) with its mean loss
    EpochEnd(LogRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_mean_loss: Vec<f64>,
    pub steps: u64,
    pub negatives: NegativeStats,
}

#[derive(Default)]
struct Window {
    loss: f64,
    active: u64,
    n: u64,
}

impl Window {
    fn push(&mut self, loss: f64) {
        self.loss += loss;
        self.active += u64::from(loss > 0.0);
        self.n += 1;
    }

    fn record(&self, step: u64, epoch: usize) -> LogRecord {
        let n = self.n.max(1) as f64;
        LogRecord {
            step,
            epoch,
            mean_loss: self.loss / n,
            hinge_active_fraction: self.active as f64 / n,
        }
    }
}

/// Runs `config.epochs` passes over `triplets`, reshuffled every epoch.
/// `observer` sees a log record every `config.log_every` steps and at every
/// epoch end, together with the model; an error from it aborts training.
pub fn train<T: Real, E: Encoder<T> + ?Sized>(
    model: &mut E,
    triplets: &[Triplet],
    data: TrainData<'_>,
    config: &TrainConfig,
    observer: &mut dyn FnMut(TrainEvent, &E) -> Result<()>,
) -> Result<TrainReport> {
    config.validate()?;
    if triplets.is_empty() {
        return Err(Error::Validation("no training triplets".into()));
    }
    let mut state = TrainState::new(data.lexicon, config.seed);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut epoch_mean_loss = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut state.rng);
        let mut window = Window::default();
        let mut whole = Window::default();
        for &i in &order {
            let out = train_step(model, &triplets[i], data, config, &mut state)?;
            window.push(out.loss);
            whole.push(out.loss);
            if state.step.is_multiple_of(config.log_every as u64) {
                observer(TrainEvent::Log(window.record(state.step, epoch)), model)?;
                window = Window::default();
            }
        }
        let rec = whole.record(state.step, epoch);
        epoch_mean_loss.push(rec.mean_loss);
        log::info!(
            "epoch {epoch}: mean loss {:.5}, hinge active {:.3}",
            rec.mean_loss,
            rec.hinge_active_fraction
        );
        observer(TrainEvent::EpochEnd(rec), model)?;
    }
    Ok(TrainReport {
        epoch_mean_loss,
        steps: state.step,
        negatives: state.negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Concept, RelationIx};
    use crate::text::tokenize;

    fn lexicon(names: &[&str]) -> Lexicon {
        let mut lex = Lexicon::new();
        for (i, n) in names.iter().enumerate() {
            lex.push(Concept {
                id: format!("C{i}"),
                primary_name: tokenize(n),
                variants: vec![],
            })
            .unwrap();
        }
        lex
    }

    #[test]
    fn margin_loss_examples() {
        assert!((margin_loss(0.4, 0.3, 0.1) - 0.2).abs() < 1e-12);
        assert_eq!(margin_loss(0.1, 0.5, 0.1), 0.0);
        assert!((margin_loss(0.7, 0.7, 0.1) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { margin: 0.0, ..Default::default() },
            TrainConfig { alpha: 1.5, ..Default::default() },
            TrainConfig { beta: -0.1, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn share_a_word_negatives_for_leukemia() {
        let lex = lexicon(&[
            "myeloid leukemia",
            "lymphocytic leukemia",
            "cortisone",
            "rheumatoid arthritis",
            "aspirin",
        ]);
        let pool = NegativePool::new(&lex);
        let t = Triplet::new(ConceptIx(2), RelationIx(0), ConceptIx(0));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut stats = NegativeStats::default();
        for _ in 0..200 {
            let c = sample_negative(&t, &pool, &lex, 1.0, &mut rng, &mut stats).unwrap();
            assert_ne!(c.triplet, t);
            if !c.head_replaced {
                assert_eq!(c.triplet.tail, ConceptIx(1));
            }
        }
        // "cortisone" shares no word with anything, so head corruptions fall back
        assert!(stats.fallbacks > 0);
        assert_eq!(stats.fallbacks + stats.discriminative, 200);
    }

    #[test]
    fn single_concept_lexicon_cannot_be_corrupted() {
        let lex = lexicon(&["lonely concept"]);
        let pool = NegativePool::new(&lex);
        let t = Triplet::new(ConceptIx(0), RelationIx(0), ConceptIx(0));
        let mut stats = NegativeStats::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = sample_negative(&t, &pool, &lex, 1.0, &mut rng, &mut stats);
        assert!(matches!(r, Err(Error::Validation(_))));
        assert_eq!(stats.fallbacks, 1);
    }

    #[test]
    fn uniform_negatives_cover_others_evenly() {
        let names: Vec<String> = (0..11).map(|i| format!("concept{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let lex = lexicon(&refs);
        let pool = NegativePool::new(&lex);
        let t = Triplet::new(ConceptIx(0), RelationIx(0), ConceptIx(0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut stats = NegativeStats::default();
        let mut counts = [0usize; 11];
        for _ in 0..10_000 {
            let c = sample_negative(&t, &pool, &lex, 0.0, &mut rng, &mut stats).unwrap();
            let replaced = if c.head_replaced { c.triplet.head } else { c.triplet.tail };
            counts[replaced.index()] += 1;
        }
        assert_eq!(counts[0], 0);
        for &c in &counts[1..] {
            assert!((c as f64 / 10_000.0 - 0.1).abs() < 0.015, "{counts:?}");
        }
    }
}
