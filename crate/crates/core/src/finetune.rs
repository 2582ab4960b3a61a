//! Text classification on top of a pretrained [`CcLstm`]: pool the
//! per-position outputs, apply one affine layer, softmax.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, Init, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{CcLstm, Encoder, SEP};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Max,
    Mean,
}

impl Pooling {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Pooling::Max),
            "mean" => Ok(Pooling::Mean),
            _ => Err(Error::Config(format!("unknown pooling `{s}` (max, mean)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub text_a: Vec<String>,
    pub text_b: Option<Vec<String>>,
    pub label: usize,
}

impl LabeledExample {
    /// `text_a`, or `text_a <sep> text_b` for paired examples.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = self.text_a.clone();
        if let Some(b) = &self.text_b {
            out.push(SEP.to_string());
            out.extend(b.iter().cloned());
        }
        out
    }
}

/// Reads `label TAB text_a [TAB text_b]` rows. Labels are class indices.
pub fn load_dataset(path: &Path) -> Result<Vec<LabeledExample>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_dataset(BufReader::new(file), path)
}

pub fn read_dataset<R: BufRead>(reader: R, path: &Path) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&f.len()) {
            return Err(parse(format!("expected 2 or 3 tab-separated fields, got {}", f.len())));
        }
        let label = f[0]
            .trim()
            .parse()
            .map_err(|_| parse(format!("label `{}` is not a class index", f[0])))?;
        let text_a = tokenize(f[1]);
        if text_a.is_empty() {
            return Err(parse("empty text".into()));
        }
        let text_b = f.get(2).map(|b| tokenize(b)).filter(|b| !b.is_empty());
        out.push(LabeledExample { text_a, text_b, label });
    }
    Ok(out)
}

/// Writes rows in the format [`read_dataset`] reads.
pub fn write_dataset<W: Write>(mut w: W, examples: &[LabeledExample]) -> std::io::Result<()> {
    for e in examples {
        write!(w, "{}\t{}", e.label, e.text_a.join(" "))?;
        if let Some(b) = &e.text_b {
            write!(w, "\t{}", b.join(" "))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Pooling, L2 normalization and an affine layer; its parameters live in the encoder's
/// store under `head.w` and `head.b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierHead {
    pub pooling: Pooling,
    pub n_classes: usize,
    w: ParamId,
    b: ParamId,
}

impl ClassifierHead {
    pub fn new<T: Real, R: Rng + ?Sized>(
        model: &mut CcLstm<T>,
        n_classes: usize,
        pooling: Pooling,
        rng: &mut R,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        let dim = model.config().dim;
        let store = model.store_mut();
        let w = store.add("head.w", n_classes, dim, Init::XavierUniform, rng)?;
        let b = store.add("head.b", 1, n_classes, Init::Zeros, rng)?;
        Ok(ClassifierHead {
            pooling,
            n_classes,
            w,
            b,
        })
    }

    /// Reattaches a head saved in a checkpoint.
    pub fn from_store<T: Real>(store: &ParamStore<T>, pooling: Pooling) -> Result<Self> {
        let w = store
            .id("head.w")
            .ok_or_else(|| Error::Validation("checkpoint has no classifier head".into()))?;
        let b = store
            .id("head.b")
            .ok_or_else(|| Error::Validation("checkpoint has no classifier head".into()))?;
        Ok(ClassifierHead {
            pooling,
            n_classes: store.get(w).rows,
            w,
            b,
        })
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }

    fn logits<T: Real>(&self, model: &CcLstm<T>, tape: &mut Tape<T>, ex: &LabeledExample) -> Result<Var> {
        if ex.text_a.is_empty() {
            return Err(Error::Validation("example has empty text".into()));
        }
        let tokens = ex.tokens();
        let out = model.encode_sequence(tape, &tokens)?;
        let pooled = match self.pooling {
            Pooling::Max => tape.masked_max_pool(out, 0..tokens.len())?,
            Pooling::Mean => tape.mean_rows(out)?,
        };
        let pooled = tape.l2_normalize(pooled);
        tape.affine(model.store(), pooled, self.w, self.b)
    }
}

/// Class probabilities for one example.
pub fn classify<T: Real>(model: &CcLstm<T>, head: &ClassifierHead, ex: &LabeledExample) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let logits = head.logits(model, &mut tape, ex)?;
    Ok(softmax(tape.value(logits)).into_iter().map(Real::f64).collect())
}

pub fn predict<T: Real>(model: &CcLstm<T>, head: &ClassifierHead, ex: &LabeledExample) -> Result<usize> {
    let p = classify(model, head, ex)?;
    Ok(p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// stop after this many consecutive epochs without dev improvement; 0
    /// stops after the first epoch
    pub patience: usize,
    pub freeze_encoder: bool,
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            learning_rate: 0.1,
            max_epochs: 20,
            patience: 3,
            freeze_encoder: false,
            seed: 0,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneOutcome {
    /// dev accuracy after each epoch
    pub dev_accuracy: Vec<f64>,
    pub train_loss: Vec<f64>,
    /// 1-based epoch whose parameters were kept
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
}

impl FinetuneOutcome {
    pub fn epochs_trained(&self) -> usize {
        self.dev_accuracy.len()
    }

    /// First epoch (1-based) whose dev accuracy reached `threshold`.
    pub fn epochs_to_reach(&self, threshold: f64) -> Option<usize> {
        self.dev_accuracy.iter().position(|&a| a >= threshold).map(|i| i + 1)
    }
}

pub fn accuracy<T: Real>(model: &CcLstm<T>, head: &ClassifierHead, set: &[LabeledExample]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Validation("empty evaluation set".into()));
    }
    let mut correct = 0;
    for ex in set {
        correct += usize::from(predict(model, head, ex)? == ex.label);
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Cross-entropy SGD over head and (unless frozen) encoder. Keeps the
/// parameters of the epoch with the best dev accuracy, earliest on ties.
pub fn finetune<T: Real>(
    model: &mut CcLstm<T>,
    head: &ClassifierHead,
    train: &[LabeledExample],
    dev: &[LabeledExample],
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Validation("fine-tuning needs non-empty train and dev sets".into()));
    }
    if config.max_epochs == 0 {
        return Err(Error::Config("max_epochs must be >= 1".into()));
    }
    if let Some(ex) = train.iter().chain(dev).find(|e| e.label >= head.n_classes) {
        return Err(Error::Validation(format!(
            "label {} out of range for {} classes",
            ex.label, head.n_classes
        )));
    }
    let frozen: Vec<ParamId> = if config.freeze_encoder {
        let mut ids = model.encoder_params();
        ids.push(model.relations());
        ids
    } else {
        Vec::new()
    };
    for &id in &frozen {
        model.store_mut().set_frozen(id, true);
    }
    let result = run_epochs(model, head, train, dev, config);
    for &id in &frozen {
        model.store_mut().set_frozen(id, false);
    }
    result
}

fn run_epochs<T: Real>(
    model: &mut CcLstm<T>,
    head: &ClassifierHead,
    train: &[LabeledExample],
    dev: &[LabeledExample],
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(usize, f64, Vec<Vec<T>>)> = None;
    let mut dev_accuracy = Vec::new();
    let mut train_loss = Vec::new();
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let mut tape = Tape::new();
            let logits = head.logits(model, &mut tape, &train[i])?;
            let loss = tape.softmax_cross_entropy(logits, train[i].label)?;
            total += tape.scalar(loss).f64();
            tape.backward(loss, model.store_mut())?;
            model.store_mut().sgd_step(config.learning_rate, config.clip_norm)?;
        }
        train_loss.push(total / train.len() as f64);
        let acc = accuracy(model, head, dev)?;
        dev_accuracy.push(acc);
        log::info!("fine-tune epoch {epoch}: dev accuracy {acc:.4}");
        if best.as_ref().is_none_or(|b| acc > b.1) {
            let snapshot = model.store().params().iter().map(|p| p.data.clone()).collect();
            best = Some((epoch, acc, snapshot));
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= config.patience {
            break;
        }
    }
    let (best_epoch, best_dev_accuracy, snapshot) = best.expect("at least one epoch ran");
    for (i, data) in snapshot.into_iter().enumerate() {
        model.store_mut().get_mut(ParamId(i)).data = data;
    }
    Ok(FinetuneOutcome {
        dev_accuracy,
        train_loss,
        best_epoch,
        best_dev_accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    /// `None` when the class was never predicted
    pub precision: Option<f64>,
    /// `None` when the class is absent from the gold labels
    pub recall: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassStats>,
    /// mean over classes where the value is defined
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    /// `confusion[gold][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

pub fn metrics_from_predictions(gold: &[usize], predicted: &[usize], n_classes: usize) -> Result<ClassMetrics> {
    if gold.is_empty() || gold.len() != predicted.len() {
        return Err(Error::Validation(format!(
            "need equally many gold and predicted labels, got {} and {}",
            gold.len(),
            predicted.len()
        )));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&g, &p) in gold.iter().zip(predicted) {
        if g >= n_classes || p >= n_classes {
            return Err(Error::Validation(format!("label out of range for {n_classes} classes")));
        }
        confusion[g][p] += 1;
    }
    let correct: usize = (0..n_classes).map(|k| confusion[k][k]).sum();
    let per_class: Vec<ClassStats> = (0..n_classes)
        .map(|k| {
            let support: usize = confusion[k].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[k]).sum();
            let tp = confusion[k][k] as f64;
            ClassStats {
                precision: (predicted > 0).then(|| tp / predicted as f64),
                recall: (support > 0).then(|| tp / support as f64),
                support,
            }
        })
        .collect();
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    Ok(ClassMetrics {
        accuracy: correct as f64 / gold.len() as f64,
        macro_precision: mean(per_class.iter().filter_map(|c| c.precision).collect()),
        macro_recall: mean(per_class.iter().filter_map(|c| c.recall).collect()),
        per_class,
        confusion,
    })
}

pub fn evaluate_classifier<T: Real>(
    model: &CcLstm<T>,
    head: &ClassifierHead,
    test: &[LabeledExample],
) -> Result<ClassMetrics> {
    if test.is_empty() {
        return Err(Error::Validation("empty test set".into()));
    }
    let gold: Vec<usize> = test.iter().map(|e| e.label).collect();
    let predicted = test.iter().map(|e| predict(model, head, e)).collect::<Result<Vec<_>>>()?;
    metrics_from_predictions(&gold, &predicted, head.n_classes)
}

/// Accuracy and per-class precision/recall as a plain-text table.
pub fn render_metrics(m: &ClassMetrics) -> String {
    let fmt = |x: Option<f64>| x.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
    let mut s = format!("accuracy {:.4}\n{:<8} {:>10} {:>10} {:>8}\n", m.accuracy, "class", "precision", "recall", "support");
    for (k, c) in m.per_class.iter().enumerate() {
        s.push_str(&format!("{k:<8} {:>10} {:>10} {:>8}\n", fmt(c.precision), fmt(c.recall), c.support));
    }
    s.push_str(&format!("{:<8} {:>10} {:>10}\n", "macro", fmt(m.macro_precision), fmt(m.macro_recall)));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelKind, Vocab};

    fn ex(text: &str, label: usize) -> LabeledExample {
        LabeledExample {
            text_a: tokenize(text),
            text_b: None,
            label,
        }
    }

    #[test]
    fn metric_examples() {
        let m = metrics_from_predictions(&[0, 1, 0, 1], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(m.per_class.iter().all(|c| c.precision == Some(1.0) && c.recall == Some(1.0)));

        let m = metrics_from_predictions(&[0, 1, 0, 1], &[0, 0, 0, 0], 2).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.per_class[1].precision, None);

        let m = metrics_from_predictions(&[0, 0], &[0, 1], 3).unwrap();
        assert_eq!(m.per_class[2].recall, None);
        assert_eq!(m.per_class[1].recall, None);
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let config = ModelConfig {
            kind: ModelKind::CcLstm,
            dim: 6,
            embed_dim: 4,
            layers: 1,
        };
        let mut model = CcLstm::<f64>::new(config, Vocab::new(["a", "b"]), 1, &mut rng).unwrap();
        let head = ClassifierHead::new(&mut model, 3, Pooling::Max, &mut rng).unwrap();
        model.store_mut().get_mut(head.w).data.iter_mut().for_each(|x| *x = 0.0);
        let p = classify(&model, &head, &ex("a b", 0)).unwrap();
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        let paired = LabeledExample {
            text_b: Some(tokenize("b")),
            ..ex("a", 0)
        };
        assert_eq!(paired.tokens(), vec!["a", SEP, "b"]);
        assert!(classify(&model, &head, &ex("", 0)).is_err());
    }

    #[test]
    fn dataset_rows() {
        let data = "1\tthe cat\n0\ta premise\ta hypothesis\n";
        let rows = read_dataset(data.as_bytes(), Path::new("d.tsv")).unwrap();
        assert_eq!(rows[0].label, 1);
        assert_eq!(rows[1].text_b.as_deref(), Some(&tokenize("a hypothesis")[..]));
        assert!(read_dataset("x\tthe cat\n".as_bytes(), Path::new("d.tsv")).is_err());
    }
}
