//! Trains CC-LSTM, CC-DNN and TransE on the synthetic zero-shot benchmark
//! and prints the entity-prediction table.
//!
//! cargo run --release --example zero_shot -- [dim] [epochs] [seed] [learning_rate]

use std::collections::{BTreeSet, HashMap, HashSet};
use std::time::Instant;

use cc_embed::eval::{evaluate, render_categories, render_table};
use cc_embed::index::SentenceIndex;
use cc_embed::kg::{Triplet, MAX_NAME_WORDS};
use cc_embed::model::{AnyModel, CcLstm, Dnn, ModelConfig, ModelKind, TransE, Vocab};
use cc_embed::synth::{generate, SynthConfig};
use cc_embed::training::{train, TrainConfig, TrainData};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cc_embed::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).map_or(default, String::as_str).to_string();
    let dim: usize = arg(0, "200").parse().expect("dim");
    let epochs: usize = arg(1, "100").parse().expect("epochs");
    let seed: u64 = arg(2, "1").parse().expect("seed");
    let learning_rate: f64 = arg(3, "0.003").parse().expect("learning rate");

    let kg = generate(&SynthConfig::new(400, 80, seed))?;
    let index = SentenceIndex::from_sentences(&kg.corpus);
    let vocab = Vocab::from_lexicon_and_corpus(&kg.lexicon, index.sentences().iter().map(|s| s.tokens.as_slice()));
    let data = TrainData { lexicon: &kg.lexicon, index: &index };
    let known: HashSet<Triplet> = kg.train.iter().chain(&kg.test).copied().collect();
    let labels: HashMap<Triplet, &'static str> = kg.categories.iter().copied().collect();
    println!(
        "{} concepts, {} train, {} test, {} sentences, vocab {}",
        kg.lexicon.len(),
        kg.train.len(),
        kg.test.len(),
        index.len(),
        vocab.len()
    );

    let mut reports = Vec::new();
    for kind in [ModelKind::CcLstm, ModelKind::Dnn, ModelKind::TransE] {
        let config = ModelConfig { dim, embed_dim: dim, ..ModelConfig::new(kind) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_rel = kg.relations.len();
        let mut model: AnyModel<f32> = match kind {
            ModelKind::CcLstm => AnyModel::CcLstm(CcLstm::new(config, vocab.clone(), n_rel, &mut rng)?),
            ModelKind::Dnn => AnyModel::Dnn(Dnn::new(config, vocab.clone(), n_rel, &mut rng)?),
            ModelKind::TransE => {
                let seen: BTreeSet<_> = kg.train.iter().flat_map(|t| [t.head, t.tail]).collect();
                AnyModel::TransE(TransE::new(config, kg.lexicon.len(), &seen, n_rel, &mut rng)?)
            }
        };
        let tc = TrainConfig { epochs, seed, learning_rate, ..TrainConfig::default() };
        let start = Instant::now();
        let report = train(&mut model, &kg.train, data, &tc, &mut |_, _| Ok(()))?;
        println!(
            "{}: {:.1}s, final epoch loss {:.4}",
            kind.name(),
            start.elapsed().as_secs_f64(),
            report.epoch_mean_loss.last().copied().unwrap_or(f64::NAN)
        );
        let (r, _) = evaluate(&model, &kg.lexicon, &index, &kg.test, &known, &labels, MAX_NAME_WORDS)?;
        print!("{}", render_categories(&r));
        reports.push(r);
    }
    print!("{}", render_table(&reports));
    Ok(())
}
