//! Command-line driver for the conceptual-contextual embedding pipeline.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 invalid input
//! data, 3 runtime failure.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cc_embed::artifact::{write_atomic, RunManifest};
use cc_embed::checkpoint::{self, Checkpoint, ClassifierInfo, Header};
use cc_embed::config::RunConfig;
use cc_embed::eval::{
    cache_concept_embeddings, evaluate, load_categories, render_categories, render_table, resolve_labels, EvalReport,
    RankRecord, Side,
};
use cc_embed::finetune::{
    evaluate_classifier, finetune, load_dataset, write_dataset, render_metrics, ClassMetrics, ClassifierHead, FinetuneConfig,
    FinetuneOutcome, LabeledExample, Pooling,
};
use cc_embed::index::SentenceIndex;
use cc_embed::kg::{
    load_triplets, split_train_test, write_triplets, InverseMap, Lexicon, LoadOptions, RelationTable, Triplet,
    MAX_NAME_WORDS,
};
use cc_embed::model::{load_pretrained_vectors, AnyModel, CcLstm, Dnn, Encoder, ModelConfig, ModelKind, TransE, Vocab};
use cc_embed::synth::{generate, SynthConfig};
use cc_embed::training::{train, TrainData, TrainEvent};
use cc_embed::{Error, Result};

#[derive(Parser)]
#[command(name = "cc-embed", version, about = "Conceptual-contextual concept embeddings")]
struct Cli {
    /// log level on standard error: error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate concept, triplet and corpus files and print their statistics
    Ingest(IngestArgs),
    /// Split triplets into train and test files
    Split(SplitArgs),
    /// Build and serialize the sentence index of a corpus
    Index(IndexArgs),
    /// Generate the synthetic knowledge graph, corpus and category labels
    GenSynth(GenSynthArgs),
    /// Train a model on knowledge-graph triplets
    Train(TrainArgs),
    /// Entity prediction on test triplets
    Eval(EvalArgs),
    /// Write one vector per concept
    Encode(EncodeArgs),
    /// Fine-tune a CC-LSTM encoder with a classification head
    Finetune(FinetuneArgs),
    /// Render stored evaluation reports as a table
    Report(ReportArgs),
}

#[derive(Args)]
struct LexiconArgs {
    /// concept file: concept_id TAB name TAB preferred(0|1)
    #[arg(long)]
    concepts: PathBuf,
    /// drop concepts with any non-Latin name
    #[arg(long)]
    latin_only: bool,
}

impl LexiconArgs {
    fn load(&self, manifest: &mut RunManifest) -> Result<Lexicon> {
        manifest.add_input(&self.concepts)?;
        Lexicon::load(&self.concepts, LoadOptions { latin_only: self.latin_only })
    }
}

#[derive(Args)]
struct CorpusArgs {
    /// serialized sentence index from `cc-embed index`
    #[arg(long, conflicts_with = "corpus")]
    index: Option<PathBuf>,
    /// corpus text, one sentence per line, indexed on the fly
    #[arg(long)]
    corpus: Option<PathBuf>,
}

impl CorpusArgs {
    fn load(&self, manifest: &mut RunManifest) -> Result<Option<SentenceIndex>> {
        match (&self.index, &self.corpus) {
            (Some(p), _) => {
                manifest.add_input(p)?;
                Ok(Some(SentenceIndex::load(p)?))
            }
            (None, Some(p)) => {
                manifest.add_input(p)?;
                Ok(Some(SentenceIndex::build(p)?))
            }
            (None, None) => Ok(None),
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    lexicon: LexiconArgs,
    /// triplet files: head TAB relation TAB tail
    #[arg(long)]
    triplets: Vec<PathBuf>,
    /// relation TAB inverse_relation
    #[arg(long)]
    inverses: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// write the cleaned concept file here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    lexicon: LexiconArgs,
    #[arg(long)]
    triplets: PathBuf,
    #[arg(long)]
    inverses: Option<PathBuf>,
    #[arg(long)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long, default_value_t = 400)]
    concepts: usize,
    #[arg(long, default_value_t = 80)]
    zero_shot: usize,
    /// fraction of disorders with opaque names
    #[arg(long, default_value_t = 0.5)]
    eponym_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    lexicon: LexiconArgs,
    /// training triplets
    #[arg(long)]
    train: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// key = value settings; flags below override them
    #[arg(long)]
    config: Option<PathBuf>,
    /// word vectors (`count dim` header, then `word v1 .. vdim`)
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// training log (JSON lines); defaults to `<out>.log.jsonl`
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// a number, or `none` to disable clipping
    #[arg(long)]
    clip_norm: Option<String>,
    #[arg(long)]
    max_name_words: Option<usize>,
    #[arg(long)]
    retrieval_k: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

impl TrainArgs {
    /// Settings given as flags, in config-file syntax.
    fn overrides(&self) -> Vec<(&'static str, String)> {
        fn s<T: ToString>(v: &Option<T>) -> Option<String> {
            v.as_ref().map(T::to_string)
        }
        [
            ("model", self.model.clone()),
            ("dim", s(&self.dim)),
            ("embed_dim", s(&self.embed_dim)),
            ("layers", s(&self.layers)),
            ("margin", s(&self.margin)),
            ("learning_rate", s(&self.learning_rate)),
            ("epochs", s(&self.epochs)),
            ("alpha", s(&self.alpha)),
            ("beta", s(&self.beta)),
            ("seed", s(&self.seed)),
            ("clip_norm", self.clip_norm.clone()),
            ("max_name_words", s(&self.max_name_words)),
            ("retrieval_k", s(&self.retrieval_k)),
            ("log_every", s(&self.log_every)),
            ("checkpoint_every", s(&self.checkpoint_every)),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    lexicon: LexiconArgs,
    /// test triplets
    #[arg(long)]
    test: PathBuf,
    /// further true triplets (train, validation) to filter out of rankings
    #[arg(long)]
    known: Vec<PathBuf>,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// head TAB relation TAB tail TAB category
    #[arg(long)]
    categories: Option<PathBuf>,
    #[arg(long, default_value_t = MAX_NAME_WORDS)]
    max_name_words: usize,
    /// JSON report
    #[arg(long)]
    out: PathBuf,
    /// per-record ranks as TSV
    #[arg(long)]
    ranks: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    lexicon: LexiconArgs,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = MAX_NAME_WORDS)]
    max_name_words: usize,
    /// concept_id TAB space-separated vector
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    /// pre-trained CC-LSTM checkpoint; without it the encoder starts from
    /// random weights
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// label TAB text_a [TAB text_b]
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    /// number of classes; defaults to the largest label + 1
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value = "max")]
    pooling: String,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 20)]
    max_epochs: usize,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long)]
    freeze_encoder: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// a number, or `none`
    #[arg(long, default_value = "5")]
    clip_norm: String,
    /// encoder size for random initialisation
    #[arg(long, default_value_t = 200)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// checkpoint with the fine-tuned encoder and head
    #[arg(long)]
    out: PathBuf,
    /// JSON metrics; defaults to `<out>.metrics.json`
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON reports written by `cc-embed eval`
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// also write the table here
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    let name = cli.command.name();
    let args: Vec<String> = std::env::args().skip(1).skip_while(|a| a != name).skip(1).collect();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a, args),
        Command::Split(a) => split(a, args),
        Command::Index(a) => index(a, args),
        Command::GenSynth(a) => gen_synth(a, args),
        Command::Train(a) => train_cmd(a, args),
        Command::Eval(a) => eval_cmd(a, args),
        Command::Encode(a) => encode(a, args),
        Command::Finetune(a) => finetune_cmd(a, args),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Split(_) => "split",
            Command::Index(_) => "index",
            Command::GenSynth(_) => "gen-synth",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Encode(_) => "encode",
            Command::Finetune(_) => "finetune",
            Command::Report(_) => "report",
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        e if e.is_data_error() => 2,
        _ => 3,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn ingest(a: IngestArgs, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("ingest", args);
    let lexicon = a.lexicon.load(&mut manifest)?;
    let variants: usize = lexicon.concepts().iter().map(|c| c.variants.len()).sum();
    println!("concepts\t{}", lexicon.len());
    println!("name variants\t{variants}");
    let mut relations = RelationTable::new();
    if let Some(p) = &a.inverses {
        manifest.add_input(p)?;
        InverseMap::load(p, &mut relations)?;
    }
    for p in &a.triplets {
        manifest.add_input(p)?;
        let ts = load_triplets(p, &lexicon, &mut relations)?;
        let unique: HashSet<&Triplet> = ts.iter().collect();
        println!("{}\t{} triplets ({} distinct)", p.display(), ts.len(), unique.len());
        let mut per_rel: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &ts {
            *per_rel.entry(relations.label(t.relation)).or_default() += 1;
        }
        for (r, n) in per_rel {
            println!("  {r}\t{n}");
        }
    }
    if let Some(p) = &a.corpus {
        manifest.add_input(p)?;
        let index = SentenceIndex::build(p)?;
        println!("sentences\t{}", index.len());
        println!("mean sentence length\t{:.2}", index.avg_len());
    }
    if let Some(out) = &a.out {
        let mut buf = Vec::new();
        lexicon
            .write_tsv(&mut buf)
            .map_err(|e| Error::io("serializing concepts", e))?;
        write_atomic(out, &buf)?;
        manifest.add_output(out)?;
        manifest.finish(out)?;
    }
    Ok(())
}

fn split(a: SplitArgs, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("split", args);
    manifest.seed = Some(a.seed);
    manifest.config.insert("test_fraction".into(), a.test_fraction.to_string());
    let lexicon = a.lexicon.load(&mut manifest)?;
    let mut relations = RelationTable::new();
    let inverse = match &a.inverses {
        Some(p) => {
            manifest.add_input(p)?;
            Some(InverseMap::load(p, &mut relations)?)
        }
        None => None,
    };
    manifest.add_input(&a.triplets)?;
    let triplets = load_triplets(&a.triplets, &lexicon, &mut relations)?;
    let set = split_train_test(&triplets, a.test_fraction, inverse.as_ref(), a.seed)?;
    for (path, ts) in [(&a.train_out, &set.train), (&a.test_out, &set.test)] {
        let mut buf = Vec::new();
        write_triplets(&mut buf, ts, &lexicon, &relations)
            .map_err(|e| Error::io("serializing triplets", e))?;
        write_atomic(path, &buf)?;
        manifest.add_output(path)?;
    }
    log::info!("{} train, {} test triplets", set.train.len(), set.test.len());
    manifest.finish(&a.train_out)?;
    Ok(())
}

fn index(a: IndexArgs, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("index", args);
    manifest.add_input(&a.corpus)?;
    let index = SentenceIndex::build(&a.corpus)?;
    index.save(&a.out)?;
    log::info!("indexed {} sentences", index.len());
    manifest.add_output(&a.out)?;
    manifest.finish(&a.out)?;
    Ok(())
}

fn gen_synth(a: GenSynthArgs, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("gen-synth", args);
    manifest.seed = Some(a.seed);
    manifest.config.insert("concepts".into(), a.concepts.to_string());
    manifest.config.insert("zero_shot".into(), a.zero_shot.to_string());
    manifest.config.insert("eponym_fraction".into(), a.eponym_fraction.to_string());
    let config = SynthConfig {
        eponym_fraction: a.eponym_fraction,
        ..SynthConfig::new(a.concepts, a.zero_shot, a.seed)
    };
    let kg = generate(&config)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(format!("creating {}", a.out.display()), e))?;
    for path in kg.write(&a.out)? {
        manifest.add_output(&path)?;
    }
    let (site_train, site_dev) = kg.site_task(a.seed);
    for (name, set) in [("site_train.tsv", &site_train), ("site_dev.tsv", &site_dev)] {
        let path = a.out.join(name);
        let mut buf = Vec::new();
        write_dataset(&mut buf, set).map_err(|e| Error::io(format!("serializing {name}"), e))?;
        write_atomic(&path, &buf)?;
        manifest.add_output(&path)?;
    }
    log::info!(
        "{} concepts ({} zero-shot), {} train and {} test triplets, {} sentences",
        kg.lexicon.len(),
        kg.zero_shot.len(),
        kg.train.len(),
        kg.test.len(),
        kg.corpus.len()
    );
    manifest.finish(&a.out.join("synth"))?;
    Ok(())
}

fn empty_index() -> SentenceIndex {
    SentenceIndex::from_sentences(Vec::<String>::new())
}

fn train_cmd(a: TrainArgs, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("train", args);
    let mut config = RunConfig::default();
    if let Some(p) = &a.config {
        manifest.add_input(p)?;
        config.apply_file(p)?;
    }
    for (k, v) in a.overrides() {
        config.set(k, &v)?;
    }
    config.validate()?;
    manifest.seed = Some(config.train.seed);
    manifest.config = config.to_map();

    let lexicon = a.lexicon.load(&mut manifest)?;
    let mut relations = RelationTable::new();
    manifest.add_input(&a.train)?;
    let triplets = load_triplets(&a.train, &lexicon, &mut relations)?;
    let index = a.corpus.load(&mut manifest)?;
    if config.model.kind == ModelKind::CcLstm && index.is_none() {
        return Err(Error::Config("cc-lstm training needs --index or --corpus".into()));
    }
    let index = index.unwrap_or_else(empty_index);
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let vocab = || Vocab::from_lexicon_and_corpus(&lexicon, index.sentences().iter().map(|s| s.tokens.as_slice()));
    let n_rel = relations.len();
    let mut model: AnyModel<f32> = match config.model.kind {
        ModelKind::CcLstm => AnyModel::CcLstm(CcLstm::new(config.model, vocab(), n_rel, &mut rng)?),
        ModelKind::Dnn => AnyModel::Dnn(Dnn::new(config.model, vocab(), n_rel, &mut rng)?),
        ModelKind::TransE => {
            let seen: BTreeSet<_> = triplets.iter().flat_map(|t| [t.head, t.tail]).collect();
            AnyModel::TransE(TransE::new(config.model, lexicon.len(), &seen, n_rel, &mut rng)?)
        }
    };
    if let Some(p) = &a.vectors {
        manifest.add_input(p)?;
        let found = match &mut model {
            AnyModel::CcLstm(m) => {
                let table = m.word_table();
                load_pretrained_vectors(p, &m.vocab.clone(), m.store_mut(), table)?
            }
            _ => return Err(Error::Config("--vectors applies to cc-lstm only".into())),
        };
        log::info!("initialised {found} word vectors from {}", p.display());
    }

    let log_path = a.log.clone().unwrap_or_else(|| suffixed(&a.out, ".log.jsonl"));
    let mut log_file = fs::File::create(&log_path)
        .map_err(|e| Error::io(format!("creating {}", log_path.display()), e))?;
    let every = config.checkpoint_every;
    let data = TrainData { lexicon: &lexicon, index: &index };
    let out = a.out.clone();
    let report = train(&mut model, &triplets, data, &config.train, &mut |event, m| {
        let (kind, rec) = match event {
            TrainEvent::Log(r) => ("log", r),
            TrainEvent::EpochEnd(r) => ("epoch_end", r),
        };
        let line = serde_json::json!({
            "event": kind,
            "step": rec.step,
            "epoch": rec.epoch,
            "mean_loss": rec.mean_loss,
            "hinge_active_fraction": rec.hinge_active_fraction,
        });
        writeln!(log_file, "{line}")
            .and_then(|_| log_file.flush())
            .map_err(|e| Error::io(format!("writing {}", log_path.display()), e))?;
        if matches!(event, TrainEvent::EpochEnd(_)) && every > 0 && rec.epoch % every == 0 {
            checkpoint::save(&out, &Header::for_model(m, &relations, &lexicon, None)?, m.store())?;
        }
        Ok(())
    })?;
    checkpoint::save_model(&a.out, &model, &relations, &lexicon, None)?;
    log::info!(
        "{} steps; negatives: {} uniform, {} share-a-word, {} fallbacks",
        report.steps,
        report.negatives.uniform,
        report.negatives.discriminative,
        report.negatives.fallbacks
    );
    manifest.add_output(&a.out)?;
    manifest.add_output(&log_path)?;
    manifest.finish(&a.out)?;
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Reads triplets against a fixed relation table; labels the model has
/// never seen are rejected.
fn load_known_relations(path: &Path, lexicon: &Lexicon, relations: &RelationTable) -> Result<Vec<Triplet>> {
    let mut table = relations.clone();
    let ts = load_triplets(path, lexicon, &mut table)?;
    if let Some(extra) = table.labels().get(relations.len()) {
        return Err(Error::UnknownRelation(format!("{extra} (in {})", path.display())));
    }
    Ok(ts)
}

fn load_model(path: &Path, lexicon: &Lexicon, manifest: &mut RunManifest) -> Result<(AnyModel<f32>, RelationTable)> {
    manifest.add_input(path)?;
    let ckpt = Checkpoint::<f32>::load(path)?;
    let relations = ckpt.header.relation_table();
    Ok((ckpt.into_model(Some(lexicon))?, relations))
}

fn eval_cmd(a: EvalArgs, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("eval", args);
    let lexicon = a.lexicon.load(&mut manifest)?;
    let (model, relations) = load_model(&a.checkpoint, &lexicon, &mut manifest)?;
    manifest.add_input(&a.test)?;
    let test = load_known_relations(&a.test, &lexicon, &relations)?;
    if test.is_empty() {
        return Err(Error::Validation(format!("{} holds no triplets", a.test.display())));
    }
    let mut known: HashSet<Triplet> = test.iter().copied().collect();
    for p in &a.known {
        manifest.add_input(p)?;
        known.extend(load_known_relations(p, &lexicon, &relations)?);
    }
    let index = a.corpus.load(&mut manifest)?;
    if model.kind() == ModelKind::CcLstm && index.is_none() {
        return Err(Error::Config("cc-lstm evaluation needs --index or --corpus".into()));
    }
    let index = index.unwrap_or_else(empty_index);
    let labels = match &a.categories {
        Some(p) => {
            manifest.add_input(p)?;
            let rows = load_categories(p)?;
            let (labels, warnings) = resolve_labels(&rows, &lexicon, &relations, &test);
            for w in warnings {
                log::warn!("{}: {w}", p.display());
            }
            labels
        }
        None => HashMap::new(),
    };
    let (report, records) = evaluate(&model, &lexicon, &index, &test, &known, &labels, a.max_name_words)?;
    let mut json = serde_json::to_vec_pretty(&report).map_err(|e| Error::Contract(e.to_string()))?;
    json.push(b'\n');
    write_atomic(&a.out, &json)?;
    manifest.add_output(&a.out)?;
    if let Some(p) = &a.ranks {
        write_text(p, &render_ranks(&records, &lexicon, &relations))?;
        manifest.add_output(p)?;
    }
    print!("{}", render_table(std::slice::from_ref(&report)));
    if !labels.is_empty() {
        print!("{}", render_categories(&report));
    }
    manifest.finish(&a.out)?;
    Ok(())
}

fn render_ranks(records: &[RankRecord], lexicon: &Lexicon, relations: &RelationTable) -> String {
    let mut s = String::from("head\trelation\ttail\tside\traw_rank\tfiltered_rank\n");
    for r in records {
        let side = match r.side {
            Side::Head => "head",
            Side::Tail => "tail",
        };
        let _ = writeln!(
            s,
            "{}\t{side}\t{}\t{}",
            r.triplet.display(lexicon, relations),
            r.raw_rank,
            r.filtered_rank
        );
    }
    s
}

fn encode(a: EncodeArgs, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("encode", args);
    let lexicon = a.lexicon.load(&mut manifest)?;
    let (model, _) = load_model(&a.checkpoint, &lexicon, &mut manifest)?;
    let index = a.corpus.load(&mut manifest)?;
    if model.kind() == ModelKind::CcLstm && index.is_none() {
        return Err(Error::Config("cc-lstm encoding needs --index or --corpus".into()));
    }
    let index = index.unwrap_or_else(empty_index);
    let cache = cache_concept_embeddings(&model, &lexicon, &index, a.max_name_words)?;
    let mut s = String::new();
    for (c, v) in lexicon.concepts().iter().zip(cache.vectors()) {
        let floats: Vec<String> = v.iter().map(|&x| (x as f32).to_string()).collect();
        let _ = writeln!(s, "{}\t{}", c.id, floats.join(" "));
    }
    write_text(&a.out, &s)?;
    manifest.add_output(&a.out)?;
    manifest.finish(&a.out)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct FinetuneReport {
    outcome: FinetuneOutcome,
    dev: ClassMetrics,
    test: Option<ClassMetrics>,
}

fn parse_clip(v: &str) -> Result<Option<f64>> {
    if v == "none" {
        return Ok(None);
    }
    v.parse()
        .map(Some)
        .map_err(|_| Error::Config(format!("clip norm must be a number or `none`, got `{v}`")))
}

fn finetune_cmd(a: FinetuneArgs, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("finetune", args);
    manifest.seed = Some(a.seed);
    let pooling = Pooling::parse(&a.pooling)?;
    let config = FinetuneConfig {
        learning_rate: a.learning_rate,
        max_epochs: a.max_epochs,
        patience: a.patience,
        freeze_encoder: a.freeze_encoder,
        seed: a.seed,
        clip_norm: parse_clip(&a.clip_norm)?,
    };
    for (k, v) in [
        ("learning_rate", config.learning_rate.to_string()),
        ("max_epochs", config.max_epochs.to_string()),
        ("patience", config.patience.to_string()),
        ("freeze_encoder", config.freeze_encoder.to_string()),
        ("clip_norm", a.clip_norm.clone()),
        ("pooling", a.pooling.clone()),
    ] {
        manifest.config.insert(k.into(), v);
    }
    let mut sets: Vec<Vec<LabeledExample>> = Vec::new();
    for p in [Some(&a.train), Some(&a.dev), a.test.as_ref()].into_iter().flatten() {
        manifest.add_input(p)?;
        sets.push(load_dataset(p)?);
    }
    let n_classes = match a.classes {
        Some(n) => n,
        None => sets.iter().flatten().map(|e| e.label + 1).max().unwrap_or(0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (mut model, relations) = match &a.checkpoint {
        Some(p) => {
            manifest.add_input(p)?;
            let ckpt = Checkpoint::<f32>::load(p)?;
            if ckpt.header.classifier.is_some() {
                return Err(Error::Validation(format!("{} already has a classifier head", p.display())));
            }
            let relations = ckpt.header.relation_table();
            match ckpt.into_model(None)? {
                AnyModel::CcLstm(m) => (m, relations),
                _ => return Err(Error::Validation("fine-tuning needs a cc-lstm checkpoint".into())),
            }
        }
        None => {
            let words = sets.iter().flatten().flat_map(|e| e.tokens());
            let mc = ModelConfig { dim: a.dim, embed_dim: a.dim, layers: a.layers, ..ModelConfig::new(ModelKind::CcLstm) };
            (CcLstm::new(mc, Vocab::new(words), 1, &mut rng)?, RelationTable::from_labels(["none"]))
        }
    };
    let head = ClassifierHead::new(&mut model, n_classes, pooling, &mut rng)?;
    let outcome = finetune(&mut model, &head, &sets[0], &sets[1], &config)?;
    let dev = evaluate_classifier(&model, &head, &sets[1])?;
    let test = sets.get(2).map(|t| evaluate_classifier(&model, &head, t)).transpose()?;
    println!("best epoch {} of {}", outcome.best_epoch, outcome.epochs_trained());
    print!("dev {}", render_metrics(&dev));
    if let Some(t) = &test {
        print!("test {}", render_metrics(t));
    }
    let info = ClassifierInfo {
        labels: (0..n_classes).map(|k| k.to_string()).collect(),
        pooling,
    };
    let model = AnyModel::CcLstm(model);
    checkpoint::save_model(&a.out, &model, &relations, &Lexicon::new(), Some(info))?;
    manifest.add_output(&a.out)?;
    let metrics_path = a.metrics.clone().unwrap_or_else(|| suffixed(&a.out, ".metrics.json"));
    let mut json = serde_json::to_vec_pretty(&FinetuneReport { outcome, dev, test })
        .map_err(|e| Error::Contract(e.to_string()))?;
    json.push(b'\n');
    write_atomic(&metrics_path, &json)?;
    manifest.add_output(&metrics_path)?;
    manifest.finish(&a.out)?;
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut reports = Vec::new();
    for p in &a.reports {
        let bytes = fs::read(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
        let r: EvalReport = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            path: p.clone(),
            msg: e.to_string(),
        })?;
        reports.push(r);
    }
    let mut s = render_table(&reports);
    for r in reports.iter().filter(|r| r.categories.len() > 1) {
        let _ = write!(s, "\n{}\n{}", r.model, render_categories(r));
    }
    print!("{s}");
    if let Some(out) = &a.out {
        write_text(out, &s)?;
    }
    Ok(())
}
