//! Concept encoders scored translationally: `d(h + r, t)`.
//!
//! Three models share one relation table and the [`Encoder`] interface:
//! a bi-LSTM over a mention in context ([`CcLstm`]), a bag-of-words MLP over
//! the name ([`Dnn`]) and a plain entity table ([`TransE`]).

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Init, LstmParams, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::index::Span;
use crate::kg::{ConceptIx, Lexicon, RelationTable};

pub const UNK: &str = "<unk>";
pub const SEP: &str = "<sep>";
pub const UNK_ID: usize = 0;
pub const SEP_ID: usize = 1;

const EMBED_INIT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// `<unk>` and `<sep>` followed by `words` in sorted order.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = words.into_iter().map(Into::into).collect();
        let mut all = vec![UNK.to_string(), SEP.to_string()];
        all.extend(sorted.into_iter().filter(|w| w != UNK && w != SEP));
        Self::from_words(all).expect("specials first")
    }

    /// Rebuilds a vocabulary from its stored word list.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 || words[UNK_ID] != UNK || words[SEP_ID] != SEP {
            return Err(Error::Validation("vocabulary must start with <unk>, <sep>".into()));
        }
        let ids: HashMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if ids.len() != words.len() {
            return Err(Error::Validation("vocabulary has duplicate words".into()));
        }
        Ok(Vocab { words, ids })
    }

    /// Every token of every concept name plus every corpus token.
    pub fn from_lexicon_and_corpus<'a>(
        lexicon: &Lexicon,
        corpus_tokens: impl IntoIterator<Item = &'a [String]>,
    ) -> Self {
        let mut words = BTreeSet::new();
        for c in lexicon.concepts() {
            for name in std::iter::once(&c.primary_name).chain(&c.variants) {
                words.extend(name.iter().cloned());
            }
        }
        for toks in corpus_tokens {
            words.extend(toks.iter().cloned());
        }
        Self::new(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    CcLstm,
    Dnn,
    TransE,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CcLstm => "cc-lstm",
            ModelKind::Dnn => "cc-dnn",
            ModelKind::TransE => "transe",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cc-lstm" | "lstm" => Ok(ModelKind::CcLstm),
            "cc-dnn" | "dnn" => Ok(ModelKind::Dnn),
            "transe" => Ok(ModelKind::TransE),
            _ => Err(Error::Config(format!("unknown model `{s}` (cc-lstm, cc-dnn, transe)"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Concept vector and relation embedding size. The bi-LSTM uses
    /// `dim / 2` hidden units per direction.
    pub dim: usize,
    pub embed_dim: usize,
    pub layers: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            dim: 200,
            embed_dim: 200,
            layers: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.kind == ModelKind::CcLstm && (!self.dim.is_multiple_of(2) || self.layers == 0) {
            return Err(Error::Config(format!(
                "cc-lstm needs an even dim and at least one layer (dim={}, layers={})",
                self.dim, self.layers
            )));
        }
        Ok(())
    }
}

/// What an encoder sees of one concept.
#[derive(Debug, Clone, Copy)]
pub enum ConceptInput<'a> {
    Mention { tokens: &'a [String], span: Span },
    Name(&'a [String]),
    Entity(ConceptIx),
}

/// Interface the training loop and evaluation share.
pub trait Encoder<T: Real> {
    fn config(&self) -> &ModelConfig;
    fn store(&self) -> &ParamStore<T>;
    fn store_mut(&mut self) -> &mut ParamStore<T>;
    /// `|relations| x dim` table.
    fn relations(&self) -> ParamId;
    /// Records the encoding of one concept on `tape`, returning a `1 x dim`
    /// node.
    fn encode(&self, tape: &mut Tape<T>, input: ConceptInput<'_>) -> Result<Var>;
    /// Hook run after every parameter update with the concepts involved.
    fn after_update(&mut self, _concepts: &[ConceptIx]) {}

    fn kind(&self) -> ModelKind {
        self.config().kind
    }

    /// Forward pass only, as plain numbers.
    fn encode_vec(&self, input: ConceptInput<'_>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let v = self.encode(&mut tape, input)?;
        Ok(tape.value(v).to_vec())
    }

    fn relation_vec(&self, r: usize) -> &[T] {
        self.store().get(self.relations()).row(r)
    }
}

/// `||h + r - t||_2`
pub fn score_triplet<T: Real>(h: &[T], r: &[T], t: &[T]) -> f64 {
    h.iter()
        .zip(r)
        .zip(t)
        .map(|((&h, &r), &t)| {
            let d = (h + r - t).f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// [`score_triplet`] with the relation given by label.
pub fn score_labeled<T: Real, E: Encoder<T> + ?Sized>(
    model: &E,
    relations: &RelationTable,
    h: &[T],
    label: &str,
    t: &[T],
) -> Result<f64> {
    let r = relations
        .get(label)
        .ok_or_else(|| Error::UnknownRelation(label.to_string()))?;
    Ok(score_triplet(h, model.relation_vec(r.index()), t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiLstmLayer {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

/// Runs stacked bidirectional LSTM layers over the rows of `x`, returning
/// per-position outputs `[forward; backward]` of the last layer.
pub fn bilstm_encode<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    layers: &[BiLstmLayer],
) -> Result<Var> {
    let mut input = x;
    for layer in layers {
        let n = tape.shape(input).0;
        let rows: Vec<Var> = (0..n).map(|i| tape.row(input, i)).collect::<Result<_>>()?;
        let run = |tape: &mut Tape<T>, cell: &LstmParams, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<Var>> {
            let mut out = vec![None; n];
            let (mut h, mut c) = (None, None);
            for i in order {
                let (nh, nc) = tape.lstm_step(store, rows[i], h, c, cell)?;
                out[i] = Some(nh);
                h = Some(nh);
                c = Some(nc);
            }
            Ok(out.into_iter().map(|v| v.expect("every position visited")).collect())
        };
        let fwd = run(tape, &layer.fwd, &mut (0..n))?;
        let bwd = run(tape, &layer.bwd, &mut (0..n).rev())?;
        let f = tape.stack_rows(&fwd)?;
        let b = tape.stack_rows(&bwd)?;
        input = tape.concat_cols(f, b)?;
    }
    Ok(input)
}

fn add_lstm<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<LstmParams> {
    let w = store.add(&format!("{prefix}.w"), 4 * hidden, input + hidden, Init::XavierUniform, rng)?;
    let b = store.add(&format!("{prefix}.b"), 1, 4 * hidden, Init::Zeros, rng)?;
    // forget-gate bias starts at 1
    store.get_mut(b).data[hidden..2 * hidden].iter_mut().for_each(|x| *x = T::one());
    Ok(LstmParams { w, b, input, hidden })
}

fn require<T: Real>(store: &ParamStore<T>, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::Validation(format!("checkpoint lacks parameter `{name}`")))
}

fn lstm_from_store<T: Real>(store: &ParamStore<T>, prefix: &str) -> Result<LstmParams> {
    let w = require(store, &format!("{prefix}.w"))?;
    let b = require(store, &format!("{prefix}.b"))?;
    let p = store.get(w);
    let hidden = p.rows / 4;
    Ok(LstmParams {
        w,
        b,
        input: p.cols - hidden,
        hidden,
    })
}

/// Contextual mention encoder.
#[derive(Debug, Clone)]
pub struct CcLstm<T> {
    config: ModelConfig,
    pub vocab: Vocab,
    store: ParamStore<T>,
    words: ParamId,
    layers: Vec<BiLstmLayer>,
    relations: ParamId,
}

impl<T: Real> CcLstm<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, vocab: Vocab, n_relations: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let words = store.add("words", vocab.len(), config.embed_dim, Init::Uniform(EMBED_INIT), rng)?;
        let hidden = config.dim / 2;
        let mut layers = Vec::new();
        for l in 0..config.layers {
            let input = if l == 0 { config.embed_dim } else { config.dim };
            layers.push(BiLstmLayer {
                fwd: add_lstm(&mut store, &format!("lstm{l}.fwd"), input, hidden, rng)?,
                bwd: add_lstm(&mut store, &format!("lstm{l}.bwd"), input, hidden, rng)?,
            });
        }
        let relations = store.add("relations", n_relations, config.dim, Init::Uniform(EMBED_INIT), rng)?;
        Ok(CcLstm {
            config,
            vocab,
            store,
            words,
            layers,
            relations,
        })
    }

    pub fn from_store(config: ModelConfig, vocab: Vocab, store: ParamStore<T>) -> Result<Self> {
        let layers = (0..config.layers)
            .map(|l| {
                Ok(BiLstmLayer {
                    fwd: lstm_from_store(&store, &format!("lstm{l}.fwd"))?,
                    bwd: lstm_from_store(&store, &format!("lstm{l}.bwd"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(CcLstm {
            config,
            vocab,
            words: require(&store, "words")?,
            relations: require(&store, "relations")?,
            layers,
            store,
        })
    }

    pub fn word_table(&self) -> ParamId {
        self.words
    }

    /// Every encoder parameter, excluding the relation table.
    pub fn encoder_params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.words];
        for l in &self.layers {
            ids.extend([l.fwd.w, l.fwd.b, l.bwd.w, l.bwd.b]);
        }
        ids
    }

    /// Per-position bi-LSTM outputs for a token sequence.
    pub fn encode_sequence(&self, tape: &mut Tape<T>, tokens: &[String]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::contract("cannot encode an empty token sequence"));
        }
        let x = tape.embed_lookup(&self.store, self.words, &self.vocab.ids(tokens))?;
        bilstm_encode(tape, &self.store, x, &self.layers)
    }

    /// Unit vector for the mention `span` of `tokens`.
    pub fn encode_mention(&self, tape: &mut Tape<T>, tokens: &[String], span: Span) -> Result<Var> {
        if span.is_empty() || span.end > tokens.len() {
            return Err(Error::contract(format!(
                "mention span {}..{} invalid for {} tokens",
                span.start,
                span.end,
                tokens.len()
            )));
        }
        let out = self.encode_sequence(tape, tokens)?;
        let pooled = tape.masked_max_pool(out, span.range())?;
        Ok(tape.l2_normalize(pooled))
    }
}

impl<T: Real> Encoder<T> for CcLstm<T> {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn relations(&self) -> ParamId {
        self.relations
    }

    fn encode(&self, tape: &mut Tape<T>, input: ConceptInput<'_>) -> Result<Var> {
        match input {
            ConceptInput::Mention { tokens, span } => self.encode_mention(tape, tokens, span),
            ConceptInput::Name(name) => self.encode_mention(tape, name, Span::new(0, name.len())),
            ConceptInput::Entity(_) => Err(Error::contract("cc-lstm encodes text, not entity ids")),
        }
    }
}

/// Context-free name encoder: mean of word embeddings, two tanh layers,
/// normalized.
#[derive(Debug, Clone)]
pub struct Dnn<T> {
    config: ModelConfig,
    pub vocab: Vocab,
    store: ParamStore<T>,
    words: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    relations: ParamId,
}

impl<T: Real> Dnn<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, vocab: Vocab, n_relations: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let words = store.add("words", vocab.len(), config.embed_dim, Init::Uniform(EMBED_INIT), rng)?;
        let w1 = store.add("dnn.w1", config.dim, config.embed_dim, Init::XavierUniform, rng)?;
        let b1 = store.add("dnn.b1", 1, config.dim, Init::Zeros, rng)?;
        let w2 = store.add("dnn.w2", config.dim, config.dim, Init::XavierUniform, rng)?;
        let b2 = store.add("dnn.b2", 1, config.dim, Init::Zeros, rng)?;
        let relations = store.add("relations", n_relations, config.dim, Init::Uniform(EMBED_INIT), rng)?;
        Ok(Dnn {
            config,
            vocab,
            store,
            words,
            w1,
            b1,
            w2,
            b2,
            relations,
        })
    }

    pub fn from_store(config: ModelConfig, vocab: Vocab, store: ParamStore<T>) -> Result<Self> {
        Ok(Dnn {
            config,
            vocab,
            words: require(&store, "words")?,
            w1: require(&store, "dnn.w1")?,
            b1: require(&store, "dnn.b1")?,
            w2: require(&store, "dnn.w2")?,
            b2: require(&store, "dnn.b2")?,
            relations: require(&store, "relations")?,
            store,
        })
    }

    pub fn encode_name(&self, tape: &mut Tape<T>, name: &[String]) -> Result<Var> {
        if name.is_empty() {
            return Err(Error::contract("cannot encode an empty name"));
        }
        let e = tape.embed_lookup(&self.store, self.words, &self.vocab.ids(name))?;
        let m = tape.mean_rows(e)?;
        let a = tape.affine(&self.store, m, self.w1, self.b1)?;
        let a = tape.tanh(a);
        let a = tape.affine(&self.store, a, self.w2, self.b2)?;
        let a = tape.tanh(a);
        Ok(tape.l2_normalize(a))
    }
}

impl<T: Real> Encoder<T> for Dnn<T> {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn relations(&self) -> ParamId {
        self.relations
    }

    fn encode(&self, tape: &mut Tape<T>, input: ConceptInput<'_>) -> Result<Var> {
        match input {
            ConceptInput::Name(name) => self.encode_name(tape, name),
            ConceptInput::Mention { tokens, span } => self.encode_name(tape, &tokens[span.range()]),
            ConceptInput::Entity(_) => Err(Error::contract("cc-dnn encodes names, not entity ids")),
        }
    }
}

/// Entity-table baseline. Concepts absent from training share one sentinel
/// row that is never updated.
#[derive(Debug, Clone)]
pub struct TransE<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    entities: ParamId,
    relations: ParamId,
    /// row per concept index; `None` for concepts without a trained row
    rows: Vec<Option<usize>>,
    sentinel: usize,
    sentinel_value: Vec<T>,
}

impl<T: Real> TransE<T> {
    /// One row per concept in `seen` plus the sentinel; `n_concepts` is the
    /// lexicon size.
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        n_concepts: usize,
        seen: &BTreeSet<ConceptIx>,
        n_relations: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let entities = store.add("entities", seen.len() + 1, config.dim, Init::Uniform(EMBED_INIT), rng)?;
        let relations = store.add("relations", n_relations, config.dim, Init::Uniform(EMBED_INIT), rng)?;
        let mut rows = vec![None; n_concepts];
        for (r, c) in seen.iter().enumerate() {
            rows[c.index()] = Some(r);
        }
        Self::assemble(config, store, entities, relations, rows)
    }

    /// `rows[i]` is the entity row of concept `i`, if any.
    pub fn from_store(config: ModelConfig, store: ParamStore<T>, rows: Vec<Option<usize>>) -> Result<Self> {
        let entities = require(&store, "entities")?;
        let relations = require(&store, "relations")?;
        Self::assemble(config, store, entities, relations, rows)
    }

    fn assemble(
        config: ModelConfig,
        mut store: ParamStore<T>,
        entities: ParamId,
        relations: ParamId,
        rows: Vec<Option<usize>>,
    ) -> Result<Self> {
        let n = store.get(entities).rows;
        if n == 0 || rows.iter().flatten().any(|&r| r + 1 >= n) {
            return Err(Error::Validation("entity rows do not match the entity table".into()));
        }
        let sentinel = n - 1;
        for r in 0..n {
            normalize(store.get_mut(entities).row_mut(r));
        }
        let sentinel_value = store.get(entities).row(sentinel).to_vec();
        Ok(TransE {
            config,
            store,
            entities,
            relations,
            rows,
            sentinel,
            sentinel_value,
        })
    }

    pub fn entity_rows(&self) -> &[Option<usize>] {
        &self.rows
    }

    /// The concept's row, or the sentinel with `true` when it has none.
    pub fn lookup(&self, c: ConceptIx) -> (&[T], bool) {
        let (row, unseen) = self.row_of(c);
        (self.store.get(self.entities).row(row), unseen)
    }

    fn row_of(&self, c: ConceptIx) -> (usize, bool) {
        match self.rows.get(c.index()).copied().flatten() {
            Some(r) => (r, false),
            None => (self.sentinel, true),
        }
    }
}

fn normalize<T: Real>(v: &mut [T]) {
    let n = v.iter().fold(T::zero(), |s, &x| s + x * x).sqrt();
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

impl<T: Real> Encoder<T> for TransE<T> {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn relations(&self) -> ParamId {
        self.relations
    }

    fn encode(&self, tape: &mut Tape<T>, input: ConceptInput<'_>) -> Result<Var> {
        match input {
            ConceptInput::Entity(c) => tape.embed_lookup(&self.store, self.entities, &[self.row_of(c).0]),
            _ => Err(Error::contract("transe encodes entity ids, not text")),
        }
    }

    fn after_update(&mut self, concepts: &[ConceptIx]) {
        let table = self.store.get_mut(self.entities);
        for &c in concepts {
            if let Some(r) = self.rows.get(c.index()).copied().flatten() {
                normalize(table.row_mut(r));
            }
        }
        table.row_mut(self.sentinel).copy_from_slice(&self.sentinel_value);
    }
}

/// Any of the three models, for code that picks one at run time.
#[derive(Debug, Clone)]
pub enum AnyModel<T> {
    CcLstm(CcLstm<T>),
    Dnn(Dnn<T>),
    TransE(TransE<T>),
}

impl<T: Real> AnyModel<T> {
    fn inner(&self) -> &dyn Encoder<T> {
        match self {
            AnyModel::CcLstm(m) => m,
            AnyModel::Dnn(m) => m,
            AnyModel::TransE(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Encoder<T> {
        match self {
            AnyModel::CcLstm(m) => m,
            AnyModel::Dnn(m) => m,
            AnyModel::TransE(m) => m,
        }
    }

    pub fn vocab(&self) -> Option<&Vocab> {
        match self {
            AnyModel::CcLstm(m) => Some(&m.vocab),
            AnyModel::Dnn(m) => Some(&m.vocab),
            AnyModel::TransE(_) => None,
        }
    }
}

impl<T: Real> Encoder<T> for AnyModel<T> {
    fn config(&self) -> &ModelConfig {
        self.inner().config()
    }

    fn store(&self) -> &ParamStore<T> {
        self.inner().store()
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        self.inner_mut().store_mut()
    }

    fn relations(&self) -> ParamId {
        self.inner().relations()
    }

    fn encode(&self, tape: &mut Tape<T>, input: ConceptInput<'_>) -> Result<Var> {
        self.inner().encode(tape, input)
    }

    fn after_update(&mut self, concepts: &[ConceptIx]) {
        self.inner_mut().after_update(concepts)
    }
}

/// Copies vectors from a word-vector text file (`count dim` header, then
/// `word v1 .. vdim` lines) into the rows of `table` for words in `vocab`.
/// Returns how many vocabulary words were found.
pub fn load_pretrained_vectors<T: Real>(
    path: &Path,
    vocab: &Vocab,
    store: &mut ParamStore<T>,
    table: ParamId,
) -> Result<usize> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|x| x.parse().map_err(|_| parse_err(1, format!("bad header `{header}`"))))
        .collect::<Result<_>>()?;
    let dim = match dims[..] {
        [_, d] => d,
        _ => return Err(parse_err(1, format!("header must be `count dim`, got `{header}`"))),
    };
    let cols = store.get(table).cols;
    if dim != cols {
        return Err(Error::Validation(format!(
            "{}: vectors have dim {dim}, embedding table has {cols}",
            path.display()
        )));
    }
    let mut found = 0;
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|x| x.parse().map_err(|_| parse_err(i + 2, format!("bad number `{x}`"))))
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(parse_err(i + 2, format!("expected {dim} values, got {}", values.len())));
        }
        let id = vocab.id(word);
        if id != UNK_ID || word == UNK {
            let row = store.get_mut(table).row_mut(id);
            for (dst, &v) in row.iter_mut().zip(&values) {
                *dst = T::of(v);
            }
            found += 1;
        }
    }
    Ok(found)
}
