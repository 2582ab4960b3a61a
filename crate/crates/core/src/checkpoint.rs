//! Checkpoint files.
//!
//! Layout: one ASCII line `CCCKPT version=1 header=<n>`, then `n` bytes of
//! JSON [`Header`], then every parameter listed in the header as a
//! little-endian array of `rows * cols` floats, in header order. Nothing
//! follows the last array. The same model always serializes to the same
//! bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::autodiff::{Dtype, ParamStore, Real};
use crate::error::{Error, Result};
use crate::finetune::{ClassifierHead, Pooling};
use crate::kg::{Lexicon, RelationTable};
use crate::model::{AnyModel, CcLstm, Dnn, Encoder, ModelConfig, ModelKind, TransE, Vocab};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "CCCKPT";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// A fine-tuned classification head stored with its encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierInfo {
    pub labels: Vec<String>,
    pub pooling: Pooling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub dtype: Dtype,
    pub model: ModelConfig,
    /// empty for TransE
    pub vocab: Vec<String>,
    pub vocab_hash: String,
    pub relations: Vec<String>,
    /// concept id of each TransE entity row, sentinel excluded
    pub entity_ids: Vec<String>,
    pub classifier: Option<ClassifierInfo>,
    pub params: Vec<ParamInfo>,
}

impl Header {
    /// Describes `model` and its parameters. `lexicon` resolves TransE
    /// entity rows to concept ids.
    pub fn for_model<T: Real>(
        model: &AnyModel<T>,
        relations: &RelationTable,
        lexicon: &Lexicon,
        classifier: Option<ClassifierInfo>,
    ) -> Result<Self> {
        let vocab = model.vocab().map(|v| v.words().to_vec()).unwrap_or_default();
        let vocab_hash = model.vocab().map(Vocab::hash).unwrap_or_default();
        let entity_ids = match model {
            AnyModel::TransE(m) => {
                let mut ids = vec![String::new(); m.entity_rows().iter().flatten().count()];
                for (c, row) in m.entity_rows().iter().enumerate() {
                    if let Some(r) = row {
                        let concept = lexicon.concepts().get(c).ok_or_else(|| {
                            Error::contract(format!("entity row for concept #{c} outside the lexicon"))
                        })?;
                        ids[*r] = concept.id.clone();
                    }
                }
                ids
            }
            _ => Vec::new(),
        };
        Ok(Header {
            format_version: FORMAT_VERSION,
            dtype: T::DTYPE,
            model: *model.config(),
            vocab,
            vocab_hash,
            relations: relations.labels().to_vec(),
            entity_ids,
            classifier,
            params: param_infos(model.store()),
        })
    }

    pub fn relation_table(&self) -> RelationTable {
        RelationTable::from_labels(self.relations.iter().cloned())
    }
}

fn param_infos<T: Real>(store: &ParamStore<T>) -> Vec<ParamInfo> {
    store
        .params()
        .iter()
        .map(|p| ParamInfo {
            name: p.name.clone(),
            rows: p.rows,
            cols: p.cols,
        })
        .collect()
}

/// A decoded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub header: Header,
    pub store: ParamStore<T>,
}

pub fn to_bytes<T: Real>(header: &Header, store: &ParamStore<T>) -> Result<Vec<u8>> {
    if header.dtype != T::DTYPE {
        return Err(Error::contract("header dtype does not match the parameter store"));
    }
    if header.params != param_infos(store) {
        return Err(Error::contract("header parameter list does not match the parameter store"));
    }
    let json = serde_json::to_vec(header).map_err(|e| Error::contract(format!("serializing header: {e}")))?;
    let total: usize = store.params().iter().map(|p| p.data.len()).sum();
    let mut out = Vec::with_capacity(64 + json.len() + total * T::DTYPE.size());
    out.extend_from_slice(format!("{MAGIC} version={FORMAT_VERSION} header={}\n", json.len()).as_bytes());
    out.extend_from_slice(&json);
    for p in store.params() {
        for &x in &p.data {
            x.write_le(&mut out);
        }
    }
    Ok(out)
}

/// Writes the checkpoint through a temporary file and a rename, so a
/// failure leaves any previous checkpoint at `path` intact.
pub fn save<T: Real>(path: &Path, header: &Header, store: &ParamStore<T>) -> Result<()> {
    write_atomic(path, &to_bytes(header, store)?)
}

pub fn save_model<T: Real>(
    path: &Path,
    model: &AnyModel<T>,
    relations: &RelationTable,
    lexicon: &Lexicon,
    classifier: Option<ClassifierInfo>,
) -> Result<()> {
    save(path, &Header::for_model(model, relations, lexicon, classifier)?, model.store())
}

/// Reads only the header, to learn the dtype and model before decoding.
pub fn read_header(path: &Path) -> Result<Header> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(split(&bytes, path)?.0)
}

fn split<'a>(bytes: &'a [u8], path: &Path) -> Result<(Header, &'a [u8])> {
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing checkpoint header line".into()))?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header line is not UTF-8".into()))?;
    let mut fields = line.split(' ');
    if fields.next() != Some(MAGIC) {
        return Err(bad("not a checkpoint file".into()));
    }
    let mut version = None;
    let mut header_len = None;
    for f in fields {
        match f.split_once('=') {
            Some(("version", v)) => version = v.parse::<u32>().ok(),
            Some(("header", v)) => header_len = v.parse::<usize>().ok(),
            _ => return Err(bad(format!("unexpected header field `{f}`"))),
        }
    }
    match version {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(bad(format!("unsupported checkpoint version {v}"))),
        None => return Err(bad("checkpoint version missing".into())),
    }
    let header_len = header_len.ok_or_else(|| bad("header length missing".into()))?;
    let rest = &bytes[nl + 1..];
    if rest.len() < header_len {
        return Err(bad("truncated header".into()));
    }
    let header: Header =
        serde_json::from_slice(&rest[..header_len]).map_err(|e| bad(format!("malformed header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad("header and magic line disagree on the version".into()));
    }
    Ok((header, &rest[header_len..]))
}

impl<T: Real> Checkpoint<T> {
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Format {
            path: path.to_path_buf(),
            msg,
        };
        let (header, mut body) = split(bytes, path)?;
        if header.dtype != T::DTYPE {
            return Err(bad(format!(
                "checkpoint holds {:?} values, {:?} requested",
                header.dtype,
                T::DTYPE
            )));
        }
        let size = T::DTYPE.size();
        let mut store = ParamStore::new();
        for p in &header.params {
            let n = p.rows.checked_mul(p.cols).ok_or_else(|| bad(format!("`{}` is too large", p.name)))?;
            let len = n.checked_mul(size).filter(|&l| l <= body.len());
            let len = len.ok_or_else(|| bad(format!("truncated data for `{}`", p.name)))?;
            let data = body[..len].chunks_exact(size).map(T::read_le).collect();
            body = &body[len..];
            store.insert(&p.name, p.rows, p.cols, data).map_err(|e| bad(e.to_string()))?;
        }
        if !body.is_empty() {
            return Err(bad(format!("{} trailing bytes after the last array", body.len())));
        }
        if !header.vocab.is_empty() {
            let vocab = Vocab::from_words(header.vocab.clone())?;
            if vocab.hash() != header.vocab_hash {
                return Err(bad("vocabulary hash mismatch".into()));
            }
        }
        Ok(Checkpoint { header, store })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Rebuilds the model. TransE needs the lexicon its entity ids refer to.
    pub fn into_model(self, lexicon: Option<&Lexicon>) -> Result<AnyModel<T>> {
        let config = self.header.model;
        let vocab = || Vocab::from_words(self.header.vocab.clone());
        Ok(match config.kind {
            ModelKind::CcLstm => AnyModel::CcLstm(CcLstm::from_store(config, vocab()?, self.store)?),
            ModelKind::Dnn => AnyModel::Dnn(Dnn::from_store(config, vocab()?, self.store)?),
            ModelKind::TransE => {
                let lexicon = lexicon
                    .ok_or_else(|| Error::Config("a TransE checkpoint needs the concept file it was trained on".into()))?;
                let mut rows = vec![None; lexicon.len()];
                for (r, id) in self.header.entity_ids.iter().enumerate() {
                    let c = lexicon
                        .get(id)
                        .ok_or_else(|| Error::UnknownConcept(format!("{id} (from checkpoint)")))?;
                    rows[c.index()] = Some(r);
                }
                AnyModel::TransE(TransE::from_store(config, self.store, rows)?)
            }
        })
    }

    /// The CC-LSTM encoder and its classifier head.
    pub fn into_classifier(self) -> Result<(CcLstm<T>, ClassifierHead, ClassifierInfo)> {
        let info = self
            .header
            .classifier
            .clone()
            .ok_or_else(|| Error::Validation("checkpoint has no classifier head".into()))?;
        let head = ClassifierHead::from_store(&self.store, info.pooling)?;
        match self.into_model(None)? {
            AnyModel::CcLstm(m) => Ok((m, head, info)),
            _ => Err(Error::Validation("classifier checkpoints must hold a cc-lstm encoder".into())),
        }
    }
}
