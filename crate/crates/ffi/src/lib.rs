//! C ABI over a trained cc-embed model.
//!
//! Every fallible call returns a [`CcStatus`]. On failure the message is
//! available from [`cc_last_error_message`] on the same thread until the
//! next failing call. Handles are opaque and must be released with their
//! `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;

use cc_embed::checkpoint::Checkpoint;
use cc_embed::eval::{cache_concept_embeddings, rank_entity, EmbeddingCache, Side};
use cc_embed::index::SentenceIndex;
use cc_embed::kg::{Lexicon, LoadOptions, RelationTable, Triplet, MAX_NAME_WORDS};
use cc_embed::model::{AnyModel, ConceptInput, Encoder, ModelKind};
use cc_embed::text::tokenize;
use cc_embed::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Data = 4,
    Io = 5,
    NotFound = 6,
    BufferTooSmall = 7,
    Unsupported = 8,
    Internal = 9,
    Panic = 10,
}

/// Which entity of a triplet to rank.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcSide {
    Head = 0,
    Tail = 1,
}

/// A loaded model with its concept lexicon and optional sentence index.
pub struct CcModel {
    model: AnyModel<f32>,
    lexicon: Lexicon,
    relations: RelationTable,
    index: SentenceIndex,
    cache: OnceLock<Result<EmbeddingCache, String>>,
}

struct Failure {
    status: CcStatus,
    message: String,
}

impl Failure {
    fn new(status: CcStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) => CcStatus::Config,
            Error::Io { .. } => CcStatus::Io,
            e if e.is_data_error() => CcStatus::Data,
            _ => CcStatus::Internal,
        };
        Failure::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CcStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            CcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(CcStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(CcStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn model_arg<'a>(p: *const CcModel) -> Result<&'a CcModel, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(CcStatus::NullPointer, "`model` is null"))
}

unsafe fn out_slice<'a>(out: *mut f32, len: usize, dim: usize) -> Result<&'a mut [f32], Failure> {
    if out.is_null() {
        return Err(Failure::new(CcStatus::NullPointer, "`out` is null"));
    }
    if len < dim {
        return Err(Failure::new(
            CcStatus::BufferTooSmall,
            format!("buffer holds {len} floats, need {dim}"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(out, dim))
}

impl CcModel {
    fn concept(&self, id: &str) -> Result<cc_embed::kg::ConceptIx, Failure> {
        self.lexicon
            .get(id)
            .ok_or_else(|| Failure::new(CcStatus::NotFound, format!("unknown concept `{id}`")))
    }

    fn relation(&self, label: &str) -> Result<usize, Failure> {
        self.relations
            .get(label)
            .map(|r| r.index())
            .ok_or_else(|| Failure::new(CcStatus::NotFound, format!("unknown relation `{label}`")))
    }

    fn cache(&self) -> Result<&EmbeddingCache, Failure> {
        self.cache
            .get_or_init(|| {
                cache_concept_embeddings(&self.model, &self.lexicon, &self.index, MAX_NAME_WORDS)
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|m| Failure::new(CcStatus::Internal, m.clone()))
    }
}

fn write_vec(v: &[f64], out: &mut [f32]) {
    for (o, x) in out.iter_mut().zip(v) {
        *o = *x as f32;
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failing call on this thread, or NULL if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn cc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint and the concept file it was trained with. `index` is
/// a serialized sentence index and may be NULL; CC-LSTM models need it to
/// place names in context. On success `*out` owns a new handle; on failure
/// it is set to NULL.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_model_load(
    checkpoint: *const c_char,
    concepts: *const c_char,
    index: *const c_char,
    out: *mut *mut CcModel,
) -> CcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(CcStatus::NullPointer, "`out` is null"));
        }
        *out = std::ptr::null_mut();
        let checkpoint = PathBuf::from(str_arg(checkpoint, "checkpoint")?);
        let concepts = PathBuf::from(str_arg(concepts, "concepts")?);
        let index = if index.is_null() {
            SentenceIndex::from_sentences(Vec::<String>::new())
        } else {
            SentenceIndex::load(&PathBuf::from(str_arg(index, "index")?))?
        };
        let lexicon = Lexicon::load(&concepts, LoadOptions::default())?;
        let ckpt = Checkpoint::<f32>::load(&checkpoint)?;
        let relations = ckpt.header.relation_table();
        let model = ckpt.into_model(Some(&lexicon))?;
        let handle = Box::new(CcModel {
            model,
            lexicon,
            relations,
            index,
            cache: OnceLock::new(),
        });
        *out = Box::into_raw(handle);
        Ok(())
    })
}

/// Releases a handle from [`cc_model_load`]. NULL is ignored.
///
/// # Safety
/// `model` must come from [`cc_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cc_model_free(model: *mut CcModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// Embedding dimension, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_model_dim(model: *const CcModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().dim)
}

/// Number of concepts in the lexicon, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_model_num_concepts(model: *const CcModel) -> usize {
    model.as_ref().map_or(0, |m| m.lexicon.len())
}

/// Writes the embedding of a concept, encoded as in evaluation, into the
/// first `dim` floats of `out`.
///
/// # Safety
/// `out` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn cc_model_encode_concept(
    model: *const CcModel,
    concept_id: *const c_char,
    out: *mut f32,
    len: usize,
) -> CcStatus {
    guard(|| {
        let m = model_arg(model)?;
        let c = m.concept(str_arg(concept_id, "concept_id")?)?;
        let out = out_slice(out, len, m.model.config().dim)?;
        let v = m
            .cache()?
            .get(c)
            .ok_or_else(|| Failure::new(CcStatus::Internal, "concept missing from cache"))?;
        write_vec(v, out);
        Ok(())
    })
}

/// Encodes free text as a concept name. CC-LSTM places it in the best
/// matching indexed sentence when there is one. TransE cannot encode text.
///
/// # Safety
/// `out` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn cc_model_encode_text(
    model: *const CcModel,
    text: *const c_char,
    out: *mut f32,
    len: usize,
) -> CcStatus {
    guard(|| {
        let m = model_arg(model)?;
        let tokens = tokenize(str_arg(text, "text")?);
        let out = out_slice(out, len, m.model.config().dim)?;
        if tokens.is_empty() {
            return Err(Failure::new(CcStatus::Data, "text has no tokens"));
        }
        let name = &tokens[..tokens.len().min(MAX_NAME_WORDS)];
        let contexts = match m.model.kind() {
            ModelKind::TransE => {
                return Err(Failure::new(CcStatus::Unsupported, "TransE has no text encoder"));
            }
            ModelKind::CcLstm => m.index.retrieve_contexts(name, 1),
            ModelKind::Dnn => Vec::new(),
        };
        let input = match contexts.first() {
            Some(c) => {
                let (tokens, span) = m.index.context_of(c);
                ConceptInput::Mention { tokens, span }
            }
            None => ConceptInput::Name(name),
        };
        let v = m.model.encode_vec(input)?;
        for (o, x) in out.iter_mut().zip(v) {
            *o = x;
        }
        Ok(())
    })
}

/// `||h + r - t||` for a triplet of concept ids and a relation label.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_model_score(
    model: *const CcModel,
    head: *const c_char,
    relation: *const c_char,
    tail: *const c_char,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return Err(Failure::new(CcStatus::NullPointer, "`out` is null"));
        }
        let (h, t) = (m.concept(str_arg(head, "head")?)?, m.concept(str_arg(tail, "tail")?)?);
        let r = m.relation(str_arg(relation, "relation")?)?;
        let cache = m.cache()?;
        let rel: Vec<f64> = m.model.relation_vec(r).iter().map(|&x| x as f64).collect();
        let (hv, tv) = (cache.get(h), cache.get(t));
        let (Some(hv), Some(tv)) = (hv, tv) else {
            return Err(Failure::new(CcStatus::Internal, "concept missing from cache"));
        };
        *out = hv
            .iter()
            .zip(&rel)
            .zip(tv)
            .map(|((h, r), t)| (h + r - t).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(())
    })
}

/// Raw rank of the true `side` entity among all concepts, ties counted
/// against it.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_model_rank(
    model: *const CcModel,
    head: *const c_char,
    relation: *const c_char,
    tail: *const c_char,
    side: CcSide,
    out: *mut usize,
) -> CcStatus {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return Err(Failure::new(CcStatus::NullPointer, "`out` is null"));
        }
        let triplet = Triplet {
            head: m.concept(str_arg(head, "head")?)?,
            relation: cc_embed::kg::RelationIx(m.relation(str_arg(relation, "relation")?)? as u32),
            tail: m.concept(str_arg(tail, "tail")?)?,
        };
        let side = match side {
            CcSide::Head => Side::Head,
            CcSide::Tail => Side::Tail,
        };
        let rel: Vec<f64> = m.model.relation_vec(triplet.relation.index()).iter().map(|&x| x as f64).collect();
        let record = rank_entity(&triplet, side, m.cache()?, &rel, &Default::default())?;
        *out = record.raw_rank;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_a_status() {
        let prev = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        let s = guard(|| panic!("boom"));
        std::panic::set_hook(prev);
        assert_eq!(s, CcStatus::Panic);
        let msg = unsafe { CStr::from_ptr(cc_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(cc_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
