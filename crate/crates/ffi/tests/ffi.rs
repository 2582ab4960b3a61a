use std::collections::{BTreeSet, HashSet};
use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use cc_embed::checkpoint::save_model;
use cc_embed::eval::cache_concept_embeddings;
use cc_embed::index::SentenceIndex;
use cc_embed::kg::MAX_NAME_WORDS;
use cc_embed::model::{AnyModel, CcLstm, Encoder, ModelConfig, ModelKind, TransE, Vocab};
use cc_embed::synth::{generate, SynthConfig, SynthKg};
use cc_embed::training::{train, TrainConfig, TrainData};
use cc_embed_ffi::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    kg: SynthKg,
    index: SentenceIndex,
}

fn fixture(kind: ModelKind) -> (Fixture, AnyModel<f32>) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let kg = generate(&SynthConfig::new(60, 10, 4)).unwrap();
    kg.write(&root).unwrap();
    let index = SentenceIndex::from_sentences(&kg.corpus);
    index.save(&root.join("corpus.idx")).unwrap();
    let config = ModelConfig { dim: 8, embed_dim: 8, ..ModelConfig::new(kind) };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n_rel = kg.relations.len();
    let vocab = Vocab::from_lexicon_and_corpus(&kg.lexicon, index.sentences().iter().map(|s| s.tokens.as_slice()));
    let mut model = match kind {
        ModelKind::TransE => {
            let seen: BTreeSet<_> = kg.train.iter().flat_map(|t| [t.head, t.tail]).collect();
            AnyModel::TransE(TransE::new(config, kg.lexicon.len(), &seen, n_rel, &mut rng).unwrap())
        }
        _ => AnyModel::CcLstm(CcLstm::new(config, vocab, n_rel, &mut rng).unwrap()),
    };
    let tc = TrainConfig { epochs: 1, learning_rate: 0.01, ..TrainConfig::default() };
    let data = TrainData { lexicon: &kg.lexicon, index: &index };
    train(&mut model, &kg.train, data, &tc, &mut |_, _| Ok(())).unwrap();
    save_model(&root.join("model.ckpt"), &model, &kg.relations, &kg.lexicon, None).unwrap();
    (Fixture { _dir: dir, root, kg, index }, model)
}

fn c(s: impl AsRef<str>) -> CString {
    CString::new(s.as_ref()).unwrap()
}

fn path(p: &Path) -> CString {
    c(p.to_str().unwrap())
}

fn load(f: &Fixture, with_index: bool) -> *mut CcModel {
    let idx = path(&f.root.join("corpus.idx"));
    let mut m = ptr::null_mut();
    let status = unsafe {
        cc_model_load(
            path(&f.root.join("model.ckpt")).as_ptr(),
            path(&f.root.join("concepts.tsv")).as_ptr(),
            if with_index { idx.as_ptr() } else { ptr::null() },
            &mut m,
        )
    };
    assert_eq!(status, CcStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = cc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn concept_vectors_scores_and_ranks_match_the_library() {
    let (f, model) = fixture(ModelKind::CcLstm);
    let m = load(&f, true);
    assert_eq!(unsafe { cc_model_dim(m) }, 8);
    assert_eq!(unsafe { cc_model_num_concepts(m) }, f.kg.lexicon.len());
    let cache = cache_concept_embeddings(&model, &f.kg.lexicon, &f.index, MAX_NAME_WORDS).unwrap();
    let mut buf = [0f32; 10];
    for (i, concept) in f.kg.lexicon.concepts().iter().enumerate().step_by(7) {
        let status = unsafe { cc_model_encode_concept(m, c(&concept.id).as_ptr(), buf.as_mut_ptr(), buf.len()) };
        assert_eq!(status, CcStatus::Ok);
        let want: Vec<f32> = cache.vectors()[i].iter().map(|&x| x as f32).collect();
        assert_eq!(&buf[..8], want.as_slice());
    }

    let t = f.kg.test[0];
    let ids = |t: &cc_embed::kg::Triplet| {
        (
            c(&f.kg.lexicon.concept(t.head).id),
            c(f.kg.relations.label(t.relation)),
            c(&f.kg.lexicon.concept(t.tail).id),
        )
    };
    let (h, r, tl) = ids(&t);
    let mut score = 0.0;
    assert_eq!(unsafe { cc_model_score(m, h.as_ptr(), r.as_ptr(), tl.as_ptr(), &mut score) }, CcStatus::Ok);
    let rel = model.relation_vec(t.relation.index());
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(rel).zip(b).map(|((a, r), b)| (a + *r as f64 - b).powi(2)).sum::<f64>().sqrt()
    };
    let vs = cache.vectors();
    let truth = dist(&vs[t.head.index()], &vs[t.tail.index()]);
    assert!((score - truth).abs() < 1e-9);

    let mut rank = 0usize;
    assert_eq!(
        unsafe { cc_model_rank(m, h.as_ptr(), r.as_ptr(), tl.as_ptr(), CcSide::Tail, &mut rank) },
        CcStatus::Ok
    );
    let beaten = (0..vs.len())
        .filter(|&k| k != t.tail.index() && dist(&vs[t.head.index()], &vs[k]) <= truth)
        .count();
    assert_eq!(rank, 1 + beaten);

    let mut text = [0f32; 8];
    let name = f.kg.lexicon.concept(t.head).primary_name.join(" ");
    assert_eq!(unsafe { cc_model_encode_text(m, c(&name).as_ptr(), text.as_mut_ptr(), 8) }, CcStatus::Ok);
    assert!(text.iter().all(|x| x.is_finite()));
    unsafe { cc_model_free(m) };
}

#[test]
fn failures_set_status_and_message() {
    let (f, _) = fixture(ModelKind::TransE);
    let m = load(&f, false);
    let mut buf = [0f32; 8];
    let known: HashSet<&str> = f.kg.lexicon.concepts().iter().map(|c| c.id.as_str()).collect();
    assert!(!known.contains("NOPE"));

    let s = unsafe { cc_model_encode_concept(m, c("NOPE").as_ptr(), buf.as_mut_ptr(), 8) };
    assert_eq!(s, CcStatus::NotFound);
    assert!(last_error().contains("NOPE"));

    let id = c(&f.kg.lexicon.concepts()[0].id);
    let s = unsafe { cc_model_encode_concept(m, id.as_ptr(), buf.as_mut_ptr(), 7) };
    assert_eq!(s, CcStatus::BufferTooSmall);
    let s = unsafe { cc_model_encode_concept(m, id.as_ptr(), ptr::null_mut(), 8) };
    assert_eq!(s, CcStatus::NullPointer);
    let s = unsafe { cc_model_encode_concept(ptr::null(), id.as_ptr(), buf.as_mut_ptr(), 8) };
    assert_eq!(s, CcStatus::NullPointer);
    let s = unsafe { cc_model_encode_text(m, c("heart").as_ptr(), buf.as_mut_ptr(), 8) };
    assert_eq!(s, CcStatus::Unsupported);

    let bad = [0xffu8, 0xfe, 0];
    let s = unsafe { cc_model_encode_concept(m, bad.as_ptr().cast(), buf.as_mut_ptr(), 8) };
    assert_eq!(s, CcStatus::InvalidUtf8);

    let mut out = 0.0;
    let s = unsafe { cc_model_score(m, id.as_ptr(), c("no_such_relation").as_ptr(), id.as_ptr(), &mut out) };
    assert_eq!(s, CcStatus::NotFound);
    assert!(last_error().contains("no_such_relation"));
    unsafe { cc_model_free(m) };
    unsafe { cc_model_free(ptr::null_mut()) };
    assert_eq!(unsafe { cc_model_dim(ptr::null()) }, 0);

    let mut h = ptr::null_mut();
    let concepts = path(&f.root.join("concepts.tsv"));
    let s = unsafe { cc_model_load(c("/nonexistent/model.ckpt").as_ptr(), concepts.as_ptr(), ptr::null(), &mut h) };
    assert_eq!(s, CcStatus::Io);
    assert!(h.is_null());
    std::fs::write(f.root.join("junk.ckpt"), b"not a checkpoint").unwrap();
    let junk = path(&f.root.join("junk.ckpt"));
    let s = unsafe { cc_model_load(junk.as_ptr(), concepts.as_ptr(), ptr::null(), &mut h) };
    assert_eq!(s, CcStatus::Data);
    assert!(h.is_null());
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "cc_embed.h"

int main(int argc, char **argv) {
    CcModel *m = NULL;
    if (cc_model_load(argv[1], argv[2], argv[3], &m) != CC_STATUS_OK) {
        fprintf(stderr, "%s\n", cc_last_error_message());
        return 1;
    }
    float v[8];
    if (cc_model_encode_concept(m, argv[4], v, 8) != CC_STATUS_OK) return 2;
    if (cc_model_encode_concept(m, "NOPE", v, 8) != CC_STATUS_NOT_FOUND) return 3;
    if (strstr(cc_last_error_message(), "NOPE") == NULL) return 4;
    printf("%zu %s\n", cc_model_dim(m), cc_version());
    cc_model_free(m);
    return 0;
}
"#;

#[test]
fn c_program_links_against_the_static_library() {
    let (f, _) = fixture(ModelKind::CcLstm);
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let lib_dir = deps.parent().unwrap();
    assert!(lib_dir.join("libcc_embed_ffi.a").exists(), "static library missing in {}", lib_dir.display());
    let src = f.root.join("main.c");
    let exe = f.root.join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(lib_dir.join("libcc_embed_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .expect("running cc");
    assert!(status.success());
    let out = Command::new(&exe)
        .arg(f.root.join("model.ckpt"))
        .arg(f.root.join("concepts.tsv"))
        .arg(f.root.join("corpus.idx"))
        .arg(&f.kg.lexicon.concepts()[0].id)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), format!("8 {}", env!("CARGO_PKG_VERSION")));
}
