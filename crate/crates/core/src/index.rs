//! Stemmed positional inverted index over a sentence corpus, with phrase
//! retrieval ranked by BM25.
//!
//! Binary layout of a saved index is documented in `docs/FORMATS.md`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;

use crate::artifact::write_atomic;
use crate::error::{Error, Result};
use crate::text::{stem, tokenize};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_TOP_K: usize = 10;

const MAGIC: &str = "CCIDX";
const VERSION: u32 = 1;

/// Half-open token interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub text: String,
    pub tokens: Vec<String>,
    pub stems: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextMatch {
    pub sentence_id: u32,
    pub span: Span,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Posting {
    pub sentence: u32,
    pub position: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SentenceIndex {
    sentences: Vec<Sentence>,
    postings: BTreeMap<String, Vec<Posting>>,
    /// number of distinct sentences containing each stem
    doc_freq: BTreeMap<String, u32>,
    avg_len: f64,
}

impl SentenceIndex {
    /// Builds an index from sentences; blank lines are skipped.
    pub fn from_sentences<I, S>(sentences: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut index = SentenceIndex::default();
        for text in sentences {
            let text = text.as_ref();
            let tokens = tokenize(text);
            if tokens.is_empty() {
                continue;
            }
            let stems = tokens.iter().map(|t| stem(t)).collect();
            index.sentences.push(Sentence {
                text: text.trim_end_matches(['\r', '\n']).to_string(),
                tokens,
                stems,
            });
        }
        for (sid, s) in index.sentences.iter().enumerate() {
            for (pos, st) in s.stems.iter().enumerate() {
                index.postings.entry(st.clone()).or_default().push(Posting {
                    sentence: sid as u32,
                    position: pos as u32,
                });
            }
        }
        index.compute_stats();
        index
    }

    pub fn build(corpus_path: &Path) -> Result<Self> {
        let file = File::open(corpus_path)
            .map_err(|e| Error::io(format!("opening corpus {}", corpus_path.display()), e))?;
        let mut lines = Vec::new();
        for line in BufReader::new(file).lines() {
            lines.push(line.map_err(|e| Error::io(format!("reading {}", corpus_path.display()), e))?);
        }
        Ok(Self::from_sentences(lines))
    }

    fn compute_stats(&mut self) {
        self.doc_freq = self
            .postings
            .iter()
            .map(|(st, ps)| {
                let mut df = 0u32;
                let mut last = None;
                for p in ps {
                    if last != Some(p.sentence) {
                        df += 1;
                        last = Some(p.sentence);
                    }
                }
                (st.clone(), df)
            })
            .collect();
        let total: usize = self.sentences.iter().map(|s| s.tokens.len()).sum();
        self.avg_len = if self.sentences.is_empty() {
            0.0
        } else {
            total as f64 / self.sentences.len() as f64
        };
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentence(&self, id: u32) -> &Sentence {
        &self.sentences[id as usize]
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn postings(&self, stem: &str) -> &[Posting] {
        self.postings.get(stem).map_or(&[], Vec::as_slice)
    }

    pub fn doc_freq(&self, stem: &str) -> u32 {
        self.doc_freq.get(stem).copied().unwrap_or(0)
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    /// BM25 of sentence `sid` against `query_stems`, summing over query
    /// positions (a repeated query stem counts once per occurrence).
    pub fn bm25(&self, sid: u32, query_stems: &[String]) -> f64 {
        let s = &self.sentences[sid as usize];
        let n = self.sentences.len() as f64;
        let len_norm = 1.0 - BM25_B + BM25_B * s.stems.len() as f64 / self.avg_len;
        query_stems
            .iter()
            .map(|q| {
                let tf = s.stems.iter().filter(|st| *st == q).count() as f64;
                if tf == 0.0 {
                    return 0.0;
                }
                let df = self.doc_freq(q) as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * len_norm)
            })
            .sum()
    }

    /// Sentences containing the stemmed name as a contiguous phrase, best
    /// first, at most `k`.
    pub fn retrieve_contexts(&self, name_tokens: &[String], k: usize) -> Vec<ContextMatch> {
        if name_tokens.is_empty() || k == 0 {
            return Vec::new();
        }
        let q: Vec<String> = name_tokens.iter().map(|t| stem(&t.to_lowercase())).collect();
        let mut matches = Vec::new();
        let mut last_sid = None;
        for p in self.postings(&q[0]) {
            if last_sid == Some(p.sentence) {
                continue;
            }
            let s = &self.sentences[p.sentence as usize];
            let start = p.position as usize;
            let end = start + q.len();
            if end <= s.stems.len() && s.stems[start..end] == q[..] {
                last_sid = Some(p.sentence);
                matches.push(ContextMatch {
                    sentence_id: p.sentence,
                    span: Span::new(start, end),
                    score: self.bm25(p.sentence, &q),
                });
            }
        }
        matches.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.sentence_id.cmp(&b.sentence_id))
        });
        matches.truncate(k);
        matches
    }

    /// Uniform choice among `matches`; the bare name spanning itself when
    /// there are none. Draws from `rng` only when there is a choice to make.
    pub fn sample_context<'a, R: Rng + ?Sized>(
        &'a self,
        matches: &[ContextMatch],
        fallback: &'a [String],
        rng: &mut R,
    ) -> (&'a [String], Span) {
        match matches.len() {
            0 => (fallback, Span::new(0, fallback.len())),
            1 => self.context_of(&matches[0]),
            n => self.context_of(&matches[rng.gen_range(0..n)]),
        }
    }

    pub fn context_of(&self, m: &ContextMatch) -> (&[String], Span) {
        (&self.sentences[m.sentence_id as usize].tokens, m.span)
    }

    /// Serializes to `path` atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .map_err(|e| Error::io(format!("serializing {}", path.display()), e))?;
        write_atomic(path, &buf)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let n_postings: usize = self.postings.values().map(Vec::len).sum();
        writeln!(
            w,
            "{MAGIC} version={VERSION} sentences={} stems={} postings={n_postings}",
            self.sentences.len(),
            self.postings.len()
        )?;
        for s in &self.sentences {
            write_str(w, &s.text)?;
            w.write_all(&(s.tokens.len() as u32).to_le_bytes())?;
            for t in &s.tokens {
                write_str(w, t)?;
            }
        }
        for (st, ps) in &self.postings {
            write_str(w, st)?;
            w.write_all(&(ps.len() as u32).to_le_bytes())?;
            for p in ps {
                w.write_all(&p.sentence.to_le_bytes())?;
                w.write_all(&p.position.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Self::read_from(&mut BufReader::new(file), path)
    }

    pub fn read_from<R: BufRead>(r: &mut R, path: &Path) -> Result<Self> {
        let fmt = |msg: String| Error::Format {
            path: path.to_path_buf(),
            msg,
        };
        let mut header = String::new();
        r.read_line(&mut header)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(MAGIC) {
            return Err(fmt("not an index file (bad magic)".into()));
        }
        let mut counts = BTreeMap::new();
        for f in fields {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| fmt(format!("bad header field `{f}`")))?;
            let v: usize = v.parse().map_err(|_| fmt(format!("bad header value `{f}`")))?;
            counts.insert(k.to_string(), v);
        }
        let get = |k: &str| counts.get(k).copied().ok_or_else(|| fmt(format!("header lacks `{k}`")));
        if get("version")? != VERSION as usize {
            return Err(fmt(format!("unsupported version {}", get("version")?)));
        }
        let (n_sent, n_stems, n_post) = (get("sentences")?, get("stems")?, get("postings")?);

        let io = |e: std::io::Error| fmt(format!("truncated or corrupt body: {e}"));
        let mut index = SentenceIndex::default();
        for _ in 0..n_sent {
            let text = read_str(r).map_err(io)?;
            let n = read_u32(r).map_err(io)? as usize;
            let tokens = (0..n).map(|_| read_str(r)).collect::<std::io::Result<Vec<_>>>().map_err(io)?;
            let stems = tokens.iter().map(|t| stem(t)).collect();
            index.sentences.push(Sentence { text, tokens, stems });
        }
        let mut seen = 0usize;
        for _ in 0..n_stems {
            let st = read_str(r).map_err(io)?;
            let n = read_u32(r).map_err(io)? as usize;
            let mut ps = Vec::with_capacity(n);
            for _ in 0..n {
                let p = Posting {
                    sentence: read_u32(r).map_err(io)?,
                    position: read_u32(r).map_err(io)?,
                };
                let ok = index
                    .sentences
                    .get(p.sentence as usize)
                    .and_then(|s| s.stems.get(p.position as usize))
                    .is_some_and(|s| *s == st);
                if !ok {
                    return Err(fmt(format!(
                        "posting ({}, {}) for `{st}` does not match its sentence",
                        p.sentence, p.position
                    )));
                }
                ps.push(p);
            }
            seen += n;
            index.postings.insert(st, ps);
        }
        if seen != n_post {
            return Err(fmt(format!("header says {n_post} postings, body has {seen}")));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io)? != 0 {
            return Err(fmt("trailing bytes after postings".into()));
        }
        index.compute_stats();
        Ok(index)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> std::io::Result<String> {
    let n = read_u32(r)? as usize;
    if n > 1 << 24 {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "string too long"));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn build_examples() {
        let idx = SentenceIndex::from_sentences(["Cortisone prevents arthritis", "second line"]);
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.postings("cortison"), &[Posting { sentence: 0, position: 0 }]);
        let empty = SentenceIndex::from_sentences(Vec::<String>::new());
        assert!(empty.is_empty());
        assert!(empty.retrieve_contexts(&toks("anything"), 10).is_empty());
    }

    #[test]
    fn phrase_must_be_adjacent_and_in_order() {
        let idx = SentenceIndex::from_sentences([
            "patients with acute myeloid leukemia were treated",
            "myeloid cells in leukemia patients",
            "leukemia myeloid",
        ]);
        let m = idx.retrieve_contexts(&toks("myeloid leukemia"), 10);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].sentence_id, 0);
        assert_eq!(m[0].span, Span::new(3, 5));
    }

    #[test]
    fn inflected_mentions_match_by_stem_and_leftmost_span_wins() {
        let idx = SentenceIndex::from_sentences(["the lungs and then the lung again"]);
        let m = idx.retrieve_contexts(&toks("lung"), 10);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].span, Span::new(1, 2));
    }

    #[test]
    fn sample_context_fallback_and_single() {
        let idx = SentenceIndex::from_sentences(["cortisone helps"]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let name = toks("cortisone");
        let (ctx, span) = idx.sample_context(&[], &name, &mut rng);
        assert_eq!(ctx, &name[..]);
        assert_eq!(span, Span::new(0, 1));
        let m = idx.retrieve_contexts(&name, 10);
        let (ctx, span) = idx.sample_context(&m, &name, &mut rng);
        assert_eq!(ctx, &toks("cortisone helps")[..]);
        assert_eq!(span, Span::new(0, 1));
    }

    #[test]
    fn sample_context_is_uniform() {
        let sentences: Vec<String> = (0..10).map(|i| format!("aspirin {}", "x ".repeat(i))).collect();
        let idx = SentenceIndex::from_sentences(&sentences);
        let m = idx.retrieve_contexts(&toks("aspirin"), 10);
        assert_eq!(m.len(), 10);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 10];
        let name = toks("aspirin");
        for _ in 0..10_000 {
            let (ctx, _) = idx.sample_context(&m, &name, &mut rng);
            counts[ctx.len() - 1] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.1).abs() <= 0.01, "{counts:?}");
        }
    }

    #[test]
    fn corrupt_index_files_are_rejected() {
        let idx = SentenceIndex::from_sentences(["a b c", "b c d"]);
        let mut bytes = Vec::new();
        idx.write_to(&mut bytes).unwrap();
        let p = Path::new("mem");
        assert_eq!(SentenceIndex::read_from(&mut &bytes[..], p).unwrap(), idx);
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            SentenceIndex::read_from(&mut &truncated[..], p),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(SentenceIndex::read_from(&mut &bad[..], p), Err(Error::Format { .. })));
    }
}
