//! Entity prediction: rank the true head (or tail) of each test triplet
//! among every concept in the lexicon.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::index::SentenceIndex;
use crate::kg::{truncate_name, ConceptIx, Lexicon, RelationTable, Triplet};
use crate::model::{ConceptInput, Encoder, ModelKind};

/// One deterministic vector per concept, indexed by [`ConceptIx`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingCache {
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Self {
        EmbeddingCache { vectors }
    }

    pub fn get(&self, c: ConceptIx) -> Option<&[f64]> {
        self.vectors.get(c.index()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

/// The encoder input used at evaluation time: the truncated primary name in
/// its best retrieved sentence, or the bare name when nothing matches.
pub fn eval_input<'a>(
    kind: ModelKind,
    c: ConceptIx,
    lexicon: &'a Lexicon,
    index: &'a SentenceIndex,
    max_name_words: usize,
) -> ConceptInput<'a> {
    let name = truncate_name(&lexicon.concept(c).primary_name, max_name_words);
    match kind {
        ModelKind::TransE => ConceptInput::Entity(c),
        ModelKind::Dnn => ConceptInput::Name(name),
        ModelKind::CcLstm => match index.retrieve_contexts(name, 1).first() {
            Some(m) => {
                let (tokens, span) = index.context_of(m);
                ConceptInput::Mention { tokens, span }
            }
            None => ConceptInput::Name(name),
        },
    }
}

pub fn cache_concept_embeddings<T: Real, E: Encoder<T> + ?Sized>(
    model: &E,
    lexicon: &Lexicon,
    index: &SentenceIndex,
    max_name_words: usize,
) -> Result<EmbeddingCache> {
    let vectors = lexicon
        .indices()
        .map(|c| {
            let v = model.encode_vec(eval_input(model.kind(), c, lexicon, index, max_name_words))?;
            Ok(v.into_iter().map(Real::f64).collect())
        })
        .collect::<Result<_>>()?;
    Ok(EmbeddingCache { vectors })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankRecord {
    pub triplet: Triplet,
    pub side: Side,
    pub raw_rank: usize,
    pub filtered_rank: usize,
}

fn distance(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..h.len() {
        let d = h[i] + r[i] - t[i];
        s += d * d;
    }
    s.sqrt()
}

/// Ranks the true concept on `side` against every concept in `cache`.
/// Ties count against the true concept. The filtered rank ignores
/// candidates whose substituted triplet is in `known`.
pub fn rank_entity(
    triplet: &Triplet,
    side: Side,
    cache: &EmbeddingCache,
    relation: &[f64],
    known: &HashSet<Triplet>,
) -> Result<RankRecord> {
    let missing = |c: ConceptIx| Error::contract(format!("concept #{} missing from embedding cache", c.0));
    let h = cache.get(triplet.head).ok_or_else(|| missing(triplet.head))?;
    let t = cache.get(triplet.tail).ok_or_else(|| missing(triplet.tail))?;
    if h.len() != relation.len() || t.len() != relation.len() {
        return Err(Error::contract(format!(
            "embedding dim {} does not match relation dim {}",
            h.len(),
            relation.len()
        )));
    }
    let truth = match side {
        Side::Head => triplet.head,
        Side::Tail => triplet.tail,
    };
    let d_true = distance(h, relation, t);
    let (mut raw, mut filtered) = (1, 1);
    for (i, v) in cache.vectors.iter().enumerate() {
        let c = ConceptIx(i as u32);
        if c == truth {
            continue;
        }
        let (d, candidate) = match side {
            Side::Head => (distance(v, relation, t), Triplet { head: c, ..*triplet }),
            Side::Tail => (distance(h, relation, v), Triplet { tail: c, ..*triplet }),
        };
        if d <= d_true {
            raw += 1;
            if !known.contains(&candidate) {
                filtered += 1;
            }
        }
    }
    Ok(RankRecord {
        triplet: *triplet,
        side,
        raw_rank: raw,
        filtered_rank: filtered,
    })
}

/// Head- and tail-side records for every test triplet.
pub fn rank_all<T: Real, E: Encoder<T> + ?Sized>(
    model: &E,
    cache: &EmbeddingCache,
    test: &[Triplet],
    known: &HashSet<Triplet>,
) -> Result<Vec<RankRecord>> {
    let mut out = Vec::with_capacity(2 * test.len());
    for t in test {
        let r: Vec<f64> = model.relation_vec(t.relation.index()).iter().map(|x| x.f64()).collect();
        for side in [Side::Head, Side::Tail] {
            out.push(rank_entity(t, side, cache, &r, known)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mean_rank: f64,
    pub mean_log10_rank: f64,
    pub hits_at_10: f64,
    pub hits_at_1: f64,
}

impl MetricSet {
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::Validation("cannot aggregate zero rank records".into()));
        }
        let n = ranks.len() as f64;
        Ok(MetricSet {
            mean_rank: ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
            mean_log10_rank: ranks.iter().map(|&r| (r as f64).log10()).sum::<f64>() / n,
            hits_at_10: ranks.iter().filter(|&&r| r <= 10).count() as f64 / n,
            hits_at_1: ranks.iter().filter(|&&r| r <= 1).count() as f64 / n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub raw: MetricSet,
    pub filtered: MetricSet,
    pub records: usize,
}

pub fn aggregate(records: &[RankRecord]) -> Result<Metrics> {
    let raw: Vec<usize> = records.iter().map(|r| r.raw_rank).collect();
    let filtered: Vec<usize> = records.iter().map(|r| r.filtered_rank).collect();
    Ok(Metrics {
        raw: MetricSet::from_ranks(&raw)?,
        filtered: MetricSet::from_ranks(&filtered)?,
        records: records.len(),
    })
}

pub const CATEGORIES: &[&str] = &["LI", "NonLI", "Policy", "LongName", "UNK", "SIB", "Facts", "Other"];

pub fn parse_category(s: &str) -> Option<&'static str> {
    let canon = match s {
        "Non-LI" | "NonLI" | "non-li" | "nonli" => "NonLI",
        "Long name" | "Long-name" => "LongName",
        other => other,
    };
    CATEGORIES.iter().copied().find(|c| *c == canon)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub line: usize,
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub category: &'static str,
}

/// Reads `head TAB relation TAB tail TAB category` rows.
pub fn load_categories(path: &Path) -> Result<Vec<LabelRow>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_categories(BufReader::new(file), path)
}

pub fn read_categories<R: BufRead>(reader: R, path: &Path) -> Result<Vec<LabelRow>> {
    let mut rows = Vec::new();
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
        if f.len() != 4 {
            return Err(parse(format!("expected 4 tab-separated fields, got {}", f.len())));
        }
        let category = parse_category(f[3].trim())
            .ok_or_else(|| parse(format!("unknown category `{}` (expected one of {CATEGORIES:?})", f[3])))?;
        rows.push(LabelRow {
            line: i + 1,
            head: f[0].to_string(),
            relation: f[1].to_string(),
            tail: f[2].to_string(),
            category,
        });
    }
    Ok(rows)
}

/// Resolves label rows against the test set. Rows that name an unknown
/// concept or relation, or a triplet outside `test`, come back as warnings.
pub fn resolve_labels(
    rows: &[LabelRow],
    lexicon: &Lexicon,
    relations: &RelationTable,
    test: &[Triplet],
) -> (HashMap<Triplet, &'static str>, Vec<String>) {
    let test: HashSet<&Triplet> = test.iter().collect();
    let mut labels = HashMap::new();
    let mut warnings = Vec::new();
    for row in rows {
        let resolved = match (lexicon.get(&row.head), relations.get(&row.relation), lexicon.get(&row.tail)) {
            (Some(h), Some(r), Some(t)) => Some(Triplet::new(h, r, t)),
            _ => None,
        };
        match resolved {
            Some(t) if test.contains(&t) => {
                labels.insert(t, row.category);
            }
            _ => warnings.push(format!(
                "line {}: label for {} {} {} matches no test triplet, skipped",
                row.line, row.head, row.relation, row.tail
            )),
        }
    }
    (labels, warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    /// distinct test triplets in the category
    pub examples: usize,
    /// filtered Hits@10 over both sides of those triplets
    pub hits_at_10: f64,
}

/// Per-category filtered Hits@10 in [`CATEGORIES`] order, then `Total`
/// over every record. Categories without records are omitted.
pub fn breakdown(records: &[RankRecord], labels: &HashMap<Triplet, &'static str>) -> Vec<CategoryRow> {
    let row = |name: &str, rs: Vec<&RankRecord>| {
        let triplets: HashSet<Triplet> = rs.iter().map(|r| r.triplet).collect();
        CategoryRow {
            category: name.to_string(),
            examples: triplets.len(),
            hits_at_10: rs.iter().filter(|r| r.filtered_rank <= 10).count() as f64 / rs.len().max(1) as f64,
        }
    };
    let mut out = Vec::new();
    for &cat in CATEGORIES {
        let rs: Vec<&RankRecord> = records.iter().filter(|r| labels.get(&r.triplet) == Some(&cat)).collect();
        if !rs.is_empty() {
            out.push(row(cat, rs));
        }
    }
    out.push(row("Total", records.iter().collect()));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub test_triplets: usize,
    pub candidates: usize,
    pub metrics: Metrics,
    pub head: Metrics,
    pub tail: Metrics,
    pub categories: Vec<CategoryRow>,
}

impl EvalReport {
    pub fn new(
        model: &str,
        candidates: usize,
        records: &[RankRecord],
        labels: &HashMap<Triplet, &'static str>,
    ) -> Result<Self> {
        for r in records {
            if r.filtered_rank > r.raw_rank || r.filtered_rank == 0 {
                return Err(Error::contract(format!(
                    "rank invariant broken: filtered {} raw {}",
                    r.filtered_rank, r.raw_rank
                )));
            }
        }
        let side = |s: Side| -> Vec<RankRecord> { records.iter().copied().filter(|r| r.side == s).collect() };
        let test: HashSet<Triplet> = records.iter().map(|r| r.triplet).collect();
        Ok(EvalReport {
            model: model.to_string(),
            test_triplets: test.len(),
            candidates,
            metrics: aggregate(records)?,
            head: aggregate(&side(Side::Head))?,
            tail: aggregate(&side(Side::Tail))?,
            categories: breakdown(records, labels),
        })
    }
}

/// Full pipeline: cache embeddings, rank both sides of every test triplet,
/// aggregate.
pub fn evaluate<T: Real, E: Encoder<T> + ?Sized>(
    model: &E,
    lexicon: &Lexicon,
    index: &SentenceIndex,
    test: &[Triplet],
    known: &HashSet<Triplet>,
    labels: &HashMap<Triplet, &'static str>,
    max_name_words: usize,
) -> Result<(EvalReport, Vec<RankRecord>)> {
    let cache = cache_concept_embeddings(model, lexicon, index, max_name_words)?;
    let records = rank_all(model, &cache, test, known)?;
    let report = EvalReport::new(model.kind().name(), lexicon.len(), &records, labels)?;
    Ok((report, records))
}

/// Plain-text table with raw and filtered columns for each metric, one row
/// per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} | {:^17} | {:^17} | {:^17} | {:^17}",
        "Model", "Mean Rank", "Mean log10(rank)", "Hits@10 (%)", "Hits@1 (%)"
    );
    let _ = writeln!(
        s,
        "{:<10} | {:>8} {:>8} | {:>8} {:>8} | {:>8} {:>8} | {:>8} {:>8}",
        "", "Raw", "Filter", "Raw", "Filter", "Raw", "Filter", "Raw", "Filter"
    );
    let _ = writeln!(s, "{}", "-".repeat(87));
    for r in reports {
        let (raw, f) = (&r.metrics.raw, &r.metrics.filtered);
        let _ = writeln!(
            s,
            "{:<10} | {:>8.1} {:>8.1} | {:>8.2} {:>8.2} | {:>8.1} {:>8.1} | {:>8.1} {:>8.1}",
            r.model,
            raw.mean_rank,
            f.mean_rank,
            raw.mean_log10_rank,
            f.mean_log10_rank,
            100.0 * raw.hits_at_10,
            100.0 * f.hits_at_10,
            100.0 * raw.hits_at_1,
            100.0 * f.hits_at_1
        );
    }
    s
}

/// Category rows as `category  examples  Hits@10 (%)`.
pub fn render_categories(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>8} {:>12}", "Category", "Examples", "Hits@10 (%)");
    for row in &report.categories {
        let _ = writeln!(s, "{:<10} {:>8} {:>12.1}", row.category, row.examples, 100.0 * row.hits_at_10);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::RelationIx;

    fn cache_1d(points: &[f64]) -> EmbeddingCache {
        EmbeddingCache::from_vectors(points.iter().map(|&p| vec![p]).collect())
    }

    fn rec(raw: usize, filtered: usize) -> RankRecord {
        RankRecord {
            triplet: Triplet::new(ConceptIx(0), RelationIx(0), ConceptIx(1)),
            side: Side::Tail,
            raw_rank: raw,
            filtered_rank: filtered,
        }
    }

    #[test]
    fn filtered_rank_example() {
        // h + r = 0: distances true(1)=0.2, A(2)=0.1, B(3)=0.3, head itself 10
        let cache = cache_1d(&[10.0, 0.2, 0.1, 0.3]);
        let t = Triplet::new(ConceptIx(0), RelationIx(0), ConceptIx(1));
        let known: HashSet<Triplet> = [t, Triplet::new(ConceptIx(0), RelationIx(0), ConceptIx(2))].into();
        let r = rank_entity(&t, Side::Tail, &cache, &[-10.0], &known).unwrap();
        assert_eq!((r.raw_rank, r.filtered_rank), (2, 1));
    }

    #[test]
    fn constant_encoder_ranks_last() {
        let cache = cache_1d(&[0.5; 6]);
        let t = Triplet::new(ConceptIx(0), RelationIx(0), ConceptIx(3));
        let r = rank_entity(&t, Side::Head, &cache, &[0.0], &HashSet::new()).unwrap();
        assert_eq!(r.raw_rank, 6);
    }

    #[test]
    fn missing_concept_is_a_contract_violation() {
        let cache = cache_1d(&[0.0]);
        let t = Triplet::new(ConceptIx(0), RelationIx(0), ConceptIx(4));
        assert!(matches!(
            rank_entity(&t, Side::Tail, &cache, &[0.0], &HashSet::new()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn aggregate_examples() {
        let m = MetricSet::from_ranks(&[10, 100, 1000]).unwrap();
        assert_eq!(m.mean_log10_rank, 2.0);
        let m = MetricSet::from_ranks(&[1, 5, 11, 50]).unwrap();
        assert_eq!((m.hits_at_10, m.hits_at_1), (0.5, 0.25));
        let m = MetricSet::from_ranks(&[1, 1, 1]).unwrap();
        assert_eq!((m.mean_rank, m.mean_log10_rank, m.hits_at_10, m.hits_at_1), (1.0, 0.0, 1.0, 1.0));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn breakdown_examples() {
        let a = Triplet::new(ConceptIx(0), RelationIx(0), ConceptIx(1));
        let b = Triplet::new(ConceptIx(2), RelationIx(0), ConceptIx(3));
        let records = [
            RankRecord { triplet: a, ..rec(3, 3) },
            RankRecord { triplet: b, ..rec(50, 50) },
        ];
        let labels: HashMap<Triplet, &'static str> = [(a, "LI"), (b, "LI")].into();
        let rows = breakdown(&records, &labels);
        assert_eq!(rows[0].category, "LI");
        assert_eq!(rows[0].hits_at_10, 0.5);
        assert_eq!(rows[0].examples, 2);
        let rows = breakdown(&records, &HashMap::new());
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].category, "Total");
    }

    #[test]
    fn category_file_parsing() {
        let data = "C1\tis_a\tC2\tLI\nC3\tbrand_of\tC4\tNon-LI\n";
        let rows = read_categories(data.as_bytes(), Path::new("cats.tsv")).unwrap();
        assert_eq!(rows[1].category, "NonLI");
        let bad = "C1\tis_a\tC2\tMaybe\n";
        assert!(matches!(
            read_categories(bad.as_bytes(), Path::new("cats.tsv")),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
