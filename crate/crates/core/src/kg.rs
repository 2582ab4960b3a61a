//! Knowledge-graph data: concepts with their names, relation labels, and
//! triplet partitions.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::text::{is_latin, tokenize};

/// Longest name (in tokens) fed to the encoders.
pub const MAX_NAME_WORDS: usize = 10;

/// Dense index of a concept inside a [`Lexicon`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConceptIx(pub u32);

impl ConceptIx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Dense index of a relation; doubles as its row in the relation embedding
/// table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationIx(pub u32);

impl RelationIx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Concept {
    pub id: String,
    pub primary_name: Vec<String>,
    pub variants: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Drop every concept that has a name with non-Latin letters.
    pub latin_only: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    concepts: Vec<Concept>,
    by_id: HashMap<String, ConceptIx>,
    dropped: HashSet<String>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a concept. Ids must be unique and the primary name non-empty.
    pub fn push(&mut self, concept: Concept) -> Result<ConceptIx> {
        if concept.primary_name.is_empty() {
            return Err(Error::Validation(format!(
                "concept `{}` has an empty primary name",
                concept.id
            )));
        }
        if self.by_id.contains_key(&concept.id) {
            return Err(Error::Validation(format!(
                "duplicate concept id `{}`",
                concept.id
            )));
        }
        let ix = ConceptIx(self.concepts.len() as u32);
        self.by_id.insert(concept.id.clone(), ix);
        self.concepts.push(concept);
        Ok(ix)
    }

    pub fn load(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_reader(BufReader::new(file), path, opts)
    }

    /// Parses `concept_id TAB name TAB 0|1` rows. The first preferred row of
    /// a concept becomes its primary name; every other row is a variant.
    pub fn from_reader<R: BufRead>(reader: R, path: &Path, opts: LoadOptions) -> Result<Self> {
        struct Pending {
            primary: Option<Vec<String>>,
            variants: Vec<Vec<String>>,
            latin: bool,
        }
        let mut order: Vec<String> = Vec::new();
        let mut pending: HashMap<String, Pending> = HashMap::new();

        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let parse_err = |msg: &str| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: msg.to_string(),
            };
            if fields.len() != 3 {
                return Err(parse_err("expected 3 tab-separated fields"));
            }
            let (id, name, flag) = (fields[0], fields[1], fields[2]);
            if id.is_empty() {
                return Err(parse_err("empty concept id"));
            }
            let preferred = match flag.trim() {
                "1" => true,
                "0" => false,
                _ => return Err(parse_err("preferred flag must be 0 or 1")),
            };
            let entry = pending.entry(id.to_string()).or_insert_with(|| {
                order.push(id.to_string());
                Pending {
                    primary: None,
                    variants: Vec::new(),
                    latin: true,
                }
            });
            entry.latin &= is_latin(name);
            let tokens = tokenize(name);
            if preferred && entry.primary.is_none() {
                if tokens.is_empty() {
                    return Err(parse_err("preferred name has no tokens"));
                }
                entry.primary = Some(tokens);
            } else if !tokens.is_empty() {
                entry.variants.push(tokens);
            }
        }

        let mut lexicon = Lexicon::new();
        for id in order {
            let p = pending.remove(&id).expect("every ordered id is pending");
            if opts.latin_only && !p.latin {
                lexicon.dropped.insert(id);
                continue;
            }
            let primary_name = p.primary.ok_or_else(|| {
                Error::Validation(format!("concept `{id}` has no preferred name"))
            })?;
            lexicon.push(Concept {
                id,
                primary_name,
                variants: p.variants,
            })?;
        }
        Ok(lexicon)
    }

    /// Writes the lexicon back as concepts.tsv rows; loading the output
    /// yields an identical lexicon.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for c in &self.concepts {
            writeln!(w, "{}\t{}\t1", c.id, c.primary_name.join(" "))?;
            for v in &c.variants {
                writeln!(w, "{}\t{}\t0", c.id, v.join(" "))?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<ConceptIx> {
        self.by_id.get(id).copied()
    }

    pub fn resolve(&self, id: &str) -> Result<ConceptIx> {
        self.get(id).ok_or_else(|| Error::UnknownConcept(id.to_string()))
    }

    /// Whether `id` was present in the input but filtered out at load time.
    pub fn was_dropped(&self, id: &str) -> bool {
        self.dropped.contains(id)
    }

    pub fn concept(&self, ix: ConceptIx) -> &Concept {
        &self.concepts[ix.index()]
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn indices(&self) -> impl Iterator<Item = ConceptIx> {
        (0..self.concepts.len() as u32).map(ConceptIx)
    }

    /// Picks the name used for one training encounter: the primary name, or
    /// with probability `alpha` a uniformly chosen variant. The result is
    /// truncated to `max_words`.
    pub fn sample_surface_form<R: Rng + ?Sized>(
        &self,
        ix: ConceptIx,
        alpha: f64,
        max_words: usize,
        rng: &mut R,
    ) -> Result<&[String]> {
        let c = self
            .concepts
            .get(ix.index())
            .ok_or_else(|| Error::UnknownConcept(format!("#{}", ix.0)))?;
        let name = if c.variants.is_empty() || rng.gen::<f64>() >= alpha {
            &c.primary_name
        } else {
            &c.variants[rng.gen_range(0..c.variants.len())]
        };
        Ok(truncate_name(name, max_words))
    }
}

pub fn truncate_name(tokens: &[String], max_words: usize) -> &[String] {
    &tokens[..tokens.len().min(max_words)]
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationTable {
    labels: Vec<String>,
    by_label: HashMap<String, RelationIx>,
}

impl RelationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut t = Self::new();
        for l in labels {
            t.intern(&l.into());
        }
        t
    }

    pub fn intern(&mut self, label: &str) -> RelationIx {
        if let Some(&ix) = self.by_label.get(label) {
            return ix;
        }
        let ix = RelationIx(self.labels.len() as u32);
        self.labels.push(label.to_string());
        self.by_label.insert(label.to_string(), ix);
        ix
    }

    pub fn get(&self, label: &str) -> Option<RelationIx> {
        self.by_label.get(label).copied()
    }

    pub fn resolve(&self, label: &str) -> Result<RelationIx> {
        self.get(label)
            .ok_or_else(|| Error::UnknownRelation(label.to_string()))
    }

    pub fn label(&self, ix: RelationIx) -> &str {
        &self.labels[ix.index()]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub head: ConceptIx,
    pub relation: RelationIx,
    pub tail: ConceptIx,
}

impl Triplet {
    pub fn new(head: ConceptIx, relation: RelationIx, tail: ConceptIx) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    pub fn display<'a>(&self, lex: &'a Lexicon, rels: &'a RelationTable) -> TripletDisplay<'a> {
        TripletDisplay {
            t: *self,
            lex,
            rels,
        }
    }
}

pub struct TripletDisplay<'a> {
    t: Triplet,
    lex: &'a Lexicon,
    rels: &'a RelationTable,
}

impl fmt::Display for TripletDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}",
            self.lex.concept(self.t.head).id,
            self.rels.label(self.t.relation),
            self.lex.concept(self.t.tail).id
        )
    }
}

pub fn load_triplets(
    path: impl AsRef<Path>,
    lexicon: &Lexicon,
    relations: &mut RelationTable,
) -> Result<Vec<Triplet>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_triplets(BufReader::new(file), path, lexicon, relations)
}

/// Parses `head TAB relation TAB tail` rows. Relation labels are interned on
/// first sight; unknown concept ids are collected and reported together.
/// Rows touching a concept that the lexicon filtered out are skipped.
pub fn read_triplets<R: BufRead>(
    reader: R,
    path: &Path,
    lexicon: &Lexicon,
    relations: &mut RelationTable,
) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    let mut unresolved = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: "expected head TAB relation TAB tail".into(),
            });
        }
        if lexicon.was_dropped(fields[0]) || lexicon.was_dropped(fields[2]) {
            continue;
        }
        match (lexicon.get(fields[0]), lexicon.get(fields[2])) {
            (Some(h), Some(t)) => out.push(Triplet::new(h, relations.intern(fields[1]), t)),
            (h, _) => {
                let bad = if h.is_none() { fields[0] } else { fields[2] };
                unresolved.push(format!("line {lineno}: unknown concept `{bad}`"));
            }
        }
    }
    if !unresolved.is_empty() {
        return Err(Error::Validation(format!(
            "{}: unresolved ids\n  {}",
            path.display(),
            unresolved.join("\n  ")
        )));
    }
    Ok(out)
}

pub fn write_triplets<W: Write>(
    mut w: W,
    triplets: &[Triplet],
    lexicon: &Lexicon,
    relations: &RelationTable,
) -> std::io::Result<()> {
    for t in triplets {
        writeln!(w, "{}", t.display(lexicon, relations))?;
    }
    Ok(())
}

/// Relation → inverse relation. Loading makes the map symmetric: a row
/// `broader TAB narrower` also defines `narrower → broader` unless the file
/// says otherwise.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InverseMap(HashMap<RelationIx, RelationIx>);

impl InverseMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, rel: RelationIx, inverse: RelationIx) {
        self.0.insert(rel, inverse);
        self.0.entry(inverse).or_insert(rel);
    }

    pub fn get(&self, rel: RelationIx) -> Option<RelationIx> {
        self.0.get(&rel).copied()
    }

    pub fn load(path: impl AsRef<Path>, relations: &mut RelationTable) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut explicit = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "expected relation TAB inverse_relation".into(),
                });
            }
            explicit.push((relations.intern(fields[0]), relations.intern(fields[1])));
        }
        let mut map = InverseMap::new();
        for &(r, inv) in &explicit {
            map.0.insert(r, inv);
        }
        for &(r, inv) in &explicit {
            map.0.entry(inv).or_insert(r);
        }
        Ok(map)
    }

    /// The triplet stating the inverse fact: `(t, inverse[r], h)`, or the
    /// plain reversal `(t, r, h)` when `r` has no mapped inverse.
    pub fn inverse_of(&self, t: &Triplet) -> Triplet {
        let rel = self.get(t.relation).unwrap_or(t.relation);
        Triplet::new(t.tail, rel, t.head)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TripletSet {
    pub train: Vec<Triplet>,
    pub test: Vec<Triplet>,
    known: HashSet<Triplet>,
}

impl TripletSet {
    /// Assembles a split from explicit partitions. Test triplets and their
    /// inverses are removed from `train`; removed triplets stay known.
    pub fn from_parts(train: Vec<Triplet>, test: Vec<Triplet>, inverse: Option<&InverseMap>) -> Self {
        let empty = InverseMap::new();
        let inverse = inverse.unwrap_or(&empty);
        let mut known: HashSet<Triplet> = train.iter().chain(test.iter()).copied().collect();
        let mut test_dedup = Vec::with_capacity(test.len());
        let mut seen = HashSet::new();
        for t in test {
            if seen.insert(t) {
                test_dedup.push(t);
            }
        }
        let mut blocked: HashSet<Triplet> = seen.clone();
        for t in &test_dedup {
            blocked.insert(inverse.inverse_of(t));
        }
        let mut train_seen = HashSet::new();
        let train: Vec<Triplet> = train
            .into_iter()
            .filter(|t| !blocked.contains(t) && train_seen.insert(*t))
            .collect();
        known.extend(train.iter().copied());
        TripletSet {
            train,
            test: test_dedup,
            known,
        }
    }

    /// Membership over every fact seen in either partition, including
    /// triplets removed from train as inverses of test facts.
    pub fn is_known(&self, t: &Triplet) -> bool {
        self.known.contains(t)
    }

    pub fn known(&self) -> &HashSet<Triplet> {
        &self.known
    }
}

/// Random train/test split, deterministic under `seed`. Duplicate input
/// triplets are collapsed first.
pub fn split_train_test(
    triplets: &[Triplet],
    test_fraction: f64,
    inverse: Option<&InverseMap>,
    seed: u64,
) -> Result<TripletSet> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut seen = HashSet::new();
    let unique: Vec<Triplet> = triplets.iter().copied().filter(|t| seen.insert(*t)).collect();
    let mut order: Vec<usize> = (0..unique.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((unique.len() as f64) * test_fraction).round() as usize;
    let mut test_ix = order[..n_test].to_vec();
    test_ix.sort_unstable();
    let is_test: HashSet<usize> = test_ix.iter().copied().collect();
    let test = test_ix.iter().map(|&i| unique[i]).collect();
    let train = (0..unique.len())
        .filter(|i| !is_test.contains(i))
        .map(|i| unique[i])
        .collect();
    Ok(TripletSet::from_parts(train, test, inverse))
}

/// Path-tagged helper used by loaders that read from memory in tests.
pub fn mem_path() -> PathBuf {
    PathBuf::from("<memory>")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex(rows: &str) -> Result<Lexicon> {
        Lexicon::from_reader(rows.as_bytes(), &mem_path(), LoadOptions::default())
    }

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn first_preferred_row_is_primary() {
        let l = lex("C1\tMyeloid Leukemia\t1\nC1\tLeukemia, Myeloid\t0\n").unwrap();
        let c = l.concept(l.resolve("C1").unwrap());
        assert_eq!(c.primary_name, toks("myeloid leukemia"));
        assert_eq!(c.variants, vec![toks("leukemia myeloid")]);
    }

    #[test]
    fn single_name_concept_has_no_variants() {
        let l = lex("C2\tCortisone\t1\n").unwrap();
        let c = l.concept(l.resolve("C2").unwrap());
        assert_eq!(c.primary_name, toks("cortisone"));
        assert!(c.variants.is_empty());
    }

    #[test]
    fn concept_without_preferred_name_is_rejected() {
        let err = lex("C3\tX\t0\n").unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("C3")), "{err}");
    }

    #[test]
    fn later_preferred_rows_become_variants() {
        let l = lex("C1\talpha\t0\nC1\tbeta\t1\nC1\tgamma\t1\n").unwrap();
        let c = l.concept(ConceptIx(0));
        assert_eq!(c.primary_name, toks("beta"));
        assert_eq!(c.variants, vec![toks("alpha"), toks("gamma")]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = lex("C1\tok\t1\nC2 broken\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = lex("C1\tok\tyes\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn latin_filter_drops_concepts_and_their_triplets() {
        let rows = "C1\tLung\t1\nC2\t肺\t1\nC3\tHeart\t1\n";
        let l = Lexicon::from_reader(rows.as_bytes(), &mem_path(), LoadOptions { latin_only: true })
            .unwrap();
        assert_eq!(l.len(), 2);
        assert!(l.was_dropped("C2"));
        let mut rels = RelationTable::new();
        let ts = read_triplets(
            "C1\tr\tC2\nC1\tr\tC3\n".as_bytes(),
            &mem_path(),
            &l,
            &mut rels,
        )
        .unwrap();
        assert_eq!(ts.len(), 1);
    }

    fn two_concepts() -> Lexicon {
        lex("C1\tMyeloid Leukemia\t1\nC1\tLeukemia, Myeloid\t0\nC2\tCortisone\t1\n").unwrap()
    }

    #[test]
    fn triplet_loading() {
        let l = two_concepts();
        let mut rels = RelationTable::new();
        let ts = read_triplets("C1\tmay_prevent\tC2\n".as_bytes(), &mem_path(), &l, &mut rels).unwrap();
        assert_eq!(
            ts,
            vec![Triplet::new(ConceptIx(0), rels.resolve("may_prevent").unwrap(), ConceptIx(1))]
        );

        let err = read_triplets("C9\tis_a\tC1\n".as_bytes(), &mem_path(), &l, &mut rels).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("C9") && m.contains("line 1")));

        let empty = read_triplets("".as_bytes(), &mem_path(), &l, &mut rels).unwrap();
        assert!(empty.is_empty());
    }

    fn abc_lexicon() -> Lexicon {
        lex("A\ta\t1\nB\tb\t1\nC\tc\t1\nD\td\t1\n").unwrap()
    }

    #[test]
    fn mapped_inverse_is_removed_from_train() {
        let l = abc_lexicon();
        let mut rels = RelationTable::new();
        let (a, b) = (l.resolve("A").unwrap(), l.resolve("B").unwrap());
        let broader = rels.intern("broader");
        let narrower = rels.intern("narrower");
        let mut inv = InverseMap::new();
        inv.insert(broader, narrower);
        let test = vec![Triplet::new(a, broader, b)];
        let train = vec![Triplet::new(b, narrower, a), Triplet::new(a, narrower, b)];
        let set = TripletSet::from_parts(train, test, Some(&inv));
        assert_eq!(set.train, vec![Triplet::new(a, narrower, b)]);
        assert!(set.is_known(&Triplet::new(b, narrower, a)));
    }

    #[test]
    fn exact_reversal_is_removed_without_map() {
        let l = abc_lexicon();
        let mut rels = RelationTable::new();
        let (a, b) = (l.resolve("A").unwrap(), l.resolve("B").unwrap());
        let sib = rels.intern("sib");
        let set = TripletSet::from_parts(
            vec![Triplet::new(b, sib, a)],
            vec![Triplet::new(a, sib, b)],
            None,
        );
        assert!(set.train.is_empty());
        assert!(set.is_known(&Triplet::new(b, sib, a)));
    }

    #[test]
    fn split_rejects_bad_fraction() {
        assert!(split_train_test(&[], 0.0, None, 1).is_err());
        assert!(split_train_test(&[], 1.0, None, 1).is_err());
    }

    #[test]
    fn truncation() {
        let long: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        assert_eq!(truncate_name(&long, MAX_NAME_WORDS), &long[..10]);
        let short = toks("a b c");
        assert_eq!(truncate_name(&short, MAX_NAME_WORDS), &short[..]);
        assert!(truncate_name(&[], MAX_NAME_WORDS).is_empty());
    }

    #[test]
    fn surface_form_sampling() {
        let l = two_concepts();
        let c1 = l.resolve("C1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            assert_eq!(l.sample_surface_form(c1, 0.0, 10, &mut rng).unwrap(), &toks("myeloid leukemia")[..]);
            assert_eq!(l.sample_surface_form(c1, 1.0, 10, &mut rng).unwrap(), &toks("leukemia myeloid")[..]);
        }
        let c2 = l.resolve("C2").unwrap();
        assert_eq!(l.sample_surface_form(c2, 1.0, 10, &mut rng).unwrap(), &toks("cortisone")[..]);
        assert!(l.sample_surface_form(ConceptIx(99), 0.5, 10, &mut rng).is_err());
    }

    #[test]
    fn surface_form_variant_rate_matches_alpha() {
        // Binomial(10000, 0.5) has sd 0.005, so +-0.02 is a 4-sigma band.
        let l = two_concepts();
        let c1 = l.resolve("C1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let variant = toks("leukemia myeloid");
        let hits = (0..10_000)
            .filter(|_| l.sample_surface_form(c1, 0.5, 10, &mut rng).unwrap() == &variant[..])
            .count();
        let freq = hits as f64 / 10_000.0;
        assert!((freq - 0.5).abs() <= 0.02, "variant frequency {freq}");
    }

    #[test]
    fn surface_form_is_reproducible() {
        let l = two_concepts();
        let c1 = l.resolve("C1").unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100)
                .map(|_| l.sample_surface_form(c1, 0.5, 10, &mut rng).unwrap().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    fn name_strategy() -> impl Strategy<Value = String> {
        proptest::collection::vec("[A-Za-z0-9]{1,6}", 1..4).prop_map(|w| w.join(", "))
    }

    proptest! {
        #[test]
        fn lexicon_tsv_round_trip(
            names in proptest::collection::vec((name_strategy(), proptest::collection::vec(name_strategy(), 0..3)), 1..8)
        ) {
            let mut rows = String::new();
            for (i, (primary, variants)) in names.iter().enumerate() {
                rows.push_str(&format!("C{i}\t{primary}\t1\n"));
                for v in variants {
                    rows.push_str(&format!("C{i}\t{v}\t0\n"));
                }
            }
            let l1 = lex(&rows).unwrap();
            let mut buf = Vec::new();
            l1.write_tsv(&mut buf).unwrap();
            let l2 = Lexicon::from_reader(&buf[..], &mem_path(), LoadOptions::default()).unwrap();
            prop_assert_eq!(l1, l2);
        }

        #[test]
        fn split_is_disjoint_and_inverse_free(
            edges in proptest::collection::vec((0u32..6, 0u32..3, 0u32..6), 0..40),
            frac in 0.05f64..0.95,
            seed in any::<u64>(),
            with_map in any::<bool>(),
        ) {
            let triplets: Vec<Triplet> = edges
                .iter()
                .map(|&(h, r, t)| Triplet::new(ConceptIx(h), RelationIx(r), ConceptIx(t)))
                .collect();
            let mut inv = InverseMap::new();
            inv.insert(RelationIx(0), RelationIx(1));
            let map = if with_map { Some(&inv) } else { None };
            let set = split_train_test(&triplets, frac, map, seed).unwrap();
            let again = split_train_test(&triplets, frac, map, seed).unwrap();
            prop_assert_eq!(&set.train, &again.train);
            prop_assert_eq!(&set.test, &again.test);
            let train: HashSet<_> = set.train.iter().copied().collect();
            let empty = InverseMap::new();
            let m = map.unwrap_or(&empty);
            for t in &set.test {
                prop_assert!(!train.contains(t));
                prop_assert!(!train.contains(&m.inverse_of(t)));
                prop_assert!(set.is_known(t));
            }
            for t in &triplets {
                prop_assert!(set.is_known(t));
            }
        }
    }
}
