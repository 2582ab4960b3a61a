//! Synthetic knowledge graphs, corpora and classification tasks.
//!
//! The main generator builds a small clinical-flavoured world:
//!
//! * site concepts (`lung`) and pathology concepts (`fibrosis`);
//! * a few body systems with opaque names, each site belonging to one;
//! * disorders, one per (site, pathology) pair. Half are named
//!   compositionally (`lung fibrosis`); the rest get an opaque eponym
//!   (`kessavo`) and only their corpus sentences say what they
//!   are;
//! * brands with opaque names, each indicated for a random disorder.
//!
//! `finding_site` and `is_a` link disorders to their site and pathology and
//! are language-inferable, as is `affects_system` once the system of each
//! site word is known; `indicated_for` and `part_of` (site to system) are
//! not. A held-out set of disorders and brands appears only in test
//! triplets.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::finetune::LabeledExample;
use crate::kg::{write_triplets, Concept, ConceptIx, Lexicon, RelationIx, RelationTable, Triplet};
use crate::text::tokenize;

pub const SITES: &[&str] = &[
    "lung", "liver", "kidney", "heart", "brain", "skin", "bone", "colon", "stomach", "thyroid", "pancreas", "spleen",
    "bladder", "prostate", "breast", "ovary", "uterus", "retina", "cornea", "tongue", "larynx", "trachea", "esophagus",
    "muscle", "nerve", "artery", "vein", "joint", "spine", "tendon", "gallbladder", "adrenal", "pituitary", "testis",
    "cervix", "rectum", "duodenum", "tonsil", "sinus", "eyelid",
];

pub const PATHOLOGIES: &[&str] = &[
    "fibrosis", "carcinoma", "infarction", "stenosis", "edema", "necrosis", "hyperplasia", "atrophy", "abscess",
    "cyst", "ulcer", "hemorrhage", "inflammation", "lymphoma", "sarcoma", "adenoma",
];

pub const FINDING_SITE: &str = "finding_site";
pub const IS_A: &str = "is_a";
pub const INDICATED_FOR: &str = "indicated_for";
pub const PART_OF: &str = "part_of";
pub const AFFECTS_SYSTEM: &str = "affects_system";

/// Number of body systems the sites are divided among.
pub const SYSTEMS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub concepts: usize,
    pub zero_shot: usize,
    /// share of disorders named by an eponym instead of site + pathology
    pub eponym_fraction: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(concepts: usize, zero_shot: usize, seed: u64) -> Self {
        SynthConfig {
            concepts,
            zero_shot,
            eponym_fraction: 0.5,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConceptKind {
    Site(usize),
    System(usize),
    Pathology(usize),
    Disorder { site: usize, pathology: usize, eponym: bool },
    Brand { target: ConceptIx },
}

#[derive(Debug, Clone)]
pub struct SynthKg {
    pub lexicon: Lexicon,
    pub relations: RelationTable,
    pub kinds: Vec<ConceptKind>,
    pub train: Vec<Triplet>,
    pub test: Vec<Triplet>,
    pub zero_shot: Vec<ConceptIx>,
    /// `LI` or `NonLI` for every test triplet
    pub categories: Vec<(Triplet, &'static str)>,
    pub corpus: Vec<String>,
    pub n_sites: usize,
    /// system of each site
    pub site_system: Vec<usize>,
    pub n_pathologies: usize,
}

/// Brand manufacturers mentioned in brand sentences.
const MAKERS: usize = 24;

/// Pronounceable nonsense words, distinct from each other and from `avoid`.
fn pseudo_words<R: Rng + ?Sized>(n: usize, avoid: &HashSet<String>, rng: &mut R) -> Vec<String> {
    const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "kl"];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
    let mut seen = avoid.clone();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).expect("non-empty"));
            w.push_str(VOWELS.choose(rng).expect("non-empty"));
        }
        if rng.gen_bool(0.5) {
            w.push_str(["x", "n", "l", "r"].choose(rng).expect("non-empty"));
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn concept(id: String, primary: String, variants: &[String]) -> Concept {
    Concept {
        id,
        primary_name: tokenize(&primary),
        variants: variants.iter().map(|v| tokenize(v)).collect(),
    }
}

/// Chooses site and pathology counts for `n` concepts: about 60% disorders,
/// the remainder brands.
fn layout(n: usize) -> Result<(usize, usize)> {
    let target = 0.6 * n as f64;
    let n_p = ((target / 1.67).sqrt().round() as usize).clamp(2, PATHOLOGIES.len());
    let n_s = ((target / n_p as f64) as usize).clamp(2, SITES.len());
    if n_s * n_p + n_s + n_p + SYSTEMS > n {
        return Err(Error::Config(format!("{n} concepts is too few for the synthetic layout")));
    }
    Ok((n_s, n_p))
}

/// Generates the knowledge graph and corpus. Exactly `config.concepts`
/// concepts, of which `config.zero_shot` (disorders and brands) occur in
/// no training triplet.
pub fn generate(config: &SynthConfig) -> Result<SynthKg> {
    let (n_s, n_p) = layout(config.concepts)?;
    let n_d = n_s * n_p;
    let n_b = config.concepts - n_s - n_p - n_d - SYSTEMS;
    if config.zero_shot >= n_d + n_b || config.zero_shot == 0 {
        return Err(Error::Config(format!(
            "zero-shot count must lie in [1, {}) for {} concepts",
            n_d + n_b,
            config.concepts
        )));
    }
    if !(0.0..=1.0).contains(&config.eponym_fraction) {
        return Err(Error::Config("eponym fraction must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let avoid: HashSet<String> = SITES.iter().chain(PATHOLOGIES).map(|s| s.to_string()).collect();
    let opaque = pseudo_words(n_d + n_b + MAKERS + SYSTEMS, &avoid, &mut rng);
    let (eponym_words, rest) = opaque.split_at(n_d);
    let (brand_words, rest) = rest.split_at(n_b);
    let (makers, system_words) = rest.split_at(MAKERS);

    let mut pairs: Vec<(usize, usize)> = (0..n_s).flat_map(|s| (0..n_p).map(move |p| (s, p))).collect();
    pairs.shuffle(&mut rng);
    let n_eponyms = (config.eponym_fraction * n_d as f64).round() as usize;

    let mut lexicon = Lexicon::new();
    let mut kinds = Vec::new();
    let mut next_id = 0usize;
    let push = |lex: &mut Lexicon, kinds: &mut Vec<ConceptKind>, c: Concept, k: ConceptKind| -> Result<ConceptIx> {
        kinds.push(k);
        lex.push(c)
    };
    let mut fresh_id = || {
        next_id += 1;
        format!("SYN{next_id:05}")
    };
    let mut site_ix = Vec::new();
    for (s, name) in SITES[..n_s].iter().enumerate() {
        let c = concept(fresh_id(), name.to_string(), &[format!("{name} structure")]);
        site_ix.push(push(&mut lexicon, &mut kinds, c, ConceptKind::Site(s))?);
    }
    let mut system_ix = Vec::new();
    for (k, w) in system_words.iter().enumerate() {
        let c = concept(fresh_id(), format!("{w} system"), &[format!("{w} apparatus")]);
        system_ix.push(push(&mut lexicon, &mut kinds, c, ConceptKind::System(k))?);
    }
    let mut order: Vec<usize> = (0..n_s).collect();
    order.shuffle(&mut rng);
    let mut site_system = vec![0; n_s];
    for (rank, &site) in order.iter().enumerate() {
        site_system[site] = rank % SYSTEMS;
    }
    let mut path_ix = Vec::new();
    for (p, name) in PATHOLOGIES[..n_p].iter().enumerate() {
        let c = concept(fresh_id(), name.to_string(), &[format!("{name} finding")]);
        path_ix.push(push(&mut lexicon, &mut kinds, c, ConceptKind::Pathology(p))?);
    }
    let mut disorders = Vec::new();
    for (k, &(s, p)) in pairs.iter().enumerate() {
        let eponym = k < n_eponyms;
        let c = if eponym {
            let e = &eponym_words[k];
            concept(fresh_id(), e.clone(), &[format!("{e} syndrome")])
        } else {
            concept(
                fresh_id(),
                format!("{} {}", SITES[s], PATHOLOGIES[p]),
                &[format!("{} of the {}", PATHOLOGIES[p], SITES[s])],
            )
        };
        let kind = ConceptKind::Disorder { site: s, pathology: p, eponym };
        disorders.push(push(&mut lexicon, &mut kinds, c, kind)?);
    }
    let mut brands = Vec::new();
    for b in brand_words {
        let target = *disorders.choose(&mut rng).expect("at least one disorder");
        let c = concept(fresh_id(), b.clone(), &[format!("{b} tablet")]);
        brands.push(push(&mut lexicon, &mut kinds, c, ConceptKind::Brand { target })?);
    }

    let relations = RelationTable::from_labels([FINDING_SITE, IS_A, INDICATED_FOR, PART_OF, AFFECTS_SYSTEM]);
    let (r_site, r_isa, r_ind, r_part, r_sys) =
        (RelationIx(0), RelationIx(1), RelationIx(2), RelationIx(3), RelationIx(4));
    let mut triplets = Vec::new();
    for (s, &c) in site_ix.iter().enumerate() {
        triplets.push((Triplet::new(c, r_part, system_ix[site_system[s]]), "NonLI"));
    }
    for &d in &disorders {
        if let ConceptKind::Disorder { site, pathology, .. } = kinds[d.index()] {
            triplets.push((Triplet::new(d, r_site, site_ix[site]), "LI"));
            triplets.push((Triplet::new(d, r_isa, path_ix[pathology]), "LI"));
            triplets.push((Triplet::new(d, r_sys, system_ix[site_system[site]]), "LI"));
        }
    }
    for &b in &brands {
        if let ConceptKind::Brand { target } = kinds[b.index()] {
            triplets.push((Triplet::new(b, r_ind, target), "NonLI"));
        }
    }

    let n_zs_brands = ((0.15 * config.zero_shot as f64).round() as usize).min(n_b);
    let mut zero_shot: Vec<ConceptIx> = disorders
        .choose_multiple(&mut rng, config.zero_shot - n_zs_brands)
        .copied()
        .collect();
    zero_shot.extend(brands.choose_multiple(&mut rng, n_zs_brands).copied());
    zero_shot.sort();
    let zs: HashSet<ConceptIx> = zero_shot.iter().copied().collect();
    let (mut train, mut test, mut categories) = (Vec::new(), Vec::new(), Vec::new());
    for (t, cat) in triplets {
        if zs.contains(&t.head) || zs.contains(&t.tail) {
            test.push(t);
            categories.push((t, cat));
        } else {
            train.push(t);
        }
    }

    let corpus = corpus(&lexicon, &kinds, makers, &mut rng);
    Ok(SynthKg {
        lexicon,
        relations,
        kinds,
        train,
        test,
        zero_shot,
        categories,
        corpus,
        n_sites: n_s,
        site_system,
        n_pathologies: n_p,
    })
}

fn corpus<R: Rng + ?Sized>(lexicon: &Lexicon, kinds: &[ConceptKind], makers: &[String], rng: &mut R) -> Vec<String> {
    const DISORDER: &[&str] = &[
        "the patient was diagnosed with {n} last spring",
        "{n} was seen on imaging",
        "treatment of {n} requires careful follow up",
        "a case of {n} was reported in an elderly man",
        "{v} was confirmed by biopsy",
    ];
    const EPONYM: &[&str] = &[
        "{n} is a {p} of the {s}",
        "{s} {p} known as {n} was reported",
        "patients with {n} develop {s} {p}",
        "in {v} the {s} shows {p}",
        "the {s} {p} called {n} is rare",
    ];
    const DOSES: &[&str] = &["5", "10", "20", "25", "40", "50", "100", "200", "250", "500"];
    const SITE: &[&str] = &[
        "the {v} was examined carefully",
        "{n} tissue appeared normal on the scan",
        "the surgeon inspected the {n}",
    ];
    const SYSTEM: &[&str] = &[
        "disorders of the {n} are common",
        "the {v} was reviewed in detail",
    ];
    const PATHOLOGY: &[&str] = &[
        "{n} was noted on the pathology report",
        "the {v} was described in detail",
        "signs of {n} were absent",
    ];
    const BRAND: &[&str] = &[
        "{n} tablets from {m} were prescribed at discharge",
        "the pharmacy dispensed {n} {d} mg this morning",
        "{v} made by {m} is taken twice daily with food",
    ];
    let mut out = Vec::new();
    for (i, c) in lexicon.concepts().iter().enumerate() {
        let name = c.primary_name.join(" ");
        let variant = c.variants.first().map_or(name.clone(), |v| v.join(" "));
        let (templates, s, p) = match kinds[i] {
            ConceptKind::Site(_) => (SITE, "", ""),
            ConceptKind::System(_) => (SYSTEM, "", ""),
            ConceptKind::Pathology(_) => (PATHOLOGY, "", ""),
            ConceptKind::Disorder { site, pathology, eponym } => {
                (if eponym { EPONYM } else { DISORDER }, SITES[site], PATHOLOGIES[pathology])
            }
            ConceptKind::Brand { .. } => (BRAND, "", ""),
        };
        let maker = makers.choose(rng).expect("non-empty");
        let dose = DOSES.choose(rng).expect("non-empty");
        for t in templates {
            out.push(
                t.replace("{n}", &name)
                    .replace("{m}", maker)
                    .replace("{d}", dose)
                    .replace("{v}", &variant)
                    .replace("{s}", s)
                    .replace("{p}", p),
            );
        }
    }
    out.shuffle(rng);
    out
}

impl SynthKg {
    pub fn is_zero_shot(&self, c: ConceptIx) -> bool {
        self.zero_shot.binary_search(&c).is_ok()
    }

    /// Writes `concepts.tsv`, `train.tsv`, `test.tsv`, `categories.tsv`,
    /// `corpus.txt` and `zero_shot.txt` into `dir`.
    /// Writes the generated files into `dir` and returns their paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let io = |name: &str| {
            let p = dir.join(name);
            move |e| Error::io(format!("writing {}", p.display()), e)
        };
        let mut buf = Vec::new();
        self.lexicon.write_tsv(&mut buf).map_err(io("concepts.tsv"))?;
        fs::write(dir.join("concepts.tsv"), &buf).map_err(io("concepts.tsv"))?;
        for (name, set) in [("train.tsv", &self.train), ("test.tsv", &self.test)] {
            let mut buf = Vec::new();
            write_triplets(&mut buf, set, &self.lexicon, &self.relations).map_err(io(name))?;
            fs::write(dir.join(name), &buf).map_err(io(name))?;
        }
        let mut buf = Vec::new();
        for (t, cat) in &self.categories {
            writeln!(
                buf,
                "{}\t{}\t{}\t{cat}",
                self.lexicon.concept(t.head).id,
                self.relations.label(t.relation),
                self.lexicon.concept(t.tail).id
            )
            .map_err(io("categories.tsv"))?;
        }
        fs::write(dir.join("categories.tsv"), &buf).map_err(io("categories.tsv"))?;
        let mut corpus = self.corpus.join("\n");
        corpus.push('\n');
        fs::write(dir.join("corpus.txt"), corpus).map_err(io("corpus.txt"))?;
        let zs: Vec<&str> = self.zero_shot.iter().map(|&c| self.lexicon.concept(c).id.as_str()).collect();
        fs::write(dir.join("zero_shot.txt"), zs.join("\n") + "\n").map_err(io("zero_shot.txt"))?;
        Ok(["concepts.tsv", "train.tsv", "test.tsv", "categories.tsv", "corpus.txt", "zero_shot.txt"]
            .iter()
            .map(|n| dir.join(n))
            .collect())
    }

    /// Binary classification of clinical sentences mentioning a
    /// compositionally named disorder: does its finding site belong to one
    /// of two fixed body systems? Within each system, train and dev use
    /// disjoint sites, so a dev label follows only from knowing which
    /// system the site is part of.
    pub fn site_task(&self, seed: u64) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
        const TEMPLATES: &[&str] = &[
            "the patient presented with {n} today",
            "follow up for known {n} was arranged",
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut systems: Vec<usize> = (0..SYSTEMS).collect();
        systems.shuffle(&mut rng);
        let positive: BTreeSet<usize> = systems[..SYSTEMS / 2].iter().copied().collect();
        let mut dev_sites = BTreeSet::new();
        for system in 0..SYSTEMS {
            let mut sites: Vec<usize> = (0..self.n_sites).filter(|&s| self.site_system[s] == system).collect();
            sites.shuffle(&mut rng);
            dev_sites.extend(sites.iter().take(sites.len() / 2).copied());
        }
        let (mut train, mut dev) = (Vec::new(), Vec::new());
        for c in self.lexicon.indices().filter(|&c| !self.is_zero_shot(c)) {
            let ConceptKind::Disorder { site, eponym: false, .. } = self.kinds[c.index()] else {
                continue;
            };
            let label = usize::from(positive.contains(&self.site_system[site]));
            let name = self.lexicon.concept(c).primary_name.join(" ");
            let set = if dev_sites.contains(&site) { &mut dev } else { &mut train };
            for t in TEMPLATES {
                set.push(LabeledExample {
                    text_a: tokenize(&t.replace("{n}", &name)),
                    text_b: None,
                    label,
                });
            }
        }
        train.shuffle(&mut rng);
        (train, dev)
    }
}

/// A transductive graph for sanity-checking TransE: `width * height`
/// entities at random cells of a grid, and relations that are fixed grid
/// offsets. `(h, r, t)` holds when `t` sits at `h`'s cell plus `r`'s offset,
/// so every relation is an exact translation.
pub fn transductive(
    width: usize,
    height: usize,
    n_relations: usize,
    n_triplets: usize,
    seed: u64,
) -> Result<(Lexicon, RelationTable, Vec<Triplet>)> {
    let mut offsets: Vec<(i64, i64)> = (-2..=2i64)
        .flat_map(|dx| (-2..=2i64).map(move |dy| (dx, dy)))
        .filter(|&o| o != (0, 0))
        .collect();
    offsets.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dx, dy));
    if n_relations == 0 || n_relations > offsets.len() || width < 3 || height < 3 {
        return Err(Error::Config(format!(
            "need a grid of at least 3x3 and 1..={} relations",
            offsets.len()
        )));
    }
    let (w, h) = (width as i64, height as i64);
    let n_entities = width * height;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cell_of: Vec<usize> = (0..n_entities).collect();
    cell_of.shuffle(&mut rng);
    let mut at_cell = vec![0usize; n_entities];
    for (e, &c) in cell_of.iter().enumerate() {
        at_cell[c] = e;
    }
    let mut candidates = Vec::new();
    for (r, &(dx, dy)) in offsets[..n_relations].iter().enumerate() {
        for e in 0..n_entities {
            let (x, y) = ((cell_of[e] % width) as i64 + dx, (cell_of[e] / width) as i64 + dy);
            if (0..w).contains(&x) && (0..h).contains(&y) {
                let t = at_cell[(y * w + x) as usize];
                candidates.push(Triplet::new(ConceptIx(e as u32), RelationIx(r as u32), ConceptIx(t as u32)));
            }
        }
    }
    if n_triplets > candidates.len() {
        return Err(Error::Config(format!(
            "{n_triplets} triplets requested but the grid only has {}",
            candidates.len()
        )));
    }
    let mut lexicon = Lexicon::new();
    for i in 0..n_entities {
        lexicon.push(concept(format!("E{i:04}"), format!("entity {i}"), &[]))?;
    }
    let labels: Vec<String> = (0..n_relations).map(|r| format!("rel{r}")).collect();
    let triplets = candidates.choose_multiple(&mut rng, n_triplets).copied().collect();
    Ok((lexicon, RelationTable::from_labels(&labels), triplets))
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;

    #[test]
    fn generator_contract() {
        let kg = generate(&SynthConfig::new(400, 80, 1)).unwrap();
        assert_eq!(kg.lexicon.len(), 400);
        assert_eq!(kg.zero_shot.len(), 80);
        for t in &kg.train {
            assert!(!kg.is_zero_shot(t.head) && !kg.is_zero_shot(t.tail));
        }
        for &z in &kg.zero_shot {
            assert!(kg.test.iter().any(|t| t.head == z || t.tail == z));
        }
        assert_eq!(kg.categories.len(), kg.test.len());
        assert!(kg.categories.iter().any(|c| c.1 == "LI"));
        assert!(kg.categories.iter().any(|c| c.1 == "NonLI"));
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate(&SynthConfig::new(120, 20, 5)).unwrap();
        let b = generate(&SynthConfig::new(120, 20, 5)).unwrap();
        assert_eq!(a.lexicon, b.lexicon);
        assert_eq!(a.train, b.train);
        assert_eq!(a.corpus, b.corpus);
    }

    #[test]
    fn site_task_holds_out_sites_and_labels_by_system() {
        let kg = generate(&SynthConfig::new(400, 80, 1)).unwrap();
        let (train, dev) = kg.site_task(3);
        let site_of = |ex: &LabeledExample| {
            let text = ex.text_a.join(" ");
            let matches: Vec<usize> = kg
                .lexicon
                .indices()
                .filter_map(|c| match kg.kinds[c.index()] {
                    ConceptKind::Disorder { site, eponym: false, .. } => {
                        let name = kg.lexicon.concept(c).primary_name.join(" ");
                        text.contains(&format!(" {name} ")).then_some(site)
                    }
                    _ => None,
                })
                .collect();
            assert_eq!(matches.len(), 1, "{text}");
            matches[0]
        };
        let mut label_of_system = HashMap::new();
        let mut sites = [HashSet::new(), HashSet::new()];
        for (i, set) in [&train, &dev].into_iter().enumerate() {
            for ex in set {
                let site = site_of(ex);
                sites[i].insert(site);
                let prev = label_of_system.insert(kg.site_system[site], ex.label);
                assert!(prev.is_none() || prev == Some(ex.label));
            }
            assert!(set.iter().any(|e| e.label == 0) && set.iter().any(|e| e.label == 1));
        }
        assert!(sites[0].is_disjoint(&sites[1]));
        assert_eq!(label_of_system.values().filter(|&&l| l == 1).count(), SYSTEMS / 2);
    }

    #[test]
    fn transductive_graph_is_functional() {
        let (lex, rels, ts) = transductive(20, 10, 24, 2000, 3).unwrap();
        assert_eq!((lex.len(), rels.len(), ts.len()), (200, 24, 2000));
        let unique: HashSet<_> = ts.iter().collect();
        assert_eq!(unique.len(), 2000);
        let heads: HashSet<_> = ts.iter().map(|t| (t.head, t.relation)).collect();
        assert_eq!(heads.len(), 2000, "each (head, relation) has one tail");
        assert!(transductive(20, 10, 24, 10_000, 3).is_err());
    }
}
