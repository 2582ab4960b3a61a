#![allow(dead_code)]

use std::collections::HashSet;

use cc_embed::eval::Side;
use cc_embed::kg::{Concept, ConceptIx, Lexicon, Triplet};
use cc_embed::text::tokenize;

pub fn lexicon(names: &[&str]) -> Lexicon {
    let mut lex = Lexicon::new();
    for (i, n) in names.iter().enumerate() {
        lex.push(Concept {
            id: format!("C{i}"),
            primary_name: tokenize(n),
            variants: vec![],
        })
        .unwrap();
    }
    lex
}

fn dist(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    h.iter().zip(r).zip(t).map(|((h, r), t)| (h + r - t).powi(2)).sum::<f64>().sqrt()
}

/// Scores every substitution, sorts them and reads off the position of the
/// truth after every tied or better candidate.
pub fn brute_force_rank(
    vectors: &[Vec<f64>],
    relation: &[f64],
    triplet: &Triplet,
    side: Side,
    known: &HashSet<Triplet>,
) -> (usize, usize) {
    let substitute = |c: usize| {
        let c = ConceptIx(c as u32);
        match side {
            Side::Head => Triplet { head: c, ..*triplet },
            Side::Tail => Triplet { tail: c, ..*triplet },
        }
    };
    let score = |t: &Triplet| dist(&vectors[t.head.index()], relation, &vectors[t.tail.index()]);
    let mut scored: Vec<(f64, bool, bool)> = (0..vectors.len())
        .map(|c| {
            let t = substitute(c);
            (score(&t), t == *triplet, known.contains(&t))
        })
        .collect();
    // truth last among equals
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let pos = scored.iter().position(|s| s.1).unwrap();
    let raw = pos + 1;
    let filtered = scored[..pos].iter().filter(|s| !s.2).count() + 1;
    (raw, filtered)
}
