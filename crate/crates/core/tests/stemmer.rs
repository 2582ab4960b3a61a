use cc_embed::text::stem;

#[test]
fn matches_reference_stemmer_outputs() {
    let data = include_str!("data/porter_vectors.tsv");
    let mut failures = Vec::new();
    for line in data.lines() {
        let (word, expected) = line.split_once('\t').unwrap();
        let got = stem(word);
        if got != expected {
            failures.push(format!("{word}: got {got}, want {expected}"));
        }
    }
    assert!(failures.is_empty(), "{} mismatches:\n{}", failures.len(), failures.join("\n"));
}
