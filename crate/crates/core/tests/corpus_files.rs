use ted_core::corpus::{self, generate_corpus, validate_corpus, GenerationConfig};

#[test]
fn five_hundred_dialogues_resave_identically() {
    let cfg = GenerationConfig { n_dialogues: 500, seed: 12, ..GenerationConfig::default() };
    let c = generate_corpus(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    corpus::save(&c, &a).unwrap();
    let loaded = corpus::load(&a).unwrap();
    assert_eq!(loaded, c);
    corpus::save(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 501);
}

#[test]
fn same_seed_same_file_and_default_shape() {
    let c1 = generate_corpus(&GenerationConfig::default()).unwrap();
    let c2 = generate_corpus(&GenerationConfig::default()).unwrap();
    assert_eq!(corpus::to_jsonl(&c1), corpus::to_jsonl(&c2));
    let report = validate_corpus(&c1);
    assert!(report.is_valid());
    assert!(report.n_digressions > 0);
    let domains: std::collections::BTreeSet<&str> = c1.dialogues.iter().map(|d| d.domain.as_str()).collect();
    assert_eq!(domains.len(), 2);
}
