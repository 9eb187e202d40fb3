use std::io::Cursor;

use ted_core::corpus::{generate_corpus, Corpus, GenerationConfig};
use ted_core::featurizer::{featurize_dialogue, FeatureMode, FeatureVocab};
use ted_core::harness::repl::{self, ParsedInput, Session};
use ted_core::harness::evaluate;
use ted_core::policy::{checkpoint, train, train_with_vocab, EncoderKind, PolicyError, TedConfig};

fn corpus(n: usize, seed: u64) -> Corpus {
    generate_corpus(&GenerationConfig {
        n_dialogues: n,
        seed,
        ..GenerationConfig::default()
    })
    .unwrap()
}

fn quick(encoder: EncoderKind, epochs: usize) -> TedConfig {
    TedConfig {
        encoder,
        epochs,
        width: 32,
        ff_width: 64,
        ..TedConfig::default()
    }
}

fn smoothed(history: &[f64], window: usize) -> Vec<f64> {
    history.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[test]
fn first_epoch_loss_is_near_uniform_guess() {
    let c = corpus(40, 3);
    for encoder in [EncoderKind::Transformer, EncoderKind::Lstm] {
        let config = TedConfig { encoder, epochs: 1, ..TedConfig::default() };
        let vocab = FeatureVocab::build(&c, config.mode).unwrap();
        let k = config.n_negatives.min(vocab.n_actions() - 1);
        let (_, history) = train(&c, &config).unwrap();
        let expected = (1.0 + k as f64).ln();
        assert!(
            (history[0] - expected).abs() <= 0.2 * expected,
            "{encoder:?}: {} vs {expected}",
            history[0]
        );
    }
}

#[test]
fn smoothed_loss_never_rises_on_a_tiny_corpus() {
    let c = corpus(5, 1);
    for encoder in [EncoderKind::Transformer, EncoderKind::Lstm] {
        // one batch per epoch, so only negative sampling adds noise
        let config = TedConfig { batch_size: 32, ..quick(encoder, 100) };
        let (_, history) = train(&c, &config).unwrap();
        let s = smoothed(&history, 5);
        for w in s.windows(2) {
            assert!(w[1] <= w[0], "{encoder:?}: {:?}", s);
        }
    }
}

#[test]
fn training_is_bit_reproducible() {
    let c = corpus(8, 2);
    for encoder in [EncoderKind::Transformer, EncoderKind::Lstm] {
        let (a, ha) = train(&c, &quick(encoder, 3)).unwrap();
        let (b, hb) = train(&c, &quick(encoder, 3)).unwrap();
        assert_eq!(checkpoint::to_bytes(&a), checkpoint::to_bytes(&b));
        assert_eq!(ha, hb);
        let mut other = quick(encoder, 3);
        other.seed = 1;
        let (d, _) = train(&c, &other).unwrap();
        assert_ne!(checkpoint::to_bytes(&a), checkpoint::to_bytes(&d));
    }
}

#[test]
fn checkpoint_roundtrip_and_rejections() {
    let c = corpus(6, 4);
    let dir = tempfile::tempdir().unwrap();
    for encoder in [EncoderKind::Transformer, EncoderKind::Lstm] {
        let (model, _) = train(&c, &quick(encoder, 2)).unwrap();
        let path = dir.path().join(format!("{encoder}.ckpt"));
        checkpoint::save(&model, &path).unwrap();
        let back = checkpoint::load(&path).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.config, model.config);
        assert_eq!(checkpoint::to_bytes(&back), std::fs::read(&path).unwrap());

        let foreign = FeatureVocab::build(&corpus(6, 99), FeatureMode::EndToEnd).unwrap();
        let bytes = checkpoint::to_bytes(&model);
        assert!(matches!(
            checkpoint::from_bytes(&bytes, foreign),
            Err(PolicyError::DigestMismatch { .. })
        ));
        let mut tampered = String::from_utf8_lossy(&bytes).into_owned();
        tampered = tampered.replacen("config width=32", "config width=16", 1);
        assert!(checkpoint::from_bytes(tampered.as_bytes(), model.vocab.clone()).is_err());
        assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 8], model.vocab.clone()).is_err());
    }
}

#[test]
fn divergence_aborts_with_diagnostic() {
    let c = corpus(6, 5);
    let config = TedConfig { learning_rate: 1e300, epochs: 5, ..quick(EncoderKind::Transformer, 5) };
    match train(&c, &config) {
        Err(PolicyError::NonFiniteLoss { epoch, .. }) => assert!(epoch < 5),
        other => panic!("expected NonFiniteLoss, got {:?}", other.map(|(_, h)| h)),
    }
}

#[test]
fn empty_corpus_and_mode_mismatch_are_rejected() {
    let c = corpus(3, 6);
    let config = TedConfig::default();
    assert!(train(&Corpus::default(), &config).is_err());
    let vocab = FeatureVocab::build(&c, FeatureMode::EndToEnd).unwrap();
    assert!(train_with_vocab(&c, vocab, &config, |_, _| {}).is_err());
}

#[test]
fn end_to_end_mode_trains() {
    let c = corpus(6, 7);
    let config = TedConfig { mode: FeatureMode::EndToEnd, ..quick(EncoderKind::Transformer, 3) };
    let (model, history) = train(&c, &config).unwrap();
    assert_eq!(history.len(), 3);
    let (report, _) = evaluate(&model, &c).unwrap();
    assert!(report.full_dialogue_accuracy <= report.action_accuracy);
}

#[test]
fn overfit_model_replays_training_dialogues_in_the_repl() {
    let c = corpus(5, 0);
    let (model, _) = train(&c, &quick(EncoderKind::Transformer, 200)).unwrap();
    let (report, _) = evaluate(&model, &c).unwrap();
    assert_eq!(report.full_dialogue_accuracy, 1.0);
    for d in &c.dialogues {
        let mut session = Session::new(&model);
        for t in &d.turns {
            let input = ParsedInput {
                intent: t.user_intent.clone(),
                entities: t.user_entities.clone(),
                text: t.user_text.clone(),
            };
            assert_eq!(session.user_turn(&input).unwrap().top().label, t.system_action);
        }
    }
}

fn script_for(d: &ted_core::corpus::Dialogue) -> Vec<String> {
    d.turns
        .iter()
        .map(|t| {
            let ents: Vec<String> = t.user_entities.iter().map(|(k, v)| format!("{k}={v}")).collect();
            if ents.is_empty() {
                t.user_intent.clone()
            } else {
                format!("{}[{}]", t.user_intent, ents.join(","))
            }
        })
        .collect()
}

#[test]
fn scripted_repl_reproduces_predict_and_reset() {
    let c = corpus(6, 8);
    let (model, _) = train(&c, &quick(EncoderKind::Transformer, 5)).unwrap();
    let d = &c.dialogues[0];
    let lines = script_for(d);
    let mut session = Session::new(&model);
    let first: Vec<_> = lines
        .iter()
        .map(|l| session.handle_line(l).unwrap())
        .collect();
    let tracked = session.features().to_vec();
    session.handle_line(":reset").unwrap();
    let second: Vec<_> = lines.iter().map(|l| session.handle_line(l).unwrap()).collect();
    assert_eq!(first, second);
    for (t, reply) in first.iter().enumerate() {
        let repl::Reply::Prediction(p) = reply else { panic!("expected prediction") };
        assert_eq!(p, &model.predict(&tracked[..=t]).unwrap());
    }

    let script = lines.join("\n") + "\n:quit\n";
    let mut out = Vec::new();
    repl::run(&model, Cursor::new(script), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let expected: String = first
        .iter()
        .map(|r| match r {
            repl::Reply::Prediction(p) => repl::format_prediction(p),
            _ => unreachable!(),
        })
        .collect();
    for block in expected.lines() {
        assert!(text.contains(block), "missing {block:?}");
    }
}

#[test]
fn repl_rejects_unknown_intent_without_consuming_turn() {
    let c = corpus(4, 9);
    let (model, _) = train(&c, &quick(EncoderKind::Lstm, 1)).unwrap();
    let mut session = Session::new(&model);
    let reply = session.handle_line("teleport").unwrap();
    match reply {
        repl::Reply::Message(m) => assert!(m.contains("greet"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(session.features().is_empty());
    let f = featurize_dialogue(&c.dialogues[0], &model.vocab).unwrap();
    let _ = session.handle_line(&script_for(&c.dialogues[0])[0]).unwrap();
    assert_eq!(session.features().len(), 1);
    assert_eq!(session.features()[0].concatenated(), f[0].concatenated());
}
