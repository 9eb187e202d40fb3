use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use ted_core::corpus::{self, validate_corpus};
use ted_core::harness::repl::{format_prediction, Reply, Session};
use ted_core::policy::checkpoint;

fn ted(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ted")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = ted(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    ted(args).status.code().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn write(&self, name: &str, text: &str) -> String {
        fs::write(self.path(name), text).unwrap();
        self.p(name)
    }

    fn corpus(&self, name: &str, kv: &str) -> String {
        let cfg = self.write(&format!("{name}.kv"), kv);
        ok(&["generate", "--config", &cfg, "--out", &self.p(name)]);
        self.p(name)
    }

    fn quick_config(&self) -> String {
        self.write("quick.kv", "epochs=3\nwidth=16\nff_width=16\n")
    }

    fn trained(&self, corpus: &str, name: &str, extra: &[&str]) -> String {
        let cfg = self.quick_config();
        let out = self.p(name);
        let mut args = vec!["train", corpus, "--config", &cfg, "--out", &out];
        args.extend_from_slice(extra);
        ok(&args);
        out
    }
}

#[test]
fn generate_is_seeded_and_sized() {
    let f = Fixture::new();
    ok(&["generate", "--out", &f.p("a.jsonl")]);
    ok(&["generate", "--out", &f.p("b.jsonl")]);
    ok(&["generate", "--seed", "5", "--out", &f.p("c.jsonl")]);
    let a = fs::read(f.path("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(f.path("b.jsonl")).unwrap());
    assert_ne!(a, fs::read(f.path("c.jsonl")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 800 + 1);
}

#[test]
fn zero_probability_config_has_no_digressions() {
    let f = Fixture::new();
    let path = f.corpus("p0.jsonl", "n_dialogues=60\ndigression_probability=0\n");
    let report = validate_corpus(&corpus::load(&path).unwrap());
    assert!(report.is_valid());
    assert_eq!(report.n_digressions, 0);
}

fn history(path: &str) -> Vec<f64> {
    fs::read_to_string(format!("{path}.history.tsv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn train_is_reproducible_and_switches_encoder() {
    let f = Fixture::new();
    let c = f.corpus("c.jsonl", "n_dialogues=6\n");
    let a = f.trained(&c, "a.ckpt", &[]);
    let b = f.trained(&c, "b.ckpt", &[]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(history(&a).len(), 3);
    assert_eq!(history(&a), history(&b));
    let s = f.trained(&c, "s.ckpt", &["--seed", "9"]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&s).unwrap());

    let l = f.trained(&c, "l.ckpt", &["--encoder", "lstm"]);
    let model = checkpoint::load(&l).unwrap();
    assert_eq!(model.config.encoder, ted_core::EncoderKind::Lstm);
    assert!(model.params().contains_key("lstm.recurrent_weight"));
    let head = String::from_utf8_lossy(&fs::read(&l).unwrap()[..200]).into_owned();
    assert!(head.starts_with("ted-checkpoint 1\nvocab_digest "));
}

#[test]
fn smoothed_history_is_non_increasing() {
    let f = Fixture::new();
    let c = f.corpus("c.jsonl", "n_dialogues=5\nseed=1\n");
    let cfg = f.write("full.kv", "epochs=100\nbatch_size=32\n");
    ok(&["train", &c, "--config", &cfg, "--out", &f.p("m.ckpt")]);
    let h = history(&f.p("m.ckpt"));
    let s: Vec<f64> = h.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    assert!(s.windows(2).all(|w| w[1] <= w[0]), "{s:?}");
}

/// Metrics recomputed from the prediction log alone.
fn recompute(log: &str) -> (f64, f64, f64) {
    let mut dialogues: BTreeMap<&str, bool> = BTreeMap::new();
    let mut support: BTreeMap<&str, f64> = BTreeMap::new();
    let mut predicted: BTreeMap<&str, f64> = BTreeMap::new();
    let mut hits: BTreeMap<&str, f64> = BTreeMap::new();
    let (mut n, mut correct) = (0.0, 0.0);
    for line in log.lines().skip(1) {
        let c: Vec<&str> = line.split('\t').collect();
        let ok = c[5] == "1";
        n += 1.0;
        *dialogues.entry(c[0]).or_insert(true) &= ok;
        *support.entry(c[2]).or_default() += 1.0;
        *predicted.entry(c[3]).or_default() += 1.0;
        if ok {
            correct += 1.0;
            *hits.entry(c[2]).or_default() += 1.0;
        }
    }
    let f1: Vec<f64> = support
        .iter()
        .map(|(l, s)| {
            let h = hits.get(l).copied().unwrap_or(0.0);
            let p = predicted.get(l).map_or(0.0, |p| h / p);
            let r = h / s;
            if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
        })
        .collect();
    let full = dialogues.values().filter(|&&v| v).count() as f64 / dialogues.len() as f64;
    (full, correct / n, f1.iter().sum::<f64>() / f1.len() as f64)
}

#[test]
fn eval_log_reproduces_report() {
    let f = Fixture::new();
    // modular vocabularies are closed, so evaluate on the corpus trained on
    let test = f.corpus("c.jsonl", "n_dialogues=12\n");
    let m = f.trained(&test, "m.ckpt", &[]);
    let prefix = f.p("report");
    let out = ok(&["eval", &m, &test, "--out", &prefix]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("full-dialogue accuracy"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(format!("{prefix}.json")).unwrap()).unwrap();
    let log = fs::read_to_string(format!("{prefix}.predictions.tsv")).unwrap();
    assert!(fs::metadata(format!("{prefix}.txt")).is_ok());
    let (full, action, f1) = recompute(&log);
    let get = |k: &str| json[k].as_f64().unwrap();
    assert!((get("full_dialogue_accuracy") - full).abs() <= 1e-12);
    assert!((get("action_accuracy") - action).abs() <= 1e-12);
    assert!((get("macro_f1") - f1).abs() <= 1e-12);
    assert!(full <= action);

    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scripts/recompute_metrics.py");
    if let Ok(py) = Command::new("python3").arg(&script).arg(format!("{prefix}.predictions.tsv")).output() {
        if py.status.success() {
            let v: serde_json::Value = serde_json::from_slice(&py.stdout).unwrap();
            for k in ["full_dialogue_accuracy", "action_accuracy", "macro_f1"] {
                assert!((v[k].as_f64().unwrap() - get(k)).abs() <= 1e-12, "{k}");
            }
        }
    }
}

#[test]
fn eval_rejects_foreign_vocabulary() {
    let f = Fixture::new();
    let a = f.corpus("a.jsonl", "n_dialogues=4\n");
    let b = f.corpus("b.jsonl", "n_dialogues=4\nchitchat=weather\n");
    let ma = f.trained(&a, "a.ckpt", &[]);
    let mb = f.trained(&b, "b.ckpt", &[]);
    fs::copy(format!("{mb}.vocab"), format!("{ma}.vocab")).unwrap();
    assert_eq!(code(&["eval", &ma, &a]), 2);
}

fn matrix(path: &str) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn attention_export_is_causal_and_normalized() {
    let f = Fixture::new();
    let c = f.corpus("c.jsonl", "n_dialogues=4\ndigression_probability=1\n");
    let cfg = f.write("att.kv", "epochs=2\nwidth=16\nff_width=16\nn_heads=2\nn_layers=2\nmax_history=4\n");
    let m = f.p("m.ckpt");
    ok(&["train", &c, "--config", &cfg, "--out", &m]);
    let id = corpus::load(&c).unwrap().dialogues[0].id.clone();
    let prefix = f.p("att");
    ok(&["attention", &m, &c, "--dialogue", &id, "--out", &prefix]);
    for l in 0..2 {
        for stem in ["head0", "head1", "mean"] {
            let base = format!("{prefix}.layer{l}.{stem}");
            assert!(fs::read_to_string(format!("{base}.svg")).unwrap().starts_with("<svg"));
            let mat = matrix(&format!("{base}.tsv"));
            for (t, row) in mat.iter().enumerate() {
                assert!(row[t + 1..].iter().all(|&x| x == 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9, "{base} row {t}");
            }
        }
    }
    assert_eq!(code(&["attention", &m, &c, "--dialogue", "missing", "--out", &prefix]), 2);
    let lstm = f.trained(&c, "l.ckpt", &["--encoder", "lstm"]);
    assert_eq!(code(&["attention", &lstm, &c, "--dialogue", &id, "--out", &prefix]), 2);
}

#[test]
fn curve_table_has_one_row_per_size_and_encoder() {
    let f = Fixture::new();
    let c = f.corpus("c.jsonl", "n_dialogues=16\n");
    let cfg = f.quick_config();
    let out = f.p("curve.tsv");
    ok(&["curve", &c, "--config", &cfg, "--sizes", "4,8", "--seeds", "0", "--out", &out]);
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 2);
    assert!(rows.iter().all(|r| r.split('\t').nth(4).unwrap().parse::<f64>().unwrap() == 0.0));
    assert_eq!(
        code(&["curve", &c, "--config", &cfg, "--sizes", "400", "--seeds", "0", "--out", &out]),
        1
    );
}

fn run_repl(ckpt: &str, script: &str) -> String {
    let mut child = Command::new(env!("CARGO_BIN_EXE_ted"))
        .args(["repl", ckpt])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(script.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn scripted_repl_matches_library_predictions() {
    let f = Fixture::new();
    let c = f.corpus("c.jsonl", "n_dialogues=6\n");
    let m = f.trained(&c, "m.ckpt", &[]);
    let d = corpus::load(&c).unwrap().dialogues[1].clone();
    let lines: Vec<String> = d
        .turns
        .iter()
        .map(|t| {
            let e: Vec<String> = t.user_entities.iter().map(|(k, v)| format!("{k}={v}")).collect();
            if e.is_empty() { t.user_intent.clone() } else { format!("{}[{}]", t.user_intent, e.join(",")) }
        })
        .collect();
    let model = checkpoint::load(&m).unwrap();
    let mut session = Session::new(&model);
    let expected: String = lines
        .iter()
        .map(|l| match session.handle_line(l).unwrap() {
            Reply::Prediction(p) => format_prediction(&p),
            other => panic!("{other:?}"),
        })
        .collect();
    let once = lines.join("\n") + "\n";
    assert_eq!(run_repl(&m, &once), expected);
    let twice = format!("{once}:reset\n{once}:quit\n");
    assert_eq!(run_repl(&m, &twice), format!("{expected}session reset\n{expected}"));
    let unknown = run_repl(&m, "teleport\n:history\n");
    assert!(unknown.starts_with("unknown intent \"teleport\"; known: "));
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["bogus"]), 1);
    assert_eq!(code(&["train", "--nope"]), 1);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["eval", &f.p("none.ckpt"), &f.p("none.jsonl")]), 2);
    let bad = f.write("bad.jsonl", "not json\n");
    assert_eq!(code(&["train", &bad, "--out", &f.p("x.ckpt")]), 2);
    let c = f.corpus("c.jsonl", "n_dialogues=4\n");
    let wild = f.write("wild.kv", "epochs=3\nwidth=16\nff_width=16\nlearning_rate=1e300\n");
    let out = ted(&["train", &c, "--config", &wild, "--out", &f.p("w.ckpt")]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let heads = f.write("heads.kv", "width=10\nn_heads=4\n");
    assert_eq!(code(&["train", &c, "--config", &heads, "--out", &f.p("h.ckpt")]), 2);
    assert_eq!(code(&["train", &c, "--max-history", "x", "--out", &f.p("h.ckpt")]), 1);
}
