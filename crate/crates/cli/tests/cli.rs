//! End-to-end tests driving the built binary: pipelines, file modes, exit
//! codes, and output determinism.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_motiftok"))
}

fn run(args: &[&str], stdin: Option<&[u8]>) -> Output {
    let mut cmd = bin();
    cmd.args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mut child = cmd.spawn().expect("spawn motiftok");
    if let Some(bytes) = stdin {
        child
            .stdin
            .as_mut()
            .expect("stdin piped")
            .write_all(bytes)
            .expect("write stdin");
    }
    drop(child.stdin.take());
    child.wait_with_output().expect("wait for motiftok")
}

fn ok(args: &[&str], stdin: Option<&[u8]>) -> Vec<u8> {
    let out = run(args, stdin);
    assert!(
        out.status.success(),
        "motiftok {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

/// Parses `series_id,t,value` CSV output into (id, value) rows.
fn parse_long(bytes: &[u8]) -> Vec<(String, Option<f64>)> {
    let text = String::from_utf8_lossy(bytes);
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty() && !l.starts_with("series_id"))
        .map(|l| {
            let mut fields = l.split(',');
            let id = fields.next().unwrap().to_string();
            let _t = fields.next().unwrap();
            let value = fields.next().unwrap();
            (id, value.parse::<f64>().ok())
        })
        .collect()
}

fn train_corpus(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("train.csv");
    ok(
        &[
            "synth", "--kind", "ar1", "--phi", "0.9", "--n", "1024", "--seed", "100", "--count",
            "8", "--id-prefix", "train", "--out", path.to_str().unwrap(),
        ],
        None,
    );
    path
}

fn train_vocab(dir: &Path, corpus: &Path, p_min: &str, out: &str) -> std::path::PathBuf {
    let path = dir.join(out);
    ok(
        &[
            "train-vocab",
            "--input",
            corpus.to_str().unwrap(),
            "--kind",
            "uniform",
            "--bins",
            "22",
            "--p-min",
            p_min,
            "--out",
            path.to_str().unwrap(),
        ],
        None,
    );
    path
}

#[test]
fn piped_round_trip_stays_within_the_error_bound() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = train_corpus(dir.path());
    let vocab = train_vocab(dir.path(), &corpus, "32", "vocab.json");

    let original = ok(
        &[
            "synth", "--kind", "sinusoid", "--period", "24", "--n", "4096", "--seed", "1",
        ],
        None,
    );
    let tokens = ok(&["encode", "--vocab", vocab.to_str().unwrap()], Some(&original));
    assert!(tokens.starts_with(b"#meta") || tokens.starts_with(b"#sidecar"));
    let decoded = ok(&["decode", "--vocab", vocab.to_str().unwrap()], Some(&tokens));

    let a = parse_long(&original);
    let b = parse_long(&decoded);
    assert_eq!(a.len(), 4096);
    assert_eq!(a.len(), b.len());
    // The raw-scale bound is max_error times the series' std (population std
    // of a full-period sinusoid is 1/sqrt(2)).
    let bound = 10.0 / 44.0 / 2.0f64.sqrt() + 1e-9;
    for ((_, x), (_, y)) in a.iter().zip(&b) {
        let (x, y) = (x.unwrap(), y.unwrap());
        assert!((x - y).abs() <= bound, "|{x} - {y}| > {bound}");
    }
}

#[test]
fn file_mode_encode_decode_with_cdec() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = train_corpus(dir.path());
    let vocab = train_vocab(dir.path(), &corpus, "32", "vocab.json");

    let tokens = dir.path().join("tokens.csv");
    ok(
        &[
            "encode",
            "--vocab",
            vocab.to_str().unwrap(),
            "--input",
            corpus.to_str().unwrap(),
            "--out",
            tokens.to_str().unwrap(),
        ],
        None,
    );
    let sidecar = dir.path().join("tokens.csv.meta.json");
    assert!(sidecar.exists(), "default sidecar file missing");

    let table = dir.path().join("table.json");
    ok(
        &[
            "train-cdec",
            "--input",
            corpus.to_str().unwrap(),
            "--vocab",
            vocab.to_str().unwrap(),
            "--out",
            table.to_str().unwrap(),
        ],
        None,
    );

    let decoded = dir.path().join("decoded.csv");
    ok(
        &[
            "decode",
            "--vocab",
            vocab.to_str().unwrap(),
            "--input",
            tokens.to_str().unwrap(),
            "--sidecar",
            sidecar.to_str().unwrap(),
            "--cdec",
            table.to_str().unwrap(),
            "--out",
            decoded.to_str().unwrap(),
        ],
        None,
    );
    let rows = parse_long(&std::fs::read(&decoded).unwrap());
    assert_eq!(rows.len(), 8 * 1024);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = train_corpus(dir.path());
    let a = train_vocab(dir.path(), &corpus, "32", "a.json");
    let b = train_vocab(dir.path(), &corpus, "32", "b.json");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn missing_input_fails_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("vocab.json");
    let result = run(
        &[
            "train-vocab",
            "--input",
            dir.path().join("nope.csv").to_str().unwrap(),
            "--kind",
            "uniform",
            "--bins",
            "22",
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(result.status.code(), Some(2));
    assert!(!out.exists(), "no partial file may be left behind");
}

#[test]
fn usage_errors_exit_with_one() {
    let result = run(&["encode", "--bogus-flag"], None);
    assert_eq!(result.status.code(), Some(1));
    let result = run(&["synth", "--kind", "sinusoid", "--n", "8"], None);
    assert_eq!(result.status.code(), Some(1), "missing required --seed");
}

#[test]
fn vocab_hash_mismatch_is_a_hard_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = train_corpus(dir.path());
    let vocab = train_vocab(dir.path(), &corpus, "32", "vocab.json");
    let other = train_vocab(dir.path(), &corpus, "16", "other.json");

    let tokens = ok(
        &[
            "encode",
            "--vocab",
            vocab.to_str().unwrap(),
            "--input",
            corpus.to_str().unwrap(),
        ],
        None,
    );
    let result = run(&["decode", "--vocab", other.to_str().unwrap()], Some(&tokens));
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("vocabulary"));
}

#[test]
fn noise_sweep_emits_one_row_per_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = train_corpus(dir.path());
    let vocab = train_vocab(dir.path(), &corpus, "32", "vocab.json");
    let csv = dir.path().join("sweep.csv");
    ok(
        &[
            "eval",
            "--input",
            corpus.to_str().unwrap(),
            "--vocab",
            vocab.to_str().unwrap(),
            "--sweep",
            "noise",
            "--sigmas",
            "0,0.1,0.2,0.3",
            "--seed",
            "7",
            "--out",
            dir.path().join("sweep.json").to_str().unwrap(),
            "--csv",
            csv.to_str().unwrap(),
        ],
        None,
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("aug,"))
        .collect();
    assert_eq!(rows.len(), 4);
    // The sigma = 0 row is the clean baseline.
    assert!(rows[0].starts_with("noise,0,7,"));
    let drop_field = rows[0].split(',').nth(7).unwrap();
    assert_eq!(drop_field, "0");
}

#[test]
fn max_merges_zero_gives_a_bare_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = train_corpus(dir.path());
    let vocab = dir.path().join("bare.json");
    ok(
        &[
            "train-vocab",
            "--input",
            corpus.to_str().unwrap(),
            "--kind",
            "uniform",
            "--bins",
            "22",
            "--max-merges",
            "0",
            "--out",
            vocab.to_str().unwrap(),
        ],
        None,
    );
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&vocab).unwrap()).unwrap();
    assert_eq!(doc["merges"].as_array().unwrap().len(), 0);
    assert_eq!(doc["special"]["mask"], 22);
    assert_eq!(doc["special"]["eos"], 23);
}

#[test]
fn forecast_with_default_protocol() {
    let dir = tempfile::tempdir().unwrap();
    // A long periodic corpus so 128 context tokens exist after compression.
    let corpus = dir.path().join("sin.csv");
    ok(
        &[
            "synth", "--kind", "sinusoid", "--period", "24", "--n", "4800", "--seed", "3",
            "--count", "2", "--out", corpus.to_str().unwrap(),
        ],
        None,
    );
    // Cap the merges so the compressed streams keep more than 128 tokens.
    let vocab = dir.path().join("vocab.json");
    ok(
        &[
            "train-vocab",
            "--input",
            corpus.to_str().unwrap(),
            "--kind",
            "uniform",
            "--bins",
            "22",
            "--p-min",
            "150",
            "--max-merges",
            "8",
            "--out",
            vocab.to_str().unwrap(),
        ],
        None,
    );
    let model = dir.path().join("model.json");
    let fc = dir.path().join("fc.csv");
    let report = dir.path().join("report.json");
    ok(
        &[
            "forecast",
            "--input",
            corpus.to_str().unwrap(),
            "--vocab",
            vocab.to_str().unwrap(),
            "--order",
            "8",
            "--alpha",
            "0",
            "--model-out",
            model.to_str().unwrap(),
            "--out",
            fc.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ],
        None,
    );
    let rows = parse_long(&std::fs::read(&fc).unwrap());
    assert_eq!(rows.len(), 2 * 64, "t_in 128 / horizon 64 defaults");

    // Reusing the stored model gives the identical forecast.
    let fc2 = dir.path().join("fc2.csv");
    ok(
        &[
            "forecast",
            "--input",
            corpus.to_str().unwrap(),
            "--vocab",
            vocab.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--out",
            fc2.to_str().unwrap(),
        ],
        None,
    );
    let a: Vec<String> = std::fs::read_to_string(&fc)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    let b: Vec<String> = std::fs::read_to_string(&fc2)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    assert_eq!(a, b);

    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(doc["generation_compression"]["output"].as_f64().unwrap() >= 1.0);
}

#[test]
fn stats_reports_hierarchy_and_exports_motifs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = train_corpus(dir.path());
    let vocab = train_vocab(dir.path(), &corpus, "32", "vocab.json");
    let motifs = dir.path().join("motifs.csv");
    let stdout = ok(
        &[
            "stats",
            "--vocab",
            vocab.to_str().unwrap(),
            "--motifs",
            "5",
            "--by",
            "length",
            "--motifs-out",
            motifs.to_str().unwrap(),
        ],
        None,
    );
    let doc: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    assert_eq!(doc["M"], 22);
    assert!(doc["merges"].as_u64().unwrap() > 0);
    let per_depth: u64 = doc["hierarchy"]["per_depth"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(per_depth, doc["merges"].as_u64().unwrap());

    let lines: Vec<String> = std::fs::read_to_string(&motifs)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    assert_eq!(lines.len(), 6); // header + 5 motifs
    assert!(lines[0].starts_with("token_id,"));
}

#[test]
fn sample_mode_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = train_corpus(dir.path());
    let vocab = train_vocab(dir.path(), &corpus, "32", "vocab.json");
    let result = run(
        &[
            "forecast",
            "--input",
            corpus.to_str().unwrap(),
            "--vocab",
            vocab.to_str().unwrap(),
            "--order",
            "2",
            "--alpha",
            "0.1",
            "--mode",
            "sample",
        ],
        None,
    );
    assert_eq!(result.status.code(), Some(1));
}

#[test]
fn wide_format_corpora_load() {
    let dir = tempfile::tempdir().unwrap();
    let wide = dir.path().join("wide.csv");
    std::fs::write(&wide, "a,b\n1.0,2.0\n2.0,\n3.0,4.0\n1.0,2.0\n2.0,3.0\n3.0,4.0\n").unwrap();
    let vocab = dir.path().join("vocab.json");
    ok(
        &[
            "train-vocab",
            "--input",
            wide.to_str().unwrap(),
            "--format",
            "wide",
            "--kind",
            "uniform",
            "--bins",
            "4",
            "--p-min",
            "1",
            "--out",
            vocab.to_str().unwrap(),
        ],
        None,
    );
    let tokens = ok(
        &[
            "encode",
            "--vocab",
            vocab.to_str().unwrap(),
            "--input",
            wide.to_str().unwrap(),
            "--format",
            "wide",
        ],
        None,
    );
    let decoded = ok(&["decode", "--vocab", vocab.to_str().unwrap()], Some(&tokens));
    let rows = parse_long(&decoded);
    assert_eq!(rows.len(), 12);
    // The missing cell survives the whole pipeline as an empty value.
    assert_eq!(rows[7], ("b".to_string(), None));
}
