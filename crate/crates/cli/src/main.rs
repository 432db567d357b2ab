//! Command-line pipelines for motif-based time series tokenization.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
//! violation. `MOTIFTOK_THREADS` caps internal parallelism. All randomized
//! commands take an explicit `--seed`; outputs embed their resolved
//! configuration and input hashes and are written atomically.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use motiftok::cdec::{fit_cdec, CondDecodeTable};
use motiftok::codec::{
    compression, decode_tokens, encode, read_token_stream, tokenize_series, write_token_stream,
    StreamSidecar, TokenSeq,
};
use motiftok::eval::{
    export_motifs, patch_baseline, reconstruction_report, robustness_sweep, ErrorScale,
    MotifSortKey,
};
use motiftok::forecast::{
    fit_markov, forecast_series, generation_compression, Forecast, GenMode, MarkovModel,
};
use motiftok::quant::{build_bins, quantize, BinKind, SymbolSeq};
use motiftok::series::{
    denormalize, normalize, parse_corpus, synth, write_corpus_long, AugKind, AugSpec, CsvFormat,
    RawSeries, SynthConfig, SynthKind,
};
use motiftok::vocab::{train_vocab, Vocabulary};
use serde_json::json;
use sha2::{Digest, Sha256};

const TOOL: &str = "motiftok";
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = TOOL, version, about = "Motif-based tokenization for time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic series as long CSV
    Synth(SynthArgs),
    /// Train a merge-rule vocabulary on a corpus
    TrainVocab(TrainVocabArgs),
    /// Tokenize a corpus into a token stream
    Encode(EncodeArgs),
    /// Invert a token stream back to values
    Decode(DecodeArgs),
    /// Fit the conditional decoding table
    TrainCdec(TrainCdecArgs),
    /// Inspect a vocabulary: hierarchy and motif export
    Stats(StatsArgs),
    /// Reconstruction/compression report and robustness sweeps
    Eval(EvalArgs),
    /// Fit or load a Markov model and forecast each series
    Forecast(ForecastArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Long,
    Wide,
}

impl From<FormatArg> for CsvFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Long => CsvFormat::Long,
            FormatArg::Wide => CsvFormat::Wide,
        }
    }
}

#[derive(Args)]
struct InputArgs {
    /// Input CSV path; stdin when omitted
    #[arg(long)]
    input: Option<PathBuf>,
    /// Input CSV layout
    #[arg(long, value_enum, default_value = "long")]
    format: FormatArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SynthKindArg {
    Sinusoid,
    Ar1,
    Constant,
    Square,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: SynthKindArg,
    /// Samples per series
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// Number of series (seed advances by one per series)
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value = "synth")]
    id_prefix: String,
    /// Period in samples (sinusoid, square)
    #[arg(long)]
    period: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 0.0)]
    phase: f64,
    /// AR(1) coefficient, |phi| < 1
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Constant level
    #[arg(long, default_value_t = 1.0)]
    value: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Uniform,
    Gaussian,
    Empirical,
}

#[derive(Args)]
struct TrainVocabArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Number of quantization bins M
    #[arg(long)]
    bins: u32,
    #[arg(long, default_value_t = -5.0)]
    lb: f64,
    #[arg(long, default_value_t = 5.0)]
    ub: f64,
    #[arg(long, default_value_t = 1000)]
    p_min: u64,
    #[arg(long)]
    max_merges: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    vocab: PathBuf,
    /// Token stream path; stdout (with inline sidecar) when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sidecar JSON path; defaults to `<out>.meta.json`
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Token stream path; stdin when omitted
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
    /// Sidecar JSON path; required unless the stream embeds one
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Conditional decoding table
    #[arg(long)]
    cdec: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainCdecArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fit on a model's forecasts instead of ground-truth symbols
    #[arg(long)]
    model: Option<PathBuf>,
    /// Context tokens per forecast (model mode)
    #[arg(long, default_value_t = 128)]
    t_in: usize,
    /// Forecast horizon in samples (model mode)
    #[arg(long, default_value_t = 64)]
    horizon: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SortKeyArg {
    Length,
    Frequency,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// Export the top-K motifs
    #[arg(long)]
    motifs: Option<usize>,
    #[arg(long, value_enum, default_value = "length")]
    by: SortKeyArg,
    /// Motif export path (`.json` for JSON, anything else for CSV)
    #[arg(long)]
    motifs_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScaleArg {
    Normalized,
    Raw,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepArg {
    Noise,
    Trend,
    Transient,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrendKindArg {
    Linear,
    Exp,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    cdec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "normalized")]
    scale: ScaleArg,
    /// Patch lengths for the fixed-compression baseline
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8])]
    patch_len: Vec<usize>,
    /// Robustness sweep family; omits the sweep when absent
    #[arg(long, value_enum)]
    sweep: Option<SweepArg>,
    /// Noise levels for `--sweep noise`
    #[arg(long, value_delimiter = ',')]
    sigmas: Vec<f64>,
    /// Trend magnitudes for `--sweep trend`
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long, value_enum, default_value = "linear")]
    trend_kind: TrendKindArg,
    /// Transient probability for `--sweep transient`
    #[arg(long, default_value_t = 0.01)]
    p: f64,
    /// Transient amplitude for `--sweep transient`
    #[arg(long, default_value_t = 3.0)]
    amplitude: f64,
    /// Seed for augmentation sweeps
    #[arg(long)]
    seed: Option<u64>,
    /// Report JSON path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plot-ready CSV path (per-series rows, or one row per sweep point)
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Greedy,
    Sample,
}

#[derive(Args)]
struct ForecastArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    vocab: PathBuf,
    /// Load a fitted model instead of fitting on the input corpus
    #[arg(long, conflicts_with_all = ["order", "alpha"])]
    model: Option<PathBuf>,
    /// Markov order when fitting
    #[arg(long, required_unless_present = "model")]
    order: Option<usize>,
    /// Additive smoothing when fitting
    #[arg(long, required_unless_present = "model")]
    alpha: Option<f64>,
    /// Save the fitted model
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long)]
    cdec: Option<PathBuf>,
    /// Context length in tokens
    #[arg(long, default_value_t = 128)]
    t_in: usize,
    /// Forecast horizon in samples
    #[arg(long, default_value_t = 64)]
    horizon: usize,
    #[arg(long, value_enum, default_value = "greedy")]
    mode: ModeArg,
    /// Seed (required for `--mode sample`)
    #[arg(long, required_if_eq("mode", "sample"))]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Forecast CSV path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary JSON path
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    init_threads();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        let internal = err
            .chain()
            .any(|c| matches!(c.downcast_ref::<motiftok::Error>(), Some(motiftok::Error::Invariant(_))));
        std::process::exit(if internal { 3 } else { 2 });
    }
}

fn init_threads() {
    if let Ok(value) = std::env::var("MOTIFTOK_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        } else {
            eprintln!("warning: ignoring unparseable MOTIFTOK_THREADS={value:?}");
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::TrainVocab(args) => cmd_train_vocab(args),
        Command::Encode(args) => cmd_encode(args),
        Command::Decode(args) => cmd_decode(args),
        Command::TrainCdec(args) => cmd_train_cdec(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Forecast(args) => cmd_forecast(args),
    }
}

// ---------------------------------------------------------------------------
// shared plumbing

fn hex_sha256(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Provenance object embedded in every artifact: tool version, the fully
/// resolved command configuration, and content hashes of the inputs.
fn build_meta(command: &str, config: serde_json::Value, inputs: &[(String, String)]) -> serde_json::Value {
    let hashes: serde_json::Map<String, serde_json::Value> = inputs
        .iter()
        .map(|(name, hash)| (name.clone(), json!(hash)))
        .collect();
    json!({
        "tool": TOOL,
        "version": VERSION,
        "command": command,
        "config": config,
        "inputs": hashes,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, bytes),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

/// Reads an input file (or stdin), returning the parsed corpus plus a
/// `(source name, content hash)` pair for provenance.
fn read_corpus(args: &InputArgs) -> Result<(Vec<RawSeries>, (String, String))> {
    let format: CsvFormat = args.format.into();
    match &args.input {
        Some(path) => {
            let bytes = std::fs::read(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let corpus = load_corpus_bytes(&bytes, format)
                .with_context(|| format!("parsing {}", path.display()))?;
            Ok((corpus, (path.display().to_string(), hex_sha256(&bytes))))
        }
        None => {
            let mut bytes = Vec::new();
            std::io::stdin().read_to_end(&mut bytes).context("reading stdin")?;
            let corpus = load_corpus_bytes(&bytes, format).context("parsing stdin")?;
            Ok((corpus, ("stdin".to_string(), hex_sha256(&bytes))))
        }
    }
}

fn load_corpus_bytes(bytes: &[u8], format: CsvFormat) -> Result<Vec<RawSeries>> {
    Ok(parse_corpus(bytes, format)?)
}

fn file_hash(path: &Path) -> Result<(String, String)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((path.display().to_string(), hex_sha256(&bytes)))
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::load(path).with_context(|| format!("loading vocabulary {}", path.display()))
}

/// Loads a decoding table and enforces the vocabulary binding recorded in
/// its provenance block.
fn load_cdec(path: &Path, vocab: &Vocabulary) -> Result<CondDecodeTable> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let table = CondDecodeTable::from_json_str(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(recorded) = doc.pointer("/meta/vocab_hash").and_then(|v| v.as_str()) {
        let found = vocab.hash();
        if recorded != found {
            bail!(
                "table {} was fitted for vocabulary {recorded}, not {found}",
                path.display()
            );
        }
    }
    if table.m() != vocab.bins().m() {
        bail!(
            "table {} has M = {}, vocabulary has M = {}",
            path.display(),
            table.m(),
            vocab.bins().m()
        );
    }
    Ok(table)
}

fn corpus_csv_with_meta(corpus: &[RawSeries], meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    writeln!(buf, "#meta {}", serde_json::to_string(meta)?)?;
    write_corpus_long(&mut buf, corpus)?;
    Ok(buf)
}

fn normalized_corpus(corpus: &[RawSeries]) -> Result<Vec<RawSeries>> {
    corpus
        .iter()
        .map(|s| Ok(normalize(s)?.0))
        .collect::<Result<_>>()
}

// ---------------------------------------------------------------------------
// synth

fn cmd_synth(args: SynthArgs) -> Result<()> {
    if args.count == 0 {
        bail!("--count must be >= 1");
    }
    let kind = match args.kind {
        SynthKindArg::Sinusoid => SynthKind::Sinusoid {
            period: args.period.ok_or_else(|| anyhow!("--period is required for sinusoid"))?,
            amplitude: args.amplitude,
            phase: args.phase,
        },
        SynthKindArg::Square => SynthKind::Square {
            period: args.period.ok_or_else(|| anyhow!("--period is required for square"))?,
            amplitude: args.amplitude,
        },
        SynthKindArg::Ar1 => SynthKind::Ar1 {
            phi: args.phi.ok_or_else(|| anyhow!("--phi is required for ar1"))?,
            sigma: args.sigma,
        },
        SynthKindArg::Constant => SynthKind::Constant { value: args.value },
    };
    let mut corpus = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let config = SynthConfig {
            id: if args.count == 1 {
                args.id_prefix.clone()
            } else {
                format!("{}-{i:03}", args.id_prefix)
            },
            kind,
            n: args.n,
            seed: args.seed.wrapping_add(i as u64),
        };
        corpus.push(synth(&config)?);
    }
    let meta = build_meta(
        "synth",
        json!({
            "kind": kind,
            "n": args.n,
            "seed": args.seed,
            "count": args.count,
            "id_prefix": args.id_prefix,
        }),
        &[],
    );
    emit(&args.out, &corpus_csv_with_meta(&corpus, &meta)?)
}

// ---------------------------------------------------------------------------
// train-vocab

fn cmd_train_vocab(args: TrainVocabArgs) -> Result<()> {
    let (corpus, input_hash) = read_corpus(&args.input)?;
    let normed = normalized_corpus(&corpus)?;
    let kind = match args.kind {
        KindArg::Uniform => BinKind::TruncatedUniform { lb: args.lb, ub: args.ub },
        KindArg::Gaussian => BinKind::Gaussian,
        KindArg::Empirical => BinKind::Empirical,
    };
    let training_values: Vec<f64> = match kind {
        BinKind::Empirical => normed.iter().flat_map(|s| s.observed()).collect(),
        _ => Vec::new(),
    };
    let bins = build_bins(
        kind,
        args.bins,
        (!training_values.is_empty()).then_some(training_values.as_slice()),
    )?;
    let symbols: Vec<SymbolSeq> = normed.iter().map(|s| quantize(s, &bins, true)).collect();
    let vocab = train_vocab(&symbols, &bins, args.p_min, args.max_merges)?;

    let mut mean_c = 0.0;
    for sym in &symbols {
        mean_c += compression(&encode(sym, &vocab)?, &vocab)?;
    }
    mean_c /= symbols.len() as f64;
    eprintln!(
        "trained vocabulary: {} series, {} merges, |V| = {}, training compression {:.3}",
        corpus.len(),
        vocab.merges().len(),
        vocab.size(),
        mean_c
    );

    let meta = build_meta(
        "train-vocab",
        json!({
            "kind": kind,
            "bins": args.bins,
            "p_min": args.p_min,
            "max_merges": args.max_merges,
            "training_compression": mean_c,
        }),
        &[input_hash],
    );
    write_atomic(&args.out, vocab.to_json(Some(meta)).as_bytes())
}

// ---------------------------------------------------------------------------
// encode / decode

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    let vocab = load_vocab(&args.vocab)?;
    let (corpus, input_hash) = read_corpus(&args.input)?;
    let vocab_hash_input = file_hash(&args.vocab)?;
    let mut entries: Vec<(String, TokenSeq)> = Vec::with_capacity(corpus.len());
    let mut norm_stats = BTreeMap::new();
    for series in &corpus {
        let (tokens, stats) = tokenize_series(series, &vocab)?;
        norm_stats.insert(series.id.clone(), stats);
        entries.push((series.id.clone(), tokens));
    }
    let meta = build_meta(
        "encode",
        json!({"vocab": args.vocab, "series": corpus.len()}),
        &[input_hash, vocab_hash_input],
    );
    let sidecar = StreamSidecar {
        vocab_hash: vocab.hash(),
        norm_stats,
        meta: Some(meta.clone()),
    };
    match &args.out {
        Some(out) => {
            let mut buf = Vec::new();
            writeln!(buf, "#meta {}", serde_json::to_string(&meta)?)?;
            write_token_stream(&mut buf, &entries, &sidecar, false)?;
            write_atomic(out, &buf)?;
            let sidecar_path = args
                .sidecar
                .clone()
                .unwrap_or_else(|| sidecar_path_for(out));
            write_atomic(&sidecar_path, serde_json::to_string_pretty(&sidecar)?.as_bytes())
        }
        None => {
            let mut buf = Vec::new();
            writeln!(buf, "#meta {}", serde_json::to_string(&meta)?)?;
            write_token_stream(&mut buf, &entries, &sidecar, true)?;
            emit(&None, &buf)
        }
    }
}

fn sidecar_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

fn cmd_decode(args: DecodeArgs) -> Result<()> {
    let vocab = load_vocab(&args.vocab)?;
    let vocab_hash_input = file_hash(&args.vocab)?;
    let (bytes, stream_input) = match &args.input {
        Some(path) => {
            let bytes = std::fs::read(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let hash = hex_sha256(&bytes);
            (bytes, (path.display().to_string(), hash))
        }
        None => {
            let mut bytes = Vec::new();
            std::io::stdin().read_to_end(&mut bytes).context("reading stdin")?;
            let hash = hex_sha256(&bytes);
            (bytes, ("stdin".to_string(), hash))
        }
    };
    let (entries, inline_sidecar) = read_token_stream(bytes.as_slice(), &vocab)?;
    let sidecar: StreamSidecar = match (&args.sidecar, inline_sidecar) {
        (Some(path), _) => serde_json::from_str(
            &std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?,
        )?,
        (None, Some(sidecar)) => sidecar,
        (None, None) => bail!("token stream has no inline sidecar; pass --sidecar"),
    };
    let found = vocab.hash();
    if sidecar.vocab_hash != found {
        bail!(
            "token stream was encoded with vocabulary {}, not {found}",
            sidecar.vocab_hash
        );
    }
    let table = args.cdec.as_deref().map(|p| load_cdec(p, &vocab)).transpose()?;

    let mut corpus = Vec::with_capacity(entries.len());
    for (id, tokens) in &entries {
        let stats = sidecar
            .norm_stats
            .get(id)
            .ok_or_else(|| anyhow!("sidecar has no normalization stats for series {id:?}"))?;
        let symbols = decode_tokens(tokens, &vocab)?;
        let values = match &table {
            Some(table) => motiftok::cdec::apply_cdec(&symbols, table, vocab.bins())?,
            None => motiftok::quant::dequantize(&symbols, vocab.bins())?,
        };
        let normalized = RawSeries { id: id.clone(), values };
        corpus.push(denormalize(&normalized, stats)?);
    }
    let meta = build_meta(
        "decode",
        json!({
            "vocab": args.vocab,
            "cdec": args.cdec,
            "series": corpus.len(),
        }),
        &[stream_input, vocab_hash_input],
    );
    emit(&args.out, &corpus_csv_with_meta(&corpus, &meta)?)
}

// ---------------------------------------------------------------------------
// train-cdec

fn cmd_train_cdec(args: TrainCdecArgs) -> Result<()> {
    let vocab = load_vocab(&args.vocab)?;
    let vocab_hash_input = file_hash(&args.vocab)?;
    let (corpus, input_hash) = read_corpus(&args.input)?;
    let bins = vocab.bins();
    let normed = normalized_corpus(&corpus)?;

    let (table, mode) = match &args.model {
        None => {
            // Model-independent: fit on ground-truth symbols.
            let symbols: Vec<SymbolSeq> =
                normed.iter().map(|s| quantize(s, bins, false)).collect();
            let pairs: Vec<(&RawSeries, &SymbolSeq)> =
                normed.iter().zip(symbols.iter()).collect();
            (fit_cdec(&pairs, bins)?, "independent")
        }
        Some(model_path) => {
            // Model-dependent: forecast the tail of each series and fit on
            // (true values, forecast symbols) aligned by sample index over
            // the common horizon.
            let model = MarkovModel::load(model_path, &vocab)
                .with_context(|| format!("loading model {}", model_path.display()))?;
            let mut truth_rows: Vec<RawSeries> = Vec::new();
            let mut symbol_rows: Vec<SymbolSeq> = Vec::new();
            for series in &corpus {
                if series.len() <= args.horizon {
                    bail!(
                        "series {:?} has {} samples, need more than the horizon {}",
                        series.id,
                        series.len(),
                        args.horizon
                    );
                }
                let split = series.len() - args.horizon;
                let history = RawSeries::new(series.id.clone(), series.values[..split].to_vec())?;
                let (_, stats) = normalize(&history)?;
                let symbols = quantize(&normalize(&history)?.0, bins, false);
                let tokens = encode(&symbols, &vocab)?;
                if tokens.ids.len() < args.t_in {
                    bail!(
                        "series {:?} supplies {} context tokens, need {}",
                        series.id,
                        tokens.ids.len(),
                        args.t_in
                    );
                }
                let context = &tokens.ids[tokens.ids.len() - args.t_in..];
                let generated = motiftok::forecast::generate(
                    &model,
                    context,
                    args.horizon,
                    GenMode::Greedy,
                    &vocab,
                )?;
                let forecast_symbols = decode_tokens(&generated, &vocab)?;
                let truncated: Vec<u32> =
                    forecast_symbols.ids()[..args.horizon.min(forecast_symbols.sample_len())]
                        .to_vec();
                let horizon = truncated.len();
                let truth: Vec<Option<f64>> = series.values[split..split + horizon]
                    .iter()
                    .map(|v| v.map(|v| (v - stats.mean) / stats.std))
                    .collect();
                truth_rows.push(RawSeries::new(series.id.clone(), truth)?);
                symbol_rows.push(SymbolSeq::new(truncated, bins.m())?);
            }
            let pairs: Vec<(&RawSeries, &SymbolSeq)> =
                truth_rows.iter().zip(symbol_rows.iter()).collect();
            (fit_cdec(&pairs, bins)?, "model")
        }
    };

    eprintln!(
        "fitted conditional table: {} of {} cells occupied, {} training pairs",
        table.occupied_cells(),
        (bins.m() * bins.m()),
        table.total_count()
    );
    let mut inputs = vec![input_hash, vocab_hash_input];
    if let Some(model_path) = &args.model {
        inputs.push(file_hash(model_path)?);
    }
    let mut meta = build_meta(
        "train-cdec",
        json!({
            "vocab": args.vocab,
            "mode": mode,
            "t_in": args.model.is_some().then_some(args.t_in),
            "horizon": args.model.is_some().then_some(args.horizon),
        }),
        &inputs,
    );
    meta["vocab_hash"] = json!(vocab.hash());
    write_atomic(&args.out, table.to_json(Some(meta)).as_bytes())
}

// ---------------------------------------------------------------------------
// stats

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let vocab = load_vocab(&args.vocab)?;
    let vocab_hash_input = file_hash(&args.vocab)?;
    let hierarchy = vocab.hierarchy_stats();
    let meta = build_meta(
        "stats",
        json!({"vocab": args.vocab, "motifs": args.motifs}),
        &[vocab_hash_input],
    );
    let kind = match vocab.bins().kind() {
        BinKind::TruncatedUniform { .. } => "truncated_uniform",
        BinKind::Gaussian => "gaussian",
        BinKind::Empirical => "empirical",
    };
    let doc = json!({
        "vocab_hash": vocab.hash(),
        "kind": kind,
        "M": vocab.bins().m(),
        "size": vocab.size(),
        "merges": vocab.merges().len(),
        "p_min": vocab.p_min(),
        "hierarchy": hierarchy,
        "meta": meta,
    });
    emit(&args.out, format!("{}\n", serde_json::to_string_pretty(&doc)?).as_bytes())?;

    if let Some(top_k) = args.motifs {
        let key = match args.by {
            SortKeyArg::Length => MotifSortKey::Length,
            SortKeyArg::Frequency => MotifSortKey::Frequency,
        };
        let records = export_motifs(&vocab, top_k, key);
        let out = args
            .motifs_out
            .ok_or_else(|| anyhow!("--motifs requires --motifs-out"))?;
        if out.extension().is_some_and(|e| e == "json") {
            write_atomic(&out, format!("{}\n", serde_json::to_string_pretty(&records)?).as_bytes())?;
        } else {
            let mut buf = Vec::new();
            writeln!(buf, "token_id,rank,length,depth,count_at_creation,symbols,center_values")?;
            for r in &records {
                let symbols: Vec<String> = r.symbols.iter().map(u32::to_string).collect();
                let centers: Vec<String> = r.center_values.iter().map(f64::to_string).collect();
                writeln!(
                    buf,
                    "{},{},{},{},{},{},{}",
                    r.token_id,
                    r.rank,
                    r.length,
                    r.depth,
                    r.count_at_creation,
                    symbols.join(" "),
                    centers.join(" ")
                )?;
            }
            write_atomic(&out, &buf)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let vocab = load_vocab(&args.vocab)?;
    let vocab_hash_input = file_hash(&args.vocab)?;
    let (corpus, input_hash) = read_corpus(&args.input)?;
    let table = args.cdec.as_deref().map(|p| load_cdec(p, &vocab)).transpose()?;
    let scale = match args.scale {
        ScaleArg::Normalized => ErrorScale::Normalized,
        ScaleArg::Raw => ErrorScale::Raw,
    };
    let mut inputs = vec![input_hash, vocab_hash_input];
    if let Some(cdec) = &args.cdec {
        inputs.push(file_hash(cdec)?);
    }

    match args.sweep {
        None => {
            let report = reconstruction_report(&corpus, &vocab, table.as_ref(), scale)?;
            let patches: Vec<serde_json::Value> = args
                .patch_len
                .iter()
                .map(|&len| {
                    let tokens: usize = corpus.iter().map(|s| patch_baseline(s.len(), len)).sum();
                    let mean_c = corpus
                        .iter()
                        .map(|s| s.len() as f64 / patch_baseline(s.len(), len) as f64)
                        .sum::<f64>()
                        / corpus.len() as f64;
                    json!({"patch_len": len, "tokens": tokens, "mean_compression": mean_c})
                })
                .collect();
            let meta = build_meta(
                "eval",
                json!({"vocab": args.vocab, "cdec": args.cdec, "scale": scale}),
                &inputs,
            );
            let doc = json!({
                "report": report,
                "patch_baselines": patches,
                "meta": meta,
            });
            emit(&args.out, format!("{}\n", serde_json::to_string_pretty(&doc)?).as_bytes())?;
            if let Some(csv) = &args.csv {
                let mut buf = Vec::new();
                writeln!(buf, "#meta {}", serde_json::to_string(&meta)?)?;
                writeln!(buf, "series_id,n,t,compression,recon_mse_centers,recon_mse_cdec")?;
                for r in &report.per_series {
                    writeln!(
                        buf,
                        "{},{},{},{},{},{}",
                        r.id,
                        r.n,
                        r.t,
                        r.compression,
                        r.recon_mse_centers,
                        r.recon_mse_cdec.map(|v| v.to_string()).unwrap_or_default()
                    )?;
                }
                write_atomic(csv, &buf)?;
            }
            Ok(())
        }
        Some(sweep) => {
            let seed = args
                .seed
                .ok_or_else(|| anyhow!("--sweep requires --seed for reproducible augmentation"))?;
            let grid: Vec<AugSpec> = match sweep {
                SweepArg::Noise => {
                    if args.sigmas.is_empty() {
                        bail!("--sweep noise requires --sigmas");
                    }
                    args.sigmas
                        .iter()
                        .map(|&sigma| AugSpec::new(AugKind::GaussianNoise { sigma }, seed))
                        .collect::<motiftok::Result<_>>()?
                }
                SweepArg::Trend => {
                    if args.alphas.is_empty() {
                        bail!("--sweep trend requires --alphas");
                    }
                    args.alphas
                        .iter()
                        .map(|&alpha| {
                            let kind = match args.trend_kind {
                                TrendKindArg::Linear => AugKind::LinearTrend { alpha },
                                TrendKindArg::Exp => AugKind::ExpTrend { alpha },
                            };
                            AugSpec::new(kind, seed)
                        })
                        .collect::<motiftok::Result<_>>()?
                }
                SweepArg::Transient => vec![AugSpec::new(
                    AugKind::Transient {
                        p: args.p,
                        amplitude: args.amplitude,
                    },
                    seed,
                )?],
            };
            let rows = robustness_sweep(&corpus, &vocab, table.as_ref(), &grid, scale)?;
            let meta = build_meta(
                "eval",
                json!({
                    "vocab": args.vocab,
                    "cdec": args.cdec,
                    "scale": scale,
                    "sweep": grid,
                    "seed": seed,
                }),
                &inputs,
            );
            let doc = json!({"sweep": rows, "meta": meta});
            emit(&args.out, format!("{}\n", serde_json::to_string_pretty(&doc)?).as_bytes())?;
            if let Some(csv) = &args.csv {
                let mut buf = Vec::new();
                writeln!(buf, "#meta {}", serde_json::to_string(&meta)?)?;
                writeln!(
                    buf,
                    "aug,param,seed,mean_compression,total_compression,recon_mse_centers,recon_mse_cdec,compression_drop,symbol_change_rate"
                )?;
                for row in &rows {
                    let (kind, param) = match row.aug.kind {
                        AugKind::GaussianNoise { sigma } => ("noise", sigma),
                        AugKind::LinearTrend { alpha } => ("linear_trend", alpha),
                        AugKind::ExpTrend { alpha } => ("exp_trend", alpha),
                        AugKind::Transient { p, .. } => ("transient", p),
                    };
                    writeln!(
                        buf,
                        "{},{},{},{},{},{},{},{},{}",
                        kind,
                        param,
                        row.aug.seed,
                        row.mean_compression,
                        row.total_compression,
                        row.recon_mse_centers,
                        row.recon_mse_cdec.map(|v| v.to_string()).unwrap_or_default(),
                        row.compression_drop,
                        row.symbol_change_rate
                    )?;
                }
                write_atomic(csv, &buf)?;
            }
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// forecast

fn cmd_forecast(args: ForecastArgs) -> Result<()> {
    let vocab = load_vocab(&args.vocab)?;
    let vocab_hash_input = file_hash(&args.vocab)?;
    let (corpus, input_hash) = read_corpus(&args.input)?;
    let table = args.cdec.as_deref().map(|p| load_cdec(p, &vocab)).transpose()?;

    let mut inputs = vec![input_hash, vocab_hash_input];
    let model = match &args.model {
        Some(path) => {
            inputs.push(file_hash(path)?);
            MarkovModel::load(path, &vocab)
                .with_context(|| format!("loading model {}", path.display()))?
        }
        None => {
            let order = args.order.expect("clap enforces order without --model");
            let alpha = args.alpha.expect("clap enforces alpha without --model");
            let streams: Vec<TokenSeq> = corpus
                .iter()
                .map(|s| Ok(tokenize_series(s, &vocab)?.0))
                .collect::<Result<_>>()?;
            fit_markov(&streams, order, alpha, &vocab)?
        }
    };

    let mode = match args.mode {
        ModeArg::Greedy => GenMode::Greedy,
        ModeArg::Sample => GenMode::Sample {
            seed: args.seed.expect("clap enforces seed for sample mode"),
            temperature: args.temperature,
        },
    };
    let runs: Vec<Forecast> = corpus
        .iter()
        .map(|series| {
            forecast_series(&model, &vocab, table.as_ref(), series, args.t_in, args.horizon, mode)
                .with_context(|| format!("forecasting series {:?}", series.id))
        })
        .collect::<Result<_>>()?;
    let gen_stats = generation_compression(&runs)?;

    let config = json!({
        "vocab": args.vocab,
        "model": args.model,
        "order": model.order(),
        "alpha": model.alpha(),
        "cdec": args.cdec,
        "t_in": args.t_in,
        "horizon": args.horizon,
        "mode": match mode {
            GenMode::Greedy => json!("greedy"),
            GenMode::Sample { seed, temperature } =>
                json!({"sample": {"seed": seed, "temperature": temperature}}),
        },
    });
    let meta = build_meta("forecast", config, &inputs);

    if let Some(model_out) = &args.model_out {
        write_atomic(model_out, model.to_json(Some(meta.clone())).as_bytes())?;
    }
    let forecasts: Vec<RawSeries> = runs.iter().map(|r| r.values.clone()).collect();
    emit(&args.out, &corpus_csv_with_meta(&forecasts, &meta)?)?;

    if let Some(report) = &args.report {
        let doc = json!({
            "series": runs.len(),
            "generation_compression": gen_stats,
            "per_series": runs.iter().map(|r| json!({
                "id": r.values.id,
                "context_tokens": r.context_tokens,
                "context_samples": r.context_samples,
                "generated_tokens": r.generated.ids.len(),
                "generated_samples": r.generated.source_len,
            })).collect::<Vec<_>>(),
            "meta": meta,
        });
        write_atomic(report, format!("{}\n", serde_json::to_string_pretty(&doc)?).as_bytes())?;
    }
    eprintln!(
        "forecast {} series: input compression {:.3}, generation compression {:.3}",
        runs.len(),
        gen_stats.input,
        gen_stats.output
    );
    Ok(())
}
