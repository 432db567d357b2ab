//! Corpus ingestion, per-series normalization, seeded synthetic generators,
//! and robustness augmentations.
//!
//! A sample is either an observed finite value or missing; missing samples are
//! carried as `None` end to end and never encoded as a numeric sentinel.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A univariate series: an identifier plus ordered samples, each observed or
/// missing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub id: String,
    pub values: Vec<Option<f64>>,
}

impl RawSeries {
    /// Builds a series, rejecting empty inputs and non-finite observed values.
    pub fn new(id: impl Into<String>, values: Vec<Option<f64>>) -> Result<Self> {
        let id = id.into();
        if values.is_empty() {
            return Err(Error::InvalidParam(format!("series {id:?} is empty")));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "series {id:?} contains a non-finite observed value"
            )));
        }
        Ok(Self { id, values })
    }

    /// Convenience constructor for fully observed data.
    pub fn from_values(id: impl Into<String>, values: &[f64]) -> Result<Self> {
        Self::new(id, values.iter().copied().map(Some).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Iterator over the observed (non-missing) samples.
    pub fn observed(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }

    pub fn observed_count(&self) -> usize {
        self.values.iter().flatten().count()
    }
}

/// Normalization statistics, retained so the transform can be inverted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// Z-normalizes the observed samples to zero mean and unit population
/// standard deviation. Missing positions are preserved. A constant series
/// (zero variance) maps to zeros with `std` substituted by 1 so the transform
/// stays invertible.
pub fn normalize(series: &RawSeries) -> Result<(RawSeries, NormStats)> {
    let n = series.observed_count();
    if n == 0 {
        return Err(Error::AllMissing {
            id: series.id.clone(),
        });
    }
    let mean = series.observed().sum::<f64>() / n as f64;
    let var = series.observed().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = if var.sqrt() > 0.0 { var.sqrt() } else { 1.0 };
    let values = series
        .values
        .iter()
        .map(|v| v.map(|v| (v - mean) / std))
        .collect();
    Ok((
        RawSeries {
            id: series.id.clone(),
            values,
        },
        NormStats { mean, std },
    ))
}

/// Inverts [`normalize`] using the retained statistics.
pub fn denormalize(series: &RawSeries, stats: &NormStats) -> Result<RawSeries> {
    if stats.std <= 0.0 || !stats.std.is_finite() || !stats.mean.is_finite() {
        return Err(Error::InvalidParam(format!(
            "invalid normalization stats: mean {}, std {}",
            stats.mean, stats.std
        )));
    }
    Ok(RawSeries {
        id: series.id.clone(),
        values: series
            .values
            .iter()
            .map(|v| v.map(|v| v * stats.std + stats.mean))
            .collect(),
    })
}

/// Synthetic generator families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    Sinusoid { period: f64, amplitude: f64, phase: f64 },
    Ar1 { phi: f64, sigma: f64 },
    Constant { value: f64 },
    Square { period: f64, amplitude: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub id: String,
    #[serde(flatten)]
    pub kind: SynthKind,
    pub n: usize,
    pub seed: u64,
}

/// Generates a deterministic synthetic series. The AR(1) process uses
/// `x_t = phi * x_{t-1} + e_t`, `e ~ N(0, sigma^2)`, started from a draw of
/// the stationary distribution.
pub fn synth(config: &SynthConfig) -> Result<RawSeries> {
    if config.n == 0 {
        return Err(Error::InvalidParam("synth length must be >= 1".into()));
    }
    let values: Vec<f64> = match config.kind {
        SynthKind::Sinusoid {
            period,
            amplitude,
            phase,
        } => {
            if period <= 0.0 || !period.is_finite() {
                return Err(Error::InvalidParam("sinusoid period must be > 0".into()));
            }
            (0..config.n)
                .map(|t| {
                    // Reduce modulo the period first so integer-period signals
                    // repeat bit-exactly.
                    let tm = (t as f64 + phase) % period;
                    amplitude * (std::f64::consts::TAU * tm / period).sin()
                })
                .collect()
        }
        SynthKind::Ar1 { phi, sigma } => {
            if phi.abs() >= 1.0 {
                return Err(Error::InvalidParam(format!(
                    "ar1 requires |phi| < 1, got {phi}"
                )));
            }
            if sigma < 0.0 {
                return Err(Error::InvalidParam("ar1 sigma must be >= 0".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let draw = |rng: &mut ChaCha8Rng| -> f64 {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            };
            let mut x = draw(&mut rng) / (1.0 - phi * phi).sqrt();
            let mut out = Vec::with_capacity(config.n);
            out.push(x);
            for _ in 1..config.n {
                x = phi * x + draw(&mut rng);
                out.push(x);
            }
            out
        }
        SynthKind::Constant { value } => vec![value; config.n],
        SynthKind::Square { period, amplitude } => {
            if period <= 0.0 || !period.is_finite() {
                return Err(Error::InvalidParam("square period must be > 0".into()));
            }
            (0..config.n)
                .map(|t| {
                    let tm = (t as f64) % period;
                    if tm < period / 2.0 {
                        amplitude
                    } else {
                        -amplitude
                    }
                })
                .collect()
        }
    };
    RawSeries::from_values(config.id.clone(), &values)
}

/// Augmentation families. Magnitudes are calibrated to unit-std inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugKind {
    GaussianNoise { sigma: f64 },
    LinearTrend { alpha: f64 },
    ExpTrend { alpha: f64 },
    Transient { p: f64, amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugSpec {
    #[serde(flatten)]
    pub kind: AugKind,
    pub seed: u64,
}

impl AugSpec {
    pub fn new(kind: AugKind, seed: u64) -> Result<Self> {
        match kind {
            AugKind::GaussianNoise { sigma } if sigma < 0.0 || !sigma.is_finite() => {
                return Err(Error::InvalidParam("noise sigma must be >= 0".into()))
            }
            AugKind::Transient { p, amplitude } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidParam("transient p must be in [0, 1]".into()));
                }
                if amplitude < 0.0 || !amplitude.is_finite() {
                    return Err(Error::InvalidParam("transient amplitude must be >= 0".into()));
                }
            }
            AugKind::LinearTrend { alpha } | AugKind::ExpTrend { alpha } if !alpha.is_finite() => {
                return Err(Error::InvalidParam("trend alpha must be finite".into()))
            }
            _ => {}
        }
        Ok(Self { kind, seed })
    }
}

/// Applies a seeded augmentation. Missing samples are left untouched and
/// consume no randomness, so augmentation is a pure function of
/// `(series, spec)`.
///
/// - Gaussian noise adds i.i.d. `N(0, sigma^2)`.
/// - A linear trend adds a ramp running from `-alpha` at the first sample to
///   `+alpha` at the last.
/// - An exponential trend adds `alpha * (e^(i/(n-1)) - 1) / (e - 1)`, spanning
///   `[0, alpha]`.
/// - A transient replaces each sample independently with probability `p` by
///   `+amplitude` or `-amplitude`, sign equiprobable.
pub fn augment(series: &RawSeries, spec: &AugSpec) -> RawSeries {
    let n = series.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let values = match spec.kind {
        AugKind::GaussianNoise { sigma } => series
            .values
            .iter()
            .map(|v| {
                v.map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + sigma * z
                })
            })
            .collect(),
        AugKind::LinearTrend { alpha } => series
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v.map(|v| v + linear_ramp(alpha, i, n)))
            .collect(),
        AugKind::ExpTrend { alpha } => series
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.map(|v| {
                    let frac = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                    v + alpha * (frac.exp() - 1.0) / (std::f64::consts::E - 1.0)
                })
            })
            .collect(),
        AugKind::Transient { p, amplitude } => series
            .values
            .iter()
            .map(|v| {
                v.map(|v| {
                    if rng.random::<f64>() < p {
                        if rng.random::<bool>() {
                            amplitude
                        } else {
                            -amplitude
                        }
                    } else {
                        v
                    }
                })
            })
            .collect(),
    };
    RawSeries {
        id: series.id.clone(),
        values,
    }
}

/// Ramp from `-alpha` to `+alpha`, exactly antisymmetric about the midpoint:
/// the numerator `2i - (n-1)` is computed in integers so negating the offset
/// negates the result bit for bit.
fn linear_ramp(alpha: f64, i: usize, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let k = 2 * i as i64 - (n as i64 - 1);
    alpha * k as f64 / (n - 1) as f64
}

/// CSV corpus layouts.
///
/// Long: header `series_id,t,value`, one row per sample. Wide: header row of
/// series names, one row per time step. Empty cells and unparseable or
/// non-finite numeric cells are missing samples. Lines starting with `#` are
/// skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsvFormat {
    Long,
    Wide,
}

/// Loads a corpus from a CSV file.
pub fn load_corpus(path: &Path, format: CsvFormat) -> Result<Vec<RawSeries>> {
    let file = std::fs::File::open(path)?;
    parse_corpus(std::io::BufReader::new(file), format)
}

/// Parses a corpus from any reader (used for stdin piping).
pub fn parse_corpus(reader: impl BufRead, format: CsvFormat) -> Result<Vec<RawSeries>> {
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line).to_string();
        if line.starts_with('#') {
            continue;
        }
        lines.push((i + 1, line));
    }
    // Drop a trailing blank produced by a final newline.
    while matches!(lines.last(), Some((_, l)) if l.is_empty()) {
        lines.pop();
    }
    match format {
        CsvFormat::Long => parse_long(&lines),
        CsvFormat::Wide => parse_wide(&lines),
    }
}

fn parse_cell(cell: &str) -> Option<f64> {
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Some(v),
        _ => None,
    }
}

fn parse_long(lines: &[(usize, String)]) -> Result<Vec<RawSeries>> {
    let Some((header_line, header)) = lines.first() else {
        return Err(Error::EmptyCorpus);
    };
    if header.trim() != "series_id,t,value" {
        return Err(Error::Malformed {
            what: "long csv header",
            line: *header_line,
            detail: format!("expected `series_id,t,value`, got {header:?}"),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_id: std::collections::HashMap<String, Vec<Option<f64>>> =
        std::collections::HashMap::new();
    for (line_no, line) in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Malformed {
                what: "long csv row",
                line: *line_no,
                detail: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::Malformed {
                what: "long csv row",
                line: *line_no,
                detail: "empty series_id".into(),
            });
        }
        if fields[1].trim().parse::<u64>().is_err() {
            return Err(Error::Malformed {
                what: "long csv row",
                line: *line_no,
                detail: format!("time index {:?} is not an integer", fields[1]),
            });
        }
        let entry = by_id.entry(id.to_string()).or_insert_with(|| {
            order.push(id.to_string());
            Vec::new()
        });
        entry.push(parse_cell(fields[2]));
    }
    let corpus: Vec<RawSeries> = order
        .into_iter()
        .map(|id| {
            let values = by_id.remove(&id).expect("grouped above");
            RawSeries { id, values }
        })
        .collect();
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(corpus)
}

fn parse_wide(lines: &[(usize, String)]) -> Result<Vec<RawSeries>> {
    let Some((header_line, header)) = lines.first() else {
        return Err(Error::EmptyCorpus);
    };
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if names.iter().any(|n| n.is_empty()) {
        return Err(Error::Malformed {
            what: "wide csv header",
            line: *header_line,
            detail: "empty series name".into(),
        });
    }
    {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Malformed {
                what: "wide csv header",
                line: *header_line,
                detail: format!("duplicate series name {dup:?}"),
            });
        }
    }
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for (line_no, line) in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(Error::Malformed {
                what: "wide csv row",
                line: *line_no,
                detail: format!("expected {} fields, got {}", names.len(), fields.len()),
            });
        }
        for (col, cell) in columns.iter_mut().zip(&fields) {
            col.push(parse_cell(cell));
        }
    }
    if columns.iter().any(|c| c.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    Ok(names
        .into_iter()
        .zip(columns)
        .map(|(id, values)| RawSeries { id, values })
        .collect())
}

/// Writes a corpus in the long layout. Series ids must not contain characters
/// that would break the unquoted CSV (commas, quotes, newlines).
pub fn write_corpus_long(mut w: impl Write, corpus: &[RawSeries]) -> Result<()> {
    for series in corpus {
        validate_csv_id(&series.id)?;
    }
    writeln!(w, "series_id,t,value")?;
    for series in corpus {
        for (t, v) in series.values.iter().enumerate() {
            match v {
                Some(v) => writeln!(w, "{},{},{}", series.id, t, v)?,
                None => writeln!(w, "{},{},", series.id, t)?,
            }
        }
    }
    Ok(())
}

pub(crate) fn validate_csv_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains([',', '"', '\n', '\r']) || id.starts_with('#') {
        return Err(Error::InvalidParam(format!(
            "series id {id:?} cannot be written as unquoted csv"
        )));
    }
    Ok(())
}
