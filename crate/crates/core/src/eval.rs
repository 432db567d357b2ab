//! Corpus-level reporting: reconstruction error with and without conditional
//! decoding, compression statistics, the fixed-patch baseline, robustness
//! sweeps over augmentations, and motif export for plotting.

use rayon::prelude::*;
use serde::Serialize;

use crate::cdec::{apply_cdec, CondDecodeTable};
use crate::codec::{decode_tokens, encode};
use crate::quant::{dequantize, quantize};
use crate::series::{augment, normalize, AugSpec, RawSeries};
use crate::vocab::Vocabulary;
use crate::{Error, Result};

/// Scale on which reconstruction errors are reported. `Normalized` matches
/// the z-scored data the tokenizer sees; `Raw` undoes the normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorScale {
    Normalized,
    Raw,
}

/// Per-series round-trip record.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesRecord {
    pub id: String,
    pub n: usize,
    pub t: usize,
    pub compression: f64,
    pub recon_mse_centers: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recon_mse_cdec: Option<f64>,
}

/// Histogram of per-series compression over 30 equal-width cells.
#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

pub const HISTOGRAM_CELLS: usize = 30;

impl Histogram {
    fn build(values: &[f64]) -> Self {
        let lo = 1.0;
        let max = values.iter().copied().fold(lo, f64::max);
        let hi = if max > lo { max } else { lo + 1.0 };
        let mut counts = vec![0u64; HISTOGRAM_CELLS];
        for &v in values {
            let cell = ((v - lo) / (hi - lo) * HISTOGRAM_CELLS as f64) as usize;
            counts[cell.min(HISTOGRAM_CELLS - 1)] += 1;
        }
        Self { lo, hi, counts }
    }
}

/// Corpus-level report: per-series records plus recomputable aggregates.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub vocab_hash: String,
    pub scale: ErrorScale,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aug: Option<AugSpec>,
    pub per_series: Vec<SeriesRecord>,
    /// Unweighted mean of per-series compression.
    pub mean_compression: f64,
    /// Total samples over total tokens.
    pub total_compression: f64,
    /// Mean absolute center-decoding error over all observed samples.
    pub avg_abs_error: f64,
    /// `1 - SSE_cdec / SSE_centers`, pooled; absent without a table or when
    /// the center error is exactly zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_recovered: Option<f64>,
    pub compression_histogram: Histogram,
}

struct SeriesMetrics {
    record: SeriesRecord,
    sse_centers: f64,
    sse_cdec: Option<f64>,
    abs_err: f64,
    observed: u64,
}

fn series_metrics(
    series: &RawSeries,
    vocab: &Vocabulary,
    table: Option<&CondDecodeTable>,
    scale: ErrorScale,
) -> Result<SeriesMetrics> {
    let bins = vocab.bins();
    let (normed, stats) = normalize(series)?;
    let symbols = quantize(&normed, bins, true);
    let tokens = encode(&symbols, vocab)?;
    let t = tokens.non_eos_len(vocab);
    let decoded = decode_tokens(&tokens, vocab)?;
    let centers = dequantize(&decoded, bins)?;
    let conditional = match table {
        Some(table) => Some(apply_cdec(&decoded, table, bins)?),
        None => None,
    };
    let unit = match scale {
        ErrorScale::Normalized => 1.0,
        ErrorScale::Raw => stats.std,
    };
    let mut sse_centers = 0.0;
    let mut sse_cdec = 0.0;
    let mut abs_err = 0.0;
    let mut observed = 0u64;
    for (i, truth) in normed.values.iter().enumerate() {
        let Some(truth) = truth else { continue };
        let center = centers[i].expect("observed samples decode to values");
        let err = (truth - center) * unit;
        sse_centers += err * err;
        abs_err += err.abs();
        if let Some(cond) = &conditional {
            let value = cond[i].expect("observed samples decode to values");
            let err = (truth - value) * unit;
            sse_cdec += err * err;
        }
        observed += 1;
    }
    if observed == 0 {
        return Err(Error::AllMissing {
            id: series.id.clone(),
        });
    }
    let record = SeriesRecord {
        id: series.id.clone(),
        n: series.len(),
        t,
        compression: series.len() as f64 / t as f64,
        recon_mse_centers: sse_centers / observed as f64,
        recon_mse_cdec: table.map(|_| sse_cdec / observed as f64),
    };
    Ok(SeriesMetrics {
        record,
        sse_centers,
        sse_cdec: table.map(|_| sse_cdec),
        abs_err,
        observed,
    })
}

/// Round-trips every series through tokenize/decode and aggregates the
/// compression and reconstruction metrics.
pub fn reconstruction_report(
    corpus: &[RawSeries],
    vocab: &Vocabulary,
    table: Option<&CondDecodeTable>,
    scale: ErrorScale,
) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let metrics: Vec<SeriesMetrics> = corpus
        .par_iter()
        .map(|series| series_metrics(series, vocab, table, scale))
        .collect::<Result<_>>()?;
    let mut total_n = 0usize;
    let mut total_t = 0usize;
    let mut sse_centers = 0.0;
    let mut sse_cdec = 0.0;
    let mut abs_err = 0.0;
    let mut observed = 0u64;
    for m in &metrics {
        total_n += m.record.n;
        total_t += m.record.t;
        sse_centers += m.sse_centers;
        sse_cdec += m.sse_cdec.unwrap_or(0.0);
        abs_err += m.abs_err;
        observed += m.observed;
    }
    let per_series: Vec<SeriesRecord> = metrics.into_iter().map(|m| m.record).collect();
    let compressions: Vec<f64> = per_series.iter().map(|r| r.compression).collect();
    let error_recovered = match table {
        Some(_) if sse_centers > 0.0 => Some(1.0 - sse_cdec / sse_centers),
        _ => None,
    };
    Ok(EvalReport {
        vocab_hash: vocab.hash(),
        scale,
        aug: None,
        mean_compression: compressions.iter().sum::<f64>() / compressions.len() as f64,
        total_compression: total_n as f64 / total_t as f64,
        avg_abs_error: abs_err / observed as f64,
        error_recovered,
        compression_histogram: Histogram::build(&compressions),
        per_series,
    })
}

/// Token count of the fixed-length patch baseline; a ragged tail counts as
/// one token.
pub fn patch_baseline(n: usize, patch_len: usize) -> usize {
    assert!(patch_len >= 1, "patch length must be >= 1");
    n.div_ceil(patch_len)
}

/// One row of a robustness sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub aug: AugSpec,
    pub mean_compression: f64,
    pub total_compression: f64,
    pub recon_mse_centers: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recon_mse_cdec: Option<f64>,
    /// Mean compression delta versus the unaugmented corpus (clean minus
    /// augmented; positive means the augmentation cost compression).
    pub compression_drop: f64,
    /// Fraction of observed samples whose symbol changed under augmentation.
    pub symbol_change_rate: f64,
}

/// Applies each augmentation to the normalized corpus, re-tokenizes, and
/// reports compression and reconstruction against the clean baseline.
pub fn robustness_sweep(
    corpus: &[RawSeries],
    vocab: &Vocabulary,
    table: Option<&CondDecodeTable>,
    grid: &[AugSpec],
    scale: ErrorScale,
) -> Result<Vec<SweepRow>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let normed: Vec<RawSeries> = corpus
        .iter()
        .map(|s| normalize(s).map(|(n, _)| n))
        .collect::<Result<_>>()?;
    let clean = reconstruction_report(&normed, vocab, table, scale)?;
    let clean_symbols: Vec<Vec<u32>> = normed
        .iter()
        .map(|s| {
            normalize(s).map(|(renormed, _)| quantize(&renormed, vocab.bins(), false).ids().to_vec())
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(grid.len());
    for spec in grid {
        let augmented: Vec<RawSeries> = normed.par_iter().map(|s| augment(s, spec)).collect();
        let mut report = reconstruction_report(&augmented, vocab, table, scale)?;
        report.aug = Some(*spec);

        let mut changed = 0u64;
        let mut total = 0u64;
        for (aug_series, clean_ids) in augmented.iter().zip(&clean_symbols) {
            let (renormed, _) = normalize(aug_series)?;
            let aug_ids = quantize(&renormed, vocab.bins(), false);
            for (a, c) in aug_ids.ids().iter().zip(clean_ids) {
                total += 1;
                if a != c {
                    changed += 1;
                }
            }
        }
        rows.push(SweepRow {
            aug: *spec,
            mean_compression: report.mean_compression,
            total_compression: report.total_compression,
            recon_mse_centers: pooled_center_mse(&report),
            recon_mse_cdec: pooled_cdec_mse(&report),
            compression_drop: clean.mean_compression - report.mean_compression,
            symbol_change_rate: changed as f64 / total as f64,
        });
    }
    Ok(rows)
}

fn pooled_center_mse(report: &EvalReport) -> f64 {
    let (sse, n) = report.per_series.iter().fold((0.0, 0usize), |(s, n), r| {
        (s + r.recon_mse_centers * r.n as f64, n + r.n)
    });
    sse / n as f64
}

fn pooled_cdec_mse(report: &EvalReport) -> Option<f64> {
    let mut sse = 0.0;
    let mut n = 0usize;
    for r in &report.per_series {
        sse += r.recon_mse_cdec? * r.n as f64;
        n += r.n;
    }
    Some(sse / n as f64)
}

/// Sort key for motif export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MotifSortKey {
    /// Longest expansion first.
    Length,
    /// Highest creation count first.
    Frequency,
}

/// Plot-ready description of one motif.
#[derive(Debug, Clone, Serialize)]
pub struct MotifRecord {
    pub token_id: u32,
    pub rank: u32,
    pub length: usize,
    pub depth: u32,
    pub count_at_creation: u64,
    pub symbols: Vec<u32>,
    pub center_values: Vec<f64>,
}

/// Exports the top `k` motifs under the requested key. The sort is stable,
/// so ties keep creation order.
pub fn export_motifs(vocab: &Vocabulary, top_k: usize, key: MotifSortKey) -> Vec<MotifRecord> {
    let centers = vocab.bins().centers();
    let mut records: Vec<MotifRecord> = vocab
        .merges()
        .iter()
        .map(|rule| {
            let symbols = vocab.expand(rule.new_id).expect("merge ids expand");
            let center_values = symbols.iter().map(|&s| centers[s as usize]).collect();
            MotifRecord {
                token_id: rule.new_id,
                rank: rule.rank,
                length: symbols.len(),
                depth: vocab.depth_of(rule.new_id).expect("merge ids have depth"),
                count_at_creation: rule.count_at_creation,
                symbols,
                center_values,
            }
        })
        .collect();
    match key {
        MotifSortKey::Length => records.sort_by_key(|r| std::cmp::Reverse(r.length)),
        MotifSortKey::Frequency => {
            records.sort_by_key(|r| std::cmp::Reverse(r.count_at_creation))
        }
    }
    records.truncate(top_k);
    records
}
