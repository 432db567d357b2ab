//! The first-order conditional dequantizer.
//!
//! Instead of decoding symbol `j` to its bin center, each cell of an `M x M`
//! table stores the mean of the training samples that fell in bin `j` while
//! the previous sample fell in bin `k`. That mean is the analytic
//! least-squares solution, so fitting needs no iteration; applying it is a
//! single table lookup per sample. The first element of a sequence,
//! positions following MASK, and cells with no training data decode via the
//! unconditional centers.

use serde::{Deserialize, Serialize};

use crate::quant::{quantize, BinSpec, SymbolSeq};
use crate::series::{normalize, RawSeries};
use crate::vocab::Vocabulary;
use crate::{Error, Result};

/// Conditional dequantization table. Cell `(j, k)` holds the mean decoded
/// value for current symbol `j` given previous symbol `k`; cells that saw no
/// training pairs are absent and resolve to the fallback centers.
#[derive(Debug, Clone, PartialEq)]
pub struct CondDecodeTable {
    m: u32,
    counts: Vec<u64>,
    means: Vec<f64>,
    fallback: Vec<f64>,
}

impl CondDecodeTable {
    pub fn m(&self) -> u32 {
        self.m
    }

    /// Mean for current symbol `j` given previous symbol `k`, if the cell
    /// has training support.
    pub fn cell(&self, j: u32, k: u32) -> Option<f64> {
        let idx = self.index(j, k)?;
        (self.counts[idx] > 0).then(|| self.means[idx])
    }

    pub fn cell_count(&self, j: u32, k: u32) -> u64 {
        self.index(j, k).map_or(0, |idx| self.counts[idx])
    }

    fn index(&self, j: u32, k: u32) -> Option<usize> {
        (j < self.m && k < self.m).then(|| (j * self.m + k) as usize)
    }

    pub fn fallback(&self) -> &[f64] {
        &self.fallback
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Number of occupied cells (out of the `M^2` parameters).
    pub fn occupied_cells(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&TableFile::from_table(self, None))
            .expect("table serialization cannot fail")
    }

    pub fn to_json(&self, meta: Option<serde_json::Value>) -> String {
        serde_json::to_string_pretty(&TableFile::from_table(self, meta))
            .expect("table serialization cannot fail")
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: TableFile = serde_json::from_str(json)?;
        file.into_table()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Fits the conditional table on aligned (values, symbols) pairs. Only
/// interior positions contribute: the sum starts at the second element of
/// each sequence, and positions where either the current or previous symbol
/// is special (or the current value is missing) are skipped. A trailing EOS
/// on the symbol side is ignored.
pub fn fit_cdec(pairs: &[(&RawSeries, &SymbolSeq)], bins: &BinSpec) -> Result<CondDecodeTable> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let m = bins.m();
    let mut counts = vec![0u64; (m * m) as usize];
    let mut sums = vec![0.0f64; (m * m) as usize];
    for (series, symbols) in pairs {
        if symbols.m() != m {
            return Err(Error::InvalidParam(format!(
                "symbols quantized with M = {}, bins have M = {}",
                symbols.m(),
                m
            )));
        }
        let ids = &symbols.ids()[..symbols.sample_len()];
        if ids.len() != series.len() {
            return Err(Error::InvalidParam(format!(
                "series {:?} has {} samples but {} symbols",
                series.id,
                series.len(),
                ids.len()
            )));
        }
        for i in 1..ids.len() {
            let (j, k) = (ids[i], ids[i - 1]);
            if j >= m || k >= m {
                continue;
            }
            let Some(value) = series.values[i] else {
                continue;
            };
            let idx = (j * m + k) as usize;
            counts[idx] += 1;
            sums[idx] += value;
        }
    }
    let means = counts
        .iter()
        .zip(&sums)
        .map(|(&c, &s)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(CondDecodeTable {
        m,
        counts,
        means,
        fallback: bins.centers().to_vec(),
    })
}

/// Decodes symbols with the conditional table. MASK becomes a missing sample
/// and resets the conditioning context; EOS is dropped.
pub fn apply_cdec(
    symbols: &SymbolSeq,
    table: &CondDecodeTable,
    bins: &BinSpec,
) -> Result<Vec<Option<f64>>> {
    if table.m != bins.m() || symbols.m() != bins.m() {
        return Err(Error::InvalidParam(format!(
            "M mismatch: symbols {}, table {}, bins {}",
            symbols.m(),
            table.m,
            bins.m()
        )));
    }
    let m = bins.m();
    let mut out = Vec::with_capacity(symbols.ids().len());
    let mut prev: Option<u32> = None;
    for &id in symbols.ids() {
        if id == symbols.eos_id() {
            break;
        }
        if id == symbols.mask_id() {
            out.push(None);
            prev = None;
            continue;
        }
        if id >= m {
            return Err(Error::InvalidSymbol { id, m });
        }
        let value = prev
            .and_then(|k| table.cell(id, k))
            .unwrap_or(table.fallback[id as usize]);
        out.push(Some(value));
        prev = Some(id);
    }
    Ok(out)
}

/// Fraction of the center-decoding squared error removed by conditional
/// decoding, over a whole corpus: `1 - MSE_cdec / MSE_centers`. Positive
/// means improvement; the corpus is normalized and quantized internally.
pub fn error_recovered(
    corpus: &[RawSeries],
    vocab: &Vocabulary,
    table: &CondDecodeTable,
) -> Result<f64> {
    let bins = vocab.bins();
    let mut sse_centers = 0.0f64;
    let mut sse_cdec = 0.0f64;
    let mut count = 0u64;
    for series in corpus {
        let (normed, _) = normalize(series)?;
        let symbols = quantize(&normed, bins, false);
        let centers = crate::quant::dequantize(&symbols, bins)?;
        let conditional = apply_cdec(&symbols, table, bins)?;
        for ((truth, a), b) in normed.values.iter().zip(&centers).zip(&conditional) {
            let (Some(truth), Some(a), Some(b)) = (truth, a, b) else {
                continue;
            };
            sse_centers += (truth - a) * (truth - a);
            sse_cdec += (truth - b) * (truth - b);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    if sse_centers == 0.0 {
        return Err(Error::Undefined(
            "error_recovered on a corpus with zero center-decoding error",
        ));
    }
    Ok(1.0 - sse_cdec / sse_centers)
}

/// On-disk layout; absent cells are omitted and cells are ordered by (j, k).
#[derive(Serialize, Deserialize)]
struct TableFile {
    #[serde(rename = "M")]
    m: u32,
    cells: Vec<CellJson>,
    fallback: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct CellJson {
    j: u32,
    k: u32,
    mean: f64,
    count: u64,
}

impl TableFile {
    fn from_table(table: &CondDecodeTable, meta: Option<serde_json::Value>) -> Self {
        let mut cells = Vec::with_capacity(table.occupied_cells());
        for j in 0..table.m {
            for k in 0..table.m {
                let idx = (j * table.m + k) as usize;
                if table.counts[idx] > 0 {
                    cells.push(CellJson {
                        j,
                        k,
                        mean: table.means[idx],
                        count: table.counts[idx],
                    });
                }
            }
        }
        Self {
            m: table.m,
            cells,
            fallback: table.fallback.clone(),
            meta,
        }
    }

    fn into_table(self) -> Result<CondDecodeTable> {
        if self.m < 2 {
            return Err(Error::InvalidParam("table needs M >= 2".into()));
        }
        if self.fallback.len() != self.m as usize {
            return Err(Error::InvalidParam(format!(
                "fallback has {} entries, expected {}",
                self.fallback.len(),
                self.m
            )));
        }
        let size = (self.m * self.m) as usize;
        let mut counts = vec![0u64; size];
        let mut means = vec![0.0f64; size];
        for cell in &self.cells {
            if cell.j >= self.m || cell.k >= self.m {
                return Err(Error::InvalidParam(format!(
                    "cell ({}, {}) outside M = {}",
                    cell.j, cell.k, self.m
                )));
            }
            if cell.count == 0 || !cell.mean.is_finite() {
                return Err(Error::InvalidParam(format!(
                    "cell ({}, {}) must have positive count and finite mean",
                    cell.j, cell.k
                )));
            }
            let idx = (cell.j * self.m + cell.k) as usize;
            counts[idx] = cell.count;
            means[idx] = cell.mean;
        }
        Ok(CondDecodeTable {
            m: self.m,
            counts,
            means,
            fallback: self.fallback,
        })
    }
}
