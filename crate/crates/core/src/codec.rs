//! Applying merge rules to symbol sequences, inverting them exactly, and the
//! compression metric.
//!
//! Encoding applies rules in rank order, one left-to-right pass per rule, so
//! a fixed vocabulary costs `O(|merges| * n)` and scales linearly in sequence
//! length. A symbol pattern absent from the vocabulary simply stays at one
//! token per sample, so no sample is ever dropped or reordered.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::quant::{quantize, SymbolSeq};
use crate::series::{normalize, NormStats, RawSeries};
use crate::vocab::{replace_pair, Vocabulary};
use crate::{Error, Result};

/// A motif-compressed sequence plus the sample count it covers (a trailing
/// EOS contributes no samples).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub source_len: usize,
}

impl TokenSeq {
    /// Number of tokens excluding EOS; MASK counts as one token.
    pub fn non_eos_len(&self, vocab: &Vocabulary) -> usize {
        self.ids.iter().filter(|&&id| id != vocab.eos_id()).count()
    }
}

/// Compresses a symbol sequence by applying the vocabulary's merge rules in
/// rank order. Merges never span MASK or EOS.
pub fn encode(symbols: &SymbolSeq, vocab: &Vocabulary) -> Result<TokenSeq> {
    if symbols.m() != vocab.bins().m() {
        return Err(Error::InvalidParam(format!(
            "symbols quantized with M = {}, vocabulary has M = {}",
            symbols.m(),
            vocab.bins().m()
        )));
    }
    let mut ids = symbols.ids().to_vec();
    for rule in vocab.merges() {
        replace_pair(&mut ids, rule.left, rule.right, rule.new_id);
    }
    Ok(TokenSeq {
        ids,
        source_len: symbols.sample_len(),
    })
}

/// Expands every token back to symbols; MASK and EOS pass through unchanged.
/// Exact inverse of [`encode`].
pub fn decode_tokens(tokens: &TokenSeq, vocab: &Vocabulary) -> Result<SymbolSeq> {
    let m = vocab.bins().m();
    let mut out: Vec<u32> = Vec::with_capacity(tokens.ids.len());
    for &id in &tokens.ids {
        if id < m || vocab.is_special(id) {
            out.push(id);
        } else if let Some(expansion) = vocab.motif_expansion(id) {
            out.extend_from_slice(expansion);
        } else {
            return Err(Error::UnknownToken {
                id,
                size: vocab.size(),
            });
        }
    }
    let seq = SymbolSeq::new(out, m)?;
    if seq.sample_len() != tokens.source_len {
        return Err(Error::Invariant(format!(
            "token stream decodes to {} samples but claims {}",
            seq.sample_len(),
            tokens.source_len
        )));
    }
    Ok(seq)
}

/// The full tokenization pipeline: normalize, quantize with a trailing EOS,
/// then merge into motif tokens.
pub fn tokenize_series(series: &RawSeries, vocab: &Vocabulary) -> Result<(TokenSeq, NormStats)> {
    let (normed, stats) = normalize(series)?;
    let symbols = quantize(&normed, vocab.bins(), true);
    Ok((encode(&symbols, vocab)?, stats))
}

/// Sequence-level compression: source samples per non-EOS token.
pub fn compression(tokens: &TokenSeq, vocab: &Vocabulary) -> Result<f64> {
    let t = tokens.non_eos_len(vocab);
    if t == 0 {
        return Err(Error::Undefined(
            "compression of a stream with no non-EOS tokens",
        ));
    }
    Ok(tokens.source_len as f64 / t as f64)
}

/// Sidecar carried next to a token stream so decoding is self-contained.
/// The optional `meta` object is provenance only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSidecar {
    pub vocab_hash: String,
    pub norm_stats: BTreeMap<String, NormStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

/// Writes token streams as CSV rows `series_id,pos,token_id`. When `inline`
/// is set the sidecar is embedded as a leading `#sidecar` comment so the
/// stream can travel through a pipe as a single document; otherwise the
/// sidecar is the caller's responsibility (it normally becomes a JSON file
/// next to the stream).
pub fn write_token_stream(
    mut w: impl Write,
    entries: &[(String, TokenSeq)],
    sidecar: &StreamSidecar,
    inline: bool,
) -> Result<()> {
    for (id, _) in entries {
        crate::series::validate_csv_id(id)?;
    }
    if inline {
        writeln!(w, "#sidecar {}", serde_json::to_string(sidecar)?)?;
    }
    writeln!(w, "series_id,pos,token_id")?;
    for (id, tokens) in entries {
        for (pos, token) in tokens.ids.iter().enumerate() {
            writeln!(w, "{id},{pos},{token}")?;
        }
    }
    Ok(())
}

/// Token sequences keyed by series id, in first-appearance order.
pub type NamedTokenSeqs = Vec<(String, TokenSeq)>;

/// Parses a token stream, returning per-series token ids in first-appearance
/// order plus the inline sidecar if one was embedded. Other `#` lines are
/// comments. Ids are validated and `source_len` recomputed against the
/// vocabulary.
pub fn read_token_stream(
    reader: impl BufRead,
    vocab: &Vocabulary,
) -> Result<(NamedTokenSeqs, Option<StreamSidecar>)> {
    let mut sidecar = None;
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    let mut header_seen = false;
    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if let Some(meta) = line.strip_prefix("#sidecar ") {
            sidecar = Some(serde_json::from_str(meta)?);
            continue;
        }
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !header_seen {
            if line.trim() != "series_id,pos,token_id" {
                return Err(Error::Malformed {
                    what: "token stream header",
                    line: line_no,
                    detail: format!("expected `series_id,pos,token_id`, got {line:?}"),
                });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Malformed {
                what: "token stream row",
                line: line_no,
                detail: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let token: u32 = fields[2].trim().parse().map_err(|_| Error::Malformed {
            what: "token stream row",
            line: line_no,
            detail: format!("token id {:?} is not an integer", fields[2]),
        })?;
        let id = fields[0].to_string();
        if !by_id.contains_key(&id) {
            order.push(id.clone());
        }
        by_id.entry(id).or_default().push(token);
    }
    if !header_seen {
        return Err(Error::EmptyCorpus);
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let ids = by_id.remove(&id).expect("grouped above");
        let mut source_len = 0usize;
        for &token in &ids {
            source_len += vocab.sample_len_of(token)?;
        }
        out.push((id, TokenSeq { ids, source_len }));
    }
    Ok((out, sidecar))
}
