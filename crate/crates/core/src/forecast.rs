//! Count-based order-k Markov model over the token vocabulary, with
//! autoregressive generation for forecasting.
//!
//! The model stores (context, next) counts for every order from 0 up to k.
//! A prediction uses the longest context suffix that was seen in training,
//! backing off one order at a time down to the unigram and finally to a
//! uniform distribution. Additive smoothing `alpha` applies at the chosen
//! order. MASK and EOS are excluded from the prediction support: forecasts
//! never contain missing samples and never terminate themselves.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cdec::{apply_cdec, CondDecodeTable};
use crate::codec::{decode_tokens, encode, TokenSeq};
use crate::quant::{dequantize, quantize};
use crate::series::{denormalize, normalize, RawSeries};
use crate::vocab::Vocabulary;
use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

/// A fitted Markov model bound to a vocabulary by hash.
#[derive(Debug, Clone)]
pub struct MarkovModel {
    order: usize,
    alpha: f64,
    vocab_hash: String,
    support: Vec<u32>,
    counts: HashMap<Vec<u32>, ContextCounts>,
}

/// Token selection during generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GenMode {
    /// Deterministic argmax; ties break to the smallest token id.
    Greedy,
    /// Seeded sampling; probabilities are flattened or sharpened by
    /// `temperature` (1.0 leaves them unchanged).
    Sample { seed: u64, temperature: f64 },
}

/// Counts all (context, next) transitions in the corpus for every order up
/// to `order`. Transitions into MASK or EOS are skipped.
pub fn fit_markov(
    corpus: &[TokenSeq],
    order: usize,
    alpha: f64,
    vocab: &Vocabulary,
) -> Result<MarkovModel> {
    if order < 1 {
        return Err(Error::InvalidParam("markov order must be >= 1".into()));
    }
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidParam("smoothing alpha must be >= 0".into()));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let support: Vec<u32> = (0..vocab.size()).filter(|&id| !vocab.is_special(id)).collect();
    let mut counts: HashMap<Vec<u32>, ContextCounts> = HashMap::new();
    for seq in corpus {
        for (t, &next) in seq.ids.iter().enumerate() {
            if vocab.is_special(next) {
                continue;
            }
            if next >= vocab.size() {
                return Err(Error::UnknownToken {
                    id: next,
                    size: vocab.size(),
                });
            }
            for j in 0..=order.min(t) {
                let ctx = seq.ids[t - j..t].to_vec();
                let entry = counts.entry(ctx).or_default();
                entry.total += 1;
                *entry.next.entry(next).or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::InvalidParam(
            "corpus contains no non-special transitions".into(),
        ));
    }
    Ok(MarkovModel {
        order,
        alpha,
        vocab_hash: vocab.hash(),
        support,
        counts,
    })
}

impl MarkovModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let found = vocab.hash();
        if self.vocab_hash != found {
            return Err(Error::VocabHashMismatch {
                expected: self.vocab_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    /// Next-token distribution over the support, using the longest seen
    /// suffix of `context` and uniform as the last resort. The returned
    /// probabilities align with [`Self::support`] and sum to 1.
    pub fn distribution(&self, context: &[u32]) -> Vec<f64> {
        let start = context.len().saturating_sub(self.order);
        let mut lo = start;
        let seen = loop {
            if let Some(entry) = self.counts.get(&context[lo..]) {
                if entry.total > 0 {
                    break Some(entry);
                }
            }
            if lo == context.len() {
                break None;
            }
            lo += 1;
        };
        let s = self.support.len() as f64;
        match seen {
            Some(entry) => {
                let denom = entry.total as f64 + self.alpha * s;
                if denom == 0.0 {
                    return vec![1.0 / s; self.support.len()];
                }
                self.support
                    .iter()
                    .map(|id| {
                        let c = entry.next.get(id).copied().unwrap_or(0) as f64;
                        (c + self.alpha) / denom
                    })
                    .collect()
            }
            None => vec![1.0 / s; self.support.len()],
        }
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    fn pick(&self, dist: &[f64], mode: &mut ModeState) -> u32 {
        match mode {
            ModeState::Greedy => {
                let mut best = 0usize;
                for (i, &p) in dist.iter().enumerate() {
                    if p > dist[best] {
                        best = i;
                    }
                }
                self.support[best]
            }
            ModeState::Sample { rng, temperature } => {
                let weights: Vec<f64> = if *temperature == 1.0 {
                    dist.to_vec()
                } else {
                    dist.iter().map(|p| p.powf(1.0 / *temperature)).collect()
                };
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (i, &w) in weights.iter().enumerate() {
                    u -= w;
                    if u <= 0.0 {
                        return self.support[i];
                    }
                }
                *self.support.last().expect("support is non-empty")
            }
        }
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&ModelFile::from_model(self, None))
            .expect("model serialization cannot fail")
    }

    pub fn to_json(&self, meta: Option<serde_json::Value>) -> String {
        serde_json::to_string_pretty(&ModelFile::from_model(self, meta))
            .expect("model serialization cannot fail")
    }

    pub fn from_json_str(json: &str, vocab: &Vocabulary) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(json)?;
        file.into_model(vocab)
    }

    pub fn load(path: &std::path::Path, vocab: &Vocabulary) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?, vocab)
    }
}

#[allow(clippy::large_enum_variant)] // short-lived per-generation state
enum ModeState {
    Greedy,
    Sample { rng: ChaCha8Rng, temperature: f64 },
}

impl ModeState {
    fn new(mode: GenMode) -> Result<Self> {
        Ok(match mode {
            GenMode::Greedy => ModeState::Greedy,
            GenMode::Sample { seed, temperature } => {
                if temperature <= 0.0 || !temperature.is_finite() {
                    return Err(Error::InvalidParam("temperature must be > 0".into()));
                }
                ModeState::Sample {
                    rng: ChaCha8Rng::seed_from_u64(seed),
                    temperature,
                }
            }
        })
    }
}

/// Generates tokens autoregressively until their decoded sample count
/// reaches `horizon_samples`. The final token may overshoot the horizon;
/// callers truncate after decoding.
pub fn generate(
    model: &MarkovModel,
    context: &[u32],
    horizon_samples: usize,
    mode: GenMode,
    vocab: &Vocabulary,
) -> Result<TokenSeq> {
    model.check_vocab(vocab)?;
    if horizon_samples < 1 {
        return Err(Error::InvalidParam("horizon must be >= 1".into()));
    }
    if model.support.is_empty() {
        return Err(Error::InvalidParam("model has an empty support".into()));
    }
    let mut mode = ModeState::new(mode)?;
    let mut window: Vec<u32> = context.to_vec();
    let mut out: Vec<u32> = Vec::new();
    let mut decoded = 0usize;
    while decoded < horizon_samples {
        let dist = model.distribution(&window);
        let next = model.pick(&dist, &mut mode);
        decoded += vocab.sample_len_of(next)?;
        out.push(next);
        window.push(next);
        // Only the last `order` ids matter for the next lookup.
        if window.len() > model.order {
            window.drain(..window.len() - model.order);
        }
    }
    Ok(TokenSeq {
        ids: out,
        source_len: decoded,
    })
}

/// One forecast run: the denormalized predicted values plus the token-level
/// bookkeeping needed for compression analysis.
#[derive(Debug, Clone)]
pub struct Forecast {
    pub values: RawSeries,
    pub context_tokens: usize,
    pub context_samples: usize,
    pub generated: TokenSeq,
}

/// Forecasts `horizon_samples` beyond the given history. The history is
/// tokenized, the last `t_in` tokens form the model context, and generated
/// tokens are decoded (conditionally if a table is given), truncated to the
/// horizon, and denormalized with the history's statistics.
pub fn forecast_series(
    model: &MarkovModel,
    vocab: &Vocabulary,
    table: Option<&CondDecodeTable>,
    series: &RawSeries,
    t_in: usize,
    horizon_samples: usize,
    mode: GenMode,
) -> Result<Forecast> {
    model.check_vocab(vocab)?;
    if t_in < 1 {
        return Err(Error::InvalidParam("t_in must be >= 1".into()));
    }
    let (normed, stats) = normalize(series)?;
    let symbols = quantize(&normed, vocab.bins(), false);
    let tokens = encode(&symbols, vocab)?;
    if tokens.ids.len() < t_in {
        return Err(Error::Insufficient {
            context: "context tokens",
            needed: t_in,
            got: tokens.ids.len(),
        });
    }
    let context = &tokens.ids[tokens.ids.len() - t_in..];
    let context_samples: usize = context
        .iter()
        .map(|&id| vocab.sample_len_of(id))
        .sum::<Result<usize>>()?;
    let generated = generate(model, context, horizon_samples, mode, vocab)?;
    let symbols = decode_tokens(&generated, vocab)?;
    let decoded = match table {
        Some(table) => apply_cdec(&symbols, table, vocab.bins())?,
        None => dequantize(&symbols, vocab.bins())?,
    };
    let values: Vec<Option<f64>> = decoded.into_iter().take(horizon_samples).collect();
    let normalized_forecast = RawSeries {
        id: series.id.clone(),
        values,
    };
    let values = denormalize(&normalized_forecast, &stats)?;
    Ok(Forecast {
        values,
        context_tokens: t_in,
        context_samples,
        generated,
    })
}

/// Mean per-series compression of forecast contexts and generations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenCompression {
    pub input: f64,
    pub output: f64,
}

pub fn generation_compression(runs: &[Forecast]) -> Result<GenCompression> {
    if runs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut c_in = 0.0;
    let mut c_out = 0.0;
    for run in runs {
        c_in += run.context_samples as f64 / run.context_tokens as f64;
        c_out += run.generated.source_len as f64 / run.generated.ids.len() as f64;
    }
    Ok(GenCompression {
        input: c_in / runs.len() as f64,
        output: c_out / runs.len() as f64,
    })
}

/// On-disk layout: a header plus flat count records `[ctx..., next, count]`,
/// sorted for deterministic output.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    order: usize,
    alpha: f64,
    vocab_hash: String,
    records: Vec<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

impl ModelFile {
    fn from_model(model: &MarkovModel, meta: Option<serde_json::Value>) -> Self {
        let mut records: Vec<Vec<u64>> = Vec::new();
        for (ctx, entry) in &model.counts {
            for (&next, &count) in &entry.next {
                let mut record: Vec<u64> = ctx.iter().map(|&id| id as u64).collect();
                record.push(next as u64);
                record.push(count);
                records.push(record);
            }
        }
        records.sort();
        Self {
            version: 1,
            order: model.order,
            alpha: model.alpha,
            vocab_hash: model.vocab_hash.clone(),
            records,
            meta,
        }
    }

    fn into_model(self, vocab: &Vocabulary) -> Result<MarkovModel> {
        if self.version != 1 {
            return Err(Error::InvalidParam(format!(
                "unsupported model file version {}",
                self.version
            )));
        }
        if self.order < 1 {
            return Err(Error::InvalidParam("markov order must be >= 1".into()));
        }
        let found = vocab.hash();
        if self.vocab_hash != found {
            return Err(Error::VocabHashMismatch {
                expected: self.vocab_hash,
                found,
            });
        }
        let support: Vec<u32> = (0..vocab.size()).filter(|&id| !vocab.is_special(id)).collect();
        let mut counts: HashMap<Vec<u32>, ContextCounts> = HashMap::new();
        for record in self.records {
            if record.len() < 2 || record.len() > self.order + 2 {
                return Err(Error::InvalidParam(format!(
                    "count record has {} fields, expected 2..={}",
                    record.len(),
                    self.order + 2
                )));
            }
            let count = record[record.len() - 1];
            let next = u32::try_from(record[record.len() - 2])
                .map_err(|_| Error::InvalidParam("token id overflows u32".into()))?;
            if next >= vocab.size() || vocab.is_special(next) {
                return Err(Error::InvalidParam(format!(
                    "record predicts invalid token {next}"
                )));
            }
            if count == 0 {
                return Err(Error::InvalidParam("record has zero count".into()));
            }
            let ctx: Vec<u32> = record[..record.len() - 2]
                .iter()
                .map(|&id| {
                    u32::try_from(id)
                        .map_err(|_| Error::InvalidParam("token id overflows u32".into()))
                })
                .collect::<Result<_>>()?;
            let entry = counts.entry(ctx).or_default();
            entry.total += count;
            *entry.next.entry(next).or_default() += count;
        }
        if counts.is_empty() {
            return Err(Error::InvalidParam("model has no count records".into()));
        }
        Ok(MarkovModel {
            order: self.order,
            alpha: self.alpha,
            vocab_hash: found,
            support,
            counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{build_bins, BinKind, BinSpec, SymbolSeq};
    use crate::vocab::train_vocab;

    fn uniform(m: u32) -> BinSpec {
        build_bins(BinKind::TruncatedUniform { lb: -5.0, ub: 5.0 }, m, None).unwrap()
    }

    fn plain_vocab(m: u32) -> Vocabulary {
        Vocabulary::from_parts(uniform(m), 1, Vec::new()).unwrap()
    }

    fn tokens(ids: &[u32], vocab: &Vocabulary) -> TokenSeq {
        let source_len = ids.iter().map(|&id| vocab.sample_len_of(id).unwrap()).sum();
        TokenSeq {
            ids: ids.to_vec(),
            source_len,
        }
    }

    #[test]
    fn alternating_counts() {
        let vocab = plain_vocab(5);
        let corpus = vec![tokens(&[0, 1, 0, 1, 0], &vocab)];
        let model = fit_markov(&corpus, 1, 0.0, &vocab).unwrap();
        let dist = model.distribution(&[0]);
        assert_eq!(dist[1], 1.0);
        let dist = model.distribution(&[1]);
        assert_eq!(dist[0], 1.0);
    }

    #[test]
    fn smoothing_makes_everything_positive() {
        let vocab = plain_vocab(5);
        let corpus = vec![tokens(&[0, 1, 0, 1], &vocab)];
        let model = fit_markov(&corpus, 1, 0.5, &vocab).unwrap();
        for ctx in [vec![0u32], vec![1], vec![4]] {
            let dist = model.distribution(&ctx);
            assert!(dist.iter().all(|&p| p > 0.0));
            let total: f64 = dist.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicating_the_corpus_changes_nothing() {
        let vocab = plain_vocab(5);
        let one = vec![tokens(&[0, 1, 2, 0, 1], &vocab)];
        let two = vec![one[0].clone(), one[0].clone()];
        let a = fit_markov(&one, 2, 0.0, &vocab).unwrap();
        let b = fit_markov(&two, 2, 0.0, &vocab).unwrap();
        for ctx in [vec![0u32], vec![1], vec![0, 1], vec![]] {
            assert_eq!(a.distribution(&ctx), b.distribution(&ctx));
        }
    }

    #[test]
    fn distribution_sums_to_one_for_reachable_contexts() {
        let vocab = plain_vocab(6);
        let corpus = vec![tokens(&[0, 1, 2, 3, 4, 5, 0, 1, 2], &vocab)];
        let model = fit_markov(&corpus, 2, 0.1, &vocab).unwrap();
        for a in 0..6u32 {
            for b in 0..6u32 {
                let total: f64 = model.distribution(&[a, b]).iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
        let total: f64 = model.distribution(&[]).iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn greedy_generation_follows_a_deterministic_chain() {
        let vocab = plain_vocab(5);
        let corpus = vec![tokens(&[0, 1, 0, 1, 0, 1], &vocab)];
        let model = fit_markov(&corpus, 1, 0.0, &vocab).unwrap();
        let out = generate(&model, &[0], 4, GenMode::Greedy, &vocab).unwrap();
        assert_eq!(out.ids, vec![1, 0, 1, 0]);
        assert_eq!(out.source_len, 4);
    }

    #[test]
    fn generation_stops_after_covering_the_horizon() {
        // Vocabulary with an 8-sample motif that dominates the corpus.
        let bins = uniform(5);
        let sym = SymbolSeq::new(vec![2; 8], 5).unwrap();
        let vocab = train_vocab(&[sym], &bins, 1, None).unwrap();
        let motif = vocab.size() - 1;
        assert_eq!(vocab.sample_len_of(motif).unwrap(), 8);
        let corpus = vec![tokens(&[motif, motif, motif], &vocab)];
        let model = fit_markov(&corpus, 1, 0.0, &vocab).unwrap();
        let out = generate(&model, &[motif], 1, GenMode::Greedy, &vocab).unwrap();
        assert_eq!(out.ids.len(), 1);
        assert_eq!(out.source_len, 8);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let vocab = plain_vocab(6);
        let corpus = vec![tokens(&[0, 1, 2, 3, 4, 5, 0, 2, 4], &vocab)];
        let model = fit_markov(&corpus, 1, 0.2, &vocab).unwrap();
        let mode = GenMode::Sample {
            seed: 13,
            temperature: 1.0,
        };
        let a = generate(&model, &[0], 32, mode, &vocab).unwrap();
        let b = generate(&model, &[0], 32, mode, &vocab).unwrap();
        assert_eq!(a, b);
        let other = generate(
            &model,
            &[0],
            32,
            GenMode::Sample {
                seed: 14,
                temperature: 1.0,
            },
            &vocab,
        )
        .unwrap();
        assert_ne!(a.ids, other.ids);
    }

    #[test]
    fn specials_are_never_generated() {
        let vocab = plain_vocab(4);
        // Train on data that contains MASK and EOS transitions.
        let corpus = vec![tokens(&[0, 4, 1, 0, 4, 1, 5], &vocab)];
        let model = fit_markov(&corpus, 1, 0.1, &vocab).unwrap();
        let out = generate(
            &model,
            &[0],
            64,
            GenMode::Sample {
                seed: 5,
                temperature: 2.0,
            },
            &vocab,
        )
        .unwrap();
        assert!(out
            .ids
            .iter()
            .all(|&id| id != vocab.mask_id() && id != vocab.eos_id()));
    }

    #[test]
    fn constant_series_forecasts_its_bin_center() {
        let bins = uniform(5);
        let base = RawSeries::from_values("c", &[7.5; 300]).unwrap();
        let sym = quantize(&normalize(&base).unwrap().0, &bins, false);
        // Capped merges keep the token stream longer than the context size.
        let vocab = train_vocab(std::slice::from_ref(&sym), &bins, 1, Some(3)).unwrap();
        let train = encode(&sym, &vocab).unwrap();
        let model = fit_markov(&[train], 2, 0.0, &vocab).unwrap();
        let forecast =
            forecast_series(&model, &vocab, None, &base, 4, 16, GenMode::Greedy).unwrap();
        assert_eq!(forecast.values.len(), 16);
        // Normalization maps the constant to 0, whose bin center is 0, so the
        // forecast denormalizes back to the constant.
        for v in forecast.values.observed() {
            assert!((v - 7.5).abs() < 1e-12);
        }
        assert!(forecast.context_samples >= forecast.context_tokens);
    }

    #[test]
    fn forecast_requires_enough_context() {
        let vocab = plain_vocab(5);
        let base = RawSeries::from_values("s", &[1.0, 2.0, 3.0]).unwrap();
        let corpus = vec![tokens(&[0, 1, 2], &vocab)];
        let model = fit_markov(&corpus, 1, 0.1, &vocab).unwrap();
        let err = forecast_series(&model, &vocab, None, &base, 10, 4, GenMode::Greedy);
        assert!(matches!(err, Err(Error::Insufficient { .. })));
    }

    #[test]
    fn truncation_is_exact() {
        let bins = uniform(5);
        let sym = SymbolSeq::new(vec![2; 16], 5).unwrap();
        let vocab = train_vocab(&[sym], &bins, 1, None).unwrap();
        let base = RawSeries::from_values("c", &[3.0; 64]).unwrap();
        let normed = normalize(&base).unwrap().0;
        let train = encode(&quantize(&normed, &bins, false), &vocab).unwrap();
        let model = fit_markov(&[train], 1, 0.0, &vocab).unwrap();
        for horizon in [1usize, 5, 8, 13] {
            let f = forecast_series(&model, &vocab, None, &base, 2, horizon, GenMode::Greedy)
                .unwrap();
            assert_eq!(f.values.len(), horizon);
        }
    }

    #[test]
    fn generation_compression_bounds() {
        let bins = uniform(5);
        let sym = SymbolSeq::new(vec![2; 16], 5).unwrap();
        let vocab = train_vocab(&[sym], &bins, 1, None).unwrap();
        let base = RawSeries::from_values("c", &[3.0; 64]).unwrap();
        let train = encode(&quantize(&normalize(&base).unwrap().0, &bins, false), &vocab).unwrap();
        let model = fit_markov(&[train], 1, 0.0, &vocab).unwrap();
        let run =
            forecast_series(&model, &vocab, None, &base, 2, 32, GenMode::Greedy).unwrap();
        let stats = generation_compression(&[run]).unwrap();
        let max_len = (0..vocab.size())
            .filter(|&id| !vocab.is_special(id))
            .map(|id| vocab.sample_len_of(id).unwrap())
            .max()
            .unwrap() as f64;
        assert!(stats.output > 1.0);
        assert!(stats.output <= max_len);
        assert!(stats.input <= max_len);

        // A merge-free vocabulary can only emit single-symbol tokens.
        let bare = plain_vocab(5);
        let corpus = vec![tokens(&[2, 2, 2, 2], &bare)];
        let model = fit_markov(&corpus, 1, 0.0, &bare).unwrap();
        let run = forecast_series(&model, &bare, None, &base, 2, 32, GenMode::Greedy).unwrap();
        let stats = generation_compression(&[run]).unwrap();
        assert_eq!(stats.output, 1.0);
    }

    #[test]
    fn model_json_round_trip_and_hash_binding() {
        let vocab = plain_vocab(5);
        let corpus = vec![tokens(&[0, 1, 2, 0, 1], &vocab)];
        let model = fit_markov(&corpus, 2, 0.25, &vocab).unwrap();
        let json = model.to_json(None);
        let back = MarkovModel::from_json_str(&json, &vocab).unwrap();
        assert_eq!(back.order(), 2);
        assert_eq!(back.alpha(), 0.25);
        for ctx in [vec![], vec![0u32], vec![0, 1]] {
            assert_eq!(model.distribution(&ctx), back.distribution(&ctx));
        }

        let other_vocab = plain_vocab(6);
        assert!(matches!(
            MarkovModel::from_json_str(&json, &other_vocab),
            Err(Error::VocabHashMismatch { .. })
        ));
    }
}
