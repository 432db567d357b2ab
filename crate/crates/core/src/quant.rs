//! Equiprobable discretization of normalized series into symbol ids and
//! center-based dequantization.
//!
//! A grid of `M` bins is defined by ascending boundaries `w_1..w_M` and
//! per-bin centers. Values at or below `w_1` map to symbol 0, values in
//! `(w_{j-1}, w_j]` map to symbol `j-1`, and values above `w_M` clamp to the
//! top symbol so quantization is total. Symbol ids are 0-based with
//! `MASK = M` and `EOS = M + 1`; motif ids allocated by vocabulary training
//! start at `M + 2`.

use serde::{Deserialize, Serialize};

use crate::series::RawSeries;
use crate::{Error, Result};

/// Bin-family selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BinKind {
    /// Equal-width bins on `[lb, ub]`; equiprobable under a truncated
    /// uniform distribution.
    TruncatedUniform { lb: f64, ub: f64 },
    /// Standard-normal quantile bins; the top boundary is `+inf`.
    Gaussian,
    /// Quantiles of a training sample, linearly interpolated between order
    /// statistics.
    Empirical,
}

/// A quantization grid: boundaries, centers, and the family that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BinSpec {
    kind: BinKind,
    m: u32,
    boundaries: Vec<f64>,
    centers: Vec<f64>,
}

impl BinSpec {
    /// Validating constructor used by [`build_bins`] and by deserialization.
    pub fn new(kind: BinKind, m: u32, boundaries: Vec<f64>, centers: Vec<f64>) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidParam(format!("bin count M must be >= 2, got {m}")));
        }
        if boundaries.len() != m as usize || centers.len() != m as usize {
            return Err(Error::InvalidParam(format!(
                "expected {m} boundaries and centers, got {} and {}",
                boundaries.len(),
                centers.len()
            )));
        }
        for w in boundaries.windows(2) {
            // NaN boundaries pass this comparison but fail the finiteness
            // check below.
            if w[0] >= w[1] {
                return Err(Error::InvalidParam(format!(
                    "boundaries must be strictly ascending: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let infinite_ok =
            |i: usize, v: f64| v.is_finite() || (matches!(kind, BinKind::Gaussian) && i + 1 == m as usize && v == f64::INFINITY);
        if let Some((i, v)) = boundaries
            .iter()
            .enumerate()
            .find(|&(i, &v)| !infinite_ok(i, v))
        {
            return Err(Error::InvalidParam(format!(
                "boundary {i} is {v}; infinities are only allowed as the top gaussian boundary"
            )));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParam("centers must be finite".into()));
        }
        // Each center must lie strictly inside its own bin so that
        // quantize(dequantize(s)) == s.
        for j in 0..m as usize {
            let lo = if j == 0 { f64::NEG_INFINITY } else { boundaries[j - 1] };
            if centers[j] <= lo || centers[j] > boundaries[j] {
                return Err(Error::InvalidParam(format!(
                    "center {} of bin {j} is outside ({lo}, {}]",
                    centers[j], boundaries[j]
                )));
            }
        }
        Ok(Self {
            kind,
            m,
            boundaries,
            centers,
        })
    }

    pub fn kind(&self) -> BinKind {
        self.kind
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn mask_id(&self) -> u32 {
        self.m
    }

    pub fn eos_id(&self) -> u32 {
        self.m + 1
    }

    /// Symbol id for a single finite value.
    pub fn symbol_of(&self, value: f64) -> u32 {
        let j = self.boundaries.partition_point(|&b| b < value) as u32;
        j.min(self.m - 1)
    }
}

/// Builds a bin grid. `training` is required for [`BinKind::Empirical`]
/// (at least `M` values) and ignored otherwise.
pub fn build_bins(kind: BinKind, m: u32, training: Option<&[f64]>) -> Result<BinSpec> {
    if m < 2 {
        return Err(Error::InvalidParam(format!("bin count M must be >= 2, got {m}")));
    }
    let mf = m as f64;
    let (boundaries, centers) = match kind {
        BinKind::TruncatedUniform { lb, ub } => {
            if !lb.is_finite() || !ub.is_finite() || lb >= ub {
                return Err(Error::InvalidParam(format!(
                    "uniform bins need finite lb < ub, got [{lb}, {ub}]"
                )));
            }
            let width = ub - lb;
            let boundaries = (1..=m).map(|j| lb + j as f64 * width / mf).collect();
            let centers = (1..=m).map(|j| lb + (j as f64 - 0.5) * width / mf).collect();
            (boundaries, centers)
        }
        BinKind::Gaussian => {
            let boundaries = (1..=m).map(|j| inv_norm_cdf(j as f64 / mf)).collect();
            let centers = (1..=m)
                .map(|j| inv_norm_cdf((j as f64 - 0.5) / mf))
                .collect();
            (boundaries, centers)
        }
        BinKind::Empirical => {
            let training = training.ok_or_else(|| {
                Error::InvalidParam("empirical bins require training values".into())
            })?;
            let mut sorted: Vec<f64> =
                training.iter().copied().filter(|v| v.is_finite()).collect();
            if (sorted.len() as u64) < m as u64 {
                return Err(Error::Insufficient {
                    context: "empirical bin training values",
                    needed: m as usize,
                    got: sorted.len(),
                });
            }
            sorted.sort_by(|a, b| a.total_cmp(b));
            let boundaries = (1..=m).map(|j| quantile(&sorted, j as f64 / mf)).collect();
            let centers = (1..=m)
                .map(|j| quantile(&sorted, (j as f64 - 0.5) / mf))
                .collect();
            (boundaries, centers)
        }
    };
    BinSpec::new(kind, m, boundaries, centers)
}

/// Linear interpolation between order statistics of an ascending sample.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// A discretized series. Ids are `0..M-1` for symbols, `M` for MASK and
/// `M + 1` for EOS; EOS may appear at most once, as the final element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolSeq {
    ids: Vec<u32>,
    m: u32,
}

impl SymbolSeq {
    pub fn new(ids: Vec<u32>, m: u32) -> Result<Self> {
        let eos = m + 1;
        for (i, &id) in ids.iter().enumerate() {
            if id >= m + 2 {
                return Err(Error::InvalidSymbol { id, m });
            }
            if id == eos && i + 1 != ids.len() {
                return Err(Error::InvalidParam(
                    "EOS may only appear as the final symbol".into(),
                ));
            }
        }
        Ok(Self { ids, m })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn mask_id(&self) -> u32 {
        self.m
    }

    pub fn eos_id(&self) -> u32 {
        self.m + 1
    }

    pub fn has_eos(&self) -> bool {
        self.ids.last() == Some(&self.eos_id())
    }

    /// Number of samples represented, excluding a trailing EOS.
    pub fn sample_len(&self) -> usize {
        self.ids.len() - usize::from(self.has_eos())
    }
}

/// Discretizes a normalized series. Missing samples map to MASK; an EOS id is
/// appended when `append_eos` is set.
pub fn quantize(series: &RawSeries, bins: &BinSpec, append_eos: bool) -> SymbolSeq {
    let mut ids: Vec<u32> = Vec::with_capacity(series.len() + usize::from(append_eos));
    for v in &series.values {
        match v {
            Some(v) => ids.push(bins.symbol_of(*v)),
            None => ids.push(bins.mask_id()),
        }
    }
    if append_eos {
        ids.push(bins.eos_id());
    }
    SymbolSeq { ids, m: bins.m }
}

/// Maps symbols back to bin centers on the normalized scale. MASK becomes a
/// missing sample and a trailing EOS is dropped.
pub fn dequantize(symbols: &SymbolSeq, bins: &BinSpec) -> Result<Vec<Option<f64>>> {
    if symbols.m != bins.m {
        return Err(Error::InvalidParam(format!(
            "symbol sequence was quantized with M = {}, bins have M = {}",
            symbols.m, bins.m
        )));
    }
    let mut out = Vec::with_capacity(symbols.ids.len());
    for &id in &symbols.ids {
        if id < bins.m {
            out.push(Some(bins.centers[id as usize]));
        } else if id == bins.mask_id() {
            out.push(None);
        } else if id == bins.eos_id() {
            // validated final by SymbolSeq
        } else {
            return Err(Error::InvalidSymbol { id, m: bins.m });
        }
    }
    Ok(out)
}

/// Worst-case quantization error, or `Unbounded` when a bin edge is infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxError {
    Bounded(f64),
    Unbounded,
}

impl MaxError {
    pub fn bounded(self) -> Option<f64> {
        match self {
            MaxError::Bounded(v) => Some(v),
            MaxError::Unbounded => None,
        }
    }
}

/// Upper bound on the in-range quantization error:
/// `max over bins j > 1 of max(center_j - w_{j-1}, w_j - center_j)`.
pub fn max_error(bins: &BinSpec) -> MaxError {
    if bins.boundaries.iter().any(|b| !b.is_finite()) {
        return MaxError::Unbounded;
    }
    let mut worst: f64 = 0.0;
    for j in 1..bins.m as usize {
        let left = bins.centers[j] - bins.boundaries[j - 1];
        let right = bins.boundaries[j] - bins.centers[j];
        worst = worst.max(left.max(right));
    }
    MaxError::Bounded(worst)
}

/// Mean absolute round-trip error over all observed samples of a normalized
/// corpus.
pub fn avg_error(corpus: &[RawSeries], bins: &BinSpec) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0u64;
    for series in corpus {
        for v in series.observed() {
            total += (v - bins.centers[bins.symbol_of(v) as usize]).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(total / count as f64)
}

/// Inverse standard-normal CDF (Wichura's PPND16 rational approximation,
/// accurate to about 1e-15 for p in (0, 1)).
#[allow(clippy::excessive_precision)] // coefficients transcribed as published
pub fn inv_norm_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 8] = [
        3.387_132_872_796_366_608e0,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34e0,
        4.630_337_846_156_545_295_9e0,
        5.769_497_221_460_691_405_5e0,
        3.647_848_324_763_204_605_04e0,
        1.270_458_252_452_368_382_58e0,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87e0,
        1.676_384_830_183_803_849_4e0,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2e0,
        5.463_784_911_164_114_369_9e0,
        1.784_826_539_917_291_335_8e0,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    fn horner(coeffs: &[f64; 8], r: f64) -> f64 {
        coeffs.iter().rev().fold(0.0, |acc, &c| acc * r + c)
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * horner(&A, r) / horner(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        horner(&C, r) / horner(&D, r)
    } else {
        let r = r - 5.0;
        horner(&E, r) / horner(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::RawSeries;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn uniform(m: u32) -> BinSpec {
        build_bins(BinKind::TruncatedUniform { lb: -5.0, ub: 5.0 }, m, None).unwrap()
    }

    #[test]
    fn uniform_m5_grid() {
        let bins = uniform(5);
        assert_eq!(bins.boundaries(), &[-3.0, -1.0, 1.0, 3.0, 5.0]);
        assert_eq!(bins.centers(), &[-4.0, -2.0, 0.0, 2.0, 4.0]);
    }

    #[test]
    fn inv_norm_cdf_reference_points() {
        assert_eq!(inv_norm_cdf(0.5), 0.0);
        assert!((inv_norm_cdf(0.75) - 0.674_489_750_196_081_7).abs() < 1e-12);
        assert!((inv_norm_cdf(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((inv_norm_cdf(0.0001) + 3.719_016_485_455_709).abs() < 1e-10);
        assert_eq!(inv_norm_cdf(1.0), f64::INFINITY);
    }

    #[test]
    fn gaussian_m2_grid() {
        let bins = build_bins(BinKind::Gaussian, 2, None).unwrap();
        assert_eq!(bins.boundaries()[0], 0.0);
        assert_eq!(bins.boundaries()[1], f64::INFINITY);
        assert_eq!(bins.centers()[0], -bins.centers()[1]);
        assert!((bins.centers()[1] - 0.674_489_750_196_081_7).abs() < 1e-12);
    }

    #[test]
    fn empirical_quantiles_interpolate() {
        let training: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let bins = build_bins(BinKind::Empirical, 4, Some(&training)).unwrap();
        assert_eq!(bins.boundaries(), &[25.0, 50.0, 75.0, 100.0]);
        assert_eq!(bins.centers(), &[12.5, 37.5, 62.5, 87.5]);
    }

    #[test]
    fn empirical_needs_enough_data() {
        let tiny = [1.0, 2.0];
        assert!(build_bins(BinKind::Empirical, 4, Some(&tiny)).is_err());
        assert!(build_bins(BinKind::Empirical, 4, None).is_err());
    }

    #[test]
    fn empirical_rejects_tied_quantiles() {
        let flat = vec![1.0; 50];
        assert!(build_bins(BinKind::Empirical, 4, Some(&flat)).is_err());
    }

    #[test]
    fn quantize_cases() {
        let bins = uniform(5);
        let s = RawSeries::new(
            "s",
            vec![Some(0.5), Some(-7.0), Some(7.0), None, Some(-3.0)],
        )
        .unwrap();
        let q = quantize(&s, &bins, true);
        // -3.0 sits exactly on the first boundary: right-closed bins put it
        // in symbol 0.
        assert_eq!(q.ids(), &[2, 0, 4, 5, 0, 6]);
        assert_eq!(q.sample_len(), 5);

        let no_eos = quantize(&s, &bins, false);
        assert_eq!(no_eos.ids().len(), 5);
        assert!(!no_eos.has_eos());
    }

    #[test]
    fn dequantize_cases() {
        let bins = uniform(5);
        let sym = SymbolSeq::new(vec![2, 0, 5, 6], 5).unwrap();
        let out = dequantize(&sym, &bins).unwrap();
        assert_eq!(out, vec![Some(0.0), Some(-4.0), None]);
    }

    #[test]
    fn dequantize_rejects_motif_ids() {
        let bins = uniform(5);
        let sym = SymbolSeq::new(vec![2], 5).unwrap();
        assert!(dequantize(&sym, &bins).is_ok());
        assert!(SymbolSeq::new(vec![7], 5).is_err());
    }

    #[test]
    fn eos_must_be_final() {
        assert!(SymbolSeq::new(vec![6, 1], 5).is_err());
        assert!(SymbolSeq::new(vec![1, 6], 5).is_ok());
    }

    #[test]
    fn max_error_matches_closed_form() {
        for (m, expect) in [(126u32, 0.0397), (37, 0.1351), (22, 0.2273)] {
            let got = max_error(&uniform(m)).bounded().unwrap();
            assert!(
                (got - expect).abs() < 5e-4,
                "M={m}: got {got}, expected about {expect}"
            );
            assert!((got - 10.0 / (2.0 * m as f64)).abs() < 1e-12);
        }
        assert_eq!(
            max_error(&build_bins(BinKind::Gaussian, 8, None).unwrap()),
            MaxError::Unbounded
        );
    }

    #[test]
    fn avg_error_cases() {
        let bins = uniform(5);
        let zeros = RawSeries::from_values("z", &[0.0; 16]).unwrap();
        assert_eq!(avg_error(&[zeros], &bins).unwrap(), 0.0);

        let single = RawSeries::from_values("s", &[0.9]).unwrap();
        assert!((avg_error(&[single], &bins).unwrap() - 0.9).abs() < 1e-12);

        // For uniform draws the expected |error| tends to width/4 = 0.5.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..200_000).map(|_| rng.random_range(-5.0..5.0)).collect();
        let series = RawSeries::from_values("u", &vals).unwrap();
        let avg = avg_error(&[series], &bins).unwrap();
        assert!((avg - 0.5).abs() < 0.01, "avg {avg}");
    }

    #[test]
    fn avg_error_empty_fails() {
        let bins = uniform(5);
        assert!(avg_error(&[], &bins).is_err());
    }

    #[test]
    fn quantize_is_monotone() {
        let bins = uniform(7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let a: f64 = rng.random_range(-8.0..8.0);
            let b: f64 = rng.random_range(-8.0..8.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            assert!(bins.symbol_of(lo) <= bins.symbol_of(hi));
        }
    }

    #[test]
    fn centers_quantize_to_their_own_bin() {
        for bins in [
            uniform(5),
            uniform(126),
            build_bins(BinKind::Gaussian, 22, None).unwrap(),
        ] {
            for (j, &c) in bins.centers().iter().enumerate() {
                assert_eq!(bins.symbol_of(c), j as u32, "center {c} of bin {j}");
            }
        }
    }

    #[test]
    fn equiprobability_of_all_kinds() {
        let n = 1_000_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(99);

        let check = |bins: &BinSpec, samples: &[f64]| {
            let m = bins.m() as usize;
            let mut counts = vec![0u64; m];
            for &v in samples {
                counts[bins.symbol_of(v) as usize] += 1;
            }
            let tol = 5.0 * (1.0 / (m as f64 * samples.len() as f64)).sqrt();
            for (j, &c) in counts.iter().enumerate() {
                let freq = c as f64 / samples.len() as f64;
                assert!(
                    (freq - 1.0 / m as f64).abs() < tol,
                    "bin {j}: freq {freq} vs {} (tol {tol})",
                    1.0 / m as f64
                );
            }
        };

        let uni = uniform(10);
        let samples: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        check(&uni, &samples);

        let gauss = build_bins(BinKind::Gaussian, 10, None).unwrap();
        let samples: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        check(&gauss, &samples);

        let training: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let emp = build_bins(BinKind::Empirical, 10, Some(&training)).unwrap();
        let samples: Vec<f64> = (0..n)
            .map(|_| training[rng.random_range(0..training.len())])
            .collect();
        check(&emp, &samples);
    }
}
