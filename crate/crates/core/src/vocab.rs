//! Training of the motif vocabulary over quantized corpora and motif
//! introspection.
//!
//! Training repeatedly finds the most frequent adjacent token pair across the
//! working corpus, records a merge rule for it, and replaces its occurrences,
//! stopping once the best pair occurs fewer than `p_min` times. Replacements
//! scan left to right and never overlap, so for a pair `(x, x)` a run of `L`
//! repeats yields `floor(L / 2)` occurrences; counting uses the same
//! convention so every recorded count equals the realizable replacement
//! yield. MASK and EOS never participate in merges.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::quant::{BinKind, BinSpec, SymbolSeq};
use crate::{Error, Result};

/// One vocabulary entry: `(left, right) -> new_id`, created at `rank` when
/// the pair occurred `count_at_creation` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeRule {
    pub left: u32,
    pub right: u32,
    pub new_id: u32,
    pub rank: u32,
    pub count_at_creation: u64,
}

/// A trained vocabulary: the bin grid, the ordered merge list, and derived
/// per-motif expansion/depth tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    bins: BinSpec,
    p_min: u64,
    merges: Vec<MergeRule>,
    expansions: Vec<Vec<u32>>,
    depths: Vec<u32>,
}

/// Counts adjacent non-special pairs within each sequence. Pairs never span
/// MASK or EOS and never cross sequence boundaries. Occurrences of a repeated
/// id are counted non-overlapping left to right.
pub fn count_pairs<'a>(
    seqs: impl IntoIterator<Item = &'a [u32]>,
    mask_id: u32,
    eos_id: u32,
) -> HashMap<(u32, u32), u64> {
    let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
    for seq in seqs {
        let mut run_start = 0usize;
        for i in 0..seq.len() {
            if i > 0 && seq[i] != seq[i - 1] {
                run_start = i;
            }
            if i + 1 == seq.len() {
                break;
            }
            let (a, b) = (seq[i], seq[i + 1]);
            if a == mask_id || a == eos_id || b == mask_id || b == eos_id {
                continue;
            }
            if a == b && (i - run_start) % 2 == 1 {
                continue;
            }
            *counts.entry((a, b)).or_default() += 1;
        }
    }
    counts
}

/// Replaces every non-overlapping left-to-right occurrence of `(left, right)`
/// with `new_id`. After a replacement the scan resumes past the pair, so a
/// freshly created token is not re-examined within the same pass.
pub(crate) fn replace_pair(seq: &mut Vec<u32>, left: u32, right: u32, new_id: u32) {
    let mut w = 0usize;
    let mut r = 0usize;
    while r < seq.len() {
        if r + 1 < seq.len() && seq[r] == left && seq[r + 1] == right {
            seq[w] = new_id;
            r += 2;
        } else {
            seq[w] = seq[r];
            r += 1;
        }
        w += 1;
    }
    seq.truncate(w);
}

fn best_pair(counts: &HashMap<(u32, u32), u64>) -> Option<((u32, u32), u64)> {
    let mut best: Option<((u32, u32), u64)> = None;
    for (&pair, &count) in counts {
        best = match best {
            Some((bp, bc)) if count < bc || (count == bc && pair >= bp) => Some((bp, bc)),
            _ => Some((pair, count)),
        };
    }
    best
}

/// Trains a vocabulary on a quantized corpus. Stops when the best pair count
/// drops below `p_min`, or after `max_merges` rules if given. Ties between
/// equally frequent pairs break to the smallest `(left, right)`.
pub fn train_vocab(
    corpus: &[SymbolSeq],
    bins: &BinSpec,
    p_min: u64,
    max_merges: Option<usize>,
) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if p_min < 1 {
        return Err(Error::InvalidParam("p_min must be >= 1".into()));
    }
    for seq in corpus {
        if seq.m() != bins.m() {
            return Err(Error::InvalidParam(format!(
                "corpus symbol width M = {} does not match bins M = {}",
                seq.m(),
                bins.m()
            )));
        }
    }
    let (mask, eos) = (bins.mask_id(), bins.eos_id());
    let mut work: Vec<Vec<u32>> = corpus.iter().map(|s| s.ids().to_vec()).collect();
    let mut merges: Vec<MergeRule> = Vec::new();
    loop {
        if let Some(cap) = max_merges {
            if merges.len() >= cap {
                break;
            }
        }
        let counts = count_pairs(work.iter().map(|v| v.as_slice()), mask, eos);
        let Some(((left, right), count)) = best_pair(&counts) else {
            break;
        };
        if count < p_min {
            break;
        }
        let new_id = bins.m() + 2 + merges.len() as u32;
        for seq in &mut work {
            replace_pair(seq, left, right, new_id);
        }
        merges.push(MergeRule {
            left,
            right,
            new_id,
            rank: merges.len() as u32,
            count_at_creation: count,
        });
    }
    Vocabulary::from_parts(bins.clone(), p_min, merges)
}

/// Motif hierarchy aggregates: how many motifs exist per merge-tree depth and
/// per expanded length, and the overall maximum depth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HierarchyStats {
    pub max_depth: u32,
    pub per_depth: BTreeMap<u32, u64>,
    pub per_length: BTreeMap<usize, u64>,
}

impl Vocabulary {
    /// Builds the derived tables and checks every structural invariant; used
    /// both after training and when loading from disk.
    pub fn from_parts(bins: BinSpec, p_min: u64, merges: Vec<MergeRule>) -> Result<Self> {
        if p_min < 1 {
            return Err(Error::InvalidParam("p_min must be >= 1".into()));
        }
        let m = bins.m();
        let first_motif = m + 2;
        let mut expansions: Vec<Vec<u32>> = Vec::with_capacity(merges.len());
        let mut depths: Vec<u32> = Vec::with_capacity(merges.len());
        for (rank, rule) in merges.iter().enumerate() {
            let expected_id = first_motif + rank as u32;
            if rule.rank != rank as u32 || rule.new_id != expected_id {
                return Err(Error::InvalidParam(format!(
                    "merge rank {rank} must map to id {expected_id}, found rank {} -> {}",
                    rule.rank, rule.new_id
                )));
            }
            if rule.count_at_creation < p_min {
                return Err(Error::InvalidParam(format!(
                    "merge {rank} was created with count {} < p_min {p_min}",
                    rule.count_at_creation
                )));
            }
            for side in [rule.left, rule.right] {
                if side == bins.mask_id() || side == bins.eos_id() {
                    return Err(Error::InvalidParam(format!(
                        "merge {rank} uses special token {side}"
                    )));
                }
                if side >= rule.new_id {
                    return Err(Error::InvalidParam(format!(
                        "merge {rank} refers to id {side} >= its own id {}",
                        rule.new_id
                    )));
                }
            }
            let side_expansion = |id: u32| -> Vec<u32> {
                if id < m {
                    vec![id]
                } else {
                    expansions[(id - first_motif) as usize].clone()
                }
            };
            let side_depth =
                |id: u32| -> u32 { if id < m { 0 } else { depths[(id - first_motif) as usize] } };
            let mut expansion = side_expansion(rule.left);
            expansion.extend(side_expansion(rule.right));
            depths.push(1 + side_depth(rule.left).max(side_depth(rule.right)));
            expansions.push(expansion);
        }
        Ok(Self {
            bins,
            p_min,
            merges,
            expansions,
            depths,
        })
    }

    pub fn bins(&self) -> &BinSpec {
        &self.bins
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    pub fn p_min(&self) -> u64 {
        self.p_min
    }

    /// Total vocabulary size: `M` symbols, MASK, EOS, and one id per merge.
    pub fn size(&self) -> u32 {
        self.bins.m() + 2 + self.merges.len() as u32
    }

    pub fn mask_id(&self) -> u32 {
        self.bins.mask_id()
    }

    pub fn eos_id(&self) -> u32 {
        self.bins.eos_id()
    }

    pub fn first_motif_id(&self) -> u32 {
        self.bins.m() + 2
    }

    pub fn is_special(&self, id: u32) -> bool {
        id == self.mask_id() || id == self.eos_id()
    }

    /// Recursively expands a token to the symbols it covers. Symbols expand
    /// to themselves; MASK and EOS are rejected.
    pub fn expand(&self, token_id: u32) -> Result<Vec<u32>> {
        if token_id < self.bins.m() {
            return Ok(vec![token_id]);
        }
        if self.is_special(token_id) {
            return Err(Error::InvalidParam(format!(
                "special token {token_id} has no symbol expansion"
            )));
        }
        self.motif_expansion(token_id)
            .map(<[u32]>::to_vec)
            .ok_or(Error::UnknownToken {
                id: token_id,
                size: self.size(),
            })
    }

    pub(crate) fn motif_expansion(&self, token_id: u32) -> Option<&[u32]> {
        let rank = token_id.checked_sub(self.first_motif_id())? as usize;
        self.expansions.get(rank).map(Vec::as_slice)
    }

    /// Number of source samples a token stands for: 1 for symbols and MASK,
    /// 0 for EOS, expansion length for motifs.
    pub fn sample_len_of(&self, token_id: u32) -> Result<usize> {
        if token_id < self.bins.m() || token_id == self.mask_id() {
            Ok(1)
        } else if token_id == self.eos_id() {
            Ok(0)
        } else {
            self.motif_expansion(token_id)
                .map(<[u32]>::len)
                .ok_or(Error::UnknownToken {
                    id: token_id,
                    size: self.size(),
                })
        }
    }

    /// Height of a motif's merge tree; symbols have depth 0.
    pub fn depth_of(&self, token_id: u32) -> Result<u32> {
        if token_id < self.bins.m() {
            return Ok(0);
        }
        if self.is_special(token_id) {
            return Err(Error::InvalidParam(format!(
                "special token {token_id} has no merge depth"
            )));
        }
        let rank = (token_id - self.first_motif_id()) as usize;
        self.depths.get(rank).copied().ok_or(Error::UnknownToken {
            id: token_id,
            size: self.size(),
        })
    }

    pub fn hierarchy_stats(&self) -> HierarchyStats {
        let mut per_depth: BTreeMap<u32, u64> = BTreeMap::new();
        let mut per_length: BTreeMap<usize, u64> = BTreeMap::new();
        for rank in 0..self.merges.len() {
            *per_depth.entry(self.depths[rank]).or_default() += 1;
            *per_length.entry(self.expansions[rank].len()).or_default() += 1;
        }
        HierarchyStats {
            max_depth: self.depths.iter().copied().max().unwrap_or(0),
            per_depth,
            per_length,
        }
    }

    /// Canonical serialization used for hashing and as the file body.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&VocabFile::from_vocab(self, None))
            .expect("vocabulary serialization cannot fail")
    }

    /// JSON document with an optional auxiliary `meta` object appended. The
    /// meta object is ignored when loading and never enters the hash.
    pub fn to_json(&self, meta: Option<serde_json::Value>) -> String {
        serde_json::to_string_pretty(&VocabFile::from_vocab(self, meta))
            .expect("vocabulary serialization cannot fail")
    }

    /// Content hash of the canonical serialization; binds token streams,
    /// decode tables, and models to this vocabulary.
    pub fn hash(&self) -> String {
        hex_digest(self.canonical_json().as_bytes())
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(json)?;
        file.into_vocab()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    use std::fmt::Write as _;
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        write!(out, "{byte:02x}").expect("writing to a String cannot fail");
    }
    out
}

/// On-disk layout. Infinite bin boundaries are encoded as the strings
/// `"inf"` / `"-inf"`.
#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    bins: BinsJson,
    p_min: u64,
    merges: Vec<MergeJson>,
    special: SpecialJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct MergeJson {
    left: u32,
    right: u32,
    new_id: u32,
    rank: u32,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct SpecialJson {
    mask: u32,
    eos: u32,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct BinsJson {
    kind: String,
    #[serde(rename = "M")]
    m: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ub: Option<f64>,
    #[serde(with = "float_or_inf")]
    boundaries: Vec<f64>,
    #[serde(with = "float_or_inf")]
    centers: Vec<f64>,
}

impl BinsJson {
    pub(crate) fn from_bins(bins: &BinSpec) -> Self {
        let (kind, lb, ub) = match bins.kind() {
            BinKind::TruncatedUniform { lb, ub } => ("truncated_uniform", Some(lb), Some(ub)),
            BinKind::Gaussian => ("gaussian", None, None),
            BinKind::Empirical => ("empirical", None, None),
        };
        Self {
            kind: kind.to_string(),
            m: bins.m(),
            lb,
            ub,
            boundaries: bins.boundaries().to_vec(),
            centers: bins.centers().to_vec(),
        }
    }

    pub(crate) fn into_bins(self) -> Result<BinSpec> {
        let kind = match self.kind.as_str() {
            "truncated_uniform" => {
                let (Some(lb), Some(ub)) = (self.lb, self.ub) else {
                    return Err(Error::InvalidParam(
                        "truncated_uniform bins require lb and ub".into(),
                    ));
                };
                BinKind::TruncatedUniform { lb, ub }
            }
            "gaussian" => BinKind::Gaussian,
            "empirical" => BinKind::Empirical,
            other => {
                return Err(Error::InvalidParam(format!("unknown bin kind {other:?}")));
            }
        };
        BinSpec::new(kind, self.m, self.boundaries, self.centers)
    }
}

mod float_or_inf {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn serialize<S: Serializer>(vals: &[f64], s: S) -> Result<S::Ok, S::Error> {
        vals.iter()
            .map(|&v| {
                if v.is_finite() {
                    Repr::Num(v)
                } else if v == f64::INFINITY {
                    Repr::Str("inf".into())
                } else {
                    Repr::Str("-inf".into())
                }
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?
            .into_iter()
            .map(|r| match r {
                Repr::Num(v) => Ok(v),
                Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
                Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
                Repr::Str(s) => Err(D::Error::custom(format!("bad float string {s:?}"))),
            })
            .collect()
    }
}

impl VocabFile {
    fn from_vocab(vocab: &Vocabulary, meta: Option<serde_json::Value>) -> Self {
        Self {
            version: 1,
            bins: BinsJson::from_bins(&vocab.bins),
            p_min: vocab.p_min,
            merges: vocab
                .merges
                .iter()
                .map(|r| MergeJson {
                    left: r.left,
                    right: r.right,
                    new_id: r.new_id,
                    rank: r.rank,
                    count: r.count_at_creation,
                })
                .collect(),
            special: SpecialJson {
                mask: vocab.mask_id(),
                eos: vocab.eos_id(),
            },
            meta,
        }
    }

    fn into_vocab(self) -> Result<Vocabulary> {
        if self.version != 1 {
            return Err(Error::InvalidParam(format!(
                "unsupported vocabulary file version {}",
                self.version
            )));
        }
        let bins = self.bins.into_bins()?;
        if self.special.mask != bins.mask_id() || self.special.eos != bins.eos_id() {
            return Err(Error::InvalidParam(format!(
                "special ids {{mask: {}, eos: {}}} do not match M = {}",
                self.special.mask,
                self.special.eos,
                bins.m()
            )));
        }
        let merges = self
            .merges
            .into_iter()
            .map(|r| MergeRule {
                left: r.left,
                right: r.right,
                new_id: r.new_id,
                rank: r.rank,
                count_at_creation: r.count,
            })
            .collect();
        Vocabulary::from_parts(bins, self.p_min, merges)
    }
}
