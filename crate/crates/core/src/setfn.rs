//! Set functions over a finite base set `V = {0, .., p-1}`, brute-force
//! structural verifiers and the built-in loss family.
//!
//! A loss `Δ(y, ỹ)` is represented as a set function of the misprediction
//! set `{i | y^i != ỹ^i}`.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest base set the exhaustive verifiers accept.
pub const BRUTE_FORCE_LIMIT: usize = 16;

/// Absolute tolerance for structural checks; loss values are O(1).
pub const STRUCTURE_TOL: f64 = 1e-9;

/// Masks are stored in a `u64`, so the base set is capped below 64 elements.
pub const MAX_ELEMENTS: usize = 63;

/// A subset of `V = {0, .., p-1}` stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct SubsetMask {
    bits: u64,
    p: usize,
}

impl SubsetMask {
    pub fn new(bits: u64, p: usize) -> Result<Self> {
        if p > MAX_ELEMENTS || bits >> p != 0 {
            return Err(Error::InvalidSubset { bits, p });
        }
        Ok(SubsetMask { bits, p })
    }

    pub fn empty(p: usize) -> Self {
        SubsetMask { bits: 0, p }
    }

    pub fn full(p: usize) -> Self {
        SubsetMask { bits: full_bits(p), p }
    }

    /// Builds a mask from zero-based element indices.
    pub fn from_indices(indices: &[usize], p: usize) -> Result<Self> {
        let mut bits = 0u64;
        for &i in indices {
            if i >= p || i >= MAX_ELEMENTS {
                return Err(Error::InvalidSubset { bits: 1u64 << (i.min(63)), p });
            }
            bits |= 1 << i;
        }
        SubsetMask::new(bits, p)
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn base_size(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.p && self.bits >> i & 1 == 1
    }

    pub fn with(&self, i: usize) -> Self {
        debug_assert!(i < self.p);
        SubsetMask { bits: self.bits | 1 << i, p: self.p }
    }

    /// Zero-based indices of the members, ascending.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.p).filter(move |&i| self.contains(i))
    }
}

/// Displays members one-based, e.g. `{1,3}`.
impl fmt::Display for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.indices().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, "}}")
    }
}

pub(crate) fn full_bits(p: usize) -> u64 {
    if p == 0 {
        0
    } else {
        u64::MAX >> (64 - p)
    }
}

/// Binary labels in `{-1, +1}^p`.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct LabelVector(Vec<i8>);

impl LabelVector {
    pub fn new(labels: Vec<i8>) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::InvalidLabel(bad as i64));
        }
        Ok(LabelVector(labels))
    }

    pub fn all_positive(p: usize) -> Self {
        LabelVector(vec![1; p])
    }

    /// Labels whose positive set is `positives`.
    pub fn from_positive_mask(positives: SubsetMask) -> Self {
        LabelVector(
            (0..positives.base_size())
                .map(|i| if positives.contains(i) { 1 } else { -1 })
                .collect(),
        )
    }

    /// `sign` of each score with `sign(0) = +1`.
    pub fn from_scores(scores: &[f64]) -> Self {
        LabelVector(scores.iter().map(|&g| if g >= 0.0 { 1 } else { -1 }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn sign(&self, j: usize) -> f64 {
        self.0[j] as f64
    }

    pub fn signs(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn negated(&self) -> Self {
        LabelVector(self.0.iter().map(|&v| -v).collect())
    }

    /// Flips every label in `mask`.
    pub fn flipped(&self, mask: SubsetMask) -> Self {
        LabelVector(
            self.0
                .iter()
                .enumerate()
                .map(|(i, &v)| if mask.contains(i) { -v } else { v })
                .collect(),
        )
    }

    pub fn positives(&self) -> SubsetMask {
        let bits = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .fold(0u64, |acc, (i, _)| acc | 1 << i);
        SubsetMask { bits, p: self.0.len() }
    }
}

impl TryFrom<Vec<i64>> for LabelVector {
    type Error = Error;

    fn try_from(v: Vec<i64>) -> Result<Self> {
        if let Some(&bad) = v.iter().find(|&&x| x != 1 && x != -1) {
            return Err(Error::InvalidLabel(bad));
        }
        Ok(LabelVector(v.into_iter().map(|x| x as i8).collect()))
    }
}

impl From<LabelVector> for Vec<i64> {
    fn from(v: LabelVector) -> Self {
        v.0.into_iter().map(i64::from).collect()
    }
}

impl fmt::Display for LabelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, v) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", if *v > 0 { "+1" } else { "-1" })?;
        }
        write!(f, ")")
    }
}

/// The set `{i | y^i != ŷ^i}`.
pub fn misprediction_set(y: &LabelVector, y_hat: &LabelVector) -> Result<SubsetMask> {
    if y.len() != y_hat.len() {
        return Err(Error::LengthMismatch { expected: y.len(), actual: y_hat.len() });
    }
    if y.len() > MAX_ELEMENTS {
        return Err(Error::TooLarge { p: y.len(), limit: MAX_ELEMENTS });
    }
    let bits = y
        .as_slice()
        .iter()
        .zip(y_hat.as_slice())
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .fold(0u64, |acc, (i, _)| acc | 1 << i);
    SubsetMask::new(bits, y.len())
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    Increasing,
    NonMonotonic,
    Unknown,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modularity {
    Submodular,
    Modular,
    Supermodular,
    Unknown,
}

/// Outcome of a brute-force structural check.
#[derive(Clone, Debug, PartialEq)]
pub enum Verdict<W> {
    Holds,
    Fails(W),
}

impl<W> Verdict<W> {
    pub fn holds(&self) -> bool {
        matches!(self, Verdict::Holds)
    }

    pub fn witness(&self) -> Option<&W> {
        match self {
            Verdict::Holds => None,
            Verdict::Fails(w) => Some(w),
        }
    }
}

type Oracle = Arc<dyn Fn(u64) -> f64 + Send + Sync>;

enum Cache {
    Dense(OnceLock<Vec<f64>>),
    Memo(RwLock<HashMap<u64, f64>>),
}

/// A deterministic oracle `l : P(V) -> R`.
///
/// Values are cached in a dense table (filled on first use) for `p <= 16`
/// and memoized per mask above that. Cloning is cheap and shares the cache.
#[derive(Clone)]
pub struct SetFunction {
    p: usize,
    oracle: Oracle,
    monotonicity: Monotonicity,
    modularity: Modularity,
    cache: Arc<Cache>,
    verified_monotonicity: Arc<OnceLock<Monotonicity>>,
    verified_submodular: Arc<OnceLock<bool>>,
}

impl fmt::Debug for SetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SetFunction")
            .field("p", &self.p)
            .field("monotonicity", &self.monotonicity)
            .field("modularity", &self.modularity)
            .finish_non_exhaustive()
    }
}

impl SetFunction {
    /// Wraps an oracle over raw bitmasks. The oracle is only ever called with
    /// masks whose bits lie below `p`.
    pub fn new<F>(p: usize, oracle: F) -> Self
    where
        F: Fn(u64) -> f64 + Send + Sync + 'static,
    {
        assert!(p <= MAX_ELEMENTS, "base set too large: {p}");
        let cache = if p <= BRUTE_FORCE_LIMIT {
            Cache::Dense(OnceLock::new())
        } else {
            Cache::Memo(RwLock::new(HashMap::new()))
        };
        SetFunction {
            p,
            oracle: Arc::new(oracle),
            monotonicity: Monotonicity::Unknown,
            modularity: Modularity::Unknown,
            cache: Arc::new(cache),
            verified_monotonicity: Arc::new(OnceLock::new()),
            verified_submodular: Arc::new(OnceLock::new()),
        }
    }

    /// A function given by its full value table, indexed by mask.
    pub fn from_table(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidLoss(format!(
                "table length {n} is not a power of two"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidLoss("table values must be finite".into()));
        }
        let p = n.trailing_zeros() as usize;
        if p > BRUTE_FORCE_LIMIT {
            return Err(Error::TooLarge { p, limit: BRUTE_FORCE_LIMIT });
        }
        let table = Arc::new(values);
        Ok(SetFunction::new(p, move |bits| table[bits as usize]))
    }

    pub fn with_declared(mut self, monotonicity: Monotonicity, modularity: Modularity) -> Self {
        self.monotonicity = monotonicity;
        self.modularity = modularity;
        self.verified_monotonicity = Arc::new(OnceLock::new());
        self.verified_submodular = Arc::new(OnceLock::new());
        self
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn declared_monotonicity(&self) -> Monotonicity {
        self.monotonicity
    }

    pub fn declared_modularity(&self) -> Modularity {
        self.modularity
    }

    pub fn eval(&self, a: SubsetMask) -> Result<f64> {
        if a.p != self.p {
            return Err(Error::LengthMismatch { expected: self.p, actual: a.p });
        }
        Ok(self.value(a.bits))
    }

    /// Unchecked evaluation on a raw mask.
    #[inline]
    pub fn value(&self, bits: u64) -> f64 {
        debug_assert!(bits >> self.p == 0, "mask outside base set");
        match &*self.cache {
            Cache::Dense(table) => table.get_or_init(|| {
                (0..1u64 << self.p).map(|b| (self.oracle)(b)).collect()
            })[bits as usize],
            Cache::Memo(memo) => {
                if let Some(&v) = memo.read().expect("memo poisoned").get(&bits) {
                    return v;
                }
                let v = (self.oracle)(bits);
                memo.write().expect("memo poisoned").insert(bits, v);
                v
            }
        }
    }

    pub fn value_of_empty(&self) -> f64 {
        self.value(0)
    }

    pub fn is_normalized(&self) -> bool {
        self.value(0) == 0.0
    }

    /// `l'(A) = l(A) - l(∅)`.
    pub fn normalize(&self) -> SetFunction {
        let offset = self.value(0);
        if offset == 0.0 {
            return self.clone();
        }
        let inner = self.clone();
        SetFunction::new(self.p, move |b| inner.value(b) - offset)
            .with_declared(self.monotonicity, self.modularity)
    }

    /// `c * l`. A negative factor swaps sub- and supermodularity.
    pub fn scaled(&self, factor: f64) -> SetFunction {
        let inner = self.clone();
        let (mono, modu) = if factor > 0.0 {
            (self.monotonicity, self.modularity)
        } else if factor == 0.0 {
            (Monotonicity::Increasing, Modularity::Modular)
        } else {
            let modu = match self.modularity {
                Modularity::Submodular => Modularity::Supermodular,
                Modularity::Supermodular => Modularity::Submodular,
                other => other,
            };
            (Monotonicity::Unknown, modu)
        };
        SetFunction::new(self.p, move |b| factor * inner.value(b)).with_declared(mono, modu)
    }

    /// Full value table indexed by mask; guarded like the verifiers.
    pub fn table(&self) -> Result<Vec<f64>> {
        guard(self.p)?;
        Ok((0..1u64 << self.p).map(|b| self.value(b)).collect())
    }

    /// Declared monotonicity, falling back to a one-off brute-force check
    /// whose result is cached.
    pub fn resolved_monotonicity(&self) -> Result<Monotonicity> {
        match self.monotonicity {
            Monotonicity::Unknown => {
                if let Some(m) = self.verified_monotonicity.get() {
                    return Ok(*m);
                }
                let m = if is_increasing(self)?.holds() {
                    Monotonicity::Increasing
                } else {
                    Monotonicity::NonMonotonic
                };
                Ok(*self.verified_monotonicity.get_or_init(|| m))
            }
            declared => Ok(declared),
        }
    }

    pub fn is_known_increasing(&self) -> Result<bool> {
        Ok(self.resolved_monotonicity()? == Monotonicity::Increasing)
    }

    /// Declared submodularity, falling back to a cached brute-force check.
    pub fn resolved_submodular(&self) -> Result<bool> {
        match self.modularity {
            Modularity::Submodular | Modularity::Modular => Ok(true),
            Modularity::Supermodular => Ok(false),
            Modularity::Unknown => {
                if let Some(s) = self.verified_submodular.get() {
                    return Ok(*s);
                }
                let s = is_submodular(self)?.holds();
                Ok(*self.verified_submodular.get_or_init(|| s))
            }
        }
    }
}

fn guard(p: usize) -> Result<()> {
    if p > BRUTE_FORCE_LIMIT {
        Err(Error::TooLarge { p, limit: BRUTE_FORCE_LIMIT })
    } else {
        Ok(())
    }
}

pub fn eval(l: &SetFunction, a: SubsetMask) -> Result<f64> {
    l.eval(a)
}

/// Checks `l(A) + l(B) >= l(A ∪ B) + l(A ∩ B)` through the equivalent
/// second-difference form `l(S+i) + l(S+j) >= l(S+i+j) + l(S)`. A failure is
/// reported as the violating pair `(S+i, S+j)`.
pub fn is_submodular(l: &SetFunction) -> Result<Verdict<(SubsetMask, SubsetMask)>> {
    guard(l.p)?;
    let p = l.p;
    for s in 0..1u64 << p {
        let ls = l.value(s);
        for i in (0..p).filter(|&i| s >> i & 1 == 0) {
            let si = s | 1 << i;
            let lsi = l.value(si);
            for j in (i + 1..p).filter(|&j| s >> j & 1 == 0) {
                let sj = s | 1 << j;
                if lsi + l.value(sj) < l.value(si | sj) + ls - STRUCTURE_TOL {
                    return Ok(Verdict::Fails((
                        SubsetMask { bits: si, p },
                        SubsetMask { bits: sj, p },
                    )));
                }
            }
        }
    }
    Ok(Verdict::Holds)
}

/// Checks `l(A) <= l(A ∪ {x})` for every `A` and `x ∉ A`; the witness is
/// `(A, x)` with `x` zero-based.
pub fn is_increasing(l: &SetFunction) -> Result<Verdict<(SubsetMask, usize)>> {
    guard(l.p)?;
    let p = l.p;
    for a in 0..1u64 << p {
        let la = l.value(a);
        for x in (0..p).filter(|&x| a >> x & 1 == 0) {
            if l.value(a | 1 << x) < la - STRUCTURE_TOL {
                return Ok(Verdict::Fails((SubsetMask { bits: a, p }, x)));
            }
        }
    }
    Ok(Verdict::Holds)
}

/// Modular means both `l` and `-l` are submodular.
pub fn is_modular(l: &SetFunction) -> Result<bool> {
    Ok(is_submodular(l)?.holds() && is_submodular(&l.scaled(-1.0))?.holds())
}

/// Built-in losses over misprediction sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum LossSpec {
    /// `|I|`.
    Hamming,
    /// `1 - |P_y ∩ P_ỹ| / |P_y ∪ P_ỹ|`.
    Jaccard,
    /// `min(l_max, Σ_{i∈I} β_i)`.
    CappedWeighted { beta: Vec<f64>, l_max: f64 },
    /// `1 - exp(-|I|) + Σ_{i∈I} β_i`.
    ConcavePlusModular { beta: Vec<f64> },
    /// `1 - exp(-α|I|)`.
    ExpSize { alpha: f64 },
    /// `sqrt(Σ_{i∈I} m_i)`.
    SqrtModular { weights: Vec<f64> },
    /// `Σ_i e^{-i} min(|I ∩ {1..i}|, i/2)`; index order is chronological.
    EarlyDetection,
    /// Arbitrary values indexed by mask.
    Table { values: Vec<f64> },
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Hamming => "hamming",
            LossSpec::Jaccard => "jaccard",
            LossSpec::CappedWeighted { .. } => "capped",
            LossSpec::ConcavePlusModular { .. } => "concave_modular",
            LossSpec::ExpSize { .. } => "exp_size",
            LossSpec::SqrtModular { .. } => "sqrt_modular",
            LossSpec::EarlyDetection => "early",
            LossSpec::Table { .. } => "table",
        }
    }

    /// Only the Jaccard loss depends on the ground truth beyond the
    /// misprediction set.
    pub fn depends_on_labels(&self) -> bool {
        matches!(self, LossSpec::Jaccard)
    }

    /// Checks the parameters against a base set of size `p`.
    pub fn validate(&self, p: usize) -> Result<()> {
        let len_check = |name: &str, v: &[f64]| {
            if v.len() != p {
                Err(Error::InvalidLoss(format!(
                    "{name} has {} entries, expected {p}",
                    v.len()
                )))
            } else if v.iter().any(|x| !x.is_finite()) {
                Err(Error::InvalidLoss(format!("{name} must be finite")))
            } else {
                Ok(())
            }
        };
        if p > MAX_ELEMENTS {
            return Err(Error::TooLarge { p, limit: MAX_ELEMENTS });
        }
        match self {
            LossSpec::Hamming | LossSpec::Jaccard | LossSpec::EarlyDetection => Ok(()),
            LossSpec::CappedWeighted { beta, l_max } => {
                len_check("beta", beta)?;
                if beta.iter().any(|&b| b <= 0.0) {
                    return Err(Error::InvalidLoss("beta must be positive".into()));
                }
                let total: f64 = beta.iter().sum();
                if !(*l_max > 0.0 && *l_max < total) {
                    return Err(Error::InvalidLoss(format!(
                        "l_max must lie in (0, {total}), got {l_max}"
                    )));
                }
                Ok(())
            }
            LossSpec::ConcavePlusModular { beta } => len_check("beta", beta),
            LossSpec::ExpSize { alpha } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::InvalidLoss(format!("alpha must be positive, got {alpha}")));
                }
                Ok(())
            }
            LossSpec::SqrtModular { weights } => {
                len_check("weights", weights)?;
                if weights.iter().any(|&m| m < 0.0) {
                    return Err(Error::InvalidLoss("weights must be non-negative".into()));
                }
                Ok(())
            }
            LossSpec::Table { values } => {
                if p > BRUTE_FORCE_LIMIT {
                    return Err(Error::TooLarge { p, limit: BRUTE_FORCE_LIMIT });
                }
                if values.len() != 1usize << p {
                    return Err(Error::InvalidLoss(format!(
                        "table has {} values, expected 2^{p}",
                        values.len()
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Instantiates `spec` as a set function of the misprediction set relative to
/// the ground truth `y`.
pub fn build_loss(spec: &LossSpec, y: &LabelVector) -> Result<SetFunction> {
    let p = y.len();
    spec.validate(p)?;
    use Modularity::*;
    use Monotonicity::*;
    let l = match spec {
        LossSpec::Hamming => {
            SetFunction::new(p, |b| b.count_ones() as f64).with_declared(Increasing, Modular)
        }
        LossSpec::Jaccard => {
            let positives = y.positives().bits();
            let m = positives.count_ones();
            if m == 0 {
                return Err(Error::Domain(
                    "jaccard loss needs at least one positive label".into(),
                ));
            }
            SetFunction::new(p, move |b| {
                let false_neg = (b & positives).count_ones();
                let false_pos = (b & !positives).count_ones();
                1.0 - (m - false_neg) as f64 / (m + false_pos) as f64
            })
            .with_declared(Increasing, Submodular)
        }
        LossSpec::CappedWeighted { beta, l_max } => {
            let beta = beta.clone();
            let l_max = *l_max;
            SetFunction::new(p, move |b| l_max.min(masked_sum(&beta, b)))
                .with_declared(Increasing, Submodular)
        }
        LossSpec::ConcavePlusModular { beta } => {
            let mono = if beta.iter().all(|&b| b >= 0.0) { Increasing } else { Monotonicity::Unknown };
            let beta = beta.clone();
            SetFunction::new(p, move |b| {
                1.0 - (-(b.count_ones() as f64)).exp() + masked_sum(&beta, b)
            })
            .with_declared(mono, Submodular)
        }
        LossSpec::ExpSize { alpha } => {
            let alpha = *alpha;
            SetFunction::new(p, move |b| 1.0 - (-alpha * b.count_ones() as f64).exp())
                .with_declared(Increasing, Submodular)
        }
        LossSpec::SqrtModular { weights } => {
            let weights = weights.clone();
            SetFunction::new(p, move |b| masked_sum(&weights, b).sqrt())
                .with_declared(Increasing, Submodular)
        }
        LossSpec::EarlyDetection => {
            let weights: Vec<f64> = (1..=p).map(|i| (-(i as f64)).exp()).collect();
            SetFunction::new(p, move |b| {
                let mut prefix = 0u32;
                let mut total = 0.0;
                for (k, w) in weights.iter().enumerate() {
                    prefix += (b >> k & 1) as u32;
                    let i = (k + 1) as f64;
                    total += w * (prefix as f64).min(i / 2.0);
                }
                total
            })
            .with_declared(Increasing, Submodular)
        }
        LossSpec::Table { values } => SetFunction::from_table(values.clone())?,
    };
    // Tables are returned as given; callers normalize them explicitly.
    Ok(match spec {
        LossSpec::Table { .. } => l,
        _ => l.normalize(),
    })
}

/// `Δ(y, ŷ)` for a loss that is otherwise built per ground truth.
pub fn loss_value(spec: &LossSpec, y: &LabelVector, y_hat: &LabelVector) -> Result<f64> {
    let mask = misprediction_set(y, y_hat)?;
    build_loss(spec, y)?.eval(mask)
}

fn masked_sum(weights: &[f64], bits: u64) -> f64 {
    weights
        .iter()
        .enumerate()
        .filter(|(i, _)| bits >> i & 1 == 1)
        .map(|(_, w)| w)
        .sum()
}
