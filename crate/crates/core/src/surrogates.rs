//! Margin and slack rescaling, the margin scale bounds, and probes that check
//! surrogates against their discrete loss.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lovasz::{dot, hinge_case, hinge_piece, AffinePiece, HingeCase};
use crate::setfn::{LabelVector, SetFunction, SubsetMask, BRUTE_FORCE_LIMIT};

/// Largest `p` for which loss-augmented inference enumerates every labeling.
pub const EXACT_LIMIT: usize = 20;

/// Absolute tolerance for vertex and convexity comparisons.
pub const PROBE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Inference {
    #[default]
    Exact,
    /// Single-flip ascent from `ỹ = y`, first improvement by index.
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SurrogateKind {
    LovaszHinge,
    /// Per-component thresholding applied regardless of monotonicity. Not
    /// convex for non-increasing losses; exists for probing.
    PerComponentHinge,
    MarginRescale { gamma: f64, inference: Inference },
    SlackRescale { inference: Inference },
}

impl SurrogateKind {
    pub fn margin(gamma: f64) -> Self {
        SurrogateKind::MarginRescale { gamma, inference: Inference::Exact }
    }

    pub fn slack() -> Self {
        SurrogateKind::SlackRescale { inference: Inference::Exact }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SurrogateKind::LovaszHinge => "lovasz",
            SurrogateKind::PerComponentHinge => "per_component",
            SurrogateKind::MarginRescale { .. } => "margin",
            SurrogateKind::SlackRescale { .. } => "slack",
        }
    }

    /// Scale the surrogate applies to the loss at hypercube vertices.
    pub fn loss_scale(&self) -> f64 {
        match self {
            SurrogateKind::MarginRescale { gamma, .. } => *gamma,
            _ => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SurrogateKind::MarginRescale { gamma, .. } if !(gamma.is_finite() && *gamma > 0.0) => {
                Err(Error::InvalidConfig(format!("gamma must be positive and finite, got {gamma}")))
            }
            _ => Ok(()),
        }
    }
}

/// Scores realizing the vertex `u`: `g^j = (1 - u^j) y^j`.
pub fn vertex_scores(y: &LabelVector, u: SubsetMask) -> Result<Vec<f64>> {
    if u.base_size() != y.len() {
        return Err(Error::LengthMismatch { expected: y.len(), actual: u.base_size() });
    }
    Ok((0..y.len()).map(|j| if u.contains(j) { 0.0 } else { y.sign(j) }).collect())
}

/// Scores realizing margins `s`: `g^j = (1 - s^j) y^j`.
pub fn scores_from_margins(y: &LabelVector, s: &[f64]) -> Result<Vec<f64>> {
    if y.len() != s.len() {
        return Err(Error::LengthMismatch { expected: y.len(), actual: s.len() });
    }
    Ok(s.iter().enumerate().map(|(j, sj)| (1.0 - sj) * y.sign(j)).collect())
}

#[derive(Clone, Copy)]
enum Rescaling {
    Margin(f64),
    Slack,
}

impl Rescaling {
    /// Objective of flipping the set with loss `loss` and `Σ g^i y^i = agreement`.
    fn objective(self, loss: f64, agreement: f64) -> f64 {
        match self {
            Rescaling::Margin(gamma) => gamma * loss - 2.0 * agreement,
            Rescaling::Slack => loss * (1.0 - 2.0 * agreement),
        }
    }

    fn piece(self, l: &SetFunction, y: &LabelVector, g: &[f64], flip: u64) -> AffinePiece {
        let loss = l.value(flip);
        let (constant, per_flip) = match self {
            Rescaling::Margin(gamma) => (gamma * loss, -2.0),
            Rescaling::Slack => (loss, -2.0 * loss),
        };
        let slope: Vec<f64> =
            (0..y.len()).map(|i| if flip >> i & 1 == 1 { per_flip * y.sign(i) } else { 0.0 }).collect();
        let value = constant + dot(&slope, g);
        AffinePiece { value, constant, slope }
    }
}

fn check_normalized(l: &SetFunction) -> Result<()> {
    let empty = l.value_of_empty();
    if empty != 0.0 {
        return Err(Error::NotNormalized(empty));
    }
    Ok(())
}

fn check_inputs(l: &SetFunction, y: &LabelVector, g: &[f64]) -> Result<()> {
    if y.len() != l.p() {
        return Err(Error::LengthMismatch { expected: l.p(), actual: y.len() });
    }
    if g.len() != l.p() {
        return Err(Error::LengthMismatch { expected: l.p(), actual: g.len() });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("scores must be finite".into()));
    }
    check_normalized(l)
}

fn exact_argmax(l: &SetFunction, agree: &[f64], rescaling: Rescaling) -> Result<u64> {
    let p = agree.len();
    if p > EXACT_LIMIT {
        return Err(Error::TooLarge { p, limit: EXACT_LIMIT });
    }
    let mut best_mask = 0u64;
    let mut best = 0.0;
    let mut mask = 0u64;
    let mut agreement = 0.0;
    // Gray-code walk: step k toggles the lowest set bit of k
    for k in 1u64..1 << p {
        let i = k.trailing_zeros() as usize;
        mask ^= 1 << i;
        if mask >> i & 1 == 1 {
            agreement += agree[i];
        } else {
            agreement -= agree[i];
        }
        let v = rescaling.objective(l.value(mask), agreement);
        if v > best {
            best = v;
            best_mask = mask;
        }
    }
    Ok(best_mask)
}

fn greedy_argmax(l: &SetFunction, agree: &[f64], rescaling: Rescaling) -> u64 {
    let p = agree.len();
    let mut mask = 0u64;
    let mut agreement = 0.0;
    let mut current = 0.0;
    for _ in 0..p * p {
        let mut moved = false;
        for i in 0..p {
            let next = mask ^ (1 << i);
            let next_agreement =
                if next >> i & 1 == 1 { agreement + agree[i] } else { agreement - agree[i] };
            let v = rescaling.objective(l.value(next), next_agreement);
            if v > current {
                mask = next;
                agreement = next_agreement;
                current = v;
                moved = true;
                break;
            }
        }
        if !moved {
            break;
        }
    }
    mask
}

fn rescaled_piece(
    l: &SetFunction,
    y: &LabelVector,
    g: &[f64],
    rescaling: Rescaling,
    inference: Inference,
) -> Result<(AffinePiece, u64)> {
    check_inputs(l, y, g)?;
    let agree: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * y.sign(i)).collect();
    let flip = match inference {
        Inference::Exact => exact_argmax(l, &agree, rescaling)?,
        Inference::Greedy => greedy_argmax(l, &agree, rescaling),
    };
    Ok((rescaling.piece(l, y, g, flip), flip))
}

/// `max_ỹ γΔ(y, ỹ) + <g, ỹ> - <g, y>` and its maximizer.
pub fn margin_rescale_value(
    l: &SetFunction,
    y: &LabelVector,
    g: &[f64],
    gamma: f64,
    inference: Inference,
) -> Result<(f64, LabelVector)> {
    SurrogateKind::MarginRescale { gamma, inference }.validate()?;
    let (piece, flip) = rescaled_piece(l, y, g, Rescaling::Margin(gamma), inference)?;
    Ok((piece.value, y.flipped(SubsetMask::new(flip, y.len())?)))
}

/// `max_ỹ Δ(y, ỹ)(1 + <g, ỹ> - <g, y>)` and its maximizer.
pub fn slack_rescale_value(
    l: &SetFunction,
    y: &LabelVector,
    g: &[f64],
    inference: Inference,
) -> Result<(f64, LabelVector)> {
    let (piece, flip) = rescaled_piece(l, y, g, Rescaling::Slack, inference)?;
    Ok((piece.value, y.flipped(SubsetMask::new(flip, y.len())?)))
}

/// Value of the surrogate at `g` with the affine piece attaining it.
pub fn surrogate_piece(kind: &SurrogateKind, l: &SetFunction, y: &LabelVector, g: &[f64]) -> Result<AffinePiece> {
    kind.validate()?;
    match *kind {
        SurrogateKind::LovaszHinge => {
            if y.len() != l.p() {
                return Err(Error::LengthMismatch { expected: l.p(), actual: y.len() });
            }
            hinge_piece(l, y, g, hinge_case(l)?)
        }
        SurrogateKind::PerComponentHinge => {
            if y.len() != l.p() {
                return Err(Error::LengthMismatch { expected: l.p(), actual: y.len() });
            }
            hinge_piece(l, y, g, HingeCase::PerComponent)
        }
        SurrogateKind::MarginRescale { gamma, inference } => {
            Ok(rescaled_piece(l, y, g, Rescaling::Margin(gamma), inference)?.0)
        }
        SurrogateKind::SlackRescale { inference } => Ok(rescaled_piece(l, y, g, Rescaling::Slack, inference)?.0),
    }
}

pub fn surrogate_value(kind: &SurrogateKind, l: &SetFunction, y: &LabelVector, g: &[f64]) -> Result<f64> {
    Ok(surrogate_piece(kind, l, y, g)?.value)
}

fn require_increasing(l: &SetFunction) -> Result<()> {
    check_normalized(l)?;
    if l.p() > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { p: l.p(), limit: BRUTE_FORCE_LIMIT });
    }
    if !l.is_known_increasing()? {
        return Err(Error::NotIncreasing);
    }
    Ok(())
}

/// For each nonempty `I1` and nonempty `D ⊆ I1`, the smallest `l(I2)` over
/// `I2` with `I1 \ I2 = D`. For increasing `l` this is `l(I1 \ D)`, or the
/// smallest singleton outside `I1` when `D = I1`.
fn scale_bound(l: &SetFunction, allow_empty: bool) -> f64 {
    let p = l.p();
    let table: Vec<f64> = (0..1u64 << p).map(|b| l.value(b)).collect();
    let mut best = f64::INFINITY;
    for i1 in 1u64..1 << p {
        let outside_min = (0..p)
            .filter(|&i| i1 >> i & 1 == 0)
            .map(|i| table[1 << i])
            .fold(f64::INFINITY, f64::min);
        let mut d = i1;
        while d != 0 {
            let rest = i1 & !d;
            let mut candidates = [f64::INFINITY; 2];
            if rest != 0 {
                candidates[0] = table[rest as usize];
            } else {
                candidates[0] = outside_min;
                if allow_empty {
                    candidates[1] = 0.0;
                }
            }
            for low in candidates {
                let gain = table[i1 as usize] - low;
                if gain > 0.0 {
                    best = best.min(2.0 * d.count_ones() as f64 / gain);
                }
            }
            d = (d - 1) & i1;
        }
    }
    best
}

/// `min 2|I1 \ I2| / (l(I1) - l(I2))` over nonempty `I1, I2` with
/// `l(I2) < l(I1)`; infinite when no pair qualifies.
///
/// The empty set is excluded as `I2`, so margin rescaling at this scale can
/// exceed `γ l(∅) = 0` at the vertex `u = 0`. [`margin_extension_gamma`] is the
/// scale that keeps every vertex exact.
pub fn max_margin_gamma(l: &SetFunction) -> Result<f64> {
    require_increasing(l)?;
    Ok(scale_bound(l, false))
}

/// Largest `γ` for which margin rescaling with `γ l` equals `γ l(I)` at every
/// vertex: the bound of [`max_margin_gamma`] with `I2 = ∅` also admitted.
/// Equals `2 / max_i l({i})` for increasing submodular `l`.
pub fn margin_extension_gamma(l: &SetFunction) -> Result<f64> {
    require_increasing(l)?;
    Ok(scale_bound(l, true))
}

/// A vertex where the surrogate disagrees with the scaled loss.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexMismatch {
    pub vertex: SubsetMask,
    pub surrogate: f64,
    pub loss: f64,
}

/// Compares the surrogate with `scale · l(I)` at every hypercube vertex `I`.
pub fn is_extension(kind: &SurrogateKind, l: &SetFunction, y: &LabelVector) -> Result<crate::Verdict<Vec<VertexMismatch>>> {
    kind.validate()?;
    let p = l.p();
    if p > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { p, limit: BRUTE_FORCE_LIMIT });
    }
    if matches!(
        kind,
        SurrogateKind::MarginRescale { inference: Inference::Greedy, .. }
            | SurrogateKind::SlackRescale { inference: Inference::Greedy }
    ) {
        return Err(Error::InvalidConfig("extension checks need exact inference".into()));
    }
    let scale = kind.loss_scale();
    let mut mismatches = Vec::new();
    for bits in 0..1u64 << p {
        let vertex = SubsetMask::new(bits, p)?;
        let g = vertex_scores(y, vertex)?;
        let surrogate = surrogate_value(kind, l, y, &g)?;
        let loss = scale * l.value(bits);
        if (surrogate - loss).abs() > PROBE_TOL {
            mismatches.push(VertexMismatch { vertex, surrogate, loss });
        }
    }
    Ok(if mismatches.is_empty() { crate::Verdict::Holds } else { crate::Verdict::Fails(mismatches) })
}

/// A triple violating `f(λa + (1-λ)b) <= λf(a) + (1-λ)f(b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexityViolation {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub lambda: f64,
    pub at_mix: f64,
    pub chord: f64,
}

/// Midpoint-convexity test over random triples with `a, b ∈ [-2, 2]^p` in
/// score space. Returns the first violation.
pub fn convexity_probe(
    kind: &SurrogateKind,
    l: &SetFunction,
    y: &LabelVector,
    n_trials: usize,
    seed: u64,
) -> Result<crate::Verdict<ConvexityViolation>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = l.p();
    for _ in 0..n_trials {
        let a: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let b: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let lambda: f64 = rng.random_range(0.0..=1.0);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, z)| lambda * x + (1.0 - lambda) * z).collect();
        let at_mix = surrogate_value(kind, l, y, &mix)?;
        let chord = lambda * surrogate_value(kind, l, y, &a)? + (1.0 - lambda) * surrogate_value(kind, l, y, &b)?;
        if at_mix > chord + PROBE_TOL {
            return Ok(crate::Verdict::Fails(ConvexityViolation { a, b, lambda, at_mix, chord }));
        }
    }
    Ok(crate::Verdict::Holds)
}

/// A unit-cube point where a rescaling surrogate exceeds the Lovász hinge.
#[derive(Clone, Debug, PartialEq)]
pub struct DominanceViolation {
    pub margins: Vec<f64>,
    pub rival: &'static str,
    pub lovasz: f64,
    pub other: f64,
}

/// Samples margins in the open unit cube and checks the Lovász hinge is at
/// least slack rescaling and margin rescaling there.
///
/// Margin rescaling is compared at `γ = min(1, margin_extension_gamma(l))`
/// against `γ` times the hinge, so both sides are extensions of `γ l`.
pub fn dominance_check(
    l: &SetFunction,
    y: &LabelVector,
    n_points: usize,
    seed: u64,
) -> Result<crate::Verdict<DominanceViolation>> {
    let gamma = margin_extension_gamma(l)?.min(1.0);
    let margin = SurrogateKind::margin(gamma);
    let slack = SurrogateKind::slack();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_points {
        let s: Vec<f64> = (0..l.p()).map(|_| rng.random_range(f64::EPSILON..1.0)).collect();
        let g = scores_from_margins(y, &s)?;
        let lovasz = surrogate_value(&SurrogateKind::LovaszHinge, l, y, &g)?;
        let m = surrogate_value(&margin, l, y, &g)?;
        if gamma * lovasz < m - PROBE_TOL {
            return Ok(crate::Verdict::Fails(DominanceViolation {
                margins: s,
                rival: "margin",
                lovasz: gamma * lovasz,
                other: m,
            }));
        }
        let sv = surrogate_value(&slack, l, y, &g)?;
        if lovasz < sv - PROBE_TOL {
            return Ok(crate::Verdict::Fails(DominanceViolation { margins: s, rival: "slack", lovasz, other: sv }));
        }
    }
    Ok(crate::Verdict::Holds)
}

/// Evenly spaced points from `lo` to `hi`, both endpoints exact.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| {
            let t = k as f64 / (n - 1) as f64;
            lo * (1.0 - t) + hi * t
        })
        .collect()
}

/// One surface sample in margin coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub s1: f64,
    pub s2: f64,
    pub value: f64,
}

/// Surrogate values over a `resolution × resolution` grid of margins with
/// `y = (+1, +1)`; rows ordered by `s1`, then `s2`.
pub fn surface_grid(
    kind: &SurrogateKind,
    l: &SetFunction,
    grid_min: f64,
    grid_max: f64,
    resolution: usize,
) -> Result<Vec<GridPoint>> {
    if l.p() != 2 {
        return Err(Error::Dimension(format!("surfaces need p = 2, got {}", l.p())));
    }
    if resolution == 0 || !grid_min.is_finite() || !grid_max.is_finite() || grid_min > grid_max {
        return Err(Error::InvalidConfig(format!(
            "invalid grid [{grid_min}, {grid_max}] with resolution {resolution}"
        )));
    }
    kind.validate()?;
    // resolve cached structure once before fanning out
    if matches!(kind, SurrogateKind::LovaszHinge) {
        hinge_case(l)?;
    }
    let y = LabelVector::all_positive(2);
    let axis = linspace(grid_min, grid_max, resolution);
    let rows: Vec<Result<Vec<GridPoint>>> = axis
        .par_iter()
        .map(|&s1| {
            axis.iter()
                .map(|&s2| {
                    let g = scores_from_margins(&y, &[s1, s2])?;
                    Ok(GridPoint { s1, s2, value: surrogate_value(kind, l, &y, &g)? })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(resolution * resolution);
    for row in rows {
        out.extend(row?);
    }
    Ok(out)
}

pub fn write_surface_csv<W: Write>(points: &[GridPoint], mut out: W) -> Result<()> {
    writeln!(out, "s1,s2,value")?;
    for pt in points {
        writeln!(out, "{:.9},{:.9},{:.9}", pt.s1, pt.s2, pt.value)?;
    }
    Ok(())
}
