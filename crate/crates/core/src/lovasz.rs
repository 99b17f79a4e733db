//! Lovász extension, greedy subgradients over the base polyhedron and the
//! Lovász hinge.

use crate::error::{Error, Result};
use crate::setfn::{full_bits, LabelVector, SetFunction, BRUTE_FORCE_LIMIT, STRUCTURE_TOL};

/// An ordering of `{0, .., p-1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || seen[i] {
                return Err(Error::Domain(format!("{order:?} is not a permutation")));
            }
            seen[i] = true;
        }
        Ok(Permutation(order))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Greedy increments `μ^{π_j} = l({π_1..π_j}) - l({π_1..π_{j-1}})`, indexed by
/// element.
#[derive(Clone, Debug, PartialEq)]
pub struct Subgradient {
    pub mu: Vec<f64>,
    pub order: Permutation,
}

impl Subgradient {
    pub fn dot(&self, s: &[f64]) -> f64 {
        dot(&self.mu, s)
    }
}

/// Index-order inner product. Every path that compares `s·μ` values uses
/// this so equal inputs give bitwise-equal sums.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Decreasing order of `s`; ties keep ascending index.
pub fn sort_decreasing(s: &[f64]) -> Permutation {
    let mut order: Vec<usize> = (0..s.len()).collect();
    // stable sort, so equal scores stay in index order
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).expect("scores must be finite"));
    Permutation(order)
}

/// Increments of `l` along `order`.
pub fn increments(l: &SetFunction, order: &Permutation) -> Vec<f64> {
    let mut mu = vec![0.0; order.len()];
    let mut prefix = 0u64;
    let mut prev = l.value(0);
    for &i in order.as_slice() {
        prefix |= 1 << i;
        let cur = l.value(prefix);
        mu[i] = cur - prev;
        prev = cur;
    }
    mu
}

fn check_scores(l: &SetFunction, s: &[f64]) -> Result<()> {
    if s.len() != l.p() {
        return Err(Error::LengthMismatch { expected: l.p(), actual: s.len() });
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("scores must be finite".into()));
    }
    Ok(())
}

fn check_normalized(l: &SetFunction) -> Result<()> {
    let empty = l.value_of_empty();
    if empty != 0.0 {
        return Err(Error::NotNormalized(empty));
    }
    Ok(())
}

pub fn greedy_subgradient(l: &SetFunction, s: &[f64]) -> Result<Subgradient> {
    check_scores(l, s)?;
    check_normalized(l)?;
    let order = sort_decreasing(s);
    let mu = increments(l, &order);
    Ok(Subgradient { mu, order })
}

/// `Σ_j s^{π_j} μ^{π_j}` for `π` sorting `s` decreasingly. Defined on all of
/// `R^p` by positive homogeneity.
pub fn lovasz_extension(l: &SetFunction, s: &[f64]) -> Result<f64> {
    Ok(greedy_subgradient(l, s)?.dot(s))
}

/// Membership of `μ` in the base polyhedron `B(l)`: `Σ_{i∈A} μ^i <= l(A)` for
/// every `A` and equality on `V`.
pub fn base_polyhedron_check(l: &SetFunction, mu: &[f64]) -> Result<bool> {
    if l.p() > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { p: l.p(), limit: BRUTE_FORCE_LIMIT });
    }
    if mu.len() != l.p() {
        return Err(Error::LengthMismatch { expected: l.p(), actual: mu.len() });
    }
    let p = l.p();
    let mut partial = vec![0.0; 1 << p];
    for a in 1..1usize << p {
        let low = a.trailing_zeros() as usize;
        partial[a] = partial[a & (a - 1)] + mu[low];
        if partial[a] > l.value(a as u64) + STRUCTURE_TOL {
            return Ok(false);
        }
    }
    let total: f64 = mu.iter().sum();
    Ok((total - l.value(full_bits(p))).abs() <= STRUCTURE_TOL)
}

/// Hinge margins `s^j = 1 - g^j y^j`.
pub fn margins(y: &LabelVector, g: &[f64]) -> Result<Vec<f64>> {
    if y.len() != g.len() {
        return Err(Error::LengthMismatch { expected: y.len(), actual: g.len() });
    }
    Ok(g.iter().enumerate().map(|(j, gj)| 1.0 - gj * y.sign(j)).collect())
}

/// Which thresholding the hinge applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HingeCase {
    /// `Σ_j (s^{π_j})_+ μ^{π_j}`; convex only for increasing `l`.
    PerComponent,
    /// `(Σ_j s^{π_j} μ^{π_j})_+`.
    Outer,
}

/// Selects the hinge case for `l`, rejecting functions the hinge is not
/// defined for.
pub fn hinge_case(l: &SetFunction) -> Result<HingeCase> {
    check_normalized(l)?;
    if !l.resolved_submodular()? {
        return Err(Error::NotSubmodular);
    }
    Ok(if l.is_known_increasing()? { HingeCase::PerComponent } else { HingeCase::Outer })
}

/// Affine piece of the hinge active at `g`: `value = constant + slope·g`,
/// with `slope` a subgradient in `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinePiece {
    pub value: f64,
    pub constant: f64,
    pub slope: Vec<f64>,
}

/// Hinge value and active piece for an explicit case. Only normalization is
/// checked, so this also evaluates the per-component variant on
/// non-monotone functions where it is not convex.
pub fn hinge_piece(l: &SetFunction, y: &LabelVector, g: &[f64], case: HingeCase) -> Result<AffinePiece> {
    let s = margins(y, g)?;
    let sub = greedy_subgradient(l, &s)?;
    let p = s.len();
    let mut slope = vec![0.0; p];
    let (value, constant) = match case {
        HingeCase::PerComponent => {
            let mut value = 0.0;
            let mut constant = 0.0;
            for j in 0..p {
                if s[j] > 0.0 {
                    value += s[j] * sub.mu[j];
                    constant += sub.mu[j];
                    slope[j] = -y.sign(j) * sub.mu[j];
                }
            }
            (value, constant)
        }
        HingeCase::Outer => {
            let inner = sub.dot(&s);
            if inner > 0.0 {
                for (j, sl) in slope.iter_mut().enumerate() {
                    *sl = -y.sign(j) * sub.mu[j];
                }
                (inner, sub.mu.iter().sum())
            } else {
                (0.0, 0.0)
            }
        }
    };
    Ok(AffinePiece { value, constant, slope })
}

pub fn lovasz_hinge_with_case(l: &SetFunction, y: &LabelVector, g: &[f64], case: HingeCase) -> Result<f64> {
    Ok(hinge_piece(l, y, g, case)?.value)
}

/// The Lovász hinge of `l` at scores `g` for ground truth `y`.
pub fn lovasz_hinge(l: &SetFunction, y: &LabelVector, g: &[f64]) -> Result<f64> {
    let case = hinge_case(l)?;
    lovasz_hinge_with_case(l, y, g, case)
}

/// A subgradient of the hinge with respect to `g`. Kinks take the flat side.
pub fn lovasz_hinge_subgradient(l: &SetFunction, y: &LabelVector, g: &[f64]) -> Result<Vec<f64>> {
    let case = hinge_case(l)?;
    Ok(hinge_piece(l, y, g, case)?.slope)
}
