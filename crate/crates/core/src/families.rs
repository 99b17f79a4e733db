//! Seeded random families of set functions with known structure.
//!
//! Submodular members are sums of strictly concave functions of non-negative
//! modular weights, optionally plus a signed modular term or a graph cut.

use std::sync::Arc;

use rand::Rng;

use crate::setfn::{Modularity, Monotonicity, SetFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Normalized, submodular and increasing.
    IncreasingSubmodular,
    /// Normalized and submodular; usually not monotone.
    Submodular,
    /// Normalized and supermodular (negated submodular).
    Supermodular,
}

#[derive(Clone, Copy, Debug)]
enum Concave {
    Sqrt,
    Saturating,
    Log1p,
}

impl Concave {
    fn apply(self, x: f64) -> f64 {
        match self {
            Concave::Sqrt => x.sqrt(),
            Concave::Saturating => 1.0 - (-x).exp(),
            Concave::Log1p => x.ln_1p(),
        }
    }
}

struct Term {
    weight: f64,
    shape: Concave,
    coefficients: Vec<f64>,
}

/// Draws one member of `family` over a base set of size `p`.
pub fn random_set_function<R: Rng + ?Sized>(family: Family, p: usize, rng: &mut R) -> SetFunction {
    let n_terms = rng.random_range(1..=3);
    let terms: Vec<Term> = (0..n_terms)
        .map(|_| Term {
            weight: rng.random_range(0.2..1.5),
            shape: match rng.random_range(0..3) {
                0 => Concave::Sqrt,
                1 => Concave::Saturating,
                _ => Concave::Log1p,
            },
            coefficients: (0..p).map(|_| rng.random_range(0.05..1.0)).collect(),
        })
        .collect();
    let (modular, cut): (Vec<f64>, Vec<(usize, usize, f64)>) = match family {
        Family::IncreasingSubmodular => ((0..p).map(|_| rng.random_range(0.0..0.3)).collect(), vec![]),
        Family::Submodular | Family::Supermodular => {
            let modular = (0..p).map(|_| rng.random_range(-0.8..0.3)).collect();
            let mut edges = Vec::new();
            for i in 0..p {
                for j in i + 1..p {
                    if rng.random_bool(0.4) {
                        edges.push((i, j, rng.random_range(0.05..0.6)));
                    }
                }
            }
            (modular, edges)
        }
    };
    let terms = Arc::new(terms);
    let sign = if family == Family::Supermodular { -1.0 } else { 1.0 };
    let eval = move |bits: u64| {
        let mut v = 0.0;
        for t in terms.iter() {
            let x: f64 = t
                .coefficients
                .iter()
                .enumerate()
                .filter(|(i, _)| bits >> i & 1 == 1)
                .map(|(_, c)| c)
                .sum();
            v += t.weight * t.shape.apply(x);
        }
        for (i, m) in modular.iter().enumerate() {
            if bits >> i & 1 == 1 {
                v += m;
            }
        }
        for &(i, j, w) in &cut {
            if (bits >> i & 1) != (bits >> j & 1) {
                v += w;
            }
        }
        sign * v
    };
    let (mono, modu) = match family {
        Family::IncreasingSubmodular => (Monotonicity::Increasing, Modularity::Submodular),
        Family::Submodular => (Monotonicity::Unknown, Modularity::Submodular),
        Family::Supermodular => (Monotonicity::Unknown, Modularity::Supermodular),
    };
    SetFunction::new(p, eval).with_declared(mono, modu)
}

/// Random modular function `Σ_{i∈A} w_i` with weights in `[lo, hi)`.
pub fn random_modular<R: Rng + ?Sized>(p: usize, lo: f64, hi: f64, rng: &mut R) -> (SetFunction, Vec<f64>) {
    let w: Vec<f64> = (0..p).map(|_| rng.random_range(lo..hi)).collect();
    let weights = w.clone();
    let l = SetFunction::new(p, move |bits| {
        weights
            .iter()
            .enumerate()
            .filter(|(i, _)| bits >> i & 1 == 1)
            .map(|(_, x)| x)
            .sum()
    })
    .with_declared(
        if lo >= 0.0 { Monotonicity::Increasing } else { Monotonicity::Unknown },
        Modularity::Modular,
    );
    (l, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setfn::{is_increasing, is_submodular};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn families_have_their_declared_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in 1..=7 {
            for _ in 0..10 {
                let inc = random_set_function(Family::IncreasingSubmodular, p, &mut rng);
                assert!(inc.is_normalized());
                assert!(is_submodular(&inc).unwrap().holds());
                assert!(is_increasing(&inc).unwrap().holds());
                let sub = random_set_function(Family::Submodular, p, &mut rng);
                assert!(is_submodular(&sub).unwrap().holds());
                let sup = random_set_function(Family::Supermodular, p, &mut rng);
                assert!(is_submodular(&sup.scaled(-1.0)).unwrap().holds());
            }
        }
    }

    #[test]
    fn submodular_family_is_often_non_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let non_monotone = (0..40)
            .filter(|_| {
                let l = random_set_function(Family::Submodular, 5, &mut rng);
                !is_increasing(&l).unwrap().holds()
            })
            .count();
        assert!(non_monotone >= 10, "{non_monotone}");
    }
}
