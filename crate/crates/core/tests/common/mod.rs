//! Independent reference computations shared by the integration targets.
#![allow(dead_code)]

use itertools::Itertools;
use lovasz_core::lovasz::{dot, increments};
use lovasz_core::{Bag, LabelVector, Permutation, SetFunction};

pub fn table(vals: &[f64]) -> SetFunction {
    SetFunction::from_table(vals.to_vec()).unwrap()
}

pub fn increasing_2() -> SetFunction {
    table(&[0.0, 1.0, 1.0, 1.2])
}

pub fn non_monotone_2() -> SetFunction {
    table(&[0.0, 1.0, 1.0, 0.4])
}

pub fn supermodular_2() -> SetFunction {
    table(&[0.0, 1.0, 1.0, 2.8])
}

/// `max_π s·μ_π` over every ordering, with the same increment and dot path
/// as the library so results are bitwise comparable.
pub fn max_over_permutations(l: &SetFunction, s: &[f64]) -> f64 {
    (0..s.len())
        .permutations(s.len())
        .map(|order| dot(&increments(l, &Permutation::new(order).unwrap()), s))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `Σ_j (1 - g^j y^j)_+`.
pub fn hinge_sum(y: &LabelVector, g: &[f64]) -> f64 {
    g.iter().enumerate().map(|(j, gj)| (1.0 - gj * y.sign(j)).max(0.0)).sum()
}

/// Direct argmax over all flip sets for `max_I γ l(I) - 2 Σ_{i∈I} g^i y^i`.
pub fn margin_by_enumeration(l: &SetFunction, y: &LabelVector, g: &[f64], gamma: f64) -> f64 {
    (0..1u64 << y.len())
        .map(|m| {
            let agree: f64 = (0..y.len()).filter(|i| m >> i & 1 == 1).map(|i| g[i] * y.sign(i)).sum();
            gamma * l.value(m) - 2.0 * agree
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn slack_by_enumeration(l: &SetFunction, y: &LabelVector, g: &[f64]) -> f64 {
    (0..1u64 << y.len())
        .map(|m| {
            let agree: f64 = (0..y.len()).filter(|i| m >> i & 1 == 1).map(|i| g[i] * y.sign(i)).sum();
            l.value(m) * (1.0 - 2.0 * agree)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Literal pair scan for `min 2|I1 \ I2| / (l(I1) - l(I2))` over nonempty
/// `I1, I2` (optionally admitting `I2 = ∅`).
pub fn gamma_by_pairs(l: &SetFunction, allow_empty: bool) -> f64 {
    let p = l.p();
    let mut best = f64::INFINITY;
    for i1 in 1u64..1 << p {
        for i2 in u64::from(!allow_empty)..1 << p {
            let gain = l.value(i1) - l.value(i2);
            if gain > 0.0 {
                best = best.min(2.0 * (i1 & !i2).count_ones() as f64 / gain);
            }
        }
    }
    best
}

/// Per-element binary hinge SVM without intercept, one weight vector per
/// slot, solved by dual coordinate descent. Returns row-major weights
/// minimizing `½‖w‖² + C Σ_i Σ_j (1 - y_ij <w_j, x_ij>)_+`.
pub fn per_element_svm(data: &[Bag], c: f64) -> Vec<f64> {
    let (p, d) = (data[0].p(), data[0].d());
    let mut w = vec![0.0; p * d];
    for j in 0..p {
        let xs: Vec<&[f64]> = data.iter().map(|b| b.feature(j)).collect();
        let ys: Vec<f64> = data.iter().map(|b| b.labels().sign(j)).collect();
        let mut alpha = vec![0.0; data.len()];
        let wj = &mut w[j * d..(j + 1) * d];
        for _ in 0..200_000 {
            let mut worst: f64 = 0.0;
            for i in 0..data.len() {
                let q = dot(xs[i], xs[i]);
                if q == 0.0 {
                    continue;
                }
                let grad = ys[i] * dot(wj, xs[i]) - 1.0;
                let projected = if alpha[i] == 0.0 {
                    grad.min(0.0)
                } else if alpha[i] == c {
                    grad.max(0.0)
                } else {
                    grad
                };
                worst = worst.max(projected.abs());
                let next = (alpha[i] - grad / q).clamp(0.0, c);
                let step = next - alpha[i];
                if step != 0.0 {
                    for (wk, xk) in wj.iter_mut().zip(xs[i]) {
                        *wk += step * ys[i] * xk;
                    }
                    alpha[i] = next;
                }
            }
            if worst < 1e-12 {
                break;
            }
        }
    }
    w
}

/// `‖w‖² / (2 C n) + (1/n) Σ_i Σ_j (1 - y_ij <w_j, x_ij>)_+`.
pub fn per_element_objective(data: &[Bag], w: &[f64], c: f64) -> f64 {
    let d = data[0].d();
    let n = data.len() as f64;
    let hinge: f64 = data
        .iter()
        .map(|b| {
            let g: Vec<f64> = (0..b.p()).map(|j| dot(&w[j * d..(j + 1) * d], b.feature(j))).collect();
            hinge_sum(b.labels(), &g)
        })
        .sum();
    dot(w, w) / (2.0 * c * n) + hinge / n
}

pub fn toy_separable() -> Vec<Bag> {
    vec![
        Bag::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], LabelVector::new(vec![1, 1]).unwrap()).unwrap(),
        Bag::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], LabelVector::new(vec![-1, -1]).unwrap()).unwrap(),
    ]
}

/// Central differences of `f` along each coordinate.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[k] += h;
            lo[k] -= h;
            (f(&hi) - f(&lo)) / (2.0 * h)
        })
        .collect()
}
