//! One-slack master problem
//! `min_w ½‖w‖² + C max(0, max_k (b_k - a_k·w))`
//! solved in the dual by pairwise exchange.

use crate::error::{Error, Result};
use crate::lovasz::dot;

/// A linear lower bound `b - a·w` on the averaged surrogate risk.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub direction: Vec<f64>,
    pub offset: f64,
}

impl Constraint {
    pub fn value_at(&self, w: &[f64]) -> f64 {
        self.offset - dot(&self.direction, w)
    }

    pub fn approx_eq(&self, other: &Constraint, tol: f64) -> bool {
        (self.offset - other.offset).abs() <= tol
            && self.direction.len() == other.direction.len()
            && self.direction.iter().zip(&other.direction).all(|(x, y)| (x - y).abs() <= tol)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub w: Vec<f64>,
    pub xi: f64,
    pub dual_objective: f64,
    pub alpha: Vec<f64>,
    pub passes: usize,
}

/// Stops once a pass improves the dual by less than this.
pub const QP_TOL: f64 = 1e-12;

/// Dual state over the constraints plus an implicit zero constraint that
/// absorbs the unused budget, so the multipliers always sum to `C`.
#[derive(Clone, Debug, Default)]
pub struct MasterQp {
    constraints: Vec<Constraint>,
    gram: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    slack_alpha: f64,
}

impl MasterQp {
    pub fn new() -> Self {
        MasterQp::default()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Adds a constraint with zero weight, which keeps the dual value.
    pub fn push(&mut self, c: Constraint) -> Result<()> {
        if let Some(first) = self.constraints.first() {
            if first.direction.len() != c.direction.len() {
                return Err(Error::LengthMismatch { expected: first.direction.len(), actual: c.direction.len() });
            }
        }
        let row: Vec<f64> = self.constraints.iter().map(|k| dot(&k.direction, &c.direction)).collect();
        for (g, v) in self.gram.iter_mut().zip(&row) {
            g.push(*v);
        }
        let mut own = row;
        own.push(dot(&c.direction, &c.direction));
        self.gram.push(own);
        self.constraints.push(c);
        self.alpha.push(0.0);
        Ok(())
    }

    pub fn contains_near(&self, c: &Constraint, tol: f64) -> bool {
        self.constraints.iter().any(|k| k.approx_eq(c, tol))
    }

    fn primal_w(&self) -> Vec<f64> {
        let dim = self.constraints.first().map_or(0, |c| c.direction.len());
        let mut w = vec![0.0; dim];
        for (a, c) in self.alpha.iter().zip(&self.constraints) {
            if *a != 0.0 {
                for (wi, ai) in w.iter_mut().zip(&c.direction) {
                    *wi += a * ai;
                }
            }
        }
        w
    }

    fn dual_value(&self, w: &[f64]) -> f64 {
        let linear: f64 = self.alpha.iter().zip(&self.constraints).map(|(a, c)| a * c.offset).sum();
        linear - 0.5 * dot(w, w)
    }

    /// Maximizes `Σ α_k b_k - ½‖Σ α_k a_k‖²` over `α >= 0, Σ α <= c`,
    /// starting from the current multipliers.
    pub fn solve(&mut self, c: f64, max_passes: usize) -> Result<QpSolution> {
        if self.constraints.is_empty() {
            return Err(Error::EmptyConstraints);
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidConfig(format!("C must be positive, got {c}")));
        }
        let k = self.constraints.len();
        let used: f64 = self.alpha.iter().sum();
        if used > c {
            let shrink = c / used;
            self.alpha.iter_mut().for_each(|a| *a *= shrink);
        }
        self.slack_alpha = (c - self.alpha.iter().sum::<f64>()).max(0.0);

        // gradient G_k = b_k - a_k·w; the zero constraint has gradient 0
        let mut grad: Vec<f64> = (0..k)
            .map(|i| self.constraints[i].offset - (0..k).map(|m| self.alpha[m] * self.gram[i][m]).sum::<f64>())
            .collect();
        // index k stands for the zero constraint
        let gram = |i: usize, j: usize| if i == k || j == k { 0.0 } else { self.gram[i][j] };
        let mut passes = 0;
        while passes < max_passes {
            passes += 1;
            let g_at = |i: usize| if i == k { 0.0 } else { grad[i] };
            let weight = |alpha: &[f64], slack: f64, i: usize| if i == k { slack } else { alpha[i] };
            let up = (0..=k).fold(k, |best, i| if g_at(i) > g_at(best) { i } else { best });
            let down = (0..=k)
                .filter(|&i| weight(&self.alpha, self.slack_alpha, i) > 0.0)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if g_at(b) <= g_at(i) => Some(b),
                    _ => Some(i),
                });
            let Some(down) = down else { break };
            let diff = g_at(up) - g_at(down);
            if up == down || diff <= 0.0 {
                break;
            }
            let curvature = gram(up, up) + gram(down, down) - 2.0 * gram(up, down);
            let available = weight(&self.alpha, self.slack_alpha, down);
            let clipped = curvature <= 0.0 || diff / curvature >= available;
            let delta = if clipped { available } else { diff / curvature };
            let gain = delta * diff - 0.5 * delta * delta * curvature.max(0.0);
            if up == k {
                self.slack_alpha += delta;
            } else {
                self.alpha[up] += delta;
            }
            if down == k {
                self.slack_alpha -= delta;
            } else {
                self.alpha[down] -= delta;
                if self.alpha[down] < 0.0 {
                    self.alpha[down] = 0.0;
                }
            }
            for (i, gi) in grad.iter_mut().enumerate() {
                *gi -= delta * (gram(i, up) - gram(i, down));
            }
            // a clipped step empties a multiplier, so a small gain there
            // says nothing about optimality
            if gain < QP_TOL && !clipped {
                break;
            }
        }
        let w = self.primal_w();
        let xi = self.constraints.iter().map(|c| c.value_at(&w)).fold(0.0, f64::max);
        let dual_objective = self.dual_value(&w);
        Ok(QpSolution { w, xi, dual_objective, alpha: self.alpha.clone(), passes })
    }
}

/// Solves the master problem from scratch.
pub fn master_qp_solve(constraints: &[Constraint], c: f64, max_passes: usize) -> Result<QpSolution> {
    let mut qp = MasterQp::new();
    for k in constraints {
        qp.push(k.clone())?;
    }
    qp.solve(c, max_passes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn primal(w: &[f64], cs: &[Constraint], c: f64) -> f64 {
        0.5 * dot(w, w) + c * cs.iter().map(|k| k.value_at(w)).fold(0.0, f64::max)
    }

    #[test]
    fn single_constraint_matches_closed_form() {
        let a = vec![0.6, -0.8, 0.25];
        let norm2 = dot(&a, &a);
        for (b, c) in [(1.0, 0.5), (1.0, 10.0), (0.3, 2.0), (-1.0, 1.0)] {
            let k = Constraint { direction: a.clone(), offset: b };
            let sol = master_qp_solve(std::slice::from_ref(&k), c, 10_000).unwrap();
            let scale = if b > 0.0 { f64::min(c, b / norm2) } else { 0.0 };
            for (wi, ai) in sol.w.iter().zip(&a) {
                assert!((wi - scale * ai).abs() < 1e-9, "{b} {c}: {:?}", sol.w);
            }
            assert!((primal(&sol.w, &[k], c) - sol.dual_objective).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicates_do_not_change_the_solution() {
        let a = Constraint { direction: vec![1.0, 2.0], offset: 1.5 };
        let b = Constraint { direction: vec![-0.5, 1.0], offset: 0.7 };
        let once = master_qp_solve(&[a.clone(), b.clone()], 3.0, 10_000).unwrap();
        let twice = master_qp_solve(&[a.clone(), b.clone(), a, b], 3.0, 10_000).unwrap();
        for (x, y) in once.w.iter().zip(&twice.w) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((once.dual_objective - twice.dual_objective).abs() < 1e-9);
    }

    #[test]
    fn dual_bounds_primal_and_grows_with_constraints() {
        let cs = vec![
            Constraint { direction: vec![1.0, 0.0, 0.5], offset: 1.0 },
            Constraint { direction: vec![0.0, 1.0, -0.5], offset: 0.8 },
            Constraint { direction: vec![0.3, 0.3, 0.3], offset: 1.2 },
            Constraint { direction: vec![-0.2, 0.9, 0.1], offset: 0.4 },
        ];
        let mut qp = MasterQp::new();
        let mut last = f64::NEG_INFINITY;
        for k in &cs {
            qp.push(k.clone()).unwrap();
            let sol = qp.solve(2.0, 10_000).unwrap();
            assert!(sol.dual_objective >= last - 1e-12);
            assert!(sol.dual_objective <= primal(&sol.w, qp.constraints(), 2.0) + 1e-8);
            assert!(sol.alpha.iter().all(|a| *a >= 0.0));
            assert!(sol.alpha.iter().sum::<f64>() <= 2.0 + 1e-12);
            last = sol.dual_objective;
        }
        let sol = qp.solve(2.0, 10_000).unwrap();
        assert!((primal(&sol.w, &cs, 2.0) - sol.dual_objective).abs() < 1e-7);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(master_qp_solve(&[], 1.0, 10), Err(Error::EmptyConstraints)));
    }
}
