//! Per-element linear scorer, empirical risk and the two training loops.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lovasz::dot;
use crate::qp::{Constraint, MasterQp};
use crate::setfn::{build_loss, loss_value, LabelVector, LossSpec, SetFunction};
use crate::surrogates::{margin_extension_gamma, surrogate_piece, Inference, SurrogateKind};

/// `p` elements with `d` features each, and their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    features: Vec<f64>,
    d: usize,
    labels: LabelVector,
}

impl Bag {
    pub fn new(features: Vec<Vec<f64>>, labels: LabelVector) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::LengthMismatch { expected: labels.len(), actual: features.len() });
        }
        let d = features.first().map_or(0, Vec::len);
        if features.iter().any(|row| row.len() != d) {
            return Err(Error::Dimension("feature rows differ in length".into()));
        }
        let flat: Vec<f64> = features.into_iter().flatten().collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("features must be finite".into()));
        }
        Ok(Bag { features: flat, d, labels })
    }

    pub fn p(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn feature(&self, j: usize) -> &[f64] {
        &self.features[j * self.d..(j + 1) * self.d]
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        (0..self.p()).map(|j| self.feature(j).to_vec()).collect()
    }

    pub fn labels(&self) -> &LabelVector {
        &self.labels
    }

    /// Same features, other labels.
    pub fn with_labels(&self, labels: LabelVector) -> Result<Self> {
        if labels.len() != self.p() {
            return Err(Error::LengthMismatch { expected: self.p(), actual: labels.len() });
        }
        Ok(Bag { features: self.features.clone(), d: self.d, labels })
    }
}

/// Shared `(p, d)` of a nonempty dataset.
pub fn dataset_shape(data: &[Bag]) -> Result<(usize, usize)> {
    let first = data.first().ok_or(Error::EmptyDataset)?;
    let (p, d) = (first.p(), first.d());
    for (i, bag) in data.iter().enumerate() {
        if bag.p() != p || bag.d() != d {
            return Err(Error::Dimension(format!(
                "bag {i} is {}x{}, expected {p}x{d}",
                bag.p(),
                bag.d()
            )));
        }
    }
    Ok((p, d))
}

/// Row `j` holds the weights `w^j` applied to element `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    p: usize,
    d: usize,
    weights: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(p: usize, d: usize) -> Self {
        LinearModel { p, d, weights: vec![0.0; p * d] }
    }

    /// Builds a model from a row-major weight vector of length `p·d`.
    pub fn from_flat(p: usize, d: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != p * d {
            return Err(Error::LengthMismatch { expected: p * d, actual: weights.len() });
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("weights must be finite".into()));
        }
        Ok(LinearModel { p, d, weights })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let p = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("weight rows differ in length".into()));
        }
        LinearModel::from_flat(p, d, rows.into_iter().flatten().collect())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.d..(j + 1) * self.d]
    }

    fn check(&self, x: &Bag) -> Result<()> {
        if x.p() != self.p || x.d() != self.d {
            return Err(Error::Dimension(format!(
                "bag is {}x{}, model is {}x{}",
                x.p(),
                x.d(),
                self.p,
                self.d
            )));
        }
        Ok(())
    }

    /// `g^j = <w^j, x^j>`.
    pub fn score(&self, x: &Bag) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok((0..self.p).map(|j| dot(self.row(j), x.feature(j))).collect())
    }

    /// `sign(g)` with `sign(0) = +1`.
    pub fn predict(&self, x: &Bag) -> Result<LabelVector> {
        Ok(LabelVector::from_scores(&self.score(x)?))
    }

    /// `<g(x), y>`.
    pub fn joint_score(&self, x: &Bag, y: &LabelVector) -> Result<f64> {
        if y.len() != self.p {
            return Err(Error::LengthMismatch { expected: self.p, actual: y.len() });
        }
        Ok(dot(&self.score(x)?, &y.signs()))
    }

    /// Text form: `p d`, then one row of `d` weights per element.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.p, self.d);
        for j in 0..self.p {
            let row: Vec<String> = self.row(j).iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (n, header) = lines.next().ok_or(Error::Parse { line: 1, message: "missing header".into() })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: n + 1, message: format!("bad header: {e}") })?;
        let [p, d] = dims[..] else {
            return Err(Error::Parse { line: n + 1, message: "header must be `p d`".into() });
        };
        let mut rows = Vec::with_capacity(p);
        for (n, line) in lines {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: n + 1, message: format!("bad weight: {e}") })?;
            if row.len() != d {
                return Err(Error::Parse { line: n + 1, message: format!("expected {d} weights, got {}", row.len()) });
            }
            rows.push(row);
        }
        if rows.len() != p {
            return Err(Error::Parse { line: text.lines().count(), message: format!("expected {p} rows, got {}", rows.len()) });
        }
        LinearModel::from_flat(p, d, rows.into_iter().flatten().collect())
    }
}

/// Mean discrete loss of the model's predictions.
pub fn empirical_risk(model: &LinearModel, data: &[Bag], loss: &LossSpec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for bag in data {
        total += loss_value(loss, bag.labels(), &model.predict(bag)?)?;
    }
    Ok(total / data.len() as f64)
}

/// Training surrogate family; the margin scale is chosen by [`Gamma`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surrogate {
    LovaszHinge,
    MarginRescale,
    SlackRescale,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gamma {
    /// Largest scale keeping margin rescaling an extension of every bag's loss.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub c: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub surrogate: Surrogate,
    pub inference: Inference,
    pub gamma: Gamma,
    pub loss: LossSpec,
    pub qp_max_passes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 1.0,
            epsilon: 0.01,
            max_iterations: 500,
            surrogate: Surrogate::LovaszHinge,
            inference: Inference::Exact,
            gamma: Gamma::Fixed(1.0),
            loss: LossSpec::Hamming,
            qp_max_passes: 10_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::InvalidConfig(format!("C must be positive, got {}", self.c)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if let Gamma::Fixed(g) = self.gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::InvalidConfig(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

/// Averaged linear cut of the surrogate risk at the point it was generated.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskCut {
    pub value: f64,
    pub direction: Vec<f64>,
    pub offset: f64,
}

/// Per-bag losses and the resolved surrogate for one dataset.
#[derive(Clone, Debug)]
pub struct Objective {
    data: Vec<Bag>,
    losses: Vec<SetFunction>,
    kind: SurrogateKind,
    p: usize,
    d: usize,
}

impl Objective {
    pub fn new(data: &[Bag], config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let (p, d) = dataset_shape(data)?;
        let losses = if config.loss.depends_on_labels() {
            data.iter().map(|b| build_loss(&config.loss, b.labels())).collect::<Result<Vec<_>>>()?
        } else {
            // one shared instance, so the value cache is shared too
            let shared = build_loss(&config.loss, &LabelVector::all_positive(p))?;
            vec![shared; data.len()]
        };
        let kind = match config.surrogate {
            Surrogate::LovaszHinge => SurrogateKind::LovaszHinge,
            Surrogate::SlackRescale => SurrogateKind::SlackRescale { inference: config.inference },
            Surrogate::MarginRescale => {
                let gamma = match config.gamma {
                    Gamma::Fixed(g) => g,
                    Gamma::Auto => auto_gamma(&losses, config.loss.depends_on_labels())?,
                };
                SurrogateKind::MarginRescale { gamma, inference: config.inference }
            }
        };
        kind.validate()?;
        Ok(Objective { data: data.to_vec(), losses, kind, p, d })
    }

    pub fn kind(&self) -> &SurrogateKind {
        &self.kind
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    pub fn dim(&self) -> usize {
        self.p * self.d
    }

    /// Averaged surrogate risk at `w` with its touching cut.
    pub fn risk_and_cut(&self, w: &[f64]) -> Result<RiskCut> {
        let model = LinearModel::from_flat(self.p, self.d, w.to_vec())?;
        let pieces: Vec<(f64, f64, Vec<f64>)> = self
            .data
            .par_iter()
            .zip(&self.losses)
            .map(|(bag, l)| {
                let g = model.score(bag)?;
                let piece = surrogate_piece(&self.kind, l, bag.labels(), &g)?;
                let mut grad = vec![0.0; self.p * self.d];
                for j in 0..self.p {
                    if piece.slope[j] != 0.0 {
                        for (k, x) in bag.feature(j).iter().enumerate() {
                            grad[j * self.d + k] = piece.slope[j] * x;
                        }
                    }
                }
                Ok((piece.value, piece.constant, grad))
            })
            .collect::<Result<_>>()?;
        let n = self.n() as f64;
        let mut value = 0.0;
        let mut offset = 0.0;
        let mut direction = vec![0.0; self.dim()];
        // fixed bag order keeps the sums reproducible
        for (v, c, grad) in &pieces {
            value += v;
            offset += c;
            for (a, g) in direction.iter_mut().zip(grad) {
                *a -= g;
            }
        }
        direction.iter_mut().for_each(|a| *a /= n);
        Ok(RiskCut { value: value / n, direction, offset: offset / n })
    }

    pub fn risk(&self, w: &[f64]) -> Result<f64> {
        Ok(self.risk_and_cut(w)?.value)
    }

    /// `λ/2 ‖w‖² + risk(w)` with `λ = 1/(C n)`.
    pub fn regularized(&self, w: &[f64], c: f64) -> Result<f64> {
        Ok(dot(w, w) / (2.0 * c * self.n() as f64) + self.risk(w)?)
    }
}

fn auto_gamma(losses: &[SetFunction], per_bag: bool) -> Result<f64> {
    let distinct = if per_bag { losses } else { &losses[..1.min(losses.len())] };
    let mut gamma = f64::INFINITY;
    for l in distinct {
        let g = if l.resolved_submodular()? && l.is_known_increasing()? {
            let top = (0..l.p()).map(|i| l.value(1 << i)).fold(0.0, f64::max);
            if top > 0.0 { 2.0 / top } else { f64::INFINITY }
        } else {
            margin_extension_gamma(l)?
        };
        gamma = gamma.min(g);
    }
    Ok(if gamma.is_finite() { gamma } else { 1.0 })
}

/// Averaged surrogate risk at the model and its touching cut.
pub fn surrogate_risk_and_cut(model: &LinearModel, data: &[Bag], config: &TrainConfig) -> Result<RiskCut> {
    Objective::new(data, config)?.risk_and_cut(model.weights())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapRecord {
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CuttingPlaneState {
    pub constraints: Vec<Constraint>,
    pub alpha: Vec<f64>,
    pub xi: f64,
    pub gap_trace: Vec<GapRecord>,
    pub converged: bool,
}

/// Two constraints closer than this count as the same.
pub const DUPLICATE_TOL: f64 = 1e-10;

/// One-slack cutting-plane training of
/// `J(w) = ‖w‖² / (2 C n) + (1/n) Σ_i surrogate_i(w)`.
///
/// The master problem uses `C n` as its trade-off, so primal, dual and gap in
/// the trace are in units of `J`. The returned model is the best primal
/// iterate.
pub fn train_cutting_plane(data: &[Bag], config: &TrainConfig) -> Result<(LinearModel, CuttingPlaneState)> {
    let objective = Objective::new(data, config)?;
    let (p, d) = (objective.p, objective.d);
    let c_master = config.c * objective.n() as f64;
    let mut qp = MasterQp::new();
    let mut w = vec![0.0; p * d];
    let mut dual = 0.0;
    let mut xi = 0.0;
    let mut best_primal = f64::INFINITY;
    let mut best_w = w.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 1..=config.max_iterations {
        let cut = objective.risk_and_cut(&w)?;
        let primal = dot(&w, &w) / (2.0 * c_master) + cut.value;
        if primal < best_primal {
            best_primal = primal;
            best_w.clone_from(&w);
        }
        let gap = best_primal - dual;
        trace.push(GapRecord { iteration, primal: best_primal, dual, gap });
        if gap <= config.epsilon {
            converged = true;
            break;
        }
        let constraint = Constraint { direction: cut.direction, offset: cut.offset };
        if qp.contains_near(&constraint, DUPLICATE_TOL) {
            break;
        }
        qp.push(constraint)?;
        let sol = qp.solve(c_master, config.qp_max_passes)?;
        w = sol.w;
        xi = sol.xi;
        dual = sol.dual_objective / c_master;
    }
    let model = LinearModel::from_flat(p, d, best_w)?;
    let state = CuttingPlaneState {
        constraints: qp.constraints().to_vec(),
        alpha: qp.alpha().to_vec(),
        xi,
        gap_trace: trace,
        converged,
    };
    Ok((model, state))
}

/// Step sizes for [`train_subgradient`]; all positive and non-increasing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LearningRate {
    /// `1 / (λ t)`.
    InverseLambda,
    /// `η0 / sqrt(t)`.
    InverseSqrt(f64),
}

impl LearningRate {
    fn step(self, t: usize, lambda: f64) -> f64 {
        match self {
            LearningRate::InverseLambda => 1.0 / (lambda * t as f64),
            LearningRate::InverseSqrt(eta) => eta / (t as f64).sqrt(),
        }
    }
}

/// Full-batch projected subgradient descent on the same objective as
/// [`train_cutting_plane`]. Runs `config.max_iterations` steps and returns
/// the best iterate seen, starting from `w = 0`.
pub fn train_subgradient(data: &[Bag], config: &TrainConfig, schedule: LearningRate) -> Result<LinearModel> {
    if let LearningRate::InverseSqrt(eta) = schedule {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {eta}")));
        }
    }
    let objective = Objective::new(data, config)?;
    let (p, d) = (objective.p, objective.d);
    let lambda = 1.0 / (config.c * objective.n() as f64);
    let mut w = vec![0.0; p * d];
    let mut best_w = w.clone();
    let mut best = f64::INFINITY;
    // the minimizer satisfies λ/2 ‖w‖² <= J(0)
    let mut radius = f64::INFINITY;
    for t in 1..=config.max_iterations + 1 {
        let cut = objective.risk_and_cut(&w)?;
        let value = 0.5 * lambda * dot(&w, &w) + cut.value;
        if value < best {
            best = value;
            best_w.clone_from(&w);
        }
        if t == 1 {
            radius = (2.0 * value / lambda).sqrt();
        }
        if t > config.max_iterations {
            break;
        }
        let eta = schedule.step(t, lambda);
        for (wi, ai) in w.iter_mut().zip(&cut.direction) {
            // the risk subgradient is -direction
            *wi -= eta * (lambda * *wi - ai);
        }
        let norm = dot(&w, &w).sqrt();
        if norm > radius {
            w.iter_mut().for_each(|x| *x *= radius / norm);
        }
    }
    LinearModel::from_flat(p, d, best_w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag(features: Vec<Vec<f64>>, labels: Vec<i8>) -> Bag {
        Bag::new(features, LabelVector::new(labels).unwrap()).unwrap()
    }

    fn toy() -> Vec<Bag> {
        vec![
            bag(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 1]),
            bag(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![-1, -1]),
        ]
    }

    #[test]
    fn score_examples() {
        let x = bag(vec![vec![3.0], vec![1.0]], vec![1, -1]);
        assert_eq!(LinearModel::zeros(2, 1).score(&x).unwrap(), vec![0.0, 0.0]);
        let m = LinearModel::from_rows(vec![vec![2.0], vec![0.0]]).unwrap();
        assert_eq!(m.score(&x).unwrap(), vec![6.0, 0.0]);
        assert_eq!(m.predict(&x).unwrap().as_slice(), &[1, 1]);
        assert!(LinearModel::zeros(3, 1).score(&x).is_err());
    }

    #[test]
    fn joint_score_examples() {
        let x = bag(vec![vec![1.0], vec![1.0]], vec![1, 1]);
        let m = LinearModel::from_rows(vec![vec![1.0], vec![-1.0]]).unwrap();
        let y = LabelVector::all_positive(2);
        assert_eq!(m.joint_score(&x, &y).unwrap(), 0.0);
        let z = LabelVector::new(vec![1, -1]).unwrap();
        assert_eq!(m.joint_score(&x, &z).unwrap() + m.joint_score(&x, &z.negated()).unwrap(), 0.0);
    }

    #[test]
    fn risk_examples() {
        let data = toy();
        let zero = LinearModel::zeros(2, 2);
        // zero scores predict +1 everywhere: the negative bag is fully wrong
        assert_eq!(empirical_risk(&zero, &data, &LossSpec::Hamming).unwrap(), 1.0);
        assert!(matches!(empirical_risk(&zero, &[], &LossSpec::Hamming), Err(Error::EmptyDataset)));
        let cut = surrogate_risk_and_cut(&zero, &data, &TrainConfig::default()).unwrap();
        assert_eq!(cut.value, 2.0);
    }

    #[test]
    fn model_text_round_trip() {
        let m = LinearModel::from_rows(vec![vec![0.1, -1.0 / 3.0], vec![1e-300, 12345.678901234567]]).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("2 2\n"));
        assert_eq!(LinearModel::from_text(&text).unwrap(), m);
        assert!(matches!(LinearModel::from_text("2 2\n1 2\n3\n"), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn cutting_plane_separates_toy() {
        let config = TrainConfig { c: 100.0, ..TrainConfig::default() };
        let (model, state) = train_cutting_plane(&toy(), &config).unwrap();
        assert!(state.converged);
        assert_eq!(empirical_risk(&model, &toy(), &LossSpec::Hamming).unwrap(), 0.0);
        let last = state.gap_trace.last().unwrap();
        assert!(last.gap <= config.epsilon);
        for r in &state.gap_trace {
            assert!(r.gap >= -1e-8);
        }
        for pair in state.gap_trace.windows(2) {
            assert!(pair[1].dual >= pair[0].dual - 1e-12);
        }
    }

    #[test]
    fn subgradient_with_no_steps_is_zero() {
        let config = TrainConfig { max_iterations: 0, ..TrainConfig::default() };
        let m = train_subgradient(&toy(), &config, LearningRate::InverseLambda).unwrap();
        assert_eq!(m, LinearModel::zeros(2, 2));
    }

    #[test]
    fn optimizers_agree_on_toy() {
        let config = TrainConfig { c: 1.0, epsilon: 1e-4, max_iterations: 2000, ..TrainConfig::default() };
        let objective = Objective::new(&toy(), &config).unwrap();
        let (cp, _) = train_cutting_plane(&toy(), &config).unwrap();
        let sg = train_subgradient(&toy(), &config, LearningRate::InverseLambda).unwrap();
        let a = objective.regularized(cp.weights(), config.c).unwrap();
        let b = objective.regularized(sg.weights(), config.c).unwrap();
        assert!((a - b).abs() <= 0.05 * a.abs().max(1e-12), "{a} vs {b}");
        assert!(b <= objective.regularized(&[0.0; 4], config.c).unwrap());
    }
}
