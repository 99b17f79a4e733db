//! Synthetic early-detection data, dataset files, and the cross-comparison
//! and gap-trace harnesses.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dataset_shape, empirical_risk, train_cutting_plane, Bag, TrainConfig};
use crate::setfn::{LabelVector, LossSpec};

/// Gaussian class-conditional mixture over chronologically ordered slots.
/// Slots `i <= p/2` (one-based) draw positives from the early component,
/// the rest from the late one; negatives are stationary.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_bags: usize,
    pub p: usize,
    pub d: usize,
    pub seed: u64,
    pub early_mean: Vec<f64>,
    pub early_cov: Vec<Vec<f64>>,
    pub late_mean: Vec<f64>,
    pub late_cov: Vec<Vec<f64>>,
    pub negative_mean: Vec<f64>,
    pub negative_cov: Vec<Vec<f64>>,
    pub positive_rate: f64,
    /// Appends a constant 1 to every feature vector so the per-slot linear
    /// scorers get an intercept.
    pub bias: bool,
}

fn scaled_identity(d: usize, s: f64) -> Vec<Vec<f64>> {
    (0..d).map(|i| (0..d).map(|j| if i == j { s } else { 0.0 }).collect()).collect()
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_bags: 200,
            p: 15,
            d: 2,
            seed: 0,
            early_mean: vec![2.0, 2.0],
            early_cov: scaled_identity(2, 0.5),
            late_mean: vec![-2.0, 2.0],
            late_cov: scaled_identity(2, 0.5),
            negative_mean: vec![0.0, 0.0],
            negative_cov: scaled_identity(2, 1.0),
            positive_rate: 0.5,
            bias: true,
        }
    }
}

impl SyntheticSpec {
    /// Feature dimension of generated bags.
    pub fn feature_dim(&self) -> usize {
        self.d + usize::from(self.bias)
    }
}

/// Lower-triangular `L` with `L Lᵀ = cov`.
pub fn cholesky(cov: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = cov.len();
    if cov.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidConfig("covariance must be square".into()));
    }
    for i in 0..d {
        for j in 0..i {
            if (cov[i][j] - cov[j][i]).abs() > 1e-12 * (1.0 + cov[i][j].abs()) {
                return Err(Error::InvalidConfig("covariance must be symmetric".into()));
            }
        }
    }
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = cov[i][i] - s;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidConfig("covariance must be positive definite".into()));
                }
                l[i][j] = v.sqrt();
            } else {
                l[i][j] = (cov[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

struct Gaussian {
    mean: Vec<f64>,
    chol: Vec<Vec<f64>>,
}

impl Gaussian {
    fn new(mean: &[f64], cov: &[Vec<f64>], d: usize) -> Result<Self> {
        if mean.len() != d || cov.len() != d {
            return Err(Error::InvalidConfig(format!("mean and covariance must have dimension {d}")));
        }
        Ok(Gaussian { mean: mean.to_vec(), chol: cholesky(cov)? })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.mean
            .iter()
            .enumerate()
            .map(|(i, m)| m + (0..=i).map(|k| self.chol[i][k] * z[k]).sum::<f64>())
            .collect()
    }
}

pub fn gen_early_detection(spec: &SyntheticSpec) -> Result<Vec<Bag>> {
    if spec.p == 0 {
        return Err(Error::InvalidConfig("p must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.positive_rate) {
        return Err(Error::InvalidConfig(format!("positive rate {} outside [0, 1]", spec.positive_rate)));
    }
    let early = Gaussian::new(&spec.early_mean, &spec.early_cov, spec.d)?;
    let late = Gaussian::new(&spec.late_mean, &spec.late_cov, spec.d)?;
    let negative = Gaussian::new(&spec.negative_mean, &spec.negative_cov, spec.d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut bags = Vec::with_capacity(spec.n_bags);
    for _ in 0..spec.n_bags {
        let mut features = Vec::with_capacity(spec.p);
        let mut labels = Vec::with_capacity(spec.p);
        for slot in 1..=spec.p {
            let positive = rng.random_bool(spec.positive_rate);
            let source = match (positive, 2 * slot <= spec.p) {
                (false, _) => &negative,
                (true, true) => &early,
                (true, false) => &late,
            };
            let mut x = source.sample(&mut rng);
            if spec.bias {
                x.push(1.0);
            }
            features.push(x);
            labels.push(if positive { 1 } else { -1 });
        }
        bags.push(Bag::new(features, LabelVector::new(labels)?)?);
    }
    Ok(bags)
}

#[derive(Serialize, Deserialize)]
struct BagRecord {
    features: Vec<Vec<f64>>,
    labels: Vec<i64>,
}

/// Reads one JSON bag per line; blank lines are skipped. Errors carry the
/// one-based line number.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<Bag>> {
    let mut bags = Vec::new();
    let mut shape: Option<(usize, usize)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| Error::Parse { line: line_no, message };
        let record: BagRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let labels = record
            .labels
            .iter()
            .map(|&v| match v {
                1 => Ok(1i8),
                -1 => Ok(-1i8),
                other => Err(at(format!("label {other} is not +1 or -1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let bag = Bag::new(record.features, LabelVector::new(labels).map_err(|e| at(e.to_string()))?)
            .map_err(|e| at(e.to_string()))?;
        match shape {
            None => shape = Some((bag.p(), bag.d())),
            Some((p, d)) if (p, d) != (bag.p(), bag.d()) => {
                return Err(at(format!("bag is {}x{}, expected {p}x{d}", bag.p(), bag.d())));
            }
            _ => {}
        }
        bags.push(bag);
    }
    Ok(bags)
}

pub fn write_dataset<W: Write>(bags: &[Bag], mut out: W) -> Result<()> {
    for bag in bags {
        let record = BagRecord {
            features: bag.features(),
            labels: bag.labels().as_slice().iter().map(|&v| i64::from(v)).collect(),
        };
        let line = serde_json::to_string(&record).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// A named training configuration (one table row).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSpec {
    pub name: String,
    pub config: TrainConfig,
}

/// A named evaluation loss (one table column).
#[derive(Clone, Debug, PartialEq)]
pub struct TestLoss {
    pub name: String,
    pub loss: LossSpec,
}

/// Where each repeat's train and test sets come from.
#[derive(Clone, Debug)]
pub enum DataSource {
    /// Fresh draws per repeat, seeded `seed + repeat`; the test set uses a
    /// separate stream.
    Synthetic { train: SyntheticSpec, n_test: usize },
    /// Fixed sets; each repeat trains on a bootstrap resample.
    Fixed { train: Vec<Bag>, test: Vec<Bag> },
}

impl DataSource {
    fn draw(&self, seed: u64) -> Result<(Vec<Bag>, Vec<Bag>)> {
        match self {
            DataSource::Synthetic { train, n_test } => {
                let tr = SyntheticSpec { seed, ..train.clone() };
                let te = SyntheticSpec { seed: seed ^ 0x5EED_7E57_0000_0000, n_bags: *n_test, ..train.clone() };
                Ok((gen_early_detection(&tr)?, gen_early_detection(&te)?))
            }
            DataSource::Fixed { train, test } => {
                dataset_shape(train)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let resampled = (0..train.len()).map(|_| train[rng.random_range(0..train.len())].clone()).collect();
                Ok((resampled, test.clone()))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub mean: f64,
    /// Sample standard deviation over `√repeats`; 0 for a single repeat.
    pub standard_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossTable {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<Cell>>,
    /// `values[repeat][row][column]`.
    pub values: Vec<Vec<Vec<f64>>>,
    /// Repeats whose training stopped before reaching the gap tolerance, per row.
    pub unconverged: Vec<usize>,
    /// `chosen_c[repeat][row]`: the trade-off each final model was fit with.
    pub chosen_c: Vec<Vec<f64>>,
}

impl CrossTable {
    /// Number of repeats in which `row` attains the minimum of `column`.
    pub fn wins(&self, row: usize, column: usize) -> usize {
        self.values
            .iter()
            .filter(|rep| {
                let best = rep.iter().map(|r| r[column]).fold(f64::INFINITY, f64::min);
                rep[row][column] <= best
            })
            .count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = vec!["train".to_string()];
        for c in &self.columns {
            header.push(format!("{c}_mean"));
            header.push(format!("{c}_se"));
        }
        header.push("unconverged".into());
        writeln!(out, "{}", header.join(","))?;
        for (r, name) in self.rows.iter().enumerate() {
            let mut line = vec![name.clone()];
            for cell in &self.cells[r] {
                line.push(format!("{:.9}", cell.mean));
                line.push(format!("{:.9}", cell.standard_error));
            }
            line.push(self.unconverged[r].to_string());
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

fn mean_and_se(xs: &[f64]) -> Cell {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Cell { mean, standard_error: 0.0 };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Cell { mean, standard_error: var.sqrt() / n.sqrt() }
}

/// Per-row choice of `C` on a held-out tail of each training set.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSelection {
    pub c_grid: Vec<f64>,
    /// Fraction of training bags held out, in `(0, 1)`.
    pub validation_fraction: f64,
}

impl ModelSelection {
    fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::InvalidConfig("C grid must be nonempty and positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidConfig("validation fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// The grid value whose model, fit on the head of `train`, has the lowest
    /// validation loss under the row's own training loss. Ties keep the
    /// earlier grid entry.
    fn choose(&self, train: &[Bag], config: &TrainConfig) -> Result<f64> {
        let held = ((train.len() as f64 * self.validation_fraction).round() as usize).clamp(1, train.len() - 1);
        let (fit, validation) = train.split_at(train.len() - held);
        let mut best = (f64::INFINITY, self.c_grid[0]);
        for &c in &self.c_grid {
            let (model, _) = train_cutting_plane(fit, &TrainConfig { c, ..config.clone() })?;
            let loss = empirical_risk(&model, validation, &config.loss)?;
            if loss < best.0 {
                best = (loss, c);
            }
        }
        Ok(best.1)
    }
}

/// Trains every row on each repeat's data and evaluates every column on the
/// matching test set. Repeat `r` uses seed `seed + r`. With `selection`, each
/// row first picks its `C` on a validation split and is then refit on the
/// whole training set.
pub fn run_cross_comparison(
    source: &DataSource,
    train_specs: &[TrainSpec],
    test_losses: &[TestLoss],
    repeats: usize,
    seed: u64,
    selection: Option<&ModelSelection>,
) -> Result<CrossTable> {
    if repeats == 0 || train_specs.is_empty() || test_losses.is_empty() {
        return Err(Error::InvalidConfig("need at least one repeat, row and column".into()));
    }
    if let Some(sel) = selection {
        sel.validate()?;
    }
    let runs: Vec<(Vec<Vec<f64>>, Vec<bool>, Vec<f64>)> = (0..repeats as u64)
        .into_par_iter()
        .map(|r| {
            let (train, test) = source.draw(seed.wrapping_add(r))?;
            if selection.is_some() && train.len() < 2 {
                return Err(Error::InvalidConfig("model selection needs at least two training bags".into()));
            }
            let mut table = Vec::with_capacity(train_specs.len());
            let mut converged = Vec::with_capacity(train_specs.len());
            let mut chosen = Vec::with_capacity(train_specs.len());
            for spec in train_specs {
                let mut config = TrainConfig { seed: seed.wrapping_add(r), ..spec.config.clone() };
                if let Some(sel) = selection {
                    config.c = sel.choose(&train, &config)?;
                }
                let (model, state) = train_cutting_plane(&train, &config)?;
                converged.push(state.converged);
                chosen.push(config.c);
                table.push(
                    test_losses
                        .iter()
                        .map(|t| empirical_risk(&model, &test, &t.loss))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            Ok((table, converged, chosen))
        })
        .collect::<Result<_>>()?;
    let cells = (0..train_specs.len())
        .map(|row| {
            (0..test_losses.len())
                .map(|col| mean_and_se(&runs.iter().map(|(v, _, _)| v[row][col]).collect::<Vec<_>>()))
                .collect()
        })
        .collect();
    let unconverged =
        (0..train_specs.len()).map(|row| runs.iter().filter(|(_, c, _)| !c[row]).count()).collect();
    Ok(CrossTable {
        rows: train_specs.iter().map(|s| s.name.clone()).collect(),
        columns: test_losses.iter().map(|t| t.name.clone()).collect(),
        cells,
        chosen_c: runs.iter().map(|(_, _, c)| c.clone()).collect(),
        values: runs.into_iter().map(|(v, _, _)| v).collect(),
        unconverged,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub surrogate: String,
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

/// Trains each configuration on `data` and collects its gap trace.
pub fn capture_gap_traces(data: &[Bag], configs: &[TrainSpec]) -> Result<Vec<TraceRow>> {
    let mut rows = Vec::new();
    for spec in configs {
        let (_, state) = train_cutting_plane(data, &spec.config)?;
        rows.extend(state.gap_trace.iter().map(|r| TraceRow {
            surrogate: spec.name.clone(),
            iteration: r.iteration,
            primal: r.primal,
            dual: r.dual,
            gap: r.gap,
        }));
    }
    Ok(rows)
}

pub fn write_traces_csv<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "surrogate,iteration,primal,dual,gap")?;
    for r in rows {
        writeln!(out, "{},{},{:.9},{:.9},{:.9}", r.surrogate, r.iteration, r.primal, r.dual, r.gap)?;
    }
    Ok(())
}
