//! Python bindings: losses, surrogates and the cutting-plane trainer.

use lovasz_core::surrogates::surrogate_value;
use lovasz_core::{
    Bag, Gamma, Inference, LabelVector, LinearModel, LossSpec, SetFunction, SubsetMask, Surrogate, SurrogateKind,
    SyntheticSpec, TrainConfig, Verdict,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: lovasz_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn labels(y: Vec<i8>) -> PyResult<LabelVector> {
    LabelVector::new(y).map_err(err)
}

fn inference(greedy: bool) -> Inference {
    if greedy {
        Inference::Greedy
    } else {
        Inference::Exact
    }
}

fn loss_spec(
    name: &str,
    values: Option<Vec<f64>>,
    beta: Option<Vec<f64>>,
    lmax: Option<f64>,
    alpha: Option<f64>,
) -> PyResult<LossSpec> {
    let need = |v: Option<Vec<f64>>, what: &str| v.ok_or_else(|| PyValueError::new_err(format!("{name} needs {what}")));
    Ok(match name {
        "hamming" => LossSpec::Hamming,
        "jaccard" => LossSpec::Jaccard,
        "early" => LossSpec::EarlyDetection,
        "capped" => LossSpec::CappedWeighted {
            beta: need(beta, "beta")?,
            l_max: lmax.ok_or_else(|| PyValueError::new_err("capped needs lmax"))?,
        },
        "concave_modular" => LossSpec::ConcavePlusModular { beta: need(beta, "beta")? },
        "exp_size" => LossSpec::ExpSize { alpha: alpha.unwrap_or(1.0) },
        "sqrt_modular" => LossSpec::SqrtModular { weights: need(beta, "beta")? },
        "table" => LossSpec::Table { values: need(values, "values")? },
        other => return Err(PyValueError::new_err(format!("unknown loss `{other}`"))),
    })
}

/// A set function over `{0, .., p-1}`; subsets are passed as index lists.
#[pyclass(name = "Loss", frozen)]
struct PyLoss {
    inner: SetFunction,
}

impl PyLoss {
    fn mask(&self, indices: &[usize]) -> PyResult<SubsetMask> {
        SubsetMask::from_indices(indices, self.inner.p()).map_err(err)
    }

    fn kind(&self, surrogate: &str, gamma: Option<f64>, greedy: bool) -> PyResult<SurrogateKind> {
        Ok(match surrogate {
            "lovasz" => SurrogateKind::LovaszHinge,
            "margin" => SurrogateKind::MarginRescale {
                gamma: match gamma {
                    Some(g) => g,
                    None => lovasz_core::margin_extension_gamma(&self.inner).map_err(err)?,
                },
                inference: inference(greedy),
            },
            "slack" => SurrogateKind::SlackRescale { inference: inference(greedy) },
            other => return Err(PyValueError::new_err(format!("unknown surrogate `{other}`"))),
        })
    }
}

#[pymethods]
impl PyLoss {
    /// Loss from a value table indexed by subset bitmask.
    #[staticmethod]
    fn table(values: Vec<f64>) -> PyResult<Self> {
        Ok(PyLoss { inner: SetFunction::from_table(values).map_err(err)? })
    }

    /// Built-in loss for ground truth `labels`; `beta` doubles as the
    /// modular weights of `sqrt_modular`.
    #[staticmethod]
    #[pyo3(signature = (name, labels, beta=None, lmax=None, alpha=None))]
    fn builtin(
        name: &str,
        labels: Vec<i8>,
        beta: Option<Vec<f64>>,
        lmax: Option<f64>,
        alpha: Option<f64>,
    ) -> PyResult<Self> {
        let spec = loss_spec(name, None, beta, lmax, alpha)?;
        let y = self::labels(labels)?;
        Ok(PyLoss { inner: lovasz_core::build_loss(&spec, &y).map_err(err)? })
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    fn value(&self, subset: Vec<usize>) -> PyResult<f64> {
        self.inner.eval(self.mask(&subset)?).map_err(err)
    }

    fn normalize(&self) -> Self {
        PyLoss { inner: self.inner.normalize() }
    }

    fn is_submodular(&self) -> PyResult<bool> {
        Ok(lovasz_core::is_submodular(&self.inner).map_err(err)?.holds())
    }

    fn is_increasing(&self) -> PyResult<bool> {
        Ok(lovasz_core::is_increasing(&self.inner).map_err(err)?.holds())
    }

    fn is_modular(&self) -> PyResult<bool> {
        lovasz_core::is_modular(&self.inner).map_err(err)
    }

    fn lovasz_extension(&self, s: Vec<f64>) -> PyResult<f64> {
        lovasz_core::lovasz_extension(&self.inner, &s).map_err(err)
    }

    /// Greedy base-polyhedron vertex for direction `s`.
    fn greedy_subgradient(&self, s: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(lovasz_core::greedy_subgradient(&self.inner, &s).map_err(err)?.mu)
    }

    fn hinge(&self, labels: Vec<i8>, scores: Vec<f64>) -> PyResult<f64> {
        lovasz_core::lovasz_hinge(&self.inner, &self::labels(labels)?, &scores).map_err(err)
    }

    fn hinge_subgradient(&self, labels: Vec<i8>, scores: Vec<f64>) -> PyResult<Vec<f64>> {
        lovasz_core::lovasz_hinge_subgradient(&self.inner, &self::labels(labels)?, &scores).map_err(err)
    }

    /// Surrogate value: `lovasz`, `margin` (gamma defaults to the largest
    /// extension-preserving scale) or `slack`.
    #[pyo3(signature = (surrogate, labels, scores, gamma=None, greedy=false))]
    fn surrogate(&self, surrogate: &str, labels: Vec<i8>, scores: Vec<f64>, gamma: Option<f64>, greedy: bool) -> PyResult<f64> {
        let kind = self.kind(surrogate, gamma, greedy)?;
        surrogate_value(&kind, &self.inner, &self::labels(labels)?, &scores).map_err(err)
    }

    /// Vertices (as index lists) where the surrogate differs from the loss.
    #[pyo3(signature = (surrogate, labels, gamma=None))]
    fn extension_mismatches(&self, surrogate: &str, labels: Vec<i8>, gamma: Option<f64>) -> PyResult<Vec<Vec<usize>>> {
        let kind = self.kind(surrogate, gamma, false)?;
        Ok(match lovasz_core::is_extension(&kind, &self.inner, &self::labels(labels)?).map_err(err)? {
            Verdict::Holds => Vec::new(),
            Verdict::Fails(m) => m.iter().map(|v| v.vertex.indices().collect()).collect(),
        })
    }

    fn max_margin_gamma(&self) -> PyResult<f64> {
        lovasz_core::max_margin_gamma(&self.inner).map_err(err)
    }

    fn margin_extension_gamma(&self) -> PyResult<f64> {
        lovasz_core::margin_extension_gamma(&self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Loss(p={})", self.inner.p())
    }
}

/// Per-element linear scorers, one weight row per slot.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: LinearModel,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyModel { inner: LinearModel::from_rows(rows).map_err(err)? })
    }

    #[getter]
    fn weights(&self) -> Vec<Vec<f64>> {
        (0..self.inner.p()).map(|j| self.inner.row(j).to_vec()).collect()
    }

    fn scores(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let bag = Bag::new(features, LabelVector::all_positive(self.inner.p())).map_err(err)?;
        self.inner.score(&bag).map_err(err)
    }

    fn predict(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<i8>> {
        let bag = Bag::new(features, LabelVector::all_positive(self.inner.p())).map_err(err)?;
        Ok(self.inner.predict(&bag).map_err(err)?.as_slice().to_vec())
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PyModel { inner: LinearModel::from_text(text).map_err(err)? })
    }
}

type PyBag = (Vec<Vec<f64>>, Vec<i8>);

fn to_bags(data: Vec<PyBag>) -> PyResult<Vec<Bag>> {
    data.into_iter().map(|(x, y)| Bag::new(x, labels(y)?).map_err(err)).collect()
}

/// Synthetic early-detection bags as `(features, labels)` pairs.
#[pyfunction]
#[pyo3(signature = (n, p=15, seed=0, bias=true))]
fn synthetic(n: usize, p: usize, seed: u64, bias: bool) -> PyResult<Vec<PyBag>> {
    let spec = SyntheticSpec { n_bags: n, p, seed, bias, ..SyntheticSpec::default() };
    let bags = lovasz_core::gen_early_detection(&spec).map_err(err)?;
    Ok(bags.iter().map(|b| (b.features().to_vec(), b.labels().as_slice().to_vec())).collect())
}

/// Cutting-plane training; returns the model and a dict with `converged`
/// and the `(iteration, primal, dual, gap)` trace.
#[pyfunction]
#[pyo3(signature = (data, loss="early", surrogate="lovasz", c=1.0, epsilon=0.01, max_iterations=500, gamma=None, greedy=false, beta=None, lmax=None, alpha=None))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    data: Vec<PyBag>,
    loss: &str,
    surrogate: &str,
    c: f64,
    epsilon: f64,
    max_iterations: usize,
    gamma: Option<f64>,
    greedy: bool,
    beta: Option<Vec<f64>>,
    lmax: Option<f64>,
    alpha: Option<f64>,
) -> PyResult<(PyModel, Py<pyo3::types::PyDict>)> {
    let surrogate = match surrogate {
        "lovasz" => Surrogate::LovaszHinge,
        "margin" => Surrogate::MarginRescale,
        "slack" => Surrogate::SlackRescale,
        other => return Err(PyValueError::new_err(format!("unknown surrogate `{other}`"))),
    };
    let config = TrainConfig {
        c,
        epsilon,
        max_iterations,
        surrogate,
        inference: inference(greedy),
        gamma: gamma.map_or(Gamma::Auto, Gamma::Fixed),
        loss: loss_spec(loss, None, beta, lmax, alpha)?,
        ..TrainConfig::default()
    };
    let bags = to_bags(data)?;
    let (model, state) = py.detach(|| lovasz_core::train_cutting_plane(&bags, &config)).map_err(err)?;
    let info = pyo3::types::PyDict::new(py);
    info.set_item("converged", state.converged)?;
    let trace: Vec<(usize, f64, f64, f64)> =
        state.gap_trace.iter().map(|r| (r.iteration, r.primal, r.dual, r.gap)).collect();
    info.set_item("trace", trace)?;
    Ok((PyModel { inner: model }, info.unbind()))
}

/// Mean task loss of `model` predictions over `data`.
#[pyfunction]
#[pyo3(signature = (model, data, loss="hamming", beta=None, lmax=None, alpha=None))]
fn empirical_risk(
    model: &PyModel,
    data: Vec<PyBag>,
    loss: &str,
    beta: Option<Vec<f64>>,
    lmax: Option<f64>,
    alpha: Option<f64>,
) -> PyResult<f64> {
    let spec = loss_spec(loss, None, beta, lmax, alpha)?;
    lovasz_core::empirical_risk(&model.inner, &to_bags(data)?, &spec).map_err(err)
}

#[pymodule]
fn lovasz_hinge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLoss>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_risk, m)?)?;
    Ok(())
}
