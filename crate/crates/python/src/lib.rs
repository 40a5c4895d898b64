//! Python bindings for loading, costing, refining and rendering model bundles.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cmod_core::mdl::{CostReport, Quantizer};
use cmod_core::refine::{check_parsimony_grounded, search_compressive, Grounding, SearchConfig};
use cmod_core::semantics::MetricKind;
use cmod_core::zoo::{self, Bundle, ZooError};

fn zoo_err(e: ZooError) -> PyErr {
    match e {
        ZooError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A model together with its interpretation and label vocabulary.
#[pyclass(name = "Bundle", module = "cmod", skip_from_py_object)]
#[derive(Clone)]
struct PyBundle {
    inner: Bundle,
}

fn grounding(b: &Bundle) -> PyResult<Grounding> {
    Ok(Grounding { ic: b.ic.clone(), vocab: b.vocab.clone(), oracle: b.oracle().map_err(zoo_err)? })
}

fn cost_dict<'py>(py: Python<'py>, r: &CostReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("wiring_bits", r.wiring_bits)?;
    d.set_item("component_bits", r.component_total())?;
    d.set_item("rep_bits", r.rep_bits)?;
    d.set_item("int_bits", r.int_bits)?;
    d.set_item("total_bits", r.total_bits)?;
    d.set_item("elements", r.elements)?;
    Ok(d)
}

#[pymethods]
impl PyBundle {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: zoo::load(path).map_err(zoo_err)? })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self { inner: zoo::from_text(text).map_err(zoo_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        zoo::save(&self.inner, path).map_err(zoo_err)
    }

    fn to_text(&self) -> PyResult<String> {
        zoo::to_text(&self.inner).map_err(zoo_err)
    }

    /// Graphviz DOT for the diagram.
    fn render(&self) -> String {
        self.inner.model.diagram.to_dot()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.model.diagram.node_count()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.vocab.labels().iter().map(|l| l.name.clone()).collect()
    }

    /// Description-length breakdown, optionally at another quantization width.
    #[pyo3(signature = (q=None))]
    fn cost<'py>(&self, py: Python<'py>, q: Option<u32>) -> PyResult<Bound<'py, PyDict>> {
        let mut s = self.inner.scheme().map_err(zoo_err)?;
        if let Some(q) = q {
            if !(2..=48).contains(&q) {
                return Err(PyValueError::new_err(format!("q must lie in 2..=48, got {q}")));
            }
            s.quantizer = Quantizer::new(q);
        }
        let r = grounding(&self.inner)?.cost(&self.inner.model, &s).map_err(value_err)?;
        cost_dict(py, &r)
    }

    /// Runs the compressive search and returns the refined bundle with its trace lines.
    #[pyo3(signature = (eps_global=None, metric=None, seed=None, max_iters=None))]
    fn refine(
        &self,
        eps_global: Option<f64>,
        metric: Option<&str>,
        seed: Option<u64>,
        max_iters: Option<usize>,
    ) -> PyResult<(PyBundle, Vec<String>)> {
        let d = SearchConfig::default();
        let metric = match metric {
            None => d.metric,
            Some(m) => MetricKind::from_name(m).ok_or_else(|| PyValueError::new_err(format!("unknown metric `{m}`")))?,
        };
        let config = SearchConfig {
            eps_global: eps_global.unwrap_or(d.eps_global),
            seed: seed.unwrap_or(d.seed),
            max_iterations: max_iters.unwrap_or(d.max_iterations),
            metric,
            scheme: self.inner.scheme().map_err(zoo_err)?,
            ..d
        };
        config.validate().map_err(PyValueError::new_err)?;
        let g = grounding(&self.inner)?;
        let (m, trace) = search_compressive(&self.inner.model, &config, Some(&g)).map_err(value_err)?;
        let steps = trace.steps.iter().map(|s| s.to_string()).collect();
        Ok((PyBundle { inner: self.inner.with_model(m) }, steps))
    }

    /// Compares this bundle with a refinement of it under the shared vocabulary.
    fn parsimony<'py>(&self, py: Python<'py>, after: &PyBundle) -> PyResult<Bound<'py, PyDict>> {
        let (b, a) = (&self.inner, &after.inner);
        if a.vocab != b.vocab {
            return Err(PyValueError::new_err("bundles use different label vocabularies"));
        }
        let s = b.scheme().map_err(zoo_err)?;
        let o = b.oracle().map_err(zoo_err)?;
        let r = check_parsimony_grounded(&b.model, &b.ic, &a.model, &a.ic, &b.vocab, &s, &o).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("rep_before", r.rep_before)?;
        d.set_item("rep_after", r.rep_after)?;
        d.set_item("int_before", r.int_before)?;
        d.set_item("int_after", r.int_after)?;
        d.set_item("total_before", r.total_before)?;
        d.set_item("total_after", r.total_after)?;
        d.set_item("criterion_holds", r.criterion_holds)?;
        d.set_item("parsimonious", r.verdict)?;
        Ok(d)
    }
}

/// Builds a named example: fig1, fig1-reference, rank-deficient or sparse-entangled.
#[pyfunction]
#[pyo3(signature = (name, n=8, r=2, blocks=vec![2, 3], noise=1e-3, seed=0))]
fn build(name: &str, n: usize, r: usize, blocks: Vec<usize>, noise: f64, seed: u64) -> PyResult<PyBundle> {
    let inner = match name {
        "fig1" => zoo::build_fig1(),
        "fig1-reference" => zoo::build_fig1_reference(),
        "rank-deficient" => zoo::build_rank_deficient(n, r, seed),
        "sparse-entangled" => zoo::build_sparse_entangled(&blocks, noise, seed),
        other => return Err(PyValueError::new_err(format!("unknown example `{other}`"))),
    }
    .map_err(zoo_err)?;
    Ok(PyBundle { inner })
}

#[pymodule]
fn cmod(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBundle>()?;
    m.add_function(wrap_pyfunction!(build, m)?)?;
    Ok(())
}
