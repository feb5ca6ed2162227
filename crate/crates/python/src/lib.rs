//! Python bindings for `kgalign`.
//!
//! Matrices cross the boundary as lists of rows; configs and reports as
//! plain dicts (round-tripped through JSON).

use std::path::PathBuf;

use kgalign::align::{self, RankMode, SimilarityMatrix};
use kgalign::kg::{self, GraphTag};
use kgalign::pipeline::{self, PipelineConfig, SyntheticSpec};
use kgalign::reconstruct;
use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(kgalign_py, KgAlignError, PyException);
create_exception!(kgalign_py, ConfigError, KgAlignError);
create_exception!(kgalign_py, DataError, KgAlignError);
create_exception!(kgalign_py, NumericalError, KgAlignError);

fn to_py(e: kgalign::Error) -> PyErr {
    let msg = e.to_string();
    match e.exit_code() {
        1 => ConfigError::new_err(msg),
        3 => NumericalError::new_err(msg),
        _ => DataError::new_err(msg),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    to_py(e.into())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(ConfigError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).map_err(|e| ConfigError::new_err(e.to_string()))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn tag(side: u8) -> PyResult<GraphTag> {
    match side {
        1 => Ok(GraphTag::Kg1),
        2 => Ok(GraphTag::Kg2),
        _ => Err(ConfigError::new_err(format!("side must be 1 or 2, got {side}"))),
    }
}

/// Round-trips a serde value into a Python object via `json`.
fn to_object<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(json_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn to_json_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

/// A knowledge graph with interned entity and relation names.
#[pyclass(name = "KnowledgeGraph", module = "kgalign_py")]
struct PyKnowledgeGraph {
    inner: kg::KnowledgeGraph,
}

#[pymethods]
impl PyKnowledgeGraph {
    #[new]
    #[pyo3(signature = (triples, side = 1))]
    fn new(triples: Vec<(String, String, String)>, side: u8) -> PyResult<Self> {
        let mut inner = kg::KnowledgeGraph::new(tag(side)?);
        for (h, r, t) in &triples {
            inner.insert(h, r, t);
        }
        Ok(Self { inner })
    }

    /// Reads a tab-separated `head relation tail` file.
    #[staticmethod]
    #[pyo3(signature = (path, side = 1))]
    fn from_file(path: PathBuf, side: u8) -> PyResult<Self> {
        Ok(Self { inner: kg::KnowledgeGraph::parse_triples(path, tag(side)?).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_triples(path).map_err(to_py)
    }

    #[getter]
    fn num_entities(&self) -> usize {
        self.inner.num_entities()
    }

    #[getter]
    fn num_relations(&self) -> usize {
        self.inner.num_relations()
    }

    #[getter]
    fn num_triples(&self) -> usize {
        self.inner.num_triples()
    }

    fn entities(&self) -> Vec<String> {
        self.inner.entities().names().to_vec()
    }

    fn relations(&self) -> Vec<String> {
        self.inner.relations().names().to_vec()
    }

    fn triples(&self) -> Vec<(String, String, String)> {
        let g = &self.inner;
        let name = |id| g.entity_name(id).unwrap_or_default().to_string();
        g.triples()
            .iter()
            .map(|t| (name(t.head), g.relation_name(t.relation).unwrap_or_default().to_string(), name(t.tail)))
            .collect()
    }

    /// Undirected neighbors of `entity`, optionally including itself.
    #[pyo3(signature = (entity, self_loop = false))]
    fn neighbors(&self, entity: &str, self_loop: bool) -> PyResult<Vec<String>> {
        let g = &self.inner;
        let id = g.entity_id(entity).ok_or_else(|| DataError::new_err(format!("unknown entity {entity}")))?;
        let ids = g.neighbors(id, self_loop).map_err(to_py)?;
        Ok(ids.into_iter().map(|i| g.entity_name(i).unwrap_or_default().to_string()).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.num_triples()
    }

    fn __repr__(&self) -> String {
        format!(
            "KnowledgeGraph(entities={}, relations={}, triples={})",
            self.inner.num_entities(),
            self.inner.num_relations(),
            self.inner.num_triples()
        )
    }
}

/// Cosine similarity between every row of `a` and every row of `b`.
#[pyfunction]
fn cosine_matrix(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let (a, b) = (matrix(a)?, matrix(b)?);
    Ok(rows(&reconstruct::cosine_matrix(a.view(), b.view()).map_err(to_py)?))
}

/// Mutual-best `(row, col, score)` pairs scoring strictly above `gamma`.
#[pyfunction]
fn pseudo_labels(sim: Vec<Vec<f64>>, gamma: f64) -> PyResult<Vec<(usize, usize, f64)>> {
    let sim = matrix(sim)?;
    let set = reconstruct::pseudo_labels(sim.view(), gamma);
    Ok(set.pairs.iter().zip(&set.scores).map(|(&(i, j), &s)| (i, j, s)).collect())
}

/// Consistency-adjusted distances: `(row_max + col_max) / 2 - raw`.
#[pyfunction]
fn consistency(raw: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&SimilarityMatrix::from_raw(matrix(raw)?).map_err(to_py)?.adjusted))
}

/// Candidate columns per row, best first.
#[pyfunction]
#[pyo3(signature = (raw, mode = "consistency"))]
fn rank(raw: Vec<Vec<f64>>, mode: &str) -> PyResult<Vec<Vec<usize>>> {
    let mode: RankMode = mode.parse().map_err(to_py)?;
    let sim = SimilarityMatrix::from_raw(matrix(raw)?).map_err(to_py)?;
    Ok(align::rank_candidates(&sim, mode).lists)
}

#[pyfunction]
fn hits_at_k(ranks: Vec<usize>, k: usize) -> f64 {
    align::hits_at_k(&ranks, k)
}

#[pyfunction]
fn mrr(ranks: Vec<usize>) -> f64 {
    align::mrr(&ranks)
}

/// Default pipeline configuration as a dict.
#[pyfunction]
fn default_config(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_object(py, &PipelineConfig::default())
}

/// Writes a synthetic graph pair with gold links `i <-> i` to `out`.
#[pyfunction]
#[pyo3(signature = (out, **spec))]
fn generate_synthetic(out: PathBuf, spec: Option<&Bound<'_, PyDict>>) -> PyResult<(usize, usize, usize)> {
    let spec: SyntheticSpec = match spec {
        Some(d) => serde_json::from_str(&to_json_text(d.as_any())?).map_err(json_err)?,
        None => SyntheticSpec::default(),
    };
    let data = pipeline::generate_synthetic(&spec).map_err(to_py)?;
    data.write(&out).map_err(to_py)?;
    Ok((data.kg1.num_triples(), data.kg2.num_triples(), data.links.len()))
}

/// Runs every stage with `config` (a dict or JSON string) and returns the
/// evaluation report plus reconstruction and training summaries.
#[pyfunction]
fn run_pipeline<'py>(py: Python<'py>, config: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let text = match config.extract::<String>() {
        Ok(s) => s,
        Err(_) => to_json_text(config)?,
    };
    let cfg = PipelineConfig::from_json(&text).map_err(to_py)?;
    let outcome = py.detach(|| pipeline::run_pipeline(&cfg)).map_err(to_py)?;
    let summary = serde_json::json!({
        "report": outcome.report,
        "reconstruction": outcome.reconstruction.report(&outcome.inputs.primal),
        "train_log": outcome.train_log,
    });
    to_object(py, &summary)
}

#[pymodule]
fn kgalign_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("KgAlignError", py.get_type::<KgAlignError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("NumericalError", py.get_type::<NumericalError>())?;
    m.add_class::<PyKnowledgeGraph>()?;
    m.add_function(wrap_pyfunction!(cosine_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_labels, m)?)?;
    m.add_function(wrap_pyfunction!(consistency, m)?)?;
    m.add_function(wrap_pyfunction!(rank, m)?)?;
    m.add_function(wrap_pyfunction!(hits_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mrr, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
