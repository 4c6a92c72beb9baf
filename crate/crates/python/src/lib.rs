//! Python bindings: datasets, models, extraction, verification and the
//! experiment runner. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use gnnfp::extraction::{run_extraction, AttackConfig, AttackType, LocalOracle};
use gnnfp::fingerprint::{verify as verify_pair, SimilarityClassifier};
use gnnfp::gnn::{prune as prune_model, train, Architecture, GnnConfig, GnnModel};
use gnnfp::graph_data::{generate_synthetic, load_dataset, save_dataset, split_dataset, GraphDataset, SyntheticGraphSpec, DEFAULT_FRACTIONS};
use gnnfp::harness::{run_experiment as run, ExperimentConfig};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(m: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

#[pyclass(name = "Dataset", module = "gnnfp_py")]
struct PyDataset(GraphDataset);

#[pymethods]
impl PyDataset {
    /// Synthetic block-model graph; omitted settings use the defaults.
    #[staticmethod]
    #[pyo3(signature = (seed=0, nodes_per_class=None, num_classes=None))]
    fn synthetic(seed: u64, nodes_per_class: Option<usize>, num_classes: Option<usize>) -> PyResult<Self> {
        let d = SyntheticGraphSpec::default();
        let spec = SyntheticGraphSpec {
            seed,
            nodes_per_class: nodes_per_class.unwrap_or(d.nodes_per_class),
            num_classes: num_classes.unwrap_or(d.num_classes),
            ..d
        };
        Ok(Self(generate_synthetic(&spec).map_err(err)?))
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self(load_dataset(&dir).map_err(err)?))
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        save_dataset(&self.0, &dir).map_err(err)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.0.node_count()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels().to_vec()
    }

    /// `{"target_train", "surrogate_train", "test", "verification"}` node lists.
    #[pyo3(signature = (seed=0))]
    fn split(&self, seed: u64) -> PyResult<std::collections::BTreeMap<&'static str, Vec<usize>>> {
        let s = split_dataset(self.0.node_count(), DEFAULT_FRACTIONS, seed).map_err(err)?;
        Ok([
            ("target_train", s.target_train),
            ("surrogate_train", s.surrogate_train),
            ("test", s.test),
            ("verification", s.verification),
        ]
        .into_iter()
        .collect())
    }
}

#[pyclass(name = "Model", module = "gnnfp_py")]
struct PyModel(GnnModel);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(GnnModel::load(&path).map_err(err)?))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self(GnnModel::from_bytes(data).map_err(err)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.to_bytes())
    }

    #[getter]
    fn architecture(&self) -> String {
        self.0.config.architecture.to_string()
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.0.embedding_dim()
    }

    /// Embeddings of `nodes` inside the dataset's full graph.
    #[pyo3(signature = (dataset, nodes, seed=0))]
    fn embed(&self, dataset: &PyDataset, nodes: Vec<usize>, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.0.embed(dataset.0.graph(), &nodes, seed).map_err(err)?))
    }

    #[pyo3(signature = (dataset, nodes, seed=0))]
    fn predict(&self, dataset: &PyDataset, nodes: Vec<usize>, seed: u64) -> PyResult<Vec<usize>> {
        self.0.predict(dataset.0.graph(), &nodes, seed).map_err(err)
    }

    fn prune(&self, ratio: f64) -> PyResult<Self> {
        Ok(Self(prune_model(&self.0, ratio).map_err(err)?))
    }
}

/// Train a model on the subgraph induced by `nodes`.
#[pyfunction]
#[pyo3(signature = (dataset, nodes, architecture="graphsage", seed=0, hidden_dim=None, epochs=None))]
fn train_model(
    dataset: &PyDataset,
    nodes: Vec<usize>,
    architecture: &str,
    seed: u64,
    hidden_dim: Option<usize>,
    epochs: Option<usize>,
) -> PyResult<PyModel> {
    let arch: Architecture = architecture.parse().map_err(err)?;
    let mut cfg = GnnConfig::new(arch).with_seed(seed);
    if let Some(h) = hidden_dim {
        cfg = cfg.with_hidden_dim(h);
    }
    if let Some(e) = epochs {
        cfg.max_epochs = e;
    }
    Ok(PyModel(train(&cfg, &dataset.0, &nodes).map_err(err)?.0))
}

/// Extract a surrogate of `target` using the attacker's nodes.
#[pyfunction]
#[pyo3(signature = (target, dataset, nodes, attack_type="type1", architecture="graphsage", seed=0, epochs=None))]
fn extract(
    target: &PyModel,
    dataset: &PyDataset,
    nodes: Vec<usize>,
    attack_type: &str,
    architecture: &str,
    seed: u64,
    epochs: Option<usize>,
) -> PyResult<PyModel> {
    let at: AttackType = attack_type.parse().map_err(err)?;
    let arch: Architecture = architecture.parse().map_err(err)?;
    let mut cfg = AttackConfig::new(at, arch, seed);
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let attacker = dataset.0.induced(&nodes).map_err(err)?;
    let oracle = LocalOracle::new(target.0.clone());
    Ok(PyModel(run_extraction(&oracle, &attacker, &cfg).map_err(err)?.model))
}

/// Verdict report as a JSON string.
#[pyfunction]
#[pyo3(signature = (csim_json, target, suspect, dataset, verification_nodes, seed=0))]
fn verify(
    csim_json: &str,
    target: &PyModel,
    suspect: &PyModel,
    dataset: &PyDataset,
    verification_nodes: Vec<usize>,
    seed: u64,
) -> PyResult<String> {
    let csim = SimilarityClassifier::from_json(csim_json).map_err(err)?;
    let report = verify_pair(&csim, &target.0, &suspect.0, dataset.0.graph(), &verification_nodes, seed).map_err(err)?;
    serde_json::to_string(&report).map_err(err)
}

/// Hex SHA-256 commitment of a model file's bytes.
#[pyfunction]
fn commitment(data: &[u8]) -> String {
    gnnfp::registry::commitment(data)
}

/// Run or resume an experiment; takes and returns JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(err)?;
    let table = py.detach(|| run(&cfg)).map_err(err)?;
    serde_json::to_string(&table).map_err(err)
}

#[pymodule]
fn gnnfp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(commitment, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
