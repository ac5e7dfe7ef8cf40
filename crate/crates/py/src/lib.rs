//! Python bindings: model training, prediction, sampling-based uncertainty and metrics.

use decnn::data_io::{load_checkpoint, make_biased_synthetic, save_checkpoint, Checkpoint};
use decnn::dataset::{LabeledDataset, Split};
use decnn::training::{train as train_model, TrainConfig, TrainContext};
use decnn::uncertainty::{uncertainty as sample_uncertainty, EnsembleSampler, Models};
use decnn::{ArchSpec, ModelBundle, Tensor};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(decnn, DecnnError, PyException, "Error raised by the decnn core library.");

fn to_py(e: decnn::Error) -> PyErr {
    DecnnError::new_err(e.to_string())
}

/// Stacks Python rows into a `[n, d]` tensor.
fn rows_to_tensor(rows: &[Vec<f64>]) -> decnn::Result<Tensor> {
    if rows.is_empty() {
        return Err(decnn::Error::Data("no rows given".into()));
    }
    Tensor::from_rows(rows)
}

fn tensor_to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// A classifier with its layer-shared decoder.
#[pyclass(name = "Model", module = "decnn", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    bundle: ModelBundle,
}

#[pymethods]
impl PyModel {
    /// Freshly initialised weights.
    #[staticmethod]
    #[pyo3(signature = (input_dim=784, blocks=8, hidden=128, classes=10, decoder_hidden=512, seed=0))]
    fn init(
        input_dim: usize,
        blocks: usize,
        hidden: usize,
        classes: usize,
        decoder_hidden: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let arch = ArchSpec {
            input_dim,
            blocks,
            hidden,
            classes,
            decoder_hidden,
        };
        Ok(Self {
            bundle: ModelBundle::init(&arch, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            bundle: load_checkpoint(path).map_err(to_py)?.bundle,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&Checkpoint::new(self.bundle.clone()), path).map_err(to_py)
    }

    #[getter]
    fn arch<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let a = &self.bundle.arch;
        let d = PyDict::new(py);
        d.set_item("input_dim", a.input_dim)?;
        d.set_item("blocks", a.blocks)?;
        d.set_item("hidden", a.hidden)?;
        d.set_item("classes", a.classes)?;
        d.set_item("decoder_hidden", a.decoder_hidden)?;
        Ok(d)
    }

    fn predict(&self, images: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let x = rows_to_tensor(&images).map_err(to_py)?;
        self.bundle.classifier.predict(&x).map_err(to_py)
    }

    fn predict_proba(&self, images: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = rows_to_tensor(&images).map_err(to_py)?;
        let logits = self.bundle.classifier.logits(&x).map_err(to_py)?;
        Ok(tensor_to_rows(&decnn::tensor::softmax(&logits).map_err(to_py)?))
    }

    /// Decoded reconstruction of every hidden layer, shallowest first.
    fn decode_layers(&self, images: Vec<Vec<f64>>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let x = rows_to_tensor(&images).map_err(to_py)?;
        let (_, trace) = self.bundle.forward_with_trace(&x).map_err(to_py)?;
        trace
            .activations
            .iter()
            .map(|h| Ok(tensor_to_rows(&self.bundle.decode(h).map_err(to_py)?)))
            .collect()
    }

    /// Path-ensemble entropies and majority classes.
    #[pyo3(signature = (images, samples=30, depth=8, seed=0))]
    fn uncertainty(
        &self,
        images: Vec<Vec<f64>>,
        samples: usize,
        depth: usize,
        seed: u64,
    ) -> PyResult<(Vec<f64>, Vec<usize>)> {
        let x = rows_to_tensor(&images).map_err(to_py)?;
        let sampler = EnsembleSampler::paths(samples, depth, seed);
        let u = sample_uncertainty(Models::Single(&self.bundle), &x, &sampler).map_err(to_py)?;
        Ok((u.entropies(), u.majorities()))
    }

    fn fgsm(&self, images: Vec<Vec<f64>>, labels: Vec<usize>, epsilon: f64) -> PyResult<Vec<Vec<f64>>> {
        let x = rows_to_tensor(&images).map_err(to_py)?;
        let adv = decnn::robustness::fgsm(&self.bundle, &x, &labels, epsilon).map_err(to_py)?;
        Ok(tensor_to_rows(&adv))
    }

    fn __repr__(&self) -> String {
        let a = &self.bundle.arch;
        format!(
            "Model(input_dim={}, blocks={}, hidden={}, classes={}, decoder_hidden={})",
            a.input_dim, a.blocks, a.hidden, a.classes, a.decoder_hidden
        )
    }
}

/// Trains on the given images; `config_json` holds training options (defaults otherwise).
/// Returns the model and the per-epoch mean training losses.
#[pyfunction]
#[pyo3(signature = (images, labels, height, width, config_json=None))]
fn train(
    py: Python<'_>,
    images: Vec<Vec<f64>>,
    labels: Vec<usize>,
    height: usize,
    width: usize,
    config_json: Option<&str>,
) -> PyResult<(PyModel, Vec<f64>)> {
    let config: TrainConfig = match config_json {
        Some(s) => serde_json::from_str(s).map_err(|e| DecnnError::new_err(format!("config: {e}")))?,
        None => TrainConfig::default(),
    };
    let x = rows_to_tensor(&images).map_err(to_py)?;
    let classes = config.arch.classes;
    let data = LabeledDataset::new(x, labels, height, width, classes, Split::Train).map_err(to_py)?;
    let out = py
        .detach(|| train_model(&data, &config, &TrainContext::default()))
        .map_err(to_py)?;
    Ok((
        PyModel { bundle: out.bundle },
        out.log.iter().map(|r| r.train_loss).collect(),
    ))
}

/// Binary task with a group-dependent spurious cue: `(images, labels, groups)`.
#[pyfunction]
fn biased_synthetic(n: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>, Vec<usize>)> {
    let d = make_biased_synthetic(n, seed).map_err(to_py)?;
    let groups = d.protected_ids.clone().unwrap_or_default();
    Ok((tensor_to_rows(&d.images), d.labels, groups))
}

/// Probability that a positive outranks a negative, ties counting one half.
#[pyfunction]
fn roc_auc(positive_scores: Vec<f64>, negative_scores: Vec<f64>) -> PyResult<f64> {
    decnn::metrics::roc_auc(&positive_scores, &negative_scores).map_err(to_py)
}

/// Expected calibration error in percent.
#[pyfunction]
#[pyo3(signature = (confidences, correct, bins=10))]
fn ece(confidences: Vec<f64>, correct: Vec<bool>, bins: usize) -> PyResult<f64> {
    decnn::metrics::ece(&confidences, &correct, bins).map_err(to_py)
}

/// Natural-log entropy of a class-count histogram.
#[pyfunction]
fn entropy(histogram: Vec<usize>) -> f64 {
    decnn::uncertainty::entropy(&histogram)
}

#[pymodule(name = "decnn")]
fn decnn_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(biased_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add("DecnnError", m.py().get_type::<DecnnError>())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let rows = vec![vec![0.0, 0.5], vec![1.0, 0.25]];
        let t = rows_to_tensor(&rows).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(tensor_to_rows(&t), rows);
    }

    #[test]
    fn ragged_and_empty_rows_are_rejected() {
        assert!(rows_to_tensor(&[]).is_err());
        assert!(rows_to_tensor(&[vec![0.0, 1.0], vec![0.0]]).is_err());
    }
}
