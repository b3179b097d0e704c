//! Python bindings for the core crate.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use xling_core::aligner::{self, AlignmentLinkSet, Direction, Heuristic};
use xling_core::analysis;
use xling_core::corpus::{ParallelCorpus, SubwordVocab};
use xling_core::encoder::{self, ContextEncoder, EncoderConfig, EncoderWeights};
use xling_core::pipeline::{self, RunConfig, RunOptions};
use xling_core::retrieval;
use xling_core::stats::{self, Metric};

fn py_err(e: xling_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn words(sentences: Vec<String>) -> Vec<Vec<String>> {
    sentences.iter().map(|s| xling_core::corpus::split_words(s)).collect()
}

#[pyclass(name = "Vocab", module = "xling")]
struct PyVocab {
    inner: SubwordVocab,
}

#[pymethods]
impl PyVocab {
    /// Learns a subword vocabulary from whitespace-tokenized sentences.
    #[staticmethod]
    fn train(sentences: Vec<String>, size: usize) -> PyResult<Self> {
        let ws = words(sentences);
        let inner = SubwordVocab::train(ws.iter().map(|s| s.iter().map(String::as_str)), size, 0).map_err(py_err)?;
        Ok(PyVocab { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyVocab {
            inner: SubwordVocab::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(ids, word_spans)` with a leading `[CLS]`.
    fn tokenize(&self, sentence: &str) -> (Vec<u32>, Vec<(usize, usize)>) {
        let t = self
            .inner
            .tokenize_with_spans(&xling_core::corpus::split_words(sentence))
            .with_cls();
        (t.subword_ids, t.word_spans)
    }

    fn surface(&self, ids: Vec<u32>) -> String {
        self.inner.surface(&ids)
    }
}

#[pyclass(name = "Encoder", module = "xling")]
struct PyEncoder {
    inner: EncoderWeights,
}

#[pymethods]
impl PyEncoder {
    #[new]
    #[pyo3(signature = (layers=2, model_dim=32, heads=4, ffn_dim=64, max_positions=64, vocab_size=160, seed=0))]
    fn new(
        layers: usize,
        model_dim: usize,
        heads: usize,
        ffn_dim: usize,
        max_positions: usize,
        vocab_size: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let config = EncoderConfig {
            layers,
            model_dim,
            heads,
            ffn_dim,
            max_positions,
            vocab_size,
            dropout: 0.0,
        };
        Ok(PyEncoder {
            inner: EncoderWeights::init(config, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyEncoder {
            inner: encoder::load_checkpoint(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        encoder::save_checkpoint(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn model_dim(&self) -> usize {
        self.inner.config.model_dim
    }

    /// Hidden states as `[layer][position][dim]`, embeddings first.
    fn hidden_states(&self, ids: Vec<u32>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let h = self.inner.encode(&ids).map_err(py_err)?;
        Ok((0..h.num_layers())
            .map(|l| (0..h.seq_len).map(|p| h.row(l, p).to_vec()).collect())
            .collect())
    }

    /// Mean of the content-token vectors at `layer`.
    fn sentence_embedding(&self, ids: Vec<u32>, layer: usize) -> PyResult<Vec<f64>> {
        retrieval::sentence_embedding(&self.inner, &ids, layer).map_err(py_err)
    }

    /// Retrieval sweep over every layer; returns `(best_layer, best_mrr, per_layer_mrr)`.
    fn xsr(&self, queries: Vec<Vec<u32>>, corpus: Vec<Vec<u32>>) -> PyResult<(usize, f64, Vec<f64>)> {
        let gold: Vec<usize> = (0..queries.len()).collect();
        let sweep = retrieval::best_layer(&self.inner, &queries, &corpus, &gold).map_err(py_err)?;
        Ok((sweep.best_layer, sweep.best_mrr, sweep.per_layer.iter().map(|r| r.mrr).collect()))
    }
}

/// Symmetrized Model 2 alignment; one list of `(src, tgt)` links per sentence.
#[pyfunction]
#[pyo3(signature = (source, target, iterations=5, heuristic="grow-diag-final-and"))]
fn align(source: Vec<String>, target: Vec<String>, iterations: usize, heuristic: &str) -> PyResult<Vec<Vec<(usize, usize)>>> {
    let heuristic = match heuristic {
        "intersection" => Heuristic::Intersection,
        "grow-diag-final-and" => Heuristic::GrowDiagFinalAnd,
        other => return Err(PyValueError::new_err(format!("unknown heuristic `{other}`"))),
    };
    let corpus = ParallelCorpus::from_pairs(words(source).into_iter().zip(words(target))).map_err(py_err)?;
    let fwd = aligner::train_model2(&corpus, iterations, Direction::Forward, 0).map_err(py_err)?;
    let rev = aligner::train_model2(&corpus, iterations, Direction::Reverse, 0).map_err(py_err)?;
    let (f, r) = (fwd.align_corpus(&corpus), rev.align_corpus(&corpus));
    Ok(f.iter()
        .zip(r.iter())
        .map(|(a, b)| aligner::symmetrize(a, b, heuristic).into_iter().collect())
        .collect())
}

fn link_set(links: Vec<Vec<(usize, usize)>>) -> AlignmentLinkSet {
    AlignmentLinkSet::new(links.into_iter().map(|l| l.into_iter().collect()).collect())
}

#[pyfunction]
fn alignment_error_rate(predicted: Vec<Vec<(usize, usize)>>, gold: Vec<Vec<(usize, usize)>>) -> PyResult<f64> {
    aligner::alignment_error_rate(&link_set(predicted), &link_set(gold)).map_err(py_err)
}

/// Returns `(t, df, p)`.
#[pyfunction]
fn paired_t_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, usize, f64)> {
    let t = stats::paired_t_test(&a, &b).map_err(py_err)?;
    Ok((t.t, t.df, t.p))
}

/// Paired permutation test p-value on accuracy, or micro-F1 when `outside` is given.
#[pyfunction]
#[pyo3(signature = (a, b, gold, iterations=1000, seed=0, outside=None))]
fn permutation_test(
    a: Vec<usize>,
    b: Vec<usize>,
    gold: Vec<usize>,
    iterations: usize,
    seed: u64,
    outside: Option<usize>,
) -> PyResult<f64> {
    let metric = outside.map_or(Metric::Accuracy, |outside| Metric::MicroF1 { outside });
    Ok(stats::permutation_test(&a, &b, &gold, metric, iterations, seed)
        .map_err(py_err)?
        .p)
}

#[pyfunction]
fn mean_reciprocal_rank(ranks: Vec<usize>) -> f64 {
    retrieval::mean_reciprocal_rank(&ranks)
}

#[pyfunction]
fn overlap_coefficient(a: Vec<usize>, b: Vec<usize>) -> f64 {
    analysis::overlap_coefficient(&a, &b)
}

/// Default run configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_json()
}

/// Runs the pipeline and returns the summary JSON (empty when no summary stage ran).
#[pyfunction]
#[pyo3(signature = (config_json, out, jobs=1))]
fn run_pipeline(py: Python<'_>, config_json: &str, out: PathBuf, jobs: usize) -> PyResult<String> {
    let config: RunConfig = serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let outcome = py
        .detach(|| pipeline::run_pipeline(&config, &out, RunOptions { jobs, verbose: false }))
        .map_err(py_err)?;
    match outcome.summary {
        Some(s) => s.to_json().map_err(py_err),
        None => Ok(String::new()),
    }
}

#[pymodule]
fn xling(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVocab>()?;
    m.add_class::<PyEncoder>()?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(alignment_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_test, m)?)?;
    m.add_function(wrap_pyfunction!(mean_reciprocal_rank, m)?)?;
    m.add_function(wrap_pyfunction!(overlap_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
