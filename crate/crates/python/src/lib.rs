//! Python bindings: question typing, exemplar banks, metrics, code-switch
//! labels, trained pipelines and the command-line entry point.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use quist::augmentation;
use quist::backend::checkpoint::{load_classifier, load_seq2seq};
use quist::backend::{TransformerClassifier, TransformerSeq2Seq};
use quist::cli::DefaultIdentifier;
use quist::corpus::QAExample;
use quist::evaluation::metrics::{self, MeteorConfig};
use quist::evaluation::{aggregate_runs as aggregate, detect_code_switching as detect, InterrogativeLexicon};
use quist::exemplar::{self, ExemplarBank};
use quist::qg::{pipeline_generate, ExemplarSource};
use quist::question_typing::{classify_rule, AuxiliaryLexicon};
use quist::{QuestionType, QuistError};

create_exception!(quist_py, QuistPyError, PyException);

fn to_py(e: QuistError) -> PyErr {
    if e.is_usage() {
        PyValueError::new_err(e.to_string())
    } else {
        QuistPyError::new_err(e.to_string())
    }
}

fn parse_type(name: &str) -> PyResult<QuestionType> {
    QuestionType::ALL
        .into_iter()
        .find(|t| t.as_str() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown question type {name:?}")))
}

/// Runs the command-line tool with `args` (without the program name) and
/// returns its exit status.
#[pyfunction]
fn run(args: Vec<String>) -> i32 {
    quist::cli::main_with(std::iter::once("quist".to_string()).chain(args))
}

#[pyfunction]
fn question_types() -> Vec<&'static str> {
    QuestionType::ALL.iter().map(|t| t.as_str()).collect()
}

/// Rule-based type of an English question, or None outside the taxonomy.
#[pyfunction]
fn classify_question(question: &str) -> Option<&'static str> {
    classify_rule(question, &AuxiliaryLexicon::default()).map(QuestionType::as_str)
}

#[pyfunction]
fn rouge_l(predictions: Vec<String>, references: Vec<String>) -> PyResult<f64> {
    metrics::rouge_l(&predictions, &references).map_err(to_py)
}

#[pyfunction]
fn bleu4(predictions: Vec<String>, references: Vec<String>) -> PyResult<f64> {
    metrics::bleu4(&predictions, &references).map_err(to_py)
}

#[pyfunction]
fn meteor(predictions: Vec<String>, references: Vec<String>, language: &str) -> PyResult<f64> {
    metrics::meteor(&predictions, &references, language, &MeteorConfig::default()).map_err(to_py)
}

#[pyfunction]
fn exact_match(prediction: &str, gold_answers: Vec<String>, language: &str) -> PyResult<u8> {
    augmentation::exact_match(prediction, &gold_answers, language).map_err(to_py)
}

/// Mean and sample standard deviation over runs.
#[pyfunction]
fn aggregate_runs(values: Vec<f64>) -> PyResult<(f64, f64)> {
    aggregate(&values).map_err(to_py)
}

/// "none", "interrogative" or "full".
#[pyfunction]
fn detect_code_switching(question: &str, language: &str) -> &'static str {
    detect(question, language, &DefaultIdentifier::new(), &InterrogativeLexicon::default()).as_str()
}

#[pyclass(name = "ExemplarBank")]
struct PyExemplarBank {
    inner: ExemplarBank,
}

#[pymethods]
impl PyExemplarBank {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ExemplarBank::load(&path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExemplarBank::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn languages(&self) -> Vec<String> {
        self.inner.languages().into_iter().map(String::from).collect()
    }

    /// Questions of the stored set; `qtype=None` selects a typeless set.
    #[pyo3(signature = (language, qtype, size, seed))]
    fn select(&self, language: &str, qtype: Option<&str>, size: usize, seed: u64) -> PyResult<Vec<String>> {
        let t = qtype.map(parse_type).transpose()?;
        let set = exemplar::select_exemplars(&self.inner, language, t, size, seed).map_err(to_py)?;
        Ok(set.questions.clone())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Trained classifier, generator and bank loaded from a run directory.
#[pyclass(name = "Pipeline", unsendable)]
struct PyPipeline {
    qg: TransformerSeq2Seq,
    classifier: Option<TransformerClassifier>,
    bank: Option<ExemplarBank>,
    size: usize,
    seed: u64,
    beam_size: usize,
}

#[pymethods]
impl PyPipeline {
    /// Loads `qg/` and, when `use_exemplars`, `qtc/` and `bank.json` from
    /// `out_dir`.
    #[new]
    #[pyo3(signature = (out_dir, use_exemplars=true, exemplar_size=15, exemplar_seed=0, beam_size=4))]
    fn new(out_dir: PathBuf, use_exemplars: bool, exemplar_size: usize, exemplar_seed: u64, beam_size: usize) -> PyResult<Self> {
        let qg = load_seq2seq(&out_dir.join("qg")).map_err(to_py)?;
        let (classifier, bank) = if use_exemplars {
            (
                Some(load_classifier(&out_dir.join("qtc")).map_err(to_py)?),
                Some(ExemplarBank::load(&out_dir.join("bank.json")).map_err(to_py)?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            qg,
            classifier,
            bank,
            size: exemplar_size,
            seed: exemplar_seed,
            beam_size,
        })
    }

    /// Returns a dict with `question`, `qtype` and `exemplar_size`.
    fn generate<'py>(&self, py: Python<'py>, answer: &str, context: &str, language: &str) -> PyResult<Bound<'py, PyDict>> {
        let example = QAExample {
            id: "py".into(),
            language: language.into(),
            context: context.into(),
            question: String::new(),
            answer_text: answer.into(),
            answer_start: context.find(answer).map_or(-1, |b| context[..b].chars().count() as i64),
        };
        let source = match (&self.classifier, &self.bank) {
            (Some(classifier), Some(bank)) => ExemplarSource::Typed {
                classifier,
                bank,
                size: self.size,
                seed: self.seed,
            },
            _ => ExemplarSource::None,
        };
        let record = pipeline_generate(source, &self.qg, &example, 0, self.beam_size).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("question", record.generated_question)?;
        out.set_item("qtype", record.predicted_qtype.map(QuestionType::as_str))?;
        out.set_item("exemplar_size", record.exemplar_key.map(|k| k.size))?;
        Ok(out)
    }
}

#[pymodule]
fn quist_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("QuistError", m.py().get_type::<QuistPyError>())?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(question_types, m)?)?;
    m.add_function(wrap_pyfunction!(classify_question, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(bleu4, m)?)?;
    m.add_function(wrap_pyfunction!(meteor, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_runs, m)?)?;
    m.add_function(wrap_pyfunction!(detect_code_switching, m)?)?;
    m.add_class::<PyExemplarBank>()?;
    m.add_class::<PyPipeline>()?;
    Ok(())
}
