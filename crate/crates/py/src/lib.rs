//! Python bindings. Structured values cross the boundary as plain
//! dicts/lists (JSON-shaped), the same shapes the HTTP API uses.

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::de::DeserializeOwned;
use serde::Serialize;
use vdesk_core::action::gate::Decision;
use vdesk_core::action::{compile, Action, GatingMode};
use vdesk_core::feedback::FeedbackSource;
use vdesk_core::grounding::{self, GROUP_FIELDS};
use vdesk_core::harness::{self, Task};
use vdesk_core::rfb::{InputEvent, Scenario};
use vdesk_core::session::{
    CreateSession, RunRequest, SessionConfig, SessionError, Target,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn session_err(e: SessionError) -> PyErr {
    match e {
        SessionError::UnknownSession(_)
        | SessionError::UnknownFrame(_)
        | SessionError::UnknownTask(_)
        | SessionError::UnknownRun(_) => PyKeyError::new_err(e.to_string()),
        SessionError::InvalidAction(_)
        | SessionError::EmptyText(_)
        | SessionError::Grounding(_)
        | SessionError::TargetNotAllowed(_) => value_err(e),
        _ => runtime_err(e),
    }
}

/// Accepts a dict/list or a JSON string.
fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = match obj.extract::<String>() {
        Ok(s) => s,
        Err(_) => obj
            .py()
            .import("json")?
            .call_method1("dumps", (obj,))?
            .extract()?,
    };
    serde_json::from_str(&text).map_err(value_err)
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Input events for a GUI action on a `width` x `height` screen.
#[pyfunction]
fn compile_action<'py>(
    py: Python<'py>,
    action: &Bound<'py, PyAny>,
    width: u16,
    height: u16,
) -> PyResult<Bound<'py, PyAny>> {
    let action: Action = from_py(action)?;
    let events = compile(&action, width, height).map_err(value_err)?;
    to_py(py, &events)
}

/// Wire bytes of one pointer or key event.
#[pyfunction]
fn encode_event<'py>(py: Python<'py>, event: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyBytes>> {
    let event: InputEvent = from_py(event)?;
    Ok(PyBytes::new(py, &event.encode()))
}

/// Scores predictions against a dataset and aggregates success rates.
#[pyfunction]
#[pyo3(signature = (dataset, predictions, group_by = Vec::new(), edges = Vec::new()))]
fn grounding_eval<'py>(
    py: Python<'py>,
    dataset: PathBuf,
    predictions: PathBuf,
    group_by: Vec<String>,
    edges: Vec<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    if let Some(bad) = group_by.iter().find(|f| !GROUP_FIELDS.contains(&f.as_str())) {
        return Err(value_err(format!("unknown group field {bad}")));
    }
    let samples = grounding::load_dataset(&dataset).map_err(value_err)?;
    let preds = grounding::load_predictions(&predictions).map_err(value_err)?;
    let report = grounding::score_all(&samples, &preds).map_err(value_err)?;
    let fields: Vec<&str> = group_by.iter().map(String::as_str).collect();
    let overall = grounding::aggregate(&report.results, &samples, &[]).map_err(value_err)?;
    let groups = grounding::aggregate(&report.results, &samples, &fields).map_err(value_err)?;
    let buckets = if edges.is_empty() {
        None
    } else {
        Some(grounding::area_buckets(&report.results, &samples, &edges).map_err(value_err)?)
    };
    to_py(
        py,
        &serde_json::json!({
            "results": report.results,
            "unpredicted": report.unpredicted,
            "overall": overall,
            "groups": groups,
            "buckets": buckets,
        }),
    )
}

#[pyfunction]
fn load_suite<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &harness::load_suite(&path).map_err(value_err)?)
}

/// Evaluates a task's checker against a sandbox directory.
#[pyfunction]
fn evaluate_task<'py>(
    py: Python<'py>,
    task: &Bound<'py, PyAny>,
    sandbox: PathBuf,
) -> PyResult<Bound<'py, PyAny>> {
    let task: Task = from_py(task)?;
    let verdict = py.detach(|| harness::evaluate(&task, &sandbox)).map_err(value_err)?;
    to_py(py, &verdict)
}

#[pyfunction]
fn critic_accuracy(path: PathBuf) -> PyResult<f64> {
    let records = harness::load_critic_records(&path).map_err(value_err)?;
    harness::critic_accuracy(&records).map_err(value_err)
}

/// Runs tasks offline against a mock desktop; returns one summary per task.
#[pyfunction]
#[pyo3(signature = (suite, policy, work, solutions = None, scenario = None))]
fn run_suite<'py>(
    py: Python<'py>,
    suite: PathBuf,
    policy: &str,
    work: PathBuf,
    solutions: Option<PathBuf>,
    scenario: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let tasks = harness::load_suite(&suite).map_err(value_err)?;
    let scenario = match scenario {
        Some(p) => Scenario::load(&p).map_err(value_err)?,
        None => Scenario::new(320, 240),
    };
    let mut policy = harness::policy_by_name(policy, solutions.as_deref()).map_err(value_err)?;
    let results = py
        .detach(|| harness::run_local_suite(&tasks, &scenario, policy.as_mut(), &work))
        .map_err(runtime_err)?;
    let summaries: Vec<_> = results.into_iter().map(|(s, _)| s).collect();
    to_py(py, &summaries)
}

/// The scripted RFB server. Stops when closed or garbage collected.
#[pyclass(module = "vdesk")]
struct MockDesktop {
    inner: Mutex<Option<vdesk_core::rfb::MockDesktop>>,
    port: u16,
}

#[pymethods]
impl MockDesktop {
    /// `scenario` is a dict, JSON string, or path to a scenario file.
    #[new]
    fn new(scenario: &Bound<'_, PyAny>) -> PyResult<Self> {
        let sc: Scenario = match scenario.extract::<PathBuf>() {
            Ok(p) if p.is_file() => Scenario::load(&p).map_err(value_err)?,
            _ => from_py(scenario)?,
        };
        let mock = vdesk_core::rfb::MockDesktop::start(sc).map_err(runtime_err)?;
        Ok(MockDesktop {
            port: mock.port(),
            inner: Mutex::new(Some(mock)),
        })
    }

    #[getter]
    fn port(&self) -> u16 {
        self.port
    }

    /// Every input event received so far, in order.
    fn input_events<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let guard = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let mock = guard.as_ref().ok_or_else(|| runtime_err("mock desktop is closed"))?;
        to_py(py, &mock.input_events())
    }

    fn close(&self) {
        self.inner.lock().unwrap_or_else(|p| p.into_inner()).take();
    }
}

#[pyclass(module = "vdesk")]
struct SessionManager {
    inner: vdesk_core::session::SessionManager,
}

#[pymethods]
impl SessionManager {
    #[new]
    #[pyo3(signature = (data_root, allowlist, gating = "gated-exec", suite = None, solutions = None))]
    fn new(
        py: Python<'_>,
        data_root: PathBuf,
        allowlist: Vec<String>,
        gating: &str,
        suite: Option<PathBuf>,
        solutions: Option<PathBuf>,
    ) -> PyResult<Self> {
        let mut cfg = SessionConfig::new(&data_root);
        cfg.allowlist = allowlist
            .iter()
            .map(|s| s.parse::<Target>())
            .collect::<Result<_, _>>()
            .map_err(value_err)?;
        cfg.default_gating =
            serde_json::from_value::<GatingMode>(gating.into()).map_err(value_err)?;
        if let Some(p) = suite {
            cfg = cfg.load_suite(&p).map_err(value_err)?;
        }
        if let Some(p) = solutions {
            cfg = cfg.load_solutions(&p).map_err(value_err)?;
        }
        let inner = py
            .detach(|| vdesk_core::session::SessionManager::open(cfg))
            .map_err(session_err)?;
        Ok(SessionManager { inner })
    }

    #[pyo3(signature = (host, port, password = None, gating = None))]
    fn create_session<'py>(
        &self,
        py: Python<'py>,
        host: String,
        port: u16,
        password: Option<String>,
        gating: Option<&str>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let gating = gating
            .map(|g| serde_json::from_value::<GatingMode>(g.into()))
            .transpose()
            .map_err(value_err)?;
        let req = CreateSession {
            host,
            port,
            password,
            gating,
        };
        let info = py.detach(|| self.inner.create_session(req)).map_err(session_err)?;
        to_py(py, &info)
    }

    fn info<'py>(&self, py: Python<'py>, session_id: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.info(session_id).map_err(session_err)?)
    }

    fn list_sessions<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.list_sessions())
    }

    #[pyo3(signature = (session_id, frames = 1))]
    fn observation<'py>(
        &self,
        py: Python<'py>,
        session_id: &str,
        frames: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.observation(session_id, frames).map_err(session_err)?)
    }

    fn frame_png<'py>(
        &self,
        py: Python<'py>,
        session_id: &str,
        timestamp: u64,
    ) -> PyResult<Bound<'py, PyBytes>> {
        let png = self.inner.frame_png(session_id, timestamp).map_err(session_err)?;
        Ok(PyBytes::new(py, &png))
    }

    /// Executes now, or returns a pending confirmation request.
    fn submit_action<'py>(
        &self,
        py: Python<'py>,
        session_id: &str,
        action: &Bound<'py, PyAny>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let action: Action = from_py(action)?;
        let out = py
            .detach(|| self.inner.submit_action(session_id, action))
            .map_err(session_err)?;
        to_py(py, &out)
    }

    /// `decision` is "approve" or "reject".
    #[pyo3(signature = (request_id, decision, note = None))]
    fn resolve<'py>(
        &self,
        py: Python<'py>,
        request_id: &str,
        decision: &str,
        note: Option<String>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let decision: Decision = serde_json::from_value(decision.into()).map_err(value_err)?;
        let out = py
            .detach(|| self.inner.resolve_confirmation(request_id, decision, note))
            .map_err(session_err)?;
        to_py(py, &out)
    }

    #[pyo3(signature = (session_id, text, step = None))]
    fn submit_feedback<'py>(
        &self,
        py: Python<'py>,
        session_id: &str,
        text: &str,
        step: Option<u64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let rec = self
            .inner
            .submit_feedback(session_id, text, FeedbackSource::Human, step)
            .map_err(session_err)?;
        to_py(py, &rec)
    }

    /// Starts a task run; `policy` is "external", "scripted" or "null".
    fn run_task<'py>(
        &self,
        py: Python<'py>,
        session_id: &str,
        task_id: String,
        policy: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let req = RunRequest {
            task_id,
            policy: serde_json::from_value(policy.into()).map_err(value_err)?,
        };
        let info = py.detach(|| self.inner.run_task(session_id, req)).map_err(session_err)?;
        to_py(py, &info)
    }

    #[pyo3(signature = (run_id, timeout_s = 60.0))]
    fn wait_run<'py>(
        &self,
        py: Python<'py>,
        run_id: &str,
        timeout_s: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let timeout = Duration::try_from_secs_f64(timeout_s).map_err(value_err)?;
        let info = py
            .detach(|| self.inner.wait_run(run_id, timeout))
            .map_err(session_err)?;
        to_py(py, &info)
    }

    fn close_session<'py>(&self, py: Python<'py>, session_id: &str) -> PyResult<Bound<'py, PyAny>> {
        let info = py.detach(|| self.inner.close_session(session_id)).map_err(session_err)?;
        to_py(py, &info)
    }

    /// The session's trajectory as a tar archive.
    fn trajectory_tar<'py>(&self, py: Python<'py>, session_id: &str) -> PyResult<Bound<'py, PyBytes>> {
        let tar = py
            .detach(|| self.inner.trajectory_tar(session_id))
            .map_err(session_err)?;
        Ok(PyBytes::new(py, &tar))
    }

    fn audit<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.audit().records())
    }

    fn shutdown(&self, py: Python<'_>) {
        py.detach(|| self.inner.shutdown());
    }
}

#[pymodule]
fn vdesk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(compile_action, m)?)?;
    m.add_function(wrap_pyfunction!(encode_event, m)?)?;
    m.add_function(wrap_pyfunction!(grounding_eval, m)?)?;
    m.add_function(wrap_pyfunction!(load_suite, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_task, m)?)?;
    m.add_function(wrap_pyfunction!(critic_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    m.add_class::<MockDesktop>()?;
    m.add_class::<SessionManager>()?;
    Ok(())
}
