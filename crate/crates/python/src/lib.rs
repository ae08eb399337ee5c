//! Python bindings: score function, commitments, an in-memory server and
//! the strategy solver.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use rand::rngs::{OsRng, StdRng};
use rand::SeedableRng;

use sandi::asd::{AccountabilityServer, ReportOutcome, ServerSettings};
use sandi::scorekit::{self, Epsilon, Fixed, ReputationConfig};
use sandi::stratsim::{self, GameSpec, Observation};
use sandi::tagcrypt::{self, decode_tag, encode_tag};

fn fixed(v: f64) -> PyResult<Fixed> {
    Fixed::from_f64(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Score function parameters.
#[pyclass(frozen, name = "ScoreParams")]
struct PyScoreParams {
    inner: scorekit::ScoreParams,
    reputation: ReputationConfig,
}

#[pymethods]
impl PyScoreParams {
    #[new]
    #[pyo3(signature = (k, b, ceiling, epsilon=None))]
    fn new(k: u32, b: f64, ceiling: f64, epsilon: Option<f64>) -> PyResult<Self> {
        let eps = match epsilon {
            Some(e) => Epsilon::new(e).map_err(value_err)?,
            None => Epsilon::OFF,
        };
        let inner = scorekit::ScoreParams::new(k, fixed(b)?, fixed(ceiling)?, eps).map_err(value_err)?;
        Ok(PyScoreParams { reputation: ReputationConfig::default_for(inner.ceiling()), inner })
    }

    /// Score after an epoch with `x` reports.
    fn update(&self, sc: f64, x: u64) -> PyResult<f64> {
        Ok(scorekit::update_score(fixed(sc)?, x, &self.inner).to_f64())
    }

    /// Noised update with a seeded generator.
    fn noised_update(&self, sc: f64, x: u64, seed: u64) -> PyResult<f64> {
        let mut rng = StdRng::seed_from_u64(seed);
        Ok(scorekit::noised_update(fixed(sc)?, x, &self.inner, &mut rng).to_f64())
    }

    /// Label of `sc` under the default four-label config.
    fn reputation(&self, sc: f64) -> PyResult<String> {
        Ok(scorekit::reputation(fixed(sc)?, &self.reputation).to_string())
    }
}

/// Commits to `message` for `receiver`; returns `(com, opening)`.
#[pyfunction]
fn commit<'py>(py: Python<'py>, message: &[u8], receiver: &str) -> (Bound<'py, PyBytes>, Bound<'py, PyBytes>) {
    let c = tagcrypt::commit(message, receiver, &mut OsRng);
    (PyBytes::new(py, &c.com), PyBytes::new(py, &c.op))
}

#[pyfunction]
fn verify_commitment(com: &[u8], opening: &[u8], message: &[u8], receiver: &str) -> PyResult<bool> {
    let com: [u8; 32] = com.try_into().map_err(|_| value_err("com must be 32 bytes"))?;
    let op: [u8; 32] = opening.try_into().map_err(|_| value_err("opening must be 32 bytes"))?;
    Ok(tagcrypt::verify_commitment(&com, &op, message, receiver))
}

/// Checks an encoded tag's signature against a 32-byte verification key.
#[pyfunction]
fn verify_tag(vk: &[u8], tag: &[u8]) -> PyResult<bool> {
    let vk: [u8; 32] = vk.try_into().map_err(|_| value_err("vk must be 32 bytes"))?;
    let vk = ed25519_dalek::VerifyingKey::from_bytes(&vk).map_err(value_err)?;
    let tag = decode_tag(tag).map_err(value_err)?;
    Ok(tagcrypt::verify_tag_signature(&vk, &tag))
}

/// Decodes a tag into a dict of its fields.
#[pyfunction]
fn decode<'py>(py: Python<'py>, tag: &[u8]) -> PyResult<Bound<'py, PyDict>> {
    let t = decode_tag(tag).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("com", PyBytes::new(py, &t.com))?;
    d.set_item("tau", t.tau)?;
    d.set_item("y", t.y)?;
    d.set_item("ct", PyBytes::new(py, &t.ct))?;
    d.set_item("sigma", PyBytes::new(py, &t.sigma))?;
    Ok(d)
}

/// An accountability server held in memory.
#[pyclass(frozen, name = "Server")]
struct PyServer {
    inner: AccountabilityServer,
}

#[pymethods]
impl PyServer {
    #[new]
    fn new(params: &PyScoreParams, registration_token: &str, admin_token: &str) -> Self {
        let settings = ServerSettings::new(params.inner, registration_token, admin_token);
        PyServer { inner: AccountabilityServer::in_memory(settings) }
    }

    fn verifying_key<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.verifying_key().as_bytes())
    }

    fn register(&self, token: &str) -> PyResult<String> {
        self.inner.register(token).map_err(value_err)
    }

    /// Encoded tag for commitment `com`.
    fn issue_tag<'py>(&self, py: Python<'py>, credential: &str, com: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
        let tag = self.inner.issue_tag(credential, com).map_err(value_err)?;
        Ok(PyBytes::new(py, &encode_tag(&tag)))
    }

    /// `"accepted"` or the rejection reason.
    fn report(&self, tag: &[u8]) -> PyResult<String> {
        match self.inner.ingest_report(tag).map_err(|e| PyRuntimeError::new_err(e.to_string()))? {
            ReportOutcome::Accepted => Ok("accepted".into()),
            ReportOutcome::Rejected(r) => Ok(r.as_str().into()),
        }
    }

    /// `(epoch, updated_accounts)`.
    fn advance_epoch(&self, admin_token: &str) -> PyResult<(u64, u64)> {
        let s = self.inner.advance_epoch(admin_token).map_err(value_err)?;
        Ok((s.epoch, s.updated))
    }

    /// `(score, label)`.
    fn score(&self, credential: &str) -> PyResult<(f64, String)> {
        let v = self.inner.get_score(credential).map_err(value_err)?;
        Ok((v.sc.to_f64(), v.y))
    }
}

/// A sender game parsed from its JSON description.
#[pyclass(frozen, name = "Game")]
struct PyGame {
    inner: GameSpec,
}

#[pymethods]
impl PyGame {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyGame { inner: GameSpec::from_json(text).map_err(value_err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// `(value, policy_csv)` of the optimal policy.
    fn solve(&self) -> PyResult<(f64, String)> {
        let sol = stratsim::optimal_policy(&self.inner).map_err(value_err)?;
        Ok((sol.value, sol.policy.to_csv(&self.inner)))
    }

    fn brute_force(&self) -> PyResult<f64> {
        stratsim::brute_force_value(&self.inner).map_err(value_err)
    }

    /// `(passed, violations_json)` for the optimal policy.
    fn verify_theorem(&self) -> PyResult<(bool, String)> {
        let sol = stratsim::optimal_policy(&self.inner).map_err(value_err)?;
        let rep = stratsim::verify_theorem_structure(&self.inner, &sol.policy);
        let violations = serde_json::to_string(&rep.violations).map_err(value_err)?;
        Ok((rep.passed, violations))
    }

    /// Monte Carlo of optimal play; returns `(mean, stderr)`.
    #[pyo3(signature = (trials, seed=0, blind=false))]
    fn simulate(&self, py: Python<'_>, trials: u64, seed: u64, blind: bool) -> PyResult<(f64, f64)> {
        let obs = if blind { Observation::Blind } else { Observation::TrueReports };
        let g = &self.inner;
        if g.dp_off() {
            let sol = stratsim::optimal_policy(g).map_err(value_err)?;
            let res = py.detach(|| stratsim::simulate(g, &sol.policy, trials, obs, &mut StdRng::seed_from_u64(seed)));
            Ok((res.mean, res.stderr))
        } else {
            let lazy = stratsim::LazyOptimal::new(g);
            let res = stratsim::simulate(g, &lazy, trials, obs, &mut StdRng::seed_from_u64(seed));
            Ok((res.mean, res.stderr))
        }
    }
}

#[pymodule]
fn pysandi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScoreParams>()?;
    m.add_class::<PyServer>()?;
    m.add_class::<PyGame>()?;
    m.add_function(wrap_pyfunction!(commit, m)?)?;
    m.add_function(wrap_pyfunction!(verify_commitment, m)?)?;
    m.add_function(wrap_pyfunction!(verify_tag, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    Ok(())
}
