//! Python bindings for the data-market core.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use market::crypto::{self, Ciphertext, PublicKey, Signature};
use market::scenario::{self, RunOptions};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn public_key(bytes: &[u8]) -> PyResult<PublicKey> {
    PublicKey::from_bytes(bytes).map_err(value_err)
}

/// Signing and encryption identity derived from a 32-byte seed.
#[pyclass(frozen, name = "KeyPair")]
struct PyKeyPair(crypto::KeyPair);

#[pymethods]
impl PyKeyPair {
    #[new]
    fn new(seed: &[u8]) -> PyResult<Self> {
        crypto::generate_keypair(seed).map(PyKeyPair).map_err(value_err)
    }

    #[getter]
    fn public_key(&self) -> Vec<u8> {
        self.0.public_key.as_bytes().to_vec()
    }

    #[getter]
    fn address(&self) -> String {
        self.0.address().to_hex()
    }

    fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.0.sign(message).0.to_vec()
    }

    fn decrypt(&self, ciphertext: &[u8]) -> PyResult<Vec<u8>> {
        crypto::decrypt(&self.0.secret_key, &Ciphertext(ciphertext.to_vec())).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("KeyPair(address='{}')", self.address())
    }
}

#[pyfunction]
fn sha256(data: &[u8]) -> Vec<u8> {
    crypto::sha256(data).0.to_vec()
}

#[pyfunction]
fn derive_address(public_key: &[u8]) -> PyResult<String> {
    crypto::derive_address_from_bytes(public_key)
        .map(|a| a.to_hex())
        .map_err(value_err)
}

#[pyfunction]
fn commit(salt: &[u8], data: &[u8]) -> PyResult<Vec<u8>> {
    crypto::commit(salt, data)
        .map(|c| c.digest.0.to_vec())
        .map_err(value_err)
}

#[pyfunction]
fn verify_commitment(salt: &[u8], data: &[u8], commitment: &[u8]) -> bool {
    let Ok(digest) = <[u8; 32]>::try_from(commitment) else {
        return false;
    };
    let c = crypto::Commitment {
        digest: crypto::Digest(digest),
    };
    crypto::verify_commitment(salt, data, &c)
}

#[pyfunction]
fn verify(public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
    let (Ok(pk), Ok(sig)) = (PublicKey::from_bytes(public_key), <[u8; 64]>::try_from(signature)) else {
        return false;
    };
    crypto::verify(&pk, message, &Signature(sig))
}

/// Encrypts to `public_key`; `seed` fixes the ephemeral key and nonce.
#[pyfunction]
fn encrypt_for(public_key: &[u8], plaintext: &[u8], seed: u64) -> PyResult<Vec<u8>> {
    let pk = self::public_key(public_key)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    crypto::encrypt_for(&pk, plaintext, &mut rng)
        .map(|c| c.0)
        .map_err(value_err)
}

#[pyclass(frozen, name = "Scenario")]
struct PyScenario(scenario::Scenario);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        scenario::Scenario::from_toml(text)
            .map(PyScenario)
            .map_err(value_err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        scenario::Scenario::load(&path).map(PyScenario).map_err(value_err)
    }

    /// A valid randomly generated scenario.
    #[staticmethod]
    fn random(seed: u64) -> Self {
        PyScenario(scenario::random_scenario(seed, &Default::default()))
    }

    #[getter]
    fn name(&self) -> &str {
        &self.0.name
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    #[pyo3(signature = (seed=None, ticks=None))]
    fn run(&self, seed: Option<u64>, ticks: Option<u64>) -> PyResult<RunResult> {
        let out = scenario::run_scenario(&self.0, RunOptions { seed, ticks }).map_err(value_err)?;
        Ok(RunResult {
            passed: out.report.passed,
            exit_code: out.exit_code(),
            report: out.report.render(),
            report_json: out.report.to_json(),
            journal: out.journal,
            state_digest: out.ledger.state_digest().to_hex(),
        })
    }

    fn __repr__(&self) -> String {
        format!("Scenario(name='{}', seed={})", self.0.name, self.0.seed)
    }
}

#[pyclass(frozen, get_all)]
struct RunResult {
    passed: bool,
    exit_code: i32,
    /// Human-readable report followed by the machine-readable section.
    report: String,
    report_json: String,
    journal: Vec<u8>,
    state_digest: String,
}

#[pyclass(frozen, get_all)]
struct JournalCheck {
    passed: bool,
    events: usize,
    state_digest: Option<String>,
    failed_sequence: Option<u64>,
    reason: Option<String>,
}

/// Replays a journal and re-checks the ledger invariants.
#[pyfunction]
fn verify_journal(journal: &[u8]) -> JournalCheck {
    let r = scenario::verify_journal(journal);
    JournalCheck {
        passed: r.passed(),
        events: r.events,
        state_digest: r.state_digest.map(|d| d.to_hex()),
        failed_sequence: r.failure.as_ref().map(|f| f.0),
        reason: r.failure.map(|f| f.1),
    }
}

#[pymodule]
#[pyo3(name = "datamarket")]
fn datamarket_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKeyPair>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<RunResult>()?;
    m.add_class::<JournalCheck>()?;
    m.add_function(wrap_pyfunction!(sha256, m)?)?;
    m.add_function(wrap_pyfunction!(derive_address, m)?)?;
    m.add_function(wrap_pyfunction!(commit, m)?)?;
    m.add_function(wrap_pyfunction!(verify_commitment, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(encrypt_for, m)?)?;
    m.add_function(wrap_pyfunction!(verify_journal, m)?)?;
    Ok(())
}
