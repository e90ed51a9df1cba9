//! Python bindings over the core library: integral stores, exact
//! diagonalization, the flow runners, and the verification suites.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use qflow_core::flow::{
    run_ccflow_nonhermitian, run_qflow, run_subflow, FlowConfig, HeffChoice, Selection,
};
use qflow_core::fock::{SectorBasis, SpinOrbitalBasis};
use qflow_core::hamiltonian::build_matrix;
use qflow_core::integrals;
use qflow_core::oracle::exact_diagonalize;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn run_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// One- and two-electron integrals plus the core energy.
#[pyclass(name = "IntegralStore")]
#[derive(Clone)]
struct PyIntegralStore {
    inner: integrals::IntegralStore,
}

#[pymethods]
impl PyIntegralStore {
    /// Parse FCIDUMP text.
    #[staticmethod]
    fn from_fcidump(text: &str) -> PyResult<Self> {
        Ok(PyIntegralStore { inner: integrals::parse_fcidump(text).map_err(err)? })
    }

    /// Parse the synthetic JSON Hamiltonian format.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyIntegralStore { inner: integrals::parse_synthetic(text).map_err(err)? })
    }

    /// Seeded random model with nondegenerate orbital energies.
    #[staticmethod]
    #[pyo3(signature = (n_orb, n_elec, v_scale=0.1, seed=0))]
    fn random(n_orb: usize, n_elec: usize, v_scale: f64, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        PyIntegralStore {
            inner: qflow_core::synthetic::random_store(n_orb, n_elec, v_scale, &mut rng),
        }
    }

    fn to_fcidump(&self) -> String {
        integrals::serialize_fcidump(&self.inner)
    }

    fn to_json(&self) -> String {
        integrals::serialize_synthetic(&self.inner)
    }

    #[getter]
    fn n_orb(&self) -> usize {
        self.inner.n_orb
    }

    #[getter]
    fn n_elec(&self) -> usize {
        self.inner.n_elec
    }

    #[getter]
    fn e_core(&self) -> f64 {
        self.inner.e_core
    }

    fn h(&self, p: usize, q: usize) -> f64 {
        self.inner.h(p, q)
    }

    /// Chemist-notation two-electron integral (pq|rs).
    fn g(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        self.inner.g(p, q, r, s)
    }

    fn __repr__(&self) -> String {
        format!(
            "IntegralStore(n_orb={}, n_elec={}, e_core={})",
            self.inner.n_orb, self.inner.n_elec, self.inner.e_core
        )
    }
}

/// Outcome of a Hermitian flow run.
#[pyclass(name = "FlowOutcome")]
struct PyFlowOutcome {
    #[pyo3(get)]
    energy: f64,
    #[pyo3(get)]
    reference_energy: f64,
    #[pyo3(get)]
    cycles: usize,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    n_spaces: usize,
    #[pyo3(get)]
    parameters: usize,
    #[pyo3(get)]
    main_space_id: usize,
    #[pyo3(get)]
    per_cycle_main_energy: Vec<f64>,
    #[pyo3(get)]
    selected_spaces: Option<Vec<usize>>,
    trace_csv: String,
}

#[pymethods]
impl PyFlowOutcome {
    fn trace_csv(&self) -> &str {
        &self.trace_csv
    }

    fn __repr__(&self) -> String {
        format!(
            "FlowOutcome(energy={:.10}, cycles={}, converged={})",
            self.energy, self.cycles, self.converged
        )
    }
}

/// Outcome of the non-Hermitian flow.
#[pyclass(name = "CcflowOutcome")]
struct PyCcflowOutcome {
    #[pyo3(get)]
    energy: f64,
    #[pyo3(get)]
    energy_functional: f64,
    #[pyo3(get)]
    residual: f64,
    #[pyo3(get)]
    cycles: usize,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    parameters: usize,
}

#[pymethods]
impl PyCcflowOutcome {
    fn __repr__(&self) -> String {
        format!(
            "CcflowOutcome(energy={:.10}, residual={:.3e})",
            self.energy, self.residual
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    ne: usize,
    no: usize,
    eta: f64,
    cycles: usize,
    tol: f64,
    background: bool,
    line_search: bool,
    bch_rank: Option<usize>,
    selection: Option<Selection>,
) -> PyResult<FlowConfig> {
    let (n_occ_pick, n_virt_pick) = FlowConfig::picks_from_ne_no(ne, no).map_err(err)?;
    Ok(FlowConfig {
        n_occ_pick,
        n_virt_pick,
        cycles_max: cycles,
        eta,
        energy_tol: tol,
        background,
        line_search,
        heff: match bch_rank {
            Some(k) => HeffChoice::Bch(k),
            None => HeffChoice::ExactUnitary,
        },
        selection,
        ..FlowConfig::default()
    })
}

fn flow_outcome(r: qflow_core::flow::FlowResult) -> PyFlowOutcome {
    PyFlowOutcome {
        energy: r.energy,
        reference_energy: r.e_ref,
        cycles: r.cycles_run,
        converged: r.converged,
        n_spaces: r.n_spaces,
        parameters: r.parameters,
        main_space_id: r.main_space_id,
        per_cycle_main_energy: r.per_cycle_main_energy,
        selected_spaces: r.selected,
        trace_csv: r.trace.to_csv(),
    }
}

/// Run the Hermitian flow over every active space of the (ne, no) template.
#[pyfunction]
#[pyo3(signature = (store, ne, no, eta=0.1, cycles=200, tol=1e-8, background=false, line_search=false, bch_rank=None))]
#[allow(clippy::too_many_arguments)]
fn qflow(
    store: &PyIntegralStore,
    ne: usize,
    no: usize,
    eta: f64,
    cycles: usize,
    tol: f64,
    background: bool,
    line_search: bool,
    bch_rank: Option<usize>,
) -> PyResult<PyFlowOutcome> {
    let config = build_config(ne, no, eta, cycles, tol, background, line_search, bch_rank, None)?;
    Ok(flow_outcome(run_qflow(&config, &store.inner).map_err(run_err)?))
}

/// Run the sub-flow: one selection cycle, freeze the excluded spaces at
/// perturbative estimates, then iterate the selected spaces.
#[pyfunction]
#[pyo3(signature = (store, ne, no, top_k=None, threshold=None, eta=0.1, cycles=200, tol=1e-8, background=true, line_search=false))]
#[allow(clippy::too_many_arguments)]
fn subflow(
    store: &PyIntegralStore,
    ne: usize,
    no: usize,
    top_k: Option<usize>,
    threshold: Option<f64>,
    eta: f64,
    cycles: usize,
    tol: f64,
    background: bool,
    line_search: bool,
) -> PyResult<PyFlowOutcome> {
    let selection = match (top_k, threshold) {
        (Some(k), None) => Selection::TopK(k),
        (None, Some(t)) => Selection::Threshold(t),
        _ => return Err(err("pass exactly one of top_k / threshold")),
    };
    let config =
        build_config(ne, no, eta, cycles, tol, background, line_search, None, Some(selection))?;
    Ok(flow_outcome(run_subflow(&config, &store.inner).map_err(run_err)?))
}

/// Run the non-Hermitian flow to its fixed point.
#[pyfunction]
#[pyo3(signature = (store, ne, no, cycles=200, residual_tol=1e-10))]
fn ccflow(
    store: &PyIntegralStore,
    ne: usize,
    no: usize,
    cycles: usize,
    residual_tol: f64,
) -> PyResult<PyCcflowOutcome> {
    let (n_occ_pick, n_virt_pick) = FlowConfig::picks_from_ne_no(ne, no).map_err(err)?;
    let config = FlowConfig {
        n_occ_pick,
        n_virt_pick,
        cycles_max: cycles,
        ccflow_residual_tol: residual_tol,
        ..FlowConfig::default()
    };
    let r = run_ccflow_nonhermitian(&config, &store.inner).map_err(run_err)?;
    Ok(PyCcflowOutcome {
        energy: r.energy,
        energy_functional: r.energy_functional,
        residual: r.residual,
        cycles: r.cycles_run,
        converged: r.converged,
        parameters: r.parameters,
    })
}

/// Exact ground-state energy by dense diagonalization of the full sector.
#[pyfunction]
fn fci_ground_energy(store: &PyIntegralStore) -> PyResult<f64> {
    let na = store.inner.n_alpha().map_err(err)?;
    let nb = store.inner.n_beta().map_err(err)?;
    let basis = SpinOrbitalBasis::new(store.inner.n_orb, na, nb).map_err(err)?;
    let sector = Arc::new(SectorBasis::for_sector(&basis, na, nb).map_err(err)?);
    let h = build_matrix(&store.inner, sector).map_err(run_err)?;
    Ok(exact_diagonalize(&h.matrix, 1, None).map_err(run_err)?.eigenvalues[0])
}

/// Reference-determinant expectation value of the Hamiltonian.
#[pyfunction]
fn reference_energy(store: &PyIntegralStore) -> PyResult<f64> {
    let na = store.inner.n_alpha().map_err(err)?;
    let nb = store.inner.n_beta().map_err(err)?;
    let basis = SpinOrbitalBasis::new(store.inner.n_orb, na, nb).map_err(err)?;
    Ok(qflow_core::hamiltonian::diagonal_element(&store.inner, &basis.reference()))
}

/// Active spaces of the template with their correlation metrics, in
/// importance order: a list of (id, occ, virt, metric) tuples.
#[pyfunction]
fn active_spaces(
    store: &PyIntegralStore,
    ne: usize,
    no: usize,
) -> PyResult<Vec<(usize, Vec<usize>, Vec<usize>, f64)>> {
    let (po, pv) = FlowConfig::picks_from_ne_no(ne, no).map_err(err)?;
    let na = store.inner.n_alpha().map_err(err)?;
    let basis =
        SpinOrbitalBasis::new(store.inner.n_orb, na, store.inner.n_beta().map_err(err)?)
            .map_err(err)?;
    let spaces = qflow_core::active_space::enumerate_spaces(&basis, po, pv).map_err(err)?;
    let ranked = qflow_core::flow::importance_order(&store.inner, &basis, &spaces)
        .map_err(run_err)?;
    Ok(ranked
        .into_iter()
        .map(|(idx, metric)| {
            let s = &spaces[idx];
            (s.id, s.occ_spatial.clone(), s.virt_spatial.clone(), metric)
        })
        .collect())
}

/// Worst downfolding-theorem residual over every (occ_pick, virt_pick)
/// active space, with the cluster operator taken from the exact ground
/// state. Near zero for any Hamiltonian, which is the point of the theorem.
#[pyfunction]
fn ses_max_residual(store: &PyIntegralStore, occ_pick: usize, virt_pick: usize) -> PyResult<f64> {
    let na = store.inner.n_alpha().map_err(err)?;
    let nb = store.inner.n_beta().map_err(err)?;
    let basis = SpinOrbitalBasis::new(store.inner.n_orb, na, nb).map_err(err)?;
    let sector = Arc::new(SectorBasis::for_sector(&basis, na, nb).map_err(err)?);
    let h = build_matrix(&store.inner, sector.clone()).map_err(run_err)?;
    let spectrum = exact_diagonalize(&h.matrix, 1, None).map_err(run_err)?;
    let ground = qflow_core::fock::StateVector::from_coeffs(
        sector,
        spectrum.eigenvectors[0].clone(),
    )
    .map_err(run_err)?;
    let t = qflow_core::cluster::cluster_analyze(&ground, &basis.reference()).map_err(run_err)?;
    let mut worst: f64 = 0.0;
    for space in
        qflow_core::active_space::enumerate_spaces(&basis, occ_pick, virt_pick).map_err(err)?
    {
        let r = qflow_core::verify::ses_residual(
            &h,
            &basis,
            &space,
            &t,
            spectrum.eigenvalues[0],
        )
        .map_err(run_err)?;
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Run every verification suite and return the rendered report; raises when
/// a property fails.
#[pyfunction]
#[pyo3(signature = (seed=42, instances=5))]
fn verify_all(seed: u64, instances: usize) -> PyResult<String> {
    let report = qflow_core::verify::run_all(seed, instances).map_err(run_err)?;
    if !report.all_passed() {
        return Err(PyRuntimeError::new_err(report.render()));
    }
    Ok(report.render())
}

#[pymodule]
fn qflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIntegralStore>()?;
    m.add_class::<PyFlowOutcome>()?;
    m.add_class::<PyCcflowOutcome>()?;
    m.add_function(wrap_pyfunction!(qflow, m)?)?;
    m.add_function(wrap_pyfunction!(subflow, m)?)?;
    m.add_function(wrap_pyfunction!(ccflow, m)?)?;
    m.add_function(wrap_pyfunction!(fci_ground_energy, m)?)?;
    m.add_function(wrap_pyfunction!(reference_energy, m)?)?;
    m.add_function(wrap_pyfunction!(active_spaces, m)?)?;
    m.add_function(wrap_pyfunction!(ses_max_residual, m)?)?;
    m.add_function(wrap_pyfunction!(verify_all, m)?)?;
    Ok(())
}
