//! The quantum-flow orchestrators: importance ordering over active spaces,
//! per-space single-shot commutator gradient steps, the cycle loop with
//! energy recording on the main space, sub-flow selection with a perturbative
//! background, and the non-Hermitian commutative flow.

mod ccflow;
mod engine;

pub use ccflow::{run_ccflow_nonhermitian, CcflowResult};
pub use engine::{run_qflow, run_subflow, select_subflow, FlowResult};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::active_space::{cas_basis, enumerate_spaces, ActiveSpace, CasBasis};
use crate::cluster::{enumerate_excitations_between, AmplitudeStore, Excitation, Provenance};
use crate::error::{Error, Result};
use crate::fock::{alpha_so, beta_so, Determinant, SectorBasis, SpinOrbitalBasis};
use crate::hamiltonian::{build_matrix, diagonal_element, HamiltonianOp};
use crate::integrals::IntegralStore;
use crate::linop::LinOp;
use crate::oracle::exact_diagonalize;
use crate::perturbative::TriplesScope;

/// Above this sector dimension the engine applies H matrix-free instead of
/// storing it densely.
pub const DENSE_SECTOR_LIMIT: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowMode {
    HermitianQflow,
    Subflow,
    NonhermitianCcflow,
}

/// Effective-Hamiltonian construction used inside the Hermitian flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeffChoice {
    ExactUnitary,
    Bch(usize),
}

/// Sub-flow space selection rule. Exactly one is active in subflow mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Spaces whose first-cycle |dE| reaches the threshold (Hartree).
    Threshold(f64),
    /// The K spaces with the largest first-cycle |dE|.
    TopK(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowConfig {
    pub mode: FlowMode,
    pub n_occ_pick: usize,
    pub n_virt_pick: usize,
    pub cycles_max: usize,
    /// Gradient step size (dimensionless).
    pub eta: f64,
    /// Main-space energy change per cycle under which the flow stops (Hartree).
    pub energy_tol: f64,
    /// Gradient-norm floor under which the flow stops.
    pub grad_tol: f64,
    pub trotter_rank: usize,
    pub heff: HeffChoice,
    pub selection: Option<Selection>,
    pub background: bool,
    pub triples_scope: TriplesScope,
    pub seed: u64,
    /// Backtracking halving of eta until the step lowers the space energy.
    pub line_search: bool,
    /// Evaluate every space against a frozen snapshot of the amplitudes and
    /// merge updates in importance order, instead of sweeping sequentially.
    pub jacobi: bool,
    /// Fixed-point residual target for the non-Hermitian flow.
    pub ccflow_residual_tol: f64,
    /// Test-only floor: error out if any recorded energy falls below
    /// `floor - 1.0` (oracle-enabled divergence guard).
    #[serde(skip)]
    pub fci_floor: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            mode: FlowMode::HermitianQflow,
            n_occ_pick: 2,
            n_virt_pick: 2,
            cycles_max: 200,
            eta: 0.1,
            energy_tol: 1e-8,
            grad_tol: 1e-12,
            trotter_rank: 1,
            heff: HeffChoice::ExactUnitary,
            selection: None,
            background: false,
            triples_scope: TriplesScope::FullComplement,
            seed: 0,
            line_search: false,
            jacobi: false,
            ccflow_residual_tol: 1e-10,
            fci_floor: None,
        }
    }
}

impl FlowConfig {
    /// Electron/orbital template (ne, no) of the generated active spaces.
    pub fn ne_no(&self) -> (usize, usize) {
        (2 * self.n_occ_pick, self.n_occ_pick + self.n_virt_pick)
    }

    /// Translate a (ne, no) template into occupied/virtual picks.
    pub fn picks_from_ne_no(ne: usize, no: usize) -> Result<(usize, usize)> {
        if ne % 2 != 0 || ne == 0 {
            return Err(Error::Config(format!("ne must be positive and even, got {ne}")));
        }
        let occ = ne / 2;
        if no < occ {
            return Err(Error::Config(format!("no = {no} cannot host ne = {ne} electrons")));
        }
        Ok((occ, no - occ))
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 {
            return Err(Error::Config("eta must be positive".into()));
        }
        if self.trotter_rank == 0 {
            return Err(Error::Config("trotter rank must be at least 1".into()));
        }
        if self.mode == FlowMode::Subflow && self.selection.is_none() {
            return Err(Error::Config("subflow mode needs a selection rule".into()));
        }
        if let HeffChoice::Bch(0) = self.heff {
            return Err(Error::Config("BCH rank must be at least 1".into()));
        }
        Ok(())
    }
}

/// One gradient step of one space in one cycle.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub cycle: usize,
    pub space_id: usize,
    pub step_index: usize,
    pub occ: Vec<usize>,
    pub virt: Vec<usize>,
    pub e_before: f64,
    pub e_after: f64,
    pub delta_e: f64,
    pub grad_norm: f64,
    pub params_touched: usize,
}

/// Append-only per-step records backing energy-per-cycle plots and sub-flow
/// selection.
#[derive(Debug, Clone, Default, Serialize)]
pub struct FlowTrace {
    pub records: Vec<TraceRecord>,
    pub jacobi: bool,
}

impl FlowTrace {
    /// Frozen CSV schema:
    /// `cycle,space_id,occ,virt,e_before,e_after,delta_e,grad_norm,params`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,space_id,occ,virt,e_before,e_after,delta_e,grad_norm,params\n");
        for r in &self.records {
            let join = |v: &[usize]| {
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
            };
            out.push_str(&format!(
                "{},{},[{}],[{}],{:.12e},{:.12e},{:.12e},{:.12e},{}\n",
                r.cycle,
                r.space_id,
                join(&r.occ),
                join(&r.virt),
                r.e_before,
                r.e_after,
                r.delta_e,
                r.grad_norm,
                r.params_touched
            ));
        }
        out
    }

    /// Absolute first-cycle energy change per space id.
    pub fn cycle_deltas(&self, cycle: usize) -> BTreeMap<usize, f64> {
        self.records
            .iter()
            .filter(|r| r.cycle == cycle)
            .map(|r| (r.space_id, r.delta_e.abs()))
            .collect()
    }
}

/// Global amplitude store plus the ownership partition over spaces.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub amplitudes: AmplitudeStore,
    pub owners: BTreeMap<Excitation, usize>,
    /// Space ids in importance order.
    pub order: Vec<usize>,
    pub cycle: usize,
    pub energy: f64,
}

/// Everything the engine precomputes about one active space.
pub(crate) struct SpaceContext {
    pub space: ActiveSpace,
    pub cas: CasBasis,
    /// Position of each CAS determinant in the full sector basis.
    pub positions: Vec<usize>,
    /// Internal excitations in canonical order.
    pub internal: Vec<Excitation>,
    /// Per internal excitation: (row, col, phase) pairs of its CAS action.
    pub pairs: Vec<Vec<(usize, usize, f64)>>,
    /// Indices into `internal` of the keys this space owns.
    pub owned: Vec<usize>,
    /// CAS-projection correlation energy (ground eigenvalue minus reference).
    pub metric: f64,
}

impl SpaceContext {
    pub fn internal_spin_orbitals(space: &ActiveSpace) -> (Vec<usize>, Vec<usize>) {
        let occ: Vec<usize> = space
            .occ_spatial
            .iter()
            .flat_map(|&p| [alpha_so(p), beta_so(p)])
            .collect();
        let virt: Vec<usize> = space
            .virt_spatial
            .iter()
            .flat_map(|&p| [alpha_so(p), beta_so(p)])
            .collect();
        (occ, virt)
    }
}

/// Hamiltonian application over the full sector: dense below
/// [`DENSE_SECTOR_LIMIT`], matrix-free above it.
pub(crate) enum SectorHamiltonian {
    Dense(nalgebra::DMatrix<f64>),
    Lazy(HamiltonianOp),
}

impl SectorHamiltonian {
    pub fn op(&self) -> &dyn LinOp {
        match self {
            SectorHamiltonian::Dense(m) => m,
            SectorHamiltonian::Lazy(op) => op,
        }
    }
}

/// Shared setup of every flow mode.
pub(crate) struct FlowSetup {
    pub basis: SpinOrbitalBasis,
    pub reference: Determinant,
    pub sector: Arc<SectorBasis>,
    pub reference_pos: usize,
    pub e_ref: f64,
    pub contexts: Vec<SpaceContext>,
    /// Space ids in importance order.
    pub order: Vec<usize>,
    pub owners: BTreeMap<Excitation, usize>,
    pub store: Arc<IntegralStore>,
}

impl FlowSetup {
    pub fn hamiltonian(&self) -> Result<SectorHamiltonian> {
        if self.sector.len() <= DENSE_SECTOR_LIMIT {
            Ok(SectorHamiltonian::Dense(
                build_matrix(&self.store, self.sector.clone())?.matrix,
            ))
        } else {
            Ok(SectorHamiltonian::Lazy(HamiltonianOp::new(
                self.store.clone(),
                self.sector.clone(),
            )?))
        }
    }

    /// Initial amplitude store: every internal key of every space at zero,
    /// owned by the first space in importance order that contains it.
    pub fn initial_amplitudes(&self) -> AmplitudeStore {
        let mut store = AmplitudeStore::new();
        for &sid in &self.order {
            for exc in &self.contexts[sid].internal {
                store.insert_first_writer(exc.clone(), 0.0, Provenance::Iterative);
            }
        }
        store
    }
}

/// Correlation-strength metric of one space: the ground eigenvalue of the
/// bare Hamiltonian's CAS projection minus the reference expectation.
pub fn correlation_metric(
    store: &IntegralStore,
    basis: &SpinOrbitalBasis,
    space: &ActiveSpace,
) -> Result<f64> {
    let cas = cas_basis(basis, space)?;
    let block = build_matrix(store, cas.as_sector_basis(basis.n_spatial))?;
    let ground = exact_diagonalize(&block.matrix, 1, None)?.eigenvalues[0];
    Ok(ground - diagonal_element(store, &basis.reference()))
}

/// Sort spaces by descending encapsulated correlation strength (most
/// negative CAS correlation energy first), ties broken by canonical id.
/// Returns (index into `spaces`, metric) pairs.
pub fn importance_order(
    store: &IntegralStore,
    basis: &SpinOrbitalBasis,
    spaces: &[ActiveSpace],
) -> Result<Vec<(usize, f64)>> {
    let mut metrics = Vec::with_capacity(spaces.len());
    for (i, space) in spaces.iter().enumerate() {
        metrics.push((i, correlation_metric(store, basis, space)?));
    }
    metrics.sort_by(|a, b| {
        a.1.total_cmp(&b.1).then(spaces[a.0].id.cmp(&spaces[b.0].id))
    });
    Ok(metrics)
}

pub(crate) fn flow_setup(store: &IntegralStore, config: &FlowConfig) -> Result<FlowSetup> {
    config.validate()?;
    let n_alpha = store.n_alpha()?;
    let n_beta = store.n_beta()?;
    if n_alpha != n_beta {
        return Err(Error::Config(format!(
            "the flow needs a closed-shell reference, got ({n_alpha},{n_beta})"
        )));
    }
    let basis = SpinOrbitalBasis::new(store.n_orb, n_alpha, n_beta)?;
    let reference = basis.reference();
    let sector = Arc::new(SectorBasis::for_sector(&basis, n_alpha, n_beta)?);
    let reference_pos = sector
        .position(&reference)
        .expect("reference always lies in its own sector");
    let e_ref = diagonal_element(store, &reference);

    let spaces = enumerate_spaces(&basis, config.n_occ_pick, config.n_virt_pick)?;
    let mut contexts = Vec::with_capacity(spaces.len());
    for space in spaces {
        let cas = cas_basis(&basis, &space)?;
        let metric = correlation_metric(store, &basis, &space)?;
        let positions = cas.sector_positions(&sector)?;
        let (occ_so, virt_so) = SpaceContext::internal_spin_orbitals(&space);
        let max_rank = space.n_active_electrons().min(virt_so.len());
        let internal = enumerate_excitations_between(&occ_so, &virt_so, 1..=max_rank);
        let mut pairs = Vec::with_capacity(internal.len());
        for exc in &internal {
            let mut list = Vec::new();
            for (col, det) in cas.dets.iter().enumerate() {
                if let Some((phase, out)) = exc.apply(det) {
                    if let Some(row) = cas.dets.iter().position(|d| *d == out) {
                        list.push((row, col, phase));
                    }
                }
            }
            pairs.push(list);
        }
        contexts.push(SpaceContext {
            metric,
            space,
            cas,
            positions,
            internal,
            pairs,
            owned: Vec::new(),
        });
    }

    // importance order: strongest correlation first, ties by canonical id
    let mut order: Vec<usize> = (0..contexts.len()).collect();
    order.sort_by(|&a, &b| {
        contexts[a]
            .metric
            .total_cmp(&contexts[b].metric)
            .then(contexts[a].space.id.cmp(&contexts[b].space.id))
    });

    // ownership: first space in importance order wins each key
    let mut owners: BTreeMap<Excitation, usize> = BTreeMap::new();
    for &sid in &order {
        let mut owned = Vec::new();
        for (k, exc) in contexts[sid].internal.iter().enumerate() {
            if !owners.contains_key(exc) {
                owners.insert(exc.clone(), contexts[sid].space.id);
                owned.push(k);
            }
        }
        contexts[sid].owned = owned;
    }

    Ok(FlowSetup {
        basis,
        reference,
        sector,
        reference_pos,
        e_ref,
        contexts,
        order,
        owners,
        store: Arc::new(store.clone()),
    })
}
