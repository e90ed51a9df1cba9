//! Effective Hamiltonians for active spaces: the exact unitary similarity
//! transform, its BCH-truncated variant, the non-Hermitian similarity form
//! driven by pure-excitation externals, perturbative approximations of it,
//! and the hybrid eigenvalue solve that combines the two.


use nalgebra::{DMatrix, DVector};

use crate::active_space::{cas_basis, ActiveSpace, CasBasis};
use crate::cluster::{
    exp_matrix, nilpotent_exp_action, sigma_triplets, t_triplets, AmplitudeStore,
};
use crate::error::{Error, Result};
use crate::fock::{SectorBasis, SpinOrbitalBasis};
use crate::hamiltonian::HamiltonianMatrix;
use crate::integrals::IntegralStore;
use crate::linop::{LinOp, TripletMatrix};
use crate::oracle::{nonsymmetric_eig, select_by_overlap};
use crate::perturbative::external_order_n;

const EXP_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeffMethod {
    ExactUnitary,
    Bch(usize),
    PerturbativeN(usize),
    SesNonHermitian,
}

impl std::fmt::Display for HeffMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeffMethod::ExactUnitary => write!(f, "exact-unitary"),
            HeffMethod::Bch(k) => write!(f, "bch-{k}"),
            HeffMethod::PerturbativeN(n) => write!(f, "perturbative-{n}"),
            HeffMethod::SesNonHermitian => write!(f, "ses-nonhermitian"),
        }
    }
}

/// An active-space block of a transformed Hamiltonian, over the CAS basis of
/// its space (reference determinant first).
#[derive(Debug, Clone)]
pub struct EffectiveHamiltonian {
    pub cas: CasBasis,
    pub matrix: DMatrix<f64>,
    pub method: HeffMethod,
    pub hermitian: bool,
}

fn cas_positions(sector: &SectorBasis, cas: &CasBasis) -> Result<Vec<usize>> {
    cas.sector_positions(sector)
}

fn project_block(full: &DMatrix<f64>, positions: &[usize]) -> DMatrix<f64> {
    let m = positions.len();
    DMatrix::from_fn(m, m, |i, j| full[(positions[i], positions[j])])
}

/// Exact Hermitian downfolding: the CAS block of e^{-sigma} H e^{sigma} with
/// an antisymmetric sigma, computed through the dense matrix exponential.
pub fn heff_unitary_exact(
    h: &HamiltonianMatrix,
    sigma_ext: &DMatrix<f64>,
    basis: &SpinOrbitalBasis,
    space: &ActiveSpace,
) -> Result<EffectiveHamiltonian> {
    let n = h.basis.len();
    if sigma_ext.nrows() != n || sigma_ext.ncols() != n {
        return Err(Error::Dimension(format!(
            "sigma is {}x{}, sector dimension is {}",
            sigma_ext.nrows(),
            sigma_ext.ncols(),
            n
        )));
    }
    let w = exp_matrix(sigma_ext, EXP_TOL)?;
    // e^{-sigma} = (e^{sigma})^T for antisymmetric sigma
    let conjugated = w.transpose() * &h.matrix * &w;
    let cas = cas_basis(basis, space)?;
    let positions = cas_positions(&h.basis, &cas)?;
    let mut block = project_block(&conjugated, &positions);
    let sym = (&block + block.transpose()) * 0.5;
    block = sym;
    Ok(EffectiveHamiltonian { cas, matrix: block, method: HeffMethod::ExactUnitary, hermitian: true })
}

/// BCH-truncated Hermitian downfolding: sum_{j<=k} (1/j!) ad_sigma^j(H)
/// projected onto the CAS and symmetrized by (M + M^T)/2.
pub fn heff_bch(
    h: &HamiltonianMatrix,
    sigma_ext: &DMatrix<f64>,
    basis: &SpinOrbitalBasis,
    space: &ActiveSpace,
    commutator_rank: usize,
) -> Result<EffectiveHamiltonian> {
    if commutator_rank == 0 {
        return Err(Error::Config("BCH commutator rank must be at least 1".into()));
    }
    let mut sum = h.matrix.clone();
    let mut nested = h.matrix.clone();
    let mut factorial = 1.0;
    for j in 1..=commutator_rank {
        nested = &nested * sigma_ext - sigma_ext * &nested;
        factorial *= j as f64;
        sum += &nested / factorial;
    }
    let cas = cas_basis(basis, space)?;
    let positions = cas_positions(&h.basis, &cas)?;
    let block = project_block(&sum, &positions);
    let block = (&block + block.transpose()) * 0.5;
    Ok(EffectiveHamiltonian {
        cas,
        matrix: block,
        method: HeffMethod::Bch(commutator_rank),
        hermitian: true,
    })
}

/// Non-Hermitian SES downfolding: the CAS block of e^{-T_ext} H e^{T_ext}
/// with a pure-excitation external operator, evaluated through the exact
/// finite polynomial of the nilpotent T matrices.
pub fn heff_ses_nonhermitian(
    h: &HamiltonianMatrix,
    t_ext: &AmplitudeStore,
    basis: &SpinOrbitalBasis,
    space: &ActiveSpace,
) -> Result<EffectiveHamiltonian> {
    for key in t_ext.keys() {
        if space.is_internal(&key.occ(), &key.virt()) {
            return Err(Error::InternalInExternal(key.to_string()));
        }
    }
    let cas = cas_basis(basis, space)?;
    let positions = cas_positions(&h.basis, &cas)?;
    let block = ses_block_op(
        &h.matrix,
        &t_triplets(t_ext, &h.basis),
        &positions,
        basis.n_alpha + basis.n_beta,
    );
    Ok(EffectiveHamiltonian {
        cas,
        matrix: block,
        method: HeffMethod::SesNonHermitian,
        hermitian: false,
    })
}

/// Columns of (P+Q_int) e^{-T} H e^{T} (P+Q_int) assembled one CAS
/// determinant at a time, so only vectors of the sector dimension are formed
/// besides whatever H itself stores.
pub fn ses_block_op(
    h: &dyn LinOp,
    t: &TripletMatrix,
    positions: &[usize],
    n_elec: usize,
) -> DMatrix<f64> {
    let dim = h.dim();
    let m = positions.len();
    let minus_t = t.negated();
    let mut block = DMatrix::zeros(m, m);
    for (col, &pos) in positions.iter().enumerate() {
        let mut unit = DVector::zeros(dim);
        unit[pos] = 1.0;
        let right = nilpotent_exp_action(t, &unit, n_elec + 1);
        let hv = h.apply(&right);
        let full = nilpotent_exp_action(&minus_t, &hv, n_elec + 1);
        for (row, &rpos) in positions.iter().enumerate() {
            block[(row, col)] = full[rpos];
        }
    }
    block
}

/// Perturbative downfolding H^eff[n]: the SES similarity form evaluated with
/// the order-n external amplitude estimates.
pub fn heff_perturbative(
    h: &HamiltonianMatrix,
    store: &IntegralStore,
    basis: &SpinOrbitalBasis,
    space: &ActiveSpace,
    order: usize,
) -> Result<(EffectiveHamiltonian, AmplitudeStore)> {
    if !(1..=2).contains(&order) {
        return Err(Error::Config(format!("perturbative order must be 1 or 2, got {order}")));
    }
    let t_ext = external_order_n(store, basis, space, order)?.amplitudes;
    let mut heff = heff_ses_nonhermitian(h, &t_ext, basis, space)?;
    heff.method = HeffMethod::PerturbativeN(order);
    Ok((heff, t_ext))
}

/// Result of the hybrid perturbative-iterative eigenvalue solve.
#[derive(Debug, Clone)]
pub struct BlochHybridSolution {
    pub energy: f64,
    /// Right-eigenvector coefficients over the CAS basis, reference first.
    pub internal_coefficients: DVector<f64>,
    pub overlap: f64,
    pub cas: CasBasis,
}

/// Diagonalize H^eff[n] in the CAS and return the root of maximal overlap
/// with the reference determinant.
pub fn bloch_hybrid_solve(
    h: &HamiltonianMatrix,
    store: &IntegralStore,
    basis: &SpinOrbitalBasis,
    space: &ActiveSpace,
    order: usize,
) -> Result<BlochHybridSolution> {
    let (heff, _) = heff_perturbative(h, store, basis, space, order)?;
    let m = heff.matrix.nrows();
    let mut reference = DVector::zeros(m);
    reference[0] = 1.0; // CAS basis puts the reference first
    let roots = nonsymmetric_eig(&heff.matrix, Some(&reference))?;
    let root = select_by_overlap(&roots, 0.1)?;
    Ok(BlochHybridSolution {
        energy: root.value_re,
        internal_coefficients: root.vector_re.clone(),
        overlap: root.overlap,
        cas: heff.cas,
    })
}

/// Apply sigma = T - T^dagger for a store as a sparse operator over a basis.
pub fn sigma_op(store: &AmplitudeStore, basis: &SectorBasis) -> TripletMatrix {
    sigma_triplets(store, basis)
}

/// Least-squares extraction of a standalone integral store over the active
/// orbitals whose Hamiltonian matrix reproduces a CAS block. Exact (residual
/// at round-off) whenever the block is the projection of a two-body
/// operator; otherwise the residual reports the dropped many-body content.
/// The block is symmetrized first, since the store format is Hermitian.
pub fn extract_store_from_cas(
    heff: &EffectiveHamiltonian,
    basis: &SpinOrbitalBasis,
) -> Result<(IntegralStore, f64)> {
    let space = &heff.cas.space;
    let active: Vec<usize> =
        space.occ_spatial.iter().chain(space.virt_spatial.iter()).copied().collect();
    let n_act = active.len();
    let ne = space.n_active_electrons();
    let target = (&heff.matrix + heff.matrix.transpose()) * 0.5;
    let m = target.nrows();

    // map each CAS determinant onto the standalone active-orbital system
    let relabel = |d: &crate::fock::Determinant| -> crate::fock::Determinant {
        let mut alpha = 0u64;
        let mut beta = 0u64;
        for (slot, &p) in active.iter().enumerate() {
            if d.alpha >> p & 1 == 1 {
                alpha |= 1 << slot;
            }
            if d.beta >> p & 1 == 1 {
                beta |= 1 << slot;
            }
        }
        crate::fock::Determinant { alpha, beta }
    };
    let _ = basis;
    let standalone: Vec<crate::fock::Determinant> =
        heff.cas.dets.iter().map(|d| relabel(d)).collect();
    let standalone_basis =
        std::sync::Arc::new(SectorBasis::new(n_act, standalone.clone()));

    // basis operators: core shift, symmetric one-body units, 8-fold two-body units
    let mut columns: Vec<DMatrix<f64>> = Vec::new();
    let mut setters: Vec<Box<dyn Fn(&mut IntegralStore, f64)>> = Vec::new();
    {
        let mut s = IntegralStore::empty(n_act, ne, 0);
        s.e_core = 1.0;
        columns.push(crate::hamiltonian::build_matrix(&s, standalone_basis.clone())?.matrix);
        setters.push(Box::new(|store, v| store.e_core = v));
    }
    for p in 0..n_act {
        for q in 0..=p {
            let mut s = IntegralStore::empty(n_act, ne, 0);
            s.set_h(p, q, 1.0);
            columns.push(crate::hamiltonian::build_matrix(&s, standalone_basis.clone())?.matrix);
            setters.push(Box::new(move |store, v| store.set_h(p, q, v)));
        }
    }
    for p in 0..n_act {
        for q in 0..=p {
            for r in 0..=p {
                for sx in 0..=r {
                    let pq = p * (p + 1) / 2 + q;
                    let rs = r * (r + 1) / 2 + sx;
                    if rs > pq {
                        continue;
                    }
                    let mut s = IntegralStore::empty(n_act, ne, 0);
                    s.set_g(p, q, r, sx, 1.0);
                    columns.push(
                        crate::hamiltonian::build_matrix(&s, standalone_basis.clone())?.matrix,
                    );
                    setters.push(Box::new(move |store, v| store.set_g(p, q, r, sx, v)));
                }
            }
        }
    }

    let unknowns = columns.len();
    let mut a = DMatrix::zeros(m * m, unknowns);
    for (k, col) in columns.iter().enumerate() {
        for i in 0..m {
            for j in 0..m {
                a[(i * m + j, k)] = col[(i, j)];
            }
        }
    }
    let mut b = DVector::zeros(m * m);
    for i in 0..m {
        for j in 0..m {
            b[i * m + j] = target[(i, j)];
        }
    }
    // Ridge-regularized normal equations with one refinement pass: the
    // candidate operators can be linearly dependent for small electron
    // counts, and the tiny ridge keeps the solve well posed without
    // disturbing representable targets.
    let ata = a.transpose() * &a + DMatrix::identity(unknowns, unknowns) * 1e-12;
    let lu = ata.lu();
    let mut x = lu
        .solve(&(a.transpose() * &b))
        .ok_or_else(|| Error::Dimension("extraction normal equations are singular".into()))?;
    let r = &b - &a * &x;
    if let Some(dx) = lu.solve(&(a.transpose() * &r)) {
        x += dx;
    }
    let residual = (&a * &x - &b).norm();

    let mut out = IntegralStore::empty(n_act, ne, 0);
    for (setter, &value) in setters.iter().zip(x.iter()) {
        setter(&mut out, value);
    }
    Ok((out, residual))
}
