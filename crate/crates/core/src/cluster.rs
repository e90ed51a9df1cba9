//! Cluster amplitudes and the operators they generate: non-repetitive union
//! stores, anti-Hermitian sigma matrices, exponential action on states,
//! Trotterized products, and cluster analysis of CI vectors.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fock::{excitation_between, excitation_string, is_alpha, Determinant, SectorBasis, StateVector};
use crate::linop::{LinOp, TripletMatrix};

/// A spin-conserving particle-hole excitation with canonically ordered index
/// tuples. `occ` lists reference-occupied spin orbitals, `virt` the targets.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Excitation {
    occ: Vec<u8>,
    virt: Vec<u8>,
}

impl Excitation {
    pub fn new(occ: &[usize], virt: &[usize]) -> Result<Self> {
        if occ.is_empty() || occ.len() != virt.len() {
            return Err(Error::Config(format!(
                "excitation needs equal nonzero occ/virt counts, got {}/{}",
                occ.len(),
                virt.len()
            )));
        }
        for w in occ.windows(2).chain(virt.windows(2)) {
            if w[0] >= w[1] {
                return Err(Error::Config("excitation tuples must be strictly ascending".into()));
            }
        }
        let alpha_occ = occ.iter().filter(|&&s| is_alpha(s)).count();
        let alpha_virt = virt.iter().filter(|&&s| is_alpha(s)).count();
        if alpha_occ != alpha_virt {
            return Err(Error::Config(format!(
                "excitation does not conserve spin: {alpha_occ} alpha out, {alpha_virt} alpha in"
            )));
        }
        Ok(Excitation {
            occ: occ.iter().map(|&x| x as u8).collect(),
            virt: virt.iter().map(|&x| x as u8).collect(),
        })
    }

    pub fn rank(&self) -> usize {
        self.occ.len()
    }

    pub fn occ(&self) -> Vec<usize> {
        self.occ.iter().map(|&x| x as usize).collect()
    }

    pub fn virt(&self) -> Vec<usize> {
        self.virt.iter().map(|&x| x as usize).collect()
    }

    /// Signed action on a determinant, or `None` when annihilated.
    pub fn apply(&self, d: &Determinant) -> Option<(f64, Determinant)> {
        let (amp, out) = excitation_string(&self.occ(), &self.virt()).apply(d);
        if amp == 0.0 {
            None
        } else {
            Some((amp, out))
        }
    }

    /// Signed action of the adjoint (de-excitation) on a determinant.
    pub fn apply_adjoint(&self, d: &Determinant) -> Option<(f64, Determinant)> {
        // adjoint of (create virt)(annihilate occ) reverses roles
        let (amp, out) = excitation_string(&self.virt(), &self.occ()).apply(d);
        if amp == 0.0 {
            None
        } else {
            Some((amp, out))
        }
    }
}

impl fmt::Display for Excitation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let j = |v: &[u8]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        write!(f, "{} {} -> {}", self.rank(), j(&self.occ), j(&self.virt))
    }
}

/// Where an amplitude value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Iterative,
    PerturbativeBackground,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Iterative => write!(f, "iterative"),
            Provenance::PerturbativeBackground => write!(f, "perturbative-background"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeEntry {
    pub value: f64,
    pub tag: Provenance,
}

/// Canonical map from excitations to real amplitudes. Merging keeps the
/// first writer's value on duplicate keys, which realizes the non-repetitive
/// union of per-space operators.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AmplitudeStore {
    entries: BTreeMap<Excitation, AmplitudeEntry>,
}

impl AmplitudeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &Excitation) -> Option<f64> {
        self.entries.get(key).map(|e| e.value)
    }

    pub fn contains(&self, key: &Excitation) -> bool {
        self.entries.contains_key(key)
    }

    /// Insert, keeping an existing value (first-writer wins).
    pub fn insert_first_writer(&mut self, key: Excitation, value: f64, tag: Provenance) -> bool {
        match self.entries.entry(key) {
            Entry::Vacant(v) => {
                v.insert(AmplitudeEntry { value, tag });
                true
            }
            Entry::Occupied(_) => false,
        }
    }

    /// Insert or overwrite.
    pub fn set(&mut self, key: Excitation, value: f64, tag: Provenance) {
        self.entries.insert(key, AmplitudeEntry { value, tag });
    }

    pub fn remove(&mut self, key: &Excitation) -> Option<AmplitudeEntry> {
        self.entries.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Excitation, &AmplitudeEntry)> {
        self.entries.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &Excitation> {
        self.entries.keys()
    }

    /// Keep only the entries whose key satisfies the predicate.
    pub fn filtered<F: Fn(&Excitation) -> bool>(&self, keep: F) -> AmplitudeStore {
        AmplitudeStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    /// Dump format: one `rank occ... -> virt... value tag` line per entry.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, e) in &self.entries {
            out.push_str(&format!("{} {:.16e} {}\n", k, e.value, e.tag));
        }
        out
    }
}

/// Non-repetitive union: keys resolve to the value from the earliest store.
pub fn union(stores: &[&AmplitudeStore]) -> AmplitudeStore {
    let mut out = AmplitudeStore::new();
    for store in stores {
        for (k, e) in store.iter() {
            out.insert_first_writer(k.clone(), e.value, e.tag);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Operator matrices over determinant bases
// ---------------------------------------------------------------------------

/// Sparse matrix of sum_k theta_k X_k over a basis (pure excitation).
pub fn t_triplets(store: &AmplitudeStore, basis: &SectorBasis) -> TripletMatrix {
    let mut m = TripletMatrix::new(basis.len());
    for (exc, entry) in store.iter() {
        if entry.value == 0.0 {
            continue;
        }
        for (col, det) in basis.dets.iter().enumerate() {
            if let Some((sign, out)) = exc.apply(det) {
                if let Some(row) = basis.position(&out) {
                    m.push(row, col, entry.value * sign);
                }
            }
        }
    }
    m
}

/// Sparse matrix of sum_k theta_k (X_k - X_k^dagger): exactly antisymmetric.
pub fn sigma_triplets(store: &AmplitudeStore, basis: &SectorBasis) -> TripletMatrix {
    let mut m = TripletMatrix::new(basis.len());
    for (exc, entry) in store.iter() {
        if entry.value == 0.0 {
            continue;
        }
        for (col, det) in basis.dets.iter().enumerate() {
            if let Some((sign, out)) = exc.apply(det) {
                if let Some(row) = basis.position(&out) {
                    m.push(row, col, entry.value * sign);
                    m.push(col, row, -entry.value * sign);
                }
            }
        }
    }
    m
}

/// Dense anti-Hermitian sigma matrix.
pub fn sigma_matrix(store: &AmplitudeStore, basis: &SectorBasis) -> DMatrix<f64> {
    sigma_triplets(store, basis).to_dense()
}

/// Dense pure-excitation T matrix.
pub fn t_matrix(store: &AmplitudeStore, basis: &SectorBasis) -> DMatrix<f64> {
    t_triplets(store, basis).to_dense()
}

// ---------------------------------------------------------------------------
// Exponentials
// ---------------------------------------------------------------------------

const TAYLOR_TERM_CAP: usize = 200;

/// e^M v by scaled Taylor series: the step e^{M/2^s} is applied 2^s times
/// with the term recursion truncated once terms fall below `tol` relative to
/// the accumulated result.
pub fn exp_action_op(op: &dyn LinOp, v: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    if op.dim() != v.len() {
        return Err(Error::Dimension(format!(
            "operator dim {} vs vector {}",
            op.dim(),
            v.len()
        )));
    }
    let bound = op.norm_bound();
    let mut s = 0u32;
    while bound / (1u64 << s) as f64 > 1.0 && s < 40 {
        s += 1;
    }
    let scale = (1u64 << s) as f64;
    let mut state = v.clone();
    for _ in 0..(1u64 << s) {
        let mut sum = state.clone();
        let mut term = state.clone();
        let mut converged = false;
        for j in 1..=TAYLOR_TERM_CAP {
            let mut next = DVector::zeros(op.dim());
            op.apply_add(&term, &mut next);
            term = next / (scale * j as f64);
            sum += &term;
            if term.norm() <= tol * sum.norm().max(1e-300) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence(TAYLOR_TERM_CAP));
        }
        state = sum;
    }
    Ok(state)
}

/// e^M v for a dense matrix.
pub fn exp_action(m: &DMatrix<f64>, v: &StateVector, tol: f64) -> Result<StateVector> {
    let coeffs = exp_action_op(m, &v.coeffs, tol)?;
    StateVector::from_coeffs(v.basis.clone(), coeffs)
}

/// Dense matrix exponential by scaling and squaring with a Taylor kernel.
pub fn exp_matrix(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!("matrix is {}x{}", n, m.ncols())));
    }
    let bound = m.norm_bound();
    let mut s = 0u32;
    while bound / (1u64 << s) as f64 > 0.5 && s < 40 {
        s += 1;
    }
    let scale = (1u64 << s) as f64;
    let scaled = m / scale;
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    let mut converged = false;
    for j in 1..=TAYLOR_TERM_CAP {
        term = (&scaled * term) / j as f64;
        sum += &term;
        if term.norm() <= tol * sum.norm().max(1e-300) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(TAYLOR_TERM_CAP));
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    Ok(sum)
}

/// e^T v for a pure-excitation operator: the series terminates exactly
/// because repeated excitation drives every determinant out of the sector.
pub fn nilpotent_exp_action(op: &dyn LinOp, v: &DVector<f64>, max_power: usize) -> DVector<f64> {
    let mut sum = v.clone();
    let mut term = v.clone();
    for j in 1..=max_power.max(1) {
        let mut next = DVector::zeros(op.dim());
        op.apply_add(&term, &mut next);
        term = next / j as f64;
        if term.iter().all(|&x| x == 0.0) {
            break;
        }
        sum += &term;
    }
    sum
}

/// Rank-N Trotter product state (e^{sigma_ext/N} e^{sigma_int/N})^N |ref>.
pub fn trotter_state(
    sigma_int: &DMatrix<f64>,
    sigma_ext: &DMatrix<f64>,
    n_rank: usize,
    reference: &StateVector,
    tol: f64,
) -> Result<StateVector> {
    if n_rank == 0 {
        return Err(Error::Config("Trotter rank must be at least 1".into()));
    }
    let scale = n_rank as f64;
    let int_step = sigma_int / scale;
    let ext_step = sigma_ext / scale;
    let mut state = reference.clone();
    for _ in 0..n_rank {
        state = exp_action(&int_step, &state, tol)?;
        state = exp_action(&ext_step, &state, tol)?;
    }
    Ok(state)
}

// ---------------------------------------------------------------------------
// Cluster analysis
// ---------------------------------------------------------------------------

/// Extract the full-rank cluster operator T with e^T |ref> = |fci> under
/// intermediate normalization, order by order in the excitation rank.
pub fn cluster_analyze(fci: &StateVector, reference: &Determinant) -> Result<AmplitudeStore> {
    let basis = &fci.basis;
    let ref_pos = basis
        .position(reference)
        .ok_or_else(|| Error::InvalidSector("reference not in FCI basis".into()))?;
    let ref_coeff = fci.coeffs[ref_pos];
    if ref_coeff.abs() < 1e-10 {
        return Err(Error::VanishingOverlap(ref_coeff.abs()));
    }
    let normalized = &fci.coeffs / ref_coeff;
    let n_elec = reference.n_alpha() + reference.n_beta();

    // Group determinants by excitation rank relative to the reference.
    let mut by_rank: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, d) in basis.dets.iter().enumerate() {
        let r = reference.excitation_rank(d);
        if r > 0 {
            by_rank.entry(r).or_default().push(i);
        }
    }

    let mut store = AmplitudeStore::new();
    let mut unit_ref = DVector::zeros(basis.len());
    unit_ref[ref_pos] = 1.0;
    for (&rank, members) in &by_rank {
        if rank > n_elec {
            break;
        }
        // Disconnected products of lower-rank amplitudes reaching this rank.
        let lower = nilpotent_exp_action(&t_triplets(&store, basis), &unit_ref, rank);
        for &idx in members {
            let det = basis.dets[idx];
            let parts = excitation_between(reference, &det, rank, basis.n_spatial)?
                .expect("rank bounded by construction");
            let exc = Excitation::new(&parts.occ, &parts.virt)?;
            let value = (normalized[idx] - lower[idx]) / parts.phase;
            if value != 0.0 {
                store.set(exc, value, Provenance::Iterative);
            }
        }
    }
    Ok(store)
}

/// All spin-conserving excitations out of the reference with ranks in
/// `ranks`, canonically ordered.
pub fn enumerate_excitations(
    reference: &Determinant,
    n_spatial: usize,
    ranks: std::ops::RangeInclusive<usize>,
) -> Vec<Excitation> {
    let occ = reference.occupied_list(n_spatial);
    let virt: Vec<usize> =
        (0..2 * n_spatial).filter(|&s| !reference.occupied(s)).collect();
    enumerate_excitations_between(&occ, &virt, ranks)
}

/// Spin-conserving excitations from the given occupied spin orbitals into
/// the given virtual spin orbitals, canonically ordered.
pub fn enumerate_excitations_between(
    occ: &[usize],
    virt: &[usize],
    ranks: std::ops::RangeInclusive<usize>,
) -> Vec<Excitation> {
    let mut out = Vec::new();
    for rank in ranks {
        if rank == 0 || rank > occ.len() || rank > virt.len() {
            continue;
        }
        for occ_pick in combinations(occ, rank) {
            let alpha_out = occ_pick.iter().filter(|&&s| is_alpha(s)).count();
            for virt_pick in combinations(virt, rank) {
                let alpha_in = virt_pick.iter().filter(|&&s| is_alpha(s)).count();
                if alpha_in == alpha_out {
                    out.push(
                        Excitation::new(&occ_pick, &virt_pick)
                            .expect("enumerated tuples are canonical"),
                    );
                }
            }
        }
    }
    out.sort();
    out
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack = vec![(0usize, Vec::with_capacity(k))];
    while let Some((start, cur)) = stack.pop() {
        if cur.len() == k {
            out.push(cur);
            continue;
        }
        // push in reverse so lexicographic order pops first
        let needed = k - cur.len();
        let last = items.len() - needed;
        for i in (start..=last).rev() {
            let mut next = cur.clone();
            next.push(items[i]);
            stack.push((i + 1, next));
        }
    }
    out
}
