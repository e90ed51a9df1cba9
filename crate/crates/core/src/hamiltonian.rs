//! Hamiltonian matrices over determinant bases via Slater-Condon rules, and
//! dressed Fock diagonals for perturbative denominators.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fock::{excitation_between, Determinant, SectorBasis};
use crate::integrals::IntegralStore;
use crate::linop::LinOp;

/// Dense symmetric Hamiltonian over an ordered determinant basis.
#[derive(Debug, Clone)]
pub struct HamiltonianMatrix {
    pub basis: Arc<SectorBasis>,
    pub matrix: DMatrix<f64>,
}

fn check_orbital_range(store: &IntegralStore, basis: &SectorBasis) -> Result<()> {
    let limit = if store.n_orb >= 64 { u64::MAX } else { (1u64 << store.n_orb) - 1 };
    for d in &basis.dets {
        if d.alpha & !limit != 0 || d.beta & !limit != 0 {
            return Err(Error::Dimension(format!(
                "determinant {d} occupies orbitals beyond n_orb = {}",
                store.n_orb
            )));
        }
    }
    Ok(())
}

/// Diagonal element <d|H|d>.
pub fn diagonal_element(store: &IntegralStore, d: &Determinant) -> f64 {
    let occ = d.occupied_list(store.n_orb);
    let mut e = store.e_core;
    for &p in &occ {
        e += store.so_h(p, p);
    }
    for (k, &p) in occ.iter().enumerate() {
        for &q in occ.iter().skip(k + 1) {
            e += store.so_antisym(p, q, p, q);
        }
    }
    e
}

/// Off-diagonal element <to|H|from> by the Slater-Condon rules. Zero whenever
/// the excitation rank exceeds two.
pub fn slater_condon_element(
    store: &IntegralStore,
    from: &Determinant,
    to: &Determinant,
) -> f64 {
    if from == to {
        return diagonal_element(store, from);
    }
    let parts = match excitation_between(from, to, 2, store.n_orb) {
        Ok(Some(p)) => p,
        _ => return 0.0,
    };
    match parts.rank {
        1 => {
            let i = parts.occ[0];
            let a = parts.virt[0];
            let mut v = store.so_h(a, i);
            for &r in &from.occupied_list(store.n_orb) {
                if r != i {
                    v += store.so_antisym(a, r, i, r);
                }
            }
            parts.phase * v
        }
        2 => {
            let (i, j) = (parts.occ[0], parts.occ[1]);
            let (a, b) = (parts.virt[0], parts.virt[1]);
            parts.phase * store.so_antisym(a, b, i, j)
        }
        _ => 0.0,
    }
}

/// Build the dense Hamiltonian matrix over a one-sector basis.
pub fn build_matrix(store: &IntegralStore, basis: Arc<SectorBasis>) -> Result<HamiltonianMatrix> {
    check_orbital_range(store, &basis)?;
    let n = basis.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = diagonal_element(store, &basis.dets[i]);
        for j in (i + 1)..n {
            let v = slater_condon_element(store, &basis.dets[j], &basis.dets[i]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(HamiltonianMatrix { basis, matrix: m })
}

/// Dressed Fock diagonal f_pp over spin orbitals:
/// f_pp = h_pp + sum over reference-occupied I of <pI||pI>.
#[derive(Debug, Clone)]
pub struct FockDiagonal {
    pub values: Vec<f64>,
}

impl FockDiagonal {
    /// Orbital-energy sum of a determinant: the H0 diagonal used by
    /// resolvent denominators.
    pub fn configuration_energy(&self, d: &Determinant, n_spatial: usize) -> f64 {
        d.occupied_list(n_spatial).iter().map(|&p| self.values[p]).sum()
    }

    /// Excitation denominator sum(f_occ) - sum(f_virt).
    pub fn denominator(&self, occ: &[usize], virt: &[usize]) -> f64 {
        let o: f64 = occ.iter().map(|&p| self.values[p]).sum();
        let v: f64 = virt.iter().map(|&p| self.values[p]).sum();
        o - v
    }
}

pub fn fock_diagonal(store: &IntegralStore, reference: &Determinant) -> FockDiagonal {
    let occ = reference.occupied_list(store.n_orb);
    let n_so = 2 * store.n_orb;
    let mut values = Vec::with_capacity(n_so);
    for p in 0..n_so {
        let mut f = store.so_h(p, p);
        for &i in &occ {
            f += store.so_antisym(p, i, p, i);
        }
        values.push(f);
    }
    FockDiagonal { values }
}

/// Off-diagonal dressed Fock element f_pq = h_pq + sum_I <pI||qI>.
pub fn fock_element(store: &IntegralStore, reference: &Determinant, p: usize, q: usize) -> f64 {
    let mut f = store.so_h(p, q);
    for &i in &reference.occupied_list(store.n_orb) {
        f += store.so_antisym(p, i, q, i);
    }
    f
}

/// Matrix-free Hamiltonian application over a sector basis. Connected
/// determinants are generated directly, so no dense matrix is stored.
#[derive(Debug, Clone)]
pub struct HamiltonianOp {
    pub store: Arc<IntegralStore>,
    pub basis: Arc<SectorBasis>,
}

impl HamiltonianOp {
    pub fn new(store: Arc<IntegralStore>, basis: Arc<SectorBasis>) -> Result<Self> {
        check_orbital_range(&store, &basis)?;
        Ok(HamiltonianOp { store, basis })
    }
}

impl LinOp for HamiltonianOp {
    fn dim(&self) -> usize {
        self.basis.len()
    }

    fn apply_add(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        let n_orb = self.store.n_orb;
        let n_so = 2 * n_orb;
        for (j, det) in self.basis.dets.iter().enumerate() {
            let c = v[j];
            if c == 0.0 {
                continue;
            }
            out[j] += diagonal_element(&self.store, det) * c;
            let occ = det.occupied_list(n_orb);
            let virt: Vec<usize> = (0..n_so).filter(|&s| !det.occupied(s)).collect();
            // singles
            for &i in &occ {
                for &a in &virt {
                    if i % 2 != a % 2 {
                        continue;
                    }
                    let (s1, d1) = det.annihilate(i).unwrap();
                    if let Some((s2, d2)) = d1.create(a) {
                        if let Some(row) = self.basis.position(&d2) {
                            let mut el = self.store.so_h(a, i);
                            for &r in &occ {
                                if r != i {
                                    el += self.store.so_antisym(a, r, i, r);
                                }
                            }
                            out[row] += s1 * s2 * el * c;
                        }
                    }
                }
            }
            // doubles
            for (ki, &i) in occ.iter().enumerate() {
                for &jj in occ.iter().skip(ki + 1) {
                    for (ka, &a) in virt.iter().enumerate() {
                        for &b in virt.iter().skip(ka + 1) {
                            let spin_in = (i % 2) + (jj % 2);
                            let spin_out = (a % 2) + (b % 2);
                            if spin_in != spin_out {
                                continue;
                            }
                            let (s1, d1) = det.annihilate(i).unwrap();
                            let Some((s2, d2)) = d1.annihilate(jj) else { continue };
                            let Some((s3, d3)) = d2.create(b) else { continue };
                            let Some((s4, d4)) = d3.create(a) else { continue };
                            if let Some(row) = self.basis.position(&d4) {
                                let el = self.store.so_antisym(a, b, i, jj);
                                out[row] += s1 * s2 * s3 * s4 * el * c;
                            }
                        }
                    }
                }
            }
        }
    }

    fn norm_bound(&self) -> f64 {
        // crude but safe: max diagonal magnitude plus total interaction mass
        let n = self.store.n_orb;
        let mut bound = 0.0f64;
        for d in &self.basis.dets {
            bound = bound.max(diagonal_element(&self.store, d).abs());
        }
        let mut mass = 0.0;
        for p in 0..n {
            for q in 0..n {
                mass += self.store.h(p, q).abs();
                for r in 0..n {
                    for s in 0..n {
                        mass += 0.5 * self.store.g(p, q, r, s).abs();
                    }
                }
            }
        }
        bound + 4.0 * mass
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::SpinOrbitalBasis;

    #[test]
    fn diagonal_one_body_reference_energy() {
        let mut store = IntegralStore::empty(3, 4, 0);
        store.set_h(0, 0, -2.0);
        store.set_h(1, 1, -1.0);
        store.set_h(2, 2, 0.5);
        store.e_core = 0.75;
        let b = SpinOrbitalBasis::new(3, 2, 2).unwrap();
        let r = b.reference();
        // reference occupies spatial 0 and 1 with both spins
        let expect = 0.75 + 2.0 * (-2.0) + 2.0 * (-1.0);
        assert!((diagonal_element(&store, &r) - expect).abs() < 1e-14);
    }

    #[test]
    fn rank_three_pairs_vanish() {
        let store = IntegralStore::empty(4, 4, 0);
        let d1 = Determinant { alpha: 0b0011, beta: 0b0011 };
        let d2 = Determinant { alpha: 0b1100, beta: 0b0110 };
        assert_eq!(d1.excitation_rank(&d2), 3);
        assert_eq!(slater_condon_element(&store, &d1, &d2), 0.0);
    }

    #[test]
    fn fock_diagonal_reduces_to_h_for_one_body() {
        let mut store = IntegralStore::empty(3, 2, 0);
        store.set_h(0, 0, -1.5);
        store.set_h(1, 1, -0.25);
        store.set_h(2, 2, 0.9);
        let b = SpinOrbitalBasis::new(3, 1, 1).unwrap();
        let f = fock_diagonal(&store, &b.reference());
        for p in 0..6 {
            assert!((f.values[p] - store.so_h(p, p)).abs() < 1e-15);
        }
    }

    #[test]
    fn fock_diagonal_empty_reference_is_bare_h() {
        let mut store = IntegralStore::empty(2, 0, 0);
        store.set_h(0, 0, 0.3);
        store.set_h(1, 1, 0.8);
        store.set_g(0, 0, 1, 1, 0.7);
        let f = fock_diagonal(&store, &Determinant::vacuum());
        assert_eq!(f.values, vec![0.3, 0.3, 0.8, 0.8]);
    }

    #[test]
    fn build_matrix_rejects_out_of_range_orbitals() {
        let store = IntegralStore::empty(2, 2, 0);
        let b = SpinOrbitalBasis::new(3, 1, 1).unwrap();
        let basis = Arc::new(SectorBasis::for_sector(&b, 1, 1).unwrap());
        assert!(build_matrix(&store, basis).is_err());
    }

    #[test]
    fn lazy_apply_matches_dense() {
        use crate::synthetic::random_store;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let store = Arc::new(random_store(3, 4, 0.2, &mut rng));
        let b = SpinOrbitalBasis::new(3, 2, 2).unwrap();
        let basis = Arc::new(SectorBasis::for_sector(&b, 2, 2).unwrap());
        let dense = build_matrix(&store, basis.clone()).unwrap();
        let lazy = HamiltonianOp::new(store, basis.clone()).unwrap();
        for k in 0..basis.len() {
            let mut v = DVector::zeros(basis.len());
            v[k] = 1.0;
            let a = dense.matrix.apply(&v);
            let b2 = lazy.apply(&v);
            assert!((a - b2).norm() < 1e-12);
        }
    }
}
