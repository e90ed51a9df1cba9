//! Seeded random model Hamiltonians for verification suites and tests.
//!
//! The generator spreads orbital energies so that resolvent denominators stay
//! away from zero, and scales two-body interactions by `v_scale` to dial the
//! correlation strength.

use rand::Rng;

use crate::integrals::IntegralStore;

/// Random symmetric integral store with nondegenerate orbital energies.
///
/// `v_scale` multiplies every two-body element; values around 0.05-0.2 give
/// weakly correlated ground states dominated by the reference determinant.
pub fn random_store<R: Rng>(n_orb: usize, n_elec: usize, v_scale: f64, rng: &mut R) -> IntegralStore {
    let mut store = IntegralStore::empty(n_orb, n_elec, 0);
    for p in 0..n_orb {
        let jitter: f64 = rng.random_range(-0.05..0.05);
        store.set_h(p, p, -2.0 + 0.9 * p as f64 + jitter);
        for q in 0..p {
            let off: f64 = rng.random_range(-1.0..1.0);
            store.set_h(p, q, 0.02 * off);
        }
    }
    for p in 0..n_orb {
        for q in 0..=p {
            for r in 0..=p {
                for s in 0..=r {
                    if pair_rank(r, s) > pair_rank(p, q) {
                        continue;
                    }
                    let v: f64 = rng.random_range(-1.0..1.0);
                    store.set_g(p, q, r, s, v_scale * v);
                }
            }
        }
    }
    store
}

fn pair_rank(p: usize, q: usize) -> usize {
    let (a, b) = if p >= q { (p, q) } else { (q, p) };
    a * (a + 1) / 2 + b
}

/// Two copies of `fragment` with zero coupling between them, orbitals ordered
/// so both fragments' occupied orbitals come first. Electron counts double.
///
/// Orbital order: [A-occupied, B-occupied, A-virtual, B-virtual], where the
/// fragment's occupied spatial orbitals are its first `n_occ`.
pub fn duplicate_noninteracting(fragment: &IntegralStore) -> IntegralStore {
    let nf = fragment.n_orb;
    let n_occ = fragment.n_elec / 2;
    let n_virt = nf - n_occ;
    let mut dup = IntegralStore::empty(2 * nf, 2 * fragment.n_elec, 2 * fragment.ms2);
    dup.e_core = 2.0 * fragment.e_core;
    // map fragment orbital p of copy c into the dimer orbital index
    let place = |p: usize, copy: usize| -> usize {
        if p < n_occ {
            copy * n_occ + p
        } else {
            2 * n_occ + copy * n_virt + (p - n_occ)
        }
    };
    for copy in 0..2 {
        for p in 0..nf {
            for q in 0..=p {
                let v = fragment.h(p, q);
                if v != 0.0 {
                    dup.set_h(place(p, copy), place(q, copy), v);
                }
            }
        }
        for p in 0..nf {
            for q in 0..nf {
                for r in 0..nf {
                    for s in 0..nf {
                        let v = fragment.g(p, q, r, s);
                        if v != 0.0 {
                            dup.set_g(
                                place(p, copy),
                                place(q, copy),
                                place(r, copy),
                                place(s, copy),
                                v,
                            );
                        }
                    }
                }
            }
        }
    }
    dup
}
