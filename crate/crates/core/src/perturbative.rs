//! Order-by-order amplitude estimates driven by dressed Fock resolvents:
//! first-order singles/doubles, second-order wave-operator corrections
//! (including the triples background), and the external estimates consumed
//! by perturbative downfolding.
//!
//! Conventions. The zeroth-order Hamiltonian is the diagonal of the dressed
//! Fock operator of the store in play, so denominators are plain orbital
//! energy differences. First order: t_i^a = f_ai / (f_ii - f_aa) and
//! t_ij^ab = <ij||ab> / (f_ii + f_jj - f_aa - f_bb). Second order: the
//! wave-operator block R0 (V - E1) R0 V |ref> read off per excitation, which
//! for triples reduces to the single skeleton with two interaction vertices
//! (one- and two-body) joined by one resolvent line, first-order amplitudes
//! entering as the lower vertex. Quasi-degenerate denominators below the
//! configured floor are skipped and logged, never divided through.

use std::collections::BTreeMap;

use crate::active_space::ActiveSpace;
use crate::cluster::{enumerate_excitations, AmplitudeStore, Excitation, Provenance};
use crate::error::{Error, Result};
use crate::fock::{Determinant, SpinOrbitalBasis};
use crate::hamiltonian::{diagonal_element, fock_element, slater_condon_element, FockDiagonal};
use crate::integrals::IntegralStore;

/// Default floor under which a resolvent denominator is considered
/// quasi-degenerate (Hartree).
pub const DEFAULT_DGEN_TOL: f64 = 1e-6;

/// An excitation dropped because its denominator fell under the floor.
#[derive(Debug, Clone)]
pub struct SkipRecord {
    pub excitation: Excitation,
    pub denominator: f64,
}

impl std::fmt::Display for SkipRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SKIP {} denom={:.6e}", self.excitation, self.denominator)
    }
}

/// Amplitudes plus the degeneracy log of skipped excitations.
#[derive(Debug, Clone, Default)]
pub struct BackgroundResult {
    pub amplitudes: AmplitudeStore,
    pub skipped: Vec<SkipRecord>,
}

impl BackgroundResult {
    pub fn degeneracy_log(&self) -> String {
        let mut out = String::new();
        for s in &self.skipped {
            out.push_str(&s.to_string());
            out.push('\n');
        }
        out
    }
}

/// First-order singles and doubles over the requested excitation set.
pub fn first_order_sd(
    store: &IntegralStore,
    fock: &FockDiagonal,
    reference: &Determinant,
    targets: &[Excitation],
    dgen_tol: f64,
) -> Result<BackgroundResult> {
    let mut out = BackgroundResult::default();
    for exc in targets {
        let rank = exc.rank();
        if rank > 2 {
            return Err(Error::Config(format!(
                "first_order_sd only handles ranks 1 and 2, got {exc}"
            )));
        }
        let occ = exc.occ();
        let virt = exc.virt();
        let denominator = fock.denominator(&occ, &virt);
        if denominator.abs() < dgen_tol {
            out.skipped.push(SkipRecord { excitation: exc.clone(), denominator });
            continue;
        }
        let numerator = match rank {
            1 => fock_element(store, reference, virt[0], occ[0]),
            _ => store.so_antisym(virt[0], virt[1], occ[0], occ[1]),
        };
        let value = numerator / denominator;
        if value != 0.0 {
            out.amplitudes.set(exc.clone(), value, Provenance::PerturbativeBackground);
        }
    }
    Ok(out)
}

/// First-order CI coefficients c1 on determinants, keyed by determinant.
fn first_order_coefficients(
    store: &IntegralStore,
    fock: &FockDiagonal,
    basis: &SpinOrbitalBasis,
    dgen_tol: f64,
) -> Result<(BTreeMap<Determinant, f64>, BackgroundResult)> {
    let reference = basis.reference();
    let all_sd = enumerate_excitations(&reference, basis.n_spatial, 1..=2);
    let first = first_order_sd(store, fock, &reference, &all_sd, dgen_tol)?;
    let mut coeffs = BTreeMap::new();
    for (exc, entry) in first.amplitudes.iter() {
        if let Some((phase, det)) = exc.apply(&reference) {
            coeffs.insert(det, entry.value * phase);
        }
    }
    Ok((coeffs, first))
}

/// Second-order wave-operator amplitudes for the requested excitations:
/// t2 = <d| (V - E1) |psi1> / D_d divided out of the excitation phase.
/// Valid for any target rank up to 4 below the first-order manifold + 2.
pub fn second_order_block(
    store: &IntegralStore,
    fock: &FockDiagonal,
    basis: &SpinOrbitalBasis,
    targets: &[Excitation],
    dgen_tol: f64,
) -> Result<BackgroundResult> {
    let reference = basis.reference();
    let (c1, mut out) = first_order_coefficients(store, fock, basis, dgen_tol)?;
    let e0_ref = fock.configuration_energy(&reference, basis.n_spatial);
    let e1 = diagonal_element(store, &reference) - e0_ref;
    let mut second = AmplitudeStore::new();
    for exc in targets {
        let occ = exc.occ();
        let virt = exc.virt();
        let denominator = fock.denominator(&occ, &virt);
        if denominator.abs() < dgen_tol {
            out.skipped.push(SkipRecord { excitation: exc.clone(), denominator });
            continue;
        }
        let Some((phase, target)) = exc.apply(&reference) else { continue };
        let mut numerator = 0.0;
        for (det, &coeff) in &c1 {
            if *det == target {
                // diagonal V contribution: <d|V|d> - E1 with H0 removed
                let e0_d = fock.configuration_energy(det, basis.n_spatial);
                numerator += (diagonal_element(store, det) - e0_d - e1) * coeff;
            } else if target.excitation_rank(det) <= 2 {
                numerator += slater_condon_element(store, det, &target) * coeff;
            }
        }
        let value = numerator / denominator / phase;
        if value != 0.0 {
            second.set(exc.clone(), value, Provenance::PerturbativeBackground);
        }
    }
    out.amplitudes = second;
    Ok(out)
}

/// Second-order triples: the rank-3 block of the second-order wave operator,
/// i.e. the triples of R0 V R0 V |ref> divided by their denominators.
pub fn second_order_triples(
    store: &IntegralStore,
    fock: &FockDiagonal,
    basis: &SpinOrbitalBasis,
    targets: &[Excitation],
    dgen_tol: f64,
) -> Result<BackgroundResult> {
    for exc in targets {
        if exc.rank() != 3 {
            return Err(Error::Config(format!(
                "second_order_triples expects rank-3 targets, got {exc}"
            )));
        }
    }
    second_order_block(store, fock, basis, targets, dgen_tol)
}

/// External amplitude estimates T_ext^[n] for one active space: orders
/// accumulate, singles/doubles enter at order 1, triples join at order 2.
/// Internal excitations never appear.
pub fn external_order_n(
    store: &IntegralStore,
    basis: &SpinOrbitalBasis,
    space: &ActiveSpace,
    order: usize,
) -> Result<BackgroundResult> {
    if !(1..=2).contains(&order) {
        return Err(Error::Config(format!("external estimates support orders 1 and 2, got {order}")));
    }
    let reference = basis.reference();
    let fock = crate::hamiltonian::fock_diagonal(store, &reference);
    let external = |exc: &Excitation| !space.is_internal(&exc.occ(), &exc.virt());

    let sd: Vec<Excitation> = enumerate_excitations(&reference, basis.n_spatial, 1..=2)
        .into_iter()
        .filter(external)
        .collect();
    let mut result = first_order_sd(store, &fock, &reference, &sd, DEFAULT_DGEN_TOL)?;
    if order == 2 {
        let mut targets: Vec<Excitation> = sd.clone();
        targets.extend(
            enumerate_excitations(&reference, basis.n_spatial, 3..=3)
                .into_iter()
                .filter(external),
        );
        let second = second_order_block(store, &fock, basis, &targets, DEFAULT_DGEN_TOL)?;
        result.skipped.extend(second.skipped);
        for (exc, entry) in second.amplitudes.iter() {
            let base = result.amplitudes.get(exc).unwrap_or(0.0);
            result.amplitudes.set(
                exc.clone(),
                base + entry.value,
                Provenance::PerturbativeBackground,
            );
        }
    }
    Ok(result)
}

/// Which triples enter the background sea.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriplesScope {
    /// Every triple not internal to any flow space.
    FullComplement,
    /// Only triples whose spatial support spans more than one flow space,
    /// i.e. excitations correlating electrons from distinct active spaces.
    CrossSpaceOnly,
}

/// The sea of second-order triples not captured by any flow space.
pub fn sea_triples(
    store: &IntegralStore,
    basis: &SpinOrbitalBasis,
    spaces: &[ActiveSpace],
    scope: TriplesScope,
    dgen_tol: f64,
) -> Result<BackgroundResult> {
    let reference = basis.reference();
    let fock = crate::hamiltonian::fock_diagonal(store, &reference);
    let targets: Vec<Excitation> = enumerate_excitations(&reference, basis.n_spatial, 3..=3)
        .into_iter()
        .filter(|exc| {
            let occ = exc.occ();
            let virt = exc.virt();
            let internal_somewhere = spaces.iter().any(|s| s.is_internal(&occ, &virt));
            if internal_somewhere {
                return false;
            }
            match scope {
                TriplesScope::FullComplement => true,
                TriplesScope::CrossSpaceOnly => {
                    // drop triples fully hosted by one space's orbital set
                    !spaces.iter().any(|s| {
                        occ.iter().chain(virt.iter()).all(|&so| s.contains_spin_orbital(so))
                    })
                }
            }
        })
        .collect();
    second_order_triples(store, &fock, basis, &targets, dgen_tol)
}

/// Second-order energy from the first-order manifold:
/// E(2) = sum over unique singles and doubles of numerator^2 / D.
pub fn e2_energy(store: &IntegralStore, basis: &SpinOrbitalBasis, dgen_tol: f64) -> Result<f64> {
    let reference = basis.reference();
    let fock = crate::hamiltonian::fock_diagonal(store, &reference);
    let targets = enumerate_excitations(&reference, basis.n_spatial, 1..=2);
    let first = first_order_sd(store, &fock, &reference, &targets, dgen_tol)?;
    if !first.skipped.is_empty() {
        return Err(Error::DegenerateDenominator(first.skipped[0].denominator));
    }
    let mut e2 = 0.0;
    for (exc, entry) in first.amplitudes.iter() {
        let d = fock.denominator(&exc.occ(), &exc.virt());
        e2 += entry.value * entry.value * d;
    }
    Ok(e2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::fock_diagonal;
    use crate::synthetic::random_store;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_two_body_canonical_orbitals_gives_zero_amplitudes() {
        let mut store = IntegralStore::empty(3, 2, 0);
        store.set_h(0, 0, -1.0);
        store.set_h(1, 1, 0.2);
        store.set_h(2, 2, 0.9);
        let basis = SpinOrbitalBasis::new(3, 1, 1).unwrap();
        let reference = basis.reference();
        let fock = fock_diagonal(&store, &reference);
        let targets = enumerate_excitations(&reference, 3, 1..=2);
        let r = first_order_sd(&store, &fock, &reference, &targets, 1e-6).unwrap();
        assert!(r.amplitudes.is_empty());
        assert!(r.skipped.is_empty());
    }

    #[test]
    fn single_closed_form_double_amplitude() {
        // one nonzero antisymmetrized element with a known Fock diagonal
        let mut store = IntegralStore::empty(2, 2, 0);
        store.set_h(0, 0, -1.0);
        store.set_h(1, 1, 0.5);
        store.set_g(0, 1, 0, 1, 0.2); // (01|01): exchange-type element
        let basis = SpinOrbitalBasis::new(2, 1, 1).unwrap();
        let reference = basis.reference();
        let fock = fock_diagonal(&store, &reference);
        // opposite-spin double 0a 0b -> 1a 1b
        let exc = Excitation::new(&[0, 1], &[2, 3]).unwrap();
        let r = first_order_sd(&store, &fock, &reference, &[exc.clone()], 1e-6).unwrap();
        let num = store.so_antisym(2, 3, 0, 1);
        let den = fock.denominator(&[0, 1], &[2, 3]);
        assert!((r.amplitudes.get(&exc).unwrap() - num / den).abs() < 1e-14);
    }

    #[test]
    fn degenerate_denominator_is_skipped_and_logged() {
        let mut store = IntegralStore::empty(2, 2, 0);
        store.set_h(0, 0, 0.3);
        store.set_h(1, 1, 0.3); // degenerate orbitals
        let basis = SpinOrbitalBasis::new(2, 1, 1).unwrap();
        let reference = basis.reference();
        let fock = fock_diagonal(&store, &reference);
        let exc = Excitation::new(&[0], &[2]).unwrap();
        let r = first_order_sd(&store, &fock, &reference, &[exc], 1e-6).unwrap();
        assert_eq!(r.skipped.len(), 1);
        assert!(r.degeneracy_log().starts_with("SKIP 1 0 -> 2 denom="));
    }

    #[test]
    fn zero_two_body_gives_zero_triples() {
        let mut store = IntegralStore::empty(3, 4, 0);
        for p in 0..3 {
            store.set_h(p, p, -1.0 + p as f64);
        }
        let basis = SpinOrbitalBasis::new(3, 2, 2).unwrap();
        let reference = basis.reference();
        let fock = fock_diagonal(&store, &reference);
        let triples = enumerate_excitations(&reference, 3, 3..=3);
        let r = second_order_triples(&store, &fock, &basis, &triples, 1e-6).unwrap();
        assert!(r.amplitudes.is_empty());
    }

    #[test]
    fn zero_first_order_means_zero_triples() {
        // diagonal one-body only: first-order manifold is empty, so the
        // triples diagram has no lower vertex to contract with
        let mut store = IntegralStore::empty(4, 4, 0);
        for p in 0..4 {
            store.set_h(p, p, -2.0 + 0.7 * p as f64);
        }
        let basis = SpinOrbitalBasis::new(4, 2, 2).unwrap();
        let reference = basis.reference();
        let fock = fock_diagonal(&store, &reference);
        let (c1, _) = first_order_coefficients(&store, &fock, &basis, 1e-6).unwrap();
        assert!(c1.is_empty());
        let triples = enumerate_excitations(&reference, 4, 3..=3);
        let r = second_order_triples(&store, &fock, &basis, &triples, 1e-6).unwrap();
        assert!(r.amplitudes.is_empty());
    }

    #[test]
    fn external_estimates_never_contain_internal_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let store = random_store(4, 4, 0.15, &mut rng);
        let basis = SpinOrbitalBasis::new(4, 2, 2).unwrap();
        let spaces = crate::active_space::enumerate_spaces(&basis, 1, 1).unwrap();
        for space in &spaces {
            for order in 1..=2 {
                let r = external_order_n(&store, &basis, space, order).unwrap();
                for key in r.amplitudes.keys() {
                    assert!(!space.is_internal(&key.occ(), &key.virt()));
                }
            }
        }
    }

    #[test]
    fn order_one_equals_first_order_restricted_to_external_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let store = random_store(4, 4, 0.1, &mut rng);
        let basis = SpinOrbitalBasis::new(4, 2, 2).unwrap();
        let reference = basis.reference();
        let fock = fock_diagonal(&store, &reference);
        let space = &crate::active_space::enumerate_spaces(&basis, 1, 1).unwrap()[0];
        let ext = external_order_n(&store, &basis, space, 1).unwrap();
        let all = first_order_sd(
            &store,
            &fock,
            &reference,
            &enumerate_excitations(&reference, 4, 1..=2),
            DEFAULT_DGEN_TOL,
        )
        .unwrap();
        let filtered = all
            .amplitudes
            .filtered(|k| !space.is_internal(&k.occ(), &k.virt()));
        assert_eq!(ext.amplitudes, filtered);
    }

    #[test]
    fn sea_excludes_space_internal_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let store = random_store(4, 4, 0.15, &mut rng);
        let basis = SpinOrbitalBasis::new(4, 2, 2).unwrap();
        let spaces = crate::active_space::enumerate_spaces(&basis, 2, 2).unwrap();
        // the single (2,2) space covers everything: the sea is empty
        let r = sea_triples(&store, &basis, &spaces, TriplesScope::FullComplement, 1e-6).unwrap();
        assert!(r.amplitudes.is_empty());

        let spaces11 = crate::active_space::enumerate_spaces(&basis, 1, 1).unwrap();
        let r2 =
            sea_triples(&store, &basis, &spaces11, TriplesScope::FullComplement, 1e-6).unwrap();
        // (1,1) spaces hold no triples at all, so the sea is every triple
        let n_triples = enumerate_excitations(&basis.reference(), 4, 3..=3).len();
        assert_eq!(r2.amplitudes.len(), n_triples);
    }
}
