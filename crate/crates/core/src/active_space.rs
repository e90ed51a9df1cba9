//! SES-generated active spaces inside a target space: enumeration, CAS
//! determinant bases, internal/external classification, and projectors.
//!
//! An active space is a closed-shell choice of occupied and virtual spatial
//! orbitals; both spins of a chosen spatial orbital are active, so the
//! generated complete active space is an (ne, no) CAS with ne = 2 * n_occ_pick
//! and no = n_occ_pick + n_virt_pick.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fock::{
    alpha_so, beta_so, masks_with_popcount, Determinant, SectorBasis, SpinOrbitalBasis,
};

/// Chosen occupied and virtual spatial orbitals of one SES active space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSpace {
    pub id: usize,
    pub occ_spatial: Vec<usize>,
    pub virt_spatial: Vec<usize>,
    /// Bitmask over spin orbitals belonging to the space.
    active_so_mask: u64,
}

impl ActiveSpace {
    pub fn new(id: usize, occ_spatial: Vec<usize>, virt_spatial: Vec<usize>) -> Result<Self> {
        for o in &occ_spatial {
            if virt_spatial.contains(o) {
                return Err(Error::Config(format!(
                    "orbital {o} appears in both occupied and virtual picks"
                )));
            }
        }
        let mut mask = 0u64;
        for &p in occ_spatial.iter().chain(virt_spatial.iter()) {
            mask |= 1 << alpha_so(p);
            mask |= 1 << beta_so(p);
        }
        Ok(ActiveSpace { id, occ_spatial, virt_spatial, active_so_mask: mask })
    }

    /// Number of active electrons for a closed-shell reference.
    pub fn n_active_electrons(&self) -> usize {
        2 * self.occ_spatial.len()
    }

    pub fn n_active_orbitals(&self) -> usize {
        self.occ_spatial.len() + self.virt_spatial.len()
    }

    pub fn contains_spin_orbital(&self, so: usize) -> bool {
        self.active_so_mask >> so & 1 == 1
    }

    /// True when every index of the excitation lies in the active space.
    pub fn is_internal(&self, occ: &[usize], virt: &[usize]) -> bool {
        occ.iter().chain(virt.iter()).all(|&so| self.contains_spin_orbital(so))
    }

    /// `occ:[..],virt:[..]` form used in trace files.
    pub fn label(&self) -> String {
        let j = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        format!("occ:[{}],virt:[{}]", j(&self.occ_spatial), j(&self.virt_spatial))
    }
}

/// All C(n_occ, n_occ_pick) * C(n_virt, n_virt_pick) active spaces of the
/// template, in deterministic lexicographic order with ids 0, 1, ...
pub fn enumerate_spaces(
    basis: &SpinOrbitalBasis,
    n_occ_pick: usize,
    n_virt_pick: usize,
) -> Result<Vec<ActiveSpace>> {
    if basis.n_alpha != basis.n_beta {
        return Err(Error::Config(format!(
            "active-space enumeration requires a closed-shell reference, got ({}, {})",
            basis.n_alpha, basis.n_beta
        )));
    }
    let n_occ = basis.n_alpha;
    let n_virt = basis.n_spatial - n_occ;
    if n_occ_pick > n_occ || n_virt_pick > n_virt {
        return Err(Error::Config(format!(
            "pick ({n_occ_pick},{n_virt_pick}) exceeds available ({n_occ},{n_virt})"
        )));
    }
    let occ_combos = masks_with_popcount(n_occ, n_occ_pick);
    let virt_combos = masks_with_popcount(n_virt, n_virt_pick);
    let mut out = Vec::with_capacity(occ_combos.len() * virt_combos.len());
    let mut id = 0;
    for &om in &occ_combos {
        for &vm in &virt_combos {
            let occ: Vec<usize> = (0..n_occ).filter(|&p| om >> p & 1 == 1).collect();
            let virt: Vec<usize> =
                (0..n_virt).filter(|&p| vm >> p & 1 == 1).map(|p| n_occ + p).collect();
            out.push(ActiveSpace::new(id, occ, virt)?);
            id += 1;
        }
    }
    Ok(out)
}

/// CAS determinant basis of an active space: the reference first, then all
/// other determinants reachable by redistributing the active electrons over
/// the active spin orbitals, in canonical (alpha, beta) order.
#[derive(Debug, Clone)]
pub struct CasBasis {
    pub space: ActiveSpace,
    pub dets: Vec<Determinant>,
    pub reference: Determinant,
}

pub fn cas_basis(basis: &SpinOrbitalBasis, space: &ActiveSpace) -> Result<CasBasis> {
    if basis.n_alpha != basis.n_beta {
        return Err(Error::Config("CAS construction requires a closed-shell reference".into()));
    }
    let reference = basis.reference();
    let active: Vec<usize> =
        space.occ_spatial.iter().chain(space.virt_spatial.iter()).copied().collect();
    let n_act = active.len();
    let k = space.occ_spatial.len();
    let mut frozen = reference;
    for &p in &space.occ_spatial {
        frozen.alpha &= !(1u64 << p);
        frozen.beta &= !(1u64 << p);
    }
    let combos = masks_with_popcount(n_act, k);
    let mut dets = Vec::with_capacity(combos.len() * combos.len());
    for &am in &combos {
        for &bm in &combos {
            let mut d = frozen;
            for (slot, &p) in active.iter().enumerate() {
                if am >> slot & 1 == 1 {
                    d.alpha |= 1 << p;
                }
                if bm >> slot & 1 == 1 {
                    d.beta |= 1 << p;
                }
            }
            dets.push(d);
        }
    }
    dets.sort();
    let ref_pos = dets
        .iter()
        .position(|d| *d == reference)
        .expect("reference is always a CAS member");
    dets.swap(0, ref_pos);
    dets[1..].sort();
    Ok(CasBasis { space: space.clone(), dets, reference })
}

impl CasBasis {
    pub fn len(&self) -> usize {
        self.dets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dets.is_empty()
    }

    /// Indices of the CAS determinants inside a full-sector basis.
    pub fn sector_positions(&self, sector: &SectorBasis) -> Result<Vec<usize>> {
        self.dets
            .iter()
            .map(|d| {
                sector.position(d).ok_or_else(|| {
                    Error::Dimension(format!("CAS determinant {d} missing from sector basis"))
                })
            })
            .collect()
    }

    /// A `SectorBasis` over the CAS determinants themselves.
    pub fn as_sector_basis(&self, n_spatial: usize) -> Arc<SectorBasis> {
        Arc::new(SectorBasis::new(n_spatial, self.dets.clone()))
    }
}

/// Diagonal projector matrices (P, Q_int, Q_ext) over a full-sector basis.
pub fn projectors(
    sector: &SectorBasis,
    cas: &CasBasis,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = sector.len();
    let mut p = DMatrix::zeros(n, n);
    let mut q_int = DMatrix::zeros(n, n);
    let mut q_ext = DMatrix::zeros(n, n);
    let ref_pos = sector
        .position(&cas.reference)
        .ok_or_else(|| Error::Dimension("reference not in sector".into()))?;
    p[(ref_pos, ref_pos)] = 1.0;
    let members: std::collections::HashSet<usize> =
        cas.sector_positions(sector)?.into_iter().collect();
    for i in 0..n {
        if i == ref_pos {
            continue;
        }
        if members.contains(&i) {
            q_int[(i, i)] = 1.0;
        } else {
            q_ext[(i, i)] = 1.0;
        }
    }
    Ok((p, q_int, q_ext))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{enumerate_sector, excitation_between};

    fn basis45() -> SpinOrbitalBasis {
        // 4 occupied + 5 virtual spatial orbitals, closed shell
        SpinOrbitalBasis::new(9, 4, 4).unwrap()
    }

    #[test]
    fn sixty_spaces_for_four_occ_five_virt() {
        let spaces = enumerate_spaces(&basis45(), 2, 2).unwrap();
        assert_eq!(spaces.len(), 60);
        for (i, s) in spaces.iter().enumerate() {
            assert_eq!(s.id, i);
        }
    }

    #[test]
    fn pick_zero_gives_reference_only_space() {
        let b = SpinOrbitalBasis::new(4, 2, 2).unwrap();
        let spaces = enumerate_spaces(&b, 0, 0).unwrap();
        assert_eq!(spaces.len(), 1);
        let cas = cas_basis(&b, &spaces[0]).unwrap();
        assert_eq!(cas.len(), 1);
        assert_eq!(cas.dets[0], b.reference());
    }

    #[test]
    fn enumeration_is_stable_and_exhaustive() {
        let b = SpinOrbitalBasis::new(4, 2, 2).unwrap();
        let spaces = enumerate_spaces(&b, 1, 1).unwrap();
        assert_eq!(spaces.len(), 4);
        let expect: Vec<(Vec<usize>, Vec<usize>)> = vec![
            (vec![0], vec![2]),
            (vec![0], vec![3]),
            (vec![1], vec![2]),
            (vec![1], vec![3]),
        ];
        for (s, (o, v)) in spaces.iter().zip(expect.iter()) {
            assert_eq!(&s.occ_spatial, o);
            assert_eq!(&s.virt_spatial, v);
        }
        assert_eq!(spaces, enumerate_spaces(&b, 1, 1).unwrap());
    }

    #[test]
    fn pick_too_large_is_error() {
        let b = SpinOrbitalBasis::new(4, 2, 2).unwrap();
        assert!(enumerate_spaces(&b, 3, 1).is_err());
        assert!(enumerate_spaces(&b, 1, 3).is_err());
    }

    #[test]
    fn cas_dimensions() {
        let b = basis45();
        let spaces = enumerate_spaces(&b, 2, 2).unwrap();
        let cas = cas_basis(&b, &spaces[0]).unwrap();
        assert_eq!(cas.len(), 36); // C(4,2)^2
        assert_eq!(cas.dets[0], b.reference());

        let b2 = SpinOrbitalBasis::new(4, 2, 2).unwrap();
        let spaces2 = enumerate_spaces(&b2, 1, 1).unwrap();
        let cas2 = cas_basis(&b2, &spaces2[0]).unwrap();
        assert_eq!(cas2.len(), 4); // C(2,1)^2
    }

    #[test]
    fn cas_members_differ_from_reference_only_inside_active_orbitals() {
        let b = SpinOrbitalBasis::new(5, 2, 2).unwrap();
        let spaces = enumerate_spaces(&b, 2, 2).unwrap();
        for space in &spaces {
            let cas = cas_basis(&b, space).unwrap();
            for d in &cas.dets {
                let e = excitation_between(&b.reference(), d, 8, 5).unwrap().unwrap();
                assert!(space.is_internal(&e.occ, &e.virt), "{d} not internal to {space:?}");
            }
        }
    }

    #[test]
    fn classification_splits_excitations() {
        let b = SpinOrbitalBasis::new(4, 2, 2).unwrap();
        let space = &enumerate_spaces(&b, 1, 1).unwrap()[0]; // occ {0}, virt {2}
        assert!(space.is_internal(&[alpha_so(0)], &[alpha_so(2)]));
        assert!(!space.is_internal(&[alpha_so(0)], &[alpha_so(3)]));
        assert!(!space.is_internal(&[alpha_so(1)], &[alpha_so(2)]));
    }

    #[test]
    fn projector_completeness() {
        let b = SpinOrbitalBasis::new(4, 2, 2).unwrap();
        let sector = SectorBasis::new(4, enumerate_sector(&b, 2, 2).unwrap());
        for space in enumerate_spaces(&b, 1, 1).unwrap() {
            let cas = cas_basis(&b, &space).unwrap();
            let (p, qi, qe) = projectors(&sector, &cas).unwrap();
            let sum = &p + &qi + &qe;
            assert_eq!(sum, DMatrix::identity(sector.len(), sector.len()));
            assert_eq!(&p * &p, p.clone());
            assert_eq!(&p * &qi, DMatrix::zeros(sector.len(), sector.len()));
        }
    }
}
