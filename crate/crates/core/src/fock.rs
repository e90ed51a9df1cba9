//! Determinants, second-quantized operator strings, and state vectors.
//!
//! Spin orbitals interleave spins over spatial orbitals: spatial `p` maps to
//! spin orbitals `2p` (alpha) and `2p+1` (beta). A determinant is the ordered
//! product of creation operators over its occupied spin orbitals, ascending
//! index applied to the vacuum, which fixes every fermionic phase below.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Spatial-orbital count plus the electron counts of the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpinOrbitalBasis {
    pub n_spatial: usize,
    pub n_alpha: usize,
    pub n_beta: usize,
}

impl SpinOrbitalBasis {
    pub fn new(n_spatial: usize, n_alpha: usize, n_beta: usize) -> Result<Self> {
        if n_spatial == 0 || n_spatial > 32 {
            return Err(Error::InvalidSector(format!(
                "n_spatial = {n_spatial} outside supported range 1..=32"
            )));
        }
        if n_alpha > n_spatial || n_beta > n_spatial {
            return Err(Error::InvalidSector(format!(
                "electron counts ({n_alpha},{n_beta}) exceed {n_spatial} spatial orbitals"
            )));
        }
        Ok(Self { n_spatial, n_alpha, n_beta })
    }

    pub fn n_spin_orbitals(&self) -> usize {
        2 * self.n_spatial
    }

    /// Reference determinant occupying the lowest orbitals of each spin.
    pub fn reference(&self) -> Determinant {
        Determinant {
            alpha: mask_lowest(self.n_alpha),
            beta: mask_lowest(self.n_beta),
        }
    }

    /// Spin orbitals occupied in the reference, ascending.
    pub fn occupied_spin_orbitals(&self) -> Vec<usize> {
        self.reference().occupied_list(self.n_spatial)
    }

    /// Spin orbitals empty in the reference, ascending.
    pub fn virtual_spin_orbitals(&self) -> Vec<usize> {
        let r = self.reference();
        (0..self.n_spin_orbitals()).filter(|&s| !r.occupied(s)).collect()
    }
}

fn mask_lowest(n: usize) -> u64 {
    if n == 0 {
        0
    } else {
        (1u64 << n) - 1
    }
}

pub fn spatial_of(spin_orbital: usize) -> usize {
    spin_orbital / 2
}

pub fn is_alpha(spin_orbital: usize) -> bool {
    spin_orbital % 2 == 0
}

pub fn alpha_so(spatial: usize) -> usize {
    2 * spatial
}

pub fn beta_so(spatial: usize) -> usize {
    2 * spatial + 1
}

/// Occupation bitmasks over spatial orbitals, one mask per spin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Determinant {
    pub alpha: u64,
    pub beta: u64,
}

impl Determinant {
    pub fn vacuum() -> Self {
        Determinant { alpha: 0, beta: 0 }
    }

    pub fn n_alpha(&self) -> usize {
        self.alpha.count_ones() as usize
    }

    pub fn n_beta(&self) -> usize {
        self.beta.count_ones() as usize
    }

    pub fn occupied(&self, spin_orbital: usize) -> bool {
        let p = spatial_of(spin_orbital);
        if is_alpha(spin_orbital) {
            self.alpha >> p & 1 == 1
        } else {
            self.beta >> p & 1 == 1
        }
    }

    /// Number of occupied spin orbitals strictly below `spin_orbital` in the
    /// interleaved ordering; the parity of this count is the fermionic phase.
    fn count_below(&self, spin_orbital: usize) -> u32 {
        let p = spatial_of(spin_orbital);
        let low = mask_lowest(p);
        let alpha_below = if is_alpha(spin_orbital) { low } else { mask_lowest(p + 1) };
        (self.alpha & alpha_below).count_ones() + (self.beta & low).count_ones()
    }

    /// Apply a creation operator. `None` when the orbital is already occupied.
    pub fn create(&self, spin_orbital: usize) -> Option<(f64, Determinant)> {
        if self.occupied(spin_orbital) {
            return None;
        }
        let sign = if self.count_below(spin_orbital) % 2 == 0 { 1.0 } else { -1.0 };
        let p = spatial_of(spin_orbital);
        let mut d = *self;
        if is_alpha(spin_orbital) {
            d.alpha |= 1 << p;
        } else {
            d.beta |= 1 << p;
        }
        Some((sign, d))
    }

    /// Apply an annihilation operator. `None` when the orbital is empty.
    pub fn annihilate(&self, spin_orbital: usize) -> Option<(f64, Determinant)> {
        if !self.occupied(spin_orbital) {
            return None;
        }
        let sign = if self.count_below(spin_orbital) % 2 == 0 { 1.0 } else { -1.0 };
        let p = spatial_of(spin_orbital);
        let mut d = *self;
        if is_alpha(spin_orbital) {
            d.alpha &= !(1 << p);
        } else {
            d.beta &= !(1 << p);
        }
        Some((sign, d))
    }

    /// Occupied spin orbitals, ascending.
    pub fn occupied_list(&self, n_spatial: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_alpha() + self.n_beta());
        for p in 0..n_spatial {
            if self.alpha >> p & 1 == 1 {
                out.push(alpha_so(p));
            }
            if self.beta >> p & 1 == 1 {
                out.push(beta_so(p));
            }
        }
        out
    }

    /// Spin orbitals occupied in `self` but not in `other`, ascending.
    pub fn occupied_minus(&self, other: &Determinant, n_spatial: usize) -> Vec<usize> {
        let da = self.alpha & !other.alpha;
        let db = self.beta & !other.beta;
        Determinant { alpha: da, beta: db }.occupied_list(n_spatial)
    }

    /// Half the Hamming distance of the spin-orbital occupations.
    pub fn excitation_rank(&self, other: &Determinant) -> usize {
        (((self.alpha ^ other.alpha).count_ones() + (self.beta ^ other.beta).count_ones()) / 2)
            as usize
    }
}

impl fmt::Display for Determinant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|a:{:b} b:{:b}>", self.alpha, self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Create,
    Annihilate,
}

/// Ordered product of creation/annihilation operators with a scalar prefactor.
/// The list reads left to right in operator order; application to a ket
/// therefore starts from the last element.
#[derive(Debug, Clone)]
pub struct OperatorString {
    pub ops: Vec<(usize, Action)>,
    pub prefactor: f64,
}

impl OperatorString {
    pub fn new(ops: Vec<(usize, Action)>) -> Self {
        OperatorString { ops, prefactor: 1.0 }
    }

    pub fn with_prefactor(ops: Vec<(usize, Action)>, prefactor: f64) -> Self {
        OperatorString { ops, prefactor }
    }

    /// Apply the string to a determinant. A zero amplitude means the string
    /// annihilates the determinant; otherwise exactly one signed determinant
    /// results.
    pub fn apply(&self, det: &Determinant) -> (f64, Determinant) {
        let mut amp = self.prefactor;
        let mut d = *det;
        for &(so, action) in self.ops.iter().rev() {
            let step = match action {
                Action::Create => d.create(so),
                Action::Annihilate => d.annihilate(so),
            };
            match step {
                Some((sign, next)) => {
                    amp *= sign;
                    d = next;
                }
                None => return (0.0, *det),
            }
        }
        (amp, d)
    }
}

/// Standalone form of [`OperatorString::apply`] for a unit-prefactor string.
pub fn apply_string(ops: &OperatorString, det: &Determinant) -> (f64, Determinant) {
    ops.apply(det)
}

/// All determinants of the (n_alpha, n_beta) sector in canonical
/// (alpha_mask, beta_mask) lexicographic order.
pub fn enumerate_sector(
    basis: &SpinOrbitalBasis,
    n_alpha: usize,
    n_beta: usize,
) -> Result<Vec<Determinant>> {
    if n_alpha > basis.n_spatial || n_beta > basis.n_spatial {
        return Err(Error::InvalidSector(format!(
            "cannot place ({n_alpha},{n_beta}) electrons in {} spatial orbitals",
            basis.n_spatial
        )));
    }
    let alphas = masks_with_popcount(basis.n_spatial, n_alpha);
    let betas = masks_with_popcount(basis.n_spatial, n_beta);
    let mut out = Vec::with_capacity(alphas.len() * betas.len());
    for &a in &alphas {
        for &b in &betas {
            out.push(Determinant { alpha: a, beta: b });
        }
    }
    Ok(out)
}

/// Bitmasks over `n` bits with exactly `k` bits set, ascending as integers.
pub fn masks_with_popcount(n: usize, k: usize) -> Vec<u64> {
    if k == 0 {
        return vec![0];
    }
    if k > n {
        return vec![];
    }
    let mut out = Vec::new();
    let mut mask = mask_lowest(k);
    let limit = 1u64 << n;
    while mask < limit {
        out.push(mask);
        // Gosper's hack: next mask with the same popcount.
        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        mask = (((r ^ mask) >> 2) / c) | r;
    }
    out
}

/// Decomposition of a determinant pair into an excitation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationParts {
    pub rank: usize,
    /// Spin orbitals occupied in `from` and empty in `to`, ascending.
    pub occ: Vec<usize>,
    /// Spin orbitals empty in `from` and occupied in `to`, ascending.
    pub virt: Vec<usize>,
    /// Sign relating the canonical excitation string to the pair:
    /// `string(occ, virt) |from> = phase |to>`.
    pub phase: f64,
}

/// Canonical operator string of an excitation: creations over `virt`
/// ascending, then annihilations over `occ` descending, so that the lowest
/// occupied index is removed first when acting on a ket.
pub fn excitation_string(occ: &[usize], virt: &[usize]) -> OperatorString {
    let mut ops = Vec::with_capacity(occ.len() + virt.len());
    for &a in virt {
        ops.push((a, Action::Create));
    }
    for &i in occ.iter().rev() {
        ops.push((i, Action::Annihilate));
    }
    OperatorString::new(ops)
}

/// Identify the excitation connecting two determinants of one sector.
/// Returns `None` when the rank exceeds `max_rank`.
pub fn excitation_between(
    from: &Determinant,
    to: &Determinant,
    max_rank: usize,
    n_spatial: usize,
) -> Result<Option<ExcitationParts>> {
    if from.n_alpha() != to.n_alpha() || from.n_beta() != to.n_beta() {
        return Err(Error::InvalidSector(format!(
            "determinants in different particle-number sectors: {from} vs {to}"
        )));
    }
    let rank = from.excitation_rank(to);
    if rank > max_rank {
        return Ok(None);
    }
    if rank == 0 {
        return Ok(Some(ExcitationParts { rank: 0, occ: vec![], virt: vec![], phase: 1.0 }));
    }
    let occ = from.occupied_minus(to, n_spatial);
    let virt = to.occupied_minus(from, n_spatial);
    let (amp, d) = excitation_string(&occ, &virt).apply(from);
    debug_assert!(amp != 0.0 && d == *to);
    Ok(Some(ExcitationParts { rank, occ, virt, phase: amp }))
}

/// An ordered determinant list with O(1) position lookup.
#[derive(Debug, Clone)]
pub struct SectorBasis {
    pub n_spatial: usize,
    pub dets: Vec<Determinant>,
    index: HashMap<Determinant, usize>,
}

impl SectorBasis {
    pub fn new(n_spatial: usize, dets: Vec<Determinant>) -> Self {
        let index = dets.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        SectorBasis { n_spatial, dets, index }
    }

    pub fn for_sector(basis: &SpinOrbitalBasis, n_alpha: usize, n_beta: usize) -> Result<Self> {
        Ok(Self::new(basis.n_spatial, enumerate_sector(basis, n_alpha, n_beta)?))
    }

    pub fn len(&self) -> usize {
        self.dets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dets.is_empty()
    }

    pub fn position(&self, d: &Determinant) -> Option<usize> {
        self.index.get(d).copied()
    }
}

/// Real coefficients over an ordered determinant basis.
#[derive(Debug, Clone)]
pub struct StateVector {
    pub basis: Arc<SectorBasis>,
    pub coeffs: DVector<f64>,
}

impl StateVector {
    pub fn zero(basis: Arc<SectorBasis>) -> Self {
        let n = basis.len();
        StateVector { basis, coeffs: DVector::zeros(n) }
    }

    /// Unit vector on a single determinant.
    pub fn unit(basis: Arc<SectorBasis>, det: &Determinant) -> Result<Self> {
        let pos = basis
            .position(det)
            .ok_or_else(|| Error::InvalidSector(format!("determinant {det} not in basis")))?;
        let mut v = Self::zero(basis);
        v.coeffs[pos] = 1.0;
        Ok(v)
    }

    pub fn from_coeffs(basis: Arc<SectorBasis>, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::Dimension(format!(
                "coefficient length {} vs basis size {}",
                coeffs.len(),
                basis.len()
            )));
        }
        Ok(StateVector { basis, coeffs })
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.norm()
    }

    pub fn dot(&self, other: &StateVector) -> f64 {
        self.coeffs.dot(&other.coeffs)
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::Divergence("cannot normalize a zero vector".into()));
        }
        self.coeffs /= n;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn so_basis(n: usize, na: usize, nb: usize) -> SpinOrbitalBasis {
        SpinOrbitalBasis::new(n, na, nb).unwrap()
    }

    #[test]
    fn sector_counts() {
        let b = so_basis(2, 1, 1);
        assert_eq!(enumerate_sector(&b, 1, 1).unwrap().len(), 4);
        let b = so_basis(4, 2, 2);
        assert_eq!(enumerate_sector(&b, 2, 2).unwrap().len(), 36);
    }

    #[test]
    fn sector_count_matches_binomial_for_nine_orbitals() {
        // Brute-force enumeration count equals C(9,4)^2.
        let b = so_basis(9, 4, 4);
        let dets = enumerate_sector(&b, 4, 4).unwrap();
        let c94 = 126usize;
        assert_eq!(dets.len(), c94 * c94);
        // Canonical order is strictly increasing in (alpha, beta).
        for w in dets.windows(2) {
            assert!((w[0].alpha, w[0].beta) < (w[1].alpha, w[1].beta));
        }
    }

    #[test]
    fn sector_rejects_overfull() {
        let b = so_basis(2, 1, 1);
        assert!(enumerate_sector(&b, 3, 0).is_err());
    }

    #[test]
    fn create_on_vacuum() {
        let vac = Determinant::vacuum();
        let s = OperatorString::new(vec![(0, Action::Create)]);
        let (amp, d) = s.apply(&vac);
        assert_eq!(amp, 1.0);
        assert!(d.occupied(0));
        assert_eq!(d.n_alpha(), 1);
    }

    #[test]
    fn pauli_exclusion() {
        let vac = Determinant::vacuum();
        let s = OperatorString::new(vec![(0, Action::Create), (0, Action::Create)]);
        let (amp, d) = s.apply(&vac);
        assert_eq!(amp, 0.0);
        assert_eq!(d, vac);
    }

    #[test]
    fn number_operator_is_identity_on_occupied() {
        let b = so_basis(3, 2, 1);
        let r = b.reference();
        for so in r.occupied_list(3) {
            let s = OperatorString::new(vec![(so, Action::Create), (so, Action::Annihilate)]);
            let (amp, d) = s.apply(&r);
            assert_eq!(amp, 1.0);
            assert_eq!(d, r);
        }
    }

    #[test]
    fn excitation_between_identity() {
        let b = so_basis(3, 2, 2);
        let r = b.reference();
        let e = excitation_between(&r, &r, 4, 3).unwrap().unwrap();
        assert_eq!(e.rank, 0);
        assert_eq!(e.phase, 1.0);
    }

    #[test]
    fn excitation_between_rejects_sector_mismatch() {
        let d1 = Determinant { alpha: 0b1, beta: 0b1 };
        let d2 = Determinant { alpha: 0b11, beta: 0b1 };
        assert!(excitation_between(&d1, &d2, 4, 2).is_err());
    }

    #[test]
    fn excitation_between_rank_cap() {
        // Determinants differing in 3 orbitals per spin have rank 3 per spin pair.
        let d1 = Determinant { alpha: 0b000111, beta: 0b1 };
        let d2 = Determinant { alpha: 0b111000, beta: 0b1 };
        let e = excitation_between(&d1, &d2, 6, 6).unwrap().unwrap();
        assert_eq!(e.rank, 3);
        assert!(excitation_between(&d1, &d2, 2, 6).unwrap().is_none());
    }

    #[test]
    fn excitation_phase_matches_string_composition() {
        // Single-excitation phase agrees with applying the string directly.
        let b = so_basis(4, 2, 2);
        let sector = enumerate_sector(&b, 2, 2).unwrap();
        let r = b.reference();
        for d in &sector {
            if r.excitation_rank(d) == 1 {
                let e = excitation_between(&r, d, 1, 4).unwrap().unwrap();
                let (amp, out) = excitation_string(&e.occ, &e.virt).apply(&r);
                assert_eq!(out, *d);
                assert_eq!(amp, e.phase);
            }
        }
    }

    #[test]
    fn anticommutation_of_annihilators() {
        let b = so_basis(3, 2, 2);
        let sector = enumerate_sector(&b, 2, 2).unwrap();
        for d in &sector {
            for p in 0..6 {
                for q in 0..6 {
                    if p == q {
                        continue;
                    }
                    let pq = OperatorString::new(vec![
                        (p, Action::Annihilate),
                        (q, Action::Annihilate),
                    ]);
                    let qp = OperatorString::new(vec![
                        (q, Action::Annihilate),
                        (p, Action::Annihilate),
                    ]);
                    let (a1, d1) = pq.apply(d);
                    let (a2, d2) = qp.apply(d);
                    assert_eq!(a1, -a2);
                    if a1 != 0.0 {
                        assert_eq!(d1, d2);
                    }
                }
            }
        }
    }

    #[test]
    fn double_annihilation_vanishes() {
        let b = so_basis(3, 2, 2);
        for d in enumerate_sector(&b, 2, 2).unwrap() {
            for p in 0..6 {
                let s =
                    OperatorString::new(vec![(p, Action::Annihilate), (p, Action::Annihilate)]);
                assert_eq!(s.apply(&d).0, 0.0);
            }
        }
    }

    #[test]
    fn phase_composition_equals_single_shot() {
        // Splitting a string into two halves and composing them gives the
        // same signed determinant as one application.
        let b = so_basis(4, 2, 2);
        let r = b.reference();
        let full = OperatorString::new(vec![
            (alpha_so(3), Action::Create),
            (beta_so(2), Action::Create),
            (beta_so(1), Action::Annihilate),
            (alpha_so(0), Action::Annihilate),
        ]);
        let head = OperatorString::new(vec![
            (alpha_so(3), Action::Create),
            (beta_so(2), Action::Create),
        ]);
        let tail = OperatorString::new(vec![
            (beta_so(1), Action::Annihilate),
            (alpha_so(0), Action::Annihilate),
        ]);
        let (a_full, d_full) = full.apply(&r);
        let (a_tail, d_mid) = tail.apply(&r);
        let (a_head, d_comp) = head.apply(&d_mid);
        assert_eq!(a_full, a_tail * a_head);
        assert_eq!(d_full, d_comp);
    }

    #[test]
    fn statevector_normalize() {
        let b = so_basis(2, 1, 1);
        let sector = Arc::new(SectorBasis::for_sector(&b, 1, 1).unwrap());
        let mut v = StateVector::zero(sector);
        v.coeffs[0] = 3.0;
        v.coeffs[1] = 4.0;
        v.normalize().unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-12);
        let sq: f64 = v.coeffs.iter().map(|c| c * c).sum();
        assert!((sq - 1.0).abs() < 1e-12);
    }
}
