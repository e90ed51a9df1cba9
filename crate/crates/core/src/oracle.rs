//! Brute-force ground truth: dense exact diagonalization, right eigenpairs of
//! non-symmetric matrices, Rayleigh-Schrodinger resolvent expansions, and
//! finite-difference gradients.
//!
//! Every eigen result carries its own residual; callers assert residuals
//! instead of trusting solver flags. Dense only, with a hard dimension cap.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Hard cap on oracle matrix dimension. Oracles stay simple and trustworthy;
/// anything bigger belongs to production code paths.
pub const ORACLE_DIM_CAP: usize = 5_000;

const SYMMETRY_TOL: f64 = 1e-8;

/// Eigenvalues ascending plus the selected eigenpairs with their residuals
/// and reference overlaps. `imag_parts` is all zeros for symmetric solves.
#[derive(Debug, Clone)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<f64>,
    pub imag_parts: Vec<f64>,
    /// Eigenvectors for the first `n_roots` eigenvalues (ascending order).
    pub eigenvectors: Vec<DVector<f64>>,
    /// ||M v - lambda v|| per returned eigenvector.
    pub residuals: Vec<f64>,
    /// |<reference|v>| per returned eigenvector, when a reference was given.
    pub overlaps: Vec<f64>,
}

fn check_dim(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("matrix is {}x{}", m.nrows(), m.ncols())));
    }
    if m.nrows() > ORACLE_DIM_CAP {
        return Err(Error::Dimension(format!(
            "oracle dimension cap is {ORACLE_DIM_CAP}, got {}",
            m.nrows()
        )));
    }
    Ok(())
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Lowest `n_roots` eigenpairs of a symmetric matrix by dense decomposition.
pub fn exact_diagonalize(
    m: &DMatrix<f64>,
    n_roots: usize,
    reference: Option<&DVector<f64>>,
) -> Result<SpectrumResult> {
    check_dim(m)?;
    let defect = asymmetry(m);
    if defect > SYMMETRY_TOL {
        return Err(Error::Asymmetric(defect));
    }
    // Work on the symmetrized matrix so round-off asymmetry cannot leak in.
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let keep = n_roots.min(n);
    let mut eigenvectors = Vec::with_capacity(keep);
    let mut residuals = Vec::with_capacity(keep);
    let mut overlaps = Vec::with_capacity(keep);
    for &col in order.iter().take(keep) {
        let mut v: DVector<f64> = eig.eigenvectors.column(col).into();
        let norm = v.norm();
        if norm > 0.0 {
            v /= norm;
        }
        let residual = (m * &v - &v * eig.eigenvalues[col]).norm();
        if let Some(r) = reference {
            overlaps.push(r.dot(&v).abs());
        }
        eigenvectors.push(v);
        residuals.push(residual);
    }
    Ok(SpectrumResult {
        imag_parts: vec![0.0; eigenvalues.len()],
        eigenvalues,
        eigenvectors,
        residuals,
        overlaps,
    })
}

/// One right eigenpair of a non-symmetric real matrix.
#[derive(Debug, Clone)]
pub struct EigenRoot {
    pub value_re: f64,
    pub value_im: f64,
    pub vector_re: DVector<f64>,
    pub vector_im: DVector<f64>,
    pub residual: f64,
    /// |<reference|v>| with the complex vector, when a reference was given.
    pub overlap: f64,
}

impl EigenRoot {
    pub fn is_real(&self, tol: f64) -> bool {
        self.value_im.abs() <= tol
    }
}

/// Right eigenpairs of a real square matrix, values from the Schur form and
/// vectors recovered by shifted inverse iteration in complex arithmetic.
/// Roots come back sorted by ascending real part.
pub fn nonsymmetric_eig(
    m: &DMatrix<f64>,
    reference: Option<&DVector<f64>>,
) -> Result<Vec<EigenRoot>> {
    check_dim(m)?;
    let n = m.nrows();
    let mc: DMatrix<Complex<f64>> = m.map(|x| Complex::new(x, 0.0));
    let mut values: Vec<Complex<f64>> = m.complex_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));

    let scale = m.norm().max(1.0);
    let mut roots = Vec::with_capacity(n);
    for &lambda in &values {
        let vec = inverse_iteration(&mc, lambda, scale)?;
        let av = &mc * &vec;
        let residual = (&av - &vec * lambda).norm();
        if residual > 1e-8 * scale {
            return Err(Error::Defective(residual));
        }
        let overlap = match reference {
            Some(r) => {
                let mut acc = Complex::new(0.0, 0.0);
                for i in 0..n {
                    acc += Complex::new(r[i], 0.0) * vec[i];
                }
                acc.norm()
            }
            None => 0.0,
        };
        roots.push(EigenRoot {
            value_re: lambda.re,
            value_im: lambda.im,
            vector_re: vec.map(|z| z.re),
            vector_im: vec.map(|z| z.im),
            residual,
            overlap,
        });
    }
    Ok(roots)
}

fn inverse_iteration(
    m: &DMatrix<Complex<f64>>,
    lambda: Complex<f64>,
    scale: f64,
) -> Result<DVector<Complex<f64>>> {
    let n = m.nrows();
    // A deterministic, dense starting vector that is unlikely to be
    // orthogonal to the target eigenvector.
    let mut v = DVector::from_fn(n, |i, _| {
        Complex::new(1.0 + 0.3 * ((i.wrapping_mul(2654435761)) % 97) as f64 / 97.0, 0.0)
    });
    v /= Complex::new(v.norm(), 0.0);
    let mut best: Option<(f64, DVector<Complex<f64>>)> = None;
    // Small shifts off the eigenvalue keep the solve well posed; widen the
    // perturbation if the factorization is too singular to be useful.
    for attempt in 0..4 {
        let eps = 1e-12 * scale * 10f64.powi(attempt);
        let shifted = m - DMatrix::identity(n, n) * (lambda + Complex::new(eps, eps));
        let lu = shifted.lu();
        for _ in 0..8 {
            let Some(w) = lu.solve(&v) else { break };
            let norm = w.norm();
            if !norm.is_finite() || norm == 0.0 {
                break;
            }
            v = w / Complex::new(norm, 0.0);
            let residual = (m * &v - &v * lambda).norm();
            match &best {
                Some((r, _)) if *r <= residual => {}
                _ => best = Some((residual, v.clone())),
            }
            if residual < 1e-12 * scale {
                return Ok(v);
            }
        }
        if let Some((r, _)) = &best {
            if *r < 1e-10 * scale {
                return Ok(best.unwrap().1);
            }
        }
    }
    match best {
        Some((_, vec)) => Ok(vec),
        None => Err(Error::Defective(f64::INFINITY)),
    }
}

/// Root with the largest reference overlap among near-real roots.
pub fn select_by_overlap(roots: &[EigenRoot], min_overlap: f64) -> Result<&EigenRoot> {
    let imag_tol = 1e-7;
    roots
        .iter()
        .filter(|r| r.is_real(imag_tol))
        .max_by(|a, b| a.overlap.total_cmp(&b.overlap))
        .filter(|r| r.overlap > min_overlap)
        .ok_or(Error::NoOverlapRoot(min_overlap))
}

/// Second-order Rayleigh-Schrodinger quantities for H = H0 + V with a
/// diagonal H0 given by `h0_diag` and the reference on basis index `ref_idx`.
#[derive(Debug, Clone)]
pub struct RsOrder2 {
    pub e1: f64,
    pub e2: f64,
    /// First-order wave function (zero on the reference).
    pub psi1: DVector<f64>,
    /// Second-order wave function (zero on the reference).
    pub psi2: DVector<f64>,
}

/// Textbook RS perturbation theory through second order. Errors out on any
/// quasi-degenerate denominator; the oracle demands nondegeneracy.
pub fn rs_resolvent_order2(
    h0_diag: &DVector<f64>,
    v: &DMatrix<f64>,
    ref_idx: usize,
    degeneracy_tol: f64,
) -> Result<RsOrder2> {
    check_dim(v)?;
    let n = v.nrows();
    if h0_diag.len() != n {
        return Err(Error::Dimension(format!("h0 length {} vs V {}", h0_diag.len(), n)));
    }
    let e0 = h0_diag[ref_idx];
    let e1 = v[(ref_idx, ref_idx)];
    let mut psi1 = DVector::zeros(n);
    let mut e2 = 0.0;
    for d in 0..n {
        if d == ref_idx {
            continue;
        }
        let denom = e0 - h0_diag[d];
        let coupling = v[(d, ref_idx)];
        if denom.abs() < degeneracy_tol {
            if coupling.abs() > 0.0 {
                return Err(Error::DegenerateDenominator(denom));
            }
            continue;
        }
        psi1[d] = coupling / denom;
        e2 += v[(ref_idx, d)] * psi1[d];
    }
    // psi2 = R0 (V - E1) psi1
    let mut psi2 = DVector::zeros(n);
    let v_psi1 = v * &psi1;
    for d in 0..n {
        if d == ref_idx {
            continue;
        }
        let denom = e0 - h0_diag[d];
        if denom.abs() < degeneracy_tol {
            if (v_psi1[d] - e1 * psi1[d]).abs() > 0.0 {
                return Err(Error::DegenerateDenominator(denom));
            }
            continue;
        }
        psi2[d] = (v_psi1[d] - e1 * psi1[d]) / denom;
    }
    Ok(RsOrder2 { e1, e2, psi1, psi2 })
}

/// Central finite differences (f(x + h e_k) - f(x - h e_k)) / (2 h).
pub fn finite_diff_gradient<F>(mut f: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(theta.len());
    let mut work = theta.to_vec();
    for k in 0..theta.len() {
        work[k] = theta[k] + h;
        let plus = f(&work);
        work[k] = theta[k] - h;
        let minus = f(&work);
        work[k] = theta[k];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}
