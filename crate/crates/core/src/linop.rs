//! Minimal linear-operator abstraction over dense vectors.
//!
//! Dense matrices cover desk-scale sectors; the sparse triplet form keeps the
//! flow engine usable when the full sector is too large for dense conjugation.

use nalgebra::{DMatrix, DVector};

/// Real linear operator acting on coefficient vectors.
pub trait LinOp {
    fn dim(&self) -> usize;

    /// out += A v
    fn apply_add(&self, v: &DVector<f64>, out: &mut DVector<f64>);

    /// Upper bound on the induced infinity norm, used to pick exponential
    /// scaling factors. Any finite bound works; tighter is faster.
    fn norm_bound(&self) -> f64;

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.apply_add(v, &mut out);
        out
    }
}

impl LinOp for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply_add(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(1.0, self, v, 1.0);
    }

    fn norm_bound(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows() {
            let mut row = 0.0;
            for j in 0..self.ncols() {
                row += self[(i, j)].abs();
            }
            worst = worst.max(row);
        }
        worst
    }
}

/// Sparse matrix in coordinate (triplet) form.
#[derive(Debug, Clone)]
pub struct TripletMatrix {
    dim: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl TripletMatrix {
    pub fn new(dim: usize) -> Self {
        TripletMatrix { dim, entries: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.dim && col < self.dim);
        if value != 0.0 {
            self.entries.push((row as u32, col as u32, value));
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn raw_entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    pub fn negated(&self) -> TripletMatrix {
        TripletMatrix {
            dim: self.dim,
            entries: self.entries.iter().map(|&(i, j, v)| (i, j, -v)).collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i as usize, j as usize)] += v;
        }
        m
    }
}

impl LinOp for TripletMatrix {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply_add(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        for &(i, j, val) in &self.entries {
            out[i as usize] += val * v[j as usize];
        }
    }

    fn norm_bound(&self) -> f64 {
        let mut row_sums = vec![0.0f64; self.dim];
        for &(i, _, v) in &self.entries {
            row_sums[i as usize] += v.abs();
        }
        row_sums.iter().fold(0.0, |a, &b| a.max(b))
    }
}

/// A - B as an operator, without materializing the difference.
pub struct ScaledSum<'a> {
    pub a: &'a dyn LinOp,
    pub a_scale: f64,
    pub b: &'a dyn LinOp,
    pub b_scale: f64,
}

impl LinOp for ScaledSum<'_> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn apply_add(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        let mut tmp = DVector::zeros(self.dim());
        self.a.apply_add(v, &mut tmp);
        *out += &tmp * self.a_scale;
        tmp.fill(0.0);
        self.b.apply_add(v, &mut tmp);
        *out += &tmp * self.b_scale;
    }

    fn norm_bound(&self) -> f64 {
        self.a.norm_bound() * self.a_scale.abs() + self.b.norm_bound() * self.b_scale.abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplet_matches_dense_apply() {
        let mut t = TripletMatrix::new(3);
        t.push(0, 1, 2.0);
        t.push(2, 0, -1.5);
        t.push(0, 1, 0.5);
        let d = t.to_dense();
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(t.apply(&v), d.apply(&v));
        assert!(t.norm_bound() >= d.norm_bound());
    }
}
