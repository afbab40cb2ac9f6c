//! Square complex operators in compressed sparse row form.
//!
//! Every operator in the crate (ladder operators, Hamiltonians, jump
//! operators, Liouvillian superoperators) is assembled in this format and only
//! densified where a decomposition needs it.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Sparse square matrix, CSR layout, column indices sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<C64>,
}

impl Operator {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, indptr: vec![0; dim + 1], indices: Vec::new(), data: Vec::new() }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![C64::new(1.0, 0.0); dim])
    }

    pub fn diagonal(values: &[C64]) -> Self {
        Self::from_triplets(values.len(), values.iter().enumerate().map(|(i, &v)| (i, i, v)))
    }

    /// Builds an operator from `(row, col, value)` entries. Duplicates are
    /// summed and exact zeros dropped.
    pub fn from_triplets<I>(dim: usize, entries: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        let mut rows: Vec<BTreeMap<usize, C64>> = vec![BTreeMap::new(); dim];
        for (r, c, v) in entries {
            assert!(r < dim && c < dim, "entry ({r},{c}) outside {dim}x{dim} operator");
            *rows[r].entry(c).or_insert(ZERO) += v;
        }
        let mut indptr = Vec::with_capacity(dim + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for row in rows {
            for (c, v) in row {
                if v != ZERO {
                    indices.push(c);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self { dim, indptr, indices, data }
    }

    pub fn from_dense(m: ArrayView2<C64>) -> Result<Self> {
        let (r, c) = m.dim();
        if r != c {
            return Err(Error::DimensionMismatch(format!("operator must be square, got {r}x{c}")));
        }
        Ok(Self::from_triplets(r, m.indexed_iter().map(|((i, j), &v)| (i, j, v))))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        let (lo, hi) = (self.indptr[row], self.indptr[row + 1]);
        match self.indices[lo..hi].binary_search(&col) {
            Ok(k) => self.data[lo + k],
            Err(_) => ZERO,
        }
    }

    /// Nonzero entries of one row as `(col, value)`.
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let (lo, hi) = (self.indptr[row], self.indptr[row + 1]);
        self.indices[lo..hi].iter().copied().zip(self.data[lo..hi].iter().copied())
    }

    /// All nonzero entries as `(row, col, value)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::zeros((self.dim, self.dim));
        for (r, c, v) in self.iter() {
            m[[r, c]] = v;
        }
        m
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(r, c, v)| (c, r, v)))
    }

    pub fn conj(&self) -> Self {
        Self { data: self.data.iter().map(|v| v.conj()).collect(), ..self.clone() }
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(r, c, v)| (c, r, v.conj())))
    }

    pub fn scale(&self, factor: C64) -> Self {
        if factor == ZERO {
            return Self::zeros(self.dim);
        }
        Self { data: self.data.iter().map(|v| v * factor).collect(), ..self.clone() }
    }

    pub fn scale_re(&self, factor: f64) -> Self {
        self.scale(C64::new(factor, 0.0))
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Largest entrywise modulus of `self - self^dagger`.
    pub fn hermiticity_error(&self) -> f64 {
        let diff = self - &self.adjoint();
        diff.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Operator) -> Self {
        let (da, db) = (self.dim, other.dim);
        let dim = da * db;
        let mut indptr = Vec::with_capacity(dim + 1);
        let mut indices = Vec::with_capacity(self.nnz() * other.nnz());
        let mut data = Vec::with_capacity(self.nnz() * other.nnz());
        indptr.push(0);
        for ra in 0..da {
            for rb in 0..db {
                for (ca, va) in self.row(ra) {
                    for (cb, vb) in other.row(rb) {
                        indices.push(ca * db + cb);
                        data.push(va * vb);
                    }
                }
                indptr.push(indices.len());
            }
        }
        // Rows come out sorted: ca-major, cb-minor with both sorted.
        Self { dim, indptr, indices, data }
    }

    /// `y = self · x` for a dense vector.
    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for (r, out) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.indptr[r], self.indptr[r + 1]);
            let mut acc = ZERO;
            for k in lo..hi {
                acc += self.data[k] * x[self.indices[k]];
            }
            *out = acc;
        }
    }

    pub fn apply_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.dim];
        self.apply(x, &mut y);
        y
    }

    /// Dense product `self · m`.
    pub fn mul_dense(&self, m: &ArrayView2<C64>) -> Array2<C64> {
        let cols = m.ncols();
        let mut out = Array2::zeros((self.dim, cols));
        for r in 0..self.dim {
            let mut out_row = out.row_mut(r);
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &m.row(c));
            }
        }
        out
    }

    /// Dense product `m · self`.
    pub fn dense_mul(&self, m: &ArrayView2<C64>) -> Array2<C64> {
        let rows = m.nrows();
        let mut out = Array2::zeros((rows, self.dim));
        for i in 0..rows {
            let m_row = m.row(i);
            let mut out_row = out.row_mut(i);
            for (r, c, v) in self.iter() {
                out_row[c] += m_row[r] * v;
            }
        }
        out
    }

    /// Restriction to the given row and column index sets, in the given order.
    /// Returns a rectangular block as a dense-free triplet list.
    pub(crate) fn block(&self, rows: &[usize], cols: &[usize]) -> RectOperator {
        let mut col_pos = vec![usize::MAX; self.dim];
        for (k, &c) in cols.iter().enumerate() {
            col_pos[c] = k;
        }
        let mut entries = Vec::new();
        for (i, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                let j = col_pos[c];
                if j != usize::MAX {
                    entries.push((i, j, v));
                }
            }
        }
        RectOperator { rows: rows.len(), cols: cols.len(), entries }
    }

    fn combine(&self, other: &Operator, sign: f64) -> Operator {
        assert_eq!(self.dim, other.dim, "operator dimensions differ");
        let mut indptr = Vec::with_capacity(self.dim + 1);
        let mut indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut data = Vec::with_capacity(self.nnz() + other.nnz());
        indptr.push(0);
        for r in 0..self.dim {
            let mut a = self.row(r).peekable();
            let mut b = other.row(r).map(|(c, v)| (c, v * sign)).peekable();
            loop {
                let next = match (a.peek(), b.peek()) {
                    (Some(&(ca, va)), Some(&(cb, vb))) => {
                        if ca == cb {
                            a.next();
                            b.next();
                            (ca, va + vb)
                        } else if ca < cb {
                            a.next();
                            (ca, va)
                        } else {
                            b.next();
                            (cb, vb)
                        }
                    }
                    (Some(_), None) => a.next().unwrap(),
                    (None, Some(_)) => b.next().unwrap(),
                    (None, None) => break,
                };
                if next.1 != ZERO {
                    indices.push(next.0);
                    data.push(next.1);
                }
            }
            indptr.push(indices.len());
        }
        Operator { dim: self.dim, indptr, indices, data }
    }

    fn matmul(&self, other: &Operator) -> Operator {
        assert_eq!(self.dim, other.dim, "operator dimensions differ");
        let mut acc = vec![ZERO; self.dim];
        let mut touched = vec![false; self.dim];
        let mut cols: Vec<usize> = Vec::new();
        let mut indptr = Vec::with_capacity(self.dim + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for r in 0..self.dim {
            for (k, va) in self.row(r) {
                for (c, vb) in other.row(k) {
                    if !touched[c] {
                        touched[c] = true;
                        cols.push(c);
                    }
                    acc[c] += va * vb;
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                if acc[c] != ZERO {
                    indices.push(c);
                    data.push(acc[c]);
                }
                acc[c] = ZERO;
                touched[c] = false;
            }
            cols.clear();
            indptr.push(indices.len());
        }
        Operator { dim: self.dim, indptr, indices, data }
    }

    /// Approximate heap footprint in bytes.
    pub fn memory_bytes(&self) -> u64 {
        (self.indptr.len() * 8 + self.indices.len() * 8 + self.data.len() * 16) as u64
    }
}

/// Rectangular sparse block used by the sector-restricted steady-state solver.
#[derive(Debug, Clone)]
pub(crate) struct RectOperator {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl RectOperator {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::zeros((self.rows, self.cols));
        for &(r, c, v) in &self.entries {
            m[[r, c]] += v;
        }
        m
    }

    /// `self · m`.
    pub fn mul_dense(&self, m: &ArrayView2<C64>) -> Array2<C64> {
        let mut t = Array2::<C64>::zeros((self.rows, m.ncols()));
        for &(r, c, v) in &self.entries {
            t.row_mut(r).scaled_add(v, &m.row(c));
        }
        t
    }

    /// `self · m · self^dagger`, accumulated into `out`.
    pub fn sandwich_into(&self, m: &ArrayView2<C64>, out: &mut Array2<C64>) {
        // t = self · m  (rows × m.ncols)
        let mut t = Array2::<C64>::zeros((self.rows, m.ncols()));
        for &(r, c, v) in &self.entries {
            t.row_mut(r).scaled_add(v, &m.row(c));
        }
        // out += t · self^dagger: out[i, r] += t[i, c] * conj(v)
        for &(r, c, v) in &self.entries {
            let vc = v.conj();
            for i in 0..self.rows {
                out[[i, r]] += t[[i, c]] * vc;
            }
        }
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        self.combine(rhs, 1.0)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        self.combine(rhs, -1.0)
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.matmul(rhs)
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        self.scale_re(-1.0)
    }
}
