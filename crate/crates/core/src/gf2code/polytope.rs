//! Linearized parity polytope `A b ≤ θ`.
//!
//! Check `j` with neighbourhood `N_c(j)` contributes one row per odd subset
//! `F ⊆ N_c(j)`: `+1` on `F`, `-1` on the rest, bias `|F| - 1`. Subsets are
//! enumerated as bit masks in increasing order, bit `k` standing for the
//! `k`-th smallest column of the check.
//!
//! Two distinct columns sharing a check of degree `d ≥ 3` have zero inner
//! product over that block (the sign patterns balance), so `AᵀA` is
//! diagonal whenever every check has degree other than 2. A degree-2 check
//! contributes `-2` to the off-diagonal entry of its pair.

use std::ops::Range;

use super::ParityCheckMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ParityPolytope {
    n: usize,
    // CSR
    row_ptr: Vec<usize>,
    row_cols: Vec<usize>,
    row_vals: Vec<i8>,
    // CSC
    col_ptr: Vec<usize>,
    col_rows: Vec<usize>,
    col_vals: Vec<i8>,
    theta: Vec<i32>,
    check_rows: Vec<Range<usize>>,
    lambda: Vec<f64>,
}

impl ParityPolytope {
    pub fn new(h: &ParityCheckMatrix) -> Self {
        let n = h.n();
        let mut row_ptr = vec![0];
        let mut row_cols = Vec::new();
        let mut row_vals = Vec::new();
        let mut theta = Vec::new();
        let mut check_rows = Vec::with_capacity(h.m());
        for j in 0..h.m() {
            let cols = h.row(j);
            let d = cols.len();
            assert!(d < 32, "check degree {d} too large to enumerate");
            let start = theta.len();
            for mask in 1u32..(1 << d) {
                let size = mask.count_ones();
                if size % 2 == 0 {
                    continue;
                }
                for (k, &i) in cols.iter().enumerate() {
                    row_cols.push(i);
                    row_vals.push(if mask >> k & 1 == 1 { 1 } else { -1 });
                }
                row_ptr.push(row_cols.len());
                theta.push(size as i32 - 1);
            }
            check_rows.push(start..theta.len());
        }

        let mut counts = vec![0usize; n];
        for &i in &row_cols {
            counts[i] += 1;
        }
        let mut col_ptr = vec![0; n + 1];
        for i in 0..n {
            col_ptr[i + 1] = col_ptr[i] + counts[i];
        }
        let mut fill = col_ptr.clone();
        let mut col_rows = vec![0; row_cols.len()];
        let mut col_vals = vec![0; row_cols.len()];
        for r in 0..theta.len() {
            for k in row_ptr[r]..row_ptr[r + 1] {
                let i = row_cols[k];
                col_rows[fill[i]] = r;
                col_vals[fill[i]] = row_vals[k];
                fill[i] += 1;
            }
        }
        let lambda = (0..n)
            .map(|i| col_vals[col_ptr[i]..col_ptr[i + 1]].iter().map(|&v| i64::from(v * v)).sum::<i64>() as f64)
            .collect();
        Self { n, row_ptr, row_cols, row_vals, col_ptr, col_rows, col_vals, theta, check_rows, lambda }
    }

    /// Number of bits `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of inequality rows `Γ^c`.
    pub fn rows(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[i32] {
        &self.theta
    }

    pub fn theta_f64(&self) -> Vec<f64> {
        self.theta.iter().map(|&t| f64::from(t)).collect()
    }

    /// Diagonal of `AᵀA`.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Inequality rows belonging to check `j`.
    pub fn check_rows(&self, j: usize) -> Range<usize> {
        self.check_rows[j].clone()
    }

    pub fn checks(&self) -> usize {
        self.check_rows.len()
    }

    /// Sparse row `r` as `(column, coefficient)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, i8)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.row_cols[span.clone()].iter().copied().zip(self.row_vals[span].iter().copied())
    }

    /// Sparse column `i` as `(row, coefficient)` pairs.
    pub fn col(&self, i: usize) -> impl Iterator<Item = (usize, i8)> + '_ {
        let span = self.col_ptr[i]..self.col_ptr[i + 1];
        self.col_rows[span.clone()].iter().copied().zip(self.col_vals[span].iter().copied())
    }

    /// `A b`.
    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        (0..self.rows())
            .map(|r| self.row(r).map(|(i, v)| f64::from(v) * b[i]).sum())
            .collect()
    }

    /// `aᵢᵀ x` for column `i`.
    pub fn col_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.col(i).map(|(r, v)| f64::from(v) * x[r]).sum()
    }

    /// `Aᵀ x`.
    pub fn apply_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows());
        (0..self.n).map(|i| self.col_dot(i, x)).collect()
    }

    /// Integer `A b` for hard words.
    pub fn apply_int(&self, b: &[u8]) -> Vec<i32> {
        (0..self.rows()).map(|r| self.row(r).map(|(i, v)| i32::from(v) * i32::from(b[i])).sum()).collect()
    }

    /// True iff the hard word satisfies every inequality.
    pub fn contains(&self, b: &[u8]) -> bool {
        self.apply_int(b).iter().zip(&self.theta).all(|(a, t)| a <= t)
    }

    /// Largest `|aᵢᵀaⱼ|` over distinct columns, computed exactly.
    pub fn max_offdiag_gram(&self) -> i64 {
        let mut worst = 0i64;
        let mut acc = vec![0i64; self.n];
        for i in 0..self.n {
            acc.iter_mut().for_each(|a| *a = 0);
            for (r, v) in self.col(i) {
                for (k, w) in self.row(r) {
                    acc[k] += i64::from(v) * i64::from(w);
                }
            }
            acc[i] = 0;
            worst = acc.iter().fold(worst, |m, a| m.max(a.abs()));
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_check(cols: Vec<usize>, n: usize) -> ParityPolytope {
        ParityPolytope::new(&ParityCheckMatrix::from_rows(n, vec![cols]).unwrap())
    }

    fn dense_rows(p: &ParityPolytope) -> Vec<Vec<i8>> {
        (0..p.rows())
            .map(|r| {
                let mut d = vec![0; p.n()];
                for (i, v) in p.row(r) {
                    d[i] = v;
                }
                d
            })
            .collect()
    }

    #[test]
    fn three_variable_block() {
        // Check on bits {2, 10, 36} (1-based) of a 40-bit word.
        let p = single_check(vec![1, 9, 35], 40);
        let w: Vec<Vec<i8>> = dense_rows(&p).iter().map(|r| vec![r[1], r[9], r[35]]).collect();
        assert_eq!(w, vec![vec![1, -1, -1], vec![-1, 1, -1], vec![-1, -1, 1], vec![1, 1, 1]]);
        assert_eq!(p.theta(), &[0, 0, 0, 2]);
    }

    #[test]
    fn degree_one_check_forces_zero() {
        let p = single_check(vec![4], 6);
        assert_eq!(p.rows(), 1);
        assert_eq!(p.row(0).collect::<Vec<_>>(), vec![(4, 1)]);
        assert_eq!(p.theta(), &[0]);
    }

    #[test]
    fn exhaustive_feasibility_is_even_parity() {
        for d in 1..=6usize {
            let p = single_check((0..d).collect(), d);
            assert_eq!(p.rows(), 1 << (d - 1));
            for w in 0..(1u32 << d) {
                let bits: Vec<u8> = (0..d).map(|k| (w >> k & 1) as u8).collect();
                assert_eq!(p.contains(&bits), w.count_ones() % 2 == 0, "d={d} w={w:b}");
            }
        }
    }

    #[test]
    fn gram_is_diagonal_without_degree_two_checks() {
        let h = crate::gf2code::testing::hamming7();
        let p = ParityPolytope::new(&h);
        assert_eq!(p.max_offdiag_gram(), 0);
        for i in 0..7 {
            assert_eq!(p.lambda()[i], (h.col_degree(i) * 8) as f64);
        }
        let two = single_check(vec![0, 1], 2);
        assert_eq!(two.max_offdiag_gram(), 2);
    }

    #[test]
    fn transpose_matches_dense() {
        let p = ParityPolytope::new(&crate::gf2code::testing::toy_3x6());
        let dense = dense_rows(&p);
        let x: Vec<f64> = (0..p.rows()).map(|r| (r as f64 * 0.37).sin()).collect();
        let at = p.apply_t(&x);
        for i in 0..p.n() {
            let expect: f64 = dense.iter().zip(&x).map(|(row, xr)| f64::from(row[i]) * xr).sum();
            assert!((at[i] - expect).abs() < 1e-12);
        }
    }
}
