//! LDPC code handling: parity-check matrices, alist I/O, a seeded regular
//! code generator, systematic encoding, parity polytopes and a sum-product
//! reference decoder.

mod alist;
mod bp;
mod construct;
mod encoder;
mod polytope;

pub use alist::{parse_alist, read_alist, to_alist, write_alist, AlistError};
pub use bp::{bp_decode, BpOutput};
pub use construct::generate_regular_code;
pub use encoder::Encoder;
pub use polytope::ParityPolytope;

use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodeError {
    #[error("position ({row}, {col}) outside a {m}x{n} matrix")]
    OutOfBounds { row: usize, col: usize, m: usize, n: usize },
    #[error("duplicate position ({row}, {col})")]
    Duplicate { row: usize, col: usize },
    #[error("row {0} has degree 0")]
    EmptyRow(usize),
    #[error("invalid code parameters: {0}")]
    Parameters(String),
    #[error("no valid code found within {attempts} attempts")]
    AttemptBudget { attempts: usize },
    #[error("parity-check matrix is rank deficient; dependent rows {rows:?}")]
    RankDeficient { rows: Vec<usize> },
    #[error("expected {expected} bits, got {got}")]
    Length { expected: usize, got: usize },
    #[error("non-finite LLR at position {0}")]
    NonFiniteLlr(usize),
}

/// Binary parity-check matrix `H` stored as sorted adjacency lists
/// (0-based indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityCheckMatrix {
    n: usize,
    rows: Vec<Vec<usize>>,
    cols: Vec<Vec<usize>>,
}

impl ParityCheckMatrix {
    /// Builds `H` from the column indices of each row.
    pub fn from_rows(n: usize, rows: Vec<Vec<usize>>) -> Result<Self, CodeError> {
        let m = rows.len();
        let mut cols = vec![Vec::new(); n];
        let mut sorted_rows = Vec::with_capacity(m);
        for (j, row) in rows.into_iter().enumerate() {
            if row.is_empty() {
                return Err(CodeError::EmptyRow(j));
            }
            let mut seen = HashSet::with_capacity(row.len());
            for &i in &row {
                if i >= n {
                    return Err(CodeError::OutOfBounds { row: j, col: i, m, n });
                }
                if !seen.insert(i) {
                    return Err(CodeError::Duplicate { row: j, col: i });
                }
                cols[i].push(j);
            }
            let mut row = row;
            row.sort_unstable();
            sorted_rows.push(row);
        }
        Ok(Self { n, rows: sorted_rows, cols })
    }

    /// Builds `H` from a dense 0/1 row-major description.
    pub fn from_dense(dense: &[Vec<u8>]) -> Result<Self, CodeError> {
        let n = dense.first().map_or(0, |r| r.len());
        let rows = dense
            .iter()
            .map(|r| r.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, _)| i).collect())
            .collect();
        Self::from_rows(n, rows)
    }

    /// Code length `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of checks `M`.
    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, j: usize) -> &[usize] {
        &self.rows[j]
    }

    pub fn col(&self, i: usize) -> &[usize] {
        &self.cols[i]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn row_degree(&self, j: usize) -> usize {
        self.rows[j].len()
    }

    pub fn col_degree(&self, i: usize) -> usize {
        self.cols[i].len()
    }

    pub fn edges(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Sorted `(row, col)` positions.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(j, r)| r.iter().map(move |&i| (j, i)))
            .collect()
    }

    /// True iff every check has even parity on `bits` (hard 0/1 values).
    pub fn syndrome_ok(&self, bits: &[u8]) -> bool {
        debug_assert_eq!(bits.len(), self.n);
        self.rows.iter().all(|r| r.iter().fold(0u8, |acc, &i| acc ^ (bits[i] & 1)) == 0)
    }

    /// Number of length-4 cycles (pairs of columns sharing two rows).
    pub fn four_cycles(&self) -> usize {
        let mut count = 0;
        for j1 in 0..self.m() {
            for j2 in (j1 + 1)..self.m() {
                let shared = intersect_count(&self.rows[j1], &self.rows[j2]);
                count += shared * shared.saturating_sub(1) / 2;
            }
        }
        count
    }

    /// Block-diagonal stacking of several codes (multiuser bit vector).
    pub fn stack(codes: &[ParityCheckMatrix]) -> ParityCheckMatrix {
        let mut rows = Vec::new();
        let mut offset = 0;
        for code in codes {
            rows.extend(code.rows.iter().map(|r| r.iter().map(|&i| i + offset).collect()));
            offset += code.n;
        }
        Self::from_rows(offset, rows).expect("stacking valid codes stays valid")
    }
}

fn intersect_count(a: &[usize], b: &[usize]) -> usize {
    let (mut x, mut y, mut n) = (0, 0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                x += 1;
                y += 1;
            }
        }
    }
    n
}

/// Hard decision of relaxed bits: `b ≥ 0.5 → 1`.
pub fn hard_decision(relaxed: &[f64]) -> Vec<u8> {
    relaxed.iter().map(|&b| u8::from(b >= 0.5)).collect()
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    #[test]
    fn rejects_bad_positions() {
        assert!(matches!(
            ParityCheckMatrix::from_rows(4, vec![vec![0, 4]]),
            Err(CodeError::OutOfBounds { row: 0, col: 4, .. })
        ));
        assert!(matches!(
            ParityCheckMatrix::from_rows(4, vec![vec![1, 1]]),
            Err(CodeError::Duplicate { row: 0, col: 1 })
        ));
        assert!(matches!(ParityCheckMatrix::from_rows(4, vec![vec![]]), Err(CodeError::EmptyRow(0))));
    }

    #[test]
    fn degrees_and_syndrome() {
        let h = hamming7();
        assert_eq!((h.m(), h.n()), (3, 7));
        assert_eq!(h.col_degree(6), 3);
        assert_eq!(h.row_degree(0), 4);
        assert!(h.syndrome_ok(&[0; 7]));
        assert!(!h.syndrome_ok(&[1, 0, 0, 0, 0, 0, 0]));
        assert!(h.syndrome_ok(&[1, 1, 1, 0, 0, 0, 0]));
    }

    #[test]
    fn syndrome_matches_null_space() {
        let h = toy_3x6();
        let brute: HashSet<Vec<u8>> = null_space_brute(&h).into_iter().collect();
        for w in 0..64u32 {
            let word: Vec<u8> = (0..6).map(|i| ((w >> i) & 1) as u8).collect();
            assert_eq!(h.syndrome_ok(&word), brute.contains(&word));
        }
        assert_eq!(brute.len(), 8);
    }

    #[test]
    fn stacking_offsets_columns() {
        let h = ParityCheckMatrix::stack(&[hamming7(), toy_3x6()]);
        assert_eq!((h.m(), h.n()), (6, 13));
        assert_eq!(h.row(3), &[7, 8, 10]);
    }

    #[test]
    fn four_cycle_count() {
        // Rows {0,1,2} and {0,1,3} share two columns: one 4-cycle.
        let h = ParityCheckMatrix::from_rows(4, vec![vec![0, 1, 2], vec![0, 1, 3]]).unwrap();
        assert_eq!(h.four_cycles(), 1);
        assert_eq!(hamming7().four_cycles(), 3);
    }
}
