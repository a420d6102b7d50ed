//! Systematic encoding through GF(2) row reduction of `H`.

use super::{CodeError, ParityCheckMatrix};

/// Dense GF(2) row packed into 64-bit words.
#[derive(Clone)]
struct BitRow(Vec<u64>);

impl BitRow {
    fn zeros(len: usize) -> Self {
        Self(vec![0; len.div_ceil(64)])
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn xor(&mut self, other: &BitRow) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a ^= b);
    }
    fn is_zero(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }
    fn ones(&self, len: usize) -> Vec<usize> {
        (0..len).filter(|&i| self.get(i)).collect()
    }
}

/// Encoder built once per code. Pivot columns of the reduced row-echelon
/// form of `H` carry parity; the remaining columns carry the information
/// bits in increasing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoder {
    n: usize,
    info_positions: Vec<usize>,
    /// `(pivot column, information columns it depends on)`.
    parity: Vec<(usize, Vec<usize>)>,
}

impl Encoder {
    pub fn new(h: &ParityCheckMatrix) -> Result<Self, CodeError> {
        let (n, m) = (h.n(), h.m());
        let mut rows: Vec<BitRow> = (0..m)
            .map(|j| {
                let mut r = BitRow::zeros(n);
                h.row(j).iter().for_each(|&i| r.set(i));
                r
            })
            .collect();
        // Which original rows were summed into each working row.
        let mut origin: Vec<BitRow> = (0..m)
            .map(|j| {
                let mut r = BitRow::zeros(m);
                r.set(j);
                r
            })
            .collect();
        let mut pivots = Vec::with_capacity(m);
        let mut rank = 0;
        for col in 0..n {
            if rank == m {
                break;
            }
            let Some(p) = (rank..m).find(|&r| rows[r].get(col)) else { continue };
            rows.swap(rank, p);
            origin.swap(rank, p);
            for r in 0..m {
                if r != rank && rows[r].get(col) {
                    let (pivot_row, pivot_origin) = (rows[rank].clone(), origin[rank].clone());
                    rows[r].xor(&pivot_row);
                    origin[r].xor(&pivot_origin);
                }
            }
            pivots.push(col);
            rank += 1;
        }
        if rank < m {
            let mut dependent: Vec<usize> =
                (rank..m).filter(|&r| rows[r].is_zero()).flat_map(|r| origin[r].ones(m)).collect();
            dependent.sort_unstable();
            dependent.dedup();
            return Err(CodeError::RankDeficient { rows: dependent });
        }
        let is_pivot = {
            let mut v = vec![false; n];
            pivots.iter().for_each(|&p| v[p] = true);
            v
        };
        let info_positions: Vec<usize> = (0..n).filter(|&i| !is_pivot[i]).collect();
        let parity = pivots
            .iter()
            .zip(&rows)
            .map(|(&p, row)| (p, row.ones(n).into_iter().filter(|&i| i != p).collect()))
            .collect();
        Ok(Self { n, info_positions, parity })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of information bits `N - M`.
    pub fn k(&self) -> usize {
        self.info_positions.len()
    }

    /// Codeword positions carrying information bits.
    pub fn info_positions(&self) -> &[usize] {
        &self.info_positions
    }

    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>, CodeError> {
        if info.len() != self.k() {
            return Err(CodeError::Length { expected: self.k(), got: info.len() });
        }
        let mut word = vec![0u8; self.n];
        for (&pos, &bit) in self.info_positions.iter().zip(info) {
            word[pos] = bit & 1;
        }
        for (p, deps) in &self.parity {
            word[*p] = deps.iter().fold(0, |acc, &i| acc ^ word[i]);
        }
        Ok(word)
    }

    /// Information bits of a (decoded) word.
    pub fn extract_info(&self, word: &[u8]) -> Vec<u8> {
        self.info_positions.iter().map(|&i| word[i]).collect()
    }
}
