//! Gray-mapped QPSK / 16QAM, exact soft demapping and soft-symbol moments.
//!
//! Bit labels are written `b₁ … b_Q`; point index `k` carries label `b₁` in
//! its most significant bit. Mapping formulas accept relaxed bits in `[0,1]`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Magnitude cap for every LLR entering or leaving this module.
pub const LLR_CAP: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Qpsk,
    Qam16,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModemError {
    #[error("expected {expected} bits per symbol, got {got}")]
    SegmentLength { expected: usize, got: usize },
    #[error("noise variance must be positive, got {0}")]
    Variance(f64),
}

impl Modulation {
    pub fn from_q(q: usize) -> Option<Self> {
        match q {
            2 => Some(Self::Qpsk),
            4 => Some(Self::Qam16),
            _ => None,
        }
    }

    /// Bits per symbol `Q`.
    pub fn q(self) -> usize {
        match self {
            Self::Qpsk => 2,
            Self::Qam16 => 4,
        }
    }

    pub fn size(self) -> usize {
        1 << self.q()
    }

    /// Label of point `k`, `b₁` first.
    pub fn label(self, k: usize) -> Vec<u8> {
        let q = self.q();
        (0..q).map(|p| (k >> (q - 1 - p) & 1) as u8).collect()
    }

    /// Constellation points in label order.
    pub fn points(self) -> Vec<Complex64> {
        (0..self.size())
            .map(|k| {
                let bits: Vec<f64> = self.label(k).iter().map(|&b| f64::from(b)).collect();
                self.map_unchecked(&bits)
            })
            .collect()
    }

    fn map_unchecked(self, b: &[f64]) -> Complex64 {
        match self {
            Self::Qpsk => Complex64::new(1.0 - 2.0 * b[0], 1.0 - 2.0 * b[1]) / 2f64.sqrt(),
            Self::Qam16 => {
                Complex64::new((1.0 - 2.0 * b[0]) * (1.0 + 2.0 * b[2]), (1.0 - 2.0 * b[1]) * (1.0 + 2.0 * b[3]))
                    / 10f64.sqrt()
            }
        }
    }

    /// `f(b)` for one symbol's (possibly relaxed) bit segment.
    pub fn map_bits(self, bits: &[f64]) -> Result<Complex64, ModemError> {
        if bits.len() != self.q() {
            return Err(ModemError::SegmentLength { expected: self.q(), got: bits.len() });
        }
        Ok(self.map_unchecked(bits))
    }

    /// Maps a whole relaxed bit vector, `Q` bits per symbol.
    pub fn map_relaxed(self, bits: &[f64]) -> Vec<Complex64> {
        assert_eq!(bits.len() % self.q(), 0, "bit count not a multiple of Q");
        bits.chunks(self.q()).map(|seg| self.map_unchecked(seg)).collect()
    }

    /// Maps a hard bit vector.
    pub fn map_hard(self, bits: &[u8]) -> Vec<Complex64> {
        let relaxed: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
        self.map_relaxed(&relaxed)
    }

    /// Extrinsic LLRs of one equalized observation `y = s + n`,
    /// `n ~ CN(0, variance)`, given prior LLRs on the symbol's bits.
    pub fn demap_llr(self, y: Complex64, variance: f64, prior: &[f64]) -> Result<Vec<f64>, ModemError> {
        if !(variance > 0.0) {
            return Err(ModemError::Variance(variance));
        }
        if prior.len() != self.q() {
            return Err(ModemError::SegmentLength { expected: self.q(), got: prior.len() });
        }
        let metrics: Vec<f64> =
            self.points().iter().map(|s| -(y - s).norm_sqr() / variance).collect();
        Ok(self.extrinsic_from_metrics(&metrics, prior))
    }

    /// Extrinsic LLRs from per-point log-likelihoods (label order).
    pub(crate) fn extrinsic_from_metrics(self, metrics: &[f64], prior: &[f64]) -> Vec<f64> {
        let q = self.q();
        let prior: Vec<f64> = prior.iter().map(|l| l.clamp(-LLR_CAP, LLR_CAP)).collect();
        let log_post: Vec<f64> = (0..self.size())
            .map(|k| metrics[k] + self.label(k).iter().zip(&prior).map(|(&b, &l)| log_prob(b, l)).sum::<f64>())
            .collect();
        (0..q)
            .map(|p| {
                let (zero, one): (Vec<f64>, Vec<f64>) = (0..self.size())
                    .map(|k| (k >> (q - 1 - p) & 1, log_post[k]))
                    .fold((Vec::new(), Vec::new()), |(mut z, mut o), (bit, v)| {
                        if bit == 0 { z.push(v) } else { o.push(v) }
                        (z, o)
                    });
                (log_sum_exp(&zero) - log_sum_exp(&one) - prior[p]).clamp(-LLR_CAP, LLR_CAP)
            })
            .collect()
    }

    /// Mean and variance of the symbol under independent bit priors.
    pub fn soft_symbol_stats(self, prior: &[f64]) -> (Complex64, f64) {
        assert_eq!(prior.len(), self.q());
        let mut mean = Complex64::new(0.0, 0.0);
        let mut energy = 0.0;
        for (k, s) in self.points().iter().enumerate() {
            let p: f64 = self
                .label(k)
                .iter()
                .zip(prior)
                .map(|(&b, &l)| log_prob(b, l.clamp(-LLR_CAP, LLR_CAP)).exp())
                .product();
            mean += s * p;
            energy += s.norm_sqr() * p;
        }
        (mean, (energy - mean.norm_sqr()).max(0.0))
    }
}

/// `log P(b)` for a bit with LLR `l = log P(0)/P(1)`.
pub(crate) fn log_prob(bit: u8, l: f64) -> f64 {
    let x = if bit == 0 { -l } else { l };
    // -log(1 + e^x)
    -(if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() })
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
