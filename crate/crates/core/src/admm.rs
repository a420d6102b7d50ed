//! Pieces shared by the Gaussian and sparse solvers: the bit update against
//! the linearized parity polytope and the relaxed/accelerated penalty update.
//!
//! Each symbol contributes a term `λ|f(b)|² − 2Re{f(b)* d}` to the bit
//! subproblem; `bit_coefficients` returns the affine derivative `βb + γ` of
//! that term in one bit with the others held fixed.

use num_complex::Complex64;

use crate::channel::FrameConfig;
use crate::gf2code::{ParityCheckMatrix, ParityPolytope};
use crate::linalg::CMat;
use crate::modem::Modulation;
use crate::receiver::SolverError;

/// Parity checks in both forms used by the solvers: `H` for syndrome tests
/// and the polytope for the relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeConstraints {
    pub h: ParityCheckMatrix,
    pub polytope: ParityPolytope,
    pub users: usize,
}

impl CodeConstraints {
    pub fn new(h: &ParityCheckMatrix) -> Self {
        Self { h: h.clone(), polytope: ParityPolytope::new(h), users: 1 }
    }

    /// Block-diagonal stack over users.
    pub fn stacked(codes: &[ParityCheckMatrix]) -> Self {
        let h = ParityCheckMatrix::stack(codes);
        Self { polytope: ParityPolytope::new(&h), h, users: codes.len() }
    }
}

/// `(β, γ)` for bit `p` (0-based) of a symbol whose current relaxed bits are
/// `seg`.
pub fn bit_coefficients(modulation: Modulation, lambda: f64, d: Complex64, seg: &[f64], p: usize) -> (f64, f64) {
    match modulation {
        Modulation::Qpsk => {
            let dp = if p == 0 { d.re } else { d.im };
            (4.0 * lambda, 2.0 * 2f64.sqrt() * dp - 2.0 * lambda)
        }
        Modulation::Qam16 => {
            let s10 = 10f64.sqrt();
            let dp = if p.is_multiple_of(2) { d.re } else { d.im };
            if p < 2 {
                // Sign bit; the amplitude bit sits two positions later.
                let a = 1.0 + 2.0 * seg[p + 2];
                (0.8 * lambda * a * a, 4.0 / s10 * a * dp - 0.4 * lambda * a * a)
            } else {
                let s = 1.0 - 2.0 * seg[p - 2];
                (0.8 * lambda * s * s, -4.0 / s10 * s * dp + 0.4 * lambda * s * s)
            }
        }
    }
}

/// One in-place sweep over every symbol's bits, `b₁ … b_Q` in order.
///
/// `rhs = Aᵀ(θ − z − η)`, `d` is the `N_str × T_D` linear term of the
/// surrogate and `lambda` its curvature. `penalty` is the concave weight
/// (α or κ) and `mu` the augmented-Lagrangian weight (μ or ρ).
#[allow(clippy::too_many_arguments)]
pub fn update_bits(
    cfg: &FrameConfig,
    polytope: &ParityPolytope,
    b: &mut [f64],
    rhs: &[f64],
    d: &CMat,
    lambda: f64,
    mu: f64,
    penalty: f64,
    layer: usize,
) -> Result<(), SolverError> {
    let q = cfg.modulation.q();
    let diag = polytope.lambda();
    for t in 0..cfg.t_d() {
        for r in 0..cfg.n_str() {
            let i0 = cfg.bit_index(r, t);
            let dv = d[(r, t)];
            for p in 0..q {
                let i = i0 + p;
                let (beta, gamma) = bit_coefficients(cfg.modulation, lambda, dv, &b[i0..i0 + q], p);
                let den = mu * diag[i] + beta - 2.0 * penalty;
                if !(den > 0.0) {
                    return Err(SolverError::Denominator { layer, bit: i, penalty, value: den });
                }
                b[i] = ((mu * rhs[i] - gamma - penalty) / den).clamp(0.0, 1.0);
            }
        }
    }
    Ok(())
}

/// Slack and scaled dual of `A b + z = θ`, plus the previous `w` needed by
/// the predictor-corrector step.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyState {
    pub z: Vec<f64>,
    pub eta: Vec<f64>,
    pub w_prev: Vec<f64>,
}

impl PenaltyState {
    /// `w⁰ = θ − A b⁰`, `z⁰ = relu(w⁰)`, `η⁰ = 0`.
    pub fn new(polytope: &ParityPolytope, b: &[f64]) -> Self {
        let ab = polytope.apply(b);
        let w: Vec<f64> = polytope.theta().iter().zip(&ab).map(|(&t, a)| f64::from(t) - a).collect();
        Self { z: w.iter().map(|v| v.max(0.0)).collect(), eta: vec![0.0; w.len()], w_prev: w }
    }

    /// `Aᵀ(θ − z − η)`.
    pub fn bit_rhs(&self, polytope: &ParityPolytope) -> Vec<f64> {
        let x: Vec<f64> = polytope
            .theta()
            .iter()
            .zip(self.z.iter().zip(&self.eta))
            .map(|(&t, (z, e))| f64::from(t) - z - e)
            .collect();
        polytope.apply_t(&x)
    }

    /// Relaxation `o_r`, predictor-corrector `o_p`; `(1, 0)` is plain ADMM.
    pub fn update(&mut self, polytope: &ParityPolytope, b: &[f64], o_r: f64, o_p: f64) {
        let ab = polytope.apply(b);
        for (r, &t) in polytope.theta().iter().enumerate() {
            let t = f64::from(t);
            let w = t - o_r * ab[r] - (1.0 - o_r) * (t - self.z[r]) - self.eta[r];
            let wp = self.w_prev[r];
            let z = w.max(0.0) + o_p * (w.max(0.0) - wp.max(0.0));
            self.z[r] = z;
            self.eta[r] = z - (1.0 + o_p) * w + o_p * wp;
            self.w_prev[r] = w;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf2code::{generate_regular_code, testing};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn phi(m: Modulation, lambda: f64, d: Complex64, seg: &[f64]) -> f64 {
        let f = m.map_bits(seg).unwrap();
        lambda * f.norm_sqr() - 2.0 * (f.conj() * d).re
    }

    #[test]
    fn qpsk_coefficient_examples() {
        let (b, g) = bit_coefficients(Modulation::Qpsk, 1.0, Complex64::new(0.0, 0.0), &[0.3, 0.3], 0);
        assert_eq!((b, g), (4.0, -2.0));
        let d = Complex64::new(2f64.sqrt(), 2f64.sqrt());
        let (_, g1) = bit_coefficients(Modulation::Qpsk, 1.0, d, &[0.0, 0.0], 0);
        assert!((g1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn coefficients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [Modulation::Qpsk, Modulation::Qam16] {
            for _ in 0..20 {
                let lambda = rng.random_range(0.1..5.0);
                let d = Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                let seg: Vec<f64> = (0..m.q()).map(|_| rng.random_range(0.0..1.0)).collect();
                for p in 0..m.q() {
                    let (beta, gamma) = bit_coefficients(m, lambda, d, &seg, p);
                    let h = 1e-6;
                    let (mut hi, mut lo) = (seg.clone(), seg.clone());
                    hi[p] += h;
                    lo[p] -= h;
                    let fd = (phi(m, lambda, d, &hi) - phi(m, lambda, d, &lo)) / (2.0 * h);
                    assert!((beta * seg[p] + gamma - fd).abs() < 1e-6, "{m:?} bit {p}");
                }
            }
        }
    }

    fn one_symbol_cfg(m: Modulation) -> FrameConfig {
        // One stream, one data slot: N = Q.
        FrameConfig::single_user(1, 1, m, m.q())
    }

    #[test]
    fn vanishing_mu_aligns_with_d() {
        let cfg = one_symbol_cfg(Modulation::Qpsk);
        let h = crate::gf2code::ParityCheckMatrix::from_rows(2, vec![vec![0, 1]]).unwrap();
        let poly = ParityPolytope::new(&h);
        let d = CMat::from_element(1, 1, Complex64::new(2f64.sqrt(), 2f64.sqrt()));
        let mut b = vec![0.5, 0.5];
        update_bits(&cfg, &poly, &mut b, &[0.0, 0.0], &d, 1.0, 1e-12, 0.0, 1).unwrap();
        assert_eq!(b, vec![0.0, 0.0]);

        let zero = CMat::zeros(1, 1);
        for alpha in [0.0, 0.5, 1.9] {
            let mut b = vec![0.1, 0.9];
            update_bits(&cfg, &poly, &mut b, &[0.0, 0.0], &zero, 1.0, 1e-12, alpha, 1).unwrap();
            assert!(b.iter().all(|v| (v - 0.5).abs() < 1e-9), "{b:?}");
        }
    }

    #[test]
    fn qpsk_update_matches_grid_minimum() {
        // Per-symbol objective with A = diag-free toy: μ/2 Σ Λ_i b_i² − μ rhs_i b_i
        // + φ(b) − α Σ (b_i² − b_i); both bits decouple for QPSK.
        let cfg = one_symbol_cfg(Modulation::Qpsk);
        let h = crate::gf2code::ParityCheckMatrix::from_rows(2, vec![vec![0, 1]]).unwrap();
        let poly = ParityPolytope::new(&h);
        let lam = poly.lambda().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let lambda = rng.random_range(0.2..3.0);
            let mu = rng.random_range(0.05..2.0);
            let alpha = rng.random_range(0.0..0.5);
            let dv = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let rhs = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let obj = |b: &[f64]| {
                let mut v = phi(Modulation::Qpsk, lambda, dv, b);
                for i in 0..2 {
                    v += 0.5 * mu * lam[i] * b[i] * b[i] - mu * rhs[i] * b[i] - alpha * (b[i] * b[i] - b[i]);
                }
                v
            };
            let mut best = (f64::INFINITY, 0.0, 0.0);
            for i in 0..=100 {
                for j in 0..=100 {
                    let g = [i as f64 / 100.0, j as f64 / 100.0];
                    let v = obj(&g);
                    if v < best.0 {
                        best = (v, g[0], g[1]);
                    }
                }
            }
            let mut b = vec![0.5, 0.5];
            let d = CMat::from_element(1, 1, dv);
            update_bits(&cfg, &poly, &mut b, &rhs, &d, lambda, mu, alpha, 1).unwrap();
            assert!((b[0] - best.1).abs() <= 0.01 + 1e-12 && (b[1] - best.2).abs() <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn non_positive_denominator_names_layer() {
        let cfg = one_symbol_cfg(Modulation::Qpsk);
        let h = crate::gf2code::ParityCheckMatrix::from_rows(2, vec![vec![0, 1]]).unwrap();
        let poly = ParityPolytope::new(&h);
        let d = CMat::zeros(1, 1);
        let mut b = vec![0.5, 0.5];
        let err = update_bits(&cfg, &poly, &mut b, &[0.0, 0.0], &d, 1.0, 1.0, 100.0, 7).unwrap_err();
        assert!(matches!(err, SolverError::Denominator { layer: 7, penalty, .. } if penalty == 100.0));
    }

    fn vanilla(poly: &ParityPolytope, b: &[f64], z: &mut [f64], eta: &mut [f64]) {
        let ab = poly.apply(b);
        for r in 0..z.len() {
            let t = f64::from(poly.theta()[r]);
            z[r] = (t - ab[r] - eta[r]).max(0.0);
            eta[r] += ab[r] + z[r] - t;
        }
    }

    #[test]
    fn default_relaxation_reproduces_plain_admm() {
        let h = generate_regular_code(24, 3, 6, 2).unwrap();
        let poly = ParityPolytope::new(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b0 = vec![0.5; 24];
        let mut ra = PenaltyState::new(&poly, &b0);
        let (mut z, mut eta) = (ra.z.clone(), ra.eta.clone());
        for _ in 0..50 {
            let b: Vec<f64> = (0..24).map(|_| rng.random_range(0.0..1.0)).collect();
            ra.update(&poly, &b, 1.0, 0.0);
            vanilla(&poly, &b, &mut z, &mut eta);
            let diff = ra.z.iter().zip(&z).chain(ra.eta.iter().zip(&eta)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn slack_passthrough_zeroes_dual() {
        let poly = ParityPolytope::new(&testing::hamming7());
        let b = vec![0.0; 7];
        let mut st = PenaltyState::new(&poly, &b);
        st.eta.iter_mut().for_each(|e| *e = -0.1);
        st.update(&poly, &b, 1.0, 0.0);
        assert!(st.eta.iter().all(|&e| e == 0.0));
    }

    proptest! {
        // With o_p ∈ [−1, 0] the slack is a non-negative combination of two
        // ReLUs; larger predictor weights can push it below zero.
        #[test]
        fn slack_stays_non_negative(seed in any::<u64>(), o_r in 0.5f64..1.8, o_p in -1.0f64..=0.0) {
            let poly = ParityPolytope::new(&testing::toy_3x6());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut st = PenaltyState::new(&poly, &[0.5; 6]);
            for _ in 0..20 {
                let b: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
                st.update(&poly, &b, o_r, o_p);
                prop_assert!(st.z.iter().all(|&z| z >= 0.0));
            }
        }
    }
}
