//! Joint channel estimation and decoding for sparse beamspace channels.
//!
//! The effective channel is `G = F_r G_s B` with `B = blockdiag(F_tᴴW)`
//! (`F_tᴴ` without a precoder). Each iteration takes one proximal-gradient
//! step on `G_s` under an L1 prior, then one majorized bit sweep and the
//! relaxed/accelerated slack and dual update.
//!
//! The step size is `τ / L` with `L = λ_max((BS)(BS)ᴴ)` recomputed from the
//! current soft symbols, so `τ = 1` is always a safe step.

use num_complex::Complex64;

use crate::admm::{update_bits, CodeConstraints, PenaltyState};
use crate::channel::{beamspace_dft, transmit_basis, FrameConfig, SvParams};
use crate::gf2code::hard_decision;
use crate::jcdd_gaussian::{estimate_g_fast, surrogate_linear_term, Mode, SolveOptions};
use crate::linalg::{hcat, inverse_hpd, lambda_max_psd, CMat};
use crate::params::{LayerS, ScheduleS};
use crate::receiver::{ReceiverOutput, SolverError};

/// Soft threshold `(x/|x|)·max(|x| − t, 0)`.
pub fn shrinkage(x: Complex64, t: f64) -> Complex64 {
    let m = x.norm();
    if m <= t || m == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        x * ((m - t) / m)
    }
}

/// Receive DFT and transmit basis of a beamspace channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamspace {
    pub f_r: CMat,
    pub basis: CMat,
}

impl Beamspace {
    pub fn new(cfg: &FrameConfig, sv: &SvParams) -> Self {
        Self { f_r: beamspace_dft(sv.rx_y, sv.rx_z), basis: transmit_basis(cfg, sv) }
    }

    /// `F_r G_s B`.
    pub fn effective(&self, g_s: &CMat) -> CMat {
        &self.f_r * g_s * &self.basis
    }

    /// Minimum-norm `G_s` with `F_r G_s B = G`.
    pub fn to_beamspace(&self, g: &CMat) -> Result<CMat, SolverError> {
        let b = &self.basis;
        let pinv = inverse_hpd(&(b.adjoint() * b))? * b.adjoint();
        Ok(self.f_r.adjoint() * g * pinv)
    }
}

/// Conjugate gradient `(G_s B S − F_rᴴY)(BS)ᴴ` of `‖F_rᴴY − G_s B S‖²`.
pub fn pgd_gradient(g_s: &CMat, y: &CMat, s: &CMat, beams: &Beamspace) -> CMat {
    let bs = &beams.basis * s;
    (g_s * &bs - beams.f_r.adjoint() * y) * bs.adjoint()
}

/// One proximal-gradient step with absolute step `tau` and threshold
/// `σ²ετ`.
pub fn pgd_channel_step(g_s: &CMat, y: &CMat, s: &CMat, beams: &Beamspace, sigma2: f64, epsilon: f64, tau: f64) -> CMat {
    let grad = pgd_gradient(g_s, y, s, beams);
    let t = sigma2 * epsilon * tau;
    (g_s - grad * Complex64::new(tau, 0.0)).map(|x| shrinkage(x, t))
}

/// Lipschitz constant `λ_max((BS)(BS)ᴴ)` of the channel-fit gradient.
pub fn gradient_lipschitz(s: &CMat, beams: &Beamspace) -> f64 {
    let bs = &beams.basis * s;
    lambda_max_psd(&(&bs * bs.adjoint())).value
}

/// `λ_max(GᴴG)`.
pub fn chi_bound(g: &CMat) -> f64 {
    lambda_max_psd(&(g.adjoint() * g)).value
}

#[derive(Debug, Clone, Copy)]
pub struct SparseProblem<'a> {
    pub cfg: &'a FrameConfig,
    pub code: &'a CodeConstraints,
    pub y: &'a CMat,
    pub s_p: &'a CMat,
    pub beams: &'a Beamspace,
    pub sigma2: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseState {
    pub g_s: CMat,
    /// `F_r G_s B` for the current `G_s`.
    pub g: CMat,
    pub b: Vec<f64>,
    pub penalty: PenaltyState,
    /// `λ_max(G⁰ᴴG⁰)`, the network-mode anchor for `χ`.
    pub chi0: f64,
    pub layer: usize,
}

impl<'a> SparseProblem<'a> {
    fn validate(&self) -> Result<(), SolverError> {
        self.cfg.validate()?;
        let cfg = self.cfg;
        if self.y.shape() != (cfg.n_r, cfg.t()) || self.s_p.shape() != (cfg.n_str(), cfg.t_p) {
            return Err(SolverError::Dimension(format!("Y {:?}, S_P {:?}", self.y.shape(), self.s_p.shape())));
        }
        if self.beams.f_r.nrows() != cfg.n_r || self.beams.basis.ncols() != cfg.n_str() {
            return Err(SolverError::Dimension("beamspace bases do not match the frame".into()));
        }
        if self.code.polytope.n() != cfg.total_bits() {
            return Err(SolverError::Dimension(format!("code has {} bits, frame carries {}", self.code.polytope.n(), cfg.total_bits())));
        }
        if !(self.sigma2 > 0.0) {
            return Err(SolverError::Dimension(format!("σ² must be positive, got {}", self.sigma2)));
        }
        Ok(())
    }

    fn y_d(&self) -> CMat {
        self.y.columns(self.cfg.t_p, self.cfg.t_d()).into_owned()
    }

    /// `G_s⁰` from the regularized pilot-only least squares.
    pub fn initial_channel(&self) -> Result<CMat, SolverError> {
        let y_p = self.y.columns(0, self.cfg.t_p).into_owned();
        let g0 = estimate_g_fast(&y_p, self.s_p, self.sigma2)?;
        self.beams.to_beamspace(&g0)
    }

    pub fn init(&self, b_init: Option<Vec<f64>>) -> Result<SparseState, SolverError> {
        self.validate()?;
        let b = b_init.unwrap_or_else(|| vec![0.5; self.cfg.total_bits()]);
        if b.len() != self.cfg.total_bits() {
            return Err(SolverError::Dimension(format!("b⁰ has {} entries", b.len())));
        }
        let g_s = self.initial_channel()?;
        let g = self.beams.effective(&g_s);
        let chi0 = chi_bound(&g);
        let penalty = PenaltyState::new(&self.code.polytope, &b);
        Ok(SparseState { g_s, g, b, penalty, chi0, layer: 0 })
    }

    pub fn step(&self, st: &mut SparseState, p: &LayerS) -> Result<(), SolverError> {
        let layer = st.layer + 1;
        let s_d_prev = self.cfg.map_relaxed(&st.b);
        let s = hcat(self.s_p, &s_d_prev);
        let tau = p.tau / gradient_lipschitz(&s, self.beams);
        st.g_s = pgd_channel_step(&st.g_s, self.y, &s, self.beams, self.sigma2, p.epsilon, tau);
        st.g = self.beams.effective(&st.g_s);
        let chi = match self.mode {
            Mode::Algorithm => p.varrho_chi * chi_bound(&st.g),
            Mode::Network => p.varrho_chi * st.chi0,
        };
        let xi = surrogate_linear_term(&st.g, &self.y_d(), &s_d_prev, chi);
        let rhs = st.penalty.bit_rhs(&self.code.polytope);
        update_bits(self.cfg, &self.code.polytope, &mut st.b, &rhs, &xi, chi, p.rho, p.kappa, layer)?;
        st.penalty.update(&self.code.polytope, &st.b, p.varrho_r, p.varrho_p);
        st.layer = layer;
        Ok(())
    }

    pub fn finish(&self, st: &SparseState, trajectory: Option<Vec<Vec<f64>>>) -> ReceiverOutput {
        let bits = hard_decision(&st.b);
        let converged = self.code.h.syndrome_ok(&bits);
        ReceiverOutput { bits, g_hat: st.g.clone(), converged, iterations: st.layer, trajectory }
    }

    pub fn solve(&self, schedule: &ScheduleS, opts: &SolveOptions) -> Result<ReceiverOutput, SolverError> {
        let mut st = self.init(opts.b_init.clone())?;
        let mut traj = opts.record.then(Vec::new);
        for l in 1..=opts.max_iter {
            self.step(&mut st, &schedule.layer(l))?;
            if let Some(t) = traj.as_mut() {
                t.push(st.b.clone());
            }
            if opts.early_stop && self.code.h.syndrome_ok(&hard_decision(&st.b)) {
                break;
            }
        }
        Ok(self.finish(&st, traj))
    }
}

pub fn solve(problem: &SparseProblem<'_>, schedule: &ScheduleS, opts: &SolveOptions) -> Result<ReceiverOutput, SolverError> {
    problem.solve(schedule, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{cn_matrix, generate_pilots, snr_db_to_sigma2, ChannelModel, FrameDraw};
    use crate::gf2code::{generate_regular_code, Encoder};
    use crate::linalg::{c, hermitian_eigenvalues, max_abs_diff, scaled_identity, unitary_dft};
    use crate::modem::Modulation;
    use crate::params::LayerSchedule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shrinkage_examples() {
        assert_eq!(shrinkage(c(2.0, 0.0), 1.0), c(1.0, 0.0));
        assert_eq!(shrinkage(Complex64::from_polar(0.5, 0.7), 1.0), c(0.0, 0.0));
        assert_eq!(shrinkage(c(0.0, 0.0), 0.0), c(0.0, 0.0));
    }

    #[test]
    fn shrinkage_is_the_l1_prox() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let step = 1e-3;
        for _ in 0..1000 {
            let x = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let t = rng.random_range(0.0..0.8);
            let out = shrinkage(x, t);
            // Minimizer lies on the segment from 0 to x; search a polar grid
            // around it wide enough to catch anything off that segment.
            let obj = |z: Complex64| t * z.norm() + 0.5 * (z - x).norm_sqr();
            let mut best = (obj(c(0.0, 0.0)), c(0.0, 0.0));
            let n = (x.norm() / step).ceil() as i64 + 2;
            for k in 0..=n {
                for dphi in [-0.01, 0.0, 0.01] {
                    let z = Complex64::from_polar(k as f64 * step, x.arg() + dphi);
                    let v = obj(z);
                    if v < best.0 {
                        best = (v, z);
                    }
                }
            }
            assert!((out - best.1).norm() <= step, "x={x} t={t} out={out} grid={}", best.1);
        }
    }

    fn beams(n_t: usize, n_r: usize) -> Beamspace {
        Beamspace { f_r: unitary_dft(n_r), basis: unitary_dft(n_t).adjoint() }
    }

    fn residual(g_s: &CMat, y: &CMat, s: &CMat, bm: &Beamspace) -> f64 {
        (bm.f_r.adjoint() * y - g_s * &bm.basis * s).norm_squared()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bm = beams(3, 4);
        for _ in 0..10 {
            let g_s = cn_matrix(4, 3, &mut rng);
            let y = cn_matrix(4, 6, &mut rng);
            let s = cn_matrix(3, 6, &mut rng);
            let grad = pgd_gradient(&g_s, &y, &s, &bm);
            let h = 1e-6;
            for k in 0..g_s.len() {
                // d r / d Re = 2 Re ∇, d r / d Im = 2 Im ∇ for the conjugate gradient.
                for (dir, want) in [(c(1.0, 0.0), 2.0 * grad[k].re), (c(0.0, 1.0), 2.0 * grad[k].im)] {
                    let (mut hi, mut lo) = (g_s.clone(), g_s.clone());
                    hi[k] += dir * h;
                    lo[k] -= dir * h;
                    let fd = (residual(&hi, &y, &s, &bm) - residual(&lo, &y, &s, &bm)) / (2.0 * h);
                    assert!((fd - want).abs() < 1e-5, "{fd} vs {want}");
                }
            }
        }
    }

    #[test]
    fn plain_gradient_steps_do_not_increase_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bm = beams(4, 8);
        let y = cn_matrix(8, 16, &mut rng);
        let s = cn_matrix(4, 16, &mut rng);
        let tau = 1.0 / gradient_lipschitz(&s, &bm);
        let mut g_s = CMat::zeros(8, 4);
        let mut prev = residual(&g_s, &y, &s, &bm);
        for _ in 0..100 {
            g_s = pgd_channel_step(&g_s, &y, &s, &bm, 1.0, 0.0, tau);
            let r = residual(&g_s, &y, &s, &bm);
            assert!(r <= prev + 1e-9 * prev);
            prev = r;
        }
    }

    #[test]
    fn true_channel_is_stationary_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bm = beams(4, 8);
        let g_s = cn_matrix(8, 4, &mut rng);
        let s = cn_matrix(4, 10, &mut rng);
        let y = bm.effective(&g_s) * &s;
        let next = pgd_channel_step(&g_s, &y, &s, &bm, 1.0, 0.0, 0.1);
        assert!(max_abs_diff(&next, &g_s) < 1e-12);
    }

    #[test]
    fn chi_examples_and_bound() {
        assert!((chi_bound(&CMat::identity(3, 3)) - 1.0).abs() < 1e-9);
        let d = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0, 0.0), c(2.0, 0.0)]));
        assert!((chi_bound(&d) - 4.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let g = cn_matrix(8, 4, &mut rng);
            let chi = chi_bound(&g);
            let svd = g.clone().svd(false, false);
            let top = svd.singular_values.max().powi(2);
            assert!((chi - top).abs() <= 1e-8 * top);
            assert!(hermitian_eigenvalues(&(scaled_identity(4, chi) - g.adjoint() * &g))[0] >= -1e-8);
        }
    }

    #[test]
    fn unitary_channel_gives_matched_filter_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = unitary_dft(4);
        let y_d = cn_matrix(4, 3, &mut rng);
        let prev = cn_matrix(4, 3, &mut rng);
        let xi = surrogate_linear_term(&g, &y_d, &prev, 1.0);
        assert!(max_abs_diff(&xi, &(g.adjoint() * y_d)) < 1e-12);
    }

    fn sv_frame(seed: u64, snr_db: f64, h: &crate::gf2code::ParityCheckMatrix) -> (FrameConfig, SvParams, crate::channel::Frame) {
        // Two precoded streams between 2x2 and 2x4 arrays.
        let sv = SvParams::new(2, 4, (2, 2), (2, 4));
        let cfg = FrameConfig { precoder: Some(crate::channel::default_precoder()), t_p: 2, ..FrameConfig::single_user(4, 8, Modulation::Qpsk, h.n()) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = FrameDraw::new(&cfg, &ChannelModel::SalehValenzuela(sv.clone()), &[Encoder::new(h).unwrap()], &mut rng).unwrap();
        let frame = draw.realize(&cfg, &generate_pilots(2, 2), snr_db_to_sigma2(snr_db));
        (cfg, sv, frame)
    }

    #[test]
    fn beamspace_round_trip_with_precoder() {
        let sv = SvParams::new(2, 4, (2, 2), (2, 4));
        let cfg = FrameConfig { precoder: Some(crate::channel::default_precoder()), t_p: 2, ..FrameConfig::single_user(4, 8, Modulation::Qpsk, 96) };
        let bm = Beamspace::new(&cfg, &sv);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g_s = cn_matrix(8, 4, &mut rng);
        let g = bm.effective(&g_s);
        let back = bm.to_beamspace(&g).unwrap();
        assert!(max_abs_diff(&bm.effective(&back), &g) < 1e-12);
    }

    #[test]
    fn high_snr_sv_frames_decode() {
        // Some SV draws are near rank one and fail even with known CSI, so
        // this checks a success rate rather than every frame.
        let h = generate_regular_code(96, 3, 6, 1).unwrap();
        let code = CodeConstraints::new(&h);
        let sched = LayerSchedule::constant(crate::params::default_layer_s());
        for mode in [Mode::Algorithm, Mode::Network] {
            let mut ok = 0;
            for seed in 0..20 {
                let (cfg, sv, frame) = sv_frame(seed, 25.0, &h);
                let bm = Beamspace::new(&cfg, &sv);
                let p = SparseProblem { cfg: &cfg, code: &code, y: &frame.y, s_p: &frame.s_p, beams: &bm, sigma2: frame.sigma2, mode };
                let opts = SolveOptions { record: true, ..SolveOptions::new(100) };
                let out = p.solve(&sched, &opts).unwrap();
                assert!(out.trajectory.unwrap().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
                ok += (out.converged && out.bits == frame.bits) as usize;
            }
            println!("{mode:?}: {ok}/20");
            assert!(ok >= 17, "{mode:?}: {ok}/20");
        }
    }

    #[test]
    fn state_keeps_beamspace_consistency() {
        let h = generate_regular_code(96, 3, 6, 1).unwrap();
        let code = CodeConstraints::new(&h);
        let (cfg, sv, frame) = sv_frame(9, 5.0, &h);
        let bm = Beamspace::new(&cfg, &sv);
        let p = SparseProblem { cfg: &cfg, code: &code, y: &frame.y, s_p: &frame.s_p, beams: &bm, sigma2: frame.sigma2, mode: Mode::Network };
        let mut st = p.init(None).unwrap();
        for _ in 0..20 {
            p.step(&mut st, &crate::params::default_layer_s()).unwrap();
            assert!(max_abs_diff(&st.g, &bm.effective(&st.g_s)) < 1e-12);
            assert!(st.penalty.z.iter().all(|&u| u >= 0.0));
        }
    }
}
