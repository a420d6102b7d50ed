//! Joint channel estimation and decoding under a Gaussian channel prior.
//!
//! The channel is eliminated in closed form, which leaves a bit problem whose
//! data-fit term is majorized around the previous iterate by
//! `λ‖f(b)‖² − 2Re tr(f(b)ᴴD)`. Each iteration refreshes `(V, λ, D)`, sweeps
//! the bits once and updates the polytope slack and dual.
//!
//! Two modes share the iteration:
//! * [`Mode::Algorithm`]: `V` from the full prior covariance and
//!   `λ = o_λ·λ_max(VᴴV)` every iteration.
//! * [`Mode::Network`]: the i.i.d.-form `V = YSᴴ(SSᴴ + υI)⁻¹` with
//!   `υ = o_υ·λ_max(σ²C⁻¹)`, and `λ = o_λ·λ₀` where `λ₀ = λ_max(V₀ᴴV₀)` is
//!   taken once from the pilot-only estimate at `b⁰`.

use nalgebra::Cholesky;

use crate::admm::{update_bits, CodeConstraints, PenaltyState};
use crate::channel::{effective_covariance, ChannelModel, FrameConfig};
use crate::gf2code::hard_decision;
use crate::linalg::{c, hcat, inverse_hpd, lambda_max_psd, scaled_identity, solve_hpd, unvectorize, vectorize, CMat};
use crate::params::{LayerG, ScheduleG};
use crate::receiver::{ReceiverOutput, SolverError};

/// Prior `vec(G) ~ CN(0, C_g)`, stored through its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    cov_inv: CMat,
    cov_inv_lmax: f64,
}

impl GaussianPrior {
    pub fn new(cov: &CMat) -> Result<Self, SolverError> {
        let cov_inv = inverse_hpd(cov)?;
        let cov_inv_lmax = lambda_max_psd(&cov_inv).value;
        Ok(Self { cov_inv, cov_inv_lmax })
    }

    pub fn iid(dim: usize, variance: f64) -> Self {
        Self { cov_inv: scaled_identity(dim, 1.0 / variance), cov_inv_lmax: 1.0 / variance }
    }

    pub fn from_model(cfg: &FrameConfig, model: &ChannelModel) -> Result<Self, SolverError> {
        Self::new(&effective_covariance(cfg, model)?)
    }

    pub fn cov_inv(&self) -> &CMat {
        &self.cov_inv
    }

    /// Bound on the largest eigenvalue of `C⁻¹`.
    pub fn cov_inv_lmax(&self) -> f64 {
        self.cov_inv_lmax
    }
}

fn check_dims(y: &CMat, s: &CMat) -> Result<(), SolverError> {
    if y.ncols() != s.ncols() {
        return Err(SolverError::Dimension(format!("Y has {} columns, S has {}", y.ncols(), s.ncols())));
    }
    Ok(())
}

/// Posterior-mean channel `(XᴴX + σ²C⁻¹)⁻¹Xᴴy` with `X = Sᵀ⊗I`, returned as
/// the `N_r × N_str` matrix.
pub fn estimate_g_closed_form(y: &CMat, s: &CMat, prior: &GaussianPrior, sigma2: f64) -> Result<CMat, SolverError> {
    check_dims(y, s)?;
    let (n_r, n_str) = (y.nrows(), s.nrows());
    if prior.cov_inv.nrows() != n_r * n_str {
        return Err(SolverError::Dimension(format!("prior is {}-dimensional, channel has {}", prior.cov_inv.nrows(), n_r * n_str)));
    }
    let gram = (s * s.adjoint()).transpose().kronecker(&CMat::identity(n_r, n_r));
    let r = gram + &prior.cov_inv * c(sigma2, 0.0);
    let rhs = vectorize(&(y * s.adjoint()));
    let g = solve_hpd(&r, &CMat::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
    Ok(unvectorize(&g.column(0).into_owned(), n_r, n_str))
}

/// `Y Sᴴ (SSᴴ + υI)⁻¹`, the closed form under an i.i.d. prior.
pub fn estimate_g_fast(y: &CMat, s: &CMat, upsilon: f64) -> Result<CMat, SolverError> {
    check_dims(y, s)?;
    let a = s * s.adjoint() + scaled_identity(s.nrows(), upsilon);
    // (SSᴴ + υI) Vᴴ = S Yᴴ
    Ok(solve_hpd(&a, &(s * y.adjoint()))?.adjoint())
}

/// Linear term `D = (λI − VᴴV)f(b_prev) + VᴴY_D`.
pub fn surrogate_linear_term(v: &CMat, y_d: &CMat, s_d_prev: &CMat, lambda: f64) -> CMat {
    let vhv = v.adjoint() * v;
    (scaled_identity(vhv.nrows(), lambda) - vhv) * s_d_prev + v.adjoint() * y_d
}

/// `λ‖S_D‖² − 2Re tr(S_Dᴴ D)`.
pub fn surrogate_value(lambda: f64, d: &CMat, s_d: &CMat) -> f64 {
    lambda * s_d.norm_squared() - 2.0 * s_d.zip_fold(d, 0.0, |acc, s, d| acc + (s.conj() * d).re)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Algorithm,
    Network,
}

/// Everything about one received frame that the iterations read.
#[derive(Debug, Clone, Copy)]
pub struct GaussianProblem<'a> {
    pub cfg: &'a FrameConfig,
    pub code: &'a CodeConstraints,
    pub y: &'a CMat,
    pub s_p: &'a CMat,
    pub prior: &'a GaussianPrior,
    pub sigma2: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub b: Vec<f64>,
    pub penalty: PenaltyState,
    /// Network-mode curvature anchor.
    pub lambda0: f64,
    /// Layers run so far.
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub early_stop: bool,
    pub record: bool,
    /// Overrides `b⁰ = 0.5`.
    pub b_init: Option<Vec<f64>>,
}

impl SolveOptions {
    pub fn new(max_iter: usize) -> Self {
        Self { max_iter, early_stop: true, record: false, b_init: None }
    }
}

impl<'a> GaussianProblem<'a> {
    fn validate(&self) -> Result<(), SolverError> {
        self.cfg.validate()?;
        let (cfg, y) = (self.cfg, self.y);
        if y.nrows() != cfg.n_r || y.ncols() != cfg.t() || self.s_p.nrows() != cfg.n_str() || self.s_p.ncols() != cfg.t_p {
            return Err(SolverError::Dimension(format!(
                "Y {}x{}, S_P {}x{} for N_r={}, N_str={}, T_P={}, T={}",
                y.nrows(),
                y.ncols(),
                self.s_p.nrows(),
                self.s_p.ncols(),
                cfg.n_r,
                cfg.n_str(),
                cfg.t_p,
                cfg.t()
            )));
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

    pub fn init(&self, b_init: Option<Vec<f64>>) -> Result<GaussianState, SolverError> {
        self.validate()?;
        let b = b_init.unwrap_or_else(|| vec![0.5; self.cfg.total_bits()]);
        if b.len() != self.cfg.total_bits() {
            return Err(SolverError::Dimension(format!("b⁰ has {} entries", b.len())));
        }
        let lambda0 = match self.mode {
            Mode::Network => {
                let s = hcat(self.s_p, &self.cfg.map_relaxed(&b));
                let v0 = estimate_g_fast(self.y, &s, self.sigma2 * self.prior.cov_inv_lmax)?;
                lambda_max_psd(&(v0.adjoint() * &v0)).value
            }
            Mode::Algorithm => 0.0,
        };
        let penalty = PenaltyState::new(&self.code.polytope, &b);
        Ok(GaussianState { b, penalty, lambda0, layer: 0 })
    }

    /// Channel estimate `V` at the current bits, as used inside an iteration.
    pub fn channel_step(&self, b: &[f64], p: &LayerG) -> Result<CMat, SolverError> {
        let s = hcat(self.s_p, &self.cfg.map_relaxed(b));
        match self.mode {
            Mode::Algorithm => estimate_g_closed_form(self.y, &s, self.prior, self.sigma2),
            Mode::Network => estimate_g_fast(self.y, &s, p.o_upsilon * self.sigma2 * self.prior.cov_inv_lmax),
        }
    }

    /// One iteration (or layer) with parameters `p`.
    pub fn step(&self, st: &mut GaussianState, p: &LayerG) -> Result<(), SolverError> {
        let layer = st.layer + 1;
        let s_d_prev = self.cfg.map_relaxed(&st.b);
        let v = self.channel_step(&st.b, p)?;
        let lambda = match self.mode {
            Mode::Algorithm => p.o_lambda * lambda_max_psd(&(v.adjoint() * &v)).value,
            Mode::Network => p.o_lambda * st.lambda0,
        };
        let d = surrogate_linear_term(&v, &self.y_d(), &s_d_prev, lambda);
        let rhs = st.penalty.bit_rhs(&self.code.polytope);
        update_bits(self.cfg, &self.code.polytope, &mut st.b, &rhs, &d, lambda, p.mu, p.alpha, layer)?;
        st.penalty.update(&self.code.polytope, &st.b, p.o_r, p.o_p);
        st.layer = layer;
        Ok(())
    }

    /// Hard decisions and the closed-form channel re-estimated with them.
    pub fn finish(&self, st: &GaussianState, trajectory: Option<Vec<Vec<f64>>>) -> Result<ReceiverOutput, SolverError> {
        let bits = hard_decision(&st.b);
        let s = hcat(self.s_p, &self.cfg.map_hard(&bits));
        let g_hat = estimate_g_closed_form(self.y, &s, self.prior, self.sigma2)?;
        let converged = self.code.h.syndrome_ok(&bits);
        Ok(ReceiverOutput { bits, g_hat, converged, iterations: st.layer, trajectory })
    }

    pub fn solve(&self, schedule: &ScheduleG, opts: &SolveOptions) -> Result<ReceiverOutput, SolverError> {
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
        self.finish(&st, traj)
    }
}

/// Single-user solve; the problem's code must match the frame.
pub fn solve(problem: &GaussianProblem<'_>, schedule: &ScheduleG, opts: &SolveOptions) -> Result<ReceiverOutput, SolverError> {
    problem.solve(schedule, opts)
}

/// Multiuser solve over stacked bits; `code` must be the block-diagonal
/// stack of the users' codes (see [`CodeConstraints::stacked`]).
pub fn solve_multiuser(problem: &GaussianProblem<'_>, schedule: &ScheduleG, opts: &SolveOptions) -> Result<ReceiverOutput, SolverError> {
    if problem.code.users != problem.cfg.users {
        return Err(SolverError::Dimension(format!("{} codes for {} users", problem.code.users, problem.cfg.users)));
    }
    problem.solve(schedule, opts)
}

/// `−wᴴR⁻¹w`: the channel-eliminated data-fit term up to `‖y‖²`.
pub fn concentrated_objective(y: &CMat, s: &CMat, prior: &GaussianPrior, sigma2: f64) -> Result<f64, SolverError> {
    let n_r = y.nrows();
    let gram = (s * s.adjoint()).transpose().kronecker(&CMat::identity(n_r, n_r));
    let r = gram + &prior.cov_inv * c(sigma2, 0.0);
    let w = vectorize(&(y * s.adjoint()));
    let chol = Cholesky::new(r).ok_or(crate::linalg::LinalgError::NotPositiveDefinite)?;
    let x = chol.solve(&w);
    Ok(-w.dotc(&x).re)
}
