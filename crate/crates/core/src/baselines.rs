//! Reference receivers: pilot-based channel estimation, soft MIMO detection
//! and the decoupled / iterative detection-decoding (IDD) / iterative
//! channel estimation, detection and decoding (ICDD) loops around a
//! belief-propagation decoder.
//!
//! Detectors emit extrinsic LLRs; the decoder's extrinsic output
//! (posterior minus its channel input) is the next round's detector prior.
//!
//! ICDD re-estimates the channel after every decoding round with the soft
//! data symbols as extra pilots. Column `t` carries extra noise
//! `Σ_k v_{kt}·ḡ` (`v` the symbol variance, `ḡ` the mean channel power per
//! entry); every column is whitened to the common level `σ²` before the
//! estimator runs.

use num_complex::Complex64;

use crate::admm::CodeConstraints;
use crate::channel::FrameConfig;
use crate::gf2code::bp_decode;
use crate::jcdd_gaussian::{estimate_g_closed_form, GaussianPrior};
use crate::jcdd_sparse::{gradient_lipschitz, pgd_channel_step, Beamspace};
use crate::linalg::{c, hcat, inverse_hpd, scaled_identity, CMat, CVec};
use crate::modem::{log_prob, LLR_CAP};
use crate::receiver::{ReceiverOutput, SolverError};

/// Largest `N_str·Q` the MAP detector will enumerate.
pub const MAP_MAX_BITS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TurboConfig {
    pub turbo_iters: usize,
    pub bp_iters: usize,
    pub ista_iters: usize,
}

impl Default for TurboConfig {
    fn default() -> Self {
        Self { turbo_iters: 10, bp_iters: 100, ista_iters: 100 }
    }
}

impl TurboConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.turbo_iters == 0 || self.bp_iters == 0 || self.ista_iters == 0 {
            return Err(SolverError::Unsupported("turbo, BP and ISTA iteration counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Pilot-only posterior mean of the channel.
pub fn lmmse_channel_estimate(y_p: &CMat, s_p: &CMat, prior: &GaussianPrior, sigma2: f64) -> Result<CMat, SolverError> {
    estimate_g_closed_form(y_p, s_p, prior, sigma2)
}

/// `‖F_rᴴY − G_s B S‖² + σ²ε‖G_s‖₁`.
pub fn lasso_objective(g_s: &CMat, y: &CMat, s: &CMat, beams: &Beamspace, sigma2: f64, epsilon: f64) -> f64 {
    let fit = (beams.f_r.adjoint() * y - g_s * &beams.basis * s).norm_squared();
    fit + sigma2 * epsilon * g_s.iter().map(|x| x.norm()).sum::<f64>()
}

/// ISTA on [`lasso_objective`] from `G_s = 0`; returns the beamspace
/// iterate. The conjugate gradient is half the real gradient, so the
/// threshold for step `1/L` is `σ²ε/(2L)`.
pub fn ista_beamspace(y: &CMat, s: &CMat, beams: &Beamspace, sigma2: f64, epsilon: f64, iters: usize) -> CMat {
    let lip = gradient_lipschitz(s, beams);
    let mut g_s = CMat::zeros(beams.f_r.ncols(), beams.basis.nrows());
    if lip <= 0.0 {
        return g_s;
    }
    for _ in 0..iters {
        g_s = pgd_channel_step(&g_s, y, s, beams, sigma2, epsilon / 2.0, 1.0 / lip);
    }
    g_s
}

/// Effective-channel estimate `F_r G_s B` from ISTA.
pub fn ista_channel_estimate(y_p: &CMat, s_p: &CMat, beams: &Beamspace, sigma2: f64, epsilon: f64, iters: usize) -> CMat {
    beams.effective(&ista_beamspace(y_p, s_p, beams, sigma2, epsilon, iters))
}

/// Per-entry error variance of an estimate from regressors `s`, assuming
/// an i.i.d. prior of variance `prior_var`.
pub fn estimation_mse(s: &CMat, sigma2: f64, prior_var: f64) -> Result<f64, SolverError> {
    let n = s.nrows();
    let cov = inverse_hpd(&(s * s.adjoint() + scaled_identity(n, sigma2 / prior_var)))? * c(sigma2, 0.0);
    Ok(cov.diagonal().iter().map(|v| v.re).sum::<f64>() / n as f64)
}

/// Soft interference cancellation followed by per-stream MMSE filtering.
/// `prior` holds `N_str·Q` LLRs, stream-major. Returns extrinsic LLRs in the
/// same layout.
pub fn mmse_detect_soft(cfg: &FrameConfig, y: &[Complex64], g: &CMat, prior: &[f64], noise_var: f64) -> Result<Vec<f64>, SolverError> {
    let (m, q) = (cfg.modulation, cfg.modulation.q());
    let n = g.ncols();
    if prior.len() != n * q || y.len() != g.nrows() {
        return Err(SolverError::Dimension(format!("{} priors, {} observations for a {}x{n} channel", prior.len(), y.len(), g.nrows())));
    }
    let stats: Vec<(Complex64, f64)> = prior.chunks(q).map(|p| m.soft_symbol_stats(p)).collect();
    let y = nalgebra::DVector::from_column_slice(y);
    let mean = nalgebra::DVector::from_iterator(n, stats.iter().map(|s| s.0));
    let resid = &y - g * &mean;
    // G V Gᴴ + N0 I
    let var = CMat::from_diagonal(&nalgebra::DVector::from_iterator(n, stats.iter().map(|s| c(s.1, 0.0))));
    let base = g * var * g.adjoint() + scaled_identity(g.nrows(), noise_var);
    let mut out = Vec::with_capacity(n * q);
    for k in 0..n {
        let gk = g.column(k).into_owned();
        let w = filter(&base, &gk, stats[k].1)?;
        let gain = gk.dotc(&w).re;
        if !(gain > f64::MIN_POSITIVE) {
            // No energy from this stream reaches the filter.
            out.extend(std::iter::repeat_n(0.0, q));
            continue;
        }
        let z = w.dotc(&(&resid + &gk * stats[k].0)) / gain;
        let llr = m.demap_llr(z, 1.0 / gain, &prior[k * q..(k + 1) * q])?;
        out.extend(llr);
    }
    Ok(out)
}

/// `C_k⁻¹g_k` with `C_k` the interference-plus-noise covariance of stream
/// `k`, obtained by removing its own variance `v_k` from `base = GVGᴴ + N0I`.
fn filter(base: &CMat, gk: &CVec, v_k: f64) -> Result<CVec, SolverError> {
    let cov = base - gk * gk.adjoint() * c(v_k, 0.0);
    Ok(inverse_hpd(&cov)? * gk)
}

/// Post-filter SINR `g_kᴴC_k⁻¹g_k` of stream `k` given per-stream symbol
/// variances.
pub fn mmse_stream_sinr(g: &CMat, variances: &[f64], noise_var: f64, k: usize) -> f64 {
    let var = CMat::from_diagonal(&nalgebra::DVector::from_iterator(g.ncols(), variances.iter().map(|&v| c(v, 0.0))));
    let base = g * var * g.adjoint() + scaled_identity(g.nrows(), noise_var);
    let gk = g.column(k).into_owned();
    filter(&base, &gk, variances[k]).map_or(0.0, |w| gk.dotc(&w).re)
}

/// Exact MAP detection by enumeration over all `2^{N_str·Q}` transmit
/// vectors. Returns extrinsic LLRs, stream-major.
pub fn map_detect(cfg: &FrameConfig, y: &[Complex64], g: &CMat, prior: &[f64], noise_var: f64) -> Result<Vec<f64>, SolverError> {
    let (m, q) = (cfg.modulation, cfg.modulation.q());
    let n = g.ncols();
    let bits = n * q;
    if bits > MAP_MAX_BITS {
        return Err(SolverError::Unsupported(format!("MAP enumeration over {bits} bits exceeds {MAP_MAX_BITS}")));
    }
    if prior.len() != bits || y.len() != g.nrows() {
        return Err(SolverError::Dimension(format!("{} priors, {} observations for a {}x{n} channel", prior.len(), y.len(), g.nrows())));
    }
    let points = m.points();
    let prior: Vec<f64> = prior.iter().map(|l| l.clamp(-LLR_CAP, LLR_CAP)).collect();
    // Bit j of the hypothesis index (MSB first) is stacked bit j.
    let bit = |h: usize, j: usize| (h >> (bits - 1 - j) & 1) as u8;
    let mut best0 = vec![f64::NEG_INFINITY; bits];
    let mut best1 = vec![f64::NEG_INFINITY; bits];
    let mut acc0 = vec![0.0; bits];
    let mut acc1 = vec![0.0; bits];
    let mut metrics = Vec::with_capacity(1 << bits);
    for h in 0..1usize << bits {
        let mut r: Vec<Complex64> = y.to_vec();
        for k in 0..n {
            let idx = (h >> (bits - (k + 1) * q)) & ((1 << q) - 1);
            let s = points[idx];
            for (i, ri) in r.iter_mut().enumerate() {
                *ri -= g[(i, k)] * s;
            }
        }
        let lik = -r.iter().map(|v| v.norm_sqr()).sum::<f64>() / noise_var;
        let pri: f64 = (0..bits).map(|j| log_prob(bit(h, j), prior[j])).sum();
        let v = lik + pri;
        metrics.push(v);
        for j in 0..bits {
            if bit(h, j) == 0 { best0[j] = best0[j].max(v) } else { best1[j] = best1[j].max(v) }
        }
    }
    // Second pass: stable log-sum-exp against the per-bit maxima.
    for (h, &v) in metrics.iter().enumerate() {
        for j in 0..bits {
            if bit(h, j) == 0 { acc0[j] += (v - best0[j]).exp() } else { acc1[j] += (v - best1[j]).exp() }
        }
    }
    Ok((0..bits)
        .map(|j| (best0[j] + acc0[j].ln() - best1[j] - acc1[j].ln() - prior[j]).clamp(-LLR_CAP, LLR_CAP))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    Mmse,
    Map,
}

/// Channel estimator used by the decoupled, IDD and ICDD loops.
#[derive(Debug, Clone, Copy)]
pub enum Estimator<'a> {
    Lmmse(&'a GaussianPrior),
    Ista { beams: &'a Beamspace, epsilon: f64 },
    /// Known channel.
    Genie(&'a CMat),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loop {
    Decoupled,
    Idd,
    Icdd,
}

/// Everything the baseline loops read from one received frame.
#[derive(Debug, Clone, Copy)]
pub struct BaselineProblem<'a> {
    pub cfg: &'a FrameConfig,
    pub code: &'a CodeConstraints,
    pub y: &'a CMat,
    pub s_p: &'a CMat,
    pub sigma2: f64,
}

/// One round of the detector/decoder exchange, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct TurboRound {
    pub detector_prior: Vec<f64>,
    pub detector_out: Vec<f64>,
    pub decoder_post: Vec<f64>,
}

impl<'a> BaselineProblem<'a> {
    fn mean_channel_power(&self) -> f64 {
        // Unit-variance channel entries throughout the crate.
        1.0
    }

    /// Estimate from regressors `s` (pilots, possibly soft data) with per-
    /// column noise levels `col_noise` (whitened to σ² first).
    fn estimate(&self, est: &Estimator<'_>, y: &CMat, s: &CMat, col_noise: &[f64], turbo: &TurboConfig) -> Result<(CMat, f64), SolverError> {
        let scale: Vec<f64> = col_noise.iter().map(|v| (self.sigma2 / v).sqrt()).collect();
        let mut yw = y.clone();
        let mut sw = s.clone();
        for (t, &a) in scale.iter().enumerate() {
            yw.column_mut(t).scale_mut(a);
            sw.column_mut(t).scale_mut(a);
        }
        match est {
            Estimator::Lmmse(prior) => {
                let g = estimate_g_closed_form(&yw, &sw, prior, self.sigma2)?;
                Ok((g, estimation_mse(&sw, self.sigma2, self.mean_channel_power())?))
            }
            Estimator::Ista { beams, epsilon } => {
                let g = ista_channel_estimate(&yw, &sw, beams, self.sigma2, *epsilon, turbo.ista_iters);
                Ok((g, estimation_mse(&sw, self.sigma2, self.mean_channel_power())?))
            }
            Estimator::Genie(g) => Ok(((*g).clone(), 0.0)),
        }
    }

    fn detect(&self, det: Detector, g: &CMat, noise_var: f64, prior: &[f64]) -> Result<Vec<f64>, SolverError> {
        let cfg = self.cfg;
        let q = cfg.modulation.q();
        let n = cfg.n_str();
        let mut out = vec![0.0; cfg.total_bits()];
        let mut pri = vec![0.0; n * q];
        for t in 0..cfg.t_d() {
            for r in 0..n {
                let i = cfg.bit_index(r, t);
                pri[r * q..(r + 1) * q].copy_from_slice(&prior[i..i + q]);
            }
            let y: Vec<Complex64> = self.y.column(cfg.t_p + t).iter().copied().collect();
            let llr = match det {
                Detector::Mmse => mmse_detect_soft(cfg, &y, g, &pri, noise_var)?,
                Detector::Map => map_detect(cfg, &y, g, &pri, noise_var)?,
            };
            for r in 0..n {
                let i = cfg.bit_index(r, t);
                out[i..i + q].copy_from_slice(&llr[r * q..(r + 1) * q]);
            }
        }
        Ok(out)
    }

    /// Soft symbols `(mean, variance)` from bit LLRs, `N_str × T_D`.
    fn soft_symbols(&self, llr: &[f64]) -> (CMat, Vec<f64>) {
        let cfg = self.cfg;
        let q = cfg.modulation.q();
        let mut mean = CMat::zeros(cfg.n_str(), cfg.t_d());
        let mut col_var = vec![0.0; cfg.t_d()];
        for t in 0..cfg.t_d() {
            for r in 0..cfg.n_str() {
                let i = cfg.bit_index(r, t);
                let (m, v) = cfg.modulation.soft_symbol_stats(&llr[i..i + q]);
                mean[(r, t)] = m;
                col_var[t] += v;
            }
        }
        (mean, col_var)
    }

    pub fn run(&self, lp: Loop, est: &Estimator<'_>, det: Detector, turbo: &TurboConfig) -> Result<ReceiverOutput, SolverError> {
        self.run_traced(lp, est, det, turbo, None)
    }

    pub fn run_traced(
        &self,
        lp: Loop,
        est: &Estimator<'_>,
        det: Detector,
        turbo: &TurboConfig,
        mut trace: Option<&mut Vec<TurboRound>>,
    ) -> Result<ReceiverOutput, SolverError> {
        turbo.validate()?;
        self.cfg.validate()?;
        let cfg = self.cfg;
        let n_bits = cfg.total_bits();
        if self.code.h.n() != n_bits {
            return Err(SolverError::Dimension(format!("code has {} bits, frame carries {n_bits}", self.code.h.n())));
        }
        let y_p = self.y.columns(0, cfg.t_p).into_owned();
        let (mut g, mut mse) = self.estimate(est, &y_p, self.s_p, &vec![self.sigma2; cfg.t_p], turbo)?;
        let rounds = if lp == Loop::Decoupled { 1 } else { turbo.turbo_iters };
        let mut prior = vec![0.0; n_bits];
        let mut last = None;
        for round in 1..=rounds {
            let noise = self.sigma2 + cfg.n_str() as f64 * mse;
            let det_llr = self.detect(det, &g, noise, &prior)?;
            let dec = bp_decode(&self.code.h, &det_llr, turbo.bp_iters)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(TurboRound { detector_prior: prior.clone(), detector_out: det_llr.clone(), decoder_post: dec.llr.clone() });
            }
            let done = dec.converged;
            prior = dec.llr.iter().zip(&det_llr).map(|(p, d)| (p - d).clamp(-LLR_CAP, LLR_CAP)).collect();
            let post = dec.llr.clone();
            last = Some((dec.bits, round));
            if done || round == rounds {
                break;
            }
            if lp == Loop::Icdd {
                let (mean, col_var) = self.soft_symbols(&post);
                let s = hcat(self.s_p, &mean);
                let mut col_noise = vec![self.sigma2; cfg.t_p];
                col_noise.extend(col_var.iter().map(|v| self.sigma2 + v * self.mean_channel_power()));
                (g, mse) = self.estimate(est, self.y, &s, &col_noise, turbo)?;
            }
        }
        let (bits, iterations) = last.expect("at least one round");
        let converged = self.code.h.syndrome_ok(&bits);
        Ok(ReceiverOutput { bits, g_hat: g, converged, iterations, trajectory: None })
    }
}
