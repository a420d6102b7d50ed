//! Frame layout, channel models, pilots and the forward model
//! `Y = G [S_P, S_D] + N`.
//!
//! With `K` users of `N_s` streams each, the receiver sees the stacked
//! effective channel `G = [G₁W, …, G_KW]` (`N_r × K·N_s`); without a
//! precoder `N_s = N_t` and `W = I`. User `k`'s coded bits occupy
//! `k·N .. (k+1)·N` of the stacked bit vector, and the `Q` bits of stream
//! `s`, slot `t` start at `k·N + Q·(N_s·t + s)`.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::gf2code::Encoder;
use crate::linalg::{block_diag, c, hermitian_sqrt, is_hermitian, unitary_dft, CMat, LinalgError};
use crate::modem::Modulation;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChannelError {
    #[error("invalid frame configuration: {0}")]
    Config(String),
    #[error("invalid channel model: {0}")]
    Model(String),
    #[error("Saleh-Valenzuela channels have no Gaussian prior; use the sparse receiver path")]
    SparsePrior,
    #[error("noise variance must be non-negative, got {0}")]
    NoiseVariance(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The two-stream precoder `½[1,0; 0,1; 1,0; 0,j]` for 4 transmit antennas.
pub fn default_precoder() -> CMat {
    let h = 0.5;
    CMat::from_row_slice(
        4,
        2,
        &[c(h, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(h, 0.0), c(h, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, h)],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub t_p: usize,
    pub modulation: Modulation,
    /// Code length `N` of every user.
    pub code_len: usize,
    pub users: usize,
    /// Per-user precoder `W` (`N_t × N_s`).
    pub precoder: Option<CMat>,
}

impl FrameConfig {
    /// Single-user frame with `T_P = N_t`.
    pub fn single_user(n_t: usize, n_r: usize, modulation: Modulation, code_len: usize) -> Self {
        Self { n_t, n_r, t_p: n_t, modulation, code_len, users: 1, precoder: None }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let err = |m: String| Err(ChannelError::Config(m));
        if self.n_t == 0 || self.n_r == 0 || self.users == 0 {
            return err("antenna and user counts must be positive".into());
        }
        if self.t_p == 0 {
            return err("T_P must be at least 1".into());
        }
        if let Some(w) = &self.precoder {
            if w.nrows() != self.n_t || w.ncols() == 0 {
                return err(format!("precoder is {}x{}, expected {}xN_s", w.nrows(), w.ncols(), self.n_t));
            }
        }
        let per_slot = self.streams_per_user() * self.modulation.q();
        if self.code_len == 0 || !self.code_len.is_multiple_of(per_slot) {
            return err(format!("N = {} is not a multiple of N_s·Q = {per_slot}", self.code_len));
        }
        Ok(())
    }

    pub fn streams_per_user(&self) -> usize {
        self.precoder.as_ref().map_or(self.n_t, |w| w.ncols())
    }

    /// Total streams `N_str = K·N_s` (rows of `S`).
    pub fn n_str(&self) -> usize {
        self.users * self.streams_per_user()
    }

    pub fn t_d(&self) -> usize {
        self.code_len / (self.streams_per_user() * self.modulation.q())
    }

    pub fn t(&self) -> usize {
        self.t_p + self.t_d()
    }

    /// Length of the stacked bit vector.
    pub fn total_bits(&self) -> usize {
        self.users * self.code_len
    }

    /// First bit of the symbol sent on stream `r` in data slot `t`.
    pub fn bit_index(&self, r: usize, t: usize) -> usize {
        let ns = self.streams_per_user();
        (r / ns) * self.code_len + self.modulation.q() * (ns * t + r % ns)
    }

    /// `f(b)` arranged as the `N_str × T_D` data block.
    pub fn map_relaxed(&self, bits: &[f64]) -> CMat {
        assert_eq!(bits.len(), self.total_bits());
        let q = self.modulation.q();
        CMat::from_fn(self.n_str(), self.t_d(), |r, t| {
            let i = self.bit_index(r, t);
            self.modulation.map_bits(&bits[i..i + q]).expect("segment has Q bits")
        })
    }

    pub fn map_hard(&self, bits: &[u8]) -> CMat {
        let relaxed: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
        self.map_relaxed(&relaxed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvParams {
    pub clusters: usize,
    pub paths: usize,
    pub tx_y: usize,
    pub tx_z: usize,
    pub rx_y: usize,
    pub rx_z: usize,
    /// Per-path angular offset half-width around the cluster mean, degrees.
    pub spread_deg: f64,
    pub los_variance: f64,
    pub nlos_variance: f64,
}

impl SvParams {
    pub fn new(clusters: usize, paths: usize, tx: (usize, usize), rx: (usize, usize)) -> Self {
        Self {
            clusters,
            paths,
            tx_y: tx.0,
            tx_z: tx.1,
            rx_y: rx.0,
            rx_z: rx.1,
            spread_deg: 7.5,
            los_variance: 1.0,
            nlos_variance: 10f64.powf(-0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelModel {
    Iid { variance: f64 },
    Kronecker { r_t: CMat, r_r: CMat },
    SalehValenzuela(SvParams),
}

/// Exponential correlation matrix `R[i,j] = ρ^|i-j|`.
pub fn exponential_correlation(n: usize, rho: f64) -> CMat {
    CMat::from_fn(n, n, |i, j| c(rho.powi((i as i32 - j as i32).abs()), 0.0))
}

impl ChannelModel {
    pub fn validate(&self, n_t: usize, n_r: usize) -> Result<(), ChannelError> {
        match self {
            Self::Iid { variance } if !(*variance > 0.0) => {
                Err(ChannelError::Model(format!("variance must be positive, got {variance}")))
            }
            Self::Iid { .. } => Ok(()),
            Self::Kronecker { r_t, r_r } => {
                if r_t.shape() != (n_t, n_t) || r_r.shape() != (n_r, n_r) {
                    return Err(ChannelError::Model("correlation matrix dimensions".into()));
                }
                for r in [r_t, r_r] {
                    if !is_hermitian(r, 1e-10) {
                        return Err(ChannelError::Model("correlation matrix not Hermitian".into()));
                    }
                    hermitian_sqrt(r)?;
                }
                Ok(())
            }
            Self::SalehValenzuela(p) => {
                if p.tx_y * p.tx_z != n_t || p.rx_y * p.rx_z != n_r {
                    return Err(ChannelError::Model(format!(
                        "UPA {}x{} -> {}x{} does not match N_t={n_t}, N_r={n_r}",
                        p.tx_y, p.tx_z, p.rx_y, p.rx_z
                    )));
                }
                if p.clusters * p.paths == 0 {
                    return Err(ChannelError::Model("need at least one path".into()));
                }
                Ok(())
            }
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Self::SalehValenzuela(_))
    }
}

/// Standard complex normal `CN(0,1)` from two real normals.
pub fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn cn_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    // Column-major fill so the draw order matches `vec(·)`.
    let mut m = CMat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = cn01(rng);
        }
    }
    m
}

/// UPA response `a(φ,ϑ)`, index `y·N^z + z`.
pub fn array_response(phi: f64, theta: f64, n_y: usize, n_z: usize) -> DVector<Complex64> {
    let scale = 1.0 / ((n_y * n_z) as f64).sqrt();
    let (u, v) = (phi.sin() * theta.sin(), theta.cos());
    DVector::from_fn(n_y * n_z, |idx, _| {
        let (y, z) = ((idx / n_z) as f64, (idx % n_z) as f64);
        Complex64::from_polar(scale, std::f64::consts::PI * (y * u + z * v))
    })
}

/// One `N_r × N_t` channel realization.
pub fn draw_channel<R: Rng + ?Sized>(model: &ChannelModel, n_t: usize, n_r: usize, rng: &mut R) -> Result<CMat, ChannelError> {
    match model {
        ChannelModel::Iid { variance } => Ok(cn_matrix(n_r, n_t, rng) * c(variance.sqrt(), 0.0)),
        ChannelModel::Kronecker { r_t, r_r } => {
            let h = cn_matrix(n_r, n_t, rng);
            Ok(hermitian_sqrt(r_r)? * h * hermitian_sqrt(r_t)?)
        }
        ChannelModel::SalehValenzuela(p) => {
            model.validate(n_t, n_r)?;
            let half_pi = std::f64::consts::FRAC_PI_2;
            let spread = p.spread_deg.to_radians();
            let mut g = CMat::zeros(n_r, n_t);
            for cl in 0..p.clusters {
                let means: [f64; 4] = std::array::from_fn(|_| rng.random_range(-half_pi..=half_pi));
                for path in 0..p.paths {
                    let mut angle = |mean: f64| {
                        if spread > 0.0 { mean + rng.random_range(-spread..=spread) } else { mean }
                    };
                    let (phi_r, theta_r, phi_t, theta_t) = (angle(means[0]), angle(means[1]), angle(means[2]), angle(means[3]));
                    let var = if cl == 0 && path == 0 { p.los_variance } else { p.nlos_variance };
                    let gain = cn01(rng) * var.sqrt();
                    let a_r = array_response(phi_r, theta_r, p.rx_y, p.rx_z);
                    let a_t = array_response(phi_t, theta_t, p.tx_y, p.tx_z);
                    g += &a_r * a_t.adjoint() * gain;
                }
            }
            let scale = ((n_t * n_r) as f64 / (p.clusters * p.paths) as f64).sqrt();
            Ok(g * c(scale, 0.0))
        }
    }
}

/// Covariance of `vec(G)` for one user's `N_r × N_t` channel.
pub fn channel_covariance(model: &ChannelModel, n_t: usize, n_r: usize) -> Result<CMat, ChannelError> {
    match model {
        ChannelModel::Iid { variance } => Ok(CMat::from_diagonal_element(n_t * n_r, n_t * n_r, c(*variance, 0.0))),
        ChannelModel::Kronecker { r_t, r_r } => Ok(r_t.transpose().kronecker(r_r)),
        ChannelModel::SalehValenzuela(_) => Err(ChannelError::SparsePrior),
    }
}

/// Covariance of `vec` of the stacked effective channel `[G₁W, …, G_KW]`:
/// block diagonal with blocks `(WᴴR_tW)ᵀ ⊗ R_r`.
pub fn effective_covariance(cfg: &FrameConfig, model: &ChannelModel) -> Result<CMat, ChannelError> {
    let user = match &cfg.precoder {
        None => channel_covariance(model, cfg.n_t, cfg.n_r)?,
        Some(w) => {
            let (r_t, r_r) = match model {
                ChannelModel::Iid { variance } => {
                    (CMat::identity(cfg.n_t, cfg.n_t), CMat::from_diagonal_element(cfg.n_r, cfg.n_r, c(*variance, 0.0)))
                }
                ChannelModel::Kronecker { r_t, r_r } => (r_t.clone(), r_r.clone()),
                ChannelModel::SalehValenzuela(_) => return Err(ChannelError::SparsePrior),
            };
            (w.adjoint() * r_t * w).transpose().kronecker(&r_r)
        }
    };
    Ok(block_diag(&vec![user; cfg.users]))
}

/// `F = F_{N^y} ⊗ F_{N^z}`.
pub fn beamspace_dft(n_y: usize, n_z: usize) -> CMat {
    unitary_dft(n_y).kronecker(&unitary_dft(n_z))
}

/// Transmit basis `B` with `G_eff = F_r G_s B`: `blockdiag(F_tᴴW, …)`.
pub fn transmit_basis(cfg: &FrameConfig, sv: &SvParams) -> CMat {
    let ft_h = beamspace_dft(sv.tx_y, sv.tx_z).adjoint();
    let block = match &cfg.precoder {
        Some(w) => &ft_h * w,
        None => ft_h,
    };
    block_diag(&vec![block; cfg.users])
}

/// Unit-magnitude scaled-DFT pilots `S[a,t] = e^{-j2πat/T_P}`.
pub fn generate_pilots(n_str: usize, t_p: usize) -> CMat {
    CMat::from_fn(n_str, t_p, |a, t| {
        Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * ((a * t) % t_p) as f64 / t_p as f64)
    })
}

/// `Y = G [S_P, S_D] + N`, `N ~ CN(0, σ²)`.
pub fn transmit<R: Rng + ?Sized>(g: &CMat, s_p: &CMat, s_d: &CMat, sigma2: f64, rng: &mut R) -> Result<CMat, ChannelError> {
    if !(sigma2 >= 0.0) {
        return Err(ChannelError::NoiseVariance(sigma2));
    }
    let s = crate::linalg::hcat(s_p, s_d);
    let noise = cn_matrix(g.nrows(), s.ncols(), rng);
    Ok(g * s + noise * c(sigma2.sqrt(), 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Stacked effective channel (`N_r × N_str`).
    pub g: CMat,
    pub s_p: CMat,
    pub s_d: CMat,
    /// Stacked coded bits.
    pub bits: Vec<u8>,
    /// Information bits per user.
    pub info: Vec<Vec<u8>>,
    pub y: CMat,
    pub sigma2: f64,
}

impl Frame {
    pub fn y_p(&self) -> CMat {
        self.y.columns(0, self.s_p.ncols()).into_owned()
    }

    pub fn y_d(&self) -> CMat {
        self.y.columns(self.s_p.ncols(), self.s_d.ncols()).into_owned()
    }
}

/// Source randomness of one frame, independent of the noise level so that
/// every SNR point reuses the same bits, channel and noise shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDraw {
    pub g: CMat,
    pub bits: Vec<u8>,
    pub info: Vec<Vec<u8>>,
    pub unit_noise: CMat,
}

impl FrameDraw {
    pub fn new<R: Rng + ?Sized>(
        cfg: &FrameConfig,
        model: &ChannelModel,
        encoders: &[Encoder],
        rng: &mut R,
    ) -> Result<Self, ChannelError> {
        cfg.validate()?;
        if encoders.len() != cfg.users {
            return Err(ChannelError::Config(format!("{} encoders for {} users", encoders.len(), cfg.users)));
        }
        let mut bits = Vec::with_capacity(cfg.total_bits());
        let mut info = Vec::with_capacity(cfg.users);
        for enc in encoders {
            if enc.n() != cfg.code_len {
                return Err(ChannelError::Config(format!("code length {} != N = {}", enc.n(), cfg.code_len)));
            }
            let u: Vec<u8> = (0..enc.k()).map(|_| rng.random_range(0..2u8)).collect();
            bits.extend(enc.encode(&u).expect("info length matches"));
            info.push(u);
        }
        let blocks = (0..cfg.users)
            .map(|_| {
                let g = draw_channel(model, cfg.n_t, cfg.n_r, rng)?;
                Ok(match &cfg.precoder {
                    Some(w) => g * w,
                    None => g,
                })
            })
            .collect::<Result<Vec<_>, ChannelError>>()?;
        let mut g = CMat::zeros(cfg.n_r, cfg.n_str());
        for (k, b) in blocks.iter().enumerate() {
            g.columns_mut(k * b.ncols(), b.ncols()).copy_from(b);
        }
        let unit_noise = cn_matrix(cfg.n_r, cfg.t(), rng);
        Ok(Self { g, bits, info, unit_noise })
    }

    pub fn realize(&self, cfg: &FrameConfig, pilots: &CMat, sigma2: f64) -> Frame {
        let s_d = cfg.map_hard(&self.bits);
        let s = crate::linalg::hcat(pilots, &s_d);
        let y = &self.g * s + &self.unit_noise * c(sigma2.sqrt(), 0.0);
        Frame {
            g: self.g.clone(),
            s_p: pilots.clone(),
            s_d,
            bits: self.bits.clone(),
            info: self.info.clone(),
            y,
            sigma2,
        }
    }
}

pub fn snr_db_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}
