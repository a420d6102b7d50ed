//! Monte-Carlo link simulation: TOML configuration, paired frame sweeps,
//! result files, paired significance tests and frame export.
//!
//! Frame `i` is drawn from `ChaCha8Rng::seed_from_u64(frame_seed(seed, i))`
//! and reused at every SNR point (only the noise scale changes), so all
//! receivers and all SNRs see common random numbers.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admm::CodeConstraints;
use crate::baselines::{BaselineProblem, Detector, Estimator, Loop, TurboConfig};
use crate::channel::{
    default_precoder, exponential_correlation, generate_pilots, snr_db_to_sigma2, ChannelModel, Frame, FrameConfig, FrameDraw, SvParams,
};
use crate::exec::Execution;
use crate::gf2code::{generate_regular_code, read_alist, AlistError, CodeError, Encoder, ParityCheckMatrix};
use crate::jcdd_gaussian::{GaussianPrior, GaussianProblem, Mode, SolveOptions};
use crate::jcdd_sparse::{Beamspace, SparseProblem};
use crate::linalg::{c, CMat};
use crate::modem::Modulation;
use crate::params::{
    default_layer_g, default_layer_s, schedule_g, schedule_s, LayerG, LayerS, LayerSchedule, ParamError, ParamTable, ScheduleG, ScheduleS,
};
use crate::receiver::{ReceiverOutput, SolverError};
use crate::tuner::{grid_search, tune_multistage, GaussianNet, GridPoint, SparseNet, TrainerConfig, TrainingFrame, TuneError, TuneOutcome, TunableLayer};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("cannot parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Alist(#[from] AlistError),
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error("malformed results table: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Whether the failure lies in the user's inputs rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Self::Config(_) | Self::Toml(_) | Self::Read { .. } | Self::Params(_) | Self::Alist(_) | Self::Code(_) | Self::Tune(TuneError::Config(_))
        )
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(base) ⊕ index)`.
pub fn frame_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index)
}

fn default_seed() -> u64 {
    1
}
fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub snr_db: Vec<f64>,
    pub receivers: Vec<String>,
    pub frame: FrameSection,
    pub code: CodeSection,
    pub channel: ChannelSection,
    #[serde(default)]
    pub stop: StopSection,
    #[serde(default)]
    pub solver: SolverSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecoderChoice {
    #[default]
    None,
    /// `½[1,0; 0,1; 1,0; 0,j]` (four transmit antennas, two streams).
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSection {
    pub n_t: usize,
    pub n_r: usize,
    /// Defaults to the number of streams.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_p: Option<usize>,
    pub modulation: Modulation,
    #[serde(default = "one")]
    pub users: usize,
    #[serde(default)]
    pub precoder: PrecoderChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alist: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default = "three")]
    pub d_v: usize,
    #[serde(default = "six")]
    pub d_c: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn three() -> usize {
    3
}
fn six() -> usize {
    6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Iid,
    Kronecker,
    Sv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub model: ChannelKind,
    /// iid: entry variance (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    /// kronecker: exponential correlation coefficients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_r: Option<f64>,
    /// sv: clusters, paths per cluster, UPA shapes `[N^y, N^z]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rx: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub los_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlos_variance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopSection {
    #[serde(default = "default_target")]
    pub target_errors: usize,
    #[serde(default = "default_max_frames")]
    pub max_frames: usize,
}

fn default_target() -> usize {
    100
}
fn default_max_frames() -> usize {
    100_000
}

impl Default for StopSection {
    fn default() -> Self {
        Self { target_errors: default_target(), max_frames: default_max_frames() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// Iterations (algorithm mode) or layers (network mode).
    #[serde(default = "hundred")]
    pub max_iter: usize,
    #[serde(default = "ten")]
    pub turbo_iters: usize,
    #[serde(default = "hundred")]
    pub bp_iters: usize,
    #[serde(default = "hundred")]
    pub ista_iters: usize,
    #[serde(default = "unit")]
    pub ista_epsilon: f64,
    /// Tables for the network receivers; layers past a table's end use the
    /// bundled defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_g: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_s: Option<PathBuf>,
}

fn hundred() -> usize {
    100
}
fn ten() -> usize {
    10
}
fn unit() -> f64 {
    1.0
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { max_iter: 100, turbo_iters: 10, bp_iters: 100, ista_iters: 100, ista_epsilon: 1.0, params_g: None, params_s: None }
    }
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Read { path: path.display().to_string(), source })?;
        let mut cfg: Self = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut cfg.code.alist);
        fix(&mut cfg.solver.params_g);
        fix(&mut cfg.solver.params_s);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return err("snr_db must be a non-empty list of finite values");
        }
        if self.receivers.is_empty() {
            return err("receivers must not be empty");
        }
        for r in &self.receivers {
            r.parse::<Receiver>()?;
        }
        if self.stop.target_errors == 0 || self.stop.max_frames == 0 {
            return err("stop.target_errors and stop.max_frames must be positive");
        }
        let s = &self.solver;
        if s.max_iter == 0 || s.turbo_iters == 0 || s.bp_iters == 0 || s.ista_iters == 0 || !(s.ista_epsilon >= 0.0) {
            return err("solver iteration counts must be positive and ista_epsilon non-negative");
        }
        match (&self.code.alist, self.code.n) {
            (Some(_), Some(_)) => return err("code: give either alist or n, not both"),
            (None, None) => return err("code: one of alist or n is required"),
            _ => {}
        }
        let ch = &self.channel;
        let given = |name: &str, present: bool, allowed: bool| -> Result<(), HarnessError> {
            if present && !allowed {
                return Err(HarnessError::Config(format!("channel.{name} does not apply to model {:?}", ch.model)));
            }
            Ok(())
        };
        let (iid, kron, sv) = (ch.model == ChannelKind::Iid, ch.model == ChannelKind::Kronecker, ch.model == ChannelKind::Sv);
        given("variance", ch.variance.is_some(), iid)?;
        given("rho_t", ch.rho_t.is_some(), kron)?;
        given("rho_r", ch.rho_r.is_some(), kron)?;
        for (name, present) in [
            ("clusters", ch.clusters.is_some()),
            ("paths", ch.paths.is_some()),
            ("tx", ch.tx.is_some()),
            ("rx", ch.rx.is_some()),
            ("spread_deg", ch.spread_deg.is_some()),
            ("los_variance", ch.los_variance.is_some()),
            ("nlos_variance", ch.nlos_variance.is_some()),
        ] {
            given(name, present, sv)?;
        }
        if kron && [ch.rho_t, ch.rho_r].iter().any(|r| r.is_some_and(|r| !(0.0..1.0).contains(&r))) {
            return err("channel.rho_t and rho_r must lie in [0, 1)");
        }
        self.frame_config()?.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.channel_model()?.validate(self.frame.n_t, self.frame.n_r).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn frame_config(&self) -> Result<FrameConfig, HarnessError> {
        let f = &self.frame;
        let precoder = match f.precoder {
            PrecoderChoice::None => None,
            PrecoderChoice::Default if f.n_t == 4 => Some(default_precoder()),
            PrecoderChoice::Default => return Err(HarnessError::Config("the default precoder needs n_t = 4".into())),
        };
        let code_len = match (&self.code.alist, self.code.n) {
            (_, Some(n)) => n,
            (Some(p), None) => read_alist(p)?.n(),
            (None, None) => return Err(HarnessError::Config("code: one of alist or n is required".into())),
        };
        let mut cfg = FrameConfig { n_t: f.n_t, n_r: f.n_r, t_p: 1, modulation: f.modulation, code_len, users: f.users, precoder };
        cfg.t_p = f.t_p.unwrap_or(cfg.n_str());
        Ok(cfg)
    }

    pub fn channel_model(&self) -> Result<ChannelModel, HarnessError> {
        let ch = &self.channel;
        let (n_t, n_r) = (self.frame.n_t, self.frame.n_r);
        Ok(match ch.model {
            ChannelKind::Iid => ChannelModel::Iid { variance: ch.variance.unwrap_or(1.0) },
            ChannelKind::Kronecker => ChannelModel::Kronecker {
                r_t: exponential_correlation(n_t, ch.rho_t.unwrap_or(0.0)),
                r_r: exponential_correlation(n_r, ch.rho_r.unwrap_or(0.0)),
            },
            ChannelKind::Sv => {
                let tx = ch.tx.unwrap_or([n_t, 1]);
                let rx = ch.rx.unwrap_or([n_r, 1]);
                let mut p = SvParams::new(ch.clusters.unwrap_or(2), ch.paths.unwrap_or(4), (tx[0], tx[1]), (rx[0], rx[1]));
                p.spread_deg = ch.spread_deg.unwrap_or(p.spread_deg);
                p.los_variance = ch.los_variance.unwrap_or(p.los_variance);
                p.nlos_variance = ch.nlos_variance.unwrap_or(p.nlos_variance);
                ChannelModel::SalehValenzuela(p)
            }
        })
    }

    pub fn parity_check(&self) -> Result<ParityCheckMatrix, HarnessError> {
        match (&self.code.alist, self.code.n) {
            (Some(p), _) => Ok(read_alist(p)?),
            (None, Some(n)) => Ok(generate_regular_code(n, self.code.d_v, self.code.d_c, self.code.seed)?),
            (None, None) => Err(HarnessError::Config("code: one of alist or n is required".into())),
        }
    }

    pub fn turbo(&self) -> TurboConfig {
        TurboConfig { turbo_iters: self.solver.turbo_iters, bp_iters: self.solver.bp_iters, ista_iters: self.solver.ista_iters }
    }
}

/// Receiver identifiers accepted in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Receiver {
    JcddG,
    JcddnetG,
    JcddS,
    JcddnetS,
    Baseline(Loop, Detector),
    /// True channel, decoupled detection and decoding.
    Genie(Detector),
}

pub const RECEIVER_IDS: [&str; 12] = [
    "jcdd-g",
    "jcddnet-g",
    "jcdd-s",
    "jcddnet-s",
    "decoupled-mmse",
    "decoupled-map",
    "idd-mmse",
    "idd-map",
    "icdd-mmse",
    "icdd-map",
    "genie-mmse",
    "genie-map",
];

impl FromStr for Receiver {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        Ok(match s {
            "jcdd-g" => Self::JcddG,
            "jcddnet-g" => Self::JcddnetG,
            "jcdd-s" => Self::JcddS,
            "jcddnet-s" => Self::JcddnetS,
            _ => {
                let (head, tail) = s.split_once('-').ok_or_else(|| unknown_receiver(s))?;
                let det = match tail {
                    "mmse" => Detector::Mmse,
                    "map" => Detector::Map,
                    _ => return Err(unknown_receiver(s)),
                };
                match head {
                    "decoupled" => Self::Baseline(Loop::Decoupled, det),
                    "idd" => Self::Baseline(Loop::Idd, det),
                    "icdd" => Self::Baseline(Loop::Icdd, det),
                    "genie" => Self::Genie(det),
                    _ => return Err(unknown_receiver(s)),
                }
            }
        })
    }
}

fn unknown_receiver(s: &str) -> HarnessError {
    HarnessError::Config(format!("unknown receiver `{s}`; expected one of {}", RECEIVER_IDS.join(", ")))
}

impl fmt::Display for Receiver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let det = |d: &Detector| match d {
            Detector::Mmse => "mmse",
            Detector::Map => "map",
        };
        match self {
            Self::JcddG => f.write_str("jcdd-g"),
            Self::JcddnetG => f.write_str("jcddnet-g"),
            Self::JcddS => f.write_str("jcdd-s"),
            Self::JcddnetS => f.write_str("jcddnet-s"),
            Self::Baseline(lp, d) => {
                let l = match lp {
                    Loop::Decoupled => "decoupled",
                    Loop::Idd => "idd",
                    Loop::Icdd => "icdd",
                };
                write!(f, "{l}-{}", det(d))
            }
            Self::Genie(d) => write!(f, "genie-{}", det(d)),
        }
    }
}

/// Everything fixed across the frames of one configuration.
#[derive(Debug, Clone)]
pub struct Link {
    pub cfg: FrameConfig,
    pub model: ChannelModel,
    pub code: CodeConstraints,
    pub encoders: Vec<Encoder>,
    pub pilots: CMat,
    /// Gaussian prior on the effective channel, when the model has one.
    pub prior: Option<GaussianPrior>,
    /// Beamspace bases, for the sparse model.
    pub beams: Option<Beamspace>,
    pub schedule_g: ScheduleG,
    pub schedule_s: ScheduleS,
    pub network_g: ScheduleG,
    pub network_s: ScheduleS,
    pub max_iter: usize,
    pub turbo: TurboConfig,
    pub ista_epsilon: f64,
}

impl Link {
    pub fn new(sim: &SimConfig) -> Result<Self, HarnessError> {
        sim.validate()?;
        let cfg = sim.frame_config()?;
        let model = sim.channel_model()?;
        let h = sim.parity_check()?;
        if h.n() != cfg.code_len {
            return Err(HarnessError::Config(format!("code length {} does not match frame N = {}", h.n(), cfg.code_len)));
        }
        let encoders = vec![Encoder::new(&h)?; cfg.users];
        let code = CodeConstraints::stacked(&vec![h; cfg.users]);
        let (prior, beams) = match &model {
            ChannelModel::SalehValenzuela(sv) => (None, Some(Beamspace::new(&cfg, sv))),
            _ => (Some(GaussianPrior::from_model(&cfg, &model).map_err(|e| HarnessError::Config(e.to_string()))?), None),
        };
        let load = |p: &Option<PathBuf>| p.as_ref().map(ParamTable::load).transpose();
        let table_g = load(&sim.solver.params_g)?;
        let table_s = load(&sim.solver.params_s)?;
        let link = Self {
            pilots: generate_pilots(cfg.n_str(), cfg.t_p),
            network_g: schedule_g(table_g.as_ref())?,
            network_s: schedule_s(table_s.as_ref())?,
            schedule_g: LayerSchedule::constant(default_layer_g()),
            schedule_s: LayerSchedule::constant(default_layer_s()),
            max_iter: sim.solver.max_iter,
            turbo: sim.turbo(),
            ista_epsilon: sim.solver.ista_epsilon,
            cfg,
            model,
            code,
            encoders,
            prior,
            beams,
        };
        for r in &sim.receivers {
            link.check_receiver(r.parse()?)?;
        }
        Ok(link)
    }

    fn check_receiver(&self, r: Receiver) -> Result<(), HarnessError> {
        match r {
            Receiver::JcddG | Receiver::JcddnetG if self.prior.is_none() => {
                Err(HarnessError::Config(format!("{r} needs a Gaussian channel model; use jcdd-s or jcddnet-s for sv")))
            }
            Receiver::JcddS | Receiver::JcddnetS if self.beams.is_none() => Err(HarnessError::Config(format!("{r} needs the sv channel model"))),
            Receiver::Baseline(_, Detector::Map) | Receiver::Genie(Detector::Map)
                if self.cfg.n_str() * self.cfg.modulation.q() > crate::baselines::MAP_MAX_BITS =>
            {
                Err(HarnessError::Config(format!("{r}: {} bits per slot is too many to enumerate", self.cfg.n_str() * self.cfg.modulation.q())))
            }
            _ => Ok(()),
        }
    }

    /// Source randomness of frame `index`.
    pub fn draw(&self, seed: u64, index: u64) -> Result<FrameDraw, SolverError> {
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, index));
        Ok(FrameDraw::new(&self.cfg, &self.model, &self.encoders, &mut rng)?)
    }

    pub fn frame(&self, seed: u64, index: u64, snr_db: f64) -> Result<Frame, SolverError> {
        Ok(self.draw(seed, index)?.realize(&self.cfg, &self.pilots, snr_db_to_sigma2(snr_db)))
    }

    pub fn run(&self, r: Receiver, f: &Frame) -> Result<ReceiverOutput, SolverError> {
        let opts = SolveOptions::new(self.max_iter);
        let gaussian = |mode, schedule: &ScheduleG| {
            let prior = self.prior.as_ref().ok_or_else(|| SolverError::Unsupported(format!("{r} needs a Gaussian prior")))?;
            GaussianProblem { cfg: &self.cfg, code: &self.code, y: &f.y, s_p: &f.s_p, prior, sigma2: f.sigma2, mode }.solve(schedule, &opts)
        };
        let sparse = |mode, schedule: &ScheduleS| {
            let beams = self.beams.as_ref().ok_or_else(|| SolverError::Unsupported(format!("{r} needs beamspace bases")))?;
            SparseProblem { cfg: &self.cfg, code: &self.code, y: &f.y, s_p: &f.s_p, beams, sigma2: f.sigma2, mode }.solve(schedule, &opts)
        };
        let base = BaselineProblem { cfg: &self.cfg, code: &self.code, y: &f.y, s_p: &f.s_p, sigma2: f.sigma2 };
        match r {
            Receiver::JcddG => gaussian(Mode::Algorithm, &self.schedule_g),
            Receiver::JcddnetG => gaussian(Mode::Network, &self.network_g),
            Receiver::JcddS => sparse(Mode::Algorithm, &self.schedule_s),
            Receiver::JcddnetS => sparse(Mode::Network, &self.network_s),
            Receiver::Baseline(lp, det) => {
                let est = match (&self.prior, &self.beams) {
                    (Some(p), _) => Estimator::Lmmse(p),
                    (None, Some(b)) => Estimator::Ista { beams: b, epsilon: self.ista_epsilon },
                    (None, None) => unreachable!("a link always has a prior or beamspace bases"),
                };
                base.run(lp, &est, det, &self.turbo)
            }
            Receiver::Genie(det) => base.run(Loop::Decoupled, &Estimator::Genie(&f.g), det, &self.turbo),
        }
    }

    /// Any information bit of any user wrong.
    pub fn block_error(&self, out: &ReceiverOutput, f: &Frame) -> bool {
        let n = self.cfg.code_len;
        self.encoders.iter().enumerate().any(|(k, enc)| enc.extract_info(&out.bits[k * n..(k + 1) * n]) != f.info[k])
    }

    pub fn training_frame(&self, seed: u64, index: u64, snr_db: f64) -> Result<TrainingFrame, SolverError> {
        let f = self.frame(seed, index, snr_db)?;
        Ok(TrainingFrame { y: f.y, s_p: f.s_p, sigma2: f.sigma2, bits: f.bits })
    }

    pub fn training_frames(&self, seed: u64, count: usize, snr_db: f64, exec: Execution) -> Result<Vec<TrainingFrame>, SolverError> {
        exec.map(count, |i| self.training_frame(seed, i as u64, snr_db)).into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub receiver: String,
    pub snr_db: f64,
    pub sigma2: f64,
    pub frames: usize,
    pub block_errors: usize,
    pub bler: f64,
    pub avg_iters: f64,
    pub avg_ms: f64,
    /// Per-frame block-error flags, when requested.
    #[serde(skip)]
    pub outcomes: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub seed: u64,
    pub results: Vec<PointResult>,
}

impl SimResult {
    pub fn point(&self, receiver: &str, snr_db: f64) -> Option<&PointResult> {
        self.results.iter().find(|p| p.receiver == receiver && p.snr_db == snr_db)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    pub execution: Execution,
    /// Keep per-frame outcomes for paired tests.
    pub record_outcomes: bool,
    /// Frames drawn per scheduling round.
    pub batch: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { execution: Execution::default(), record_outcomes: false, batch: 64 }
    }
}

#[derive(Default)]
struct Tally {
    frames: usize,
    errors: usize,
    iters: usize,
    ms: f64,
    outcomes: Vec<bool>,
    done: bool,
}

/// Runs every receiver at every SNR. Frame `i` is shared by all receivers
/// and SNR points; each (receiver, SNR) pair stops after
/// `stop.target_errors` block errors or `stop.max_frames` frames, counted
/// in frame order so the totals do not depend on scheduling.
pub fn run_sweep(sim: &SimConfig, opts: &SweepOptions) -> Result<SimResult, HarnessError> {
    let link = Link::new(sim)?;
    let receivers: Vec<Receiver> = sim.receivers.iter().map(|r| r.parse()).collect::<Result<_, _>>()?;
    let stop = sim.stop;
    let batch = opts.batch.max(1);
    let mut results = Vec::new();
    for &snr in &sim.snr_db {
        let mut tally: Vec<Tally> = receivers.iter().map(|_| Tally::default()).collect();
        let mut next = 0usize;
        while tally.iter().any(|t| !t.done) && next < stop.max_frames {
            let count = batch.min(stop.max_frames - next);
            let active: Vec<usize> = (0..receivers.len()).filter(|&k| !tally[k].done).collect();
            let runs = opts.execution.map(count, |j| -> Result<Vec<(bool, usize, f64)>, SolverError> {
                let f = link.frame(sim.seed, (next + j) as u64, snr)?;
                active
                    .iter()
                    .map(|&k| {
                        let t0 = Instant::now();
                        let out = link.run(receivers[k], &f)?;
                        let ms = t0.elapsed().as_secs_f64() * 1e3;
                        Ok((link.block_error(&out, &f), out.iterations, ms))
                    })
                    .collect()
            });
            for run in runs {
                let run = run?;
                for (&k, &(err, iters, ms)) in active.iter().zip(&run) {
                    let t = &mut tally[k];
                    if t.done {
                        continue;
                    }
                    t.frames += 1;
                    t.errors += err as usize;
                    t.iters += iters;
                    t.ms += ms;
                    if opts.record_outcomes {
                        t.outcomes.push(err);
                    }
                    t.done = t.errors >= stop.target_errors || t.frames >= stop.max_frames;
                }
            }
            next += count;
        }
        for (r, t) in receivers.iter().zip(tally) {
            let n = t.frames.max(1) as f64;
            results.push(PointResult {
                receiver: r.to_string(),
                snr_db: snr,
                sigma2: snr_db_to_sigma2(snr),
                frames: t.frames,
                block_errors: t.errors,
                bler: t.errors as f64 / n,
                avg_iters: t.iters as f64 / n,
                avg_ms: t.ms / n,
                outcomes: opts.record_outcomes.then_some(t.outcomes),
            });
        }
    }
    Ok(SimResult { config: sim.clone(), seed: sim.seed, results })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(HarnessError::Config(format!("unknown format `{s}`; expected csv or json"))),
        }
    }
}

pub const CSV_HEADER: &str = "receiver,snr_db,sigma2,frames,block_errors,bler,avg_iters,avg_ms";

pub fn results_csv(result: &SimResult) -> Result<String, HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(','))?;
    for p in &result.results {
        w.serialize(p)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn results_json(result: &SimResult) -> Result<String, HarnessError> {
    Ok(serde_json::to_string_pretty(result)?)
}

pub fn parse_results_csv(text: &str) -> Result<Vec<PointResult>, HarnessError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(HarnessError::Config(format!("unexpected header `{}`", header.join(","))));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_results(result: &SimResult, path: impl AsRef<Path>, format: Format) -> Result<(), HarnessError> {
    let text = match format {
        Format::Csv => results_csv(result)?,
        Format::Json => results_json(result)?,
    };
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|source| HarnessError::Write { path: path.display().to_string(), source })
}

/// Frames where exactly one of two paired receivers failed:
/// `(only a, only b)`.
pub fn discordant(a: &[bool], b: &[bool]) -> (usize, usize) {
    a.iter().zip(b).fold((0, 0), |(x, y), (&ea, &eb)| (x + (ea && !eb) as usize, y + (eb && !ea) as usize))
}

/// Two-sided exact McNemar p-value from the discordant counts.
pub fn mcnemar_exact(only_a: usize, only_b: usize) -> f64 {
    use statrs::distribution::{Binomial, DiscreteCDF};
    let n = only_a + only_b;
    if n == 0 {
        return 1.0;
    }
    let k = only_a.min(only_b) as u64;
    let dist = Binomial::new(0.5, n as u64).expect("p = 0.5 is valid");
    (2.0 * dist.cdf(k)).min(1.0)
}

/// One exported frame. Matrices are row-major nested arrays split into
/// real and imaginary parts; `b` is the stacked coded word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub index: u64,
    pub snr_db: f64,
    pub sigma2: f64,
    pub y_re: Vec<Vec<f64>>,
    pub y_im: Vec<Vec<f64>>,
    pub s_p_re: Vec<Vec<f64>>,
    pub s_p_im: Vec<Vec<f64>>,
    pub b: Vec<u8>,
}

fn split(m: &CMat) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let rows = |f: fn(&num_complex::Complex64) -> f64| (0..m.nrows()).map(|i| m.row(i).iter().map(f).collect()).collect();
    (rows(|z| z.re), rows(|z| z.im))
}

fn join(re: &[Vec<f64>], im: &[Vec<f64>]) -> Result<CMat, HarnessError> {
    let cols = re.first().map_or(0, Vec::len);
    if re.len() != im.len() || re.iter().chain(im).any(|r| r.len() != cols) {
        return Err(HarnessError::Config("ragged matrix in frame record".into()));
    }
    Ok(CMat::from_fn(re.len(), cols, |i, j| c(re[i][j], im[i][j])))
}

impl FrameRecord {
    pub fn from_frame(index: u64, snr_db: f64, f: &Frame) -> Self {
        let (y_re, y_im) = split(&f.y);
        let (s_p_re, s_p_im) = split(&f.s_p);
        Self { index, snr_db, sigma2: f.sigma2, y_re, y_im, s_p_re, s_p_im, b: f.bits.clone() }
    }

    pub fn to_training(&self) -> Result<TrainingFrame, HarnessError> {
        Ok(TrainingFrame { y: join(&self.y_re, &self.y_im)?, s_p: join(&self.s_p_re, &self.s_p_im)?, sigma2: self.sigma2, bits: self.b.clone() })
    }
}

/// Writes `count` frames at `snr_db` as JSON lines, one frame per line.
pub fn export_frames<W: Write>(link: &Link, seed: u64, snr_db: f64, count: usize, out: &mut W) -> Result<(), HarnessError> {
    for i in 0..count as u64 {
        let f = link.frame(seed, i, snr_db)?;
        let line = serde_json::to_string(&FrameRecord::from_frame(i, snr_db, &f))?;
        writeln!(out, "{line}").map_err(|source| HarnessError::Write { path: "frame export".into(), source })?;
    }
    Ok(())
}

pub fn read_frames(text: &str) -> Result<Vec<FrameRecord>, HarnessError> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Candidates for the Gaussian defaults: `μ × α`.
pub fn coarse_grid_g() -> Vec<LayerG> {
    let mus = [0.1, 0.2, 0.3, 0.5, 1.0, 2.0];
    let alphas = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0];
    mus.iter().flat_map(|&mu| alphas.iter().map(move |&a| LayerG::vanilla(mu, a))).collect()
}

/// Candidates for the sparse defaults: `ρ × κ × ε` with `τ = 1`.
pub fn coarse_grid_s() -> Vec<LayerS> {
    let rhos = [0.03, 0.1, 0.3];
    let kappas = [0.1, 0.25, 0.5, 1.0];
    let eps = [1.0, 3.0, 10.0];
    let mut out = Vec::new();
    for r in rhos {
        for k in kappas {
            out.extend(eps.iter().map(|&e| LayerS::vanilla(r, k, e)));
        }
    }
    out
}

/// Which solver family a link tunes: sparse for the SV model, Gaussian
/// otherwise.
fn is_sparse(link: &Link) -> bool {
    link.beams.is_some()
}

fn setup_summary(sim: &SimConfig, link: &Link) -> String {
    let cfg = &link.cfg;
    format!(
        "{:?} channel, N_r={} N_t={} streams={} T_P={} {:?}, N={} code, I_max={}",
        sim.channel.model, cfg.n_r, cfg.n_t, cfg.n_str(), cfg.t_p, cfg.modulation, cfg.code_len, link.max_iter
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    /// One-layer table holding the best candidate.
    pub table: ParamTable,
    /// Ranked candidates, one line each.
    pub ranking: Vec<String>,
}

fn grid_report<L: TunableLayer>(points: &[GridPoint<L>], note: String) -> GridReport {
    let mut table = L::table(&[points[0].layer], "grid-search");
    table.note = Some(note);
    let ranking = points.iter().map(|p| format!("{:?}: {}/{} block errors, {:.1} iterations", p.layer, p.block_errors, p.frames, p.mean_iterations)).collect();
    GridReport { table, ranking }
}

/// Coarse grid over constant schedules in algorithm mode at one SNR.
pub fn tune_grid(sim: &SimConfig, snr_db: f64, frames: usize, exec: Execution) -> Result<GridReport, HarnessError> {
    let link = Link::new(sim)?;
    let data = link.training_frames(sim.seed, frames, snr_db, exec)?;
    let what = setup_summary(sim, &link);
    if is_sparse(&link) {
        let net = SparseNet { cfg: &link.cfg, code: &link.code, beams: link.beams.as_ref().expect("sparse link"), mode: Mode::Algorithm };
        let pts = grid_search(&net, &coarse_grid_s(), &data, link.max_iter, exec);
        let note = format!(
            "best of rho {{0.03,0.1,0.3}} x kappa {{0.1,0.25,0.5,1}} x epsilon {{1,3,10}} (tau=1) by block errors: {}/{} at {snr_db} dB; {what}; seed {}",
            pts[0].block_errors, frames, sim.seed
        );
        Ok(grid_report(&pts, note))
    } else {
        let net = GaussianNet { cfg: &link.cfg, code: &link.code, prior: link.prior.as_ref().expect("gaussian link"), mode: Mode::Algorithm };
        let pts = grid_search(&net, &coarse_grid_g(), &data, link.max_iter, exec);
        let note = format!(
            "best of mu {{0.1,0.2,0.3,0.5,1,2}} x alpha {{0,2,4,6,8,10,12}} by block errors: {}/{} at {snr_db} dB; {what}; seed {}",
            pts[0].block_errors, frames, sim.seed
        );
        Ok(grid_report(&pts, note))
    }
}

/// Stage-wise search in network mode starting from the bundled defaults.
/// Training frames use the config seed, holdout frames the next seed.
pub fn tune_layers(sim: &SimConfig, snr_db: f64, frames: usize, trainer: &TrainerConfig) -> Result<TuneOutcome, HarnessError> {
    let link = Link::new(sim)?;
    let exec = trainer.execution;
    let train = link.training_frames(sim.seed, frames, snr_db, exec)?;
    let hold = link.training_frames(sim.seed.wrapping_add(1), frames, snr_db, exec)?;
    let mut out = if is_sparse(&link) {
        let net = SparseNet { cfg: &link.cfg, code: &link.code, beams: link.beams.as_ref().expect("sparse link"), mode: Mode::Network };
        tune_multistage(&net, default_layer_s(), &train, &hold, trainer)?
    } else {
        let net = GaussianNet { cfg: &link.cfg, code: &link.code, prior: link.prior.as_ref().expect("gaussian link"), mode: Mode::Network };
        tune_multistage(&net, default_layer_g(), &train, &hold, trainer)?
    };
    out.table.note = Some(format!(
        "{} stages of {} layers, budget {}, {frames} training + {frames} holdout frames at {snr_db} dB; holdout loss {:.6e} (default {:.6e}); {}",
        trainer.l_max / trainer.l_part,
        trainer.l_part,
        trainer.budget,
        out.tuned_loss,
        out.default_loss,
        setup_summary(sim, &link)
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
seed = 7
snr_db = [2.0, 6]
receivers = ["jcdd-g", "decoupled-mmse"]

[frame]
n_t = 2
n_r = 4
modulation = "qpsk"

[code]
n = 32

[channel]
model = "iid"

[stop]
target_errors = 5
max_frames = 40
"#;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0.
        let mut state = 0u64;
        let mut next = || {
            let out = splitmix64(state);
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            out
        };
        assert_eq!(next(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(next(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(next(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn config_rejects_unknown_keys_and_receivers() {
        assert!(SimConfig::parse(SMALL).is_ok());
        let bad = SMALL.replace("[stop]", "[stop]\nfoo = 1");
        assert!(matches!(SimConfig::parse(&bad), Err(HarnessError::Toml(_))));
        let bad = SMALL.replace("\"jcdd-g\"", "\"jcdd-x\"");
        assert!(matches!(SimConfig::parse(&bad), Err(HarnessError::Config(_))));
        let bad = SMALL.replace("model = \"iid\"", "model = \"iid\"\nclusters = 2");
        assert!(matches!(SimConfig::parse(&bad), Err(HarnessError::Config(_))));
        let bad = SMALL.replace("snr_db = [2.0, 6]", "snr_db = []");
        assert!(SimConfig::parse(&bad).unwrap_err().is_config());
    }

    #[test]
    fn receiver_ids_round_trip() {
        for id in RECEIVER_IDS {
            assert_eq!(id.parse::<Receiver>().unwrap().to_string(), id);
        }
        assert!("icdd-zf".parse::<Receiver>().is_err());
    }

    #[test]
    fn gaussian_receiver_on_sparse_model_is_a_config_error() {
        let text = SMALL
            .replace("model = \"iid\"", "model = \"sv\"\nclusters = 2\npaths = 4")
            .replace("receivers = [\"jcdd-g\", \"decoupled-mmse\"]", "receivers = [\"jcdd-g\"]");
        let err = Link::new(&SimConfig::parse(&text).unwrap()).unwrap_err();
        assert!(err.is_config(), "{err}");
    }

    #[test]
    fn frame_cap_is_exact() {
        let mut sim = SimConfig::parse(SMALL).unwrap();
        sim.stop = StopSection { target_errors: 100, max_frames: 10 };
        sim.snr_db = vec![-10.0];
        let r = run_sweep(&sim, &SweepOptions { batch: 3, ..Default::default() }).unwrap();
        assert!(r.results.iter().all(|p| p.frames == 10));
    }

    #[test]
    fn target_errors_stop_each_receiver() {
        let mut sim = SimConfig::parse(SMALL).unwrap();
        sim.snr_db = vec![-10.0];
        let r = run_sweep(&sim, &SweepOptions::default()).unwrap();
        for p in &r.results {
            assert_eq!(p.block_errors, 5, "{p:?}");
            assert!(p.frames >= 5 && p.frames < 40);
            assert_eq!(p.bler, p.block_errors as f64 / p.frames as f64);
        }
    }

    #[test]
    fn sweeps_are_deterministic_across_schedules() {
        let sim = SimConfig::parse(SMALL).unwrap();
        let strip = |mut r: SimResult| {
            for p in &mut r.results {
                p.avg_ms = 0.0;
            }
            r
        };
        let a = run_sweep(&sim, &SweepOptions { execution: Execution::Sequential, record_outcomes: true, batch: 5 }).unwrap();
        let b = run_sweep(&sim, &SweepOptions { execution: Execution::Parallel, record_outcomes: true, batch: 64 }).unwrap();
        assert_eq!(strip(a), strip(b));
    }

    #[test]
    fn frames_are_shared_across_snr_points() {
        let link = Link::new(&SimConfig::parse(SMALL).unwrap()).unwrap();
        let (a, b) = (link.frame(7, 3, 0.0).unwrap(), link.frame(7, 3, 10.0).unwrap());
        assert_eq!(a.bits, b.bits);
        assert_eq!(a.g, b.g);
        assert_ne!(a.y, b.y);
        assert_ne!(link.frame(7, 4, 0.0).unwrap().bits, a.bits);
    }

    #[test]
    fn genie_map_is_error_free_at_high_snr() {
        let mut sim = SimConfig::parse(SMALL).unwrap();
        sim.receivers = vec!["genie-map".into()];
        sim.snr_db = vec![80.0];
        sim.stop = StopSection { target_errors: 1, max_frames: 100 };
        let r = run_sweep(&sim, &SweepOptions::default()).unwrap();
        assert_eq!((r.results[0].frames, r.results[0].block_errors), (100, 0));
    }

    #[test]
    fn csv_round_trip_matches_json() {
        let mut sim = SimConfig::parse(SMALL).unwrap();
        sim.stop.max_frames = 6;
        let r = run_sweep(&sim, &SweepOptions::default()).unwrap();
        let text = results_csv(&r).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        let back = parse_results_csv(&text).unwrap();
        let json: SimResult = serde_json::from_str(&results_json(&r).unwrap()).unwrap();
        assert_eq!(back, json.results);
        assert_eq!(back, r.results);
        for p in back {
            assert_eq!(p.bler, p.block_errors as f64 / p.frames as f64);
        }
    }

    #[test]
    fn header_is_written_for_empty_results() {
        let sim = SimConfig::parse(SMALL).unwrap();
        let r = SimResult { config: sim, seed: 7, results: vec![] };
        assert_eq!(results_csv(&r).unwrap().trim_end(), CSV_HEADER);
    }

    fn binom_two_sided(a: usize, b: usize) -> f64 {
        // Direct summation of C(n, i) / 2^n.
        let n = a + b;
        let k = a.min(b);
        let mut term = 0.5f64.powi(n as i32);
        let mut acc = 0.0;
        for i in 0..=k {
            acc += term;
            term *= (n - i) as f64 / (i + 1) as f64;
        }
        (2.0 * acc).min(1.0)
    }

    #[test]
    fn mcnemar_matches_direct_summation() {
        for (a, b) in [(0, 0), (3, 3), (0, 5), (1, 9), (10, 30), (40, 12), (7, 0)] {
            let p = mcnemar_exact(a, b);
            let q = if a + b == 0 { 1.0 } else { binom_two_sided(a, b) };
            assert!((p - q).abs() < 1e-10, "{a},{b}: {p} vs {q}");
        }
        assert!((mcnemar_exact(0, 5) - 0.0625).abs() < 1e-12);
        assert_eq!(discordant(&[true, false, true, false], &[true, true, false, false]), (1, 1));
    }

    #[test]
    fn frame_export_round_trip() {
        let link = Link::new(&SimConfig::parse(SMALL).unwrap()).unwrap();
        let mut buf = Vec::new();
        export_frames(&link, 7, 3.0, 4, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        let recs = read_frames(&text).unwrap();
        let direct = link.training_frame(7, 2, 3.0).unwrap();
        assert_eq!(recs[2].to_training().unwrap(), direct);
        assert_eq!(recs[2].sigma2, snr_db_to_sigma2(3.0));
    }
}
