//! Offline search for per-layer solver parameters.
//!
//! Two tools: a coarse grid over constant schedules (used to pick the
//! bundled defaults) and a stage-wise simultaneous-perturbation search over
//! the layers of an unrolled solver. The stage-wise search never returns a
//! table whose holdout loss is worse than the default schedule's.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::admm::CodeConstraints;
use crate::channel::FrameConfig;
use crate::exec::Execution;
use crate::gf2code::hard_decision;
use crate::jcdd_gaussian::{GaussianPrior, GaussianProblem, GaussianState, Mode, SolveOptions};
use crate::jcdd_sparse::{Beamspace, SparseProblem, SparseState};
use crate::linalg::CMat;
use crate::params::{LayerG, LayerS, LayerSchedule, Network, ParamTable};
use crate::receiver::{ReceiverOutput, SolverError};

#[derive(Debug, thiserror::Error)]
pub enum TuneError {
    #[error("loss window {start}..={end} is outside 1..={l_max}")]
    Window { start: usize, end: usize, l_max: usize },
    #[error("invalid trainer configuration: {0}")]
    Config(String),
    #[error("{0} trajectories for {1} reference words")]
    Samples(usize, usize),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// `‖tanh(ς(b − 0.5)) − (2c − 1)‖²` for one layer's relaxed bits `b` and
/// the transmitted word `c`.
pub fn layer_loss(b: &[f64], truth: &[u8], sharpness: f64) -> f64 {
    b.iter()
        .zip(truth)
        .map(|(&x, &t)| {
            let e = (sharpness * (x - 0.5)).tanh() - (2.0 * f64::from(t) - 1.0);
            e * e
        })
        .sum()
}

/// Mean over samples of the summed per-layer loss across the 1-based,
/// inclusive layer window `start..=end`. `trajectories[i][l-1]` holds the
/// relaxed bits of sample `i` after layer `l`.
pub fn loss(trajectories: &[Vec<Vec<f64>>], truths: &[Vec<u8>], sharpness: f64, window: (usize, usize)) -> Result<f64, TuneError> {
    if trajectories.len() != truths.len() || trajectories.is_empty() {
        return Err(TuneError::Samples(trajectories.len(), truths.len()));
    }
    let (start, end) = window;
    let l_max = trajectories.iter().map(Vec::len).min().unwrap_or(0);
    if start == 0 || start > end || end > l_max {
        return Err(TuneError::Window { start, end, l_max });
    }
    let total: f64 = trajectories
        .iter()
        .zip(truths)
        .map(|(traj, truth)| traj[start - 1..end].iter().map(|b| layer_loss(b, truth, sharpness)).sum::<f64>())
        .sum();
    Ok(total / trajectories.len() as f64)
}

/// One received frame with its transmitted coded bits.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFrame {
    pub y: CMat,
    pub s_p: CMat,
    pub sigma2: f64,
    pub bits: Vec<u8>,
}

/// Per-layer parameter block the search can move.
pub trait TunableLayer: Copy + Send + Sync + std::fmt::Debug {
    const NETWORK: Network;
    fn to_vec(self) -> Vec<f64>;
    fn from_slice(v: &[f64]) -> Self;
    fn table(layers: &[Self], provenance: &str) -> ParamTable;
}

impl TunableLayer for LayerG {
    const NETWORK: Network = Network::JcddnetG;
    fn to_vec(self) -> Vec<f64> {
        LayerG::to_vec(self)
    }
    fn from_slice(v: &[f64]) -> Self {
        LayerG::from_slice(v)
    }
    fn table(layers: &[Self], provenance: &str) -> ParamTable {
        ParamTable::from_layers_g(layers, provenance)
    }
}

impl TunableLayer for LayerS {
    const NETWORK: Network = Network::JcddnetS;
    fn to_vec(self) -> Vec<f64> {
        LayerS::to_vec(self)
    }
    fn from_slice(v: &[f64]) -> Self {
        LayerS::from_slice(v)
    }
    fn table(layers: &[Self], provenance: &str) -> ParamTable {
        ParamTable::from_layers_s(layers, provenance)
    }
}

/// An unrolled solver that can be started, stepped one layer at a time and
/// resumed from a saved state.
pub trait Unfolded: Sync {
    type Layer: TunableLayer;
    type State: Clone + Send + Sync;
    fn init(&self, frame: &TrainingFrame) -> Result<Self::State, SolverError>;
    fn step(&self, frame: &TrainingFrame, st: &mut Self::State, p: &Self::Layer) -> Result<(), SolverError>;
    fn relaxed<'s>(&self, st: &'s Self::State) -> &'s [f64];
    fn solve(&self, frame: &TrainingFrame, schedule: &LayerSchedule<Self::Layer>, opts: &SolveOptions) -> Result<ReceiverOutput, SolverError>;
}

/// Gaussian-channel solver over frames sharing one configuration.
#[derive(Debug, Clone, Copy)]
pub struct GaussianNet<'a> {
    pub cfg: &'a FrameConfig,
    pub code: &'a CodeConstraints,
    pub prior: &'a GaussianPrior,
    pub mode: Mode,
}

impl GaussianNet<'_> {
    fn problem<'f>(&'f self, f: &'f TrainingFrame) -> GaussianProblem<'f> {
        GaussianProblem { cfg: self.cfg, code: self.code, y: &f.y, s_p: &f.s_p, prior: self.prior, sigma2: f.sigma2, mode: self.mode }
    }
}

impl Unfolded for GaussianNet<'_> {
    type Layer = LayerG;
    type State = GaussianState;
    fn init(&self, f: &TrainingFrame) -> Result<GaussianState, SolverError> {
        self.problem(f).init(None)
    }
    fn step(&self, f: &TrainingFrame, st: &mut GaussianState, p: &LayerG) -> Result<(), SolverError> {
        self.problem(f).step(st, p)
    }
    fn relaxed<'s>(&self, st: &'s GaussianState) -> &'s [f64] {
        &st.b
    }
    fn solve(&self, f: &TrainingFrame, schedule: &LayerSchedule<LayerG>, opts: &SolveOptions) -> Result<ReceiverOutput, SolverError> {
        self.problem(f).solve(schedule, opts)
    }
}

/// Sparse-channel solver over frames sharing one configuration.
#[derive(Debug, Clone, Copy)]
pub struct SparseNet<'a> {
    pub cfg: &'a FrameConfig,
    pub code: &'a CodeConstraints,
    pub beams: &'a Beamspace,
    pub mode: Mode,
}

impl SparseNet<'_> {
    fn problem<'f>(&'f self, f: &'f TrainingFrame) -> SparseProblem<'f> {
        SparseProblem { cfg: self.cfg, code: self.code, y: &f.y, s_p: &f.s_p, beams: self.beams, sigma2: f.sigma2, mode: self.mode }
    }
}

impl Unfolded for SparseNet<'_> {
    type Layer = LayerS;
    type State = SparseState;
    fn init(&self, f: &TrainingFrame) -> Result<SparseState, SolverError> {
        self.problem(f).init(None)
    }
    fn step(&self, f: &TrainingFrame, st: &mut SparseState, p: &LayerS) -> Result<(), SolverError> {
        self.problem(f).step(st, p)
    }
    fn relaxed<'s>(&self, st: &'s SparseState) -> &'s [f64] {
        &st.b
    }
    fn solve(&self, f: &TrainingFrame, schedule: &LayerSchedule<LayerS>, opts: &SolveOptions) -> Result<ReceiverOutput, SolverError> {
        self.problem(f).solve(schedule, opts)
    }
}

/// Result of one grid candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint<L> {
    pub layer: L,
    /// Frames whose hard decision differs from the transmitted word, or
    /// on which the solver rejected the parameters.
    pub block_errors: usize,
    pub frames: usize,
    pub mean_iterations: f64,
}

/// Runs every constant schedule over the same frames and returns the
/// candidates ranked by block errors, then mean iterations.
pub fn grid_search<N: Unfolded>(net: &N, candidates: &[N::Layer], frames: &[TrainingFrame], max_iter: usize, exec: Execution) -> Vec<GridPoint<N::Layer>> {
    let opts = SolveOptions::new(max_iter);
    let mut out: Vec<GridPoint<N::Layer>> = candidates
        .iter()
        .map(|&layer| {
            let schedule = LayerSchedule::constant(layer);
            let runs = exec.map(frames.len(), |i| match net.solve(&frames[i], &schedule, &opts) {
                Ok(o) => (o.bits != frames[i].bits, o.iterations),
                Err(_) => (true, max_iter),
            });
            let block_errors = runs.iter().filter(|r| r.0).count();
            let mean_iterations = runs.iter().map(|r| r.1 as f64).sum::<f64>() / frames.len().max(1) as f64;
            GridPoint { layer, block_errors, frames: frames.len(), mean_iterations }
        })
        .collect();
    out.sort_by(|a, b| a.block_errors.cmp(&b.block_errors).then(a.mean_iterations.total_cmp(&b.mean_iterations)));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub l_max: usize,
    /// Layers optimized together in one stage.
    pub l_part: usize,
    /// `ς` in the loss.
    pub sharpness: f64,
    /// Perturbation pairs per stage. Zero skips the search.
    pub budget: usize,
    /// Initial step in search coordinates.
    pub step: f64,
    /// Initial perturbation in search coordinates.
    pub perturbation: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl TrainerConfig {
    pub fn new(l_max: usize, budget: usize, seed: u64) -> Self {
        Self { l_max, l_part: 20.min(l_max.max(1)), sharpness: 200.0, budget, step: 0.1, perturbation: 0.1, seed, execution: Execution::default() }
    }

    pub fn validate(&self) -> Result<(), TuneError> {
        if self.l_max == 0 || self.l_part == 0 || !self.l_max.is_multiple_of(self.l_part) {
            return Err(TuneError::Config(format!("L_part = {} must divide L_max = {}", self.l_part, self.l_max)));
        }
        if !(self.sharpness > 0.0 && self.step > 0.0 && self.perturbation > 0.0) {
            return Err(TuneError::Config("sharpness, step and perturbation must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub table: ParamTable,
    /// False when the search found nothing better on the holdout set and
    /// the default table was returned instead.
    pub improved: bool,
    pub default_loss: f64,
    pub tuned_loss: f64,
    /// Best training loss of each stage.
    pub stage_losses: Vec<f64>,
}

/// Map between parameter values and unconstrained search coordinates:
/// logarithm for strictly positive keys, a scaled linear coordinate
/// otherwise (clamped at zero for non-negative keys).
#[derive(Debug, Clone)]
struct Coordinates {
    kinds: Vec<(Kind, f64)>,
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Log,
    NonNegative,
    Free,
}

impl Coordinates {
    fn new(network: Network, default: &[f64]) -> Self {
        let kinds = network
            .keys()
            .iter()
            .zip(default)
            .map(|(&k, &x)| {
                let kind = match k {
                    "alpha" | "kappa" => Kind::NonNegative,
                    "o_r" | "o_p" | "varrho_r" | "varrho_p" => Kind::Free,
                    _ => Kind::Log,
                };
                (kind, x.abs().max(1.0))
            })
            .collect();
        Self { kinds }
    }

    fn encode(&self, layers: &[Vec<f64>]) -> Vec<f64> {
        layers
            .iter()
            .flat_map(|v| {
                v.iter().zip(&self.kinds).map(|(&x, &(kind, s))| match kind {
                    Kind::Log => x.ln(),
                    _ => x / s,
                })
            })
            .collect()
    }

    fn decode(&self, u: &[f64]) -> Vec<Vec<f64>> {
        u.chunks(self.kinds.len())
            .map(|c| {
                c.iter()
                    .zip(&self.kinds)
                    .map(|(&v, &(kind, s))| match kind {
                        Kind::Log => v.exp(),
                        Kind::NonNegative => (v * s).max(0.0),
                        Kind::Free => v * s,
                    })
                    .collect()
            })
            .collect()
    }
}

/// Runs `layers` from each state and returns the mean windowed loss, or
/// `+∞` if any frame rejects the parameters.
fn window_loss<N: Unfolded>(net: &N, frames: &[TrainingFrame], states: &[N::State], layers: &[N::Layer], sharpness: f64, exec: Execution) -> f64 {
    let per = exec.map(frames.len(), |i| {
        let mut st = states[i].clone();
        let mut acc = 0.0;
        for p in layers {
            if net.step(&frames[i], &mut st, p).is_err() {
                return f64::INFINITY;
            }
            acc += layer_loss(net.relaxed(&st), &frames[i].bits, sharpness);
        }
        acc
    });
    per.iter().sum::<f64>() / frames.len() as f64
}

fn advance<N: Unfolded>(net: &N, frames: &[TrainingFrame], states: &mut [N::State], layers: &[N::Layer], exec: Execution) -> Result<(), SolverError> {
    let next: Vec<Result<N::State, SolverError>> = exec.map(frames.len(), |i| {
        let mut st = states[i].clone();
        for p in layers {
            net.step(&frames[i], &mut st, p)?;
        }
        Ok(st)
    });
    for (slot, st) in states.iter_mut().zip(next) {
        *slot = st?;
    }
    Ok(())
}

fn init_states<N: Unfolded>(net: &N, frames: &[TrainingFrame], exec: Execution) -> Result<Vec<N::State>, SolverError> {
    exec.map(frames.len(), |i| net.init(&frames[i])).into_iter().collect()
}

/// Stage-wise search: stage `s` moves only layers `(s-1)·L_part+1 ..=
/// s·L_part` with all earlier layers frozen at their chosen values. The
/// returned table covers `L_max` layers.
pub fn tune_multistage<N: Unfolded>(net: &N, default: N::Layer, train: &[TrainingFrame], holdout: &[TrainingFrame], cfg: &TrainerConfig) -> Result<TuneOutcome, TuneError> {
    cfg.validate()?;
    if train.is_empty() || holdout.is_empty() {
        return Err(TuneError::Config("training and holdout sets must be non-empty".into()));
    }
    let exec = cfg.execution;
    let defaults = vec![default; cfg.l_max];
    let default_table = N::Layer::table(&defaults, "grid-search");
    let holdout_states = init_states(net, holdout, exec)?;
    let default_loss = window_loss(net, holdout, &holdout_states, &defaults, cfg.sharpness, exec);
    if cfg.budget == 0 {
        return Ok(TuneOutcome { table: default_table, improved: false, default_loss, tuned_loss: default_loss, stage_losses: Vec::new() });
    }

    let coords = Coordinates::new(N::Layer::NETWORK, &default.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut layers = defaults.clone();
    let mut states = init_states(net, train, exec)?;
    let mut stage_losses = Vec::new();
    for window in (0..cfg.l_max).step_by(cfg.l_part) {
        let range = window..window + cfg.l_part;
        let to_layers = |u: &[f64]| -> Vec<N::Layer> { coords.decode(u).iter().map(|v| N::Layer::from_slice(v)).collect() };
        let eval = |u: &[f64]| window_loss(net, train, &states, &to_layers(u), cfg.sharpness, exec);
        let mut theta = coords.encode(&layers[range.clone()].iter().map(|l| l.to_vec()).collect::<Vec<_>>());
        let mut best = (theta.clone(), eval(&theta));
        for k in 0..cfg.budget {
            let a = cfg.step / (k as f64 + 1.0).powf(0.602);
            let c = cfg.perturbation / (k as f64 + 1.0).powf(0.101);
            let delta: Vec<f64> = (0..theta.len()).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let plus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + c * d).collect();
            let minus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t - c * d).collect();
            let (lp, lm) = (eval(&plus), eval(&minus));
            for (u, l) in [(&plus, lp), (&minus, lm)] {
                if l < best.1 {
                    best = (u.clone(), l);
                }
            }
            // Sign of the two-sided difference only: the loss scale varies
            // by orders of magnitude across setups.
            let dir = match (lp.is_finite(), lm.is_finite()) {
                (true, true) => (lp - lm).signum(),
                (false, true) => 1.0,
                (true, false) => -1.0,
                (false, false) => 0.0,
            };
            for (t, d) in theta.iter_mut().zip(&delta) {
                *t -= a * dir * d;
            }
        }
        let last = eval(&theta);
        if last < best.1 {
            best = (theta, last);
        }
        let chosen = to_layers(&best.0);
        advance(net, train, &mut states, &chosen, exec)?;
        layers[range].copy_from_slice(&chosen);
        stage_losses.push(best.1);
    }

    let tuned_loss = window_loss(net, holdout, &holdout_states, &layers, cfg.sharpness, exec);
    if tuned_loss < default_loss {
        Ok(TuneOutcome { table: N::Layer::table(&layers, "tuned"), improved: true, default_loss, tuned_loss, stage_losses })
    } else {
        Ok(TuneOutcome { table: default_table, improved: false, default_loss, tuned_loss: default_loss, stage_losses })
    }
}

/// Holdout loss of a full schedule over `l_max` layers.
pub fn evaluate_loss<N: Unfolded>(net: &N, schedule: &LayerSchedule<N::Layer>, frames: &[TrainingFrame], l_max: usize, sharpness: f64, exec: Execution) -> Result<f64, TuneError> {
    let states = init_states(net, frames, exec)?;
    let layers: Vec<N::Layer> = (1..=l_max).map(|l| schedule.layer(l)).collect();
    Ok(window_loss(net, frames, &states, &layers, sharpness, exec))
}

/// Fraction of frames whose final hard decision after `layers` is wrong,
/// run without early stopping.
pub fn unrolled_errors<N: Unfolded>(net: &N, layers: &[N::Layer], frames: &[TrainingFrame], exec: Execution) -> Result<usize, SolverError> {
    let wrong: Vec<Result<bool, SolverError>> = exec.map(frames.len(), |i| {
        let mut st = net.init(&frames[i])?;
        for p in layers {
            net.step(&frames[i], &mut st, p)?;
        }
        Ok(hard_decision(net.relaxed(&st)) != frames[i].bits)
    });
    wrong.into_iter().try_fold(0, |n, w| Ok(n + w? as usize))
}
