//! Privacy-based post-processing, batch and online.
//!
//! The batch algorithm outputs `p ~ M(q)` for a noise mechanism `M`. The
//! online algorithm does the same each round and floors the draw onto the
//! grid `{i/m}` with `m = ceil(T^(1/3))`.
//!
//! Post-processors never see states: [`PostProcessor::predict`] receives the
//! past predictions and its own outputs only.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{cdl_lp, cdl_vshape, ece};
use crate::model::{Coupling, CouplingAtom, EmpiricalJoint, GridSpec, Sample, SnapMode};
use crate::noise::NoiseMechanism;

pub const DEFAULT_BINS: usize = 1000;

/// Inputs and outputs of the rounds played so far.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    qs: Vec<f64>,
    ps: Vec<f64>,
}

impl History {
    pub fn qs(&self) -> &[f64] {
        &self.qs
    }

    pub fn ps(&self) -> &[f64] {
        &self.ps
    }

    pub fn len(&self) -> usize {
        self.qs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qs.is_empty()
    }

    fn push(&mut self, q: f64, p: f64) {
        self.qs.push(q);
        self.ps.push(p);
    }
}

/// A state-blind map from the current prediction (and history) to an output.
pub trait PostProcessor: Send + Sync {
    fn name(&self) -> String;

    /// Output for round `history.len() + 1`. Must lie in [0,1].
    fn predict(&mut self, history: &History, q: f64, rng: &mut dyn RngCore) -> Result<f64>;

    /// Restores the state before the first round.
    fn reset(&mut self) {}

    fn boxed_clone(&self) -> Box<dyn PostProcessor>;
}

impl Clone for Box<dyn PostProcessor> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl PostProcessor for Identity {
    fn name(&self) -> String {
        "identity".into()
    }

    fn predict(&mut self, _: &History, q: f64, _: &mut dyn RngCore) -> Result<f64> {
        Ok(q)
    }

    fn boxed_clone(&self) -> Box<dyn PostProcessor> {
        Box::new(*self)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl PostProcessor for Constant {
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }

    fn predict(&mut self, _: &History, _: f64, _: &mut dyn RngCore) -> Result<f64> {
        Ok(self.0)
    }

    fn boxed_clone(&self) -> Box<dyn PostProcessor> {
        Box::new(*self)
    }
}

/// Replaces a prediction by its posterior under a fixed joint. Predictions
/// outside the support use the nearest support value.
#[derive(Debug, Clone)]
pub struct PosteriorMap {
    joint: EmpiricalJoint,
}

impl PosteriorMap {
    pub fn new(joint: EmpiricalJoint) -> Self {
        Self { joint }
    }

    pub fn map(&self, q: f64) -> f64 {
        let values = self.joint.values();
        let i = match self.joint.find(q) {
            Some(i) => i,
            None => {
                let hi = values.partition_point(|&v| v < q);
                if hi == 0 {
                    0
                } else if hi == values.len() || q - values[hi - 1] <= values[hi] - q {
                    hi - 1
                } else {
                    hi
                }
            }
        };
        self.joint.posterior(i)
    }
}

impl PostProcessor for PosteriorMap {
    fn name(&self) -> String {
        "posterior_map".into()
    }

    fn predict(&mut self, _: &History, q: f64, _: &mut dyn RngCore) -> Result<f64> {
        Ok(self.map(q))
    }

    fn boxed_clone(&self) -> Box<dyn PostProcessor> {
        Box::new(self.clone())
    }
}

fn privacy_round<R: Rng + ?Sized>(mech: &NoiseMechanism, grid: &GridSpec, q: f64, rng: &mut R) -> f64 {
    grid.snap(mech.sample(q, rng), SnapMode::Floor)
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::DomainViolation(format!("prediction {q} outside [0,1]")));
    }
    Ok(())
}

/// The online privacy algorithm as a post-processor drawing from the
/// caller's generator.
#[derive(Debug, Clone)]
pub struct PrivacyOnline {
    mech: NoiseMechanism,
    horizon: usize,
    grid: GridSpec,
    round: usize,
}

impl PrivacyOnline {
    pub fn new(mech: NoiseMechanism, horizon: usize) -> Result<Self> {
        Ok(Self { mech, horizon, grid: GridSpec::for_horizon(horizon)?, round: 0 })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }
}

impl PostProcessor for PrivacyOnline {
    fn name(&self) -> String {
        format!("privacy_online({})", self.mech)
    }

    fn predict(&mut self, _: &History, q: f64, rng: &mut dyn RngCore) -> Result<f64> {
        check_q(q)?;
        if self.round >= self.horizon {
            return Err(Error::HorizonExceeded(self.horizon));
        }
        self.round += 1;
        Ok(privacy_round(&self.mech, &self.grid, q, rng))
    }

    fn reset(&mut self) {
        self.round = 0;
    }

    fn boxed_clone(&self) -> Box<dyn PostProcessor> {
        Box::new(self.clone())
    }
}

/// The online algorithm with its own generator.
#[derive(Debug, Clone)]
pub struct OnlineState {
    pub mech: NoiseMechanism,
    pub horizon: usize,
    pub grid: GridSpec,
    pub round: usize,
    rng: ChaCha8Rng,
}

impl OnlineState {
    pub fn new(mech: NoiseMechanism, horizon: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            mech,
            horizon,
            grid: GridSpec::for_horizon(horizon)?,
            round: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn step(&mut self, q: f64) -> Result<f64> {
        check_q(q)?;
        if self.round >= self.horizon {
            return Err(Error::HorizonExceeded(self.horizon));
        }
        self.round += 1;
        Ok(privacy_round(&self.mech, &self.grid, q, &mut self.rng))
    }
}

pub fn online_step(state: &mut OnlineState, q: f64) -> Result<f64> {
    state.step(q)
}

/// Metrics of an online run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineReport {
    pub ece: f64,
    pub cdl_vshape: f64,
    pub cdl_lp: f64,
}

/// Feeds `qs` to `pp` one round at a time.
pub fn predict_sequence(pp: &mut dyn PostProcessor, qs: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    let mut history = History::default();
    for &q in qs {
        check_q(q)?;
        let p = pp.predict(&history, q, rng)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::DomainViolation(format!("{} produced {p}", pp.name())));
        }
        history.push(q, p);
    }
    Ok(history.ps)
}

/// Empirical joint of `(p_t, θ_t)` with uniform weights.
pub fn sequence_joint(ps: &[f64], thetas: &[u8]) -> Result<EmpiricalJoint> {
    if ps.len() != thetas.len() {
        return Err(Error::LengthMismatch { predictions: ps.len(), states: thetas.len() });
    }
    let samples: Vec<Sample> = ps.iter().zip(thetas).map(|(&p, &t)| Sample::new(p, t)).collect();
    EmpiricalJoint::from_samples(&samples)
}

/// Runs `pp` over `qs`, then scores the outputs against `thetas`. States
/// are only read once every prediction has been made.
pub fn run_online(
    pp: &mut dyn PostProcessor,
    qs: &[f64],
    thetas: &[u8],
    rng: &mut dyn RngCore,
) -> Result<(Vec<f64>, OnlineReport)> {
    if qs.len() != thetas.len() {
        return Err(Error::LengthMismatch { predictions: qs.len(), states: thetas.len() });
    }
    if qs.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let ps = predict_sequence(pp, qs, rng)?;
    let joint = sequence_joint(&ps, thetas)?;
    let report = OnlineReport { ece: ece(&joint), cdl_vshape: cdl_vshape(&joint).0, cdl_lp: cdl_lp(&joint)? };
    Ok((ps, report))
}

/// How [`batch_apply`] represents the output distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum BatchMode {
    /// Exact cell masses on `bins` uniform output cells.
    Analytic { bins: usize },
    /// `n` draws per unit mass, collected on the same cells.
    MonteCarlo { n: usize, seed: u64, bins: usize },
}

impl BatchMode {
    fn bins(&self) -> usize {
        match *self {
            BatchMode::Analytic { bins } | BatchMode::MonteCarlo { bins, .. } => bins,
        }
    }
}

/// Output cell `k` is `(k/bins, (k+1)/bins]`, with cell 0 also holding 0.
fn cell_of(p: f64, bins: usize) -> usize {
    ((p * bins as f64).ceil() as usize).saturating_sub(1).min(bins - 1)
}

fn cell_bounds(k: usize, bins: usize) -> (f64, f64) {
    let lo = if k == 0 { -1.0 } else { k as f64 / bins as f64 };
    (lo, (k + 1) as f64 / bins as f64)
}

#[derive(Clone, Copy, Default)]
struct Cell {
    m1: f64,
    m0: f64,
    first: f64,
}

impl Cell {
    /// The cell's conditional mean, clamped into the cell.
    fn representative(&self, k: usize, bins: usize) -> f64 {
        let (lo, hi) = cell_bounds(k, bins);
        (self.first / (self.m1 + self.m0)).clamp(lo.max(0.0), hi)
    }
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 10 {
        return Err(Error::InvalidParameter(format!("need at least 10 bins, got {bins}")));
    }
    Ok(())
}

/// Distribution of `(M(q), θ)` when `(q, θ)` follows `joint`.
///
/// Outputs landing in the same cell are merged at their conditional mean.
pub fn batch_apply(mech: &NoiseMechanism, joint: &EmpiricalJoint, mode: BatchMode) -> Result<EmpiricalJoint> {
    let bins = mode.bins();
    check_bins(bins)?;
    let mut cells = vec![Cell::default(); bins];
    match mode {
        BatchMode::Analytic { .. } => {
            for i in 0..joint.len() {
                let (x, m1, m0) = (joint.value(i), joint.mass1()[i], joint.mass0()[i]);
                for (k, cell) in cells.iter_mut().enumerate() {
                    let (lo, hi) = cell_bounds(k, bins);
                    let (mass, first) = mech.cell_moments(x, lo, hi);
                    cell.m1 += m1 * mass;
                    cell.m0 += m0 * mass;
                    cell.first += (m1 + m0) * first;
                }
            }
        }
        BatchMode::MonteCarlo { n, seed, .. } => {
            if n == 0 {
                return Err(Error::InvalidParameter("monte carlo needs n >= 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (x, w, post) in joint.iter() {
                let draws = ((n as f64 * w).round() as usize).max(1);
                let each = w / draws as f64;
                for _ in 0..draws {
                    let p = mech.sample(x, &mut rng);
                    let cell = &mut cells[cell_of(p, bins)];
                    if rng.gen::<f64>() < post {
                        cell.m1 += each;
                    } else {
                        cell.m0 += each;
                    }
                    cell.first += each * p;
                }
            }
        }
    }
    let triples: Vec<(f64, f64, f64)> = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.m1 + c.m0 > 0.0)
        .map(|(k, c)| (c.representative(k, bins), c.m1, c.m0))
        .collect();
    EmpiricalJoint::from_masses(triples)
}

/// Pushes the `q` side of a coupling through independent noise, on `bins`
/// analytic cells. Each cell sits at its conditional mean under the
/// q-marginal, so the output `p` depends on `q` only through the noise.
pub fn batch_apply_coupling(mech: &NoiseMechanism, c: &Coupling, bins: usize) -> Result<Coupling> {
    check_bins(bins)?;
    let qm = c.marginal(crate::model::Side::Q);
    let moments: Vec<Vec<(f64, f64)>> = qm
        .values()
        .iter()
        .map(|&x| (0..bins).map(|k| {
            let (lo, hi) = cell_bounds(k, bins);
            mech.cell_moments(x, lo, hi)
        }).collect())
        .collect();
    let mut cells = vec![Cell::default(); bins];
    for (i, row) in moments.iter().enumerate() {
        let w = qm.weight(i);
        for (cell, &(mass, first)) in cells.iter_mut().zip(row) {
            cell.m1 += w * mass;
            cell.first += w * first;
        }
    }
    let reps: Vec<f64> = cells
        .iter()
        .enumerate()
        .map(|(k, c)| if c.m1 > 0.0 { c.representative(k, bins) } else { f64::NAN })
        .collect();
    let mut atoms = Vec::with_capacity(c.atoms().len() * bins);
    for a in c.atoms() {
        let i = qm.find(a.q).expect("atom value is in the q-marginal");
        for (k, &(mass, _)) in moments[i].iter().enumerate() {
            if mass > 0.0 && cells[k].m1 > 0.0 {
                atoms.push(CouplingAtom { q: reps[k], b: a.b, state: a.state, mass: a.mass * mass });
            }
        }
    }
    Coupling::new(atoms)
}

/// Built-in post-processor kinds, for configs and the CLI.
#[derive(Debug, Clone)]
pub enum Builtin {
    Identity,
    Constant(f64),
    PosteriorMap(EmpiricalJoint),
    PrivacyOnline { mech: NoiseMechanism, horizon: usize },
}

impl Builtin {
    pub fn build(&self) -> Result<Box<dyn PostProcessor>> {
        Ok(match self {
            Builtin::Identity => Box::new(Identity),
            Builtin::Constant(c) => {
                check_q(*c)?;
                Box::new(Constant(*c))
            }
            Builtin::PosteriorMap(j) => Box::new(PosteriorMap::new(j.clone())),
            Builtin::PrivacyOnline { mech, horizon } => Box::new(PrivacyOnline::new(*mech, *horizon)?),
        })
    }
}

/// One instance of each built-in kind, parameterized by the arguments.
pub fn builtin_postprocessors(
    mech: NoiseMechanism,
    horizon: usize,
    constant: f64,
    joint: EmpiricalJoint,
) -> Result<Vec<Box<dyn PostProcessor>>> {
    [
        Builtin::Identity,
        Builtin::PrivacyOnline { mech, horizon },
        Builtin::Constant(constant),
        Builtin::PosteriorMap(joint),
    ]
    .iter()
    .map(Builtin::build)
    .collect()
}
