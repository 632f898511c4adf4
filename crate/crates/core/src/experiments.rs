//! Bound verification sweeps.
//!
//! Each sweep builds the lower-bound instance for every `ε` in the config,
//! post-processes it with a mechanism built for that budget, and compares
//! the measured metric with the theorem-side bound.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adversary::{eval_lb_pair, make_batch_lb, make_online_lb, mean_stderr};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, Exec};
use crate::io::{fmt_num, round_json};
use crate::metrics::{decision_loss, ece};
use crate::noise::{GaussianVariant, NoiseKind, NoiseMechanism};
use crate::postprocess::{batch_apply, batch_apply_coupling, BatchMode, PrivacyOnline, DEFAULT_BINS};

/// Tolerance for analytic binning.
pub const BINNING_TOL: f64 = 2e-3;

/// A mechanism family, instantiated per budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechFamily {
    Point,
    Laplace,
    Gauss(GaussianVariant),
}

impl MechFamily {
    pub fn for_budget(&self, epsilon: f64) -> Result<NoiseMechanism> {
        match *self {
            MechFamily::Point => Ok(NoiseMechanism::point_mass()),
            MechFamily::Laplace => NoiseMechanism::laplace_for_budget(epsilon),
            MechFamily::Gauss(v) => NoiseMechanism::gaussian_for_budget(epsilon, v),
        }
    }
}

impl FromStr for MechFamily {
    type Err = Error;

    /// `point`, `laplace`, `gauss` or `gauss:variant=lemma|improved`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "point" => Ok(MechFamily::Point),
            "laplace" => Ok(MechFamily::Laplace),
            "gauss" | "gaussian" | "gauss:variant=lemma" => Ok(MechFamily::Gauss(GaussianVariant::Lemma)),
            "gauss:variant=improved" => Ok(MechFamily::Gauss(GaussianVariant::Improved)),
            _ => Err(Error::InvalidParameter(format!(
                "mechanism family '{s}': expected point, laplace, gauss or gauss:variant=improved"
            ))),
        }
    }
}

impl std::fmt::Display for MechFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MechFamily::Point => write!(f, "point"),
            MechFamily::Laplace => write!(f, "laplace"),
            MechFamily::Gauss(GaussianVariant::Lemma) => write!(f, "gauss"),
            MechFamily::Gauss(GaussianVariant::Improved) => write!(f, "gauss:variant=improved"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Batch,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Analytic,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: SweepKind,
    pub eps_list: Vec<f64>,
    pub mech_spec: String,
    pub mode: ModeKind,
    pub trials: usize,
    pub seed: u64,
    /// Online block length `T`; each sequence has `2T` rounds.
    pub horizon: Option<usize>,
    /// Output cells for the ECE pushforward.
    pub bins: usize,
    /// Output cells for the decision-loss pushforward.
    pub dl_bins: usize,
    /// Monte Carlo draws per trial.
    pub samples: usize,
    pub exec: Exec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: SweepKind::Batch,
            eps_list: vec![0.0025, 0.005, 0.01, 0.02, 0.04],
            mech_spec: "laplace".into(),
            mode: ModeKind::Analytic,
            trials: 200,
            seed: 0,
            horizon: None,
            bins: DEFAULT_BINS,
            dl_bins: 1000,
            samples: 100_000,
            exec: Exec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<MechFamily> {
        if self.eps_list.is_empty() {
            return Err(Error::InvalidParameter("eps_list is empty".into()));
        }
        if let Some(e) = self.eps_list.iter().find(|e| !(**e > 0.0 && **e <= 1.0 / 16.0)) {
            return Err(Error::InvalidParameter(format!("epsilon {e} outside (0, 1/16]")));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        if self.kind == SweepKind::Online && self.horizon.is_none() {
            return Err(Error::InvalidParameter("online sweep needs a horizon".into()));
        }
        self.mech_spec.parse()
    }
}

/// The additive pieces of a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParts {
    pub exp_abs_noise: f64,
    pub dp_term: f64,
    pub discretization: f64,
}

impl BoundParts {
    pub fn total(&self) -> f64 {
        self.exp_abs_noise + self.dp_term + self.discretization
    }
}

/// `4 (1 - e^{-γε} + δ)`. The Gaussian stores `2√ε` for the middle term.
fn dp_term(mech: &NoiseMechanism, epsilon: f64) -> Result<f64> {
    let dp = mech.dp_params()?;
    let spread = match mech.kind() {
        NoiseKind::TruncGaussian { .. } => 2.0 * epsilon.sqrt(),
        _ => -(-dp.gamma * epsilon).exp_m1(),
    };
    Ok(4.0 * (spread + dp.delta))
}

/// Pieces of `C = 2 max_q E|M(q) - q| + 4(1 - e^{-γε} + δ)`; for the
/// improved Gaussian width, `σ + 8ε/σ`. The noiseless mechanism has no
/// privacy and is given the bound 0 as a control.
pub fn batch_bound_parts(mech: &NoiseMechanism, epsilon: f64) -> Result<BoundParts> {
    let zero = BoundParts { exp_abs_noise: 0.0, dp_term: 0.0, discretization: 0.0 };
    match (mech.kind(), mech.variant()) {
        (NoiseKind::PointMass, _) => Ok(zero),
        (NoiseKind::TruncGaussian { sigma }, Some(GaussianVariant::Improved)) => {
            Ok(BoundParts { exp_abs_noise: sigma, dp_term: 8.0 * epsilon / sigma, ..zero })
        }
        _ => Ok(BoundParts {
            exp_abs_noise: 2.0 * mech.expected_abs_noise(),
            dp_term: dp_term(mech, epsilon)?,
            ..zero
        }),
    }
}

pub fn theorem_bound_batch(mech: &NoiseMechanism, epsilon: f64) -> Result<f64> {
    Ok(batch_bound_parts(mech, epsilon)?.total())
}

/// ECE bound for `rounds` online rounds:
/// `max_q E|M(q) - q| + 4(1 - e^{-γε} + δ) + 2 rounds^{-1/3}`.
pub fn online_bound_parts(mech: &NoiseMechanism, epsilon: f64, rounds: usize) -> Result<BoundParts> {
    let (noise, dp) = match mech.kind() {
        NoiseKind::PointMass => (0.0, 0.0),
        _ => (mech.expected_abs_noise(), dp_term(mech, epsilon)?),
    };
    Ok(BoundParts { exp_abs_noise: noise, dp_term: dp, discretization: 2.0 * (rounds as f64).cbrt().recip() })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::InvalidParameter("need at least 3 paired points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("x values are all equal".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub eps: f64,
    pub metric: String,
    pub value: f64,
    pub bound: f64,
    pub slack: f64,
    pub stderr: f64,
    pub tol: f64,
    pub passed: bool,
    pub components: BoundParts,
}

impl BoundRow {
    fn new(eps: f64, metric: &str, value: f64, stderr: f64, tol: f64, parts: BoundParts) -> Self {
        let bound = parts.total();
        let slack = bound - value;
        Self { eps, metric: metric.into(), value, bound, slack, stderr, tol, passed: slack >= -tol, components: parts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: SweepKind,
    pub mech: String,
    pub mode: ModeKind,
    pub rows: Vec<BoundRow>,
    /// Log-log slope of the ECE column against ε, with at least 3 rows.
    pub ece_slope: Option<f64>,
    pub failed: bool,
}

impl BoundReport {
    fn new(cfg: &ExperimentConfig, family: MechFamily, rows: Vec<BoundRow>) -> Self {
        let (xs, ys): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.metric == "ece").map(|r| (r.eps, r.value)).unzip();
        let ece_slope = fit_loglog_slope(&xs, &ys).ok();
        let failed = rows.iter().any(|r| !r.passed);
        Self { kind: cfg.kind, mech: family.to_string(), mode: cfg.mode, rows, ece_slope, failed }
    }

    pub fn failed_rows(&self) -> impl Iterator<Item = &BoundRow> {
        self.rows.iter().filter(|r| !r.passed)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,metric,value,bound,slack,stderr,tol,status\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                fmt_num(r.eps),
                r.metric,
                fmt_num(r.value),
                fmt_num(r.bound),
                fmt_num(r.slack),
                fmt_num(r.stderr),
                fmt_num(r.tol),
                if r.passed { "ok" } else { "FAILED" }
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        let v = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&round_json(v)).expect("json value prints")
    }
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<BoundReport> {
    match cfg.kind {
        SweepKind::Batch => run_batch_sweep(cfg),
        SweepKind::Online => run_online_sweep(cfg),
    }
}

/// Batch algorithm on the batch lower-bound instance, per ε: ECE of the
/// output and its decision loss against the reference.
pub fn run_batch_sweep(cfg: &ExperimentConfig) -> Result<BoundReport> {
    let family = cfg.validate()?;
    let rows = cfg.exec.map(cfg.eps_list.len(), |row| -> Result<Vec<BoundRow>> {
        let eps = cfg.eps_list[row];
        let inst = make_batch_lb(eps)?;
        let mech = family.for_budget(eps)?;
        let parts = batch_bound_parts(&mech, eps)?;
        let (value, stderr) = match cfg.mode {
            ModeKind::Analytic => {
                let out = batch_apply(&mech, &inst.q_marginal, BatchMode::Analytic { bins: cfg.bins })?;
                (ece(&out), 0.0)
            }
            ModeKind::Mc => {
                let eces = (0..cfg.trials)
                    .map(|t| {
                        let seed = derive_seed(cfg.seed, row as u64, t as u64);
                        let mode = BatchMode::MonteCarlo { n: cfg.samples, seed, bins: cfg.bins };
                        batch_apply(&mech, &inst.q_marginal, mode).map(|j| ece(&j))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                mean_stderr(&eces)
            }
        };
        let pushed = batch_apply_coupling(&mech, &inst.coupling, cfg.dl_bins)?;
        let dl = decision_loss(&pushed)?;
        Ok(vec![
            BoundRow::new(eps, "ece", value, stderr, BINNING_TOL + 3.0 * stderr, parts),
            BoundRow::new(eps, "decision_loss", dl, 0.0, BINNING_TOL, parts),
        ])
    });
    let rows: Vec<BoundRow> = rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
    Ok(BoundReport::new(cfg, family, rows))
}

/// Online algorithm on the online lower-bound pair, per ε: the larger of
/// the two sequences' mean ECE, and likewise for V-shape CDL against twice
/// the ECE bound.
pub fn run_online_sweep(cfg: &ExperimentConfig) -> Result<BoundReport> {
    let family = cfg.validate()?;
    let horizon = cfg.horizon.expect("validated");
    let mut rows = Vec::new();
    for (row, &eps) in cfg.eps_list.iter().enumerate() {
        let pair = make_online_lb(horizon, eps, cfg.seed)?;
        let rounds = pair.seq_q.len();
        let mech = family.for_budget(eps)?;
        let pp = PrivacyOnline::new(mech, rounds)?;
        let r = eval_lb_pair(&pair, &pp, cfg.trials, derive_seed(cfg.seed, 0x0411, row as u64), cfg.exec)?;
        let parts = online_bound_parts(&mech, eps, rounds)?;
        let doubled = BoundParts {
            exp_abs_noise: 2.0 * parts.exp_abs_noise,
            dp_term: 2.0 * parts.dp_term,
            discretization: 2.0 * parts.discretization,
        };
        rows.push(BoundRow::new(eps, "ece", r.max_of_means, r.max_stderr(), 3.0 * r.max_stderr(), parts));
        let se = r.max_stderr_cdl();
        rows.push(BoundRow::new(eps, "cdl_vshape", r.max_of_means_cdl, se, 3.0 * se, doubled));
    }
    Ok(BoundReport::new(cfg, family, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn slope_fit() {
        let xs = [0.01, 0.02, 0.04, 0.08];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.sqrt()).collect();
        assert_relative_eq!(fit_loglog_slope(&xs, &ys).unwrap(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(fit_loglog_slope(&xs, &xs).unwrap(), 1.0, epsilon = 1e-12);
        assert!(fit_loglog_slope(&xs[..2], &xs[..2]).is_err());
        assert!(fit_loglog_slope(&[1.0, 2.0, 0.0], &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn bound_constants() {
        let lap = NoiseMechanism::laplace_for_budget(0.01).unwrap();
        let want = 2.0 * lap.expected_abs_noise() + 4.0 * (1.0 - (-0.01f64 * 200f64.sqrt()).exp());
        assert_relative_eq!(theorem_bound_batch(&lap, 0.01).unwrap(), want, max_relative = 1e-12);
        assert_relative_eq!(theorem_bound_batch(&lap, 0.01).unwrap(), 0.8087, epsilon = 1e-3);
        let g = NoiseMechanism::gaussian_for_budget(0.04, GaussianVariant::Improved).unwrap();
        assert_relative_eq!(theorem_bound_batch(&g, 0.04).unwrap(), 1.8, epsilon = 1e-12);
        assert_eq!(theorem_bound_batch(&NoiseMechanism::point_mass(), 0.04).unwrap(), 0.0);
        let small = theorem_bound_batch(&NoiseMechanism::laplace_for_budget(1e-6).unwrap(), 1e-6).unwrap();
        assert!(small < 0.01 && small / 1e-3 > 1.0);
    }

    #[test]
    fn point_mass_control_fails() {
        let cfg = ExperimentConfig { eps_list: vec![0.04], mech_spec: "point".into(), ..Default::default() };
        let r = run_batch_sweep(&cfg).unwrap();
        assert!(r.failed);
        // Q itself: |0.3 - 0.44| on each value.
        assert!((r.rows[0].value - 0.14).abs() < 1e-12);
    }

    #[test]
    fn small_online_sweep_is_reproducible() {
        let cfg = ExperimentConfig {
            kind: SweepKind::Online,
            eps_list: vec![0.04],
            trials: 8,
            horizon: Some(100),
            ..Default::default()
        };
        let a = run_online_sweep(&cfg).unwrap();
        let b = run_online_sweep(&ExperimentConfig { exec: Exec::Sequential, ..cfg }).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(!a.failed, "{}", a.to_csv());
        assert!(a.rows[1].value <= 2.0 * a.rows[0].value + 1e-9);
    }
}
