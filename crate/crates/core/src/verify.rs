//! Self-check suites run by `calpost verify`.
//!
//! Checks that are known not to hold in general are reported with
//! [`Status::Known`] and a counterexample note instead of failing the run.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{eval_lb_pair, make_batch_lb, make_online_lb, online_lower_bound, OnlineLbPair};
use crate::error::Result;
use crate::exec::{rng_for, Exec};
use crate::experiments::{run_batch_sweep, run_online_sweep, ExperimentConfig, SweepKind};
use crate::metrics::{cdl_lp, cdl_vshape, decision_loss, decision_loss_for, dtc_dual, dtc_primal, ece, smooth_cal};
use crate::model::{EmpiricalJoint, GridSpec};
use crate::noise::{DpParams, GaussianVariant, NoiseMechanism};
use crate::postprocess::{Constant, Identity, PosteriorMap, PostProcessor, PrivacyOnline};
use crate::score::VShapeScore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Quick,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Fails, and is known to be false in general.
    Known,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub status: Status,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub suite: Suite,
    pub seed: u64,
    /// Runs the DP ratio check against half the true privacy parameter, as
    /// a negative control.
    pub inject_dp_fault: bool,
    pub exec: Exec,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { suite: Suite::Quick, seed: 0, inject_dp_fault: false, exec: Exec::default() }
    }
}

/// A random joint with 1 to `max_k` values, uniform values and posteriors,
/// and random weights.
pub fn random_joint(rng: &mut ChaCha8Rng, max_k: usize) -> EmpiricalJoint {
    let k = rng.gen_range(1..=max_k);
    let items: Vec<(f64, f64, f64)> = (0..k)
        .map(|_| (rng.gen::<f64>(), rng.gen_range(0.05..1.0), rng.gen::<f64>()))
        .collect();
    EmpiricalJoint::from_posteriors(items).expect("random joint is valid")
}

pub fn table1_joint() -> EmpiricalJoint {
    EmpiricalJoint::from_posteriors([(0.5001, 0.5, 0.0), (0.4999, 0.5, 1.0)]).expect("fixed joint")
}

struct Runner {
    checks: Vec<Check>,
}

impl Runner {
    fn run<F: FnOnce() -> Result<(Status, String)>>(&mut self, id: &str, f: F) {
        let t0 = Instant::now();
        let (status, detail) = f().unwrap_or_else(|e| (Status::Fail, format!("error: {e}")));
        self.checks.push(Check { id: id.into(), status, detail, seconds: t0.elapsed().as_secs_f64() });
    }
}

fn pass_if(ok: bool, detail: String) -> Result<(Status, String)> {
    Ok((if ok { Status::Pass } else { Status::Fail }, detail))
}

/// Pooled posterior of both online sequences: the Bayes map of a
/// post-processor that does not know which sequence it faces.
pub fn pooled_posterior_map(pair: &OnlineLbPair) -> Result<PosteriorMap> {
    let mut qs = pair.seq_q.clone();
    qs.extend(&pair.seq_q2);
    let mut th = pair.seq_theta.clone();
    th.extend(&pair.seq_theta2);
    Ok(PosteriorMap::new(crate::postprocess::sequence_joint(&qs, &th)?))
}

/// The state-blind post-processors the online lower bound is checked on.
pub fn lower_bound_field(pair: &OnlineLbPair) -> Result<Vec<Box<dyn PostProcessor>>> {
    let rounds = pair.seq_q.len();
    let eps = pair.epsilon;
    let mut out: Vec<Box<dyn PostProcessor>> = vec![Box::new(Identity), Box::new(pooled_posterior_map(pair)?)];
    out.extend((0..=20).map(|i| Box::new(Constant(i as f64 * 0.05)) as Box<dyn PostProcessor>));
    out.push(Box::new(PrivacyOnline::new(NoiseMechanism::laplace_for_budget(eps)?, rounds)?));
    out.push(Box::new(PrivacyOnline::new(
        NoiseMechanism::gaussian_for_budget(eps, GaussianVariant::Lemma)?,
        rounds,
    )?));
    Ok(out)
}

pub fn run_suite(opts: &VerifyOptions) -> Vec<Check> {
    let full = opts.suite == Suite::Full;
    let mut r = Runner { checks: Vec::new() };
    let grid = GridSpec::new(200).expect("positive");

    r.run("metric_ground_truth", || {
        let j = table1_joint();
        let e = ece(&j);
        let sc = smooth_cal(&j)?;
        let d = dtc_primal(&j, &grid)?.value;
        let ok = (e - 0.5001).abs() < 1e-12 && (5e-5..=1.1e-4).contains(&sc) && (5e-5..=1.1e-4).contains(&d);
        pass_if(ok, format!("ece={e:.6} smcal={sc:.4e} dtc={d:.4e}"))
    });

    let n_joints = if full { 1000 } else { 50 };
    let joints: Vec<EmpiricalJoint> = opts.exec.map(n_joints, |i| random_joint(&mut rng_for(opts.seed, 0x5A, i as u64), 8));
    let m = grid.cells() as f64;
    let mut sandwich: Result<Vec<(f64, f64)>> = Ok(Vec::new());
    r.run("sandwich_lower", || {
        let pairs: Vec<Result<(f64, f64)>> = opts.exec.map(n_joints, |i| {
            Ok((smooth_cal(&joints[i])?, dtc_primal(&joints[i], &grid)?.value))
        });
        sandwich = pairs.into_iter().collect();
        let s = sandwich.clone()?;
        let bad = s.iter().filter(|(sc, d)| 0.5 * d - 1.0 / m > *sc + 1e-9).count();
        pass_if(bad == 0, format!("{bad}/{} joints violate dtc/2 - 1/m <= smcal", s.len()))
    });
    r.run("sandwich_upper", || {
        let s = sandwich.clone()?;
        let bad = s.iter().filter(|(sc, d)| *sc > d + 1e-7).count();
        let worst = s.iter().map(|(sc, d)| sc / d.max(1e-300)).fold(0.0, f64::max);
        let detail = format!("{bad}/{} joints have smcal > dtc, worst ratio {worst:.3}", s.len());
        // smcal <= dtc fails in general: values 0.7 and 0.9 with posteriors
        // 1 and 0.5 have smcal 0.08 and dtc 0.05.
        Ok((if bad == 0 { Status::Pass } else { Status::Known }, detail))
    });
    r.run("sandwich_upper_2x", || {
        let s = sandwich.clone()?;
        let bad = s.iter().filter(|(sc, d)| *sc > 2.0 * d + 1e-7).count();
        pass_if(bad == 0, format!("{bad}/{} joints have smcal > 2 dtc", s.len()))
    });
    r.run("weak_duality", || {
        let n = if full { 100 } else { 10 };
        let res: Vec<Result<bool>> = opts.exec.map(n, |i| {
            let j = &joints[i];
            let dual = dtc_dual(j, &grid)?.value;
            let primal = dtc_primal(j, &grid)?.value;
            Ok(dual <= primal + 1e-7 && (primal - dual).abs() <= 1e-6)
        });
        let bad = res.into_iter().collect::<Result<Vec<bool>>>()?.iter().filter(|ok| !**ok).count();
        pass_if(bad == 0, format!("{bad}/{n} joints break dual <= primal or leave a gap"))
    });
    r.run("cdl_le_2ece", || {
        let res: Vec<Result<bool>> = opts.exec.map(n_joints, |i| {
            let j = &joints[i];
            let (v, _) = cdl_vshape(j);
            let lp = cdl_lp(j)?;
            Ok(v <= lp + 1e-7 && lp <= 2.0 * ece(j) + 1e-7)
        });
        let bad = res.into_iter().collect::<Result<Vec<bool>>>()?.iter().filter(|ok| !**ok).count();
        pass_if(bad == 0, format!("{bad}/{n_joints} joints break cdl_vshape <= cdl_lp <= 2 ece"))
    });

    r.run("check_dp_ratio", || {
        let mut worst = f64::NEG_INFINITY;
        for eps in [0.0025, 0.01, 0.04] {
            let m = NoiseMechanism::laplace_for_budget(eps)?;
            let mut dp = m.dp_params()?;
            if opts.inject_dp_fault {
                dp = DpParams { gamma: 0.5 * dp.gamma, ..dp };
            }
            worst = worst.max(m.check_dp_ratio_with(0.01, dp)?);
        }
        pass_if(worst <= 1e-9, format!("worst log-ratio excess {worst:.3e}"))
    });
    r.run("gaussian_tail", || {
        let mut worst = f64::NEG_INFINITY;
        for eps in [0.0025, 0.01, 0.04] {
            let m = NoiseMechanism::gaussian_for_budget(eps, GaussianVariant::Lemma)?;
            worst = worst.max(m.gaussian_tail_excess(0.01)?);
        }
        pass_if(worst <= 1e-6, format!("worst tail mass minus delta {worst:.3e}"))
    });

    let eps_list = if full { vec![0.0025, 0.005, 0.01, 0.02, 0.04] } else { vec![0.01, 0.04] };
    for mech in ["laplace", "gauss"] {
        let cfg = ExperimentConfig { eps_list: eps_list.clone(), mech_spec: mech.into(), exec: opts.exec, ..Default::default() };
        let report = run_batch_sweep(&cfg);
        r.run(&format!("batch_bound_{mech}"), || {
            let rep = report.clone()?;
            let bad: Vec<String> = rep.failed_rows().map(|r| format!("eps={} {}", r.eps, r.metric)).collect();
            pass_if(bad.is_empty(), format!("{} rows, failed: {bad:?}", rep.rows.len()))
        });
        if full {
            r.run(&format!("ece_slope_{mech}"), || {
                let slope = report.clone()?.ece_slope.unwrap_or(f64::NAN);
                // Truncation flattens the curve at this ε range; the slope
                // tends to 1/2 only as ε -> 0.
                let status = if (0.4..=0.6).contains(&slope) { Status::Pass } else { Status::Known };
                Ok((status, format!("slope {slope:.4}")))
            });
        }
    }
    r.run("batch_lower_bound", || {
        let inst = make_batch_lb(0.04)?;
        let c = inst.collapsed_coupling();
        let witness = decision_loss_for(&c, &VShapeScore::new(0.5)?);
        let lp = decision_loss(&c)?;
        pass_if((witness - 0.1).abs() <= 1e-6, format!("S_0.5 gap {witness:.9}, best bounded proper score {lp:.6}"))
    });

    r.run("online_upper", || {
        let cfg = ExperimentConfig {
            kind: SweepKind::Online,
            eps_list: vec![0.04],
            horizon: Some(1000),
            trials: if full { 200 } else { 20 },
            seed: opts.seed,
            exec: opts.exec,
            ..Default::default()
        };
        let rep = run_online_sweep(&cfg)?;
        let (e, c) = (&rep.rows[0], &rep.rows[1]);
        let ok = e.passed && c.value <= 2.0 * e.value + 3.0 * c.stderr;
        pass_if(ok, format!("ece {:.5} <= {:.5}; cdl {:.5} vs 2 ece {:.5}", e.value, e.bound, c.value, 2.0 * e.value))
    });
    r.run("online_lower", || {
        let pair = make_online_lb(100, 0.04, opts.seed)?;
        let trials = if full { 200 } else { 20 };
        let lb = online_lower_bound(0.04);
        let mut bad = Vec::new();
        for (k, pp) in lower_bound_field(&pair)?.iter().enumerate() {
            let res = eval_lb_pair(&pair, pp.as_ref(), trials, opts.seed ^ k as u64, opts.exec)?;
            if res.max_of_means < lb - 3.0 * res.max_stderr() || res.max_of_means_cdl < lb - 3.0 * res.max_stderr_cdl() {
                bad.push(pp.name());
            }
        }
        pass_if(bad.is_empty(), format!("below {lb}: {bad:?}"))
    });
    r.run("dtc_sequences", || {
        let pair = make_online_lb(100, 0.04, opts.seed)?;
        let a = dtc_primal(&pair.joint_1()?, &grid)?.value;
        let b = dtc_primal(&pair.joint_2()?, &grid)?.value;
        let ok = [a, b].iter().all(|d| (d - 0.04).abs() <= 1.0 / m);
        pass_if(ok, format!("dtc {a:.5} and {b:.5}"))
    });
    r.checks
}

/// True when no check has [`Status::Fail`].
pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.status != Status::Fail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes_and_fault_is_caught() {
        let checks = run_suite(&VerifyOptions::default());
        for c in &checks {
            assert_ne!(c.status, Status::Fail, "{}: {}", c.id, c.detail);
        }
        let faulty = run_suite(&VerifyOptions { inject_dp_fault: true, ..Default::default() });
        let failed: Vec<&str> = faulty.iter().filter(|c| c.status == Status::Fail).map(|c| c.id.as_str()).collect();
        assert_eq!(failed, ["check_dp_ratio"]);
    }
}
