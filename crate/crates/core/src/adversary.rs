//! Lower-bound instances for post-processing.
//!
//! The batch instance pairs a predictor `Q` with a calibrated reference `B`
//! at distance `ε`; no state-blind post-processing of `Q` gets within
//! `√ε/2` of `B`. The online pair consists of two prediction sequences that
//! agree on their first `T` rounds, so a post-processor has to commit before
//! learning which one it faces.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{rng_for, Exec};
use crate::metrics::{cdl_vshape, ece};
use crate::model::{Coupling, CouplingAtom, EmpiricalJoint, Side};
use crate::postprocess::{predict_sequence, sequence_joint, PostProcessor};

/// Largest admissible `ε`; keeps `1/2 + √ε <= 3/4`.
pub const MAX_EPSILON: f64 = 1.0 / 16.0;

fn check_eps(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= MAX_EPSILON) {
        return Err(Error::InvalidParameter(format!("epsilon {epsilon} outside (0, 1/16]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLbInstance {
    pub epsilon: f64,
    /// Joint law of `(q, b, θ)`.
    pub coupling: Coupling,
    pub q_marginal: EmpiricalJoint,
    /// `Q` with every value replaced by its posterior.
    pub q_tilde: EmpiricalJoint,
}

impl BatchLbInstance {
    /// The coupling with `q` replaced by its posterior, i.e. `(Q̃, B, θ)`.
    pub fn collapsed_coupling(&self) -> Coupling {
        let qm = &self.q_marginal;
        self.coupling
            .map_q(|q| qm.posterior(qm.find(q).expect("q value in marginal")))
            .expect("collapsing keeps the coupling valid")
    }
}

/// With probability `1 - √ε`, `q = b = 1/2 ∓ √ε` and the state follows `b`.
/// With probability `√ε`, `b = 1/2` and `q` points the wrong way:
/// `q = 1/2 - √ε` with `θ = 1`, or `q = 1/2 + √ε` with `θ = 0`.
pub fn make_batch_lb(epsilon: f64) -> Result<BatchLbInstance> {
    check_eps(epsilon)?;
    let s = epsilon.sqrt();
    let (lo, hi) = (0.5 - s, 0.5 + s);
    let agree = 0.5 * (1.0 - s);
    let atom = |q, b, state, mass| CouplingAtom { q, b, state, mass };
    let atoms = vec![
        atom(lo, lo, 1, agree * lo),
        atom(lo, lo, 0, agree * hi),
        atom(hi, hi, 1, agree * hi),
        atom(hi, hi, 0, agree * lo),
        atom(lo, 0.5, 1, 0.5 * s),
        atom(hi, 0.5, 0, 0.5 * s),
    ];
    let coupling = Coupling::new(atoms)?;
    let q_marginal = coupling.marginal(Side::Q);
    let q_tilde = q_marginal.collapse_to_posteriors();
    Ok(BatchLbInstance { epsilon, coupling, q_marginal, q_tilde })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineLbPair {
    pub horizon: usize,
    pub epsilon: f64,
    pub seq_q: Vec<f64>,
    pub seq_theta: Vec<u8>,
    pub seq_q2: Vec<f64>,
    pub seq_theta2: Vec<u8>,
}

/// State counts `(block 1, block 2, sequence 2)` if all are integers.
fn lb_counts(horizon: usize, epsilon: f64) -> Option<(usize, usize, usize)> {
    let s = epsilon.sqrt();
    let t = horizon as f64;
    let exact = |c: f64| {
        let r = c.round();
        ((c - r).abs() <= 1e-9 * c.abs().max(1.0)).then_some(r as usize)
    };
    Some((
        exact(t * (0.5 - 0.5 * s + epsilon))?,
        exact(t * (0.5 + 0.5 * s - epsilon))?,
        exact(2.0 * t * (0.5 - s - epsilon))?,
    ))
}

const HORIZON_SEARCH: usize = 10_000_000;

/// Sequence 1 predicts `1/2 - √ε` for `T` rounds, then `1/2 + √ε` for `T`
/// rounds. Sequence 2 predicts `1/2 - √ε` throughout. States are placed by a
/// seeded shuffle within each block; only the counts are prescribed.
pub fn make_online_lb(horizon: usize, epsilon: f64, seed: u64) -> Result<OnlineLbPair> {
    check_eps(epsilon)?;
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let Some((ones1, ones2, ones_seq2)) = lb_counts(horizon, epsilon) else {
        let smallest = (horizon..=horizon.saturating_mul(1000).min(HORIZON_SEARCH))
            .find(|&t| lb_counts(t, epsilon).is_some())
            .map_or_else(|| "none within search range".to_string(), |t| t.to_string());
        return Err(Error::IncompatibleHorizon { requested: horizon, epsilon, smallest });
    };
    let s = epsilon.sqrt();
    let t = horizon;
    let mut rng = rng_for(seed, 0xAD, horizon as u64);
    let block = |ones: usize, len: usize, rng: &mut _| {
        let mut v: Vec<u8> = (0..len).map(|i| (i < ones) as u8).collect();
        v.shuffle(rng);
        v
    };
    let mut seq_theta = block(ones1, t, &mut rng);
    seq_theta.extend(block(ones2, t, &mut rng));
    let seq_theta2 = block(ones_seq2, 2 * t, &mut rng);
    let mut seq_q = vec![0.5 - s; t];
    seq_q.extend(vec![0.5 + s; t]);
    Ok(OnlineLbPair { horizon, epsilon, seq_q, seq_theta, seq_q2: vec![0.5 - s; 2 * t], seq_theta2 })
}

impl OnlineLbPair {
    pub fn joint_1(&self) -> Result<EmpiricalJoint> {
        sequence_joint(&self.seq_q, &self.seq_theta)
    }

    pub fn joint_2(&self) -> Result<EmpiricalJoint> {
        sequence_joint(&self.seq_q2, &self.seq_theta2)
    }
}

/// Monte Carlo means over trials, with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbEval {
    pub trials: usize,
    pub mean_ece_1: f64,
    pub mean_ece_2: f64,
    pub mean_cdl_1: f64,
    pub mean_cdl_2: f64,
    pub stderr_ece_1: f64,
    pub stderr_ece_2: f64,
    pub stderr_cdl_1: f64,
    pub stderr_cdl_2: f64,
    pub max_of_means: f64,
    pub max_of_means_cdl: f64,
}

impl LbEval {
    /// Standard error attached to `max_of_means`.
    pub fn max_stderr(&self) -> f64 {
        if self.mean_ece_1 >= self.mean_ece_2 {
            self.stderr_ece_1
        } else {
            self.stderr_ece_2
        }
    }

    pub fn max_stderr_cdl(&self) -> f64 {
        if self.mean_cdl_1 >= self.mean_cdl_2 {
            self.stderr_cdl_1
        } else {
            self.stderr_cdl_2
        }
    }
}

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs a fresh copy of `pp` on both sequences in each trial.
pub fn eval_lb_pair(
    pair: &OnlineLbPair,
    pp: &dyn PostProcessor,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<LbEval> {
    if trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let one = |q: &[f64], th: &[u8], stream: u64, trial: usize| -> Result<(f64, f64)> {
        let mut p = pp.boxed_clone();
        p.reset();
        let mut rng = rng_for(seed, stream, trial as u64);
        let ps = predict_sequence(p.as_mut(), q, &mut rng)?;
        let j = sequence_joint(&ps, th)?;
        Ok((ece(&j), cdl_vshape(&j).0))
    };
    let runs = exec.map(trials, |i| -> Result<[f64; 4]> {
        let (e1, c1) = one(&pair.seq_q, &pair.seq_theta, 1, i)?;
        let (e2, c2) = one(&pair.seq_q2, &pair.seq_theta2, 2, i)?;
        Ok([e1, e2, c1, c2])
    });
    let runs: Vec<[f64; 4]> = runs.into_iter().collect::<Result<_>>()?;
    let col = |k: usize| mean_stderr(&runs.iter().map(|r| r[k]).collect::<Vec<_>>());
    let (e1, se1) = col(0);
    let (e2, se2) = col(1);
    let (c1, sc1) = col(2);
    let (c2, sc2) = col(3);
    Ok(LbEval {
        trials,
        mean_ece_1: e1,
        mean_ece_2: e2,
        mean_cdl_1: c1,
        mean_cdl_2: c2,
        stderr_ece_1: se1,
        stderr_ece_2: se2,
        stderr_cdl_1: sc1,
        stderr_cdl_2: sc2,
        max_of_means: e1.max(e2),
        max_of_means_cdl: c1.max(c2),
    })
}

/// `(1/8)√ε + ε/2`, the online lower bound.
pub fn online_lower_bound(epsilon: f64) -> f64 {
    epsilon.sqrt() / 8.0 + epsilon / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{decision_loss_for, dist, expected_score};
    use crate::postprocess::{Constant, Identity};
    use crate::score::VShapeScore;

    #[test]
    fn batch_instance_shape() {
        let inst = make_batch_lb(0.04).unwrap();
        assert_eq!(inst.q_marginal.values(), &[0.3, 0.7]);
        let qt = inst.q_tilde.values();
        assert!((qt[0] - 0.44).abs() < 1e-12 && (qt[1] - 0.56).abs() < 1e-12);
        assert!((dist(&inst.coupling) - 0.04).abs() < 1e-12);
        let b = inst.coupling.marginal(Side::B);
        assert!(b.is_calibrated(1e-12));
        assert!(make_batch_lb(0.1).is_err() && make_batch_lb(0.0).is_err());
    }

    #[test]
    fn vshape_gap_is_half_root_eps() {
        let inst = make_batch_lb(0.04).unwrap();
        let s = VShapeScore::new(0.5).unwrap();
        let b = inst.coupling.marginal(Side::B);
        assert!((expected_score(&inst.q_tilde, &s) - 0.56).abs() < 1e-12);
        assert!((expected_score(&b, &s) - 0.66).abs() < 1e-12);
        let gap = decision_loss_for(&inst.collapsed_coupling(), &s);
        assert!((gap - 0.1).abs() < 1e-12);
    }

    #[test]
    fn online_pair_counts_and_prefix() {
        let p = make_online_lb(100, 0.04, 5).unwrap();
        let ones = |v: &[u8]| v.iter().map(|&x| x as usize).sum::<usize>();
        assert_eq!(ones(&p.seq_theta[..100]), 44);
        assert_eq!(ones(&p.seq_theta[100..]), 56);
        assert_eq!(ones(&p.seq_theta2), 52);
        assert_eq!(p.seq_q[..100], p.seq_q2[..100]);
        assert_eq!(p, make_online_lb(100, 0.04, 5).unwrap());
    }

    #[test]
    fn incompatible_horizon_names_smallest() {
        match make_online_lb(101, 0.04, 0) {
            Err(Error::IncompatibleHorizon { smallest, .. }) => assert_eq!(smallest, "125"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constant_is_punished_by_sequence_one() {
        let p = make_online_lb(100, 0.04, 1).unwrap();
        let r = eval_lb_pair(&p, &Constant(0.26), 4, 0, Exec::Sequential).unwrap();
        assert!(r.mean_ece_2.abs() < 1e-12);
        assert!(r.mean_ece_1 >= 0.045);
        let r = eval_lb_pair(&p, &Identity, 3, 0, Exec::Sequential).unwrap();
        assert!(r.max_of_means >= 0.045);
        assert_eq!(r.stderr_ece_1, 0.0);
    }
}
