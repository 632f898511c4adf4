//! Calibration error metrics on finite-support joints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpProblem, LpStatus};
use crate::model::{Coupling, EmpiricalJoint, GridSpec};
use crate::score::{ProperScore, ScoringRule, VShapeScore};

/// Default number of grid cells for distance to calibration.
pub const DEFAULT_DTC_GRID: usize = 200;

/// Expected calibration error `Σ w |x - p̂|`.
pub fn ece(joint: &EmpiricalJoint) -> f64 {
    joint.iter().map(|(x, w, post)| w * (x - post).abs()).sum()
}

/// Smooth calibration error over 1-Lipschitz witnesses bounded in `[-1,1]`.
pub fn smooth_cal(joint: &EmpiricalJoint) -> Result<f64> {
    let k = joint.len();
    let mut lp = LpProblem::new(k);
    for (i, (x, w, post)) in joint.iter().enumerate() {
        lp.objective[i] = w * (x - post);
        lp.set_bounds(i, -1.0, 1.0);
    }
    for i in 0..k.saturating_sub(1) {
        let gap = joint.value(i + 1) - joint.value(i);
        lp.add_le_sparse(&[(i + 1, 1.0), (i, -1.0)], gap);
        lp.add_le_sparse(&[(i, 1.0), (i + 1, -1.0)], gap);
    }
    let sol = optimal(&lp, "smooth calibration")?;
    Ok(sol.max(0.0))
}

fn optimal(lp: &LpProblem, what: &str) -> Result<f64> {
    let sol = solve_lp(lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective_value),
        s => Err(Error::Lp(format!("{what} LP ended {s:?}"))),
    }
}

/// `Σ mass |q - b|` over coupling atoms.
pub fn dist(c: &Coupling) -> f64 {
    c.atoms().iter().map(|a| a.mass * (a.q - a.b).abs()).sum()
}

/// Grid-restricted distance to calibration and the grid it was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dtc {
    pub value: f64,
    pub m: usize,
}

/// Candidate calibrated values: grid points, support values and posteriors.
pub fn dtc_columns(joint: &EmpiricalJoint, grid: &GridSpec) -> Vec<f64> {
    let mut bs = grid.points();
    bs.extend_from_slice(joint.values());
    bs.extend(joint.posteriors());
    sorted_unique(bs)
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// `(x, θ, Pr[x, θ])` for every pair with positive mass.
fn state_pairs(joint: &EmpiricalJoint) -> Vec<(f64, u8, f64)> {
    let mut out = Vec::with_capacity(2 * joint.len());
    for i in 0..joint.len() {
        let x = joint.value(i);
        if joint.mass0()[i] > 0.0 {
            out.push((x, 0, joint.mass0()[i]));
        }
        if joint.mass1()[i] > 0.0 {
            out.push((x, 1, joint.mass1()[i]));
        }
    }
    out
}

pub fn dtc_primal(joint: &EmpiricalJoint, grid: &GridSpec) -> Result<Dtc> {
    let value = dtc_primal_on(joint, &dtc_columns(joint, grid))?;
    Ok(Dtc { value, m: grid.cells() })
}

/// Transport LP moving each `(x, θ)` mass onto calibrated values in `bs`.
pub fn dtc_primal_on(joint: &EmpiricalJoint, bs: &[f64]) -> Result<f64> {
    let pairs = state_pairs(joint);
    let np = pairs.len();
    let mut lp = LpProblem::new(np * bs.len());
    let var = |j: usize, p: usize| j * np + p;
    for (j, &b) in bs.iter().enumerate() {
        for (p, &(x, _, _)) in pairs.iter().enumerate() {
            lp.objective[var(j, p)] = -(x - b).abs();
        }
    }
    for (p, &(_, _, mass)) in pairs.iter().enumerate() {
        let terms: Vec<(usize, f64)> = (0..bs.len()).map(|j| (var(j, p), 1.0)).collect();
        lp.add_eq_sparse(&terms, mass);
    }
    for (j, &b) in bs.iter().enumerate() {
        let terms: Vec<(usize, f64)> = pairs
            .iter()
            .enumerate()
            .map(|(p, &(_, t, _))| (var(j, p), if t == 1 { 1.0 - b } else { -b }))
            .filter(|&(_, c)| c != 0.0)
            .collect();
        if !terms.is_empty() {
            lp.add_eq_sparse(&terms, 0.0);
        }
    }
    Ok((-optimal(&lp, "distance to calibration")?).max(0.0))
}

pub fn dtc_dual(joint: &EmpiricalJoint, grid: &GridSpec) -> Result<Dtc> {
    let value = dtc_dual_on(joint, &dtc_columns(joint, grid))?;
    Ok(Dtc { value, m: grid.cells() })
}

/// Dual LP: `max Σ Pr·r` with `r(x,θ) <= |b - x| + (θ - b) s(b)` and `s(b) ∈ [-1,1]`.
///
/// Solved by constraint generation: the LP is solved over a working set of
/// `b` values, every other `b` is checked for an admissible `s(b)`, and
/// violated ones join the working set until none remain. The returned value
/// is the dual objective of the final `(r, s)` re-evaluated on all of `bs`,
/// so it is a lower bound on the primal by construction.
pub fn dtc_dual_on(joint: &EmpiricalJoint, bs: &[f64]) -> Result<f64> {
    let pairs = state_pairs(joint);
    let mut active: Vec<usize> = Vec::new();
    let mut seed: Vec<f64> = joint.values().to_vec();
    seed.extend(joint.posteriors());
    for (j, b) in bs.iter().enumerate() {
        if j == 0 || j + 1 == bs.len() || seed.contains(b) {
            active.push(j);
        }
    }
    loop {
        let (r, s_active) = dual_lp(&pairs, bs, &active)?;
        let mut s = vec![f64::NAN; bs.len()];
        for (&j, &v) in active.iter().zip(&s_active) {
            s[j] = v;
        }
        let mut violated: Vec<(f64, usize)> = Vec::new();
        for (j, &b) in bs.iter().enumerate() {
            if !s[j].is_nan() {
                continue;
            }
            let (lo, hi, gap) = admissible_s(&pairs, &r, b);
            if gap > 1e-11 {
                violated.push((gap, j));
            } else {
                s[j] = 0.5 * (lo + hi);
            }
        }
        if violated.is_empty() {
            let value = pairs
                .iter()
                .map(|&(x, t, mass)| {
                    let best = bs
                        .iter()
                        .zip(&s)
                        .map(|(&b, &sb)| (b - x).abs() + (t as f64 - b) * sb)
                        .fold(f64::INFINITY, f64::min);
                    mass * best
                })
                .sum();
            return Ok(value);
        }
        violated.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let add = violated.len().min(pairs.len().max(4));
        active.extend(violated[..add].iter().map(|&(_, j)| j));
        active.sort_unstable();
    }
}

/// Interval of `s(b)` values compatible with `r`, and how far it is from
/// being nonempty.
fn admissible_s(pairs: &[(f64, u8, f64)], r: &[f64], b: f64) -> (f64, f64, f64) {
    let (mut lo, mut hi, mut gap) = (-1.0f64, 1.0f64, 0.0f64);
    for (&(x, t, _), &rp) in pairs.iter().zip(r) {
        let need = rp - (b - x).abs();
        let c = t as f64 - b;
        if c > 0.0 {
            lo = lo.max(need / c);
        } else if c < 0.0 {
            hi = hi.min(need / c);
        } else {
            gap = gap.max(need);
        }
    }
    (lo, hi, gap.max(lo - hi))
}

fn dual_lp(pairs: &[(f64, u8, f64)], bs: &[f64], active: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let np = pairs.len();
    let mut lp = LpProblem::new(np + active.len());
    for (p, &(_, _, mass)) in pairs.iter().enumerate() {
        lp.objective[p] = mass;
        lp.free(p);
    }
    for (a, &j) in active.iter().enumerate() {
        lp.set_bounds(np + a, -1.0, 1.0);
        let b = bs[j];
        for (p, &(x, t, _)) in pairs.iter().enumerate() {
            lp.add_le_sparse(&[(p, 1.0), (np + a, b - t as f64)], (b - x).abs());
        }
    }
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Lp(format!("distance to calibration dual LP ended {:?}", sol.status)));
    }
    let s = sol.x[np..].iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Ok((sol.x[..np].to_vec(), s))
}

/// Dual objective for an explicit `s`; a lower bound on the primal over `bs`
/// whenever `s` maps into `[-1,1]`.
pub fn dtc_dual_at<F: Fn(f64) -> f64>(joint: &EmpiricalJoint, bs: &[f64], s: F) -> f64 {
    let sv: Vec<f64> = bs.iter().map(|&b| s(b).clamp(-1.0, 1.0)).collect();
    state_pairs(joint)
        .into_iter()
        .map(|(x, t, mass)| {
            let r = bs
                .iter()
                .zip(&sv)
                .map(|(&b, &s)| (b - x).abs() + (t as f64 - b) * s)
                .fold(f64::INFINITY, f64::min);
            mass * r
        })
        .sum()
}

/// Expected score `Σ w E_{θ~p̂}[S(x, θ)]`.
pub fn expected_score<S: ScoringRule + ?Sized>(joint: &EmpiricalJoint, score: &S) -> f64 {
    joint.iter().map(|(x, w, post)| w * score.expected(x, post)).sum()
}

/// Gain from replacing each prediction by its posterior.
pub fn swap_regret<S: ScoringRule + ?Sized>(joint: &EmpiricalJoint, score: &S) -> f64 {
    let gain: f64 = joint
        .iter()
        .map(|(x, w, post)| w * (score.expected(post, post) - score.expected(x, post)))
        .sum();
    gain.max(0.0)
}

/// Largest V-shape swap regret over a finite set of thresholds.
///
/// Thresholds are the support values, posteriors, 0, 1/2 and 1 (the scale
/// `1/max(μ, 1-μ)` kinks at 1/2, and between candidates the regret is a
/// ratio of linear functions, so monotone), the midpoints
/// between consecutive ones, and the float just below each of them (the
/// left limit, where a prediction equal to the candidate lands on the upper
/// branch). Returns the lowest maximizing threshold.
pub fn cdl_vshape(joint: &EmpiricalJoint) -> (f64, f64) {
    let mut base = joint.values().to_vec();
    base.extend(joint.posteriors());
    base.extend([0.0, 0.5, 1.0]);
    let base = sorted_unique(base);
    let mut cand = base.clone();
    cand.extend(base.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    cand.extend(base.iter().filter(|&&x| x > 0.0).map(|&x| x.next_down()));
    let cand = sorted_unique(cand);

    let mut best = (f64::NEG_INFINITY, 0.0);
    for &mu in &cand {
        let s = VShapeScore::new(mu).expect("candidate in [0,1]");
        let v = swap_regret(joint, &s);
        if v > best.0 {
            best = (v, mu);
        }
    }
    best
}

/// Maximizes `Σ_j α_j S(x_j, 0) + β_j S(x_j, 1)` over bounded proper scores
/// restricted to `knots`.
///
/// With `a_j = S(x_j, 0)` and `c_j = S(x_j, 1)`, the restriction is proper
/// iff each step `(a_{j+1} - a_j, c_{j+1} - c_j)` lies in the cone spanned by
/// `(-u, 1-u)` and `(-v, 1-v)` for the knots `u < v` it joins. Variables are
/// the first knot's values and the two cone weights per step, so properness
/// holds by construction even for nearly coincident knots. `a` decreases and
/// `c` increases, so boundedness needs only `a_last >= 0` and `c_last <= 1`.
fn best_score(knots: &[f64], alpha: &[f64], beta: &[f64]) -> Result<(f64, ProperScore)> {
    let k = knots.len();
    let n = 2 + 2 * k.saturating_sub(1);
    let mut lp = LpProblem::new(n);
    lp.set_bounds(0, 0.0, 1.0);
    lp.set_bounds(1, 0.0, 1.0);
    lp.objective[0] = alpha.iter().sum();
    lp.objective[1] = beta.iter().sum();
    let (mut drop_a, mut rise_c) = (Vec::new(), Vec::new());
    for i in 0..k.saturating_sub(1) {
        let tail_a: f64 = alpha[i + 1..].iter().sum();
        let tail_c: f64 = beta[i + 1..].iter().sum();
        for (t, x) in [knots[i], knots[i + 1]].into_iter().enumerate() {
            let var = 2 + 2 * i + t;
            lp.objective[var] = -tail_a * x + tail_c * (1.0 - x);
            drop_a.push((var, x));
            rise_c.push((var, 1.0 - x));
        }
    }
    // a_1 - Σ drop >= 0 and c_1 + Σ rise <= 1.
    let mut row: Vec<(usize, f64)> = vec![(0, -1.0)];
    row.extend(&drop_a);
    lp.add_le_sparse(&row, 0.0);
    let mut row: Vec<(usize, f64)> = vec![(1, 1.0)];
    row.extend(&rise_c);
    lp.add_le_sparse(&row, 1.0);
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Lp(format!("score LP ended {:?}", sol.status)));
    }
    let (mut a, mut c) = (sol.x[0], sol.x[1]);
    let mut s0 = vec![a.clamp(0.0, 1.0)];
    let mut s1 = vec![c.clamp(0.0, 1.0)];
    for i in 0..k.saturating_sub(1) {
        let (wu, wv) = (sol.x[2 + 2 * i].max(0.0), sol.x[3 + 2 * i].max(0.0));
        let (u, v) = (knots[i], knots[i + 1]);
        a -= wu * u + wv * v;
        c += wu * (1.0 - u) + wv * (1.0 - v);
        s0.push(a.clamp(0.0, 1.0));
        s1.push(c.clamp(0.0, 1.0));
    }
    let value = (0..k).map(|j| alpha[j] * s0[j] + beta[j] * s1[j]).sum();
    let score = ProperScore::from_values(knots.to_vec(), &s0, &s1)?;
    Ok((value, score))
}

struct KnotObjective {
    knots: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl KnotObjective {
    fn new(points: Vec<f64>) -> Self {
        let knots = sorted_unique(points);
        let k = knots.len();
        Self { knots, alpha: vec![0.0; k], beta: vec![0.0; k] }
    }

    /// Adds `sign · (m0 S(x, 0) + m1 S(x, 1))`.
    fn add(&mut self, x: f64, m0: f64, m1: f64, sign: f64) {
        let j = self
            .knots
            .binary_search_by(|k| k.total_cmp(&x))
            .expect("point registered as knot");
        self.alpha[j] += sign * m0;
        self.beta[j] += sign * m1;
    }

    fn solve(&self) -> Result<(f64, ProperScore)> {
        best_score(&self.knots, &self.alpha, &self.beta)
    }
}

/// Calibration decision loss: the largest swap regret over bounded proper
/// scores. Knots are the support values and posteriors.
pub fn cdl_lp(joint: &EmpiricalJoint) -> Result<f64> {
    Ok(cdl_lp_with_score(joint)?.0.max(0.0))
}

/// [`cdl_lp`] together with a maximizing score.
pub fn cdl_lp_with_score(joint: &EmpiricalJoint) -> Result<(f64, ProperScore)> {
    let mut pts = joint.values().to_vec();
    pts.extend(joint.posteriors());
    let mut obj = KnotObjective::new(pts);
    for i in 0..joint.len() {
        let (x, post) = (joint.value(i), joint.posterior(i));
        let (m1, m0) = (joint.mass1()[i], joint.mass0()[i]);
        obj.add(post, m0, m1, 1.0);
        obj.add(x, m0, m1, -1.0);
    }
    obj.solve()
}

/// Decision loss of `q` against the coupled `b`: the largest
/// `E[S(b, θ) - S(q, θ)]` over bounded proper scores.
pub fn decision_loss(c: &Coupling) -> Result<f64> {
    Ok(decision_loss_with_score(c)?.0)
}

/// [`decision_loss`] together with a maximizing score.
pub fn decision_loss_with_score(c: &Coupling) -> Result<(f64, ProperScore)> {
    let pts = c.atoms().iter().flat_map(|a| [a.q, a.b]).collect();
    let mut obj = KnotObjective::new(pts);
    for a in c.atoms() {
        let (m0, m1) = if a.state == 1 { (0.0, a.mass) } else { (a.mass, 0.0) };
        obj.add(a.b, m0, m1, 1.0);
        obj.add(a.q, m0, m1, -1.0);
    }
    obj.solve()
}

/// `E[S(b, θ) - S(q, θ)]` for one fixed score.
pub fn decision_loss_for<S: ScoringRule + ?Sized>(c: &Coupling, score: &S) -> f64 {
    c.atoms()
        .iter()
        .map(|a| a.mass * (score.eval(a.b, a.state) - score.eval(a.q, a.state)))
        .sum()
}

/// The metric bundle reported for a joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ece: f64,
    pub smcal: f64,
    pub dtc_primal: f64,
    pub dtc_dual: f64,
    pub dtc_grid_m: usize,
    pub cdl_vshape: f64,
    pub cdl_vshape_mu: f64,
    pub cdl_lp: f64,
    /// Whether `cdl_lp <= ece` holds here; reported, not required.
    pub cdl_within_ece: bool,
}

pub fn metrics_report(joint: &EmpiricalJoint, grid: &GridSpec) -> Result<MetricsReport> {
    let primal = dtc_primal(joint, grid)?;
    let dual = dtc_dual(joint, grid)?;
    let (cdl_vshape, cdl_vshape_mu) = cdl_vshape(joint);
    let e = ece(joint);
    let cdl = cdl_lp(joint)?;
    Ok(MetricsReport {
        ece: e,
        smcal: smooth_cal(joint)?,
        dtc_primal: primal.value,
        dtc_dual: dual.value,
        dtc_grid_m: primal.m,
        cdl_vshape,
        cdl_vshape_mu,
        cdl_lp: cdl,
        cdl_within_ece: cdl <= e + 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CouplingAtom;
    use approx::assert_abs_diff_eq;

    fn table1() -> EmpiricalJoint {
        EmpiricalJoint::from_posteriors([(0.5001, 0.5, 0.0), (0.4999, 0.5, 1.0)]).unwrap()
    }

    fn joint(items: &[(f64, f64, f64)]) -> EmpiricalJoint {
        EmpiricalJoint::from_posteriors(items.iter().copied()).unwrap()
    }

    #[test]
    fn ece_examples() {
        assert_abs_diff_eq!(ece(&table1()), 0.5001, epsilon = 1e-15);
        assert_eq!(ece(&joint(&[(0.25, 1.0, 0.25), (0.75, 3.0, 0.75)])), 0.0);
        assert_abs_diff_eq!(ece(&joint(&[(0.2, 0.5, 0.5), (0.8, 0.5, 1.0)])), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn smooth_cal_examples() {
        assert_abs_diff_eq!(smooth_cal(&joint(&[(0.3, 1.0, 0.8)])).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(smooth_cal(&joint(&[(0.4, 1.0, 0.4), (0.6, 1.0, 0.6)])).unwrap(), 0.0);
        let s = smooth_cal(&table1()).unwrap();
        assert!((5e-5..=1.1e-4).contains(&s), "smcal {s}");
    }

    #[test]
    fn dist_examples() {
        let c = Coupling::new(vec![
            CouplingAtom { q: 0.2, b: 0.5, state: 0, mass: 0.5 },
            CouplingAtom { q: 0.9, b: 0.5, state: 1, mass: 0.5 },
        ])
        .unwrap();
        assert_abs_diff_eq!(dist(&c), 0.35, epsilon = 1e-15);
        assert_eq!(dist(&Coupling::identity(&table1())), 0.0);
    }

    #[test]
    fn dtc_examples() {
        let grid = GridSpec::new(200).unwrap();
        let d = dtc_primal(&table1(), &grid).unwrap();
        assert!((5e-5..=1.1e-4).contains(&d.value), "dtc {}", d.value);
        assert_eq!(d.m, 200);
        let dual = dtc_dual(&table1(), &grid).unwrap();
        assert!(dual.value <= d.value + 1e-7);
        assert_abs_diff_eq!(dual.value, d.value, epsilon = 1e-7);

        let cal = joint(&[(0.25, 1.0, 0.25), (0.5, 1.0, 0.5)]);
        assert_abs_diff_eq!(dtc_primal(&cal, &grid).unwrap().value, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dtc_dual(&cal, &grid).unwrap().value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn swap_regret_examples() {
        let s = VShapeScore::new(0.5).unwrap();
        assert_abs_diff_eq!(swap_regret(&table1(), &s), 1.0, epsilon = 1e-15);
        let cal = joint(&[(0.25, 1.0, 0.25), (0.75, 1.0, 0.75)]);
        assert_eq!(swap_regret(&cal, &s), 0.0);
    }

    #[test]
    fn cdl_examples() {
        let (v, mu) = cdl_vshape(&table1());
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        assert!((0.4999..0.5001).contains(&mu), "threshold {mu}");
        let c = cdl_lp(&table1()).unwrap();
        assert!((1.0 - 1e-9..=1.0002 + 1e-9).contains(&c), "cdl {c}");

        let cal = joint(&[(0.25, 1.0, 0.25), (0.75, 1.0, 0.75)]);
        assert_eq!(cdl_vshape(&cal), (0.0, 0.0));
        assert_abs_diff_eq!(cdl_lp(&cal).unwrap(), 0.0, epsilon = 1e-12);

        let single = joint(&[(0.3, 1.0, 0.26)]);
        let (v, _) = cdl_vshape(&single);
        assert_abs_diff_eq!(v, cdl_lp(&single).unwrap(), epsilon = 1e-7);
        assert_abs_diff_eq!(v, 0.04 / 0.7, epsilon = 1e-7);
    }

    #[test]
    fn decision_loss_examples() {
        let j = joint(&[(0.2, 1.0, 0.7), (0.9, 1.0, 0.1)]);
        assert_eq!(decision_loss(&Coupling::identity(&j)).unwrap(), 0.0);

        // b = θ, q = 1/2, balanced: the accuracy score gains 1/2.
        let c = Coupling::new(vec![
            CouplingAtom { q: 0.5, b: 1.0, state: 1, mass: 0.5 },
            CouplingAtom { q: 0.5, b: 0.0, state: 0, mass: 0.5 },
        ])
        .unwrap();
        assert_abs_diff_eq!(decision_loss(&c).unwrap(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn optimal_scores_are_proper() {
        let j = joint(&[(0.1, 1.0, 0.6), (0.45, 2.0, 0.3), (0.8, 1.0, 0.95)]);
        let (v, s) = cdl_lp_with_score(&j).unwrap();
        assert_abs_diff_eq!(swap_regret(&j, &s), v, epsilon = 1e-9);
    }
}
