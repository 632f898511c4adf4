//! Bounded proper scoring rules for a binary state.
//!
//! A proper score is represented by a convex potential `G` sampled at knots
//! together with subgradients `g`; the score of a report `p` is read off the
//! tangent line of the envelope `max_j G_j + g_j (p - x_j)`:
//! `S(p, θ) = G_j + g_j (θ - x_j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TOL: f64 = 1e-9;

/// A scoring rule `S(p, θ)` for reports `p ∈ [0,1]` and states `θ ∈ {0,1}`.
pub trait ScoringRule {
    fn eval(&self, p: f64, theta: u8) -> f64;

    /// `E_{θ ~ Bernoulli(belief)} S(p, θ)`.
    fn expected(&self, p: f64, belief: f64) -> f64 {
        (1.0 - belief) * self.eval(p, 0) + belief * self.eval(p, 1)
    }
}

/// The threshold score with kink at `mu`:
/// `1/2 ∓ (θ - μ) / (2 max(μ, 1-μ))`, minus below or at the threshold, plus above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VShapeScore {
    mu: f64,
}

impl VShapeScore {
    pub fn new(mu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::InvalidParameter(format!("threshold {mu} outside [0,1]")));
        }
        Ok(Self { mu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

impl ScoringRule for VShapeScore {
    fn eval(&self, p: f64, theta: u8) -> f64 {
        let scale = 0.5 / self.mu.max(1.0 - self.mu);
        let tilt = (theta as f64 - self.mu) * scale;
        if p <= self.mu {
            0.5 - tilt
        } else {
            0.5 + tilt
        }
    }
}

/// A bounded proper score given by potential values and subgradients at knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProperScore {
    knots: Vec<f64>,
    potential: Vec<f64>,
    slope: Vec<f64>,
}

impl ProperScore {
    /// Validates convexity and boundedness (within 1e-9).
    pub fn new(knots: Vec<f64>, potential: Vec<f64>, slope: Vec<f64>) -> Result<Self> {
        let k = knots.len();
        if k == 0 || potential.len() != k || slope.len() != k {
            return Err(Error::ImproperScore("knots, potential and slopes must have equal nonzero length".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) || knots.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::ImproperScore("knots must be strictly increasing in [0,1]".into()));
        }
        let score = Self { knots, potential, slope };
        score.check()?;
        Ok(score)
    }

    /// Builds the score from its values `S(x_j, 0)` and `S(x_j, 1)` at the knots.
    pub fn from_values(knots: Vec<f64>, s0: &[f64], s1: &[f64]) -> Result<Self> {
        let potential = knots
            .iter()
            .zip(s0.iter().zip(s1))
            .map(|(x, (a, c))| (1.0 - x) * a + x * c)
            .collect();
        let slope = s0.iter().zip(s1).map(|(a, c)| c - a).collect();
        Self::new(knots, potential, slope)
    }

    fn check(&self) -> Result<()> {
        let k = self.knots.len();
        for j in 0..k {
            let (x, g, gs) = (self.knots[j], self.potential[j], self.slope[j]);
            let s0 = g - gs * x;
            let s1 = g + gs * (1.0 - x);
            if !(-TOL..=1.0 + TOL).contains(&s0) || !(-TOL..=1.0 + TOL).contains(&s1) {
                return Err(Error::ImproperScore(format!(
                    "score at knot {x} takes values ({s0}, {s1}) outside [0,1]"
                )));
            }
            for l in 0..k {
                let tangent = g + gs * (self.knots[l] - x);
                if self.potential[l] < tangent - TOL {
                    return Err(Error::ImproperScore(format!(
                        "potential is not convex between knots {x} and {}",
                        self.knots[l]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slope
    }

    /// Index of the supporting tangent used for report `p`. A report equal
    /// to a knot uses that knot; otherwise the highest tangent, lowest index
    /// on ties.
    pub fn tangent_index(&self, p: f64) -> usize {
        if let Ok(j) = self.knots.binary_search_by(|x| x.total_cmp(&p)) {
            return j;
        }
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for j in 0..self.knots.len() {
            let v = self.potential[j] + self.slope[j] * (p - self.knots[j]);
            if v > best_val {
                best_val = v;
                best = j;
            }
        }
        best
    }
}

impl ScoringRule for ProperScore {
    fn eval(&self, p: f64, theta: u8) -> f64 {
        let j = self.tangent_index(p);
        self.potential[j] + self.slope[j] * (theta as f64 - self.knots[j])
    }
}

/// Either kind of score, for callers that pick at runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Score {
    Proper(ProperScore),
    VShape(VShapeScore),
}

impl ScoringRule for Score {
    fn eval(&self, p: f64, theta: u8) -> f64 {
        match self {
            Score::Proper(s) => s.eval(p, theta),
            Score::VShape(s) => s.eval(p, theta),
        }
    }
}

pub fn eval_score<S: ScoringRule + ?Sized>(score: &S, p: f64, theta: u8) -> f64 {
    score.eval(p, theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_proper<S: ScoringRule>(s: &S) -> bool {
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            let own = s.expected(p, p);
            for k in 0..=100 {
                let other = k as f64 / 100.0;
                if s.expected(other, p) > own + 1e-12 {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn vshape_values() {
        let s = VShapeScore::new(0.5).unwrap();
        assert_eq!(s.eval(0.3, 1), 0.0);
        assert_eq!(s.eval(0.7, 1), 1.0);
        assert_eq!(s.eval(0.5, 0), 1.0);
        assert_eq!(s.eval(0.5001, 0), 0.0);
        for mu in [0.0, 0.1, 0.37, 0.5, 0.9, 1.0] {
            let s = VShapeScore::new(mu).unwrap();
            for p in [0.0, 0.2, mu, 0.8, 1.0] {
                for t in 0..=1 {
                    assert!((0.0..=1.0).contains(&s.eval(p, t)));
                }
            }
            assert!(is_proper(&s), "S_mu not proper at mu={mu}");
        }
        assert!(VShapeScore::new(1.2).is_err());
    }

    #[test]
    fn quadratic_score_from_values() {
        // Brier-style score 1 - (θ - p)^2 sampled at knots.
        let knots: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let s0: Vec<f64> = knots.iter().map(|p| 1.0 - p * p).collect();
        let s1: Vec<f64> = knots.iter().map(|p| 1.0 - (1.0 - p) * (1.0 - p)).collect();
        let s = ProperScore::from_values(knots, &s0, &s1).unwrap();
        assert!((s.eval(0.3, 1) - 0.51).abs() < 1e-12);
        assert!(is_proper(&s));
    }

    #[test]
    fn rejects_improper_inputs() {
        // Concave potential.
        let r = ProperScore::new(vec![0.0, 0.5, 1.0], vec![0.5, 1.0, 0.5], vec![1.0, 0.0, -1.0]);
        assert!(matches!(r, Err(Error::ImproperScore(_))));
        // Values outside [0,1].
        let r = ProperScore::from_values(vec![0.5], &[1.5], &[0.0]);
        assert!(matches!(r, Err(Error::ImproperScore(_))));
        // Unsorted knots.
        let r = ProperScore::new(vec![0.5, 0.2], vec![0.5, 0.5], vec![0.0, 0.0]);
        assert!(r.is_err());
    }

    #[test]
    fn envelope_picks_own_knot() {
        // G(x) = 0.4 + |x - 0.5| / 2; the left tangent also touches G at 0.5.
        let s = ProperScore::new(vec![0.2, 0.5, 0.8], vec![0.55, 0.4, 0.55], vec![-0.5, 0.0, 0.5]).unwrap();
        for (j, &x) in s.knots().iter().enumerate() {
            assert_eq!(s.tangent_index(x), j);
        }
        assert!((s.eval(0.5, 1) - 0.4).abs() < 1e-15);
        assert_eq!(s.tangent_index(0.35), 0);
        assert_eq!(s.tangent_index(0.65), 2);
        assert!(is_proper(&s));
    }
}
