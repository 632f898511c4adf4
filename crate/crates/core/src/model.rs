//! Finite representations of predictors, joints and couplings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation: a prediction, the realized binary state, and a weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub prediction: f64,
    pub state: u8,
    pub weight: f64,
}

impl Sample {
    pub fn new(prediction: f64, state: u8) -> Self {
        Self {
            prediction,
            state,
            weight: 1.0,
        }
    }

    pub fn weighted(prediction: f64, state: u8, weight: f64) -> Self {
        Self {
            prediction,
            state,
            weight,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prediction) {
            return Err(Error::DomainViolation(format!(
                "prediction {} outside [0,1]",
                self.prediction
            )));
        }
        if self.state > 1 {
            return Err(Error::DomainViolation(format!(
                "state {} not in {{0,1}}",
                self.state
            )));
        }
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::DomainViolation(format!(
                "weight {} is not a nonnegative real",
                self.weight
            )));
        }
        Ok(())
    }
}

/// Total-order key for f64 values already known to be finite.
#[derive(Debug, Clone, Copy)]
struct Key(f64);

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Finite joint distribution of (prediction, state), normalized to mass 1.
///
/// Values are strictly increasing and every stored value has positive mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalJoint {
    values: Vec<f64>,
    mass1: Vec<f64>,
    mass0: Vec<f64>,
}

impl EmpiricalJoint {
    /// Aggregates samples by exact prediction value and normalizes.
    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let mut acc: BTreeMap<Key, (f64, f64)> = BTreeMap::new();
        for s in samples {
            s.validate()?;
            let entry = acc.entry(Key(s.prediction)).or_insert((0.0, 0.0));
            if s.state == 1 {
                entry.0 += s.weight;
            } else {
                entry.1 += s.weight;
            }
        }
        Self::from_masses(acc.into_iter().map(|(k, (m1, m0))| (k.0, m1, m0)))
    }

    /// Builds a joint from `(value, mass of state 1, mass of state 0)` triples.
    ///
    /// Duplicate values are merged; zero-mass values are dropped.
    pub fn from_masses<I>(triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64, f64)>,
    {
        let mut acc: BTreeMap<Key, (f64, f64)> = BTreeMap::new();
        for (v, m1, m0) in triples {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::DomainViolation(format!(
                    "prediction {v} outside [0,1]"
                )));
            }
            if !(m1 >= 0.0 && m0 >= 0.0) || !m1.is_finite() || !m0.is_finite() {
                return Err(Error::DomainViolation(format!(
                    "negative or non-finite mass at {v}"
                )));
            }
            let entry = acc.entry(Key(v)).or_insert((0.0, 0.0));
            entry.0 += m1;
            entry.1 += m0;
        }
        let total: f64 = acc.values().map(|(a, b)| a + b).sum();
        if !(total > 0.0) {
            return Err(Error::EmptyDistribution);
        }
        let mut values = Vec::with_capacity(acc.len());
        let mut mass1 = Vec::with_capacity(acc.len());
        let mut mass0 = Vec::with_capacity(acc.len());
        for (k, (m1, m0)) in acc {
            if m1 + m0 > 0.0 {
                values.push(k.0);
                mass1.push(m1 / total);
                mass0.push(m0 / total);
            }
        }
        Ok(Self {
            values,
            mass1,
            mass0,
        })
    }

    /// Builds a joint from `(value, weight, posterior)` triples.
    pub fn from_posteriors<I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64, f64)>,
    {
        let mut triples = Vec::new();
        for (v, w, post) in items {
            if !(0.0..=1.0).contains(&post) {
                return Err(Error::DomainViolation(format!(
                    "posterior {post} outside [0,1]"
                )));
            }
            triples.push((v, w * post, w * (1.0 - post)));
        }
        Self::from_masses(triples)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass1(&self) -> &[f64] {
        &self.mass1
    }

    pub fn mass0(&self) -> &[f64] {
        &self.mass0
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.mass1[i] + self.mass0[i]
    }

    /// Pr[state = 1 | prediction = values[i]].
    pub fn posterior(&self, i: usize) -> f64 {
        let w = self.weight(i);
        (self.mass1[i] / w).clamp(0.0, 1.0)
    }

    pub fn posteriors(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.posterior(i)).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass1.iter().chain(self.mass0.iter()).sum()
    }

    /// Index of an exact value, if present.
    pub fn find(&self, value: f64) -> Option<usize> {
        self.values
            .binary_search_by(|v| v.total_cmp(&value))
            .ok()
    }

    /// Iterates `(value, weight, posterior)`.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.len()).map(move |i| (self.values[i], self.weight(i), self.posterior(i)))
    }

    /// True when every posterior equals its prediction within `tol`.
    pub fn is_calibrated(&self, tol: f64) -> bool {
        self.iter().all(|(v, _, p)| (v - p).abs() <= tol)
    }

    /// The posterior-collapsed predictor: every value replaced by its posterior.
    pub fn collapse_to_posteriors(&self) -> Self {
        Self::from_masses((0..self.len()).map(|i| (self.posterior(i), self.mass1[i], self.mass0[i])))
            .expect("collapsing a valid joint keeps positive mass")
    }

    /// Replaces every value by a grid point and merges masses.
    pub fn snap_to_grid(&self, grid: &GridSpec, mode: SnapMode) -> Self {
        let triples = (0..self.len()).map(|i| {
            let v = grid.snap(self.values[i], mode);
            (v, self.mass1[i], self.mass0[i])
        });
        Self::from_masses(triples).expect("snapping a valid joint keeps positive mass")
    }
}

/// How [`GridSpec::snap`] maps a value onto the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapMode {
    Floor,
    Nearest,
}

/// Uniform grid `{i/m : i = 0..=m}` on [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    m: usize,
}

impl GridSpec {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("grid needs m >= 1 cells".into()));
        }
        Ok(Self { m })
    }

    /// Grid with `ceil(T^(1/3))` cells, the online discretization for horizon `T`.
    pub fn for_horizon(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        let mut m = (horizon as f64).cbrt().floor().max(1.0) as usize;
        while m.saturating_pow(3) < horizon {
            m += 1;
        }
        while m > 1 && (m - 1).pow(3) >= horizon {
            m -= 1;
        }
        Self::new(m)
    }

    pub fn cells(&self) -> usize {
        self.m
    }

    pub fn point(&self, i: usize) -> f64 {
        i as f64 / self.m as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.m).map(|i| self.point(i)).collect()
    }

    /// Grid index of `x` under the given mode. The top cell is closed at 1.
    pub fn index(&self, x: f64, mode: SnapMode) -> usize {
        let x = x.clamp(0.0, 1.0);
        let scaled = x * self.m as f64;
        let mut i = match mode {
            SnapMode::Floor => scaled.floor(),
            SnapMode::Nearest => scaled.round(),
        } as usize;
        i = i.min(self.m);
        match mode {
            SnapMode::Floor => {
                // Compare against the grid points as they are represented.
                while i > 0 && self.point(i) > x {
                    i -= 1;
                }
                while i < self.m && self.point(i + 1) <= x {
                    i += 1;
                }
            }
            SnapMode::Nearest => {
                while i > 0 && (self.point(i - 1) - x).abs() < (self.point(i) - x).abs() {
                    i -= 1;
                }
                while i < self.m && (self.point(i + 1) - x).abs() < (self.point(i) - x).abs() {
                    i += 1;
                }
            }
        }
        i
    }

    pub fn snap(&self, x: f64, mode: SnapMode) -> f64 {
        self.point(self.index(x, mode))
    }
}

/// One atom of a coupling: predictor value `q`, reference value `b`, state, mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingAtom {
    pub q: f64,
    pub b: f64,
    pub state: u8,
    pub mass: f64,
}

/// Finite joint law of (q, b, state) linking a predictor to a reference predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    atoms: Vec<CouplingAtom>,
}

/// Which side of a coupling to marginalize onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Q,
    B,
}

impl Coupling {
    /// Validates and normalizes atoms. Zero-mass atoms are dropped.
    pub fn new(atoms: Vec<CouplingAtom>) -> Result<Self> {
        let mut total = 0.0;
        for a in &atoms {
            if !(0.0..=1.0).contains(&a.q) || !(0.0..=1.0).contains(&a.b) {
                return Err(Error::DomainViolation(format!(
                    "coupling atom ({}, {}) outside [0,1]",
                    a.q, a.b
                )));
            }
            if a.state > 1 {
                return Err(Error::DomainViolation(format!(
                    "state {} not in {{0,1}}",
                    a.state
                )));
            }
            if !(a.mass >= 0.0) || !a.mass.is_finite() {
                return Err(Error::DomainViolation(format!(
                    "mass {} is not a nonnegative real",
                    a.mass
                )));
            }
            total += a.mass;
        }
        if !(total > 0.0) {
            return Err(Error::EmptyDistribution);
        }
        let atoms = atoms
            .into_iter()
            .filter(|a| a.mass > 0.0)
            .map(|a| CouplingAtom {
                mass: a.mass / total,
                ..a
            })
            .collect();
        Ok(Self { atoms })
    }

    /// The coupling that pairs every value of `joint` with itself.
    pub fn identity(joint: &EmpiricalJoint) -> Self {
        let mut atoms = Vec::with_capacity(2 * joint.len());
        for i in 0..joint.len() {
            let v = joint.value(i);
            atoms.push(CouplingAtom { q: v, b: v, state: 1, mass: joint.mass1()[i] });
            atoms.push(CouplingAtom { q: v, b: v, state: 0, mass: joint.mass0()[i] });
        }
        Self::new(atoms).expect("identity coupling of a valid joint")
    }

    pub fn atoms(&self) -> &[CouplingAtom] {
        &self.atoms
    }

    /// The (q, state) or (b, state) marginal.
    pub fn marginal(&self, side: Side) -> EmpiricalJoint {
        let triples = self.atoms.iter().map(|a| {
            let v = match side {
                Side::Q => a.q,
                Side::B => a.b,
            };
            if a.state == 1 {
                (v, a.mass, 0.0)
            } else {
                (v, 0.0, a.mass)
            }
        });
        EmpiricalJoint::from_masses(triples).expect("marginal of a valid coupling")
    }

    /// Replaces each q by `f(q)`; used for posterior collapsing.
    pub fn map_q<F: Fn(f64) -> f64>(&self, f: F) -> Result<Self> {
        Self::new(
            self.atoms
                .iter()
                .map(|a| CouplingAtom { q: f(a.q), ..*a })
                .collect(),
        )
    }
}

/// Builds a normalized joint from samples.
pub fn build_joint(samples: &[Sample]) -> Result<EmpiricalJoint> {
    EmpiricalJoint::from_samples(samples)
}

pub fn snap_to_grid(joint: &EmpiricalJoint, grid: &GridSpec, mode: SnapMode) -> EmpiricalJoint {
    joint.snap_to_grid(grid, mode)
}

pub fn coupling_marginal(c: &Coupling, side: Side) -> EmpiricalJoint {
    c.marginal(side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn table_one_joint() {
        let j = build_joint(&[Sample::new(0.5001, 0), Sample::new(0.4999, 1)]).unwrap();
        assert_eq!(j.values(), &[0.4999, 0.5001]);
        assert_eq!(j.weights(), vec![0.5, 0.5]);
        assert_eq!(j.posteriors(), vec![1.0, 0.0]);
    }

    #[test]
    fn single_atom() {
        let j = build_joint(&[Sample::new(0.3, 1)]).unwrap();
        assert_eq!(j.values(), &[0.3]);
        assert_eq!(j.posterior(0), 1.0);
        assert_eq!(j.weight(0), 1.0);
    }

    #[test]
    fn aggregation_by_value() {
        let j = build_joint(&[
            Sample::weighted(0.2, 1, 1.0),
            Sample::weighted(0.2, 0, 1.0),
            Sample::weighted(0.8, 1, 2.0),
        ])
        .unwrap();
        assert_eq!(j.values(), &[0.2, 0.8]);
        assert_eq!(j.weights(), vec![0.5, 0.5]);
        assert_eq!(j.posteriors(), vec![0.5, 1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(build_joint(&[]), Err(Error::EmptyDistribution));
        assert_eq!(
            build_joint(&[Sample::weighted(0.5, 1, 0.0)]),
            Err(Error::EmptyDistribution)
        );
        assert!(matches!(
            build_joint(&[Sample::new(1.5, 1)]),
            Err(Error::DomainViolation(_))
        ));
        assert!(matches!(
            build_joint(&[Sample::new(0.5, 2)]),
            Err(Error::DomainViolation(_))
        ));
    }

    #[test]
    fn zero_mass_values_are_dropped() {
        let j = build_joint(&[Sample::weighted(0.1, 1, 0.0), Sample::new(0.4, 0)]).unwrap();
        assert_eq!(j.values(), &[0.4]);
    }

    #[test]
    fn floor_snapping() {
        let g = GridSpec::new(10).unwrap();
        assert_eq!(g.snap(0.37, SnapMode::Floor), 0.3);
        assert_eq!(g.snap(0.30, SnapMode::Floor), 0.3);
        assert_eq!(g.snap(1.0, SnapMode::Floor), 1.0);
        assert_eq!(g.snap(0.0, SnapMode::Floor), 0.0);
        assert_eq!(g.snap(0.96, SnapMode::Nearest), 1.0);
        for i in 0..=10 {
            assert_eq!(g.index(g.point(i), SnapMode::Floor), i);
        }
    }

    #[test]
    fn snapping_merges_mass() {
        let j = EmpiricalJoint::from_posteriors([(0.31, 0.4, 0.5), (0.39, 0.6, 0.0)]).unwrap();
        let s = j.snap_to_grid(&GridSpec::new(10).unwrap(), SnapMode::Floor);
        assert_eq!(s.values(), &[0.3]);
        assert_abs_diff_eq!(s.weight(0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.posterior(0), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn horizon_grid() {
        assert_eq!(GridSpec::for_horizon(1000).unwrap().cells(), 10);
        assert_eq!(GridSpec::for_horizon(1001).unwrap().cells(), 11);
        assert_eq!(GridSpec::for_horizon(200).unwrap().cells(), 6);
        assert_eq!(GridSpec::for_horizon(1).unwrap().cells(), 1);
        let pts = GridSpec::new(4).unwrap().points();
        assert_eq!(pts, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn coupling_marginals() {
        let c = Coupling::new(vec![CouplingAtom { q: 0.3, b: 0.5, state: 1, mass: 1.0 }]).unwrap();
        let q = c.marginal(Side::Q);
        assert_eq!(q.values(), &[0.3]);
        assert_eq!(q.posterior(0), 1.0);
        let b = c.marginal(Side::B);
        assert_eq!(b.values(), &[0.5]);
        assert_eq!(b.posterior(0), 1.0);
    }

    #[test]
    fn coupling_normalizes() {
        let c = Coupling::new(vec![
            CouplingAtom { q: 0.2, b: 0.5, state: 0, mass: 3.0 },
            CouplingAtom { q: 0.9, b: 0.5, state: 1, mass: 1.0 },
        ])
        .unwrap();
        let total: f64 = c.atoms().iter().map(|a| a.mass).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
        assert!(Coupling::new(vec![]).is_err());
    }
}
