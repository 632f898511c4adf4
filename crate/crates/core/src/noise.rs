//! Truncated noise mechanisms on `[0, 1]`.
//!
//! A mechanism maps a center `q` to the law of `q + Y` conditioned on
//! landing in `[0, 1]`. Laplace noise is parametrized by its rate
//! `λ = -ln τ`, so `f_q(p) ∝ τ^{|p-q|} = e^{-λ|p-q|}`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::quad::{simpson_pieces, Integral};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Rates below this are treated as the uniform limit `τ = 1`.
const UNIFORM_RATE: f64 = 1e-9;

/// Privacy parameters `(γ, δ)`: `Pr[M(q) ∈ I] <= e^{γ|q-q'|} Pr[M(q') ∈ I] + δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    pub gamma: f64,
    pub delta: f64,
}

impl DpParams {
    /// `1 - e^{-γ d} + δ`, the total-variation budget between centers at distance `d`.
    pub fn tv_budget(&self, d: f64) -> f64 {
        (-(-self.gamma * d).exp_m1() + self.delta).min(1.0 + self.delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaussianVariant {
    /// `σ = √(2ε ln(1.25/√ε))`, accounted through `(γ, δ)`.
    Lemma,
    /// `σ = √ε`, accounted through the direct TV bound.
    Improved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseKind {
    PointMass,
    TruncLaplace { rate: f64 },
    TruncGaussian { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMechanism {
    kind: NoiseKind,
    epsilon: Option<f64>,
    variant: Option<GaussianVariant>,
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::DomainViolation(format!("{name} = {v} outside [0,1]")))
    }
}

fn check_budget(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon <= 0.25 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("budget epsilon = {epsilon} outside (0, 0.25]")))
    }
}

/// Upper tail `Pr[N(0,1) > x]`.
fn upper(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Inverse of `upper` for `u ∈ (0, 1)`.
fn upper_inv(u: f64) -> f64 {
    SQRT_2 * erfc_inv(2.0 * u)
}

impl NoiseMechanism {
    pub fn point_mass() -> Self {
        Self { kind: NoiseKind::PointMass, epsilon: None, variant: None }
    }

    /// Truncated Laplace with `f_q(p) ∝ τ^{|p-q|}`; `τ = 0` is a point mass and
    /// `τ = 1` is uniform.
    pub fn laplace(tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidParameter(format!("tau = {tau} outside [0,1]")));
        }
        if tau == 0.0 {
            return Ok(Self::point_mass());
        }
        Self::laplace_rate(-tau.ln())
    }

    /// Truncated Laplace with rate `λ = -ln τ >= 0`.
    pub fn laplace_rate(rate: f64) -> Result<Self> {
        if !(rate >= 0.0) {
            return Err(Error::InvalidParameter(format!("rate = {rate} must be >= 0")));
        }
        if rate.is_infinite() {
            return Ok(Self::point_mass());
        }
        Ok(Self { kind: NoiseKind::TruncLaplace { rate }, epsilon: None, variant: None })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma = {sigma} must be positive")));
        }
        Ok(Self { kind: NoiseKind::TruncGaussian { sigma }, epsilon: None, variant: None })
    }

    /// Laplace with `τ = exp(-√(1/(2ε)))`.
    pub fn laplace_for_budget(epsilon: f64) -> Result<Self> {
        check_budget(epsilon)?;
        let mut m = Self::laplace_rate((0.5 / epsilon).sqrt())?;
        m.epsilon = Some(epsilon);
        Ok(m)
    }

    pub fn gaussian_for_budget(epsilon: f64, variant: GaussianVariant) -> Result<Self> {
        check_budget(epsilon)?;
        let sigma = match variant {
            GaussianVariant::Lemma => (2.0 * epsilon * (1.25 / epsilon.sqrt()).ln()).sqrt(),
            GaussianVariant::Improved => epsilon.sqrt(),
        };
        let mut m = Self::gaussian(sigma)?;
        m.epsilon = Some(epsilon);
        m.variant = Some(variant);
        Ok(m)
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    /// The budget the mechanism was built for, if any.
    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    pub fn variant(&self) -> Option<GaussianVariant> {
        self.variant
    }

    /// `τ = e^{-λ}` for Laplace.
    pub fn tau(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::TruncLaplace { rate } => Some((-rate).exp()),
            _ => None,
        }
    }

    /// Probability that the untruncated draw lands in `[0, 1]`, scaled by
    /// the density's own constant (`λ`-free for Laplace).
    fn normalizer(&self, q: f64) -> f64 {
        match self.kind {
            NoiseKind::PointMass => 1.0,
            NoiseKind::TruncLaplace { rate } => -(-rate * q).exp_m1() - (-rate * (1.0 - q)).exp_m1(),
            NoiseKind::TruncGaussian { sigma } => 1.0 - upper(q / sigma) - upper((1.0 - q) / sigma),
        }
    }

    /// Density of `M(q)` at `p`. The point mass has no density and reports
    /// `+inf` at `p = q`.
    pub fn density(&self, q: f64, p: f64) -> Result<f64> {
        check_unit("q", q)?;
        check_unit("p", p)?;
        Ok(self.density_unchecked(q, p))
    }

    fn density_unchecked(&self, q: f64, p: f64) -> f64 {
        match self.kind {
            NoiseKind::PointMass => {
                if p == q {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            NoiseKind::TruncLaplace { rate } if rate < UNIFORM_RATE => 1.0,
            NoiseKind::TruncLaplace { rate } => rate * (-rate * (p - q).abs()).exp() / self.normalizer(q),
            NoiseKind::TruncGaussian { sigma } => {
                let z = (p - q) / sigma;
                (-0.5 * z * z).exp() / (SQRT_2PI * sigma * self.normalizer(q))
            }
        }
    }

    /// `Pr[M(q) <= t]`.
    pub fn cdf(&self, q: f64, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        if t >= 1.0 {
            return 1.0;
        }
        match self.kind {
            NoiseKind::PointMass => {
                if t >= q {
                    1.0
                } else {
                    0.0
                }
            }
            NoiseKind::TruncLaplace { rate } if rate < UNIFORM_RATE => t,
            NoiseKind::TruncLaplace { rate } => {
                let mass = if t <= q {
                    (-rate * (q - t)).exp() - (-rate * q).exp()
                } else {
                    -(-rate * q).exp_m1() - (-rate * (t - q)).exp_m1()
                };
                (mass / self.normalizer(q)).clamp(0.0, 1.0)
            }
            NoiseKind::TruncGaussian { sigma } => {
                // Mass of [0, t] before truncation: Φ((t-q)/σ) - Φ(-q/σ).
                let a = -q / sigma;
                let b = (t - q) / sigma;
                let mass = if b <= 0.0 {
                    upper(-b) - upper(-a)
                } else {
                    (0.5 - upper(-a)) + (0.5 - upper(b))
                };
                (mass / self.normalizer(q)).clamp(0.0, 1.0)
            }
        }
    }

    /// Inverse CDF at `u ∈ [0, 1]`.
    pub fn quantile(&self, q: f64, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let p = match self.kind {
            NoiseKind::PointMass => q,
            NoiseKind::TruncLaplace { rate } if rate < UNIFORM_RATE => u,
            NoiseKind::TruncLaplace { rate } => {
                let target = u * self.normalizer(q);
                let left = -(-rate * q).exp_m1();
                if target <= left {
                    q + (target + (-rate * q).exp()).ln() / rate
                } else {
                    q - (-(target - left)).ln_1p() / rate
                }
            }
            NoiseKind::TruncGaussian { sigma } => {
                let z = self.normalizer(q);
                let below = upper(q / sigma);
                let above = upper((1.0 - q) / sigma);
                // Φ(x) = below + u·z; pick the tail with the smaller value.
                let lower_tail = below + u * z;
                let x = if lower_tail <= 0.5 {
                    -upper_inv(lower_tail)
                } else {
                    upper_inv(above + (1.0 - u) * z)
                };
                q + sigma * x
            }
        };
        p.clamp(0.0, 1.0)
    }

    /// One draw of `M(q)` by inversion.
    pub fn sample<R: Rng + ?Sized>(&self, q: f64, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::PointMass => q,
            _ => self.quantile(q, rng.gen::<f64>()),
        }
    }

    /// `E|M(q) - q|` in closed form.
    pub fn expected_abs_noise_at(&self, q: f64) -> f64 {
        match self.kind {
            NoiseKind::PointMass => 0.0,
            NoiseKind::TruncLaplace { rate } if rate < UNIFORM_RATE => 0.5 * (q * q + (1.0 - q) * (1.0 - q)),
            NoiseKind::TruncLaplace { rate } => {
                // ∫_0^a λ x e^{-λx} dx = (1 - e^{-λa}(1 + λa)) / λ
                let h = |a: f64| {
                    let la = rate * a;
                    -(-la).exp_m1() - la * (-la).exp()
                };
                (h(q) + h(1.0 - q)) / (rate * self.normalizer(q))
            }
            NoiseKind::TruncGaussian { sigma } => {
                let h = |a: f64| -(-0.5 * (a / sigma).powi(2)).exp_m1();
                sigma / SQRT_2PI * (h(q) + h(1.0 - q)) / self.normalizer(q)
            }
        }
    }

    /// `(Pr[a < M(q) <= b], E[M(q); a < M(q) <= b])` in closed form.
    pub fn cell_moments(&self, q: f64, a: f64, b: f64) -> (f64, f64) {
        let mass = (self.cdf(q, b) - self.cdf(q, a)).max(0.0);
        let (a, b) = (a.clamp(0.0, 1.0), b.clamp(0.0, 1.0));
        let centered = match self.kind {
            NoiseKind::PointMass => 0.0,
            NoiseKind::TruncLaplace { rate } if rate < UNIFORM_RATE => {
                return (mass, (0.5 * (b * b - a * a)).max(0.0));
            }
            NoiseKind::TruncLaplace { rate } => {
                // Antiderivative of x λ e^{-λ|x|} is -(|x| + 1/λ) e^{-λ|x|}.
                let g = |x: f64| -(x.abs() + 1.0 / rate) * (-rate * x.abs()).exp();
                (g(b - q) - g(a - q)) / self.normalizer(q)
            }
            NoiseKind::TruncGaussian { sigma } => {
                let e = |x: f64| (-0.5 * (x / sigma).powi(2)).exp();
                sigma * (e(a - q) - e(b - q)) / (SQRT_2PI * self.normalizer(q))
            }
        };
        (mass, (q * mass + centered).max(0.0))
    }

    /// `E|M(q) - q|` by quadrature, for cross-checking the closed forms.
    pub fn expected_abs_noise_quad(&self, q: f64) -> Integral {
        let f = |p: f64| (p - q).abs() * self.density_unchecked(q, p);
        simpson_pieces(&f, &[0.0, q, 1.0], 1e-10)
    }

    /// `max_q E|M(q) - q|` over a q-grid of step 1e-3.
    pub fn expected_abs_noise(&self) -> f64 {
        (0..=1000)
            .map(|i| self.expected_abs_noise_at(i as f64 / 1000.0))
            .fold(0.0, f64::max)
    }

    /// Privacy parameters. Laplace: `(2λ, 0)`. Gaussian built for budget
    /// `ε` with the lemma width: `δ = √ε` and `γ` with `1 - e^{-γε} = 2√ε`.
    /// The improved width is analyzed through total variation instead and
    /// has no parameters here.
    pub fn dp_params(&self) -> Result<DpParams> {
        match self.kind {
            NoiseKind::PointMass => Ok(DpParams { gamma: f64::INFINITY, delta: 0.0 }),
            NoiseKind::TruncLaplace { rate } => Ok(DpParams { gamma: 2.0 * rate, delta: 0.0 }),
            NoiseKind::TruncGaussian { .. } if self.variant == Some(GaussianVariant::Improved) => Err(
                Error::InvalidParameter("improved gaussian width carries no (gamma, delta) guarantee".into()),
            ),
            NoiseKind::TruncGaussian { .. } => {
                let eps = self.epsilon.ok_or_else(|| {
                    Error::InvalidParameter("gaussian mechanism has no recorded budget".into())
                })?;
                let root = eps.sqrt();
                let gamma = if 2.0 * root < 1.0 {
                    -(-2.0 * root).ln_1p() / eps
                } else {
                    f64::INFINITY
                };
                Ok(DpParams { gamma, delta: root })
            }
        }
    }

    /// Largest `f_q(p) - e^{γ|q-q'|} f_{q'}(p) - δ/step` over a grid of
    /// step `grid_step`, using this mechanism's own `(γ, δ)`.
    pub fn check_dp_ratio(&self, grid_step: f64) -> Result<f64> {
        let dp = self.dp_params()?;
        self.check_dp_ratio_with(grid_step, dp)
    }

    /// As [`check_dp_ratio`](Self::check_dp_ratio) with caller-supplied parameters.
    pub fn check_dp_ratio_with(&self, grid_step: f64, dp: DpParams) -> Result<f64> {
        if !(grid_step > 0.0 && grid_step <= 0.1) {
            return Err(Error::InvalidParameter(format!("grid step {grid_step} outside (0, 0.1]")));
        }
        if self.kind == NoiseKind::PointMass {
            return Ok(0.0);
        }
        let n = (1.0 / grid_step).round() as usize;
        let pts: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let dens: Vec<Vec<f64>> = pts
            .iter()
            .map(|&q| pts.iter().map(|&p| self.density_unchecked(q, p)).collect())
            .collect();
        let slack = dp.delta / grid_step;
        let mut worst = f64::NEG_INFINITY;
        for (a, &q) in pts.iter().enumerate() {
            for (b, &q2) in pts.iter().enumerate() {
                let factor = (dp.gamma * (q - q2).abs()).exp();
                for c in 0..pts.len() {
                    let v = dens[a][c] - factor * dens[b][c] - slack;
                    // Relative to the density scale so rounding does not register.
                    let v = v / dens[a][c].max(1.0);
                    worst = worst.max(v);
                }
            }
        }
        Ok(worst)
    }

    /// Largest `Pr_{p ~ M(q)}[ln f_q(p)/f_{q'}(p) > γ|q-q'|] - δ` over a grid
    /// of centers. The log-ratio is affine in `p`, so each tail is one CDF call.
    pub fn gaussian_tail_excess(&self, grid_step: f64) -> Result<f64> {
        let NoiseKind::TruncGaussian { sigma } = self.kind else {
            return Err(Error::InvalidParameter("tail check applies to gaussian mechanisms".into()));
        };
        let dp = self.dp_params()?;
        let n = (1.0 / grid_step).round() as usize;
        let mut worst = f64::NEG_INFINITY;
        for a in 0..=n {
            let q = a as f64 / n as f64;
            for b in 0..=n {
                if a == b {
                    continue;
                }
                let q2 = b as f64 / n as f64;
                let threshold = dp.gamma * (q - q2).abs();
                // ln ratio = (q - q2)(2p - q - q2)/(2σ²) + ln(Z_{q2}/Z_q)
                let slope = (q - q2) / (sigma * sigma);
                let offset = -(q - q2) * (q + q2) / (2.0 * sigma * sigma)
                    + (self.normalizer(q2) / self.normalizer(q)).ln();
                let cut = (threshold - offset) / slope;
                let tail = if slope > 0.0 {
                    1.0 - self.cdf(q, cut)
                } else {
                    self.cdf(q, cut)
                };
                worst = worst.max(tail - dp.delta);
            }
        }
        Ok(worst)
    }

    /// Standard total variation `½∫|f_b - f_q|` by quadrature, split at the
    /// centers and at the single crossing of the two densities.
    pub fn tv_distance(&self, b: f64, q: f64) -> Result<f64> {
        check_unit("b", b)?;
        check_unit("q", q)?;
        if b == q {
            return Ok(0.0);
        }
        if self.kind == NoiseKind::PointMass {
            return Ok(1.0);
        }
        let (lo, hi) = if b < q { (b, q) } else { (q, b) };
        let cross = self.crossing(lo, hi);
        let mut breaks = vec![0.0, lo, cross, hi, 1.0];
        breaks.sort_by(f64::total_cmp);
        let f = |p: f64| (self.density_unchecked(b, p) - self.density_unchecked(q, p)).abs();
        let r = simpson_pieces(&f, &breaks, 1e-9);
        Ok((0.5 * r.value).min(1.0))
    }

    /// Point where `f_lo` and `f_hi` cross; the log-ratio is monotone in `p`.
    fn crossing(&self, lo: f64, hi: f64) -> f64 {
        let g = |p: f64| self.density_unchecked(lo, p).ln() - self.density_unchecked(hi, p).ln();
        let (mut a, mut b) = (0.0, 1.0);
        if g(a) <= 0.0 {
            return a;
        }
        if g(b) >= 0.0 {
            return b;
        }
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if g(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    /// `max_p max(f_b(p), f_q(p))`, the Lipschitz constant in the TV bound.
    pub fn max_density(&self, b: f64, q: f64) -> f64 {
        // Each density peaks at its own center.
        self.density_unchecked(b, b).max(self.density_unchecked(q, q))
    }
}

impl fmt::Display for NoiseMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.epsilon) {
            (NoiseKind::PointMass, _) => write!(f, "point"),
            (NoiseKind::TruncLaplace { .. }, Some(eps)) => write!(f, "laplace:eps={eps}"),
            (NoiseKind::TruncLaplace { rate }, None) => write!(f, "laplace:tau={}", (-rate).exp()),
            (NoiseKind::TruncGaussian { .. }, Some(eps)) => {
                let v = match self.variant {
                    Some(GaussianVariant::Improved) => "improved",
                    _ => "lemma",
                };
                write!(f, "gauss:eps={eps}:variant={v}")
            }
            (NoiseKind::TruncGaussian { sigma }, None) => write!(f, "gauss:sigma={sigma}"),
        }
    }
}

/// Parses `point`, `laplace:eps=E`, `laplace:tau=T`, `gauss:eps=E[:variant=lemma|improved]`
/// or `gauss:sigma=S`.
impl FromStr for NoiseMechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidParameter(format!("mechanism '{s}': {msg}"));
        let mut parts = s.trim().split(':');
        let family = parts.next().unwrap_or_default().to_ascii_lowercase();
        let mut eps = None;
        let mut tau = None;
        let mut sigma = None;
        let mut variant = None;
        for kv in parts {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let num = || v.parse::<f64>().map_err(|_| bad(&format!("'{v}' is not a number")));
            match k {
                "eps" => eps = Some(num()?),
                "tau" => tau = Some(num()?),
                "sigma" => sigma = Some(num()?),
                "variant" => {
                    variant = Some(match v {
                        "lemma" => GaussianVariant::Lemma,
                        "improved" => GaussianVariant::Improved,
                        _ => return Err(bad("variant must be lemma or improved")),
                    })
                }
                _ => return Err(bad(&format!("unknown key '{k}'"))),
            }
        }
        match (family.as_str(), eps, tau, sigma) {
            ("point", None, None, None) => Ok(Self::point_mass()),
            ("laplace", Some(e), None, None) if variant.is_none() => Self::laplace_for_budget(e),
            ("laplace", None, Some(t), None) if variant.is_none() => Self::laplace(t),
            ("gauss" | "gaussian", Some(e), None, None) => {
                Self::gaussian_for_budget(e, variant.unwrap_or(GaussianVariant::Lemma))
            }
            ("gauss" | "gaussian", None, None, Some(s)) if variant.is_none() => Self::gaussian(s),
            _ => Err(bad("expected point, laplace:eps=, laplace:tau=, gauss:eps=[:variant=] or gauss:sigma=")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mechs() -> Vec<NoiseMechanism> {
        vec![
            NoiseMechanism::laplace((-1.0f64).exp()).unwrap(),
            NoiseMechanism::laplace_for_budget(0.01).unwrap(),
            NoiseMechanism::laplace(1.0).unwrap(),
            NoiseMechanism::gaussian(0.2).unwrap(),
            NoiseMechanism::gaussian(0.03).unwrap(),
            NoiseMechanism::gaussian_for_budget(0.04, GaussianVariant::Lemma).unwrap(),
        ]
    }

    #[test]
    fn laplace_closed_form() {
        let m = NoiseMechanism::laplace((-1.0f64).exp()).unwrap();
        let want = 1.0 / (2.0 - 2.0 * (-0.5f64).exp());
        assert_relative_eq!(m.density(0.5, 0.5).unwrap(), want, max_relative = 1e-12);
        assert_relative_eq!(want, 1.27067, epsilon = 1e-4);
        let tau = (-1.0f64).exp();
        for &(q, p) in &[(0.1, 0.7), (0.9, 0.2), (0.0, 1.0)] {
            let closed = -tau.ln() * tau.powf((p - q as f64).abs()) / (2.0 - tau.powf(q) - tau.powf(1.0 - q));
            assert_relative_eq!(m.density(q, p).unwrap(), closed, max_relative = 1e-12);
        }
        assert_eq!(m.density(0.3, 0.1).unwrap(), m.density(0.3, 0.5).unwrap());
        assert!(m.density(1.2, 0.5).is_err());
    }

    #[test]
    fn densities_integrate_to_one() {
        for m in mechs() {
            for i in 0..=100 {
                let q = i as f64 / 100.0;
                let f = |p: f64| m.density_unchecked(q, p);
                let r = simpson_pieces(&f, &[0.0, q, 1.0], 1e-11);
                assert!((r.value - 1.0).abs() < 1e-9, "{m} q={q} mass {}", r.value);
                assert!((m.cdf(q, 1.0) - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cdf_matches_integrated_density_and_quantile_inverts() {
        for m in mechs() {
            for &q in &[0.0, 0.13, 0.5, 0.97, 1.0] {
                for &t in &[0.05, 0.3, 0.5, 0.8] {
                    let f = |p: f64| m.density_unchecked(q, p);
                    let mut br = vec![0.0, t];
                    if q < t {
                        br.insert(1, q);
                    }
                    let r = simpson_pieces(&f, &br, 1e-12);
                    assert!((m.cdf(q, t) - r.value).abs() < 1e-9, "{m} q={q} t={t}");
                }
                for &u in &[0.001, 0.2, 0.5, 0.77, 0.999] {
                    let p = m.quantile(q, u);
                    assert!((m.cdf(q, p) - u).abs() < 1e-9, "{m} q={q} u={u}");
                }
            }
        }
    }

    #[test]
    fn cell_moments_match_quadrature() {
        for m in mechs() {
            for &q in &[0.0, 0.3, 0.5, 1.0] {
                for &(a, b) in &[(0.0, 0.1), (0.25, 0.6), (0.9, 1.0), (0.0, 1.0)] {
                    let f = |p: f64| p * m.density_unchecked(q, p);
                    let mut br = vec![a, b];
                    if a < q && q < b {
                        br.insert(1, q);
                    }
                    let want = simpson_pieces(&f, &br, 1e-12).value;
                    let (mass, first) = m.cell_moments(q, a, b);
                    assert!((first - want).abs() < 1e-9, "{m} q={q} [{a},{b}] {first} vs {want}");
                    assert!((mass - (m.cdf(q, b) - m.cdf(q, a))).abs() < 1e-15);
                }
            }
        }
        let (mass, first) = NoiseMechanism::point_mass().cell_moments(0.3, 0.2, 0.4);
        assert_eq!((mass, first), (1.0, 0.3));
    }

    #[test]
    fn sampler_passes_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in mechs() {
            let q = 0.3;
            let mut xs: Vec<f64> = (0..20_000).map(|_| m.sample(q, &mut rng)).collect();
            xs.sort_by(f64::total_cmp);
            let n = xs.len() as f64;
            let ks = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let c = m.cdf(q, x);
                    (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 0.015, "{m}: KS {ks}");
        }
        let p = NoiseMechanism::point_mass();
        assert_eq!(p.sample(0.42, &mut rng), 0.42);
    }

    #[test]
    fn expected_noise_closed_forms_match_quadrature() {
        for m in mechs() {
            for &q in &[0.0, 0.25, 0.5, 1.0] {
                let quad = m.expected_abs_noise_quad(q).value;
                assert!((m.expected_abs_noise_at(q) - quad).abs() < 1e-9, "{m} q={q}");
            }
        }
        let lap = NoiseMechanism::laplace_for_budget(0.01).unwrap();
        let tau = lap.tau().unwrap();
        assert!(lap.expected_abs_noise() <= -1.0 / tau.ln() - tau / (1.0 - tau) + 1e-12);
        assert!(NoiseMechanism::gaussian(0.2).unwrap().expected_abs_noise() <= 0.2);
        assert_eq!(NoiseMechanism::point_mass().expected_abs_noise(), 0.0);
    }

    #[test]
    fn budget_constructors() {
        let m = NoiseMechanism::laplace_for_budget(0.02).unwrap();
        assert_relative_eq!(m.tau().unwrap(), (-5.0f64).exp(), max_relative = 1e-12);
        let m = NoiseMechanism::laplace_for_budget(0.005).unwrap();
        assert_relative_eq!(m.tau().unwrap(), (-10.0f64).exp(), max_relative = 1e-12);
        assert!(NoiseMechanism::laplace_for_budget(0.5).is_err());
        assert!(NoiseMechanism::laplace_for_budget(0.0).is_err());

        let g = NoiseMechanism::gaussian_for_budget(0.04, GaussianVariant::Lemma).unwrap();
        let NoiseKind::TruncGaussian { sigma } = g.kind() else { panic!() };
        assert_relative_eq!(sigma, 0.38288, epsilon = 1e-4);
        let g = NoiseMechanism::gaussian_for_budget(0.04, GaussianVariant::Improved).unwrap();
        assert_eq!(g.kind(), NoiseKind::TruncGaussian { sigma: 0.2 });
    }

    #[test]
    fn privacy_parameters() {
        let m = NoiseMechanism::laplace_for_budget(0.01).unwrap();
        let dp = m.dp_params().unwrap();
        assert_relative_eq!(dp.gamma, 14.142, epsilon = 1e-3);
        assert_eq!(dp.delta, 0.0);
        assert_eq!(NoiseMechanism::laplace(1.0).unwrap().dp_params().unwrap().gamma, 0.0);
        let g = NoiseMechanism::gaussian_for_budget(0.04, GaussianVariant::Lemma).unwrap();
        let dp = g.dp_params().unwrap();
        assert_relative_eq!(dp.delta, 0.2, epsilon = 1e-15);
        assert_relative_eq!(-(-dp.gamma * 0.04).exp_m1(), 0.4, epsilon = 1e-12);
        assert!(NoiseMechanism::gaussian(0.1).unwrap().dp_params().is_err());
        let g = NoiseMechanism::gaussian_for_budget(0.04, GaussianVariant::Improved).unwrap();
        assert!(g.dp_params().is_err());
    }

    #[test]
    fn laplace_ratio_inequality_holds_on_grid() {
        let m = NoiseMechanism::laplace((-1.0f64).exp()).unwrap();
        assert!(m.check_dp_ratio(0.01).unwrap() <= 1e-9);
        // Halving γ must break it.
        let dp = m.dp_params().unwrap();
        let weak = DpParams { gamma: 0.5 * dp.gamma, delta: 0.0 };
        assert!(m.check_dp_ratio_with(0.01, weak).unwrap() > 1e-3);
    }

    #[test]
    fn gaussian_tail_mass_within_delta() {
        for eps in [0.0025, 0.01, 0.04, 0.1] {
            let g = NoiseMechanism::gaussian_for_budget(eps, GaussianVariant::Lemma).unwrap();
            let excess = g.gaussian_tail_excess(0.01).unwrap();
            eprintln!("eps {eps} tail excess {excess}");
            assert!(excess <= 1e-6, "eps {eps}: tail exceeds delta by {excess}");
        }
    }

    #[test]
    fn tv_matches_cdf_gap() {
        // For these families the densities cross once, so TV = max_t |F_b(t) - F_q(t)|.
        for m in mechs() {
            for &(b, q) in &[(0.2, 0.5), (0.0, 1.0), (0.45, 0.46), (0.9, 0.1)] {
                let tv = m.tv_distance(b, q).unwrap();
                let gap = (0..=20_000)
                    .map(|i| {
                        let t = i as f64 / 20_000.0;
                        (m.cdf(b, t) - m.cdf(q, t)).abs()
                    })
                    .fold(0.0, f64::max);
                assert!(tv >= gap - 1e-8 && tv <= gap + 1e-6, "{m} ({b},{q}) tv {tv} gap {gap}");
            }
            assert_eq!(m.tv_distance(0.3, 0.3).unwrap(), 0.0);
        }
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["laplace:eps=0.01", "gauss:eps=0.04:variant=improved", "gauss:sigma=0.1", "point"] {
            let m: NoiseMechanism = s.parse().unwrap();
            let again: NoiseMechanism = m.to_string().parse().unwrap();
            assert_eq!(m, again);
        }
        let m: NoiseMechanism = "laplace:tau=0.5".parse().unwrap();
        assert_relative_eq!(m.tau().unwrap(), 0.5, max_relative = 1e-15);
        assert!("laplace:eps=0.5".parse::<NoiseMechanism>().is_err());
        assert!("cauchy:eps=0.1".parse::<NoiseMechanism>().is_err());
        assert!("laplace:eps".parse::<NoiseMechanism>().is_err());
    }
}
