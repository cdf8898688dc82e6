//! α-divergence family: exact discrete evaluation, Rényi and KL companions,
//! the target-loss bound, Monte-Carlo estimation from density evaluators and
//! the outlier-gradient rule used to pick α.
//!
//! Conventions: all logarithms are natural, and
//! `D_α(p‖q) = (Σ p^α q^(1-α) − 1) / (α(α−1))`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Half-width of the band `log p − log q` is clamped to before exponentiation.
pub const LOG_RATIO_CLAMP: f64 = 50.0;

const ALPHA_SINGULAR_MARGIN: f64 = 1e-6;
const SUM_TOLERANCE: f64 = 1e-12;

/// Order of an α-divergence. Never within 1e-6 of the singular points 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite()
            || value.abs() < ALPHA_SINGULAR_MARGIN
            || (value - 1.0).abs() < ALPHA_SINGULAR_MARGIN
        {
            return Err(Error::InvalidAlpha(value));
        }
        Ok(Alpha(value))
    }

    /// An order usable for training, which additionally requires α ∈ (0, 1).
    pub fn training(value: f64) -> Result<Self> {
        let alpha = Alpha::new(value)?;
        if !(0.0..1.0).contains(&value) {
            return Err(Error::InvalidAlpha(value));
        }
        Ok(alpha)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `1 − α`, the order that skew symmetry pairs with this one.
    pub fn complement(self) -> Alpha {
        Alpha(1.0 - self.0)
    }

    /// `1 / (α(α − 1))`.
    fn prefactor(self) -> f64 {
        1.0 / (self.0 * (self.0 - 1.0))
    }
}

impl TryFrom<f64> for Alpha {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Alpha::new(value)
    }
}

impl From<Alpha> for f64 {
    fn from(alpha: Alpha) -> f64 {
        alpha.0
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Finite probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {p}, expected a finite non-negative value"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {total}, expected 1"
            )));
        }
        Ok(DiscreteDistribution { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}, cannot normalize"
            )));
        }
        DiscreteDistribution::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEstimate {
    pub value: f64,
    pub n_points: usize,
    pub alpha: Alpha,
    pub direction: Direction,
}

fn check_lengths(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::MismatchedLength {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

/// `Σ p_i^α q_i^(1−α)`, with zero-mass entries handled explicitly.
fn power_overlap(p: &DiscreteDistribution, q: &DiscreteDistribution, alpha: f64) -> Result<f64> {
    check_lengths(p, q)?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi == 0.0 && qi == 0.0 {
            continue;
        }
        // A zero raised to a negative power diverges.
        if (pi == 0.0 && alpha < 0.0) || (qi == 0.0 && alpha > 1.0) {
            return Err(Error::AbsoluteContinuityViolated { index: i });
        }
        if pi == 0.0 || qi == 0.0 {
            continue;
        }
        total += (alpha * pi.ln() + (1.0 - alpha) * qi.ln()).exp();
    }
    Ok(total)
}

/// Exact `D_α(p‖q)` by direct summation.
pub fn exact_alpha_divergence(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
    alpha: Alpha,
) -> Result<f64> {
    let overlap = power_overlap(p, q, alpha.value())?;
    if p.probs == q.probs {
        // the overlap is 1 up to rounding of the stored probabilities
        return Ok(0.0);
    }
    Ok(alpha.prefactor() * (overlap - 1.0))
}

/// `Σ p ln(p/q)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    check_lengths(p, q)?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::AbsoluteContinuityViolated { index: i });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

fn check_open_unit(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0 && value < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "{name} must lie in (0, 1), got {value}"
        )));
    }
    Ok(())
}

/// Rényi divergence `ln(Σ p^α′ q^(1−α′)) / (α′ − 1)` for α′ ∈ (0, 1).
pub fn renyi_exact(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
    alpha_prime: f64,
) -> Result<f64> {
    check_open_unit("alpha_prime", alpha_prime)?;
    let overlap = power_overlap(p, q, alpha_prime)?;
    if overlap <= 0.0 {
        return Err(Error::LogDomainViolation { argument: overlap });
    }
    Ok(overlap.ln() / (alpha_prime - 1.0))
}

/// Rényi divergence recovered from the α-divergence of the same order.
pub fn renyi_from_alpha_divergence(d_alpha: f64, alpha_prime: f64) -> Result<f64> {
    check_open_unit("alpha_prime", alpha_prime)?;
    let argument = 1.0 - alpha_prime * (1.0 - alpha_prime) * d_alpha;
    if !(argument > 0.0) {
        return Err(Error::LogDomainViolation { argument });
    }
    Ok(argument.ln() / (alpha_prime - 1.0))
}

/// Inputs of the target-loss bound. `divergence` is `D_α′(p(z,y)‖q(z,y))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub source_loss: f64,
    pub loss_cap_m: f64,
    pub alpha_prime: f64,
    pub divergence: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss_cap_m > 0.0) || !self.loss_cap_m.is_finite() {
            return Err(Error::InvalidBoundInputs(format!(
                "loss cap M must be positive, got {}",
                self.loss_cap_m
            )));
        }
        if !(0.0..=self.loss_cap_m).contains(&self.source_loss) {
            return Err(Error::InvalidBoundInputs(format!(
                "source loss {} outside [0, {}]",
                self.source_loss, self.loss_cap_m
            )));
        }
        check_open_unit("alpha_prime", self.alpha_prime)?;
        if !self.divergence.is_finite() || self.divergence < -SUM_TOLERANCE {
            return Err(Error::InvalidBoundInputs(format!(
                "divergence must be finite and non-negative, got {}",
                self.divergence
            )));
        }
        Ok(())
    }
}

/// Upper bound on the target loss:
/// `l_source + (M/√2) · sqrt( ln(1 − α′(1−α′)D) / (−α′(1−α′)) )`.
pub fn target_loss_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let a = inputs.alpha_prime;
    let scale = a * (1.0 - a);
    let divergence = inputs.divergence.max(0.0);
    let argument = 1.0 - scale * divergence;
    if !(argument > 0.0) {
        return Err(Error::LogDomainViolation { argument });
    }
    // ln(argument) ≤ 0 and −scale < 0, so the ratio is non-negative.
    let ratio = (argument.ln() / -scale).max(0.0);
    Ok(inputs.source_loss + inputs.loss_cap_m / std::f64::consts::SQRT_2 * ratio.sqrt())
}

/// `exp((1−α)·clamp(log_ratio))`, the per-point term of the estimator.
pub fn ratio_power(log_ratio: f64, alpha: Alpha) -> f64 {
    ((1.0 - alpha.value()) * log_ratio.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)).exp()
}

/// Estimator value from per-point log ratios `log num − log den`, evaluated
/// at samples representing the denominator density.
pub fn estimate_from_log_ratios(log_ratios: &[f64], alpha: Alpha) -> Result<f64> {
    if log_ratios.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(index) = log_ratios.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFiniteDensity { index });
    }
    let mean = log_ratios.iter().map(|&r| ratio_power(r, alpha)).sum::<f64>()
        / log_ratios.len() as f64;
    Ok(alpha.prefactor() * (mean - 1.0))
}

fn log_ratios<P, Q>(points: &Matrix, log_num: P, log_den: Q) -> Result<Vec<f64>>
where
    P: Fn(&[f64]) -> f64,
    Q: Fn(&[f64]) -> f64,
{
    if points.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    points
        .iter_rows()
        .enumerate()
        .map(|(index, z)| {
            let (a, b) = (log_num(z), log_den(z));
            if a.is_finite() && b.is_finite() {
                Ok(a - b)
            } else {
                Err(Error::NonFiniteDensity { index })
            }
        })
        .collect()
}

/// Monte-Carlo estimate of `D_α(q‖p) = (E_q[(p/q)^(1−α)] − 1)/(α(α−1))`
/// with `eval_points` drawn from (or representing) `q`.
pub fn mc_alpha_divergence<P, Q>(
    eval_points: &Matrix,
    log_p: P,
    log_q: Q,
    alpha: Alpha,
) -> Result<DivergenceEstimate>
where
    P: Fn(&[f64]) -> f64,
    Q: Fn(&[f64]) -> f64,
{
    let ratios = log_ratios(eval_points, log_p, log_q)?;
    Ok(DivergenceEstimate {
        value: estimate_from_log_ratios(&ratios, alpha)?,
        n_points: ratios.len(),
        alpha,
        direction: Direction::Forward,
    })
}

/// The reverse estimator: `p` and `q` exchanged, `eval_points` representing `p`.
pub fn mc_reverse_alpha_divergence<P, Q>(
    eval_points: &Matrix,
    log_p: P,
    log_q: Q,
    alpha: Alpha,
) -> Result<DivergenceEstimate>
where
    P: Fn(&[f64]) -> f64,
    Q: Fn(&[f64]) -> f64,
{
    let ratios = log_ratios(eval_points, log_q, log_p)?;
    Ok(DivergenceEstimate {
        value: estimate_from_log_ratios(&ratios, alpha)?,
        n_points: ratios.len(),
        alpha,
        direction: Direction::Reverse,
    })
}

/// Magnitude `(1/α)·r^(−α)` of the outlier-loss gradient at density ratio `r`.
pub fn grad_magnitude(r: f64, alpha: Alpha) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::NonPositiveRatio(r));
    }
    let a = alpha.value();
    Ok((-a * r.ln()).exp() / a)
}

/// Largest α ≤ `alpha_max` whose gradient magnitude at `r_threshold` stays
/// within `rho`.
///
/// The magnitude is minimized at α* = 1/(−ln r) and increases for α > α*, so
/// the search is a bisection on `[α*, alpha_max]`.
pub fn tune_alpha(r_threshold: f64, rho: f64, alpha_max: f64, tol: f64) -> Result<Alpha> {
    check_open_unit("r_threshold", r_threshold)?;
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let cap = Alpha::training(alpha_max)?;
    let magnitude = |a: f64| (-a * r_threshold.ln()).exp() / a;

    let lowest = (1.0 / -r_threshold.ln()).min(cap.value());
    let min_magnitude = magnitude(lowest);
    if min_magnitude > rho {
        return Err(Error::NoFeasibleAlpha { rho, min_magnitude });
    }
    if magnitude(cap.value()) <= rho {
        return Ok(cap);
    }
    let (mut lo, mut hi) = (lowest, cap.value());
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if magnitude(mid) <= rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Alpha::new(lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(p.to_vec()).unwrap()
    }

    fn a(v: f64) -> Alpha {
        Alpha::new(v).unwrap()
    }

    #[test]
    fn alpha_rejects_singular_orders() {
        for bad in [0.0, 1.0, 1e-7, 1.0 - 1e-7, f64::NAN, f64::INFINITY] {
            assert!(Alpha::new(bad).is_err(), "{bad}");
        }
        assert!(Alpha::new(2.0).is_ok());
        assert!(Alpha::training(2.0).is_err());
        assert!(Alpha::training(-0.5).is_err());
        assert!(serde_json::from_str::<Alpha>("1.0").is_err());
        assert_eq!(serde_json::from_str::<Alpha>("0.7").unwrap().value(), 0.7);
    }

    #[test]
    fn distribution_validation() {
        assert!(DiscreteDistribution::new(vec![]).is_err());
        assert!(DiscreteDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDistribution::new(vec![1.5, -0.5]).is_err());
        assert!(DiscreteDistribution::from_weights(&[1.0, 3.0]).is_ok());
    }

    #[test]
    fn exact_examples() {
        let p = dist(&[0.5, 0.5]);
        let q = dist(&[0.9, 0.1]);
        let same = dist(&[0.3, 0.7]);
        assert_eq!(exact_alpha_divergence(&same, &same, a(0.5)).unwrap().abs(), 0.0);
        let d = exact_alpha_divergence(&p, &q, a(0.5)).unwrap();
        assert!((d - 0.422291).abs() < 1e-5);
        assert!((d + 4.0 * (0.45f64.sqrt() + 0.05f64.sqrt() - 1.0)).abs() < 1e-14);
        let d3 = exact_alpha_divergence(&p, &q, a(0.3)).unwrap();
        assert!((d3 - 0.39733).abs() < 1e-4);
    }

    #[test]
    fn exact_errors() {
        let p = dist(&[0.5, 0.5]);
        let r = dist(&[0.2, 0.3, 0.5]);
        assert!(matches!(
            exact_alpha_divergence(&p, &r, a(0.5)),
            Err(Error::MismatchedLength { left: 2, right: 3 })
        ));
        let zero = dist(&[1.0, 0.0]);
        assert!(matches!(
            exact_alpha_divergence(&p, &zero, a(2.0)),
            Err(Error::AbsoluteContinuityViolated { index: 1 })
        ));
        // inside (0,1) zero entries are harmless
        assert!(exact_alpha_divergence(&p, &zero, a(0.5)).unwrap().is_finite());
    }

    #[test]
    fn kl_examples() {
        let p = dist(&[0.5, 0.5]);
        let q = dist(&[0.9, 0.1]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert!((kl_divergence(&p, &q).unwrap() - 0.510825).abs() < 1e-5);
        let det = dist(&[1.0, 0.0]);
        assert!((kl_divergence(&det, &p).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(
            kl_divergence(&p, &det),
            Err(Error::AbsoluteContinuityViolated { index: 1 })
        ));
    }

    #[test]
    fn renyi_examples() {
        let p = dist(&[0.5, 0.5]);
        let q = dist(&[0.9, 0.1]);
        assert_eq!(renyi_exact(&p, &p, 0.3).unwrap(), 0.0);
        assert!((renyi_exact(&p, &q, 0.5).unwrap() - 0.223144).abs() < 1e-5);
        assert!(renyi_exact(&p, &q, 1.0).is_err());

        assert_eq!(renyi_from_alpha_divergence(0.0, 0.4).unwrap(), 0.0);
        assert!((renyi_from_alpha_divergence(0.422291, 0.5).unwrap() - 0.223144).abs() < 1e-6);
        // (1/(-0.7))·ln(1 - 0.21·0.39733)
        assert!((renyi_from_alpha_divergence(0.39733, 0.3).unwrap() - 0.124467).abs() < 1e-6);
        assert!(matches!(
            renyi_from_alpha_divergence(5.0, 0.5),
            Err(Error::LogDomainViolation { .. })
        ));
    }

    #[test]
    fn bound_examples() {
        let zero = BoundInputs {
            source_loss: 0.3,
            loss_cap_m: 13.8155,
            alpha_prime: 0.4,
            divergence: 0.0,
        };
        assert_eq!(target_loss_bound(&zero).unwrap(), 0.3);

        let fixture = BoundInputs {
            source_loss: 0.5,
            loss_cap_m: -(1e-6f64).ln(),
            alpha_prime: 0.5,
            divergence: 0.422291,
        };
        assert!((target_loss_bound(&fixture).unwrap() - 7.026).abs() < 0.01);

        let bad = BoundInputs {
            divergence: 5.0,
            ..fixture
        };
        assert!(matches!(
            target_loss_bound(&bad),
            Err(Error::LogDomainViolation { .. })
        ));
        let over_cap = BoundInputs {
            source_loss: 20.0,
            ..fixture
        };
        assert!(target_loss_bound(&over_cap).is_err());
        let alpha_one = BoundInputs {
            alpha_prime: 1.0,
            ..fixture
        };
        assert!(target_loss_bound(&alpha_one).is_err());
    }

    #[test]
    fn mc_identical_densities_is_zero() {
        let pts = Matrix::column(&[-1.0, 0.0, 2.5]);
        let f = |z: &[f64]| -0.5 * z[0] * z[0];
        for alpha in [0.1, 0.5, 0.9] {
            let fwd = mc_alpha_divergence(&pts, f, f, a(alpha)).unwrap();
            assert_eq!(fwd.value, 0.0);
            assert_eq!(fwd.direction, Direction::Forward);
            let rev = mc_reverse_alpha_divergence(&pts, f, f, a(alpha)).unwrap();
            assert_eq!(rev.value, 0.0);
            assert_eq!(rev.direction, Direction::Reverse);
        }
    }

    #[test]
    fn mc_single_point_may_be_negative() {
        let pts = Matrix::column(&[0.0]);
        let est = mc_alpha_divergence(&pts, |_| 2f64.ln(), |_| 0.0, a(0.5)).unwrap();
        assert!((est.value - (-1.65685)).abs() < 1e-5);
        assert_eq!(est.n_points, 1);
    }

    #[test]
    fn mc_errors() {
        let empty = Matrix::zeros(0, 1);
        assert!(matches!(
            mc_alpha_divergence(&empty, |_| 0.0, |_| 0.0, a(0.5)),
            Err(Error::EmptyBatch)
        ));
        let pts = Matrix::column(&[0.0, 1.0]);
        assert!(matches!(
            mc_alpha_divergence(&pts, |z| if z[0] > 0.5 { f64::NEG_INFINITY } else { 0.0 }, |_| 0.0, a(0.5)),
            Err(Error::NonFiniteDensity { index: 1 })
        ));
    }

    #[test]
    fn mc_reverse_is_forward_with_roles_swapped() {
        let pts = Matrix::column(&[-0.3, 0.4, 1.7]);
        let lp = |z: &[f64]| -0.5 * z[0] * z[0];
        let lq = |z: &[f64]| -0.5 * (z[0] - 1.0) * (z[0] - 1.0);
        let fwd = mc_alpha_divergence(&pts, lq, lp, a(0.3)).unwrap();
        let rev = mc_reverse_alpha_divergence(&pts, lp, lq, a(0.3)).unwrap();
        assert_eq!(fwd.value, rev.value);
    }

    #[test]
    fn log_ratio_clamp_keeps_terms_finite() {
        let v = estimate_from_log_ratios(&[1e6, -1e6], a(0.5)).unwrap();
        assert!(v.is_finite());
        assert_eq!(ratio_power(1e6, a(0.5)), ratio_power(LOG_RATIO_CLAMP, a(0.5)));
    }

    #[test]
    fn grad_magnitude_examples() {
        assert_eq!(grad_magnitude(1.0, a(0.5)).unwrap(), 2.0);
        assert!((grad_magnitude(0.01, a(0.5)).unwrap() - 20.0).abs() < 1e-12);
        let star = 1.0 / -(0.01f64).ln();
        assert!((grad_magnitude(0.01, a(star)).unwrap() - 12.518).abs() < 1e-3);
        assert!((grad_magnitude(0.01, a(0.217147)).unwrap() - 12.518).abs() < 1e-3);
        assert!(matches!(grad_magnitude(0.0, a(0.5)), Err(Error::NonPositiveRatio(_))));
    }

    #[test]
    fn tune_alpha_examples() {
        let tol = 1e-9;
        let alpha = tune_alpha(0.01, 20.0, 0.999, tol).unwrap();
        assert!((alpha.value() - 0.5).abs() <= 1e-6);
        assert_eq!(tune_alpha(0.01, 100.0, 0.999, tol).unwrap().value(), 0.999);
        assert!((grad_magnitude(0.01, a(0.999)).unwrap() - 99.64).abs() < 0.01);
        match tune_alpha(0.01, 10.0, 0.999, tol) {
            Err(Error::NoFeasibleAlpha { min_magnitude, .. }) => {
                assert!((min_magnitude - 12.518).abs() < 1e-3)
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
        assert!(tune_alpha(0.01, 20.0, 1.0, tol).is_err());
        assert!(tune_alpha(1.5, 20.0, 0.9, tol).is_err());
    }

    #[test]
    fn tune_alpha_cap_below_minimizer() {
        // α* ≈ 0.434 for r = 0.1; a cap below it leaves only the cap itself.
        let r = 0.1;
        let cap = 0.3;
        let g = grad_magnitude(r, a(cap)).unwrap();
        assert_eq!(tune_alpha(r, g + 1e-9, cap, 1e-9).unwrap().value(), cap);
        assert!(tune_alpha(r, g - 1e-6, cap, 1e-9).is_err());
    }
}
