//! Gaussian-kernel mixtures over embedding batches, and the robust
//! single-Gaussian fit to an empirical sample.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::divergence::Alpha;
use crate::error::{Error, Result};
use crate::matrix::{log_sum_exp, squared_distance, Matrix};
use crate::rng::{self, ExperimentRng};

/// Kernel variance used throughout unless configured otherwise.
pub const DEFAULT_KERNEL_VARIANCE: f64 = 1.0;

/// Uniform-weight mixture of isotropic Gaussians `N(μ_i, σ²I)` sharing one variance.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMixture {
    centers: Matrix,
    variance: f64,
}

/// Log density plus its partials with respect to the query point and each center.
#[derive(Debug, Clone)]
pub struct LogDensityGrad {
    pub value: f64,
    pub d_point: Vec<f64>,
    /// Same shape as the centers; rows of skipped centers are zero.
    pub d_centers: Matrix,
}

impl KernelMixture {
    pub fn new(centers: Matrix, variance: f64) -> Result<Self> {
        if centers.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if centers.cols() == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "kernel variance must be positive, got {variance}"
            )));
        }
        if !centers.is_finite() {
            return Err(Error::InvalidArgument("non-finite mixture center".into()));
        }
        Ok(KernelMixture { centers, variance })
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn len(&self) -> usize {
        self.centers.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.rows() == 0
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    fn log_normalizer(&self, n: usize) -> f64 {
        -(n as f64).ln() - 0.5 * self.dim() as f64 * (2.0 * PI * self.variance).ln()
    }

    fn exponents(&self, z: &[f64], skip: Option<usize>) -> Vec<f64> {
        let inv = 1.0 / (2.0 * self.variance);
        self.centers
            .iter_rows()
            .enumerate()
            .map(|(i, c)| {
                if Some(i) == skip {
                    f64::NEG_INFINITY
                } else {
                    -squared_distance(z, c) * inv
                }
            })
            .collect()
    }

    /// `ln[(1/N) Σ_i N(z; μ_i, σ²I)]`, computed with log-sum-exp.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        self.log_density_skipping(z, None)
    }

    /// Log density of the mixture with center `skip` removed (and weights renormalized).
    pub fn log_density_skipping(&self, z: &[f64], skip: Option<usize>) -> Result<f64> {
        self.check_dim(z)?;
        let n = self.active_count(skip)?;
        Ok(log_sum_exp(&self.exponents(z, skip)) + self.log_normalizer(n))
    }

    fn active_count(&self, skip: Option<usize>) -> Result<usize> {
        match skip {
            Some(i) if i >= self.len() => Err(Error::InvalidArgument(format!(
                "skipped center {i} out of range for {} centers",
                self.len()
            ))),
            Some(_) if self.len() < 2 => Err(Error::DegenerateBatch { size: self.len() }),
            Some(_) => Ok(self.len() - 1),
            None => Ok(self.len()),
        }
    }

    /// Log density and its gradient. With posterior weights `w_i`,
    /// `∂/∂z = Σ w_i (μ_i − z)/σ²` and `∂/∂μ_i = w_i (z − μ_i)/σ²`.
    pub fn log_density_grad(&self, z: &[f64], skip: Option<usize>) -> Result<LogDensityGrad> {
        self.check_dim(z)?;
        let n = self.active_count(skip)?;
        let exps = self.exponents(z, skip);
        let lse = log_sum_exp(&exps);
        let d = self.dim();
        let mut d_point = vec![0.0; d];
        let mut d_centers = Matrix::zeros(self.len(), d);
        for (i, c) in self.centers.iter_rows().enumerate() {
            if Some(i) == skip {
                continue;
            }
            let w = (exps[i] - lse).exp() / self.variance;
            let row = d_centers.row_mut(i);
            for j in 0..d {
                let diff = z[j] - c[j];
                row[j] = w * diff;
                d_point[j] -= w * diff;
            }
        }
        Ok(LogDensityGrad {
            value: lse + self.log_normalizer(n),
            d_point,
            d_centers,
        })
    }
}

/// Diagonal-covariance Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianModel {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianModel {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: variance.len(),
            });
        }
        if mean.is_empty() {
            return Err(Error::InvalidArgument("zero-dimensional model".into()));
        }
        if variance.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("variances must be positive".into()));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mean".into()));
        }
        Ok(GaussianModel { mean, variance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_pdf(&self, z: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.variance)
            .zip(z)
            .map(|((m, v), x)| -0.5 * (2.0 * PI * v).ln() - (x - m) * (x - m) / (2.0 * v))
            .sum()
    }
}

/// Samples of an empirical distribution, one row each.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Matrix,
}

impl SampleSet {
    pub fn new(samples: Matrix) -> Result<Self> {
        if samples.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if samples.cols() == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if !samples.is_finite() {
            return Err(Error::InvalidArgument("non-finite sample".into()));
        }
        Ok(SampleSet { samples })
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// Coordinatewise median (midpoint of the two central values for even N).
    pub fn median(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| {
                let mut col: Vec<f64> = self.samples.iter_rows().map(|r| r[j]).collect();
                col.sort_by(f64::total_cmp);
                let n = col.len();
                if n % 2 == 1 {
                    col[n / 2]
                } else {
                    0.5 * (col[n / 2 - 1] + col[n / 2])
                }
            })
            .collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.dim())
            .map(|j| self.samples.iter_rows().map(|r| r[j]).sum::<f64>() / n)
            .collect()
    }

    /// Population (1/N) variance per coordinate.
    pub fn variance(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.mean()
            .iter()
            .enumerate()
            .map(|(j, m)| self.samples.iter_rows().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n)
            .collect()
    }

    /// Writes one row per sample, comma separated, shortest round-trip decimals.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for row in self.samples.iter_rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::parse(i + 1, format!("`{f}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::parse(
                        i + 1,
                        format!("expected {} fields, found {}", first.len(), row.len()),
                    ));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::parse(0, "no samples"));
        }
        SampleSet::new(Matrix::from_rows(&rows)?)
    }
}

fn check_model_dim(s: &SampleSet, model: &GaussianModel) -> Result<()> {
    if s.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: s.dim(),
        });
    }
    Ok(())
}

/// Robust fitting objective `(1/(α(α−1))) Σ_i N(z_i | μ, σ²)^(1−α)`.
pub fn robust_fit_objective(s: &SampleSet, model: &GaussianModel, alpha: Alpha) -> Result<f64> {
    check_model_dim(s, model)?;
    let a = alpha.value();
    let total: f64 = s
        .samples
        .iter_rows()
        .map(|z| ((1.0 - a) * model.log_pdf(z)).exp())
        .sum();
    Ok(total / (a * (a - 1.0)))
}

/// Objective with gradients with respect to the mean and the log-variances.
#[derive(Debug, Clone)]
pub struct ObjectiveGrad {
    pub value: f64,
    pub d_mean: Vec<f64>,
    pub d_variance: Vec<f64>,
    pub d_log_variance: Vec<f64>,
}

pub fn robust_fit_objective_grad(
    s: &SampleSet,
    model: &GaussianModel,
    alpha: Alpha,
) -> Result<ObjectiveGrad> {
    check_model_dim(s, model)?;
    let a = alpha.value();
    let pre = 1.0 / (a * (a - 1.0));
    let d = model.dim();
    let mut value = 0.0;
    let mut d_mean = vec![0.0; d];
    let mut d_variance = vec![0.0; d];
    for z in s.samples.iter_rows() {
        let term = ((1.0 - a) * model.log_pdf(z)).exp();
        value += term;
        // ∂ term / ∂θ = (1 − α) · term · ∂ log N / ∂θ
        let w = (1.0 - a) * term;
        for j in 0..d {
            let v = model.variance[j];
            let diff = z[j] - model.mean[j];
            d_mean[j] += w * diff / v;
            d_variance[j] += w * (diff * diff / (2.0 * v * v) - 1.0 / (2.0 * v));
        }
    }
    d_mean.iter_mut().for_each(|g| *g *= pre);
    d_variance.iter_mut().for_each(|g| *g *= pre);
    let d_log_variance = d_variance
        .iter()
        .zip(&model.variance)
        .map(|(g, v)| g * v)
        .collect();
    Ok(ObjectiveGrad {
        value: value * pre,
        d_mean,
        d_variance,
        d_log_variance,
    })
}

/// Plain gradient-descent settings for [`fit_robust_gaussian`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub step: f64,
    pub max_iters: usize,
    /// Converged once every parameter moves less than this in one step.
    pub tolerance: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            step: 0.01,
            max_iters: 20_000,
            tolerance: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitIteration {
    pub iteration: usize,
    pub objective: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitOutcome {
    pub model: GaussianModel,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub trace: Vec<FitIteration>,
}

/// Fits a diagonal Gaussian by gradient descent on the per-sample robust
/// objective over `(μ, ln σ²)`, starting from the coordinatewise median and
/// the sample variance.
///
/// Without convergence the best iterate seen is returned with
/// `converged == false`.
pub fn fit_robust_gaussian(
    s: &SampleSet,
    alpha: Alpha,
    opt: &FitSettings,
) -> Result<FitOutcome> {
    if s.len() < 2 {
        return Err(Error::DegenerateBatch { size: s.len() });
    }
    if !(opt.step > 0.0) || !(opt.tolerance > 0.0) || opt.max_iters == 0 {
        return Err(Error::InvalidArgument(format!("invalid fit settings {opt:?}")));
    }
    let n = s.len() as f64;
    let init_var: Vec<f64> = s.variance().iter().map(|v| v.max(1e-12)).collect();
    let mut model = GaussianModel::new(s.median(), init_var)?;
    let mut trace = Vec::new();
    let mut best: Option<(f64, GaussianModel)> = None;

    for iteration in 0..opt.max_iters {
        let g = robust_fit_objective_grad(s, &model, alpha)?;
        if !g.value.is_finite() {
            return Err(Error::NonFiniteDensity { index: iteration });
        }
        trace.push(FitIteration {
            iteration,
            objective: g.value,
            mean: model.mean.clone(),
            variance: model.variance.clone(),
        });
        if best.as_ref().is_none_or(|(v, _)| g.value < *v) {
            best = Some((g.value, model.clone()));
        }
        let mut largest_move: f64 = 0.0;
        for j in 0..model.dim() {
            let dm = opt.step * g.d_mean[j] / n;
            let dlv = opt.step * g.d_log_variance[j] / n;
            model.mean[j] -= dm;
            model.variance[j] = (model.variance[j].ln() - dlv).exp();
            largest_move = largest_move.max(dm.abs()).max(dlv.abs());
        }
        if largest_move < opt.tolerance {
            let objective = robust_fit_objective(s, &model, alpha)?;
            return Ok(FitOutcome {
                model,
                converged: true,
                iterations: iteration + 1,
                objective,
                trace,
            });
        }
    }
    let (objective, model) = best.expect("at least one iteration ran");
    Ok(FitOutcome {
        model,
        converged: false,
        iterations: opt.max_iters,
        objective,
        trace,
    })
}

/// Draws `n` one-dimensional samples from `Σ_k w_k N(μ_k, σ²_k)`.
///
/// Each sample consumes one uniform (component choice) then one standard normal.
pub fn sample_gaussian_mixture_1d(
    rng: &mut ExperimentRng,
    n: usize,
    components: &[(f64, f64, f64)],
) -> Result<SampleSet> {
    use rand::Rng;
    let total: f64 = components.iter().map(|c| c.0).sum();
    if components.is_empty() || !(total > 0.0) || components.iter().any(|c| c.0 < 0.0 || !(c.2 > 0.0)) {
        return Err(Error::InvalidArgument("invalid mixture components".into()));
    }
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = components[components.len() - 1];
        for c in components {
            acc += c.0;
            if u < acc {
                chosen = *c;
                break;
            }
        }
        let (_, mean, var) = chosen;
        values.push(mean + var.sqrt() * rng::standard_normal(rng));
    }
    SampleSet::new(Matrix::column(&values))
}

/// The contaminated sample `0.8·N(0,1) + 0.2·N(4,0.01)`.
pub fn contaminated_sample(seed: u64, n: usize) -> Result<SampleSet> {
    sample_gaussian_mixture_1d(&mut rng::seeded(seed), n, &[(0.8, 0.0, 1.0), (0.2, 4.0, 0.01)])
}
