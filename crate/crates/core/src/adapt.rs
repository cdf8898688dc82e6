//! Joint training objective `L_c + γ·D̂_α`, the mini-batch training loop and
//! OS* evaluation.
//!
//! Each step encodes a source and a target batch, fits a kernel mixture to
//! each set of embeddings and adds the Monte-Carlo α-divergence between them
//! to the source cross-entropy. In osda mode the estimator is evaluated at
//! the target embeddings (`D_α(q‖p)`), in pda mode the roles are exchanged
//! and it is evaluated at the source embeddings.

use serde::{Deserialize, Serialize};

use crate::density::{KernelMixture, DEFAULT_KERNEL_VARIANCE};
use crate::divergence::{self, Alpha, DivergenceEstimate, Direction};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nnet::{
    cross_entropy_value, model_params_mut, model_vars, sgd_step, Classifier, DenseVars, Gradients,
    Mlp, SgdState, Tape, Var, DEFAULT_P_MIN,
};
use crate::rng::{self, ExperimentRng};
use crate::synthbench::{Dataset, Mode};

fn default_alpha() -> Alpha {
    Alpha::training(0.7).expect("valid")
}
fn default_gamma() -> f64 {
    0.1
}
fn default_sigma2() -> f64 {
    DEFAULT_KERNEL_VARIANCE
}
fn default_batch_size() -> usize {
    64
}
fn default_epochs() -> usize {
    100
}
fn default_learning_rate() -> f64 {
    0.01
}
fn default_lr_decay() -> f64 {
    0.5
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_mode() -> Mode {
    Mode::Osda
}
fn default_encoder_sizes() -> Vec<usize> {
    vec![2, 32, 32, 8]
}
fn default_p_min() -> f64 {
    DEFAULT_P_MIN
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationConfig {
    #[serde(default = "default_alpha")]
    pub alpha: Alpha,
    /// Weight of the divergence term; 0 trains on the source loss alone.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Shared kernel variance σ² of the embedding mixtures.
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Multiplier applied every `ceil(epochs / 3)` epochs.
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    /// `[m, h₁, …, d]`.
    #[serde(default = "default_encoder_sizes")]
    pub encoder_sizes: Vec<usize>,
    #[serde(default = "default_p_min")]
    pub p_min: f64,
    /// Drop each evaluation point's own kernel from the mixture it defines.
    #[serde(default)]
    pub leave_one_out: bool,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            alpha: default_alpha(),
            gamma: default_gamma(),
            sigma2: default_sigma2(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
            lr_decay: default_lr_decay(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            mode: default_mode(),
            seed: 0,
            encoder_sizes: default_encoder_sizes(),
            p_min: default_p_min(),
            leave_one_out: false,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::ConfigInvalid(msg));
        if !(0.0..1.0).contains(&self.alpha.value()) {
            return fail(format!("alpha must lie in (0, 1) for training, got {}", self.alpha));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return fail(format!("gamma must be a non-negative number, got {}", self.gamma));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return fail(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.encoder_sizes.len() < 2 || self.encoder_sizes.contains(&0) {
            return fail(format!("encoder_sizes {:?} is not a valid layer list", self.encoder_sizes));
        }
        if !(self.p_min > 0.0 && self.p_min < 0.5) {
            return fail(format!("p_min must lie in (0, 0.5), got {}", self.p_min));
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch: step decay every `ceil(epochs/3)` epochs.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let every = self.epochs.div_ceil(3).max(1);
        self.learning_rate * self.lr_decay.powi((epoch / every) as i32)
    }

    pub fn direction(&self) -> Direction {
        match self.mode {
            Mode::Osda => Direction::Forward,
            Mode::Pda => Direction::Reverse,
        }
    }
}

/// Monte-Carlo α-divergence between the kernel mixtures of two embedding batches.
pub fn batch_divergence(
    z_source: &Matrix,
    z_target: &Matrix,
    alpha: Alpha,
    sigma2: f64,
    mode: Mode,
    leave_one_out: bool,
) -> Result<DivergenceEstimate> {
    if z_source.rows() == 0 || z_target.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if z_source.cols() != z_target.cols() {
        return Err(Error::DimensionMismatch {
            expected: z_source.cols(),
            got: z_target.cols(),
        });
    }
    let p = KernelMixture::new(z_source.clone(), sigma2)?;
    let q = KernelMixture::new(z_target.clone(), sigma2)?;
    // (evaluation points, numerator mixture, denominator mixture whose
    // centers are the evaluation points)
    let (points, num, den) = match mode {
        Mode::Osda => (z_target, &p, &q),
        Mode::Pda => (z_source, &q, &p),
    };
    let value = if leave_one_out {
        let ratios = points
            .iter_rows()
            .enumerate()
            .map(|(i, z)| Ok(num.log_density(z)? - den.log_density_skipping(z, Some(i))?))
            .collect::<Result<Vec<f64>>>()?;
        divergence::estimate_from_log_ratios(&ratios, alpha)?
    } else {
        let log_num = |z: &[f64]| num.log_density(z).unwrap_or(f64::NAN);
        let log_den = |z: &[f64]| den.log_density(z).unwrap_or(f64::NAN);
        let est = match mode {
            Mode::Osda => divergence::mc_alpha_divergence(points, log_num, log_den, alpha)?,
            Mode::Pda => divergence::mc_reverse_alpha_divergence(points, log_den, log_num, alpha)?,
        };
        est.value
    };
    Ok(DivergenceEstimate {
        value,
        n_points: points.rows(),
        alpha,
        direction: match mode {
            Mode::Osda => Direction::Forward,
            Mode::Pda => Direction::Reverse,
        },
    })
}

/// Records [`batch_divergence`] on a tape so gradients reach both batches.
pub fn record_batch_divergence(
    tape: &mut Tape,
    z_source: Var,
    z_target: Var,
    alpha: Alpha,
    sigma2: f64,
    mode: Mode,
    leave_one_out: bool,
) -> Result<Var> {
    let (s, t) = (tape.value(z_source).shape(), tape.value(z_target).shape());
    if s.0 == 0 || t.0 == 0 {
        return Err(Error::EmptyBatch);
    }
    if s.1 != t.1 {
        return Err(Error::DimensionMismatch {
            expected: s.1,
            got: t.1,
        });
    }
    let (points, num_centers) = match mode {
        Mode::Osda => (z_target, z_source),
        Mode::Pda => (z_source, z_target),
    };
    let log_num = tape.mixture_log_density(points, num_centers, sigma2, false)?;
    let log_den = tape.mixture_log_density(points, points, sigma2, leave_one_out)?;
    let ratios = tape.sub(log_num, log_den)?;
    tape.alpha_estimate(ratios, alpha)
}

/// Values of the three objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub classification: f64,
    pub divergence: f64,
    pub total: f64,
}

/// Tape handles of the objective terms.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub classification: Var,
    pub divergence: Var,
    pub total: Var,
}

/// Handles for every trainable tensor recorded on a tape.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: Vec<DenseVars>,
    pub classifier: DenseVars,
}

impl ModelVars {
    pub fn record(tape: &mut Tape, encoder: &Mlp, classifier: &Classifier) -> Self {
        ModelVars {
            encoder: encoder.record(tape),
            classifier: classifier.record(tape),
        }
    }

    /// Flattened in `encoder.params()` then `classifier.params()` order.
    pub fn flat(&self) -> Vec<Var> {
        model_vars(&self.encoder, self.classifier)
    }
}

/// Records `cross_entropy + γ·batch_divergence` for one pair of batches.
/// With `γ = 0` the divergence is still recorded but left out of the total.
#[allow(clippy::too_many_arguments)]
pub fn record_objective(
    tape: &mut Tape,
    encoder: &Mlp,
    classifier: &Classifier,
    vars: &ModelVars,
    x_source: &Matrix,
    y_source: &[usize],
    x_target: &Matrix,
    cfg: &AdaptationConfig,
) -> Result<ObjectiveVars> {
    let xs = tape.leaf(x_source.clone());
    let xt = tape.leaf(x_target.clone());
    let zs = encoder.forward_tape(tape, &vars.encoder, xs)?;
    let zt = encoder.forward_tape(tape, &vars.encoder, xt)?;
    let probs = classifier.forward_tape(tape, vars.classifier, zs)?;
    let classification = tape.cross_entropy(probs, y_source)?;
    let divergence =
        record_batch_divergence(tape, zs, zt, cfg.alpha, cfg.sigma2, cfg.mode, cfg.leave_one_out)?;
    let total = if cfg.gamma > 0.0 {
        let weighted = tape.scale(divergence, cfg.gamma);
        tape.add(classification, weighted)?
    } else {
        classification
    };
    Ok(ObjectiveVars {
        classification,
        divergence,
        total,
    })
}

/// Objective value without recording gradients.
pub fn joint_objective(
    encoder: &Mlp,
    classifier: &Classifier,
    x_source: &Matrix,
    y_source: &[usize],
    x_target: &Matrix,
    cfg: &AdaptationConfig,
) -> Result<ObjectiveParts> {
    let zs = encoder.forward(x_source)?;
    let zt = encoder.forward(x_target)?;
    let classification = cross_entropy_value(&classifier.forward(&zs)?, y_source)?;
    let divergence =
        batch_divergence(&zs, &zt, cfg.alpha, cfg.sigma2, cfg.mode, cfg.leave_one_out)?.value;
    let total = if cfg.gamma > 0.0 {
        classification + cfg.gamma * divergence
    } else {
        classification
    };
    Ok(ObjectiveParts {
        classification,
        divergence,
        total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Per-class accuracy over the shared classes and their mean (OS*).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsStarResult {
    pub per_class: Vec<ClassAccuracy>,
    pub mean: f64,
}

/// OS* from predictions; samples whose label is not shared are ignored.
pub fn os_star_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    shared: &[usize],
) -> Result<OsStarResult> {
    if predictions.len() != labels.len() {
        return Err(Error::MismatchedLength {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if shared.is_empty() {
        return Err(Error::InvalidArgument("no shared classes to evaluate".into()));
    }
    let mut per_class = Vec::with_capacity(shared.len());
    for &class in shared {
        let (mut correct, mut total) = (0, 0);
        for (&p, &y) in predictions.iter().zip(labels) {
            if y == class {
                total += 1;
                correct += usize::from(p == y);
            }
        }
        if total == 0 {
            return Err(Error::MissingClass(class));
        }
        per_class.push(ClassAccuracy {
            class,
            correct,
            total,
            accuracy: correct as f64 / total as f64,
        });
    }
    let mut sum = 0.0;
    for c in &per_class {
        sum += c.accuracy;
    }
    let mean = sum / per_class.len() as f64;
    Ok(OsStarResult { per_class, mean })
}

pub fn evaluate_os_star(
    encoder: &Mlp,
    classifier: &Classifier,
    eval: &Dataset,
    shared: &[usize],
) -> Result<OsStarResult> {
    let predictions = classifier.predict(&encoder.forward(&eval.samples)?)?;
    os_star_from_predictions(&predictions, &eval.labels, shared)
}

pub fn accuracy(encoder: &Mlp, classifier: &Classifier, data: &Dataset) -> Result<f64> {
    let predictions = classifier.predict(&encoder.forward(&data.samples)?)?;
    let correct = predictions.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / data.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Batch means of each objective term over the epoch.
    pub classification_loss: f64,
    pub divergence: f64,
    pub objective: f64,
    pub source_accuracy: f64,
    /// OS* on the target set, computed from its evaluation-only labels.
    pub target_os_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub seed: u64,
    pub config: AdaptationConfig,
    pub epochs: Vec<EpochRecord>,
    pub shared_classes: Vec<usize>,
    pub final_os_star: Option<OsStarResult>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: Mlp,
    pub classifier: Classifier,
    pub report: TrainingReport,
}

/// Source batches per epoch: a fresh permutation split into chunks of
/// `batch_size`; a short final chunk is kept.
fn source_batches(rng: &mut ExperimentRng, n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    rng::permutation(rng, n)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Cycles through reshuffled permutations of the target set, never repeating
/// an index inside one batch.
struct TargetStream {
    n: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl TargetStream {
    fn new(n: usize) -> Self {
        TargetStream {
            n,
            order: Vec::new(),
            cursor: 0,
        }
    }

    fn next_batch(&mut self, rng: &mut ExperimentRng, size: usize) -> Vec<usize> {
        let size = size.min(self.n);
        if self.cursor + size > self.order.len() {
            self.order = rng::permutation(rng, self.n);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + size].to_vec();
        self.cursor += size;
        batch
    }
}

/// Classes present in both domains; target labels are read for this only.
pub fn shared_classes(source: &Dataset, target: &Dataset) -> Vec<usize> {
    let t = target.label_set();
    source.label_set().into_iter().filter(|c| t.contains(c)).collect()
}

/// Trains encoder and classifier on `source` (labelled) and `target`
/// (labels never touch the gradients).
///
/// Random stream order: encoder init, classifier init, then per epoch one
/// source permutation, with target permutations drawn whenever the target
/// stream runs dry.
pub fn train(cfg: &AdaptationConfig, source: &Dataset, target: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let m = cfg.encoder_sizes[0];
    if source.dim() != m || target.dim() != m {
        return Err(Error::ConfigInvalid(format!(
            "encoder input size {m} does not match data dimensions {} / {}",
            source.dim(),
            target.dim()
        )));
    }
    for n in [source.len(), target.len()] {
        if n < 2 {
            return Err(Error::DegenerateBatch { size: n });
        }
    }
    if source.len() % cfg.batch_size == 1 {
        return Err(Error::DegenerateBatch { size: 1 });
    }
    let classes = source.labels.iter().copied().max().unwrap_or(0) + 1;

    let mut rng = rng::seeded(cfg.seed);
    let mut encoder = Mlp::new(&cfg.encoder_sizes, &mut rng)?;
    let d = encoder.output_dim();
    let mut classifier = Classifier::new(d, classes.max(2), cfg.p_min, &mut rng)?;
    let mut sgd = SgdState::new(cfg.learning_rate, cfg.momentum, cfg.weight_decay)?;
    let mut target_stream = TargetStream::new(target.len());
    let shared = shared_classes(source, target);

    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        sgd.learning_rate = cfg.learning_rate_at(epoch);
        let batches = source_batches(&mut rng, source.len(), cfg.batch_size);
        let (mut ce_sum, mut div_sum, mut obj_sum) = (0.0, 0.0, 0.0);
        for batch in &batches {
            let t_idx = target_stream.next_batch(&mut rng, batch.len());
            if batch.len() < 2 || t_idx.len() < 2 {
                return Err(Error::DegenerateBatch {
                    size: batch.len().min(t_idx.len()),
                });
            }
            let xs = source.samples.select_rows(batch);
            let ys: Vec<usize> = batch.iter().map(|&i| source.labels[i]).collect();
            let xt = target.samples.select_rows(&t_idx);

            let mut tape = Tape::new();
            let vars = ModelVars::record(&mut tape, &encoder, &classifier);
            let obj = record_objective(&mut tape, &encoder, &classifier, &vars, &xs, &ys, &xt, cfg)?;
            let grads = Gradients::from_tape(&tape.backward(obj.total)?, &vars.flat());
            if !grads.is_finite() {
                return Err(Error::ConfigInvalid(format!(
                    "non-finite gradients at epoch {epoch}; lower the learning rate"
                )));
            }
            ce_sum += tape.scalar(obj.classification);
            div_sum += tape.scalar(obj.divergence);
            obj_sum += tape.scalar(obj.total);
            sgd_step(&mut model_params_mut(&mut encoder, &mut classifier), &grads, &mut sgd)?;
        }
        let nb = batches.len() as f64;
        let target_os_star = if shared.is_empty() {
            None
        } else {
            Some(evaluate_os_star(&encoder, &classifier, target, &shared)?.mean)
        };
        records.push(EpochRecord {
            epoch: epoch + 1,
            learning_rate: sgd.learning_rate,
            classification_loss: ce_sum / nb,
            divergence: div_sum / nb,
            objective: obj_sum / nb,
            source_accuracy: accuracy(&encoder, &classifier, source)?,
            target_os_star,
        });
    }
    let final_os_star = if shared.is_empty() {
        None
    } else {
        Some(evaluate_os_star(&encoder, &classifier, target, &shared)?)
    };
    Ok(TrainOutcome {
        encoder,
        classifier,
        report: TrainingReport {
            seed: cfg.seed,
            config: cfg.clone(),
            epochs: records,
            shared_classes: shared,
            final_os_star,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(v: f64) -> Alpha {
        Alpha::new(v).unwrap()
    }

    #[test]
    fn identical_batches_have_zero_divergence() {
        let z = Matrix::from_rows(&[[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]]).unwrap();
        for mode in [Mode::Osda, Mode::Pda] {
            let est = batch_divergence(&z, &z, a(0.7), 1.0, mode, false).unwrap();
            assert_eq!(est.value, 0.0);
        }
    }

    #[test]
    fn single_kernel_hand_value() {
        let zs = Matrix::column(&[0.0]);
        let zt = Matrix::column(&[1.0]);
        let est = batch_divergence(&zs, &zt, a(0.5), 1.0, Mode::Osda, false).unwrap();
        let expected = 4.0 * (1.0 - (-0.25f64).exp());
        assert!((est.value - expected).abs() < 1e-12);
        assert!((est.value - 0.88480).abs() < 1e-5);
        assert_eq!(est.direction, Direction::Forward);
    }

    #[test]
    fn translation_invariance() {
        let zs = Matrix::from_rows(&[[0.0, 1.0], [2.0, -1.0], [0.3, 0.1]]).unwrap();
        let zt = Matrix::from_rows(&[[1.0, 1.5], [0.2, -0.4]]).unwrap();
        let shift = |m: &Matrix| m.map(|v| v + 3.7);
        for mode in [Mode::Osda, Mode::Pda] {
            let v1 = batch_divergence(&zs, &zt, a(0.6), 1.0, mode, false).unwrap().value;
            let v2 = batch_divergence(&shift(&zs), &shift(&zt), a(0.6), 1.0, mode, false).unwrap().value;
            assert!((v1 - v2).abs() < 1e-10);
        }
    }

    #[test]
    fn batch_divergence_errors() {
        let z = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(matches!(
            batch_divergence(&Matrix::zeros(0, 2), &z, a(0.5), 1.0, Mode::Osda, false),
            Err(Error::EmptyBatch)
        ));
        assert!(matches!(
            batch_divergence(&Matrix::column(&[1.0]), &z, a(0.5), 1.0, Mode::Osda, false),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn os_star_fixtures() {
        let labels = [0, 0, 1, 1];
        assert_eq!(os_star_from_predictions(&labels, &labels, &[0, 1]).unwrap().mean, 1.0);
        assert_eq!(os_star_from_predictions(&[0; 4], &labels, &[0, 1]).unwrap().mean, 0.5);

        let mut labels = Vec::new();
        let mut preds = Vec::new();
        for (class, correct) in [(0, 8), (1, 5), (2, 10)] {
            for i in 0..10 {
                labels.push(class);
                preds.push(if i < correct { class } else { (class + 1) % 3 });
            }
        }
        // private-class samples are ignored
        labels.push(3);
        preds.push(0);
        let r = os_star_from_predictions(&preds, &labels, &[0, 1, 2]).unwrap();
        assert!((r.mean - (0.8 + 0.5 + 1.0) / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].correct, 5);
        assert!(matches!(
            os_star_from_predictions(&preds, &labels, &[0, 4]),
            Err(Error::MissingClass(4))
        ));
    }

    #[test]
    fn learning_rate_steps() {
        let cfg = AdaptationConfig {
            epochs: 9,
            learning_rate: 0.08,
            ..Default::default()
        };
        let lrs: Vec<f64> = (0..9).map(|e| cfg.learning_rate_at(e)).collect();
        assert_eq!(lrs, vec![0.08, 0.08, 0.08, 0.04, 0.04, 0.04, 0.02, 0.02, 0.02]);
    }

    #[test]
    fn config_validation() {
        assert!(AdaptationConfig::default().validate().is_ok());
        let bad = [
            AdaptationConfig { batch_size: 1, ..Default::default() },
            AdaptationConfig { epochs: 0, ..Default::default() },
            AdaptationConfig { gamma: -0.1, ..Default::default() },
            AdaptationConfig { alpha: a(1.5), ..Default::default() },
            AdaptationConfig { sigma2: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))), "{cfg:?}");
        }
    }

    #[test]
    fn config_defaults_fill_from_json() {
        let cfg: AdaptationConfig = serde_json::from_str(r#"{"gamma": 0.0, "mode": "pda"}"#).unwrap();
        assert_eq!(cfg.gamma, 0.0);
        assert_eq!(cfg.mode, Mode::Pda);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.alpha.value(), 0.7);
        assert!(serde_json::from_str::<AdaptationConfig>(r#"{"alpha": 1.0}"#).is_err());
        assert!(serde_json::from_str::<AdaptationConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
