use rand::Rng;

use super::tape::{softmax_floor_rows, Tape, TapeGradients, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::ExperimentRng;

/// Default probability floor; the per-sample loss is capped at `−ln(1e-6)`.
pub const DEFAULT_P_MIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in × fan_out`.
    pub weight: Matrix,
    /// `1 × fan_out`.
    pub bias: Matrix,
}

impl Dense {
    /// Weights uniform in `±1/√fan_in`, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut ExperimentRng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Dense {
            weight: Matrix::from_vec(fan_in, fan_out, data).expect("sized above"),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    fn affine(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weight)?;
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(out)
    }
}

/// Tape handles for one dense layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

/// Feature extractor `ℝ^m → ℝ^d`: dense layers with ReLU between them and a
/// linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes = [m, h₁, …, d]`.
    pub fn new(sizes: &[usize], rng: &mut ExperimentRng) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(Mlp {
            layers: sizes.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect(),
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(Mlp {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("encoder needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.rows() != 1 || l.bias.cols() != l.weight.cols() {
                return Err(Error::ShapeMismatch(format!("layer {i} bias does not match weight")));
            }
            if i > 0 && layers[i - 1].weight.cols() != l.weight.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} expects {} inputs, previous layer gives {}",
                    l.weight.rows(),
                    layers[i - 1].weight.cols()
                )));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::ShapeMismatch(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.weight.cols()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.cols()
    }

    /// Embeddings for a batch of inputs, one per row.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.affine(&h)?;
            if i < last {
                h = h.map(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    pub fn record(&self, tape: &mut Tape) -> Vec<DenseVars> {
        self.layers
            .iter()
            .map(|l| DenseVars {
                weight: tape.leaf(l.weight.clone()),
                bias: tape.leaf(l.bias.clone()),
            })
            .collect()
    }

    pub fn forward_tape(&self, tape: &mut Tape, vars: &[DenseVars], x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: cols,
            });
        }
        let last = vars.len() - 1;
        let mut h = x;
        for (i, v) in vars.iter().enumerate() {
            let a = tape.matmul(h, v.weight)?;
            h = tape.add_row(a, v.bias)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::ShapeMismatch(format!(
            "layer sizes {sizes:?} need at least two positive entries"
        )));
    }
    Ok(())
}

/// Linear classifier `ℝ^d → Δ^C` with softmax and a probability floor.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub layer: Dense,
    p_min: f64,
}

impl Classifier {
    pub fn new(dim: usize, classes: usize, p_min: f64, rng: &mut ExperimentRng) -> Result<Self> {
        Self::from_layer(Dense::init(dim, classes, rng), p_min)
    }

    pub fn from_layer(layer: Dense, p_min: f64) -> Result<Self> {
        let classes = layer.weight.cols();
        if classes < 2 || layer.weight.rows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "classifier needs d ≥ 1 and C ≥ 2, got {}x{classes}",
                layer.weight.rows()
            )));
        }
        if layer.bias.shape() != (1, classes) {
            return Err(Error::ShapeMismatch("classifier bias does not match weight".into()));
        }
        if !(p_min > 0.0 && p_min * (classes as f64) < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "probability floor {p_min} must lie in (0, 1/{classes})"
            )));
        }
        Ok(Classifier { layer, p_min })
    }

    pub fn input_dim(&self) -> usize {
        self.layer.weight.rows()
    }

    pub fn classes(&self) -> usize {
        self.layer.weight.cols()
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    /// Cap on the per-sample loss, `−ln p_min`.
    pub fn loss_cap(&self) -> f64 {
        -self.p_min.ln()
    }

    pub fn logits(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: z.cols(),
            });
        }
        self.layer.affine(z)
    }

    pub fn forward(&self, z: &Matrix) -> Result<Matrix> {
        softmax_floor_rows(&self.logits(z)?, self.p_min)
    }

    /// Most probable class per row; the lowest index wins exact ties.
    pub fn predict(&self, z: &Matrix) -> Result<Vec<usize>> {
        let probs = self.forward(z)?;
        Ok(probs.iter_rows().map(argmax).collect())
    }

    pub fn record(&self, tape: &mut Tape) -> DenseVars {
        DenseVars {
            weight: tape.leaf(self.layer.weight.clone()),
            bias: tape.leaf(self.layer.bias.clone()),
        }
    }

    pub fn forward_tape(&self, tape: &mut Tape, vars: DenseVars, z: Var) -> Result<Var> {
        let cols = tape.value(z).cols();
        if cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: cols,
            });
        }
        let a = tape.matmul(z, vars.weight)?;
        let logits = tape.add_row(a, vars.bias)?;
        tape.softmax_floor(logits, self.p_min)
    }

    pub fn params(&self) -> Vec<&Matrix> {
        vec![&self.layer.weight, &self.layer.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.layer.weight, &mut self.layer.bias]
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Parameter gradients in the order of the owning model's `params()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Matrix>,
}

impl Gradients {
    pub fn from_tape(grads: &TapeGradients, vars: &[Var]) -> Self {
        Gradients {
            tensors: vars.iter().map(|&v| grads.wrt(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

/// Flattened tape handles for the encoder followed by the classifier, in
/// the same order as [`model_params_mut`].
pub fn model_vars(encoder: &[DenseVars], classifier: DenseVars) -> Vec<Var> {
    encoder
        .iter()
        .chain(std::iter::once(&classifier))
        .flat_map(|v| [v.weight, v.bias])
        .collect()
}

pub fn model_params_mut<'a>(encoder: &'a mut Mlp, classifier: &'a mut Classifier) -> Vec<&'a mut Matrix> {
    let mut params = encoder.params_mut();
    params.extend(classifier.params_mut());
    params
}
