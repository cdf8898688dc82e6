//! Reverse-mode differentiation over a fixed set of matrix operations.
//!
//! Every node stores its forward value. [`Tape::backward`] walks the nodes in
//! reverse insertion order, which is a valid reverse topological order because
//! a node can only reference nodes recorded before it.

use crate::density::KernelMixture;
use crate::divergence::{self, Alpha, LOG_RATIO_CLAMP};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `n×m` plus a `1×m` row broadcast over every row.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    /// Row-wise softmax, floored at `p_min`, renormalized.
    SoftmaxFloor { logits: Var, p_min: f64 },
    /// Mean negative log probability of the labelled entries.
    CrossEntropy { probs: Var, labels: Vec<usize> },
    /// Column of log mixture densities at each row of `points`.
    MixtureLogDensity {
        points: Var,
        centers: Var,
        variance: f64,
        skip_diagonal: bool,
    },
    /// `(mean_i exp((1−α)·clamp(r_i)) − 1)/(α(α−1))` over a column of log ratios.
    AlphaEstimate { log_ratios: Var, alpha: Alpha },
    /// Recorded value without registered partial derivatives.
    Opaque { name: String, inputs: Vec<Var> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node with respect to one scalar output.
#[derive(Debug, Clone)]
pub struct TapeGradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl TapeGradients {
    /// Gradient for `var`; zeros when the output does not depend on it.
    pub fn wrt(&self, var: Var) -> Matrix {
        match &self.adjoints[var.0] {
            Some(m) => m.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::ShapeMismatch(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value.data()[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a value computed outside the registered operation set.
    /// Differentiating through it fails with [`Error::UnregisteredOperation`].
    pub fn opaque(&mut self, name: &str, inputs: &[Var], value: Matrix) -> Var {
        self.push(
            value,
            Op::Opaque {
                name: name.to_string(),
                inputs: inputs.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("add_row", av.shape(), rv.shape()));
        }
        let mut value = av.clone();
        for i in 0..value.rows() {
            for (x, b) in value.row_mut(i).iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    fn elementwise(&mut self, a: Var, b: Var, sign: f64, name: &str) -> Result<Matrix> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        let mut value = av.clone();
        value.add_scaled(bv, sign);
        Ok(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, 1.0, "add")?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, -1.0, "sub")?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn softmax_floor(&mut self, logits: Var, p_min: f64) -> Result<Var> {
        let value = softmax_floor_rows(self.value(logits), p_min)?;
        Ok(self.push(value, Op::SoftmaxFloor { logits, p_min }))
    }

    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let loss = cross_entropy_value(self.value(probs), labels)?;
        Ok(self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Log density of the kernel mixture centred on the rows of `centers`,
    /// evaluated at every row of `points`. With `skip_diagonal`, row `i` is
    /// evaluated without center `i` (requires `points` and `centers` to have
    /// the same row count).
    pub fn mixture_log_density(
        &mut self,
        points: Var,
        centers: Var,
        variance: f64,
        skip_diagonal: bool,
    ) -> Result<Var> {
        let (pv, cv) = (self.value(points), self.value(centers));
        if skip_diagonal && pv.rows() != cv.rows() {
            return Err(shape_err("mixture_log_density (leave-one-out)", pv.shape(), cv.shape()));
        }
        let mixture = KernelMixture::new(cv.clone(), variance)?;
        let values = pv
            .iter_rows()
            .enumerate()
            .map(|(i, z)| mixture.log_density_skipping(z, skip_diagonal.then_some(i)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(self.push(
            Matrix::column(&values),
            Op::MixtureLogDensity {
                points,
                centers,
                variance,
                skip_diagonal,
            },
        ))
    }

    pub fn alpha_estimate(&mut self, log_ratios: Var, alpha: Alpha) -> Result<Var> {
        let lr = self.value(log_ratios);
        if lr.cols() != 1 {
            return Err(shape_err("alpha_estimate", lr.shape(), (lr.rows(), 1)));
        }
        let value = divergence::estimate_from_log_ratios(lr.data(), alpha)?;
        Ok(self.push(Matrix::scalar(value), Op::AlphaEstimate { log_ratios, alpha }))
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<TapeGradients> {
        let out = &self.nodes[output.0].value;
        if out.shape() != (1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar output, got {}x{}",
                out.rows(),
                out.cols()
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].clone() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.value(*b).transpose())?;
                    let db = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::AddRow(a, row) => {
                    let mut drow = Matrix::zeros(1, g.cols());
                    for r in g.iter_rows() {
                        for (d, v) in drow.data_mut().iter_mut().zip(r) {
                            *d += v;
                        }
                    }
                    accumulate(&mut adj, *a, g);
                    accumulate(&mut adj, *row, drow);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.map(|v| -v));
                    accumulate(&mut adj, *a, g);
                }
                Op::Scale(a, f) => accumulate(&mut adj, *a, g.map(|v| v * f)),
                Op::Relu(a) => {
                    let mut da = g;
                    // subgradient at exactly 0 is 0
                    for (d, &x) in da.data_mut().iter_mut().zip(self.value(*a).data()) {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::SoftmaxFloor { logits, p_min } => {
                    let dl = softmax_floor_backward(self.value(*logits), &node.value, &g, *p_min);
                    accumulate(&mut adj, *logits, dl);
                }
                Op::CrossEntropy { probs, labels } => {
                    let p = self.value(*probs);
                    let scale = -g.data()[0] / labels.len() as f64;
                    let mut dp = Matrix::zeros(p.rows(), p.cols());
                    for (i, &y) in labels.iter().enumerate() {
                        dp.set(i, y, scale / p.get(i, y));
                    }
                    accumulate(&mut adj, *probs, dp);
                }
                Op::MixtureLogDensity {
                    points,
                    centers,
                    variance,
                    skip_diagonal,
                } => {
                    let (pv, cv) = (self.value(*points), self.value(*centers));
                    let mixture = KernelMixture::new(cv.clone(), *variance)?;
                    let mut dpoints = Matrix::zeros(pv.rows(), pv.cols());
                    let mut dcenters = Matrix::zeros(cv.rows(), cv.cols());
                    for (i, z) in pv.iter_rows().enumerate() {
                        let gi = g.data()[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let lg = mixture.log_density_grad(z, skip_diagonal.then_some(i))?;
                        for (d, v) in dpoints.row_mut(i).iter_mut().zip(&lg.d_point) {
                            *d += gi * v;
                        }
                        dcenters.add_scaled(&lg.d_centers, gi);
                    }
                    accumulate(&mut adj, *points, dpoints);
                    accumulate(&mut adj, *centers, dcenters);
                }
                Op::AlphaEstimate { log_ratios, alpha } => {
                    let a = alpha.value();
                    let lr = self.value(*log_ratios);
                    let n = lr.rows() as f64;
                    // d/dr [ e^{(1−α) r} / (α(α−1) N) ] = −e^{(1−α) r} / (α N)
                    let scale = g.data()[0];
                    let d = lr.map(|r| {
                        if r.abs() >= LOG_RATIO_CLAMP {
                            0.0
                        } else {
                            -scale * ((1.0 - a) * r).exp() / (a * n)
                        }
                    });
                    accumulate(&mut adj, *log_ratios, d);
                }
                Op::Opaque { name, inputs } => {
                    if !inputs.is_empty() {
                        return Err(Error::UnregisteredOperation(name.clone()));
                    }
                }
            }
        }
        Ok(TapeGradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

fn accumulate(adj: &mut [Option<Matrix>], var: Var, grad: Matrix) {
    match &mut adj[var.0] {
        Some(existing) => existing.add_scaled(&grad, 1.0),
        slot @ None => *slot = Some(grad),
    }
}

/// Row-wise softmax, then `max(p, p_min)` and renormalization.
pub fn softmax_floor_rows(logits: &Matrix, p_min: f64) -> Result<Matrix> {
    let c = logits.cols();
    if c == 0 {
        return Err(Error::ShapeMismatch("softmax over zero classes".into()));
    }
    if !(p_min > 0.0 && p_min * (c as f64) < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "probability floor {p_min} must lie in (0, 1/{c})"
        )));
    }
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        let mut floored = 0.0;
        for v in row.iter_mut() {
            *v = (*v / total).max(p_min);
            floored += *v;
        }
        for v in row.iter_mut() {
            *v /= floored;
        }
    }
    Ok(out)
}

fn softmax_floor_backward(logits: &Matrix, out: &Matrix, g: &Matrix, p_min: f64) -> Matrix {
    let mut dl = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let l = logits.row(i);
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = l.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / total).collect();
        let floored: f64 = p.iter().map(|v| v.max(p_min)).sum();
        let (o, gi) = (out.row(i), g.row(i));
        let dot: f64 = gi.iter().zip(o).map(|(a, b)| a * b).sum();
        // through the renormalization, then the floor (inactive where p ≤ p_min)
        let gp: Vec<f64> = gi
            .iter()
            .zip(&p)
            .map(|(gk, pk)| if *pk > p_min { (gk - dot) / floored } else { 0.0 })
            .collect();
        let inner: f64 = gp.iter().zip(&p).map(|(a, b)| a * b).sum();
        for (d, (gk, pk)) in dl.row_mut(i).iter_mut().zip(gp.iter().zip(&p)) {
            *d = pk * (gk - inner);
        }
    }
    dl
}

/// `−(1/N) Σ_i ln probs[i, y_i]`.
pub fn cross_entropy_value(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != probs.rows() {
        return Err(Error::MismatchedLength {
            left: probs.rows(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= probs.cols() {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: probs.cols(),
            });
        }
        total -= probs.get(i, y).ln();
    }
    Ok(total / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::from_rows(&[[1.0, 2.0]]).unwrap());
        let c = t.leaf(Matrix::scalar(3.5));
        let g = t.backward(c).unwrap();
        assert_eq!(g.wrt(w), Matrix::zeros(1, 2));
        assert_eq!(g.wrt(c), Matrix::scalar(1.0));
    }

    #[test]
    fn softmax_cross_entropy_logit_gradient() {
        let mut t = Tape::new();
        let logits = t.leaf(Matrix::zeros(1, 4));
        let p = t.softmax_floor(logits, 1e-6).unwrap();
        let loss = t.cross_entropy(p, &[2]).unwrap();
        assert!((t.scalar(loss) - 4f64.ln()).abs() < 1e-12);
        let g = t.backward(loss).unwrap().wrt(logits);
        let expected = [0.25, 0.25, -0.75, 0.25];
        for (a, b) in g.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn opaque_nodes_block_differentiation() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(2.0));
        let y = t.opaque("cube", &[x], Matrix::scalar(8.0));
        let z = t.scale(y, 2.0);
        match t.backward(z) {
            Err(Error::UnregisteredOperation(name)) => assert_eq!(name, "cube"),
            other => panic!("{other:?}"),
        }
        // without inputs it is just a constant
        let k = t.opaque("constant", &[], Matrix::scalar(1.0));
        let s = t.add(k, x).unwrap();
        assert_eq!(t.backward(s).unwrap().wrt(x), Matrix::scalar(1.0));
    }

    #[test]
    fn shared_inputs_accumulate() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(3.0));
        let y = t.add(x, x).unwrap();
        let z = t.sub(y, x).unwrap();
        assert_eq!(t.backward(z).unwrap().wrt(x), Matrix::scalar(1.0));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(2, 1));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn cross_entropy_errors() {
        let p = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        assert!(matches!(
            cross_entropy_value(&p, &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
        assert!(cross_entropy_value(&p, &[0, 1]).is_err());
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = Matrix::from_rows(&[[0.3, -1.2, 2.5]]).unwrap();
        let b = a.map(|v| v + 17.0);
        let (pa, pb) = (softmax_floor_rows(&a, 1e-6).unwrap(), softmax_floor_rows(&b, 1e-6).unwrap());
        for (x, y) in pa.data().iter().zip(pb.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn alpha_estimate_matches_direct_formula() {
        let mut t = Tape::new();
        let r = t.leaf(Matrix::column(&[2f64.ln()]));
        let e = t.alpha_estimate(r, Alpha::new(0.5).unwrap()).unwrap();
        assert!((t.scalar(e) + 1.6568542494923806).abs() < 1e-12);
        // d/dr = −e^{(1−α) r}/α = −√2/0.5
        let g = t.backward(e).unwrap().wrt(r);
        assert!((g.data()[0] + 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }
}
