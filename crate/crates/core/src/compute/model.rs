use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vector::{DenseVector, Matrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `f(θ) = mean_i ½‖θ − x_i‖²` over the batch rows `x_i`.
    Quadratic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// Analytic-gradient model over a flat parameter vector.
///
/// MLP parameters are laid out layer by layer, each layer as its row-major
/// `out × in` weight matrix followed by its `out` biases. Trailing pad
/// positions (see [`Model::padded_to`]) never influence the loss and always
/// receive a zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    kind: ModelKind,
    layer_dims: Vec<usize>,
    activation: Activation,
    loss: LossKind,
    natural_len: usize,
    param_count: usize,
}

impl Model {
    pub fn quadratic(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("quadratic dimension must be > 0"));
        }
        Ok(Self {
            kind: ModelKind::Quadratic,
            layer_dims: vec![dim],
            activation: Activation::Tanh,
            loss: LossKind::Mse,
            natural_len: dim,
            param_count: dim,
        })
    }

    /// `layer_dims` lists input, hidden and output widths; hidden layers use
    /// `activation`, the output layer is linear.
    pub fn mlp(layer_dims: &[usize], activation: Activation, loss: LossKind) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::config(format!(
                "MLP needs at least input and output widths, all > 0 (got {layer_dims:?})"
            )));
        }
        if loss == LossKind::CrossEntropy && *layer_dims.last().unwrap() < 2 {
            return Err(Error::config(
                "cross-entropy needs at least 2 output classes",
            ));
        }
        let natural_len = layer_dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        Ok(Self {
            kind: ModelKind::Mlp,
            layer_dims: layer_dims.to_vec(),
            activation,
            loss,
            natural_len,
            param_count: natural_len,
        })
    }

    /// Pads the flat parameter vector with trailing zeros up to a multiple of `shards`.
    pub fn padded_to(mut self, shards: usize) -> Self {
        let shards = shards.max(1);
        self.param_count = self.natural_len.div_ceil(shards) * shards;
        self
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Number of parameters actually used by the model (without padding).
    pub fn natural_len(&self) -> usize {
        self.natural_len
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Deterministic initialization. Quadratic starts at the origin; MLP
    /// weights and biases are uniform in `±1/√fan_in`.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> DenseVector<T> {
        let mut p = DenseVector::zeros(self.param_count);
        if self.kind == ModelKind::Mlp {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut off = 0;
            for w in self.layer_dims.windows(2) {
                let (fan_in, out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                for v in &mut p[off..off + out * fan_in + out] {
                    *v = T::lit(rng.gen_range(-bound..=bound));
                }
                off += out * fan_in + out;
            }
        }
        p
    }

    fn check<T: Scalar>(&self, params: &[T], batch: &Batch<T>) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::Dimension(format!(
                "params length {} != model param_count {}",
                params.len(),
                self.param_count
            )));
        }
        if batch.inputs.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "batch input width {} != model input dim {}",
                batch.inputs.cols(),
                self.input_dim()
            )));
        }
        if self.kind == ModelKind::Quadratic {
            return Ok(());
        }
        match (&batch.targets, self.loss) {
            (Targets::Values(t), LossKind::Mse) => {
                if t.rows() != batch.size() || t.cols() != self.output_dim() {
                    return Err(Error::Dimension(format!(
                        "targets {}x{} do not match batch {} x output {}",
                        t.rows(),
                        t.cols(),
                        batch.size(),
                        self.output_dim()
                    )));
                }
            }
            (Targets::Labels(l), LossKind::CrossEntropy) => {
                if l.len() != batch.size() {
                    return Err(Error::Dimension("label count != batch size".into()));
                }
                if let Some(&bad) = l.iter().find(|&&c| c >= self.output_dim()) {
                    return Err(Error::Dimension(format!(
                        "label {bad} out of range for {} classes",
                        self.output_dim()
                    )));
                }
            }
            _ => {
                return Err(Error::Dimension(
                    "target kind does not match model loss".into(),
                ))
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets<T> {
    /// Quadratic batches carry their targets in the input rows.
    None,
    Values(Matrix<T>),
    Labels(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub inputs: Matrix<T>,
    pub targets: Targets<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(inputs: Matrix<T>, targets: Targets<T>) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::Dimension(
                "batch must contain at least one example".into(),
            ));
        }
        Ok(Self { inputs, targets })
    }

    /// Single-row quadratic batch whose optimum is `target`.
    pub fn quadratic_target(target: &[T]) -> Result<Self> {
        Self::new(
            Matrix::new(1, target.len(), target.to_vec())?,
            Targets::None,
        )
    }

    pub fn size(&self) -> usize {
        self.inputs.rows()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let targets = match &self.targets {
            Targets::None => Targets::None,
            Targets::Values(m) => Targets::Values(m.select_rows(idx)),
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
        };
        Self {
            inputs: self.inputs.select_rows(idx),
            targets,
        }
    }
}

/// Mean loss over the batch.
pub fn forward_loss<T: Scalar>(model: &Model, params: &[T], batch: &Batch<T>) -> Result<T> {
    model.check(params, batch)?;
    Ok(evaluate(model, params, batch, None))
}

/// Gradient of [`forward_loss`] with respect to the flat parameters.
pub fn backward<T: Scalar>(
    model: &Model,
    params: &[T],
    batch: &Batch<T>,
) -> Result<DenseVector<T>> {
    Ok(loss_and_gradient(model, params, batch)?.1)
}

pub fn loss_and_gradient<T: Scalar>(
    model: &Model,
    params: &[T],
    batch: &Batch<T>,
) -> Result<(T, DenseVector<T>)> {
    model.check(params, batch)?;
    let mut grad = DenseVector::zeros(model.param_count);
    let loss = evaluate(model, params, batch, Some(&mut grad));
    Ok((loss, grad))
}

/// Central-difference gradient estimate, one coordinate at a time.
pub fn finite_diff_gradient<T: Scalar>(
    model: &Model,
    params: &[T],
    batch: &Batch<T>,
    h: T,
) -> Result<DenseVector<T>> {
    if !(h > T::zero()) || !h.is_finite() {
        return Err(Error::config(format!(
            "finite-difference step must be > 0, got {h}"
        )));
    }
    model.check(params, batch)?;
    let mut probe = params.to_vec();
    let mut grad = DenseVector::zeros(model.param_count);
    let two_h = h + h;
    for i in 0..model.natural_len {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = evaluate(model, &probe, batch, None);
        probe[i] = orig - h;
        let down = evaluate(model, &probe, batch, None);
        probe[i] = orig;
        grad[i] = (up - down) / two_h;
    }
    Ok(grad)
}

/// Fraction of examples whose arg-max output matches the label (cross-entropy models).
pub fn classification_error<T: Scalar>(
    model: &Model,
    params: &[T],
    batch: &Batch<T>,
) -> Result<f64> {
    model.check(params, batch)?;
    let Targets::Labels(labels) = &batch.targets else {
        return Err(Error::Dimension(
            "classification error needs label targets".into(),
        ));
    };
    let mut wrong = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let out = mlp_forward(model, params, batch.inputs.row(r))
            .pop()
            .unwrap();
        let pred = argmax(&out);
        if pred != label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / labels.len() as f64)
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn evaluate<T: Scalar>(
    model: &Model,
    params: &[T],
    batch: &Batch<T>,
    grad: Option<&mut DenseVector<T>>,
) -> T {
    match model.kind {
        ModelKind::Quadratic => quadratic(model, params, batch, grad),
        ModelKind::Mlp => mlp(model, params, batch, grad),
    }
}

fn quadratic<T: Scalar>(
    model: &Model,
    params: &[T],
    batch: &Batch<T>,
    grad: Option<&mut DenseVector<T>>,
) -> T {
    let dim = model.natural_len;
    let n = T::from_usize_lossy(batch.size());
    let half = T::lit(0.5);
    let mut loss = T::zero();
    for r in 0..batch.size() {
        let x = batch.inputs.row(r);
        let sq: T = params[..dim]
            .iter()
            .zip(x)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        loss = loss + half * sq;
    }
    if let Some(g) = grad {
        for i in 0..dim {
            let mut acc = T::zero();
            for r in 0..batch.size() {
                acc = acc + (params[i] - batch.inputs.row(r)[i]);
            }
            g[i] = acc / n;
        }
    }
    loss / n
}

/// Layer activations for one example: `acts[0]` is the input, `acts[L]` the linear output.
fn mlp_forward<T: Scalar>(model: &Model, params: &[T], x: &[T]) -> Vec<Vec<T>> {
    let layers = model.layer_dims.len() - 1;
    let mut acts = Vec::with_capacity(layers + 1);
    acts.push(x.to_vec());
    let mut off = 0;
    for l in 0..layers {
        let (fan_in, out) = (model.layer_dims[l], model.layer_dims[l + 1]);
        let w = &params[off..off + out * fan_in];
        let b = &params[off + out * fan_in..off + out * fan_in + out];
        let a = &acts[l];
        let mut z: Vec<T> = (0..out)
            .map(|o| {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                row.iter().zip(a).map(|(&wi, &ai)| wi * ai).sum::<T>() + b[o]
            })
            .collect();
        if l + 1 < layers {
            for v in &mut z {
                *v = activate(model.activation, *v);
            }
        }
        acts.push(z);
        off += out * fan_in + out;
    }
    acts
}

fn activate<T: Scalar>(act: Activation, z: T) -> T {
    match act {
        Activation::Tanh => z.tanh(),
        Activation::Relu => z.max(T::zero()),
    }
}

/// Derivative expressed through the activation output `a`.
fn activate_grad<T: Scalar>(act: Activation, a: T) -> T {
    match act {
        Activation::Tanh => T::one() - a * a,
        Activation::Relu => {
            if a > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}

fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    max + v.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

fn mlp<T: Scalar>(
    model: &Model,
    params: &[T],
    batch: &Batch<T>,
    mut grad: Option<&mut DenseVector<T>>,
) -> T {
    let layers = model.layer_dims.len() - 1;
    let n = T::from_usize_lossy(batch.size());
    let out_dim = T::from_usize_lossy(model.output_dim());
    let mut total = T::zero();

    let mut offsets = Vec::with_capacity(layers);
    let mut off = 0;
    for l in 0..layers {
        offsets.push(off);
        off += model.layer_dims[l + 1] * model.layer_dims[l] + model.layer_dims[l + 1];
    }

    for r in 0..batch.size() {
        let acts = mlp_forward(model, params, batch.inputs.row(r));
        let y = &acts[layers];
        let (loss, mut delta): (T, Vec<T>) = match (&batch.targets, model.loss) {
            (Targets::Values(t), _) => {
                let t = t.row(r);
                let loss = y.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / out_dim;
                let two = T::lit(2.0);
                (
                    loss,
                    y.iter()
                        .zip(t)
                        .map(|(&a, &b)| two * (a - b) / (out_dim * n))
                        .collect(),
                )
            }
            (Targets::Labels(l), _) => {
                let lse = log_sum_exp(y);
                let label = l[r];
                let d = y
                    .iter()
                    .enumerate()
                    .map(|(i, &yi)| {
                        let p = (yi - lse).exp();
                        (if i == label { p - T::one() } else { p }) / n
                    })
                    .collect();
                (lse - y[label], d)
            }
            (Targets::None, _) => unreachable!("checked by Model::check"),
        };
        total = total + loss;

        let Some(g) = grad.as_deref_mut() else {
            continue;
        };
        for l in (0..layers).rev() {
            let (fan_in, out) = (model.layer_dims[l], model.layer_dims[l + 1]);
            let off = offsets[l];
            let a_prev = &acts[l];
            for o in 0..out {
                let d = delta[o];
                let gw = &mut g[off + o * fan_in..off + (o + 1) * fan_in];
                for (gi, &ai) in gw.iter_mut().zip(a_prev) {
                    *gi = *gi + d * ai;
                }
                g[off + out * fan_in + o] = g[off + out * fan_in + o] + d;
            }
            if l > 0 {
                let w = &params[off..off + out * fan_in];
                delta = (0..fan_in)
                    .map(|i| {
                        let back: T = (0..out).map(|o| w[o * fan_in + i] * delta[o]).sum();
                        back * activate_grad(model.activation, a_prev[i])
                    })
                    .collect();
            }
        }
    }
    total / n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(model: &Model, rows: usize, seed: u64) -> Batch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<f64> = (0..rows * model.input_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let inputs = Matrix::new(rows, model.input_dim(), inputs).unwrap();
        let targets = match model.loss_kind() {
            LossKind::Mse => Targets::Values(
                Matrix::new(
                    rows,
                    model.output_dim(),
                    (0..rows * model.output_dim())
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect(),
                )
                .unwrap(),
            ),
            LossKind::CrossEntropy => Targets::Labels(
                (0..rows)
                    .map(|_| rng.gen_range(0..model.output_dim()))
                    .collect(),
            ),
        };
        Batch::new(inputs, targets).unwrap()
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / (y.abs() + 1e-12))
            .fold(0.0, f64::max)
    }

    #[test]
    fn quadratic_at_optimum_is_zero() {
        let m = Model::quadratic(3).unwrap();
        let b = Batch::quadratic_target(&[0.0, 0.0, 0.0]).unwrap();
        let p = DenseVector::zeros(3);
        assert_eq!(forward_loss(&m, &p, &b).unwrap(), 0.0);
        assert_eq!(backward(&m, &p, &b).unwrap().as_slice(), &[0.0; 3]);
    }

    #[test]
    fn quadratic_closed_form() {
        let m = Model::quadratic(2).unwrap();
        let b = Batch::quadratic_target(&[1.0, 2.0]).unwrap();
        let p = DenseVector::from_slice(&[0.0, 0.0]).unwrap();
        assert_eq!(forward_loss(&m, &p, &b).unwrap(), 2.5);
        assert_eq!(backward(&m, &p, &b).unwrap().as_slice(), &[-1.0, -2.0]);
    }

    #[test]
    fn zero_mlp_on_zero_targets_has_zero_loss() {
        let m = Model::mlp(&[3, 4, 2], Activation::Tanh, LossKind::Mse).unwrap();
        let mut b = random_batch(&m, 5, 1);
        b.targets = Targets::Values(Matrix::zeros(5, 2));
        let p = DenseVector::zeros(m.param_count());
        assert_eq!(forward_loss(&m, &p, &b).unwrap(), 0.0);
    }

    #[test]
    fn mlp_param_count_and_padding() {
        let m = Model::mlp(&[2, 4, 2], Activation::Tanh, LossKind::Mse).unwrap();
        assert_eq!(m.param_count(), 2 * 4 + 4 + 4 * 2 + 2);
        let padded = m.clone().padded_to(4);
        assert_eq!(padded.param_count(), 24);
        assert_eq!(padded.natural_len(), 22);
        let p: DenseVector<f64> = padded.init_params(3);
        assert_eq!(&p[22..], &[0.0, 0.0]);
        let b = random_batch(&padded, 4, 3);
        let g = backward(&padded, &p, &b).unwrap();
        assert_eq!(&g[22..], &[0.0, 0.0]);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let m = Model::mlp(&[16, 8, 3], Activation::Relu, LossKind::CrossEntropy).unwrap();
        let p: DenseVector<f64> = m.init_params(9);
        assert!(p[..16 * 8 + 8].iter().all(|v| v.abs() <= 0.25));
        assert!(p[16 * 8 + 8..].iter().all(|v| v.abs() <= 1.0 / 8f64.sqrt()));
        assert_eq!(p, m.init_params(9));
    }

    #[test]
    fn mlp_2_4_2_matches_finite_differences() {
        for loss in [LossKind::Mse, LossKind::CrossEntropy] {
            let m = Model::mlp(&[2, 4, 2], Activation::Tanh, loss).unwrap();
            let p = m.init_params(7);
            let b = random_batch(&m, 6, 7);
            let g = backward(&m, &p, &b).unwrap();
            let fd = finite_diff_gradient(&m, &p, &b, 1e-5).unwrap();
            assert!(max_rel_err(&g, &fd) < 1e-5, "{loss:?}");
        }
    }

    #[test]
    fn quadratic_finite_differences_are_tight() {
        let m = Model::quadratic(5).unwrap();
        let b = Batch::quadratic_target(&[1.0, -2.0, 3.0, 0.5, -0.25]).unwrap();
        let p = DenseVector::from_slice(&[0.3, 0.1, -0.7, 2.0, 1.0]).unwrap();
        let g = backward(&m, &p, &b).unwrap();
        let fd = finite_diff_gradient(&m, &p, &b, 1e-5).unwrap();
        assert!(max_rel_err(&g, &fd) < 1e-8);
    }

    #[test]
    fn zero_step_rejected() {
        let m = Model::quadratic(2).unwrap();
        let b = Batch::quadratic_target(&[1.0, 2.0]).unwrap();
        let p = DenseVector::zeros(2);
        assert!(finite_diff_gradient(&m, &p, &b, 0.0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = Model::quadratic(3).unwrap();
        let b = Batch::quadratic_target(&[1.0, 2.0]).unwrap();
        assert!(matches!(
            forward_loss(&m, &DenseVector::zeros(3), &b),
            Err(Error::Dimension(_))
        ));
        let b3 = Batch::quadratic_target(&[1.0, 2.0, 3.0]).unwrap();
        assert!(backward(&m, &DenseVector::<f64>::zeros(2), &b3).is_err());
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let m = Model::mlp(&[3, 5, 3], Activation::Relu, LossKind::CrossEntropy).unwrap();
        let p = m.init_params(2);
        let b = random_batch(&m, 8, 2);
        let (l1, g1) = loss_and_gradient(&m, &p, &b).unwrap();
        let (l2, g2) = loss_and_gradient(&m, &p, &b).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert!(g1.bit_eq(&g2));
    }

    #[test]
    fn works_in_single_precision() {
        let m = Model::quadratic(2).unwrap();
        let b = Batch::<f32>::quadratic_target(&[1.0, 2.0]).unwrap();
        let p = DenseVector::<f32>::zeros(2);
        assert_eq!(forward_loss(&m, &p, &b).unwrap(), 2.5f32);
    }
}
