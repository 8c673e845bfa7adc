//! Minimal dense numeric core: row-major matrices, multilayer perceptrons
//! with analytic gradients, and an Adam optimizer.
//!
//! This is deliberately small — just what the denoiser and the auxiliary
//! regressors need. Shapes are validated at the model boundary and return
//! [`NnError`]; the low-level matrix ops treat mismatches as programmer
//! error and panic.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

/// Errors from model-level operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("network needs at least an input and an output width")]
    InvalidWidths,
    #[error("non-finite gradient encountered at optimizer step {step}")]
    NonFiniteGradient { step: u64 },
}

// ───────────────────────── matrices ─────────────────────────

/// Dense row-major `rows × cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a flat row-major buffer. Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "buffer of {} entries cannot form a {rows}x{cols} matrix",
            data.len()
        );
        Self { rows, cols, data }
    }

    /// Build from per-row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · rhs` for `(m×k) · (k×n)`.
    pub fn matmul(&self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimensions differ");
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.data[i * self.cols + k];
                let rrow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, r) in orow.iter_mut().zip(rrow) {
                    *o += aik * r;
                }
            }
        }
        out
    }

    /// `selfᵀ · rhs` for `(k×m)ᵀ · (k×n)`.
    pub fn matmul_tn(&self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.rows, rhs.rows, "matmul_tn outer dimensions differ");
        let mut out = DenseMatrix::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let ski = self.data[k * self.cols + i];
                let rrow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, r) in orow.iter_mut().zip(rrow) {
                    *o += ski * r;
                }
            }
        }
        out
    }

    /// `self · rhsᵀ` for `(m×k) · (n×k)ᵀ`.
    pub fn matmul_nt(&self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, rhs.cols, "matmul_nt inner dimensions differ");
        let mut out = DenseMatrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let arow = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..rhs.rows {
                let brow = &rhs.data[j * rhs.cols..(j + 1) * rhs.cols];
                let mut acc = 0.0;
                for (a, b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                out.data[i * rhs.rows + j] = acc;
            }
        }
        out
    }
}

// ───────────────────────── activations ─────────────────────────

/// Hidden-layer activation. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Gaussian-error linear unit (tanh approximation). Smooth, so the
    /// finite-difference gradient checks are well conditioned.
    Gelu,
    Relu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                0.5 * x * (1.0 + libm::tanh(u))
            }
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let t = libm::tanh(u);
                let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

// ───────────────────────── MLP ─────────────────────────

/// One dense layer. Weights are `(in_dim × out_dim)` so the forward pass of a
/// row-major batch is a plain `x · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

/// Feed-forward network with a hidden activation tag and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    layers: Vec<Layer>,
}

/// Cached activations from [`Mlp::forward_cached`], consumed by
/// [`Mlp::backward`]. `pre[l]` holds the pre-activation of layer `l`,
/// `post[l]` its output after the activation (the last layer is linear, so
/// `post.last() == pre.last()`).
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: DenseMatrix,
    pre: Vec<DenseMatrix>,
    post: Vec<DenseMatrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &DenseMatrix {
        self.post.last().expect("network has at least one layer")
    }
}

/// Per-layer parameter gradients, shape-matching the model.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub layers: Vec<LayerGradients>,
}

#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl MlpGradients {
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Flat view matching [`Mlp::param`] indexing; used by the
    /// finite-difference oracles.
    pub fn param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            let w = l.weights.data().len();
            if idx < w {
                return l.weights.data()[idx];
            }
            idx -= w;
            if idx < l.bias.len() {
                return l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("gradient index out of range");
    }
}

impl Mlp {
    /// Fresh network with fan-in scaled uniform init: every weight and bias
    /// of a layer is drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NnError::InvalidWidths);
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            let mut weights = DenseMatrix::zeros(fan_in, fan_out);
            for v in weights.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
            let bias = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            layers.push(Layer { weights, bias });
        }
        Ok(Self {
            widths: widths.to_vec(),
            activation,
            layers,
        })
    }

    /// Rebuild a network from explicit layers (checkpoint restore).
    pub fn from_parts(
        activation: Activation,
        layers: Vec<Layer>,
    ) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::InvalidWidths);
        }
        let mut widths = vec![layers[0].weights.rows()];
        for layer in &layers {
            if layer.weights.rows() != *widths.last().expect("non-empty") {
                return Err(NnError::ShapeMismatch {
                    what: "layer input width",
                    expected: *widths.last().expect("non-empty"),
                    got: layer.weights.rows(),
                });
            }
            if layer.bias.len() != layer.weights.cols() {
                return Err(NnError::ShapeMismatch {
                    what: "bias width",
                    expected: layer.weights.cols(),
                    got: layer.bias.len(),
                });
            }
            widths.push(layer.weights.cols());
        }
        Ok(Self {
            widths,
            activation,
            layers,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    /// Read a parameter by flat index (layer 0 weights row-major, layer 0
    /// bias, layer 1 weights, ...).
    pub fn param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            let w = l.weights.data().len();
            if idx < w {
                return l.weights.data()[idx];
            }
            idx -= w;
            if idx < l.bias.len() {
                return l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Write a parameter by flat index; see [`Mlp::param`].
    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for l in &mut self.layers {
            let w = l.weights.data().len();
            if idx < w {
                l.weights.data_mut()[idx] = value;
                return;
            }
            idx -= w;
            if idx < l.bias.len() {
                l.bias[idx] = value;
                return;
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Forward pass on a `(batch × input_dim)` matrix.
    pub fn forward(&self, input: &DenseMatrix) -> Result<DenseMatrix, NnError> {
        let mut trace = self.forward_cached(input)?;
        Ok(trace.post.pop().expect("network has at least one layer"))
    }

    /// Forward pass that keeps per-layer activations for [`Mlp::backward`].
    pub fn forward_cached(&self, input: &DenseMatrix) -> Result<ForwardTrace, NnError> {
        if input.cols() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                what: "input width",
                expected: self.input_dim(),
                got: input.cols(),
            });
        }
        let n_layers = self.layers.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post = Vec::with_capacity(n_layers);
        let mut current = input;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = current.matmul(&layer.weights);
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let last = l + 1 == n_layers;
            let h = if last {
                z.clone()
            } else {
                let mut h = z.clone();
                for v in h.data_mut() {
                    *v = self.activation.apply(*v);
                }
                h
            };
            pre.push(z);
            post.push(h);
            current = post.last().expect("just pushed");
        }
        Ok(ForwardTrace {
            input: input.clone(),
            pre,
            post,
        })
    }

    /// Gradients of a scalar loss w.r.t. every parameter, given the upstream
    /// gradient `dL/d(output)`. The upstream gradient carries any batch
    /// averaging; this pass only sums contributions.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_output: &DenseMatrix,
    ) -> Result<MlpGradients, NnError> {
        let out = trace.output();
        if grad_output.rows() != out.rows() || grad_output.cols() != out.cols() {
            return Err(NnError::ShapeMismatch {
                what: "output gradient",
                expected: out.rows() * out.cols(),
                got: grad_output.rows() * grad_output.cols(),
            });
        }
        let n_layers = self.layers.len();
        let mut layer_grads: Vec<Option<LayerGradients>> = vec![None; n_layers];
        let mut d_out = grad_output.clone();
        for l in (0..n_layers).rev() {
            let last = l + 1 == n_layers;
            let mut dz = d_out;
            if !last {
                let pre = &trace.pre[l];
                for (g, z) in dz.data_mut().iter_mut().zip(pre.data()) {
                    *g *= self.activation.derivative(*z);
                }
            }
            let layer_input = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            let d_weights = layer_input.matmul_tn(&dz);
            let mut d_bias = vec![0.0; self.layers[l].bias.len()];
            for r in 0..dz.rows() {
                for (acc, g) in d_bias.iter_mut().zip(dz.row(r)) {
                    *acc += g;
                }
            }
            layer_grads[l] = Some(LayerGradients {
                weights: d_weights,
                bias: d_bias,
            });
            if l > 0 {
                d_out = dz.matmul_nt(&self.layers[l].weights);
            } else {
                d_out = dz; // unused; keeps the borrow checker simple
            }
        }
        Ok(MlpGradients {
            layers: layer_grads
                .into_iter()
                .map(|g| g.expect("every layer visited"))
                .collect(),
        })
    }
}

// ───────────────────────── losses ─────────────────────────

/// Mean squared error over every entry, plus its gradient w.r.t. `pred`:
/// `loss = Σ (p−t)² / n`, `grad = 2 (p−t) / n` with `n = rows · cols`.
pub fn mse_loss(pred: &DenseMatrix, target: &DenseMatrix) -> Result<(f64, DenseMatrix), NnError> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(NnError::ShapeMismatch {
            what: "mse operands",
            expected: target.rows() * target.cols(),
            got: pred.rows() * pred.cols(),
        });
    }
    let n = (pred.rows() * pred.cols()) as f64;
    let mut grad = DenseMatrix::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

// ───────────────────────── Adam ─────────────────────────

/// Adam state: per-parameter first/second moment accumulators plus the
/// hyperparameters. Moments shape-match the model they were built for.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: Vec<LayerMoments>,
}

#[derive(Debug, Clone)]
struct LayerMoments {
    m_weights: DenseMatrix,
    v_weights: DenseMatrix,
    m_bias: Vec<f64>,
    v_bias: Vec<f64>,
}

impl AdamState {
    pub fn new(model: &Mlp, learning_rate: f64) -> Self {
        let moments = model
            .layers()
            .iter()
            .map(|l| LayerMoments {
                m_weights: DenseMatrix::zeros(l.weights.rows(), l.weights.cols()),
                v_weights: DenseMatrix::zeros(l.weights.rows(), l.weights.cols()),
                m_bias: vec![0.0; l.bias.len()],
                v_bias: vec![0.0; l.bias.len()],
            })
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update, in place. Rejects non-finite
    /// gradients so a diverged run aborts with a diagnostic instead of
    /// poisoning the parameters.
    pub fn step(&mut self, model: &mut Mlp, grads: &MlpGradients) -> Result<(), NnError> {
        if grads.layers.len() != model.layers.len() {
            return Err(NnError::ShapeMismatch {
                what: "gradient layer count",
                expected: model.layers.len(),
                got: grads.layers.len(),
            });
        }
        if !grads.is_finite() {
            return Err(NnError::NonFiniteGradient { step: self.step + 1 });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for ((layer, moments), grad) in model
            .layers
            .iter_mut()
            .zip(&mut self.moments)
            .zip(&grads.layers)
        {
            update_params(
                layer.weights.data_mut(),
                moments.m_weights.data_mut(),
                moments.v_weights.data_mut(),
                grad.weights.data(),
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
            update_params(
                &mut layer.bias,
                &mut moments.m_bias,
                &mut moments.v_bias,
                &grad.bias,
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update_params(
    params: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    assert_eq!(params.len(), g.len(), "gradient shape mismatch");
    for i in 0..params.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn identity_layer_is_identity() {
        let layer = Layer {
            weights: DenseMatrix::identity(3),
            bias: vec![0.0; 3],
        };
        let mlp = Mlp::from_parts(Activation::Gelu, vec![layer]).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.5, -1.25, 3.0]]);
        let y = mlp.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_yield_bias() {
        let layer = Layer {
            weights: DenseMatrix::zeros(2, 2),
            bias: vec![1.5, -0.5],
        };
        let mlp = Mlp::from_parts(Activation::Gelu, vec![layer]).unwrap();
        let x = DenseMatrix::from_rows(&[vec![9.0, -3.0], vec![0.0, 7.0]]);
        let y = mlp.forward(&x).unwrap();
        for r in 0..2 {
            assert_eq!(y.row(r), &[1.5, -0.5]);
        }
    }

    #[test]
    fn batch_order_is_preserved() {
        let mut rng = substream(7, "nn-test", 0);
        let mlp = Mlp::new(&[3, 5, 2], Activation::Gelu, &mut rng).unwrap();
        let rows = [
            vec![0.1, 0.2, 0.3],
            vec![-1.0, 0.5, 2.0],
            vec![0.0, 0.0, 1.0],
        ];
        let batch = DenseMatrix::from_rows(&rows);
        let y = mlp.forward(&batch).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let single = mlp.forward(&DenseMatrix::from_rows(core::slice::from_ref(row))).unwrap();
            assert_eq!(y.row(i), single.row(0));
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = substream(7, "nn-test", 1);
        let mlp = Mlp::new(&[3, 2], Activation::Gelu, &mut rng).unwrap();
        let x = DenseMatrix::zeros(1, 4);
        assert!(matches!(
            mlp.forward(&x),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn mse_examples() {
        let (loss, grad) = mse_loss(
            &DenseMatrix::from_rows(&[vec![2.0]]),
            &DenseMatrix::from_rows(&[vec![0.0]]),
        )
        .unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(grad.data(), &[4.0]);

        let p = DenseMatrix::from_rows(&[vec![1.0, 2.0]]);
        let (zero_loss, zero_grad) = mse_loss(&p, &p).unwrap();
        assert_eq!(zero_loss, 0.0);
        assert!(zero_grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_scales_quadratically() {
        let p = DenseMatrix::from_rows(&[vec![1.0, -2.0, 0.5]]);
        let t = DenseMatrix::zeros(1, 3);
        let (l1, _) = mse_loss(&p, &t).unwrap();
        let scaled = DenseMatrix::from_rows(&[vec![3.0, -6.0, 1.5]]);
        let (l3, _) = mse_loss(&scaled, &t).unwrap();
        assert!((l3 - 9.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn zero_output_gradient_gives_zero_param_gradients() {
        let mut rng = substream(7, "nn-test", 2);
        let mlp = Mlp::new(&[2, 4, 3], Activation::Gelu, &mut rng).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.3, -0.8]]);
        let trace = mlp.forward_cached(&x).unwrap();
        let grads = mlp.backward(&trace, &DenseMatrix::zeros(1, 3)).unwrap();
        for l in &grads.layers {
            assert!(l.weights.data().iter().all(|&g| g == 0.0));
            assert!(l.bias.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn duplicated_row_doubles_its_gradient() {
        let mut rng = substream(7, "nn-test", 3);
        let mlp = Mlp::new(&[2, 4, 1], Activation::Gelu, &mut rng).unwrap();
        let row = vec![0.4, -0.6];
        let single = DenseMatrix::from_rows(core::slice::from_ref(&row));
        let double = DenseMatrix::from_rows(&[row.clone(), row]);

        let t1 = mlp.forward_cached(&single).unwrap();
        let g1 = mlp.backward(&t1, &DenseMatrix::from_rows(&[vec![1.0]])).unwrap();
        let t2 = mlp.forward_cached(&double).unwrap();
        let g2 = mlp
            .backward(&t2, &DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]))
            .unwrap();

        for (a, b) in g1.layers.iter().zip(&g2.layers) {
            for (x, y) in a.weights.data().iter().zip(b.weights.data()) {
                assert!((2.0 * x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        // Scalar parameter, one linear layer, gradient pushed through by hand.
        let layer = Layer {
            weights: DenseMatrix::from_vec(1, 1, vec![0.7]),
            bias: vec![0.0],
        };
        let mut mlp = Mlp::from_parts(Activation::Gelu, vec![layer]).unwrap();
        let mut opt = AdamState::new(&mlp, 1e-3);
        let grads = MlpGradients {
            layers: vec![LayerGradients {
                weights: DenseMatrix::from_vec(1, 1, vec![0.3]),
                bias: vec![0.0],
            }],
        };
        let before = mlp.param(0);
        opt.step(&mut mlp, &grads).unwrap();
        let delta1 = (mlp.param(0) - before).abs();
        // bias-corrected ratio is |g|/sqrt(g²) = 1, so the update is ~lr
        assert!((delta1 - 1e-3).abs() < 1e-6, "delta1 = {delta1}");
        assert_eq!(opt.step_count(), 1);

        // A second identical step must not grow the update.
        let mid = mlp.param(0);
        opt.step(&mut mlp, &grads).unwrap();
        let delta2 = (mlp.param(0) - mid).abs();
        assert!(delta2 <= delta1 + 1e-12, "delta2 = {delta2} > {delta1}");
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut rng = substream(7, "nn-test", 4);
        let mut mlp = Mlp::new(&[2, 3, 1], Activation::Gelu, &mut rng).unwrap();
        let reference = mlp.clone();
        let mut opt = AdamState::new(&mlp, 1e-2);
        let grads = MlpGradients {
            layers: mlp
                .layers()
                .iter()
                .map(|l| LayerGradients {
                    weights: DenseMatrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        };
        for _ in 0..5 {
            opt.step(&mut mlp, &grads).unwrap();
        }
        assert_eq!(mlp, reference);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let layer = Layer {
            weights: DenseMatrix::from_vec(1, 1, vec![0.0]),
            bias: vec![0.0],
        };
        let mut mlp = Mlp::from_parts(Activation::Gelu, vec![layer]).unwrap();
        let mut opt = AdamState::new(&mlp, 1e-3);
        let grads = MlpGradients {
            layers: vec![LayerGradients {
                weights: DenseMatrix::from_vec(1, 1, vec![f64::NAN]),
                bias: vec![0.0],
            }],
        };
        assert!(matches!(
            opt.step(&mut mlp, &grads),
            Err(NnError::NonFiniteGradient { .. })
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        // The exhaustive 100-seed check lives in the integration suite; this
        // is a smoke test on one random 2-hidden-layer net.
        let mut rng = substream(11, "nn-test", 5);
        let mut mlp = Mlp::new(&[3, 4, 4, 2], Activation::Gelu, &mut rng).unwrap();
        let x = DenseMatrix::from_rows(&[
            vec![0.2, -0.4, 0.9],
            vec![-1.1, 0.3, 0.05],
        ]);
        let t = DenseMatrix::from_rows(&[vec![0.1, -0.2], vec![0.7, 0.4]]);

        let trace = mlp.forward_cached(&x).unwrap();
        let (_, dl) = mse_loss(trace.output(), &t).unwrap();
        let grads = mlp.backward(&trace, &dl).unwrap();

        let h = 1e-5;
        for idx in 0..mlp.param_count() {
            let orig = mlp.param(idx);
            mlp.set_param(idx, orig + h);
            let y_plus = mlp.forward(&x).unwrap();
            let (lp, _) = mse_loss(&y_plus, &t).unwrap();
            mlp.set_param(idx, orig - h);
            let y_minus = mlp.forward(&x).unwrap();
            let (lm, _) = mse_loss(&y_minus, &t).unwrap();
            mlp.set_param(idx, orig);
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads.param(idx);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / denom < 1e-4,
                "param {idx}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

}
