//! Fully connected networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat vector. Each layer owns a weight block (`out × in`,
//! row-major), a bias block and, for hidden layers with LayerNorm enabled, a gain
//! and a shift block. Hidden layers compute `relu(layer_norm(W x + b))`; the output
//! layer is linear.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::orthogonal;
use super::Matrix;
use crate::error::{ensure_finite, Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub layer_norm: bool,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize, layer_norm: bool) -> Self {
        Self {
            input_dim,
            hidden_widths,
            output_dim,
            activation: Activation::Relu,
            layer_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument("MLP input/output dims must be >= 1".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "MLP needs at least one hidden layer and all widths >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn num_params(&self) -> usize {
        let mut fan_in = self.input_dim;
        let mut n = 0;
        for &w in &self.hidden_widths {
            n += fan_in * w + w;
            if self.layer_norm {
                n += 2 * w;
            }
            fan_in = w;
        }
        n + fan_in * self.output_dim + self.output_dim
    }

    pub fn feature_dim(&self) -> usize {
        *self.hidden_widths.last().expect("validated spec has hidden layers")
    }

    pub fn num_hidden_units(&self) -> usize {
        self.hidden_widths.iter().sum()
    }
}

/// Offsets of one layer's blocks inside `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerView {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
    pub ln_gain: Option<Range<usize>>,
    pub ln_shift: Option<Range<usize>>,
}

fn build_views(spec: &MlpSpec) -> Vec<LayerView> {
    let mut views = Vec::with_capacity(spec.hidden_widths.len() + 1);
    let mut off = 0;
    let mut fan_in = spec.input_dim;
    let take = |n: usize, off: &mut usize| {
        let r = *off..*off + n;
        *off += n;
        r
    };
    for &w in &spec.hidden_widths {
        let weight = take(fan_in * w, &mut off);
        let bias = take(w, &mut off);
        let (ln_gain, ln_shift) = if spec.layer_norm {
            (Some(take(w, &mut off)), Some(take(w, &mut off)))
        } else {
            (None, None)
        };
        views.push(LayerView {
            in_dim: fan_in,
            out_dim: w,
            weight,
            bias,
            ln_gain,
            ln_shift,
        });
        fan_in = w;
    }
    let weight = take(fan_in * spec.output_dim, &mut off);
    let bias = take(spec.output_dim, &mut off);
    views.push(LayerView {
        in_dim: fan_in,
        out_dim: spec.output_dim,
        weight,
        bias,
        ln_gain: None,
        ln_shift: None,
    });
    views
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    spec: MlpSpec,
    pub theta: Vec<f64>,
    layers: Vec<LayerView>,
}

/// Activations recorded by [`NetworkParams::forward`] for one hidden layer.
#[derive(Debug, Clone)]
pub struct HiddenRecord {
    /// Input to the nonlinearity (after LayerNorm when enabled).
    pub pre: Matrix,
    /// Output of the nonlinearity.
    pub post: Matrix,
    normalized: Option<Matrix>,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Tape {
    input: Matrix,
    hidden: Vec<HiddenRecord>,
    output: Matrix,
    theta_len: usize,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn hidden(&self) -> &[HiddenRecord] {
        &self.hidden
    }

    /// Post-activation values of the last hidden layer.
    pub fn features(&self) -> &Matrix {
        &self.hidden.last().expect("at least one hidden layer").post
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

impl NetworkParams {
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = build_views(&spec);
        let mut theta = vec![0.0; spec.num_params()];
        for l in &layers {
            if let Some(g) = &l.ln_gain {
                theta[g.clone()].fill(1.0);
            }
        }
        Ok(Self { spec, theta, layers })
    }

    pub fn from_theta(spec: MlpSpec, theta: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if theta.len() != spec.num_params() {
            return Err(Error::dim("NetworkParams::from_theta", spec.num_params(), theta.len()));
        }
        let layers = build_views(&spec);
        Ok(Self { spec, theta, layers })
    }

    /// Orthogonal init: gain `hidden_gain` on hidden layers, and one gain per block of
    /// output rows given by `output_blocks` as `(rows, gain)` pairs. Biases start at
    /// zero, LayerNorm gains at one.
    pub fn orthogonal<R: Rng + ?Sized>(
        spec: MlpSpec,
        hidden_gain: f64,
        output_blocks: &[(usize, f64)],
        rng: &mut R,
    ) -> Result<Self> {
        let block_rows: usize = output_blocks.iter().map(|b| b.0).sum();
        if block_rows != spec.output_dim {
            return Err(Error::dim("output gain blocks", spec.output_dim, block_rows));
        }
        let mut net = Self::zeros(spec)?;
        let n_layers = net.layers.len();
        for li in 0..n_layers {
            let view = net.layers[li].clone();
            let w = &mut net.theta[view.weight.clone()];
            if li + 1 < n_layers {
                w.copy_from_slice(&orthogonal(view.out_dim, view.in_dim, hidden_gain, rng));
            } else {
                let mut row = 0;
                for &(rows, gain) in output_blocks {
                    let block = orthogonal(rows, view.in_dim, gain, rng);
                    w[row * view.in_dim..(row + rows) * view.in_dim].copy_from_slice(&block);
                    row += rows;
                }
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerView] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn forward(&self, input: &Matrix) -> Result<Tape> {
        if input.cols() != self.spec.input_dim {
            return Err(Error::dim("forward input cols", self.spec.input_dim, input.cols()));
        }
        let n = input.rows();
        let mut hidden: Vec<HiddenRecord> = Vec::with_capacity(self.spec.hidden_widths.len());
        let last = self.layers.len() - 1;
        let mut output = None;
        for (li, view) in self.layers.iter().enumerate() {
            let x: &Matrix = if li == 0 { input } else { &hidden[li - 1].post };
            let z = linear(&self.theta, view, x);
            if li == last {
                output = Some(z);
                break;
            }
            let (pre, normalized, inv_std) = match (&view.ln_gain, &view.ln_shift) {
                (Some(g), Some(s)) => {
                    let (xhat, inv_std) = layer_norm(&z);
                    let gain = &self.theta[g.clone()];
                    let shift = &self.theta[s.clone()];
                    let mut pre = xhat.clone();
                    for r in 0..n {
                        for ((v, &gv), &sv) in pre.row_mut(r).iter_mut().zip(gain).zip(shift) {
                            *v = *v * gv + sv;
                        }
                    }
                    (pre, Some(xhat), inv_std)
                }
                _ => (z, None, Vec::new()),
            };
            let mut post = pre.clone();
            match self.spec.activation {
                Activation::Relu => post.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
            }
            hidden.push(HiddenRecord {
                pre,
                post,
                normalized,
                inv_std,
            });
        }
        let output = output.expect("output layer");
        if !output.is_finite() {
            return Err(Error::NonFinite("network output"));
        }
        Ok(Tape {
            input: input.clone(),
            hidden,
            output,
            theta_len: self.theta.len(),
        })
    }

    /// Gradient of a scalar loss with respect to `theta`, given `∂loss/∂output`.
    pub fn backward(&self, tape: &Tape, output_grad: &Matrix) -> Result<Vec<f64>> {
        if tape.theta_len != self.theta.len() || tape.hidden.len() + 1 != self.layers.len() {
            return Err(Error::dim("backward tape", self.theta.len(), tape.theta_len));
        }
        if output_grad.rows() != tape.output.rows() || output_grad.cols() != tape.output.cols() {
            return Err(Error::dim(
                "backward output_grad",
                tape.output.rows() * tape.output.cols(),
                output_grad.rows() * output_grad.cols(),
            ));
        }
        let n = tape.input.rows();
        let mut grad = vec![0.0; self.theta.len()];
        let mut delta = output_grad.clone();
        for li in (0..self.layers.len()).rev() {
            let view = &self.layers[li];
            if li < self.layers.len() - 1 {
                // delta currently holds d/d(post); push it back through relu and LayerNorm.
                let rec = &tape.hidden[li];
                for (d, &p) in delta.data_mut().iter_mut().zip(rec.pre.data()) {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                }
                if let (Some(g), Some(s), Some(xhat)) = (&view.ln_gain, &view.ln_shift, &rec.normalized) {
                    let gain = &self.theta[g.clone()];
                    let w = view.out_dim as f64;
                    let (gg, gs) = {
                        let (head, tail) = grad.split_at_mut(s.start);
                        (&mut head[g.clone()], &mut tail[..s.len()])
                    };
                    for r in 0..n {
                        let dy = delta.row_mut(r);
                        let xh = xhat.row(r);
                        let mut sum_dx = 0.0;
                        let mut sum_dx_x = 0.0;
                        for k in 0..dy.len() {
                            gg[k] += dy[k] * xh[k];
                            gs[k] += dy[k];
                            let dxh = dy[k] * gain[k];
                            sum_dx += dxh;
                            sum_dx_x += dxh * xh[k];
                            dy[k] = dxh;
                        }
                        let inv = rec.inv_std[r];
                        for k in 0..dy.len() {
                            dy[k] = inv / w * (w * dy[k] - sum_dx - xh[k] * sum_dx_x);
                        }
                    }
                }
            }
            let x = if li == 0 { &tape.input } else { &tape.hidden[li - 1].post };
            let weights = &self.theta[view.weight.clone()];
            {
                let (gw, gb) = {
                    let (head, tail) = grad.split_at_mut(view.bias.start);
                    (&mut head[view.weight.clone()], &mut tail[..view.out_dim])
                };
                for r in 0..n {
                    let d = delta.row(r);
                    let xr = x.row(r);
                    for (o, &dv) in d.iter().enumerate() {
                        if dv == 0.0 {
                            continue;
                        }
                        gb[o] += dv;
                        for (gwv, &xv) in gw[o * view.in_dim..(o + 1) * view.in_dim].iter_mut().zip(xr) {
                            *gwv += dv * xv;
                        }
                    }
                }
            }
            if li > 0 {
                let mut next = Matrix::zeros(n, view.in_dim);
                for r in 0..n {
                    let d = delta.row(r);
                    let out = next.row_mut(r);
                    for (o, &dv) in d.iter().enumerate() {
                        if dv == 0.0 {
                            continue;
                        }
                        for (ov, &wv) in out.iter_mut().zip(&weights[o * view.in_dim..(o + 1) * view.in_dim]) {
                            *ov += dv * wv;
                        }
                    }
                }
                delta = next;
            }
        }
        ensure_finite(&grad, "backward gradient")?;
        Ok(grad)
    }
}

fn linear(theta: &[f64], view: &LayerView, x: &Matrix) -> Matrix {
    let w = &theta[view.weight.clone()];
    let b = &theta[view.bias.clone()];
    let mut z = Matrix::zeros(x.rows(), view.out_dim);
    for r in 0..x.rows() {
        let xr = x.row(r);
        for (o, zv) in z.row_mut(r).iter_mut().enumerate() {
            let wr = &w[o * view.in_dim..(o + 1) * view.in_dim];
            *zv = b[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    z
}

/// Row-wise normalization to zero mean and (regularized) unit variance.
fn layer_norm(z: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = z.clone();
    let mut inv_stds = Vec::with_capacity(z.rows());
    let w = z.cols() as f64;
    for r in 0..z.rows() {
        let row = out.row_mut(r);
        let rough = row.iter().sum::<f64>() / w;
        // one correction pass: exact for constant rows
        let mean = rough + row.iter().map(|v| v - rough).sum::<f64>() / w;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        inv_stds.push(inv);
    }
    (out, inv_stds)
}
