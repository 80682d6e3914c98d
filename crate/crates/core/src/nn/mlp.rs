use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

static VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Name and shape of one parameter tensor inside the flat vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerOffsets {
    w: usize,
    b: usize,
    /// Layer-norm gain and offset (hidden layers only).
    ln: Option<(usize, usize)>,
    fan_in: usize,
    fan_out: usize,
}

/// Multilayer perceptron: `[Linear → LayerNorm → act] × hidden, Linear`.
#[derive(Clone, Debug)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    layer_norm: bool,
    layers: Vec<LayerOffsets>,
    params: Vec<f64>,
    version: u64,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    version: u64,
    /// Input to every linear layer.
    inputs: Vec<Array2<f64>>,
    /// Normalized pre-activations of hidden layers.
    xhat: Vec<Array2<f64>>,
    /// Per-row inverse standard deviations of hidden layers.
    inv_std: Vec<Array1<f64>>,
}

impl Mlp {
    /// Zero-initialized network. `sizes = [input, hidden..., output]`.
    pub fn zeros(sizes: &[usize], activation: Activation, layer_norm: bool) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let mut layers = Vec::new();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let w = off;
            off += fan_in * fan_out;
            let b = off;
            off += fan_out;
            let hidden = l + 2 < sizes.len();
            let ln = if hidden && layer_norm {
                let g = off;
                off += fan_out;
                let o = off;
                off += fan_out;
                Some((g, o))
            } else {
                None
            };
            layers.push(LayerOffsets { w, b, ln, fan_in, fan_out });
        }
        let mut params = vec![0.0; off];
        for layer in &layers {
            if let Some((g, _)) = layer.ln {
                params[g..g + layer.fan_out].fill(1.0);
            }
        }
        Self { sizes: sizes.to_vec(), activation, layer_norm, layers, params, version: fresh_version() }
    }

    /// Network with scaled-normal weights (`std = gain / sqrt(fan_in)`), zero biases and
    /// an output layer shrunk by `out_scale`.
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        layer_norm: bool,
        out_scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(sizes, activation, layer_norm);
        let gain = match activation {
            Activation::Relu => 2f64.sqrt(),
            Activation::Tanh => 1.0,
        };
        let n_layers = net.layers.len();
        for (l, layer) in net.layers.clone().iter().enumerate() {
            let mut std = gain / (layer.fan_in as f64).sqrt();
            if l + 1 == n_layers {
                std *= out_scale;
            }
            for w in &mut net.params[layer.w..layer.w + layer.fan_in * layer.fan_out] {
                *w = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layer_norm(&self) -> bool {
        self.layer_norm
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to the flat parameters; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version = fresh_version();
        &mut self.params
    }

    /// Replaces all parameters; invalidates outstanding tapes.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params_mut().copy_from_slice(params);
        Ok(())
    }

    /// Tensor names and shapes in flat-vector order.
    pub fn tensor_layout(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push(TensorInfo {
                name: format!("l{l}.weight"),
                shape: vec![layer.fan_in, layer.fan_out],
                offset: layer.w,
            });
            out.push(TensorInfo { name: format!("l{l}.bias"), shape: vec![layer.fan_out], offset: layer.b });
            if let Some((g, o)) = layer.ln {
                out.push(TensorInfo { name: format!("l{l}.ln_gain"), shape: vec![layer.fan_out], offset: g });
                out.push(TensorInfo { name: format!("l{l}.ln_offset"), shape: vec![layer.fan_out], offset: o });
            }
        }
        out
    }

    fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let layer = &self.layers[l];
        ArrayView2::from_shape(
            (layer.fan_in, layer.fan_out),
            &self.params[layer.w..layer.w + layer.fan_in * layer.fan_out],
        )
        .expect("layout")
    }

    fn vector(&self, off: usize, len: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[off..off + len])
    }

    /// Batched forward pass (`rows = batch`), returning outputs and the tape.
    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Tape)> {
        self.run(input, true).map(|(y, t)| (y, t.expect("tape requested")))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.run(input, false).map(|(y, _)| y)
    }

    /// Single-sample convenience wrapper around [`Mlp::predict`].
    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.predict(x)?.into_raw_vec_and_offset().0)
    }

    fn run(&self, input: ArrayView2<'_, f64>, record: bool) -> Result<(Array2<f64>, Option<Tape>)> {
        if input.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.ncols()
            )));
        }
        let mut tape = Tape { version: self.version, inputs: Vec::new(), xhat: Vec::new(), inv_std: Vec::new() };
        let mut x = input.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut h = x.dot(&self.weight(l));
            h += &self.vector(layer.b, layer.fan_out);
            if record {
                tape.inputs.push(x);
            }
            if l == last {
                return Ok((h, record.then_some(tape)));
            }
            if let Some((g, o)) = layer.ln {
                let inv = normalize_rows(&mut h);
                if record {
                    tape.xhat.push(h.clone());
                    tape.inv_std.push(inv);
                }
                h *= &self.vector(g, layer.fan_out);
                h += &self.vector(o, layer.fan_out);
            }
            let act = self.activation;
            h.mapv_inplace(|v| act.apply(v));
            x = h;
        }
        unreachable!("loop returns at the output layer")
    }

    /// Backpropagates `grad_out` (`batch × output`) through a tape of this network.
    ///
    /// Returns the flat parameter gradient (when `want_params`) and the gradient with
    /// respect to the input batch.
    pub fn backward(
        &self,
        tape: &Tape,
        grad_out: ArrayView2<'_, f64>,
        want_params: bool,
    ) -> Result<(Option<Vec<f64>>, Array2<f64>)> {
        if tape.version != self.version || tape.inputs.len() != self.layers.len() {
            return Err(Error::StaleTape("parameters changed since the forward pass".into()));
        }
        let batch = tape.inputs[0].nrows();
        if grad_out.nrows() != batch || grad_out.ncols() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient must be {}x{}, got {}x{}",
                batch,
                self.output_dim(),
                grad_out.nrows(),
                grad_out.ncols()
            )));
        }
        let mut grads = want_params.then(|| vec![0.0; self.params.len()]);
        let mut delta = grad_out.to_owned();
        let last = self.layers.len() - 1;
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            if l != last {
                // delta is dL/d(activation output); the activation output is next layer's input
                let act = self.activation;
                let y = &tape.inputs[l + 1];
                ndarray::Zip::from(&mut delta).and(y).for_each(|d, &yv| *d *= act.grad_from_output(yv));
                if let Some((g, o)) = layer.ln {
                    let xhat = &tape.xhat[l];
                    if let Some(gr) = grads.as_mut() {
                        let dgain = (&delta * xhat).sum_axis(Axis(0));
                        let doff = delta.sum_axis(Axis(0));
                        add_into(&mut gr[g..g + layer.fan_out], dgain.iter());
                        add_into(&mut gr[o..o + layer.fan_out], doff.iter());
                    }
                    delta *= &self.vector(g, layer.fan_out);
                    layer_norm_backward(&mut delta, xhat, &tape.inv_std[l]);
                }
            }
            let x = &tape.inputs[l];
            if let Some(gr) = grads.as_mut() {
                let dw = x.t().dot(&delta);
                let db = delta.sum_axis(Axis(0));
                add_into(&mut gr[layer.w..layer.w + layer.fan_in * layer.fan_out], dw.iter());
                add_into(&mut gr[layer.b..layer.b + layer.fan_out], db.iter());
            }
            delta = delta.dot(&self.weight(l).t());
        }
        Ok((grads, delta))
    }
}

fn add_into<'a>(dst: &mut [f64], src: impl Iterator<Item = &'a f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Normalizes each row to zero mean and unit variance in place; returns `1/σ` per row.
fn normalize_rows(h: &mut Array2<f64>) -> Array1<f64> {
    let width = h.ncols() as f64;
    let mut inv = Array1::zeros(h.nrows());
    for (mut row, inv_r) in h.rows_mut().into_iter().zip(inv.iter_mut()) {
        let mean = row.sum() / width;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width;
        let i = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * i);
        *inv_r = i;
    }
    inv
}

/// Converts `dL/dx̂` into `dL/dh` for row-wise layer normalization, in place.
fn layer_norm_backward(dxhat: &mut Array2<f64>, xhat: &Array2<f64>, inv_std: &Array1<f64>) {
    let width = dxhat.ncols() as f64;
    for ((mut d, xh), &inv) in dxhat.rows_mut().into_iter().zip(xhat.rows()).zip(inv_std.iter()) {
        let sum_d = d.sum();
        let sum_dx = d.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
        for (dv, &xv) in d.iter_mut().zip(xh.iter()) {
            *dv = inv * (*dv - sum_d / width - xv * sum_dx / width);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 8, 8, 2], Activation::Relu, true);
        let y = net.predict(array![[1.0, -2.0, 3.0]].view()).unwrap();
        assert_eq!(y, Array2::<f64>::zeros((1, 2)));
    }

    #[test]
    fn single_linear_identity() {
        let mut net = Mlp::zeros(&[3, 3], Activation::Relu, false);
        let mut p = vec![0.0; net.num_params()];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        net.set_params(&p).unwrap();
        let x = array![[0.5, -1.5, 2.0]];
        assert_eq!(net.predict(x.view()).unwrap(), x);
    }

    #[test]
    fn linear_weight_gradient_is_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::init(&[4, 3], Activation::Relu, false, 1.0, &mut rng);
        let x = array![[1.0, 2.0, 3.0, 4.0]];
        let (_, tape) = net.forward(x.view()).unwrap();
        let (g, _) = net.backward(&tape, array![[1.0, 0.0, 0.0]].view(), true).unwrap();
        let g = g.unwrap();
        // weight layout is (in, out) row-major: column 0 holds d out0 / d w[i][0] = x_i
        let col0: Vec<f64> = (0..4).map(|i| g[i * 3]).collect();
        assert_eq!(col0, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::init(&[3, 16, 16, 2], Activation::Relu, true, 1.0, &mut rng);
        let x = random_batch(&mut rng, 5, 3);
        let (_, tape) = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&tape, Array2::zeros((5, 2)).view(), true).unwrap();
        assert!(g.unwrap().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Mlp::init(&[2, 4, 1], Activation::Tanh, true, 1.0, &mut rng);
        let (_, tape) = net.forward(array![[0.1, 0.2]].view()).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(net.backward(&tape, array![[1.0]].view(), true), Err(Error::StaleTape(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = Mlp::zeros(&[3, 2], Activation::Relu, false);
        assert!(matches!(net.predict(array![[1.0, 2.0]].view()), Err(Error::ShapeMismatch(_))));
    }

    /// Central finite differences of `Σ c ⊙ f(x)` for the parameters and the inputs.
    fn check_gradients(seed: u64, act: Activation, ln: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [3, 6, 5, 2];
        let mut net = Mlp::init(&sizes, act, ln, 1.0, &mut rng);
        // random biases so ReLU kinks are not hit at exactly zero
        for v in net.params_mut().iter_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        let x = random_batch(&mut rng, 4, 3);
        let c = random_batch(&mut rng, 4, 2);
        let loss = |n: &Mlp, x: &Array2<f64>| (n.predict(x.view()).unwrap() * &c).sum();
        let (_, tape) = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&tape, c.view(), true).unwrap();
        let g = g.unwrap();
        let h = 1e-5;
        let base = net.params().to_vec();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            net.set_params(&p).unwrap();
            let up = loss(&net, &x);
            p[i] -= 2.0 * h;
            net.set_params(&p).unwrap();
            let down = loss(&net, &x);
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g[i]).abs() / (fd.abs() + g[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: fd {fd} vs analytic {}", g[i]);
        }
        net.set_params(&base).unwrap();
        for r in 0..4 {
            for col in 0..3 {
                let mut xp = x.clone();
                xp[[r, col]] += h;
                let up = loss(&net, &xp);
                xp[[r, col]] -= 2.0 * h;
                let down = loss(&net, &xp);
                let fd = (up - down) / (2.0 * h);
                let a = dx[[r, col]];
                assert!((fd - a).abs() / (fd.abs() + a.abs()).max(1e-6) < 1e-4);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            check_gradients(seed, Activation::Tanh, true);
            check_gradients(seed + 100, Activation::Relu, true);
            check_gradients(seed + 200, Activation::Tanh, false);
        }
    }

    #[test]
    fn layout_covers_all_parameters() {
        let net = Mlp::zeros(&[4, 8, 8, 3], Activation::Relu, true);
        let total: usize = net.tensor_layout().iter().map(TensorInfo::len).sum();
        assert_eq!(total, net.num_params());
        assert_eq!(net.tensor_layout().len(), 3 * 2 + 2 * 2);
    }
}
