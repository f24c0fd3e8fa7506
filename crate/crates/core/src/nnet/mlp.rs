use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::{gemm, View};
use crate::error::{check_len, Error, Result};
use crate::math::elu;

/// Fully connected network: ELU between layers, affine output.
///
/// Parameters live in one flat buffer; layer `l` occupies its weight matrix
/// (`out × in`, row-major) followed by its bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpCheckpoint", into = "MlpCheckpoint")]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Serialized form of an [`Mlp`]: one row-major weight matrix and one bias
/// vector per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Activations recorded by [`Mlp::forward_tape`]: `acts[0]` is the input and
/// `acts[l]` the output of layer `l - 1` (after ELU for hidden layers).
#[derive(Debug, Clone)]
pub struct Tape {
    rows: usize,
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape has at least the input")
    }
}

fn layout(layer_sizes: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(layer_sizes.len().saturating_sub(1));
    let mut total = 0;
    for w in layer_sizes.windows(2) {
        offsets.push(total);
        total += w[0] * w[1] + w[1];
    }
    (offsets, total)
}

impl Mlp {
    /// All-zero parameters.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid(
                "an Mlp needs at least two positive layer sizes",
            ));
        }
        let (offsets, total) = layout(layer_sizes);
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            params: vec![0.0; total],
            offsets,
        })
    }

    /// He-style uniform fan-in initialization, `U(±√(6/fan_in))`, zero biases.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        for l in 0..net.n_layers() {
            let bound = libm::sqrt(6.0 / net.layer_sizes[l] as f64);
            for w in net.weight_mut(l) {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    /// Input width, hidden widths and output width in one call.
    pub fn with_hidden<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(&sizes, rng)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn dims(&self, l: usize) -> (usize, usize) {
        (self.layer_sizes[l], self.layer_sizes[l + 1])
    }

    pub fn weight(&self, l: usize) -> &[f64] {
        let (i, o) = self.dims(l);
        &self.params[self.offsets[l]..self.offsets[l] + o * i]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let (i, o) = self.dims(l);
        let s = self.offsets[l];
        &mut self.params[s..s + o * i]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (i, o) = self.dims(l);
        let s = self.offsets[l] + o * i;
        &self.params[s..s + o]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (i, o) = self.dims(l);
        let s = self.offsets[l] + o * i;
        &mut self.params[s..s + o]
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Single-row evaluation.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(input, 1)
    }

    /// Row-major batch evaluation; `input` is `rows × input_dim`.
    pub fn forward_batch(&self, input: &[f64], rows: usize) -> Result<Vec<f64>> {
        check_len("network input", rows * self.input_dim(), input.len())?;
        let mut cur = input.to_vec();
        for l in 0..self.n_layers() {
            cur = self.layer(l, &cur, rows);
        }
        Ok(cur)
    }

    /// Forward pass that keeps every activation for [`Mlp::backward`].
    pub fn forward_tape(&self, input: Vec<f64>, rows: usize) -> Result<Tape> {
        check_len("network input", rows * self.input_dim(), input.len())?;
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(input);
        for l in 0..self.n_layers() {
            let next = self.layer(l, acts.last().unwrap(), rows);
            acts.push(next);
        }
        Ok(Tape { rows, acts })
    }

    fn layer(&self, l: usize, input: &[f64], rows: usize) -> Vec<f64> {
        let (i, o) = self.dims(l);
        let bias = self.bias(l);
        let mut out = Vec::with_capacity(rows * o);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        gemm(
            1.0,
            View::row_major(input, rows, i),
            View::row_major(self.weight(l), o, i).t(),
            1.0,
            &mut out,
        );
        if l + 1 < self.n_layers() {
            for v in out.iter_mut() {
                *v = elu(*v);
            }
        }
        out
    }

    /// Reverse pass. Adds `∂loss/∂θ` into `grads` (same layout as
    /// [`Mlp::params`]) given `d_out = ∂loss/∂output`, and returns
    /// `∂loss/∂input` when `want_input` is set.
    pub fn backward(
        &self,
        tape: &Tape,
        d_out: &[f64],
        grads: &mut [f64],
        want_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        let rows = tape.rows;
        check_len("output gradient", rows * self.output_dim(), d_out.len())?;
        check_len("parameter gradient", self.n_params(), grads.len())?;
        let mut dz = d_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (i, o) = self.dims(l);
            let input = &tape.acts[l];
            let wo = self.offsets[l];
            let (gw, rest) = grads[wo..].split_at_mut(o * i);
            gemm(
                1.0,
                View::row_major(&dz, rows, o).t(),
                View::row_major(input, rows, i),
                1.0,
                gw,
            );
            let gb = &mut rest[..o];
            for r in 0..rows {
                for (g, d) in gb.iter_mut().zip(&dz[r * o..(r + 1) * o]) {
                    *g += d;
                }
            }
            if l == 0 && !want_input {
                return Ok(None);
            }
            let mut da = vec![0.0; rows * i];
            gemm(
                1.0,
                View::row_major(&dz, rows, o),
                View::row_major(self.weight(l), o, i),
                0.0,
                &mut da,
            );
            if l > 0 {
                // ELU'(p) = 1 for p > 0, else e^p = elu(p) + 1.
                for (d, &a) in da.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *d *= a + 1.0;
                    }
                }
            }
            dz = da;
        }
        Ok(Some(dz))
    }
}

impl From<Mlp> for MlpCheckpoint {
    fn from(net: Mlp) -> Self {
        let n = net.n_layers();
        MlpCheckpoint {
            weights: (0..n).map(|l| net.weight(l).to_vec()).collect(),
            biases: (0..n).map(|l| net.bias(l).to_vec()).collect(),
            layer_sizes: net.layer_sizes,
        }
    }
}

impl TryFrom<MlpCheckpoint> for Mlp {
    type Error = Error;

    fn try_from(ck: MlpCheckpoint) -> Result<Self> {
        let mut net = Mlp::zeros(&ck.layer_sizes)?;
        check_len("checkpoint layers", net.n_layers(), ck.weights.len())?;
        check_len("checkpoint layers", net.n_layers(), ck.biases.len())?;
        for l in 0..net.n_layers() {
            check_len("checkpoint weight", net.weight(l).len(), ck.weights[l].len())?;
            check_len("checkpoint bias", net.bias(l).len(), ck.biases[l].len())?;
            net.weight_mut(l).copy_from_slice(&ck.weights[l]);
            net.bias_mut(l).copy_from_slice(&ck.biases[l]);
        }
        if !net.all_finite() {
            return Err(Error::NonFinite {
                term: "checkpoint parameters",
                index: 0,
            });
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// Straight-line evaluator: explicit loops, no shared code with `layer`.
    fn reference_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in 0..net.n_layers() {
            let (i, o) = (net.layer_sizes()[l], net.layer_sizes()[l + 1]);
            let w = net.weight(l);
            let b = net.bias(l);
            let mut next = vec![0.0; o];
            for r in 0..o {
                let mut s = b[r];
                for c in 0..i {
                    s += w[r * i + c] * cur[c];
                }
                next[r] = if l + 1 < net.n_layers() {
                    if s >= 0.0 { s } else { libm::exp(s) - 1.0 }
                } else {
                    s
                };
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn identity_and_constant_maps() {
        let mut net = Mlp::zeros(&[3, 3]).unwrap();
        for k in 0..3 {
            net.weight_mut(0)[k * 3 + k] = 1.0;
        }
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);

        let mut c = Mlp::zeros(&[2, 4, 2]).unwrap();
        c.bias_mut(1).copy_from_slice(&[0.7, -3.0]);
        assert_eq!(c.forward(&[100.0, -5.0]).unwrap(), vec![0.7, -3.0]);
    }

    #[test]
    fn matches_straight_line_evaluator() {
        let mut rng = stream(11, 0);
        let mut net = Mlp::new(&[1, 16, 1], &mut rng).unwrap();
        for (k, b) in net.bias_mut(0).iter_mut().enumerate() {
            *b = 0.1 * k as f64 - 0.8;
        }
        let probes = [-2.0, -0.5, 0.0, 0.7, 3.1];
        let batch = net.forward_batch(&probes, 5).unwrap();
        for (k, &p) in probes.iter().enumerate() {
            let r = reference_forward(&net, &[p]);
            assert!((batch[k] - r[0]).abs() < 1e-13, "{} vs {}", batch[k], r[0]);
        }
    }

    #[test]
    fn input_shape_error() {
        let net = Mlp::zeros(&[2, 3, 1]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn forward_is_pure() {
        let net = Mlp::new(&[2, 20, 20, 20, 1], &mut stream(3, 0)).unwrap();
        let x = [0.3, -1.2, 2.0, 0.1];
        assert_eq!(net.forward_batch(&x, 2).unwrap(), net.forward_batch(&x, 2).unwrap());
    }

    #[test]
    fn linear_net_gradient_is_least_squares_gradient() {
        // loss = ½‖W x + b‖² ⇒ ∂/∂W = r xᵀ, ∂/∂b = r, with r = W x + b.
        let mut net = Mlp::new(&[3, 2], &mut stream(5, 0)).unwrap();
        net.bias_mut(0).copy_from_slice(&[0.3, -0.1]);
        let x = [0.5, -1.0, 2.0];
        let tape = net.forward_tape(x.to_vec(), 1).unwrap();
        let r = tape.output().to_vec();
        let mut g = vec![0.0; net.n_params()];
        let dx = net.backward(&tape, &r, &mut g, true).unwrap().unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert!((g[o * 3 + i] - r[o] * x[i]).abs() < 1e-14);
            }
            assert!((g[6 + o] - r[o]).abs() < 1e-14);
        }
        for i in 0..3 {
            let expect = r[0] * net.weight(0)[i] + r[1] * net.weight(0)[3 + i];
            assert!((dx[i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn unused_parameter_has_exactly_zero_gradient() {
        // Second output's row never enters the loss.
        let net = Mlp::new(&[2, 4, 2], &mut stream(9, 0)).unwrap();
        let tape = net.forward_tape(vec![0.2, 0.4], 1).unwrap();
        let mut g = vec![0.0; net.n_params()];
        net.backward(&tape, &[1.0, 0.0], &mut g, false).unwrap();
        let off = 2 * 4 + 4;
        for k in 0..4 {
            assert_eq!(g[off + 4 + k], 0.0);
        }
        assert_eq!(g[off + 2 * 4 + 1], 0.0);
    }

    #[test]
    fn checkpoint_round_trip_validates_shapes() {
        let net = Mlp::new(&[2, 5, 1], &mut stream(1, 1)).unwrap();
        let ck: MlpCheckpoint = net.clone().into();
        assert_eq!(Mlp::try_from(ck.clone()).unwrap(), net);
        let mut bad = ck;
        bad.biases[1].push(0.0);
        assert!(Mlp::try_from(bad).is_err());
    }
}
