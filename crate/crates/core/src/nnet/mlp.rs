use std::ops::{Deref, DerefMut, Range};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Shape of a dense feed-forward network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            activation: Activation::Relu,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.output_dim);
        w
    }
}

/// Location of one dense layer inside a flat parameter vector. Weights are
/// stored row-major as `fan_in × fan_out`, followed by `fan_out` biases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

/// Flat vector of network weights and biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub(crate) fn l2_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A dense ReLU network: the spec plus its resolved parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<LayerSlot>,
    num_params: usize,
}

/// Activations recorded by a batched forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    input: Vec<f64>,
    /// Post-activation output of every layer; the last entry is the linear
    /// network output.
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Row-major `batch × output_dim` network outputs.
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("network has at least one layer")
    }
}

/// Gradients of `Σ adjoint · output` with respect to parameters and inputs.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ParamVector,
    /// Row-major `batch × input_dim`.
    pub input: Vec<f64>,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        let widths = spec.widths();
        if let Some(&bad) = widths.iter().find(|&&w| w == 0) {
            return Err(Error::domain(format!(
                "all network dimensions must be >= 1, got {bad} in {widths:?}"
            )));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut off = 0;
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weights = off..off + fan_in * fan_out;
            let bias = weights.end..weights.end + fan_out;
            off = bias.end;
            layers.push(LayerSlot {
                fan_in,
                fan_out,
                weights,
                bias,
            });
        }
        Ok(Self {
            spec,
            layers,
            num_params: off,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerSlot] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    /// Uniform `±sqrt(1/fan_in)` initialization; layer `i` draws from its own
    /// ChaCha stream `i` under `seed`.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut p = ParamVector::zeros(self.num_params);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let bound = (1.0 / layer.fan_in as f64).sqrt();
            for w in &mut p.0[layer.weights.start..layer.bias.end] {
                *w = rng.random_range(-bound..bound);
            }
        }
        p
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params {
            return Err(Error::Shape {
                context: "parameter vector",
                expected: self.num_params,
                got: params.len(),
            });
        }
        Ok(())
    }

    /// Single-input forward pass.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(params, input, 1)?.acts.pop().unwrap())
    }

    /// Batched forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, params: &[f64], inputs: &[f64], batch: usize) -> Result<Tape> {
        self.check_params(params)?;
        if inputs.len() != batch * self.spec.input_dim {
            return Err(Error::Shape {
                context: "network input",
                expected: batch * self.spec.input_dim,
                got: inputs.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { inputs } else { &acts[i - 1] };
            let bias = &params[layer.bias.clone()];
            let mut out = Vec::with_capacity(batch * layer.fan_out);
            for _ in 0..batch {
                out.extend_from_slice(bias);
            }
            gemm(
                batch,
                layer.fan_in,
                layer.fan_out,
                Mat::row_major(x, layer.fan_in),
                Mat::row_major(&params[layer.weights.clone()], layer.fan_out),
                &mut out,
                1.0,
            );
            if i < last {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        Ok(Tape {
            batch,
            input: inputs.to_vec(),
            acts,
        })
    }

    /// Reverse pass: gradient of `Σ_b adjoint[b] · output[b]`.
    pub fn backward(&self, params: &[f64], tape: &Tape, adjoint: &[f64]) -> Result<Gradients> {
        self.check_params(params)?;
        let batch = tape.batch;
        if adjoint.len() != batch * self.spec.output_dim {
            return Err(Error::Shape {
                context: "output adjoint",
                expected: batch * self.spec.output_dim,
                got: adjoint.len(),
            });
        }
        let mut grad = ParamVector::zeros(self.num_params);
        let mut delta = adjoint.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i + 1 < self.layers.len() {
                // ReLU mask of this layer's own output.
                for (d, a) in delta.iter_mut().zip(&tape.acts[i]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = if i == 0 { &tape.input } else { &tape.acts[i - 1] };
            let (fan_in, fan_out) = (layer.fan_in, layer.fan_out);
            {
                let gw = &mut grad.0[layer.weights.clone()];
                gemm(
                    fan_in,
                    batch,
                    fan_out,
                    Mat::transposed(x, fan_in),
                    Mat::row_major(&delta, fan_out),
                    gw,
                    0.0,
                );
            }
            {
                let gb = &mut grad.0[layer.bias.clone()];
                for row in delta.chunks_exact(fan_out) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
            let mut prev = vec![0.0; batch * fan_in];
            gemm(
                batch,
                fan_out,
                fan_in,
                Mat::row_major(&delta, fan_out),
                Mat::transposed(&params[layer.weights.clone()], fan_out),
                &mut prev,
                0.0,
            );
            delta = prev;
        }
        Ok(Gradients {
            params: grad,
            input: delta,
        })
    }

    /// Single-input gradient of `adjoint · forward(input)`.
    pub fn grad(&self, params: &[f64], input: &[f64], adjoint: &[f64]) -> Result<Gradients> {
        let tape = self.forward_batch(params, input, 1)?;
        self.backward(params, &tape, adjoint)
    }
}

/// A borrowed matrix view with explicit strides.
#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

impl<'a> Mat<'a> {
    /// Row-major matrix with `cols` columns.
    fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transpose of a row-major matrix that has `cols` columns.
    fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            rs: 1,
            cs: cols as isize,
        }
    }

    fn extent(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        ((rows as isize - 1) * self.rs + (cols as isize - 1) * self.cs + 1) as usize
    }
}

/// `c ← a·b + beta·c` with `a: m×k`, `b: k×n`, `c: m×n` row-major.
fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, c: &mut [f64], beta: f64) {
    assert!(a.data.len() >= a.extent(m, k), "gemm: lhs too short");
    assert!(b.data.len() >= b.extent(k, n), "gemm: rhs too short");
    assert_eq!(c.len(), m * n, "gemm: output shape");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the extents of all three operands were checked above against
    // the strides passed to dgemm, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Mlp, ParamVector) {
        let mlp = Mlp::new(MlpSpec::new(3, &[5, 4], 2)).unwrap();
        let p = mlp.init(17);
        (mlp, p)
    }

    /// Plain triple-loop forward pass used as an independent reference.
    fn naive_forward(mlp: &Mlp, p: &ParamVector, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let last = mlp.layers().len() - 1;
        for (i, l) in mlp.layers().iter().enumerate() {
            let w = &p.0[l.weights.clone()];
            let b = &p.0[l.bias.clone()];
            let mut z: Vec<f64> = b.to_vec();
            for (j, zj) in z.iter_mut().enumerate() {
                for (r, ar) in a.iter().enumerate() {
                    *zj += ar * w[r * l.fan_out + j];
                }
            }
            if i < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a
    }

    #[test]
    fn layout_counts_weights_and_biases() {
        let (mlp, p) = toy();
        assert_eq!(mlp.num_params(), 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(p.len(), mlp.num_params());
        assert!(Mlp::new(MlpSpec::new(0, &[4], 1)).is_err());
        assert!(Mlp::new(MlpSpec::new(2, &[0], 1)).is_err());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let (mlp, _) = toy();
        let p = ParamVector::zeros(mlp.num_params());
        assert_eq!(mlp.forward(&p, &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn unit_chain_passes_positive_input() {
        let mlp = Mlp::new(MlpSpec::new(1, &[1], 1)).unwrap();
        // w1 b1 w2 b2
        let p = ParamVector(vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(mlp.forward(&p, &[2.0]).unwrap(), vec![2.0]);
        assert_eq!(mlp.forward(&p, &[-2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn batched_forward_matches_naive_loops() {
        let (mlp, p) = toy();
        let xs = [0.3, -1.2, 0.7, 2.0, 0.1, -0.4, -0.9, 0.0, 1.5];
        let tape = mlp.forward_batch(&p, &xs, 3).unwrap();
        for (row, x) in xs.chunks(3).enumerate() {
            let want = naive_forward(&mlp, &p, x);
            for (j, w) in want.iter().enumerate() {
                assert!((tape.output()[row * 2 + j] - w).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let (mlp, p) = toy();
        assert_eq!(p, mlp.init(17));
        assert_ne!(p, mlp.init(18));
        for l in mlp.layers() {
            let bound = (1.0 / l.fan_in as f64).sqrt();
            assert!(p.0[l.weights.start..l.bias.end].iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn shape_errors() {
        let (mlp, p) = toy();
        assert!(matches!(mlp.forward(&p, &[1.0]), Err(Error::Shape { .. })));
        assert!(matches!(
            mlp.forward(&ParamVector::zeros(3), &[1.0, 2.0, 3.0]),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            mlp.grad(&p, &[1.0, 2.0, 3.0], &[1.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_adjoint_gives_zero_gradient() {
        let (mlp, p) = toy();
        let g = mlp.grad(&p, &[0.5, 0.5, 0.5], &[0.0, 0.0]).unwrap();
        assert!(g.params.0.iter().all(|&x| x == 0.0));
        assert!(g.input.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_adjoint() {
        let (mlp, p) = toy();
        let x = [0.2, -0.3, 0.9];
        let g1 = mlp.grad(&p, &x, &[0.7, -0.2]).unwrap();
        let g2 = mlp.grad(&p, &x, &[1.4, -0.4]).unwrap();
        for (a, b) in g1.params.0.iter().zip(&g2.params.0) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mlp = Mlp::new(MlpSpec::new(4, &[8, 8], 1)).unwrap();
        let p = mlp.init(3);
        let x = [0.3, -0.8, 1.1, 0.05];
        let g = mlp.grad(&p, &x, &[1.0]).unwrap();
        let h = 1e-5;
        let f = |pp: &ParamVector, xx: &[f64]| mlp.forward(pp, xx).unwrap()[0];
        for i in 0..p.len() {
            let mut up = p.clone();
            up.0[i] += h;
            let mut dn = p.clone();
            dn.0[i] -= h;
            let fd = (f(&up, &x) - f(&dn, &x)) / (2.0 * h);
            let err = (fd - g.params.0[i]).abs() / fd.abs().max(g.params.0[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: fd {fd} vs {}", g.params.0[i]);
        }
        for i in 0..x.len() {
            let mut up = x;
            up[i] += h;
            let mut dn = x;
            dn[i] -= h;
            let fd = (f(&p, &up) - f(&p, &dn)) / (2.0 * h);
            assert!((fd - g.input[i]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn bias_free_relu_net_is_positively_homogeneous() {
        let (mlp, mut p) = toy();
        for l in mlp.layers() {
            p.0[l.bias.clone()].iter_mut().for_each(|b| *b = 0.0);
        }
        let x = [0.4, -1.0, 0.25];
        let fx = mlp.forward(&p, &x).unwrap();
        let x3: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let f3 = mlp.forward(&p, &x3).unwrap();
        for (a, b) in fx.iter().zip(&f3) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }
}
