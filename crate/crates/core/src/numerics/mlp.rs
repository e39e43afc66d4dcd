//! Fixed-topology feed-forward networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat row-major buffer: for each layer the weight
//! matrix (`out x in`) followed by the bias vector. Optimizers, soft updates
//! and checkpoints all operate on that buffer directly.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Linear,
    Tanh,
}

/// A contiguous run of output units sharing one squashing function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSlice {
    pub len: usize,
    pub kind: HeadKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    TanhBounded,
    /// Mixed head, e.g. tanh on physical-force units and raw logits on
    /// communication units.
    PerSlice(Vec<HeadSlice>),
}

impl OutputHead {
    fn kind_at(&self, unit: usize) -> HeadKind {
        match self {
            OutputHead::Linear => HeadKind::Linear,
            OutputHead::TanhBounded => HeadKind::Tanh,
            OutputHead::PerSlice(slices) => {
                let mut start = 0;
                for s in slices {
                    if unit < start + s.len {
                        return s.kind;
                    }
                    start += s.len;
                }
                HeadKind::Linear
            }
        }
    }

    fn kinds(&self, width: usize) -> Vec<HeadKind> {
        (0..width).map(|u| self.kind_at(u)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    hidden: Activation,
    head: OutputHead,
    params: Vec<f64>,
}

/// Activations recorded by a batched forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct Tape {
    /// `acts[0]` is the input batch, `acts[l + 1]` the post-activation output of layer `l`.
    acts: Vec<Array2<f64>>,
    /// Output layer before the head squashing.
    pre_head: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("tape always holds the input")
    }

    pub fn pre_head(&self) -> &Array2<f64> {
        &self.pre_head
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// Zero-initialised network. Use [`Mlp::init_uniform`] for training.
    pub fn zeros(layer_dims: &[usize], hidden: Activation, head: OutputHead) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "an MLP needs at least one layer (two dims)".into(),
            ));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidArgument("layer dims must be positive".into()));
        }
        let out = *layer_dims.last().unwrap();
        if let OutputHead::PerSlice(slices) = &head {
            let total: usize = slices.iter().map(|s| s.len).sum();
            if total != out {
                return Err(Error::shape("per-slice head width", out, total));
            }
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            hidden,
            head,
            params: vec![0.0; param_count(layer_dims)],
        })
    }

    /// Weights uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn init_uniform<R: Rng + ?Sized>(
        layer_dims: &[usize],
        hidden: Activation,
        head: OutputHead,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, hidden, head)?;
        let mut offset = 0;
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    /// Rebuilds a network from raw parts, validating the parameter count.
    pub fn from_parts(
        layer_dims: Vec<usize>,
        hidden: Activation,
        head: OutputHead,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::zeros(&layer_dims, hidden, head)?;
        if params.len() != net.params.len() {
            return Err(Error::shape("parameter vector", net.params.len(), params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn hidden(&self) -> Activation {
        self.hidden
    }

    pub fn head(&self) -> &OutputHead {
        &self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Offset of layer `l`'s weights inside the flat buffer.
    fn offset(&self, layer: usize) -> usize {
        param_count(&self.layer_dims[..=layer])
    }

    /// Layer that owns flat parameter index `index`.
    pub fn layer_of_param(&self, index: usize) -> usize {
        let mut offset = 0;
        for (l, w) in self.layer_dims.windows(2).enumerate() {
            offset += w[0] * w[1] + w[1];
            if index < offset {
                return l;
            }
        }
        self.num_layers() - 1
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (n_in, n_out) = (self.layer_dims[layer], self.layer_dims[layer + 1]);
        let off = self.offset(layer);
        ArrayView2::from_shape((n_out, n_in), &self.params[off..off + n_in * n_out]).unwrap()
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (n_in, n_out) = (self.layer_dims[layer], self.layer_dims[layer + 1]);
        let off = self.offset(layer) + n_in * n_out;
        ArrayView1::from(&self.params[off..off + n_out])
    }

    pub fn weights_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, f64> {
        let (n_in, n_out) = (self.layer_dims[layer], self.layer_dims[layer + 1]);
        let off = self.offset(layer);
        ArrayViewMut2::from_shape((n_out, n_in), &mut self.params[off..off + n_in * n_out])
            .unwrap()
    }

    pub fn bias_mut(&mut self, layer: usize) -> ArrayViewMut1<'_, f64> {
        let (n_in, n_out) = (self.layer_dims[layer], self.layer_dims[layer + 1]);
        let off = self.offset(layer) + n_in * n_out;
        ArrayViewMut1::from(&mut self.params[off..off + n_out])
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        let out = self.forward_batch(x)?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Batched forward pass, one sample per row.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_tape(x)?.acts.pop().unwrap())
    }

    pub fn forward_tape(&self, x: ArrayView2<'_, f64>) -> Result<Tape> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape("MLP input", self.input_dim(), x.ncols()));
        }
        let mut acts = Vec::with_capacity(self.layer_dims.len());
        acts.push(x.to_owned());
        let mut pre_head = Array2::zeros((0, 0));
        let last = self.num_layers() - 1;
        let head_kinds = self.head.kinds(self.output_dim());
        for l in 0..self.num_layers() {
            let w = self.weights(l);
            let b = self.bias(l);
            let mut z = Array2::<f64>::zeros((x.nrows(), w.nrows()));
            general_mat_mul(1.0, &acts[l], &w.t(), 0.0, &mut z);
            z += &b;
            if l < last {
                match self.hidden {
                    Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
                    Activation::Tanh => z.mapv_inplace(f64::tanh),
                }
            } else {
                pre_head = z.clone();
                for mut row in z.rows_mut() {
                    for (v, kind) in row.iter_mut().zip(&head_kinds) {
                        if *kind == HeadKind::Tanh {
                            *v = v.tanh();
                        }
                    }
                }
            }
            acts.push(z);
        }
        Ok(Tape { acts, pre_head })
    }

    /// Reverse pass: gradients of `sum(upstream * output)` with respect to
    /// every parameter (flat layout) and to the input batch.
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let out = tape.output();
        if upstream.dim() != out.dim() {
            return Err(Error::shape(
                "MLP upstream gradient",
                out.len(),
                upstream.len(),
            ));
        }
        let head_kinds = self.head.kinds(self.output_dim());
        let mut delta = upstream.to_owned();
        for (mut row, y) in delta.rows_mut().into_iter().zip(out.rows()) {
            for ((d, &y), kind) in row.iter_mut().zip(y.iter()).zip(&head_kinds) {
                if *kind == HeadKind::Tanh {
                    *d *= 1.0 - y * y;
                }
            }
        }
        Ok(self.backward_from(tape, delta))
    }

    /// Like [`Mlp::backward`], with `upstream` taken with respect to the
    /// output layer before head squashing.
    pub fn backward_pre_head(&self, tape: &Tape, upstream: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        if upstream.dim() != tape.pre_head.dim() {
            return Err(Error::shape("MLP upstream gradient", tape.pre_head.len(), upstream.len()));
        }
        Ok(self.backward_from(tape, upstream.to_owned()))
    }

    fn backward_from(&self, tape: &Tape, mut delta: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
        let mut grads = vec![0.0; self.params.len()];
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let off = self.offset(l);
            {
                let (gw, gb) = grads[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                let mut gw = ArrayViewMut2::from_shape((n_out, n_in), gw).unwrap();
                general_mat_mul(1.0, &delta.t(), &tape.acts[l], 0.0, &mut gw);
                let db = delta.sum_axis(Axis(0));
                gb.copy_from_slice(db.as_slice().unwrap());
            }
            let mut prev = Array2::<f64>::zeros((delta.nrows(), n_in));
            general_mat_mul(1.0, &delta, &self.weights(l), 0.0, &mut prev);
            if l > 0 {
                let a = &tape.acts[l];
                match self.hidden {
                    Activation::Relu => prev.zip_mut_with(a, |d, &a| {
                        if a <= 0.0 {
                            *d = 0.0
                        }
                    }),
                    Activation::Tanh => prev.zip_mut_with(a, |d, &a| *d *= 1.0 - a * a),
                }
            }
            delta = prev;
        }
        (grads, delta)
    }

    /// Single-sample gradient of `<upstream, output>`.
    pub fn gradient(&self, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        let tape = self.forward_tape(x)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::shape("MLP upstream gradient", self.output_dim(), upstream.len()));
        }
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).unwrap();
        let (g, dx) = self.backward(&tape, up)?;
        Ok((g, dx.into_raw_vec_and_offset().0))
    }

    /// Checks every parameter for NaN/Inf.
    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}
