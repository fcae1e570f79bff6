//! Dense feed-forward networks with exact per-sample gradients.
//!
//! Parameters live in one flat [`ParamVector`]. Layer `l` stores its weight
//! matrix row-major as `fan_out × fan_in`, followed by its bias vector. Each
//! weight row together with its bias entry forms one *filter*, the unit used
//! by filter-normalized landscape slices.
//!
//! Gradients are computed by reverse-mode differentiation over a recorded
//! forward trace. The ReLU subgradient at a pre-activation of exactly zero is
//! taken to be zero.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::objective::Objective;
use crate::rng::{Purpose, RngSeed};

/// Rows evaluated per chunk when scanning a whole dataset.
const EVAL_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => libm::tanh(z),
        }
    }

    /// Derivative at pre-activation `z`, given `h = apply(z)`.
    #[inline]
    pub fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
        }
    }
}

/// Architecture of a multilayer perceptron.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

/// Position of one layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn weights(&self) -> Range<usize> {
        self.weight_offset..self.weight_offset + self.fan_in * self.fan_out
    }

    pub fn bias(&self) -> Range<usize> {
        self.bias_offset..self.bias_offset + self.fan_out
    }
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, activation: Activation) -> Result<Self> {
        let spec = MlpSpec { input_dim, hidden, output_dim, activation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden);
        widths.push(self.output_dim);
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let shape =
                    LayerShape { fan_in, fan_out, weight_offset: offset, bias_offset: offset + fan_in * fan_out };
                offset += fan_in * fan_out + fan_out;
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.fan_in * l.fan_out + l.fan_out).sum()
    }

    pub fn shape_map(&self) -> Vec<Block> {
        let mut map = Vec::with_capacity(2 * self.n_layers());
        for (layer, shape) in self.layers().iter().enumerate() {
            map.push(Block {
                layer,
                kind: BlockKind::Weight { rows: shape.fan_out, cols: shape.fan_in },
                offset: shape.weight_offset,
            });
            map.push(Block { layer, kind: BlockKind::Bias { len: shape.fan_out }, offset: shape.bias_offset });
        }
        map
    }

    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.shape_map != self.shape_map() {
            return Err(Error::DimensionMismatch {
                what: "parameter layout",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        Ok(())
    }

    pub fn check_batch(&self, batch: &Batch<'_>) -> Result<()> {
        if batch.input_dim != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "batch input width",
                expected: self.input_dim,
                got: batch.input_dim,
            });
        }
        if let Some(&bad) = batch.labels.iter().find(|&&y| y >= self.output_dim) {
            return Err(Error::DimensionMismatch { what: "label index", expected: self.output_dim, got: bad });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Weight { rows: usize, cols: usize },
    Bias { len: usize },
}

/// One contiguous partition of a [`ParamVector`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub layer: usize,
    pub kind: BlockKind,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        match self.kind {
            BlockKind::Weight { rows, cols } => rows * cols,
            BlockKind::Bias { len } => len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// A weight row plus the bias entry of the same output unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Filter {
    pub layer: usize,
    pub unit: usize,
    pub weights: Range<usize>,
    pub bias: usize,
}

impl Filter {
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.clone().chain(core::iter::once(self.bias))
    }

    pub fn norm(&self, values: &[f64]) -> f64 {
        libm::sqrt(self.indices().map(|i| values[i] * values[i]).sum())
    }
}

/// Flat model parameters with their layer layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    shape_map: Vec<Block>,
}

impl ParamVector {
    /// Validates that the blocks tile `values` exactly and every value is finite.
    pub fn new(values: Vec<f64>, shape_map: Vec<Block>) -> Result<Self> {
        let mut covered = vec![false; values.len()];
        let mut total = 0usize;
        for block in &shape_map {
            let range = block.range();
            if range.end > values.len() {
                return Err(Error::DimensionMismatch { what: "shape map", expected: values.len(), got: range.end });
            }
            for i in range {
                if covered[i] {
                    return Err(invalid("shape map partitions overlap"));
                }
                covered[i] = true;
            }
            total += block.len();
        }
        if total != values.len() {
            return Err(Error::DimensionMismatch { what: "shape map", expected: values.len(), got: total });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(ParamVector { values, shape_map })
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        ParamVector { values: vec![0.0; spec.param_count()], shape_map: spec.shape_map() }
    }

    /// Same layout, new values. Panics on a length mismatch.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "parameter length mismatch");
        ParamVector { values, shape_map: self.shape_map.clone() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn shape_map(&self) -> &[Block] {
        &self.shape_map
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Filters in layer order, one per output unit.
    pub fn filters(&self) -> Vec<Filter> {
        let mut out = Vec::new();
        for block in &self.shape_map {
            if let BlockKind::Weight { rows, cols } = block.kind {
                let bias = self
                    .shape_map
                    .iter()
                    .find(|b| b.layer == block.layer && matches!(b.kind, BlockKind::Bias { .. }))
                    .map(|b| b.offset);
                for unit in 0..rows {
                    let start = block.offset + unit * cols;
                    out.push(Filter {
                        layer: block.layer,
                        unit,
                        weights: start..start + cols,
                        bias: bias.map(|b| b + unit).unwrap_or(start),
                    });
                }
            }
        }
        out
    }
}

/// Borrowed view of a labelled batch; inputs are row-major `n × input_dim`.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub inputs: &'a [f64],
    pub labels: &'a [usize],
    pub input_dim: usize,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [f64], labels: &'a [usize], input_dim: usize) -> Result<Self> {
        if input_dim == 0 || inputs.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch {
                what: "batch inputs",
                expected: labels.len() * input_dim,
                got: inputs.len(),
            });
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("batch inputs"));
        }
        Ok(Batch { inputs, labels, input_dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &'a [f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn slice(&self, range: Range<usize>) -> Batch<'a> {
        Batch {
            inputs: &self.inputs[range.start * self.input_dim..range.end * self.input_dim],
            labels: &self.labels[range],
            input_dim: self.input_dim,
        }
    }
}

/// Glorot-uniform weights `U(-√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out)))`, zero biases.
pub fn init_params(spec: &MlpSpec, seed: RngSeed) -> ParamVector {
    let mut params = ParamVector::zeros(spec);
    for (l, shape) in spec.layers().iter().enumerate() {
        let limit = glorot_limit(shape.fan_in, shape.fan_out);
        let mut stream = seed.stream(Purpose::Init, l as u64, 0, 0);
        for w in &mut params.values[shape.weights()] {
            *w = stream.uniform_in(-limit, limit);
        }
    }
    params
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    libm::sqrt(6.0 / (fan_in + fan_out) as f64)
}

/// Activations recorded by a forward pass over `rows` inputs.
#[derive(Clone, Debug)]
pub(crate) struct Trace {
    pub rows: usize,
    /// Input of every layer (`rows × fan_in`); entry 0 is the batch itself.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer (`rows × fan_out`); the last is the logits.
    pub pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.pre.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

pub(crate) fn forward_trace(params: &[f64], spec: &MlpSpec, inputs: &[f64], rows: usize) -> Trace {
    let layers = spec.layers();
    let mut trace = Trace { rows, inputs: Vec::with_capacity(layers.len()), pre: Vec::with_capacity(layers.len()) };
    trace.inputs.push(inputs.to_vec());
    for (l, shape) in layers.iter().enumerate() {
        let mut z = vec![0.0; rows * shape.fan_out];
        affine(params, shape, &trace.inputs[l], rows, &mut z);
        if l + 1 < layers.len() {
            let h = z.iter().map(|&v| spec.activation.apply(v)).collect();
            trace.inputs.push(h);
        }
        trace.pre.push(z);
    }
    trace
}

/// `z = h Wᵀ + b` for every row.
pub(crate) fn affine(params: &[f64], shape: &LayerShape, h: &[f64], rows: usize, z: &mut [f64]) {
    let bias = &params[shape.bias()];
    for row in z.chunks_exact_mut(shape.fan_out) {
        row.copy_from_slice(bias);
    }
    linalg::gemm_nt(rows, shape.fan_in, shape.fan_out, h, &params[shape.weights()], 1.0, z);
}

/// Softmax cross-entropy per row, with `delta = softmax - onehot` written in place of the logits.
pub(crate) fn softmax_xent(logits: &[f64], labels: &[usize], classes: usize, delta: &mut [f64]) -> Vec<f64> {
    let mut losses = Vec::with_capacity(labels.len());
    for ((row, d), &y) in logits.chunks_exact(classes).zip(delta.chunks_exact_mut(classes)).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &z) in d.iter_mut().zip(row) {
            *o = libm::exp(z - m);
            sum += *o;
        }
        let lse = m + libm::log(sum);
        losses.push((lse - row[y]).max(0.0));
        for o in d.iter_mut() {
            *o /= sum;
        }
        d[y] -= 1.0;
    }
    losses
}

pub(crate) fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> Vec<f64> {
    logits
        .chunks_exact(classes)
        .zip(labels)
        .map(|(row, &y)| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&z| libm::exp(z - m)).sum();
            (m + libm::log(sum) - row[y]).max(0.0)
        })
        .collect()
}

/// Backpropagates `delta_out` (gradient w.r.t. the logits) and returns the
/// gradient w.r.t. every layer's pre-activation.
pub(crate) fn backward(params: &[f64], spec: &MlpSpec, trace: &Trace, delta_out: Vec<f64>) -> Vec<Vec<f64>> {
    let layers = spec.layers();
    let rows = trace.rows;
    let mut deltas: Vec<Vec<f64>> = vec![Vec::new(); layers.len()];
    let mut delta = delta_out;
    for l in (0..layers.len()).rev() {
        let shape = &layers[l];
        if l > 0 {
            let mut back = vec![0.0; rows * shape.fan_in];
            linalg::gemm_nn(rows, shape.fan_out, shape.fan_in, &delta, &params[shape.weights()], 0.0, &mut back);
            let (z, h) = (&trace.pre[l - 1], &trace.inputs[l]);
            for ((b, &zv), &hv) in back.iter_mut().zip(z).zip(h) {
                *b *= spec.activation.derivative(zv, hv);
            }
            deltas[l] = core::mem::replace(&mut delta, back);
        } else {
            deltas[0] = core::mem::take(&mut delta);
        }
    }
    deltas
}

/// Per-sample softmax cross-entropy losses.
pub fn forward_loss(params: &ParamVector, spec: &MlpSpec, batch: &Batch<'_>) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    spec.check_batch(batch)?;
    let trace = forward_trace(&params.values, spec, batch.inputs, batch.len());
    Ok(cross_entropy(trace.logits(), batch.labels, spec.output_dim))
}

/// Logits for every row of the batch (`n × output_dim`).
pub fn logits(params: &ParamVector, spec: &MlpSpec, batch: &Batch<'_>) -> Result<Matrix> {
    spec.check_params(params)?;
    spec.check_batch(batch)?;
    let trace = forward_trace(&params.values, spec, batch.inputs, batch.len());
    Ok(Matrix { rows: batch.len(), cols: spec.output_dim, data: trace.pre.last().cloned().unwrap_or_default() })
}

/// Exact gradient of every sample's loss, one row per sample.
pub fn per_sample_gradients(params: &ParamVector, spec: &MlpSpec, batch: &Batch<'_>) -> Result<Matrix> {
    spec.check_params(params)?;
    spec.check_batch(batch)?;
    let n = batch.len();
    let trace = forward_trace(&params.values, spec, batch.inputs, n);
    let mut delta = vec![0.0; n * spec.output_dim];
    softmax_xent(trace.logits(), batch.labels, spec.output_dim, &mut delta);
    let deltas = backward(&params.values, spec, &trace, delta);
    let mut grads = Matrix::zeros(n, params.len());
    for (l, shape) in spec.layers().iter().enumerate() {
        for i in 0..n {
            let d = &deltas[l][i * shape.fan_out..(i + 1) * shape.fan_out];
            let h = &trace.inputs[l][i * shape.fan_in..(i + 1) * shape.fan_in];
            let row = grads.row_mut(i);
            for (o, &dv) in d.iter().enumerate() {
                let start = shape.weight_offset + o * shape.fan_in;
                for (g, &hv) in row[start..start + shape.fan_in].iter_mut().zip(h) {
                    *g = dv * hv;
                }
            }
            row[shape.bias()].copy_from_slice(d);
        }
    }
    Ok(grads)
}

/// Gradient of the batch-mean loss, computed in one batched pass. Also returns the mean loss.
pub fn mean_loss_gradient(params: &ParamVector, spec: &MlpSpec, batch: &Batch<'_>) -> Result<(f64, Vec<f64>)> {
    spec.check_params(params)?;
    spec.check_batch(batch)?;
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let trace = forward_trace(&params.values, spec, batch.inputs, n);
    let mut delta = vec![0.0; n * spec.output_dim];
    let losses = softmax_xent(trace.logits(), batch.labels, spec.output_dim, &mut delta);
    let scale = 1.0 / n as f64;
    for d in &mut delta {
        *d *= scale;
    }
    let deltas = backward(&params.values, spec, &trace, delta);
    let mut grad = vec![0.0; params.len()];
    accumulate_layer_gradients(spec, &trace.inputs, &deltas, n, &mut grad);
    Ok((losses.iter().sum::<f64>() * scale, grad))
}

/// `grad[W_l] += Δ_lᵀ H_l`, `grad[b_l] += Σ_rows Δ_l`.
pub(crate) fn accumulate_layer_gradients(
    spec: &MlpSpec,
    inputs: &[Vec<f64>],
    deltas: &[Vec<f64>],
    rows: usize,
    grad: &mut [f64],
) {
    for (l, shape) in spec.layers().iter().enumerate() {
        linalg::gemm_tn(shape.fan_out, rows, shape.fan_in, &deltas[l], &inputs[l], 1.0, &mut grad[shape.weights()]);
        let gb = &mut grad[shape.bias()];
        for d in deltas[l].chunks_exact(shape.fan_out) {
            for (g, &v) in gb.iter_mut().zip(d) {
                *g += v;
            }
        }
    }
}

/// Test-set metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy and mean loss over a whole dataset.
pub fn evaluate(params: &ParamVector, spec: &MlpSpec, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let batch = dataset.as_batch();
    spec.check_params(params)?;
    spec.check_batch(&batch)?;
    let n = batch.len();
    let (mut correct, mut loss_sum) = (0usize, 0.0);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let chunk = batch.slice(start..end);
        let trace = forward_trace(&params.values, spec, chunk.inputs, chunk.len());
        let logits = trace.logits();
        for (row, &y) in logits.chunks_exact(spec.output_dim).zip(chunk.labels) {
            if argmax(row) == y {
                correct += 1;
            }
        }
        for l in cross_entropy(logits, chunk.labels, spec.output_dim) {
            loss_sum += l;
        }
        start = end;
    }
    Ok(Evaluation { accuracy: correct as f64 / n as f64, mean_loss: loss_sum / n as f64 })
}

/// Mean training loss of an MLP over a fixed dataset, as an [`Objective`] over the flat parameters.
pub struct MlpObjective<'a> {
    pub spec: &'a MlpSpec,
    pub data: &'a Dataset,
    template: ParamVector,
}

impl<'a> MlpObjective<'a> {
    pub fn new(spec: &'a MlpSpec, data: &'a Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        spec.check_batch(&data.as_batch())?;
        Ok(MlpObjective { spec, data, template: ParamVector::zeros(spec) })
    }

    fn scan(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let batch = self.data.as_batch();
        let n = batch.len();
        let mut loss_sum = 0.0;
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            let chunk = batch.slice(start..end);
            let trace = forward_trace(x, self.spec, chunk.inputs, chunk.len());
            match grad.as_deref_mut() {
                Some(g) => {
                    let mut delta = vec![0.0; chunk.len() * self.spec.output_dim];
                    let losses = softmax_xent(trace.logits(), chunk.labels, self.spec.output_dim, &mut delta);
                    loss_sum += losses.iter().sum::<f64>();
                    let scale = 1.0 / n as f64;
                    for d in &mut delta {
                        *d *= scale;
                    }
                    let deltas = backward(x, self.spec, &trace, delta);
                    accumulate_layer_gradients(self.spec, &trace.inputs, &deltas, chunk.len(), g);
                }
                None => {
                    loss_sum += cross_entropy(trace.logits(), chunk.labels, self.spec.output_dim).iter().sum::<f64>();
                }
            }
            start = end;
        }
        loss_sum / n as f64
    }
}

impl Objective for MlpObjective<'_> {
    fn dim(&self) -> usize {
        self.template.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.scan(x, None)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.scan(x, Some(out))
    }
}
