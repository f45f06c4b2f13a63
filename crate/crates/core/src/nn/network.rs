use crate::error::{Error, Result};
use crate::simplex::argmax;

use super::tensor::{gemm, Tensor};

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    /// Batch normalization without learnable scale or shift.
    BatchNorm { features: usize },
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub layers: Vec<Layer>,
    pub class_count: usize,
}

impl NetworkSpec {
    /// Dense layers of the given widths, each hidden one followed by
    /// batch normalization and ReLU.
    pub fn mlp(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2);
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            layers.push(Layer::Dense {
                inputs: pair[0],
                outputs: pair[1],
                bias: true,
            });
            if i + 2 < widths.len() {
                layers.push(Layer::BatchNorm { features: pair[1] });
                layers.push(Layer::Relu);
            }
        }
        NetworkSpec {
            layers,
            class_count: *widths.last().unwrap(),
        }
    }

    /// 784–300–100–10.
    pub fn lenet300() -> Self {
        NetworkSpec::mlp(&[784, 300, 100, 10])
    }

    /// One hidden layer of 32 units.
    pub fn mlp_small(inputs: usize, classes: usize) -> Self {
        NetworkSpec::mlp(&[inputs, 32, classes])
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Dense { inputs, .. } => Some(*inputs),
            Layer::BatchNorm { features } => Some(*features),
            Layer::Relu => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut width = self
            .input_dim()
            .ok_or_else(|| Error::Shape("network has no sized layer".into()))?;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Dense { inputs, outputs, .. } => {
                    if inputs != width {
                        return Err(Error::Shape(format!(
                            "layer {i} expects {inputs} inputs but receives {width}"
                        )));
                    }
                    width = outputs;
                }
                Layer::BatchNorm { features } => {
                    if features != width {
                        return Err(Error::Shape(format!(
                            "layer {i} normalizes {features} features but receives {width}"
                        )));
                    }
                }
                Layer::Relu => {}
            }
        }
        let last_dense = self.layers.iter().rev().find_map(|l| match l {
            Layer::Dense { outputs, .. } => Some(*outputs),
            _ => None,
        });
        if last_dense != Some(self.class_count) || width != self.class_count {
            return Err(Error::Shape(format!(
                "network ends with width {width}, expected {} classes",
                self.class_count
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Weight,
    Bias,
}

/// A contiguous range of the flat parameter vector owned by one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub layer: usize,
    pub kind: SegmentKind,
    pub offset: usize,
    pub len: usize,
}

/// Partition of `0..m` into per-layer weight and bias ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub segments: Vec<Segment>,
}

impl ParamLayout {
    pub fn new(spec: &NetworkSpec) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        for (layer, l) in spec.layers.iter().enumerate() {
            if let Layer::Dense { inputs, outputs, bias } = *l {
                segments.push(Segment {
                    layer,
                    kind: SegmentKind::Weight,
                    offset,
                    len: inputs * outputs,
                });
                offset += inputs * outputs;
                if bias {
                    segments.push(Segment {
                        layer,
                        kind: SegmentKind::Bias,
                        offset,
                        len: outputs,
                    });
                    offset += outputs;
                }
            }
        }
        ParamLayout { segments }
    }

    pub fn param_count(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len)
    }

    /// Fan-in of the layer owning each segment.
    pub fn fan_in(&self, spec: &NetworkSpec, segment: &Segment) -> usize {
        match spec.layers[segment.layer] {
            Layer::Dense { inputs, .. } => inputs,
            _ => unreachable!("only dense layers own parameters"),
        }
    }

    /// Splits a flat vector into per-segment slices.
    pub fn unflatten<'a>(&self, flat: &'a [f64]) -> Result<Vec<&'a [f64]>> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        Ok(self
            .segments
            .iter()
            .map(|s| &flat[s.offset..s.offset + s.len])
            .collect())
    }

    /// Inverse of `unflatten`.
    pub fn flatten(&self, parts: &[&[f64]]) -> Result<Vec<f64>> {
        if parts.len() != self.segments.len()
            || parts.iter().zip(&self.segments).any(|(p, s)| p.len() != s.len)
        {
            return Err(Error::Shape("parts do not match the parameter layout".into()));
        }
        Ok(parts.concat())
    }
}

/// Per-feature statistics of every batch-normalization layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl BatchNormStats {
    /// Mean 0, variance 1 for every feature.
    pub fn new(spec: &NetworkSpec) -> Self {
        let sizes: Vec<usize> = spec
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm { features } => Some(*features),
                _ => None,
            })
            .collect();
        BatchNormStats {
            mean: sizes.iter().map(|&f| vec![0.0; f]).collect(),
            var: sizes.iter().map(|&f| vec![1.0; f]).collect(),
        }
    }

    /// Exponential moving average update with the (unbiased) batch statistics of a
    /// train-mode pass.
    pub fn update(&mut self, batch: &BatchStats) {
        let n = batch.batch_size as f64;
        let correction = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for (layer, (m, v)) in self.mean.iter_mut().zip(self.var.iter_mut()).enumerate() {
            for (f, (mf, vf)) in m.iter_mut().zip(v.iter_mut()).enumerate() {
                *mf = (1.0 - BATCHNORM_MOMENTUM) * *mf + BATCHNORM_MOMENTUM * batch.mean[layer][f];
                *vf = (1.0 - BATCHNORM_MOMENTUM) * *vf
                    + BATCHNORM_MOMENTUM * batch.var[layer][f] * correction;
            }
        }
    }

    /// Statistics that make eval mode reproduce train mode exactly on `batch`.
    pub fn from_batch(batch: &BatchStats) -> Self {
        BatchNormStats {
            mean: batch.mean.clone(),
            var: batch.var.clone(),
        }
    }
}

/// Batch mean and biased variance observed by each normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub batch_size: usize,
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'s> {
    Train,
    Eval(&'s BatchNormStats),
}

enum Saved {
    Dense { input: Vec<f64> },
    BatchNorm { normalized: Vec<f64>, inv_std: Vec<f64>, batch: bool },
    Relu { output: Vec<f64> },
}

/// Activations kept by `Network::forward` for the matching backward pass.
pub struct Cache<'a> {
    network: &'a Network,
    params: &'a [f64],
    batch: usize,
    saved: Vec<Saved>,
    stats: BatchStats,
}

/// A network specification together with its parameter layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    spec: NetworkSpec,
    layout: ParamLayout,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layout = ParamLayout::new(&spec);
        Ok(Network { spec, layout })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.param_count()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim().unwrap()
    }

    pub fn class_count(&self) -> usize {
        self.spec.class_count
    }

    pub fn forward<'a>(
        &'a self,
        params: &'a [f64],
        batch: &Tensor,
        mode: Mode<'_>,
    ) -> Result<(Tensor, Cache<'a>)> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let b = batch.rows();
        if batch.shape().len() != 2 || batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch shape {:?} does not match input width {}",
                batch.shape(),
                self.input_dim()
            )));
        }

        let mut x = batch.data().to_vec();
        let mut width = self.input_dim();
        let mut saved = Vec::with_capacity(self.spec.layers.len());
        let mut stats = BatchStats {
            batch_size: b,
            mean: Vec::new(),
            var: Vec::new(),
        };
        let mut segments = self.layout.segments.iter();
        let mut bn_index = 0;

        for layer in &self.spec.layers {
            match *layer {
                Layer::Dense { inputs, outputs, bias } => {
                    let w = segments.next().unwrap();
                    let weights = &params[w.offset..w.offset + w.len];
                    let mut y = vec![0.0; b * outputs];
                    gemm(b, inputs, outputs, &x, false, weights, true, &mut y);
                    if bias {
                        let s = segments.next().unwrap();
                        let bvec = &params[s.offset..s.offset + s.len];
                        for row in y.chunks_exact_mut(outputs) {
                            for (v, bb) in row.iter_mut().zip(bvec) {
                                *v += bb;
                            }
                        }
                    }
                    saved.push(Saved::Dense { input: x });
                    x = y;
                    width = outputs;
                }
                Layer::BatchNorm { features } => {
                    let (mean, var, batch_mode) = match mode {
                        Mode::Train => {
                            let (mean, var) = column_moments(&x, features);
                            stats.mean.push(mean.clone());
                            stats.var.push(var.clone());
                            (mean, var, true)
                        }
                        Mode::Eval(running) => (
                            running.mean[bn_index].clone(),
                            running.var[bn_index].clone(),
                            false,
                        ),
                    };
                    let inv_std: Vec<f64> =
                        var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
                    for row in x.chunks_exact_mut(features) {
                        for ((v, m), s) in row.iter_mut().zip(&mean).zip(&inv_std) {
                            *v = (*v - m) * s;
                        }
                    }
                    saved.push(Saved::BatchNorm {
                        normalized: if batch_mode { x.clone() } else { Vec::new() },
                        inv_std,
                        batch: batch_mode,
                    });
                    bn_index += 1;
                }
                Layer::Relu => {
                    for v in x.iter_mut() {
                        *v = v.max(0.0);
                    }
                    saved.push(Saved::Relu { output: x.clone() });
                }
            }
        }

        let logits = Tensor::matrix(b, width, x)?;
        Ok((
            logits,
            Cache {
                network: self,
                params,
                batch: b,
                saved,
                stats,
            },
        ))
    }

    /// Class predictions in eval mode, processed `chunk` rows at a time.
    pub fn predict(
        &self,
        params: &[f64],
        stats: &BatchNormStats,
        inputs: &[f64],
        chunk: usize,
    ) -> Result<Vec<usize>> {
        let dim = self.input_dim();
        let mut out = Vec::with_capacity(inputs.len() / dim);
        for rows in inputs.chunks(chunk.max(1) * dim) {
            let t = Tensor::matrix(rows.len() / dim, dim, rows.to_vec())?;
            let (logits, _) = self.forward(params, &t, Mode::Eval(stats))?;
            out.extend((0..logits.rows()).map(|i| argmax(logits.row(i))));
        }
        Ok(out)
    }
}

fn column_moments(x: &[f64], features: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (x.len() / features) as f64;
    let mut mean = vec![0.0; features];
    for row in x.chunks_exact(features) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; features];
    for row in x.chunks_exact(features) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let c = v - m;
            *s += c * c;
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

impl<'a> Cache<'a> {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Normalization statistics observed in a train-mode pass (empty in eval mode).
    pub fn batch_stats(&self) -> &BatchStats {
        &self.stats
    }

    /// Reverse-mode pass returning the gradient with respect to every parameter.
    pub fn backward(self, dlogits: &Tensor) -> Result<Vec<f64>> {
        let net = self.network;
        let classes = net.class_count();
        if dlogits.shape() != [self.batch, classes] {
            return Err(Error::Usage(format!(
                "upstream gradient has shape {:?} but the cached forward pass produced [{}, {}]",
                dlogits.shape(),
                self.batch,
                classes
            )));
        }
        let b = self.batch;
        let params = self.params;
        let mut grad = vec![0.0; net.param_count()];
        let mut dy = dlogits.data().to_vec();
        let mut seg_idx = net.layout.segments.len();
        let first_dense = net
            .spec
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Dense { .. }));

        for (li, (layer, saved)) in net.spec.layers.iter().zip(&self.saved).enumerate().rev() {
            match (*layer, saved) {
                (Layer::Dense { inputs, outputs, bias }, Saved::Dense { input }) => {
                    if bias {
                        seg_idx -= 1;
                        let s = net.layout.segments[seg_idx];
                        let gb = &mut grad[s.offset..s.offset + s.len];
                        for row in dy.chunks_exact(outputs) {
                            for (g, v) in gb.iter_mut().zip(row) {
                                *g += v;
                            }
                        }
                    }
                    seg_idx -= 1;
                    let s = net.layout.segments[seg_idx];
                    gemm(
                        outputs,
                        b,
                        inputs,
                        &dy,
                        true,
                        input,
                        false,
                        &mut grad[s.offset..s.offset + s.len],
                    );
                    if Some(li) != first_dense {
                        let weights = &params[s.offset..s.offset + s.len];
                        let mut dx = vec![0.0; b * inputs];
                        gemm(b, outputs, inputs, &dy, false, weights, false, &mut dx);
                        dy = dx;
                    }
                }
                (Layer::BatchNorm { features }, Saved::BatchNorm { normalized, inv_std, batch }) => {
                    if *batch {
                        let n = b as f64;
                        let mut sum_dy = vec![0.0; features];
                        let mut sum_dy_xhat = vec![0.0; features];
                        for (row, xr) in dy.chunks_exact(features).zip(normalized.chunks_exact(features)) {
                            for f in 0..features {
                                sum_dy[f] += row[f];
                                sum_dy_xhat[f] += row[f] * xr[f];
                            }
                        }
                        for (row, xr) in dy.chunks_exact_mut(features).zip(normalized.chunks_exact(features)) {
                            for f in 0..features {
                                row[f] = inv_std[f] / n
                                    * (n * row[f] - sum_dy[f] - xr[f] * sum_dy_xhat[f]);
                            }
                        }
                    } else {
                        for row in dy.chunks_exact_mut(features) {
                            for (v, s) in row.iter_mut().zip(inv_std) {
                                *v *= s;
                            }
                        }
                    }
                }
                (Layer::Relu, Saved::Relu { output }) => {
                    for (g, o) in dy.iter_mut().zip(output) {
                        if *o <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
                _ => unreachable!("cache entries follow the layer list"),
            }
        }
        Ok(grad)
    }
}
