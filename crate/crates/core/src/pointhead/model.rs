use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::neighborhood::{FeatureOptions, PointFeatures, SetFeatures};
use crate::nn::{accumulate_backward, dot, set_maxpool, softmax_ce, DenseLayer};

pub const DEFAULT_WIDTHS: [usize; 3] = [64, 64, 64];

/// Shared three-layer ReLU MLP over the neighbor set, column max-pool, then a
/// linear classifier over `[pooled | point features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointHeadModel {
    pub num_classes: usize,
    pub neighbors: usize,
    pub features: FeatureOptions,
    pub mlp: [DenseLayer; 3],
    pub fc: DenseLayer,
}

/// One training example.
#[derive(Debug, Clone)]
pub struct HeadSample {
    pub point: PointFeatures,
    pub set: SetFeatures,
    pub target: u32,
}

/// Gradients with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub mlp: [DenseLayer; 3],
    pub fc: DenseLayer,
}

impl HeadGradients {
    fn zeros_like(model: &PointHeadModel) -> Self {
        let z = |l: &DenseLayer| DenseLayer::zeros(l.inputs, l.outputs);
        Self { mlp: [z(&model.mlp[0]), z(&model.mlp[1]), z(&model.mlp[2])], fc: z(&model.fc) }
    }

    fn add(&mut self, other: &HeadGradients) {
        for (a, b) in self.layers_mut().into_iter().zip(other.layers()) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, s: f64) {
        for l in self.layers_mut() {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= s);
        }
    }

    pub fn layers(&self) -> [&DenseLayer; 4] {
        [&self.mlp[0], &self.mlp[1], &self.mlp[2], &self.fc]
    }

    fn layers_mut(&mut self) -> [&mut DenseLayer; 4] {
        let [a, b, c] = &mut self.mlp;
        [a, b, c, &mut self.fc]
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers().iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }
}

/// Per-sample activations for backward.
struct Trace {
    /// Pre-activations of each MLP layer, `rows × width`.
    pre: [Vec<f64>; 3],
    /// ReLU outputs of each MLP layer.
    post: [Vec<f64>; 3],
    argmax: Vec<usize>,
    fc_input: Vec<f64>,
}

impl PointHeadModel {
    pub fn init(
        num_classes: usize,
        neighbors: usize,
        widths: [usize; 3],
        features: FeatureOptions,
        seed: u64,
    ) -> Result<Self> {
        if widths.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if num_classes == 0 || neighbors == 0 {
            return Err(Error::invalid("point head needs K >= 1 and n >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set_width = features.set_width(num_classes);
        let mlp = [
            DenseLayer::uniform_init(set_width, widths[0], &mut rng),
            DenseLayer::uniform_init(widths[0], widths[1], &mut rng),
            DenseLayer::uniform_init(widths[1], widths[2], &mut rng),
        ];
        let fc = DenseLayer::uniform_init(widths[2] + features.point_width(num_classes), num_classes, &mut rng);
        Ok(Self { num_classes, neighbors, features, mlp, fc })
    }

    /// Rebuilds a model from checkpoint layers `[mlp0, mlp1, mlp2, fc]`.
    pub fn from_layers(layers: Vec<DenseLayer>, neighbors: usize, features: FeatureOptions) -> Result<Self> {
        let [m0, m1, m2, fc]: [DenseLayer; 4] = layers
            .try_into()
            .map_err(|v: Vec<DenseLayer>| Error::shape(format!("point head needs 4 layers, found {}", v.len())))?;
        let k = fc.outputs;
        let chained = m0.outputs == m1.inputs && m1.outputs == m2.inputs;
        if !chained
            || m0.inputs != features.set_width(k)
            || fc.inputs != m2.outputs + features.point_width(k)
        {
            return Err(Error::shape("checkpoint layers do not form a point head for these feature options"));
        }
        if neighbors == 0 {
            return Err(Error::invalid("neighbors must be positive"));
        }
        Ok(Self { num_classes: k, neighbors, features, mlp: [m0, m1, m2], fc })
    }

    pub fn layers(&self) -> [&DenseLayer; 4] {
        [&self.mlp[0], &self.mlp[1], &self.mlp[2], &self.fc]
    }

    pub fn to_layers(&self) -> Vec<DenseLayer> {
        self.layers().into_iter().cloned().collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers().iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("flat parameter length"));
        }
        let mut off = 0;
        let [a, b, c] = &mut self.mlp;
        for l in [a, b, c, &mut self.fc] {
            let (w, bias) = (l.weights.len(), l.bias.len());
            l.weights.copy_from_slice(&flat[off..off + w]);
            l.bias.copy_from_slice(&flat[off + w..off + w + bias]);
            off += w + bias;
        }
        Ok(())
    }

    pub(crate) fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let [a, b, c] = &mut self.mlp;
        [a, b, c, &mut self.fc].into_iter().flat_map(|l| l.params_mut()).collect()
    }

    fn check_shapes(&self, p: &PointFeatures, s: &SetFeatures) -> Result<()> {
        if s.cols != self.mlp[0].inputs || s.rows == 0 || s.data.len() != s.rows * s.cols {
            return Err(Error::shape(format!(
                "set features {}x{} for a head expecting width {}",
                s.rows, s.cols, self.mlp[0].inputs
            )));
        }
        if p.0.len() + self.mlp[2].outputs != self.fc.inputs {
            return Err(Error::shape(format!("point features of length {}", p.0.len())));
        }
        Ok(())
    }

    fn forward_trace(&self, p: &PointFeatures, s: &SetFeatures) -> Result<(Vec<f64>, Trace)> {
        self.check_shapes(p, s)?;
        let rows = s.rows;
        let mut input: &[f64] = &s.data;
        let mut pre: [Vec<f64>; 3] = Default::default();
        let mut post: [Vec<f64>; 3] = Default::default();
        for (l, layer) in self.mlp.iter().enumerate() {
            let mut z = Vec::with_capacity(rows * layer.outputs);
            for x in input.chunks_exact(layer.inputs) {
                for (b, w) in layer.bias.iter().zip(layer.weights.chunks_exact(layer.inputs)) {
                    z.push(b + dot(w, x));
                }
            }
            post[l] = z.iter().map(|&v| v.max(0.0)).collect();
            pre[l] = z;
            input = &post[l];
        }
        let width = self.mlp[2].outputs;
        let (pooled, argmax) = set_maxpool(&post[2], rows, width)?;
        let mut fc_input = pooled;
        fc_input.extend_from_slice(&p.0);
        let logits = self.fc.forward(&fc_input)?;
        Ok((logits, Trace { pre, post, argmax, fc_input }))
    }

    /// Class logits for one point.
    pub fn forward(&self, p: &PointFeatures, s: &SetFeatures) -> Result<Vec<f64>> {
        Ok(self.forward_trace(p, s)?.0)
    }

    /// Adds `d loss / d params` for one sample into `grads`, given `dlogits`.
    fn backward_sample(&self, s: &SetFeatures, trace: &Trace, dlogits: &[f64], grads: &mut HeadGradients) {
        let mut d_fc_in = vec![0.0; self.fc.inputs];
        accumulate_backward(&self.fc, &trace.fc_input, dlogits, &mut grads.fc, &mut d_fc_in);

        let rows = s.rows;
        let width = self.mlp[2].outputs;
        let mut d_post = vec![0.0; rows * width];
        for (c, &r) in trace.argmax.iter().enumerate() {
            d_post[r * width + c] += d_fc_in[c];
        }

        for l in (0..3).rev() {
            let layer = &self.mlp[l];
            let input: &[f64] = if l == 0 { &s.data } else { &trace.post[l - 1] };
            let mut d_input = vec![0.0; rows * layer.inputs];
            let mut dx = vec![0.0; layer.inputs];
            for r in 0..rows {
                let dz: Vec<f64> = (0..layer.outputs)
                    .map(|o| {
                        let idx = r * layer.outputs + o;
                        if trace.pre[l][idx] > 0.0 {
                            d_post[idx]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if dz.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let x = &input[r * layer.inputs..(r + 1) * layer.inputs];
                accumulate_backward(layer, x, &dz, &mut grads.mlp[l], &mut dx);
                d_input[r * layer.inputs..(r + 1) * layer.inputs].copy_from_slice(&dx);
            }
            d_post = d_input;
        }
    }

    /// Mean weighted cross-entropy over `batch` and its parameter gradient.
    ///
    /// The batch is split into fixed-size chunks accumulated in parallel and
    /// summed in chunk order, so results do not depend on the thread count.
    pub fn loss_and_gradients(&self, batch: &[HeadSample], class_weights: &[f64]) -> Result<(f64, HeadGradients)> {
        use rayon::prelude::*;
        const CHUNK: usize = 16;
        if batch.is_empty() {
            return Err(Error::Empty("empty training batch"));
        }
        if class_weights.len() != self.num_classes {
            return Err(Error::shape("class weight count"));
        }
        if let Some(b) = batch.iter().find(|b| b.target as usize >= self.num_classes) {
            return Err(Error::LabelOutOfRange { label: b.target, num_classes: self.num_classes });
        }
        let partials: Vec<Result<(f64, HeadGradients)>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = HeadGradients::zeros_like(self);
                let mut loss = 0.0;
                for sample in chunk {
                    let (logits, trace) = self.forward_trace(&sample.point, &sample.set)?;
                    let (l, dlogits) = softmax_ce(&logits, sample.target as usize, class_weights)?;
                    loss += l;
                    self.backward_sample(&sample.set, &trace, &dlogits, &mut grads);
                }
                Ok((loss, grads))
            })
            .collect();
        let mut total = HeadGradients::zeros_like(self);
        let mut loss = 0.0;
        for part in partials {
            let (l, g) = part?;
            loss += l;
            total.add(&g);
        }
        let inv = 1.0 / batch.len() as f64;
        total.scale(inv);
        Ok((loss * inv, total))
    }
}
