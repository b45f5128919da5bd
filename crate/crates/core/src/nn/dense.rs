use rand::Rng;

use crate::error::{Error, Result};

/// Affine layer `y = W x + b`, `W` stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    pub fn from_parts(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::shape(format!(
                "{} weights and {} biases for a {inputs}->{outputs} layer",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self { inputs, outputs, weights, bias })
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn uniform_init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect();
        Self { inputs, outputs, weights, bias: vec![0.0; outputs] }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs {
            return Err(Error::shape(format!("input of length {} for {} inputs", x.len(), self.inputs)));
        }
        let mut y = self.bias.clone();
        for (yo, row) in y.iter_mut().zip(self.weights.chunks_exact(self.inputs)) {
            *yo += dot(row, x);
        }
        Ok(y)
    }

    /// Gradients `(dx, dW, db)` for upstream gradient `dy` at input `x`.
    pub fn backward(&self, x: &[f64], dy: &[f64]) -> Result<(Vec<f64>, DenseLayer)> {
        if x.len() != self.inputs || dy.len() != self.outputs {
            return Err(Error::shape("dense backward shapes"));
        }
        let mut grad = DenseLayer::zeros(self.inputs, self.outputs);
        let mut dx = vec![0.0; self.inputs];
        accumulate_backward(self, x, dy, &mut grad, &mut dx);
        Ok((dx, grad))
    }

    pub fn params(&self) -> [&[f64]; 2] {
        [&self.weights, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.weights, &mut self.bias]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds this sample's parameter gradient into `grad` and writes `dx`.
pub(crate) fn accumulate_backward(layer: &DenseLayer, x: &[f64], dy: &[f64], grad: &mut DenseLayer, dx: &mut [f64]) {
    dx.iter_mut().for_each(|v| *v = 0.0);
    let n = layer.inputs;
    for (o, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grad.bias[o] += d;
        let gw = &mut grad.weights[o * n..(o + 1) * n];
        let w = &layer.weights[o * n..(o + 1) * n];
        for j in 0..n {
            gw[j] += d * x[j];
            dx[j] += d * w[j];
        }
    }
}
