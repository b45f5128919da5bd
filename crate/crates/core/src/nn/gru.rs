//! Gated recurrent unit with explicit backward pass, and the cell sequencing
//! used to run it over a CNN feature map with circular width padding.
//!
//! Gate layout follows the common `(reset, update, candidate)` stacking:
//!
//! ```text
//! r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//! z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * n + z * h
//! ```

use rand::Rng;

use super::dense::dot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `3·hidden × input`, row blocks r, z, n.
    pub w_ih: Vec<f64>,
    /// `3·hidden × hidden`, row blocks r, z, n.
    pub w_hh: Vec<f64>,
    pub b_ih: Vec<f64>,
    pub b_hh: Vec<f64>,
}

impl GruCellParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let g = 3 * hidden_size;
        Self {
            input_size,
            hidden_size,
            w_ih: vec![0.0; g * input_size],
            w_hh: vec![0.0; g * hidden_size],
            b_ih: vec![0.0; g],
            b_hh: vec![0.0; g],
        }
    }

    pub fn uniform_init<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden_size as f64).sqrt();
        let mut p = Self::zeros(input_size, hidden_size);
        for v in p.w_ih.iter_mut().chain(&mut p.w_hh).chain(&mut p.b_ih).chain(&mut p.b_hh) {
            *v = rng.random_range(-k..k);
        }
        p
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w_ih, &mut self.w_hh, &mut self.b_ih, &mut self.b_hh]
    }
}

/// Activations kept for the backward pass of one step.
#[derive(Debug, Clone)]
pub struct GruCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter().zip(w.chunks_exact(cols)).map(|(b, row)| b + dot(row, x)).collect()
}

pub fn gru_cell(x: &[f64], h_prev: &[f64], p: &GruCellParams) -> Result<(Vec<f64>, GruCache)> {
    if x.len() != p.input_size || h_prev.len() != p.hidden_size {
        return Err(Error::shape(format!(
            "GRU step with input {} / hidden {}, expected {} / {}",
            x.len(),
            h_prev.len(),
            p.input_size,
            p.hidden_size
        )));
    }
    let c = p.hidden_size;
    let gi = affine(&p.w_ih, &p.b_ih, x);
    let gh = affine(&p.w_hh, &p.b_hh, h_prev);
    let r: Vec<f64> = (0..c).map(|j| sigmoid(gi[j] + gh[j])).collect();
    let z: Vec<f64> = (0..c).map(|j| sigmoid(gi[c + j] + gh[c + j])).collect();
    let hn = gh[2 * c..].to_vec();
    let n: Vec<f64> = (0..c).map(|j| (gi[2 * c + j] + r[j] * hn[j]).tanh()).collect();
    let h: Vec<f64> = (0..c).map(|j| (1.0 - z[j]) * n[j] + z[j] * h_prev[j]).collect();
    Ok((h, GruCache { x: x.to_vec(), h_prev: h_prev.to_vec(), r, z, n, hn }))
}

/// Backward through one step. Parameter gradients accumulate into `grads`;
/// returns `(dx, dh_prev)`.
pub fn gru_cell_backward(
    dh: &[f64],
    cache: &GruCache,
    p: &GruCellParams,
    grads: &mut GruCellParams,
) -> (Vec<f64>, Vec<f64>) {
    let c = p.hidden_size;
    let (ni, nh) = (p.input_size, p.hidden_size);
    let mut d_in = vec![0.0; 3 * c];
    let mut d_hid = vec![0.0; 3 * c];
    let mut dh_prev = vec![0.0; c];
    for j in 0..c {
        let (r, z, n) = (cache.r[j], cache.z[j], cache.n[j]);
        let dn = dh[j] * (1.0 - z);
        let dz = dh[j] * (cache.h_prev[j] - n);
        dh_prev[j] = dh[j] * z;
        let dan = dn * (1.0 - n * n);
        let dr = dan * cache.hn[j];
        let daz = dz * z * (1.0 - z);
        let dar = dr * r * (1.0 - r);
        d_in[j] = dar;
        d_in[c + j] = daz;
        d_in[2 * c + j] = dan;
        d_hid[j] = dar;
        d_hid[c + j] = daz;
        d_hid[2 * c + j] = dan * r;
    }

    let mut dx = vec![0.0; ni];
    for (g, &d) in d_in.iter().enumerate() {
        grads.b_ih[g] += d;
        for k in 0..ni {
            grads.w_ih[g * ni + k] += d * cache.x[k];
            dx[k] += d * p.w_ih[g * ni + k];
        }
    }
    for (g, &d) in d_hid.iter().enumerate() {
        grads.b_hh[g] += d;
        for k in 0..nh {
            grads.w_hh[g * nh + k] += d * cache.h_prev[k];
            dh_prev[k] += d * p.w_hh[g * nh + k];
        }
    }
    (dx, dh_prev)
}

/// `h × w × c` row-major feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape("feature map data length"));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let o = (row * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }
}

/// Flattens the map row by row into cells; each row is prefixed with copies
/// of its last `pad` columns so the recurrent state is warm at column 0.
pub fn sequence_cells(map: &FeatureMap, pad: usize) -> Result<Vec<Vec<f64>>> {
    if pad >= map.width {
        return Err(Error::invalid(format!("pad {pad} must be smaller than width {}", map.width)));
    }
    let mut cells = Vec::with_capacity(map.height * (map.width + pad));
    for row in 0..map.height {
        for col in map.width - pad..map.width {
            cells.push(map.cell(row, col).to_vec());
        }
        for col in 0..map.width {
            cells.push(map.cell(row, col).to_vec());
        }
    }
    Ok(cells)
}

/// Inverse of [`sequence_cells`]: drops padding outputs and restores the layout.
pub fn stack_cells(outputs: &[Vec<f64>], height: usize, width: usize, pad: usize) -> Result<FeatureMap> {
    if outputs.len() != height * (width + pad) {
        return Err(Error::shape(format!(
            "{} cells for a {height}x{width} map with pad {pad}",
            outputs.len()
        )));
    }
    let channels = outputs.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(height * width * channels);
    for row in outputs.chunks_exact(width + pad) {
        for cell in &row[pad..] {
            if cell.len() != channels {
                return Err(Error::shape("ragged cell outputs"));
            }
            data.extend_from_slice(cell);
        }
    }
    FeatureMap::new(height, width, channels, data)
}

/// Runs the GRU over the padded cell sequence of `map` from a zero state and
/// returns the stacked hidden states (pad outputs dropped).
pub fn gru_feature_map(map: &FeatureMap, pad: usize, p: &GruCellParams) -> Result<(FeatureMap, Vec<GruCache>)> {
    let cells = sequence_cells(map, pad)?;
    let mut h = vec![0.0; p.hidden_size];
    let mut outputs = Vec::with_capacity(cells.len());
    let mut caches = Vec::with_capacity(cells.len());
    for x in &cells {
        let (next, cache) = gru_cell(x, &h, p)?;
        outputs.push(next.clone());
        caches.push(cache);
        h = next;
    }
    Ok((stack_cells(&outputs, map.height, map.width, pad)?, caches))
}

/// Backpropagation through the whole padded sequence. Padding cells are
/// copies of their row's tail, so their input gradient is added back there.
pub fn gru_feature_map_backward(
    d_out: &FeatureMap,
    pad: usize,
    caches: &[GruCache],
    p: &GruCellParams,
) -> Result<(GruCellParams, FeatureMap)> {
    let (h, w) = (d_out.height, d_out.width);
    if caches.len() != h * (w + pad) || d_out.channels != p.hidden_size {
        return Err(Error::shape("GRU sequence backward shapes"));
    }
    let mut grads = GruCellParams::zeros(p.input_size, p.hidden_size);
    let mut d_in = vec![0.0; h * w * p.input_size];
    let mut dh_next = vec![0.0; p.hidden_size];
    for t in (0..caches.len()).rev() {
        let (row, pos) = (t / (w + pad), t % (w + pad));
        let mut dh = dh_next.clone();
        if pos >= pad {
            for (a, b) in dh.iter_mut().zip(d_out.cell(row, pos - pad)) {
                *a += b;
            }
        }
        let (dx, dh_prev) = gru_cell_backward(&dh, &caches[t], p, &mut grads);
        let col = if pos >= pad { pos - pad } else { w - pad + pos };
        let o = (row * w + col) * p.input_size;
        for (a, b) in d_in[o..o + p.input_size].iter_mut().zip(&dx) {
            *a += b;
        }
        dh_next = dh_prev;
    }
    Ok((grads, FeatureMap::new(h, w, p.input_size, d_in)?))
}
