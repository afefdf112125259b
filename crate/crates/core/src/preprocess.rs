//! CSI frame to network input: antenna flattening, corner-aligned bilinear
//! upsampling to a square grid, and per-sample standardization.

use crate::csi::CsiFrame;
use crate::error::{Error, Result};

/// Side length of the square network input.
pub const INPUT_SIZE: usize = 136;
const STD_EPSILON: f64 = 1e-8;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{rows}x{cols} matrix needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Network input: one channel of `INPUT_SIZE x INPUT_SIZE`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub data: Vec<f64>,
}

impl InputTensor {
    pub const SHAPE: [usize; 3] = [1, INPUT_SIZE, INPUT_SIZE];

    pub fn shape(&self) -> [usize; 3] {
        Self::SHAPE
    }
}

/// Rows are subcarriers; column `a * packets + t` holds antenna `a`, packet `t`.
pub fn flatten_antennas(frame: &CsiFrame) -> Result<Matrix> {
    let [antennas, subcarriers, packets] = frame.shape();
    if antennas == 0 || subcarriers == 0 || packets == 0 {
        return Err(Error::Shape(format!("cannot flatten csi frame of shape {:?}", frame.shape())));
    }
    Ok(Matrix::from_fn(subcarriers, antennas * packets, |s, c| frame.get(c / packets, s, c % packets)))
}

// Corner-aligned source coordinate and its two neighbours with weights.
fn sample_grid(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            if pos.fract() == 0.0 {
                // on a source sample: read it directly
                let p = pos as usize;
                return (p, p, 0.0);
            }
            let lo = (pos.floor() as usize).min(src - 2);
            (lo, lo + 1, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resize with corner-aligned sampling: output index `i` reads source
/// coordinate `i * (H - 1) / (out_h - 1)`.
pub fn bilinear_resize(m: &Matrix, out_h: usize, out_w: usize) -> Result<Matrix> {
    if m.rows < 2 || m.cols < 2 {
        return Err(Error::Domain(format!("bilinear resize needs at least 2x2 input, got {}x{}", m.rows, m.cols)));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Domain("bilinear resize output must be non-empty".into()));
    }
    let ys = sample_grid(m.rows, out_h);
    let xs = sample_grid(m.cols, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, wy) in &ys {
        for &(x0, x1, wx) in &xs {
            let top = m.get(y0, x0) + wx * (m.get(y0, x1) - m.get(y0, x0));
            let bottom = m.get(y1, x0) + wx * (m.get(y1, x1) - m.get(y1, x0));
            out.push(top + wy * (bottom - top));
        }
    }
    Matrix::new(out_h, out_w, out)
}

/// `(m - mean) / (std + 1e-8)` with population statistics over all entries.
pub fn standardize(m: &Matrix) -> Matrix {
    let n = m.data.len() as f64;
    let mean = m.data.iter().sum::<f64>() / n;
    let var = m.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + STD_EPSILON;
    Matrix { rows: m.rows, cols: m.cols, data: m.data.iter().map(|v| (v - mean) / denom).collect() }
}

pub fn preprocess(frame: &CsiFrame) -> Result<InputTensor> {
    preprocess_to(frame, INPUT_SIZE)
}

/// Preprocess to a square of arbitrary side, for scaled-down networks.
pub fn preprocess_to(frame: &CsiFrame, size: usize) -> Result<InputTensor> {
    let resized = bilinear_resize(&flatten_antennas(frame)?, size, size)?;
    Ok(InputTensor { data: standardize(&resized).into_vec() })
}
