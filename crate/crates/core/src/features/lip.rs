//! Lip region preprocessing: grayscale square crops resized to the encoder
//! input size.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LIP_SIZE: usize = 88;

/// One square grayscale frame, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

/// `[time, 1, 88, 88]` grayscale lip frames.
#[derive(Clone, Debug, PartialEq)]
pub struct LipFrames {
    pub frames: Tensor,
}

impl LipFrames {
    pub fn time(&self) -> usize {
        self.frames.shape()[0]
    }
}

/// Bilinear resize with corner pixels aligned, so source corners map to
/// output corners exactly.
pub fn resize_bilinear(src: &[f64], size: usize, out: usize) -> Vec<f64> {
    if size == out {
        return src.to_vec();
    }
    let scale = if out > 1 {
        (size - 1) as f64 / (out - 1) as f64
    } else {
        0.0
    };
    let sample = |o: usize| {
        let pos = o as f64 * scale;
        let i0 = (pos.floor() as usize).min(size - 1);
        let i1 = (i0 + 1).min(size - 1);
        (i0, i1, pos - i0 as f64)
    };
    let axis: Vec<(usize, usize, f64)> = (0..out).map(sample).collect();
    let mut dst = Vec::with_capacity(out * out);
    for &(y0, y1, fy) in &axis {
        for &(x0, x1, fx) in &axis {
            let top = src[y0 * size + x0] * (1.0 - fx) + src[y0 * size + x1] * fx;
            let bottom = src[y1 * size + x0] * (1.0 - fx) + src[y1 * size + x1] * fx;
            dst.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    dst
}

pub fn preprocess_lip(raw: &[RawFrame]) -> Result<LipFrames> {
    if raw.is_empty() {
        return Err(Error::contract("no lip frames"));
    }
    let mut data = Vec::with_capacity(raw.len() * LIP_SIZE * LIP_SIZE);
    for (i, f) in raw.iter().enumerate() {
        if f.height != f.width || f.height == 0 {
            return Err(Error::contract(format!(
                "lip frame {i} is {}x{}, expected a square crop",
                f.height, f.width
            )));
        }
        if f.pixels.len() != f.height * f.width {
            return Err(Error::shape(
                "preprocess_lip",
                format!("frame {i} has {} pixels", f.pixels.len()),
            ));
        }
        if f.pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::contract(format!(
                "lip frame {i} has pixels outside [0, 1]"
            )));
        }
        data.extend(resize_bilinear(&f.pixels, f.height, LIP_SIZE));
    }
    Ok(LipFrames {
        frames: Tensor::new(vec![raw.len(), 1, LIP_SIZE, LIP_SIZE], data)?,
    })
}
