//! Input preprocessing: resizing to the model resolution, edge-map
//! derivation, and the optional depth stand-in.

use crate::config::IMAGE_SIZE;
use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

/// Bilinear resample with a corner-aligned grid: output index i samples
/// source coordinate i * (S_in - 1) / (S_out - 1). Affine images are
/// reproduced exactly. Input is a [1,C,H,W] tensor already in [0,1].
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let d = img.dims();
    let (h, w) = (d.h(), d.w());
    if h < 2 || w < 2 {
        return Err(Error::Data(format!("cannot resize degenerate {h}x{w} image")));
    }
    if out_h < 2 || out_w < 2 {
        return Err(Error::Data("target size must be at least 2x2".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let sy = (h - 1) as f64 / (out_h - 1) as f64;
    let sx = (w - 1) as f64 / (out_w - 1) as f64;
    let mut out = vec![0.0; d.c() * out_h * out_w];
    for c in 0..d.c() {
        let src = &img.data()[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * out_h * out_w..(c + 1) * out_h * out_w];
        for oy in 0..out_h {
            let fy = oy as f64 * sy;
            let y0 = (fy.floor() as usize).min(h - 2);
            let ty = fy - y0 as f64;
            for ox in 0..out_w {
                let fx = ox as f64 * sx;
                let x0 = (fx.floor() as usize).min(w - 2);
                let tx = fx - x0 as f64;
                let a = src[y0 * w + x0];
                let b = src[y0 * w + x0 + 1];
                let c2 = src[(y0 + 1) * w + x0];
                let d2 = src[(y0 + 1) * w + x0 + 1];
                dst[oy * out_w + ox] =
                    a * (1.0 - ty) * (1.0 - tx) + b * (1.0 - ty) * tx + c2 * ty * (1.0 - tx) + d2 * ty * tx;
            }
        }
    }
    Tensor::new(Dims::new(1, d.c(), out_h, out_w), out)
}

/// Resize to the model resolution. Values are assumed normalized already
/// (the pnm loader divides by maxval).
pub fn resize_normalize(img: &Tensor) -> Result<Tensor> {
    resize_bilinear(img, IMAGE_SIZE, IMAGE_SIZE)
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

/// Sobel gradient magnitude of the channel-mean grayscale, with replicate
/// borders, normalized by the per-image maximum (all-zero if flat).
pub fn sobel_edge(rgb: &Tensor) -> Tensor {
    let d = rgb.dims();
    let (h, w) = (d.h(), d.w());
    let c_n = d.c();
    let mut gray = vec![0.0; h * w];
    for c in 0..c_n {
        let src = &rgb.data()[c * h * w..(c + 1) * h * w];
        for p in 0..h * w {
            gray[p] += src[p];
        }
    }
    for g in gray.iter_mut() {
        *g /= c_n as f64;
    }

    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut mag = vec![0.0; h * w];
    let mut max = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for (dy, row) in SOBEL_X.iter().enumerate() {
                for (dx, &k) in row.iter().enumerate() {
                    let yy = clamp(y as isize + dy as isize - 1, h);
                    let xx = clamp(x as isize + dx as isize - 1, w);
                    let v = gray[yy * w + xx];
                    gx += k * v;
                    // gy kernel is the transpose of gx.
                    gy += SOBEL_X[dx][dy] * v;
                }
            }
            let m = (gx * gx + gy * gy).sqrt();
            mag[y * w + x] = m;
            max = max.max(m);
        }
    }
    if max > 0.0 {
        for m in mag.iter_mut() {
            *m /= max;
        }
    }
    Tensor::new(Dims::new(1, 1, h, w), mag).expect("sized above")
}

/// Grayscale box-blur proxy for a missing depth map. This is a stand-in,
/// not a depth estimate; callers must opt in explicitly.
pub fn depth_proxy(rgb: &Tensor) -> Tensor {
    let d = rgb.dims();
    let (h, w) = (d.h(), d.w());
    let c_n = d.c();
    let mut gray = vec![0.0; h * w];
    for c in 0..c_n {
        let src = &rgb.data()[c * h * w..(c + 1) * h * w];
        for p in 0..h * w {
            gray[p] += src[p] / c_n as f64;
        }
    }
    // Two passes of a separable 9-wide box blur with replicate borders.
    for _ in 0..2 {
        gray = box_blur_axis(&gray, h, w, true);
        gray = box_blur_axis(&gray, h, w, false);
    }
    Tensor::new(Dims::new(1, 1, h, w), gray).expect("sized above")
}

fn box_blur_axis(src: &[f64], h: usize, w: usize, horizontal: bool) -> Vec<f64> {
    const R: isize = 4;
    let mut out = vec![0.0; src.len()];
    let norm = 1.0 / (2 * R + 1) as f64;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for k in -R..=R {
                let (yy, xx) = if horizontal {
                    (y as isize, (x as isize + k).clamp(0, w as isize - 1))
                } else {
                    ((y as isize + k).clamp(0, h as isize - 1), x as isize)
                };
                acc += src[yy as usize * w + xx as usize];
            }
            out[y * w + x] = acc * norm;
        }
    }
    out
}

/// Quantize a [0,1] tensor to 8 bits and back, so in-memory samples match
/// what a round trip through disk produces.
pub fn quantize8(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect();
    Tensor::new(t.dims(), data).expect("same size")
}

pub fn to_bytes8(t: &Tensor) -> Vec<u8> {
    t.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}
