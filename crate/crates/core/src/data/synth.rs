//! Synthetic splice-forgery generation.
//!
//! Each sample composites a donor-textured region (rectangle or ellipse)
//! onto a smooth background and records the exact pasted footprint as the
//! ground-truth mask. The pseudo-depth plane gives the background a smooth
//! ramp and the pasted region a distinct constant whose value overlaps the
//! ramp's range elsewhere, so no single threshold solves the task. Texture
//! amplitudes are budgeted so that background pixels never saturate and the
//! donor/background base colors differ by a fixed margin in every channel
//! with one shared sign: the seam stays the strongest edge in the image.
//!
//! Everything derives from an Rng substream of (seed, index), so a dataset
//! is reproducible byte for byte.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Dims, Tensor};

use super::preprocess::{quantize8, sobel_edge};

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    /// Pasted-region area as a fraction of the image, inclusive bounds.
    pub min_area_frac: f64,
    pub max_area_frac: f64,
}

impl SynthSpec {
    pub fn new(count: usize, seed: u64) -> SynthSpec {
        SynthSpec { count, size: crate::config::IMAGE_SIZE, seed, min_area_frac: 0.05, max_area_frac: 0.25 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::Config("synth size must be at least 16".into()));
        }
        if !(0.0 < self.min_area_frac && self.min_area_frac < self.max_area_frac && self.max_area_frac < 1.0)
        {
            return Err(Error::Config("area fraction range must satisfy 0 < min < max < 1".into()));
        }
        let min_pixels = (self.min_area_frac * (self.size * self.size) as f64).ceil() as usize;
        if min_pixels < 16 {
            return Err(Error::Config("area fraction range infeasible for this image size".into()));
        }
        Ok(())
    }
}

/// One rendered sample, 8-bit quantized, plus the donor-free background
/// render kept for verification.
pub struct SynthOutput {
    pub id: String,
    pub rgb: Tensor,
    pub edge: Tensor,
    pub depth: Tensor,
    pub mask: Tensor,
    pub background_rgb: Tensor,
}

pub fn sample_id(index: usize) -> String {
    format!("synth{index:05}")
}

struct Sinusoid {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

impl Sinusoid {
    fn sample(rng: &mut Rng, f_lo: f64, f_hi: f64, a_lo: f64, a_hi: f64) -> Sinusoid {
        Sinusoid {
            fx: rng.uniform_in(f_lo, f_hi) * if rng.below(2) == 0 { 1.0 } else { -1.0 },
            fy: rng.uniform_in(f_lo, f_hi),
            phase: rng.uniform_in(0.0, TAU),
            amp: rng.uniform_in(a_lo, a_hi),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.amp * (TAU * (self.fx * x + self.fy * y) + self.phase).sin()
    }
}

/// Pasted-region footprint as an exact pixel set.
fn sample_region(rng: &mut Rng, spec: &SynthSpec) -> Vec<bool> {
    let s = spec.size;
    let total = (s * s) as f64;
    let margin = 2usize;

    for _attempt in 0..64 {
        let frac = rng.uniform_in(spec.min_area_frac, spec.max_area_frac);
        let aspect = rng.uniform_in(0.6, 1.6);
        let mut mask = vec![false; s * s];
        let count;
        if rng.below(2) == 0 {
            let rw = ((frac * total * aspect).sqrt().round() as usize).clamp(4, s - 2 * margin);
            let rh = ((frac * total / rw as f64).round() as usize).clamp(4, s - 2 * margin);
            let x0 = margin + rng.below(s - 2 * margin - rw + 1);
            let y0 = margin + rng.below(s - 2 * margin - rh + 1);
            for y in y0..y0 + rh {
                mask[y * s + x0..y * s + x0 + rw].fill(true);
            }
            count = rw * rh;
        } else {
            let a = (frac * total * aspect / std::f64::consts::PI).sqrt();
            let b = frac * total / (std::f64::consts::PI * a);
            let (a, b) = (a.max(3.0), b.max(3.0));
            if 2.0 * a >= (s - 2 * margin) as f64 || 2.0 * b >= (s - 2 * margin) as f64 {
                continue;
            }
            let cx = rng.uniform_in(margin as f64 + a, (s - margin) as f64 - a);
            let cy = rng.uniform_in(margin as f64 + b, (s - margin) as f64 - b);
            let mut painted = 0usize;
            for y in 0..s {
                for x in 0..s {
                    let dx = (x as f64 + 0.5 - cx) / a;
                    let dy = (y as f64 + 0.5 - cy) / b;
                    if dx * dx + dy * dy <= 1.0 {
                        mask[y * s + x] = true;
                        painted += 1;
                    }
                }
            }
            count = painted;
        }
        let got = count as f64 / total;
        if got >= spec.min_area_frac && got <= spec.max_area_frac {
            return mask;
        }
    }

    // Deterministic fallback: centered square at the mid fraction.
    let frac = 0.5 * (spec.min_area_frac + spec.max_area_frac);
    let side = ((frac * total).sqrt().round() as usize).clamp(4, s - 2 * margin);
    let x0 = (s - side) / 2;
    let mut mask = vec![false; s * s];
    for y in x0..x0 + side {
        mask[y * s + x0..y * s + x0 + side].fill(true);
    }
    mask
}

pub fn synth_sample(spec: &SynthSpec, index: usize) -> Result<SynthOutput> {
    spec.validate()?;
    let s = spec.size;
    let sf = s as f64;
    let mut rng = Rng::substream(spec.seed, index as u64);

    // Background: per-channel affine ramp plus three low-frequency waves.
    let bg_base: Vec<f64> = (0..3).map(|_| rng.uniform_in(0.35, 0.62)).collect();
    let ramps: Vec<(f64, f64)> =
        (0..3).map(|_| (rng.uniform_in(-0.08, 0.08), rng.uniform_in(-0.08, 0.08))).collect();
    let waves: Vec<Vec<Sinusoid>> = (0..3)
        .map(|_| (0..3).map(|_| Sinusoid::sample(&mut rng, 1.0, 4.0, 0.015, 0.03)).collect())
        .collect();

    // Donor: base shifted by a margin with one sign for all channels (keeps
    // the seam visible in grayscale), plus a mid-frequency pattern.
    let sign = if bg_base.iter().sum::<f64>() / 3.0 <= 0.485 { 1.0 } else { -1.0 };
    let donor_base: Vec<f64> =
        bg_base.iter().map(|&b| b + sign * rng.uniform_in(0.22, 0.3)).collect();
    let donor_waves: Vec<Sinusoid> =
        (0..3).map(|_| Sinusoid::sample(&mut rng, 6.0, 12.0, 0.04, 0.07)).collect();

    let region = sample_region(&mut rng, spec);

    // Depth: smooth background ramp; constant plateau on the pasted region,
    // forced away from the ramp value at the region's centroid.
    let d0 = rng.uniform_in(0.15, 0.45);
    let (dgx, dgy) = (rng.uniform_in(-0.35, 0.35), rng.uniform_in(-0.35, 0.35));
    let ramp_at = |x: f64, y: f64| (d0 + dgx * x / sf + dgy * y / sf).clamp(0.02, 0.98);
    let (mut cx, mut cy, mut cn) = (0.0, 0.0, 0usize);
    for (p, &inside) in region.iter().enumerate() {
        if inside {
            cx += (p % s) as f64;
            cy += (p / s) as f64;
            cn += 1;
        }
    }
    let (cx, cy) = (cx / cn as f64, cy / cn as f64);
    let mut plateau = rng.uniform_in(0.1, 0.95);
    for _ in 0..32 {
        if (plateau - ramp_at(cx, cy)).abs() >= 0.15 {
            break;
        }
        plateau = rng.uniform_in(0.1, 0.95);
    }
    if (plateau - ramp_at(cx, cy)).abs() < 0.15 {
        let v = ramp_at(cx, cy);
        plateau = if v < 0.5 { v + 0.25 } else { v - 0.25 };
    }

    let mut background = vec![0.0; 3 * s * s];
    let mut composite = vec![0.0; 3 * s * s];
    let mut depth = vec![0.0; s * s];
    for y in 0..s {
        for x in 0..s {
            let (xf, yf) = (x as f64 / sf, y as f64 / sf);
            let p = y * s + x;
            for c in 0..3 {
                let mut v = bg_base[c] + ramps[c].0 * xf + ramps[c].1 * yf;
                for wave in &waves[c] {
                    v += wave.at(xf, yf);
                }
                let v = v.clamp(0.0, 1.0);
                background[c * s * s + p] = v;
                composite[c * s * s + p] = if region[p] {
                    (donor_base[c] + donor_waves[c].at(xf, yf)).clamp(0.0, 1.0)
                } else {
                    v
                };
            }
            depth[p] = if region[p] { plateau } else { ramp_at(x as f64, y as f64) };
        }
    }

    let dims3 = Dims::new(1, 3, s, s);
    let dims1 = Dims::new(1, 1, s, s);
    let rgb = quantize8(&Tensor::new(dims3, composite)?);
    let background_rgb = quantize8(&Tensor::new(dims3, background)?);
    let edge = quantize8(&sobel_edge(&rgb));
    let depth = quantize8(&Tensor::new(dims1, depth)?);
    let mask = Tensor::new(dims1, region.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())?;

    Ok(SynthOutput { id: sample_id(index), rgb, edge, depth, mask, background_rgb })
}
