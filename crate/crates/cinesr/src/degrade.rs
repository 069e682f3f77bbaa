//! Acquisition-mimicking degradation: per-frame frequency-domain low-pass,
//! inverse transform, then bicubic downsampling.
//!
//! The low-pass keeps a centered rectangle of the 2-D spectrum (separable
//! mask, conjugate-symmetric so real images stay real). The retained
//! half-width per axis is floor(cutoff * n / 2), so `cutoff = 1` keeps the
//! whole spectrum including the Nyquist bin.

use crate::dataio::VideoClip;
use crate::error::{Error, Result};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DegradeConfig {
    /// Downsampling factor r.
    pub scale: u32,
    /// Fraction of each frequency axis retained by the low-pass.
    pub cutoff_fraction: f64,
}

impl DegradeConfig {
    /// Default cutoff 1/r: retained bandwidth matches the target sampling
    /// rate.
    pub fn new(scale: u32) -> Result<Self> {
        let cfg = DegradeConfig { scale, cutoff_fraction: 1.0 / scale as f64 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_cutoff(scale: u32, cutoff_fraction: f64) -> Result<Self> {
        let cfg = DegradeConfig { scale, cutoff_fraction };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if ![2, 3, 4].contains(&self.scale) {
            return Err(Error::Config(format!(
                "scale must be one of 2, 3, 4, got {}",
                self.scale
            )));
        }
        if !(self.cutoff_fraction > 0.0 && self.cutoff_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "cutoff_fraction must be in (0, 1], got {}",
                self.cutoff_fraction
            )));
        }
        Ok(())
    }
}

/// Retained half-width of the centered frequency rectangle for one axis.
fn retained_half_width(n: usize, cutoff: f64) -> usize {
    // Guard against 1/3-style cutoffs landing a hair below an integer.
    ((cutoff * n as f64 / 2.0) + 1e-9).floor() as usize
}

fn bin_retained(k: usize, n: usize, half: usize) -> bool {
    k.min(n - k) <= half
}

/// Zero all spectral coefficients outside the centered rectangle, inverse
/// transform, return the real part.
pub fn lowpass_filter(frame: &[f64], h: usize, w: usize, cutoff_fraction: f64) -> Result<Vec<f64>> {
    if !(cutoff_fraction > 0.0 && cutoff_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "cutoff_fraction must be in (0, 1], got {cutoff_fraction}"
        )));
    }
    if frame.len() != h * w {
        return Err(Error::Shape(format!(
            "frame length {} does not match {h}x{w}",
            frame.len()
        )));
    }
    if frame.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite pixel in low-pass input".into()));
    }

    let mut spectrum: Vec<Complex64> = frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2d(&mut spectrum, h, w, false);

    let half_h = retained_half_width(h, cutoff_fraction);
    let half_w = retained_half_width(w, cutoff_fraction);
    for ky in 0..h {
        let keep_row = bin_retained(ky, h, half_h);
        for kx in 0..w {
            if !(keep_row && bin_retained(kx, w, half_w)) {
                spectrum[ky * w + kx] = Complex64::new(0.0, 0.0);
            }
        }
    }

    fft2d(&mut spectrum, h, w, true);
    let norm = 1.0 / (h * w) as f64;
    let scale_ref = frame.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut out = Vec::with_capacity(frame.len());
    for c in &spectrum {
        let re = c.re * norm;
        let im = c.im * norm;
        assert!(
            im.abs() <= 1e-10 * scale_ref,
            "imaginary residue {im} exceeds tolerance"
        );
        out.push(re);
    }
    Ok(out)
}

/// Row-column 2-D FFT, unnormalized (caller divides by h*w after the
/// inverse).
fn fft2d(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    for row in buf.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

/// Keys cubic kernel, a = -0.5.
fn keys_weight(s: f64) -> f64 {
    let s = s.abs();
    if s <= 1.0 {
        (1.5 * s - 2.5) * s * s + 1.0
    } else if s < 2.0 {
        ((-0.5 * s + 2.5) * s - 4.0) * s + 2.0
    } else {
        0.0
    }
}

/// Separable bicubic resampling with pixel-center alignment and
/// edge-replicating boundaries.
pub fn bicubic_resize(
    frame: &[f64],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<f64>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!(
            "output size must be >= 1, got {out_h}x{out_w}"
        )));
    }
    if frame.len() != h * w {
        return Err(Error::Shape(format!(
            "frame length {} does not match {h}x{w}",
            frame.len()
        )));
    }
    let horizontal = resample_axis(frame, h, w, out_w, true);
    Ok(resample_axis(&horizontal, h, out_w, out_h, false))
}

fn resample_axis(data: &[f64], h: usize, w: usize, out_len: usize, along_rows: bool) -> Vec<f64> {
    let (in_len, other) = if along_rows { (w, h) } else { (h, w) };
    let ratio = in_len as f64 / out_len as f64;
    // Tap positions and weights depend only on the output index.
    let mut taps = Vec::with_capacity(out_len);
    for o in 0..out_len {
        let src = (o as f64 + 0.5) * ratio - 0.5;
        let base = src.floor();
        let frac = src - base;
        let idx = |d: i64| -> usize { (base as i64 + d).clamp(0, in_len as i64 - 1) as usize };
        let weights = [
            keys_weight(frac + 1.0),
            keys_weight(frac),
            keys_weight(1.0 - frac),
            keys_weight(2.0 - frac),
        ];
        taps.push(([idx(-1), idx(0), idx(1), idx(2)], weights));
    }

    let (out_h, out_w) = if along_rows { (other, out_len) } else { (out_len, other) };
    let mut out = vec![0.0; out_h * out_w];
    for j in 0..other {
        for (o, (idx, wgt)) in taps.iter().enumerate() {
            let mut acc = 0.0;
            for t in 0..4 {
                let v = if along_rows {
                    data[j * w + idx[t]]
                } else {
                    data[idx[t] * w + j]
                };
                acc += wgt[t] * v;
            }
            if along_rows {
                out[j * out_w + o] = acc;
            } else {
                out[o * out_w + j] = acc;
            }
        }
    }
    out
}

/// Convenience for evaluation baselines: bicubic upscaling of a whole clip.
pub fn bicubic_upscale_clip(clip: &VideoClip, scale: u32) -> Result<VideoClip> {
    let (t, h, w) = clip.dims();
    let (oh, ow) = (h * scale as usize, w * scale as usize);
    let mut frames = Vec::with_capacity(t * oh * ow);
    for ti in 0..t {
        frames.extend(bicubic_resize(clip.frame(ti), h, w, oh, ow)?);
    }
    let mut out = VideoClip::new(frames, t, oh, ow)?;
    out.t_start = clip.t_start;
    out.spacing = clip.spacing.map(|(sy, sx)| (sy / scale as f64, sx / scale as f64));
    Ok(out)
}

/// Full degradation: per-frame low-pass at the configured cutoff, then
/// bicubic downsampling to (h/r, w/r). Frame order and count are
/// preserved.
pub fn degrade_clip(clip: &VideoClip, cfg: &DegradeConfig) -> Result<VideoClip> {
    cfg.validate()?;
    let (t, h, w) = clip.dims();
    let r = cfg.scale as usize;
    if h % r != 0 {
        return Err(Error::Shape(format!("height {h} not divisible by scale {r}")));
    }
    if w % r != 0 {
        return Err(Error::Shape(format!("width {w} not divisible by scale {r}")));
    }
    let (lh, lw) = (h / r, w / r);
    let frames: Vec<Vec<f64>> = (0..t)
        .into_par_iter()
        .map(|ti| {
            let filtered = lowpass_filter(clip.frame(ti), h, w, cfg.cutoff_fraction)?;
            bicubic_resize(&filtered, h, w, lh, lw)
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(t * lh * lw);
    for f in frames {
        data.extend(f);
    }
    let mut out = VideoClip::new(data, t, lh, lw)?;
    out.t_start = clip.t_start;
    out.spacing = clip.spacing.map(|(sy, sx)| (sy * r as f64, sx * r as f64));
    Ok(out)
}
