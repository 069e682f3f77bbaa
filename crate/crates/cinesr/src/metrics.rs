//! Image quality metrics and their cardiac-region variants.
//!
//! CardiacPSNR/CardiacSSIM restrict scoring to an automatically detected
//! heart box so the static background cannot dominate the score. The
//! detector thresholds the per-pixel temporal variance at its 95th
//! percentile, keeps the largest 4-connected component, and pads the
//! bounding box by 8 pixels. All constants are fixed here so every method
//! under comparison is scored on the same region.

use crate::dataio::VideoClip;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// PSNR reported for identical inputs instead of infinity.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const ROI_VARIANCE_PERCENTILE: f64 = 0.95;
const ROI_DILATION_PX: usize = 8;
const ROI_MIN_SIDE: usize = 16;

/// Axis-aligned region on the HR pixel grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl RoiBox {
    pub fn full_frame(h: usize, w: usize) -> Self {
        RoiBox { top: 0, left: 0, height: h, width: w }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn iou(&self, other: &RoiBox) -> f64 {
        let y0 = self.top.max(other.top);
        let x0 = self.left.max(other.left);
        let y1 = (self.top + self.height).min(other.top + other.height);
        let x1 = (self.left + self.width).min(other.left + other.width);
        if y1 <= y0 || x1 <= x0 {
            return 0.0;
        }
        let inter = ((y1 - y0) * (x1 - x0)) as f64;
        inter / ((self.area() + other.area()) as f64 - inter)
    }

    fn contains_frame(&self, h: usize, w: usize) -> bool {
        self.top + self.height <= h && self.left + self.width <= w
    }
}

/// Per-clip quality summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub video_id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub cardiac_psnr: f64,
    pub cardiac_ssim: f64,
    pub roi: RoiBox,
}

/// PSNR in dB with MSE pooled over all pixels and frames. Identical
/// inputs return the 100 dB cap.
pub fn psnr(a: &VideoClip, b: &VideoClip, data_range: f64) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "psnr shape mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if data_range <= 0.0 {
        return Err(Error::Config(format!(
            "data_range must be positive, got {data_range}"
        )));
    }
    Ok(psnr_slices(&a.data, &b.data, data_range))
}

fn psnr_slices(a: &[f64], b: &[f64], data_range: f64) -> f64 {
    let mse = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP_DB)
}

/// Mean local SSIM over a clip (mean across frames of per-frame SSIM).
pub fn ssim(a: &VideoClip, b: &VideoClip, data_range: f64) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "ssim shape mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (t, h, w) = a.dims();
    let mut acc = 0.0;
    for ti in 0..t {
        acc += ssim_frame(a.frame(ti), b.frame(ti), h, w, data_range)?;
    }
    Ok(acc / t as f64)
}

/// Gaussian-weighted local SSIM of one frame, averaged over all positions
/// where the full window fits.
pub fn ssim_frame(a: &[f64], b: &[f64], h: usize, w: usize, data_range: f64) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}-pixel SSIM window"
        )));
    }
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::Shape("ssim frame length mismatch".into()));
    }
    let c1 = (0.01 * data_range) * (0.01 * data_range);
    let c2 = (0.03 * data_range) * (0.03 * data_range);
    let kernel = gaussian_kernel();

    // Weighted local moments via separable filtering.
    let mu_a = filter_valid(a, h, w, &kernel);
    let mu_b = filter_valid(b, h, w, &kernel);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let e_aa = filter_valid(&aa, h, w, &kernel);
    let e_bb = filter_valid(&bb, h, w, &kernel);
    let e_ab = filter_valid(&ab, h, w, &kernel);

    let mut acc = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(acc / mu_a.len() as f64)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let center = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - center;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode filtering; output is (h-10) x (w-10).
fn filter_valid(img: &[f64], h: usize, w: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * img[y * w + x + k];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Detect the beating region of a clip from per-pixel temporal variance.
///
/// Static clips have an all-zero variance map, so no pixel exceeds the
/// strict threshold and the detector falls back to a centered box of half
/// the frame size.
pub fn detect_heart_roi(clip: &VideoClip) -> Result<RoiBox> {
    let (t, h, w) = clip.dims();
    if t < 4 {
        return Err(Error::Data(format!(
            "ROI detection needs at least 4 frames, got {t}"
        )));
    }
    // Population variance over time per pixel.
    let mut variance = vec![0.0; h * w];
    let inv_t = 1.0 / t as f64;
    for i in 0..h * w {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for ti in 0..t {
            let v = clip.frame(ti)[i];
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum * inv_t;
        variance[i] = (sum_sq * inv_t - mean * mean).max(0.0);
    }

    // Nearest-rank 95th percentile.
    let mut sorted = variance.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((ROI_VARIANCE_PERCENTILE * sorted.len() as f64).ceil() as usize).max(1);
    let threshold = sorted[rank - 1];

    let mask: Vec<bool> = variance.iter().map(|&v| v > threshold).collect();
    let component = largest_component(&mask, h, w);
    let Some((top, left, bottom, right)) = component else {
        return Ok(centered_fallback(h, w));
    };

    let top = top.saturating_sub(ROI_DILATION_PX);
    let left = left.saturating_sub(ROI_DILATION_PX);
    let bottom = (bottom + ROI_DILATION_PX).min(h - 1);
    let right = (right + ROI_DILATION_PX).min(w - 1);
    let mut roi = RoiBox {
        top,
        left,
        height: bottom - top + 1,
        width: right - left + 1,
    };
    ensure_min_side(&mut roi, h, w);
    Ok(roi)
}

fn centered_fallback(h: usize, w: usize) -> RoiBox {
    let bh = (h / 2).max(ROI_MIN_SIDE.min(h));
    let bw = (w / 2).max(ROI_MIN_SIDE.min(w));
    RoiBox { top: (h - bh) / 2, left: (w - bw) / 2, height: bh, width: bw }
}

/// Grow an undersized box in place (border clamping can shrink it below
/// the 16-pixel minimum).
fn ensure_min_side(roi: &mut RoiBox, h: usize, w: usize) {
    if roi.height < ROI_MIN_SIDE && h >= ROI_MIN_SIDE {
        let grow = ROI_MIN_SIDE - roi.height;
        roi.top = roi.top.saturating_sub(grow).min(h - ROI_MIN_SIDE);
        roi.height = ROI_MIN_SIDE;
    }
    if roi.width < ROI_MIN_SIDE && w >= ROI_MIN_SIDE {
        let grow = ROI_MIN_SIDE - roi.width;
        roi.left = roi.left.saturating_sub(grow).min(w - ROI_MIN_SIDE);
        roi.width = ROI_MIN_SIDE;
    }
}

/// Bounding box of the largest 4-connected true region, by pixel count;
/// ties break on scan order.
fn largest_component(mask: &[bool], h: usize, w: usize) -> Option<(usize, usize, usize, usize)> {
    let mut visited = vec![false; mask.len()];
    let mut best: Option<(usize, (usize, usize, usize, usize))> = None;
    let mut queue = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || visited[start] {
            continue;
        }
        let mut count = 0;
        let (mut top, mut left, mut bottom, mut right) = (h, w, 0, 0);
        queue.push(start);
        visited[start] = true;
        while let Some(i) = queue.pop() {
            count += 1;
            let (y, x) = (i / w, i % w);
            top = top.min(y);
            bottom = bottom.max(y);
            left = left.min(x);
            right = right.max(x);
            let mut push = |j: usize| {
                if mask[j] && !visited[j] {
                    visited[j] = true;
                    queue.push(j);
                }
            };
            if y > 0 {
                push(i - w);
            }
            if y + 1 < h {
                push(i + w);
            }
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < w {
                push(i + 1);
            }
        }
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, (top, left, bottom, right)));
        }
    }
    best.map(|(_, b)| b)
}

fn crop_roi(clip: &VideoClip, roi: &RoiBox) -> Result<VideoClip> {
    let (t, _, _) = clip.dims();
    clip.crop(0, t, roi.top, roi.left, roi.height, roi.width)
}

/// Full scoring of an SR clip against its HR reference. The ROI comes
/// from the HR clip only, so every method under comparison shares it.
/// All four scores are means over frames.
pub fn cardiac_metrics(sr: &VideoClip, hr: &VideoClip, video_id: &str) -> Result<MetricReport> {
    cardiac_metrics_with_roi(sr, hr, None, video_id)
}

/// Like [`cardiac_metrics`] but with an explicit ROI override (used to
/// force full-frame scoring).
pub fn cardiac_metrics_with_roi(
    sr: &VideoClip,
    hr: &VideoClip,
    roi: Option<RoiBox>,
    video_id: &str,
) -> Result<MetricReport> {
    if sr.dims() != hr.dims() {
        return Err(Error::Shape(format!(
            "metric shape mismatch: {:?} vs {:?}",
            sr.dims(),
            hr.dims()
        )));
    }
    let (t, h, w) = hr.dims();
    let roi = match roi {
        Some(r) if r.contains_frame(h, w) => r,
        Some(r) => {
            return Err(Error::Shape(format!(
                "roi {r:?} exceeds frame {h}x{w}"
            )))
        }
        None => detect_heart_roi(hr)?,
    };
    let sr_roi = crop_roi(sr, &roi)?;
    let hr_roi = crop_roi(hr, &roi)?;

    let mut psnr_full = 0.0;
    let mut ssim_full = 0.0;
    let mut psnr_roi = 0.0;
    let mut ssim_roi = 0.0;
    for ti in 0..t {
        psnr_full += psnr_slices(sr.frame(ti), hr.frame(ti), 1.0);
        ssim_full += ssim_frame(sr.frame(ti), hr.frame(ti), h, w, 1.0)?;
        psnr_roi += psnr_slices(sr_roi.frame(ti), hr_roi.frame(ti), 1.0);
        ssim_roi += ssim_frame(sr_roi.frame(ti), hr_roi.frame(ti), roi.height, roi.width, 1.0)?;
    }
    let n = t as f64;
    Ok(MetricReport {
        video_id: video_id.to_string(),
        psnr: psnr_full / n,
        ssim: ssim_full / n,
        cardiac_psnr: psnr_roi / n,
        cardiac_ssim: ssim_roi / n,
        roi,
    })
}
