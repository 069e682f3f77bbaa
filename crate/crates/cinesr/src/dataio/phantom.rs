//! Synthetic beating-heart phantom: a concentric-ring "ventricle" whose
//! inner radius follows the phase code (largest cavity at end-diastole,
//! smallest at end-systole) over a static textured background.
//!
//! The construction is exactly periodic, so frame t and frame t + t_cycle
//! are bit-identical, and the annotated heart box is the rendered extent
//! of the outer ring.

use super::{AnnotationRecord, Split, VideoClip};
use crate::error::{Error, Result};
use crate::metrics::RoiBox;
use crate::phase::{phase_at, CardiacCycleSpec};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

const CAVITY_INTENSITY: f64 = 0.88;
const RING_INTENSITY: f64 = 0.22;
const EDGE_WIDTH: f64 = 1.5;

/// Generate one phantom video of `n_cycles * t_cycle` frames.
///
/// The background is a fixed sum of oriented sinusoids drawn from
/// `rng_seed`; ring radii are jittered from the same stream so different
/// seeds give geometrically distinct videos.
pub fn generate_phantom(
    t_cycle: u32,
    n_cycles: u32,
    height: usize,
    width: usize,
    ed: u32,
    es: u32,
    rng_seed: u64,
) -> Result<(VideoClip, AnnotationRecord)> {
    if height < 32 || width < 32 {
        return Err(Error::Config(format!(
            "phantom needs height, width >= 32, got {height}x{width}"
        )));
    }
    if t_cycle < 8 {
        return Err(Error::Config(format!(
            "phantom needs t_cycle >= 8, got {t_cycle}"
        )));
    }
    if n_cycles < 1 {
        return Err(Error::Config("phantom needs n_cycles >= 1".into()));
    }
    let cycle = CardiacCycleSpec::new(ed, es, t_cycle)?;

    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let background = textured_background(height, width, &mut rng);

    let m = height.min(width) as f64;
    let jitter = |rng: &mut ChaCha12Rng| 0.9 + 0.2 * rng.random::<f64>();
    let r_outer = 0.34 * m * jitter(&mut rng);
    let r_in_max = 0.62 * r_outer * jitter(&mut rng);
    let r_in_min = 0.34 * r_outer * jitter(&mut rng);
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;

    let total = (t_cycle * n_cycles) as usize;
    let mut data = Vec::with_capacity(total * height * width);
    // Render one cycle, then repeat it so periodicity is bit-exact by
    // construction.
    let mut first_cycle = Vec::with_capacity(t_cycle as usize * height * width);
    for t in 0..t_cycle as i64 {
        let p = phase_at(t, &cycle)?;
        let r_inner = r_in_min + (r_in_max - r_in_min) * (p + 1.0) / 2.0;
        render_frame(
            &background,
            height,
            width,
            cy,
            cx,
            r_inner,
            r_outer,
            &mut first_cycle,
        );
    }
    for _ in 0..n_cycles {
        data.extend_from_slice(&first_cycle);
    }

    let clip = VideoClip::new(data, total, height, width)?;
    let gt_roi = heart_box(height, width, cy, cx, r_outer);
    let ann = AnnotationRecord {
        cycle,
        video_id: format!("phantom{rng_seed}"),
        split: Split::Train,
        gt_roi: Some(gt_roi),
    };
    Ok((clip, ann))
}

/// Sum of oriented sinusoids: band-limited texture, static over time.
/// Wavelengths sit above the coarsest degradation Nyquist (8 px at
/// scale 4) so the detail is attenuated but recoverable.
fn textured_background(height: usize, width: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    const WAVES: usize = 6;
    let mut params = Vec::with_capacity(WAVES);
    for _ in 0..WAVES {
        let amplitude = 0.05 + 0.05 * rng.random::<f64>();
        let wavelength = 8.5 + 6.0 * rng.random::<f64>();
        let theta = std::f64::consts::PI * rng.random::<f64>();
        let phase = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        params.push((amplitude, 2.0 * std::f64::consts::PI / wavelength, theta, phase));
    }
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let mut v = 0.45;
            for &(a, k, theta, phi) in &params {
                let proj = x as f64 * theta.cos() + y as f64 * theta.sin();
                v += a * (k * proj + phi).sin();
            }
            out.push(v.clamp(0.02, 0.98));
        }
    }
    out
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

#[allow(clippy::too_many_arguments)]
fn render_frame(
    background: &[f64],
    height: usize,
    width: usize,
    cy: f64,
    cx: f64,
    r_inner: f64,
    r_outer: f64,
    out: &mut Vec<f64>,
) {
    for y in 0..height {
        for x in 0..width {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            // Cavity -> ring at r_inner, ring -> background at r_outer.
            let u_in = smoothstep((d - r_inner) / EDGE_WIDTH + 0.5);
            let u_out = smoothstep((d - r_outer) / EDGE_WIDTH + 0.5);
            let inner_mix = CAVITY_INTENSITY + (RING_INTENSITY - CAVITY_INTENSITY) * u_in;
            let v = inner_mix + (background[y * width + x] - inner_mix) * u_out;
            out.push(v);
        }
    }
}

/// Bounding box of the rendered ventricle (outer ring plus its soft edge).
fn heart_box(height: usize, width: usize, cy: f64, cx: f64, r_outer: f64) -> RoiBox {
    let reach = r_outer + EDGE_WIDTH;
    let top = (cy - reach).floor().max(0.0) as usize;
    let left = (cx - reach).floor().max(0.0) as usize;
    let bottom = ((cy + reach).ceil() as usize).min(height - 1);
    let right = ((cx + reach).ceil() as usize).min(width - 1);
    RoiBox {
        top,
        left,
        height: bottom - top + 1,
        width: right - left + 1,
    }
}
