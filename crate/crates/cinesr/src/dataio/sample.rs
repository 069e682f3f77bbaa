//! Paired LR/HR clip sampling and warm-up frame assembly.
//!
//! Crops are drawn on the LR grid and scaled by r to locate the HR crop,
//! so the pair is pixel-aligned for any scale. Warm-up frames wrap by
//! whole cycles: an out-of-range index is shifted by t_cycle until it
//! lands inside the video, which preserves the cardiac phase of every
//! warm frame.

use super::{AnnotationRecord, VideoClip};
use crate::degrade::{degrade_clip, DegradeConfig};
use crate::error::{Error, Result};
use crate::phase::{phase_sequence, PhaseCodeSequence};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// A video with its degraded counterpart, ready for sampling.
#[derive(Debug, Clone)]
pub struct PairedVideo {
    pub hr: VideoClip,
    pub lr: VideoClip,
    pub ann: AnnotationRecord,
    pub scale: u32,
}

impl PairedVideo {
    /// Degrade the full HR video once; crops then come from both grids.
    pub fn derive(hr: VideoClip, ann: AnnotationRecord, cfg: &DegradeConfig) -> Result<Self> {
        let lr = degrade_clip(&hr, cfg)?;
        Ok(PairedVideo { hr, lr, ann, scale: cfg.scale })
    }
}

#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub lr_clip: VideoClip,
    pub hr_clip: VideoClip,
    pub phases: PhaseCodeSequence,
    /// Warm-up frames preceding the clip (cropped like `lr_clip`).
    pub warm_before: Option<VideoClip>,
    /// Warm-up frames following the clip.
    pub warm_after: Option<VideoClip>,
}

/// Uniformly sample a pixel-aligned LR/HR crop pair with phase codes for
/// the window's absolute frame indices.
pub fn sample_example(
    pair: &PairedVideo,
    clip_len: usize,
    crop: usize,
    warmup_n: usize,
    rng: &mut ChaCha12Rng,
) -> Result<TrainingExample> {
    let (t, lh, lw) = pair.lr.dims();
    if t < clip_len {
        return Err(Error::Shape(format!(
            "video has {t} frames, need clip_len={clip_len}"
        )));
    }
    if lh < crop || lw < crop {
        return Err(Error::Shape(format!(
            "LR grid {lh}x{lw} too small for {crop}x{crop} crops"
        )));
    }
    let r = pair.scale as usize;
    let t0 = rng.random_range(0..=t - clip_len);
    let y0 = rng.random_range(0..=lh - crop);
    let x0 = rng.random_range(0..=lw - crop);

    let lr_clip = pair.lr.crop(t0, clip_len, y0, x0, crop, crop)?;
    let hr_clip = pair
        .hr
        .crop(t0, clip_len, r * y0, r * x0, r * crop, r * crop)?;
    let phases = phase_sequence(&pair.ann.cycle, t0 as i64, clip_len)?;
    let (warm_before, warm_after) = warm_clips(
        &pair.lr,
        pair.ann.cycle.t_cycle,
        t0,
        clip_len,
        warmup_n,
        (y0, x0, crop, crop),
    )?;
    Ok(TrainingExample { lr_clip, hr_clip, phases, warm_before, warm_after })
}

/// Spec-shaped sampler: derives the LR video from the HR input, then
/// draws one crop pair reproducibly from `rng_seed`.
pub fn sample_training_example(
    hr: &VideoClip,
    ann: &AnnotationRecord,
    scale: u32,
    clip_len: usize,
    crop: usize,
    rng_seed: u64,
) -> Result<(VideoClip, VideoClip, PhaseCodeSequence)> {
    let cfg = DegradeConfig::new(scale)?;
    let pair = PairedVideo::derive(hr.clone(), ann.clone(), &cfg)?;
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let ex = sample_example(&pair, clip_len, crop, 0, &mut rng)?;
    Ok((ex.lr_clip, ex.hr_clip, ex.phases))
}

/// Warm-up frame windows around `[t0, t0 + clip_len)`, cropped to the
/// given LR region. Returns (frames before, frames after); `None` when
/// `warmup_n` is zero.
pub fn warm_clips(
    lr: &VideoClip,
    t_cycle: u32,
    t0: usize,
    clip_len: usize,
    warmup_n: usize,
    region: (usize, usize, usize, usize),
) -> Result<(Option<VideoClip>, Option<VideoClip>)> {
    if warmup_n == 0 {
        return Ok((None, None));
    }
    let (y0, x0, ch, cw) = region;
    let before: Vec<i64> = (0..warmup_n)
        .map(|i| t0 as i64 - warmup_n as i64 + i as i64)
        .collect();
    let after: Vec<i64> = (0..warmup_n)
        .map(|i| (t0 + clip_len + i) as i64)
        .collect();
    let gather = |indices: &[i64]| -> Result<VideoClip> {
        let (t, _, _) = lr.dims();
        let mut data = Vec::new();
        for &raw in indices {
            let idx = wrap_by_cycle(raw, t, t_cycle)?;
            let frame = lr.crop(idx, 1, y0, x0, ch, cw)?;
            data.extend_from_slice(&frame.data);
        }
        let mut clip = VideoClip::new(data, indices.len(), ch, cw)?;
        clip.t_start = lr.t_start + indices[0];
        Ok(clip)
    };
    Ok((Some(gather(&before)?), Some(gather(&after)?)))
}

/// Shift an index by whole cycles until it lands inside the video.
fn wrap_by_cycle(idx: i64, video_len: usize, t_cycle: u32) -> Result<usize> {
    let mut idx = idx;
    let cycle = t_cycle as i64;
    while idx < 0 {
        idx += cycle;
    }
    while idx >= video_len as i64 {
        idx -= cycle;
    }
    if idx < 0 || idx >= video_len as i64 {
        return Err(Error::Data(format!(
            "warm-up needs cyclic wrap-around, but the video ({video_len} frames) is shorter than one cycle ({t_cycle} frames)"
        )));
    }
    Ok(idx as usize)
}
