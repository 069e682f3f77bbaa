//! Dataset layout, the `.vol`/`.ann` container pair, clip sampling, and
//! the synthetic beating-heart phantom.
//!
//! A dataset root holds one directory per split (`train`, `val`, `test`),
//! each containing `<video_id>.vol` (little-endian: three u64 dims T, H, W
//! followed by T*H*W f32 pixels in t-major order) and `<video_id>.ann`
//! (lines of `key=value`; `ed`, `es` and `t_cycle` are required).

mod phantom;
mod sample;

pub use phantom::generate_phantom;
pub use sample::{
    sample_example, sample_training_example, warm_clips, PairedVideo, TrainingExample,
};

use crate::error::{Error, Result};
use crate::metrics::RoiBox;
use crate::phase::CardiacCycleSpec;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Ordered grayscale frame stack.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    /// Row-major `t * h * w` intensities.
    pub data: Vec<f64>,
    t: usize,
    h: usize,
    w: usize,
    /// Absolute index of the first frame within its source video.
    pub t_start: i64,
    /// Optional (row, col) millimetres per pixel.
    pub spacing: Option<(f64, f64)>,
    /// Observed (min, max) intensity.
    pub intensity_range: (f64, f64),
}

impl VideoClip {
    pub fn new(data: Vec<f64>, t: usize, h: usize, w: usize) -> Result<Self> {
        if t < 1 {
            return Err(Error::Shape("clip needs at least one frame".into()));
        }
        if h < 8 || w < 8 {
            return Err(Error::Shape(format!(
                "clip spatial dims must be >= 8, got {h}x{w}"
            )));
        }
        if data.len() != t * h * w {
            return Err(Error::Shape(format!(
                "data length {} does not match {t}x{h}x{w}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite intensity in clip".into()));
        }
        let range = intensity_range(&data);
        Ok(VideoClip {
            data,
            t,
            h,
            w,
            t_start: 0,
            spacing: None,
            intensity_range: range,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.t, self.h, self.w)
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.h * self.w..(t + 1) * self.h * self.w]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.h * self.w..(t + 1) * self.h * self.w]
    }

    /// Min-max normalization to [0, 1]; a constant clip maps to zeros.
    pub fn normalize(&mut self) {
        let (lo, hi) = intensity_range(&self.data);
        if hi > lo {
            let inv = 1.0 / (hi - lo);
            for v in &mut self.data {
                *v = (*v - lo) * inv;
            }
        } else {
            self.data.fill(0.0);
        }
        self.intensity_range = intensity_range(&self.data);
    }

    /// Spatio-temporal crop; `t_start` tracks the absolute frame index.
    pub fn crop(&self, t0: usize, len: usize, y0: usize, x0: usize, ch: usize, cw: usize) -> Result<Self> {
        if t0 + len > self.t || y0 + ch > self.h || x0 + cw > self.w {
            return Err(Error::Shape(format!(
                "crop t={t0}+{len} y={y0}+{ch} x={x0}+{cw} exceeds clip {}x{}x{}",
                self.t, self.h, self.w
            )));
        }
        let mut data = Vec::with_capacity(len * ch * cw);
        for t in t0..t0 + len {
            let frame = self.frame(t);
            for y in y0..y0 + ch {
                data.extend_from_slice(&frame[y * self.w + x0..y * self.w + x0 + cw]);
            }
        }
        let mut out = VideoClip::new(data, len, ch, cw)?;
        out.t_start = self.t_start + t0 as i64;
        out.spacing = self.spacing;
        Ok(out)
    }
}

fn intensity_range(data: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Schema(format!(
                "unknown split '{other}', expected train/val/test"
            ))),
        }
    }
}

/// Per-video sidecar annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub cycle: CardiacCycleSpec,
    pub video_id: String,
    pub split: Split,
    /// Ground-truth heart box, present for phantom videos.
    pub gt_roi: Option<RoiBox>,
}

impl AnnotationRecord {
    fn to_ann_text(&self) -> String {
        let mut s = format!(
            "ed={}\nes={}\nt_cycle={}\nsplit={}\n",
            self.cycle.ed, self.cycle.es, self.cycle.t_cycle, self.split
        );
        if let Some(roi) = &self.gt_roi {
            s.push_str(&format!(
                "roi_top={}\nroi_left={}\nroi_height={}\nroi_width={}\n",
                roi.top, roi.left, roi.height, roi.width
            ));
        }
        s
    }
}

fn parse_ann(text: &str, video_id: &str, fallback_split: Split) -> Result<AnnotationRecord> {
    let mut kv = std::collections::BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Schema(format!("annotation line {} is not key=value: '{line}'", lineno + 1))
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let need = |key: &str| -> Result<u32> {
        let raw = kv
            .get(key)
            .ok_or_else(|| Error::Schema(format!("annotation missing required key `{key}`")))?;
        raw.parse::<u32>().map_err(|_| {
            Error::Schema(format!("annotation key `{key}` must be a non-negative integer, got '{raw}'"))
        })
    };
    let cycle = CardiacCycleSpec::new(need("ed")?, need("es")?, need("t_cycle")?)?;
    let split = match kv.get("split") {
        Some(s) => s.parse()?,
        None => fallback_split,
    };
    let gt_roi = match (kv.get("roi_top"), kv.get("roi_left"), kv.get("roi_height"), kv.get("roi_width")) {
        (Some(t), Some(l), Some(h), Some(w)) => {
            let p = |s: &String, key: &str| -> Result<usize> {
                s.parse().map_err(|_| {
                    Error::Schema(format!("annotation key `{key}` must be an integer, got '{s}'"))
                })
            };
            Some(RoiBox {
                top: p(t, "roi_top")?,
                left: p(l, "roi_left")?,
                height: p(h, "roi_height")?,
                width: p(w, "roi_width")?,
            })
        }
        (None, None, None, None) => None,
        _ => {
            return Err(Error::Schema(
                "annotation has a partial roi_* set; all four of roi_top/left/height/width are required".into(),
            ))
        }
    };
    Ok(AnnotationRecord { cycle, video_id: video_id.to_string(), split, gt_roi })
}

fn split_from_path(path: &Path) -> Split {
    path.parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .and_then(|n| n.parse().ok())
        .unwrap_or(Split::Test)
}

/// Raw `.vol` read: header of three u64 dims then f32 pixels.
pub fn read_vol(path: &Path) -> Result<VideoClip> {
    let mut file = fs::File::open(path)?;
    let mut header = [0u8; 24];
    file.read_exact(&mut header).map_err(|_| {
        Error::Schema(format!("{}: truncated header, need 24 bytes", path.display()))
    })?;
    let dim = |i: usize| u64::from_le_bytes(header[i * 8..(i + 1) * 8].try_into().unwrap()) as usize;
    let (t, h, w) = (dim(0), dim(1), dim(2));
    let expected = t
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .ok_or_else(|| Error::Schema(format!("{}: dimension overflow", path.display())))?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)?;
    if raw.len() != expected * 4 {
        return Err(Error::Schema(format!(
            "{}: payload is {} bytes, expected {} for {t}x{h}x{w} f32",
            path.display(),
            raw.len(),
            expected * 4
        )));
    }
    let mut data = Vec::with_capacity(expected);
    for chunk in raw.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(Error::Data(format!(
                "{}: non-finite pixel value",
                path.display()
            )));
        }
        data.push(v);
    }
    VideoClip::new(data, t, h, w)
}

/// Raw `.vol` write. Emits to a temp file first so failures never leave a
/// partial output.
pub fn write_vol(path: &Path, clip: &VideoClip) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("vol.tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        let (t, h, w) = clip.dims();
        for d in [t as u64, h as u64, w as u64] {
            file.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(clip.data.len() * 4);
        for &v in &clip.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        file.write_all(&buf)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_annotation(path: &Path, ann: &AnnotationRecord) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("ann.tmp");
    fs::write(&tmp, ann.to_ann_text())?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a `.vol` and its sidecar `.ann`; intensities are min-max
/// normalized to [0, 1] per video.
pub fn load_video(path: &Path) -> Result<(VideoClip, AnnotationRecord)> {
    let mut clip = read_vol(path)?;
    clip.normalize();
    let ann_path = path.with_extension("ann");
    let text = fs::read_to_string(&ann_path).map_err(|_| {
        Error::Schema(format!("missing annotation file {}", ann_path.display()))
    })?;
    let video_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("video")
        .to_string();
    let ann = parse_ann(&text, &video_id, split_from_path(path))?;
    Ok((clip, ann))
}

/// Write the video/annotation pair under `<root>/<split>/<video_id>`.
pub fn save_video(root: &Path, clip: &VideoClip, ann: &AnnotationRecord) -> Result<PathBuf> {
    let dir = root.join(ann.split.to_string());
    let vol = dir.join(format!("{}.vol", ann.video_id));
    write_vol(&vol, clip)?;
    write_annotation(&dir.join(format!("{}.ann", ann.video_id)), ann)?;
    Ok(vol)
}

/// Sorted list of `.vol` files in one split directory.
pub fn list_videos(root: &Path, split: Split) -> Result<Vec<PathBuf>> {
    let dir = root.join(split.to_string());
    if !dir.is_dir() {
        return Err(Error::Data(format!(
            "split directory {} does not exist",
            dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "vol"))
        .collect();
    paths.sort();
    Ok(paths)
}
