//! Line-oriented structured reports: one JSON object per line.
//!
//! Record kinds are distinguished by their field sets, so files can mix
//! per-clip rows, summary rows, bench records and ablation rows. The
//! bench record carries exactly the fields `params`, `fps`, `omega`,
//! `scale`.

use crate::error::{Error, Result};
use crate::loss::StageLoss;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainStepRecord {
    pub step: u64,
    pub total: f64,
    pub per_stage: Vec<StageLoss>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalClipRecord {
    pub video_id: String,
    pub t_start: i64,
    pub scale: u32,
    pub psnr: f64,
    pub ssim: f64,
    pub cardiac_psnr: f64,
    pub cardiac_ssim: f64,
    pub bicubic_psnr: f64,
    pub bicubic_ssim: f64,
    pub bicubic_cardiac_psnr: f64,
    pub bicubic_cardiac_ssim: f64,
    /// top, left, height, width on the HR grid.
    pub roi: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSummary {
    pub split: String,
    pub scale: u32,
    pub clips: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub cardiac_psnr: f64,
    pub cardiac_ssim: f64,
    pub bicubic_psnr: f64,
    pub bicubic_ssim: f64,
    pub bicubic_cardiac_psnr: f64,
    pub bicubic_cardiac_ssim: f64,
    pub omega: usize,
    pub warmup_n: usize,
    /// Training step of the evaluated checkpoint, when known; labels the
    /// budget behind every summary.
    #[serde(default)]
    pub checkpoint_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRecord {
    pub params: usize,
    pub fps: f64,
    pub omega: usize,
    pub scale: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRecord {
    pub row: usize,
    pub memory: bool,
    pub updated_memory: bool,
    pub bidirection: bool,
    pub phase_fusion: bool,
    pub residual_of_residual: bool,
    pub cardiac_psnr: f64,
    pub cardiac_ssim: f64,
    pub params: usize,
}

/// Serialize records into one JSONL payload.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(
            &serde_json::to_string(r).map_err(|e| Error::Schema(format!("serialize: {e}")))?,
        );
        out.push('\n');
    }
    Ok(out)
}

/// Write lines atomically (temp file + rename).
pub fn write_jsonl_file(path: &Path, payload: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, payload)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Parse a report file into raw values; malformed lines are schema
/// errors naming the line.
pub fn read_jsonl_file(path: &Path) -> Result<Vec<serde_json::Value>> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line).map_err(|e| {
            Error::Schema(format!("{}:{}: malformed report line: {e}", path.display(), i + 1))
        })?;
        values.push(v);
    }
    Ok(values)
}

/// Try to view a raw record as a specific type; field sets are disjoint
/// across kinds so at most one succeeds.
pub fn parse_as<T: for<'de> Deserialize<'de>>(value: &serde_json::Value) -> Option<T> {
    serde_json::from_value(value.clone()).ok()
}
