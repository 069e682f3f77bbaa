//! Optimization loop, evaluation orchestration, and the ablation sweep.
//!
//! Training is deterministic on one platform: sampling order comes from
//! one seeded generator, per-clip gradients are computed independently
//! (in parallel) and reduced in batch order, and the optimizer is plain
//! adaptive-moment descent with constant learning rate.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};

use crate::dataio::{
    list_videos, load_video, sample_example, warm_clips, PairedVideo, Split, TrainingExample,
};
use crate::degrade::{bicubic_upscale_clip, DegradeConfig};
use crate::error::{Error, Result};
use crate::loss::{tape_total_loss_with, L1Normalization, LossReport, StageLoss};
use crate::metrics::cardiac_metrics_with_roi;
use crate::metrics::detect_heart_roi;
use crate::model::{Model, ModelConfig, StagedNodes};
use crate::nn::{Adam, NodeId, Tape};
use crate::phase::phase_sequence;
use crate::report::{EvalClipRecord, EvalSummary, TrainStepRecord};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    /// Validate (and checkpoint on improvement) every this many steps;
    /// 0 validates only at the end.
    pub eval_every: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Training clip length T.
    pub clip_len: usize,
    /// LR crop side.
    pub crop: usize,
    /// Optional global-norm gradient clip.
    pub grad_clip: Option<f64>,
    /// Normalize the per-frame L1 by pixel count instead of the
    /// frame-sum default.
    pub pixel_mean_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 16,
            max_steps: 1000,
            seed: 0,
            eval_every: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_len: 7,
            crop: 32,
            grad_clip: None,
            pixel_mean_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.clip_len < 1 || self.crop < 8 {
            return Err(Error::Config(format!(
                "clip_len must be >= 1 and crop >= 8, got {} and {}",
                self.clip_len, self.crop
            )));
        }
        Ok(())
    }
}

/// Training corpus: degraded pairs for the train and validation splits.
pub struct Dataset {
    pub train: Vec<PairedVideo>,
    pub val: Vec<PairedVideo>,
}

/// Load one split and derive LR counterparts.
pub fn load_split(root: &Path, split: Split, cfg: &DegradeConfig) -> Result<Vec<PairedVideo>> {
    let mut pairs = Vec::new();
    for path in list_videos(root, split)? {
        let (hr, ann) = load_video(&path)?;
        pairs.push(PairedVideo::derive(hr, ann, cfg)?);
    }
    Ok(pairs)
}

/// Load train + val; a missing or empty val split falls back to the
/// training videos for model selection.
pub fn load_dataset(root: &Path, cfg: &DegradeConfig) -> Result<Dataset> {
    let train = load_split(root, Split::Train, cfg)?;
    if train.is_empty() {
        return Err(Error::Data(format!(
            "no training videos under {}",
            root.join("train").display()
        )));
    }
    let val = match load_split(root, Split::Val, cfg) {
        Ok(v) if !v.is_empty() => v,
        _ => train.clone(),
    };
    Ok(Dataset { train, val })
}

pub struct TrainResult {
    pub model: Model,
    pub log: Vec<TrainStepRecord>,
    pub best_val_cardiac_psnr: Option<f64>,
}

fn scan_non_finite(
    tape: &Tape,
    staged: &StagedNodes,
    model: &Model,
    grads: Option<&[Vec<f64>]>,
) -> String {
    for (stage, frames) in staged.sr.iter().enumerate() {
        for (t, &id) in frames.iter().enumerate() {
            if tape.value(id).iter().any(|v| !v.is_finite()) {
                return format!("sr[{stage}][{t}]");
            }
        }
    }
    for (name, arr) in model.params.iter() {
        if !arr.is_finite() {
            return format!("param {name}");
        }
    }
    if let Some(grads) = grads {
        for (idx, g) in grads.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return format!("grad {}", model.params.name(idx));
            }
        }
    }
    "unknown tensor".into()
}

/// Forward + backward for one clip; returns gradients aligned with the
/// parameter store (zeros where a parameter was unreachable).
fn clip_gradients(
    model: &Model,
    example: &TrainingExample,
    norm: L1Normalization,
) -> Result<(Vec<Vec<f64>>, LossReport)> {
    let warm = model.warm_states(example.warm_before.as_ref(), example.warm_after.as_ref())?;
    let (t, h, w) = example.lr_clip.dims();
    let mut tape = Tape::new(true);
    let bound = model.bind(&mut tape);
    let frames: Vec<NodeId> = (0..t)
        .map(|ti| tape.constant(vec![1, h, w], example.lr_clip.frame(ti).to_vec()))
        .collect();
    let staged = model.forward_on_tape(&mut tape, &bound, &frames, &example.phases.values, &warm);
    let (loss_node, report) = tape_total_loss_with(&mut tape, &staged, &example.hr_clip, norm)?;
    if !report.total.is_finite() {
        let name = scan_non_finite(&tape, &staged, model, None);
        return Err(Error::Data(format!(
            "non-finite loss; first non-finite tensor: {name}"
        )));
    }
    let all_grads = tape.backward(loss_node);
    let grads: Vec<Vec<f64>> = model
        .bound_ids(&bound)
        .iter()
        .enumerate()
        .map(|(idx, &id)| {
            all_grads[id]
                .clone()
                .unwrap_or_else(|| vec![0.0; model.params.array(idx).len()])
        })
        .collect();
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        let name = scan_non_finite(&tape, &staged, model, Some(&grads));
        return Err(Error::Data(format!(
            "non-finite gradient; first non-finite tensor: {name}"
        )));
    }
    Ok((grads, report))
}

fn mean_reports(reports: &[LossReport]) -> (f64, Vec<StageLoss>) {
    let n = reports.len() as f64;
    let stages = reports[0].per_stage.len();
    let mut per_stage = vec![StageLoss { main: 0.0, aux_f: 0.0, aux_b: 0.0 }; stages];
    let mut total = 0.0;
    for r in reports {
        total += r.total;
        for (acc, s) in per_stage.iter_mut().zip(&r.per_stage) {
            acc.main += s.main;
            acc.aux_f += s.aux_f;
            acc.aux_b += s.aux_b;
        }
    }
    for s in &mut per_stage {
        s.main /= n;
        s.aux_f /= n;
        s.aux_b /= n;
    }
    (total / n, per_stage)
}

/// Run the optimization loop. When `ckpt_out` is given, the best
/// validation checkpoint (by CardiacPSNR) is kept there; `max_steps = 0`
/// stores the initialization.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    dataset: &Dataset,
    ckpt_out: Option<&Path>,
) -> Result<TrainResult> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }

    let mut model = Model::new(*model_cfg, train_cfg.seed)?;
    let mut opt = Adam::new(
        train_cfg.lr,
        train_cfg.beta1,
        train_cfg.beta2,
        train_cfg.eps,
        &model.params,
    );
    let mut rng = ChaCha12Rng::seed_from_u64(train_cfg.seed);
    let mut log = Vec::new();
    let mut best_val: Option<f64> = None;

    if train_cfg.max_steps == 0 {
        if let Some(path) = ckpt_out {
            save_checkpoint(path, &model, 0, None)?;
        }
        return Ok(TrainResult { model, log, best_val_cardiac_psnr: None });
    }

    for step in 1..=train_cfg.max_steps {
        // Sampling stays on the single seeded stream; gradient work is
        // parallel per clip and reduced in batch order.
        let batch: Vec<TrainingExample> = (0..train_cfg.batch_size)
            .map(|_| {
                let vid = rng.random_range(0..dataset.train.len());
                sample_example(
                    &dataset.train[vid],
                    train_cfg.clip_len,
                    train_cfg.crop,
                    model_cfg.warmup_n,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;

        let norm = if train_cfg.pixel_mean_loss {
            L1Normalization::PixelMean
        } else {
            L1Normalization::FrameSum
        };
        let results: Vec<(Vec<Vec<f64>>, LossReport)> = batch
            .par_iter()
            .map(|ex| clip_gradients(&model, ex, norm))
            .collect::<Result<_>>()
            .map_err(|e| match e {
                Error::Data(msg) => Error::Data(format!("step {step}: {msg}")),
                other => other,
            })?;

        let inv_batch = 1.0 / train_cfg.batch_size as f64;
        let mut grads: Vec<Vec<f64>> = (0..model.params.len())
            .map(|i| vec![0.0; model.params.array(i).len()])
            .collect();
        for (g, _) in &results {
            for (acc, item) in grads.iter_mut().zip(g) {
                for (a, v) in acc.iter_mut().zip(item) {
                    *a += v * inv_batch;
                }
            }
        }
        if let Some(max_norm) = train_cfg.grad_clip {
            let norm: f64 = grads
                .iter()
                .flat_map(|g| g.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                let scale = max_norm / norm;
                for g in &mut grads {
                    for v in g.iter_mut() {
                        *v *= scale;
                    }
                }
            }
        }
        opt.step(&mut model.params, &grads);

        let reports: Vec<LossReport> = results.into_iter().map(|(_, r)| r).collect();
        let (total, per_stage) = mean_reports(&reports);
        log.push(TrainStepRecord { step, total, per_stage, lr: train_cfg.lr });

        let validate_now = (train_cfg.eval_every > 0 && step % train_cfg.eval_every == 0)
            || step == train_cfg.max_steps;
        if validate_now {
            let score = validation_cardiac_psnr(&model, &dataset.val, train_cfg.clip_len)?;
            if best_val.is_none_or(|b| score > b) {
                best_val = Some(score);
                if let Some(path) = ckpt_out {
                    save_checkpoint(path, &model, step, Some(score))?;
                }
            }
        }
    }
    Ok(TrainResult { model, log, best_val_cardiac_psnr: best_val })
}

/// Mean CardiacPSNR of the first window of each validation video.
fn validation_cardiac_psnr(model: &Model, val: &[PairedVideo], clip_len: usize) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let mut acc = 0.0;
    let mut count = 0;
    for pair in val {
        let records = evaluate_pair(model, pair, clip_len, Some(1))?;
        for rec in records {
            acc += rec.cardiac_psnr;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Slide over one paired video in windows of `clip_len` and score the
/// final-stage output against the HR reference; the bicubic baseline is
/// scored on the same detected ROI.
fn evaluate_pair(
    model: &Model,
    pair: &PairedVideo,
    clip_len: usize,
    max_windows: Option<usize>,
) -> Result<Vec<EvalClipRecord>> {
    let (t, lh, lw) = pair.lr.dims();
    if t < clip_len {
        return Err(Error::Shape(format!(
            "video {} has {t} frames, need {clip_len}",
            pair.ann.video_id
        )));
    }
    let mut starts: Vec<usize> = (0..=t - clip_len).step_by(clip_len).collect();
    if let Some(&last) = starts.last() {
        if last + clip_len < t {
            starts.push(t - clip_len);
        }
    }
    if let Some(limit) = max_windows {
        starts.truncate(limit);
    }

    let n = model.cfg.warmup_n;
    let mut records = Vec::with_capacity(starts.len());
    for t0 in starts {
        let lr_clip = pair.lr.crop(t0, clip_len, 0, 0, lh, lw)?;
        let hr_clip = pair.hr.crop(
            t0,
            clip_len,
            0,
            0,
            lh * pair.scale as usize,
            lw * pair.scale as usize,
        )?;
        let phases = phase_sequence(&pair.ann.cycle, t0 as i64, clip_len)?;
        let (warm_before, warm_after) = warm_clips(
            &pair.lr,
            pair.ann.cycle.t_cycle,
            t0,
            clip_len,
            n,
            (0, 0, lh, lw),
        )?;
        let staged = model.forward(&lr_clip, &phases, warm_before.as_ref(), warm_after.as_ref())?;
        let sr = staged.sr.last().expect("at least one stage");

        let roi = detect_heart_roi(&hr_clip)?;
        let model_report =
            cardiac_metrics_with_roi(sr, &hr_clip, Some(roi), &pair.ann.video_id)?;
        let bicubic = bicubic_upscale_clip(&lr_clip, pair.scale)?;
        let bicubic_report =
            cardiac_metrics_with_roi(&bicubic, &hr_clip, Some(roi), &pair.ann.video_id)?;

        records.push(EvalClipRecord {
            video_id: pair.ann.video_id.clone(),
            t_start: t0 as i64,
            scale: pair.scale,
            psnr: model_report.psnr,
            ssim: model_report.ssim,
            cardiac_psnr: model_report.cardiac_psnr,
            cardiac_ssim: model_report.cardiac_ssim,
            bicubic_psnr: bicubic_report.psnr,
            bicubic_ssim: bicubic_report.ssim,
            bicubic_cardiac_psnr: bicubic_report.cardiac_psnr,
            bicubic_cardiac_ssim: bicubic_report.cardiac_ssim,
            roi: [roi.top, roi.left, roi.height, roi.width],
        });
    }
    Ok(records)
}

/// Full-split evaluation: per-clip records plus the summary of means.
pub fn evaluate(
    model: &Model,
    pairs: &[PairedVideo],
    clip_len: usize,
    split_name: &str,
) -> Result<(Vec<EvalClipRecord>, EvalSummary)> {
    if pairs.is_empty() {
        return Err(Error::Data(format!("split '{split_name}' has no videos")));
    }
    for pair in pairs {
        if pair.scale != model.cfg.scale {
            return Err(Error::Config(format!(
                "checkpoint is for scale {} but the dataset pair is scale {}",
                model.cfg.scale, pair.scale
            )));
        }
    }
    let mut records = Vec::new();
    for pair in pairs {
        records.extend(evaluate_pair(model, pair, clip_len, None)?);
    }
    let n = records.len() as f64;
    let mean = |f: fn(&EvalClipRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let summary = EvalSummary {
        split: split_name.to_string(),
        scale: model.cfg.scale,
        clips: records.len(),
        psnr: mean(|r| r.psnr),
        ssim: mean(|r| r.ssim),
        cardiac_psnr: mean(|r| r.cardiac_psnr),
        cardiac_ssim: mean(|r| r.cardiac_ssim),
        bicubic_psnr: mean(|r| r.bicubic_psnr),
        bicubic_ssim: mean(|r| r.bicubic_ssim),
        bicubic_cardiac_psnr: mean(|r| r.bicubic_cardiac_psnr),
        bicubic_cardiac_ssim: mean(|r| r.bicubic_cardiac_ssim),
        omega: model.cfg.effective_stages(),
        warmup_n: model.cfg.warmup_n,
        checkpoint_step: None,
    };
    Ok((records, summary))
}

/// The cumulative ablation ladder, in presentation order.
pub fn ablation_rows() -> [(bool, bool, bool, bool, bool); 6] {
    [
        (false, false, false, false, false),
        (true, false, false, false, false),
        (true, true, false, false, false),
        (true, true, true, false, false),
        (true, true, true, true, false),
        (true, true, true, true, true),
    ]
}

/// Train every ablation row under identical seed and budget, scoring
/// each on the validation split.
pub fn ablation_sweep(
    base_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    dataset: &Dataset,
) -> Result<Vec<crate::report::AblationRecord>> {
    let mut rows = Vec::new();
    for (row, &(memory, warmup, bidir, phase, ror)) in ablation_rows().iter().enumerate() {
        let cfg = ModelConfig {
            ablation: crate::model::AblationFlags {
                memory_enabled: memory,
                warmup_enabled: warmup,
                bidirectional_enabled: bidir,
                phase_fusion_enabled: phase,
                ror_enabled: ror,
            },
            ..*base_cfg
        };
        let result = train(&cfg, train_cfg, dataset, None)?;
        let (_, summary) = evaluate(&result.model, &dataset.val, train_cfg.clip_len, "val")?;
        rows.push(crate::report::AblationRecord {
            row: row + 1,
            memory,
            updated_memory: warmup,
            bidirection: bidir,
            phase_fusion: phase,
            residual_of_residual: ror,
            cardiac_psnr: summary.cardiac_psnr,
            cardiac_ssim: summary.cardiac_ssim,
            params: result.model.count_params(),
        });
    }
    Ok(rows)
}
