//! Deep-supervised multi-stage L1 objective.
//!
//! The per-frame norm is a sum over pixels; the only normalization is the
//! 1/T mean over frames. A stage contributes its main reconstruction loss
//! plus the forward and backward auxiliary losses, and the total is the
//! plain sum over stages.

use crate::dataio::VideoClip;
use crate::error::{Error, Result};
use crate::model::{StagedNodes, StagedOutput};
use crate::nn::{NodeId, Tape};
use serde::{Deserialize, Serialize};

/// Per-frame norm convention. The default follows the objective as
/// written: a sum over pixels with only the 1/T frame mean. The
/// per-pixel mean is available as a configuration switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Normalization {
    #[default]
    FrameSum,
    PixelMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageLoss {
    pub main: f64,
    pub aux_f: f64,
    pub aux_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub per_stage: Vec<StageLoss>,
    pub total: f64,
}

impl LossReport {
    pub fn from_stages(per_stage: Vec<StageLoss>) -> Self {
        let total = per_stage.iter().map(|s| s.main + s.aux_f + s.aux_b).sum();
        LossReport { per_stage, total }
    }
}

fn norm_factor(norm: L1Normalization, t: usize, h: usize, w: usize) -> f64 {
    match norm {
        L1Normalization::FrameSum => 1.0 / t as f64,
        L1Normalization::PixelMean => 1.0 / (t * h * w) as f64,
    }
}

/// Mean over frames of the per-frame sum of absolute differences.
pub fn stage_l1(pred: &VideoClip, target: &VideoClip) -> Result<f64> {
    stage_l1_with(pred, target, L1Normalization::FrameSum)
}

pub fn stage_l1_with(
    pred: &VideoClip,
    target: &VideoClip,
    norm: L1Normalization,
) -> Result<f64> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "loss shape mismatch: {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let (t, h, w) = pred.dims();
    let sum_abs: f64 = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(p, q)| (p - q).abs())
        .sum();
    Ok(sum_abs * norm_factor(norm, t, h, w))
}

/// Apply [`stage_l1`] to every main and auxiliary output and sum.
pub fn total_loss(out: &StagedOutput, target: &VideoClip) -> Result<LossReport> {
    total_loss_with(out, target, L1Normalization::FrameSum)
}

pub fn total_loss_with(
    out: &StagedOutput,
    target: &VideoClip,
    norm: L1Normalization,
) -> Result<LossReport> {
    let stages = out.sr.len();
    if out.aux_f.len() != stages || out.aux_b.len() != stages {
        return Err(Error::Shape(format!(
            "staged output lists disagree: sr={}, aux_f={}, aux_b={}",
            stages,
            out.aux_f.len(),
            out.aux_b.len()
        )));
    }
    let mut per_stage = Vec::with_capacity(stages);
    for stage in 0..stages {
        per_stage.push(StageLoss {
            main: stage_l1_with(&out.sr[stage], target, norm)?,
            aux_f: stage_l1_with(&out.aux_f[stage], target, norm)?,
            aux_b: stage_l1_with(&out.aux_b[stage], target, norm)?,
        });
    }
    Ok(LossReport::from_stages(per_stage))
}

/// Differentiable twin of [`stage_l1`]: builds the mean-over-frames L1
/// on a tape.
fn tape_stage_l1(
    tape: &mut Tape,
    frames: &[NodeId],
    target: &VideoClip,
    norm: L1Normalization,
) -> Result<NodeId> {
    let (t, h, w) = target.dims();
    if frames.len() != t {
        return Err(Error::Shape(format!(
            "prediction has {} frames, target has {t}",
            frames.len()
        )));
    }
    let per_frame: Vec<NodeId> = frames
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            if tape.shape(f) != [1, h, w] {
                return Err(Error::Shape(format!(
                    "prediction frame is {:?}, target frame is [1, {h}, {w}]",
                    tape.shape(f)
                )));
            }
            Ok(tape.l1_sum(f, target.frame(i)))
        })
        .collect::<Result<_>>()?;
    let summed = tape.sum(&per_frame);
    Ok(tape.scale(summed, norm_factor(norm, t, h, w)))
}

/// Differentiable total loss over staged tape outputs. Returns the
/// scalar loss node and the already-evaluated report.
pub fn tape_total_loss(
    tape: &mut Tape,
    staged: &StagedNodes,
    target: &VideoClip,
) -> Result<(NodeId, LossReport)> {
    tape_total_loss_with(tape, staged, target, L1Normalization::FrameSum)
}

pub fn tape_total_loss_with(
    tape: &mut Tape,
    staged: &StagedNodes,
    target: &VideoClip,
    norm: L1Normalization,
) -> Result<(NodeId, LossReport)> {
    let stages = staged.sr.len();
    if staged.aux_f.len() != stages || staged.aux_b.len() != stages {
        return Err(Error::Shape(format!(
            "staged output lists disagree: sr={}, aux_f={}, aux_b={}",
            stages,
            staged.aux_f.len(),
            staged.aux_b.len()
        )));
    }
    let mut terms = Vec::with_capacity(3 * stages);
    let mut per_stage = Vec::with_capacity(stages);
    for stage in 0..stages {
        let main = tape_stage_l1(tape, &staged.sr[stage], target, norm)?;
        let aux_f = tape_stage_l1(tape, &staged.aux_f[stage], target, norm)?;
        let aux_b = tape_stage_l1(tape, &staged.aux_b[stage], target, norm)?;
        per_stage.push(StageLoss {
            main: tape.value(main)[0],
            aux_f: tape.value(aux_f)[0],
            aux_b: tape.value(aux_b)[0],
        });
        terms.extend([main, aux_f, aux_b]);
    }
    let total = tape.sum(&terms);
    Ok((total, LossReport::from_stages(per_stage)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn clip(data: Vec<f64>, t: usize, h: usize, w: usize) -> VideoClip {
        VideoClip::new(data, t, h, w).unwrap()
    }

    fn rand_clip(rng: &mut ChaCha12Rng, t: usize, h: usize, w: usize) -> VideoClip {
        clip((0..t * h * w).map(|_| rng.random::<f64>()).collect(), t, h, w)
    }

    #[test]
    fn zero_at_perfect_prediction() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let a = rand_clip(&mut rng, 3, 8, 8);
        assert_eq!(stage_l1(&a, &a).unwrap(), 0.0);
    }

    /// Four pixels offset by 0.5 on a single frame: the per-frame norm is
    /// the pixel sum, so the loss is 4 * 0.5 = 2. The 2x2 payload rides
    /// in one corner of a minimum-size frame.
    #[test]
    fn hand_computed_offset_example() {
        let mut base = vec![0.0; 64];
        let mut shifted = vec![0.0; 64];
        for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            base[y * 8 + x] = 0.25;
            shifted[y * 8 + x] = 0.75;
        }
        let loss = stage_l1(&clip(base, 1, 8, 8), &clip(shifted, 1, 8, 8)).unwrap();
        assert_eq!(loss, 2.0);
    }

    /// d stage_l1 / d pred[i] = sign(pred[i] - target[i]) / T, checked by
    /// central differences at a point away from ties.
    #[test]
    fn stage_l1_subgradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let t_frames = 2;
        let target = rand_clip(&mut rng, t_frames, 8, 8);
        let pred = rand_clip(&mut rng, t_frames, 8, 8);
        let h = 1e-6;
        for &i in &[0usize, 17, 63, 100] {
            let d = pred.data[i] - target.data[i];
            if d.abs() < 1e-3 {
                continue;
            }
            let mut plus = pred.clone();
            plus.data[i] += h;
            let mut minus = pred.clone();
            minus.data[i] -= h;
            let fd = (stage_l1(&plus, &target).unwrap() - stage_l1(&minus, &target).unwrap())
                / (2.0 * h);
            let analytic = d.signum() / t_frames as f64;
            assert!((fd - analytic).abs() < 1e-7, "pixel {i}: {fd} vs {analytic}");
        }
    }

    #[test]
    fn matches_elementwise_abs_sum_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let a = rand_clip(&mut rng, 4, 9, 11);
        let b = rand_clip(&mut rng, 4, 9, 11);
        let mut oracle = 0.0;
        for i in 0..a.data.len() {
            oracle += (a.data[i] - b.data[i]).abs();
        }
        oracle /= 4.0;
        assert!((stage_l1(&a, &b).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn mean_is_over_frames_not_pixels() {
        // Same total error spread over 2 frames halves the loss.
        let a = clip(vec![0.0; 2 * 64], 2, 8, 8);
        let b = clip(vec![0.1; 2 * 64], 2, 8, 8);
        let loss = stage_l1(&a, &b).unwrap();
        assert!((loss - 6.4).abs() < 1e-12, "128 pixels * 0.1 / 2 frames");

        // The optional per-pixel mean divides by the pixel count too.
        let per_pixel = stage_l1_with(&a, &b, L1Normalization::PixelMean).unwrap();
        assert!((per_pixel - 0.1).abs() < 1e-12);
        assert!((per_pixel - loss / 64.0).abs() < 1e-15);
    }

    #[test]
    fn total_accounts_every_term() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let target = rand_clip(&mut rng, 2, 8, 8);
        let make = |rng: &mut ChaCha12Rng| rand_clip(rng, 2, 8, 8);
        let out = StagedOutput {
            sr: vec![make(&mut rng), make(&mut rng)],
            aux_f: vec![make(&mut rng), make(&mut rng)],
            aux_b: vec![make(&mut rng), make(&mut rng)],
        };
        let report = total_loss(&out, &target).unwrap();
        assert_eq!(report.per_stage.len(), 2);
        let manual: f64 = report
            .per_stage
            .iter()
            .map(|s| s.main + s.aux_f + s.aux_b)
            .sum();
        assert!((report.total - manual).abs() <= 1e-6 * report.total.abs());
        assert!(report.per_stage.iter().all(|s| s.main >= 0.0 && s.aux_f >= 0.0 && s.aux_b >= 0.0));

        // All outputs equal to the target gives exactly zero.
        let perfect = StagedOutput {
            sr: vec![target.clone()],
            aux_f: vec![target.clone()],
            aux_b: vec![target.clone()],
        };
        assert_eq!(total_loss(&perfect, &target).unwrap().total, 0.0);
    }

    /// L1 is positively homogeneous of degree one in the residuals.
    #[test]
    fn doubling_errors_doubles_total() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let target = rand_clip(&mut rng, 2, 8, 8);
        let residual: Vec<f64> = (0..target.data.len())
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let offset = |k: f64| -> StagedOutput {
            let pred = clip(
                target.data.iter().zip(&residual).map(|(t, r)| t + k * r).collect(),
                2,
                8,
                8,
            );
            StagedOutput {
                sr: vec![pred.clone()],
                aux_f: vec![pred.clone()],
                aux_b: vec![pred],
            }
        };
        let single = total_loss(&offset(1.0), &target).unwrap().total;
        let double = total_loss(&offset(2.0), &target).unwrap().total;
        assert!((double - 2.0 * single).abs() < 1e-9 * single);
    }

    /// The tape route and the pure route are two implementations of the
    /// same formula; they must agree to double precision, and the tape
    /// gradient must be the scaled sign pattern.
    #[test]
    fn tape_route_agrees_with_pure_route() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let t_frames = 3;
        let target = rand_clip(&mut rng, t_frames, 8, 8);
        let pred = rand_clip(&mut rng, t_frames, 8, 8);

        let mut tape = Tape::new(true);
        let frame_nodes: Vec<_> = (0..t_frames)
            .map(|t| {
                let data = pred.frame(t).to_vec();
                tape.param(vec![1, 8, 8], data)
            })
            .collect();
        let staged = StagedNodes {
            sr: vec![frame_nodes.clone()],
            aux_f: vec![frame_nodes.clone()],
            aux_b: vec![frame_nodes.clone()],
        };
        let (node, report) = tape_total_loss(&mut tape, &staged, &target).unwrap();

        let pure = total_loss(
            &StagedOutput {
                sr: vec![pred.clone()],
                aux_f: vec![pred.clone()],
                aux_b: vec![pred.clone()],
            },
            &target,
        )
        .unwrap();
        assert!((report.total - pure.total).abs() < 1e-12);
        assert!((tape.value(node)[0] - pure.total).abs() < 1e-12);

        let grads = tape.backward(node);
        let g = grads[frame_nodes[0]].as_ref().unwrap();
        for (i, gv) in g.iter().enumerate() {
            let d = pred.frame(0)[i] - target.frame(0)[i];
            // Three paths share the node, each contributing sign/T.
            let expect = 3.0 * d.signum() / t_frames as f64;
            assert!((gv - expect).abs() < 1e-12, "pixel {i}: {gv} vs {expect}");
        }
    }

    #[test]
    fn missing_auxiliary_is_a_shape_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let target = rand_clip(&mut rng, 1, 8, 8);
        let out = StagedOutput {
            sr: vec![target.clone(), target.clone()],
            aux_f: vec![target.clone()],
            aux_b: vec![target.clone(), target.clone()],
        };
        assert!(matches!(total_loss(&out, &target), Err(Error::Shape(_))));
    }
}
