//! Command-line entry point: phantom-gen, degrade, train, eval, infer,
//! ablate, bench, plot.
//!
//! Every flag mirrors a config-file key one-to-one; precedence is
//! defaults < `--config` file < explicit flags. Commands validate their
//! inputs before writing anything, and all outputs go through temp-file
//! renames so failures never leave partial files.

use crate::dataio::{
    generate_phantom, load_video, save_video, warm_clips, write_vol, AnnotationRecord, Split,
    VideoClip,
};
use crate::degrade::{degrade_clip, DegradeConfig};
use crate::error::{Error, Result};
use crate::model::{AblationFlags, ModelConfig};
use crate::phase::phase_sequence;
use crate::plot::generate_figures;
use crate::report::{to_jsonl, write_jsonl_file, BenchRecord};
use crate::trainer::{
    ablation_sweep, evaluate, load_checkpoint, load_dataset, load_split, train, TrainConfig,
};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Parser)]
#[command(
    name = "cinesr",
    about = "Phase-aware video super-resolution for cine cardiac MRI",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic beating-heart videos into train/val/test splits.
    PhantomGen(PhantomGenArgs),
    /// Produce LR videos from HR videos (k-space low-pass + bicubic).
    Degrade(DegradeArgs),
    /// Train a model and keep the best validation checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Super-resolve one video with a trained checkpoint.
    Infer(InferArgs),
    /// Train and score the cumulative ablation ladder.
    Ablate(AblateArgs),
    /// Parameter count and frames-per-second of a checkpoint.
    Bench(BenchArgs),
    /// Render figures from eval/bench reports.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct PhantomGenArgs {
    /// Dataset root to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Total number of videos across splits.
    #[arg(long, default_value_t = 4)]
    pub videos: u32,
    #[arg(long = "t-cycle", default_value_t = 30)]
    pub t_cycle: u32,
    /// Cycles per video.
    #[arg(long, default_value_t = 2)]
    pub cycles: u32,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub ed: u32,
    /// End-systole frame; defaults to t_cycle / 3.
    #[arg(long)]
    pub es: Option<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    /// Directory of HR `.vol`/`.ann` pairs (searched recursively).
    #[arg(long = "in")]
    pub in_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scale: u32,
    /// Low-pass cutoff fraction; defaults to 1/scale.
    #[arg(long)]
    pub cutoff: Option<f64>,
}

/// Keys accepted both as flags and in a `--config` JSON file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOverrides {
    pub scale: Option<u32>,
    pub omega: Option<usize>,
    pub warmup_n: Option<usize>,
    pub fusion_halfwidth: Option<usize>,
    pub feat_channels: Option<usize>,
    pub extract_blocks: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub steps: Option<u64>,
    pub seed: Option<u64>,
    pub eval_every: Option<u64>,
    pub clip_len: Option<usize>,
    pub crop: Option<usize>,
    pub cutoff: Option<f64>,
    pub grad_clip: Option<f64>,
    pub disable_memory: Option<bool>,
    pub disable_warmup: Option<bool>,
    pub disable_bidirectional: Option<bool>,
    pub disable_phase_fusion: Option<bool>,
    pub disable_ror: Option<bool>,
    pub pixel_mean_loss: Option<bool>,
}

#[derive(Debug, Args, Clone)]
pub struct ModelTrainFlags {
    #[arg(long)]
    pub scale: Option<u32>,
    /// Refinement stages Omega.
    #[arg(long)]
    pub omega: Option<usize>,
    #[arg(long = "warmup-n")]
    pub warmup_n: Option<usize>,
    #[arg(long = "fusion-halfwidth")]
    pub fusion_halfwidth: Option<usize>,
    #[arg(long = "feat-channels")]
    pub feat_channels: Option<usize>,
    #[arg(long = "extract-blocks")]
    pub extract_blocks: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "eval-every")]
    pub eval_every: Option<u64>,
    #[arg(long = "clip-len")]
    pub clip_len: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long = "grad-clip")]
    pub grad_clip: Option<f64>,
    #[arg(long = "disable-memory")]
    pub disable_memory: bool,
    #[arg(long = "disable-warmup")]
    pub disable_warmup: bool,
    #[arg(long = "disable-bidirectional")]
    pub disable_bidirectional: bool,
    #[arg(long = "disable-phase-fusion")]
    pub disable_phase_fusion: bool,
    #[arg(long = "disable-ror")]
    pub disable_ror: bool,
    #[arg(long = "pixel-mean-loss")]
    pub pixel_mean_loss: bool,
    /// JSON file with the same keys as the flags above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSONL training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub flags: ModelTrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long = "clip-len", default_value_t = 7)]
    pub clip_len: usize,
    #[arg(long)]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input LR `.vol` with its `.ann` sidecar.
    #[arg(long)]
    pub video: PathBuf,
    /// Output `.vol` path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "clip-len", default_value_t = 7)]
    pub clip_len: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSONL output of the six ablation rows.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: ModelTrainFlags,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Optional JSONL output for the bench record.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub frames: usize,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Report files (eval and/or bench JSONL).
    #[arg(long, num_args = 1.., required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

/// Resolved model + training configuration after merging defaults,
/// config file, and flags.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub cutoff: Option<f64>,
}

impl ModelTrainFlags {
    pub fn resolve(&self) -> Result<ResolvedRun> {
        let file: RunOverrides = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|_| {
                    Error::Schema(format!("config file {} not readable", path.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| {
                    Error::Schema(format!("config file {}: {e}", path.display()))
                })?
            }
            None => RunOverrides::default(),
        };
        let feat_channels = self.feat_channels.or(file.feat_channels).unwrap_or(64);
        let model = ModelConfig {
            scale: self.scale.or(file.scale).unwrap_or(4),
            feat_channels,
            num_extract_blocks: self.extract_blocks.or(file.extract_blocks).unwrap_or(5),
            recurrent_hidden: feat_channels,
            warmup_n: self.warmup_n.or(file.warmup_n).unwrap_or(6),
            stages_omega: self.omega.or(file.omega).unwrap_or(2),
            fusion_halfwidth: self.fusion_halfwidth.or(file.fusion_halfwidth).unwrap_or(2),
            ablation: AblationFlags {
                memory_enabled: !(self.disable_memory
                    || file.disable_memory.unwrap_or(false)),
                warmup_enabled: !(self.disable_warmup
                    || file.disable_warmup.unwrap_or(false)),
                bidirectional_enabled: !(self.disable_bidirectional
                    || file.disable_bidirectional.unwrap_or(false)),
                phase_fusion_enabled: !(self.disable_phase_fusion
                    || file.disable_phase_fusion.unwrap_or(false)),
                ror_enabled: !(self.disable_ror || file.disable_ror.unwrap_or(false)),
            },
        };
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            lr: self.lr.or(file.lr).unwrap_or(defaults.lr),
            batch_size: self.batch.or(file.batch).unwrap_or(defaults.batch_size),
            max_steps: self.steps.or(file.steps).unwrap_or(defaults.max_steps),
            seed: self.seed.or(file.seed).unwrap_or(defaults.seed),
            eval_every: self.eval_every.or(file.eval_every).unwrap_or(defaults.eval_every),
            clip_len: self.clip_len.or(file.clip_len).unwrap_or(defaults.clip_len),
            crop: self.crop.or(file.crop).unwrap_or(defaults.crop),
            grad_clip: self.grad_clip.or(file.grad_clip),
            pixel_mean_loss: self.pixel_mean_loss || file.pixel_mean_loss.unwrap_or(false),
            ..defaults
        };
        model.validate()?;
        train.validate()?;
        Ok(ResolvedRun { model, train, cutoff: self.cutoff.or(file.cutoff) })
    }
}

fn degrade_config(scale: u32, cutoff: Option<f64>) -> Result<DegradeConfig> {
    match cutoff {
        Some(c) => DegradeConfig::with_cutoff(scale, c),
        None => DegradeConfig::new(scale),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PhantomGen(args) => cmd_phantom_gen(args),
        Command::Degrade(args) => cmd_degrade(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Plot(args) => cmd_plot(args),
    }
}

fn cmd_phantom_gen(args: PhantomGenArgs) -> Result<()> {
    if args.videos < 1 {
        return Err(Error::Config("need at least one video".into()));
    }
    let es = args.es.unwrap_or_else(|| (args.t_cycle / 3).max(1));
    let k = args.videos;
    let n_test = u32::from(k >= 2);
    let n_val = u32::from(k >= 3);
    let n_train = k - n_test - n_val;

    for i in 0..k {
        let (clip, mut ann) = generate_phantom(
            args.t_cycle,
            args.cycles,
            args.height,
            args.width,
            args.ed,
            es,
            args.seed + i as u64,
        )?;
        ann.split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        ann.video_id = format!("phantom{:03}", i);
        let path = save_video(&args.out, &clip, &ann)?;
        println!("{} ({} frames, {}x{}, {})", path.display(), clip.dims().0, args.height, args.width, ann.split);
    }
    Ok(())
}

fn find_vols(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "vol") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn cmd_degrade(args: DegradeArgs) -> Result<()> {
    let cfg = degrade_config(args.scale, args.cutoff)?;
    let vols = find_vols(&args.in_dir)?;
    if vols.is_empty() {
        return Err(Error::Data(format!(
            "no .vol files under {}",
            args.in_dir.display()
        )));
    }
    // Validate everything up front so a mid-run failure cannot leave a
    // half-written dataset.
    let mut jobs = Vec::new();
    for path in &vols {
        let (hr, _) = load_video(path)?;
        let rel = path.strip_prefix(&args.in_dir).unwrap_or(path);
        jobs.push((hr, rel.to_path_buf(), path.with_extension("ann")));
    }
    for (hr, rel, ann_path) in jobs {
        let lr = degrade_clip(&hr, &cfg)?;
        let out_vol = args.out.join(&rel);
        write_vol(&out_vol, &lr)?;
        fs::copy(&ann_path, out_vol.with_extension("ann"))?;
        println!(
            "{} -> {} ({}x{} -> {}x{})",
            rel.display(),
            out_vol.display(),
            hr.dims().1,
            hr.dims().2,
            lr.dims().1,
            lr.dims().2
        );
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let run = args.flags.resolve()?;
    let cfg = degrade_config(run.model.scale, run.cutoff)?;
    let dataset = load_dataset(&args.data, &cfg)?;
    println!(
        "training: scale={} C={} omega={} n={} N={} steps={} batch={} lr={} seed={}",
        run.model.scale,
        run.model.feat_channels,
        run.model.stages_omega,
        run.model.warmup_n,
        run.model.fusion_halfwidth,
        run.train.max_steps,
        run.train.batch_size,
        run.train.lr,
        run.train.seed
    );
    let result = train(&run.model, &run.train, &dataset, Some(&args.out))?;
    for rec in result.log.iter().rev().take(1) {
        println!("final step {}: loss {:.6}", rec.step, rec.total);
    }
    if let Some(best) = result.best_val_cardiac_psnr {
        println!("best val CardiacPSNR: {best:.4} dB -> {}", args.out.display());
    } else {
        println!("checkpoint: {}", args.out.display());
    }
    if let Some(log_path) = &args.log {
        write_jsonl_file(log_path, &to_jsonl(&result.log)?)?;
        println!("log: {}", log_path.display());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (model, meta) = load_checkpoint(&args.ckpt)?;
    let split: Split = args.split.parse()?;
    let cfg = degrade_config(model.cfg.scale, args.cutoff)?;
    let pairs = load_split(&args.data, split, &cfg)?;
    let (records, mut summary) = evaluate(&model, &pairs, args.clip_len, &args.split)?;
    summary.checkpoint_step = Some(meta.step);

    let mut payload = to_jsonl(&records)?;
    payload.push_str(&to_jsonl(&[summary.clone()])?);
    write_jsonl_file(&args.report, &payload)?;

    println!(
        "checkpoint step {} ({} clips on {})",
        meta.step, summary.clips, args.split
    );
    println!(
        "model:   PSNR {:.4}  SSIM {:.4}  CardiacPSNR {:.4}  CardiacSSIM {:.4}",
        summary.psnr, summary.ssim, summary.cardiac_psnr, summary.cardiac_ssim
    );
    println!(
        "bicubic: PSNR {:.4}  SSIM {:.4}  CardiacPSNR {:.4}  CardiacSSIM {:.4}",
        summary.bicubic_psnr,
        summary.bicubic_ssim,
        summary.bicubic_cardiac_psnr,
        summary.bicubic_cardiac_ssim
    );
    println!("report: {}", args.report.display());
    Ok(())
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&args.ckpt)?;
    let (lr, ann) = load_video(&args.video)?;
    let (t, lh, lw) = lr.dims();
    if t < args.clip_len {
        return Err(Error::Data(format!(
            "video has {t} frames, need at least clip-len {}",
            args.clip_len
        )));
    }
    let r = model.cfg.scale as usize;
    let mut frames: Vec<Option<Vec<f64>>> = vec![None; t];

    let mut starts: Vec<usize> = (0..=t - args.clip_len).step_by(args.clip_len).collect();
    if let Some(&last) = starts.last() {
        if last + args.clip_len < t {
            starts.push(t - args.clip_len);
        }
    }
    for (i, t0) in starts.iter().copied().enumerate() {
        let begin = Instant::now();
        let lr_clip = lr.crop(t0, args.clip_len, 0, 0, lh, lw)?;
        let phases = phase_sequence(&ann.cycle, t0 as i64, args.clip_len)?;
        let (warm_before, warm_after) = warm_clips(
            &lr,
            ann.cycle.t_cycle,
            t0,
            args.clip_len,
            model.cfg.warmup_n,
            (0, 0, lh, lw),
        )?;
        let staged = model.forward(&lr_clip, &phases, warm_before.as_ref(), warm_after.as_ref())?;
        let sr = staged.sr.last().expect("at least one stage");
        for (offset, frame_idx) in (t0..t0 + args.clip_len).enumerate() {
            if frames[frame_idx].is_none() {
                frames[frame_idx] = Some(sr.frame(offset).to_vec());
            }
        }
        println!(
            "clip {i}: frames {t0}..{} in {:.3}s",
            t0 + args.clip_len,
            begin.elapsed().as_secs_f64()
        );
    }

    let mut data = Vec::with_capacity(t * r * lh * r * lw);
    for f in frames {
        data.extend(f.expect("all frames covered by sliding windows"));
    }
    let sr_video = VideoClip::new(data, t, r * lh, r * lw)?;
    write_vol(&args.out, &sr_video)?;
    let ann_out = AnnotationRecord { video_id: ann.video_id.clone(), ..ann };
    crate::dataio::write_annotation(&args.out.with_extension("ann"), &ann_out)?;
    println!("wrote {} ({}x{} frames)", args.out.display(), r * lh, r * lw);
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let run = args.flags.resolve()?;
    let cfg = degrade_config(run.model.scale, run.cutoff)?;
    let dataset = load_dataset(&args.data, &cfg)?;
    let rows = ablation_sweep(&run.model, &run.train, &dataset)?;
    write_jsonl_file(&args.out, &to_jsonl(&rows)?)?;
    println!("row  mem  upd  bid  pf   ror  CardiacPSNR  CardiacSSIM  params");
    for r in &rows {
        let mark = |b: bool| if b { "x" } else { " " };
        println!(
            "{:>3}  {:>3}  {:>3}  {:>3}  {:>3}  {:>3}  {:>11.4}  {:>11.4}  {:>7}",
            r.row,
            mark(r.memory),
            mark(r.updated_memory),
            mark(r.bidirection),
            mark(r.phase_fusion),
            mark(r.residual_of_residual),
            r.cardiac_psnr,
            r.cardiac_ssim,
            r.params
        );
    }
    println!("report: {}", args.out.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&args.ckpt)?;
    let (params, fps) =
        model.count_params_and_fps((args.frames, args.height, args.width), args.trials)?;
    let record = BenchRecord {
        params,
        fps,
        omega: model.cfg.effective_stages(),
        scale: model.cfg.scale,
    };
    println!(
        "params {}  fps {:.3}  omega {}  scale {}",
        record.params, record.fps, record.omega, record.scale
    );
    if let Some(out) = &args.out {
        write_jsonl_file(out, &to_jsonl(&[record])?)?;
        println!("record: {}", out.display());
    }
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    for report in &args.reports {
        if !report.is_file() {
            return Err(Error::Data(format!("report {} not found", report.display())));
        }
    }
    let figures = generate_figures(&args.reports, &args.out_dir)?;
    if figures.is_empty() {
        return Err(Error::Data(
            "reports contained no summary or bench records to plot".into(),
        ));
    }
    for f in &figures {
        println!("figure: {}", f.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn subcommand_names_match_the_interface() {
        let cmd = Cli::command();
        let names: Vec<&str> = cmd.get_subcommands().map(|c| c.get_name()).collect();
        for expected in [
            "phantom-gen",
            "degrade",
            "train",
            "eval",
            "infer",
            "ablate",
            "bench",
            "plot",
        ] {
            assert!(names.contains(&expected), "missing subcommand {expected}");
        }
    }

    #[test]
    fn config_file_merges_under_flags() {
        let dir = std::env::temp_dir().join(format!("cinesr-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.json");
        fs::write(&path, r#"{"omega": 3, "lr": 0.01, "feat_channels": 8}"#).unwrap();
        let flags = ModelTrainFlags {
            scale: Some(2),
            omega: None,
            warmup_n: None,
            fusion_halfwidth: None,
            feat_channels: None,
            extract_blocks: None,
            lr: Some(0.5),
            batch: None,
            steps: None,
            seed: None,
            eval_every: None,
            clip_len: None,
            crop: None,
            cutoff: None,
            grad_clip: None,
            disable_memory: false,
            disable_warmup: false,
            disable_bidirectional: false,
            disable_phase_fusion: false,
            disable_ror: false,
            pixel_mean_loss: false,
            config: Some(path),
        };
        let run = flags.resolve().unwrap();
        assert_eq!(run.model.stages_omega, 3, "file key applies");
        assert_eq!(run.model.feat_channels, 8);
        assert_eq!(run.train.lr, 0.5, "explicit flag wins over file");
        assert_eq!(run.model.scale, 2);
        assert_eq!(run.model.warmup_n, 6, "defaults fill the rest");
    }

    #[test]
    fn unknown_config_keys_are_schema_errors() {
        let dir = std::env::temp_dir().join(format!("cinesr-cfg-bad-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.json");
        fs::write(&path, r#"{"learning_rate": 0.01}"#).unwrap();
        let flags = ModelTrainFlags {
            scale: None,
            omega: None,
            warmup_n: None,
            fusion_halfwidth: None,
            feat_channels: None,
            extract_blocks: None,
            lr: None,
            batch: None,
            steps: None,
            seed: None,
            eval_every: None,
            clip_len: None,
            crop: None,
            cutoff: None,
            grad_clip: None,
            disable_memory: false,
            disable_warmup: false,
            disable_bidirectional: false,
            disable_phase_fusion: false,
            disable_ror: false,
            pixel_mean_loss: false,
            config: Some(path),
        };
        assert!(matches!(flags.resolve(), Err(Error::Schema(_))));
    }
}
