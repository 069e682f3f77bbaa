//! The super-resolution network.
//!
//! A convolutional feature extractor produces low-frequency features L
//! per frame. A sub-network — forward and backward convolutional LSTMs
//! whose outputs pass through the phase fusion stack — estimates the
//! missing high-frequency residual H_P. Refinement repeats the
//! sub-network on updated features (L <- L + H_P) with the same weights,
//! so the parameter count is independent of the stage count. Each stage
//! emits the main reconstruction Up(L + H_P) plus forward/backward
//! auxiliary reconstructions for deep supervision.
//!
//! Recurrent states can be warmed up on frames taken cyclically from
//! before (forward core) and after (backward core) the clip; warm-up
//! runs without gradient tracking.

use crate::dataio::VideoClip;
use crate::error::{Error, Result};
use crate::nn::{fan_in_uniform, Array, NodeId, ParamStore, Tape};
use crate::phase::PhaseCodeSequence;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// ConvLSTM memory cells carry state between frames.
    pub memory_enabled: bool,
    /// Warm the memory on cyclically wrapped frames around the clip.
    pub warmup_enabled: bool,
    /// Run the backward recurrence (otherwise H_B = H_F).
    pub bidirectional_enabled: bool,
    /// Inject phase-code channels into the fusion stack.
    pub phase_fusion_enabled: bool,
    /// Run the refinement stages (otherwise only stage 0 is emitted).
    pub ror_enabled: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            memory_enabled: true,
            warmup_enabled: true,
            bidirectional_enabled: true,
            phase_fusion_enabled: true,
            ror_enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Upscaling factor r.
    pub scale: u32,
    /// Feature width C.
    pub feat_channels: usize,
    /// Residual blocks in the feature extractor.
    pub num_extract_blocks: usize,
    /// ConvLSTM hidden width; must equal `feat_channels` so recurrent
    /// features add onto L.
    pub recurrent_hidden: usize,
    /// Warm-up frame count n.
    pub warmup_n: usize,
    /// Refinement stage count Omega.
    pub stages_omega: usize,
    /// Fusion temporal half-window N.
    pub fusion_halfwidth: usize,
    pub ablation: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scale: 4,
            feat_channels: 64,
            num_extract_blocks: 5,
            recurrent_hidden: 64,
            warmup_n: 6,
            stages_omega: 2,
            fusion_halfwidth: 2,
            ablation: AblationFlags::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if ![2, 3, 4].contains(&self.scale) {
            return Err(Error::Config(format!(
                "scale must be one of 2, 3, 4, got {}",
                self.scale
            )));
        }
        if self.feat_channels == 0 {
            return Err(Error::Config("feat_channels must be >= 1".into()));
        }
        if self.recurrent_hidden != self.feat_channels {
            return Err(Error::Config(format!(
                "recurrent_hidden ({}) must equal feat_channels ({}) for the additive skip paths",
                self.recurrent_hidden, self.feat_channels
            )));
        }
        Ok(())
    }

    /// Stages actually run: Omega with refinement enabled, otherwise 0.
    pub fn effective_stages(&self) -> usize {
        if self.ablation.ror_enabled {
            self.stages_omega
        } else {
            0
        }
    }

    fn fusion_in_channels(&self) -> usize {
        let window = 2 * self.fusion_halfwidth + 1;
        let mut channels = 2 * window * self.recurrent_hidden;
        if self.ablation.phase_fusion_enabled {
            channels += window;
        }
        channels
    }
}

/// Per-frame feature stack at LR resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub data: Vec<f64>,
    t: usize,
    c: usize,
    h: usize,
    w: usize,
}

impl FeatureMap {
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.t, self.c, self.h, self.w)
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let plane = self.c * self.h * self.w;
        &self.data[t * plane..(t + 1) * plane]
    }
}

/// Per-stage SR clips plus the two auxiliary paths.
#[derive(Debug, Clone)]
pub struct StagedOutput {
    pub sr: Vec<VideoClip>,
    pub aux_f: Vec<VideoClip>,
    pub aux_b: Vec<VideoClip>,
}

/// Hidden and cell state of one ConvLSTM direction.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: Array,
    pub c: Array,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn prefix(&self) -> &'static str {
        match self {
            Direction::Forward => "lstm_f",
            Direction::Backward => "lstm_b",
        }
    }
}

/// Warmed initial states for both directions; `None` means zero init.
#[derive(Debug, Clone, Default)]
pub struct WarmStates {
    pub fwd: Option<RecurrentState>,
    pub bwd: Option<RecurrentState>,
}

/// Tape node ids of one training forward, stage-major.
#[derive(Debug, Clone, Default)]
pub struct StagedNodes {
    pub sr: Vec<Vec<NodeId>>,
    pub aux_f: Vec<Vec<NodeId>>,
    pub aux_b: Vec<Vec<NodeId>>,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

/// Tape bindings of every parameter, aligned with the store order.
pub struct BoundParams {
    ids: Vec<NodeId>,
}

impl Model {
    pub fn new(cfg: ModelConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(init_seed);
        let c = cfg.feat_channels;
        let hid = cfg.recurrent_hidden;

        let conv = |params: &mut ParamStore,
                        rng: &mut ChaCha12Rng,
                        name: &str,
                        c_out: usize,
                        c_in: usize,
                        gain: f64| {
            let fan_in = c_in * 9;
            params.add(
                format!("{name}.w"),
                fan_in_uniform(vec![c_out, c_in, 3, 3], fan_in, gain, rng),
            );
            params.add(format!("{name}.b"), Array::zeros(vec![c_out]));
        };

        conv(&mut params, &mut rng, "fe.conv_in", c, 1, 1.0);
        for i in 0..cfg.num_extract_blocks {
            conv(&mut params, &mut rng, &format!("fe.block{i}.conv1"), c, c, 1.0);
            conv(&mut params, &mut rng, &format!("fe.block{i}.conv2"), c, c, 1.0);
        }

        let lstm = |params: &mut ParamStore, rng: &mut ChaCha12Rng, prefix: &str| {
            params.add(
                format!("{prefix}.wx.w"),
                fan_in_uniform(vec![4 * hid, c, 3, 3], c * 9, 1.0, rng),
            );
            params.add(format!("{prefix}.wx.b"), Array::zeros(vec![4 * hid]));
            params.add(
                format!("{prefix}.wh.w"),
                fan_in_uniform(vec![4 * hid, hid, 3, 3], hid * 9, 1.0, rng),
            );
        };
        lstm(&mut params, &mut rng, "lstm_f");
        if cfg.ablation.bidirectional_enabled {
            lstm(&mut params, &mut rng, "lstm_b");
        }

        conv(&mut params, &mut rng, "pf.conv1", c, cfg.fusion_in_channels(), 1.0);
        // Small last-layer init keeps early refinements near identity
        // while leaving a gradient path into the fusion stack.
        conv(&mut params, &mut rng, "pf.conv2", c, c, 0.01);

        match cfg.scale {
            4 => {
                conv(&mut params, &mut rng, "up.stage0", 4 * c, c, 1.0);
                conv(&mut params, &mut rng, "up.stage1", 4 * c, c, 1.0);
            }
            r => {
                conv(&mut params, &mut rng, "up.stage0", (r * r) as usize * c, c, 1.0);
            }
        }
        conv(&mut params, &mut rng, "up.conv_out", 1, c, 1.0);
        // Start the reconstruction at mid intensity instead of zero.
        let out_bias = params.index_of("up.conv_out.b").unwrap();
        params.array_mut(out_bias).data[0] = 0.45;

        Ok(Model { cfg, params })
    }

    /// Exact trainable-parameter count.
    pub fn count_params(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let ids = self
            .params
            .iter()
            .map(|(_, arr)| tape.param(arr.shape.clone(), arr.data.clone()))
            .collect();
        BoundParams { ids }
    }

    pub fn param_node(&self, bound: &BoundParams, name: &str) -> NodeId {
        let idx = self
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        bound.ids[idx]
    }

    pub fn bound_ids<'a>(&self, bound: &'a BoundParams) -> &'a [NodeId] {
        &bound.ids
    }

    fn convp(&self, tape: &mut Tape, bound: &BoundParams, name: &str, x: NodeId) -> NodeId {
        let w = self.param_node(bound, &format!("{name}.w"));
        let b = self.param_node(bound, &format!("{name}.b"));
        tape.conv2d(x, w, Some(b))
    }

    fn fe_frame(&self, tape: &mut Tape, bound: &BoundParams, frame: NodeId) -> NodeId {
        let mut x = self.convp(tape, bound, "fe.conv_in", frame);
        for i in 0..self.cfg.num_extract_blocks {
            let skip = x;
            let y = self.convp(tape, bound, &format!("fe.block{i}.conv1"), x);
            let y = tape.relu(y);
            let y = self.convp(tape, bound, &format!("fe.block{i}.conv2"), y);
            x = tape.add(skip, y);
        }
        x
    }

    fn lstm_step(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        dir: Direction,
        x: NodeId,
        state: (NodeId, NodeId),
    ) -> (NodeId, NodeId) {
        let hid = self.cfg.recurrent_hidden;
        let prefix = dir.prefix();
        let wx = self.param_node(bound, &format!("{prefix}.wx.w"));
        let bx = self.param_node(bound, &format!("{prefix}.wx.b"));
        let wh = self.param_node(bound, &format!("{prefix}.wh.w"));
        let gates_x = tape.conv2d(x, wx, Some(bx));
        let gates_h = tape.conv2d(state.0, wh, None);
        let gates = tape.add(gates_x, gates_h);
        let i_gate = tape.slice_c(gates, 0, hid);
        let f_gate = tape.slice_c(gates, hid, 2 * hid);
        let g_gate = tape.slice_c(gates, 2 * hid, 3 * hid);
        let o_gate = tape.slice_c(gates, 3 * hid, 4 * hid);
        let i_gate = tape.sigmoid(i_gate);
        let f_gate = tape.sigmoid(f_gate);
        let g_gate = tape.tanh(g_gate);
        let o_gate = tape.sigmoid(o_gate);
        let retained = tape.mul(f_gate, state.1);
        let written = tape.mul(i_gate, g_gate);
        let c_new = tape.add(retained, written);
        let c_act = tape.tanh(c_new);
        let h_new = tape.mul(o_gate, c_act);
        (h_new, c_new)
    }

    fn zero_state_nodes(&self, tape: &mut Tape, h: usize, w: usize) -> (NodeId, NodeId) {
        let hid = self.cfg.recurrent_hidden;
        let zh = tape.constant(vec![hid, h, w], vec![0.0; hid * h * w]);
        let zc = tape.constant(vec![hid, h, w], vec![0.0; hid * h * w]);
        (zh, zc)
    }

    /// Run one direction over frames given in processing order. With
    /// memory disabled the state is zeroed before every step.
    fn run_direction(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        dir: Direction,
        feats: &[NodeId],
        init: Option<&RecurrentState>,
    ) -> Vec<NodeId> {
        let shape = tape.shape(feats[0]).to_vec();
        let (h, w) = (shape[1], shape[2]);
        let zero = self.zero_state_nodes(tape, h, w);
        let mut state = match (init, self.cfg.ablation.memory_enabled) {
            (Some(s), true) => (
                tape.constant(s.h.shape.clone(), s.h.data.clone()),
                tape.constant(s.c.shape.clone(), s.c.data.clone()),
            ),
            _ => zero,
        };
        let mut outs = Vec::with_capacity(feats.len());
        for &x in feats {
            if !self.cfg.ablation.memory_enabled {
                state = zero;
            }
            let (h_new, c_new) = self.lstm_step(tape, bound, dir, x, state);
            outs.push(h_new);
            state = (h_new, c_new);
        }
        outs
    }

    /// Fusion of the bidirectional features over the +-N window around
    /// frame `t`, with edge replication and phase codes broadcast to
    /// constant channels.
    fn fuse_frame(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        hf: &[NodeId],
        hb: &[NodeId],
        phases: &[f64],
        t: usize,
    ) -> NodeId {
        let n = self.cfg.fusion_halfwidth as i64;
        let len = hf.len() as i64;
        let clamp = |i: i64| i.clamp(0, len - 1) as usize;
        let shape = tape.shape(hf[0]).to_vec();
        let (h, w) = (shape[1], shape[2]);

        let mut inputs = Vec::with_capacity(2 * (2 * n as usize + 1) + 2 * n as usize + 1);
        for d in -n..=n {
            inputs.push(hf[clamp(t as i64 + d)]);
        }
        for d in -n..=n {
            inputs.push(hb[clamp(t as i64 + d)]);
        }
        if self.cfg.ablation.phase_fusion_enabled {
            for d in -n..=n {
                let p = phases[clamp(t as i64 + d)];
                inputs.push(tape.constant_plane(h, w, p));
            }
        }
        let cat = tape.concat_c(&inputs);
        let y = self.convp(tape, bound, "pf.conv1", cat);
        let y = tape.relu(y);
        self.convp(tape, bound, "pf.conv2", y)
    }

    /// The sub-network: bidirectional recurrence plus phase fusion.
    /// Returns (H_P, H_F, H_B) per frame.
    fn subnet(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        feats: &[NodeId],
        phases: &[f64],
        warm: &WarmStates,
    ) -> (Vec<NodeId>, Vec<NodeId>, Vec<NodeId>) {
        let hf = self.run_direction(tape, bound, Direction::Forward, feats, warm.fwd.as_ref());
        let hb = if self.cfg.ablation.bidirectional_enabled {
            let rev: Vec<NodeId> = feats.iter().rev().copied().collect();
            let mut outs =
                self.run_direction(tape, bound, Direction::Backward, &rev, warm.bwd.as_ref());
            outs.reverse();
            outs
        } else {
            hf.clone()
        };
        let hp = (0..feats.len())
            .map(|t| self.fuse_frame(tape, bound, &hf, &hb, phases, t))
            .collect();
        (hp, hf, hb)
    }

    fn upsample_frame(&self, tape: &mut Tape, bound: &BoundParams, feat: NodeId) -> NodeId {
        let y = match self.cfg.scale {
            4 => {
                let y = self.convp(tape, bound, "up.stage0", feat);
                let y = tape.pixel_shuffle(y, 2);
                let y = tape.relu(y);
                let y = self.convp(tape, bound, "up.stage1", y);
                let y = tape.pixel_shuffle(y, 2);
                tape.relu(y)
            }
            r => {
                let y = self.convp(tape, bound, "up.stage0", feat);
                let y = tape.pixel_shuffle(y, r as usize);
                tape.relu(y)
            }
        };
        self.convp(tape, bound, "up.conv_out", y)
    }

    /// Full forward on an existing tape. `lr_frames` are `[1, h, w]`
    /// nodes; `phases` has one value per frame.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        lr_frames: &[NodeId],
        phases: &[f64],
        warm: &WarmStates,
    ) -> StagedNodes {
        assert_eq!(lr_frames.len(), phases.len(), "phase count mismatch");
        let mut current: Vec<NodeId> = lr_frames
            .iter()
            .map(|&f| self.fe_frame(tape, bound, f))
            .collect();
        let stages = self.cfg.effective_stages();
        let mut out = StagedNodes::default();
        for _ in 0..=stages {
            let (hp, hf, hb) = self.subnet(tape, bound, &current, phases, warm);
            // L + Net_sub(L) feeds both the upsampled output of this
            // stage and the next stage's features.
            let fused: Vec<NodeId> = current
                .iter()
                .zip(&hp)
                .map(|(&l, &r)| tape.add(l, r))
                .collect();
            out.sr
                .push(fused.iter().map(|&f| self.upsample_frame(tape, bound, f)).collect());
            out.aux_f.push(
                current
                    .iter()
                    .zip(&hf)
                    .map(|(&l, &r)| {
                        let s = tape.add(r, l);
                        self.upsample_frame(tape, bound, s)
                    })
                    .collect(),
            );
            out.aux_b.push(
                current
                    .iter()
                    .zip(&hb)
                    .map(|(&l, &r)| {
                        let s = tape.add(r, l);
                        self.upsample_frame(tape, bound, s)
                    })
                    .collect(),
            );
            current = fused;
        }
        out
    }

    fn zero_recurrent_state(&self, h: usize, w: usize) -> RecurrentState {
        let hid = self.cfg.recurrent_hidden;
        RecurrentState {
            h: Array::zeros(vec![hid, h, w]),
            c: Array::zeros(vec![hid, h, w]),
        }
    }

    /// Advance a recurrent state over warm frames without gradient
    /// tracking. The forward core consumes frames in chronological
    /// order; the backward core consumes them reversed, ending adjacent
    /// to the clip.
    pub fn warmup_memory(
        &self,
        state: &RecurrentState,
        warm_frames: &VideoClip,
        dir: Direction,
    ) -> Result<RecurrentState> {
        let (t, h, w) = warm_frames.dims();
        let mut tape = Tape::new(false);
        let bound = self.bind(&mut tape);
        let mut s = (
            tape.constant(state.h.shape.clone(), state.h.data.clone()),
            tape.constant(state.c.shape.clone(), state.c.data.clone()),
        );
        let order: Vec<usize> = match dir {
            Direction::Forward => (0..t).collect(),
            Direction::Backward => (0..t).rev().collect(),
        };
        for ti in order {
            let frame = tape.constant(vec![1, h, w], warm_frames.frame(ti).to_vec());
            let feat = self.fe_frame(&mut tape, &bound, frame);
            s = self.lstm_step(&mut tape, &bound, dir, feat, s);
        }
        Ok(RecurrentState {
            h: Array::new(tape.shape(s.0).to_vec(), tape.value(s.0).to_vec()),
            c: Array::new(tape.shape(s.1).to_vec(), tape.value(s.1).to_vec()),
        })
    }

    /// Warm both directions from the frames around a clip. Disabled
    /// warm-up (flag off, memory off, or no frames) yields zero states.
    pub fn warm_states(
        &self,
        warm_before: Option<&VideoClip>,
        warm_after: Option<&VideoClip>,
    ) -> Result<WarmStates> {
        let mut states = WarmStates::default();
        if !self.cfg.ablation.warmup_enabled || !self.cfg.ablation.memory_enabled {
            return Ok(states);
        }
        if let Some(before) = warm_before {
            let (_, h, w) = before.dims();
            let zero = self.zero_recurrent_state(h, w);
            states.fwd = Some(self.warmup_memory(&zero, before, Direction::Forward)?);
        }
        if let Some(after) = warm_after {
            if self.cfg.ablation.bidirectional_enabled {
                let (_, h, w) = after.dims();
                let zero = self.zero_recurrent_state(h, w);
                states.bwd = Some(self.warmup_memory(&zero, after, Direction::Backward)?);
            }
        }
        Ok(states)
    }

    fn check_forward_inputs(&self, lr: &VideoClip, phases: &PhaseCodeSequence) -> Result<()> {
        let (t, _, _) = lr.dims();
        if phases.values.len() != t {
            return Err(Error::Shape(format!(
                "phase sequence has {} values for {t} frames",
                phases.values.len()
            )));
        }
        Ok(())
    }

    /// Inference forward: super-resolve a clip, returning every stage's
    /// outputs as plain clips.
    pub fn forward(
        &self,
        lr: &VideoClip,
        phases: &PhaseCodeSequence,
        warm_before: Option<&VideoClip>,
        warm_after: Option<&VideoClip>,
    ) -> Result<StagedOutput> {
        self.check_forward_inputs(lr, phases)?;
        let (t, h, w) = lr.dims();
        for warm in [warm_before, warm_after].into_iter().flatten() {
            let (_, wh, ww) = warm.dims();
            if (wh, ww) != (h, w) {
                return Err(Error::Shape(format!(
                    "warm frames are {wh}x{ww} but the clip is {h}x{w}"
                )));
            }
        }
        let warm = self.warm_states(warm_before, warm_after)?;
        let mut tape = Tape::new(false);
        let bound = self.bind(&mut tape);
        let frames: Vec<NodeId> = (0..t)
            .map(|ti| tape.constant(vec![1, h, w], lr.frame(ti).to_vec()))
            .collect();
        let staged = self.forward_on_tape(&mut tape, &bound, &frames, &phases.values, &warm);
        self.staged_to_output(&tape, &staged, lr.t_start)
    }

    /// Materialize staged node values into clips.
    pub fn staged_to_output(
        &self,
        tape: &Tape,
        staged: &StagedNodes,
        t_start: i64,
    ) -> Result<StagedOutput> {
        let collect = |stage_frames: &Vec<Vec<NodeId>>| -> Result<Vec<VideoClip>> {
            stage_frames
                .iter()
                .map(|frames| {
                    let shape = tape.shape(frames[0]);
                    let (oh, ow) = (shape[1], shape[2]);
                    let mut data = Vec::with_capacity(frames.len() * oh * ow);
                    for &f in frames {
                        data.extend_from_slice(tape.value(f));
                    }
                    let mut clip = VideoClip::new(data, frames.len(), oh, ow)?;
                    clip.t_start = t_start;
                    Ok(clip)
                })
                .collect()
        };
        Ok(StagedOutput {
            sr: collect(&staged.sr)?,
            aux_f: collect(&staged.aux_f)?,
            aux_b: collect(&staged.aux_b)?,
        })
    }

    /// Per-frame convolutional encoding of a clip.
    pub fn extract_features(&self, lr: &VideoClip) -> Result<FeatureMap> {
        let (t, h, w) = lr.dims();
        let mut tape = Tape::new(false);
        let bound = self.bind(&mut tape);
        let c = self.cfg.feat_channels;
        let mut data = Vec::with_capacity(t * c * h * w);
        for ti in 0..t {
            let frame = tape.constant(vec![1, h, w], lr.frame(ti).to_vec());
            let feat = self.fe_frame(&mut tape, &bound, frame);
            data.extend_from_slice(tape.value(feat));
        }
        Ok(FeatureMap { data, t, c, h, w })
    }

    /// One sub-network pass over existing features (zero initial states).
    pub fn run_subnetwork(
        &self,
        feats: &FeatureMap,
        phases: &PhaseCodeSequence,
    ) -> Result<FeatureMap> {
        let (t, c, h, w) = feats.dims();
        if phases.values.len() != t {
            return Err(Error::Shape(format!(
                "phase sequence has {} values for {t} frames",
                phases.values.len()
            )));
        }
        let mut tape = Tape::new(false);
        let bound = self.bind(&mut tape);
        let nodes: Vec<NodeId> = (0..t)
            .map(|ti| tape.constant(vec![c, h, w], feats.frame(ti).to_vec()))
            .collect();
        let (hp, _, _) =
            self.subnet(&mut tape, &bound, &nodes, &phases.values, &WarmStates::default());
        let mut data = Vec::with_capacity(t * c * h * w);
        for id in hp {
            data.extend_from_slice(tape.value(id));
        }
        Ok(FeatureMap { data, t, c, h, w })
    }

    /// One refinement step: L + Net_sub(L) with the shared weights.
    pub fn refine_features(
        &self,
        feats: &FeatureMap,
        phases: &PhaseCodeSequence,
    ) -> Result<FeatureMap> {
        let residual = self.run_subnetwork(feats, phases)?;
        let mut out = feats.clone();
        for (o, r) in out.data.iter_mut().zip(&residual.data) {
            *o += r;
        }
        Ok(out)
    }

    /// Upsample features directly (the global-skip path with a zero
    /// sub-network).
    pub fn upsample_features(&self, feats: &FeatureMap) -> Result<VideoClip> {
        let (t, c, h, w) = feats.dims();
        let mut tape = Tape::new(false);
        let bound = self.bind(&mut tape);
        let r = self.cfg.scale as usize;
        let mut data = Vec::with_capacity(t * r * h * r * w);
        for ti in 0..t {
            let node = tape.constant(vec![c, h, w], feats.frame(ti).to_vec());
            let up = self.upsample_frame(&mut tape, &bound, node);
            data.extend_from_slice(tape.value(up));
        }
        VideoClip::new(data, t, r * h, r * w)
    }

    /// Exact parameter count and median frames-per-second of inference
    /// forwards on a fixed random input of shape (t, h, w).
    pub fn count_params_and_fps(
        &self,
        input: (usize, usize, usize),
        trials: usize,
    ) -> Result<(usize, f64)> {
        if trials < 3 {
            return Err(Error::Config(format!(
                "fps measurement needs >= 3 trials, got {trials}"
            )));
        }
        let (t, h, w) = input;
        let mut rng = ChaCha12Rng::seed_from_u64(0x5eed);
        use rand::RngExt;
        let clip = VideoClip::new(
            (0..t * h * w).map(|_| rng.random::<f64>()).collect(),
            t,
            h,
            w,
        )?;
        let phases = PhaseCodeSequence {
            values: vec![0.0; t],
            spec: crate::phase::CardiacCycleSpec { ed: 0, es: 1, t_cycle: 2 },
            t_start: 0,
        };
        let mut rates = Vec::with_capacity(trials);
        for _ in 0..trials {
            let start = Instant::now();
            let _ = self.forward(&clip, &phases, None, None)?;
            let elapsed = start.elapsed().as_secs_f64().max(1e-9);
            rates.push(t as f64 / elapsed);
        }
        rates.sort_by(f64::total_cmp);
        Ok((self.count_params(), rates[rates.len() / 2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::tape_total_loss;
    use crate::phase::{phase_sequence, CardiacCycleSpec};
    use rand::RngExt;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            scale: 2,
            feat_channels: 8,
            num_extract_blocks: 1,
            recurrent_hidden: 8,
            warmup_n: 0,
            stages_omega: 1,
            fusion_halfwidth: 1,
            ablation: AblationFlags::default(),
        }
    }

    fn rand_clip(seed: u64, t: usize, h: usize, w: usize) -> VideoClip {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        VideoClip::new((0..t * h * w).map(|_| rng.random::<f64>()).collect(), t, h, w).unwrap()
    }

    fn demo_phases(t: usize) -> PhaseCodeSequence {
        let spec = CardiacCycleSpec::new(0, 10, 30).unwrap();
        phase_sequence(&spec, 0, t).unwrap()
    }

    #[test]
    fn shape_contract_for_all_scales() {
        for r in [2u32, 3, 4] {
            let cfg = ModelConfig { scale: r, ..tiny_cfg() };
            let model = Model::new(cfg, 1).unwrap();
            let lr = rand_clip(7, 3, 8, 8);
            let out = model.forward(&lr, &demo_phases(3), None, None).unwrap();
            assert_eq!(out.sr.len(), 2, "omega=1 gives 2 stages");
            assert_eq!(out.aux_f.len(), 2);
            assert_eq!(out.aux_b.len(), 2);
            for clip in out.sr.iter().chain(&out.aux_f).chain(&out.aux_b) {
                assert_eq!(clip.dims(), (3, 8 * r as usize, 8 * r as usize));
                assert!(clip.data.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn feature_extraction_is_frame_wise() {
        let model = Model::new(tiny_cfg(), 2).unwrap();
        let frame = rand_clip(3, 1, 8, 8);
        let mut doubled = frame.data.clone();
        doubled.extend_from_slice(&frame.data);
        let clip = VideoClip::new(doubled, 2, 8, 8).unwrap();
        let feats = model.extract_features(&clip).unwrap();
        assert_eq!(feats.dims(), (2, 8, 8, 8));
        assert_eq!(feats.frame(0), feats.frame(1), "identical frames, identical features");

        let zero = VideoClip::new(vec![0.0; 2 * 64], 2, 8, 8).unwrap();
        let zfeats = model.extract_features(&zero).unwrap();
        assert_eq!(zfeats.frame(0), zfeats.frame(1), "bias propagation is frame-invariant");
    }

    #[test]
    fn param_count_is_invariant_in_omega_and_n() {
        let base = Model::new(tiny_cfg(), 3).unwrap().count_params();
        for omega in [0usize, 2, 4] {
            for n in [0usize, 6] {
                let cfg = ModelConfig { stages_omega: omega, warmup_n: n, ..tiny_cfg() };
                assert_eq!(Model::new(cfg, 3).unwrap().count_params(), base);
            }
        }
        let no_ror = ModelConfig {
            ablation: AblationFlags { ror_enabled: false, ..AblationFlags::default() },
            ..tiny_cfg()
        };
        assert_eq!(Model::new(no_ror, 3).unwrap().count_params(), base);
    }

    /// Analytic parameter arithmetic, written out layer by layer.
    #[test]
    fn param_count_matches_layer_arithmetic() {
        let cfg = ModelConfig {
            scale: 4,
            feat_channels: 8,
            num_extract_blocks: 2,
            recurrent_hidden: 8,
            warmup_n: 6,
            stages_omega: 2,
            fusion_halfwidth: 2,
            ablation: AblationFlags::default(),
        };
        let c = 8usize;
        let window = 2 * 2 + 1;
        let fe = (c * 1 * 9 + c) + 2 * 2 * (c * c * 9 + c);
        let lstm_one = (4 * c) * c * 9 + 4 * c + (4 * c) * c * 9;
        let pf_in = 2 * window * c + window;
        let pf = (c * pf_in * 9 + c) + (c * c * 9 + c);
        let up = 2 * (4 * c * c * 9 + 4 * c) + (c * 9 + 1);
        let expected = fe + 2 * lstm_one + pf + up;
        assert_eq!(Model::new(cfg, 5).unwrap().count_params(), expected);
    }

    /// Enabling phase fusion adds exactly (2N+1) input channels to the
    /// first fusion convolution.
    #[test]
    fn phase_toggle_changes_exactly_first_fusion_layer() {
        let with = Model::new(tiny_cfg(), 4).unwrap().count_params();
        let cfg = ModelConfig {
            ablation: AblationFlags { phase_fusion_enabled: false, ..AblationFlags::default() },
            ..tiny_cfg()
        };
        let without = Model::new(cfg, 4).unwrap().count_params();
        let window = 2 * 1 + 1;
        assert_eq!(with - without, 8 * window * 9);
    }

    /// With the final fusion conv forced to zero the sub-network output
    /// vanishes and stage 0 reduces to the upsampled extractor features.
    #[test]
    fn zero_subnetwork_reduces_to_global_skip() {
        let mut model = Model::new(tiny_cfg(), 6).unwrap();
        for name in ["pf.conv2.w", "pf.conv2.b"] {
            let idx = model.params.index_of(name).unwrap();
            model.params.array_mut(idx).data.fill(0.0);
        }
        let lr = rand_clip(11, 2, 8, 8);
        let phases = demo_phases(2);
        let out = model.forward(&lr, &phases, None, None).unwrap();
        let skip = model
            .upsample_features(&model.extract_features(&lr).unwrap())
            .unwrap();
        for (a, b) in out.sr[0].data.iter().zip(&skip.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Unidirectional, memoryless, N=0: frame t must not see past or
    /// future frames.
    #[test]
    fn causality_under_ablations() {
        let cfg = ModelConfig {
            fusion_halfwidth: 0,
            ablation: AblationFlags {
                memory_enabled: false,
                warmup_enabled: false,
                bidirectional_enabled: false,
                phase_fusion_enabled: true,
                ror_enabled: false,
            },
            ..tiny_cfg()
        };
        let model = Model::new(cfg, 7).unwrap();
        let lr = rand_clip(13, 3, 8, 8);
        let phases = demo_phases(3);
        let feats = model.extract_features(&lr).unwrap();
        let base = model.run_subnetwork(&feats, &phases).unwrap();

        // Perturb frame 2; frames 0 and 1 must be bit-identical.
        let mut perturbed = lr.clone();
        perturbed.frame_mut(2)[10] += 0.5;
        let feats_p = model.extract_features(&perturbed).unwrap();
        let out_p = model.run_subnetwork(&feats_p, &phases).unwrap();
        assert_eq!(base.frame(0), out_p.frame(0));
        assert_eq!(base.frame(1), out_p.frame(1));

        // Perturb frame 0; with memory off, frame 1 must not change.
        let mut perturbed = lr.clone();
        perturbed.frame_mut(0)[5] += 0.5;
        let feats_p = model.extract_features(&perturbed).unwrap();
        let out_p = model.run_subnetwork(&feats_p, &phases).unwrap();
        assert_eq!(base.frame(1), out_p.frame(1));
        assert_ne!(base.frame(0), out_p.frame(0));
    }

    /// With memory on, earlier frames do influence later outputs.
    #[test]
    fn memory_carries_information_forward() {
        let cfg = ModelConfig {
            fusion_halfwidth: 0,
            ablation: AblationFlags {
                bidirectional_enabled: false,
                ror_enabled: false,
                warmup_enabled: false,
                ..AblationFlags::default()
            },
            ..tiny_cfg()
        };
        let model = Model::new(cfg, 8).unwrap();
        let lr = rand_clip(17, 3, 8, 8);
        let phases = demo_phases(3);
        let base = model
            .run_subnetwork(&model.extract_features(&lr).unwrap(), &phases)
            .unwrap();
        let mut perturbed = lr.clone();
        perturbed.frame_mut(0)[5] += 0.5;
        let out_p = model
            .run_subnetwork(&model.extract_features(&perturbed).unwrap(), &phases)
            .unwrap();
        assert_ne!(base.frame(1), out_p.frame(1));
    }

    #[test]
    fn refine_is_additive_and_stage_zero_never_refines() {
        let model = Model::new(tiny_cfg(), 9).unwrap();
        let lr = rand_clip(19, 2, 8, 8);
        let phases = demo_phases(2);
        let feats = model.extract_features(&lr).unwrap();
        let residual = model.run_subnetwork(&feats, &phases).unwrap();
        let refined = model.refine_features(&feats, &phases).unwrap();
        for i in 0..feats.data.len() {
            assert!((refined.data[i] - feats.data[i] - residual.data[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn warmup_is_deterministic_and_optional() {
        let model = Model::new(ModelConfig { warmup_n: 2, ..tiny_cfg() }, 10).unwrap();
        let warm = rand_clip(23, 2, 8, 8);
        let zero = model.zero_recurrent_state(8, 8);
        let a = model.warmup_memory(&zero, &warm, Direction::Forward).unwrap();
        let b = model.warmup_memory(&zero, &warm, Direction::Backward).unwrap();
        let a2 = model.warmup_memory(&zero, &warm, Direction::Forward).unwrap();
        assert_eq!(a, a2, "same warm frames, same state");
        assert_ne!(a.h.data, b.h.data, "directions use distinct weights");
        assert_ne!(a.h.data, zero.h.data);

        // No warm frames -> zero states.
        let states = model.warm_states(None, None).unwrap();
        assert!(states.fwd.is_none() && states.bwd.is_none());

        // Warm states change the forward output.
        let lr = rand_clip(29, 3, 8, 8);
        let phases = demo_phases(3);
        let plain = model.forward(&lr, &phases, None, None).unwrap();
        let warmed = model.forward(&lr, &phases, Some(&warm), Some(&warm)).unwrap();
        assert_ne!(plain.sr[0].data, warmed.sr[0].data);
    }

    #[test]
    fn forward_validates_inputs() {
        let model = Model::new(tiny_cfg(), 11).unwrap();
        let lr = rand_clip(31, 3, 8, 8);
        assert!(matches!(
            model.forward(&lr, &demo_phases(2), None, None),
            Err(Error::Shape(_))
        ));
        let bad_warm = rand_clip(37, 2, 16, 16);
        assert!(matches!(
            model.forward(&lr, &demo_phases(3), Some(&bad_warm), None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn every_parameter_receives_gradient_at_a_generic_batch() {
        let model = Model::new(tiny_cfg(), 12).unwrap();
        let lr = rand_clip(41, 3, 8, 8);
        let hr = rand_clip(43, 3, 16, 16);
        let phases = demo_phases(3);
        let mut tape = Tape::new(true);
        let bound = model.bind(&mut tape);
        let frames: Vec<NodeId> = (0..3)
            .map(|t| tape.constant(vec![1, 8, 8], lr.frame(t).to_vec()))
            .collect();
        let staged = model.forward_on_tape(
            &mut tape,
            &bound,
            &frames,
            &phases.values,
            &WarmStates::default(),
        );
        let (loss_node, _) = tape_total_loss(&mut tape, &staged, &hr).unwrap();
        let grads = tape.backward(loss_node);
        for (idx, id) in model.bound_ids(&bound).iter().enumerate() {
            let g = grads[*id]
                .as_ref()
                .unwrap_or_else(|| panic!("{} received no gradient", model.params.name(idx)));
            assert!(
                g.iter().any(|v| *v != 0.0),
                "{} gradient is identically zero",
                model.params.name(idx)
            );
        }
    }

    /// Central-difference check on a C=8 model: relative error within
    /// 1e-3 for a 1e-3 perturbation. The target sits away from the
    /// prediction range so no L1 tie flips inside the probe interval.
    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let model = Model::new(tiny_cfg(), 13).unwrap();
        let lr = rand_clip(47, 2, 8, 8);
        let mut hr = rand_clip(53, 2, 16, 16);
        for v in &mut hr.data {
            *v += 1.5;
        }
        let phases = demo_phases(2);

        let loss_for = |params: &ParamStore| -> f64 {
            let probe = Model { cfg: model.cfg, params: params.clone() };
            let mut tape = Tape::new(false);
            let bound = probe.bind(&mut tape);
            let frames: Vec<NodeId> = (0..2)
                .map(|t| tape.constant(vec![1, 8, 8], lr.frame(t).to_vec()))
                .collect();
            let staged = probe.forward_on_tape(
                &mut tape,
                &bound,
                &frames,
                &phases.values,
                &WarmStates::default(),
            );
            let (_, report) = tape_total_loss(&mut tape, &staged, &hr).unwrap();
            report.total
        };

        let mut tape = Tape::new(true);
        let bound = model.bind(&mut tape);
        let frames: Vec<NodeId> = (0..2)
            .map(|t| tape.constant(vec![1, 8, 8], lr.frame(t).to_vec()))
            .collect();
        let staged = model.forward_on_tape(
            &mut tape,
            &bound,
            &frames,
            &phases.values,
            &WarmStates::default(),
        );
        let (loss_node, _) = tape_total_loss(&mut tape, &staged, &hr).unwrap();
        let grads = tape.backward(loss_node);

        let weight_indices: Vec<usize> = (0..model.params.len())
            .filter(|&i| model.params.name(i).ends_with(".w"))
            .collect();
        let probe = |pidx: usize, widx: usize, delta: f64| -> f64 {
            let mut shifted = model.params.clone();
            shifted.array_mut(pidx).data[widx] += delta;
            loss_for(&shifted)
        };

        let mut rng = ChaCha12Rng::seed_from_u64(59);
        let step = 1e-3;
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 8 {
            attempts += 1;
            assert!(attempts < 200, "could not find smooth probe points");
            let pidx = weight_indices[rng.random_range(0..weight_indices.len())];
            let widx = rng.random_range(0..model.params.array(pidx).len());
            let analytic = grads[model.bound_ids(&bound)[pidx]].as_ref().unwrap()[widx];
            if analytic.abs() < 1e-4 {
                continue;
            }
            let fd = (probe(pidx, widx, step) - probe(pidx, widx, -step)) / (2.0 * step);
            // Two-scale consistency: a ReLU or L1 kink inside the probe
            // interval makes the half-step estimate disagree; gradients
            // are only comparable to finite differences away from ties.
            let fd_half =
                (probe(pidx, widx, step / 2.0) - probe(pidx, widx, -step / 2.0)) / step;
            if (fd - fd_half).abs() > 2e-4 * fd.abs().max(1.0) {
                continue;
            }
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
            assert!(
                rel <= 1e-3,
                "{}[{widx}]: fd {fd} vs analytic {analytic} (rel {rel})",
                model.params.name(pidx)
            );
            checked += 1;
        }
    }

    #[test]
    fn fps_measurement_reports_positive_rate() {
        let model = Model::new(tiny_cfg(), 14).unwrap();
        let (count, fps) = model.count_params_and_fps((2, 8, 8), 3).unwrap();
        assert_eq!(count, model.count_params());
        assert!(fps > 0.0);
        assert!(model.count_params_and_fps((2, 8, 8), 2).is_err());
    }

    /// More refinement stages cost compute: omega=2 runs strictly slower
    /// than omega=0 on the same input.
    #[test]
    fn refinement_stages_reduce_throughput() {
        let fast = Model::new(ModelConfig { stages_omega: 0, ..tiny_cfg() }, 15).unwrap();
        let slow = Model::new(ModelConfig { stages_omega: 2, ..tiny_cfg() }, 15).unwrap();
        let (_, fps_fast) = fast.count_params_and_fps((4, 16, 16), 5).unwrap();
        let (_, fps_slow) = slow.count_params_and_fps((4, 16, 16), 5).unwrap();
        assert!(
            fps_slow < fps_fast,
            "omega=2 ({fps_slow} fps) must be slower than omega=0 ({fps_fast} fps)"
        );
    }

    #[test]
    fn rejects_mismatched_hidden_width() {
        let cfg = ModelConfig { recurrent_hidden: 4, ..tiny_cfg() };
        assert!(matches!(Model::new(cfg, 0), Err(Error::Config(_))));
    }
}
