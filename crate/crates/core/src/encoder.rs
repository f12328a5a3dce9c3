//! Hierarchical spectral-spatial encoder: four stages of patch embedding and
//! depthwise-separable residual blocks, fused top-down into a latent pyramid.

use ndtensor::ops::UpsampleMode;
use ndtensor::{Bindings, ParameterStore, Scalar, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{MgirError, Result};
use crate::nn::{self, Initializer};

pub const STAGES: usize = 4;
const NORM_EPS: f64 = 1e-5;

/// How two feature maps of equal shape are merged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Addition,
    Concatenation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub base_channels: usize,
    pub stage_depths: [usize; STAGES],
    pub spatial_kernel: usize,
    pub spectral_kernel: usize,
    /// Hidden width of the block MLP as a multiple of the stage channels.
    pub mlp_ratio: usize,
    pub fusion: Fusion,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            base_channels: 8,
            stage_depths: [2, 2, 4, 4],
            spatial_kernel: 5,
            spectral_kernel: 5,
            mlp_ratio: 2,
            fusion: Fusion::Addition,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.base_channels == 0 {
            errs.push("encoder.base_channels must be at least 1".into());
        }
        if self.mlp_ratio == 0 {
            errs.push("encoder.mlp_ratio must be at least 1".into());
        }
        for (name, k) in [("spatial_kernel", self.spatial_kernel), ("spectral_kernel", self.spectral_kernel)] {
            if k % 2 == 0 {
                errs.push(format!("encoder.{name} must be odd, got {k}"));
            }
        }
        errs
    }

    /// Channels of stage `i` (0-based).
    pub fn channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }
}

/// Geometry of one patch-embedding stage (0-based index).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagePlan {
    pub in_channels: usize,
    pub channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    /// Symmetric zero padding; on strided axes it is 1 exactly when the
    /// incoming extent is odd.
    pub padding: [usize; 3],
    /// Output extents `[D, H, W]`.
    pub extents: [usize; 3],
}

/// Stage geometry for an input of extents `[D, H, W]`. Stage 1 keeps full
/// resolution, stage 2 halves every axis, stages 3 and 4 halve the spatial
/// axes only; each stage after the first doubles the channels.
pub fn stage_plan(cfg: &EncoderConfig, extents: [usize; 3]) -> Result<Vec<StagePlan>> {
    if extents.contains(&0) {
        return Err(MgirError::config(format!("encoder input {extents:?} has an empty axis")));
    }
    let mut plans = Vec::with_capacity(STAGES);
    let mut cur = extents;
    for stage in 0..STAGES {
        let (kernel, stride) = match stage {
            0 => ([3, 3, 3], [1, 1, 1]),
            1 => ([2, 2, 2], [2, 2, 2]),
            _ => ([1, 2, 2], [1, 2, 2]),
        };
        let mut padding = [0; 3];
        let mut next = cur;
        for ax in 0..3 {
            if stage == 0 {
                padding[ax] = 1;
            } else if stride[ax] == 2 {
                if cur[ax] < 2 {
                    const AXES: [&str; 3] = ["spectral", "height", "width"];
                    return Err(MgirError::config(format!(
                        "input {extents:?} is too small for encoder stage {}: {} extent {} cannot be halved",
                        stage + 1,
                        AXES[ax],
                        cur[ax]
                    )));
                }
                padding[ax] = cur[ax] % 2;
                next[ax] = cur[ax].div_ceil(2);
            }
        }
        plans.push(StagePlan {
            in_channels: if stage == 0 { 1 } else { cfg.channels(stage - 1) },
            channels: cfg.channels(stage),
            kernel,
            stride,
            padding,
            extents: next,
        });
        cur = next;
    }
    Ok(plans)
}

/// Registers every encoder parameter under `enc.`.
pub fn init(cfg: &EncoderConfig, init: &mut Initializer) -> Result<()> {
    for stage in 0..STAGES {
        let c = cfg.channels(stage);
        let c_in = if stage == 0 { 1 } else { cfg.channels(stage - 1) };
        let kernel = match stage {
            0 => [3, 3, 3],
            1 => [2, 2, 2],
            _ => [1, 2, 2],
        };
        init.conv(&format!("enc.s{stage}.embed"), c, c_in, kernel)?;
        init.norm(&format!("enc.s{stage}.norm"), c)?;
        for block in 0..cfg.stage_depths[stage] {
            init_block(cfg, init, &format!("enc.s{stage}.b{block}"), c)?;
        }
        if stage + 1 < STAGES {
            init.conv(&format!("enc.s{stage}.reduce"), c, cfg.channels(stage + 1), [1, 1, 1])?;
            if cfg.fusion == Fusion::Concatenation {
                init.conv(&format!("enc.s{stage}.merge"), c, 2 * c, [1, 1, 1])?;
            }
        }
    }
    Ok(())
}

fn init_block(cfg: &EncoderConfig, init: &mut Initializer, prefix: &str, c: usize) -> Result<()> {
    let (ks, kl, hidden) = (cfg.spatial_kernel, cfg.spectral_kernel, cfg.mlp_ratio * c);
    init.conv(&format!("{prefix}.f2"), c, c, [1, 1, 1])?;
    init.conv(&format!("{prefix}.dws"), c, 1, [1, ks, ks])?;
    init.conv(&format!("{prefix}.dwl"), c, 1, [kl, 1, 1])?;
    init.conv(&format!("{prefix}.pw"), c, c, [1, 1, 1])?;
    init.conv(&format!("{prefix}.f1"), c, c, [1, 1, 1])?;
    init.conv(&format!("{prefix}.fc1"), hidden, c, [1, 1, 1])?;
    init.conv(&format!("{prefix}.fc2"), c, hidden, [1, 1, 1])
}

/// Strided convolution followed by channel layer normalization.
pub fn patch_embed<T: Scalar>(tape: &mut Tape<T>, b: &Bindings, plan: &StagePlan, stage: usize, x: Var) -> Result<Var> {
    let y = nn::conv(tape, b, &format!("enc.s{stage}.embed"), x, plan.stride, plan.padding)?;
    nn::channel_norm(tape, b, &format!("enc.s{stage}.norm"), y, NORM_EPS)
}

/// One residual block on `[N, C, D, H, W]`:
/// a pointwise → spatial depthwise → spectral depthwise → pointwise → pointwise
/// branch, then a two-layer pointwise MLP branch.
pub fn ssdw<T: Scalar>(tape: &mut Tape<T>, b: &Bindings, prefix: &str, x: Var) -> Result<Var> {
    let y = nn::pointwise(tape, b, &format!("{prefix}.f2"), x)?;
    let y = nn::depthwise(tape, b, &format!("{prefix}.dws"), y)?;
    let y = nn::depthwise(tape, b, &format!("{prefix}.dwl"), y)?;
    let y = nn::pointwise(tape, b, &format!("{prefix}.pw"), y)?;
    let y = nn::pointwise(tape, b, &format!("{prefix}.f1"), y)?;
    let mid = tape.add(y, x)?;
    let z = nn::pointwise(tape, b, &format!("{prefix}.fc1"), mid)?;
    let z = tape.gelu(z)?;
    let z = nn::pointwise(tape, b, &format!("{prefix}.fc2"), z)?;
    Ok(tape.add(z, mid)?)
}

/// Encoder output on the tape: one `[C_i, D_i, H_i, W_i]` volume per stage,
/// finest first.
#[derive(Clone, Debug)]
pub struct LatentPyramid {
    pub levels: Vec<Var>,
    pub plans: Vec<StagePlan>,
}

/// Encodes a lifted measurement `[1, D, H, W]`.
pub fn encode<T: Scalar>(tape: &mut Tape<T>, b: &Bindings, m0: Var, cfg: &EncoderConfig) -> Result<LatentPyramid> {
    let shape = tape.shape(m0).to_vec();
    let &[1, d, h, w] = shape.as_slice() else {
        return Err(MgirError::Shape {
            what: "lifted measurement",
            expected: vec![1, 0, 0, 0],
            got: shape,
        });
    };
    let plans = stage_plan(cfg, [d, h, w])?;
    let mut x = tape.reshape(m0, &[1, 1, d, h, w])?;
    let mut stages = Vec::with_capacity(STAGES);
    for (stage, plan) in plans.iter().enumerate() {
        x = patch_embed(tape, b, plan, stage, x)?;
        for block in 0..cfg.stage_depths[stage] {
            x = ssdw(tape, b, &format!("enc.s{stage}.b{block}"), x)?;
        }
        stages.push(x);
    }

    let mut fused = vec![stages[STAGES - 1]];
    for stage in (0..STAGES - 1).rev() {
        let deeper = *fused.last().unwrap();
        let reduced = nn::pointwise(tape, b, &format!("enc.s{stage}.reduce"), deeper)?;
        let up = tape.upsample(reduced, plans[stage].extents, UpsampleMode::Trilinear)?;
        let merged = match cfg.fusion {
            Fusion::Addition => tape.add(stages[stage], up)?,
            Fusion::Concatenation => {
                let cat = tape.concat(&[stages[stage], up], 1)?;
                nn::pointwise(tape, b, &format!("enc.s{stage}.merge"), cat)?
            }
        };
        fused.push(merged);
    }
    fused.reverse();

    let levels = fused
        .into_iter()
        .zip(&plans)
        .map(|(v, p)| {
            let [d, h, w] = p.extents;
            tape.reshape(v, &[p.channels, d, h, w])
        })
        .collect::<Result<_, _>>()?;
    Ok(LatentPyramid { levels, plans })
}

/// Number of scalar parameters registered in `store`.
pub fn count_params(store: &ParameterStore<f32>) -> usize {
    store.count_params()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlopsKind {
    #[serde(rename = "W-MSA")]
    WindowAttention,
    #[serde(rename = "G-MSA")]
    GlobalAttention,
    #[serde(rename = "SSDW")]
    Ssdw,
}

impl FlopsKind {
    pub const ALL: [FlopsKind; 3] = [FlopsKind::WindowAttention, FlopsKind::GlobalAttention, FlopsKind::Ssdw];

    pub fn label(self) -> &'static str {
        match self {
            FlopsKind::WindowAttention => "W-MSA",
            FlopsKind::GlobalAttention => "G-MSA",
            FlopsKind::Ssdw => "SSDW",
        }
    }
}

/// Closed-form cost of one layer on an `H×W×D` volume with `C` channels and
/// window or kernel size `M`.
pub fn flops(kind: FlopsKind, h: u64, w: u64, d: u64, c: u64, m: u64) -> u128 {
    let (h, w, d, c, m) = (h as u128, w as u128, d as u128, c as u128, m as u128);
    let n = h * w * d;
    match kind {
        FlopsKind::WindowAttention => 4 * n * c * c + 2 * m * m * m * n * c,
        FlopsKind::GlobalAttention => 4 * n * c * c + 2 * n * n * c,
        FlopsKind::Ssdw => (m * m + m) * n * c + 2 * n * c * c,
    }
}
