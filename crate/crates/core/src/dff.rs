//! Dual-stream fusion and BEV probability.
//!
//! The two stream features are blended per channel and position with an
//! affinity `A` predicted from their concatenation (local and global channel
//! attention), then gated by a BEV occupancy probability `P` predicted from
//! the blend (a local convolutional stream plus a global stream over channel
//! mean/max). The layer widths below are a fixed stand-in architecture.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::nnops::{
    add, channel_stats, concat_channels, conv2d, global_avg_pool, mul, relu, sigmoid, Conv2dWeights, Provenance,
    WeightBundle,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CAF_FUSE: &str = "caf.fuse";
pub const CAF_LOCAL_REDUCE: &str = "caf.local.reduce";
pub const CAF_LOCAL_EXPAND: &str = "caf.local.expand";
pub const CAF_GLOBAL_REDUCE: &str = "caf.global.reduce";
pub const CAF_GLOBAL_EXPAND: &str = "caf.global.expand";
pub const PROB_LOCAL_REDUCE: &str = "prob.local.reduce";
pub const PROB_LOCAL_RES1: &str = "prob.local.res1";
pub const PROB_LOCAL_RES2: &str = "prob.local.res2";
pub const PROB_LOCAL_GATE: &str = "prob.local.gate";
pub const PROB_LOCAL_HEAD: &str = "prob.local.head";
pub const PROB_GLOBAL_CONV: &str = "prob.global.conv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CafConfig {
    pub channels: usize,
    /// Bottleneck ratio of both attention branches.
    pub ratio: usize,
}

impl CafConfig {
    pub fn new(channels: usize) -> Result<Self> {
        Self::with_ratio(channels, 4)
    }

    pub fn with_ratio(channels: usize, ratio: usize) -> Result<Self> {
        if channels == 0 || ratio == 0 || !channels.is_multiple_of(ratio) {
            return Err(Error::Config(format!(
                "bottleneck ratio {ratio} must divide channel count {channels}"
            )));
        }
        Ok(Self { channels, ratio })
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.ratio
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbNetConfig {
    pub channels: usize,
    /// Width of the local stream is `channels / reduction`.
    pub reduction: usize,
    pub global_kernel: usize,
}

impl ProbNetConfig {
    pub fn new(channels: usize) -> Result<Self> {
        if channels < 4 || !channels.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "probability net needs a channel count divisible by 4, got {channels}"
            )));
        }
        Ok(Self {
            channels,
            reduction: 4,
            global_kernel: 7,
        })
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }
}

/// Seeded weights for every fusion layer, shaped for `caf` and `prob`.
pub fn seeded_weights(caf: &CafConfig, prob: &ProbNetConfig, seed: u64) -> Result<WeightBundle> {
    let (c, hc) = (caf.channels, caf.hidden());
    let ph = prob.hidden();
    let mut rng = Rng::new(seed);
    let mut b = WeightBundle::new(Provenance::Seeded(seed));
    let layers: [(&str, usize, usize, usize); 11] = [
        (CAF_FUSE, c, 2 * c, 1),
        (CAF_LOCAL_REDUCE, hc, c, 1),
        (CAF_LOCAL_EXPAND, c, hc, 1),
        (CAF_GLOBAL_REDUCE, hc, c, 1),
        (CAF_GLOBAL_EXPAND, c, hc, 1),
        (PROB_LOCAL_REDUCE, ph, prob.channels, 3),
        (PROB_LOCAL_RES1, ph, ph, 3),
        (PROB_LOCAL_RES2, ph, ph, 3),
        (PROB_LOCAL_GATE, ph, ph, 1),
        (PROB_LOCAL_HEAD, 1, ph, 1),
        (PROB_GLOBAL_CONV, 1, 2, prob.global_kernel),
    ];
    for (name, co, ci, k) in layers {
        b.insert(name, Conv2dWeights::seeded(&mut rng, co, ci, k, k)?);
    }
    Ok(b)
}

/// Same layer set as [`seeded_weights`] with every kernel and bias zero.
pub fn zero_weights(caf: &CafConfig, prob: &ProbNetConfig) -> Result<WeightBundle> {
    let seeded = seeded_weights(caf, prob, 0)?;
    let mut b = WeightBundle::new(Provenance::Seeded(0));
    for name in seeded.names() {
        let w = seeded.get(name)?;
        let (kh, kw) = w.kernel_size();
        b.insert(name, Conv2dWeights::zeros(w.c_out(), w.c_in(), kh, kw)?);
    }
    Ok(b)
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() || a.rank() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Channel-attention affinity `A = σ(local(z) + global(z))` with
/// `z = fuse([F_lss; F_ht])`.
pub fn caf_affinity(
    f_lss: &Tensor,
    f_ht: &Tensor,
    weights: &WeightBundle,
    cfg: &CafConfig,
    exec: &Executor,
) -> Result<Tensor> {
    check_same(f_lss, f_ht, "stream features differ")?;
    let c = cfg.channels;
    if f_lss.shape()[0] != c {
        return Err(Error::ShapeMismatch(format!(
            "features have {} channels, fusion configured for {c}",
            f_lss.shape()[0]
        )));
    }
    let hc = cfg.hidden();
    let z = conv2d(
        &concat_channels(f_lss, f_ht)?,
        weights.expect(CAF_FUSE, c, 2 * c, 1)?,
        exec,
    )?;
    let local = conv2d(
        &relu(&conv2d(&z, weights.expect(CAF_LOCAL_REDUCE, hc, c, 1)?, exec)?),
        weights.expect(CAF_LOCAL_EXPAND, c, hc, 1)?,
        exec,
    )?;
    let pooled = global_avg_pool(&z)?;
    let global = conv2d(
        &relu(&conv2d(&pooled, weights.expect(CAF_GLOBAL_REDUCE, hc, c, 1)?, exec)?),
        weights.expect(CAF_GLOBAL_EXPAND, c, hc, 1)?,
        exec,
    )?;
    Ok(sigmoid(&add(&local, &global)?))
}

/// `A·F_lss + (1 − A)·F_ht`, evaluated as `F_ht + A·(F_lss − F_ht)` in 64-bit
/// so the result never leaves `[min, max]` of the operands and is exact at
/// `A = 0`, `A = 1` and for equal operands.
pub fn blend(f_lss: &Tensor, f_ht: &Tensor, affinity: &Tensor) -> Result<Tensor> {
    check_same(f_lss, f_ht, "stream features differ")?;
    check_same(f_lss, affinity, "affinity shape")?;
    let data = f_lss
        .data()
        .iter()
        .zip(f_ht.data())
        .zip(affinity.data())
        .map(|((&l, &h), &a)| (h as f64 + a as f64 * (l as f64 - h as f64)) as f32)
        .collect();
    Tensor::new(f_lss.shape().to_vec(), data)
}

/// Returns `(F_channel, A)`.
pub fn caf_fuse(
    f_lss: &Tensor,
    f_ht: &Tensor,
    weights: &WeightBundle,
    cfg: &CafConfig,
    exec: &Executor,
) -> Result<(Tensor, Tensor)> {
    let a = caf_affinity(f_lss, f_ht, weights, cfg, exec)?;
    Ok((blend(f_lss, f_ht, &a)?, a))
}

/// Local and global logit planes of the probability net, each `[1, ny, nx]`.
pub fn bev_logits(
    f_channel: &Tensor,
    weights: &WeightBundle,
    cfg: &ProbNetConfig,
    exec: &Executor,
) -> Result<(Tensor, Tensor)> {
    if f_channel.rank() != 3 || f_channel.shape()[0] != cfg.channels {
        return Err(Error::ShapeMismatch(format!(
            "probability net expects [{}, H, W], got {:?}",
            cfg.channels,
            f_channel.shape()
        )));
    }
    let (c, h) = (cfg.channels, cfg.hidden());
    let x = relu(&conv2d(f_channel, weights.expect(PROB_LOCAL_REDUCE, h, c, 3)?, exec)?);
    let r = conv2d(
        &relu(&conv2d(&x, weights.expect(PROB_LOCAL_RES1, h, h, 3)?, exec)?),
        weights.expect(PROB_LOCAL_RES2, h, h, 3)?,
        exec,
    )?;
    let y = relu(&add(&x, &r)?);
    let gate = sigmoid(&conv2d(
        &global_avg_pool(&y)?,
        weights.expect(PROB_LOCAL_GATE, h, h, 1)?,
        exec,
    )?);
    let y = mul(&y, &gate)?;
    let local = conv2d(&y, weights.expect(PROB_LOCAL_HEAD, 1, h, 1)?, exec)?;
    let k = cfg.global_kernel;
    let global = conv2d(&channel_stats(f_channel)?, weights.expect(PROB_GLOBAL_CONV, 1, 2, k)?, exec)?;
    Ok((local, global))
}

/// `P = σ(local + global)`, `[1, ny, nx]`, strictly inside (0, 1).
pub fn bev_probability(
    f_channel: &Tensor,
    weights: &WeightBundle,
    cfg: &ProbNetConfig,
    exec: &Executor,
) -> Result<Tensor> {
    let (local, global) = bev_logits(f_channel, weights, cfg, exec)?;
    Ok(sigmoid(&add(&local, &global)?))
}

/// `F[c, i, j] = P[0, i, j] · F_channel[c, i, j]`.
pub fn assemble_final(f_channel: &Tensor, prob: &Tensor) -> Result<Tensor> {
    let [_, h, w] = *f_channel.shape() else {
        return Err(Error::ShapeMismatch(format!("expected [C, H, W], got {:?}", f_channel.shape())));
    };
    if prob.shape() != [1, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "probability {:?} does not match features {:?}",
            prob.shape(),
            f_channel.shape()
        )));
    }
    let plane = h * w;
    let p = prob.data();
    let data = f_channel
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| p[i % plane] * x)
        .collect();
    Tensor::new(f_channel.shape().to_vec(), data)
}
