//! Desk-scale functional executor with a byte-level traffic trace.
//!
//! The executor runs a dynamic block the slow, obvious way (direct loop
//! nests, one patch at a time) and produces two things: the output tensor,
//! and a [`TrafficTrace`] whose byte counters follow the same layout and
//! run-length conventions as the latency model. Fusion plans change the
//! traffic, never the values; convolutions carry no bias, so the
//! masker-fused dense conv1 and the per-patch conv1 agree exactly even
//! across zero padding. MAC counters follow the reporting convention of
//! the flops module, which caps the unfused conv1 at its dense cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use crate::latcost::{self, ByteTotals};
use crate::mask::CoarseMask;
use crate::model::{BlockSpec, ConvLayerSpec, HardwareSpec};
use crate::sched::{rewrite_block, BlockOp, FusionPlan};
use crate::ELEM_BYTES;

/// Dense CHW tensor of f32.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_fn(
        c: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut t = Tensor::zeros(c, h, w);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = f(ci, y, x);
                    t.set(ci, y, x, v);
                }
            }
        }
        t
    }

    pub fn random(c: usize, h: usize, w: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(c, h, w);
        for v in &mut t.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    /// Zero-padded read: out-of-bounds coordinates return 0.
    #[inline]
    fn get_padded(&self, c: usize, y: i64, x: i64) -> f32 {
        if y < 0 || x < 0 || y >= self.h as i64 || x >= self.w as i64 {
            0.0
        } else {
            self.get(c, y as usize, x as usize)
        }
    }

    pub fn bytes(&self) -> u64 {
        self.data.len() as u64 * ELEM_BYTES
    }

    /// Flat binary with a one-line JSON shape header.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut out =
            format!("{{\"c\":{},\"h\":{},\"w\":{}}}\n", self.c, self.h, self.w).into_bytes();
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, out).map_err(|e| Error::Parse(format!("write {path:?}: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| Error::Parse(format!("read {path:?}: {e}")))?;
        let newline = raw
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse("missing shape header".into()))?;
        let header: serde_json::Value = serde_json::from_slice(&raw[..newline])
            .map_err(|e| Error::Parse(format!("bad shape header: {e}")))?;
        let dim = |k: &str| -> Result<usize> {
            header[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Parse(format!("missing dim '{k}'")))
        };
        let (c, h, w) = (dim("c")?, dim("h")?, dim("w")?);
        let body = &raw[newline + 1..];
        if body.len() != c * h * w * 4 {
            return Err(Error::Parse(format!(
                "payload {} bytes for shape {c}x{h}x{w}",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Tensor { c, h, w, data })
    }
}

/// Convolution weights in OIHW order (group-local input channels).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub spec: ConvLayerSpec,
    pub data: Vec<f32>,
}

impl ConvWeights {
    pub fn new(spec: ConvLayerSpec, data: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        let expect =
            spec.c_out as usize * spec.fan_in_channels() as usize * (spec.kernel as usize).pow(2);
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "{} weight values for layer needing {expect}",
                data.len()
            )));
        }
        Ok(ConvWeights { spec, data })
    }

    pub fn random(spec: ConvLayerSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n =
            spec.c_out as usize * spec.fan_in_channels() as usize * (spec.kernel as usize).pow(2);
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ConvWeights { spec, data }
    }

    #[inline]
    fn at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        let k = self.spec.kernel as usize;
        let fan_in = self.spec.fan_in_channels() as usize;
        self.data[((o * fan_in + i) * k + ky) * k + kx]
    }
}

/// Direct convolution with zero padding k/2 and the layer's stride/groups.
pub fn dense_conv(x: &Tensor, weights: &ConvWeights) -> Result<Tensor> {
    let spec = &weights.spec;
    if x.c != spec.c_in as usize {
        return Err(Error::Shape(format!(
            "input has {} channels, layer wants {}",
            x.c, spec.c_in
        )));
    }
    let stride = spec.stride as usize;
    let k = spec.kernel as usize;
    let pad = (k / 2) as i64;
    let (oh, ow) = (x.h / stride, x.w / stride);
    let group_in = spec.fan_in_channels() as usize;
    let group_out = (spec.c_out / spec.groups) as usize;
    let mut out = Tensor::zeros(spec.c_out as usize, oh, ow);
    for o in 0..spec.c_out as usize {
        let group = o / group_out;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for i in 0..group_in {
                    let ci = group * group_in + i;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride) as i64 + ky as i64 - pad;
                            let ix = (ox * stride) as i64 + kx as i64 - pad;
                            acc += x.get_padded(ci, iy, ix) * weights.at(o, i, ky, kx);
                        }
                    }
                }
                out.set(o, oy, ox, acc);
            }
        }
    }
    Ok(out)
}

/// All weights of one dynamic block. The masker holds the two-channel 1x1
/// convolution; no convolution carries a bias.
#[derive(Debug, Clone)]
pub struct BlockWeights {
    pub conv1: ConvWeights,
    pub conv2: ConvWeights,
    pub conv3: ConvWeights,
    pub masker: ConvWeights,
    pub downsample: Option<ConvWeights>,
}

impl BlockWeights {
    pub fn random(block: &BlockSpec, seed: u64) -> Self {
        BlockWeights {
            conv1: ConvWeights::random(block.conv1().clone(), seed ^ 0x1),
            conv2: ConvWeights::random(block.conv2().clone(), seed ^ 0x2),
            conv3: ConvWeights::random(block.conv3().clone(), seed ^ 0x3),
            masker: ConvWeights::random(
                ConvLayerSpec::new(block.conv1().c_in, 2, 1, 1, 1),
                seed ^ 0x4,
            ),
            downsample: block
                .downsample
                .as_ref()
                .map(|d| ConvWeights::random(d.clone(), seed ^ 0x5)),
        }
    }
}

/// Byte and MAC counters mirroring the latency model's accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrafficTrace {
    pub off2on_bytes: u64,
    pub global2local_bytes: u64,
    pub local2global_bytes: u64,
    pub on2off_bytes: u64,
    pub mac_count: u64,
}

/// Reduce a two-channel 1x1 masker to one channel: W0 - W1. The sign of
/// the reduced output reproduces the argmax of the two-channel output.
pub fn masker_reduce_weights(w2: &ConvWeights) -> Result<ConvWeights> {
    if w2.spec.kernel != 1 || w2.spec.c_out != 2 || w2.spec.groups != 1 {
        return Err(Error::Shape(
            "masker reduction needs a 2-channel 1x1 conv".into(),
        ));
    }
    let c_in = w2.spec.c_in as usize;
    let data = (0..c_in)
        .map(|i| w2.at(0, i, 0, 0) - w2.at(1, i, 0, 0))
        .collect();
    ConvWeights::new(
        ConvLayerSpec::new(w2.spec.c_in, 1, 1, w2.spec.stride, 1),
        data,
    )
}

fn check_block_support(block: &BlockSpec, x: &Tensor, coarse: &CoarseMask) -> Result<()> {
    if block.se_reduction.is_some() {
        return Err(Error::Shape(
            "SE blocks are cost-model only; the executor does not run them".into(),
        ));
    }
    if !block.has_residual {
        return Err(Error::Shape(
            "executor requires a residual block (input fill)".into(),
        ));
    }
    if x.c != block.conv1().c_in as usize
        || x.h != block.input_h as usize
        || x.w != block.input_w as usize
    {
        return Err(Error::Shape(format!(
            "input {}x{}x{} does not match block {}x{}x{}",
            x.c,
            x.h,
            x.w,
            block.conv1().c_in,
            block.input_h,
            block.input_w
        )));
    }
    let (hc, wc) = block.coarse_dims();
    if coarse.h_cells() != hc as usize || coarse.w_cells() != wc as usize {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match coarse grid {}x{}",
            coarse.h_cells(),
            coarse.w_cells(),
            hc,
            wc
        )));
    }
    Ok(())
}

/// Valid (no padding) convolution of one gathered region at the layer's
/// stride; the region already contains the halo.
fn region_conv(region: &Tensor, weights: &ConvWeights) -> Tensor {
    let spec = &weights.spec;
    let k = spec.kernel as usize;
    let stride = spec.stride as usize;
    let side = (region.h - k) / stride + 1;
    let group_in = spec.fan_in_channels() as usize;
    let group_out = (spec.c_out / spec.groups) as usize;
    let mut out = Tensor::zeros(spec.c_out as usize, side, side);
    for o in 0..spec.c_out as usize {
        let group = o / group_out;
        for oy in 0..side {
            for ox in 0..side {
                let mut acc = 0.0f32;
                for i in 0..group_in {
                    let ci = group * group_in + i;
                    for ky in 0..k {
                        for kx in 0..k {
                            acc += region.get(ci, oy * stride + ky, ox * stride + kx)
                                * weights.at(o, i, ky, kx);
                        }
                    }
                }
                out.set(o, oy, ox, acc);
            }
        }
    }
    out
}

/// Cut a zero-padded square region out of a dense tensor.
fn extract_region(x: &Tensor, y0: i64, x0: i64, side: usize) -> Tensor {
    let mut out = Tensor::zeros(x.c, side, side);
    for c in 0..x.c {
        for dy in 0..side {
            for dx in 0..side {
                out.set(c, dy, dx, x.get_padded(c, y0 + dy as i64, x0 + dx as i64));
            }
        }
    }
    out
}

/// Run a dynamic block: compute the bottleneck on the activated patches,
/// pass the residual through everywhere else, and count the traffic the
/// scheduled operator list would move. The mask is an input; the masker's
/// own convolution contributes traffic but not decisions. The hardware
/// spec enters only through the weight-copy rule (one copy per
/// participating PE).
pub fn dynamic_block_forward(
    x: &Tensor,
    weights: &BlockWeights,
    block: &BlockSpec,
    coarse: &CoarseMask,
    fusion: &FusionPlan,
    hw: &HardwareSpec,
    trace: &mut TrafficTrace,
) -> Result<Tensor> {
    check_block_support(block, x, coarse)?;
    let s = block.granularity as usize;
    let g = block.gathered_input_side() as usize;
    let stride = block.conv2().stride as usize;
    let pad = (block.conv2().kernel / 2) as i64;

    let residual = match &weights.downsample {
        Some(d) => dense_conv(x, d)?,
        None => x.clone(),
    };
    let mut out = residual.clone();

    // Dense conv1 when the masker fusion makes it a static operation.
    let conv1_dense = if fusion.fuse_masker_conv1 {
        Some(dense_conv(x, &weights.conv1)?)
    } else {
        None
    };

    for (ci, cj) in &coarse.patch_indices().indices {
        let out_y = *ci as usize * s;
        let out_x = *cj as usize * s;
        // conv2 input region origin in conv1-output coordinates
        let y0 = (out_y * stride) as i64 - pad;
        let x0 = (out_x * stride) as i64 - pad;
        let mid = match &conv1_dense {
            Some(full) => extract_region(full, y0, x0, g),
            None => {
                let region = extract_region(x, y0, x0, g);
                region_conv(&region, &weights.conv1)
            }
        };
        let after2 = region_conv(&mid, &weights.conv2);
        let patch = region_conv(&after2, &weights.conv3);
        for c in 0..patch.c {
            for dy in 0..s {
                for dx in 0..s {
                    let v = out.get(c, out_y + dy, out_x + dx) + patch.get(c, dy, dx);
                    out.set(c, out_y + dy, out_x + dx, v);
                }
            }
        }
    }

    account_block(trace, block, coarse.ones(), fusion, hw);
    Ok(out)
}

/// Dense reference forward of the same block (no masker, all patches).
pub fn dense_block_forward(
    x: &Tensor,
    weights: &BlockWeights,
    block: &BlockSpec,
) -> Result<Tensor> {
    if block.se_reduction.is_some() {
        return Err(Error::Shape("SE blocks are cost-model only".into()));
    }
    let residual = match &weights.downsample {
        Some(d) => dense_conv(x, d)?,
        None => x.clone(),
    };
    let mid = dense_conv(x, &weights.conv1)?;
    let after2 = dense_conv(&mid, &weights.conv2)?;
    let main = dense_conv(&after2, &weights.conv3)?;
    let mut out = residual;
    if block.has_residual {
        for (o, m) in out.data.iter_mut().zip(&main.data) {
            *o += m;
        }
    } else {
        out = main;
    }
    Ok(out)
}

/// Accumulate the traffic the rewritten operator list moves for `p`
/// activated patches, by the executor's own accounting. MAC counters use
/// the flops-module convention (halo-capped unfused conv1, no elementwise
/// MACs); skipped ops at p = 0 move nothing.
fn account_block(
    trace: &mut TrafficTrace,
    block: &BlockSpec,
    p: u64,
    fusion: &FusionPlan,
    hw: &HardwareSpec,
) {
    let e = ELEM_BYTES;
    let pe = hw.num_pe as u64;
    let in_hw = block.input_h as u64 * block.input_w as u64;
    let cells = block.coarse_cells();
    let s2 = (block.granularity as u64).pow(2);
    let g2 = (block.gathered_input_side() as u64).pow(2);
    let c_in = block.conv1().c_in as u64;
    let c1 = block.conv1().c_out as u64;
    let c2 = block.conv2().c_out as u64;
    let c4 = block.conv3().c_out as u64;
    let fan1 = block.conv1().fan_in_channels() as u64;
    let fan2 = block.conv2().fan_in_channels() as u64;
    let fan3 = block.conv3().fan_in_channels() as u64;
    let k2 = (block.conv2().kernel as u64).pow(2);

    // Fetching patches out of a dense map: re-reads across overlapping
    // halos on the on-chip side, unique bytes capped at the map size.
    let patch_fetch = |chans: u64, pixels_per_patch: u64| -> (u64, u64) {
        let unique = (p * pixels_per_patch).min(in_hw) * chans * e;
        let fetched = p * chans * pixels_per_patch * e;
        (unique, fetched)
    };

    for op in rewrite_block(block, fusion) {
        // Operators gated by the mask move nothing when no patch is active.
        let gated = !matches!(op, BlockOp::Masker | BlockOp::FusedMaskerConv1);
        if p == 0 && gated {
            continue;
        }
        match op {
            BlockOp::Masker => {
                let w = c_in * e;
                trace.off2on_bytes += c_in * in_hw * e + w;
                trace.global2local_bytes += c_in * in_hw * e + w * pe;
                trace.local2global_bytes += cells * e;
                trace.on2off_bytes += cells * e;
                trace.mac_count += c_in * in_hw + cells * c_in;
            }
            BlockOp::FusedMaskerConv1 => {
                let w = (c1 + 1) * fan1 * e;
                let out = (c1 * in_hw + cells) * e;
                trace.off2on_bytes += c_in * in_hw * e + w;
                trace.global2local_bytes += c_in * in_hw * e + w * pe;
                trace.local2global_bytes += out;
                trace.on2off_bytes += out;
                // flops convention: dense conv1 plus the standalone masker
                trace.mac_count += in_hw * c1 * fan1 + c_in * in_hw + cells * c_in;
            }
            BlockOp::Gather => {
                let chans = if fusion.fuse_masker_conv1 { c1 } else { c_in };
                let (unique, fetched) = patch_fetch(chans, g2);
                let packed = p * chans * g2 * e;
                trace.off2on_bytes += unique;
                trace.global2local_bytes += fetched;
                trace.local2global_bytes += packed;
                trace.on2off_bytes += packed;
            }
            BlockOp::Conv1 { from_packed } => {
                let (in_unique, in_fetched) = if from_packed {
                    let packed = p * c_in * g2 * e;
                    (packed, packed)
                } else {
                    patch_fetch(c_in, g2)
                };
                let w = block.conv1().weight_bytes();
                let out = p * c1 * g2 * e;
                trace.off2on_bytes += in_unique + w;
                trace.global2local_bytes += in_fetched + w * p.min(pe);
                trace.local2global_bytes += out;
                trace.on2off_bytes += out;
                // halo-capped conv1 MACs, the reporting convention
                trace.mac_count += (p * g2).min(in_hw) * c1 * fan1;
            }
            BlockOp::Conv2 { from_packed } => {
                let (in_unique, in_fetched) = if from_packed {
                    let packed = p * c1 * g2 * e;
                    (packed, packed)
                } else {
                    patch_fetch(c1, g2)
                };
                let w = block.conv2().weight_bytes();
                let out = p * c2 * s2 * e;
                trace.off2on_bytes += in_unique + w;
                trace.global2local_bytes += in_fetched + w * p.min(pe);
                trace.local2global_bytes += out;
                trace.on2off_bytes += out;
                trace.mac_count += p * s2 * c2 * fan2 * k2;
            }
            BlockOp::Conv3 => {
                let packed_in = p * c2 * s2 * e;
                let w = block.conv3().weight_bytes();
                let out = p * c4 * s2 * e;
                trace.off2on_bytes += packed_in + w;
                trace.global2local_bytes += packed_in + w * p.min(pe);
                trace.local2global_bytes += out;
                trace.on2off_bytes += out;
                trace.mac_count += p * s2 * c4 * fan3;
            }
            BlockOp::Scatter => {
                let bytes = p * c4 * s2 * e;
                trace.off2on_bytes += bytes;
                trace.global2local_bytes += bytes;
                trace.local2global_bytes += bytes;
                trace.on2off_bytes += bytes;
            }
            BlockOp::Add => {
                // patch-wise update: scattered main path + residual patches
                let bytes = p * c4 * s2 * e;
                trace.off2on_bytes += 2 * bytes;
                trace.global2local_bytes += 2 * bytes;
                trace.local2global_bytes += bytes;
                trace.on2off_bytes += bytes;
            }
            BlockOp::ScatterAdd => {
                let bytes = p * c4 * s2 * e;
                trace.off2on_bytes += 2 * bytes;
                trace.global2local_bytes += 2 * bytes;
                trace.local2global_bytes += bytes;
                trace.on2off_bytes += bytes;
            }
        }
    }

    if let Some(down) = &block.downsample {
        let out_hw = block.out_h() as u64 * block.out_w() as u64;
        let w = down.weight_bytes();
        let in_bytes = down.c_in as u64 * in_hw * e;
        let out_bytes = down.c_out as u64 * out_hw * e;
        trace.off2on_bytes += in_bytes + w;
        trace.global2local_bytes += in_bytes + w * pe;
        trace.local2global_bytes += out_bytes;
        trace.on2off_bytes += out_bytes;
        trace.mac_count += out_hw
            * down.c_out as u64
            * down.fan_in_channels() as u64
            * (down.kernel as u64).pow(2);
    }
}

/// The default validation suite: a deterministic set of desk-scale
/// blocks, masks and fusion plans covering strides, downsamples and all
/// fusion combinations. Shared by the CLI `validate` command and the
/// acceptance tests.
pub fn default_validation_suite(base_seed: u64) -> Vec<(BlockSpec, CoarseMask, FusionPlan)> {
    let plans = [
        FusionPlan::NONE,
        FusionPlan {
            fuse_masker_conv1: true,
            ..FusionPlan::NONE
        },
        FusionPlan {
            fuse_gather_conv: true,
            ..FusionPlan::NONE
        },
        FusionPlan {
            fuse_scatter_add: true,
            ..FusionPlan::NONE
        },
        FusionPlan::ALL,
        FusionPlan {
            fuse_masker_conv1: true,
            fuse_gather_conv: true,
            fuse_scatter_add: false,
        },
    ];
    let shapes = [
        // (c_in, c_mid, c_out, out_side, stride, granularity, downsample)
        (8u32, 4u32, 8u32, 8u32, 1u32, 2u32, false),
        (6, 4, 6, 12, 1, 4, false),
        (8, 8, 16, 8, 2, 2, true),
        (16, 4, 16, 6, 1, 3, false),
        (4, 2, 4, 16, 1, 1, false),
        (12, 6, 24, 4, 2, 2, true),
    ];
    let mut suite = Vec::new();
    for (i, &(c_in, c_mid, c_out, side, stride, s, down)) in shapes.iter().enumerate() {
        let block = BlockSpec::bottleneck(c_in, c_mid, c_out, side, stride, 1, None, s, down)
            .expect("suite shapes are valid");
        for (j, plan) in plans.iter().enumerate() {
            let seed = base_seed ^ ((i as u64) << 8) ^ j as u64;
            let rate = [0.0, 0.25, 0.5, 0.75, 1.0][(i + j) % 5];
            let (hc, wc) = block.coarse_dims();
            let mut mask = crate::mask::synth_mask(hc as usize, wc as usize, rate, seed)
                .expect("suite masks are valid");
            mask.s = s;
            suite.push((block.clone(), mask, *plan));
        }
    }
    suite
}

/// Model-vs-trace comparison for one concrete mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficReport {
    pub model: ByteTotals,
    pub traced: TrafficTrace,
    /// (term, model bytes, traced bytes) for every mismatching term.
    pub deltas: Vec<(String, u64, u64)>,
    pub matches: bool,
}

/// Run the executor and the latency model's byte accounting on the same
/// concrete mask and compare term by term.
pub fn verify_traffic(
    block: &BlockSpec,
    coarse: &CoarseMask,
    fusion: &FusionPlan,
    hw: &HardwareSpec,
    seed: u64,
) -> Result<TrafficReport> {
    let x = Tensor::random(
        block.conv1().c_in as usize,
        block.input_h as usize,
        block.input_w as usize,
        seed,
    );
    let weights = BlockWeights::random(block, seed ^ 0xABCD);
    let mut traced = TrafficTrace::default();
    dynamic_block_forward(&x, &weights, block, coarse, fusion, hw, &mut traced)?;

    let model =
        latcost::predict_block_latency_with_patches(block, coarse.ones(), hw, fusion).byte_totals();

    let mut deltas = Vec::new();
    let pairs = [
        ("off2on", model.off2on_bytes, traced.off2on_bytes),
        (
            "global2local",
            model.global2local_bytes,
            traced.global2local_bytes,
        ),
        (
            "local2global",
            model.local2global_bytes,
            traced.local2global_bytes,
        ),
        ("on2off", model.on2off_bytes, traced.on2off_bytes),
    ];
    for (term, m, t) in pairs {
        if m != t {
            deltas.push((term.to_string(), m, t));
        }
    }
    Ok(TrafficReport {
        matches: deltas.is_empty(),
        model,
        traced,
        deltas,
    })
}
