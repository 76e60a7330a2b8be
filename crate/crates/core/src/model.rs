//! Hardware targets and network/block architectures.
//!
//! A hardware device is abstracted as a pool of identical processing
//! engines (PEs) behind a three-level memory system (off-chip, on-chip
//! global, per-PE local). Networks are stacks of bottleneck blocks; each
//! block carries the spatial granularity `S` of its mask, i.e. the side
//! length of the square feature patch governed by one mask decision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ELEM_BYTES;

/// Abstract device description: compute throughput and memory hierarchy.
///
/// `num_pe`, `fp32_lanes_per_pe`, `frequency` and `offchip_bandwidth` come
/// from device datasheets; the remaining fields are model extensions with
/// config-overridable defaults (see [`HardwareSpec::preset`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareSpec {
    pub name: String,
    /// Parallel processing engines (GPU SMs).
    pub num_pe: u32,
    /// FP32 lanes per engine.
    pub fp32_lanes_per_pe: u32,
    /// Clock frequency in Hz.
    pub frequency: f64,
    /// Off-chip (DRAM) bandwidth in bytes/s.
    pub offchip_bandwidth: f64,
    /// Aggregate on-chip global memory bandwidth in bytes/s.
    pub onchip_global_bandwidth: f64,
    /// Bandwidth between on-chip global memory and one PE's local memory,
    /// in bytes/s. Kept for hierarchy completeness and config overrides;
    /// the default cost model treats it as non-binding.
    pub local_bandwidth_per_pe: f64,
    /// Memory transaction granularity in bytes; shorter contiguous runs
    /// waste a fraction of every transaction.
    pub txn_bytes: u32,
    /// Fused multiply-accumulates per lane per cycle.
    pub fma_per_lane_per_cycle: u32,
}

impl HardwareSpec {
    /// Built-in device presets: `v100`, `gtx1080`, `tx2`, `nano`.
    ///
    /// The datasheet fields are (#PE, #FP32 lanes, MHz, GB/s); extension
    /// fields default to txn_bytes = 128, on-chip global bandwidth = 10x
    /// off-chip, local bandwidth = lanes x 8 bytes x frequency, and one
    /// FMA per lane per cycle (V100: 80 x 64 x 1.5 GHz = 7.68 TMAC/s).
    pub fn preset(name: &str) -> Result<Self> {
        let (num_pe, lanes, mhz, gbps) = match name {
            "v100" => (80, 64, 1500.0, 700.0),
            "gtx1080" => (20, 64, 1700.0, 320.0),
            "tx2" => (2, 128, 1300.0, 59.7),
            "nano" => (1, 128, 921.0, 25.6),
            other => return Err(Error::NotFound(format!("hardware preset '{other}'"))),
        };
        let frequency = mhz * 1e6;
        let offchip = gbps * 1e9;
        let hw = HardwareSpec {
            name: name.to_string(),
            num_pe,
            fp32_lanes_per_pe: lanes,
            frequency,
            offchip_bandwidth: offchip,
            onchip_global_bandwidth: 10.0 * offchip,
            local_bandwidth_per_pe: lanes as f64 * 8.0 * frequency,
            txn_bytes: 128,
            fma_per_lane_per_cycle: 1,
        };
        hw.validate()?;
        Ok(hw)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_pe", self.num_pe as f64),
            ("fp32_lanes_per_pe", self.fp32_lanes_per_pe as f64),
            ("frequency", self.frequency),
            ("offchip_bandwidth", self.offchip_bandwidth),
            ("onchip_global_bandwidth", self.onchip_global_bandwidth),
            ("local_bandwidth_per_pe", self.local_bandwidth_per_pe),
            ("txn_bytes", self.txn_bytes as f64),
            ("fma_per_lane_per_cycle", self.fma_per_lane_per_cycle as f64),
        ];
        for (field, v) in positive {
            if v <= 0.0 || v.is_nan() {
                return Err(Error::Domain(format!("{field} must be strictly positive")));
            }
        }
        if self.onchip_global_bandwidth < self.offchip_bandwidth {
            return Err(Error::Domain(
                "onchip_global_bandwidth must be >= offchip_bandwidth".into(),
            ));
        }
        Ok(())
    }

    /// Peak MAC throughput of the whole device, MAC/s.
    pub fn peak_macs_per_sec(&self) -> f64 {
        self.num_pe as f64 * self.per_pe_macs_per_sec()
    }

    /// Peak MAC throughput of one PE, MAC/s.
    pub fn per_pe_macs_per_sec(&self) -> f64 {
        self.fp32_lanes_per_pe as f64 * self.fma_per_lane_per_cycle as f64 * self.frequency
    }
}

/// One convolution layer of a block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub c_in: u32,
    pub c_out: u32,
    /// Kernel side; 1 or 3.
    pub kernel: u32,
    pub stride: u32,
    pub groups: u32,
    pub has_bn_act_fused: bool,
}

impl ConvLayerSpec {
    pub fn new(c_in: u32, c_out: u32, kernel: u32, stride: u32, groups: u32) -> Self {
        ConvLayerSpec {
            c_in,
            c_out,
            kernel,
            stride,
            groups,
            has_bn_act_fused: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.groups == 0 {
            return Err(Error::InvalidShape("zero channel or group count".into()));
        }
        if !self.c_in.is_multiple_of(self.groups) || !self.c_out.is_multiple_of(self.groups) {
            return Err(Error::InvalidShape(format!(
                "groups={} must divide c_in={} and c_out={}",
                self.groups, self.c_in, self.c_out
            )));
        }
        if !matches!(self.kernel, 1 | 3) {
            return Err(Error::InvalidShape(format!(
                "kernel {} not in {{1,3}}",
                self.kernel
            )));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::InvalidShape(format!(
                "stride {} not in {{1,2}}",
                self.stride
            )));
        }
        Ok(())
    }

    /// Input channels seen by one output channel (group-local fan-in).
    pub fn fan_in_channels(&self) -> u32 {
        self.c_in / self.groups
    }

    /// Weight tensor footprint in bytes.
    pub fn weight_bytes(&self) -> u64 {
        self.c_out as u64 * self.fan_in_channels() as u64 * (self.kernel as u64).pow(2) * ELEM_BYTES
    }
}

/// Pooling flavor used by the masker. Average pooling commutes with the
/// 1x1 masker convolution, which is what makes the masker-conv1 fusion a
/// pure reordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Average,
}

/// A bottleneck block with an attached masker.
///
/// `layers` is the ordered conv triple [1x1, 3x3, 1x1]; the 3x3 stride
/// sets the output resolution, and the mask lives on the *output* grid at
/// granularity `granularity` (pixels per patch side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub layers: [ConvLayerSpec; 3],
    pub input_h: u32,
    pub input_w: u32,
    pub has_residual: bool,
    pub downsample: Option<ConvLayerSpec>,
    /// Squeeze-excitation reduction ratio relative to the block input
    /// width; None for plain bottlenecks.
    pub se_reduction: Option<f64>,
    pub masker_pool: PoolKind,
    /// Patch side S of one mask decision.
    pub granularity: u32,
}

impl BlockSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn bottleneck(
        c_in: u32,
        c_mid: u32,
        c_out: u32,
        out_side: u32,
        stride: u32,
        groups: u32,
        se_reduction: Option<f64>,
        granularity: u32,
        with_downsample: bool,
    ) -> Result<Self> {
        let block = BlockSpec {
            layers: [
                ConvLayerSpec::new(c_in, c_mid, 1, 1, 1),
                ConvLayerSpec::new(c_mid, c_mid, 3, stride, groups),
                ConvLayerSpec::new(c_mid, c_out, 1, 1, 1),
            ],
            input_h: out_side * stride,
            input_w: out_side * stride,
            has_residual: true,
            downsample: if with_downsample {
                Some(ConvLayerSpec::new(c_in, c_out, 1, stride, 1))
            } else {
                None
            },
            se_reduction,
            masker_pool: PoolKind::Average,
            granularity,
        };
        block.validate()?;
        Ok(block)
    }

    pub fn validate(&self) -> Result<()> {
        for layer in &self.layers {
            layer.validate()?;
        }
        if self.layers[0].c_out != self.layers[1].c_in
            || self.layers[1].c_out != self.layers[2].c_in
        {
            return Err(Error::InvalidShape("conv channel chain broken".into()));
        }
        if self.layers[0].kernel != 1 || self.layers[1].kernel != 3 || self.layers[2].kernel != 1 {
            return Err(Error::InvalidShape(
                "expected [1x1, 3x3, 1x1] conv triple".into(),
            ));
        }
        let stride = self.layers[1].stride;
        if !self.input_h.is_multiple_of(stride) || !self.input_w.is_multiple_of(stride) {
            return Err(Error::InvalidShape("input not divisible by stride".into()));
        }
        let (oh, ow) = (self.out_h(), self.out_w());
        if self.granularity == 0 || oh % self.granularity != 0 || ow % self.granularity != 0 {
            return Err(Error::InvalidShape(format!(
                "granularity {} must divide output {}x{}",
                self.granularity, oh, ow
            )));
        }
        if let Some(down) = &self.downsample {
            down.validate()?;
            if down.c_in != self.layers[0].c_in
                || down.c_out != self.layers[2].c_out
                || down.stride != stride
            {
                return Err(Error::InvalidShape(
                    "downsample shape disagrees with block".into(),
                ));
            }
        }
        if let Some(ratio) = self.se_reduction {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(Error::Domain(format!("se_reduction {ratio} outside (0,1]")));
            }
        }
        Ok(())
    }

    pub fn conv1(&self) -> &ConvLayerSpec {
        &self.layers[0]
    }
    pub fn conv2(&self) -> &ConvLayerSpec {
        &self.layers[1]
    }
    pub fn conv3(&self) -> &ConvLayerSpec {
        &self.layers[2]
    }

    /// Output (mask) resolution.
    pub fn out_h(&self) -> u32 {
        self.input_h / self.layers[1].stride
    }
    pub fn out_w(&self) -> u32 {
        self.input_w / self.layers[1].stride
    }

    /// Coarse mask grid dimensions (out / S).
    pub fn coarse_dims(&self) -> (u32, u32) {
        (
            self.out_h() / self.granularity,
            self.out_w() / self.granularity,
        )
    }

    /// Number of coarse mask cells.
    pub fn coarse_cells(&self) -> u64 {
        let (h, w) = self.coarse_dims();
        h as u64 * w as u64
    }

    /// Input-side patch extent feeding one S x S output patch through the
    /// 3x3 conv: (S-1)*stride + k. Stride 1 gives S+2, stride 2 gives 2S+1.
    pub fn gathered_input_side(&self) -> u32 {
        (self.granularity - 1) * self.layers[1].stride + self.layers[1].kernel
    }

    /// SE bottleneck width: round(c_in * ratio), following the convention
    /// that the ratio applies to the block input width.
    pub fn se_channels(&self) -> Option<u32> {
        self.se_reduction
            .map(|r| ((self.layers[0].c_in as f64 * r).round() as u32).max(1))
    }

    /// Same block with a different granularity.
    pub fn with_granularity(&self, s: u32) -> Result<Self> {
        let mut b = self.clone();
        b.granularity = s;
        b.validate()?;
        Ok(b)
    }
}

/// Static stem and head cost, carried as totals and charged densely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemHead {
    pub macs: u64,
    /// Total tensor + weight traffic in bytes across stem and head ops.
    pub traffic_bytes: u64,
}

/// One network stage: a repeated block template plus the first-block
/// variant (different input width, stride and downsample).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub template: BlockSpec,
    pub block_count: usize,
    pub first_stride: u32,
    pub first_c_in: u32,
}

impl StageSpec {
    /// Materialize the concrete block list for this stage.
    pub fn blocks(&self) -> Vec<BlockSpec> {
        let mut out = Vec::with_capacity(self.block_count);
        for i in 0..self.block_count {
            if i == 0 {
                let mut first = self.template.clone();
                first.layers[0].c_in = self.first_c_in;
                first.layers[1].stride = self.first_stride;
                first.input_h = self.template.out_h() * self.first_stride;
                first.input_w = self.template.out_w() * self.first_stride;
                first.downsample = Some(ConvLayerSpec::new(
                    self.first_c_in,
                    self.template.layers[2].c_out,
                    1,
                    self.first_stride,
                    1,
                ));
                out.push(first);
            } else {
                out.push(self.template.clone());
            }
        }
        out
    }

    pub fn feature_side(&self) -> u32 {
        self.template.out_h()
    }
}

/// A whole backbone: stages, per-stage granularities, and the static
/// stem/head cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub stages: Vec<StageSpec>,
    pub s_net: Vec<u32>,
    pub stem_and_head: StemHead,
}

impl NetworkSpec {
    /// Built-in backbone presets: `resnet50`, `resnet101`, `regnety400mf`,
    /// `regnety800mf`. Resolution must be divisible by 32.
    pub fn preset(name: &str, input_resolution: u32) -> Result<Self> {
        if input_resolution == 0 || !input_resolution.is_multiple_of(32) {
            return Err(Error::InvalidShape(format!(
                "input resolution {input_resolution} not divisible by 32"
            )));
        }
        match name {
            "resnet50" => resnet(name, input_resolution, &[3, 4, 6, 3]),
            "resnet101" => resnet(name, input_resolution, &[3, 4, 23, 3]),
            "regnety400mf" => regnety(
                name,
                input_resolution,
                &[1, 3, 6, 6],
                &[48, 104, 208, 440],
                8,
            ),
            "regnety800mf" => regnety(
                name,
                input_resolution,
                &[1, 3, 8, 2],
                &[64, 128, 320, 768],
                16,
            ),
            other => Err(Error::NotFound(format!("network preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_net.len() != self.stages.len() {
            return Err(Error::InvalidShape(format!(
                "s_net length {} != stage count {}",
                self.s_net.len(),
                self.stages.len()
            )));
        }
        for stage in &self.stages {
            for block in stage.blocks() {
                block.validate()?;
            }
        }
        Ok(())
    }

    /// Replace the per-stage granularities, revalidating divisibility.
    pub fn with_s_net(&self, s_net: &[u32]) -> Result<Self> {
        if s_net.len() != self.stages.len() {
            return Err(Error::InvalidShape(format!(
                "s_net length {} != stage count {}",
                s_net.len(),
                self.stages.len()
            )));
        }
        let mut net = self.clone();
        net.s_net = s_net.to_vec();
        for (stage, &s) in net.stages.iter_mut().zip(s_net) {
            stage.template.granularity = s;
        }
        net.validate()?;
        Ok(net)
    }

    /// All blocks in network order as (stage index, block index, block).
    pub fn blocks(&self) -> Vec<(usize, usize, BlockSpec)> {
        let mut out = Vec::new();
        for (si, stage) in self.stages.iter().enumerate() {
            for (bi, block) in stage.blocks().into_iter().enumerate() {
                out.push((si, bi, block));
            }
        }
        out
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.block_count).sum()
    }
}

/// All valid mask granularities for a feature side: every divisor except
/// the side itself (a whole-feature decision degenerates to block skipping
/// and is excluded from the candidate set).
pub fn valid_granularities(feature_side: u32) -> Vec<u32> {
    (1..feature_side)
        .filter(|s| feature_side.is_multiple_of(*s))
        .collect()
}

/// Default per-stage granularities: the largest valid divisor not above
/// the 8-4-7-1 profile, which keeps the last stage at pixel level.
pub fn default_s_net(feature_sides: &[u32]) -> Vec<u32> {
    const TARGETS: [u32; 4] = [8, 4, 7, 1];
    feature_sides
        .iter()
        .enumerate()
        .map(|(i, &side)| {
            let target = TARGETS.get(i).copied().unwrap_or(1);
            (1..=side.max(1))
                .filter(|s| side % s == 0 && *s <= target)
                .max()
                .unwrap_or(1)
        })
        .collect()
}

fn resnet(name: &str, resolution: u32, depths: &[usize; 4]) -> Result<NetworkSpec> {
    let mids = [64u32, 128, 256, 512];
    let outs = [256u32, 512, 1024, 2048];
    let mut sides = Vec::new();
    let mut stages = Vec::new();
    let mut prev_out = 64u32; // stem width after max-pool
    for i in 0..4 {
        let side = resolution / (4 << i as u32);
        sides.push(side);
        let first_stride = if i == 0 { 1 } else { 2 };
        let template =
            BlockSpec::bottleneck(outs[i], mids[i], outs[i], side, 1, 1, None, 1, false)?;
        stages.push(StageSpec {
            template,
            block_count: depths[i],
            first_stride,
            first_c_in: prev_out,
        });
        prev_out = outs[i];
    }
    let s_net = default_s_net(&sides);
    let stem_and_head = resnet_stem_head(resolution);
    let mut net = NetworkSpec {
        name: name.to_string(),
        stages,
        s_net: s_net.clone(),
        stem_and_head,
    };
    net = net.with_s_net(&s_net)?;
    net.validate()?;
    Ok(net)
}

fn resnet_stem_head(resolution: u32) -> StemHead {
    let r = resolution as u64;
    let half = r / 2;
    let quarter = r / 4;
    let last = r / 32;
    // 7x7/2 stem conv (3 -> 64), 3x3/2 max-pool, global avg-pool, fc 2048 -> 1000.
    let stem_macs = half * half * 64 * 3 * 49;
    let fc_macs = 2048 * 1000;
    let e = ELEM_BYTES;
    let traffic = 3 * r * r * e                      // stem input
        + 64 * 3 * 49 * e                            // stem weights
        + 64 * half * half * e                       // stem output
        + 64 * half * half * e + 64 * quarter * quarter * e // max-pool in/out
        + 2048 * last * last * e + 2048 * e          // avg-pool in/out
        + 2048 * 1000 * e + 1000 * e; // fc weights/out
    StemHead {
        macs: stem_macs + fc_macs,
        traffic_bytes: traffic,
    }
}

fn regnety(
    name: &str,
    resolution: u32,
    depths: &[usize; 4],
    widths: &[u32; 4],
    group_width: u32,
) -> Result<NetworkSpec> {
    let mut sides = Vec::new();
    let mut stages = Vec::new();
    let mut prev_out = 32u32; // stem width
    for i in 0..4 {
        let side = resolution / (4 << i as u32);
        sides.push(side);
        let w = widths[i];
        let template =
            BlockSpec::bottleneck(w, w, w, side, 1, w / group_width, Some(0.25), 1, false)?;
        stages.push(StageSpec {
            template,
            block_count: depths[i],
            first_stride: 2,
            first_c_in: prev_out,
        });
        prev_out = w;
    }
    let s_net = default_s_net(&sides);
    let stem_and_head = regnet_stem_head(resolution, widths[3]);
    let mut net = NetworkSpec {
        name: name.to_string(),
        stages,
        s_net: s_net.clone(),
        stem_and_head,
    };
    net = net.with_s_net(&s_net)?;
    net.validate()?;
    Ok(net)
}

fn regnet_stem_head(resolution: u32, last_width: u32) -> StemHead {
    let r = resolution as u64;
    let half = r / 2;
    let last_side = r / 32;
    let w = last_width as u64;
    // 3x3/2 stem conv (3 -> 32), global avg-pool, fc last_width -> 1000.
    let stem_macs = half * half * 32 * 3 * 9;
    let fc_macs = w * 1000;
    let e = ELEM_BYTES;
    let traffic = 3 * r * r * e
        + 32 * 3 * 9 * e
        + 32 * half * half * e
        + w * last_side * last_side * e
        + w * e
        + w * 1000 * e
        + 1000 * e;
    StemHead {
        macs: stem_macs + fc_macs,
        traffic_bytes: traffic,
    }
}
