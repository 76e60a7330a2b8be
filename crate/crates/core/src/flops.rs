//! Static and dynamic MAC accounting.
//!
//! FLOPs are counted as MACs (one multiply-accumulate = 1), the convention
//! under which a 50-layer bottleneck backbone at 224^2 lands near 4.1G;
//! [`flops_count`] exposes the x2 multiply-add toggle. Elementwise adds,
//! batch norm and activations count zero. The masker is always charged
//! (pooling reads every input element once, plus the channel-reduced 1x1
//! convolution on the pooled grid). All dynamic counts are derived from
//! the integer number of activated patches, so they agree exactly with a
//! traced execution of the same mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::CoarseMask;
use crate::model::{BlockSpec, ConvLayerSpec, NetworkSpec};
use crate::sched::FusionPlan;

/// Per-layer MAC breakdown with the dynamic/static totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub per_layer: Vec<(String, u64)>,
    pub total_macs: u64,
    pub f_dyn: u64,
    pub f_stat: u64,
    /// f_dyn / f_stat.
    pub ratio: f64,
}

impl FlopsReport {
    fn from_layers(per_layer: Vec<(String, u64)>, f_stat: u64) -> Self {
        let total: u64 = per_layer.iter().map(|(_, m)| m).sum();
        FlopsReport {
            total_macs: total,
            f_dyn: total,
            f_stat,
            ratio: if f_stat > 0 {
                total as f64 / f_stat as f64
            } else {
                0.0
            },
            per_layer,
        }
    }

    /// One CSV row per layer, then the totals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,macs\n");
        for (id, macs) in &self.per_layer {
            out.push_str(&format!("{id},{macs}\n"));
        }
        out.push_str(&format!("total,{}\n", self.total_macs));
        out.push_str(&format!("f_dyn,{}\n", self.f_dyn));
        out.push_str(&format!("f_stat,{}\n", self.f_stat));
        out
    }
}

/// MACs to FLOPs under the chosen convention.
pub fn flops_count(macs: u64, count_fma_as_two: bool) -> u64 {
    if count_fma_as_two {
        2 * macs
    } else {
        macs
    }
}

/// Direct convolution MAC count: out_h * out_w * c_out * c_in * k^2 / groups.
pub fn conv_macs(layer: &ConvLayerSpec, out_h: u32, out_w: u32) -> u64 {
    out_h as u64
        * out_w as u64
        * layer.c_out as u64
        * layer.fan_in_channels() as u64
        * (layer.kernel as u64).pow(2)
}

/// Masker MACs: average pooling touches every input element once, then a
/// 1x1 convolution (channel-reduced to one output) runs on the coarse grid.
pub fn masker_macs(block: &BlockSpec) -> u64 {
    let pool = block.conv1().c_in as u64 * block.input_h as u64 * block.input_w as u64;
    let conv = block.coarse_cells() * block.conv1().c_in as u64;
    pool + conv
}

/// SE cost: two dense 1x1 convolutions on the pooled vector plus one
/// full-feature elementwise multiply.
fn se_macs(block: &BlockSpec) -> u64 {
    match block.se_channels() {
        Some(w_se) => {
            let w = block.conv2().c_out as u64;
            let spatial = block.out_h() as u64 * block.out_w() as u64;
            2 * w * w_se as u64 + w * spatial
        }
        None => 0,
    }
}

fn downsample_macs(block: &BlockSpec) -> u64 {
    block
        .downsample
        .as_ref()
        .map_or(0, |d| conv_macs(d, block.out_h(), block.out_w()))
}

/// Dense MACs of the block without any masker.
pub fn block_static_macs(block: &BlockSpec) -> u64 {
    conv_macs(block.conv1(), block.input_h, block.input_w)
        + conv_macs(block.conv2(), block.out_h(), block.out_w())
        + conv_macs(block.conv3(), block.out_h(), block.out_w())
        + downsample_macs(block)
        + se_macs(block)
}

/// Number of activated patches implied by a rate: round(r * cells).
pub fn patches_for_rate(block: &BlockSpec, r: f64) -> u64 {
    (r * block.coarse_cells() as f64).round() as u64
}

fn block_layers_with_patches(
    block: &BlockSpec,
    p: u64,
    fusion: &FusionPlan,
    with_masker: bool,
) -> Vec<(String, u64)> {
    let g_in = block.gathered_input_side() as u64;
    let s = block.granularity as u64;
    let in_pixels = block.input_h as u64 * block.input_w as u64;
    let conv1_dense = conv_macs(block.conv1(), block.input_h, block.input_w);
    // Unfused conv1 computes the halo pixels conv2 needs, capped at the
    // dense pixel count.
    let conv1 = if fusion.fuse_masker_conv1 {
        conv1_dense
    } else {
        let pixels = (p * g_in * g_in).min(in_pixels);
        pixels * block.conv1().c_out as u64 * block.conv1().fan_in_channels() as u64
    };
    let conv2 = p
        * s
        * s
        * block.conv2().c_out as u64
        * block.conv2().fan_in_channels() as u64
        * (block.conv2().kernel as u64).pow(2);
    let conv3 = p * s * s * block.conv3().c_out as u64 * block.conv3().fan_in_channels() as u64;

    let mut layers = Vec::new();
    if with_masker {
        layers.push(("masker".to_string(), masker_macs(block)));
    }
    layers.push(("conv1".to_string(), conv1));
    layers.push(("conv2".to_string(), conv2));
    layers.push(("conv3".to_string(), conv3));
    if block.downsample.is_some() {
        layers.push(("downsample".to_string(), downsample_macs(block)));
    }
    if block.se_reduction.is_some() {
        layers.push(("se".to_string(), se_macs(block)));
    }
    layers
}

/// Dynamic MAC report for a block at rate `r` (patches = round(r * cells)).
pub fn block_dynamic_macs(block: &BlockSpec, r: f64, fusion: &FusionPlan) -> Result<FlopsReport> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!("rate {r} outside [0,1]")));
    }
    let p = patches_for_rate(block, r);
    Ok(FlopsReport::from_layers(
        block_layers_with_patches(block, p, fusion, true),
        block_static_macs(block),
    ))
}

/// Dynamic MAC report for a concrete mask (exact activated-patch count).
pub fn block_dynamic_macs_for_mask(
    block: &BlockSpec,
    mask: &CoarseMask,
    fusion: &FusionPlan,
) -> Result<FlopsReport> {
    let (hc, wc) = block.coarse_dims();
    if mask.h_cells() != hc as usize || mask.w_cells() != wc as usize {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match coarse grid {}x{}",
            mask.h_cells(),
            mask.w_cells(),
            hc,
            wc
        )));
    }
    Ok(FlopsReport::from_layers(
        block_layers_with_patches(block, mask.ones(), fusion, true),
        block_static_macs(block),
    ))
}

/// Whole-network MAC report; one per-layer row per block layer, stem and
/// head charged densely on both sides. `with_maskers = false` reproduces
/// the static counterpart exactly.
pub fn network_flops_opts(
    net: &NetworkSpec,
    rates: &[f64],
    fusions: &[FusionPlan],
    with_maskers: bool,
) -> Result<FlopsReport> {
    let blocks = net.blocks();
    if rates.len() != blocks.len() {
        return Err(Error::Domain(format!(
            "{} rates supplied for {} blocks",
            rates.len(),
            blocks.len()
        )));
    }
    if fusions.len() != blocks.len() {
        return Err(Error::Domain(format!(
            "{} fusion plans supplied for {} blocks",
            fusions.len(),
            blocks.len()
        )));
    }
    let mut per_layer = vec![("stem_head".to_string(), net.stem_and_head.macs)];
    let mut f_stat = net.stem_and_head.macs;
    for (((si, bi, block), &r), fusion) in blocks.iter().zip(rates).zip(fusions) {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain(format!("rate {r} outside [0,1]")));
        }
        let p = patches_for_rate(block, r);
        for (id, macs) in block_layers_with_patches(block, p, fusion, with_maskers) {
            per_layer.push((format!("s{si}.b{bi}.{id}"), macs));
        }
        f_stat += block_static_macs(block);
    }
    Ok(FlopsReport::from_layers(per_layer, f_stat))
}

/// Network MAC report with maskers attached to every block.
pub fn network_flops(
    net: &NetworkSpec,
    rates: &[f64],
    fusions: &[FusionPlan],
) -> Result<FlopsReport> {
    network_flops_opts(net, rates, fusions, true)
}

/// FLOPs-target penalty: (f_dyn / f_stat - t)^2.
pub fn flops_loss(f_dyn: u64, f_stat: u64, t: f64) -> f64 {
    let ratio = f_dyn as f64 / f_stat as f64;
    (ratio - t) * (ratio - t)
}

/// Continuous relaxation of the dynamic/static MAC ratio at a uniform
/// rate: patch counts are left fractional so the ratio is monotone and
/// continuous in `r` (the integer report rounds to whole patches).
pub fn network_ratio_continuous(net: &NetworkSpec, r: f64, fusion: &FusionPlan) -> f64 {
    let mut f_dyn = net.stem_and_head.macs as f64;
    let mut f_stat = net.stem_and_head.macs as f64;
    for (_, _, block) in net.blocks() {
        let g_in = block.gathered_input_side() as f64;
        let s = block.granularity as f64;
        let conv1_dense = conv_macs(block.conv1(), block.input_h, block.input_w) as f64;
        let conv1 = if fusion.fuse_masker_conv1 {
            conv1_dense
        } else {
            conv1_dense * (r * (g_in / s) * (g_in / s)).min(1.0)
        };
        let conv2 = conv_macs(block.conv2(), block.out_h(), block.out_w()) as f64 * r;
        let conv3 = conv_macs(block.conv3(), block.out_h(), block.out_w()) as f64 * r;
        let fixed = (downsample_macs(&block) + se_macs(&block) + masker_macs(&block)) as f64;
        f_dyn += conv1 + conv2 + conv3 + fixed;
        f_stat += block_static_macs(&block) as f64;
    }
    f_dyn / f_stat
}

/// Find the uniform rate whose continuous MAC ratio hits the target `t`,
/// by bisection to |ratio - t| < 1e-6.
pub fn solve_uniform_rate(net: &NetworkSpec, t: f64, fusion: &FusionPlan) -> Result<f64> {
    if !(0.0 < t && t < 1.0) {
        return Err(Error::Domain(format!("target {t} outside (0,1)")));
    }
    let lo_ratio = network_ratio_continuous(net, 0.0, fusion);
    let hi_ratio = network_ratio_continuous(net, 1.0, fusion);
    if t < lo_ratio - 1e-6 || t > hi_ratio + 1e-6 {
        return Err(Error::Domain(format!(
            "target {t} unachievable; ratio range is [{lo_ratio:.4}, {hi_ratio:.4}]"
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let ratio = network_ratio_continuous(net, mid, fusion);
        if (ratio - t).abs() < 1e-6 {
            return Ok(mid);
        }
        if ratio < t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Interval exhausted; the endpoint ratio is within bisection precision.
    let r = 0.5 * (lo + hi);
    let ratio = network_ratio_continuous(net, r, fusion);
    if (ratio - t).abs() < 1e-6 {
        Ok(r)
    } else if t <= lo_ratio {
        Ok(0.0)
    } else {
        Ok(1.0)
    }
}
