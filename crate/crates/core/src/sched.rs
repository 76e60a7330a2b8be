//! Scheduling decisions: operator-graph rewriting for the three fusions,
//! the masker-fusion rate threshold, granularity and rate sweeps, and
//! network-level latency aggregation.
//!
//! The unfused schedule of a dynamic block is
//! `[masker, gather, conv1, conv2, conv3, scatter, add]`. Each fusion
//! merges adjacent operators: fusing the masker into conv1 makes conv1 a
//! dense operation (with one extra output channel) and moves the gather
//! after it; fusing the gather lets the first dynamic conv read its
//! patches straight from the dense tensor; fusing the scatter folds the
//! write-back into the residual add.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latcost::{self, BlockLatency};
use crate::model::{valid_granularities, BlockSpec, HardwareSpec, NetworkSpec};

/// The three boolean fusion decisions for one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionPlan {
    /// Fold the masker into conv1; conv1 becomes dense.
    pub fuse_masker_conv1: bool,
    /// Fold the gather into the first dynamic convolution.
    pub fuse_gather_conv: bool,
    /// Fold the scatter into the residual add.
    pub fuse_scatter_add: bool,
}

impl FusionPlan {
    pub const NONE: FusionPlan = FusionPlan {
        fuse_masker_conv1: false,
        fuse_gather_conv: false,
        fuse_scatter_add: false,
    };
    pub const ALL: FusionPlan = FusionPlan {
        fuse_masker_conv1: true,
        fuse_gather_conv: true,
        fuse_scatter_add: true,
    };

    /// Cumulative plans in ablation-table order: none, +masker-conv1,
    /// +gather-conv, +scatter-add.
    pub fn cumulative() -> [FusionPlan; 4] {
        [
            FusionPlan::NONE,
            FusionPlan {
                fuse_masker_conv1: true,
                ..FusionPlan::NONE
            },
            FusionPlan {
                fuse_masker_conv1: true,
                fuse_gather_conv: true,
                fuse_scatter_add: false,
            },
            FusionPlan::ALL,
        ]
    }
}

/// One operator of a rewritten block schedule.
///
/// `from_packed` distinguishes a convolution that reads an explicitly
/// gathered (densely packed) tensor from one that fetches its patches
/// straight out of the dense feature map (gather fused away).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockOp {
    /// Pool + 1x1 convolution over the full input (unfused masker).
    Masker,
    /// Dense conv1 with one extra output channel carrying mask logits.
    FusedMaskerConv1,
    /// Materialize the activated input patches into a packed tensor.
    Gather,
    Conv1 {
        from_packed: bool,
    },
    Conv2 {
        from_packed: bool,
    },
    Conv3,
    /// Write packed outputs back to their spatial positions.
    Scatter,
    /// Patch-wise residual update against the scattered tensor.
    Add,
    /// Fused scatter + residual add: one pass over the activated patches.
    ScatterAdd,
}

/// Rewrite a block into its scheduled operator list under a fusion plan.
/// Residual/downsample and SE costs are appended by the latency layer;
/// this list covers the dynamic pipeline itself.
pub fn rewrite_block(block: &BlockSpec, fusion: &FusionPlan) -> Vec<BlockOp> {
    let mut ops = Vec::new();
    if fusion.fuse_masker_conv1 {
        ops.push(BlockOp::FusedMaskerConv1);
        if fusion.fuse_gather_conv {
            ops.push(BlockOp::Conv2 { from_packed: false });
        } else {
            ops.push(BlockOp::Gather);
            ops.push(BlockOp::Conv2 { from_packed: true });
        }
    } else {
        ops.push(BlockOp::Masker);
        if fusion.fuse_gather_conv {
            ops.push(BlockOp::Conv1 { from_packed: false });
        } else {
            ops.push(BlockOp::Gather);
            ops.push(BlockOp::Conv1 { from_packed: true });
        }
        ops.push(BlockOp::Conv2 { from_packed: true });
    }
    ops.push(BlockOp::Conv3);
    if block.has_residual {
        if fusion.fuse_scatter_add {
            ops.push(BlockOp::ScatterAdd);
        } else {
            ops.push(BlockOp::Scatter);
            ops.push(BlockOp::Add);
        }
    } else {
        ops.push(BlockOp::Scatter);
    }
    ops
}

/// Outcome of the masker-fusion threshold search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateThreshold {
    /// Fusing wins for every rate at or above this value; 0.0 means the
    /// fused schedule is never slower anywhere on [0,1].
    At(f64),
    /// The unfused schedule wins over the whole range.
    Never,
}

/// Smallest activation rate at which fusing the masker into conv1 is at
/// least as fast as keeping them separate (gather/scatter fusions enabled
/// on both sides). A coarse forward scan guards non-monotone cases; the
/// crossing is then bisected to 1e-4.
pub fn compute_r_th(block: &BlockSpec, s: u32, hw: &HardwareSpec) -> Result<RateThreshold> {
    let block = block.with_granularity(s)?;
    let diff = |r: f64| -> f64 {
        let fused = latcost::predict_block_latency(&block, r, hw, &FusionPlan::ALL).total;
        let unfused = latcost::predict_block_latency(
            &block,
            r,
            hw,
            &FusionPlan {
                fuse_masker_conv1: false,
                ..FusionPlan::ALL
            },
        )
        .total;
        fused - unfused
    };
    if diff(0.0) <= 0.0 {
        return Ok(RateThreshold::At(0.0));
    }
    const STEPS: u32 = 100;
    let mut bracket = None;
    for i in 1..=STEPS {
        let r = i as f64 / STEPS as f64;
        if diff(r) <= 0.0 {
            bracket = Some(((i - 1) as f64 / STEPS as f64, r));
            break;
        }
    }
    let (mut lo, mut hi) = match bracket {
        Some(b) => b,
        None => return Ok(RateThreshold::Never),
    };
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if diff(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(RateThreshold::At(hi))
}

/// Pick the fusion plan for a block given its expected activation rate.
/// Gather and scatter fusions strictly reduce modeled traffic and are
/// always enabled; the masker fusion is chosen by direct comparison of the
/// two candidate schedules, which by construction never loses to either.
pub fn decide_fusion(
    block: &BlockSpec,
    s: u32,
    expected_r: f64,
    hw: &HardwareSpec,
) -> Result<FusionPlan> {
    if !(0.0..=1.0).contains(&expected_r) {
        return Err(Error::Domain(format!(
            "expected_r {expected_r} outside [0,1]"
        )));
    }
    let block = block.with_granularity(s)?;
    let unfused_plan = FusionPlan {
        fuse_masker_conv1: false,
        ..FusionPlan::ALL
    };
    let fused = latcost::predict_block_latency(&block, expected_r, hw, &FusionPlan::ALL).total;
    let unfused = latcost::predict_block_latency(&block, expected_r, hw, &unfused_plan).total;
    Ok(if fused <= unfused {
        FusionPlan::ALL
    } else {
        unfused_plan
    })
}

/// One sweep sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Swept value: the activation rate r or the granularity S.
    pub x: f64,
    pub l_dyn: f64,
    pub l_stat: f64,
    /// l_dyn / l_stat.
    pub r_l: f64,
}

/// Swept axis of a [`SweepResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    R,
    S,
}

/// A latency-ratio curve for one block on one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub block_id: String,
    pub hw_name: String,
}

impl SweepResult {
    /// Plot-ready CSV with header `x,l_dyn_us,l_stat_us,r_l`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,l_dyn_us,l_stat_us,r_l\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{:.3},{:.3},{:.6}\n",
                p.x,
                p.l_dyn * 1e6,
                p.l_stat * 1e6,
                p.r_l
            ));
        }
        out
    }

    pub fn from_csv(axis: SweepAxis, block_id: &str, hw_name: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("x,l_dyn_us,l_stat_us,r_l") => {}
            _ => return Err(Error::Parse("missing sweep CSV header".into())),
        }
        let mut points = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(Error::Parse(format!(
                    "expected 4 columns, got {}",
                    cols.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Parse(format!("bad float '{s}'")))
            };
            points.push(SweepPoint {
                x: parse(cols[0])?,
                l_dyn: parse(cols[1])? / 1e6,
                l_stat: parse(cols[2])? / 1e6,
                r_l: parse(cols[3])?,
            });
        }
        Ok(SweepResult {
            axis,
            points,
            block_id: block_id.to_string(),
            hw_name: hw_name.to_string(),
        })
    }
}

/// Latency-ratio curve over activation rates at a fixed granularity, with
/// the fusion plan re-decided at every point.
pub fn sweep_r(
    block: &BlockSpec,
    s: u32,
    hw: &HardwareSpec,
    r_grid: &[f64],
) -> Result<SweepResult> {
    let block_s = block.with_granularity(s)?;
    let l_stat = latcost::static_block_latency(&block_s, hw).total;
    let mut points = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain(format!("grid rate {r} outside [0,1]")));
        }
        let plan = decide_fusion(&block_s, s, r, hw)?;
        let l_dyn = latcost::predict_block_latency(&block_s, r, hw, &plan).total;
        points.push(SweepPoint {
            x: r,
            l_dyn,
            l_stat,
            r_l: l_dyn / l_stat,
        });
    }
    Ok(SweepResult {
        axis: SweepAxis::R,
        points,
        block_id: block_label(&block_s),
        hw_name: hw.name.clone(),
    })
}

/// Latency-ratio curve over all valid granularities at a fixed rate,
/// ascending in S.
pub fn sweep_s(block: &BlockSpec, r: f64, hw: &HardwareSpec) -> Result<SweepResult> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!("rate {r} outside [0,1]")));
    }
    let mut points = Vec::new();
    for s in valid_granularities(block.out_h().min(block.out_w())) {
        if !block.out_h().is_multiple_of(s) || !block.out_w().is_multiple_of(s) {
            continue;
        }
        let block_s = block.with_granularity(s)?;
        let l_stat = latcost::static_block_latency(&block_s, hw).total;
        let plan = decide_fusion(&block_s, s, r, hw)?;
        let l_dyn = latcost::predict_block_latency(&block_s, r, hw, &plan).total;
        points.push(SweepPoint {
            x: s as f64,
            l_dyn,
            l_stat,
            r_l: l_dyn / l_stat,
        });
    }
    Ok(SweepResult {
        axis: SweepAxis::S,
        points,
        block_id: block_label(block),
        hw_name: hw.name.clone(),
    })
}

/// Cumulative fusion ablation: latencies for (none), (+masker-conv1),
/// (+gather-conv), (+scatter-add), in that order.
pub fn fusion_ablation(
    block: &BlockSpec,
    s: u32,
    r: f64,
    hw: &HardwareSpec,
) -> Result<Vec<(FusionPlan, f64)>> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!("rate {r} outside [0,1]")));
    }
    let block_s = block.with_granularity(s)?;
    Ok(FusionPlan::cumulative()
        .into_iter()
        .map(|plan| {
            let total = latcost::predict_block_latency(&block_s, r, hw, &plan).total;
            (plan, total)
        })
        .collect())
}

/// Ablation table as CSV, one row per cumulative plan.
pub fn ablation_to_csv(rows: &[(FusionPlan, f64)]) -> String {
    let mut out = String::from("masker_conv1,gather_conv,scatter_add,latency_us\n");
    for (plan, total) in rows {
        out.push_str(&format!(
            "{},{},{},{:.3}\n",
            plan.fuse_masker_conv1,
            plan.fuse_gather_conv,
            plan.fuse_scatter_add,
            total * 1e6
        ));
    }
    out
}

pub fn ablation_from_csv(text: &str) -> Result<Vec<(FusionPlan, f64)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("masker_conv1,gather_conv,scatter_add,latency_us") => {}
        _ => return Err(Error::Parse("missing ablation CSV header".into())),
    }
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Parse(format!(
                "expected 4 columns, got {}",
                cols.len()
            )));
        }
        let flag = |s: &str| -> Result<bool> {
            s.parse()
                .map_err(|_| Error::Parse(format!("bad flag '{s}'")))
        };
        let us: f64 = cols[3]
            .parse()
            .map_err(|_| Error::Parse(format!("bad latency '{}'", cols[3])))?;
        rows.push((
            FusionPlan {
                fuse_masker_conv1: flag(cols[0])?,
                fuse_gather_conv: flag(cols[1])?,
                fuse_scatter_add: flag(cols[2])?,
            },
            us / 1e6,
        ));
    }
    Ok(rows)
}

/// Per-block entry of a network-level prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLatencyEntry {
    pub stage: usize,
    pub block: usize,
    pub s: u32,
    pub r: f64,
    pub plan: FusionPlan,
    pub l_dyn: f64,
    pub l_stat: f64,
}

/// Network-level latency prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLatency {
    pub total: f64,
    pub static_total: f64,
    /// 1 - total / static_total.
    pub speedup: f64,
    pub per_block: Vec<BlockLatencyEntry>,
}

/// Sum of per-block dynamic latencies (fusion decided per block) plus the
/// dense stem/head cost. `with_maskers = false` drops the dynamic
/// machinery entirely, reproducing the static network.
pub fn network_latency_opts(
    net: &NetworkSpec,
    rates: &[f64],
    hw: &HardwareSpec,
    with_maskers: bool,
) -> Result<NetworkLatency> {
    let blocks = net.blocks();
    if rates.len() != blocks.len() {
        return Err(Error::Domain(format!(
            "{} rates supplied for {} blocks",
            rates.len(),
            blocks.len()
        )));
    }
    let stem_head = latcost::stem_head_latency(&net.stem_and_head, hw);
    let mut per_block = Vec::with_capacity(blocks.len());
    let mut total = stem_head;
    let mut static_total = stem_head;
    for ((si, bi, block), &r) in blocks.iter().zip(rates) {
        let s = block.granularity;
        let l_stat = latcost::static_block_latency(block, hw).total;
        let (plan, l_dyn) = if with_maskers {
            let plan = decide_fusion(block, s, r, hw)?;
            let l = latcost::predict_block_latency(block, r, hw, &plan).total;
            (plan, l)
        } else {
            (FusionPlan::ALL, l_stat)
        };
        total += l_dyn;
        static_total += l_stat;
        per_block.push(BlockLatencyEntry {
            stage: *si,
            block: *bi,
            s,
            r,
            plan,
            l_dyn,
            l_stat,
        });
    }
    Ok(NetworkLatency {
        total,
        static_total,
        speedup: 1.0 - total / static_total,
        per_block,
    })
}

/// Network latency with maskers attached to every block.
pub fn network_latency(
    net: &NetworkSpec,
    rates: &[f64],
    hw: &HardwareSpec,
) -> Result<NetworkLatency> {
    network_latency_opts(net, rates, hw, true)
}

/// Per stage, the smallest granularity whose predicted stage latency is
/// within 2% of the stage minimum over all valid candidates; the last
/// stage is pinned to S = 1.
pub fn choose_granularity(net: &NetworkSpec, hw: &HardwareSpec, rates: &[f64]) -> Result<Vec<u32>> {
    let blocks = net.blocks();
    if rates.len() != blocks.len() {
        return Err(Error::Domain(format!(
            "{} rates supplied for {} blocks",
            rates.len(),
            blocks.len()
        )));
    }
    let mut chosen = Vec::with_capacity(net.stages.len());
    let mut offset = 0usize;
    for (si, stage) in net.stages.iter().enumerate() {
        let stage_rates = &rates[offset..offset + stage.block_count];
        offset += stage.block_count;
        if si + 1 == net.stages.len() {
            chosen.push(1);
            continue;
        }
        let side = stage.feature_side();
        let candidates = valid_granularities(side);
        let mut best: Option<(u32, f64)> = None;
        let mut latencies = Vec::new();
        for &s in &candidates {
            let mut stage_latency = 0.0;
            for (block, &r) in stage.blocks().iter().zip(stage_rates) {
                let block_s = block.with_granularity(s)?;
                let plan = decide_fusion(&block_s, s, r, hw)?;
                stage_latency += latcost::predict_block_latency(&block_s, r, hw, &plan).total;
            }
            latencies.push((s, stage_latency));
            if best.is_none_or(|(_, b)| stage_latency < b) {
                best = Some((s, stage_latency));
            }
        }
        let min = best.map(|(_, l)| l).unwrap_or(0.0);
        let pick = latencies
            .iter()
            .find(|(_, l)| *l <= min * 1.02)
            .map(|(s, _)| *s)
            .unwrap_or(1);
        chosen.push(pick);
    }
    Ok(chosen)
}

/// Predict one block's latency under a decided plan, exposing the per-op
/// breakdown (downsample and SE included as dense operators).
pub fn predict_block(
    block: &BlockSpec,
    r: f64,
    hw: &HardwareSpec,
) -> Result<(FusionPlan, BlockLatency)> {
    let plan = decide_fusion(block, block.granularity, r, hw)?;
    Ok((plan, latcost::predict_block_latency(block, r, hw, &plan)))
}

fn block_label(block: &BlockSpec) -> String {
    format!(
        "c{}-{}-{}_hw{}x{}_s{}",
        block.conv1().c_in,
        block.conv2().c_out,
        block.conv3().c_out,
        block.out_h(),
        block.out_w(),
        block.granularity
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkSpec;

    fn stage1_block() -> BlockSpec {
        // Repeated first-stage bottleneck of a 101-layer backbone at 224^2.
        let net = NetworkSpec::preset("resnet101", 224).unwrap();
        net.stages[0].blocks()[1].clone()
    }

    #[test]
    fn rewrite_unfused_has_seven_ops() {
        let block = stage1_block();
        let ops = rewrite_block(&block, &FusionPlan::NONE);
        assert_eq!(
            ops,
            vec![
                BlockOp::Masker,
                BlockOp::Gather,
                BlockOp::Conv1 { from_packed: true },
                BlockOp::Conv2 { from_packed: true },
                BlockOp::Conv3,
                BlockOp::Scatter,
                BlockOp::Add,
            ]
        );
    }

    #[test]
    fn rewrite_all_fused_has_four_ops() {
        let block = stage1_block();
        let ops = rewrite_block(&block, &FusionPlan::ALL);
        assert_eq!(
            ops,
            vec![
                BlockOp::FusedMaskerConv1,
                BlockOp::Conv2 { from_packed: false },
                BlockOp::Conv3,
                BlockOp::ScatterAdd,
            ]
        );
    }

    #[test]
    fn rewrite_single_fusions() {
        let block = stage1_block();
        let scatter_only = FusionPlan {
            fuse_scatter_add: true,
            ..FusionPlan::NONE
        };
        assert_eq!(rewrite_block(&block, &scatter_only).len(), 6);
        let masker_only = FusionPlan {
            fuse_masker_conv1: true,
            ..FusionPlan::NONE
        };
        let ops = rewrite_block(&block, &masker_only);
        assert_eq!(ops.len(), 6);
        assert_eq!(ops[0], BlockOp::FusedMaskerConv1);
        assert_eq!(ops[1], BlockOp::Gather);
    }

    fn v100() -> HardwareSpec {
        HardwareSpec::preset("v100").unwrap()
    }

    #[test]
    fn r_th_interior_with_verified_sign_change() {
        let block = stage1_block();
        let hw = v100();
        let th = compute_r_th(&block, 4, &hw).unwrap();
        let r_th = match th {
            RateThreshold::At(r) => r,
            RateThreshold::Never => panic!("expected an interior threshold"),
        };
        assert!(r_th > 0.0 && r_th < 1.0, "r_th = {r_th}");
        let diff = |r: f64| {
            let fused = latcost::predict_block_latency(
                &block.with_granularity(4).unwrap(),
                r,
                &hw,
                &FusionPlan::ALL,
            )
            .total;
            let unfused = latcost::predict_block_latency(
                &block.with_granularity(4).unwrap(),
                r,
                &hw,
                &FusionPlan {
                    fuse_masker_conv1: false,
                    ..FusionPlan::ALL
                },
            )
            .total;
            fused - unfused
        };
        assert!(
            diff(r_th - 0.01) > 0.0,
            "unfused should win below the threshold"
        );
        assert!(
            diff(r_th + 0.01) < 0.0,
            "fused should win above the threshold"
        );
    }

    #[test]
    fn r_th_boundary_cases() {
        // Compute-free comparison: if fusing already wins with no patches
        // active, the threshold is zero. A block whose dense conv1 is tiny
        // relative to the masker read behaves that way on a
        // bandwidth-starved device.
        let hw = HardwareSpec::preset("nano").unwrap();
        let block = BlockSpec::bottleneck(512, 4, 512, 14, 1, 1, None, 7, false).unwrap();
        match compute_r_th(&block, 7, &hw).unwrap() {
            RateThreshold::At(r) => {
                assert!(r < 0.2, "cheap dense conv1 should fuse early, r_th={r}")
            }
            RateThreshold::Never => panic!("fusion should win somewhere"),
        }
    }

    #[test]
    fn decide_fusion_matches_rate_extremes() {
        let block = stage1_block();
        let hw = v100();
        assert!(
            decide_fusion(&block, 4, 1.0, &hw)
                .unwrap()
                .fuse_masker_conv1
        );
        assert!(
            !decide_fusion(&block, 4, 0.0, &hw)
                .unwrap()
                .fuse_masker_conv1
        );
        assert!(decide_fusion(&block, 4, 1.5, &hw).is_err());
    }

    #[test]
    fn decided_plan_never_loses_to_pure_strategies() {
        let block = stage1_block();
        let hw = v100();
        for i in 0..=10 {
            let r = i as f64 / 10.0;
            let plan = decide_fusion(&block, 4, r, &hw).unwrap();
            let block4 = block.with_granularity(4).unwrap();
            let chosen = latcost::predict_block_latency(&block4, r, &hw, &plan).total;
            let fused = latcost::predict_block_latency(&block4, r, &hw, &FusionPlan::ALL).total;
            let unfused = latcost::predict_block_latency(
                &block4,
                r,
                &hw,
                &FusionPlan {
                    fuse_masker_conv1: false,
                    ..FusionPlan::ALL
                },
            )
            .total;
            assert!(chosen <= fused && chosen <= unfused);
        }
    }

    #[test]
    fn sweep_r_contract() {
        let block = stage1_block();
        let hw = v100();
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let sweep = sweep_r(&block, 8, &hw, &grid).unwrap();
        assert_eq!(sweep.points.len(), 11);
        // r = 0 is the cheapest point on the grid
        let min = sweep
            .points
            .iter()
            .map(|p| p.l_dyn)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(sweep.points[0].l_dyn, min);
        // masker overhead keeps the full-rate ratio at or above one
        assert!(sweep.points.last().unwrap().r_l >= 1.0);
        for p in &sweep.points {
            assert_eq!(p.r_l, p.l_dyn / p.l_stat);
        }
    }

    #[test]
    fn coarse_granularity_dominates_pixel_level() {
        let block = stage1_block();
        let hw = v100();
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let s1 = sweep_r(&block, 1, &hw, &grid).unwrap();
        let s8 = sweep_r(&block, 8, &hw, &grid).unwrap();
        for (a, b) in s1.points.iter().zip(&s8.points) {
            assert!(b.r_l <= a.r_l, "S=8 above S=1 at r={}", a.x);
        }
    }

    #[test]
    fn sweep_s_sorted_and_single_candidate() {
        let block = stage1_block();
        let hw = v100();
        let sweep = sweep_s(&block, 0.5, &hw).unwrap();
        let xs: Vec<f64> = sweep.points.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![1.0, 2.0, 4.0, 7.0, 8.0, 14.0, 28.0]);
        // 7x7 feature has a single valid granularity
        let last = BlockSpec::bottleneck(2048, 512, 2048, 7, 1, 1, None, 1, false).unwrap();
        assert_eq!(sweep_s(&last, 0.5, &hw).unwrap().points.len(), 1);
    }

    #[test]
    fn sweep_csv_round_trip() {
        let block = stage1_block();
        let hw = v100();
        let sweep = sweep_r(&block, 4, &hw, &[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        let csv = sweep.to_csv();
        let back =
            SweepResult::from_csv(SweepAxis::R, &sweep.block_id, &sweep.hw_name, &csv).unwrap();
        assert_eq!(back.points.len(), sweep.points.len());
        for (a, b) in sweep.points.iter().zip(&back.points) {
            assert_eq!(a.x, b.x);
            assert!((a.r_l - b.r_l).abs() < 1e-6);
            assert!((a.l_dyn - b.l_dyn).abs() < 1e-9); // 3-decimal us quantization
        }
    }

    #[test]
    fn ablation_rows_strictly_decrease_on_reference_block() {
        let block = stage1_block();
        let rows = fusion_ablation(&block, 4, 0.6, &v100()).unwrap();
        assert_eq!(rows.len(), 4);
        for w in rows.windows(2) {
            assert!(w[1].1 < w[0].1, "{} !< {}", w[1].1, w[0].1);
        }
        let again = fusion_ablation(&block, 4, 0.6, &v100()).unwrap();
        assert_eq!(rows, again);
    }

    #[test]
    fn ablation_csv_round_trip() {
        let block = stage1_block();
        let rows = fusion_ablation(&block, 4, 0.6, &v100()).unwrap();
        let back = ablation_from_csv(&ablation_to_csv(&rows)).unwrap();
        assert_eq!(back.len(), 4);
        for ((plan_a, us_a), (plan_b, us_b)) in rows.iter().zip(&back) {
            assert_eq!(plan_a, plan_b);
            assert!((us_a - us_b).abs() < 1e-9); // 3-decimal us quantization
        }
        assert!(ablation_from_csv("nope").is_err());
    }

    #[test]
    fn ablation_rows_collapse_at_zero_rate() {
        let block = stage1_block();
        let rows = fusion_ablation(&block, 4, 0.0, &v100()).unwrap();
        // with no active patches, everything after the masker decision is
        // free, so the three masker-fused rows coincide exactly
        assert_eq!(rows[1].1, rows[2].1);
        assert_eq!(rows[2].1, rows[3].1);
        assert!(rows[0].1 != rows[1].1);
    }

    #[test]
    fn network_latency_additivity_and_static_identity() {
        let hw = v100();
        let net = NetworkSpec::preset("resnet50", 224).unwrap();
        let rates = vec![0.5; net.total_blocks()];
        let out = network_latency(&net, &rates, &hw).unwrap();
        let block_sum: f64 = out.per_block.iter().map(|b| b.l_dyn).sum();
        let stem = latcost::stem_head_latency(&net.stem_and_head, &hw);
        assert!((out.total - (block_sum + stem)).abs() < 1e-12);

        let ones = vec![1.0; net.total_blocks()];
        let static_run = network_latency_opts(&net, &ones, &hw, false).unwrap();
        assert_eq!(static_run.total, static_run.static_total);
        assert_eq!(static_run.speedup, 0.0);

        assert!(network_latency(&net, &[0.5], &hw).is_err());
    }

    #[test]
    fn choose_granularity_prefers_small_on_ties_and_pins_last_stage() {
        let hw = v100();
        let net = NetworkSpec::preset("resnet101", 224).unwrap();
        let rates = vec![0.5; net.total_blocks()];
        let s_net = choose_granularity(&net, &hw, &rates).unwrap();
        assert_eq!(s_net.len(), 4);
        assert_eq!(*s_net.last().unwrap(), 1);
        assert!(
            s_net[0] > s_net[3],
            "stage 1 should run coarser than stage 4"
        );
        // every choice is within 2% of its stage minimum
        for (si, (&s, stage)) in s_net.iter().zip(&net.stages).enumerate() {
            if si + 1 == net.stages.len() {
                continue;
            }
            let stage_rates = vec![0.5; stage.block_count];
            let eval = |s: u32| -> f64 {
                stage
                    .blocks()
                    .iter()
                    .zip(&stage_rates)
                    .map(|(b, &r)| {
                        let bs = b.with_granularity(s).unwrap();
                        let plan = decide_fusion(&bs, s, r, &hw).unwrap();
                        latcost::predict_block_latency(&bs, r, &hw, &plan).total
                    })
                    .sum()
            };
            let chosen = eval(s);
            let min = valid_granularities(stage.feature_side())
                .into_iter()
                .map(eval)
                .fold(f64::INFINITY, f64::min);
            assert!(chosen <= min * 1.02);
        }
    }
}
