//! The latency prediction model.
//!
//! Every scheduled operator is costed in five terms over a three-level
//! memory system: off-chip -> on-chip global (`off2on`), on-chip global ->
//! PE-local (`global2local`), the computation itself, and the two mirror
//! terms on the way out. Off-chip transfers move each unique byte once at
//! full bandwidth. On-chip transfers pay the per-patch halo duplication of
//! the 3x3 convolution and a transaction-efficiency factor driven by the
//! contiguous run length of the access: gathered patch reads run S pixels
//! at a time, dense operators stream whole feature rows, and packed
//! tensors are fully contiguous. Computation is distributed over the PEs
//! in tiles; the tile shape is chosen by exhaustive search over the
//! power-of-two candidate space, which trades occupancy against wave
//! quantization. Weights are charged once per PE that participates.

use serde::{Deserialize, Serialize};

use crate::flops::patches_for_rate;
use crate::model::{BlockSpec, ConvLayerSpec, HardwareSpec, StemHead};
use crate::sched::{rewrite_block, BlockOp, FusionPlan};
use crate::ELEM_BYTES;

/// One tile of the (patches, channels, rows, cols) output space assigned
/// to a PE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileShape {
    pub t_p: u32,
    pub t_c: u32,
    pub t_s1: u32,
    pub t_s2: u32,
}

impl TileShape {
    pub const UNIT: TileShape = TileShape {
        t_p: 1,
        t_c: 1,
        t_s1: 1,
        t_s2: 1,
    };

    pub fn elems(&self) -> u64 {
        self.t_p as u64 * self.t_c as u64 * self.t_s1 as u64 * self.t_s2 as u64
    }
}

/// Shape of a gathered (packed) tensor: `p` patches of `s x s` pixels by
/// `c_out` channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatheredShape {
    pub p: u64,
    pub c_out: u32,
    pub s: u32,
}

/// Five-term latency decomposition of one operator, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub off2on: f64,
    pub global2local: f64,
    pub compute: f64,
    pub local2global: f64,
    pub on2off: f64,
    pub total: f64,
    pub chosen_tile: TileShape,
}

impl LatencyBreakdown {
    pub const ZERO: LatencyBreakdown = LatencyBreakdown {
        off2on: 0.0,
        global2local: 0.0,
        compute: 0.0,
        local2global: 0.0,
        on2off: 0.0,
        total: 0.0,
        chosen_tile: TileShape::UNIT,
    };

    fn new(off2on: f64, g2l: f64, compute: f64, l2g: f64, on2off: f64, tile: TileShape) -> Self {
        LatencyBreakdown {
            off2on,
            global2local: g2l,
            compute,
            local2global: l2g,
            on2off,
            total: off2on + g2l + compute + l2g + on2off,
            chosen_tile: tile,
        }
    }
}

/// Raw byte counts behind the four data-movement terms; the quantities a
/// traced execution must reproduce exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ByteTotals {
    pub off2on_bytes: u64,
    pub global2local_bytes: u64,
    pub local2global_bytes: u64,
    pub on2off_bytes: u64,
}

impl ByteTotals {
    pub fn add(&mut self, other: &ByteTotals) {
        self.off2on_bytes += other.off2on_bytes;
        self.global2local_bytes += other.global2local_bytes;
        self.local2global_bytes += other.local2global_bytes;
        self.on2off_bytes += other.on2off_bytes;
    }
}

/// One costed operator of a block schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpLatency {
    pub label: String,
    pub latency: LatencyBreakdown,
    pub bytes: ByteTotals,
}

/// Latency prediction for a whole block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLatency {
    pub total: f64,
    pub per_op: Vec<OpLatency>,
}

impl BlockLatency {
    pub fn byte_totals(&self) -> ByteTotals {
        let mut sum = ByteTotals::default();
        for op in &self.per_op {
            sum.add(&op.bytes);
        }
        sum
    }

    /// Per-op CSV: (op, tile, off2on, g2l, compute, l2g, on2off, total), us.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("op,tile,off2on_us,g2l_us,compute_us,l2g_us,on2off_us,total_us\n");
        for op in &self.per_op {
            let t = op.latency.chosen_tile;
            out.push_str(&format!(
                "{},{}x{}x{}x{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
                op.label,
                t.t_p,
                t.t_c,
                t.t_s1,
                t.t_s2,
                op.latency.off2on * 1e6,
                op.latency.global2local * 1e6,
                op.latency.compute * 1e6,
                op.latency.local2global * 1e6,
                op.latency.on2off * 1e6,
                op.latency.total * 1e6,
            ));
        }
        out.push_str(&format!("block,,,,,,,{:.3}\n", self.total * 1e6));
        out
    }
}

/// Operator kinds exposed for single-op studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    /// Dynamic convolution reading its patches straight from the dense
    /// feature map (gather fused).
    DynConv,
    /// Dense convolution over the full feature map.
    StaticConv,
    /// Patch gather into a packed tensor.
    Gather,
    /// Fused scatter + residual add over the activated patches.
    ScatterAdd,
    /// Pool + 1x1 mask convolution over the full input.
    Masker,
    /// Dense elementwise pass (residual add and friends).
    Elementwise,
}

/// Fraction of each memory transaction carrying useful bytes for a given
/// contiguous run length: run / (ceil(run / txn) * txn).
pub fn memory_efficiency(contig_run_bytes: u64, hw: &HardwareSpec) -> f64 {
    if contig_run_bytes == 0 {
        return 0.0;
    }
    let txn = hw.txn_bytes as u64;
    let txns = contig_run_bytes.div_ceil(txn);
    contig_run_bytes as f64 / (txns * txn) as f64
}

fn next_pow2(v: u64) -> u64 {
    v.max(1).next_power_of_two()
}

/// Internal tiled output space; dense operators are a single patch of the
/// full (possibly non-square) feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TiledDims {
    p: u64,
    c: u32,
    s1: u32,
    s2: u32,
}

impl TiledDims {
    fn elems(&self) -> u64 {
        self.p * self.c as u64 * self.s1 as u64 * self.s2 as u64
    }

    fn tiles(&self) -> Vec<TileShape> {
        if self.elems() == 0 {
            return Vec::new();
        }
        let axis = |dim: u64| -> Vec<u32> {
            let top = next_pow2(dim);
            let mut v = Vec::new();
            let mut t = 1u64;
            while t <= top {
                v.push(t as u32);
                t *= 2;
            }
            v
        };
        let (ps, cs, s1s, s2s) = (
            axis(self.p),
            axis(self.c as u64),
            axis(self.s1 as u64),
            axis(self.s2 as u64),
        );
        let mut out = Vec::with_capacity(ps.len() * cs.len() * s1s.len() * s2s.len());
        for &t_p in &ps {
            for &t_c in &cs {
                for &t_s1 in &s1s {
                    for &t_s2 in &s2s {
                        out.push(TileShape {
                            t_p,
                            t_c,
                            t_s1,
                            t_s2,
                        });
                    }
                }
            }
        }
        out
    }

    fn tile_count(&self, tile: &TileShape) -> u64 {
        self.p.div_ceil(tile.t_p as u64)
            * (self.c as u64).div_ceil(tile.t_c as u64)
            * (self.s1 as u64).div_ceil(tile.t_s1 as u64)
            * (self.s2 as u64).div_ceil(tile.t_s2 as u64)
    }
}

/// Candidate tiles for a gathered output: the Cartesian product of
/// power-of-two extents per dimension, each up to the dimension rounded up
/// to the next power of two; stable enumeration order.
pub fn enumerate_tiles(out: &GatheredShape) -> Vec<TileShape> {
    TiledDims {
        p: out.p,
        c: out.c_out,
        s1: out.s,
        s2: out.s,
    }
    .tiles()
}

/// Per-tile traffic of one operator under a given tile shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileTraffic {
    pub in_bytes_per_tile: u64,
    pub weight_bytes_per_tile: u64,
    pub out_bytes_per_tile: u64,
    /// Halo-induced overfetch of the tile's input region relative to its
    /// output footprint; 1.0 for 1x1 kernels and pure copies.
    pub duplication_factor: f64,
}

/// Traffic for one tile of an operator. Convolutions read the input
/// region their output footprint requires, so a tile of t_s1 x t_s2
/// output pixels of a k x k conv fetches ((t_s1-1)*stride+k) x
/// ((t_s2-1)*stride+k) input pixels per channel.
pub fn tile_traffic(
    op_kind: OpKind,
    layer: &ConvLayerSpec,
    tile: &TileShape,
    _s: u32,
) -> TileTraffic {
    let out_bytes = tile.elems() * ELEM_BYTES;
    match op_kind {
        OpKind::DynConv | OpKind::StaticConv | OpKind::Masker => {
            let k = layer.kernel as u64;
            let stride = layer.stride as u64;
            let ir1 = (tile.t_s1 as u64 - 1) * stride + k;
            let ir2 = (tile.t_s2 as u64 - 1) * stride + k;
            // Channel tiles re-fetch per spanned group.
            let group_out = (layer.c_out / layer.groups).max(1) as u64;
            let groups_spanned = (tile.t_c as u64)
                .div_ceil(group_out)
                .min(layer.groups as u64);
            let channels = (layer.fan_in_channels() as u64 * groups_spanned).min(layer.c_in as u64);
            let in_bytes = tile.t_p as u64 * channels * ir1 * ir2 * ELEM_BYTES;
            let weight_bytes =
                tile.t_c as u64 * layer.fan_in_channels() as u64 * k * k * ELEM_BYTES;
            let duplication =
                (ir1 * ir2) as f64 / (tile.t_s1 as u64 * tile.t_s2 as u64 * stride * stride) as f64;
            TileTraffic {
                in_bytes_per_tile: in_bytes,
                weight_bytes_per_tile: weight_bytes,
                out_bytes_per_tile: out_bytes,
                duplication_factor: duplication,
            }
        }
        OpKind::Gather | OpKind::ScatterAdd | OpKind::Elementwise => TileTraffic {
            in_bytes_per_tile: out_bytes,
            weight_bytes_per_tile: 0,
            out_bytes_per_tile: out_bytes,
            duplication_factor: 1.0,
        },
    }
}

/// One input stream of an operator: unique bytes (off-chip side), fetched
/// bytes (on-chip side, with duplication), and the contiguous run length
/// governing transaction efficiency (`None` = packed/contiguous).
#[derive(Debug, Clone, Copy)]
struct Stream {
    unique_bytes: u64,
    fetched_bytes: u64,
    run_bytes: Option<u64>,
}

fn dense_stream(c: u32, h: u32, w: u32) -> Stream {
    let bytes = c as u64 * h as u64 * w as u64 * ELEM_BYTES;
    Stream {
        unique_bytes: bytes,
        fetched_bytes: bytes,
        run_bytes: Some(w as u64 * ELEM_BYTES),
    }
}

fn packed_stream(bytes: u64) -> Stream {
    Stream {
        unique_bytes: bytes,
        fetched_bytes: bytes,
        run_bytes: None,
    }
}

/// Patch reads out of a dense feature map: every activated patch fetches
/// its full (possibly halo-extended) input region; unique bytes are capped
/// at the dense tensor size.
fn patch_read_stream(
    p: u64,
    c: u32,
    patch_side: u32,
    dense_h: u32,
    dense_w: u32,
    s: u32,
) -> Stream {
    let per_patch_pixels = patch_side as u64 * patch_side as u64;
    let dense_pixels = dense_h as u64 * dense_w as u64;
    let fetched = p * c as u64 * per_patch_pixels * ELEM_BYTES;
    let unique = (p * per_patch_pixels).min(dense_pixels) * c as u64 * ELEM_BYTES;
    Stream {
        unique_bytes: unique,
        fetched_bytes: fetched,
        run_bytes: Some(s as u64 * ELEM_BYTES),
    }
}

/// Everything the five-term model needs to cost one operator.
#[derive(Debug, Clone)]
struct OpCost {
    label: String,
    dims: TiledDims,
    /// MACs per output element; tile work = tile elems x this.
    per_elem_macs: u64,
    /// Extra MACs not proportional to the tiled output (e.g. the pooled
    /// mask channel of the fused conv1), charged at full occupancy.
    extra_macs: u64,
    weight_bytes: u64,
    /// Units that each load their own weight copy, capped at num_pe:
    /// activated patches for gathered ops, all PEs for dense ops.
    weight_units: u64,
    inputs: Vec<Stream>,
    out_bytes: u64,
    out_run: Option<u64>,
}

impl OpCost {
    fn byte_totals(&self, hw: &HardwareSpec) -> ByteTotals {
        if self.dims.elems() == 0 {
            return ByteTotals::default();
        }
        let weight_g2l = self.weight_bytes * self.weight_units.min(hw.num_pe as u64);
        ByteTotals {
            off2on_bytes: self.inputs.iter().map(|s| s.unique_bytes).sum::<u64>()
                + self.weight_bytes,
            global2local_bytes: self.inputs.iter().map(|s| s.fetched_bytes).sum::<u64>()
                + weight_g2l,
            local2global_bytes: self.out_bytes,
            on2off_bytes: self.out_bytes,
        }
    }

    fn predict(&self, hw: &HardwareSpec) -> LatencyBreakdown {
        if self.dims.elems() == 0 {
            return LatencyBreakdown::ZERO;
        }
        let bytes = self.byte_totals(hw);
        let off2on = bytes.off2on_bytes as f64 / hw.offchip_bandwidth;
        let on2off = bytes.on2off_bytes as f64 / hw.offchip_bandwidth;

        let mut g2l = 0.0;
        for stream in &self.inputs {
            let eff = stream
                .run_bytes
                .map_or(1.0, |run| memory_efficiency(run, hw));
            g2l += stream.fetched_bytes as f64 / (hw.onchip_global_bandwidth * eff);
        }
        let weight_g2l = self.weight_bytes * self.weight_units.min(hw.num_pe as u64);
        g2l += weight_g2l as f64 / hw.onchip_global_bandwidth;

        let out_eff = self.out_run.map_or(1.0, |run| memory_efficiency(run, hw));
        let l2g = self.out_bytes as f64 / (hw.onchip_global_bandwidth * out_eff);

        let extra = self.extra_macs as f64 / hw.peak_macs_per_sec();

        // The data terms are tile-independent; the search balances PE
        // occupancy against wave quantization in the compute term.
        let mut best: Option<(f64, TileShape)> = None;
        for tile in self.dims.tiles() {
            let waves = self.dims.tile_count(&tile).div_ceil(hw.num_pe as u64);
            let compute = waves as f64 * (tile.elems() * self.per_elem_macs) as f64
                / hw.per_pe_macs_per_sec();
            if best.is_none_or(|(b, _)| compute < b) {
                best = Some((compute, tile));
            }
        }
        let (compute, tile) = best.unwrap_or((0.0, TileShape::UNIT));
        LatencyBreakdown::new(off2on, g2l, compute + extra, l2g, on2off, tile)
    }
}

/// Gathered output shape of a block at rate `r`: round(r * cells) patches
/// of S x S by the block's output width.
pub fn infer_gathered_shape(block: &BlockSpec, r: f64) -> GatheredShape {
    GatheredShape {
        p: patches_for_rate(block, r),
        c_out: block.conv3().c_out,
        s: block.granularity,
    }
}

fn conv_per_elem_macs(layer: &ConvLayerSpec) -> u64 {
    layer.fan_in_channels() as u64 * (layer.kernel as u64).pow(2)
}

/// Build the cost descriptor for one scheduled operator of a block with
/// `p` activated patches.
fn op_cost(block: &BlockSpec, op: &BlockOp, p: u64) -> OpCost {
    let (in_h, in_w) = (block.input_h, block.input_w);
    let (out_h, out_w) = (block.out_h(), block.out_w());

    let cells = block.coarse_cells();
    let s = block.granularity;
    let g = block.gathered_input_side();
    let c_in = block.conv1().c_in;
    let c1 = block.conv1().c_out;
    let c2 = block.conv2().c_out;
    let c4 = block.conv3().c_out;
    let e = ELEM_BYTES;

    match op {
        // The channel-reduced masker commutes to conv-then-pool, so its
        // work parallelizes over input pixels rather than coarse cells.
        BlockOp::Masker => OpCost {
            label: "masker".into(),
            dims: TiledDims {
                p: 1,
                c: 1,
                s1: in_h,
                s2: in_w,
            },
            per_elem_macs: c_in as u64 + 1,
            extra_macs: 0,
            weight_bytes: c_in as u64 * e,
            weight_units: u64::MAX, // dense op: every PE
            inputs: vec![dense_stream(c_in, in_h, in_w)],
            out_bytes: cells * e,
            out_run: None,
        },
        BlockOp::FusedMaskerConv1 => OpCost {
            label: "masker_conv1".into(),
            dims: TiledDims {
                p: 1,
                c: c1 + 1,
                s1: in_h,
                s2: in_w,
            },
            per_elem_macs: block.conv1().fan_in_channels() as u64,
            extra_macs: in_h as u64 * in_w as u64, // pooling the mask channel
            weight_bytes: (c1 as u64 + 1) * block.conv1().fan_in_channels() as u64 * e,
            weight_units: u64::MAX,
            inputs: vec![dense_stream(c_in, in_h, in_w)],
            out_bytes: (c1 as u64 * in_h as u64 * in_w as u64 + cells) * e,
            out_run: Some(in_w as u64 * e),
        },
        // The gather source depends on the masker fusion; built separately.
        BlockOp::Gather => unreachable!("gather is costed by gather_cost()"),
        BlockOp::Conv1 { from_packed } => {
            let input = if *from_packed {
                packed_stream(p * c_in as u64 * (g as u64).pow(2) * e)
            } else {
                patch_read_stream(p, c_in, g, in_h, in_w, s)
            };
            OpCost {
                label: if *from_packed {
                    "conv1"
                } else {
                    "gather_conv1"
                }
                .into(),
                dims: TiledDims {
                    p,
                    c: c1,
                    s1: g,
                    s2: g,
                },
                per_elem_macs: conv_per_elem_macs(block.conv1()),
                extra_macs: 0,
                weight_bytes: block.conv1().weight_bytes(),
                weight_units: p,
                inputs: vec![input],
                out_bytes: p * c1 as u64 * (g as u64).pow(2) * e,
                out_run: None,
            }
        }
        BlockOp::Conv2 { from_packed } => {
            let input = if *from_packed {
                packed_stream(p * c1 as u64 * (g as u64).pow(2) * e)
            } else {
                patch_read_stream(p, c1, g, in_h, in_w, s)
            };
            OpCost {
                label: if *from_packed {
                    "conv2"
                } else {
                    "gather_conv2"
                }
                .into(),
                dims: TiledDims {
                    p,
                    c: c2,
                    s1: s,
                    s2: s,
                },
                per_elem_macs: conv_per_elem_macs(block.conv2()),
                extra_macs: 0,
                weight_bytes: block.conv2().weight_bytes(),
                weight_units: p,
                inputs: vec![input],
                out_bytes: p * c2 as u64 * (s as u64).pow(2) * e,
                out_run: None,
            }
        }
        BlockOp::Conv3 => OpCost {
            label: "conv3".into(),
            dims: TiledDims {
                p,
                c: c4,
                s1: s,
                s2: s,
            },
            per_elem_macs: conv_per_elem_macs(block.conv3()),
            extra_macs: 0,
            weight_bytes: block.conv3().weight_bytes(),
            weight_units: p,
            inputs: vec![packed_stream(p * c2 as u64 * (s as u64).pow(2) * e)],
            out_bytes: p * c4 as u64 * (s as u64).pow(2) * e,
            out_run: None,
        },
        BlockOp::Scatter => OpCost {
            label: "scatter".into(),
            dims: TiledDims {
                p,
                c: c4,
                s1: s,
                s2: s,
            },
            per_elem_macs: 0,
            extra_macs: 0,
            weight_bytes: 0,
            weight_units: 0,
            inputs: vec![packed_stream(p * c4 as u64 * (s as u64).pow(2) * e)],
            out_bytes: p * c4 as u64 * (s as u64).pow(2) * e,
            out_run: Some(s as u64 * e),
        },
        BlockOp::Add => OpCost {
            // Patch-wise residual update against the scattered tensor; the
            // untouched positions already hold the residual in place.
            label: "add".into(),
            dims: TiledDims {
                p,
                c: c4,
                s1: s,
                s2: s,
            },
            per_elem_macs: 1,
            extra_macs: 0,
            weight_bytes: 0,
            weight_units: 0,
            inputs: vec![
                patch_read_stream(p, c4, s, out_h, out_w, s),
                patch_read_stream(p, c4, s, out_h, out_w, s),
            ],
            out_bytes: p * c4 as u64 * (s as u64).pow(2) * e,
            out_run: Some(s as u64 * e),
        },
        BlockOp::ScatterAdd => OpCost {
            label: "scatter_add".into(),
            dims: TiledDims {
                p,
                c: c4,
                s1: s,
                s2: s,
            },
            per_elem_macs: 1,
            extra_macs: 0,
            weight_bytes: 0,
            weight_units: 0,
            inputs: vec![
                packed_stream(p * c4 as u64 * (s as u64).pow(2) * e),
                patch_read_stream(p, c4, s, out_h, out_w, s),
            ],
            out_bytes: p * c4 as u64 * (s as u64).pow(2) * e,
            out_run: Some(s as u64 * e),
        },
    }
}

/// Gather cost; the source tensor depends on whether conv1 already ran
/// densely (masker fused) or the block input is being gathered.
fn gather_cost(block: &BlockSpec, p: u64, masker_fused: bool) -> OpCost {
    let g = block.gathered_input_side();
    let s = block.granularity;
    let c_src = if masker_fused {
        block.conv1().c_out
    } else {
        block.conv1().c_in
    };
    let bytes = p * c_src as u64 * (g as u64).pow(2) * ELEM_BYTES;
    OpCost {
        label: "gather".into(),
        dims: TiledDims {
            p,
            c: c_src,
            s1: g,
            s2: g,
        },
        per_elem_macs: 0,
        extra_macs: 0,
        weight_bytes: 0,
        weight_units: 0,
        inputs: vec![patch_read_stream(
            p,
            c_src,
            g,
            block.input_h,
            block.input_w,
            s,
        )],
        out_bytes: bytes,
        out_run: None,
    }
}

fn static_conv_cost(label: &str, layer: &ConvLayerSpec, out_h: u32, out_w: u32) -> OpCost {
    let in_h = out_h * layer.stride;
    let in_w = out_w * layer.stride;
    OpCost {
        label: label.into(),
        dims: TiledDims {
            p: 1,
            c: layer.c_out,
            s1: out_h,
            s2: out_w,
        },
        per_elem_macs: conv_per_elem_macs(layer),
        extra_macs: 0,
        weight_bytes: layer.weight_bytes(),
        weight_units: u64::MAX,
        inputs: vec![dense_stream(layer.c_in, in_h, in_w)],
        out_bytes: layer.c_out as u64 * out_h as u64 * out_w as u64 * ELEM_BYTES,
        out_run: Some(out_w as u64 * ELEM_BYTES),
    }
}

fn se_cost(block: &BlockSpec) -> Option<OpCost> {
    let w_se = block.se_channels()?;
    let w = block.conv2().c_out;
    let (out_h, out_w) = (block.out_h(), block.out_w());
    let feature = w as u64 * out_h as u64 * out_w as u64 * ELEM_BYTES;
    Some(OpCost {
        label: "se".into(),
        dims: TiledDims {
            p: 1,
            c: w,
            s1: out_h,
            s2: out_w,
        },
        per_elem_macs: 1, // the full-feature rescale
        extra_macs: 2 * w as u64 * w_se as u64,
        weight_bytes: 2 * w as u64 * w_se as u64 * ELEM_BYTES,
        weight_units: u64::MAX,
        inputs: vec![Stream {
            unique_bytes: feature,
            fetched_bytes: 2 * feature, // pooled once, rescaled once
            run_bytes: Some(out_w as u64 * ELEM_BYTES),
        }],
        out_bytes: feature,
        out_run: Some(out_w as u64 * ELEM_BYTES),
    })
}

fn static_add_cost(block: &BlockSpec) -> OpCost {
    let c4 = block.conv3().c_out;
    let (out_h, out_w) = (block.out_h(), block.out_w());
    OpCost {
        label: "add".into(),
        dims: TiledDims {
            p: 1,
            c: c4,
            s1: out_h,
            s2: out_w,
        },
        per_elem_macs: 1,
        extra_macs: 0,
        weight_bytes: 0,
        weight_units: 0,
        inputs: vec![
            dense_stream(c4, out_h, out_w),
            dense_stream(c4, out_h, out_w),
        ],
        out_bytes: c4 as u64 * out_h as u64 * out_w as u64 * ELEM_BYTES,
        out_run: Some(out_w as u64 * ELEM_BYTES),
    }
}

fn block_op_costs(block: &BlockSpec, p: u64, fusion: &FusionPlan) -> Vec<OpCost> {
    let mut costs = Vec::new();
    for op in rewrite_block(block, fusion) {
        match op {
            BlockOp::Gather => costs.push(gather_cost(block, p, fusion.fuse_masker_conv1)),
            other => costs.push(op_cost(block, &other, p)),
        }
    }
    if let Some(down) = &block.downsample {
        costs.push(static_conv_cost(
            "downsample",
            down,
            block.out_h(),
            block.out_w(),
        ));
    }
    if let Some(se) = se_cost(block) {
        costs.push(se);
    }
    costs
}

fn run_costs(costs: Vec<OpCost>, hw: &HardwareSpec) -> BlockLatency {
    let mut per_op = Vec::with_capacity(costs.len());
    let mut total = 0.0;
    for cost in costs {
        let latency = cost.predict(hw);
        let bytes = cost.byte_totals(hw);
        total += latency.total;
        per_op.push(OpLatency {
            label: cost.label,
            latency,
            bytes,
        });
    }
    BlockLatency { total, per_op }
}

/// Latency of one operator in isolation. Dense operators are expressed as
/// a single patch covering the feature map (p = 1, s = feature side); for
/// dynamic kinds the unique-byte cap of the enclosing dense tensor is not
/// known here and patch reads are charged uncapped (block-level
/// predictions apply the exact cap).
pub fn predict_op_latency(
    op_kind: OpKind,
    layer: &ConvLayerSpec,
    shape: &GatheredShape,
    s: u32,
    hw: &HardwareSpec,
) -> LatencyBreakdown {
    let e = ELEM_BYTES;
    let cost = match op_kind {
        OpKind::StaticConv => static_conv_cost("static_conv", layer, shape.s, shape.s),
        OpKind::DynConv => {
            let g = (shape.s - 1) * layer.stride + layer.kernel;
            let fetched = shape.p * layer.c_in as u64 * (g as u64).pow(2) * e;
            OpCost {
                label: "dyn_conv".into(),
                dims: TiledDims {
                    p: shape.p,
                    c: layer.c_out,
                    s1: shape.s,
                    s2: shape.s,
                },
                per_elem_macs: conv_per_elem_macs(layer),
                extra_macs: 0,
                weight_bytes: layer.weight_bytes(),
                weight_units: shape.p,
                inputs: vec![Stream {
                    unique_bytes: fetched,
                    fetched_bytes: fetched,
                    run_bytes: Some(s as u64 * e),
                }],
                out_bytes: shape.p * layer.c_out as u64 * (shape.s as u64).pow(2) * e,
                out_run: None,
            }
        }
        OpKind::Gather => {
            let g = (shape.s - 1) * layer.stride + layer.kernel;
            let bytes = shape.p * layer.c_in as u64 * (g as u64).pow(2) * e;
            OpCost {
                label: "gather".into(),
                dims: TiledDims {
                    p: shape.p,
                    c: layer.c_in,
                    s1: g,
                    s2: g,
                },
                per_elem_macs: 0,
                extra_macs: 0,
                weight_bytes: 0,
                weight_units: 0,
                inputs: vec![Stream {
                    unique_bytes: bytes,
                    fetched_bytes: bytes,
                    run_bytes: Some(s as u64 * e),
                }],
                out_bytes: bytes,
                out_run: None,
            }
        }
        OpKind::ScatterAdd => {
            let bytes = shape.p * shape.c_out as u64 * (shape.s as u64).pow(2) * e;
            OpCost {
                label: "scatter_add".into(),
                dims: TiledDims {
                    p: shape.p,
                    c: shape.c_out,
                    s1: shape.s,
                    s2: shape.s,
                },
                per_elem_macs: 1,
                extra_macs: 0,
                weight_bytes: 0,
                weight_units: 0,
                inputs: vec![
                    packed_stream(bytes),
                    Stream {
                        unique_bytes: bytes,
                        fetched_bytes: bytes,
                        run_bytes: Some(s as u64 * e),
                    },
                ],
                out_bytes: bytes,
                out_run: Some(s as u64 * e),
            }
        }
        OpKind::Masker => {
            let side = (shape.s / s.max(1)) as u64;
            OpCost {
                label: "masker".into(),
                dims: TiledDims {
                    p: 1,
                    c: 1,
                    s1: shape.s,
                    s2: shape.s,
                },
                per_elem_macs: layer.c_in as u64 + 1,
                extra_macs: 0,
                weight_bytes: layer.c_in as u64 * e,
                weight_units: u64::MAX,
                inputs: vec![dense_stream(layer.c_in, shape.s, shape.s)],
                out_bytes: side * side * e,
                out_run: None,
            }
        }
        OpKind::Elementwise => {
            let bytes = shape.c_out as u64 * (shape.s as u64).pow(2) * e;
            OpCost {
                label: "elementwise".into(),
                dims: TiledDims {
                    p: shape.p.max(1),
                    c: shape.c_out,
                    s1: shape.s,
                    s2: shape.s,
                },
                per_elem_macs: 1,
                extra_macs: 0,
                weight_bytes: 0,
                weight_units: 0,
                inputs: vec![
                    dense_stream(shape.c_out, shape.s, shape.s),
                    dense_stream(shape.c_out, shape.s, shape.s),
                ],
                out_bytes: bytes,
                out_run: Some(shape.s as u64 * e),
            }
        }
    };
    cost.predict(hw)
}

/// Latency of a dynamic block at rate `r` under a fusion plan, including
/// the masker and the dense downsample/SE terms.
///
/// A rate rarely lands on a whole number of patches; rounding it would
/// distort the effective rate by up to half a patch, which on a 4-cell
/// grid is a 12% error. The prediction instead interpolates between the
/// two adjacent integer patch counts, i.e. the expected latency when
/// round(r * cells) is not exact.
pub fn predict_block_latency(
    block: &BlockSpec,
    r: f64,
    hw: &HardwareSpec,
    fusion: &FusionPlan,
) -> BlockLatency {
    let exact = r * block.coarse_cells() as f64;
    let lo = exact.floor() as u64;
    let hi = exact.ceil() as u64;
    if lo == hi {
        return predict_block_latency_with_patches(block, lo, hw, fusion);
    }
    let w = exact - lo as f64;
    let a = predict_block_latency_with_patches(block, lo, hw, fusion);
    let b = predict_block_latency_with_patches(block, hi, hw, fusion);
    blend_block_latency(&a, &b, w)
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}

fn blend_block_latency(a: &BlockLatency, b: &BlockLatency, w: f64) -> BlockLatency {
    debug_assert_eq!(a.per_op.len(), b.per_op.len());
    let per_op = a
        .per_op
        .iter()
        .zip(&b.per_op)
        .map(|(x, y)| {
            let l = LatencyBreakdown {
                off2on: lerp(x.latency.off2on, y.latency.off2on, w),
                global2local: lerp(x.latency.global2local, y.latency.global2local, w),
                compute: lerp(x.latency.compute, y.latency.compute, w),
                local2global: lerp(x.latency.local2global, y.latency.local2global, w),
                on2off: lerp(x.latency.on2off, y.latency.on2off, w),
                total: lerp(x.latency.total, y.latency.total, w),
                chosen_tile: y.latency.chosen_tile,
            };
            let bytes = ByteTotals {
                off2on_bytes: lerp(x.bytes.off2on_bytes as f64, y.bytes.off2on_bytes as f64, w)
                    .round() as u64,
                global2local_bytes: lerp(
                    x.bytes.global2local_bytes as f64,
                    y.bytes.global2local_bytes as f64,
                    w,
                )
                .round() as u64,
                local2global_bytes: lerp(
                    x.bytes.local2global_bytes as f64,
                    y.bytes.local2global_bytes as f64,
                    w,
                )
                .round() as u64,
                on2off_bytes: lerp(x.bytes.on2off_bytes as f64, y.bytes.on2off_bytes as f64, w)
                    .round() as u64,
            };
            OpLatency {
                label: x.label.clone(),
                latency: l,
                bytes,
            }
        })
        .collect();
    BlockLatency {
        total: lerp(a.total, b.total, w),
        per_op,
    }
}

/// Same as [`predict_block_latency`] with an exact activated-patch count
/// (used when a concrete mask is available).
pub fn predict_block_latency_with_patches(
    block: &BlockSpec,
    p: u64,
    hw: &HardwareSpec,
    fusion: &FusionPlan,
) -> BlockLatency {
    run_costs(block_op_costs(block, p, fusion), hw)
}

/// Dense costing of the block without any masker: full-row streams, no
/// gather/scatter machinery.
pub fn static_block_latency(block: &BlockSpec, hw: &HardwareSpec) -> BlockLatency {
    let mut costs = vec![
        static_conv_cost("conv1", block.conv1(), block.input_h, block.input_w),
        static_conv_cost("conv2", block.conv2(), block.out_h(), block.out_w()),
        static_conv_cost("conv3", block.conv3(), block.out_h(), block.out_w()),
    ];
    if let Some(se) = se_cost(block) {
        costs.push(se);
    }
    if let Some(down) = &block.downsample {
        costs.push(static_conv_cost(
            "downsample",
            down,
            block.out_h(),
            block.out_w(),
        ));
    }
    if block.has_residual {
        costs.push(static_add_cost(block));
    }
    run_costs(costs, hw)
}

/// Dense stem/head cost: peak-throughput compute plus one pass of its
/// tensor traffic through both memory levels.
pub fn stem_head_latency(stem_head: &StemHead, hw: &HardwareSpec) -> f64 {
    stem_head.macs as f64 / hw.peak_macs_per_sec()
        + stem_head.traffic_bytes as f64 / hw.offchip_bandwidth
        + stem_head.traffic_bytes as f64 / hw.onchip_global_bandwidth
}
