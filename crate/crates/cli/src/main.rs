//! Command-line driver: latency/FLOPs prediction, sweep and ablation data
//! generation, and executor-vs-model validation.
//!
//! Exit codes: 0 success, 1 validation mismatch, 2 invalid configuration,
//! 3 unachievable FLOPs target.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dynlat::error::Error;
use dynlat::flops;
use dynlat::latcost;
use dynlat::mask::CoarseMask;
use dynlat::model::{HardwareSpec, NetworkSpec};
use dynlat::sched::{self, FusionPlan};
use dynlat::simexec;

const EXIT_MISMATCH: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TARGET: u8 = 3;

#[derive(Parser)]
#[command(
    name = "dynlat",
    version,
    about = "Latency model for spatially sparse convolution blocks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Predict block/network latency and FLOPs for a rate assignment.
    Predict(PredictArgs),
    /// Emit a latency-ratio curve over activation rate or granularity.
    Sweep(SweepArgs),
    /// Emit the cumulative operator-fusion ablation table for one block.
    Ablate(AblateArgs),
    /// Check the cost model's byte accounting against the executor trace.
    Validate(ValidateArgs),
    /// List the built-in hardware and network presets.
    Presets,
}

#[derive(Args)]
struct TargetArgs {
    /// Hardware preset name or path to a HardwareSpec JSON file.
    #[arg(long = "hw", default_value = "v100")]
    hw: String,
    /// Network preset name or path to a NetworkSpec JSON file.
    #[arg(long = "net", default_value = "resnet101")]
    net: String,
    /// Input resolution for network presets.
    #[arg(long, default_value_t = 224)]
    resolution: u32,
    /// Per-stage granularities, e.g. 8,4,7,1 (overrides the network's).
    #[arg(long = "s-net", value_delimiter = ',')]
    s_net: Option<Vec<u32>>,
}

#[derive(Args)]
struct RateArgs {
    /// One activation rate applied to every block.
    #[arg(long, group = "rate_source")]
    rate: Option<f64>,
    /// Comma-separated per-block activation rates.
    #[arg(long, value_delimiter = ',', group = "rate_source")]
    rates: Option<Vec<f64>>,
    /// FLOPs ratio target; the uniform rate is solved from it.
    #[arg(long, group = "rate_source")]
    target: Option<f64>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    target: TargetArgs,
    #[command(flatten)]
    rates: RateArgs,
    /// Fusion policy: decide per block, or force a fixed plan.
    #[arg(long, value_enum, default_value_t = FusionArg::Auto)]
    fusion: FusionArg,
    /// Drop the maskers entirely (the network's static counterpart).
    #[arg(long, default_value_t = false)]
    no_masker: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    target: TargetArgs,
    /// Swept axis: activation rate (r) or granularity (s).
    #[arg(long, value_enum)]
    axis: Axis,
    /// Block selector STAGE.BLOCK, zero-based (e.g. 0.1).
    #[arg(long)]
    block: String,
    /// Granularity for rate sweeps (defaults to the stage's setting).
    #[arg(long)]
    s: Option<u32>,
    /// Fixed rate for granularity sweeps.
    #[arg(long)]
    rate: Option<f64>,
    /// Rate-grid step for rate sweeps.
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    target: TargetArgs,
    /// Block selector STAGE.BLOCK, zero-based.
    #[arg(long)]
    block: String,
    /// Granularity of the ablated block.
    #[arg(long)]
    s: u32,
    /// Activation rate of the ablated block.
    #[arg(long)]
    rate: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct ValidateArgs {
    /// Hardware preset or spec file used for the byte accounting.
    #[arg(long = "hw", default_value = "v100")]
    hw: String,
    /// Base seed of the validation suite.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt one model constant to demonstrate fault detection.
    #[arg(long, default_value_t = false)]
    inject_fault: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    R,
    S,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FusionArg {
    Auto,
    All,
    None,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Predict(args) => cmd_predict(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Presets => cmd_presets(),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Domain(ref msg) if msg.contains("unachievable") => EXIT_TARGET,
                _ => EXIT_CONFIG,
            };
            ExitCode::from(code)
        }
    }
}

fn load_hardware(spec: &str) -> Result<HardwareSpec, Error> {
    if spec.ends_with(".json") || spec.contains('/') {
        let text =
            std::fs::read_to_string(spec).map_err(|e| Error::Parse(format!("read {spec}: {e}")))?;
        let hw: HardwareSpec =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{spec}: {e}")))?;
        hw.validate()?;
        Ok(hw)
    } else {
        HardwareSpec::preset(spec)
    }
}

fn load_network(args: &TargetArgs) -> Result<NetworkSpec, Error> {
    let net = if args.net.ends_with(".json") || args.net.contains('/') {
        let text = std::fs::read_to_string(&args.net)
            .map_err(|e| Error::Parse(format!("read {}: {e}", args.net)))?;
        let net: NetworkSpec =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", args.net)))?;
        net.validate()?;
        net
    } else {
        NetworkSpec::preset(&args.net, args.resolution)?
    };
    match &args.s_net {
        Some(s_net) => net.with_s_net(s_net),
        None => Ok(net),
    }
}

fn resolve_rates(net: &NetworkSpec, rates: &RateArgs) -> Result<(Vec<f64>, Option<f64>), Error> {
    let n = net.total_blocks();
    match (&rates.rate, &rates.rates, &rates.target) {
        (Some(r), None, None) => {
            if !(0.0..=1.0).contains(r) {
                return Err(Error::Domain(format!("rate {r} outside [0,1]")));
            }
            Ok((vec![*r; n], None))
        }
        (None, Some(list), None) => {
            if list.len() != n {
                return Err(Error::Domain(format!(
                    "{} rates supplied for {} blocks",
                    list.len(),
                    n
                )));
            }
            Ok((list.clone(), None))
        }
        (None, None, Some(t)) => {
            let r = flops::solve_uniform_rate(net, *t, &FusionPlan::NONE)?;
            Ok((vec![r; n], Some(r)))
        }
        _ => Err(Error::Domain(
            "exactly one of --rate, --rates, --target is required".into(),
        )),
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| Error::Parse(format!("write {path:?}: {e}")))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_predict(args: PredictArgs) -> Result<ExitCode, Error> {
    let hw = load_hardware(&args.target.hw)?;
    let net = load_network(&args.target)?;
    let (rates, solved) = resolve_rates(&net, &args.rates)?;

    let blocks = net.blocks();
    let fusions: Vec<FusionPlan> = match args.fusion {
        FusionArg::All => vec![FusionPlan::ALL; blocks.len()],
        FusionArg::None => vec![FusionPlan::NONE; blocks.len()],
        FusionArg::Auto => blocks
            .iter()
            .zip(&rates)
            .map(|((_, _, b), &r)| sched::decide_fusion(b, b.granularity, r, &hw))
            .collect::<Result<_, _>>()?,
    };
    let latency = match args.fusion {
        _ if args.no_masker => sched::network_latency_opts(&net, &rates, &hw, false)?,
        FusionArg::Auto => sched::network_latency(&net, &rates, &hw)?,
        _ => {
            // fixed plans: cost every block under the forced plan
            let stem = latcost::stem_head_latency(&net.stem_and_head, &hw);
            let mut total = stem;
            let mut static_total = stem;
            let mut per_block = Vec::new();
            for (((si, bi, block), &r), plan) in blocks.iter().zip(&rates).zip(&fusions) {
                let l_dyn = latcost::predict_block_latency(block, r, &hw, plan).total;
                let l_stat = latcost::static_block_latency(block, &hw).total;
                total += l_dyn;
                static_total += l_stat;
                per_block.push(sched::BlockLatencyEntry {
                    stage: *si,
                    block: *bi,
                    s: block.granularity,
                    r,
                    plan: *plan,
                    l_dyn,
                    l_stat,
                });
            }
            sched::NetworkLatency {
                total,
                static_total,
                speedup: 1.0 - total / static_total,
                per_block,
            }
        }
    };
    let flops_report = flops::network_flops_opts(&net, &rates, &fusions, !args.no_masker)?;

    let text = match args.format {
        Format::Json => {
            let mut doc = serde_json::json!({
                "hardware": hw.name,
                "network": net.name,
                "s_net": net.s_net,
                "total_us": round3(latency.total * 1e6),
                "static_us": round3(latency.static_total * 1e6),
                "speedup": latency.speedup,
                "f_dyn": flops_report.f_dyn,
                "f_stat": flops_report.f_stat,
                "flops_ratio": flops_report.ratio,
                "per_block": latency.per_block.iter().zip(&blocks).map(|(b, (_, _, spec))| {
                    // five-term breakdown summed over the block's operators
                    let pred = if args.no_masker {
                        latcost::static_block_latency(spec, &hw)
                    } else {
                        latcost::predict_block_latency(spec, b.r, &hw, &b.plan)
                    };
                    let mut terms = [0.0f64; 5];
                    for op in &pred.per_op {
                        terms[0] += op.latency.off2on;
                        terms[1] += op.latency.global2local;
                        terms[2] += op.latency.compute;
                        terms[3] += op.latency.local2global;
                        terms[4] += op.latency.on2off;
                    }
                    serde_json::json!({
                        "stage": b.stage,
                        "block": b.block,
                        "s": b.s,
                        "r": b.r,
                        "masker_fused": b.plan.fuse_masker_conv1,
                        "l_dyn_us": round3(b.l_dyn * 1e6),
                        "l_stat_us": round3(b.l_stat * 1e6),
                        "off2on_us": round3(terms[0] * 1e6),
                        "global2local_us": round3(terms[1] * 1e6),
                        "compute_us": round3(terms[2] * 1e6),
                        "local2global_us": round3(terms[3] * 1e6),
                        "on2off_us": round3(terms[4] * 1e6),
                    })
                }).collect::<Vec<_>>(),
            });
            if let Some(r) = solved {
                doc["solved_rate"] = serde_json::json!(r);
            }
            format!("{}\n", serde_json::to_string_pretty(&doc).unwrap())
        }
        Format::Csv => {
            let mut text = String::from("stage,block,s,r,masker_fused,l_dyn_us,l_stat_us\n");
            for b in &latency.per_block {
                text.push_str(&format!(
                    "{},{},{},{},{},{:.3},{:.3}\n",
                    b.stage,
                    b.block,
                    b.s,
                    b.r,
                    b.plan.fuse_masker_conv1,
                    b.l_dyn * 1e6,
                    b.l_stat * 1e6
                ));
            }
            text.push_str(&format!(
                "total,,,,,{:.3},{:.3}\n",
                latency.total * 1e6,
                latency.static_total * 1e6
            ));
            text
        }
    };
    emit(&args.out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn select_block(net: &NetworkSpec, selector: &str) -> Result<dynlat::model::BlockSpec, Error> {
    let (stage, block) = selector
        .split_once('.')
        .ok_or_else(|| Error::Domain(format!("block selector '{selector}' is not STAGE.BLOCK")))?;
    let stage: usize = stage
        .parse()
        .map_err(|_| Error::Domain(format!("bad stage in '{selector}'")))?;
    let block: usize = block
        .parse()
        .map_err(|_| Error::Domain(format!("bad block in '{selector}'")))?;
    let stages = &net.stages;
    if stage >= stages.len() || block >= stages[stage].block_count {
        return Err(Error::Domain(format!(
            "selector '{selector}' outside {} stages",
            stages.len()
        )));
    }
    Ok(stages[stage].blocks()[block].clone())
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode, Error> {
    let hw = load_hardware(&args.target.hw)?;
    let net = load_network(&args.target)?;
    let block = select_block(&net, &args.block)?;
    let sweep = match args.axis {
        Axis::R => {
            let s = args.s.unwrap_or(block.granularity);
            if !(args.step > 0.0 && args.step <= 1.0) {
                return Err(Error::Domain(format!(
                    "grid step {} outside (0,1]",
                    args.step
                )));
            }
            let mut grid = Vec::new();
            let mut i = 0u32;
            loop {
                // multiples of the step, rounded clear of accumulation noise
                let r = (i as f64 * args.step * 1e9).round() / 1e9;
                if r >= 1.0 {
                    grid.push(1.0);
                    break;
                }
                grid.push(r);
                i += 1;
            }
            sched::sweep_r(&block, s, &hw, &grid)?
        }
        Axis::S => {
            let r = args
                .rate
                .ok_or_else(|| Error::Domain("granularity sweeps need --rate".into()))?;
            sched::sweep_s(&block, r, &hw)?
        }
    };
    let text = match args.format {
        Format::Csv => sweep.to_csv(),
        Format::Json => format!("{}\n", serde_json::to_string_pretty(&sweep).unwrap()),
    };
    emit(&args.out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(args: AblateArgs) -> Result<ExitCode, Error> {
    let hw = load_hardware(&args.target.hw)?;
    let net = load_network(&args.target)?;
    let block = select_block(&net, &args.block)?;
    let rows = sched::fusion_ablation(&block, args.s, args.rate, &hw)?;
    let text = match args.format {
        Format::Csv => sched::ablation_to_csv(&rows),
        Format::Json => {
            let doc: Vec<_> = rows
                .iter()
                .map(|(plan, total)| {
                    serde_json::json!({
                        "masker_conv1": plan.fuse_masker_conv1,
                        "gather_conv": plan.fuse_gather_conv,
                        "scatter_add": plan.fuse_scatter_add,
                        "latency_us": round3(total * 1e6),
                    })
                })
                .collect();
            format!("{}\n", serde_json::to_string_pretty(&doc).unwrap())
        }
    };
    emit(&args.out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode, Error> {
    let hw = load_hardware(&args.hw)?;
    let suite = simexec::default_validation_suite(args.seed);
    let mut failures = 0usize;
    for (i, (block, mask, plan)) in suite.iter().enumerate() {
        let mut report = simexec::verify_traffic(block, mask, plan, &hw, args.seed ^ i as u64)?;
        if args.inject_fault && i == 0 {
            // pretend a model constant drifted by one transaction
            report.model.off2on_bytes += 128;
            report.deltas.push((
                "off2on".into(),
                report.model.off2on_bytes,
                report.traced.off2on_bytes,
            ));
            report.matches = false;
        }
        if !report.matches {
            failures += 1;
            eprintln!("case {i}: byte mismatch");
            for (term, model, traced) in &report.deltas {
                eprintln!("  {term}: model {model} B, trace {traced} B");
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures}/{} cases disagree", suite.len());
        return Ok(ExitCode::from(EXIT_MISMATCH));
    }
    let mask_err = validate_mask_round_trips(args.seed)?;
    if mask_err {
        return Ok(ExitCode::from(EXIT_MISMATCH));
    }
    println!(
        "validated {} traffic cases: model and trace agree on every byte term",
        suite.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn validate_mask_round_trips(seed: u64) -> Result<bool, Error> {
    for i in 0..32u64 {
        let mask = dynlat::mask::synth_mask(
            1 + (i % 7) as usize,
            1 + (i % 5) as usize,
            (i % 10) as f64 / 10.0,
            seed ^ i,
        )?;
        let back = CoarseMask::from_rle(&mask.to_rle())?;
        if back != mask {
            eprintln!("mask RLE round trip failed at case {i}");
            return Ok(true);
        }
    }
    Ok(false)
}

fn cmd_presets() -> Result<ExitCode, Error> {
    println!("hardware presets:");
    for name in ["v100", "gtx1080", "tx2", "nano"] {
        let hw = HardwareSpec::preset(name)?;
        println!(
            "  {name:8} {:>3} PEs x {:>3} lanes @ {:>6.0} MHz, {:>6.1} GB/s off-chip",
            hw.num_pe,
            hw.fp32_lanes_per_pe,
            hw.frequency / 1e6,
            hw.offchip_bandwidth / 1e9
        );
    }
    println!("network presets (at 224x224):");
    for name in ["resnet50", "resnet101", "regnety400mf", "regnety800mf"] {
        let net = NetworkSpec::preset(name, 224)?;
        let n = net.total_blocks();
        let report =
            flops::network_flops_opts(&net, &vec![1.0; n], &vec![FusionPlan::NONE; n], false)?;
        let depths: Vec<String> = net
            .stages
            .iter()
            .map(|s| s.block_count.to_string())
            .collect();
        println!(
            "  {name:13} blocks {:2} ({}), default S_net {:?}, static {:.2} GMACs",
            n,
            depths.join("-"),
            net.s_net,
            report.f_stat as f64 / 1e9
        );
    }
    Ok(ExitCode::SUCCESS)
}
