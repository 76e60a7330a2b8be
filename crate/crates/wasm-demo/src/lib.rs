//! Browser demo bindings: interactive rate sweeps, granularity sweeps and
//! fusion ablations for the bottleneck blocks of a 101-layer backbone at
//! 224x224, on any of the built-in hardware presets.
//!
//! Every function returns a JSON string (an object with an `error` field
//! on bad input), so the page needs no glue beyond `JSON.parse`.

use wasm_bindgen::prelude::wasm_bindgen;

use dynlat::model::{BlockSpec, HardwareSpec, NetworkSpec};
use dynlat::sched;

fn err(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

fn stage_block(stage: u32) -> Result<BlockSpec, String> {
    let net = NetworkSpec::preset("resnet101", 224).map_err(|e| e.to_string())?;
    let idx = stage as usize;
    if idx == 0 || idx > net.stages.len() {
        return Err(format!("stage {stage} outside 1..=4"));
    }
    // the repeated (non-downsample) block of the stage
    Ok(net.stages[idx - 1].blocks()[1].clone())
}

fn hardware(name: &str) -> Result<HardwareSpec, String> {
    HardwareSpec::preset(name).map_err(|e| e.to_string())
}

/// Hardware preset names and the per-stage context the page needs to
/// populate its controls.
#[wasm_bindgen]
pub fn demo_info() -> String {
    let mut stages = Vec::new();
    for stage in 1..=4u32 {
        let block = stage_block(stage).expect("preset stages exist");
        stages.push(serde_json::json!({
            "stage": stage,
            "feature_side": block.out_h(),
            "channels": [block.conv1().c_in, block.conv2().c_out, block.conv3().c_out],
            "granularities": dynlat::model::valid_granularities(block.out_h()),
        }));
    }
    serde_json::json!({
        "hardware": ["v100", "gtx1080", "tx2", "nano"],
        "network": "resnet101 @ 224",
        "stages": stages,
    })
    .to_string()
}

/// Latency ratio vs activation rate at a fixed granularity:
/// `{points: [{x, l_dyn_us, l_stat_us, r_l}], ...}`.
#[wasm_bindgen]
pub fn sweep_rate(hw_name: &str, stage: u32, s: u32, steps: u32) -> String {
    let run = || -> Result<String, String> {
        let hw = hardware(hw_name)?;
        let block = stage_block(stage)?;
        let steps = steps.clamp(2, 200);
        let grid: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
        let sweep = sched::sweep_r(&block, s, &hw, &grid).map_err(|e| e.to_string())?;
        Ok(sweep_json(&sweep))
    };
    run().unwrap_or_else(|e| err(&e))
}

/// Latency ratio vs granularity at a fixed rate.
#[wasm_bindgen]
pub fn sweep_granularity(hw_name: &str, stage: u32, r: f64) -> String {
    let run = || -> Result<String, String> {
        let hw = hardware(hw_name)?;
        let block = stage_block(stage)?;
        let sweep = sched::sweep_s(&block, r, &hw).map_err(|e| e.to_string())?;
        Ok(sweep_json(&sweep))
    };
    run().unwrap_or_else(|e| err(&e))
}

/// Cumulative fusion ablation rows for one block configuration.
#[wasm_bindgen]
pub fn fusion_ablation(hw_name: &str, stage: u32, s: u32, r: f64) -> String {
    let run = || -> Result<String, String> {
        let hw = hardware(hw_name)?;
        let block = stage_block(stage)?;
        let rows = sched::fusion_ablation(&block, s, r, &hw).map_err(|e| e.to_string())?;
        let labels = ["none", "+masker-conv1", "+gather-conv", "+scatter-add"];
        let rows: Vec<_> = rows
            .iter()
            .zip(labels)
            .map(|((_, total), label)| {
                serde_json::json!({ "label": label, "latency_us": total * 1e6 })
            })
            .collect();
        Ok(serde_json::json!({ "rows": rows }).to_string())
    };
    run().unwrap_or_else(|e| err(&e))
}

fn sweep_json(sweep: &sched::SweepResult) -> String {
    let points: Vec<_> = sweep
        .points
        .iter()
        .map(|p| {
            serde_json::json!({
                "x": p.x,
                "l_dyn_us": p.l_dyn * 1e6,
                "l_stat_us": p.l_stat * 1e6,
                "r_l": p.r_l,
            })
        })
        .collect();
    serde_json::json!({
        "block": sweep.block_id,
        "hardware": sweep.hw_name,
        "points": points,
    })
    .to_string()
}
