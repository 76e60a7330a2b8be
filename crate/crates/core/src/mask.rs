//! Binary spatial masks and their training-time relaxation.
//!
//! A coarse mask holds one decision per S x S feature patch; upsampling
//! replicates each decision over its patch, so the activation rate is
//! preserved exactly. At inference the mask is consumed as a sorted list
//! of activated patch indices. The Gumbel-Softmax forward pass is the
//! differentiable stand-in used during training; noise is always an
//! explicit input so every operation stays deterministic.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Low-resolution decision grid; one entry per S x S output patch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseMask {
    /// Row-major 0/1 grid, (out_h / s) x (out_w / s).
    pub grid: Vec<Vec<u8>>,
    /// Granularity the grid was derived at.
    pub s: u32,
}

/// Full-resolution 0/1 mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialMask {
    pub grid: Vec<Vec<u8>>,
}

/// Sorted coordinates of the activated coarse cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchIndexList {
    /// (row, col) coarse-cell coordinates, strictly row-major ascending.
    pub indices: Vec<(u32, u32)>,
    pub total_cells: u64,
}

impl CoarseMask {
    pub fn new(grid: Vec<Vec<u8>>, s: u32) -> Result<Self> {
        validate_grid(&grid)?;
        if s == 0 {
            return Err(Error::Domain("granularity must be positive".into()));
        }
        Ok(CoarseMask { grid, s })
    }

    pub fn h_cells(&self) -> usize {
        self.grid.len()
    }

    pub fn w_cells(&self) -> usize {
        self.grid.first().map_or(0, |r| r.len())
    }

    pub fn total_cells(&self) -> u64 {
        (self.h_cells() * self.w_cells()) as u64
    }

    pub fn ones(&self) -> u64 {
        self.grid
            .iter()
            .map(|row| row.iter().map(|&v| v as u64).sum::<u64>())
            .sum()
    }

    /// Fraction of activated cells.
    pub fn activation_rate(&self) -> f64 {
        self.ones() as f64 / self.total_cells() as f64
    }

    /// Nearest-neighbor expansion by factor S; each decision is replicated
    /// over its patch, so the activation rate is preserved exactly.
    pub fn upsample(&self) -> SpatialMask {
        let s = self.s as usize;
        let h = self.h_cells() * s;
        let w = self.w_cells() * s;
        let mut grid = vec![vec![0u8; w]; h];
        for (ci, row) in self.grid.iter().enumerate() {
            for (cj, &v) in row.iter().enumerate() {
                if v == 1 {
                    for out_row in grid.iter_mut().skip(ci * s).take(s) {
                        out_row[cj * s..(cj + 1) * s].fill(1);
                    }
                }
            }
        }
        SpatialMask { grid }
    }

    /// Row-major coordinates of all activated cells.
    pub fn patch_indices(&self) -> PatchIndexList {
        let mut indices = Vec::new();
        for (i, row) in self.grid.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v == 1 {
                    indices.push((i as u32, j as u32));
                }
            }
        }
        PatchIndexList {
            indices,
            total_cells: self.total_cells(),
        }
    }

    /// Compact run-length text form: `HxW@S=<count>x<bit>,...` row-major.
    pub fn to_rle(&self) -> String {
        let mut out = format!("{}x{}@{}=", self.h_cells(), self.w_cells(), self.s);
        let mut runs: Vec<(u64, u8)> = Vec::new();
        for &v in self.grid.iter().flatten() {
            match runs.last_mut() {
                Some((n, bit)) if *bit == v => *n += 1,
                _ => runs.push((1, v)),
            }
        }
        let parts: Vec<String> = runs.iter().map(|(n, bit)| format!("{n}x{bit}")).collect();
        out.push_str(&parts.join(","));
        out
    }

    pub fn from_rle(text: &str) -> Result<Self> {
        let (header, body) = text
            .split_once('=')
            .ok_or_else(|| Error::Parse("missing '=' in RLE mask".into()))?;
        let (dims, s) = header
            .split_once('@')
            .ok_or_else(|| Error::Parse("missing '@' in RLE header".into()))?;
        let (h, w) = dims
            .split_once('x')
            .ok_or_else(|| Error::Parse("missing 'x' in RLE dims".into()))?;
        let h: usize = h.parse().map_err(|_| Error::Parse("bad height".into()))?;
        let w: usize = w.parse().map_err(|_| Error::Parse("bad width".into()))?;
        let s: u32 = s
            .parse()
            .map_err(|_| Error::Parse("bad granularity".into()))?;
        let mut flat = Vec::with_capacity(h * w);
        if !body.is_empty() {
            for part in body.split(',') {
                let (n, bit) = part
                    .split_once('x')
                    .ok_or_else(|| Error::Parse(format!("bad run '{part}'")))?;
                let n: u64 = n
                    .parse()
                    .map_err(|_| Error::Parse("bad run length".into()))?;
                let bit: u8 = bit
                    .parse()
                    .map_err(|_| Error::Parse("bad run value".into()))?;
                if bit > 1 {
                    return Err(Error::Parse(format!("run value {bit} not binary")));
                }
                flat.extend(std::iter::repeat_n(bit, n as usize));
            }
        }
        if flat.len() != h * w {
            return Err(Error::Parse(format!(
                "run lengths sum to {} but grid is {}x{}",
                flat.len(),
                h,
                w
            )));
        }
        let grid = flat.chunks(w).map(|c| c.to_vec()).collect();
        CoarseMask::new(grid, s)
    }
}

impl SpatialMask {
    pub fn new(grid: Vec<Vec<u8>>) -> Result<Self> {
        validate_grid(&grid)?;
        Ok(SpatialMask { grid })
    }

    pub fn activation_rate(&self) -> f64 {
        let total = (self.grid.len() * self.grid.first().map_or(0, |r| r.len())) as f64;
        let ones: u64 = self
            .grid
            .iter()
            .map(|row| row.iter().map(|&v| v as u64).sum::<u64>())
            .sum();
        ones as f64 / total
    }
}

fn validate_grid(grid: &[Vec<u8>]) -> Result<()> {
    if grid.is_empty() || grid[0].is_empty() {
        return Err(Error::InvalidShape("empty mask grid".into()));
    }
    let w = grid[0].len();
    for row in grid {
        if row.len() != w {
            return Err(Error::InvalidShape("ragged mask grid".into()));
        }
        if row.iter().any(|&v| v > 1) {
            return Err(Error::Domain("mask entries must be 0 or 1".into()));
        }
    }
    Ok(())
}

/// Per-location two-way distribution plus its Gumbel noise and the Softmax
/// temperature: the relaxed mask used during training.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    /// probs[y][x] = (p_select, p_skip), both > 0, summing to 1.
    pub probs: Vec<Vec<(f64, f64)>>,
    /// gumbel_noise[y][x] = (g_select, g_skip).
    pub gumbel_noise: Vec<Vec<(f64, f64)>>,
    pub tau: f64,
}

impl SoftMask {
    pub fn new(
        probs: Vec<Vec<(f64, f64)>>,
        gumbel_noise: Vec<Vec<(f64, f64)>>,
        tau: f64,
    ) -> Result<Self> {
        if tau <= 0.0 || tau.is_nan() {
            return Err(Error::Domain(format!("tau {tau} must be positive")));
        }
        if probs.is_empty() || probs[0].is_empty() {
            return Err(Error::InvalidShape("empty soft mask".into()));
        }
        if probs.len() != gumbel_noise.len()
            || probs
                .iter()
                .zip(&gumbel_noise)
                .any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::Shape("probs and noise dimensions differ".into()));
        }
        for row in &probs {
            for &(p0, p1) in row {
                if p0 <= 0.0 || p1 <= 0.0 || p0.is_nan() || p1.is_nan() {
                    return Err(Error::Domain(format!(
                        "probabilities must be strictly positive, got ({p0}, {p1})"
                    )));
                }
                if (p0 + p1 - 1.0).abs() > 1e-9 {
                    return Err(Error::Domain(format!(
                        "probability pair ({p0}, {p1}) does not sum to 1"
                    )));
                }
            }
        }
        Ok(SoftMask {
            probs,
            gumbel_noise,
            tau,
        })
    }

    /// Relaxed selection weight per location:
    /// exp((log p0 + g0)/tau) / sum_k exp((log pk + gk)/tau), in (0,1).
    pub fn gumbel_forward(&self) -> Vec<Vec<f64>> {
        self.probs
            .iter()
            .zip(&self.gumbel_noise)
            .map(|(prow, grow)| {
                prow.iter()
                    .zip(grow)
                    .map(|(&(p0, p1), &(g0, g1))| {
                        let a0 = (p0.ln() + g0) / self.tau;
                        let a1 = (p1.ln() + g1) / self.tau;
                        let m = a0.max(a1);
                        let e0 = (a0 - m).exp();
                        let e1 = (a1 - m).exp();
                        e0 / (e0 + e1)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Exponential temperature decay over training: 5.0 down to 0.1, with
/// exact endpoints.
pub fn tau_schedule(step: u64, total_steps: u64) -> Result<f64> {
    if total_steps < 2 {
        return Err(Error::Domain("total_steps must be at least 2".into()));
    }
    if step >= total_steps {
        return Err(Error::Domain(format!(
            "step {step} out of range for {total_steps} steps"
        )));
    }
    const TAU_START: f64 = 5.0;
    const TAU_END: f64 = 0.1;
    if step == 0 {
        return Ok(TAU_START);
    }
    if step == total_steps - 1 {
        return Ok(TAU_END);
    }
    let frac = step as f64 / (total_steps - 1) as f64;
    Ok(TAU_START * (TAU_END / TAU_START).powf(frac))
}

/// Draw standard Gumbel(0,1) noise for an h x w field of two-way decisions,
/// deterministically from a seed.
pub fn sample_gumbel_noise(h: usize, w: usize, seed: u64) -> Vec<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        -(-u.ln()).ln()
    };
    (0..h)
        .map(|_| (0..w).map(|_| (draw(&mut rng), draw(&mut rng))).collect())
        .collect()
}

/// Random coarse mask with round(target_r * cells) ones placed uniformly;
/// deterministic for a fixed seed.
pub fn synth_mask(h_cells: usize, w_cells: usize, target_r: f64, seed: u64) -> Result<CoarseMask> {
    if !(0.0..=1.0).contains(&target_r) {
        return Err(Error::Domain(format!(
            "target rate {target_r} outside [0,1]"
        )));
    }
    if h_cells == 0 || w_cells == 0 {
        return Err(Error::InvalidShape("empty mask grid".into()));
    }
    let cells = h_cells * w_cells;
    let ones = (target_r * cells as f64).round() as usize;
    let mut order: Vec<usize> = (0..cells).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut grid = vec![vec![0u8; w_cells]; h_cells];
    for &cell in order.iter().take(ones) {
        grid[cell / w_cells][cell % w_cells] = 1;
    }
    CoarseMask::new(grid, 1)
}
