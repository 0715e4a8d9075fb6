use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

// Rational approximation of the standard normal quantile (P. J. Acklam),
// relative error below 1.15e-9 before refinement.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.02425;

fn acklam(p: f64) -> f64 {
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -acklam(1.0 - p)
    }
}

/// Standard normal quantile for `p` in (0, 1): the rational approximation
/// followed by one Newton step on `Phi(x) - p`.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument {p} outside (0, 1)");
    let x = acklam(p);
    let cdf = 0.5 * erfc(-x / std::f64::consts::SQRT_2);
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    x - (cdf - p) / density
}

/// Quantile of `num / den`, clamped to `[1/(2 den), 1 - 1/(2 den)]`, using
/// `Q(1 - p) = -Q(p)` so that mirrored arguments give mirrored values exactly.
fn clamped_quantile(num: u64, den: u64) -> f64 {
    let (num, den) = if num == 0 {
        (1, 2 * den)
    } else if num >= den {
        (2 * den - 1, 2 * den)
    } else {
        (num, den)
    };
    match (2 * num).cmp(&den) {
        std::cmp::Ordering::Less => inverse_normal_cdf(num as f64 / den as f64),
        std::cmp::Ordering::Equal => 0.0,
        std::cmp::Ordering::Greater => -inverse_normal_cdf((den - num) as f64 / den as f64),
    }
}

/// Unscaled bins `k_i = (Q(i/(2^n+1)) + Q((i+1)/(2^n+1))) / 2` for
/// `i = 0 .. 2^n - 1`.
pub fn raw_quantile_bins(n_bits: u32) -> Result<Vec<f64>> {
    if !(1..=8).contains(&n_bits) {
        return Err(Error::BitsOutOfRange(n_bits));
    }
    let count = 1u64 << n_bits;
    let den = count + 1;
    Ok((0..count)
        .map(|i| 0.5 * (clamped_quantile(i, den) + clamped_quantile(i + 1, den)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileMap {
    pub n_bits: u32,
    /// Increasing code values in [-1, 1].
    pub bins: Vec<f64>,
}

/// Builds the code book and rescales it to [-1, 1]: negative bins are divided
/// by the magnitude of the lowest bin and positive bins by the highest, so both
/// endpoints are representable and zero stays at index `2^(n-1)`.
pub fn build_quantile_map(n_bits: u32) -> Result<QuantileMap> {
    let raw = raw_quantile_bins(n_bits)?;
    let neg_scale = raw.first().map_or(1.0, |v| v.abs());
    let pos_scale = raw.last().copied().filter(|v| *v > 0.0).unwrap_or(1.0);
    let bins = raw
        .iter()
        .map(|&k| {
            if k < 0.0 {
                k / neg_scale
            } else if k > 0.0 {
                k / pos_scale
            } else {
                0.0
            }
        })
        .collect();
    Ok(QuantileMap { n_bits, bins })
}

impl QuantileMap {
    pub fn zero_index(&self) -> usize {
        1 << (self.n_bits - 1)
    }

    pub fn max_gap(&self) -> f64 {
        self.bins.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Index of the nearest bin; exact ties go to the lower index.
    pub fn nearest(&self, x: f64) -> usize {
        let upper = self.bins.partition_point(|b| *b < x);
        if upper == 0 {
            return 0;
        }
        if upper == self.bins.len() {
            return self.bins.len() - 1;
        }
        let lower = upper - 1;
        if x - self.bins[lower] <= self.bins[upper] - x {
            lower
        } else {
            upper
        }
    }
}

/// Values quantized block by block: one absmax scale per block and one code
/// index per value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedBlock {
    pub map: QuantileMap,
    pub block_size: usize,
    pub scales: Vec<f64>,
    pub indices: Vec<u8>,
}

pub fn quantize_block(values: &[f64], map: &QuantileMap, block_size: usize) -> Result<QuantizedBlock> {
    if block_size == 0 {
        return Err(Error::ZeroBlockSize);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mut scales = Vec::with_capacity(values.len().div_ceil(block_size));
    let mut indices = Vec::with_capacity(values.len());
    for block in values.chunks(block_size) {
        let scale = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        scales.push(scale);
        for &v in block {
            let idx = if scale == 0.0 {
                map.zero_index()
            } else {
                map.nearest(v / scale)
            };
            indices.push(idx as u8);
        }
    }
    Ok(QuantizedBlock {
        map: map.clone(),
        block_size,
        scales,
        indices,
    })
}

pub fn dequantize_block(q: &QuantizedBlock) -> Vec<f64> {
    q.indices
        .chunks(q.block_size)
        .zip(&q.scales)
        .flat_map(|(block, &scale)| block.iter().map(move |&i| q.map.bins[i as usize] * scale))
        .collect()
}
