//! Synthetic stand-in for block-season vineyard records.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::dataset::{TabularDataset, Target};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DISEASES: [&str; 9] =
    ["Aspergillus", "Bitter Rot", "Botrytis", "Downy Mildew", "Penicillium", "Powdery Mildew", "Ripe Rot", "Sooty Mould", "Sour Rot"];

pub const MISSING_RATE: f64 = 0.05;

/// Feature groups with their share of the columns.
const GROUPS: [(&str, f64); 5] = [("spectral", 0.40), ("climate", 0.25), ("soil", 0.15), ("terrain", 0.10), ("block", 0.10)];

/// Latent drivers; the first three are seasonal, the rest fixed per block.
#[derive(Clone, Copy)]
enum Latent {
    Temp,
    Humidity,
    Vigour,
    Soil,
    Slope,
    BlockEffect,
    Nuisance(usize),
}

const N_NUISANCE: usize = 4;

fn group_latents(group: &str) -> Vec<Latent> {
    use Latent::*;
    match group {
        "spectral" => vec![Vigour, Vigour, Humidity, Nuisance(0), Nuisance(1)],
        "climate" => vec![Temp, Humidity, Temp, Nuisance(2)],
        "soil" => vec![Soil, Vigour, Nuisance(3)],
        "terrain" => vec![Slope, Temp, Nuisance(3)],
        _ => vec![BlockEffect, Soil, Slope],
    }
}

/// Per-disease offsets on the shared risk score; staggered so prevalences differ.
const DISEASE_OFFSETS: [f64; 9] = [0.9, 1.3, 0.0, 0.3, 1.1, 0.5, 1.6, 1.9, 0.7];
const DISEASE_THRESHOLD: f64 = 1.8;

/// Block-season records: `n` rows over about `n * 627 / 1335` blocks, `f`
/// features in spectral, climate, soil, terrain and block groups, nine
/// disease indicators driven by a nonlinear function of the latent
/// conditions, and 5% of feature cells missing.
pub fn generate_vineyard_like(seed: u64, n: usize, f: usize) -> Result<TabularDataset> {
    if n < 2 || f == 0 {
        return Err(Error::InvalidInput(format!("need n >= 2 rows and f >= 1 features, got {n} x {f}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_blocks = ((n as f64 * 627.0 / 1335.0).round() as usize).clamp(1, n);
    let z = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let block_latents: Vec<[f64; 3]> = (0..n_blocks).map(|_| [z(&mut rng), z(&mut rng), z(&mut rng)]).collect();
    let block_id: Vec<u32> = (0..n).map(|i| (i % n_blocks) as u32).collect();
    let season_nuisance: Vec<[f64; N_NUISANCE]> = (0..n).map(|_| std::array::from_fn(|_| z(&mut rng))).collect();
    let latent = |i: usize, l: Latent, seasonal: &[[f64; 3]]| -> f64 {
        let b = &block_latents[block_id[i] as usize];
        match l {
            Latent::Temp => seasonal[i][0],
            Latent::Humidity => seasonal[i][1],
            Latent::Vigour => seasonal[i][2],
            Latent::Soil => b[0],
            Latent::Slope => b[1],
            Latent::BlockEffect => b[2],
            Latent::Nuisance(k) => season_nuisance[i][k],
        }
    };
    // Seasonal conditions; vigour leans on soil quality.
    let seasonal: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let soil = block_latents[block_id[i] as usize][0];
            let temp = z(&mut rng);
            let hum = 0.3 * temp + 0.95 * z(&mut rng);
            let vig = 0.5 * soil + 0.85 * z(&mut rng);
            [temp, hum, vig]
        })
        .collect();

    let mut names = Vec::with_capacity(f);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(f);
    let mut counts: Vec<usize> = GROUPS.iter().map(|g| (g.1 * f as f64).floor() as usize).collect();
    for k in 0..f - counts.iter().sum::<usize>() {
        counts[k % GROUPS.len()] += 1;
    }
    for ((group, _), &count) in GROUPS.iter().zip(&counts) {
        let latents = group_latents(group);
        let common: Vec<f64> = (0..n).map(|_| 0.4 * z(&mut rng)).collect();
        for k in 0..count {
            let source = latents[k % latents.len()];
            let loading = rng.random_range(0.6..1.0);
            let noise = Normal::new(0.0, rng.random_range(0.3..0.8)).expect("positive std");
            let shape = rng.random_range(0..4u8);
            let (scale, offset) = (rng.random_range(0.5..20.0), rng.random_range(-10.0..50.0));
            let block_level = matches!(source, Latent::Soil | Latent::Slope | Latent::BlockEffect);
            let col: Vec<f64> = (0..n)
                .map(|i| {
                    let jitter = if block_level { 0.1 * noise.sample(&mut rng) } else { noise.sample(&mut rng) + common[i] };
                    let v = loading * latent(i, source, &seasonal) + jitter;
                    match shape {
                        0 => offset + scale * v,
                        1 => scale * (0.7 * v).exp(),
                        2 => 1.0 / (1.0 + (-v).exp()),
                        _ => v,
                    }
                })
                .collect();
            names.push(format!("{group}_{k:03}"));
            columns.push(col);
        }
    }

    let risk: Vec<f64> = (0..n)
        .map(|i| {
            let [temp, hum, vig] = seasonal[i];
            let block = block_latents[block_id[i] as usize][2];
            1.3 * (temp * temp - 1.0) + 0.9 * hum + 0.6 * hum * vig + 0.4 * block + 0.5 * z(&mut rng)
        })
        .collect();
    let indicators: Vec<Vec<u8>> = risk
        .iter()
        .map(|&r| DISEASE_OFFSETS.iter().map(|&o| u8::from(r + 0.6 * z(&mut rng) + (1.0 - o) > DISEASE_THRESHOLD)).collect())
        .collect();

    let mut data = vec![0.0; n * f];
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * f + j] = if rng.random_bool(MISSING_RATE) { f64::NAN } else { v };
        }
    }
    TabularDataset::new(
        names,
        Tensor::new(vec![n, f], data)?,
        Target::Diseases { names: DISEASES.iter().map(|d| d.to_string()).collect(), indicators },
        Some(block_id),
    )
}
