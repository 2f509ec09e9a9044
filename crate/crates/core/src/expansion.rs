//! Object expansion: region growing in latent space from the refocused mask's
//! boundary, followed by the swap of everything outside the grown mask back to
//! the original trajectory.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{BinaryMask, GuidanceConfig, Latent};
use crate::error::{Error, Result};
use crate::layout::blend;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionTrace {
    pub rounds: usize,
    pub flipped_per_round: Vec<usize>,
    pub final_mask: BinaryMask,
}

fn neighbors8(i: usize, j: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1i64..=1)
        .flat_map(|di| (-1i64..=1).map(move |dj| (di, dj)))
        .filter(|&d| d != (0, 0))
        .filter_map(move |(di, dj)| {
            let (a, b) = (i as i64 + di, j as i64 + dj);
            (a >= 0 && b >= 0 && a < h as i64 && b < w as i64).then_some((a as usize, b as usize))
        })
}

/// Foreground cells with at least one background cell in their
/// 8-neighbourhood; cells outside the grid count as background.
pub fn find_seeds(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = mask.shape();
    let mut seeds = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if !mask.get(i, j) {
                continue;
            }
            let on_border = i == 0 || j == 0 || i + 1 == h || j + 1 == w;
            if on_border || neighbors8(i, j, h, w).any(|(a, b)| !mask.get(a, b)) {
                seeds.push((i, j));
            }
        }
    }
    seeds
}

fn euclid(a: &Array1<f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Mean channel vector over the seed and its in-grid 8-neighbours.
pub fn neighborhood_mean(latent: &Latent, seed: (usize, usize)) -> Array1<f64> {
    let (h, w) = latent.spatial();
    let mut sum = latent.cell(seed.0, seed.1).to_owned();
    let mut count = 1.0;
    for (a, b) in neighbors8(seed.0, seed.1, h, w) {
        sum += &latent.cell(a, b);
        count += 1.0;
    }
    sum / count
}

/// Mean of the neighbour's distance to the seed and to the seed's
/// neighbourhood mean.
pub fn neighbor_distance(latent: &Latent, seed: (usize, usize), neighbor: (usize, usize)) -> Result<f64> {
    let (h, w) = latent.spatial();
    let adjacent = seed != neighbor
        && seed.0.abs_diff(neighbor.0) <= 1
        && seed.1.abs_diff(neighbor.1) <= 1;
    if !adjacent || seed.0 >= h || seed.1 >= w || neighbor.0 >= h || neighbor.1 >= w {
        return Err(Error::Contract(format!(
            "{neighbor:?} is not an in-grid 8-neighbour of {seed:?}"
        )));
    }
    let n = latent.cell(neighbor.0, neighbor.1).to_owned();
    let to_seed = euclid(&n, latent.cell(seed.0, seed.1));
    let to_mean = euclid(&n, neighborhood_mean(latent, seed).view());
    Ok(0.5 * (to_seed + to_mean))
}

/// Grows `mask` until a round flips nothing. Each round evaluates every
/// background 8-neighbour of the current seeds against the round-start mask
/// and flips all passing cells at once; flipped cells seed the next round.
pub fn expand(mask: &BinaryMask, latent: &Latent, h2: f64) -> Result<(BinaryMask, ExpansionTrace)> {
    let (h, w) = mask.shape();
    if (h, w) != latent.spatial() {
        return Err(Error::Shape(format!(
            "mask {:?} vs latent grid {:?}",
            mask.shape(),
            latent.spatial()
        )));
    }
    let mut current = mask.clone();
    let mut seeds = find_seeds(&current);
    let mut flipped_per_round = Vec::new();
    loop {
        let mut flips = Vec::new();
        for &seed in &seeds {
            let mean = neighborhood_mean(latent, seed);
            let seed_vec = latent.cell(seed.0, seed.1);
            for (x, y) in neighbors8(seed.0, seed.1, h, w) {
                if current.get(x, y) {
                    continue;
                }
                let n = latent.cell(x, y).to_owned();
                let d = 0.5 * (euclid(&n, seed_vec) + euclid(&n, mean.view()));
                if d < h2 {
                    flips.push((x, y));
                }
            }
        }
        flips.sort_unstable();
        flips.dedup();
        flipped_per_round.push(flips.len());
        if flips.is_empty() {
            break;
        }
        for &(x, y) in &flips {
            current.set(x, y, true);
        }
        seeds = flips;
    }
    let trace = ExpansionTrace {
        rounds: flipped_per_round.len(),
        flipped_per_round,
        final_mask: current.clone(),
    };
    Ok((current, trace))
}

/// `(1 - M) ⊙ original + M ⊙ edited`.
pub fn swap_latent(edited: &Latent, original: &Latent, mask: &BinaryMask) -> Result<Latent> {
    blend(original, edited, mask)
}

/// The configured swap step, or a seeded draw from the open interval
/// `(0.3T, 0.5T)`.
pub fn pick_inpaint_step(config: &GuidanceConfig, rng_seed: u64) -> Result<usize> {
    if let Some(step) = config.inpaint_step {
        return Ok(step);
    }
    let (lo, hi) = middle_interval(config.total_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x1a2b_3c4d);
    Ok(rng.random_range(lo..=hi))
}

/// Integers strictly between `0.3T` and `0.5T`.
pub fn middle_interval(total_steps: usize) -> Result<(usize, usize)> {
    let t = total_steps as f64;
    let lo = (0.3 * t + 1e-9).floor() as usize + 1;
    let hi = (0.5 * t - 1e-9).ceil() as usize - 1;
    if lo > hi {
        return Err(Error::Config(format!(
            "no integer step strictly between {} and {}",
            0.3 * t,
            0.5 * t
        )));
    }
    Ok((lo, hi))
}
