//! Independent oracles and fixtures shared by the integration and
//! acceptance tests.

#![allow(dead_code)]

pub mod grad_cases;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refrec_core::{
    BackboneConfig, DecoderConfig, Mask, ModelConfig, Recurrence, RefRecModel, Result, Tensor,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero, for inputs to kinks and divisions.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values at least 0.05 apart, so max pooling never ties under
/// small perturbations.
pub fn spread(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 1.0).collect();
    for i in (1..n).rev() {
        values.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), values).unwrap()
}

/// `sum(r * y)` with fixed random weights `r`: turns any tensor into a
/// scalar whose gradient reaches every element.
pub fn probe(y: &Tensor, seed: u64) -> Result<Tensor> {
    let mut r = rng(seed ^ 0x9e37_79b9);
    let w = uniform(&mut r, y.shape(), -1.0, 1.0);
    Ok(y.mul(&w)?.sum())
}

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            levels: 2,
            channels: vec![3, 4],
            image_side: 8,
            input_channels: 3,
        },
        decoder: DecoderConfig {
            hidden: vec![3, 2],
            phrase_dim: 2,
            kernel: 3,
        },
    }
}

pub fn random_image(rng: &mut ChaCha8Rng, side: usize) -> Tensor {
    uniform(rng, &[3, side, side], 0.0, 1.0)
}

pub fn random_phrases(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Tensor> {
    (0..count)
        .map(|_| uniform(rng, &[dim], -1.5, 1.5))
        .collect()
}

pub fn random_mask(rng: &mut ChaCha8Rng, side: usize, density: f64) -> Mask {
    let bits = (0..side * side)
        .map(|_| rng.random_bool(density) as u8)
        .collect();
    Mask::from_bits(side, side, bits).unwrap()
}

pub fn model_outputs(model: &RefRecModel, image: &Tensor, phrases: &[Tensor]) -> Vec<Vec<f64>> {
    model
        .forward_sequence(image, phrases, Recurrence::Carried)
        .unwrap()
        .masks()
        .iter()
        .map(|m| m.data().to_vec())
        .collect()
}

/// Minimum total cost over all injective maps from rows to columns, by
/// enumerating permutations of the columns.
pub fn brute_force_min_cost(costs: &[f64], rows: usize, cols: usize) -> f64 {
    fn go(
        costs: &[f64],
        rows: usize,
        cols: usize,
        row: usize,
        used: &mut Vec<bool>,
        acc: f64,
        best: &mut f64,
    ) {
        if row == rows {
            *best = best.min(acc);
            return;
        }
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                go(
                    costs,
                    rows,
                    cols,
                    row + 1,
                    used,
                    acc + costs[row * cols + c],
                    best,
                );
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(costs, rows, cols, 0, &mut vec![false; cols], 0.0, &mut best);
    best
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
/// eigenvalues and the matching unit eigenvectors.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (row_p, row_q) = (a[p].clone(), a[q].clone());
                for k in 0..n {
                    a[p][k] = c * row_p[k] - s * row_q[k];
                    a[q][k] = s * row_p[k] + c * row_q[k];
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i][i]).collect();
    let vectors = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (values, vectors)
}

/// Intersection and union pixel counts of two boolean maps.
pub fn hard_counts(a: &[bool], b: &[bool]) -> (u64, u64) {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as u64;
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count() as u64;
    (inter, union)
}

/// Smallest trainable setup: 32x32 images, two pyramid levels.
pub fn tiny_train_config() -> refrec_core::TrainConfig {
    refrec_core::TrainConfig {
        batch_size: 2,
        max_steps: 2,
        eval_interval: 1,
        seed: 7,
        token_dim: 8,
        model: ModelConfig {
            backbone: BackboneConfig {
                levels: 2,
                channels: vec![4, 4],
                image_side: 32,
                input_channels: 3,
            },
            decoder: DecoderConfig {
                hidden: vec![4, 4],
                phrase_dim: 4,
                kernel: 3,
            },
        },
        ..Default::default()
    }
}

pub fn episodes(split: refrec_core::Split, count: u64, side: usize) -> Vec<refrec_core::Episode> {
    let config = refrec_core::SynthConfig::for_side(side);
    (0..count)
        .map(|i| refrec_core::generate_episode(split.seed(i).unwrap(), &config).unwrap())
        .collect()
}

pub fn write_split(dir: &std::path::Path, episodes: &[refrec_core::Episode]) {
    for (i, ep) in episodes.iter().enumerate() {
        refrec_core::write_episode(ep, &dir.join(format!("{i:06}"))).unwrap();
    }
}
