//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::path::Path;

use nalgebra::DMatrix;
use prism_core::image_io::{encode_png, write_manifest};
use prism_core::{ChannelMatrix, FeatureTable, FeatureVector, ManifestEntry, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random `rows x cols` matrix with orthonormal columns.
pub fn random_orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| gaussian(rng));
    g.qr().q()
}

/// Six Gaussian classes with unit covariance in `dim` dimensions. Class
/// means are the vertices of a regular simplex with pairwise distance
/// `separation`, placed at a random orientation inside a random
/// `informative`-dimensional subspace.
pub struct SimplexFixture {
    pub means: Vec<Vec<f64>>,
    pub dim: usize,
}

impl SimplexFixture {
    pub fn new(classes: usize, dim: usize, informative: usize, separation: f64, seed: u64) -> Self {
        assert!(classes <= informative && informative <= dim);
        let mut rng = rng(seed);
        // e_i minus the centroid: pairwise distance sqrt(2).
        let scale = separation / 2f64.sqrt();
        let basis = random_orthonormal(dim, informative, &mut rng);
        let rotation = random_orthonormal(informative, informative, &mut rng);
        let means = (0..classes)
            .map(|c| {
                let vertex = nalgebra::DVector::from_fn(informative, |j, _| {
                    let e = if j == c { 1.0 } else { 0.0 };
                    let centroid = if j < classes { 1.0 / classes as f64 } else { 0.0 };
                    (e - centroid) * scale
                });
                (&basis * (&rotation * vertex)).iter().copied().collect()
            })
            .collect();
        Self { means, dim }
    }

    pub fn label(c: usize) -> String {
        format!("class{c}")
    }

    pub fn sample(&self, per_class: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<String>) {
        let mut rng = rng(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (c, mean) in self.means.iter().enumerate() {
            for _ in 0..per_class {
                xs.push(mean.iter().map(|m| m + gaussian(&mut rng)).collect());
                ys.push(Self::label(c));
            }
        }
        (xs, ys)
    }
}

/// Balanced table: every label has `per_prompt` rows for each prompt id
/// 1..=40. `feature` maps (class index, rng) to a feature vector.
pub fn prompt_table(
    labels: &[&str],
    per_prompt: usize,
    seed: u64,
    mut feature: impl FnMut(usize, &mut ChaCha8Rng) -> Vec<f64>,
) -> FeatureTable {
    let mut rng = rng(seed);
    let mut entries = Vec::new();
    let mut features = Vec::new();
    for (c, label) in labels.iter().enumerate() {
        for p in 1..=40u8 {
            for k in 0..per_prompt {
                entries.push(ManifestEntry::new(format!("{label}/p{p:02}_{k}.png"), *label, Some(p)));
                features.push(FeatureVector::from_values(feature(c, &mut rng)).expect("multiple of 6"));
            }
        }
    }
    FeatureTable { entries, features }
}

/// Indices of the magnitude and phase coordinates for `n_r` bins.
pub fn block_indices(n_r: usize) -> (Vec<usize>, Vec<usize>) {
    let mut mag = Vec::new();
    let mut phase = Vec::new();
    for ch in 0..3 {
        mag.extend(2 * ch * n_r..(2 * ch + 1) * n_r);
        phase.extend((2 * ch + 1) * n_r..(2 * ch + 2) * n_r);
    }
    (mag, phase)
}

/// Six classes whose identity is split between the two blocks: magnitude
/// coordinates only reveal `class / 2`, phase coordinates only reveal
/// `class % 2`.
pub fn split_signal_table(n_r: usize, per_prompt: usize, shift: f64, seed: u64) -> FeatureTable {
    let (mag, phase) = block_indices(n_r);
    let labels = ["g0", "g1", "g2", "g3", "g4", "g5"];
    prompt_table(&labels, per_prompt, seed, |c, rng| {
        let mut v: Vec<f64> = (0..6 * n_r).map(|_| gaussian(rng)).collect();
        let coarse = c / 2;
        v[mag[coarse]] += shift;
        v[phase[0]] += if c % 2 == 0 { shift } else { -shift };
        v
    })
}

/// Random smooth "content" shared by every image with the same prompt.
fn content(prompt: u8, rows: usize, cols: usize) -> Vec<[f64; 3]> {
    let mut rng = rng(1_000 + u64::from(prompt));
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.0..rows as f64),
                rng.random_range(0.0..cols as f64),
                rng.random_range(4.0..16.0),
                [rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0)],
            )
        })
        .collect();
    let mut out = vec![[110.0; 3]; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            for &(br, bc, s, amp) in &blobs {
                let w = (-((r as f64 - br).powi(2) + (c as f64 - bc).powi(2)) / (2.0 * s * s)).exp();
                for k in 0..3 {
                    out[r * cols + c][k] += amp[k] * w;
                }
            }
        }
    }
    out
}

/// Image whose content depends on the prompt and whose generator leaves a
/// faint periodic pattern with a class-specific frequency and channel mix.
pub fn synthetic_image(class: usize, prompt: u8, variant: u64, size: usize) -> RgbImage {
    let base = content(prompt, size, size);
    let mut rng = rng(variant.wrapping_mul(7_919) ^ (class as u64) << 32 ^ u64::from(prompt));
    let period = 2.0 + class as f64 * 0.75;
    let tint = [1.0 + (class % 3) as f64, 1.0 + (class % 2) as f64, 2.0 - (class % 2) as f64];
    let pixels: Vec<[f64; 3]> = (0..size * size)
        .map(|i| {
            let (r, c) = ((i / size) as f64, (i % size) as f64);
            let wave = (std::f64::consts::TAU * (r + 0.5 * c) / period).cos() * 3.0;
            let mut px = base[i];
            for k in 0..3 {
                px[k] = (px[k] + wave * tint[k] + gaussian(&mut rng) * 4.0).round().clamp(0.0, 255.0);
            }
            px
        })
        .collect();
    let channel = |k: usize| ChannelMatrix::new(size, size, pixels.iter().map(|p| p[k]).collect()).unwrap();
    RgbImage::new(channel(0), channel(1), channel(2)).unwrap()
}

/// Writes a 6-class, 40-prompt PNG dataset and its manifest into `dir`.
pub fn write_png_dataset(dir: &Path, per_prompt: usize, size: usize) -> Vec<ManifestEntry> {
    let mut entries = Vec::new();
    for class in 0..6 {
        let label = format!("gen{class}");
        std::fs::create_dir_all(dir.join(&label)).unwrap();
        for prompt in 1..=40u8 {
            for k in 0..per_prompt {
                let rel = format!("{label}/p{prompt:02}_{k}.png");
                encode_png(&synthetic_image(class, prompt, k as u64, size), dir.join(&rel)).unwrap();
                entries.push(ManifestEntry::new(rel, label.clone(), Some(prompt)));
            }
        }
    }
    write_manifest(dir.join("manifest.csv"), &entries).unwrap();
    entries
}
