#![allow(dead_code)]

use epl_core::field::{LabelMap, ProbabilityField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_labels(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> LabelMap {
    let data = (0..h * w).map(|_| rng.random_range(0..k as u32)).collect();
    LabelMap::new(h, w, k, data).unwrap()
}

/// Label map made of a few random axis-aligned rectangles, so that regions
/// are larger than single pixels.
pub fn blocky_labels(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> LabelMap {
    let mut data = vec![0u32; h * w];
    for _ in 0..rng.random_range(1..=4) {
        let c = rng.random_range(0..k as u32);
        let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (y1, x1) = (rng.random_range(y0..h) + 1, rng.random_range(x0..w) + 1);
        for y in y0..y1 {
            for x in x0..x1 {
                data[y * w + x] = c;
            }
        }
    }
    LabelMap::new(h, w, k, data).unwrap()
}

pub fn random_binary_field(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> ProbabilityField {
    let data = (0..k * h * w).map(|_| f64::from(rng.random_range(0..2u8))).collect();
    ProbabilityField::new(k, h, w, data).unwrap()
}

pub fn random_real_field(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> ProbabilityField {
    let data = (0..k * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    ProbabilityField::new(k, h, w, data).unwrap()
}

/// Softmax-normalised random field.
pub fn random_simplex_field(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> ProbabilityField {
    let n = h * w;
    let logits: Vec<f64> = (0..k * n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut data = vec![0.0; k * n];
    for p in 0..n {
        let z: f64 = (0..k).map(|c| logits[c * n + p].exp()).sum();
        for c in 0..k {
            data[c * n + p] = logits[c * n + p].exp() / z;
        }
    }
    ProbabilityField::new(k, h, w, data).unwrap()
}
