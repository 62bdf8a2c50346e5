//! Seeded synthetic dataset generators for benchmarking and acceptance
//! runs: concentric circles, XOR blobs, and an irregular sparse
//! classification set in the same shape as the sparse text files.

use crate::dataio::Sample;
use crate::seedstream::{derive_key, tags, CounterStream};

fn gaussian(s: &mut CounterStream) -> f64 {
    let u1 = s.next_open01();
    let u2 = s.next_f64();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Two concentric circles (inner radius labelled +1, outer -1), replicated
/// across coordinate pairs with rotated phases so every dimension carries
/// signal, plus small Gaussian jitter.
pub fn circles(n: usize, d: usize, seed: u64) -> Vec<Sample> {
    assert!(n >= 2 && d >= 2);
    let mut s = CounterStream::new(derive_key(&[seed, tags::DATAGEN, 1]));
    let noise = 0.04;
    (0..n)
        .map(|i| {
            let positive = s.next_f64() < 0.5;
            let (radius, label) = if positive { (0.5, 1.0) } else { (1.0, -1.0) };
            let theta = s.next_angle();
            let features = (0..d)
                .map(|k| {
                    let pair = (k / 2) as f64;
                    let phase = theta + pair * std::f64::consts::FRAC_PI_4
                        + if k % 2 == 1 { std::f64::consts::FRAC_PI_2 } else { 0.0 };
                    (k, radius * phase.cos() + noise * gaussian(&mut s))
                })
                .collect();
            Sample::new(i, features, label)
        })
        .collect()
}

/// Four Gaussian blobs at the corners of a square, labelled by the XOR of
/// the corner signs, replicated across coordinate pairs.
pub fn xor_blobs(n: usize, d: usize, seed: u64) -> Vec<Sample> {
    assert!(n >= 2 && d >= 2);
    let mut s = CounterStream::new(derive_key(&[seed, tags::DATAGEN, 2]));
    let spread = 0.15;
    (0..n)
        .map(|i| {
            let cx = if s.next_f64() < 0.5 { -0.5 } else { 0.5 };
            let cy = if s.next_f64() < 0.5 { -0.5 } else { 0.5 };
            let label = if cx * cy > 0.0 { 1.0 } else { -1.0 };
            let features = (0..d)
                .map(|k| {
                    let center = if k % 2 == 0 { cx } else { cy };
                    (k, center + spread * gaussian(&mut s))
                })
                .collect();
            Sample::new(i, features, label)
        })
        .collect()
}

/// Irregularly sparse samples with a seeded linear ground-truth rule,
/// thresholded at the median score so classes balance. Feature values are
/// spread over [0, 10) to exercise normalization.
pub fn sparse_classification(n: usize, d: usize, density: f64, seed: u64) -> Vec<Sample> {
    assert!(n >= 2 && d >= 1);
    assert!(density > 0.0 && density <= 1.0);
    let mut s = CounterStream::new(derive_key(&[seed, tags::DATAGEN, 3]));
    let weights: Vec<f64> = (0..d).map(|_| gaussian(&mut s)).collect();
    let mut rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            let mut feats: Vec<(usize, f64)> = Vec::new();
            for j in 0..d {
                if s.next_f64() < density {
                    feats.push((j, s.next_f64() * 10.0));
                }
            }
            if feats.is_empty() {
                feats.push((i % d, s.next_f64() * 10.0));
            }
            feats
        })
        .collect();
    let scores: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|&(j, v)| weights[j] * v).sum())
        .collect();
    let threshold = crate::stats::median(&scores);
    rows.drain(..)
        .zip(scores)
        .enumerate()
        .map(|(i, (features, score))| {
            Sample::new(i, features, if score > threshold { 1.0 } else { -1.0 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_labelled() {
        let a = circles(50, 8, 3);
        let b = circles(50, 8, 3);
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.label == 1.0 || s.label == -1.0));
        assert!(a.iter().all(|s| s.features.len() == 8));

        let x = xor_blobs(50, 4, 3);
        assert!(x.iter().all(|s| s.label == 1.0 || s.label == -1.0));

        let sp = sparse_classification(100, 40, 0.3, 3);
        assert_eq!(sp, sparse_classification(100, 40, 0.3, 3));
        assert!(sp.iter().all(|s| !s.features.is_empty()));
        let positives = sp.iter().filter(|s| s.label > 0.0).count();
        assert!((30..=70).contains(&positives), "positives={positives}");
    }

    #[test]
    fn circle_classes_are_radially_separated() {
        let data = circles(400, 8, 9);
        for s in &data {
            let r2: f64 = s.features[..2].iter().map(|&(_, v)| v * v).sum();
            if s.label > 0.0 {
                assert!(r2.sqrt() < 0.75, "inner point at radius {}", r2.sqrt());
            } else {
                assert!(r2.sqrt() > 0.75, "outer point at radius {}", r2.sqrt());
            }
        }
    }
}
