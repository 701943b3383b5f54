//! Small synthetic labeled datasets for desk-scale training and evaluation.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::rng;
use crate::tensor::TensorF;

pub const BLOB_CENTERS: [[f64; 2]; 2] = [[0.3, 0.3], [0.7, 0.7]];
pub const BLOB_STD: f64 = 0.07;

/// Two Gaussian blobs in the unit square, labels alternating 0, 1, 0, ...
/// Points are clamped to `[0, 1]`.
pub fn blobs(n: usize, seed: u64) -> Vec<(TensorF, usize)> {
    let mut rng = rng::stream(seed);
    let noise = Normal::new(0.0, BLOB_STD).unwrap();
    (0..n)
        .map(|i| {
            let label = i % 2;
            let c = BLOB_CENTERS[label];
            let p = vec![
                (c[0] + noise.sample(&mut rng)).clamp(0.0, 1.0),
                (c[1] + noise.sample(&mut rng)).clamp(0.0, 1.0),
            ];
            (TensorF::from_vec(p).unwrap(), label)
        })
        .collect()
}

pub const BARS_SIZE: usize = 16;

/// `size x size` grayscale images: class 0 carries a bright horizontal bar,
/// class 1 a vertical one, on a dim noisy background. Shape `[size, size]`.
pub fn bars(n: usize, size: usize, seed: u64) -> Vec<(TensorF, usize)> {
    assert!(size >= 4, "bars images need at least 4 pixels per side");
    let mut rng = rng::stream(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let thickness = rng.gen_range(2..=3usize);
            let pos = rng.gen_range(1..size - thickness);
            let start = rng.gen_range(0..size / 4);
            let end = rng.gen_range(size - size / 4..=size);
            let level = rng.gen_range(0.6..0.95);
            let mut px = vec![0.0; size * size];
            for (idx, v) in px.iter_mut().enumerate() {
                *v = rng.gen_range(0.0..0.2);
                let (r, c) = (idx / size, idx % size);
                let (across, along) = if label == 0 { (r, c) } else { (c, r) };
                if across >= pos && across < pos + thickness && along >= start && along < end {
                    *v = level + rng.gen_range(0.0..0.05);
                }
            }
            (TensorF::new(vec![size, size], px).unwrap(), label)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datasets_are_seeded_and_in_range() {
        assert_eq!(blobs(10, 3), blobs(10, 3));
        assert_ne!(blobs(10, 3), blobs(10, 4));
        let b = bars(6, 16, 1);
        assert_eq!(b, bars(6, 16, 1));
        for (x, y) in &b {
            assert_eq!(x.shape(), &[16, 16]);
            assert!(x.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(*y < 2);
        }
    }
}
