//! Deterministic synthetic digit dataset in the IDX container.
//!
//! Renders 28x28 grayscale digits from a 5x7 bitmap font with randomized
//! scale, position, stroke intensity and noise, then writes standard IDX
//! files. It exists so training and evaluation stay self-contained in
//! environments without the real handwriting corpus; anything that parses
//! the IDX container works on either.

use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::mnist::{idx_image_bytes, idx_label_bytes};

const FONT: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110], // 0
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110], // 1
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111], // 2
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110], // 3
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010], // 4
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110], // 5
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110], // 6
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000], // 7
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110], // 8
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100], // 9
];

fn render(digit: u8, rng: &mut ChaCha8Rng) -> [u8; 784] {
    let glyph = &FONT[digit as usize];
    let scale = *[2usize, 3].choose(rng).unwrap();
    let (gw, gh) = (5 * scale, 7 * scale);
    let ox = rng.random_range(1..=(28 - gw - 1));
    let oy = rng.random_range(1..=(28 - gh - 1));
    let stroke = rng.random_range(170..=255) as f32;

    let mut canvas = [0.0f32; 784];
    for (row, bits) in glyph.iter().enumerate() {
        for col in 0..5 {
            if bits & (1 << (4 - col)) == 0 {
                continue;
            }
            for dy in 0..scale {
                for dx in 0..scale {
                    let y = oy + row * scale + dy;
                    let x = ox + col * scale + dx;
                    let jitter = rng.random_range(-20.0f32..20.0);
                    canvas[y * 28 + x] = (stroke + jitter).clamp(0.0, 255.0);
                }
            }
        }
    }

    // Mild smear so edges are not binary, then background noise.
    let mut blurred = [0.0f32; 784];
    for y in 0..28 {
        for x in 0..28 {
            let c = canvas[y * 28 + x];
            let mut acc = 0.0;
            let mut n = 0.0;
            for (dy, dx) in [(-1i32, 0i32), (1, 0), (0, -1), (0, 1)] {
                let (ny, nx) = (y as i32 + dy, x as i32 + dx);
                if (0..28).contains(&ny) && (0..28).contains(&nx) {
                    acc += canvas[ny as usize * 28 + nx as usize];
                    n += 1.0;
                }
            }
            blurred[y * 28 + x] = 0.65 * c + 0.35 * (acc / n);
        }
    }

    let mut out = [0u8; 784];
    for (o, &v) in out.iter_mut().zip(blurred.iter()) {
        let noise = rng.random_range(0.0f32..18.0);
        *o = (v + noise).clamp(0.0, 255.0) as u8;
    }
    out
}

/// Generate `count` labeled digit images, deterministic in `seed`.
pub fn generate(count: usize, seed: u64) -> (Vec<[u8; 784]>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let digit = rng.random_range(0..10u8);
        images.push(render(digit, &mut rng));
        labels.push(digit);
    }
    (images, labels)
}

/// Generate straight into the in-memory dataset form.
pub fn dataset(count: usize, seed: u64) -> super::mnist::Dataset {
    let (imgs, labels) = generate(count, seed);
    let images = imgs
        .iter()
        .map(|img| {
            crate::tensor::Tensor::from_dims(
                &[1, 28, 28],
                img.iter().map(|&b| b as f32 / 255.0).collect(),
            )
            .expect("784 pixels")
        })
        .collect();
    super::mnist::Dataset { images, labels }
}

/// Paths of the four standard files inside a dataset directory.
pub fn standard_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    (
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    )
}

/// Write a train/test split under `dir` using the standard MNIST file
/// names. Train and test draw from disjoint RNG streams.
pub fn write_dataset(
    dir: &Path,
    train_count: usize,
    test_count: usize,
    seed: u64,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let (train_images, train_labels, test_images, test_labels) = standard_paths(dir);
    let (imgs, lbls) = generate(train_count, seed);
    std::fs::write(train_images, idx_image_bytes(&imgs))?;
    std::fs::write(train_labels, idx_label_bytes(&lbls))?;
    let (imgs, lbls) = generate(test_count, seed.wrapping_add(0x5eed_0001));
    std::fs::write(test_images, idx_image_bytes(&imgs))?;
    std::fs::write(test_labels, idx_label_bytes(&lbls))?;
    Ok(())
}
