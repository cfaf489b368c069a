//! Shared fixtures for integration tests: synthetic on-disk digit datasets
//! laid out like the real multi-source corpus (`training-<t>.csv` +
//! `training-<t>/`).

use numtabench::dataset::{DatasetManifest, SampleRecord, SourceTag};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::path::Path;

/// Render one synthetic digit image as a striped texture. Every class has
/// identical per-channel mean and variance (so batch statistics carry no
/// class signal); classes differ by stripe orientation, period, and channel
/// sign pattern, which stay separable after global average pooling.
pub fn class_image(class: u8, size: u32, rng: &mut ChaCha12Rng) -> image::RgbImage {
    const AMP: i16 = 50;
    // (horizontal?, period, channel signs)
    const PATTERNS: [(bool, u32, [i16; 3]); 10] = [
        (false, 8, [1, 1, -1]),
        (false, 8, [1, -1, 1]),
        (false, 8, [-1, 1, 1]),
        (false, 8, [1, 1, 1]),
        (false, 16, [1, 1, -1]),
        (false, 16, [1, -1, 1]),
        (false, 16, [-1, 1, 1]),
        (false, 16, [1, 1, 1]),
        (true, 8, [1, 1, -1]),
        (true, 8, [1, -1, 1]),
    ];
    let (horizontal, period, signs) = PATTERNS[class as usize];
    let mut img = image::RgbImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let coord = if horizontal { y } else { x };
            let stripe: i16 = if (coord / (period / 2)) % 2 == 0 { 1 } else { -1 };
            let jitter = rng.random_range(-8i16..8);
            let px = [
                (128 + stripe * signs[0] * AMP + jitter).clamp(0, 255) as u8,
                (128 + stripe * signs[1] * AMP + jitter).clamp(0, 255) as u8,
                (128 + stripe * signs[2] * AMP + jitter).clamp(0, 255) as u8,
            ];
            img.put_pixel(x, y, image::Rgb(px));
        }
    }
    img
}

/// Write a dataset root with one source tag `a`: CSV plus image directory.
/// Returns nothing; scan via `scan_sources`.
pub fn write_dataset_root(root: &Path, per_class: usize, size: u32, seed: u64) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dir = root.join("training-a");
    std::fs::create_dir_all(&dir).unwrap();
    let mut csv = String::from("filename,digit\n");
    for class in 0..10u8 {
        for i in 0..per_class {
            let filename = format!("a_{class}_{i}.png");
            class_image(class, size, &mut rng)
                .save(dir.join(&filename))
                .unwrap();
            csv.push_str(&format!("{filename},{class}\n"));
        }
    }
    std::fs::write(root.join("training-a.csv"), csv).unwrap();
}

/// In-memory manifest over freshly written images (single directory, no CSV).
pub fn write_manifest(dir: &Path, per_class: usize, size: u32, seed: u64) -> DatasetManifest {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    std::fs::create_dir_all(dir).unwrap();
    let mut records = Vec::new();
    for class in 0..10u8 {
        for i in 0..per_class {
            let filename = format!("m{seed}_{class}_{i}.png");
            class_image(class, size, &mut rng)
                .save(dir.join(&filename))
                .unwrap();
            records.push(SampleRecord {
                id: format!("m{seed}_{class}_{i}"),
                image_path: dir.join(&filename),
                label: Some(class),
                source_tag: SourceTag::new('a').unwrap(),
            });
        }
    }
    DatasetManifest::new(records)
}
