//! Readers for the published binary releases of the benchmark datasets.
//! Training and test splits are concatenated (train first).

use std::fs;
use std::path::{Path, PathBuf};

use super::DataError;
use crate::aug::Image;

/// CIFAR-100 fine label -> super-class (coarse) label.
pub const CIFAR100_FINE_TO_COARSE: [u8; 100] = [
    4, 1, 14, 8, 0, 6, 7, 7, 18, 3, //
    3, 14, 9, 18, 7, 11, 3, 9, 7, 11, //
    6, 11, 5, 10, 7, 6, 13, 15, 3, 15, //
    0, 11, 1, 10, 12, 14, 16, 9, 11, 5, //
    5, 19, 8, 8, 15, 13, 14, 17, 18, 10, //
    16, 4, 17, 4, 2, 0, 17, 4, 18, 17, //
    10, 3, 2, 12, 12, 16, 12, 1, 9, 19, //
    2, 10, 0, 1, 16, 12, 9, 13, 15, 13, //
    16, 19, 2, 4, 6, 19, 5, 5, 8, 19, //
    18, 1, 2, 15, 6, 0, 17, 8, 14, 13, //
];

pub(crate) type Labeled = (Vec<Image>, Vec<usize>);

/// Returns `root/sub` when it exists, else `root`.
fn locate(root: &Path, sub: &str) -> PathBuf {
    let nested = root.join(sub);
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    if !path.is_file() {
        return Err(DataError::Missing(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// 32x32 planar RGB (1024 R, 1024 G, 1024 B) to an image.
fn planar32(bytes: &[u8]) -> Image {
    let mut interleaved = Vec::with_capacity(3072);
    for i in 0..1024 {
        interleaved.extend([bytes[i], bytes[1024 + i], bytes[2048 + i]]);
    }
    Image::from_rgb8(32, 32, &interleaved).expect("byte pixels are in range")
}

fn records<'a>(path: &Path, bytes: &'a [u8], size: usize) -> Result<std::slice::ChunksExact<'a, u8>, DataError> {
    if bytes.is_empty() || bytes.len() % size != 0 {
        return Err(DataError::Corrupt {
            path: path.to_path_buf(),
            message: format!("length {} is not a multiple of the {size}-byte record", bytes.len()),
        });
    }
    Ok(bytes.chunks_exact(size))
}

pub(crate) fn load_cifar10(root: &Path) -> Result<Labeled, DataError> {
    let dir = locate(root, "cifar-10-batches-bin");
    let files = (1..=5)
        .map(|i| format!("data_batch_{i}.bin"))
        .chain(std::iter::once("test_batch.bin".to_string()));
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    for name in files {
        let path = dir.join(name);
        let bytes = read(&path)?;
        for rec in records(&path, &bytes, 3073)? {
            if rec[0] > 9 {
                return Err(DataError::Corrupt {
                    path: path.clone(),
                    message: format!("label {} out of range", rec[0]),
                });
            }
            labels.push(rec[0] as usize);
            images.push(planar32(&rec[1..]));
        }
    }
    Ok((images, labels))
}

pub(crate) fn load_cifar100_super(root: &Path) -> Result<Labeled, DataError> {
    let dir = locate(root, "cifar-100-binary");
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    for name in ["train.bin", "test.bin"] {
        let path = dir.join(name);
        let bytes = read(&path)?;
        for rec in records(&path, &bytes, 3074)? {
            let (coarse, fine) = (rec[0], rec[1] as usize);
            let mapped = *CIFAR100_FINE_TO_COARSE.get(fine).ok_or_else(|| DataError::Corrupt {
                path: path.clone(),
                message: format!("fine label {fine} out of range"),
            })?;
            if mapped != coarse {
                return Err(DataError::Corrupt {
                    path: path.clone(),
                    message: format!("fine label {fine} stored with super-class {coarse}, expected {mapped}"),
                });
            }
            labels.push(mapped as usize);
            images.push(planar32(&rec[2..]));
        }
    }
    Ok((images, labels))
}

/// STL-10 stores each 96x96 image channel by channel, column-major.
fn stl_image(bytes: &[u8]) -> Image {
    const S: usize = 96;
    let mut interleaved = vec![0u8; S * S * 3];
    for c in 0..3 {
        for x in 0..S {
            for y in 0..S {
                interleaved[(y * S + x) * 3 + c] = bytes[c * S * S + x * S + y];
            }
        }
    }
    Image::from_rgb8(S, S, &interleaved).expect("byte pixels are in range")
}

pub(crate) fn load_stl10(root: &Path) -> Result<Labeled, DataError> {
    let dir = locate(root, "stl10_binary");
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    for split in ["train", "test"] {
        let xp = dir.join(format!("{split}_X.bin"));
        let yp = dir.join(format!("{split}_y.bin"));
        let xs = read(&xp)?;
        let ys = read(&yp)?;
        let recs = records(&xp, &xs, 96 * 96 * 3)?;
        if recs.len() != ys.len() {
            return Err(DataError::CountMismatch {
                images: recs.len(),
                labels: ys.len(),
            });
        }
        for (rec, &y) in recs.zip(&ys) {
            if !(1..=10).contains(&y) {
                return Err(DataError::Corrupt {
                    path: yp.clone(),
                    message: format!("label {y} outside 1..=10"),
                });
            }
            labels.push(y as usize - 1);
            images.push(stl_image(rec));
        }
    }
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_table_is_surjective_and_balanced() {
        let mut counts = [0; 20];
        for &c in &CIFAR100_FINE_TO_COARSE {
            counts[c as usize] += 1;
        }
        assert!(counts.iter().all(|&n| n == 5), "{counts:?}");
    }

    #[test]
    fn cifar10_reads_all_six_batches() {
        let dir = tempfile::tempdir().unwrap();
        for (i, name) in ["data_batch_1", "data_batch_2", "data_batch_3", "data_batch_4", "data_batch_5", "test_batch"]
            .iter()
            .enumerate()
        {
            let mut rec = vec![i as u8];
            rec.extend((0..3072).map(|j| (j % 256) as u8));
            fs::write(dir.path().join(format!("{name}.bin")), rec).unwrap();
        }
        let (images, labels) = load_cifar10(dir.path()).unwrap();
        assert_eq!(labels, vec![0, 1, 2, 3, 4, 5]);
        // first pixel: R plane byte 0, G plane byte 1024, B plane byte 2048
        assert_eq!(images[0].pixel(0, 0), [0.0, 0.0, 0.0]);
        assert_eq!(images[0].pixel(1, 0), [1.0 / 255.0; 3]);
    }

    #[test]
    fn cifar10_missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_cifar10(dir.path()), Err(DataError::Missing(_))));
    }

    #[test]
    fn cifar100_maps_fine_to_super() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["train.bin", "test.bin"] {
            let mut bytes = Vec::new();
            for fine in [0u8, 99] {
                bytes.push(CIFAR100_FINE_TO_COARSE[fine as usize]);
                bytes.push(fine);
                bytes.extend(std::iter::repeat_n(128u8, 3072));
            }
            fs::write(dir.path().join(name), bytes).unwrap();
        }
        let (_, labels) = load_cifar100_super(dir.path()).unwrap();
        assert_eq!(labels, vec![4, 13, 4, 13]);
    }

    #[test]
    fn stl10_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        for split in ["train", "test"] {
            fs::write(dir.path().join(format!("{split}_X.bin")), vec![0u8; 96 * 96 * 3]).unwrap();
            fs::write(dir.path().join(format!("{split}_y.bin")), vec![1u8, 2]).unwrap();
        }
        assert!(matches!(
            load_stl10(dir.path()),
            Err(DataError::CountMismatch { images: 1, labels: 2 })
        ));
    }

    #[test]
    fn stl10_column_major_layout() {
        let mut rec = vec![0u8; 96 * 96 * 3];
        // red channel, column x = 1, row y = 0
        rec[96] = 255;
        let img = stl_image(&rec);
        assert_eq!(img.pixel(1, 0), [1.0, 0.0, 0.0]);
        assert_eq!(img.pixel(0, 1), [0.0, 0.0, 0.0]);
    }
}
