//! Datasets for the training harness: a deterministic synthetic
//! classification task and a CIFAR-10 binary-batch loader.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Synthetic { seed: u64 },
    Cifar10 { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub classes: usize,
    pub provenance: Provenance,
}

// Class templates are unit-RMS superpositions of a few low-frequency
// cosine modes; samples are signal * template + white noise. Smooth
// templates keep the task linearly learnable while giving small
// convolutions plus global pooling something to latch onto; the signal
// scale keeps the task far from saturated, leaving room for capacity
// differences between the convolution variants to show up in the loss.
const SIGNAL_SCALE: f64 = 0.3;
const NOISE_SCALE: f64 = 1.0;
const MODES_PER_CHANNEL: usize = 3;

fn smooth_template<R: Rng>(channels: usize, hw: usize, rng: &mut R) -> Tensor {
    let mut t = Tensor::zeros(channels, hw, hw);
    for c in 0..channels {
        for _ in 0..MODES_PER_CHANNEL {
            let fy = rng.gen_range(0..=2) as f64;
            let fx = rng.gen_range(0..=2) as f64;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp: f64 = rng.sample(rand_distr::StandardNormal);
            for y in 0..hw {
                for x in 0..hw {
                    let arg = std::f64::consts::TAU * (fy * y as f64 + fx * x as f64)
                        / hw as f64
                        + phase;
                    t.add_assign_at(c, y, x, amp * arg.cos());
                }
            }
        }
    }
    let rms = (t.data().iter().map(|v| v * v).sum::<f64>() / t.data().len() as f64).sqrt();
    t.scale(1.0 / rms.max(1e-12))
}

/// Deterministic synthetic dataset: smooth per-class templates plus pixel
/// noise. Test split holds `max(per_class / 5, 2)` samples per class.
pub fn synth_dataset(
    seed: u64,
    classes: usize,
    per_class: usize,
    channels: usize,
    hw: usize,
) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let templates: Vec<Tensor> =
        (0..classes).map(|_| smooth_template(channels, hw, &mut rng)).collect();

    let draw = |label: usize, rng: &mut ChaCha20Rng| -> Sample {
        let noise = Tensor::standard_normal(channels, hw, hw, rng);
        let image = templates[label].scale(SIGNAL_SCALE).add(&noise.scale(NOISE_SCALE)).unwrap();
        Sample { image, label }
    };

    let mut train = Vec::with_capacity(classes * per_class);
    for label in 0..classes {
        for _ in 0..per_class {
            train.push(draw(label, &mut rng));
        }
    }
    let per_class_test = (per_class / 5).max(2);
    let mut test = Vec::with_capacity(classes * per_class_test);
    for label in 0..classes {
        for _ in 0..per_class_test {
            test.push(draw(label, &mut rng));
        }
    }
    Dataset { train, test, classes, provenance: Provenance::Synthetic { seed } }
}

const CIFAR_DIM: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_DIM * CIFAR_DIM;

fn read_cifar_file(path: &Path) -> Result<Vec<Sample>> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        let offset = bytes.len() - bytes.len() % CIFAR_RECORD;
        return Err(Error::Ingest(format!(
            "{}: truncated record at byte offset {offset} (file length {})",
            path.display(),
            bytes.len()
        )));
    }
    let mut samples = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label > 9 {
            return Err(Error::Ingest(format!(
                "{}: record {i} has label {label}, expected 0..=9",
                path.display()
            )));
        }
        let data: Vec<f64> = rec[1..].iter().map(|&b| b as f64 / 255.0).collect();
        samples.push(Sample {
            image: Tensor::from_vec(3, CIFAR_DIM, CIFAR_DIM, data)?,
            label,
        });
    }
    Ok(samples)
}

/// Load the binary CIFAR-10 batches (`data_batch_{1..5}.bin`,
/// `test_batch.bin`): records of 3073 bytes, one label byte followed by the
/// R, G, B planes of a 32x32 image. Pixels are scaled to [0, 1].
pub fn load_cifar10(dir: &Path) -> Result<Dataset> {
    let mut train = Vec::new();
    for i in 1..=5 {
        train.extend(read_cifar_file(&dir.join(format!("data_batch_{i}.bin")))?);
    }
    let test = read_cifar_file(&dir.join("test_batch.bin"))?;
    Ok(Dataset { train, test, classes: 10, provenance: Provenance::Cifar10 { dir: dir.into() } })
}

/// Standardize each channel to zero mean and unit variance, with statistics
/// computed on the training split.
pub fn normalize_per_channel(ds: &mut Dataset) {
    let channels = match ds.train.first() {
        Some(s) => s.image.channels(),
        None => return,
    };
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    let mut count = 0usize;
    for s in &ds.train {
        for c in 0..channels {
            for &v in s.image.channel(c) {
                mean[c] += v;
            }
        }
        count += s.image.channel(0).len();
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    for s in &ds.train {
        for c in 0..channels {
            for &v in s.image.channel(c) {
                var[c] += (v - mean[c]) * (v - mean[c]);
            }
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / count as f64).sqrt().max(1e-8)).collect();
    let apply = |samples: &mut Vec<Sample>| {
        for s in samples {
            let (ch, h, w) = s.image.shape();
            for c in 0..ch {
                for y in 0..h {
                    for x in 0..w {
                        let v = (s.image.get(c, y, x) - mean[c]) / std[c];
                        s.image.set(c, y, x, v);
                    }
                }
            }
        }
    };
    apply(&mut ds.train);
    apply(&mut ds.test);
}

/// Pad `pad` zero pixels on each side, take a random crop back to the
/// original size, and flip horizontally with probability 1/2.
pub fn augment_pad_crop_flip<R: Rng>(image: &Tensor, pad: usize, rng: &mut R) -> Tensor {
    let (c, h, w) = image.shape();
    let dy = rng.gen_range(0..=2 * pad);
    let dx = rng.gen_range(0..=2 * pad);
    let flip = rng.gen_bool(0.5);
    Tensor::from_fn(c, h, w, |ch, y, x| {
        let x = if flip { w - 1 - x } else { x };
        let (sy, sx) = (y + dy, x + dx);
        if sy < pad || sy >= h + pad || sx < pad || sx >= w + pad {
            0.0
        } else {
            image.get(ch, sy - pad, sx - pad)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn synth_is_deterministic_and_seed_sensitive() {
        let a = synth_dataset(9, 4, 6, 3, 8);
        let b = synth_dataset(9, 4, 6, 3, 8);
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 24);
        assert_eq!(a.test.len(), 4 * 2);
        let c = synth_dataset(10, 4, 6, 3, 8);
        assert_ne!(a.train[0].image, c.train[0].image);
    }

    fn write_fake_batches(dir: &Path, train_records: usize, test_records: usize) {
        let record = |label: u8, fill: u8| {
            let mut rec = vec![fill; CIFAR_RECORD];
            rec[0] = label;
            rec
        };
        for i in 1..=5 {
            let mut f = File::create(dir.join(format!("data_batch_{i}.bin"))).unwrap();
            for r in 0..train_records {
                f.write_all(&record((r % 10) as u8, r as u8)).unwrap();
            }
        }
        let mut f = File::create(dir.join("test_batch.bin")).unwrap();
        for r in 0..test_records {
            f.write_all(&record((r % 10) as u8, 128)).unwrap();
        }
    }

    #[test]
    fn cifar_loader_parses_records() {
        let dir = tempfile::tempdir().unwrap();
        write_fake_batches(dir.path(), 3, 2);
        let ds = load_cifar10(dir.path()).unwrap();
        assert_eq!(ds.train.len(), 15);
        assert_eq!(ds.test.len(), 2);
        assert_eq!(ds.train[1].label, 1);
        assert_eq!(ds.train[1].image.shape(), (3, 32, 32));
        assert!((ds.train[1].image.get(0, 0, 0) - 1.0 / 255.0).abs() < 1e-12);

        // Two loads are bit-identical.
        let again = load_cifar10(dir.path()).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn cifar_loader_names_file_and_offset_on_truncation() {
        let dir = tempfile::tempdir().unwrap();
        write_fake_batches(dir.path(), 2, 1);
        // Truncate batch 3 mid-record.
        let path = dir.path().join("data_batch_3.bin");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..CIFAR_RECORD + 100]).unwrap();
        let err = load_cifar10(dir.path()).unwrap_err().to_string();
        assert!(err.contains("data_batch_3.bin"), "error does not name the file: {err}");
        assert!(err.contains("offset 3073"), "error does not name the offset: {err}");
    }

    #[test]
    fn augmentation_stays_in_bounds_and_identity_without_shift() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let image = Tensor::from_fn(3, 8, 8, |c, y, x| (c * 64 + y * 8 + x) as f64);
        let out = augment_pad_crop_flip(&image, 2, &mut rng);
        assert_eq!(out.shape(), image.shape());
        assert!(out.is_finite());
    }

    #[test]
    fn normalization_zero_means_train_split() {
        let mut ds = synth_dataset(3, 2, 10, 3, 8);
        normalize_per_channel(&mut ds);
        for c in 0..3 {
            let mut mean = 0.0;
            let mut n = 0;
            for s in &ds.train {
                for &v in s.image.channel(c) {
                    mean += v;
                    n += 1;
                }
            }
            assert!((mean / n as f64).abs() < 1e-10);
        }
    }
}
