//! SGD training of toy networks built from the operator family.
//!
//! The loop is single-threaded and deterministic: one seeded generator owns
//! the epoch shuffles, another the augmentation, and all numeric work uses
//! the fixed reduction orders of the operator modules. Training the same
//! configuration twice yields the same history to the bit; training the
//! two-level variant on the simulated cluster yields the same history as the
//! serial path.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::arch::{ArchSpec, Variant};
use crate::error::{Error, Result};

pub mod data;
pub mod net;

pub use data::{load_cifar10, synth_dataset, Dataset, Provenance, Sample};
pub use net::{NetOptions, Network};

/// Optimizer and schedule settings. Defaults: batch size 128, weight decay
/// 5e-4, momentum 0.9, initial rate 0.1.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub batch_size: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub lr: f64,
    /// (epoch, multiplier) pairs; the rate at epoch `e` is `lr` times the
    /// product of the multipliers with epoch <= e.
    pub lr_drops: Vec<(usize, f64)>,
    pub seed: u64,
    /// Pad-and-crop plus horizontal-flip augmentation (training split only).
    pub augment: bool,
    /// Start two-level layers with zero coarse mixing weights, so they
    /// coincide with the group convolution until the mixing weights move.
    pub zero_init_coarse_mix: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            batch_size: 128,
            weight_decay: 5e-4,
            momentum: 0.9,
            epochs: 30,
            lr: 0.1,
            lr_drops: Vec::new(),
            seed: 0,
            augment: false,
            zero_init_coarse_mix: false,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if self.lr < 0.0 || self.lr_drops.iter().any(|&(_, m)| m < 0.0) {
            return Err(Error::config("learning rates must be nonnegative"));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let mut rate = self.lr;
        for &(at, mult) in &self.lr_drops {
            if epoch >= at {
                rate *= mult;
            }
        }
        rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub arch: String,
    pub variant: String,
    pub groups: usize,
    pub seed: u64,
    pub distributed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub meta: RunMeta,
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_loss)
    }

    /// Equality of everything except wall-clock times.
    pub fn numeric_eq(&self, other: &History) -> bool {
        self.meta == other.meta
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss == b.train_loss
                    && a.train_acc == b.train_acc
                    && a.test_acc == b.test_acc
            })
    }

    /// CSV schema: metadata in `# key: value` comment lines, then the header
    /// `epoch,train_loss,train_acc,test_acc,wall_time_s` and one row per
    /// epoch, full double precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("# arch: {}\n", self.meta.arch));
        s.push_str(&format!("# variant: {}\n", self.meta.variant));
        s.push_str(&format!("# groups: {}\n", self.meta.groups));
        s.push_str(&format!("# seed: {}\n", self.meta.seed));
        s.push_str(&format!("# distributed: {}\n", self.meta.distributed));
        s.push_str("epoch,train_loss,train_acc,test_acc,wall_time_s\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.train_acc, e.test_acc, e.wall_time_s
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<History> {
        let mut meta = RunMeta {
            arch: String::new(),
            variant: String::new(),
            groups: 1,
            seed: 0,
            distributed: false,
        };
        let mut epochs = Vec::new();
        let mut saw_header = false;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((key, value)) = rest.split_once(':') {
                    let value = value.trim();
                    match key.trim() {
                        "arch" => meta.arch = value.into(),
                        "variant" => meta.variant = value.into(),
                        "groups" => {
                            meta.groups = value
                                .parse()
                                .map_err(|_| Error::Format(format!("bad groups {value:?}")))?
                        }
                        "seed" => {
                            meta.seed = value
                                .parse()
                                .map_err(|_| Error::Format(format!("bad seed {value:?}")))?
                        }
                        "distributed" => {
                            meta.distributed = value
                                .parse()
                                .map_err(|_| Error::Format(format!("bad distributed {value:?}")))?
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if !saw_header {
                if line != "epoch,train_loss,train_acc,test_acc,wall_time_s" {
                    return Err(Error::Format(format!("unexpected history header {line:?}")));
                }
                saw_header = true;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Format(format!("bad history row: {line:?}")));
            }
            let pf = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Format(format!("bad number {s:?}")))
            };
            epochs.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| Error::Format(format!("bad epoch {:?}", f[0])))?,
                train_loss: pf(f[1])?,
                train_acc: pf(f[2])?,
                test_acc: pf(f[3])?,
                wall_time_s: pf(f[4])?,
            });
        }
        if !saw_header {
            return Err(Error::Format("history CSV has no header row".into()));
        }
        Ok(History { meta, epochs })
    }
}

/// Train `arch` on `data`. With `distributed` set, the two-level layers run
/// on the simulated cluster (defined for the gc and gc2l variants).
pub fn train(arch: &ArchSpec, data: &Dataset, hyper: &Hyper, distributed: bool) -> Result<History> {
    hyper.validate()?;
    if data.train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let options = net::NetOptions {
        distributed,
        zero_init_coarse_mix: hyper.zero_init_coarse_mix,
    };
    let mut net = Network::from_arch(arch, hyper.seed, options)?;
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(hyper.seed);
    shuffle_rng.set_stream(0xDA7A);
    let mut indices: Vec<usize> = (0..data.train.len()).collect();
    let mut epochs = Vec::with_capacity(hyper.epochs);
    let mut step_count = 0usize;

    for epoch in 0..hyper.epochs {
        let start = Instant::now();
        let lr = hyper.learning_rate(epoch);
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in indices.chunks(hyper.batch_size) {
            net.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for (pos, &i) in batch.iter().enumerate() {
                let sample = &data.train[i];
                let image = if hyper.augment {
                    let mut aug_rng = ChaCha20Rng::seed_from_u64(hyper.seed);
                    aug_rng.set_stream(0xA06_0000 ^ ((epoch as u64) << 24 | (step_count + pos) as u64));
                    data::augment_pad_crop_flip(&sample.image, 4, &mut aug_rng)
                } else {
                    sample.image.clone()
                };
                let (loss, ok) = net.train_sample(&image, sample.label, scale)?;
                batch_loss += loss;
                loss_sum += loss;
                if ok {
                    correct += 1;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch, step: step_count });
            }
            net.sgd_step(lr, hyper.momentum, hyper.weight_decay);
            step_count += 1;
        }
        let train_loss = loss_sum / data.train.len() as f64;
        let train_acc = correct as f64 / data.train.len() as f64;
        let (_, test_acc) = net.evaluate(&data.test)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            test_acc,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    debug_assert_eq!(net.comm_parameter_scalars, 0);
    Ok(History {
        meta: RunMeta {
            arch: arch.name.clone(),
            variant: arch.variant.name().into(),
            groups: arch.groups,
            seed: hyper.seed,
            distributed,
        },
        epochs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub variant: String,
    pub groups: usize,
    pub seed: u64,
    pub final_train_loss: f64,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
}

/// Per-run final metrics for a variant comparison, plus aggregation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    /// Runs that failed, as (variant, groups, seed, error text).
    pub failures: Vec<(String, usize, u64, String)>,
}

impl CompareReport {
    pub fn mean_final_loss(&self, variant: &str, groups: usize) -> Option<f64> {
        let losses: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant && r.groups == groups)
            .map(|r| r.final_train_loss)
            .collect();
        if losses.is_empty() {
            None
        } else {
            Some(losses.iter().sum::<f64>() / losses.len() as f64)
        }
    }

    /// CSV schema:
    /// `variant,groups,seed,final_train_loss,final_train_acc,final_test_acc`.
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("variant,groups,seed,final_train_loss,final_train_acc,final_test_acc\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.variant, r.groups, r.seed, r.final_train_loss, r.final_train_acc, r.final_test_acc
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<CompareReport> {
        let mut rows = Vec::new();
        let mut saw_header = false;
        for line in text.lines() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            if !saw_header {
                saw_header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Format(format!("bad compare row: {line:?}")));
            }
            let pf = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Format(format!("bad number {s:?}")))
            };
            rows.push(CompareRow {
                variant: f[0].into(),
                groups: f[1].parse().map_err(|_| Error::Format(format!("bad groups {:?}", f[1])))?,
                seed: f[2].parse().map_err(|_| Error::Format(format!("bad seed {:?}", f[2])))?,
                final_train_loss: pf(f[3])?,
                final_train_acc: pf(f[4])?,
                final_test_acc: pf(f[5])?,
            });
        }
        Ok(CompareReport { rows, failures: Vec::new() })
    }
}

/// Train SC, GC, GC-2L, and Shuffle toy networks at each group count with
/// identical seeds and report the final metrics. SC does not depend on the
/// group count and runs once per seed. Failed runs are recorded and the
/// comparison proceeds on the survivors.
pub fn compare_variants(
    depth: usize,
    width: usize,
    data: &Dataset,
    hyper: &Hyper,
    groups: &[usize],
    seeds: &[u64],
) -> Result<CompareReport> {
    if seeds.is_empty() {
        return Err(Error::config("variant comparison needs at least one seed"));
    }
    let mut report = CompareReport::default();
    let run = |variant: Variant, n: usize, seed: u64, report: &mut CompareReport| {
        let mut hyper = hyper.clone();
        hyper.seed = seed;
        let outcome = crate::arch::build_toy_arch(depth, width, variant, n)
            .and_then(|arch| train(&arch, data, &hyper, false));
        match outcome {
            Ok(history) => {
                if let Some(last) = history.epochs.last() {
                    report.rows.push(CompareRow {
                        variant: variant.name().into(),
                        groups: n,
                        seed,
                        final_train_loss: last.train_loss,
                        final_train_acc: last.train_acc,
                        final_test_acc: last.test_acc,
                    });
                }
            }
            Err(e) => report.failures.push((variant.name().into(), n, seed, e.to_string())),
        }
    };
    for &seed in seeds {
        run(Variant::Sc, 1, seed, &mut report);
        for &n in groups {
            for variant in [Variant::Gc, Variant::Gc2l, Variant::Shuffle] {
                run(variant, n, seed, &mut report);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::build_toy_arch;

    #[test]
    fn learning_rate_schedule() {
        let hyper = Hyper { lr: 0.1, lr_drops: vec![(10, 0.1), (20, 0.1)], ..Hyper::default() };
        assert_eq!(hyper.learning_rate(0), 0.1);
        assert_eq!(hyper.learning_rate(10), 0.1 * 0.1);
        assert_eq!(hyper.learning_rate(25), 0.1 * 0.1 * 0.1);
    }

    #[test]
    fn hyper_validation() {
        let mut h = Hyper { momentum: 1.0, ..Hyper::default() };
        assert!(h.validate().is_err());
        h.momentum = 0.9;
        h.batch_size = 0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn history_csv_roundtrip() {
        let h = History {
            meta: RunMeta {
                arch: "toy-3x16".into(),
                variant: "gc2l".into(),
                groups: 4,
                seed: 9,
                distributed: true,
            },
            epochs: vec![
                EpochRecord {
                    epoch: 0,
                    train_loss: 2.2971842570167,
                    train_acc: 0.1,
                    test_acc: 0.125,
                    wall_time_s: 0.523,
                },
                EpochRecord {
                    epoch: 1,
                    train_loss: 1.7,
                    train_acc: 0.4,
                    test_acc: 0.3875,
                    wall_time_s: 0.511,
                },
            ],
        };
        let csv = h.to_csv();
        assert_eq!(History::from_csv(&csv).unwrap(), h);
    }

    #[test]
    fn compare_csv_roundtrip() {
        let r = CompareReport {
            rows: vec![CompareRow {
                variant: "gc".into(),
                groups: 4,
                seed: 1,
                final_train_loss: 0.75,
                final_train_acc: 0.8,
                final_test_acc: 0.7,
            }],
            failures: Vec::new(),
        };
        assert_eq!(CompareReport::from_csv(&r.to_csv()).unwrap(), r);
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let arch = build_toy_arch(2, 8, Variant::Sc, 1).unwrap();
        let data = synth_dataset(1, 4, 8, 3, 8);
        let hyper = Hyper {
            epochs: 3,
            lr: 0.0,
            batch_size: 16,
            seed: 2,
            ..Hyper::default()
        };
        let h = train(&arch, &data, &hyper, false).unwrap();
        assert_eq!(h.epochs.len(), 3);
        // Parameters never move; the per-epoch means may differ only by the
        // summation order of the shuffled samples.
        let (l0, l2) = (h.epochs[0].train_loss, h.epochs[2].train_loss);
        assert!((l0 - l2).abs() <= 1e-12 * l0.abs());
        assert_eq!(h.epochs[0].train_acc, h.epochs[2].train_acc);
    }
}
