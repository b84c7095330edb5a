//! Training-harness integration tests: learnability of the synthetic task,
//! determinism, containment of the group variant in the two-level family,
//! and serial/distributed training equivalence.

#![allow(clippy::needless_range_loop)]

use t2lc_core::arch::{build_toy_arch, Variant};
use t2lc_core::train::{synth_dataset, train, Dataset, Hyper, NetOptions, Network};

fn quick_hyper(seed: u64, epochs: usize) -> Hyper {
    Hyper {
        epochs,
        lr: 0.03,
        batch_size: 32,
        seed,
        zero_init_coarse_mix: true,
        ..Hyper::default()
    }
}

/// Ridge-regularized least squares on raw pixels: an independent check that
/// the synthetic task is linearly learnable before any network trains on it.
mod linear_oracle {
    use super::Dataset;

    /// Solve (A + lambda I) x = b for symmetric positive definite A by
    /// Gaussian elimination with partial pivoting.
    fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let n = a.len();
        let rhs = b[0].len();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            b.swap(col, pivot);
            let diag = a[col][col];
            assert!(diag.abs() > 1e-12, "singular normal matrix");
            for row in col + 1..n {
                let f = a[row][col] / diag;
                for k in col..n {
                    let v = a[col][k];
                    a[row][k] -= f * v;
                }
                for k in 0..rhs {
                    let v = b[col][k];
                    b[row][k] -= f * v;
                }
            }
        }
        let mut x = vec![vec![0.0; rhs]; n];
        for col in (0..n).rev() {
            for k in 0..rhs {
                let mut acc = b[col][k];
                for j in col + 1..n {
                    acc -= a[col][j] * x[j][k];
                }
                x[col][k] = acc / a[col][col];
            }
        }
        x
    }

    pub fn train_accuracy(data: &Dataset) -> f64 {
        let feat = |img: &t2lc_core::Tensor| -> Vec<f64> {
            let mut f = img.data().to_vec();
            f.push(1.0);
            f
        };
        let dim = data.train[0].image.data().len() + 1;
        let mut ata = vec![vec![0.0; dim]; dim];
        let mut aty = vec![vec![0.0; data.classes]; dim];
        for s in &data.train {
            let f = feat(&s.image);
            for i in 0..dim {
                for j in i..dim {
                    ata[i][j] += f[i] * f[j];
                }
                aty[i][s.label] += f[i];
            }
        }
        for i in 0..dim {
            for j in 0..i {
                ata[i][j] = ata[j][i];
            }
            ata[i][i] += 1e-3; // ridge
        }
        let w = solve(ata, aty);
        let mut correct = 0;
        for s in &data.train {
            let f = feat(&s.image);
            let mut best = (f64::NEG_INFINITY, 0);
            for c in 0..data.classes {
                let score: f64 = f.iter().zip(w.iter().map(|row| row[c])).map(|(x, wc)| x * wc).sum();
                if score > best.0 {
                    best = (score, c);
                }
            }
            if best.1 == s.label {
                correct += 1;
            }
        }
        correct as f64 / data.train.len() as f64
    }
}

#[test]
fn synthetic_task_is_linearly_learnable() {
    let data = synth_dataset(2024, 10, 40, 3, 8);
    let acc = linear_oracle::train_accuracy(&data);
    assert!(acc > 0.8, "linear oracle reaches only {acc:.3} train accuracy");
}

#[test]
fn smoke_run_halves_the_loss() {
    // Reference run for this configuration reaches 0.61 from 2.38; the 50%
    // bound leaves ample slack and guards against optimizer regressions.
    let arch = build_toy_arch(3, 16, Variant::Sc, 1).unwrap();
    let data = synth_dataset(5, 10, 60, 3, 8);
    let hyper = Hyper {
        epochs: 30,
        lr: 0.05,
        batch_size: 32,
        seed: 1,
        lr_drops: vec![(22, 0.1)],
        ..Hyper::default()
    };
    let h = train(&arch, &data, &hyper, false).unwrap();
    let first = h.epochs.first().unwrap().train_loss;
    let last = h.epochs.last().unwrap().train_loss;
    assert!(
        last < 0.5 * first,
        "expected at least a 50% loss reduction, got {first:.4} -> {last:.4}"
    );
}

#[test]
fn training_is_deterministic() {
    let arch = build_toy_arch(2, 8, Variant::Gc2l, 2).unwrap();
    let data = synth_dataset(6, 6, 10, 3, 8);
    let a = train(&arch, &data, &quick_hyper(3, 4), false).unwrap();
    let b = train(&arch, &data, &quick_hyper(3, 4), false).unwrap();
    assert!(a.numeric_eq(&b), "two identical runs diverged");
}

#[test]
fn gc_checkpoint_embeds_into_gc2l_with_identical_loss() {
    // Train a group-convolution network briefly, wrap its kernels as a
    // two-level network with zero coarse part, and check the training-set
    // loss is reproduced exactly before any further step.
    let arch = build_toy_arch(3, 16, Variant::Gc, 4).unwrap();
    let data = synth_dataset(7, 10, 12, 3, 8);
    let hyper = quick_hyper(2, 3);
    // Train by driving the network directly so we keep the final state.
    let mut net = Network::from_arch(&arch, hyper.seed, NetOptions::default()).unwrap();
    for epoch in 0..hyper.epochs {
        let lr = hyper.learning_rate(epoch);
        for batch in data.train.chunks(hyper.batch_size) {
            net.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for s in batch {
                net.train_sample(&s.image, s.label, scale).unwrap();
            }
            net.sgd_step(lr, hyper.momentum, hyper.weight_decay);
        }
    }
    let (gc_loss, gc_acc) = net.evaluate(&data.train).unwrap();
    let mut embedded = net.embed_group_as_two_level().unwrap();
    let (tl_loss, tl_acc) = embedded.evaluate(&data.train).unwrap();
    assert_eq!(gc_loss, tl_loss, "containment must reproduce the loss exactly");
    assert_eq!(gc_acc, tl_acc);
}

#[test]
fn serial_and_distributed_training_agree_bitwise() {
    let arch = build_toy_arch(3, 16, Variant::Gc2l, 4).unwrap();
    let data = synth_dataset(8, 8, 10, 3, 8);
    let hyper = quick_hyper(4, 3);
    let serial = train(&arch, &data, &hyper, false).unwrap();
    let distributed = train(&arch, &data, &hyper, true).unwrap();
    assert_eq!(serial.epochs.len(), distributed.epochs.len());
    for (a, b) in serial.epochs.iter().zip(&distributed.epochs) {
        assert_eq!(a.train_loss, b.train_loss, "epoch {} loss differs", a.epoch);
        assert_eq!(a.train_acc, b.train_acc);
        assert_eq!(a.test_acc, b.test_acc);
    }
}

#[test]
fn exploding_run_reports_divergence_with_location() {
    let arch = build_toy_arch(3, 16, Variant::Sc, 1).unwrap();
    let data = synth_dataset(11, 10, 10, 3, 8);
    let hyper = Hyper { epochs: 50, lr: 1e4, batch_size: 16, seed: 1, ..Hyper::default() };
    match train(&arch, &data, &hyper, false) {
        Err(t2lc_core::Error::Divergence { .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn distributed_training_is_rejected_for_ungrouped_variants() {
    let arch = build_toy_arch(2, 8, Variant::Sc, 1).unwrap();
    let data = synth_dataset(9, 4, 6, 3, 8);
    assert!(train(&arch, &data, &quick_hyper(1, 1), true).is_err());
}

#[test]
fn gc_and_sc_coincide_at_one_group() {
    let data = synth_dataset(10, 6, 8, 3, 8);
    let hyper = quick_hyper(5, 3);
    let sc = train(&build_toy_arch(2, 8, Variant::Sc, 1).unwrap(), &data, &hyper, false).unwrap();
    let gc = train(&build_toy_arch(2, 8, Variant::Gc, 1).unwrap(), &data, &hyper, false).unwrap();
    for (a, b) in sc.epochs.iter().zip(&gc.epochs) {
        assert_eq!(a.train_loss, b.train_loss);
    }
}
