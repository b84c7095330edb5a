//! `t2lc`: command-line interface to the two-level group convolution
//! toolkit. Subcommands: gradcheck, verify, paramcount, simulate, train,
//! compare.
//!
//! Exit codes: 0 on success, 1 on check failures or runtime errors, 2 on
//! usage errors. Every run prints a header with the version, the seed, and
//! the effective configuration (config file merged with flags).

mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use config::{parse_drops, parse_list, ConfigMap};
use t2lc_core::arch::{model_param_count, preset, ParamCount, Variant};
use t2lc_core::checks::{outcomes_to_csv, run_suite, DEFAULT_CHECK_SEED};
use t2lc_core::conv::{GroupSpec, TwoLevelParams};
use t2lc_core::grad::check::{finite_diff_check, CheckOp, GRAD_TOLERANCE};
use t2lc_core::sim::Cluster;
use t2lc_core::train::{
    self, compare_variants, load_cifar10, synth_dataset, Dataset, Hyper,
};
use t2lc_core::Tensor;

/// Error that should surface as a usage problem (exit code 2).
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Table,
    Csv,
}

#[derive(Parser)]
#[command(name = "t2lc", version, about = "Two-level group convolution toolkit")]
struct Cli {
    /// Output format for tabular results.
    #[arg(long, global = true, value_enum, default_value = "table")]
    format: OutputFormat,
    /// Flat key=value config file; flags override file entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference check of one operator's hand-derived gradients.
    Gradcheck {
        /// Operator name (conv2d, conv1x1, group_conv, coarse_restrict,
        /// coarse_proto, coarse_combined, two_level_proto, two_level,
        /// channel_shuffle).
        #[arg(long)]
        op: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Central-difference step.
        #[arg(long)]
        h: Option<f64>,
    },
    /// Run an invariant suite and report each check.
    Verify {
        /// algebra, gradients, distributed, or all.
        #[arg(long)]
        suite: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parameter accounting for an architecture under a convolution variant.
    Paramcount {
        /// wideresnet-<l>-<w>, mobilenetv2, or toy[-<depth>x<width>].
        #[arg(long)]
        arch: Option<String>,
        /// sc, gc, gc2l, or shuffle.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        groups: Option<usize>,
        /// Print one row per layer in addition to the summary.
        #[arg(long)]
        per_layer: bool,
    },
    /// Simulate one distributed two-level forward and report communication.
    Simulate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        groups: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        /// Spatial height and width of the input.
        #[arg(long)]
        hw: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Log every message (phase, sender, receiver, kind, scalars).
        #[arg(long)]
        trace: bool,
    },
    /// Train a toy network and write the per-epoch history as CSV.
    Train {
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        groups: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Learning-rate drops as epoch:multiplier pairs, e.g. 22:0.1,40:0.1.
        #[arg(long)]
        lr_drops: Option<String>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        weight_decay: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// `synth` or `cifar10:<dir>`.
        #[arg(long)]
        data: Option<String>,
        /// Synthetic samples per class.
        #[arg(long)]
        per_class: Option<usize>,
        /// Seed for the synthetic dataset (independent of the run seed).
        #[arg(long)]
        data_seed: Option<u64>,
        /// Run two-level layers on the simulated worker cluster.
        #[arg(long)]
        distributed: bool,
        /// Pad-crop-flip augmentation of the training split.
        #[arg(long)]
        augment: bool,
        /// Start two-level layers with zero coarse mixing weights.
        #[arg(long)]
        zero_coarse_init: bool,
        /// Output CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train all variants over group counts and seeds; write final metrics.
    Compare {
        /// Comma-separated group counts, e.g. 1,2,4,8.
        #[arg(long)]
        groups: Option<String>,
        /// Comma-separated seeds, e.g. 1,2,3.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lr_drops: Option<String>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        data_seed: Option<u64>,
        #[arg(long)]
        zero_coarse_init: bool,
        /// Output CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_header(seed: Option<u64>, effective: &str) {
    println!("# t2lc {} seed={} config: {}",
        env!("CARGO_PKG_VERSION"),
        seed.map_or("-".into(), |s| s.to_string()),
        if effective.is_empty() { "-" } else { effective });
}

/// Four significant digits for table output.
fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (3 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            if err.downcast_ref::<Usage>().is_some() {
                eprintln!("usage error: {err}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {err:#}");
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = match &cli.config {
        Some(path) => ConfigMap::load(path).map_err(|e| usage(format!("{e:#}")))?,
        None => ConfigMap::default(),
    };
    match cli.command {
        Command::Gradcheck { op, seed, h } => gradcheck(&cfg, cli.format, op, seed, h),
        Command::Verify { suite, seed } => verify(&cfg, cli.format, suite, seed),
        Command::Paramcount { arch, variant, groups, per_layer } => {
            paramcount(&cfg, cli.format, arch, variant, groups, per_layer)
        }
        Command::Simulate { n, m, groups, d, hw, seed, trace } => {
            simulate(&cfg, cli.format, n, m, groups, d, hw, seed, trace)
        }
        Command::Train {
            arch, variant, groups, epochs, batch_size, lr, lr_drops, momentum, weight_decay,
            seed, data, per_class, data_seed, distributed, augment, zero_coarse_init, out,
        } => {
            let spec = TrainSpec {
                arch, variant, groups, epochs, batch_size, lr, lr_drops, momentum,
                weight_decay, seed, data, per_class, data_seed, distributed, augment,
                zero_coarse_init, out,
            };
            run_train(&cfg, cli.format, spec)
        }
        Command::Compare {
            groups, seeds, depth, width, epochs, batch_size, lr, lr_drops, per_class,
            data_seed, zero_coarse_init, out,
        } => run_compare(
            &cfg, cli.format, groups, seeds, depth, width, epochs, batch_size, lr, lr_drops,
            per_class, data_seed, zero_coarse_init, out,
        ),
    }
}

fn gradcheck(
    cfg: &ConfigMap,
    format: OutputFormat,
    op: Option<String>,
    seed: Option<u64>,
    h: Option<f64>,
) -> Result<ExitCode> {
    let op_name = cfg.resolve(op, "op", "two_level".to_string())?;
    let op = CheckOp::parse(&op_name).map_err(|e| usage(e.to_string()))?;
    let seed = cfg.resolve_seed(seed, DEFAULT_CHECK_SEED)?;
    let h = cfg.resolve(h, "h", 1e-6)?;
    if h <= 0.0 {
        return Err(usage("step h must be positive"));
    }
    print_header(Some(seed), &cfg.echo(&[("op", op_name.clone()), ("h", h.to_string())]));
    let err = finite_diff_check(op, seed, h)?;
    let pass = err < GRAD_TOLERANCE;
    match format {
        OutputFormat::Table => {
            println!(
                "{} {}: max rel err {:.3e} (threshold {:.0e})",
                if pass { "[PASS]" } else { "[FAIL]" },
                op.name(),
                err,
                GRAD_TOLERANCE
            );
        }
        OutputFormat::Csv => {
            println!("op,seed,h,max_rel_err,pass");
            println!("{},{seed},{h},{err},{pass}", op.name());
        }
    }
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn verify(
    cfg: &ConfigMap,
    format: OutputFormat,
    suite: Option<String>,
    seed: Option<u64>,
) -> Result<ExitCode> {
    let suite = cfg.resolve(suite, "suite", "all".to_string())?;
    let seed = cfg.resolve_seed(seed, DEFAULT_CHECK_SEED)?;
    print_header(Some(seed), &cfg.echo(&[("suite", suite.clone())]));
    let outcomes = run_suite(&suite, seed).map_err(|e| usage(e.to_string()))?;
    let mut all_pass = true;
    match format {
        OutputFormat::Table => {
            for o in &outcomes {
                all_pass &= o.pass;
                println!(
                    "{} {:<40} metric {:>12} threshold {:>8}",
                    if o.pass { "[PASS]" } else { "[FAIL]" },
                    o.name,
                    format!("{:.3e}", o.metric),
                    format!("{:.0e}", o.threshold)
                );
            }
            println!(
                "{} of {} checks passed",
                outcomes.iter().filter(|o| o.pass).count(),
                outcomes.len()
            );
        }
        OutputFormat::Csv => {
            all_pass = outcomes.iter().all(|o| o.pass);
            print!("{}", outcomes_to_csv(&outcomes));
        }
    }
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn paramcount(
    cfg: &ConfigMap,
    format: OutputFormat,
    arch: Option<String>,
    variant: Option<String>,
    groups: Option<usize>,
    per_layer: bool,
) -> Result<ExitCode> {
    let arch_name = cfg.resolve(arch, "arch", "wideresnet-28-10".to_string())?;
    let variant_name = cfg.resolve(variant, "variant", "sc".to_string())?;
    let groups = cfg.resolve(groups, "groups", 1usize)?;
    let arch = preset(&arch_name).map_err(|e| usage(e.to_string()))?;
    let variant = Variant::parse(&variant_name).map_err(|e| usage(e.to_string()))?;
    print_header(
        None,
        &cfg.echo(&[
            ("arch", arch_name.clone()),
            ("variant", variant_name.clone()),
            ("groups", groups.to_string()),
        ]),
    );
    let count: ParamCount = model_param_count(&arch, variant, groups)?;
    match format {
        OutputFormat::Csv => {
            if per_layer {
                print!("{}", count.to_csv());
            } else {
                println!("layer,local,coarse_restrict,coarse_mix,batch_norm,fully_connected,other,total,per_processor");
                let r = &count.roles;
                println!(
                    "total,{},{},{},{},{},{},{},{}",
                    r.local, r.coarse_restrict, r.coarse_mix, r.batch_norm, r.fully_connected,
                    r.other, count.total, count.per_processor
                );
            }
        }
        OutputFormat::Table => {
            if per_layer {
                println!("{:<16} {:>12} {:>14}", "layer", "total", "per-processor");
                for l in &count.layers {
                    println!("{:<16} {:>12} {:>14}", l.label, l.total, sig4(l.per_processor));
                }
            }
            println!(
                "{} / {} / groups {}: total {} ({}M), per-processor {} ({}M)",
                arch_name,
                variant.name(),
                groups,
                count.total,
                sig4(count.total as f64 / 1e6),
                sig4(count.per_processor),
                sig4(count.per_processor / 1e6)
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    cfg: &ConfigMap,
    format: OutputFormat,
    n: Option<usize>,
    m: Option<usize>,
    groups: Option<usize>,
    d: Option<usize>,
    hw: Option<usize>,
    seed: Option<u64>,
    trace: bool,
) -> Result<ExitCode> {
    let n = cfg.resolve(n, "n", 8usize)?;
    let m = cfg.resolve(m, "m", 12usize)?;
    let groups = cfg.resolve(groups, "groups", 4usize)?;
    let d = cfg.resolve(d, "d", 3usize)?;
    let hw = cfg.resolve(hw, "hw", 5usize)?;
    let seed = cfg.resolve_seed(seed, DEFAULT_CHECK_SEED)?;
    let spec = GroupSpec::new(n, m, groups, d).map_err(|e| usage(e.to_string()))?;
    print_header(
        Some(seed),
        &cfg.echo(&[
            ("n", n.to_string()),
            ("m", m.to_string()),
            ("groups", groups.to_string()),
            ("d", d.to_string()),
            ("hw", hw.to_string()),
        ]),
    );

    let params = TwoLevelParams::seeded(&spec, seed)?;
    let x = Tensor::seeded_normal(n, hw, hw, seed ^ 0x1);
    let mut cluster = Cluster::new(spec, &params)?;
    let (_, report) = cluster.forward(&x)?;

    if trace {
        for msg in cluster.trace() {
            println!(
                "trace {} {} -> {} {} {} scalars",
                msg.phase.name(),
                msg.sender,
                msg.receiver,
                match msg.kind {
                    t2lc_core::sim::PayloadKind::RepresentativeChannel => "representative_channel",
                    t2lc_core::sim::PayloadKind::Parameter => "parameter",
                },
                msg.scalars()
            );
        }
    }
    match format {
        OutputFormat::Csv => print!("{}", report.to_csv()),
        OutputFormat::Table => {
            println!("{:<16} {:>9} {:>19} {:>18}", "phase", "messages", "activation_scalars", "parameter_scalars");
            for p in &report.phases {
                println!(
                    "{:<16} {:>9} {:>19} {:>18}",
                    p.phase.name(),
                    p.messages,
                    p.activation_scalars,
                    p.parameter_scalars
                );
            }
            println!(
                "{:<16} {:>9} {:>19} {:>18}",
                "total", report.messages, report.activation_scalars, report.parameter_scalars
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

struct TrainSpec {
    arch: Option<String>,
    variant: Option<String>,
    groups: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    lr_drops: Option<String>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    seed: Option<u64>,
    data: Option<String>,
    per_class: Option<usize>,
    data_seed: Option<u64>,
    distributed: bool,
    augment: bool,
    zero_coarse_init: bool,
    out: Option<PathBuf>,
}

fn load_data(spec: &str, per_class: usize, data_seed: u64, augment: bool) -> Result<(Dataset, bool)> {
    if spec == "synth" {
        return Ok((synth_dataset(data_seed, 10, per_class, 3, 8), false));
    }
    if let Some(dir) = spec.strip_prefix("cifar10:") {
        let ds = load_cifar10(std::path::Path::new(dir))?;
        return Ok((ds, augment));
    }
    Err(usage(format!("bad --data {spec:?}; expected synth or cifar10:<dir>")))
}

fn run_train(cfg: &ConfigMap, format: OutputFormat, spec: TrainSpec) -> Result<ExitCode> {
    let arch_name = cfg.resolve(spec.arch, "arch", "toy".to_string())?;
    let variant_name = cfg.resolve(spec.variant, "variant", "gc2l".to_string())?;
    let groups = cfg.resolve(spec.groups, "groups", 4usize)?;
    let variant = Variant::parse(&variant_name).map_err(|e| usage(e.to_string()))?;
    let base = preset(&arch_name).map_err(|e| usage(e.to_string()))?;
    let mut arch = base;
    arch.variant = variant;
    arch.groups = groups;

    let drops_raw = cfg.resolve(spec.lr_drops, "lr_drops", String::new())?;
    let hyper = Hyper {
        batch_size: cfg.resolve(spec.batch_size, "batch_size", 128usize)?,
        weight_decay: cfg.resolve(spec.weight_decay, "weight_decay", 5e-4)?,
        momentum: cfg.resolve(spec.momentum, "momentum", 0.9)?,
        epochs: cfg.resolve(spec.epochs, "epochs", 30usize)?,
        lr: cfg.resolve(spec.lr, "lr", 0.1)?,
        lr_drops: parse_drops(&drops_raw).map_err(|e| usage(e.to_string()))?,
        seed: cfg.resolve_seed(spec.seed, 1)?,
        augment: spec.augment || cfg.resolve(None, "augment", false)?,
        zero_init_coarse_mix: spec.zero_coarse_init
            || cfg.resolve(None, "zero_coarse_init", false)?,
    };
    let distributed = spec.distributed || cfg.resolve(None, "distributed", false)?;
    let data_spec = cfg.resolve(spec.data, "data", "synth".to_string())?;
    let per_class = cfg.resolve(spec.per_class, "per_class", 150usize)?;
    let data_seed = cfg.resolve(spec.data_seed, "data_seed", 2024u64)?;

    print_header(
        Some(hyper.seed),
        &cfg.echo(&[
            ("arch", arch_name.clone()),
            ("variant", variant_name.clone()),
            ("groups", groups.to_string()),
            ("epochs", hyper.epochs.to_string()),
            ("batch_size", hyper.batch_size.to_string()),
            ("lr", hyper.lr.to_string()),
            ("momentum", hyper.momentum.to_string()),
            ("weight_decay", hyper.weight_decay.to_string()),
            ("data", data_spec.clone()),
            ("distributed", distributed.to_string()),
        ]),
    );

    let (mut data, augment) = load_data(&data_spec, per_class, data_seed, hyper.augment)?;
    let mut hyper = hyper;
    hyper.augment = augment;
    if matches!(data.provenance, train::Provenance::Cifar10 { .. }) {
        train::data::normalize_per_channel(&mut data);
    }

    let history = train::train(&arch, &data, &hyper, distributed)?;
    let csv = history.to_csv();
    if let Some(path) = &spec.out {
        std::fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    }
    match format {
        OutputFormat::Csv => print!("{csv}"),
        OutputFormat::Table => {
            println!("{:<7} {:>12} {:>11} {:>10} {:>9}", "epoch", "train_loss", "train_acc", "test_acc", "time_s");
            for e in &history.epochs {
                println!(
                    "{:<7} {:>12} {:>11} {:>10} {:>9}",
                    e.epoch,
                    sig4(e.train_loss),
                    sig4(e.train_acc),
                    sig4(e.test_acc),
                    sig4(e.wall_time_s)
                );
            }
            if let Some(path) = &spec.out {
                println!("history written to {}", path.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn run_compare(
    cfg: &ConfigMap,
    format: OutputFormat,
    groups: Option<String>,
    seeds: Option<String>,
    depth: Option<usize>,
    width: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    lr_drops: Option<String>,
    per_class: Option<usize>,
    data_seed: Option<u64>,
    zero_coarse_init: bool,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let groups_raw = cfg.resolve(groups, "groups", "4".to_string())?;
    let seeds_raw = cfg.resolve(seeds, "seeds", "1,2,3".to_string())?;
    let groups: Vec<usize> = parse_list(&groups_raw, "groups").map_err(|e| usage(e.to_string()))?;
    let seeds: Vec<u64> = parse_list(&seeds_raw, "seeds").map_err(|e| usage(e.to_string()))?;
    let depth = cfg.resolve(depth, "depth", 3usize)?;
    let width = cfg.resolve(width, "width", 16usize)?;
    let drops_raw = cfg.resolve(lr_drops, "lr_drops", "22:0.1".to_string())?;
    let hyper = Hyper {
        epochs: cfg.resolve(epochs, "epochs", 30usize)?,
        batch_size: cfg.resolve(batch_size, "batch_size", 32usize)?,
        lr: cfg.resolve(lr, "lr", 0.03)?,
        lr_drops: parse_drops(&drops_raw).map_err(|e| usage(e.to_string()))?,
        zero_init_coarse_mix: zero_coarse_init || cfg.resolve(None, "zero_coarse_init", true)?,
        ..Hyper::default()
    };
    let per_class = cfg.resolve(per_class, "per_class", 150usize)?;
    let data_seed = cfg.resolve(data_seed, "data_seed", 2024u64)?;
    print_header(
        None,
        &cfg.echo(&[
            ("groups", groups_raw.clone()),
            ("seeds", seeds_raw.clone()),
            ("depth", depth.to_string()),
            ("width", width.to_string()),
            ("epochs", hyper.epochs.to_string()),
            ("per_class", per_class.to_string()),
        ]),
    );

    let data = synth_dataset(data_seed, 10, per_class, 3, 8);
    let report = compare_variants(depth, width, &data, &hyper, &groups, &seeds)?;
    for (variant, n, seed, err) in &report.failures {
        eprintln!("run failed: variant {variant} groups {n} seed {seed}: {err}");
    }
    let csv = report.to_csv();
    if let Some(path) = &out {
        std::fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    }
    match format {
        OutputFormat::Csv => print!("{csv}"),
        OutputFormat::Table => {
            println!("{:<9} {:>7} {:>16} {:>15}", "variant", "groups", "mean_final_loss", "mean_test_acc");
            let mut combos: Vec<(String, usize)> = vec![("sc".into(), 1)];
            for &n in &groups {
                for v in ["gc", "gc2l", "shuffle"] {
                    combos.push((v.into(), n));
                }
            }
            for (variant, n) in combos {
                if let Some(mean_loss) = report.mean_final_loss(&variant, n) {
                    let accs: Vec<f64> = report
                        .rows
                        .iter()
                        .filter(|r| r.variant == variant && r.groups == n)
                        .map(|r| r.final_test_acc)
                        .collect();
                    let mean_acc = accs.iter().sum::<f64>() / accs.len() as f64;
                    println!(
                        "{variant:<9} {n:>7} {:>16} {:>15}",
                        sig4(mean_loss),
                        sig4(mean_acc)
                    );
                }
            }
            if let Some(path) = &out {
                println!("rows written to {}", path.display());
            }
        }
    }
    Ok(if report.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
