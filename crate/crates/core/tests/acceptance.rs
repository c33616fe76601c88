//! Acceptance suite. Every test prints one `PASS`/`FAIL` line for its
//! criterion on stderr (uncaptured) and then asserts it.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use kunet::cli::{run_one, ConfigLayer, ExperimentConfig, RunSpec};
use kunet::data::{generate, SeriesKind};
use kunet::math::{Matrix, Rng};
use kunet::model::{KUNet, KUNetConfig, KernelKind};
use kunet::optim::{
    adam_step, level_weight, weighted_grad_identity_check, AdamParams, Optimizer, OptimizerConfig,
    OptimizerKind, WeightSchedule,
};
use kunet::train::RunRecord;

fn report(id: u32, title: &str, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!(
        "[acceptance] {id:>2} {verdict} {title}: {}\n",
        detail.as_ref()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

/// The long-running criteria take turns so each one's runtime bound is
/// measured against a core of its own.
fn heavy_slot() -> MutexGuard<'static, ()> {
    static SLOT: Mutex<()> = Mutex::new(());
    SLOT.lock().unwrap_or_else(|e| e.into_inner())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn net_config(lookback: usize, unit_len: usize, multiples: &[usize], hidden: usize) -> KUNetConfig {
    KUNetConfig {
        lookback,
        horizon: lookback,
        unit_len,
        multiples: multiples.to_vec(),
        hidden_dim: hidden,
    }
}

fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
    Rng::seed_from(seed).normal(rows, cols, 0.0, 1.0)
}

// 1 ------------------------------------------------------------------------

#[test]
fn c01_redundancy_constant() {
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_kunet"))
        .args([
            "analyze",
            "--lookback",
            "512",
            "--horizon",
            "512",
            "--unit-len",
            "8",
        ])
        .output()
        .expect("spawn kunet");
    let elapsed = started.elapsed();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let printed = stdout
        .lines()
        .find_map(|l| l.strip_prefix("redundancy "))
        .unwrap_or("<missing>")
        .to_string();
    // 1 - 8/512 = 504/512, exactly representable.
    let expected = format!("{}", 504.0 / 512.0);
    let pass = out.status.success() && printed == expected && elapsed < Duration::from_secs(1);
    report(
        1,
        "redundancy constant",
        pass,
        format!("printed {printed} (expected {expected}) in {elapsed:.2?}"),
    );
    assert!(pass, "{stdout}");
}

// 2 ------------------------------------------------------------------------

#[test]
fn c02_weight_schedule() {
    let mut failures = Vec::new();
    let full = WeightSchedule::exponential(8.0, 3).unwrap();
    if full.weights() != [1.0, 8.0, 64.0] {
        failures.push(format!("S=8 depth 3 gave {:?}", full.weights()));
    }
    for base in [4u64, 6, 8] {
        for depth in 1..=5usize {
            let sched = WeightSchedule::exponential(base as f64, depth).unwrap();
            let w = sched.weights();
            let integer_powers: Vec<f64> = (0..depth as u32).map(|e| base.pow(e) as f64).collect();
            if w != integer_powers.as_slice() {
                failures.push(format!("S={base} depth {depth}: {w:?}"));
            }
            for l in 1..depth {
                if w[l] != base as f64 * w[l - 1] {
                    failures.push(format!("recurrence broken at S={base} level {l}"));
                }
            }
            for level in 1..=depth {
                if level_weight(level, base as f64).unwrap() != w[level - 1] {
                    failures.push(format!("level_weight({level}, {base}) disagrees"));
                }
            }
        }
    }
    let pass = failures.is_empty();
    report(
        2,
        "weight schedule",
        pass,
        if pass {
            "{1, 8, 64} at S=8; recurrence exact for S in {4, 6, 8}, depth <= 5".into()
        } else {
            failures.join("; ")
        },
    );
    assert!(pass);
}

// 3 ------------------------------------------------------------------------

fn observed_counts(cfg: KUNetConfig) -> Vec<u64> {
    let lookback = cfg.lookback;
    let mut net = KUNet::build(cfg, KernelKind::Mlp, &mut Rng::seed_from(3)).unwrap();
    net.reset_applications();
    net.forward(&vec![0.5; lookback]).unwrap();
    net.recorded_applications().values().copied().collect()
}

/// Patches per level by direct enumeration of the patch start offsets.
fn enumerated_counts(lookback: usize, unit_len: usize, multiples: &[usize]) -> Vec<u64> {
    let mut span = unit_len;
    let mut out = vec![(0..lookback).step_by(span).count() as u64];
    for m in multiples {
        span *= m;
        out.push((0..lookback).step_by(span).count() as u64);
    }
    out
}

#[test]
fn c03_invocation_counting() {
    let started = Instant::now();
    let full = observed_counts(net_config(512, 8, &[8, 8], 128));
    let small = observed_counts(net_config(64, 4, &[4, 4], 16));
    let elapsed = started.elapsed();
    let pass = full == enumerated_counts(512, 8, &[8, 8])
        && full == [64, 8, 1]
        && small == enumerated_counts(64, 4, &[4, 4])
        && small == [16, 4, 1]
        && elapsed < Duration::from_secs(1);
    report(
        3,
        "invocation counting",
        pass,
        format!("L=512 S=8 {full:?}, L=64 S=4 {small:?} in {elapsed:.2?}"),
    );
    assert!(pass);
}

// 4 ------------------------------------------------------------------------

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}

#[test]
fn c04_weighted_gradient_identity() {
    let started = Instant::now();
    let cfg = net_config(64, 4, &[4, 4], 16);
    let mut detail = Vec::new();
    let mut pass = true;
    for kind in [KernelKind::Linear, KernelKind::Mlp] {
        let net = KUNet::build(cfg.clone(), kind, &mut Rng::seed_from(11)).unwrap();
        let x = random_batch(8, 64, 12);
        let y = random_batch(8, 64, 13);
        let schedule = WeightSchedule::exponential(4.0, 3).unwrap();
        let report_ = weighted_grad_identity_check(&net, &x, &y, &schedule).unwrap();
        pass &= report_.all_pass();
        pass &= report_
            .levels
            .iter()
            .all(|l| l.observed_invocations == l.invocations as u64);

        // Independent route: with zero momentum one EW-SGDM step moves each
        // level-l parameter by exactly S^(l-1) times the plain SGD step.
        let mut grads = net.clone();
        grads.zero_grads();
        let pred = grads.forward_batch(&x).unwrap();
        let n = pred.len() as f64;
        let dpred: Vec<f64> = pred
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, t)| 2.0 * (p - t) / n)
            .collect();
        grads
            .backward_batch(&Matrix::from_vec(8, 64, dpred).unwrap())
            .unwrap();
        let before = grads.flat_params();
        let step = |kind: OptimizerKind| {
            let mut stepped = grads.clone();
            let mut cfg = OptimizerConfig::new(kind, 1.0).with_momentum(0.0);
            if kind == OptimizerKind::EwSgdm {
                cfg = cfg.with_ew_base(4.0);
            }
            Optimizer::new(cfg, &stepped)
                .unwrap()
                .step(&mut stepped)
                .unwrap();
            stepped
        };
        let (sgd, ew) = (step(OptimizerKind::Sgd), step(OptimizerKind::EwSgdm));
        let mut worst = 0.0f64;
        let mut offset = 0;
        for kernel in grads.kernels() {
            let w = 4f64.powi(kernel.level() as i32 - 1);
            let len: usize = kernel.params().map(Matrix::len).sum();
            let range = offset..offset + len;
            offset += len;
            let delta = |net: &KUNet| -> Vec<f64> {
                net.flat_params()[range.clone()]
                    .iter()
                    .zip(&before[range.clone()])
                    .map(|(a, b)| a - b)
                    .collect()
            };
            let sgd_scaled: Vec<f64> = delta(&sgd).iter().map(|d| w * d).collect();
            worst = worst.max(max_rel(&delta(&ew), &sgd_scaled));
        }
        // Subtracting the parameters back out costs a few ulps of |θ|.
        pass &= worst < 1e-12;
        let collapse = report_
            .levels
            .iter()
            .map(|l| l.collapse_rel_err)
            .fold(0.0, f64::max);
        let weighted = report_
            .levels
            .iter()
            .map(|l| l.weighted_rel_err)
            .fold(0.0, f64::max);
        detail.push(format!(
            "{kind:?}: weighted {weighted:.1e}, step route {worst:.1e}, collapse {collapse:.1e}"
        ));
    }
    let elapsed = started.elapsed();
    pass &= elapsed < Duration::from_secs(10);
    report(
        4,
        "weighted-gradient identity",
        pass,
        format!("{} in {elapsed:.2?}", detail.join("; ")),
    );
    assert!(pass);
}

// 5 ------------------------------------------------------------------------

fn loss(net: &mut KUNet, x: &Matrix, y: &Matrix) -> f64 {
    let pred = net.predict(x).unwrap();
    let n = pred.len() as f64;
    pred.data()
        .iter()
        .zip(y.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

/// Largest per-tensor relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`
/// between the backward pass and central differences.
fn finite_difference_error(kind: KernelKind, seed: u64) -> f64 {
    let cfg = net_config(16, 4, &[4], 8);
    let mut net = KUNet::build(cfg, kind, &mut Rng::seed_from(seed)).unwrap();
    let x = random_batch(3, 16, seed + 1);
    let y = random_batch(3, 16, seed + 2);

    net.zero_grads();
    let pred = net.forward_batch(&x).unwrap();
    let n = pred.len() as f64;
    let dpred: Vec<f64> = pred
        .data()
        .iter()
        .zip(y.data())
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    net.backward_batch(&Matrix::from_vec(3, 16, dpred).unwrap())
        .unwrap();
    let analytic = net.flat_grads();
    let theta = net.flat_params();

    let eps = 1e-5;
    let mut numeric = vec![0.0; theta.len()];
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        net.set_flat_params(&probe).unwrap();
        let up = loss(&mut net, &x, &y);
        probe[i] = theta[i] - eps;
        net.set_flat_params(&probe).unwrap();
        let down = loss(&mut net, &x, &y);
        probe[i] = theta[i];
        numeric[i] = (up - down) / (2.0 * eps);
    }

    let sizes: Vec<usize> = net
        .kernels()
        .flat_map(|k| k.params().map(Matrix::len).collect::<Vec<_>>())
        .collect();
    assert_eq!(sizes.iter().sum::<usize>(), theta.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut worst = 0.0f64;
    let mut offset = 0;
    for len in sizes {
        let a = &analytic[offset..offset + len];
        let b = &numeric[offset..offset + len];
        offset += len;
        let diff: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
        let scale = norm(a).max(norm(b));
        if scale > 0.0 {
            worst = worst.max(norm(&diff) / scale);
        }
    }
    worst
}

#[test]
fn c05_gradient_exactness() {
    let started = Instant::now();
    let mlp = (0..3)
        .map(|s| finite_difference_error(KernelKind::Mlp, 100 + s))
        .fold(0.0, f64::max);
    let linear = (0..3)
        .map(|s| finite_difference_error(KernelKind::Linear, 200 + s))
        .fold(0.0, f64::max);
    let elapsed = started.elapsed();
    let pass = mlp < 1e-4 && linear < 1e-8 && elapsed < Duration::from_secs(60);
    report(
        5,
        "gradient exactness",
        pass,
        format!(
            "MLP max rel {mlp:.2e} (< 1e-4), Linear max rel {linear:.2e} (< 1e-8) in {elapsed:.2?}"
        ),
    );
    assert!(pass);
}

// 6 ------------------------------------------------------------------------

fn trained_steps(cfg: &KUNetConfig, opt: OptimizerConfig, steps: usize) -> Vec<f64> {
    let mut net = KUNet::build(cfg.clone(), KernelKind::Mlp, &mut Rng::seed_from(21)).unwrap();
    let mut optimizer = Optimizer::new(opt, &net).unwrap();
    for s in 0..steps {
        let x = random_batch(4, cfg.lookback, 30 + s as u64);
        let y = random_batch(4, cfg.horizon, 60 + s as u64);
        net.zero_grads();
        let pred = net.forward_batch(&x).unwrap();
        let n = pred.len() as f64;
        let d: Vec<f64> = pred
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, t)| 2.0 * (p - t) / n)
            .collect();
        net.backward_batch(&Matrix::from_vec(4, cfg.horizon, d).unwrap())
            .unwrap();
        optimizer.step(&mut net).unwrap();
    }
    net.flat_params()
}

fn bitwise_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[test]
fn c06_optimizer_algebra() {
    let deep = net_config(64, 4, &[4, 4], 8);
    let flat = net_config(8, 8, &[], 8);
    let lr = 0.01;
    let sgd_eq_sgdm0 = bitwise_eq(
        &trained_steps(&deep, OptimizerConfig::new(OptimizerKind::Sgd, lr), 4),
        &trained_steps(
            &deep,
            OptimizerConfig::new(OptimizerKind::Sgdm, lr).with_momentum(0.0),
            4,
        ),
    );
    let sgdm = trained_steps(&deep, OptimizerConfig::new(OptimizerKind::Sgdm, lr), 4);
    let ew_base_one = bitwise_eq(
        &sgdm,
        &trained_steps(
            &deep,
            OptimizerConfig::new(OptimizerKind::EwSgdm, lr).with_ew_base(1.0),
            4,
        ),
    );
    let ew_depth_one = bitwise_eq(
        &trained_steps(&flat, OptimizerConfig::new(OptimizerKind::Sgdm, lr), 4),
        &trained_steps(&flat, OptimizerConfig::new(OptimizerKind::EwSgdm, lr), 4),
    );

    // First Adam step with default hyperparameters over |g| in [1e-3, 1e3].
    let eta = 1e-3;
    let magnitudes: Vec<f64> = (0..=60)
        .map(|i| 10f64.powf(-3.0 + 0.1 * i as f64))
        .collect();
    let grads: Vec<f64> = magnitudes
        .iter()
        .enumerate()
        .map(|(i, g)| if i % 2 == 0 { *g } else { -g })
        .collect();
    let k = grads.len();
    let grad = Matrix::from_vec(1, k, grads.clone()).unwrap();
    let mut theta = Matrix::zeros(1, k);
    let (mut m, mut v) = (Matrix::zeros(1, k), Matrix::zeros(1, k));
    let defaults = OptimizerConfig::new(OptimizerKind::Adam, eta);
    adam_step(
        &mut theta,
        &grad,
        &mut m,
        &mut v,
        AdamParams {
            lr: eta,
            beta1: defaults.momentum,
            beta2: defaults.adam_beta2,
            eps: defaults.adam_eps,
            t: 1,
        },
    )
    .unwrap();
    let (worst_g, worst_dev) = magnitudes
        .iter()
        .zip(theta.data())
        .map(|(g, d)| (*g, (d.abs() - eta).abs() / eta))
        .fold(
            (0.0, 0.0f64),
            |acc, cur| if cur.1 > acc.1 { cur } else { acc },
        );
    let adam_ok = worst_dev < 1e-6;

    let pass = sgd_eq_sgdm0 && ew_base_one && ew_depth_one && adam_ok;
    report(
        6,
        "optimizer algebra",
        pass,
        format!(
            "SGDM(beta=0)==SGD bitwise: {sgd_eq_sgdm0}; EW(S=1)==SGDM: {ew_base_one}; \
             EW(depth 1)==SGDM: {ew_depth_one}; Adam first-step max rel deviation \
             {worst_dev:.3e} at |g|={worst_g:.1e} (bound 1e-6, eps {:e})",
            defaults.adam_eps
        ),
    );
    assert!(pass);
}

// 7 and 8 ------------------------------------------------------------------

struct Dynamics {
    lr: f64,
    sgdm: Vec<RunRecord>,
    ew: Vec<RunRecord>,
    adam: Vec<(f64, RunRecord)>,
    ordering_time: Duration,
    total_time: Duration,
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn reduced_config() -> ExperimentConfig {
    ConfigLayer {
        dataset: Some(SeriesKind::Ds1),
        n: Some(4000),
        lookback: Some(128),
        horizon: Some(128),
        unit_len: Some(8),
        multiples: Some(vec![4, 4]),
        hidden: Some(32),
        kernel: Some(KernelKind::Mlp),
        epochs: Some(50),
        patience: Some(20),
        batch_size: Some(64),
        ..Default::default()
    }
    .resolve()
    .unwrap()
}

fn dynamics() -> &'static Dynamics {
    static CELL: OnceLock<Dynamics> = OnceLock::new();
    CELL.get_or_init(|| {
        let _slot = heavy_slot();
        let started = Instant::now();
        let cfg = reduced_config();
        let data = generate(SeriesKind::Ds1, cfg.n, &mut Rng::seed_from(0)).unwrap();
        let run = |optimizer, lr, ew_base, seed| {
            run_one(
                &cfg,
                &data,
                &RunSpec {
                    optimizer,
                    lr,
                    ew_base,
                    seed,
                },
            )
            .unwrap()
        };

        let mut best: Option<(f64, f64, Vec<RunRecord>)> = None;
        for lr in kunet::cli::SGD_LR_GRID {
            let runs: Vec<RunRecord> = SEEDS
                .iter()
                .map(|&s| run(OptimizerKind::Sgdm, lr, None, s))
                .collect();
            let val = median(runs.iter().map(|r| r.best_row().unwrap().val_mse).collect());
            if best.as_ref().is_none_or(|(v, _, _)| val < *v) {
                best = Some((val, lr, runs));
            }
        }
        let (_, lr, sgdm) = best.unwrap();
        let ew = SEEDS
            .iter()
            .map(|&s| run(OptimizerKind::EwSgdm, lr, Some(4.0), s))
            .collect();
        let ordering_time = started.elapsed();
        let adam = kunet::cli::ADAM_LR_GRID
            .iter()
            .map(|&a| (a, run(OptimizerKind::Adam, a, None, SEEDS[0])))
            .collect();
        Dynamics {
            lr,
            sgdm,
            ew,
            adam,
            ordering_time,
            total_time: started.elapsed(),
        }
    })
}

#[test]
fn c07_training_dynamics_ordering() {
    let d = dynamics();
    let final_train =
        |rs: &[RunRecord]| median(rs.iter().map(|r| r.final_train_mse().unwrap()).collect());
    let (ew, sgdm) = (final_train(&d.ew), final_train(&d.sgdm));
    let pass = ew <= sgdm && d.ordering_time < Duration::from_secs(600);
    report(
        7,
        "training-dynamics ordering",
        pass,
        format!(
            "lr {}: median final train MSE EW-SGDM(base 4) {ew:.4e} vs SGDM {sgdm:.4e} \
             (sweep {:.1?})",
            d.lr, d.ordering_time
        ),
    );
    assert!(pass);
}

#[test]
fn c08_generalization_ordering() {
    let d = dynamics();
    let test =
        |rs: &[RunRecord]| median(rs.iter().map(|r| r.best_row().unwrap().test_mse).collect());
    let (ew, sgdm) = (test(&d.ew), test(&d.sgdm));
    let adam = d
        .adam
        .iter()
        .map(|(lr, r)| format!("{lr}: {:.4e}", r.best_row().unwrap().test_mse))
        .collect::<Vec<_>>()
        .join(", ");
    let pass = ew <= sgdm && d.total_time < Duration::from_secs(900);
    report(
        8,
        "generalization ordering",
        pass,
        format!(
            "lr {}: median best-epoch test MSE EW-SGDM {ew:.4e} vs SGDM {sgdm:.4e}; \
             Adam (not gated, seed 0) {adam} (sweep {:.1?})",
            d.lr, d.total_time
        ),
    );
    assert!(pass);
}

// 9 ------------------------------------------------------------------------

fn run_binary(out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kunet"))
        .args([
            "run",
            "--n",
            "2048",
            "--lookback",
            "32",
            "--horizon",
            "32",
            "--unit-len",
            "4",
            "--multiples",
            "2,4",
            "--hidden",
            "8",
            "--epochs",
            "3",
            "--stride",
            "4",
            "--eval-stride",
            "8",
            "--lr-grid",
            "0.001,0.01",
            "--seeds",
            "5,6",
            "--jobs",
            "2",
            "--optimizers",
            "sgdm,ew-sgdm,adam",
            "--out",
        ])
        .arg(out)
        .output()
        .expect("spawn kunet")
}

fn csv_files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "json"))
        .collect();
    files.sort();
    files
}

#[test]
fn c09_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ok = run_binary(a.path()).status.success() && run_binary(b.path()).status.success();
    let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
    let names = |fs: &[std::path::PathBuf]| -> Vec<_> {
        fs.iter()
            .map(|p| p.file_name().unwrap().to_owned())
            .collect()
    };
    let mut identical = ok && names(&fa) == names(&fb);
    if identical {
        identical = fa
            .iter()
            .zip(&fb)
            .all(|(x, y)| std::fs::read(x).unwrap() == std::fs::read(y).unwrap());
    }
    // Re-running into the same directory overwrites with the same bytes.
    let first: Vec<Vec<u8>> = fa.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let rerun = run_binary(a.path()).status.success()
        && fa
            .iter()
            .zip(&first)
            .all(|(p, bytes)| &std::fs::read(p).unwrap() == bytes);
    // 2 SGDM + 2 EW-SGDM + 2 Adam lrs, 2 seeds, CSV + JSON each, plus the summary.
    let expected_files = 12 * 2 + 1;
    let pass = identical && rerun && fa.len() == expected_files;
    report(
        9,
        "determinism",
        pass,
        format!(
            "{} files byte-identical across runs: {identical}; overwrite stable: {rerun}",
            fa.len()
        ),
    );
    assert!(pass);
}

// 10 -----------------------------------------------------------------------

#[test]
fn c10_full_scale_smoke() {
    let _slot = heavy_slot();
    let started = Instant::now();
    let cfg = ConfigLayer {
        epochs: Some(5),
        ..Default::default()
    }
    .resolve()
    .unwrap();
    assert_eq!(cfg.net, net_config(512, 8, &[8, 8], 128));
    let data = generate(SeriesKind::Ds1, cfg.n, &mut Rng::seed_from(0)).unwrap();
    let spec = RunSpec {
        optimizer: OptimizerKind::EwSgdm,
        lr: kunet::cli::SGD_LR_GRID[0],
        ew_base: None,
        seed: 0,
    };
    let record = run_one(&cfg, &data, &spec);
    let elapsed = started.elapsed();
    let record = match record {
        Ok(r) => r,
        Err(e) => {
            report(
                10,
                "full-scale smoke",
                false,
                format!("training failed: {e}"),
            );
            panic!("{e}");
        }
    };
    let finite = record.rows.len() == 5
        && record
            .rows
            .iter()
            .all(|r| r.train_mse.is_finite() && r.val_mse.is_finite() && r.test_mse.is_finite());
    let first = &record.rows[0];
    let level_mean = |level: usize| {
        let suffix = format!("_l{level}");
        let vals: Vec<f64> = record
            .kernels
            .iter()
            .zip(&first.grad_stats)
            .filter(|(k, _)| k.ends_with(&suffix))
            .map(|(_, g)| *g)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let depth = cfg.net.depth();
    let ratio = level_mean(depth) / level_mean(1);
    let base = cfg.net.common_multiple().unwrap() as f64;
    // grad_stats hold weighted magnitudes; dividing the weight back out gives
    // what plain SGDM would record on the same first batch.
    let raw_ratio = ratio / base.powi(depth as i32 - 1);
    let pass = finite && ratio >= base && elapsed < Duration::from_secs(1800);
    report(
        10,
        "full-scale smoke",
        pass,
        format!(
            "5 finite epochs: {finite}; epoch-1 effective grad level {depth} / level 1 = {ratio:.3} \
             (needs >= {base}; unweighted {raw_ratio:.3e}); per kernel {:?} in {elapsed:.1?}",
            record
                .kernels
                .iter()
                .zip(&first.grad_stats)
                .map(|(k, g)| format!("{k}={g:.3e}"))
                .collect::<Vec<_>>()
        ),
    );
    assert!(pass);
}
