//! Acceptance criteria, one line per criterion. Runs without the libtest
//! harness so that timings are taken on an otherwise idle process and the
//! report is always printed. Exits non-zero when a gating criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use dmp_core::filter::smooth_positions;
use dmp_core::inference::{fit_lengthscales, mh_sample};
use dmp_core::io::{coverage, read_dataset, CsvFormat};
use dmp_core::kernels::{cross_covariance, CouplingMatrix, MaternHyper, Smoothness};
use dmp_core::nalgebra::DMatrix;
use dmp_core::numerics::{block_diag, matrix_exponential};
use dmp_core::oracle::{dense_loglik, dense_posterior};
use dmp_core::pipeline::{attach_truth, bench_config, bench_synth, evaluate, offsets, predict, run_sample, Engine, ModelParams, RunOptions};
use dmp_core::simulate::{sample_path, synth_benchmark, uniform_times};
use dmp_core::ssm::{companion_matrix, joint_stationary_covariance, joint_stationary_covariance_lyapunov};
use dmp_core::{compute_smse, log_likelihood, InferenceConfig, JointStateSpaceModel, MultiSeriesDataset, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KERNEL_TOL: f64 = 1e-10;
const KERNEL_BUDGET: Duration = Duration::from_secs(5);
const SIGMA_TOL: f64 = 1e-10;
const ORACLE_TOL: f64 = 1e-8;
const SYNTH_SEEDS: std::ops::RangeInclusive<u64> = 1..=10;
const SYNTH_COVERAGE: f64 = 0.85;
const TAU2_GENERATOR: [f64; 2] = [0.01, 0.0016];
const RHO_RANGE: std::ops::Range<f64> = 0.6..0.95;
const SCALING_MAX: f64 = 2.5;
const DENSE_MIN_SLOWDOWN: f64 = 20.0;
const MH_ITERATIONS: usize = 50_000;
const MH_BUDGET: Duration = Duration::from_secs(300);
const EXTERNAL_REL_TOL: f64 = 0.5;

enum Status {
    Pass,
    Fail,
    Soft(bool),
    Skip,
}

struct Outcome {
    id: u32,
    status: Status,
    detail: String,
}

fn outcome(id: u32, pass: bool, detail: String) -> Outcome {
    let status = if pass { Status::Pass } else { Status::Fail };
    Outcome { id, status, detail }
}

fn random_ell(rng: &mut ChaCha8Rng) -> f64 {
    (rng.random_range(0.05f64.ln()..50f64.ln())).exp()
}

fn random_coupling(rng: &mut ChaCha8Rng, p: usize) -> CouplingMatrix {
    let l = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.5..1.5));
    CouplingMatrix::new(l).unwrap()
}

/// Closed-form cross-covariances against `Σ∞ e^{ΔQ̄ᵀ}` with `Σ∞` from a
/// Lyapunov solve of the joint system.
fn criterion_1() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0f64;
    let mut checked = 0;
    for nu in [Smoothness::Half, Smoothness::ThreeHalves] {
        for _ in 0..100 {
            let p = rng.random_range(2..=3);
            let hypers: Vec<MaternHyper> =
                (0..p).map(|_| MaternHyper::new(nu, random_ell(&mut rng)).unwrap()).collect();
            let coupling = random_coupling(&mut rng, p);
            let sigma = joint_stationary_covariance_lyapunov(&hypers, &coupling)?;
            let qbar = block_diag(&hypers.iter().map(companion_matrix).collect::<Vec<_>>());
            let k = nu.order() + 1;
            let delta = rng.random_range(0.0..10.0);
            let s = rng.random_range(-5.0..5.0);
            let lagged = &sigma * matrix_exponential(&qbar, delta).transpose();
            for i in 0..p {
                for j in 0..p {
                    let ss = lagged[(i * k, j * k)];
                    let forward = cross_covariance(s, s + delta, i, j, &hypers, &coupling)?;
                    let backward = cross_covariance(s + delta, s, j, i, &hypers, &coupling)?;
                    worst = worst.max((forward - ss).abs()).max((backward - ss).abs());
                    checked += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    Ok(outcome(
        1,
        worst <= KERNEL_TOL && elapsed < KERNEL_BUDGET,
        format!("{checked} entries, max abs err {worst:.2e} (tol {KERNEL_TOL:e}), {:.2} s (budget 5 s)", elapsed.as_secs_f64()),
    ))
}

/// Entrywise error scaled by `√(Σ_aa Σ_bb)`, the largest magnitude an entry
/// of a covariance can have.
fn criterion_2() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst_scaled, mut worst_abs) = (0f64, 0f64);
    for nu in [Smoothness::Half, Smoothness::ThreeHalves] {
        for _ in 0..100 {
            let p = rng.random_range(1..=3);
            let hypers: Vec<MaternHyper> =
                (0..p).map(|_| MaternHyper::new(nu, random_ell(&mut rng)).unwrap()).collect();
            let coupling = random_coupling(&mut rng, p);
            let analytic = joint_stationary_covariance(&hypers, &coupling)?;
            let lyap = joint_stationary_covariance_lyapunov(&hypers, &coupling)?;
            for a in 0..analytic.nrows() {
                for b in 0..analytic.ncols() {
                    let err = (analytic[(a, b)] - lyap[(a, b)]).abs();
                    let scale = (analytic[(a, a)] * analytic[(b, b)]).sqrt();
                    worst_abs = worst_abs.max(err);
                    worst_scaled = worst_scaled.max(err / scale);
                }
            }
        }
    }
    Ok(outcome(
        2,
        worst_scaled <= SIGMA_TOL,
        format!("200 draws, max scaled err {worst_scaled:.2e} (tol {SIGMA_TOL:e}), max abs err {worst_abs:.2e}"),
    ))
}

struct Instance {
    model: JointStateSpaceModel,
    data: MultiSeriesDataset,
    tau2: Vec<f64>,
}

fn random_instance(seed: u64, nu: Smoothness) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.random_range(1..=3);
    let rank = rng.random_range(1..=p);
    let l = DMatrix::from_fn(p, rank, |_, _| rng.random_range(-1.5..1.5));
    let hypers = (0..p)
        .map(|_| MaternHyper::new(nu, 10f64.powf(rng.random_range(-1.0..1.0))).unwrap())
        .collect();
    let model = JointStateSpaceModel::new(hypers, CouplingMatrix::new(l).unwrap()).unwrap();
    let tau2: Vec<f64> = (0..p).map(|_| rng.random_range(0.01..0.3)).collect();
    let n = rng.random_range(5..=50);
    let times = uniform_times(n, 0.0, rng.random_range(1.0..20.0), seed);
    let full = sample_path(&model, &times, &tau2, seed + 1000).unwrap();
    let mut mask: Vec<Vec<bool>> = (0..full.n_times())
        .map(|_| (0..p).map(|_| rng.random_bool(0.7)).collect())
        .collect();
    mask[0][0] = true;
    Instance {
        data: full.with_mask(mask).unwrap(),
        model,
        tau2,
    }
}

fn criterion_3() -> Result<Outcome> {
    let (mut ll_err, mut mean_err, mut var_err) = (0f64, 0f64, 0f64);
    for seed in 0..25 {
        for nu in [Smoothness::Half, Smoothness::ThreeHalves] {
            let inst = random_instance(5000 + seed, nu);
            let (hypers, coupling) = (inst.model.hypers(), inst.model.coupling());
            let kf = log_likelihood(&inst.model, &inst.data, &inst.tau2)?;
            let gp = dense_loglik(&inst.data, hypers, coupling, &inst.tau2)?;
            ll_err = ll_err.max((kf - gp).abs() / gp.abs().max(1.0));
            let smoothed = smooth_positions(&inst.model, &inst.data, &inst.tau2)?;
            let targets: Vec<(usize, f64)> = smoothed.iter().map(|s| (s.series, s.time)).collect();
            let dense = dense_posterior(&inst.data, &targets, hypers, coupling, &inst.tau2)?;
            for (s, (m, v)) in smoothed.iter().zip(dense) {
                mean_err = mean_err.max((s.mean - m).abs());
                var_err = var_err.max((s.var_latent - v).abs());
            }
        }
    }
    Ok(outcome(
        3,
        ll_err <= ORACLE_TOL && mean_err <= ORACLE_TOL && var_err <= ORACLE_TOL,
        format!(
            "50 instances, loglik rel err {ll_err:.2e}, mean err {mean_err:.2e}, var err {var_err:.2e} (tol {ORACLE_TOL:e})"
        ),
    ))
}

/// Dense conditioning with stage-1 length-scales, `C` equal to the empirical
/// covariance of the noise-free generator signals and the generator noise
/// variances. Returns (SMSE, number covered, number held out).
fn oracle_synth(seed: u64) -> Result<(f64, usize, usize)> {
    let data = synth_benchmark(seed)?.dataset;
    let offs = offsets(&data, true);
    let centered = data.shifted(&offs);
    let nu = Smoothness::Half;
    let fits = fit_lengthscales(&centered, nu, &Default::default())?;
    let hypers: Vec<MaternHyper> = fits.iter().map(|f| MaternHyper::new(nu, f.ell).unwrap()).collect();
    let five_pi = 5.0 * std::f64::consts::PI;
    let signals: Vec<[f64; 2]> = data
        .times()
        .iter()
        .map(|&t| [0.2 * (five_pi * t).cos() - 2.0 * t, t - 0.5 * (five_pi * t).cos()])
        .collect();
    let n = signals.len() as f64;
    let mean = [0, 1].map(|j| signals.iter().map(|s| s[j]).sum::<f64>() / n);
    let c = DMatrix::from_fn(2, 2, |a, b| {
        signals.iter().map(|s| (s[a] - mean[a]) * (s[b] - mean[b])).sum::<f64>() / n
    });
    let coupling = CouplingMatrix::from_covariance(&c)?;
    let held: Vec<usize> = (0..data.n_times()).filter(|&k| !data.is_observed(k, 1)).collect();
    let targets: Vec<(usize, f64)> = held.iter().map(|&k| (1, data.times()[k])).collect();
    let post = dense_posterior(&centered, &targets, &hypers, &coupling, &TAU2_GENERATOR)?;
    let truth: Vec<f64> = held.iter().map(|&k| data.value(k, 1)).collect();
    let means: Vec<f64> = post.iter().map(|(m, _)| m + offs[1]).collect();
    let covered = post
        .iter()
        .zip(&truth)
        .filter(|((m, v), t)| (*t - (m + offs[1])).abs() <= 2.0 * (v + TAU2_GENERATOR[1]).sqrt())
        .count();
    Ok((compute_smse(&means, &truth)?, covered, held.len()))
}

fn criterion_4() -> Result<Outcome> {
    let (mut smse, mut oracle_smse) = (Vec::new(), Vec::new());
    let (mut covered, mut held) = (0usize, 0usize);
    let mut seed7 = String::new();
    for seed in SYNTH_SEEDS {
        let run = bench_synth(seed, &bench_config(seed), &RunOptions::default(), None)?;
        let m = &run.artifacts.metrics;
        let s = m.smse.expect("held-out truth");
        let cov = coverage(&run.predictions).expect("held-out truth");
        smse.push(s);
        held += run.predictions.len();
        covered += (cov * run.predictions.len() as f64).round() as usize;
        if seed == 7 {
            seed7 = format!("seed 7: smse {s:.3} coverage {cov:.3}");
        }
        oracle_smse.push(oracle_synth(seed)?.0);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (smse_mean, threshold) = (mean(&smse), mean(&oracle_smse));
    let pooled = covered as f64 / held as f64;
    let pass = smse_mean < threshold && pooled >= SYNTH_COVERAGE;
    Ok(outcome(
        4,
        pass,
        format!(
            "seeds 1-10: mean smse {smse_mean:.3} (threshold {threshold:.3}, oracle mean), pooled coverage {pooled:.3} = {covered}/{held} (need {SYNTH_COVERAGE}); {seed7}"
        ),
    ))
}

fn criterion_5() -> Result<Outcome> {
    let nu = Smoothness::Half;
    let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
    let hypers = vec![MaternHyper::new(nu, 1.0)?, MaternHyper::new(nu, 1.0)?];
    let model = JointStateSpaceModel::new(hypers, CouplingMatrix::from_covariance(&c)?)?;
    let mut rhos = Vec::new();
    for seed in 1..=5u64 {
        let times = uniform_times(400, 0.0, 80.0, 10 * seed);
        let data = sample_path(&model, &times, &[0.05, 0.05], 10 * seed + 1)?;
        let mut cfg = InferenceConfig::new(nu, 2);
        cfg.stage2.seed = seed;
        let (art, _) = run_sample(&data, &cfg, &RunOptions::default(), None)?;
        rhos.push(art.posterior.expect("posterior").summary.mean_rho[0][1]);
    }
    let pass = rhos.iter().all(|r| RHO_RANGE.contains(r));
    let shown: Vec<String> = rhos.iter().map(|r| format!("{r:.3}")).collect();
    Ok(outcome(5, pass, format!("rho_12 over 5 seeds [{}], need [0.6, 0.95]", shown.join(", "))))
}

fn median_time(reps: usize, mut f: impl FnMut()) -> f64 {
    let mut t: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64()
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[reps / 2]
}

fn criterion_6() -> Result<Outcome> {
    let nu = Smoothness::ThreeHalves;
    let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
    let hypers = vec![MaternHyper::new(nu, 2.0)?, MaternHyper::new(nu, 5.0)?];
    let model = JointStateSpaceModel::new(hypers.clone(), CouplingMatrix::from_covariance(&c)?)?;
    let tau2 = [0.1, 0.1];
    let series = |n: usize| sample_path(&model, &uniform_times(n, 0.0, n as f64 / 10.0, 6), &tau2, 7);
    let (d1, d2) = (series(1000)?, series(2000)?);
    log_likelihood(&model, &d2, &tau2)?;
    let t1 = median_time(15, || {
        log_likelihood(&model, &d1, &tau2).unwrap();
    });
    let t2 = median_time(15, || {
        log_likelihood(&model, &d2, &tau2).unwrap();
    });
    let td = median_time(3, || {
        dense_loglik(&d1, &hypers, model.coupling(), &tau2).unwrap();
    });
    let (scaling, slowdown) = (t2 / t1, td / t1);
    Ok(outcome(
        6,
        scaling <= SCALING_MAX && slowdown >= DENSE_MIN_SLOWDOWN,
        format!(
            "filter N=1000 {:.2} ms, N=2000 {:.2} ms, ratio {scaling:.2} (max {SCALING_MAX}); dense N=1000 {:.1} ms, {slowdown:.0}x slower (min {DENSE_MIN_SLOWDOWN})",
            t1 * 1e3,
            t2 * 1e3,
            td * 1e3
        ),
    ))
}

fn criterion_7() -> Result<Outcome> {
    let data = synth_benchmark(7)?.dataset;
    let centered = data.shifted(&offsets(&data, true));
    let cfg = bench_config(7);
    let fits = fit_lengthscales(&centered, cfg.nu, &cfg.stage1)?;
    let stage2 = dmp_core::Stage2Config {
        chain_length: MH_ITERATIONS,
        ..cfg.stage2.clone()
    };
    let start = Instant::now();
    let samples = mh_sample(&centered, &fits, cfg.nu, cfg.rank, &stage2, &cfg.priors)?;
    let elapsed = start.elapsed();
    Ok(outcome(
        7,
        elapsed <= MH_BUDGET,
        format!(
            "{MH_ITERATIONS} iterations in {:.1} s (budget {} s), acceptance {:.3}",
            elapsed.as_secs_f64(),
            MH_BUDGET.as_secs(),
            samples.acceptance_rate.unwrap_or(f64::NAN)
        ),
    ))
}

/// SMSE of a full run on user-supplied training and truth files.
fn external_smse(train: &PathBuf, truth: &PathBuf, nu: Smoothness, rank: usize) -> Result<f64> {
    let data = read_dataset(train, CsvFormat::Auto)?;
    let truth = read_dataset(truth, CsvFormat::Auto)?;
    let data = attach_truth(&data, &truth)?;
    let cfg = InferenceConfig::new(nu, rank);
    let (art, _) = run_sample(&data, &cfg, &RunOptions::default(), None)?;
    let preds = predict(&data, &ModelParams::from_artifacts(&art, false)?, Engine::Ssm)?;
    evaluate(&preds, data.names())?
        .smse
        .ok_or_else(|| dmp_core::DmpError::validation("truth file covers no held-out entry"))
}

/// Non-gating. Runs when the datasets are supplied through
/// `DMP_WAVE_TRAIN`/`DMP_WAVE_TRUTH` and `DMP_FIN_TRAIN`/`DMP_FIN_TRUTH`.
fn criterion_8() -> Outcome {
    let var = |k: &str| std::env::var_os(k).map(PathBuf::from);
    let runs = [
        ("wave", "DMP_WAVE_TRAIN", "DMP_WAVE_TRUTH", vec![(Smoothness::Half, 0.059), (Smoothness::ThreeHalves, 0.022), (Smoothness::FiveHalves, 0.224)]),
        ("fin", "DMP_FIN_TRAIN", "DMP_FIN_TRUTH", vec![(Smoothness::Half, 0.087)]),
    ];
    let mut parts = Vec::new();
    let mut all_close = true;
    let mut any = false;
    for (name, train, truth, cases) in runs {
        let (Some(train), Some(truth)) = (var(train), var(truth)) else {
            parts.push(format!("{name}: not supplied"));
            continue;
        };
        any = true;
        for (nu, reference) in cases {
            match external_smse(&train, &truth, nu, 4) {
                Ok(s) => {
                    let close = (s - reference).abs() <= EXTERNAL_REL_TOL * reference;
                    all_close &= close;
                    parts.push(format!("{name} nu={nu}: smse {s:.3} (reference {reference}, within 50%: {close})"));
                }
                Err(e) => {
                    all_close = false;
                    parts.push(format!("{name} nu={nu}: error {e}"));
                }
            }
        }
    }
    Outcome {
        id: 8,
        status: if any { Status::Soft(all_close) } else { Status::Skip },
        detail: parts.join("; "),
    }
}

fn criterion_9() -> Result<Outcome> {
    let dir = tempfile::tempdir().map_err(|e| dmp_core::DmpError::io("tempdir", e))?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        bench_synth(3, &bench_config(3), &RunOptions::default(), Some(out))?;
    }
    let mut differing = Vec::new();
    for f in ["data.csv", "truth.csv", "predictions.csv", "report.json"] {
        let read = |d: &PathBuf| std::fs::read(d.join(f)).map_err(|e| dmp_core::DmpError::io(d.join(f), e));
        if read(&a)? != read(&b)? {
            differing.push(f);
        }
    }
    Ok(outcome(
        9,
        differing.is_empty(),
        if differing.is_empty() {
            "4 files byte-identical across two runs".into()
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    ))
}

fn main() {
    let gating: [(u32, fn() -> Result<Outcome>); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (9, criterion_9),
    ];
    let mut outcomes: Vec<Outcome> = gating
        .iter()
        .map(|(id, f)| {
            f().unwrap_or_else(|e| Outcome {
                id: *id,
                status: Status::Fail,
                detail: format!("error: {e}"),
            })
        })
        .collect();
    outcomes.insert(7, criterion_8());
    let mut failed = 0;
    for o in &outcomes {
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Soft(true) => "SOFT-PASS",
            Status::Soft(false) => "SOFT-FAIL",
            Status::Skip => "SKIP",
        };
        println!("criterion {}: {tag:<9} {}", o.id, o.detail);
    }
    println!("acceptance: {} gating criteria, {failed} failed", outcomes.len() - 1);
    if failed > 0 {
        std::process::exit(1);
    }
}
