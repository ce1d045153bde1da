//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vibshape::data::VibrationSample;
use vibshape::dynamics::{residual_vibration_ratio, SystemParams};
use vibshape::ekf::{measurement_model, run_ekf_mpi, EkfState};
use vibshape::metrics::{error_metrics, mts};
use vibshape::pipeline::{evaluate_sequence_on_plant, generate_vfb, run_repeated, PipelineConfig};
use vibshape::resnet::{train_resnn_oec, InputNorm, LabelNorm, LabelScaling, NetConfig, ResNet, TrainConfig};
use vibshape::shaper::{design_zvd, ImpulseSequence};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// 20 frequencies x 11 damping ratios.
fn grid() -> Vec<SystemParams> {
    let mut out = Vec::new();
    for i in 0..20 {
        for j in 0..11 {
            let hz = 0.5 + 1.0 * i as f64;
            let zeta = 0.05 * j as f64;
            out.push(SystemParams::from_hz(hz, zeta).unwrap());
        }
    }
    out
}

fn zvd_nulling() -> Outcome {
    let mut worst_v: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for p in grid() {
        let zvd = design_zvd(&p);
        worst_v = worst_v.max(residual_vibration_ratio(&p, &zvd));
        let dt = p.default_dt();
        let horizon = zvd.last_time() + 3.0 * p.damped_period();
        let shaped = evaluate_sequence_on_plant(&zvd, &p, 1.0, dt, horizon).map_err(|e| e.to_string())?;
        let unshaped = evaluate_sequence_on_plant(&ImpulseSequence::identity(), &p, 1.0, dt, horizon)
            .map_err(|e| e.to_string())?;
        // Unshaped residual measured after the same instant as the shaped one.
        let start = (zvd.last_time() / dt).round() as usize;
        let unshaped_tail = unshaped.trace.values()[start..].iter().fold(0.0f64, |m, y| m.max((y - 1.0).abs()));
        worst_ratio = worst_ratio.max(shaped.residual_peak / unshaped_tail);
    }
    check(worst_v < 1e-12, format!("max V = {worst_v:e}"))?;
    check(worst_ratio < 1e-4, format!("max shaped/unshaped = {worst_ratio:e}"))?;
    Ok(format!("max V {worst_v:.1e}, max simulated ratio {worst_ratio:.1e}"))
}

fn zvd_robustness() -> Outcome {
    let mut worst: f64 = 0.0;
    for p in grid() {
        let zvd = design_zvd(&p);
        let h = 1e-6 * p.omega_n();
        let v = |w: f64| residual_vibration_ratio(&SystemParams::new(w, p.zeta()).unwrap(), &zvd);
        let d = (v(p.omega_n() + h) - v(p.omega_n() - h)) / (2.0 * h);
        worst = worst.max(d.abs());
    }
    check(worst < 1e-8, format!("max |dV/dw| = {worst:e}"))?;
    Ok(format!("max |dV/domega_n| {worst:.1e}"))
}

fn amplitude_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = grid();
    params.extend((0..10_000).map(|_| SystemParams::from_hz(rng.gen_range(0.01..500.0), rng.gen_range(0.0..0.99)).unwrap()));
    let worst = params.iter().map(|p| (design_zvd(p).amplitude_sum() - 1.0).abs()).fold(0.0, f64::max);
    check(worst <= 1e-12, format!("max |sum A - 1| = {worst:e}"))?;
    Ok(format!("{} shapers, max |sum A - 1| {worst:.1e}", params.len()))
}

fn ekf_recovery() -> Outcome {
    let mut cfg = PipelineConfig::default();
    cfg.gen.obs_bias = [0.0, 0.0];
    cfg.gen.noise_sigma = 0.1;
    cfg.gen.samples = 100;
    let truth = cfg.gen.truth;
    let mut good = 0;
    let mut detail = Vec::new();
    for seed in 0..10 {
        let data = generate_vfb(&cfg, seed).map_err(|e| e.to_string())?;
        let state = EkfState::new(cfg.nominal, cfg.p0).unwrap();
        let est = run_ekf_mpi(&state, data.samples(), &cfg.noise, cfg.gen.move_mm).map_err(|e| e.to_string())?.estimate;
        let dw = (est.omega_n() - truth.omega_n()).abs() / truth.omega_n();
        let dz = (est.zeta() - truth.zeta()).abs();
        if dw < 0.02 && dz < 0.02 {
            good += 1;
        }
        detail.push(format!("seed {seed}: {:.2}% / {:.4}", 100.0 * dw, dz));
    }
    check(good >= 9, format!("{good}/10 seeds within tolerance: {}", detail.join(", ")))?;
    Ok(format!("{good}/10 seeds within 2% / 0.02"))
}

fn gradient_fidelity() -> Outcome {
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut checked = 0usize;
    for seed in 0..20u64 {
        let net = ResNet::new(&NetConfig::default(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let t: f64 = rng.gen_range(-2.0..2.0);
        let analytic = net.gradients(&net.forward(x), t).flatten();
        let h = 1e-5;
        let mut probe = net.clone();
        for (i, p) in net.params().into_iter().enumerate() {
            probe.set_param(i, p + h);
            let up = 0.5 * (probe.forward(x).output - t).powi(2);
            probe.set_param(i, p - h);
            let down = 0.5 * (probe.forward(x).output - t).powi(2);
            probe.set_param(i, p);
            let fd = (up - down) / (2.0 * h);
            let err = (fd - analytic[i]).abs();
            worst_abs = worst_abs.max(err);
            if err >= 1e-9 {
                let rel = err / fd.abs().max(analytic[i].abs());
                worst_rel = worst_rel.max(rel);
                check(rel < 1e-5, format!("seed {seed} param {i}: analytic {} vs fd {fd}", analytic[i]))?;
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} entries, max abs error {worst_abs:.1e}, max rel error above 1e-9 floor {worst_rel:.1e}"))
}

fn forward_oracle() -> Outcome {
    let net = ResNet::zeros(&NetConfig::default()).unwrap();
    let c = net.forward([0.37, 0.81]);
    let expected = 0.622_459_331_201_854_6;
    for l in 1..=3 {
        check(c.act[l].iter().all(|&h| h == 0.5), format!("layer {l} is not 0.5"))?;
    }
    let err = c.act[4].iter().map(|h| (h - expected).abs()).fold(0.0, f64::max);
    check(err < 1e-12, format!("layer 4 off by {err:e}"))?;
    check(c.output == 0.0, "output is not zero")?;
    Ok(format!("layer 4 = sigma(0.5) within {err:.1e}"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn table_ordering() -> Outcome {
    let cfg = PipelineConfig::default();
    let runs = run_repeated(&cfg, None, 10).map_err(|e| e.to_string())?;
    let col = |m: usize| median(runs.iter().map(|(_, r)| r.reports[m].1.rmse).collect());
    let (ers, ekf, zvd) = (col(0), col(1), col(2));
    let summary = format!("median RMSE ERS {ers:.4} < EKF-only {ekf:.4} < ZVD {zvd:.4} mm");
    check(ers < ekf && ekf < zvd, format!("ordering violated: {summary}"))?;
    check(ers <= 0.5 * zvd, format!("reduction below 50%: {summary}"))?;
    Ok(format!("{summary}, reduction {:.1}%", 100.0 * (1.0 - ers / zvd)))
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..1000 {
        let n = rng.gen_range(1..=100);
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let zh: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let mut brute_mts: f64 = 0.0;
        for v in &z {
            brute_mts = brute_mts.max(v.abs());
        }
        let (mut max, mut sq, mut abs) = (0.0f64, 0.0, 0.0);
        for i in 0..n {
            let d = z[i] - zh[i];
            max = max.max(d.abs());
            sq += d * d;
            abs += d.abs();
        }
        let rmse = (sq / n as f64).sqrt();
        let mean = abs / n as f64;
        let e = error_metrics(&z, &zh).unwrap();
        check(mts(&z).unwrap() == brute_mts, format!("case {case}: MTS mismatch"))?;
        check(e.max_err == max && e.rmse == rmse && e.mean_err == mean, format!("case {case}: metric mismatch"))?;
        check(e.mean_err <= e.rmse && e.rmse <= e.max_err, format!("case {case}: mean <= rms <= max violated"))?;
    }
    Ok("1000 random vectors match brute force bit-for-bit".into())
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = Command::new(env!("CARGO_BIN_EXE_vibshape"))
            .args(["run", "--seed", "42", "--out"])
            .arg(d.path())
            .stdout(std::process::Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        check(status.success(), format!("run exited with {status}"))?;
    }
    let list = |p: &Path| {
        let mut v: Vec<_> = std::fs::read_dir(p).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    let files = list(dirs[0].path());
    check(files == list(dirs[1].path()), "different file sets")?;
    check(!files.is_empty(), "no output files")?;
    for f in &files {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        check(a == b, format!("{} differs", f.to_string_lossy()))?;
    }
    Ok(format!("{} output files byte-identical", files.len()))
}

fn termination() -> Outcome {
    let cfg = PipelineConfig::default();
    let data = generate_vfb(&cfg, 1).map_err(|e| e.to_string())?;
    let samples = &data.samples()[..90];
    let t_ekf = cfg.nominal;
    let kappa = cfg.gen.move_mm;

    let capped = TrainConfig { tol: 0.0, ..TrainConfig::default() };
    let out = train_resnn_oec(samples, &t_ekf, kappa, &capped).map_err(|e| e.to_string())?;
    check(out.rounds == 100 && !out.converged, format!("tol = 0 ran {} rounds", out.rounds))?;

    // Labels equal to what the untrained network already predicts.
    let fixed = TrainConfig { labels: LabelScaling::Fixed(LabelNorm::identity()), ..TrainConfig::default() };
    let mut net = ResNet::new(&fixed.net, fixed.seed).unwrap();
    net.input_norm = InputNorm::fit(samples);
    let converged: Vec<VibrationSample> = samples
        .iter()
        .map(|s| {
            let theta = measurement_model(&t_ekf, &s.deployed(), kappa) + net.predict(s.omega_hz, s.zeta);
            VibrationSample::new(s.omega_hz, s.zeta, theta).unwrap()
        })
        .collect();
    let out = train_resnn_oec(&converged, &t_ekf, kappa, &fixed).map_err(|e| e.to_string())?;
    check(out.rounds == 1 && out.converged, format!("converged data ran {} rounds", out.rounds))?;
    Ok("tol = 0 runs 100 rounds; converged data stops at round 1".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("ZVD nulling", zvd_nulling, Duration::from_secs(5)),
        ("ZVD robustness", zvd_robustness, Duration::MAX),
        ("amplitude normalization", amplitude_normalization, Duration::MAX),
        ("EKF recovery", ekf_recovery, Duration::from_secs(10)),
        ("gradient fidelity", gradient_fidelity, Duration::from_secs(30)),
        ("forward-pass oracle", forward_oracle, Duration::MAX),
        ("directional table reproduction", table_ordering, Duration::from_secs(120)),
        ("metrics oracle", metrics_oracle, Duration::MAX),
        ("determinism", determinism, Duration::MAX),
        ("termination protocol", termination, Duration::MAX),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = match result {
            Ok(_) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:.0?}")),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({elapsed:.2?})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} ({elapsed:.2?})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
