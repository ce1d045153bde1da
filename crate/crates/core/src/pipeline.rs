//! End-to-end identification: EKF stage, compensation stage, baselines and reporting.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, VibrationSample};
use crate::dynamics::{residual_vibration_ratio, simulate, SystemParams, TimeSeries};
use crate::ekf::{random_p0, run_ekf_mpi, EkfState, Mat2, NoiseConfig, DEFAULT_P0};
use crate::error::{Error, Result};
use crate::metrics::{mts, MetricReport};
use crate::resnet::{train_resnn_oec, LabelNorm, LabelScaling, TrainConfig, TrainOutcome};
use crate::shaper::{design_zvd, shape_command, ImpulseSequence};

/// How the residual-amplitude gain of the measurement model is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaPolicy {
    Fixed(f64),
    /// `theta_1 / V(T0, deployed_1)` on the first training sample, 1 when V vanishes.
    FirstSample,
}

/// Synthetic data generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub truth: SystemParams,
    /// Systematic offset between the identified plant and the one the sensor sees.
    pub obs_bias: [f64; 2],
    pub samples: usize,
    pub noise_sigma: f64,
    pub move_mm: f64,
    /// Relative half-width of the omega draws around nominal.
    pub spread_omega: f64,
    /// Absolute half-width of the zeta draws around nominal.
    pub spread_zeta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub nominal: SystemParams,
    pub noise: NoiseConfig,
    pub p0: Mat2,
    pub train: TrainConfig,
    pub split: f64,
    /// Simulation step; `None` uses each shaper's damped period / 200.
    pub dt: Option<f64>,
    pub kappa: KappaPolicy,
    pub seed: u64,
    pub gen: GenConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let two_pi = 2.0 * std::f64::consts::PI;
        Self {
            nominal: SystemParams::from_hz(5.5, 0.12).expect("valid default"),
            noise: NoiseConfig::default(),
            p0: DEFAULT_P0,
            train: TrainConfig::default(),
            split: 0.9,
            dt: None,
            kappa: KappaPolicy::Fixed(100.0),
            seed: 42,
            gen: GenConfig {
                truth: SystemParams::from_hz(5.0, 0.10).expect("valid default"),
                obs_bias: [two_pi * 0.2, 0.01],
                samples: 100,
                noise_sigma: 0.1,
                move_mm: 100.0,
                spread_omega: 0.2,
                spread_zeta: 0.05,
            },
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config(format!("`{key}`: bad value `{value}`: {e}")))
}

impl PipelineConfig {
    /// Parse `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let two_pi = 2.0 * std::f64::consts::PI;
        let (mut nom, mut truth) = ([5.5, 0.12], [5.0, 0.10]);
        let (mut q, mut p0) = ([1e-6, 1e-8], [DEFAULT_P0[0][0], DEFAULT_P0[1][1]]);
        let mut p0_seed = None;
        let mut kappa_value = None;
        let mut kappa_policy = "fixed".to_string();
        let mut bias_hz = 0.2;
        let mut label_fixed: Option<[f64; 2]> = None;
        let mut delta = [None, None];
        let mut r = cfg.noise.r;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let f = || parse_num::<f64>(key, value);
            match key {
                "seed" => cfg.seed = parse_num(key, value)?,
                "nominal_omega_hz" => nom[0] = f()?,
                "nominal_zeta" => nom[1] = f()?,
                "split" => cfg.split = f()?,
                "dt" => cfg.dt = Some(f()?).filter(|v| *v > 0.0),
                "kappa" => kappa_policy = value.to_string(),
                "kappa_value" => kappa_value = Some(f()?),
                "ekf.r" => r = f()?,
                "ekf.q_omega" => q[0] = f()?,
                "ekf.q_zeta" => q[1] = f()?,
                "ekf.p0_omega" => p0[0] = f()?,
                "ekf.p0_zeta" => p0[1] = f()?,
                "ekf.p0_seed" => p0_seed = Some(parse_num::<u64>(key, value)?),
                "train.rho" => cfg.train.rho = f()?,
                "train.max_rounds" => cfg.train.max_rounds = parse_num(key, value)?,
                "train.tol" => cfg.train.tol = f()?,
                "train.seed" => cfg.train.seed = parse_num(key, value)?,
                "train.hidden_width" => cfg.train.net.hidden_width = parse_num(key, value)?,
                "train.hidden_layers" => cfg.train.net.hidden_layers = parse_num(key, value)?,
                "train.penult_width" => cfg.train.net.penult_width = parse_num(key, value)?,
                "train.alpha" => cfg.train.net.alpha = f()?,
                "train.init_scale" => cfg.train.net.init_scale = f()?,
                "train.delta_omega" => delta[0] = Some(f()?),
                "train.delta_zeta" => delta[1] = Some(f()?),
                "train.labels" => match value {
                    "auto" => label_fixed = None,
                    "raw" => label_fixed = Some([0.0, 1.0]),
                    _ => return Err(Error::Config(format!("`train.labels` must be auto or raw, got `{value}`"))),
                },
                "gen.truth_omega_hz" => truth[0] = f()?,
                "gen.truth_zeta" => truth[1] = f()?,
                "gen.bias_omega_hz" => bias_hz = f()?,
                "gen.bias_zeta" => cfg.gen.obs_bias[1] = f()?,
                "gen.samples" => cfg.gen.samples = parse_num(key, value)?,
                "gen.noise_sigma" => cfg.gen.noise_sigma = f()?,
                "gen.move_mm" => cfg.gen.move_mm = f()?,
                "gen.spread_omega" => cfg.gen.spread_omega = f()?,
                "gen.spread_zeta" => cfg.gen.spread_zeta = f()?,
                _ => return Err(Error::Config(format!("line {}: unknown key `{key}`", i + 1))),
            }
        }
        let bad = |what: &str, e: Error| Error::Config(format!("{what}: {e}"));
        cfg.nominal = SystemParams::from_hz(nom[0], nom[1]).map_err(|e| bad("nominal", e))?;
        cfg.gen.truth = SystemParams::from_hz(truth[0], truth[1]).map_err(|e| bad("gen.truth", e))?;
        cfg.gen.obs_bias[0] = two_pi * bias_hz;
        cfg.noise = NoiseConfig::new([[q[0], 0.0], [0.0, q[1]]], r).map_err(|e| bad("ekf", e))?;
        cfg.p0 = match p0_seed {
            Some(s) => random_p0(s),
            None => [[p0[0], 0.0], [0.0, p0[1]]],
        };
        cfg.kappa = match kappa_policy.as_str() {
            "fixed" => KappaPolicy::Fixed(kappa_value.unwrap_or(cfg.gen.move_mm)),
            "first_sample" => KappaPolicy::FirstSample,
            other => return Err(Error::Config(format!("`kappa` must be fixed or first_sample, got `{other}`"))),
        };
        if delta[0].is_some() || delta[1].is_some() {
            cfg.train.delta_scale = Some([delta[0].unwrap_or(0.05 * cfg.nominal.omega_n()), delta[1].unwrap_or(0.02)]);
        }
        if let Some([offset, scale]) = label_fixed {
            cfg.train.labels = LabelScaling::Fixed(LabelNorm { offset, scale });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::Config(format!("split must lie in (0, 1), got {}", self.split)));
        }
        if let Some(dt) = self.dt {
            if !dt.is_finite() || dt <= 0.0 {
                return Err(Error::Config(format!("dt must be > 0, got {dt}")));
            }
        }
        if let KappaPolicy::Fixed(k) = self.kappa {
            if !k.is_finite() {
                return Err(Error::Config("kappa must be finite".into()));
            }
        }
        if EkfState::new(self.nominal, self.p0).is_err() {
            return Err(Error::Config("initial covariance must be positive definite".into()));
        }
        let g = &self.gen;
        if g.samples == 0 {
            return Err(Error::Config("gen.samples must be >= 1".into()));
        }
        if !(g.noise_sigma >= 0.0) || !g.move_mm.is_finite() || g.obs_bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("generator noise, move and bias must be finite, noise >= 0".into()));
        }
        if !(0.0..1.0).contains(&g.spread_omega) || !(g.spread_zeta >= 0.0) {
            return Err(Error::Config("generator spreads must satisfy 0 <= spread_omega < 1, spread_zeta >= 0".into()));
        }
        self.train.validate()
    }

    /// Measurement-model gain for a run whose first training sample is `first`.
    pub fn kappa_for(&self, first: &VibrationSample) -> f64 {
        match self.kappa {
            KappaPolicy::Fixed(k) => k,
            KappaPolicy::FirstSample => {
                let v = residual_vibration_ratio(&self.nominal, &first.deployed());
                if v > 0.0 {
                    first.theta_mm / v
                } else {
                    1.0
                }
            }
        }
    }
}

/// Result of running one shaped step on one plant.
#[derive(Debug, Clone, PartialEq)]
pub struct ShaperEvaluation {
    pub trace: TimeSeries,
    /// Peak absolute displacement over the whole trace.
    pub mts: f64,
    /// Peak deviation from the target after the last impulse.
    pub residual_peak: f64,
}

/// Simulate a step of `move_mm`, shaped by `shaper`, on `plant`.
pub fn evaluate_sequence_on_plant(
    shaper: &ImpulseSequence,
    plant: &SystemParams,
    move_mm: f64,
    dt: f64,
    horizon: f64,
) -> Result<ShaperEvaluation> {
    if horizon < shaper.last_time() {
        return Err(Error::domain(format!("horizon {horizon} s ends before the last impulse")));
    }
    let cmd = shape_command(&TimeSeries::step(move_mm, dt, 0.0)?, shaper);
    let trace = simulate(plant, &cmd, dt, horizon)?;
    let start = (shaper.last_time() / dt).round() as usize;
    let residual_peak = trace.values()[start.min(trace.len() - 1)..]
        .iter()
        .fold(0.0f64, |m, y| m.max((y - move_mm).abs()));
    let mts = mts(trace.values())?;
    Ok(ShaperEvaluation { trace, mts, residual_peak })
}

/// ZVD designed at `design`, run on `plant`.
pub fn evaluate_shaper_on_plant(
    design: &SystemParams,
    plant: &SystemParams,
    move_mm: f64,
    dt: f64,
    horizon: f64,
) -> Result<ShaperEvaluation> {
    evaluate_sequence_on_plant(&design_zvd(design), plant, move_mm, dt, horizon)
}

/// Measured residual of one deployment: ZVD at `design`, plant `plant`.
fn measured_residual(design: &SystemParams, plant: &SystemParams, move_mm: f64, dt: Option<f64>) -> Result<f64> {
    let zvd = design_zvd(design);
    let dt = dt.unwrap_or_else(|| design.default_dt());
    let horizon = zvd.last_time() + 4.0 * plant.damped_period();
    Ok(evaluate_sequence_on_plant(&zvd, plant, move_mm, dt, horizon)?.residual_peak)
}

const MAX_REDRAWS: usize = 1000;

/// Synthetic vibration data set.
///
/// Each sample deploys a ZVD designed around `nominal`, runs it on a plant with parameters
/// `truth + obs_bias` and records the peak residual plus Gaussian noise.
pub fn generate_vfb(cfg: &PipelineConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let g = &cfg.gen;
    let plant = SystemParams::new(g.truth.omega_n() + g.obs_bias[0], g.truth.zeta() + g.obs_bias[1])
        .map_err(|e| Error::Config(format!("truth + obs_bias is not a valid plant: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, g.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut samples = Vec::with_capacity(g.samples);
    for _ in 0..g.samples {
        let mut drawn = None;
        for _ in 0..MAX_REDRAWS {
            let w = cfg.nominal.omega_hz() * (1.0 + g.spread_omega * rng.gen_range(-1.0..=1.0));
            let z = cfg.nominal.zeta() + g.spread_zeta * rng.gen_range(-1.0..=1.0);
            if let Ok(p) = SystemParams::from_hz(w, z) {
                if z <= 0.9 {
                    drawn = Some(p);
                    break;
                }
            }
        }
        let design = drawn.ok_or_else(|| Error::domain("could not draw valid shaper parameters"))?;
        let theta = measured_residual(&design, &plant, g.move_mm, cfg.dt)? + noise.sample(&mut rng);
        samples.push(VibrationSample::new(design.omega_hz(), design.zeta(), theta)?);
    }
    Dataset::new(format!("vfb-{seed}"), seed, samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timing {
    pub ekf_s: f64,
    pub resnn_s: f64,
    /// Sum of the two stages.
    pub total_s: f64,
}

pub const MODELS: [&str; 3] = ["ERS", "EKF-only", "ZVD"];

/// Held-out predictions of the three models.
#[derive(Debug, Clone, PartialEq)]
pub struct TestPrediction {
    pub sample: VibrationSample,
    pub ers: f64,
    pub ekf: f64,
    pub zvd: f64,
}

#[derive(Debug, Clone)]
pub struct ErsResult {
    pub kappa: f64,
    pub t_ekf: SystemParams,
    pub delta_t: [f64; 2],
    pub t_r: SystemParams,
    pub ekf_state: EkfState,
    pub training: TrainOutcome,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub predictions: Vec<TestPrediction>,
    /// Reports in [`MODELS`] order.
    pub reports: Vec<(String, MetricReport)>,
    pub timing: Timing,
}

/// Seeded 90/10 style split: `(train, test)` index lists.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::domain(format!("a split of {fraction} on {n} samples leaves an empty side")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

/// Identify, compensate and compare against the baselines on a held-out split.
pub fn run_ers(cfg: &PipelineConfig, data: &Dataset) -> Result<ErsResult> {
    cfg.validate()?;
    let (train_idx, test_idx) = split_indices(data.len(), cfg.split, cfg.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| data.samples()[i]).collect::<Vec<_>>();
    let (train, test) = (pick(&train_idx), pick(&test_idx));
    let kappa = cfg.kappa_for(&train[0]);

    let clock = Instant::now();
    let initial = EkfState::new(cfg.nominal, cfg.p0).map_err(|e| e.in_stage("ekf"))?;
    let ekf_state = run_ekf_mpi(&initial, &train, &cfg.noise, kappa).map_err(|e| e.in_stage("ekf"))?;
    let ekf_s = clock.elapsed().as_secs_f64();
    let t_ekf = ekf_state.estimate;

    let clock = Instant::now();
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = train_cfg.seed.wrapping_add(cfg.seed);
    let training = train_resnn_oec(&train, &t_ekf, kappa, &train_cfg).map_err(|e| e.in_stage("resnn"))?;
    let resnn_s = clock.elapsed().as_secs_f64();

    let predictions: Vec<TestPrediction> = test
        .iter()
        .map(|s| {
            let deployed = s.deployed();
            let ekf = kappa * residual_vibration_ratio(&t_ekf, &deployed);
            TestPrediction {
                sample: *s,
                ers: ekf + training.net.predict(s.omega_hz, s.zeta),
                ekf,
                zvd: kappa * residual_vibration_ratio(&cfg.nominal, &deployed),
            }
        })
        .collect();
    let measured: Vec<f64> = predictions.iter().map(|p| p.sample.theta_mm).collect();
    let report = |f: fn(&TestPrediction) -> f64| {
        MetricReport::from_samples(&measured, &predictions.iter().map(f).collect::<Vec<_>>())
    };
    let reports = vec![
        (MODELS[0].to_string(), report(|p| p.ers)?),
        (MODELS[1].to_string(), report(|p| p.ekf)?),
        (MODELS[2].to_string(), report(|p| p.zvd)?),
    ];
    Ok(ErsResult {
        kappa,
        t_ekf,
        delta_t: training.delta_t,
        t_r: training.corrected,
        ekf_state,
        training,
        train_idx,
        test_idx,
        predictions,
        reports,
        timing: Timing { ekf_s, resnn_s, total_s: ekf_s + resnn_s },
    })
}

/// Mean and sample standard deviation of each metric across repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub model: String,
    pub mean: [f64; 4],
    pub std: [f64; 4],
    pub runs: usize,
}

pub const AGGREGATE_HEADER: &str =
    "model,max_mean,max_std,rmse_mean,rmse_std,mean_mean,mean_std,mts_mean,mts_std,runs";

impl AggregateRow {
    pub fn csv_row(&self) -> String {
        let mut out = self.model.clone();
        for k in 0..4 {
            let _ = write!(out, ",{:?},{:?}", self.mean[k], self.std[k]);
        }
        let _ = write!(out, ",{}", self.runs);
        out
    }
}

pub fn aggregate(results: &[ErsResult]) -> Vec<AggregateRow> {
    let n = results.len();
    MODELS
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let values: Vec<[f64; 4]> = results
                .iter()
                .map(|r| {
                    let rep = r.reports[m].1;
                    [rep.max_err, rep.rmse, rep.mean_err, rep.mts]
                })
                .collect();
            let mut mean = [0.0; 4];
            let mut std = [0.0; 4];
            for k in 0..4 {
                mean[k] = values.iter().map(|v| v[k]).sum::<f64>() / n as f64;
                if n > 1 {
                    let ss: f64 = values.iter().map(|v| (v[k] - mean[k]).powi(2)).sum();
                    std[k] = (ss / (n - 1) as f64).sqrt();
                }
            }
            AggregateRow { model: name.to_string(), mean, std, runs: n }
        })
        .collect()
}

/// `repeats` independent runs with seeds `cfg.seed, cfg.seed + 1, ...`.
///
/// With `data = None` each run generates its own synthetic set from its seed; otherwise only the
/// split and network initialization change. Runs execute on separate threads.
pub fn run_repeated(cfg: &PipelineConfig, data: Option<&Dataset>, repeats: usize) -> Result<Vec<(Dataset, ErsResult)>> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..repeats as u64)
            .map(|r| {
                let mut run_cfg = cfg.clone();
                run_cfg.seed = cfg.seed.wrapping_add(r);
                scope.spawn(move || -> Result<(Dataset, ErsResult)> {
                    let data = match data {
                        Some(d) => d.clone(),
                        None => generate_vfb(&run_cfg, run_cfg.seed)?,
                    };
                    let result = run_ers(&run_cfg, &data)?;
                    Ok((data, result))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("repetition thread panicked")).collect()
    })
}

/// `setup,A1,A2,A3,t1_s,t2_s,t3_s` rows for the given designs.
pub fn shaper_table(rows: &[(&str, SystemParams)]) -> String {
    let mut out = String::from("setup,A1,A2,A3,t1_s,t2_s,t3_s\n");
    for (name, p) in rows {
        let z = design_zvd(p);
        let a: Vec<String> = z.impulses().iter().map(|i| format!("{:?}", i.amplitude)).collect();
        let t: Vec<String> = z.impulses().iter().map(|i| format!("{:?}", i.time)).collect();
        let _ = writeln!(out, "{name},{},{}", a.join(","), t.join(","));
    }
    out
}

/// `model,omega_hz,zeta` rows.
pub fn params_table(rows: &[(&str, SystemParams)]) -> String {
    let mut out = String::from("model,omega_hz,zeta\n");
    for (name, p) in rows {
        let _ = writeln!(out, "{name},{:?},{:?}", p.omega_hz(), p.zeta());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let cfg = PipelineConfig::parse("# comment\nseed = 7\nnominal_omega_hz = 6.0 # inline\ntrain.tol = 0\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.nominal.omega_hz(), 6.0);
        assert_eq!(cfg.train.tol, 0.0);
        assert_eq!(cfg.kappa, KappaPolicy::Fixed(100.0));
        assert!(PipelineConfig::parse("bogus = 1\n").is_err());
        assert!(PipelineConfig::parse("split = 1.0\n").is_err());
        assert!(PipelineConfig::parse("seed 3\n").is_err());
        assert!(PipelineConfig::parse("nominal_zeta = 1.5\n").is_err());
        assert!(PipelineConfig::parse("train.rho = abc\n").is_err());
        assert_eq!(PipelineConfig::parse("kappa = first_sample").unwrap().kappa, KappaPolicy::FirstSample);
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let (train, test) = split_indices(100, 0.9, 3).unwrap();
        assert_eq!(train.len(), 90);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.9, 3).unwrap(), (train, test));
        assert_eq!(split_indices(7, 0.9, 0).unwrap().0.len(), 6);
        assert!(split_indices(2, 0.9, 0).is_err());
    }

    #[test]
    fn zero_move_gives_zero_trace() {
        let p = SystemParams::from_hz(3.0, 0.1).unwrap();
        let e = evaluate_shaper_on_plant(&p, &p, 0.0, p.default_dt(), 2.0).unwrap();
        assert!(e.trace.values().iter().all(|&v| v == 0.0));
        assert_eq!((e.mts, e.residual_peak), (0.0, 0.0));
    }

    #[test]
    fn matched_shaper_nulls_residual() {
        let p = SystemParams::from_hz(4.0, 0.08).unwrap();
        let dt = p.default_dt();
        let shaped = evaluate_shaper_on_plant(&p, &p, 100.0, dt, 3.0).unwrap();
        let unshaped = evaluate_sequence_on_plant(&ImpulseSequence::identity(), &p, 100.0, dt, 3.0).unwrap();
        assert!(shaped.residual_peak < 1e-4 * unshaped.residual_peak);
    }

    #[test]
    fn unshaped_peak_matches_step_envelope() {
        // |y - move| is bounded by move * exp(-sigma t) / sqrt(1 - zeta^2); motion ends at t = 0.
        let p = SystemParams::from_hz(2.0, 0.1).unwrap();
        let e = evaluate_sequence_on_plant(&ImpulseSequence::identity(), &p, 100.0, p.damped_period() / 2000.0, 2.0)
            .unwrap();
        let envelope = 100.0 / (1.0f64 - 0.01).sqrt();
        assert!(e.residual_peak <= envelope);
        assert!((e.residual_peak - envelope).abs() < 0.01 * envelope, "{} vs {envelope}", e.residual_peak);
        let overshoot = 100.0 * (-0.1 * std::f64::consts::PI / (1.0f64 - 0.01).sqrt()).exp();
        assert!((e.mts - 100.0 - overshoot).abs() < 1e-3 * overshoot);
    }

    #[test]
    fn generator_is_deterministic_and_nulls_itself() {
        let mut cfg = PipelineConfig::default();
        cfg.gen.samples = 12;
        let a = generate_vfb(&cfg, 5).unwrap();
        assert_eq!(a.to_csv(), generate_vfb(&cfg, 5).unwrap().to_csv());
        assert_ne!(a.to_csv(), generate_vfb(&cfg, 6).unwrap().to_csv());

        cfg.nominal = cfg.gen.truth;
        cfg.gen.obs_bias = [0.0, 0.0];
        cfg.gen.noise_sigma = 0.0;
        cfg.gen.spread_omega = 0.0;
        cfg.gen.spread_zeta = 0.0;
        let quiet = generate_vfb(&cfg, 1).unwrap();
        assert!(quiet.samples().iter().all(|s| s.theta_mm.abs() < 1e-6 * cfg.gen.move_mm), "{:?}", quiet.samples()[0]);
    }

    #[test]
    fn aggregate_statistics() {
        let mut cfg = PipelineConfig::default();
        cfg.gen.samples = 20;
        cfg.train.max_rounds = 2;
        cfg.train.net.hidden_width = 6;
        let runs = run_repeated(&cfg, None, 3).unwrap();
        let results: Vec<ErsResult> = runs.into_iter().map(|(_, r)| r).collect();
        let rows = aggregate(&results);
        assert_eq!(rows.len(), 3);
        let rmse: Vec<f64> = results.iter().map(|r| r.reports[0].1.rmse).collect();
        let mean = rmse.iter().sum::<f64>() / 3.0;
        let std = (rmse.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert!((rows[0].mean[1] - mean).abs() < 1e-12);
        assert!((rows[0].std[1] - std).abs() < 1e-12);
        assert!(rows[0].csv_row().starts_with("ERS,"));
    }
}
