use vibshape::data::Dataset;
use vibshape::pipeline::{generate_vfb, run_ers, KappaPolicy, PipelineConfig};

fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.gen.samples = 40;
    cfg.train.max_rounds = 10;
    cfg
}

#[test]
fn corrected_parameters_compose_exactly() {
    let cfg = small_config();
    let data = generate_vfb(&cfg, cfg.seed).unwrap();
    let r = run_ers(&cfg, &data).unwrap();
    assert_eq!(r.t_r.omega_n(), r.t_ekf.omega_n() + r.delta_t[0]);
    assert_eq!(r.t_r.zeta(), r.t_ekf.zeta() + r.delta_t[1]);
    assert!(r.delta_t[0].abs() <= 0.05 * r.t_ekf.omega_n());
    assert!(r.delta_t[1].abs() <= 0.02);
}

#[test]
fn split_and_timing_bookkeeping() {
    let cfg = small_config();
    let data = generate_vfb(&cfg, 1).unwrap();
    let r = run_ers(&cfg, &data).unwrap();
    assert_eq!(r.train_idx.len(), 36);
    assert_eq!(r.test_idx.len(), 4);
    assert!(r.train_idx.iter().all(|i| !r.test_idx.contains(i)));
    assert_eq!(r.timing.total_s, r.timing.ekf_s + r.timing.resnn_s);
    assert_eq!(r.reports.iter().map(|(m, _)| m.as_str()).collect::<Vec<_>>(), ["ERS", "EKF-only", "ZVD"]);
    assert!(r.reports.iter().all(|(_, m)| m.n == 4));
}

#[test]
fn same_inputs_same_outputs() {
    let cfg = small_config();
    let data = generate_vfb(&cfg, 2).unwrap();
    let a = run_ers(&cfg, &data).unwrap();
    let b = run_ers(&cfg, &data).unwrap();
    assert_eq!(a.t_r, b.t_r);
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.predictions, b.predictions);
}

#[test]
fn unbiased_noise_free_data_favours_identified_models() {
    let mut cfg = small_config();
    cfg.gen.obs_bias = [0.0, 0.0];
    cfg.gen.noise_sigma = 0.0;
    let data = generate_vfb(&cfg, 6).unwrap();
    let r = run_ers(&cfg, &data).unwrap();
    let rmse = |m: usize| r.reports[m].1.rmse;
    assert!(rmse(0) < rmse(2) && rmse(1) < rmse(2), "{:?}", r.reports);
}

#[test]
fn first_sample_kappa_policy() {
    let mut cfg = small_config();
    cfg.kappa = KappaPolicy::FirstSample;
    let data = generate_vfb(&cfg, 3).unwrap();
    let r = run_ers(&cfg, &data).unwrap();
    let first = data.samples()[r.train_idx[0]];
    let v = vibshape::dynamics::residual_vibration_ratio(&cfg.nominal, &first.deployed());
    assert_eq!(r.kappa, first.theta_mm / v);
}

#[test]
fn tiny_datasets_are_rejected_with_a_domain_error() {
    let cfg = small_config();
    let data = Dataset::new("tiny", 0, generate_vfb(&cfg, 1).unwrap().samples()[..2].to_vec()).unwrap();
    let err = run_ers(&cfg, &data).unwrap_err();
    assert!(!err.is_numerical());
}

#[test]
fn dataset_golden_file() {
    let mut cfg = PipelineConfig::default();
    cfg.gen.samples = 3;
    let text = generate_vfb(&cfg, 42).unwrap().to_csv();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "id,omega_hz,zeta,theta_mm");
    assert_eq!(lines.len(), 4);
    assert!(!text.contains('\r'));
    let reparsed = Dataset::from_csv(&text, "g", std::path::Path::new("mem")).unwrap();
    assert_eq!(reparsed.to_csv(), text);
}
