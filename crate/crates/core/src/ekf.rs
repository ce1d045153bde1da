//! Extended Kalman filter identification of the beam parameters (omega_n, zeta).
//!
//! Each sample records the design point of a deployed ZVD shaper and the residual vibration it
//! left. The measurement model maps a candidate plant `T` to the residual the deployed shaper
//! would leave on it, `kappa * V(T, deployed)`. The parameters are taken as constant between
//! samples, so the prediction step only inflates the covariance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::VibrationSample;
use crate::dynamics::{residual_vibration_ratio, SystemParams};
use crate::error::{Error, Result};
use crate::shaper::ImpulseSequence;

pub type Mat2 = [[f64; 2]; 2];

/// Relative central-difference step used for the measurement Jacobian.
pub const JACOBIAN_REL_STEP: f64 = 1e-6;

pub const MIN_OMEGA: f64 = 1e-3;
pub const MAX_ZETA: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Process noise added to the covariance every step.
    pub q: Mat2,
    /// Measurement variance, mm^2.
    pub r: f64,
}

impl NoiseConfig {
    pub fn new(q: Mat2, r: f64) -> Result<Self> {
        if q.iter().flatten().any(|v| !v.is_finite()) || !r.is_finite() {
            return Err(Error::domain("noise covariances must be finite"));
        }
        if (q[0][1] - q[1][0]).abs() > 1e-15 * (1.0 + q[0][1].abs()) {
            return Err(Error::domain("process noise must be symmetric"));
        }
        if q[0][0] < 0.0 || q[1][1] < 0.0 || q[0][0] * q[1][1] - q[0][1] * q[1][0] < 0.0 {
            return Err(Error::domain("process noise must be positive semidefinite"));
        }
        if r <= 0.0 {
            return Err(Error::domain(format!("measurement variance must be > 0, got {r}")));
        }
        Ok(Self { q, r })
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { q: [[1e-6, 0.0], [0.0, 1e-8]], r: 0.01 }
    }
}

/// Default initial covariance over (omega_n [rad/s], zeta).
pub const DEFAULT_P0: Mat2 = [[1.0, 0.0], [0.0, 0.01]];

/// Diagonal initial covariance with entries drawn uniformly from `(0.5, 1.5) x DEFAULT_P0`.
pub fn random_p0(seed: u64) -> Mat2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: f64 = rng.gen_range(0.5..1.5);
    let b: f64 = rng.gen_range(0.5..1.5);
    [[a * DEFAULT_P0[0][0], 0.0], [0.0, b * DEFAULT_P0[1][1]]]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub estimate: SystemParams,
    pub covariance: Mat2,
    /// Number of measurements absorbed so far.
    pub step: usize,
}

impl EkfState {
    pub fn new(estimate: SystemParams, covariance: Mat2) -> Result<Self> {
        if !is_spd(&covariance) {
            return Err(Error::domain("initial covariance must be symmetric positive definite"));
        }
        Ok(Self { estimate, covariance, step: 0 })
    }

    pub fn as_vector(&self) -> [f64; 2] {
        [self.estimate.omega_n(), self.estimate.zeta()]
    }
}

/// Predicted residual displacement when `deployed` runs on a plant with parameters `t`.
pub fn measurement_model(t: &SystemParams, deployed: &ImpulseSequence, kappa: f64) -> f64 {
    kappa * residual_vibration_ratio(t, deployed)
}

fn model_at(x: [f64; 2], deployed: &ImpulseSequence, kappa: f64) -> Result<f64> {
    Ok(measurement_model(&SystemParams::new(x[0], x[1])?, deployed, kappa))
}

/// Row `[dTheta/domega_n, dTheta/dzeta]` by central differences.
///
/// `t` must be strictly interior (`zeta > 0`) so both stencil points stay valid.
pub fn jacobian(t: &SystemParams, deployed: &ImpulseSequence, kappa: f64) -> Result<[f64; 2]> {
    jacobian_with_step(t, deployed, kappa, JACOBIAN_REL_STEP)
}

pub fn jacobian_with_step(t: &SystemParams, deployed: &ImpulseSequence, kappa: f64, rel: f64) -> Result<[f64; 2]> {
    let x = [t.omega_n(), t.zeta()];
    let mut row = [0.0; 2];
    for j in 0..2 {
        let h = rel * x[j];
        if h <= 0.0 {
            return Err(Error::domain("jacobian needs a strictly interior point"));
        }
        let mut up = x;
        let mut down = x;
        up[j] += h;
        down[j] -= h;
        row[j] = (model_at(up, deployed, kappa)? - model_at(down, deployed, kappa)?) / (2.0 * h);
    }
    Ok(row)
}

/// Jacobian that falls back to one-sided differences on the boundary of the parameter box.
pub(crate) fn filter_jacobian(t: &SystemParams, deployed: &ImpulseSequence, kappa: f64) -> Result<[f64; 2]> {
    let x = [t.omega_n(), t.zeta()];
    let mut row = [0.0; 2];
    for j in 0..2 {
        let h = JACOBIAN_REL_STEP * x[j].max(1e-3);
        let mut up = x;
        let mut down = x;
        up[j] += h;
        down[j] -= h;
        let mut span = 2.0 * h;
        if j == 1 && down[1] < 0.0 {
            down[1] = x[1];
            span = h;
        }
        if j == 1 && up[1] >= 1.0 {
            up[1] = x[1];
            span = h;
        }
        row[j] = (model_at(up, deployed, kappa)? - model_at(down, deployed, kappa)?) / span;
    }
    Ok(row)
}

/// Gain and posterior covariance for a scalar measurement with sensitivity `j`.
pub fn kalman_update(prior: &Mat2, j: [f64; 2], r: f64) -> Result<([f64; 2], Mat2)> {
    let pj = [prior[0][0] * j[0] + prior[0][1] * j[1], prior[1][0] * j[0] + prior[1][1] * j[1]];
    let s = j[0] * pj[0] + j[1] * pj[1] + r;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::numerical(format!("innovation covariance is not positive ({s})")));
    }
    let gain = [pj[0] / s, pj[1] / s];
    // (I - K J) P
    let ikj = [[1.0 - gain[0] * j[0], -gain[0] * j[1]], [-gain[1] * j[0], 1.0 - gain[1] * j[1]]];
    let mut post = mat_mul(&ikj, prior);
    let off = 0.5 * (post[0][1] + post[1][0]);
    post[0][1] = off;
    post[1][0] = off;
    Ok((gain, post))
}

/// Absorb one measurement.
pub fn ekf_step(
    state: &EkfState,
    theta_meas: f64,
    deployed: &ImpulseSequence,
    noise: &NoiseConfig,
    kappa: f64,
) -> Result<EkfState> {
    let prior_cov = mat_add(&state.covariance, &noise.q);
    let j = filter_jacobian(&state.estimate, deployed, kappa)?;
    let (gain, post) = kalman_update(&prior_cov, j, noise.r)?;
    let innovation = theta_meas - measurement_model(&state.estimate, deployed, kappa);
    let x = state.as_vector();
    let omega = (x[0] + gain[0] * innovation).max(MIN_OMEGA);
    let zeta = (x[1] + gain[1] * innovation).clamp(0.0, MAX_ZETA);
    if !omega.is_finite() || !zeta.is_finite() || !is_spd(&post) {
        return Err(Error::numerical(format!("filter diverged at step {}", state.step + 1)));
    }
    Ok(EkfState { estimate: SystemParams::new(omega, zeta)?, covariance: post, step: state.step + 1 })
}

/// One pass over `samples` in order; returns the final posterior.
pub fn run_ekf_mpi(
    initial: &EkfState,
    samples: &[VibrationSample],
    noise: &NoiseConfig,
    kappa: f64,
) -> Result<EkfState> {
    if samples.is_empty() {
        return Err(Error::domain("EKF needs at least one sample"));
    }
    samples
        .iter()
        .try_fold(*initial, |state, s| ekf_step(&state, s.theta_mm, &s.deployed(), noise, kappa))
}

pub fn is_spd(m: &Mat2) -> bool {
    let sym = (m[0][1] - m[1][0]).abs() <= 1e-12 * (m[0][1].abs() + 1e-300).max(1.0);
    sym && m[0][0] > 0.0 && m[0][0] * m[1][1] - m[0][1] * m[1][0] > 0.0
}

pub fn min_eigenvalue(m: &Mat2) -> f64 {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    0.5 * tr - disc
}

fn mat_add(a: &Mat2, b: &Mat2) -> Mat2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for k in 0..2 {
            out[i][k] = a[i][0] * b[0][k] + a[i][1] * b[1][k];
        }
    }
    out
}
