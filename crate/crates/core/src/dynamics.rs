//! Second-order model of a single flexible-beam mode.
//!
//! The plant is `omega_n^2 / (s^2 + 2 zeta omega_n s + omega_n^2)`. Everything here is a pure
//! function of its inputs; frequencies are angular (rad/s) internally.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::shaper::ImpulseSequence;

/// Natural frequency and damping ratio of the beam mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    omega_n: f64,
    zeta: f64,
}

impl SystemParams {
    /// `omega_n` in rad/s, `0 <= zeta < 1`.
    pub fn new(omega_n: f64, zeta: f64) -> Result<Self> {
        if !omega_n.is_finite() || omega_n <= 0.0 {
            return Err(Error::domain(format!("natural frequency must be > 0, got {omega_n}")));
        }
        if !zeta.is_finite() || !(0.0..1.0).contains(&zeta) {
            return Err(Error::domain(format!("damping ratio must lie in [0, 1), got {zeta}")));
        }
        Ok(Self { omega_n, zeta })
    }

    /// Frequency given in Hz, as carried by the file formats.
    pub fn from_hz(omega_hz: f64, zeta: f64) -> Result<Self> {
        Self::new(2.0 * PI * omega_hz, zeta)
    }

    pub fn omega_n(&self) -> f64 {
        self.omega_n
    }

    pub fn omega_hz(&self) -> f64 {
        self.omega_n / (2.0 * PI)
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Damped frequency `omega_n * sqrt(1 - zeta^2)`.
    pub fn omega_d(&self) -> f64 {
        self.omega_n * (1.0 - self.zeta * self.zeta).sqrt()
    }

    /// Damped period `2 pi / omega_d`.
    pub fn damped_period(&self) -> f64 {
        2.0 * PI / self.omega_d()
    }

    /// Exponential decay rate `zeta * omega_n` of the free response.
    pub fn decay_rate(&self) -> f64 {
        self.zeta * self.omega_n
    }

    /// Default simulation step: 200 samples per damped period.
    pub fn default_dt(&self) -> f64 {
        self.damped_period() / 200.0
    }
}

/// Uniformly sampled displacement trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    dt: f64,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::domain(format!("sample interval must be > 0, got {dt}")));
        }
        if values.is_empty() {
            return Err(Error::domain("time series must hold at least one sample"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("time series sample {i} is not finite")));
        }
        Ok(Self { dt, values })
    }

    /// Constant level `level` held for `duration` seconds (inclusive of both ends).
    pub fn step(level: f64, dt: f64, duration: f64) -> Result<Self> {
        let n = samples_for(duration, dt)?;
        Self::new(dt, vec![level; n])
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Time of the last sample.
    pub fn duration(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.dt
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Two-column CSV `t_s,displacement_mm`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 24 + 32);
        out.push_str("t_s,displacement_mm\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{:.9},{:?}", self.time(i), v);
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "t_s,displacement_mm" => {}
            _ => return Err(parse_err(1, "expected header `t_s,displacement_mm`".into())),
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let (Some(t), Some(v), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(parse_err(i + 1, "expected two columns".into()));
            };
            let t: f64 = t.trim().parse().map_err(|e| parse_err(i + 1, format!("bad time: {e}")))?;
            let v: f64 = v.trim().parse().map_err(|e| parse_err(i + 1, format!("bad value: {e}")))?;
            times.push(t);
            values.push(v);
        }
        if times.len() < 2 {
            return Err(parse_err(1, "need at least two samples to infer the sample interval".into()));
        }
        Self::new(times[1] - times[0], values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

pub(crate) fn samples_for(duration: f64, dt: f64) -> Result<usize> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::domain(format!("sample interval must be > 0, got {dt}")));
    }
    if !duration.is_finite() || duration < 0.0 {
        return Err(Error::domain(format!("duration must be >= 0, got {duration}")));
    }
    Ok((duration / dt).round() as usize + 1)
}

/// Response at `t` to a unit impulse applied at `t_n`.
pub fn impulse_response(p: &SystemParams, t_n: f64, t: f64) -> Result<f64> {
    if !(t >= t_n) {
        return Err(Error::domain(format!("impulse response needs t >= t_n, got t={t}, t_n={t_n}")));
    }
    let tau = t - t_n;
    let root = (1.0 - p.zeta * p.zeta).sqrt();
    Ok(p.omega_n / root * (-p.decay_rate() * tau).exp() * (p.omega_d() * tau).sin())
}

/// Cosine/sine sums of an impulse train and the phase between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub c: f64,
    pub s: f64,
    /// `atan2(c, s)`; zero when both sums vanish.
    pub phi: f64,
}

pub fn response_envelope(p: &SystemParams, seq: &ImpulseSequence) -> Envelope {
    let sigma = p.decay_rate();
    let wd = p.omega_d();
    let (mut c, mut s) = (0.0, 0.0);
    for imp in seq.impulses() {
        let grow = imp.amplitude * (sigma * imp.time).exp();
        let (sin, cos) = (wd * imp.time).sin_cos();
        c += grow * cos;
        s += grow * sin;
    }
    let phi = if c == 0.0 && s == 0.0 { 0.0 } else { c.atan2(s) };
    Envelope { c, s, phi }
}

/// Residual vibration left after the last impulse, relative to one unshaped unit impulse.
pub fn residual_vibration_ratio(p: &SystemParams, seq: &ImpulseSequence) -> f64 {
    let env = response_envelope(p, seq);
    (-p.decay_rate() * seq.last_time()).exp() * env.c.hypot(env.s)
}

/// Exact zero-order-hold discretization of the (position, velocity) state-space model.
#[derive(Debug, Clone, Copy)]
pub struct Discretized {
    phi: [[f64; 2]; 2],
    gamma: [f64; 2],
}

impl Discretized {
    pub fn new(p: &SystemParams, dt: f64) -> Result<Self> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::domain(format!("sample interval must be > 0, got {dt}")));
        }
        let sigma = p.decay_rate();
        let wd = p.omega_d();
        let w2 = p.omega_n * p.omega_n;
        let decay = (-sigma * dt).exp();
        let (sin, cos) = (wd * dt).sin_cos();
        let phi = [
            [decay * (cos + sigma / wd * sin), decay * sin / wd],
            [-decay * w2 / wd * sin, decay * (cos - sigma / wd * sin)],
        ];
        // Unit DC gain: gamma = (phi - I) * A^{-1} B with A^{-1} B = [-1, 0].
        let gamma = [1.0 - phi[0][0], -phi[1][0]];
        Ok(Self { phi, gamma })
    }

    #[inline]
    pub fn step(&self, x: [f64; 2], u: f64) -> [f64; 2] {
        [
            self.phi[0][0] * x[0] + self.phi[0][1] * x[1] + self.gamma[0] * u,
            self.phi[1][0] * x[0] + self.phi[1][1] * x[1] + self.gamma[1] * u,
        ]
    }
}

/// Displacement of the plant driven by `command`, sampled every `dt` up to `horizon`.
///
/// The command is held between its own samples and keeps its final value past its end.
/// The plant starts at rest.
pub fn simulate(p: &SystemParams, command: &TimeSeries, dt: f64, horizon: f64) -> Result<TimeSeries> {
    let disc = Discretized::new(p, dt)?;
    if horizon + 1e-9 * dt < command.duration() {
        return Err(Error::domain(format!(
            "horizon {horizon} s is shorter than the command ({} s)",
            command.duration()
        )));
    }
    let n = samples_for(horizon, dt)?;
    let cmd = command.values();
    let same_grid = (command.dt() - dt).abs() <= 1e-12 * dt;
    let mut out = Vec::with_capacity(n);
    let mut x = [0.0, 0.0];
    out.push(0.0);
    for k in 0..n - 1 {
        let idx = if same_grid { k } else { ((k as f64 * dt) / command.dt() + 1e-9).floor() as usize };
        let u = cmd[idx.min(cmd.len() - 1)];
        x = disc.step(x, u);
        out.push(x[0]);
    }
    TimeSeries::new(dt, out)
}
