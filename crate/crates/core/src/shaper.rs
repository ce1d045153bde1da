//! ZVD impulse sequences and command shaping.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::dynamics::{SystemParams, TimeSeries};
use crate::error::{Error, Result};

/// Tolerance on `sum(A_i) == 1`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Impulse {
    pub amplitude: f64,
    /// Seconds after the command starts.
    pub time: f64,
}

impl Impulse {
    pub fn new(amplitude: f64, time: f64) -> Self {
        Self { amplitude, time }
    }
}

/// Ordered impulse train starting at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseSequence {
    impulses: Vec<Impulse>,
}

impl ImpulseSequence {
    /// A normalized sequence: amplitudes must sum to one.
    pub fn new(impulses: Vec<Impulse>) -> Result<Self> {
        let seq = Self::from_raw(impulses)?;
        let sum = seq.amplitude_sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::domain(format!("impulse amplitudes sum to {sum}, expected 1")));
        }
        Ok(seq)
    }

    /// Same ordering rules as [`ImpulseSequence::new`] without the normalization constraint.
    pub fn from_raw(impulses: Vec<Impulse>) -> Result<Self> {
        let Some(first) = impulses.first() else {
            return Err(Error::domain("impulse sequence is empty"));
        };
        if first.time != 0.0 {
            return Err(Error::domain(format!("first impulse must sit at t = 0, got {}", first.time)));
        }
        if impulses.iter().any(|i| !i.amplitude.is_finite() || !i.time.is_finite()) {
            return Err(Error::domain("impulse sequence contains non-finite values"));
        }
        if impulses.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::domain("impulse times must be strictly increasing"));
        }
        Ok(Self { impulses })
    }

    /// Single unit impulse at zero: shaping with it leaves a command unchanged.
    pub fn identity() -> Self {
        Self { impulses: vec![Impulse::new(1.0, 0.0)] }
    }

    pub fn impulses(&self) -> &[Impulse] {
        &self.impulses
    }

    pub fn len(&self) -> usize {
        self.impulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.impulses.is_empty()
    }

    pub fn last_time(&self) -> f64 {
        self.impulses[self.impulses.len() - 1].time
    }

    pub fn amplitude_sum(&self) -> f64 {
        self.impulses.iter().map(|i| i.amplitude).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.amplitude_sum() - 1.0).abs() <= NORMALIZATION_TOL
    }

    /// Every amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_raw(self.impulses.iter().map(|i| Impulse::new(i.amplitude * factor, i.time)).collect())
    }

    /// CSV with header `A,t_s`, one impulse per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("A,t_s\n");
        for i in &self.impulses {
            let _ = writeln!(out, "{:?},{:?}", i.amplitude, i.time);
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "A,t_s" => {}
            _ => return Err(parse_err(1, "expected header `A,t_s`".into())),
        }
        let mut impulses = Vec::new();
        for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(parse_err(i + 1, "expected two columns".into()));
            }
            let a = cols[0].parse().map_err(|e| parse_err(i + 1, format!("bad amplitude: {e}")))?;
            let t = cols[1].parse().map_err(|e| parse_err(i + 1, format!("bad time: {e}")))?;
            impulses.push(Impulse::new(a, t));
        }
        Self::from_raw(impulses).map_err(|e| parse_err(1, e.to_string()))
    }
}

/// Three-impulse zero-vibration-derivative shaper for `p`.
pub fn design_zvd(p: &SystemParams) -> ImpulseSequence {
    let zeta = p.zeta();
    let k = (-zeta * PI / (1.0 - zeta * zeta).sqrt()).exp();
    let c = 1.0 + 2.0 * k + k * k;
    let td = p.damped_period();
    ImpulseSequence {
        impulses: vec![
            Impulse::new(1.0 / c, 0.0),
            Impulse::new(2.0 * k / c, td / 2.0),
            Impulse::new(k * k / c, td),
        ],
    }
}

/// Convolve `cmd` with the impulse train.
///
/// Impulse times are snapped to the nearest sample of `cmd`. The command is taken to hold its
/// final value after it ends, so the output is `t_N` longer than the input and settles at the
/// same final level when the amplitudes sum to one.
pub fn shape_command(cmd: &TimeSeries, seq: &ImpulseSequence) -> TimeSeries {
    let dt = cmd.dt();
    let src = cmd.values();
    let last = cmd.last();
    let taps: Vec<(usize, f64)> =
        seq.impulses().iter().map(|i| ((i.time / dt).round() as usize, i.amplitude)).collect();
    let shift = taps.last().map_or(0, |t| t.0);
    let n = src.len() + shift;
    let out = (0..n)
        .map(|k| {
            taps.iter()
                .filter(|(off, _)| k >= *off)
                .map(|&(off, a)| a * src.get(k - off).copied().unwrap_or(last))
                .sum()
        })
        .collect();
    TimeSeries::new(dt, out).expect("convolution of finite samples is finite")
}
