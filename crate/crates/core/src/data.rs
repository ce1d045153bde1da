//! Vibration samples and their CSV persistence.

use std::fmt::Write as _;
use std::path::Path;

use crate::dynamics::SystemParams;
use crate::error::{Error, Result};
use crate::shaper::{design_zvd, ImpulseSequence};

/// One experiment: a ZVD shaper designed at (`omega_hz`, `zeta`) was run on the beam and
/// left `theta_mm` of residual displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VibrationSample {
    pub omega_hz: f64,
    pub zeta: f64,
    pub theta_mm: f64,
}

impl VibrationSample {
    pub fn new(omega_hz: f64, zeta: f64, theta_mm: f64) -> Result<Self> {
        let s = Self { omega_hz, zeta, theta_mm };
        s.params()?;
        if !theta_mm.is_finite() {
            return Err(Error::domain(format!("displacement must be finite, got {theta_mm}")));
        }
        Ok(s)
    }

    pub fn params(&self) -> Result<SystemParams> {
        SystemParams::from_hz(self.omega_hz, self.zeta)
    }

    /// The shaper that was deployed for this sample.
    pub fn deployed(&self) -> ImpulseSequence {
        design_zvd(&self.params().expect("validated on construction"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Generator seed, 0 for external data.
    pub seed: u64,
    samples: Vec<VibrationSample>,
}

pub const DATASET_HEADER: &str = "id,omega_hz,zeta,theta_mm";

impl Dataset {
    pub fn new(name: impl Into<String>, seed: u64, samples: Vec<VibrationSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("dataset is empty"));
        }
        Ok(Self { name: name.into(), seed, samples })
    }

    pub fn samples(&self) -> &[VibrationSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Header `id,omega_hz,zeta,theta_mm`, LF line endings, 1-based ids.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 48);
        out.push_str(DATASET_HEADER);
        out.push('\n');
        for (i, s) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{},{:?},{:?},{:?}", i + 1, s.omega_hz, s.zeta, s.theta_mm);
        }
        out
    }

    pub fn from_csv(text: &str, name: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == DATASET_HEADER => {}
            _ => return Err(parse_err(1, format!("expected header `{DATASET_HEADER}`"))),
        }
        let mut samples = Vec::new();
        for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(parse_err(i + 1, format!("expected 4 columns, found {}", cols.len())));
            }
            let num = |j: usize, what: &str| -> Result<f64> {
                cols[j].parse().map_err(|e| parse_err(i + 1, format!("bad {what} `{}`: {e}", cols[j])))
            };
            let sample = VibrationSample::new(num(1, "omega_hz")?, num(2, "zeta")?, num(3, "theta_mm")?)
                .map_err(|e| parse_err(i + 1, e.to_string()))?;
            samples.push(sample);
        }
        Dataset::new(name, 0, samples).map_err(|e| parse_err(1, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
        Self::from_csv(&text, name, path)
    }
}
