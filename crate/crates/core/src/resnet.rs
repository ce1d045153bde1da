//! Residual network that learns the observation error left by the EKF model.
//!
//! Layers are numbered from 1. Hidden layers use a sigmoid, the penultimate layer is linear and
//! the output is `alpha * (w_o . h + b_o)`. A shortcut `(from, to)` adds the output of layer
//! `from` to the pre-activation of layer `to`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::VibrationSample;
use crate::dynamics::SystemParams;
use crate::ekf::{filter_jacobian, measurement_model, MAX_ZETA, MIN_OMEGA};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shortcut {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub penult_width: usize,
    pub alpha: f64,
    /// Weights start uniform in `[-init_scale, init_scale]`; biases start at zero.
    pub init_scale: f64,
    pub shortcuts: Vec<Shortcut>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden_width: 40,
            hidden_layers: 7,
            penult_width: 2,
            alpha: 1.0,
            init_scale: 0.5,
            shortcuts: vec![Shortcut { from: 2, to: 4 }, Shortcut { from: 5, to: 7 }],
        }
    }
}

impl NetConfig {
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![2];
        dims.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        dims.push(self.penult_width);
        dims.push(1);
        dims
    }
}

/// Affine map of (omega in Hz, zeta) onto the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputNorm {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl InputNorm {
    pub fn identity() -> Self {
        Self { lo: [0.0, 0.0], hi: [1.0, 1.0] }
    }

    /// Bounds from the min and max of the samples; a degenerate span maps to width one.
    pub fn fit(samples: &[VibrationSample]) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for s in samples {
            for (k, v) in [s.omega_hz, s.zeta].into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        for k in 0..2 {
            if !(hi[k] > lo[k]) {
                hi[k] = lo[k] + 1.0;
            }
        }
        Self { lo, hi }
    }

    pub fn apply(&self, omega_hz: f64, zeta: f64) -> [f64; 2] {
        [(omega_hz - self.lo[0]) / (self.hi[0] - self.lo[0]), (zeta - self.lo[1]) / (self.hi[1] - self.lo[1])]
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        x.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Label scaling: the net's raw output `y` stands for `offset + scale * y` millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelNorm {
    pub offset: f64,
    pub scale: f64,
}

impl LabelNorm {
    pub fn identity() -> Self {
        Self { offset: 0.0, scale: 1.0 }
    }

    pub fn encode(&self, mm: f64) -> f64 {
        (mm - self.offset) / self.scale
    }

    pub fn decode(&self, y: f64) -> f64 {
        self.offset + self.scale * y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResNet {
    dims: Vec<usize>,
    /// `weights[l]` is row-major `dims[l+1] x dims[l]`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    alpha: f64,
    shortcuts: Vec<Shortcut>,
    pub input_norm: InputNorm,
    pub label_norm: LabelNorm,
}

/// Activations of one forward pass. `act[0]` is the input, `act[l]` the output of layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub pre: Vec<Vec<f64>>,
    pub act: Vec<Vec<f64>>,
    pub output: f64,
}

impl ForwardCache {
    pub fn penult(&self) -> &[f64] {
        &self.act[self.act.len() - 2]
    }
}

/// Gradients laid out like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    /// Same ordering as [`ResNet::params`].
    pub fn flatten(&self) -> Vec<f64> {
        flatten(&self.weights, &self.biases)
    }
}

fn flatten(w: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    w.iter().zip(b).flat_map(|(w, b)| w.iter().chain(b).copied()).collect()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ResNet {
    /// Seeded random initialization.
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(cfg)?;
        if !(cfg.init_scale >= 0.0) || !cfg.init_scale.is_finite() {
            return Err(Error::Config(format!("init_scale must be finite and >= 0, got {}", cfg.init_scale)));
        }
        if cfg.init_scale > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for w in net.weights.iter_mut().flatten() {
                *w = rng.gen_range(-cfg.init_scale..cfg.init_scale);
            }
        }
        Ok(net)
    }

    /// All weights and biases zero.
    pub fn zeros(cfg: &NetConfig) -> Result<Self> {
        let dims = cfg.dims();
        if cfg.hidden_layers == 0 || cfg.hidden_width == 0 || cfg.penult_width == 0 {
            return Err(Error::Config("network widths and depth must be positive".into()));
        }
        if !cfg.alpha.is_finite() {
            return Err(Error::Config("alpha must be finite".into()));
        }
        let weights = dims.windows(2).map(|d| vec![0.0; d[0] * d[1]]).collect();
        let biases = dims[1..].iter().map(|&n| vec![0.0; n]).collect();
        let net = Self {
            dims,
            weights,
            biases,
            alpha: cfg.alpha,
            shortcuts: cfg.shortcuts.clone(),
            input_norm: InputNorm::identity(),
            label_norm: LabelNorm::identity(),
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let layers = self.dims.len() - 1;
        if self.dims.len() < 3 || self.dims[0] != 2 || self.dims[layers] != 1 {
            return Err(Error::Config(format!("bad layer dims {:?}", self.dims)));
        }
        for (l, d) in self.dims.windows(2).enumerate() {
            if self.weights[l].len() != d[0] * d[1] || self.biases[l].len() != d[1] {
                return Err(Error::Config(format!("layer {} parameters do not match dims", l + 1)));
            }
        }
        for s in &self.shortcuts {
            if s.from == 0 || s.from >= s.to || s.to >= layers {
                return Err(Error::Config(format!("shortcut {}->{} is out of range", s.from, s.to)));
            }
            if self.dims[s.from] != self.dims[s.to] {
                return Err(Error::Config(format!(
                    "shortcut {}->{} joins widths {} and {}",
                    s.from, s.to, self.dims[s.from], self.dims[s.to]
                )));
            }
        }
        let finite = |v: &Vec<Vec<f64>>| v.iter().flatten().all(|x| x.is_finite());
        if !finite(&self.weights) || !finite(&self.biases) || !self.alpha.is_finite() {
            return Err(Error::numerical("network parameters are not finite"));
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha;
    }

    pub fn shortcuts(&self) -> &[Shortcut] {
        &self.shortcuts
    }

    pub fn set_shortcuts(&mut self, shortcuts: Vec<Shortcut>) -> Result<()> {
        let old = std::mem::replace(&mut self.shortcuts, shortcuts);
        self.validate().inspect_err(|_| self.shortcuts = old.clone())
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer - 1]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer - 1]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer - 1]
    }

    /// Weights then biases, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        flatten(&self.weights, &self.biases)
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let mut i = index;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if i < w.len() {
                w[i] = value;
                return;
            }
            i -= w.len();
            if i < b.len() {
                b[i] = value;
                return;
            }
            i -= b.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// Forward pass on an already normalized input.
    pub fn forward(&self, x: [f64; 2]) -> ForwardCache {
        let layers = self.dims.len() - 1;
        let mut pre = Vec::with_capacity(layers);
        let mut act = Vec::with_capacity(layers + 1);
        act.push(x.to_vec());
        for l in 0..layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.weights[l];
            let input = &act[l];
            let mut z: Vec<f64> = (0..n_out)
                .map(|i| self.biases[l][i] + w[i * n_in..(i + 1) * n_in].iter().zip(input).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            for s in self.shortcuts.iter().filter(|s| s.to == l + 1) {
                for (zi, hi) in z.iter_mut().zip(&act[s.from]) {
                    *zi += hi;
                }
            }
            let h = if l < layers - 2 {
                z.iter().map(|&v| sigmoid(v)).collect()
            } else if l == layers - 1 {
                vec![self.alpha * z[0]]
            } else {
                z.clone()
            };
            pre.push(z);
            act.push(h);
        }
        let output = act[layers][0];
        ForwardCache { pre, act, output }
    }

    /// Compensation in millimetres at a raw (omega in Hz, zeta) input.
    pub fn predict(&self, omega_hz: f64, zeta: f64) -> f64 {
        self.label_norm.decode(self.forward(self.input_norm.apply(omega_hz, zeta)).output)
    }

    /// Gradient of `0.5 * (y - target)^2` with respect to every parameter.
    pub fn gradients(&self, cache: &ForwardCache, target: f64) -> Gradients {
        let layers = self.dims.len() - 1;
        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut skip: Vec<Option<Vec<f64>>> = vec![None; layers + 1];
        // dE/d act[l + 1]
        let mut g = vec![cache.output - target];
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let dz: Vec<f64> = if l == layers - 1 {
                vec![g[0] * self.alpha]
            } else if l == layers - 2 {
                g.clone()
            } else {
                g.iter().zip(&cache.act[l + 1]).map(|(g, h)| g * h * (1.0 - h)).collect()
            };
            for s in self.shortcuts.iter().filter(|s| s.to == l + 1) {
                let slot = skip[s.from].get_or_insert_with(|| vec![0.0; n_out]);
                slot.iter_mut().zip(&dz).for_each(|(a, d)| *a += d);
            }
            let input = &cache.act[l];
            for i in 0..n_out {
                let row = &mut gw[l][i * n_in..(i + 1) * n_in];
                row.iter_mut().zip(input).for_each(|(gw, x)| *gw = dz[i] * x);
            }
            gb[l].copy_from_slice(&dz);
            let w = &self.weights[l];
            let mut prev = vec![0.0; n_in];
            for (i, d) in dz.iter().enumerate() {
                prev.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]).for_each(|(p, w)| *p += w * d);
            }
            if let Some(extra) = skip[l].take() {
                prev.iter_mut().zip(extra).for_each(|(p, e)| *p += e);
            }
            g = prev;
        }
        Gradients { weights: gw, biases: gb }
    }

    /// Plain gradient step with one rate per layer.
    pub fn apply_gradients(&mut self, grads: &Gradients, rates: &[f64]) {
        for (l, rho) in rates.iter().enumerate().take(self.weights.len()) {
            self.weights[l].iter_mut().zip(&grads.weights[l]).for_each(|(w, g)| *w -= rho * g);
            self.biases[l].iter_mut().zip(&grads.biases[l]).for_each(|(b, g)| *b -= rho * g);
        }
    }

    /// One stochastic update towards `target` (in normalized label units).
    pub fn backward_update(&mut self, cache: &ForwardCache, target: f64, rho: f64) {
        let grads = self.gradients(cache, target);
        let rates = vec![rho; self.weights.len()];
        self.apply_gradients(&grads, &rates);
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let mut out = String::from("resnet 1\n");
        let _ = writeln!(out, "dims {}", self.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" "));
        let _ = writeln!(out, "alpha {:?}", self.alpha);
        let sc: Vec<String> = self.shortcuts.iter().map(|s| format!("{}>{}", s.from, s.to)).collect();
        let _ = writeln!(out, "shortcuts {}", sc.join(" "));
        let _ = writeln!(out, "input_lo {}", join(&self.input_norm.lo));
        let _ = writeln!(out, "input_hi {}", join(&self.input_norm.hi));
        let _ = writeln!(out, "label {:?} {:?}", self.label_norm.offset, self.label_norm.scale);
        for l in 0..self.weights.len() {
            let _ = writeln!(out, "w{} {}", l + 1, join(&self.weights[l]));
            let _ = writeln!(out, "b{} {}", l + 1, join(&self.biases[l]));
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut field = |key: &str| -> Result<(usize, Vec<String>)> {
            let (i, line) = lines.next().ok_or_else(|| err(0, format!("missing `{key}`")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(err(i + 1, format!("expected `{key}`")));
            }
            Ok((i + 1, parts.map(str::to_owned).collect()))
        };
        let nums = |line: usize, parts: &[String]| -> Result<Vec<f64>> {
            parts.iter().map(|p| p.parse::<f64>().map_err(|e| err(line, format!("bad number `{p}`: {e}")))).collect()
        };
        let (i, v) = field("resnet")?;
        if v != ["1"] {
            return Err(err(i, "unsupported model version".into()));
        }
        let (i, v) = field("dims")?;
        let dims: Vec<usize> =
            v.iter().map(|d| d.parse().map_err(|e| err(i, format!("bad dim `{d}`: {e}")))).collect::<Result<_>>()?;
        let (i, v) = field("alpha")?;
        let alpha = *nums(i, &v)?.first().ok_or_else(|| err(i, "missing alpha".into()))?;
        let (i, v) = field("shortcuts")?;
        let shortcuts = v
            .iter()
            .map(|s| {
                let (a, b) = s.split_once('>').ok_or_else(|| err(i, format!("bad shortcut `{s}`")))?;
                let p = |x: &str| x.parse::<usize>().map_err(|e| err(i, format!("bad shortcut `{s}`: {e}")));
                Ok(Shortcut { from: p(a)?, to: p(b)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut pair = |key: &str| -> Result<[f64; 2]> {
            let (i, v) = field(key)?;
            let n = nums(i, &v)?;
            <[f64; 2]>::try_from(n.as_slice()).map_err(|_| err(i, format!("`{key}` needs two numbers")))
        };
        let lo = pair("input_lo")?;
        let hi = pair("input_hi")?;
        let label = pair("label")?;
        if dims.len() < 3 {
            return Err(err(i, "too few layers".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 1..dims.len() {
            let (i, v) = field(&format!("w{l}"))?;
            weights.push(nums(i, &v)?);
            let (i, v) = field(&format!("b{l}"))?;
            biases.push(nums(i, &v)?);
        }
        let net = Self {
            dims,
            weights,
            biases,
            alpha,
            shortcuts,
            input_norm: InputNorm { lo, hi },
            label_norm: LabelNorm { offset: label[0], scale: label[1] },
        };
        net.validate().map_err(|e| err(0, e.to_string()))?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// `0.5 * sum((measured - predicted)^2)`.
pub fn loss(predicted: &[f64], measured: &[f64]) -> Result<f64> {
    if predicted.len() != measured.len() {
        return Err(Error::domain(format!("length mismatch: {} vs {}", predicted.len(), measured.len())));
    }
    if predicted.is_empty() {
        return Err(Error::domain("loss of empty inputs"));
    }
    Ok(0.5 * predicted.iter().zip(measured).map(|(p, m)| (m - p) * (m - p)).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelScaling {
    /// Centre and scale by the mean and standard deviation of the training residuals.
    Auto,
    Fixed(LabelNorm),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub rho: f64,
    /// Per-layer rates; `None` uses `rho` everywhere.
    pub layer_rates: Option<Vec<f64>>,
    pub max_rounds: usize,
    /// Stop once the objective changes by less than this between rounds. Zero runs every round.
    pub tol: f64,
    pub seed: u64,
    /// Input bounds; `None` fits them to the training samples.
    pub input_bounds: Option<InputNorm>,
    /// Bound on each correction component; `None` gives `[0.05 * omega_ekf, 0.02]`.
    pub delta_scale: Option<[f64; 2]>,
    pub labels: LabelScaling,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rho: 0.01,
            layer_rates: None,
            max_rounds: 100,
            tol: 1e-4,
            seed: 0,
            input_bounds: None,
            delta_scale: None,
            labels: LabelScaling::Auto,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::Config(format!("rho must be > 0, got {}", self.rho)));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be >= 1".into()));
        }
        if !(self.tol >= 0.0) || !self.tol.is_finite() {
            return Err(Error::Config(format!("tol must be >= 0, got {}", self.tol)));
        }
        if let Some(r) = &self.layer_rates {
            if r.len() != self.net.dims().len() - 1 || r.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::Config("layer_rates needs one positive rate per layer".into()));
            }
        }
        if let Some(d) = self.delta_scale {
            if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config("delta_scale must be finite and >= 0".into()));
            }
        }
        if let LabelScaling::Fixed(n) = self.labels {
            if !n.offset.is_finite() || !(n.scale > 0.0) || !n.scale.is_finite() {
                return Err(Error::Config("label scale must be > 0 and finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    /// Sum of absolute residuals, mm.
    pub upsilon: f64,
    /// Half the sum of squared residuals, mm^2.
    pub e: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ResNet,
    /// Correction (d omega_n in rad/s, d zeta).
    pub delta_t: [f64; 2],
    pub corrected: SystemParams,
    pub rounds: usize,
    pub converged: bool,
    /// Round 0 is the untrained network.
    pub log: Vec<RoundLog>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("round,upsilon,E\n");
        for r in &self.log {
            let _ = writeln!(out, "{},{:?},{:?}", r.round, r.upsilon, r.e);
        }
        out
    }
}

/// Observation error of each sample that the physical model leaves unexplained.
pub fn observation_residuals(samples: &[VibrationSample], t_ekf: &SystemParams, kappa: f64) -> Vec<f64> {
    samples.iter().map(|s| s.theta_mm - measurement_model(t_ekf, &s.deployed(), kappa)).collect()
}

/// Train the compensation network on the EKF residuals and map it to a parameter correction.
///
/// The net learns `theta - kappa * V(T_ekf)` per sample, one stochastic step per sample in
/// dataset order. The correction is the least-squares parameter step whose first-order effect on
/// the measurement model best matches the learned compensation.
pub fn train_resnn_oec(
    samples: &[VibrationSample],
    t_ekf: &SystemParams,
    kappa: f64,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::domain("training needs at least one sample"));
    }
    let residuals = observation_residuals(samples, t_ekf, kappa);
    let mut net = ResNet::new(&cfg.net, cfg.seed)?;
    net.input_norm = cfg.input_bounds.unwrap_or_else(|| InputNorm::fit(samples));
    net.label_norm = match cfg.labels {
        LabelScaling::Fixed(n) => n,
        LabelScaling::Auto => {
            let n = residuals.len() as f64;
            let mean = residuals.iter().sum::<f64>() / n;
            let var = residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
            LabelNorm { offset: mean, scale: if var > 0.0 { var.sqrt() } else { 1.0 } }
        }
    };
    let inputs: Vec<[f64; 2]> = samples.iter().map(|s| net.input_norm.apply(s.omega_hz, s.zeta)).collect();
    let targets: Vec<f64> = residuals.iter().map(|&r| net.label_norm.encode(r)).collect();
    let rates = cfg.layer_rates.clone().unwrap_or_else(|| vec![cfg.rho; net.weights.len()]);

    let objective = |net: &ResNet, round: usize| -> Result<RoundLog> {
        let (mut upsilon, mut sq) = (0.0, 0.0);
        for (x, r) in inputs.iter().zip(&residuals) {
            let d = r - net.label_norm.decode(net.forward(*x).output);
            upsilon += d.abs();
            sq += d * d;
        }
        if !upsilon.is_finite() || !sq.is_finite() {
            return Err(Error::numerical(format!("training diverged in round {round}")));
        }
        Ok(RoundLog { round, upsilon, e: 0.5 * sq })
    };

    let mut log = vec![objective(&net, 0)?];
    let mut converged = false;
    for round in 1..=cfg.max_rounds {
        for (x, t) in inputs.iter().zip(&targets) {
            let cache = net.forward(*x);
            let grads = net.gradients(&cache, *t);
            net.apply_gradients(&grads, &rates);
        }
        let entry = objective(&net, round)?;
        let change = (log[log.len() - 1].upsilon - entry.upsilon).abs();
        log.push(entry);
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    net.validate()?;

    let compensation: Vec<f64> = samples.iter().map(|s| net.predict(s.omega_hz, s.zeta)).collect();
    let scale = cfg.delta_scale.unwrap_or([0.05 * t_ekf.omega_n(), 0.02]);
    let delta_t = project_correction(samples, t_ekf, kappa, &compensation, scale)?;
    let corrected = SystemParams::new(t_ekf.omega_n() + delta_t[0], t_ekf.zeta() + delta_t[1])?;
    Ok(TrainOutcome { net, delta_t, corrected, rounds: log.len() - 1, converged, log })
}

/// Least-squares `d` with `J_i . d ~ c_i`, bounded by `scale` and kept inside the parameter box.
fn project_correction(
    samples: &[VibrationSample],
    t: &SystemParams,
    kappa: f64,
    compensation: &[f64],
    scale: [f64; 2],
) -> Result<[f64; 2]> {
    // Normal equations in units of `scale` so both columns are comparable.
    let mut a = [[0.0; 2]; 2];
    let mut b = [0.0; 2];
    for (s, c) in samples.iter().zip(compensation) {
        let j = filter_jacobian(t, &s.deployed(), kappa)?;
        let js = [j[0] * scale[0], j[1] * scale[1]];
        for r in 0..2 {
            b[r] += js[r] * c;
            for k in 0..2 {
                a[r][k] += js[r] * js[k];
            }
        }
    }
    let ridge = 1e-9 * (a[0][0] + a[1][1]) + 1e-300;
    a[0][0] += ridge;
    a[1][1] += ridge;
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let u = if det > 0.0 && det.is_finite() {
        [(a[1][1] * b[0] - a[0][1] * b[1]) / det, (a[0][0] * b[1] - a[1][0] * b[0]) / det]
    } else {
        [0.0, 0.0]
    };
    let mut d = [u[0].clamp(-1.0, 1.0) * scale[0], u[1].clamp(-1.0, 1.0) * scale[1]];
    if !d.iter().all(|v| v.is_finite()) {
        return Err(Error::numerical("parameter correction is not finite"));
    }
    d[0] = d[0].max(MIN_OMEGA - t.omega_n());
    d[1] = d[1].clamp(-t.zeta(), MAX_ZETA - t.zeta());
    Ok(d)
}
