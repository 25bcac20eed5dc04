//! Small dense networks with manual reverse-mode gradients.
//!
//! A [`Net`] is a stack of affine layers, each followed by a nonlinearity and
//! optionally a residual skip (`y = act(Wx + b) + x`, square layers only).
//! Gradients are accumulated into a [`GradientSet`] that mirrors the layer
//! shapes, and [`Adam`] applies them in a fixed layer/weight/bias order.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{fnv1a64, stream_from_seed};

const CHECKPOINT_HEADER: &str = "eiw-net v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a = act(z)`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub outputs: usize,
    pub activation: Activation,
    pub residual: bool,
}

/// Input width plus the ordered layer list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub inputs: usize,
    pub layers: Vec<LayerSpec>,
}

/// Capacity tiers of the policy backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tier {
    /// One hidden layer of 32 units.
    Small,
    /// Two hidden layers of 128 units.
    Medium,
    /// Three hidden layers of 256 units with residual skips.
    Large,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Small, Tier::Medium, Tier::Large];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Small => "small",
            Tier::Medium => "medium",
            Tier::Large => "large",
        }
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "small" => Ok(Tier::Small),
            "medium" => Ok(Tier::Medium),
            "large" => Ok(Tier::Large),
            other => Err(Error::Config(format!("unknown tier `{other}` (small|medium|large)"))),
        }
    }
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Architecture {
    /// Plain multilayer perceptron with an identity output layer.
    pub fn mlp(inputs: usize, hidden: &[usize], outputs: usize, activation: Activation) -> Self {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&h| LayerSpec {
                outputs: h,
                activation,
                residual: false,
            })
            .collect();
        layers.push(LayerSpec {
            outputs,
            activation: Activation::Identity,
            residual: false,
        });
        Self { inputs, layers }
    }

    pub fn tier(tier: Tier, inputs: usize, outputs: usize) -> Self {
        match tier {
            Tier::Small => Self::mlp(inputs, &[32], outputs, Activation::Tanh),
            Tier::Medium => Self::mlp(inputs, &[128, 128], outputs, Activation::Tanh),
            Tier::Large => {
                let mut arch = Self::mlp(inputs, &[256, 256, 256], outputs, Activation::Tanh);
                arch.layers[1].residual = true;
                arch.layers[2].residual = true;
                arch
            }
        }
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(self.inputs, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        let mut fan_in = self.inputs;
        let mut total = 0;
        for l in &self.layers {
            total += fan_in * l.outputs + l.outputs;
            fan_in = l.outputs;
        }
        total
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.layers.is_empty() {
            return Err(Error::Config("architecture needs inputs and at least one layer".into()));
        }
        let mut fan_in = self.inputs;
        for (i, l) in self.layers.iter().enumerate() {
            if l.outputs == 0 {
                return Err(Error::Config(format!("layer {i} has zero width")));
            }
            if l.residual && l.outputs != fan_in {
                return Err(Error::Config(format!(
                    "residual layer {i} maps {fan_in} -> {} and cannot skip",
                    l.outputs
                )));
            }
            fan_in = l.outputs;
        }
        Ok(())
    }

    /// Descriptor such as `6 32:tanh 32:tanh:res 5:identity`.
    pub fn descriptor(&self) -> String {
        let mut s = self.inputs.to_string();
        for l in &self.layers {
            let _ = write!(s, " {}:{}", l.outputs, l.activation.as_str());
            if l.residual {
                s.push_str(":res");
            }
        }
        s
    }

    pub fn parse_descriptor(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let inputs = parts
            .next()
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad architecture descriptor `{s}`")))?;
        let layers = parts
            .map(|p| {
                let mut f = p.split(':');
                let outputs = f
                    .next()
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| Error::Config(format!("bad layer `{p}`")))?;
                let activation = f.next().unwrap_or("identity").parse()?;
                let residual = match f.next() {
                    None => false,
                    Some("res") => true,
                    Some(other) => return Err(Error::Config(format!("bad layer flag `{other}`"))),
                };
                Ok(LayerSpec {
                    outputs,
                    activation,
                    residual,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let arch = Architecture { inputs, layers };
        arch.validate()?;
        Ok(arch)
    }
}

/// Affine layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub residual: bool,
}

/// Dot product with four independent accumulators, which lets the compiler
/// vectorize the loop.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Dense {
    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let z = self.bias[o] + dot(row, x);
            out.push(self.activation.apply(z));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    arch: Architecture,
    pub layers: Vec<Dense>,
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input of each layer.
    inputs: Vec<Vec<f64>>,
    /// Activation output of each layer, before any residual add.
    activations: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl Net {
    /// Glorot-uniform hidden weights; zero output weights and zero biases.
    pub fn build(arch: &Architecture, seed: u64) -> Result<Net> {
        arch.validate()?;
        let mut rng = stream_from_seed(seed);
        let n_layers = arch.layers.len();
        let mut fan_in = arch.inputs;
        let mut layers = Vec::with_capacity(n_layers);
        for (i, spec) in arch.layers.iter().enumerate() {
            let n = fan_in * spec.outputs;
            let weights = if i + 1 == n_layers {
                vec![0.0; n]
            } else {
                let a = (6.0 / (fan_in + spec.outputs) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..=a)).collect()
            };
            layers.push(Dense {
                inputs: fan_in,
                outputs: spec.outputs,
                weights,
                bias: vec![0.0; spec.outputs],
                activation: spec.activation,
                residual: spec.residual,
            });
            fan_in = spec.outputs;
        }
        Ok(Net {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.inputs
    }

    pub fn output_dim(&self) -> usize {
        self.arch.outputs()
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.arch.inputs {
            return Err(Error::Contract(format!(
                "net expects {} inputs, got {}",
                self.arch.inputs,
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut y = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&x, &mut y);
            if layer.residual {
                y.iter_mut().zip(&x).for_each(|(a, b)| *a += b);
            }
            std::mem::swap(&mut x, &mut y);
        }
        Ok(x)
    }

    pub fn trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut a = Vec::with_capacity(layer.outputs);
            layer.forward_into(&x, &mut a);
            let mut y = a.clone();
            if layer.residual {
                y.iter_mut().zip(&x).for_each(|(v, s)| *v += s);
            }
            inputs.push(x);
            activations.push(a);
            x = y;
        }
        Ok(Trace {
            inputs,
            activations,
            output: x,
        })
    }

    /// Adds the gradient of `output_grad . f(input)` to `grads`.
    pub fn accumulate(&self, trace: &Trace, output_grad: &[f64], grads: &mut GradientSet) -> Result<()> {
        if output_grad.len() != self.output_dim() {
            return Err(Error::Contract(format!(
                "output gradient has {} entries, net emits {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Contract("gradient set does not match net".into()));
        }
        let mut dy = output_grad.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[li];
            let a = &trace.activations[li];
            let dz: Vec<f64> = dy
                .iter()
                .zip(a)
                .map(|(g, &act)| g * layer.activation.derivative(act))
                .collect();
            let (gw, gb) = &mut grads.layers[li];
            let mut dx = if layer.residual { dy.clone() } else { vec![0.0; layer.inputs] };
            for (o, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                if li == 0 {
                    grow.iter_mut().zip(x).for_each(|(g, xi)| *g += d * xi);
                    continue;
                }
                for ((g, xi), (dxi, w)) in grow.iter_mut().zip(x).zip(dx.iter_mut().zip(row)) {
                    *g += d * xi;
                    *dxi += d * w;
                }
            }
            dy = dx;
        }
        Ok(())
    }

    /// Exact gradient of `output_grad . f(input)` with respect to all parameters.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<GradientSet> {
        let trace = self.trace(input)?;
        let mut grads = GradientSet::zeros_like(self);
        self.accumulate(&trace, output_grad, &mut grads)?;
        Ok(grads)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Parameters in checkpoint order: per layer, weights then bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    /// Mutable access to a parameter by its position in [`Net::params`] order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weights.len() {
                return &mut l.weights[index];
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Hash of the exact parameter bits; equal hashes mean unchanged nets.
    pub fn param_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.param_count() * 8);
        for p in self.params() {
            bytes.extend_from_slice(&p.to_bits().to_le_bytes());
        }
        fnv1a64(&bytes)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_HEADER);
        out.push('\n');
        let _ = writeln!(out, "arch {}", self.arch.descriptor());
        let line = |vals: &[f64], out: &mut String| {
            let mut first = true;
            for v in vals {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:.16e}");
            }
            out.push('\n');
        };
        for l in &self.layers {
            line(&l.weights, &mut out);
            line(&l.bias, &mut out);
        }
        out
    }

    pub fn from_text(text: &str, location: &str) -> Result<Net> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CHECKPOINT_HEADER) {
            return Err(Error::parse(location, 1, format!("expected header `{CHECKPOINT_HEADER}`")));
        }
        let arch_line = lines.next().unwrap_or_default();
        let desc = arch_line
            .strip_prefix("arch ")
            .ok_or_else(|| Error::parse(location, 2, "expected `arch <descriptor>`"))?;
        let arch = Architecture::parse_descriptor(desc).map_err(|e| Error::parse(location, 2, e.to_string()))?;
        let mut net = Net::build(&arch, 0)?;
        let mut line_no = 2;
        for layer in &mut net.layers {
            for target in [&mut layer.weights, &mut layer.bias] {
                line_no += 1;
                let raw = lines
                    .next()
                    .ok_or_else(|| Error::parse(location, line_no, "missing parameter line"))?;
                let vals: Vec<f64> = raw
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(location, line_no, format!("{e}")))?;
                if vals.len() != target.len() {
                    return Err(Error::parse(
                        location,
                        line_no,
                        format!("expected {} values, found {}", target.len(), vals.len()),
                    ));
                }
                *target = vals;
            }
        }
        if !net.is_finite() {
            return Err(Error::parse(location, line_no, "non-finite parameter"));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Net> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Net::from_text(&text, &path.display().to_string())
    }
}

/// Per-parameter partial derivatives shaped like a [`Net`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl GradientSet {
    pub fn zeros_like(net: &Net) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values_mut().for_each(|v| *v *= s);
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|&v| v == 0.0)
    }

    /// Rescales so the global norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }

    fn congruent(&self, net: &Net) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|((w, b), l)| w.len() == l.weights.len() && b.len() == l.bias.len())
    }
}

/// Adaptive-moment optimizer state for one net.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: GradientSet,
    v: GradientSet,
}

impl Adam {
    pub fn new(net: &Net, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: GradientSet::zeros_like(net),
            v: GradientSet::zeros_like(net),
        }
    }

    /// Applies one descent step. Non-finite gradients leave the net and the
    /// moments untouched.
    pub fn step(&mut self, net: &mut Net, grads: &GradientSet) -> Result<()> {
        if !grads.congruent(net) || !self.m.congruent(net) {
            return Err(Error::Contract("gradient or optimizer shape does not match net".into()));
        }
        if !grads.is_finite() {
            return Err(Error::Training("non-finite gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[li];
            let (mw, mb) = &mut self.m.layers[li];
            let (vw, vb) = &mut self.v.layers[li];
            for (params, g, m, v) in [
                (&mut layer.weights, gw, mw, vw),
                (&mut layer.bias, gb, mb, vb),
            ] {
                for i in 0..params.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let mhat = m[i] / c1;
                    let vhat = v[i] / c2;
                    params[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub params_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub const FD_STEP: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;
const FD_MAX_PARAMS: usize = 10_000;

/// Fixed output weighting that turns the net output into a scalar objective.
pub fn probe_weights(n: usize) -> Vec<f64> {
    (0..n).map(|j| 0.5 + (j % 3) as f64 - 1.0 + 0.1 * j as f64).collect()
}

fn objective(net: &Net, input: &[f64], weights: &[f64]) -> Result<f64> {
    Ok(net.forward(input)?.iter().zip(weights).map(|(y, c)| y * c).sum())
}

/// Compares `analytic` against central differences of `weights . f(input)`.
pub fn check_gradients(net: &Net, input: &[f64], weights: &[f64], analytic: &GradientSet, tolerance: f64) -> Result<GradCheckReport> {
    let n = net.param_count();
    if n > FD_MAX_PARAMS {
        return Err(Error::Precondition(format!(
            "finite-difference check limited to {FD_MAX_PARAMS} parameters, net has {n}"
        )));
    }
    if !analytic.congruent(net) {
        return Err(Error::Contract("gradient set does not match net".into()));
    }
    let mut probe = net.clone();
    let mut worst = (0.0f64, 0usize);
    for (i, &a) in analytic.values().enumerate() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + FD_STEP;
        let plus = objective(&probe, input, weights)?;
        *probe.param_mut(i) = orig - FD_STEP;
        let minus = objective(&probe, input, weights)?;
        *probe.param_mut(i) = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > worst.0 || !rel.is_finite() {
            worst = (rel, i);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_param: worst.1,
        params_checked: n,
        tolerance,
        passed: worst.0 <= tolerance,
    })
}

pub fn finite_diff_check(net: &Net, input: &[f64], tolerance: f64) -> Result<GradCheckReport> {
    let weights = probe_weights(net.output_dim());
    let analytic = net.backward(input, &weights)?;
    check_gradients(net, input, &weights, &analytic, tolerance)
}

/// Replaces every parameter with a uniform draw in `[-scale, scale]`, so
/// gradient checks also exercise the zero-initialised output layer.
pub fn randomize(net: &mut Net, seed: u64, scale: f64) {
    let mut rng = stream_from_seed(seed);
    for l in &mut net.layers {
        for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
            *p = rng.random_range(-scale..=scale);
        }
    }
}
