//! Deep task-based quantization: an analog dense network, a trainable soft
//! quantization activation `q̃(z) = Σ_i a_i tanh(c_i z − b_i)` per channel and
//! a digital dense network, trained end-to-end with plain SGD and hardened
//! into piecewise-constant quantizers for deployment.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::quant::{LearnedQuantizerSpec, UniformQuantizerSpec};
use crate::rng;
use crate::scenarios::{self, Detector, ScenarioSpec};
use crate::{Error, Result};

/// Default steepness of the soft quantizer.
pub const DEFAULT_STEEPNESS: f64 = 50.0;
/// Probability floor before taking the log in the cross-entropy loss.
pub const PROB_FLOOR: f64 = 1e-30;
/// Hardened thresholds closer than this merge into one.
pub const MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, m: &mut DMatrix<f64>) {
        if self == Activation::Tanh {
            m.apply(|v| *v = v.tanh());
        }
    }
}

/// Fully connected layer `y = act(W x + b)`; `W` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self {
            weights: DMatrix::from_fn(output, input, |_, _| rng::uniform(rng, -limit, limit)),
            bias: DVector::zeros(output),
            activation,
        }
    }

    pub fn input(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output(&self) -> usize {
        self.weights.nrows()
    }

    fn pre_activation(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.weights * x;
        for mut col in out.column_iter_mut() {
            col += &self.bias;
        }
        out
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.pre_activation(x);
        self.activation.apply(&mut out);
        out
    }
}

/// Soft quantizer of one channel: `Σ_i a_i tanh(c_i z − b_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftChannel {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl SoftChannel {
    /// Starts at the uniform mid-rise quantizer: `a_i = Δ/2`, thresholds
    /// `b_i / c = −γ + iΔ`.
    pub fn uniform(levels: usize, support: f64, steepness: f64) -> Result<Self> {
        let q = UniformQuantizerSpec::new(levels, support, false)?;
        let terms = levels - 1;
        Ok(Self {
            a: vec![q.spacing() / 2.0; terms],
            b: (1..levels).map(|i| steepness * (-support + i as f64 * q.spacing())).collect(),
            c: vec![steepness; terms],
        })
    }

    pub fn terms(&self) -> usize {
        self.a.len()
    }

    pub fn eval(&self, z: f64) -> f64 {
        soft_quantize(z, &self.a, &self.b, &self.c)
    }

    /// Transition points `b_i / c_i`.
    pub fn thresholds(&self) -> Vec<f64> {
        self.b.iter().zip(&self.c).map(|(b, c)| b / c).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.a.is_empty() || self.a.len() != self.b.len() || self.a.len() != self.c.len() {
            return Err(Error::Parameter("soft quantizer needs equally many a, b, c terms (at least one)".into()));
        }
        if self.c.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Parameter("soft quantizer steepness must be positive".into()));
        }
        Ok(())
    }

    /// Replaces every `c_i`, moving `b_i` so the transition points stay put.
    fn set_steepness(&mut self, steepness: f64) {
        for (b, c) in self.b.iter_mut().zip(self.c.iter_mut()) {
            *b *= steepness / *c;
            *c = steepness;
        }
    }

    /// Piecewise-constant limit as `c → ∞`.
    pub fn harden(&self) -> Result<LearnedQuantizerSpec> {
        let mut steps: Vec<(f64, f64)> = self.thresholds().into_iter().zip(self.a.iter().copied()).collect();
        steps.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(steps.len());
        for (t, a) in steps {
            match merged.last_mut() {
                Some(last) if (t - last.0).abs() < MERGE_TOL => last.1 += a,
                _ => merged.push((t, a)),
            }
        }
        let mut level = -self.a.iter().sum::<f64>();
        let mut levels = vec![level];
        for &(_, a) in &merged {
            level += 2.0 * a;
            levels.push(level);
        }
        LearnedQuantizerSpec::new(merged.into_iter().map(|(t, _)| t).collect(), levels)
    }
}

/// `Σ_i a_i tanh(c_i z − b_i)`.
pub fn soft_quantize(z: f64, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    a.iter().zip(b).zip(c).map(|((a, b), c)| a * tanh(c * z - b)).sum()
}

/// `tanh` with the saturated tails short-circuited (exact in `f64`).
fn tanh(x: f64) -> f64 {
    if x > 20.0 {
        1.0
    } else if x < -20.0 {
        -1.0
    } else {
        x.tanh()
    }
}

/// The quantization activation: trainable soft form or hardened form.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantStage {
    Soft(Vec<SoftChannel>),
    Hard(Vec<LearnedQuantizerSpec>),
}

impl QuantStage {
    pub fn channels(&self) -> usize {
        match self {
            QuantStage::Soft(c) => c.len(),
            QuantStage::Hard(c) => c.len(),
        }
    }

    fn forward(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            QuantStage::Soft(chans) => DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| chans[i].eval(z[(i, j)])),
            QuantStage::Hard(chans) => DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| {
                let l = chans[i].cell(z[(i, j)]);
                chans[i].levels()[l]
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Real-valued `k`-vector output, squared-error loss.
    Estimation { outputs: usize },
    /// Softmax over `classes` outputs, cross-entropy loss.
    Classification { classes: usize },
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Estimation { outputs } => outputs,
            Head::Classification { classes } => classes,
        }
    }
}

/// Shape of a network to initialize.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input: usize,
    /// Widths of hidden analog layers (the last analog layer maps to `channels`).
    pub analog_hidden: Vec<usize>,
    pub channels: usize,
    /// Quantization levels `M̃` for every channel.
    pub levels: usize,
    /// Per-channel override of `levels`.
    pub channel_levels: Option<Vec<usize>>,
    pub digital_hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub head: Head,
    pub steepness: f64,
    /// Support `γ` of the uniform quantizer the activation starts from.
    pub support: f64,
}

impl NetworkSpec {
    /// Linear analog and digital layers around the quantizer.
    pub fn linear(input: usize, channels: usize, levels: usize, outputs: usize) -> Self {
        Self {
            input,
            analog_hidden: Vec::new(),
            channels,
            levels,
            channel_levels: None,
            digital_hidden: Vec::new(),
            hidden_activation: Activation::Tanh,
            head: Head::Estimation { outputs },
            steepness: DEFAULT_STEEPNESS,
            support: 1.0,
        }
    }

    /// Two dense layers on each side of the quantizer with a softmax head.
    pub fn classifier(input: usize, hidden: usize, channels: usize, levels: usize, classes: usize) -> Self {
        Self {
            input,
            analog_hidden: vec![hidden],
            channels,
            levels,
            channel_levels: None,
            digital_hidden: vec![hidden],
            hidden_activation: Activation::Tanh,
            head: Head::Classification { classes },
            steepness: DEFAULT_STEEPNESS,
            support: 1.0,
        }
    }
}

/// Hybrid network `ψ_θ`: analog layers, quantization activation, digital layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    analog: Vec<Dense>,
    quant: QuantStage,
    digital: Vec<Dense>,
    head: Head,
}

/// Training targets, one column (or label) per sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Estimation(DMatrix<f64>),
    Classification(Vec<usize>),
}

/// Samples stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub targets: Targets,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Draws `count` samples; classification scenarios get BPSK class labels.
    pub fn from_scenario<R: Rng + ?Sized>(scenario: &ScenarioSpec, count: usize, rng: &mut R) -> Self {
        let pairs = scenario.sample_many(count, rng);
        let inputs = DMatrix::from_fn(scenario.n(), count, |i, j| pairs[j].1[i]);
        let targets = if scenario.is_classification() {
            Targets::Classification(pairs.iter().map(|(s, _)| scenarios::bpsk_label(s)).collect())
        } else {
            Targets::Estimation(DMatrix::from_fn(scenario.k(), count, |i, j| pairs[j].0[i]))
        };
        Self { inputs, targets }
    }

    /// Subset of the given sample indices, in order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let targets = match &self.targets {
            Targets::Estimation(t) => Targets::Estimation(t.select_columns(idx)),
            Targets::Classification(l) => Targets::Classification(idx.iter().map(|&i| l[i]).collect()),
        };
        Self {
            inputs: self.inputs.select_columns(idx),
            targets,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Steepness per epoch (the last value persists); empty keeps the current `c`.
    pub c_schedule: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            c_schedule: Vec::new(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Parameter(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Parameter("batch size and epochs must be positive".into()));
        }
        if self.c_schedule.iter().any(|c| !(c.is_finite() && *c > 0.0)) || self.c_schedule.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Parameter("steepness schedule must be positive and non-decreasing".into()));
        }
        Ok(())
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub network: Network,
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

struct Trace {
    analog_in: Vec<DMatrix<f64>>,
    analog_out: Vec<DMatrix<f64>>,
    z: DMatrix<f64>,
    digital_in: Vec<DMatrix<f64>>,
    digital_out: Vec<DMatrix<f64>>,
}

impl Network {
    /// Assembles a network, checking that the stages chain.
    pub fn from_parts(analog: Vec<Dense>, quant: QuantStage, digital: Vec<Dense>, head: Head) -> Result<Self> {
        let net = Self {
            analog,
            quant,
            digital,
            head,
        };
        net.check_architecture()?;
        Ok(net)
    }

    /// Random initialization per `spec`.
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, &[rng::tag("deep/init")]);
        let dense_chain = |dims: Vec<usize>, last: Activation, r: &mut rng::Rng| -> Vec<Dense> {
            let count = dims.len() - 1;
            (0..count)
                .map(|i| {
                    let act = if i + 1 == count { last } else { spec.hidden_activation };
                    Dense::glorot(dims[i], dims[i + 1], act, r)
                })
                .collect()
        };
        let mut analog_dims = vec![spec.input];
        analog_dims.extend(&spec.analog_hidden);
        analog_dims.push(spec.channels);
        let analog = dense_chain(analog_dims, Activation::Identity, &mut r);

        let levels = match &spec.channel_levels {
            Some(per) if per.len() != spec.channels => return Err(Error::dims("channel levels", spec.channels, per.len())),
            Some(per) => per.clone(),
            None => vec![spec.levels; spec.channels],
        };
        let quant = levels
            .iter()
            .map(|&m| SoftChannel::uniform(m, spec.support, spec.steepness))
            .collect::<Result<Vec<_>>>()?;

        let mut digital_dims = vec![spec.channels];
        digital_dims.extend(&spec.digital_hidden);
        digital_dims.push(spec.head.outputs());
        let digital = dense_chain(digital_dims, Activation::Identity, &mut r);
        Self::from_parts(analog, QuantStage::Soft(quant), digital, spec.head)
    }

    pub fn analog(&self) -> &[Dense] {
        &self.analog
    }

    pub fn quant(&self) -> &QuantStage {
        &self.quant
    }

    pub fn digital(&self) -> &[Dense] {
        &self.digital
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input(&self) -> usize {
        self.analog[0].input()
    }

    pub fn channels(&self) -> usize {
        self.quant.channels()
    }

    pub fn is_hard(&self) -> bool {
        matches!(self.quant, QuantStage::Hard(_))
    }

    /// Every path from input to output crosses the quantization activation:
    /// the stages form a single chain with matching widths.
    pub fn check_architecture(&self) -> Result<()> {
        if self.analog.is_empty() || self.digital.is_empty() {
            return Err(Error::Parameter("network needs at least one analog and one digital layer".into()));
        }
        for (context, layers) in [("analog layers", &self.analog), ("digital layers", &self.digital)] {
            for pair in layers.windows(2) {
                if pair[0].output() != pair[1].input() {
                    return Err(Error::dims(context, pair[0].output(), pair[1].input()));
                }
            }
            for layer in layers.iter() {
                if layer.bias.len() != layer.output() {
                    return Err(Error::dims("layer bias", layer.output(), layer.bias.len()));
                }
            }
        }
        let p = self.quant.channels();
        if self.analog.last().map(Dense::output) != Some(p) {
            return Err(Error::dims("analog output vs quantizer channels", p, self.analog.last().map_or(0, Dense::output)));
        }
        if self.digital[0].input() != p {
            return Err(Error::dims("digital input vs quantizer channels", p, self.digital[0].input()));
        }
        if self.digital.last().map(Dense::output) != Some(self.head.outputs()) {
            return Err(Error::dims("network output", self.head.outputs(), self.digital.last().map_or(0, Dense::output)));
        }
        if let QuantStage::Soft(chans) = &self.quant {
            chans.iter().try_for_each(SoftChannel::validate)?;
        }
        Ok(())
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.input() {
            return Err(Error::dims("network input", self.input(), x.nrows()));
        }
        Ok(())
    }

    fn trace(&self, x: &DMatrix<f64>) -> Trace {
        let mut analog_in = Vec::with_capacity(self.analog.len());
        let mut analog_out = Vec::with_capacity(self.analog.len());
        let mut h = x.clone();
        for layer in &self.analog {
            let out = layer.forward(&h);
            analog_in.push(h);
            analog_out.push(out.clone());
            h = out;
        }
        let z = h;
        let mut h = self.quant.forward(&z);
        let mut digital_in = Vec::with_capacity(self.digital.len());
        let mut digital_out = Vec::with_capacity(self.digital.len());
        for layer in &self.digital {
            let out = layer.forward(&h);
            digital_in.push(h);
            digital_out.push(out.clone());
            h = out;
        }
        Trace {
            analog_in,
            analog_out,
            z,
            digital_in,
            digital_out,
        }
    }

    /// Outputs for a batch of column inputs: estimates, or class
    /// probabilities for a classification head.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let mut out = self.trace(x).digital_out.pop().expect("digital layers exist");
        if let Head::Classification { .. } = self.head {
            for mut col in out.column_iter_mut() {
                softmax_in_place(col.as_mut_slice());
            }
        }
        Ok(out)
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let out = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()))?;
        Ok(out.column(0).into_owned())
    }

    /// Most probable class, ties to the lowest index.
    pub fn classify(&self, x: &DVector<f64>) -> Result<usize> {
        if !matches!(self.head, Head::Classification { .. }) {
            return Err(Error::Parameter("classify needs a classification head".into()));
        }
        Ok(argmax(self.forward(x)?.as_slice()))
    }

    /// Batch loss: mean squared error or mean cross-entropy.
    pub fn loss(&self, data: &Dataset) -> Result<f64> {
        self.check_batch(data)?;
        let out = self.forward_batch(&data.inputs)?;
        Ok(batch_loss(&out, &data.targets))
    }

    fn check_batch(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Parameter("empty batch".into()));
        }
        match (&data.targets, self.head) {
            (Targets::Estimation(t), Head::Estimation { outputs }) => {
                if t.nrows() != outputs || t.ncols() != data.len() {
                    return Err(Error::dims("estimation targets", format!("{outputs}x{}", data.len()), format!("{}x{}", t.nrows(), t.ncols())));
                }
            }
            (Targets::Classification(l), Head::Classification { classes }) => {
                if l.len() != data.len() {
                    return Err(Error::dims("class labels", data.len(), l.len()));
                }
                if let Some(bad) = l.iter().find(|&&c| c >= classes) {
                    return Err(Error::Parameter(format!("label {bad} out of range for {classes} classes")));
                }
            }
            _ => return Err(Error::Parameter("targets do not match the network head".into())),
        }
        Ok(())
    }

    /// Number of trainable parameters (`c` excluded).
    pub fn parameter_count(&self) -> usize {
        let dense = |l: &Dense| l.weights.len() + l.bias.len();
        let quant = match &self.quant {
            QuantStage::Soft(chans) => chans.iter().map(|c| 2 * c.terms()).sum(),
            QuantStage::Hard(_) => 0,
        };
        self.analog.iter().map(dense).sum::<usize>() + quant + self.digital.iter().map(dense).sum::<usize>()
    }

    /// Trainable parameters flattened: analog layers (weights column-major,
    /// then bias), per channel `a` then `b`, digital layers.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        let push_dense = |out: &mut Vec<f64>, l: &Dense| {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        };
        self.analog.iter().for_each(|l| push_dense(&mut out, l));
        if let QuantStage::Soft(chans) = &self.quant {
            for c in chans {
                out.extend_from_slice(&c.a);
                out.extend_from_slice(&c.b);
            }
        }
        self.digital.iter().for_each(|l| push_dense(&mut out, l));
        out
    }

    /// Inverse of [`Network::parameters`].
    pub fn set_parameters(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.parameter_count() {
            return Err(Error::dims("parameter vector", self.parameter_count(), theta.len()));
        }
        let mut at = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&theta[at..at + dst.len()]);
            at += dst.len();
        };
        for l in &mut self.analog {
            take(l.weights.as_mut_slice());
            take(l.bias.as_mut_slice());
        }
        if let QuantStage::Soft(chans) = &mut self.quant {
            for c in chans {
                take(&mut c.a);
                take(&mut c.b);
            }
        }
        for l in &mut self.digital {
            take(l.weights.as_mut_slice());
            take(l.bias.as_mut_slice());
        }
        Ok(())
    }

    /// Loss and its exact gradient in the order of [`Network::parameters`].
    pub fn backward(&self, data: &Dataset) -> Result<(f64, Vec<f64>)> {
        self.check_batch(data)?;
        let QuantStage::Soft(chans) = &self.quant else {
            return Err(Error::Parameter("a hardened network has no gradient".into()));
        };
        let trace = self.trace(&data.inputs);
        let batch = data.len() as f64;
        let logits = trace.digital_out.last().expect("digital layers exist");

        let (loss, mut delta) = match &data.targets {
            Targets::Estimation(t) => {
                let err = logits - t;
                (err.norm_squared() / batch, err * (2.0 / batch))
            }
            Targets::Classification(labels) => {
                let mut probs = logits.clone();
                let mut loss = 0.0;
                for (mut col, &label) in probs.column_iter_mut().zip(labels) {
                    softmax_in_place(col.as_mut_slice());
                    let p = col[label];
                    loss -= p.max(PROB_FLOOR).ln();
                    if p < PROB_FLOOR {
                        col.fill(0.0);
                    } else {
                        col[label] -= 1.0;
                    }
                }
                (loss / batch, probs / batch)
            }
        };

        let mut digital_grads = Vec::with_capacity(self.digital.len());
        for (i, layer) in self.digital.iter().enumerate().rev() {
            let (g, next) = dense_backward(layer, &trace.digital_in[i], &trace.digital_out[i], delta);
            digital_grads.push(g);
            delta = next;
        }
        digital_grads.reverse();

        // delta is now dL/dq; push it through the soft quantizer
        let z = &trace.z;
        let mut dz = DMatrix::zeros(z.nrows(), z.ncols());
        let mut quant_grads = Vec::with_capacity(chans.len());
        for (ch, chan) in chans.iter().enumerate() {
            let mut ga = vec![0.0; chan.terms()];
            let mut gb = vec![0.0; chan.terms()];
            for col in 0..z.ncols() {
                let (zv, up) = (z[(ch, col)], delta[(ch, col)]);
                let mut slope = 0.0;
                for i in 0..chan.terms() {
                    let t = tanh(chan.c[i] * zv - chan.b[i]);
                    ga[i] += up * t;
                    if t.abs() == 1.0 {
                        continue;
                    }
                    let sech2 = 1.0 - t * t;
                    gb[i] -= up * chan.a[i] * sech2;
                    slope += chan.a[i] * chan.c[i] * sech2;
                }
                dz[(ch, col)] = up * slope;
            }
            quant_grads.push((ga, gb));
        }

        let mut delta = dz;
        let mut analog_grads = Vec::with_capacity(self.analog.len());
        for (i, layer) in self.analog.iter().enumerate().rev() {
            let (g, next) = dense_backward(layer, &trace.analog_in[i], &trace.analog_out[i], delta);
            analog_grads.push(g);
            delta = next;
        }
        analog_grads.reverse();

        let mut grad = Vec::with_capacity(self.parameter_count());
        for (w, b) in &analog_grads {
            grad.extend_from_slice(w.as_slice());
            grad.extend_from_slice(b.as_slice());
        }
        for (a, b) in &quant_grads {
            grad.extend_from_slice(a);
            grad.extend_from_slice(b);
        }
        for (w, b) in &digital_grads {
            grad.extend_from_slice(w.as_slice());
            grad.extend_from_slice(b.as_slice());
        }
        Ok((loss, grad))
    }

    /// Sets every steepness constant, keeping transition points fixed.
    pub fn set_steepness(&mut self, steepness: f64) -> Result<()> {
        if !(steepness.is_finite() && steepness > 0.0) {
            return Err(Error::Parameter(format!("steepness must be positive, got {steepness}")));
        }
        if let QuantStage::Soft(chans) = &mut self.quant {
            chans.iter_mut().for_each(|c| c.set_steepness(steepness));
        }
        Ok(())
    }
}

fn dense_backward(
    layer: &Dense,
    input: &DMatrix<f64>,
    output: &DMatrix<f64>,
    mut delta: DMatrix<f64>,
) -> ((DMatrix<f64>, DVector<f64>), DMatrix<f64>) {
    if layer.activation == Activation::Tanh {
        delta.zip_apply(output, |d, y| *d *= 1.0 - y * y);
    }
    let gw = &delta * input.transpose();
    let gb = delta.column_sum();
    let next = layer.weights.transpose() * &delta;
    ((gw, gb), next)
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn batch_loss(out: &DMatrix<f64>, targets: &Targets) -> f64 {
    let batch = out.ncols() as f64;
    match targets {
        Targets::Estimation(t) => (out - t).norm_squared() / batch,
        Targets::Classification(labels) => {
            -labels
                .iter()
                .enumerate()
                .map(|(j, &l)| out[(l, j)].max(PROB_FLOOR).ln())
                .sum::<f64>()
                / batch
        }
    }
}

/// Plain minibatch SGD: `epochs × ⌈t / batch⌉` steps over seeded shuffles.
pub fn train(net: &Network, data: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if data.len() < config.batch_size {
        return Err(Error::Parameter(format!(
            "dataset of {} samples is smaller than the batch size {}",
            data.len(),
            config.batch_size
        )));
    }
    net.check_batch(data)?;
    let mut net = net.clone();
    let mut theta = net.parameters();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if let Some(&c) = config.c_schedule.get(epoch).or(config.c_schedule.last()) {
            net.set_steepness(c)?;
            theta = net.parameters();
        }
        let mut r = rng::stream(config.seed, &[rng::tag("deep/shuffle"), epoch as u64]);
        order.shuffle(&mut r);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.select(chunk);
            let (loss, grad) = net.backward(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            total += loss * chunk.len() as f64;
            theta.iter_mut().zip(&grad).for_each(|(t, g)| *t -= config.learning_rate * g);
            net.set_parameters(&theta)?;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        epoch_loss.push(mean);
    }
    Ok(TrainReport { network: net, epoch_loss })
}

/// Replaces the soft activation with its piecewise-constant limit.
pub fn harden(net: &Network) -> Result<Network> {
    let quant = match &net.quant {
        QuantStage::Soft(chans) => QuantStage::Hard(chans.iter().map(SoftChannel::harden).collect::<Result<_>>()?),
        QuantStage::Hard(_) => net.quant.clone(),
    };
    Ok(Network { quant, ..net.clone() })
}

/// Mean squared error of an estimation network over a dataset.
pub fn evaluate_mse(net: &Network, data: &Dataset) -> Result<f64> {
    net.loss(data)
}

/// BPSK symbol detector backed by a classification network.
#[derive(Debug, Clone)]
pub struct DeepDetector {
    pub network: Network,
    pub symbols: usize,
}

impl Detector for DeepDetector {
    fn detect(&self, x: &DVector<f64>) -> DVector<f64> {
        let label = self.network.classify(x).expect("detector input matches network");
        scenarios::bpsk_symbols(label, self.symbols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_net(seed: u64, head: Head) -> Network {
        let mut r = rng::from_seed(seed);
        let spec = NetworkSpec {
            input: 6,
            analog_hidden: vec![5],
            channels: 3,
            levels: 4,
            channel_levels: None,
            digital_hidden: vec![4],
            hidden_activation: Activation::Tanh,
            head,
            steepness: rng::uniform(&mut r, 1.0, 3.0),
            support: 1.0,
        };
        let mut net = Network::new(&spec, seed).unwrap();
        let mut theta = net.parameters();
        theta.iter_mut().for_each(|t| *t += 0.3 * rng::normal(&mut r));
        net.set_parameters(&theta).unwrap();
        net
    }

    fn random_data(seed: u64, head: Head, count: usize) -> Dataset {
        let mut r = rng::from_seed(seed ^ 0xabc);
        let inputs = rng::normal_matrix(6, count, &mut r);
        let targets = match head {
            Head::Estimation { outputs } => Targets::Estimation(rng::normal_matrix(outputs, count, &mut r)),
            Head::Classification { classes } => Targets::Classification((0..count).map(|i| (i * 7 + seed as usize) % classes).collect()),
        };
        Dataset { inputs, targets }
    }

    #[test]
    fn soft_quantize_examples() {
        assert!((soft_quantize(0.5, &[1.0], &[0.0], &[1000.0]) - 1.0).abs() < 1e-12);
        for c in [0.5, 3.0, 100.0] {
            assert_eq!(soft_quantize(0.0, &[1.0], &[0.0], &[c]), 0.0);
        }
        let c = 1000.0;
        assert!((soft_quantize(2.0, &[0.5, 0.5], &[-c, c], &[c, c]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_examples() {
        let eye = |n| Dense {
            weights: DMatrix::identity(n, n),
            bias: DVector::zeros(n),
            activation: Activation::Identity,
        };
        let chan = SoftChannel {
            a: vec![1.0],
            b: vec![0.0],
            c: vec![1e4],
        };
        let net = Network::from_parts(vec![eye(3)], QuantStage::Soft(vec![chan; 3]), vec![eye(3)], Head::Estimation { outputs: 3 }).unwrap();
        let out = net.forward(&DVector::from_vec(vec![0.7, -0.2, 3.0])).unwrap();
        assert!((out - DVector::from_vec(vec![1.0, -1.0, 1.0])).amax() < 1e-9);

        let mut zero = random_net(1, Head::Estimation { outputs: 2 });
        let last = zero.digital.last_mut().unwrap();
        last.weights.fill(0.0);
        last.bias = DVector::from_vec(vec![0.25, -1.5]);
        let out = zero.forward(&DVector::from_element(6, 0.3)).unwrap();
        assert_eq!(out.as_slice(), &[0.25, -1.5]);

        for seed in 0..10 {
            let net = random_net(seed, Head::Classification { classes: 5 });
            let p = net.forward(&rng::normal_vector(6, &mut rng::from_seed(seed))).unwrap();
            assert!((p.sum() - 1.0).abs() < 1e-9);
        }
        assert!(net.forward(&DVector::zeros(4)).is_err());
    }

    #[test]
    fn loss_examples() {
        let net = random_net(2, Head::Estimation { outputs: 2 });
        let mut data = random_data(2, Head::Estimation { outputs: 2 }, 5);
        data.targets = Targets::Estimation(net.forward_batch(&data.inputs).unwrap());
        assert!(net.loss(&data).unwrap() < 1e-24);

        let uniform = DMatrix::from_element(16, 3, 1.0 / 16.0);
        let l = batch_loss(&uniform, &Targets::Classification(vec![0, 5, 15]));
        assert!((l - 16f64.ln()).abs() < 1e-12);
        let sure = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert_eq!(batch_loss(&sure, &Targets::Classification(vec![1])), 0.0);
        let dead = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!((batch_loss(&dead, &Targets::Classification(vec![1])) - 30.0 * 10f64.ln()).abs() < 1e-9);
    }

    fn finite_difference_check(net: &Network, data: &Dataset) -> f64 {
        let (_, grad) = net.backward(data).unwrap();
        let theta = net.parameters();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut probe = net.clone();
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] = theta[i] + h;
            probe.set_parameters(&t).unwrap();
            let up = probe.loss(data).unwrap();
            t[i] = theta[i] - h;
            probe.set_parameters(&t).unwrap();
            let down = probe.loss(data).unwrap();
            let fd = (up - down) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-4);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..6 {
            for head in [Head::Estimation { outputs: 2 }, Head::Classification { classes: 4 }] {
                let net = random_net(seed, head);
                let data = random_data(seed, head, 7);
                let worst = finite_difference_check(&net, &data);
                assert!(worst < 1e-5, "seed {seed} {head:?}: {worst}");
            }
        }
    }

    #[test]
    fn gradient_of_a_is_tanh_times_sensitivity() {
        // z = w x, q = a tanh(c z − b), y = v q, loss = mean (y − s)²
        let (w, a, b, c, v) = (0.8, 0.6, 0.2, 2.0, 1.5);
        let net = Network::from_parts(
            vec![Dense {
                weights: DMatrix::from_element(1, 1, w),
                bias: DVector::zeros(1),
                activation: Activation::Identity,
            }],
            QuantStage::Soft(vec![SoftChannel { a: vec![a], b: vec![b], c: vec![c] }]),
            vec![Dense {
                weights: DMatrix::from_element(1, 1, v),
                bias: DVector::zeros(1),
                activation: Activation::Identity,
            }],
            Head::Estimation { outputs: 1 },
        )
        .unwrap();
        let xs = [0.3, -1.1, 0.9];
        let ss = [0.5, -0.2, 0.1];
        let data = Dataset {
            inputs: DMatrix::from_row_slice(1, 3, &xs),
            targets: Targets::Estimation(DMatrix::from_row_slice(1, 3, &ss)),
        };
        let expected: f64 = xs
            .iter()
            .zip(&ss)
            .map(|(x, s)| {
                let t = (c * w * x - b).tanh();
                let sens = 2.0 * (v * a * t - s) * v;
                t * sens
            })
            .sum::<f64>()
            / 3.0;
        let (_, grad) = net.backward(&data).unwrap();
        // order: w, bias, a, b, v, bias
        assert!((grad[2] - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_weights_give_zero_bias_gradient_on_symmetric_data() {
        let mut net = random_net(4, Head::Estimation { outputs: 2 });
        let zeros = vec![0.0; net.parameter_count()];
        net.set_parameters(&zeros).unwrap();
        let x = rng::normal_matrix(6, 4, &mut rng::from_seed(9));
        let inputs = DMatrix::from_fn(6, 8, |i, j| if j < 4 { x[(i, j)] } else { -x[(i, j - 4)] });
        let t = rng::normal_matrix(2, 4, &mut rng::from_seed(10));
        let targets = DMatrix::from_fn(2, 8, |i, j| if j < 4 { t[(i, j)] } else { -t[(i, j - 4)] });
        let (_, grad) = net.backward(&Dataset { inputs, targets: Targets::Estimation(targets) }).unwrap();
        let n = grad.len();
        assert!(grad[n - 2..].iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn harden_examples() {
        let sign = SoftChannel { a: vec![1.0], b: vec![0.0], c: vec![10.0] }.harden().unwrap();
        assert_eq!(sign.thresholds(), &[0.0]);
        assert_eq!(sign.levels(), &[-1.0, 1.0]);
        let c = 10.0;
        let three = SoftChannel { a: vec![0.5, 0.5], b: vec![c, -c], c: vec![c, c] }.harden().unwrap();
        assert_eq!(three.thresholds(), &[-1.0, 1.0]);
        assert_eq!(three.levels(), &[-1.0, 0.0, 1.0]);
        let merged = SoftChannel { a: vec![0.25, 0.5], b: vec![1.0, 1.0], c: vec![2.0, 2.0] }.harden().unwrap();
        assert_eq!(merged.thresholds(), &[0.5]);
        assert_eq!(merged.levels(), &[-0.75, 0.75]);
    }

    #[test]
    fn soft_converges_to_hard_off_thresholds() {
        let mut chan = SoftChannel::uniform(8, 1.0, 1.0).unwrap();
        chan.a = vec![0.1, 0.3, 0.05, 0.2, 0.15, 0.12, 0.08];
        chan.set_steepness(1e3);
        let hard = chan.harden().unwrap();
        let radius = 10.0 / 1e3;
        for i in 0..=400 {
            let z = -2.0 + 4.0 * i as f64 / 400.0;
            if chan.thresholds().iter().any(|t| (z - t).abs() < radius) {
                continue;
            }
            assert!((chan.eval(z) - hard.quantize(z).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn classify_ties_to_lowest() {
        assert_eq!(argmax(&[0.7, 0.3]), 0);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn memorizes_a_repeated_sample() {
        let spec = NetworkSpec {
            steepness: 2.0,
            ..NetworkSpec::linear(4, 2, 8, 2)
        };
        let net = Network::new(&spec, 3).unwrap();
        let x = DVector::from_vec(vec![0.2, -0.4, 0.1, 0.3]);
        let data = Dataset {
            inputs: DMatrix::from_fn(4, 16, |i, _| x[i]),
            targets: Targets::Estimation(DMatrix::from_fn(2, 16, |i, _| [0.3, -0.1][i])),
        };
        let config = TrainConfig {
            learning_rate: 0.05,
            batch_size: 4,
            epochs: 200,
            ..TrainConfig::default()
        };
        let report = train(&net, &data, &config).unwrap();
        assert!(*report.epoch_loss.last().unwrap() < 1e-6);
    }

    #[test]
    fn training_is_deterministic_and_checks_inputs() {
        let spec = NetworkSpec::linear(6, 2, 4, 2);
        let net = Network::new(&spec, 1).unwrap();
        let data = random_data(1, Head::Estimation { outputs: 2 }, 40);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let a = train(&net, &data, &config).unwrap();
        let b = train(&net, &data, &config).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.epoch_loss.len(), 3);
        assert!(train(&net, &data, &TrainConfig { batch_size: 41, ..config.clone() }).is_err());
        assert!(train(&net, &data, &TrainConfig { c_schedule: vec![5.0, 2.0], ..config.clone() }).is_err());
        let wild = TrainConfig {
            learning_rate: 1e6,
            ..config
        };
        assert!(matches!(train(&net, &data, &wild), Err(Error::Divergence { .. })));
    }

    #[test]
    fn architecture_rejects_bypass_shapes() {
        let net = random_net(0, Head::Estimation { outputs: 2 });
        let mut digital = net.digital().to_vec();
        digital[0] = Dense::glorot(6, 4, Activation::Tanh, &mut rng::from_seed(0));
        assert!(Network::from_parts(net.analog().to_vec(), net.quant().clone(), digital, net.head()).is_err());
    }
}
