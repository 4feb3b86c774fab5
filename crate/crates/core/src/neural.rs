//! One-hidden-layer tanh Q-network with hand-written backprop, global-norm
//! gradient clipping and a target copy.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 80;
pub const DEFAULT_LEARNING_RATE: f64 = 0.001;
pub const DEFAULT_CLIP_NORM: f64 = 1.0;

/// Smoothing constant and denominator guard for [`Optimizer::RmsProp`].
pub const RMSPROP_DECAY: f64 = 0.99;
pub const RMSPROP_EPS: f64 = 1e-8;

/// Update rule applied to the clipped gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    /// `p -= lr * g`.
    Sgd,
    /// `v = d*v + (1-d)*g^2; p -= lr * g / (sqrt(v) + eps)`.
    #[default]
    RmsProp,
}

const CHECKPOINT_MAGIC: &str = "acl-dqn-qfunction 1";

/// Weights of both layers. `w1` is `hidden x input` and `w2` is
/// `output x hidden`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Params {
    fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; output * hidden],
            b2: vec![0.0; output],
        }
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// A batch of transitions laid out as flat row-major matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub terminal: Vec<bool>,
}

impl Minibatch {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            terminal: Vec::new(),
        }
    }

    pub fn push(&mut self, state: &[f64], action: usize, reward: f64, next_state: &[f64], terminal: bool) {
        debug_assert_eq!(state.len(), self.dim);
        debug_assert_eq!(next_state.len(), self.dim);
        self.states.extend_from_slice(state);
        self.actions.push(action);
        self.rewards.push(reward);
        self.next_states.extend_from_slice(next_state);
        self.terminal.push(terminal);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn next_state(&self, i: usize) -> &[f64] {
        &self.next_states[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    online: Params,
    target: Params,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub optimizer: Optimizer,
    // Running mean of squared gradients; allocated on first RMSprop step.
    sq_avg: Option<Params>,
}

/// Output of [`QFunction::gradient`].
#[derive(Debug, Clone)]
pub struct Gradient {
    pub loss: f64,
    pub grad: Params,
    /// Norm before clipping.
    pub raw_norm: f64,
}

fn forward_into(p: &Params, input: usize, hidden_out: &mut [f64], out: &mut [f64], state: &[f64]) {
    let hidden = hidden_out.len();
    hidden_out.copy_from_slice(&p.b1);
    // States are mostly one-hot, so walk the input once and skip zeros.
    for (j, &x) in state.iter().enumerate() {
        if x != 0.0 {
            for (h, acc) in hidden_out.iter_mut().enumerate() {
                *acc += p.w1[h * input + j] * x;
            }
        }
    }
    for h in hidden_out.iter_mut() {
        *h = h.tanh();
    }
    for (o, q) in out.iter_mut().enumerate() {
        let row = &p.w2[o * hidden..(o + 1) * hidden];
        *q = p.b2[o] + row.iter().zip(hidden_out.iter()).map(|(w, h)| w * h).sum::<f64>();
    }
}

impl QFunction {
    /// Symmetric uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
    /// zero biases, target synced.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        let mut online = Params::zeros(input_dim, hidden_dim, output_dim);
        let b1 = 1.0 / (input_dim as f64).sqrt();
        for w in &mut online.w1 {
            *w = rng.random_range(-b1..=b1);
        }
        let b2 = 1.0 / (hidden_dim as f64).sqrt();
        for w in &mut online.w2 {
            *w = rng.random_range(-b2..=b2);
        }
        Self::from_params(input_dim, hidden_dim, output_dim, online)
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self::from_params(input_dim, hidden_dim, output_dim, Params::zeros(input_dim, hidden_dim, output_dim))
    }

    pub fn from_params(input_dim: usize, hidden_dim: usize, output_dim: usize, online: Params) -> Self {
        assert_eq!(online.w1.len(), hidden_dim * input_dim);
        assert_eq!(online.b1.len(), hidden_dim);
        assert_eq!(online.w2.len(), output_dim * hidden_dim);
        assert_eq!(online.b2.len(), output_dim);
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            target: online.clone(),
            online,
            learning_rate: DEFAULT_LEARNING_RATE,
            clip_norm: DEFAULT_CLIP_NORM,
            optimizer: Optimizer::default(),
            sq_avg: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn online(&self) -> &Params {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut Params {
        &mut self.online
    }

    pub fn target(&self) -> &Params {
        &self.target
    }

    /// `W2 tanh(W1 s + b1) + b2` under the online or target parameters.
    pub fn forward(&self, state: &[f64], use_target: bool) -> Result<Vec<f64>> {
        if state.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: state.len(),
            });
        }
        let p = if use_target { &self.target } else { &self.online };
        let mut hidden = vec![0.0; self.hidden_dim];
        let mut out = vec![0.0; self.output_dim];
        forward_into(p, self.input_dim, &mut hidden, &mut out, state);
        Ok(out)
    }

    fn check_batch(&self, batch: &Minibatch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Usage("empty minibatch".into()));
        }
        if batch.dim != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: batch.dim,
            });
        }
        if let Some(&a) = batch.actions.iter().find(|&&a| a >= self.output_dim) {
            return Err(Error::Usage(format!("action {a} out of range {}", self.output_dim)));
        }
        Ok(())
    }

    /// TD targets `r + gamma * max_a' Q_target(s', a')`, with the bootstrap
    /// term dropped on terminal transitions.
    pub fn td_targets(&self, batch: &Minibatch, gamma: f64) -> Vec<f64> {
        let mut hidden = vec![0.0; self.hidden_dim];
        let mut out = vec![0.0; self.output_dim];
        (0..batch.len())
            .map(|i| {
                if batch.terminal[i] {
                    batch.rewards[i]
                } else {
                    forward_into(&self.target, self.input_dim, &mut hidden, &mut out, batch.next_state(i));
                    let best = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    batch.rewards[i] + gamma * best
                }
            })
            .collect()
    }

    /// Mean squared TD error against fixed `targets`, online parameters.
    pub fn loss_with_targets(&self, batch: &Minibatch, targets: &[f64]) -> f64 {
        let mut hidden = vec![0.0; self.hidden_dim];
        let mut out = vec![0.0; self.output_dim];
        let mut total = 0.0;
        for i in 0..batch.len() {
            forward_into(&self.online, self.input_dim, &mut hidden, &mut out, batch.state(i));
            let e = targets[i] - out[batch.actions[i]];
            total += e * e;
        }
        total / batch.len() as f64
    }

    /// Unclipped gradient of the mean squared TD loss w.r.t. the online
    /// parameters, targets held fixed.
    pub fn gradient(&self, batch: &Minibatch, gamma: f64) -> Result<Gradient> {
        self.check_batch(batch)?;
        let targets = self.td_targets(batch, gamma);
        let (input, hidden_n) = (self.input_dim, self.hidden_dim);
        let mut grad = Params::zeros(input, hidden_n, self.output_dim);
        let mut hidden = vec![0.0; hidden_n];
        let mut out = vec![0.0; self.output_dim];
        let mut dz = vec![0.0; hidden_n];
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for i in 0..batch.len() {
            let s = batch.state(i);
            let a = batch.actions[i];
            forward_into(&self.online, input, &mut hidden, &mut out, s);
            let err = targets[i] - out[a];
            loss += err * err;
            // dL/dq_a for L = mean (y - q_a)^2
            let g = -2.0 * err / n;
            grad.b2[a] += g;
            let w2_row = &self.online.w2[a * hidden_n..(a + 1) * hidden_n];
            for h in 0..hidden_n {
                grad.w2[a * hidden_n + h] += g * hidden[h];
                dz[h] = g * w2_row[h] * (1.0 - hidden[h] * hidden[h]);
                grad.b1[h] += dz[h];
            }
            for (j, &x) in s.iter().enumerate() {
                if x != 0.0 {
                    for h in 0..hidden_n {
                        grad.w1[h * input + j] += dz[h] * x;
                    }
                }
            }
        }
        let raw_norm = grad.norm();
        Ok(Gradient {
            loss: loss / n,
            grad,
            raw_norm,
        })
    }

    /// One clipped gradient-descent step. Returns the pre-step loss.
    pub fn td_train_step(&mut self, batch: &Minibatch, gamma: f64) -> Result<f64> {
        let Gradient { loss, mut grad, raw_norm } = self.gradient(batch, gamma)?;
        if raw_norm > self.clip_norm {
            let scale = self.clip_norm / raw_norm;
            grad.iter_mut().for_each(|g| *g *= scale);
        }
        let lr = self.learning_rate;
        match self.optimizer {
            Optimizer::Sgd => {
                if lr != 0.0 {
                    for (p, g) in self.online.iter_mut().zip(grad.iter()) {
                        *p -= lr * g;
                    }
                }
            }
            Optimizer::RmsProp => {
                let online = &self.online;
                let sq = self.sq_avg.get_or_insert_with(|| {
                    let mut z = online.clone();
                    z.iter_mut().for_each(|v| *v = 0.0);
                    z
                });
                for (v, g) in sq.iter_mut().zip(grad.iter()) {
                    *v = RMSPROP_DECAY * *v + (1.0 - RMSPROP_DECAY) * g * g;
                }
                if lr != 0.0 {
                    for ((p, g), v) in self.online.iter_mut().zip(grad.iter()).zip(sq.iter()) {
                        *p -= lr * g / (v.sqrt() + RMSPROP_EPS);
                    }
                }
            }
        }
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.online);
    }

    /// RMS of all online parameters.
    pub fn param_scalar(&self) -> f64 {
        let n = self.online.len();
        if n == 0 {
            return 0.0;
        }
        (self.online.iter().map(|w| w * w).sum::<f64>() / n as f64).sqrt()
    }

    /// Text checkpoint: a magic line, a `input hidden output` line, then one
    /// line each for `w1`, `b1`, `w2`, `b2` as space-separated values.
    /// Matrices are row-major. Only online parameters are stored.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CHECKPOINT_MAGIC}").unwrap();
        writeln!(s, "{} {} {}", self.input_dim, self.hidden_dim, self.output_dim).unwrap();
        for (name, v) in [
            ("w1", &self.online.w1),
            ("b1", &self.online.b1),
            ("w2", &self.online.w2),
            ("b2", &self.online.b2),
        ] {
            s.push_str(name);
            for x in v {
                write!(s, " {x}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("missing header"));
        }
        let dims: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("missing dims"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad dims")))
            .collect::<Result<_>>()?;
        let [input, hidden, output] = dims[..] else {
            return Err(bad("dims line needs three values"));
        };
        let mut read = |name: &str, len: usize| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {name}")))?;
            let mut toks = line.split_whitespace();
            if toks.next() != Some(name) {
                return Err(bad(&format!("expected {name}")));
            }
            let v: Vec<f64> = toks
                .map(|t| t.parse().map_err(|_| bad(&format!("bad value in {name}"))))
                .collect::<Result<_>>()?;
            if v.len() != len {
                return Err(bad(&format!("{name}: expected {len} values, got {}", v.len())));
            }
            Ok(v)
        };
        let params = Params {
            w1: read("w1", hidden * input)?,
            b1: read("b1", hidden)?,
            w2: read("w2", output * hidden)?,
            b2: read("b2", output)?,
        };
        Ok(Self::from_params(input, hidden, output, params))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&fs::read_to_string(path)?)
    }
}
