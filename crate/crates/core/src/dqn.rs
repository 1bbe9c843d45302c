//! Deep Q-learning from scratch: dense network with manual backprop, uniform replay,
//! ε-greedy exploration and a periodically synced target network.

use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs x inputs`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Dense {
    fn xavier<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| dist.sample(rng)).collect(),
            biases: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.biases).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Dense feed-forward Q-network; ReLU between layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    layers: Vec<Dense>,
}

/// Gradient with the same shape as the network's flattened parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl QNetwork {
    /// `sizes` = [input, hidden..., output]; Xavier-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self {
            layers: sizes.windows(2).map(|w| Dense::xavier(w[0], w[1], rng)).collect(),
        })
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_len()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Flattened parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + w]);
            at += w;
            let b = l.biases.len();
            l.biases.copy_from_slice(&params[at..at + b]);
            at += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Zeroes the output layer so every Q-value is zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("at least one layer");
        last.weights.fill(0.0);
        last.biases.fill(0.0);
    }

    fn check_input(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.input_len() {
            return Err(Error::Contract(format!(
                "state length {} does not match network input {}",
                state.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_input(state)?;
        Ok(self.activations(state).pop().expect("output layer"))
    }

    /// Post-activation outputs of every layer (the last one is linear).
    fn activations(&self, state: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(l.outputs);
            l.forward(acts.last().map_or(state, |a| a.as_slice()), &mut out);
            if i + 1 < self.layers.len() {
                relu_in_place(&mut out);
            }
            acts.push(out);
        }
        acts
    }

    /// Mean-squared TD loss over `(state, action, target)` samples and its gradient.
    pub fn loss_and_gradient(&self, batch: &[(&[f64], usize, f64)]) -> Result<(f64, Gradient)> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.param_count()];
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |at, l| {
                let o = *at;
                *at += l.param_count();
                Some(o)
            })
            .collect();
        let mut loss = 0.0;
        for &(state, action, target) in batch {
            self.check_input(state)?;
            if action >= self.output_len() {
                return Err(Error::Contract(format!("action {action} out of range")));
            }
            let acts = self.activations(state);
            let q = acts.last().expect("output")[action];
            let err = q - target;
            loss += err * err * scale;

            let mut delta = vec![0.0; self.output_len()];
            delta[action] = 2.0 * err * scale;
            for li in (0..self.layers.len()).rev() {
                let l = &self.layers[li];
                let input = if li == 0 { state } else { acts[li - 1].as_slice() };
                let g = &mut grad[offsets[li]..offsets[li] + l.param_count()];
                let (gw, gb) = g.split_at_mut(l.weights.len());
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (gwi, xi) in gw[o * l.inputs..(o + 1) * l.inputs].iter_mut().zip(input) {
                        *gwi += d * xi;
                    }
                }
                if li == 0 {
                    break;
                }
                let mut prev = vec![0.0; l.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, w) in prev.iter_mut().zip(&l.weights[o * l.inputs..(o + 1) * l.inputs]) {
                        *p += d * w;
                    }
                }
                for (p, a) in prev.iter_mut().zip(&acts[li - 1]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok((loss, Gradient(grad)))
    }

    fn apply_update(&mut self, step: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            for p in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *p -= step[at];
                at += 1;
            }
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn select_action<R: Rng + ?Sized>(net: &QNetwork, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..net.output_len()));
    }
    Ok(argmax(&net.forward(state)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be > 0".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            next: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        self.sample_indices(n, rng).into_iter().map(|i| &self.items[i]).collect()
    }
}

/// Linear decay from 1 to `end` over `fraction * total` steps, then constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub end: f64,
    pub fraction: f64,
    pub total: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        let span = self.fraction * self.total as f64;
        if span <= 0.0 {
            return self.end;
        }
        let progress = (step as f64 / span).min(1.0);
        1.0 + progress * (self.end - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub discount: f64,
    pub learning_starts: u64,
    pub exploration_fraction: f64,
    pub epsilon_min: f64,
    pub target_update_interval: u64,
    /// Environment steps between gradient updates.
    pub train_freq: u64,
    pub hidden: Vec<usize>,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// The full-scale settings from the original training setup.
    pub fn full() -> Self {
        Self {
            total_steps: 500_000,
            buffer_capacity: 100_000,
            batch_size: 512,
            learning_rate: 0.001,
            discount: 0.8,
            learning_starts: 5000,
            exploration_fraction: 0.7,
            epsilon_min: 0.01,
            target_update_interval: 1000,
            train_freq: 1,
            hidden: vec![128, 128],
            optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }

    /// Reduced budget that trains the whole hierarchy on one laptop core.
    pub fn desk() -> Self {
        Self {
            total_steps: 20_000,
            buffer_capacity: 20_000,
            batch_size: 32,
            learning_starts: 1000,
            target_update_interval: 500,
            train_freq: 4,
            hidden: vec![64, 64],
            optimizer: Optimizer::adam(),
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must be in (0, 1]");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning rate must be > 0");
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad("batch size must be in 1..=buffer capacity");
        }
        if !(0.0..=1.0).contains(&self.exploration_fraction) || !(0.0..=1.0).contains(&self.epsilon_min) {
            return bad("exploration fraction and epsilon floor must be in [0, 1]");
        }
        if self.target_update_interval == 0 || self.train_freq == 0 {
            return bad("target update interval and train frequency must be > 0");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be > 0");
        }
        Ok(())
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            end: self.epsilon_min,
            fraction: self.exploration_fraction,
            total: self.total_steps,
        }
    }
}

/// An episodic environment with a discrete action space.
pub trait Episodic {
    fn state_len(&self) -> usize;
    fn action_count(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;
    /// Returns (next state, reward, terminal).
    fn step(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)>;
}

/// Online network, target network, replay buffer, optimizer state and RNG.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub online: QNetwork,
    pub target: QNetwork,
    pub buffer: ReplayBuffer,
    pub cfg: TrainConfig,
    pub step: u64,
    rng: ChaCha8Rng,
    adam: AdamState,
}

impl DqnAgent {
    pub fn new(state_len: usize, action_count: usize, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut sizes = vec![state_len];
        sizes.extend(&cfg.hidden);
        sizes.push(action_count);
        let online = QNetwork::new(&sizes, &mut rng)?;
        Ok(Self {
            target: online.clone(),
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            online,
            cfg,
            step: 0,
            rng,
            adam: AdamState::default(),
        })
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon().value(self.step)
    }

    pub fn act(&mut self, state: &[f64]) -> Result<usize> {
        let eps = self.epsilon();
        select_action(&self.online, state, eps, &mut self.rng)
    }

    pub fn greedy(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax(&self.online.forward(state)?))
    }

    /// Stores a transition, advances the step counter, and trains / syncs on schedule.
    /// Returns the loss when an update happened.
    pub fn observe(&mut self, t: Transition) -> Result<Option<f64>> {
        self.buffer.push(t);
        self.step += 1;
        let mut loss = None;
        if self.step > self.cfg.learning_starts && self.step % self.cfg.train_freq == 0 {
            loss = self.train_step()?;
        }
        if self.step % self.cfg.target_update_interval == 0 {
            self.sync_target();
        }
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// TD targets: `r` for terminals, else `r + discount * max Q_target(s')`.
    pub fn targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|t| {
                if t.terminal {
                    Ok(t.reward)
                } else {
                    let q = self.target.forward(&t.next_state)?;
                    Ok(t.reward + self.cfg.discount * q.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                }
            })
            .collect()
    }

    /// One gradient update on a uniform minibatch. `None` if the buffer is empty.
    pub fn train_step(&mut self) -> Result<Option<f64>> {
        if self.buffer.is_empty() {
            return Ok(None);
        }
        let idx = self.buffer.sample_indices(self.cfg.batch_size, &mut self.rng);
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i).expect("index")).collect();
        let ys = self.targets(&batch)?;
        let samples: Vec<(&[f64], usize, f64)> = batch
            .iter()
            .zip(&ys)
            .map(|(t, &y)| (t.state.as_slice(), t.action, y))
            .collect();
        let (loss, Gradient(g)) = self.online.loss_and_gradient(&samples)?;
        let update = self.update_from(g);
        self.online.apply_update(&update);
        if !self.online.is_finite() {
            return Err(Error::Environment("network parameters diverged to non-finite values".into()));
        }
        Ok(Some(loss))
    }

    fn update_from(&mut self, mut g: Vec<f64>) -> Vec<f64> {
        let lr = self.cfg.learning_rate;
        match self.cfg.optimizer {
            Optimizer::Sgd => {
                for x in &mut g {
                    *x *= lr;
                }
                g
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let st = &mut self.adam;
                if st.m.len() != g.len() {
                    st.m = vec![0.0; g.len()];
                    st.v = vec![0.0; g.len()];
                    st.t = 0;
                }
                st.t += 1;
                let c1 = 1.0 - beta1.powi(st.t as i32);
                let c2 = 1.0 - beta2.powi(st.t as i32);
                for ((x, m), v) in g.iter_mut().zip(&mut st.m).zip(&mut st.v) {
                    *m = beta1 * *m + (1.0 - beta1) * *x;
                    *v = beta2 * *v + (1.0 - beta2) * *x * *x;
                    *x = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
                g
            }
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            step: self.step,
            online: self.online.clone(),
            target: self.target.clone(),
            rng: self.rng.clone(),
        }
    }

    /// Restores networks, step and RNG; the replay buffer starts empty.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.validate()?;
        Ok(Self {
            buffer: ReplayBuffer::new(ck.config.buffer_capacity)?,
            online: ck.online,
            target: ck.target,
            cfg: ck.config,
            step: ck.step,
            rng: ck.rng,
            adam: AdamState::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainLog {
    pub episode_rewards: Vec<f64>,
    pub episode_lengths: Vec<usize>,
    pub losses: Vec<f64>,
}

impl TrainLog {
    /// Mean episode reward in the first and last tenth of episodes.
    pub fn decile_means(&self) -> Option<(f64, f64)> {
        let n = self.episode_rewards.len();
        if n < 10 {
            return None;
        }
        let k = n / 10;
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&self.episode_rewards[..k]), mean(&self.episode_rewards[n - k..])))
    }
}

/// Runs ε-greedy DQN on `env` until the agent has taken `cfg.total_steps` steps.
pub fn train<E: Episodic>(env: &mut E, agent: &mut DqnAgent) -> Result<TrainLog> {
    if env.state_len() != agent.online.input_len() || env.action_count() != agent.online.output_len() {
        return Err(Error::Contract("environment and network dimensions differ".into()));
    }
    let mut log = TrainLog::default();
    let mut state = env.reset(agent.rng.gen())?;
    let mut ep_reward = 0.0;
    let mut ep_len = 0;
    while agent.step < agent.cfg.total_steps {
        let action = agent.act(&state)?;
        let (next, reward, terminal) = env.step(action)?;
        ep_reward += reward;
        ep_len += 1;
        let t = Transition {
            state: std::mem::take(&mut state),
            action,
            reward,
            next_state: next.clone(),
            terminal,
        };
        if let Some(loss) = agent.observe(t)? {
            log.losses.push(loss);
        }
        if terminal {
            log.episode_rewards.push(ep_reward);
            log.episode_lengths.push(ep_len);
            ep_reward = 0.0;
            ep_len = 0;
            state = env.reset(agent.rng.gen())?;
        } else {
            state = next;
        }
    }
    Ok(log)
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized agent: both networks, the step counter and the RNG stream position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub step: u64,
    pub online: QNetwork,
    pub target: QNetwork,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        for net in [&self.online, &self.target] {
            if net.layers.is_empty() {
                return Err(Error::Checkpoint("network has no layers".into()));
            }
            for (i, l) in net.layers.iter().enumerate() {
                if l.inputs == 0 || l.outputs == 0 || l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                    return Err(Error::Checkpoint(format!("layer {i} has inconsistent shape")));
                }
                if i > 0 && net.layers[i - 1].outputs != l.inputs {
                    return Err(Error::Checkpoint(format!("layer {i} input does not match previous output")));
                }
            }
            if !net.is_finite() {
                return Err(Error::Checkpoint("non-finite parameters".into()));
            }
        }
        if self.online.layer_sizes() != self.target.layer_sizes() {
            return Err(Error::Checkpoint("online and target shapes differ".into()));
        }
        self.config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
