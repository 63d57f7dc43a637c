//! Deep deterministic policy gradient agent.
//!
//! The actor maps a state to `a_bound * softmax(logits)`, one entry per
//! action dimension; the critic scores the concatenation `[state, action]`.
//! Each update fits the critic to bootstrapped targets computed with the
//! target networks only, moves the actor along `dQ/da` chained through the
//! actor, then blends both target networks toward their online copies.

mod noise;
mod replay;
mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, DenseNet, FinalInit, Gradients};
use crate::rng::{substream, SimRng, Stream};

pub use noise::OuNoise;
pub use replay::{ReplayBuffer, Transition};
pub use train::{train, Environment, Feedback, QuadraticBandit, StepRecord};

/// Final actor layer init range; keeps the initial softmax near uniform.
pub const ACTOR_FINAL_INIT: f64 = 3e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub replay_capacity: usize,
    /// Updates start once the buffer holds strictly more than this many.
    pub replay_threshold: usize,
    pub batch_size: usize,
    pub a_bound: f64,
    pub ou_mu: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            tau: 0.01,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            replay_capacity: 100,
            replay_threshold: 64,
            batch_size: 32,
            a_bound: 10.0,
            ou_mu: 0.0,
            ou_theta: 0.1,
            ou_sigma: 0.15,
            actor_hidden: vec![64, 32],
            critic_hidden: vec![64],
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(format!("ddpg.{key}"), msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau", "must lie in (0, 1]");
        }
        if !(self.actor_lr > 0.0 && self.actor_lr.is_finite()) {
            return bad("actor_lr", "must be positive");
        }
        if !(self.critic_lr > 0.0 && self.critic_lr.is_finite()) {
            return bad("critic_lr", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.batch_size > self.replay_threshold {
            return bad("batch_size", "must not exceed replay_threshold");
        }
        if self.replay_threshold > self.replay_capacity {
            return bad("replay_threshold", "must not exceed replay_capacity");
        }
        if !(self.a_bound > crate::topology::W_MIN && self.a_bound.is_finite()) {
            return bad("a_bound", "must be a finite value above the weight floor");
        }
        if !(self.ou_theta.is_finite() && self.ou_sigma >= 0.0 && self.ou_mu.is_finite()) {
            return bad("ou_sigma", "noise parameters must be finite, sigma >= 0");
        }
        if self.actor_hidden.contains(&0) {
            return bad("actor_hidden", "layer widths must be positive");
        }
        if self.critic_hidden.contains(&0) {
            return bad("critic_hidden", "layer widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    /// Mean squared TD error before the critic step.
    pub critic: f64,
    /// `-mean Q(s, mu(s))` with the freshly updated critic.
    pub actor: f64,
}

/// Deterministic action: `a_bound * softmax(actor(state))`, plus `noise`
/// elementwise when given.
pub fn select_action(
    actor: &DenseNet,
    state: &[f64],
    noise: Option<&[f64]>,
    a_bound: f64,
) -> Result<Vec<f64>> {
    let mut action: Vec<f64> = actor.predict(state)?.into_iter().map(|p| p * a_bound).collect();
    if let Some(noise) = noise {
        if noise.len() != action.len() {
            return Err(Error::DimensionMismatch {
                context: "exploration noise",
                expected: action.len(),
                found: noise.len(),
            });
        }
        action.iter_mut().zip(noise).for_each(|(a, n)| *a += n);
    }
    Ok(action)
}

fn critic_input(state: &[f64], action: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(state.len() + action.len());
    x.extend_from_slice(state);
    x.extend_from_slice(action);
    x
}

/// `y_i = r_i + gamma * Q'(s'_i, mu'(s'_i))`. No terminal masking: episodes
/// are truncations of a continuing task.
pub fn td_targets(
    target_actor: &DenseNet,
    target_critic: &DenseNet,
    gamma: f64,
    a_bound: f64,
    batch: &[Transition],
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            let next_action = select_action(target_actor, &t.next_state, None, a_bound)?;
            let q = target_critic.predict(&critic_input(&t.next_state, &next_action))?[0];
            Ok(t.reward + gamma * q)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Agent {
    config: DdpgConfig,
    state_dim: usize,
    action_dim: usize,
    pub actor: DenseNet,
    pub critic: DenseNet,
    pub target_actor: DenseNet,
    pub target_critic: DenseNet,
    actor_opt: AdamState,
    critic_opt: AdamState,
    pub buffer: ReplayBuffer,
    pub noise: OuNoise,
    noise_rng: SimRng,
    replay_rng: SimRng,
    updates: u64,
}

impl Agent {
    pub fn new(config: DdpgConfig, state_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::input("state and action dimensions must be positive"));
        }
        let mut init_rng = substream(seed, Stream::Init, 0, 0);

        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend(&config.actor_hidden);
        actor_sizes.push(action_dim);
        let mut actor_acts = vec![Activation::Relu; config.actor_hidden.len()];
        actor_acts.push(Activation::Softmax);
        let actor = DenseNet::new(
            &actor_sizes,
            &actor_acts,
            FinalInit::Uniform(ACTOR_FINAL_INIT),
            &mut init_rng,
        )?;

        let mut critic_sizes = vec![state_dim + action_dim];
        critic_sizes.extend(&config.critic_hidden);
        critic_sizes.push(1);
        let mut critic_acts = vec![Activation::Relu; config.critic_hidden.len()];
        critic_acts.push(Activation::Identity);
        let critic = DenseNet::new(&critic_sizes, &critic_acts, FinalInit::Default, &mut init_rng)?;

        Ok(Self {
            actor_opt: AdamState::new(&actor, config.actor_lr),
            critic_opt: AdamState::new(&critic, config.critic_lr),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            buffer: ReplayBuffer::new(config.replay_capacity),
            noise: OuNoise::new(action_dim, config.ou_mu, config.ou_theta, config.ou_sigma),
            noise_rng: substream(seed, Stream::Noise, 0, 0),
            replay_rng: substream(seed, Stream::Replay, 0, 0),
            updates: 0,
            config,
            state_dim,
            action_dim,
        })
    }

    pub fn config(&self) -> &DdpgConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Policy output, with a fresh OU sample added when `explore` is set.
    pub fn act(&mut self, state: &[f64], explore: bool) -> Result<Vec<f64>> {
        if explore {
            let noise = self.noise.step(&mut self.noise_rng).to_vec();
            select_action(&self.actor, state, Some(&noise), self.config.a_bound)
        } else {
            select_action(&self.actor, state, None, self.config.a_bound)
        }
    }

    pub fn ready_to_train(&self) -> bool {
        self.buffer.len() > self.config.replay_threshold
    }

    /// Stores a transition and, once the buffer is past the threshold, samples
    /// a batch and performs one update.
    pub fn observe(&mut self, transition: Transition) -> Result<Option<Losses>> {
        if transition.state.len() != self.state_dim || transition.next_state.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "transition state",
                expected: self.state_dim,
                found: transition.state.len(),
            });
        }
        if transition.action.len() != self.action_dim {
            return Err(Error::DimensionMismatch {
                context: "transition action",
                expected: self.action_dim,
                found: transition.action.len(),
            });
        }
        if !transition.reward.is_finite() {
            return Err(Error::input("transition reward is not finite"));
        }
        self.buffer.push(transition);
        if !self.ready_to_train() {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.config.batch_size, &mut self.replay_rng);
        self.train_step(&batch).map(Some)
    }

    pub fn td_targets(&self, batch: &[Transition]) -> Result<Vec<f64>> {
        td_targets(
            &self.target_actor,
            &self.target_critic,
            self.config.gamma,
            self.config.a_bound,
            batch,
        )
    }

    /// One critic step on the batch's mean squared TD error; returns the loss
    /// measured before the step.
    pub fn critic_step(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::input("empty training batch"));
        }
        let targets = self.td_targets(batch)?;
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.critic);
        let mut loss = 0.0;
        for (t, y) in batch.iter().zip(&targets) {
            let tape = self.critic.forward(&critic_input(&t.state, &t.action))?;
            let err = tape.output()[0] - y;
            loss += err * err / n;
            self.critic.backward_into(&tape, &[2.0 * err / n], &mut grads)?;
        }
        self.critic_opt.step(&mut self.critic, &grads)?;
        Ok(loss)
    }

    /// One actor step ascending the critic's value of the actor's own
    /// actions; returns `-mean Q(s, mu(s))` before the step.
    pub fn actor_step(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::input("empty training batch"));
        }
        let n = batch.len() as f64;
        let a_bound = self.config.a_bound;
        let mut grads = Gradients::zeros_like(&self.actor);
        let mut mean_q = 0.0;
        for t in batch {
            let actor_tape = self.actor.forward(&t.state)?;
            let action: Vec<f64> = actor_tape.output().iter().map(|p| p * a_bound).collect();
            let critic_tape = self.critic.forward(&critic_input(&t.state, &action))?;
            mean_q += critic_tape.output()[0] / n;
            let (_, dq_dx) = self.critic.backward(&critic_tape, &[1.0])?;
            // minimise -Q: d(-Q/n)/d(softmax) = -(a_bound / n) * dQ/da
            let upstream: Vec<f64> = dq_dx[self.state_dim..]
                .iter()
                .map(|g| -g * a_bound / n)
                .collect();
            self.actor.backward_into(&actor_tape, &upstream, &mut grads)?;
        }
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(-mean_q)
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        self.target_critic.soft_update(&self.critic, self.config.tau)?;
        self.target_actor.soft_update(&self.actor, self.config.tau)
    }

    /// Critic step, actor step, target blend.
    pub fn train_step(&mut self, batch: &[Transition]) -> Result<Losses> {
        let critic = self.critic_step(batch)?;
        let actor = self.actor_step(batch)?;
        self.soft_update_targets()?;
        self.updates += 1;
        Ok(Losses { critic, actor })
    }

    /// Resets exploration noise; called at each episode start.
    pub fn begin_episode(&mut self) {
        self.noise.reset();
    }

    /// Writes the four networks, both optimiser states and a config echo into
    /// `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: Vec<u8>| {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(path, e))
        };
        write("actor.bin", self.actor.to_bytes())?;
        write("critic.bin", self.critic.to_bytes())?;
        write("target_actor.bin", self.target_actor.to_bytes())?;
        write("target_critic.bin", self.target_critic.to_bytes())?;
        write("actor_adam.bin", self.actor_opt.to_bytes())?;
        write("critic_adam.bin", self.critic_opt.to_bytes())?;
        let echo = AgentEcho {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            updates: self.updates,
            ddpg: self.config.clone(),
        };
        let text = toml::to_string(&echo).map_err(|e| Error::input(e.to_string()))?;
        write("agent.toml", text.into_bytes())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentEcho {
    state_dim: usize,
    action_dim: usize,
    updates: u64,
    ddpg: DdpgConfig,
}

fn read_net(path: &Path) -> Result<DenseNet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    DenseNet::read_from(&bytes[..]).map_err(|message| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

/// Loads the online actor from a checkpoint directory and checks its
/// dimensions.
pub fn load_actor(dir: &Path, state_dim: usize, action_dim: usize) -> Result<DenseNet> {
    let actor = read_net(&dir.join("actor.bin"))?;
    if actor.input_dim() != state_dim {
        return Err(Error::DimensionMismatch {
            context: "checkpoint actor input",
            expected: state_dim,
            found: actor.input_dim(),
        });
    }
    if actor.output_dim() != action_dim {
        return Err(Error::DimensionMismatch {
            context: "checkpoint actor output",
            expected: action_dim,
            found: actor.output_dim(),
        });
    }
    Ok(actor)
}
