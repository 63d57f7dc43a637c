use crate::env::RoutingEnv;
use crate::error::Result;

use super::{Agent, Transition};

/// What the training loop needs from an environment.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<Feedback>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feedback {
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// The action after any environment-side clamping; this is what gets
    /// stored for replay.
    pub applied_action: Vec<f64>,
    pub mean_delay_ms: Option<f64>,
    pub delivered: u64,
    pub dropped: u64,
}

impl Environment for RoutingEnv {
    fn state_dim(&self) -> usize {
        RoutingEnv::state_dim(self)
    }

    fn action_dim(&self) -> usize {
        RoutingEnv::action_dim(self)
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        RoutingEnv::reset(self)
    }

    fn step(&mut self, action: &[f64]) -> Result<Feedback> {
        let r = RoutingEnv::step(self, action)?;
        Ok(Feedback {
            reward: r.reward,
            mean_delay_ms: r.mean_delay_ms(),
            delivered: r.metrics.delivered,
            dropped: r.metrics.dropped,
            applied_action: r.weights.as_slice().to_vec(),
            next_state: r.next_state,
        })
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based, counted across episodes
    pub step: u64,
    /// 1-based
    pub episode: u64,
    pub reward: f64,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub mean_delay_ms: Option<f64>,
    pub delivered: u64,
    pub dropped: u64,
}

/// Runs `episodes` episodes of `steps_per_episode` steps each, calling
/// `on_step` after every step.
pub fn train<E, F>(
    env: &mut E,
    agent: &mut Agent,
    episodes: u64,
    steps_per_episode: usize,
    mut on_step: F,
) -> Result<Vec<StepRecord>>
where
    E: Environment + ?Sized,
    F: FnMut(&StepRecord, &Agent) -> Result<()>,
{
    let mut log = Vec::with_capacity(episodes as usize * steps_per_episode);
    let mut step = 0;
    for episode in 1..=episodes {
        let mut state = env.reset()?;
        agent.begin_episode();
        for _ in 0..steps_per_episode {
            step += 1;
            let action = agent.act(&state, true)?;
            let fb = env.step(&action)?;
            let losses = agent.observe(Transition {
                state: std::mem::take(&mut state),
                action: fb.applied_action,
                reward: fb.reward,
                next_state: fb.next_state.clone(),
            })?;
            state = fb.next_state;
            let record = StepRecord {
                step,
                episode,
                reward: fb.reward,
                critic_loss: losses.map(|l| l.critic),
                actor_loss: losses.map(|l| l.actor),
                mean_delay_ms: fb.mean_delay_ms,
                delivered: fb.delivered,
                dropped: fb.dropped,
            };
            on_step(&record, agent)?;
            log.push(record);
        }
    }
    Ok(log)
}

/// Stateless one-dimensional control check: the observation is a single zero,
/// the first action coordinate (clamped to [0, 1]) is the control, and the
/// reward is `-(a - optimum)^2`. Pair it with an actor of two outputs and
/// `a_bound = 1`.
#[derive(Debug, Clone)]
pub struct QuadraticBandit {
    pub optimum: f64,
}

impl Environment for QuadraticBandit {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        Ok(vec![0.0])
    }

    fn step(&mut self, action: &[f64]) -> Result<Feedback> {
        let a = action[0].clamp(0.0, 1.0);
        Ok(Feedback {
            reward: -(a - self.optimum).powi(2),
            next_state: vec![0.0],
            applied_action: vec![a, 1.0 - a],
            mean_delay_ms: None,
            delivered: 0,
            dropped: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddpg::DdpgConfig;

    #[test]
    fn seventy_steps_give_six_updates() {
        let mut env = QuadraticBandit { optimum: 0.7 };
        let cfg = DdpgConfig {
            a_bound: 1.0,
            ..DdpgConfig::default()
        };
        let mut agent = Agent::new(cfg, 1, 2, 0).unwrap();
        let log = train(&mut env, &mut agent, 1, 70, |_, _| Ok(())).unwrap();
        assert_eq!(log.len(), 70);
        assert_eq!(agent.updates(), 6);
        assert!(log[..64].iter().all(|r| r.critic_loss.is_none() && r.actor_loss.is_none()));
        assert!(log[64..].iter().all(|r| r.critic_loss.is_some() && r.actor_loss.is_some()));
        assert_eq!(log.last().unwrap().step, 70);
    }

    #[test]
    fn training_is_reproducible() {
        let run = || {
            let mut env = QuadraticBandit { optimum: 0.7 };
            let cfg = DdpgConfig {
                a_bound: 1.0,
                ..DdpgConfig::default()
            };
            let mut agent = Agent::new(cfg, 1, 2, 77).unwrap();
            let log = train(&mut env, &mut agent, 2, 80, |_, _| Ok(())).unwrap();
            (log, agent.actor)
        };
        assert_eq!(run(), run());
    }
}
