//! Episodic environment over the simulator.
//!
//! State: the per-slot traffic matrix (bytes injected per source/destination
//! pair), flattened row-major and divided by `state_normalizer`. Action: one
//! weight per directed link. Reward: negated mean delivery delay in
//! milliseconds over the slot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, SimRng, Stream};
use crate::sim::{FlowSpec, SlotMetrics, Simulator};
use crate::topology::{build_routing_state, ForwardingMode, Topology, WeightAssignment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// seconds per step
    pub slot_duration: f64,
    pub steps_per_episode: usize,
    /// Divisor for traffic-matrix entries, in bytes. Defaults to the bytes the
    /// fastest link can carry in one slot.
    pub state_normalizer: Option<f64>,
    pub forwarding_mode: ForwardingMode,
    /// Reward magnitude, in ms, for a slot with no deliveries.
    pub delay_penalty: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            slot_duration: 0.1,
            steps_per_episode: 100,
            state_normalizer: None,
            forwarding_mode: ForwardingMode::WeightedMultipath,
            delay_penalty: 100.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.slot_duration > 0.0 && self.slot_duration.is_finite()) {
            return Err(Error::config("env.slot_duration", "must be positive"));
        }
        if self.steps_per_episode == 0 {
            return Err(Error::config("env.steps_per_episode", "must be at least 1"));
        }
        if let Some(n) = self.state_normalizer {
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::config("env.state_normalizer", "must be positive"));
            }
        }
        if !(self.delay_penalty.is_finite() && self.delay_penalty >= 0.0) {
            return Err(Error::config("env.delay_penalty", "must be a non-negative number"));
        }
        Ok(())
    }

    pub fn normalizer_for(&self, topology: &Topology) -> f64 {
        self.state_normalizer
            .unwrap_or(self.slot_duration * topology.max_bandwidth() / 8.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub metrics: SlotMetrics,
    /// The weights actually installed for this slot.
    pub weights: WeightAssignment,
}

impl StepResult {
    pub fn mean_delay_ms(&self) -> Option<f64> {
        self.metrics.mean_delay().map(|d| d * 1e3)
    }
}

/// Reward for one slot: negated mean delay in ms, or the penalty when nothing
/// was delivered.
pub fn slot_reward(metrics: &SlotMetrics, delay_penalty: f64) -> f64 {
    match metrics.mean_delay() {
        Some(d) => -d * 1e3,
        None => -delay_penalty,
    }
}

pub struct RoutingEnv {
    topology: Topology,
    config: EnvConfig,
    seed: u64,
    max_weight: f64,
    normalizer: f64,
    sim: Simulator,
    routing_rng: SimRng,
    next_episode: u64,
    steps_left: Option<usize>,
}

impl RoutingEnv {
    /// `max_weight` is the upper clamp for actions (the actor's output scale).
    pub fn new(
        topology: Topology,
        flows: Vec<FlowSpec>,
        config: EnvConfig,
        max_weight: f64,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if !(max_weight > crate::topology::W_MIN && max_weight.is_finite()) {
            return Err(Error::input("max weight must exceed the weight floor"));
        }
        let normalizer = config.normalizer_for(&topology);
        let sim = Simulator::new(topology.clone(), flows, seed)?;
        Ok(Self {
            topology,
            config,
            seed,
            max_weight,
            normalizer,
            sim,
            routing_rng: substream(seed, Stream::Routing, 0, 0),
            next_episode: 0,
            steps_left: None,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn state_dim(&self) -> usize {
        self.topology.node_count().pow(2)
    }

    pub fn action_dim(&self) -> usize {
        self.topology.link_count()
    }

    pub fn set_forwarding_mode(&mut self, mode: ForwardingMode) {
        self.config.forwarding_mode = mode;
    }

    /// Starts the next episode in sequence.
    pub fn reset(&mut self) -> Result<Vec<f64>> {
        let episode = self.next_episode;
        self.reset_episode(episode)
    }

    /// Starts episode `episode`: empties the network, reseeds every stream from
    /// `(seed, episode)`, and measures the initial state over one warm-up slot
    /// with all weights at 1.
    pub fn reset_episode(&mut self, episode: u64) -> Result<Vec<f64>> {
        self.next_episode = episode + 1;
        self.sim.reset(self.seed, episode);
        self.routing_rng = substream(self.seed, Stream::Routing, 0, episode);
        let uniform = WeightAssignment::uniform(&self.topology, 1.0)?;
        let routing = build_routing_state(&self.topology, &uniform, self.config.forwarding_mode)?;
        let warmup = self
            .sim
            .run_slot(&routing, self.config.slot_duration, &mut self.routing_rng);
        self.steps_left = Some(self.config.steps_per_episode);
        Ok(self.encode_state(&warmup))
    }

    /// Clamps `action` into the weight range and runs one slot.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let weights = WeightAssignment::from_action(&self.topology, action, self.max_weight)?;
        self.step_weights(weights)
    }

    /// Runs one slot with explicit weights, bypassing the action clamp.
    pub fn step_weights(&mut self, weights: WeightAssignment) -> Result<StepResult> {
        match self.steps_left {
            None => return Err(Error::input("step called before reset")),
            Some(0) => return Err(Error::input("episode is over; call reset")),
            Some(ref mut n) => *n -= 1,
        }
        let routing = build_routing_state(&self.topology, &weights, self.config.forwarding_mode)?;
        let metrics = self
            .sim
            .run_slot(&routing, self.config.slot_duration, &mut self.routing_rng);
        Ok(StepResult {
            reward: slot_reward(&metrics, self.config.delay_penalty),
            next_state: self.encode_state(&metrics),
            metrics,
            weights,
        })
    }

    pub fn encode_state(&self, metrics: &SlotMetrics) -> Vec<f64> {
        metrics
            .tx_bytes
            .iter()
            .map(|&b| b as f64 / self.normalizer)
            .collect()
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ArrivalModel;

    fn reference_flow(arrival: ArrivalModel) -> FlowSpec {
        FlowSpec {
            src: 0,
            dst: 3,
            rate: 4.636e6,
            packet_size: 1024,
            arrival,
            start: 0.0,
            stop: None,
        }
    }

    fn env(flows: Vec<FlowSpec>, config: EnvConfig) -> RoutingEnv {
        RoutingEnv::new(Topology::diamond_with_chord(5e6, 100), flows, config, 10.0, 42).unwrap()
    }

    #[test]
    fn no_traffic_means_zero_state() {
        let mut e = env(vec![], EnvConfig::default());
        assert_eq!(e.reset().unwrap(), vec![0.0; 16]);
    }

    #[test]
    fn warmup_state_counts_cbr_packets() {
        let cfg = EnvConfig {
            state_normalizer: Some(1.0),
            ..EnvConfig::default()
        };
        let mut e = env(vec![reference_flow(ArrivalModel::Cbr)], cfg);
        let s0 = e.reset().unwrap();
        let n = s0[3] / 1024.0;
        assert!(n == 56.0 || n == 57.0, "{n}");
        assert_eq!(s0.iter().sum::<f64>(), s0[3]);
    }

    #[test]
    fn resets_are_reproducible() {
        let mut a = env(vec![reference_flow(ArrivalModel::Poisson)], EnvConfig::default());
        let mut b = env(vec![reference_flow(ArrivalModel::Poisson)], EnvConfig::default());
        assert_eq!(a.reset().unwrap(), b.reset().unwrap());
        let again = a.reset_episode(0).unwrap();
        assert_eq!(again, b.reset_episode(0).unwrap());
    }

    #[test]
    fn default_normalizer_is_link_bytes_per_slot() {
        let e = env(vec![], EnvConfig::default());
        assert!((e.normalizer() - 62_500.0).abs() < 1e-9);
    }

    #[test]
    fn reward_is_negated_mean_delay_ms() {
        let m = SlotMetrics {
            delivered: 3,
            sum_delay: 0.002 + 0.003 + 0.004,
            ..SlotMetrics::default()
        };
        assert!((slot_reward(&m, 100.0) - -3.0).abs() < 1e-12);
        assert_eq!(slot_reward(&SlotMetrics::default(), 100.0), -100.0);
    }

    #[test]
    fn step_clamps_and_validates() {
        let mut e = env(vec![reference_flow(ArrivalModel::Poisson)], EnvConfig::default());
        assert!(e.step(&[1.0; 10]).is_err(), "step before reset");
        e.reset().unwrap();
        let mut action = vec![1.0; 10];
        action[0] = 12.0;
        let r = e.step(&action).unwrap();
        assert_eq!(r.weights.get(0), 10.0);
        assert!(e.step(&[1.0; 9]).is_err());
        action[3] = f64::NAN;
        assert!(e.step(&action).is_err());
    }

    #[test]
    fn episode_length_is_enforced() {
        let cfg = EnvConfig {
            steps_per_episode: 3,
            ..EnvConfig::default()
        };
        let mut e = env(vec![reference_flow(ArrivalModel::Poisson)], cfg);
        e.reset().unwrap();
        for _ in 0..3 {
            e.step(&[1.0; 10]).unwrap();
        }
        assert!(e.step(&[1.0; 10]).is_err());
        e.reset().unwrap();
        assert!(e.step(&[1.0; 10]).is_ok());
    }

    #[test]
    fn state_matches_tx_matrix() {
        let mut e = env(vec![reference_flow(ArrivalModel::Poisson)], EnvConfig::default());
        e.reset().unwrap();
        for _ in 0..5 {
            let r = e.step(&[1.0; 10]).unwrap();
            for (s, b) in r.next_state.iter().zip(&r.metrics.tx_bytes) {
                assert_eq!(s * e.normalizer(), *b as f64);
            }
            // diagonal is always empty
            assert!((0..4).all(|i| r.next_state[i * 4 + i] == 0.0));
            if r.metrics.delivered > 0 {
                let expected = -r.metrics.sum_delay / r.metrics.delivered as f64 * 1e3;
                assert_eq!(r.reward, expected);
            }
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = EnvConfig {
            slot_duration: 0.0,
            ..EnvConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EnvConfig {
            steps_per_episode: 0,
            ..EnvConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
