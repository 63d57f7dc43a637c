//! Noise-free policy evaluation on fresh traffic.

use crate::baselines::{ospf_weights, RandomWeights};
use crate::ddpg::select_action;
use crate::env::{EnvConfig, RoutingEnv};
use crate::error::Result;
use crate::nn::DenseNet;
use crate::rng::{substream, SimRng, Stream};
use crate::sim::FlowSpec;
use crate::topology::{ForwardingMode, Topology, WeightAssignment};

/// Evaluation episodes are numbered from here so they never reuse a
/// training episode's traffic.
pub const EVAL_EPISODE_BASE: u64 = 1 << 30;

/// A routing policy under evaluation.
pub enum Policy {
    Actor { actor: DenseNet, a_bound: f64 },
    Ospf { reference_bandwidth: f64 },
    Random { upper: f64, resample_every_step: bool },
    Fixed(WeightAssignment),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Actor { .. } => "ddpg",
            Policy::Ospf { .. } => "ospf",
            Policy::Random { .. } => "random",
            Policy::Fixed(_) => "fixed",
        }
    }

    /// OSPF always forwards on a single shortest path; the others use the
    /// configured mode.
    pub fn forwarding_mode(&self, configured: ForwardingMode) -> ForwardingMode {
        match self {
            Policy::Ospf { .. } => ForwardingMode::SinglePath,
            _ => configured,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub episode: u64,
    /// Mean over slots that delivered at least one packet.
    pub mean_delay_ms: Option<f64>,
    pub injected: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub policy: String,
    pub episodes: Vec<EpisodeSummary>,
    /// Mean of per-slot mean delay across every evaluated slot.
    pub mean_delay_ms: Option<f64>,
    pub stddev_delay_ms: Option<f64>,
    /// dropped / injected over all episodes; 0 with no traffic.
    pub drop_rate: f64,
}

pub struct Scenario<'a> {
    pub topology: &'a Topology,
    pub flows: &'a [FlowSpec],
    pub env: &'a EnvConfig,
    pub max_weight: f64,
    pub seed: u64,
}

pub fn evaluate(scenario: &Scenario<'_>, policy: &Policy, episodes: u64) -> Result<EvalSummary> {
    let mut config = scenario.env.clone();
    config.forwarding_mode = policy.forwarding_mode(config.forwarding_mode);
    let mut env = RoutingEnv::new(
        scenario.topology.clone(),
        scenario.flows.to_vec(),
        config,
        scenario.max_weight,
        scenario.seed,
    )?;
    let fixed = match policy {
        Policy::Ospf { reference_bandwidth } => Some(ospf_weights(scenario.topology, *reference_bandwidth)?),
        Policy::Fixed(w) => Some(w.clone()),
        _ => None,
    };
    let baseline_rng = |episode| substream(scenario.seed, Stream::Baseline, 0, episode);
    let mut random: Option<RandomWeights<SimRng>> = match policy {
        Policy::Random { upper, resample_every_step } => {
            Some(RandomWeights::new(baseline_rng(0), *upper, *resample_every_step))
        }
        _ => None,
    };

    let mut slot_delays = Vec::new();
    let mut summaries = Vec::new();
    for i in 0..episodes {
        let episode = EVAL_EPISODE_BASE + i;
        let mut state = env.reset_episode(episode)?;
        if let Some(r) = random.as_mut() {
            r.begin_episode(baseline_rng(episode));
        }
        let (mut sum, mut count, mut injected, mut dropped) = (0.0, 0u64, 0u64, 0u64);
        for _ in 0..scenario.env.steps_per_episode {
            let result = match policy {
                Policy::Actor { actor, a_bound } => {
                    let action = select_action(actor, &state, None, *a_bound)?;
                    env.step(&action)?
                }
                Policy::Random { .. } => {
                    let w = random.as_mut().expect("random policy").next(scenario.topology);
                    env.step_weights(w)?
                }
                Policy::Ospf { .. } | Policy::Fixed(_) => {
                    env.step_weights(fixed.clone().expect("fixed weights"))?
                }
            };
            if let Some(d) = result.mean_delay_ms() {
                slot_delays.push(d);
                sum += d;
                count += 1;
            }
            injected += result.metrics.injected;
            dropped += result.metrics.dropped;
            state = result.next_state;
        }
        summaries.push(EpisodeSummary {
            episode,
            mean_delay_ms: (count > 0).then(|| sum / count as f64),
            injected,
            dropped,
        });
    }

    let (mean, stddev) = mean_std(&slot_delays);
    let injected: u64 = summaries.iter().map(|s| s.injected).sum();
    let dropped: u64 = summaries.iter().map(|s| s.dropped).sum();
    Ok(EvalSummary {
        policy: policy.name().to_string(),
        episodes: summaries,
        mean_delay_ms: mean,
        stddev_delay_ms: stddev,
        drop_rate: if injected == 0 { 0.0 } else { dropped as f64 / injected as f64 },
    })
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (Some(mean), Some(var.sqrt()))
}
