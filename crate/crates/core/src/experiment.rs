//! Train / eval / compare drivers behind the command-line tool.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::ddpg::{load_actor, train, Agent, StepRecord};
use crate::env::RoutingEnv;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSummary, Policy, Scenario};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const METRICS_HEADER: &str =
    "step,episode,reward,critic_loss,actor_loss,mean_delay_ms,delivered,dropped";

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub steps_per_episode: Option<usize>,
    pub episodes: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(d) = &self.out_dir {
            config.run.out_dir = d.clone();
        }
        if let Some(s) = self.steps_per_episode {
            config.env.steps_per_episode = s;
        }
        if let Some(e) = self.episodes {
            config.run.episodes = e;
        }
        config.validate()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    code_version: &'a str,
    command: &'a str,
    seed: u64,
    config: &'a ExperimentConfig,
}

fn write_manifest(dir: &Path, command: &str, config: &ExperimentConfig) -> Result<()> {
    let manifest = Manifest {
        code_version: CODE_VERSION,
        command,
        seed: config.seed,
        config,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::input(e.to_string()))?;
    let path = dir.join("manifest.toml");
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn build_env(config: &ExperimentConfig) -> Result<RoutingEnv> {
    RoutingEnv::new(
        config.topology()?,
        config.flow_specs(),
        config.env.clone(),
        config.ddpg.a_bound,
        config.seed,
    )
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn metrics_row(r: &StepRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        r.step,
        r.episode,
        r.reward,
        opt(r.critic_loss),
        opt(r.actor_loss),
        opt(r.mean_delay_ms),
        r.delivered,
        r.dropped
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub steps: u64,
    pub updates: u64,
    pub checkpoint: PathBuf,
}

/// Trains a fresh agent, streaming `metrics.csv` and checkpoints into the
/// configured output directory.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let out = config.run.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let metrics_path = out.join("metrics.csv");
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
    write_manifest(&out, "train", config)?;

    let mut env = build_env(config)?;
    let mut agent = Agent::new(config.ddpg.clone(), env.state_dim(), env.action_dim(), config.seed)?;
    let every = config.run.checkpoint_every;
    let log = train(
        &mut env,
        &mut agent,
        config.run.episodes,
        config.env.steps_per_episode,
        |record, agent| {
            writeln!(metrics, "{}", metrics_row(record)).map_err(|e| Error::io(&metrics_path, e))?;
            if every > 0 && record.step % every == 0 {
                agent.save(&out.join("checkpoints").join(format!("step_{}", record.step)))?;
            }
            Ok(())
        },
    )?;
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;

    let checkpoint = out.join("checkpoint");
    agent.save(&checkpoint)?;
    Ok(TrainOutcome {
        out_dir: out,
        steps: log.len() as u64,
        updates: agent.updates(),
        checkpoint,
    })
}

fn scenario_parts(config: &ExperimentConfig) -> Result<(crate::topology::Topology, Vec<crate::sim::FlowSpec>)> {
    Ok((config.topology()?, config.flow_specs()))
}

/// Noise-free evaluation of a trained actor.
pub fn cmd_eval(config: &ExperimentConfig, checkpoint: &Path) -> Result<EvalSummary> {
    config.validate()?;
    let (topology, flows) = scenario_parts(config)?;
    let state_dim = topology.node_count() * topology.node_count();
    let actor = load_actor(checkpoint, state_dim, topology.link_count())?;
    let scenario = Scenario {
        topology: &topology,
        flows: &flows,
        env: &config.env,
        max_weight: config.ddpg.a_bound,
        seed: config.seed,
    };
    let policy = Policy::Actor {
        actor,
        a_bound: config.ddpg.a_bound,
    };
    evaluate(&scenario, &policy, config.run.eval_episodes)
}

/// Evaluates the trained actor, OSPF and random weights on the same traffic
/// and writes `compare.csv` into the output directory.
pub fn cmd_compare(config: &ExperimentConfig, checkpoint: &Path) -> Result<Vec<EvalSummary>> {
    config.validate()?;
    let (topology, flows) = scenario_parts(config)?;
    let state_dim = topology.node_count() * topology.node_count();
    let actor = load_actor(checkpoint, state_dim, topology.link_count())?;
    let scenario = Scenario {
        topology: &topology,
        flows: &flows,
        env: &config.env,
        max_weight: config.ddpg.a_bound,
        seed: config.seed,
    };
    let policies = [
        Policy::Actor {
            actor,
            a_bound: config.ddpg.a_bound,
        },
        Policy::Ospf {
            reference_bandwidth: config.reference_bandwidth()?,
        },
        Policy::Random {
            upper: config.ddpg.a_bound,
            resample_every_step: config.baselines.random_resample_every_step,
        },
    ];
    let episodes = config.run.eval_episodes;
    let summaries = std::thread::scope(|s| {
        let handles: Vec<_> = policies
            .iter()
            .map(|p| s.spawn(|| evaluate(&scenario, p, episodes)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    let out = &config.run.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("compare.csv");
    fs::write(&path, compare_csv(&summaries)).map_err(|e| Error::io(path, e))?;
    Ok(summaries)
}

pub fn compare_csv(summaries: &[EvalSummary]) -> String {
    let mut s = String::from("policy,mean_delay_ms,stddev_ms,drop_rate\n");
    for r in summaries {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.policy,
            opt(r.mean_delay_ms),
            opt(r.stddev_delay_ms),
            r.drop_rate
        );
    }
    s
}

/// Fixed-width table for the terminal.
pub fn format_table(summaries: &[EvalSummary]) -> String {
    let cell = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
    let mut s = format!(
        "{:<8} {:>14} {:>12} {:>10}\n",
        "policy", "mean_delay_ms", "stddev_ms", "drop_rate"
    );
    for r in summaries {
        let _ = writeln!(
            s,
            "{:<8} {:>14} {:>12} {:>10.4}",
            r.policy,
            cell(r.mean_delay_ms),
            cell(r.stddev_delay_ms),
            r.drop_rate
        );
    }
    s
}
