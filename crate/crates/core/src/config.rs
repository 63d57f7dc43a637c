//! Experiment configuration (TOML).
//!
//! Every key is optional; omitted keys take the defaults of the reference
//! scenario: four routers in a diamond with a v1-v4 chord, 5 Mbit/s duplex
//! links, one 4.636 Mbit/s Poisson flow of 1024-byte packets from node 0 to
//! node 3.
//!
//! ```toml
//! seed = 1
//!
//! [topology]
//! nodes = 4
//! links = [{ src = 0, dst = 1 }, { src = 0, dst = 3, bandwidth = 5e6 }]
//!
//! [[flows]]
//! src = 0
//! dst = 3
//! rate = 4.636e6
//!
//! [env]
//! slot_duration = 0.1
//!
//! [ddpg]
//! gamma = 0.9
//!
//! [run]
//! episodes = 300
//! ```
//!
//! A run manifest (`manifest.toml`) is also accepted: its `[config]` table
//! is loaded in place of a plain config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ddpg::DdpgConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::sim::{ArrivalModel, FlowSpec};
use crate::topology::{LinkSpec, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random stream.
    pub seed: u64,
    pub topology: TopologyConfig,
    pub flows: Vec<FlowConfig>,
    pub env: EnvConfig,
    pub ddpg: DdpgConfig,
    pub baselines: BaselineConfig,
    pub run: RunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            topology: TopologyConfig::default(),
            flows: vec![FlowConfig::default()],
            env: EnvConfig::default(),
            ddpg: DdpgConfig::default(),
            baselines: BaselineConfig::default(),
            run: RunConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub nodes: usize,
    pub links: Vec<LinkConfig>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        let link = |src, dst| LinkConfig {
            src,
            dst,
            ..LinkConfig::default()
        };
        Self {
            nodes: 4,
            links: vec![link(0, 1), link(0, 2), link(1, 3), link(2, 3), link(0, 3)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub src: usize,
    pub dst: usize,
    /// bits per second
    pub bandwidth: f64,
    /// seconds
    pub prop_delay: f64,
    /// packets
    pub queue_capacity: usize,
    /// Also create the reverse link with the same parameters.
    pub duplex: bool,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            src: 0,
            dst: 0,
            bandwidth: 5e6,
            prop_delay: 0.0,
            queue_capacity: 100,
            duplex: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub src: usize,
    pub dst: usize,
    pub rate: f64,
    pub packet_size: u32,
    pub arrival: ArrivalModel,
    pub start: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            src: 0,
            dst: 3,
            rate: 4.636e6,
            packet_size: 1024,
            arrival: ArrivalModel::Poisson,
            start: 0.0,
            stop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// OSPF reference bandwidth; defaults to the fastest link.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_bandwidth: Option<f64>,
    /// Redraw random weights every step rather than once per episode.
    pub random_resample_every_step: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            reference_bandwidth: None,
            random_resample_every_step: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub episodes: u64,
    pub eval_episodes: u64,
    /// Save a checkpoint every this many steps; 0 saves only the final one.
    pub checkpoint_every: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            eval_episodes: 5,
            checkpoint_every: 0,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let config: Self = if table.contains_key("code_version") && table.contains_key("config") {
            let inner = table["config"].clone();
            inner
                .try_into()
                .map_err(|e: toml::de::Error| Error::config("config", e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::config(offending_key(&e), e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.topology()?;
        for (i, f) in self.flows.iter().enumerate() {
            f.to_spec()
                .validate(self.topology.nodes)
                .map_err(|e| Error::config(format!("flows[{i}]"), e.to_string()))?;
        }
        self.env.validate()?;
        self.ddpg.validate()?;
        if let Some(r) = self.baselines.reference_bandwidth {
            let max = self.topology()?.max_bandwidth();
            if !(r >= max && r.is_finite()) {
                return Err(Error::config(
                    "baselines.reference_bandwidth",
                    format!("{r} is below the fastest link ({max})"),
                ));
            }
        }
        if self.run.episodes == 0 {
            return Err(Error::config("run.episodes", "must be at least 1"));
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology> {
        let n = self.topology.nodes;
        if n == 0 {
            return Err(Error::config("topology.nodes", "must be at least 1"));
        }
        let mut specs = Vec::new();
        for (i, l) in self.topology.links.iter().enumerate() {
            let key = format!("topology.links[{i}]");
            for node in [l.src, l.dst] {
                if node >= n {
                    return Err(Error::config(
                        key,
                        format!("node {node} does not exist (nodes are 0..{n})"),
                    ));
                }
            }
            let spec = LinkSpec {
                src: l.src,
                dst: l.dst,
                bandwidth: l.bandwidth,
                prop_delay: l.prop_delay,
                queue_capacity: l.queue_capacity,
            };
            specs.push(spec);
            if l.duplex {
                specs.push(LinkSpec {
                    src: l.dst,
                    dst: l.src,
                    ..spec
                });
            }
        }
        Topology::new(n, &specs).map_err(|e| Error::config("topology.links", e.to_string()))
    }

    pub fn flow_specs(&self) -> Vec<FlowSpec> {
        self.flows.iter().map(FlowConfig::to_spec).collect()
    }

    pub fn reference_bandwidth(&self) -> Result<f64> {
        match self.baselines.reference_bandwidth {
            Some(r) => Ok(r),
            None => Ok(self.topology()?.max_bandwidth()),
        }
    }
}

impl FlowConfig {
    pub fn to_spec(&self) -> FlowSpec {
        FlowSpec {
            src: self.src,
            dst: self.dst,
            rate: self.rate,
            packet_size: self.packet_size,
            arrival: self.arrival,
            start: self.start,
            stop: self.stop,
        }
    }
}

/// Best-effort extraction of the key named in a serde error.
fn offending_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    msg.split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<document>".to_string())
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml(&text)
}
