//! Non-learning reference controllers: OSPF-style inverse-bandwidth costs and
//! uniformly random weights.

use rand::Rng;

use crate::error::{Error, Result};
use crate::topology::{Topology, WeightAssignment, W_MIN};

/// `reference_bandwidth / link bandwidth` per link.
pub fn ospf_weights(topology: &Topology, reference_bandwidth: f64) -> Result<WeightAssignment> {
    if reference_bandwidth < topology.max_bandwidth() {
        return Err(Error::input(format!(
            "reference bandwidth {reference_bandwidth} is below the fastest link {}",
            topology.max_bandwidth()
        )));
    }
    let weights = topology
        .links()
        .iter()
        .map(|l| reference_bandwidth / l.bandwidth)
        .collect();
    WeightAssignment::new(topology, weights)
}

/// Every weight independently uniform on `[W_MIN, upper]`.
pub fn random_weights<R: Rng + ?Sized>(
    topology: &Topology,
    upper: f64,
    rng: &mut R,
) -> WeightAssignment {
    let weights = (0..topology.link_count())
        .map(|_| rng.random_range(W_MIN..=upper))
        .collect();
    WeightAssignment::new(topology, weights).expect("sampled weights lie in range")
}

/// Random-weight controller state: the current draw and when to redraw it.
#[derive(Debug, Clone)]
pub struct RandomWeights<R> {
    rng: R,
    upper: f64,
    resample_every_step: bool,
    current: Option<WeightAssignment>,
}

impl<R: Rng> RandomWeights<R> {
    pub fn new(rng: R, upper: f64, resample_every_step: bool) -> Self {
        Self {
            rng,
            upper,
            resample_every_step,
            current: None,
        }
    }

    pub fn begin_episode(&mut self, rng: R) {
        self.rng = rng;
        self.current = None;
    }

    pub fn next(&mut self, topology: &Topology) -> WeightAssignment {
        if self.resample_every_step || self.current.is_none() {
            self.current = Some(random_weights(topology, self.upper, &mut self.rng));
        }
        self.current.clone().expect("set above")
    }
}
