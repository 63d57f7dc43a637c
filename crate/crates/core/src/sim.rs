//! Discrete-event packet simulator.
//!
//! Flows inject packets at their source router. Each directed link is a
//! drop-tail FIFO with one packet on the wire and `queue_capacity` waiting
//! slots. Forwarding decisions are taken per packet per hop against the
//! routing state in force for the current slot.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, SimRng, Stream};
use crate::topology::{LinkId, NodeId, RoutingState, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalModel {
    Cbr,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub src: NodeId,
    pub dst: NodeId,
    /// bits per second
    pub rate: f64,
    /// bytes
    pub packet_size: u32,
    pub arrival: ArrivalModel,
    /// seconds
    pub start: f64,
    /// seconds; `None` runs forever
    pub stop: Option<f64>,
}

impl FlowSpec {
    pub fn validate(&self, node_count: usize) -> Result<()> {
        if self.src >= node_count || self.dst >= node_count {
            return Err(Error::input(format!(
                "flow {} -> {} references a node outside 0..{node_count}",
                self.src, self.dst
            )));
        }
        if self.src == self.dst {
            return Err(Error::input("flow source equals destination"));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::input("flow rate must be positive"));
        }
        if self.packet_size < 64 {
            return Err(Error::input("flow packet size must be at least 64 bytes"));
        }
        if !(self.start >= 0.0 && self.start.is_finite()) {
            return Err(Error::input("flow start must be a non-negative time"));
        }
        Ok(())
    }

    fn mean_interval(&self) -> f64 {
        f64::from(self.packet_size) * 8.0 / self.rate
    }
}

/// Seconds needed to serialize `packet_size` bytes at `bandwidth` bit/s.
pub fn transmission_time(packet_size: u32, bandwidth: f64) -> f64 {
    f64::from(packet_size) * 8.0 / bandwidth
}

/// Time of the next emission after one at `now`.
pub fn next_arrival<R: Rng + ?Sized>(flow: &FlowSpec, now: f64, rng: &mut R) -> f64 {
    let mean = flow.mean_interval();
    match flow.arrival {
        ArrivalModel::Cbr => now + mean,
        ArrivalModel::Poisson => {
            let exp = Exp::new(1.0 / mean).expect("positive rate");
            now + exp.sample(rng)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub flow: Option<usize>,
    pub src: NodeId,
    pub dst: NodeId,
    pub size: u32,
    pub created_at: f64,
    /// Links traversed so far.
    pub hops: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Queued,
    Dropped,
}

#[derive(Debug, Clone)]
pub struct LinkState {
    pub capacity: usize,
    pub in_service: Option<Packet>,
    pub waiting: VecDeque<Packet>,
}

impl LinkState {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            in_service: None,
            waiting: VecDeque::new(),
        }
    }

    /// Drop-tail admission into the waiting room.
    pub fn enqueue(&mut self, packet: Packet) -> EnqueueOutcome {
        if self.waiting.len() < self.capacity {
            self.waiting.push_back(packet);
            EnqueueOutcome::Queued
        } else {
            EnqueueOutcome::Dropped
        }
    }

    pub fn occupancy(&self) -> usize {
        self.waiting.len() + usize::from(self.in_service.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlotMetrics {
    pub slot_index: u64,
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// seconds, summed over packets delivered in the slot
    pub sum_delay: f64,
    /// Row-major N x N bytes injected per (source, destination).
    pub tx_bytes: Vec<u64>,
}

impl SlotMetrics {
    pub fn mean_delay(&self) -> Option<f64> {
        (self.delivered > 0).then(|| self.sum_delay / self.delivered as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    Enqueued { link: LinkId, packet: u64 },
    Transmitted { link: LinkId, packet: u64 },
    Delivered { packet: u64, delay: f64, hops: u32 },
    Dropped { packet: u64 },
}

#[derive(Debug, Clone)]
enum Event {
    Emit { flow: usize },
    Inject { packet: Packet },
    TxDone { link: LinkId },
    Arrive { node: NodeId, packet: Packet },
}

#[derive(Debug)]
struct Scheduled {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Pending events ordered by timestamp, ties by insertion order.
#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    next_seq: u64,
}

impl EventQueue {
    fn push(&mut self, time: f64, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled { time, seq, event });
    }

    fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|s| s.time)
    }

    fn pop(&mut self) -> Option<Scheduled> {
        self.heap.pop()
    }

    fn clear(&mut self) {
        self.heap.clear();
        self.next_seq = 0;
    }
}

/// Running totals used for the conservation check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PacketCounts {
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub queued: u64,
    pub in_flight: u64,
}

impl PacketCounts {
    pub fn is_conserved(&self) -> bool {
        self.injected == self.delivered + self.dropped + self.queued + self.in_flight
    }
}

pub struct Simulator {
    topology: Topology,
    flows: Vec<FlowSpec>,
    flow_rngs: Vec<SimRng>,
    links: Vec<LinkState>,
    events: EventQueue,
    now: f64,
    slot_index: u64,
    next_packet_id: u64,
    totals: PacketCounts,
    slot: SlotMetrics,
    trace: Option<Vec<TraceEvent>>,
}

impl Simulator {
    pub fn new(topology: Topology, flows: Vec<FlowSpec>, seed: u64) -> Result<Self> {
        for f in &flows {
            f.validate(topology.node_count())?;
        }
        let links = topology
            .links()
            .iter()
            .map(|l| LinkState::new(l.queue_capacity))
            .collect();
        let mut sim = Self {
            topology,
            flows,
            flow_rngs: Vec::new(),
            links,
            events: EventQueue::default(),
            now: 0.0,
            slot_index: 0,
            next_packet_id: 0,
            totals: PacketCounts::default(),
            slot: SlotMetrics::default(),
            trace: None,
        };
        sim.reset(seed, 0);
        Ok(sim)
    }

    /// Empties every queue, zeroes the clock and counters, and reseeds each
    /// flow's arrival stream from `(seed, episode)`.
    pub fn reset(&mut self, seed: u64, episode: u64) {
        let n = self.topology.node_count();
        for l in &mut self.links {
            l.in_service = None;
            l.waiting.clear();
        }
        self.events.clear();
        self.now = 0.0;
        self.slot_index = 0;
        self.next_packet_id = 0;
        self.totals = PacketCounts::default();
        self.slot = SlotMetrics {
            tx_bytes: vec![0; n * n],
            ..SlotMetrics::default()
        };
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
        self.flow_rngs = (0..self.flows.len())
            .map(|i| substream(seed, Stream::Traffic, i as u16, episode))
            .collect();
        for i in 0..self.flows.len() {
            let flow = &self.flows[i];
            let first = match flow.arrival {
                ArrivalModel::Cbr => flow.start,
                ArrivalModel::Poisson => next_arrival(flow, flow.start, &mut self.flow_rngs[i]),
            };
            self.events.push(first, Event::Emit { flow: i });
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn flows(&self) -> &[FlowSpec] {
        &self.flows
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn link_state(&self, link: LinkId) -> &LinkState {
        &self.links[link]
    }

    pub fn counts(&self) -> PacketCounts {
        self.totals
    }

    /// Places one packet at `src` at absolute time `at` (must not be in the
    /// past). It is counted as injected when the event fires.
    pub fn inject(&mut self, src: NodeId, dst: NodeId, size: u32, at: f64) -> u64 {
        assert!(at >= self.now, "cannot inject into the past");
        let id = self.alloc_id();
        let packet = Packet {
            id,
            flow: None,
            src,
            dst,
            size,
            created_at: at,
            hops: 0,
        };
        self.events.push(at, Event::Inject { packet });
        id
    }

    /// Advances the clock by `duration`, handling every event due strictly
    /// before the slot end. Queues carry over to the next slot.
    pub fn run_slot<R: Rng + ?Sized>(
        &mut self,
        routing: &RoutingState,
        duration: f64,
        rng: &mut R,
    ) -> SlotMetrics {
        assert!(duration > 0.0, "slot duration must be positive");
        debug_assert_eq!(routing.node_count(), self.topology.node_count());
        let end = self.now + duration;
        while let Some(t) = self.events.peek_time() {
            if t >= end {
                break;
            }
            let Scheduled { time, event, .. } = self.events.pop().expect("peeked");
            self.now = time;
            match event {
                Event::Emit { flow } => self.emit(flow, routing, rng),
                Event::Inject { packet } => {
                    self.count_injection(&packet);
                    self.forward(packet.src, packet, routing, rng);
                }
                Event::TxDone { link } => self.finish_transmission(link),
                Event::Arrive { node, packet } => {
                    self.totals.in_flight -= 1;
                    self.forward(node, packet, routing, rng);
                }
            }
        }
        self.now = end;

        let n = self.topology.node_count();
        let finished = std::mem::replace(
            &mut self.slot,
            SlotMetrics {
                slot_index: self.slot_index + 1,
                tx_bytes: vec![0; n * n],
                ..SlotMetrics::default()
            },
        );
        self.slot_index += 1;
        debug_assert!(self.totals.is_conserved());
        finished
    }

    fn alloc_id(&mut self) -> u64 {
        let id = self.next_packet_id;
        self.next_packet_id += 1;
        id
    }

    fn count_injection(&mut self, packet: &Packet) {
        let n = self.topology.node_count();
        self.totals.injected += 1;
        self.slot.injected += 1;
        self.slot.tx_bytes[packet.src * n + packet.dst] += u64::from(packet.size);
    }

    fn emit<R: Rng + ?Sized>(&mut self, flow_idx: usize, routing: &RoutingState, rng: &mut R) {
        let flow = &self.flows[flow_idx];
        if flow.stop.is_some_and(|stop| self.now >= stop) {
            return;
        }
        let next = next_arrival(flow, self.now, &mut self.flow_rngs[flow_idx]);
        let (src, dst, size) = (flow.src, flow.dst, flow.packet_size);
        self.events.push(next, Event::Emit { flow: flow_idx });

        let id = self.alloc_id();
        let packet = Packet {
            id,
            flow: Some(flow_idx),
            src,
            dst,
            size,
            created_at: self.now,
            hops: 0,
        };
        self.count_injection(&packet);
        self.forward(src, packet, routing, rng);
    }

    fn forward<R: Rng + ?Sized>(
        &mut self,
        node: NodeId,
        packet: Packet,
        routing: &RoutingState,
        rng: &mut R,
    ) {
        if node == packet.dst {
            let delay = self.now - packet.created_at;
            self.totals.delivered += 1;
            self.slot.delivered += 1;
            self.slot.sum_delay += delay;
            if let Some(t) = self.trace.as_mut() {
                t.push(TraceEvent::Delivered {
                    packet: packet.id,
                    delay,
                    hops: packet.hops,
                });
            }
            return;
        }

        let hops = routing.next_hops(node, packet.dst);
        let link = match hops.len() {
            0 => None,
            1 => Some(hops[0].0),
            _ => routing.pick(node, packet.dst, rng.random::<f64>()),
        };
        let Some(link) = link else {
            self.drop_packet(packet.id);
            return;
        };

        let id = packet.id;
        match self.links[link].enqueue(packet) {
            EnqueueOutcome::Dropped => self.drop_packet(id),
            EnqueueOutcome::Queued => {
                self.totals.queued += 1;
                if let Some(t) = self.trace.as_mut() {
                    t.push(TraceEvent::Enqueued { link, packet: id });
                }
                if self.links[link].in_service.is_none() {
                    self.start_transmission(link);
                }
            }
        }
    }

    fn drop_packet(&mut self, id: u64) {
        self.totals.dropped += 1;
        self.slot.dropped += 1;
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceEvent::Dropped { packet: id });
        }
    }

    fn start_transmission(&mut self, link: LinkId) {
        let state = &mut self.links[link];
        if let Some(packet) = state.waiting.pop_front() {
            let tx = transmission_time(packet.size, self.topology.link(link).bandwidth);
            state.in_service = Some(packet);
            self.events.push(self.now + tx, Event::TxDone { link });
        }
    }

    fn finish_transmission(&mut self, link: LinkId) {
        let mut packet = self.links[link]
            .in_service
            .take()
            .expect("transmission completes only on a busy link");
        packet.hops += 1;
        self.totals.queued -= 1;
        self.totals.in_flight += 1;
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceEvent::Transmitted {
                link,
                packet: packet.id,
            });
        }
        let l = self.topology.link(link);
        let (arrive_at, node) = (self.now + l.prop_delay, l.dst);
        self.events.push(arrive_at, Event::Arrive { node, packet });
        self.start_transmission(link);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_routing_state, ForwardingMode, LinkSpec, WeightAssignment};
    use rand::SeedableRng;

    const S: f64 = 1024.0 * 8.0 / 5e6;

    fn line(n: usize, capacity: usize, prop: f64) -> Topology {
        let specs: Vec<LinkSpec> = (0..n - 1)
            .map(|i| LinkSpec {
                prop_delay: prop,
                queue_capacity: capacity,
                ..LinkSpec::new(i, i + 1, 5e6)
            })
            .collect();
        Topology::new(n, &specs).unwrap()
    }

    fn routing(t: &Topology) -> RoutingState {
        let w = WeightAssignment::uniform(t, 1.0).unwrap();
        build_routing_state(t, &w, ForwardingMode::SinglePath).unwrap()
    }

    fn delays(trace: &[TraceEvent]) -> Vec<f64> {
        trace
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Delivered { delay, .. } => Some(*delay),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn transmission_time_arithmetic() {
        assert_eq!(transmission_time(1024, 5e6), 1.6384e-3);
        assert_eq!(transmission_time(0, 5e6), 0.0);
        assert_eq!(transmission_time(1024, 1e7), 8.192e-4);
    }

    #[test]
    fn cbr_interval() {
        let mut rng = SimRng::seed_from_u64(0);
        let mut flow = FlowSpec {
            src: 0,
            dst: 1,
            rate: 4.636e6,
            packet_size: 1024,
            arrival: ArrivalModel::Cbr,
            start: 0.0,
            stop: None,
        };
        let dt = next_arrival(&flow, 2.0, &mut rng) - 2.0;
        assert!((dt - 8192.0 / 4.636e6).abs() < 1e-15);
        assert!((dt - 1.76704e-3).abs() < 1e-8);
        flow.rate = 5e6;
        assert_eq!(next_arrival(&flow, 0.0, &mut rng), transmission_time(1024, 5e6));
    }

    #[test]
    fn poisson_interval_mean() {
        let mut rng = SimRng::seed_from_u64(11);
        let flow = FlowSpec {
            src: 0,
            dst: 1,
            rate: 4.636e6,
            packet_size: 1024,
            arrival: ArrivalModel::Poisson,
            start: 0.0,
            stop: None,
        };
        let n = 100_000;
        let mean = (0..n).map(|_| next_arrival(&flow, 0.0, &mut rng)).sum::<f64>() / n as f64;
        let expected = 8192.0 / 4.636e6;
        assert!((mean / expected - 1.0).abs() < 0.01, "{mean} vs {expected}");
    }

    #[test]
    fn drop_tail_admission() {
        let pkt = |id| Packet {
            id,
            flow: None,
            src: 0,
            dst: 1,
            size: 1024,
            created_at: 0.0,
            hops: 0,
        };
        let mut link = LinkState::new(100);
        for i in 0..99 {
            assert_eq!(link.enqueue(pkt(i)), EnqueueOutcome::Queued);
        }
        assert_eq!(link.enqueue(pkt(99)), EnqueueOutcome::Queued);
        assert_eq!(link.enqueue(pkt(100)), EnqueueOutcome::Dropped);
        let mut tiny = LinkState::new(1);
        assert_eq!(tiny.enqueue(pkt(0)), EnqueueOutcome::Queued);
    }

    #[test]
    fn single_packet_single_hop() {
        let t = line(2, 100, 0.0);
        let rs = routing(&t);
        let mut sim = Simulator::new(t, vec![], 0).unwrap();
        sim.enable_trace();
        sim.inject(0, 1, 1024, 0.0);
        let m = sim.run_slot(&rs, 0.1, &mut SimRng::seed_from_u64(0));
        assert_eq!(m.delivered, 1);
        assert_eq!(delays(&sim.take_trace()), vec![S]);
        assert_eq!(m.mean_delay(), Some(S));
    }

    #[test]
    fn back_to_back_fifo_service() {
        let t = line(2, 100, 0.0);
        let rs = routing(&t);
        let mut sim = Simulator::new(t, vec![], 0).unwrap();
        sim.enable_trace();
        sim.inject(0, 1, 1024, 0.0);
        sim.inject(0, 1, 1024, 0.0);
        sim.run_slot(&rs, 0.1, &mut SimRng::seed_from_u64(0));
        let d = delays(&sim.take_trace());
        assert_eq!(d, vec![S, 2.0 * S]);
        assert!((d[0] - 1.6384e-3).abs() < 1e-15 && (d[1] - 3.2768e-3).abs() < 1e-15);
    }

    #[test]
    fn zero_load_delay_is_sum_of_hop_delays() {
        let t = line(4, 100, 2e-3);
        let rs = routing(&t);
        let mut sim = Simulator::new(t, vec![], 0).unwrap();
        sim.enable_trace();
        sim.inject(0, 3, 1500, 0.0);
        sim.run_slot(&rs, 1.0, &mut SimRng::seed_from_u64(0));
        let expected = 3.0 * (transmission_time(1500, 5e6) + 2e-3);
        let trace = sim.take_trace();
        assert_eq!(delays(&trace).len(), 1);
        assert!((delays(&trace)[0] - expected).abs() < 1e-15);
        assert!(trace.contains(&TraceEvent::Delivered {
            packet: 0,
            delay: delays(&trace)[0],
            hops: 3
        }));
    }

    #[test]
    fn full_queue_drops() {
        let t = line(2, 1, 0.0);
        let rs = routing(&t);
        let mut sim = Simulator::new(t, vec![], 0).unwrap();
        for _ in 0..4 {
            sim.inject(0, 1, 1024, 0.0);
        }
        let m = sim.run_slot(&rs, 0.1, &mut SimRng::seed_from_u64(0));
        // one on the wire, one waiting, two dropped
        assert_eq!((m.delivered, m.dropped), (2, 2));
        assert!(sim.counts().is_conserved());
    }

    #[test]
    fn queues_persist_across_slots() {
        let t = line(2, 100, 0.0);
        let rs = routing(&t);
        let mut sim = Simulator::new(t, vec![], 0).unwrap();
        for _ in 0..3 {
            sim.inject(0, 1, 1024, 0.0);
        }
        let mut rng = SimRng::seed_from_u64(0);
        let first = sim.run_slot(&rs, 2.5e-3, &mut rng);
        assert_eq!(first.delivered, 1);
        assert_eq!(sim.counts().queued, 2);
        let second = sim.run_slot(&rs, 1.0, &mut rng);
        assert_eq!(second.delivered, 2);
        assert_eq!(second.slot_index, 1);
    }

    #[test]
    fn traffic_matrix_counts_injected_bytes() {
        let t = Topology::diamond_with_chord(5e6, 100);
        let rs = routing(&t);
        let flow = FlowSpec {
            src: 0,
            dst: 3,
            rate: 4.636e6,
            packet_size: 1024,
            arrival: ArrivalModel::Cbr,
            start: 0.0,
            stop: None,
        };
        let mut sim = Simulator::new(t, vec![flow], 0).unwrap();
        let m = sim.run_slot(&rs, 0.1, &mut SimRng::seed_from_u64(0));
        // emissions at k * 1.76704 ms for k = 0..=56 fall inside [0, 100 ms)
        assert_eq!(m.injected, 57);
        assert_eq!(m.tx_bytes[3], 57 * 1024);
        assert_eq!(m.tx_bytes.iter().sum::<u64>(), 57 * 1024);
    }

    #[test]
    fn stopped_flow_goes_quiet() {
        let t = line(2, 100, 0.0);
        let rs = routing(&t);
        let flow = FlowSpec {
            src: 0,
            dst: 1,
            rate: 1e6,
            packet_size: 1000,
            arrival: ArrivalModel::Cbr,
            start: 0.0,
            stop: Some(0.05),
        };
        let mut sim = Simulator::new(t, vec![flow], 0).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        let a = sim.run_slot(&rs, 0.1, &mut rng);
        let b = sim.run_slot(&rs, 0.1, &mut rng);
        // packets at 0, 8, ..., 48 ms
        assert_eq!(a.injected, 7);
        assert_eq!(b.injected, 0);
    }
}
