//! Analytic performance models: throughput, power, worst-case delay and loss.
//!
//! Units are fixed across the module: energies in µJ, powers in mW, delays in ms,
//! throughput in packets per second.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{ForwardingTree, NodeId};
use crate::schedule::{Slotframe, TschSchedule};

/// Converts an event rate (1/s) times a per-event energy (µJ) to mW.
pub fn rate_energy_mw(events_per_sec: f64, energy_uj: f64) -> f64 {
    events_per_sec * energy_uj / 1000.0
}

/// Per-event radio energies and the baseline power P_0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyProfile {
    pub tx_uj: f64,
    pub rx_uj: f64,
    pub tx_ack_uj: f64,
    pub rx_ack_uj: f64,
    pub listen_uj: f64,
    pub baseline_mw: f64,
    pub voltage_v: f64,
    pub lpm_current_ma: f64,
}

impl Default for EnergyProfile {
    fn default() -> Self {
        Self {
            tx_uj: 140.0,
            rx_uj: 160.0,
            tx_ack_uj: 55.0,
            rx_ack_uj: 70.0,
            listen_uj: 110.0,
            baseline_mw: 0.57,
            voltage_v: 3.0,
            lpm_current_ma: 0.0545,
        }
    }
}

impl EnergyProfile {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("tx", self.tx_uj),
            ("rx", self.rx_uj),
            ("tx_ack", self.tx_ack_uj),
            ("rx_ack", self.rx_ack_uj),
            ("listen", self.listen_uj),
        ];
        for (name, v) in all {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Constraint(format!("energy {name} must be > 0, got {v}")));
            }
        }
        if !(self.baseline_mw >= 0.0) || !(self.voltage_v > 0.0) || !(self.lpm_current_ma >= 0.0) {
            return Err(Error::Constraint("baseline power, voltage and LPM current must be non-negative".into()));
        }
        Ok(())
    }

    /// Energy of one transmission including the ack wait.
    pub fn tx_event_uj(&self) -> f64 {
        self.tx_uj + self.rx_ack_uj
    }

    /// Energy of one reception including the ack.
    pub fn rx_event_uj(&self) -> f64 {
        self.rx_uj + self.tx_ack_uj
    }

    /// Low-power-mode draw in mW.
    pub fn sleep_mw(&self) -> f64 {
        self.lpm_current_ma * self.voltage_v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSigmas {
    pub throughput: f64,
    pub power: f64,
    pub delay: f64,
}

impl NoiseSigmas {
    pub fn is_zero(&self) -> bool {
        self.throughput == 0.0 && self.power == 0.0 && self.delay == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficProfile {
    /// T_0: packets per second generated by every non-sink node.
    pub generation_pps: f64,
    /// K: delay charged to an unstable queue or a hop with no cell (ms).
    pub unstable_delay_ms: f64,
    pub noise: NoiseSigmas,
    pub seed: u64,
}

impl Default for TrafficProfile {
    fn default() -> Self {
        Self {
            generation_pps: 1.0,
            unstable_delay_ms: 1000.0,
            noise: NoiseSigmas::default(),
            seed: 0,
        }
    }
}

impl TrafficProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.generation_pps > 0.0) || !self.generation_pps.is_finite() {
            return Err(Error::Constraint("T_0 must be > 0".into()));
        }
        if !(self.unstable_delay_ms > 0.0) {
            return Err(Error::Constraint("K must be > 0".into()));
        }
        let n = self.noise;
        if n.throughput < 0.0 || n.power < 0.0 || n.delay < 0.0 {
            return Err(Error::Constraint("noise sigmas must be >= 0".into()));
        }
        Ok(())
    }
}

/// Maximum throughput of a node owning `tx_slots` transmitting timeslots.
pub fn max_throughput(tx_slots: usize, frame: &Slotframe) -> f64 {
    tx_slots as f64 / frame.period_secs()
}

/// Per-node quantities of the saturated flow model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFlow {
    pub tx_slots: usize,
    pub rx_slots: usize,
    pub max_tx: f64,
    pub max_rx: f64,
    /// Incoming traffic from tree children.
    pub children_inflow: f64,
    /// T_n. For the sink this is its delivered inflow.
    pub throughput: f64,
}

/// Evaluates the flow model for every node, children before parents.
pub fn flows(
    schedule: &TschSchedule,
    tree: &ForwardingTree,
    generation_pps: f64,
) -> BTreeMap<NodeId, NodeFlow> {
    let frame = schedule.frame();
    let mut out: BTreeMap<NodeId, NodeFlow> = BTreeMap::new();
    for n in tree.leaves_first() {
        let tx_slots = schedule.tx_slot_count(n);
        let rx_slots = schedule.rx_slot_count(n);
        let max_tx = max_throughput(tx_slots, frame);
        let max_rx = max_throughput(rx_slots, frame);
        let children_inflow: f64 = tree.children(n).map(|c| out[&c].throughput).sum();
        let throughput = if n == tree.sink() {
            children_inflow
        } else if children_inflow < max_tx - generation_pps {
            generation_pps + children_inflow
        } else {
            max_tx
        };
        out.insert(
            n,
            NodeFlow {
                tx_slots,
                rx_slots,
                max_tx,
                max_rx,
                children_inflow,
                throughput,
            },
        );
    }
    out
}

fn flow_of(flows: &BTreeMap<NodeId, NodeFlow>, n: NodeId) -> Result<NodeFlow> {
    flows.get(&n).copied().ok_or(Error::UnknownNode(n))
}

pub fn node_throughput(
    n: NodeId,
    schedule: &TschSchedule,
    tree: &ForwardingTree,
    generation_pps: f64,
) -> Result<f64> {
    Ok(flow_of(&flows(schedule, tree, generation_pps), n)?.throughput)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerBreakdown {
    pub baseline: f64,
    pub tx: f64,
    pub rx_traffic: f64,
    pub idle_listen: f64,
}

impl PowerBreakdown {
    pub fn rx(&self) -> f64 {
        self.rx_traffic + self.idle_listen
    }

    pub fn total(&self) -> f64 {
        self.baseline + self.tx + self.rx()
    }
}

fn power_from_flow(is_sink: bool, f: &NodeFlow, energy: &EnergyProfile) -> PowerBreakdown {
    // the sink never transmits; its T_n only stands for delivered traffic
    let sent = if is_sink { 0.0 } else { f.throughput };
    let idle_cells = (f.max_rx - f.children_inflow).max(0.0);
    PowerBreakdown {
        baseline: energy.baseline_mw,
        tx: rate_energy_mw(sent, energy.tx_event_uj()),
        rx_traffic: rate_energy_mw(f.children_inflow, energy.rx_event_uj()),
        idle_listen: rate_energy_mw(idle_cells, energy.listen_uj),
    }
}

pub fn node_power(
    n: NodeId,
    schedule: &TschSchedule,
    tree: &ForwardingTree,
    energy: &EnergyProfile,
    traffic: &TrafficProfile,
) -> Result<PowerBreakdown> {
    let f = flow_of(&flows(schedule, tree, traffic.generation_pps), n)?;
    Ok(power_from_flow(n == tree.sink(), &f, energy))
}

/// Queueing delay (ms) at a forwarder with arrival rate `lambda` and service rate `mu`,
/// capped at `k_ms`.
pub fn queue_delay_ms(lambda: f64, mu: f64, k_ms: f64) -> f64 {
    if lambda < mu {
        (lambda / (mu * (mu - lambda)) * 1e3).min(k_ms)
    } else {
        k_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayBreakdown {
    /// Worst-case slot waiting along the path, already in ms (includes K for missing hops).
    pub slot_wait_ms: f64,
    pub queue_ms: f64,
    pub missing_hops: usize,
}

impl DelayBreakdown {
    pub fn total(&self) -> f64 {
        self.slot_wait_ms + self.queue_ms
    }
}

/// Slots (and missing hops) for a packet generated at `gen_asn` to reach the sink.
pub fn path_slots(schedule: &TschSchedule, path: &[(NodeId, NodeId)], gen_asn: u64) -> (u64, usize) {
    let mut query = gen_asn;
    let mut last_tx = gen_asn;
    let mut missing = 0;
    for &(child, parent) in path {
        match schedule.lookup_next(child, parent, query) {
            Some(cell) => {
                last_tx = query + schedule.slots_until(cell, query);
                query = last_tx + 1;
            }
            None => missing += 1,
        }
    }
    (last_tx - gen_asn, missing)
}

fn delay_from_flows(
    n: NodeId,
    schedule: &TschSchedule,
    tree: &ForwardingTree,
    flows: &BTreeMap<NodeId, NodeFlow>,
    k_ms: f64,
) -> Result<DelayBreakdown> {
    let path = tree.path_links(n)?;
    if path.is_empty() {
        return Ok(DelayBreakdown {
            slot_wait_ms: 0.0,
            queue_ms: 0.0,
            missing_hops: 0,
        });
    }
    let frame = schedule.frame();
    let mut worst = 0.0_f64;
    let mut worst_missing = 0;
    for u in 0..frame.size() as u64 {
        let (slots, missing) = path_slots(schedule, &path, u);
        let ms = slots as f64 * frame.slot_ms() + missing as f64 * k_ms;
        if ms > worst {
            worst = ms;
        }
        worst_missing = worst_missing.max(missing);
    }
    let queue_ms = path
        .iter()
        .skip(1)
        .map(|&(f, _)| {
            let fl = flows[&f];
            queue_delay_ms(fl.children_inflow, fl.throughput, k_ms)
        })
        .sum();
    Ok(DelayBreakdown {
        slot_wait_ms: worst,
        queue_ms,
        missing_hops: worst_missing,
    })
}

pub fn node_delay(
    n: NodeId,
    schedule: &TschSchedule,
    tree: &ForwardingTree,
    traffic: &TrafficProfile,
) -> Result<DelayBreakdown> {
    let fl = flows(schedule, tree, traffic.generation_pps);
    delay_from_flows(n, schedule, tree, &fl, traffic.unstable_delay_ms)
}

fn loss_from_flows(tree: &ForwardingTree, flows: &BTreeMap<NodeId, NodeFlow>, t0: f64) -> f64 {
    let sources = flows.len().saturating_sub(1);
    if sources == 0 {
        return 0.0;
    }
    let offered = sources as f64 * t0;
    let delivered = flows[&tree.sink()].children_inflow;
    (1.0 - delivered / offered).clamp(0.0, 1.0)
}

/// Fraction of generated traffic that the saturated flow model fails to deliver.
pub fn loss_rate(schedule: &TschSchedule, tree: &ForwardingTree, traffic: &TrafficProfile) -> f64 {
    let fl = flows(schedule, tree, traffic.generation_pps);
    loss_from_flows(tree, &fl, traffic.generation_pps)
}

/// Per-topology ranges used to map raw metrics into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBounds {
    pub power_min: f64,
    pub power_max: f64,
    pub delay_cap: f64,
    pub throughput_ub: f64,
}

impl NormalizationBounds {
    /// `power_min` is the empty-schedule network power (P_0). `power_max` charges every
    /// cell of the slotframe with a full Tx event at the sender and the costlier of a
    /// reception or an idle listen at the receiver, averaged over the nodes.
    pub fn for_topology(
        tree: &ForwardingTree,
        frame: &Slotframe,
        energy: &EnergyProfile,
        traffic: &TrafficProfile,
    ) -> Self {
        let nodes = tree.nodes().count().max(1) as f64;
        let per_cell_rate = 1.0 / frame.period_secs();
        let per_cell_mw = rate_energy_mw(per_cell_rate, energy.tx_event_uj())
            + rate_energy_mw(per_cell_rate, energy.rx_event_uj().max(energy.listen_uj));
        let throughput_ub = max_throughput(frame.size(), frame);
        Self {
            power_min: energy.baseline_mw,
            power_max: energy.baseline_mw + frame.cell_count() as f64 * per_cell_mw / nodes,
            delay_cap: traffic.unstable_delay_ms * tree.max_hops().max(1) as f64,
            throughput_ub,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Normalized {
    pub power: f64,
    pub delay: f64,
    pub throughput: f64,
    pub loss: f64,
}

fn unit_interval(value: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
}

pub fn normalize(power: f64, delay: f64, throughput: f64, loss: f64, b: &NormalizationBounds) -> Normalized {
    Normalized {
        power: unit_interval(power, b.power_min, b.power_max),
        delay: unit_interval(delay.min(b.delay_cap), 0.0, b.delay_cap),
        throughput: unit_interval(throughput, 0.0, b.throughput_ub),
        loss: loss.clamp(0.0, 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeMetrics {
    pub id: NodeId,
    pub throughput: f64,
    pub power: PowerBreakdown,
    pub delay: DelayBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub nodes: Vec<NodeMetrics>,
    pub throughput: f64,
    pub power: f64,
    pub delay: f64,
    pub loss: f64,
    pub normalized: Normalized,
}

impl MetricsReport {
    pub fn node(&self, id: NodeId) -> Option<&NodeMetrics> {
        self.nodes.iter().find(|m| m.id == id)
    }
}

/// The analytic model for one topology: profiles plus precomputed bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticModel {
    pub energy: EnergyProfile,
    pub traffic: TrafficProfile,
    pub bounds: NormalizationBounds,
}

impl AnalyticModel {
    pub fn new(
        tree: &ForwardingTree,
        frame: &Slotframe,
        energy: EnergyProfile,
        traffic: TrafficProfile,
    ) -> Result<Self> {
        energy.validate()?;
        traffic.validate()?;
        let bounds = NormalizationBounds::for_topology(tree, frame, &energy, &traffic);
        Ok(Self {
            energy,
            traffic,
            bounds,
        })
    }

    /// Evaluation with the profile's own seed.
    pub fn evaluate_seeded(&self, schedule: &TschSchedule, tree: &ForwardingTree) -> MetricsReport {
        let mut rng = ChaCha8Rng::seed_from_u64(self.traffic.seed);
        self.evaluate(schedule, tree, &mut rng)
    }

    /// Noise-free evaluation.
    pub fn evaluate_exact(&self, schedule: &TschSchedule, tree: &ForwardingTree) -> MetricsReport {
        self.evaluate_with_noise(schedule, tree, NoiseSigmas::default(), &mut ChaCha8Rng::seed_from_u64(0))
    }

    pub fn evaluate<R: Rng + ?Sized>(
        &self,
        schedule: &TschSchedule,
        tree: &ForwardingTree,
        rng: &mut R,
    ) -> MetricsReport {
        self.evaluate_with_noise(schedule, tree, self.traffic.noise, rng)
    }

    pub fn evaluate_with_noise<R: Rng + ?Sized>(
        &self,
        schedule: &TschSchedule,
        tree: &ForwardingTree,
        noise: NoiseSigmas,
        rng: &mut R,
    ) -> MetricsReport {
        let k = self.traffic.unstable_delay_ms;
        let fl = flows(schedule, tree, self.traffic.generation_pps);
        let nodes: Vec<NodeMetrics> = fl
            .iter()
            .map(|(&id, f)| NodeMetrics {
                id,
                throughput: f.throughput,
                power: power_from_flow(id == tree.sink(), f, &self.energy),
                delay: delay_from_flows(id, schedule, tree, &fl, k).expect("tree node"),
            })
            .collect();
        let count = nodes.len() as f64;
        let mut draw = |sigma: f64| -> f64 {
            if sigma > 0.0 {
                Normal::new(0.0, sigma).expect("sigma is finite").sample(rng)
            } else {
                0.0
            }
        };
        let throughput = nodes.iter().map(|m| m.throughput + draw(noise.throughput)).sum::<f64>() / count;
        let power = nodes.iter().map(|m| m.power.total() + draw(noise.power)).sum::<f64>() / count;
        let delay = nodes.iter().map(|m| m.delay.total() + draw(noise.delay)).sum::<f64>() / count;
        let loss = loss_from_flows(tree, &fl, self.traffic.generation_pps);
        MetricsReport {
            normalized: normalize(power, delay, throughput, loss, &self.bounds),
            nodes,
            throughput,
            power,
            delay,
            loss,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{NetworkGraph, NodePosition, TopologyFile};
    use crate::schedule::Cell;
    use approx::assert_relative_eq;

    fn chain(n: u32) -> (NetworkGraph, ForwardingTree) {
        let pos: Vec<_> = (1..=n).map(|i| NodePosition::new(i, 0.0, 30.0 * (i - 1) as f64)).collect();
        let g = NetworkGraph::build(&pos, 40.0, 80.0).unwrap();
        let t = ForwardingTree::build(&g).unwrap();
        (g, t)
    }

    fn frame() -> Slotframe {
        Slotframe::standard()
    }

    #[test]
    fn max_throughput_values() {
        assert_relative_eq!(max_throughput(1, &frame()), 1.0 / 0.17, max_relative = 1e-12);
        assert_eq!(max_throughput(0, &frame()), 0.0);
        assert_relative_eq!(max_throughput(17, &frame()), 100.0, max_relative = 1e-12);
    }

    #[test]
    fn throughput_leaf_and_parent() {
        // star: sink 1, relay 2, leaves 3 and 4 under 2
        let pos = [
            NodePosition::new(1, 0.0, 0.0),
            NodePosition::new(2, 0.0, 30.0),
            NodePosition::new(3, -30.0, 60.0),
            NodePosition::new(4, 30.0, 60.0),
        ];
        let g = NetworkGraph::build(&pos, 45.0, 90.0).unwrap();
        let t = ForwardingTree::build(&g).unwrap();
        assert_eq!(t.parent(3), Some(2));
        let mut s = TschSchedule::new(frame());
        s.try_add(3, 2, Cell::new(0, 0)).unwrap();
        s.try_add(4, 2, Cell::new(1, 0)).unwrap();
        s.try_add(2, 1, Cell::new(2, 0)).unwrap();
        assert_eq!(node_throughput(3, &s, &t, 1.0).unwrap(), 1.0);
        assert_eq!(node_throughput(2, &s, &t, 1.0).unwrap(), 3.0);
        assert_eq!(node_throughput(1, &s, &t, 1.0).unwrap(), 3.0);
    }

    #[test]
    fn throughput_saturates() {
        let g = TopologyFile::ten_node().build().unwrap();
        // every other node hangs directly off node 2 through a hand-made parent map
        let mut parents = BTreeMap::new();
        parents.insert(2, 1);
        for n in [3, 5, 6] {
            parents.insert(n, 2);
        }
        parents.insert(4, 3);
        parents.insert(7, 3);
        parents.insert(8, 5);
        parents.insert(9, 5);
        parents.insert(10, 6);
        let t = ForwardingTree::from_parents(&g, parents).unwrap();
        let mut s = TschSchedule::new(frame());
        let mut u = 0;
        for (c, p) in t.edges() {
            s.try_add(c, p, Cell::new(u, 0)).unwrap();
            u += 1;
        }
        // node 2 carries 9 descendants + itself with one Tx slot
        let t2 = node_throughput(2, &s, &t, 1.0).unwrap();
        assert_relative_eq!(t2, 1.0 / 0.17, max_relative = 1e-12);
    }

    #[test]
    fn empty_schedule_is_all_zero() {
        let (_, t) = chain(3);
        let s = TschSchedule::new(frame());
        let fl = flows(&s, &t, 1.0);
        assert!(fl.values().all(|f| f.throughput == 0.0));
        assert_eq!(loss_rate(&s, &t, &TrafficProfile::default()), 1.0);
        let p = node_power(2, &s, &t, &EnergyProfile::default(), &TrafficProfile::default()).unwrap();
        assert_eq!(p.total(), EnergyProfile::default().baseline_mw);
    }

    #[test]
    fn leaf_power_matches_hand_value() {
        let (_, t) = chain(2);
        let s = TschSchedule::new(frame()).add_link(2, 1, Cell::new(4, 0)).unwrap();
        let p = node_power(2, &s, &t, &EnergyProfile::default(), &TrafficProfile::default()).unwrap();
        assert_relative_eq!(p.total(), 0.57 + 210.0 / 1000.0, max_relative = 1e-12);
        // the sink listens in that cell and receives 1 pkt/s of it
        let sink = node_power(1, &s, &t, &EnergyProfile::default(), &TrafficProfile::default()).unwrap();
        assert_eq!(sink.tx, 0.0);
        assert_relative_eq!(sink.idle_listen, (1.0 / 0.17 - 1.0) * 0.110, max_relative = 1e-12);
    }

    #[test]
    fn idle_listen_with_no_traffic() {
        let (_, t) = chain(3);
        // node 2 owns one Rx slot while its only child (node 3) sends nothing
        let s = TschSchedule::new(frame()).add_link(1, 2, Cell::new(0, 0)).unwrap();
        let p = node_power(2, &s, &t, &EnergyProfile::default(), &TrafficProfile::default()).unwrap();
        assert_relative_eq!(p.idle_listen, 110.0 / 0.17 / 1000.0, max_relative = 1e-12);
        assert!((p.idle_listen - 0.647).abs() < 1e-3);
    }

    #[test]
    fn queue_delay_cases() {
        assert_relative_eq!(queue_delay_ms(1.0, 2.0, 1000.0), 500.0, max_relative = 1e-12);
        assert_eq!(queue_delay_ms(2.0, 2.0, 1000.0), 1000.0);
        assert_eq!(queue_delay_ms(3.0, 2.0, 1000.0), 1000.0);
        // close to the pole the formula would exceed K
        assert_eq!(queue_delay_ms(1.999, 2.0, 1000.0), 1000.0);
        assert_eq!(queue_delay_ms(0.0, 0.0, 1000.0), 1000.0);
    }

    #[test]
    fn one_hop_worst_case_slot_wait() {
        let (_, t) = chain(2);
        let s = TschSchedule::new(frame()).add_link(2, 1, Cell::new(4, 0)).unwrap();
        let d = node_delay(2, &s, &t, &TrafficProfile::default()).unwrap();
        assert_eq!(d.slot_wait_ms, 160.0);
        assert_eq!(d.queue_ms, 0.0);
        assert_eq!(node_delay(1, &s, &t, &TrafficProfile::default()).unwrap().total(), 0.0);
    }

    #[test]
    fn missing_hop_costs_k() {
        let (_, t) = chain(3);
        let s = TschSchedule::new(frame()).add_link(3, 2, Cell::new(4, 0)).unwrap();
        let d = node_delay(3, &s, &t, &TrafficProfile::default()).unwrap();
        assert_eq!(d.missing_hops, 1);
        assert!(d.slot_wait_ms >= 1000.0);
    }

    #[test]
    fn loss_on_saturated_chain() {
        // 1 <- 2 <- 3; node 2 saturates when its single slot is shared by 2 pkt/s and
        // capacity is reduced by a longer slotframe
        let (_, t) = chain(3);
        let frame = Slotframe::new(100, 1, 10.0).unwrap(); // 1 pkt/s per slot
        let mut s = TschSchedule::new(frame);
        s.try_add(3, 2, Cell::new(0, 0)).unwrap();
        s.try_add(3, 2, Cell::new(1, 0)).unwrap();
        s.try_add(2, 1, Cell::new(2, 0)).unwrap();
        s.try_add(2, 1, Cell::new(3, 0)).unwrap();
        let traffic = TrafficProfile::default();
        // node 3: T_max 2, inflow 0 < 1 => T=1; node 2: T_max 2, inflow 1 < 1 false => T=2
        assert_eq!(loss_rate(&s, &t, &traffic), 0.0);
        s.try_remove(Cell::new(3, 0), 1).unwrap();
        // node 2 capped at 1 pkt/s out of 2 offered
        assert_relative_eq!(loss_rate(&s, &t, &traffic), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn normalization_edges() {
        let b = NormalizationBounds {
            power_min: 1.0,
            power_max: 3.0,
            delay_cap: 3000.0,
            throughput_ub: 100.0,
        };
        let n = normalize(1.0, 3000.0, 50.0, 0.2, &b);
        assert_eq!(n.power, 0.0);
        assert_eq!(n.delay, 1.0);
        assert_eq!(n.throughput, 0.5);
        let mid = normalize(2.3, 5000.0, 500.0, 2.0, &b);
        assert_relative_eq!(mid.power, (2.3 - 1.0) / 2.0, max_relative = 1e-12);
        assert_eq!(mid.delay, 1.0);
        assert_eq!(mid.throughput, 1.0);
        assert_eq!(mid.loss, 1.0);
        let flat = NormalizationBounds { power_max: 1.0, ..b };
        assert_eq!(normalize(5.0, 0.0, 0.0, 0.0, &flat).power, 0.0);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let g = TopologyFile::ten_node().build().unwrap();
        let t = ForwardingTree::build(&g).unwrap();
        let mut s = TschSchedule::new(frame());
        for (i, (c, p)) in t.edges().into_iter().enumerate() {
            s.try_add(c, p, Cell::new(i, 0)).unwrap();
        }
        let traffic = TrafficProfile {
            noise: NoiseSigmas { throughput: 0.1, power: 0.1, delay: 0.1 },
            seed: 42,
            ..TrafficProfile::default()
        };
        let m = AnalyticModel::new(&t, &frame(), EnergyProfile::default(), traffic).unwrap();
        let a = m.evaluate_seeded(&s, &t);
        let b = m.evaluate_seeded(&s, &t);
        assert_eq!(a, b);
        assert_ne!(a.throughput, m.evaluate_exact(&s, &t).throughput);
    }

    #[test]
    fn two_node_network_throughput_mean() {
        let (_, t) = chain(2);
        let s = TschSchedule::new(frame()).add_link(2, 1, Cell::new(0, 0)).unwrap();
        let m = AnalyticModel::new(&t, &frame(), EnergyProfile::default(), TrafficProfile::default()).unwrap();
        let r = m.evaluate_exact(&s, &t);
        // sink delivers 1 pkt/s, the leaf sends 1 pkt/s
        assert_eq!(r.throughput, 1.0);
        assert_eq!(r.loss, 0.0);
    }

    #[test]
    fn bounds_for_ten_node() {
        let g = TopologyFile::ten_node().build().unwrap();
        let t = ForwardingTree::build(&g).unwrap();
        let b = NormalizationBounds::for_topology(&t, &frame(), &EnergyProfile::default(), &TrafficProfile::default());
        assert_eq!(b.delay_cap, 3000.0);
        assert_relative_eq!(b.throughput_ub, 100.0, max_relative = 1e-12);
        assert!(b.power_max > b.power_min);
    }
}
