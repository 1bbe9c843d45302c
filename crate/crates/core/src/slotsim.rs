//! Slot-by-slot packet simulator for learned schedules and two baseline schedulers.
//!
//! Every non-sink node generates one packet per data interval and forwards along the
//! routing tree. A transmission is received iff the receiver is listening and it is the
//! only transmission on that physical channel within interference range of the receiver.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Scenario;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::netmodel::NodeId;
use crate::schedule::TschSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub duration_s: f64,
    pub data_interval_s: f64,
    pub packet_size_bytes: usize,
    pub queue_capacity: usize,
    /// Extra attempts after a failed transmission.
    pub retransmissions: u32,
    pub phases: GenerationPhase,
    pub seed: u64,
}

/// When, within the data interval, each source generates its packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationPhase {
    /// Every source at the start of the interval.
    #[default]
    Synchronized,
    /// Source k of n at k/n of the interval.
    Staggered,
    /// Uniform offset per source, drawn from the run's seed.
    Random,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration_s: 60.0,
            data_interval_s: 1.0,
            packet_size_bytes: 12,
            queue_capacity: 8,
            retransmissions: 0,
            phases: GenerationPhase::Synchronized,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::Config("duration must be > 0".into()));
        }
        if !(self.data_interval_s > 0.0) || !self.data_interval_s.is_finite() {
            return Err(Error::Config("data interval must be > 0".into()));
        }
        if self.queue_capacity == 0 {
            return Err(Error::Config("queue capacity must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scheduler {
    Learned(TschSchedule),
    /// Receiver-based: node `n` listens at (n mod size, n mod channels); children send there.
    OrchestraLike { slotframe_size: usize },
    /// Everyone contends in cell (0, 0) of a `slotframe_size` frame.
    SharedCell { slotframe_size: usize },
}

impl Scheduler {
    pub fn label(&self) -> String {
        match self {
            Scheduler::Learned(_) => "learned".into(),
            Scheduler::OrchestraLike { slotframe_size } => format!("orchestra-like-{slotframe_size}"),
            Scheduler::SharedCell { slotframe_size } => format!("shared-cell-{slotframe_size}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TxOpportunity {
    src: NodeId,
    dst: NodeId,
    offset: usize,
}

/// Repeating per-timeslot plan of who may send and who listens.
#[derive(Debug, Clone)]
struct Plan {
    size: usize,
    channels: usize,
    tx: Vec<Vec<TxOpportunity>>,
    rx: Vec<Vec<(NodeId, usize)>>,
    /// Contenders resolved by a random winner instead of the interference rule.
    shared: bool,
}

fn build_plan(scenario: &Scenario, scheduler: &Scheduler) -> Result<Plan> {
    let channels = scenario.frame.channels();
    let tree = &scenario.tree;
    match scheduler {
        Scheduler::Learned(s) => {
            s.validate()?;
            s.validate_against(&scenario.graph)?;
            let size = s.frame().size();
            let channels = s.frame().channels();
            let mut tx = vec![Vec::new(); size];
            let mut rx = vec![Vec::new(); size];
            for e in s.sorted_entries() {
                tx[e.cell.timeslot].push(TxOpportunity {
                    src: e.src,
                    dst: e.dst,
                    offset: e.cell.channel,
                });
                rx[e.cell.timeslot].push((e.dst, e.cell.channel));
            }
            Ok(Plan {
                size,
                channels,
                tx,
                rx,
                shared: false,
            })
        }
        Scheduler::OrchestraLike { slotframe_size } => {
            let size = *slotframe_size;
            if size < 2 {
                return Err(Error::Config("orchestra-like slotframe must have at least 2 slots".into()));
            }
            let mut tx = vec![Vec::new(); size];
            let mut rx = vec![Vec::new(); size];
            for n in tree.nodes() {
                let (u, ch) = (n as usize % size, n as usize % channels);
                rx[u].push((n, ch));
                for c in tree.children(n) {
                    tx[u].push(TxOpportunity { src: c, dst: n, offset: ch });
                }
            }
            Ok(Plan {
                size,
                channels,
                tx,
                rx,
                shared: false,
            })
        }
        Scheduler::SharedCell { slotframe_size } => {
            let size = *slotframe_size;
            if size < 1 {
                return Err(Error::Config("shared-cell slotframe must have at least 1 slot".into()));
            }
            let mut tx = vec![Vec::new(); size];
            let mut rx = vec![Vec::new(); size];
            for n in tree.nodes() {
                rx[0].push((n, 0));
                if let Some(p) = tree.parent(n) {
                    tx[0].push(TxOpportunity { src: n, dst: p, offset: 0 });
                }
            }
            Ok(Plan {
                size,
                channels,
                tx,
                rx,
                shared: true,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Delivered,
    /// Dropped on arrival at a full queue.
    QueueDrop,
    Collision,
    /// The holder has no transmit cell toward its parent.
    NoLink,
    InFlight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub id: u64,
    pub src: NodeId,
    pub gen_asn: u64,
    pub delivered_asn: Option<u64>,
    pub hops: u32,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    id: u64,
    attempts: u32,
}

/// Per-node radio activity counts, enough to recompute energy independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RadioCounts {
    pub tx_attempts: u64,
    pub tx_success: u64,
    pub rx_success: u64,
    pub idle_listen: u64,
    pub sleep_slots: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub base_mj: f64,
    pub tx_mj: f64,
    pub rx_mj: f64,
    pub listen_mj: f64,
    /// Time spent asleep, reported for the breakdown; covered by the baseline draw.
    pub sleep_mj: f64,
}

impl EnergyBreakdown {
    /// Energy counted toward mean power: baseline plus radio activity.
    pub fn active_mj(&self) -> f64 {
        self.base_mj + self.tx_mj + self.rx_mj + self.listen_mj
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: NodeId,
    pub generated: u64,
    pub delivered: u64,
    pub queue_drops: u64,
    pub lost_collision: u64,
    pub lost_no_link: u64,
    pub in_flight: u64,
    pub plr: f64,
    pub mean_latency_ms: f64,
    pub max_latency_ms: f64,
    pub jitter_ms: f64,
    pub radio: RadioCounts,
    pub energy: EnergyBreakdown,
    pub mean_power_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimReport {
    pub scheduler: String,
    pub duration_s: f64,
    pub slots: u64,
    pub nodes: Vec<NodeReport>,
    pub generated: u64,
    pub delivered: u64,
    pub queue_drops: u64,
    pub lost_collision: u64,
    pub lost_no_link: u64,
    pub in_flight: u64,
    pub collisions: u64,
    pub plr: f64,
    pub mean_latency_ms: f64,
    pub max_latency_ms: f64,
    pub jitter_ms: f64,
    pub throughput_pps: f64,
    pub mean_power_mw: f64,
}

impl SimReport {
    pub fn node(&self, id: NodeId) -> Option<&NodeReport> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub report: SimReport,
    pub packets: Vec<PacketRecord>,
}

impl SimRun {
    pub fn write_trace<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["packet_id", "src", "gen_asn", "delivered_asn", "hops", "outcome"])?;
        for p in &self.packets {
            let outcome = serde_json::to_value(p.outcome)?;
            w.write_record([
                p.id.to_string(),
                p.src.to_string(),
                p.gen_asn.to_string(),
                p.delivered_asn.map(|a| a.to_string()).unwrap_or_default(),
                p.hops.to_string(),
                outcome.as_str().unwrap_or_default().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct NodeState {
    queue: VecDeque<Packet>,
    radio: RadioCounts,
    latencies: Vec<f64>,
    can_send: bool,
    phase: u64,
}

/// Runs the simulation. Deterministic for a given `(scenario, scheduler, cfg)`.
pub fn run(scenario: &Scenario, scheduler: &Scheduler, cfg: &SimConfig) -> Result<SimRun> {
    cfg.validate()?;
    let plan = build_plan(scenario, scheduler)?;
    let frame = &scenario.frame;
    let slot_s = frame.slot_secs();
    let slots = (cfg.duration_s / slot_s).round() as u64;
    let interval = ((cfg.data_interval_s / slot_s).round() as u64).max(1);
    let tree = &scenario.tree;
    let graph = &scenario.graph;
    let sink = tree.sink();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let sources: Vec<NodeId> = tree.nodes().filter(|&n| n != sink).collect();
    let mut nodes: BTreeMap<NodeId, NodeState> = tree
        .nodes()
        .map(|n| {
            let can_send = tree
                .parent(n)
                .is_some_and(|p| plan.tx.iter().flatten().any(|o| o.src == n && o.dst == p));
            let rank = sources.iter().position(|&s| s == n).unwrap_or(0) as u64;
            let phase = match cfg.phases {
                GenerationPhase::Synchronized => 0,
                GenerationPhase::Staggered => rank * interval / sources.len().max(1) as u64,
                GenerationPhase::Random => rng.gen_range(0..interval),
            };
            (
                n,
                NodeState {
                    queue: VecDeque::new(),
                    radio: RadioCounts::default(),
                    latencies: Vec::new(),
                    can_send,
                    phase,
                },
            )
        })
        .collect();
    let mut packets: Vec<PacketRecord> = Vec::new();
    let mut collisions = 0u64;

    for asn in 0..slots {
        for &n in &sources {
            let st = nodes.get_mut(&n).expect("node");
            if asn >= st.phase && (asn - st.phase) % interval == 0 {
                let id = packets.len() as u64;
                let outcome = if !st.can_send {
                    Some(Outcome::NoLink)
                } else if st.queue.len() >= cfg.queue_capacity {
                    Some(Outcome::QueueDrop)
                } else {
                    st.queue.push_back(Packet { id, attempts: 0 });
                    None
                };
                packets.push(PacketRecord {
                    id,
                    src: n,
                    gen_asn: asn,
                    delivered_asn: None,
                    hops: 0,
                    outcome: outcome.unwrap_or(Outcome::InFlight),
                });
            }
        }

        let u = (asn % plan.size as u64) as usize;
        let mut attempts: Vec<TxOpportunity> = Vec::new();
        for o in &plan.tx[u] {
            let sending = tree.parent(o.src) == Some(o.dst)
                && !nodes[&o.src].queue.is_empty()
                && !attempts.iter().any(|a| a.src == o.src);
            if sending {
                attempts.push(*o);
            }
        }
        let transmitting = |n: NodeId, attempts: &[TxOpportunity]| attempts.iter().any(|a| a.src == n);
        let channel_of = |offset: usize| (asn as usize + offset) % plan.channels;

        let mut success = vec![false; attempts.len()];
        if plan.shared {
            if !attempts.is_empty() {
                let w = rng.gen_range(0..attempts.len());
                success[w] = true;
            }
        } else {
            for (i, a) in attempts.iter().enumerate() {
                let listening = plan.rx[u].iter().any(|&(r, off)| r == a.dst && off == a.offset);
                if !listening || transmitting(a.dst, &attempts) {
                    continue;
                }
                let ch = channel_of(a.offset);
                let heard = attempts
                    .iter()
                    .filter(|b| channel_of(b.offset) == ch && (b.src == a.src || graph.interferes(b.src, a.dst)))
                    .count();
                success[i] = heard == 1;
            }
        }

        let mut receivers: Vec<NodeId> = Vec::new();
        for (a, ok) in attempts.iter().zip(&success) {
            nodes.get_mut(&a.src).expect("node").radio.tx_attempts += 1;
            if *ok {
                let pkt = nodes.get_mut(&a.src).expect("node").queue.pop_front().expect("queued");
                nodes.get_mut(&a.src).expect("node").radio.tx_success += 1;
                receivers.push(a.dst);
                let rec = &mut packets[pkt.id as usize];
                rec.hops += 1;
                let dst = nodes.get_mut(&a.dst).expect("node");
                dst.radio.rx_success += 1;
                if a.dst == sink {
                    rec.outcome = Outcome::Delivered;
                    rec.delivered_asn = Some(asn);
                    let lat = (asn - rec.gen_asn) as f64 * frame.slot_ms();
                    nodes.get_mut(&rec.src).expect("node").latencies.push(lat);
                } else if dst.queue.len() >= cfg.queue_capacity {
                    rec.outcome = Outcome::QueueDrop;
                } else {
                    dst.queue.push_back(Packet { id: pkt.id, attempts: 0 });
                }
            } else {
                collisions += 1;
                let st = nodes.get_mut(&a.src).expect("node");
                let head = st.queue.front_mut().expect("queued");
                head.attempts += 1;
                if head.attempts > cfg.retransmissions {
                    let pkt = st.queue.pop_front().expect("queued");
                    packets[pkt.id as usize].outcome = Outcome::Collision;
                }
            }
        }

        for (&n, st) in nodes.iter_mut() {
            if transmitting(n, &attempts) || receivers.contains(&n) {
                continue;
            }
            if plan.rx[u].iter().any(|&(r, _)| r == n) {
                st.radio.idle_listen += 1;
            } else {
                st.radio.sleep_slots += 1;
            }
        }
    }

    let report = summarize(scenario, scheduler.label(), cfg, slots, &nodes, &packets, collisions);
    Ok(SimRun { report, packets })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn jitter(latencies: &[f64]) -> f64 {
    let diffs: Vec<f64> = latencies.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    mean(&diffs)
}

/// Energy from radio counts: per-attempt Tx, per-success Rx, per-slot idle listen.
pub fn energy_from_counts(scenario: &Scenario, radio: &RadioCounts, duration_s: f64) -> EnergyBreakdown {
    let e = &scenario.model.energy;
    let slot_s = scenario.frame.slot_secs();
    EnergyBreakdown {
        base_mj: e.baseline_mw * duration_s,
        tx_mj: radio.tx_attempts as f64 * e.tx_event_uj() / 1e3,
        rx_mj: radio.rx_success as f64 * e.rx_event_uj() / 1e3,
        listen_mj: radio.idle_listen as f64 * e.listen_uj / 1e3,
        sleep_mj: radio.sleep_slots as f64 * slot_s * e.sleep_mw(),
    }
}

fn summarize(
    scenario: &Scenario,
    label: String,
    cfg: &SimConfig,
    slots: u64,
    nodes: &BTreeMap<NodeId, NodeState>,
    packets: &[PacketRecord],
    collisions: u64,
) -> SimReport {
    let duration_s = slots as f64 * scenario.frame.slot_secs();
    let mut per_node: BTreeMap<NodeId, NodeReport> = nodes
        .iter()
        .map(|(&id, st)| {
            let energy = energy_from_counts(scenario, &st.radio, duration_s);
            (
                id,
                NodeReport {
                    id,
                    radio: st.radio,
                    mean_power_mw: energy.active_mj() / duration_s,
                    energy,
                    mean_latency_ms: mean(&st.latencies),
                    max_latency_ms: st.latencies.iter().cloned().fold(0.0, f64::max),
                    jitter_ms: jitter(&st.latencies),
                    ..NodeReport::default()
                },
            )
        })
        .collect();
    for p in packets {
        let r = per_node.get_mut(&p.src).expect("source node");
        r.generated += 1;
        match p.outcome {
            Outcome::Delivered => r.delivered += 1,
            Outcome::QueueDrop => r.queue_drops += 1,
            Outcome::Collision => r.lost_collision += 1,
            Outcome::NoLink => r.lost_no_link += 1,
            Outcome::InFlight => r.in_flight += 1,
        }
    }
    let plr = |lost: u64, generated: u64| if generated == 0 { 0.0 } else { lost as f64 / generated as f64 };
    for r in per_node.values_mut() {
        r.plr = plr(r.queue_drops + r.lost_collision + r.lost_no_link, r.generated);
    }
    let nodes: Vec<NodeReport> = per_node.into_values().collect();
    let sum = |f: fn(&NodeReport) -> u64| nodes.iter().map(f).sum::<u64>();
    let generated = sum(|r| r.generated);
    let queue_drops = sum(|r| r.queue_drops);
    let lost_collision = sum(|r| r.lost_collision);
    let lost_no_link = sum(|r| r.lost_no_link);
    let delivered = sum(|r| r.delivered);
    let all_latencies: Vec<f64> = nodes.iter().flat_map(|n| nodes_latencies(n, packets, scenario)).collect();
    let with_jitter: Vec<f64> = nodes.iter().filter(|n| n.delivered >= 2).map(|n| n.jitter_ms).collect();
    SimReport {
        scheduler: label,
        duration_s: cfg.duration_s,
        slots,
        generated,
        delivered,
        queue_drops,
        lost_collision,
        lost_no_link,
        in_flight: sum(|r| r.in_flight),
        collisions,
        plr: plr(queue_drops + lost_collision + lost_no_link, generated),
        mean_latency_ms: mean(&all_latencies),
        max_latency_ms: all_latencies.iter().cloned().fold(0.0, f64::max),
        jitter_ms: mean(&with_jitter),
        throughput_pps: delivered as f64 / duration_s,
        mean_power_mw: mean(&nodes.iter().map(|n| n.mean_power_mw).collect::<Vec<_>>()),
        nodes,
    }
}

fn nodes_latencies<'a>(n: &'a NodeReport, packets: &'a [PacketRecord], scenario: &'a Scenario) -> impl Iterator<Item = f64> + 'a {
    packets
        .iter()
        .filter(move |p| p.src == n.id)
        .filter_map(move |p| p.delivered_asn.map(|d| (d - p.gen_asn) as f64 * scenario.frame.slot_ms()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    /// Node id, or `None` for the network-wide row.
    pub node: Option<NodeId>,
    pub metric: &'static str,
    pub analytic: f64,
    pub simulated: f64,
    /// |sim - analytic| / |analytic|; `None` when the analytic value is zero.
    pub relative: Option<f64>,
}

fn deviation(node: Option<NodeId>, metric: &'static str, analytic: f64, simulated: f64) -> Deviation {
    Deviation {
        node,
        metric,
        analytic,
        simulated,
        relative: (analytic != 0.0).then(|| (simulated - analytic).abs() / analytic.abs()),
    }
}

/// Per-node and network deviations between the analytic model and a simulation of the
/// same schedule. Node throughput is successful transmissions per second (deliveries
/// for the sink); delay is compared against the simulated mean latency.
pub fn compare(analytic: &MetricsReport, sim: &SimReport) -> Vec<Deviation> {
    let mut out = Vec::new();
    for a in &analytic.nodes {
        let Some(s) = sim.node(a.id) else { continue };
        let dur = sim.duration_s.max(f64::MIN_POSITIVE);
        let sent = if s.radio.tx_success > 0 {
            s.radio.tx_success
        } else {
            s.radio.rx_success
        };
        out.push(deviation(Some(a.id), "throughput_pps", a.throughput, sent as f64 / dur));
        out.push(deviation(Some(a.id), "power_mw", a.power.total(), s.mean_power_mw));
        out.push(deviation(Some(a.id), "delay_ms", a.delay.total(), s.mean_latency_ms));
    }
    let sim_throughput = mean(
        &sim.nodes
            .iter()
            .map(|n| {
                let c = if n.radio.tx_success > 0 { n.radio.tx_success } else { n.radio.rx_success };
                c as f64 / sim.duration_s
            })
            .collect::<Vec<_>>(),
    );
    out.push(deviation(None, "throughput_pps", analytic.throughput, sim_throughput));
    out.push(deviation(None, "power_mw", analytic.power, sim.mean_power_mw));
    out.push(deviation(None, "delay_ms", analytic.delay, sim.mean_latency_ms));
    out.push(deviation(None, "loss", analytic.loss, sim.plr));
    out
}

pub fn write_deviations<W: Write>(rows: &[Deviation], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "metric", "analytic", "simulated", "relative_deviation"])?;
    for r in rows {
        w.write_record([
            r.node.map_or_else(|| "network".to_string(), |n| n.to_string()),
            r.metric.to_string(),
            r.analytic.to_string(),
            r.simulated.to_string(),
            r.relative.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{EnergyProfile, TrafficProfile};
    use crate::netmodel::{NetworkGraph, NodePosition};
    use crate::schedule::{Cell, ScheduledLink, Slotframe};

    fn two_node() -> Scenario {
        let g = NetworkGraph::build(&[NodePosition::new(1, 0.0, 0.0), NodePosition::new(2, 30.0, 0.0)], 50.0, 100.0).unwrap();
        Scenario::new(g, Slotframe::standard(), EnergyProfile::default(), TrafficProfile::default()).unwrap()
    }

    fn conserved(r: &SimReport) -> bool {
        r.nodes.iter().all(|n| n.generated == n.delivered + n.queue_drops + n.lost_collision + n.lost_no_link + n.in_flight)
            && r.generated == r.delivered + r.queue_drops + r.lost_collision + r.lost_no_link + r.in_flight
    }

    #[test]
    fn single_link_delivers_everything() {
        let sc = two_node();
        let mut s = TschSchedule::new(sc.frame);
        s.try_add(2, 1, Cell::new(3, 0)).unwrap();
        let r = run(&sc, &Scheduler::Learned(s), &SimConfig::default()).unwrap().report;
        assert_eq!(r.generated, 60);
        assert_eq!(r.delivered, 60);
        assert_eq!(r.plr, 0.0);
        assert_eq!(r.collisions, 0);
        assert!(conserved(&r));
    }

    #[test]
    fn empty_schedule_loses_everything_at_baseline_power() {
        let sc = two_node();
        let r = run(&sc, &Scheduler::Learned(TschSchedule::new(sc.frame)), &SimConfig::default()).unwrap().report;
        assert_eq!(r.plr, 1.0);
        assert_eq!(r.delivered, 0);
        assert!((r.mean_power_mw - sc.model.energy.baseline_mw).abs() < 1e-12);
    }

    #[test]
    fn forced_contention_collides() {
        let pos = [NodePosition::new(1, 0.0, 0.0), NodePosition::new(2, 30.0, 0.0), NodePosition::new(3, -30.0, 0.0)];
        let g = NetworkGraph::build(&pos, 50.0, 100.0).unwrap();
        let sc = Scenario::new(g, Slotframe::standard(), EnergyProfile::default(), TrafficProfile::default()).unwrap();
        let mut s = TschSchedule::new(sc.frame);
        s.push_unchecked(ScheduledLink { src: 2, dst: 1, cell: Cell::new(0, 0) });
        s.push_unchecked(ScheduledLink { src: 3, dst: 1, cell: Cell::new(0, 0) });
        let plan = build_plan(&sc, &Scheduler::Learned(s.clone()));
        assert!(plan.is_err(), "contention must be rejected at load time");
        // same cell through the receiver-based rule: both children of the sink share it
        let cfg = SimConfig { data_interval_s: 0.17, ..SimConfig::default() };
        let r = run(&sc, &Scheduler::OrchestraLike { slotframe_size: 17 }, &cfg).unwrap().report;
        assert!(r.lost_collision > 0);
        assert!(conserved(&r));
    }

    #[test]
    fn orchestra_on_two_nodes_is_lossless() {
        let sc = two_node();
        let r = run(&sc, &Scheduler::OrchestraLike { slotframe_size: 11 }, &SimConfig::default()).unwrap().report;
        assert_eq!(r.plr, 0.0);
        assert_eq!(r.delivered, 60);
    }

    #[test]
    fn shared_cell_overload_on_ten_node() {
        let sc = Scenario::ten_node();
        let r = run(&sc, &Scheduler::SharedCell { slotframe_size: 3 }, &SimConfig { seed: 5, ..SimConfig::default() })
            .unwrap()
            .report;
        assert!(r.plr > 0.5, "plr {}", r.plr);
        assert!(conserved(&r));
    }

    #[test]
    fn reports_are_seed_deterministic() {
        let sc = Scenario::ten_node();
        let cfg = SimConfig { seed: 9, ..SimConfig::default() };
        let a = run(&sc, &Scheduler::SharedCell { slotframe_size: 5 }, &cfg).unwrap();
        let b = run(&sc, &Scheduler::SharedCell { slotframe_size: 5 }, &cfg).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
        let mut ta = Vec::new();
        let mut tb = Vec::new();
        a.write_trace(&mut ta).unwrap();
        b.write_trace(&mut tb).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn energy_recomputes_from_counts() {
        let sc = Scenario::ten_node();
        let r = run(&sc, &Scheduler::OrchestraLike { slotframe_size: 11 }, &SimConfig::default()).unwrap().report;
        let e = &sc.model.energy;
        for n in &r.nodes {
            let tx = n.radio.tx_attempts as f64 * (e.tx_uj + e.rx_ack_uj) / 1e3;
            let listen = n.radio.idle_listen as f64 * e.listen_uj / 1e3;
            assert!((n.energy.tx_mj - tx).abs() < 1e-9);
            assert!((n.energy.listen_mj - listen).abs() < 1e-9);
            assert_eq!(n.radio.tx_attempts + n.radio.rx_success + n.radio.idle_listen + n.radio.sleep_slots, r.slots);
        }
    }
}
