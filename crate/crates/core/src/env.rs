//! Two-level scheduling environment: state encoding, penalized actions, cost and reward.
//!
//! The higher level picks "add link e" or "remove link e"; the lower level picks the cell.
//! A penalized choice at either level ends the episode with reward `penalty`; every other
//! step earns `upsilon - cost`.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{AnalyticModel, EnergyProfile, MetricsReport, TrafficProfile};
use crate::netmodel::{ForwardingTree, NetworkGraph, NodeId, TopologyFile};
use crate::schedule::{Cell, Infeasible, Slotframe, TschSchedule};

/// Application requirements φ = (α, β, γ) weighting power, delay and throughput.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Requirements {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Requirements {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        for w in [alpha, beta, gamma] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Contract(format!("weight {w} outside [0, 1]")));
            }
        }
        let sum = alpha + beta + gamma;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "weights must sum to 1, got {alpha} + {beta} + {gamma} = {sum}"
            )));
        }
        Ok(Self { alpha, beta, gamma })
    }

    /// Parses "a,b,g".
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<f64> = text
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad requirement tuple {text:?}: {e}")))?;
        match parts.as_slice() {
            [a, b, g] => Self::new(*a, *b, *g),
            _ => Err(Error::Config(format!("expected three weights, got {text:?}"))),
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

impl std::fmt::Display for Requirements {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({:.1}, {:.1}, {:.1})", self.alpha, self.beta, self.gamma)
    }
}

/// Every φ on the simplex grid with the given step, in lexicographic (α, β) order.
pub fn requirement_grid(step: f64) -> Result<Vec<Requirements>> {
    if !(step > 0.0) || step > 1.0 {
        return Err(Error::Config(format!("grid step must be in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("grid step {step} does not divide 1")));
    }
    let n = n as u32;
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=(n - i) {
            let alpha = i as f64 / n as f64;
            let beta = j as f64 / n as f64;
            let gamma = 1.0 - (alpha + beta);
            out.push(Requirements { alpha, beta, gamma: gamma.max(0.0) });
        }
    }
    Ok(out)
}

/// c = α·P̂ + β·D̂ − γ·T̂.
pub fn cost(power: f64, delay: f64, throughput: f64, phi: &Requirements) -> f64 {
    phi.alpha * power + phi.beta * delay - phi.gamma * throughput
}

pub fn report_cost(report: &MetricsReport, phi: &Requirements) -> f64 {
    let n = report.normalized;
    cost(n.power, n.delay, n.throughput, phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkOp {
    Add,
    #[serde(rename = "rm")]
    Remove,
}

impl LinkOp {
    pub fn tag(&self) -> &'static str {
        match self {
            LinkOp::Add => "add",
            LinkOp::Remove => "rm",
        }
    }
}

/// Higher-level action. Ids `0..|E|` add link `id`; ids `|E|..2|E|` remove link `id - |E|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HighAction {
    pub op: LinkOp,
    pub link: usize,
}

impl HighAction {
    pub fn from_id(id: usize, link_count: usize) -> Option<Self> {
        if id < link_count {
            Some(Self { op: LinkOp::Add, link: id })
        } else if id < 2 * link_count {
            Some(Self { op: LinkOp::Remove, link: id - link_count })
        } else {
            None
        }
    }

    pub fn id(&self, link_count: usize) -> usize {
        match self.op {
            LinkOp::Add => self.link,
            LinkOp::Remove => link_count + self.link,
        }
    }
}

/// Everything fixed for one deployment: topology, routing, slotframe and the analytic model.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: NetworkGraph,
    pub tree: ForwardingTree,
    pub frame: Slotframe,
    pub model: AnalyticModel,
}

impl Scenario {
    pub fn new(
        graph: NetworkGraph,
        frame: Slotframe,
        energy: EnergyProfile,
        traffic: TrafficProfile,
    ) -> Result<Self> {
        let tree = ForwardingTree::build(&graph)?;
        let model = AnalyticModel::new(&tree, &frame, energy, traffic)?;
        Ok(Self {
            graph,
            tree,
            frame,
            model,
        })
    }

    /// The bundled ten-node topology with default profiles.
    pub fn ten_node() -> Self {
        let graph = TopologyFile::ten_node().build().expect("bundled topology");
        Self::new(
            graph,
            Slotframe::standard(),
            EnergyProfile::default(),
            TrafficProfile::default(),
        )
        .expect("default profiles are valid")
    }

    pub fn link_count(&self) -> usize {
        self.graph.links().len()
    }

    pub fn link(&self, index: usize) -> (NodeId, NodeId) {
        self.graph.links()[index]
    }

    pub fn high_action_count(&self) -> usize {
        2 * self.link_count()
    }

    pub fn low_action_count(&self) -> usize {
        self.frame.cell_count()
    }

    pub fn high_state_len(&self) -> usize {
        let n = self.graph.node_count();
        3 + 3 + n * n + self.frame.cell_count() + 1
    }

    pub fn low_state_len(&self) -> usize {
        let n = self.graph.node_count();
        3 + 3 + n * n + 3 * self.frame.cell_count() + 1
    }

    pub fn evaluate(&self, schedule: &TschSchedule) -> MetricsReport {
        self.model.evaluate_exact(schedule, &self.tree)
    }

    pub fn schedule_cost(&self, schedule: &TschSchedule, phi: &Requirements) -> f64 {
        report_cost(&self.evaluate(schedule), phi)
    }

    /// Every tree edge has at least one cell.
    pub fn covers_tree(&self, schedule: &TschSchedule) -> bool {
        self.tree
            .edges()
            .iter()
            .all(|&(c, p)| schedule.link_cell_count(c, p) > 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// T_πh: step budget per episode.
    pub max_steps: usize,
    /// ψ: reward of a penalized action.
    pub penalty: f64,
    /// υ: reward offset, must exceed any cost.
    pub upsilon: f64,
    pub seed: u64,
    pub phi_grid_step: f64,
    pub reset_retries: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_steps: 50,
            penalty: -1.0,
            upsilon: 2.0,
            seed: 0,
            phi_grid_step: 0.1,
            reset_retries: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyReason {
    /// Adding a link that is not on any forwarding path.
    OffTree,
    /// Removal would leave a forwarding-tree edge without cells.
    BreaksPath,
    Cell(Infeasible),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Cost after the step; `None` on penalized steps.
    pub cost: Option<f64>,
    pub penalized: Option<PenaltyReason>,
}

impl StepInfo {
    pub fn is_penalized(&self) -> bool {
        self.penalized.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub info: StepInfo,
}

/// Result of a higher-level step: either it was penalized outright, or a lower-level
/// policy must now choose the cell for `(link, op)`.
#[derive(Debug, Clone, PartialEq)]
pub enum HighStep {
    Penalized(StepOutcome),
    Dispatch { link: usize, op: LinkOp },
}

/// True if the higher-level action is in the penalized set for this schedule.
pub fn penalized_high(action: HighAction, scenario: &Scenario, schedule: &TschSchedule) -> Option<PenaltyReason> {
    let (src, dst) = scenario.link(action.link);
    let on_tree = scenario.tree.is_tree_edge(src, dst);
    match action.op {
        LinkOp::Add if !on_tree => Some(PenaltyReason::OffTree),
        LinkOp::Remove if on_tree && schedule.link_cell_count(src, dst) <= 1 => Some(PenaltyReason::BreaksPath),
        _ => None,
    }
}

/// Lower-level penalty check for applying `op` on `link` at `cell`. With `guard_tree`,
/// a removal that would empty any forwarding-tree edge is also penalized.
pub fn penalized_low(
    scenario: &Scenario,
    schedule: &TschSchedule,
    link: usize,
    op: LinkOp,
    cell: Cell,
    guard_tree: bool,
) -> Option<PenaltyReason> {
    let (src, dst) = scenario.link(link);
    match op {
        LinkOp::Add => schedule.check_add(src, dst, cell).err().map(PenaltyReason::Cell),
        LinkOp::Remove => match schedule.check_remove(cell, dst) {
            Err(why) => Some(PenaltyReason::Cell(why)),
            Ok(entry) => {
                let breaks = guard_tree
                    && scenario.tree.is_tree_edge(entry.src, entry.dst)
                    && schedule.link_cell_count(entry.src, entry.dst) <= 1;
                breaks.then_some(PenaltyReason::BreaksPath)
            }
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Idle,
    AwaitHigh,
    AwaitLow { link: usize, op: LinkOp },
    Done,
}

/// One episode-driving environment instance. Single-threaded; clone the scenario `Arc`
/// to run several in parallel.
#[derive(Debug, Clone)]
pub struct TschEnv {
    scenario: Arc<Scenario>,
    cfg: EnvConfig,
    grid: Vec<Requirements>,
    adjacency: Vec<f64>,
    rng: ChaCha8Rng,
    schedule: TschSchedule,
    phi: Requirements,
    report: MetricsReport,
    last_link: Option<usize>,
    steps: usize,
    phase: Phase,
}

impl TschEnv {
    pub fn new(scenario: Arc<Scenario>, cfg: EnvConfig) -> Result<Self> {
        let grid = requirement_grid(cfg.phi_grid_step)?;
        let schedule = TschSchedule::new(scenario.frame);
        let report = scenario.evaluate(&schedule);
        let adjacency = scenario.graph.adjacency();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            scenario,
            cfg,
            grid,
            adjacency,
            schedule,
            phi: Requirements::new(1.0, 0.0, 0.0).unwrap(),
            report,
            last_link: None,
            steps: 0,
            phase: Phase::Idle,
        })
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &TschSchedule {
        &self.schedule
    }

    pub fn phi(&self) -> Requirements {
        self.phi
    }

    pub fn report(&self) -> &MetricsReport {
        &self.report
    }

    pub fn cost(&self) -> f64 {
        report_cost(&self.report, &self.phi)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    /// Starts a hierarchical episode from a random schedule with one cell per tree edge.
    pub fn reset(&mut self, seed: u64, phi: Option<Requirements>) -> Result<Vec<f64>> {
        self.begin(seed, phi, None)?;
        Ok(self.high_state())
    }

    /// Starts a single-link episode for training the lower-level policy of `(link, op)`.
    /// For removals, one to three extra cells of the link are seeded so there is
    /// something to remove.
    pub fn reset_for_link(&mut self, seed: u64, phi: Option<Requirements>, link: usize, op: LinkOp) -> Result<Vec<f64>> {
        if link >= self.scenario.link_count() {
            return Err(Error::Contract(format!("link index {link} out of range")));
        }
        self.begin(seed, phi, Some((link, op)))?;
        Ok(self.low_state(link))
    }

    fn begin(&mut self, seed: u64, phi: Option<Requirements>, focus: Option<(usize, LinkOp)>) -> Result<()> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.phi = match phi {
            Some(p) => p,
            None => *self.grid.choose(&mut self.rng).expect("grid is never empty"),
        };
        self.schedule = self.random_initial_schedule()?;
        if let Some((link, LinkOp::Remove)) = focus {
            let (src, dst) = self.scenario.link(link);
            let extra = self.rng.gen_range(1..=3);
            for _ in 0..extra {
                let free = self.feasible_cells(src, dst);
                if let Some(cell) = free.choose(&mut self.rng) {
                    self.schedule.try_add(src, dst, *cell).expect("cell was feasible");
                }
            }
        }
        self.steps = 0;
        self.last_link = focus.map(|(l, _)| l);
        self.refresh_metrics();
        self.phase = Phase::AwaitHigh;
        Ok(())
    }

    fn feasible_cells(&self, src: NodeId, dst: NodeId) -> Vec<Cell> {
        self.scenario
            .frame
            .cells()
            .filter(|&c| self.schedule.check_add(src, dst, c).is_ok())
            .collect()
    }

    fn random_initial_schedule(&mut self) -> Result<TschSchedule> {
        let frame = self.scenario.frame;
        let edges = self.scenario.tree.edges();
        'attempt: for _ in 0..self.cfg.reset_retries.max(1) {
            let mut s = TschSchedule::new(frame);
            for &(c, p) in &edges {
                let free: Vec<Cell> = frame.cells().filter(|&cell| s.check_add(c, p, cell).is_ok()).collect();
                match free.choose(&mut self.rng) {
                    Some(cell) => s.try_add(c, p, *cell).expect("cell was feasible"),
                    None => continue 'attempt,
                }
            }
            return Ok(s);
        }
        Err(Error::Environment(format!(
            "could not place {} tree links in a {}x{} slotframe",
            edges.len(),
            frame.size(),
            frame.channels()
        )))
    }

    fn refresh_metrics(&mut self) {
        self.report = self.scenario.model.evaluate(&self.schedule, &self.scenario.tree, &mut self.rng);
    }

    fn push_common(&self, out: &mut Vec<f64>, third: f64) {
        let n = self.report.normalized;
        out.extend([n.power, n.delay, third]);
        out.extend(self.phi.as_array());
        out.extend_from_slice(&self.adjacency);
    }

    fn link_code(&self, link: Option<usize>) -> f64 {
        link.map_or(0.0, |l| (l + 1) as f64 / self.scenario.link_count() as f64)
    }

    /// (P̂, D̂, T̂, φ, Ŵ, Ĥ, ê). Occupied cells carry (link index + 1) / (|E| + 1).
    pub fn high_state(&self) -> Vec<f64> {
        let sc = &self.scenario;
        let mut out = Vec::with_capacity(sc.high_state_len());
        self.push_common(&mut out, self.report.normalized.throughput);
        let denom = (sc.link_count() + 1) as f64;
        for cell in sc.frame.cells() {
            let v = self
                .schedule
                .entry_at(cell)
                .and_then(|e| sc.graph.link_index(e.src, e.dst))
                .map_or(0.0, |l| (l + 1) as f64 / denom);
            out.push(v);
        }
        out.push(self.link_code(self.last_link));
        out
    }

    /// (P̂, D̂, L̂, φ, Ŵ, source plane, destination plane, occupancy, ê) for `link`.
    ///
    /// Node planes hold 1.0 where the node transmits, 0.5 where it receives and 0.25 where
    /// it is busy in the same timeslot on another channel.
    pub fn low_state(&self, link: usize) -> Vec<f64> {
        let sc = &self.scenario;
        let (src, dst) = sc.link(link);
        let mut out = Vec::with_capacity(sc.low_state_len());
        self.push_common(&mut out, self.report.normalized.loss);
        for node in [src, dst] {
            for cell in sc.frame.cells() {
                let v = match self.schedule.entry_at(cell) {
                    Some(e) if e.src == node => 1.0,
                    Some(e) if e.dst == node => 0.5,
                    _ if self.schedule.node_busy(node, cell.timeslot) => 0.25,
                    _ => 0.0,
                };
                out.push(v);
            }
        }
        for cell in sc.frame.cells() {
            out.push(if self.schedule.entry_at(cell).is_some() { 1.0 } else { 0.0 });
        }
        out.push(self.link_code(Some(link)));
        out
    }

    fn ensure_active(&self) -> Result<()> {
        match self.phase {
            Phase::Idle => Err(Error::Lifecycle("reset() must be called before stepping".into())),
            Phase::Done => Err(Error::Lifecycle("the episode has finished; call reset()".into())),
            _ => Ok(()),
        }
    }

    fn penalize(&mut self, reason: PenaltyReason, next_state: Vec<f64>) -> StepOutcome {
        self.steps += 1;
        self.phase = Phase::Done;
        StepOutcome {
            next_state,
            reward: self.cfg.penalty,
            terminal: true,
            info: StepInfo {
                cost: None,
                penalized: Some(reason),
            },
        }
    }

    pub fn step_high(&mut self, action: HighAction) -> Result<HighStep> {
        self.ensure_active()?;
        if let Phase::AwaitLow { .. } = self.phase {
            return Err(Error::Lifecycle("a lower-level action is pending".into()));
        }
        if action.link >= self.scenario.link_count() {
            return Err(Error::Contract(format!("link index {} out of range", action.link)));
        }
        self.last_link = Some(action.link);
        if let Some(reason) = penalized_high(action, &self.scenario, &self.schedule) {
            let state = self.high_state();
            return Ok(HighStep::Penalized(self.penalize(reason, state)));
        }
        self.phase = Phase::AwaitLow {
            link: action.link,
            op: action.op,
        };
        Ok(HighStep::Dispatch {
            link: action.link,
            op: action.op,
        })
    }

    /// Executes the pending lower-level choice; the outcome carries the next high state.
    pub fn step_low(&mut self, cell_index: usize) -> Result<StepOutcome> {
        self.ensure_active()?;
        let Phase::AwaitLow { link, op } = self.phase else {
            return Err(Error::Lifecycle("no higher-level action is pending".into()));
        };
        self.phase = Phase::AwaitHigh;
        let (reward, terminal, info) = self.apply(link, op, cell_index, true)?;
        Ok(StepOutcome {
            next_state: self.high_state(),
            reward,
            terminal,
            info,
        })
    }

    /// Single-link step used when training one lower-level policy in isolation.
    /// Only the cell-level penalty applies; the outcome carries the next low state.
    pub fn step_link(&mut self, link: usize, op: LinkOp, cell_index: usize) -> Result<StepOutcome> {
        self.ensure_active()?;
        let (reward, terminal, info) = self.apply(link, op, cell_index, false)?;
        Ok(StepOutcome {
            next_state: self.low_state(link),
            reward,
            terminal,
            info,
        })
    }

    fn apply(&mut self, link: usize, op: LinkOp, cell_index: usize, guard_tree: bool) -> Result<(f64, bool, StepInfo)> {
        let cell = self
            .scenario
            .frame
            .cell_at(cell_index)
            .ok_or_else(|| Error::Contract(format!("cell index {cell_index} out of range")))?;
        if let Some(reason) = penalized_low(&self.scenario, &self.schedule, link, op, cell, guard_tree) {
            let o = self.penalize(reason, Vec::new());
            return Ok((o.reward, o.terminal, o.info));
        }
        let (src, dst) = self.scenario.link(link);
        match op {
            LinkOp::Add => self.schedule.try_add(src, dst, cell).expect("checked"),
            LinkOp::Remove => {
                self.schedule.try_remove(cell, dst).expect("checked");
            }
        }
        self.refresh_metrics();
        self.steps += 1;
        let c = self.cost();
        let terminal = self.steps >= self.cfg.max_steps;
        if terminal {
            self.phase = Phase::Done;
        }
        Ok((
            self.cfg.upsilon - c,
            terminal,
            StepInfo {
                cost: Some(c),
                penalized: None,
            },
        ))
    }

    /// Restores a schedule snapshot (used by rollouts that explore from a fixed point).
    pub fn set_schedule(&mut self, schedule: TschSchedule) {
        self.schedule = schedule;
        self.refresh_metrics();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> TschEnv {
        TschEnv::new(Arc::new(Scenario::ten_node()), EnvConfig::default()).unwrap()
    }

    fn action(sc: &Scenario, op: LinkOp, src: NodeId, dst: NodeId) -> HighAction {
        HighAction { op, link: sc.graph.link_index(src, dst).unwrap() }
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(requirement_grid(0.1).unwrap().len(), 66);
        assert_eq!(requirement_grid(0.5).unwrap().len(), 6);
        assert_eq!(requirement_grid(0.2).unwrap().len(), 21);
        for phi in requirement_grid(0.1).unwrap() {
            assert_eq!(phi.alpha + phi.beta + phi.gamma, 1.0);
        }
        assert!(requirement_grid(0.3).is_err());
    }

    #[test]
    fn requirements_validation() {
        assert!(Requirements::new(0.5, 0.5, 0.5).is_err());
        assert!(Requirements::new(1.2, -0.2, 0.0).is_err());
        assert_eq!(Requirements::parse("0.5, 0.3,0.2").unwrap(), Requirements::new(0.5, 0.3, 0.2).unwrap());
        assert!(Requirements::parse("0.5,0.5").is_err());
    }

    #[test]
    fn cost_values() {
        let p = |a, b, g| Requirements::new(a, b, g).unwrap();
        assert_eq!(cost(0.4, 0.9, 0.9, &p(1.0, 0.0, 0.0)), 0.4);
        assert_eq!(cost(0.3, 0.3, 1.0, &p(0.0, 0.0, 1.0)), -1.0);
        assert!((cost(0.2, 0.5, 0.8, &p(0.5, 0.3, 0.2)) - 0.09).abs() < 1e-12);
    }

    #[test]
    fn high_action_ids_round_trip() {
        for id in 0..92 {
            let a = HighAction::from_id(id, 46).unwrap();
            assert_eq!(a.id(46), id);
        }
        assert!(HighAction::from_id(92, 46).is_none());
    }

    #[test]
    fn reset_state_shape_and_determinism() {
        let mut e = env();
        let phi = Requirements::new(1.0, 0.0, 0.0).unwrap();
        let s1 = e.reset(7, Some(phi)).unwrap();
        assert_eq!(s1.len(), 141);
        assert!(s1.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(e.schedule().len(), 9);
        assert!(e.scenario().covers_tree(e.schedule()));
        let s2 = e.reset(7, Some(phi)).unwrap();
        assert_eq!(s1, s2);
        e.reset(11, None).unwrap();
        let phi = e.phi();
        assert_eq!(phi.alpha + phi.beta + phi.gamma, 1.0);
    }

    #[test]
    fn low_state_shape() {
        let mut e = env();
        let s = e.reset_for_link(3, None, 0, LinkOp::Remove).unwrap();
        assert_eq!(s.len(), 209);
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn high_penalties() {
        let sc = Scenario::ten_node();
        let mut s = TschSchedule::new(sc.frame);
        s.try_add(2, 1, Cell::new(0, 0)).unwrap();
        assert_eq!(penalized_high(action(&sc, LinkOp::Add, 5, 9), &sc, &s), Some(PenaltyReason::OffTree));
        assert_eq!(penalized_high(action(&sc, LinkOp::Add, 5, 2), &sc, &s), None);
        assert_eq!(penalized_high(action(&sc, LinkOp::Remove, 2, 1), &sc, &s), Some(PenaltyReason::BreaksPath));
        s.try_add(2, 1, Cell::new(1, 0)).unwrap();
        assert_eq!(penalized_high(action(&sc, LinkOp::Remove, 2, 1), &sc, &s), None);
    }

    #[test]
    fn penalized_step_ends_episode() {
        let mut e = env();
        e.reset(1, Some(Requirements::new(0.5, 0.3, 0.2).unwrap())).unwrap();
        let sc = e.scenario().clone();
        match e.step_high(action(&sc, LinkOp::Add, 5, 9)).unwrap() {
            HighStep::Penalized(o) => {
                assert_eq!(o.reward, -1.0);
                assert!(o.terminal);
            }
            other => panic!("expected a penalty, got {other:?}"),
        }
        assert!(matches!(e.step_high(action(&sc, LinkOp::Add, 2, 1)), Err(Error::Lifecycle(_))));
    }

    #[test]
    fn occupied_cell_penalizes_low_action() {
        let mut e = env();
        e.reset(1, None).unwrap();
        let sc = e.scenario().clone();
        let taken = e.schedule().entries()[0].cell;
        let HighStep::Dispatch { .. } = e.step_high(action(&sc, LinkOp::Add, 2, 1)).unwrap() else {
            panic!("tree link add must dispatch");
        };
        let o = e.step_low(sc.frame.cell_index(taken)).unwrap();
        assert_eq!(o.reward, -1.0);
        assert!(o.terminal);
    }

    #[test]
    fn feasible_step_reward_is_upsilon_minus_cost() {
        let mut e = env();
        e.reset(5, Some(Requirements::new(0.5, 0.3, 0.2).unwrap())).unwrap();
        let sc = e.scenario().clone();
        let a = action(&sc, LinkOp::Add, 2, 1);
        e.step_high(a).unwrap();
        let free = sc
            .frame
            .cells()
            .find(|&c| e.schedule().check_add(2, 1, c).is_ok())
            .unwrap();
        let o = e.step_low(sc.frame.cell_index(free)).unwrap();
        let c = o.info.cost.unwrap();
        assert!((o.reward - (2.0 - c)).abs() < 1e-12);
        assert!(!o.terminal);
        assert!((1.0..=3.0).contains(&o.reward));
    }

    #[test]
    fn budget_exhaustion_terminates() {
        let cfg = EnvConfig { max_steps: 1, ..EnvConfig::default() };
        let mut e = TschEnv::new(Arc::new(Scenario::ten_node()), cfg).unwrap();
        e.reset(5, None).unwrap();
        let sc = e.scenario().clone();
        e.step_high(action(&sc, LinkOp::Add, 2, 1)).unwrap();
        let free = sc.frame.cells().find(|&c| e.schedule().check_add(2, 1, c).is_ok()).unwrap();
        let o = e.step_low(sc.frame.cell_index(free)).unwrap();
        assert!(o.terminal);
        assert!(o.info.penalized.is_none());
        assert!(o.reward > 0.0);
    }

    #[test]
    fn stepping_before_reset_is_a_lifecycle_error() {
        let mut e = env();
        assert!(matches!(e.step_low(0), Err(Error::Lifecycle(_))));
    }
}
