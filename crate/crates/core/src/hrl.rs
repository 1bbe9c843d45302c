//! The policy hierarchy: per-link cell pickers trained first, then the link picker on top,
//! and greedy rollouts that turn a requirement tuple into a schedule.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dqn::{self, argmax, Checkpoint, DqnAgent, Episodic, QNetwork, TrainConfig, TrainLog};
use crate::env::{EnvConfig, HighAction, HighStep, LinkOp, Requirements, Scenario, TschEnv};
use crate::error::{Error, Result};
use crate::metrics::NoiseSigmas;
use crate::schedule::TschSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HrlConfig {
    pub env: EnvConfig,
    pub low: TrainConfig,
    pub high: TrainConfig,
    /// Steps per synthesis rollout.
    pub budget: usize,
}

impl Default for HrlConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            low: TrainConfig::desk(),
            // One update per step: the higher level has a single network and a much
            // weaker per-action signal than any lower-level policy.
            high: TrainConfig {
                train_freq: 1,
                ..TrainConfig::desk()
            },
            budget: 50,
        }
    }
}

impl HrlConfig {
    pub fn full() -> Self {
        Self {
            low: TrainConfig::full(),
            high: TrainConfig::full(),
            ..Self::default()
        }
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..16])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LowKey {
    pub link: usize,
    pub op: LinkOp,
}

impl LowKey {
    pub fn all(link_count: usize) -> Vec<LowKey> {
        (0..link_count)
            .flat_map(|link| [LinkOp::Add, LinkOp::Remove].map(|op| LowKey { link, op }))
            .collect()
    }

    fn ordinal(&self) -> u64 {
        2 * self.link as u64 + matches!(self.op, LinkOp::Remove) as u64
    }

    fn file_name(&self) -> String {
        format!("low_{}_{}.json", self.link, self.op.tag())
    }
}

fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(salt.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Episodes that exercise one lower-level policy on its own link.
pub struct LowTrainingEnv {
    env: TschEnv,
    key: LowKey,
}

impl LowTrainingEnv {
    pub fn new(scenario: Arc<Scenario>, cfg: EnvConfig, key: LowKey) -> Result<Self> {
        if key.link >= scenario.link_count() {
            return Err(Error::Contract(format!("link index {} out of range", key.link)));
        }
        Ok(Self {
            env: TschEnv::new(scenario, cfg)?,
            key,
        })
    }
}

impl Episodic for LowTrainingEnv {
    fn state_len(&self) -> usize {
        self.env.scenario().low_state_len()
    }

    fn action_count(&self) -> usize {
        self.env.scenario().low_action_count()
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.env.reset_for_link(seed, None, self.key.link, self.key.op)
    }

    fn step(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)> {
        let o = self.env.step_link(self.key.link, self.key.op, action)?;
        Ok((o.next_state, o.reward, o.terminal))
    }
}

/// Frozen lower-level networks indexed by (link, op).
#[derive(Debug, Clone, Default)]
pub struct LowPolicies {
    nets: BTreeMap<LowKey, QNetwork>,
}

impl LowPolicies {
    pub fn insert(&mut self, key: LowKey, net: QNetwork) {
        self.nets.insert(key, net);
    }

    pub fn get(&self, key: LowKey) -> Option<&QNetwork> {
        self.nets.get(&key)
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    /// Fails naming the first missing (link, op) pair.
    pub fn ensure_complete(&self, scenario: &Scenario) -> Result<()> {
        for key in LowKey::all(scenario.link_count()) {
            if !self.nets.contains_key(&key) {
                let (s, d) = scenario.link(key.link);
                return Err(Error::Startup(format!(
                    "missing lower-level policy for link {} ({s}->{d}), op {}",
                    key.link,
                    key.op.tag()
                )));
            }
        }
        Ok(())
    }

    /// Greedy cell for the pending `(link, op)` in `env`.
    pub fn choose(&self, env: &TschEnv, link: usize, op: LinkOp) -> Result<usize> {
        let net = self
            .get(LowKey { link, op })
            .ok_or_else(|| Error::Startup(format!("missing lower-level policy for link {link}, op {}", op.tag())))?;
        Ok(argmax(&net.forward(&env.low_state(link))?))
    }
}

/// Full hierarchical episodes where the low level acts greedily with frozen networks.
pub struct HighTrainingEnv<'a> {
    env: TschEnv,
    lows: &'a LowPolicies,
}

impl<'a> HighTrainingEnv<'a> {
    pub fn new(scenario: Arc<Scenario>, cfg: EnvConfig, lows: &'a LowPolicies) -> Result<Self> {
        lows.ensure_complete(&scenario)?;
        Ok(Self {
            env: TschEnv::new(scenario, cfg)?,
            lows,
        })
    }
}

/// One hierarchical transition: high action, then the low policy's greedy cell.
fn hierarchical_step(env: &mut TschEnv, lows: &LowPolicies, action: usize) -> Result<(Vec<f64>, f64, bool, Option<f64>)> {
    let links = env.scenario().link_count();
    let a = HighAction::from_id(action, links)
        .ok_or_else(|| Error::Contract(format!("high action {action} out of range")))?;
    match env.step_high(a)? {
        HighStep::Penalized(o) => Ok((o.next_state, o.reward, true, None)),
        HighStep::Dispatch { link, op } => {
            let cell = lows.choose(env, link, op)?;
            let o = env.step_low(cell)?;
            Ok((o.next_state, o.reward, o.terminal, o.info.cost))
        }
    }
}

impl Episodic for HighTrainingEnv<'_> {
    fn state_len(&self) -> usize {
        self.env.scenario().high_state_len()
    }

    fn action_count(&self) -> usize {
        self.env.scenario().high_action_count()
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.env.reset(seed, None)
    }

    fn step(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)> {
        let (s, r, t, _) = hierarchical_step(&mut self.env, self.lows, action)?;
        Ok((s, r, t))
    }
}

/// Trains one lower-level policy. The seed is derived from `cfg.seed` and the key so
/// every policy is reproducible regardless of scheduling order.
pub fn train_low(scenario: Arc<Scenario>, env_cfg: EnvConfig, cfg: &TrainConfig, key: LowKey) -> Result<(Checkpoint, TrainLog)> {
    let seed = derive_seed(cfg.seed, key.ordinal());
    let mut env = LowTrainingEnv::new(
        scenario.clone(),
        EnvConfig {
            seed,
            ..env_cfg
        },
        key,
    )?;
    let mut agent = DqnAgent::new(
        env.state_len(),
        env.action_count(),
        TrainConfig {
            seed,
            ..cfg.clone()
        },
    )?;
    let log = dqn::train(&mut env, &mut agent)?;
    if let Some((first, last)) = log.decile_means() {
        if last <= first {
            log::warn!(
                "low policy link {} {}: last-decile reward {last:.3} did not exceed first {first:.3}",
                key.link,
                key.op.tag()
            );
        }
    }
    Ok((agent.checkpoint(), log))
}

/// Trains every lower-level policy, `jobs` at a time.
pub fn train_low_all(
    scenario: Arc<Scenario>,
    env_cfg: EnvConfig,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<BTreeMap<LowKey, (Checkpoint, TrainLog)>> {
    let keys = LowKey::all(scenario.link_count());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<(LowKey, (Checkpoint, TrainLog))>> = pool.install(|| {
        keys.par_iter()
            .map(|&key| {
                let out = train_low(scenario.clone(), env_cfg, cfg, key)?;
                log::info!("trained low policy link {} {}", key.link, key.op.tag());
                Ok((key, out))
            })
            .collect()
    });
    results.into_iter().collect()
}

pub fn train_high(
    scenario: Arc<Scenario>,
    env_cfg: EnvConfig,
    cfg: &TrainConfig,
    lows: &LowPolicies,
) -> Result<(Checkpoint, TrainLog)> {
    let seed = derive_seed(cfg.seed, u64::MAX);
    let mut env = HighTrainingEnv::new(scenario, EnvConfig { seed, ..env_cfg }, lows)?;
    let mut agent = DqnAgent::new(
        env.state_len(),
        env.action_count(),
        TrainConfig {
            seed,
            ..cfg.clone()
        },
    )?;
    let log = dqn::train(&mut env, &mut agent)?;
    Ok((agent.checkpoint(), log))
}

/// A complete trained hierarchy for one topology.
#[derive(Debug, Clone)]
pub struct PolicyBank {
    pub scenario: Arc<Scenario>,
    pub config: HrlConfig,
    pub high: Checkpoint,
    pub lows: BTreeMap<LowKey, Checkpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankManifest {
    pub version: u32,
    pub fingerprint: String,
    pub config_hash: String,
    pub config: HrlConfig,
    pub link_count: usize,
    /// Absent until the higher-level policy has been trained.
    pub high: Option<String>,
    pub lows: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub link: usize,
    pub src: u32,
    pub dst: u32,
    pub op: LinkOp,
    pub file: String,
}

const MANIFEST_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";
const HIGH_FILE: &str = "high.json";

fn manifest_for(scenario: &Scenario, config: &HrlConfig, lows: &BTreeMap<LowKey, Checkpoint>, high: bool) -> BankManifest {
    BankManifest {
        version: MANIFEST_VERSION,
        fingerprint: scenario.graph.fingerprint(),
        config_hash: config.hash(),
        config: config.clone(),
        link_count: scenario.link_count(),
        high: high.then(|| HIGH_FILE.to_string()),
        lows: lows
            .keys()
            .map(|k| {
                let (src, dst) = scenario.link(k.link);
                ManifestEntry {
                    link: k.link,
                    src,
                    dst,
                    op: k.op,
                    file: k.file_name(),
                }
            })
            .collect(),
    }
}

/// Writes lower-level checkpoints and a manifest without a higher-level policy.
pub fn save_lows(dir: impl AsRef<Path>, scenario: &Scenario, config: &HrlConfig, lows: &BTreeMap<LowKey, Checkpoint>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (k, ck) in lows {
        ck.save(dir.join(k.file_name()))?;
    }
    std::fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest_for(scenario, config, lows, false))?,
    )?;
    Ok(())
}

/// Loads and checks every lower-level checkpoint listed in the bank manifest.
pub fn load_lows(dir: impl AsRef<Path>, scenario: &Scenario) -> Result<(BankManifest, BTreeMap<LowKey, Checkpoint>)> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let fp = scenario.graph.fingerprint();
    if manifest.fingerprint != fp {
        return Err(Error::Startup(format!(
            "policy bank was trained for topology {} but this topology is {fp}",
            manifest.fingerprint
        )));
    }
    let mut lows = BTreeMap::new();
    for e in &manifest.lows {
        let key = LowKey { link: e.link, op: e.op };
        if e.link >= scenario.link_count() || scenario.link(e.link) != (e.src, e.dst) {
            return Err(Error::Startup(format!("manifest entry for link {} does not match the topology", e.link)));
        }
        let ck = Checkpoint::load(dir.join(&e.file))
            .map_err(|err| Error::Startup(format!("low policy link {} {}: {err}", e.link, e.op.tag())))?;
        check_dims(&ck, scenario.low_state_len(), scenario.low_action_count())?;
        lows.insert(key, ck);
    }
    frozen(&lows).ensure_complete(scenario)?;
    Ok((manifest, lows))
}

impl PolicyBank {
    /// Trains the whole hierarchy: all low policies, then the high policy.
    pub fn train(scenario: Arc<Scenario>, config: HrlConfig, jobs: usize) -> Result<(Self, BankLogs)> {
        let trained = train_low_all(scenario.clone(), config.env, &config.low, jobs)?;
        let mut lows = BTreeMap::new();
        let mut low_logs = BTreeMap::new();
        for (k, (ck, log)) in trained {
            lows.insert(k, ck);
            low_logs.insert(k, log);
        }
        let (bank, high_log) = Self::train_on(scenario, config, lows)?;
        Ok((
            bank,
            BankLogs {
                lows: low_logs,
                high: high_log,
            },
        ))
    }

    /// Trains the higher-level policy on top of existing lower-level checkpoints.
    pub fn train_on(scenario: Arc<Scenario>, config: HrlConfig, lows: BTreeMap<LowKey, Checkpoint>) -> Result<(Self, TrainLog)> {
        let (high, log) = train_high(scenario.clone(), config.env, &config.high, &frozen(&lows))?;
        Ok((
            Self {
                scenario,
                config,
                high,
                lows,
            },
            log,
        ))
    }

    pub fn low_policies(&self) -> LowPolicies {
        frozen(&self.lows)
    }

    pub fn manifest(&self) -> BankManifest {
        manifest_for(&self.scenario, &self.config, &self.lows, true)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        save_lows(dir, &self.scenario, &self.config, &self.lows)?;
        self.high.save(dir.join(HIGH_FILE))?;
        std::fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&self.manifest())?,
        )?;
        Ok(())
    }

    /// Loads a bank trained for `scenario`; a fingerprint mismatch or a missing
    /// checkpoint is a startup error.
    pub fn load(dir: impl AsRef<Path>, scenario: Arc<Scenario>) -> Result<Self> {
        let dir = dir.as_ref();
        let (manifest, lows) = load_lows(dir, &scenario)?;
        let high_file = manifest
            .high
            .ok_or_else(|| Error::Startup(format!("bank in {} has no higher-level policy yet", dir.display())))?;
        let high = Checkpoint::load(dir.join(&high_file)).map_err(|e| Error::Startup(format!("high policy: {e}")))?;
        check_dims(&high, scenario.high_state_len(), scenario.high_action_count())?;
        Ok(Self {
            scenario,
            config: manifest.config,
            high,
            lows,
        })
    }

    pub fn synthesize(&self, phi: Requirements, budget: usize, seed: u64) -> Result<Synthesis> {
        let lows = self.low_policies();
        rollout(&self.scenario, self.config.env, &lows, HighChooser::Greedy(&self.high.online), phi, budget, seed)
    }
}

pub fn load_manifest(dir: &Path) -> Result<BankManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| Error::Startup(format!("cannot read bank manifest in {}: {e}", dir.display())))?;
    let m: BankManifest = serde_json::from_str(&text)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Startup(format!("unsupported bank manifest version {}", m.version)));
    }
    Ok(m)
}

fn check_dims(ck: &Checkpoint, inputs: usize, outputs: usize) -> Result<()> {
    if ck.online.input_len() != inputs || ck.online.output_len() != outputs {
        return Err(Error::Startup(format!(
            "checkpoint shape {}x{} does not match the topology ({inputs}x{outputs})",
            ck.online.input_len(),
            ck.online.output_len()
        )));
    }
    Ok(())
}

fn frozen(lows: &BTreeMap<LowKey, Checkpoint>) -> LowPolicies {
    let mut p = LowPolicies::default();
    for (k, ck) in lows {
        p.insert(*k, ck.online.clone());
    }
    p
}

#[derive(Debug, Clone, Default)]
pub struct BankLogs {
    pub lows: BTreeMap<LowKey, TrainLog>,
    pub high: TrainLog,
}

/// How the higher level picks its action during a rollout.
pub enum HighChooser<'a> {
    Greedy(&'a QNetwork),
    /// Uniform over all 2|E| actions; the value seeds the action draws, independently
    /// of the reset.
    Random(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub phi: Requirements,
    pub schedule: TschSchedule,
    pub cost: f64,
    /// Noise-free cost of every visited schedule, starting with the reset one.
    pub trajectory: Vec<f64>,
    /// The first high action was already penalized.
    pub penalized_immediately: bool,
}

/// Rollout from a seeded reset for up to `budget` steps; returns the cheapest visited
/// schedule under noise-free evaluation.
pub fn rollout(
    scenario: &Arc<Scenario>,
    env_cfg: EnvConfig,
    lows: &LowPolicies,
    chooser: HighChooser<'_>,
    phi: Requirements,
    budget: usize,
    seed: u64,
) -> Result<Synthesis> {
    let mut quiet = (**scenario).clone();
    quiet.model.traffic.noise = NoiseSigmas::default();
    let quiet = Arc::new(quiet);
    let mut env = TschEnv::new(
        quiet.clone(),
        EnvConfig {
            max_steps: budget.max(1),
            ..env_cfg
        },
    )?;
    let mut state = env.reset(seed, Some(phi))?;
    let mut rng = match chooser {
        HighChooser::Random(s) => ChaCha8Rng::seed_from_u64(derive_seed(s, 0x5eed)),
        HighChooser::Greedy(_) => ChaCha8Rng::seed_from_u64(0),
    };
    let mut best = env.schedule().clone();
    let mut best_cost = quiet.schedule_cost(&best, &phi);
    let mut trajectory = vec![best_cost];
    let mut penalized_immediately = false;
    for step in 0..budget {
        let action = match &chooser {
            HighChooser::Greedy(net) => argmax(&net.forward(&state)?),
            HighChooser::Random(_) => rng.gen_range(0..quiet.high_action_count()),
        };
        let (next, _, terminal, cost) = hierarchical_step(&mut env, lows, action)?;
        match cost {
            Some(c) => {
                trajectory.push(c);
                if c < best_cost {
                    best_cost = c;
                    best = env.schedule().clone();
                }
            }
            None if step == 0 => penalized_immediately = true,
            None => {}
        }
        if terminal {
            break;
        }
        state = next;
    }
    Ok(Synthesis {
        phi,
        schedule: best,
        cost: best_cost,
        trajectory,
        penalized_immediately,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        TrainConfig {
            total_steps: 60,
            learning_starts: 20,
            batch_size: 8,
            buffer_capacity: 64,
            hidden: vec![8],
            target_update_interval: 10,
            ..TrainConfig::desk()
        }
    }

    fn untrained_lows(sc: &Scenario) -> LowPolicies {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = LowPolicies::default();
        for k in LowKey::all(sc.link_count()) {
            p.insert(k, QNetwork::new(&[sc.low_state_len(), 4, sc.low_action_count()], &mut rng).unwrap());
        }
        p
    }

    #[test]
    fn keys_cover_both_ops_per_link() {
        let keys = LowKey::all(46);
        assert_eq!(keys.len(), 92);
        for id in 0..92 {
            let a = HighAction::from_id(id, 46).unwrap();
            assert!(keys.contains(&LowKey { link: a.link, op: a.op }));
        }
    }

    #[test]
    fn missing_low_policy_is_named() {
        let sc = Arc::new(Scenario::ten_node());
        let mut lows = untrained_lows(&sc);
        lows.nets.remove(&LowKey { link: 3, op: LinkOp::Remove });
        let err = HighTrainingEnv::new(sc, EnvConfig::default(), &lows).err().unwrap();
        assert!(matches!(&err, Error::Startup(m) if m.contains("link 3") && m.contains("rm")), "{err}");
    }

    #[test]
    fn zero_budget_returns_reset_schedule() {
        let sc = Arc::new(Scenario::ten_node());
        let lows = untrained_lows(&sc);
        let phi = Requirements::new(0.8, 0.1, 0.1).unwrap();
        let s = rollout(&sc, EnvConfig::default(), &lows, HighChooser::Random(4), phi, 0, 4).unwrap();
        let mut env = TschEnv::new(sc.clone(), EnvConfig::default()).unwrap();
        env.reset(4, Some(phi)).unwrap();
        assert_eq!(&s.schedule, env.schedule());
        assert_eq!(s.trajectory.len(), 1);
    }

    #[test]
    fn rollout_returns_trajectory_minimum() {
        let sc = Arc::new(Scenario::ten_node());
        let lows = untrained_lows(&sc);
        let phi = Requirements::new(0.1, 0.1, 0.8).unwrap();
        for seed in 0..5 {
            let s = rollout(&sc, EnvConfig::default(), &lows, HighChooser::Random(seed), phi, 20, seed).unwrap();
            let min = s.trajectory.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(s.cost, min);
            assert_eq!(sc.schedule_cost(&s.schedule, &phi), s.cost);
            assert!(sc.covers_tree(&s.schedule));
            s.schedule.validate().unwrap();
        }
    }

    #[test]
    fn low_training_is_reproducible() {
        let sc = Arc::new(Scenario::ten_node());
        let key = LowKey { link: 0, op: LinkOp::Add };
        let (a, la) = train_low(sc.clone(), EnvConfig::default(), &tiny(), key).unwrap();
        let (b, lb) = train_low(sc, EnvConfig::default(), &tiny(), key).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn bank_round_trips_through_directory() {
        let sc = Arc::new(Scenario::ten_node());
        let mut cfg = HrlConfig { low: tiny(), high: tiny(), ..HrlConfig::default() };
        cfg.low.total_steps = 5;
        cfg.high.total_steps = 5;
        let (bank, _) = PolicyBank::train(sc.clone(), cfg, 1).unwrap();
        assert_eq!(bank.lows.len(), 92);
        let dir = tempfile::tempdir().unwrap();
        bank.save(dir.path()).unwrap();
        let back = PolicyBank::load(dir.path(), sc.clone()).unwrap();
        assert_eq!(back.high, bank.high);
        assert_eq!(back.lows, bank.lows);
        let phi = Requirements::new(0.5, 0.3, 0.2).unwrap();
        let s1 = bank.synthesize(phi, 10, 0).unwrap();
        let s2 = back.synthesize(phi, 10, 0).unwrap();
        assert_eq!(s1.schedule.to_json(), s2.schedule.to_json());

        std::fs::remove_file(dir.path().join("low_7_rm.json")).unwrap();
        assert!(matches!(PolicyBank::load(dir.path(), sc), Err(Error::Startup(_))));
    }
}
