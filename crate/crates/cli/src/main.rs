use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hrl_tsch::config::{ExperimentConfig, RunManifest};
use hrl_tsch::dqn::TrainLog;
use hrl_tsch::env::{Requirements, Scenario};
use hrl_tsch::experiment::{self, RankingWeights, ScoreTable};
use hrl_tsch::hrl::{self, LowKey, PolicyBank};
use hrl_tsch::schedule::TschSchedule;
use hrl_tsch::slotsim::{self, Scheduler};

#[derive(Parser)]
#[command(name = "hrl-tsch", version, about = "Hierarchical RL link scheduling for TSCH networks")]
struct Cli {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for training and sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every lower-level (per-link) policy into a bank directory.
    TrainLow {
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Train the higher-level policy on top of trained lower-level policies.
    TrainHigh {
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Produce a schedule for one requirement tuple.
    Synthesize {
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Weights as alpha,beta,gamma.
        #[arg(long)]
        phi: String,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Run the slot-level simulator.
    Simulate {
        #[arg(long, value_enum)]
        scheduler: SchedulerKind,
        /// Schedule file for `--scheduler file`.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        slotframe: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
        /// Also write a per-packet CSV trace.
        #[arg(long)]
        trace: bool,
    },
    /// Synthesize and evaluate a schedule for every point of the requirement grid.
    Sweep {
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        /// Also simulate each synthesized schedule.
        #[arg(long)]
        simulate: bool,
    },
    /// Rank protocols from a metrics table.
    Rank {
        /// CSV with columns protocol,power_mw,delay_ms,throughput_pps,plr.
        #[arg(long)]
        table: PathBuf,
        /// Preset name (w_b, w_p, w_d, w_t, w_r), four weights, or `all`.
        #[arg(long, default_value = "all")]
        weights: Vec<String>,
    },
    /// Compare the analytic model with a simulation of the same schedule.
    Compare {
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long)]
        duration: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedulerKind {
    File,
    Orchestra,
    SharedCell,
}

struct Ctx {
    cfg: ExperimentConfig,
    scenario: Arc<Scenario>,
    seed: u64,
    out_dir: PathBuf,
    jobs: usize,
    manifest: RunManifest,
}

impl Ctx {
    fn bank_dir(&self, bank: &Option<PathBuf>) -> PathBuf {
        bank.clone().unwrap_or_else(|| self.out_dir.join("bank"))
    }

    fn output(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out_dir.join(name);
        self.manifest.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        serde_json::to_writer_pretty(self.output(name)?, value)?;
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        let path = self.out_dir.join(format!("{}.manifest.json", self.manifest.command));
        self.manifest.save(&path)?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::TrainLow { .. } => "train-low",
        Command::TrainHigh { .. } => "train-high",
        Command::Synthesize { .. } => "synthesize",
        Command::Simulate { .. } => "simulate",
        Command::Sweep { .. } => "sweep",
        Command::Rank { .. } => "rank",
        Command::Compare { .. } => "compare",
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    let seed = cli.seed.unwrap_or(cfg.sim.seed);
    let scenario = Arc::new(cfg.scenario()?);
    std::fs::create_dir_all(&cli.out_dir)?;
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let name = command_name(&cli.command);
    let manifest = RunManifest::new(name, std::env::args().skip(1).collect(), &cfg, &scenario, seed);
    let mut ctx = Ctx {
        cfg,
        scenario,
        seed,
        out_dir: cli.out_dir,
        jobs,
        manifest,
    };
    match cli.command {
        Command::TrainLow { bank } => train_low(&mut ctx, bank)?,
        Command::TrainHigh { bank } => train_high(&mut ctx, bank)?,
        Command::Synthesize { bank, phi, budget } => synthesize(&mut ctx, bank, &phi, budget)?,
        Command::Simulate {
            scheduler,
            schedule,
            slotframe,
            duration,
            trace,
        } => simulate(&mut ctx, scheduler, schedule, slotframe, duration, trace)?,
        Command::Sweep { bank, step, simulate } => sweep(&mut ctx, bank, step, simulate)?,
        Command::Rank { table, weights } => rank(&mut ctx, &table, &weights)?,
        Command::Compare { schedule, duration } => compare(&mut ctx, &schedule, duration)?,
    }
    ctx.finish()
}

#[derive(Serialize)]
struct CurveRow<'a> {
    policy: &'a str,
    link: Option<usize>,
    op: &'a str,
    episode: usize,
    reward: f64,
    length: usize,
}

fn write_curve(w: &mut csv::Writer<BufWriter<File>>, policy: &str, key: Option<LowKey>, log: &TrainLog) -> Result<()> {
    for (i, (r, l)) in log.episode_rewards.iter().zip(&log.episode_lengths).enumerate() {
        w.serialize(CurveRow {
            policy,
            link: key.map(|k| k.link),
            op: key.map_or("", |k| k.op.tag()),
            episode: i,
            reward: *r,
            length: *l,
        })?;
    }
    Ok(())
}

fn train_low(ctx: &mut Ctx, bank: Option<PathBuf>) -> Result<()> {
    let dir = ctx.bank_dir(&bank);
    let hrl_cfg = ctx.cfg.hrl.clone();
    let trained = hrl::train_low_all(ctx.scenario.clone(), hrl_cfg.env, &hrl_cfg.low, ctx.jobs)?;
    let mut curves = csv::Writer::from_writer(ctx.output("low_curves.csv")?);
    let mut improved = 0;
    for (k, (_, log)) in &trained {
        write_curve(&mut curves, "low", Some(*k), log)?;
        if let Some((first, last)) = log.decile_means() {
            if last > first {
                improved += 1;
            }
        }
    }
    curves.flush()?;
    let lows = trained.into_iter().map(|(k, (ck, _))| (k, ck)).collect();
    hrl::save_lows(&dir, &ctx.scenario, &hrl_cfg, &lows)?;
    println!(
        "trained {} lower-level policies into {} ({improved} improved between first and last decile)",
        lows.len(),
        dir.display()
    );
    Ok(())
}

fn train_high(ctx: &mut Ctx, bank: Option<PathBuf>) -> Result<()> {
    let dir = ctx.bank_dir(&bank);
    let (manifest, lows) = hrl::load_lows(&dir, &ctx.scenario)?;
    let mut hrl_cfg = manifest.config;
    hrl_cfg.high = ctx.cfg.hrl.high.clone();
    let (bank, log) = PolicyBank::train_on(ctx.scenario.clone(), hrl_cfg, lows)?;
    bank.save(&dir)?;
    let mut curves = csv::Writer::from_writer(ctx.output("high_curve.csv")?);
    write_curve(&mut curves, "high", None, &log)?;
    curves.flush()?;
    println!("trained the higher-level policy into {}", dir.display());
    Ok(())
}

fn synthesize(ctx: &mut Ctx, bank: Option<PathBuf>, phi: &str, budget: Option<usize>) -> Result<()> {
    let phi = Requirements::parse(phi)?;
    let bank = PolicyBank::load(ctx.bank_dir(&bank), ctx.scenario.clone())?;
    let s = bank.synthesize(phi, budget.unwrap_or(bank.config.budget), ctx.seed)?;
    if s.penalized_immediately {
        log::warn!("the first higher-level action was penalized; returning the reset schedule");
    }
    s.schedule.save(ctx.out_dir.join("schedule.json"))?;
    ctx.manifest.outputs.push("schedule.json".into());
    let report = ctx.scenario.evaluate(&s.schedule);
    let mut w = csv::Writer::from_writer(ctx.output("node_metrics.csv")?);
    w.write_record(["node", "throughput_pps", "power_mw", "tx_mw", "rx_mw", "delay_ms", "queue_ms"])?;
    for n in &report.nodes {
        w.write_record([
            n.id.to_string(),
            n.throughput.to_string(),
            n.power.total().to_string(),
            n.power.tx.to_string(),
            n.power.rx().to_string(),
            n.delay.total().to_string(),
            n.delay.queue_ms.to_string(),
        ])?;
    }
    w.flush()?;
    println!(
        "{phi}: {} cells, cost {:.4}, P {:.4} mW, D {:.1} ms, T {:.3} pkt/s",
        s.schedule.len(),
        s.cost,
        report.power,
        report.delay,
        report.throughput
    );
    Ok(())
}

fn simulate(
    ctx: &mut Ctx,
    kind: SchedulerKind,
    schedule: Option<PathBuf>,
    slotframe: Option<usize>,
    duration: Option<f64>,
    trace: bool,
) -> Result<()> {
    let scheduler = match kind {
        SchedulerKind::File => {
            let Some(path) = schedule else {
                bail!("--scheduler file needs --schedule <path>");
            };
            Scheduler::Learned(TschSchedule::load(&path)?)
        }
        SchedulerKind::Orchestra => Scheduler::OrchestraLike {
            slotframe_size: slotframe.unwrap_or(11),
        },
        SchedulerKind::SharedCell => Scheduler::SharedCell {
            slotframe_size: slotframe.unwrap_or(3),
        },
    };
    let mut sim_cfg = ctx.cfg.sim.clone();
    sim_cfg.seed = ctx.seed;
    if let Some(d) = duration {
        sim_cfg.duration_s = d;
    }
    let run = slotsim::run(&ctx.scenario, &scheduler, &sim_cfg)?;
    ctx.write_json("sim_report.json", &run.report)?;
    let mut w = csv::Writer::from_writer(ctx.output("sim_nodes.csv")?);
    w.write_record([
        "node", "generated", "delivered", "plr", "mean_latency_ms", "max_latency_ms", "jitter_ms", "tx_mj", "rx_mj",
        "listen_mj", "sleep_mj", "mean_power_mw",
    ])?;
    for n in &run.report.nodes {
        w.write_record([
            n.id.to_string(),
            n.generated.to_string(),
            n.delivered.to_string(),
            n.plr.to_string(),
            n.mean_latency_ms.to_string(),
            n.max_latency_ms.to_string(),
            n.jitter_ms.to_string(),
            n.energy.tx_mj.to_string(),
            n.energy.rx_mj.to_string(),
            n.energy.listen_mj.to_string(),
            n.energy.sleep_mj.to_string(),
            n.mean_power_mw.to_string(),
        ])?;
    }
    w.flush()?;
    if trace {
        run.write_trace(ctx.output("trace.csv")?)?;
    }
    let r = &run.report;
    println!(
        "{}: PLR {:.4}, latency {:.1} ms, power {:.4} mW, collisions {}",
        r.scheduler, r.plr, r.mean_latency_ms, r.mean_power_mw, r.collisions
    );
    Ok(())
}

fn sweep(ctx: &mut Ctx, bank: Option<PathBuf>, step: f64, simulate: bool) -> Result<()> {
    let bank = PolicyBank::load(ctx.bank_dir(&bank), ctx.scenario.clone())?;
    let mut sim_cfg = ctx.cfg.sim.clone();
    sim_cfg.seed = ctx.seed;
    let rows = experiment::sweep(&bank, step, ctx.seed, simulate.then_some(&sim_cfg), ctx.jobs)?;
    experiment::write_sweep_csv(&rows, ctx.output("sweep.csv")?)?;
    println!("sweep: {} requirement tuples", rows.len());
    Ok(())
}

fn rank(ctx: &mut Ctx, table: &Path, weights: &[String]) -> Result<()> {
    let table = ScoreTable::from_csv(File::open(table).with_context(|| format!("opening {}", table.display()))?)?;
    let mut sets: Vec<(String, RankingWeights)> = Vec::new();
    for w in weights {
        if w == "all" {
            sets.extend(RankingWeights::presets().map(|(n, w)| (n.to_string(), w)));
        } else {
            sets.push((w.clone(), RankingWeights::parse(w)?));
        }
    }
    let mut out = csv::Writer::from_writer(ctx.output("ranking.csv")?);
    out.write_record(["weights", "rank", "protocol", "score", "power_score", "delay_score", "throughput_score", "reliability_score"])?;
    for (label, w) in &sets {
        for (i, r) in experiment::rank(&table, w)?.iter().enumerate() {
            out.write_record([
                label.clone(),
                (i + 1).to_string(),
                r.protocol.clone(),
                r.score.to_string(),
                r.power_score.to_string(),
                r.delay_score.to_string(),
                r.throughput_score.to_string(),
                r.reliability_score.to_string(),
            ])?;
            if i == 0 {
                println!("{label}: {} ({:.2})", r.protocol, r.score);
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn compare(ctx: &mut Ctx, schedule: &Path, duration: Option<f64>) -> Result<()> {
    let s = TschSchedule::load(schedule)?;
    let analytic = ctx.scenario.evaluate(&s);
    let mut sim_cfg = ctx.cfg.sim.clone();
    sim_cfg.seed = ctx.seed;
    if let Some(d) = duration {
        sim_cfg.duration_s = d;
    }
    let run = slotsim::run(&ctx.scenario, &Scheduler::Learned(s), &sim_cfg)?;
    let rows = slotsim::compare(&analytic, &run.report);
    slotsim::write_deviations(&rows, ctx.output("deviations.csv")?)?;
    for r in rows.iter().filter(|r| r.node.is_none()) {
        println!(
            "{:>15}: analytic {:.4}  simulated {:.4}",
            r.metric, r.analytic, r.simulated
        );
    }
    Ok(())
}
