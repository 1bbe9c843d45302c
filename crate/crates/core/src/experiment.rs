//! Requirement sweeps over the φ simplex and linear-interpolation protocol ranking.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{requirement_grid, Requirements};
use crate::error::{Error, Result};
use crate::hrl::PolicyBank;
use crate::slotsim::{self, Scheduler, SimConfig};

/// Number of points on the simplex grid with spacing `1/n`: C(n + 2, 2).
pub fn grid_size(n: u64) -> u64 {
    (n + 2) * (n + 1) / 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub cost: f64,
    pub cells: usize,
    pub power_mw: f64,
    pub delay_ms: f64,
    pub throughput_pps: f64,
    pub loss: f64,
    pub sim_plr: Option<f64>,
    pub sim_power_mw: Option<f64>,
    pub sim_latency_ms: Option<f64>,
}

/// Synthesizes and evaluates a schedule for every φ on the grid. Rows follow grid
/// order whatever the worker count.
pub fn sweep(bank: &PolicyBank, step: f64, seed: u64, sim: Option<&SimConfig>, jobs: usize) -> Result<Vec<SweepRow>> {
    let grid = requirement_grid(step)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let rows: Vec<Result<SweepRow>> = pool.install(|| {
        grid.par_iter()
            .map(|&phi| sweep_point(bank, phi, seed, sim))
            .collect()
    });
    rows.into_iter().collect()
}

fn sweep_point(bank: &PolicyBank, phi: Requirements, seed: u64, sim: Option<&SimConfig>) -> Result<SweepRow> {
    let s = bank.synthesize(phi, bank.config.budget, seed)?;
    let report = bank.scenario.evaluate(&s.schedule);
    let simulated = match sim {
        Some(cfg) => Some(slotsim::run(&bank.scenario, &Scheduler::Learned(s.schedule.clone()), cfg)?.report),
        None => None,
    };
    Ok(SweepRow {
        alpha: phi.alpha,
        beta: phi.beta,
        gamma: phi.gamma,
        cost: s.cost,
        cells: s.schedule.len(),
        power_mw: report.power,
        delay_ms: report.delay,
        throughput_pps: report.throughput,
        loss: report.loss,
        sim_plr: simulated.as_ref().map(|r| r.plr),
        sim_power_mw: simulated.as_ref().map(|r| r.mean_power_mw),
        sim_latency_ms: simulated.as_ref().map(|r| r.mean_latency_ms),
    })
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
}

/// Maps values linearly onto [0, 100] with the best value at 100. A single value
/// scores 100; if all values are equal they all score 0.
pub fn score(values: &[f64], direction: Direction) -> Vec<f64> {
    if values.len() == 1 {
        return vec![100.0];
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0.0; values.len()];
    }
    values
        .iter()
        .map(|v| {
            let t = (v - min) / (max - min) * 100.0;
            match direction {
                Direction::HigherIsBetter => t,
                Direction::LowerIsBetter => 100.0 - t,
            }
        })
        .collect()
}

/// Weights over (power, delay, throughput, reliability), summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingWeights {
    pub power: f64,
    pub delay: f64,
    pub throughput: f64,
    pub reliability: f64,
}

impl RankingWeights {
    pub fn new(power: f64, delay: f64, throughput: f64, reliability: f64) -> Result<Self> {
        let w = [power, delay, throughput, reliability];
        if w.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Config(format!("ranking weights must lie in [0, 1], got {w:?}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("ranking weights must sum to 1, got {sum}")));
        }
        Ok(Self {
            power,
            delay,
            throughput,
            reliability,
        })
    }

    pub fn balanced() -> Self {
        Self::new(0.25, 0.25, 0.25, 0.25).unwrap()
    }

    pub fn power_first() -> Self {
        Self::new(0.7, 0.1, 0.1, 0.1).unwrap()
    }

    pub fn delay_first() -> Self {
        Self::new(0.1, 0.7, 0.1, 0.1).unwrap()
    }

    pub fn throughput_first() -> Self {
        Self::new(0.1, 0.1, 0.7, 0.1).unwrap()
    }

    pub fn reliability_first() -> Self {
        Self::new(0.1, 0.1, 0.1, 0.7).unwrap()
    }

    /// The five named vectors `w_b, w_p, w_d, w_t, w_r`.
    pub fn presets() -> [(&'static str, Self); 5] {
        [
            ("w_b", Self::balanced()),
            ("w_p", Self::power_first()),
            ("w_d", Self::delay_first()),
            ("w_t", Self::throughput_first()),
            ("w_r", Self::reliability_first()),
        ]
    }

    /// Accepts a preset name or four comma-separated weights.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if let Some((_, w)) = Self::presets().into_iter().find(|(n, _)| *n == t) {
            return Ok(w);
        }
        let parts: Vec<f64> = t
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad weights {text:?}: {e}")))?;
        match parts.as_slice() {
            [p, d, th, r] => Self::new(*p, *d, *th, *r),
            _ => Err(Error::Config(format!("expected four weights or a preset name, got {text:?}"))),
        }
    }

    fn as_array(&self) -> [f64; 4] {
        [self.power, self.delay, self.throughput, self.reliability]
    }
}

/// Measured metrics of one protocol configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolMetrics {
    pub protocol: String,
    pub power_mw: f64,
    pub delay_ms: f64,
    pub throughput_pps: f64,
    pub plr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub rows: Vec<ProtocolMetrics>,
}

impl ScoreTable {
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for rec in rdr.deserialize() {
            let row: ProtocolMetrics = rec?;
            for v in [row.power_mw, row.delay_ms, row.throughput_pps, row.plr] {
                if !v.is_finite() {
                    return Err(Error::Config(format!("non-finite metric for {}", row.protocol)));
                }
            }
            rows.push(row);
        }
        let table = Self { rows };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Config("score table has no protocols".into()));
        }
        let mut names: Vec<&str> = self.rows.iter().map(|r| r.protocol.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate protocol name in score table".into()));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-metric scores in (power, delay, throughput, reliability) order.
    pub fn scores(&self) -> Vec<[f64; 4]> {
        let col = |f: fn(&ProtocolMetrics) -> f64| self.rows.iter().map(f).collect::<Vec<_>>();
        let p = score(&col(|r| r.power_mw), Direction::LowerIsBetter);
        let d = score(&col(|r| r.delay_ms), Direction::LowerIsBetter);
        let t = score(&col(|r| r.throughput_pps), Direction::HigherIsBetter);
        let l = score(&col(|r| r.plr), Direction::LowerIsBetter);
        (0..self.rows.len()).map(|i| [p[i], d[i], t[i], l[i]]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranked {
    pub protocol: String,
    pub score: f64,
    pub power_score: f64,
    pub delay_score: f64,
    pub throughput_score: f64,
    pub reliability_score: f64,
}

/// Protocols by descending weighted score; ties go to the lexicographically smaller name.
pub fn rank(table: &ScoreTable, weights: &RankingWeights) -> Result<Vec<Ranked>> {
    table.validate()?;
    let w = weights.as_array();
    let mut out: Vec<Ranked> = table
        .rows
        .iter()
        .zip(table.scores())
        .map(|(r, s)| Ranked {
            protocol: r.protocol.clone(),
            score: s.iter().zip(&w).map(|(a, b)| a * b).sum(),
            power_score: s[0],
            delay_score: s[1],
            throughput_score: s[2],
            reliability_score: s[3],
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.protocol.cmp(&b.protocol)));
    Ok(out)
}

pub fn write_ranking_csv<W: Write>(rows: &[Ranked], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn proto(name: &str, p: f64, d: f64, t: f64, l: f64) -> ProtocolMetrics {
        ProtocolMetrics {
            protocol: name.into(),
            power_mw: p,
            delay_ms: d,
            throughput_pps: t,
            plr: l,
        }
    }

    #[test]
    fn hand_scores() {
        assert_eq!(score(&[10.0, 20.0, 30.0], Direction::LowerIsBetter), vec![100.0, 50.0, 0.0]);
        assert_eq!(score(&[10.0, 20.0, 30.0], Direction::HigherIsBetter), vec![0.0, 50.0, 100.0]);
        assert_eq!(score(&[7.0], Direction::LowerIsBetter), vec![100.0]);
        assert_eq!(score(&[3.0, 3.0], Direction::LowerIsBetter), vec![0.0, 0.0]);
    }

    #[test]
    fn grid_counts() {
        for (step, n) in [(0.1, 10), (0.2, 5), (0.5, 2)] {
            assert_eq!(requirement_grid(step).unwrap().len() as u64, grid_size(n));
        }
        assert_eq!(grid_size(10), 66);
        assert_eq!(grid_size(2), 6);
    }

    #[test]
    fn weights_validate_and_parse() {
        assert!(RankingWeights::new(0.5, 0.5, 0.5, 0.0).is_err());
        assert_eq!(RankingWeights::parse("w_p").unwrap(), RankingWeights::power_first());
        assert_eq!(RankingWeights::parse("0.25,0.25,0.25,0.25").unwrap(), RankingWeights::balanced());
        assert!(RankingWeights::parse("1,0,0").is_err());
    }

    #[test]
    fn balanced_weights_average_scores() {
        let t = ScoreTable {
            rows: vec![proto("a", 1.0, 10.0, 5.0, 0.1), proto("b", 2.0, 5.0, 4.0, 0.2), proto("c", 3.0, 20.0, 6.0, 0.0)],
        };
        for (r, s) in rank(&t, &RankingWeights::balanced()).unwrap().iter().map(|r| {
            let s = (r.power_score + r.delay_score + r.throughput_score + r.reliability_score) / 4.0;
            (r.score, s)
        }) {
            assert!((r - s).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_is_order_independent_with_name_ties() {
        let rows = vec![proto("b", 1.0, 1.0, 1.0, 0.0), proto("a", 1.0, 1.0, 1.0, 0.0), proto("c", 2.0, 2.0, 0.5, 0.5)];
        let mut rev = rows.clone();
        rev.reverse();
        let r1 = rank(&ScoreTable { rows }, &RankingWeights::balanced()).unwrap();
        let r2 = rank(&ScoreTable { rows: rev }, &RankingWeights::balanced()).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1[0].protocol, "a");
        assert_eq!(r1[1].protocol, "b");
    }

    #[test]
    fn csv_round_trip_and_rejections() {
        let t = ScoreTable { rows: vec![proto("x", 1.0, 2.0, 3.0, 0.1), proto("y", 1.5, 2.5, 3.5, 0.2)] };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(ScoreTable::from_csv(buf.as_slice()).unwrap(), t);
        assert!(ScoreTable::from_csv("protocol,power_mw,delay_ms,throughput_pps,plr\n".as_bytes()).is_err());
        assert!(ScoreTable::from_csv("protocol,power_mw,delay_ms,throughput_pps,plr\na,1,1,1,0\na,2,2,2,0\n".as_bytes()).is_err());
        assert!(ScoreTable::from_csv("protocol,power_mw,delay_ms,throughput_pps,plr\na,NaN,1,1,0\n".as_bytes()).is_err());
        assert!(ScoreTable::from_csv("name,x\nfoo,1\n".as_bytes()).is_err());
    }
}
