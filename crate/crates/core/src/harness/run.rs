//! Driving a policy against a loss oracle and accounting for movement regret.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::oracle::LossOracle;
use crate::error::{Error, Result};
use crate::metric::MetricSpace;
use crate::rng;
use crate::smb::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    pub action: usize,
    pub loss: f64,
    pub move_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
}

/// Play `horizon` rounds. The policy sees `loss * loss_scale`; the trace keeps
/// the unscaled loss and the metric distance of every move.
pub fn run_scaled(
    policy: &mut dyn Policy,
    oracle: &LossOracle,
    metric: &MetricSpace,
    horizon: usize,
    seed: u64,
    loss_scale: f64,
) -> Result<RunTrace> {
    if oracle.horizon() != horizon {
        return Err(Error::HorizonMismatch { oracle: oracle.horizon(), run: horizon });
    }
    if policy.num_actions() != metric.len() || oracle.num_actions() != metric.len() {
        return Err(Error::ActionMismatch { tree: policy.num_actions(), metric: metric.len() });
    }
    let mut rng = rng::stream(seed, "policy");
    let mut rounds = Vec::with_capacity(horizon);
    let mut prev: Option<usize> = None;
    for t in 1..=horizon {
        let action = policy.select(t as u64, &mut rng)?;
        if action >= metric.len() {
            return Err(Error::UnknownAction(action));
        }
        let loss = oracle.loss(t, action);
        policy.observe(t as u64, loss * loss_scale, &mut rng)?;
        let move_cost = prev.map_or(0.0, |p| metric.dist(p, action));
        rounds.push(RoundRecord { t: t as u64, action, loss, move_cost });
        prev = Some(action);
    }
    Ok(RunTrace { seed, rounds })
}

pub fn run(
    policy: &mut dyn Policy,
    oracle: &LossOracle,
    metric: &MetricSpace,
    horizon: usize,
    seed: u64,
) -> Result<RunTrace> {
    run_scaled(policy, oracle, metric, horizon, seed, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegretBreakdown {
    pub total_loss: f64,
    pub total_move: f64,
    pub comparator_loss: f64,
    pub movement_regret: f64,
}

impl RegretBreakdown {
    pub fn new(total_loss: f64, total_move: f64, comparator_loss: f64) -> Self {
        RegretBreakdown {
            total_loss,
            total_move,
            comparator_loss,
            movement_regret: total_loss + total_move - comparator_loss,
        }
    }
}

impl RunTrace {
    pub fn total_loss(&self) -> f64 {
        self.rounds.iter().map(|r| r.loss).sum()
    }

    pub fn total_move(&self) -> f64 {
        self.rounds.iter().map(|r| r.move_cost).sum()
    }

    pub fn breakdown(&self, comparator_loss: f64) -> RegretBreakdown {
        RegretBreakdown::new(self.total_loss(), self.total_move(), comparator_loss)
    }

    /// Number of rounds whose action differs from the previous one.
    pub fn switches(&self) -> usize {
        self.rounds.windows(2).filter(|w| w[0].action != w[1].action).count()
    }

    /// Write `t,action,loss,move_cost` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.rounds {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, seed: u64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let rounds = rdr.deserialize().collect::<std::result::Result<Vec<RoundRecord>, _>>()?;
        Ok(RunTrace { seed, rounds })
    }
}

/// Movement regret of `trace` against the best fixed action of `oracle`.
pub fn movement_regret(trace: &RunTrace, oracle: &LossOracle) -> f64 {
    trace.breakdown(oracle.comparator().1).movement_regret
}
