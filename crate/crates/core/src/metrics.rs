//! Outcome measures: cooperation rates, discounted and undiscounted
//! rewards, cross-seed aggregates, and asymmetry deltas.

use serde::{Deserialize, Serialize};

use crate::engine::RunLog;
use crate::error::{Error, Result};
use crate::games::GameSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountSpec {
    pub delta: f64,
}

impl Default for DiscountSpec {
    fn default() -> DiscountSpec {
        DiscountSpec { delta: 0.99 }
    }
}

impl DiscountSpec {
    pub fn new(delta: f64) -> DiscountSpec {
        assert!(delta > 0.0 && delta < 1.0, "delta must be in (0,1)");
        DiscountSpec { delta }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub coop_rate_overall: f64,
    pub coop_rate_per_player: Vec<f64>,
    pub discounted_reward_per_player: Vec<f64>,
    pub mean_reward_per_player: Vec<f64>,
    /// Mean per-round total payoff divided by the player count.
    pub group_welfare: f64,
}

/// Overall and per-player fractions of strictly cooperative actions.
pub fn cooperation_rate(log: &RunLog) -> Result<(f64, Vec<f64>)> {
    if log.records.is_empty() {
        return Err(Error::EmptyRun);
    }
    let game = GameSpec::new(log.config.game);
    let n = game.n_players;
    let rounds = log.records.len() as f64;
    let mut per_player = vec![0usize; n];
    for r in &log.records {
        for (p, a) in r.actions.iter().enumerate() {
            if game.is_cooperative(*a)? {
                per_player[p] += 1;
            }
        }
    }
    let overall = per_player.iter().sum::<usize>() as f64 / (rounds * n as f64);
    let per_player = per_player.iter().map(|c| *c as f64 / rounds).collect();
    Ok((overall, per_player))
}

/// Normalized discounted mean: sum(delta^(t-1) R_t) / sum(delta^(t-1)).
pub fn discounted_reward(payoffs: &[f64], d: DiscountSpec) -> Result<f64> {
    if payoffs.is_empty() {
        return Err(Error::EmptyRun);
    }
    let mut weight = 1.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for r in payoffs {
        num += weight * r;
        den += weight;
        weight *= d.delta;
    }
    Ok(num / den)
}

/// Arithmetic mean of per-round payoffs.
pub fn mean_reward(payoffs: &[f64]) -> Result<f64> {
    if payoffs.is_empty() {
        return Err(Error::EmptyRun);
    }
    Ok(payoffs.iter().sum::<f64>() / payoffs.len() as f64)
}

/// One player's payoff stream as floats.
pub fn payoff_stream(log: &RunLog, player: usize) -> Result<Vec<f64>> {
    if player >= log.n_players() {
        return Err(Error::InvalidPlayer(player));
    }
    Ok(log.records.iter().map(|r| r.payoffs[player].as_f64()).collect())
}

pub fn summarize(log: &RunLog, d: DiscountSpec) -> Result<RunSummary> {
    let (coop_rate_overall, coop_rate_per_player) = cooperation_rate(log)?;
    let n = log.n_players();
    let mut discounted = Vec::with_capacity(n);
    let mut means = Vec::with_capacity(n);
    for p in 0..n {
        let stream = payoff_stream(log, p)?;
        discounted.push(discounted_reward(&stream, d)?);
        means.push(mean_reward(&stream)?);
    }
    let group_welfare = means.iter().sum::<f64>() / n as f64;
    Ok(RunSummary {
        coop_rate_overall,
        coop_rate_per_player,
        discounted_reward_per_player: discounted,
        mean_reward_per_player: means,
        group_welfare,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    /// True when only one value was aggregated (std 0 by convention).
    pub single_value: bool,
}

/// Mean and sample (n-1) standard deviation across seeds.
pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::EmptyRun);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok(Aggregate {
            mean,
            std: 0.0,
            single_value: true,
        });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Aggregate {
        mean,
        std: var.sqrt(),
        single_value: false,
    })
}

/// Per-round aggregation mode for HL=0 runs, where rounds are
/// effectively independent one-shot games: mean and sample std of the
/// per-round cooperation fraction.
pub fn per_round_cooperation_aggregate(log: &RunLog) -> Result<Aggregate> {
    if log.records.is_empty() {
        return Err(Error::EmptyRun);
    }
    let game = GameSpec::new(log.config.game);
    let mut fractions = Vec::with_capacity(log.records.len());
    for r in &log.records {
        let mut coop = 0usize;
        for a in &r.actions {
            if game.is_cooperative(*a)? {
                coop += 1;
            }
        }
        fractions.push(coop as f64 / game.n_players as f64);
    }
    aggregate(&fractions)
}

/// Mean per-player cooperation of `group_a` minus `group_b`, in
/// percentage points. Groups are 0-based player indices.
pub fn asymmetry_delta(per_player_rates: &[f64], group_a: &[usize], group_b: &[usize]) -> Result<f64> {
    if group_a.is_empty() || group_b.is_empty() || group_a.iter().any(|p| group_b.contains(p)) {
        return Err(Error::InvalidGrouping);
    }
    for p in group_a.iter().chain(group_b) {
        if *p >= per_player_rates.len() {
            return Err(Error::InvalidPlayer(*p));
        }
    }
    let mean = |g: &[usize]| g.iter().map(|p| per_player_rates[*p]).sum::<f64>() / g.len() as f64;
    Ok((mean(group_a) - mean(group_b)) * 100.0)
}
