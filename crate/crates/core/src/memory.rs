//! Bounded history windows, focal-perspective line formatting, and
//! sanitized (IDEAL/POLAR) window construction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::RoundRecord;
use crate::error::{Error, Result};
use crate::games::{Action, GameSpec, Points};

/// One visible history row: the joint actions of a past round plus the
/// recomputed per-player payoffs. `synthetic` marks sanitization output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEntry {
    pub round: u32,
    pub actions: Vec<Action>,
    pub payoffs: Vec<Points>,
    pub synthetic: bool,
}

/// The bounded window an agent sees when deciding, oldest round first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HistoryWindow {
    pub entries: Vec<HistoryEntry>,
}

impl HistoryWindow {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SanitizeMode {
    Off,
    Ideal,
    Polar,
}

/// Sanitization settings for one player. `x_real` is the number of
/// recent real rounds kept; the older `window - x_real` slots are
/// replaced with synthetic records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizationConfig {
    pub mode: SanitizeMode,
    pub x_real: u32,
    pub window: u32,
}

impl SanitizationConfig {
    pub fn off() -> SanitizationConfig {
        SanitizationConfig {
            mode: SanitizeMode::Off,
            x_real: 0,
            window: 0,
        }
    }

    pub fn new(mode: SanitizeMode, x_real: u32, window: u32) -> SanitizationConfig {
        assert!(x_real <= window, "x_real must not exceed the window");
        SanitizationConfig {
            mode,
            x_real,
            window,
        }
    }

    /// Sanitization only activates once a full window of real rounds
    /// exists; earlier rounds fall back to the raw window so round
    /// labels stay positive.
    pub fn active_at(&self, t: u32) -> bool {
        self.mode != SanitizeMode::Off && t > self.window
    }
}

fn entry_from_record(r: &RoundRecord) -> HistoryEntry {
    HistoryEntry {
        round: r.round,
        actions: r.actions.clone(),
        payoffs: r.payoffs.clone(),
        synthetic: false,
    }
}

/// Last `min(hl, t-1)` rounds before round `t`, oldest first.
pub fn window(full_history: &[RoundRecord], hl: u32, t: u32) -> Result<HistoryWindow> {
    let need = (t - 1) as usize;
    if full_history.len() < need {
        return Err(Error::InconsistentHistory {
            t,
            need,
            have: full_history.len(),
        });
    }
    let take = (hl as usize).min(need);
    let entries = full_history[need - take..need]
        .iter()
        .map(entry_from_record)
        .collect();
    Ok(HistoryWindow { entries })
}

/// Renders the window from the focal player's perspective, one line per
/// round: `R{n}: You=A0, P2=A1 -> 10.0` (non-focal players keep their
/// true 1-based indices, ascending).
pub fn format_history(w: &HistoryWindow, focal: usize, game: &GameSpec) -> Result<String> {
    if focal >= game.n_players {
        return Err(Error::InvalidPlayer(focal));
    }
    let mut lines = Vec::with_capacity(w.entries.len());
    for e in &w.entries {
        let mut parts = vec![format!("You={}", e.actions[focal])];
        for (j, a) in e.actions.iter().enumerate() {
            if j != focal {
                parts.push(format!("P{}={}", j + 1, a));
            }
        }
        lines.push(format!(
            "R{}: {} \u{2192} {}",
            e.round,
            parts.join(", "),
            e.payoffs[focal]
        ));
    }
    Ok(lines.join("\n"))
}

/// Parses one formatted line back into (round, actions, focal payoff).
/// Inverse of [`format_history`] for a single entry; used by round-trip
/// tests and log audits.
pub fn parse_history_line(line: &str, focal: usize, n_players: usize) -> Option<(u32, Vec<Action>, Points)> {
    let rest = line.strip_prefix('R')?;
    let (round_s, rest) = rest.split_once(": ")?;
    let round: u32 = round_s.parse().ok()?;
    let (actions_s, payoff_s) = rest.split_once(" \u{2192} ")?;
    let mut actions = vec![None; n_players];
    for part in actions_s.split(", ") {
        let (who, act) = part.split_once('=')?;
        let idx = if who == "You" {
            focal
        } else {
            who.strip_prefix('P')?.parse::<usize>().ok()?.checked_sub(1)?
        };
        *actions.get_mut(idx)? = Action::from_label(act);
    }
    let actions: Option<Vec<Action>> = actions.into_iter().collect();
    let (whole, tenth) = payoff_s.split_once('.')?;
    let sign = if whole.starts_with('-') { -1 } else { 1 };
    let tenths =
        whole.trim_start_matches('-').parse::<i64>().ok()? * 10 + tenth.parse::<i64>().ok()?;
    Some((round, actions?, Points::from_tenths(sign * tenths)))
}

/// Builds a fixed-size sanitized window for round `t`: the newest
/// `x_real` slots hold the real records, the rest are synthetic rounds
/// whose payoffs are recomputed through the game's payoff function.
pub fn sanitize(
    full_history: &[RoundRecord],
    cfg: &SanitizationConfig,
    game: &GameSpec,
    t: u32,
    rng_seed: u64,
) -> Result<HistoryWindow> {
    assert!(cfg.mode != SanitizeMode::Off, "sanitize requires an active mode");
    assert!(cfg.active_at(t), "sanitize requires t > window");
    let need = (t - 1) as usize;
    if full_history.len() < need {
        return Err(Error::InconsistentHistory {
            t,
            need,
            have: full_history.len(),
        });
    }
    let real_rounds = &full_history[..need];
    if cfg.mode == SanitizeMode::Polar && real_rounds.is_empty() {
        return Err(Error::NoEmpiricalDistribution);
    }

    let window = cfg.window as usize;
    let n_synth = window - cfg.x_real as usize;
    // Per-round stream so each synthetic slot draws independently but
    // deterministically from the match seed.
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));

    let mut entries = Vec::with_capacity(window);
    for slot in 0..window {
        let round = t - cfg.window + slot as u32;
        if slot < n_synth {
            let actions = match cfg.mode {
                SanitizeMode::Ideal => vec![game.cooperative_action(); game.n_players],
                SanitizeMode::Polar => {
                    let pick = &real_rounds[rng.gen_range(0..real_rounds.len())];
                    pick.actions.iter().map(|a| polar_recode(*a)).collect::<Result<Vec<_>>>()?
                }
                SanitizeMode::Off => unreachable!(),
            };
            let payoffs = game.payoff(&actions)?;
            entries.push(HistoryEntry {
                round,
                actions,
                payoffs,
                synthetic: true,
            });
        } else {
            let record = &real_rounds[(round - 1) as usize];
            entries.push(entry_from_record(record));
        }
    }
    Ok(HistoryWindow { entries })
}

/// Polarizes a TD action to the extremes: A0/A1 become A0, A2/A3
/// become A3. Idempotent.
pub fn polar_recode(a: Action) -> Result<Action> {
    match a {
        Action::A0 | Action::A1 => Ok(Action::A0),
        Action::A2 | Action::A3 => Ok(Action::A3),
    }
}
