//! Runs one match: round loop, simultaneous-move resolution, horizon
//! control, per-player windows (asymmetric HL and sanitization), and
//! run logging.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    build_prompt, llm_decide, AgentBinding, AgentKind, CompletionBackend, Decision, Observation,
    PromptMode, ScriptedAgent,
};
use crate::error::{Error, Result};
use crate::games::{Action, GameKind, GameSpec, Points};
use crate::memory::{self, SanitizationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Horizon {
    Fixed { rounds: u32 },
    Geometric { p: f64, cap: u32 },
}

impl Horizon {
    pub fn fixed(rounds: u32) -> Horizon {
        assert!(rounds >= 1, "fixed horizon must be at least one round");
        Horizon::Fixed { rounds }
    }

    pub fn geometric(p: f64, cap: u32) -> Horizon {
        assert!(p > 0.0 && p < 1.0, "continuation probability must be in (0,1)");
        assert!(cap >= 1);
        Horizon::Geometric { p, cap }
    }
}

/// Whether the match continues after round `t`.
pub fn continuation(horizon: &Horizon, t: u32, rng: &mut impl Rng) -> bool {
    match *horizon {
        Horizon::Fixed { rounds } => t < rounds,
        Horizon::Geometric { p, cap } => t < cap && rng.gen::<f64>() < p,
    }
}

/// Full recipe for one match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub game: GameKind,
    pub bindings: Vec<AgentBinding>,
    /// Per-player history lengths; asymmetric values allowed.
    pub hl: Vec<u32>,
    pub horizon: Horizon,
    pub prompt_mode: PromptMode,
    /// Per-player sanitization; default all-off.
    pub sanitization: Vec<SanitizationConfig>,
    pub seed: u64,
    /// Continuation probability shown in the prompt (an agent belief;
    /// the engine's stopping rule is `horizon`).
    pub continuation_pct: f64,
}

impl MatchConfig {
    pub fn scripted(game: GameKind, bindings: Vec<AgentBinding>, hl: Vec<u32>, rounds: u32, seed: u64) -> MatchConfig {
        let n = bindings.len();
        MatchConfig {
            game,
            bindings,
            hl,
            horizon: Horizon::fixed(rounds),
            prompt_mode: PromptMode::Reasoning,
            sanitization: vec![SanitizationConfig::off(); n],
            seed,
            continuation_pct: 0.99,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let game = GameSpec::new(self.game);
        if self.bindings.len() != game.n_players {
            return Err(Error::ConfigError(format!(
                "{} needs {} bindings, got {}",
                self.game,
                game.n_players,
                self.bindings.len()
            )));
        }
        if self.hl.len() != game.n_players || self.sanitization.len() != game.n_players {
            return Err(Error::ConfigError(
                "hl and sanitization must have one entry per player".into(),
            ));
        }
        if !(self.continuation_pct > 0.0 && self.continuation_pct <= 1.0) {
            return Err(Error::ConfigError("continuation_pct must be in (0,1]".into()));
        }
        Ok(())
    }

    pub fn has_llm(&self) -> bool {
        self.bindings.iter().any(|b| b.is_llm())
    }
}

/// One completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub actions: Vec<Action>,
    pub payoffs: Vec<Points>,
    pub traces: Option<Vec<Option<String>>>,
    pub retries: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Termination {
    HorizonReached,
    GeometricStop { round: u32 },
    Aborted { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: MatchConfig,
    pub records: Vec<RoundRecord>,
    pub termination: Termination,
}

impl RunLog {
    pub fn n_players(&self) -> usize {
        GameSpec::new(self.config.game).n_players
    }
}

enum Seat {
    Scripted(ScriptedAgent),
    Llm(AgentBinding),
}

fn build_seats(cfg: &MatchConfig) -> Vec<Seat> {
    cfg.bindings
        .iter()
        .map(|b| match &b.kind {
            AgentKind::Scripted { strategy, seed } => Seat::Scripted(ScriptedAgent::new(*strategy, *seed)),
            AgentKind::Llm { .. } => Seat::Llm(b.clone()),
        })
        .collect()
}

fn run_inner(
    cfg: &MatchConfig,
    client: Option<&dyn CompletionBackend>,
    capture_prompts: bool,
) -> Result<(RunLog, Vec<Vec<String>>)> {
    cfg.validate()?;
    if cfg.has_llm() && client.is_none() {
        return Err(Error::ConfigError("llm bindings require a client".into()));
    }
    let game = GameSpec::new(cfg.game);
    let mut seats = build_seats(cfg);
    let mut records: Vec<RoundRecord> = Vec::new();
    let mut prompts: Vec<Vec<String>> = Vec::new();
    let mut horizon_rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut t: u32 = 1;
    let termination = loop {
        // All observations are built from rounds < t before any seat
        // commits an action: no agent sees a current-round choice.
        let mut round_prompts = Vec::new();
        let mut decisions: Vec<Decision> = Vec::with_capacity(game.n_players);
        let mut abort: Option<String> = None;
        for (p, seat) in seats.iter_mut().enumerate() {
            let sanitize_cfg = &cfg.sanitization[p];
            let window = if sanitize_cfg.active_at(t) {
                memory::sanitize(&records, sanitize_cfg, &game, t, cfg.seed.wrapping_add(p as u64))?
            } else {
                memory::window(&records, cfg.hl[p], t)?
            };
            let obs = Observation {
                focal: p,
                round: t,
                game,
                window,
                hl_declared: cfg.hl[p],
                prompt_mode: cfg.prompt_mode,
                continuation_pct: cfg.continuation_pct,
            };
            let history_block = memory::format_history(&obs.window, p, &game)?;
            if capture_prompts {
                round_prompts.push(build_prompt(&obs, &history_block));
            }
            match seat {
                Seat::Scripted(agent) => decisions.push(agent.decide(&obs)),
                Seat::Llm(binding) => {
                    match llm_decide(binding, &obs, &history_block, client.unwrap()) {
                        Ok(d) => decisions.push(d),
                        Err(Error::MatchAborted(reason)) => {
                            abort = Some(reason);
                            break;
                        }
                        Err(Error::TransportError { attempts, message }) => {
                            abort = Some(format!("transport exhausted after {attempts} attempts: {message}"));
                            break;
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        if let Some(reason) = abort {
            break Termination::Aborted { reason };
        }
        if capture_prompts {
            prompts.push(round_prompts);
        }

        let actions: Vec<Action> = decisions.iter().map(|d| d.action).collect();
        let payoffs = game.payoff(&actions)?;
        let traces: Vec<Option<String>> = decisions.iter().map(|d| d.trace.clone()).collect();
        let traces = if traces.iter().any(|t| t.is_some()) {
            Some(traces)
        } else {
            None
        };
        records.push(RoundRecord {
            round: t,
            actions,
            payoffs,
            traces,
            retries: decisions.iter().map(|d| d.retries_used).collect(),
        });

        if !continuation(&cfg.horizon, t, &mut horizon_rng) {
            break match cfg.horizon {
                Horizon::Fixed { .. } => Termination::HorizonReached,
                Horizon::Geometric { cap, .. } => {
                    if t < cap {
                        Termination::GeometricStop { round: t }
                    } else {
                        Termination::HorizonReached
                    }
                }
            };
        }
        t += 1;
    };

    Ok((
        RunLog {
            config: cfg.clone(),
            records,
            termination,
        },
        prompts,
    ))
}

pub fn run_match(cfg: &MatchConfig, client: Option<&dyn CompletionBackend>) -> Result<RunLog> {
    run_inner(cfg, client, false).map(|(log, _)| log)
}

/// As [`run_match`], additionally returning the prompt each player
/// would have received, per round, for golden-file audits.
pub fn run_match_captured(
    cfg: &MatchConfig,
    client: Option<&dyn CompletionBackend>,
) -> Result<(RunLog, Vec<Vec<String>>)> {
    run_inner(cfg, client, true)
}

/// Re-runs a scripted-only log with the same seed and verifies the
/// result is identical.
pub fn replay_verify(log: &RunLog) -> Result<()> {
    if log.config.has_llm() {
        return Err(Error::UnsupportedReplay);
    }
    let fresh = run_match(&log.config, None)?;
    if fresh == *log {
        return Ok(());
    }
    let round = fresh
        .records
        .iter()
        .zip(&log.records)
        .find(|(a, b)| a != b)
        .map(|(a, _)| a.round)
        .unwrap_or_else(|| fresh.records.len().min(log.records.len()) as u32 + 1);
    Err(Error::ReplayDivergence { round })
}
