//! Agent abstraction: scripted game-theoretic strategies for
//! deterministic verification, plus the LLM agent's prompt construction
//! and response parsing.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{Action, GameSpec};
use crate::memory::HistoryWindow;

const REASONING_TEMPLATE: &str = include_str!("../assets/prompts/reasoning.txt");
const NO_REASONING_TEMPLATE: &str = include_str!("../assets/prompts/no_reasoning.txt");
const RULES_PD: &str = include_str!("../assets/game_rules/pd.txt");
const RULES_TD: &str = include_str!("../assets/game_rules/td.txt");
const RULES_PG: &str = include_str!("../assets/game_rules/pg.txt");
const RULES_TG: &str = include_str!("../assets/game_rules/tg.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Reasoning,
    NoReasoning,
}

impl PromptMode {
    pub fn name(&self) -> &'static str {
        match self {
            PromptMode::Reasoning => "reasoning",
            PromptMode::NoReasoning => "no_reasoning",
        }
    }
}

/// Everything an agent is allowed to see when deciding in one round.
#[derive(Debug, Clone)]
pub struct Observation {
    /// 0-based focal player index.
    pub focal: usize,
    /// 1-based current round index.
    pub round: u32,
    pub game: GameSpec,
    pub window: HistoryWindow,
    /// The HL figure shown in the prompt.
    pub hl_declared: u32,
    pub prompt_mode: PromptMode,
    /// Continuation probability communicated to agents, in (0, 1].
    pub continuation_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum Strategy {
    AllCoop,
    AllDefect,
    TitForTat,
    GrimTrigger,
    RandomCoop { p: f64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::AllCoop => "all_coop",
            Strategy::AllDefect => "all_defect",
            Strategy::TitForTat => "tit_for_tat",
            Strategy::GrimTrigger => "grim_trigger",
            Strategy::RandomCoop { .. } => "random_coop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    Abort,
    DefectDefault,
}

/// How one player's seat is filled: a deterministic scripted strategy
/// or an LLM behind the chat-completions client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AgentKind {
    Scripted { strategy: Strategy, seed: u64 },
    Llm { model_name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBinding {
    #[serde(flatten)]
    pub kind: AgentKind,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default = "default_fallback")]
    pub fallback: Fallback,
}

fn default_retry_limit() -> u32 {
    3
}

fn default_fallback() -> Fallback {
    Fallback::Abort
}

impl AgentBinding {
    pub fn scripted(strategy: Strategy, seed: u64) -> AgentBinding {
        AgentBinding {
            kind: AgentKind::Scripted { strategy, seed },
            retry_limit: default_retry_limit(),
            fallback: default_fallback(),
        }
    }

    pub fn llm(model_name: &str) -> AgentBinding {
        AgentBinding {
            kind: AgentKind::Llm {
                model_name: model_name.to_string(),
            },
            retry_limit: default_retry_limit(),
            fallback: default_fallback(),
        }
    }

    pub fn is_llm(&self) -> bool {
        matches!(self.kind, AgentKind::Llm { .. })
    }

    pub fn display_name(&self) -> String {
        match &self.kind {
            AgentKind::Scripted { strategy, .. } => strategy.name().to_string(),
            AgentKind::Llm { model_name } => model_name.clone(),
        }
    }
}

/// One agent's resolved choice for a round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub action: Action,
    pub trace: Option<String>,
    pub raw_response: Option<String>,
    pub retries_used: u32,
    /// Set when the action came from the defect-default fallback rather
    /// than a parsed response.
    pub fallback_applied: bool,
}

impl Decision {
    fn scripted(action: Action) -> Decision {
        Decision {
            action,
            trace: None,
            raw_response: None,
            retries_used: 0,
            fallback_applied: false,
        }
    }
}

/// Per-match state of a scripted agent. One instance is owned by one
/// match seat.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    pub strategy: Strategy,
    triggered: bool,
    rng: ChaCha8Rng,
}

impl ScriptedAgent {
    pub fn new(strategy: Strategy, seed: u64) -> ScriptedAgent {
        ScriptedAgent {
            strategy,
            triggered: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn decide(&mut self, obs: &Observation) -> Decision {
        let game = &obs.game;
        let coop = game.cooperative_action();
        let defect = game.defect_action();
        let action = match self.strategy {
            Strategy::AllCoop => coop,
            Strategy::AllDefect => defect,
            Strategy::TitForTat => match obs.window.entries.last() {
                None => coop,
                Some(last) => {
                    let others: Vec<Action> = last
                        .actions
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != obs.focal)
                        .map(|(_, a)| *a)
                        .collect();
                    match game.kind {
                        crate::games::GameKind::PG => {
                            if others.iter().all(|a| *a == coop) {
                                coop
                            } else {
                                defect
                            }
                        }
                        crate::games::GameKind::TD => {
                            // Repeat the minimum of the opponents' claims
                            // (claim order matches label order).
                            *others.iter().min().unwrap()
                        }
                        _ => others[0],
                    }
                }
            },
            Strategy::GrimTrigger => {
                if !self.triggered {
                    let betrayed = obs.window.entries.iter().any(|e| {
                        e.actions
                            .iter()
                            .enumerate()
                            .any(|(j, a)| j != obs.focal && *a != coop)
                    });
                    if betrayed {
                        self.triggered = true;
                    }
                }
                if self.triggered {
                    defect
                } else {
                    coop
                }
            }
            Strategy::RandomCoop { p } => {
                if self.rng.gen::<f64>() < p {
                    coop
                } else {
                    defect
                }
            }
        };
        Decision::scripted(action)
    }
}

fn game_rules(game: &GameSpec) -> &'static str {
    use crate::games::GameKind::*;
    match game.kind {
        PD => RULES_PD,
        TD => RULES_TD,
        PG => RULES_PG,
        TG => RULES_TG,
    }
}

fn decision_format(game: &GameSpec) -> &'static str {
    match game.kind {
        crate::games::GameKind::TD => "[A0, A1, A2, or A3]",
        _ => "[A0 or A1]",
    }
}

fn format_pct(p: f64) -> String {
    let scaled = p * 100.0;
    if (scaled - scaled.round()).abs() < 1e-9 {
        format!("{}", scaled.round() as i64)
    } else {
        format!("{scaled:.1}")
    }
}

/// Fills the prompt template for this observation. Pure: identical
/// inputs yield byte-identical prompts.
pub fn build_prompt(obs: &Observation, history_block: &str) -> String {
    let template = match obs.prompt_mode {
        PromptMode::Reasoning => REASONING_TEMPLATE,
        PromptMode::NoReasoning => NO_REASONING_TEMPLATE,
    };
    let others: Vec<String> = (0..obs.game.n_players)
        .filter(|j| *j != obs.focal)
        .map(|j| (j + 1).to_string())
        .collect();
    template
        .replace("{player_id}", &(obs.focal + 1).to_string())
        .replace("{other_id}", &others.join(" and Player "))
        .replace("{round_num}", &obs.round.to_string())
        .replace("{history_length}", &obs.hl_declared.to_string())
        .replace("{game_rules}", game_rules(&obs.game).trim_end())
        .replace("{continuation_pct}", &format_pct(obs.continuation_pct))
        .replace("{history_block}", history_block)
        .replace("{decision_format}", decision_format(&obs.game))
        .trim_end()
        .to_string()
}

/// Extracts the decided action from a model response: lines are scanned
/// last to first, and the first line whose trailing token (brackets and
/// punctuation stripped) is a valid label for the game wins.
pub fn parse_action(response: &str, game: &GameSpec) -> Result<Action> {
    for line in response.lines().rev() {
        let Some(token) = line.split_whitespace().last() else {
            continue;
        };
        let cleaned = token.trim_matches(|c: char| !c.is_ascii_alphanumeric());
        if let Some(action) = Action::from_label(cleaned) {
            if game.valid_actions().contains(&action) {
                return Ok(action);
            }
        }
    }
    Err(Error::ParseFailure)
}

/// Anything that can answer a completion request. Implemented by the
/// HTTP client and by test stubs.
pub trait CompletionBackend {
    fn complete(&self, model: &str, prompt: &str, temperature: f64, max_tokens: u32)
        -> Result<String>;
}

pub const LLM_TEMPERATURE: f64 = 0.7;
pub const LLM_MAX_TOKENS: u32 = 2000;

/// Queries the LLM for one decision, retrying the identical prompt on
/// unparseable output, then applying the binding's fallback policy.
pub fn llm_decide(
    binding: &AgentBinding,
    obs: &Observation,
    history_block: &str,
    client: &dyn CompletionBackend,
) -> Result<Decision> {
    let AgentKind::Llm { model_name } = &binding.kind else {
        return Err(Error::ConfigError("llm_decide requires an llm binding".into()));
    };
    let prompt = build_prompt(obs, history_block);
    let mut last_response = None;
    for attempt in 0..=binding.retry_limit {
        let response = client.complete(model_name, &prompt, LLM_TEMPERATURE, LLM_MAX_TOKENS)?;
        match parse_action(&response, &obs.game) {
            Ok(action) => {
                let trace = match obs.prompt_mode {
                    PromptMode::Reasoning => Some(response.clone()),
                    PromptMode::NoReasoning => None,
                };
                return Ok(Decision {
                    action,
                    trace,
                    raw_response: Some(response),
                    retries_used: attempt,
                    fallback_applied: false,
                });
            }
            Err(_) => last_response = Some(response),
        }
    }
    match binding.fallback {
        Fallback::Abort => Err(Error::MatchAborted(format!(
            "player {} produced no parseable action after {} attempts",
            obs.focal + 1,
            binding.retry_limit + 1
        ))),
        Fallback::DefectDefault => Ok(Decision {
            action: obs.game.defect_action(),
            trace: None,
            raw_response: last_response,
            retries_used: binding.retry_limit,
            fallback_applied: true,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::GameKind;
    use crate::memory::{HistoryEntry, HistoryWindow};

    fn obs(game: GameKind, round: u32, window: HistoryWindow) -> Observation {
        let game = GameSpec::new(game);
        let hl = window.len() as u32;
        Observation {
            focal: 0,
            round,
            game,
            window,
            hl_declared: hl,
            prompt_mode: PromptMode::Reasoning,
            continuation_pct: 0.99,
        }
    }

    fn entry(game: GameKind, round: u32, actions: Vec<Action>) -> HistoryEntry {
        let game = GameSpec::new(game);
        let payoffs = game.payoff(&actions).unwrap();
        HistoryEntry {
            round,
            actions,
            payoffs,
            synthetic: false,
        }
    }

    #[test]
    fn tit_for_tat_mirrors() {
        let mut agent = ScriptedAgent::new(Strategy::TitForTat, 0);
        // Opening move.
        let d = agent.decide(&obs(GameKind::PD, 1, HistoryWindow::default()));
        assert_eq!(d.action, Action::A0);
        // Mirror the opponent's last action.
        let w = HistoryWindow {
            entries: vec![entry(GameKind::PD, 1, vec![Action::A0, Action::A1])],
        };
        assert_eq!(agent.decide(&obs(GameKind::PD, 2, w)).action, Action::A1);
    }

    #[test]
    fn tit_for_tat_pg_and_td_rules() {
        let mut agent = ScriptedAgent::new(Strategy::TitForTat, 0);
        let w = HistoryWindow {
            entries: vec![entry(GameKind::PG, 1, vec![Action::A0, Action::A0, Action::A1])],
        };
        assert_eq!(agent.decide(&obs(GameKind::PG, 2, w)).action, Action::A1);
        let w = HistoryWindow {
            entries: vec![entry(GameKind::PG, 1, vec![Action::A1, Action::A0, Action::A0])],
        };
        assert_eq!(agent.decide(&obs(GameKind::PG, 2, w)).action, Action::A0);
        // TD: repeat the opponent's claim.
        let w = HistoryWindow {
            entries: vec![entry(GameKind::TD, 1, vec![Action::A3, Action::A2])],
        };
        assert_eq!(agent.decide(&obs(GameKind::TD, 2, w)).action, Action::A2);
    }

    #[test]
    fn grim_trigger_is_permanent() {
        let mut agent = ScriptedAgent::new(Strategy::GrimTrigger, 0);
        let betrayed = HistoryWindow {
            entries: vec![entry(GameKind::TG, 1, vec![Action::A0, Action::A1])],
        };
        assert_eq!(agent.decide(&obs(GameKind::TG, 2, betrayed)).action, Action::A1);
        // All-cooperative window afterwards: the trigger stays fired.
        let clean = HistoryWindow {
            entries: vec![entry(GameKind::TG, 2, vec![Action::A0, Action::A0])],
        };
        assert_eq!(agent.decide(&obs(GameKind::TG, 3, clean)).action, Action::A1);
    }

    #[test]
    fn random_coop_is_seeded() {
        let run = |seed| {
            let mut agent = ScriptedAgent::new(Strategy::RandomCoop { p: 0.5 }, seed);
            (0..20)
                .map(|t| agent.decide(&obs(GameKind::PD, t + 1, HistoryWindow::default())).action)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn prompt_contains_mode_sentences() {
        let o = obs(GameKind::PD, 1, HistoryWindow::default());
        let p = build_prompt(&o, "");
        assert!(p.contains("Keep your reasoning concise and within 500 words"));
        assert!(p.contains("You are Player 1, playing a repeated game with Player 2."));
        assert!(p.contains("After each round, there is a 99% chance"));
        assert!(p.contains("The required output format is [A0 or A1]."));
        assert!(p.ends_with("required format for the current game. The required output format is [A0 or A1]."));

        let mut o = obs(GameKind::TD, 1, HistoryWindow::default());
        o.prompt_mode = PromptMode::NoReasoning;
        let p = build_prompt(&o, "");
        assert!(p.contains("Do not provide explanation."));
        assert!(p.contains("[A0, A1, A2, or A3]"));
        assert!(!p.contains("500 words"));
    }

    #[test]
    fn prompt_lists_both_opponents_in_pg() {
        let mut o = obs(GameKind::PG, 4, HistoryWindow::default());
        o.focal = 1;
        let p = build_prompt(&o, "");
        assert!(p.starts_with("You are Player 2, playing a repeated game with Player 1 and Player 3."));
    }

    #[test]
    fn empty_history_block() {
        let o = obs(GameKind::PD, 1, HistoryWindow::default());
        let p = build_prompt(&o, "");
        assert!(p.contains("Past rounds' results:\n\n\n"));
    }

    #[test]
    fn parse_action_cases() {
        let pd = GameSpec::new(GameKind::PD);
        let td = GameSpec::new(GameKind::TD);
        assert_eq!(parse_action("some reasoning\nA0", &pd).unwrap(), Action::A0);
        assert_eq!(parse_action("[A3]", &td).unwrap(), Action::A3);
        assert_eq!(parse_action("I choose action A1.", &pd).unwrap(), Action::A1);
        assert!(matches!(
            parse_action("I will wait and see.", &pd),
            Err(Error::ParseFailure)
        ));
        // A3 is not a PD action.
        assert!(matches!(parse_action("A3", &pd), Err(Error::ParseFailure)));
        // Last line wins.
        assert_eq!(parse_action("A0\nfinal answer: A1", &pd).unwrap(), Action::A1);
    }

    #[test]
    fn parse_action_round_trips_every_label() {
        for kind in GameKind::ALL {
            let game = GameSpec::new(kind);
            for a in game.valid_actions() {
                assert_eq!(parse_action(a.label(), &game).unwrap(), *a);
                assert_eq!(parse_action(&format!("[{a}]"), &game).unwrap(), *a);
            }
        }
    }

    struct SeqBackend {
        responses: std::cell::RefCell<Vec<String>>,
    }

    impl CompletionBackend for SeqBackend {
        fn complete(&self, _m: &str, _p: &str, _t: f64, _mt: u32) -> Result<String> {
            Ok(self.responses.borrow_mut().remove(0))
        }
    }

    fn seq(items: &[&str]) -> SeqBackend {
        SeqBackend {
            responses: std::cell::RefCell::new(items.iter().map(|s| s.to_string()).collect()),
        }
    }

    #[test]
    fn llm_decide_retry_and_fallback() {
        let o = obs(GameKind::PD, 1, HistoryWindow::default());
        let binding = AgentBinding::llm("test-model");

        let d = llm_decide(&binding, &o, "", &seq(&["thinking\nA1"])).unwrap();
        assert_eq!((d.action, d.retries_used), (Action::A1, 0));
        assert!(d.trace.is_some());

        let d = llm_decide(&binding, &o, "", &seq(&["??", "??", "A1"])).unwrap();
        assert_eq!((d.action, d.retries_used), (Action::A1, 2));

        let garbage = ["??", "??", "??", "??"];
        assert!(matches!(
            llm_decide(&binding, &o, "", &seq(&garbage)),
            Err(Error::MatchAborted(_))
        ));

        let mut lenient = binding.clone();
        lenient.fallback = Fallback::DefectDefault;
        let d = llm_decide(&lenient, &o, "", &seq(&garbage)).unwrap();
        assert_eq!(d.action, Action::A1);
        assert!(d.fallback_applied);
    }

    #[test]
    fn no_reasoning_mode_has_no_trace() {
        let mut o = obs(GameKind::PD, 1, HistoryWindow::default());
        o.prompt_mode = PromptMode::NoReasoning;
        let d = llm_decide(&AgentBinding::llm("m"), &o, "", &seq(&["A0"])).unwrap();
        assert!(d.trace.is_none());
        assert!(d.raw_response.is_some());
    }
}
