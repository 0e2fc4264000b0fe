//! Python bindings: payoffs, scripted tournaments, summaries, action
//! parsing, and lexical trace analysis.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use dilemma_lab::agents::{parse_action as core_parse_action, AgentBinding, Strategy};
use dilemma_lab::engine::{run_match, MatchConfig};
use dilemma_lab::games::{Action, GameKind, GameSpec};
use dilemma_lab::harness::{load_log, save_log};
use dilemma_lab::lexalysis::{analyze_trace, count_matches as core_count_matches, LexiconSet};
use dilemma_lab::metrics::{self, DiscountSpec};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn game(name: &str) -> PyResult<GameSpec> {
    GameKind::from_name(name)
        .map(GameSpec::new)
        .ok_or_else(|| err(format!("unknown game {name:?}; expected PD, TD, PG, or TG")))
}

fn actions(labels: &[String]) -> PyResult<Vec<Action>> {
    labels
        .iter()
        .map(|l| Action::from_label(l).ok_or_else(|| err(format!("bad action label {l:?}"))))
        .collect()
}

fn strategy(name: &str) -> PyResult<Strategy> {
    if let Some(p) = name.strip_prefix("random_coop:") {
        let p: f64 = p.parse().map_err(err)?;
        return Ok(Strategy::RandomCoop { p });
    }
    Ok(match name {
        "all_coop" => Strategy::AllCoop,
        "all_defect" => Strategy::AllDefect,
        "tit_for_tat" => Strategy::TitForTat,
        "grim_trigger" => Strategy::GrimTrigger,
        _ => return Err(err(format!("unknown strategy {name:?}"))),
    })
}

fn lexicon<'a>(set: &'a LexiconSet, name: &str) -> PyResult<&'a dilemma_lab::lexalysis::Lexicon> {
    Ok(match name {
        "forward" => &set.forward,
        "reactive" => &set.reactive,
        "paranoia" => &set.paranoia,
        "cooperation" => &set.cooperation,
        "defection" => &set.defection,
        _ => return Err(err(format!("unknown lexicon {name:?}"))),
    })
}

/// Per-player payoffs for one joint action profile.
#[pyfunction]
fn payoff(game_name: &str, labels: Vec<String>) -> PyResult<Vec<f64>> {
    let g = game(game_name)?;
    let pay = g.payoff(&actions(&labels)?).map_err(err)?;
    Ok(pay.iter().map(|p| p.as_f64()).collect())
}

/// The strictly cooperative action label for a game.
#[pyfunction]
fn cooperative_action(game_name: &str) -> PyResult<String> {
    Ok(game(game_name)?.cooperative_action().label().to_string())
}

/// Extracts the decided action label from a model response.
#[pyfunction]
fn parse_action(response: &str, game_name: &str) -> PyResult<Option<String>> {
    let g = game(game_name)?;
    Ok(core_parse_action(response, &g).ok().map(|a| a.label().to_string()))
}

/// Cooperation and reward summary of one run.
#[pyclass(frozen)]
struct Summary {
    #[pyo3(get)]
    coop_rate_overall: f64,
    #[pyo3(get)]
    coop_rate_per_player: Vec<f64>,
    #[pyo3(get)]
    discounted_reward_per_player: Vec<f64>,
    #[pyo3(get)]
    mean_reward_per_player: Vec<f64>,
    #[pyo3(get)]
    group_welfare: f64,
}

#[pymethods]
impl Summary {
    fn __repr__(&self) -> String {
        format!(
            "Summary(coop_rate={:.4}, group_welfare={:.4})",
            self.coop_rate_overall, self.group_welfare
        )
    }
}

/// Runs a scripted match and returns its JSONL log.
#[pyfunction]
#[pyo3(signature = (game_name, strategies, hl, rounds=500, seed=0))]
fn run_scripted(
    game_name: &str,
    strategies: Vec<String>,
    hl: Vec<u32>,
    rounds: u32,
    seed: u64,
) -> PyResult<String> {
    let g = game(game_name)?;
    let bindings: Vec<AgentBinding> = strategies
        .iter()
        .enumerate()
        .map(|(i, s)| Ok(AgentBinding::scripted(strategy(s)?, seed + i as u64)))
        .collect::<PyResult<_>>()?;
    let cfg = MatchConfig::scripted(g.kind, bindings, hl, rounds, seed);
    let log = run_match(&cfg, None).map_err(err)?;
    save_log(&log).map_err(err)
}

/// Summarizes a JSONL run log.
#[pyfunction]
fn summarize_log(jsonl: &str) -> PyResult<Summary> {
    let log = load_log(jsonl).map_err(err)?;
    let s = metrics::summarize(&log, DiscountSpec::default()).map_err(err)?;
    Ok(Summary {
        coop_rate_overall: s.coop_rate_overall,
        coop_rate_per_player: s.coop_rate_per_player,
        discounted_reward_per_player: s.discounted_reward_per_player,
        mean_reward_per_player: s.mean_reward_per_player,
        group_welfare: s.group_welfare,
    })
}

/// Normalized discounted mean of a payoff stream.
#[pyfunction]
#[pyo3(signature = (payoffs, delta=0.99))]
fn discounted_reward(payoffs: Vec<f64>, delta: f64) -> PyResult<f64> {
    metrics::discounted_reward(&payoffs, DiscountSpec::new(delta)).map_err(err)
}

/// Dictionary-match count against a named pinned lexicon.
#[pyfunction]
fn count_matches(text: &str, lexicon_name: &str) -> PyResult<usize> {
    let set = LexiconSet::default();
    Ok(core_count_matches(text, lexicon(&set, lexicon_name)?))
}

/// Full lexical stats of one reasoning trace as a dict.
#[pyfunction]
fn trace_stats(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    let s = analyze_trace(text, &LexiconSet::default());
    let json = serde_json::to_string(&s).map_err(err)?;
    let loads = py.import("json")?.getattr("loads")?;
    Ok(loads.call1((json,))?.unbind())
}

#[pymodule]
fn dilemma_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(payoff, m)?)?;
    m.add_function(wrap_pyfunction!(cooperative_action, m)?)?;
    m.add_function(wrap_pyfunction!(parse_action, m)?)?;
    m.add_function(wrap_pyfunction!(run_scripted, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_log, m)?)?;
    m.add_function(wrap_pyfunction!(discounted_reward, m)?)?;
    m.add_function(wrap_pyfunction!(count_matches, m)?)?;
    m.add_function(wrap_pyfunction!(trace_stats, m)?)?;
    m.add_class::<Summary>()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_parse() {
        assert_eq!(strategy("tit_for_tat").unwrap(), Strategy::TitForTat);
        assert_eq!(strategy("random_coop:0.25").unwrap(), Strategy::RandomCoop { p: 0.25 });
        assert!(strategy("pavlov").is_err());
        assert!(strategy("random_coop:x").is_err());
    }

    #[test]
    fn game_names_parse() {
        assert_eq!(game("TG").unwrap().kind, GameKind::TG);
        assert!(game("chess").is_err());
    }

    #[test]
    fn payoff_exposes_floats() {
        assert_eq!(payoff("PG", vec!["A0".into(), "A1".into(), "A1".into()]).unwrap(), vec![0.5, 1.5, 1.5]);
        assert!(payoff("PG", vec!["A0".into()]).is_err());
    }
}
