//! Experiment orchestration: declarative TOML plans, deterministic
//! sweep expansion, bounded parallel execution with resumable JSONL
//! artifacts, and CSV/markdown reporting.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::agents::{build_prompt, AgentBinding, CompletionBackend, Observation, PromptMode};
use crate::curation::CurationRecord;
use crate::engine::{run_match, Horizon, MatchConfig, RoundRecord, RunLog, Termination};
use crate::error::{Error, Result};
use crate::games::{Action, GameKind, GameSpec, Points};
use crate::lexalysis::{analyze_run, LexiconSet};
use crate::memory::{self, SanitizationConfig, SanitizeMode};
use crate::metrics::{summarize, DiscountSpec, RunSummary};

/// FNV-1a over NUL-joined parts; the stable seed/run-id hash. Not
/// cryptographic — only cross-invocation stability matters.
pub fn stable_hash64(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for part in parts {
        for b in part.as_bytes() {
            eat(*b);
        }
        eat(0);
    }
    h
}

fn default_hl_values() -> Vec<u32> {
    vec![0, 1, 2, 3, 5, 10, 20, 40, 80]
}

fn default_seeds() -> u32 {
    3
}

fn default_prompt_modes() -> Vec<PromptMode> {
    vec![PromptMode::Reasoning]
}

fn default_rounds() -> u32 {
    500
}

fn default_window() -> u32 {
    80
}

/// One agent-lineup axis value of a plan. Either `agent` (replicated to
/// each game's player count, e.g. self-play) or an explicit `agents`
/// list whose length must match every game in the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setting {
    pub name: String,
    #[serde(default)]
    pub agent: Option<AgentBinding>,
    #[serde(default)]
    pub agents: Vec<AgentBinding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SanitizationSweep {
    pub mode: SanitizeMode,
    #[serde(default = "default_window")]
    pub window: u32,
    pub x_values: Vec<u32>,
}

/// Declarative sweep description, loaded from TOML. Unknown keys are
/// rejected so a typo cannot silently drop an axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub output_dir: String,
    pub games: Vec<GameKind>,
    pub settings: Vec<Setting>,
    #[serde(default = "default_hl_values")]
    pub hl_values: Vec<u32>,
    /// Per-player HL vectors; when non-empty this replaces `hl_values`.
    #[serde(default)]
    pub asym_hl: Vec<Vec<u32>>,
    #[serde(default = "default_seeds")]
    pub seeds: u32,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_prompt_modes")]
    pub prompt_modes: Vec<PromptMode>,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default)]
    pub sanitization: Option<SanitizationSweep>,
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<ExperimentPlan> {
        toml::from_str(text).map_err(|e| Error::ConfigError(format!("bad plan: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<ExperimentPlan> {
        ExperimentPlan::from_toml(&fs::read_to_string(path)?)
    }
}

/// One expanded sweep cell: a unique id plus a fully resolved config.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub run_id: String,
    pub config: MatchConfig,
}

fn hl_label(hl: &[u32]) -> String {
    let first = hl[0];
    if hl.iter().all(|h| *h == first) {
        first.to_string()
    } else {
        hl.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("-")
    }
}

fn san_label(cfg: &SanitizationConfig) -> Option<String> {
    match cfg.mode {
        SanitizeMode::Off => None,
        SanitizeMode::Ideal => Some(format!("idealx{}", cfg.x_real)),
        SanitizeMode::Polar => Some(format!("polarx{}", cfg.x_real)),
    }
}

fn setting_bindings(s: &Setting, n: usize) -> Result<Vec<AgentBinding>> {
    match (&s.agent, s.agents.is_empty()) {
        (Some(a), true) => Ok(vec![a.clone(); n]),
        (None, false) => {
            if s.agents.len() == n {
                Ok(s.agents.clone())
            } else {
                Err(Error::ConfigError(format!(
                    "setting '{}' has {} agents but the game needs {n}",
                    s.name,
                    s.agents.len()
                )))
            }
        }
        _ => Err(Error::ConfigError(format!(
            "setting '{}' must set exactly one of 'agent' or 'agents'",
            s.name
        ))),
    }
}

/// Deterministic cartesian expansion. Per-cell seeds derive from the
/// plan's seed base and the cell's run id, so adding axes never
/// perturbs existing cells.
pub fn expand(plan: &ExperimentPlan) -> Result<Vec<Cell>> {
    let hl_axis: Vec<Vec<u32>> = if plan.asym_hl.is_empty() {
        plan.hl_values.iter().map(|h| vec![*h]).collect()
    } else {
        plan.asym_hl.clone()
    };
    if plan.games.is_empty()
        || plan.settings.is_empty()
        || hl_axis.is_empty()
        || plan.prompt_modes.is_empty()
        || plan.seeds == 0
    {
        return Err(Error::EmptyPlan("games/settings/hl/prompt_modes/seeds".into()));
    }
    let san_axis: Vec<Option<(SanitizeMode, u32, u32)>> = match &plan.sanitization {
        None => vec![None],
        Some(s) => {
            if s.x_values.is_empty() {
                return Err(Error::EmptyPlan("sanitization.x_values".into()));
            }
            s.x_values.iter().map(|x| Some((s.mode, *x, s.window))).collect()
        }
    };

    let mut cells = Vec::new();
    for game in &plan.games {
        let spec = GameSpec::new(*game);
        let n = spec.n_players;
        for setting in &plan.settings {
            let bindings = setting_bindings(setting, n)?;
            for hl in &hl_axis {
                let hl: Vec<u32> = if hl.len() == 1 {
                    vec![hl[0]; n]
                } else if hl.len() == n {
                    hl.clone()
                } else {
                    return Err(Error::ConfigError(format!(
                        "asym_hl entry {hl:?} does not fit a {n}-player game"
                    )));
                };
                for mode in &plan.prompt_modes {
                    for san in &san_axis {
                        let sanitization = match san {
                            None => vec![SanitizationConfig::off(); n],
                            Some((m, x, w)) => vec![SanitizationConfig::new(*m, *x, *w); n],
                        };
                        for s in 0..plan.seeds {
                            let mut id = format!(
                                "{}_{}_hl{}_{}",
                                game.name().to_lowercase(),
                                setting.name,
                                hl_label(&hl),
                                mode.name()
                            );
                            if let Some(label) = san_label(&sanitization[0]) {
                                id.push('_');
                                id.push_str(&label);
                            }
                            id.push_str(&format!("_s{s}"));
                            let seed = stable_hash64(&[&plan.seed_base.to_string(), &id]);
                            cells.push(Cell {
                                run_id: id,
                                config: MatchConfig {
                                    game: *game,
                                    bindings: bindings.clone(),
                                    hl: hl.clone(),
                                    horizon: Horizon::fixed(plan.rounds),
                                    prompt_mode: *mode,
                                    sanitization: sanitization.clone(),
                                    seed,
                                    continuation_pct: 0.99,
                                },
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

// ---------------------------------------------------------------------------
// JSONL wire schema. Field names and the P1-keyed maps are an external
// contract; change them only with a schema version bump.

#[derive(Serialize, Deserialize)]
struct HeaderWire {
    config: MatchConfig,
}

#[derive(Serialize, Deserialize)]
struct RoundWire {
    round: u32,
    actions: BTreeMap<String, String>,
    payoffs: BTreeMap<String, f64>,
    traces: Option<BTreeMap<String, String>>,
    retries: BTreeMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct FooterWire {
    termination: Termination,
}

fn pkey(i: usize) -> String {
    format!("P{}", i + 1)
}

fn round_to_wire(r: &RoundRecord) -> RoundWire {
    RoundWire {
        round: r.round,
        actions: r
            .actions
            .iter()
            .enumerate()
            .map(|(i, a)| (pkey(i), a.label().to_string()))
            .collect(),
        payoffs: r
            .payoffs
            .iter()
            .enumerate()
            .map(|(i, p)| (pkey(i), p.as_f64()))
            .collect(),
        traces: r.traces.as_ref().map(|ts| {
            ts.iter()
                .enumerate()
                .filter_map(|(i, t)| t.as_ref().map(|t| (pkey(i), t.clone())))
                .collect()
        }),
        retries: r
            .retries
            .iter()
            .enumerate()
            .map(|(i, n)| (pkey(i), *n))
            .collect(),
    }
}

fn round_from_wire(w: &RoundWire, n: usize) -> Result<RoundRecord> {
    let get = |map: &BTreeMap<String, String>, i: usize| -> Result<String> {
        map.get(&pkey(i))
            .cloned()
            .ok_or_else(|| Error::Other(format!("round {}: missing {}", w.round, pkey(i))))
    };
    let mut actions = Vec::with_capacity(n);
    let mut payoffs = Vec::with_capacity(n);
    let mut retries = Vec::with_capacity(n);
    for i in 0..n {
        let label = get(&w.actions, i)?;
        actions.push(Action::from_label(&label).ok_or_else(|| Error::Other(format!(
            "round {}: bad action label {label:?}",
            w.round
        )))?);
        let pay = w
            .payoffs
            .get(&pkey(i))
            .ok_or_else(|| Error::Other(format!("round {}: missing payoff {}", w.round, pkey(i))))?;
        payoffs.push(Points::from_tenths((pay * 10.0).round() as i64));
        retries.push(*w.retries.get(&pkey(i)).unwrap_or(&0));
    }
    let traces = w
        .traces
        .as_ref()
        .map(|m| (0..n).map(|i| m.get(&pkey(i)).cloned()).collect());
    Ok(RoundRecord {
        round: w.round,
        actions,
        payoffs,
        traces,
        retries,
    })
}

/// Serializes a run: header with the config, one line per round, footer
/// with the termination. Byte-stable for a fixed log.
pub fn save_log(log: &RunLog) -> Result<String> {
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&HeaderWire {
        config: log.config.clone(),
    })?);
    out.push('\n');
    for r in &log.records {
        out.push_str(&serde_json::to_string(&round_to_wire(r))?);
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(&FooterWire {
        termination: log.termination.clone(),
    })?);
    out.push('\n');
    Ok(out)
}

pub fn load_log(text: &str) -> Result<RunLog> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: HeaderWire = serde_json::from_str(
        lines.next().ok_or_else(|| Error::Other("empty log file".into()))?,
    )?;
    let n = GameSpec::new(header.config.game).n_players;
    let mut records = Vec::new();
    let mut termination = None;
    for line in lines {
        if let Ok(f) = serde_json::from_str::<FooterWire>(line) {
            termination = Some(f.termination);
            continue;
        }
        records.push(round_from_wire(&serde_json::from_str(line)?, n)?);
    }
    Ok(RunLog {
        config: header.config,
        records,
        termination: termination.ok_or_else(|| Error::Other("log has no termination footer".into()))?,
    })
}

fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize)]
pub struct ExecuteSummary {
    pub completed: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
}

/// Runs every cell with a bounded worker pool; each cell writes
/// `{run_id}.jsonl` atomically. With `resume`, cells whose artifact
/// already exists are skipped. Per-cell failures are collected, not
/// fatal.
pub fn execute(
    cells: &[Cell],
    out_dir: &Path,
    parallelism: usize,
    resume: bool,
    client: Option<&(dyn CompletionBackend + Sync)>,
) -> Result<ExecuteSummary> {
    fs::create_dir_all(out_dir)?;
    let queue: Mutex<VecDeque<&Cell>> = Mutex::new(cells.iter().collect());
    let summary: Mutex<ExecuteSummary> = Mutex::new(ExecuteSummary::default());

    let workers = parallelism.max(1).min(cells.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let Some(cell) = queue.lock().unwrap().pop_front() else {
                    break;
                };
                let path = out_dir.join(format!("{}.jsonl", cell.run_id));
                if resume && path.exists() {
                    summary.lock().unwrap().skipped.push(cell.run_id.clone());
                    continue;
                }
                let outcome = run_match(&cell.config, client.map(|c| c as &dyn CompletionBackend))
                    .and_then(|log| save_log(&log))
                    .and_then(|text| atomic_write(&path, &text));
                let mut s = summary.lock().unwrap();
                match outcome {
                    Ok(()) => s.completed.push(cell.run_id.clone()),
                    Err(e) => s.failed.push((cell.run_id.clone(), e.to_string())),
                }
            });
        }
    });

    let mut s = summary.into_inner().unwrap();
    s.completed.sort();
    s.skipped.sort();
    s.failed.sort();
    Ok(s)
}

/// Convenience wrapper: expand a plan and execute it under
/// `base_dir/{plan.output_dir}`.
pub fn execute_plan(
    plan: &ExperimentPlan,
    base_dir: &Path,
    parallelism: usize,
    resume: bool,
    client: Option<&(dyn CompletionBackend + Sync)>,
) -> Result<(PathBuf, ExecuteSummary)> {
    let cells = expand(plan)?;
    let out_dir = base_dir.join(&plan.output_dir);
    let summary = execute(&cells, &out_dir, parallelism, resume, client)?;
    Ok((out_dir, summary))
}

/// All run logs in a directory, sorted by run id.
pub fn load_run_dir(dir: &Path) -> Result<Vec<(String, RunLog)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().map(|e| e == "jsonl").unwrap_or(false) {
            let id = path.file_stem().unwrap().to_string_lossy().to_string();
            out.push((id, load_log(&fs::read_to_string(&path)?)?));
        }
    }
    if out.is_empty() {
        return Err(Error::NoRuns(dir.display().to_string()));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn agent_label(cfg: &MatchConfig) -> String {
    let names: Vec<String> = cfg.bindings.iter().map(|b| b.display_name()).collect();
    if names.iter().all(|n| *n == names[0]) {
        names[0].clone()
    } else {
        names.join("+")
    }
}

fn san_columns(cfg: &MatchConfig) -> (String, String) {
    let s = &cfg.sanitization[0];
    match s.mode {
        SanitizeMode::Off => ("off".into(), String::new()),
        SanitizeMode::Ideal => ("ideal".into(), s.x_real.to_string()),
        SanitizeMode::Polar => ("polar".into(), s.x_real.to_string()),
    }
}

fn opt_f(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn per_player_cols(values: &[f64], width: usize, decimals: usize) -> Vec<String> {
    (0..width)
        .map(|i| {
            values
                .get(i)
                .map(|v| format!("{v:.decimals$}"))
                .unwrap_or_default()
        })
        .collect()
}

/// Per-run CSV plus grouped mean±std markdown tables. Both outputs are
/// byte-stable for fixed inputs: runs sort by id, groups by key, and
/// every number uses fixed-width formatting.
pub fn report(runs: &[(String, RunLog)], lexicons: &LexiconSet) -> Result<(String, String)> {
    if runs.is_empty() {
        return Err(Error::NoRuns("empty run set".into()));
    }
    let d = DiscountSpec::default();
    let mut csv = String::from(
        "game,agent,hl,mode,sanitize_mode,x,seed,coop_rate,\
         coop_pp_p1,coop_pp_p2,coop_pp_p3,\
         disc_reward_p1,disc_reward_p2,disc_reward_p3,\
         mean_reward_p1,mean_reward_p2,mean_reward_p3,\
         fwd_ratio,paranoia_ratio,defect_mention_rate\n",
    );
    // Group key -> per-seed summaries for the markdown tables.
    let mut groups: BTreeMap<(String, String, String, String, String, String), Vec<RunSummary>> =
        BTreeMap::new();
    for (id, log) in runs {
        if log.records.is_empty() {
            return Err(Error::Other(format!("run {id} has no rounds")));
        }
        let s = summarize(log, d)?;
        let cfg = &log.config;
        let (san, x) = san_columns(cfg);
        let lex = analyze_run(log, lexicons).ok().map(|(_, agg)| agg);
        let key = (
            cfg.game.name().to_string(),
            agent_label(cfg),
            hl_label(&cfg.hl),
            cfg.prompt_mode.name().to_string(),
            san.clone(),
            x.clone(),
        );
        let mut cols = vec![
            key.0.clone(),
            key.1.clone(),
            key.2.clone(),
            key.3.clone(),
            san,
            x,
            cfg.seed.to_string(),
            format!("{:.6}", s.coop_rate_overall),
        ];
        cols.extend(per_player_cols(&s.coop_rate_per_player, 3, 6));
        cols.extend(per_player_cols(&s.discounted_reward_per_player, 3, 2));
        cols.extend(per_player_cols(&s.mean_reward_per_player, 3, 2));
        match &lex {
            Some(a) => {
                cols.push(opt_f(a.fwd_ratio));
                cols.push(opt_f(a.paranoia_ratio));
                cols.push(format!("{:.6}", a.defect_mention_rate));
            }
            None => cols.extend([String::new(), String::new(), String::new()]),
        }
        csv.push_str(&cols.join(","));
        csv.push('\n');
        groups.entry(key).or_default().push(s);
    }

    let mut md = String::from(
        "| Game | Agent | HL | Mode | Sanitize | X | Cooperation (%) | Mean reward (P1) | Discounted reward (P1) |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    let pm = |values: &[f64], scale: f64, decimals: usize| {
        let a = crate::metrics::aggregate(values).expect("non-empty group");
        format!(
            "{:.decimals$} \u{b1} {:.decimals$}",
            a.mean * scale,
            a.std * scale
        )
    };
    for ((game, agent, hl, mode, san, x), seeds) in &groups {
        let coop: Vec<f64> = seeds.iter().map(|s| s.coop_rate_overall).collect();
        let mean_r: Vec<f64> = seeds.iter().map(|s| s.mean_reward_per_player[0]).collect();
        let disc_r: Vec<f64> = seeds.iter().map(|s| s.discounted_reward_per_player[0]).collect();
        md.push_str(&format!(
            "| {game} | {agent} | {hl} | {mode} | {san} | {x} | {} | {} | {} |\n",
            pm(&coop, 100.0, 1),
            pm(&mean_r, 1.0, 2),
            pm(&disc_r, 1.0, 2),
        ));
    }
    Ok((csv, md))
}

/// Per-run lexical CSV over runs that carry reasoning traces.
pub fn analyze_dir(runs: &[(String, RunLog)], lexicons: &LexiconSet) -> Result<String> {
    if runs.is_empty() {
        return Err(Error::NoRuns("empty run set".into()));
    }
    let mut csv = String::from(
        "run_id,game,agent,hl,mode,seed,n_traces,word_count,fwd,react,paranoia,coop,\
         fwd_ratio,paranoia_ratio,paranoia_per_1000,coop_per_1000,defect_mention_rate\n",
    );
    for (id, log) in runs {
        let Ok((_, agg)) = analyze_run(log, lexicons) else {
            continue;
        };
        let cfg = &log.config;
        csv.push_str(&format!(
            "{id},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6}\n",
            cfg.game.name(),
            agent_label(cfg),
            hl_label(&cfg.hl),
            cfg.prompt_mode.name(),
            cfg.seed,
            agg.n_traces,
            agg.word_count,
            agg.fwd,
            agg.react,
            agg.paranoia,
            agg.coop,
            opt_f(agg.fwd_ratio),
            opt_f(agg.paranoia_ratio),
            opt_f(agg.paranoia_per_1000),
            opt_f(agg.coop_per_1000),
            agg.defect_mention_rate,
        ));
    }
    Ok(csv)
}

/// Rebuilds the prompt each traced decision saw and emits one curation
/// record per (round, player) trace. Pure given the log.
pub fn curation_records_from_log(run_id: &str, log: &RunLog) -> Result<Vec<CurationRecord>> {
    let cfg = &log.config;
    let game = GameSpec::new(cfg.game);
    let mut out = Vec::new();
    for (i, record) in log.records.iter().enumerate() {
        let Some(traces) = &record.traces else {
            continue;
        };
        let t = record.round;
        for (p, trace) in traces.iter().enumerate() {
            let Some(trace) = trace else { continue };
            let sanitize_cfg = &cfg.sanitization[p];
            let window = if sanitize_cfg.active_at(t) {
                memory::sanitize(&log.records[..i], sanitize_cfg, &game, t, cfg.seed.wrapping_add(p as u64))?
            } else {
                memory::window(&log.records[..i], cfg.hl[p], t)?
            };
            let history_block = memory::format_history(&window, p, &game)?;
            let obs = Observation {
                focal: p,
                round: t,
                game,
                window,
                hl_declared: cfg.hl[p],
                prompt_mode: cfg.prompt_mode,
                continuation_pct: cfg.continuation_pct,
            };
            let prompt = build_prompt(&obs, &history_block);
            out.push(CurationRecord::new(
                &format!("{run_id}:r{t}:p{}", p + 1),
                &cfg.bindings[p].display_name(),
                cfg.hl[p],
                &prompt,
                trace,
            ));
        }
    }
    if out.is_empty() {
        return Err(Error::NoTraces);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Strategy;

    const PLAN: &str = r#"
        name = "hl-sweep"
        output_dir = "runs"
        games = ["PD"]
        rounds = 20

        [[settings]]
        name = "tft"
        agent = { kind = "scripted", strategy = { name = "tit_for_tat" }, seed = 0 }
    "#;

    #[test]
    fn plan_parses_with_defaults() {
        let plan = ExperimentPlan::from_toml(PLAN).unwrap();
        assert_eq!(plan.hl_values, vec![0, 1, 2, 3, 5, 10, 20, 40, 80]);
        assert_eq!(plan.seeds, 3);
        assert_eq!(plan.prompt_modes, vec![PromptMode::Reasoning]);
        assert_eq!(plan.rounds, 20);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{PLAN}\nhistroy_lengths = [1]\n");
        assert!(matches!(
            ExperimentPlan::from_toml(&bad),
            Err(Error::ConfigError(_))
        ));
    }

    #[test]
    fn expansion_shapes() {
        let plan = ExperimentPlan::from_toml(PLAN).unwrap();
        let cells = expand(&plan).unwrap();
        // 1 game x 1 setting x 9 HL x 1 mode x 3 seeds.
        assert_eq!(cells.len(), 27);
        let mut ids: Vec<&str> = cells.iter().map(|c| c.run_id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 27);
        // Stable across re-expansion.
        assert_eq!(cells, expand(&plan).unwrap());
        assert_eq!(cells[0].run_id, "pd_tft_hl0_reasoning_s0");

        let mut empty = plan.clone();
        empty.games.clear();
        assert!(matches!(expand(&empty), Err(Error::EmptyPlan(_))));
    }

    #[test]
    fn sanitization_sweep_shape() {
        let mut plan = ExperimentPlan::from_toml(PLAN).unwrap();
        plan.hl_values = vec![80];
        plan.sanitization = Some(SanitizationSweep {
            mode: SanitizeMode::Ideal,
            window: 80,
            x_values: vec![2, 5, 10, 20, 40, 60, 70, 75, 78],
        });
        let cells = expand(&plan).unwrap();
        assert_eq!(cells.len(), 27);
        assert!(cells.iter().any(|c| c.run_id.contains("idealx78")));
    }

    #[test]
    fn asym_hl_axis() {
        let mut plan = ExperimentPlan::from_toml(PLAN).unwrap();
        plan.asym_hl = vec![vec![2, 80], vec![80, 2]];
        let cells = expand(&plan).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].config.hl, vec![2, 80]);
        assert!(cells[0].run_id.contains("hl2-80"));
    }

    #[test]
    fn seeds_differ_per_cell_and_are_stable() {
        let plan = ExperimentPlan::from_toml(PLAN).unwrap();
        let cells = expand(&plan).unwrap();
        let mut seeds: Vec<u64> = cells.iter().map(|c| c.config.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 27);
        assert_eq!(
            stable_hash64(&["0", "pd_tft_hl0_reasoning_s0"]),
            cells[0].config.seed
        );
        assert_ne!(stable_hash64(&["a", "b"]), stable_hash64(&["ab", ""]));
    }

    fn scripted_log(strategies: &[Strategy], rounds: u32, seed: u64) -> RunLog {
        let cfg = MatchConfig::scripted(
            GameKind::PD,
            strategies.iter().map(|s| AgentBinding::scripted(*s, seed)).collect(),
            vec![1; strategies.len()],
            rounds,
            seed,
        );
        run_match(&cfg, None).unwrap()
    }

    #[test]
    fn log_round_trips() {
        let mut log = scripted_log(&[Strategy::TitForTat, Strategy::RandomCoop { p: 0.5 }], 30, 3);
        assert_eq!(load_log(&save_log(&log).unwrap()).unwrap(), log);
        // With traces present.
        log.records[0].traces = Some(vec![Some("thinking about the future\nA0".into()), None]);
        log.records[0].retries = vec![1, 0];
        assert_eq!(load_log(&save_log(&log).unwrap()).unwrap(), log);
    }

    #[test]
    fn wire_schema_field_names() {
        let log = scripted_log(&[Strategy::AllCoop, Strategy::AllDefect], 1, 0);
        let text = save_log(&log).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("{\"config\":"));
        assert_eq!(
            lines[1],
            "{\"round\":1,\"actions\":{\"P1\":\"A0\",\"P2\":\"A1\"},\"payoffs\":{\"P1\":-100.0,\"P2\":300.0},\"traces\":null,\"retries\":{\"P1\":0,\"P2\":0}}"
        );
        assert_eq!(lines[2], "{\"termination\":{\"kind\":\"horizon_reached\"}}");
    }

    #[test]
    fn execute_resume_and_parallel_determinism() {
        let plan = ExperimentPlan::from_toml(PLAN).unwrap();
        let cells = expand(&plan).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let d1 = dir.path().join("a");
        let d8 = dir.path().join("b");
        let s = execute(&cells, &d1, 1, true, None).unwrap();
        assert_eq!(s.completed.len(), 27);
        assert!(s.failed.is_empty());
        let s = execute(&cells, &d8, 8, true, None).unwrap();
        assert_eq!(s.completed.len(), 27);
        for cell in &cells {
            let name = format!("{}.jsonl", cell.run_id);
            assert_eq!(
                fs::read(d1.join(&name)).unwrap(),
                fs::read(d8.join(&name)).unwrap(),
                "{name} differs between parallelism 1 and 8"
            );
        }
        // Resume: everything already on disk is skipped.
        let s = execute(&cells, &d1, 4, true, None).unwrap();
        assert_eq!(s.skipped.len(), 27);
        assert!(s.completed.is_empty());
    }

    #[test]
    fn report_all_coop_and_no_runs() {
        let lexicons = LexiconSet::default();
        let runs: Vec<(String, RunLog)> = (0..3)
            .map(|s| (format!("run_s{s}"), scripted_log(&[Strategy::AllCoop, Strategy::AllCoop], 50, s)))
            .collect();
        let (csv, md) = report(&runs, &lexicons).unwrap();
        assert!(md.contains("| 100.0 \u{b1} 0.0 | 200.00 \u{b1} 0.00 | 200.00 \u{b1} 0.00 |"));
        assert!(csv.lines().nth(1).unwrap().starts_with("PD,all_coop,1,reasoning,off,,"));
        assert_eq!(csv.lines().count(), 4);
        // Byte stability.
        assert_eq!(report(&runs, &lexicons).unwrap(), (csv, md));
        assert!(matches!(report(&[], &lexicons), Err(Error::NoRuns(_))));

        let runs = vec![(
            "g".to_string(),
            scripted_log(&[Strategy::GrimTrigger, Strategy::AllDefect], 500, 0),
        )];
        let (_, md) = report(&runs, &lexicons).unwrap();
        assert!(md.contains("| 0.1 \u{b1} 0.0 |"), "{md}");
    }

    #[test]
    fn analyze_dir_skips_traceless_runs() {
        let lexicons = LexiconSet::default();
        let plain = scripted_log(&[Strategy::AllCoop, Strategy::AllCoop], 5, 0);
        let mut traced = plain.clone();
        traced.records[0].traces = Some(vec![Some("mutual benefit in the future".into()), None]);
        let runs = vec![("a_plain".to_string(), plain), ("b_traced".to_string(), traced)];
        let csv = analyze_dir(&runs, &lexicons).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("b_traced,PD,all_coop,1,reasoning,"));
        assert!(lines[1].contains(",1,5,2,0,"), "{csv}");
    }

    #[test]
    fn curation_records_rebuild_prompts() {
        let mut log = scripted_log(&[Strategy::TitForTat, Strategy::TitForTat], 10, 1);
        log.records[2].traces = Some(vec![None, Some("I plan for the long-term.\nA0".into())]);
        log.records[5].traces = Some(vec![Some("trust matters\nA0".into()), None]);
        let recs = curation_records_from_log("demo", &log).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].id, "demo:r3:p2");
        assert!(recs[0].prompt.starts_with("You are Player 2, playing a repeated game with Player 1."));
        assert!(recs[0].prompt.contains("R2: You=A0, P1=A0 \u{2192} 200.0"));
        assert_eq!(recs[1].source_model, "tit_for_tat");

        let bare = scripted_log(&[Strategy::AllCoop, Strategy::AllCoop], 3, 0);
        assert!(matches!(curation_records_from_log("x", &bare), Err(Error::NoTraces)));
    }
}
