//! Lexical analysis of reasoning traces: dictionary matching,
//! per-1000-word frequencies, forward-looking ratio, paranoia ratio,
//! and the defection-mention rate.

use serde::Serialize;

use crate::engine::RunLog;
use crate::error::{Error, Result};

const FORWARD_SRC: &str = include_str!("../assets/lexicons/forward.txt");
const REACTIVE_SRC: &str = include_str!("../assets/lexicons/reactive.txt");
const PARANOIA_SRC: &str = include_str!("../assets/lexicons/paranoia.txt");
const COOPERATION_SRC: &str = include_str!("../assets/lexicons/cooperation.txt");
const DEFECTION_SRC: &str = include_str!("../assets/lexicons/defection.txt");

/// One match term: a run of tokens, optionally with the final token
/// treated as a prefix stem (asset syntax: trailing `*`).
#[derive(Debug, Clone, PartialEq, Eq)]
struct LexEntry {
    tokens: Vec<String>,
    last_is_prefix: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    pub name: String,
    /// Sorted longest-first so greedy matching prefers the longest run.
    entries: Vec<LexEntry>,
}

impl Lexicon {
    /// Parses an asset file: one term per line, `#` comments, lowercase
    /// after hyphen normalization, deduplicated.
    pub fn parse(name: &str, src: &str) -> Lexicon {
        let mut entries: Vec<LexEntry> = Vec::new();
        for line in src.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let normalized = line.to_lowercase().replace('-', " ");
            let mut tokens: Vec<String> = normalized.split_whitespace().map(String::from).collect();
            let last_is_prefix = tokens.last().map(|t| t.ends_with('*')).unwrap_or(false);
            if last_is_prefix {
                let last = tokens.last_mut().unwrap();
                last.pop();
            }
            let entry = LexEntry {
                tokens,
                last_is_prefix,
            };
            if !entries.contains(&entry) {
                entries.push(entry);
            }
        }
        entries.sort_by(|a, b| {
            b.tokens
                .len()
                .cmp(&a.tokens.len())
                .then(b.tokens.last().map(|t| t.len()).cmp(&a.tokens.last().map(|t| t.len())))
        });
        Lexicon {
            name: name.to_string(),
            entries,
        }
    }

    pub fn from_terms(name: &str, terms: &[&str]) -> Lexicon {
        Lexicon::parse(name, &terms.join("\n"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn match_len_at(&self, tokens: &[String], i: usize) -> Option<usize> {
        'entry: for e in &self.entries {
            if i + e.tokens.len() > tokens.len() {
                continue;
            }
            for (k, want) in e.tokens.iter().enumerate() {
                let got = &tokens[i + k];
                let last = k == e.tokens.len() - 1;
                let ok = if last && e.last_is_prefix {
                    got.starts_with(want.as_str())
                } else {
                    got == want
                };
                if !ok {
                    continue 'entry;
                }
            }
            return Some(e.tokens.len());
        }
        None
    }
}

/// The pinned dictionaries. Custom lexicons can be substituted but are
/// not the published word lists.
#[derive(Debug, Clone)]
pub struct LexiconSet {
    pub forward: Lexicon,
    pub reactive: Lexicon,
    pub paranoia: Lexicon,
    pub cooperation: Lexicon,
    pub defection: Lexicon,
}

impl Default for LexiconSet {
    fn default() -> LexiconSet {
        LexiconSet {
            forward: Lexicon::parse("forward", FORWARD_SRC),
            reactive: Lexicon::parse("reactive", REACTIVE_SRC),
            paranoia: Lexicon::parse("paranoia", PARANOIA_SRC),
            cooperation: Lexicon::parse("cooperation", COOPERATION_SRC),
            defection: Lexicon::parse("defection", DEFECTION_SRC),
        }
    }
}

fn tokenize(text: &str) -> Vec<String> {
    let normalized = text.to_lowercase().replace('-', " ");
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in normalized.chars() {
        if c.is_alphanumeric() || c == '\'' {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Counts lexicon matches: case-insensitive, hyphens normalized to
/// spaces, longest match first, each token position counted at most
/// once per lexicon.
pub fn count_matches(text: &str, lex: &Lexicon) -> usize {
    let tokens = tokenize(text);
    let mut count = 0;
    let mut i = 0;
    while i < tokens.len() {
        if let Some(len) = lex.match_len_at(&tokens, i) {
            count += 1;
            i += len;
        } else {
            i += 1;
        }
    }
    count
}

/// count / word_count * 1000; None when word_count is 0.
pub fn per_1000(count: usize, word_count: usize) -> Option<f64> {
    if word_count == 0 {
        None
    } else {
        Some(count as f64 / word_count as f64 * 1000.0)
    }
}

/// fwd / (fwd + react); None when both are 0.
pub fn forward_ratio(fwd: usize, react: usize) -> Option<f64> {
    if fwd + react == 0 {
        None
    } else {
        Some(fwd as f64 / (fwd + react) as f64)
    }
}

/// paranoia / (paranoia + coop); None when both are 0.
pub fn paranoia_ratio(paranoia: usize, coop: usize) -> Option<f64> {
    forward_ratio(paranoia, coop)
}

/// True iff the text matches the defection sublexicon at least once.
pub fn mentions_defection(text: &str, lex: &Lexicon) -> bool {
    count_matches(text, lex) >= 1
}

/// Lexical counts and ratios for one reasoning trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStats {
    /// Raw whitespace-token count of the untransformed trace.
    pub word_count: usize,
    pub fwd: usize,
    pub react: usize,
    pub paranoia: usize,
    pub coop: usize,
    pub fwd_ratio: Option<f64>,
    pub paranoia_ratio: Option<f64>,
    pub mentions_defection: bool,
}

pub fn analyze_trace(text: &str, lexicons: &LexiconSet) -> TraceStats {
    let fwd = count_matches(text, &lexicons.forward);
    let react = count_matches(text, &lexicons.reactive);
    let paranoia = count_matches(text, &lexicons.paranoia);
    let coop = count_matches(text, &lexicons.cooperation);
    TraceStats {
        word_count: text.split_whitespace().count(),
        fwd,
        react,
        paranoia,
        coop,
        fwd_ratio: forward_ratio(fwd, react),
        paranoia_ratio: paranoia_ratio(paranoia, coop),
        mentions_defection: mentions_defection(text, &lexicons.defection),
    }
}

/// Run-level aggregate: ratios are computed from summed counts, not
/// from the mean of per-trace ratios.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunLexStats {
    pub n_traces: usize,
    pub word_count: usize,
    pub fwd: usize,
    pub react: usize,
    pub paranoia: usize,
    pub coop: usize,
    pub fwd_ratio: Option<f64>,
    pub paranoia_ratio: Option<f64>,
    pub paranoia_per_1000: Option<f64>,
    pub coop_per_1000: Option<f64>,
    pub defect_mention_rate: f64,
}

pub fn aggregate_traces(stats: &[TraceStats]) -> Result<RunLexStats> {
    if stats.is_empty() {
        return Err(Error::NoTraces);
    }
    let sum = |f: fn(&TraceStats) -> usize| stats.iter().map(f).sum::<usize>();
    let word_count = sum(|s| s.word_count);
    let fwd = sum(|s| s.fwd);
    let react = sum(|s| s.react);
    let paranoia = sum(|s| s.paranoia);
    let coop = sum(|s| s.coop);
    let mentions = stats.iter().filter(|s| s.mentions_defection).count();
    Ok(RunLexStats {
        n_traces: stats.len(),
        word_count,
        fwd,
        react,
        paranoia,
        coop,
        fwd_ratio: forward_ratio(fwd, react),
        paranoia_ratio: paranoia_ratio(paranoia, coop),
        paranoia_per_1000: per_1000(paranoia, word_count),
        coop_per_1000: per_1000(coop, word_count),
        defect_mention_rate: mentions as f64 / stats.len() as f64,
    })
}

/// Per-trace stats plus the run aggregate for a reasoning-mode log.
pub fn analyze_run(log: &RunLog, lexicons: &LexiconSet) -> Result<(Vec<TraceStats>, RunLexStats)> {
    let mut stats = Vec::new();
    for record in &log.records {
        if let Some(traces) = &record.traces {
            for trace in traces.iter().flatten() {
                stats.push(analyze_trace(trace, lexicons));
            }
        }
    }
    let agg = aggregate_traces(&stats)?;
    Ok((stats, agg))
}
