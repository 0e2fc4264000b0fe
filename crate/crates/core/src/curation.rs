//! Deterministic stages of the forward-looking training-corpus
//! pipeline: pre-filter, judge scoring, threshold and anti-cheat
//! filters, prefix-family capping, family-level splitting, and
//! weighted-example export.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::CompletionBackend;
use crate::error::{Error, Result};
use crate::lexalysis::{count_matches, Lexicon, LexiconSet};

const JUDGE_TEMPLATE: &str = include_str!("../assets/prompts/judge.txt");

/// Characters of response prefix that define a near-duplicate family.
pub const FAMILY_PREFIX_CHARS: usize = 50;
pub const DEFAULT_FAMILY_CAP: usize = 3;
pub const DEFAULT_TRAIN_FRAC: f64 = 0.95;

pub const THRESHOLD_FWD: u8 = 9;
pub const THRESHOLD_QUAL: u8 = 9;
pub const THRESHOLD_SPEC: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scores {
    pub s_fwd: u8,
    pub s_qual: u8,
    pub s_spec: u8,
}

impl Scores {
    pub fn new(s_fwd: u8, s_qual: u8, s_spec: u8) -> Result<Scores> {
        for s in [s_fwd, s_qual, s_spec] {
            if s > 10 {
                return Err(Error::JudgeParseError(format!("score {s} out of range 0-10")));
            }
        }
        Ok(Scores { s_fwd, s_qual, s_spec })
    }

    pub fn weight(&self) -> f64 {
        self.s_fwd as f64 * self.s_spec as f64 / 100.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// One reasoning trace moving through the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationRecord {
    pub id: String,
    pub source_model: String,
    pub hl: u32,
    pub prompt: String,
    pub response: String,
    pub scores: Option<Scores>,
    pub n_fwd: usize,
    pub n_react: usize,
    /// First min(50, len) characters of the response, exact.
    pub family_key: String,
    pub weight: Option<f64>,
    pub split: Option<Split>,
}

impl CurationRecord {
    pub fn new(id: &str, source_model: &str, hl: u32, prompt: &str, response: &str) -> CurationRecord {
        CurationRecord {
            id: id.to_string(),
            source_model: source_model.to_string(),
            hl,
            prompt: prompt.to_string(),
            response: response.to_string(),
            scores: None,
            n_fwd: 0,
            n_react: 0,
            family_key: family_key(response),
            weight: None,
            split: None,
        }
    }
}

pub fn family_key(response: &str) -> String {
    response.chars().take(FAMILY_PREFIX_CHARS).collect()
}

/// Fast keep/drop gate: at least one forward-looking match.
pub fn prefilter(r: &CurationRecord, fwd: &Lexicon) -> bool {
    count_matches(&r.response, fwd) >= 1
}

/// Pulls (s_fwd, s_qual, s_spec) out of a judge reply. Labeled fields
/// win; otherwise a reply consisting of exactly three integers is
/// accepted positionally. Any score outside 0-10 is a parse error.
pub fn parse_scores(reply: &str) -> Result<Scores> {
    if let Some(scores) = parse_labeled(reply) {
        return scores;
    }
    let ints = integer_tokens(reply);
    if let [a, b, c] = ints[..] {
        return Scores::new(clamp_u8(a)?, clamp_u8(b)?, clamp_u8(c)?);
    }
    Err(Error::JudgeParseError(format!(
        "expected labeled scores or exactly three integers, got {} integers",
        ints.len()
    )))
}

fn parse_labeled(reply: &str) -> Option<Result<Scores>> {
    let lower = reply.to_lowercase();
    let field = |name: &str| -> Option<i64> {
        let at = lower.find(name)?;
        integer_tokens(&lower[at + name.len()..]).first().copied()
    };
    let (f, q, s) = (field("s_fwd")?, field("s_qual")?, field("s_spec")?);
    Some((|| Scores::new(clamp_u8(f)?, clamp_u8(q)?, clamp_u8(s)?))())
}

fn clamp_u8(v: i64) -> Result<u8> {
    if (0..=10).contains(&v) {
        Ok(v as u8)
    } else {
        Err(Error::JudgeParseError(format!("score {v} out of range 0-10")))
    }
}

fn integer_tokens(text: &str) -> Vec<i64> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_ascii_digit() {
            current.push(c);
        } else {
            if let Ok(v) = current.parse() {
                out.push(v);
            }
            current.clear();
        }
    }
    if let Ok(v) = current.parse() {
        out.push(v);
    }
    out
}

pub fn judge_prompt(r: &CurationRecord) -> String {
    JUDGE_TEMPLATE.replace("{trace}", &r.response)
}

/// Scores one record with the judge model at temperature 0. An
/// unparseable reply gets exactly one re-ask before JudgeParseError.
pub fn judge(r: &CurationRecord, client: &dyn CompletionBackend, judge_model: &str) -> Result<Scores> {
    let prompt = judge_prompt(r);
    let mut last = None;
    for _ in 0..2 {
        let reply = client.complete(judge_model, &prompt, 0.0, 512)?;
        match parse_scores(&reply) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap())
}

/// True iff all three App-style thresholds hold.
pub fn threshold_filter(scores: Option<Scores>) -> Result<bool> {
    let s = scores.ok_or(Error::MissingScores)?;
    Ok(s.s_fwd >= THRESHOLD_FWD && s.s_qual >= THRESHOLD_QUAL && s.s_spec >= THRESHOLD_SPEC)
}

/// Recomputes lexical counts and requires n_fwd >= 1 and strictly
/// n_fwd > n_react; guards against judge-pleasing reactive traces.
pub fn anticheat_filter(r: &mut CurationRecord, fwd: &Lexicon, react: &Lexicon) -> bool {
    r.n_fwd = count_matches(&r.response, fwd);
    r.n_react = count_matches(&r.response, react);
    r.n_fwd >= 1 && r.n_fwd > r.n_react
}

fn family_rng(seed: u64, key: &str) -> ChaCha8Rng {
    // FNV-1a over the key keeps per-family sampling independent of the
    // order families appear in the corpus.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Keeps at most `cap` records per 50-character prefix family, chosen
/// by seeded uniform sampling; input order is preserved.
pub fn cap_families(records: Vec<CurationRecord>, cap: usize, seed: u64) -> Vec<CurationRecord> {
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        members.entry(r.family_key.as_str()).or_default().push(i);
    }
    let mut keep = vec![true; records.len()];
    for (key, idx) in &members {
        if idx.len() <= cap {
            continue;
        }
        let mut rng = family_rng(seed, key);
        let chosen = rand::seq::index::sample(&mut rng, idx.len(), cap);
        for (k, i) in idx.iter().enumerate() {
            keep[*i] = chosen.iter().any(|c| c == k);
        }
    }
    records
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect()
}

/// Assigns every record a split such that no family straddles the
/// boundary. Families are shuffled with the seed and accumulated into
/// train until the record-count target is met; both sides end non-empty.
pub fn family_split(records: &mut [CurationRecord], train_frac: f64, seed: u64) -> Result<()> {
    assert!(train_frac > 0.0 && train_frac < 1.0, "train_frac must be in (0,1)");
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records.iter() {
        *counts.entry(r.family_key.as_str()).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::SplitImpossible);
    }
    let mut families: Vec<(String, usize)> = counts
        .into_iter()
        .map(|(k, c)| (k.to_string(), c))
        .collect();
    use rand::seq::SliceRandom;
    families.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let total: usize = families.iter().map(|(_, c)| c).sum();
    let target = (train_frac * total as f64).round() as usize;
    let mut train_families: Vec<String> = Vec::new();
    let mut val_families: Vec<String> = Vec::new();
    let mut train_count = 0usize;
    for (key, c) in families {
        if train_count < target {
            train_count += c;
            train_families.push(key);
        } else {
            val_families.push(key);
        }
    }
    if val_families.is_empty() {
        val_families.push(train_families.pop().unwrap());
    }
    if train_families.is_empty() {
        train_families.push(val_families.pop().unwrap());
    }
    for r in records.iter_mut() {
        r.split = Some(if train_families.contains(&r.family_key) {
            Split::Train
        } else {
            Split::Val
        });
    }
    Ok(())
}

/// Wire object for one exported training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prompt: String,
    pub response: String,
    pub weight: f64,
    pub split: Split,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub source_model: String,
    pub hl: u32,
}

/// Serializes fully-filtered records to JSONL. `prompt_char_budget`
/// left-truncates prompts when set (off by default); responses are
/// always exported raw.
pub fn export_training(records: &[CurationRecord], prompt_char_budget: Option<usize>) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let scores = r.scores.ok_or(Error::MissingScores)?;
        let split = r.split.ok_or(Error::MissingScores)?;
        let prompt = match prompt_char_budget {
            Some(budget) => {
                let chars: Vec<char> = r.prompt.chars().collect();
                let skip = chars.len().saturating_sub(budget);
                chars[skip..].iter().collect()
            }
            None => r.prompt.clone(),
        };
        let example = TrainingExample {
            prompt,
            response: r.response.clone(),
            weight: scores.weight(),
            split,
            meta: TrainingMeta {
                source_model: r.source_model.clone(),
                hl: r.hl,
            },
        };
        out.push_str(&serde_json::to_string(&example)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageRetention {
    pub stage: &'static str,
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutput {
    pub records: Vec<CurationRecord>,
    pub retention: Vec<StageRetention>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub family_cap: usize,
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> PipelineParams {
        PipelineParams {
            family_cap: DEFAULT_FAMILY_CAP,
            train_frac: DEFAULT_TRAIN_FRAC,
            seed: 0,
        }
    }
}

/// Runs the deterministic stages end to end. Records without scores
/// are sent to the judge when one is provided; otherwise they fail with
/// MissingScores at the threshold stage. Per-stage retention counts are
/// returned alongside the surviving records.
pub fn run_pipeline(
    records: Vec<CurationRecord>,
    lexicons: &LexiconSet,
    judge_client: Option<(&dyn CompletionBackend, &str)>,
    params: PipelineParams,
) -> Result<PipelineOutput> {
    let mut retention = Vec::new();
    let mut track = |stage, input: usize, output: usize| {
        retention.push(StageRetention { stage, input, output });
    };

    let n0 = records.len();
    let mut current: Vec<CurationRecord> = records
        .into_iter()
        .filter(|r| prefilter(r, &lexicons.forward))
        .collect();
    track("prefilter", n0, current.len());

    if let Some((client, model)) = judge_client {
        for r in current.iter_mut().filter(|r| r.scores.is_none()) {
            r.scores = Some(judge(r, client, model)?);
        }
    }

    let n = current.len();
    let mut thresholded = Vec::new();
    for r in current {
        if threshold_filter(r.scores)? {
            thresholded.push(r);
        }
    }
    track("threshold", n, thresholded.len());

    let n = thresholded.len();
    let current: Vec<CurationRecord> = thresholded
        .into_iter()
        .filter_map(|mut r| anticheat_filter(&mut r, &lexicons.forward, &lexicons.reactive).then_some(r))
        .collect();
    track("anticheat", n, current.len());

    let n = current.len();
    let mut current = cap_families(current, params.family_cap, params.seed);
    track("family_cap", n, current.len());

    family_split(&mut current, params.train_frac, params.seed)?;
    for r in current.iter_mut() {
        r.weight = r.scores.map(|s| s.weight());
    }
    track("split", current.len(), current.len());

    Ok(PipelineOutput {
        records: current,
        retention,
    })
}

/// CSV rendering of the retention report: stage,input,output.
pub fn retention_csv(retention: &[StageRetention]) -> String {
    let mut out = String::from("stage,input,output\n");
    for s in retention {
        out.push_str(&format!("{},{},{}\n", s.stage, s.input, s.output));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;

    fn lexicons() -> LexiconSet {
        LexiconSet::default()
    }

    fn rec(id: usize, response: &str) -> CurationRecord {
        CurationRecord::new(&format!("r{id}"), "model-a", 80, "prompt", response)
    }

    #[test]
    fn prefilter_examples() {
        let fwd = &lexicons().forward;
        assert!(prefilter(&rec(0, "Thinking about the long-term here."), fwd));
        assert!(!prefilter(&rec(1, "I take the money now."), fwd));
        assert!(!prefilter(&rec(2, ""), fwd));
    }

    #[test]
    fn parse_scores_cases() {
        assert_eq!(parse_scores("9 9 7").unwrap(), Scores::new(9, 9, 7).unwrap());
        assert!(matches!(parse_scores("11 9 7"), Err(Error::JudgeParseError(_))));
        assert_eq!(
            parse_scores("The trace is strong. s_fwd: 10, s_qual: 9, s_spec: 8").unwrap(),
            Scores::new(10, 9, 8).unwrap()
        );
        assert!(matches!(parse_scores("no numbers here"), Err(Error::JudgeParseError(_))));
        assert!(matches!(parse_scores("1 2 3 4"), Err(Error::JudgeParseError(_))));
        assert!(matches!(
            parse_scores("s_fwd: 12, s_qual: 9, s_spec: 8"),
            Err(Error::JudgeParseError(_))
        ));
    }

    #[test]
    fn threshold_examples() {
        let ok = |f, q, s| threshold_filter(Some(Scores::new(f, q, s).unwrap())).unwrap();
        assert!(ok(9, 9, 7));
        assert!(!ok(10, 8, 9));
        assert!(!ok(8, 10, 10));
        assert!(ok(10, 10, 10));
        assert!(!ok(9, 9, 6));
        assert!(matches!(threshold_filter(None), Err(Error::MissingScores)));
    }

    #[test]
    fn anticheat_examples() {
        let lx = lexicons();
        // 2 forward, 1 reactive.
        let mut r = rec(0, "future reciprocity outweighs the risk");
        assert!(anticheat_filter(&mut r, &lx.forward, &lx.reactive));
        assert_eq!((r.n_fwd, r.n_react), (2, 1));
        // 1 and 1: strict inequality fails.
        let mut r = rec(1, "the future carries risk");
        assert!(!anticheat_filter(&mut r, &lx.forward, &lx.reactive));
        // 0 and 0.
        let mut r = rec(2, "hello there");
        assert!(!anticheat_filter(&mut r, &lx.forward, &lx.reactive));
    }

    #[test]
    fn family_key_is_50_chars() {
        let long = "x".repeat(120);
        assert_eq!(family_key(&long).chars().count(), 50);
        assert_eq!(family_key("short"), "short");
        let r = rec(0, &long);
        assert_eq!(r.family_key, "x".repeat(50));
    }

    fn family_corpus() -> Vec<CurationRecord> {
        // Family A: 5 members, family B: 2 members. The shared prefix is
        // padded past 50 characters so suffixes don't leak into the key.
        let pad_a = format!("{} tail", "a".repeat(60));
        let pad_b = "b".repeat(40);
        let mut out = Vec::new();
        for i in 0..5 {
            out.push(rec(i, &format!("{pad_a}{i}")));
        }
        for i in 5..7 {
            out.push(rec(i, &format!("{pad_b} variant {i}")));
        }
        out
    }

    #[test]
    fn cap_families_examples() {
        let capped = cap_families(family_corpus(), 3, 42);
        let a_key = family_key(&"a".repeat(60));
        let count = |rs: &[CurationRecord], k: &str| rs.iter().filter(|r| r.family_key == k).count();
        assert_eq!(count(&capped, &a_key), 3);
        // Family of 2 survives whole.
        assert_eq!(capped.len(), 5);
        // Same seed, same survivors; different seed may differ.
        let again = cap_families(family_corpus(), 3, 42);
        assert_eq!(capped, again);
        for cap in 0..6 {
            let c = cap_families(family_corpus(), cap, 1);
            assert!(count(&c, &a_key) <= cap.max(0));
        }
    }

    #[test]
    fn family_split_no_straddle() {
        let mut records = Vec::new();
        for f in 0..20 {
            let prefix = format!("{:050}", f);
            for m in 0..3 {
                records.push(rec(f * 3 + m, &format!("{prefix} member {m}")));
            }
        }
        family_split(&mut records, 0.95, 7).unwrap();
        let mut sides: BTreeMap<&str, Split> = BTreeMap::new();
        for r in &records {
            let s = r.split.unwrap();
            assert_eq!(*sides.entry(r.family_key.as_str()).or_insert(s), s);
        }
        let train = records.iter().filter(|r| r.split == Some(Split::Train)).count();
        let val = records.len() - train;
        assert!(val >= 1 && train >= 1);
        // Within one 3-record family of the 95/5 target (57/3).
        assert!((train as i64 - 57).unsigned_abs() <= 3, "train={train}");
    }

    #[test]
    fn family_split_single_family_fails() {
        let mut records = vec![rec(0, "same prefix"), rec(1, "same prefix")];
        assert!(matches!(
            family_split(&mut records, 0.95, 0),
            Err(Error::SplitImpossible)
        ));
    }

    #[test]
    fn export_weights() {
        let mk = |f, s| {
            let mut r = rec(0, "resp");
            r.scores = Some(Scores::new(f, 9, s).unwrap());
            r.split = Some(Split::Train);
            r
        };
        let line = |f, s| {
            let jsonl = export_training(&[mk(f, s)], None).unwrap();
            serde_json::from_str::<TrainingExample>(jsonl.trim()).unwrap()
        };
        assert!((line(9, 7).weight - 0.63).abs() < 1e-12);
        assert_eq!(line(10, 10).weight, 1.0);
        assert_eq!(line(9, 0).weight, 0.0);
        assert!(matches!(
            export_training(&[rec(0, "x")], None),
            Err(Error::MissingScores)
        ));
        // Weight in [0,1] and zero iff a factor is zero.
        for f in 0..=10u8 {
            for s in 0..=10u8 {
                let w = Scores::new(f, 9, s).unwrap().weight();
                assert!((0.0..=1.0).contains(&w));
                assert_eq!(w == 0.0, f == 0 || s == 0);
            }
        }
    }

    #[test]
    fn export_field_order_and_truncation() {
        let mut r = rec(0, "resp");
        r.prompt = "abcdefgh".into();
        r.scores = Some(Scores::new(9, 9, 7).unwrap());
        r.split = Some(Split::Val);
        let jsonl = export_training(&[r.clone()], None).unwrap();
        assert_eq!(
            jsonl,
            "{\"prompt\":\"abcdefgh\",\"response\":\"resp\",\"weight\":0.63,\"split\":\"val\",\"meta\":{\"source_model\":\"model-a\",\"hl\":80}}\n"
        );
        let jsonl = export_training(&[r], Some(3)).unwrap();
        let ex: TrainingExample = serde_json::from_str(jsonl.trim()).unwrap();
        assert_eq!(ex.prompt, "fgh");
    }

    struct JudgeStub {
        replies: RefCell<Vec<String>>,
        temps: RefCell<Vec<f64>>,
    }

    impl CompletionBackend for JudgeStub {
        fn complete(&self, _m: &str, _p: &str, t: f64, _mt: u32) -> crate::error::Result<String> {
            self.temps.borrow_mut().push(t);
            Ok(self.replies.borrow_mut().remove(0))
        }
    }

    fn stub(replies: &[&str]) -> JudgeStub {
        JudgeStub {
            replies: RefCell::new(replies.iter().map(|s| s.to_string()).collect()),
            temps: RefCell::new(Vec::new()),
        }
    }

    #[test]
    fn judge_reask_once_then_fails() {
        let r = rec(0, "a future-minded trace");
        let s = stub(&["9 9 7"]);
        assert_eq!(judge(&r, &s, "judge-model").unwrap(), Scores::new(9, 9, 7).unwrap());
        assert_eq!(*s.temps.borrow(), vec![0.0]);

        let s = stub(&["garbage", "s_fwd: 9, s_qual: 10, s_spec: 8"]);
        assert_eq!(judge(&r, &s, "j").unwrap(), Scores::new(9, 10, 8).unwrap());

        let s = stub(&["garbage", "still garbage"]);
        assert!(matches!(judge(&r, &s, "j"), Err(Error::JudgeParseError(_))));
        assert_eq!(s.replies.borrow().len(), 0);
    }

    #[test]
    fn judge_prompt_embeds_trace() {
        let r = rec(0, "UNIQUE-TRACE-TEXT");
        let p = judge_prompt(&r);
        assert!(p.contains("UNIQUE-TRACE-TEXT"));
        assert!(p.contains("s_fwd"));
        assert!(!p.contains("{trace}"));
    }

    #[test]
    fn pipeline_stage_monotonicity() {
        let mut records = Vec::new();
        for i in 0..40 {
            let pad = "x".repeat(60);
            let mut r = rec(
                i,
                &format!("fam{} {pad} future cooperation signals reciprocity {i}", i % 8),
            );
            r.scores = Some(Scores::new(if i % 3 == 0 { 8 } else { 9 }, 9, 7).unwrap());
            records.push(r);
        }
        let out = run_pipeline(records, &lexicons(), None, PipelineParams::default()).unwrap();
        let mut prev = usize::MAX;
        for s in &out.retention {
            assert!(s.output <= s.input);
            assert!(s.input <= prev.max(s.input));
            prev = s.output;
        }
        let csv = retention_csv(&out.retention);
        assert!(csv.starts_with("stage,input,output\nprefilter,40,"));
        for r in &out.records {
            assert!(r.split.is_some());
            assert!(r.weight.is_some());
        }
    }
}
