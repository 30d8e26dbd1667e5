//! Acceptance gate. Each criterion runs independently and prints one line:
//! `PASS <id> <title>` or `FAIL <id> <title>: <reason>`. The target fails if
//! any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use vpsim::gateway::{AuditRecord, MockPolicy};
use vpsim::manager::ManagerError;
use vpsim_core::adjustment::{DirectionTable, MAX_SCORE};
use vpsim_core::evaluation::{format_assessment, parse_assessment, score_turn};
use vpsim_core::generation::parse_tripartite;
use vpsim_core::safety::{parse_verdict, CriterionJudgement, OnExhaustion, SafetyVerdict};
use vpsim_core::session::{SurveyResponse, TrailOutcome, TurnError};
use vpsim_core::stats::{
    chi_square_2x2, fleiss_kappa, mann_whitney_u, PMethod, RatingsMatrix,
};
use vpsim_core::{
    AggregatedAssessment, AssessmentFlags, Condition, EvaluatorRole, SafetyLoopPolicy, SessionEvent,
    SessionState, Strategy, StrategySet, TripartiteResponse, UtteranceAssessment,
};

use common::*;

type Outcome = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// The scoring rubric written out row by row, independent of the library.
fn oracle_points(
    calm: bool,
    clear: bool,
    level: u8,
    prohibited: [bool; 3],
    strategies_ever: usize,
) -> (i32, i32) {
    let mut raw = 0;
    if calm && clear {
        raw += 1; // tone: calm and clear
    }
    if level >= 3 {
        raw += 1; // empathy: ECCS level 3 or above
    }
    if prohibited[0] || prohibited[1] || prohibited[2] {
        raw -= 1; // any prohibited behaviour
    }
    raw += strategies_ever as i32; // one point per distinct strategy so far
    (raw, raw.max(0))
}

fn flags_from(bits: u32, level: u8, strategies: StrategySet) -> AssessmentFlags {
    AssessmentFlags {
        calm: bits & 1 != 0,
        clear: bits & 2 != 0,
        premature_empathy: bits & 4 != 0,
        invalidating_beliefs: bits & 8 != 0,
        dismissive_commands: bits & 16 != 0,
        empathy_level: level,
        autonomy_used: strategies.contains(Strategy::Autonomy),
        limit_setting_used: strategies.contains(Strategy::LimitSetting),
        problem_solving_used: strategies.contains(Strategy::ProblemSolvingReframing),
    }
}

fn scoring_oracle() -> Outcome {
    let started = Instant::now();
    let mut cases = 0;
    for bits in 0..32u32 {
        for level in 0..=6u8 {
            for used in StrategySet::all_subsets() {
                for prior in StrategySet::all_subsets() {
                    let f = flags_from(bits, level, used);
                    let (score, after) = score_turn(&f, prior);
                    let ever = used.iter().chain(prior.iter()).collect::<BTreeSet<_>>().len();
                    let (raw, clamped) = oracle_points(
                        f.calm,
                        f.clear,
                        level,
                        [f.premature_empathy, f.invalidating_beliefs, f.dismissive_commands],
                        ever,
                    );
                    ensure!(
                        score.raw_total as i32 == raw && score.clamped_total as i32 == clamped,
                        "mismatch for {f:?} prior {prior:?}: got {score:?}, oracle raw {raw} clamped {clamped}"
                    );
                    ensure!(after.len() == ever, "sticky set wrong for {f:?} prior {prior:?}");
                    if prior == StrategySet::EMPTY {
                        cases += 1;
                    }
                }
            }
        }
    }
    ensure!(cases == 32 * 7 * 8, "enumerated {cases} base cases");
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(())
}

fn score_bounds() -> Outcome {
    let best = AssessmentFlags {
        calm: true,
        clear: true,
        empathy_level: 6,
        autonomy_used: true,
        limit_setting_used: true,
        problem_solving_used: true,
        ..Default::default()
    };
    let (max, _) = score_turn(&best, StrategySet::EMPTY);
    let max_column = max.tone_points as i32 + max.empathy_points as i32 + max.prohibited_points as i32
        + max.deescalation_points as i32;
    ensure!(
        (max.tone_points, max.empathy_points, max.prohibited_points, max.deescalation_points) == (1, 1, 0, 3),
        "max components {max:?}"
    );
    ensure!(max_column == 5 && max.clamped_total == MAX_SCORE, "max column sums to {max_column}");

    let worst = AssessmentFlags { premature_empathy: true, invalidating_beliefs: true, dismissive_commands: true, ..Default::default() };
    let (min, _) = score_turn(&worst, StrategySet::EMPTY);
    ensure!(min.raw_total == -1 && min.clamped_total == 0, "min {min:?}");
    ensure!(min.prohibited_points == -1, "prohibited is -1 per utterance, got {}", min.prohibited_points);

    let (mut lo, mut hi) = (i8::MAX, 0u8);
    for bits in 0..32 {
        for level in 0..=6 {
            for used in StrategySet::all_subsets() {
                for prior in StrategySet::all_subsets() {
                    let (s, _) = score_turn(&flags_from(bits, level, used), prior);
                    ensure!(s.clamped_total <= 5, "clamped_total {} out of range", s.clamped_total);
                    lo = lo.min(s.raw_total);
                    hi = hi.max(s.clamped_total);
                }
            }
        }
    }
    ensure!(lo == -1 && hi == 5, "observed raw min {lo}, clamped max {hi}");
    Ok(())
}

// ---------------------------------------------------------------------------
// Directions
// ---------------------------------------------------------------------------

fn direction_fidelity() -> Outcome {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/src/templates/directions.json");
    let raw: Value = serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let rows = raw.as_array().or_else(|| raw.get("rows").and_then(Value::as_array)).ok_or("no rows array")?;
    ensure!(rows.len() == 6, "{} rows in data file", rows.len());
    let table = DirectionTable::default();
    let mut last_rank = None;
    for s in 0..=5i64 {
        let row = rows.iter().find(|r| r["score"].as_i64() == Some(s)).ok_or(format!("no row {s}"))?;
        let d = table.direct(s).map_err(|e| e.to_string())?;
        for (field, got) in [
            ("communication_style", &d.communication_style),
            ("complaint_intensity", &d.complaint_intensity),
            ("responsiveness", &d.responsiveness),
        ] {
            ensure!(row[field].as_str() == Some(got.as_str()), "score {s} {field}: {got:?} vs file {}", row[field]);
        }
        ensure!(d.score as i64 == s && d.intensity_rank as i64 == s, "score/rank for {s}: {d:?}");
        if let Some(prev) = last_rank {
            ensure!(d.intensity_rank > prev, "rank not strictly increasing at {s}");
        }
        last_rank = Some(d.intensity_rank);
    }
    for bad in [-1, 6, 100, i64::MIN] {
        ensure!(table.direct(bad).is_err(), "direct({bad}) accepted");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

fn random_flags(rng: &mut ChaCha8Rng) -> AssessmentFlags {
    AssessmentFlags {
        calm: rng.random(),
        clear: rng.random(),
        empathy_level: rng.random_range(0..=6),
        autonomy_used: rng.random(),
        limit_setting_used: rng.random(),
        problem_solving_used: rng.random(),
        premature_empathy: rng.random(),
        invalidating_beliefs: rng.random(),
        dismissive_commands: rng.random(),
    }
}

fn bools(f: &AssessmentFlags) -> [bool; 8] {
    [
        f.calm,
        f.clear,
        f.autonomy_used,
        f.limit_setting_used,
        f.problem_solving_used,
        f.premature_empathy,
        f.invalidating_beliefs,
        f.dismissive_commands,
    ]
}

fn unanimity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    for i in 0..1000 {
        let triple: Vec<AssessmentFlags> = (0..3).map(|_| random_flags(&mut rng)).collect();
        let per_role = EvaluatorRole::ALL.iter().zip(&triple).map(|(r, f)| UtteranceAssessment::from_flags(*r, *f)).collect();
        let agg = AggregatedAssessment::aggregate(per_role);
        let got = bools(&agg.flags);
        for k in 0..8 {
            let want = triple.iter().all(|f| bools(f)[k]);
            ensure!(got[k] == want, "triple {i} item {k}: {} vs conjunction {want}", got[k]);
        }
        let min = triple.iter().map(|f| f.empathy_level).min().unwrap();
        ensure!(agg.flags.empathy_level == min, "triple {i} empathy {} vs min {min}", agg.flags.empathy_level);
        ensure!(agg.unanimity_applied == triple.iter().any(|f| *f != triple[0]), "triple {i} unanimity_applied");

        let same = EvaluatorRole::ALL.iter().map(|r| UtteranceAssessment::from_flags(*r, triple[0])).collect();
        let idem = AggregatedAssessment::aggregate(same);
        ensure!(idem.flags == triple[0] && !idem.unanimity_applied, "not idempotent on {:?}", triple[0]);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Parsers
// ---------------------------------------------------------------------------

/// Byte spans of every `<name>...</name>` element, with the tag name.
fn elements(text: &str) -> Vec<(String, usize, usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(off) = text[i..].find('<') {
        let start = i + off;
        let Some(end_rel) = text[start..].find('>') else { break };
        let name = &text[start + 1..start + end_rel];
        if !name.starts_with('/') && !name.is_empty() {
            let close = format!("</{name}>");
            if let Some(c) = text[start..].find(&close) {
                out.push((name.to_string(), start, start + end_rel + 1, start + c + close.len()));
            }
        }
        i = start + 1;
    }
    out
}

/// Deletes each element in turn (whole element, then the opening tag alone)
/// and expects an error that names it.
fn check_mutants<E: std::fmt::Display>(fixture: &str, parse: impl Fn(&str) -> Result<(), E>) -> Outcome {
    let els = elements(fixture);
    ensure!(!els.is_empty(), "fixture has no tags");
    for (name, start, open_end, end) in els {
        let needle = format!("<{name}>");
        for mutant in [
            format!("{}{}", &fixture[..start], &fixture[end..]),
            format!("{}{}", &fixture[..start], &fixture[open_end..]),
        ] {
            match parse(&mutant) {
                Ok(()) => return Err(format!("mutant without <{name}> at byte {start} parsed")),
                Err(e) => {
                    let msg = e.to_string();
                    let first_line: String = msg.chars().take(msg.find("): ").map(|p| p + 1).unwrap_or(msg.len())).collect();
                    ensure!(first_line.contains(&needle), "error for missing {needle} does not name it: {first_line}");
                }
            }
        }
    }
    Ok(())
}

const SOUP_TAGS: [&str; 24] = [
    "inner_monologue", "conversation", "non_verbal", "analysis", "tone", "calm", "clear", "explanation",
    "empathy", "level", "de_escalation", "autonomy", "used", "limit_setting", "problem_solving_and_reframing",
    "prohibited_behaviors", "premature_empathy", "invalidating_beliefs", "dismissive_commands", "evaluation",
    "judge", "no_self_harm", "no_threats", "x",
];
const SOUP_WORDS: [&str; 14] = [
    "Yes", "No", "True", "False", "3", "-1", "99", " ", "\n", "[", "]", "환자", "<", ">",
];

fn tag_soup(rng: &mut ChaCha8Rng) -> String {
    let mut s = String::new();
    for _ in 0..rng.random_range(0..40) {
        match rng.random_range(0..4) {
            0 => s.push_str(&format!("<{}>", SOUP_TAGS[rng.random_range(0..SOUP_TAGS.len())])),
            1 => s.push_str(&format!("</{}>", SOUP_TAGS[rng.random_range(0..SOUP_TAGS.len())])),
            2 => s.push_str(SOUP_WORDS[rng.random_range(0..SOUP_WORDS.len())]),
            _ => s.push(char::from_u32(rng.random_range(0x20..0xD7FF)).unwrap_or('?')),
        }
    }
    s
}

fn parser_suite() -> Outcome {
    let tri = TripartiteResponse {
        inner_monologue: "Nobody listens to me here.".into(),
        verbal: "I asked for my medicine an hour ago!".into(),
        non_verbal: "glares at the nurse".into(),
    };
    ensure!(parse_tripartite(&tri.to_tagged_text()).as_ref() == Ok(&tri), "tripartite round trip");
    check_mutants(&tri.to_tagged_text(), |t| parse_tripartite(t).map(|_| ())).map_err(|e| format!("tripartite: {e}"))?;

    let assessment = UtteranceAssessment {
        role: EvaluatorRole::ClinicalPsychologist,
        flags: AssessmentFlags { calm: true, clear: false, empathy_level: 4, limit_setting_used: true, dismissive_commands: true, ..Default::default() },
        tone_explanation: "Calm but vague.".into(),
        empathy_explanation: "Acknowledges the wait.".into(),
        autonomy_explanation: "No options offered.".into(),
        limit_setting_explanation: "States the dose limit.".into(),
        problem_solving_explanation: "None.".into(),
        prohibited_explanation: "Tells the patient to calm down.".into(),
    };
    let text = format_assessment(&assessment);
    let back = parse_assessment(&text, EvaluatorRole::ClinicalPsychologist).map_err(|e| e.to_string())?;
    ensure!(back == assessment, "evaluation round trip: {back:?}");
    check_mutants(&text, |t| parse_assessment(t, EvaluatorRole::ClinicalPsychologist).map(|_| ()))
        .map_err(|e| format!("evaluation: {e}"))?;

    let verdict = SafetyVerdict::new([
        CriterionJudgement::pass("Stays in role."),
        CriterionJudgement::fail("Threatens to call the head nurse."),
        CriterionJudgement::pass("Consistent with the profile."),
        CriterionJudgement::pass("Follows the direction."),
    ]);
    let text = verdict.to_tagged_text();
    ensure!(parse_verdict(&text).as_ref() == Ok(&verdict), "verdict round trip");
    check_mutants(&text, |t| parse_verdict(t).map(|_| ())).map_err(|e| format!("verdict: {e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    for i in 0..10_000 {
        let soup = tag_soup(&mut rng);
        let r = catch_unwind(AssertUnwindSafe(|| {
            let _ = parse_tripartite(&soup);
            let _ = parse_assessment(&soup, EvaluatorRole::NursingProfessor);
            let _ = parse_verdict(&soup);
        }));
        ensure!(r.is_ok(), "fuzz case {i} panicked on {soup:?}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Safety loop
// ---------------------------------------------------------------------------

fn safety_attempts(events: &[SessionEvent]) -> Vec<vpsim_core::safety::SafetyAttempt> {
    events
        .iter()
        .filter_map(|e| match e {
            SessionEvent::SafetyAttempt { attempt, .. } => Some(attempt.clone()),
            _ => None,
        })
        .collect()
}

fn safety_loop() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;

    // (a) accepted first time.
    let audit = dir.path().join("a.audit.jsonl");
    let policy = MockPolicy::new().on_tag("generate", &[&vp_reply(1, "calm")]).on_tag("safety", &[&pass()]);
    let m = manager_with(&dir.path().join("a"), audited_gateway(policy, &audit), SafetyLoopPolicy::interactive(), 20);
    let id = m.create("0", Condition::Static).map_err(|e| e.to_string())?.session_id;
    let out = m.post_message(&id, "Hello, I'm your nurse today.").map_err(|e| e.to_string())?;
    ensure!(out.vp.safety_attempts == Some(1) && !out.vp.fallback, "(a) attempts {:?}", out.vp.safety_attempts);
    let events = m.store().read_events(&id).map_err(|e| e.to_string())?;
    let trail = safety_attempts(&events);
    ensure!(trail.len() == 1 && trail[0].warning.is_none() && trail[0].verdict.accepted, "(a) trail {trail:?}");
    let gen_prompts: Vec<AuditRecord> = AuditRecord::read_log(&audit)
        .map_err(|e| e.to_string())?
        .into_iter()
        .filter(|r| r.tag == "generate")
        .collect();
    ensure!(gen_prompts.len() == 1 && !gen_prompts[0].user_prompt.contains("Inappropriate Example"), "(a) prompt had a warning");

    // (b) rejected then accepted: the rejected words come back verbatim.
    let audit = dir.path().join("b.audit.jsonl");
    let first = vp_reply(1, "angry");
    let rejected_words = parse_tripartite(&first).unwrap().verbal;
    let policy = MockPolicy::new()
        .on_tag("generate", &[&first, &vp_reply(2, "calmer")])
        .on_tag("safety", &[&reject(), &pass()]);
    let m = manager_with(&dir.path().join("b"), audited_gateway(policy, &audit), SafetyLoopPolicy::interactive(), 20);
    let id = m.create("0", Condition::Static).map_err(|e| e.to_string())?.session_id;
    let out = m.post_message(&id, "Please wait a moment.").map_err(|e| e.to_string())?;
    ensure!(out.vp.safety_attempts == Some(2), "(b) attempts {:?}", out.vp.safety_attempts);
    ensure!(out.vp.text.contains("Reply number 2"), "(b) delivered {:?}", out.vp.text);
    let log = AuditRecord::read_log(&audit).map_err(|e| e.to_string())?;
    let gens: Vec<&AuditRecord> = log.iter().filter(|r| r.tag == "generate").collect();
    ensure!(gens.len() == 2, "(b) {} generation calls", gens.len());
    ensure!(!gens[0].user_prompt.contains(&rejected_words), "(b) first prompt already had the text");
    ensure!(gens[1].user_prompt.matches(&rejected_words).count() == 1, "(b) rejected text not injected verbatim");
    ensure!(gens[1].user_prompt.contains("Criterion 1 violated: the patient threatens the nurse."), "(b) reason not injected");
    let trail = safety_attempts(&m.store().read_events(&id).map_err(|e| e.to_string())?);
    ensure!(trail.len() == 2, "(b) trail length {}", trail.len());
    ensure!(trail[0].warning.is_none(), "(b) first attempt carried a warning");
    let w = trail[1].warning.as_ref().ok_or("(b) second attempt has no warning")?;
    ensure!(w.inappropriate_response == rejected_words, "(b) warning text {:?}", w.inappropriate_response);

    // (c) exhaustion under both policies.
    for (name, on_exhaustion) in [("fallback", OnExhaustion::DeliverSanitizedFallback), ("fail", OnExhaustion::FailTurn)] {
        let replies: Vec<String> = (1..=4).map(|n| vp_reply(n, "furious")).collect();
        let refs: Vec<&str> = replies.iter().map(String::as_str).collect();
        let policy = MockPolicy::new().on_tag("generate", &refs).on_tag("safety", &[&reject()]);
        let audit = dir.path().join(format!("c-{name}.audit.jsonl"));
        let loop_policy = SafetyLoopPolicy { max_revisions: 3, on_exhaustion };
        let m = manager_with(&dir.path().join(format!("c-{name}")), audited_gateway(policy, &audit), loop_policy, 20);
        let id = m.create("0", Condition::Static).map_err(|e| e.to_string())?.session_id;
        let result = m.post_message(&id, "Calm down.");
        let events = m.store().read_events(&id).map_err(|e| e.to_string())?;
        let trail = safety_attempts(&events);
        ensure!(trail.len() == 4, "(c {name}) persisted {} attempts", trail.len());
        ensure!(trail.iter().all(|a| !a.verdict.accepted), "(c {name}) an attempt was accepted");
        ensure!(trail.iter().skip(1).all(|a| a.warning.is_some()), "(c {name}) revision without warning");
        let state = m.state(&id).map_err(|e| e.to_string())?;
        ensure!(state.safety_trails.len() == 1 && state.safety_trails[0].attempts.len() == 4, "(c {name}) state trail");
        match on_exhaustion {
            OnExhaustion::DeliverSanitizedFallback => {
                let out = result.map_err(|e| format!("(c fallback) {e}"))?;
                ensure!(out.vp.fallback && out.vp.safety_attempts == Some(4), "(c fallback) {:?}", out.vp);
                ensure!(out.vp.inner_monologue.is_none(), "(c fallback) fallback has a monologue");
                ensure!(state.safety_trails[0].outcome == TrailOutcome::Fallback, "(c fallback) outcome");
            }
            OnExhaustion::FailTurn => {
                ensure!(
                    matches!(result, Err(ManagerError::Turn(TurnError::Safety(_)))),
                    "(c fail) result {result:?}"
                );
                ensure!(state.nurse_turns() == 0 && state.failed_turns.len() == 1, "(c fail) turn committed");
                ensure!(events.iter().any(|e| e.kind() == "turn_failed"), "(c fail) no turn_failed record");
                ensure!(state.safety_trails[0].outcome == TrailOutcome::Failed, "(c fail) outcome");
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Static / Dynamic
// ---------------------------------------------------------------------------

fn static_dynamic() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut ranks_by_condition = Vec::new();
    for condition in [Condition::Dynamic, Condition::Static] {
        let audit = dir.path().join(format!("{}.audit.jsonl", condition.as_str()));
        let logs = dir.path().join(condition.as_str());
        let gw = audited_gateway(improving_policy("thinking"), &audit);
        let m = manager_with(&logs, gw, SafetyLoopPolicy::interactive(), 20);
        let id = m.create("2", condition).map_err(|e| e.to_string())?.session_id;
        for line in IMPROVING_NURSE {
            m.post_message(&id, line).map_err(|e| format!("{condition:?}: {e}"))?;
        }
        // Everything below comes from the files on disk.
        let state = vpsim::store::SessionStore::open(&logs).unwrap().load(&id).map_err(|e| e.to_string())?;
        let eval_calls = AuditRecord::read_log(&audit)
            .map_err(|e| e.to_string())?
            .iter()
            .filter(|r| r.tag.starts_with("eval."))
            .count();
        ensure!(state.direction_history.len() == 5, "{condition:?}: {} turns", state.direction_history.len());
        ranks_by_condition.push((condition, state.direction_history.clone(), state.score_history.clone(), eval_calls));
    }
    let (_, dyn_dirs, dyn_scores, dyn_evals) = &ranks_by_condition[0];
    let ranks: Vec<u8> = dyn_dirs.iter().map(|d| d.as_ref().map(|d| d.intensity_rank).unwrap_or(u8::MAX)).collect();
    ensure!(ranks.windows(2).all(|w| w[0] < w[1]), "dynamic ranks not rising: {ranks:?}");
    ensure!(ranks == [0, 1, 2, 3, 4], "dynamic ranks {ranks:?}");
    ensure!(dyn_scores.iter().map(|s| s.clamped_total).collect::<Vec<_>>() == [0, 1, 2, 3, 4], "dynamic scores");
    ensure!(*dyn_evals == 15, "dynamic made {dyn_evals} evaluator calls");
    let (_, st_dirs, st_scores, st_evals) = &ranks_by_condition[1];
    ensure!(*st_evals == 0, "static made {st_evals} evaluator calls");
    ensure!(st_dirs.iter().all(Option::is_none) && st_scores.is_empty(), "static session has directions or scores");
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(())
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn brute_u(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 }))
        .sum()
}

/// Two-sided exact p by enumerating every split of the pooled sample.
fn brute_exact_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (n, n1) = (pooled.len(), a.len());
    let observed = brute_u(a, b);
    let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let (x, y): (Vec<(usize, f64)>, Vec<(usize, f64)>) =
            pooled.iter().copied().enumerate().partition(|(i, _)| mask & (1 << i) != 0);
        let u = brute_u(&x.iter().map(|p| p.1).collect::<Vec<_>>(), &y.iter().map(|p| p.1).collect::<Vec<_>>());
        total += 1;
        if u <= observed + 1e-9 {
            le += 1;
        }
        if u >= observed - 1e-9 {
            ge += 1;
        }
    }
    (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
}

fn stats_oracles() -> Outcome {
    // Fleiss' kappa: published example (14 raters, 10 items, 5 categories) and hand-worked cases.
    let fleiss_1971 = [
        [0, 0, 0, 0, 14], [0, 2, 6, 4, 2], [0, 0, 3, 5, 6], [0, 3, 9, 2, 0], [2, 2, 8, 1, 1],
        [7, 7, 0, 0, 0], [3, 2, 6, 3, 0], [2, 5, 3, 2, 2], [6, 5, 2, 1, 0], [0, 2, 2, 3, 7],
    ];
    let kappa_cases: Vec<(Vec<Vec<u32>>, f64)> = vec![
        (fleiss_1971.iter().map(|r| r.to_vec()).collect(), 0.20993070442195522),
        // P̄ = 2/3, Pe = 1/2.
        (vec![vec![3, 0], vec![0, 3], vec![2, 1], vec![1, 2]], 1.0 / 3.0),
        // P̄ = 7/9, Pe = 5/9.
        (vec![vec![3, 0], vec![3, 0], vec![2, 1], vec![3, 0], vec![0, 3], vec![1, 2]], 0.5),
    ];
    for (counts, want) in kappa_cases {
        let cats = (0..counts[0].len()).map(|i| format!("c{i}")).collect();
        let k = fleiss_kappa(&RatingsMatrix::new(cats, counts).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure!(close(k, want, 1e-9), "kappa {k} vs {want}");
    }

    // Mann-Whitney exact route against full enumeration.
    let exact_fixtures: [(&[f64], &[f64]); 4] = [
        (&[1.2, 3.4, 0.5, 7.7, 2.2], &[4.1, 5.5, 6.0, 0.9, 8.8, 9.1]),
        (&[1.0, 2.0, 2.0, 3.0, 5.0], &[2.0, 3.0, 3.0, 4.0, 4.0, 6.0, 1.0]),
        (&[0.0, 0.0, 1.0], &[0.0, 1.0, 1.0, 1.0]),
        (&[4.0, 4.0, 4.0, 4.0, 5.0, 2.0], &[1.0, 1.0, 2.0, 3.0, 4.0, 4.0, 0.0, 6.0]),
    ];
    for (a, b) in exact_fixtures {
        let r = mann_whitney_u(a, b).map_err(|e| e.to_string())?;
        let u = brute_u(a, b);
        ensure!(r.method == PMethod::Exact, "small fixture used {:?}", r.method);
        ensure!(close(r.u_a, u, 1e-9) && close(r.u_b, brute_u(b, a), 1e-9), "U {} vs brute {u}", r.u_a);
        let p = brute_exact_p(a, b);
        ensure!(close(r.p, p, 1e-6), "exact p {} vs enumeration {p} for {a:?} / {b:?}", r.p);
    }
    // Reference p for the first fixture (no ties) from a standard statistics package.
    let r = mann_whitney_u(exact_fixtures[0].0, exact_fixtures[0].1).unwrap();
    ensure!(close(r.p, 0.17748917748917747, 1e-6), "exact p {}", r.p);

    // Normal approximation with tie and continuity correction, frozen references.
    let a: Vec<f64> = (0..25).map(|i| ((i * 7) % 11) as f64).collect();
    let b: Vec<f64> = (0..20).map(|i| ((i * 5 + 3) % 13) as f64).collect();
    let a2: Vec<f64> = (0..30).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
    let b2: Vec<f64> = (0..21).map(|i| ((i * 53) % 97) as f64 / 10.0 + 1.3).collect();
    for (a, b, u_ref, p_ref) in [(&a, &b, 217.0, 0.45614776115681765), (&a2, &b2, 257.5, 0.2752313511987856)] {
        let r = mann_whitney_u(a, b).map_err(|e| e.to_string())?;
        ensure!(r.method == PMethod::Normal, "large fixture used {:?}", r.method);
        ensure!(close(r.u_a, u_ref, 1e-9) && close(r.u_a, brute_u(a, b), 1e-9), "U {} vs {u_ref}", r.u_a);
        ensure!(close(r.p, p_ref, 1e-6), "asymptotic p {} vs {p_ref}", r.p);
    }

    // Chi-square 2x2 (no continuity correction), hand formula and frozen references.
    for (t, chi_ref, p_ref) in [
        ([[10, 20], [30, 40]], 0.7936507936507936, 0.37299848361348686),
        ([[12, 5], [3, 17]], 11.779652406417114, 0.0005988166476580566),
        ([[1, 9], [8, 2]], 9.8989898989899, 0.0016536951637003395),
        ([[100, 80], [90, 110]], 4.222222222222222, 0.039897875201403254),
    ] {
        let c = chi_square_2x2(t).map_err(|e| e.to_string())?;
        let [[a, b], [cc, d]] = t.map(|r| r.map(|v| v as f64));
        let n = a + b + cc + d;
        let hand = n * (a * d - b * cc).powi(2) / ((a + b) * (cc + d) * (a + cc) * (b + d));
        ensure!(close(c.chi2, hand, 1e-9) && close(c.chi2, chi_ref, 1e-9), "chi2 {} vs {chi_ref}", c.chi2);
        ensure!(close(c.p, p_ref, 1e-6) && c.df == 1, "chi-square p {} vs {p_ref}", c.p);
    }
    ensure!(chi_square_2x2([[0, 0], [3, 4]]).is_err(), "degenerate table accepted");

    // U_a + U_b = n1 n2 on random pairs.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    for i in 0..1000 {
        let n1 = rng.random_range(1..=40);
        let n2 = rng.random_range(1..=40);
        let draw = |rng: &mut ChaCha8Rng, n| (0..n).map(|_| rng.random_range(0..8) as f64).collect::<Vec<f64>>();
        let (a, b) = (draw(&mut rng, n1), draw(&mut rng, n2));
        let r = mann_whitney_u(&a, &b).map_err(|e| e.to_string())?;
        ensure!(close(r.u_a + r.u_b, (n1 * n2) as f64, 1e-9), "pair {i}: {} + {} != {}", r.u_a, r.u_b, n1 * n2);
        ensure!((0.0..=1.0).contains(&r.p), "pair {i}: p = {}", r.p);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

fn replay_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let logs = dir.path().join("logs");
    let mut policy = improving_policy("replay");
    // A failing turn followed by a recovered one: evaluator outage then normal.
    policy = MockPolicy { entries: policy.entries, default: None };
    let m = manager_with(&logs, audited_gateway(policy, &dir.path().join("audit.jsonl")), SafetyLoopPolicy::interactive(), 4);

    let dynamic = m.create("0", Condition::Dynamic).map_err(|e| e.to_string())?.session_id;
    let stat = m.create("4", Condition::Static).map_err(|e| e.to_string())?.session_id;
    let capped = m.create("6", Condition::Dynamic).map_err(|e| e.to_string())?.session_id;
    for line in &IMPROVING_NURSE[..2] {
        m.post_message(&dynamic, line).map_err(|e| e.to_string())?;
        m.post_message(&stat, line).map_err(|e| e.to_string())?;
    }
    ensure!(m.post_message(&stat, "   ").is_err(), "blank message accepted");
    m.close(&stat).map_err(|e| e.to_string())?;
    m.survey(&stat, SurveyResponse { items: vec![4, 5, 3, 4, 5, 4], comment: Some("Realistic.".into()) })
        .map_err(|e| e.to_string())?;
    for line in IMPROVING_NURSE.iter().cycle().take(4) {
        m.post_message(&capped, line).map_err(|e| e.to_string())?;
    }
    ensure!(!m.state(&capped).unwrap().is_open(), "turn cap did not close the session");

    // A torn final write must not change the replayed state.
    let torn = m.store().log_path(&dynamic);
    let mut text = std::fs::read_to_string(&torn).unwrap();
    text.push_str("{\"type\":\"turn_committed\",\"turn_in");
    std::fs::write(&torn, text).unwrap();

    let store = vpsim::store::SessionStore::open(&logs).unwrap();
    let ids = store.ids().map_err(|e| e.to_string())?;
    ensure!(ids.len() == 3, "{} logs on disk", ids.len());
    for id in ids {
        let live = m.state(&id).map_err(|e| e.to_string())?;
        let first = store.load(&id).map_err(|e| e.to_string())?;
        let second = SessionState::replay(&store.read_events(&id).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure!(first == live, "{id}: replayed state differs from the live state");
        ensure!(first == second, "{id}: two replays differ");
        let json_round: SessionState = serde_json::from_str(&serde_json::to_string(&first).unwrap()).unwrap();
        ensure!(json_round == first, "{id}: state does not survive serialization");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Monologue confinement
// ---------------------------------------------------------------------------

fn confinement() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let gw = audited_gateway(improving_policy(SENTINEL), &dir.path().join("audit.jsonl"));
    let addr = spawn_server(manager_with(&dir.path().join("logs"), gw, SafetyLoopPolicy::interactive(), 20));
    let c = Client::new(addr);
    let mut trainee_bodies = Vec::new();

    let created = c.post("/sessions", Some(TRAINEE_TOKEN), json!({"case_id": "0", "condition": "dynamic"}));
    ensure!(created.status == 201, "create: {} {}", created.status, created.body);
    let id = created.json()["session_id"].as_str().ok_or("no session_id")?.to_string();
    trainee_bodies.push(created.body);
    for line in &IMPROVING_NURSE[..3] {
        let r = c.post(&format!("/sessions/{id}/messages"), Some(TRAINEE_TOKEN), json!({"text": line}));
        ensure!(r.status == 200, "message: {} {}", r.status, r.body);
        let v = r.json();
        ensure!(v["vp_turn"]["verbal"].is_string() && v["vp_turn"]["non_verbal"].is_string(), "trainee shape {v}");
        ensure!(v.get("inner_monologue").is_none() && v.get("score").is_none(), "trainee got instructor fields");
        trainee_bodies.push(r.body);
    }
    for path in [format!("/sessions/{id}"), format!("/sessions/{id}?view=trainee"), "/cases".into(), "/cases/0".into()] {
        let r = c.get(&path, Some(TRAINEE_TOKEN));
        ensure!(r.status == 200, "{path}: {}", r.status);
        trainee_bodies.push(r.body);
    }
    let forbidden = c.get(&format!("/sessions/{id}?view=instructor"), Some(TRAINEE_TOKEN));
    ensure!(forbidden.status == 403, "trainee got instructor view: {}", forbidden.status);
    ensure!(!forbidden.body.contains(SENTINEL), "403 body leaked the monologue");

    let logs = vpsim::store::SessionStore::open(dir.path().join("logs")).unwrap();
    let state = logs.load(&id).map_err(|e| e.to_string())?;
    let export = state.export(vpsim_core::View::Trainee);
    trainee_bodies.push(export.to_text());
    trainee_bodies.push(serde_json::to_string(&export).unwrap());

    for (i, body) in trainee_bodies.iter().enumerate() {
        ensure!(body.matches(SENTINEL).count() == 0, "trainee payload {i} contains the sentinel: {body}");
    }

    // The fixture really does carry the sentinel where instructors may see it.
    let instructor = c.get(&format!("/sessions/{id}?view=instructor"), Some(INSTRUCTOR_TOKEN));
    ensure!(instructor.status == 200 && instructor.body.contains(SENTINEL), "instructor view lacks the sentinel");
    ensure!(state.export(vpsim_core::View::Instructor).to_text().contains(SENTINEL), "instructor export lacks the sentinel");
    Ok(())
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 10] = [
        ("A1", "scoring oracle equivalence over the full enumeration", scoring_oracle),
        ("A2", "score bounds and rubric extremes", score_bounds),
        ("A3", "direction table fidelity", direction_fidelity),
        ("A4", "unanimity aggregation on 1,000 random triples", unanimity),
        ("A5", "parser round trips, tag-deletion mutants and tag-soup fuzzing", parser_suite),
        ("A6", "safety loop contract with persisted trail", safety_loop),
        ("A7", "static/dynamic contrast from session logs", static_dynamic),
        ("A8", "statistics oracles", stats_oracles),
        ("A9", "replay determinism of persisted logs", replay_determinism),
        ("A10", "inner-monologue confinement in trainee payloads and exports", confinement),
    ];
    // Panics are reported as failures of their criterion, not as aborts.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, title, check) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let ms = started.elapsed().as_millis();
        match outcome {
            Ok(()) => println!("PASS {id:<4} {title} ({ms} ms)"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {id:<4} {title} ({ms} ms): {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
