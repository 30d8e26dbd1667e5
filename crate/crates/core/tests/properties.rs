//! Property tests over the public API.

use proptest::prelude::*;
use vpsim_core::evaluation::{format_assessment, parse_assessment, score_turn};
use vpsim_core::generation::parse_tripartite;
use vpsim_core::safety::{parse_verdict, CriterionJudgement, SafetyVerdict};
use vpsim_core::stats::{chi_square_2x2, fleiss_kappa, mann_whitney_u, turn_curves, GroupedScores, RatingsMatrix, SessionScores};
use vpsim_core::{
    AggregatedAssessment, AssessmentFlags, DirectionTable, EvaluatorRole, StrategySet, TripartiteResponse,
    UtteranceAssessment,
};

fn flags() -> impl Strategy<Value = AssessmentFlags> {
    (any::<[bool; 8]>(), 0u8..=6).prop_map(|(b, level)| AssessmentFlags {
        calm: b[0],
        clear: b[1],
        empathy_level: level,
        autonomy_used: b[2],
        limit_setting_used: b[3],
        problem_solving_used: b[4],
        premature_empathy: b[5],
        invalidating_beliefs: b[6],
        dismissive_commands: b[7],
    })
}

fn prose() -> impl Strategy<Value = String> {
    "[A-Za-z0-9.,!?']([A-Za-z0-9 .,!?']{0,40}[A-Za-z0-9.,!?'])?"
}

fn role() -> impl Strategy<Value = EvaluatorRole> {
    prop::sample::select(EvaluatorRole::ALL.to_vec())
}

proptest! {
    #[test]
    fn score_stays_in_range_and_strategies_stick(turns in prop::collection::vec(flags(), 1..12)) {
        let mut ever = StrategySet::EMPTY;
        for f in &turns {
            let (s, next) = score_turn(f, ever);
            prop_assert!(s.clamped_total <= 5);
            prop_assert!(s.raw_total >= -1);
            prop_assert_eq!(s.clamped_total as i8, s.raw_total.max(0));
            prop_assert!(ever.is_subset(next));
            prop_assert_eq!(next, ever.union(f.strategies()));
            prop_assert_eq!(s.deescalation_points as usize, next.len());
            ever = next;
        }
    }

    #[test]
    fn every_score_has_a_direction(score in 0i64..=5) {
        let table = DirectionTable::default();
        let d = table.direct(score).unwrap();
        prop_assert_eq!(d.intensity_rank as i64, score);
        prop_assert!(!d.render().is_empty());
    }

    #[test]
    fn out_of_range_scores_rejected(score in prop_oneof![i64::MIN..0, 6..i64::MAX]) {
        prop_assert!(DirectionTable::default().direct(score).is_err());
    }

    #[test]
    fn aggregate_never_more_generous_than_any_rater(a in flags(), b in flags(), c in flags()) {
        let agg = AggregatedAssessment::aggregate(
            EvaluatorRole::ALL.iter().zip([a, b, c]).map(|(r, f)| UtteranceAssessment::from_flags(*r, f)).collect(),
        );
        for f in [a, b, c] {
            let (single, _) = score_turn(&f, StrategySet::EMPTY);
            let (joint, _) = score_turn(&agg.flags, StrategySet::EMPTY);
            // Prohibited flags also need all three to agree, so only the positive items are bounded.
            if !agg.flags.any_prohibited() && !f.any_prohibited() {
                prop_assert!(joint.clamped_total <= single.clamped_total);
            }
            prop_assert!(agg.flags.empathy_level <= f.empathy_level);
        }
    }

    #[test]
    fn tripartite_round_trip(m in prose(), v in prose(), n in prose()) {
        let r = TripartiteResponse { inner_monologue: m, verbal: v, non_verbal: n };
        prop_assert_eq!(parse_tripartite(&r.to_tagged_text()).unwrap(), r);
    }

    #[test]
    fn assessment_round_trip(r in role(), f in flags(), e in prop::collection::vec(prose(), 6)) {
        let a = UtteranceAssessment {
            role: r,
            flags: f,
            tone_explanation: e[0].clone(),
            empathy_explanation: e[1].clone(),
            autonomy_explanation: e[2].clone(),
            limit_setting_explanation: e[3].clone(),
            problem_solving_explanation: e[4].clone(),
            prohibited_explanation: e[5].clone(),
        };
        prop_assert_eq!(parse_assessment(&format_assessment(&a), r).unwrap(), a);
    }

    #[test]
    fn verdict_round_trip(ok in any::<[bool; 4]>(), e in prop::collection::vec(prose(), 4)) {
        let v = SafetyVerdict::new([0, 1, 2, 3].map(|i| {
            if ok[i] { CriterionJudgement::pass(e[i].clone()) } else { CriterionJudgement::fail(e[i].clone()) }
        }));
        let back = parse_verdict(&v.to_tagged_text()).unwrap();
        prop_assert_eq!(back.accepted, ok.iter().all(|x| *x));
        prop_assert_eq!(&back, &v);
        prop_assert_eq!(back.rejection_reason().is_some(), !back.accepted);
    }

    #[test]
    fn parsers_never_panic(s in "\\PC{0,300}") {
        let _ = parse_tripartite(&s);
        let _ = parse_assessment(&s, EvaluatorRole::NursingProfessor);
        let _ = parse_verdict(&s);
    }

    #[test]
    fn mann_whitney_is_symmetric(
        a in prop::collection::vec(0u8..6, 1..30),
        b in prop::collection::vec(0u8..6, 1..30),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ab = mann_whitney_u(&a, &b).unwrap();
        let ba = mann_whitney_u(&b, &a).unwrap();
        prop_assert!((ab.u_a - ba.u_b).abs() < 1e-9);
        prop_assert!((ab.u_a + ab.u_b - (a.len() * b.len()) as f64).abs() < 1e-9);
        prop_assert!((ab.p - ba.p).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab.p));
    }

    #[test]
    fn chi_square_is_transpose_invariant(t in any::<[[u8; 2]; 2]>()) {
        let t = t.map(|r| r.map(u64::from));
        let tt = [[t[0][0], t[1][0]], [t[0][1], t[1][1]]];
        match (chi_square_2x2(t), chi_square_2x2(tt)) {
            (Ok(x), Ok(y)) => {
                prop_assert!(x.chi2 >= 0.0 && (0.0..=1.0).contains(&x.p));
                prop_assert!((x.chi2 - y.chi2).abs() < 1e-9 * (1.0 + x.chi2));
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "transpose changed definedness"),
        }
    }

    #[test]
    fn kappa_at_most_one(rows in prop::collection::vec(0u32..=3, 2..40)) {
        // Three raters, two categories: `k` of them said "yes".
        let counts: Vec<Vec<u32>> = rows.iter().map(|k| vec![*k, 3 - k]).collect();
        let m = RatingsMatrix::new(vec!["yes".into(), "no".into()], counts).unwrap();
        if let Ok(k) = fleiss_kappa(&m) {
            prop_assert!(k <= 1.0 + 1e-12);
            prop_assert!(k >= -1.0);
        }
    }

    #[test]
    fn curve_intervals_contain_the_mean(
        sessions in prop::collection::vec((prop::bool::ANY, prop::collection::vec(0u8..=5, 0..8)), 1..12),
        truncation in 1usize..6,
    ) {
        let g = GroupedScores {
            sessions: sessions
                .iter()
                .map(|(dynamic, s)| SessionScores {
                    group: if *dynamic { "dynamic".into() } else { "static".into() },
                    scores: s.iter().map(|x| f64::from(*x)).collect(),
                })
                .collect(),
            truncation,
        };
        for p in turn_curves(&g).unwrap() {
            prop_assert!(p.turn >= 1 && p.turn <= truncation);
            prop_assert!(p.ci_low <= p.mean && p.mean <= p.ci_high);
            prop_assert!((0.0..=5.0).contains(&p.mean));
            prop_assert_eq!(p.degenerate, p.n == 1);
        }
    }
}
